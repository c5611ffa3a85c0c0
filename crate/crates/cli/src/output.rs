//! Result files: `runs.csv`, `metrics.json` and `sweep.csv`.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use bve::simulation::SweepRow;
use bve::{MetricsReport, RunRecord, Vec3};
use serde::Serialize;

use crate::error::CliError;

pub const RUNS_FILE: &str = "runs.csv";
pub const METRICS_FILE: &str = "metrics.json";
pub const SWEEP_FILE: &str = "sweep.csv";

pub const RUNS_HEADER: &str = "experiment,run,seed,iter,cx,cy,cz,kx,ky,kz,xhatx,xhaty,xhatz,pxx,pyy,pzz,loss,eucl_err_m,status";
pub const SWEEP_HEADER: &str =
    "level,initial_error_m,sims,mae_mm,mse_mm2,rmse_mm,mean_eucl_mm,mape_pct,infeasible_iterations";

/// Nine significant digits, fixed notation for moderate exponents, trailing
/// zeros removed.
pub fn fmt_sig(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf" } else { "-inf" }.into();
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent marker");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        trim_zeros(format!("{x:.decimals$}"))
    } else {
        format!("{}e{exp}", trim_zeros(mantissa.to_owned()))
    }
}

fn trim_zeros(s: String) -> String {
    if !s.contains('.') {
        return s;
    }
    s.trim_end_matches('0').trim_end_matches('.').to_owned()
}

fn push_vec(line: &mut String, v: &Vec3) {
    for x in v.iter() {
        line.push(',');
        line.push_str(&fmt_sig(*x));
    }
}

pub fn write_runs_csv<W: Write>(w: &mut W, records: &[RunRecord]) -> io::Result<()> {
    writeln!(w, "{RUNS_HEADER}")?;
    let mut line = String::with_capacity(256);
    for rec in records {
        for row in &rec.rows {
            line.clear();
            let _ = write!(
                line,
                "{},{},{},{}",
                rec.experiment, rec.run, rec.seed, row.i
            );
            push_vec(&mut line, &row.camera);
            push_vec(&mut line, &rec.true_k);
            push_vec(&mut line, &row.x_hat);
            push_vec(&mut line, &row.p_diag);
            let _ = write!(
                line,
                ",{},{},{}",
                fmt_sig(row.loss),
                fmt_sig(row.error_m),
                row.status_label()
            );
            writeln!(w, "{line}")?;
        }
    }
    Ok(())
}

pub fn write_sweep_csv<W: Write>(w: &mut W, rows: &[SweepRow]) -> io::Result<()> {
    writeln!(w, "{SWEEP_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            r.level,
            fmt_sig(r.initial_error_m),
            r.sims,
            fmt_sig(r.mae_mm),
            fmt_sig(r.mse_mm2),
            fmt_sig(r.rmse_mm),
            fmt_sig(r.mean_eucl_mm),
            r.mape_pct.map_or_else(String::new, fmt_sig),
            r.infeasible_iterations
        )?;
    }
    Ok(())
}

fn create(dir: &Path, name: &str) -> Result<(PathBuf, BufWriter<File>), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let path = dir.join(name);
    let file = File::create(&path).map_err(|e| CliError::io(&path, e))?;
    Ok((path, BufWriter::new(file)))
}

fn write_file(
    dir: &Path,
    name: &str,
    body: impl FnOnce(&mut BufWriter<File>) -> io::Result<()>,
) -> Result<PathBuf, CliError> {
    let (path, mut w) = create(dir, name)?;
    body(&mut w)
        .and_then(|()| w.flush())
        .map_err(|e| CliError::io(&path, e))?;
    Ok(path)
}

pub fn write_json<T: Serialize + ?Sized>(
    dir: &Path,
    name: &str,
    value: &T,
) -> Result<PathBuf, CliError> {
    write_file(dir, name, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w)
    })
}

/// Writes `runs.csv` and `metrics.json`. `reports` is written as a single
/// object when it holds one report and as an array otherwise.
pub fn emit_results(
    records: &[RunRecord],
    reports: &[MetricsReport],
    out_dir: &Path,
) -> Result<Vec<PathBuf>, CliError> {
    let runs = write_file(out_dir, RUNS_FILE, |w| write_runs_csv(w, records))?;
    let metrics = match reports {
        [one] => write_json(out_dir, METRICS_FILE, one)?,
        many => write_json(out_dir, METRICS_FILE, many)?,
    };
    Ok(vec![runs, metrics])
}

pub fn emit_sweep(rows: &[SweepRow], out_dir: &Path) -> Result<PathBuf, CliError> {
    write_file(out_dir, SWEEP_FILE, |w| write_sweep_csv(w, rows))
}

pub fn write_text(dir: &Path, name: &str, text: &str) -> Result<PathBuf, CliError> {
    write_file(dir, name, |w| w.write_all(text.as_bytes()))
}

/// Metrics table with one row per experiment and a rule between the
/// dispersion and max-eigenvalue groups.
pub fn battery_table(reports: &[MetricsReport]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<5} {:>9} {:>9} {:>9} {:>10} {:>10} {:>6}",
        "", "MAPE(%)", "MAE(mm)", "RMSE(mm)", "MSE(mm2)", "Eucl(mm)", "infeas"
    );
    let rule = "-".repeat(64);
    let _ = writeln!(s, "{rule}");
    for (n, r) in reports.iter().enumerate() {
        if n == 5 {
            let _ = writeln!(s, "{rule}");
        }
        let mape = r
            .mape_pct
            .map_or_else(|| "-".to_owned(), |m| format!("{m:.2}"));
        let _ = writeln!(
            s,
            "{:<5} {:>9} {:>9.1} {:>9.1} {:>10.2} {:>10.1} {:>6}",
            r.experiment.as_deref().unwrap_or("?"),
            mape,
            r.mae_mm,
            r.rmse_mm,
            r.mse_mm2,
            r.mean_eucl_mm,
            r.infeasible_iterations
        );
    }
    s
}
