use std::path::PathBuf;
use std::process::ExitCode;

use bve::simulation::{recoverability_sweep, run_experiment, LossChoice};
use bve::{ExperimentId, MetricsReport, RunRecord, ScenarioConfig, SolverStatus};
use bve_cli::config::{env_overrides, parse_assignment};
use bve_cli::output::{self, fmt_sig};
use bve_cli::{CliError, ConfigError, Settings, EXIT_INFEASIBLE};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "bve",
    version,
    about = "Best-viewpoint estimation with a range-only EKF"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write runs.csv and metrics.json.
    Run {
        #[arg(long)]
        experiment: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Run E1 to E10 and print the combined metrics table.
    Battery {
        #[command(flatten)]
        common: Common,
    },
    /// Final error as a function of the initial estimation error.
    Sweep {
        /// Defaults to E5.
        #[arg(long)]
        experiment: Option<String>,
        #[arg(long, default_value_t = 0.5)]
        max_error: f64,
        #[arg(long, default_value_t = 0.01)]
        step: f64,
        #[arg(long, default_value_t = 10)]
        sims: usize,
        #[command(flatten)]
        common: Common,
    },
    /// One seeded run with a per-iteration trace.
    Demo {
        #[arg(long)]
        experiment: Option<String>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    /// TOML config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    runs: Option<String>,
    #[arg(long)]
    iterations: Option<String>,
    /// Horizontal field of view (rad).
    #[arg(long)]
    hfov: Option<String>,
    /// default, dispersion, max-eig or approach.
    #[arg(long)]
    loss: Option<String>,
    /// Any config key, e.g. `--set r_d=0.3`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Write the resolved config to <out>/config.toml.
    #[arg(long)]
    save_config: bool,
}

impl Common {
    fn flags(&self, experiment: Option<&String>) -> Result<Vec<(String, String)>, ConfigError> {
        let named = [
            ("experiment", experiment),
            ("seed", self.seed.as_ref()),
            ("runs", self.runs.as_ref()),
            ("iterations", self.iterations.as_ref()),
            ("hfov", self.hfov.as_ref()),
            ("loss", self.loss.as_ref()),
        ];
        let mut out: Vec<(String, String)> = named
            .into_iter()
            .filter_map(|(k, v)| v.map(|v| (k.to_owned(), v.clone())))
            .collect();
        for s in &self.set {
            out.push(parse_assignment(s)?);
        }
        Ok(out)
    }

    fn resolve(
        &self,
        base: Settings,
        experiment: Option<&String>,
    ) -> Result<(Settings, ScenarioConfig), CliError> {
        let env = env_overrides(std::env::vars());
        let settings = base.load(self.config.as_deref(), &env, &self.flags(experiment)?)?;
        let config = settings.to_scenario()?;
        if self.save_config {
            output::write_text(&self.out, "config.toml", &settings.to_toml())?;
        }
        Ok((settings, config))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match execute(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn status_code(infeasible: usize) -> u8 {
    if infeasible > 0 {
        eprintln!("warning: {infeasible} infeasible iterations");
        EXIT_INFEASIBLE
    } else {
        0
    }
}

fn report_paths(paths: &[PathBuf]) {
    for p in paths {
        eprintln!("wrote {}", p.display());
    }
}

fn execute(command: Command) -> Result<u8, CliError> {
    match command {
        Command::Run { experiment, common } => {
            let (_, config) = common.resolve(Settings::default(), experiment.as_ref())?;
            let result = run_experiment(&config)?;
            report_paths(&output::emit_results(
                &result.records,
                std::slice::from_ref(&result.report),
                &common.out,
            )?);
            print_report(&result.report);
            Ok(status_code(result.report.infeasible_iterations))
        }
        Command::Battery { common } => {
            let (_, base) = common.resolve(Settings::default(), None)?;
            let mut records: Vec<RunRecord> = Vec::new();
            let mut reports: Vec<MetricsReport> = Vec::new();
            for id in ExperimentId::ALL {
                let config = ScenarioConfig {
                    experiment: id,
                    ..base.clone()
                };
                let result = run_experiment(&config)?;
                eprintln!("{id}: mean error {:.1} mm", result.report.mean_eucl_mm);
                records.extend(result.records);
                reports.push(result.report);
            }
            report_paths(&output::emit_results(&records, &reports, &common.out)?);
            print!("{}", output::battery_table(&reports));
            Ok(status_code(
                reports.iter().map(|r| r.infeasible_iterations).sum(),
            ))
        }
        Command::Sweep {
            experiment,
            max_error,
            step,
            sims,
            common,
        } => {
            let base = Settings::from_scenario(&ScenarioConfig {
                experiment: ExperimentId::E5,
                loss: Some(LossChoice::Approach),
                ..ScenarioConfig::default()
            });
            let (_, config) = common.resolve(base, experiment.as_ref())?;
            let rows =
                recoverability_sweep(&config, max_error, step, sims).map_err(|e| match e {
                    bve::BveError::InvalidParameter { name, reason } => {
                        CliError::Config(ConfigError::invalid(name, reason))
                    }
                    other => other.into(),
                })?;
            report_paths(&[output::emit_sweep(&rows, &common.out)?]);
            println!(
                "{:>8} {:>10} {:>10} {:>10}",
                "e0(m)", "MAE(mm)", "RMSE(mm)", "Eucl(mm)"
            );
            for r in &rows {
                println!(
                    "{:>8.2} {:>10.1} {:>10.1} {:>10.1}",
                    r.initial_error_m, r.mae_mm, r.rmse_mm, r.mean_eucl_mm
                );
            }
            Ok(status_code(
                rows.iter().map(|r| r.infeasible_iterations).sum(),
            ))
        }
        Command::Demo { experiment, common } => {
            let (_, mut config) = common.resolve(Settings::default(), experiment.as_ref())?;
            config.runs = 1;
            let result = run_experiment(&config)?;
            let record = &result.records[0];
            print_trace(record);
            report_paths(&output::emit_results(
                &result.records,
                std::slice::from_ref(&result.report),
                &common.out,
            )?);
            Ok(status_code(result.report.infeasible_iterations))
        }
    }
}

fn print_report(r: &MetricsReport) {
    println!(
        "{}: runs {} (failed {}), MAE {:.2} mm, RMSE {:.2} mm, MSE {:.2} mm2, mean error {:.2} mm",
        r.experiment.as_deref().unwrap_or("?"),
        r.runs,
        r.failed_runs,
        r.mae_mm,
        r.rmse_mm,
        r.mse_mm2,
        r.mean_eucl_mm
    );
}

fn vec3(v: &bve::Vec3) -> String {
    format!("({:7.3} {:7.3} {:7.3})", v.x, v.y, v.z)
}

fn print_trace(rec: &RunRecord) {
    println!("{} seed {}", rec.experiment, rec.seed);
    println!("target   {}", vec3(&rec.true_k));
    println!("camera0  {}", vec3(&rec.c0));
    println!(
        "x_hat0   {}  error {:.1} mm",
        vec3(&rec.x_hat0),
        rec.initial_error() * 1e3
    );
    for row in &rec.rows {
        let range = (row.camera - row.x_hat).norm();
        println!(
            "{:3} c {} x_hat {} |c-x_hat| {:6.3} loss {:>12} err {:7.1} mm {}{}",
            row.i,
            vec3(&row.camera),
            vec3(&row.x_hat),
            range,
            fmt_sig(row.loss),
            row.error_m * 1e3,
            row.status_label(),
            match (&row.error, row.status) {
                (Some(e), _) => format!(" ({e})"),
                (None, SolverStatus::Infeasible) => " (pose kept)".to_owned(),
                _ => String::new(),
            }
        );
    }
    println!("final error {:.1} mm", rec.final_error() * 1e3);
}
