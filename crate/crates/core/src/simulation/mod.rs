//! Closed-loop simulation: choose a viewpoint, move there, take a range
//! reading, refine the estimate.

mod metrics;
mod sweep;

pub use metrics::{compute_metrics, MetricsReport, MAPE_GUARD};
pub use sweep::{recoverability_sweep, SweepRow};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::belief::{fuse, rotate_covariance, Covariance3};
use crate::constraints::{build_for_experiment, ConstraintParams, ConstraintSet, ExperimentId};
use crate::ekf::{self, CovarianceForm, EkfState, ProcessNoise, RangeMeasurementModel};
use crate::error::{invalid, BveError, Result};
use crate::geometry::{look_at_rotation, Vec3};
use crate::objective::{LossKind, SigmoidParams};
use crate::optimizer::{solve_next_viewpoint, SolverSettings, SolverStatus};

// Independent random streams of one run.
const STREAM_SCENARIO: u64 = 0;
const STREAM_NOISE: u64 = 1;
const STREAM_SOLVER: u64 = 2;
const STREAM_OFFSET: u64 = 3;

/// Loss selection overriding the experiment default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossChoice {
    Dispersion,
    MaxEig,
    Approach,
}

/// Which covariance the viewpoint search treats as the accumulated prior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PriorSource {
    /// Running fusion of the rotated camera covariances of past viewpoints.
    #[default]
    Fused,
    /// The filter's current estimation covariance.
    Filter,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub experiment: ExperimentId,
    pub runs: usize,
    pub iterations: usize,
    pub seed: u64,
    /// Camera-frame observation covariance; its xx entry is the range variance.
    pub sigma_c: Covariance3,
    pub constraints: ConstraintParams,
    pub loss: Option<LossChoice>,
    pub sigmoid: SigmoidParams,
    pub solver: SolverSettings,
    /// Per-step isotropic process noise (m²).
    pub process_noise: f64,
    pub covariance_form: CovarianceForm,
    pub prior_source: PriorSource,
    /// Half-width of the per-axis uniform initial bias (m).
    pub initial_bias: f64,
    /// Half-width of the target sampling cube (m).
    pub target_range: f64,
    /// Half-width of the initial camera sampling cube (m).
    pub camera_range: f64,
    /// When false, every range reading is exact.
    pub measurement_noise: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            experiment: ExperimentId::E1,
            runs: 100,
            iterations: 30,
            seed: 0,
            sigma_c: default_sigma_c(),
            constraints: ConstraintParams::default(),
            loss: None,
            sigmoid: SigmoidParams::default(),
            solver: SolverSettings::default(),
            process_noise: 1e-6,
            covariance_form: CovarianceForm::Simple,
            prior_source: PriorSource::Fused,
            initial_bias: 0.15,
            target_range: 1.0,
            camera_range: 2.0,
            measurement_noise: true,
        }
    }
}

/// Depth-dominant camera noise: 5 cm along the view axis, 1 cm across.
pub fn default_sigma_c() -> Covariance3 {
    Covariance3::from_diagonal(2.5e-3, 1e-4, 1e-4).expect("positive diagonal")
}

impl ScenarioConfig {
    pub fn for_experiment(experiment: ExperimentId) -> Self {
        Self {
            experiment,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(invalid("runs", "must be at least 1"));
        }
        if self.iterations == 0 {
            return Err(invalid("iterations", "must be at least 1"));
        }
        if !(self.process_noise >= 0.0) {
            return Err(invalid("q", "must be non-negative"));
        }
        if !(self.initial_bias > 0.0) {
            return Err(invalid("initial_bias", "must be positive"));
        }
        if !(self.target_range > 0.0 && self.camera_range > 0.0) {
            return Err(invalid("sampling range", "must be positive"));
        }
        SigmoidParams::new(self.sigmoid.a, self.sigmoid.b)?;
        self.constraints.validate()?;
        self.solver.validate()
    }

    pub fn loss_kind(&self) -> LossKind {
        match self.loss {
            None => self.experiment.default_loss(),
            Some(LossChoice::Dispersion) => LossKind::Dispersion,
            Some(LossChoice::MaxEig) => LossKind::MaxEigenvalue,
            Some(LossChoice::Approach) => LossKind::DispersionWithApproach(self.sigmoid),
        }
    }

    /// Prior covariance matching the uniform initial bias.
    pub fn initial_covariance(&self) -> Result<Covariance3> {
        Covariance3::isotropic(self.initial_bias * self.initial_bias / 3.0)
    }

    pub fn range_model(&self) -> Result<RangeMeasurementModel> {
        RangeMeasurementModel::new(self.sigma_c.matrix()[(0, 0)])
    }
}

/// True target, initial camera and initial estimate of one run.
pub fn sample_scenario<R: Rng>(rng: &mut R, config: &ScenarioConfig) -> (Vec3, Vec3, Vec3) {
    let mut cube = |half: f64| Vec3::from_fn(|_, _| rng.random_range(-half..=half));
    let k = cube(config.target_range);
    let c0 = cube(config.camera_range);
    let x_hat0 = k + cube(config.initial_bias);
    (k, c0, x_hat0)
}

/// How the initial estimate is formed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitialEstimate {
    /// Per-axis uniform bias.
    UniformBias,
    /// Fixed-length offset along a random direction.
    Offset(f64),
    /// Start exactly at the truth.
    Exact,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRow {
    pub i: usize,
    /// Pose at which this iteration's reading was taken.
    pub camera: Vec3,
    pub loss: f64,
    pub x_hat: Vec3,
    pub p_diag: Vec3,
    pub p_det: f64,
    pub error_m: f64,
    pub status: SolverStatus,
    pub error: Option<BveError>,
    pub wall_skipped: bool,
}

impl RunRow {
    pub fn status_label(&self) -> &'static str {
        if self.error.is_some() {
            "error"
        } else {
            self.status.as_str()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub experiment: ExperimentId,
    pub run: usize,
    pub seed: u64,
    pub true_k: Vec3,
    pub c0: Vec3,
    pub x_hat0: Vec3,
    pub rows: Vec<RunRow>,
}

impl RunRecord {
    pub fn final_estimate(&self) -> Vec3 {
        self.rows.last().map_or(self.x_hat0, |r| r.x_hat)
    }

    pub fn final_error(&self) -> f64 {
        (self.final_estimate() - self.true_k).norm()
    }

    pub fn initial_error(&self) -> f64 {
        (self.x_hat0 - self.true_k).norm()
    }

    pub fn final_camera(&self) -> Vec3 {
        self.rows.last().map_or(self.c0, |r| r.camera)
    }

    fn count(&self, status: SolverStatus) -> usize {
        self.rows.iter().filter(|r| r.status == status).count()
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn random_unit<R: Rng>(rng: &mut R) -> Vec3 {
    loop {
        let d = Vec3::new(
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        );
        if d.norm() > 1e-9 {
            return d.normalize();
        }
    }
}

pub fn run_single(config: &ScenarioConfig, seed: u64) -> Result<RunRecord> {
    run_single_with(config, seed, 0, InitialEstimate::UniformBias)
}

/// One closed-loop run.
///
/// Each iteration asks the solver for the next pose, moves there unless the
/// solver found nothing usable, takes a range reading, and corrects the
/// filter. Per-iteration failures are recorded and never abort the run.
pub fn run_single_with(
    config: &ScenarioConfig,
    seed: u64,
    run: usize,
    initial: InitialEstimate,
) -> Result<RunRecord> {
    config.validate()?;
    let loss = config.loss_kind();
    let (_, template) = build_for_experiment(config.experiment, &config.constraints)?;
    let model = config.range_model()?;
    let q = ProcessNoise::isotropic(config.process_noise)?;
    let p0 = config.initial_covariance()?;

    let (k, c0, biased) = sample_scenario(&mut stream(seed, STREAM_SCENARIO), config);
    let x_hat0 = match initial {
        InitialEstimate::UniformBias => biased,
        InitialEstimate::Offset(e) => k + random_unit(&mut stream(seed, STREAM_OFFSET)) * e,
        InitialEstimate::Exact => k,
    };
    let mut noise_rng = stream(seed, STREAM_NOISE);
    let mut solver_rng = stream(seed, STREAM_SOLVER);

    let mut state = EkfState::new(x_hat0, &p0);
    let mut prior = p0;
    let mut camera = c0;
    let mut rows = Vec::with_capacity(config.iterations);

    for i in 0..config.iterations {
        let k_hat = state.x_hat;
        let set: ConstraintSet = template.at(camera, k_hat);
        let belief = match config.prior_source {
            PriorSource::Fused => Ok(prior),
            PriorSource::Filter => state.covariance(),
        };
        let solver_seed: u64 = solver_rng.random();
        let noise: f64 = noise_rng.sample(StandardNormal);
        let noise = if config.measurement_noise { noise } else { 0.0 };

        let iteration = u32::try_from(i).unwrap_or(u32::MAX);
        let solved = belief.and_then(|b| {
            solve_next_viewpoint(
                loss,
                &set,
                &camera,
                &k_hat,
                &b,
                &config.sigma_c,
                iteration,
                &config.solver,
                solver_seed,
            )
        });
        let (status, mut error, loss_value) = match &solved {
            Ok(out) => {
                if out.status != SolverStatus::Infeasible {
                    camera = out.c_next;
                }
                (out.status, None, out.loss_value)
            }
            Err(e) => (SolverStatus::Infeasible, Some(e.clone()), f64::NAN),
        };

        match ekf::step_with(
            &state,
            &k,
            &camera,
            &q,
            &model,
            noise,
            config.covariance_form,
        ) {
            Ok(next) => state = next,
            Err(e) => error = error.or(Some(e)),
        }
        if config.prior_source == PriorSource::Fused {
            if let Ok(r) = look_at_rotation(&k_hat, &camera) {
                match fuse(&prior, &rotate_covariance(&r, &config.sigma_c)) {
                    Ok(p) => prior = p,
                    Err(e) => error = error.or(Some(e)),
                }
            }
        }

        rows.push(RunRow {
            i,
            camera,
            loss: loss_value,
            x_hat: state.x_hat,
            p_diag: state.p.diagonal(),
            p_det: state.p.determinant(),
            error_m: (state.x_hat - k).norm(),
            status,
            error,
            wall_skipped: set.wall_skipped(),
        });
    }

    Ok(RunRecord {
        experiment: config.experiment,
        run,
        seed,
        true_k: k,
        c0,
        x_hat0,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub records: Vec<RunRecord>,
    pub report: MetricsReport,
}

/// Metrics over a batch of finished runs; runs without a finite final
/// estimate are excluded and counted as failed.
pub fn summarize(records: &[RunRecord], label: Option<String>) -> Result<MetricsReport> {
    let ok: Vec<&RunRecord> = records
        .iter()
        .filter(|r| r.final_estimate().iter().all(|v| v.is_finite()))
        .collect();
    let truths: Vec<Vec3> = ok.iter().map(|r| r.true_k).collect();
    let estimates: Vec<Vec3> = ok.iter().map(|r| r.final_estimate()).collect();
    let mut report = compute_metrics(&truths, &estimates)?;
    report.experiment = label;
    report.runs = records.len();
    report.failed_runs = records.len() - ok.len();
    report.mean_initial_eucl_mm =
        Some(1e3 * ok.iter().map(|r| r.initial_error()).sum::<f64>() / ok.len() as f64);
    report.restoring_iterations = records
        .iter()
        .map(|r| r.count(SolverStatus::Restoring))
        .sum();
    report.infeasible_iterations = records
        .iter()
        .map(|r| r.count(SolverStatus::Infeasible))
        .sum();
    Ok(report)
}

/// `runs` seeded runs (seed `base + i`) and their metrics.
pub fn run_experiment(config: &ScenarioConfig) -> Result<ExperimentResult> {
    config.validate()?;
    let records = (0..config.runs)
        .map(|i| {
            let seed = config.seed.wrapping_add(i as u64);
            run_single_with(config, seed, i, InitialEstimate::UniformBias)
        })
        .collect::<Result<Vec<_>>>()?;
    let report = summarize(&records, Some(config.experiment.to_string()))?;
    Ok(ExperimentResult { records, report })
}
