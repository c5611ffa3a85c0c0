//! Next-viewpoint solver.
//!
//! A log-barrier interior-point method over the camera position, with BFGS
//! steps on central-difference gradients and a compass-search fallback where
//! the loss is not smooth. Every iterate stays strictly inside the feasible
//! set, so a returned point never violates an active restriction.
//!
//! When no strictly feasible point exists within reach, the solver minimizes
//! the squared restriction violation inside the step ball instead and reports
//! [`SolverStatus::Restoring`].

use std::cmp::Ordering;

use arrayvec::ArrayVec;
use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::belief::Covariance3;
use crate::constraints::{ConstraintSet, FEASIBILITY_TOL, MAX_CONSTRAINTS};
use crate::error::{invalid, Result};
use crate::geometry::Vec3;
use crate::objective::{LossKind, Objective};

/// Random candidates drawn per multistart branch when seeding.
const POOL_PER_START: usize = 64;
/// Barrier weights, relative to the loss spread over the seeding pool.
const MU_START: f64 = 1e-1;
const MU_END: f64 = 1e-9;
const MU_FACTOR: f64 = 0.1;
/// Interior margin targeted by the restoration phase.
const RESTORE_MARGIN: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    /// Inner iterations allowed per barrier stage.
    pub max_iterations: usize,
    pub constraint_tolerance: f64,
    /// Smallest step (m) that still counts as progress.
    pub step_tolerance: f64,
    /// Relative change in the barrier objective that ends a stage.
    pub loss_tolerance: f64,
    pub multistart_count: usize,
    /// Central-difference step (m).
    pub fd_step: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            constraint_tolerance: FEASIBILITY_TOL,
            step_tolerance: 1e-9,
            loss_tolerance: 1e-8,
            multistart_count: 5,
            fd_step: 1e-6,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(invalid("max_iterations", "must be positive"));
        }
        if self.multistart_count == 0 {
            return Err(invalid("multistart_count", "must be at least 1"));
        }
        for (name, v) in [
            ("constraint_tolerance", self.constraint_tolerance),
            ("step_tolerance", self.step_tolerance),
            ("loss_tolerance", self.loss_tolerance),
            ("fd_step", self.fd_step),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(invalid(name, "must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SolverStatus {
    Converged,
    MaxIterations,
    /// No feasible point within reach; moved to reduce the violation.
    Restoring,
    /// No feasible point and no way to reduce the violation.
    Infeasible,
}

impl SolverStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            SolverStatus::Converged => "converged",
            SolverStatus::MaxIterations => "max-iterations",
            SolverStatus::Restoring => "restoring",
            SolverStatus::Infeasible => "infeasible",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOutcome {
    pub c_next: Vec3,
    /// Loss at `c_next`; NaN when undefined there.
    pub loss_value: f64,
    pub feasible: bool,
    pub iterations_used: usize,
    pub status: SolverStatus,
}

type Values = ArrayVec<f64, MAX_CONSTRAINTS>;

/// Smooth problem handed to the barrier method.
trait Problem {
    fn objective(&self, x: &Vec3) -> Option<f64>;
    fn constraints(&self, x: &Vec3) -> Option<Values>;
}

struct LossProblem<'a> {
    objective: &'a Objective,
    set: &'a ConstraintSet,
    offset: f64,
    scale: f64,
}

impl Problem for LossProblem<'_> {
    fn objective(&self, x: &Vec3) -> Option<f64> {
        self.objective
            .eval(x)
            .ok()
            .map(|f| (f - self.offset) / self.scale)
    }

    fn constraints(&self, x: &Vec3) -> Option<Values> {
        constraint_values(self.set, x)
    }
}

/// Squared violation of every restriction except the step limit, which stays hard.
struct RestorationProblem<'a> {
    set: &'a ConstraintSet,
}

impl RestorationProblem<'_> {
    fn violation(&self, x: &Vec3, margin: f64) -> f64 {
        match self.set.values_without_step(x) {
            Ok(vals) => vals
                .iter()
                .map(|&(_, g)| (g + margin).max(0.0).powi(2))
                .sum(),
            Err(_) => f64::INFINITY,
        }
    }
}

impl Problem for RestorationProblem<'_> {
    fn objective(&self, x: &Vec3) -> Option<f64> {
        let v = self.violation(x, RESTORE_MARGIN);
        v.is_finite().then_some(v)
    }

    fn constraints(&self, x: &Vec3) -> Option<Values> {
        let step = self.set.step?;
        let mut out = Values::new();
        out.push(crate::constraints::g_step(x, &self.set.c_current, &step));
        Some(out)
    }
}

fn constraint_values(set: &ConstraintSet, x: &Vec3) -> Option<Values> {
    set.values(x)
        .ok()
        .map(|vals| vals.iter().map(|&(_, v)| v).collect())
}

fn strictly_feasible(vals: &Values) -> bool {
    vals.iter().all(|&g| g < 0.0)
}

fn lexicographic(a: &Vec3, b: &Vec3) -> Ordering {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Minimum loss first, then lexicographic on coordinates.
fn better(a: &(Vec3, f64), b: &(Vec3, f64)) -> Ordering {
    a.1.total_cmp(&b.1).then_with(|| lexicographic(&a.0, &b.0))
}

struct LocalResult {
    best: Vec3,
    best_f: f64,
    iterations: usize,
    converged: bool,
}

fn barrier_value<P: Problem>(p: &P, x: &Vec3, mu: f64) -> Option<f64> {
    let g = p.constraints(x)?;
    if !strictly_feasible(&g) {
        return None;
    }
    let f = p.objective(x)?;
    let barrier: f64 = g.iter().map(|&gi| (-gi).ln()).sum();
    let v = f - mu * barrier;
    v.is_finite().then_some(v)
}

/// Gradient of the barrier function, assembled from separate central
/// differences of the objective and of each restriction. Probes may land
/// slightly outside the feasible set.
fn barrier_gradient<P: Problem>(p: &P, x: &Vec3, mu: f64, h: f64) -> Option<Vec3> {
    let g0 = p.constraints(x)?;
    let mut grad = Vec3::zeros();
    for j in 0..3 {
        let step = Vec3::ith(j, h);
        let (xp, xm) = (x + step, x - step);
        let df = (p.objective(&xp)? - p.objective(&xm)?) / (2.0 * h);
        let (gp, gm) = (p.constraints(&xp)?, p.constraints(&xm)?);
        let dbarrier: f64 = g0
            .iter()
            .zip(gp.iter().zip(gm.iter()))
            .map(|(&gi, (&a, &b))| -((a - b) / (2.0 * h)) / gi)
            .sum();
        grad[j] = df + mu * dbarrier;
    }
    grad.iter().all(|v| v.is_finite()).then_some(grad)
}

/// Compass search on the barrier function; returns an improving point if any.
fn compass_step<P: Problem>(
    p: &P,
    x: &Vec3,
    fx: f64,
    mu: f64,
    start: f64,
    min_step: f64,
) -> Option<(Vec3, f64)> {
    let mut delta = start;
    while delta >= min_step {
        for j in 0..3 {
            for sign in [1.0, -1.0] {
                let trial = x + Vec3::ith(j, sign * delta);
                if let Some(ft) = barrier_value(p, &trial, mu) {
                    if ft < fx {
                        return Some((trial, ft));
                    }
                }
            }
        }
        delta *= 0.5;
    }
    None
}

fn barrier_minimize<P: Problem>(
    p: &P,
    x0: Vec3,
    settings: &SolverSettings,
    max_move: f64,
) -> Option<LocalResult> {
    let mut x = x0;
    let mut best = x0;
    let mut best_f = p.objective(&x0)?;
    let mut iterations = 0;
    let mut converged = true;
    let h = settings.fd_step;

    let mut mu = MU_START;
    while mu >= MU_END * 0.999 {
        let mut fx = barrier_value(p, &x, mu)?;
        let mut grad = barrier_gradient(p, &x, mu, h)?;
        let mut hinv = Matrix3::<f64>::identity();
        let mut fresh = true;
        let mut stage_done = false;
        for _ in 0..settings.max_iterations {
            iterations += 1;
            let mut dir = -(hinv * grad);
            if dir.dot(&grad) >= 0.0 || !dir.iter().all(|v| v.is_finite()) {
                hinv = Matrix3::identity();
                fresh = true;
                dir = -grad;
            }
            if fresh {
                // first step of a fresh model is a short steepest-descent probe
                let n = dir.norm();
                if n > 0.0 {
                    dir *= (0.1 * max_move).min(n) / n;
                }
            } else {
                let n = dir.norm();
                if n > max_move {
                    dir *= max_move / n;
                }
            }

            let slope = grad.dot(&dir);
            let mut alpha = 1.0;
            let mut accepted = None;
            for _ in 0..50 {
                let trial = x + dir * alpha;
                if let Some(ft) = barrier_value(p, &trial, mu) {
                    if ft <= fx + 1e-4 * alpha * slope {
                        accepted = Some((trial, ft));
                        break;
                    }
                }
                alpha *= 0.5;
            }

            let (next, f_next) = match accepted {
                Some(a) => a,
                None => match compass_step(p, &x, fx, mu, 1e-2 * max_move, settings.step_tolerance)
                {
                    Some(a) => {
                        hinv = Matrix3::identity();
                        fresh = true;
                        let grad_next = barrier_gradient(p, &a.0, mu, h)?;
                        x = a.0;
                        fx = a.1;
                        grad = grad_next;
                        track_best(p, &x, &mut best, &mut best_f);
                        continue;
                    }
                    None => {
                        stage_done = true;
                        break;
                    }
                },
            };

            let grad_next = barrier_gradient(p, &next, mu, h)?;
            let s = next - x;
            let y = grad_next - grad;
            let sy = s.dot(&y);
            if sy > 1e-12 * s.norm() * y.norm() && sy > 0.0 {
                if fresh {
                    hinv = Matrix3::identity() * (sy / y.dot(&y));
                }
                let rho = 1.0 / sy;
                let i_rsy = Matrix3::identity() - s * y.transpose() * rho;
                hinv = i_rsy * hinv * i_rsy.transpose() + s * s.transpose() * rho;
                fresh = false;
            }
            let change = fx - f_next;
            x = next;
            fx = f_next;
            grad = grad_next;
            track_best(p, &x, &mut best, &mut best_f);

            if s.norm() < settings.step_tolerance
                || change.abs() <= settings.loss_tolerance * (1.0 + fx.abs())
            {
                stage_done = true;
                break;
            }
        }
        converged &= stage_done;
        mu *= MU_FACTOR;
    }

    Some(LocalResult {
        best,
        best_f,
        iterations,
        converged,
    })
}

fn track_best<P: Problem>(p: &P, x: &Vec3, best: &mut Vec3, best_f: &mut f64) {
    if let Some(f) = p.objective(x) {
        if f < *best_f || (f == *best_f && lexicographic(x, best).is_lt()) {
            *best = *x;
            *best_f = f;
        }
    }
}

fn sample_in_ball<R: Rng>(rng: &mut R, center: &Vec3, radius: f64) -> Vec3 {
    loop {
        let d = Vec3::new(
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        );
        let n = d.norm();
        if n > 1e-12 {
            let r = radius * rng.random::<f64>().cbrt();
            return center + d * (r / n);
        }
    }
}

/// Region that seeding and the grid oracle explore.
fn search_region(set: &ConstraintSet) -> (Vec3, f64) {
    match (set.step, set.bounding_box()) {
        (Some(step), _) => (set.c_current, step.radius),
        (None, Some((lo, hi))) if (hi - lo).min() >= 0.0 => {
            ((lo + hi) / 2.0, (hi - lo).norm() / 2.0)
        }
        _ => (set.c_current, 1.0),
    }
}

/// Best next camera position for the given belief and restrictions.
#[allow(clippy::too_many_arguments)]
pub fn solve_next_viewpoint(
    loss: LossKind,
    set: &ConstraintSet,
    c_current: &Vec3,
    k_hat: &Vec3,
    belief: &Covariance3,
    sigma_c: &Covariance3,
    i: u32,
    settings: &SolverSettings,
    seed: u64,
) -> Result<SolverOutcome> {
    settings.validate()?;
    if !c_current.iter().all(|v| v.is_finite()) {
        return Err(invalid("c_current", "must be finite"));
    }
    let set = set.at(*c_current, *k_hat);
    let objective = Objective::new(loss, *k_hat, belief, sigma_c, i)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (center, radius) = search_region(&set);

    let pool_size = settings.multistart_count * POOL_PER_START;
    let mut pool = Vec::with_capacity(pool_size + 1);
    pool.push(*c_current);
    pool.extend((0..pool_size).map(|_| sample_in_ball(&mut rng, &center, radius)));

    let mut interior: Vec<(Vec3, f64)> = Vec::new();
    let mut loss_error = None;
    for x in &pool {
        if !constraint_values(&set, x).is_some_and(|g| strictly_feasible(&g)) {
            continue;
        }
        match objective.eval(x) {
            Ok(f) if f.is_finite() => interior.push((*x, f)),
            Ok(_) => {}
            Err(e) => loss_error = Some(e),
        }
    }

    let mut restore_iterations = 0;
    if interior.is_empty() {
        let restoration = RestorationProblem { set: &set };
        let restored = restore(&restoration, &set, &pool, settings);
        restore_iterations = restored.as_ref().map_or(0, |r| r.1);
        match restored {
            Some((x, _)) if constraint_values(&set, &x).is_some_and(|g| strictly_feasible(&g)) => {
                match objective.eval(&x) {
                    Ok(f) if f.is_finite() => interior.push((x, f)),
                    Ok(_) => {}
                    Err(e) => loss_error = Some(e),
                }
            }
            Some((x, iterations)) => {
                let before = restoration.violation(c_current, 0.0);
                let after = restoration.violation(&x, 0.0);
                let progressed = after.is_finite()
                    && before - after > 1e-6 * before
                    && (x - c_current).norm() > settings.step_tolerance;
                let c_next = if progressed { x } else { *c_current };
                return Ok(SolverOutcome {
                    c_next,
                    loss_value: objective.eval(&c_next).unwrap_or(f64::NAN),
                    feasible: set.max_violation(&c_next) <= settings.constraint_tolerance,
                    iterations_used: iterations,
                    status: if progressed {
                        SolverStatus::Restoring
                    } else {
                        SolverStatus::Infeasible
                    },
                });
            }
            None => {}
        }
    }
    if interior.is_empty() {
        if let Some(e) = loss_error {
            return Err(e);
        }
        return Ok(SolverOutcome {
            c_next: *c_current,
            loss_value: objective.eval(c_current).unwrap_or(f64::NAN),
            feasible: set.max_violation(c_current) <= settings.constraint_tolerance,
            iterations_used: restore_iterations,
            status: SolverStatus::Infeasible,
        });
    }

    let lo = interior.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let hi = interior
        .iter()
        .map(|p| p.1)
        .fold(f64::NEG_INFINITY, f64::max);
    let scale = (hi - lo).max(1e-6 * lo.abs()).max(f64::MIN_POSITIVE);

    let mut starts = interior.clone();
    starts.sort_by(better);
    starts.truncate(settings.multistart_count);
    if let Some(cur) = interior.iter().find(|p| p.0 == *c_current) {
        if !starts.iter().any(|p| p.0 == cur.0) {
            starts.push(*cur);
        }
    }

    let problem = LossProblem {
        objective: &objective,
        set: &set,
        offset: lo,
        scale,
    };
    let max_move = 0.5 * radius;
    let mut best = starts[0];
    let mut iterations = restore_iterations;
    let mut converged = false;
    for start in &starts {
        if better(start, &best).is_lt() {
            best = *start;
        }
        if let Some(local) = barrier_minimize(&problem, start.0, settings, max_move) {
            iterations += local.iterations;
            converged |= local.converged;
            let candidate = (local.best, local.best_f * scale + lo);
            if better(&candidate, &best).is_lt() {
                best = candidate;
            }
        }
    }

    let loss_value = objective.eval(&best.0)?;
    Ok(SolverOutcome {
        c_next: best.0,
        loss_value,
        feasible: set.max_violation(&best.0) <= settings.constraint_tolerance,
        iterations_used: iterations,
        status: if converged {
            SolverStatus::Converged
        } else {
            SolverStatus::MaxIterations
        },
    })
}

/// Minimizes the restriction violation inside the step ball.
fn restore(
    problem: &RestorationProblem<'_>,
    set: &ConstraintSet,
    pool: &[Vec3],
    settings: &SolverSettings,
) -> Option<(Vec3, usize)> {
    let radius = set.step?.radius;
    let step_ok = |x: &Vec3| {
        problem
            .constraints(x)
            .is_some_and(|g| strictly_feasible(&g))
    };
    let mut starts: Vec<(Vec3, f64)> = pool
        .iter()
        .filter(|x| step_ok(x))
        .map(|x| (*x, problem.violation(x, RESTORE_MARGIN)))
        .filter(|p| p.1.is_finite())
        .collect();
    starts.sort_by(better);
    // the current pose and the least-violating sample
    let mut chosen: Vec<(Vec3, f64)> = starts.iter().filter(|p| p.0 == pool[0]).copied().collect();
    if let Some(first) = starts.first() {
        if chosen.first().is_none_or(|c| c.0 != first.0) {
            chosen.push(*first);
        }
    }

    let mut best: Option<(Vec3, f64)> = None;
    let mut iterations = 0;
    for start in &chosen {
        let candidate = match barrier_minimize(problem, start.0, settings, 0.5 * radius) {
            Some(local) => {
                iterations += local.iterations;
                (local.best, local.best_f)
            }
            None => *start,
        };
        if best.as_ref().is_none_or(|b| better(&candidate, b).is_lt()) {
            best = Some(candidate);
        }
    }
    best.map(|b| (b.0, iterations))
}

/// Exhaustive lattice search used as a test oracle.
///
/// With a step limit the lattice is spherical around `c_current` (`resolution`
/// radii × `resolution` polar angles × `2·resolution` azimuths); otherwise it
/// is a `resolution³` box over the restrictions' bounding box. Returns `None`
/// when no lattice point is feasible.
#[allow(clippy::too_many_arguments)]
pub fn grid_oracle(
    loss: LossKind,
    set: &ConstraintSet,
    c_current: &Vec3,
    k_hat: &Vec3,
    belief: &Covariance3,
    sigma_c: &Covariance3,
    i: u32,
    resolution: usize,
) -> Result<Option<(Vec3, f64)>> {
    if resolution < 8 {
        return Err(invalid("resolution", "must be at least 8"));
    }
    let set = set.at(*c_current, *k_hat);
    let objective = Objective::new(loss, *k_hat, belief, sigma_c, i)?;
    let mut best: Option<(Vec3, f64)> = None;
    let mut consider = |x: Vec3| {
        if set.max_violation(&x) > FEASIBILITY_TOL {
            return;
        }
        if let Ok(f) = objective.eval(&x) {
            let cand = (x, f);
            if f.is_finite() && best.as_ref().is_none_or(|b| better(&cand, b).is_lt()) {
                best = Some(cand);
            }
        }
    };

    let n = resolution;
    match (set.step, set.bounding_box()) {
        (None, Some((lo, hi))) => {
            if (hi - lo).min() < 0.0 {
                return Ok(None);
            }
            let at = |a: f64, b: f64, j: usize| a + (b - a) * j as f64 / (n - 1) as f64;
            for a in 0..n {
                for b in 0..n {
                    for c in 0..n {
                        consider(Vec3::new(
                            at(lo.x, hi.x, a),
                            at(lo.y, hi.y, b),
                            at(lo.z, hi.z, c),
                        ));
                    }
                }
            }
        }
        _ => {
            let (center, radius) = search_region(&set);
            consider(center);
            for ri in 1..n {
                let r = radius * ri as f64 / (n - 1) as f64;
                for ti in 0..n {
                    let theta = std::f64::consts::PI * ti as f64 / (n - 1) as f64;
                    let azimuths = if ti == 0 || ti == n - 1 { 1 } else { 2 * n };
                    for pi in 0..azimuths {
                        let phi = std::f64::consts::PI * pi as f64 / n as f64;
                        let dir = Vec3::new(
                            theta.sin() * phi.cos(),
                            theta.sin() * phi.sin(),
                            theta.cos(),
                        );
                        consider(center + dir * r);
                    }
                }
            }
        }
    }
    Ok(best)
}
