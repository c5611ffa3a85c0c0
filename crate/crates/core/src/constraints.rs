//! Feasible set for the next viewpoint.
//!
//! Every restriction is expressed as `g(ĉ) ≤ 0`. A [`ConstraintSet`] carries
//! the active restrictions of one experiment together with the evaluation
//! context (current camera position and target estimate).

use std::fmt;
use std::str::FromStr;

use arrayvec::ArrayVec;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, BveError, Result};
use crate::geometry::{perpendicular, unit, PerpMode, Vec3};
use crate::objective::LossKind;

/// Feasibility tolerance applied uniformly to all restrictions.
pub const FEASIBILITY_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Workspace {
    pub center: Vec3,
    pub radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FruitBody {
    pub radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraFov {
    /// Horizontal field of view (rad).
    pub hfov: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantWall {
    /// Distance of the wall plane in front of the target (m).
    pub standoff: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLimit {
    pub radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceShell {
    pub l_dist: f64,
    pub epsilon: f64,
}

/// Keeps the camera away from the manipulator base.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReachabilityShell {
    pub center: Vec3,
    pub inner_radius: f64,
}

/// Sign convention of the cone restriction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FovSign {
    /// Feasible when the fruit rim lies inside the cone.
    #[default]
    Corrected,
    /// Reversed inequality, feasible when the rim is outside the cone.
    Paper,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FovRestriction {
    pub fov: CameraFov,
    pub fruit: FruitBody,
    pub sign: FovSign,
    pub perp_mode: PerpMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ConstraintKind {
    Workspace,
    Fruit,
    Fov,
    Wall,
    Step,
    ShellInner,
    ShellOuter,
    Reach,
}

pub const MAX_CONSTRAINTS: usize = 8;

pub type ConstraintValues = ArrayVec<(ConstraintKind, f64), MAX_CONSTRAINTS>;

pub fn g_workspace(c_hat: &Vec3, ws: &Workspace) -> f64 {
    (c_hat - ws.center).norm_squared() - ws.radius * ws.radius
}

pub fn g_fruit(c_hat: &Vec3, k_hat: &Vec3, fruit: &FruitBody) -> f64 {
    -(c_hat - k_hat).norm_squared() + fruit.radius * fruit.radius
}

/// Cone expression `unit(x_lim − ĉ)·e_c − cos(HFOV/2)` with `x_lim` on the fruit rim.
pub fn g_fov(
    c_hat: &Vec3,
    k_hat: &Vec3,
    fruit: &FruitBody,
    fov: &CameraFov,
    perp_mode: PerpMode,
) -> Result<f64> {
    let e_c = unit(&(k_hat - c_hat))?;
    let x_lim = k_hat + perpendicular(&e_c, perp_mode)? * fruit.radius;
    let rim = unit(&(x_lim - c_hat))?;
    Ok(rim.dot(&e_c) - (fov.hfov / 2.0).cos())
}

pub fn g_wall(c_hat: &Vec3, k_hat: &Vec3, wall: &PlantWall) -> Result<f64> {
    let normal = Vec3::new(k_hat.x, k_hat.y, 0.0);
    if normal.norm() <= 1e-9 {
        return Err(BveError::DegenerateDirection(
            "plant wall normal vanishes for a target on the z axis",
        ));
    }
    let e_n = normal.normalize();
    let w = k_hat - e_n * wall.standoff;
    Ok(e_n.dot(&(c_hat - w)))
}

pub fn g_step(c_hat: &Vec3, c_current: &Vec3, step: &StepLimit) -> f64 {
    (c_hat - c_current).norm() - step.radius
}

/// `(lower, upper)` sides of the distance shell around the target.
pub fn g_distance_shell(c_hat: &Vec3, k_hat: &Vec3, shell: &DistanceShell) -> (f64, f64) {
    let d = (c_hat - k_hat).norm();
    (
        shell.l_dist - shell.epsilon - d,
        d - shell.l_dist - shell.epsilon,
    )
}

pub fn g_reach(c_hat: &Vec3, reach: &ReachabilityShell) -> f64 {
    reach.inner_radius * reach.inner_radius - (c_hat - reach.center).norm_squared()
}

/// The ten experiment configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ExperimentId {
    E1,
    E2,
    E3,
    E4,
    E5,
    E6,
    E7,
    E8,
    E9,
    E10,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 10] = [
        Self::E1,
        Self::E2,
        Self::E3,
        Self::E4,
        Self::E5,
        Self::E6,
        Self::E7,
        Self::E8,
        Self::E9,
        Self::E10,
    ];

    pub fn number(self) -> u8 {
        self as u8 + 1
    }

    pub fn from_number(n: u8) -> Result<Self> {
        match n {
            1..=10 => Ok(Self::ALL[usize::from(n - 1)]),
            _ => Err(BveError::UnknownExperiment(format!("E{n}"))),
        }
    }

    /// Restriction level shared by E(n) and E(n+5).
    fn level(self) -> u8 {
        (self.number() - 1) % 5 + 1
    }

    pub fn default_loss(self) -> LossKind {
        if self.number() <= 5 {
            LossKind::Dispersion
        } else {
            LossKind::MaxEigenvalue
        }
    }
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "E{}", self.number())
    }
}

impl FromStr for ExperimentId {
    type Err = BveError;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        let digits = t.strip_prefix(['E', 'e']).unwrap_or(t);
        digits
            .parse::<u8>()
            .map_err(|_| BveError::UnknownExperiment(s.to_string()))
            .and_then(|n| {
                Self::from_number(n).map_err(|_| BveError::UnknownExperiment(s.to_string()))
            })
    }
}

/// Every restriction parameter, whether or not a given experiment uses it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintParams {
    pub workspace: Workspace,
    pub fruit: FruitBody,
    pub fov: CameraFov,
    pub wall: PlantWall,
    pub step: StepLimit,
    pub shell: DistanceShell,
    pub reach_inner_radius: f64,
    pub fov_sign: FovSign,
    pub perp_mode: PerpMode,
}

impl Default for ConstraintParams {
    fn default() -> Self {
        Self {
            workspace: Workspace {
                center: Vec3::new(0.0, 0.0, 0.159),
                radius: 0.645,
            },
            fruit: FruitBody { radius: 0.04 },
            fov: CameraFov {
                hfov: 60f64.to_radians(),
            },
            wall: PlantWall { standoff: 0.1 },
            step: StepLimit { radius: 0.2 },
            shell: DistanceShell {
                l_dist: 1.0,
                epsilon: 0.1,
            },
            reach_inner_radius: 0.15,
            fov_sign: FovSign::Corrected,
            perp_mode: PerpMode::Paper,
        }
    }
}

impl ConstraintParams {
    pub fn validate(&self) -> Result<()> {
        let finite = |v: &Vec3| v.iter().all(|x| x.is_finite());
        if !finite(&self.workspace.center) {
            return Err(invalid("m", "workspace center must be finite"));
        }
        if !(self.workspace.radius > 0.0) {
            return Err(invalid("r_m", "must be positive"));
        }
        if !(self.fruit.radius > 0.0) {
            return Err(invalid("r_k", "must be positive"));
        }
        if !(self.fov.hfov > 0.0 && self.fov.hfov < std::f64::consts::PI) {
            return Err(invalid("hfov", "must lie in (0, pi)"));
        }
        if !(self.wall.standoff >= 0.0) {
            return Err(invalid("wall_d", "must be non-negative"));
        }
        if !(self.step.radius > 0.0) {
            return Err(invalid("r_d", "must be positive"));
        }
        if !(self.shell.epsilon > 0.0 && self.shell.epsilon < self.shell.l_dist) {
            return Err(invalid("l_eps", "must satisfy 0 < l_eps < l_dist"));
        }
        if !(self.reach_inner_radius >= 0.0 && self.reach_inner_radius < self.workspace.radius) {
            return Err(invalid("r_inner", "must satisfy 0 <= r_inner < r_m"));
        }
        Ok(())
    }
}

/// Active restrictions plus the context they are evaluated in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstraintSet {
    pub workspace: Option<Workspace>,
    pub fruit: Option<FruitBody>,
    pub fov: Option<FovRestriction>,
    pub wall: Option<PlantWall>,
    pub step: Option<StepLimit>,
    pub shell: Option<DistanceShell>,
    pub reach: Option<ReachabilityShell>,
    pub c_current: Vec3,
    pub k_hat: Vec3,
}

impl ConstraintSet {
    /// A set with only the step limit active.
    pub fn step_only(step: StepLimit, c_current: Vec3, k_hat: Vec3) -> Self {
        Self {
            workspace: None,
            fruit: None,
            fov: None,
            wall: None,
            step: Some(step),
            shell: None,
            reach: None,
            c_current,
            k_hat,
        }
    }

    /// Same restrictions, new evaluation context.
    pub fn at(&self, c_current: Vec3, k_hat: Vec3) -> Self {
        Self {
            c_current,
            k_hat,
            ..*self
        }
    }

    pub fn active_count(&self) -> usize {
        usize::from(self.workspace.is_some())
            + usize::from(self.fruit.is_some())
            + usize::from(self.fov.is_some())
            + usize::from(self.wall.is_some())
            + usize::from(self.step.is_some())
            + 2 * usize::from(self.shell.is_some())
            + usize::from(self.reach.is_some())
    }

    /// The wall is dropped when its normal is undefined for the current estimate.
    pub fn wall_skipped(&self) -> bool {
        self.wall.is_some() && Vec3::new(self.k_hat.x, self.k_hat.y, 0.0).norm() <= 1e-9
    }

    /// Values of every active restriction at `c_hat`.
    pub fn values(&self, c_hat: &Vec3) -> Result<ConstraintValues> {
        let mut out = ConstraintValues::new();
        self.values_except(c_hat, None, &mut out)?;
        Ok(out)
    }

    /// Same as [`values`](Self::values) without the step limit.
    pub fn values_without_step(&self, c_hat: &Vec3) -> Result<ConstraintValues> {
        let mut out = ConstraintValues::new();
        self.values_except(c_hat, Some(ConstraintKind::Step), &mut out)?;
        Ok(out)
    }

    fn values_except(
        &self,
        c_hat: &Vec3,
        skip: Option<ConstraintKind>,
        out: &mut ConstraintValues,
    ) -> Result<()> {
        let k = &self.k_hat;
        let mut push = |kind: ConstraintKind, v: f64| {
            if skip != Some(kind) {
                out.push((kind, v));
            }
        };
        if let Some(ws) = &self.workspace {
            push(ConstraintKind::Workspace, g_workspace(c_hat, ws));
        }
        if let Some(fruit) = &self.fruit {
            push(ConstraintKind::Fruit, g_fruit(c_hat, k, fruit));
        }
        if let Some(fov) = &self.fov {
            let raw = g_fov(c_hat, k, &fov.fruit, &fov.fov, fov.perp_mode)?;
            let v = match fov.sign {
                FovSign::Corrected => -raw,
                FovSign::Paper => raw,
            };
            push(ConstraintKind::Fov, v);
        }
        if let Some(wall) = &self.wall {
            if !self.wall_skipped() {
                push(ConstraintKind::Wall, g_wall(c_hat, k, wall)?);
            }
        }
        if let Some(step) = &self.step {
            push(ConstraintKind::Step, g_step(c_hat, &self.c_current, step));
        }
        if let Some(shell) = &self.shell {
            let (lo, hi) = g_distance_shell(c_hat, k, shell);
            push(ConstraintKind::ShellInner, lo);
            push(ConstraintKind::ShellOuter, hi);
        }
        if let Some(reach) = &self.reach {
            push(ConstraintKind::Reach, g_reach(c_hat, reach));
        }
        Ok(())
    }

    /// Largest restriction value (positive means violated); `+inf` when undefined.
    pub fn max_violation(&self, c_hat: &Vec3) -> f64 {
        match self.values(c_hat) {
            Ok(vals) => vals
                .iter()
                .map(|&(_, v)| v)
                .fold(f64::NEG_INFINITY, f64::max),
            Err(_) => f64::INFINITY,
        }
    }

    /// Axis-aligned box containing the feasible set, if any restriction bounds it.
    pub fn bounding_box(&self) -> Option<(Vec3, Vec3)> {
        let mut bbox: Option<(Vec3, Vec3)> = None;
        let mut clip = |center: Vec3, radius: f64| {
            let r = Vec3::repeat(radius);
            let (lo, hi) = (center - r, center + r);
            bbox = Some(match bbox {
                None => (lo, hi),
                Some((a, b)) => (a.sup(&lo), b.inf(&hi)),
            });
        };
        if let Some(step) = &self.step {
            clip(self.c_current, step.radius);
        }
        if let Some(ws) = &self.workspace {
            clip(ws.center, ws.radius);
        }
        if let Some(shell) = &self.shell {
            clip(self.k_hat, shell.l_dist + shell.epsilon);
        }
        bbox
    }
}

/// True when every active restriction is at most `tol`.
pub fn is_feasible(c_hat: &Vec3, set: &ConstraintSet, tol: f64) -> bool {
    set.max_violation(c_hat) <= tol
}

/// Loss and restriction set of one experiment.
pub fn build_for_experiment(
    id: ExperimentId,
    params: &ConstraintParams,
) -> Result<(LossKind, ConstraintSet)> {
    params.validate()?;
    let level = id.level();
    let mut set = ConstraintSet::step_only(params.step, Vec3::zeros(), Vec3::zeros());
    if level <= 2 {
        set.shell = Some(params.shell);
    }
    if level >= 2 {
        set.workspace = Some(params.workspace);
    }
    if level >= 3 {
        set.fruit = Some(params.fruit);
        set.fov = Some(FovRestriction {
            fov: params.fov,
            fruit: params.fruit,
            sign: params.fov_sign,
            perp_mode: params.perp_mode,
        });
    }
    if level >= 4 {
        set.wall = Some(params.wall);
    }
    if level >= 5 {
        set.reach = Some(ReachabilityShell {
            center: params.workspace.center,
            inner_radius: params.reach_inner_radius,
        });
    }
    Ok((id.default_loss(), set))
}
