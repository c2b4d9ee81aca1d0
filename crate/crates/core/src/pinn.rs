//! Physics-informed training of the temperature surrogate.
//!
//! The network sees `[x, (y), t, K, T_a, T_o]` mapped to [-1, 1] per slot and
//! predicts the z-scored temperature. The loss is
//!
//! ```text
//! MSE = lambda_u * mean((n(x_u) - (u_target - mean) / std)^2) + lambda_f * mean(f^2)
//! f   = (C du/dt - k Lap(u) - q(u)) / beta
//! ```
//!
//! where `u = mean + std * n` and the derivatives of `u` carry the chain-rule
//! factors of both scalings. Time derivatives are per hour.

use std::cell::RefCell;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{self, BatchLoss, Directions, Jet, JetSlots, NetSpec, NetworkParams, RawJet};
use crate::optim::{self, Adam, AdamSettings, LbfgsSettings, Termination};
use crate::physics::{self, DriveSample, DriveSeries, PhysicsSpec};
use crate::solver::{self, FieldSeries, TransformerProblem};

/// Min-max input standardization and z-score output normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scaler {
    pub input_min: Vec<f64>,
    pub input_max: Vec<f64>,
    pub output_mean: f64,
    pub output_std: f64,
}

impl Scaler {
    pub fn new(
        input_min: Vec<f64>,
        input_max: Vec<f64>,
        output_mean: f64,
        output_std: f64,
    ) -> Result<Self> {
        if input_min.len() != input_max.len() || input_min.is_empty() {
            return Err(Error::Argument("scaler bounds differ in length".into()));
        }
        for (slot, (lo, hi)) in input_min.iter().zip(&input_max).enumerate() {
            if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::Degenerate(format!(
                    "input slot {slot} has range [{lo}, {hi}]"
                )));
            }
        }
        if !(output_std > 0.0 && output_std.is_finite() && output_mean.is_finite()) {
            return Err(Error::Degenerate(format!(
                "output normalization mean {output_mean}, std {output_std}"
            )));
        }
        Ok(Self {
            input_min,
            input_max,
            output_mean,
            output_std,
        })
    }

    pub fn n_inputs(&self) -> usize {
        self.input_min.len()
    }

    /// `(2 v - (max + min)) / (max - min)`
    pub fn standardize(&self, slot: usize, v: f64) -> f64 {
        let (lo, hi) = (self.input_min[slot], self.input_max[slot]);
        (2.0 * v - (hi + lo)) / (hi - lo)
    }

    pub fn destandardize(&self, slot: usize, z: f64) -> f64 {
        let (lo, hi) = (self.input_min[slot], self.input_max[slot]);
        (z * (hi - lo) + (hi + lo)) / 2.0
    }

    /// `d(standardized) / d(raw)` for a slot.
    pub fn slope(&self, slot: usize) -> f64 {
        2.0 / (self.input_max[slot] - self.input_min[slot])
    }

    pub fn standardize_all(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter().enumerate().map(|(i, &v)| self.standardize(i, v)).collect()
    }

    pub fn normalize(&self, u: f64) -> f64 {
        (u - self.output_mean) / self.output_std
    }

    pub fn denormalize(&self, n: f64) -> f64 {
        self.output_mean + self.output_std * n
    }
}

/// Physical network input `[x, (y), t, K, T_a, T_o]`.
pub fn raw_input(x: &[f64], t: f64, drive: &DriveSample) -> Vec<f64> {
    let mut v = x.to_vec();
    v.extend_from_slice(&[t, drive.kf, drive.ta, drive.to]);
    v
}

/// Fits the scaler over the unit domain, `[0, horizon]` and the drive samples
/// inside the horizon. Output constants are the mean and standard deviation
/// of the boundary temperatures (T_a, T_o, and T_av in 2D).
pub fn fit_scaler(drive: &DriveSeries, dim: usize, horizon: f64) -> Result<Scaler> {
    if dim != 1 && dim != 2 {
        return Err(Error::Argument(format!("dim must be 1 or 2, got {dim}")));
    }
    if !(horizon > 0.0) || drive.t_first() > 0.0 || drive.t_last() < horizon {
        return Err(Error::Range(format!(
            "horizon [0, {horizon}] not covered by drive [{}, {}]",
            drive.t_first(),
            drive.t_last()
        )));
    }
    let inside: Vec<usize> = (0..drive.len())
        .filter(|&i| drive.times()[i] <= horizon)
        .collect();
    if inside.is_empty() {
        return Err(Error::Range("no drive samples inside the horizon".into()));
    }
    let range = |v: &[f64]| {
        inside.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
            (lo.min(v[i]), hi.max(v[i]))
        })
    };
    let (k, ta, to) = (range(drive.load()), range(drive.ambient()), range(drive.top_oil()));
    let mut lo = vec![0.0; dim];
    let mut hi = vec![1.0; dim];
    lo.extend_from_slice(&[0.0, k.0, ta.0, to.0]);
    hi.extend_from_slice(&[horizon, k.1, ta.1, to.1]);

    let mut temps = Vec::new();
    for &i in &inside {
        let s = drive.sample(i);
        temps.push(s.ta);
        temps.push(s.to);
        if dim == 2 {
            temps.push(s.tav);
        }
    }
    let n = temps.len() as f64;
    let mean = temps.iter().sum::<f64>() / n;
    let var = temps.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Scaler::new(lo, hi, mean, var.sqrt())
}

fn default_eval_every() -> usize {
    10
}

fn default_c2() -> f64 {
    0.9
}

fn default_line_search() -> usize {
    50
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub hidden_layers: usize,
    pub hidden_width: usize,
    /// Boundary training points.
    pub n_u: usize,
    /// Collocation points.
    pub n_f: usize,
    /// Extra misfit points on the t = 0 steady state (0 disables them).
    #[serde(default)]
    pub n_initial: usize,
    pub lambda_u: f64,
    pub lambda_f: f64,
    /// Residual scaling factor.
    pub beta: f64,
    pub adam_epochs: usize,
    pub adam_lr: f64,
    pub adam_epsilon: f64,
    pub lbfgs_epochs: usize,
    pub lbfgs_max_evals: usize,
    pub lbfgs_history: usize,
    #[serde(default = "default_line_search")]
    pub lbfgs_line_search: usize,
    pub lbfgs_tolerance: f64,
    #[serde(default = "default_c2")]
    pub lbfgs_c2: f64,
    /// Epoch interval of the error metrics in the report.
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    pub seed: u64,
}

impl TrainConfig {
    /// Full-size hyperparameters of the reference study.
    pub fn full_scale(dim: usize) -> Self {
        let two_d = dim == 2;
        Self {
            hidden_layers: 4,
            hidden_width: 50,
            n_u: if two_d { 20200 } else { 100 },
            n_f: if two_d { 40400 } else { 20000 },
            n_initial: 0,
            lambda_u: 1.0,
            lambda_f: 10000.0,
            beta: 1000.0,
            adam_epochs: 10000,
            adam_lr: if two_d { 1e-4 } else { 1e-6 },
            adam_epsilon: 1e-5,
            lbfgs_epochs: 10000,
            lbfgs_max_evals: 20000,
            lbfgs_history: 50,
            lbfgs_line_search: 50,
            lbfgs_tolerance: if two_d { 1e-3 } else { 1e-6 },
            lbfgs_c2: 0.9,
            eval_every: 10,
            seed: 1,
        }
    }

    /// Reduced profile that runs in CPU minutes.
    pub fn desk(dim: usize) -> Self {
        Self {
            hidden_layers: 4,
            hidden_width: 20,
            n_u: 200,
            n_f: if dim == 2 { 4000 } else { 2000 },
            adam_epochs: 2000,
            adam_lr: 1e-3,
            lbfgs_epochs: 500,
            ..Self::full_scale(dim)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Argument(m));
        if self.n_u == 0 || self.n_f == 0 {
            return bad(format!("n_u and n_f must be >= 1 (got {}, {})", self.n_u, self.n_f));
        }
        if !(self.lambda_u >= 0.0 && self.lambda_f >= 0.0) {
            return bad("loss weights must be >= 0".into());
        }
        if !(self.beta > 0.0) {
            return bad(format!("beta must be > 0, got {}", self.beta));
        }
        if !(self.adam_lr > 0.0 && self.adam_epsilon > 0.0) {
            return bad("Adam learning rate and epsilon must be > 0".into());
        }
        if self.lbfgs_history == 0 || self.lbfgs_line_search == 0 {
            return bad("L-BFGS history and line-search budget must be >= 1".into());
        }
        if !(self.lbfgs_tolerance >= 0.0) || !(self.lbfgs_c2 > 0.0 && self.lbfgs_c2 < 1.0) {
            return bad("invalid L-BFGS tolerance or curvature constant".into());
        }
        if self.hidden_layers == 0 || self.hidden_width == 0 || self.eval_every == 0 {
            return bad("network shape and eval_every must be >= 1".into());
        }
        Ok(())
    }

    pub fn net_spec(&self, dim: usize) -> NetSpec {
        NetSpec::for_dim(dim, self.hidden_layers, self.hidden_width)
    }
}

/// A boundary (or initial) point with its temperature target.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryPoint {
    pub x: Vec<f64>,
    pub t: f64,
    pub drive: DriveSample,
    pub target: f64,
}

/// An interior space-time point where the residual is enforced.
#[derive(Debug, Clone, PartialEq)]
pub struct CollocationPoint {
    pub x: Vec<f64>,
    pub t: f64,
    pub drive: DriveSample,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSets {
    pub dim: usize,
    pub horizon: f64,
    pub boundary: Vec<BoundaryPoint>,
    pub collocation: Vec<CollocationPoint>,
}

/// Draws the boundary and collocation sets.
///
/// Boundary points sit on a uniform time grid over `[0, horizon]`; at each
/// time level one point per boundary piece is placed (x = 0 and x = 1 in 1D;
/// a seeded uniform position along each of the four edges in 2D). Collocation
/// points are seeded uniform over the closed domain times `[0, horizon]`.
pub fn sample_training_sets(
    spec: &PhysicsSpec,
    drive: &DriveSeries,
    cfg: &TrainConfig,
    horizon: f64,
) -> Result<TrainingSets> {
    spec.validate()?;
    cfg.validate()?;
    if !(horizon > 0.0) || drive.t_first() > 0.0 || drive.t_last() < horizon {
        return Err(Error::Range(format!("drive does not cover [0, {horizon}] h")));
    }
    let dim = spec.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0001);
    let unit = Uniform::new_inclusive(0.0, 1.0).expect("valid range");

    let pieces = 2 * dim;
    let levels = cfg.n_u.div_ceil(pieces);
    let mut boundary = Vec::with_capacity(cfg.n_u);
    'outer: for lvl in 0..levels {
        let t = if levels == 1 {
            0.0
        } else {
            horizon * lvl as f64 / (levels - 1) as f64
        };
        let d = physics::drive_at(drive, t)?;
        for piece in 0..pieces {
            if boundary.len() == cfg.n_u {
                break 'outer;
            }
            let x = if dim == 1 {
                vec![piece as f64]
            } else {
                let s = unit.sample(&mut rng);
                match piece {
                    0 => vec![0.0, s],
                    1 => vec![1.0, s],
                    2 => vec![s, 0.0],
                    _ => vec![s, 1.0],
                }
            };
            let target = physics::boundary_value(spec, &x, &d)?;
            boundary.push(BoundaryPoint {
                x,
                t,
                drive: d,
                target,
            });
        }
    }

    if cfg.n_initial > 0 {
        let nx = if dim == 1 { 401 } else { 101 };
        let problem = TransformerProblem::new(*spec, drive)?;
        let init = solver::initial_state(&problem, nx)?;
        let grid = solver::GridSpec::new(nx, 1, horizon);
        let field = FieldSeries::new(grid, dim, vec![0.0], init)?;
        let d0 = physics::drive_at(drive, 0.0)?;
        for _ in 0..cfg.n_initial {
            let x: Vec<f64> = (0..dim).map(|_| unit.sample(&mut rng)).collect();
            let target = solver::sample_level(&field, 0, &x)?;
            boundary.push(BoundaryPoint {
                x,
                t: 0.0,
                drive: d0,
                target,
            });
        }
    }

    let time = Uniform::new_inclusive(0.0, horizon).expect("valid range");
    let mut collocation = Vec::with_capacity(cfg.n_f);
    for _ in 0..cfg.n_f {
        let x: Vec<f64> = (0..dim).map(|_| unit.sample(&mut rng)).collect();
        let t = time.sample(&mut rng);
        collocation.push(CollocationPoint {
            x,
            t,
            drive: physics::drive_at(drive, t)?,
        });
    }
    Ok(TrainingSets {
        dim,
        horizon,
        boundary,
        collocation,
    })
}

/// A temperature model that can be evaluated at physical coordinates.
pub trait FieldModel: Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64], t: f64, drive: &DriveSample) -> Result<f64>;
}

/// A model that also provides the derivatives used by the residual.
pub trait JetModel: FieldModel {
    fn jet(&self, x: &[f64], t: f64, drive: &DriveSample) -> Result<Jet>;
}

/// Trained (or training) network together with its scaler.
#[derive(Debug, Clone, PartialEq)]
pub struct Pinn {
    pub params: NetworkParams,
    pub scaler: Scaler,
    pub dim: usize,
}

impl Pinn {
    pub fn new(params: NetworkParams, scaler: Scaler, dim: usize) -> Result<Self> {
        if params.spec().input_dim != dim + 4 || scaler.n_inputs() != dim + 4 {
            return Err(Error::Argument(format!(
                "network ({} inputs) / scaler ({} slots) do not match a {dim}D problem",
                params.spec().input_dim,
                scaler.n_inputs()
            )));
        }
        Ok(Self {
            params,
            scaler,
            dim,
        })
    }

    fn input(&self, x: &[f64], t: f64, drive: &DriveSample) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(Error::Argument(format!(
                "point has {} coordinates, model is {}D",
                x.len(),
                self.dim
            )));
        }
        Ok(self.scaler.standardize_all(&raw_input(x, t, drive)))
    }
}

impl FieldModel for Pinn {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &[f64], t: f64, drive: &DriveSample) -> Result<f64> {
        let n = nn::forward(&self.params, &self.input(x, t, drive)?)?;
        Ok(self.scaler.denormalize(n))
    }
}

impl JetModel for Pinn {
    fn jet(&self, x: &[f64], t: f64, drive: &DriveSample) -> Result<Jet> {
        let z = self.input(x, t, drive)?;
        let slots = JetSlots::standard(self.dim);
        let raw = nn::input_jet(&self.params, &z, &slots)?;
        let sd = self.scaler.output_std;
        let st = self.scaler.slope(slots.t);
        let grad_x: Vec<f64> = slots
            .space
            .iter()
            .zip(&raw.grad_x)
            .map(|(&s, g)| sd * self.scaler.slope(s) * g)
            .collect();
        // both space slots span [0, 1], so the Laplacian takes one common factor
        let sx = self.scaler.slope(slots.space[0]);
        Ok(Jet {
            u: self.scaler.denormalize(raw.u),
            du_dt: sd * st * raw.du_dt,
            grad_x,
            lap_x: sd * sx * sx * raw.lap_x,
        })
    }
}

/// Heat-equation residual divided by `beta`.
pub fn residual<M: JetModel + ?Sized>(
    model: &M,
    spec: &PhysicsSpec,
    beta: f64,
    point: &CollocationPoint,
) -> Result<f64> {
    let jet = model.jet(&point.x, point.t, &point.drive)?;
    if !(jet.u.is_finite() && jet.du_dt.is_finite() && jet.lap_x.is_finite()) {
        return Err(Error::Numeric {
            index: 0,
            what: format!("model output not finite at x={:?}, t={}", point.x, point.t),
        });
    }
    let q = physics::source_q(spec, &point.x, jet.u, &point.drive)?;
    Ok((spec.capacity_per_hour() * jet.du_dt - spec.k * jet.lap_x - q) / beta)
}

/// Loss components.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub mse: f64,
    pub mse_u: f64,
    pub mse_f: f64,
}

struct BoundaryBatch {
    inputs: Vec<Vec<f64>>,
    targets: Vec<f64>,
}

impl BatchLoss for BoundaryBatch {
    fn len(&self) -> usize {
        self.inputs.len()
    }
    fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i]
    }
    fn term(&self, i: usize, jet: &RawJet) -> (f64, RawJet) {
        let n = self.inputs.len() as f64;
        let e = jet.value - self.targets[i];
        let mut seed = RawJet::zeros(0);
        seed.value = 2.0 * e / n;
        (e * e / n, seed)
    }
}

/// Residual `f = a_t n_t + a_lap sum(n_xx) + a_u n + offset` in terms of the
/// raw network jet.
struct CollocationBatch {
    inputs: Vec<Vec<f64>>,
    offsets: Vec<f64>,
    a_t: f64,
    a_lap: f64,
    a_u: f64,
    n_dirs: usize,
}

impl CollocationBatch {
    fn residual(&self, i: usize, jet: &RawJet) -> f64 {
        let lap: f64 = jet.d2[1..].iter().sum();
        self.a_t * jet.d1[0] + self.a_lap * lap + self.a_u * jet.value + self.offsets[i]
    }
}

impl BatchLoss for CollocationBatch {
    fn len(&self) -> usize {
        self.inputs.len()
    }
    fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i]
    }
    fn term(&self, i: usize, jet: &RawJet) -> (f64, RawJet) {
        let n = self.inputs.len() as f64;
        let r = self.residual(i, jet);
        let w = 2.0 * r / n;
        let mut seed = RawJet::zeros(self.n_dirs);
        seed.value = w * self.a_u;
        seed.d1[0] = w * self.a_t;
        for d in 1..self.n_dirs {
            seed.d2[d] = w * self.a_lap;
        }
        (r * r / n, seed)
    }
}

/// Training sets converted to network inputs for one scaler and physics.
pub struct PreparedSets {
    boundary: BoundaryBatch,
    collocation: CollocationBatch,
    dirs: Directions,
}

impl PreparedSets {
    pub fn new(
        spec: &PhysicsSpec,
        scaler: &Scaler,
        sets: &TrainingSets,
        beta: f64,
    ) -> Result<Self> {
        if sets.boundary.is_empty() || sets.collocation.is_empty() {
            return Err(Error::Argument("training sets must not be empty".into()));
        }
        if !(beta > 0.0) {
            return Err(Error::Argument(format!("beta must be > 0, got {beta}")));
        }
        let dim = sets.dim;
        let slots = JetSlots::standard(dim);
        let boundary = BoundaryBatch {
            inputs: sets
                .boundary
                .iter()
                .map(|p| scaler.standardize_all(&raw_input(&p.x, p.t, &p.drive)))
                .collect(),
            targets: sets.boundary.iter().map(|p| scaler.normalize(p.target)).collect(),
        };
        let (mean, sd) = (scaler.output_mean, scaler.output_std);
        let st = scaler.slope(slots.t);
        let sx = scaler.slope(slots.space[0]);
        let collocation = CollocationBatch {
            inputs: sets
                .collocation
                .iter()
                .map(|p| scaler.standardize_all(&raw_input(&p.x, p.t, &p.drive)))
                .collect(),
            offsets: sets
                .collocation
                .iter()
                .map(|p| {
                    let pk = spec.nu * p.drive.kf * p.drive.kf * physics::spatial_profile(&p.x);
                    (spec.h * (mean - p.drive.ta) - spec.p0 - pk) / beta
                })
                .collect(),
            a_t: spec.capacity_per_hour() * sd * st / beta,
            a_lap: -spec.k * sd * sx * sx / beta,
            a_u: spec.h * sd / beta,
            n_dirs: 1 + dim,
        };
        Ok(Self {
            boundary,
            collocation,
            dirs: slots.directions(),
        })
    }

    pub fn n_boundary(&self) -> usize {
        self.boundary.inputs.len()
    }

    pub fn n_collocation(&self) -> usize {
        self.collocation.inputs.len()
    }
}

/// Loss components at the given parameters.
pub fn total_loss(
    params: &NetworkParams,
    prepared: &PreparedSets,
    cfg: &TrainConfig,
) -> Result<LossParts> {
    let mse_u = nn::batch_loss(params, &Directions::none(), &prepared.boundary)?;
    let mse_f = nn::batch_loss(params, &prepared.dirs, &prepared.collocation)?;
    Ok(LossParts {
        mse: cfg.lambda_u * mse_u + cfg.lambda_f * mse_f,
        mse_u,
        mse_f,
    })
}

/// Loss components and the gradient of the weighted total.
pub fn loss_and_gradient(
    params: &NetworkParams,
    prepared: &PreparedSets,
    cfg: &TrainConfig,
) -> Result<(LossParts, Vec<f64>)> {
    let (mse_u, gu) = nn::param_gradient(params, &Directions::none(), &prepared.boundary)?;
    let (mse_f, gf) = nn::param_gradient(params, &prepared.dirs, &prepared.collocation)?;
    let grad = gu
        .iter()
        .zip(&gf)
        .map(|(a, b)| cfg.lambda_u * a + cfg.lambda_f * b)
        .collect();
    Ok((
        LossParts {
            mse: cfg.lambda_u * mse_u + cfg.lambda_f * mse_f,
            mse_u,
            mse_f,
        },
        grad,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Adam,
    Lbfgs,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub stage: Stage,
    pub loss: LossParts,
    pub rel_l2_field: Option<f64>,
    pub rel_l2_top: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub records: Vec<EpochRecord>,
    pub wall_time_s: f64,
}

impl TrainReport {
    /// Writes `epoch,mse,mse_u,mse_f,rel_l2_field,rel_l2_top`; metrics that
    /// were not evaluated at an epoch are left empty.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["epoch", "mse", "mse_u", "mse_f", "rel_l2_field", "rel_l2_top"])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.records {
            w.write_record(&[
                r.epoch.to_string(),
                r.loss.mse.to_string(),
                r.loss.mse_u.to_string(),
                r.loss.mse_f.to_string(),
                opt(r.rel_l2_field),
                opt(r.rel_l2_top),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn last_metrics(&self) -> Option<(f64, f64)> {
        self.records
            .iter()
            .rev()
            .find_map(|r| Some((r.rel_l2_field?, r.rel_l2_top?)))
    }
}

/// Node indices `0..n` thinned to at most `max` entries, always keeping both ends.
fn thin_axis(n: usize, max: usize) -> Vec<usize> {
    if max >= n || max < 2 {
        return (0..n).collect();
    }
    let mut v: Vec<usize> = (0..max)
        .map(|k| ((k as f64) * (n - 1) as f64 / (max - 1) as f64).round() as usize)
        .collect();
    v.dedup();
    v
}

/// Precomputed evaluation points for comparing a network against a
/// reference field (optionally on a thinned subgrid).
pub struct MetricsProbe {
    dim: usize,
    inputs: Vec<Vec<f64>>,
    reference: Vec<f64>,
    /// For each level, the indices (into `inputs`) of the x = 1 nodes.
    top: Vec<Vec<usize>>,
    reference_top: Vec<f64>,
}

impl MetricsProbe {
    /// `max_nodes` caps nodes per axis, `max_levels` the stored levels used.
    pub fn new(
        reference: &FieldSeries,
        drive: &DriveSeries,
        scaler: &Scaler,
        max_nodes: usize,
        max_levels: usize,
    ) -> Result<Self> {
        let dim = reference.dim();
        let nx = reference.nx();
        let axis = thin_axis(nx, max_nodes);
        let levels = thin_axis(reference.n_levels(), max_levels);
        let mut inputs = Vec::new();
        let mut values = Vec::new();
        let mut top = Vec::new();
        let mut reference_top = Vec::new();
        let last = *axis.last().expect("non-empty axis");
        for &l in &levels {
            let t = reference.times()[l];
            let d = physics::drive_at(drive, t)?;
            let lvl = reference.level(l);
            let mut top_idx = Vec::new();
            let rows: Vec<usize> = if dim == 1 { vec![0] } else { axis.clone() };
            for &j in &rows {
                for &i in &axis {
                    let node = j * nx + i;
                    let c = reference.node_coords(node);
                    if i == last {
                        top_idx.push(inputs.len());
                    }
                    inputs.push(scaler.standardize_all(&raw_input(&c[..dim], t, &d)));
                    values.push(lvl[node]);
                }
            }
            reference_top.push(
                top_idx.iter().map(|&k| values[k]).sum::<f64>() / top_idx.len() as f64,
            );
            top.push(top_idx);
        }
        Ok(Self {
            dim,
            inputs,
            reference: values,
            top,
            reference_top,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Relative L2 errors of the whole field and of the top-oil trace.
    pub fn eval(&self, pinn: &Pinn) -> Result<(f64, f64)> {
        if pinn.dim != self.dim {
            return Err(Error::Argument("model and reference dimensions differ".into()));
        }
        let pred: Vec<f64> = self
            .inputs
            .par_iter()
            .map(|z| nn::forward(&pinn.params, z).map(|n| pinn.scaler.denormalize(n)))
            .collect::<Result<_>>()?;
        let top: Vec<f64> = self
            .top
            .iter()
            .map(|idx| idx.iter().map(|&k| pred[k]).sum::<f64>() / idx.len() as f64)
            .collect();
        Ok((
            solver::relative_l2(&pred, &self.reference)?,
            solver::relative_l2(&top, &self.reference_top)?,
        ))
    }
}

/// Relative L2 errors of a model against a reference on the full reference
/// grid: `(field, top-oil trace)`.
pub fn eval_metrics<M: FieldModel + ?Sized>(
    model: &M,
    drive: &DriveSeries,
    reference: &FieldSeries,
) -> Result<(f64, f64)> {
    if model.dim() != reference.dim() {
        return Err(Error::Argument(format!(
            "model is {}D but the reference is {}D",
            model.dim(),
            reference.dim()
        )));
    }
    let dim = reference.dim();
    let n_space = reference.n_space();
    let nx = reference.nx();
    let pred: Vec<f64> = (0..reference.n_levels() * n_space)
        .into_par_iter()
        .map(|k| {
            let (l, node) = (k / n_space, k % n_space);
            let t = reference.times()[l];
            let d = physics::drive_at(drive, t)?;
            let c = reference.node_coords(node);
            model.value(&c[..dim], t, &d)
        })
        .collect::<Result<_>>()?;
    let field = solver::relative_l2(&pred, reference.values())?;
    let top_pred: Vec<f64> = (0..reference.n_levels())
        .map(|l| {
            let lvl = &pred[l * n_space..(l + 1) * n_space];
            if dim == 1 {
                lvl[nx - 1]
            } else {
                (0..nx).map(|j| lvl[j * nx + nx - 1]).sum::<f64>() / nx as f64
            }
        })
        .collect();
    let top = solver::relative_l2(&top_pred, &reference.top_oil_trace())?;
    Ok((field, top))
}

/// Runs the two optimization stages on prepared training sets.
/// Runs the two optimization stages on prepared training sets.
pub struct Trainer<'a> {
    pub cfg: &'a TrainConfig,
    pub prepared: &'a PreparedSets,
    pub scaler: &'a Scaler,
    pub dim: usize,
    pub probe: Option<&'a MetricsProbe>,
}

impl Trainer<'_> {
    fn metrics(&self, params: &NetworkParams, due: bool) -> Result<(Option<f64>, Option<f64>)> {
        match self.probe {
            Some(probe) if due => {
                let pinn = Pinn::new(params.clone(), self.scaler.clone(), self.dim)?;
                let (f, t) = probe.eval(&pinn)?;
                Ok((Some(f), Some(t)))
            }
            _ => Ok((None, None)),
        }
    }

    /// Full-batch Adam for `cfg.adam_epochs` epochs, one record per epoch
    /// (loss at the parameters before the update). On a non-finite loss the
    /// parameters are restored to the last finite iterate and the error is
    /// returned.
    pub fn train_adam(&self, params: &mut NetworkParams, report: &mut TrainReport) -> Result<()> {
        let start = Instant::now();
        let settings = AdamSettings::new(self.cfg.adam_lr, self.cfg.adam_epsilon);
        let mut adam = Adam::new(settings, params.len());
        let mut last_good: Option<NetworkParams> = None;
        let result = (|| {
            for e in 0..self.cfg.adam_epochs {
                let (loss, grad) = loss_and_gradient(params, self.prepared, self.cfg)?;
                if !loss.mse.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                    return Err(Error::Numeric {
                        index: e,
                        what: format!("Adam epoch {e}: loss {}", loss.mse),
                    });
                }
                let due = e % self.cfg.eval_every == 0 || e + 1 == self.cfg.adam_epochs;
                let (f, t) = self.metrics(params, due)?;
                report.records.push(EpochRecord {
                    epoch: report.records.len(),
                    stage: Stage::Adam,
                    loss,
                    rel_l2_field: f,
                    rel_l2_top: t,
                });
                last_good = Some(params.clone());
                adam.step(params.as_mut_slice(), &grad);
            }
            Ok(())
        })();
        if result.is_err() {
            if let Some(p) = last_good {
                *params = p;
            }
        }
        report.wall_time_s += start.elapsed().as_secs_f64();
        result
    }

    /// L-BFGS from `params`, one record per accepted iteration. Points where
    /// the loss cannot be evaluated count as `+inf` for the line search.
    pub fn train_lbfgs(
        &self,
        params: &mut NetworkParams,
        report: &mut TrainReport,
    ) -> Result<Termination> {
        let start = Instant::now();
        let settings = LbfgsSettings {
            max_iters: self.cfg.lbfgs_epochs,
            max_evals: self.cfg.lbfgs_max_evals,
            history: self.cfg.lbfgs_history,
            max_line_search: self.cfg.lbfgs_line_search,
            tolerance: self.cfg.lbfgs_tolerance,
            c1: 1e-4,
            c2: self.cfg.lbfgs_c2,
        };
        let spec = *params.spec();
        // losses of the points tried since the last accepted step
        let tried: RefCell<Vec<(Vec<f64>, LossParts)>> = RefCell::new(Vec::new());
        let mut objective = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
            let p = NetworkParams::from_flat(spec, x.to_vec())?;
            match loss_and_gradient(&p, self.prepared, self.cfg) {
                Ok((parts, g)) if parts.mse.is_finite() && g.iter().all(|v| v.is_finite()) => {
                    tried.borrow_mut().push((x.to_vec(), parts));
                    Ok((parts.mse, g))
                }
                Ok(_) | Err(Error::Numeric { .. }) => Ok((f64::INFINITY, vec![0.0; x.len()])),
                Err(e) => Err(e),
            }
        };
        let mut failure: Option<Error> = None;
        let outcome = optim::lbfgs(&mut objective, params.as_slice(), &settings, |it| {
            if failure.is_some() {
                return;
            }
            let loss = tried
                .borrow()
                .iter()
                .rev()
                .find(|(x, _)| x.as_slice() == it.x)
                .map(|(_, l)| *l)
                .unwrap_or(LossParts {
                    mse: it.f,
                    mse_u: f64::NAN,
                    mse_f: f64::NAN,
                });
            tried.borrow_mut().clear();
            let due = it.iteration % self.cfg.eval_every == 0;
            let metrics = NetworkParams::from_flat(spec, it.x.to_vec())
                .and_then(|p| self.metrics(&p, due));
            match metrics {
                Ok((f, t)) => report.records.push(EpochRecord {
                    epoch: report.records.len(),
                    stage: Stage::Lbfgs,
                    loss,
                    rel_l2_field: f,
                    rel_l2_top: t,
                }),
                Err(e) => failure = Some(e),
            }
        });
        report.wall_time_s += start.elapsed().as_secs_f64();
        let outcome = outcome?;
        if let Some(e) = failure {
            return Err(e);
        }
        *params = NetworkParams::from_flat(spec, outcome.x)?;
        // make sure the final iterate carries metrics
        if let Some(last) = report.records.last_mut() {
            if last.stage == Stage::Lbfgs && last.rel_l2_field.is_none() {
                let (f, t) = self.metrics(params, true)?;
                last.rel_l2_field = f;
                last.rel_l2_top = t;
            }
        }
        Ok(outcome.termination)
    }
}

/// Result of a full training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub pinn: Pinn,
    pub report: TrainReport,
    pub termination: Termination,
}

/// State of a training run that may have stopped early. On a numeric
/// failure `pinn` holds the last finite parameters and `error` the cause.
#[derive(Debug)]
pub struct TrainRun {
    pub pinn: Pinn,
    pub report: TrainReport,
    pub termination: Option<Termination>,
    pub error: Option<Error>,
}

/// Fits the scaler, draws the training sets, initializes the network and runs
/// Adam followed by L-BFGS over `[0, horizon]`. When a reference field is
/// given the report carries error metrics on a thinned copy of its grid.
///
/// Setup errors are returned as `Err`; failures during optimization are
/// reported inside the [`TrainRun`].
pub fn train_run(
    spec: &PhysicsSpec,
    drive: &DriveSeries,
    cfg: &TrainConfig,
    horizon: f64,
    reference: Option<&FieldSeries>,
) -> Result<TrainRun> {
    spec.validate()?;
    cfg.validate()?;
    let dim = spec.dim;
    let scaler = fit_scaler(drive, dim, horizon)?;
    let sets = sample_training_sets(spec, drive, cfg, horizon)?;
    let prepared = PreparedSets::new(spec, &scaler, &sets, cfg.beta)?;
    let probe = match reference {
        Some(r) => {
            if r.dim() != dim {
                return Err(Error::Argument("reference dimension differs from the physics".into()));
            }
            Some(MetricsProbe::new(r, drive, &scaler, 41, 49)?)
        }
        None => None,
    };
    let trainer = Trainer {
        cfg,
        prepared: &prepared,
        scaler: &scaler,
        dim,
        probe: probe.as_ref(),
    };
    let mut params = nn::init_xavier(cfg.net_spec(dim), cfg.seed)?;
    let mut report = TrainReport::default();
    let mut termination = None;
    let mut error = trainer.train_adam(&mut params, &mut report).err();
    if error.is_none() {
        if cfg.lbfgs_epochs > 0 {
            match trainer.train_lbfgs(&mut params, &mut report) {
                Ok(t) => termination = Some(t),
                Err(e) => error = Some(e),
            }
        } else {
            termination = Some(Termination::MaxIterations);
        }
    }
    Ok(TrainRun {
        pinn: Pinn::new(params, scaler, dim)?,
        report,
        termination,
        error,
    })
}

/// [`train_run`] with any optimization failure turned into an error.
pub fn train(
    spec: &PhysicsSpec,
    drive: &DriveSeries,
    cfg: &TrainConfig,
    horizon: f64,
    reference: Option<&FieldSeries>,
) -> Result<TrainOutcome> {
    let run = train_run(spec, drive, cfg, horizon, reference)?;
    if let Some(e) = run.error {
        return Err(e);
    }
    Ok(TrainOutcome {
        pinn: run.pinn,
        report: run.report,
        termination: run.termination.unwrap_or(Termination::MaxIterations),
    })
}

const CHECKPOINT_FORMAT: &str = "transtherm-pinn";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Checkpoint {
    format: String,
    version: u32,
    dim: usize,
    net: NetSpec,
    scaler: Scaler,
    params: Vec<f64>,
}

impl Pinn {
    /// Writes a JSON checkpoint via a temporary file and a rename.
    pub fn save(&self, path: &Path) -> Result<()> {
        let ck = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            dim: self.dim,
            net: *self.params.spec(),
            scaler: self.scaler.clone(),
            params: self.params.as_slice().to_vec(),
        };
        crate::io::write_atomic(path, |w| Ok(serde_json::to_writer(w, &ck)?))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let ck: Checkpoint = serde_json::from_str(&text)?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Format(format!("not a checkpoint: format {:?}", ck.format)));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                ck.version
            )));
        }
        let params = NetworkParams::from_flat(ck.net, ck.params)?;
        Self::new(params, ck.scaler, ck.dim)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn drive() -> DriveSeries {
        physics::synth_drive(3, 30).unwrap()
    }

    fn spec1() -> PhysicsSpec {
        PhysicsSpec::transformer(1).unwrap()
    }

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            hidden_layers: 2,
            hidden_width: 6,
            n_u: 12,
            n_f: 20,
            adam_epochs: 5,
            adam_lr: 1e-3,
            lbfgs_epochs: 5,
            eval_every: 2,
            ..TrainConfig::desk(1)
        }
    }

    /// `u = a x + b t + c` in physical units.
    struct Linear {
        a: f64,
        b: f64,
        c: f64,
    }

    impl FieldModel for Linear {
        fn dim(&self) -> usize {
            1
        }
        fn value(&self, x: &[f64], t: f64, _: &DriveSample) -> Result<f64> {
            Ok(self.a * x[0] + self.b * t + self.c)
        }
    }

    impl JetModel for Linear {
        fn jet(&self, x: &[f64], t: f64, d: &DriveSample) -> Result<Jet> {
            Ok(Jet {
                u: self.value(x, t, d)?,
                du_dt: self.b,
                grad_x: vec![self.a],
                lap_x: 0.0,
            })
        }
    }

    /// Exact solution of the 1D equation for a constant drive: steady part
    /// plus a decaying spatially constant transient.
    struct ConstantDriveExact {
        spec: PhysicsSpec,
        drive: DriveSample,
    }

    impl ConstantDriveExact {
        fn parts(&self) -> (f64, f64, f64, f64) {
            let s = &self.spec;
            let pk = s.nu * self.drive.kf * self.drive.kf;
            let a = self.drive.ta + (s.p0 + 0.5 * pk) / s.h;
            let w = 3.0 * std::f64::consts::PI;
            let b = 0.5 * pk / (s.k * w * w + s.h);
            let lambda = s.h / s.capacity_per_hour();
            (a, b, w, lambda)
        }
    }

    impl FieldModel for ConstantDriveExact {
        fn dim(&self) -> usize {
            1
        }
        fn value(&self, x: &[f64], t: f64, _: &DriveSample) -> Result<f64> {
            let (a, b, w, l) = self.parts();
            Ok(a + b * (w * x[0]).sin() + 7.0 * (-l * t).exp())
        }
    }

    impl JetModel for ConstantDriveExact {
        fn jet(&self, x: &[f64], t: f64, d: &DriveSample) -> Result<Jet> {
            let (_, b, w, l) = self.parts();
            Ok(Jet {
                u: self.value(x, t, d)?,
                du_dt: -7.0 * l * (-l * t).exp(),
                grad_x: vec![b * w * (w * x[0]).cos()],
                lap_x: -b * w * w * (w * x[0]).sin(),
            })
        }
    }

    /// Reference field wrapped as a model.
    struct Interpolated<'a> {
        field: &'a FieldSeries,
        factor: f64,
    }

    impl FieldModel for Interpolated<'_> {
        fn dim(&self) -> usize {
            self.field.dim()
        }
        fn value(&self, x: &[f64], t: f64, _: &DriveSample) -> Result<f64> {
            Ok(self.factor * solver::sample_series(self.field, x, t)?)
        }
    }

    fn small_pinn(seed: u64) -> (Pinn, TrainingSets) {
        let d = drive();
        let cfg = TrainConfig {
            n_u: 8,
            n_f: 8,
            ..tiny_cfg()
        };
        let scaler = fit_scaler(&d, 1, 24.0).unwrap();
        let sets = sample_training_sets(&spec1(), &d, &cfg, 24.0).unwrap();
        let params = nn::init_xavier(cfg.net_spec(1), seed).unwrap();
        (Pinn::new(params, scaler, 1).unwrap(), sets)
    }

    #[test]
    fn scaler_endpoints() {
        let s = Scaler::new(vec![2.0, -1.0], vec![4.0, 1.0], 10.0, 2.0).unwrap();
        assert_eq!(s.standardize(0, 2.0), -1.0);
        assert_eq!(s.standardize(0, 4.0), 1.0);
        assert_eq!(s.standardize(0, 3.0), 0.0);
        assert_eq!(s.normalize(14.0), 2.0);
        assert!(matches!(
            Scaler::new(vec![1.0], vec![1.0], 0.0, 1.0),
            Err(Error::Degenerate(_))
        ));
        assert!(Scaler::new(vec![0.0], vec![1.0], 0.0, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn scaler_round_trip(lo in -100.0..100.0f64, w in 0.01..50.0f64, v in -200.0..200.0f64) {
            let s = Scaler::new(vec![lo], vec![lo + w], 40.0, 9.0).unwrap();
            let back = s.destandardize(0, s.standardize(0, v));
            prop_assert!((back - v).abs() <= 1e-12 * v.abs().max(1.0) * (1.0 + (lo.abs() + w) / w));
            prop_assert!((s.denormalize(s.normalize(v)) - v).abs() <= 1e-12 * v.abs().max(1.0));
        }
    }

    #[test]
    fn scaler_fit_covers_inputs() {
        let d = drive();
        let s = fit_scaler(&d, 2, 24.0).unwrap();
        assert_eq!(s.n_inputs(), 6);
        assert_eq!(s.input_min[2], 0.0);
        assert_eq!(s.input_max[2], 24.0);
        assert!(s.output_std > 0.0);
        assert!(fit_scaler(&d, 1, 100.0).is_err());
    }

    #[test]
    fn training_sets_lie_on_their_domains() {
        let d = drive();
        for dim in [1, 2] {
            let spec = PhysicsSpec::transformer(dim).unwrap();
            let cfg = TrainConfig {
                n_u: 50,
                n_f: 300,
                ..TrainConfig::desk(dim)
            };
            let sets = sample_training_sets(&spec, &d, &cfg, 24.0).unwrap();
            assert_eq!(sets.boundary.len(), 50);
            assert_eq!(sets.collocation.len(), 300);
            for p in &sets.boundary {
                assert!(p.x.iter().any(|&c| c == 0.0 || c == 1.0));
                let expect = physics::boundary_value(&spec, &p.x, &p.drive).unwrap();
                assert_eq!(p.target, expect);
                assert!((0.0..=24.0).contains(&p.t));
            }
            for p in &sets.collocation {
                assert!(p.x.iter().all(|c| (0.0..=1.0).contains(c)));
                assert!((0.0..=24.0).contains(&p.t));
                assert_eq!(p.drive, physics::drive_at(&d, p.t).unwrap());
            }
            let again = sample_training_sets(&spec, &d, &cfg, 24.0).unwrap();
            assert_eq!(sets, again);
        }
    }

    #[test]
    fn collocation_density_is_uniform() {
        let d = drive();
        let cfg = TrainConfig {
            n_f: 5000,
            ..TrainConfig::desk(1)
        };
        let sets = sample_training_sets(&spec1(), &d, &cfg, 24.0).unwrap();
        let chi2 = |vals: Vec<f64>| {
            let mut bins = [0usize; 10];
            for v in vals {
                bins[((v * 10.0) as usize).min(9)] += 1;
            }
            let e = 500.0;
            bins.iter().map(|&o| (o as f64 - e).powi(2) / e).sum::<f64>()
        };
        // 9 degrees of freedom, 99.9% quantile
        let crit = 27.88;
        assert!(chi2(sets.collocation.iter().map(|p| p.x[0]).collect()) < crit);
        assert!(chi2(sets.collocation.iter().map(|p| p.t / 24.0).collect()) < crit);
    }

    #[test]
    fn initial_points_follow_steady_state() {
        let d = drive();
        let cfg = TrainConfig {
            n_u: 10,
            n_initial: 5,
            ..TrainConfig::desk(1)
        };
        let sets = sample_training_sets(&spec1(), &d, &cfg, 24.0).unwrap();
        assert_eq!(sets.boundary.len(), 15);
        let init = &sets.boundary[10..];
        assert!(init.iter().all(|p| p.t == 0.0));
        // the steady interior is hotter than the ambient end
        assert!(init.iter().all(|p| p.target > p.drive.ta));
    }

    #[test]
    fn residual_of_linear_model() {
        let spec = spec1();
        let m = Linear {
            a: 3.0,
            b: -2.0,
            c: 40.0,
        };
        let d = drive();
        for (x, t) in [(0.1, 1.0), (0.5, 7.5), (0.93, 20.0)] {
            let drive = physics::drive_at(&d, t).unwrap();
            let point = CollocationPoint {
                x: vec![x],
                t,
                drive,
            };
            let u = 3.0 * x - 2.0 * t + 40.0;
            let pk = spec.nu * drive.kf * drive.kf
                * (0.5 * (3.0 * std::f64::consts::PI * x).sin() + 0.5);
            let q = spec.p0 + pk - spec.h * (u - drive.ta);
            let expect = (spec.rho * spec.cp / 3600.0 * -2.0 - q) / 1000.0;
            let got = residual(&m, &spec, 1000.0, &point).unwrap();
            assert_relative_eq!(got, expect, max_relative = 1e-12);
            let halved = residual(&m, &spec, 2000.0, &point).unwrap();
            assert_relative_eq!(halved, got / 2.0, max_relative = 1e-14);
        }
    }

    #[test]
    fn residual_vanishes_on_exact_solution() {
        let spec = spec1();
        let drive = DriveSample::new(8.0, 45.0, 0.8);
        let m = ConstantDriveExact { spec, drive };
        for (x, t) in [(0.0, 0.0), (0.2, 0.3), (0.77, 2.0), (0.5, 10.0)] {
            let p = CollocationPoint {
                x: vec![x],
                t,
                drive,
            };
            assert!(residual(&m, &spec, 1000.0, &p).unwrap().abs() < 1e-8);
        }
    }

    #[test]
    fn zero_network_residual_is_hand_computable() {
        let d = drive();
        let spec = spec1();
        let scaler = fit_scaler(&d, 1, 24.0).unwrap();
        let params = NetworkParams::zeros(NetSpec::for_dim(1, 2, 4)).unwrap();
        let pinn = Pinn::new(params.clone(), scaler.clone(), 1).unwrap();
        let drive = physics::drive_at(&d, 5.0).unwrap();
        let x = 0.3;
        let p = CollocationPoint {
            x: vec![x],
            t: 5.0,
            drive,
        };
        let mean = scaler.output_mean;
        let pk = spec.nu * drive.kf * drive.kf * (0.5 * (0.9 * std::f64::consts::PI).sin() + 0.5);
        let expect = -(spec.p0 + pk - spec.h * (mean - drive.ta)) / 1000.0;
        assert_relative_eq!(residual(&pinn, &spec, 1000.0, &p).unwrap(), expect, max_relative = 1e-12);

        // the batched residual agrees: one collocation point gives mse_f = f^2
        let sets = TrainingSets {
            dim: 1,
            horizon: 24.0,
            boundary: vec![BoundaryPoint {
                x: vec![0.0],
                t: 5.0,
                drive,
                target: mean,
            }],
            collocation: vec![p],
        };
        let prep = PreparedSets::new(&spec, &scaler, &sets, 1000.0).unwrap();
        let parts = total_loss(&params, &prep, &tiny_cfg()).unwrap();
        assert_eq!(parts.mse_u, 0.0);
        assert_relative_eq!(parts.mse_f, expect * expect, max_relative = 1e-12);
    }

    #[test]
    fn batched_residual_matches_model_jets() {
        let (pinn, sets) = small_pinn(11);
        let spec = spec1();
        let prep = PreparedSets::new(&spec, &pinn.scaler, &sets, 1000.0).unwrap();
        let n = sets.collocation.len() as f64;
        let by_model: f64 = sets
            .collocation
            .iter()
            .map(|p| residual(&pinn, &spec, 1000.0, p).unwrap().powi(2) / n)
            .sum();
        let parts = total_loss(&pinn.params, &prep, &tiny_cfg()).unwrap();
        assert_relative_eq!(parts.mse_f, by_model, max_relative = 1e-10);
    }

    #[test]
    fn boundary_misfits_average() {
        let d = drive();
        let spec = spec1();
        let scaler = fit_scaler(&d, 1, 24.0).unwrap();
        let drive = physics::drive_at(&d, 0.0).unwrap();
        let (m, s) = (scaler.output_mean, scaler.output_std);
        let bp = |target| BoundaryPoint {
            x: vec![1.0],
            t: 0.0,
            drive,
            target,
        };
        let sets = TrainingSets {
            dim: 1,
            horizon: 24.0,
            boundary: vec![bp(m + s), bp(m - 3.0 * s)],
            collocation: vec![CollocationPoint {
                x: vec![0.5],
                t: 1.0,
                drive,
            }],
        };
        let prep = PreparedSets::new(&spec, &scaler, &sets, 1000.0).unwrap();
        let params = NetworkParams::zeros(NetSpec::for_dim(1, 1, 3)).unwrap();
        let cfg = TrainConfig {
            lambda_f: 0.0,
            ..tiny_cfg()
        };
        let parts = total_loss(&params, &prep, &cfg).unwrap();
        assert_relative_eq!(parts.mse_u, 5.0, max_relative = 1e-12);
        assert_eq!(parts.mse, parts.mse_u);
    }

    #[test]
    fn loss_weights_and_permutations() {
        let (pinn, sets) = small_pinn(5);
        let spec = spec1();
        let prep = PreparedSets::new(&spec, &pinn.scaler, &sets, 1000.0).unwrap();
        let cfg = tiny_cfg();
        let base = total_loss(&pinn.params, &prep, &cfg).unwrap();
        let scaled = TrainConfig {
            lambda_f: 3.0 * cfg.lambda_f,
            ..cfg.clone()
        };
        let s = total_loss(&pinn.params, &prep, &scaled).unwrap();
        assert_relative_eq!(
            s.mse - cfg.lambda_u * s.mse_u,
            3.0 * (base.mse - cfg.lambda_u * base.mse_u),
            max_relative = 1e-14
        );
        let no_u = TrainConfig {
            lambda_u: 0.0,
            ..cfg.clone()
        };
        let s = total_loss(&pinn.params, &prep, &no_u).unwrap();
        assert_eq!(s.mse, cfg.lambda_f * s.mse_f);

        let mut shuffled = sets.clone();
        shuffled.boundary.reverse();
        shuffled.collocation.rotate_left(3);
        let prep2 = PreparedSets::new(&spec, &pinn.scaler, &shuffled, 1000.0).unwrap();
        let p = total_loss(&pinn.params, &prep2, &cfg).unwrap();
        assert_relative_eq!(p.mse, base.mse, max_relative = 1e-12);
    }

    #[test]
    fn full_loss_gradient_matches_finite_differences() {
        let (pinn, sets) = small_pinn(21);
        let spec = spec1();
        let prep = PreparedSets::new(&spec, &pinn.scaler, &sets, 1000.0).unwrap();
        assert_eq!(prep.n_boundary() + prep.n_collocation(), 16);
        let cfg = tiny_cfg();
        let (_, grad) = loss_and_gradient(&pinn.params, &prep, &cfg).unwrap();
        let scale = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        for i in 0..grad.len() {
            let h = 1e-5 * pinn.params.as_slice()[i].abs().max(1.0);
            let mut p = pinn.params.clone();
            p.as_mut_slice()[i] += h;
            let fp = total_loss(&p, &prep, &cfg).unwrap().mse;
            p.as_mut_slice()[i] -= 2.0 * h;
            let fm = total_loss(&p, &prep, &cfg).unwrap().mse;
            let fd = (fp - fm) / (2.0 * h);
            let err = (fd - grad[i]).abs() / grad[i].abs().max(1e-3 * scale);
            assert!(err < 1e-5, "param {i}: analytic {} vs fd {fd}", grad[i]);
        }
    }

    #[test]
    fn adam_without_loss_keeps_parameters() {
        let (pinn, sets) = small_pinn(2);
        let cfg = TrainConfig {
            lambda_u: 0.0,
            lambda_f: 0.0,
            ..tiny_cfg()
        };
        let prep = PreparedSets::new(&spec1(), &pinn.scaler, &sets, 1000.0).unwrap();
        let trainer = Trainer {
            cfg: &cfg,
            prepared: &prep,
            scaler: &pinn.scaler,
            dim: 1,
            probe: None,
        };
        let mut params = pinn.params.clone();
        let mut report = TrainReport::default();
        trainer.train_adam(&mut params, &mut report).unwrap();
        assert_eq!(params, pinn.params);
        assert_eq!(report.records.len(), cfg.adam_epochs);
    }

    #[test]
    fn diverging_adam_restores_finite_parameters() {
        let (pinn, sets) = small_pinn(2);
        let cfg = TrainConfig {
            adam_lr: 1e200,
            adam_epochs: 50,
            ..tiny_cfg()
        };
        let prep = PreparedSets::new(&spec1(), &pinn.scaler, &sets, 1000.0).unwrap();
        let trainer = Trainer {
            cfg: &cfg,
            prepared: &prep,
            scaler: &pinn.scaler,
            dim: 1,
            probe: None,
        };
        let mut params = pinn.params.clone();
        let mut report = TrainReport::default();
        let err = trainer.train_adam(&mut params, &mut report).unwrap_err();
        assert!(matches!(err, Error::Numeric { .. }));
        assert!(total_loss(&params, &prep, &cfg).unwrap().mse.is_finite());
    }

    #[test]
    fn lbfgs_stage_decreases_monotonically() {
        let (pinn, sets) = small_pinn(8);
        let cfg = TrainConfig {
            lbfgs_epochs: 30,
            lbfgs_tolerance: 0.0,
            ..tiny_cfg()
        };
        let prep = PreparedSets::new(&spec1(), &pinn.scaler, &sets, 1000.0).unwrap();
        let trainer = Trainer {
            cfg: &cfg,
            prepared: &prep,
            scaler: &pinn.scaler,
            dim: 1,
            probe: None,
        };
        let mut params = pinn.params.clone();
        let mut report = TrainReport::default();
        trainer.train_lbfgs(&mut params, &mut report).unwrap();
        assert!(!report.records.is_empty());
        let start = total_loss(&pinn.params, &prep, &cfg).unwrap().mse;
        let mut prev = start;
        for r in &report.records {
            assert_eq!(r.stage, Stage::Lbfgs);
            assert!(r.loss.mse < prev);
            assert!(r.loss.mse_u.is_finite() && r.loss.mse_f.is_finite());
            prev = r.loss.mse;
        }
        let end = total_loss(&params, &prep, &cfg).unwrap().mse;
        assert_eq!(end, prev);
    }

    #[test]
    fn training_is_deterministic() {
        let d = drive();
        let spec = spec1();
        let grid = solver::GridSpec::new(21, 48, 24.0);
        let reference = solver::solve_1d(&spec, &d, &grid).unwrap();
        let cfg = tiny_cfg();
        let a = train(&spec, &d, &cfg, 24.0, Some(&reference)).unwrap();
        let b = train(&spec, &d, &cfg, 24.0, Some(&reference)).unwrap();
        assert_eq!(a.pinn, b.pinn);
        assert_eq!(a.report.records, b.report.records);
        assert!(a.report.records.len() <= cfg.adam_epochs + cfg.lbfgs_epochs);
        let last = a.report.records.last().unwrap();
        assert!(last.rel_l2_field.is_some() && last.rel_l2_top.is_some());

        let mut buf = Vec::new();
        a.report.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("epoch,mse,mse_u,mse_f,rel_l2_field,rel_l2_top\n"));
        assert_eq!(text.lines().count(), a.report.records.len() + 1);
    }

    #[test]
    fn metrics_of_reference_and_its_double() {
        let d = drive();
        for dim in [1, 2] {
            let spec = PhysicsSpec::transformer(dim).unwrap();
            let grid = solver::GridSpec::new(9, 12, 6.0);
            let reference = if dim == 1 {
                solver::solve_1d(&spec, &d, &grid).unwrap()
            } else {
                solver::solve_2d(&spec, &d, &grid).unwrap()
            };
            let same = Interpolated {
                field: &reference,
                factor: 1.0,
            };
            let (f, t) = eval_metrics(&same, &d, &reference).unwrap();
            assert!(f < 1e-14 && t < 1e-14);
            let double = Interpolated {
                field: &reference,
                factor: 2.0,
            };
            let (f, t) = eval_metrics(&double, &d, &reference).unwrap();
            assert_relative_eq!(f, 1.0, max_relative = 1e-12);
            assert_relative_eq!(t, 1.0, max_relative = 1e-12);
        }
        let spec2 = PhysicsSpec::transformer(2).unwrap();
        let r2 = solver::solve_2d(&spec2, &d, &solver::GridSpec::new(5, 2, 1.0)).unwrap();
        let (pinn, _) = small_pinn(1);
        assert!(matches!(eval_metrics(&pinn, &d, &r2), Err(Error::Argument(_))));
    }

    #[test]
    fn probe_agrees_with_full_metrics_when_not_thinned() {
        let d = drive();
        let spec = spec1();
        let reference = solver::solve_1d(&spec, &d, &solver::GridSpec::new(11, 24, 12.0)).unwrap();
        let (pinn, _) = small_pinn(4);
        let probe = MetricsProbe::new(&reference, &d, &pinn.scaler, 100, 100).unwrap();
        assert_eq!(probe.len(), 11 * 25);
        let (a, b) = probe.eval(&pinn).unwrap();
        let (c, e) = eval_metrics(&pinn, &d, &reference).unwrap();
        assert_relative_eq!(a, c, max_relative = 1e-12);
        assert_relative_eq!(b, e, max_relative = 1e-12);
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.json");
        let (pinn, _) = small_pinn(9);
        pinn.save(&path).unwrap();
        let back = Pinn::load(&path).unwrap();
        assert_eq!(back, pinn);

        let text = fs::read_to_string(&path).unwrap();
        let bumped = text.replace("\"version\":1", "\"version\":99");
        fs::write(&path, bumped).unwrap();
        assert!(matches!(Pinn::load(&path), Err(Error::Format(_))));
    }

    #[test]
    fn thinning_keeps_ends() {
        assert_eq!(thin_axis(5, 10), vec![0, 1, 2, 3, 4]);
        let v = thin_axis(101, 5);
        assert_eq!(v, vec![0, 25, 50, 75, 100]);
    }
}
