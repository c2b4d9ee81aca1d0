//! Sensor placement at stable points of the temperature field.
//!
//! Candidates form a uniform grid kept strictly farther than a margin from the
//! boundary. Each candidate is scored by the time average of `div u` (and of
//! its magnitude) over a set of times, and three 0-1 models choose sensors:
//!
//! * Model 1: minimize the summed `|div u|` score with `n_min <= sum s <= n_max`.
//! * Model 2: Model 1 plus `s_i + s_j <= 1` whenever `|x_i - x_j| < d`.
//! * Model 3: Model 2 plus overlap costs, `sum_i s_i (a_i + sum_j s_j c_ij)`.
//!
//! Model 3 is stated with big-M linking variables `L_i = s_i c_i`; for binary
//! `s` that is the quadratic form above, which is what the solvers minimize.
//!
//! Ties between equal objectives go to the selection with fewer sensors, then
//! to the lexicographically smallest sorted index list.

use std::cmp::Ordering;
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::physics::{self, DriveSeries};
use crate::pinn::JetModel;
use crate::solver::{self, FieldSeries};

/// Grid points are pushed this far past the margin so that the distance to
/// the boundary is strictly larger than `margin`.
const MARGIN_EPS: f64 = 1e-12;

/// Candidate count up to which [`exhaustive_solve`] enumerates.
pub const EXHAUSTIVE_LIMIT: usize = 22;

/// Candidate sensor sites.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacementGrid {
    pub dim: usize,
    pub nx: usize,
    pub ny: usize,
    pub margin: f64,
    /// Coordinates `[x, y]`, with `y = 0` in 1D; x varies fastest.
    pub points: Vec<[f64; 2]>,
}

impl PlacementGrid {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Point `i` as a slice of `dim` coordinates.
    pub fn coords(&self, i: usize) -> &[f64] {
        &self.points[i][..self.dim]
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        distance(&self.points[i], &self.points[j])
    }

    /// Smallest distance between two distinct candidates (infinite for one).
    pub fn spacing(&self) -> f64 {
        let mut s = f64::INFINITY;
        for i in 0..self.len() {
            for j in i + 1..self.len() {
                s = s.min(self.distance(i, j));
            }
        }
        s
    }
}

fn distance(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn axis(n: usize, margin: f64) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::Argument("grid needs at least one point per axis".into()));
    }
    if n == 1 {
        return Ok(vec![0.5]);
    }
    let lo = margin + MARGIN_EPS;
    let hi = 1.0 - margin - MARGIN_EPS;
    if !(hi > lo) {
        return Err(Error::Argument(format!(
            "margin {margin} leaves no room for {n} points per axis"
        )));
    }
    let step = (hi - lo) / (n - 1) as f64;
    Ok((0..n)
        .map(|i| if i == n - 1 { hi } else { lo + step * i as f64 })
        .collect())
}

/// Uniform grid over `[margin, 1 - margin]^dim`, shifted strictly inside.
/// `ny` is ignored in 1D.
pub fn build_grid(dim: usize, nx: usize, ny: usize, margin: f64) -> Result<PlacementGrid> {
    if dim != 1 && dim != 2 {
        return Err(Error::Argument(format!("dim must be 1 or 2, got {dim}")));
    }
    if !(margin >= 0.0 && margin < 0.5) {
        return Err(Error::Argument(format!("margin must be in [0, 0.5), got {margin}")));
    }
    let xs = axis(nx, margin)?;
    let (ny, ys) = if dim == 1 {
        (1, vec![0.0])
    } else {
        (ny, axis(ny, margin)?)
    };
    let mut points = Vec::with_capacity(nx * ny);
    for &y in &ys {
        for &x in &xs {
            points.push([x, y]);
        }
    }
    Ok(PlacementGrid {
        dim,
        nx,
        ny,
        margin,
        points,
    })
}

/// Time-averaged divergence scores per candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreField {
    pub abs_score: Vec<f64>,
    pub signed_score: Vec<f64>,
    pub times: Vec<f64>,
}

impl ScoreField {
    /// Scores given directly; `signed_score` defaults to `abs_score`.
    pub fn from_abs(abs_score: Vec<f64>) -> Result<Self> {
        if abs_score.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Argument("scores must be finite and >= 0".into()));
        }
        Ok(Self {
            signed_score: abs_score.clone(),
            abs_score,
            times: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.abs_score.len()
    }

    pub fn is_empty(&self) -> bool {
        self.abs_score.is_empty()
    }
}

/// Where the field gradients come from.
pub enum ScoreSource<'a> {
    /// Central differences on a reference field.
    Field(&'a FieldSeries),
    /// Exact input derivatives of a model driven by `drive`.
    Model {
        model: &'a dyn JetModel,
        drive: &'a DriveSeries,
    },
}

/// Whole hours `0, 1, ..., floor(horizon)`.
pub fn hourly_times(horizon: f64) -> Vec<f64> {
    (0..=horizon.floor().max(0.0) as usize).map(|h| h as f64).collect()
}

/// Averages `div u = du/dx (+ du/dy)` and its magnitude over `times` at every
/// candidate.
pub fn score_field(source: &ScoreSource<'_>, grid: &PlacementGrid, times: &[f64]) -> Result<ScoreField> {
    if times.is_empty() {
        return Err(Error::Argument("score times must not be empty".into()));
    }
    let n = grid.len();
    let mut abs = vec![0.0; n];
    let mut signed = vec![0.0; n];
    match source {
        ScoreSource::Field(f) => {
            if f.dim() != grid.dim {
                return Err(Error::Argument("field and grid dimensions differ".into()));
            }
            for &t in times {
                let lvl = level_at(f, t)?;
                let div = nodal_divergence(f, &lvl);
                for i in 0..n {
                    let v = solver::interp_space(f, &div, grid.coords(i));
                    abs[i] += v.abs();
                    signed[i] += v;
                }
            }
        }
        ScoreSource::Model { model, drive } => {
            if model.dim() != grid.dim {
                return Err(Error::Argument("model and grid dimensions differ".into()));
            }
            for &t in times {
                let d = physics::drive_at(drive, t)?;
                for i in 0..n {
                    let jet = model.jet(grid.coords(i), t, &d)?;
                    let v: f64 = jet.grad_x.iter().sum();
                    abs[i] += v.abs();
                    signed[i] += v;
                }
            }
        }
    }
    let m = times.len() as f64;
    abs.iter_mut().for_each(|v| *v /= m);
    signed.iter_mut().for_each(|v| *v /= m);
    Ok(ScoreField {
        abs_score: abs,
        signed_score: signed,
        times: times.to_vec(),
    })
}

/// Field values at time `t`, linear in time between stored levels.
fn level_at(f: &FieldSeries, t: f64) -> Result<Vec<f64>> {
    let ts = f.times();
    let (first, last) = (ts[0], ts[ts.len() - 1]);
    let tol = 1e-9 * last.abs().max(1.0);
    if !(t >= first - tol && t <= last + tol) {
        return Err(Error::Range(format!("t = {t} outside field range [{first}, {last}]")));
    }
    let k = ts.partition_point(|&s| s <= t);
    if k == 0 {
        return Ok(f.level(0).to_vec());
    }
    if k == ts.len() || ts[k - 1] == t {
        return Ok(f.level(k - 1).to_vec());
    }
    let w = (t - ts[k - 1]) / (ts[k] - ts[k - 1]);
    Ok(f.level(k - 1)
        .iter()
        .zip(f.level(k))
        .map(|(a, b)| (1.0 - w) * a + w * b)
        .collect())
}

/// Second-order difference of `u` along a strided line of `n` nodes.
fn line_derivative(u: &[f64], start: usize, stride: usize, n: usize, h: f64, out: &mut [f64]) {
    let at = |k: usize| u[start + k * stride];
    for k in 0..n {
        let d = if k == 0 {
            (-3.0 * at(0) + 4.0 * at(1) - at(2)) / (2.0 * h)
        } else if k == n - 1 {
            (3.0 * at(n - 1) - 4.0 * at(n - 2) + at(n - 3)) / (2.0 * h)
        } else {
            (at(k + 1) - at(k - 1)) / (2.0 * h)
        };
        out[start + k * stride] += d;
    }
}

fn nodal_divergence(f: &FieldSeries, lvl: &[f64]) -> Vec<f64> {
    let nx = f.nx();
    let h = f.grid().dx();
    let mut div = vec![0.0; lvl.len()];
    if f.dim() == 1 {
        line_derivative(lvl, 0, 1, nx, h, &mut div);
    } else {
        for j in 0..nx {
            line_derivative(lvl, j * nx, 1, nx, h, &mut div);
        }
        for i in 0..nx {
            line_derivative(lvl, i, nx, nx, h, &mut div);
        }
    }
    div
}

fn default_big_m() -> f64 {
    1000.0
}

/// Bounds and distances of a placement problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlacementConfig {
    pub n_min: usize,
    pub n_max: usize,
    /// Minimum distance between two sensors.
    pub d: f64,
    /// Overlap radius of Model 3.
    pub d1: f64,
    #[serde(default = "default_big_m")]
    pub big_m: f64,
    /// Use the signed score without clamping in the overlap costs.
    #[serde(default)]
    pub signed_costs: bool,
}

impl PlacementConfig {
    pub fn new(n_min: usize, n_max: usize, d: f64, d1: f64) -> Self {
        Self {
            n_min,
            n_max,
            d,
            d1,
            big_m: default_big_m(),
            signed_costs: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_min < 1 || self.n_min > self.n_max {
            return Err(Error::Argument(format!(
                "need 1 <= n_min <= n_max, got {} and {}",
                self.n_min, self.n_max
            )));
        }
        if !(self.d >= 0.0 && self.d1 >= self.d && self.d1.is_finite()) {
            return Err(Error::Argument(format!(
                "need 0 <= d <= d1, got d = {} and d1 = {}",
                self.d, self.d1
            )));
        }
        if !(self.big_m > 0.0) {
            return Err(Error::Argument("big_m must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Model {
    One,
    Two,
    Three,
}

impl From<Model> for u8 {
    fn from(m: Model) -> u8 {
        match m {
            Model::One => 1,
            Model::Two => 2,
            Model::Three => 3,
        }
    }
}

impl TryFrom<u8> for Model {
    type Error = Error;
    fn try_from(v: u8) -> Result<Self> {
        match v {
            1 => Ok(Model::One),
            2 => Ok(Model::Two),
            3 => Ok(Model::Three),
            _ => Err(Error::Argument(format!("model must be 1, 2 or 3, got {v}"))),
        }
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", u8::from(*self))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverKind {
    Analytic,
    Exhaustive,
    BranchAndBound,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacementSolution {
    pub s: Vec<bool>,
    pub objective: f64,
    pub model: Model,
    pub solver: SolverKind,
    /// Search nodes (B&B) or subsets examined (exhaustive).
    pub nodes: u64,
    /// Model 3 only: whether `big_m` bounds every `|c_i|`, so that the big-M
    /// linearization is exact for this instance.
    pub big_m_sufficient: Option<bool>,
}

impl PlacementSolution {
    pub fn selected(&self) -> Vec<usize> {
        self.s.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect()
    }

    pub fn count(&self) -> usize {
        self.s.iter().filter(|&&b| b).count()
    }
}

/// Overlap costs `c_ij` (row-major, `n x n`, zero diagonal).
///
/// Clamped: `abs_i * max(0, d1 - |x_i - x_j|)`. Signed: `signed_i * (d1 - |x_i - x_j|)`.
pub fn overlap_cost(grid: &PlacementGrid, scores: &ScoreField, d1: f64, signed: bool) -> Vec<f64> {
    let n = grid.len();
    let mut c = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let gap = d1 - grid.distance(i, j);
            c[i * n + j] = if signed {
                scores.signed_score[i] * gap
            } else {
                scores.abs_score[i] * gap.max(0.0)
            };
        }
    }
    c
}

/// A placement instance with precomputed conflicts and costs.
struct Instance<'a> {
    n: usize,
    abs: &'a [f64],
    n_min: usize,
    n_max: usize,
    /// `conflict[i * n + j]`: candidates closer than `d`.
    conflict: Vec<bool>,
    cost: Option<Vec<f64>>,
}

impl<'a> Instance<'a> {
    fn new(
        model: Model,
        scores: &'a ScoreField,
        grid: &PlacementGrid,
        cfg: &PlacementConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let n = grid.len();
        if scores.len() != n {
            return Err(Error::Argument(format!(
                "{} scores for {n} candidates",
                scores.len()
            )));
        }
        if scores.abs_score.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Argument("abs scores must be finite and >= 0".into()));
        }
        let mut conflict = vec![false; n * n];
        if model != Model::One {
            for i in 0..n {
                for j in 0..n {
                    conflict[i * n + j] = i != j && grid.distance(i, j) < cfg.d;
                }
            }
        }
        let cost = (model == Model::Three).then(|| overlap_cost(grid, scores, cfg.d1, cfg.signed_costs));
        Ok(Self {
            n,
            abs: &scores.abs_score,
            n_min: cfg.n_min,
            n_max: cfg.n_max.min(n),
            conflict,
            cost,
        })
    }

    /// The model objective of a selection given in increasing index order.
    fn objective(&self, sel: &[usize]) -> f64 {
        let mut total = 0.0;
        for &i in sel {
            let mut term = self.abs[i];
            if let Some(c) = &self.cost {
                for &j in sel {
                    term += c[i * self.n + j];
                }
            }
            total += term;
        }
        total
    }

    fn big_m_sufficient(&self, big_m: f64) -> Option<bool> {
        let c = self.cost.as_ref()?;
        let n = self.n;
        Some((0..n).all(|i| c[i * n..(i + 1) * n].iter().map(|v| v.abs()).sum::<f64>() <= big_m))
    }

    fn infeasible(&self, d: f64) -> Error {
        Error::Infeasible {
            n_min: self.n_min,
            independence_bound: max_independent(self.n, &self.conflict, self.n_min),
            d,
        }
    }

    fn finish(
        &self,
        model: Model,
        solver: SolverKind,
        best: Option<(f64, Vec<usize>)>,
        nodes: u64,
        cfg: &PlacementConfig,
    ) -> Result<PlacementSolution> {
        let (objective, sel) = best.ok_or_else(|| self.infeasible(cfg.d))?;
        let mut s = vec![false; self.n];
        sel.iter().for_each(|&i| s[i] = true);
        Ok(PlacementSolution {
            s,
            objective,
            model,
            solver,
            nodes,
            big_m_sufficient: self.big_m_sufficient(cfg.big_m),
        })
    }
}

/// Tie-break order on (objective, selection): lower objective, then fewer
/// sensors, then the lexicographically smaller index list.
fn better(obj: f64, sel: &[usize], best: &Option<(f64, Vec<usize>)>) -> bool {
    match best {
        None => true,
        Some((b, bs)) => match obj.partial_cmp(b) {
            Some(Ordering::Less) => true,
            Some(Ordering::Equal) => (sel.len(), sel) < (bs.len(), bs.as_slice()),
            _ => false,
        },
    }
}

/// Size of a maximum set of mutually non-conflicting candidates, capped at `cap`.
fn max_independent(n: usize, conflict: &[bool], cap: usize) -> usize {
    fn go(n: usize, conflict: &[bool], cap: usize, i: usize, blocked: &mut [u32], count: usize, best: &mut usize) {
        *best = (*best).max(count);
        if *best >= cap {
            return;
        }
        let free = (i..n).filter(|&j| blocked[j] == 0).count();
        if count + free <= *best {
            return;
        }
        for j in i..n {
            if blocked[j] > 0 {
                continue;
            }
            for k in 0..n {
                blocked[k] += conflict[j * n + k] as u32;
            }
            go(n, conflict, cap, j + 1, blocked, count + 1, best);
            for k in 0..n {
                blocked[k] -= conflict[j * n + k] as u32;
            }
            if *best >= cap {
                return;
            }
        }
    }
    let mut best = 0;
    go(n, conflict, cap, 0, &mut vec![0; n], 0, &mut best);
    best
}

/// Model 1 in closed form: the `n_min` smallest scores, lowest index first
/// among equal scores.
pub fn solve_model1(scores: &ScoreField, cfg: &PlacementConfig) -> Result<PlacementSolution> {
    cfg.validate()?;
    let n = scores.len();
    if cfg.n_min > n {
        return Err(Error::Infeasible {
            n_min: cfg.n_min,
            independence_bound: n,
            d: cfg.d,
        });
    }
    if scores.abs_score.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::Argument("abs scores must be finite and >= 0".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores.abs_score[a].total_cmp(&scores.abs_score[b]).then(a.cmp(&b)));
    let mut sel = order[..cfg.n_min].to_vec();
    sel.sort_unstable();
    let mut s = vec![false; n];
    sel.iter().for_each(|&i| s[i] = true);
    Ok(PlacementSolution {
        s,
        objective: sel.iter().map(|&i| scores.abs_score[i]).sum(),
        model: Model::One,
        solver: SolverKind::Analytic,
        nodes: 0,
        big_m_sufficient: None,
    })
}

pub fn solve_model2(scores: &ScoreField, grid: &PlacementGrid, cfg: &PlacementConfig) -> Result<PlacementSolution> {
    bnb_solve(Model::Two, scores, grid, cfg)
}

pub fn solve_model3(scores: &ScoreField, grid: &PlacementGrid, cfg: &PlacementConfig) -> Result<PlacementSolution> {
    bnb_solve(Model::Three, scores, grid, cfg)
}

/// Enumerates every subset of at most [`EXHAUSTIVE_LIMIT`] candidates.
pub fn exhaustive_solve(
    model: Model,
    scores: &ScoreField,
    grid: &PlacementGrid,
    cfg: &PlacementConfig,
) -> Result<PlacementSolution> {
    let inst = Instance::new(model, scores, grid, cfg)?;
    let n = inst.n;
    if n > EXHAUSTIVE_LIMIT {
        return Err(Error::Size(format!(
            "{n} candidates exceed the enumeration limit of {EXHAUSTIVE_LIMIT}"
        )));
    }
    let masks: Vec<u32> = (0..n)
        .map(|i| (0..n).filter(|&j| inst.conflict[i * n + j]).fold(0, |m, j| m | 1 << j))
        .collect();
    let mut best = None;
    let mut nodes = 0u64;
    let mut sel = Vec::with_capacity(n);
    for set in 1u32..(1u32 << n) {
        let count = set.count_ones() as usize;
        if count < inst.n_min || count > inst.n_max {
            continue;
        }
        nodes += 1;
        sel.clear();
        sel.extend((0..n).filter(|&i| set >> i & 1 == 1));
        if sel.iter().any(|&i| masks[i] & set != 0) {
            continue;
        }
        let obj = inst.objective(&sel);
        if better(obj, &sel, &best) {
            best = Some((obj, sel.clone()));
        }
    }
    inst.finish(model, SolverKind::Exhaustive, best, nodes, cfg)
}

struct Search<'i, 'a> {
    inst: &'i Instance<'a>,
    /// Candidates by increasing score.
    by_score: Vec<usize>,
    /// Lower bound on any ordered pair cost (0 for nonnegative costs).
    pair_floor: f64,
    selected: Vec<usize>,
    blocked: Vec<u32>,
    /// Cost of the current selection, accumulated incrementally.
    committed: f64,
    best: Option<(f64, Vec<usize>)>,
    nodes: u64,
}

impl Search<'_, '_> {
    fn visit(&mut self, next: usize) {
        self.nodes += 1;
        let inst = self.inst;
        let count = self.selected.len();
        if count >= inst.n_min {
            let obj = inst.objective(&self.selected);
            if better(obj, &self.selected, &self.best) {
                self.best = Some((obj, self.selected.clone()));
            }
        }
        if count == inst.n_max || next == inst.n {
            return;
        }
        if self.pruned(next) {
            return;
        }
        for j in next..inst.n {
            if self.blocked[j] > 0 {
                continue;
            }
            let added = self.add(j);
            self.visit(j + 1);
            self.remove(j, added);
        }
    }

    /// Whether no extension of the current selection by candidates `>= next`
    /// can match the incumbent.
    fn pruned(&self, next: usize) -> bool {
        let inst = self.inst;
        let count = self.selected.len();
        let k_lo = inst.n_min.saturating_sub(count).max(1);
        let k_hi = inst.n_max - count;
        let mut prefix = 0.0;
        let mut k = 0;
        let mut lb = f64::INFINITY;
        for &j in &self.by_score {
            if k == k_hi {
                break;
            }
            if j < next || self.blocked[j] > 0 {
                continue;
            }
            prefix += inst.abs[j];
            k += 1;
            if k >= k_lo {
                let m = count + k;
                let new_pairs = (m * (m - 1) - count * count.saturating_sub(1)) as f64;
                lb = lb.min(prefix + self.pair_floor * new_pairs);
            }
        }
        if k < k_lo {
            return true;
        }
        match &self.best {
            None => false,
            Some((b, _)) => self.committed + lb > b + 1e-9 * b.abs().max(1.0),
        }
    }

    fn add(&mut self, j: usize) -> f64 {
        let inst = self.inst;
        let n = inst.n;
        let mut added = inst.abs[j];
        if let Some(c) = &inst.cost {
            for &i in &self.selected {
                added += c[i * n + j] + c[j * n + i];
            }
        }
        for k in 0..n {
            self.blocked[k] += inst.conflict[j * n + k] as u32;
        }
        self.selected.push(j);
        self.committed += added;
        added
    }

    fn remove(&mut self, j: usize, added: f64) {
        let n = self.inst.n;
        self.selected.pop();
        self.committed -= added;
        for k in 0..n {
            self.blocked[k] -= self.inst.conflict[j * n + k] as u32;
        }
    }
}

/// Depth-first branch and bound over selections in increasing index order.
///
/// The bound adds the cheapest admissible scores of the still-needed sensors
/// (and, for signed costs, the most negative pair cost for every new pair).
/// Leaves are compared with the same objective and tie-break as
/// [`exhaustive_solve`].
pub fn bnb_solve(
    model: Model,
    scores: &ScoreField,
    grid: &PlacementGrid,
    cfg: &PlacementConfig,
) -> Result<PlacementSolution> {
    let inst = Instance::new(model, scores, grid, cfg)?;
    if inst.n_min > inst.n {
        return Err(inst.infeasible(cfg.d));
    }
    let mut by_score: Vec<usize> = (0..inst.n).collect();
    by_score.sort_by(|&a, &b| inst.abs[a].total_cmp(&inst.abs[b]).then(a.cmp(&b)));
    let pair_floor = inst
        .cost
        .as_ref()
        .map(|c| c.iter().fold(0.0f64, |m, v| m.min(*v)))
        .unwrap_or(0.0);
    let mut search = Search {
        inst: &inst,
        by_score,
        pair_floor,
        selected: Vec::with_capacity(inst.n_max),
        blocked: vec![0; inst.n],
        committed: 0.0,
        best: None,
        nodes: 0,
    };
    search.visit(0);
    let (best, nodes) = (search.best, search.nodes);
    inst.finish(model, SolverKind::BranchAndBound, best, nodes, cfg)
}

/// Picks the solver: closed form for Model 1, enumeration for small grids,
/// branch and bound otherwise.
pub fn solve(model: Model, scores: &ScoreField, grid: &PlacementGrid, cfg: &PlacementConfig) -> Result<PlacementSolution> {
    match model {
        Model::One => solve_model1(scores, cfg),
        _ if grid.len() <= EXHAUSTIVE_LIMIT => exhaustive_solve(model, scores, grid, cfg),
        _ => bnb_solve(model, scores, grid, cfg),
    }
}

/// Checks a solution against its model's constraints from the raw
/// coordinates.
pub fn check_solution(grid: &PlacementGrid, cfg: &PlacementConfig, sol: &PlacementSolution) -> Result<()> {
    if sol.s.len() != grid.len() {
        return Err(Error::Precondition(format!(
            "selection has {} entries for {} candidates",
            sol.s.len(),
            grid.len()
        )));
    }
    let sel = sol.selected();
    if sel.len() < cfg.n_min || sel.len() > cfg.n_max {
        return Err(Error::Precondition(format!(
            "{} sensors selected, bounds are [{}, {}]",
            sel.len(),
            cfg.n_min,
            cfg.n_max
        )));
    }
    if sol.model != Model::One {
        for (a, &i) in sel.iter().enumerate() {
            for &j in &sel[a + 1..] {
                let (p, q) = (grid.points[i], grid.points[j]);
                let dist = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt();
                if dist < cfg.d {
                    return Err(Error::Precondition(format!(
                        "sensors {i} and {j} are {dist} apart, minimum is {}",
                        cfg.d
                    )));
                }
            }
        }
    }
    Ok(())
}

/// Smallest pairwise distance among the selected sensors.
pub fn min_pairwise_distance(grid: &PlacementGrid, sol: &PlacementSolution) -> f64 {
    let sel = sol.selected();
    let mut m = f64::INFINITY;
    for (a, &i) in sel.iter().enumerate() {
        for &j in &sel[a + 1..] {
            m = m.min(grid.distance(i, j));
        }
    }
    m
}

/// Everything needed to reproduce or plot a placement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacementReport {
    pub model: Model,
    pub config: PlacementConfig,
    pub grid: PlacementGrid,
    pub abs_score: Vec<f64>,
    pub signed_score: Vec<f64>,
    pub times: Vec<f64>,
    pub selected: Vec<bool>,
    pub objective: f64,
    pub solver: SolverKind,
    pub nodes: u64,
    pub big_m_sufficient: Option<bool>,
}

impl PlacementReport {
    pub fn new(cfg: PlacementConfig, grid: PlacementGrid, scores: ScoreField, sol: PlacementSolution) -> Self {
        Self {
            model: sol.model,
            config: cfg,
            grid,
            abs_score: scores.abs_score,
            signed_score: scores.signed_score,
            times: scores.times,
            selected: sol.s,
            objective: sol.objective,
            solver: sol.solver,
            nodes: sol.nodes,
            big_m_sufficient: sol.big_m_sufficient,
        }
    }

    /// `x[,y],abs_score,signed_score,selected` with `selected` as 0/1.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let two = self.grid.dim == 2;
        let mut header = vec!["x"];
        if two {
            header.push("y");
        }
        header.extend(["abs_score", "signed_score", "selected"]);
        w.write_record(&header)?;
        for (i, p) in self.grid.points.iter().enumerate() {
            let mut row = vec![p[0].to_string()];
            if two {
                row.push(p[1].to_string());
            }
            row.push(self.abs_score[i].to_string());
            row.push(self.signed_score[i].to_string());
            row.push(u8::from(self.selected[i]).to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Jet;
    use crate::physics::DriveSample;
    use crate::pinn::FieldModel;
    use crate::solver::GridSpec;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn line(n: usize, spacing: f64) -> PlacementGrid {
        PlacementGrid {
            dim: 1,
            nx: n,
            ny: 1,
            margin: 0.0,
            points: (0..n).map(|i| [0.1 + spacing * i as f64, 0.0]).collect(),
        }
    }

    fn scores(v: &[f64]) -> ScoreField {
        ScoreField::from_abs(v.to_vec()).unwrap()
    }

    #[test]
    fn grid_is_strictly_inside_and_symmetric() {
        let g = build_grid(1, 3, 1, 0.1).unwrap();
        assert_eq!(g.len(), 3);
        assert!(g.points.iter().all(|p| p[0] > 0.1 && p[0] < 0.9));
        assert_relative_eq!(g.points[0][0], 0.1, epsilon = 1e-11);
        assert_eq!(g.points[1][0], 0.5);
        assert!((g.points[0][0] + g.points[2][0] - 1.0).abs() < 1e-15);

        let g = build_grid(2, 4, 4, 0.05).unwrap();
        assert_eq!(g.len(), 16);
        for (i, p) in g.points.iter().enumerate() {
            assert!(p.iter().all(|&c| c > 0.05 && c < 0.95));
            assert!(g.points[..i].iter().all(|q| q != p));
        }
        assert!(build_grid(1, 3, 1, 0.5).is_err());
        assert_eq!(build_grid(1, 1, 1, 0.4).unwrap().points, vec![[0.5, 0.0]]);
    }

    #[test]
    fn model1_examples() {
        let s = scores(&[3.0, 1.0, 2.0]);
        let sol = solve_model1(&s, &PlacementConfig::new(1, 2, 0.0, 0.0)).unwrap();
        assert_eq!(sol.selected(), vec![1]);
        assert_eq!(sol.objective, 1.0);
        let sol = solve_model1(&s, &PlacementConfig::new(2, 3, 0.0, 0.0)).unwrap();
        assert_eq!(sol.selected(), vec![1, 2]);
        assert_eq!(sol.objective, 3.0);
        assert!(matches!(
            solve_model1(&s, &PlacementConfig::new(4, 4, 0.0, 0.0)),
            Err(Error::Infeasible { n_min: 4, .. })
        ));
    }

    #[test]
    fn model2_prefers_lowest_non_adjacent_pair() {
        let g = line(4, 0.1);
        let s = scores(&[1.0; 4]);
        let cfg = PlacementConfig::new(2, 2, 0.15, 0.15);
        let a = solve_model2(&s, &g, &cfg).unwrap();
        let b = exhaustive_solve(Model::Two, &s, &g, &cfg).unwrap();
        assert_eq!(a.selected(), vec![0, 2]);
        assert_eq!(b.selected(), vec![0, 2]);
    }

    #[test]
    fn overlap_cost_examples() {
        let g = line(3, 0.15);
        let s = ScoreField {
            abs_score: vec![2.0, 1.0, 1.0],
            signed_score: vec![-2.0, 1.0, 1.0],
            times: vec![],
        };
        let c = overlap_cost(&g, &s, 0.2, false);
        assert_relative_eq!(c[1], 0.1, epsilon = 1e-12);
        assert_eq!(c[2], 0.0);
        assert!((0..3).all(|i| c[i * 3 + i] == 0.0));
        let c = overlap_cost(&g, &s, 0.2, true);
        assert_relative_eq!(c[1], -0.1, epsilon = 1e-12);
        assert_relative_eq!(c[2], 0.2, epsilon = 1e-12);
    }

    #[test]
    fn model3_reduces_to_model2_without_overlap() {
        let g = line(6, 0.1);
        let s = scores(&[0.5, 0.1, 0.4, 0.2, 0.3, 0.6]);
        let cfg = PlacementConfig::new(2, 4, 0.15, 0.15);
        let m2 = solve_model2(&s, &g, &cfg).unwrap();
        let m3 = solve_model3(&s, &g, &cfg).unwrap();
        assert_eq!(m2.s, m3.s);
        assert_eq!(m2.objective, m3.objective);
        let single = solve_model3(&s, &g, &PlacementConfig::new(1, 3, 0.0, 0.5)).unwrap();
        assert_eq!(single.selected(), vec![1]);
        assert_eq!(single.objective, 0.1);
    }

    #[test]
    fn infeasible_reports_independence_bound() {
        let g = line(5, 0.01);
        let s = scores(&[1.0; 5]);
        let cfg = PlacementConfig::new(3, 4, 0.025, 0.05);
        for r in [
            bnb_solve(Model::Two, &s, &g, &cfg),
            exhaustive_solve(Model::Two, &s, &g, &cfg),
        ] {
            match r {
                Err(Error::Infeasible {
                    n_min,
                    independence_bound,
                    ..
                }) => assert_eq!((n_min, independence_bound), (3, 2)),
                other => panic!("expected infeasible, got {other:?}"),
            }
        }
    }

    #[test]
    fn exhaustive_guard() {
        let g = build_grid(2, 5, 5, 0.05).unwrap();
        let s = scores(&[1.0; 25]);
        assert!(matches!(
            exhaustive_solve(Model::Two, &s, &g, &PlacementConfig::new(1, 2, 0.0, 0.0)),
            Err(Error::Size(_))
        ));
        let one = build_grid(1, 1, 1, 0.05).unwrap();
        let sol = exhaustive_solve(Model::Three, &scores(&[2.0]), &one, &PlacementConfig::new(1, 1, 0.0, 0.1)).unwrap();
        assert_eq!(sol.s, vec![true]);
    }

    fn random_instance(rng: &mut ChaCha8Rng, n: usize) -> (ScoreField, PlacementGrid, PlacementConfig) {
        let g = build_grid(1, n, 1, 0.05).unwrap();
        let abs: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..2.0)).collect();
        let sp = g.spacing();
        let d = rng.random_range(0.0..2.0 * sp);
        let d1 = rng.random_range(d..4.0 * sp);
        let n_min = rng.random_range(1..=3);
        let n_max = rng.random_range(n_min..=n.min(6));
        (scores(&abs), g, PlacementConfig::new(n_min, n_max, d, d1))
    }

    #[test]
    fn bnb_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..30 {
            let n = rng.random_range(4..=12);
            let (s, g, cfg) = random_instance(&mut rng, n);
            for model in [Model::One, Model::Two, Model::Three] {
                let a = bnb_solve(model, &s, &g, &cfg);
                let b = exhaustive_solve(model, &s, &g, &cfg);
                match (a, b) {
                    (Ok(a), Ok(b)) => {
                        assert_eq!(a.objective, b.objective);
                        assert_eq!(a.s, b.s);
                        assert!(a.nodes <= 1u64 << n);
                        check_solution(&g, &cfg, &a).unwrap();
                    }
                    (Err(Error::Infeasible { .. }), Err(Error::Infeasible { .. })) => {}
                    (a, b) => panic!("solvers disagree: {a:?} vs {b:?}"),
                }
            }
        }
    }

    #[test]
    fn signed_costs_match_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let n = rng.random_range(4..=10);
            let (mut s, g, mut cfg) = random_instance(&mut rng, n);
            s.signed_score = s.abs_score.iter().map(|a| a * rng.random_range(-1.0..1.0)).collect();
            cfg.signed_costs = true;
            let a = bnb_solve(Model::Three, &s, &g, &cfg);
            let b = exhaustive_solve(Model::Three, &s, &g, &cfg);
            match (a, b) {
                (Ok(a), Ok(b)) => {
                    assert_eq!(a.objective, b.objective);
                    assert_eq!(a.s, b.s);
                }
                (Err(_), Err(_)) => {}
                (a, b) => panic!("solvers disagree: {a:?} vs {b:?}"),
            }
        }
    }

    proptest! {
        #[test]
        fn model12_selection_is_scale_equivariant(
            raw in proptest::collection::vec(0.0..10.0f64, 6..12),
            c in 0.1..10.0f64,
        ) {
            let n = raw.len();
            let g = line(n, 0.05);
            let cfg = PlacementConfig::new(2, 4, 0.07, 0.1);
            let scaled: Vec<f64> = raw.iter().map(|v| v * c).collect();
            for model in [Model::One, Model::Two] {
                let a = solve(model, &scores(&raw), &g, &cfg).unwrap();
                let b = solve(model, &scores(&scaled), &g, &cfg).unwrap();
                prop_assert_eq!(&a.s, &b.s);
                prop_assert!((b.objective - c * a.objective).abs() <= 1e-9 * b.objective.max(1.0));
            }
        }

        #[test]
        fn models_are_nested(raw in proptest::collection::vec(0.0..10.0f64, 5..10)) {
            let g = line(raw.len(), 0.05);
            let cfg = PlacementConfig::new(2, 3, 0.07, 0.12);
            let s = scores(&raw);
            let m1 = solve(Model::One, &s, &g, &cfg).unwrap();
            let m2 = solve(Model::Two, &s, &g, &cfg).unwrap();
            let m3 = solve(Model::Three, &s, &g, &cfg).unwrap();
            prop_assert!(m1.objective <= m2.objective && m2.objective <= m3.objective);
            let m3_flat = solve(Model::Three, &s, &g, &PlacementConfig { d1: 0.0, d: 0.0, ..cfg }).unwrap();
            let m2_flat = solve(Model::Two, &s, &g, &PlacementConfig { d1: 0.0, d: 0.0, ..cfg }).unwrap();
            prop_assert_eq!(m3_flat.objective, m2_flat.objective);
        }
    }

    struct Ramp;

    impl FieldModel for Ramp {
        fn dim(&self) -> usize {
            1
        }
        fn value(&self, x: &[f64], _: f64, _: &DriveSample) -> Result<f64> {
            Ok(x[0])
        }
    }

    impl JetModel for Ramp {
        fn jet(&self, x: &[f64], _: f64, _: &DriveSample) -> Result<Jet> {
            Ok(Jet {
                u: x[0],
                du_dt: 0.0,
                grad_x: vec![1.0],
                lap_x: 0.0,
            })
        }
    }

    fn field_from(dim: usize, nx: usize, f: impl Fn(f64, f64, f64) -> f64) -> FieldSeries {
        let grid = GridSpec::new(nx, 4, 4.0);
        let times: Vec<f64> = (0..=4).map(|t| t as f64).collect();
        let n_space = nx.pow(dim as u32);
        let dx = grid.dx();
        let mut values = Vec::new();
        for &t in &times {
            for node in 0..n_space {
                values.push(f((node % nx) as f64 * dx, (node / nx) as f64 * dx, t));
            }
        }
        FieldSeries::new(grid, dim, times, values).unwrap()
    }

    #[test]
    fn scores_of_simple_fields() {
        let g1 = build_grid(1, 7, 1, 0.05).unwrap();
        let times = hourly_times(4.0);
        let ramp = field_from(1, 11, |x, _, _| x);
        let s = score_field(&ScoreSource::Field(&ramp), &g1, &times).unwrap();
        for (a, b) in s.abs_score.iter().zip(&s.signed_score) {
            assert_relative_eq!(*a, 1.0, epsilon = 1e-12);
            assert_relative_eq!(*b, 1.0, epsilon = 1e-12);
        }
        let drive = physics::synth_drive(1, 10).unwrap();
        let src = ScoreSource::Model {
            model: &Ramp,
            drive: &drive,
        };
        let s = score_field(&src, &g1, &times).unwrap();
        assert!(s.abs_score.iter().all(|&v| v == 1.0));

        let flat = field_from(2, 9, |_, _, t| 3.0 + t);
        let g2 = build_grid(2, 3, 3, 0.05).unwrap();
        let s = score_field(&ScoreSource::Field(&flat), &g2, &times).unwrap();
        assert!(s.abs_score.iter().all(|&v| v.abs() < 1e-12));

        // quadratic in x, linear in y: exact for second-order differences
        let q = field_from(2, 21, |x, y, t| x * x * (1.0 + t) + 2.0 * y);
        let s = score_field(&ScoreSource::Field(&q), &g2, &[0.5, 2.0]).unwrap();
        for (i, p) in g2.points.iter().enumerate() {
            let expect = 0.5 * ((2.0 * p[0] * 1.5 + 2.0) + (2.0 * p[0] * 3.0 + 2.0));
            assert_relative_eq!(s.signed_score[i], expect, max_relative = 1e-10);
            assert!(s.signed_score[i].abs() <= s.abs_score[i] + 1e-15);
        }
        assert!(matches!(
            score_field(&ScoreSource::Field(&q), &g2, &[5.0]),
            Err(Error::Range(_))
        ));
    }

    #[test]
    fn report_csv_layout() {
        let g = build_grid(2, 2, 2, 0.1).unwrap();
        let s = scores(&[1.0, 2.0, 3.0, 4.0]);
        let cfg = PlacementConfig::new(1, 2, 0.0, 0.0);
        let sol = solve(Model::One, &s, &g, &cfg).unwrap();
        let report = PlacementReport::new(cfg, g, s, sol);
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "x,y,abs_score,signed_score,selected");
        assert_eq!(lines.len(), 5);
        assert!(lines[1].ends_with(",1"));
        let json = serde_json::to_string(&report).unwrap();
        let back: PlacementReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
    }
}
