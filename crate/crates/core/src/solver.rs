//! Finite-difference reference solutions of the heat equation on the unit
//! interval (Crank-Nicolson) and the unit square (Peaceman-Rachford ADI).
//!
//! Every problem handled here is linear in `u`:
//!
//! ```text
//! C du/dt = k Lap(u) - r u + s(x, t)
//! ```
//!
//! with Dirichlet data on the whole boundary. For the transformer model
//! `C = rho c_p / 3600` (time in hours), `r = h` and `s = P0 + P_K + h T_a`,
//! so the convective part of the source is treated implicitly.
//!
//! Unless the problem supplies one, the initial field is the steady state
//! `k Lap(u) - r u + s(x, 0) = 0` with the `t = 0` boundary values.

use std::cell::Cell;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::physics::{self, DriveSample, DriveSeries, PhysicsSpec};

/// Uniform space-time grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    /// Nodes per spatial axis, boundary nodes included.
    pub nx: usize,
    /// Number of time steps.
    pub nt: usize,
    /// Final time, hours.
    pub t_end: f64,
    /// Store every n-th time level (the final level is always stored).
    #[serde(default = "one")]
    pub save_every: usize,
}

fn one() -> usize {
    1
}

impl GridSpec {
    pub fn new(nx: usize, nt: usize, t_end: f64) -> Self {
        Self {
            nx,
            nt,
            t_end,
            save_every: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx < 3 {
            return Err(Error::Argument(format!("nx must be >= 3, got {}", self.nx)));
        }
        if self.nt < 1 {
            return Err(Error::Argument("nt must be >= 1".into()));
        }
        if !(self.t_end.is_finite() && self.t_end > 0.0) {
            return Err(Error::Argument(format!("t_end must be > 0, got {}", self.t_end)));
        }
        if self.save_every < 1 {
            return Err(Error::Argument("save_every must be >= 1".into()));
        }
        Ok(())
    }

    pub fn dx(&self) -> f64 {
        1.0 / (self.nx - 1) as f64
    }

    pub fn dt(&self) -> f64 {
        self.t_end / self.nt as f64
    }
}

/// Temperature on every node at the stored time levels.
///
/// `values` is laid out level-major; within a level nodes are ordered with x
/// varying fastest (`node = j * nx + i`).
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSeries {
    grid: GridSpec,
    dim: usize,
    times: Vec<f64>,
    values: Vec<f64>,
}

impl FieldSeries {
    pub fn new(grid: GridSpec, dim: usize, times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        grid.validate()?;
        if dim != 1 && dim != 2 {
            return Err(Error::Argument(format!("dim must be 1 or 2, got {dim}")));
        }
        let n_space = grid.nx.pow(dim as u32);
        if times.is_empty() || values.len() != n_space * times.len() {
            return Err(Error::Argument(format!(
                "field has {} values, expected {} x {}",
                values.len(),
                n_space,
                times.len()
            )));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Argument("field times must be strictly increasing".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Argument("field contains non-finite values".into()));
        }
        Ok(Self {
            grid,
            dim,
            times,
            values,
        })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn nx(&self) -> usize {
        self.grid.nx
    }

    pub fn n_space(&self) -> usize {
        self.grid.nx.pow(self.dim as u32)
    }

    pub fn n_levels(&self) -> usize {
        self.times.len()
    }

    pub fn level(&self, l: usize) -> &[f64] {
        let n = self.n_space();
        &self.values[l * n..(l + 1) * n]
    }

    /// Coordinates of a node; the second entry is 0 in 1D.
    pub fn node_coords(&self, node: usize) -> [f64; 2] {
        let dx = self.grid.dx();
        let nx = self.grid.nx;
        [(node % nx) as f64 * dx, (node / nx) as f64 * dx]
    }

    /// Index of the stored level at time `t`, if any.
    pub fn level_of(&self, t: f64) -> Option<usize> {
        let tol = 1e-9 * self.grid.t_end.max(1.0);
        self.times.iter().position(|&s| (s - t).abs() <= tol)
    }

    /// Values along the x = 1 edge at every stored level (averaged over y in 2D).
    pub fn top_oil_trace(&self) -> Vec<f64> {
        let nx = self.grid.nx;
        (0..self.n_levels())
            .map(|l| {
                let lvl = self.level(l);
                if self.dim == 1 {
                    lvl[nx - 1]
                } else {
                    (0..nx).map(|j| lvl[j * nx + nx - 1]).sum::<f64>() / nx as f64
                }
            })
            .collect()
    }
}

/// Linear heat problem `C u_t = k Lap(u) - r u + s(x, t)` with Dirichlet data.
pub trait HeatProblem {
    fn dim(&self) -> usize;
    /// Heat capacity `C` (per hour of simulated time).
    fn capacity(&self) -> f64;
    fn conductivity(&self) -> f64;
    /// Coefficient `r >= 0` of the implicit linear sink.
    fn reaction(&self) -> f64;
    fn source(&self, x: &[f64], t: f64) -> Result<f64>;
    fn boundary(&self, x: &[f64], t: f64) -> Result<f64>;
    /// Explicit initial field; `None` selects the steady-state start.
    fn initial(&self, _x: &[f64]) -> Option<f64> {
        None
    }
}

/// The transformer problem driven by a drive series.
pub struct TransformerProblem<'a> {
    spec: PhysicsSpec,
    drive: &'a DriveSeries,
    last: Cell<Option<(f64, DriveSample)>>,
}

impl<'a> TransformerProblem<'a> {
    pub fn new(spec: PhysicsSpec, drive: &'a DriveSeries) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            spec,
            drive,
            last: Cell::new(None),
        })
    }

    fn drive_at(&self, t: f64) -> Result<DriveSample> {
        if let Some((tc, s)) = self.last.get() {
            if tc == t {
                return Ok(s);
            }
        }
        let s = physics::drive_at(self.drive, t)?;
        self.last.set(Some((t, s)));
        Ok(s)
    }
}

impl HeatProblem for TransformerProblem<'_> {
    fn dim(&self) -> usize {
        self.spec.dim
    }
    fn capacity(&self) -> f64 {
        self.spec.capacity_per_hour()
    }
    fn conductivity(&self) -> f64 {
        self.spec.k
    }
    fn reaction(&self) -> f64 {
        self.spec.h
    }
    fn source(&self, x: &[f64], t: f64) -> Result<f64> {
        Ok(physics::source_offset(&self.spec, x, &self.drive_at(t)?))
    }
    fn boundary(&self, x: &[f64], t: f64) -> Result<f64> {
        let d = self.drive_at(t)?;
        physics::boundary_value_unchecked(x, &d)
            .ok_or_else(|| Error::Precondition(format!("{x:?} is not a boundary node")))
    }
}

type ScalarFn = Box<dyn Fn(&[f64], f64) -> f64 + Send + Sync>;

/// Problem assembled from closures; used for manufactured solutions and
/// source-free checks.
pub struct FnProblem {
    pub dim: usize,
    pub capacity: f64,
    pub conductivity: f64,
    pub reaction: f64,
    pub source: ScalarFn,
    pub boundary: ScalarFn,
    pub initial: Option<Box<dyn Fn(&[f64]) -> f64 + Send + Sync>>,
}

impl HeatProblem for FnProblem {
    fn dim(&self) -> usize {
        self.dim
    }
    fn capacity(&self) -> f64 {
        self.capacity
    }
    fn conductivity(&self) -> f64 {
        self.conductivity
    }
    fn reaction(&self) -> f64 {
        self.reaction
    }
    fn source(&self, x: &[f64], t: f64) -> Result<f64> {
        Ok((self.source)(x, t))
    }
    fn boundary(&self, x: &[f64], t: f64) -> Result<f64> {
        Ok((self.boundary)(x, t))
    }
    fn initial(&self, x: &[f64]) -> Option<f64> {
        self.initial.as_ref().map(|f| f(x))
    }
}

fn check_drive_covers(drive: &DriveSeries, grid: &GridSpec) -> Result<()> {
    if drive.t_first() > 0.0 || drive.t_last() < grid.t_end {
        return Err(Error::Range(format!(
            "drive covers [{}, {}] h but the run needs [0, {}] h",
            drive.t_first(),
            drive.t_last(),
            grid.t_end
        )));
    }
    Ok(())
}

/// Reference solution of the 1D transformer problem.
pub fn solve_1d(spec: &PhysicsSpec, drive: &DriveSeries, grid: &GridSpec) -> Result<FieldSeries> {
    if spec.dim != 1 {
        return Err(Error::Argument("solve_1d needs a 1D physics spec".into()));
    }
    grid.validate()?;
    check_drive_covers(drive, grid)?;
    solve_problem_1d(&TransformerProblem::new(*spec, drive)?, grid)
}

/// Reference solution of the 2D transformer problem.
pub fn solve_2d(spec: &PhysicsSpec, drive: &DriveSeries, grid: &GridSpec) -> Result<FieldSeries> {
    if spec.dim != 2 {
        return Err(Error::Argument("solve_2d needs a 2D physics spec".into()));
    }
    grid.validate()?;
    check_drive_covers(drive, grid)?;
    solve_problem_2d(&TransformerProblem::new(*spec, drive)?, grid)
}

/// Solves `(a_i, b_i, c_i)` tridiagonal systems in place (Thomas algorithm).
/// `rhs` holds the solution on return.
fn thomas(lower: f64, diag: f64, upper: f64, rhs: &mut [f64], scratch: &mut [f64]) {
    let n = rhs.len();
    scratch[0] = upper / diag;
    rhs[0] /= diag;
    for i in 1..n {
        let m = diag - lower * scratch[i - 1];
        scratch[i] = upper / m;
        rhs[i] = (rhs[i] - lower * rhs[i - 1]) / m;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= scratch[i] * rhs[i + 1];
    }
}

struct Recorder {
    save_every: usize,
    nt: usize,
    times: Vec<f64>,
    values: Vec<f64>,
}

impl Recorder {
    fn new(grid: &GridSpec) -> Self {
        Self {
            save_every: grid.save_every,
            nt: grid.nt,
            times: Vec::new(),
            values: Vec::new(),
        }
    }

    fn record(&mut self, step: usize, t: f64, u: &[f64]) {
        if step % self.save_every == 0 || step == self.nt {
            self.times.push(t);
            self.values.extend_from_slice(u);
        }
    }
}

fn finish(grid: &GridSpec, dim: usize, rec: Recorder) -> Result<FieldSeries> {
    if rec.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric {
            index: 0,
            what: "reference solver produced non-finite temperatures".into(),
        });
    }
    FieldSeries::new(*grid, dim, rec.times, rec.values)
}

/// Field at t = 0 on `nx` nodes per axis: the problem's explicit initial
/// condition if it has one, otherwise the steady state for the t = 0 data.
pub fn initial_state<P: HeatProblem + ?Sized>(p: &P, nx: usize) -> Result<Vec<f64>> {
    if nx < 3 {
        return Err(Error::Argument(format!("nx must be >= 3, got {nx}")));
    }
    match p.dim() {
        1 => initial_1d(p, nx),
        2 => initial_2d(p, nx),
        d => Err(Error::Argument(format!("dim must be 1 or 2, got {d}"))),
    }
}

fn initial_1d<P: HeatProblem + ?Sized>(p: &P, n: usize) -> Result<Vec<f64>> {
    let dx = 1.0 / (n - 1) as f64;
    let kk = p.conductivity() / (dx * dx);
    let mut u = vec![0.0; n];
    let g0 = (p.boundary(&[0.0], 0.0)?, p.boundary(&[1.0], 0.0)?);
    if p.initial(&[0.0]).is_some() {
        for (i, v) in u.iter_mut().enumerate() {
            *v = p.initial(&[i as f64 * dx]).unwrap_or(0.0);
        }
    } else {
        // steady state: -k u'' + r u = s
        let mut rhs = (1..n - 1)
            .map(|i| p.source(&[i as f64 * dx], 0.0))
            .collect::<Result<Vec<_>>>()?;
        rhs[0] += kk * g0.0;
        rhs[n - 3] += kk * g0.1;
        let mut scratch = vec![0.0; n - 2];
        thomas(-kk, 2.0 * kk + p.reaction(), -kk, &mut rhs, &mut scratch);
        u[1..n - 1].copy_from_slice(&rhs);
    }
    u[0] = g0.0;
    u[n - 1] = g0.1;
    Ok(u)
}

fn initial_2d<P: HeatProblem + ?Sized>(p: &P, n: usize) -> Result<Vec<f64>> {
    let size = n * n;
    let dx = 1.0 / (n - 1) as f64;
    let kk = p.conductivity() / (dx * dx);
    let coord = |c: usize| [(c % n) as f64 * dx, (c / n) as f64 * dx];
    let mut u = vec![0.0; size];
    let mut src = vec![0.0; size];
    let explicit = p.initial(&[0.0, 0.0]).is_some();
    for c in 0..size {
        let (i, j) = (c % n, c / n);
        let x = coord(c);
        if i == 0 || j == 0 || i == n - 1 || j == n - 1 {
            u[c] = p.boundary(&x, 0.0)?;
        } else if explicit {
            u[c] = p.initial(&x).unwrap_or(0.0);
        } else {
            src[c] = p.source(&x, 0.0)?;
        }
    }
    if !explicit {
        steady_2d(&mut u, &src, n, kk, p.reaction())?;
    }
    Ok(u)
}

/// Crank-Nicolson solution of a 1D problem.
pub fn solve_problem_1d<P: HeatProblem + ?Sized>(p: &P, grid: &GridSpec) -> Result<FieldSeries> {
    grid.validate()?;
    if p.dim() != 1 {
        return Err(Error::Argument("problem is not one-dimensional".into()));
    }
    let n = grid.nx;
    let dx = grid.dx();
    let dt = grid.dt();
    let (cap, k, r) = (p.capacity(), p.conductivity(), p.reaction());
    let xs: Vec<f64> = (0..n).map(|i| i as f64 * dx).collect();
    let kk = k / (dx * dx);

    let sources = |t: f64| -> Result<Vec<f64>> {
        xs[1..n - 1].iter().map(|&x| p.source(&[x], t)).collect()
    };

    let mut u = initial_1d(p, n)?;

    let mut rec = Recorder::new(grid);
    rec.record(0, 0.0, &u);

    let lower = -0.5 * kk;
    let diag = cap / dt + kk + 0.5 * r;
    let mut s_old = sources(0.0)?;
    let mut rhs = vec![0.0; n - 2];
    let mut scratch = vec![0.0; n - 2];
    for step in 1..=grid.nt {
        let t = step as f64 * dt;
        let s_new = sources(t)?;
        let g = (p.boundary(&[0.0], t)?, p.boundary(&[1.0], t)?);
        for i in 1..n - 1 {
            let lap = kk * (u[i - 1] - 2.0 * u[i] + u[i + 1]);
            rhs[i - 1] =
                cap / dt * u[i] + 0.5 * (lap - r * u[i]) + 0.5 * (s_old[i - 1] + s_new[i - 1]);
        }
        rhs[0] -= lower * g.0;
        rhs[n - 3] -= lower * g.1;
        thomas(lower, diag, lower, &mut rhs, &mut scratch);
        u[1..n - 1].copy_from_slice(&rhs);
        u[0] = g.0;
        u[n - 1] = g.1;
        s_old = s_new;
        rec.record(step, t, &u);
    }
    finish(grid, 1, rec)
}

/// Applies `k Lap(u) - r u` restricted to interior nodes of an `n x n` grid.
/// Boundary entries of `out` are set to zero.
fn apply_operator_2d(u: &[f64], n: usize, kk: f64, r: f64, out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for j in 1..n - 1 {
        for i in 1..n - 1 {
            let c = j * n + i;
            out[c] = kk * (u[c - 1] + u[c + 1] + u[c - n] + u[c + n] - 4.0 * u[c]) - r * u[c];
        }
    }
}

/// Steady state `-k Lap(u) + r u = s` on the interior by conjugate gradients,
/// with boundary entries of `u` already holding the Dirichlet data.
fn steady_2d(u: &mut [f64], source: &[f64], n: usize, kk: f64, r: f64) -> Result<()> {
    let size = n * n;
    let interior = |c: usize| {
        let (i, j) = (c % n, c / n);
        i > 0 && j > 0 && i < n - 1 && j < n - 1
    };
    // residual b - A u with A = -(k Lap - r)
    let mut au = vec![0.0; size];
    apply_operator_2d(u, n, kk, r, &mut au);
    let mut res: Vec<f64> = (0..size)
        .map(|c| if interior(c) { source[c] + au[c] } else { 0.0 })
        .collect();
    // work on the interior correction only
    let mut p = res.clone();
    let mut ap = vec![0.0; size];
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut rr = dot(&res, &res);
    let bnorm = source.iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0);
    let max_iter = 20 * size;
    for _ in 0..max_iter {
        if rr.sqrt() <= 1e-14 * bnorm {
            return Ok(());
        }
        apply_operator_2d(&p, n, kk, r, &mut ap);
        ap.iter_mut().for_each(|v| *v = -*v);
        let alpha = rr / dot(&p, &ap);
        for c in 0..size {
            u[c] += alpha * p[c];
            res[c] -= alpha * ap[c];
        }
        let rr_new = dot(&res, &res);
        let beta = rr_new / rr;
        rr = rr_new;
        for c in 0..size {
            p[c] = res[c] + beta * p[c];
        }
    }
    if rr.sqrt() <= 1e-10 * bnorm {
        Ok(())
    } else {
        Err(Error::Numeric {
            index: 0,
            what: "steady-state conjugate gradients did not converge".into(),
        })
    }
}

/// Peaceman-Rachford ADI solution of a 2D problem.
///
/// The sink `r u` is split evenly between the two sweeps. The intermediate
/// level on the x = 0 and x = 1 edges uses the consistent boundary correction
/// `u* = [(C + dt/2 L_y) g^n + (C - dt/2 L_y) g^(n+1)] / (2C)` so time-dependent
/// boundary data keeps second-order accuracy.
pub fn solve_problem_2d<P: HeatProblem + ?Sized>(p: &P, grid: &GridSpec) -> Result<FieldSeries> {
    grid.validate()?;
    if p.dim() != 2 {
        return Err(Error::Argument("problem is not two-dimensional".into()));
    }
    let n = grid.nx;
    let size = n * n;
    let dx = grid.dx();
    let dt = grid.dt();
    let (cap, k, r) = (p.capacity(), p.conductivity(), p.reaction());
    let kk = k / (dx * dx);
    let coord = |c: usize| [(c % n) as f64 * dx, (c / n) as f64 * dx];
    let is_boundary = |c: usize| {
        let (i, j) = (c % n, c / n);
        i == 0 || j == 0 || i == n - 1 || j == n - 1
    };

    let fill_boundary = |t: f64, out: &mut [f64]| -> Result<()> {
        for c in 0..size {
            if is_boundary(c) {
                out[c] = p.boundary(&coord(c), t)?;
            }
        }
        Ok(())
    };
    let fill_source = |t: f64, out: &mut [f64]| -> Result<()> {
        for c in 0..size {
            out[c] = if is_boundary(c) { 0.0 } else { p.source(&coord(c), t)? };
        }
        Ok(())
    };

    let mut u = initial_2d(p, n)?;
    let mut src = vec![0.0; size];

    let mut rec = Recorder::new(grid);
    rec.record(0, 0.0, &u);

    let half = 0.5 * dt;
    let lower = -half * kk;
    let diag = cap + half * (2.0 * kk + 0.5 * r);
    // explicit half operator: C + dt/2 (k d2 - r/2)
    let explicit = |m: f64, l: f64, rr: f64| cap * m + half * (kk * (l - 2.0 * m + rr) - 0.5 * r * m);

    let mut g_old = vec![0.0; size];
    fill_boundary(0.0, &mut g_old)?;
    let mut g_new = vec![0.0; size];
    let mut star = vec![0.0; size];
    let mut line = vec![0.0; n - 2];
    let mut scratch = vec![0.0; n - 2];

    for step in 1..=grid.nt {
        let t = step as f64 * dt;
        fill_boundary(t, &mut g_new)?;
        fill_source(t - half, &mut src)?;

        // intermediate values on the x-edges
        for j in 1..n - 1 {
            for i in [0, n - 1] {
                let c = j * n + i;
                let plus = explicit(g_old[c], g_old[c - n], g_old[c + n]);
                let minus = 2.0 * cap * g_new[c] - explicit(g_new[c], g_new[c - n], g_new[c + n]);
                star[c] = 0.5 * (plus + minus) / cap;
            }
        }
        // x-sweep: implicit in x, explicit in y
        for j in 1..n - 1 {
            for i in 1..n - 1 {
                let c = j * n + i;
                line[i - 1] = explicit(u[c], u[c - n], u[c + n]) + half * src[c];
            }
            line[0] -= lower * star[j * n];
            line[n - 3] -= lower * star[j * n + n - 1];
            thomas(lower, diag, lower, &mut line, &mut scratch);
            star[j * n + 1..j * n + n - 1].copy_from_slice(&line);
        }
        // y-sweep: implicit in y, explicit in x
        for i in 1..n - 1 {
            for j in 1..n - 1 {
                let c = j * n + i;
                line[j - 1] = explicit(star[c], star[c - 1], star[c + 1]) + half * src[c];
            }
            line[0] -= lower * g_new[i];
            line[n - 3] -= lower * g_new[(n - 1) * n + i];
            thomas(lower, diag, lower, &mut line, &mut scratch);
            for j in 1..n - 1 {
                u[j * n + i] = line[j - 1];
            }
        }
        for c in 0..size {
            if is_boundary(c) {
                u[c] = g_new[c];
            }
        }
        std::mem::swap(&mut g_old, &mut g_new);
        rec.record(step, t, &u);
    }
    finish(grid, 2, rec)
}

/// Relative L2 difference `|a - b| / |b|`, with `b` the reference.
pub fn relative_l2(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Argument(format!(
            "shape mismatch: {} vs {} values",
            a.len(),
            b.len()
        )));
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        num += (x - y) * (x - y);
        den += y * y;
    }
    if den == 0.0 {
        return Err(Error::Degenerate("reference has zero norm".into()));
    }
    Ok((num / den).sqrt())
}

/// Locates `x` on a uniform axis: returns the left node and the weight of the
/// right node.
fn locate(x: f64, nx: usize) -> (usize, f64) {
    let s = x * (nx - 1) as f64;
    let i = (s.floor() as usize).min(nx - 2);
    (i, s - i as f64)
}

/// Multilinear interpolation of a single stored level at `x`.
pub fn sample_level(f: &FieldSeries, level: usize, x: &[f64]) -> Result<f64> {
    check_point(f, x)?;
    Ok(interp_space(f, f.level(level), x))
}

pub(crate) fn interp_space(f: &FieldSeries, lvl: &[f64], x: &[f64]) -> f64 {
    let nx = f.nx();
    let (i, wx) = locate(x[0], nx);
    let lerp = |a: f64, b: f64, w: f64| if w == 0.0 { a } else { a + w * (b - a) };
    if f.dim() == 1 {
        lerp(lvl[i], lvl[i + 1], wx)
    } else {
        let (j, wy) = locate(x[1], nx);
        let row = |jj: usize| lerp(lvl[jj * nx + i], lvl[jj * nx + i + 1], wx);
        lerp(row(j), row(j + 1), wy)
    }
}

fn check_point(f: &FieldSeries, x: &[f64]) -> Result<()> {
    if x.len() != f.dim() {
        return Err(Error::Argument(format!(
            "point has {} coordinates, field is {}D",
            x.len(),
            f.dim()
        )));
    }
    if x.iter().any(|&c| !(0.0..=1.0).contains(&c)) {
        return Err(Error::Range(format!("point {x:?} outside the unit domain")));
    }
    Ok(())
}

/// Multilinear space-time interpolation of a field series.
pub fn sample_series(f: &FieldSeries, x: &[f64], t: f64) -> Result<f64> {
    check_point(f, x)?;
    let times = f.times();
    let (first, last) = (times[0], times[times.len() - 1]);
    if !(t >= first && t <= last) {
        return Err(Error::Range(format!("t = {t} outside [{first}, {last}]")));
    }
    let hi = times.partition_point(|&s| s <= t);
    let lo = hi - 1;
    let a = interp_space(f, f.level(lo), x);
    if times[lo] == t || hi == times.len() {
        return Ok(a);
    }
    let b = interp_space(f, f.level(hi), x);
    let w = (t - times[lo]) / (times[hi] - times[lo]);
    Ok(a + w * (b - a))
}
