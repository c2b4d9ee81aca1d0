//! First-order optimizers over flat parameter vectors: Adam and limited-memory
//! BFGS with a strong-Wolfe line search.

use std::collections::VecDeque;

use crate::error::{Error, Result};

/// Objective returning the value and gradient at a point.
pub trait Objective {
    fn eval(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>)>;
}

impl<F> Objective for F
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    fn eval(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamSettings {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamSettings {
    pub fn new(lr: f64, epsilon: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon,
        }
    }
}

/// Adam state for one parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    settings: AdamSettings,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(settings: AdamSettings, n: usize) -> Self {
        Self {
            settings,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// One bias-corrected update of `x` with gradient `g`.
    pub fn step(&mut self, x: &mut [f64], g: &[f64]) {
        let AdamSettings {
            lr,
            beta1,
            beta2,
            epsilon,
        } = self.settings;
        self.t += 1;
        let c1 = 1.0 - beta1.powi(self.t);
        let c2 = 1.0 - beta2.powi(self.t);
        for i in 0..x.len() {
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g[i];
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g[i] * g[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            x[i] -= lr * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsSettings {
    /// Maximum number of iterations (accepted steps).
    pub max_iters: usize,
    /// Maximum number of objective evaluations, line searches included.
    pub max_evals: usize,
    /// Number of stored curvature pairs.
    pub history: usize,
    /// Maximum trial steps per line search.
    pub max_line_search: usize,
    /// Stop when `|g|_inf` or the relative decrease falls below this.
    pub tolerance: f64,
    /// Sufficient-decrease constant.
    pub c1: f64,
    /// Curvature constant.
    pub c2: f64,
}

impl Default for LbfgsSettings {
    fn default() -> Self {
        Self {
            max_iters: 1000,
            max_evals: 20000,
            history: 50,
            max_line_search: 50,
            tolerance: 1e-6,
            c1: 1e-4,
            c2: 0.9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    GradientTolerance,
    RelativeDecrease,
    MaxIterations,
    MaxEvaluations,
    LineSearchFailed,
}

#[derive(Debug, Clone)]
pub struct LbfgsOutcome {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
}

/// Per-iteration information passed to the L-BFGS observer.
#[derive(Debug, Clone, Copy)]
pub struct LbfgsIterate<'a> {
    pub iteration: usize,
    pub x: &'a [f64],
    pub f: f64,
    pub grad_inf: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

struct Counter<'o, O: Objective> {
    obj: &'o mut O,
    evals: usize,
    max: usize,
}

impl<O: Objective> Counter<'_, O> {
    fn eval(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.evals += 1;
        self.obj.eval(x)
    }

    fn exhausted(&self) -> bool {
        self.evals >= self.max
    }
}

struct LinePoint {
    alpha: f64,
    f: f64,
    /// Directional derivative.
    d: f64,
    x: Vec<f64>,
    g: Vec<f64>,
}

/// Minimizer of the cubic interpolating `(a, fa, da)` and `(b, fb, db)`,
/// safeguarded to the interior of the bracket.
fn cubic_min(a: f64, fa: f64, da: f64, b: f64, fb: f64, db: f64) -> f64 {
    let d1 = da + db - 3.0 * (fa - fb) / (a - b);
    let disc = d1 * d1 - da * db;
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    let mid = 0.5 * (a + b);
    if disc < 0.0 {
        return mid;
    }
    let d2 = (b - a).signum() * disc.sqrt();
    let t = b - (b - a) * ((db + d2 - d1) / (db - da + 2.0 * d2));
    if !t.is_finite() {
        return mid;
    }
    // keep away from the bracket ends
    let margin = 0.1 * (hi - lo);
    t.clamp(lo + margin, hi - margin)
}

/// Strong-Wolfe line search along `dir` from `x` (Nocedal & Wright, Alg. 3.5/3.6).
/// Returns `None` when no acceptable step was found within the trial budget.
fn strong_wolfe<O: Objective>(
    ctr: &mut Counter<'_, O>,
    x: &[f64],
    f0: f64,
    d0: f64,
    dir: &[f64],
    alpha0: f64,
    s: &LbfgsSettings,
) -> Result<Option<LinePoint>> {
    let probe = |ctr: &mut Counter<'_, O>, alpha: f64| -> Result<LinePoint> {
        let xn: Vec<f64> = x.iter().zip(dir).map(|(a, b)| a + alpha * b).collect();
        let (f, g) = ctr.eval(&xn)?;
        Ok(LinePoint {
            alpha,
            f,
            d: dot(&g, dir),
            x: xn,
            g,
        })
    };

    let mut trials = 0;
    let mut prev = LinePoint {
        alpha: 0.0,
        f: f0,
        d: d0,
        x: x.to_vec(),
        g: vec![],
    };
    let mut alpha = alpha0;
    let (lo, hi) = loop {
        if trials >= s.max_line_search || ctr.exhausted() {
            return Ok(None);
        }
        trials += 1;
        let cur = probe(ctr, alpha)?;
        if !cur.f.is_finite() {
            // step too long: shrink towards the last good point
            alpha = prev.alpha + 0.5 * (alpha - prev.alpha);
            continue;
        }
        if cur.f > f0 + s.c1 * cur.alpha * d0 || (trials > 1 && cur.f >= prev.f) {
            break (prev, cur);
        }
        if cur.d.abs() <= -s.c2 * d0 {
            return Ok(Some(cur));
        }
        if cur.d >= 0.0 {
            break (cur, prev);
        }
        let next = 2.0 * cur.alpha;
        prev = cur;
        alpha = next;
    };

    // zoom between lo (lower value, satisfies sufficient decrease) and hi
    let (mut lo, mut hi) = (lo, hi);
    loop {
        if trials >= s.max_line_search || ctr.exhausted() {
            // fall back to the best sufficient-decrease point seen
            return Ok(if lo.alpha > 0.0 && lo.f < f0 { Some(lo) } else { None });
        }
        trials += 1;
        let a = cubic_min(lo.alpha, lo.f, lo.d, hi.alpha, hi.f, hi.d);
        let cur = probe(ctr, a)?;
        if !cur.f.is_finite() || cur.f > f0 + s.c1 * a * d0 || cur.f >= lo.f {
            hi = cur;
        } else {
            if cur.d.abs() <= -s.c2 * d0 {
                return Ok(Some(cur));
            }
            if cur.d * (hi.alpha - lo.alpha) >= 0.0 {
                hi = lo;
            }
            lo = cur;
        }
        if (hi.alpha - lo.alpha).abs() <= 1e-16 * lo.alpha.abs().max(1.0) {
            return Ok(if lo.alpha > 0.0 && lo.f < f0 { Some(lo) } else { None });
        }
    }
}

/// Unconstrained L-BFGS. `observe` is called after every accepted step.
///
/// On a line-search failure the best point found so far is returned with
/// [`Termination::LineSearchFailed`]. Objective errors are propagated.
pub fn lbfgs<O: Objective>(
    obj: &mut O,
    x0: &[f64],
    s: &LbfgsSettings,
    mut observe: impl FnMut(&LbfgsIterate<'_>),
) -> Result<LbfgsOutcome> {
    if s.history == 0 {
        return Err(Error::Argument("L-BFGS history must be >= 1".into()));
    }
    let mut ctr = Counter {
        obj,
        evals: 0,
        max: s.max_evals.max(1),
    };
    let mut x = x0.to_vec();
    let (mut f, mut g) = ctr.eval(&x)?;
    if !f.is_finite() {
        return Err(Error::Numeric {
            index: 0,
            what: format!("initial objective is {f}"),
        });
    }
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(s.history);
    let mut iterations = 0;
    let finish = |x, f, iterations, evals, termination| {
        Ok(LbfgsOutcome {
            x,
            f,
            iterations,
            evaluations: evals,
            termination,
        })
    };

    loop {
        if inf_norm(&g) <= s.tolerance {
            return finish(x, f, iterations, ctr.evals, Termination::GradientTolerance);
        }
        if iterations >= s.max_iters {
            return finish(x, f, iterations, ctr.evals, Termination::MaxIterations);
        }
        if ctr.exhausted() {
            return finish(x, f, iterations, ctr.evals, Termination::MaxEvaluations);
        }

        // two-loop recursion
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(pairs.len());
        for (sv, yv, rho) in pairs.iter().rev() {
            let a = rho * dot(sv, &q);
            for (qi, yi) in q.iter_mut().zip(yv) {
                *qi -= a * yi;
            }
            alphas.push(a);
        }
        if let Some((sv, yv, _)) = pairs.back() {
            let gamma = dot(sv, yv) / dot(yv, yv);
            q.iter_mut().for_each(|v| *v *= gamma);
        }
        for ((sv, yv, rho), a) in pairs.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(yv, &q);
            for (qi, si) in q.iter_mut().zip(sv) {
                *qi += (a - b) * si;
            }
        }
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut d0 = dot(&g, &dir);
        if !(d0 < 0.0) {
            // not a descent direction: restart from steepest descent
            pairs.clear();
            dir = g.iter().map(|v| -v).collect();
            d0 = -dot(&g, &g);
        }
        let alpha0 = if pairs.is_empty() {
            (1.0 / dot(&g, &g).sqrt()).min(1.0)
        } else {
            1.0
        };

        let Some(next) = strong_wolfe(&mut ctr, &x, f, d0, &dir, alpha0, s)? else {
            let t = if ctr.exhausted() {
                Termination::MaxEvaluations
            } else {
                Termination::LineSearchFailed
            };
            return finish(x, f, iterations, ctr.evals, t);
        };

        let sv: Vec<f64> = next.x.iter().zip(&x).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = next.g.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&sv, &yv);
        if sy > 1e-12 * dot(&yv, &yv).max(f64::MIN_POSITIVE) {
            if pairs.len() == s.history {
                pairs.pop_front();
            }
            pairs.push_back((sv, yv, 1.0 / sy));
        }
        let f_prev = f;
        x = next.x;
        f = next.f;
        g = next.g;
        iterations += 1;
        observe(&LbfgsIterate {
            iteration: iterations,
            x: &x,
            f,
            grad_inf: inf_norm(&g),
        });
        if (f_prev - f) / f_prev.abs().max(f.abs()).max(1.0) <= s.tolerance {
            return finish(x, f, iterations, ctr.evals, Termination::RelativeDecrease);
        }
    }
}
