//! Shared helpers for the integration and acceptance suites.
#![allow(dead_code)]

use std::f64::consts::PI;

use transtherm_core::solver::{self, FnProblem, GridSpec};

/// Capacity, conductivity and sink of the transformer model (time in hours).
pub const CAP: f64 = 500.0;
pub const K: f64 = 50.0;
pub const R: f64 = 1000.0;

/// `u = sin(pi x) e^-t` with the forcing that makes it exact.
pub fn mms_1d() -> FnProblem {
    FnProblem {
        dim: 1,
        capacity: CAP,
        conductivity: K,
        reaction: R,
        source: Box::new(|x, t| (-CAP + K * PI * PI + R) * (PI * x[0]).sin() * (-t).exp()),
        boundary: Box::new(|_, _| 0.0),
        initial: Some(Box::new(|x| (PI * x[0]).sin())),
    }
}

pub fn mms_1d_exact(x: f64, t: f64) -> f64 {
    (PI * x).sin() * (-t).exp()
}

/// `u = sin(pi x) sin(pi y) e^-t`.
pub fn mms_2d() -> FnProblem {
    FnProblem {
        dim: 2,
        capacity: CAP,
        conductivity: K,
        reaction: R,
        source: Box::new(|x, t| {
            (-CAP + 2.0 * K * PI * PI + R) * (PI * x[0]).sin() * (PI * x[1]).sin() * (-t).exp()
        }),
        boundary: Box::new(|_, _| 0.0),
        initial: Some(Box::new(|x| (PI * x[0]).sin() * (PI * x[1]).sin())),
    }
}

pub fn mms_2d_exact(x: f64, y: f64, t: f64) -> f64 {
    (PI * x).sin() * (PI * y).sin() * (-t).exp()
}

/// Smooth solution with time-dependent data on every edge:
/// `u = (1 + x^2 + 0.5 y) (2 + sin t)`.
pub fn mms_2d_moving_boundary() -> FnProblem {
    let exact = |x: &[f64], t: f64| (1.0 + x[0] * x[0] + 0.5 * x[1]) * (2.0 + t.sin());
    FnProblem {
        dim: 2,
        capacity: CAP,
        conductivity: K,
        reaction: R,
        source: Box::new(move |x, t| {
            let space = 1.0 + x[0] * x[0] + 0.5 * x[1];
            let ut = space * t.cos();
            let lap = 2.0 * (2.0 + t.sin());
            CAP * ut - K * lap + R * exact(x, t)
        }),
        boundary: Box::new(move |x, t| exact(x, t)),
        initial: Some(Box::new(move |x| exact(x, 0.0))),
    }
}

/// Discrete L2 error (RMS over nodes) at the final time.
pub fn final_error(f: &solver::FieldSeries, exact: impl Fn(&[f64; 2], f64) -> f64) -> f64 {
    let l = f.n_levels() - 1;
    let t = f.times()[l];
    let lvl = f.level(l);
    let sum: f64 = (0..f.n_space())
        .map(|c| {
            let e = lvl[c] - exact(&f.node_coords(c), t);
            e * e
        })
        .sum();
    (sum / f.n_space() as f64).sqrt()
}

/// Observed orders between successive dyadic refinements of space and time.
pub fn observed_orders(errors: &[f64]) -> Vec<f64> {
    errors.windows(2).map(|w| (w[0] / w[1]).log2()).collect()
}

/// Runs a problem on `nx = base*2^m + 1`, `nt = base_t*2^m` for m = 0..levels.
pub fn refinement_errors(
    problem: &FnProblem,
    base_nx: usize,
    base_nt: usize,
    t_end: f64,
    levels: usize,
    exact: impl Fn(&[f64; 2], f64) -> f64 + Copy,
) -> Vec<f64> {
    (0..levels)
        .map(|m| {
            let g = GridSpec::new(base_nx * (1 << m) + 1, base_nt * (1 << m), t_end);
            let f = if problem.dim == 1 {
                solver::solve_problem_1d(problem, &g)
            } else {
                solver::solve_problem_2d(problem, &g)
            }
            .expect("solve");
            final_error(&f, exact)
        })
        .collect()
}
