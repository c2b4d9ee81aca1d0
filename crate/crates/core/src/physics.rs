//! Heat-diffusion model of the transformer: physical constants, the
//! load-dependent source term, Dirichlet boundary values and access to the
//! ambient/top-oil/load drive series.
//!
//! The governing equation on the unit interval or unit square is
//!
//! ```text
//! rho c_p du/dt = k Lap(u) + q,   q = P0 + nu K(t)^2 P_x(x) - h (u - T_a(t))
//! ```
//!
//! Powers are used verbatim on the nondimensional unit domain. Time is
//! measured in hours everywhere in the public API; see [`PhysicsSpec::capacity_per_hour`].

use std::f64::consts::PI;
use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used to decide whether a coordinate lies on the boundary.
pub const BOUNDARY_TOL: f64 = 1e-12;

const SECONDS_PER_HOUR: f64 = 3600.0;

/// Physical parameters of the diffusion problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicsSpec {
    /// Spatial dimension, 1 or 2.
    pub dim: usize,
    /// Thermal conductivity, W/(m K).
    pub k: f64,
    /// Density, kg/m^3.
    pub rho: f64,
    /// Heat capacity, J/(kg K).
    pub cp: f64,
    /// Convective heat transfer coefficient, W/(m^2 K).
    pub h: f64,
    /// No-load loss, W.
    pub p0: f64,
    /// Rated load loss, W.
    pub nu: f64,
}

impl PhysicsSpec {
    /// Reference transformer parameters. The convective coefficient differs
    /// between the 1D (1000) and 2D (2000) models.
    pub fn transformer(dim: usize) -> Result<Self> {
        let h = match dim {
            1 => 1000.0,
            2 => 2000.0,
            _ => return Err(Error::Argument(format!("dim must be 1 or 2, got {dim}"))),
        };
        Ok(Self {
            dim,
            k: 50.0,
            rho: 900.0,
            cp: 2000.0,
            h,
            p0: 1500.0,
            nu: 83000.0,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim != 1 && self.dim != 2 {
            return Err(Error::Argument(format!("dim must be 1 or 2, got {}", self.dim)));
        }
        let fields = [
            ("k", self.k),
            ("rho", self.rho),
            ("cp", self.cp),
            ("h", self.h),
            ("p0", self.p0),
            ("nu", self.nu),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Argument(format!("{name} must be finite and > 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Volumetric heat capacity expressed per hour, `rho c_p / 3600`.
    ///
    /// Multiplying `du/dt` (in K/h) by this value yields W-based units, so the
    /// equation can be integrated with time in hours.
    pub fn capacity_per_hour(&self) -> f64 {
        self.rho * self.cp / SECONDS_PER_HOUR
    }
}

/// Hourly (or otherwise sampled) ambient temperature, top-oil temperature and
/// load factor.
#[derive(Debug, Clone, PartialEq)]
pub struct DriveSeries {
    t: Vec<f64>,
    ta: Vec<f64>,
    to: Vec<f64>,
    kf: Vec<f64>,
}

/// Drive values at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriveSample {
    pub ta: f64,
    pub to: f64,
    /// Average of `ta` and `to`; the value on the y = 0 and y = 1 edges.
    pub tav: f64,
    pub kf: f64,
}

impl DriveSample {
    pub fn new(ta: f64, to: f64, kf: f64) -> Self {
        Self {
            ta,
            to,
            tav: (ta + to) / 2.0,
            kf,
        }
    }
}

impl DriveSeries {
    pub fn new(t: Vec<f64>, ta: Vec<f64>, to: Vec<f64>, kf: Vec<f64>) -> Result<Self> {
        let n = t.len();
        if n < 2 {
            return Err(Error::Argument(format!("drive series needs >= 2 samples, got {n}")));
        }
        if ta.len() != n || to.len() != n || kf.len() != n {
            return Err(Error::Argument(format!(
                "drive arrays differ in length: t={n}, ta={}, to={}, k={}",
                ta.len(),
                to.len(),
                kf.len()
            )));
        }
        if t.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Argument("drive times must be strictly increasing".into()));
        }
        let all = t.iter().chain(&ta).chain(&to).chain(&kf);
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::Argument("drive series contains non-finite values".into()));
        }
        if let Some(i) = kf.iter().position(|&k| k < 0.0) {
            return Err(Error::Argument(format!("negative load factor {} at sample {i}", kf[i])));
        }
        Ok(Self { t, ta, to, kf })
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.t
    }

    pub fn ambient(&self) -> &[f64] {
        &self.ta
    }

    pub fn top_oil(&self) -> &[f64] {
        &self.to
    }

    pub fn load(&self) -> &[f64] {
        &self.kf
    }

    pub fn t_first(&self) -> f64 {
        self.t[0]
    }

    pub fn t_last(&self) -> f64 {
        self.t[self.t.len() - 1]
    }

    pub fn sample(&self, i: usize) -> DriveSample {
        DriveSample::new(self.ta[i], self.to[i], self.kf[i])
    }

    /// Linearly interpolated drive at time `t` (hours). No extrapolation.
    pub fn at(&self, t: f64) -> Result<DriveSample> {
        drive_at(self, t)
    }

    /// Parses the `t_hours,ta_c,to_c,k_pu` CSV format.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let expected = ["t_hours", "ta_c", "to_c", "k_pu"];
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(Error::Format(format!(
                "drive header must be `{}`, got `{}`",
                expected.join(","),
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let (mut t, mut ta, mut to, mut kf) = (vec![], vec![], vec![], vec![]);
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let parse = |i: usize| -> Result<f64> {
                rec[i].parse::<f64>().map_err(|e| {
                    Error::Format(format!("row {}: column {}: {e}", line + 2, expected[i]))
                })
            };
            t.push(parse(0)?);
            ta.push(parse(1)?);
            to.push(parse(2)?);
            kf.push(parse(3)?);
        }
        Self::new(t, ta, to, kf)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["t_hours", "ta_c", "to_c", "k_pu"])?;
        for i in 0..self.len() {
            w.write_record(&[
                self.t[i].to_string(),
                self.ta[i].to_string(),
                self.to[i].to_string(),
                self.kf[i].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn check_in_unit_box(x: &[f64], dim: usize) -> Result<()> {
    if x.len() != dim {
        return Err(Error::Argument(format!(
            "point has {} coordinates, expected {dim}",
            x.len()
        )));
    }
    for &c in x {
        if !(-BOUNDARY_TOL..=1.0 + BOUNDARY_TOL).contains(&c) {
            return Err(Error::Domain(format!("point {x:?} outside the unit domain")));
        }
    }
    Ok(())
}

/// Spatial profile of the load loss: `0.5 sin(3 pi x) + 0.5` in 1D, 1 in 2D.
pub fn load_loss_spatial(x: &[f64], dim: usize) -> Result<f64> {
    if dim != 1 && dim != 2 {
        return Err(Error::Argument(format!("dim must be 1 or 2, got {dim}")));
    }
    check_in_unit_box(x, dim)?;
    Ok(spatial_profile(x))
}

// Unchecked variant used by hot loops that have already validated the point.
#[inline]
pub(crate) fn spatial_profile(x: &[f64]) -> f64 {
    if x.len() == 1 {
        0.5 * (3.0 * PI * x[0]).sin() + 0.5
    } else {
        1.0
    }
}

/// Temporal part of the load loss, `nu K^2`.
pub fn load_loss_temporal(kf: f64, nu: f64) -> Result<f64> {
    if !(kf >= 0.0) {
        return Err(Error::Domain(format!("load factor must be >= 0, got {kf}")));
    }
    Ok(nu * kf * kf)
}

/// Heat source `P0 + P_K(x, t) - h (u - T_a)`.
pub fn source_q(spec: &PhysicsSpec, x: &[f64], u: f64, drive: &DriveSample) -> Result<f64> {
    let pk = load_loss_temporal(drive.kf, spec.nu)? * load_loss_spatial(x, spec.dim)?;
    Ok(spec.p0 + pk - spec.h * (u - drive.ta))
}

/// The part of the source that does not depend on `u`:
/// `q = source_offset - h u` with `source_offset = P0 + P_K + h T_a`.
#[inline]
pub(crate) fn source_offset(spec: &PhysicsSpec, x: &[f64], drive: &DriveSample) -> f64 {
    spec.p0 + spec.nu * drive.kf * drive.kf * spatial_profile(x) + spec.h * drive.ta
}

/// Dirichlet value at a boundary point.
///
/// The x = 0 edge carries the ambient temperature, the x = 1 edge the top-oil
/// temperature, and (in 2D) the y = 0 and y = 1 edges their average. The
/// x-edges win at the four corners.
pub fn boundary_value(spec: &PhysicsSpec, x: &[f64], drive: &DriveSample) -> Result<f64> {
    check_in_unit_box(x, spec.dim)?;
    boundary_value_unchecked(x, drive).ok_or_else(|| {
        Error::Precondition(format!("point {x:?} is not on the domain boundary"))
    })
}

pub(crate) fn boundary_value_unchecked(x: &[f64], drive: &DriveSample) -> Option<f64> {
    let on = |c: f64, edge: f64| (c - edge).abs() <= BOUNDARY_TOL;
    if on(x[0], 0.0) {
        Some(drive.ta)
    } else if on(x[0], 1.0) {
        Some(drive.to)
    } else if x.len() == 2 && (on(x[1], 0.0) || on(x[1], 1.0)) {
        Some(drive.tav)
    } else {
        None
    }
}

/// Linear interpolation of the drive at time `t`.
pub fn drive_at(series: &DriveSeries, t: f64) -> Result<DriveSample> {
    let (first, last) = (series.t_first(), series.t_last());
    if !(t >= first && t <= last) {
        return Err(Error::Range(format!(
            "t = {t} h outside drive range [{first}, {last}]"
        )));
    }
    // index of the first sample strictly after t
    let hi = series.t.partition_point(|&s| s <= t);
    let lo = hi - 1;
    if series.t[lo] == t || hi == series.len() {
        return Ok(series.sample(lo));
    }
    let w = (t - series.t[lo]) / (series.t[hi] - series.t[lo]);
    let lerp = |v: &[f64]| v[lo] + w * (v[hi] - v[lo]);
    Ok(DriveSample::new(lerp(&series.ta), lerp(&series.to), lerp(&series.kf)))
}

/// Deterministic synthetic drive, sampled hourly on `0..=hours`.
///
/// Ambient follows a daily sinusoid in [0, 15] C, the load a daily profile in
/// [0.4, 1.0] p.u. (both with seeded Gaussian noise, clamped to range), and the
/// top-oil temperature is `ta + 30 + 15 k`.
pub fn synth_drive(seed: u64, hours: usize) -> Result<DriveSeries> {
    if hours < 2 {
        return Err(Error::Argument(format!("hours must be >= 2, got {hours}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ta_noise = Normal::new(0.0, 0.6).expect("valid sigma");
    let k_noise = Normal::new(0.0, 0.03).expect("valid sigma");
    let day = 2.0 * PI / 24.0;

    let n = hours + 1;
    let (mut t, mut ta, mut to, mut kf) = (
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
    );
    for i in 0..n {
        let th = i as f64;
        // ambient peaks mid-afternoon, load peaks early evening
        let a = 7.5 + 6.5 * (day * (th - 9.0)).sin() + ta_noise.sample(&mut rng);
        let k = 0.7 + 0.25 * (day * (th - 12.0)).sin() + k_noise.sample(&mut rng);
        let a = a.clamp(0.0, 15.0);
        let k = k.clamp(0.4, 1.0);
        t.push(th);
        ta.push(a);
        kf.push(k);
        to.push(a + 30.0 + 15.0 * k);
    }
    DriveSeries::new(t, ta, to, kf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn drive(ta: f64, to: f64, kf: f64) -> DriveSample {
        DriveSample::new(ta, to, kf)
    }

    #[test]
    fn spatial_profile_extrema() {
        assert_abs_diff_eq!(load_loss_spatial(&[1.0 / 6.0], 1).unwrap(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(load_loss_spatial(&[0.5], 1).unwrap(), 0.0, epsilon = 1e-15);
        assert_eq!(load_loss_spatial(&[0.3, 0.8], 2).unwrap(), 1.0);
        assert!(matches!(load_loss_spatial(&[1.5], 1), Err(Error::Domain(_))));
        assert!(matches!(load_loss_spatial(&[0.5, -0.1], 2), Err(Error::Domain(_))));
    }

    #[test]
    fn spatial_profile_range_on_dense_scan() {
        for i in 0..=1000 {
            let v = load_loss_spatial(&[i as f64 / 1000.0], 1).unwrap();
            assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn temporal_load_loss() {
        assert_eq!(load_loss_temporal(0.0, 83000.0).unwrap(), 0.0);
        assert_eq!(load_loss_temporal(1.0, 83000.0).unwrap(), 83000.0);
        assert_eq!(load_loss_temporal(0.5, 83000.0).unwrap(), 20750.0);
        assert!(matches!(load_loss_temporal(-0.1, 83000.0), Err(Error::Domain(_))));
    }

    #[test]
    fn source_examples() {
        let spec = PhysicsSpec::transformer(1).unwrap();
        assert_eq!(source_q(&spec, &[0.3], 20.0, &drive(20.0, 50.0, 0.0)).unwrap(), 1500.0);
        let q = source_q(&spec, &[1.0 / 6.0], 20.0, &drive(20.0, 50.0, 1.0)).unwrap();
        assert_abs_diff_eq!(q, 84500.0, epsilon = 1e-9);
        assert_eq!(source_q(&spec, &[0.3], 21.0, &drive(20.0, 50.0, 0.0)).unwrap(), 500.0);
    }

    #[test]
    fn source_offset_matches_source() {
        let spec = PhysicsSpec::transformer(1).unwrap();
        let d = drive(7.0, 44.0, 0.8);
        let x = [0.37];
        let q = source_q(&spec, &x, 55.0, &d).unwrap();
        assert_abs_diff_eq!(q, source_offset(&spec, &x, &d) - spec.h * 55.0, epsilon = 1e-9);
    }

    #[test]
    fn boundary_examples() {
        let s1 = PhysicsSpec::transformer(1).unwrap();
        let s2 = PhysicsSpec::transformer(2).unwrap();
        let d = drive(20.0, 60.0, 0.7);
        assert_eq!(boundary_value(&s1, &[0.0], &d).unwrap(), 20.0);
        assert_eq!(boundary_value(&s1, &[1.0], &d).unwrap(), 60.0);
        assert_eq!(boundary_value(&s2, &[0.4, 0.0], &d).unwrap(), 40.0);
        assert_eq!(boundary_value(&s2, &[1.0, 0.7], &d).unwrap(), 60.0);
        // corners follow the x-edges
        assert_eq!(boundary_value(&s2, &[0.0, 0.0], &d).unwrap(), 20.0);
        assert_eq!(boundary_value(&s2, &[1.0, 1.0], &d).unwrap(), 60.0);
        assert!(matches!(boundary_value(&s1, &[0.5], &d), Err(Error::Precondition(_))));
        assert!(matches!(boundary_value(&s2, &[0.5, 0.5], &d), Err(Error::Precondition(_))));
    }

    #[test]
    fn drive_interpolation() {
        let s = DriveSeries::new(
            vec![0.0, 1.0, 2.0],
            vec![10.0, 20.0, 5.0],
            vec![40.0, 50.0, 45.0],
            vec![0.5, 1.0, 0.6],
        )
        .unwrap();
        assert_eq!(drive_at(&s, 1.0).unwrap(), s.sample(1));
        assert_eq!(drive_at(&s, 2.0).unwrap(), s.sample(2));
        let mid = drive_at(&s, 0.5).unwrap();
        assert_eq!(mid.ta, 15.0);
        assert_eq!(mid.tav, (mid.ta + mid.to) / 2.0);
        assert!(matches!(drive_at(&s, 3.0), Err(Error::Range(_))));
        assert!(matches!(drive_at(&s, -0.5), Err(Error::Range(_))));
    }

    #[test]
    fn drive_series_validation() {
        let v = || vec![1.0, 2.0];
        assert!(DriveSeries::new(vec![0.0], vec![1.0], vec![1.0], vec![1.0]).is_err());
        assert!(DriveSeries::new(vec![0.0, 0.0], v(), v(), v()).is_err());
        assert!(DriveSeries::new(vec![0.0, 1.0], v(), v(), vec![0.5, -0.1]).is_err());
        assert!(DriveSeries::new(vec![0.0, 1.0], v(), vec![1.0], v()).is_err());
    }

    #[test]
    fn synthetic_drive_properties() {
        let a = synth_drive(1, 100).unwrap();
        let b = synth_drive(1, 100).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 101);
        assert!(a.load().iter().all(|k| (0.4..=1.0).contains(k)));
        assert!(a.ambient().iter().all(|t| (0.0..=15.0).contains(t)));
        for i in 0..a.len() {
            assert!(a.top_oil()[i] > a.ambient()[i]);
        }
        assert_ne!(synth_drive(2, 100).unwrap(), a);
        assert!(synth_drive(1, 1).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let a = synth_drive(7, 30).unwrap();
        let mut buf = Vec::new();
        a.write_csv(&mut buf).unwrap();
        assert!(buf.starts_with(b"t_hours,ta_c,to_c,k_pu\n"));
        let b = DriveSeries::read_csv(buf.as_slice()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn csv_rejects_bad_header() {
        let text = "t,ta,to,k\n0,1,2,0.5\n1,1,2,0.5\n";
        assert!(matches!(DriveSeries::read_csv(text.as_bytes()), Err(Error::Format(_))));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn source_is_affine_in_u(u in -50.0f64..150.0, du in -20.0f64..20.0, x in 0.0f64..1.0, k in 0.0f64..1.2) {
                let spec = PhysicsSpec::transformer(1).unwrap();
                let d = DriveSample::new(10.0, 45.0, k);
                let q0 = source_q(&spec, &[x], u, &d).unwrap();
                let q1 = source_q(&spec, &[x], u + du, &d).unwrap();
                prop_assert!((q1 - q0 + spec.h * du).abs() <= 1e-9 * (1.0 + q0.abs()));
            }

            #[test]
            fn horizontal_edges_agree(x in 0.0f64..1.0, ta in 0.0f64..15.0, to in 30.0f64..60.0) {
                let spec = PhysicsSpec::transformer(2).unwrap();
                let d = DriveSample::new(ta, to, 0.5);
                prop_assert_eq!(
                    boundary_value(&spec, &[x, 0.0], &d).unwrap(),
                    boundary_value(&spec, &[x, 1.0], &d).unwrap()
                );
            }
        }
    }
}
