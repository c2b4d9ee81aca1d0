//! Run configuration, field CSV files and field comparison.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::physics::{self, DriveSeries, PhysicsSpec};
use crate::pinn::{FieldModel, TrainConfig};
use crate::placement::PlacementConfig;
use crate::solver::{self, FieldSeries, GridSpec};

/// Placement part of a run configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlacementSettings {
    pub n_min: usize,
    pub n_max: usize,
    pub d: f64,
    pub d1: f64,
    #[serde(default = "default_big_m")]
    pub big_m: f64,
    #[serde(default)]
    pub signed_costs: bool,
    /// Candidate grid size per axis (`ny` unused in 1D).
    pub nx: usize,
    #[serde(default = "default_ny")]
    pub ny: usize,
    /// Boundary margin of the candidate grid; defaults to `d`.
    #[serde(default)]
    pub margin: Option<f64>,
}

fn default_big_m() -> f64 {
    1000.0
}

fn default_ny() -> usize {
    1
}

impl PlacementSettings {
    pub fn config(&self) -> PlacementConfig {
        PlacementConfig {
            n_min: self.n_min,
            n_max: self.n_max,
            d: self.d,
            d1: self.d1,
            big_m: self.big_m,
            signed_costs: self.signed_costs,
        }
    }

    pub fn margin(&self) -> f64 {
        self.margin.unwrap_or(self.d)
    }
}

/// Everything a pipeline run needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub physics: PhysicsSpec,
    pub grid: GridSpec,
    pub train: TrainConfig,
    pub placement: PlacementSettings,
    /// Analysis horizon, hours; the reference grid must end here.
    pub horizon: f64,
    /// Drive CSV; a synthetic drive is generated when absent.
    #[serde(default)]
    pub drive: Option<PathBuf>,
    /// Seed of the synthetic drive.
    #[serde(default = "default_seed")]
    pub drive_seed: u64,
    /// Times at which field snapshots are written.
    #[serde(default)]
    pub snapshots: Vec<f64>,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
}

fn default_seed() -> u64 {
    1
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl RunConfig {
    /// Full-size defaults over 100 h.
    pub fn default_for(dim: usize) -> Result<Self> {
        let physics = PhysicsSpec::transformer(dim)?;
        let (grid, snapshots, placement) = if dim == 1 {
            (
                GridSpec {
                    nx: 101,
                    nt: 2000,
                    t_end: 100.0,
                    save_every: 10,
                },
                vec![15.0, 30.0, 50.0, 65.0, 80.0],
                PlacementSettings {
                    n_min: 5,
                    n_max: 10,
                    d: 0.05,
                    d1: 0.2,
                    big_m: default_big_m(),
                    signed_costs: false,
                    nx: 91,
                    ny: 1,
                    margin: None,
                },
            )
        } else {
            (
                GridSpec {
                    nx: 41,
                    nt: 1000,
                    t_end: 100.0,
                    save_every: 10,
                },
                vec![10.0, 50.0, 80.0],
                PlacementSettings {
                    n_min: 5,
                    n_max: 10,
                    d: 0.05,
                    d1: 0.2,
                    big_m: default_big_m(),
                    signed_costs: false,
                    nx: 10,
                    ny: 10,
                    margin: None,
                },
            )
        };
        Ok(Self {
            physics,
            grid,
            train: TrainConfig::full_scale(dim),
            placement,
            horizon: 100.0,
            drive: None,
            drive_seed: default_seed(),
            snapshots,
            out_dir: default_out(),
        })
    }

    /// Reduced training profile over a 24 h horizon.
    pub fn desk_scale(mut self) -> Self {
        let dim = self.physics.dim;
        let seed = self.train.seed;
        self.train = TrainConfig {
            seed,
            ..TrainConfig::desk(dim)
        };
        let steps_per_hour = self.grid.nt as f64 / self.grid.t_end;
        self.horizon = 24.0;
        self.grid.t_end = 24.0;
        self.grid.nt = (24.0 * steps_per_hour).round().max(1.0) as usize;
        self.snapshots.retain(|&t| t <= 24.0);
        if self.snapshots.is_empty() {
            self.snapshots = vec![6.0, 12.0, 18.0];
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.physics.validate()?;
        self.grid.validate()?;
        self.train.validate()?;
        self.placement.config().validate()?;
        let dim = self.physics.dim;
        if self.placement.nx == 0 || (dim == 2 && self.placement.ny == 0) {
            return Err(Error::Argument("placement grid needs nx, ny >= 1".into()));
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(Error::Argument(format!("horizon must be > 0, got {}", self.horizon)));
        }
        if (self.grid.t_end - self.horizon).abs() > 1e-9 * self.horizon {
            return Err(Error::Argument(format!(
                "grid t_end ({}) must equal the horizon ({})",
                self.grid.t_end, self.horizon
            )));
        }
        if let Some(t) = self.snapshots.iter().find(|&&t| !(t >= 0.0 && t <= self.horizon)) {
            return Err(Error::Argument(format!("snapshot time {t} outside [0, {}]", self.horizon)));
        }
        if let Some(p) = &self.drive {
            if !p.is_file() {
                return Err(Error::Io(std::io::Error::new(
                    std::io::ErrorKind::NotFound,
                    format!("drive file {} not found", p.display()),
                )));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let cfg: Self = serde_json::from_str(&text)?;
        Ok(cfg)
    }

    /// The configured drive, or the synthetic one covering the horizon.
    pub fn drive_series(&self) -> Result<DriveSeries> {
        match &self.drive {
            Some(p) => DriveSeries::read_csv(fs::File::open(p)?),
            None => physics::synth_drive(self.drive_seed, self.horizon.ceil() as usize),
        }
    }
}

/// Writes `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let dir = dir.unwrap_or_else(|| Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut w = std::io::BufWriter::new(tmp.as_file_mut());
        f(&mut w)?;
        w.flush()?;
    }
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

fn field_header(dim: usize) -> Vec<&'static str> {
    if dim == 1 {
        vec!["x", "t_hours", "u_c"]
    } else {
        vec!["x", "y", "t_hours", "u_c"]
    }
}

fn write_rows<W: Write>(f: &FieldSeries, levels: &[usize], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(field_header(f.dim()))?;
    for &l in levels {
        let t = f.times()[l].to_string();
        for (node, u) in f.level(l).iter().enumerate() {
            let c = f.node_coords(node);
            let mut row = vec![c[0].to_string()];
            if f.dim() == 2 {
                row.push(c[1].to_string());
            }
            row.push(t.clone());
            row.push(u.to_string());
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Every stored level in the `x[,y],t_hours,u_c` format.
pub fn write_field_csv<W: Write>(f: &FieldSeries, writer: W) -> Result<()> {
    let all: Vec<usize> = (0..f.n_levels()).collect();
    write_rows(f, &all, writer)
}

/// The level stored at `t` in the same format.
pub fn write_snapshot_csv<W: Write>(f: &FieldSeries, t: f64, writer: W) -> Result<()> {
    let l = f
        .level_of(t)
        .ok_or_else(|| Error::Range(format!("no stored level at t = {t}")))?;
    write_rows(f, &[l], writer)
}

/// Reads a field written by [`write_field_csv`]. Rows must be level-major
/// with x varying fastest on a uniform grid over the unit domain.
pub fn read_field_csv<R: Read>(reader: R) -> Result<FieldSeries> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    let dim = match header.len() {
        3 if header == field_header(1) => 1,
        4 if header == field_header(2) => 2,
        _ => {
            return Err(Error::Format(format!(
                "field header must be `x,t_hours,u_c` or `x,y,t_hours,u_c`, got `{}`",
                header.join(",")
            )))
        }
    };
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|e| Error::Format(format!("row {}: {e}", line + 2)))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Format("field file has no rows".into()));
    }
    let mut times: Vec<f64> = Vec::new();
    for r in &rows {
        let t = r[dim];
        if times.last() != Some(&t) {
            times.push(t);
        }
    }
    let n_space = rows.len() / times.len();
    let nx = (n_space as f64).powf(1.0 / dim as f64).round() as usize;
    if nx < 3 || nx.pow(dim as u32) * times.len() != rows.len() {
        return Err(Error::Format(format!(
            "{} rows do not form a uniform {dim}D grid over {} levels",
            rows.len(),
            times.len()
        )));
    }
    let grid = GridSpec::new(nx, times.len().saturating_sub(1).max(1), *times.last().unwrap());
    let dx = grid.dx();
    let mut values = Vec::with_capacity(rows.len());
    for (k, r) in rows.iter().enumerate() {
        let (l, node) = (k / n_space, k % n_space);
        let expect = [(node % nx) as f64 * dx, (node / nx) as f64 * dx];
        let coords_ok = (0..dim).all(|a| (r[a] - expect[a]).abs() <= 1e-9);
        if !coords_ok || r[dim] != times[l] {
            return Err(Error::Format(format!(
                "row {} is out of order or off the grid",
                k + 2
            )));
        }
        values.push(r[dim + 1]);
    }
    if times.len() == 1 {
        // single snapshot: keep its own time as the only level
        return FieldSeries::new(GridSpec { t_end: times[0].max(1e-12), ..grid }, dim, times, values);
    }
    FieldSeries::new(grid, dim, times, values)
}

pub fn read_field_file(path: &Path) -> Result<FieldSeries> {
    read_field_csv(fs::File::open(path)?)
}

/// Model predictions on the nodes and levels of `like`.
pub fn predict_field<M: FieldModel + ?Sized>(
    model: &M,
    drive: &DriveSeries,
    like: &FieldSeries,
) -> Result<FieldSeries> {
    use rayon::prelude::*;
    let dim = like.dim();
    if model.dim() != dim {
        return Err(Error::Argument("model and field dimensions differ".into()));
    }
    let n_space = like.n_space();
    let values = (0..like.n_levels() * n_space)
        .into_par_iter()
        .map(|k| {
            let (l, node) = (k / n_space, k % n_space);
            let t = like.times()[l];
            let c = like.node_coords(node);
            model.value(&c[..dim], t, &physics::drive_at(drive, t)?)
        })
        .collect::<Result<Vec<f64>>>()?;
    FieldSeries::new(*like.grid(), dim, like.times().to_vec(), values)
}

/// Errors of one field against another.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    /// Relative L2 over every node and level of the reference.
    pub rel_l2_field: f64,
    /// Relative L2 of the x = 1 trace.
    pub rel_l2_top: f64,
    pub slices: Vec<SliceError>,
    /// Requested slice times outside either field.
    pub skipped_times: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceError {
    pub t_hours: f64,
    pub rel_l2: f64,
}

/// Compares `candidate` against `reference`, sampling the candidate on the
/// reference nodes and levels that it covers.
pub fn compare_fields(candidate: &FieldSeries, reference: &FieldSeries, times: &[f64]) -> Result<Comparison> {
    let dim = reference.dim();
    if candidate.dim() != dim {
        return Err(Error::Argument(format!(
            "cannot compare a {}D field with a {dim}D field",
            candidate.dim()
        )));
    }
    let (c0, c1) = (candidate.times()[0], *candidate.times().last().unwrap());
    let covered: Vec<usize> = (0..reference.n_levels())
        .filter(|&l| (c0..=c1).contains(&reference.times()[l]))
        .collect();
    if covered.is_empty() {
        return Err(Error::Range("the fields share no time levels".into()));
    }
    let nx = reference.nx();
    let n_space = reference.n_space();
    let sample_level = |t: f64| -> Result<(Vec<f64>, Vec<f64>)> {
        let lvl = level_values(reference, t)?;
        if candidate.nx() == nx {
            if let Some(l) = candidate.level_of(t) {
                return Ok((candidate.level(l).to_vec(), lvl));
            }
        }
        let cand = (0..n_space)
            .map(|node| {
                let c = reference.node_coords(node);
                solver::sample_series(candidate, &c[..dim], t)
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok((cand, lvl))
    };
    let top = |v: &[f64]| -> f64 {
        if dim == 1 {
            v[nx - 1]
        } else {
            (0..nx).map(|j| v[j * nx + nx - 1]).sum::<f64>() / nx as f64
        }
    };
    let (mut a, mut b, mut ta, mut tb) = (vec![], vec![], vec![], vec![]);
    for &l in &covered {
        let (cand, refv) = sample_level(reference.times()[l])?;
        ta.push(top(&cand));
        tb.push(top(&refv));
        a.extend(cand);
        b.extend(refv);
    }
    let (r0, r1) = (reference.times()[0], *reference.times().last().unwrap());
    let mut slices = Vec::new();
    let mut skipped_times = Vec::new();
    for &t in times {
        if t < c0.max(r0) || t > c1.min(r1) {
            skipped_times.push(t);
            continue;
        }
        let (cand, refv) = sample_level(t)?;
        slices.push(SliceError {
            t_hours: t,
            rel_l2: solver::relative_l2(&cand, &refv)?,
        });
    }
    Ok(Comparison {
        rel_l2_field: solver::relative_l2(&a, &b)?,
        rel_l2_top: solver::relative_l2(&ta, &tb)?,
        slices,
        skipped_times,
    })
}

/// Nodal values of `f` at time `t` (linear between stored levels).
fn level_values(f: &FieldSeries, t: f64) -> Result<Vec<f64>> {
    if let Some(l) = f.level_of(t) {
        return Ok(f.level(l).to_vec());
    }
    (0..f.n_space())
        .map(|node| {
            let c = f.node_coords(node);
            solver::sample_series(f, &c[..f.dim()], t)
        })
        .collect()
}

/// Default comparison slice times per dimension.
pub fn default_slice_times(dim: usize) -> Vec<f64> {
    if dim == 1 {
        vec![15.0, 30.0, 50.0, 65.0, 80.0]
    } else {
        vec![10.0, 50.0, 80.0]
    }
}
