//! `transtherm`: batch pipeline from drive data to sensor placements.
//!
//! ```text
//! transtherm gen-data  -> drive.csv
//! transtherm simulate  -> reference.csv, snapshot_t*.csv, reference_meta.json
//! transtherm train     -> checkpoint.json, train_report.csv, pinn_field.csv, train_summary.json
//! transtherm place     -> placement_model<m>_<source>.json / .csv
//! transtherm compare A B -> compare.json
//! ```
//!
//! Exit codes: 0 success, 1 usage, 2 I/O, 3 solver, 4 training,
//! 5 infeasible placement, 6 comparison.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;
use transtherm_core::io::{self, RunConfig};
use transtherm_core::pinn::{self, Pinn};
use transtherm_core::placement::{self, Model, PlacementReport, ScoreSource};
use transtherm_core::{physics, solver, DriveSeries, Error, FieldSeries};

#[derive(Parser, Debug)]
#[command(name = "transtherm", version, about = "Transformer thermal PINN and sensor placement")]
struct Cli {
    /// JSON run configuration; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for the synthetic drive and the training run.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Reduced training profile (24 h horizon, 4x20 network).
    #[arg(long, global = true)]
    desk_scale: bool,
    /// Spatial dimension of the default configuration.
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=2))]
    dim: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic drive series.
    GenData {
        /// Length in hours (defaults to the horizon).
        #[arg(long)]
        hours: Option<usize>,
    },
    /// Compute the finite-difference reference field.
    Simulate,
    /// Train the PINN against the reference.
    Train,
    /// Choose sensor positions.
    Place {
        #[arg(long, value_enum, default_value_t = Source::Pinn)]
        source: Source,
        #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u8).range(1..=3))]
        model: u8,
    },
    /// Compare a candidate field against a reference field.
    Compare {
        reference: PathBuf,
        candidate: PathBuf,
        /// Slice times, hours (comma separated).
        #[arg(long, value_delimiter = ',')]
        times: Option<Vec<f64>>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Source {
    Pinn,
    Reference,
}

impl Source {
    fn name(self) -> &'static str {
        match self {
            Source::Pinn => "pinn",
            Source::Reference => "reference",
        }
    }
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Stage {
    Config,
    GenData,
    Simulate,
    Train,
    Place,
    Compare,
}

fn code_for(stage: Stage, e: &Error) -> u8 {
    if stage == Stage::Compare {
        return 6;
    }
    match e {
        Error::Io(_) | Error::Csv(_) | Error::Format(_) => 2,
        Error::Json(_) if stage != Stage::Config => 2,
        Error::Json(_) | Error::Argument(_) => 1,
        Error::Infeasible { .. } => 5,
        _ => match stage {
            Stage::Train => 4,
            Stage::GenData => 2,
            _ => 3,
        },
    }
}

trait Context<T> {
    fn at(self, stage: Stage) -> Result<T, Failure>;
}

impl<T> Context<T> for Result<T, Error> {
    fn at(self, stage: Stage) -> Result<T, Failure> {
        self.map_err(|e| Failure::new(code_for(stage, &e), e.to_string()))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p).at(Stage::Config)?,
        None => RunConfig::default_for(cli.dim as usize).at(Stage::Config)?,
    };
    if cli.desk_scale {
        cfg = cfg.desk_scale();
    }
    if let Some(seed) = cli.seed {
        cfg.drive_seed = seed;
        cfg.train.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    cfg.validate().at(Stage::Config)?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Command::Compare {
        reference,
        candidate,
        times,
    } = &cli.command
    {
        return compare(&cli, reference, candidate, times.clone());
    }
    let cfg = load_config(&cli)?;
    fs::create_dir_all(&cfg.out_dir)
        .map_err(|e| Failure::new(2, format!("cannot create {}: {e}", cfg.out_dir.display())))?;
    match cli.command {
        Command::GenData { hours } => gen_data(&cfg, hours),
        Command::Simulate => simulate(&cfg).map(|_| ()),
        Command::Train => train(&cfg),
        Command::Place { source, model } => place(&cfg, source, model),
        Command::Compare { .. } => unreachable!("handled above"),
    }
}

fn write_json(path: &Path, value: &serde_json::Value) -> transtherm_core::Result<()> {
    io::write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w)?;
        Ok(())
    })
}

fn gen_data(cfg: &RunConfig, hours: Option<usize>) -> Result<(), Failure> {
    let hours = hours.unwrap_or(cfg.horizon.ceil() as usize);
    let drive = physics::synth_drive(cfg.drive_seed, hours).at(Stage::GenData)?;
    let path = cfg.out_dir.join("drive.csv");
    io::write_atomic(&path, |w| drive.write_csv(w)).at(Stage::GenData)?;
    let stats = |name: &str, v: &[f64]| {
        let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        println!("  {name:<4} min {lo:8.3}  mean {mean:8.3}  max {hi:8.3}");
    };
    println!("wrote {} ({} rows, seed {})", path.display(), drive.len(), cfg.drive_seed);
    stats("T_a", drive.ambient());
    stats("T_o", drive.top_oil());
    stats("K", drive.load());
    Ok(())
}

fn drive(cfg: &RunConfig, stage: Stage) -> Result<DriveSeries, Failure> {
    cfg.drive_series().at(stage)
}

fn simulate(cfg: &RunConfig) -> Result<FieldSeries, Failure> {
    let drive = drive(cfg, Stage::Simulate)?;
    let field = match cfg.physics.dim {
        1 => solver::solve_1d(&cfg.physics, &drive, &cfg.grid),
        _ => solver::solve_2d(&cfg.physics, &drive, &cfg.grid),
    }
    .at(Stage::Simulate)?;
    let path = cfg.out_dir.join("reference.csv");
    io::write_atomic(&path, |w| io::write_field_csv(&field, w)).at(Stage::Simulate)?;
    let mut snapshots = Vec::new();
    for &t in &cfg.snapshots {
        let snap = cfg.out_dir.join(format!("snapshot_t{t}.csv"));
        io::write_atomic(&snap, |w| io::write_snapshot_csv(&field, t, w)).at(Stage::Simulate)?;
        snapshots.push(snap.file_name().unwrap().to_string_lossy().into_owned());
    }
    let meta = json!({
        "dim": field.dim(),
        "physics": cfg.physics,
        "grid": cfg.grid,
        "horizon": cfg.horizon,
        "levels": field.n_levels(),
        "drive": cfg.drive.as_ref().map(|p| p.display().to_string()),
        "drive_seed": cfg.drive_seed,
        "snapshots": snapshots,
    });
    write_json(&cfg.out_dir.join("reference_meta.json"), &meta).at(Stage::Simulate)?;
    println!(
        "wrote {} ({} levels x {} nodes) and {} snapshots",
        path.display(),
        field.n_levels(),
        field.n_space(),
        snapshots.len()
    );
    Ok(field)
}

/// The stored reference if it matches the configuration, else a fresh one.
fn reference(cfg: &RunConfig) -> Result<FieldSeries, Failure> {
    let path = cfg.out_dir.join("reference.csv");
    if path.is_file() {
        let f = io::read_field_file(&path).at(Stage::Simulate)?;
        let end = *f.times().last().unwrap();
        if f.dim() == cfg.physics.dim && f.nx() == cfg.grid.nx && (end - cfg.horizon).abs() < 1e-9 {
            return Ok(f);
        }
        eprintln!("note: {} does not match the configuration; recomputing", path.display());
    }
    simulate(cfg)
}

fn train(cfg: &RunConfig) -> Result<(), Failure> {
    let reference = reference(cfg)?;
    let drive = drive(cfg, Stage::Train)?;
    let run = pinn::train_run(&cfg.physics, &drive, &cfg.train, cfg.horizon, Some(&reference))
        .at(Stage::Train)?;
    let ckpt = cfg.out_dir.join("checkpoint.json");
    run.pinn.save(&ckpt).at(Stage::Train)?;
    let report_path = cfg.out_dir.join("train_report.csv");
    io::write_atomic(&report_path, |w| run.report.write_csv(w)).at(Stage::Train)?;
    if let Some(e) = run.error {
        return Err(Failure::new(
            4,
            format!("training stopped: {e}; last finite parameters kept in {}", ckpt.display()),
        ));
    }
    let predicted = io::predict_field(&run.pinn, &drive, &reference).at(Stage::Train)?;
    io::write_atomic(&cfg.out_dir.join("pinn_field.csv"), |w| io::write_field_csv(&predicted, w))
        .at(Stage::Train)?;
    let (field, top) = pinn::eval_metrics(&run.pinn, &drive, &reference).at(Stage::Train)?;
    let last = run.report.records.last();
    let summary = json!({
        "rel_l2_field": field,
        "rel_l2_top": top,
        "epochs": run.report.records.len(),
        "final_mse": last.map(|r| r.loss.mse),
        "final_mse_u": last.map(|r| r.loss.mse_u),
        "final_mse_f": last.map(|r| r.loss.mse_f),
        "lbfgs_termination": run.termination.map(|t| format!("{t:?}")),
    });
    write_json(&cfg.out_dir.join("train_summary.json"), &summary).at(Stage::Train)?;
    println!("trained {} epochs in {:.1} s", run.report.records.len(), run.report.wall_time_s);
    println!("relative L2: field {field:.4e}, top-oil {top:.4e}");
    println!("wrote {}", ckpt.display());
    Ok(())
}

fn place(cfg: &RunConfig, source: Source, model: u8) -> Result<(), Failure> {
    let model = Model::try_from(model).at(Stage::Config)?;
    let settings = &cfg.placement;
    let pcfg = settings.config();
    let grid = placement::build_grid(cfg.physics.dim, settings.nx, settings.ny, settings.margin())
        .at(Stage::Config)?;
    let times = placement::hourly_times(cfg.horizon);
    let drive = drive(cfg, Stage::Place)?;
    let scores = match source {
        Source::Pinn => {
            let net = Pinn::load(&cfg.out_dir.join("checkpoint.json")).at(Stage::Place)?;
            let src = ScoreSource::Model {
                model: &net,
                drive: &drive,
            };
            placement::score_field(&src, &grid, &times).at(Stage::Place)?
        }
        Source::Reference => {
            let field = reference(cfg)?;
            placement::score_field(&ScoreSource::Field(&field), &grid, &times).at(Stage::Place)?
        }
    };
    let sol = placement::solve(model, &scores, &grid, &pcfg).at(Stage::Place)?;
    placement::check_solution(&grid, &pcfg, &sol).at(Stage::Place)?;
    let min_dist = placement::min_pairwise_distance(&grid, &sol);
    let report = PlacementReport::new(pcfg, grid, scores, sol);
    let stem = format!("placement_model{model}_{}", source.name());
    let json_path = cfg.out_dir.join(format!("{stem}.json"));
    let value = serde_json::to_value(&report).map_err(|e| Failure::new(2, e.to_string()))?;
    write_json(&json_path, &value).at(Stage::Place)?;
    io::write_atomic(&cfg.out_dir.join(format!("{stem}.csv")), |w| report.write_csv(w))
        .at(Stage::Place)?;
    let chosen: Vec<String> = report
        .grid
        .points
        .iter()
        .zip(&report.selected)
        .filter(|(_, &s)| s)
        .map(|(p, _)| match report.grid.dim {
            1 => format!("{:.3}", p[0]),
            _ => format!("({:.3}, {:.3})", p[0], p[1]),
        })
        .collect();
    println!(
        "model {model} ({:?}, {} nodes): objective {:.6e}, {} sensors, min distance {:.4}",
        report.solver,
        report.nodes,
        report.objective,
        chosen.len(),
        min_dist
    );
    println!("sensors at {}", chosen.join(" "));
    println!("wrote {}", json_path.display());
    Ok(())
}

fn compare(cli: &Cli, reference: &Path, candidate: &Path, times: Option<Vec<f64>>) -> Result<(), Failure> {
    let a = io::read_field_file(reference).at(Stage::Compare)?;
    let b = io::read_field_file(candidate).at(Stage::Compare)?;
    let times = times.unwrap_or_else(|| io::default_slice_times(a.dim()));
    let cmp = io::compare_fields(&b, &a, &times).at(Stage::Compare)?;
    let value = serde_json::to_value(&cmp).map_err(|e| Failure::new(6, e.to_string()))?;
    println!("{}", serde_json::to_string_pretty(&value).unwrap_or_default());
    if let Some(out) = &cli.out {
        fs::create_dir_all(out).map_err(|e| Failure::new(6, e.to_string()))?;
        write_json(&out.join("compare.json"), &value).at(Stage::Compare)?;
    }
    Ok(())
}
