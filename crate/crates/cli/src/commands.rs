//! The subcommands. Each writes its artifacts under the configured output
//! directory and returns a summary that the binary prints as one JSON line.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use epdt_core::certificate::{
    certificate_from_snapshots, make_cutoffs, positivity_onset, scaling_fit, Certificate,
    CutoffPair, ScalingFit, CERTIFICATE_COLUMNS,
};
use epdt_core::criticality::{classify as classify_params, region_map, RegionClass, Verdict};
use epdt_core::linear::{
    verify_linear_decay, verify_source_scaling, DecayBranch, LinearOptions, LinearParams,
    SourceScalingReport,
};
use epdt_core::quadrature::geometric_grid;
use epdt_core::sim::{
    decay_report, read_state, simulate as run_simulation, simulate_refined, write_state,
    write_trajectory_csv, NormFit, Outcome, RefinedVerdict, SystemState, Trajectory,
};
use epdt_core::spectral::Grid;
use serde::Serialize;

use crate::config::{Format, MapConfig, RunConfig};
use crate::{svg, CliError};

fn io_err(op: &'static str) -> impl Fn(std::io::Error) -> CliError {
    move |e| CliError::runtime(op, e)
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let dir = PathBuf::from(&cfg.outputs.directory);
    fs::create_dir_all(&dir).map_err(io_err("create output directory"))?;
    Ok(dir)
}

/// CSV with a leading `# config_hash:` comment line.
fn write_csv(path: &Path, hash: &str, body: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Result<(), CliError> {
    let mut buf = Vec::new();
    writeln!(buf, "# config_hash: {hash}").map_err(io_err("write csv"))?;
    body(&mut buf).map_err(io_err("write csv"))?;
    fs::write(path, buf).map_err(io_err("write csv"))
}

fn write_json(cfg: &RunConfig, dir: &Path, name: &str, value: &impl Serialize) -> Result<(), CliError> {
    if cfg.wants(Format::Json) {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::runtime("write json", e))?;
        text.push('\n');
        fs::write(dir.join(name), text).map_err(io_err("write json"))?;
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct ClassifyOutput {
    pub config_hash: String,
    pub verdict: Verdict,
    pub theorem: Option<String>,
    pub gamma_m: f64,
    pub margin: f64,
    pub class: RegionClass,
}

pub fn classify(cfg: &RunConfig) -> Result<ClassifyOutput, CliError> {
    let class = classify_params(&cfg.params).map_err(|e| CliError::runtime("classify", e))?;
    Ok(ClassifyOutput {
        config_hash: cfg.hash(),
        verdict: class.verdict,
        theorem: class.satisfied_theorem.map(|r| r.label().to_string()),
        gamma_m: class.gamma_m,
        margin: class.margin,
        class,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct MapOutput {
    pub config_hash: String,
    pub resolution: usize,
    pub blow_up: usize,
    pub global_existence: usize,
    pub theory_silent: usize,
    pub errors: usize,
    pub corner: Option<(f64, f64)>,
}

pub const MAP_COLUMNS: &[&str] = &["p", "q", "verdict", "gamma_m", "margin"];

pub fn map(cfg: &RunConfig, sweep: Option<MapConfig>) -> Result<MapOutput, CliError> {
    let sweep = sweep
        .or(cfg.map)
        .ok_or_else(|| CliError::Config("missing field `map` (or --p-range/--q-range/--resolution)".into()))?;
    let m = region_map(&cfg.params, sweep.p_range, sweep.q_range, sweep.resolution)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let dir = out_dir(cfg)?;
    let hash = cfg.hash();
    let csv_path = dir.join("map.csv");
    write_csv(&csv_path, &hash, |w| {
        writeln!(w, "{}", MAP_COLUMNS.join(","))?;
        for c in &m.cells {
            match &c.class {
                Ok(k) => writeln!(w, "{},{},{:?},{},{}", c.p, c.q, k.verdict, k.gamma_m, k.margin)?,
                Err(_) => writeln!(w, "{},{},Error,,", c.p, c.q)?,
            }
        }
        Ok(())
    })?;
    if cfg.wants(Format::Svg) {
        fs::write(dir.join("map.svg"), svg::render(&m)).map_err(io_err("write svg"))?;
    }
    let count = |v: Verdict| {
        m.cells
            .iter()
            .filter(|c| c.class.as_ref().is_ok_and(|k| k.verdict == v))
            .count()
    };
    let out = MapOutput {
        config_hash: hash,
        resolution: m.resolution,
        blow_up: count(Verdict::BlowUp),
        global_existence: count(Verdict::GlobalExistence),
        theory_silent: count(Verdict::TheorySilent),
        errors: m.cells.iter().filter(|c| c.class.is_err()).count(),
        corner: m.corner,
    };
    write_json(cfg, &dir, "map.json", &out)?;
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct GridSummary {
    pub dim: usize,
    pub points: usize,
    pub half_length: f64,
}

impl From<Grid> for GridSummary {
    fn from(g: Grid) -> Self {
        GridSummary {
            dim: g.dim,
            points: g.points,
            half_length: g.half_length,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RefinementSummary {
    pub verdict: RefinedVerdict,
    pub fine_outcome: Outcome,
    pub fine_t_end: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulateOutput {
    pub config_hash: String,
    pub outcome: Outcome,
    pub t_end: f64,
    pub grid: GridSummary,
    pub initial_radius: f64,
    pub steps_accepted: usize,
    pub steps_rejected: usize,
    pub support_checks: usize,
    pub support_violations: usize,
    pub max_support_excess: Option<f64>,
    pub final_u_l2: f64,
    pub final_v_l2: f64,
    pub snapshots: usize,
    pub refinement: Option<RefinementSummary>,
}

/// A finished run together with its summary.
pub struct SimulateRun {
    pub summary: SimulateOutput,
    pub trajectory: Trajectory,
}

fn run_trajectory(cfg: &RunConfig, refine: bool) -> Result<(Trajectory, Option<RefinementSummary>), CliError> {
    let grid = cfg.build_grid()?;
    let data = cfg.require_data()?;
    let t_max = cfg.require_time()?.t_max;
    let controls = cfg.controls()?;
    if refine {
        let rep = simulate_refined(data, grid, cfg.seed, &cfg.params, t_max, &controls)
            .map_err(|e| CliError::runtime("simulate", e))?;
        let summary = RefinementSummary {
            verdict: rep.verdict,
            fine_outcome: rep.fine.outcome,
            fine_t_end: rep.fine.t_end,
        };
        Ok((rep.coarse, Some(summary)))
    } else {
        let init = SystemState::initial(data, grid, cfg.seed).map_err(|e| CliError::Config(e.to_string()))?;
        let traj = run_simulation(&init, &cfg.params, t_max, &controls).map_err(|e| match e {
            epdt_core::Error::UnsupportedSupport { .. } | epdt_core::Error::InvalidParams { .. } => {
                CliError::Config(e.to_string())
            }
            e => CliError::runtime("simulate", e),
        })?;
        Ok((traj, None))
    }
}

const SNAPSHOT_MAGIC: &[u8; 8] = b"EPDTSNP1";

pub fn write_snapshots(path: &Path, snaps: &[SystemState]) -> Result<(), CliError> {
    let file = fs::File::create(path).map_err(io_err("write snapshots"))?;
    let mut w = BufWriter::new(file);
    w.write_all(SNAPSHOT_MAGIC).map_err(io_err("write snapshots"))?;
    w.write_all(&(snaps.len() as u64).to_le_bytes()).map_err(io_err("write snapshots"))?;
    for s in snaps {
        write_state(&mut w, s).map_err(|e| CliError::runtime("write snapshots", e))?;
    }
    w.flush().map_err(io_err("write snapshots"))
}

pub fn read_snapshots(path: &Path) -> Result<Vec<SystemState>, CliError> {
    let file = fs::File::open(path).map_err(io_err("read snapshots"))?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io_err("read snapshots"))?;
    if &magic != SNAPSHOT_MAGIC {
        return Err(CliError::runtime("read snapshots", "not a snapshot file"));
    }
    let mut count = [0u8; 8];
    r.read_exact(&mut count).map_err(io_err("read snapshots"))?;
    (0..u64::from_le_bytes(count))
        .map(|_| read_state(&mut r).map_err(|e| CliError::runtime("read snapshots", e)))
        .collect()
}

pub fn simulate(cfg: &RunConfig, refine: bool) -> Result<SimulateRun, CliError> {
    let (traj, refinement) = run_trajectory(cfg, refine)?;
    let dir = out_dir(cfg)?;
    let hash = cfg.hash();
    if cfg.wants(Format::Csv) {
        write_csv(&dir.join("trajectory.csv"), &hash, |w| {
            write_trajectory_csv(w, &traj).map_err(|e| std::io::Error::other(e.to_string()))
        })?;
    }
    if !traj.snapshots.is_empty() {
        write_snapshots(&dir.join("snapshots.bin"), &traj.snapshots)?;
    }
    let last = traj.samples.last().expect("trajectory has its initial sample");
    let summary = SimulateOutput {
        config_hash: hash,
        outcome: traj.outcome,
        t_end: traj.t_end,
        grid: traj.grid.into(),
        initial_radius: traj.initial_radius,
        steps_accepted: traj.steps_accepted,
        steps_rejected: traj.steps_rejected,
        support_checks: traj.support_checks,
        support_violations: traj.support_violations,
        max_support_excess: (traj.support_checks > 0).then_some(traj.max_support_excess),
        final_u_l2: last.u.l2,
        final_v_l2: last.v.l2,
        snapshots: traj.snapshots.len(),
        refinement,
    };
    write_json(cfg, &dir, "simulate.json", &summary)?;
    Ok(SimulateRun {
        summary,
        trajectory: traj,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct DecayOutput {
    pub config_hash: String,
    pub outcome: Outcome,
    pub window: (f64, f64),
    pub fits: Vec<NormFit>,
    pub pass: bool,
}

pub const DECAY_COLUMNS: &[&str] = &["name", "fitted", "theory", "relative_error", "pass"];

pub fn decay_fit(cfg: &RunConfig) -> Result<DecayOutput, CliError> {
    let run = simulate(cfg, false)?;
    let consts = epdt_core::criticality::derive_constants(&cfg.params)
        .map_err(|e| CliError::runtime("decay-fit", e))?;
    let rep = decay_report(&run.trajectory, &consts, cfg.params.sigma)
        .map_err(|e| CliError::runtime("decay-fit", e))?;
    let dir = out_dir(cfg)?;
    let hash = cfg.hash();
    if cfg.wants(Format::Csv) {
        write_csv(&dir.join("decay.csv"), &hash, |w| {
            writeln!(w, "{}", DECAY_COLUMNS.join(","))?;
            for f in &rep.fits {
                writeln!(w, "{},{},{},{},{}", f.name, f.fitted, f.theory, f.relative_error, f.pass)?;
            }
            Ok(())
        })?;
    }
    let out = DecayOutput {
        config_hash: hash,
        outcome: run.trajectory.outcome,
        window: rep.window,
        fits: rep.fits,
        pass: rep.pass,
    };
    write_json(cfg, &dir, "decay.json", &out)?;
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct LinearOutput {
    pub config_hash: String,
    pub equation: u8,
    pub kappa: f64,
    pub branch: DecayBranch,
    pub theory_exponent: f64,
    pub log_correction: f64,
    pub fitted_exponent: f64,
    pub relative_error: f64,
    pub pass: bool,
    pub source: Option<SourceScalingReport>,
}

pub const LINEAR_COLUMNS: &[&str] = &["t", "norm", "theory_envelope"];

pub fn verify_linear(cfg: &RunConfig) -> Result<LinearOutput, CliError> {
    let lin = cfg
        .linear
        .ok_or_else(|| CliError::Config("missing field `linear`".into()))?;
    let grid = cfg.build_grid()?;
    let data = cfg.require_data()?;
    let [u0, u1, v0, v1] = data.fields(grid, cfg.seed);
    let p = &cfg.params;
    let (f, g, lp) = if lin.equation == 1 {
        (u0, u1, LinearParams { mu: p.mu1, nu_sq: p.nu1sq, m: p.m })
    } else {
        (v0, v1, LinearParams { mu: p.mu2, nu_sq: p.nu2sq, m: p.m })
    };
    let opts = LinearOptions {
        rel_tol: lin.rel_tol.unwrap_or(LinearOptions::default().rel_tol),
        ..LinearOptions::default()
    };
    let ts = geometric_grid(lin.t_start, lin.t_end, lin.per_decade);
    let rep = verify_linear_decay(&f, &g, lp, lin.kappa, &ts, opts)
        .map_err(|e| CliError::runtime("verify-linear", e))?;
    let source = match lin.source {
        Some(s) => Some(
            verify_source_scaling(&g, s.tau1, s.tau2, s.t_final, lp, lin.kappa, opts)
                .map_err(|e| CliError::runtime("verify-linear", e))?,
        ),
        None => None,
    };
    let dir = out_dir(cfg)?;
    let hash = cfg.hash();
    if cfg.wants(Format::Csv) {
        write_csv(&dir.join("linear.csv"), &hash, |w| {
            writeln!(w, "{}", LINEAR_COLUMNS.join(","))?;
            for ((t, n), e) in rep.times.iter().zip(&rep.norms).zip(&rep.envelope) {
                writeln!(w, "{t},{n},{e}")?;
            }
            Ok(())
        })?;
    }
    let out = LinearOutput {
        config_hash: hash,
        equation: lin.equation,
        kappa: lin.kappa,
        branch: rep.branch,
        theory_exponent: rep.theory_exponent,
        log_correction: rep.log_correction,
        fitted_exponent: rep.fit.exponent,
        relative_error: rep.relative_error,
        pass: rep.pass && source.as_ref().is_none_or(|s| s.pass),
        source,
    };
    write_json(cfg, &dir, "linear.json", &out)?;
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct CertifyOutput {
    pub config_hash: String,
    pub cutoffs: CutoffPair,
    pub certificates: Vec<Certificate>,
    pub max_relative_residual_i: f64,
    pub max_relative_residual_j: f64,
    pub scaling: Option<ScalingFit>,
    /// Why no scaling fit was made, when it was not.
    pub scaling_note: Option<String>,
    pub positivity_onset: Option<f64>,
}

/// Certificates for the configured radii, from stored snapshots when
/// `snapshots` is given, otherwise from a fresh run.
pub fn certify(cfg: &RunConfig, snapshots: Option<&Path>) -> Result<CertifyOutput, CliError> {
    let cc = cfg
        .certify
        .clone()
        .ok_or_else(|| CliError::Config("missing field `certify`".into()))?;
    let cutoffs = make_cutoffs(cc.r_exponent, cc.cutoff_resolution, cfg.params.n)
        .map_err(|e| CliError::runtime("make_cutoffs", e))?;
    let snaps = match snapshots {
        Some(path) => read_snapshots(path)?,
        None => {
            if cfg.outputs.snapshot_interval.is_none() {
                return Err(CliError::Config(
                    "certify needs `outputs.snapshot_interval` when no snapshot file is given".into(),
                ));
            }
            simulate(cfg, false)?.trajectory.snapshots
        }
    };
    let certs: Vec<Certificate> = cc
        .radii
        .iter()
        .map(|&r| {
            certificate_from_snapshots(&snaps, &cfg.params, cc.d.unwrap_or(r), r, &cutoffs)
                .map_err(|e| CliError::runtime("certificate", e))
        })
        .collect::<Result<_, _>>()?;
    let (scaling, scaling_note) = match scaling_fit(&certs) {
        Ok(f) => (Some(f), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let dir = out_dir(cfg)?;
    let hash = cfg.hash();
    if cfg.wants(Format::Csv) {
        write_csv(&dir.join("certificates.csv"), &hash, |w| {
            writeln!(w, "{}", CERTIFICATE_COLUMNS.join(","))?;
            for c in &certs {
                writeln!(w, "{}", c.csv_row())?;
            }
            Ok(())
        })?;
    }
    let worst = |f: fn(&Certificate) -> f64| certs.iter().map(f).fold(0.0, f64::max);
    let out = CertifyOutput {
        config_hash: hash,
        cutoffs,
        max_relative_residual_i: worst(|c| c.relative_residual_i),
        max_relative_residual_j: worst(|c| c.relative_residual_j),
        positivity_onset: positivity_onset(&certs),
        certificates: certs,
        scaling,
        scaling_note,
    };
    write_json(cfg, &dir, "certify.json", &out)?;
    Ok(out)
}
