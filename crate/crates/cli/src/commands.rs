//! Experiment commands. Each returns the tables it produced; rows come out
//! in a fixed order however the cells were scheduled.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use collnoc::collectives::{
    self, best_software, evaluate, experiment_id, multicast_workload, reduction_workload, run_barrier, BarrierSetup, Cell,
    CollectiveError, CollectiveKind, CollectiveSpec, ReductionData,
};
use collnoc::endpoint::BarrierKind;
use collnoc::engine::{calibrate, linear_fit, run, Calibration, CalibrationError, CalibrationSpec, SimConfig, SimError};
use collnoc::models::{
    energy_estimate, fcl_runtime, primitive_counts, summa_runtime, Dataflow, EnergyTable, GemmConfig, ModelError, Variant,
};
use collnoc::topology::encode_destinations;

use crate::config::{ConfigError, ExperimentConfig};
use crate::output::{f, Table};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Collective(#[from] CollectiveError),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse parameters file {0}: {1}")]
    Params(PathBuf, serde_json::Error),
}

impl CliError {
    fn sim(&self) -> Option<&SimError> {
        match self {
            CliError::Collective(CollectiveError::Sim(e)) | CliError::Calibration(CalibrationError::Sim(e)) => Some(e),
            CliError::Calibration(CalibrationError::Collective(c)) => match c.as_ref() {
                CollectiveError::Sim(e) => Some(e),
                _ => None,
            },
            _ => None,
        }
    }

    /// 2 for configuration errors, 3 for cycle-limit hits, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Params(..) => 2,
            CliError::Collective(CollectiveError::Invalid(_)) | CliError::Model(_) => 2,
            CliError::Calibration(CalibrationError::InsufficientSamples(_)) => 2,
            _ => match self.sim() {
                Some(SimError::CycleLimitExceeded { .. }) => 3,
                Some(SimError::Config(_)) => 2,
                _ => 1,
            },
        }
    }
}

pub struct Context {
    pub config: ExperimentConfig,
    pub sim: SimConfig,
    pub out: PathBuf,
    pub trace: bool,
    pub params: Option<PathBuf>,
}

impl Context {
    /// The parameters file if one was given, a fresh calibration otherwise.
    pub fn calibration(&self) -> Result<Calibration, CliError> {
        match &self.params {
            Some(p) => {
                let text = std::fs::read_to_string(p)?;
                serde_json::from_str(&text).map_err(|e| CliError::Params(p.clone(), e))
            }
            None => Ok(calibrate(&self.sim, &CalibrationSpec::for_config(&self.sim))?),
        }
    }
}

const CELL_HEADER: &[&str] = &[
    "kind",
    "impl",
    "rows",
    "cols",
    "bytes",
    "k",
    "simulated_cycles",
    "modeled_cycles",
    "model_error",
    "speedup_vs_best_sw",
    "correct",
];

/// Multicast or reduction cells over `rows x sizes x impls`.
pub fn collective(ctx: &Context, kind: CollectiveKind, rows: &[u32], name: &str) -> Result<(Vec<Table>, Vec<PathBuf>), CliError> {
    let impls = ctx.config.collective_impls(kind)?;
    let sizes = ctx.config.sizes_bytes()?;
    let cols = ctx.config.cols()?;
    for &r in rows {
        for &n in &sizes {
            for &imp in &impls {
                CollectiveSpec::new(kind, imp, r, cols, n, 1).validate(&ctx.sim)?;
            }
        }
    }
    let cal = ctx.calibration()?;
    let mut tasks = vec![];
    for &r in rows {
        for &n in &sizes {
            for &imp in &impls {
                tasks.push((r, n, imp));
            }
        }
    }
    let mut cells: Vec<Cell> = tasks
        .par_iter()
        .map(|&(r, n, imp)| evaluate(kind, imp, r, cols, n, &ctx.sim, &cal))
        .collect::<Result<_, _>>()?;
    cells.sort_by(|a, b| (a.rows, a.n_bytes, a.imp).cmp(&(b.rows, b.n_bytes, b.imp)));

    let mut t = Table::new(name, CELL_HEADER);
    for c in &cells {
        let group: Vec<Cell> = cells
            .iter()
            .filter(|o| o.rows == c.rows && o.n_bytes == c.n_bytes)
            .cloned()
            .collect();
        let speedup = best_software(&group).map_or(String::new(), |b| f(b.simulated as f64 / c.simulated as f64));
        t.push(vec![
            format!("{kind:?}").to_lowercase(),
            c.imp.name().into(),
            c.rows.to_string(),
            c.cols.to_string(),
            c.n_bytes.to_string(),
            c.k.to_string(),
            c.simulated.to_string(),
            f(c.modeled),
            f(c.error()),
            speedup,
            c.correct.to_string(),
        ]);
    }
    let traces = if ctx.trace { write_traces(ctx, &cells)? } else { vec![] };
    Ok((vec![t], traces))
}

/// Re-runs each cell at its chosen k with tracing on.
fn write_traces(ctx: &Context, cells: &[Cell]) -> Result<Vec<PathBuf>, CliError> {
    let dir = ctx.out.join("traces");
    std::fs::create_dir_all(&dir)?;
    let cfg = SimConfig {
        trace: true,
        ..ctx.sim.clone()
    };
    let mut files = vec![];
    for c in cells {
        let spec = CollectiveSpec::new(c.kind, c.imp, c.rows, c.cols, c.n_bytes, c.k);
        let w = match c.kind {
            CollectiveKind::Multicast => multicast_workload(&spec, &cfg)?.0,
            _ => reduction_workload(&spec, &cfg, ReductionData::Dyadic)?.0,
        };
        let id = experiment_id(&spec);
        let (_, sim) = run(&cfg, &w, &id).map_err(CollectiveError::from)?;
        let path = dir.join(format!("{id}.csv"));
        std::fs::write(&path, sim.trace_csv())?;
        files.push(path);
    }
    Ok(files)
}

pub fn barrier(ctx: &Context) -> Result<Vec<Table>, CliError> {
    let kinds = ctx.config.barrier_impls()?;
    let ms = ctx.config.participants()?;
    let region = ctx.sim.map.region_w * ctx.sim.map.region_h;
    if let Some(m) = ms.iter().find(|&&m| m > region) {
        return Err(ConfigError::Invalid(format!("{m} participants exceed the {region}-cluster region")).into());
    }
    // The hardware barrier needs a mask-expressible participant set.
    let expressible = |m: u32| {
        let set = collectives::barrier_participants(&ctx.sim, m).into_iter().collect();
        encode_destinations(&set, &ctx.sim.map).is_ok()
    };
    let tasks: Vec<(BarrierKind, u32)> = kinds
        .iter()
        .flat_map(|&k| ms.iter().map(move |&m| (k, m)))
        .filter(|&(k, m)| k == BarrierKind::Sw || expressible(m))
        .collect();
    let mut results: Vec<(BarrierKind, u32, u64)> = tasks
        .par_iter()
        .map(|&(k, m)| run_barrier(k, m, BarrierSetup::default(), &ctx.sim).map(|r| (k, m, r.cycles)))
        .collect::<Result<_, _>>()?;
    results.sort_by_key(|&(k, m, _)| (k == BarrierKind::Hw, m));
    let name = |k: BarrierKind| if k == BarrierKind::Sw { "sw" } else { "hw" };

    let mut t = Table::new("barrier", &["impl", "participants", "cycles"]);
    for &(k, m, c) in &results {
        t.push(vec![name(k).into(), m.to_string(), c.to_string()]);
    }
    let mut fit = Table::new("barrier_fit", &["impl", "points", "intercept", "slope", "r2"]);
    for &k in &kinds {
        let pts: Vec<(f64, f64)> = results.iter().filter(|r| r.0 == k).map(|r| (f64::from(r.1), r.2 as f64)).collect();
        let (xs, ys): (Vec<f64>, Vec<f64>) = pts.iter().copied().unzip();
        if let Some((a, b, r2)) = linear_fit(&xs, &ys) {
            fit.push(vec![name(k).into(), pts.len().to_string(), f(a), f(b), f(r2)]);
        }
    }
    Ok(vec![t, fit])
}

pub fn gemm(ctx: &Context) -> Result<Vec<Table>, CliError> {
    let meshes = ctx.config.meshes()?;
    let tile = ctx.config.tile()?;
    let table = match &ctx.config.energy_table {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| ConfigError::Read(p.clone(), e))?;
            EnergyTable::parse(&text)?
        }
        None => EnergyTable::default(),
    };
    let cal = ctx.calibration()?;
    let net = cal.network(ctx.sim.map.region_h, ctx.sim.map.region_w);
    let mut t = Table::new(
        "gemm",
        &[
            "mesh",
            "t_comp",
            "summa_sw_comm",
            "summa_hw_comm",
            "summa_speedup",
            "summa_sw_energy_pj",
            "summa_hw_energy_pj",
            "summa_savings",
            "fcl_sw_comm",
            "fcl_hw_comm",
            "fcl_speedup",
            "fcl_sw_energy_pj",
            "fcl_hw_energy_pj",
            "fcl_savings",
        ],
    );
    let mut counts = Table::new(
        "gemm_counts",
        &[
            "mesh",
            "dataflow",
            "dma_load_kb",
            "dma_store_kb",
            "hop_kb",
            "spm_write_kb",
            "gemm_kop",
            "sw_reduce_kop",
            "dca_reduce_kop",
        ],
    );
    for &m in &meshes {
        let g = GemmConfig::square(m, m, tile);
        let energy = |flow| -> Result<f64, ModelError> { Ok(energy_estimate(&primitive_counts(flow, &g, &net)?, &table).total_pj) };
        let (ss, sh) = (summa_runtime(&g, &net, Variant::Sw)?, summa_runtime(&g, &net, Variant::Hw)?);
        let (fs, fh) = (fcl_runtime(&g, &net, Variant::Sw)?, fcl_runtime(&g, &net, Variant::Hw)?);
        let e = [
            energy(Dataflow::SummaSw)?,
            energy(Dataflow::SummaHw)?,
            energy(Dataflow::FclSw)?,
            energy(Dataflow::FclHw)?,
        ];
        t.push(vec![
            m.to_string(),
            f(ss.t_comp),
            f(ss.t_comm),
            f(sh.t_comm),
            f(ss.t / sh.t),
            f(e[0]),
            f(e[1]),
            f(e[0] / e[1]),
            f(fs.t_comm),
            f(fh.t_comm),
            f(fs.t / fh.t),
            f(e[2]),
            f(e[3]),
            f(e[2] / e[3]),
        ]);
        for (flow, label) in [
            (Dataflow::SummaSw, "summa_sw"),
            (Dataflow::SummaHw, "summa_hw"),
            (Dataflow::FclSw, "fcl_sw"),
            (Dataflow::FclHw, "fcl_hw"),
        ] {
            let mut row = vec![m.to_string(), label.into()];
            row.extend(primitive_counts(flow, &g, &net)?.kilo().iter().map(|&v| f(v)));
            counts.push(row);
        }
    }
    Ok(vec![t, counts])
}

/// Writes `calibration.json`, the parameters file read back by `--params`.
pub fn calibrate_cmd(ctx: &Context) -> Result<(Vec<Table>, Vec<PathBuf>), CliError> {
    let cal = calibrate(&ctx.sim, &CalibrationSpec::for_config(&ctx.sim))?;
    std::fs::create_dir_all(&ctx.out)?;
    let path = ctx.out.join("calibration.json");
    let text = serde_json::to_string_pretty(&cal).map_err(std::io::Error::other)?;
    std::fs::write(&path, text + "\n")?;

    let mut fits = Table::new(
        "calibration_fits",
        &["initiator", "source", "destination", "path", "alpha", "beta", "r2"],
    );
    for g in &cal.fits {
        fits.push(vec![
            g.geometry.initiator.to_string(),
            g.geometry.source.to_string(),
            g.geometry.destination.to_string(),
            g.geometry.path().to_string(),
            f(g.alpha),
            f(g.beta),
            f(g.r2),
        ]);
    }
    let mut summary = Table::new("calibration", &["parameter", "block", "value"]);
    let mut put = |p: &str, block: String, v: f64| summary.push(vec![p.into(), block, f(v)]);
    put("alpha_intercept", String::new(), cal.alpha_intercept);
    put("alpha_per_path_hop", String::new(), cal.alpha_per_path_hop);
    put("alpha_r2", String::new(), cal.alpha_r2);
    put("beta", String::new(), cal.beta);
    put("alpha_c", String::new(), cal.alpha_c);
    put("beta_c", String::new(), cal.beta_c);
    put("compute_r2", String::new(), cal.compute_r2);
    for d in &cal.deltas {
        put("delta", format!("{}x{}", d.rows, d.cols), d.delta);
    }
    for h in &cal.hw_multicast {
        put("hw_multicast_alpha", format!("{}x{}", h.rows, h.cols), h.alpha);
    }
    for h in &cal.hw_reduction {
        put("hw_reduction_alpha", format!("{}x{}", h.rows, h.cols), h.alpha);
    }
    Ok((vec![summary, fits], vec![path]))
}

pub fn out_dir(p: Option<&Path>) -> PathBuf {
    p.map_or_else(|| PathBuf::from("."), Path::to_path_buf)
}
