//! Fits of the model parameters to idle-mesh simulations.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{linear_fit, run, SimConfig, SimError, Workload};
use crate::collectives::{run_collective_2d, CollectiveError, CollectiveKind, CollectiveSpec, Impl};
use crate::endpoint::{BarrierKind, BarrierOp, DmaRequest, Op};
use crate::models::NetworkParams;
use crate::topology::Coord;

/// Offsets used by the calibration transfers.
const SRC_OFF: u64 = 0;
const DST_OFF: u64 = 0x8000;
const BARRIER_ID: u64 = 1 << 60;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CalibrationError {
    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Collective(#[from] Box<CollectiveError>),
}

/// Who starts a transfer, where the data lives and where it lands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Geometry {
    pub initiator: Coord,
    pub source: Coord,
    pub destination: Coord,
}

impl Geometry {
    /// Hops of the request, data and response legs.
    pub fn path(&self) -> u32 {
        self.initiator.manhattan(self.source)
            + self.source.manhattan(self.destination)
            + self.destination.manhattan(self.initiator)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSpec {
    /// Transfer sizes in beats.
    pub sizes: Vec<u32>,
    pub geometries: Vec<Geometry>,
    /// Blocks at the region origin (rows, cols) whose hardware barrier and
    /// hardware collectives are measured; the root is the origin.
    pub blocks: Vec<(u32, u32)>,
    /// Compute micro-benchmark sizes in beats.
    pub compute_sizes: Vec<u32>,
}

impl CalibrationSpec {
    /// Reads from the first memory tile and between clusters of row 0 and
    /// column 0, pulled by the receiver or pushed by the sender.
    pub fn for_config(cfg: &SimConfig) -> Self {
        let (x0, y0) = (cfg.map.region_x, cfg.map.region_y);
        let at = |dx: u32, dy: u32| Coord::new(x0 + dx, y0 + dy);
        let mut geometries = Vec::new();
        if let Some(m0) = cfg.memory_tile(0) {
            for x in 0..cfg.map.region_w {
                let c = at(x, 0);
                geometries.push(Geometry { initiator: c, source: m0, destination: c });
            }
        }
        let mut pairs = Vec::new();
        for d in 1..cfg.map.region_w {
            pairs.push((at(0, 0), at(d, 0)));
        }
        for d in 1..cfg.map.region_h {
            pairs.push((at(0, 0), at(0, d)));
        }
        for (a, b) in pairs {
            geometries.push(Geometry { initiator: a, source: b, destination: a });
            geometries.push(Geometry { initiator: b, source: b, destination: a });
        }
        let mut blocks = Vec::new();
        let mut r = 1;
        while r <= cfg.map.region_h {
            blocks.push((r, cfg.map.region_w));
            r *= 2;
        }
        Self {
            sizes: (3..=9).map(|e| 1 << e).collect(),
            geometries,
            blocks,
            compute_sizes: (3..=9).map(|e| 1 << e).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometryFit {
    pub geometry: Geometry,
    pub alpha: f64,
    pub beta: f64,
    pub r2: f64,
}

/// Fit `T = a + n slope` of a hardware collective over a block; `alpha`
/// removes the per-hop term, `a = alpha + (c + r - 2) beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollectiveFit {
    pub rows: u32,
    pub cols: u32,
    pub alpha: f64,
    /// Cycles per beat; 2 where merges take three inputs.
    pub slope: f64,
    pub r2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockDelta {
    pub rows: u32,
    pub cols: u32,
    pub delta: f64,
}

/// Fitted parameters with their diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub fits: Vec<GeometryFit>,
    /// `alpha = alpha_intercept + alpha_per_path_hop * path` over all fits.
    pub alpha_intercept: f64,
    pub alpha_per_path_hop: f64,
    pub alpha_r2: f64,
    pub beta: f64,
    pub deltas: Vec<BlockDelta>,
    pub hw_multicast: Vec<CollectiveFit>,
    pub hw_reduction: Vec<CollectiveFit>,
    pub alpha_c: f64,
    pub beta_c: f64,
    pub compute_r2: f64,
}

impl Calibration {
    /// Fitted latency of a geometry, or the path-length fit when the
    /// geometry was not swept.
    pub fn alpha(&self, g: &Geometry) -> f64 {
        self.fits
            .iter()
            .find(|f| f.geometry == *g)
            .map(|f| f.alpha)
            .unwrap_or_else(|| self.alpha_intercept + self.alpha_per_path_hop * f64::from(g.path()))
    }

    /// Barrier cost of the block, or of the nearest measured block by
    /// cluster count.
    pub fn delta(&self, rows: u32, cols: u32) -> f64 {
        let m = i64::from(rows * cols);
        self.deltas
            .iter()
            .min_by_key(|d| (i64::from(d.rows * d.cols) - m).abs())
            .map_or(0.0, |d| d.delta)
    }

    /// Latency of a hardware collective over a block, from the fit of the
    /// nearest measured block.
    pub fn hw_alpha(&self, kind: CollectiveKind, rows: u32, cols: u32) -> f64 {
        let fits = match kind {
            CollectiveKind::Reduction => &self.hw_reduction,
            _ => &self.hw_multicast,
        };
        fits.iter()
            .min_by_key(|f| (f.rows.abs_diff(rows), f.cols.abs_diff(cols)))
            .map_or(self.alpha_intercept, |f| f.alpha)
    }

    /// Parameters for meshes beyond the simulated one: a read between
    /// tiles `h` hops apart has a `2h` hop path.
    pub fn network(&self, rows: u32, cols: u32) -> NetworkParams {
        NetworkParams {
            alpha0: self.alpha_intercept + 2.0 * self.alpha_per_path_hop,
            alpha_per_hop: 2.0 * self.alpha_per_path_hop,
            beta: self.beta,
            delta: self.delta(rows, cols),
            alpha_c: self.alpha_c,
            beta_c: self.beta_c,
        }
    }
}

fn transfer_cycles(cfg: &SimConfig, g: &Geometry, beats: u32) -> Result<f64, SimError> {
    let mut w = Workload::default();
    w.memory.push((g.source, SRC_OFF, vec![0u8; beats as usize * 64]));
    w.dma(
        g.initiator,
        DmaRequest::copy(cfg.addr(g.source, SRC_OFF), cfg.addr(g.destination, DST_OFF), beats),
    );
    w.push(g.initiator, Op::DmaWait);
    let (m, _) = run(cfg, &w, "calibrate-transfer")?;
    Ok(m.cycles as f64)
}

fn compute_cycles(cfg: &SimConfig, beats: u32) -> Result<f64, SimError> {
    let c = Coord::new(cfg.map.region_x, cfg.map.region_y);
    let mut w = Workload::default();
    w.push(c, Op::Reduce { acc: SRC_OFF, src: DST_OFF, beats });
    let (m, _) = run(cfg, &w, "calibrate-compute")?;
    Ok(m.cycles as f64)
}

/// Cost of one hardware barrier with simultaneous arrivals: from the first
/// arrival to the last departure.
pub fn barrier_cost(cfg: &SimConfig, parts: &[Coord], root: Coord) -> Result<f64, SimError> {
    let mut w = Workload::default();
    for &c in parts {
        w.push(
            c,
            Op::Barrier(BarrierOp {
                kind: BarrierKind::Hw,
                id: BARRIER_ID,
                participants: parts.to_vec(),
                root,
            }),
        );
    }
    let (_, sim) = run(cfg, &w, "calibrate-barrier")?;
    let ev = sim.barrier_events();
    let first = ev.iter().map(|(_, e)| e.arrival).min().unwrap_or(0);
    let last = ev.iter().map(|(_, e)| e.departure).max().unwrap_or(first);
    Ok((last - first) as f64)
}

fn collective_fit(
    cfg: &SimConfig,
    kind: CollectiveKind,
    (rows, cols): (u32, u32),
    sizes: &[u32],
    beta: f64,
) -> Result<CollectiveFit, CalibrationError> {
    let mut ys = Vec::new();
    for &s in sizes {
        let spec = CollectiveSpec::new(kind, Impl::Hw, rows, cols, u64::from(s) * 64, 1);
        let o = run_collective_2d(&spec, cfg).map_err(Box::new)?;
        ys.push(o.metrics.cycles as f64);
    }
    let xs: Vec<f64> = sizes.iter().map(|&s| f64::from(s)).collect();
    let (a, slope, r2) = linear_fit(&xs, &ys).expect("two distinct sizes");
    Ok(CollectiveFit {
        rows,
        cols,
        alpha: a - f64::from(cols + rows - 2) * beta,
        slope,
        r2,
    })
}

fn need(ok: bool, what: &str) -> Result<(), CalibrationError> {
    if ok {
        Ok(())
    } else {
        Err(CalibrationError::InsufficientSamples(what.to_string()))
    }
}

/// Least-squares fits of `T = alpha + n beta` per geometry on an idle
/// mesh and of the hardware collectives over one row, hardware barrier
/// costs per block and the compute cost line.
pub fn calibrate(cfg: &SimConfig, spec: &CalibrationSpec) -> Result<Calibration, CalibrationError> {
    let mut sizes = spec.sizes.clone();
    sizes.retain(|&s| s > 0);
    sizes.sort_unstable();
    sizes.dedup();
    need(sizes.len() >= 2, "need at least two distinct transfer sizes")?;
    need(!spec.geometries.is_empty(), "need at least one geometry")?;
    let mut csizes = spec.compute_sizes.clone();
    csizes.retain(|&s| s > 0);
    csizes.sort_unstable();
    csizes.dedup();
    need(csizes.len() >= 2, "need at least two distinct compute sizes")?;

    let xs: Vec<f64> = sizes.iter().map(|&s| f64::from(s)).collect();
    let mut fits = Vec::new();
    for g in &spec.geometries {
        let ys = sizes
            .iter()
            .map(|&s| transfer_cycles(cfg, g, s))
            .collect::<Result<Vec<_>, _>>()?;
        let (alpha, beta, r2) = linear_fit(&xs, &ys).expect("two distinct sizes");
        fits.push(GeometryFit { geometry: *g, alpha, beta, r2 });
    }
    let paths: Vec<f64> = fits.iter().map(|f| f64::from(f.geometry.path())).collect();
    let alphas: Vec<f64> = fits.iter().map(|f| f.alpha).collect();
    let (alpha_intercept, alpha_per_path_hop, alpha_r2) =
        linear_fit(&paths, &alphas).unwrap_or((alphas.iter().sum::<f64>() / alphas.len() as f64, 0.0, 1.0));
    let beta = fits.iter().map(|f| f.beta).sum::<f64>() / fits.len() as f64;

    let mut deltas = Vec::new();
    for &(rows, cols) in &spec.blocks {
        let parts: Vec<Coord> = (0..rows)
            .flat_map(|y| (0..cols).map(move |x| (x, y)))
            .map(|(x, y)| Coord::new(cfg.map.region_x + x, cfg.map.region_y + y))
            .collect();
        let delta = if parts.len() < 2 {
            0.0
        } else {
            barrier_cost(cfg, &parts, parts[0])?
        };
        deltas.push(BlockDelta { rows, cols, delta });
    }

    let mut hw_multicast = Vec::new();
    let mut hw_reduction = Vec::new();
    for &b in &spec.blocks {
        hw_multicast.push(collective_fit(cfg, CollectiveKind::Multicast, b, &sizes, beta)?);
        if b.0 * b.1 > 1 {
            hw_reduction.push(collective_fit(cfg, CollectiveKind::Reduction, b, &sizes, beta)?);
        }
    }

    let cx: Vec<f64> = csizes.iter().map(|&s| f64::from(s)).collect();
    let cy = csizes
        .iter()
        .map(|&s| compute_cycles(cfg, s))
        .collect::<Result<Vec<_>, _>>()?;
    let (alpha_c, beta_c, compute_r2) = linear_fit(&cx, &cy).expect("two distinct sizes");

    Ok(Calibration {
        fits,
        alpha_intercept,
        alpha_per_path_hop,
        alpha_r2,
        beta,
        deltas,
        hw_multicast,
        hw_reduction,
        alpha_c,
        beta_c,
        compute_r2,
    })
}
