//! Closed-form runtime models of the collectives, GEMM runtime models built
//! on them, and primitive-count energy accounting.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::collectives::{CollectiveKind, Impl};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("tree implementations need a power-of-two participant count")]
    NonPowerOfTwoTree,
    #[error("empty batch search set")]
    EmptySearchSet,
    #[error("invalid model parameters: {0}")]
    InvalidParams(String),
    #[error("no model for {0}")]
    Unsupported(String),
    #[error("unit mismatch: {0}")]
    UnitMismatch(String),
}

/// Parameters of the collective runtime models. Times are in cycles,
/// sizes in 64-byte beats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Per-stage round-trip latencies; the last entry repeats for later
    /// stages, so a single entry is a constant.
    pub alpha: Vec<f64>,
    pub beta: f64,
    pub delta: f64,
    pub n: f64,
    pub k: u32,
    pub c: u32,
    pub r: u32,
    pub alpha_m: f64,
    pub beta_m: f64,
    pub alpha_c: f64,
    pub beta_c: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            alpha: vec![0.0],
            beta: 1.0,
            delta: 0.0,
            n: 1.0,
            k: 1,
            c: 1,
            r: 1,
            alpha_m: 0.0,
            beta_m: 1.0,
            alpha_c: 0.0,
            beta_c: 1.0,
        }
    }
}

impl ModelParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidParams(m.to_string()));
        let scalars = [
            self.beta,
            self.delta,
            self.n,
            self.alpha_m,
            self.beta_m,
            self.alpha_c,
            self.beta_c,
        ];
        if scalars.iter().chain(&self.alpha).any(|v| !v.is_finite() || *v < 0.0) {
            return bad("parameters must be finite and non-negative");
        }
        if self.alpha.is_empty() {
            return bad("alpha needs at least one entry");
        }
        if self.k == 0 || f64::from(self.k) > self.n {
            return bad("need n >= k >= 1");
        }
        if self.c == 0 || self.r == 0 {
            return bad("need c >= 1 and r >= 1");
        }
        Ok(())
    }

    /// Round-trip latency of stage `i` (0-based).
    pub fn alpha_at(&self, i: usize) -> f64 {
        self.alpha[i.min(self.alpha.len() - 1)]
    }

    pub fn t_m(&self) -> f64 {
        self.alpha_m + self.n / f64::from(self.k) * self.beta_m
    }

    pub fn t_c(&self) -> f64 {
        self.alpha_c + self.n / f64::from(self.k) * self.beta_c
    }
}

fn log2_exact(v: u32) -> Result<u32, ModelError> {
    if v.is_power_of_two() {
        Ok(v.trailing_zeros())
    } else {
        Err(ModelError::NonPowerOfTwoTree)
    }
}

/// Sum over `stages` of (alpha_i + beats * beta), plus `barriers` deltas.
fn staged(p: &ModelParams, stages: usize, beats: f64, barriers: usize) -> f64 {
    (0..stages).map(|i| p.alpha_at(i) + beats * p.beta).sum::<f64>() + barriers as f64 * p.delta
}

/// Stage count of each multicast schedule over `c x r` clusters.
pub fn mcast_stages(imp: Impl, c: u32, r: u32, k: u32) -> Result<usize, ModelError> {
    Ok(match imp {
        Impl::Naive => (c + r - 1) as usize,
        Impl::Seq => (k + c + r - 2) as usize,
        Impl::Tree => (log2_exact(c)? + log2_exact(r)? + 1) as usize,
        Impl::Hw => 1,
        other => return Err(ModelError::Unsupported(format!("{other:?} multicast"))),
    })
}

/// One-row multicast: naive chain, pipelined chain, binary tree or hardware.
pub fn model_mcast_1d(imp: Impl, p: &ModelParams) -> Result<f64, ModelError> {
    model_mcast_2d(imp, &ModelParams { r: 1, ..p.clone() })
}

/// Block multicast over `c x r` clusters; equals the one-row form at r = 1.
pub fn model_mcast_2d(imp: Impl, p: &ModelParams) -> Result<f64, ModelError> {
    p.validate()?;
    let stages = mcast_stages(imp, p.c, p.r, p.k)?;
    Ok(match imp {
        Impl::Naive => staged(p, stages, p.n, stages - 1),
        Impl::Seq => staged(p, stages, p.n / f64::from(p.k), stages - 1),
        // The initial fetch and the first push share a cluster, so the tree
        // saves one barrier.
        Impl::Tree => staged(p, stages, p.n, stages.saturating_sub(2)),
        _ => p.alpha_at(0) + (p.n + f64::from(p.c + p.r) - 2.0) * p.beta,
    })
}

/// Shape of a reduction model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dims {
    One,
    Two,
}

fn seq_reduce_1d(p: &ModelParams, c: u32) -> f64 {
    if c < 2 {
        return 0.0;
    }
    let (tm, tc, k) = (p.t_m(), p.t_c(), f64::from(p.k));
    let mid = 2.0 * (f64::from(c) - 2.0);
    tm + mid * tm.max(tc) + k * tc + (mid + k) * p.delta
}

fn tree_level(p: &ModelParams) -> f64 {
    let (tm, tc, k) = (p.t_m(), p.t_c(), f64::from(p.k));
    tm + p.delta + (k - 1.0) * (tm.max(tc) + p.delta) + tc
}

/// Software and hardware reductions to one cluster.
///
/// The hardware forms are approximations: one merged beat per cycle along a
/// row, and one beat every two cycles once a router merges three inputs.
pub fn model_reduce(imp: Impl, dims: Dims, p: &ModelParams) -> Result<f64, ModelError> {
    p.validate()?;
    let r = if dims == Dims::One { 1 } else { p.r };
    let c = p.c;
    Ok(match imp {
        Impl::Seq => {
            if r == 1 || c == 1 {
                seq_reduce_1d(p, c.max(r))
            } else {
                let (tm, tc, k) = (p.t_m(), p.t_c(), f64::from(p.k));
                let mx = tm.max(tc);
                let (cc, rr) = (f64::from(c), f64::from(r));
                tm + 2.0 * (cc - 2.0) * mx
                    + (k - 1.0) * tc
                    + mx
                    + 2.0 * (rr - 2.0) * mx
                    + k * tc
                    + (2.0 * (cc - 2.0) + 2.0 * (rr - 2.0) + 2.0 * k) * p.delta
            }
        }
        Impl::Tree => tree_level(p) * f64::from(log2_exact(c)? + log2_exact(r)?),
        Impl::Hw => {
            if c * r == 1 {
                0.0
            } else {
                let per_beat = if r > 1 && c > 1 { 2.0 } else { 1.0 };
                p.alpha_at(0) + (per_beat * p.n + f64::from(c + r) - 2.0) * p.beta
            }
        }
        other => return Err(ModelError::Unsupported(format!("{other:?} reduction"))),
    })
}

/// Model of any multicast or reduction; the two-dimensional forms cover
/// single rows at r = 1.
pub fn model(kind: CollectiveKind, imp: Impl, p: &ModelParams) -> Result<f64, ModelError> {
    match kind {
        CollectiveKind::Multicast => model_mcast_2d(imp, p),
        CollectiveKind::Reduction => model_reduce(imp, Dims::Two, p),
        CollectiveKind::Barrier => Err(ModelError::Unsupported("barrier".into())),
    }
}

/// Batch count minimizing the model over `ks`; ties go to the smaller k.
pub fn optimal_batch(kind: CollectiveKind, imp: Impl, p: &ModelParams, ks: &[u32]) -> Result<(u32, f64), ModelError> {
    let mut best: Option<(u32, f64)> = None;
    let mut sorted = ks.to_vec();
    sorted.sort_unstable();
    for k in sorted {
        let t = model(kind, imp, &ModelParams { k, ..p.clone() })?;
        if best.is_none_or(|(_, b)| t < b) {
            best = Some((k, t));
        }
    }
    best.ok_or(ModelError::EmptySearchSet)
}

/// Network timing used to extend the models to meshes of any size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    /// Round-trip latency of a transfer between adjacent tiles.
    pub alpha0: f64,
    /// Added round-trip latency per extra hop.
    pub alpha_per_hop: f64,
    pub beta: f64,
    pub delta: f64,
    pub alpha_c: f64,
    pub beta_c: f64,
}

impl Default for NetworkParams {
    fn default() -> Self {
        Self {
            alpha0: 100.0,
            alpha_per_hop: 2.0,
            beta: 1.0,
            delta: 30.0,
            alpha_c: 10.0,
            beta_c: 1.0,
        }
    }
}

impl NetworkParams {
    pub fn alpha(&self, hops: u32) -> f64 {
        self.alpha0 + self.alpha_per_hop * f64::from(hops.saturating_sub(1))
    }

    /// Parameters of a one-row collective over `c` clusters fed from a
    /// memory tile next to the first cluster. Tree stages push over halving
    /// distances; chain stages move between neighbours.
    pub fn row_params(&self, imp: Impl, c: u32, n: f64, k: u32) -> ModelParams {
        let alpha = match imp {
            Impl::Tree => {
                let mut v = vec![self.alpha(1)];
                let mut d = c / 2;
                while d >= 1 {
                    v.push(self.alpha(d));
                    d /= 2;
                }
                v
            }
            _ => vec![self.alpha(1)],
        };
        ModelParams {
            alpha,
            beta: self.beta,
            delta: self.delta,
            n,
            k,
            c,
            r: 1,
            alpha_m: self.alpha(1),
            beta_m: self.beta,
            alpha_c: self.alpha_c,
            beta_c: self.beta_c,
        }
    }
}

/// Software baseline selection: the faster of the pipelined chain at its
/// best batch count and the tree.
pub fn best_sw(kind: CollectiveKind, net: &NetworkParams, c: u32, r: u32, n: f64) -> Result<(Impl, u32, f64), ModelError> {
    let ks: Vec<u32> = (0..=n.log2().floor().max(0.0) as u32).map(|e| 1 << e).collect();
    let mut p = net.row_params(Impl::Seq, c, n, 1);
    p.r = r;
    let (k, seq) = optimal_batch(kind, Impl::Seq, &p, &ks)?;
    let mut best = (Impl::Seq, k, seq);
    if c.is_power_of_two() && r.is_power_of_two() {
        let mut p = net.row_params(Impl::Tree, c.max(r), n, 1);
        p.c = c;
        p.r = r;
        let (k, tree) = if kind == CollectiveKind::Reduction {
            optimal_batch(kind, Impl::Tree, &p, &ks)?
        } else {
            (1, model(kind, Impl::Tree, &p)?)
        };
        if tree < best.2 {
            best = (Impl::Tree, k, tree);
        }
    }
    Ok(best)
}

/// Collective flavour of a GEMM evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    Sw,
    Hw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GemmConfig {
    pub m: u64,
    pub n: u64,
    pub k: u64,
    pub mt: u64,
    pub nt: u64,
    pub kt: u64,
    pub element_bytes: u64,
    pub util: f64,
    /// flop per cycle per cluster.
    pub peak_perf: f64,
    pub rows: u32,
    pub cols: u32,
    /// L1 budget the double-buffered tiles must fit in.
    pub l1_budget: u64,
}

impl GemmConfig {
    /// Square double-precision tiles of `tile` elements on an r x c mesh.
    pub fn square(rows: u32, cols: u32, tile: u64) -> Self {
        Self {
            m: u64::from(rows) * tile,
            n: u64::from(cols) * tile,
            k: 1024 * tile,
            mt: tile,
            nt: tile,
            kt: tile,
            element_bytes: 8,
            util: 0.981,
            peak_perf: 16.0,
            rows,
            cols,
            l1_budget: 16 * 1024,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidParams(m.to_string()));
        if !(self.util > 0.0 && self.util <= 1.0) || self.peak_perf <= 0.0 {
            return bad("need 0 < util <= 1 and positive peak performance");
        }
        if self.rows == 0 || self.cols == 0 || self.element_bytes == 0 {
            return bad("empty mesh or zero-width elements");
        }
        // Double-buffered A and B tiles plus one C tile.
        let bytes = (2 * (self.mt * self.kt + self.kt * self.nt) + self.mt * self.nt) * self.element_bytes;
        if bytes > self.l1_budget {
            return bad("tiles exceed the L1 budget");
        }
        Ok(())
    }

    pub fn a_beats(&self) -> f64 {
        (self.mt * self.kt * self.element_bytes) as f64 / 64.0
    }

    pub fn b_beats(&self) -> f64 {
        (self.kt * self.nt * self.element_bytes) as f64 / 64.0
    }

    pub fn c_beats(&self) -> f64 {
        (self.mt * self.nt * self.element_bytes) as f64 / 64.0
    }

    pub fn t_comp(&self) -> f64 {
        2.0 * (self.mt * self.nt * self.kt) as f64 / (self.util * self.peak_perf)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GemmTiming {
    pub t_comp: f64,
    /// Communication (SUMMA) or reduction (FusedConcatLinear) time.
    pub t_comm: f64,
    pub t: f64,
}

fn mcast_time(net: &NetworkParams, c: u32, n: f64, v: Variant) -> Result<f64, ModelError> {
    Ok(match v {
        _ if c == 1 => net.alpha(1) + n * net.beta,
        Variant::Sw => best_sw(CollectiveKind::Multicast, net, c, 1, n)?.2,
        Variant::Hw => model_mcast_1d(Impl::Hw, &net.row_params(Impl::Hw, c, n, 1))?,
    })
}

/// Steady-state SUMMA iteration: double buffering hides the smaller of
/// compute and the row plus column multicasts.
pub fn summa_runtime(g: &GemmConfig, net: &NetworkParams, v: Variant) -> Result<GemmTiming, ModelError> {
    g.validate()?;
    let t_comp = g.t_comp();
    let t_comm = mcast_time(net, g.cols, g.a_beats(), v)? + mcast_time(net, g.rows, g.b_beats(), v)?;
    Ok(GemmTiming {
        t_comp,
        t_comm,
        t: t_comp.max(t_comm),
    })
}

/// K-distributed GEMM followed by a reduction of the partial C tiles over
/// the whole mesh.
pub fn fcl_runtime(g: &GemmConfig, net: &NetworkParams, v: Variant) -> Result<GemmTiming, ModelError> {
    g.validate()?;
    let t_comp = g.t_comp();
    let n = g.c_beats();
    let t_red = if g.rows * g.cols == 1 || n == 0.0 {
        0.0
    } else {
        match v {
            Variant::Sw => best_sw(CollectiveKind::Reduction, net, g.cols, g.rows, n)?.2,
            Variant::Hw => {
                let mut p = net.row_params(Impl::Hw, g.cols, n, 1);
                p.r = g.rows;
                model_reduce(Impl::Hw, Dims::Two, &p)?
            }
        }
    };
    Ok(GemmTiming {
        t_comp,
        t_comm: t_red,
        t: t_comp + t_red,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dataflow {
    SummaSw,
    SummaHw,
    FclSw,
    FclHw,
}

/// Primitive counts of one steady-state iteration over all tiles: bytes
/// for movement primitives, operations for compute primitives.
///
/// Conventions: a load is a read from a memory tile into a cluster, and the
/// landing write is part of it. A store is a DMA write into another tile,
/// counted once per transaction, so a multicast counts once. An SPM write
/// is a cluster memory receiving data from another cluster. A hop is one
/// byte crossing a router that neither injects nor ejects it, except that a
/// hardware multicast counts one hop per copy its forks deliver; in-network
/// reductions end a stream at every merging router. Memory tiles sit on the
/// west edge, one hop from column 0. A multiply-accumulate is one GEMM op.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PrimitiveCounts {
    pub dma_load: f64,
    pub dma_store: f64,
    pub hop: f64,
    pub spm_write: f64,
    pub gemm: f64,
    pub sw_reduce: f64,
    pub dca_reduce: f64,
}

impl PrimitiveCounts {
    /// Counts in kilo-units (kB and kOP, 1 k = 1000).
    pub fn kilo(&self) -> [f64; 7] {
        [
            self.dma_load,
            self.dma_store,
            self.hop,
            self.spm_write,
            self.gemm,
            self.sw_reduce,
            self.dca_reduce,
        ]
        .map(|v| v / 1000.0)
    }
}

/// Forwarding-only router crossings of a binary-tree schedule over `c`
/// clusters, in transfers times hops.
fn tree_hops(c: u32) -> f64 {
    let mut total = 0u64;
    let mut d = c / 2;
    let mut transfers = 1u64;
    while d >= 1 {
        total += transfers * u64::from(d - 1);
        d /= 2;
        transfers *= 2;
    }
    total as f64
}

pub fn primitive_counts(flow: Dataflow, g: &GemmConfig, net: &NetworkParams) -> Result<PrimitiveCounts, ModelError> {
    let (r, c) = (f64::from(g.rows), f64::from(g.cols));
    let tile = (g.mt * g.kt * g.element_bytes) as f64;
    let ctile = (g.mt * g.nt * g.element_bytes) as f64;
    let macs = (g.mt * g.nt * g.kt) as f64;
    let mut out = PrimitiveCounts {
        gemm: r * c * macs,
        ..Default::default()
    };
    match flow {
        Dataflow::SummaSw | Dataflow::SummaHw => {
            // One A tile per row and one B tile per column come from memory.
            out.dma_load = (r + c) * tile;
            let copies = r * (c - 1.0) + c * (r - 1.0);
            out.spm_write = copies * tile;
            if flow == Dataflow::SummaSw {
                out.dma_store = copies * tile;
                let row = best_sw(CollectiveKind::Multicast, net, g.cols, 1, g.a_beats())?.0;
                let col = best_sw(CollectiveKind::Multicast, net, g.rows, 1, g.b_beats())?.0;
                let h = |imp: Impl, p: u32| if imp == Impl::Tree { tree_hops(p) } else { 0.0 };
                out.hop = (r * h(row, g.cols) + c * h(col, g.rows)) * tile;
            } else {
                // One store per multicast that reaches another cluster.
                let row_mcasts = if g.cols > 1 { r } else { 0.0 };
                let col_mcasts = if g.rows > 1 { c } else { 0.0 };
                out.dma_store = (row_mcasts + col_mcasts) * tile;
                out.hop = copies * tile;
            }
        }
        Dataflow::FclSw | Dataflow::FclHw => {
            out.dma_load = r * c * tile;
            let load_hops = r * c * (c - 1.0) / 2.0 * tile;
            let merges = r * c - 1.0;
            let elems = (g.mt * g.nt) as f64;
            if flow == Dataflow::FclSw {
                let (imp, _, _) = best_sw(CollectiveKind::Reduction, net, g.cols, g.rows, g.c_beats())?;
                let red_hops = if imp == Impl::Tree {
                    r * tree_hops(g.cols) + tree_hops(g.rows)
                } else {
                    0.0
                };
                // Every partial moves once; the result is written back.
                out.dma_store = (merges + 1.0) * ctile;
                out.spm_write = merges * ctile;
                out.hop = load_hops + red_hops * ctile;
                out.sw_reduce = merges * elems;
            } else {
                // Rows reduce into column 0, then column 0 reduces into the
                // origin. Row results are stored, then re-sent into the
                // column reduction; the result is written back.
                let row_results = if g.cols > 1 { r } else { 0.0 };
                let col = if g.rows > 1 { 1.0 } else { 0.0 };
                out.spm_write = (row_results + col) * ctile;
                out.dma_store = (row_results + col * r + col + 1.0) * ctile;
                out.hop = load_hops;
                out.dca_reduce = merges * elems;
            }
        }
    }
    Ok(out)
}

/// Unit energies: pJ per byte for movement, pJ per operation for compute.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyTable {
    pub dma_load: f64,
    pub dma_store: f64,
    pub hop: f64,
    pub spm_write: f64,
    pub gemm: f64,
    pub sw_reduce: f64,
    pub dca_reduce: f64,
}

const DEFAULT_ENERGY: &str = include_str!("../data/energy_table.toml");

impl Default for EnergyTable {
    fn default() -> Self {
        Self::parse(DEFAULT_ENERGY).expect("bundled energy table parses")
    }
}

impl EnergyTable {
    /// Reads a table whose movement entries are in `pJ/B` and compute
    /// entries in `pJ/OP`.
    pub fn parse(text: &str) -> Result<Self, ModelError> {
        #[derive(Deserialize)]
        struct Entry {
            value: f64,
            unit: String,
        }
        #[derive(Deserialize)]
        struct Raw {
            dma_load: Entry,
            dma_store: Entry,
            hop: Entry,
            spm_write: Entry,
            gemm: Entry,
            sw_reduce: Entry,
            dca_reduce: Entry,
        }
        let raw: Raw = toml::from_str(text).map_err(|e| ModelError::InvalidParams(e.to_string()))?;
        let get = |e: &Entry, unit: &str| {
            if e.unit != unit {
                Err(ModelError::UnitMismatch(format!("expected {unit}, found {}", e.unit)))
            } else if !(e.value > 0.0) {
                Err(ModelError::InvalidParams("energies must be positive".into()))
            } else {
                Ok(e.value)
            }
        };
        Ok(Self {
            dma_load: get(&raw.dma_load, "pJ/B")?,
            dma_store: get(&raw.dma_store, "pJ/B")?,
            hop: get(&raw.hop, "pJ/B")?,
            spm_write: get(&raw.spm_write, "pJ/B")?,
            gemm: get(&raw.gemm, "pJ/OP")?,
            sw_reduce: get(&raw.sw_reduce, "pJ/OP")?,
            dca_reduce: get(&raw.dca_reduce, "pJ/OP")?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyEstimate {
    pub total_pj: f64,
    /// Same order as the primitive fields.
    pub breakdown_pj: [f64; 7],
}

pub fn energy_estimate(counts: &PrimitiveCounts, table: &EnergyTable) -> EnergyEstimate {
    let k = [
        counts.dma_load,
        counts.dma_store,
        counts.hop,
        counts.spm_write,
        counts.gemm,
        counts.sw_reduce,
        counts.dca_reduce,
    ];
    let e = [
        table.dma_load,
        table.dma_store,
        table.hop,
        table.spm_write,
        table.gemm,
        table.sw_reduce,
        table.dca_reduce,
    ];
    let breakdown_pj: [f64; 7] = std::array::from_fn(|i| k[i] * e[i]);
    EnergyEstimate {
        total_pj: breakdown_pj.iter().sum(),
        breakdown_pj,
    }
}
