//! Executable schedules of the software and hardware collectives.
//!
//! Software variants are built from phases: in each phase every cluster
//! starts at most one DMA and at most one compute, waits for both, and then
//! joins a hardware barrier over all participants (except after the last
//! phase). Hardware variants issue a single collective transaction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::endpoint::{BarrierKind, BarrierOp, DmaRequest, Op};
use crate::engine::{run, Calibration, Geometry, MetricsRecord, SimConfig, SimError, Simulation, Workload};
use crate::models::{self, ModelError, ModelParams};
use crate::protocol::{CollectiveOpcode, LaneWidth, WIDE_BYTES};
use crate::topology::{coord_masks_to_multi_address, encode_destinations, Coord, CoordMasks, MultiAddress};

/// L1 layout used by the collectives.
pub const DATA: u64 = 0;
pub const RECV: [u64; 2] = [0x8000, 0x10000];
/// Landing buffer of multicasts and of hardware reductions.
pub const RESULT: u64 = 0x8000;
pub const MAX_BYTES: u64 = 0x8000;

const BARRIER_ID_BASE: u64 = 1 << 62;
const REDUCTION_ID: u64 = 1 << 61;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CollectiveKind {
    Multicast,
    Reduction,
    Barrier,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Impl {
    Naive,
    Seq,
    Tree,
    Hw,
    SwBarrier,
    HwBarrier,
}

impl Impl {
    pub fn name(self) -> &'static str {
        match self {
            Impl::Naive => "naive",
            Impl::Seq => "seq",
            Impl::Tree => "tree",
            Impl::Hw => "hw",
            Impl::SwBarrier => "sw_barrier",
            Impl::HwBarrier => "hw_barrier",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CollectiveError {
    #[error("invalid collective: {0}")]
    Invalid(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// One collective experiment over an `rows x cols` block of clusters
/// anchored at the region origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollectiveSpec {
    pub kind: CollectiveKind,
    pub imp: Impl,
    pub rows: u32,
    pub cols: u32,
    pub n_bytes: u64,
    /// Batch count for pipelined variants.
    pub k: u32,
    /// Barrier separating the phases of software schedules.
    pub barrier: BarrierKind,
}

impl CollectiveSpec {
    pub fn new(kind: CollectiveKind, imp: Impl, rows: u32, cols: u32, n_bytes: u64, k: u32) -> Self {
        Self {
            kind,
            imp,
            rows,
            cols,
            n_bytes,
            k,
            barrier: BarrierKind::Hw,
        }
    }

    pub fn beats(&self) -> u32 {
        (self.n_bytes / WIDE_BYTES as u64) as u32
    }

    pub fn validate(&self, cfg: &SimConfig) -> Result<(), CollectiveError> {
        let bad = |m: &str| Err(CollectiveError::Invalid(m.to_string()));
        if self.rows == 0 || self.cols == 0 || self.rows > cfg.map.region_h || self.cols > cfg.map.region_w {
            return bad("participant block must fit in the collective region");
        }
        if self.n_bytes == 0 || self.n_bytes % WIDE_BYTES as u64 != 0 || self.n_bytes > MAX_BYTES {
            return bad("size must be a positive multiple of 64 bytes up to 32 KiB");
        }
        let n = self.beats();
        if self.k == 0 || self.k > n || n % self.k != 0 {
            return bad("batch count must divide the beat count");
        }
        let p = self.rows * self.cols;
        if matches!(self.imp, Impl::Tree | Impl::Hw) && !(self.rows.is_power_of_two() && self.cols.is_power_of_two()) {
            return bad("tree and hardware variants need power-of-two extents");
        }
        if self.kind == CollectiveKind::Reduction && self.imp == Impl::Naive {
            return bad("reductions have seq, tree and hw variants");
        }
        if p < 1 {
            return bad("no participants");
        }
        Ok(())
    }

    fn participants(&self) -> Vec<Coord> {
        let mut v = Vec::new();
        for y in 0..self.rows {
            for x in 0..self.cols {
                v.push(Coord::new(x, y));
            }
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CollectiveOutcome {
    pub metrics: MetricsRecord,
    pub k: u32,
    /// Payload check: multicast byte equality, reduction exact sum.
    pub correct: bool,
}

#[derive(Default)]
struct Phase {
    moves: Vec<(Coord, DmaRequest)>,
    computes: Vec<(Coord, u64, u64, u32)>,
}

struct Schedule {
    phases: Vec<Phase>,
    participants: Vec<Coord>,
    barrier: BarrierKind,
    /// Clusters finish a phase's compute before issuing its transfers,
    /// because they send what they just reduced.
    compute_first: bool,
}

impl Schedule {
    fn new(participants: Vec<Coord>, barrier: BarrierKind) -> Self {
        Self {
            phases: Vec::new(),
            participants,
            barrier,
            compute_first: false,
        }
    }

    fn phase(&mut self, i: usize) -> &mut Phase {
        while self.phases.len() <= i {
            self.phases.push(Phase::default());
        }
        &mut self.phases[i]
    }

    fn into_workload(self, w: &mut Workload) {
        let last = self.phases.len().saturating_sub(1);
        for (i, ph) in self.phases.iter().enumerate() {
            for &c in &self.participants {
                let computes = |w: &mut Workload| {
                    for &(who, acc, src, beats) in &ph.computes {
                        if who == c {
                            w.push(c, Op::Reduce { acc, src, beats });
                        }
                    }
                };
                if self.compute_first {
                    computes(w);
                }
                let mut busy = false;
                for (who, req) in &ph.moves {
                    if *who == c {
                        w.push(c, Op::Dma(req.clone()));
                        busy = true;
                    }
                }
                if !self.compute_first {
                    computes(w);
                }
                if busy {
                    w.push(c, Op::DmaWait);
                }
                if i < last {
                    w.push(
                        c,
                        Op::Barrier(BarrierOp {
                            kind: self.barrier,
                            id: BARRIER_ID_BASE + i as u64,
                            participants: self.participants.clone(),
                            root: self.participants[0],
                        }),
                    );
                }
            }
        }
    }
}

fn copy(cfg: &SimConfig, from: Coord, from_off: u64, to: Coord, to_off: u64, beats: u32) -> DmaRequest {
    DmaRequest::copy(cfg.addr(from, from_off), cfg.addr(to, to_off), beats)
}

fn memory_tile(cfg: &SimConfig) -> Result<Coord, CollectiveError> {
    cfg.memory_tile(0)
        .ok_or_else(|| CollectiveError::Invalid("mesh has no memory tile".into()))
}

/// Multicast path: the row (x = 0..cols, y = 0) then each column upwards.
/// Node `(j, i)` sits at pipeline depth `j + 1 + i`; the memory tile is 0.
fn upstream(c: Coord) -> Option<Coord> {
    if c.y > 0 {
        Some(Coord::new(c.x, c.y - 1))
    } else if c.x > 0 {
        Some(Coord::new(c.x - 1, 0))
    } else {
        None
    }
}

fn multicast_schedule(spec: &CollectiveSpec, cfg: &SimConfig, m0: Coord) -> Schedule {
    let n = spec.beats();
    let parts = spec.participants();
    let root = parts[0];
    match spec.imp {
        Impl::Naive | Impl::Seq => {
            let k = if spec.imp == Impl::Naive { 1 } else { spec.k };
            let b = n / k;
            let mut s = Schedule::new(parts.clone(), spec.barrier);
            for &c in &parts {
                // Naive serves the row, then every column; the pipelined
                // chain feeds each column as soon as its row node has data.
                let depth = if k == 1 && c.y > 0 {
                    (spec.cols - 1 + c.y) as usize
                } else {
                    (c.x + c.y) as usize
                };
                for batch in 0..k {
                    let off = u64::from(batch * b) * WIDE_BYTES as u64;
                    let req = match upstream(c) {
                        None => copy(cfg, m0, off, c, RESULT + off, b),
                        Some(u) => copy(cfg, u, RESULT + off, c, RESULT + off, b),
                    };
                    s.phase(depth + batch as usize).moves.push((c, req));
                }
            }
            s
        }
        _ => {
            // Binary doubling over the linear order of the block, pushed by
            // holders; the root's initial fetch and its first push share
            // phase 0 without a barrier in between.
            let p = parts.len();
            let mut s = Schedule::new(parts.clone(), spec.barrier);
            let mut stride = p / 2;
            let mut level = 0;
            while stride >= 1 {
                let ph = s.phase(level);
                if level == 0 {
                    ph.moves.push((root, copy(cfg, m0, 0, root, RESULT, n)));
                }
                for i in (0..p).step_by(stride * 2) {
                    ph.moves.push((parts[i], copy(cfg, parts[i], RESULT, parts[i + stride], RESULT, n)));
                }
                stride /= 2;
                level += 1;
            }
            if p == 1 {
                s.phase(0).moves.push((root, copy(cfg, m0, 0, root, RESULT, n)));
            }
            s
        }
    }
}

pub fn multicast_workload(spec: &CollectiveSpec, cfg: &SimConfig) -> Result<(Workload, Vec<u8>), CollectiveError> {
    spec.validate(cfg)?;
    let m0 = memory_tile(cfg)?;
    let n = spec.beats();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let data: Vec<u8> = (0..spec.n_bytes).map(|_| rng.gen()).collect();
    let mut w = Workload::default();
    w.memory.push((m0, 0, data.clone()));
    let parts = spec.participants();
    let root = parts[0];
    match spec.imp {
        Impl::Hw => {
            let set = parts.iter().copied().collect();
            let cm = encode_destinations(&set, &cfg.map).map_err(SimError::from)?;
            let dst = coord_masks_to_multi_address(&cm, RESULT, &cfg.map, &cfg.mesh);
            w.dma(
                root,
                DmaRequest {
                    dst,
                    ..DmaRequest::copy(cfg.addr(m0, 0), 0, n)
                },
            );
            w.push(root, Op::DmaWait);
        }
        Impl::Naive | Impl::Seq | Impl::Tree => multicast_schedule(spec, cfg, m0).into_workload(&mut w),
        _ => return Err(CollectiveError::Invalid("not a multicast implementation".into())),
    }
    Ok((w, data))
}

pub fn run_multicast(spec: &CollectiveSpec, cfg: &SimConfig) -> Result<CollectiveOutcome, CollectiveError> {
    let (w, data) = multicast_workload(spec, cfg)?;
    let (metrics, sim) = run(cfg, &w, &experiment_id(spec))?;
    let correct = spec
        .participants()
        .iter()
        .all(|&c| sim.tile(c).mem.read(RESULT, data.len()).is_ok_and(|d| d == &data[..]));
    Ok(CollectiveOutcome {
        metrics,
        k: effective_k(spec),
        correct,
    })
}

fn effective_k(spec: &CollectiveSpec) -> u32 {
    match spec.imp {
        Impl::Seq | Impl::Tree => spec.k,
        _ => 1,
    }
}

pub fn experiment_id(spec: &CollectiveSpec) -> String {
    format!(
        "{:?}-{}-{}x{}-{}B-k{}",
        spec.kind,
        spec.imp.name(),
        spec.rows,
        spec.cols,
        spec.n_bytes,
        spec.k
    )
    .to_lowercase()
}

/// How reduction inputs are generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReductionData {
    /// Small multiples of 1/4: every summation order is exact.
    Dyadic,
    /// Arbitrary doubles in [-1, 1).
    Random,
    Zero,
}

pub fn reduction_inputs(spec: &CollectiveSpec, seed: u64, data: ReductionData) -> Vec<(Coord, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED);
    let len = spec.n_bytes as usize / 8;
    spec.participants()
        .into_iter()
        .map(|c| {
            let v = (0..len)
                .map(|_| match data {
                    ReductionData::Dyadic => f64::from(rng.gen_range(-64i32..64)) / 4.0,
                    ReductionData::Random => rng.gen_range(-1.0..1.0),
                    ReductionData::Zero => 0.0,
                })
                .collect();
            (c, v)
        })
        .collect()
}

/// Row chains end at x = 0; the column chain runs down x = 0.
fn reduction_schedule(spec: &CollectiveSpec, cfg: &SimConfig, s: &mut Schedule) {
    let n = spec.beats();
    let k = spec.k;
    let b = n / k;
    let boff = |batch: u32| u64::from(batch * b) * WIDE_BYTES as u64;
    let (rows, cols) = (spec.rows, spec.cols);
    match spec.imp {
        Impl::Seq => {
            let row_span = if cols > 1 { 2 * (cols as usize - 2) + k as usize } else { 0 };
            // Row chains: depth d = cols-1-x pulls from x+1.
            for y in 0..rows {
                for x in 0..cols.saturating_sub(1) {
                    let d = (cols - 1 - x) as usize;
                    let me = Coord::new(x, y);
                    let from = Coord::new(x + 1, y);
                    for batch in 0..k {
                        let m = 2 * (d - 1) + batch as usize;
                        let buf = RECV[(batch % 2) as usize] + boff(batch);
                        s.phase(m).moves.push((me, copy(cfg, from, DATA + boff(batch), me, buf, b)));
                        s.phase(m + 1).computes.push((me, DATA + boff(batch), buf, b));
                    }
                }
            }
            // Column chain along x = 0, starting with the rows' last compute.
            for y in 0..rows.saturating_sub(1) {
                let e = (rows - 1 - y) as usize;
                let me = Coord::new(0, y);
                let from = Coord::new(0, y + 1);
                for batch in 0..k {
                    let m = row_span + 2 * (e - 1) + batch as usize;
                    let buf = RECV[((batch + k) % 2) as usize] + boff(batch);
                    s.phase(m).moves.push((me, copy(cfg, from, DATA + boff(batch), me, buf, b)));
                    s.phase(m + 1).computes.push((me, DATA + boff(batch), buf, b));
                }
            }
        }
        Impl::Tree => {
            // Double-buffered binary tree: rows first, then column 0.
            let mut levels: Vec<Vec<(Coord, Coord)>> = Vec::new();
            let mut stride = 1;
            while stride < cols {
                levels.push(
                    (0..rows)
                        .flat_map(|y| {
                            (0..cols)
                                .step_by(2 * stride as usize)
                                .map(move |x| (Coord::new(x + stride, y), Coord::new(x, y)))
                        })
                        .collect(),
                );
                stride *= 2;
            }
            let mut stride = 1;
            while stride < rows {
                levels.push(
                    (0..rows)
                        .step_by(2 * stride as usize)
                        .map(|y| (Coord::new(0, y + stride), Coord::new(0, y)))
                        .collect(),
                );
                stride *= 2;
            }
            s.compute_first = true;
            let mut base = 0usize;
            let mut parity = 0u32;
            for pairs in levels {
                for batch in 0..k {
                    let buf = RECV[((batch + parity) % 2) as usize] + boff(batch);
                    for &(from, to) in &pairs {
                        s.phase(base + batch as usize)
                            .moves
                            .push((from, copy(cfg, from, DATA + boff(batch), to, buf, b)));
                        s.phase(base + batch as usize + 1)
                            .computes
                            .push((to, DATA + boff(batch), buf, b));
                    }
                }
                // The next level's first push follows the last compute on the
                // same cluster, so it shares that phase's barrier-free tail.
                base += k as usize;
                parity = (parity + k) % 2;
            }
        }
        _ => {}
    }
}

pub fn reduction_workload(
    spec: &CollectiveSpec,
    cfg: &SimConfig,
    data: ReductionData,
) -> Result<(Workload, Vec<(Coord, Vec<f64>)>), CollectiveError> {
    spec.validate(cfg)?;
    let inputs = reduction_inputs(spec, cfg.seed, data);
    let mut w = Workload::default();
    for (c, v) in &inputs {
        w.memory.push((*c, DATA, v.iter().flat_map(|x| x.to_le_bytes()).collect()));
    }
    let parts = spec.participants();
    let root = parts[0];
    match spec.imp {
        Impl::Hw => {
            let set = parts.iter().copied().collect();
            let contrib = encode_destinations(&set, &cfg.map).map_err(SimError::from)?;
            for &c in &parts {
                w.dma(
                    c,
                    DmaRequest {
                        src: cfg.addr(c, DATA),
                        dst: MultiAddress::unicast(cfg.addr(root, RESULT)),
                        beats: spec.beats(),
                        opcode: CollectiveOpcode::WideFpSum,
                        lanes: LaneWidth::F64,
                        contributors: Some(contrib),
                        txn_id: Some(REDUCTION_ID),
                    },
                );
                w.push(c, Op::DmaWait);
            }
        }
        Impl::Seq | Impl::Tree => {
            let mut s = Schedule::new(parts, spec.barrier);
            reduction_schedule(spec, cfg, &mut s);
            if s.phases.is_empty() {
                // A single contributor holds the result already.
                w.push(root, Op::Delay(0));
            }
            s.into_workload(&mut w);
        }
        _ => return Err(CollectiveError::Invalid("not a reduction implementation".into())),
    }
    Ok((w, inputs))
}

/// Where the reduced vector ends up.
pub fn reduction_result(spec: &CollectiveSpec, sim: &Simulation) -> Vec<f64> {
    let off = if spec.imp == Impl::Hw { RESULT } else { DATA };
    sim.tile(Coord::new(0, 0))
        .mem
        .read_f64s(off, spec.n_bytes as usize / 8)
        .unwrap_or_default()
}

pub struct ReductionRun {
    pub outcome: CollectiveOutcome,
    pub inputs: Vec<(Coord, Vec<f64>)>,
    pub result: Vec<f64>,
}

pub fn run_reduction_with(
    spec: &CollectiveSpec,
    cfg: &SimConfig,
    data: ReductionData,
) -> Result<ReductionRun, CollectiveError> {
    let (w, inputs) = reduction_workload(spec, cfg, data)?;
    let (metrics, sim) = run(cfg, &w, &experiment_id(spec))?;
    let result = reduction_result(spec, &sim);
    let correct = data == ReductionData::Random || {
        let len = spec.n_bytes as usize / 8;
        (0..len).all(|i| result.get(i) == Some(&inputs.iter().map(|(_, v)| v[i]).sum::<f64>()))
    };
    Ok(ReductionRun {
        outcome: CollectiveOutcome {
            metrics,
            k: effective_k(spec),
            correct,
        },
        inputs,
        result,
    })
}

pub fn run_reduction(spec: &CollectiveSpec, cfg: &SimConfig) -> Result<CollectiveOutcome, CollectiveError> {
    run_reduction_with(spec, cfg, ReductionData::Dyadic).map(|r| r.outcome)
}

pub fn run_collective_2d(spec: &CollectiveSpec, cfg: &SimConfig) -> Result<CollectiveOutcome, CollectiveError> {
    match spec.kind {
        CollectiveKind::Multicast => run_multicast(spec, cfg),
        CollectiveKind::Reduction => run_reduction(spec, cfg),
        CollectiveKind::Barrier => Err(CollectiveError::Invalid("barriers are run with run_barrier".into())),
    }
}

fn geometry(cfg: &SimConfig, who: Coord, req: &DmaRequest) -> Geometry {
    let at = |a: u64| cfg.map.decode(&cfg.mesh, a).unwrap_or(who);
    Geometry {
        initiator: who,
        source: at(req.src),
        destination: at(req.dst.base),
    }
}

fn max_alpha<'a>(cfg: &SimConfig, cal: &Calibration, moves: impl Iterator<Item = &'a (Coord, DmaRequest)>) -> f64 {
    moves
        .map(|(who, req)| cal.alpha(&geometry(cfg, *who, req)))
        .fold(0.0, f64::max)
}

/// Closed-form runtime of a multicast or reduction with calibrated
/// parameters. Stage latencies come from the geometry of the transfers the
/// schedule issues in each phase.
pub fn predict(spec: &CollectiveSpec, cfg: &SimConfig, cal: &Calibration) -> Result<f64, CollectiveError> {
    spec.validate(cfg)?;
    let m0 = memory_tile(cfg)?;
    let root = spec.participants()[0];
    let fetch = Geometry {
        initiator: root,
        source: m0,
        destination: root,
    };
    let mut p = ModelParams {
        alpha: vec![cal.alpha(&fetch)],
        beta: cal.beta,
        delta: cal.delta(spec.rows, spec.cols),
        n: f64::from(spec.beats()),
        k: if matches!(spec.imp, Impl::Seq | Impl::Tree) { spec.k } else { 1 },
        c: spec.cols,
        r: spec.rows,
        alpha_m: 0.0,
        beta_m: cal.beta,
        alpha_c: cal.alpha_c,
        beta_c: cal.beta_c,
    };
    let neighbor = |from: Coord, to: Coord| {
        cal.alpha(&Geometry {
            initiator: from,
            source: from,
            destination: to,
        })
    };
    match (spec.kind, spec.imp) {
        (CollectiveKind::Multicast, Impl::Naive | Impl::Seq) => {
            let s = multicast_schedule(spec, cfg, m0);
            p.alpha = s.phases.iter().map(|ph| max_alpha(cfg, cal, ph.moves.iter())).collect();
        }
        (CollectiveKind::Multicast, Impl::Tree) => {
            // The root's fetch is a stage of its own ahead of the pushes.
            let s = multicast_schedule(spec, cfg, m0);
            p.alpha.extend(
                s.phases
                    .iter()
                    .map(|ph| max_alpha(cfg, cal, ph.moves.iter().filter(|(_, r)| r.src != cfg.addr(m0, 0)))),
            );
        }
        (kind, Impl::Hw) => p.alpha = vec![cal.hw_alpha(kind, spec.rows, spec.cols)],
        (CollectiveKind::Reduction, Impl::Seq) => {
            let mut a: f64 = 0.0;
            if spec.cols > 1 {
                a = a.max(neighbor(Coord::new(1, 0), root));
            }
            if spec.rows > 1 {
                a = a.max(neighbor(Coord::new(0, 1), root));
            }
            p.alpha_m = a;
        }
        (CollectiveKind::Reduction, Impl::Tree) => {
            // Every level moves one partial; the levels differ in distance.
            let mut levels = Vec::new();
            let mut d = 1;
            while d < spec.cols {
                levels.push(neighbor(Coord::new(d, 0), root));
                d *= 2;
            }
            let mut d = 1;
            while d < spec.rows {
                levels.push(neighbor(Coord::new(0, d), root));
                d *= 2;
            }
            p.alpha_m = levels.iter().sum::<f64>() / levels.len().max(1) as f64;
        }
        _ => {}
    }
    Ok(models::model(spec.kind, spec.imp, &p)?)
}

/// Divisors of `n`, ascending.
pub fn divisors(n: u32) -> Vec<u32> {
    (1..=n).filter(|d| n % d == 0).collect()
}

/// Simulates every batch count in `ks` and keeps the fastest (ties to the
/// smaller k).
pub fn best_k(spec: &CollectiveSpec, cfg: &SimConfig, ks: &[u32]) -> Result<CollectiveOutcome, CollectiveError> {
    let mut best: Option<CollectiveOutcome> = None;
    for &k in ks {
        let s = CollectiveSpec { k, ..*spec };
        let o = run_collective_2d(&s, cfg)?;
        if best.as_ref().is_none_or(|b| o.metrics.cycles < b.metrics.cycles) {
            best = Some(o);
        }
    }
    best.ok_or_else(|| CollectiveError::Invalid("empty batch search set".into()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BarrierResult {
    /// From the first arrival to the last departure.
    pub cycles: u64,
    /// (cluster, arrival, departure)
    pub events: Vec<(Coord, u64, u64)>,
}

/// The first `m` clusters in node-index order (Y fastest).
pub fn barrier_participants(cfg: &SimConfig, m: u32) -> Vec<Coord> {
    cfg.map.region_coords().take(m as usize).collect()
}

/// How a barrier measurement is set up.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BarrierSetup {
    /// Barriers run before the measured one; their release staggers the
    /// arrivals by distance from the root, as in a synchronized loop.
    pub warmup: u32,
    /// Extra arrival delay of cluster `i`: `i * skew` cycles.
    pub skew: u64,
}

impl Default for BarrierSetup {
    fn default() -> Self {
        Self { warmup: 0, skew: 1 }
    }
}

/// The participant with the smallest worst-case hop distance to the others
/// (ties to the lowest node index); it keeps the merge tree shallow.
pub fn central_root(parts: &[Coord]) -> Coord {
    let ecc = |r: &Coord| parts.iter().map(|p| r.x.abs_diff(p.x) + r.y.abs_diff(p.y)).max().unwrap_or(0);
    parts.iter().copied().min_by_key(ecc).unwrap_or(Coord::new(0, 0))
}

/// Runs a barrier over `m` clusters and measures the last one.
pub fn run_barrier(kind: BarrierKind, m: u32, setup: BarrierSetup, cfg: &SimConfig) -> Result<BarrierResult, CollectiveError> {
    let total = cfg.map.region_w * cfg.map.region_h;
    if m < 2 || m > total {
        return Err(CollectiveError::Invalid(format!("barrier needs 2..={total} clusters")));
    }
    let parts = barrier_participants(cfg, m);
    if kind == BarrierKind::Hw {
        let set = parts.iter().copied().collect();
        encode_destinations(&set, &cfg.map).map_err(SimError::from)?;
    }
    let measured = BARRIER_ID_BASE + u64::from(setup.warmup);
    let root = central_root(&parts);
    let mut w = Workload::default();
    for (i, &c) in parts.iter().enumerate() {
        for id in BARRIER_ID_BASE..=measured {
            if id == measured && setup.skew > 0 && i > 0 {
                w.push(c, Op::Delay(setup.skew * i as u64));
            }
            w.push(
                c,
                Op::Barrier(BarrierOp {
                    kind,
                    id,
                    participants: parts.clone(),
                    root,
                }),
            );
        }
    }
    let (_, sim) = run(cfg, &w, "barrier")?;
    let events: Vec<(Coord, u64, u64)> = sim
        .barrier_events()
        .into_iter()
        .filter(|(_, e)| e.id == measured)
        .map(|(c, e)| (c, e.arrival, e.departure))
        .collect();
    let first = events.iter().map(|e| e.1).min().unwrap_or(0);
    let last = events.iter().map(|e| e.2).max().unwrap_or(0);
    Ok(BarrierResult {
        cycles: last - first,
        events,
    })
}

/// Contributors of a block as coordinate masks.
pub fn block_masks(rows: u32, cols: u32, cfg: &SimConfig) -> Result<CoordMasks, CollectiveError> {
    let set = (0..cols)
        .flat_map(|x| (0..rows).map(move |y| Coord::new(x, y)))
        .collect();
    Ok(encode_destinations(&set, &cfg.map).map_err(SimError::from)?)
}

/// One measured and modeled collective configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cell {
    pub kind: CollectiveKind,
    pub imp: Impl,
    pub rows: u32,
    pub cols: u32,
    pub n_bytes: u64,
    /// Batch count that minimized the simulated runtime.
    pub k: u32,
    pub simulated: u64,
    pub modeled: f64,
    pub correct: bool,
}

impl Cell {
    pub fn error(&self) -> f64 {
        (self.modeled - self.simulated as f64) / self.simulated as f64
    }
}

/// Batch counts worth searching for an implementation.
pub fn batch_candidates(kind: CollectiveKind, imp: Impl, beats: u32) -> Vec<u32> {
    match (kind, imp) {
        (_, Impl::Seq) | (CollectiveKind::Reduction, Impl::Tree) => divisors(beats),
        _ => vec![1],
    }
}

/// Implementations meaningful for a collective kind.
pub fn implementations(kind: CollectiveKind) -> &'static [Impl] {
    match kind {
        CollectiveKind::Reduction => &[Impl::Seq, Impl::Tree, Impl::Hw],
        _ => &[Impl::Naive, Impl::Seq, Impl::Tree, Impl::Hw],
    }
}

/// Simulates `imp` at its best batch count and models it with the same k.
pub fn evaluate(
    kind: CollectiveKind,
    imp: Impl,
    rows: u32,
    cols: u32,
    n_bytes: u64,
    cfg: &SimConfig,
    cal: &Calibration,
) -> Result<Cell, CollectiveError> {
    let spec = CollectiveSpec::new(kind, imp, rows, cols, n_bytes, 1);
    spec.validate(cfg)?;
    let o = best_k(&spec, cfg, &batch_candidates(kind, imp, spec.beats()))?;
    let modeled = predict(&CollectiveSpec { k: o.k, ..spec }, cfg, cal)?;
    Ok(Cell {
        kind,
        imp,
        rows,
        cols,
        n_bytes,
        k: o.k,
        simulated: o.metrics.cycles,
        modeled,
        correct: o.correct,
    })
}

/// The fastest simulated software cell (ties to the earlier entry).
pub fn best_software(cells: &[Cell]) -> Option<&Cell> {
    cells
        .iter()
        .filter(|c| c.imp != Impl::Hw)
        .min_by_key(|c| c.simulated)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_validation() {
        let cfg = SimConfig::default();
        let ok = CollectiveSpec::new(CollectiveKind::Multicast, Impl::Seq, 1, 4, 4096, 4);
        assert!(ok.validate(&cfg).is_ok());
        assert!(CollectiveSpec { k: 0, ..ok }.validate(&cfg).is_err());
        assert!(CollectiveSpec { k: 3, ..ok }.validate(&cfg).is_err());
        assert!(CollectiveSpec { cols: 3, imp: Impl::Tree, ..ok }.validate(&cfg).is_err());
        assert!(CollectiveSpec { n_bytes: 0, ..ok }.validate(&cfg).is_err());
    }

    #[test]
    fn divisors_of_power_of_two() {
        assert_eq!(divisors(16), vec![1, 2, 4, 8, 16]);
        assert_eq!(divisors(1), vec![1]);
    }
}
