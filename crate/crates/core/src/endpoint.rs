//! Tiles attached to the routers' Local ports: network interface, DMA
//! engine, scratchpad memory with atomics, DCA lanes and a control core that
//! executes a small per-tile program.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::{
    apply_wide_reduction, Atomic, CollectiveOpcode, Flit, FlitKind, LaneWidth, Link, Payload, ProtocolError, Resp,
    Transaction, NARROW_BYTES, WIDE_BYTES,
};
use crate::topology::{
    addr_mask_to_coord_masks, cover_destinations, coord_masks_to_multi_address, resolve_local_address, AddressMap,
    Coord, CoordMasks, Mesh, MultiAddress, TopologyError,
};

/// Offset of the software barrier counter in a cluster window.
pub const COUNTER_OFFSET: u64 = 0x1F000;
/// Offset targeted by the hardware (LsbAnd) barrier.
pub const HW_BARRIER_OFFSET: u64 = 0x1F100;
/// Writes to this offset raise the cluster interrupt.
pub const IRQ_OFFSET: u64 = 0x1F200;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EndpointError {
    #[error(transparent)]
    Decode(#[from] TopologyError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("address {0:#x} is outside the tile memory")]
    UnmappedAddress(u64),
    #[error("atomic address {0:#x} is not 8-byte aligned")]
    Misaligned(u64),
    #[error("operation {0:?} is not supported by the DCA unit")]
    UnsupportedOp(CollectiveOpcode),
    #[error("DCA unit accepts one operation per cycle")]
    IssueConflict,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub l1_bytes: usize,
    pub l2_bytes: usize,
    /// Cycles from a DMA reaching the head of the queue to its first request.
    pub dma_issue_overhead: u64,
    /// Read latency of cluster L1 before the first beat.
    pub l1_latency: u64,
    /// Read latency of memory-tile L2 before the first beat.
    pub l2_latency: u64,
    /// Cycles from the last write beat to the write response.
    pub write_latency: u64,
    /// Occupancy of one atomic read-modify-write.
    pub amo_latency: u64,
    /// Constant overhead of a core compute phase.
    pub compute_alpha: u64,
    /// Core compute cycles per 64-byte beat.
    pub compute_beta: u64,
    /// Cycles from reaching a barrier to issuing its request.
    pub barrier_issue: u64,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            l1_bytes: 128 * 1024,
            l2_bytes: 1024 * 1024,
            dma_issue_overhead: 80,
            l1_latency: 2,
            l2_latency: 6,
            write_latency: 1,
            amo_latency: 3,
            compute_alpha: 85,
            compute_beta: 1,
            barrier_issue: 15,
        }
    }
}

/// Byte-addressable tile memory with a serializing atomic port.
#[derive(Debug, Clone)]
pub struct SpmMemory {
    data: Vec<u8>,
    amo_free_at: u64,
    pub amo_ops: u64,
}

impl SpmMemory {
    pub fn new(bytes: usize) -> Self {
        Self {
            data: vec![0; bytes],
            amo_free_at: 0,
            amo_ops: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    fn range(&self, off: u64, len: usize) -> Result<std::ops::Range<usize>, EndpointError> {
        let start = usize::try_from(off).map_err(|_| EndpointError::UnmappedAddress(off))?;
        let end = start.checked_add(len).filter(|&e| e <= self.data.len());
        end.map(|e| start..e).ok_or(EndpointError::UnmappedAddress(off))
    }

    pub fn read(&self, off: u64, len: usize) -> Result<&[u8], EndpointError> {
        Ok(&self.data[self.range(off, len)?])
    }

    pub fn write(&mut self, off: u64, bytes: &[u8]) -> Result<(), EndpointError> {
        let r = self.range(off, bytes.len())?;
        self.data[r].copy_from_slice(bytes);
        Ok(())
    }

    pub fn read_u64(&self, off: u64) -> Result<u64, EndpointError> {
        Ok(u64::from_le_bytes(self.read(off, 8)?.try_into().unwrap()))
    }

    pub fn read_f64s(&self, off: u64, count: usize) -> Result<Vec<f64>, EndpointError> {
        Ok(self
            .read(off, count * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn write_f64s(&mut self, off: u64, vals: &[f64]) -> Result<(), EndpointError> {
        let bytes: Vec<u8> = vals.iter().flat_map(|v| v.to_le_bytes()).collect();
        self.write(off, &bytes)
    }

    /// Atomic add. Returns the previous value and the cycle the port frees.
    pub fn amo_add(&mut self, off: u64, delta: u64, latency: u64, now: u64) -> Result<(u64, u64), EndpointError> {
        if off % 8 != 0 {
            return Err(EndpointError::Misaligned(off));
        }
        let old = self.read_u64(off)?;
        self.write(off, &old.wrapping_add(delta).to_le_bytes())?;
        let start = now.max(self.amo_free_at);
        self.amo_free_at = start + latency;
        self.amo_ops += 1;
        Ok((old, self.amo_free_at))
    }
}

/// Pipelined arithmetic lanes lent to the network.
#[derive(Debug, Clone)]
pub struct DcaUnit {
    pub latency: u64,
    a: Option<Box<[u8; WIDE_BYTES]>>,
    b: Option<Box<[u8; WIDE_BYTES]>>,
    pipe: VecDeque<(u64, usize, Box<[u8; WIDE_BYTES]>)>,
    last_issue: Option<u64>,
    pub ops: u64,
}

impl DcaUnit {
    pub fn new(latency: u64) -> Self {
        Self {
            latency,
            a: None,
            b: None,
            pipe: VecDeque::new(),
            last_issue: None,
            ops: 0,
        }
    }

    /// Starts `a op b` this cycle; the result, carrying `tag`, is available
    /// `latency` cycles later.
    #[allow(clippy::too_many_arguments)]
    pub fn issue(
        &mut self,
        op: CollectiveOpcode,
        a: &[u8],
        b: &[u8],
        lanes: LaneWidth,
        tag: usize,
        now: u64,
    ) -> Result<u64, EndpointError> {
        if op != CollectiveOpcode::WideFpSum {
            return Err(EndpointError::UnsupportedOp(op));
        }
        if self.last_issue == Some(now) {
            return Err(EndpointError::IssueConflict);
        }
        let r = apply_wide_reduction(op, a, b, lanes)?;
        self.last_issue = Some(now);
        self.ops += 1;
        let ready = now + self.latency;
        self.pipe.push_back((ready, tag, Box::new(r)));
        Ok(ready)
    }

    /// Operand channel A; refuses (backpressure) while an operand is held.
    pub fn offer_a(&mut self, v: Box<[u8; WIDE_BYTES]>) -> Result<(), Box<[u8; WIDE_BYTES]>> {
        if self.a.is_some() {
            return Err(v);
        }
        self.a = Some(v);
        Ok(())
    }

    pub fn offer_b(&mut self, v: Box<[u8; WIDE_BYTES]>) -> Result<(), Box<[u8; WIDE_BYTES]>> {
        if self.b.is_some() {
            return Err(v);
        }
        self.b = Some(v);
        Ok(())
    }

    /// Fires once both operand channels hold data.
    pub fn tick(&mut self, op: CollectiveOpcode, lanes: LaneWidth, now: u64) -> Result<Option<u64>, EndpointError> {
        if self.a.is_none() || self.b.is_none() || self.last_issue == Some(now) {
            return Ok(None);
        }
        let (a, b) = (self.a.take().unwrap(), self.b.take().unwrap());
        self.issue(op, &a[..], &b[..], lanes, 0, now).map(Some)
    }

    pub fn take_result(&mut self, now: u64) -> Option<(usize, Box<[u8; WIDE_BYTES]>)> {
        if self.pipe.front().is_some_and(|e| e.0 <= now) {
            self.pipe.pop_front().map(|e| (e.1, e.2))
        } else {
            None
        }
    }

    pub fn in_flight(&self) -> usize {
        self.pipe.len()
    }
}

const SRC_DMA: usize = 0;
const SRC_MEM: usize = 1;
const SRC_RSP: usize = 2;
const SRC_CORE: usize = 3;

/// Per-link injection arbiter of the network interface: one flit per cycle,
/// packets from one source are never interleaved with another's.
#[derive(Debug, Clone, Default)]
struct InjectionPort {
    queues: [VecDeque<(u64, Flit)>; 4],
    lock: Option<usize>,
    rr: usize,
}

impl InjectionPort {
    fn push(&mut self, src: usize, ready: u64, f: Flit) {
        self.queues[src].push_back((ready, f));
    }

    fn pop_ready(&mut self, now: u64) -> Option<Flit> {
        let pick = match self.lock {
            Some(s) => self.queues[s].front().is_some_and(|e| e.0 <= now).then_some(s),
            None => (0..4)
                .map(|k| (self.rr + k) % 4)
                .find(|&s| self.queues[s].front().is_some_and(|e| e.0 <= now)),
        }?;
        let (_, f) = self.queues[pick].pop_front().unwrap();
        self.lock = if f.is_last { None } else { Some(pick) };
        self.rr = (pick + 1) % 4;
        Some(f)
    }

    fn is_empty(&self) -> bool {
        self.queues.iter().all(VecDeque::is_empty)
    }
}

/// A DMA descriptor as programmed by the core.
#[derive(Debug, Clone, PartialEq)]
pub struct DmaRequest {
    pub src: u64,
    pub dst: MultiAddress,
    pub beats: u32,
    pub opcode: CollectiveOpcode,
    pub lanes: LaneWidth,
    /// Reductions: every contributor, as coordinate masks.
    pub contributors: Option<CoordMasks>,
    /// Shared id for reductions; unique ids are generated otherwise.
    pub txn_id: Option<u64>,
}

impl DmaRequest {
    pub fn copy(src: u64, dst: u64, beats: u32) -> Self {
        Self {
            src,
            dst: MultiAddress::unicast(dst),
            beats,
            opcode: CollectiveOpcode::Unicast,
            lanes: LaneWidth::F64,
            contributors: None,
            txn_id: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BarrierKind {
    Sw,
    Hw,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BarrierOp {
    pub kind: BarrierKind,
    /// Shared by all participants of this barrier instance.
    pub id: u64,
    pub participants: Vec<Coord>,
    /// Cluster holding the counter.
    pub root: Coord,
}

/// One instruction of a tile program.
#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    /// Enqueue a DMA transfer; does not block.
    Dma(DmaRequest),
    /// Block until the DMA engine is idle.
    DmaWait,
    /// `acc[i] += src[i]` over `beats` 64-byte beats of f64 in local L1.
    Reduce { acc: u64, src: u64, beats: u32 },
    Barrier(BarrierOp),
    Delay(u64),
    /// Records the current cycle under a label.
    Mark(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TileKind {
    Cluster,
    Memory,
}

#[derive(Debug, Clone)]
struct WriteCtx {
    header: Flit,
    off: u64,
    beat: u32,
}

#[derive(Debug, Clone)]
struct ActiveDma {
    req: DmaRequest,
    txn_id: u64,
    start_at: u64,
    issued: bool,
    dst_local: Option<u64>,
    aw_sent: bool,
    beats_in: u32,
    done_at: Option<u64>,
    flit_proto: Option<Flit>,
}

#[derive(Debug, Clone, Default)]
struct DmaEngine {
    queue: VecDeque<DmaRequest>,
    active: Option<ActiveDma>,
    completed: u64,
}

impl DmaEngine {
    fn idle(&self) -> bool {
        self.active.is_none() && self.queue.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Wait {
    Ready,
    Until(u64),
    DmaIdle,
    HwBarrier(u64),
    SwAmo { txn: u64, op: usize },
    Irq,
    Done,
}

/// Arrival and departure of one barrier at one tile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BarrierEvent {
    pub id: u64,
    pub arrival: u64,
    pub departure: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TileStats {
    pub dma_transfers: u64,
    pub bytes_written: u64,
    pub irqs: u64,
    pub first_activity: Option<u64>,
    pub done_at: Option<u64>,
    pub marks: Vec<(u32, u64)>,
    pub barriers: Vec<BarrierEvent>,
}

pub struct TileCtx<'a> {
    pub mesh: &'a Mesh,
    pub map: &'a AddressMap,
    pub cfg: &'a EndpointConfig,
}

#[derive(Debug, Clone)]
pub struct Tile {
    pub coord: Coord,
    pub kind: TileKind,
    pub mem: SpmMemory,
    window_base: u64,
    node_tag: u64,
    inject: [InjectionPort; 3],
    loopback: Vec<Flit>,
    /// Open write bursts per link, router path first, then loopback path.
    writes: [Option<WriteCtx>; 6],
    via_loopback: bool,
    dma: DmaEngine,
    program: Vec<Op>,
    pc: usize,
    wait: Wait,
    irq_count: u64,
    irq_seen: u64,
    amo_result: Option<(u64, u64)>,
    b_seen: Vec<u64>,
    arrival: u64,
    next_txn: u64,
    pub stats: TileStats,
}

impl Tile {
    pub fn new(coord: Coord, kind: TileKind, node_index: usize, ctx: &TileCtx) -> Self {
        let bytes = match kind {
            TileKind::Cluster => ctx.cfg.l1_bytes,
            TileKind::Memory => ctx.cfg.l2_bytes,
        };
        Self {
            coord,
            kind,
            mem: SpmMemory::new(bytes),
            window_base: ctx.map.window_base(ctx.mesh, coord),
            node_tag: (node_index as u64 + 1) << 32,
            inject: Default::default(),
            loopback: Vec::new(),
            writes: Default::default(),
            via_loopback: false,
            dma: DmaEngine::default(),
            program: Vec::new(),
            pc: 0,
            wait: Wait::Done,
            irq_count: 0,
            irq_seen: 0,
            amo_result: None,
            b_seen: Vec::new(),
            arrival: 0,
            next_txn: 0,
            stats: TileStats::default(),
        }
    }

    pub fn window_base(&self) -> u64 {
        self.window_base
    }

    pub fn load_program(&mut self, program: Vec<Op>) {
        self.wait = if program.is_empty() { Wait::Done } else { Wait::Ready };
        self.program = program;
        self.pc = 0;
    }

    pub fn has_program(&self) -> bool {
        !self.program.is_empty()
    }

    pub fn finished(&self) -> bool {
        self.wait == Wait::Done
            && self.dma.idle()
            && self.loopback.is_empty()
            && self.inject.iter().all(InjectionPort::is_empty)
    }

    /// Nothing can happen before `t` unless a flit arrives.
    pub fn quiet_until(&self) -> Option<u64> {
        if !self.loopback.is_empty() || !self.inject.iter().all(InjectionPort::is_empty) {
            return None;
        }
        if self.dma.active.as_ref().is_some_and(|a| !a.issued || a.done_at.is_some()) || !self.dma.queue.is_empty() {
            return None;
        }
        match self.wait {
            Wait::Until(t) => Some(t),
            Wait::Ready => None,
            _ => Some(u64::MAX),
        }
    }

    fn fresh_txn(&mut self) -> u64 {
        self.next_txn += 1;
        self.node_tag | self.next_txn
    }

    fn local_offset(&self, addr: u64) -> Result<u64, EndpointError> {
        addr.checked_sub(self.window_base)
            .filter(|&o| o < self.mem.len() as u64)
            .ok_or(EndpointError::UnmappedAddress(addr))
    }

    /// Offers one flit per link to the router; `space(link)` tells whether
    /// the Local input can take it.
    ///
    /// Copies addressed to this tile itself are looped back inside the NI
    /// and delivered on the next cycle instead of entering the router.
    pub fn inject(&mut self, now: u64, space: impl Fn(Link) -> bool) -> Vec<Flit> {
        let mut out = Vec::new();
        for link in Link::ALL {
            if space(link) {
                if let Some(f) = self.inject[link.index()].pop_ready(now) {
                    let dests = f.destinations();
                    if !f.is_reduction() && dests.contains(self.coord) {
                        self.loopback.push(f.clone());
                        if dests.len() == 1 {
                            continue;
                        }
                    }
                    out.push(f);
                }
            }
        }
        out
    }

    pub fn take_loopback(&mut self) -> Vec<Flit> {
        std::mem::take(&mut self.loopback)
    }

    /// Handles a flit delivered through the router's Local output.
    pub fn deliver(&mut self, f: Flit, now: u64, ctx: &TileCtx) -> Result<(), EndpointError> {
        match (f.link, f.kind) {
            (_, FlitKind::Aw) => {
                let addr = if f.is_reduction() {
                    f.addr.base
                } else {
                    resolve_local_address(&f.addr, self.coord, ctx.map, ctx.mesh)?
                };
                let off = self.local_offset(addr)?;
                let li = self.write_slot(f.link);
                self.writes[li] = Some(WriteCtx { header: f, off, beat: 0 });
            }
            (_, FlitKind::W) => self.write_beat(f, now, ctx)?,
            (_, FlitKind::Ar) => {
                let off = self.local_offset(f.addr.base)?;
                let lat = match self.kind {
                    TileKind::Cluster => ctx.cfg.l1_latency,
                    TileKind::Memory => ctx.cfg.l2_latency,
                };
                for i in 0..f.beats {
                    let data = self.mem.read(off + u64::from(i) * WIDE_BYTES as u64, WIDE_BYTES)?;
                    let mut r = Flit::new(Link::Wide, FlitKind::R, self.coord, f.initiator, f.txn_id);
                    r.payload = Payload::Wide(Box::new(data.try_into().unwrap()));
                    r.is_header = i == 0;
                    r.is_last = i + 1 == f.beats;
                    self.inject[Link::Wide.index()].push(SRC_MEM, now + lat + u64::from(i), r);
                }
            }
            (Link::Wide, FlitKind::R) => self.dma_beat(f.txn_id, f.payload, now, ctx)?,
            (_, FlitKind::R) => self.amo_result = Some((f.txn_id, f.payload.narrow())),
            (_, FlitKind::B) => {
                if self.dma.active.as_ref().is_some_and(|a| a.txn_id == f.txn_id && a.issued) {
                    self.finish_dma(now);
                } else {
                    self.b_seen.push(f.txn_id);
                }
            }
        }
        Ok(())
    }

    fn write_slot(&self, link: Link) -> usize {
        link.index() + if self.via_loopback { 3 } else { 0 }
    }

    /// Handles a flit that never left the NI. Loopback bursts keep their own
    /// write state so they cannot interleave with bursts from the router.
    pub fn deliver_loopback(&mut self, f: Flit, now: u64, ctx: &TileCtx) -> Result<(), EndpointError> {
        self.via_loopback = true;
        let r = self.deliver(f, now, ctx);
        self.via_loopback = false;
        r
    }

    fn write_beat(&mut self, f: Flit, now: u64, ctx: &TileCtx) -> Result<(), EndpointError> {
        let li = self.write_slot(f.link);
        let Some(w) = self.writes[li].as_mut() else {
            return Ok(());
        };
        let header = w.header.clone();
        let beat = w.beat;
        w.beat += 1;
        let off = w.off;
        let narrow = f.link != Link::Wide;
        let mut amo = None;
        match &f.payload {
            Payload::Wide(d) => {
                self.mem.write(off + u64::from(beat) * WIDE_BYTES as u64, &d[..])?;
                self.stats.bytes_written += WIDE_BYTES as u64;
            }
            Payload::Narrow(v) => {
                if header.atomic == Some(Atomic::Add) {
                    amo = Some(self.mem.amo_add(off, *v, ctx.cfg.amo_latency, now)?);
                } else {
                    self.mem.write(off + u64::from(beat) * NARROW_BYTES as u64, &v.to_le_bytes())?;
                    self.stats.bytes_written += NARROW_BYTES as u64;
                }
            }
            Payload::None => {}
        }
        if narrow && off == IRQ_OFFSET && self.kind == TileKind::Cluster {
            self.irq_count += 1;
            self.stats.irqs += 1;
        }
        if !f.is_last {
            return Ok(());
        }
        self.writes[li] = None;
        if let Some((old, done)) = amo {
            let mut r = Flit::new(Link::Rsp, FlitKind::R, self.coord, header.initiator, header.txn_id);
            r.payload = Payload::Narrow(old);
            self.inject[Link::Rsp.index()].push(SRC_RSP, done, r);
            return Ok(());
        }
        let ready = now + ctx.cfg.write_latency;
        let b = if header.is_reduction() {
            // One response multicast back to every contributor.
            Flit::new(Link::Rsp, FlitKind::B, self.coord, header.src, header.txn_id)
                .with_masks(header.x_mask, header.y_mask)
                .with_opcode(CollectiveOpcode::Multicast)
        } else if header.opcode == CollectiveOpcode::Multicast {
            // Each destination answers; the network collects the responses.
            let mut b = Flit::new(Link::Rsp, FlitKind::B, header.dst, header.initiator, header.txn_id)
                .with_masks(header.x_mask, header.y_mask)
                .with_opcode(CollectiveOpcode::CollectB);
            b.resp = Resp::Okay;
            b
        } else {
            Flit::new(Link::Rsp, FlitKind::B, self.coord, header.initiator, header.txn_id)
        };
        self.inject[Link::Rsp.index()].push(SRC_RSP, ready, b);
        Ok(())
    }

    fn dma_beat(&mut self, txn: u64, payload: Payload, now: u64, ctx: &TileCtx) -> Result<(), EndpointError> {
        let Some(a) = self.dma.active.as_mut() else { return Ok(()) };
        if a.txn_id != txn {
            return Ok(());
        }
        let Payload::Wide(data) = payload else { return Ok(()) };
        let i = a.beats_in;
        a.beats_in += 1;
        let last = a.beats_in == a.req.beats;
        if let Some(off) = a.dst_local {
            self.mem.write(off + u64::from(i) * WIDE_BYTES as u64, &data[..])?;
            self.stats.bytes_written += WIDE_BYTES as u64;
            if last {
                a.done_at = Some(now + ctx.cfg.l1_latency);
            }
            return Ok(());
        }
        let proto = a.flit_proto.clone().expect("remote destination has a header");
        let wide = &mut self.inject[Link::Wide.index()];
        if !a.aw_sent {
            a.aw_sent = true;
            wide.push(SRC_DMA, now, proto.clone());
        }
        let mut w = proto;
        w.kind = FlitKind::W;
        w.is_header = false;
        w.is_last = last;
        w.payload = Payload::Wide(data);
        wide.push(SRC_DMA, now, w);
        Ok(())
    }

    fn finish_dma(&mut self, now: u64) {
        self.dma.active = None;
        self.dma.completed += 1;
        self.stats.dma_transfers += 1;
        self.stats.done_at = self.stats.done_at.max(Some(now));
    }

    fn start_dma(&mut self, now: u64, ctx: &TileCtx) -> Result<(), EndpointError> {
        let a = self.dma.active.as_mut().unwrap();
        a.issued = true;
        let req = a.req.clone();
        let txn = a.txn_id;
        let t = Transaction {
            initiator: self.coord,
            src_addr: req.src,
            destination: req.dst,
            beats: req.beats,
            opcode: req.opcode,
            lanes: req.lanes,
            contributors: req.contributors,
            txn_id: txn,
        };
        t.validate()?;
        let dst_set = addr_mask_to_coord_masks(&req.dst, ctx.map, ctx.mesh)?;
        let local_dst = if !req.opcode.is_reduction() && req.dst.mask == 0 && dst_set.dst == self.coord {
            Some(self.local_offset(req.dst.base)?)
        } else {
            None
        };
        let a = self.dma.active.as_mut().unwrap();
        if local_dst.is_some() {
            a.dst_local = local_dst;
        } else {
            let mut proto = if let Some(c) = req.contributors.filter(|_| req.opcode.is_reduction()) {
                Flit::new(Link::Wide, FlitKind::Aw, c.dst, dst_set.dst, txn).with_masks(c.x_mask, c.y_mask)
            } else {
                Flit::new(Link::Wide, FlitKind::Aw, self.coord, dst_set.dst, txn)
                    .with_masks(dst_set.x_mask, dst_set.y_mask)
            };
            proto.opcode = if req.opcode.is_reduction() {
                req.opcode
            } else if req.dst.mask != 0 {
                CollectiveOpcode::Multicast
            } else {
                CollectiveOpcode::Unicast
            };
            proto.initiator = self.coord;
            proto.addr = req.dst;
            proto.beats = req.beats;
            proto.lanes = req.lanes;
            proto.is_last = false;
            a.flit_proto = Some(proto);
        }
        let src_node = ctx.map.decode(ctx.mesh, req.src)?;
        if src_node == self.coord {
            let off = self.local_offset(req.src)?;
            for i in 0..req.beats {
                let data: Box<[u8; WIDE_BYTES]> = Box::new(
                    self.mem
                        .read(off + u64::from(i) * WIDE_BYTES as u64, WIDE_BYTES)?
                        .try_into()
                        .unwrap(),
                );
                self.dma_beat(txn, Payload::Wide(data), now + ctx.cfg.l1_latency + u64::from(i), ctx)?;
            }
        } else {
            let mut ar = Flit::new(Link::Req, FlitKind::Ar, self.coord, src_node, txn);
            ar.addr = MultiAddress::unicast(req.src);
            ar.beats = req.beats;
            self.inject[Link::Req.index()].push(SRC_DMA, now, ar);
        }
        Ok(())
    }

    fn step_dma(&mut self, now: u64, ctx: &TileCtx) -> Result<(), EndpointError> {
        if let Some(t) = self.dma.active.as_ref().and_then(|a| a.done_at) {
            if t <= now {
                self.finish_dma(now);
            }
        }
        if self.dma.active.is_none() {
            if let Some(req) = self.dma.queue.pop_front() {
                let txn_id = match req.txn_id {
                    Some(id) => id,
                    None => self.fresh_txn(),
                };
                self.dma.active = Some(ActiveDma {
                    req,
                    txn_id,
                    start_at: now + ctx.cfg.dma_issue_overhead,
                    issued: false,
                    dst_local: None,
                    aw_sent: false,
                    beats_in: 0,
                    done_at: None,
                    flit_proto: None,
                });
            }
        }
        if self.dma.active.as_ref().is_some_and(|a| !a.issued && a.start_at <= now) {
            self.start_dma(now, ctx)?;
        }
        Ok(())
    }

    fn narrow_write(&mut self, dst: CoordMasks, addr: MultiAddress, value: u64, txn: u64, ready: u64) {
        let mut aw = Flit::new(Link::Req, FlitKind::Aw, self.coord, dst.dst, txn).with_masks(dst.x_mask, dst.y_mask);
        aw.opcode = if dst.is_unicast() { CollectiveOpcode::Unicast } else { CollectiveOpcode::Multicast };
        aw.addr = addr;
        aw.is_last = false;
        let mut w = aw.clone();
        w.kind = FlitKind::W;
        w.is_header = false;
        w.is_last = true;
        w.payload = Payload::Narrow(value);
        let q = &mut self.inject[Link::Req.index()];
        q.push(SRC_CORE, ready, aw);
        q.push(SRC_CORE, ready, w);
    }

    fn begin_barrier(&mut self, op: &BarrierOp, now: u64, ctx: &TileCtx) -> Result<Wait, EndpointError> {
        self.arrival = now;
        self.stats.first_activity.get_or_insert(now);
        let ready = now + ctx.cfg.barrier_issue;
        let root_base = ctx.map.window_base(ctx.mesh, op.root);
        match op.kind {
            BarrierKind::Hw => {
                let set = op.participants.iter().copied().collect();
                let contrib = crate::topology::encode_destinations(&set, ctx.map)?;
                let mut aw = Flit::new(Link::Req, FlitKind::Aw, contrib.dst, op.root, op.id)
                    .with_masks(contrib.x_mask, contrib.y_mask)
                    .with_opcode(CollectiveOpcode::LsbAnd);
                aw.initiator = self.coord;
                aw.addr = MultiAddress::unicast(root_base + HW_BARRIER_OFFSET);
                aw.is_last = false;
                let mut w = aw.clone();
                w.kind = FlitKind::W;
                w.is_header = false;
                w.is_last = true;
                w.payload = Payload::Narrow(1);
                let q = &mut self.inject[Link::Req.index()];
                q.push(SRC_CORE, ready, aw);
                q.push(SRC_CORE, ready, w);
                Ok(Wait::HwBarrier(op.id))
            }
            BarrierKind::Sw => {
                let txn = self.fresh_txn();
                let mut aw = Flit::new(Link::Req, FlitKind::Aw, self.coord, op.root, txn);
                aw.addr = MultiAddress::unicast(root_base + COUNTER_OFFSET);
                aw.atomic = Some(Atomic::Add);
                aw.is_last = false;
                let mut w = aw.clone();
                w.kind = FlitKind::W;
                w.is_header = false;
                w.is_last = true;
                w.payload = Payload::Narrow(1);
                let q = &mut self.inject[Link::Req.index()];
                q.push(SRC_CORE, ready, aw);
                q.push(SRC_CORE, ready, w);
                Ok(Wait::SwAmo { txn, op: self.pc - 1 })
            }
        }
    }

    fn depart_barrier(&mut self, id: u64, now: u64) {
        self.stats.barriers.push(BarrierEvent {
            id,
            arrival: self.arrival,
            departure: now,
        });
    }

    /// Advances the core program and the DMA engine by one cycle.
    pub fn step(&mut self, now: u64, ctx: &TileCtx) -> Result<(), EndpointError> {
        self.step_dma(now, ctx)?;
        loop {
            let proceed = match self.wait.clone() {
                Wait::Done => return Ok(()),
                Wait::Ready => true,
                Wait::Until(t) => t <= now,
                Wait::DmaIdle => self.dma.idle(),
                Wait::HwBarrier(id) => {
                    if let Some(i) = self.b_seen.iter().position(|&t| t == id) {
                        self.b_seen.swap_remove(i);
                        self.depart_barrier(id, now);
                        true
                    } else {
                        false
                    }
                }
                Wait::SwAmo { txn, op } => match self.amo_result {
                    Some((t, old)) if t == txn => {
                        self.amo_result = None;
                        let Op::Barrier(b) = self.program[op].clone() else { unreachable!() };
                        let m = b.participants.len() as u64;
                        if old % m == m - 1 {
                            let set = b.participants.iter().copied().collect();
                            for block in cover_destinations(&set, ctx.map) {
                                let addr = coord_masks_to_multi_address(&block, IRQ_OFFSET, ctx.map, ctx.mesh);
                                let id = self.fresh_txn();
                                self.narrow_write(block, addr, 1, id, now);
                            }
                        }
                        self.wait = Wait::Irq;
                        false
                    }
                    _ => false,
                },
                Wait::Irq => {
                    if self.irq_count > self.irq_seen {
                        self.irq_seen += 1;
                        let Op::Barrier(b) = &self.program[self.pc - 1] else { unreachable!() };
                        let id = b.id;
                        self.depart_barrier(id, now);
                        true
                    } else {
                        false
                    }
                }
            };
            if !proceed {
                return Ok(());
            }
            if self.pc == self.program.len() {
                self.wait = Wait::Done;
                self.stats.done_at = self.stats.done_at.max(Some(now));
                return Ok(());
            }
            let op = self.program[self.pc].clone();
            self.pc += 1;
            self.wait = match op {
                Op::Dma(req) => {
                    self.stats.first_activity.get_or_insert(now);
                    self.dma.queue.push_back(req);
                    self.step_dma(now, ctx)?;
                    Wait::Ready
                }
                Op::DmaWait => Wait::DmaIdle,
                Op::Reduce { acc, src, beats } => {
                    let n = beats as usize * 8;
                    let a = self.mem.read_f64s(acc, n)?;
                    let b = self.mem.read_f64s(src, n)?;
                    let s: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
                    self.mem.write_f64s(acc, &s)?;
                    Wait::Until(now + ctx.cfg.compute_alpha + u64::from(beats) * ctx.cfg.compute_beta)
                }
                Op::Barrier(b) => self.begin_barrier(&b, now, ctx)?,
                Op::Delay(c) => Wait::Until(now + c),
                Op::Mark(label) => {
                    self.stats.marks.push((label, now));
                    Wait::Ready
                }
            };
        }
    }
}
