//! Typed transactions, flits and the reduction operators applied to them.
//!
//! The three physical links mirror the narrow/wide channel split: `Req`
//! carries read requests, narrow writes and atomics; `Rsp` carries write
//! responses and narrow read data; `Wide` carries bursted read data and
//! bursted writes (AW header followed by W beats).

pub mod minifloat;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topology::{Coord, CoordMasks, MultiAddress};

/// Bytes per wide beat (512-bit data path).
pub const WIDE_BYTES: usize = 64;
/// Bytes per narrow beat (64-bit data path).
pub const NARROW_BYTES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Link {
    Req,
    Rsp,
    Wide,
}

impl Link {
    pub const ALL: [Link; 3] = [Link::Req, Link::Rsp, Link::Wide];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Link::Req => "req",
            Link::Rsp => "rsp",
            Link::Wide => "wide",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FlitKind {
    Aw,
    W,
    B,
    Ar,
    R,
}

impl FlitKind {
    pub fn name(self) -> &'static str {
        match self {
            FlitKind::Aw => "AW",
            FlitKind::W => "W",
            FlitKind::B => "B",
            FlitKind::Ar => "AR",
            FlitKind::R => "R",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CollectiveOpcode {
    Unicast,
    Multicast,
    CollectB,
    LsbAnd,
    SelectAW,
    WideFpSum,
}

impl CollectiveOpcode {
    /// Many-to-one operations: the flit masks describe the contributors.
    pub fn is_reduction(self) -> bool {
        matches!(
            self,
            CollectiveOpcode::CollectB | CollectiveOpcode::LsbAnd | CollectiveOpcode::SelectAW | CollectiveOpcode::WideFpSum
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            CollectiveOpcode::Unicast => "unicast",
            CollectiveOpcode::Multicast => "multicast",
            CollectiveOpcode::CollectB => "collect_b",
            CollectiveOpcode::LsbAnd => "lsb_and",
            CollectiveOpcode::SelectAW => "select_aw",
            CollectiveOpcode::WideFpSum => "wide_fp_sum",
        }
    }

    /// Whether `op` may appear on a flit of the given link and kind.
    pub fn allowed_on(self, link: Link, kind: FlitKind) -> bool {
        use CollectiveOpcode::*;
        match self {
            Unicast => true,
            Multicast => kind != FlitKind::Ar && kind != FlitKind::R,
            CollectB => kind == FlitKind::B,
            LsbAnd | SelectAW => link == Link::Req && matches!(kind, FlitKind::Aw | FlitKind::W),
            WideFpSum => link == Link::Wide && matches!(kind, FlitKind::Aw | FlitKind::W),
        }
    }
}

/// AXI write response, ordered by severity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Resp {
    Okay = 0,
    ExOkay = 1,
    SlvErr = 2,
    DecErr = 3,
}

impl Resp {
    pub fn from_bits(v: u64) -> Resp {
        match v & 3 {
            0 => Resp::Okay,
            1 => Resp::ExOkay,
            2 => Resp::SlvErr,
            _ => Resp::DecErr,
        }
    }
}

/// Element width of the SIMD lanes of a wide reduction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum LaneWidth {
    #[default]
    F64,
    F32,
    F16,
    F8,
}

impl LaneWidth {
    pub fn bytes(self) -> usize {
        match self {
            LaneWidth::F64 => 8,
            LaneWidth::F32 => 4,
            LaneWidth::F16 => 2,
            LaneWidth::F8 => 1,
        }
    }

    pub fn lanes(self) -> usize {
        WIDE_BYTES / self.bytes()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub enum Payload {
    #[default]
    None,
    Narrow(u64),
    Wide(Box<[u8; WIDE_BYTES]>),
}

impl Payload {
    pub fn narrow(&self) -> u64 {
        match self {
            Payload::Narrow(v) => *v,
            _ => 0,
        }
    }
}

/// Atomic memory operation carried by a narrow AW.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Atomic {
    Add,
}

/// One routed unit on a physical link.
///
/// For reduction opcodes `(src, x_mask, y_mask)` names the contributors; for
/// every other opcode `(dst, x_mask, y_mask)` names the destinations.
#[derive(Debug, Clone, PartialEq)]
pub struct Flit {
    pub link: Link,
    pub kind: FlitKind,
    pub src: Coord,
    pub dst: Coord,
    pub x_mask: u32,
    pub y_mask: u32,
    pub opcode: CollectiveOpcode,
    pub payload: Payload,
    pub is_header: bool,
    pub is_last: bool,
    pub txn_id: u64,
    /// Requesting node, receives the response.
    pub initiator: Coord,
    /// Target address (AW/AR headers).
    pub addr: MultiAddress,
    /// Burst length in beats (AW/AR headers).
    pub beats: u32,
    pub resp: Resp,
    pub lanes: LaneWidth,
    pub atomic: Option<Atomic>,
}

impl Flit {
    pub fn new(link: Link, kind: FlitKind, src: Coord, dst: Coord, txn_id: u64) -> Self {
        Self {
            link,
            kind,
            src,
            dst,
            x_mask: 0,
            y_mask: 0,
            opcode: CollectiveOpcode::Unicast,
            payload: Payload::None,
            is_header: true,
            is_last: true,
            txn_id,
            initiator: src,
            addr: MultiAddress::unicast(0),
            beats: 1,
            resp: Resp::Okay,
            lanes: LaneWidth::F64,
            atomic: None,
        }
    }

    pub fn with_masks(mut self, x_mask: u32, y_mask: u32) -> Self {
        self.x_mask = x_mask;
        self.y_mask = y_mask;
        self
    }

    pub fn with_opcode(mut self, op: CollectiveOpcode) -> Self {
        self.opcode = op;
        self
    }

    pub fn is_reduction(&self) -> bool {
        self.opcode.is_reduction()
    }

    /// The destination set (multicast/unicast) or the contributor set (reduction).
    pub fn collective_set(&self) -> CoordMasks {
        let anchor = if self.is_reduction() { self.src } else { self.dst };
        CoordMasks {
            dst: anchor,
            x_mask: self.x_mask,
            y_mask: self.y_mask,
        }
    }

    /// Destination set of a non-reduction flit.
    pub fn destinations(&self) -> CoordMasks {
        if self.is_reduction() {
            CoordMasks::unicast(self.dst)
        } else {
            self.collective_set()
        }
    }

    /// Key identifying the flits of one reduction that meet at a router.
    pub fn reduction_key(&self) -> (u64, FlitKind, CollectiveOpcode) {
        (self.txn_id, self.kind, self.opcode)
    }

    pub fn trace_row(&self, cycle: u64, node: Coord) -> TraceRow {
        TraceRow {
            cycle,
            node_x: node.x,
            node_y: node.y,
            link: self.link.name(),
            kind: self.kind.name(),
            src: format!("{}:{}", self.src.x, self.src.y),
            dst: format!("{}:{}", self.dst.x, self.dst.y),
            x_mask: self.x_mask,
            y_mask: self.y_mask,
            opcode: self.opcode.name(),
            txn_id: self.txn_id,
            is_header: u8::from(self.is_header),
            is_last: u8::from(self.is_last),
        }
    }
}

/// One row of the per-cycle flit trace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TraceRow {
    pub cycle: u64,
    pub node_x: u32,
    pub node_y: u32,
    pub link: &'static str,
    pub kind: &'static str,
    pub src: String,
    pub dst: String,
    pub x_mask: u32,
    pub y_mask: u32,
    pub opcode: &'static str,
    pub txn_id: u64,
    pub is_header: u8,
    pub is_last: u8,
}

pub const TRACE_HEADER: &str = "cycle,node_x,node_y,link,kind,src,dst,x_mask,y_mask,opcode,txn_id,is_header,is_last";

impl TraceRow {
    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.cycle,
            self.node_x,
            self.node_y,
            self.link,
            self.kind,
            self.src,
            self.dst,
            self.x_mask,
            self.y_mask,
            self.opcode,
            self.txn_id,
            self.is_header,
            self.is_last
        )
    }
}

/// A DMA transfer as issued by an initiator.
#[derive(Debug, Clone, PartialEq)]
pub struct Transaction {
    pub initiator: Coord,
    /// Address read from.
    pub src_addr: u64,
    /// Address (or multi-address) written to.
    pub destination: MultiAddress,
    pub beats: u32,
    pub opcode: CollectiveOpcode,
    pub lanes: LaneWidth,
    /// For reductions: every initiator taking part, as coordinate masks.
    pub contributors: Option<CoordMasks>,
    /// Shared by all contributors of one reduction.
    pub txn_id: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("opcode {0:?} is not supported by this operation")]
    UnsupportedOpcode(CollectiveOpcode),
    #[error("reduction needs between 2 and 5 operands, got {0}")]
    OperandCount(usize),
    #[error("wide operands must be {WIDE_BYTES} bytes, got {0} and {1}")]
    LaneMismatch(usize, usize),
    #[error("transaction must carry at least one beat")]
    MalformedTransaction,
}

impl Transaction {
    pub fn validate(&self) -> Result<(), ProtocolError> {
        if self.beats == 0 {
            return Err(ProtocolError::MalformedTransaction);
        }
        if self.opcode.is_reduction() && self.contributors.is_none() {
            return Err(ProtocolError::MalformedTransaction);
        }
        Ok(())
    }
}

/// Merges narrow operands; `operands[0]` is the synchronization reference.
pub fn apply_narrow_reduction(op: CollectiveOpcode, operands: &[u64]) -> Result<u64, ProtocolError> {
    if !(2..=5).contains(&operands.len()) {
        return Err(ProtocolError::OperandCount(operands.len()));
    }
    let reference = operands[0];
    match op {
        CollectiveOpcode::LsbAnd => {
            let lsb = operands.iter().fold(1, |a, v| a & v & 1);
            Ok((reference & !1) | lsb)
        }
        CollectiveOpcode::CollectB => Ok(operands.iter().map(|&v| Resp::from_bits(v)).max().unwrap_or(Resp::Okay) as u64),
        CollectiveOpcode::SelectAW => Ok(reference),
        other => Err(ProtocolError::UnsupportedOpcode(other)),
    }
}

/// Element-wise floating-point sum of two 64-byte beats.
pub fn apply_wide_reduction(
    op: CollectiveOpcode,
    a: &[u8],
    b: &[u8],
    lanes: LaneWidth,
) -> Result<[u8; WIDE_BYTES], ProtocolError> {
    if op != CollectiveOpcode::WideFpSum {
        return Err(ProtocolError::UnsupportedOpcode(op));
    }
    if a.len() != WIDE_BYTES || b.len() != WIDE_BYTES {
        return Err(ProtocolError::LaneMismatch(a.len(), b.len()));
    }
    let mut out = [0u8; WIDE_BYTES];
    let w = lanes.bytes();
    for ((o, x), y) in out.chunks_exact_mut(w).zip(a.chunks_exact(w)).zip(b.chunks_exact(w)) {
        match lanes {
            LaneWidth::F64 => {
                let s = f64::from_le_bytes(x.try_into().unwrap()) + f64::from_le_bytes(y.try_into().unwrap());
                o.copy_from_slice(&s.to_le_bytes());
            }
            LaneWidth::F32 => {
                let s = f32::from_le_bytes(x.try_into().unwrap()) + f32::from_le_bytes(y.try_into().unwrap());
                o.copy_from_slice(&s.to_le_bytes());
            }
            LaneWidth::F16 => {
                let f = minifloat::BINARY16;
                let xv = f.decode(u32::from(u16::from_le_bytes(x.try_into().unwrap())));
                let yv = f.decode(u32::from(u16::from_le_bytes(y.try_into().unwrap())));
                // The f64 sum of two binary16 values is exact; one rounding.
                o.copy_from_slice(&(f.encode(xv + yv) as u16).to_le_bytes());
            }
            LaneWidth::F8 => {
                let f = minifloat::E5M2;
                o[0] = f.encode(f.decode(u32::from(x[0])) + f.decode(u32::from(y[0]))) as u8;
            }
        }
    }
    Ok(out)
}

/// Packs eight doubles into one wide beat.
pub fn beat_from_f64(vals: &[f64; 8]) -> [u8; WIDE_BYTES] {
    let mut out = [0u8; WIDE_BYTES];
    for (chunk, v) in out.chunks_exact_mut(8).zip(vals) {
        chunk.copy_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn beat_to_f64(beat: &[u8]) -> [f64; 8] {
    let mut out = [0f64; 8];
    for (o, chunk) in out.iter_mut().zip(beat.chunks_exact(8)) {
        *o = f64::from_le_bytes(chunk.try_into().unwrap());
    }
    out
}
