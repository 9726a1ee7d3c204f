//! Per-node router for the three physical links.
//!
//! Each router has five input FIFOs per link. Every cycle it grants outputs
//! to at most one flit per input: plain and multicast flits go through the
//! wormhole arbiter, narrow reduction flits wait in the parallel reduction
//! arbiter until all participants are present, and wide reductions are
//! serialized through a single pipelined controller.

use std::collections::VecDeque;
use std::fmt;

use thiserror::Error;

use crate::endpoint::DcaUnit;
use crate::protocol::{apply_narrow_reduction, CollectiveOpcode, Flit, FlitKind, Link, Payload};
use crate::topology::{expand_coord_masks, Coord, CoordMasks, Mesh};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Port {
    North = 0,
    East = 1,
    South = 2,
    West = 3,
    Local = 4,
}

impl Port {
    pub const ALL: [Port; 5] = [Port::North, Port::East, Port::South, Port::West, Port::Local];
    /// Operand order of the wide reduction fold.
    pub const MERGE_ORDER: [Port; 5] = [Port::East, Port::Local, Port::North, Port::West, Port::South];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn opposite(self) -> Port {
        match self {
            Port::North => Port::South,
            Port::South => Port::North,
            Port::East => Port::West,
            Port::West => Port::East,
            Port::Local => Port::Local,
        }
    }

    /// Neighbor reached through this port, if it exists.
    pub fn step(self, here: Coord, mesh: &Mesh) -> Option<Coord> {
        let c = match self {
            Port::North => Coord::new(here.x, here.y + 1),
            Port::South => Coord::new(here.x, here.y.checked_sub(1)?),
            Port::East => Coord::new(here.x + 1, here.y),
            Port::West => Coord::new(here.x.checked_sub(1)?, here.y),
            Port::Local => return Some(here),
        };
        mesh.contains(c).then_some(c)
    }
}

/// Small bit set of ports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct PortSet(pub u8);

impl PortSet {
    pub fn single(p: Port) -> Self {
        PortSet(1 << p.index())
    }

    pub fn insert(&mut self, p: Port) {
        self.0 |= 1 << p.index();
    }

    pub fn contains(self, p: Port) -> bool {
        self.0 & (1 << p.index()) != 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    /// Lowest-numbered member (leading-zero-count arbitration).
    pub fn lowest(self) -> Option<Port> {
        Port::ALL.into_iter().find(|&p| self.contains(p))
    }

    pub fn iter(self) -> impl Iterator<Item = Port> {
        Port::ALL.into_iter().filter(move |&p| self.contains(p))
    }

    pub fn from_ports(ports: &[Port]) -> Self {
        let mut s = PortSet::default();
        for &p in ports {
            s.insert(p);
        }
        s
    }
}

impl fmt::Display for PortSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<_> = self.iter().map(|p| format!("{p:?}")).collect();
        write!(f, "{{{}}}", names.join(","))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RouterError {
    #[error("no route from {here} to {dst}")]
    NoRoute { here: Coord, dst: Coord },
    #[error("router {here} is not on any contributor path of reduction {txn_id}")]
    NotOnReductionPath { here: Coord, txn_id: u64 },
    #[error("invalid router configuration: {0}")]
    InvalidConfig(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct RouterConfig {
    pub fifo_depth: usize,
    /// Pipeline depth p of the wide reduction unit.
    pub wide_pipeline_depth: u64,
    /// Header buffer depth d, bounding in-flight wide reduction beats.
    pub hdr_buffer_depth: usize,
    pub hop_latency: u64,
    /// Wide reductions execute on the attached cluster's DCA lanes.
    pub dca_offload: bool,
}

impl Default for RouterConfig {
    fn default() -> Self {
        Self {
            fifo_depth: 2,
            wide_pipeline_depth: 30,
            hdr_buffer_depth: 31,
            hop_latency: 1,
            dca_offload: true,
        }
    }
}

impl RouterConfig {
    pub fn validate(&self) -> Result<(), RouterError> {
        if self.fifo_depth < 2 {
            return Err(RouterError::InvalidConfig("fifo_depth must be at least 2"));
        }
        if self.hdr_buffer_depth as u64 <= self.wide_pipeline_depth {
            return Err(RouterError::InvalidConfig("hdr_buffer_depth must exceed wide_pipeline_depth"));
        }
        if self.hop_latency < 1 {
            return Err(RouterError::InvalidConfig("hop_latency must be at least 1"));
        }
        Ok(())
    }
}

fn xy_next(here: Coord, dst: Coord) -> Port {
    use std::cmp::Ordering::*;
    match (dst.x.cmp(&here.x), dst.y.cmp(&here.y)) {
        (Greater, _) => Port::East,
        (Less, _) => Port::West,
        (Equal, Greater) => Port::North,
        (Equal, Less) => Port::South,
        (Equal, Equal) => Port::Local,
    }
}

/// Output ports of a (multicast) flit at `here` that arrived through `from`.
///
/// Only destinations still ahead on the flit's XY trajectory are served: a
/// flit travelling east serves columns at or beyond `here`, a flit travelling
/// along a column serves that column on its side.
pub fn xy_route_fork(dests: &CoordMasks, from: Port, here: Coord, mesh: &Mesh) -> Result<PortSet, RouterError> {
    let mut out = PortSet::default();
    for d in expand_coord_masks(dests) {
        if !mesh.contains(d) {
            return Err(RouterError::NoRoute { here, dst: d });
        }
        let ahead = match from {
            Port::Local => true,
            Port::West => d.x >= here.x,
            Port::East => d.x <= here.x,
            Port::South => d.x == here.x && d.y >= here.y,
            Port::North => d.x == here.x && d.y <= here.y,
        };
        if ahead {
            out.insert(xy_next(here, d));
        }
    }
    Ok(out)
}

/// Input ports through which contributions of a reduction towards `dst`
/// enter `here` under XY routing.
pub fn reduction_participants(contributors: &CoordMasks, dst: Coord, here: Coord) -> Option<PortSet> {
    let between = |v: u32, a: u32, b: u32| a.min(b) <= v && v <= a.max(b);
    let mut set = PortSet::default();
    for s in expand_coord_masks(contributors) {
        if s == here {
            set.insert(Port::Local);
        } else if here.y == s.y && between(here.x, s.x, dst.x) {
            set.insert(if s.x < here.x { Port::West } else { Port::East });
        } else if here.x == dst.x && between(here.y, s.y, dst.y) {
            set.insert(if s.y < here.y { Port::South } else { Port::North });
        }
    }
    (!set.is_empty()).then_some(set)
}

fn participants_of(f: &Flit, here: Coord) -> Result<PortSet, RouterError> {
    reduction_participants(&f.collective_set(), f.dst, here).ok_or(RouterError::NotOnReductionPath {
        here,
        txn_id: f.txn_id,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Owner {
    Input(Port),
    Merge(u64),
    Wide,
}

#[derive(Debug, Clone)]
struct Entry {
    visible: u64,
    flit: Flit,
}

#[derive(Debug, Clone)]
struct ActiveWide {
    txn_id: u64,
    parts: Vec<Port>,
    out: Port,
    header: Option<Flit>,
    template: Flit,
    beats: u32,
    started: u32,
    emitted: u32,
    in_progress: usize,
    dca: DcaUnit,
    partial: VecDeque<(usize, Box<[u8; 64]>)>,
    results: VecDeque<Box<[u8; 64]>>,
}

/// Counters exported to the metrics record.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RouterStats {
    /// Flits sent per link and output port.
    pub flits_out: [[u64; 5]; 3],
    pub narrow_merges: u64,
    pub wide_ops: u64,
    pub wide_reductions: u64,
}

/// Where the router may push this cycle; neighbor occupancy is sampled at
/// the start of the cycle.
pub trait OutputSpace {
    fn has_space(&self, link: Link, port: Port) -> bool;
}

#[derive(Debug, Clone)]
pub struct RouterState {
    pub coord: Coord,
    inputs: [[VecDeque<Entry>; 5]; 3],
    locks: [[Option<Owner>; 5]; 3],
    in_route: [[PortSet; 5]; 3],
    rr: [usize; 3],
    wide: Option<ActiveWide>,
    pub stats: RouterStats,
}

impl RouterState {
    pub fn new(coord: Coord) -> Self {
        Self {
            coord,
            inputs: Default::default(),
            locks: [[None; 5]; 3],
            in_route: [[PortSet::default(); 5]; 3],
            rr: [0; 3],
            wide: None,
            stats: RouterStats::default(),
        }
    }

    pub fn occupancy(&self, link: Link, port: Port) -> usize {
        self.inputs[link.index()][port.index()].len()
    }

    pub fn push(&mut self, port: Port, flit: Flit, visible: u64) {
        self.inputs[flit.link.index()][port.index()].push_back(Entry { visible, flit });
    }

    pub fn is_idle(&self) -> bool {
        self.wide.is_none() && self.inputs.iter().all(|l| l.iter().all(VecDeque::is_empty))
    }

    pub fn link_idle(&self, link: Link) -> bool {
        (link != Link::Wide || self.wide.is_none()) && self.inputs[link.index()].iter().all(VecDeque::is_empty)
    }

    pub fn wide_active(&self) -> bool {
        self.wide.is_some()
    }

    fn head(&self, link: Link, p: Port, now: u64) -> Option<&Flit> {
        self.inputs[link.index()][p.index()]
            .front()
            .filter(|e| e.visible <= now)
            .map(|e| &e.flit)
    }

    fn pop(&mut self, link: Link, p: Port) -> Flit {
        self.inputs[link.index()][p.index()].pop_front().expect("pop of empty input").flit
    }

    fn can_grant(&self, link: Link, outs: PortSet, owner: Owner, claimed: PortSet, space: &dyn OutputSpace) -> bool {
        outs.iter().all(|o| {
            !claimed.contains(o)
                && self.locks[link.index()][o.index()].is_none_or(|l| l == owner)
                && (o == Port::Local || space.has_space(link, o))
        })
    }

    fn grant(&mut self, link: Link, outs: PortSet, owner: Owner, flit: Flit, claimed: &mut PortSet, emitted: &mut Vec<(Port, Flit)>) {
        for o in outs.iter() {
            claimed.insert(o);
            self.locks[link.index()][o.index()] = if flit.is_last { None } else { Some(owner) };
            self.stats.flits_out[link.index()][o.index()] += 1;
        }
        let mut ports = outs.iter().peekable();
        while let Some(o) = ports.next() {
            if ports.peek().is_some() {
                emitted.push((o, flit.clone()));
            } else {
                emitted.push((o, flit));
                break;
            }
        }
    }

    /// One cycle of one link. Returns the flits leaving through each output.
    pub fn tick(
        &mut self,
        link: Link,
        now: u64,
        mesh: &Mesh,
        cfg: &RouterConfig,
        space: &dyn OutputSpace,
    ) -> Result<Vec<(Port, Flit)>, RouterError> {
        let mut emitted = Vec::new();
        let mut claimed = PortSet::default();
        let mut popped = PortSet::default();
        let here = self.coord;

        if link == Link::Wide {
            self.wide_step(now, cfg, space, &mut claimed, &mut popped, &mut emitted)?;
        }

        // Parallel reduction arbiter: lowest reference port first.
        for p in Port::ALL {
            let Some(h) = self.head(link, p, now) else { continue };
            if !h.is_reduction() || popped.contains(p) || (link == Link::Wide && h.opcode == CollectiveOpcode::WideFpSum) {
                continue;
            }
            let parts = participants_of(h, here)?;
            if parts.len() < 2 || parts.lowest() != Some(p) {
                continue;
            }
            let key = h.reduction_key();
            let ready = parts
                .iter()
                .all(|q| !popped.contains(q) && self.head(link, q, now).is_some_and(|f| f.reduction_key() == key));
            if !ready {
                continue;
            }
            let out = PortSet::single(xy_next(here, h.dst));
            let owner = Owner::Merge(h.txn_id);
            if !self.can_grant(link, out, owner, claimed, space) {
                continue;
            }
            let flits: Vec<Flit> = parts.iter().map(|q| self.pop(link, q)).collect();
            popped.0 |= parts.0;
            let merged = merge_narrow(flits).map_err(|_| RouterError::NotOnReductionPath { here, txn_id: key.0 })?;
            self.stats.narrow_merges += 1;
            self.grant(link, out, owner, merged, &mut claimed, &mut emitted);
        }

        // Wormhole arbiter with rotating priority.
        let start = self.rr[link.index()];
        for k in 0..5 {
            let p = Port::ALL[(start + k) % 5];
            if popped.contains(p) {
                continue;
            }
            let Some(h) = self.head(link, p, now) else { continue };
            if h.is_reduction() && participants_of(h, here)?.len() > 1 {
                continue;
            }
            let mut route = if h.is_header {
                if h.is_reduction() {
                    PortSet::single(xy_next(here, h.dst))
                } else {
                    xy_route_fork(&h.destinations(), p, here, mesh)?
                }
            } else {
                self.in_route[link.index()][p.index()]
            };
            if p == Port::Local && !h.is_reduction() {
                // The NI delivers its own copy through a loopback path.
                route.0 &= !PortSet::single(Port::Local).0;
                if route.is_empty() {
                    self.pop(link, p);
                    popped.insert(p);
                    continue;
                }
            }
            let owner = Owner::Input(p);
            if !self.can_grant(link, route, owner, claimed, space) {
                continue;
            }
            let flit = self.pop(link, p);
            popped.insert(p);
            self.in_route[link.index()][p.index()] = route;
            self.grant(link, route, owner, flit, &mut claimed, &mut emitted);
        }
        self.rr[link.index()] = (start + 1) % 5;
        Ok(emitted)
    }

    fn wide_step(
        &mut self,
        now: u64,
        cfg: &RouterConfig,
        space: &dyn OutputSpace,
        claimed: &mut PortSet,
        popped: &mut PortSet,
        emitted: &mut Vec<(Port, Flit)>,
    ) -> Result<(), RouterError> {
        let link = Link::Wide;
        let here = self.coord;
        if self.wide.is_none() {
            // Accept a new reduction once all of its headers are present.
            for p in Port::ALL {
                let Some(h) = self.head(link, p, now) else { continue };
                if h.opcode != CollectiveOpcode::WideFpSum || h.kind != FlitKind::Aw {
                    continue;
                }
                let parts = participants_of(h, here)?;
                if parts.len() < 2 || parts.lowest() != Some(p) {
                    continue;
                }
                let key = h.reduction_key();
                if !parts.iter().all(|q| self.head(link, q, now).is_some_and(|f| f.reduction_key() == key)) {
                    continue;
                }
                let order: Vec<Port> = Port::MERGE_ORDER.into_iter().filter(|&q| parts.contains(q)).collect();
                let mut headers: Vec<Flit> = parts.iter().map(|q| self.pop(link, q)).collect();
                popped.0 |= parts.0;
                // SelectAW: the lowest-numbered input is the reference.
                let header = headers.swap_remove(0);
                let mut template = header.clone();
                template.kind = FlitKind::W;
                template.is_header = false;
                self.wide = Some(ActiveWide {
                    txn_id: key.0,
                    parts: order,
                    out: xy_next(here, header.dst),
                    beats: header.beats,
                    header: Some(header),
                    template,
                    started: 0,
                    emitted: 0,
                    in_progress: 0,
                    dca: DcaUnit::new(cfg.wide_pipeline_depth),
                    partial: VecDeque::new(),
                    results: VecDeque::new(),
                });
                self.stats.wide_reductions += 1;
                break;
            }
        }
        let Some(mut w) = self.wide.take() else { return Ok(()) };
        let last_stage = w.parts.len() - 2;

        while let Some((stage, data)) = w.dca.take_result(now) {
            if stage == last_stage {
                w.results.push_back(data);
            } else {
                w.partial.push_back((stage, data));
            }
        }

        let out = PortSet::single(w.out);
        if let Some(h) = w.header.take() {
            if self.can_grant(link, out, Owner::Wide, *claimed, space) {
                self.grant(link, out, Owner::Wide, h, claimed, emitted);
            } else {
                w.header = Some(h);
            }
        } else if !w.results.is_empty() && self.can_grant(link, out, Owner::Wide, *claimed, space) {
            let data = w.results.pop_front().unwrap();
            let mut f = w.template.clone();
            f.payload = Payload::Wide(data);
            w.emitted += 1;
            f.is_last = w.emitted == w.beats;
            w.in_progress -= 1;
            self.grant(link, out, Owner::Wide, f, claimed, emitted);
        }

        // Issue at most one two-operand operation.
        let txn = w.txn_id;
        let is_beat = move |f: &Flit| f.txn_id == txn && f.kind == FlitKind::W;
        let lanes = w.template.lanes;
        let op = CollectiveOpcode::WideFpSum;
        let wide_of = |f: Flit| match f.payload {
            Payload::Wide(b) => b,
            _ => Box::new([0u8; 64]),
        };
        let mut issued = false;
        if let Some(&(stage, _)) = w.partial.front() {
            let q = w.parts[stage + 2];
            if self.head(link, q, now).is_some_and(is_beat) {
                let (stage, acc) = w.partial.pop_front().unwrap();
                let b = wide_of(self.pop(link, q));
                popped.insert(q);
                w.dca.issue(op, &acc[..], &b[..], lanes, stage + 1, now).expect("64-byte operands");
                issued = true;
            }
        }
        if !issued && w.started < w.beats && w.in_progress < cfg.hdr_buffer_depth {
            let (p0, p1) = (w.parts[0], w.parts[1]);
            if self.head(link, p0, now).is_some_and(is_beat) && self.head(link, p1, now).is_some_and(is_beat) {
                let a = wide_of(self.pop(link, p0));
                let b = wide_of(self.pop(link, p1));
                popped.insert(p0);
                popped.insert(p1);
                w.dca.issue(op, &a[..], &b[..], lanes, 0, now).expect("64-byte operands");
                w.started += 1;
                w.in_progress += 1;
                issued = true;
            }
        }
        if issued {
            self.stats.wide_ops += 1;
        }
        if w.emitted < w.beats {
            self.wide = Some(w);
        }
        Ok(())
    }
}

/// Merges the head flits of all participants; the first is the reference.
fn merge_narrow(flits: Vec<Flit>) -> Result<Flit, crate::protocol::ProtocolError> {
    let mut it = flits.into_iter();
    let mut reference = it.next().expect("at least two participants");
    let rest: Vec<Flit> = it.collect();
    match reference.kind {
        FlitKind::Aw => {}
        FlitKind::B => {
            let mut ops = vec![reference.resp as u64];
            ops.extend(rest.iter().map(|f| f.resp as u64));
            reference.resp = crate::protocol::Resp::from_bits(apply_narrow_reduction(CollectiveOpcode::CollectB, &ops)?);
        }
        _ => {
            let mut ops = vec![reference.payload.narrow()];
            ops.extend(rest.iter().map(|f| f.payload.narrow()));
            reference.payload = Payload::Narrow(apply_narrow_reduction(reference.opcode, &ops)?);
        }
    }
    Ok(reference)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mesh() -> Mesh {
        Mesh { width: 4, height: 4 }
    }

    fn cm(x: u32, y: u32, xm: u32, ym: u32) -> CoordMasks {
        CoordMasks {
            dst: Coord::new(x, y),
            x_mask: xm,
            y_mask: ym,
        }
    }

    #[test]
    fn route_fork_examples() {
        let m = mesh();
        let uni = cm(3, 1, 0, 0);
        assert_eq!(
            xy_route_fork(&uni, Port::Local, Coord::new(1, 1), &m).unwrap(),
            PortSet::single(Port::East)
        );
        let block = cm(0, 0, 0b11, 0b01);
        let expect = PortSet::from_ports(&[Port::Local, Port::East, Port::North]);
        assert_eq!(xy_route_fork(&block, Port::Local, Coord::new(0, 0), &m).unwrap(), expect);
        assert_eq!(xy_route_fork(&block, Port::West, Coord::new(2, 0), &m).unwrap(), expect);
        let far = cm(7, 0, 0, 0);
        assert!(matches!(
            xy_route_fork(&far, Port::Local, Coord::new(0, 0), &m),
            Err(RouterError::NoRoute { .. })
        ));
    }

    #[test]
    fn participants_examples() {
        let contrib = cm(0, 0, 0b11, 0b01);
        let dst = Coord::new(0, 0);
        assert_eq!(
            reduction_participants(&contrib, dst, Coord::new(0, 0)),
            Some(PortSet::from_ports(&[Port::East, Port::North, Port::Local]))
        );
        assert_eq!(
            reduction_participants(&contrib, dst, Coord::new(3, 1)),
            Some(PortSet::single(Port::Local))
        );
        assert_eq!(
            reduction_participants(&contrib, dst, Coord::new(1, 0)),
            Some(PortSet::from_ports(&[Port::East, Port::Local]))
        );
        assert_eq!(reduction_participants(&contrib, dst, Coord::new(0, 3)), None);
    }

    #[test]
    fn config_validation() {
        assert!(RouterConfig::default().validate().is_ok());
        let bad = RouterConfig {
            hdr_buffer_depth: 3,
            ..RouterConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn lowest_port_wins() {
        let s = PortSet::from_ports(&[Port::Local, Port::South, Port::East]);
        assert_eq!(s.lowest(), Some(Port::East));
    }
}
