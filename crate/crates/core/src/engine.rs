//! Cycle-driven simulation kernel.
//!
//! Each cycle has a network phase and an endpoint phase. In the network
//! phase every router decides its moves from the occupancy sampled at the
//! start of the cycle, so the order in which routers are visited does not
//! matter; pushes become visible after the hop latency. In the endpoint
//! phase tiles consume the flits delivered to them, advance their DMA and
//! core, and inject at most one flit per link.

mod calibrate;

pub use calibrate::{
    barrier_cost, calibrate, BlockDelta, Calibration, CalibrationError, CalibrationSpec, Geometry, GeometryFit,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::endpoint::{BarrierEvent, DmaRequest, EndpointConfig, EndpointError, Op, Tile, TileCtx, TileKind};
use crate::protocol::{Link, TraceRow, TRACE_HEADER};
use crate::router::{OutputSpace, Port, RouterConfig, RouterError, RouterState};
use crate::topology::{validate_region, AddressMap, Coord, Mesh, TopologyError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub mesh: Mesh,
    pub map: AddressMap,
    pub router: RouterConfig,
    pub endpoint: EndpointConfig,
    /// Seeds workload generation only; arbitration is deterministic.
    pub seed: u64,
    pub trace: bool,
    pub cycle_limit: u64,
}

impl Default for SimConfig {
    /// A 4x4 cluster region with one column of memory tiles at x = 4.
    fn default() -> Self {
        Self {
            mesh: Mesh { width: 5, height: 4 },
            map: AddressMap {
                region_x: 0,
                region_y: 0,
                region_w: 4,
                region_h: 4,
                node_region_log2: 21,
                base_address: 0x1000_0000,
            },
            router: RouterConfig::default(),
            endpoint: EndpointConfig::default(),
            seed: 0,
            trace: false,
            cycle_limit: 10_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Router(#[from] RouterError),
    #[error("endpoint {at}: {source}")]
    Endpoint { at: Coord, source: EndpointError },
    #[error("cycle limit {limit} exceeded")]
    CycleLimitExceeded { limit: u64, partial: Box<MetricsRecord> },
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.cycle_limit == 0 {
            return Err(SimError::Config("cycle_limit must be positive".into()));
        }
        if self.mesh.width == 0 || self.mesh.height == 0 {
            return Err(SimError::Config("mesh must be non-empty".into()));
        }
        validate_region(&self.map, &self.mesh)?;
        self.router.validate()?;
        Ok(())
    }

    /// Coordinate of the `i`-th memory tile (nodes outside the region).
    pub fn memory_tile(&self, i: usize) -> Option<Coord> {
        self.mesh.coords().filter(|c| !self.map.in_region(*c)).nth(i)
    }

    /// Byte address of `offset` inside the window of `node`.
    pub fn addr(&self, node: Coord, offset: u64) -> u64 {
        self.map.window_base(&self.mesh, node) + offset
    }
}

/// Per-tile programs plus initial memory contents.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Workload {
    pub programs: Vec<(Coord, Vec<Op>)>,
    /// (node, byte offset, contents)
    pub memory: Vec<(Coord, u64, Vec<u8>)>,
}

impl Workload {
    pub fn program(&mut self, node: Coord) -> &mut Vec<Op> {
        if let Some(i) = self.programs.iter().position(|(c, _)| *c == node) {
            return &mut self.programs[i].1;
        }
        self.programs.push((node, Vec::new()));
        &mut self.programs.last_mut().unwrap().1
    }

    pub fn push(&mut self, node: Coord, op: Op) {
        self.program(node).push(op);
    }

    pub fn dma(&mut self, node: Coord, req: DmaRequest) {
        self.push(node, Op::Dma(req));
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub experiment: String,
    /// From the first tile activity to the last program completion.
    pub cycles: u64,
    pub start: u64,
    pub end: u64,
    /// Flits sent between routers, per link (req, rsp, wide).
    pub link_flits: [u64; 3],
    /// Flits delivered to tiles, per link.
    pub local_flits: [u64; 3],
    pub dma_transfers: u64,
    pub narrow_merges: u64,
    pub wide_ops: u64,
    pub amo_ops: u64,
    pub completed: bool,
    pub final_cycle: u64,
}

struct Space<'a> {
    node: usize,
    occ: &'a [[[u8; 5]; 3]],
    neighbors: &'a [[Option<usize>; 5]],
    depth: usize,
}

impl OutputSpace for Space<'_> {
    fn has_space(&self, link: Link, port: Port) -> bool {
        match self.neighbors[self.node][port.index()] {
            Some(nb) => (self.occ[nb][link.index()][port.opposite().index()] as usize) < self.depth,
            None => false,
        }
    }
}

pub struct Simulation {
    pub config: SimConfig,
    pub routers: Vec<RouterState>,
    pub tiles: Vec<Tile>,
    neighbors: Vec<[Option<usize>; 5]>,
    pub cycle: u64,
    pub trace: Vec<TraceRow>,
}

impl Simulation {
    pub fn new(config: SimConfig) -> Result<Self, SimError> {
        config.validate()?;
        let mesh = config.mesh;
        let ctx = TileCtx {
            mesh: &config.mesh,
            map: &config.map,
            cfg: &config.endpoint,
        };
        let mut routers = Vec::new();
        let mut tiles = Vec::new();
        let mut neighbors = Vec::new();
        for i in 0..mesh.num_nodes() {
            let c = mesh.coord(i);
            routers.push(RouterState::new(c));
            let kind = if config.map.in_region(c) { TileKind::Cluster } else { TileKind::Memory };
            tiles.push(Tile::new(c, kind, i, &ctx));
            let mut nb = [None; 5];
            for p in Port::ALL {
                if p != Port::Local {
                    nb[p.index()] = p.step(c, &mesh).map(|n| mesh.index(n));
                }
            }
            neighbors.push(nb);
        }
        Ok(Self {
            config,
            routers,
            tiles,
            neighbors,
            cycle: 0,
            trace: Vec::new(),
        })
    }

    pub fn tile(&self, c: Coord) -> &Tile {
        &self.tiles[self.config.mesh.index(c)]
    }

    pub fn tile_mut(&mut self, c: Coord) -> &mut Tile {
        let i = self.config.mesh.index(c);
        &mut self.tiles[i]
    }

    pub fn load(&mut self, w: &Workload) -> Result<(), SimError> {
        for (c, off, bytes) in &w.memory {
            self.tile_mut(*c)
                .mem
                .write(*off, bytes)
                .map_err(|source| SimError::Endpoint { at: *c, source })?;
        }
        for (c, prog) in &w.programs {
            if !self.config.mesh.contains(*c) {
                return Err(SimError::Config(format!("program for {c} outside the mesh")));
            }
            self.tile_mut(*c).load_program(prog.clone());
        }
        Ok(())
    }

    fn done(&self) -> bool {
        self.tiles.iter().all(Tile::finished) && self.routers.iter().all(RouterState::is_idle)
    }

    pub fn metrics(&self, experiment: &str) -> MetricsRecord {
        let active: Vec<&Tile> = self.tiles.iter().filter(|t| t.has_program()).collect();
        let start = active.iter().filter_map(|t| t.stats.first_activity).min().unwrap_or(0);
        let end = active.iter().filter_map(|t| t.stats.done_at).max().unwrap_or(start).max(start);
        let mut m = MetricsRecord {
            experiment: experiment.to_string(),
            cycles: end - start,
            start,
            end,
            completed: self.done(),
            final_cycle: self.cycle,
            ..Default::default()
        };
        for r in &self.routers {
            for l in 0..3 {
                for p in Port::ALL {
                    let n = r.stats.flits_out[l][p.index()];
                    if p == Port::Local {
                        m.local_flits[l] += n;
                    } else {
                        m.link_flits[l] += n;
                    }
                }
            }
            m.narrow_merges += r.stats.narrow_merges;
            m.wide_ops += r.stats.wide_ops;
        }
        for t in &self.tiles {
            m.dma_transfers += t.stats.dma_transfers;
            m.amo_ops += t.mem.amo_ops;
        }
        m
    }

    pub fn barrier_events(&self) -> Vec<(Coord, BarrierEvent)> {
        self.tiles
            .iter()
            .flat_map(|t| t.stats.barriers.iter().map(move |e| (t.coord, *e)))
            .collect()
    }

    fn network_phase(&mut self, now: u64) -> Result<Vec<Vec<crate::protocol::Flit>>, SimError> {
        let n = self.routers.len();
        let mut occ = vec![[[0u8; 5]; 3]; n];
        for (i, r) in self.routers.iter().enumerate() {
            for l in Link::ALL {
                for p in Port::ALL {
                    occ[i][l.index()][p.index()] = r.occupancy(l, p) as u8;
                }
            }
        }
        let mut deliveries = vec![Vec::new(); n];
        let mut pushes = Vec::new();
        for i in 0..n {
            if self.routers[i].is_idle() {
                continue;
            }
            let space = Space {
                node: i,
                occ: &occ,
                neighbors: &self.neighbors,
                depth: self.config.router.fifo_depth,
            };
            for l in Link::ALL {
                if self.routers[i].link_idle(l) {
                    continue;
                }
                let out = self.routers[i].tick(l, now, &self.config.mesh, &self.config.router, &space)?;
                for (p, f) in out {
                    if self.config.trace {
                        self.trace.push(f.trace_row(now, self.routers[i].coord));
                    }
                    match p {
                        Port::Local => deliveries[i].push(f),
                        _ => pushes.push((self.neighbors[i][p.index()].expect("granted port exists"), p.opposite(), f)),
                    }
                }
            }
        }
        let vis = now + self.config.router.hop_latency;
        for (nb, p, f) in pushes {
            self.routers[nb].push(p, f, vis);
        }
        Ok(deliveries)
    }

    fn endpoint_phase(&mut self, now: u64, deliveries: Vec<Vec<crate::protocol::Flit>>) -> Result<(), SimError> {
        let ctx = TileCtx {
            mesh: &self.config.mesh,
            map: &self.config.map,
            cfg: &self.config.endpoint,
        };
        let depth = self.config.router.fifo_depth;
        for (i, fl) in deliveries.into_iter().enumerate() {
            let tile = &mut self.tiles[i];
            let at = tile.coord;
            for f in tile.take_loopback() {
                tile.deliver_loopback(f, now, &ctx)
                    .map_err(|source| SimError::Endpoint { at, source })?;
            }
            for f in fl {
                tile.deliver(f, now, &ctx).map_err(|source| SimError::Endpoint { at, source })?;
            }
            tile.step(now, &ctx).map_err(|source| SimError::Endpoint { at, source })?;
            let router = &mut self.routers[i];
            let out = tile.inject(now, |l| router.occupancy(l, Port::Local) < depth);
            for f in out {
                router.push(Port::Local, f, now + 1);
            }
        }
        Ok(())
    }

    /// Runs until every program has finished and the network drained.
    pub fn run(&mut self, experiment: &str) -> Result<MetricsRecord, SimError> {
        let limit = self.config.cycle_limit;
        loop {
            if self.done() {
                return Ok(self.metrics(experiment));
            }
            if self.cycle >= limit {
                return Err(SimError::CycleLimitExceeded {
                    limit,
                    partial: Box::new(self.metrics(experiment)),
                });
            }
            let now = self.cycle;
            let deliveries = self.network_phase(now)?;
            self.endpoint_phase(now, deliveries)?;
            self.cycle = self.next_cycle(now);
        }
    }

    /// Skips cycles in which nothing can happen.
    fn next_cycle(&self, now: u64) -> u64 {
        if !self.routers.iter().all(RouterState::is_idle) {
            return now + 1;
        }
        let mut next = u64::MAX;
        for t in &self.tiles {
            match t.quiet_until() {
                None => return now + 1,
                Some(q) => next = next.min(q),
            }
        }
        next.clamp(now + 1, self.config.cycle_limit.max(now + 1))
    }

    pub fn trace_csv(&self) -> String {
        let mut s = String::from(TRACE_HEADER);
        s.push('\n');
        for r in &self.trace {
            s.push_str(&r.to_csv_line());
            s.push('\n');
        }
        s
    }
}

/// Builds a simulation, loads the workload and runs it.
pub fn run(config: &SimConfig, workload: &Workload, experiment: &str) -> Result<(MetricsRecord, Simulation), SimError> {
    let mut sim = Simulation::new(config.clone())?;
    sim.load(workload)?;
    let m = sim.run(experiment)?;
    Ok((m, sim))
}

/// Ordinary least squares `y = a + b x`; returns `(a, b, r2)`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<(f64, f64, f64)> {
    if xs.len() < 2 || xs.len() != ys.len() {
        return None;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let b = sxy / sxx;
    let a = my - b * mx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Some((a, b, r2))
}
