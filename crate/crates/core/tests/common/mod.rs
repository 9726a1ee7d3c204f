//! Random crossing traffic shared by the deadlock checks.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use collnoc::endpoint::{DmaRequest, Op};
use collnoc::engine::{run, SimConfig, SimError, Workload};
use collnoc::protocol::{CollectiveOpcode, LaneWidth};
use collnoc::topology::{coord_masks_to_multi_address, expand_coord_masks, Coord, CoordMasks, MultiAddress};

fn random_block(rng: &mut ChaCha8Rng) -> CoordMasks {
    let lw = rng.gen_range(0..=2u32);
    let lh = rng.gen_range(0..=2u32);
    let x = rng.gen_range(0..4 >> lw) << lw;
    let y = rng.gen_range(0..4 >> lh) << lh;
    CoordMasks {
        dst: Coord::new(x, y),
        x_mask: (1 << lw) - 1,
        y_mask: (1 << lh) - 1,
    }
}

/// Two to five concurrent hardware multicasts and reductions on random
/// blocks of the 4x4 region. Reduction groups are disjoint; paths cross
/// freely. At most `max_multicasts` multicasts are generated. Returns the
/// combined workload and each operation alone.
pub fn crossing_traffic(cfg: &SimConfig, seed: u64, max_multicasts: usize) -> (Workload, Vec<Workload>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut all = Workload::default();
    let mut alone = vec![];
    let mut busy: BTreeSet<Coord> = BTreeSet::new();
    let mut multicasts = 0;
    let mut next_id = 1u64 << 40;
    for op in 0..rng.gen_range(2..6u64) {
        let mut w = Workload::default();
        let beats = rng.gen_range(1..=16u32);
        let block = random_block(&mut rng);
        let members = expand_coord_masks(&block);
        let slot = 0x2000 * (op + 1);
        let reduce = !rng.gen_bool(0.5) && members.len() > 1 && members.iter().all(|c| !busy.contains(c));
        if !reduce {
            if multicasts == max_multicasts {
                continue;
            }
            multicasts += 1;
            let src = Coord::new(rng.gen_range(0..4), rng.gen_range(0..4));
            let dst = coord_masks_to_multi_address(&block, slot, &cfg.map, &cfg.mesh);
            w.dma(src, DmaRequest { dst, ..DmaRequest::copy(cfg.addr(src, 0), 0, beats) });
            w.push(src, Op::DmaWait);
        } else {
            busy.extend(members.iter().copied());
            let root = *members.iter().nth(rng.gen_range(0..members.len())).expect("non-empty block");
            for &c in &members {
                w.dma(
                    c,
                    DmaRequest {
                        src: cfg.addr(c, 0),
                        dst: MultiAddress::unicast(cfg.addr(root, slot)),
                        beats,
                        opcode: CollectiveOpcode::WideFpSum,
                        lanes: LaneWidth::F64,
                        contributors: Some(block),
                        txn_id: Some(next_id),
                    },
                );
                w.push(c, Op::DmaWait);
            }
            next_id += 1;
        }
        for (c, ops) in &w.programs {
            for o in ops {
                all.push(*c, o.clone());
            }
        }
        alone.push(w);
    }
    (all, alone)
}

pub struct DeadlockSummary {
    /// Largest concurrent runtime over the slowest operation run alone.
    pub worst_slowdown: f64,
    pub cycle_limit_hits: Vec<u64>,
    pub errors: usize,
}

/// Runs every seed with a cycle limit of ten times the contention-free time.
pub fn check_seeds(cfg: &SimConfig, seeds: std::ops::Range<u64>, max_multicasts: usize) -> DeadlockSummary {
    let mut s = DeadlockSummary {
        worst_slowdown: 0.0,
        cycle_limit_hits: vec![],
        errors: 0,
    };
    for seed in seeds {
        let (all, alone) = crossing_traffic(cfg, seed, max_multicasts);
        if alone.is_empty() {
            continue;
        }
        let free = alone
            .iter()
            .map(|w| run(cfg, w, "alone").map(|(m, _)| m.cycles).unwrap_or(u64::MAX))
            .max()
            .unwrap_or(1)
            .max(1);
        let bounded = SimConfig {
            cycle_limit: 10 * free,
            ..cfg.clone()
        };
        match run(&bounded, &all, "crossing") {
            Ok((m, _)) => s.worst_slowdown = s.worst_slowdown.max(m.cycles as f64 / free as f64),
            Err(SimError::CycleLimitExceeded { .. }) => s.cycle_limit_hits.push(seed),
            Err(_) => s.errors += 1,
        }
    }
    s
}
