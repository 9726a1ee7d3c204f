mod common;

use collnoc::endpoint::{DmaRequest, Op};
use collnoc::engine::{run, SimConfig, SimError, Workload};
use collnoc::topology::{coord_masks_to_multi_address, Coord, CoordMasks};

#[test]
fn crossing_reductions_with_one_multicast_complete() {
    let s = common::check_seeds(&SimConfig::default(), 0..1000, 1);
    assert!(s.cycle_limit_hits.is_empty(), "seeds {:?}", s.cycle_limit_hits);
    assert_eq!(s.errors, 0);
    assert!(s.worst_slowdown <= 10.0, "{}", s.worst_slowdown);
}

#[test]
fn crossing_reductions_alone_complete() {
    let s = common::check_seeds(&SimConfig::default(), 0..300, 0);
    assert!(s.cycle_limit_hits.is_empty(), "seeds {:?}", s.cycle_limit_hits);
    assert_eq!(s.errors, 0);
}

/// Two multicasts whose trees share links deadlock: each fork waits, in
/// lockstep across its branches, for an output the other one holds.
#[test]
fn crossing_multicasts_can_deadlock() {
    let cfg = SimConfig {
        cycle_limit: 20_000,
        ..SimConfig::default()
    };
    let mut w = Workload::default();
    let block = |x: u32, y: u32, x_mask, y_mask| CoordMasks {
        dst: Coord::new(x, y),
        x_mask,
        y_mask,
    };
    for (src, cm, slot, beats) in [
        (Coord::new(2, 0), block(0, 0, 3, 1), 0x2000, 9),
        (Coord::new(2, 2), block(0, 0, 3, 3), 0x4000, 15),
    ] {
        let dst = coord_masks_to_multi_address(&cm, slot, &cfg.map, &cfg.mesh);
        w.dma(src, DmaRequest { dst, ..DmaRequest::copy(cfg.addr(src, 0), 0, beats) });
        w.push(src, Op::DmaWait);
    }
    assert!(matches!(run(&cfg, &w, "crossing"), Err(SimError::CycleLimitExceeded { .. })));
}
