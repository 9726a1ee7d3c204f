use collnoc::endpoint::{DmaRequest, Op};
use collnoc::engine::{calibrate, run, CalibrationError, CalibrationSpec, Geometry, SimConfig, SimError, Workload};
use collnoc::protocol::{CollectiveOpcode, LaneWidth, TRACE_HEADER};
use collnoc::topology::{coord_masks_to_multi_address, expand_coord_masks, Coord, CoordMasks, MultiAddress};

fn c(x: u32, y: u32) -> Coord {
    Coord::new(x, y)
}

fn pattern(n: usize, seed: u8) -> Vec<u8> {
    (0..n).map(|i| (i as u8).wrapping_mul(31).wrapping_add(seed)).collect()
}

fn fetch(cfg: &SimConfig, beats: u32) -> Workload {
    let m0 = cfg.memory_tile(0).unwrap();
    let mut w = Workload::default();
    w.memory.push((m0, 0, pattern(beats as usize * 64, 3)));
    w.dma(c(0, 0), DmaRequest::copy(cfg.addr(m0, 0), cfg.addr(c(0, 0), 0x8000), beats));
    w.push(c(0, 0), Op::DmaWait);
    w
}

#[test]
fn unicast_fetch_delivers_bytes() {
    let cfg = SimConfig::default();
    for beats in [1u32, 8, 64, 512] {
        let w = fetch(&cfg, beats);
        let (_, sim) = run(&cfg, &w, "fetch").unwrap();
        let data = &w.memory[0].2;
        assert_eq!(sim.tile(c(0, 0)).mem.read(0x8000, data.len()).unwrap(), &data[..]);
    }
}

/// The wide link moves one 64-byte beat per cycle, so doubling a transfer
/// adds exactly its beat count.
#[test]
fn wide_transfers_stream_one_beat_per_cycle() {
    let cfg = SimConfig::default();
    for n in [16u32, 64, 256] {
        let t = |b| run(&cfg, &fetch(&cfg, b), "fetch").unwrap().0.cycles;
        assert_eq!(t(2 * n) - t(n), u64::from(n));
    }
}

#[test]
fn hw_multicast_reaches_row() {
    let cfg = SimConfig::default();
    let m0 = cfg.memory_tile(0).unwrap();
    let data = pattern(64 * 64, 9);
    let mut w = Workload::default();
    w.memory.push((m0, 0, data.clone()));
    let dests = CoordMasks { dst: c(0, 0), x_mask: 0b11, y_mask: 0 };
    let dst = coord_masks_to_multi_address(&dests, 0x8000, &cfg.map, &cfg.mesh);
    w.dma(c(0, 0), DmaRequest { dst, ..DmaRequest::copy(cfg.addr(m0, 0), 0, 64) });
    w.push(c(0, 0), Op::DmaWait);
    let (_, sim) = run(&cfg, &w, "mcast").unwrap();
    for x in 0..4 {
        assert_eq!(sim.tile(c(x, 0)).mem.read(0x8000, data.len()).unwrap(), &data[..], "x={x}");
    }
}

#[test]
fn hw_reduction_sums_row_and_block() {
    let cfg = SimConfig::default();
    for (xm, ym) in [(0b11u32, 0u32), (0b11, 0b01), (0b11, 0b11)] {
        let contrib = CoordMasks { dst: c(0, 0), x_mask: xm, y_mask: ym };
        let beats = 32u32;
        let value = |node: Coord, i: usize| (i % 7) as f64 + f64::from(node.x) * 10.0 + f64::from(node.y) * 100.0;
        let mut w = Workload::default();
        for node in expand_coord_masks(&contrib) {
            let vals = (0..beats as usize * 8).flat_map(|i| value(node, i).to_le_bytes()).collect();
            w.memory.push((node, 0, vals));
            w.dma(
                node,
                DmaRequest {
                    src: cfg.addr(node, 0),
                    dst: MultiAddress::unicast(cfg.addr(c(0, 0), 0x10000)),
                    beats,
                    opcode: CollectiveOpcode::WideFpSum,
                    lanes: LaneWidth::F64,
                    contributors: Some(contrib),
                    txn_id: Some(1 << 60),
                },
            );
            w.push(node, Op::DmaWait);
        }
        let (_, sim) = run(&cfg, &w, "reduce").unwrap();
        let got = sim.tile(c(0, 0)).mem.read_f64s(0x10000, beats as usize * 8).unwrap();
        for (i, g) in got.iter().enumerate() {
            let want: f64 = expand_coord_masks(&contrib).iter().map(|&n| value(n, i)).sum();
            assert_eq!(*g, want, "masks {xm},{ym} element {i}");
        }
    }
}

#[test]
fn empty_workload_takes_no_cycles() {
    let (m, _) = run(&SimConfig::default(), &Workload::default(), "empty").unwrap();
    assert_eq!(m.cycles, 0);
    assert!(m.completed);
}

#[test]
fn runs_are_deterministic() {
    let cfg = SimConfig {
        trace: true,
        ..SimConfig::default()
    };
    let w = fetch(&cfg, 32);
    let (a, sa) = run(&cfg, &w, "det").unwrap();
    let (b, sb) = run(&cfg, &w, "det").unwrap();
    assert_eq!(a, b);
    assert_eq!(sa.trace_csv(), sb.trace_csv());
    assert!(sa.trace_csv().starts_with(TRACE_HEADER));
}

#[test]
fn cycle_limit_reports_partial_metrics() {
    let cfg = SimConfig {
        cycle_limit: 20,
        ..SimConfig::default()
    };
    match run(&cfg, &fetch(&cfg, 64), "limited") {
        Err(SimError::CycleLimitExceeded { limit, partial }) => {
            assert_eq!(limit, 20);
            assert!(!partial.completed);
        }
        Err(e) => panic!("expected a cycle-limit error, got {e}"),
        Ok((m, _)) => panic!("finished in {} cycles", m.cycles),
    }
}

#[test]
fn calibration_recovers_link_bandwidth_and_distance() {
    let cfg = SimConfig::default();
    let cal = calibrate(&cfg, &CalibrationSpec::for_config(&cfg)).unwrap();
    assert!((cal.beta - 1.0).abs() < 0.02, "beta {}", cal.beta);
    assert!(cal.alpha_per_path_hop > 0.0);
    let g = |x| Geometry {
        initiator: c(0, 0),
        source: c(x, 0),
        destination: c(0, 0),
    };
    assert!(cal.alpha(&g(1)) < cal.alpha(&g(3)));
    assert!(cal.beta_c > 0.0 && cal.alpha_c > 0.0);
}

#[test]
fn calibration_needs_two_sizes() {
    let cfg = SimConfig::default();
    let spec = CalibrationSpec {
        sizes: vec![8],
        ..CalibrationSpec::for_config(&cfg)
    };
    assert!(matches!(calibrate(&cfg, &spec), Err(CalibrationError::InsufficientSamples(_))));
}
