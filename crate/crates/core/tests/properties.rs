use maco::config::ExperimentConfig;
use maco::isa::{validate_params, GemmTask, Instruction, Opcode, ParamBlock, Precision, Task, MAX_REG};
use maco::mapping::{self, DlLayer};
use maco::noc::{hop_count, route_xy, Coord};
use maco::sim::{Domain, EventQueue, SimTime, Timebase, Timeline};
use maco::stats::{self, RunStats};
use maco::tiling;
use maco::translation::{predict_page_heads, TileAccessDescriptor};
use proptest::prelude::*;

fn precision() -> impl Strategy<Value = Precision> {
    prop_oneof![Just(Precision::Fp64), Just(Precision::Fp32), Just(Precision::Fp16)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn timeline_reservations_never_overlap(reqs in prop::collection::vec((0u64..5_000, 0u64..64), 1..200)) {
        let mut tl = Timeline::default();
        let mut taken: Vec<(u64, u64)> = Vec::new();
        for (ready, len) in reqs {
            let start = tl.reserve(ready, len);
            prop_assert!(start >= ready);
            if len == 0 {
                continue;
            }
            for &(s, e) in &taken {
                prop_assert!(start + len <= s || start >= e, "[{start}, {}) overlaps [{s}, {e})", start + len);
            }
            // earliest fit: no gap before `start` at or after `ready` holds `len`
            let mut probe = ready;
            let mut sorted = taken.clone();
            sorted.sort();
            for &(s, e) in &sorted {
                if e <= probe {
                    continue;
                }
                if s >= probe + len {
                    break;
                }
                probe = probe.max(e);
            }
            prop_assert_eq!(start, probe);
            taken.push((start, start + len));
        }
    }

    #[test]
    fn events_pop_in_time_then_insertion_order(times in prop::collection::vec(0u64..50, 1..300)) {
        let mut q = EventQueue::new();
        for (i, &t) in times.iter().enumerate() {
            q.schedule(SimTime(t), i).unwrap();
        }
        let mut last = (0u64, None::<usize>);
        while let Some((t, i)) = q.pop() {
            prop_assert!(t.0 >= last.0);
            if t.0 == last.0 {
                if let Some(p) = last.1 {
                    prop_assert!(i > p);
                }
            }
            last = (t.0, Some(i));
        }
    }

    #[test]
    fn cycle_time_round_trip(n in 0u64..1 << 40) {
        let tb = Timebase::maco_default();
        for d in [Domain::Cpu, Domain::Mmae, Domain::Noc] {
            let t = tb.cycles_to_time(n, d).unwrap();
            prop_assert_eq!(tb.time_to_cycles(t, d), n);
            prop_assert_eq!(tb.ceil_cycles(t, d), n);
            prop_assert_eq!(tb.ceil_cycles(SimTime(t.0 + 1), d), n + 1);
        }
    }

    #[test]
    fn instruction_words_round_trip(op in 0u32..7, rd in 0u8..=MAX_REG, rn in 0u8..=MAX_REG) {
        let opcode = Opcode::from_index(op).unwrap();
        let rn = if opcode.uses_param_block() { rn.min(MAX_REG - 5) } else { rn };
        if let Ok(i) = Instruction::new(opcode, rd, rn) {
            let w = i.encode().unwrap();
            prop_assert_eq!(Instruction::decode(w).unwrap(), i);
            prop_assert_eq!(Instruction::from_le_bytes(i.to_le_bytes().unwrap()).unwrap(), i);
        }
    }

    #[test]
    fn gemm_param_block_round_trip(
        m in 1u32..70_000, n in 1u32..70_000, k in 1u32..70_000,
        p in precision(), acc: bool,
        tr in 1u16.., tc in 1u16..,
        sub in prop::option::of((1u16.., 1u16..)),
        addr in prop::array::uniform3(0u64..1 << 45),
    ) {
        let (ttr, ttc) = sub.map_or((0, 0), |(a, b)| (a.min(tr), b.min(tc)));
        let t = GemmTask {
            a: addr[0] & !7,
            b: addr[1] & !7,
            c: addr[2] & !7,
            m, n, k,
            precision: p,
            accumulate: acc,
            tr, tc, ttr, ttc,
        };
        prop_assert_eq!(validate_params(Opcode::MaCfg, &ParamBlock::gemm(&t)).unwrap(), Task::Gemm(t));
    }

    #[test]
    fn tile_plan_partitions_c(m in 1u64..600, n in 1u64..600, tr in 1u64..300, tc in 1u64..300, nodes in 1usize..=16) {
        let plan = mapping::plan_tiles(m, n, 8, tr, tc, nodes);
        let mut cover = vec![0u8; (m * n) as usize];
        for t in &plan.tiles {
            prop_assert!(t.node < nodes);
            prop_assert!(t.h >= 1 && t.h <= tr && t.w >= 1 && t.w <= tc);
            for i in t.i0..t.i0 + t.h {
                for j in t.j0..t.j0 + t.w {
                    cover[(i * n + j) as usize] += 1;
                }
            }
        }
        prop_assert!(cover.iter().all(|&c| c == 1));
        // tiles are spread evenly
        let counts: Vec<usize> = (0..nodes).map(|q| plan.node_tiles(q).count()).collect();
        prop_assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
    }

    #[test]
    fn blocked_c_round_trip(m in 1u64..100, n in 1u64..100, tr in 1u64..40, tc in 1u64..40, p in precision()) {
        let es = p.element_size();
        let plan = mapping::plan_tiles(m, n, 1, tr, tc, 3);
        let c: Vec<u8> = (0..m * n * es as u64).map(|i| (i * 31 % 251) as u8).collect();
        prop_assert_eq!(mapping::unpack_c(&plan, &mapping::pack_c(&plan, &c, es), es), c);
    }

    #[test]
    fn subtile_candidates_fit_and_are_undominated(tr in 1u64..2048, tc in 1u64..2048, k in 1u64..4096, p in precision()) {
        let buffer = tiling::DEFAULT_BUFFER_BYTES;
        let es = p.element_size() as u64;
        let cands = tiling::candidates(tr, tc, k, p, buffer).unwrap();
        prop_assert!(!cands.is_empty() && cands.len() <= 8);
        for c in &cands {
            prop_assert!(tiling::working_set(c.ttr as u64, c.ttc as u64, c.kk, es) <= buffer);
            prop_assert!(c.ttr as u64 <= tr.max(1) && c.ttc as u64 <= tc.max(1));
            prop_assert!(c.kk >= 1 && c.kk <= k);
            for d in &cands {
                let dominates = (d.ttr, d.ttc) != (c.ttr, c.ttc) && d.ttr >= c.ttr && d.ttc >= c.ttc && d.utilization >= c.utilization;
                prop_assert!(!dominates);
            }
        }
        for w in cands.windows(2) {
            prop_assert!(w[0].utilization >= w[1].utilization);
        }
    }

    #[test]
    fn im2col_dims(filters in 1u64..512, channels in 1u64..512, kh in 1u64..8, kw in 1u64..8, oh in 1u64..64, ow in 1u64..64, batch in 1u64..8) {
        let layer = DlLayer::Conv { filters, channels, kh, kw, out_h: oh, out_w: ow, batch };
        let (m, n, k) = mapping::layer_dims(&layer);
        prop_assert_eq!((m, n, k), (filters, oh * ow * batch, channels * kh * kw));
        // MACs of the convolution equal the GEMM's
        prop_assert_eq!(m * n * k, filters * channels * kh * kw * oh * ow * batch);
    }

    #[test]
    fn page_heads_are_distinct_page_entries(
        base in 0u64..1 << 30, cols in 1u64..4096, r0 in 0u64..64, c0f in 0.0f64..1.0,
        tr in 1u64..64, tcf in 0.0f64..1.0, es in prop_oneof![Just(2u64), Just(4), Just(8)],
        shift in 12u32..22,
    ) {
        let c0 = ((cols - 1) as f64 * c0f) as u64;
        let tc = 1 + ((cols - c0 - 1) as f64 * tcf) as u64;
        let page = 1u64 << shift;
        let d = TileAccessDescriptor { base: base & !1, element_size: es, cols, r0, c0, tr, tc, page_size: page };
        let heads = predict_page_heads(&d);
        let pages: std::collections::HashSet<u64> = heads.iter().map(|h| h / page).collect();
        prop_assert_eq!(pages.len(), heads.len());
        prop_assert_eq!(heads[0], d.base + (r0 * cols + c0) * es);
        // every head lies inside some row segment, at its start or at a page boundary
        for &h in &heads {
            let inside = (0..tr).any(|r| {
                let s = d.base + ((r0 + r) * cols + c0) * es;
                h >= s && h < s + tc * es && (h == s || h % page == 0)
            });
            prop_assert!(inside);
        }
    }

    #[test]
    fn xy_route_steps_one_hop(sx in 0u8..4, sy in 0u8..4, dx in 0u8..4, dy in 0u8..4) {
        let (s, d) = (Coord::new(sx, sy), Coord::new(dx, dy));
        let r = route_xy(s, d);
        prop_assert_eq!(r.len() as u64, hop_count(s, d));
        let mut prev = s;
        let mut turned = false;
        for &c in &r {
            prop_assert_eq!(prev.x.abs_diff(c.x) + prev.y.abs_diff(c.y), 1);
            if c.y != prev.y {
                turned = true;
            } else {
                prop_assert!(!turned, "X move after a Y move");
            }
            prev = c;
        }
        prop_assert_eq!(prev, d);
    }

    #[test]
    fn overrides_survive_serialization(nodes in 1usize..=16, seed in 0u64..=i64::MAX as u64, p in precision(), lookahead in 0usize..32) {
        let cfg = ExperimentConfig::from_toml_with("", &[
            format!("machine.nodes={nodes}"),
            format!("run.seed={seed}"),
            format!("workload.precision=\"{p}\""),
            format!("machine.translation.matlb_lookahead={lookahead}"),
        ]).unwrap();
        prop_assert_eq!(cfg.machine.nodes, nodes);
        prop_assert_eq!(cfg.run.seed, seed);
        prop_assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }
}

fn small_stats() -> (RunStats, String) {
    let cfg = ExperimentConfig::from_toml_with("", &["machine.nodes=2".into(), "workload.m=64".into(), "workload.n=64".into(), "workload.k=32".into(), "workload.tr=32".into(), "workload.tc=64".into()]).unwrap();
    let o = maco::experiment::run(&cfg).unwrap();
    (o.stats, cfg.to_toml())
}

#[test]
fn stats_csv_round_trips_with_fixed_columns() {
    let (s, echo) = small_stats();
    let mut buf = Vec::new();
    s.write_csv(&mut buf, &echo).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().next(), Some("#schema=maco-stats-v1"));
    let f = stats::parse_csv(&text).unwrap();
    assert_eq!(f.header, stats::COLUMNS.to_vec());
    assert_eq!(f.rows.len(), 3);
    assert_eq!(f.rows[2][0], "global");
    assert_eq!(f.config.trim_end(), echo.trim_end());
    let flops = f.header.iter().position(|c| c == "flops_completed").unwrap();
    let total: u64 = f.rows[..2].iter().map(|r| r[flops].parse::<u64>().unwrap()).sum();
    assert_eq!(total, 2 * 64 * 64 * 32);
    assert_eq!(f.rows[2][flops].parse::<u64>().unwrap(), total);
}

#[test]
fn stats_csv_rejects_other_schemas() {
    let (s, echo) = small_stats();
    let mut buf = Vec::new();
    s.write_csv(&mut buf, &echo).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(matches!(stats::parse_csv(&text.replacen("maco-stats-v1", "maco-stats-v2", 1)), Err(stats::StatsError::Schema(_))));
    assert!(matches!(stats::parse_csv(&text.replacen("efficiency,gflops", "gflops,efficiency", 1)), Err(stats::StatsError::Columns(_))));
    assert!(stats::parse_csv("").is_err());
}
