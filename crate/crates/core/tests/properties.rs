use mlps_core::consistency::{observed_staleness, ssp_read_permitted, StalenessBound, VectorClock};
use mlps_core::dml::{
    descent_increment, dml_batch_objective, dml_gradient, step_size, Metric, Pair,
};
use mlps_core::lasso::{
    coordinate_argument, cyclic_coordinate_descent, fixed_point_violation, lasso_objective,
    lasso_partial, shard_rows, soft_threshold, DesignMatrix, LassoProblem,
};
use mlps_core::protocol::{decode, decode_prefix, encode, IncEntry, Message, Status};
use mlps_core::schedule::{
    schedule_fix, schedule_priority_draw, schedule_srrp, BlockMap, CorrelationIndex,
    PriorityState, SrrpConfig,
};
use mlps_core::ScheduleDecision;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Unit-norm columns sharing a common factor of strength `shared`.
fn design(n: usize, d: usize, shared: f64, seed: u64) -> DesignMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let common: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut data = Vec::with_capacity(n * d);
    for _ in 0..d {
        let mut col: Vec<f64> = common
            .iter()
            .map(|c| shared * c + (1.0 - shared) * rng.gen_range(-1.0..1.0))
            .collect();
        let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        col.iter_mut().for_each(|v| *v /= norm);
        data.extend(col);
    }
    DesignMatrix::from_columns(n, d, data).unwrap()
}

fn problem(n: usize, d: usize, shared: f64, lambda: f64, seed: u64) -> LassoProblem {
    let x = design(n, d, shared, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfeed);
    let y = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
    LassoProblem::new(x, y, lambda).unwrap()
}

fn corr_index(x: &DesignMatrix) -> CorrelationIndex {
    CorrelationIndex::from_columns(x.samples(), x.as_column_major().to_vec()).unwrap()
}

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![
        any::<f64>().prop_filter("not NaN", |v| !v.is_nan()),
        Just(f64::INFINITY),
        Just(-0.0),
    ]
}

fn message() -> impl Strategy<Value = Message> {
    let status = prop_oneof![
        Just(Status::Ok),
        Just(Status::UnknownRow),
        Just(Status::Interrupted),
        Just(Status::PutConflict),
    ];
    prop_oneof![
        (".{0,12}", any::<u64>(), any::<u32>()).prop_map(|(table, row, reader)| Message::GetReq {
            table,
            row,
            reader
        }),
        (status, any::<u64>(), prop::collection::vec(finite(), 0..16), ".{0,8}").prop_map(
            |(status, clock, values, detail)| Message::GetResp {
                status,
                clock,
                values,
                detail
            }
        ),
        (
            ".{0,12}",
            any::<u32>(),
            any::<u64>(),
            prop::collection::vec((any::<u64>(), any::<u32>(), finite()), 0..16)
        )
            .prop_map(|(table, producer, clock, e)| Message::Inc {
                table,
                producer,
                clock,
                entries: e
                    .into_iter()
                    .map(|(row, col, delta)| IncEntry { row, col, delta })
                    .collect(),
            }),
        (any::<u32>(), any::<u64>()).prop_map(|(worker, clock)| Message::ClockCommit { worker, clock }),
        (
            any::<u64>(),
            prop::collection::vec(prop::collection::vec(0usize..1 << 30, 0..4), 0..5),
            any::<bool>(),
            any::<u64>()
        )
            .prop_map(|(clock, blocks, whole_model, priority_version)| {
                Message::Decision(ScheduleDecision {
                    clock,
                    assignments: (0u32..).zip(blocks).collect(),
                    whole_model,
                    priority_version,
                })
            }),
        Just(Message::Shutdown),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn messages_round_trip(m in message()) {
        let frame = encode(&m).unwrap();
        prop_assert_eq!(decode(&frame).unwrap(), m.clone());
        let mut two = frame.clone();
        two.extend_from_slice(&frame);
        let (first, used) = decode_prefix(&two).unwrap();
        prop_assert_eq!(first, m);
        prop_assert_eq!(used, frame.len());
    }

    #[test]
    fn truncated_frames_are_rejected(m in message(), cut in 1usize..8) {
        let frame = encode(&m).unwrap();
        let cut = cut.min(frame.len());
        prop_assert!(decode(&frame[..frame.len() - cut]).is_err());
    }

    #[test]
    fn read_gate_is_frontier_against_clock_minus_s(
        entries in prop::collection::vec(0u64..20, 1..6),
        clock in 0u64..25,
        s in 0u64..4,
    ) {
        let vc = VectorClock::from_entries(entries.clone());
        let frontier = *entries.iter().min().unwrap();
        prop_assert_eq!(
            ssp_read_permitted(clock, StalenessBound(s), &vc),
            frontier + s >= clock
        );
        if frontier + s >= clock {
            prop_assert!(observed_staleness(clock, frontier) <= s);
        }
    }

    #[test]
    fn ticking_never_lowers_the_frontier(
        entries in prop::collection::vec(0u64..20, 1..6),
        w in 0usize..6,
    ) {
        let vc = VectorClock::from_entries(entries.clone());
        let w = w % entries.len();
        let next = vc.ticked(w as u32).unwrap();
        prop_assert_eq!(next.get(w as u32).unwrap(), entries[w] + 1);
        prop_assert!(next.min_clock().unwrap() >= vc.min_clock().unwrap());
        prop_assert!(next.min_clock().unwrap() <= vc.min_clock().unwrap() + 1);
    }

    #[test]
    fn fixed_schedule_is_deterministic_and_sweeps_each_block(
        d in 1usize..60,
        workers in 1usize..8,
        clock in 0u64..100,
    ) {
        let map = BlockMap::contiguous(d, workers).unwrap();
        prop_assert_eq!(schedule_fix(clock, &map), schedule_fix(clock, &map));
        let sweep = map.sweep_len() as u64;
        let mut seen = vec![0usize; d];
        for t in clock..clock + sweep {
            let dec = schedule_fix(t, &map);
            for w in 0..dec.workers() {
                prop_assert!(dec.assigned_to(w as u32).iter().all(|j| map.block(w).contains(j)));
            }
            dec.indices().iter().for_each(|&j| seen[j] += 1);
        }
        prop_assert!(seen.iter().all(|&c| c >= 1));
    }

    #[test]
    fn srrp_keeps_only_weakly_correlated_sets(
        seed in any::<u64>(),
        d in 12usize..40,
        workers in 1usize..6,
        theta in 0.05f64..0.9,
        shared in 0.0f64..0.8,
        use_prio in any::<bool>(),
    ) {
        let x = design(30, d, shared, seed);
        let mut corr = corr_index(&x);
        let cfg = SrrpConfig { workers, candidates: workers + 5, theta };
        let prio = PriorityState::from_weights(
            (0..d).map(|j| 0.1 + (j % 5) as f64).collect(), 1e-3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dec = schedule_srrp(3, &cfg, &mut corr, use_prio.then_some(&prio), &mut rng).unwrap();
        prop_assert!(dec.degree() >= 1 && dec.degree() <= workers);
        let idx = dec.indices();
        for (a, &i) in idx.iter().enumerate() {
            for &j in &idx[a + 1..] {
                prop_assert!(i != j);
                let c: f64 = x.column(i).iter().zip(x.column(j)).map(|(p, q)| p * q).sum();
                prop_assert!(c.abs() <= theta + 1e-12, "|x{}.x{}| = {}", i, j, c);
            }
        }
    }

    #[test]
    fn partial_sums_over_shards_recover_the_argument(
        seed in any::<u64>(),
        parts in 1usize..6,
        sparse in 0.0f64..1.0,
    ) {
        let p = problem(23, 9, 0.3, 0.1, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let beta: Vec<f64> = (0..9)
            .map(|_| if rng.gen::<f64>() < sparse { 0.0 } else { rng.gen_range(-1.0..1.0) })
            .collect();
        let all: Vec<usize> = (0..9).collect();
        let mut total = vec![0.0; 9];
        for rows in shard_rows(23, parts) {
            for (t, v) in total.iter_mut().zip(lasso_partial(&p, rows, &all, &beta).unwrap()) {
                *t += v;
            }
        }
        for j in 0..9 {
            let direct: f64 = (0..23)
                .map(|i| {
                    let others: f64 = (0..9).filter(|&k| k != j).map(|k| p.x().get(i, k) * beta[k]).sum();
                    p.x().get(i, j) * (p.y()[i] - others)
                })
                .sum();
            prop_assert!((total[j] - direct).abs() <= 1e-10);
            prop_assert!((coordinate_argument(&p, &beta, j).unwrap() - direct).abs() <= 1e-10);
        }
    }

    #[test]
    fn soft_threshold_shrinks_toward_zero(v in -1e6f64..1e6, lambda in 0.0f64..10.0) {
        let s = soft_threshold(v, lambda);
        prop_assert_eq!(soft_threshold(-v, lambda), -s);
        prop_assert!(s.abs() <= v.abs());
        if v.abs() <= lambda {
            prop_assert_eq!(s, 0.0);
        } else {
            prop_assert!((v - s - lambda * v.signum()).abs() <= 1e-9 * v.abs().max(1.0));
        }
    }

    #[test]
    fn weakly_coupled_joint_updates_never_increase_the_objective(
        seed in any::<u64>(),
        workers in 2usize..5,
    ) {
        // with pairwise |x_i.x_j| <= theta and theta (P - 1) <= 1 the cross
        // terms cannot outweigh the single-coordinate decreases
        let theta = 1.0 / (workers - 1) as f64;
        let p = problem(40, 24, 0.6, 0.05, seed);
        let mut corr = corr_index(p.x());
        let cfg = SrrpConfig { workers, candidates: workers + 6, theta: theta.min(1.0) };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut beta = vec![0.0; 24];
        let mut f = lasso_objective(&p, &beta).unwrap();
        for t in 0..40 {
            let dec = schedule_srrp(t, &cfg, &mut corr, None, &mut rng).unwrap();
            let updates: Vec<(usize, f64)> = dec
                .indices()
                .into_iter()
                .map(|j| (j, p.threshold(coordinate_argument(&p, &beta, j).unwrap())))
                .collect();
            for (j, v) in updates {
                beta[j] = v;
            }
            let next = lasso_objective(&p, &beta).unwrap();
            prop_assert!(next <= f + 1e-10, "clock {}: {} -> {}", t, f, next);
            f = next;
        }
    }

    #[test]
    fn converged_descent_is_a_fixed_point(seed in any::<u64>(), lambda in 0.01f64..0.5) {
        let p = problem(30, 12, 0.4, lambda, seed);
        let state = cyclic_coordinate_descent(&p, 5000, 1e-15);
        prop_assert!(fixed_point_violation(&p, state.beta()).unwrap() <= 1e-6);
    }

    #[test]
    fn dml_gradient_matches_finite_differences(seed in any::<u64>(), lambda in 0.1f64..2.0) {
        let (rank, dim) = (2, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = |k: usize, s: f64| -> Vec<f64> { (0..k).map(|_| s * rng.gen_range(-1.0..1.0)).collect() };
        let l = Metric::new(rank, dim, v(rank * dim, 1.0)).unwrap();
        let sim: Vec<Pair> = (0..3).map(|_| Pair::new(v(dim, 1.0), v(dim, 1.0))).collect();
        let dis: Vec<Pair> = (0..3).map(|_| Pair::new(v(dim, 0.6), v(dim, 0.6))).collect();
        prop_assume!(dis.iter().all(|p| (l.sq_norm(&p.diff()) - 1.0).abs() > 1e-3));
        let s: Vec<&Pair> = sim.iter().collect();
        let d: Vec<&Pair> = dis.iter().collect();
        let g = dml_gradient(&l, &s, &d, lambda).unwrap();
        let h = 1e-6;
        for k in 0..rank * dim {
            let mut plus = l.clone();
            plus.as_mut_slice()[k] += h;
            let mut minus = l.clone();
            minus.as_mut_slice()[k] -= h;
            let fd = (dml_batch_objective(&plus, &s, &d, lambda)
                - dml_batch_objective(&minus, &s, &d, lambda)) / (2.0 * h);
            prop_assert!((fd - g.as_slice()[k]).abs() <= 1e-5 * (1.0 + fd.abs()));
        }
    }

    #[test]
    fn similar_pair_gradient_is_linear_in_the_metric(seed in any::<u64>(), k in -4.0f64..4.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect() };
        let l = Metric::new(3, 5, v(15)).unwrap();
        let sim: Vec<Pair> = (0..4).map(|_| Pair::new(v(5), v(5))).collect();
        let s: Vec<&Pair> = sim.iter().collect();
        let g = dml_gradient(&l, &s, &[], 1.0).unwrap();
        let gk = dml_gradient(&l.scaled(k), &s, &[], 1.0).unwrap();
        for (a, b) in g.as_slice().iter().zip(gk.as_slice()) {
            prop_assert!((k * a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
        let f = dml_batch_objective(&l, &s, &[], 1.0);
        let fk = dml_batch_objective(&l.scaled(k), &s, &[], 1.0);
        prop_assert!((k * k * f - fk).abs() <= 1e-10 * (1.0 + fk.abs()));
    }

    #[test]
    fn increments_are_scaled_negative_gradients(seed in any::<u64>(), t in 1u64..1000, c in 1usize..9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = Metric::new(2, 3, (0..6).map(|_| rng.gen_range(-5.0..5.0)).collect()).unwrap();
        let step = step_size(0.3, t);
        prop_assert!((step - 0.3 / (t as f64).sqrt()).abs() <= 1e-15);
        for (inc, gk) in descent_increment(&g, step, c).iter().zip(g.as_slice()) {
            prop_assert_eq!(*inc, -step * gk / c as f64);
        }
    }
}

#[test]
fn priority_draws_follow_the_weights() {
    let weights = vec![5.0, 1.0, 0.5, 3.0, 0.01, 2.0, 1.5, 4.0];
    let prio = PriorityState::from_weights(weights.clone(), 0.01).unwrap();
    let total: f64 = weights.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let draws = 50_000;
    let mut counts = vec![0usize; weights.len()];
    for _ in 0..draws {
        counts[schedule_priority_draw(&prio, 1, &mut rng)[0]] += 1;
    }
    let chi2: f64 = counts
        .iter()
        .zip(&weights)
        .map(|(&c, w)| {
            let e = draws as f64 * w / total;
            (c as f64 - e).powi(2) / e
        })
        .sum();
    let critical = ChiSquared::new((weights.len() - 1) as f64)
        .unwrap()
        .inverse_cdf(0.999);
    assert!(chi2 < critical, "chi2 {chi2} >= {critical}");
}

#[test]
fn priority_draws_without_replacement_are_distinct() {
    let prio = PriorityState::new(12, 1e-6).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for q in 0..=12 {
        let mut picks = schedule_priority_draw(&prio, q, &mut rng);
        picks.sort_unstable();
        picks.dedup();
        assert_eq!(picks.len(), q);
    }
}
