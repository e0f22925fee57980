mod common;

use common::*;
use lazydp::trace_io::{read_trace, write_trace};
use lazydp::tracegen::{generate, SkewSpec};
use lazydp::{
    build_model, clip_l2, compute_delays, Algorithm, HistoryTable, Init, RowRef, SparseGrad,
    Trainer, DEFAULT_MEMORY_CAP,
};
use proptest::prelude::*;

fn skew() -> impl Strategy<Value = SkewSpec> {
    prop_oneof![
        Just(SkewSpec::Uniform),
        (0.5f64..2.0).prop_map(|alpha| SkewSpec::Zipf { alpha }),
        Just(SkewSpec::low()),
        Just(SkewSpec::medium()),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn trace_binary_round_trip(
        rows in 10u64..2000,
        tables in 1usize..4,
        b in 1usize..16,
        pooling in 1usize..4,
        n in 0u64..6,
        skew in skew(),
        seed in any::<u64>(),
    ) {
        let mut p = params(rows, 4, b, n);
        p.pooling = pooling;
        let tr = generate(&p, tables, skew, seed).unwrap();
        let mut bytes = Vec::new();
        write_trace(&tr, &mut bytes).unwrap();
        let back = read_trace(bytes.as_slice()).unwrap();
        prop_assert_eq!(&back, &tr);
        if !bytes.is_empty() {
            prop_assert!(read_trace(&bytes[..bytes.len() - 1]).is_err());
        }
    }

    #[test]
    fn clipped_norm_never_exceeds_bound(
        entries in prop::collection::vec((0u32..4, 0u32..50, prop::collection::vec(-1e3f64..1e3, 3)), 0..20),
        c in 1e-3f64..10.0,
    ) {
        let mut g = SparseGrad::new(3);
        for (t, r, v) in &entries {
            g.accumulate(RowRef::new(*t, *r), v, 1.0);
        }
        let before = g.norm_l2();
        let clipped = clip_l2(g.clone(), c);
        prop_assert!(clipped.norm_l2() <= c + 1e-12);
        if before <= c {
            prop_assert_eq!(clipped, g);
        }
    }

    #[test]
    fn history_tracks_last_next_batch_access(
        rows in 1usize..200,
        accesses in prop::collection::vec(prop::collection::btree_set(0u32..200, 0..10), 1..30),
    ) {
        let mut h = HistoryTable::new(rows);
        let mut last = vec![0u64; rows];
        let mut total_delay = 0u64;
        for (i, set) in accesses.iter().enumerate() {
            let iter = i as u64 + 1;
            let next: Vec<u32> = set.iter().copied().filter(|&r| (r as usize) < rows).collect();
            let delays = compute_delays(&mut h, &next, iter).unwrap();
            for &(r, d) in &delays {
                prop_assert_eq!(d, iter - last[r as usize]);
                last[r as usize] = iter;
                total_delay += d;
            }
            for (r, &l) in last.iter().enumerate() {
                prop_assert_eq!(h.last_noised(r), l);
            }
            // every past iteration is either applied or still pending, per row
            prop_assert_eq!(total_delay + h.total_pending(iter), iter * rows as u64);
        }
    }
}

#[test]
fn lazy_noise_count_matches_dense_when_flushed() {
    let mut runner = proptest::test_runner::TestRunner::new(ProptestConfig::with_cases(24));
    let strategy = (50u64..600, 1usize..3, 1usize..6, 1usize..8, 0u64..8, skew());
    runner
        .run(&strategy, |(rows, tables, dim, b, n, skew)| {
            let p = params(rows, dim, b, n);
            let tr = trace(&p, tables, skew);
            let (_, dense) = run(&p, tables, &tr, opts(Algorithm::Dense));
            let (_, lz) = run(&p, tables, &tr, opts(lazy(false)));
            prop_assert_eq!(dense.noise_scalars_sampled, lz.noise_scalars_sampled);
            prop_assert_eq!(
                dense.noise_scalars_sampled,
                n * rows * tables as u64 * dim as u64
            );
            Ok(())
        })
        .unwrap();
}

#[test]
fn history_after_training_matches_replay() {
    let mut runner = proptest::test_runner::TestRunner::new(ProptestConfig::with_cases(24));
    let strategy = (
        20u64..500,
        1usize..3,
        1usize..10,
        1u64..10,
        skew(),
        any::<bool>(),
    );
    runner
        .run(&strategy, |(rows, tables, b, n, skew, ans)| {
            let p = params(rows, 2, b, n);
            let tr = trace(&p, tables, skew);
            let model = build_model::<f64>(&p, tables, Init::Zeros, DEFAULT_MEMORY_CAP).unwrap();
            let mut t = Trainer::new(p.clone(), model, opts(lazy(ans))).unwrap();
            for i in 1..=n {
                t.lazydp_step(tr.batch_at(i).unwrap(), tr.batch_at(i + 1))
                    .unwrap();
            }
            for (tab, hist) in t.history().unwrap().iter().enumerate() {
                let mut expect = vec![0u64; rows as usize];
                for i in 1..n {
                    for r in tr.batch_at(i + 1).unwrap().unique_rows(tab) {
                        expect[r as usize] = i;
                    }
                }
                for (r, e) in expect.iter().enumerate() {
                    prop_assert_eq!(hist.last_noised(r), *e);
                }
            }
            t.finalize().unwrap();
            for hist in t.history().unwrap() {
                prop_assert_eq!(hist.total_pending(n), 0);
            }
            Ok(())
        })
        .unwrap();
}
