//! Randomized checks of the invariants each module promises.

use musechat::contrastive::cmc_loss;
use musechat::datasim::{emit_dataset, generate, DataConfig};
use musechat::encoders::{pool_video, EncoderConfig, Modality, ModalityProjection, TokenSequence};
use musechat::numerics::{attention, AdamW, AdamWConfig, Matrix, ParamStore, Tape};
use musechat::retrieval::{metrics, rank, MusicPool};
use musechat::rng::stream;
use proptest::collection::vec;
use proptest::prelude::*;
use std::collections::BTreeSet;

fn matrix(rows: usize, cols: usize, seed: u64, std: f64) -> Matrix {
    Matrix::randn(
        rows,
        cols,
        std,
        &mut stream(seed, "invariants", (rows * 100 + cols) as u64),
    )
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(rows in 1usize..6, cols in 1usize..12, scale in prop_oneof![Just(1.0), Just(1e2), Just(1e4)], seed in any::<u64>()) {
        let s = matrix(rows, cols, seed, scale).softmax_rows();
        for r in 0..rows {
            let total: f64 = s.row(r).iter().sum();
            prop_assert!((total - 1.0).abs() <= 1e-12, "row {r} sums to {total}");
            prop_assert!(s.row(r).iter().all(|p| *p >= 0.0));
        }
    }

    #[test]
    fn attention_output_stays_within_value_range(nq in 1usize..5, nk in 1usize..7, dk in 1usize..9, dv in 1usize..9, seed in any::<u64>()) {
        let q = matrix(nq, dk, seed, 2.0);
        let k = matrix(nk, dk, seed ^ 1, 2.0);
        let v = matrix(nk, dv, seed ^ 2, 2.0);
        let (out, weights) = attention(&q, &k, &v).unwrap();
        for r in 0..nq {
            let total: f64 = weights.row(r).iter().sum();
            prop_assert!((total - 1.0).abs() <= 1e-12);
            prop_assert!(weights.row(r).iter().all(|w| *w >= 0.0));
        }
        for c in 0..dv {
            let col: Vec<f64> = (0..nk).map(|r| v.get(r, c)).collect();
            let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let slack = 1e-12 * hi.abs().max(lo.abs()).max(1.0);
            for r in 0..nq {
                let x = out.get(r, c);
                prop_assert!(x >= lo - slack && x <= hi + slack, "{x} outside [{lo}, {hi}]");
            }
        }
    }

    #[test]
    fn adamw_with_zero_gradient_only_decays(values in vec(-10.0f64..10.0, 1..20), lr in 1e-5f64..1e-1, wd in 0.0f64..1e-1, steps in 1usize..4) {
        let mut store = ParamStore::new();
        let id = store.add("w", Matrix::row_vector(&values));
        let mut opt = AdamW::new(AdamWConfig { lr, weight_decay: wd, ..AdamWConfig::default() }, &store);
        let mut expected = values.clone();
        for _ in 0..steps {
            opt.step(&mut store);
            for e in expected.iter_mut() {
                *e *= 1.0 - lr * wd;
            }
        }
        for (got, want) in store.value(id).as_slice().iter().zip(&expected) {
            prop_assert!((got - want).abs() <= 1e-15 * want.abs().max(1.0), "{got} vs {want}");
        }
    }

    #[test]
    fn contrastive_loss_is_nonnegative_and_batch_order_free(b in 1usize..8, d in 1usize..10, tau in 0.05f64..2.0, normalize: bool, seed in any::<u64>()) {
        let x = matrix(b, d, seed, 1.0);
        let y = matrix(b, d, seed ^ 7, 1.0);
        let loss = cmc_loss(&x, &y, tau, normalize).unwrap();
        prop_assert!(loss >= 0.0);
        let mut perm: Vec<usize> = (0..b).collect();
        perm.reverse();
        let shuffled = cmc_loss(&x.select_rows(&perm), &y.select_rows(&perm), tau, normalize).unwrap();
        prop_assert!((loss - shuffled).abs() <= 1e-12 * loss.max(1.0));
    }

    #[test]
    fn normalized_loss_ignores_positive_row_scales(b in 1usize..6, d in 1usize..8, scales in vec(1e-3f64..1e3, 12), seed in any::<u64>()) {
        let x = matrix(b, d, seed, 1.0);
        let y = matrix(b, d, seed ^ 3, 1.0);
        let mut xs = x.clone();
        for (r, s) in scales.iter().take(b).enumerate() {
            xs.row_mut(r).iter_mut().for_each(|v| *v *= s);
        }
        let base = cmc_loss(&x, &y, 0.2, true).unwrap();
        let scaled = cmc_loss(&xs, &y, 0.2, true).unwrap();
        prop_assert!((base - scaled).abs() <= 1e-12 * base.max(1.0), "{base} vs {scaled}");
    }

    #[test]
    fn ranking_ignores_positive_query_scale(size in 2usize..30, d in 1usize..6, scale in prop_oneof![1e-6f64..1e-3, 1e-3f64..1e3, 1e3f64..1e6], seed in any::<u64>()) {
        let mut rng = stream(seed, "rank-scale", 0);
        let pool = MusicPool::new(
            (0..size)
                .map(|i| (format!("t{i:03}"), Matrix::randn(1, d, 1.0, &mut rng).into_vec()))
                .collect(),
        )
        .unwrap();
        let q = Matrix::randn(1, d, 1.0, &mut rng).into_vec();
        let scaled: Vec<f64> = q.iter().map(|x| x * scale).collect();
        prop_assert_eq!(rank(&q, &pool).unwrap().order, rank(&scaled, &pool).unwrap().order);
    }

    #[test]
    fn report_is_monotone_and_success_dominates(r1 in vec(1usize..=30, 1..50), seed in any::<u64>()) {
        let mut rng = stream(seed, "report", 0);
        let r2: Vec<usize> = r1.iter().map(|_| rand::Rng::gen_range(&mut rng, 1..=30)).collect();
        let report = metrics(&[(1, r1.clone()), (2, r2)], &[1, 2, 5, 10, 30], 30).unwrap();
        for t in &report.turns {
            prop_assert!(t.recall.windows(2).all(|w| w[0].1 <= w[1].1));
            prop_assert!(t.recall_at(30) == Some(100.0));
            prop_assert!(t.mr >= 1.0 && t.mr <= 30.0);
        }
        let best = report.turns.iter().map(|t| t.recall_at(1).unwrap()).fold(0.0, f64::max);
        prop_assert!(report.sr >= best);
    }

    #[test]
    fn video_pooling_is_order_free(frames in 1usize..10, d_in in 1usize..8, d in 1usize..8, seed in any::<u64>()) {
        let mut store = ParamStore::new();
        let proj = ModalityProjection::new(&mut store, &mut stream(seed, "proj", 0), "video", d_in, d);
        let m = matrix(frames, d_in, seed, 1.0);
        let mut order: Vec<usize> = (0..frames).collect();
        order.rotate_left(frames / 2);
        let pooled = |tokens: Matrix| {
            let mut tape = Tape::new(&store);
            let v = pool_video(&mut tape, &TokenSequence::new(Modality::Video, tokens), &proj).unwrap();
            tape.value(v).clone()
        };
        prop_assert_eq!(pooled(m.clone()), pooled(m.select_rows(&order)));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn simulated_quartets_are_well_formed(n in 20usize..80, pool_size in 4usize..20, seed in any::<u64>()) {
        let config = DataConfig { n, pool_size, ..DataConfig::default() };
        let sim = generate(&config, &EncoderConfig::default(), seed).unwrap();
        prop_assert_eq!(sim.quartets.len(), n);
        for q in &sim.quartets {
            prop_assert_ne!(&q.candidate_id, &q.target_id);
            prop_assert!(sim.pools[q.pool].contains(&q.candidate_id));
            prop_assert!(sim.pools[q.pool].contains(&q.target_id));
        }
        let split = emit_dataset(&sim, [0.8, 0.2], seed).unwrap();
        let train: BTreeSet<&str> = split.train.iter().map(|q| q.target_id.as_str()).collect();
        let candidates_train: BTreeSet<&str> = split.train.iter().map(|q| q.candidate_id.as_str()).collect();
        for q in &split.test {
            prop_assert!(!train.contains(q.target_id.as_str()) && !candidates_train.contains(q.target_id.as_str()));
            prop_assert!(!train.contains(q.candidate_id.as_str()));
        }
        prop_assert_eq!(split.train.len() + split.test.len(), n);
        let again = generate(&config, &EncoderConfig::default(), seed).unwrap();
        prop_assert_eq!(sim.quartets, again.quartets);
    }
}
