use cuefsl::context::{attention_scores, ccam_attend, context_average, CcamParams, ContextSet};
use cuefsl::embeddings::{cosine_similarity, WordTable};
use cuefsl::episodic::distribution_from_distances;
use cuefsl::fusion::{gated_fuse, refine_with_word, GateParams, RefineParams};
use cuefsl::numerics::{ParamSet, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn jitter(ps: &mut ParamSet, rng: &mut ChaCha8Rng, amount: f64) {
    for p in ps.iter_mut() {
        for v in p.value.data_mut() {
            *v += rng.random_range(-amount..amount);
        }
    }
}

fn words(rng: &mut ChaCha8Rng, n: usize, d: usize, scale: f64) -> WordTable {
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d).map(|_| rng.random_range(-scale..scale)).collect())
        .collect();
    WordTable::new(
        (0..n).map(|i| format!("w{i}")).collect(),
        Tensor::from_rows(&rows).unwrap(),
    )
    .unwrap()
}

fn ccam(seed: u64, d_w: usize, d_c: usize) -> (ParamSet, CcamParams) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ps = ParamSet::new();
    let p = CcamParams::register(&mut ps, d_w, d_c, &mut rng).unwrap();
    jitter(&mut ps, &mut rng, 1.0);
    (ps, p)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn distribution_is_shift_invariant(
        d in prop::collection::vec(0.0f64..50.0, 2..20),
        shift in -1e3f64..1e3,
    ) {
        let p = distribution_from_distances(&d).unwrap();
        let shifted: Vec<f64> = d.iter().map(|x| x + shift).collect();
        let q = distribution_from_distances(&shifted).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn ccam_weights_are_a_distribution(seed: u64, n_s in 1usize..12, d_w in 1usize..10, d_c in 1usize..10) {
        let (ps, p) = ccam(seed, d_w, d_c);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let table = words(&mut rng, n_s + 1, d_w, 3.0);
        let labels: Vec<String> = table.vocabulary()[1..].to_vec();
        let set = ContextSet::from_labels(&labels, &table).unwrap();
        let r = ccam_attend(&set, table.lookup("w0").unwrap(), &ps, &p).unwrap();
        prop_assert!(r.weights.iter().all(|&w| w >= 0.0));
        prop_assert!((r.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        // The pooled context is a convex combination of the label vectors.
        for j in 0..d_w {
            let col: Vec<f64> = (0..n_s).map(|i| set.matrix().get(i, j)).collect();
            let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(lo - 1e-12 <= r.pooled[j] && r.pooled[j] <= hi + 1e-12);
        }
    }

    #[test]
    fn ccam_is_permutation_equivariant(seed: u64, n_s in 2usize..10, d_w in 1usize..8) {
        let (ps, p) = ccam(seed, d_w, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 2);
        let table = words(&mut rng, n_s + 1, d_w, 3.0);
        let labels: Vec<String> = table.vocabulary()[1..].to_vec();
        let mut perm: Vec<usize> = (0..n_s).collect();
        rand::seq::SliceRandom::shuffle(&mut perm[..], &mut rng);
        let permuted: Vec<String> = perm.iter().map(|&i| labels[i].clone()).collect();
        let w = table.lookup("w0").unwrap();
        let a = ccam_attend(&ContextSet::from_labels(&labels, &table).unwrap(), w, &ps, &p).unwrap();
        let b = ccam_attend(&ContextSet::from_labels(&permuted, &table).unwrap(), w, &ps, &p).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            prop_assert!((b.weights[k] - a.weights[i]).abs() < 1e-12);
            prop_assert_eq!(&b.labels[k], &a.labels[i]);
        }
        for (x, y) in a.pooled.iter().zip(&b.pooled) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_padding_rescales_scores(seed: u64, n_s in 1usize..8, d_w in 1usize..8, d_c in 1usize..6, pad in 1usize..12) {
        let (ps, p) = ccam(seed, d_w, d_c);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 3);
        let table = words(&mut rng, n_s + 1, d_w, 2.0);
        let labels: Vec<String> = table.vocabulary()[1..].to_vec();
        let set = ContextSet::from_labels(&labels, &table).unwrap();
        let w = table.lookup("w0").unwrap();
        let base = attention_scores(&set, w, &ps, &p).unwrap();

        let mut padded = ParamSet::new();
        let big = CcamParams::register(&mut padded, d_w, d_c + pad, &mut rng).unwrap();
        for (small, large) in [(p.w_k, big.w_k), (p.w_q, big.w_q)] {
            let src = ps.value(small).clone();
            let dst = padded.value_mut(large);
            dst.data_mut().iter_mut().for_each(|v| *v = 0.0);
            dst.data_mut()[..src.len()].copy_from_slice(src.data());
        }
        let wide = attention_scores(&set, w, &padded, &big).unwrap();
        let ratio = (d_c as f64 / (d_c + pad) as f64).sqrt();
        for (a, b) in base.iter().zip(&wide) {
            prop_assert!((a * ratio - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn gated_fusion_stays_in_the_box(seed: u64, d_x in 1usize..12, d_z in 1usize..12, bias: bool) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamSet::new();
        let gate = GateParams::register(&mut ps, d_x, d_z, bias, &mut rng).unwrap();
        jitter(&mut ps, &mut rng, 2.0);
        let f: Vec<f64> = (0..d_x).map(|_| rng.random_range(-5.0..5.0)).collect();
        let c: Vec<f64> = (0..d_x).map(|_| rng.random_range(-1.0..1.0)).collect();
        let t = gated_fuse(&f, &c, &ps, &gate).unwrap();
        prop_assert!(t.within_box());
        prop_assert!(t.gate.iter().all(|&z| (0.0..=1.0).contains(&z)));
        for i in 0..d_x {
            let expect = t.gate[i] * f[i] + (1.0 - t.gate[i]) * c[i];
            prop_assert!((t.fused[i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn refinement_is_a_convex_combination(seed: u64, d_w in 1usize..10, d_h in 1usize..10, d_x in 1usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamSet::new();
        let refine = RefineParams::register(&mut ps, d_w, d_h, d_x, &mut rng).unwrap();
        jitter(&mut ps, &mut rng, 1.0);
        let proto: Vec<f64> = (0..d_x).map(|_| rng.random_range(-4.0..4.0)).collect();
        let word: Vec<f64> = (0..d_w).map(|_| rng.random_range(-2.0..2.0)).collect();
        let r = refine_with_word(&proto, &word, &ps, &refine).unwrap();
        prop_assert!(r.lambda > 0.0 && r.lambda < 1.0);
        for i in 0..d_x {
            let expect = r.lambda * proto[i] + (1.0 - r.lambda) * r.word_projection[i];
            prop_assert!((r.prototype[i] - expect).abs() < 1e-12);
            let (lo, hi) = (proto[i].min(r.word_projection[i]), proto[i].max(r.word_projection[i]));
            prop_assert!(lo - 1e-12 <= r.prototype[i] && r.prototype[i] <= hi + 1e-12);
        }
    }

    #[test]
    fn cosine_is_symmetric_and_scale_free(
        u in prop::collection::vec(-10.0f64..10.0, 1..16),
        seed: u64,
        alpha in 1e-3f64..1e3,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v: Vec<f64> = u.iter().map(|_| rng.random_range(-10.0..10.0)).collect();
        prop_assume!(u.iter().any(|x| x.abs() > 1e-6) && v.iter().any(|x| x.abs() > 1e-6));
        let s = cosine_similarity(&u, &v).unwrap();
        prop_assert!((s - cosine_similarity(&v, &u).unwrap()).abs() < 1e-15);
        let scaled: Vec<f64> = u.iter().map(|x| alpha * x).collect();
        prop_assert!((s - cosine_similarity(&scaled, &v).unwrap()).abs() < 1e-12);
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&s));
    }

    #[test]
    fn context_average_is_the_mean(seed: u64, n_s in 1usize..10, d_w in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let table = words(&mut rng, n_s, d_w, 3.0);
        let set = ContextSet::from_labels(table.vocabulary(), &table).unwrap();
        let avg = context_average(&set).unwrap();
        for (j, &a) in avg.iter().enumerate() {
            let m = (0..n_s).map(|i| set.matrix().get(i, j)).sum::<f64>() / n_s as f64;
            prop_assert!((a - m).abs() < 1e-12);
        }
    }

    #[test]
    fn word_table_text_roundtrip(seed: u64, n in 1usize..12, d in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let table = words(&mut rng, n, d, 1e3);
        let mut buf = Vec::new();
        table.write(&mut buf).unwrap();
        prop_assert_eq!(WordTable::read(&buf[..]).unwrap(), table);
    }
}
