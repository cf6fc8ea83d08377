//! Dense tensors, a reverse-mode tape, and a finite-difference checker.

mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, GradCheckReport, DEFAULT_STEP};
pub use params::{Graph, Param, ParamId, ParamSet};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{log_sum_exp, sigmoid, softmax, Tensor};

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
        Tensor::matrix(
            r,
            c,
            (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn square_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0));
        let y = tape.mul(x, x).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[6.0]);
        assert_eq!(g.get(y).unwrap().data(), &[1.0]);
    }

    #[test]
    fn cross_entropy_gradient_is_p_minus_y() {
        let mut tape = Tape::new();
        let logits = tape.leaf(Tensor::matrix(1, 2, vec![0.3, -1.2]).unwrap());
        let loss = tape.softmax_cross_entropy(logits, &[1]).unwrap();
        let g = tape.backward(loss).unwrap();
        let p = softmax(&[0.3, -1.2]).unwrap();
        let got = g.get(logits).unwrap().data();
        assert!((got[0] - p[0]).abs() < 1e-15);
        assert!((got[1] - (p[1] - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn backward_rejects_non_scalar_root() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::row(vec![1.0, 2.0]));
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn shared_parameter_gradients_accumulate() {
        let mut ps = ParamSet::new();
        let w = ps.insert("w", Tensor::scalar(2.0)).unwrap();
        let mut g = Graph::new(&ps);
        let a = g.param(w);
        let b = g.param(w);
        assert_eq!(a, b);
        let y = g.add(a, b).unwrap();
        let y = g.mul(y, a).unwrap(); // 2w * w
        let grads = g.param_grads(y).unwrap();
        ps.accumulate(&grads);
        ps.accumulate(&grads);
        assert_eq!(ps.get(w).grad.data(), &[16.0]);
        ps.zero_grad();
        assert_eq!(ps.get(w).grad.data(), &[0.0]);
    }

    #[test]
    fn softmax_shift_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let n = rng.random_range(1..12);
            let v: Vec<f64> = (0..n).map(|_| rng.random_range(-30.0..30.0)).collect();
            let c = rng.random_range(-100.0..100.0);
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            let (p, q) = (softmax(&v).unwrap(), softmax(&shifted).unwrap());
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            for (a, b) in p.iter().zip(&q) {
                assert!((a - b).abs() < 1e-9);
                assert!(*a > 0.0);
            }
        }
    }

    /// Every tape op composed into one scalar, checked against central
    /// differences on random shapes up to 16x16.
    #[test]
    fn every_op_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..12 {
            let n = rng.random_range(1..=16);
            let m = rng.random_range(1..=16);
            let k = rng.random_range(1..=16);
            let mut ps = ParamSet::new();
            let a = ps.insert("a", random(&mut rng, n, k)).unwrap();
            let b = ps.insert("b", random(&mut rng, k, m)).unwrap();
            let bias = ps.insert("bias", random(&mut rng, 1, m)).unwrap();
            let c = ps.insert("c", random(&mut rng, n, m)).unwrap();
            let col = ps.insert("col", random(&mut rng, n, 1)).unwrap();
            let protos = ps.insert("protos", random(&mut rng, 3, m)).unwrap();
            let mask: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
            let targets: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
            let groups = vec![(0..n).collect::<Vec<_>>(), vec![0]];

            let report = grad_check(&mut ps, DEFAULT_STEP, |g| {
                let (a, b, bias, c, col, protos) = (
                    g.param(a),
                    g.param(b),
                    g.param(bias),
                    g.param(c),
                    g.param(col),
                    g.param(protos),
                );
                let ab = g.matmul(a, b)?;
                let ab = g.add_row(ab, bias)?;
                let t = g.tanh(ab);
                let s = g.sigmoid(c);
                let om = g.one_minus(s);
                let mixed = g.mul(s, t)?;
                let rest = g.mul(om, c)?;
                let fused = g.add(mixed, rest)?;
                let fused = g.mul_col(fused, col)?;
                let diff = g.sub(fused, c)?;
                let sel = g.select_rows(&mask, fused, diff)?;
                let cat = g.concat_cols(sel, c)?;
                let catt = g.transpose(cat)?;
                let back = g.transpose(catt)?;
                let sm = g.softmax_rows(back)?;
                let sm = g.scale(sm, 3.0);
                let sm2 = g.mul(sm, sm)?;
                let sm_term = g.sum(sm2);
                let left = g.stack_rows(&[sel, fused])?;
                let seg = g.segment_mean(left, &groups)?;
                let seg = g.affine(seg, 0.5, 0.1);
                let d = g.sq_dist(sel, protos)?;
                let d2 = g.sq_dist(seg, protos)?;
                let dd = g.affine(d, 1.0, 0.5);
                let dist = g.sqrt(dd);
                let logits = g.scale(dist, -1.0);
                let ce = g.softmax_cross_entropy(logits, &targets)?;
                let extra = g.sum(d2);
                let extra = g.scale(extra, 0.01);
                let total = g.add(ce, extra)?;
                g.add(total, sm_term)
            })
            .unwrap();
            assert!(
                report.max_rel_error < 1e-4,
                "trial {trial} ({n}x{k}x{m}): {report:?}"
            );
        }
    }

    #[test]
    fn replay_is_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut ps = ParamSet::new();
        let w = ps.insert("w", random(&mut rng, 5, 4)).unwrap();
        let x = random(&mut rng, 6, 4);
        let run = |ps: &ParamSet| {
            let mut g = Graph::new(ps);
            let xv = g.constant(x.clone());
            let y = g.linear(xv, w, None).unwrap();
            let y = g.tanh(y);
            let l = g.softmax_cross_entropy(y, &[0, 1, 2, 3, 4, 0]).unwrap();
            (g.value(l).clone(), g.param_grads(l).unwrap())
        };
        let (l1, g1) = run(&ps);
        let (l2, g2) = run(&ps);
        assert_eq!(l1.data()[0].to_bits(), l2.data()[0].to_bits());
        for ((_, a), (_, b)) in g1.iter().zip(&g2) {
            let ab: Vec<u64> = a.data().iter().map(|v| v.to_bits()).collect();
            let bb: Vec<u64> = b.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(ab, bb);
        }
    }
}
