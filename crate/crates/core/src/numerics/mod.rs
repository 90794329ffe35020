//! Minimal differentiable-computation core: dense f64 arrays, a reverse-mode
//! tape, Adam, checkpointing, and finite-difference gradient checking.
//!
//! Scope is deliberately small: exactly the operations the acoustic model and
//! the FP predictor need, with deterministic sequential reductions throughout.

pub mod array;
pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod optim;

pub use array::{cosine, Array};
pub use checkpoint::{Checkpoint, RngState};
pub use gradcheck::grad_check;
pub use graph::{soft_bin_weights, softmax_rows, Graph, Var};
pub use optim::{Adam, Params};

#[cfg(test)]
mod op_grad_tests {
    //! Every registered op is checked against central finite differences
    //! (eps = 1e-5), max relative error < 1e-4 at 64-bit.

    use super::*;
    use crate::error::Result;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const EPS: f64 = 1e-5;
    const TOL: f64 = 1e-4;

    fn randn(rng: &mut ChaCha8Rng, shape: &[usize]) -> Array {
        let n: usize = shape.iter().product();
        // Offset away from zero so relu/l1 kinks are not sampled.
        let data: Vec<f64> = (0..n)
            .map(|_| {
                let v: f64 = rng.random_range(0.1..1.0);
                if rng.random_bool(0.5) {
                    v
                } else {
                    -v
                }
            })
            .collect();
        Array::new(shape.to_vec(), data).unwrap()
    }

    fn check<F>(f: F, inputs: &[Array])
    where
        F: Fn(&mut Graph, &[Var]) -> Result<Var>,
    {
        let err = grad_check(f, inputs, EPS).unwrap();
        assert!(err < TOL, "max relative error {err} >= {TOL}");
    }

    #[test]
    fn linear_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = randn(&mut rng, &[4, 3]);
        let w = randn(&mut rng, &[3, 5]);
        let b = randn(&mut rng, &[5]);
        check(
            |g, v| {
                let y = g.linear(v[0], v[1], v[2])?;
                Ok(g.mean_all(y))
            },
            &[x, w, b],
        );
    }

    #[test]
    fn linear_identity_weights_pass_through() {
        let mut g = Graph::new();
        let x = g.constant(Array::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let w = g.constant(Array::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let b = g.constant(Array::vector(vec![0.0, 0.0]));
        let y = g.linear(x, w, b).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn conv1d_same_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = randn(&mut rng, &[5, 3]);
        let w = randn(&mut rng, &[3, 3, 4]);
        let b = randn(&mut rng, &[4]);
        check(
            |g, v| {
                let y = g.conv1d_same(v[0], v[1], v[2])?;
                Ok(g.mean_all(y))
            },
            &[x, w, b],
        );
    }

    #[test]
    fn conv1d_single_row_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = randn(&mut rng, &[1, 2]);
        let w = randn(&mut rng, &[3, 2, 2]);
        let b = randn(&mut rng, &[2]);
        check(
            |g, v| {
                let y = g.conv1d_same(v[0], v[1], v[2])?;
                Ok(g.sum_all(y))
            },
            &[x, w, b],
        );
    }

    #[test]
    fn relu_matches_finite_differences_off_kink() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = randn(&mut rng, &[4, 4]);
        check(
            |g, v| {
                let y = g.relu(v[0]);
                Ok(g.mean_all(y))
            },
            &[x],
        );
    }

    #[test]
    fn layer_norm_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = randn(&mut rng, &[3, 6]);
        let gain = randn(&mut rng, &[6]);
        let bias = randn(&mut rng, &[6]);
        check(
            |g, v| {
                let y = g.layer_norm(v[0], v[1], v[2], 1e-5)?;
                let t = g.constant(Array::zeros(&[3, 6]));
                g.mse_loss(y, t)
            },
            &[x, gain, bias],
        );
    }

    #[test]
    fn embedding_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let table = randn(&mut rng, &[5, 3]);
        check(
            |g, v| {
                let y = g.embedding(v[0], &[0, 2, 2, 4])?;
                Ok(g.mean_all(y))
            },
            &[table],
        );
    }

    #[test]
    fn soft_bin_embed_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let values = randn(&mut rng, &[4]);
        let table = randn(&mut rng, &[6, 3]);
        let centers: Vec<f64> = (0..6).map(|i| -1.0 + 0.4 * i as f64).collect();
        check(
            |g, v| {
                let y = g.soft_bin_embed(v[0], v[1], &centers, 0.4)?;
                Ok(g.mean_all(y))
            },
            &[values, table],
        );
    }

    #[test]
    fn add_sub_scale_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = randn(&mut rng, &[3, 2]);
        let b = randn(&mut rng, &[3, 2]);
        check(
            |g, v| {
                let s = g.add(v[0], v[1])?;
                let d = g.sub(s, v[1])?;
                let sc = g.scale(d, -2.5);
                Ok(g.sum_all(sc))
            },
            &[a, b],
        );
    }

    #[test]
    fn concat_gather_repeat_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = randn(&mut rng, &[2, 3]);
        let b = randn(&mut rng, &[3, 3]);
        check(
            |g, v| {
                let c = g.concat0(&[v[0], v[1]])?;
                let sel = g.gather_rows(c, &[4, 0, 0, 2])?;
                let rep = g.repeat_rows(sel, &[2, 1, 3, 1])?;
                Ok(g.mean_all(rep))
            },
            &[a, b],
        );
    }

    #[test]
    fn masked_mix_and_reshape_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = randn(&mut rng, &[4]);
        check(
            |g, v| {
                let mixed = g.masked_mix(v[0], &[9.0, 8.0, 7.0, 6.0], &[true, false, true, false])?;
                let m = g.reshape(mixed, &[2, 2])?;
                Ok(g.mean_all(m))
            },
            &[x],
        );
    }

    #[test]
    fn losses_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = randn(&mut rng, &[3, 4]);
        let b = randn(&mut rng, &[3, 4]);
        check(
            |g, v| {
                let l1 = g.l1_loss(v[0], v[1])?;
                let l2 = g.mse_loss(v[0], v[1])?;
                g.add(l1, l2)
            },
            &[a, b],
        );
    }

    #[test]
    fn softmax_cross_entropy_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let logits = randn(&mut rng, &[4, 3]);
        check(
            |g, v| g.softmax_cross_entropy(v[0], &[0, 2, 1, 1]),
            &[logits],
        );
    }

    #[test]
    fn l1_loss_of_identical_inputs_is_zero_with_zero_grad() {
        let x = Array::matrix(2, 2, vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        let mut g = Graph::new();
        let a = g.leaf(x.clone());
        let b = g.constant(x);
        let l = g.l1_loss(a, b).unwrap();
        assert_eq!(g.value(l).item(), 0.0);
        g.backward(l).unwrap();
        assert!(g.grad(a).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let x = randn(&mut rng, &[4, 4]);
        let w = randn(&mut rng, &[3, 4, 4]);
        let b = randn(&mut rng, &[4]);
        let run = || {
            let mut g = Graph::new();
            let xv = g.leaf(x.clone());
            let wv = g.leaf(w.clone());
            let bv = g.leaf(b.clone());
            let c = g.conv1d_same(xv, wv, bv).unwrap();
            let r = g.relu(c);
            let l = g.mean_all(r);
            g.backward(l).unwrap();
            g.grad(wv).unwrap().data().to_vec()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn shape_mismatch_reports_both_shapes() {
        let mut g = Graph::new();
        let a = g.constant(Array::zeros(&[2, 3]));
        let b = g.constant(Array::zeros(&[3, 3]));
        let err = g.add(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("[3, 3]"), "{err}");
    }

    #[test]
    fn softmax_rows_sums_to_one() {
        let logits = Array::matrix(2, 3, vec![0.1, 2.0, -1.0, 5.0, 5.0, 5.0]).unwrap();
        let p = softmax_rows(&logits);
        for t in 0..2 {
            let s: f64 = p.row(t).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert!((p.row(1)[0] - 1.0 / 3.0).abs() < 1e-12);
    }
}
