use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use steerlab_autodiff::{Error, Graph, ParamStore, Tensor, Var};

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

#[test]
fn softmax_examples() {
    let mut g = Graph::new();
    let x = g.input(Tensor::vector(vec![0.0, 0.0]));
    let s = g.softmax(x).unwrap();
    assert_eq!(g.value(s).data(), &[0.5, 0.5]);

    let x = g.input(Tensor::vector(vec![0.0, 10.0]));
    let s = g.softmax(x).unwrap();
    // exp(0) / (exp(0) + exp(10))
    let p0 = 1.0 / (1.0 + 10f64.exp());
    assert!(close(g.value(s).data()[0], p0, 1e-15));
    assert!(close(g.value(s).data()[0], 4.5398e-5, 1e-9));
    // Printed value is rounded to five significant figures.
    assert!(close(g.value(s).data()[1], 0.99995, 5e-6));
}

#[test]
fn l2norm_of_three_four_is_five() {
    let mut g = Graph::new();
    let x = g.input(Tensor::vector(vec![3.0, 4.0]));
    let n = g.l2norm(x).unwrap();
    assert_eq!(g.value(n).item(), 5.0);
}

#[test]
fn square_gradient() {
    let mut store = ParamStore::new();
    let x = store.insert("x", Tensor::scalar(3.0)).unwrap();
    let mut g = Graph::new();
    let xv = g.param(&store, x);
    let loss = g.mul(xv, xv).unwrap();
    let grads = g.backward(loss).unwrap();
    store.accumulate(&g, &grads);
    assert_eq!(store.get(x).grad.item(), 6.0);
}

#[test]
fn softmax_cross_entropy_gradient_is_p_minus_y() {
    let mut g = Graph::new();
    let logits = g.input(Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap());
    let lp = g.log_softmax(logits).unwrap();
    let picked = g.gather(lp, &[0]).unwrap();
    let nll = g.neg(picked);
    let loss = g.sum(nll);
    let grads = g.backward(loss).unwrap();
    assert_eq!(grads.get(logits).unwrap().data(), &[-0.5, 0.5]);
}

#[test]
fn shape_mismatch_names_both_shapes() {
    let mut g = Graph::new();
    let a = g.input(Tensor::zeros(&[2, 3]));
    let b = g.input(Tensor::zeros(&[2, 2]));
    let err = g.matmul(a, b).unwrap_err();
    assert!(matches!(err, Error::ShapeMismatch { .. }));
    let msg = err.to_string();
    assert!(msg.contains("[2, 3]") && msg.contains("[2, 2]"), "{msg}");
    assert!(g.add(a, b).is_err());
}

#[test]
fn non_scalar_loss_rejected() {
    let mut g = Graph::new();
    let a = g.input(Tensor::zeros(&[2]));
    assert!(matches!(g.backward(a), Err(Error::NonScalarLoss(_))));
}

#[test]
fn zero_grad_is_idempotent() {
    let mut store = ParamStore::new();
    let x = store.insert("x", Tensor::vector(vec![1.0, -2.0])).unwrap();
    let mut g = Graph::new();
    let xv = g.param(&store, x);
    let sq = g.square(xv);
    let loss = g.sum(sq);
    let grads = g.backward(loss).unwrap();
    store.accumulate(&g, &grads);
    assert_eq!(store.get(x).grad.data(), &[2.0, -4.0]);
    store.zero_grad();
    let once = store.clone();
    store.zero_grad();
    assert_eq!(store, once);
    assert!(store.get(x).grad.data().iter().all(|&v| v == 0.0));
}

#[test]
fn backward_visits_each_reachable_node_once() {
    let mut g = Graph::new();
    let x = g.input(Tensor::scalar(2.0));
    let a = g.mul(x, x).unwrap();
    let b = g.add(a, x).unwrap();
    let c = g.mul(b, a).unwrap();
    let _unused = g.exp(x);
    let grads = g.backward(c).unwrap();
    assert_eq!(g.backward_visits(), 4);
    // c = (x² + x)·x² → dc/dx = 4x³ + 3x² = 44 at x = 2
    assert_eq!(grads.get(x).unwrap().item(), 44.0);
}

#[test]
fn expand_add_shared_and_private_candidates() {
    let mut g = Graph::new();
    let z = g.input(Tensor::matrix(2, 2, vec![1.0, 2.0, 10.0, 20.0]).unwrap());
    let shared = g.input(Tensor::matrix(3, 2, vec![0.0, 0.0, 1.0, 1.0, 2.0, 2.0]).unwrap());
    let out = g.expand_add(z, shared, 3).unwrap();
    assert_eq!(g.value(out).shape(), &[6, 2]);
    assert_eq!(g.value(out).row(4), &[11.0, 21.0]);

    let private = g.input(Tensor::matrix(6, 2, (0..12).map(f64::from).collect()).unwrap());
    let out = g.expand_add(z, private, 3).unwrap();
    assert_eq!(g.value(out).row(4), &[18.0, 29.0]);
    let bad = g.input(Tensor::zeros(&[4, 2]));
    assert!(g.expand_add(z, bad, 3).is_err());
}

#[test]
fn pair_relu_score_matches_unfused_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut t = |r: usize, c: usize| Tensor::matrix(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    let (z0, a0, w0) = (t(4, 5), t(3, 5), t(5, 1));
    let mut g = Graph::new();
    let (z, a, w) = (g.input(z0), g.input(a0), g.input(w0));
    let fused = g.pair_relu_score(z, a, w, 3).unwrap();
    let pre = g.expand_add(z, a, 3).unwrap();
    let hidden = g.relu(pre);
    let flat = g.matmul(hidden, w).unwrap();
    let unfused = g.reshape(flat, &[4, 3]).unwrap();
    for (x, y) in g.value(fused).data().iter().zip(g.value(unfused).data()) {
        assert!((x - y).abs() < 1e-12);
    }
    let bad = g.input(Tensor::zeros(&[4, 1]));
    assert!(g.pair_relu_score(z, a, bad, 3).is_err());
}

/// Central finite differences of a scalar function of one input tensor.
fn numeric_grad(x: &Tensor, f: &dyn Fn(&Tensor) -> f64, h: f64) -> Vec<f64> {
    (0..x.numel())
        .map(|i| {
            let mut plus = x.clone();
            plus.data_mut()[i] += h;
            let mut minus = x.clone();
            minus.data_mut()[i] -= h;
            (f(&plus) - f(&minus)) / (2.0 * h)
        })
        .collect()
}

type Build = fn(&mut Graph, Var) -> Var;

/// Every op routed into a scalar through a fixed random projection so that
/// all output elements contribute to the gradient.
fn op_cases() -> Vec<(&'static str, Vec<usize>, Build)> {
    fn project(g: &mut Graph, v: Var) -> Var {
        let t = g.value(v).clone();
        let w: Vec<f64> = (0..t.numel()).map(|i| 0.3 + ((i * 7919) % 13) as f64 / 10.0).collect();
        let w = g.input(Tensor::new(t.shape().to_vec(), w).unwrap());
        let p = g.mul(v, w).unwrap();
        g.sum(p)
    }
    vec![
        ("matmul", vec![3, 4], |g, x| {
            let w = g.input(Tensor::matrix(4, 2, vec![0.5, -1.0, 0.2, 0.3, -0.7, 1.1, 0.9, 0.1]).unwrap());
            let y = g.matmul(x, w).unwrap();
            let xt = g.reshape(x, &[4, 3]).unwrap();
            let y2 = g.matmul(xt, x).unwrap();
            let a = project(g, y);
            let b = project(g, y2);
            g.add(a, b).unwrap()
        }),
        ("add_sub_mul", vec![2, 3], |g, x| {
            let s = g.square(x);
            let a = g.add(x, s).unwrap();
            let b = g.sub(a, x).unwrap();
            let c = g.mul(b, x).unwrap();
            project(g, c)
        }),
        ("div", vec![2, 3], |g, x| {
            let e = g.exp(x);
            let d = g.div(x, e).unwrap();
            project(g, d)
        }),
        ("scale_offset", vec![5], |g, x| {
            let s = g.scale(x, -2.5);
            let o = g.add_scalar(s, 4.0);
            project(g, o)
        }),
        ("relu", vec![2, 4], |g, x| {
            let r = g.relu(x);
            project(g, r)
        }),
        ("tanh", vec![2, 4], |g, x| {
            let r = g.tanh(x);
            project(g, r)
        }),
        ("exp_log", vec![6], |g, x| {
            let e = g.exp(x);
            let l = g.log(e);
            let s = g.square(l);
            project(g, s)
        }),
        ("abs", vec![6], |g, x| {
            let a = g.abs(x);
            project(g, a)
        }),
        ("sum_mean", vec![2, 3], |g, x| {
            let s = g.square(x);
            let a = g.sum(s);
            let m = g.mean(x).unwrap();
            let m2 = g.square(m);
            g.add(a, m2).unwrap()
        }),
        ("sum_rows", vec![3, 2], |g, x| {
            let s = g.sum_rows(x).unwrap();
            let q = g.square(s);
            project(g, q)
        }),
        ("softmax", vec![2, 5], |g, x| {
            let s = g.softmax(x).unwrap();
            project(g, s)
        }),
        ("log_softmax", vec![2, 5], |g, x| {
            let s = g.log_softmax(x).unwrap();
            project(g, s)
        }),
        ("logsumexp_rows", vec![3, 4], |g, x| {
            let s = g.logsumexp_rows(x).unwrap();
            project(g, s)
        }),
        ("gather", vec![3, 4], |g, x| {
            let s = g.square(x);
            let p = g.gather(s, &[1, 3, 0]).unwrap();
            project(g, p)
        }),
        ("l2norm", vec![3, 4], |g, x| {
            let n = g.l2norm(x).unwrap();
            project(g, n)
        }),
        ("repeat_rows", vec![1, 3], |g, x| {
            let r = g.repeat_rows(x, 4).unwrap();
            let s = g.square(r);
            project(g, s)
        }),
        ("concat_slice_select", vec![3, 2], |g, x| {
            let s = g.square(x);
            let c = g.concat_cols(&[x, s]).unwrap();
            let sl = g.slice_cols(c, 1, 4).unwrap();
            let sel = g.select_rows(sl, &[2, 0, 2]).unwrap();
            let t = g.tanh(sel);
            project(g, t)
        }),
        ("expand_add", vec![2, 3], |g, x| {
            let cands = g.input(Tensor::matrix(4, 3, (0..12).map(|i| f64::from(i) / 10.0).collect()).unwrap());
            let shared = g.expand_add(x, cands, 4).unwrap();
            let t1 = g.tanh(shared);
            let rep = g.select_rows(x, &[0, 1, 0, 1]).unwrap();
            let private = g.expand_add(x, rep, 2).unwrap();
            let t2 = g.tanh(private);
            let a = project(g, t1);
            let b = project(g, t2);
            g.add(a, b).unwrap()
        }),
        ("pair_relu_score", vec![3, 3], |g, x| {
            let z = g.select_rows(x, &[0, 1]).unwrap();
            let w = g.slice_cols(x, 0, 1).unwrap();
            let shared = g.pair_relu_score(z, x, w, 3).unwrap();
            let rows = g.select_rows(x, &[0, 1, 2, 2, 1, 0]).unwrap();
            let private = g.pair_relu_score(z, rows, w, 3).unwrap();
            let a = project(g, shared);
            let b = project(g, private);
            g.add(a, b).unwrap()
        }),
    ]
}

#[test]
fn every_op_matches_central_differences_at_100_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for (name, shape, build) in op_cases() {
        for _ in 0..100 {
            let numel: usize = shape.iter().product();
            // Keep away from the abs/relu kinks so the difference quotient is valid.
            let data: Vec<f64> = (0..numel)
                .map(|_| {
                    let v: f64 = rng.gen_range(0.05..1.5);
                    if rng.gen_bool(0.5) {
                        v
                    } else {
                        -v
                    }
                })
                .collect();
            let x0 = Tensor::new(shape.clone(), data).unwrap();

            let mut g = Graph::new();
            let x = g.input(x0.clone());
            let loss = build(&mut g, x);
            let grads = g.backward(loss).unwrap();
            let analytic = grads.get(x).unwrap().data().to_vec();

            let f = |t: &Tensor| {
                let mut g = Graph::new();
                let x = g.input(t.clone());
                let l = build(&mut g, x);
                g.value(l).item()
            };
            let numeric = numeric_grad(&x0, &f, 1e-5);
            for (a, n) in analytic.iter().zip(&numeric) {
                let rel = (a - n).abs() / (n.abs() + 1e-8);
                assert!(rel < 1e-4, "{name}: analytic {a} vs numeric {n} (rel {rel})");
            }
        }
    }
}

#[test]
fn identical_inputs_give_bit_identical_values() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data: Vec<f64> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut g = Graph::new();
        let x = g.input(Tensor::matrix(8, 8, data).unwrap());
        let y = g.matmul(x, x).unwrap();
        let t = g.tanh(y);
        let s = g.softmax(t).unwrap();
        g.value(s).clone()
    };
    assert_eq!(run().data(), run().data());
}

mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn softmax_rows_sum_to_one(row in proptest::collection::vec(-50.0f64..50.0, 1..20)) {
            let mut g = Graph::new();
            let x = g.input(Tensor::vector(row));
            let s = g.softmax(x).unwrap();
            let total: f64 = g.value(s).data().iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
        }

        #[test]
        fn log_softmax_is_shift_invariant(row in proptest::collection::vec(-20.0f64..20.0, 2..10), c in -100.0f64..100.0) {
            let mut g = Graph::new();
            let x = g.input(Tensor::vector(row.clone()));
            let a = g.log_softmax(x).unwrap();
            let shifted = g.input(Tensor::vector(row.iter().map(|v| v + c).collect()));
            let b = g.log_softmax(shifted).unwrap();
            for (u, v) in g.value(a).data().iter().zip(g.value(b).data()) {
                prop_assert!((u - v).abs() < 1e-9);
            }
        }
    }
}
