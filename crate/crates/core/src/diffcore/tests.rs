use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;

fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::matrix(rows, cols, data).unwrap()
}

/// Central differences over every input element of a graph function whose
/// inputs are plain tensors. Returns the worst relative error.
fn fd_worst<F>(inputs: &[Tensor], build: F) -> f64
where
    F: Fn(&mut Graph, &[Var]) -> Var,
{
    let eps = 1e-5;
    let eval = |ts: &[Tensor]| {
        let mut g = Graph::new();
        let vs: Vec<Var> = ts.iter().map(|t| g.variable(t.clone())).collect();
        let out = build(&mut g, &vs);
        let s = g.sum(out);
        g.value(s).item()
    };
    let mut g = Graph::new();
    let vs: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let out = build(&mut g, &vs);
    let s = g.sum(out);
    let grads = g.backward(s).unwrap();
    let mut worst: f64 = 0.0;
    for (k, t) in inputs.iter().enumerate() {
        let analytic = grads.wrt(vs[k]).cloned().unwrap_or_else(|| Tensor::zeros(t.shape()));
        for i in 0..t.len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += eps;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= eps;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * eps);
            worst = worst.max(crate::gradcheck::rel_error(analytic.data()[i], numeric));
        }
    }
    worst
}

#[test]
fn linear_identity_map() {
    let mut g = Graph::new();
    let x = g.input(Tensor::row(&[1.0, 0.0]));
    let w = g.input(Tensor::identity(2));
    let b = g.input(Tensor::row(&[0.0, 0.0]));
    let y = g.linear(x, w, Some(b)).unwrap();
    assert_eq!(g.value(y).data(), &[1.0, 0.0]);
}

#[test]
fn linear_zero_weights_yield_bias() {
    let mut g = Graph::new();
    let x = g.input(Tensor::row(&[2.0, 3.0]));
    let w = g.input(Tensor::zeros(&[2, 4]));
    let b = g.input(Tensor::row(&[1.0; 4]));
    let y = g.linear(x, w, Some(b)).unwrap();
    assert_eq!(g.value(y).data(), &[1.0; 4]);
}

#[test]
fn linear_hand_multiply() {
    let mut g = Graph::new();
    let x = g.input(Tensor::row(&[1.0, 2.0]));
    let w = g.input(Tensor::matrix(2, 2, vec![1.0, 1.0, 1.0, -1.0]).unwrap());
    let y = g.linear(x, w, None).unwrap();
    // [1*1 + 2*1, 1*1 + 2*(-1)]
    assert_eq!(g.value(y).data(), &[3.0, -1.0]);
}

#[test]
fn linear_shape_mismatch_names_both_shapes() {
    let mut g = Graph::new();
    let x = g.input(Tensor::row(&[1.0, 2.0, 3.0]));
    let w = g.input(Tensor::zeros(&[2, 4]));
    match g.linear(x, w, None).unwrap_err() {
        Error::Dimension { left, right, .. } => {
            assert_eq!(left, vec![1, 3]);
            assert_eq!(right, vec![2, 4]);
        }
        e => panic!("unexpected {e}"),
    }
}

#[test]
fn elementwise_examples() {
    let mut g = Graph::new();
    let one = g.input(Tensor::scalar(1.0));
    let e = g.elu(one);
    assert_eq!(g.value(e).item(), 1.0);

    let neg = g.input(Tensor::scalar(-1.0));
    let e = g.elu(neg);
    assert!((g.value(e).item() - ((-1.0f64).exp() - 1.0)).abs() < 1e-15);

    let c = g.input(Tensor::row(&[0.7, 0.7, 0.7]));
    let s = g.softmax(c, Axis::Cols);
    for &p in g.value(s).data() {
        assert!((p - 1.0 / 3.0).abs() < 1e-15);
    }

    let x = g.input(Tensor::row(&[0.3, -2.0, 5.5]));
    let ones = g.input(Tensor::ones(&[1, 3]));
    let h = g.hadamard(x, ones).unwrap();
    assert_eq!(g.value(h).data(), g.value(x).data());
}

#[test]
fn nonconforming_shapes_are_rejected() {
    let mut g = Graph::new();
    let a = g.input(Tensor::zeros(&[2, 3]));
    let b = g.input(Tensor::zeros(&[3, 2]));
    assert!(matches!(g.hadamard(a, b), Err(Error::Dimension { .. })));
    assert!(matches!(g.concat_cols(&[a, b]), Err(Error::Dimension { .. })));
    assert!(matches!(g.add(a, b), Err(Error::Dimension { .. })));
}

#[test]
fn derivative_of_square() {
    let mut g = Graph::new();
    let x = g.variable(Tensor::scalar(3.0));
    let y = g.hadamard(x, x).unwrap();
    let grads = g.backward(y).unwrap();
    assert_eq!(grads.wrt(x).unwrap().item(), 6.0);
}

#[test]
fn mean_pool_gradient_is_uniform() {
    let mut g = Graph::new();
    let x = g.variable(Tensor::filled(&[5, 1], 2.0));
    let m = g.mean_pool(x, Axis::Rows);
    let grads = g.backward(m).unwrap();
    for &d in grads.wrt(x).unwrap().data() {
        assert!((d - 0.2).abs() < 1e-15);
    }
}

#[test]
fn backward_requires_scalar() {
    let mut g = Graph::new();
    let x = g.variable(Tensor::row(&[1.0, 2.0]));
    assert!(matches!(g.backward(x), Err(Error::Contract(_))));
}

#[test]
fn non_participating_tensors_get_no_gradient() {
    let mut g = Graph::new();
    let x = g.variable(Tensor::row(&[1.0, 2.0]));
    let unused = g.variable(Tensor::row(&[3.0]));
    let constant = g.input(Tensor::row(&[1.0, 1.0]));
    let y = g.hadamard(x, constant).unwrap();
    let s = g.sum(y);
    let grads = g.backward(s).unwrap();
    assert!(grads.wrt(x).is_some());
    assert!(grads.wrt(unused).is_none());
    assert!(grads.wrt(constant).is_none());
}

#[test]
fn losses_match_definitions() {
    let mut g = Graph::new();
    let sp = g.input(Tensor::scalar(2.0));
    let sn = g.input(Tensor::scalar(0.5));
    let h = hinge_pair(&mut g, sp, sn).unwrap();
    assert_eq!(g.value(h).item(), 0.0);

    let zp = g.input(Tensor::scalar(0.0));
    let zn = g.input(Tensor::scalar(0.0));
    let h = hinge_pair(&mut g, zp, zn).unwrap();
    assert_eq!(g.value(h).item(), 1.0);

    let p = g.input(Tensor::row(&[0.25; 4]));
    for label in 0..4 {
        let ce = cross_entropy(&mut g, p, label).unwrap();
        assert!((g.value(ce).item() - 4f64.ln()).abs() < 1e-15);
    }
    assert!(matches!(
        cross_entropy(&mut g, p, 4),
        Err(Error::Index { index: 4, len: 4 })
    ));

    let pred = g.input(Tensor::row(&[1.0, 3.0]));
    let target = g.input(Tensor::row(&[0.0, 1.0]));
    let l = mse(&mut g, pred, target).unwrap();
    assert_eq!(g.value(l).item(), 2.5);
}

#[test]
fn adam_with_zero_gradient_keeps_values() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::new();
    let id = store.add_init("w", &[3, 2], Init::GlorotUniform, &mut rng);
    let before = store.value(id).clone();
    store.get_mut(id).grad = Some(Tensor::zeros(&[3, 2]));
    Adam::default().step(&mut store);
    assert_eq!(store.value(id), &before);
    assert_eq!(store.get(id).step_count(), 1);
    let (m, v) = store.get(id).moments();
    assert_eq!(m.shape(), before.shape());
    assert_eq!(v.shape(), before.shape());
}

#[test]
fn adam_first_step_moves_by_learning_rate() {
    let mut store = ParamStore::new();
    let id = store.add("w", Tensor::row(&[1.0, -1.0]));
    store.get_mut(id).grad = Some(Tensor::row(&[0.5, -2.0]));
    Adam::with_lr(0.1).step(&mut store);
    // bias-corrected first step is lr * g / (|g| + eps)
    let w = store.value(id).data();
    assert!((w[0] - 0.9).abs() < 1e-6);
    assert!((w[1] + 0.9).abs() < 1e-6);
}

#[test]
fn adam_skips_parameters_without_gradient() {
    let mut store = ParamStore::new();
    let id = store.add("w", Tensor::row(&[1.0]));
    Adam::default().step(&mut store);
    assert_eq!(store.get(id).step_count(), 0);
}

#[test]
fn bilstm_single_step_row_equals_final() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::new();
    let lstm = BiLstm::new(&mut store, "l", 3, 4, &mut rng).unwrap();
    let mut g = Graph::with_params(&store);
    let x = g.input(random_tensor(&mut rng, 1, 3));
    let (h, fin) = lstm.encode(&mut g, x).unwrap();
    assert_eq!(g.shape(h), &[1, 4]);
    assert_eq!(g.value(h).data(), g.value(fin).data());
}

#[test]
fn bilstm_zero_weights_give_zero_states() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::new();
    let lstm = BiLstm::new(&mut store, "l", 3, 4, &mut rng).unwrap();
    for id in store.ids().collect::<Vec<_>>() {
        store.value_mut(id).data_mut().fill(0.0);
    }
    let mut g = Graph::with_params(&store);
    let x = g.input(random_tensor(&mut rng, 5, 3));
    let (h, fin) = lstm.encode(&mut g, x).unwrap();
    assert!(g.value(h).data().iter().all(|&v| v == 0.0));
    assert!(g.value(fin).data().iter().all(|&v| v == 0.0));
}

#[test]
fn bilstm_rejects_odd_width() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::new();
    assert!(matches!(
        BiLstm::new(&mut store, "l", 3, 5, &mut rng),
        Err(Error::Config(_))
    ));
}

fn set_scalar_lstm(store: &mut ParamStore, lstm: &Lstm, wi: [f64; 4], wh: [f64; 4], b: [f64; 4]) {
    store.value_mut(lstm.w_ih).data_mut().copy_from_slice(&wi);
    store.value_mut(lstm.w_hh).data_mut().copy_from_slice(&wh);
    store.value_mut(lstm.bias).data_mut().copy_from_slice(&b);
}

/// Scalar LSTM recurrence written out by hand.
fn scalar_trace(xs: &[f64], wi: [f64; 4], wh: [f64; 4], b: [f64; 4]) -> Vec<f64> {
    let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
    let (mut h, mut c) = (0.0, 0.0);
    let mut out = Vec::new();
    for &x in xs {
        let i = sig(wi[0] * x + wh[0] * h + b[0]);
        let f = sig(wi[1] * x + wh[1] * h + b[1]);
        let g = (wi[2] * x + wh[2] * h + b[2]).tanh();
        let o = sig(wi[3] * x + wh[3] * h + b[3]);
        c = f * c + i * g;
        h = o * c.tanh();
        out.push(h);
    }
    out
}

#[test]
fn bilstm_two_step_hand_trace() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::new();
    let lstm = BiLstm::new(&mut store, "l", 1, 2, &mut rng).unwrap();
    let fw = ([0.5, -0.3, 0.8, 0.1], [0.2, 0.4, -0.6, 0.3], [0.1, 0.0, -0.1, 0.2]);
    let bw = ([-0.4, 0.6, 0.3, -0.2], [0.1, -0.5, 0.7, 0.2], [0.0, 0.3, 0.1, -0.1]);
    set_scalar_lstm(&mut store, &lstm.forward, fw.0, fw.1, fw.2);
    set_scalar_lstm(&mut store, &lstm.backward, bw.0, bw.1, bw.2);
    let xs = [0.7, -1.2];
    let fwd = scalar_trace(&xs, fw.0, fw.1, fw.2);
    let rev: Vec<f64> = xs.iter().rev().copied().collect();
    let mut bwd = scalar_trace(&rev, bw.0, bw.1, bw.2);
    bwd.reverse();

    let mut g = Graph::with_params(&store);
    let seq = g.input(Tensor::matrix(2, 1, xs.to_vec()).unwrap());
    let (h, fin) = lstm.encode(&mut g, seq).unwrap();
    let h = g.value(h).data();
    for t in 0..2 {
        assert!((h[2 * t] - fwd[t]).abs() < 1e-14);
        assert!((h[2 * t + 1] - bwd[t]).abs() < 1e-14);
    }
    let fin = g.value(fin).data();
    assert!((fin[0] - fwd[1]).abs() < 1e-14);
    assert!((fin[1] - bwd[0]).abs() < 1e-14);
}

#[test]
fn primitive_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut probes = 0;
    let mut check = |name: &str, inputs: Vec<Tensor>, f: &dyn Fn(&mut Graph, &[Var]) -> Var| {
        probes += inputs.iter().map(Tensor::len).sum::<usize>();
        let worst = fd_worst(&inputs, f);
        assert!(worst < 1e-4, "{name}: rel err {worst:e}");
    };
    let r = &mut rng;
    check("matmul", vec![random_tensor(r, 3, 4), random_tensor(r, 4, 2)], &|g, v| g.matmul(v[0], v[1]).unwrap());
    check("add_row", vec![random_tensor(r, 3, 4), random_tensor(r, 1, 4)], &|g, v| g.add_row(v[0], v[1]).unwrap());
    check("mul_row", vec![random_tensor(r, 3, 4), random_tensor(r, 1, 4)], &|g, v| g.mul_row(v[0], v[1]).unwrap());
    check("hadamard", vec![random_tensor(r, 2, 3), random_tensor(r, 2, 3)], &|g, v| g.hadamard(v[0], v[1]).unwrap());
    check("sub", vec![random_tensor(r, 2, 3), random_tensor(r, 2, 3)], &|g, v| g.sub(v[0], v[1]).unwrap());
    check("concat", vec![random_tensor(r, 2, 3), random_tensor(r, 2, 2)], &|g, v| {
        let c = g.concat_cols(&[v[0], v[1]]).unwrap();
        let w = g.input(Tensor::matrix(2, 5, (0..10).map(|i| i as f64 * 0.3 - 1.0).collect()).unwrap());
        g.hadamard(c, w).unwrap()
    });
    check("concat_rows+slice", vec![random_tensor(r, 2, 3), random_tensor(r, 1, 3)], &|g, v| {
        let c = g.concat_rows(&[v[0], v[1]]).unwrap();
        let s = g.slice_rows(c, 1, 3).unwrap();
        let t = g.slice_cols(s, 0, 2).unwrap();
        g.hadamard(t, t).unwrap()
    });
    check("elu", vec![random_tensor(r, 3, 3)], &|g, v| g.elu(v[0]));
    check("sigmoid", vec![random_tensor(r, 3, 3)], &|g, v| g.sigmoid(v[0]));
    check("tanh", vec![random_tensor(r, 3, 3)], &|g, v| g.tanh(v[0]));
    check("softmax cols", vec![random_tensor(r, 2, 4)], &|g, v| {
        let s = g.softmax(v[0], Axis::Cols);
        let w = g.input(Tensor::matrix(2, 4, (0..8).map(|i| (i as f64).sin()).collect()).unwrap());
        g.hadamard(s, w).unwrap()
    });
    check("softmax rows", vec![random_tensor(r, 4, 2)], &|g, v| {
        let s = g.softmax(v[0], Axis::Rows);
        let w = g.input(Tensor::matrix(4, 2, (0..8).map(|i| (i as f64).cos()).collect()).unwrap());
        g.hadamard(s, w).unwrap()
    });
    check("mean_of", vec![random_tensor(r, 2, 2), random_tensor(r, 2, 2), random_tensor(r, 2, 2)], &|g, v| {
        let m = g.mean_of(v).unwrap();
        g.hadamard(m, m).unwrap()
    });
    check("mean_pool", vec![random_tensor(r, 3, 4)], &|g, v| {
        let a = g.mean_pool(v[0], Axis::Rows);
        let b = g.mean_pool(v[0], Axis::Cols);
        let a2 = g.hadamard(a, a).unwrap();
        let b2 = g.hadamard(b, b).unwrap();
        let sa = g.sum(a2);
        let sb = g.sum(b2);
        g.add(sa, sb).unwrap()
    });
    check("max_pool", vec![random_tensor(r, 4, 3)], &|g, v| {
        let a = g.max_pool(v[0], Axis::Rows);
        let b = g.max_pool(v[0], Axis::Cols);
        let a2 = g.hadamard(a, a).unwrap();
        let sa = g.sum(a2);
        let sb = g.sum(b);
        g.add(sa, sb).unwrap()
    });
    check("transpose", vec![random_tensor(r, 2, 3)], &|g, v| {
        let t = g.transpose(v[0]);
        let w = g.input(Tensor::matrix(3, 2, vec![1.0, -2.0, 0.5, 3.0, -1.0, 0.25]).unwrap());
        g.hadamard(t, w).unwrap()
    });
    check("ln", vec![Tensor::row(&[0.3, 0.9, 1.7])], &|g, v| g.ln(v[0]));
    check("scale+shift", vec![random_tensor(r, 2, 2)], &|g, v| {
        let s = g.scale(v[0], -1.5);
        let s = g.add_scalar(s, 0.2);
        g.hadamard(s, s).unwrap()
    });
    assert!(probes >= 100, "only {probes} probes");
}

#[test]
fn lstm_and_losses_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut store = ParamStore::new();
    let lstm = BiLstm::new(&mut store, "bilstm", 3, 4, &mut rng).unwrap();
    for id in store.ids().collect::<Vec<_>>() {
        for x in store.value_mut(id).data_mut() {
            *x = rng.gen_range(-1.0..1.0);
        }
    }
    let seq = random_tensor(&mut rng, 4, 3);
    let cfg = crate::gradcheck::GradCheckConfig {
        probes_per_group: 200,
        ..Default::default()
    };
    let groups = crate::gradcheck::groups_by_prefix(&store, 2);
    let report = crate::gradcheck::check_parameters(&mut store, &groups, &cfg, |g| {
        let x = g.input(seq.clone());
        let (h, fin) = lstm.encode(g, x)?;
        let hs = g.sum(h);
        let f2 = g.hadamard(fin, fin)?;
        let fs = g.sum(f2);
        g.add(hs, fs)
    })
    .unwrap();
    assert!(report.passed(), "{report}");

    let inputs = vec![random_tensor(&mut rng, 1, 4), random_tensor(&mut rng, 1, 1), random_tensor(&mut rng, 1, 1)];
    let worst = fd_worst(&inputs, |g, v| {
        let p = g.softmax(v[0], Axis::Cols);
        let ce = cross_entropy(g, p, 2).unwrap();
        let h = hinge_pair(g, v[1], v[2]).unwrap();
        let t = g.input(Tensor::scalar(0.3));
        let m = mse(g, v[1], t).unwrap();
        let a = g.add(ce, h).unwrap();
        g.add(a, m).unwrap()
    });
    assert!(worst < 1e-4, "losses rel err {worst:e}");
}

proptest! {
    #[test]
    fn softmax_normalises_and_is_permutation_equivariant(
        logits in prop::collection::vec(-5.0f64..5.0, 2..12),
        seed in any::<u64>(),
    ) {
        let n = logits.len();
        let mut perm: Vec<usize> = (0..n).collect();
        use rand::seq::SliceRandom;
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let permuted: Vec<f64> = perm.iter().map(|&i| logits[i]).collect();

        let mut g = Graph::new();
        let a = g.input(Tensor::row(&logits));
        let b = g.input(Tensor::row(&permuted));
        let sa = g.softmax(a, Axis::Cols);
        let sb = g.softmax(b, Axis::Cols);
        let pa = g.value(sa).data().to_vec();
        let pb = g.value(sb).data().to_vec();
        prop_assert!((pa.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        for (j, &i) in perm.iter().enumerate() {
            prop_assert!((pb[j] - pa[i]).abs() <= 1e-15);
        }
    }

    #[test]
    fn concat_then_slice_recovers_operands(
        rows in 1usize..4,
        wa in 1usize..5,
        wb in 1usize..5,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_tensor(&mut rng, rows, wa);
        let b = random_tensor(&mut rng, rows, wb);
        let mut g = Graph::new();
        let va = g.input(a.clone());
        let vb = g.input(b.clone());
        let c = g.concat_cols(&[va, vb]).unwrap();
        let ra = g.slice_cols(c, 0, wa).unwrap();
        let rb = g.slice_cols(c, wa, wa + wb).unwrap();
        prop_assert_eq!(g.value(ra), &a);
        prop_assert_eq!(g.value(rb), &b);
    }
}
