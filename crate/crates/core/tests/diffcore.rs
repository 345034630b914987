mod common;

use common::primitives::{self, weights};
use common::{random_tensor, rng, REL_TOL};
use sonicnav::diff::{
    bilstm, lstm_cell, softmax, Activation, DiffError, ParamStore, Tape, Tensor, Var,
};

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

#[test]
fn softmax_examples() {
    let p = softmax(&[0.0f64, 0.0, 0.0, 0.0]).unwrap();
    assert!(p.iter().all(|&x| close(x, 0.25, 1e-12)));

    let v = [1.0f64, 2.0, 3.0, 4.0].map(f64::ln);
    let p = softmax(&v).unwrap();
    for (got, want) in p.iter().zip([0.1, 0.2, 0.3, 0.4]) {
        assert!(close(*got, want, 1e-12));
    }

    let v = [0.3f64, -1.2, 2.5, 0.0];
    let shifted: Vec<f64> = v.iter().map(|x| x + 17.5).collect();
    let (a, b) = (softmax(&v).unwrap(), softmax(&shifted).unwrap());
    for (x, y) in a.iter().zip(&b) {
        assert!(close(*x, *y, 1e-9));
    }
    assert!(close(a.iter().sum::<f64>(), 1.0, 1e-9));

    assert_eq!(
        softmax(&[1.0f64, f64::NAN]),
        Err(DiffError::NonFinite("softmax input"))
    );
    assert!(softmax(&[f64::INFINITY, 0.0]).is_err());
}

fn store_with(entries: &[(&str, Tensor<f64>)]) -> ParamStore<f64> {
    let mut s = ParamStore::new();
    for (name, t) in entries {
        s.register(name, t.clone()).unwrap();
    }
    s
}

#[test]
fn dense_examples() {
    let s = store_with(&[
        ("t.eye.w", Tensor::from_f64(&[3, 3], &[1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap()),
        ("t.eye.b", Tensor::zeros(&[3])),
        ("t.one.w", Tensor::from_f64(&[1, 1], &[2.0]).unwrap()),
        ("t.one.b", Tensor::from_f64(&[1], &[1.0]).unwrap()),
    ]);
    let mut t = Tape::new(&s);
    let x = t.constant_vec(vec![0.5, -3.0, 7.0]);
    let (w, b) = (t.param_named("t.eye.w").unwrap(), t.param_named("t.eye.b").unwrap());
    let y = t.dense(x, w, Some(b), Activation::Identity).unwrap();
    assert_eq!(t.value(y).data(), &[0.5, -3.0, 7.0]);

    let y = t.dense(x, w, Some(b), Activation::Tanh).unwrap();
    assert!(t.value(y).data().iter().all(|v| v.abs() < 1.0));

    let x1 = t.constant_vec(vec![3.0]);
    let (w1, b1) = (t.param_named("t.one.w").unwrap(), t.param_named("t.one.b").unwrap());
    let y = t.dense(x1, w1, Some(b1), Activation::Identity).unwrap();
    assert_eq!(t.value(y).data(), &[7.0]);

    assert!(matches!(
        t.dense(x1, w, Some(b), Activation::Identity),
        Err(DiffError::Shape(_))
    ));
}

#[test]
fn conv2d_examples() {
    let mut delta = vec![0.0; 9];
    delta[4] = 1.0;
    let s = store_with(&[
        ("t.delta.w", Tensor::from_f64(&[1, 1, 3, 3], &delta).unwrap()),
        ("t.ones.w", Tensor::filled(&[1, 1, 2, 2], 1.0)),
    ]);
    let mut t = Tape::new(&s);
    let img: Vec<f64> = (0..16).map(|i| i as f64 * 0.25 - 1.0).collect();
    let x = t.input(Tensor::new(&[1, 4, 4], img.clone()).unwrap());
    let w = t.param_named("t.delta.w").unwrap();
    let y = t.conv2d(x, w, None, 1, 1, Activation::Identity).unwrap();
    assert_eq!(t.shape(y), &[1, 4, 4]);
    assert_eq!(t.value(y).data(), img.as_slice());

    let ones = t.input(Tensor::filled(&[1, 2, 2], 1.0));
    let w = t.param_named("t.ones.w").unwrap();
    let y = t.conv2d(ones, w, None, 1, 0, Activation::Identity).unwrap();
    assert_eq!(t.shape(y), &[1, 1, 1]);
    assert_eq!(t.value(y).data(), &[4.0]);

    // kernel larger than padded input
    let tiny = t.input(Tensor::filled(&[1, 1, 1], 1.0));
    assert!(t.conv2d(tiny, w, None, 1, 0, Activation::Identity).is_err());
}

#[test]
fn conv2d_output_shape_law() {
    let s = store_with(&[("t.c.w", Tensor::filled(&[2, 3, 3, 3], 0.1))]);
    for (h, w, stride, pad) in [(8, 8, 2, 1), (9, 7, 2, 0), (5, 6, 1, 1), (96, 96, 2, 1)] {
        let mut t = Tape::new(&s);
        let x = t.input(Tensor::zeros(&[3, h, w]));
        let k = t.param_named("t.c.w").unwrap();
        let y = t.conv2d(x, k, None, stride, pad, Activation::Relu).unwrap();
        assert_eq!(
            t.shape(y),
            &[2, (h + 2 * pad - 3) / stride + 1, (w + 2 * pad - 3) / stride + 1]
        );
    }
}

fn lstm_store(inp: usize, hid: usize, zero: bool, seed: u64) -> ParamStore<f64> {
    let mut r = rng(seed);
    let mk = |r: &mut _, shape: &[usize]| {
        if zero {
            Tensor::zeros(shape)
        } else {
            random_tensor(r, shape, 0.5)
        }
    };
    let mut s = ParamStore::new();
    for dir in ["fwd", "bwd"] {
        s.register(&format!("t.{dir}.w_ih"), mk(&mut r, &[4 * hid, inp])).unwrap();
        s.register(&format!("t.{dir}.w_hh"), mk(&mut r, &[4 * hid, hid])).unwrap();
        s.register(&format!("t.{dir}.b"), mk(&mut r, &[4 * hid])).unwrap();
    }
    s
}

#[test]
fn lstm_step_examples() {
    let s = lstm_store(3, 4, true, 0);
    let mut t = Tape::new(&s);
    let w = weights(&mut t, "fwd");
    let x = t.constant_vec(vec![0.3, -2.0, 5.0]);
    let h = t.constant_vec(vec![0.1, 0.2, 0.3, 0.4]);
    let cvals = [1.0, -2.0, 0.5, 3.0];
    let c = t.constant_vec(cvals.to_vec());
    let (h2, c2) = lstm_cell(&mut t, &w, x, h, c).unwrap();
    for j in 0..4 {
        assert!(close(t.value(c2).data()[j], 0.5 * cvals[j], 1e-12));
        assert!(close(
            t.value(h2).data()[j],
            0.5 * (0.5 * cvals[j]).tanh(),
            1e-12
        ));
    }

    let x0 = t.constant_vec(vec![0.0; 3]);
    let z = t.constant_vec(vec![0.0; 4]);
    let (h3, c3) = lstm_cell(&mut t, &w, x0, z, z).unwrap();
    assert!(t.value(h3).data().iter().all(|&v| v == 0.0));
    assert!(t.value(c3).data().iter().all(|&v| v == 0.0));

    let bad = t.constant_vec(vec![0.0; 5]);
    assert!(lstm_cell(&mut t, &w, bad, z, z).is_err());
}

#[test]
fn lstm_sequence_is_fold_of_steps() {
    let s = lstm_store(2, 3, false, 4);
    let mut t = Tape::new(&s);
    let w = weights(&mut t, "fwd");
    let xs: Vec<Var> = (0..5)
        .map(|i| t.constant_vec(vec![i as f64 * 0.1, 1.0 - i as f64 * 0.3]))
        .collect();
    let (outs, _) = sonicnav::diff::lstm_sequence(&mut t, &w, &xs).unwrap();
    let mut h = t.constant_vec(vec![0.0; 3]);
    let mut c = t.constant_vec(vec![0.0; 3]);
    for (k, &x) in xs.iter().enumerate() {
        let (h2, c2) = lstm_cell(&mut t, &w, x, h, c).unwrap();
        assert_eq!(t.value(h2).data(), t.value(outs[k]).data());
        h = h2;
        c = c2;
    }
}

#[test]
fn bilstm_examples() {
    let s = lstm_store(3, 4, false, 9);
    // N = 1: both directions see the same frame.
    let mut t = Tape::new(&s);
    let (f, b) = (weights(&mut t, "fwd"), weights(&mut t, "bwd"));
    let x = t.input(Tensor::from_f64(&[1, 3], &[0.2, -0.1, 0.7]).unwrap());
    let out = bilstm(&mut t, x, &f, &b).unwrap();
    assert_eq!(t.shape(out.outputs), &[1, 8]);

    // Reversal: with both directions sharing weights, forward(reversed X)
    // equals backward(X) read in reverse.
    let mut shared = ParamStore::new();
    let src = lstm_store(3, 4, false, 10);
    for dir in ["fwd", "bwd"] {
        for part in ["w_ih", "w_hh", "b"] {
            let v = src.value(src.id(&format!("t.fwd.{part}")).unwrap()).clone();
            shared.register(&format!("t.{dir}.{part}"), v).unwrap();
        }
    }
    let mut r = rng(3);
    let xs = random_tensor(&mut r, &[6, 3], 1.0);
    let mut rev = Vec::new();
    for j in (0..6).rev() {
        rev.extend_from_slice(xs.row(j));
    }
    let mut t = Tape::new(&shared);
    let (f, b) = (weights(&mut t, "fwd"), weights(&mut t, "bwd"));
    let xv = t.input(xs.clone());
    let xr = t.input(Tensor::new(&[6, 3], rev).unwrap());
    let o1 = bilstm(&mut t, xv, &f, &b).unwrap();
    let o2 = bilstm(&mut t, xr, &f, &b).unwrap();
    let (a, bb) = (t.value(o1.outputs).clone(), t.value(o2.outputs).clone());
    for j in 0..6 {
        let fwd_rev = &bb.row(j)[..4];
        let bwd_orig = &a.row(5 - j)[4..];
        for (p, q) in fwd_rev.iter().zip(bwd_orig) {
            assert!(close(*p, *q, 1e-12));
        }
    }

    // Paper-scale shape: N = 100, d = 128.
    let big = lstm_store(40, 128, false, 1);
    let mut t = Tape::new(&big);
    let (f, b) = (weights(&mut t, "fwd"), weights(&mut t, "bwd"));
    let x = t.input(Tensor::zeros(&[100, 40]));
    let out = bilstm(&mut t, x, &f, &b).unwrap();
    assert_eq!(t.shape(out.outputs), &[100, 256]);

    let empty = t.input(Tensor::zeros(&[0, 40]));
    assert!(bilstm(&mut t, empty, &f, &b).is_err());
}

#[test]
fn loss_examples() {
    let s = ParamStore::<f64>::new();
    let mut t = Tape::new(&s);
    let z = t.constant_vec(vec![0.7; 4]);
    let l = t.cross_entropy(z, 2).unwrap();
    assert!(close(t.value(l).item(), 4f64.ln(), 1e-12));
    assert!(matches!(t.cross_entropy(z, 4), Err(DiffError::Label(4, 4))));

    let z0 = t.constant_vec(vec![0.0]);
    for bit in [true, false] {
        let l = t.sigmoid_bce(z0, &[bit]).unwrap();
        assert!(close(t.value(l).item(), 2f64.ln(), 1e-12));
    }

    let bits = [true, false, false, true];
    let sat = t.constant_vec(bits.iter().map(|&b| if b { 20.0 } else { -20.0 }).collect());
    let l = t.sigmoid_bce(sat, &bits).unwrap();
    assert!(t.value(l).item() < 1e-6 && t.value(l).item() >= 0.0);

    let zc = t.constant_vec(vec![30.0, -5.0, 0.0, 1.0]);
    let l = t.cross_entropy(zc, 0).unwrap();
    assert!(t.value(l).item() >= 0.0 && t.value(l).item() < 1e-6);
}

#[test]
fn backward_examples() {
    let s = store_with(&[
        ("t.x.v", Tensor::from_f64(&[1], &[3.0]).unwrap()),
        ("t.unused.v", Tensor::from_f64(&[2], &[1.0, 2.0]).unwrap()),
    ]);
    let mut t = Tape::new(&s);
    let x = t.param_named("t.x.v").unwrap();
    let y = t.square(x);
    let g = t.backward(y).unwrap();
    assert_eq!(g.get(s.id("t.x.v").unwrap()).data(), &[6.0]);
    assert_eq!(g.get(s.id("t.unused.v").unwrap()).data(), &[0.0, 0.0]);

    let k = t.constant_vec(vec![5.0]);
    let g = t.backward(k).unwrap();
    assert!(g.tensors().iter().all(|tt| tt.data().iter().all(|&v| v == 0.0)));

    let u = t.param_named("t.unused.v").unwrap();
    assert!(matches!(t.backward(u), Err(DiffError::NonScalarOutput(_))));
}

#[test]
fn gradcheck_dense_all_activations() {
    for r in primitives::dense_all_activations() {
        assert!(r.worst < REL_TOL, "{r:?}");
    }
}

#[test]
fn gradcheck_conv2d() {
    for r in primitives::conv2d() {
        assert!(r.worst < REL_TOL, "{r:?}");
    }
}

#[test]
fn gradcheck_lstm_step_and_bilstm() {
    for r in primitives::lstm_step_and_bilstm() {
        assert!(r.worst < REL_TOL, "{r:?}");
    }
}

#[test]
fn gradcheck_softmax_composed_losses() {
    for r in primitives::softmax_composed_losses() {
        assert!(r.worst < REL_TOL, "{r:?}");
    }
}

#[test]
fn gradcheck_elementwise_and_structural_ops() {
    for r in primitives::elementwise_and_structural_ops() {
        assert!(r.worst < REL_TOL, "{r:?}");
    }
}
