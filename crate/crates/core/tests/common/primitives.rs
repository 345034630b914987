//! Finite-difference checks of every differentiable primitive, shared by
//! the unit suites and the acceptance run.

use sonicnav::diff::{bilstm, Activation, ParamStore, Tape, Tensor, Var};

use super::{fd_check, random_tensor, rng, FdReport};

pub fn weights(t: &mut Tape<'_, f64>, dir: &str) -> sonicnav::diff::LstmWeights {
    sonicnav::diff::LstmWeights {
        w_ih: t.param_named(&format!("t.{dir}.w_ih")).unwrap(),
        w_hh: t.param_named(&format!("t.{dir}.w_hh")).unwrap(),
        b: t.param_named(&format!("t.{dir}.b")).unwrap(),
    }
}

/// Builds a random store, evaluates `build` on a fresh tape and compares its
/// gradients to central differences.
pub fn gradcheck(
    name: &str,
    seeds: std::ops::Range<u64>,
    params: impl Fn(&mut rand_chacha::ChaCha8Rng) -> Vec<(String, Tensor<f64>)>,
    build: impl Fn(&mut Tape<'_, f64>) -> Var,
) -> FdReport {
    let mut worst = FdReport {
        checked: 0,
        worst: 0.0,
        worst_at: String::new(),
    };
    for seed in seeds {
        let mut r = rng(seed);
        let mut s = ParamStore::new();
        for (n, v) in params(&mut r) {
            s.register(&n, v).unwrap();
        }
        let mut t = Tape::new(&s);
        let out = build(&mut t);
        let g = t.backward(out).unwrap();
        let f = |p: &ParamStore<f64>| {
            let mut t = Tape::new(p);
            let o = build(&mut t);
            t.value(o).item()
        };
        let rep = fd_check(&s, &g, f, 40, seed);
        worst.checked += rep.checked;
        if rep.worst >= worst.worst {
            worst.worst = rep.worst;
            worst.worst_at = format!("{name} seed {seed}: {}", rep.worst_at);
        }
    }
    worst
}

pub fn p(name: &str, t: Tensor<f64>) -> (String, Tensor<f64>) {
    (name.to_string(), t)
}

/// Fixed random projection to a scalar so every output entry matters.
pub fn project(t: &mut Tape<'_, f64>, v: Var) -> Var {
    let n = t.value(v).len();
    let w: Vec<f64> = (0..n).map(|i| ((i * 7 + 3) % 11) as f64 / 11.0 - 0.4).collect();
    let flat = t.reshape(v, &[n]).unwrap();
    let c = t.constant_vec(w);
    let m = t.mul(flat, c).unwrap();
    t.sum(m)
}

pub fn dense_all_activations() -> Vec<FdReport> {
    let mut out = Vec::new();
    for act in [
        Activation::Identity,
        Activation::Tanh,
        Activation::Sigmoid,
        Activation::Relu,
    ] {
        out.push(gradcheck(
            "dense",
            0..10,
            |r| {
                vec![
                    p("t.x.v", random_tensor(r, &[3, 5], 1.0)),
                    p("t.w.v", random_tensor(r, &[4, 5], 0.8)),
                    p("t.b.v", random_tensor(r, &[4], 0.5)),
                ]
            },
            |t| {
                let (x, w, b) = (
                    t.param_named("t.x.v").unwrap(),
                    t.param_named("t.w.v").unwrap(),
                    t.param_named("t.b.v").unwrap(),
                );
                let y = t.dense(x, w, Some(b), act).unwrap();
                project(t, y)
            },
        ));
    }
    out
}

pub fn conv2d() -> Vec<FdReport> {
    let mut out = Vec::new();
    for (stride, pad) in [(1, 1), (2, 1), (2, 0)] {
        out.push(gradcheck(
            "conv2d",
            0..10,
            |r| {
                vec![
                    p("t.x.v", random_tensor(r, &[2, 7, 6], 1.0)),
                    p("t.w.v", random_tensor(r, &[3, 2, 3, 3], 0.5)),
                    p("t.b.v", random_tensor(r, &[3], 0.3)),
                ]
            },
            |t| {
                let (x, w, b) = (
                    t.param_named("t.x.v").unwrap(),
                    t.param_named("t.w.v").unwrap(),
                    t.param_named("t.b.v").unwrap(),
                );
                let y = t.conv2d(x, w, Some(b), stride, pad, Activation::Tanh).unwrap();
                project(t, y)
            },
        ));
    }
    out
}

pub fn lstm_step_and_bilstm() -> Vec<FdReport> {
    let mut out = Vec::new();
    out.push(gradcheck(
        "lstm_step",
        0..10,
        |r| {
            vec![
                p("t.fwd.w_ih", random_tensor(r, &[12, 4], 0.6)),
                p("t.fwd.w_hh", random_tensor(r, &[12, 3], 0.6)),
                p("t.fwd.b", random_tensor(r, &[12], 0.3)),
                p("t.x.v", random_tensor(r, &[4], 1.0)),
                p("t.h.v", random_tensor(r, &[3], 0.8)),
                p("t.c.v", random_tensor(r, &[3], 0.8)),
            ]
        },
        |t| {
            let w = weights(t, "fwd");
            let (x, h, c) = (
                t.param_named("t.x.v").unwrap(),
                t.param_named("t.h.v").unwrap(),
                t.param_named("t.c.v").unwrap(),
            );
            let packed = t.lstm_step(x, h, c, w.w_ih, w.w_hh, w.b).unwrap();
            project(t, packed)
        },
    ));
    out.push(gradcheck(
        "bilstm",
        0..10,
        |r| {
            let mut v = Vec::new();
            for dir in ["fwd", "bwd"] {
                v.push(p(&format!("t.{dir}.w_ih"), random_tensor(r, &[12, 4], 0.6)));
                v.push(p(&format!("t.{dir}.w_hh"), random_tensor(r, &[12, 3], 0.6)));
                v.push(p(&format!("t.{dir}.b"), random_tensor(r, &[12], 0.3)));
            }
            v.push(p("t.x.v", random_tensor(r, &[5, 4], 1.0)));
            v
        },
        |t| {
            let (f, b) = (weights(t, "fwd"), weights(t, "bwd"));
            let x = t.param_named("t.x.v").unwrap();
            let out = bilstm(t, x, &f, &b).unwrap();
            let y = project(t, out.outputs);
            let z = project(t, out.backward_final);
            t.add(y, z).unwrap()
        },
    ));
    out
}

pub fn softmax_composed_losses() -> Vec<FdReport> {
    let mut out = Vec::new();
    out.push(gradcheck(
        "softmax+ce+bce",
        0..10,
        |r| {
            vec![
                p("t.z.v", random_tensor(r, &[4], 2.0)),
                p("t.u.v", random_tensor(r, &[4], 2.0)),
                p("t.h.v", random_tensor(r, &[4, 3], 1.0)),
            ]
        },
        |t| {
            let (z, u, h) = (
                t.param_named("t.z.v").unwrap(),
                t.param_named("t.u.v").unwrap(),
                t.param_named("t.h.v").unwrap(),
            );
            let a = t.softmax(z).unwrap();
            let c = t.weighted_rows(h, a).unwrap();
            let pc = project(t, c);
            let ce = t.cross_entropy(u, 1).unwrap();
            let bce = t.sigmoid_bce(u, &[true, false, true, false]).unwrap();
            let s1 = t.add(pc, ce).unwrap();
            t.add(s1, bce).unwrap()
        },
    ));
    out
}

pub fn elementwise_and_structural_ops() -> Vec<FdReport> {
    let mut out = Vec::new();
    out.push(gradcheck(
        "elementwise",
        0..10,
        |r| {
            vec![
                p("t.a.v", random_tensor(r, &[6], 1.0)),
                p("t.b.v", random_tensor(r, &[6], 1.0)),
                p("t.m.v", random_tensor(r, &[3, 2], 1.0)),
            ]
        },
        |t| {
            let (a, b, m) = (
                t.param_named("t.a.v").unwrap(),
                t.param_named("t.b.v").unwrap(),
                t.param_named("t.m.v").unwrap(),
            );
            let e = t.exp(a);
            let sq = t.square(b);
            let mn = t.min(e, sq).unwrap();
            let cl = t.clamp(a, -0.5, 0.5);
            let diff = t.sub(mn, cl).unwrap();
            let sc = t.scale(diff, 0.7);
            let sh = t.add_scalar(sc, 0.1);
            let cat = t.concat(&[sh, b]).unwrap();
            let sl = t.slice(cat, 3, 6).unwrap();
            let v = t.slice(a, 0, 2).unwrap();
            let mv = t.matvec(m, v).unwrap();
            let bc = t.concat_row_broadcast(m, v).unwrap();
            let rows: Vec<Var> = (0..3).map(|j| t.slice(bc, j * 4, 4).unwrap()).collect();
            let st = t.stack_rows(&rows).unwrap();
            let x1 = project(t, sl);
            let x2 = project(t, mv);
            let x3 = project(t, st);
            let m1 = t.mean(a);
            t.sum_all(&[x1, x2, x3, m1]).unwrap()
        },
    ));
    out
}

/// Every primitive group with its worst report.
pub fn all() -> Vec<FdReport> {
    [dense_all_activations(), conv2d(), lstm_step_and_bilstm(), softmax_composed_losses(), elementwise_and_structural_ops()].into_iter().flatten().collect()
}
