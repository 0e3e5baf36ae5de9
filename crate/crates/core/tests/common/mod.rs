#![allow(dead_code)]

use mambattention::tensor::relative_error;
use mambattention::net::{BlockParams, PathParams};
use mambattention::ssm::bidirectional_mamba;
use mambattention::tensor::Attrs;
use mambattention::{Graph, ParamStore, Result, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-5;
pub const TOL: f64 = 1e-4;
/// Below this magnitude errors are judged absolutely: roundoff in a central
/// difference at `STEP` of an O(1) loss is already ~1e-10.
pub const FLOOR: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Tensor {
    Tensor::uniform(shape, lo, hi, &mut rng(seed))
}

/// `sum(y * r)` for a fixed pseudo-random `r`, giving every output element
/// its own cotangent.
pub fn weighted_sum(g: &mut Graph, y: Var) -> Result<Var> {
    let shape = g.shape(y).to_vec();
    let r = g.constant(uniform(&shape, -1.0, 1.0, 0xC0FFEE));
    let p = g.mul(y, r)?;
    g.sum_all(p)
}

/// Central-difference check of the gradient of a scalar `f` with respect to
/// every parameter in `store`. Returns the worst relative error and the name
/// of the parameter it occurred in.
pub fn check_param_grads<F>(store: &ParamStore, f: F) -> (f64, String)
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    check_param_grads_with(store, f, false)
}

/// Central difference at `STEP`, or with `refine` its Richardson
/// extrapolation from `STEP` and `STEP / 2` (error O(h^4) instead of O(h^2)).
/// Paths through atan2 near the origin are curved enough to need the latter.
pub fn derivative(mut eval: impl FnMut(f64) -> f64, x0: f64, refine: bool) -> f64 {
    let mut d = |h: f64| (eval(x0 + h) - eval(x0 - h)) / (2.0 * h);
    if refine {
        let (a, b) = (d(STEP), d(STEP / 2.0));
        (4.0 * b - a) / 3.0
    } else {
        d(STEP)
    }
}

pub fn check_param_grads_with<F>(store: &ParamStore, f: F, refine: bool) -> (f64, String)
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let mut g = Graph::new();
    let out = f(&mut g, store).unwrap();
    g.backward(out).unwrap();
    let analytic: Vec<(mambattention::ParamId, Vec<f64>)> =
        g.param_grads().into_iter().map(|(id, gr)| (id, gr.to_vec())).collect();
    let eval = |s: &ParamStore| {
        let mut g = Graph::new();
        let o = f(&mut g, s).unwrap();
        g.value(o).item().unwrap()
    };
    let mut probe = store.clone();
    let mut worst = (0.0f64, String::new());
    for id in store.ids() {
        let grad = analytic.iter().find(|(i, _)| *i == id).map(|p| p.1.clone());
        for i in 0..store.get(id).numel() {
            let x0 = store.get(id).data()[i];
            let num = derivative(
                |v| {
                    probe.get_mut(id).data_mut()[i] = v;
                    eval(&probe)
                },
                x0,
                refine,
            );
            probe.get_mut(id).data_mut()[i] = x0;
            let ana = grad.as_ref().map_or(0.0, |gr| gr[i]);
            let e = relative_error(ana, num, FLOOR);
            if e > worst.0 || e.is_nan() {
                worst = (e, store.name(id).to_string());
            }
        }
    }
    worst
}

/// Weighted sum of a primitive's output, so every output element carries a
/// distinct cotangent.
pub fn primitive_probe(g: &mut Graph, name: &str, vs: &[Var], attrs: &Attrs) -> mambattention::Result<Var> {
    let y = g.apply(name, vs, attrs)?;
    let shape = g.shape(y).to_vec();
    let r = g.constant(uniform(&shape, -1.0, 1.0, 99));
    let p = g.mul(y, r)?;
    g.sum_all(p)
}

/// Representative inputs and attributes for every primitive.
pub fn primitive_case(name: &str) -> (Vec<Tensor>, Attrs) {
    let a = Attrs::new();
    let x = uniform(&[3, 4], -1.5, 1.5, 1);
    let pos = uniform(&[3, 4], 0.5, 2.0, 2);
    match name {
        "matmul" => (vec![uniform(&[2, 3, 4], -1.0, 1.0, 3), uniform(&[4, 5], -1.0, 1.0, 4)], a),
        "add" | "sub" | "mul" => (vec![x, uniform(&[3, 4], -1.0, 1.0, 5)], a),
        "div" => (vec![x, pos], a),
        "atan2" => (vec![uniform(&[3, 4], 0.3, 1.0, 6), uniform(&[3, 4], -1.0, -0.3, 7)], a),
        "log" => (vec![pos], a),
        "pow" => (vec![pos], a.float("exponent", 0.3)),
        "abs" => (vec![Tensor::new(vec![4], vec![-1.2, -0.4, 0.5, 2.0]).unwrap()], a),
        "anti_wrap" => (vec![uniform(&[3, 4], -2.5, 2.5, 8)], a),
        "exp" | "sigmoid" | "softplus" | "silu" | "tanh" | "sin" | "cos" | "square" | "softmax" | "transpose" => {
            (vec![uniform(&[2, 3, 4], -1.5, 1.5, 9)], a)
        }
        "scale" => (vec![x], a.float("factor", -2.5)),
        "add_scalar" => (vec![x], a.float("value", 0.7)),
        "prelu" => (
            vec![
                Tensor::new(vec![2, 3, 2], vec![-1.0, 0.5, 0.2, -0.3, 1.1, -2.0, 0.4, -0.6, -0.9, 0.8, 1.5, -0.1]).unwrap(),
                uniform(&[3], 0.1, 0.4, 10),
            ],
            a.int("axis", 1),
        ),
        "layer_norm" => (vec![uniform(&[3, 5], -1.0, 1.0, 11), uniform(&[5], 0.5, 1.5, 12), uniform(&[5], -0.5, 0.5, 13)], a),
        "instance_norm" => (
            vec![uniform(&[2, 2, 3, 4], -1.0, 1.0, 14), uniform(&[2], 0.5, 1.5, 15), uniform(&[2], -0.5, 0.5, 16)],
            a,
        ),
        "conv1d" => (
            vec![uniform(&[2, 6, 3], -1.0, 1.0, 17), uniform(&[3, 3, 4], -1.0, 1.0, 18), uniform(&[3], -1.0, 1.0, 19)],
            a.int("pad_left", 3),
        ),
        "conv2d" => (
            vec![uniform(&[1, 2, 6, 5], -1.0, 1.0, 20), uniform(&[3, 2, 3, 2], -1.0, 1.0, 21), uniform(&[3], -1.0, 1.0, 22)],
            a.ints("stride", &[2, 1]).ints("padding", &[1, 1]).ints("dilation", &[1, 2]),
        ),
        "conv_transpose2d" => (
            vec![uniform(&[1, 2, 3, 4], -1.0, 1.0, 23), uniform(&[2, 3, 3, 2], -1.0, 1.0, 24), uniform(&[3], -1.0, 1.0, 25)],
            a.ints("stride", &[1, 2]).ints("padding", &[0, 1]).ints("output_padding", &[0, 1]),
        ),
        "concat" => (vec![uniform(&[2, 3], -1.0, 1.0, 26), uniform(&[2, 2], -1.0, 1.0, 27)], a.int("axis", 1)),
        "reshape" => (vec![uniform(&[2, 6], -1.0, 1.0, 28)], a.ints("shape", &[3, 4])),
        "permute" => (vec![uniform(&[2, 3, 4], -1.0, 1.0, 29)], a.ints("perm", &[2, 0, 1])),
        "flip" => (vec![uniform(&[2, 3, 4], -1.0, 1.0, 30)], a.int("axis", 1)),
        "slice" => (vec![uniform(&[2, 6], -1.0, 1.0, 31)], a.int("axis", 1).int("start", 1).int("end", 4)),
        "sum" | "mean" => (vec![uniform(&[2, 3, 4], -1.0, 1.0, 32)], a.ints("axes", &[0, 2])),
        "frame" => (vec![uniform(&[2, 12], -1.0, 1.0, 33)], a.int("window", 4).int("hop", 2).int("pad", 2)),
        "overlap_add" => (
            vec![uniform(&[2, 5, 4], -1.0, 1.0, 34)],
            a.int("hop", 2).int("pad", 2).int("length", 8),
        ),
        "selective_scan" => (
            vec![
                uniform(&[2, 5, 3], -1.0, 1.0, 35),
                uniform(&[2, 5, 3], 0.05, 0.5, 36),
                uniform(&[2, 5, 2], -1.0, 1.0, 37),
                uniform(&[2, 5, 2], -1.0, 1.0, 38),
                uniform(&[2, 3], -1.5, -0.2, 39),
            ],
            a,
        ),
        other => panic!("no gradient case for primitive `{other}`"),
    }
}

/// `[M, K, T, F] -> [M*F, T, K]` and `[M*T, F, K]` by explicit indexing.
pub fn to_seq(x: &Tensor, time: bool) -> Tensor {
    let [m, k, t, f] = *x.shape() else { unreachable!() };
    let (s, l) = if time { (m * f, t) } else { (m * t, f) };
    let mut out = Tensor::zeros(&[s, l, k]);
    for mi in 0..m {
        for ki in 0..k {
            for ti in 0..t {
                for fi in 0..f {
                    let v = x.data()[((mi * k + ki) * t + ti) * f + fi];
                    let (si, li) = if time { (mi * f + fi, ti) } else { (mi * t + ti, fi) };
                    out.data_mut()[(si * l + li) * k + ki] = v;
                }
            }
        }
    }
    out
}

pub fn from_seq(y: &Tensor, shape: &[usize], time: bool) -> Tensor {
    let [m, k, t, f] = *shape else { unreachable!() };
    let l = if time { t } else { f };
    let mut out = Tensor::zeros(shape);
    for mi in 0..m {
        for ki in 0..k {
            for ti in 0..t {
                for fi in 0..f {
                    let (si, li) = if time { (mi * f + fi, ti) } else { (mi * t + ti, fi) };
                    out.data_mut()[((mi * k + ki) * t + ti) * f + fi] = y.data()[(si * l + li) * k + ki];
                }
            }
        }
    }
    out
}

/// Residual sublayers applied to a sequence batch in the given order.
pub fn residual_chain(g: &mut Graph, store: &ParamStore, p: &PathParams, x: Var, attention_first: bool) -> Var {
    let att = |g: &mut Graph, x: Var| match &p.attention {
        Some(s) => {
            let a = s.forward(g, store, x).unwrap();
            g.add(x, a).unwrap()
        }
        None => x,
    };
    let mam = |g: &mut Graph, x: Var| {
        let y = bidirectional_mamba(g, store, &p.mamba, x).unwrap();
        g.add(x, y).unwrap()
    };
    if attention_first {
        let x1 = att(g, x);
        mam(g, x1)
    } else {
        let x1 = mam(g, x);
        att(g, x1)
    }
}

pub fn block_oracle(store: &ParamStore, b: &BlockParams, x: &Tensor, attention_first: bool) -> Tensor {
    let mut g = Graph::new();
    let xt = g.constant(to_seq(x, true));
    let yt = residual_chain(&mut g, store, &b.time, xt, attention_first);
    let mid = from_seq(g.value(yt), x.shape(), true);
    let xf = g.constant(to_seq(&mid, false));
    let yf = residual_chain(&mut g, store, &b.freq, xf, attention_first);
    from_seq(g.value(yf), x.shape(), false)
}
