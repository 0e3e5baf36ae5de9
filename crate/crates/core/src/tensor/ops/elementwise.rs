use super::super::graph::{Backward, Graph, Var};
use super::super::{strides, Tensor};
use crate::error::{Error, Result};

/// Numpy-style broadcast of two shapes (aligned on the trailing axis).
pub(crate) fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let n = a.len().max(b.len());
    let mut out = vec![0; n];
    for i in 0..n {
        let da = if i + a.len() >= n { a[i + a.len() - n] } else { 1 };
        let db = if i + b.len() >= n { b[i + b.len() - n] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            (x, y) => {
                return Err(Error::shape(
                    op,
                    format!("axis {i} of {a:?} is {x}, of {b:?} is {y}; cannot broadcast"),
                ))
            }
        };
    }
    Ok(out)
}

/// Strides of `shape` viewed inside `out` with broadcast axes pinned to 0.
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let s = strides(shape);
    let off = out.len() - shape.len();
    (0..out.len())
        .map(|i| {
            if i < off || shape[i - off] == 1 {
                0
            } else {
                s[i - off]
            }
        })
        .collect()
}

/// Calls `f(out_index, a_index, b_index)` for every element of `out`.
fn for_each_broadcast(out: &[usize], sa: &[usize], sb: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let n: usize = out.iter().product();
    if n == 0 {
        return;
    }
    let nd = out.len();
    let mut idx = vec![0usize; nd];
    let (mut ia, mut ib) = (0usize, 0usize);
    for o in 0..n {
        f(o, ia, ib);
        for d in (0..nd).rev() {
            idx[d] += 1;
            ia += sa[d];
            ib += sb[d];
            if idx[d] < out[d] {
                break;
            }
            ia -= sa[d] * out[d];
            ib -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

struct Binary {
    a: Var,
    b: Var,
    kind: BinaryKind,
}

impl Backward for Binary {
    fn name(&self) -> &'static str {
        match self.kind {
            BinaryKind::Add => "add",
            BinaryKind::Sub => "sub",
            BinaryKind::Mul => "mul",
            BinaryKind::Div => "div",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        vec![self.a, self.b]
    }

    fn backward(&self, g: &Graph, out: &Tensor, go: &[f64]) -> Vec<Option<Vec<f64>>> {
        let (ta, tb) = (g.value(self.a), g.value(self.b));
        let (a, b) = (ta.data(), tb.data());
        let want_a = g.requires_grad(self.a);
        let want_b = g.requires_grad(self.b);
        let mut ga = want_a.then(|| vec![0.0; a.len()]);
        let mut gb = want_b.then(|| vec![0.0; b.len()]);
        let sa = broadcast_strides(ta.shape(), out.shape());
        let sb = broadcast_strides(tb.shape(), out.shape());
        let kind = self.kind;
        for_each_broadcast(out.shape(), &sa, &sb, |o, ia, ib| {
            let gz = go[o];
            let (da, db) = match kind {
                BinaryKind::Add => (gz, gz),
                BinaryKind::Sub => (gz, -gz),
                BinaryKind::Mul => (gz * b[ib], gz * a[ia]),
                BinaryKind::Div => (gz / b[ib], -gz * a[ia] / (b[ib] * b[ib])),
            };
            if let Some(ga) = ga.as_mut() {
                ga[ia] += da;
            }
            if let Some(gb) = gb.as_mut() {
                gb[ib] += db;
            }
        });
        vec![ga, gb]
    }
}

impl Graph {
    pub(crate) fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var> {
        let name = match kind {
            BinaryKind::Add => "add",
            BinaryKind::Sub => "sub",
            BinaryKind::Mul => "mul",
            BinaryKind::Div => "div",
        };
        let (ta, tb) = (self.value(a), self.value(b));
        let out_shape = broadcast_shape(name, ta.shape(), tb.shape())?;
        let f = |x: f64, y: f64| match kind {
            BinaryKind::Add => x + y,
            BinaryKind::Sub => x - y,
            BinaryKind::Mul => x * y,
            BinaryKind::Div => x / y,
        };
        let data = if ta.shape() == tb.shape() {
            ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect()
        } else {
            let n: usize = out_shape.iter().product();
            let mut data = vec![0.0; n];
            let sa = broadcast_strides(ta.shape(), &out_shape);
            let sb = broadcast_strides(tb.shape(), &out_shape);
            let (da, db) = (ta.data(), tb.data());
            for_each_broadcast(&out_shape, &sa, &sb, |o, ia, ib| data[o] = f(da[ia], db[ib]));
            data
        };
        let out = Tensor::new(out_shape, data)?;
        Ok(self.push(out, Binary { a, b, kind }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Div, a, b)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum UnaryKind {
    Exp,
    Log,
    Sigmoid,
    Softplus,
    Silu,
    Tanh,
    Abs,
    Sin,
    Cos,
    Square,
    /// `x^p` on a nonnegative base.
    Pow(f64),
    Scale(f64),
    AddScalar(f64),
    /// `|t - 2*pi*round(t / 2*pi)|`
    AntiWrap,
}

/// Offset under the base of `pow` so the derivative stays finite at 0.
pub(crate) const POW_EPS: f64 = 1e-12;

// Branch-free: exp(-x) overflowing to inf still yields the right limit 0.
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn wrap_residual(t: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    t - two_pi * (t / two_pi).round()
}

impl UnaryKind {
    fn name(self) -> &'static str {
        match self {
            UnaryKind::Exp => "exp",
            UnaryKind::Log => "log",
            UnaryKind::Sigmoid => "sigmoid",
            UnaryKind::Softplus => "softplus",
            UnaryKind::Silu => "silu",
            UnaryKind::Tanh => "tanh",
            UnaryKind::Abs => "abs",
            UnaryKind::Sin => "sin",
            UnaryKind::Cos => "cos",
            UnaryKind::Square => "square",
            UnaryKind::Pow(_) => "pow",
            UnaryKind::Scale(_) => "scale",
            UnaryKind::AddScalar(_) => "add_scalar",
            UnaryKind::AntiWrap => "anti_wrap",
        }
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            UnaryKind::Exp => x.exp(),
            UnaryKind::Log => x.ln(),
            UnaryKind::Sigmoid => sigmoid(x),
            UnaryKind::Softplus => softplus(x),
            UnaryKind::Silu => x * sigmoid(x),
            UnaryKind::Tanh => x.tanh(),
            UnaryKind::Abs => x.abs(),
            UnaryKind::Sin => x.sin(),
            UnaryKind::Cos => x.cos(),
            UnaryKind::Square => x * x,
            UnaryKind::Pow(p) => x.powf(p),
            UnaryKind::Scale(s) => s * x,
            UnaryKind::AddScalar(s) => x + s,
            UnaryKind::AntiWrap => wrap_residual(x).abs(),
        }
    }

    /// dy/dx given input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            UnaryKind::Exp => y,
            UnaryKind::Log => 1.0 / x,
            UnaryKind::Sigmoid => y * (1.0 - y),
            UnaryKind::Softplus => sigmoid(x),
            UnaryKind::Silu => {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            }
            UnaryKind::Tanh => 1.0 - y * y,
            UnaryKind::Abs => sign(x),
            UnaryKind::Sin => x.cos(),
            UnaryKind::Cos => -x.sin(),
            UnaryKind::Square => 2.0 * x,
            UnaryKind::Pow(p) => {
                if p >= 1.0 {
                    p * x.powf(p - 1.0)
                } else {
                    p * (x + POW_EPS).powf(p - 1.0)
                }
            }
            UnaryKind::Scale(s) => s,
            UnaryKind::AddScalar(_) => 1.0,
            UnaryKind::AntiWrap => sign(wrap_residual(x)),
        }
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

struct Unary {
    x: Var,
    kind: UnaryKind,
}

impl Backward for Unary {
    fn name(&self) -> &'static str {
        self.kind.name()
    }

    fn inputs(&self) -> Vec<Var> {
        vec![self.x]
    }

    fn backward(&self, g: &Graph, out: &Tensor, go: &[f64]) -> Vec<Option<Vec<f64>>> {
        let x = g.value(self.x).data();
        let y = out.data();
        let gx = (0..x.len())
            .map(|i| go[i] * self.kind.derivative(x[i], y[i]))
            .collect();
        vec![Some(gx)]
    }
}

impl Graph {
    pub(crate) fn unary(&mut self, kind: UnaryKind, x: Var) -> Result<Var> {
        let t = self.value(x);
        match kind {
            UnaryKind::Log if t.data().iter().any(|&v| v <= 0.0) => {
                return Err(Error::invalid("log", "input must be strictly positive"));
            }
            UnaryKind::Pow(p) => {
                if !p.is_finite() {
                    return Err(Error::invalid("pow", format!("exponent {p} is not finite")));
                }
                if t.data().iter().any(|&v| v < 0.0) {
                    return Err(Error::invalid("pow", "base must be nonnegative"));
                }
            }
            _ => {}
        }
        let out = t.map(|v| kind.apply(v));
        Ok(self.push(out, Unary { x, kind }))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Exp, x)
    }
    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Log, x)
    }
    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Sigmoid, x)
    }
    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Softplus, x)
    }
    pub fn silu(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Silu, x)
    }
    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Tanh, x)
    }
    pub fn abs(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Abs, x)
    }
    pub fn sin(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Sin, x)
    }
    pub fn cos(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Cos, x)
    }
    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Square, x)
    }
    /// `x^p` for a nonnegative base.
    pub fn pow(&mut self, x: Var, p: f64) -> Result<Var> {
        self.unary(UnaryKind::Pow(p), x)
    }
    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        self.unary(UnaryKind::Scale(s), x)
    }
    pub fn add_scalar(&mut self, x: Var, s: f64) -> Result<Var> {
        self.unary(UnaryKind::AddScalar(s), x)
    }
    /// Anti-wrapping magnitude `|t - 2*pi*round(t/(2*pi))|`.
    pub fn anti_wrap(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::AntiWrap, x)
    }
}

struct PRelu {
    x: Var,
    slope: Var,
    axis: usize,
}

/// (outer, channels, inner) split of `shape` around `axis`.
pub(crate) fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl Backward for PRelu {
    fn name(&self) -> &'static str {
        "prelu"
    }

    fn inputs(&self) -> Vec<Var> {
        vec![self.x, self.slope]
    }

    fn backward(&self, g: &Graph, _out: &Tensor, go: &[f64]) -> Vec<Option<Vec<f64>>> {
        let tx = g.value(self.x);
        let x = tx.data();
        let a = g.value(self.slope).data();
        let (outer, ch, inner) = split_at_axis(tx.shape(), self.axis);
        let mut gx = vec![0.0; x.len()];
        let mut ga = vec![0.0; a.len()];
        for o in 0..outer {
            for c in 0..ch {
                let base = (o * ch + c) * inner;
                let slope = a[if a.len() == 1 { 0 } else { c }];
                let mut acc = 0.0;
                for i in base..base + inner {
                    if x[i] > 0.0 {
                        gx[i] = go[i];
                    } else {
                        gx[i] = go[i] * slope;
                        acc += go[i] * x[i];
                    }
                }
                ga[if a.len() == 1 { 0 } else { c }] += acc;
            }
        }
        vec![Some(gx), Some(ga)]
    }
}

impl Graph {
    /// Parametric ReLU with one learnable slope per channel along `axis`
    /// (or a single shared slope when `slope` has one element).
    pub fn prelu(&mut self, x: Var, slope: Var, axis: isize) -> Result<Var> {
        let tx = self.value(x);
        let axis = crate::tensor::norm_axis("prelu", axis, tx.ndim())?;
        let ts = self.value(slope);
        let ch = tx.shape()[axis];
        if ts.numel() != ch && ts.numel() != 1 {
            return Err(Error::shape(
                "prelu",
                format!("slope has {} entries, channel axis {axis} has {ch}", ts.numel()),
            ));
        }
        let (outer, ch, inner) = split_at_axis(tx.shape(), axis);
        let a = ts.data();
        let xd = tx.data();
        let mut y = vec![0.0; xd.len()];
        for o in 0..outer {
            for c in 0..ch {
                let slope = a[if a.len() == 1 { 0 } else { c }];
                let base = (o * ch + c) * inner;
                for i in base..base + inner {
                    y[i] = if xd[i] > 0.0 { xd[i] } else { slope * xd[i] };
                }
            }
        }
        let out = Tensor::new(tx.shape().to_vec(), y)?;
        Ok(self.push(out, PRelu { x, slope, axis }))
    }
}

struct Atan2 {
    y: Var,
    x: Var,
}

impl Backward for Atan2 {
    fn name(&self) -> &'static str {
        "atan2"
    }

    fn inputs(&self) -> Vec<Var> {
        vec![self.y, self.x]
    }

    fn backward(&self, g: &Graph, _out: &Tensor, go: &[f64]) -> Vec<Option<Vec<f64>>> {
        let y = g.value(self.y).data();
        let x = g.value(self.x).data();
        let mut gy = vec![0.0; y.len()];
        let mut gx = vec![0.0; x.len()];
        for i in 0..y.len() {
            let r2 = x[i] * x[i] + y[i] * y[i];
            if r2 > 0.0 {
                gy[i] = go[i] * x[i] / r2;
                gx[i] = -go[i] * y[i] / r2;
            }
        }
        vec![Some(gy), Some(gx)]
    }
}

impl Graph {
    /// Elementwise two-argument arctangent `atan2(y, x)` in `(-pi, pi]`;
    /// `atan2(0, 0)` is 0 with zero gradient.
    pub fn atan2(&mut self, y: Var, x: Var) -> Result<Var> {
        let (ty, tx) = (self.value(y), self.value(x));
        if ty.shape() != tx.shape() {
            return Err(Error::shape(
                "atan2",
                format!("y has shape {:?}, x has {:?}", ty.shape(), tx.shape()),
            ));
        }
        let data = ty
            .data()
            .iter()
            .zip(tx.data())
            .map(|(&a, &b)| wrapped_atan2(a, b))
            .collect();
        let out = Tensor::new(ty.shape().to_vec(), data)?;
        Ok(self.push(out, Atan2 { y, x }))
    }
}

/// `atan2` folded into `(-pi, pi]` (maps the signed-zero `-pi` case to `pi`).
pub(crate) fn wrapped_atan2(y: f64, x: f64) -> f64 {
    if y == 0.0 && x == 0.0 {
        return 0.0;
    }
    let a = y.atan2(x);
    if a <= -std::f64::consts::PI {
        std::f64::consts::PI
    } else {
        a
    }
}
