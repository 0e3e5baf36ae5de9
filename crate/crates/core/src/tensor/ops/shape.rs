use super::super::graph::{Backward, Graph, Var};
use super::super::{norm_axis, strides, Tensor};
use super::elementwise::split_at_axis;
use crate::error::{Error, Result};

struct Reshape {
    x: Var,
}

impl Backward for Reshape {
    fn name(&self) -> &'static str {
        "reshape"
    }
    fn inputs(&self) -> Vec<Var> {
        vec![self.x]
    }
    fn backward(&self, _g: &Graph, _out: &Tensor, go: &[f64]) -> Vec<Option<Vec<f64>>> {
        vec![Some(go.to_vec())]
    }
}

/// Gather `src` (shape `shape`) through axis permutation `perm`.
fn permute_data(src: &[f64], shape: &[usize], perm: &[usize]) -> (Vec<usize>, Vec<f64>) {
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let s = strides(shape);
    let in_strides: Vec<usize> = perm.iter().map(|&p| s[p]).collect();
    let n = src.len();
    let mut out = vec![0.0; n];
    if n == 0 {
        return (out_shape, out);
    }
    let nd = out_shape.len();
    let mut idx = vec![0usize; nd];
    let mut off = 0usize;
    for o in out.iter_mut() {
        *o = src[off];
        for d in (0..nd).rev() {
            idx[d] += 1;
            off += in_strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            off -= in_strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    (out_shape, out)
}

fn inverse_perm(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

struct Permute {
    x: Var,
    perm: Vec<usize>,
}

impl Backward for Permute {
    fn name(&self) -> &'static str {
        "permute"
    }
    fn inputs(&self) -> Vec<Var> {
        vec![self.x]
    }
    fn backward(&self, _g: &Graph, out: &Tensor, go: &[f64]) -> Vec<Option<Vec<f64>>> {
        let (_, gx) = permute_data(go, out.shape(), &inverse_perm(&self.perm));
        vec![Some(gx)]
    }
}

fn flip_data(src: &[f64], shape: &[usize], axis: usize) -> Vec<f64> {
    let (outer, len, inner) = split_at_axis(shape, axis);
    let mut out = vec![0.0; src.len()];
    for o in 0..outer {
        for i in 0..len {
            let s = (o * len + i) * inner;
            let d = (o * len + (len - 1 - i)) * inner;
            out[d..d + inner].copy_from_slice(&src[s..s + inner]);
        }
    }
    out
}

struct Flip {
    x: Var,
    axis: usize,
}

impl Backward for Flip {
    fn name(&self) -> &'static str {
        "flip"
    }
    fn inputs(&self) -> Vec<Var> {
        vec![self.x]
    }
    fn backward(&self, _g: &Graph, out: &Tensor, go: &[f64]) -> Vec<Option<Vec<f64>>> {
        vec![Some(flip_data(go, out.shape(), self.axis))]
    }
}

struct Slice {
    x: Var,
    axis: usize,
    start: usize,
}

impl Backward for Slice {
    fn name(&self) -> &'static str {
        "slice"
    }
    fn inputs(&self) -> Vec<Var> {
        vec![self.x]
    }
    fn backward(&self, g: &Graph, out: &Tensor, go: &[f64]) -> Vec<Option<Vec<f64>>> {
        let tx = g.value(self.x);
        let (outer, len, inner) = split_at_axis(tx.shape(), self.axis);
        let n_out = out.shape()[self.axis];
        let mut gx = vec![0.0; tx.numel()];
        for o in 0..outer {
            let src = o * n_out * inner;
            let dst = (o * len + self.start) * inner;
            gx[dst..dst + n_out * inner].copy_from_slice(&go[src..src + n_out * inner]);
        }
        vec![Some(gx)]
    }
}

struct Concat {
    xs: Vec<Var>,
    axis: usize,
}

impl Backward for Concat {
    fn name(&self) -> &'static str {
        "concat"
    }
    fn inputs(&self) -> Vec<Var> {
        self.xs.clone()
    }
    fn backward(&self, g: &Graph, out: &Tensor, go: &[f64]) -> Vec<Option<Vec<f64>>> {
        let (outer, total, inner) = split_at_axis(out.shape(), self.axis);
        let mut offset = 0;
        self.xs
            .iter()
            .map(|&v| {
                let len = g.shape(v)[self.axis];
                let grad = g.requires_grad(v).then(|| {
                    let mut gx = Vec::with_capacity(outer * len * inner);
                    for o in 0..outer {
                        let s = (o * total + offset) * inner;
                        gx.extend_from_slice(&go[s..s + len * inner]);
                    }
                    gx
                });
                offset += len;
                grad
            })
            .collect()
    }
}

impl Graph {
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x);
        let n: usize = shape.iter().product();
        if n != t.numel() {
            return Err(Error::shape(
                "reshape",
                format!("{:?} ({} elements) cannot become {shape:?} ({n})", t.shape(), t.numel()),
            ));
        }
        let out = Tensor::new(shape.to_vec(), t.data().to_vec())?;
        Ok(self.push(out, Reshape { x }))
    }

    /// Reorder axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let t = self.value(x);
        let mut seen = vec![false; t.ndim()];
        if perm.len() != t.ndim() || perm.iter().any(|&p| p >= t.ndim() || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::invalid(
                "permute",
                format!("{perm:?} is not a permutation of {} axes", t.ndim()),
            ));
        }
        let (shape, data) = permute_data(t.data(), t.shape(), perm);
        let out = Tensor::new(shape, data)?;
        Ok(self.push(out, Permute { x, perm: perm.to_vec() }))
    }

    /// Swap the last two axes.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let nd = self.value(x).ndim();
        if nd < 2 {
            return Err(Error::shape("transpose", "need at least 2 axes"));
        }
        let mut perm: Vec<usize> = (0..nd).collect();
        perm.swap(nd - 2, nd - 1);
        self.permute(x, &perm)
    }

    pub fn flip(&mut self, x: Var, axis: isize) -> Result<Var> {
        let t = self.value(x);
        let axis = norm_axis("flip", axis, t.ndim())?;
        let data = flip_data(t.data(), t.shape(), axis);
        let out = Tensor::new(t.shape().to_vec(), data)?;
        Ok(self.push(out, Flip { x, axis }))
    }

    /// Elements `start..end` along `axis`.
    pub fn slice(&mut self, x: Var, axis: isize, start: usize, end: usize) -> Result<Var> {
        let t = self.value(x);
        let axis = norm_axis("slice", axis, t.ndim())?;
        let (outer, len, inner) = split_at_axis(t.shape(), axis);
        if start > end || end > len {
            return Err(Error::shape(
                "slice",
                format!("range {start}..{end} exceeds axis {axis} of extent {len}"),
            ));
        }
        let n = end - start;
        let mut data = Vec::with_capacity(outer * n * inner);
        for o in 0..outer {
            let s = (o * len + start) * inner;
            data.extend_from_slice(&t.data()[s..s + n * inner]);
        }
        let mut shape = t.shape().to_vec();
        shape[axis] = n;
        let out = Tensor::new(shape, data)?;
        Ok(self.push(out, Slice { x, axis, start }))
    }

    pub fn concat(&mut self, xs: &[Var], axis: isize) -> Result<Var> {
        let first = xs
            .first()
            .ok_or_else(|| Error::invalid("concat", "no inputs"))?;
        let base = self.value(*first).shape().to_vec();
        let axis = norm_axis("concat", axis, base.len())?;
        let mut total = 0;
        for &v in xs {
            let s = self.shape(v);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::shape(
                    "concat",
                    format!("{s:?} does not match {base:?} off axis {axis}"),
                ));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_at_axis(&base, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in xs {
                let t = self.value(v);
                let len = t.shape()[axis];
                let s = o * len * inner;
                data.extend_from_slice(&t.data()[s..s + len * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let out = Tensor::new(shape, data)?;
        Ok(self.push(out, Concat { xs: xs.to_vec(), axis }))
    }
}
