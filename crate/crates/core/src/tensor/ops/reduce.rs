use super::super::graph::{Backward, Graph, Var};
use super::super::{norm_axis, Tensor};
use crate::error::{Error, Result};

/// Sum over a set of axes (removed from the output), optionally scaled.
struct Reduce {
    x: Var,
    keep: Vec<bool>,
    scale: f64,
}

/// For each input element, the flat index of the output it reduces into.
fn reduce_index(shape: &[usize], reduced: &[bool]) -> Vec<usize> {
    let n: usize = shape.iter().product();
    let out_dims: Vec<usize> = shape
        .iter()
        .zip(reduced)
        .map(|(&d, &r)| if r { 1 } else { d })
        .collect();
    let out_strides = super::super::strides(&out_dims);
    let nd = shape.len();
    let mut idx = vec![0usize; nd];
    let mut off = 0usize;
    let mut map = Vec::with_capacity(n);
    for _ in 0..n {
        map.push(off);
        for d in (0..nd).rev() {
            idx[d] += 1;
            if !reduced[d] {
                off += out_strides[d];
            }
            if idx[d] < shape[d] {
                break;
            }
            if !reduced[d] {
                off -= out_strides[d] * shape[d];
            }
            idx[d] = 0;
        }
    }
    map
}

impl Backward for Reduce {
    fn name(&self) -> &'static str {
        "sum"
    }
    fn inputs(&self) -> Vec<Var> {
        vec![self.x]
    }
    fn backward(&self, g: &Graph, _out: &Tensor, go: &[f64]) -> Vec<Option<Vec<f64>>> {
        let t = g.value(self.x);
        let reduced: Vec<bool> = self.keep.iter().map(|k| !k).collect();
        let map = reduce_index(t.shape(), &reduced);
        vec![Some(map.iter().map(|&o| go[o] * self.scale).collect())]
    }
}

impl Graph {
    fn reduce(&mut self, x: Var, axes: &[isize], mean: bool) -> Result<Var> {
        let t = self.value(x);
        let nd = t.ndim();
        let mut reduced = vec![false; nd];
        for &a in axes {
            reduced[norm_axis("sum", a, nd)?] = true;
        }
        let count: usize = t
            .shape()
            .iter()
            .zip(&reduced)
            .filter(|(_, &r)| r)
            .map(|(&d, _)| d)
            .product();
        if mean && count == 0 {
            return Err(Error::invalid("mean", "reducing over an empty axis"));
        }
        let scale = if mean { 1.0 / count as f64 } else { 1.0 };
        let map = reduce_index(t.shape(), &reduced);
        let out_shape: Vec<usize> = t
            .shape()
            .iter()
            .zip(&reduced)
            .filter(|(_, &r)| !r)
            .map(|(&d, _)| d)
            .collect();
        let n_out: usize = out_shape.iter().product();
        let mut data = vec![0.0; n_out];
        for (&o, &v) in map.iter().zip(t.data()) {
            data[o] += v;
        }
        if mean {
            data.iter_mut().for_each(|v| *v *= scale);
        }
        let out = Tensor::new(out_shape, data)?;
        let keep = reduced.iter().map(|r| !r).collect();
        Ok(self.push(out, Reduce { x, keep, scale }))
    }

    /// Sum over `axes`, which are removed from the result.
    pub fn sum(&mut self, x: Var, axes: &[isize]) -> Result<Var> {
        self.reduce(x, axes, false)
    }

    pub fn mean(&mut self, x: Var, axes: &[isize]) -> Result<Var> {
        self.reduce(x, axes, true)
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let axes: Vec<isize> = (0..self.value(x).ndim() as isize).collect();
        self.reduce(x, &axes, false)
    }

    pub fn mean_all(&mut self, x: Var) -> Result<Var> {
        let axes: Vec<isize> = (0..self.value(x).ndim() as isize).collect();
        self.reduce(x, &axes, true)
    }
}

struct Softmax {
    x: Var,
}

impl Backward for Softmax {
    fn name(&self) -> &'static str {
        "softmax"
    }
    fn inputs(&self) -> Vec<Var> {
        vec![self.x]
    }
    fn backward(&self, _g: &Graph, out: &Tensor, go: &[f64]) -> Vec<Option<Vec<f64>>> {
        let d = *out.shape().last().unwrap_or(&1);
        let y = out.data();
        let mut gx = vec![0.0; y.len()];
        if d > 0 {
            for ((yr, gr), gxr) in y.chunks(d).zip(go.chunks(d)).zip(gx.chunks_mut(d)) {
                let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                for j in 0..d {
                    gxr[j] = yr[j] * (gr[j] - dot);
                }
            }
        }
        vec![Some(gx)]
    }
}

/// In-place numerically stable softmax of one row.
pub(crate) fn softmax_row(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

impl Graph {
    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.ndim() == 0 {
            return Err(Error::shape("softmax", "needs at least one axis"));
        }
        let d = *t.shape().last().unwrap();
        let mut data = t.data().to_vec();
        if d > 0 {
            data.chunks_mut(d).for_each(softmax_row);
        }
        let out = Tensor::new(t.shape().to_vec(), data)?;
        Ok(self.push(out, Softmax { x }))
    }
}
