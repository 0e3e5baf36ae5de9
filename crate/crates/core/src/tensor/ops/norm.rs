use super::super::graph::{Backward, Graph, Var};
use super::super::Tensor;
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;
pub const INSTANCE_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, PartialEq)]
enum Affine {
    /// Scale/shift indexed by position inside the normalised group (layer norm).
    PerElement,
    /// Scale/shift indexed by channel, one group per (sample, channel) (instance norm).
    PerGroup { channels: usize },
}

struct Normalize {
    x: Var,
    gamma: Var,
    beta: Var,
    group: usize,
    eps: f64,
    affine: Affine,
}

fn moments(xs: &[f64], eps: f64) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, 1.0 / (var + eps).sqrt())
}

impl Normalize {
    fn coeff_index(&self, group_idx: usize, pos: usize) -> usize {
        match self.affine {
            Affine::PerElement => pos,
            Affine::PerGroup { channels } => group_idx % channels,
        }
    }
}

impl Backward for Normalize {
    fn name(&self) -> &'static str {
        match self.affine {
            Affine::PerElement => "layer_norm",
            Affine::PerGroup { .. } => "instance_norm",
        }
    }
    fn inputs(&self) -> Vec<Var> {
        vec![self.x, self.gamma, self.beta]
    }
    fn backward(&self, g: &Graph, _out: &Tensor, go: &[f64]) -> Vec<Option<Vec<f64>>> {
        let x = g.value(self.x).data();
        let gamma = g.value(self.gamma).data();
        let mut gx = vec![0.0; x.len()];
        let mut ggamma = vec![0.0; gamma.len()];
        let mut gbeta = vec![0.0; gamma.len()];
        let n = self.group as f64;
        let mut xhat = vec![0.0; self.group];
        let mut dxhat = vec![0.0; self.group];
        for (gi, (xs, gs)) in x.chunks(self.group).zip(go.chunks(self.group)).enumerate() {
            let (mean, rstd) = moments(xs, self.eps);
            let mut sum_d = 0.0;
            let mut sum_dx = 0.0;
            for j in 0..self.group {
                let c = self.coeff_index(gi, j);
                xhat[j] = (xs[j] - mean) * rstd;
                dxhat[j] = gs[j] * gamma[c];
                ggamma[c] += gs[j] * xhat[j];
                gbeta[c] += gs[j];
                sum_d += dxhat[j];
                sum_dx += dxhat[j] * xhat[j];
            }
            let base = gi * self.group;
            for j in 0..self.group {
                gx[base + j] = rstd * (dxhat[j] - sum_d / n - xhat[j] * sum_dx / n);
            }
        }
        vec![Some(gx), Some(ggamma), Some(gbeta)]
    }
}

impl Graph {
    fn normalize(&mut self, x: Var, gamma: Var, beta: Var, group: usize, eps: f64, affine: Affine) -> Result<Var> {
        let t = self.value(x);
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut y = vec![0.0; t.numel()];
        if group > 0 {
            for (gi, (xs, ys)) in t.data().chunks(group).zip(y.chunks_mut(group)).enumerate() {
                let (mean, rstd) = moments(xs, eps);
                for j in 0..group {
                    let c = match affine {
                        Affine::PerElement => j,
                        Affine::PerGroup { channels } => gi % channels,
                    };
                    ys[j] = (xs[j] - mean) * rstd * g[c] + b[c];
                }
            }
        }
        let out = Tensor::new(t.shape().to_vec(), y)?;
        Ok(self.push(
            out,
            Normalize {
                x,
                gamma,
                beta,
                group,
                eps,
                affine,
            },
        ))
    }

    /// Layer normalisation over the last axis with learnable scale and shift.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let d = *self
            .value(x)
            .shape()
            .last()
            .ok_or_else(|| Error::shape("layer_norm", "needs at least one axis"))?;
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            if self.shape(v) != [d] {
                return Err(Error::shape(
                    "layer_norm",
                    format!("{name} has shape {:?}, last axis D = {d}", self.shape(v)),
                ));
            }
        }
        self.normalize(x, gamma, beta, d, eps, Affine::PerElement)
    }

    /// Instance normalisation of `[N, C, ...]`: each (sample, channel) slice is
    /// normalised over its remaining axes, then scaled/shifted per channel.
    pub fn instance_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let shape = self.value(x).shape().to_vec();
        if shape.len() < 3 {
            return Err(Error::shape(
                "instance_norm",
                format!("expected [N, C, ...], got {shape:?}"),
            ));
        }
        let channels = shape[1];
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            if self.shape(v) != [channels] {
                return Err(Error::shape(
                    "instance_norm",
                    format!("{name} has shape {:?}, channel axis C = {channels}", self.shape(v)),
                ));
            }
        }
        let group = shape[2..].iter().product();
        self.normalize(x, gamma, beta, group, eps, Affine::PerGroup { channels })
    }
}
