use super::super::gemm::{gemm, MatRef};
use super::super::graph::{Backward, Graph, Var};
use super::super::Tensor;
use crate::error::{Error, Result};
use crate::parallel;

/// Batched `[..., m, k] @ [k, n]` or `[..., m, k] @ [..., k, n]`.
struct MatMul {
    a: Var,
    b: Var,
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
    b_batched: bool,
}

fn plan(a: &[usize], b: &[usize]) -> Result<(usize, usize, usize, usize, bool, Vec<usize>)> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::shape(
            "matmul",
            format!("operands need at least 2 axes, got {a:?} and {b:?}"),
        ));
    }
    let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
    let (kb, n) = (b[b.len() - 2], b[b.len() - 1]);
    if k != kb {
        return Err(Error::shape(
            "matmul",
            format!("inner dimension k: left has {k} columns, right has {kb} rows"),
        ));
    }
    let batch_a = &a[..a.len() - 2];
    let b_batched = b.len() > 2;
    if b_batched && b[..b.len() - 2] != *batch_a {
        return Err(Error::shape(
            "matmul",
            format!("batch dimensions differ: {batch_a:?} vs {:?}", &b[..b.len() - 2]),
        ));
    }
    let batch: usize = batch_a.iter().product();
    let mut out = batch_a.to_vec();
    out.extend([m, n]);
    Ok((batch, m, k, n, b_batched, out))
}

impl Backward for MatMul {
    fn name(&self) -> &'static str {
        "matmul"
    }

    fn inputs(&self) -> Vec<Var> {
        vec![self.a, self.b]
    }

    fn backward(&self, g: &Graph, _out: &Tensor, go: &[f64]) -> Vec<Option<Vec<f64>>> {
        let (a, b) = (g.value(self.a).data(), g.value(self.b).data());
        let (m, k, n) = (self.m, self.k, self.n);
        let ga = g.requires_grad(self.a).then(|| {
            let mut ga = vec![0.0; a.len()];
            parallel::for_each_chunk_mut(&mut ga, m * k, |bi, chunk| {
                let bo = if self.b_batched { bi * k * n } else { 0 };
                gemm(
                    1.0,
                    MatRef::row_major(&go[bi * m * n..(bi + 1) * m * n], m, n),
                    MatRef::row_major(&b[bo..bo + k * n], k, n).t(),
                    0.0,
                    chunk,
                );
            });
            ga
        });
        let gb = g.requires_grad(self.b).then(|| {
            if self.b_batched {
                let mut gb = vec![0.0; b.len()];
                parallel::for_each_chunk_mut(&mut gb, k * n, |bi, chunk| {
                    gemm(
                        1.0,
                        MatRef::row_major(&a[bi * m * k..(bi + 1) * m * k], m, k).t(),
                        MatRef::row_major(&go[bi * m * n..(bi + 1) * m * n], m, n),
                        0.0,
                        chunk,
                    );
                });
                gb
            } else {
                // Shared right operand: fold the batch into the row axis.
                let rows = self.batch * m;
                let mut gb = vec![0.0; k * n];
                gemm(
                    1.0,
                    MatRef::row_major(a, rows, k).t(),
                    MatRef::row_major(go, rows, n),
                    0.0,
                    &mut gb,
                );
                gb
            }
        });
        vec![ga, gb]
    }
}

impl Graph {
    /// Matrix product over the last two axes. The right operand is either a
    /// plain matrix shared across the batch or carries the same batch axes.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (batch, m, k, n, b_batched, out_shape) = plan(ta.shape(), tb.shape())?;
        let (ad, bd) = (ta.data(), tb.data());
        let mut out = vec![0.0; batch * m * n];
        if b_batched {
            parallel::for_each_chunk_mut(&mut out, m * n, |bi, chunk| {
                gemm(
                    1.0,
                    MatRef::row_major(&ad[bi * m * k..(bi + 1) * m * k], m, k),
                    MatRef::row_major(&bd[bi * k * n..(bi + 1) * k * n], k, n),
                    0.0,
                    chunk,
                );
            });
        } else if batch * m > 0 {
            gemm(
                1.0,
                MatRef::row_major(ad, batch * m, k),
                MatRef::row_major(bd, k, n),
                0.0,
                &mut out,
            );
        }
        let out = Tensor::new(out_shape, out)?;
        Ok(self.push(
            out,
            MatMul {
                a,
                b,
                batch,
                m,
                k,
                n,
                b_batched,
            },
        ))
    }
}
