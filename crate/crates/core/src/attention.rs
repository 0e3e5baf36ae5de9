//! Scaled dot-product and multi-head self-attention.
//!
//! There is no positional encoding and no masking: attention is permutation
//! equivariant along the sequence axis.

use rand::Rng;

use crate::error::{Error, Result};
use crate::parallel;
use crate::tensor::ops::softmax_row;
use crate::tensor::{gemm, Graph, MatRef, ParamId, ParamStore, Tensor, Var};

/// Fused projections of one multi-head attention module: `w_q`, `w_k`,
/// `w_v` are `[d_model, d_model]` (heads side by side), `w_o` is
/// `[d_model, d_model]`. No biases.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MhaWeights {
    pub d_model: usize,
    pub heads: usize,
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    pub w_o: ParamId,
}

impl MhaWeights {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        d_model: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if heads == 0 || d_model % heads != 0 {
            return Err(Error::invalid(
                "multi_head_attention",
                format!("d_model {d_model} is not divisible by {heads} heads"),
            ));
        }
        let mut proj = |s: &str| store.add_fan_in(format!("{prefix}.{s}"), &[d_model, d_model], d_model, rng);
        Ok(Self {
            d_model,
            heads,
            w_q: proj("w_q"),
            w_k: proj("w_k"),
            w_v: proj("w_v"),
            w_o: proj("w_o"),
        })
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn param_count(d_model: usize) -> usize {
        4 * d_model * d_model
    }

    pub fn ids(&self) -> [ParamId; 4] {
        [self.w_q, self.w_k, self.w_v, self.w_o]
    }
}

/// Two call sites over one set of projection weights.
pub fn make_shared_pair<R: Rng + ?Sized>(
    store: &mut ParamStore,
    prefix: &str,
    d_model: usize,
    heads: usize,
    rng: &mut R,
) -> Result<(MhaWeights, MhaWeights)> {
    let w = MhaWeights::new(store, prefix, d_model, heads, rng)?;
    Ok((w.clone(), w))
}

/// `softmax(q k^T / sqrt(d_k)) v` over the last two axes; leading axes are
/// batch axes shared by all three operands.
pub fn scaled_dot_product_attention(g: &mut Graph, q: Var, k: Var, v: Var) -> Result<Var> {
    let dk = *g
        .shape(q)
        .last()
        .ok_or_else(|| Error::shape("attention", "query needs at least two axes"))?;
    if dk == 0 {
        return Err(Error::invalid("attention", "key dimension d_k is 0"));
    }
    let kt = g.transpose(k)?;
    let s = g.matmul(q, kt)?;
    let s = g.scale(s, 1.0 / (dk as f64).sqrt())?;
    let p = g.softmax(s)?;
    g.matmul(p, v)
}

/// Self-attention of `x: [S, L, d_model]` or `[L, d_model]`.
pub fn multi_head_attention(g: &mut Graph, store: &ParamStore, w: &MhaWeights, x: Var) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    let (s, l) = match *shape.as_slice() {
        [l, d] if d == w.d_model => (1, l),
        [s, l, d] if d == w.d_model => (s, l),
        _ => {
            return Err(Error::shape(
                "multi_head_attention",
                format!("x must be [L, {0}] or [S, L, {0}], got {shape:?}", w.d_model),
            ))
        }
    };
    let (h, dh) = (w.heads, w.d_head());
    let split = |g: &mut Graph, id: ParamId| -> Result<Var> {
        let wv = g.param(store, id);
        let p = g.matmul(x, wv)?;
        let p = g.reshape(p, &[s, l, h, dh])?;
        g.permute(p, &[0, 2, 1, 3])
    };
    let q = split(g, w.w_q)?;
    let k = split(g, w.w_k)?;
    let v = split(g, w.w_v)?;
    let o = scaled_dot_product_attention(g, q, k, v)?;
    let o = g.permute(o, &[0, 2, 1, 3])?;
    let o = g.reshape(o, &shape)?;
    let wo = g.param(store, w.w_o);
    g.matmul(o, wo)
}

/// Rows `r0..r0 + rows`, columns `c0..c0 + cols` of a row-major matrix
/// with `stride` columns.
fn head_view(m: &[f64], r0: usize, rows: usize, stride: usize, c0: usize, cols: usize) -> MatRef<'_> {
    MatRef {
        data: &m[r0 * stride + c0..],
        rows,
        cols,
        rs: stride as isize,
        cs: 1,
    }
}

/// Forward-only multi-head self-attention for one sequence `x: [L, d_model]`
/// that never materialises the full `L x L` score matrix: queries are
/// processed in blocks of `block` rows. Used for long-sequence timing.
pub fn multi_head_attention_blocked(x: &Tensor, w: &[&Tensor; 4], heads: usize, block: usize) -> Result<Tensor> {
    let [l, d] = *x.shape() else {
        return Err(Error::shape("attention", format!("x must be [L, d_model], got {:?}", x.shape())));
    };
    if heads == 0 || d % heads != 0 {
        return Err(Error::invalid("attention", format!("d_model {d} is not divisible by {heads} heads")));
    }
    for t in w {
        if t.shape() != [d, d] {
            return Err(Error::shape("attention", format!("projection must be [{d}, {d}], got {:?}", t.shape())));
        }
    }
    let dh = d / heads;
    let block = block.max(1);
    let xm = MatRef::row_major(x.data(), l, d);
    let project = |wt: &Tensor| {
        let mut out = vec![0.0; l * d];
        gemm(1.0, xm, MatRef::row_major(wt.data(), d, d), 0.0, &mut out);
        out
    };
    let (q, k, v) = (project(w[0]), project(w[1]), project(w[2]));
    let scale = 1.0 / (dh as f64).sqrt();
    let n_blocks = l.div_ceil(block);
    // each block writes its own rows of the concatenated head outputs
    let blocks = parallel::map_indexed(n_blocks, |bi| {
        let r0 = bi * block;
        let rows = block.min(l - r0);
        let mut scores = vec![0.0; rows * l];
        let mut out = vec![0.0; rows * d];
        for hh in 0..heads {
            let qb = head_view(&q, r0, rows, d, hh * dh, dh);
            let kb = head_view(&k, 0, l, d, hh * dh, dh);
            let vb = head_view(&v, 0, l, d, hh * dh, dh);
            gemm(scale, qb, kb.t(), 0.0, &mut scores);
            scores.chunks_mut(l).for_each(softmax_row);
            let mut oh = vec![0.0; rows * dh];
            gemm(1.0, MatRef::row_major(&scores, rows, l), vb, 0.0, &mut oh);
            for r in 0..rows {
                out[r * d + hh * dh..r * d + (hh + 1) * dh].copy_from_slice(&oh[r * dh..(r + 1) * dh]);
            }
        }
        out
    });
    let concat: Vec<f64> = blocks.into_iter().flatten().collect();
    let mut y = vec![0.0; l * d];
    gemm(1.0, MatRef::row_major(&concat, l, d), MatRef::row_major(w[3].data(), d, d), 0.0, &mut y);
    Tensor::new(vec![l, d], y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rejects_indivisible_heads() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(MhaWeights::new(&mut store, "a", 6, 4, &mut rng).is_err());
    }

    #[test]
    fn blocked_matches_graph() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = MhaWeights::new(&mut store, "a", 8, 2, &mut rng).unwrap();
        let x = Tensor::uniform(&[13, 8], -1.0, 1.0, &mut rng);
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let y = multi_head_attention(&mut g, &store, &w, xv).unwrap();
        let ws = w.ids().map(|id| store.get(id));
        for block in [1, 4, 13, 64] {
            let yb = multi_head_attention_blocked(&x, &ws, 2, block).unwrap();
            assert!(yb.max_abs_diff(g.value(y)) < 1e-12);
        }
    }

    #[test]
    fn single_step_returns_values() {
        let mut g = Graph::new();
        let q = g.constant(Tensor::new(vec![1, 2], vec![0.3, -1.0]).unwrap());
        let k = g.constant(Tensor::new(vec![1, 2], vec![2.0, 0.5]).unwrap());
        let v = g.constant(Tensor::new(vec![1, 3], vec![1.0, 2.0, 3.0]).unwrap());
        let o = scaled_dot_product_attention(&mut g, q, k, v).unwrap();
        assert_eq!(g.value(o).data(), &[1.0, 2.0, 3.0]);
    }
}
