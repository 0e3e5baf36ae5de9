use rand::Rng;

use super::mamba::{mamba_layer, MambaConfig, MambaParams};
use crate::error::Result;
use crate::tensor::{Graph, ParamId, ParamStore, Var};

/// Forward and backward selective-SSM layers plus the width-1 merge
/// convolution `2K -> K`.
#[derive(Clone, Debug, PartialEq)]
pub struct BiMambaParams {
    pub fwd: MambaParams,
    pub bwd: MambaParams,
    pub merge_w: ParamId,
    pub merge_b: ParamId,
}

impl BiMambaParams {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, config: MambaConfig, rng: &mut R) -> Self {
        let k = config.d_model;
        let fwd = MambaParams::new(store, &format!("{prefix}.fwd"), config, rng);
        let bwd = MambaParams::new(store, &format!("{prefix}.bwd"), config, rng);
        let merge_w = store.add_fan_in(format!("{prefix}.merge_w"), &[k, 2 * k, 1], 2 * k, rng);
        let merge_b = store.add_zeros(format!("{prefix}.merge_b"), &[k]);
        Self {
            fwd,
            bwd,
            merge_w,
            merge_b,
        }
    }

    pub fn param_count(config: &MambaConfig) -> usize {
        let k = config.d_model;
        2 * config.param_count() + 2 * k * k + k
    }

    /// The same layers with the two directions swapped.
    pub fn swapped(&self) -> Self {
        Self {
            fwd: self.bwd.clone(),
            bwd: self.fwd.clone(),
            ..self.clone()
        }
    }
}

/// `Conv1d_{2K->K}(concat(Mamba_f(x), flip(Mamba_b(flip(x)))))` on
/// `x: [S, L, K]`; the concatenation is along channels.
pub fn bidirectional_mamba(g: &mut Graph, store: &ParamStore, p: &BiMambaParams, x: Var) -> Result<Var> {
    let fwd = mamba_layer(g, store, &p.fwd, x)?;
    let xr = g.flip(x, 1)?;
    let bwd = mamba_layer(g, store, &p.bwd, xr)?;
    let bwd = g.flip(bwd, 1)?;
    let cat = g.concat(&[fwd, bwd], 2)?;
    let (w, b) = (g.param(store, p.merge_w), g.param(store, p.merge_b));
    g.conv1d(cat, w, Some(b), 1, 0, 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn param_count_matches_store() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = MambaConfig::new(6, 2, 3);
        BiMambaParams::new(&mut store, "bi", cfg, &mut rng);
        assert_eq!(store.scalar_count(), BiMambaParams::param_count(&cfg));
    }

    #[test]
    fn shared_directions_make_constant_input_flip_symmetric() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = BiMambaParams::new(&mut store, "bi", MambaConfig::new(4, 2, 3), &mut rng);
        p.bwd = p.fwd.clone();
        // merge weights symmetric across the two halves
        let w = store.get(p.merge_w).clone();
        let wd = store.get_mut(p.merge_w).data_mut();
        for o in 0..4 {
            for c in 0..4 {
                wd[o * 8 + 4 + c] = w.data()[o * 8 + c];
            }
        }
        let mut g = Graph::new();
        let x = g.constant(Tensor::full(&[1, 9, 4], 0.3));
        let y = bidirectional_mamba(&mut g, &store, &p, x).unwrap();
        let yf = g.flip(y, 1).unwrap();
        assert!(g.value(y).max_abs_diff(g.value(yf)) < 1e-10);
    }
}
