//! The dual-path block: sequence modelling along time, then along frequency.

use rand::Rng;

use super::config::{ModelConfig, Variant};
use crate::attention::{make_shared_pair, multi_head_attention, MhaWeights};
use crate::error::{Error, Result};
use crate::ssm::{bidirectional_mamba, BiMambaParams};
use crate::tensor::{Graph, ParamId, ParamStore, Var, LAYER_NORM_EPS};

#[derive(Clone, Debug, PartialEq)]
pub struct LayerNormParams {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNormParams {
    fn new(store: &mut ParamStore, name: &str, k: usize) -> Self {
        Self {
            gamma: store.add_full(format!("{name}.gamma"), &[k], 1.0),
            beta: store.add_zeros(format!("{name}.beta"), &[k]),
        }
    }

    fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let (gm, bt) = (g.param(store, self.gamma), g.param(store, self.beta));
        g.layer_norm(x, gm, bt, LAYER_NORM_EPS)
    }
}

/// Attention sublayer of one path: pre-norm plus multi-head attention.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionSite {
    pub norm: LayerNormParams,
    pub mha: MhaWeights,
}

impl AttentionSite {
    /// `LN` then `MHA`, without the residual.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let y = self.norm.forward(g, store, x)?;
        multi_head_attention(g, store, &self.mha, y)
    }
}

/// One path (time or frequency) of a block.
#[derive(Clone, Debug, PartialEq)]
pub struct PathParams {
    pub attention: Option<AttentionSite>,
    pub mamba: BiMambaParams,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockParams {
    pub variant: Variant,
    pub time: PathParams,
    pub freq: PathParams,
}

impl BlockParams {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        let k = cfg.channels;
        let (t_att, f_att) = match cfg.variant {
            Variant::NoAttention => (None, None),
            v => {
                let (tw, fw) = if v.shares_attention() {
                    make_shared_pair(store, &format!("{name}.mha"), k, cfg.heads, rng)?
                } else {
                    let tw = MhaWeights::new(store, &format!("{name}.t_mha"), k, cfg.heads, rng)?;
                    (tw.clone(), copy_mha(store, &tw, &format!("{name}.f_mha")))
                };
                let t = AttentionSite {
                    norm: LayerNormParams::new(store, &format!("{name}.t_norm"), k),
                    mha: tw,
                };
                let f = AttentionSite {
                    norm: LayerNormParams::new(store, &format!("{name}.f_norm"), k),
                    mha: fw,
                };
                (Some(t), Some(f))
            }
        };
        let t_mamba = BiMambaParams::new(store, &format!("{name}.t_mamba"), cfg.mamba(), rng);
        let f_mamba = BiMambaParams::new(store, &format!("{name}.f_mamba"), cfg.mamba(), rng);
        let block = Self {
            variant: cfg.variant,
            time: PathParams {
                attention: t_att,
                mamba: t_mamba,
            },
            freq: PathParams {
                attention: f_att,
                mamba: f_mamba,
            },
        };
        if cfg.identity_init {
            block.zero_outputs(store);
        }
        Ok(block)
    }

    fn zero_outputs(&self, store: &mut ParamStore) {
        for path in [&self.time, &self.freq] {
            if let Some(a) = &path.attention {
                store.get_mut(a.mha.w_o).data_mut().fill(0.0);
            }
            for m in [&path.mamba.fwd, &path.mamba.bwd] {
                store.get_mut(m.out_proj).data_mut().fill(0.0);
            }
        }
    }

    pub fn param_count(cfg: &ModelConfig) -> usize {
        let k = cfg.channels;
        let mamba = 2 * BiMambaParams::param_count(&cfg.mamba());
        let attention = match cfg.variant {
            Variant::NoAttention => 0,
            v if v.shares_attention() => MhaWeights::param_count(k) + 4 * k,
            _ => 2 * MhaWeights::param_count(k) + 4 * k,
        };
        mamba + attention
    }

    /// `x: [M, K, T, F'] -> [M, K, T, F']`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let s = g.shape(x).to_vec();
        let [m, k, t, f] = *s.as_slice() else {
            return Err(Error::shape("block", format!("expected [M, K, T, F'], got {s:?}")));
        };
        let xt = g.permute(x, &[0, 3, 2, 1])?;
        let xt = g.reshape(xt, &[m * f, t, k])?;
        let xt = self.path(g, store, &self.time, xt)?;
        let xf = g.reshape(xt, &[m, f, t, k])?;
        let xf = g.permute(xf, &[0, 2, 1, 3])?;
        let xf = g.reshape(xf, &[m * t, f, k])?;
        let xf = self.path(g, store, &self.freq, xf)?;
        let y = g.reshape(xf, &[m, t, f, k])?;
        g.permute(y, &[0, 3, 1, 2])
    }

    /// Residual attention and Mamba sublayers on `[S, L, K]`, in the order
    /// set by the variant.
    pub fn path(&self, g: &mut Graph, store: &ParamStore, p: &PathParams, x: Var) -> Result<Var> {
        let attend = |g: &mut Graph, x: Var| -> Result<Var> {
            match &p.attention {
                Some(site) => {
                    let a = site.forward(g, store, x)?;
                    g.add(x, a)
                }
                None => Ok(x),
            }
        };
        let mamba = |g: &mut Graph, x: Var| -> Result<Var> {
            let y = bidirectional_mamba(g, store, &p.mamba, x)?;
            g.add(x, y)
        };
        if self.variant == Variant::AttentionAfter {
            let x1 = mamba(g, x)?;
            attend(g, x1)
        } else {
            let x1 = attend(g, x)?;
            mamba(g, x1)
        }
    }
}

/// Fresh parameters holding copies of `w`'s current values.
fn copy_mha(store: &mut ParamStore, w: &MhaWeights, prefix: &str) -> MhaWeights {
    let mut copy = |id: ParamId, s: &str| {
        let v = store.get(id).clone();
        store.add(format!("{prefix}.{s}"), v)
    };
    MhaWeights {
        d_model: w.d_model,
        heads: w.heads,
        w_q: copy(w.w_q, "w_q"),
        w_k: copy(w.w_k, "w_k"),
        w_v: copy(w.w_v, "w_v"),
        w_o: copy(w.w_o, "w_o"),
    }
}
