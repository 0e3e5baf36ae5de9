use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Graph, ParamId, ParamStore, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MambaConfig {
    pub d_model: usize,
    pub expand: usize,
    pub d_state: usize,
    /// Rank of the dt bottleneck; `None` means `ceil(d_model / 16)`.
    pub dt_rank: Option<usize>,
    pub conv_width: usize,
}

impl MambaConfig {
    pub fn new(d_model: usize, expand: usize, d_state: usize) -> Self {
        Self {
            d_model,
            expand,
            d_state,
            dt_rank: None,
            conv_width: 4,
        }
    }

    pub fn d_inner(&self) -> usize {
        self.expand * self.d_model
    }

    pub fn rank(&self) -> usize {
        self.dt_rank.unwrap_or(self.d_model.div_ceil(16)).max(1)
    }

    /// Trainable scalars in one layer.
    pub fn param_count(&self) -> usize {
        let (k, di, n, r, w) = (self.d_model, self.d_inner(), self.d_state, self.rank(), self.conv_width);
        k * 2 * di + di * w + di + di * r + r * di + di + 2 * di * n + n * di + di + di * k
    }
}

/// Parameter handles of one selective-SSM layer.
#[derive(Clone, Debug, PartialEq)]
pub struct MambaParams {
    pub config: MambaConfig,
    pub in_proj: ParamId,
    pub conv_w: ParamId,
    pub conv_b: ParamId,
    pub dt_down: ParamId,
    pub dt_up: ParamId,
    pub dt_bias: ParamId,
    pub w_b: ParamId,
    pub w_c: ParamId,
    pub a_log: ParamId,
    pub d: ParamId,
    pub out_proj: ParamId,
}

/// `softplus^{-1}(y) = y + ln(1 - e^{-y})`.
fn inv_softplus(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

impl MambaParams {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, config: MambaConfig, rng: &mut R) -> Self {
        let (k, di, n, r, w) = (config.d_model, config.d_inner(), config.d_state, config.rank(), config.conv_width);
        let name = |s: &str| format!("{prefix}.{s}");
        let in_proj = store.add_fan_in(name("in_proj"), &[k, 2 * di], k, rng);
        let conv_w = store.add_fan_in(name("conv_w"), &[di, 1, w], w, rng);
        let conv_b = store.add_zeros(name("conv_b"), &[di]);
        let dt_down = store.add_fan_in(name("dt_down"), &[di, r], di, rng);
        let dt_up = store.add_fan_in(name("dt_up"), &[r, di], r, rng);
        let (lo, hi) = (1e-3f64.ln(), 1e-1f64.ln());
        let bias: Vec<f64> = (0..di).map(|_| inv_softplus(rng.random_range(lo..hi).exp())).collect();
        let dt_bias = store.add(name("dt_bias"), Tensor::from_vec(bias));
        let w_b = store.add_fan_in(name("w_b"), &[di, n], di, rng);
        let w_c = store.add_fan_in(name("w_c"), &[di, n], di, rng);
        let a_log: Vec<f64> = (0..n).flat_map(|j| std::iter::repeat(((j + 1) as f64).ln()).take(di)).collect();
        let a_log = store.add(name("a_log"), Tensor::new(vec![n, di], a_log).expect("a_log shape"));
        let d = store.add_full(name("d"), &[di], 1.0);
        let out_proj = store.add_fan_in(name("out_proj"), &[di, k], di, rng);
        Self {
            config,
            in_proj,
            conv_w,
            conv_b,
            dt_down,
            dt_up,
            dt_bias,
            w_b,
            w_c,
            a_log,
            d,
            out_proj,
        }
    }

    pub fn ids(&self) -> Vec<ParamId> {
        vec![
            self.in_proj,
            self.conv_w,
            self.conv_b,
            self.dt_down,
            self.dt_up,
            self.dt_bias,
            self.w_b,
            self.w_c,
            self.a_log,
            self.d,
            self.out_proj,
        ]
    }
}

/// One selective-SSM layer on `x: [S, L, K]` or `[L, K]`:
/// input projection to a stream and a gate, causal depthwise conv + SiLU on
/// the stream, input-dependent `dt`, `B`, `C`, the scan with a skip term,
/// SiLU gating and the output projection.
pub fn mamba_layer(g: &mut Graph, store: &ParamStore, p: &MambaParams, x: Var) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    let x3 = match shape.len() {
        2 => g.reshape(x, &[1, shape[0], shape[1]])?,
        3 => x,
        _ => return Err(Error::shape("mamba_layer", format!("x must be [L, K] or [S, L, K], got {shape:?}"))),
    };
    let cfg = p.config;
    if *shape.last().unwrap() != cfg.d_model {
        return Err(Error::shape(
            "mamba_layer",
            format!("channel dim is {}, layer expects K = {}", shape.last().unwrap(), cfg.d_model),
        ));
    }
    let di = cfg.d_inner();
    let mut w = |id| g.param(store, id);
    let (in_proj, conv_w, conv_b, dt_down, dt_up, dt_bias) =
        (w(p.in_proj), w(p.conv_w), w(p.conv_b), w(p.dt_down), w(p.dt_up), w(p.dt_bias));
    let (w_b, w_c, a_log, d, out_proj) = (w(p.w_b), w(p.w_c), w(p.a_log), w(p.d), w(p.out_proj));

    let xz = g.matmul(x3, in_proj)?;
    let stream = g.slice(xz, 2, 0, di)?;
    let gate = g.slice(xz, 2, di, 2 * di)?;
    let xc = g.conv1d(stream, conv_w, Some(conv_b), di, cfg.conv_width - 1, 0)?;
    let xc = g.silu(xc)?;

    let dt = g.matmul(xc, dt_down)?;
    let dt = g.matmul(dt, dt_up)?;
    let dt = g.add(dt, dt_bias)?;
    let dt = g.softplus(dt)?;
    let b = g.matmul(xc, w_b)?;
    let c = g.matmul(xc, w_c)?;
    let a = g.exp(a_log)?;
    let a = g.scale(a, -1.0)?;

    let y = g.selective_scan(xc, dt, b, c, a)?;
    let skip = g.mul(xc, d)?;
    let y = g.add(y, skip)?;
    let gate = g.silu(gate)?;
    let y = g.mul(y, gate)?;
    let out = g.matmul(y, out_proj)?;
    if shape.len() == 2 {
        g.reshape(out, &shape)
    } else {
        Ok(out)
    }
}
