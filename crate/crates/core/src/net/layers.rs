use rand::Rng;

use crate::error::Result;
use crate::tensor::{Conv2dGeometry, Graph, ParamId, ParamStore, Var, INSTANCE_NORM_EPS};

/// A 2-D convolution or transposed convolution with bias.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2dLayer {
    pub w: ParamId,
    pub b: ParamId,
    pub geo: Conv2dGeometry,
    pub transposed: bool,
}

impl Conv2dLayer {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: (usize, usize),
        geo: Conv2dGeometry,
        rng: &mut R,
    ) -> Self {
        let w = store.add_fan_in(format!("{name}.w"), &[cout, cin, kernel.0, kernel.1], cin * kernel.0 * kernel.1, rng);
        let b = store.add_zeros(format!("{name}.b"), &[cout]);
        Self {
            w,
            b,
            geo,
            transposed: false,
        }
    }

    pub fn transposed<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: (usize, usize),
        geo: Conv2dGeometry,
        rng: &mut R,
    ) -> Self {
        let w = store.add_fan_in(format!("{name}.w"), &[cin, cout, kernel.0, kernel.1], cin * kernel.0 * kernel.1, rng);
        let b = store.add_zeros(format!("{name}.b"), &[cout]);
        Self {
            w,
            b,
            geo,
            transposed: true,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let (w, b) = (g.param(store, self.w), g.param(store, self.b));
        if self.transposed {
            g.conv_transpose2d(x, w, Some(b), self.geo)
        } else {
            g.conv2d(x, w, Some(b), self.geo)
        }
    }
}

/// Instance norm over each channel's `T x F` plane followed by a per-channel PReLU.
#[derive(Clone, Debug, PartialEq)]
pub struct NormAct {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub slope: ParamId,
}

impl NormAct {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        Self {
            gamma: store.add_full(format!("{name}.norm.gamma"), &[channels], 1.0),
            beta: store.add_zeros(format!("{name}.norm.beta"), &[channels]),
            slope: store.add_full(format!("{name}.prelu"), &[channels], 0.25),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let (gm, bt, sl) = (g.param(store, self.gamma), g.param(store, self.beta), g.param(store, self.slope));
        let y = g.instance_norm(x, gm, bt, INSTANCE_NORM_EPS)?;
        g.prelu(y, sl, 1)
    }
}

/// Convolution, instance norm, PReLU.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvBlock {
    pub conv: Conv2dLayer,
    pub act: NormAct,
}

impl ConvBlock {
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let y = self.conv.forward(g, store, x)?;
        self.act.forward(g, store, y)
    }
}

/// Densely connected 3x3 convolutions with time dilations `1, 2, 4, ...`;
/// layer `i` sees the concatenation of the block input and all previous
/// layer outputs (`K (i + 1)` channels) and emits `K` channels.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseBlock {
    pub layers: Vec<ConvBlock>,
}

impl DenseBlock {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, channels: usize, depth: usize, rng: &mut R) -> Self {
        let layers = (0..depth)
            .map(|i| {
                let d = 1 << i;
                let geo = Conv2dGeometry::default().with_dilation(d, 1).with_padding(d, 1);
                let lname = format!("{name}.{i}");
                ConvBlock {
                    conv: Conv2dLayer::new(store, &lname, channels * (i + 1), channels, (3, 3), geo, rng),
                    act: NormAct::new(store, &lname, channels),
                }
            })
            .collect();
        Self { layers }
    }

    pub fn param_count(channels: usize, depth: usize) -> usize {
        (0..depth).map(|i| channels * channels * (i + 1) * 9 + channels + 3 * channels).sum()
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let mut skip = x;
        let mut y = x;
        for layer in &self.layers {
            y = layer.forward(g, store, skip)?;
            skip = g.concat(&[y, skip], 1)?;
        }
        Ok(y)
    }
}
