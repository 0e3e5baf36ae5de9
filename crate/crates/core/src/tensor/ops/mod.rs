//! The primitive set. Every primitive is a method on [`Graph`]; the same set
//! is reachable by name through [`Graph::apply`].

mod conv;
mod elementwise;
mod matmul;
mod norm;
mod reduce;
mod shape;
mod signal;

use std::collections::BTreeMap;

pub use conv::Conv2dGeometry;
pub use norm::{INSTANCE_NORM_EPS, LAYER_NORM_EPS};

pub(crate) use elementwise::wrapped_atan2;
pub(crate) use reduce::softmax_row;
pub(crate) use signal::reflect_index;

use super::graph::{Graph, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum AttrValue {
    Int(i64),
    Ints(Vec<i64>),
    Float(f64),
}

/// Named attributes of a primitive application.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Attrs(BTreeMap<String, AttrValue>);

impl Attrs {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, key: &str, v: AttrValue) -> Self {
        self.0.insert(key.to_string(), v);
        self
    }

    pub fn int(self, key: &str, v: i64) -> Self {
        self.with(key, AttrValue::Int(v))
    }

    pub fn ints(self, key: &str, v: &[i64]) -> Self {
        self.with(key, AttrValue::Ints(v.to_vec()))
    }

    pub fn float(self, key: &str, v: f64) -> Self {
        self.with(key, AttrValue::Float(v))
    }

    fn get_int(&self, op: &'static str, key: &str) -> Result<Option<i64>> {
        match self.0.get(key) {
            None => Ok(None),
            Some(AttrValue::Int(v)) => Ok(Some(*v)),
            Some(other) => Err(Error::invalid(op, format!("attribute `{key}` must be an integer, got {other:?}"))),
        }
    }

    fn req_int(&self, op: &'static str, key: &str) -> Result<i64> {
        self.get_int(op, key)?
            .ok_or_else(|| Error::invalid(op, format!("missing attribute `{key}`")))
    }

    fn usize_or(&self, op: &'static str, key: &str, default: usize) -> Result<usize> {
        match self.get_int(op, key)? {
            None => Ok(default),
            Some(v) if v >= 0 => Ok(v as usize),
            Some(v) => Err(Error::invalid(op, format!("attribute `{key}` must be nonnegative, got {v}"))),
        }
    }

    fn req_usize(&self, op: &'static str, key: &str) -> Result<usize> {
        let v = self.req_int(op, key)?;
        usize::try_from(v).map_err(|_| Error::invalid(op, format!("attribute `{key}` must be nonnegative, got {v}")))
    }

    fn get_ints(&self, op: &'static str, key: &str) -> Result<Option<Vec<i64>>> {
        match self.0.get(key) {
            None => Ok(None),
            Some(AttrValue::Ints(v)) => Ok(Some(v.clone())),
            Some(AttrValue::Int(v)) => Ok(Some(vec![*v])),
            Some(other) => Err(Error::invalid(op, format!("attribute `{key}` must be a list, got {other:?}"))),
        }
    }

    fn usizes(&self, op: &'static str, key: &str) -> Result<Option<Vec<usize>>> {
        self.get_ints(op, key)?
            .map(|v| {
                v.into_iter()
                    .map(|x| usize::try_from(x).map_err(|_| Error::invalid(op, format!("attribute `{key}` has negative entry {x}"))))
                    .collect()
            })
            .transpose()
    }

    fn pair(&self, op: &'static str, key: &str, default: (usize, usize)) -> Result<(usize, usize)> {
        match self.usizes(op, key)? {
            None => Ok(default),
            Some(v) if v.len() == 2 => Ok((v[0], v[1])),
            Some(v) if v.len() == 1 => Ok((v[0], v[0])),
            Some(v) => Err(Error::invalid(op, format!("attribute `{key}` needs 2 entries, got {}", v.len()))),
        }
    }

    fn float_or(&self, op: &'static str, key: &str, default: Option<f64>) -> Result<f64> {
        match self.0.get(key) {
            Some(AttrValue::Float(v)) => Ok(*v),
            Some(AttrValue::Int(v)) => Ok(*v as f64),
            Some(other) => Err(Error::invalid(op, format!("attribute `{key}` must be a number, got {other:?}"))),
            None => default.ok_or_else(|| Error::invalid(op, format!("missing attribute `{key}`"))),
        }
    }
}

fn arity(op: &'static str, inputs: &[Var], allowed: &[usize]) -> Result<()> {
    if allowed.contains(&inputs.len()) {
        Ok(())
    } else {
        Err(Error::invalid(
            op,
            format!("takes {allowed:?} inputs, got {}", inputs.len()),
        ))
    }
}

fn geometry(op: &'static str, attrs: &Attrs) -> Result<Conv2dGeometry> {
    Ok(Conv2dGeometry {
        stride: attrs.pair(op, "stride", (1, 1))?,
        padding: attrs.pair(op, "padding", (0, 0))?,
        dilation: attrs.pair(op, "dilation", (1, 1))?,
        output_padding: attrs.pair(op, "output_padding", (0, 0))?,
    })
}

impl Graph {
    /// Apply a primitive by name. Unknown names and malformed attributes are
    /// rejected; shape errors come from the primitive itself.
    pub fn apply(&mut self, name: &str, inputs: &[Var], attrs: &Attrs) -> Result<Var> {
        macro_rules! unary {
            ($op:literal, $f:ident) => {{
                arity($op, inputs, &[1])?;
                self.$f(inputs[0])
            }};
        }
        macro_rules! binary {
            ($op:literal, $f:ident) => {{
                arity($op, inputs, &[2])?;
                self.$f(inputs[0], inputs[1])
            }};
        }
        match name {
            "matmul" => binary!("matmul", matmul),
            "add" => binary!("add", add),
            "sub" => binary!("sub", sub),
            "mul" => binary!("mul", mul),
            "div" => binary!("div", div),
            "atan2" => binary!("atan2", atan2),
            "exp" => unary!("exp", exp),
            "log" => unary!("log", log),
            "sigmoid" => unary!("sigmoid", sigmoid),
            "softplus" => unary!("softplus", softplus),
            "silu" => unary!("silu", silu),
            "tanh" => unary!("tanh", tanh),
            "abs" => unary!("abs", abs),
            "sin" => unary!("sin", sin),
            "cos" => unary!("cos", cos),
            "square" => unary!("square", square),
            "anti_wrap" => unary!("anti_wrap", anti_wrap),
            "softmax" => unary!("softmax", softmax),
            "transpose" => unary!("transpose", transpose),
            "scale" => {
                arity("scale", inputs, &[1])?;
                let s = attrs.float_or("scale", "factor", None)?;
                self.scale(inputs[0], s)
            }
            "add_scalar" => {
                arity("add_scalar", inputs, &[1])?;
                let s = attrs.float_or("add_scalar", "value", None)?;
                self.add_scalar(inputs[0], s)
            }
            "pow" => {
                arity("pow", inputs, &[1])?;
                let p = attrs.float_or("pow", "exponent", None)?;
                self.pow(inputs[0], p)
            }
            "prelu" => {
                arity("prelu", inputs, &[2])?;
                let axis = attrs.get_int("prelu", "axis")?.unwrap_or(1) as isize;
                self.prelu(inputs[0], inputs[1], axis)
            }
            "layer_norm" => {
                arity("layer_norm", inputs, &[3])?;
                let eps = attrs.float_or("layer_norm", "eps", Some(LAYER_NORM_EPS))?;
                self.layer_norm(inputs[0], inputs[1], inputs[2], eps)
            }
            "instance_norm" => {
                arity("instance_norm", inputs, &[3])?;
                let eps = attrs.float_or("instance_norm", "eps", Some(INSTANCE_NORM_EPS))?;
                self.instance_norm(inputs[0], inputs[1], inputs[2], eps)
            }
            "conv1d" => {
                arity("conv1d", inputs, &[2, 3])?;
                let groups = attrs.usize_or("conv1d", "groups", 1)?;
                let pl = attrs.usize_or("conv1d", "pad_left", 0)?;
                let pr = attrs.usize_or("conv1d", "pad_right", 0)?;
                self.conv1d(inputs[0], inputs[1], inputs.get(2).copied(), groups, pl, pr)
            }
            "conv2d" => {
                arity("conv2d", inputs, &[2, 3])?;
                let geo = geometry("conv2d", attrs)?;
                self.conv2d(inputs[0], inputs[1], inputs.get(2).copied(), geo)
            }
            "conv_transpose2d" => {
                arity("conv_transpose2d", inputs, &[2, 3])?;
                let geo = geometry("conv_transpose2d", attrs)?;
                self.conv_transpose2d(inputs[0], inputs[1], inputs.get(2).copied(), geo)
            }
            "concat" => {
                let axis = attrs.get_int("concat", "axis")?.unwrap_or(0) as isize;
                self.concat(inputs, axis)
            }
            "reshape" => {
                arity("reshape", inputs, &[1])?;
                let shape = attrs
                    .usizes("reshape", "shape")?
                    .ok_or_else(|| Error::invalid("reshape", "missing attribute `shape`"))?;
                self.reshape(inputs[0], &shape)
            }
            "permute" => {
                arity("permute", inputs, &[1])?;
                let perm = attrs
                    .usizes("permute", "perm")?
                    .ok_or_else(|| Error::invalid("permute", "missing attribute `perm`"))?;
                self.permute(inputs[0], &perm)
            }
            "flip" => {
                arity("flip", inputs, &[1])?;
                let axis = attrs.req_int("flip", "axis")? as isize;
                self.flip(inputs[0], axis)
            }
            "slice" => {
                arity("slice", inputs, &[1])?;
                let axis = attrs.req_int("slice", "axis")? as isize;
                let start = attrs.req_usize("slice", "start")?;
                let end = attrs.req_usize("slice", "end")?;
                self.slice(inputs[0], axis, start, end)
            }
            "sum" | "mean" => {
                arity("sum", inputs, &[1])?;
                let mean = name == "mean";
                match attrs.get_ints("sum", "axes")? {
                    None if mean => self.mean_all(inputs[0]),
                    None => self.sum_all(inputs[0]),
                    Some(axes) => {
                        let axes: Vec<isize> = axes.into_iter().map(|a| a as isize).collect();
                        if mean {
                            self.mean(inputs[0], &axes)
                        } else {
                            self.sum(inputs[0], &axes)
                        }
                    }
                }
            }
            "frame" => {
                arity("frame", inputs, &[1])?;
                let win = attrs.req_usize("frame", "window")?;
                let hop = attrs.req_usize("frame", "hop")?;
                let pad = attrs.usize_or("frame", "pad", 0)?;
                self.frame(inputs[0], win, hop, pad)
            }
            "overlap_add" => {
                arity("overlap_add", inputs, &[1])?;
                let hop = attrs.req_usize("overlap_add", "hop")?;
                let pad = attrs.usize_or("overlap_add", "pad", 0)?;
                let len = attrs.req_usize("overlap_add", "length")?;
                self.overlap_add(inputs[0], hop, pad, len)
            }
            "selective_scan" => {
                arity("selective_scan", inputs, &[5])?;
                self.selective_scan(inputs[0], inputs[1], inputs[2], inputs[3], inputs[4])
            }
            other => Err(Error::UnknownPrimitive(other.to_string())),
        }
    }
}

/// Names accepted by [`Graph::apply`].
pub const PRIMITIVES: &[&str] = &[
    "matmul", "add", "sub", "mul", "div", "atan2", "exp", "log", "sigmoid", "softplus", "silu",
    "tanh", "abs", "sin", "cos", "square", "anti_wrap", "softmax", "transpose", "scale",
    "add_scalar", "pow", "prelu", "layer_norm", "instance_norm", "conv1d", "conv2d",
    "conv_transpose2d", "concat", "reshape", "permute", "flip", "slice", "sum", "mean", "frame",
    "overlap_add", "selective_scan",
];
