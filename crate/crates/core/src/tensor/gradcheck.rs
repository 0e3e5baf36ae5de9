//! Central finite-difference check of reverse-mode gradients.

use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckConfig {
    pub step: f64,
    pub tol: f64,
    /// Lower bound on the relative-error denominator, so coordinates whose
    /// true gradient is zero are judged on absolute error.
    pub floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tol: 1e-5,
            floor: 1e-6,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Flat coordinate (over all inputs, in order) with the largest error.
    pub worst_index: Option<usize>,
    /// First coordinate whose probe produced a non-finite value.
    pub non_finite_at: Option<usize>,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.non_finite_at.is_none() && self.max_rel_err <= self.tol
    }
}

pub fn relative_error(a: f64, n: f64, floor: f64) -> f64 {
    let d = (a - n).abs();
    if d == 0.0 {
        return 0.0;
    }
    d / a.abs().max(n.abs()).max(floor)
}

/// Check a scalar function of one tensor.
pub fn grad_check<F>(f: F, x: &Tensor, step: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let cfg = GradCheckConfig {
        step,
        tol,
        ..GradCheckConfig::default()
    };
    grad_check_graph(|g, vs| f(g, vs[0]), std::slice::from_ref(x), cfg)
}

/// Check a scalar function of several tensors. Coordinates are numbered
/// across the inputs in order.
pub fn grad_check_graph<F>(f: F, inputs: &[Tensor], cfg: GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if !(cfg.step > 0.0) {
        return Err(Error::invalid("grad_check", format!("step must be positive, got {}", cfg.step)));
    }
    let eval = |xs: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vs: Vec<Var> = xs.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vs)?;
        g.value(out).item()
    };

    let mut g = Graph::new();
    let vs: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = f(&mut g, &vs)?;
    let f0 = g.value(out).item()?;
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_index: None,
        non_finite_at: None,
        analytic: Vec::new(),
        numeric: Vec::new(),
        tol: cfg.tol,
    };
    if !f0.is_finite() {
        report.non_finite_at = Some(0);
        report.max_rel_err = f64::INFINITY;
        return Ok(report);
    }
    g.backward(out)?;
    for (t, &v) in inputs.iter().zip(&vs) {
        match g.grad(v) {
            Some(gr) => report.analytic.extend_from_slice(gr),
            None => report.analytic.extend(std::iter::repeat(0.0).take(t.numel())),
        }
    }

    let mut probe: Vec<Tensor> = inputs.to_vec();
    let mut flat = 0;
    for k in 0..inputs.len() {
        for i in 0..inputs[k].numel() {
            let x0 = inputs[k].data()[i];
            probe[k].data_mut()[i] = x0 + cfg.step;
            let fp = eval(&probe)?;
            probe[k].data_mut()[i] = x0 - cfg.step;
            let fm = eval(&probe)?;
            probe[k].data_mut()[i] = x0;
            if !(fp.is_finite() && fm.is_finite()) {
                report.non_finite_at = Some(flat);
                report.max_rel_err = f64::INFINITY;
                return Ok(report);
            }
            let n = (fp - fm) / (2.0 * cfg.step);
            let err = relative_error(report.analytic[flat], n, cfg.floor);
            if err > report.max_rel_err || report.worst_index.is_none() {
                report.max_rel_err = report.max_rel_err.max(err);
                report.worst_index = Some(flat);
            }
            report.numeric.push(n);
            flat += 1;
        }
    }
    Ok(report)
}
