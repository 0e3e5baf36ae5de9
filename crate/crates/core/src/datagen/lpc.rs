//! Linear prediction by the autocorrelation method and speech-shaped noise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Biased autocorrelation `r[0..=order]`.
pub fn autocorrelation(x: &[f64], order: usize) -> Vec<f64> {
    (0..=order)
        .map(|lag| x.iter().zip(&x[lag.min(x.len())..]).map(|(a, b)| a * b).sum())
        .collect()
}

/// Prediction polynomial `A(z) = 1 + a1 z^-1 + ... + ap z^-p`.
#[derive(Clone, Debug, PartialEq)]
pub struct Lpc {
    /// `a[0] = 1`
    pub a: Vec<f64>,
    pub reflection: Vec<f64>,
    /// Final prediction error power.
    pub error: f64,
}

/// Levinson-Durbin recursion on `r[0..=order]`. Rejects a recursion whose
/// reflection coefficient reaches magnitude 1 (the all-pole filter would be
/// unstable).
pub fn levinson_durbin(r: &[f64], order: usize) -> Result<Lpc> {
    if order == 0 {
        return Err(Error::invalid("lpc", "order must be at least 1"));
    }
    if r.len() <= order {
        return Err(Error::invalid("lpc", format!("{} autocorrelation lags for order {order}", r.len())));
    }
    if !(r[0] > 0.0) {
        return Err(Error::invalid("lpc", "zero-energy source"));
    }
    let mut a = vec![0.0; order + 1];
    a[0] = 1.0;
    let mut err = r[0];
    let mut refl = Vec::with_capacity(order);
    for m in 1..=order {
        let acc: f64 = (0..m).map(|i| a[i] * r[m - i]).sum();
        let k = -acc / err;
        if !k.is_finite() || k.abs() >= 1.0 {
            return Err(Error::Numerical(format!(
                "lpc: unstable filter, reflection coefficient {k} at stage {m} of {order}"
            )));
        }
        let prev = a.clone();
        for i in 1..m {
            a[i] = prev[i] + k * prev[m - i];
        }
        a[m] = k;
        err *= 1.0 - k * k;
        refl.push(k);
    }
    Ok(Lpc { a, reflection: refl, error: err })
}

/// LPC of `x` of the given order.
pub fn lpc(x: &[f64], order: usize) -> Result<Lpc> {
    if x.len() <= order {
        return Err(Error::invalid(
            "lpc",
            format!("source of {} samples is too short for order {order}", x.len()),
        ));
    }
    levinson_durbin(&autocorrelation(x, order), order)
}

/// Samples run through the all-pole filter before output starts, so the
/// filter state is stationary.
const WARMUP: usize = 2048;

/// Drive `1 / A(z)` with `n` samples of seeded white Gaussian noise.
pub fn all_pole_noise(a: &[f64], n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = a.len() - 1;
    let mut hist = vec![0.0; p];
    let mut out = Vec::with_capacity(n);
    for i in 0..WARMUP + n {
        let e: f64 = StandardNormal.sample(&mut rng);
        let y = e - (1..=p).map(|j| a[j] * hist[j - 1]).sum::<f64>();
        hist.rotate_right(1);
        if p > 0 {
            hist[0] = y;
        }
        if i >= WARMUP {
            out.push(y);
        }
    }
    out
}

pub(crate) fn rms(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

/// Speech-shaped noise: white Gaussian noise coloured by the order-`order`
/// LPC envelope of `source`, scaled to unit RMS.
pub fn gen_ssn(source: &[f64], order: usize, length: usize, seed: u64) -> Result<Vec<f64>> {
    let model = lpc(source, order)?;
    let mut y = all_pole_noise(&model.a, length, seed);
    let r = rms(&y);
    if r > 0.0 {
        y.iter_mut().for_each(|v| *v /= r);
    }
    Ok(y)
}
