use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Power-law compression `m^c`.
pub fn compress(m: &Tensor, c: f64) -> Result<Tensor> {
    if !(c > 0.0 && c <= 1.0) {
        return Err(Error::invalid("compress", format!("exponent must lie in (0, 1], got {c}")));
    }
    if let Some(v) = m.data().iter().find(|&&v| !(v >= 0.0)) {
        return Err(Error::invalid("compress", format!("magnitudes must be nonnegative, got {v}")));
    }
    Ok(m.map(|v| v.powf(c)))
}

/// Inverse of [`compress`]: `m^(1/c)`.
pub fn decompress(mc: &Tensor, c: f64) -> Result<Tensor> {
    if !(c > 0.0) {
        return Err(Error::invalid("decompress", format!("exponent must be positive, got {c}")));
    }
    if let Some(v) = mc.data().iter().find(|&&v| !(v >= 0.0)) {
        return Err(Error::invalid("decompress", format!("magnitudes must be nonnegative, got {v}")));
    }
    Ok(mc.map(|v| v.powf(1.0 / c)))
}

/// Enhanced magnitude `(Y_m^c * mask)^(1/c)` from the compressed noisy
/// magnitude and a compressed-domain mask.
pub fn apply_mask(compressed_mag: &Tensor, mask: &Tensor, c: f64) -> Result<Tensor> {
    if c == 0.0 || !c.is_finite() {
        return Err(Error::invalid("apply_mask", format!("exponent must be nonzero and finite, got {c}")));
    }
    if compressed_mag.shape() != mask.shape() {
        return Err(Error::shape(
            "apply_mask",
            format!("magnitude {:?} vs mask {:?}", compressed_mag.shape(), mask.shape()),
        ));
    }
    if let Some(v) = mask.data().iter().find(|&&v| !(v >= 0.0)) {
        return Err(Error::invalid("apply_mask", format!("mask must be nonnegative, got {v}")));
    }
    let data = compressed_mag
        .data()
        .iter()
        .zip(mask.data())
        .map(|(y, m)| (y * m).powf(1.0 / c))
        .collect();
    Tensor::new(compressed_mag.shape().to_vec(), data)
}
