use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Zero-order-hold discretization with the first-order input term:
/// `Ā[n,k] = exp(dt[k] A[n,k])`, `B̄[n,k] = dt[k] B[n]`.
///
/// `a` is `[N, K]`, `b` has `N` entries and `dt` has `K` entries or a single
/// one shared by every channel.
pub fn discretize_zoh(a: &Tensor, b: &[f64], dt: &[f64]) -> Result<(Tensor, Tensor)> {
    let [n, k] = a.shape() else {
        return Err(Error::shape("discretize_zoh", format!("A must be [N, K], got {:?}", a.shape())));
    };
    let (n, k) = (*n, *k);
    if b.len() != n {
        return Err(Error::shape("discretize_zoh", format!("B has {} entries, state dim N is {n}", b.len())));
    }
    if dt.len() != k && dt.len() != 1 {
        return Err(Error::shape("discretize_zoh", format!("dt has {} entries, channel dim K is {k}", dt.len())));
    }
    if let Some(bad) = dt.iter().find(|&&d| !(d > 0.0)) {
        return Err(Error::invalid("discretize_zoh", format!("step size must be positive, got {bad}")));
    }
    let step = |j: usize| if dt.len() == 1 { dt[0] } else { dt[j] };
    let mut abar = vec![0.0; n * k];
    let mut bbar = vec![0.0; n * k];
    for i in 0..n {
        for j in 0..k {
            abar[i * k + j] = (step(j) * a.data()[i * k + j]).exp();
            bbar[i * k + j] = step(j) * b[i];
        }
    }
    Ok((Tensor::new(vec![n, k], abar)?, Tensor::new(vec![n, k], bbar)?))
}
