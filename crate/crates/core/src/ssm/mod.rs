//! Diagonal selective state-space layers.
//!
//! The recurrence run by [`selective_scan`] is, per channel `k` and state `n`,
//!
//! ```text
//! h[i] = exp(dt[i,k] * A[n,k]) * h[i-1] + B[i,n] * dt[i,k] * x[i,k]
//! y[i,k] = sum_n C[i,n] * h[i][n,k]
//! ```
//!
//! starting from `h = 0`.

mod bidirectional;
mod discretize;
mod mamba;
mod scan;

pub use bidirectional::{bidirectional_mamba, BiMambaParams};
pub use discretize::discretize_zoh;
pub use mamba::{mamba_layer, MambaConfig, MambaParams};
pub use scan::{selective_scan, ScanShape};
