//! Wall-clock scaling of the selective scan against multi-head attention.

use std::fmt;
use std::io::Write;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attention::multi_head_attention_blocked;
use crate::error::{Error, Result};
use crate::ssm::selective_scan;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum BenchOp {
    Scan,
    Attention,
}

impl fmt::Display for BenchOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BenchOp::Scan => "selective_scan",
            BenchOp::Attention => "multi_head_attention",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchConfig {
    /// Sequence lengths, strictly ascending.
    pub lengths: Vec<usize>,
    pub d_model: usize,
    pub heads: usize,
    pub d_state: usize,
    /// Timed batches per point; the fastest is kept.
    pub repeats: usize,
    /// Query rows per attention block.
    pub block: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            lengths: vec![1024, 2048, 4096, 8192, 16384],
            d_model: 64,
            heads: 8,
            d_state: 16,
            repeats: 3,
            block: 256,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Timing {
    pub op: BenchOp,
    pub length: usize,
    /// Seconds per forward pass.
    pub seconds: f64,
}

/// Calls are batched until a batch takes this long, so short kernels are
/// not dominated by timer resolution.
const MIN_BATCH_SECS: f64 = 0.02;

fn time_call(repeats: usize, mut f: impl FnMut() -> Result<()>) -> Result<f64> {
    f()?;
    let mut n = 1usize;
    loop {
        let t = Instant::now();
        for _ in 0..n {
            f()?;
        }
        let dt = t.elapsed().as_secs_f64();
        if dt >= MIN_BATCH_SECS {
            let mut best = dt / n as f64;
            for _ in 1..repeats {
                let t = Instant::now();
                for _ in 0..n {
                    f()?;
                }
                best = best.min(t.elapsed().as_secs_f64() / n as f64);
            }
            return Ok(best);
        }
        n *= 2;
    }
}

/// Time scan and attention forward passes at every configured length.
pub fn run(cfg: &BenchConfig) -> Result<Vec<Timing>> {
    if cfg.lengths.is_empty() || cfg.lengths.windows(2).any(|w| w[0] >= w[1]) || cfg.lengths[0] == 0 {
        return Err(Error::invalid("bench", format!("lengths must be positive and ascending, got {:?}", cfg.lengths)));
    }
    if cfg.heads == 0 || cfg.d_model % cfg.heads != 0 {
        return Err(Error::invalid(
            "bench",
            format!("d_model {} is not divisible by {} heads", cfg.d_model, cfg.heads),
        ));
    }
    let (d, n) = (cfg.d_model, cfg.d_state);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let a = Tensor::uniform(&[n, d], -2.0, -0.5, &mut rng);
    let bound = 1.0 / (d as f64).sqrt();
    let w: Vec<Tensor> = (0..4).map(|_| Tensor::uniform(&[d, d], -bound, bound, &mut rng)).collect();
    let w = [&w[0], &w[1], &w[2], &w[3]];
    let mut out = Vec::new();
    for &l in &cfg.lengths {
        let x = Tensor::uniform(&[l, d], -1.0, 1.0, &mut rng);
        let dt = Tensor::uniform(&[l, d], 0.001, 0.1, &mut rng);
        let b = Tensor::uniform(&[l, n], -1.0, 1.0, &mut rng);
        let c = Tensor::uniform(&[l, n], -1.0, 1.0, &mut rng);
        let s = time_call(cfg.repeats, || selective_scan(&x, &dt, &b, &c, &a).map(drop))?;
        out.push(Timing {
            op: BenchOp::Scan,
            length: l,
            seconds: s,
        });
        let s = time_call(cfg.repeats, || multi_head_attention_blocked(&x, &w, cfg.heads, cfg.block).map(drop))?;
        out.push(Timing {
            op: BenchOp::Attention,
            length: l,
            seconds: s,
        });
    }
    Ok(out)
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 2 || points.iter().any(|&(x, y)| !(x > 0.0 && y > 0.0)) {
        return Err(Error::invalid("loglog_slope", "need at least two points with positive coordinates"));
    }
    let n = points.len() as f64;
    let (lx, ly): (Vec<f64>, Vec<f64>) = points.iter().map(|&(x, y)| (x.ln(), y.ln())).unzip();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("loglog_slope", "all x values are equal"));
    }
    Ok(sxy / sxx)
}

/// Scaling exponent of one op across the timed lengths.
pub fn slope(timings: &[Timing], op: BenchOp) -> Result<f64> {
    let pts: Vec<(f64, f64)> = timings
        .iter()
        .filter(|t| t.op == op)
        .map(|t| (t.length as f64, t.seconds))
        .collect();
    loglog_slope(&pts)
}

/// `op,length,seconds` with one row per (op, length).
pub fn write_csv<W: Write>(timings: &[Timing], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let err = |e: csv::Error| Error::invalid("bench", format!("csv: {e}"));
    wr.write_record(["op", "length", "seconds"]).map_err(err)?;
    for t in timings {
        wr.write_record([t.op.to_string(), t.length.to_string(), format!("{:e}", t.seconds)])
            .map_err(err)?;
    }
    wr.flush().map_err(|e| Error::io("<bench>", e))
}
