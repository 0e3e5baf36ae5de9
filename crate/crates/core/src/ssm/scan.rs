use crate::error::{Error, Result};
use crate::parallel;
use crate::tensor::{Backward, Graph, Tensor, Var};

/// Extents of a scan: `s` sequences of length `l` over `k` channels with an
/// `n`-dimensional state per channel.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScanShape {
    pub s: usize,
    pub l: usize,
    pub k: usize,
    pub n: usize,
}

impl ScanShape {
    /// Validate operand shapes. `x`/`dt` are `[S, L, K]` or `[L, K]`, `b`/`c`
    /// are `[S, L, N]` or `[L, N]`, `a` is `[N, K]`.
    pub fn infer(x: &[usize], dt: &[usize], b: &[usize], c: &[usize], a: &[usize]) -> Result<Self> {
        const OP: &str = "selective_scan";
        let (s, l, k) = match *x {
            [l, k] => (1, l, k),
            [s, l, k] => (s, l, k),
            _ => return Err(Error::shape(OP, format!("x must be [L, K] or [S, L, K], got {x:?}"))),
        };
        if dt != x {
            return Err(Error::shape(OP, format!("dt shape {dt:?} differs from x shape {x:?}")));
        }
        let [n, ka] = *a else {
            return Err(Error::shape(OP, format!("A must be [N, K], got {a:?}")));
        };
        if ka != k {
            return Err(Error::shape(OP, format!("A channel dim K is {ka}, x has K = {k}")));
        }
        let mut want = x[..x.len() - 1].to_vec();
        want.push(n);
        for (name, sh) in [("B", b), ("C", c)] {
            if sh != want.as_slice() {
                return Err(Error::shape(OP, format!("{name} must be {want:?} (state dim N = {n}), got {sh:?}")));
            }
        }
        Ok(Self { s, l, k, n })
    }
}

struct Seq<'a> {
    x: &'a [f64],
    dt: &'a [f64],
    b: &'a [f64],
    c: &'a [f64],
}

fn seq<'a>(sh: ScanShape, i: usize, x: &'a [f64], dt: &'a [f64], b: &'a [f64], c: &'a [f64]) -> Seq<'a> {
    let (lk, ln) = (sh.l * sh.k, sh.l * sh.n);
    Seq {
        x: &x[i * lk..(i + 1) * lk],
        dt: &dt[i * lk..(i + 1) * lk],
        b: &b[i * ln..(i + 1) * ln],
        c: &c[i * ln..(i + 1) * ln],
    }
}

/// Per-step record kept for the reverse sweep: `h` after every step and the
/// decay `exp(dt * A)` used to reach it, both `[L, N, K]`.
struct Trace {
    states: Vec<f64>,
    decay: Vec<f64>,
}

/// Runs one sequence forward, optionally recording a [`Trace`].
fn forward_seq(sh: ScanShape, q: &Seq<'_>, a: &[f64], y: &mut [f64], mut trace: Option<&mut Trace>) {
    let (k, n) = (sh.k, sh.n);
    let mut h = vec![0.0; n * k];
    for t in 0..sh.l {
        let xt = &q.x[t * k..(t + 1) * k];
        let dtt = &q.dt[t * k..(t + 1) * k];
        let bt = &q.b[t * n..(t + 1) * n];
        let ct = &q.c[t * n..(t + 1) * n];
        let yt = &mut y[t * k..(t + 1) * k];
        yt.fill(0.0);
        for j in 0..n {
            let hj = &mut h[j * k..(j + 1) * k];
            let aj = &a[j * k..(j + 1) * k];
            for ch in 0..k {
                let decay = (dtt[ch] * aj[ch]).exp();
                hj[ch] = decay * hj[ch] + bt[j] * dtt[ch] * xt[ch];
                yt[ch] += ct[j] * hj[ch];
                if let Some(tr) = trace.as_deref_mut() {
                    tr.decay[t * n * k + j * k + ch] = decay;
                }
            }
        }
        if let Some(tr) = trace.as_deref_mut() {
            tr.states[t * n * k..(t + 1) * n * k].copy_from_slice(&h);
        }
    }
}

/// Selective scan over a batch of independent sequences; see the module docs
/// for the recurrence. Sequences are processed in parallel.
pub fn selective_scan(x: &Tensor, dt: &Tensor, b: &Tensor, c: &Tensor, a: &Tensor) -> Result<Tensor> {
    let sh = ScanShape::infer(x.shape(), dt.shape(), b.shape(), c.shape(), a.shape())?;
    Ok(Tensor::new(x.shape().to_vec(), scan_forward(sh, x.data(), dt.data(), b.data(), c.data(), a.data()))
        .expect("shape checked"))
}

fn scan_forward(sh: ScanShape, x: &[f64], dt: &[f64], b: &[f64], c: &[f64], a: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; sh.s * sh.l * sh.k];
    if sh.l * sh.k == 0 {
        return y;
    }
    parallel::for_each_chunk_mut(&mut y, sh.l * sh.k, |i, yi| {
        forward_seq(sh, &seq(sh, i, x, dt, b, c), a, yi, None);
    });
    y
}

struct SeqGrads {
    gx: Vec<f64>,
    gdt: Vec<f64>,
    gb: Vec<f64>,
    gc: Vec<f64>,
    ga: Vec<f64>,
}

/// Reverse sweep for one sequence. The state trajectory is recomputed here
/// rather than kept from the forward pass.
fn backward_seq(sh: ScanShape, q: &Seq<'_>, a: &[f64], gy: &[f64]) -> SeqGrads {
    let (l, k, n) = (sh.l, sh.k, sh.n);
    let nk = n * k;
    let mut tr = Trace {
        states: vec![0.0; l * nk],
        decay: vec![0.0; l * nk],
    };
    let mut scratch = vec![0.0; l * k];
    forward_seq(sh, q, a, &mut scratch, Some(&mut tr));
    let states = &tr.states;

    let mut g = SeqGrads {
        gx: vec![0.0; l * k],
        gdt: vec![0.0; l * k],
        gb: vec![0.0; l * n],
        gc: vec![0.0; l * n],
        ga: vec![0.0; nk],
    };
    let mut gh = vec![0.0; nk];
    let mut gu = vec![0.0; k];
    for t in (0..l).rev() {
        let xt = &q.x[t * k..(t + 1) * k];
        let dtt = &q.dt[t * k..(t + 1) * k];
        let bt = &q.b[t * n..(t + 1) * n];
        let ct = &q.c[t * n..(t + 1) * n];
        let gyt = &gy[t * k..(t + 1) * k];
        let ht = &states[t * nk..(t + 1) * nk];
        gu.fill(0.0);
        let gdtt = &mut g.gdt[t * k..(t + 1) * k];
        for j in 0..n {
            let hj = &ht[j * k..(j + 1) * k];
            let aj = &a[j * k..(j + 1) * k];
            let ghj = &mut gh[j * k..(j + 1) * k];
            let gaj = &mut g.ga[j * k..(j + 1) * k];
            let mut gcj = 0.0;
            let mut gbj = 0.0;
            for ch in 0..k {
                ghj[ch] += ct[j] * gyt[ch];
                gcj += gyt[ch] * hj[ch];
                let hprev = if t > 0 { states[(t - 1) * nk + j * k + ch] } else { 0.0 };
                let decay = tr.decay[t * nk + j * k + ch];
                let gdecay = ghj[ch] * hprev * decay;
                gbj += ghj[ch] * dtt[ch] * xt[ch];
                gu[ch] += ghj[ch] * bt[j];
                gdtt[ch] += gdecay * aj[ch];
                gaj[ch] += gdecay * dtt[ch];
                ghj[ch] *= decay;
            }
            g.gc[t * n + j] = gcj;
            g.gb[t * n + j] = gbj;
        }
        for ch in 0..k {
            g.gx[t * k + ch] = gu[ch] * dtt[ch];
            gdtt[ch] += gu[ch] * xt[ch];
        }
    }
    g
}

struct ScanOp {
    inputs: [Var; 5],
    shape: ScanShape,
}

impl Backward for ScanOp {
    fn name(&self) -> &'static str {
        "selective_scan"
    }

    fn inputs(&self) -> Vec<Var> {
        self.inputs.to_vec()
    }

    fn backward(&self, g: &Graph, _out: &Tensor, grad_out: &[f64]) -> Vec<Option<Vec<f64>>> {
        let sh = self.shape;
        let [x, dt, b, c, a] = self.inputs.map(|v| g.value(v).data());
        let per_seq = parallel::map_indexed(sh.s, |i| {
            let lk = sh.l * sh.k;
            backward_seq(sh, &seq(sh, i, x, dt, b, c), a, &grad_out[i * lk..(i + 1) * lk])
        });
        let mut gx = Vec::with_capacity(x.len());
        let mut gdt = Vec::with_capacity(x.len());
        let mut gb = Vec::with_capacity(b.len());
        let mut gc = Vec::with_capacity(c.len());
        let mut ga = vec![0.0; a.len()];
        for p in per_seq {
            gx.extend_from_slice(&p.gx);
            gdt.extend_from_slice(&p.gdt);
            gb.extend_from_slice(&p.gb);
            gc.extend_from_slice(&p.gc);
            ga.iter_mut().zip(&p.ga).for_each(|(s, v)| *s += v);
        }
        let want = self.inputs.map(|v| g.requires_grad(v));
        [gx, gdt, gb, gc, ga]
            .into_iter()
            .zip(want)
            .map(|(grad, w)| w.then_some(grad))
            .collect()
    }
}

impl Graph {
    /// Differentiable [`selective_scan`].
    pub fn selective_scan(&mut self, x: Var, dt: Var, b: Var, c: Var, a: Var) -> Result<Var> {
        let sh = ScanShape::infer(self.shape(x), self.shape(dt), self.shape(b), self.shape(c), self.shape(a))?;
        let y = scan_forward(
            sh,
            self.value(x).data(),
            self.value(dt).data(),
            self.value(b).data(),
            self.value(c).data(),
            self.value(a).data(),
        );
        let out = Tensor::new(self.shape(x).to_vec(), y)?;
        Ok(self.push(
            out,
            ScanOp {
                inputs: [x, dt, b, c, a],
                shape: sh,
            },
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::grad_check_graph;
    use crate::tensor::GradCheckConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_inputs(rng: &mut ChaCha8Rng, s: usize, l: usize, k: usize, n: usize) -> [Tensor; 5] {
        [
            Tensor::uniform(&[s, l, k], -1.0, 1.0, rng),
            Tensor::uniform(&[s, l, k], 0.05, 0.5, rng),
            Tensor::uniform(&[s, l, n], -1.0, 1.0, rng),
            Tensor::uniform(&[s, l, n], -1.0, 1.0, rng),
            Tensor::uniform(&[n, k], -2.0, -0.2, rng),
        ]
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let inputs = rand_inputs(&mut rng, 2, 5, 3, 2);
        let w = Tensor::uniform(&[2, 5, 3], -1.0, 1.0, &mut rng);
        let r = grad_check_graph(
            |g, v| {
                let y = g.selective_scan(v[0], v[1], v[2], v[3], v[4])?;
                let w = g.constant(w.clone());
                let p = g.mul(y, w)?;
                g.sum_all(p)
            },
            &inputs,
            GradCheckConfig::default(),
        )
        .unwrap();
        assert!(r.passed(), "max rel err {} at {:?}", r.max_rel_err, r.worst_index);
    }

    #[test]
    fn unbatched_equals_batch_of_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let [x, dt, b, c, a] = rand_inputs(&mut rng, 1, 7, 2, 3);
        let y3 = selective_scan(&x, &dt, &b, &c, &a).unwrap();
        let sq = |t: &Tensor| t.clone().reshaped(&t.shape()[1..]).unwrap();
        let y2 = selective_scan(&sq(&x), &sq(&dt), &sq(&b), &sq(&c), &a).unwrap();
        assert_eq!(y3.data(), y2.data());
        assert_eq!(y2.shape(), &[7, 2]);
    }

    #[test]
    fn empty_sequence_gives_empty_output() {
        let z = |s: &[usize]| Tensor::zeros(s);
        let y = selective_scan(&z(&[0, 3]), &z(&[0, 3]), &z(&[0, 2]), &z(&[0, 2]), &z(&[2, 3])).unwrap();
        assert_eq!(y.numel(), 0);
    }

    #[test]
    fn rejects_mismatched_state_dim() {
        let z = |s: &[usize]| Tensor::zeros(s);
        let e = selective_scan(&z(&[4, 3]), &z(&[4, 3]), &z(&[4, 2]), &z(&[4, 5]), &z(&[2, 3])).unwrap_err();
        assert!(e.to_string().contains("C must be"), "{e}");
    }
}
