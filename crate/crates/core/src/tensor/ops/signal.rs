//! Framing and overlap-add: the index plumbing of a differentiable STFT.

use super::super::graph::{Backward, Graph, Var};
use super::super::Tensor;
use crate::error::{Error, Result};

/// Index into an unpadded signal of length `len` for position `q` of its
/// reflect-padded version (`pad` samples mirrored at each end, edge excluded).
pub(crate) fn reflect_index(q: usize, pad: usize, len: usize) -> usize {
    let i = q as isize - pad as isize;
    let last = len as isize - 1;
    let r = if i < 0 {
        -i
    } else if i > last {
        2 * last - i
    } else {
        i
    };
    r as usize
}

struct Frame {
    x: Var,
    win: usize,
    hop: usize,
    pad: usize,
}

impl Backward for Frame {
    fn name(&self) -> &'static str {
        "frame"
    }
    fn inputs(&self) -> Vec<Var> {
        vec![self.x]
    }
    fn backward(&self, g: &Graph, out: &Tensor, go: &[f64]) -> Vec<Option<Vec<f64>>> {
        let xs = g.shape(self.x);
        let (m, len) = (xs[0], xs[1]);
        let t = out.shape()[1];
        let mut gx = vec![0.0; m * len];
        for mi in 0..m {
            for ti in 0..t {
                for j in 0..self.win {
                    let src = reflect_index(ti * self.hop + j, self.pad, len);
                    gx[mi * len + src] += go[(mi * t + ti) * self.win + j];
                }
            }
        }
        vec![Some(gx)]
    }
}

struct OverlapAdd {
    frames: Var,
    hop: usize,
    pad: usize,
}

impl Backward for OverlapAdd {
    fn name(&self) -> &'static str {
        "overlap_add"
    }
    fn inputs(&self) -> Vec<Var> {
        vec![self.frames]
    }
    fn backward(&self, g: &Graph, out: &Tensor, go: &[f64]) -> Vec<Option<Vec<f64>>> {
        let fs = g.shape(self.frames);
        let (m, t, win) = (fs[0], fs[1], fs[2]);
        let len = out.shape()[1];
        let mut gf = vec![0.0; m * t * win];
        for mi in 0..m {
            for ti in 0..t {
                for j in 0..win {
                    let q = ti * self.hop + j;
                    if q >= self.pad && q - self.pad < len {
                        gf[(mi * t + ti) * win + j] = go[mi * len + q - self.pad];
                    }
                }
            }
        }
        vec![Some(gf)]
    }
}

impl Graph {
    /// Slice `x: [M, len]` into `[M, T, win]` frames with hop `hop` after
    /// reflect-padding `pad` samples at both ends.
    pub fn frame(&mut self, x: Var, win: usize, hop: usize, pad: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 2 {
            return Err(Error::shape("frame", format!("expected [M, len], got {xs:?}")));
        }
        let (m, len) = (xs[0], xs[1]);
        if hop == 0 || win == 0 {
            return Err(Error::invalid("frame", "window and hop must be positive"));
        }
        if pad >= len {
            return Err(Error::shape(
                "frame",
                format!("reflection padding {pad} needs a signal longer than {len}"),
            ));
        }
        if len + 2 * pad < win {
            return Err(Error::shape(
                "frame",
                format!("padded length {} is shorter than one window {win}", len + 2 * pad),
            ));
        }
        let t = 1 + (len + 2 * pad - win) / hop;
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(m * t * win);
        for mi in 0..m {
            for ti in 0..t {
                for j in 0..win {
                    out.push(xd[mi * len + reflect_index(ti * hop + j, pad, len)]);
                }
            }
        }
        let tensor = Tensor::new(vec![m, t, win], out)?;
        Ok(self.push(tensor, Frame { x, win, hop, pad }))
    }

    /// Sum `[M, T, win]` frames at hop `hop` and keep samples
    /// `pad..pad + len` of the result: `[M, len]`.
    pub fn overlap_add(&mut self, frames: Var, hop: usize, pad: usize, len: usize) -> Result<Var> {
        let fs = self.shape(frames).to_vec();
        if fs.len() != 3 {
            return Err(Error::shape("overlap_add", format!("expected [M, T, win], got {fs:?}")));
        }
        let (m, t, win) = (fs[0], fs[1], fs[2]);
        if t == 0 {
            return Err(Error::shape("overlap_add", "no frames"));
        }
        let full = (t - 1) * hop + win;
        if pad + len > full {
            return Err(Error::shape(
                "overlap_add",
                format!("{t} frames cover {full} samples, cannot return {pad}+{len}"),
            ));
        }
        let fd = self.value(frames).data();
        let mut out = vec![0.0; m * len];
        for mi in 0..m {
            for ti in 0..t {
                for j in 0..win {
                    let q = ti * hop + j;
                    if q >= pad && q - pad < len {
                        out[mi * len + q - pad] += fd[(mi * t + ti) * win + j];
                    }
                }
            }
        }
        let tensor = Tensor::new(vec![m, len], out)?;
        Ok(self.push(tensor, OverlapAdd { frames, hop, pad }))
    }
}
