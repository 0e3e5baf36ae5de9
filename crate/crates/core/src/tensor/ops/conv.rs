use super::super::gemm::{gemm, gemm_into, MatMut, MatRef};
use super::super::graph::{Backward, Graph, Var};
use super::super::Tensor;
use crate::error::{Error, Result};
use crate::parallel;

/// Stride, zero padding, dilation and (transposed only) output padding of a
/// 2-D convolution, each given as (height, width).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dGeometry {
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub dilation: (usize, usize),
    pub output_padding: (usize, usize),
}

impl Default for Conv2dGeometry {
    fn default() -> Self {
        Self {
            stride: (1, 1),
            padding: (0, 0),
            dilation: (1, 1),
            output_padding: (0, 0),
        }
    }
}

impl Conv2dGeometry {
    pub fn with_stride(mut self, h: usize, w: usize) -> Self {
        self.stride = (h, w);
        self
    }
    pub fn with_padding(mut self, h: usize, w: usize) -> Self {
        self.padding = (h, w);
        self
    }
    pub fn with_dilation(mut self, h: usize, w: usize) -> Self {
        self.dilation = (h, w);
        self
    }
    pub fn with_output_padding(mut self, h: usize, w: usize) -> Self {
        self.output_padding = (h, w);
        self
    }

    fn validate(&self, op: &'static str) -> Result<()> {
        if self.stride.0 == 0 || self.stride.1 == 0 || self.dilation.0 == 0 || self.dilation.1 == 0 {
            return Err(Error::invalid(op, "stride and dilation must be positive"));
        }
        Ok(())
    }

    /// Output extent of a forward convolution along one axis.
    fn conv_out(&self, op: &'static str, len: usize, k: usize, axis: usize) -> Result<usize> {
        let (s, p, d) = if axis == 0 {
            (self.stride.0, self.padding.0, self.dilation.0)
        } else {
            (self.stride.1, self.padding.1, self.dilation.1)
        };
        let span = d * (k - 1) + 1;
        if len + 2 * p < span {
            let name = if axis == 0 { "height" } else { "width" };
            return Err(Error::shape(
                op,
                format!("input {name} {len} (+2*{p} padding) is smaller than the dilated kernel span {span}"),
            ));
        }
        Ok((len + 2 * p - span) / s + 1)
    }

    /// Output extent of a transposed convolution along one axis.
    fn transposed_out(&self, op: &'static str, len: usize, k: usize, axis: usize) -> Result<usize> {
        let (s, p, d, op_pad) = if axis == 0 {
            (self.stride.0, self.padding.0, self.dilation.0, self.output_padding.0)
        } else {
            (self.stride.1, self.padding.1, self.dilation.1, self.output_padding.1)
        };
        if op_pad >= s.max(d) {
            return Err(Error::invalid(op, "output padding must be smaller than stride or dilation"));
        }
        let full = (len - 1) * s + d * (k - 1) + op_pad + 1;
        if full <= 2 * p {
            return Err(Error::shape(op, "padding removes the whole output"));
        }
        Ok(full - 2 * p)
    }
}

/// Patch geometry shared by im2col/col2im: an image `[c, h, w]` scanned by a
/// `kh x kw` kernel producing `ho x wo` positions.
#[derive(Clone, Copy)]
struct Patches {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    geo: Conv2dGeometry,
}

impl Patches {
    fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.ho * self.wo
    }

    /// Positions per chunk so one column buffer stays around a million entries.
    fn chunk(&self) -> usize {
        ((1usize << 20) / self.rows().max(1)).clamp(1, self.positions().max(1))
    }

    /// Visit the runs of positions `p0..p1` that share one output row.
    /// For kernel tap `(ki, kj)` each run reports its offset into the column
    /// row, its length, and the valid sub-range `[lo, hi)` (relative to the
    /// run) together with the source index of its first element; positions
    /// outside the sub-range read padding. Sources advance by `stride.1`.
    fn runs(&self, ki: usize, kj: usize, p0: usize, p1: usize, mut f: impl FnMut(usize, usize, usize, usize, usize)) {
        let (sy, sx) = self.geo.stride;
        let (dy, dx) = self.geo.dilation;
        let (py, px) = self.geo.padding;
        let mut p = p0;
        while p < p1 {
            let (oy, ox0) = (p / self.wo, p % self.wo);
            let len = (self.wo - ox0).min(p1 - p);
            let j0 = p - p0;
            let iy = (oy * sy + ki * dy) as isize - py as isize;
            if iy < 0 || iy as usize >= self.h {
                f(j0, len, 0, 0, 0);
            } else {
                // ix = ox * sx + kj * dx - px must lie in [0, w)
                let off = (kj * dx) as isize - px as isize;
                let first = if off >= 0 { 0 } else { ((-off) as usize).div_ceil(sx) };
                let end = if (self.w as isize) <= off {
                    0
                } else {
                    ((self.w as isize - off) as usize).div_ceil(sx)
                };
                let lo = first.max(ox0).min(ox0 + len);
                let hi = end.min(ox0 + len).max(lo);
                let src = if hi > lo {
                    iy as usize * self.w + (lo as isize * sx as isize + off) as usize
                } else {
                    0
                };
                f(j0, len, lo - ox0, hi - ox0, src);
            }
            p += len;
        }
    }

    fn im2col(&self, img: &[f64], p0: usize, p1: usize, cols: &mut [f64]) {
        let np = p1 - p0;
        let hw = self.h * self.w;
        let sx = self.geo.stride.1;
        for c in 0..self.c {
            let plane = &img[c * hw..(c + 1) * hw];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let r = (c * self.kh + ki) * self.kw + kj;
                    let row = &mut cols[r * np..(r + 1) * np];
                    self.runs(ki, kj, p0, p1, |j0, len, lo, hi, src| {
                        let seg = &mut row[j0..j0 + len];
                        seg[..lo].fill(0.0);
                        seg[hi..].fill(0.0);
                        if sx == 1 {
                            seg[lo..hi].copy_from_slice(&plane[src..src + hi - lo]);
                        } else {
                            for (i, v) in seg[lo..hi].iter_mut().enumerate() {
                                *v = plane[src + i * sx];
                            }
                        }
                    });
                }
            }
        }
    }

    fn col2im(&self, cols: &[f64], p0: usize, p1: usize, img: &mut [f64]) {
        let np = p1 - p0;
        let hw = self.h * self.w;
        let sx = self.geo.stride.1;
        for c in 0..self.c {
            let plane = &mut img[c * hw..(c + 1) * hw];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let r = (c * self.kh + ki) * self.kw + kj;
                    let row = &cols[r * np..(r + 1) * np];
                    self.runs(ki, kj, p0, p1, |j0, _len, lo, hi, src| {
                        for (i, v) in row[j0 + lo..j0 + hi].iter().enumerate() {
                            plane[src + i * sx] += v;
                        }
                    });
                }
            }
        }
    }
}

/// Stride-1 convolution without im2col: the image is zero padded once and each
/// kernel tap becomes one GEMM against a shifted view of it. Outputs are
/// computed over the full padded width and the extra columns dropped.
#[derive(Clone, Copy)]
struct Direct {
    pat: Patches,
    wp: usize,
    /// Channel stride of the padded image; the tail slack keeps the shifted
    /// views of the last channel in bounds.
    cs: usize,
}

impl Direct {
    fn new(pat: Patches) -> Option<Self> {
        if pat.geo.stride != (1, 1) {
            return None;
        }
        let hp = pat.h + 2 * pat.geo.padding.0;
        let wp = pat.w + 2 * pat.geo.padding.1;
        let cs = hp * wp + (pat.kw - 1) * pat.geo.dilation.1;
        Some(Self { pat, wp, cs })
    }

    /// Columns of the full-width output.
    fn span(&self) -> usize {
        self.pat.ho * self.wp
    }

    fn offset(&self, ki: usize, kj: usize) -> usize {
        ki * self.pat.geo.dilation.0 * self.wp + kj * self.pat.geo.dilation.1
    }

    fn taps(&self) -> impl Iterator<Item = (usize, usize)> {
        let kw = self.pat.kw;
        (0..self.pat.kh * kw).map(move |t| (t / kw, t % kw))
    }

    fn pad(&self, img: &[f64]) -> Vec<f64> {
        let Patches { c, h, w, .. } = self.pat;
        let (py, px) = self.pat.geo.padding;
        let mut xp = vec![0.0; c * self.cs];
        for ci in 0..c {
            for y in 0..h {
                let dst = ci * self.cs + (y + py) * self.wp + px;
                xp[dst..dst + w].copy_from_slice(&img[(ci * h + y) * w..(ci * h + y + 1) * w]);
            }
        }
        xp
    }

    fn crop_into(&self, gxp: &[f64], gx: &mut [f64]) {
        let Patches { c, h, w, .. } = self.pat;
        let (py, px) = self.pat.geo.padding;
        for ci in 0..c {
            for y in 0..h {
                let src = ci * self.cs + (y + py) * self.wp + px;
                gx[(ci * h + y) * w..(ci * h + y + 1) * w].copy_from_slice(&gxp[src..src + w]);
            }
        }
    }

    /// View of tap `(ki, kj)` of `w: [O, C, kh, kw]` as an `O x C` matrix.
    fn weight<'a>(&self, w: &'a [f64], o: usize, ki: usize, kj: usize) -> MatRef<'a> {
        let taps = self.pat.kh * self.pat.kw;
        MatRef {
            data: &w[ki * self.pat.kw + kj..],
            rows: o,
            cols: self.pat.c,
            rs: (self.pat.c * taps) as isize,
            cs: taps as isize,
        }
    }

    fn shifted<'a>(&self, xp: &'a [f64], ki: usize, kj: usize) -> MatRef<'a> {
        MatRef {
            data: &xp[self.offset(ki, kj)..],
            rows: self.pat.c,
            cols: self.span(),
            rs: self.cs as isize,
            cs: 1,
        }
    }

    fn forward(&self, img: &[f64], w: &[f64], bias: Option<&[f64]>, o: usize, out: &mut [f64]) {
        let xp = self.pad(img);
        let span = self.span();
        let mut full = vec![0.0; o * span];
        for (t, (ki, kj)) in self.taps().enumerate() {
            let beta = if t == 0 { 0.0 } else { 1.0 };
            gemm(1.0, self.weight(w, o, ki, kj), self.shifted(&xp, ki, kj), beta, &mut full);
        }
        let (ho, wo) = (self.pat.ho, self.pat.wo);
        for oc in 0..o {
            let b = bias.map_or(0.0, |b| b[oc]);
            for y in 0..ho {
                let src = &full[oc * span + y * self.wp..oc * span + y * self.wp + wo];
                let dst = &mut out[(oc * ho + y) * wo..(oc * ho + y + 1) * wo];
                dst.iter_mut().zip(src).for_each(|(d, s)| *d = s + b);
            }
        }
    }

    /// Per-sample gradients; `gw` accumulates.
    fn backward(&self, img: &[f64], w: &[f64], go: &[f64], o: usize, gx: Option<&mut [f64]>, gw: Option<&mut [f64]>) {
        let span = self.span();
        let (ho, wo) = (self.pat.ho, self.pat.wo);
        let mut gfull = vec![0.0; o * span];
        for oc in 0..o {
            for y in 0..ho {
                let dst = oc * span + y * self.wp;
                gfull[dst..dst + wo].copy_from_slice(&go[(oc * ho + y) * wo..(oc * ho + y + 1) * wo]);
            }
        }
        let gview = MatRef::row_major(&gfull, o, span);
        let taps = self.pat.kh * self.pat.kw;
        if let Some(gw) = gw {
            let xp = self.pad(img);
            for (ki, kj) in self.taps() {
                let dst = MatMut {
                    data: &mut gw[ki * self.pat.kw + kj..],
                    rows: o,
                    cols: self.pat.c,
                    rs: (self.pat.c * taps) as isize,
                    cs: taps as isize,
                };
                gemm_into(1.0, gview, self.shifted(&xp, ki, kj).t(), 1.0, dst);
            }
        }
        if let Some(gx) = gx {
            let mut gxp = vec![0.0; self.pat.c * self.cs];
            for (ki, kj) in self.taps() {
                let off = self.offset(ki, kj);
                let dst = MatMut {
                    data: &mut gxp[off..],
                    rows: self.pat.c,
                    cols: span,
                    rs: self.cs as isize,
                    cs: 1,
                };
                gemm_into(1.0, self.weight(w, o, ki, kj).t(), gview, 1.0, dst);
            }
            self.crop_into(&gxp, gx);
        }
    }
}

fn chunks(total: usize, step: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..total).step_by(step.max(1)).map(move |p0| (p0, (p0 + step).min(total)))
}

fn add_into(acc: &mut [f64], x: &[f64]) {
    acc.iter_mut().zip(x).for_each(|(a, b)| *a += b);
}

/// Sum per-sample partial gradients in sample order (deterministic).
fn sum_partials(parts: impl IntoIterator<Item = Vec<f64>>, len: usize) -> Vec<f64> {
    let mut acc = vec![0.0; len];
    for p in parts {
        add_into(&mut acc, &p);
    }
    acc
}

struct Conv2d {
    x: Var,
    w: Var,
    b: Option<Var>,
    pat: Patches,
    out_c: usize,
}

impl Backward for Conv2d {
    fn name(&self) -> &'static str {
        "conv2d"
    }
    fn inputs(&self) -> Vec<Var> {
        let mut v = vec![self.x, self.w];
        v.extend(self.b);
        v
    }
    fn backward(&self, g: &Graph, _out: &Tensor, go: &[f64]) -> Vec<Option<Vec<f64>>> {
        let x = g.value(self.x);
        let w = g.value(self.w).data();
        let pat = self.pat;
        let (n, o, rows, npos) = (x.shape()[0], self.out_c, pat.rows(), pat.positions());
        let in_len = pat.c * pat.h * pat.w;
        let want_x = g.requires_grad(self.x);
        let want_w = g.requires_grad(self.w);
        let direct = Direct::new(pat);
        let parts = parallel::map_indexed(n, |ni| {
            let img = &x.data()[ni * in_len..(ni + 1) * in_len];
            let gon = &go[ni * o * npos..(ni + 1) * o * npos];
            let mut gx = vec![0.0; if want_x { in_len } else { 0 }];
            let mut gw = vec![0.0; if want_w { o * rows } else { 0 }];
            if let Some(d) = direct {
                d.backward(img, w, gon, o, want_x.then_some(&mut gx[..]), want_w.then_some(&mut gw[..]));
                return (gx, gw);
            }
            let step = pat.chunk();
            let mut cols = vec![0.0; rows * step];
            let mut gcols = vec![0.0; rows * step];
            for (p0, p1) in chunks(npos, step) {
                let np = p1 - p0;
                let gview = MatRef {
                    data: &gon[p0..],
                    rows: o,
                    cols: np,
                    rs: npos as isize,
                    cs: 1,
                };
                if want_w {
                    pat.im2col(img, p0, p1, &mut cols[..rows * np]);
                    gemm(1.0, gview, MatRef::row_major(&cols[..rows * np], rows, np).t(), 1.0, &mut gw);
                }
                if want_x {
                    gemm(1.0, MatRef::row_major(w, o, rows).t(), gview, 0.0, &mut gcols[..rows * np]);
                    pat.col2im(&gcols[..rows * np], p0, p1, &mut gx);
                }
            }
            (gx, gw)
        });
        let (gxs, gws): (Vec<_>, Vec<_>) = parts.into_iter().unzip();
        let gx = want_x.then(|| gxs.concat());
        let gw = want_w.then(|| sum_partials(gws, o * rows));
        let mut res = vec![gx, gw];
        if let Some(b) = self.b {
            res.push(g.requires_grad(b).then(|| {
                let mut gb = vec![0.0; o];
                for (i, chunk) in go.chunks(npos).enumerate() {
                    gb[i % o] += chunk.iter().sum::<f64>();
                }
                gb
            }));
        }
        res
    }
}

struct ConvTranspose2d {
    x: Var,
    w: Var,
    b: Option<Var>,
    /// Patch geometry over the *output* image; positions are input pixels.
    pat: Patches,
    in_c: usize,
}

impl Backward for ConvTranspose2d {
    fn name(&self) -> &'static str {
        "conv_transpose2d"
    }
    fn inputs(&self) -> Vec<Var> {
        let mut v = vec![self.x, self.w];
        v.extend(self.b);
        v
    }
    fn backward(&self, g: &Graph, out: &Tensor, go: &[f64]) -> Vec<Option<Vec<f64>>> {
        let x = g.value(self.x);
        let w = g.value(self.w).data();
        let pat = self.pat;
        let (n, ci, rows, npos) = (x.shape()[0], self.in_c, pat.rows(), pat.positions());
        let out_len = pat.c * pat.h * pat.w;
        let want_x = g.requires_grad(self.x);
        let want_w = g.requires_grad(self.w);
        let parts = parallel::map_indexed(n, |ni| {
            let xn = &x.data()[ni * ci * npos..(ni + 1) * ci * npos];
            let gon = &go[ni * out_len..(ni + 1) * out_len];
            let mut gx = vec![0.0; if want_x { ci * npos } else { 0 }];
            let mut gw = vec![0.0; if want_w { ci * rows } else { 0 }];
            let step = pat.chunk();
            let mut cols = vec![0.0; rows * step];
            let mut tmp = vec![0.0; ci * step];
            for (p0, p1) in chunks(npos, step) {
                let np = p1 - p0;
                pat.im2col(gon, p0, p1, &mut cols[..rows * np]);
                let cview = MatRef::row_major(&cols[..rows * np], rows, np);
                if want_x {
                    gemm(1.0, MatRef::row_major(w, ci, rows), cview, 0.0, &mut tmp[..ci * np]);
                    for c in 0..ci {
                        gx[c * npos + p0..c * npos + p1].copy_from_slice(&tmp[c * np..(c + 1) * np]);
                    }
                }
                if want_w {
                    let xview = MatRef {
                        data: &xn[p0..],
                        rows: ci,
                        cols: np,
                        rs: npos as isize,
                        cs: 1,
                    };
                    gemm(1.0, xview, cview.t(), 1.0, &mut gw);
                }
            }
            (gx, gw)
        });
        let (gxs, gws): (Vec<_>, Vec<_>) = parts.into_iter().unzip();
        let gx = want_x.then(|| gxs.concat());
        let gw = want_w.then(|| sum_partials(gws, ci * rows));
        let mut res = vec![gx, gw];
        if let Some(b) = self.b {
            let co = out.shape()[1];
            let hw = pat.h * pat.w;
            res.push(g.requires_grad(b).then(|| {
                let mut gb = vec![0.0; co];
                for (i, chunk) in go.chunks(hw).enumerate() {
                    gb[i % co] += chunk.iter().sum::<f64>();
                }
                gb
            }));
        }
        res
    }
}

fn check_bias(g: &Graph, op: &'static str, b: Option<Var>, channels: usize) -> Result<()> {
    if let Some(b) = b {
        if g.shape(b) != [channels] {
            return Err(Error::shape(
                op,
                format!("bias has shape {:?}, output channels = {channels}", g.shape(b)),
            ));
        }
    }
    Ok(())
}

impl Graph {
    /// 2-D convolution of `x: [N, C, H, W]` with `w: [O, C, kh, kw]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, geo: Conv2dGeometry) -> Result<Var> {
        geo.validate("conv2d")?;
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if xs.len() != 4 || ws.len() != 4 {
            return Err(Error::shape(
                "conv2d",
                format!("expected x [N,C,H,W] and w [O,C,kh,kw], got {xs:?} and {ws:?}"),
            ));
        }
        if xs[1] != ws[1] {
            return Err(Error::shape(
                "conv2d",
                format!("input channels C: x has {}, weight expects {}", xs[1], ws[1]),
            ));
        }
        check_bias(self, "conv2d", b, ws[0])?;
        let ho = geo.conv_out("conv2d", xs[2], ws[2], 0)?;
        let wo = geo.conv_out("conv2d", xs[3], ws[3], 1)?;
        let pat = Patches {
            c: xs[1],
            h: xs[2],
            w: xs[3],
            kh: ws[2],
            kw: ws[3],
            ho,
            wo,
            geo,
        };
        let (n, o, rows, npos) = (xs[0], ws[0], pat.rows(), pat.positions());
        let in_len = pat.c * pat.h * pat.w;
        let xd = self.value(x).data();
        let wd = self.value(w).data();
        let bd = b.map(|b| self.value(b).data());
        let mut out = vec![0.0; n * o * npos];
        let direct = Direct::new(pat);
        parallel::for_each_chunk_mut(&mut out, o * npos, |ni, on| {
            let img = &xd[ni * in_len..(ni + 1) * in_len];
            if let Some(d) = direct {
                d.forward(img, wd, bd, o, on);
                return;
            }
            let step = pat.chunk();
            let mut cols = vec![0.0; rows * step];
            let mut tmp = vec![0.0; o * step];
            for (p0, p1) in chunks(npos, step) {
                let np = p1 - p0;
                pat.im2col(img, p0, p1, &mut cols[..rows * np]);
                gemm(
                    1.0,
                    MatRef::row_major(wd, o, rows),
                    MatRef::row_major(&cols[..rows * np], rows, np),
                    0.0,
                    &mut tmp[..o * np],
                );
                for oc in 0..o {
                    let bias = bd.map_or(0.0, |b| b[oc]);
                    let dst = &mut on[oc * npos + p0..oc * npos + p1];
                    for (d, s) in dst.iter_mut().zip(&tmp[oc * np..(oc + 1) * np]) {
                        *d = s + bias;
                    }
                }
            }
        });
        let t = Tensor::new(vec![n, o, ho, wo], out)?;
        Ok(self.push(t, Conv2d { x, w, b, pat, out_c: o }))
    }

    /// Transposed 2-D convolution of `x: [N, Cin, H, W]` with
    /// `w: [Cin, Cout, kh, kw]`; the adjoint of [`Graph::conv2d`] with the
    /// same geometry, plus `output_padding` extra rows/columns at the end.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Option<Var>, geo: Conv2dGeometry) -> Result<Var> {
        geo.validate("conv_transpose2d")?;
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if xs.len() != 4 || ws.len() != 4 {
            return Err(Error::shape(
                "conv_transpose2d",
                format!("expected x [N,Cin,H,W] and w [Cin,Cout,kh,kw], got {xs:?} and {ws:?}"),
            ));
        }
        if xs[1] != ws[0] {
            return Err(Error::shape(
                "conv_transpose2d",
                format!("input channels Cin: x has {}, weight expects {}", xs[1], ws[0]),
            ));
        }
        if xs[2] == 0 || xs[3] == 0 {
            return Err(Error::shape("conv_transpose2d", "empty input"));
        }
        check_bias(self, "conv_transpose2d", b, ws[1])?;
        let ho = geo.transposed_out("conv_transpose2d", xs[2], ws[2], 0)?;
        let wo = geo.transposed_out("conv_transpose2d", xs[3], ws[3], 1)?;
        let pat = Patches {
            c: ws[1],
            h: ho,
            w: wo,
            kh: ws[2],
            kw: ws[3],
            ho: xs[2],
            wo: xs[3],
            geo,
        };
        let (n, ci, rows, npos) = (xs[0], xs[1], pat.rows(), pat.positions());
        let out_len = pat.c * ho * wo;
        let xd = self.value(x).data();
        let wd = self.value(w).data();
        let bd = b.map(|b| self.value(b).data());
        let mut out = vec![0.0; n * out_len];
        parallel::for_each_chunk_mut(&mut out, out_len, |ni, on| {
            let xn = &xd[ni * ci * npos..(ni + 1) * ci * npos];
            let step = pat.chunk();
            let mut cols = vec![0.0; rows * step];
            for (p0, p1) in chunks(npos, step) {
                let np = p1 - p0;
                let xview = MatRef {
                    data: &xn[p0..],
                    rows: ci,
                    cols: np,
                    rs: npos as isize,
                    cs: 1,
                };
                gemm(1.0, MatRef::row_major(wd, ci, rows).t(), xview, 0.0, &mut cols[..rows * np]);
                pat.col2im(&cols[..rows * np], p0, p1, on);
            }
            if let Some(bd) = bd {
                for (c, plane) in on.chunks_mut(ho * wo).enumerate() {
                    plane.iter_mut().for_each(|v| *v += bd[c]);
                }
            }
        });
        let t = Tensor::new(vec![n, pat.c, ho, wo], out)?;
        Ok(self.push(t, ConvTranspose2d { x, w, b, pat, in_c: ci }))
    }
}

struct Conv1d {
    x: Var,
    w: Var,
    b: Option<Var>,
    groups: usize,
    pad_left: usize,
}

struct Conv1dDims {
    batch: usize,
    len: usize,
    cin: usize,
    cout: usize,
    width: usize,
    out_len: usize,
    cin_per_group: usize,
    cout_per_group: usize,
}

impl Conv1d {
    fn dims(&self, g: &Graph, out_len: usize) -> Conv1dDims {
        let xs = g.shape(self.x);
        let ws = g.shape(self.w);
        Conv1dDims {
            batch: xs[0],
            len: xs[1],
            cin: xs[2],
            cout: ws[0],
            width: ws[2],
            out_len,
            cin_per_group: ws[1],
            cout_per_group: ws[0] / self.groups,
        }
    }
}

/// Valid output rows `l0..l1` for tap `t`, i.e. those reading inside `0..len`.
fn tap_range(t: usize, pad_left: usize, len: usize, out_len: usize) -> (usize, usize) {
    let l0 = pad_left.saturating_sub(t);
    let l1 = (len + pad_left).saturating_sub(t).min(out_len);
    (l0, l1.max(l0))
}

impl Backward for Conv1d {
    fn name(&self) -> &'static str {
        "conv1d"
    }
    fn inputs(&self) -> Vec<Var> {
        let mut v = vec![self.x, self.w];
        v.extend(self.b);
        v
    }
    fn backward(&self, g: &Graph, out: &Tensor, go: &[f64]) -> Vec<Option<Vec<f64>>> {
        let d = self.dims(g, out.shape()[1]);
        let x = g.value(self.x).data();
        let w = g.value(self.w).data();
        let mut gx = vec![0.0; x.len()];
        let mut gw = vec![0.0; w.len()];
        if self.groups == 1 {
            let mut tmp = vec![0.0; d.cout * d.cin];
            for b in 0..d.batch {
                for t in 0..d.width {
                    let (l0, l1) = tap_range(t, self.pad_left, d.len, d.out_len);
                    if l1 <= l0 {
                        continue;
                    }
                    let rows = l1 - l0;
                    let s0 = l0 + t - self.pad_left;
                    let grows = &go[(b * d.out_len + l0) * d.cout..(b * d.out_len + l1) * d.cout];
                    let xrows = &x[(b * d.len + s0) * d.cin..(b * d.len + s0 + rows) * d.cin];
                    let wt = MatRef {
                        data: &w[t..],
                        rows: d.cout,
                        cols: d.cin,
                        rs: (d.cin * d.width) as isize,
                        cs: d.width as isize,
                    };
                    let gxr = &mut gx[(b * d.len + s0) * d.cin..(b * d.len + s0 + rows) * d.cin];
                    gemm(1.0, MatRef::row_major(grows, rows, d.cout), wt, 1.0, gxr);
                    gemm(
                        1.0,
                        MatRef::row_major(grows, rows, d.cout).t(),
                        MatRef::row_major(xrows, rows, d.cin),
                        0.0,
                        &mut tmp,
                    );
                    for o in 0..d.cout {
                        for c in 0..d.cin {
                            gw[(o * d.cin + c) * d.width + t] += tmp[o * d.cin + c];
                        }
                    }
                }
            }
        } else {
            for b in 0..d.batch {
                for l in 0..d.out_len {
                    for o in 0..d.cout {
                        let gz = go[(b * d.out_len + l) * d.cout + o];
                        let grp = o / d.cout_per_group;
                        for t in 0..d.width {
                            let src = l + t;
                            if src < self.pad_left || src - self.pad_left >= d.len {
                                continue;
                            }
                            let src = src - self.pad_left;
                            for ci in 0..d.cin_per_group {
                                let xi = (b * d.len + src) * d.cin + grp * d.cin_per_group + ci;
                                let wi = (o * d.cin_per_group + ci) * d.width + t;
                                gx[xi] += gz * w[wi];
                                gw[wi] += gz * x[xi];
                            }
                        }
                    }
                }
            }
        }
        let mut res = vec![Some(gx), Some(gw)];
        if let Some(b) = self.b {
            let mut gb = vec![0.0; d.cout];
            for row in go.chunks(d.cout) {
                add_into(&mut gb, row);
            }
            res.push(g.requires_grad(b).then_some(gb));
        }
        res
    }
}

impl Graph {
    /// 1-D convolution along the sequence axis of channels-last input
    /// `x: [B, L, Cin]` with `w: [Cout, Cin/groups, width]`. `groups = Cin =
    /// Cout` gives a per-channel (depthwise) filter; `pad_left = width - 1,
    /// pad_right = 0` makes it causal.
    pub fn conv1d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        groups: usize,
        pad_left: usize,
        pad_right: usize,
    ) -> Result<Var> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if xs.len() != 3 || ws.len() != 3 {
            return Err(Error::shape(
                "conv1d",
                format!("expected x [B,L,Cin] and w [Cout,Cin/groups,width], got {xs:?} and {ws:?}"),
            ));
        }
        if groups == 0 || xs[2] % groups != 0 || ws[0] % groups != 0 || ws[1] * groups != xs[2] {
            return Err(Error::shape(
                "conv1d",
                format!(
                    "channels: Cin = {}, Cout = {}, weight Cin/groups = {}, groups = {groups}",
                    xs[2], ws[0], ws[1]
                ),
            ));
        }
        if ws[2] == 0 || xs[1] + pad_left + pad_right < ws[2] {
            return Err(Error::shape("conv1d", "sequence shorter than the kernel width"));
        }
        check_bias(self, "conv1d", b, ws[0])?;
        let op = Conv1d {
            x,
            w,
            b,
            groups,
            pad_left,
        };
        let out_len = xs[1] + pad_left + pad_right - ws[2] + 1;
        let d = op.dims(self, out_len);
        let xd = self.value(x).data();
        let wd = self.value(w).data();
        let bd = b.map(|b| self.value(b).data());
        let mut out = vec![0.0; d.batch * out_len * d.cout];
        if let Some(bd) = bd {
            for row in out.chunks_mut(d.cout) {
                row.copy_from_slice(bd);
            }
        }
        if groups == 1 {
            for bi in 0..d.batch {
                for t in 0..d.width {
                    let (l0, l1) = tap_range(t, pad_left, d.len, out_len);
                    if l1 <= l0 {
                        continue;
                    }
                    let rows = l1 - l0;
                    let s0 = l0 + t - pad_left;
                    let xrows = &xd[(bi * d.len + s0) * d.cin..(bi * d.len + s0 + rows) * d.cin];
                    let wt = MatRef {
                        data: &wd[t..],
                        rows: d.cin,
                        cols: d.cout,
                        rs: d.width as isize,
                        cs: (d.cin * d.width) as isize,
                    };
                    let orows = &mut out[(bi * out_len + l0) * d.cout..(bi * out_len + l1) * d.cout];
                    gemm(1.0, MatRef::row_major(xrows, rows, d.cin), wt, 1.0, orows);
                }
            }
        } else {
            for bi in 0..d.batch {
                for l in 0..out_len {
                    for o in 0..d.cout {
                        let grp = o / d.cout_per_group;
                        let mut acc = 0.0;
                        for t in 0..d.width {
                            let src = l + t;
                            if src < pad_left || src - pad_left >= d.len {
                                continue;
                            }
                            let src = src - pad_left;
                            for ci in 0..d.cin_per_group {
                                acc += xd[(bi * d.len + src) * d.cin + grp * d.cin_per_group + ci]
                                    * wd[(o * d.cin_per_group + ci) * d.width + t];
                            }
                        }
                        out[(bi * out_len + l) * d.cout + o] += acc;
                    }
                }
            }
        }
        let t = Tensor::new(vec![d.batch, out_len, d.cout], out)?;
        Ok(self.push(t, op))
    }
}
