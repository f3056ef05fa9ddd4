//! Convolution and max-pooling kernels.
//!
//! Convolutions run as im2col over tiles of output rows followed by a GEMM;
//! tiles are sized so scratch memory stays bounded even at full input
//! length.
//!
//! `Padding::Same` pads so that the output extent is `ceil(in / stride)`.
//! When the total padding along an axis is odd the extra zero goes on the
//! trailing side: a kernel of height 2 pads 0 rows above and 1 below, a
//! kernel of width 3 pads 1 column on each side.

use std::rc::Rc;

use super::ops::gemm;
use super::{Tensor, Var};
use crate::error::{dim_err, Result};

/// Zero-padding convention for 2D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    Valid,
    Same,
}

/// Returns `(pad_before, out_extent)` for one axis.
fn axis_geometry(len: usize, k: usize, stride: usize, mode: Padding) -> Option<(usize, usize)> {
    match mode {
        Padding::Valid => (len >= k).then(|| (0, (len - k) / stride + 1)),
        Padding::Same => {
            let out = len.div_ceil(stride);
            let total = ((out - 1) * stride + k).saturating_sub(len);
            Some((total / 2, out))
        }
    }
}

/// Scratch elements for one im2col tile.
const COL_BUDGET: usize = 1 << 20;

#[derive(Clone, Copy, Debug)]
struct Geometry {
    batch: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad_top: usize,
    pad_left: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn ckk(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    /// Output rows per GEMM tile, keeping the im2col buffer near `COL_BUDGET`.
    fn tile_rows(&self) -> usize {
        (COL_BUDGET / (self.ckk() * self.ow).max(1)).clamp(1, self.oh)
    }

    /// Input columns `[lo, hi)` of output positions that land inside the
    /// image for kernel column `kj` (stride 1 only).
    fn valid_span(&self, kj: usize) -> (usize, usize) {
        let lo = self.pad_left.saturating_sub(kj).min(self.ow);
        let hi = (self.w + self.pad_left).saturating_sub(kj).min(self.ow).max(lo);
        (lo, hi)
    }

    /// Fills `cols` (`ckk × (rows·ow)`) with the receptive fields of output
    /// rows `oh0 .. oh0 + rows`.
    fn im2col(&self, x: &[f64], b: usize, oh0: usize, rows: usize, cols: &mut [f64]) {
        let (h, w, ow) = (self.h as isize, self.w as isize, self.ow);
        let ld = rows * ow;
        for ci in 0..self.cin {
            let plane = &x[(b * self.cin + ci) * self.h * self.w..][..self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let kk = (ci * self.kh + ki) * self.kw + kj;
                    for r in 0..rows {
                        let dst = &mut cols[kk * ld + r * ow..][..ow];
                        let row = ((oh0 + r) * self.stride + ki) as isize - self.pad_top as isize;
                        if row < 0 || row >= h {
                            dst.fill(0.0);
                            continue;
                        }
                        let src = &plane[row as usize * self.w..][..self.w];
                        if self.stride == 1 {
                            let (lo, hi) = self.valid_span(kj);
                            dst[..lo].fill(0.0);
                            dst[hi..].fill(0.0);
                            let off = lo + kj - self.pad_left;
                            dst[lo..hi].copy_from_slice(&src[off..off + hi - lo]);
                        } else {
                            for (o, d) in dst.iter_mut().enumerate() {
                                let col = (o * self.stride + kj) as isize - self.pad_left as isize;
                                *d = if col < 0 || col >= w { 0.0 } else { src[col as usize] };
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f64], b: usize, oh0: usize, rows: usize, gx: &mut [f64]) {
        let (h, w, ow) = (self.h as isize, self.w as isize, self.ow);
        let ld = rows * ow;
        for ci in 0..self.cin {
            let plane = &mut gx[(b * self.cin + ci) * self.h * self.w..][..self.h * self.w];
            for ki in 0..self.kh {
                for r in 0..rows {
                    let row = ((oh0 + r) * self.stride + ki) as isize - self.pad_top as isize;
                    if row < 0 || row >= h {
                        continue;
                    }
                    let dst = &mut plane[row as usize * self.w..][..self.w];
                    for kj in 0..self.kw {
                        let src = &cols[((ci * self.kh + ki) * self.kw + kj) * ld + r * ow..][..ow];
                        if self.stride == 1 {
                            let (lo, hi) = self.valid_span(kj);
                            let off = lo + kj - self.pad_left;
                            for (d, s) in dst[off..off + hi - lo].iter_mut().zip(&src[lo..hi]) {
                                *d += s;
                            }
                        } else {
                            for (o, s) in src.iter().enumerate() {
                                let col = (o * self.stride + kj) as isize - self.pad_left as isize;
                                if col >= 0 && col < w {
                                    dst[col as usize] += s;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

fn conv_forward(g: &Geometry, x: &[f64], wt: &[f64], bias: Option<&[f64]>) -> Vec<f64> {
    let plane = g.oh * g.ow;
    let mut y = vec![0.0; g.batch * g.cout * plane];
    if let Some(bias) = bias {
        for (chunk, &bv) in y.chunks_exact_mut(plane).zip(bias.iter().cycle()) {
            chunk.fill(bv);
        }
    }
    let tile = g.tile_rows();
    let mut cols = vec![0.0; g.ckk() * g.ow * tile];
    for b in 0..g.batch {
        for oh0 in (0..g.oh).step_by(tile) {
            let rows = tile.min(g.oh - oh0);
            let n = rows * g.ow;
            g.im2col(x, b, oh0, rows, &mut cols);
            let out = &mut y[b * g.cout * plane + oh0 * g.ow..];
            gemm(g.cout, g.ckk(), n, wt, (g.ckk(), 1), &cols, (n, 1), 1.0, out, (plane, 1));
        }
    }
    y
}

impl<'t> Var<'t> {
    /// 2D convolution of `[B, C_in, H, W]` (or unbatched `[C_in, H, W]`) with
    /// kernels `[C_out, C_in, kh, kw]`.
    pub fn conv2d(
        &self,
        kernels: &Var<'t>,
        bias: Option<&Var<'t>>,
        stride: usize,
        padding: Padding,
    ) -> Result<Var<'t>> {
        let s = self.shape();
        let ks = kernels.shape();
        let batched = match s.len() {
            4 => true,
            3 => false,
            r => return dim_err("conv2d", format!("input rank {r}")),
        };
        let (batch, rest) = if batched { (s[0], &s[1..]) } else { (1, s) };
        if ks.len() != 4 || ks[1] != rest[0] {
            return dim_err("conv2d", format!("input {s:?} with kernels {ks:?}"));
        }
        if stride == 0 {
            return dim_err("conv2d", "stride must be at least 1");
        }
        if let Some(b) = bias {
            if b.shape() != [ks[0]] {
                return dim_err("conv2d", format!("bias {:?} for {} kernels", b.shape(), ks[0]));
            }
        }
        let (h, w) = (rest[1], rest[2]);
        let (Some((pad_top, oh)), Some((pad_left, ow))) = (
            axis_geometry(h, ks[2], stride, padding),
            axis_geometry(w, ks[3], stride, padding),
        ) else {
            return dim_err("conv2d", format!("kernel {:?} larger than input {:?}", &ks[2..], &rest[1..]));
        };
        let g = Geometry {
            batch,
            cin: rest[0],
            h,
            w,
            cout: ks[0],
            kh: ks[2],
            kw: ks[3],
            stride,
            pad_top,
            pad_left,
            oh,
            ow,
        };
        let y = conv_forward(&g, self.data(), kernels.data(), bias.map(|b| b.data()));
        let shape = if batched {
            vec![batch, g.cout, oh, ow]
        } else {
            vec![g.cout, oh, ow]
        };
        let x = Rc::clone(&self.value);
        let wt = Rc::clone(&kernels.value);
        let mut parents = vec![self, kernels];
        if let Some(b) = bias {
            parents.push(b);
        }
        self.tape
            .push("conv2d", Tensor::new(&shape, y)?, &parents, move |gout, need| {
                conv_backward(&g, x.data(), wt.data(), gout, need)
            })
    }

    /// 1D valid convolution of `[B, C_in, L]` (or `[C_in, L]`) with kernels
    /// `[C_out, C_in, K]`; output length `floor((L - K) / stride) + 1`.
    pub fn conv1d(&self, kernels: &Var<'t>, stride: usize) -> Result<Var<'t>> {
        let s = self.shape().to_vec();
        let ks = kernels.shape().to_vec();
        if !(s.len() == 2 || s.len() == 3) || ks.len() != 3 {
            return dim_err("conv1d", format!("input {s:?} with kernels {ks:?}"));
        }
        let l = *s.last().unwrap();
        if l < ks[2] {
            return dim_err("conv1d", format!("kernel length {} exceeds input length {l}", ks[2]));
        }
        let mut s4 = s.clone();
        s4.insert(s.len() - 1, 1);
        let k4 = kernels.reshape(&[ks[0], ks[1], 1, ks[2]])?;
        let y = self
            .reshape(&s4)?
            .conv2d(&k4, None, stride, Padding::Valid)?;
        let mut out = y.shape().to_vec();
        out.remove(out.len() - 2);
        y.reshape(&out)
    }

    /// Non-overlapping max-pooling over the two trailing axes; remainders are
    /// discarded. Gradient is routed to the first maximum of each window.
    pub fn maxpool2d(&self, window: (usize, usize)) -> Result<Var<'t>> {
        let s = self.shape();
        if s.len() < 2 {
            return dim_err("maxpool2d", format!("input rank {}", s.len()));
        }
        let (ph, pw) = window;
        let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
        if ph == 0 || pw == 0 || h < ph || w < pw {
            return dim_err("maxpool2d", format!("window {window:?} on extent ({h}, {w})"));
        }
        let (oh, ow) = (h / ph, w / pw);
        let planes = self.value.numel() / (h * w);
        let x = self.data();
        let mut y = vec![0.0; planes * oh * ow];
        let mut arg = vec![0u32; planes * oh * ow];
        for p in 0..planes {
            let base = p * h * w;
            for i in 0..oh {
                for j in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut at = 0usize;
                    for di in 0..ph {
                        let row = base + (i * ph + di) * w + j * pw;
                        for (dj, &v) in x[row..row + pw].iter().enumerate() {
                            if v > best {
                                best = v;
                                at = (i * ph + di) * w + j * pw + dj;
                            }
                        }
                    }
                    let o = (p * oh + i) * ow + j;
                    y[o] = best;
                    arg[o] = at as u32;
                }
            }
        }
        let mut shape = s.to_vec();
        let r = shape.len();
        shape[r - 2] = oh;
        shape[r - 1] = ow;
        let n_in = self.value.numel();
        self.tape
            .push("maxpool2d", Tensor::new(&shape, y)?, &[self], move |g, _| {
                let mut gx = vec![0.0; n_in];
                let per = oh * ow;
                for (o, (&a, &gi)) in arg.iter().zip(g).enumerate() {
                    gx[(o / per) * h * w + a as usize] += gi;
                }
                vec![Some(gx)]
            })
    }
}

fn conv_backward(g: &Geometry, x: &[f64], wt: &[f64], gout: &[f64], need: &[bool]) -> Vec<Option<Vec<f64>>> {
    let plane = g.oh * g.ow;
    let ckk = g.ckk();
    let mut gx = need[0].then(|| vec![0.0; x.len()]);
    let mut gw = need[1].then(|| vec![0.0; wt.len()]);
    let tile = g.tile_rows();
    let mut cols = vec![0.0; ckk * g.ow * tile];
    for b in 0..g.batch {
        for oh0 in (0..g.oh).step_by(tile) {
            let rows = tile.min(g.oh - oh0);
            let n = rows * g.ow;
            let grow = &gout[b * g.cout * plane + oh0 * g.ow..];
            if let Some(gw) = gw.as_mut() {
                g.im2col(x, b, oh0, rows, &mut cols);
                gemm(g.cout, n, ckk, grow, (plane, 1), &cols, (1, n), 1.0, gw, (ckk, 1));
            }
            if let Some(gx) = gx.as_mut() {
                gemm(ckk, g.cout, n, wt, (1, ckk), grow, (plane, 1), 0.0, &mut cols, (n, 1));
                g.col2im(&cols, b, oh0, rows, gx);
            }
        }
    }
    let mut out = vec![gx, gw];
    if need.len() == 3 {
        out.push(need[2].then(|| {
            let mut gb = vec![0.0; g.cout];
            for (i, chunk) in gout.chunks_exact(plane).enumerate() {
                gb[i % g.cout] += chunk.iter().sum::<f64>();
            }
            gb
        }));
    }
    out
}
