//! Slice-level NCHW kernels (im2col convolution, pooling) used by the tape.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeom {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub dilation: usize,
    pub groups: usize,
}

impl ConvGeom {
    /// "Same" padding for odd kernels.
    pub fn same(kernel: usize, stride: usize) -> Self {
        Self { kernel, stride, pad: kernel / 2, dilation: 1, groups: 1 }
    }

    pub fn depthwise(kernel: usize, stride: usize, dilation: usize, channels: usize) -> Self {
        Self { kernel, stride, pad: dilation * (kernel - 1) / 2, dilation, groups: channels }
    }

    pub fn out_dim(&self, size: usize) -> usize {
        let span = self.dilation * (self.kernel - 1) + 1;
        (size + 2 * self.pad).saturating_sub(span) / self.stride + 1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PoolGeom {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl PoolGeom {
    pub fn out_dim(&self, size: usize) -> usize {
        (size + 2 * self.pad - self.kernel) / self.stride + 1
    }
}

/// Column buffer for one group of one sample: rows are (ci, ky, kx), columns
/// are output positions.
fn im2col(x: &[f64], h: usize, w: usize, cg: usize, g: &ConvGeom, oh: usize, ow: usize, col: &mut [f64]) {
    let k = g.kernel;
    let p = oh * ow;
    for ci in 0..cg {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut col[((ci * k + ky) * k + kx) * p..][..p];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky * g.dilation) as isize - g.pad as isize;
                    let dst = &mut row[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    // Valid outputs satisfy 0 <= ox·s + off < w.
                    let off = (kx * g.dilation) as isize - g.pad as isize;
                    let s = g.stride as isize;
                    let first = if off >= 0 { 0 } else { ((-off + s - 1) / s) as usize }.min(ow);
                    let last = if (w as isize) > off { (((w as isize - off) + s - 1) / s) as usize } else { 0 }.clamp(first, ow);
                    dst[..first].fill(0.0);
                    dst[last..].fill(0.0);
                    if g.stride == 1 {
                        let start = (first as isize + off) as usize;
                        dst[first..last].copy_from_slice(&src[start..start + (last - first)]);
                    } else {
                        for (ox, d) in dst.iter_mut().enumerate().take(last).skip(first) {
                            *d = src[(ox as isize * s + off) as usize];
                        }
                    }
                }
            }
        }
    }
}

fn col2im(col: &[f64], h: usize, w: usize, cg: usize, g: &ConvGeom, oh: usize, ow: usize, dx: &mut [f64]) {
    let k = g.kernel;
    let p = oh * ow;
    for ci in 0..cg {
        let plane = &mut dx[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &col[((ci * k + ky) * k + kx) * p..][..p];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky * g.dilation) as isize - g.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kx * g.dilation) as isize - g.pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += row[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Column-buffer budget in elements; batches are processed in chunks of
/// samples so that `kk · chunk · p` stays below it.
const COL_BUDGET: usize = 1 << 21;

fn chunk_len(n: usize, kk: usize, p: usize) -> usize {
    (COL_BUDGET / (kk * p).max(1)).clamp(1, n.max(1))
}

/// Columns for samples `s0..s0+m` of one group: row `kidx` holds the `m · p`
/// positions sample-major.
#[allow(clippy::too_many_arguments)]
fn im2col_chunk(
    x: &[f64],
    xs: [usize; 4],
    grp: usize,
    cg: usize,
    g: &ConvGeom,
    oh: usize,
    ow: usize,
    s0: usize,
    m: usize,
    col: &mut [f64],
    tmp: &mut [f64],
) {
    let [_, c, h, w] = xs;
    let p = oh * ow;
    let kk = cg * g.kernel * g.kernel;
    for j in 0..m {
        let xin = &x[((s0 + j) * c + grp * cg) * h * w..][..cg * h * w];
        im2col(xin, h, w, cg, g, oh, ow, tmp);
        for kidx in 0..kk {
            col[kidx * m * p + j * p..][..p].copy_from_slice(&tmp[kidx * p..(kidx + 1) * p]);
        }
    }
}

/// Columns per cache tile of the GEMM loops.
const TILE: usize = 128;

/// Scatter column `c` of a chunk (`c = j·p + q`) back to `[n, o, p]`.
fn scatter(out: &mut [f64], o: usize, p: usize, s0: usize, oc: usize, t0: usize, vals: &[f64]) {
    for (i, &v) in vals.iter().enumerate() {
        let c = t0 + i;
        let (j, q) = (c / p, c % p);
        out[((s0 + j) * o + oc) * p + q] = v;
    }
}

/// `x: [n, c, h, w]`, `wt: [o, c / groups, k, k]` -> `[n, o, oh, ow]`.
pub fn conv2d_forward(x: &[f64], xs: [usize; 4], wt: &[f64], o: usize, g: &ConvGeom) -> (Vec<f64>, [usize; 4]) {
    let [n, c, h, w] = xs;
    let (oh, ow) = (g.out_dim(h), g.out_dim(w));
    let cg = c / g.groups;
    let og = o / g.groups;
    let kk = cg * g.kernel * g.kernel;
    let p = oh * ow;
    let mut out = vec![0.0; n * o * p];
    let chunk = chunk_len(n, kk, p);
    let mut col = vec![0.0; kk * chunk * p];
    let mut tmp = vec![0.0; kk * p];
    let mut acc = [[0.0f64; TILE]; 4];
    for s0 in (0..n).step_by(chunk) {
        let m = chunk.min(n - s0);
        let len = m * p;
        for grp in 0..g.groups {
            im2col_chunk(x, xs, grp, cg, g, oh, ow, s0, m, &mut col, &mut tmp);
            for t0 in (0..len).step_by(TILE) {
                let tl = TILE.min(len - t0);
                for oc0 in (grp * og..(grp + 1) * og).step_by(4) {
                    let rows = (oc0 + 4).min((grp + 1) * og) - oc0;
                    for a in acc.iter_mut().take(rows) {
                        a[..tl].fill(0.0);
                    }
                    if rows == 4 {
                        let wr: [&[f64]; 4] = std::array::from_fn(|r| &wt[(oc0 + r) * kk..(oc0 + r + 1) * kk]);
                        let [a0, a1, a2, a3] = &mut acc;
                        for k in 0..kk {
                            let (w0, w1, w2, w3) = (wr[0][k], wr[1][k], wr[2][k], wr[3][k]);
                            let src = &col[k * len + t0..][..tl];
                            for i in 0..tl {
                                let v = src[i];
                                a0[i] += w0 * v;
                                a1[i] += w1 * v;
                                a2[i] += w2 * v;
                                a3[i] += w3 * v;
                            }
                        }
                    } else {
                        for r in 0..rows {
                            let wrow = &wt[(oc0 + r) * kk..(oc0 + r + 1) * kk];
                            for (k, &wv) in wrow.iter().enumerate() {
                                for (d, &v) in acc[r][..tl].iter_mut().zip(&col[k * len + t0..][..tl]) {
                                    *d += wv * v;
                                }
                            }
                        }
                    }
                    for r in 0..rows {
                        scatter(&mut out, o, p, s0, oc0 + r, t0, &acc[r][..tl]);
                    }
                }
            }
        }
    }
    (out, [n, o, oh, ow])
}

/// Returns `(dx, dw)`.
pub fn conv2d_backward(x: &[f64], xs: [usize; 4], wt: &[f64], o: usize, g: &ConvGeom, dout: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let [n, c, h, w] = xs;
    let (oh, ow) = (g.out_dim(h), g.out_dim(w));
    let cg = c / g.groups;
    let og = o / g.groups;
    let kk = cg * g.kernel * g.kernel;
    let p = oh * ow;
    let mut dx = vec![0.0; x.len()];
    let mut dw = vec![0.0; wt.len()];
    let chunk = chunk_len(n, kk.max(og), p);
    let mut col = vec![0.0; kk * chunk * p];
    let mut dcol = vec![0.0; kk * chunk * p];
    let mut tmp = vec![0.0; kk * p];
    let mut dy = vec![0.0; og * chunk * p];
    for s0 in (0..n).step_by(chunk) {
        let m = chunk.min(n - s0);
        let len = m * p;
        for grp in 0..g.groups {
            im2col_chunk(x, xs, grp, cg, g, oh, ow, s0, m, &mut col, &mut tmp);
            for r in 0..og {
                let oc = grp * og + r;
                for j in 0..m {
                    dy[r * len + j * p..][..p].copy_from_slice(&dout[((s0 + j) * o + oc) * p..][..p]);
                }
            }
            let dcolm = &mut dcol[..kk * len];
            dcolm.fill(0.0);
            for t0 in (0..len).step_by(TILE) {
                let tl = TILE.min(len - t0);
                for r in 0..og {
                    let oc = grp * og + r;
                    let dyt = &dy[r * len + t0..][..tl];
                    let wrow = &wt[oc * kk..(oc + 1) * kk];
                    let dwrow = &mut dw[oc * kk..(oc + 1) * kk];
                    for k in 0..kk {
                        let ct = &col[k * len + t0..][..tl];
                        let mut acc = 0.0;
                        for i in 0..tl {
                            acc += ct[i] * dyt[i];
                        }
                        dwrow[k] += acc;
                        let wv = wrow[k];
                        if wv != 0.0 {
                            for (d, &v) in dcolm[k * len + t0..][..tl].iter_mut().zip(dyt) {
                                *d += wv * v;
                            }
                        }
                    }
                }
            }
            for j in 0..m {
                for kidx in 0..kk {
                    tmp[kidx * p..(kidx + 1) * p].copy_from_slice(&dcolm[kidx * len + j * p..][..p]);
                }
                let dxin = &mut dx[((s0 + j) * c + grp * cg) * h * w..][..cg * h * w];
                col2im(&tmp, h, w, cg, g, oh, ow, dxin);
            }
        }
    }
    (dx, dw)
}

/// Average pooling that excludes padded cells from the divisor.
pub fn avg_pool_forward(x: &[f64], xs: [usize; 4], g: &PoolGeom) -> (Vec<f64>, [usize; 4]) {
    let [n, c, h, w] = xs;
    let (oh, ow) = (g.out_dim(h), g.out_dim(w));
    let mut out = vec![0.0; n * c * oh * ow];
    for plane in 0..n * c {
        let src = &x[plane * h * w..(plane + 1) * h * w];
        let dst = &mut out[plane * oh * ow..(plane + 1) * oh * ow];
        for oy in 0..oh {
            for ox in 0..ow {
                let (mut acc, mut cnt) = (0.0, 0usize);
                for_window(g, oy, ox, h, w, |iy, ix| {
                    acc += src[iy * w + ix];
                    cnt += 1;
                });
                dst[oy * ow + ox] = if cnt > 0 { acc / cnt as f64 } else { 0.0 };
            }
        }
    }
    (out, [n, c, oh, ow])
}

pub fn avg_pool_backward(xs: [usize; 4], g: &PoolGeom, dout: &[f64]) -> Vec<f64> {
    let [n, c, h, w] = xs;
    let (oh, ow) = (g.out_dim(h), g.out_dim(w));
    let mut dx = vec![0.0; n * c * h * w];
    for plane in 0..n * c {
        let dst = &mut dx[plane * h * w..(plane + 1) * h * w];
        let dy = &dout[plane * oh * ow..(plane + 1) * oh * ow];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut cnt = 0usize;
                for_window(g, oy, ox, h, w, |_, _| cnt += 1);
                if cnt == 0 {
                    continue;
                }
                let gshare = dy[oy * ow + ox] / cnt as f64;
                for_window(g, oy, ox, h, w, |iy, ix| dst[iy * w + ix] += gshare);
            }
        }
    }
    dx
}

/// Max pooling; also returns the flat input index chosen for every output.
pub fn max_pool_forward(x: &[f64], xs: [usize; 4], g: &PoolGeom) -> (Vec<f64>, Vec<usize>, [usize; 4]) {
    let [n, c, h, w] = xs;
    let (oh, ow) = (g.out_dim(h), g.out_dim(w));
    let mut out = vec![0.0; n * c * oh * ow];
    let mut arg = vec![0usize; n * c * oh * ow];
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let (mut best, mut best_i) = (f64::NEG_INFINITY, usize::MAX);
                for_window(g, oy, ox, h, w, |iy, ix| {
                    let v = x[base + iy * w + ix];
                    if v > best || best_i == usize::MAX {
                        best = v;
                        best_i = base + iy * w + ix;
                    }
                });
                let o = plane * oh * ow + oy * ow + ox;
                out[o] = best;
                arg[o] = best_i;
            }
        }
    }
    (out, arg, [n, c, oh, ow])
}

fn for_window(g: &PoolGeom, oy: usize, ox: usize, h: usize, w: usize, mut f: impl FnMut(usize, usize)) {
    for ky in 0..g.kernel {
        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
        if iy < 0 || iy >= h as isize {
            continue;
        }
        for kx in 0..g.kernel {
            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
            if ix < 0 || ix >= w as isize {
                continue;
            }
            f(iy as usize, ix as usize);
        }
    }
}
