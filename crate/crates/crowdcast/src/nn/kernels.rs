//! Convolution compute kernels on raw slices.
//!
//! Parallelism is only ever across disjoint output planes, and every element
//! is accumulated in a fixed loop order, so results are bitwise identical at
//! any thread count.

use crate::par;

use super::tensor::Real;

/// Shared dimensions of a (transposed) convolution.
#[derive(Debug, Clone, Copy)]
pub struct ConvDims {
    pub cin: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub ih: usize,
    pub iw: usize,
    pub oh: usize,
    pub ow: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvDims {
    /// Forward convolution dims: `oh = (ih + 2p − kh)/s + 1`.
    pub fn conv(cin: usize, cout: usize, k: usize, ih: usize, iw: usize, stride: usize, pad: usize) -> Self {
        Self {
            cin,
            cout,
            kh: k,
            kw: k,
            ih,
            iw,
            oh: (ih + 2 * pad - k) / stride + 1,
            ow: (iw + 2 * pad - k) / stride + 1,
            stride,
            pad,
        }
    }

    /// Transposed convolution dims: `oh = (ih − 1)·s − 2p + kh`.
    pub fn conv_transpose(cin: usize, cout: usize, k: usize, ih: usize, iw: usize, stride: usize, pad: usize) -> Self {
        Self {
            cin,
            cout,
            kh: k,
            kw: k,
            ih,
            iw,
            oh: (ih - 1) * stride + k - 2 * pad,
            ow: (iw - 1) * stride + k - 2 * pad,
            stride,
            pad,
        }
    }
}

/// Index range `lo..hi` of `r` in `[0, n_dst)` such that `r·s + off` lies in
/// `[0, n_src)`.
#[inline]
fn strided_range(n_dst: usize, n_src: usize, s: usize, off: i64) -> (usize, usize) {
    let s_i = s as i64;
    let lo = (-off).div_euclid(s_i).max(0) as usize;
    let lo = if (lo as i64) * s_i + off < 0 { lo + 1 } else { lo };
    let top = n_src as i64 - 1 - off;
    if top < 0 {
        return (0, 0);
    }
    let hi = ((top.div_euclid(s_i) + 1) as usize).min(n_dst);
    (lo, hi.max(lo))
}

#[inline]
fn madd_src_strided<F: Real>(dst: &mut [F], src: &[F], s: usize, c: F) {
    if s == 1 {
        for (d, &x) in dst.iter_mut().zip(src) {
            *d += c * x;
        }
    } else {
        for (d, &x) in dst.iter_mut().zip(src.iter().step_by(s)) {
            *d += c * x;
        }
    }
}

#[inline]
fn madd_dst_strided<F: Real>(dst: &mut [F], s: usize, src: &[F], c: F) {
    if s == 1 {
        for (d, &x) in dst.iter_mut().zip(src) {
            *d += c * x;
        }
    } else {
        for (d, &x) in dst.iter_mut().step_by(s).zip(src) {
            *d += c * x;
        }
    }
}

#[inline]
fn dot_src_strided<F: Real>(a: &[F], src: &[F], s: usize) -> F {
    if s == 1 {
        a.iter().zip(src).map(|(&p, &q)| p * q).sum()
    } else {
        a.iter().zip(src.iter().step_by(s)).map(|(&p, &q)| p * q).sum()
    }
}

#[inline]
fn madd<F: Real>(dst: &mut [F], src: &[F], c: F) {
    for (d, &x) in dst.iter_mut().zip(src) {
        *d += c * x;
    }
}

#[inline]
fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    a.iter().zip(b).map(|(&p, &q)| p * q).sum()
}

/// Patch matrix for 3×3 stride-1 pad-1 convolutions: row (ci·9 + ky·3 + kx)
/// holds the input plane `ci` shifted by (ky − 1, kx − 1) with zero fill, so
/// the convolution becomes one row-multiply-add per weight tap.
fn im2col_3x3<F: Real>(x: &[F], cin: usize, h: usize, w: usize, col: &mut [F]) {
    let hw = h * w;
    debug_assert_eq!(col.len(), cin * 9 * hw);
    for ci in 0..cin {
        let xp = &x[ci * hw..][..hw];
        for ky in 0..3 {
            let dy = ky as i64 - 1;
            for kx in 0..3 {
                let dx = kx as i64 - 1;
                let row = &mut col[(ci * 9 + ky * 3 + kx) * hw..][..hw];
                row.fill(F::zero());
                // ox with ox + dx inside [0, w)
                let (ox_lo, ox_hi) = ((-dx).max(0) as usize, (w as i64 - dx.max(0)) as usize);
                for oy in 0..h {
                    let iy = oy as i64 + dy;
                    if iy < 0 || iy >= h as i64 {
                        continue;
                    }
                    let src = &xp[iy as usize * w..][..w];
                    // row[oy·w + ox] = src[ox + dx] for valid ox
                    row[oy * w + ox_lo..oy * w + ox_hi]
                        .copy_from_slice(&src[(ox_lo as i64 + dx) as usize..(ox_hi as i64 + dx) as usize]);
                }
            }
        }
    }
}

fn conv2d_fwd_s1k3<F: Real>(x: &[F], w: &[F], b: Option<&[F]>, d: &ConvDims, out: &mut [F]) {
    let hw = d.ih * d.iw;
    let k = d.cin * 9;
    let mut col = vec![F::zero(); k * hw];
    im2col_3x3(x, d.cin, d.ih, d.iw, &mut col);
    par::for_each_chunk_mut(out, hw, |co, plane| {
        plane.fill(b.map_or(F::zero(), |b| b[co]));
        let wrow = &w[co * k..][..k];
        for (kk, crow) in col.chunks_exact(hw).enumerate() {
            madd(plane, crow, wrow[kk]);
        }
    });
}

fn conv2d_bwd_input_s1k3<F: Real>(dy: &[F], w: &[F], d: &ConvDims, dx: &mut [F]) {
    let hw = d.ih * d.iw;
    let k = d.cin * 9;
    // dxcol[kk][pix] = Σ_co w[co][kk] · dy[co][pix]
    let mut dxcol = vec![F::zero(); k * hw];
    par::for_each_chunk_mut(&mut dxcol, 9 * hw, |ci, block| {
        for co in 0..d.cout {
            let dyp = &dy[co * hw..][..hw];
            let wrow = &w[co * k + ci * 9..][..9];
            for (t, tap_row) in block.chunks_exact_mut(hw).enumerate() {
                madd(tap_row, dyp, wrow[t]);
            }
        }
    });
    // col2im: scatter each shifted row back onto the input plane.
    par::for_each_chunk_mut(dx, hw, |ci, dxp| {
        for ky in 0..3 {
            let dy_off = ky as i64 - 1;
            for kx in 0..3 {
                let dx_off = kx as i64 - 1;
                let row = &dxcol[(ci * 9 + ky * 3 + kx) * hw..][..hw];
                let (ox_lo, ox_hi) = ((-dx_off).max(0) as usize, (d.iw as i64 - dx_off.max(0)) as usize);
                for oy in 0..d.ih {
                    let iy = oy as i64 + dy_off;
                    if iy < 0 || iy >= d.ih as i64 {
                        continue;
                    }
                    let dst = &mut dxp[iy as usize * d.iw..][..d.iw];
                    for (ox, &v) in (ox_lo..ox_hi).zip(&row[oy * d.iw + ox_lo..oy * d.iw + ox_hi]) {
                        dst[(ox as i64 + dx_off) as usize] += v;
                    }
                }
            }
        }
    });
}

fn conv2d_bwd_weight_s1k3<F: Real>(dy: &[F], x: &[F], d: &ConvDims, dw: &mut [F]) {
    let hw = d.ih * d.iw;
    let k = d.cin * 9;
    let mut col = vec![F::zero(); k * hw];
    im2col_3x3(x, d.cin, d.ih, d.iw, &mut col);
    par::for_each_chunk_mut(dw, k, |co, dwc| {
        let dyp = &dy[co * hw..][..hw];
        for (kk, crow) in col.chunks_exact(hw).enumerate() {
            dwc[kk] += dot(dyp, crow);
        }
    });
}

/// y[co, oy, ox] = b[co] + Σ x[ci, oy·s + ky − p, ox·s + kx − p] · w[co, ci, ky, kx]
pub fn conv2d_fwd<F: Real>(x: &[F], w: &[F], b: Option<&[F]>, d: &ConvDims, out: &mut [F]) {
    if d.stride == 1 && d.kh == 3 && d.kw == 3 && d.pad == 1 {
        return conv2d_fwd_s1k3(x, w, b, d, out);
    }
    let (ihw, ohw, khw) = (d.ih * d.iw, d.oh * d.ow, d.kh * d.kw);
    par::for_each_chunk_mut(out, ohw, |co, plane| {
        plane.fill(b.map_or(F::zero(), |b| b[co]));
        for ci in 0..d.cin {
            let xp = &x[ci * ihw..][..ihw];
            let wb = &w[(co * d.cin + ci) * khw..][..khw];
            for ky in 0..d.kh {
                let off_y = ky as i64 - d.pad as i64;
                let (oy_lo, oy_hi) = strided_range(d.oh, d.ih, d.stride, off_y);
                for oy in oy_lo..oy_hi {
                    let iy = (oy * d.stride) as i64 + off_y;
                    let xrow = &xp[iy as usize * d.iw..][..d.iw];
                    let orow = &mut plane[oy * d.ow..][..d.ow];
                    for kx in 0..d.kw {
                        let wv = wb[ky * d.kw + kx];
                        let off_x = kx as i64 - d.pad as i64;
                        let (lo, hi) = strided_range(d.ow, d.iw, d.stride, off_x);
                        if lo >= hi {
                            continue;
                        }
                        let ix0 = (lo * d.stride) as i64 + off_x;
                        madd_src_strided(&mut orow[lo..hi], &xrow[ix0 as usize..], d.stride, wv);
                    }
                }
            }
        }
    });
}

/// dx[ci, iy, ix] += Σ dy[co, oy, ox] · w[co, ci, ky, kx] with
/// iy = oy·s + ky − p, ix = ox·s + kx − p.
pub fn conv2d_bwd_input<F: Real>(dy: &[F], w: &[F], d: &ConvDims, dx: &mut [F]) {
    if d.stride == 1 && d.kh == 3 && d.kw == 3 && d.pad == 1 {
        return conv2d_bwd_input_s1k3(dy, w, d, dx);
    }
    let (ihw, ohw, khw) = (d.ih * d.iw, d.oh * d.ow, d.kh * d.kw);
    par::for_each_chunk_mut(dx, ihw, |ci, dxp| {
        for co in 0..d.cout {
            let dyp = &dy[co * ohw..][..ohw];
            let wb = &w[(co * d.cin + ci) * khw..][..khw];
            for ky in 0..d.kh {
                let off_y = ky as i64 - d.pad as i64;
                let (oy_lo, oy_hi) = strided_range(d.oh, d.ih, d.stride, off_y);
                for oy in oy_lo..oy_hi {
                    let iy = (oy * d.stride) as i64 + off_y;
                    let dxrow = &mut dxp[iy as usize * d.iw..][..d.iw];
                    let dyrow = &dyp[oy * d.ow..][..d.ow];
                    for kx in 0..d.kw {
                        let wv = wb[ky * d.kw + kx];
                        let off_x = kx as i64 - d.pad as i64;
                        let (lo, hi) = strided_range(d.ow, d.iw, d.stride, off_x);
                        if lo >= hi {
                            continue;
                        }
                        let ix0 = (lo * d.stride) as i64 + off_x;
                        madd_dst_strided(&mut dxrow[ix0 as usize..], d.stride, &dyrow[lo..hi], wv);
                    }
                }
            }
        }
    });
}

/// dw[co, ci, ky, kx] += Σ dy[co, oy, ox] · x[ci, oy·s + ky − p, ox·s + kx − p]
pub fn conv2d_bwd_weight<F: Real>(dy: &[F], x: &[F], d: &ConvDims, dw: &mut [F]) {
    if d.stride == 1 && d.kh == 3 && d.kw == 3 && d.pad == 1 {
        return conv2d_bwd_weight_s1k3(dy, x, d, dw);
    }
    let (ihw, ohw, khw) = (d.ih * d.iw, d.oh * d.ow, d.kh * d.kw);
    par::for_each_chunk_mut(dw, d.cin * khw, |co, dwc| {
        let dyp = &dy[co * ohw..][..ohw];
        for ci in 0..d.cin {
            let xp = &x[ci * ihw..][..ihw];
            for ky in 0..d.kh {
                let off_y = ky as i64 - d.pad as i64;
                let (oy_lo, oy_hi) = strided_range(d.oh, d.ih, d.stride, off_y);
                for kx in 0..d.kw {
                    let off_x = kx as i64 - d.pad as i64;
                    let (lo, hi) = strided_range(d.ow, d.iw, d.stride, off_x);
                    if lo >= hi {
                        continue;
                    }
                    let mut acc = F::zero();
                    for oy in oy_lo..oy_hi {
                        let iy = (oy * d.stride) as i64 + off_y;
                        let xrow = &xp[iy as usize * d.iw..][..d.iw];
                        let dyrow = &dyp[oy * d.ow..][..d.ow];
                        let ix0 = (lo * d.stride) as i64 + off_x;
                        acc += dot_src_strided(&dyrow[lo..hi], &xrow[ix0 as usize..], d.stride);
                    }
                    dwc[ci * khw + ky * d.kw + kx] += acc;
                }
            }
        }
    });
}

/// db[co] += Σ dy[co, ·, ·]
pub fn conv2d_bwd_bias<F: Real>(dy: &[F], plane: usize, db: &mut [F]) {
    for (co, b) in db.iter_mut().enumerate() {
        *b += dy[co * plane..][..plane].iter().copied().sum();
    }
}

/// Transposed convolution, weight layout `[Cin, Cout, kh, kw]`:
/// y[co, iy·s + ky − p, ix·s + kx − p] += x[ci, iy, ix] · w[ci, co, ky, kx],
/// computed here as a gather over output rows.
pub fn convt2d_fwd<F: Real>(x: &[F], w: &[F], b: Option<&[F]>, d: &ConvDims, out: &mut [F]) {
    let (ihw, ohw, khw) = (d.ih * d.iw, d.oh * d.ow, d.kh * d.kw);
    par::for_each_chunk_mut(out, ohw, |co, plane| {
        plane.fill(b.map_or(F::zero(), |b| b[co]));
        for ci in 0..d.cin {
            let xp = &x[ci * ihw..][..ihw];
            let wb = &w[(ci * d.cout + co) * khw..][..khw];
            for ky in 0..d.kh {
                let off_y = ky as i64 - d.pad as i64;
                let (iy_lo, iy_hi) = strided_range(d.ih, d.oh, d.stride, off_y);
                for iy in iy_lo..iy_hi {
                    let oy = (iy * d.stride) as i64 + off_y;
                    let xrow = &xp[iy * d.iw..][..d.iw];
                    let orow = &mut plane[oy as usize * d.ow..][..d.ow];
                    for kx in 0..d.kw {
                        let wv = wb[ky * d.kw + kx];
                        let off_x = kx as i64 - d.pad as i64;
                        let (lo, hi) = strided_range(d.iw, d.ow, d.stride, off_x);
                        if lo >= hi {
                            continue;
                        }
                        let ox0 = (lo * d.stride) as i64 + off_x;
                        madd_dst_strided(&mut orow[ox0 as usize..], d.stride, &xrow[lo..hi], wv);
                    }
                }
            }
        }
    });
}

/// dx[ci, iy, ix] += Σ dy[co, iy·s + ky − p, ix·s + kx − p] · w[ci, co, ky, kx]
pub fn convt2d_bwd_input<F: Real>(dy: &[F], w: &[F], d: &ConvDims, dx: &mut [F]) {
    let (ihw, ohw, khw) = (d.ih * d.iw, d.oh * d.ow, d.kh * d.kw);
    par::for_each_chunk_mut(dx, ihw, |ci, dxp| {
        for co in 0..d.cout {
            let dyp = &dy[co * ohw..][..ohw];
            let wb = &w[(ci * d.cout + co) * khw..][..khw];
            for ky in 0..d.kh {
                let off_y = ky as i64 - d.pad as i64;
                let (iy_lo, iy_hi) = strided_range(d.ih, d.oh, d.stride, off_y);
                for iy in iy_lo..iy_hi {
                    let oy = (iy * d.stride) as i64 + off_y;
                    let dxrow = &mut dxp[iy * d.iw..][..d.iw];
                    let dyrow = &dyp[oy as usize * d.ow..][..d.ow];
                    for kx in 0..d.kw {
                        let wv = wb[ky * d.kw + kx];
                        let off_x = kx as i64 - d.pad as i64;
                        let (lo, hi) = strided_range(d.iw, d.ow, d.stride, off_x);
                        if lo >= hi {
                            continue;
                        }
                        let ox0 = (lo * d.stride) as i64 + off_x;
                        madd_src_strided(&mut dxrow[lo..hi], &dyrow[ox0 as usize..], d.stride, wv);
                    }
                }
            }
        }
    });
}

/// dw[ci, co, ky, kx] += Σ x[ci, iy, ix] · dy[co, iy·s + ky − p, ix·s + kx − p]
pub fn convt2d_bwd_weight<F: Real>(dy: &[F], x: &[F], d: &ConvDims, dw: &mut [F]) {
    let (ihw, ohw, khw) = (d.ih * d.iw, d.oh * d.ow, d.kh * d.kw);
    par::for_each_chunk_mut(dw, d.cout * khw, |ci, dwc| {
        let xp = &x[ci * ihw..][..ihw];
        for co in 0..d.cout {
            let dyp = &dy[co * ohw..][..ohw];
            for ky in 0..d.kh {
                let off_y = ky as i64 - d.pad as i64;
                let (iy_lo, iy_hi) = strided_range(d.ih, d.oh, d.stride, off_y);
                for kx in 0..d.kw {
                    let off_x = kx as i64 - d.pad as i64;
                    let (lo, hi) = strided_range(d.iw, d.ow, d.stride, off_x);
                    if lo >= hi {
                        continue;
                    }
                    let mut acc = F::zero();
                    for iy in iy_lo..iy_hi {
                        let oy = (iy * d.stride) as i64 + off_y;
                        let xrow = &xp[iy * d.iw..][..d.iw];
                        let dyrow = &dyp[oy as usize * d.ow..][..d.ow];
                        let ox0 = (lo * d.stride) as i64 + off_x;
                        acc += dot_src_strided(&xrow[lo..hi], &dyrow[ox0 as usize..], d.stride);
                    }
                    dwc[co * khw + ky * d.kw + kx] += acc;
                }
            }
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strided_ranges() {
        // dst index r with r·1 − 1 in [0, 5): r in [1, 6) capped at n_dst.
        assert_eq!(strided_range(8, 5, 1, -1), (1, 6));
        // r·2 + 1 in [0, 6): r in [0, 3).
        assert_eq!(strided_range(4, 6, 2, 1), (0, 3));
        // r·2 − 1 in [0, 6): r in [1, 4) — r=0 gives −1.
        assert_eq!(strided_range(4, 6, 2, -1), (1, 4));
        // Empty when src too small.
        assert_eq!(strided_range(4, 0, 1, 0), (0, 0));
    }

    #[test]
    fn identity_kernel_reproduces_input() {
        let (ih, iw) = (5, 7);
        let x: Vec<f64> = (0..ih * iw).map(|i| i as f64 * 0.1 - 1.0).collect();
        let mut w = vec![0.0; 9];
        w[4] = 1.0; // center tap
        let d = ConvDims::conv(1, 1, 3, ih, iw, 1, 1);
        let mut y = vec![0.0; ih * iw];
        conv2d_fwd(&x, &w, None, &d, &mut y);
        assert_eq!(x, y);
    }

    #[test]
    fn ones_kernel_counts_neighbors() {
        let (ih, iw) = (6, 6);
        let x = vec![1.0f64; ih * iw];
        let w = vec![1.0f64; 9];
        let d = ConvDims::conv(1, 1, 3, ih, iw, 1, 1);
        let mut y = vec![0.0; ih * iw];
        conv2d_fwd(&x, &w, None, &d, &mut y);
        // Interior cells see all 9 taps; corners 4; edges 6.
        assert_eq!(y[1 * iw + 1], 9.0);
        assert_eq!(y[0], 4.0);
        assert_eq!(y[1], 6.0);
    }

    #[test]
    fn stride_two_shapes() {
        let d = ConvDims::conv(3, 5, 3, 8, 8, 2, 1);
        assert_eq!((d.oh, d.ow), (4, 4));
        let x = vec![0.25f32; 3 * 64];
        let w = vec![0.5f32; 5 * 3 * 9];
        let b = vec![1.0f32; 5];
        let mut y = vec![0.0f32; 5 * 16];
        conv2d_fwd(&x, &w, Some(&b), &d, &mut y);
        assert!(y.iter().all(|v| *v > 1.0));

        let dt = ConvDims::conv_transpose(3, 5, 4, 4, 4, 2, 1);
        assert_eq!((dt.oh, dt.ow), (8, 8));
    }

    #[test]
    fn conv_transpose_zero_input_is_bias_only() {
        let d = ConvDims::conv_transpose(2, 3, 4, 4, 4, 2, 1);
        let x = vec![0.0f64; 2 * 16];
        let w: Vec<f64> = (0..2 * 3 * 16).map(|i| (i as f64).sin()).collect();
        let b = vec![0.75f64; 3];
        let mut y = vec![0.0; 3 * 64];
        convt2d_fwd(&x, &w, Some(&b), &d, &mut y);
        assert!(y.iter().all(|v| (*v - 0.75).abs() < 1e-15));
    }

    /// ⟨conv(x), y⟩ must equal ⟨x, conv_bwd_input(y)⟩: the backward pass is
    /// the adjoint of the forward pass.
    #[test]
    fn conv_adjoint_identity() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for stride in [1usize, 2] {
            let d = ConvDims::conv(3, 4, 3, 8, 6, stride, 1);
            let x: Vec<f64> = (0..3 * 48).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let w: Vec<f64> = (0..4 * 3 * 9).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let y: Vec<f64> = (0..4 * d.oh * d.ow).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut cx = vec![0.0; 4 * d.oh * d.ow];
            conv2d_fwd(&x, &w, None, &d, &mut cx);
            let mut cty = vec![0.0; 3 * 48];
            conv2d_bwd_input(&y, &w, &d, &mut cty);
            let lhs: f64 = cx.iter().zip(&y).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.iter().zip(&cty).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-10, "stride {stride}: {lhs} vs {rhs}");
        }
    }

    /// The transposed-convolution forward is, by construction, the gradient
    /// of a stride-2 convolution with the axes of `w` swapped. Check against
    /// conv2d_bwd_input as an independent route.
    #[test]
    fn conv_transpose_matches_conv_backward_input() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let (cin, cout) = (3, 2);
        let dt = ConvDims::conv_transpose(cin, cout, 4, 4, 5, 2, 1);
        let x: Vec<f64> = (0..cin * 20).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let wt: Vec<f64> = (0..cin * cout * 16).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut y = vec![0.0; cout * dt.oh * dt.ow];
        convt2d_fwd(&x, &wt, None, &dt, &mut y);

        // conv view: output of the conv is our x, input is our y.
        let dc = ConvDims::conv(cout, cin, 4, dt.oh, dt.ow, 2, 1);
        assert_eq!((dc.oh, dc.ow), (dt.ih, dt.iw));
        let mut y2 = vec![0.0; cout * dt.oh * dt.ow];
        // conv weight [co=cin][ci=cout] from wt [cin][cout]: same memory order.
        conv2d_bwd_input(&x, &wt, &dc, &mut y2);
        for (a, b) in y.iter().zip(&y2) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
