//! Forward/backward compute kernels with no tape bookkeeping.
//!
//! Convolution lowers each batch element to an `im2col` matrix and a single
//! gemm; 1x1 stride-1 unpadded convolutions skip the lowering.

use crate::scalar::{matmul_into, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.h + 2 * self.pad - self.kh) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.w + 2 * self.pad - self.kw) / self.stride + 1
    }

    fn patch_len(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

fn im2col<T: Scalar>(g: &ConvGeom, x: &[T], cols: &mut [T]) {
    let (ho, wo) = (g.out_h(), g.out_w());
    let plane = ho * wo;
    for c in 0..g.cin {
        let xc = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let drow = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= g.h as isize {
                        drow.fill(T::zero());
                        continue;
                    }
                    let src = &xc[iy as usize * g.w..(iy as usize + 1) * g.w];
                    if g.stride == 1 {
                        // valid ox range where 0 <= ox + kj - pad < w
                        let lo = g.pad.saturating_sub(kj).min(wo);
                        let hi = (g.w + g.pad).saturating_sub(kj).min(wo).max(lo);
                        drow[..lo].fill(T::zero());
                        drow[hi..].fill(T::zero());
                        if hi > lo {
                            let start = lo + kj - g.pad;
                            drow[lo..hi].copy_from_slice(&src[start..start + (hi - lo)]);
                        }
                    } else {
                        for (ox, d) in drow.iter_mut().enumerate() {
                            let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                            *d = if ix < 0 || ix >= g.w as isize {
                                T::zero()
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }
}

fn col2im_add<T: Scalar>(g: &ConvGeom, cols: &[T], dx: &mut [T]) {
    let (ho, wo) = (g.out_h(), g.out_w());
    let plane = ho * wo;
    for c in 0..g.cin {
        let dxc = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let drow = &mut dxc[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let srow = &src[oy * wo..(oy + 1) * wo];
                    for (ox, &v) in srow.iter().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && (ix as usize) < g.w {
                            drow[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation forward pass. `x` is `B x Cin x H x W`, `weight` is `Cout x Cin x kH x kW`.
pub fn conv2d_forward<T: Scalar>(g: &ConvGeom, x: &[T], weight: &[T], bias: Option<&[T]>) -> Vec<T> {
    let (ho, wo) = (g.out_h(), g.out_w());
    let plane = ho * wo;
    let k = g.patch_len();
    let mut out = vec![T::zero(); g.batch * g.cout * plane];
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); k * plane] };
    for b in 0..g.batch {
        let xb = &x[b * g.cin * g.h * g.w..(b + 1) * g.cin * g.h * g.w];
        let ob = &mut out[b * g.cout * plane..(b + 1) * g.cout * plane];
        if let Some(bias) = bias {
            for (co, &bv) in bias.iter().enumerate() {
                ob[co * plane..(co + 1) * plane].fill(bv);
            }
        }
        let cols_ref: &[T] = if g.is_pointwise() {
            xb
        } else {
            im2col(g, xb, &mut cols);
            &cols
        };
        matmul_into(weight, cols_ref, ob, g.cout, k, plane, false, false, bias.is_some());
    }
    out
}

pub struct ConvGrads<T> {
    pub dx: Option<Vec<T>>,
    pub dw: Option<Vec<T>>,
    pub db: Option<Vec<T>>,
}

/// Gradients of [`conv2d_forward`]; only the requested ones are computed.
pub fn conv2d_backward<T: Scalar>(
    g: &ConvGeom,
    x: &[T],
    weight: &[T],
    dout: &[T],
    want_dx: bool,
    want_dw: bool,
    want_db: bool,
) -> ConvGrads<T> {
    let (ho, wo) = (g.out_h(), g.out_w());
    let plane = ho * wo;
    let k = g.patch_len();
    let in_len = g.cin * g.h * g.w;
    let mut dx = want_dx.then(|| vec![T::zero(); g.batch * in_len]);
    let mut dw = want_dw.then(|| vec![T::zero(); g.cout * k]);
    let db = want_db.then(|| {
        let mut db = vec![T::zero(); g.cout];
        for b in 0..g.batch {
            for (co, acc) in db.iter_mut().enumerate() {
                let base = (b * g.cout + co) * plane;
                *acc += dout[base..base + plane].iter().copied().sum::<T>();
            }
        }
        db
    });
    let pointwise = g.is_pointwise();
    let mut cols = if pointwise { Vec::new() } else { vec![T::zero(); k * plane] };
    let mut dcols = if pointwise || !want_dx { Vec::new() } else { vec![T::zero(); k * plane] };
    for b in 0..g.batch {
        let xb = &x[b * in_len..(b + 1) * in_len];
        let gb = &dout[b * g.cout * plane..(b + 1) * g.cout * plane];
        if let Some(dw) = dw.as_mut() {
            let cols_ref: &[T] = if pointwise {
                xb
            } else {
                im2col(g, xb, &mut cols);
                &cols
            };
            // dW += dOut_b (Cout x P) * cols^T (P x K)
            matmul_into(gb, cols_ref, dw, g.cout, plane, k, false, true, true);
        }
        if let Some(dx) = dx.as_mut() {
            let dxb = &mut dx[b * in_len..(b + 1) * in_len];
            if pointwise {
                matmul_into(weight, gb, dxb, k, g.cout, plane, true, false, false);
            } else {
                matmul_into(weight, gb, &mut dcols, k, g.cout, plane, true, false, false);
                col2im_add(g, &dcols, dxb);
            }
        }
    }
    ConvGrads { dx, dw, db }
}

/// Source index pair and blend weight for x2 bilinear upsampling with half-pixel centers.
fn upsample_taps(dst: usize, n: usize) -> (usize, usize, f64) {
    let src = ((dst as f64 + 0.5) / 2.0 - 0.5).max(0.0);
    let i0 = (src.floor() as usize).min(n - 1);
    let i1 = (i0 + 1).min(n - 1);
    (i0, i1, src - i0 as f64)
}

pub fn upsample2x_forward<T: Scalar>(planes: usize, h: usize, w: usize, x: &[T]) -> Vec<T> {
    let (oh, ow) = (2 * h, 2 * w);
    let ys: Vec<_> = (0..oh).map(|y| upsample_taps(y, h)).collect();
    let xs: Vec<_> = (0..ow).map(|x| upsample_taps(x, w)).collect();
    let mut out = vec![T::zero(); planes * oh * ow];
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
        for (oy, &(y0, y1, ly)) in ys.iter().enumerate() {
            let ly = T::lit(ly);
            let r0 = &src[y0 * w..(y0 + 1) * w];
            let r1 = &src[y1 * w..(y1 + 1) * w];
            for (ox, &(x0, x1, lx)) in xs.iter().enumerate() {
                let lx = T::lit(lx);
                let top = r0[x0] + (r0[x1] - r0[x0]) * lx;
                let bot = r1[x0] + (r1[x1] - r1[x0]) * lx;
                dst[oy * ow + ox] = top + (bot - top) * ly;
            }
        }
    }
    out
}

pub fn upsample2x_backward<T: Scalar>(planes: usize, h: usize, w: usize, dout: &[T]) -> Vec<T> {
    let (oh, ow) = (2 * h, 2 * w);
    let ys: Vec<_> = (0..oh).map(|y| upsample_taps(y, h)).collect();
    let xs: Vec<_> = (0..ow).map(|x| upsample_taps(x, w)).collect();
    let mut dx = vec![T::zero(); planes * h * w];
    for p in 0..planes {
        let src = &dout[p * oh * ow..(p + 1) * oh * ow];
        let dst = &mut dx[p * h * w..(p + 1) * h * w];
        for (oy, &(y0, y1, ly)) in ys.iter().enumerate() {
            let ly = T::lit(ly);
            for (ox, &(x0, x1, lx)) in xs.iter().enumerate() {
                let lx = T::lit(lx);
                let gv = src[oy * ow + ox];
                let top = gv * (T::one() - ly);
                let bot = gv * ly;
                dst[y0 * w + x0] += top * (T::one() - lx);
                dst[y0 * w + x1] += top * lx;
                dst[y1 * w + x0] += bot * (T::one() - lx);
                dst[y1 * w + x1] += bot * lx;
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom(cin: usize, h: usize, w: usize, cout: usize, k: usize, stride: usize, pad: usize) -> ConvGeom {
        ConvGeom { batch: 1, cin, h, w, cout, kh: k, kw: k, stride, pad }
    }

    #[test]
    fn output_size_formula() {
        let g = geom(1, 4, 4, 1, 3, 2, 1);
        assert_eq!((g.out_h(), g.out_w()), (2, 2));
        let g = geom(1, 7, 5, 1, 7, 1, 3);
        assert_eq!((g.out_h(), g.out_w()), (7, 5));
    }

    #[test]
    fn im2col_stride_one_matches_general_path() {
        // stride-1 fast copy must agree with the per-element branch
        let g = geom(2, 5, 6, 1, 3, 1, 2);
        let x: Vec<f64> = (0..60).map(|v| v as f64).collect();
        let plane = g.out_h() * g.out_w();
        let mut fast = vec![0.0; g.patch_len() * plane];
        im2col(&g, &x, &mut fast);
        for c in 0..2 {
            for ki in 0..3 {
                for kj in 0..3 {
                    let row = (c * 3 + ki) * 3 + kj;
                    for oy in 0..g.out_h() {
                        for ox in 0..g.out_w() {
                            let iy = oy as isize + ki as isize - 2;
                            let ix = ox as isize + kj as isize - 2;
                            let want = if iy < 0 || ix < 0 || iy >= 5 || ix >= 6 {
                                0.0
                            } else {
                                x[c * 30 + iy as usize * 6 + ix as usize]
                            };
                            assert_eq!(fast[row * plane + oy * g.out_w() + ox], want);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn upsample_edge_weights() {
        let out = upsample2x_forward(1, 1, 2, &[0.0f64, 4.0]);
        assert_eq!(out, vec![0.0, 1.0, 3.0, 4.0, 0.0, 1.0, 3.0, 4.0]);
    }
}
