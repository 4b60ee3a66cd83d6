use crate::scalar::Scalar;

/// Fills `cols` (`c*k*k` rows of `h*w`) with the zero-padded stride-1 patches of `x`.
pub(crate) fn im2col<T: Scalar>(x: &[T], c: usize, h: usize, w: usize, k: usize, pad: usize, cols: &mut [T]) {
    let hw = h * w;
    for ci in 0..c {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ci * k + ky) * k + kx) * hw;
                let dst = &mut cols[row..row + hw];
                let dy = ky as isize - pad as isize;
                let dx = kx as isize - pad as isize;
                let (x_lo, x_hi) = valid_range(w, dx);
                for y in 0..h {
                    let d = &mut dst[y * w..(y + 1) * w];
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize || x_lo >= x_hi {
                        d.fill(T::zero());
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    d[..x_lo].fill(T::zero());
                    let s0 = (x_lo as isize + dx) as usize;
                    d[x_lo..x_hi].copy_from_slice(&src[s0..s0 + (x_hi - x_lo)]);
                    d[x_hi..].fill(T::zero());
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-adds `cols` back into `dx`.
pub(crate) fn col2im<T: Scalar>(cols: &[T], c: usize, h: usize, w: usize, k: usize, pad: usize, dx: &mut [T]) {
    let hw = h * w;
    for ci in 0..c {
        let plane = &mut dx[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ci * k + ky) * k + kx) * hw;
                let src = &cols[row..row + hw];
                let dy = ky as isize - pad as isize;
                let dxo = kx as isize - pad as isize;
                let (x_lo, x_hi) = valid_range(w, dxo);
                if x_lo >= x_hi {
                    continue;
                }
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let d = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    let s0 = (x_lo as isize + dxo) as usize;
                    for (o, &v) in d[s0..s0 + (x_hi - x_lo)].iter_mut().zip(&src[y * w + x_lo..y * w + x_hi]) {
                        *o = *o + v;
                    }
                }
            }
        }
    }
}

/// Output columns `x` whose source column `x + shift` lies inside `[0, w)`.
fn valid_range(w: usize, shift: isize) -> (usize, usize) {
    let lo = (-shift).max(0) as usize;
    let hi = (w as isize - shift).clamp(0, w as isize) as usize;
    (lo.min(w), hi)
}

pub(crate) struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub cout: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub pad: usize,
}

impl ConvGeom {
    fn patch(&self) -> usize {
        self.cin * self.k * self.k
    }
}

pub(crate) fn conv2d_forward<T: Scalar>(g: &ConvGeom, x: &[T], weight: &[T], bias: Option<&[T]>) -> Vec<T> {
    let hw = g.h * g.w;
    let patch = g.patch();
    let mut out = vec![T::zero(); g.n * g.cout * hw];
    let mut cols = if g.k == 1 { Vec::new() } else { vec![T::zero(); patch * hw] };
    for b in 0..g.n {
        let xb = &x[b * g.cin * hw..(b + 1) * g.cin * hw];
        let ob = &mut out[b * g.cout * hw..(b + 1) * g.cout * hw];
        let rhs: &[T] = if g.k == 1 {
            xb
        } else {
            im2col(xb, g.cin, g.h, g.w, g.k, g.pad, &mut cols);
            &cols
        };
        T::gemm(g.cout, patch, hw, weight, false, rhs, false, ob, false);
        if let Some(bias) = bias {
            for (co, &bv) in bias.iter().enumerate() {
                ob[co * hw..(co + 1) * hw].iter_mut().for_each(|v| *v = *v + bv);
            }
        }
    }
    out
}

/// Returns `(dx, dweight, dbias)`.
pub(crate) fn conv2d_backward<T: Scalar>(
    g: &ConvGeom,
    x: &[T],
    weight: &[T],
    dout: &[T],
    want_dx: bool,
) -> (Option<Vec<T>>, Vec<T>, Vec<T>) {
    let hw = g.h * g.w;
    let patch = g.patch();
    let mut dw = vec![T::zero(); g.cout * patch];
    let mut db = vec![T::zero(); g.cout];
    let mut dx = want_dx.then(|| vec![T::zero(); g.n * g.cin * hw]);
    let mut cols = if g.k == 1 { Vec::new() } else { vec![T::zero(); patch * hw] };
    let mut dcols = if want_dx && g.k != 1 { vec![T::zero(); patch * hw] } else { Vec::new() };
    for b in 0..g.n {
        let xb = &x[b * g.cin * hw..(b + 1) * g.cin * hw];
        let db_out = &dout[b * g.cout * hw..(b + 1) * g.cout * hw];
        for co in 0..g.cout {
            db[co] = db[co] + db_out[co * hw..(co + 1) * hw].iter().copied().sum::<T>();
        }
        let cols_ref: &[T] = if g.k == 1 {
            xb
        } else {
            im2col(xb, g.cin, g.h, g.w, g.k, g.pad, &mut cols);
            &cols
        };
        T::gemm(g.cout, hw, patch, db_out, false, cols_ref, true, &mut dw, true);
        if let Some(dx) = dx.as_mut() {
            let dxb = &mut dx[b * g.cin * hw..(b + 1) * g.cin * hw];
            if g.k == 1 {
                T::gemm(patch, g.cout, hw, weight, true, db_out, false, dxb, false);
            } else {
                T::gemm(patch, g.cout, hw, weight, true, db_out, false, &mut dcols, false);
                col2im(&dcols, g.cin, g.h, g.w, g.k, g.pad, dxb);
            }
        }
    }
    (dx, dw, db)
}

/// 2×2 stride-2 transposed convolution; `weight` is `[cin, cout, 2, 2]`, input `h×w`.
pub(crate) fn conv_t2_forward<T: Scalar>(
    n: usize,
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    x: &[T],
    weight: &[T],
    bias: &[T],
) -> Vec<T> {
    let hw = h * w;
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![T::zero(); n * cout * oh * ow];
    let mut y = vec![T::zero(); cout * 4 * hw];
    for b in 0..n {
        let xb = &x[b * cin * hw..(b + 1) * cin * hw];
        T::gemm(cout * 4, cin, hw, weight, true, xb, false, &mut y, false);
        let ob = &mut out[b * cout * oh * ow..(b + 1) * cout * oh * ow];
        for co in 0..cout {
            for a in 0..2 {
                for bb in 0..2 {
                    let src = &y[(co * 4 + a * 2 + bb) * hw..][..hw];
                    for i in 0..h {
                        let orow = &mut ob[co * oh * ow + (2 * i + a) * ow..][..ow];
                        for (j, &v) in src[i * w..(i + 1) * w].iter().enumerate() {
                            orow[2 * j + bb] = v + bias[co];
                        }
                    }
                }
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_t2_backward<T: Scalar>(
    n: usize,
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    x: &[T],
    weight: &[T],
    dout: &[T],
    want_dx: bool,
) -> (Option<Vec<T>>, Vec<T>, Vec<T>) {
    let hw = h * w;
    let (oh, ow) = (2 * h, 2 * w);
    let mut dw = vec![T::zero(); cin * cout * 4];
    let mut db = vec![T::zero(); cout];
    let mut dx = want_dx.then(|| vec![T::zero(); n * cin * hw]);
    let mut dy = vec![T::zero(); cout * 4 * hw];
    for b in 0..n {
        let gb = &dout[b * cout * oh * ow..(b + 1) * cout * oh * ow];
        for co in 0..cout {
            db[co] = db[co] + gb[co * oh * ow..(co + 1) * oh * ow].iter().copied().sum::<T>();
            for a in 0..2 {
                for bb in 0..2 {
                    let dst = &mut dy[(co * 4 + a * 2 + bb) * hw..][..hw];
                    for i in 0..h {
                        let grow = &gb[co * oh * ow + (2 * i + a) * ow..][..ow];
                        for j in 0..w {
                            dst[i * w + j] = grow[2 * j + bb];
                        }
                    }
                }
            }
        }
        let xb = &x[b * cin * hw..(b + 1) * cin * hw];
        T::gemm(cin, hw, cout * 4, xb, false, &dy, true, &mut dw, true);
        if let Some(dx) = dx.as_mut() {
            T::gemm(cin, cout * 4, hw, weight, false, &dy, false, &mut dx[b * cin * hw..(b + 1) * cin * hw], false);
        }
    }
    (dx, dw, db)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn im2col_col2im_are_adjoint() {
        // <im2col(x), c> == <x, col2im(c)>
        let (c, h, w, k, pad) = (2, 4, 5, 3, 1);
        let x: Vec<f64> = (0..c * h * w).map(|i| (i as f64 * 0.7).sin()).collect();
        let r: Vec<f64> = (0..c * k * k * h * w).map(|i| (i as f64 * 0.3).cos()).collect();
        let mut cols = vec![0.0; r.len()];
        im2col(&x, c, h, w, k, pad, &mut cols);
        let lhs: f64 = cols.iter().zip(&r).map(|(a, b)| a * b).sum();
        let mut back = vec![0.0; x.len()];
        col2im(&r, c, h, w, k, pad, &mut back);
        let rhs: f64 = back.iter().zip(&x).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn conv_matches_direct_sum() {
        let g = ConvGeom { n: 2, cin: 3, cout: 2, h: 5, w: 4, k: 3, pad: 1 };
        let x: Vec<f64> = (0..g.n * g.cin * g.h * g.w).map(|i| ((i * 7 % 11) as f64) - 5.0).collect();
        let wt: Vec<f64> = (0..g.cout * g.cin * 9).map(|i| ((i * 5 % 13) as f64) * 0.1 - 0.6).collect();
        let bias = [0.25, -1.0];
        let out = conv2d_forward(&g, &x, &wt, Some(&bias));
        for b in 0..g.n {
            for co in 0..g.cout {
                for y in 0..g.h {
                    for xx in 0..g.w {
                        let mut acc = bias[co];
                        for ci in 0..g.cin {
                            for ky in 0..3 {
                                for kx in 0..3 {
                                    let sy = y as isize + ky as isize - 1;
                                    let sx = xx as isize + kx as isize - 1;
                                    if sy < 0 || sx < 0 || sy >= g.h as isize || sx >= g.w as isize {
                                        continue;
                                    }
                                    acc += wt[((co * g.cin + ci) * 3 + ky) * 3 + kx]
                                        * x[((b * g.cin + ci) * g.h + sy as usize) * g.w + sx as usize];
                                }
                            }
                        }
                        let got = out[((b * g.cout + co) * g.h + y) * g.w + xx];
                        assert!((got - acc).abs() < 1e-10, "{got} vs {acc}");
                    }
                }
            }
        }
    }

    #[test]
    fn transposed_conv_places_kernel_per_input_pixel() {
        // single input pixel of value 2 -> 2x2 block equal to 2*kernel + bias
        let wt = [1.0f64, 2.0, 3.0, 4.0];
        let out = conv_t2_forward(1, 1, 1, 1, 1, &[2.0], &wt, &[0.5]);
        assert_eq!(out, vec![2.5, 4.5, 6.5, 8.5]);
    }
}
