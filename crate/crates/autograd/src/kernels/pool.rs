use crate::scalar::Scalar;

/// 2×2 stride-2 max pooling over `planes` planes of `h×w` (both even).
/// Returns the pooled values and, per output, the flat input index of the winner.
pub(crate) fn maxpool2_forward<T: Scalar>(x: &[T], planes: usize, h: usize, w: usize) -> (Vec<T>, Vec<u32>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(planes * oh * ow);
    let mut arg = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        let base = p * h * w;
        for i in 0..oh {
            for j in 0..ow {
                let mut best = base + 2 * i * w + 2 * j;
                for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * i + di) * w + 2 * j + dj;
                    // strict comparison keeps the first maximum
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                arg.push(best as u32);
            }
        }
    }
    (out, arg)
}

pub(crate) fn maxpool2_backward<T: Scalar>(dout: &[T], arg: &[u32], input_len: usize) -> Vec<T> {
    let mut dx = vec![T::zero(); input_len];
    for (&g, &i) in dout.iter().zip(arg) {
        dx[i as usize] = dx[i as usize] + g;
    }
    dx
}

/// Source taps `(i0, i1, frac)` for ×2 bilinear resampling of an axis of length `n`
/// (half-pixel centres, edge clamped).
fn taps<T: Scalar>(n: usize) -> Vec<(usize, usize, T)> {
    (0..2 * n)
        .map(|o| {
            let src = ((o as f64 + 0.5) / 2.0 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n - 1);
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, T::from_f64_lossy(src - i0 as f64))
        })
        .collect()
}

pub(crate) fn bilinear2_forward<T: Scalar>(x: &[T], planes: usize, h: usize, w: usize) -> Vec<T> {
    let ty = taps::<T>(h);
    let tx = taps::<T>(w);
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![T::zero(); planes * oh * ow];
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let top = src[y0 * w + x0] * (T::one() - fx) + src[y0 * w + x1] * fx;
                let bot = src[y1 * w + x0] * (T::one() - fx) + src[y1 * w + x1] * fx;
                dst[oy * ow + ox] = top * (T::one() - fy) + bot * fy;
            }
        }
    }
    out
}

pub(crate) fn bilinear2_backward<T: Scalar>(dout: &[T], planes: usize, h: usize, w: usize) -> Vec<T> {
    let ty = taps::<T>(h);
    let tx = taps::<T>(w);
    let (oh, ow) = (2 * h, 2 * w);
    let mut dx = vec![T::zero(); planes * h * w];
    for p in 0..planes {
        let g = &dout[p * oh * ow..(p + 1) * oh * ow];
        let d = &mut dx[p * h * w..(p + 1) * h * w];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let v = g[oy * ow + ox];
                let top = v * (T::one() - fy);
                let bot = v * fy;
                d[y0 * w + x0] = d[y0 * w + x0] + top * (T::one() - fx);
                d[y0 * w + x1] = d[y0 * w + x1] + top * fx;
                d[y1 * w + x0] = d[y1 * w + x0] + bot * (T::one() - fx);
                d[y1 * w + x1] = d[y1 * w + x1] + bot * fx;
            }
        }
    }
    dx
}
