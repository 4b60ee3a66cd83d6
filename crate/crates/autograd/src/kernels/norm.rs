use crate::scalar::Scalar;

pub(crate) struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Biased (population) variance over `N·H·W`.
    pub var: Vec<T>,
}

pub(crate) fn channel_stats<T: Scalar>(x: &[T], n: usize, c: usize, hw: usize) -> BatchStats<T> {
    let count = T::from_usize(n * hw).unwrap();
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    for ch in 0..c {
        let mut s = T::zero();
        for b in 0..n {
            s = s + x[(b * c + ch) * hw..][..hw].iter().copied().sum::<T>();
        }
        let m = s / count;
        let mut sq = T::zero();
        for b in 0..n {
            for &v in &x[(b * c + ch) * hw..][..hw] {
                sq = sq + (v - m) * (v - m);
            }
        }
        mean[ch] = m;
        var[ch] = sq / count;
    }
    BatchStats { mean, var }
}

/// `y = gamma * (x - mean) * inv_std + beta`, returning `(y, xhat)`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn normalize<T: Scalar>(
    x: &[T],
    n: usize,
    c: usize,
    hw: usize,
    mean: &[T],
    inv_std: &[T],
    gamma: &[T],
    beta: &[T],
) -> (Vec<T>, Vec<T>) {
    let mut y = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * hw;
            for i in off..off + hw {
                let h = (x[i] - mean[ch]) * inv_std[ch];
                xhat[i] = h;
                y[i] = gamma[ch] * h + beta[ch];
            }
        }
    }
    (y, xhat)
}

/// Gradients of batch-statistics normalization: `(dx, dgamma, dbeta)`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn batch_backward<T: Scalar>(
    dy: &[T],
    xhat: &[T],
    n: usize,
    c: usize,
    hw: usize,
    inv_std: &[T],
    gamma: &[T],
    batch_stats: bool,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let m = T::from_usize(n * hw).unwrap();
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * hw;
            for i in off..off + hw {
                dbeta[ch] = dbeta[ch] + dy[i];
                dgamma[ch] = dgamma[ch] + dy[i] * xhat[i];
            }
        }
    }
    let mut dx = vec![T::zero(); dy.len()];
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * hw;
            let scale = gamma[ch] * inv_std[ch];
            for i in off..off + hw {
                dx[i] = if batch_stats {
                    scale / m * (m * dy[i] - dbeta[ch] - xhat[i] * dgamma[ch])
                } else {
                    scale * dy[i]
                };
            }
        }
    }
    (dx, dgamma, dbeta)
}
