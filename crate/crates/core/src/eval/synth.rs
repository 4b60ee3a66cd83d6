use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::gather::{Gather, Polarity};
use crate::rng::derive_seed;

/// Parameters of one synthetic shot gather.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub samples: usize,
    pub traces: usize,
    pub dt_ms: f64,
    /// First-arrival velocity in m/s.
    pub v_true: f64,
    /// First-arrival intercept in seconds.
    pub t0_true: f64,
    /// Offsets are spaced linearly from `offset_min` to `offset_max` metres.
    pub offset_min: f64,
    pub offset_max: f64,
    /// Ricker peak frequency in Hz.
    pub peak_hz: f64,
    pub polarity: Polarity,
    /// Later hyperbolic events added behind the first arrival.
    pub reflections: usize,
    /// Additive Gaussian noise level; `None` leaves the gather clean.
    pub snr_db: Option<f64>,
    pub seed: u64,
}

impl SynthSpec {
    /// 256 samples at 2 ms, 64 traces, 60 Hz, trough first breaks.
    pub fn desk(seed: u64) -> Self {
        Self {
            samples: 256,
            traces: 64,
            dt_ms: 2.0,
            v_true: 3000.0,
            t0_true: 0.05,
            offset_min: 50.0,
            offset_max: 1000.0,
            peak_hz: 60.0,
            polarity: Polarity::Trough,
            reflections: 3,
            snr_db: None,
            seed,
        }
    }

    /// Samples on each side of the wavelet centre that the truncated Ricker spans.
    pub fn half_width(&self) -> usize {
        (1000.0 / (self.peak_hz * self.dt_ms)).ceil() as usize
    }

    pub fn offsets(&self) -> Vec<f64> {
        let n = self.traces;
        (0..n)
            .map(|j| {
                if n == 1 {
                    self.offset_min
                } else {
                    self.offset_min + (self.offset_max - self.offset_min) * j as f64 / (n - 1) as f64
                }
            })
            .collect()
    }

    /// Sample index of the first break on each trace.
    pub fn first_breaks(&self) -> Vec<i64> {
        self.offsets()
            .iter()
            .map(|d| ((d / self.v_true + self.t0_true) * 1000.0 / self.dt_ms).round() as i64)
            .collect()
    }

    fn validate(&self) -> Result<()> {
        if self.samples == 0 || self.traces == 0 {
            return invalid("synth", "samples and traces must be positive");
        }
        if !(self.dt_ms > 0.0 && self.v_true > 0.0 && self.peak_hz > 0.0) {
            return invalid("synth", "dt_ms, v_true and peak_hz must be positive");
        }
        if !(self.offset_min >= 0.0 && self.offset_max >= self.offset_min) {
            return invalid("synth", "need 0 <= offset_min <= offset_max");
        }
        let h = self.half_width() as i64;
        for (j, fb) in self.first_breaks().into_iter().enumerate() {
            if fb - h < 0 || fb + h >= self.samples as i64 {
                return invalid(
                    "synth",
                    format!("trace {j}: wavelet at sample {fb} (half-width {h}) leaves the {}-sample trace", self.samples),
                );
            }
        }
        Ok(())
    }
}

/// Zero-phase Ricker wavelet with unit peak at `t = 0` (seconds).
pub fn ricker(t: f64, peak_hz: f64) -> f64 {
    let a = (std::f64::consts::PI * peak_hz * t).powi(2);
    (1.0 - 2.0 * a) * (-a).exp()
}

fn add_wavelet(trace: &mut [f64], center: f64, amp: f64, spec: &SynthSpec, h: usize) {
    let c = center.round() as i64;
    for i in (c - h as i64)..=(c + h as i64) {
        if (0..trace.len() as i64).contains(&i) {
            let t = (i as f64 - center) * spec.dt_ms / 1000.0;
            trace[i as usize] += amp * ricker(t, spec.peak_hz);
        }
    }
}

/// Deterministic synthetic gather. The first arrival is a Ricker wavelet whose
/// polarity extremum sits exactly on the labeled sample. Reflections are
/// weaker (their amplitudes sum below the first arrival's) and are only drawn
/// on traces where they arrive after the first-arrival wavelet ends.
pub fn synth_gather(spec: &SynthSpec) -> Result<Gather> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (t, n) = (spec.samples, spec.traces);
    let h = spec.half_width();
    let sign = match spec.polarity {
        Polarity::Peak => 1.0,
        Polarity::Trough => -1.0,
    };
    let offsets = spec.offsets();
    let fbs = spec.first_breaks();
    let events: Vec<(f64, f64, f64)> = (0..spec.reflections)
        .map(|_| {
            let delay = rng.random_range(0.04..0.3);
            let v = spec.v_true * rng.random_range(0.5..0.9);
            let amp = rng.random_range(0.1..0.3) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            (delay, v, amp)
        })
        .collect();
    let mut amps = Array2::<f32>::zeros((t, n));
    for j in 0..n {
        let mut trace = vec![0.0f64; t];
        let gain = rng.random_range(0.6..1.4) / (1.0 + offsets[j] / 2000.0);
        add_wavelet(&mut trace, fbs[j] as f64, sign * gain, spec, h);
        let earliest = (fbs[j] + 2 * h as i64) as f64 + 1.0;
        for &(delay, v, a) in &events {
            let t_r = ((spec.t0_true + delay).powi(2) + (offsets[j] / v).powi(2)).sqrt();
            let center = t_r * 1000.0 / spec.dt_ms;
            if center >= earliest {
                add_wavelet(&mut trace, center, a * gain, spec, h);
            }
        }
        for (i, v) in trace.iter().enumerate() {
            amps[[i, j]] = *v as f32;
        }
    }
    let labels = fbs.iter().map(|&f| f as i32).collect();
    let g = Gather::new(amps, spec.dt_ms, offsets, labels, spec.polarity, "")?;
    match spec.snr_db {
        Some(snr) => inject_noise(&g, snr, derive_seed(spec.seed, u64::MAX)),
        None => Ok(g),
    }
}

/// Variance of added noise for a trace of signal variance `signal_var` at `snr_db`.
pub fn noise_variance(signal_var: f64, snr_db: f64) -> f64 {
    signal_var / 10f64.powf(snr_db / 10.0)
}

/// Adds i.i.d. Gaussian noise per trace at the requested SNR, with the signal
/// variance estimated from the (assumed clean) trace itself. Labels are unchanged.
pub fn inject_noise(g: &Gather, snr_db: f64, seed: u64) -> Result<Gather> {
    if !snr_db.is_finite() {
        return invalid("snr_db", "must be finite");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut amps = g.amplitudes().clone();
    let t = g.samples() as f64;
    for mut col in amps.columns_mut() {
        let mean = col.iter().map(|&v| f64::from(v)).sum::<f64>() / t;
        let var = col.iter().map(|&v| (f64::from(v) - mean).powi(2)).sum::<f64>() / t;
        let sd = noise_variance(var, snr_db).sqrt();
        if sd == 0.0 {
            continue;
        }
        let normal = Normal::new(0.0, sd).expect("finite positive deviation");
        for v in col.iter_mut() {
            *v = (f64::from(*v) + normal.sample(&mut rng)) as f32;
        }
    }
    g.with_amplitudes(amps)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ricker_shape() {
        assert_eq!(ricker(0.0, 30.0), 1.0);
        assert!(ricker(0.01, 30.0) < 0.0);
        assert!((ricker(0.004, 25.0) - ricker(-0.004, 25.0)).abs() < 1e-15);
    }

    #[test]
    fn noise_variance_examples() {
        assert_eq!(noise_variance(3.0, 0.0), 3.0);
        assert!((noise_variance(4.0, 10.0) - 0.4).abs() < 1e-12);
    }

    #[test]
    fn out_of_bounds_wavelet_is_an_error() {
        let spec = SynthSpec { t0_true: 0.0, offset_min: 0.0, ..SynthSpec::desk(0) };
        assert!(synth_gather(&spec).is_err());
        let spec = SynthSpec { samples: 100, ..SynthSpec::desk(0) };
        assert!(synth_gather(&spec).is_err());
    }
}
