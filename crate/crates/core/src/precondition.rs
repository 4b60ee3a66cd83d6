//! Network input preparation: LMO crop, AGC and SLTA maps, trace-wise normalization.

use ndarray::{Array2, Array3, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, FbError, Result};
use crate::gather::Gather;

/// Linear-moveout velocity prior: trace `j` is centred on `t_j = d_j / v + t0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LmoPrior {
    /// Reference velocity in m/s.
    pub v: f64,
    /// Interception time in seconds.
    pub t0: f64,
    /// Samples kept per trace (`T'`).
    pub window_length: usize,
}

impl LmoPrior {
    pub fn validate(&self) -> Result<()> {
        if !(self.v > 0.0 && self.v.is_finite()) {
            return invalid("lmo.v", format!("{} is not a positive velocity", self.v));
        }
        if !self.t0.is_finite() {
            return invalid("lmo.t0", "must be finite");
        }
        if self.window_length < 2 {
            return invalid("lmo.window_length", "must be at least 2");
        }
        Ok(())
    }

    /// Nearest sample index of the predicted arrival on a trace at `offset` metres.
    pub fn center_sample(&self, offset: f64, dt_ms: f64) -> i64 {
        ((offset / self.v + self.t0) * 1000.0 / dt_ms).round() as i64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Gather,
    Agc,
    Slta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreconditionConfig {
    pub lmo: LmoPrior,
    pub features: Vec<FeatureKind>,
    pub agc_window: usize,
    pub slta_short: usize,
    pub slta_long: usize,
}

impl PreconditionConfig {
    pub fn validate(&self) -> Result<()> {
        self.lmo.validate()?;
        canonical_features(&self.features)?;
        let t = self.lmo.window_length;
        if self.features.contains(&FeatureKind::Agc) {
            check_agc(self.agc_window, t)?;
        }
        if self.features.contains(&FeatureKind::Slta) {
            check_slta(self.slta_short, self.slta_long, t)?;
        }
        Ok(())
    }
}

/// `C × T' × N` network input plus the absolute top sample of every column's window.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStack {
    pub channels: Array3<f32>,
    pub channel_names: Vec<FeatureKind>,
    pub crop_top: Vec<usize>,
}

impl FeatureStack {
    pub fn window_length(&self) -> usize {
        self.channels.len_of(Axis(1))
    }

    pub fn traces(&self) -> usize {
        self.channels.len_of(Axis(2))
    }
}

/// Cuts a `window_length` window around each trace's LMO arrival. Windows that
/// would leave the trace are shifted inward, so every column has the same length.
pub fn lmo_crop(g: &Gather, prior: &LmoPrior) -> Result<(Array2<f32>, Vec<usize>)> {
    prior.validate()?;
    let (t, n) = (g.samples(), g.traces());
    let len = prior.window_length;
    if len > t {
        return Err(FbError::InsufficientData(format!(
            "window of {len} samples does not fit a {t}-sample gather"
        )));
    }
    let max_top = (t - len) as i64;
    let tops: Vec<usize> = g
        .offsets()
        .iter()
        .map(|&d| {
            let top = prior.center_sample(d, g.dt_ms()) - (len / 2) as i64;
            top.clamp(0, max_top) as usize
        })
        .collect();
    let amps = g.amplitudes();
    let cropped = Array2::from_shape_fn((len, n), |(i, j)| amps[[tops[j] + i, j]]);
    Ok((cropped, tops))
}

fn check_agc(w: usize, rows: usize) -> Result<()> {
    if w % 2 != 0 {
        return invalid("agc_window", format!("{w} is not even"));
    }
    if w >= rows {
        return invalid("agc_window", format!("{w} does not fit {rows} rows"));
    }
    Ok(())
}

fn check_slta(ns: usize, nl: usize, rows: usize) -> Result<()> {
    if ns == 0 || ns >= nl {
        return invalid("slta windows", format!("need 1 <= n_s < n_l, got n_s={ns}, n_l={nl}"));
    }
    if nl >= rows {
        return invalid("slta windows", format!("n_l={nl} does not fit {rows} rows"));
    }
    Ok(())
}

/// Prefix sums of `|x|` down each column, in f64; row `i + 1` holds the sum of rows `0..=i`.
fn abs_prefix(g: ArrayView2<f32>) -> Array2<f64> {
    let (t, n) = g.dim();
    let mut p = Array2::zeros((t + 1, n));
    for i in 0..t {
        for j in 0..n {
            p[[i + 1, j]] = p[[i, j]] + f64::from(g[[i, j]].abs());
        }
    }
    p
}

/// Centred moving mean of `|G|` over `w + 1` samples; rows without a full window are 0.
pub fn agc_map(g: ArrayView2<f32>, w: usize) -> Result<Array2<f32>> {
    let (t, n) = g.dim();
    check_agc(w, t)?;
    let p = abs_prefix(g);
    let h = w / 2;
    let mut out = Array2::zeros((t, n));
    for i in h..t - h {
        for j in 0..n {
            out[[i, j]] = ((p[[i + h + 1, j]] - p[[i - h, j]]) / (w + 1) as f64) as f32;
        }
    }
    Ok(out)
}

/// Short-to-long backward average ratio, defined on rows `n_l ..= T' - n_l`.
/// Cells whose long window is all zero are 0.
pub fn slta_map(g: ArrayView2<f32>, ns: usize, nl: usize) -> Result<Array2<f32>> {
    let (t, n) = g.dim();
    check_slta(ns, nl, t)?;
    let p = abs_prefix(g);
    let mut out = Array2::zeros((t, n));
    for i in nl..=t - nl {
        for j in 0..n {
            let short = p[[i + 1, j]] - p[[i - ns, j]];
            let long = p[[i + 1, j]] - p[[i - nl, j]];
            if long > 0.0 {
                out[[i, j]] = ((nl as f64 * short) / (ns as f64 * long)) as f32;
            }
        }
    }
    Ok(out)
}

/// Divides each column by its largest absolute value; zero columns stay zero.
pub fn tracewise_normalize(f: ArrayView2<f32>) -> Array2<f32> {
    let mut out = f.to_owned();
    for mut col in out.columns_mut() {
        let m = col.iter().fold(0.0f32, |m, v| m.max(v.abs()));
        if m > 0.0 {
            col.mapv_inplace(|v| (v / m).clamp(-1.0, 1.0));
        }
    }
    out
}

fn canonical_features(features: &[FeatureKind]) -> Result<Vec<FeatureKind>> {
    if features.is_empty() {
        return invalid("features", "at least one input channel is required");
    }
    let mut f = features.to_vec();
    f.sort();
    f.dedup();
    if f.len() != features.len() {
        return invalid("features", format!("{features:?} lists a channel twice"));
    }
    Ok(f)
}

/// Normalized channels stacked in the order gather, agc, slta (whichever are selected).
pub fn build_stack(g: &Gather, cfg: &PreconditionConfig) -> Result<FeatureStack> {
    cfg.validate()?;
    let names = canonical_features(&cfg.features)?;
    let (crop, crop_top) = lmo_crop(g, &cfg.lmo)?;
    let (t, n) = crop.dim();
    let mut channels = Array3::zeros((names.len(), t, n));
    for (c, kind) in names.iter().enumerate() {
        let map = match kind {
            FeatureKind::Gather => tracewise_normalize(crop.view()),
            FeatureKind::Agc => tracewise_normalize(agc_map(crop.view(), cfg.agc_window)?.view()),
            FeatureKind::Slta => tracewise_normalize(
                slta_map(crop.view(), cfg.slta_short, cfg.slta_long)?.view(),
            ),
        };
        channels.index_axis_mut(Axis(0), c).assign(&map);
    }
    if channels.iter().any(|v| !v.is_finite()) {
        return Err(FbError::Numeric("non-finite value in feature stack".into()));
    }
    Ok(FeatureStack { channels, channel_names: names, crop_top })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gather::Polarity;
    use ndarray::array;

    fn gather(t: usize, offsets: Vec<f64>, dt: f64) -> Gather {
        let n = offsets.len();
        let amps = Array2::from_shape_fn((t, n), |(i, j)| (i * 10 + j) as f32);
        Gather::new(amps, dt, offsets, vec![-1; n], Polarity::Trough, "s").unwrap()
    }

    #[test]
    fn center_samples() {
        let p = LmoPrior { v: 5000.0, t0: 0.1, window_length: 9 };
        assert_eq!(p.center_sample(0.0, 2.0), 50);
        assert_eq!(p.center_sample(5000.0, 2.0), 550);
    }

    #[test]
    fn crop_shifts_at_edges() {
        // v huge, t0 = 6 ms at dt 2 ms: centre sample 3.
        let g = gather(100, vec![0.0, 0.0], 2.0);
        let p = LmoPrior { v: 1e12, t0: 0.006, window_length: 9 };
        let (c, top) = lmo_crop(&g, &p).unwrap();
        assert_eq!(top, vec![0, 0]);
        assert_eq!(c.dim(), (9, 2));
        assert_eq!(c[[8, 1]], 81.0);

        let late = LmoPrior { v: 1e12, t0: 0.198, window_length: 9 };
        let (_, top) = lmo_crop(&g, &late).unwrap();
        assert_eq!(top, vec![91, 91]);

        let mid = LmoPrior { v: 1e12, t0: 0.1, window_length: 9 };
        assert_eq!(lmo_crop(&g, &mid).unwrap().1, vec![46, 46]);

        let long = LmoPrior { v: 1.0, t0: 0.0, window_length: 101 };
        assert!(lmo_crop(&g, &long).is_err());
    }

    #[test]
    fn agc_examples() {
        let col = array![[0.0f32], [3.0], [0.0]];
        let a = agc_map(col.view(), 2).unwrap();
        assert_eq!(a.column(0).to_vec(), vec![0.0, 1.0, 0.0]);
        let ones = Array2::from_elem((40, 2), -1.0f32);
        let a = agc_map(ones.view(), 30).unwrap();
        assert!((15..25).all(|i| (a[[i, 0]] - 1.0).abs() < 1e-6));
        assert_eq!(a[[14, 0]], 0.0);
        assert_eq!(a[[25, 0]], 0.0);
        assert!(agc_map(ones.view(), 3).is_err());
        assert!(agc_map(ones.view(), 40).is_err());
    }

    #[test]
    fn slta_examples() {
        let ones = Array2::from_elem((20, 1), 2.0f32);
        let s = slta_map(ones.view(), 3, 5).unwrap();
        assert!((s[[5, 0]] - 10.0 / 9.0).abs() < 1e-6);
        assert!((s[[15, 0]] - 10.0 / 9.0).abs() < 1e-6);
        assert_eq!(s[[4, 0]], 0.0);
        assert_eq!(s[[16, 0]], 0.0);

        let col = array![[1.0f32], [1.0], [1.0], [-4.0], [0.0], [0.0], [0.0]];
        let s = slta_map(col.view(), 1, 2).unwrap();
        assert!((s[[3, 0]] - 10.0 / 6.0).abs() < 1e-6);
        assert_eq!(s[[1, 0]], 0.0);

        let zero = Array2::zeros((10, 1));
        assert!(slta_map(zero.view(), 1, 2).unwrap().iter().all(|&v| v == 0.0));
        assert!(slta_map(zero.view(), 2, 2).is_err());
        assert!(slta_map(zero.view(), 0, 2).is_err());
    }

    #[test]
    fn normalize_examples() {
        let f = array![[2.0f32, 0.0, -5.0], [-1.0, 0.0, 0.0], [4.0, 0.0, 0.0]];
        let out = tracewise_normalize(f.view());
        assert_eq!(out.column(0).to_vec(), vec![0.5, -0.25, 1.0]);
        assert_eq!(out.column(1).to_vec(), vec![0.0; 3]);
        assert_eq!(out[[0, 2]], -1.0);
    }

    #[test]
    fn stack_order_and_count() {
        let g = gather(80, vec![0.0, 100.0, 200.0], 2.0);
        let mut cfg = PreconditionConfig {
            lmo: LmoPrior { v: 2000.0, t0: 0.05, window_length: 64 },
            features: vec![FeatureKind::Slta, FeatureKind::Gather, FeatureKind::Agc],
            agc_window: 30,
            slta_short: 3,
            slta_long: 5,
        };
        let s = build_stack(&g, &cfg).unwrap();
        assert_eq!(s.channels.dim(), (3, 64, 3));
        assert_eq!(s.channel_names, vec![FeatureKind::Gather, FeatureKind::Agc, FeatureKind::Slta]);
        cfg.features = vec![FeatureKind::Gather];
        let s1 = build_stack(&g, &cfg).unwrap();
        let (crop, _) = lmo_crop(&g, &cfg.lmo).unwrap();
        assert_eq!(s1.channels.index_axis(Axis(0), 0), tracewise_normalize(crop.view()));
        cfg.features = vec![];
        assert!(build_stack(&g, &cfg).is_err());
        cfg.features = vec![FeatureKind::Agc, FeatureKind::Agc];
        assert!(build_stack(&g, &cfg).is_err());
    }
}
