//! Shot gathers, pick series and survey bookkeeping.

mod io;
mod manifest;
mod split;

pub use io::{decode_gather, encode_gather, load_gather, save_gather, GATHER_MAGIC};
pub use manifest::{resolve, Manifest, SurveyEntry, MANIFEST_FILE};
pub use split::{make_split, Regime, RegimeKind, SurveySplit, FINETUNE_TRAIN_COUNT};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{FbError, Result};

/// Sign of the waveform extremum that marks the first break.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Peak,
    Trough,
}

/// One shot: `T` time samples (rows) by `N` traces (columns).
#[derive(Debug, Clone, PartialEq)]
pub struct Gather {
    amplitudes: Array2<f32>,
    dt_ms: f64,
    offsets: Vec<f64>,
    fb_labels: Vec<i32>,
    polarity: Polarity,
    survey_id: String,
}

impl Gather {
    /// Builds a gather, checking every invariant. `fb_labels` uses `-1` for unlabeled traces.
    pub fn new(
        amplitudes: Array2<f32>,
        dt_ms: f64,
        offsets: Vec<f64>,
        fb_labels: Vec<i32>,
        polarity: Polarity,
        survey_id: impl Into<String>,
    ) -> Result<Self> {
        let (t, n) = amplitudes.dim();
        let bad = |field: &str, msg: String| FbError::Format { field: field.to_string(), msg };
        if t == 0 || n == 0 {
            return Err(bad("shape", format!("T={t}, N={n}; both must be at least 1")));
        }
        if !(dt_ms > 0.0 && dt_ms.is_finite()) {
            return Err(bad("dt_ms", format!("{dt_ms} is not a positive finite interval")));
        }
        if offsets.len() != n {
            return Err(bad("offsets", format!("{} values for {n} traces", offsets.len())));
        }
        if let Some(j) = offsets.iter().position(|d| !(*d >= 0.0 && d.is_finite())) {
            return Err(bad(&format!("offsets[{j}]"), format!("{} is negative or not finite", offsets[j])));
        }
        if fb_labels.len() != n {
            return Err(bad("fb_labels", format!("{} values for {n} traces", fb_labels.len())));
        }
        if let Some(j) = fb_labels.iter().position(|&l| l < -1 || l >= t as i32) {
            return Err(bad(
                &format!("fb_labels[{j}]"),
                format!("{} outside {{-1}} ∪ [0, {}]", fb_labels[j], t - 1),
            ));
        }
        Ok(Self {
            amplitudes,
            dt_ms,
            offsets,
            fb_labels,
            polarity,
            survey_id: survey_id.into(),
        })
    }

    pub fn samples(&self) -> usize {
        self.amplitudes.nrows()
    }

    pub fn traces(&self) -> usize {
        self.amplitudes.ncols()
    }

    pub fn amplitudes(&self) -> &Array2<f32> {
        &self.amplitudes
    }

    pub fn dt_ms(&self) -> f64 {
        self.dt_ms
    }

    pub fn offsets(&self) -> &[f64] {
        &self.offsets
    }

    pub fn fb_labels(&self) -> &[i32] {
        &self.fb_labels
    }

    pub fn polarity(&self) -> Polarity {
        self.polarity
    }

    pub fn survey_id(&self) -> &str {
        &self.survey_id
    }

    pub fn with_survey_id(mut self, id: impl Into<String>) -> Self {
        self.survey_id = id.into();
        self
    }

    /// Same gather with new amplitudes of identical shape.
    pub fn with_amplitudes(&self, amplitudes: Array2<f32>) -> Result<Self> {
        if amplitudes.dim() != self.amplitudes.dim() {
            return Err(FbError::Format {
                field: "amplitudes".into(),
                msg: format!("shape {:?} differs from {:?}", amplitudes.dim(), self.amplitudes.dim()),
            });
        }
        Ok(Self {
            amplitudes,
            ..self.clone()
        })
    }

    /// Ground-truth labels as an absolute-time pick series.
    pub fn label_series(&self) -> PickSeries {
        PickSeries::new(self.fb_labels.clone(), Frame::AbsoluteTime)
    }
}

/// Coordinate system of pick indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frame {
    /// Row index inside the LMO window of each trace.
    CroppedWindow,
    /// Sample index of the original trace.
    AbsoluteTime,
}

/// Sentinel for "unlabeled", "not picked" and "rejected".
pub const NO_PICK: i32 = -1;

/// One first-break sample index per trace, [`NO_PICK`] where there is none.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PickSeries {
    pub picks: Vec<i32>,
    pub frame: Frame,
}

impl PickSeries {
    pub fn new(picks: Vec<i32>, frame: Frame) -> Self {
        Self { picks, frame }
    }

    pub fn unpicked(n: usize, frame: Frame) -> Self {
        Self::new(vec![NO_PICK; n], frame)
    }

    pub fn len(&self) -> usize {
        self.picks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.picks.is_empty()
    }

    pub fn picked_count(&self) -> usize {
        self.picks.iter().filter(|&&p| p >= 0).count()
    }
}
