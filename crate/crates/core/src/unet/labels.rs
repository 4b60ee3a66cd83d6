use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::gather::{Frame, Gather, PickSeries, NO_PICK};

/// How first-break labels are rendered into a segmentation target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelType {
    /// A single 1 at the first-break row of each column.
    FbNonFb,
    /// 1 from the first-break row to the bottom of the window.
    PrePostFb,
}

/// Binary `T' × N` target plus a loss weight per column (0 for unlabeled traces).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingMask {
    pub mask: Array2<f32>,
    pub column_weights: Vec<f32>,
}

/// Ground-truth labels moved into each column's window. Labels that fall
/// outside their window become [`NO_PICK`].
pub fn crop_labels(g: &Gather, crop_top: &[usize], window_length: usize) -> PickSeries {
    let picks = g
        .fb_labels()
        .iter()
        .zip(crop_top)
        .map(|(&l, &top)| {
            let rel = l as i64 - top as i64;
            if l >= 0 && (0..window_length as i64).contains(&rel) {
                rel as i32
            } else {
                NO_PICK
            }
        })
        .collect();
    PickSeries::new(picks, Frame::CroppedWindow)
}

pub fn mask_from_labels(labels: &PickSeries, rows: usize, label_type: LabelType) -> TrainingMask {
    let n = labels.len();
    let mut mask = Array2::zeros((rows, n));
    let mut column_weights = vec![0.0; n];
    for (j, &l) in labels.picks.iter().enumerate() {
        if l < 0 || l as usize >= rows {
            continue;
        }
        column_weights[j] = 1.0;
        match label_type {
            LabelType::FbNonFb => mask[[l as usize, j]] = 1.0,
            LabelType::PrePostFb => mask.column_mut(j).slice_mut(ndarray::s![l as usize..]).fill(1.0),
        }
    }
    TrainingMask { mask, column_weights }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gather::Polarity;

    #[test]
    fn rendering() {
        let l = PickSeries::new(vec![3, -1], Frame::CroppedWindow);
        let m = mask_from_labels(&l, 6, LabelType::FbNonFb);
        assert_eq!(m.mask.column(0).to_vec(), vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        assert_eq!(m.mask.column(1).to_vec(), vec![0.0; 6]);
        assert_eq!(m.column_weights, vec![1.0, 0.0]);
        let m = mask_from_labels(&l, 6, LabelType::PrePostFb);
        assert_eq!(m.mask.column(0).to_vec(), vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn cropping() {
        let g = Gather::new(Array2::zeros((20, 3)), 1.0, vec![0.0; 3], vec![5, 15, -1], Polarity::Peak, "")
            .unwrap();
        let l = crop_labels(&g, &[2, 2, 0], 8);
        assert_eq!(l.picks, vec![3, -1, -1]);
    }
}
