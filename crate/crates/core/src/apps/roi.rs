//! Region-of-interest accuracy for automated zoom-in: the fraction of
//! frames in which a square box centered on the predicted ball contains
//! the true ball.

use ndarray::Array2;

use crate::error::{Error, Result};

/// A 3x3 projective map from pitch meters into image coordinates. The
/// identity treats the pitch plane itself as the image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography(pub [[f64; 3]; 3]);

impl Default for Homography {
    fn default() -> Self {
        Homography([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    }
}

impl Homography {
    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let m = &self.0;
        let w = m[2][0] * x + m[2][1] * y + m[2][2];
        (
            (m[0][0] * x + m[0][1] * y + m[0][2]) / w,
            (m[1][0] * x + m[1][1] * y + m[1][2]) / w,
        )
    }

    pub fn map_trajectory(&self, traj: &Array2<f64>) -> Array2<f64> {
        let mut out = traj.clone();
        for mut row in out.rows_mut() {
            let (x, y) = self.apply(row[0], row[1]);
            row[0] = x;
            row[1] = y;
        }
        out
    }
}

/// For each box size `b`, the fraction of frames where the true position
/// falls inside the axis-aligned `b x b` box centered on the prediction.
/// Both trajectories must already live in the same image frame.
pub fn roi_accuracy(
    pred: &Array2<f64>,
    truth: &Array2<f64>,
    box_sizes: &[f64],
) -> Result<Vec<(f64, f64)>> {
    if pred.shape() != truth.shape() || pred.shape()[1] != 2 {
        return Err(Error::Shape(format!(
            "trajectories must share a [T, 2] shape, got {:?} vs {:?}",
            pred.shape(),
            truth.shape()
        )));
    }
    if let Some(&bad) = box_sizes.iter().find(|&&b| b <= 0.0) {
        return Err(Error::Config(format!("box size must be positive, got {bad}")));
    }
    let t = pred.shape()[0];
    let mut out = Vec::with_capacity(box_sizes.len());
    for &b in box_sizes {
        let half = b / 2.0;
        let hits = (0..t)
            .filter(|&i| {
                (pred[[i, 0]] - truth[[i, 0]]).abs() <= half
                    && (pred[[i, 1]] - truth[[i, 1]]).abs() <= half
            })
            .count();
        out.push((b, if t == 0 { 0.0 } else { hits as f64 / t as f64 }));
    }
    Ok(out)
}
