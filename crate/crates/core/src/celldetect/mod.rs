//! Cell localisation: Sobel gradients feeding a gradient-directed circular
//! Hough transform, selection of tiles that hold a complete cell, and
//! scoring of detections against ground truth.

mod gradient;
mod hough;
mod io;
mod metrics;
mod select;

pub use gradient::{sobel_gradients, GradientField};
pub use hough::{edge_pixels, hough_circles, otsu_threshold, CircleHit, EdgePixel, HoughParams};
pub use io::{read_circles_csv, read_hits_csv, write_circles_csv, write_hits_csv, TruthCircle};
pub use metrics::{detection_metrics, match_circles, DetectionReport};
pub use select::{complete_cell_tile, select_complete_cell_tiles};

use crate::error::Result;
use crate::imagecore::{gaussian_blur, FloatPlane};

/// All tunables of the detection stage.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectParams {
    pub sigma: f64,
    pub hough: HoughParams,
    /// Clearance kept between a cell's rim and its tile border.
    pub margin: usize,
    /// Center and radius tolerance used when matching against ground truth.
    pub match_tol: f64,
}

impl Default for DetectParams {
    fn default() -> Self {
        DetectParams {
            sigma: 2.0,
            hough: HoughParams::default(),
            margin: 3,
            match_tol: 5.0,
        }
    }
}

/// Blur, gradients, Hough: the full detection chain on one plane.
pub fn detect_cells(plane: &FloatPlane, params: &DetectParams) -> Result<Vec<CircleHit>> {
    let blurred = gaussian_blur(plane, params.sigma)?;
    let grad = sobel_gradients(&blurred)?;
    hough_circles(&grad, &params.hough)
}
