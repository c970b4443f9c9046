//! Weighted Gaussian-kernel mean-shift in 3D.

use nalgebra::{Point3, Vector3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanShiftParams {
    /// Gaussian kernel standard deviation, mm.
    pub bandwidth: f64,
    pub max_iters: usize,
    /// Converged points closer than this are merged into one mode.
    pub merge_radius: f64,
}

impl MeanShiftParams {
    pub fn new(bandwidth: f64, max_iters: usize) -> Self {
        Self {
            bandwidth,
            max_iters,
            merge_radius: bandwidth / 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mode {
    pub position: Point3<f64>,
    /// Total weight of the points that converged to this mode.
    pub support: f64,
}

// kernel contributions beyond 4 bandwidths are below 3.4e-4 and skipped
const CUTOFF_SIGMAS: f64 = 4.0;
const CONVERGED: f64 = 1e-5;

/// One mean-shift update from `x`. Returns `None` if no point lies within
/// the kernel support.
pub fn mean_shift_step(
    x: &Point3<f64>,
    points: &[Point3<f64>],
    weights: &[f64],
    bandwidth: f64,
) -> Option<Point3<f64>> {
    let inv = 1.0 / (2.0 * bandwidth * bandwidth);
    let cutoff = (CUTOFF_SIGMAS * bandwidth).powi(2);
    let mut num = Vector3::zeros();
    let mut den = 0.0;
    for (p, &w) in points.iter().zip(weights) {
        let d2 = (p - x).norm_squared();
        if d2 > cutoff {
            continue;
        }
        let k = w * (-d2 * inv).exp();
        num += p.coords * k;
        den += k;
    }
    (den > 0.0).then(|| Point3::from(num / den))
}

/// Runs mean-shift from every input point, merges converged points within
/// `merge_radius` and returns modes sorted by support, largest first. Ties
/// keep first-seen order.
pub fn mean_shift(points: &[Point3<f64>], weights: &[f64], params: &MeanShiftParams) -> Vec<Mode> {
    assert_eq!(points.len(), weights.len(), "one weight per point");
    assert!(params.bandwidth > 0.0, "bandwidth must be positive");
    let tol = CONVERGED * params.bandwidth;
    let mut modes: Vec<Mode> = Vec::new();
    let merge2 = params.merge_radius * params.merge_radius;
    for (start, &w) in points.iter().zip(weights) {
        let mut x = *start;
        for _ in 0..params.max_iters {
            let Some(next) = mean_shift_step(&x, points, weights, params.bandwidth) else {
                break;
            };
            let shift = (next - x).norm();
            x = next;
            if shift < tol {
                break;
            }
        }
        match modes
            .iter_mut()
            .find(|m| (m.position - x).norm_squared() <= merge2)
        {
            Some(m) => m.support += w,
            None => modes.push(Mode {
                position: x,
                support: w,
            }),
        }
    }
    modes.sort_by(|a, b| b.support.total_cmp(&a.support));
    modes
}
