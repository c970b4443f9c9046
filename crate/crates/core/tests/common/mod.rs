//! Oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{Point3, Vector3};
use rand::Rng;

/// Gaussian KDE (no cutoff) at `x`.
pub fn kde(points: &[Point3<f64>], weights: &[f64], bandwidth: f64, x: &Point3<f64>) -> f64 {
    let inv = 1.0 / (2.0 * bandwidth * bandwidth);
    points
        .iter()
        .zip(weights)
        .map(|(p, w)| w * (-(p - x).norm_squared() * inv).exp())
        .sum()
}

/// Densest point of the KDE inside the cube of half-width `radius` around
/// `around`: a 1 mm grid, then a 0.05 mm grid around the best cell.
pub fn kde_grid_maximum(
    points: &[Point3<f64>],
    weights: &[f64],
    bandwidth: f64,
    around: &Point3<f64>,
    radius: f64,
) -> Point3<f64> {
    let search = |center: Point3<f64>, half: f64, step: f64| {
        let n = (half / step).round() as i64;
        let mut best = (f64::NEG_INFINITY, center);
        for i in -n..=n {
            for j in -n..=n {
                for k in -n..=n {
                    let x = center + Vector3::new(i as f64, j as f64, k as f64) * step;
                    let d = kde(points, weights, bandwidth, &x);
                    if d > best.0 {
                        best = (d, x);
                    }
                }
            }
        }
        best.1
    };
    let coarse = search(*around, radius, 1.0);
    search(coarse, 1.0, 0.05)
}

/// Two isotropic blobs of 50 points each, well separated relative to the
/// 15 mm bandwidth; returns points, weights and the two blob centres.
pub fn two_blobs<R: Rng>(rng: &mut R) -> (Vec<Point3<f64>>, Vec<f64>, [Point3<f64>; 2]) {
    let c0 = Point3::new(rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0), rng.gen_range(400.0..600.0));
    let dir = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
    let dir = if dir.norm() < 1e-3 { Vector3::x() } else { dir.normalize() };
    let c1 = c0 + dir * rng.gen_range(80.0..150.0);
    let mut pts = Vec::with_capacity(100);
    let mut w = Vec::with_capacity(100);
    for (i, c) in [c0, c1].iter().enumerate() {
        let scale = if i == 0 { 1.0 } else { 0.6 };
        for _ in 0..50 {
            pts.push(c + Vector3::from_fn(|_, _| rng.gen_range(-6.0..6.0)));
            w.push(scale * rng.gen_range(0.5..1.5));
        }
    }
    (pts, w, [c0, c1])
}
