//! Depth-normalized probe features and training sample extraction.

use nalgebra::{Point3, Vector3};
use rand::Rng;

use crate::depth_synth::{foreground_mask, DepthImage, BACKGROUND};
use crate::hand_model::{JointPositions, NUM_JOINTS};

/// Read access to a depth map for probe features. Pixels outside the map or
/// on background read as `background`.
pub trait DepthProbe {
    fn probe(&self, x: i64, y: i64, background: f64) -> f64;
}

impl DepthProbe for DepthImage {
    fn probe(&self, x: i64, y: i64, background: f64) -> f64 {
        if x < 0 || y < 0 || x >= self.width() as i64 || y >= self.height() as i64 {
            return background;
        }
        match self.get(x as u32, y as u32) {
            BACKGROUND => background,
            d => d as f64,
        }
    }
}

/// Depth image cropped to its foreground bounding box. Everything outside
/// the box is background, so probes behave exactly as on the full image.
#[derive(Debug, Clone)]
pub struct CroppedDepth {
    x0: i64,
    y0: i64,
    width: i64,
    height: i64,
    data: Vec<u16>,
}

impl CroppedDepth {
    pub fn new(img: &DepthImage) -> Self {
        let Some((x0, y0, x1, y1)) = img.foreground_bounds() else {
            return Self {
                x0: 0,
                y0: 0,
                width: 0,
                height: 0,
                data: Vec::new(),
            };
        };
        let mut data = Vec::with_capacity(((x1 - x0) * (y1 - y0)) as usize);
        for y in y0..y1 {
            for x in x0..x1 {
                data.push(img.get(x, y));
            }
        }
        Self {
            x0: x0 as i64,
            y0: y0 as i64,
            width: (x1 - x0) as i64,
            height: (y1 - y0) as i64,
            data,
        }
    }
}

impl DepthProbe for CroppedDepth {
    fn probe(&self, x: i64, y: i64, background: f64) -> f64 {
        let (lx, ly) = (x - self.x0, y - self.y0);
        if lx < 0 || ly < 0 || lx >= self.width || ly >= self.height {
            return background;
        }
        match self.data[(ly * self.width + lx) as usize] {
            BACKGROUND => background,
            d => d as f64,
        }
    }
}

/// Depth difference between two probes whose pixel offsets are scaled by the
/// inverse centre depth: `d(x + u / d(x)) - d(x + v / d(x))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitFunction {
    /// Probe offsets in pixel-millimetres.
    pub u: [f32; 2],
    pub v: [f32; 2],
    /// Millimetres; samples with feature < threshold go left.
    pub threshold: f32,
}

impl SplitFunction {
    pub fn feature<D: DepthProbe + ?Sized>(
        &self,
        img: &D,
        x: u32,
        y: u32,
        center_depth: f64,
        background: f64,
    ) -> f64 {
        let at = |o: [f32; 2]| {
            let px = x as f64 + o[0] as f64 / center_depth;
            let py = y as f64 + o[1] as f64 / center_depth;
            img.probe(px.round() as i64, py.round() as i64, background)
        };
        at(self.u) - at(self.v)
    }

    pub fn goes_left<D: DepthProbe + ?Sized>(
        &self,
        img: &D,
        x: u32,
        y: u32,
        center_depth: f64,
        background: f64,
    ) -> bool {
        self.feature(img, x, y, center_depth, background) < self.threshold as f64
    }

    /// Offsets uniform in `±probe_range`, threshold uniform in
    /// `±threshold_range`.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, probe_range: f64, threshold_range: f64) -> Self {
        let mut off = || rng.gen_range(-probe_range..=probe_range) as f32;
        let u = [off(), off()];
        let v = [off(), off()];
        let threshold = rng.gen_range(-threshold_range..=threshold_range) as f32;
        Self { u, v, threshold }
    }
}

/// One foreground patch: its pixel, depth, back-projected centre and the
/// label of the nearest joint. Offsets to the joints are read from the
/// ground truth of `image`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingSample {
    pub image: u32,
    pub x: u16,
    pub y: u16,
    pub depth: f32,
    pub center: [f32; 3],
    pub label: u8,
}

impl TrainingSample {
    pub fn center(&self) -> Point3<f64> {
        Point3::new(
            self.center[0] as f64,
            self.center[1] as f64,
            self.center[2] as f64,
        )
    }

    /// Vector from the patch centre to joint `j`.
    pub fn offset(&self, joints: &JointPositions, j: usize) -> Vector3<f64> {
        joints.0[j] - self.center()
    }

    pub fn offsets(&self, joints: &JointPositions) -> [Vector3<f64>; NUM_JOINTS] {
        std::array::from_fn(|j| self.offset(joints, j))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleConfig {
    /// Pixel grid step in both axes.
    pub stride: u32,
    /// Random cap on samples per image; 0 disables the cap.
    pub max_per_image: usize,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            stride: 4,
            max_per_image: 400,
        }
    }
}

pub fn nearest_joint(p: &Point3<f64>, joints: &JointPositions) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (j, q) in joints.iter().enumerate() {
        let d = (q - p).norm_squared();
        if d < best_d {
            best_d = d;
            best = j;
        }
    }
    best
}

/// Foreground pixels on the stride grid, optionally capped by a random
/// subset (kept in row-major order).
pub fn extract_samples<R: Rng + ?Sized>(
    img: &DepthImage,
    gt: &JointPositions,
    image_index: u32,
    cfg: &SampleConfig,
    rng: &mut R,
) -> Vec<TrainingSample> {
    let stride = cfg.stride.max(1);
    let pixels: Vec<(u32, u32)> = foreground_mask(img)
        .into_iter()
        .filter(|(x, y)| x % stride == 0 && y % stride == 0)
        .collect();
    let chosen: Vec<(u32, u32)> = if cfg.max_per_image > 0 && pixels.len() > cfg.max_per_image {
        let mut idx = rand::seq::index::sample(rng, pixels.len(), cfg.max_per_image).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| pixels[i]).collect()
    } else {
        pixels
    };
    chosen
        .into_iter()
        .map(|(x, y)| {
            let depth = img.get(x, y) as f64;
            let c = img.intrinsics.back_project(x as f64, y as f64, depth);
            TrainingSample {
                image: image_index,
                x: x as u16,
                y: y as u16,
                depth: depth as f32,
                center: [c.x as f32, c.y as f32, c.z as f32],
                label: nearest_joint(&c, gt) as u8,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::depth_synth::CameraIntrinsics;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn flat_image(depth: u16) -> DepthImage {
        let cam = CameraIntrinsics::default();
        let mut img = DepthImage::empty(cam);
        for y in 100..140 {
            for x in 140..180 {
                img.set(x, y, depth);
            }
        }
        img
    }

    #[test]
    fn cropped_probe_matches_full_image() {
        let img = flat_image(500);
        let crop = CroppedDepth::new(&img);
        for y in (-5..250).step_by(7) {
            for x in (-5..330).step_by(7) {
                assert_eq!(img.probe(x, y, 1e4), crop.probe(x, y, 1e4));
            }
        }
    }

    #[test]
    fn zero_offset_for_joint_on_pixel() {
        let img = flat_image(500);
        let cam = img.intrinsics;
        let on_pixel = cam.back_project(160.0, 120.0, 500.0);
        let mut joints = JointPositions([Point3::new(0.0, 0.0, 900.0); NUM_JOINTS]);
        joints.0[7] = on_pixel;
        let cfg = SampleConfig {
            stride: 4,
            max_per_image: 0,
        };
        let samples = extract_samples(&img, &joints, 0, &cfg, &mut ChaCha8Rng::seed_from_u64(0));
        let s = samples.iter().find(|s| s.x == 160 && s.y == 120).unwrap();
        assert!(s.offset(&joints, 7).norm() < 1e-3);
        assert_eq!(s.label, 7);
    }

    #[test]
    fn stride_of_image_width_bounds_sample_count() {
        let img = flat_image(500);
        let joints = JointPositions([Point3::origin(); NUM_JOINTS]);
        let cfg = SampleConfig {
            stride: img.width(),
            max_per_image: 0,
        };
        let n = extract_samples(&img, &joints, 0, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).len();
        assert!(n <= img.height() as usize);
    }

    #[test]
    fn empty_foreground_gives_no_samples() {
        let img = DepthImage::empty(CameraIntrinsics::default());
        let joints = JointPositions([Point3::origin(); NUM_JOINTS]);
        let n = extract_samples(&img, &joints, 0, &SampleConfig::default(), &mut ChaCha8Rng::seed_from_u64(0));
        assert!(n.is_empty());
    }

    #[test]
    fn cap_limits_samples() {
        let img = flat_image(500);
        let joints = JointPositions([Point3::origin(); NUM_JOINTS]);
        let cfg = SampleConfig {
            stride: 1,
            max_per_image: 50,
        };
        let s = extract_samples(&img, &joints, 3, &cfg, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(s.len(), 50);
        assert!(s.iter().all(|s| s.image == 3));
    }

    /// Depth map of a plane at `z` with a 40 mm step at metric x >= 30 mm.
    struct SteppedPlane {
        z: f64,
        cam: CameraIntrinsics,
    }

    impl DepthProbe for SteppedPlane {
        fn probe(&self, x: i64, _y: i64, _bg: f64) -> f64 {
            let metric_x = (x as f64 - self.cam.cx) * self.z / self.cam.fx;
            if metric_x >= 30.0 {
                self.z + 40.0
            } else {
                self.z
            }
        }
    }

    #[test]
    fn features_are_depth_invariant() {
        let cam = CameraIntrinsics::default();
        let split = SplitFunction {
            u: [28_000.0, 0.0],
            v: [-5_000.0, 0.0],
            threshold: 0.0,
        };
        // the same metric point (x = 0) seen at 400 mm and 800 mm
        let near = SteppedPlane { z: 400.0, cam };
        let far = SteppedPlane { z: 800.0, cam };
        let px = cam.cx as u32;
        let a = split.feature(&near, px, 120, near.z, 1e4);
        let b = split.feature(&far, px, 120, far.z, 1e4);
        assert_eq!(a, 40.0);
        assert_eq!(a, b);
    }
}
