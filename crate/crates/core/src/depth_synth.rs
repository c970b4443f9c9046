//! Synthetic depth frames and pose corpora.
//!
//! The hand surface is a union of capsules along the finger bones and an
//! ellipsoid for the palm, ray-cast per pixel with a z-buffer.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{Matrix3, Point3, UnitQuaternion, Vector3};
use rand::Rng;
use thiserror::Error;

use crate::hand_model::{
    clamp_to_limits, Finger, HandGeometry, HandModelError, JointLimits, PoseParams, FINGER_DOFS,
    NUM_FINGERS,
};
use crate::kv::{KvDoc, KvError, KvWriter};

pub const BACKGROUND: u16 = 0;

/// Capsule radii for proximal, middle and distal segments, mm.
pub const BONE_RADII: [f64; 3] = [8.0, 7.0, 6.0];
/// Palm ellipsoid semi-axes along lateral, forward and normal palm axes, mm.
pub const PALM_SEMI_AXES: [f64; 3] = [45.0, 40.0, 15.0];

/// Bundled articulation templates and viewpoints.
pub const DEFAULT_TEMPLATES: &str = include_str!("../data/articulations.kv");

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("rendered image is empty: the hand is outside the view frustum")]
    EmptyImage,
    #[error("invalid camera intrinsics: {0}")]
    Intrinsics(String),
    #[error("pgm: {0}")]
    Pgm(String),
    #[error("templates: {0}")]
    Templates(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Kv(#[from] KvError),
    #[error(transparent)]
    Model(#[from] HandModelError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SynthError + '_ {
    move |source| SynthError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Pinhole intrinsics. Pixel `(u, v)` back-projects through
/// `((u - cx) / fx, (v - cy) / fy, 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        Self {
            fx: 280.0,
            fy: 280.0,
            cx: 160.0,
            cy: 120.0,
            width: 320,
            height: 240,
        }
    }
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<(), SynthError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(SynthError::Intrinsics("fx and fy must be positive".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(SynthError::Intrinsics("width and height must be positive".into()));
        }
        Ok(())
    }

    pub fn back_project(&self, u: f64, v: f64, depth: f64) -> Point3<f64> {
        Point3::new(
            (u - self.cx) * depth / self.fx,
            (v - self.cy) * depth / self.fy,
            depth,
        )
    }

    pub fn project(&self, p: &Point3<f64>) -> (f64, f64) {
        (
            self.cx + self.fx * p.x / p.z,
            self.cy + self.fy * p.y / p.z,
        )
    }

    pub fn ray(&self, u: f64, v: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }

    pub fn to_kv(&self) -> String {
        let mut w = KvWriter::new();
        w.comment("pinhole intrinsics, pixels; depth unit is millimetres")
            .entry("fx", self.fx)
            .entry("fy", self.fy)
            .entry("cx", self.cx)
            .entry("cy", self.cy)
            .entry("width", self.width)
            .entry("height", self.height);
        w.finish()
    }

    pub fn from_kv(doc: &KvDoc) -> Result<Self, SynthError> {
        doc.reject_unknown(|k| ["fx", "fy", "cx", "cy", "width", "height"].contains(&k))?;
        let cam = Self {
            fx: doc.f64("fx")?,
            fy: doc.f64("fy")?,
            cx: doc.f64("cx")?,
            cy: doc.f64("cy")?,
            width: doc.u64("width")? as u32,
            height: doc.u64("height")? as u32,
        };
        cam.validate()?;
        Ok(cam)
    }
}

/// 16-bit millimetre depth map; 0 marks background.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    pub intrinsics: CameraIntrinsics,
    data: Vec<u16>,
}

impl DepthImage {
    pub fn empty(intrinsics: CameraIntrinsics) -> Self {
        let n = intrinsics.width as usize * intrinsics.height as usize;
        Self {
            intrinsics,
            data: vec![BACKGROUND; n],
        }
    }

    pub fn from_raw(intrinsics: CameraIntrinsics, data: Vec<u16>) -> Result<Self, SynthError> {
        if data.len() != intrinsics.width as usize * intrinsics.height as usize {
            return Err(SynthError::Pgm(format!(
                "expected {}x{} samples, got {}",
                intrinsics.width,
                intrinsics.height,
                data.len()
            )));
        }
        Ok(Self { intrinsics, data })
    }

    pub fn width(&self) -> u32 {
        self.intrinsics.width
    }

    pub fn height(&self) -> u32 {
        self.intrinsics.height
    }

    pub fn raw(&self) -> &[u16] {
        &self.data
    }

    pub fn get(&self, x: u32, y: u32) -> u16 {
        self.data[y as usize * self.intrinsics.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, depth: u16) {
        let w = self.intrinsics.width as usize;
        self.data[y as usize * w + x as usize] = depth;
    }

    pub fn foreground_count(&self) -> usize {
        self.data.iter().filter(|&&d| d != BACKGROUND).count()
    }

    /// Bounding box `(x0, y0, x1, y1)` of foreground pixels, exclusive end.
    pub fn foreground_bounds(&self) -> Option<(u32, u32, u32, u32)> {
        let w = self.width();
        let mut bounds: Option<(u32, u32, u32, u32)> = None;
        for (i, &d) in self.data.iter().enumerate() {
            if d == BACKGROUND {
                continue;
            }
            let (x, y) = (i as u32 % w, i as u32 / w);
            bounds = Some(match bounds {
                None => (x, y, x + 1, y + 1),
                Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x + 1), y1.max(y + 1)),
            });
        }
        bounds
    }

    /// Binary PGM: `P5`, maxval 65535, big-endian samples.
    pub fn write_pgm<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        write!(out, "P5\n{} {}\n65535\n", self.width(), self.height())?;
        let mut bytes = Vec::with_capacity(self.data.len() * 2);
        for d in &self.data {
            bytes.extend_from_slice(&d.to_be_bytes());
        }
        out.write_all(&bytes)
    }

    /// Reads a P5 image; intrinsics are supplied by the caller (sidecar file)
    /// and must match the stored dimensions.
    pub fn read_pgm<R: Read>(mut input: R, intrinsics: CameraIntrinsics) -> Result<Self, SynthError> {
        let mut bytes = Vec::new();
        input
            .read_to_end(&mut bytes)
            .map_err(|e| SynthError::Pgm(e.to_string()))?;
        let mut pos = 0usize;
        let mut tokens = Vec::new();
        while tokens.len() < 4 {
            while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
                if bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                } else {
                    pos += 1;
                }
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(SynthError::Pgm(format!("truncated header at byte {pos}")));
            }
            tokens.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        }
        // exactly one whitespace byte separates the header from the raster
        pos += 1;
        if tokens[0] != "P5" {
            return Err(SynthError::Pgm(format!("bad magic {:?}", tokens[0])));
        }
        let parse = |s: &str| {
            s.parse::<u32>()
                .map_err(|_| SynthError::Pgm(format!("bad header field {s:?}")))
        };
        let (w, h, maxval) = (parse(&tokens[1])?, parse(&tokens[2])?, parse(&tokens[3])?);
        if maxval != 65535 {
            return Err(SynthError::Pgm(format!("expected maxval 65535, got {maxval}")));
        }
        if w != intrinsics.width || h != intrinsics.height {
            return Err(SynthError::Pgm(format!(
                "image is {w}x{h} but intrinsics say {}x{}",
                intrinsics.width, intrinsics.height
            )));
        }
        let n = w as usize * h as usize;
        let raster = bytes.get(pos..).unwrap_or(&[]);
        if raster.len() != 2 * n {
            return Err(SynthError::Pgm(format!(
                "expected {} raster bytes after byte {pos}, found {}",
                2 * n,
                raster.len()
            )));
        }
        let data = raster
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect();
        Self::from_raw(intrinsics, data)
    }

    pub fn save_pgm(&self, path: &Path) -> Result<(), SynthError> {
        let f = std::fs::File::create(path).map_err(io_err(path))?;
        let mut w = std::io::BufWriter::new(f);
        self.write_pgm(&mut w).map_err(io_err(path))?;
        w.flush().map_err(io_err(path))
    }

    pub fn load_pgm(path: &Path, intrinsics: CameraIntrinsics) -> Result<Self, SynthError> {
        let f = std::fs::File::open(path).map_err(io_err(path))?;
        Self::read_pgm(std::io::BufReader::new(f), intrinsics)
            .map_err(|e| SynthError::Pgm(format!("{}: {e}", path.display())))
    }
}

/// Pixels with non-background depth, row-major.
pub fn foreground_mask(img: &DepthImage) -> Vec<(u32, u32)> {
    let w = img.width();
    img.data
        .iter()
        .enumerate()
        .filter(|(_, &d)| d != BACKGROUND)
        .map(|(i, _)| (i as u32 % w, i as u32 / w))
        .collect()
}

/// Solid pieces of the rendered hand surface, in camera coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Primitive {
    Capsule {
        a: Point3<f64>,
        b: Point3<f64>,
        radius: f64,
    },
    Ellipsoid {
        center: Point3<f64>,
        /// Columns are the semi-axis directions.
        axes: Matrix3<f64>,
        radii: Vector3<f64>,
    },
}

impl Primitive {
    pub fn bounding_sphere(&self) -> (Point3<f64>, f64) {
        match *self {
            Primitive::Capsule { a, b, radius } => {
                (nalgebra::center(&a, &b), (b - a).norm() / 2.0 + radius)
            }
            Primitive::Ellipsoid { center, radii, .. } => (center, radii.max()),
        }
    }

    /// Smallest positive ray parameter `t` where `origin + t * dir` hits the
    /// surface. `dir` must be unit length.
    pub fn intersect(&self, origin: &Point3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        match *self {
            Primitive::Capsule { a, b, radius } => ray_capsule(origin, dir, &a, &b, radius),
            Primitive::Ellipsoid {
                center,
                axes,
                radii,
            } => {
                let inv = axes.transpose();
                let o = (inv * (origin - center)).component_div(&radii);
                let d = (inv * dir).component_div(&radii);
                let qa = d.dot(&d);
                let qb = o.dot(&d);
                let qc = o.dot(&o) - 1.0;
                let disc = qb * qb - qa * qc;
                if disc < 0.0 {
                    return None;
                }
                let s = disc.sqrt();
                let t0 = (-qb - s) / qa;
                let t1 = (-qb + s) / qa;
                [t0, t1].into_iter().find(|&t| t > 0.0)
            }
        }
    }

    /// Signed distance for the capsule; scaled approximation for the ellipsoid.
    pub fn signed_distance(&self, p: &Point3<f64>) -> f64 {
        match *self {
            Primitive::Capsule { a, b, radius } => {
                let ab = b - a;
                let t = ((p - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
                (p - (a + ab * t)).norm() - radius
            }
            Primitive::Ellipsoid {
                center,
                axes,
                radii,
            } => {
                let local = axes.transpose() * (p - center);
                let k0 = local.component_div(&radii).norm();
                let k1 = local.component_div(&radii.component_mul(&radii)).norm();
                if k1 == 0.0 {
                    -radii.min()
                } else {
                    k0 * (k0 - 1.0) / k1
                }
            }
        }
    }
}

fn ray_capsule(
    ro: &Point3<f64>,
    rd: &Vector3<f64>,
    pa: &Point3<f64>,
    pb: &Point3<f64>,
    r: f64,
) -> Option<f64> {
    let ba = pb - pa;
    let oa = ro - pa;
    let baba = ba.dot(&ba);
    let bard = ba.dot(rd);
    let baoa = ba.dot(&oa);
    let rdoa = rd.dot(&oa);
    let oaoa = oa.dot(&oa);
    let a = baba - bard * bard;
    let b = baba * rdoa - baoa * bard;
    let c = baba * oaoa - baoa * baoa - r * r * baba;
    let h = b * b - a * c;
    if h >= 0.0 && a.abs() > 1e-12 {
        let t = (-b - h.sqrt()) / a;
        let y = baoa + t * bard;
        if y > 0.0 && y < baba && t > 0.0 {
            return Some(t);
        }
    }
    // caps
    let mut best: Option<f64> = None;
    for center in [pa, pb] {
        let oc = ro - center;
        let b = rd.dot(&oc);
        let c = oc.dot(&oc) - r * r;
        let h = b * b - c;
        if h >= 0.0 {
            let t = -b - h.sqrt();
            if t > 0.0 && best.is_none_or(|bt| t < bt) {
                best = Some(t);
            }
        }
    }
    best
}

/// Surface primitives of the hand at `pose`, in camera coordinates.
pub fn hand_primitives(
    geom: &HandGeometry,
    pose: &PoseParams,
) -> Result<Vec<Primitive>, HandModelError> {
    let joints = crate::hand_model::forward_kinematics(geom, pose)?;
    let rot = pose.unit_orientation()?.to_rotation_matrix();
    let mut prims = Vec::with_capacity(NUM_FINGERS * 3 + 1);
    let mean_base = Finger::ALL[1..]
        .iter()
        .map(|&f| geom.finger_base_offset(f))
        .sum::<Vector3<f64>>()
        / 4.0;
    let palm_center = Point3::from(pose.translation) + rot * (mean_base * 0.5);
    prims.push(Primitive::Ellipsoid {
        center: palm_center,
        axes: *rot.matrix(),
        radii: Vector3::from(PALM_SEMI_AXES),
    });
    for f in Finger::ALL {
        let j = f.joints();
        for seg in 0..3 {
            prims.push(Primitive::Capsule {
                a: joints.0[j[seg]],
                b: joints.0[j[seg + 1]],
                radius: BONE_RADII[seg],
            });
        }
    }
    Ok(prims)
}

/// Conservative pixel rectangle `(x0, y0, x1, y1)` (exclusive) covering a
/// sphere, or the whole image if the sphere reaches the camera plane.
fn screen_rect(cam: &CameraIntrinsics, center: &Point3<f64>, radius: f64) -> Option<(u32, u32, u32, u32)> {
    let (w, h) = (cam.width as f64, cam.height as f64);
    if center.z + radius <= 0.0 {
        return None;
    }
    if center.z - radius <= 1e-6 {
        return Some((0, 0, cam.width, cam.height));
    }
    let zs = [center.z - radius, center.z + radius];
    let span = |c: f64, f: f64, k: f64| {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for x in [c - radius, c + radius] {
            for z in zs {
                let s = k + f * x / z;
                lo = lo.min(s);
                hi = hi.max(s);
            }
        }
        (lo, hi)
    };
    let (u0, u1) = span(center.x, cam.fx, cam.cx);
    let (v0, v1) = span(center.y, cam.fy, cam.cy);
    let x0 = u0.floor().max(0.0);
    let y0 = v0.floor().max(0.0);
    let x1 = (u1.ceil() + 1.0).min(w);
    let y1 = (v1.ceil() + 1.0).min(h);
    if x0 >= x1 || y0 >= y1 {
        return None;
    }
    Some((x0 as u32, y0 as u32, x1 as u32, y1 as u32))
}

/// Z-buffered depth of a set of primitives; `None` where nothing is hit.
pub fn raycast_depth(prims: &[Primitive], cam: &CameraIntrinsics) -> Vec<Option<f64>> {
    let (w, h) = (cam.width as usize, cam.height as usize);
    let mut zbuf: Vec<Option<f64>> = vec![None; w * h];
    let origin = Point3::origin();
    for prim in prims {
        let (c, r) = prim.bounding_sphere();
        let Some((x0, y0, x1, y1)) = screen_rect(cam, &c, r) else {
            continue;
        };
        for y in y0..y1 {
            for x in x0..x1 {
                let ray = cam.ray(x as f64, y as f64);
                let dir = ray.normalize();
                if let Some(t) = prim.intersect(&origin, &dir) {
                    let z = t * dir.z;
                    let slot = &mut zbuf[y as usize * w + x as usize];
                    if z > 0.0 && slot.is_none_or(|old| z < old) {
                        *slot = Some(z);
                    }
                }
            }
        }
    }
    zbuf
}

fn quantize(z: f64) -> u16 {
    z.round().clamp(1.0, 65534.0) as u16
}

pub fn render_depth(
    geom: &HandGeometry,
    pose: &PoseParams,
    cam: &CameraIntrinsics,
) -> Result<DepthImage, SynthError> {
    cam.validate()?;
    let prims = hand_primitives(geom, pose)?;
    let zbuf = raycast_depth(&prims, cam);
    let data: Vec<u16> = zbuf.iter().map(|z| z.map_or(BACKGROUND, quantize)).collect();
    if data.iter().all(|&d| d == BACKGROUND) {
        return Err(SynthError::EmptyImage);
    }
    DepthImage::from_raw(*cam, data)
}

/// `render_depth` plus uniform noise in `[-jitter_mm, jitter_mm]` on
/// foreground pixels.
pub fn render_depth_jittered<R: Rng + ?Sized>(
    geom: &HandGeometry,
    pose: &PoseParams,
    cam: &CameraIntrinsics,
    jitter_mm: f64,
    rng: &mut R,
) -> Result<DepthImage, SynthError> {
    let mut img = render_depth(geom, pose, cam)?;
    if jitter_mm > 0.0 {
        for d in img.data.iter_mut().filter(|d| **d != BACKGROUND) {
            let z = *d as f64 + rng.gen_range(-jitter_mm..=jitter_mm);
            *d = quantize(z);
        }
    }
    Ok(img)
}

/// Per-finger articulation templates and camera viewpoints for training data.
#[derive(Debug, Clone, PartialEq)]
pub struct ArticulationTemplates {
    /// Degrees, per finger, in template order.
    pub fingers: [Vec<[f64; FINGER_DOFS]>; NUM_FINGERS],
    /// Yaw, pitch, roll in degrees.
    pub viewpoints: Vec<[f64; 3]>,
}

impl ArticulationTemplates {
    pub fn from_kv(doc: &KvDoc) -> Result<Self, SynthError> {
        if doc.u64("version")? != 1 {
            return Err(SynthError::Templates("unsupported version".into()));
        }
        let mut fingers: [Vec<[f64; FINGER_DOFS]>; NUM_FINGERS] = Default::default();
        for f in Finger::ALL {
            let mut i = 0;
            while doc.contains(&format!("{}.{i}", f.name())) {
                let v = doc.f64_list(&format!("{}.{i}", f.name()))?;
                let arr: [f64; FINGER_DOFS] = v.try_into().map_err(|_| {
                    SynthError::Templates(format!("{}.{i} needs 4 angles", f.name()))
                })?;
                fingers[f.index()].push(arr);
                i += 1;
            }
            if fingers[f.index()].is_empty() {
                return Err(SynthError::Templates(format!("no templates for {}", f.name())));
            }
        }
        let mut viewpoints = Vec::new();
        while doc.contains(&format!("viewpoint.{}", viewpoints.len())) {
            let v = doc.f64_list(&format!("viewpoint.{}", viewpoints.len()))?;
            let arr: [f64; 3] = v
                .try_into()
                .map_err(|_| SynthError::Templates("viewpoints need 3 angles".into()))?;
            viewpoints.push(arr);
        }
        if viewpoints.is_empty() {
            return Err(SynthError::Templates("no viewpoints".into()));
        }
        let known = |k: &str| {
            k == "version"
                || k.strip_prefix("viewpoint.")
                    .and_then(|i| i.parse::<usize>().ok())
                    .is_some_and(|i| i < viewpoints.len())
                || Finger::ALL.iter().any(|f| {
                    k.strip_prefix(f.name())
                        .and_then(|r| r.strip_prefix('.'))
                        .and_then(|i| i.parse::<usize>().ok())
                        .is_some_and(|i| i < fingers[f.index()].len())
                })
        };
        doc.reject_unknown(known)?;
        Ok(Self { fingers, viewpoints })
    }

    pub fn load(path: &Path) -> Result<Self, SynthError> {
        Self::from_kv(&KvDoc::load(path)?)
    }

    /// Orientation for viewpoint `i`.
    pub fn viewpoint(&self, i: usize) -> UnitQuaternion<f64> {
        viewpoint_orientation(self.viewpoints[i])
    }

    pub fn angles(&self, finger: Finger, i: usize) -> [f64; FINGER_DOFS] {
        self.fingers[finger.index()][i].map(f64::to_radians)
    }
}

impl Default for ArticulationTemplates {
    fn default() -> Self {
        let doc = KvDoc::parse(DEFAULT_TEMPLATES).expect("bundled templates parse");
        Self::from_kv(&doc).expect("bundled templates are valid")
    }
}

/// Fingers up in the image, palm towards the camera, then yaw/pitch/roll.
pub fn viewpoint_orientation([yaw, pitch, roll]: [f64; 3]) -> UnitQuaternion<f64> {
    let base = UnitQuaternion::from_axis_angle(&Vector3::x_axis(), std::f64::consts::PI);
    UnitQuaternion::from_axis_angle(&Vector3::y_axis(), yaw.to_radians())
        * UnitQuaternion::from_axis_angle(&Vector3::x_axis(), pitch.to_radians())
        * UnitQuaternion::from_axis_angle(&Vector3::z_axis(), roll.to_radians())
        * base
}

/// Every combination of the first `articulations` templates per finger,
/// under each of the first `viewpoints` viewpoints: `articulations^5 *
/// viewpoints` poses, viewpoint-major.
pub fn generate_training_poses(
    templates: &ArticulationTemplates,
    articulations: usize,
    viewpoints: usize,
    translation: Vector3<f64>,
    limits: &JointLimits,
) -> Result<Vec<PoseParams>, SynthError> {
    if articulations == 0 || viewpoints == 0 {
        return Err(SynthError::Templates(
            "need at least one articulation and one viewpoint".into(),
        ));
    }
    for f in Finger::ALL {
        if templates.fingers[f.index()].len() < articulations {
            return Err(SynthError::Templates(format!(
                "{} has only {} templates, {articulations} requested",
                f.name(),
                templates.fingers[f.index()].len()
            )));
        }
    }
    if templates.viewpoints.len() < viewpoints {
        return Err(SynthError::Templates(format!(
            "only {} viewpoints available, {viewpoints} requested",
            templates.viewpoints.len()
        )));
    }
    let combos = articulations.pow(NUM_FINGERS as u32);
    let mut poses = Vec::with_capacity(combos * viewpoints);
    for v in 0..viewpoints {
        let q = templates.viewpoint(v);
        for combo in 0..combos {
            let mut rest = combo;
            let mut angles = [[0.0; FINGER_DOFS]; NUM_FINGERS];
            for f in Finger::ALL {
                angles[f.index()] = templates.angles(f, rest % articulations);
                rest /= articulations;
            }
            let pose = PoseParams::new(translation, q, angles);
            if let Some((f, d, val)) = limits.violation(&pose) {
                return Err(SynthError::Templates(format!(
                    "template for {} dof {d} = {:.1} deg violates the joint limits",
                    f.name(),
                    val.to_degrees()
                )));
            }
            poses.push(pose);
        }
    }
    Ok(poses)
}

fn lerp_pose(a: &PoseParams, b: &PoseParams, t: f64) -> PoseParams {
    let qa = a.unit_orientation().unwrap_or_else(|_| UnitQuaternion::identity());
    let mut qb = b.unit_orientation().unwrap_or_else(|_| UnitQuaternion::identity());
    if qa.coords.dot(&qb.coords) < 0.0 {
        qb = UnitQuaternion::new_unchecked(-qb.into_inner());
    }
    let q = if qa == qb {
        qa
    } else {
        qa.try_slerp(&qb, t, 1e-9).unwrap_or_else(|| {
            UnitQuaternion::new_normalize(qa.into_inner().lerp(&qb.into_inner(), t))
        })
    };
    let mut angles = a.finger_angles;
    for (fa, fb) in angles.iter_mut().zip(b.finger_angles.iter()) {
        for (x, y) in fa.iter_mut().zip(fb.iter()) {
            *x += (y - *x) * t;
        }
    }
    let translation = a.translation + (b.translation - a.translation) * t;
    PoseParams::new(translation, q, angles)
}

/// Interpolates `frames_between` steps between consecutive keyposes
/// (slerp on orientation, linear elsewhere), clamps to `limits`, then keeps
/// every `subsample`-th frame starting with the first.
pub fn generate_sequence(
    keyposes: &[PoseParams],
    frames_between: usize,
    subsample: usize,
    limits: &JointLimits,
) -> Result<Vec<PoseParams>, SynthError> {
    if keyposes.len() < 2 {
        return Err(SynthError::Templates("a sequence needs at least two keyposes".into()));
    }
    if frames_between == 0 || subsample == 0 {
        return Err(SynthError::Templates(
            "frames_between and subsample must be at least 1".into(),
        ));
    }
    let mut frames = Vec::with_capacity((keyposes.len() - 1) * frames_between + 1);
    for pair in keyposes.windows(2) {
        for s in 0..frames_between {
            let t = s as f64 / frames_between as f64;
            frames.push(clamp_to_limits(&lerp_pose(&pair[0], &pair[1], t), limits));
        }
    }
    frames.push(clamp_to_limits(keyposes.last().unwrap(), limits));
    Ok(frames.into_iter().step_by(subsample).collect())
}

/// Random keyposes built from the training templates: a template per
/// finger, a viewpoint with a small extra rotation and a jittered
/// translation around `center`.
pub fn random_keyposes<R: Rng + ?Sized>(
    templates: &ArticulationTemplates,
    articulations: usize,
    viewpoints: usize,
    count: usize,
    center: Vector3<f64>,
    rng: &mut R,
) -> Vec<PoseParams> {
    let articulations = articulations.max(1);
    (0..count)
        .map(|_| {
            let mut angles = [[0.0; FINGER_DOFS]; NUM_FINGERS];
            for f in Finger::ALL {
                let n = articulations.min(templates.fingers[f.index()].len());
                angles[f.index()] = templates.angles(f, rng.gen_range(0..n));
            }
            let v = rng.gen_range(0..viewpoints.clamp(1, templates.viewpoints.len()));
            let base = templates.viewpoints[v];
            let jittered = [
                base[0] + rng.gen_range(-8.0..8.0),
                base[1] + rng.gen_range(-8.0..8.0),
                base[2] + rng.gen_range(-8.0..8.0),
            ];
            let t = center
                + Vector3::new(
                    rng.gen_range(-20.0..20.0),
                    rng.gen_range(-20.0..20.0),
                    rng.gen_range(-40.0..40.0),
                );
            PoseParams::new(t, viewpoint_orientation(jittered), angles)
        })
        .collect()
}
