//! Equidistant fisheye ball localization.
//!
//! A point at angle `theta` off the optical axis lands at image radius
//! `r = f * theta`. The ball's image radius is taken as `dr = f * R / d`
//! for a ball of radius `R` at range `d`, so a detection's box size gives
//! the range back as `d = f * R / dr`. Camera frames have `z` along the
//! optical axis, `x` to the image right and `y` down.

use std::io::{BufRead, Write};

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::VisionError;
use crate::rng::{self, SimRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FisheyeIntrinsics {
    pub focal_px: f64,
    pub principal_point: [f64; 2],
    /// Width, height in pixels.
    pub image_size: [f64; 2],
    pub fov: f64,
}

impl Default for FisheyeIntrinsics {
    /// 480 x 400 image, 210 degree lens whose image circle spans the width.
    fn default() -> Self {
        let fov = 210f64.to_radians();
        Self::from_fov(fov, [480.0, 400.0])
    }
}

impl FisheyeIntrinsics {
    /// Focal length chosen so that `f * fov / 2` equals half the image width.
    pub fn from_fov(fov: f64, image_size: [f64; 2]) -> Self {
        Self {
            focal_px: (image_size[0] / 2.0) / (fov / 2.0),
            principal_point: [image_size[0] / 2.0, image_size[1] / 2.0],
            image_size,
            fov,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CameraId {
    Front,
    Bottom,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub pixel: [f64; 2],
    /// Angle off the optical axis (rad).
    pub theta: f64,
    /// Image radius of the projected sphere (px).
    pub radius_px: f64,
}

/// Projects a sphere of radius `ball_radius` centred at `p_cam`.
pub fn project_point_to_fisheye(
    p_cam: &Vector3<f64>,
    ball_radius: f64,
    intr: &FisheyeIntrinsics,
) -> Result<Projection, VisionError> {
    let d = p_cam.norm();
    if d <= 0.0 {
        return Err(VisionError::AtOrigin);
    }
    let rho = p_cam.x.hypot(p_cam.y);
    let theta = rho.atan2(p_cam.z);
    if theta > intr.fov / 2.0 {
        return Err(VisionError::OutOfView { theta });
    }
    let r = intr.focal_px * theta;
    let phi = p_cam.y.atan2(p_cam.x);
    let [cx, cy] = intr.principal_point;
    Ok(Projection {
        pixel: [cx + r * phi.cos(), cy + r * phi.sin()],
        theta,
        radius_px: intr.focal_px * ball_radius / d,
    })
}

/// Unit ray through a pixel.
pub fn unproject_direction(pixel: [f64; 2], intr: &FisheyeIntrinsics) -> Vector3<f64> {
    let du = pixel[0] - intr.principal_point[0];
    let dv = pixel[1] - intr.principal_point[1];
    let r = du.hypot(dv);
    let theta = r / intr.focal_px;
    let phi = dv.atan2(du);
    let s = theta.sin();
    Vector3::new(s * phi.cos(), s * phi.sin(), theta.cos())
}

/// Camera pose on the body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraExtrinsics {
    /// Rotation taking camera-frame vectors into the body frame.
    pub body_from_camera: UnitQuaternion<f64>,
    /// Camera origin, body frame (m).
    pub position: Vector3<f64>,
}

impl CameraExtrinsics {
    fn from_axes(x: Vector3<f64>, y: Vector3<f64>, z: Vector3<f64>, position: Vector3<f64>) -> Self {
        let m = Matrix3::from_columns(&[x, y, z]);
        Self { body_from_camera: UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(m)), position }
    }

    /// Forward-facing camera on the nose.
    pub fn front() -> Self {
        Self::from_axes(-Vector3::y(), -Vector3::z(), Vector3::x(), Vector3::new(0.27, 0.0, 0.0))
    }

    /// Downward-facing camera under the chin.
    pub fn bottom() -> Self {
        Self::from_axes(-Vector3::y(), -Vector3::x(), -Vector3::z(), Vector3::new(0.2, 0.0, -0.06))
    }

    pub fn to_camera(&self, p_body: &Vector3<f64>) -> Vector3<f64> {
        self.body_from_camera.inverse_transform_vector(&(p_body - self.position))
    }

    pub fn to_body(&self, p_cam: &Vector3<f64>) -> Vector3<f64> {
        self.body_from_camera * p_cam + self.position
    }
}

/// The two-camera rig with shared intrinsics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraRig {
    pub intrinsics: FisheyeIntrinsics,
    pub front: CameraExtrinsics,
    pub bottom: CameraExtrinsics,
    pub ball_radius: f64,
}

impl Default for CameraRig {
    fn default() -> Self {
        Self {
            intrinsics: FisheyeIntrinsics::default(),
            front: CameraExtrinsics::front(),
            bottom: CameraExtrinsics::bottom(),
            ball_radius: 0.09,
        }
    }
}

impl CameraRig {
    pub fn extrinsics(&self, camera: CameraId) -> &CameraExtrinsics {
        match camera {
            CameraId::Front => &self.front,
            CameraId::Bottom => &self.bottom,
        }
    }
}

/// One bounding-box detection, as produced by a detector or [`synth_detect`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    /// Timestamp (s).
    pub t: f64,
    pub camera: CameraId,
    pub center: [f64; 2],
    /// Box width and height (px).
    pub size: [f64; 2],
    pub confidence: f64,
}

impl Detection {
    /// Ball image radius implied by the box.
    pub fn radius_px(&self) -> f64 {
        (self.size[0] + self.size[1]) / 4.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BallEstimate {
    /// Ball centre, body frame (m).
    pub position: Vector3<f64>,
    pub camera: CameraId,
    pub confidence: f64,
}

/// Inverts a detection into a body-frame ball position.
pub fn detection_to_ball_position(det: &Detection, rig: &CameraRig) -> Result<BallEstimate, VisionError> {
    let dr = det.radius_px();
    if !(dr >= 1.0) {
        return Err(VisionError::DegenerateBox { radius_px: dr });
    }
    let intr = &rig.intrinsics;
    let dir = unproject_direction(det.center, intr);
    let range = intr.focal_px * rig.ball_radius / dr;
    Ok(BallEstimate {
        position: rig.extrinsics(det.camera).to_body(&(dir * range)),
        camera: det.camera,
        confidence: det.confidence,
    })
}

/// Keeps the higher-confidence detection (front wins ties, so the result
/// does not depend on argument order) and inverts it. Falls back to the
/// other detection if the preferred one is degenerate.
pub fn fuse_detections(a: Option<&Detection>, b: Option<&Detection>, rig: &CameraRig) -> Option<BallEstimate> {
    let rank = |d: &Detection| (d.confidence, d.camera == CameraId::Front);
    let (first, second) = match (a, b) {
        (Some(x), Some(y)) => {
            if rank(x) >= rank(y) {
                (Some(x), Some(y))
            } else {
                (Some(y), Some(x))
            }
        }
        (x, None) => (x, None),
        (None, y) => (y, None),
    };
    first
        .and_then(|d| detection_to_ball_position(d, rig).ok())
        .or_else(|| second.and_then(|d| detection_to_ball_position(d, rig).ok()))
}

/// Synthetic detector settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthDetectorConfig {
    /// Uniform jitter half-width on box centre and size (px).
    pub pixel_jitter: f64,
    pub drop_probability: f64,
}

impl Default for SynthDetectorConfig {
    fn default() -> Self {
        Self { pixel_jitter: 1.0, drop_probability: 0.0 }
    }
}

/// Detector confidence: falls off toward the image periphery and for small
/// (distant) balls.
pub fn synthetic_confidence(theta: f64, radius_px: f64, intr: &FisheyeIntrinsics) -> f64 {
    let edge = 1.0 - 0.5 * (theta / (intr.fov / 2.0)).clamp(0.0, 1.0);
    let size = 1.0 - (-radius_px / 5.0).exp();
    (edge * size).clamp(0.0, 1.0)
}

/// Projects the true body-frame ball position into `camera` and returns a
/// jittered detection, or `None` when the ball is out of view, its box
/// leaves the image, or the frame is dropped.
pub fn synth_detect(
    ball_body: &Vector3<f64>,
    t: f64,
    camera: CameraId,
    rig: &CameraRig,
    cfg: &SynthDetectorConfig,
    rng: &mut SimRng,
) -> Option<Detection> {
    if cfg.drop_probability > 0.0 && rng.random::<f64>() < cfg.drop_probability {
        return None;
    }
    let intr = &rig.intrinsics;
    let p_cam = rig.extrinsics(camera).to_camera(ball_body);
    let proj = project_point_to_fisheye(&p_cam, rig.ball_radius, intr).ok()?;
    let j = cfg.pixel_jitter;
    let mut jitter = || if j > 0.0 { rng::uniform(rng, -j, j) } else { 0.0 };
    let center = [proj.pixel[0] + jitter(), proj.pixel[1] + jitter()];
    let side = 2.0 * proj.radius_px;
    let size = [(side + jitter()).max(0.0), (side + jitter()).max(0.0)];
    let [w, h] = intr.image_size;
    let inside = center[0] - size[0] / 2.0 >= 0.0
        && center[0] + size[0] / 2.0 <= w
        && center[1] - size[1] / 2.0 >= 0.0
        && center[1] + size[1] / 2.0 <= h;
    if !inside {
        return None;
    }
    Some(Detection { t, camera, center, size, confidence: synthetic_confidence(proj.theta, proj.radius_px, intr) })
}

/// Reads one detection per line; blank lines are skipped.
pub fn read_detections_jsonl(reader: impl BufRead) -> std::io::Result<Vec<Detection>> {
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let det = serde_json::from_str(&line)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, format!("line {}: {e}", n + 1)))?;
        out.push(det);
    }
    Ok(out)
}

pub fn write_detections_jsonl(mut writer: impl Write, dets: &[Detection]) -> std::io::Result<()> {
    for d in dets {
        serde_json::to_writer(&mut writer, d)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}
