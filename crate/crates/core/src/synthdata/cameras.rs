use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Camera;

/// Number of evenly spaced equatorial views.
pub const EQUATORIAL_VIEWS: usize = 8;
/// Extra random views in 360° mode, on top of the equatorial ring.
pub const RANDOM_360_VIEWS: usize = 24;
const MIN_RADIUS: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CameraMode {
    /// Yaw and pitch uniform within the front ranges.
    FrontRange,
    /// Yaws `0°, 45°, …, 315°` at zero pitch.
    Equatorial8,
    /// The equatorial ring, then yaw uniform over the full circle with
    /// pitch within the front pitch range.
    Random360,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraSamplerSpec {
    pub mode: CameraMode,
    pub radius_mean: f64,
    pub radius_sd: f64,
    /// Vertical field of view, degrees.
    pub fov_mean: f64,
    pub fov_sd: f64,
    /// Half-ranges in degrees.
    pub pitch_range: f64,
    pub yaw_range: f64,
}

impl Default for CameraSamplerSpec {
    fn default() -> Self {
        Self {
            mode: CameraMode::FrontRange,
            radius_mean: 2.7,
            radius_sd: 0.1,
            fov_mean: 18.83,
            fov_sd: 1.0,
            pitch_range: 26.0,
            yaw_range: 36.0,
        }
    }
}

impl CameraSamplerSpec {
    pub fn with_mode(mode: CameraMode) -> Self {
        Self {
            mode,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.radius_mean > 0.0
            && self.radius_sd >= 0.0
            && self.fov_mean > 0.0
            && self.fov_mean < 180.0
            && self.fov_sd >= 0.0
            && (0.0..=90.0).contains(&self.pitch_range)
            && (0.0..=180.0).contains(&self.yaw_range);
        if !ok {
            return Err(Error::contract(format!("invalid camera sampler {self:?}")));
        }
        Ok(())
    }
}

/// Converts a field of view in degrees to a focal length in pixels.
pub fn focal_from_fov(fov_deg: f64, image_width: usize) -> f64 {
    image_width as f64 / (2.0 * (fov_deg.to_radians() / 2.0).tan())
}

/// One drawn pose in sampler units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraSample {
    pub yaw: f64,
    pub pitch: f64,
    pub radius: f64,
    pub fov: f64,
}

impl CameraSample {
    pub fn camera(&self, width: usize, height: usize) -> Camera {
        Camera::orbit(self.yaw, self.pitch, self.radius, focal_from_fov(self.fov, width), width, height)
    }
}

/// Draws the `index`-th camera of a view set. The index matters only for
/// the deterministic equatorial views.
pub fn sample_camera(spec: &CameraSamplerSpec, index: usize, rng: &mut impl Rng) -> Result<CameraSample> {
    spec.validate()?;
    let radius = Normal::new(spec.radius_mean, spec.radius_sd)
        .expect("validated sd")
        .sample(rng)
        .max(MIN_RADIUS);
    let fov = Normal::new(spec.fov_mean, spec.fov_sd)
        .expect("validated sd")
        .sample(rng)
        .clamp(1.0, 179.0);
    let ring = |i: usize| (i % EQUATORIAL_VIEWS) as f64 * 360.0 / EQUATORIAL_VIEWS as f64;
    let uniform = |rng: &mut dyn rand::RngCore, half: f64| if half > 0.0 { rng.random_range(-half..=half) } else { 0.0 };
    let (yaw, pitch) = match spec.mode {
        CameraMode::FrontRange => {
            let yaw = uniform(rng, spec.yaw_range);
            (yaw, uniform(rng, spec.pitch_range))
        }
        CameraMode::Equatorial8 => (ring(index), 0.0),
        CameraMode::Random360 if index < EQUATORIAL_VIEWS => (ring(index), 0.0),
        CameraMode::Random360 => {
            let yaw = rng.random_range(0.0..360.0);
            (yaw, uniform(rng, spec.pitch_range))
        }
    };
    Ok(CameraSample { yaw, pitch, radius, fov })
}
