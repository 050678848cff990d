use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

pub fn normalize(a: Vec3) -> Vec3 {
    let n = norm(a);
    [a[0] / n, a[1] / n, a[2] / n]
}

/// Pinhole camera. Camera space is x right, y down, z forward; pixel
/// `(x, y)` has its center at `(x + 0.5, y + 0.5)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub position: Vec3,
    pub target: Vec3,
    pub up: Vec3,
    /// Focal length in pixels (square pixels).
    pub focal: f64,
    pub principal: [f64; 2],
    pub width: usize,
    pub height: usize,
    pub near: f64,
    pub far: f64,
}

pub const DEFAULT_NEAR: f64 = 0.1;
pub const DEFAULT_FAR: f64 = 100.0;

impl Camera {
    pub fn look_at(position: Vec3, target: Vec3, focal: f64, width: usize, height: usize) -> Self {
        Self {
            position,
            target,
            up: [0.0, 1.0, 0.0],
            focal,
            principal: [width as f64 / 2.0, height as f64 / 2.0],
            width,
            height,
            near: DEFAULT_NEAR,
            far: DEFAULT_FAR,
        }
    }

    /// Camera on a sphere around the origin. Yaw 0 / pitch 0 sits on `+z`;
    /// positive yaw swings toward `+x`, positive pitch toward `+y`.
    pub fn orbit(yaw_deg: f64, pitch_deg: f64, radius: f64, focal: f64, width: usize, height: usize) -> Self {
        let (yaw, pitch) = (yaw_deg.to_radians(), pitch_deg.to_radians());
        let position = [
            radius * yaw.sin() * pitch.cos(),
            radius * pitch.sin(),
            radius * yaw.cos() * pitch.cos(),
        ];
        Self::look_at(position, [0.0; 3], focal, width, height)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.focal > 0.0) {
            return Err(Error::contract(format!("focal must be positive, got {}", self.focal)));
        }
        if !(self.near > 0.0 && self.near < self.far) {
            return Err(Error::contract(format!(
                "need 0 < near < far, got near {} far {}",
                self.near, self.far
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::contract("image size must be non-zero"));
        }
        let fwd = sub(self.target, self.position);
        if norm(fwd) < 1e-12 {
            return Err(Error::contract("camera position coincides with its target"));
        }
        if norm(cross(normalize(fwd), self.up)) <= 1e-9 {
            return Err(Error::contract("up vector is parallel to the viewing direction"));
        }
        Ok(())
    }

    /// Unit vector the camera looks along.
    pub fn forward(&self) -> Vec3 {
        normalize(sub(self.target, self.position))
    }

    /// World-to-camera rotation; rows are the camera's right, down and
    /// forward axes.
    pub fn rotation(&self) -> [Vec3; 3] {
        let z = self.forward();
        let x = normalize(cross(z, self.up));
        let y = cross(z, x);
        [x, y, z]
    }

    pub fn to_camera(&self, p: Vec3) -> Vec3 {
        let r = self.rotation();
        let d = sub(p, self.position);
        [dot(r[0], d), dot(r[1], d), dot(r[2], d)]
    }

    /// Pixel coordinates of a world point, or `None` behind the near plane.
    pub fn project_point(&self, p: Vec3) -> Option<[f64; 2]> {
        let t = self.to_camera(p);
        if t[2] <= self.near {
            return None;
        }
        Some([
            self.focal * t[0] / t[2] + self.principal[0],
            self.focal * t[1] / t[2] + self.principal[1],
        ])
    }

    /// Same pose, different resolution; the focal scales with the width.
    pub fn resized(&self, width: usize, height: usize) -> Self {
        let s = width as f64 / self.width as f64;
        Self {
            focal: self.focal * s,
            principal: [self.principal[0] * s, self.principal[1] * height as f64 / self.height as f64],
            width,
            height,
            ..self.clone()
        }
    }
}
