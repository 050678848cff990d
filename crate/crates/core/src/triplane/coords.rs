use std::f64::consts::PI;

use crate::raster::camera::Vec3;

/// Normalized spherical coordinates of a point, each in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SphericalCoords {
    /// Radius over `r_max`.
    pub r: f64,
    /// Polar angle from `+z`, over π.
    pub theta: f64,
    /// Azimuth from `+x` toward `+y`, over 2π, wrapped into `[0, 1)`.
    pub phi: f64,
    /// The radius exceeded `r_max` and was clamped to 1.
    pub clamped: bool,
}

/// Maps a point to normalized `(r, θ, φ)`. The origin maps to
/// `(0, 0.5, 0)`.
pub fn spherical_coords(p: Vec3, r_max: f64) -> SphericalCoords {
    let n = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
    if n == 0.0 {
        return SphericalCoords {
            r: 0.0,
            theta: 0.5,
            phi: 0.0,
            clamped: false,
        };
    }
    let rho = (p[0] * p[0] + p[1] * p[1]).sqrt();
    let mut r = n / r_max;
    let clamped = r > 1.0;
    if clamped {
        r = 1.0;
    }
    let theta = rho.atan2(p[2]) / PI;
    let mut phi = p[1].atan2(p[0]) / (2.0 * PI);
    if phi < 0.0 {
        phi += 1.0;
    }
    if phi >= 1.0 {
        phi = 0.0;
    }
    SphericalCoords {
        r,
        theta,
        phi,
        clamped,
    }
}

/// Rotation from the head frame (y up, face toward +z) into the triplane
/// frame, whose polar axis is +z. Without it the poles would sit on the
/// face and the back of the head, where azimuth is unstable.
pub const HEAD_TO_TRIPLANE: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, -1.0, 0.0]];

/// `p` (a row vector) times [`HEAD_TO_TRIPLANE`]: `(x, y, z) ↦ (x, −z, y)`.
pub fn head_to_triplane(p: Vec3) -> Vec3 {
    [p[0], -p[2], p[1]]
}

/// Inverse of [`spherical_coords`] for unclamped inputs.
pub fn spherical_to_point(r: f64, theta: f64, phi: f64, r_max: f64) -> Vec3 {
    let (t, f) = (theta * PI, phi * 2.0 * PI);
    let rad = r * r_max;
    [rad * t.sin() * f.cos(), rad * t.sin() * f.sin(), rad * t.cos()]
}

/// Rows are the gradients of `r`, `θ` and `φ` with respect to the point.
/// Rows are zero where the map is clamped or singular (origin, polar axis).
pub fn spherical_jacobian(p: Vec3, r_max: f64) -> [Vec3; 3] {
    let [x, y, z] = p;
    let n2 = x * x + y * y + z * z;
    let mut jac = [[0.0; 3]; 3];
    if n2 == 0.0 {
        return jac;
    }
    let n = n2.sqrt();
    if n <= r_max {
        jac[0] = [x / (n * r_max), y / (n * r_max), z / (n * r_max)];
    }
    let rho2 = x * x + y * y;
    if rho2 > 0.0 {
        let rho = rho2.sqrt();
        jac[1] = [z * x / (rho * n2 * PI), z * y / (rho * n2 * PI), -rho / (n2 * PI)];
        jac[2] = [-y / (rho2 * 2.0 * PI), x / (rho2 * 2.0 * PI), 0.0];
    }
    jac
}
