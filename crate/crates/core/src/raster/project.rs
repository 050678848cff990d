//! Per-Gaussian projection: camera transform, covariance transport through
//! the perspective Jacobian, conic, and the matching backward pass.

use crate::raster::camera::{Camera, Vec3};

/// Added to the screen-space covariance diagonal, in pixels².
pub const COV_REGULARIZATION: f64 = 0.3;

type M3 = [[f64; 3]; 3];
type M23 = [[f64; 3]; 2];

/// Rotation matrix of a unit quaternion `(w, x, y, z)`.
pub fn quat_to_matrix(q: [f64; 4]) -> M3 {
    let [w, x, y, z] = q;
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

/// World covariance `R · diag(s²) · Rᵀ`.
pub fn covariance(scale: Vec3, quat: [f64; 4]) -> M3 {
    let r = quat_to_matrix(normalize_quat(quat).0);
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = r[i][j] * scale[j];
        }
    }
    let mut s = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            s[i][j] = (0..3).map(|k| m[i][k] * m[j][k]).sum();
        }
    }
    s
}

fn normalize_quat(q: [f64; 4]) -> ([f64; 4], f64) {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    if n < 1e-12 {
        ([1.0, 0.0, 0.0, 0.0], 0.0)
    } else {
        ([q[0] / n, q[1] / n, q[2] / n, q[3] / n], n)
    }
}

/// Everything the backward pass needs about one projected Gaussian.
#[derive(Clone, Debug)]
pub struct Projection {
    /// Camera-space center.
    pub t: Vec3,
    /// Pixel-space center.
    pub mean: [f64; 2],
    /// Screen covariance `[xx, xy, yy]` including the regularization.
    pub cov2d: [f64; 3],
    /// Inverse screen covariance `[a, b, c]`: `q = a dx² + 2b dx dy + c dy²`.
    pub conic: [f64; 3],
    pub depth: f64,
    jw: M23,
    sigma: M3,
    rot: M3,
    quat_unit: [f64; 4],
    quat_norm: f64,
    scale: Vec3,
}

/// Projects one Gaussian. `None` when it is outside the depth range or its
/// screen covariance is not invertible (the latter flagged by `singular`).
pub fn project(
    mu: Vec3,
    scale: Vec3,
    quat: [f64; 4],
    cam: &Camera,
    w: &M3,
    singular: &mut bool,
) -> Option<Projection> {
    *singular = false;
    let d = [mu[0] - cam.position[0], mu[1] - cam.position[1], mu[2] - cam.position[2]];
    let t = [
        w[0][0] * d[0] + w[0][1] * d[1] + w[0][2] * d[2],
        w[1][0] * d[0] + w[1][1] * d[1] + w[1][2] * d[2],
        w[2][0] * d[0] + w[2][1] * d[1] + w[2][2] * d[2],
    ];
    if !(t[2] > cam.near && t[2] < cam.far) {
        return None;
    }
    let f = cam.focal;
    let (tx, ty, tz) = (t[0], t[1], t[2]);
    let mean = [f * tx / tz + cam.principal[0], f * ty / tz + cam.principal[1]];
    let j: M23 = [
        [f / tz, 0.0, -f * tx / (tz * tz)],
        [0.0, f / tz, -f * ty / (tz * tz)],
    ];
    let mut jw = [[0.0; 3]; 2];
    for r in 0..2 {
        for c in 0..3 {
            jw[r][c] = (0..3).map(|k| j[r][k] * w[k][c]).sum();
        }
    }
    let (quat_unit, quat_norm) = normalize_quat(quat);
    let rot = quat_to_matrix(quat_unit);
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        for k in 0..3 {
            m[i][k] = rot[i][k] * scale[k];
        }
    }
    let mut sigma = [[0.0; 3]; 3];
    for i in 0..3 {
        for k in 0..3 {
            sigma[i][k] = (0..3).map(|l| m[i][l] * m[k][l]).sum();
        }
    }
    // cov2d = JW Σ (JW)ᵀ
    let mut tmp = [[0.0; 3]; 2];
    for r in 0..2 {
        for c in 0..3 {
            tmp[r][c] = (0..3).map(|k| jw[r][k] * sigma[k][c]).sum();
        }
    }
    let cxx: f64 = (0..3).map(|k| tmp[0][k] * jw[0][k]).sum::<f64>() + COV_REGULARIZATION;
    let cxy: f64 = (0..3).map(|k| tmp[0][k] * jw[1][k]).sum();
    let cyy: f64 = (0..3).map(|k| tmp[1][k] * jw[1][k]).sum::<f64>() + COV_REGULARIZATION;
    let det = cxx * cyy - cxy * cxy;
    if !(det > 0.0) || !det.is_finite() {
        *singular = true;
        return None;
    }
    let conic = [cyy / det, -cxy / det, cxx / det];
    Some(Projection {
        t,
        mean,
        cov2d: [cxx, cxy, cyy],
        conic,
        depth: tz,
        jw,
        sigma,
        rot,
        quat_unit,
        quat_norm,
        scale,
    })
}

/// Gradients of one Gaussian's 3D parameters.
#[derive(Clone, Copy, Debug, Default)]
pub struct ParamGrad {
    pub position: Vec3,
    pub scale: Vec3,
    pub rotation: [f64; 4],
}

/// Chains gradients on the pixel-space mean and the conic back to the
/// world position, scale and (unnormalized) quaternion.
pub fn project_backward(p: &Projection, cam: &Camera, w: &M3, g_mean: [f64; 2], g_conic: [f64; 3]) -> ParamGrad {
    let [a, b, c] = p.conic;
    // Symmetric gradient on the conic matrix, then on the screen covariance:
    // dL/dΣ₂ = −A·G·A.
    let g = [[g_conic[0], 0.5 * g_conic[1]], [0.5 * g_conic[1], g_conic[2]]];
    let am = [[a, b], [b, c]];
    let mut ag = [[0.0; 2]; 2];
    for i in 0..2 {
        for k in 0..2 {
            ag[i][k] = am[i][0] * g[0][k] + am[i][1] * g[1][k];
        }
    }
    let mut gs2 = [[0.0; 2]; 2];
    for i in 0..2 {
        for k in 0..2 {
            gs2[i][k] = -(ag[i][0] * am[0][k] + ag[i][1] * am[1][k]);
        }
    }

    // Σ₂ = T Σ Tᵀ with T = J·W.
    // dL/dT = 2 G₂ T Σ, dL/dΣ = Tᵀ G₂ T.
    let t = &p.jw;
    let mut g_t = [[0.0; 3]; 2];
    for r in 0..2 {
        for cc in 0..3 {
            let mut s = 0.0;
            for k in 0..2 {
                for l in 0..3 {
                    s += gs2[r][k] * t[k][l] * p.sigma[l][cc];
                }
            }
            g_t[r][cc] = 2.0 * s;
        }
    }
    let mut g_sigma = [[0.0; 3]; 3];
    for i in 0..3 {
        for k in 0..3 {
            let mut s = 0.0;
            for r in 0..2 {
                for q in 0..2 {
                    s += t[r][i] * gs2[r][q] * t[q][k];
                }
            }
            g_sigma[i][k] = s;
        }
    }

    // Σ = M Mᵀ, M = R diag(s): dL/dM = 2 G_Σ M.
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        for k in 0..3 {
            m[i][k] = p.rot[i][k] * p.scale[k];
        }
    }
    let mut g_m = [[0.0; 3]; 3];
    for i in 0..3 {
        for k in 0..3 {
            g_m[i][k] = 2.0 * (0..3).map(|l| g_sigma[i][l] * m[l][k]).sum::<f64>();
        }
    }
    let mut g_scale = [0.0; 3];
    let mut g_r = [[0.0; 3]; 3];
    for i in 0..3 {
        for k in 0..3 {
            g_scale[k] += g_m[i][k] * p.rot[i][k];
            g_r[i][k] = g_m[i][k] * p.scale[k];
        }
    }
    let [qw, qx, qy, qz] = p.quat_unit;
    let gq_unit = [
        2.0 * (-qz * g_r[0][1] + qy * g_r[0][2] + qz * g_r[1][0] - qx * g_r[1][2] - qy * g_r[2][0] + qx * g_r[2][1]),
        2.0 * (qy * g_r[0][1] + qz * g_r[0][2] + qy * g_r[1][0] - 2.0 * qx * g_r[1][1] - qw * g_r[1][2]
            + qz * g_r[2][0]
            + qw * g_r[2][1]
            - 2.0 * qx * g_r[2][2]),
        2.0 * (-2.0 * qy * g_r[0][0] + qx * g_r[0][1] + qw * g_r[0][2] + qx * g_r[1][0] + qz * g_r[1][2]
            - qw * g_r[2][0]
            + qz * g_r[2][1]
            - 2.0 * qy * g_r[2][2]),
        2.0 * (-2.0 * qz * g_r[0][0] - qw * g_r[0][1] + qx * g_r[0][2] + qw * g_r[1][0] - 2.0 * qz * g_r[1][1]
            + qy * g_r[1][2]
            + qx * g_r[2][0]
            + qy * g_r[2][1]),
    ];
    let rotation = if p.quat_norm == 0.0 {
        [0.0; 4]
    } else {
        let d: f64 = (0..4).map(|i| p.quat_unit[i] * gq_unit[i]).sum();
        std::array::from_fn(|i| (gq_unit[i] - p.quat_unit[i] * d) / p.quat_norm)
    };

    // T = J W: dL/dJ = G_T Wᵀ.
    let mut g_j = [[0.0; 3]; 2];
    for r in 0..2 {
        for k in 0..3 {
            g_j[r][k] = (0..3).map(|cc| g_t[r][cc] * w[k][cc]).sum();
        }
    }
    let f = cam.focal;
    let [tx, ty, tz] = p.t;
    let tz2 = tz * tz;
    let tz3 = tz2 * tz;
    let mut g_cam = [0.0; 3];
    g_cam[0] += g_mean[0] * f / tz;
    g_cam[1] += g_mean[1] * f / tz;
    g_cam[2] += -g_mean[0] * f * tx / tz2 - g_mean[1] * f * ty / tz2;
    g_cam[0] += -f / tz2 * g_j[0][2];
    g_cam[1] += -f / tz2 * g_j[1][2];
    g_cam[2] += -f / tz2 * g_j[0][0] - f / tz2 * g_j[1][1]
        + 2.0 * f * tx / tz3 * g_j[0][2]
        + 2.0 * f * ty / tz3 * g_j[1][2];
    // t = W (μ − o): dL/dμ = Wᵀ g_t.
    let position = std::array::from_fn(|i| (0..3).map(|k| w[k][i] * g_cam[k]).sum());
    ParamGrad {
        position,
        scale: g_scale,
        rotation,
    }
}
