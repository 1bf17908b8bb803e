use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Pinhole camera with a world-to-camera rigid transform. Camera space is
/// x right, y down, z forward; pixel centres sit at `(x + 0.5, y + 0.5)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

pub(crate) fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn normalize(a: [f64; 3]) -> [f64; 3] {
    let n = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
    [a[0] / n, a[1] / n, a[2] / n]
}

impl Camera {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        rotation: [[f64; 3]; 3],
        translation: [f64; 3],
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let cam = Self {
            rotation,
            translation,
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(CoreError::Config("camera image size must be positive".into()));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(CoreError::Config("camera focal lengths must be positive".into()));
        }
        let r = &self.rotation;
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| r[k][i] * r[k][j]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                if (dot - want).abs() > 1e-9 {
                    return Err(CoreError::Config("camera rotation is not orthonormal".into()));
                }
            }
        }
        Ok(())
    }

    /// Camera at `eye` looking at `target`, `fov_y_deg` vertical field of view.
    pub fn look_at(
        eye: [f64; 3],
        target: [f64; 3],
        up: [f64; 3],
        fov_y_deg: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let f = normalize([target[0] - eye[0], target[1] - eye[1], target[2] - eye[2]]);
        let r = normalize(cross(f, up));
        let d = cross(f, r);
        let rotation = [r, d, f];
        let translation = [
            -(r[0] * eye[0] + r[1] * eye[1] + r[2] * eye[2]),
            -(d[0] * eye[0] + d[1] * eye[1] + d[2] * eye[2]),
            -(f[0] * eye[0] + f[1] * eye[1] + f[2] * eye[2]),
        ];
        let focal = 0.5 * height as f64 / (0.5 * fov_y_deg.to_radians()).tan();
        Self::new(
            rotation,
            translation,
            focal,
            focal,
            0.5 * width as f64,
            0.5 * height as f64,
            width,
            height,
        )
    }

    pub fn world_to_camera(&self, p: [f64; 3]) -> [f64; 3] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[0][0] * p[0] + r[0][1] * p[1] + r[0][2] * p[2] + t[0],
            r[1][0] * p[0] + r[1][1] * p[1] + r[1][2] * p[2] + t[1],
            r[2][0] * p[0] + r[2][1] * p[1] + r[2][2] * p[2] + t[2],
        ]
    }

    /// Flat 17-value encoding used by checkpoints and JSON-free storage.
    pub fn to_flat(&self) -> [f64; 17] {
        let mut out = [0.0; 17];
        for i in 0..3 {
            for j in 0..3 {
                out[i * 3 + j] = self.rotation[i][j];
            }
            out[9 + i] = self.translation[i];
        }
        out[12] = self.fx;
        out[13] = self.fy;
        out[14] = self.cx;
        out[15] = self.cy;
        out[16] = (self.width as f64) * 65536.0 + self.height as f64;
        out
    }

    pub fn from_flat(v: &[f64]) -> Result<Self> {
        if v.len() != 17 {
            return Err(CoreError::Data("camera record needs 17 values".into()));
        }
        let mut rotation = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                rotation[i][j] = v[i * 3 + j];
            }
        }
        let packed = v[16] as u64;
        Self::new(
            rotation,
            [v[9], v[10], v[11]],
            v[12],
            v[13],
            v[14],
            v[15],
            (packed >> 16) as usize,
            (packed & 0xffff) as usize,
        )
    }
}
