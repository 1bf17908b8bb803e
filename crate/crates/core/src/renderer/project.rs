//! Perspective projection of 3-D Gaussians to screen-space splats.

use super::camera::Camera;
use super::dual::{Dual, Scalar};
use super::raster::Splat2D;

/// Added to both diagonal entries of every projected covariance (px²).
pub const LOW_PASS: f64 = 0.3;
/// Points closer than this (camera z) are culled.
pub const NEAR_PLANE: f64 = 0.01;
/// Splat centres further than this many half-screens from the centre are culled.
pub const GUARD_BAND: f64 = 1.3;

/// Rotation matrix from axis-angle `r` (Rodrigues), series-expanded near 0.
pub fn rotation_from_axis_angle<S: Scalar>(r: [S; 3]) -> [[S; 3]; 3] {
    let th2 = r[0] * r[0] + r[1] * r[1] + r[2] * r[2];
    let (a, b) = if th2.val() < 1e-8 {
        (
            S::cst(1.0) - th2 / S::cst(6.0),
            S::cst(0.5) - th2 / S::cst(24.0),
        )
    } else {
        let th = th2.sqrt();
        (th.sin() / th, (S::cst(1.0) - th.cos()) / th2)
    };
    let k = [
        [S::cst(0.0), -r[2], r[1]],
        [r[2], S::cst(0.0), -r[0]],
        [-r[1], r[0], S::cst(0.0)],
    ];
    let mut out = [[S::cst(0.0); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let mut k2 = S::cst(0.0);
            for l in 0..3 {
                k2 = k2 + k[i][l] * k[l][j];
            }
            let id = if i == j { S::cst(1.0) } else { S::cst(0.0) };
            out[i][j] = id + a * k[i][j] + b * k2;
        }
    }
    out
}

/// Decoded 3×3 covariance `R diag(exp(2s)) Rᵀ` from `(s0, s1, s2, r0, r1, r2)`.
pub fn covariance_3d<S: Scalar>(p: [S; 6]) -> [[S; 3]; 3] {
    let r = rotation_from_axis_angle([p[3], p[4], p[5]]);
    let var = [
        (p[0] * S::cst(2.0)).exp(),
        (p[1] * S::cst(2.0)).exp(),
        (p[2] * S::cst(2.0)).exp(),
    ];
    let mut out = [[S::cst(0.0); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let mut acc = S::cst(0.0);
            for l in 0..3 {
                acc = acc + r[i][l] * var[l] * r[j][l];
            }
            out[i][j] = acc;
        }
    }
    out
}

/// Screen-space mean, covariance `(a, b, c)` incl. low-pass floor, and depth.
pub struct Projected<S> {
    pub mean: [S; 2],
    pub cov: [S; 3],
    pub depth: f64,
}

pub fn project_generic<S: Scalar>(pos: [S; 3], cov: [S; 6], cam: &Camera) -> Option<Projected<S>> {
    let w = &cam.rotation;
    let mut t = [S::cst(0.0); 3];
    for i in 0..3 {
        t[i] = S::cst(w[i][0]) * pos[0]
            + S::cst(w[i][1]) * pos[1]
            + S::cst(w[i][2]) * pos[2]
            + S::cst(cam.translation[i]);
    }
    let z = t[2].val();
    if !(z > NEAR_PLANE) {
        return None;
    }
    let iz = S::cst(1.0) / t[2];
    let mx = S::cst(cam.fx) * t[0] * iz + S::cst(cam.cx);
    let my = S::cst(cam.fy) * t[1] * iz + S::cst(cam.cy);
    let (hw, hh) = (0.5 * cam.width as f64, 0.5 * cam.height as f64);
    if (mx.val() - hw).abs() > GUARD_BAND * hw || (my.val() - hh).abs() > GUARD_BAND * hh {
        return None;
    }
    let j = [
        [S::cst(cam.fx) * iz, S::cst(0.0), -S::cst(cam.fx) * t[0] * iz * iz],
        [S::cst(0.0), S::cst(cam.fy) * iz, -S::cst(cam.fy) * t[1] * iz * iz],
    ];
    // T = J W
    let mut m = [[S::cst(0.0); 3]; 2];
    for r in 0..2 {
        for c in 0..3 {
            m[r][c] = j[r][0] * S::cst(w[0][c]) + j[r][1] * S::cst(w[1][c]) + j[r][2] * S::cst(w[2][c]);
        }
    }
    let sig = covariance_3d(cov);
    let mut ms = [[S::cst(0.0); 3]; 2];
    for r in 0..2 {
        for c in 0..3 {
            ms[r][c] = m[r][0] * sig[0][c] + m[r][1] * sig[1][c] + m[r][2] * sig[2][c];
        }
    }
    let e = |r: usize, c: usize| ms[r][0] * m[c][0] + ms[r][1] * m[c][1] + ms[r][2] * m[c][2];
    Some(Projected {
        mean: [mx, my],
        cov: [e(0, 0) + S::cst(LOW_PASS), e(0, 1), e(1, 1) + S::cst(LOW_PASS)],
        depth: z,
    })
}

/// Projection result with the Jacobian of `(mx, my, a, b, c)` w.r.t.
/// `(position[3], covariance_params[6])`.
#[derive(Debug, Clone)]
pub struct ProjectedSplat {
    pub splat: Splat2D,
    pub jacobian: [[f64; 9]; 5],
}

pub fn project(
    position: [f64; 3],
    cov: [f64; 6],
    color: [f64; 3],
    opacity: f64,
    id: usize,
    cam: &Camera,
) -> Option<ProjectedSplat> {
    let p = [0, 1, 2].map(|i| Dual::<9>::var(position[i], i));
    let c = [0, 1, 2, 3, 4, 5].map(|i| Dual::<9>::var(cov[i], 3 + i));
    let pr = project_generic(p, c, cam)?;
    let outs = [pr.mean[0], pr.mean[1], pr.cov[0], pr.cov[1], pr.cov[2]];
    let jacobian = outs.map(|d| d.d);
    Some(ProjectedSplat {
        splat: Splat2D {
            mean: [outs[0].v, outs[1].v],
            cov: [outs[2].v, outs[3].v, outs[4].v],
            depth: pr.depth,
            color,
            opacity,
            id,
        },
        jacobian,
    })
}
