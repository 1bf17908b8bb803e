//! Depth-sorted α-blending of screen-space splats, with a tiled path and a
//! brute-force path that evaluates every splat at every pixel.

use rayon::prelude::*;

pub const TILE: usize = 8;
pub const ALPHA_MAX: f64 = 0.999;
pub const ALPHA_MIN: f64 = 1.0 / 255.0;
pub const T_CUTOFF: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct Splat2D {
    pub mean: [f64; 2],
    /// Symmetric covariance `(a, b, c)` = `[[a, b], [b, c]]`, px².
    pub cov: [f64; 3],
    pub depth: f64,
    pub color: [f64; 3],
    pub opacity: f64,
    /// Primitive id; breaks depth ties.
    pub id: usize,
}

impl Splat2D {
    pub fn conic(&self) -> [f64; 3] {
        let [a, b, c] = self.cov;
        let det = a * c - b * b;
        [c / det, -b / det, a / det]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RasterMode {
    Tiled,
    BruteForce,
}

/// Forward result. `psi[i]` is the summed blend weight of `splats[i]`.
#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub width: usize,
    pub height: usize,
    /// Row-major `H×W×3`.
    pub image: Vec<f64>,
    pub psi: Vec<f64>,
    /// Transmittance left at each pixel after blending.
    pub transmittance: Vec<f64>,
    mode: RasterMode,
    tile_lists: Vec<Vec<u32>>,
    tiles_x: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SplatGrad {
    pub mean: [f64; 2],
    pub conic: [f64; 3],
    pub color: [f64; 3],
    pub opacity: f64,
}

impl SplatGrad {
    /// Chain the conic gradient back to the covariance `(a, b, c)`.
    pub fn cov(&self, s: &Splat2D) -> [f64; 3] {
        let [a, b, c] = s.cov;
        let d = a * c - b * b;
        let d2 = d * d;
        let [ga, gb, gc] = self.conic;
        [
            (-ga * c * c + gb * b * c - gc * b * b) / d2,
            (ga * 2.0 * b * c - gb * (d + 2.0 * b * b) + gc * 2.0 * a * b) / d2,
            (-ga * b * b + gb * a * b - gc * a * a) / d2,
        ]
    }
}

struct Geometry {
    conic: [f64; 3],
    /// Pixel bounds `[x0, x1, y0, y1]` of the tiled path; everything for brute force.
    bounds: [usize; 4],
}

impl Geometry {
    #[inline]
    fn covers(&self, x: usize, y: usize) -> bool {
        let [x0, x1, y0, y1] = self.bounds;
        x >= x0 && x <= x1 && y >= y0 && y <= y1
    }
}

#[inline]
fn alpha_at(s: &Splat2D, g: &Geometry, px: f64, py: f64) -> Option<(f64, f64, f64, f64)> {
    let dx = s.mean[0] - px;
    let dy = s.mean[1] - py;
    let [ca, cb, cc] = g.conic;
    let q = ca * dx * dx + 2.0 * cb * dx * dy + cc * dy * dy;
    let gauss = (-0.5 * q).exp();
    let alpha = (s.opacity * gauss).min(ALPHA_MAX);
    if alpha < ALPHA_MIN {
        return None;
    }
    Some((alpha, gauss, dx, dy))
}

/// Sort order `(depth, id)`.
fn sorted_indices(splats: &[Splat2D]) -> Vec<u32> {
    let mut order: Vec<u32> = (0..splats.len() as u32).collect();
    order.sort_by(|&i, &j| {
        let (a, b) = (&splats[i as usize], &splats[j as usize]);
        a.depth.total_cmp(&b.depth).then(a.id.cmp(&b.id))
    });
    order
}

/// Inclusive pixel range touched by a splat's `α ≥ 1/255` ellipse, padded by
/// half a pixel; `None` if the splat can never reach the threshold.
fn pixel_bounds(s: &Splat2D, w: usize, h: usize) -> Option<[usize; 4]> {
    if s.opacity < ALPHA_MIN {
        return None;
    }
    let c = 2.0 * (255.0 * s.opacity).ln();
    let ex = (c * s.cov[0]).sqrt() + 0.5;
    let ey = (c * s.cov[2]).sqrt() + 0.5;
    let x0 = (s.mean[0] - ex - 0.5).ceil();
    let x1 = (s.mean[0] + ex - 0.5).floor();
    let y0 = (s.mean[1] - ey - 0.5).ceil();
    let y1 = (s.mean[1] + ey - 0.5).floor();
    if x1 < 0.0 || y1 < 0.0 || x0 > (w - 1) as f64 || y0 > (h - 1) as f64 || x0 > x1 || y0 > y1 {
        return None;
    }
    Some([
        x0.max(0.0) as usize,
        (x1 as usize).min(w - 1),
        y0.max(0.0) as usize,
        (y1 as usize).min(h - 1),
    ])
}

struct TileResult {
    pixels: Vec<(usize, [f64; 3], f64)>,
    psi: Vec<(u32, f64)>,
}

pub fn rasterize(splats: &[Splat2D], width: usize, height: usize) -> RenderOutput {
    run(splats, width, height, RasterMode::Tiled)
}

pub fn rasterize_bruteforce(splats: &[Splat2D], width: usize, height: usize) -> RenderOutput {
    run(splats, width, height, RasterMode::BruteForce)
}

fn geometry(splats: &[Splat2D], width: usize, height: usize, mode: RasterMode) -> Vec<Geometry> {
    splats
        .iter()
        .map(|s| Geometry {
            conic: s.conic(),
            bounds: match mode {
                RasterMode::BruteForce => [0, usize::MAX, 0, usize::MAX],
                RasterMode::Tiled => pixel_bounds(s, width, height).unwrap_or([1, 0, 1, 0]),
            },
        })
        .collect()
}

fn bin(splats: &[Splat2D], width: usize, height: usize, mode: RasterMode) -> (Vec<Vec<u32>>, usize) {
    let order = sorted_indices(splats);
    match mode {
        RasterMode::BruteForce => (vec![order], 1),
        RasterMode::Tiled => {
            let tx = width.div_ceil(TILE);
            let ty = height.div_ceil(TILE);
            let mut lists = vec![Vec::new(); tx * ty];
            for &i in &order {
                if let Some([x0, x1, y0, y1]) = pixel_bounds(&splats[i as usize], width, height) {
                    for ty_i in y0 / TILE..=y1 / TILE {
                        for tx_i in x0 / TILE..=x1 / TILE {
                            lists[ty_i * tx + tx_i].push(i);
                        }
                    }
                }
            }
            (lists, tx)
        }
    }
}

fn tile_rect(mode: RasterMode, tile: usize, tiles_x: usize, w: usize, h: usize) -> [usize; 4] {
    match mode {
        RasterMode::BruteForce => [0, w, 0, h],
        RasterMode::Tiled => {
            let x0 = (tile % tiles_x) * TILE;
            let y0 = (tile / tiles_x) * TILE;
            [x0, (x0 + TILE).min(w), y0, (y0 + TILE).min(h)]
        }
    }
}

fn cutoff(mode: RasterMode) -> f64 {
    match mode {
        RasterMode::Tiled => T_CUTOFF,
        RasterMode::BruteForce => 0.0,
    }
}

fn run(splats: &[Splat2D], width: usize, height: usize, mode: RasterMode) -> RenderOutput {
    let geo = geometry(splats, width, height, mode);
    let (tile_lists, tiles_x) = bin(splats, width, height, mode);
    let t_cut = cutoff(mode);
    let results: Vec<TileResult> = tile_lists
        .par_iter()
        .enumerate()
        .map(|(tile, list)| {
            let [x0, x1, y0, y1] = tile_rect(mode, tile, tiles_x, width, height);
            let mut local_psi = vec![0.0; list.len()];
            let mut pixels = Vec::with_capacity((x1 - x0) * (y1 - y0));
            for y in y0..y1 {
                for x in x0..x1 {
                    let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                    let mut t = 1.0;
                    let mut c = [0.0; 3];
                    for (li, &i) in list.iter().enumerate() {
                        let s = &splats[i as usize];
                        if !geo[i as usize].covers(x, y) {
                            continue;
                        }
                        let Some((alpha, ..)) = alpha_at(s, &geo[i as usize], px, py) else {
                            continue;
                        };
                        let w = alpha * t;
                        for ch in 0..3 {
                            c[ch] += w * s.color[ch];
                        }
                        local_psi[li] += w;
                        t *= 1.0 - alpha;
                        if t < t_cut {
                            break;
                        }
                    }
                    pixels.push((y * width + x, c, t));
                }
            }
            let psi = list.iter().copied().zip(local_psi).filter(|(_, v)| *v != 0.0).collect();
            TileResult { pixels, psi }
        })
        .collect();

    let mut image = vec![0.0; width * height * 3];
    let mut transmittance = vec![1.0; width * height];
    let mut psi = vec![0.0; splats.len()];
    for r in results {
        for (p, c, t) in r.pixels {
            image[p * 3..p * 3 + 3].copy_from_slice(&c);
            transmittance[p] = t;
        }
        for (i, v) in r.psi {
            psi[i as usize] += v;
        }
    }
    RenderOutput {
        width,
        height,
        image,
        psi,
        transmittance,
        mode,
        tile_lists,
        tiles_x,
    }
}

impl RenderOutput {
    pub fn mode(&self) -> RasterMode {
        self.mode
    }

    /// Contributions `(splat index, blend weight)` at pixel `(x, y)`, in blend order.
    pub fn pixel_weights(&self, splats: &[Splat2D], x: usize, y: usize) -> Vec<(usize, f64)> {
        let geo = geometry(splats, self.width, self.height, self.mode);
        let tile = match self.mode {
            RasterMode::BruteForce => 0,
            RasterMode::Tiled => (y / TILE) * self.tiles_x + x / TILE,
        };
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        let mut t = 1.0;
        let mut out = Vec::new();
        for &i in &self.tile_lists[tile] {
            if !geo[i as usize].covers(x, y) {
                continue;
            }
            let Some((alpha, ..)) = alpha_at(&splats[i as usize], &geo[i as usize], px, py) else {
                continue;
            };
            out.push((i as usize, alpha * t));
            t *= 1.0 - alpha;
            if t < cutoff(self.mode) {
                break;
            }
        }
        out
    }

    /// Gradients of the loss w.r.t. every splat given `d_image` (`H×W×3`).
    pub fn backward(&self, splats: &[Splat2D], d_image: &[f64]) -> Vec<SplatGrad> {
        assert_eq!(d_image.len(), self.image.len(), "image gradient size mismatch");
        let geo = geometry(splats, self.width, self.height, self.mode);
        let t_cut = cutoff(self.mode);
        let (w, h) = (self.width, self.height);
        let partials: Vec<Vec<(u32, SplatGrad)>> = self
            .tile_lists
            .par_iter()
            .enumerate()
            .map(|(tile, list)| {
                let [x0, x1, y0, y1] = tile_rect(self.mode, tile, self.tiles_x, w, h);
                let mut acc = vec![SplatGrad::default(); list.len()];
                let mut contrib: Vec<(usize, f64, f64, f64, f64, f64)> = Vec::new();
                for y in y0..y1 {
                    for x in x0..x1 {
                        let p = y * w + x;
                        let g = [d_image[p * 3], d_image[p * 3 + 1], d_image[p * 3 + 2]];
                        if g == [0.0; 3] {
                            continue;
                        }
                        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                        contrib.clear();
                        let mut t = 1.0;
                        for (li, &i) in list.iter().enumerate() {
                            let s = &splats[i as usize];
                            if !geo[i as usize].covers(x, y) {
                                continue;
                            }
                            let Some((alpha, gauss, dx, dy)) = alpha_at(s, &geo[i as usize], px, py)
                            else {
                                continue;
                            };
                            contrib.push((li, alpha, gauss, dx, dy, t));
                            t *= 1.0 - alpha;
                            if t < t_cut {
                                break;
                            }
                        }
                        let mut behind = [0.0; 3];
                        for &(li, alpha, gauss, dx, dy, t_i) in contrib.iter().rev() {
                            let s = &splats[list[li] as usize];
                            let a = &mut acc[li];
                            let mut d_alpha = 0.0;
                            for ch in 0..3 {
                                a.color[ch] += g[ch] * alpha * t_i;
                                d_alpha += g[ch] * t_i * (s.color[ch] - behind[ch]);
                                behind[ch] = alpha * s.color[ch] + (1.0 - alpha) * behind[ch];
                            }
                            if s.opacity * gauss > ALPHA_MAX {
                                continue;
                            }
                            a.opacity += d_alpha * gauss;
                            let d_q = d_alpha * s.opacity * gauss * -0.5;
                            let [ca, cb, cc] = geo[list[li] as usize].conic;
                            a.mean[0] += d_q * 2.0 * (ca * dx + cb * dy);
                            a.mean[1] += d_q * 2.0 * (cb * dx + cc * dy);
                            a.conic[0] += d_q * dx * dx;
                            a.conic[1] += d_q * 2.0 * dx * dy;
                            a.conic[2] += d_q * dy * dy;
                        }
                    }
                }
                list.iter()
                    .copied()
                    .zip(acc)
                    .filter(|(_, a)| *a != SplatGrad::default())
                    .collect()
            })
            .collect();
        let mut out = vec![SplatGrad::default(); splats.len()];
        for part in partials {
            for (i, g) in part {
                let o = &mut out[i as usize];
                for k in 0..2 {
                    o.mean[k] += g.mean[k];
                }
                for k in 0..3 {
                    o.conic[k] += g.conic[k];
                    o.color[k] += g.color[k];
                }
                o.opacity += g.opacity;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn splat(mean: [f64; 2], var: f64, color: [f64; 3], opacity: f64, depth: f64, id: usize) -> Splat2D {
        Splat2D {
            mean,
            cov: [var, 0.0, var],
            depth,
            color,
            opacity,
            id,
        }
    }

    #[test]
    fn empty_scene_is_black_with_full_transmittance() {
        for out in [rasterize(&[], 20, 12), rasterize_bruteforce(&[], 20, 12)] {
            assert!(out.image.iter().all(|&v| v == 0.0));
            assert!(out.transmittance.iter().all(|&t| t == 1.0));
            assert!(out.psi.is_empty());
        }
    }

    #[test]
    fn coincident_pair_blends_front_to_back() {
        // Huge covariance: the Gaussian factor is 1 to within 1e-12 near the centre.
        let c1 = [1.0, 0.2, 0.0];
        let c2 = [0.0, 0.5, 1.0];
        let s = vec![
            splat([8.5, 8.5], 1e14, c2, 0.6, 2.0, 1),
            splat([8.5, 8.5], 1e14, c1, 0.6, 1.0, 0),
        ];
        for out in [rasterize(&s, 16, 16), rasterize_bruteforce(&s, 16, 16)] {
            let p = (8 * 16 + 8) * 3;
            for ch in 0..3 {
                let want = 0.6 * c1[ch] + 0.4 * 0.6 * c2[ch];
                assert!((out.image[p + ch] - want).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn opaque_covering_splat_paints_every_pixel() {
        let s = vec![splat([10.0, 10.0], 1e14, [0.3, 0.6, 0.9], 1.0, 1.0, 0)];
        let out = rasterize(&s, 20, 20);
        for p in 0..400 {
            for ch in 0..3 {
                assert!((out.image[p * 3 + ch] - 0.999 * s[0].color[ch]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn equal_depth_ties_break_by_id() {
        let a = splat([5.0, 5.0], 4.0, [1.0, 0.0, 0.0], 0.7, 1.0, 3);
        let b = splat([5.5, 5.0], 4.0, [0.0, 1.0, 0.0], 0.7, 1.0, 9);
        let x = rasterize(&[a.clone(), b.clone()], 10, 10);
        let y = rasterize(&[b, a], 10, 10);
        assert_eq!(x.image, y.image);
    }

    #[test]
    fn psi_equals_sum_of_pixel_weights() {
        let s = vec![
            splat([6.0, 7.0], 9.0, [1.0, 0.0, 0.0], 0.8, 1.0, 0),
            splat([9.0, 8.0], 16.0, [0.0, 1.0, 0.0], 0.5, 2.0, 1),
            splat([20.0, 4.0], 5.0, [0.0, 0.0, 1.0], 0.9, 1.5, 2),
        ];
        let out = rasterize(&s, 24, 18);
        let mut psi = vec![0.0; 3];
        for y in 0..18 {
            for x in 0..24 {
                for (i, w) in out.pixel_weights(&s, x, y) {
                    psi[i] += w;
                }
            }
        }
        for i in 0..3 {
            assert!((psi[i] - out.psi[i]).abs() < 1e-12);
        }
    }
}
