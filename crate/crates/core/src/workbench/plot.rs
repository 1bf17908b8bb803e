//! Minimal line plot rasterised to an RGB image.

use crate::error::{CoreError, Result};

const MARGIN: usize = 24;

/// Plot `(x, y)` points joined in x order on a white canvas with axes.
/// Returns interleaved `[H, W, 3]` values in `[0, 1]`.
pub fn line_plot(points: &[(f64, f64)], width: usize, height: usize) -> Result<Vec<f64>> {
    if width <= 2 * MARGIN || height <= 2 * MARGIN {
        return Err(CoreError::Config(format!("plot of {width}x{height} is too small")));
    }
    let mut img = vec![1.0; width * height * 3];
    let mut put = |x: i64, y: i64, c: [f64; 3]| {
        if x >= 0 && y >= 0 && (x as usize) < width && (y as usize) < height {
            let p = (y as usize * width + x as usize) * 3;
            img[p..p + 3].copy_from_slice(&c);
        }
    };
    let (x0, y0) = (MARGIN as i64, (height - MARGIN) as i64);
    let (x1, y1) = ((width - MARGIN) as i64, MARGIN as i64);
    for x in x0..=x1 {
        put(x, y0, [0.0; 3]);
    }
    for y in y1..=y0 {
        put(x0, y, [0.0; 3]);
    }
    let finite: Vec<(f64, f64)> = points.iter().copied().filter(|(x, y)| x.is_finite() && y.is_finite()).collect();
    if finite.is_empty() {
        return Ok(img);
    }
    let range = |v: Vec<f64>| {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if hi > lo {
            (lo, hi)
        } else {
            (lo - 0.5, hi + 0.5)
        }
    };
    let (xl, xh) = range(finite.iter().map(|p| p.0).collect());
    let (yl, yh) = range(finite.iter().map(|p| p.1).collect());
    let mut pix: Vec<(i64, i64)> = finite
        .iter()
        .map(|&(x, y)| {
            let px = x0 as f64 + (x - xl) / (xh - xl) * (x1 - x0) as f64;
            let py = y0 as f64 - (y - yl) / (yh - yl) * (y0 - y1) as f64;
            (px.round() as i64, py.round() as i64)
        })
        .collect();
    pix.sort();
    let blue = [0.1, 0.3, 0.8];
    for w in pix.windows(2) {
        let ((ax, ay), (bx, by)) = (w[0], w[1]);
        let steps = (bx - ax).abs().max((by - ay).abs()).max(1);
        for s in 0..=steps {
            let x = ax + (bx - ax) * s / steps;
            let y = ay + (by - ay) * s / steps;
            put(x, y, blue);
        }
    }
    for &(x, y) in &pix {
        for dy in -2..=2 {
            for dx in -2..=2 {
                put(x + dx, y + dy, [0.8, 0.1, 0.1]);
            }
        }
    }
    Ok(img)
}
