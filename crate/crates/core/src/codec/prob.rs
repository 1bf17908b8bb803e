//! Discretised Gaussian and logistic bin masses, their lattice frequency
//! tables, and the differentiable rate terms used during training.

use adcgs_tensor::{Graph, NodeId, Real, Tensor};

use super::range::{RangeDecoder, RangeEncoder, PROB_TOTAL};
use crate::error::{CoreError, Result};

pub const SIGMA_MIN: f64 = 1e-3;
/// Smallest mass any symbol is charged.
pub const MASS_FLOOR: f64 = 1.0 / (1u64 << 24) as f64;
pub const MAX_HALF_WIDTH: i64 = 2047;

const SQRT_2: f64 = std::f64::consts::SQRT_2;

fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// `Φ(u) − Φ(l)` evaluated on the tail side to avoid cancellation.
fn normal_interval(l: f64, u: f64) -> f64 {
    if l > 0.0 {
        0.5 * (libm::erfc(l / SQRT_2) - libm::erfc(u / SQRT_2))
    } else if u < 0.0 {
        0.5 * (libm::erfc(-u / SQRT_2) - libm::erfc(-l / SQRT_2))
    } else {
        1.0 - 0.5 * libm::erfc(u / SQRT_2) - 0.5 * libm::erfc(-l / SQRT_2)
    }
}

/// Unfloored mass of the bin `[x − step/2, x + step/2]` under `N(μ, σ²)`.
pub fn gaussian_mass(mu: f64, sigma: f64, step: f64, x: f64) -> f64 {
    let l = (x - 0.5 * step - mu) / sigma;
    let u = (x + 0.5 * step - mu) / sigma;
    normal_interval(l, u).max(0.0)
}

/// Lattice bin probability used by the coder, floored at 2⁻²⁴.
pub fn gaussian_bin_probability(mu: f64, sigma: f64, step: f64, value: f64) -> Result<f64> {
    if !(sigma >= SIGMA_MIN) || !(step > 0.0) {
        return Err(CoreError::Contract(format!(
            "bin probability needs sigma >= {SIGMA_MIN} and step > 0, got {sigma}, {step}"
        )));
    }
    let q = value / step;
    if (q - q.round()).abs() > 1e-6 * q.abs().max(1.0) {
        return Err(CoreError::Contract(format!("value {value} is off the step-{step} lattice")));
    }
    Ok(gaussian_mass(mu, sigma, step, q.round() * step).max(MASS_FLOOR))
}

fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Unit-bin mass of `x` under a logistic with location `loc`, scale `s`.
pub fn logistic_mass(loc: f64, s: f64, x: f64) -> f64 {
    let l = (x - 0.5 - loc) / s;
    let u = (x + 0.5 - loc) / s;
    if l > 0.0 {
        (logistic(-l) - logistic(-u)).max(0.0)
    } else {
        (logistic(u) - logistic(l)).max(0.0)
    }
}

/// A one-dimensional distribution over integer bins `q` (bin `q` covers the
/// value `q·step`).
pub trait BinModel {
    /// Probability that the symbol is below bin `q`.
    fn edge(&self, q: i64) -> f64;
    /// Bin holding the mode.
    fn center(&self) -> i64;
    fn half_width(&self) -> i64;
    /// Mass charged by the rate estimate.
    fn mass(&self, q: i64) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianBins {
    pub mu: f64,
    pub sigma: f64,
    pub step: f64,
}

impl BinModel for GaussianBins {
    fn edge(&self, q: i64) -> f64 {
        let z = ((q as f64 - 0.5) * self.step - self.mu) / self.sigma;
        0.5 * libm::erfc(-z / SQRT_2)
    }
    fn center(&self) -> i64 {
        (self.mu / self.step).round().clamp(-1e15, 1e15) as i64
    }
    fn half_width(&self) -> i64 {
        ((6.0 * self.sigma / self.step).ceil() as i64 + 1).min(MAX_HALF_WIDTH)
    }
    fn mass(&self, q: i64) -> f64 {
        gaussian_mass(self.mu, self.sigma, self.step, q as f64 * self.step).max(MASS_FLOOR)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogisticBins {
    pub loc: f64,
    pub scale: f64,
}

impl BinModel for LogisticBins {
    fn edge(&self, q: i64) -> f64 {
        logistic((q as f64 - 0.5 - self.loc) / self.scale)
    }
    fn center(&self) -> i64 {
        self.loc.round().clamp(-1e15, 1e15) as i64
    }
    fn half_width(&self) -> i64 {
        ((20.0 * self.scale).ceil() as i64 + 1).min(MAX_HALF_WIDTH)
    }
    fn mass(&self, q: i64) -> f64 {
        logistic_mass(self.loc, self.scale, q as f64).max(MASS_FLOOR)
    }
}

/// 16-bit frequency table over the window `[c − w, c + w]` plus a final
/// escape symbol. Every in-window symbol gets at least one count.
pub struct LatticeCdf<'a, M: BinModel> {
    model: &'a M,
    lo: i64,
    hi: i64,
    g_lo: f64,
    scale: f64,
}

impl<'a, M: BinModel> LatticeCdf<'a, M> {
    pub fn new(model: &'a M) -> Self {
        let c = model.center();
        let w = model.half_width();
        let (lo, hi) = (c - w, c + w);
        let nsym = (hi - lo + 2) as f64;
        let g_lo = model.edge(lo);
        let mass = (model.edge(hi + 1) - g_lo).max(1e-300);
        Self {
            model,
            lo,
            hi,
            g_lo,
            scale: (PROB_TOTAL as f64 - nsym) / mass,
        }
    }

    /// Cumulative count below in-window bin `q` (`q = hi + 1` gives the escape start).
    fn cum(&self, q: i64) -> u32 {
        if q <= self.lo {
            return 0;
        }
        let max_scaled = PROB_TOTAL as i64 - (self.hi - self.lo + 2);
        let scaled = ((self.model.edge(q) - self.g_lo) * self.scale).floor() as i64;
        (scaled.clamp(0, max_scaled) + (q - self.lo)) as u32
    }

    /// Symbols outside the window, or whose count rounded to zero, are
    /// coded as an escape followed by their offset from the centre.
    pub fn encode(&self, enc: &mut RangeEncoder, q: i64) {
        if q < self.lo || q > self.hi || self.cum(q + 1) <= self.cum(q) {
            let esc = self.cum(self.hi + 1);
            enc.encode(esc, PROB_TOTAL - esc);
            enc.encode_signed_golomb(q - self.model.center());
        } else {
            let (a, b) = (self.cum(q), self.cum(q + 1));
            enc.encode(a, b - a);
        }
    }

    pub fn decode(&self, dec: &mut RangeDecoder) -> Result<i64> {
        let v = dec.peek();
        let esc = self.cum(self.hi + 1);
        if v >= esc {
            dec.consume(esc, PROB_TOTAL - esc);
            return Ok(self.model.center() + dec.decode_signed_golomb()?);
        }
        // Largest q in [lo, hi] with cum(q) <= v.
        let (mut a, mut b) = (self.lo, self.hi);
        while a < b {
            let mid = a + (b - a + 1) / 2;
            if self.cum(mid) <= v {
                a = mid;
            } else {
                b = mid - 1;
            }
        }
        let (c0, c1) = (self.cum(a), self.cum(a + 1));
        dec.consume(c0, c1 - c0);
        Ok(a)
    }

    /// Ideal code length of `q` under the quantised table.
    pub fn cost(&self, q: i64) -> f64 {
        let freq = if q < self.lo || q > self.hi || self.cum(q + 1) <= self.cum(q) {
            PROB_TOTAL - self.cum(self.hi + 1)
        } else {
            self.cum(q + 1) - self.cum(q)
        };
        -(freq as f64 / PROB_TOTAL as f64).log2()
    }
}

/// `−log₂` of the noise-relaxed Gaussian mass, per element, as a graph op
/// over `x`, `μ`, `σ` and `step` (all the same length).
pub fn gaussian_bits_node<T: Real>(
    g: &mut Graph<T>,
    x: NodeId,
    mu: NodeId,
    sigma: NodeId,
    step: NodeId,
) -> Result<NodeId> {
    let n = g.value(x).len();
    for id in [mu, sigma, step] {
        if g.value(id).len() != n {
            return Err(CoreError::Contract("rate inputs must have equal length".into()));
        }
    }
    let v = |id: NodeId| g.value(id).data().iter().map(|t| t.f64()).collect::<Vec<f64>>();
    let (xv, mv, sv, qv) = (v(x), v(mu), v(sigma), v(step));
    let mut bits = Vec::with_capacity(n);
    // Per element: d bits / d (x, μ, σ, step).
    let mut partials = Vec::with_capacity(n);
    let ln2 = std::f64::consts::LN_2;
    for i in 0..n {
        let (s, h) = (sv[i], qv[i]);
        let l = (xv[i] - 0.5 * h - mv[i]) / s;
        let u = (xv[i] + 0.5 * h - mv[i]) / s;
        let m = normal_interval(l, u);
        if m > MASS_FLOOR {
            bits.push(-m.log2());
            let (pu, pl) = (std_normal_pdf(u), std_normal_pdf(l));
            let k = -1.0 / (m * ln2);
            partials.push([
                k * (pu - pl) / s,
                -k * (pu - pl) / s,
                k * (-u * pu + l * pl) / s,
                k * 0.5 * (pu + pl) / s,
            ]);
        } else {
            bits.push(-MASS_FLOOR.log2());
            partials.push([0.0; 4]);
        }
    }
    let shape = g.value(x).shape().to_vec();
    let value = Tensor::new(shape, bits.into_iter().map(T::of).collect())?;
    Ok(g.custom(
        &[x, mu, sigma, step],
        value,
        Box::new(move |go: &[T]| {
            (0..4)
                .map(|j| Some((0..go.len()).map(|i| T::of(go[i].f64() * partials[i][j])).collect()))
                .collect()
        }),
    ))
}

/// `−log₂` of the unit-bin logistic mass for `x` `[A, C]` under per-channel
/// `loc` and `log_scale` (`[C]` each).
pub fn logistic_bits_node<T: Real>(
    g: &mut Graph<T>,
    x: NodeId,
    loc: NodeId,
    log_scale: NodeId,
) -> Result<NodeId> {
    let c = g.value(x).cols();
    if g.value(loc).len() != c || g.value(log_scale).len() != c {
        return Err(CoreError::Contract("logistic parameters need one entry per channel".into()));
    }
    let v = |id: NodeId| g.value(id).data().iter().map(|t| t.f64()).collect::<Vec<f64>>();
    let (xv, lv, sv) = (v(x), v(loc), v(log_scale));
    let n = xv.len();
    let mut bits = Vec::with_capacity(n);
    let mut partials = Vec::with_capacity(n);
    let ln2 = std::f64::consts::LN_2;
    for i in 0..n {
        let ch = i % c;
        let s = sv[ch].exp();
        let l = (xv[i] - 0.5 - lv[ch]) / s;
        let u = (xv[i] + 0.5 - lv[ch]) / s;
        let m = logistic_mass(lv[ch], s, xv[i]);
        if m > MASS_FLOOR {
            bits.push(-m.log2());
            let (lu, ll) = (logistic(u), logistic(l));
            let (du, dl) = (lu * (1.0 - lu), ll * (1.0 - ll));
            let k = -1.0 / (m * ln2);
            // d/dx, d/dloc, d/dlog_scale
            partials.push([k * (du - dl) / s, -k * (du - dl) / s, k * (-u * du + l * dl)]);
        } else {
            bits.push(-MASS_FLOOR.log2());
            partials.push([0.0; 3]);
        }
    }
    let shape = g.value(x).shape().to_vec();
    let value = Tensor::new(shape, bits.into_iter().map(T::of).collect())?;
    Ok(g.custom(
        &[x, loc, log_scale],
        value,
        Box::new(move |go: &[T]| {
            let mut dx = vec![T::zero(); go.len()];
            let mut dl = vec![0.0; c];
            let mut ds = vec![0.0; c];
            for i in 0..go.len() {
                let gi = go[i].f64();
                dx[i] = T::of(gi * partials[i][0]);
                dl[i % c] += gi * partials[i][1];
                ds[i % c] += gi * partials[i][2];
            }
            vec![
                Some(dx),
                Some(dl.into_iter().map(T::of).collect()),
                Some(ds.into_iter().map(T::of).collect()),
            ]
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_normal_bin_at_zero() {
        // Φ(0.05) − Φ(−0.05)
        let p = gaussian_bin_probability(0.0, 1.0, 0.1, 0.0).unwrap();
        assert!((p - 0.039_877_611_676_745).abs() < 1e-12, "{p}");
    }

    #[test]
    fn mass_is_floored_for_huge_sigma() {
        let p = gaussian_bin_probability(0.0, 1e12, 0.1, 0.0).unwrap();
        assert_eq!(p, MASS_FLOOR);
    }

    #[test]
    fn mass_is_symmetric_about_the_mean() {
        for d in 1..20 {
            let d = d as f64 * 0.1;
            let a = gaussian_bin_probability(0.0, 0.7, 0.1, d).unwrap();
            let b = gaussian_bin_probability(0.0, 0.7, 0.1, -d).unwrap();
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn off_lattice_value_is_rejected() {
        assert!(gaussian_bin_probability(0.0, 1.0, 0.1, 0.05).is_err());
        assert!(gaussian_bin_probability(0.0, 1e-4, 0.1, 0.0).is_err());
    }

    #[test]
    fn cdf_round_trip_including_escapes() {
        let model = GaussianBins { mu: 0.23, sigma: 0.05, step: 0.1 };
        let table = LatticeCdf::new(&model);
        let syms = [2i64, 3, 1, -40, 90, 2, 2, 0, 4];
        let mut enc = RangeEncoder::new();
        for &q in &syms {
            table.encode(&mut enc, q);
        }
        let bytes = enc.finish();
        let mut dec = RangeDecoder::new(&bytes).unwrap();
        for &q in &syms {
            assert_eq!(table.decode(&mut dec).unwrap(), q);
        }
    }

    #[test]
    fn tails_stay_accurate() {
        // Far tail of a narrow Gaussian: no cancellation to zero.
        let m = gaussian_mass(0.0, 1.0, 0.1, 7.0);
        assert!(m > 0.0 && m < 1e-11);
        let m2 = gaussian_mass(0.0, 1.0, 0.1, -7.0);
        assert!((m - m2).abs() / m < 1e-12);
    }
}
