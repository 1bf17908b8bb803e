//! Anchor refinement driven by temporal significance: significance-weighted
//! positional gradients decide where anchors grow, window-max opacity
//! decides which anchors are pruned.

use std::collections::{BTreeMap, BTreeSet};

use adcgs_tensor::Real;
use serde::{Deserialize, Serialize};

use crate::canonical::{quantize_to_voxel, voxel_key, Anchor, CanonicalSpace};
use crate::error::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefinementConfig {
    /// Growth threshold on the weighted screen-space gradient.
    pub tau_g: f64,
    /// Pruning threshold on window-max opacity.
    pub tau_p: f64,
}

impl Default for RefinementConfig {
    fn default() -> Self {
        Self {
            tau_g: 1e-3,
            tau_p: 0.05,
        }
    }
}

/// Per-primitive `ΣΨ·‖∇‖` and `ΣΨ`, per-anchor max opacity, over a window.
#[derive(Debug, Clone, PartialEq)]
pub struct SignificanceAccumulator {
    pub weighted_grad: Vec<f64>,
    pub weight: Vec<f64>,
    pub max_opacity: Vec<f64>,
    pub records: usize,
    k: usize,
}

impl SignificanceAccumulator {
    pub fn new(anchors: usize, k: usize) -> Self {
        Self {
            weighted_grad: vec![0.0; anchors * k],
            weight: vec![0.0; anchors * k],
            max_opacity: vec![0.0; anchors],
            records: 0,
            k,
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn anchors(&self) -> usize {
        self.max_opacity.len()
    }

    /// Add one rendered view. All slices are per primitive, anchor-major.
    pub fn record(&mut self, psi: &[f64], grad_norm: &[f64], opacity: &[f64]) -> Result<()> {
        let p = self.weight.len();
        if psi.len() != p || grad_norm.len() != p || opacity.len() != p {
            return Err(CoreError::Contract(format!(
                "significance record needs {p} entries per input, got {}, {}, {}",
                psi.len(),
                grad_norm.len(),
                opacity.len()
            )));
        }
        for i in 0..p {
            let w = psi[i].max(0.0);
            self.weighted_grad[i] += w * grad_norm[i].abs();
            self.weight[i] += w;
            let a = i / self.k;
            self.max_opacity[a] = self.max_opacity[a].max(opacity[i]);
        }
        self.records += 1;
        Ok(())
    }

    /// Significance-weighted gradient of primitive `p`, if it was ever seen.
    pub fn gradient(&self, p: usize) -> Option<f64> {
        (self.weight[p] > 0.0).then(|| self.weighted_grad[p] / self.weight[p])
    }

    pub fn reset(&mut self) {
        self.weighted_grad.iter_mut().for_each(|v| *v = 0.0);
        self.weight.iter_mut().for_each(|v| *v = 0.0);
        self.max_opacity.iter_mut().for_each(|v| *v = 0.0);
        self.records = 0;
    }

    /// Fresh accumulator sized for `anchors`.
    pub fn resized(&self, anchors: usize) -> Self {
        Self::new(anchors, self.k)
    }
}

/// Anchors to add: one per voxel that holds a qualifying primitive and no
/// anchor, taken from the primitive with the largest gradient there.
pub fn grow_candidates<T: Real>(
    space: &CanonicalSpace<T>,
    acc: &SignificanceAccumulator,
    tau_g: f64,
) -> Result<Vec<Anchor>> {
    if acc.anchors() != space.anchors.len() || acc.k() != space.k {
        return Err(CoreError::Contract("accumulator does not match the anchor set".into()));
    }
    let v = space.voxel_size as f32 as f64;
    let mut qualifying: Vec<(usize, f64)> = (0..acc.weight.len())
        .filter_map(|p| acc.gradient(p).filter(|&g| g > tau_g).map(|g| (p, g)))
        .collect();
    if qualifying.is_empty() {
        return Ok(Vec::new());
    }
    qualifying.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let prims = space.primitives()?;
    let mut occupied: BTreeSet<[i64; 3]> =
        (0..space.anchors.len()).map(|i| voxel_key(space.anchors.position(i), v)).collect();
    let mut chosen: BTreeMap<[i64; 3], Anchor> = BTreeMap::new();
    for (p, _) in qualifying {
        let prim = &prims[p];
        if prim.position.iter().any(|x| !x.is_finite()) {
            continue;
        }
        let key = voxel_key(prim.position, v);
        if !occupied.insert(key) {
            continue;
        }
        let parent = space.anchors.anchor(prim.anchor_id);
        chosen.insert(
            key,
            Anchor {
                position: quantize_to_voxel(prim.position, v),
                cov: prim.cov,
                color: prim.color,
                f_v: parent.f_v,
                f_g: parent.f_g,
            },
        );
    }
    Ok(chosen.into_values().collect())
}

/// Append grown anchors; returns how many were added.
pub fn grow<T: Real>(
    space: &mut CanonicalSpace<T>,
    acc: &SignificanceAccumulator,
    tau_g: f64,
) -> Result<usize> {
    let new = grow_candidates(space, acc, tau_g)?;
    for a in &new {
        space.anchors.push(a)?;
    }
    Ok(new.len())
}

/// Keep mask: anchors whose window-max opacity reaches `tau_p`.
pub fn prune_mask(acc: &SignificanceAccumulator, tau_p: f64) -> Result<Vec<bool>> {
    let keep: Vec<bool> = acc.max_opacity.iter().map(|&o| o >= tau_p).collect();
    if !keep.is_empty() && !keep.iter().any(|&k| k) {
        return Err(CoreError::Contract(format!(
            "pruning would remove all {} anchors",
            keep.len()
        )));
    }
    Ok(keep)
}

/// Remove low-opacity anchors; returns the keep mask that was applied.
pub fn prune<T: Real>(
    space: &mut CanonicalSpace<T>,
    acc: &SignificanceAccumulator,
    tau_p: f64,
) -> Result<Vec<bool>> {
    if acc.anchors() != space.anchors.len() {
        return Err(CoreError::Contract("accumulator does not match the anchor set".into()));
    }
    let keep = prune_mask(acc, tau_p)?;
    space.anchors.retain(&keep);
    Ok(keep)
}

/// Outcome of one grow-then-prune pass.
#[derive(Debug, Clone, PartialEq)]
pub struct RefineOutcome {
    pub grown: usize,
    /// Keep mask over the anchors present after growing.
    pub keep: Vec<bool>,
}

impl RefineOutcome {
    pub fn pruned(&self) -> usize {
        self.keep.iter().filter(|k| !**k).count()
    }
}

/// Grow, then prune on the window statistics. Anchors grown in this pass
/// have no statistics yet and are kept. A prune that would empty the model
/// is skipped.
pub fn refine<T: Real>(
    space: &mut CanonicalSpace<T>,
    acc: &SignificanceAccumulator,
    cfg: &RefinementConfig,
) -> Result<RefineOutcome> {
    let before = space.anchors.len();
    let grown = grow(space, acc, cfg.tau_g)?;
    let mut keep = prune_mask(acc, cfg.tau_p).unwrap_or_else(|_| vec![true; before]);
    keep.resize(before + grown, true);
    space.anchors.retain(&keep);
    Ok(RefineOutcome { grown, keep })
}

/// One row of the refinement event log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefinementEvent {
    pub iteration: usize,
    pub grown: usize,
    pub pruned: usize,
    pub anchors: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_record_gives_the_gradient_itself() {
        let mut acc = SignificanceAccumulator::new(1, 2);
        acc.record(&[0.3, 0.0], &[0.7, 5.0], &[0.5, 0.5]).unwrap();
        assert_eq!(acc.gradient(0), Some(0.7 * 0.3 / 0.3));
        assert_eq!(acc.gradient(1), None);
    }

    #[test]
    fn equal_weights_average_the_norms() {
        let mut acc = SignificanceAccumulator::new(1, 1);
        for g in [1.0, 2.0, 6.0] {
            acc.record(&[0.25], &[g], &[0.1]).unwrap();
        }
        assert!((acc.gradient(0).unwrap() - 3.0).abs() < 1e-15);
        assert_eq!(acc.max_opacity[0], 0.1);
    }

    #[test]
    fn pruning_everything_is_refused() {
        let acc = SignificanceAccumulator::new(3, 2);
        assert!(prune_mask(&acc, 0.05).is_err());
    }

    #[test]
    fn mismatched_record_is_rejected() {
        let mut acc = SignificanceAccumulator::new(2, 2);
        assert!(acc.record(&[0.0; 3], &[0.0; 4], &[0.0; 4]).is_err());
    }
}
