//! Feature-activation map: the last convolution's most positively
//! contributing feature map, scaled to the input image.

use serde::{Deserialize, Serialize};

use crate::error::{Result, TwinError};
use crate::network::{chw, NetworkModel};
use crate::scalar::Scalar;
use crate::weighting::{contributions, Space};

pub const DEFAULT_QUANTILE: f64 = 0.95;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureActivationMap<T> {
    pub layer: String,
    pub map: usize,
    pub height: usize,
    pub width: usize,
    /// Row-major, `height * width` values in `[0, 1]`.
    pub mask: Vec<T>,
    pub threshold_quantile: f64,
    /// Summed positive contribution of the selected map.
    pub contribution_of_unit: T,
    /// The same sum for every map of the layer.
    pub map_contributions: Vec<T>,
    /// Set when no map contributes positively or the selected map is
    /// inactive; the mask is then all zero.
    pub degenerate: bool,
}

impl<T: Scalar> FeatureActivationMap<T> {
    /// Mask value at the threshold quantile (nearest rank).
    pub fn threshold(&self) -> T {
        let mut sorted = self.mask.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite mask"));
        let n = sorted.len();
        let rank = ((self.threshold_quantile * n as f64).ceil() as usize).clamp(1, n);
        sorted[rank - 1]
    }

    /// 8-bit overlay: 255 on highlighted pixels, the scaled mask elsewhere.
    pub fn overlay(&self) -> Vec<u8> {
        let t = self.threshold();
        self.mask
            .iter()
            .map(|&m| {
                if m >= t {
                    255
                } else {
                    (m.as_f64() * 255.0).round().clamp(0.0, 255.0) as u8
                }
            })
            .collect()
    }
}

/// FAM against the all-zero image baseline at the default quantile.
pub fn compute_fam<T: Scalar>(
    model: &NetworkModel<T>,
    query: &[T],
) -> Result<FeatureActivationMap<T>> {
    let baseline = vec![T::zero(); query.len()];
    compute_fam_with(model, query, &baseline, DEFAULT_QUANTILE)
}

pub fn compute_fam_with<T: Scalar>(
    model: &NetworkModel<T>,
    query: &[T],
    baseline: &[T],
    threshold_quantile: f64,
) -> Result<FeatureActivationMap<T>> {
    let lc = model.last_conv().ok_or(TwinError::NoConvLayer)?;
    if !model.input_shape().is_image() {
        return Err(TwinError::NotImage);
    }
    if !(threshold_quantile > 0.0 && threshold_quantile <= 1.0) {
        return Err(TwinError::InvalidArgument(format!(
            "threshold quantile {threshold_quantile} outside (0, 1]"
        )));
    }
    let layer = model.layers()[lc].name.clone();
    let c = contributions(model, query, baseline, None, &Space::Layer(layer.clone()))?;
    let (maps, mh, mw) = chw(model.layer_shape(lc));
    let per_map = mh * mw;
    let map_contributions: Vec<T> = c
        .values
        .chunks(per_map)
        .map(|u| u.iter().map(|&v| v.max(T::zero())).sum())
        .collect();
    let mut map = 0;
    for (i, &s) in map_contributions.iter().enumerate() {
        if s > map_contributions[map] {
            map = i;
        }
    }
    let contribution_of_unit = map_contributions[map];

    let (_, height, width) = chw(model.input_shape());
    let acts = model.activations(query);
    let act = &acts[lc + 1][map * per_map..(map + 1) * per_map];
    let clamped: Vec<T> = act.iter().map(|&a| a.max(T::zero())).collect();
    let hi = clamped.iter().copied().fold(T::zero(), T::max);
    let lo = clamped.iter().copied().fold(hi, T::min);
    let degenerate = contribution_of_unit <= T::zero() || hi <= T::zero();
    let small: Vec<T> = if degenerate {
        vec![T::zero(); per_map]
    } else if hi > lo {
        clamped.iter().map(|&a| (a - lo) / (hi - lo)).collect()
    } else {
        vec![T::one(); per_map]
    };
    debug_assert_eq!(maps, map_contributions.len());

    let mut mask = Vec::with_capacity(height * width);
    for y in 0..height {
        let sy = y * mh / height;
        for x in 0..width {
            mask.push(small[sy * mw + x * mw / width]);
        }
    }
    Ok(FeatureActivationMap {
        layer,
        map,
        height,
        width,
        mask,
        threshold_quantile,
        contribution_of_unit,
        map_contributions,
        degenerate,
    })
}
