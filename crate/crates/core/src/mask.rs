//! Enhancement mask `M = L·α + β` and its voxelwise application to the
//! original intensities.

use crate::error::{Error, Result};
use crate::localize::{crop, CropWindow, Localization};
use crate::volume::{Dims, LabelVolume, Volume};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskParams {
    pub alpha: f32,
    /// 1 keeps every original intensity at least as bright as it was.
    pub beta: f32,
    pub binarize_threshold: f32,
    /// Build the mask from the soft proposal instead of its binarization.
    pub soft: bool,
}

impl Default for MaskParams {
    fn default() -> Self {
        MaskParams {
            alpha: 0.1,
            beta: 1.0,
            binarize_threshold: 0.5,
            soft: false,
        }
    }
}

impl MaskParams {
    pub fn validate(&self) -> Result<()> {
        if !self.alpha.is_finite() || self.alpha < 0.0 {
            return Err(Error::InvalidConfig(format!("alpha must be finite and >= 0, got {}", self.alpha)));
        }
        if !self.beta.is_finite() {
            return Err(Error::InvalidConfig(format!("beta must be finite, got {}", self.beta)));
        }
        if !(0.0..=1.0).contains(&self.binarize_threshold) {
            return Err(Error::InvalidConfig(format!(
                "binarize_threshold must lie in [0, 1], got {}",
                self.binarize_threshold
            )));
        }
        Ok(())
    }
}

/// 1 where `prob > threshold`.
pub fn binarize(prob: &Volume, threshold: f32) -> LabelVolume {
    let data = prob.data().iter().map(|&p| u8::from(p > threshold)).collect();
    LabelVolume::new(prob.dims(), data).expect("dims taken from a valid volume")
}

pub fn build_mask(label: &LabelVolume, params: &MaskParams) -> Volume {
    let data = label
        .data()
        .iter()
        .map(|&l| f32::from(l) * params.alpha + params.beta)
        .collect();
    Volume::new(label.dims(), [1.0; 3], data).expect("finite mask values")
}

/// Soft variant: `M = p·α + β` straight from the probability map.
pub fn build_soft_mask(prob: &Volume, params: &MaskParams) -> Volume {
    prob.map(|p| p * params.alpha + params.beta).expect("finite mask values")
}

pub fn apply_mask(mask: &Volume, original: &Volume) -> Result<Volume> {
    if mask.dims() != original.dims() {
        return Err(Error::ShapeMismatch(format!(
            "mask {:?} vs volume {:?}",
            mask.dims(),
            original.dims()
        )));
    }
    let data = mask.data().iter().zip(original.data()).map(|(&m, &x)| m * x).collect();
    Volume::new(original.dims(), original.spacing(), data)
}

/// Crops proposal and original at the localized center, builds the mask from
/// the cropped proposal and multiplies it into the cropped original.
pub fn enhance_crop(
    prob_fullres: &Volume,
    original: &Volume,
    loc: &Localization,
    crop_dims: Dims,
    params: &MaskParams,
) -> Result<(Volume, CropWindow)> {
    if prob_fullres.dims() != original.dims() {
        return Err(Error::ShapeMismatch(format!(
            "proposal {:?} vs volume {:?}",
            prob_fullres.dims(),
            original.dims()
        )));
    }
    let (prob, window) = crop(prob_fullres, loc.center, crop_dims)?;
    let (orig, _) = crop(original, loc.center, crop_dims)?;
    let mask = if params.soft {
        build_soft_mask(&prob, params)
    } else {
        build_mask(&binarize(&prob, params.binarize_threshold), params)
    };
    Ok((apply_mask(&mask, &orig)?, window))
}
