//! Labelled samples and the fixed class vocabulary.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const NUM_CLASSES: usize = 4;

/// Image and pixel classes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PlantClass {
    Broadleaf,
    Grass,
    Soil,
    Soybean,
}

impl PlantClass {
    pub const ALL: [PlantClass; NUM_CLASSES] = [PlantClass::Broadleaf, PlantClass::Grass, PlantClass::Soil, PlantClass::Soybean];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Result<Self> {
        Self::ALL.get(index).copied().ok_or_else(|| Error::contract(format!("class index {index} outside 0..{NUM_CLASSES}")))
    }

    pub fn name(self) -> &'static str {
        match self {
            PlantClass::Broadleaf => "broadleaf",
            PlantClass::Grass => "grass",
            PlantClass::Soil => "soil",
            PlantClass::Soybean => "soybean",
        }
    }
}

impl fmt::Display for PlantClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PlantClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|c| c.name() == s).ok_or_else(|| Error::contract(format!("unknown class label {s:?}")))
    }
}

/// One model-ready example.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    /// `[3, H, W]` network input.
    pub image: Tensor,
    pub label: PlantClass,
    /// Per-pixel class indices at the input resolution, row-major.
    pub mask: Option<Vec<u8>>,
    pub growth: Option<f64>,
    pub synthetic: bool,
}

impl Sample {
    /// Mask as a `[classes, H, W]` one-hot tensor.
    pub fn mask_one_hot(&self) -> Result<Option<Tensor>> {
        let Some(mask) = &self.mask else { return Ok(None) };
        let shape = self.image.shape();
        one_hot_mask(mask, shape[1], shape[2]).map(Some)
    }
}

pub fn one_hot_mask(mask: &[u8], height: usize, width: usize) -> Result<Tensor> {
    let hw = height * width;
    if mask.len() != hw {
        return Err(Error::dim(format!("mask has {} pixels, image {height}x{width}", mask.len())));
    }
    let mut out = Tensor::zeros([NUM_CLASSES, height, width]);
    for (i, &c) in mask.iter().enumerate() {
        let c = c as usize;
        if c >= NUM_CLASSES {
            return Err(Error::contract(format!("mask value {c} is not a class index")));
        }
        out.data_mut()[c * hw + i] = 1.0;
    }
    Ok(out)
}

/// Number of samples per class.
pub fn class_counts(samples: &[Sample]) -> [usize; NUM_CLASSES] {
    let mut counts = [0; NUM_CLASSES];
    for s in samples {
        counts[s.label.index()] += 1;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn class_names_roundtrip() {
        for c in PlantClass::ALL {
            assert_eq!(c.name().parse::<PlantClass>().unwrap(), c);
            assert_eq!(PlantClass::from_index(c.index()).unwrap(), c);
        }
        assert!("weed".parse::<PlantClass>().is_err());
        assert!(PlantClass::from_index(4).is_err());
    }

    #[test]
    fn one_hot_sums_to_one_per_pixel() {
        let m = one_hot_mask(&[0, 3, 2, 1, 1, 0], 2, 3).unwrap();
        for p in 0..6 {
            let s: f64 = (0..4).map(|c| m.data()[c * 6 + p]).sum();
            assert_eq!(s, 1.0);
        }
        assert_eq!(m.get(&[3, 0, 1]), 1.0);
        assert!(one_hot_mask(&[7], 1, 1).is_err());
        assert!(one_hot_mask(&[0, 0], 1, 1).is_err());
    }
}
