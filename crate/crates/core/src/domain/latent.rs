use alloc::vec::Vec;

use crate::domain::{GridShape, Half};
use crate::error::{Error, Result};
use crate::mat::Mat;

/// Stitched inpainting state: frozen conditioning channels, evolving noise
/// channels and the damage mask, one row per stitched token.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LatentTensor {
    shape: GridShape,
    image_latent: Mat,
    noise_latent: Mat,
    mask: Vec<bool>,
}

impl LatentTensor {
    /// Image channels under the damage mask are zeroed. Fails if the mask
    /// touches the reference half or the buffers disagree in shape.
    pub fn new(shape: GridShape, mut image_latent: Mat, noise_latent: Mat, mask: Vec<bool>) -> Result<Self> {
        let n = shape.token_count();
        if image_latent.rows() != n || noise_latent.shape() != image_latent.shape() || mask.len() != n {
            return Err(Error::arg("latent buffers do not match the stitched grid"));
        }
        if image_latent.cols() == 0 {
            return Err(Error::arg("latent needs at least one channel"));
        }
        for (k, &m) in mask.iter().enumerate() {
            if !m {
                continue;
            }
            if k % shape.stitched_width() < shape.w {
                return Err(Error::arg("mask must be zero on the reference half"));
            }
            image_latent.row_mut(k).fill(0.0);
        }
        Ok(Self { shape, image_latent, noise_latent, mask })
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    /// Channels per latent (`d`).
    pub fn channels(&self) -> usize {
        self.image_latent.cols()
    }

    pub fn image_latent(&self) -> &Mat {
        &self.image_latent
    }

    pub fn noise_latent(&self) -> &Mat {
        &self.noise_latent
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn is_masked(&self, stitched_index: usize) -> bool {
        self.mask[stitched_index]
    }

    pub fn half_of(&self, stitched_index: usize) -> Half {
        if stitched_index % self.shape.stitched_width() < self.shape.w {
            Half::Reference
        } else {
            Half::Target
        }
    }

    /// Same conditioning and mask, new noise channels.
    pub fn with_noise_latent(&self, noise_latent: Mat) -> Result<Self> {
        if noise_latent.shape() != self.noise_latent.shape() {
            return Err(Error::arg("noise latent shape mismatch"));
        }
        Ok(Self { noise_latent, ..self.clone() })
    }

    /// `h·2w × (2d+1)` view: image channels, noise channels, mask.
    pub fn concatenated(&self) -> Mat {
        let d = self.channels();
        Mat::from_fn(self.shape.token_count(), 2 * d + 1, |r, c| {
            if c < d {
                self.image_latent[(r, c)]
            } else if c < 2 * d {
                self.noise_latent[(r, c - d)]
            } else if self.mask[r] {
                1.0
            } else {
                0.0
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn rejects_reference_mask() {
        let shape = GridShape::new(2, 2).unwrap();
        let mut mask = vec![false; 8];
        mask[1] = true;
        let r = LatentTensor::new(shape, Mat::filled(8, 3, 1.0), Mat::zeros(8, 3), mask);
        assert!(r.is_err());
    }

    #[test]
    fn zeroes_masked_target_image_channels() {
        let shape = GridShape::new(2, 2).unwrap();
        let mut mask = vec![false; 8];
        mask[3] = true;
        let z = LatentTensor::new(shape, Mat::filled(8, 3, 1.0), Mat::zeros(8, 3), mask).unwrap();
        assert_eq!(z.image_latent().row(3), &[0.0, 0.0, 0.0]);
        assert_eq!(z.image_latent().row(2), &[1.0, 1.0, 1.0]);
        let cat = z.concatenated();
        assert_eq!(cat.shape(), (8, 7));
        assert_eq!(cat[(3, 6)], 1.0);
    }
}
