//! Rotated Gaussian blobs, a toy shift between two labelled domains.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{FeatureMatrix, LabeledDataset};
use crate::error::Result;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RotatedGaussians {
    /// One 2-D centre per class; class `c` uses `centers[c - 1]`.
    pub centers: Vec<[f64; 2]>,
    /// Standard deviation of each coordinate.
    pub spread: f64,
    pub per_class: usize,
    /// Rotation of the target about the origin, in degrees.
    pub angle_degrees: f64,
}

impl Default for RotatedGaussians {
    fn default() -> Self {
        Self {
            centers: vec![[2.0, 0.0], [-2.0, 0.0]],
            spread: 0.3,
            per_class: 40,
            angle_degrees: 30.0,
        }
    }
}

impl RotatedGaussians {
    fn sample(&self, rng: &mut ChaCha8Rng, angle: f64) -> Result<LabeledDataset> {
        let n = self.centers.len() * self.per_class;
        let (sin, cos) = angle.sin_cos();
        let mut values = Array2::zeros((n, 2));
        let mut labels = Vec::with_capacity(n);
        for (c, center) in self.centers.iter().enumerate() {
            for k in 0..self.per_class {
                let row = c * self.per_class + k;
                let dx: f64 = rng.sample(StandardNormal);
                let dy: f64 = rng.sample(StandardNormal);
                let x = center[0] + self.spread * dx;
                let y = center[1] + self.spread * dy;
                values[[row, 0]] = cos * x - sin * y;
                values[[row, 1]] = sin * x + cos * y;
                labels.push(c + 1);
            }
        }
        LabeledDataset::new(FeatureMatrix::new(values)?, labels)
    }

    /// Independent source and target draws; only the target is rotated.
    pub fn generate(&self, seed: u64) -> Result<(LabeledDataset, LabeledDataset)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let source = self.sample(&mut rng, 0.0)?;
        let target = self.sample(&mut rng, self.angle_degrees.to_radians())?;
        Ok((source, target))
    }
}
