use serde::{Deserialize, Serialize};

use crate::linalg::norm2;
use crate::rng::{normal_vec, rng_for};
use crate::scalar::Real;

use super::DomainBox;

/// Isotropic Gaussian blobs, one per class, with centers on a sphere around
/// the middle of the domain box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BlobSpec {
    pub input_dim: usize,
    pub n_classes: usize,
    pub samples_per_class: usize,
    pub test_per_class: usize,
    /// Distance of every class center from the box center.
    pub center_radius: f64,
    /// Per-coordinate standard deviation of each blob.
    pub blob_std: f64,
}

impl Default for BlobSpec {
    fn default() -> Self {
        BlobSpec {
            input_dim: 32,
            n_classes: 10,
            samples_per_class: 200,
            test_per_class: 50,
            center_radius: 0.2,
            blob_std: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    pub centers: Vec<Vec<T>>,
    pub train_x: Vec<Vec<T>>,
    pub train_y: Vec<usize>,
    pub test_x: Vec<Vec<T>>,
    pub test_y: Vec<usize>,
}

impl BlobSpec {
    pub fn generate<T: Real>(&self, domain: DomainBox, seed: u64) -> Dataset<T> {
        let mut rng = rng_for(seed, 0xB10B);
        let mid = domain.center();
        let centers: Vec<Vec<T>> = (0..self.n_classes)
            .map(|_| {
                let dir: Vec<f64> = normal_vec(&mut rng, self.input_dim);
                let n = norm2(&dir);
                dir.iter().map(|&v| T::lit(mid + self.center_radius * v / n)).collect()
            })
            .collect();
        let mut draw = |count: usize| {
            let mut xs = Vec::with_capacity(count * self.n_classes);
            let mut ys = Vec::with_capacity(count * self.n_classes);
            for _ in 0..count {
                for (c, center) in centers.iter().enumerate() {
                    let z: Vec<f64> = normal_vec(&mut rng, self.input_dim);
                    xs.push(
                        center
                            .iter()
                            .zip(&z)
                            .map(|(&m, &e)| domain.clamp(m + T::lit(self.blob_std * e)))
                            .collect(),
                    );
                    ys.push(c);
                }
            }
            (xs, ys)
        };
        let (train_x, train_y) = draw(self.samples_per_class);
        let (test_x, test_y) = draw(self.test_per_class);
        Dataset { centers, train_x, train_y, test_x, test_y }
    }
}
