use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::tensor::Scalar;

/// Global scalar mean/std over every real entry of a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub mean: f64,
    pub std: f64,
}

impl DatasetStats {
    pub fn fit<T: Scalar>(samples: &[Vec<T>]) -> Result<Self> {
        let n: usize = samples.iter().map(Vec::len).sum();
        if n == 0 {
            return invalid("cannot standardize an empty dataset");
        }
        let mean = samples
            .iter()
            .flat_map(|s| s.iter())
            .map(|v| v.to_f64_lossy())
            .sum::<f64>()
            / n as f64;
        let var = samples
            .iter()
            .flat_map(|s| s.iter())
            .map(|v| (v.to_f64_lossy() - mean).powi(2))
            .sum::<f64>()
            / n as f64;
        let std = var.sqrt();
        if !(std > 0.0) || !std.is_finite() {
            return invalid("dataset has zero variance");
        }
        Ok(Self { mean, std })
    }

    pub fn apply<T: Scalar>(&self, x: &mut [T]) {
        let (m, s) = (self.mean, self.std);
        x.iter_mut().for_each(|v| *v = T::lit((v.to_f64_lossy() - m) / s));
    }

    pub fn invert<T: Scalar>(&self, x: &mut [T]) {
        let (m, s) = (self.mean, self.std);
        x.iter_mut().for_each(|v| *v = T::lit(v.to_f64_lossy() * s + m));
    }
}

/// Standardizes in place and returns the fitted statistics.
pub fn normalize<T: Scalar>(samples: &mut [Vec<T>]) -> Result<DatasetStats> {
    let stats = DatasetStats::fit(samples)?;
    samples.iter_mut().for_each(|s| stats.apply(s));
    Ok(stats)
}

pub fn denormalize<T: Scalar>(samples: &mut [Vec<T>], stats: &DatasetStats) {
    samples.iter_mut().for_each(|s| stats.invert(s));
}
