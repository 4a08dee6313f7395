use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{RngStream, StreamPurpose};
use crate::problem::Domain;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    #[default]
    UniformRandom,
    /// Axis-aligned lattice with corners; needs `M = kⁿ`.
    Grid,
    LatinHypercube,
}

impl std::str::FromStr for Sampling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform_random" => Ok(Sampling::UniformRandom),
            "grid" => Ok(Sampling::Grid),
            "latin_hypercube" => Ok(Sampling::LatinHypercube),
            other => Err(Error::invalid("sampling", format!("unknown sampling `{other}`"))),
        }
    }
}

/// `count` points inside `domain`, one per row.
pub fn sample_training_points<T: Real>(
    domain: &Domain<T>,
    count: usize,
    sampling: Sampling,
    seed: u64,
) -> Result<DMatrix<T>> {
    if count == 0 {
        return Err(Error::invalid("num_points", "must be at least 1"));
    }
    let n = domain.dim();
    let lo: Vec<f64> = domain.lower().iter().map(|v| v.as_f64()).collect();
    let hi: Vec<f64> = domain.upper().iter().map(|v| v.as_f64()).collect();
    let mut rng = RngStream::new(seed, StreamPurpose::Sampling).rng();
    let mut out = DMatrix::zeros(count, n);

    match sampling {
        Sampling::UniformRandom => {
            for i in 0..count {
                for k in 0..n {
                    out[(i, k)] = T::lit(rng.random_range(lo[k]..hi[k]));
                }
            }
        }
        Sampling::LatinHypercube => {
            let mut strata: Vec<usize> = (0..count).collect();
            for k in 0..n {
                strata.shuffle(&mut rng);
                for (i, &s) in strata.iter().enumerate() {
                    let u: f64 = rng.random();
                    let frac = (s as f64 + u) / count as f64;
                    out[(i, k)] = T::lit(lo[k] + frac * (hi[k] - lo[k]));
                }
            }
        }
        Sampling::Grid => {
            let per_axis = (count as f64).powf(1.0 / n as f64).round() as usize;
            if per_axis.checked_pow(n as u32) != Some(count) {
                return Err(Error::invalid(
                    "num_points",
                    format!("grid sampling needs a perfect {n}-th power, got {count}"),
                ));
            }
            let coord = |k: usize, idx: usize| {
                if per_axis == 1 {
                    0.5 * (lo[k] + hi[k])
                } else if idx + 1 == per_axis {
                    hi[k]
                } else {
                    lo[k] + (hi[k] - lo[k]) * idx as f64 / (per_axis - 1) as f64
                }
            };
            for i in 0..count {
                let mut rem = i;
                for k in (0..n).rev() {
                    out[(i, k)] = T::lit(coord(k, rem % per_axis));
                    rem /= per_axis;
                }
            }
        }
    }
    Ok(out)
}
