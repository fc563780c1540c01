use crate::error::{Error, Result};
use crate::linop::Signal;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Law of the nonzero amplitudes: `sign · Uniform[low, high]` with a fair
/// random sign when `signed`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AmplitudeLaw {
    pub low: f64,
    pub high: f64,
    pub signed: bool,
}

impl Default for AmplitudeLaw {
    fn default() -> Self {
        AmplitudeLaw {
            low: 0.5,
            high: 1.5,
            signed: true,
        }
    }
}

/// Sparse ground-truth signals, deterministic given the master seed.
#[derive(Clone, Debug, Serialize)]
pub struct SparseDataset {
    pub signal_len: usize,
    pub sparsity: usize,
    pub seed: u64,
    pub amplitude: AmplitudeLaw,
    pub samples: Vec<Signal>,
}

impl SparseDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

pub fn make_dataset(n: usize, count: usize, sparsity: usize, seed: u64) -> Result<SparseDataset> {
    make_dataset_with(n, count, sparsity, seed, AmplitudeLaw::default())
}

pub fn make_dataset_with(
    n: usize,
    count: usize,
    sparsity: usize,
    seed: u64,
    amplitude: AmplitudeLaw,
) -> Result<SparseDataset> {
    if n == 0 {
        return Err(Error::Argument("signal length must be positive".into()));
    }
    if sparsity > n {
        return Err(Error::Argument(format!(
            "sparsity {sparsity} exceeds signal length {n}"
        )));
    }
    if !(amplitude.low > 0.0 && amplitude.low <= amplitude.high) {
        return Err(Error::Argument(format!(
            "amplitude range [{}, {}] must be positive and ordered",
            amplitude.low, amplitude.high
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..count)
        .map(|_| {
            let mut x = vec![0.0; n];
            for pos in sample(&mut rng, n, sparsity) {
                let mag = if amplitude.high > amplitude.low {
                    rng.random_range(amplitude.low..amplitude.high)
                } else {
                    amplitude.low
                };
                let sign = if amplitude.signed && rng.random_bool(0.5) {
                    -1.0
                } else {
                    1.0
                };
                x[pos] = sign * mag;
            }
            Signal::new(x)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SparseDataset {
        signal_len: n,
        sparsity,
        seed,
        amplitude,
        samples,
    })
}
