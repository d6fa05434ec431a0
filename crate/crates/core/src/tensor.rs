//! Dense `f64` tensors in channels-height-width layout, reproducible RNG
//! streams, and the weight initialization strategies used by the disturbance
//! experiments.
//!
//! Everything downstream (feature maps, perturbations, filter banks) is a
//! [`Tensor`]. Values are 64-bit floats throughout: the redundancy detector
//! relies on bit-exact equality of convolution outputs, so no lower-precision
//! storage is used anywhere.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense tensor of `f64` values in row-major order.
///
/// The shape convention is channels x height x width for feature maps,
/// `[out, in, k, k]` for convolution filters, `[out, in]` for linear weights
/// and `[n]` for flat vectors. Tensors are immutable once built and safe to
/// share across threads.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor, validating that the shape is non-empty, that it
    /// matches the data length, and that every value is finite.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected = element_count(&shape)?;
        if expected != data.len() {
            return Err(Error::ShapeDataMismatch {
                shape,
                expected,
                actual: data.len(),
            });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Tensor { shape, data })
    }

    /// All-zero tensor of the given shape.
    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let n = element_count(&shape)?;
        Ok(Tensor {
            shape,
            data: vec![0.0; n],
        })
    }

    /// Internal constructor for values produced by the crate's own numeric
    /// kernels, which cannot introduce shape mismatches.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Largest absolute entry; 0 for an all-zero tensor.
    pub fn linf_norm(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Elementwise (min, max) over all entries.
    pub fn value_range(&self) -> (f64, f64) {
        self.data.iter().fold(
            (f64::INFINITY, f64::NEG_INFINITY),
            |(lo, hi), &v| (lo.min(v), hi.max(v)),
        )
    }

    /// Elementwise sum; shapes must match exactly.
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, |a, b| a + b)
    }

    /// Elementwise difference; shapes must match exactly.
    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, |a, b| a - b)
    }

    /// Elementwise scaling by a constant.
    pub fn scale(&self, factor: f64) -> Tensor {
        Tensor::from_parts(
            self.shape.clone(),
            self.data.iter().map(|v| v * factor).collect(),
        )
    }

    /// Checks the all-finite invariant explicitly (used at experiment
    /// boundaries after long chains of arithmetic).
    pub fn validate_finite(&self) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(index) => Err(Error::NonFinite { index }),
            None => Ok(()),
        }
    }

    fn zip_with(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::invalid(
                "tensor",
                format!("shape mismatch: {:?} vs {:?}", self.shape, other.shape),
            ));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Tensor::from_parts(self.shape.clone(), data))
    }
}

fn element_count(shape: &[usize]) -> Result<usize> {
    let n: usize = shape.iter().product();
    if shape.is_empty() || n == 0 {
        return Err(Error::EmptyShape(shape.to_vec()));
    }
    Ok(n)
}

/// Identifier of an independent, reproducible random stream.
///
/// Identical `(seed, stream_id)` pairs yield bit-identical value sequences
/// regardless of thread scheduling, which is what makes parallel Monte Carlo
/// runs deterministic: every trial owns its own stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        RngStream { seed, stream_id }
    }

    /// Instantiates the generator for this stream.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

/// Weight initialization strategy.
///
/// The Xavier variants are parameter-free: variance `2 / (fan_in + fan_out)`,
/// with the uniform bound `sqrt(6 / (fan_in + fan_out))`. The plain Normal and
/// Uniform strategies carry explicit parameters; see
/// [`InitStrategy::DEFAULT_NORMAL`] and [`InitStrategy::DEFAULT_UNIFORM`] for
/// the defaults used when nothing else is configured.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitStrategy {
    Normal { mean: f64, std: f64 },
    Uniform { low: f64, high: f64 },
    XavierNormal,
    XavierUniform,
}

impl InitStrategy {
    pub const DEFAULT_NORMAL: InitStrategy = InitStrategy::Normal {
        mean: 0.0,
        std: 0.05,
    };
    pub const DEFAULT_UNIFORM: InitStrategy = InitStrategy::Uniform {
        low: -0.05,
        high: 0.05,
    };
}

/// fan_in / fan_out for a conv filter `[out, in, kh, kw]` or a linear weight
/// `[out, in]`.
fn fans(shape: &[usize]) -> Result<(usize, usize)> {
    match *shape {
        [out, inp] => Ok((inp, out)),
        [out, inp, kh, kw] => Ok((inp * kh * kw, out * kh * kw)),
        _ => Err(Error::invalid(
            "shape",
            format!("expected a conv filter or linear weight shape, got {shape:?}"),
        )),
    }
}

/// Fills a filter-bank or linear-weight tensor according to `strategy`.
///
/// Deterministic: the output is a pure function of `(shape, strategy, stream)`.
pub fn init_weights(shape: &[usize], strategy: InitStrategy, stream: RngStream) -> Result<Tensor> {
    let (fan_in, fan_out) = fans(shape)?;
    let n = element_count(shape)?;
    let mut rng = stream.rng();
    let data: Vec<f64> = match strategy {
        InitStrategy::Normal { mean, std } => sample_normal(&mut rng, n, mean, std)?,
        InitStrategy::Uniform { low, high } => sample_uniform(&mut rng, n, low, high)?,
        InitStrategy::XavierNormal => {
            let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
            sample_normal(&mut rng, n, 0.0, std)?
        }
        InitStrategy::XavierUniform => {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            sample_uniform(&mut rng, n, -bound, bound)?
        }
    };
    Ok(Tensor::from_parts(shape.to_vec(), data))
}

/// Draws an i.i.d. perturbation tensor with entries in `[-epsilon, epsilon]`.
///
/// `epsilon == 0` yields an exactly-zero tensor.
pub fn sample_uniform_perturbation(
    shape: &[usize],
    epsilon: f64,
    stream: RngStream,
) -> Result<Tensor> {
    if !epsilon.is_finite() || epsilon < 0.0 {
        return Err(Error::invalid(
            "epsilon",
            format!("must be a finite non-negative number, got {epsilon}"),
        ));
    }
    let n = element_count(shape)?;
    if epsilon == 0.0 {
        return Ok(Tensor::from_parts(shape.to_vec(), vec![0.0; n]));
    }
    let mut rng = stream.rng();
    let data = sample_uniform(&mut rng, n, -epsilon, epsilon)?;
    Ok(Tensor::from_parts(shape.to_vec(), data))
}

fn sample_normal(rng: &mut ChaCha8Rng, n: usize, mean: f64, std: f64) -> Result<Vec<f64>> {
    if !mean.is_finite() || !std.is_finite() || std < 0.0 {
        return Err(Error::invalid(
            "normal",
            format!("mean {mean}, std {std} out of range"),
        ));
    }
    if std == 0.0 {
        return Ok(vec![mean; n]);
    }
    let dist = Normal::new(mean, std)
        .map_err(|e| Error::invalid("normal", e.to_string()))?;
    Ok((0..n).map(|_| dist.sample(rng)).collect())
}

fn sample_uniform(rng: &mut ChaCha8Rng, n: usize, low: f64, high: f64) -> Result<Vec<f64>> {
    if !low.is_finite() || !high.is_finite() || low > high {
        return Err(Error::invalid(
            "uniform",
            format!("bounds [{low}, {high}] out of range"),
        ));
    }
    if low == high {
        return Ok(vec![low; n]);
    }
    let dist = Uniform::new_inclusive(low, high)
        .map_err(|e| Error::invalid("uniform", e.to_string()))?;
    Ok((0..n).map(|_| dist.sample(rng)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_uniform_bounds_give_zero() {
        let t = init_weights(
            &[1, 1, 1, 1],
            InitStrategy::Uniform { low: 0.0, high: 0.0 },
            RngStream::new(1, 0),
        )
        .unwrap();
        assert_eq!(t.data(), &[0.0]);
    }

    #[test]
    fn xavier_uniform_respects_bound() {
        // fan_in = 3*3*3 = 27, fan_out = 16*3*3 = 144
        let t = init_weights(
            &[16, 3, 3, 3],
            InitStrategy::XavierUniform,
            RngStream::new(7, 0),
        )
        .unwrap();
        let bound = (6.0 / 171.0f64).sqrt();
        assert!(t.linf_norm() <= bound);
        // and the stream actually exercised the range
        assert!(t.linf_norm() > 0.5 * bound);
    }

    #[test]
    fn same_stream_is_bit_identical() {
        let s = RngStream::new(42, 9);
        let a = init_weights(&[4, 4], InitStrategy::XavierNormal, s).unwrap();
        let b = init_weights(&[4, 4], InitStrategy::XavierNormal, s).unwrap();
        assert_eq!(a, b);

        let p = sample_uniform_perturbation(&[3, 8, 8], 0.1, s).unwrap();
        let q = sample_uniform_perturbation(&[3, 8, 8], 0.1, s).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn different_streams_differ() {
        let a = init_weights(&[4, 4], InitStrategy::XavierNormal, RngStream::new(42, 0)).unwrap();
        let b = init_weights(&[4, 4], InitStrategy::XavierNormal, RngStream::new(42, 1)).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn zero_sized_shape_is_rejected() {
        assert!(init_weights(&[0, 3], InitStrategy::DEFAULT_NORMAL, RngStream::new(0, 0)).is_err());
        assert!(sample_uniform_perturbation(&[], 0.1, RngStream::new(0, 0)).is_err());
    }

    #[test]
    fn zero_epsilon_is_exactly_zero() {
        let t = sample_uniform_perturbation(&[2, 4, 4], 0.0, RngStream::new(3, 5)).unwrap();
        assert!(t.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn negative_epsilon_is_rejected() {
        assert!(sample_uniform_perturbation(&[2, 2], -0.1, RngStream::new(0, 0)).is_err());
    }

    #[test]
    fn uniform_perturbation_statistics() {
        // Law-of-large-numbers check on 10^5 draws from U[-0.1, 0.1].
        let t = sample_uniform_perturbation(&[100_000], 0.1, RngStream::new(11, 0)).unwrap();
        let mean = t.data().iter().sum::<f64>() / t.len() as f64;
        let (min, max) = t.value_range();
        assert!(mean.abs() < 0.002, "mean {mean}");
        assert!((-0.1..=-0.099).contains(&min), "min {min}");
        assert!((0.099..=0.1).contains(&max), "max {max}");
    }

    #[test]
    fn xavier_normal_variance_matches_fans() {
        // Sample variance of 10^5 draws within 5% of 2/(fan_in+fan_out).
        let t = init_weights(
            &[100, 10, 10, 10],
            InitStrategy::XavierNormal,
            RngStream::new(5, 0),
        )
        .unwrap();
        let n = t.len() as f64;
        let mean = t.data().iter().sum::<f64>() / n;
        let var = t.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let expect = 2.0 / (10.0 * 100.0 + 100.0 * 100.0);
        assert!(
            (var - expect).abs() / expect < 0.05,
            "var {var} vs {expect}"
        );
    }

    #[test]
    fn linf_norm_is_max_abs() {
        let t = Tensor::new(vec![4], vec![-3.0, 1.0, 2.5, -0.5]).unwrap();
        assert_eq!(t.linf_norm(), 3.0);
        assert_eq!(Tensor::zeros(vec![2, 2]).unwrap().linf_norm(), 0.0);
    }

    #[test]
    fn tensor_rejects_non_finite() {
        assert!(Tensor::new(vec![2], vec![1.0, f64::NAN]).is_err());
        assert!(Tensor::new(vec![2], vec![f64::INFINITY, 0.0]).is_err());
    }
}
