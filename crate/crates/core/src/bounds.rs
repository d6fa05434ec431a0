//! Tail bounds on the pooled feature disturbance.
//!
//! For a feature disturbance `d` with independent zero-mean entries supported
//! on `[a, b]` over an `H x W` map, the probability that the pooled
//! disturbance exceeds `gamma` is bounded by
//!
//! - average pooling: `2 * exp(-2 H W gamma^2 / (b - a)^2)`
//! - max pooling: `(b - a) * sqrt(ln(sqrt(2 H W))) / gamma`
//!
//! Logarithms are natural throughout. Both bounds are also available
//! inverted: the smallest `gamma` certified at a given probability `p`. The
//! max-pooling bound is Markov-type and frequently vacuous; probability
//! outputs are clamped to `[0, 1]` with an explicit saturation flag so
//! callers can tell.
//!
//! The consequence worth reading off the formulas: at fixed `a`, `b`, `p`,
//! growing the feature area `H*W` *shrinks* the certified `gamma` for average
//! pooling and *grows* it for max pooling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::PoolKind;

/// Result of a bound evaluation: either a probability or a `gamma`,
/// depending on the operation. `saturated` is set when a probability
/// exceeded 1 and was clamped.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundResult {
    pub value: f64,
    pub saturated: bool,
}

impl BoundResult {
    fn exact(value: f64) -> Self {
        BoundResult {
            value,
            saturated: false,
        }
    }

    fn probability(raw: f64) -> Self {
        if raw > 1.0 {
            BoundResult {
                value: 1.0,
                saturated: true,
            }
        } else {
            BoundResult {
                value: raw,
                saturated: false,
            }
        }
    }
}

fn check_dims(h: usize, w: usize) -> Result<()> {
    if h == 0 || w == 0 {
        return Err(Error::invalid("dims", "H and W must be >= 1"));
    }
    Ok(())
}

fn check_range(a: f64, b: f64) -> Result<()> {
    if !a.is_finite() || !b.is_finite() || a > b {
        return Err(Error::invalid(
            "range",
            format!("need finite a <= b, got a={a}, b={b}"),
        ));
    }
    Ok(())
}

/// Tail probability bound for average pooling:
/// `min(1, 2 exp(-2 H W gamma^2 / (b-a)^2))`.
///
/// `a == b` means a zero disturbance range and returns exactly 0.
pub fn avg_pool_tail_bound(h: usize, w: usize, a: f64, b: f64, gamma: f64) -> Result<BoundResult> {
    check_dims(h, w)?;
    check_range(a, b)?;
    if !(gamma > 0.0) {
        return Err(Error::invalid("gamma", format!("must be > 0, got {gamma}")));
    }
    if a == b {
        return Ok(BoundResult::exact(0.0));
    }
    let hw = (h * w) as f64;
    let raw = 2.0 * (-2.0 * hw * gamma * gamma / ((b - a) * (b - a))).exp();
    Ok(BoundResult::probability(raw))
}

/// Smallest `gamma` certified at probability `p` by the average-pooling
/// bound: `(b-a) * sqrt(ln(2/p) / (2 H W))`. For `p >= 2` the bound holds
/// vacuously at `gamma = 0`.
pub fn avg_pool_gamma_min(h: usize, w: usize, a: f64, b: f64, p: f64) -> Result<BoundResult> {
    check_dims(h, w)?;
    check_range(a, b)?;
    if !(p > 0.0) {
        return Err(Error::invalid("p", format!("must be > 0, got {p}")));
    }
    if a == b || p >= 2.0 {
        return Ok(BoundResult::exact(0.0));
    }
    let hw = (h * w) as f64;
    Ok(BoundResult::exact(
        (b - a) * ((2.0 / p).ln() / (2.0 * hw)).sqrt(),
    ))
}

/// Tail probability bound for max pooling:
/// `min(1, (b-a) * sqrt(ln(sqrt(2 H W))) / gamma)`.
pub fn max_pool_tail_bound(h: usize, w: usize, a: f64, b: f64, gamma: f64) -> Result<BoundResult> {
    check_dims(h, w)?;
    check_range(a, b)?;
    if !(gamma > 0.0) {
        return Err(Error::invalid("gamma", format!("must be > 0, got {gamma}")));
    }
    if a == b {
        return Ok(BoundResult::exact(0.0));
    }
    let hw = (h * w) as f64;
    let raw = (b - a) * (0.5 * (2.0 * hw).ln()).sqrt() / gamma;
    Ok(BoundResult::probability(raw))
}

/// Smallest `gamma` certified at probability `p` by the max-pooling bound:
/// `(b-a) * sqrt(ln(sqrt(2 H W))) / p`.
pub fn max_pool_gamma_min(h: usize, w: usize, a: f64, b: f64, p: f64) -> Result<BoundResult> {
    check_dims(h, w)?;
    check_range(a, b)?;
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::invalid("p", format!("must be in (0, 1], got {p}")));
    }
    if a == b {
        return Ok(BoundResult::exact(0.0));
    }
    let hw = (h * w) as f64;
    Ok(BoundResult::exact(
        (b - a) * (0.5 * (2.0 * hw).ln()).sqrt() / p,
    ))
}

/// Fraction of samples with `|value| >= gamma`.
pub fn empirical_tail(samples: &[f64], gamma: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("empirical_tail samples"));
    }
    let hits = samples.iter().filter(|v| v.abs() >= gamma).count();
    Ok(hits as f64 / samples.len() as f64)
}

/// The given side of a bound query: supply `gamma` to evaluate the tail
/// probability, or `p` to invert for the smallest certified `gamma`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GivenParam {
    Gamma(f64),
    P(f64),
}

/// A full bound query as exposed on the CLI.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundQuery {
    pub pooling: PoolKind,
    pub height: usize,
    pub width: usize,
    pub a: f64,
    pub b: f64,
    pub given: GivenParam,
}

/// Evaluated bound query; serializes with the fixed field names
/// `{pooling, H, W, a, b, gamma, p, saturated}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundOutcome {
    pub pooling: PoolKind,
    #[serde(rename = "H")]
    pub height: usize,
    #[serde(rename = "W")]
    pub width: usize,
    pub a: f64,
    pub b: f64,
    pub gamma: f64,
    pub p: f64,
    pub saturated: bool,
}

/// Evaluates a [`BoundQuery`], filling in whichever of `gamma` / `p` was not
/// given.
pub fn evaluate_bound_query(q: &BoundQuery) -> Result<BoundOutcome> {
    let (gamma, p, saturated) = match (q.pooling, q.given) {
        (PoolKind::Average, GivenParam::Gamma(g)) => {
            let r = avg_pool_tail_bound(q.height, q.width, q.a, q.b, g)?;
            (g, r.value, r.saturated)
        }
        (PoolKind::Average, GivenParam::P(p)) => {
            let r = avg_pool_gamma_min(q.height, q.width, q.a, q.b, p)?;
            (r.value, p, r.saturated)
        }
        (PoolKind::Max, GivenParam::Gamma(g)) => {
            let r = max_pool_tail_bound(q.height, q.width, q.a, q.b, g)?;
            (g, r.value, r.saturated)
        }
        (PoolKind::Max, GivenParam::P(p)) => {
            let r = max_pool_gamma_min(q.height, q.width, q.a, q.b, p)?;
            (r.value, p, r.saturated)
        }
    };
    Ok(BoundOutcome {
        pooling: q.pooling,
        height: q.height,
        width: q.width,
        a: q.a,
        b: q.b,
        gamma,
        p,
        saturated,
    })
}

impl BoundOutcome {
    pub fn to_csv(&self) -> String {
        use crate::stats::sig6;
        format!(
            "pooling,H,W,a,b,gamma,p,saturated\n{},{},{},{},{},{},{},{}\n",
            self.pooling.name(),
            self.height,
            self.width,
            sig6(self.a),
            sig6(self.b),
            sig6(self.gamma),
            sig6(self.p),
            self.saturated
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_disturbance_range_gives_zero() {
        assert_eq!(
            avg_pool_tail_bound(8, 8, 0.3, 0.3, 0.1).unwrap().value,
            0.0
        );
        assert_eq!(
            max_pool_tail_bound(8, 8, 0.3, 0.3, 0.1).unwrap().value,
            0.0
        );
        assert_eq!(avg_pool_gamma_min(8, 8, 0.3, 0.3, 0.05).unwrap().value, 0.0);
        assert_eq!(max_pool_gamma_min(8, 8, 0.3, 0.3, 0.05).unwrap().value, 0.0);
    }

    #[test]
    fn avg_bound_known_value() {
        // exponent = -2 * 64 * 0.05^2 / 0.2^2 = -8
        let r = avg_pool_tail_bound(8, 8, -0.1, 0.1, 0.05).unwrap();
        let expect = 2.0 * (-8.0f64).exp();
        assert!((r.value - expect).abs() < 1e-15);
        assert!(!r.saturated);
    }

    #[test]
    fn avg_bound_limits() {
        let big = avg_pool_tail_bound(8, 8, -0.1, 0.1, 1e6).unwrap();
        assert_eq!(big.value, 0.0);
        let tiny = avg_pool_tail_bound(8, 8, -0.1, 0.1, 1e-12).unwrap();
        assert_eq!(tiny.value, 1.0);
        assert!(tiny.saturated);
    }

    #[test]
    fn max_bound_known_value() {
        // gamma chosen so that 0.2 * sqrt(0.5 * ln 128) / gamma = 0.05
        let gamma = 0.2 * (0.5 * 128.0f64.ln()).sqrt() / 0.05;
        assert!((gamma - 6.230_27).abs() < 1e-5);
        let r = max_pool_tail_bound(8, 8, -0.1, 0.1, gamma).unwrap();
        assert!((r.value - 0.05).abs() < 1e-15, "{}", r.value);
    }

    #[test]
    fn max_bound_monotone_in_area() {
        let mut last = 0.0;
        for hw in [4usize, 8, 16, 32] {
            let v = max_pool_tail_bound(hw, hw, -0.1, 0.1, 5.0).unwrap().value;
            assert!(v > last);
            last = v;
        }
    }

    #[test]
    fn gamma_min_known_values() {
        let avg = avg_pool_gamma_min(8, 8, -0.1, 0.1, 0.05).unwrap().value;
        assert!((avg - 0.2 * ((2.0f64 / 0.05).ln() / 128.0).sqrt()).abs() < 1e-15);
        assert!((avg - 0.033_952_5).abs() < 1e-6);

        let max = max_pool_gamma_min(8, 8, -0.1, 0.1, 0.05).unwrap().value;
        assert!((max - 6.230_27).abs() < 1e-5);
    }

    #[test]
    fn gamma_min_by_bisection_oracle() {
        // The forward bound is monotone decreasing in gamma; bisect it to
        // 1e-10 and compare with the closed form.
        let (h, w, a, b, p) = (8, 8, -0.1, 0.1, 0.05);
        let f = |g: f64| avg_pool_tail_bound(h, w, a, b, g).unwrap().value;
        let (mut lo, mut hi) = (1e-12, 10.0);
        while hi - lo > 1e-10 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let closed = avg_pool_gamma_min(h, w, a, b, p).unwrap().value;
        assert!((closed - hi).abs() < 1e-9, "closed {closed}, bisect {hi}");
    }

    #[test]
    fn quadrupling_area_halves_avg_gamma() {
        let g8 = avg_pool_gamma_min(8, 8, -0.1, 0.1, 0.05).unwrap().value;
        let g16 = avg_pool_gamma_min(16, 16, -0.1, 0.1, 0.05).unwrap().value;
        assert!((g16 / g8 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn max_gamma_grows_with_area() {
        let g8 = max_pool_gamma_min(8, 8, -0.1, 0.1, 0.05).unwrap().value;
        let g16 = max_pool_gamma_min(16, 16, -0.1, 0.1, 0.05).unwrap().value;
        assert!(g16 > g8);
    }

    #[test]
    fn invalid_arguments_error() {
        assert!(avg_pool_tail_bound(8, 8, -0.1, 0.1, 0.0).is_err());
        assert!(avg_pool_tail_bound(8, 8, -0.1, 0.1, -1.0).is_err());
        assert!(max_pool_tail_bound(8, 8, -0.1, 0.1, 0.0).is_err());
        assert!(avg_pool_gamma_min(8, 8, -0.1, 0.1, 0.0).is_err());
        assert!(max_pool_gamma_min(8, 8, -0.1, 0.1, 1.5).is_err());
        assert!(avg_pool_tail_bound(8, 8, 0.2, -0.2, 0.1).is_err());
        assert!(avg_pool_tail_bound(0, 8, -0.1, 0.1, 0.1).is_err());
    }

    #[test]
    fn empirical_tail_examples() {
        assert_eq!(
            empirical_tail(&[0.1, 0.2, 0.3], 0.25).unwrap(),
            1.0 / 3.0
        );
        assert_eq!(empirical_tail(&[0.1, -0.2, 0.0], 0.0).unwrap(), 1.0);
        assert!(empirical_tail(&[], 0.1).is_err());
    }

    #[test]
    fn query_round_trip() {
        let q = BoundQuery {
            pooling: PoolKind::Average,
            height: 8,
            width: 8,
            a: -0.1,
            b: 0.1,
            given: GivenParam::P(0.05),
        };
        let out = evaluate_bound_query(&q).unwrap();
        let back = evaluate_bound_query(&BoundQuery {
            given: GivenParam::Gamma(out.gamma),
            ..q
        })
        .unwrap();
        assert!((back.p - 0.05).abs() < 1e-12);
    }
}
