//! Seeded Monte Carlo experiments: disturbance propagation through a conv
//! chain, paired initialization sweeps, prediction invariance under
//! perturbation, and an empirical Lipschitz lower bound.
//!
//! Every randomized quantity is drawn from its own [`RngStream`], derived
//! from the experiment seed plus a purpose tag and indices (weight ordinal,
//! input-size index, trial number). Trials therefore commute: runs are
//! bit-identical regardless of worker-thread count, and sweep arms that share
//! a seed see exactly the same perturbations.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    forward, forward_trace, global_pool, ArchSpec, LayerSpec, PoolKind,
};
use crate::stats::{argmax, max as stat_max, mean, median, sig6};
use crate::tensor::{
    init_weights, sample_uniform_perturbation, InitStrategy, RngStream, Tensor,
};

const TAG_WEIGHTS: u64 = 1;
const TAG_BASE_INPUT: u64 = 2;
const TAG_PERTURBATION: u64 = 3;
const TAG_INVARIANCE: u64 = 4;
const TAG_PROBE: u64 = 5;
const TAG_PAIRS: u64 = 6;

fn stream(seed: u64, tag: u64, payload: u64) -> RngStream {
    RngStream::new(seed, (tag << 56) | payload)
}

fn weight_stream(seed: u64, ordinal: usize) -> RngStream {
    stream(seed, TAG_WEIGHTS, ordinal as u64)
}

fn base_input_stream(seed: u64, size_idx: usize) -> RngStream {
    stream(seed, TAG_BASE_INPUT, size_idx as u64)
}

fn perturbation_stream(seed: u64, size_idx: usize, trial: usize) -> RngStream {
    stream(
        seed,
        TAG_PERTURBATION,
        ((size_idx as u64) << 40) | trial as u64,
    )
}

/// Whether to insert a ReLU after every convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationChoice {
    None,
    Relu,
}

/// Configuration of a disturbance experiment.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// The convolutional part; a trailing global pool is replaced by
    /// `pooling`, and `activation` controls ReLU insertion after each conv.
    pub arch: ArchSpec,
    pub init: InitStrategy,
    pub activation: ActivationChoice,
    pub epsilon: f64,
    pub trials: usize,
    pub base_seed: u64,
    pub input_sizes: Vec<(usize, usize)>,
    pub pooling: PoolKind,
}

/// Disturbance statistics of one traced layer at one input size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerDisturbance {
    pub input_h: usize,
    pub input_w: usize,
    /// Index into the traced conv-part layer list.
    pub layer: usize,
    pub kind: String,
    pub median_linf: f64,
    pub mean_linf: f64,
    pub max_linf: f64,
    /// Empirical min/max of the layer's disturbance entries over all trials;
    /// an under-estimate of the true support.
    pub est_a: f64,
    pub est_b: f64,
}

/// Pooled disturbance samples `max_c |P(g(x+d))_c - P(g(x))_c|` at one input
/// size; one sample per trial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PooledDisturbance {
    pub input_h: usize,
    pub input_w: usize,
    pub median: f64,
    pub mean: f64,
    pub max: f64,
    pub samples: Vec<f64>,
}

/// Full output of a disturbance experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceReport {
    pub pooling: PoolKind,
    pub epsilon: f64,
    pub trials: usize,
    pub base_seed: u64,
    pub layers: Vec<LayerDisturbance>,
    pub pooled: Vec<PooledDisturbance>,
}

impl DisturbanceReport {
    /// One row per (layer, input size, statistic); pooled statistics use the
    /// pseudo-layer `pooled`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("input_h,input_w,layer,kind,statistic,value\n");
        for l in &self.layers {
            for (stat, v) in [
                ("median_linf", l.median_linf),
                ("mean_linf", l.mean_linf),
                ("max_linf", l.max_linf),
                ("est_a", l.est_a),
                ("est_b", l.est_b),
            ] {
                out.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    l.input_h,
                    l.input_w,
                    l.layer,
                    l.kind,
                    stat,
                    sig6(v)
                ));
            }
        }
        for p in &self.pooled {
            for (stat, v) in [("median", p.median), ("mean", p.mean), ("max", p.max)] {
                out.push_str(&format!(
                    "{},{},pooled,pool,{},{}\n",
                    p.input_h, p.input_w, stat, sig6(v)
                ));
            }
        }
        out
    }

    /// Pooled sample list for the given input size, if present.
    pub fn pooled_samples(&self, h: usize, w: usize) -> Option<&[f64]> {
        self.pooled
            .iter()
            .find(|p| p.input_h == h && p.input_w == w)
            .map(|p| p.samples.as_slice())
    }
}

/// Builds the traced conv part: strips a trailing pool, inserts ReLUs when
/// requested, rejects layers a disturbance run cannot propagate through.
fn conv_part(config: &ExperimentConfig) -> Result<ArchSpec> {
    let mut layers = config.arch.layers.clone();
    if matches!(layers.last(), Some(LayerSpec::Pool { .. })) {
        layers.pop();
    }
    for l in &layers {
        if matches!(l, LayerSpec::Pool { .. } | LayerSpec::Linear { .. }) {
            return Err(Error::invalid(
                "arch",
                format!(
                    "disturbance runs trace the convolutional part only; found an interior {}",
                    l.kind_name()
                ),
            ));
        }
    }
    let layers = match config.activation {
        ActivationChoice::None => layers,
        ActivationChoice::Relu => layers
            .into_iter()
            .flat_map(|l| {
                let is_conv = matches!(l, LayerSpec::Conv(_));
                std::iter::once(l).chain(is_conv.then_some(LayerSpec::Relu))
            })
            .collect(),
    };
    // Stage markers are irrelevant for tracing; drop them rather than remap.
    ArchSpec::new(layers, vec![])
}

/// Initializes one weight tensor per parameterized layer of `arch`, each from
/// its own stream derived from `(seed, ordinal)`.
pub fn init_arch_weights(arch: &ArchSpec, strategy: InitStrategy, seed: u64) -> Result<Vec<Tensor>> {
    arch.param_layers()
        .enumerate()
        .map(|(ordinal, (_, layer))| {
            let shape: Vec<usize> = match layer {
                LayerSpec::Conv(spec) => vec![
                    spec.out_channels,
                    spec.in_channels,
                    spec.kernel,
                    spec.kernel,
                ],
                LayerSpec::Linear {
                    in_features,
                    out_features,
                } => vec![*out_features, *in_features],
                _ => unreachable!("param layers are conv or linear"),
            };
            init_weights(&shape, strategy, weight_stream(seed, ordinal))
        })
        .collect()
}

/// Seeded test image with entries drawn from `U[0, 1)`.
pub fn seeded_unit_input(channels: usize, height: usize, width: usize, s: RngStream) -> Tensor {
    let mut rng = s.rng();
    let n = channels * height * width;
    Tensor::from_parts(
        vec![channels, height, width],
        (0..n).map(|_| rng.random::<f64>()).collect(),
    )
}

/// Seeded probe inputs for invariance and Lipschitz estimation.
pub fn seeded_probe_inputs(
    channels: usize,
    height: usize,
    width: usize,
    count: usize,
    seed: u64,
) -> Vec<Tensor> {
    (0..count)
        .map(|i| seeded_unit_input(channels, height, width, stream(seed, TAG_PROBE, i as u64)))
        .collect()
}

/// One-pass linf / min / max of `a - b`.
fn diff_stats(a: &Tensor, b: &Tensor) -> (f64, f64, f64) {
    let mut linf = 0.0f64;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let d = x - y;
        linf = linf.max(d.abs());
        lo = lo.min(d);
        hi = hi.max(d);
    }
    (linf, lo, hi)
}

/// Per-channel pooled difference aggregated by the max over channels.
fn pooled_diff(perturbed: &Tensor, base_pool: &Tensor, kind: PoolKind) -> Result<f64> {
    let pool = global_pool(perturbed, kind)?;
    Ok(pool
        .data()
        .iter()
        .zip(base_pool.data())
        .fold(0.0f64, |m, (&a, &b)| m.max((a - b).abs())))
}

struct TrialStats {
    layer_linf: Vec<f64>,
    layer_lo: Vec<f64>,
    layer_hi: Vec<f64>,
    pooled_avg: f64,
    pooled_max: f64,
}

/// Runs the disturbance experiment once and reports it under both pooling
/// operators. The traced convolutional part does not depend on the pooling,
/// so the two reports share all per-layer statistics and differ only in the
/// pooled samples; `config.pooling` is ignored here.
pub fn run_disturbance_pair(
    config: &ExperimentConfig,
) -> Result<(DisturbanceReport, DisturbanceReport)> {
    if config.trials == 0 {
        return Err(Error::invalid("trials", "must be >= 1"));
    }
    if config.input_sizes.is_empty() {
        return Err(Error::invalid("input_sizes", "must be non-empty"));
    }
    let arch = conv_part(config)?;
    let weights = init_arch_weights(&arch, config.init, config.base_seed)?;
    let channels = arch
        .layers
        .iter()
        .find_map(|l| match l {
            LayerSpec::Conv(spec) => Some(spec.in_channels),
            _ => None,
        })
        .unwrap_or(1);

    let mut reports: [DisturbanceReport; 2] = [PoolKind::Average, PoolKind::Max].map(|pooling| {
        DisturbanceReport {
            pooling,
            epsilon: config.epsilon,
            trials: config.trials,
            base_seed: config.base_seed,
            layers: Vec::new(),
            pooled: Vec::new(),
        }
    });

    for (size_idx, &(h, w)) in config.input_sizes.iter().enumerate() {
        let base = seeded_unit_input(channels, h, w, base_input_stream(config.base_seed, size_idx));
        let base_trace = forward_trace(&arch, &weights, &base)?;
        for t in &base_trace {
            t.validate_finite()?;
        }
        let final_base = base_trace.last().unwrap_or(&base);
        let base_pools = [
            global_pool(final_base, PoolKind::Average)?,
            global_pool(final_base, PoolKind::Max)?,
        ];

        let trials: Vec<TrialStats> = (0..config.trials)
            .into_par_iter()
            .map(|t| -> Result<TrialStats> {
                let delta = sample_uniform_perturbation(
                    base.shape(),
                    config.epsilon,
                    perturbation_stream(config.base_seed, size_idx, t),
                )?;
                let perturbed = base.add(&delta)?;
                let trace = forward_trace(&arch, &weights, &perturbed)?;
                let mut layer_linf = Vec::with_capacity(trace.len());
                let mut layer_lo = Vec::with_capacity(trace.len());
                let mut layer_hi = Vec::with_capacity(trace.len());
                for (y, x) in trace.iter().zip(&base_trace) {
                    let (linf, lo, hi) = diff_stats(y, x);
                    layer_linf.push(linf);
                    layer_lo.push(lo);
                    layer_hi.push(hi);
                }
                let final_y = trace.last().unwrap_or(&perturbed);
                let stats = TrialStats {
                    layer_linf,
                    layer_lo,
                    layer_hi,
                    pooled_avg: pooled_diff(final_y, &base_pools[0], PoolKind::Average)?,
                    pooled_max: pooled_diff(final_y, &base_pools[1], PoolKind::Max)?,
                };
                // Non-finite activations surface as non-finite extrema, so
                // checking the per-trial statistics is enough to hold the
                // all-finite invariant without rescanning whole tensors.
                let finite = stats.pooled_avg.is_finite()
                    && stats.pooled_max.is_finite()
                    && stats
                        .layer_lo
                        .iter()
                        .chain(&stats.layer_hi)
                        .chain(&stats.layer_linf)
                        .all(|v| v.is_finite());
                if !finite {
                    return Err(Error::NonFinite { index: 0 });
                }
                Ok(stats)
            })
            .collect::<Result<_>>()?;

        for (layer, spec) in arch.layers.iter().enumerate() {
            let linfs: Vec<f64> = trials.iter().map(|t| t.layer_linf[layer]).collect();
            let row = LayerDisturbance {
                input_h: h,
                input_w: w,
                layer,
                kind: spec.kind_name().to_string(),
                median_linf: median(&linfs),
                mean_linf: mean(&linfs),
                max_linf: stat_max(&linfs),
                est_a: trials
                    .iter()
                    .map(|t| t.layer_lo[layer])
                    .fold(f64::INFINITY, f64::min),
                est_b: trials
                    .iter()
                    .map(|t| t.layer_hi[layer])
                    .fold(f64::NEG_INFINITY, f64::max),
            };
            reports[0].layers.push(row.clone());
            reports[1].layers.push(row);
        }
        for (which, report) in reports.iter_mut().enumerate() {
            let samples: Vec<f64> = trials
                .iter()
                .map(|t| if which == 0 { t.pooled_avg } else { t.pooled_max })
                .collect();
            report.pooled.push(PooledDisturbance {
                input_h: h,
                input_w: w,
                median: median(&samples),
                mean: mean(&samples),
                max: stat_max(&samples),
                samples,
            });
        }
    }
    let [avg, max] = reports;
    Ok((avg, max))
}

/// Monte Carlo disturbance propagation for the configured pooling operator.
///
/// For each trial, a fresh perturbation stream yields `delta`; the runner
/// traces `g(x + delta) - g(x)` through every layer and records the pooled
/// disturbance. Deterministic given `base_seed`, independent of thread count.
pub fn run_disturbance(config: &ExperimentConfig) -> Result<DisturbanceReport> {
    let (avg, max) = run_disturbance_pair(config)?;
    Ok(match config.pooling {
        PoolKind::Average => avg,
        PoolKind::Max => max,
    })
}

/// One arm of an initialization sweep.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepEntry {
    pub init: InitStrategy,
    pub activation: ActivationChoice,
    pub report: DisturbanceReport,
}

/// Runs [`run_disturbance`] for every (strategy, activation) combination.
///
/// All arms share the base seed and so see bit-identical perturbation
/// streams: comparisons across arms are paired.
pub fn run_init_sweep(
    base: &ExperimentConfig,
    strategies: &[InitStrategy],
    activations: &[ActivationChoice],
) -> Result<Vec<SweepEntry>> {
    let mut entries = Vec::with_capacity(strategies.len() * activations.len());
    for &init in strategies {
        for &activation in activations {
            let config = ExperimentConfig {
                init,
                activation,
                ..base.clone()
            };
            entries.push(SweepEntry {
                init,
                activation,
                report: run_disturbance(&config)?,
            });
        }
    }
    Ok(entries)
}

/// Invariance fraction at one perturbation budget.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvarianceEntry {
    pub epsilon: f64,
    pub fraction: f64,
}

/// Fraction of perturbed predictions that match the clean prediction, per
/// perturbation budget.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvarianceReport {
    pub trials: usize,
    pub inputs: usize,
    pub seed: u64,
    pub entries: Vec<InvarianceEntry>,
}

impl InvarianceReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epsilon,fraction\n");
        for e in &self.entries {
            out.push_str(&format!("{},{}\n", sig6(e.epsilon), sig6(e.fraction)));
        }
        out
    }
}

/// Measures prediction invariance: for each `epsilon` and each input,
/// `trials` perturbations are sampled and the argmax of the head output is
/// compared against the clean argmax (ties broken by the lowest index).
pub fn prediction_invariance(
    arch: &ArchSpec,
    weights: &[Tensor],
    inputs: &[Tensor],
    epsilons: &[f64],
    trials: usize,
    seed: u64,
) -> Result<InvarianceReport> {
    if !matches!(arch.layers.last(), Some(LayerSpec::Linear { .. })) {
        return Err(Error::MissingHead);
    }
    if inputs.is_empty() {
        return Err(Error::EmptyInput("prediction_invariance inputs"));
    }
    if trials == 0 {
        return Err(Error::invalid("trials", "must be >= 1"));
    }
    let base_preds: Vec<usize> = inputs
        .iter()
        .map(|x| Ok(argmax(forward(arch, weights, x)?.data())))
        .collect::<Result<_>>()?;

    let mut entries = Vec::with_capacity(epsilons.len());
    for (eps_idx, &epsilon) in epsilons.iter().enumerate() {
        let unchanged: usize = (0..inputs.len() * trials)
            .into_par_iter()
            .map(|flat| -> Result<usize> {
                let (input_idx, trial) = (flat / trials, flat % trials);
                let payload =
                    ((eps_idx as u64) << 40) | ((input_idx as u64) << 24) | trial as u64;
                let delta = sample_uniform_perturbation(
                    inputs[input_idx].shape(),
                    epsilon,
                    stream(seed, TAG_INVARIANCE, payload),
                )?;
                let out = forward(arch, weights, &inputs[input_idx].add(&delta)?)?;
                Ok((argmax(out.data()) == base_preds[input_idx]) as usize)
            })
            .try_reduce(|| 0, |a, b| Ok(a + b))?;
        entries.push(InvarianceEntry {
            epsilon,
            fraction: unchanged as f64 / (inputs.len() * trials) as f64,
        });
    }
    Ok(InvarianceReport {
        trials,
        inputs: inputs.len(),
        seed,
        entries,
    })
}

/// Empirical Lipschitz lower bound over sampled probe pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipschitzEstimate {
    pub lower_bound: f64,
    /// Indices into the probe list of the pair achieving the bound.
    pub argmax_pair: (usize, usize),
    pub pairs_sampled: usize,
}

impl LipschitzEstimate {
    pub fn to_csv(&self) -> String {
        format!(
            "lower_bound,pair_first,pair_second,pairs_sampled\n{},{},{},{}\n",
            sig6(self.lower_bound),
            self.argmax_pair.0,
            self.argmax_pair.1,
            self.pairs_sampled
        )
    }
}

/// Max over sampled probe pairs of `linf(f(x) - f(x')) / linf(x - x')`,
/// skipping coincident pairs. Errors if every sampled pair coincides.
pub fn lipschitz_lower_bound(
    arch: &ArchSpec,
    weights: &[Tensor],
    probe_inputs: &[Tensor],
    pair_count: usize,
    seed: u64,
) -> Result<LipschitzEstimate> {
    if pair_count == 0 {
        return Err(Error::invalid("pair_count", "must be >= 1"));
    }
    if probe_inputs.is_empty() {
        return Err(Error::EmptyInput("lipschitz probe inputs"));
    }
    let outputs: Vec<Tensor> = probe_inputs
        .iter()
        .map(|x| forward(arch, weights, x))
        .collect::<Result<_>>()?;

    let mut rng = stream(seed, TAG_PAIRS, 0).rng();
    let n = probe_inputs.len();
    let mut best: Option<(f64, (usize, usize))> = None;
    for _ in 0..pair_count {
        let i = rng.random_range(0..n);
        let j = rng.random_range(0..n);
        let denom = probe_inputs[i].sub(&probe_inputs[j])?.linf_norm();
        if denom == 0.0 {
            continue;
        }
        let ratio = outputs[i].sub(&outputs[j])?.linf_norm() / denom;
        if best.map(|(b, _)| ratio > b).unwrap_or(true) {
            best = Some((ratio, (i, j)));
        }
    }
    let (lower_bound, argmax_pair) = best.ok_or(Error::CoincidentPairs)?;
    Ok(LipschitzEstimate {
        lower_bound,
        argmax_pair,
        pairs_sampled: pair_count,
    })
}
