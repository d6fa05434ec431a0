//! Static architecture analysis: receptive fields, a flops/memory cost
//! model, stride-configuration rewriting, and detection of the output
//! redundancy introduced by nearest-neighbor upsampling.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{output_dims, ArchSpec, LayerSpec};
use crate::stats::sig6;

/// Per-stage stride list in the paper-style `s1-s2-...` notation.
///
/// Parses from both `"1,2,2,2"` and `"1-2-2-2"`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrideConfig {
    pub strides: Vec<usize>,
}

impl StrideConfig {
    pub fn new(strides: Vec<usize>) -> Self {
        StrideConfig { strides }
    }

    pub fn notation(&self) -> String {
        self.strides
            .iter()
            .map(|s| s.to_string())
            .collect::<Vec<_>>()
            .join("-")
    }
}

impl FromStr for StrideConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let strides = s
            .split(|c| c == ',' || c == '-')
            .map(|tok| {
                tok.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::invalid("strides", format!("bad stride token `{tok}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        if strides.is_empty() {
            return Err(Error::invalid("strides", "empty stride config"));
        }
        Ok(StrideConfig { strides })
    }
}

/// Returns a copy of `arch` with the first convolution of stage `i` set to
/// stride `config.strides[i]`; every other layer is untouched.
pub fn rewrite_strides(arch: &ArchSpec, config: &StrideConfig) -> Result<ArchSpec> {
    arch.validate()?;
    if config.strides.len() != arch.stage_markers.len() {
        return Err(Error::StrideConfigLength {
            given: config.strides.len(),
            stages: arch.stage_markers.len(),
        });
    }
    if let Some(bad) = config.strides.iter().find(|&&s| s == 0) {
        return Err(Error::invalid("strides", format!("stride {bad} must be >= 1")));
    }
    let mut out = arch.clone();
    for (&marker, &stride) in arch.stage_markers.iter().zip(&config.strides) {
        match &mut out.layers[marker] {
            LayerSpec::Conv(spec) => spec.stride = stride,
            _ => unreachable!("validated marker points at conv"),
        }
    }
    Ok(out)
}

/// One row of a receptive-field report. `layer` counts convolution layers
/// only, starting at 1; `r` is the receptive field and `j` the cumulative
/// jump after this convolution, both in input pixels (fractional after
/// upsampling).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RfLayer {
    pub layer: usize,
    pub receptive_field: f64,
    pub jump: f64,
    pub out_height: usize,
    pub out_width: usize,
}

/// Receptive-field growth along an architecture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RFReport {
    pub input_size: usize,
    pub layers: Vec<RfLayer>,
    /// First convolution (1-based) whose receptive field covers the whole
    /// input, if any does.
    pub global_layer: Option<usize>,
}

/// Receptive field of each convolution for a square input.
///
/// Uses the standard recurrence `r_l = r_{l-1} + (k_l - 1) * j_{l-1}`,
/// `j_l = j_{l-1} * s_l`, starting from `r = j = 1`. Activations leave both
/// untouched; upsampling by `c` divides the jump by `c`.
pub fn receptive_field(arch: &ArchSpec, input_size: usize) -> Result<RFReport> {
    arch.validate()?;
    if input_size == 0 {
        return Err(Error::invalid("input_size", "must be >= 1"));
    }
    let mut r = 1.0f64;
    let mut j = 1.0f64;
    let (mut h, mut w) = (input_size, input_size);
    let mut rows = Vec::new();
    let mut conv_ordinal = 0usize;
    let mut global_layer = None;

    for (index, layer) in arch.layers.iter().enumerate() {
        match layer {
            LayerSpec::Conv(spec) => {
                conv_ordinal += 1;
                let (ho, wo) = output_dims(h, w, spec).map_err(|e| Error::Layer {
                    index,
                    kind: "conv",
                    reason: e.to_string(),
                })?;
                r += (spec.kernel - 1) as f64 * j;
                j *= spec.stride as f64;
                h = ho;
                w = wo;
                rows.push(RfLayer {
                    layer: conv_ordinal,
                    receptive_field: r,
                    jump: j,
                    out_height: h,
                    out_width: w,
                });
                if global_layer.is_none() && r >= input_size as f64 {
                    global_layer = Some(conv_ordinal);
                }
            }
            LayerSpec::Upsample { scale, .. } => {
                if *scale == 0 {
                    return Err(Error::invalid("scale", "must be >= 1"));
                }
                j /= *scale as f64;
                h *= scale;
                w *= scale;
            }
            LayerSpec::Identity | LayerSpec::Relu => {}
            // Global pooling and the linear head terminate the spatial part.
            LayerSpec::Pool { .. } | LayerSpec::Linear { .. } => break,
        }
    }
    Ok(RFReport {
        input_size,
        layers: rows,
        global_layer,
    })
}

impl RFReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,receptive_field,jump,out_height,out_width\n");
        for row in &self.layers {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                row.layer,
                sig6(row.receptive_field),
                sig6(row.jump),
                row.out_height,
                row.out_width
            ));
        }
        out
    }
}

/// Cost of one layer under the analytical model: one multiply-accumulate
/// counts as 2 flops; activations, pooling and upsampling cost one op per
/// output element; activation memory is the output element count at 8 bytes
/// each.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerCost {
    pub layer: usize,
    pub kind: String,
    pub flops: u64,
    pub activation_memory_bytes: u64,
    pub param_count: u64,
    pub out_channels: usize,
    pub out_height: usize,
    pub out_width: usize,
}

/// Inference cost of an architecture on a square input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub input_size: usize,
    pub layers: Vec<LayerCost>,
    pub total_flops: u64,
    pub total_activation_memory_bytes: u64,
    pub total_param_count: u64,
    /// Activations plus parameters, both at 8 bytes per element.
    pub total_memory_bytes: u64,
}

/// Flops, activation memory and parameter counts per layer, with totals.
///
/// The input channel count is taken from the first convolution (3 if the
/// architecture has none).
pub fn cost(arch: &ArchSpec, input_size: usize) -> Result<CostReport> {
    let shapes = shape_trace(arch, input_size)?;
    let mut layers = Vec::with_capacity(shapes.len());
    for row in &shapes {
        let elems = (row.out_channels * row.out_height * row.out_width) as u64;
        let (flops, params) = match &arch.layers[row.layer] {
            LayerSpec::Conv(spec) => {
                let k2 = (spec.kernel * spec.kernel) as u64;
                let per_out = 2 * spec.in_channels as u64 * k2;
                (
                    per_out * spec.out_channels as u64
                        * (row.out_height * row.out_width) as u64,
                    spec.out_channels as u64 * spec.in_channels as u64 * k2,
                )
            }
            LayerSpec::Linear {
                in_features,
                out_features,
            } => (
                2 * (*in_features as u64) * (*out_features as u64),
                (*in_features as u64) * (*out_features as u64),
            ),
            LayerSpec::Identity | LayerSpec::Relu | LayerSpec::Pool { .. }
            | LayerSpec::Upsample { .. } => (elems, 0),
        };
        layers.push(LayerCost {
            layer: row.layer,
            kind: arch.layers[row.layer].kind_name().to_string(),
            flops,
            activation_memory_bytes: 8 * elems,
            param_count: params,
            out_channels: row.out_channels,
            out_height: row.out_height,
            out_width: row.out_width,
        });
    }
    let total_flops = layers.iter().map(|l| l.flops).sum();
    let total_activation_memory_bytes = layers.iter().map(|l| l.activation_memory_bytes).sum();
    let total_param_count: u64 = layers.iter().map(|l| l.param_count).sum();
    Ok(CostReport {
        input_size,
        layers,
        total_flops,
        total_activation_memory_bytes,
        total_param_count,
        total_memory_bytes: total_activation_memory_bytes + 8 * total_param_count,
    })
}

impl CostReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "layer,kind,flops,activation_memory_bytes,param_count,out_channels,out_height,out_width\n",
        );
        for row in &self.layers {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                row.layer,
                row.kind,
                row.flops,
                row.activation_memory_bytes,
                row.param_count,
                row.out_channels,
                row.out_height,
                row.out_width
            ));
        }
        out.push_str(&format!(
            "total,,{},{},{},,,\n",
            self.total_flops, self.total_activation_memory_bytes, self.total_param_count
        ));
        out
    }
}

/// Output shape of one layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DimsRow {
    pub layer: usize,
    pub kind: String,
    pub out_channels: usize,
    pub out_height: usize,
    pub out_width: usize,
}

/// Feature dimensions along an architecture for a square input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DimsReport {
    pub input_size: usize,
    pub layers: Vec<DimsRow>,
}

/// Per-layer output dimensions for a square input.
pub fn dims_report(arch: &ArchSpec, input_size: usize) -> Result<DimsReport> {
    Ok(DimsReport {
        input_size,
        layers: shape_trace(arch, input_size)?,
    })
}

impl DimsReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,kind,out_channels,out_height,out_width\n");
        for row in &self.layers {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                row.layer, row.kind, row.out_channels, row.out_height, row.out_width
            ));
        }
        out
    }
}

/// Walks output shapes through the layer list without touching any data.
fn shape_trace(arch: &ArchSpec, input_size: usize) -> Result<Vec<DimsRow>> {
    arch.validate()?;
    if input_size == 0 {
        return Err(Error::invalid("input_size", "must be >= 1"));
    }
    let mut c = arch
        .layers
        .iter()
        .find_map(|l| match l {
            LayerSpec::Conv(spec) => Some(spec.in_channels),
            _ => None,
        })
        .unwrap_or(3);
    let (mut h, mut w) = (input_size, input_size);
    let mut rows = Vec::with_capacity(arch.layers.len());
    for (index, layer) in arch.layers.iter().enumerate() {
        match layer {
            LayerSpec::Conv(spec) => {
                if spec.in_channels != c {
                    return Err(Error::Layer {
                        index,
                        kind: "conv",
                        reason: format!(
                            "expects {} input channels but receives {c}",
                            spec.in_channels
                        ),
                    });
                }
                let (ho, wo) = output_dims(h, w, spec).map_err(|e| Error::Layer {
                    index,
                    kind: "conv",
                    reason: e.to_string(),
                })?;
                c = spec.out_channels;
                h = ho;
                w = wo;
            }
            LayerSpec::Identity | LayerSpec::Relu => {}
            LayerSpec::Pool { .. } => {
                h = 1;
                w = 1;
            }
            LayerSpec::Upsample { scale, .. } => {
                if *scale == 0 {
                    return Err(Error::invalid("scale", "must be >= 1"));
                }
                h *= scale;
                w *= scale;
            }
            LayerSpec::Linear {
                in_features,
                out_features,
            } => {
                if c * h * w != *in_features {
                    return Err(Error::Layer {
                        index,
                        kind: "linear",
                        reason: format!(
                            "expects {in_features} features but receives {}",
                            c * h * w
                        ),
                    });
                }
                c = *out_features;
                h = 1;
                w = 1;
            }
        }
        rows.push(DimsRow {
            layer: index,
            kind: layer.kind_name().to_string(),
            out_channels: c,
            out_height: h,
            out_width: w,
        });
    }
    Ok(rows)
}

/// Output-position duplication caused by nearest-neighbor upsampling.
///
/// For a 1D input of `input_len` values scaled by `scale` and convolved with
/// a stride-1 valid kernel of width `kernel`, output positions whose windows
/// read the same input indices are equal for every possible filter.
/// Positions are 1-based; `duplicate_groups` lists the groups of size >= 2.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RedundancyProfile {
    pub scale: usize,
    pub kernel: usize,
    pub input_len: usize,
    pub apparent_dims: usize,
    pub distinct_dims: usize,
    pub duplicate_groups: Vec<Vec<usize>>,
}

/// Predicts which outputs of nearest-upsample-then-convolve coincide.
pub fn redundancy_profile(scale: usize, kernel: usize, input_len: usize) -> Result<RedundancyProfile> {
    if scale == 0 {
        return Err(Error::invalid("scale", "must be >= 1"));
    }
    if kernel == 0 {
        return Err(Error::invalid("kernel", "must be >= 1"));
    }
    if input_len == 0 {
        return Err(Error::invalid("input_len", "must be >= 1"));
    }
    let up_len = input_len * scale;
    if kernel > up_len {
        return Err(Error::KernelTooLarge {
            kernel,
            upsampled: up_len,
        });
    }
    let apparent = up_len - kernel + 1;
    // Window i reads input indices floor((i+t)/scale) for t in 0..kernel.
    // Windows with identical index patterns produce identical outputs for
    // every filter; patterns are monotone in i, so duplicates form
    // consecutive runs.
    let pattern = |i: usize| -> Vec<usize> { (0..kernel).map(|t| (i + t) / scale).collect() };
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut run: Vec<usize> = vec![1];
    let mut prev = pattern(0);
    for i in 1..apparent {
        let cur = pattern(i);
        if cur == prev {
            run.push(i + 1);
        } else {
            groups.push(std::mem::replace(&mut run, vec![i + 1]));
            prev = cur;
        }
    }
    groups.push(run);
    let distinct = groups.len();
    Ok(RedundancyProfile {
        scale,
        kernel,
        input_len,
        apparent_dims: apparent,
        distinct_dims: distinct,
        duplicate_groups: groups.into_iter().filter(|g| g.len() >= 2).collect(),
    })
}

impl RedundancyProfile {
    /// CSV form: one row per output position with the 1-based index of the
    /// distinct window it belongs to.
    pub fn to_csv(&self) -> String {
        let mut group_of = vec![0usize; self.apparent_dims + 1];
        let mut next = 1usize;
        let mut covered = vec![false; self.apparent_dims + 1];
        for g in &self.duplicate_groups {
            for &p in g {
                covered[p] = true;
            }
        }
        let mut gi = 0usize;
        let mut pos = 1usize;
        while pos <= self.apparent_dims {
            if covered[pos] {
                let g = &self.duplicate_groups[gi];
                for &p in g {
                    group_of[p] = next;
                }
                pos += g.len();
                gi += 1;
            } else {
                group_of[pos] = next;
                pos += 1;
            }
            next += 1;
        }
        let mut out = String::from("position,distinct_window\n");
        for p in 1..=self.apparent_dims {
            out.push_str(&format!("{},{}\n", p, group_of[p]));
        }
        out
    }
}
