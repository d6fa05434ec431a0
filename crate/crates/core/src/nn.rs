//! Forward-only network layers: strided cross-correlation, activations,
//! global pooling, interpolated upsampling, and a linear head.
//!
//! Convolution is plain cross-correlation (no kernel flip) without bias
//! terms, and pooling is always global: each channel's full map reduces to a
//! single scalar. Output feature dimensions follow
//! `H = floor((h_in + 2p - k) / s + 1)` with symmetric zero padding.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Global pooling operator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolKind {
    Average,
    Max,
}

impl PoolKind {
    pub fn name(self) -> &'static str {
        match self {
            PoolKind::Average => "average",
            PoolKind::Max => "max",
        }
    }
}

/// Interpolation mode for integer-scale upsampling.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpsampleMode {
    Nearest,
    Bilinear,
}

/// Parameters of a square-kernel strided convolution layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLayerSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

/// One layer of an architecture.
///
/// The JSON form is internally tagged: `{"type": "conv", ...}`,
/// `{"type": "relu"}`, `{"type": "pool", "kind": "average"}`,
/// `{"type": "upsample", "mode": "nearest", "scale": 2}`,
/// `{"type": "linear", "in_features": 64, "out_features": 10}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum LayerSpec {
    Conv(ConvLayerSpec),
    Identity,
    Relu,
    Pool { kind: PoolKind },
    Upsample { mode: UpsampleMode, scale: usize },
    Linear { in_features: usize, out_features: usize },
}

impl LayerSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerSpec::Conv(_) => "conv",
            LayerSpec::Identity => "identity",
            LayerSpec::Relu => "relu",
            LayerSpec::Pool { .. } => "pool",
            LayerSpec::Upsample { .. } => "upsample",
            LayerSpec::Linear { .. } => "linear",
        }
    }

    /// Does this layer consume a weight tensor in `forward`?
    pub fn takes_weights(&self) -> bool {
        matches!(self, LayerSpec::Conv(_) | LayerSpec::Linear { .. })
    }
}

/// Declarative layer list plus the indices of the first convolution of each
/// stride stage (the paper-style `s1-s2-...` notation addresses exactly those
/// convolutions).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub layers: Vec<LayerSpec>,
    pub stage_markers: Vec<usize>,
}

impl ArchSpec {
    pub fn new(layers: Vec<LayerSpec>, stage_markers: Vec<usize>) -> Result<Self> {
        let arch = ArchSpec {
            layers,
            stage_markers,
        };
        arch.validate()?;
        Ok(arch)
    }

    /// Checks that stage markers are strictly increasing and each one points
    /// at a convolution layer.
    pub fn validate(&self) -> Result<()> {
        let mut prev: Option<usize> = None;
        for &m in &self.stage_markers {
            if let Some(p) = prev {
                if m <= p {
                    return Err(Error::MalformedArch(format!(
                        "stage markers must be strictly increasing, got {:?}",
                        self.stage_markers
                    )));
                }
            }
            match self.layers.get(m) {
                Some(LayerSpec::Conv(_)) => {}
                Some(other) => {
                    return Err(Error::MalformedArch(format!(
                        "stage marker {m} points at a {} layer, expected conv",
                        other.kind_name()
                    )));
                }
                None => {
                    return Err(Error::MalformedArch(format!(
                        "stage marker {m} out of range ({} layers)",
                        self.layers.len()
                    )));
                }
            }
            prev = Some(m);
        }
        Ok(())
    }

    /// Number of stride stages.
    pub fn stage_count(&self) -> usize {
        self.stage_markers.len()
    }

    /// Indices and specs of the layers that consume weights, in order.
    pub fn param_layers(&self) -> impl Iterator<Item = (usize, &LayerSpec)> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.takes_weights())
    }

    pub fn from_json_str(json: &str) -> Result<Self> {
        let arch: ArchSpec =
            serde_json::from_str(json).map_err(|e| Error::MalformedArch(e.to_string()))?;
        arch.validate()?;
        Ok(arch)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("arch spec serializes")
    }
}

/// Output feature dimensions of a convolution:
/// `floor((n + 2p - k) / s + 1)` per axis. Errors when the kernel does not
/// fit even once.
pub fn output_dims(h_in: usize, w_in: usize, spec: &ConvLayerSpec) -> Result<(usize, usize)> {
    if spec.kernel == 0 {
        return Err(Error::invalid("kernel", "must be >= 1"));
    }
    if spec.stride == 0 {
        return Err(Error::invalid("stride", "must be >= 1"));
    }
    if h_in == 0 || w_in == 0 {
        return Err(Error::invalid("input", "spatial dims must be >= 1"));
    }
    let dim = |n: usize| -> Result<usize> {
        let span = n as i64 + 2 * spec.padding as i64 - spec.kernel as i64;
        if span < 0 {
            return Err(Error::InvalidOutputDims {
                h: h_in,
                w: w_in,
                k: spec.kernel,
                s: spec.stride,
                p: spec.padding,
            });
        }
        Ok(span as usize / spec.stride + 1)
    };
    Ok((dim(h_in)?, dim(w_in)?))
}

/// Strided cross-correlation of a `[C, H, W]` input with a `[O, C, k, k]`
/// filter bank and symmetric zero padding.
///
/// Accumulation order per output element is input-channel, then kernel row,
/// then kernel column, so results are reproducible bit-for-bit across the
/// fast and naive paths.
pub fn conv2d(input: &Tensor, weights: &Tensor, spec: &ConvLayerSpec) -> Result<Tensor> {
    let [c_in, h_in, w_in] = expect_rank3(input, "conv input")?;
    if c_in != spec.in_channels {
        return Err(Error::invalid(
            "input",
            format!(
                "has {c_in} channels but layer expects {}",
                spec.in_channels
            ),
        ));
    }
    match *weights.shape() {
        [o, i, kh, kw]
            if o == spec.out_channels
                && i == spec.in_channels
                && kh == spec.kernel
                && kw == spec.kernel => {}
        ref other => {
            return Err(Error::invalid(
                "weights",
                format!(
                    "shape {other:?} does not match layer (expected [{}, {}, {}, {}])",
                    spec.out_channels, spec.in_channels, spec.kernel, spec.kernel
                ),
            ));
        }
    }
    let (h_out, w_out) = output_dims(h_in, w_in, spec)?;

    let k = spec.kernel;
    let s = spec.stride;
    let p = spec.padding as i64;
    let x = input.data();
    let w = weights.data();
    let mut out = vec![0.0f64; spec.out_channels * h_out * w_out];

    for oc in 0..spec.out_channels {
        let out_plane = &mut out[oc * h_out * w_out..][..h_out * w_out];
        for ic in 0..c_in {
            let plane = &x[ic * h_in * w_in..][..h_in * w_in];
            let filt = &w[(oc * c_in + ic) * k * k..][..k * k];
            if s == 1 && k == 3 {
                conv_plane_s1_k3(out_plane, plane, filt, p, h_in, w_in, h_out, w_out);
                continue;
            }
            for oh in 0..h_out {
                let out_row = &mut out_plane[oh * w_out..][..w_out];
                for kh in 0..k {
                    let ih = (oh * s) as i64 + kh as i64 - p;
                    if ih < 0 || ih >= h_in as i64 {
                        continue;
                    }
                    let in_row = &plane[ih as usize * w_in..][..w_in];
                    let filt_row = &filt[kh * k..][..k];
                    if s == 1 {
                        // One AXPY per tap over the valid output span.
                        for (kw, &wv) in filt_row.iter().enumerate() {
                            let shift = kw as i64 - p;
                            let lo = (-shift).max(0) as usize;
                            let hi = (w_in as i64 - shift).min(w_out as i64).max(lo as i64) as usize;
                            if lo >= hi {
                                continue;
                            }
                            let src = (lo as i64 + shift) as usize;
                            for (o, &v) in out_row[lo..hi]
                                .iter_mut()
                                .zip(&in_row[src..src + (hi - lo)])
                            {
                                *o += wv * v;
                            }
                        }
                    } else {
                        for (kw, &wv) in filt_row.iter().enumerate() {
                            for (ow, o) in out_row.iter_mut().enumerate() {
                                let iw = (ow * s) as i64 + kw as i64 - p;
                                if iw >= 0 && iw < w_in as i64 {
                                    *o += wv * in_row[iw as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(
        vec![spec.out_channels, h_out, w_out],
        out,
    ))
}

/// Stride-1, k = 3 plane pass: accumulates one input channel's contribution
/// into the whole output plane.
///
/// Interior output rows (all three kernel rows in bounds) take a fused
/// nine-tap sweep; boundary rows fall back to per-tap handling. Taps are
/// applied as separate rounded additions in (kh, kw) order — the exact
/// floating-point sequence of the naive definition — so results are
/// bit-identical to the quadruple-loop form.
#[inline]
#[allow(clippy::too_many_arguments)]
fn conv_plane_s1_k3(
    out_plane: &mut [f64],
    plane: &[f64],
    filt: &[f64],
    p: i64,
    h_in: usize,
    w_in: usize,
    h_out: usize,
    w_out: usize,
) {
    // Columns where all three column taps are in bounds.
    let full_lo = (p.max(0) as usize).min(w_out);
    let full_hi = (w_in as i64 + p - 2).clamp(full_lo as i64, w_out as i64) as usize;
    let n = full_hi - full_lo;
    let base = (full_lo as i64 - p) as usize;

    // Per-element fallback applying the valid subset of taps in (kh, kw)
    // order.
    let edge_cell = |out_row: &mut [f64], oh: usize, ow: usize| {
        let mut v = out_row[ow];
        for kh in 0..3usize {
            let ih = oh as i64 + kh as i64 - p;
            if ih < 0 || ih >= h_in as i64 {
                continue;
            }
            let r = &plane[ih as usize * w_in..][..w_in];
            for kw in 0..3usize {
                let iw = ow as i64 + kw as i64 - p;
                if iw >= 0 && iw < w_in as i64 {
                    v += filt[kh * 3 + kw] * r[iw as usize];
                }
            }
        }
        out_row[ow] = v;
    };

    for oh in 0..h_out {
        let out_row = &mut out_plane[oh * w_out..][..w_out];
        let ih0 = oh as i64 - p;
        let rows_valid = ih0 >= 0 && ih0 + 2 < h_in as i64;
        for ow in 0..full_lo {
            edge_cell(out_row, oh, ow);
        }
        if n > 0 {
            if rows_valid {
                let start = ih0 as usize * w_in + base;
                let r0 = &plane[start..start + n + 2];
                let r1 = &plane[w_in + start..w_in + start + n + 2];
                let r2 = &plane[2 * w_in + start..2 * w_in + start + n + 2];
                let dst = &mut out_row[full_lo..full_hi];
                for i in 0..n {
                    let mut v = dst[i];
                    v += filt[0] * r0[i];
                    v += filt[1] * r0[i + 1];
                    v += filt[2] * r0[i + 2];
                    v += filt[3] * r1[i];
                    v += filt[4] * r1[i + 1];
                    v += filt[5] * r1[i + 2];
                    v += filt[6] * r2[i];
                    v += filt[7] * r2[i + 1];
                    v += filt[8] * r2[i + 2];
                    dst[i] = v;
                }
            } else {
                for kh in 0..3usize {
                    let ih = ih0 + kh as i64;
                    if ih < 0 || ih >= h_in as i64 {
                        continue;
                    }
                    let start = ih as usize * w_in + base;
                    let r0 = &plane[start..start + n + 2];
                    let (w0, w1, w2) = (filt[kh * 3], filt[kh * 3 + 1], filt[kh * 3 + 2]);
                    let dst = &mut out_row[full_lo..full_hi];
                    for i in 0..n {
                        let mut v = dst[i];
                        v += w0 * r0[i];
                        v += w1 * r0[i + 1];
                        v += w2 * r0[i + 2];
                        dst[i] = v;
                    }
                }
            }
        }
        for ow in full_hi..w_out {
            edge_cell(out_row, oh, ow);
        }
    }
}

/// Reduces each channel of a `[C, H, W]` map to one scalar: the mean for
/// average pooling, the maximum for max pooling. Output shape is `[C]`.
pub fn global_pool(input: &Tensor, kind: PoolKind) -> Result<Tensor> {
    let [c, h, w] = expect_rank3(input, "pool input")?;
    let plane = h * w;
    let x = input.data();
    let data: Vec<f64> = (0..c)
        .map(|ch| {
            let map = &x[ch * plane..][..plane];
            match kind {
                PoolKind::Average => map.iter().sum::<f64>() / plane as f64,
                PoolKind::Max => map.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v)),
            }
        })
        .collect();
    Ok(Tensor::from_parts(vec![c], data))
}

/// Elementwise ReLU.
pub fn relu(input: &Tensor) -> Tensor {
    Tensor::from_parts(
        input.shape().to_vec(),
        input.data().iter().map(|&v| v.max(0.0)).collect(),
    )
}

/// Integer-scale spatial upsampling of a `[C, H, W]` map.
///
/// Nearest replicates each pixel into a `scale x scale` block. Bilinear maps
/// destination pixel centers back with `src = (dst + 0.5) / scale - 0.5`,
/// clamped at the edges.
pub fn upsample(input: &Tensor, mode: UpsampleMode, scale: usize) -> Result<Tensor> {
    if scale == 0 {
        return Err(Error::invalid("scale", "must be >= 1"));
    }
    let [c, h, w] = expect_rank3(input, "upsample input")?;
    let (ho, wo) = (h * scale, w * scale);
    let x = input.data();
    let mut out = vec![0.0f64; c * ho * wo];
    match mode {
        UpsampleMode::Nearest => {
            for ch in 0..c {
                let plane = &x[ch * h * w..][..h * w];
                for oh in 0..ho {
                    let src_row = &plane[(oh / scale) * w..][..w];
                    let dst_row = &mut out[(ch * ho + oh) * wo..][..wo];
                    for (ow, d) in dst_row.iter_mut().enumerate() {
                        *d = src_row[ow / scale];
                    }
                }
            }
        }
        UpsampleMode::Bilinear => {
            let map = |dst: usize, len: usize| -> (usize, usize, f64) {
                let src = ((dst as f64 + 0.5) / scale as f64 - 0.5)
                    .clamp(0.0, (len - 1) as f64);
                let i0 = src.floor() as usize;
                let i1 = (i0 + 1).min(len - 1);
                (i0, i1, src - i0 as f64)
            };
            for ch in 0..c {
                let plane = &x[ch * h * w..][..h * w];
                for oh in 0..ho {
                    let (y0, y1, fy) = map(oh, h);
                    let dst_row = &mut out[(ch * ho + oh) * wo..][..wo];
                    for (ow, d) in dst_row.iter_mut().enumerate() {
                        let (x0, x1, fx) = map(ow, w);
                        let v00 = plane[y0 * w + x0];
                        let v01 = plane[y0 * w + x1];
                        let v10 = plane[y1 * w + x0];
                        let v11 = plane[y1 * w + x1];
                        *d = v00 * (1.0 - fy) * (1.0 - fx)
                            + v01 * (1.0 - fy) * fx
                            + v10 * fy * (1.0 - fx)
                            + v11 * fy * fx;
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![c, ho, wo], out))
}

/// Matrix-vector product of a `[out, in]` weight with a flat `[in]` vector.
fn linear(input: &Tensor, weights: &Tensor, in_features: usize, out_features: usize) -> Result<Tensor> {
    if input.shape() != [in_features] {
        return Err(Error::invalid(
            "input",
            format!(
                "linear head expects a flat [{in_features}] vector, got {:?}",
                input.shape()
            ),
        ));
    }
    if weights.shape() != [out_features, in_features] {
        return Err(Error::invalid(
            "weights",
            format!(
                "linear weights must be [{out_features}, {in_features}], got {:?}",
                weights.shape()
            ),
        ));
    }
    let x = input.data();
    let w = weights.data();
    let data: Vec<f64> = (0..out_features)
        .map(|o| {
            w[o * in_features..][..in_features]
                .iter()
                .zip(x)
                .map(|(&a, &b)| a * b)
                .sum()
        })
        .collect();
    Ok(Tensor::from_parts(vec![out_features], data))
}

fn apply_layer(layer: &LayerSpec, weights: Option<&Tensor>, input: &Tensor) -> Result<Tensor> {
    match layer {
        LayerSpec::Conv(spec) => conv2d(input, weights.expect("conv has weights"), spec),
        LayerSpec::Identity => Ok(input.clone()),
        LayerSpec::Relu => Ok(relu(input)),
        LayerSpec::Pool { kind } => global_pool(input, *kind),
        LayerSpec::Upsample { mode, scale } => upsample(input, *mode, *scale),
        LayerSpec::Linear {
            in_features,
            out_features,
        } => linear(input, weights.expect("linear has weights"), *in_features, *out_features),
    }
}

fn validate_weights(arch: &ArchSpec, weights: &[Tensor]) -> Result<()> {
    arch.validate()?;
    let expected = arch.param_layers().count();
    if weights.len() != expected {
        return Err(Error::invalid(
            "weights",
            format!(
                "architecture has {expected} parameterized layers but {} weight tensors were given",
                weights.len()
            ),
        ));
    }
    Ok(())
}

/// Like [`forward`] but returns every intermediate activation, one per layer,
/// for disturbance analysis.
pub fn forward_trace(arch: &ArchSpec, weights: &[Tensor], input: &Tensor) -> Result<Vec<Tensor>> {
    validate_weights(arch, weights)?;
    let mut trace: Vec<Tensor> = Vec::with_capacity(arch.layers.len());
    let mut next_weight = 0usize;
    for (index, layer) in arch.layers.iter().enumerate() {
        let w = if layer.takes_weights() {
            next_weight += 1;
            Some(&weights[next_weight - 1])
        } else {
            None
        };
        let src = trace.last().unwrap_or(input);
        let out = apply_layer(layer, w, src).map_err(|e| Error::Layer {
            index,
            kind: layer.kind_name(),
            reason: e.to_string(),
        })?;
        trace.push(out);
    }
    Ok(trace)
}

/// Applies the architecture's layers in order and returns the final output.
///
/// `weights` holds one tensor per parameterized layer (conv and linear), in
/// layer order. Errors name the failing layer index.
pub fn forward(arch: &ArchSpec, weights: &[Tensor], input: &Tensor) -> Result<Tensor> {
    validate_weights(arch, weights)?;
    let mut current = input.clone();
    let mut next_weight = 0usize;
    for (index, layer) in arch.layers.iter().enumerate() {
        let w = if layer.takes_weights() {
            next_weight += 1;
            Some(&weights[next_weight - 1])
        } else {
            None
        };
        current = apply_layer(layer, w, &current).map_err(|e| Error::Layer {
            index,
            kind: layer.kind_name(),
            reason: e.to_string(),
        })?;
    }
    Ok(current)
}

fn expect_rank3(t: &Tensor, what: &'static str) -> Result<[usize; 3]> {
    match *t.shape() {
        [c, h, w] => Ok([c, h, w]),
        ref other => Err(Error::invalid(
            "input",
            format!("{what} must be [C, H, W], got {other:?}"),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn conv_scalar_multiply() {
        let spec = ConvLayerSpec {
            in_channels: 1,
            out_channels: 1,
            kernel: 1,
            stride: 1,
            padding: 0,
        };
        let out = conv2d(&t(&[1, 1, 1], &[5.0]), &t(&[1, 1, 1, 1], &[2.0]), &spec).unwrap();
        assert_eq!(out.data(), &[10.0]);
    }

    #[test]
    fn conv_ones_window_counts() {
        // 3x3 ones input, 3x3 ones filter, stride 1, padding 1: each output
        // counts the in-bounds taps of its window.
        let spec = ConvLayerSpec {
            in_channels: 1,
            out_channels: 1,
            kernel: 3,
            stride: 1,
            padding: 1,
        };
        let out = conv2d(
            &t(&[1, 3, 3], &[1.0; 9]),
            &t(&[1, 1, 3, 3], &[1.0; 9]),
            &spec,
        )
        .unwrap();
        assert_eq!(
            out.data(),
            &[4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]
        );
    }

    #[test]
    fn output_dims_formula() {
        let mk = |k, s, p| ConvLayerSpec {
            in_channels: 1,
            out_channels: 1,
            kernel: k,
            stride: s,
            padding: p,
        };
        assert_eq!(output_dims(32, 32, &mk(3, 1, 1)).unwrap(), (32, 32));
        assert_eq!(output_dims(32, 32, &mk(3, 2, 1)).unwrap(), (16, 16));
        assert_eq!(output_dims(5, 5, &mk(2, 2, 0)).unwrap(), (2, 2));
        assert!(output_dims(2, 2, &mk(5, 1, 0)).is_err());
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let spec = ConvLayerSpec {
            in_channels: 2,
            out_channels: 1,
            kernel: 1,
            stride: 1,
            padding: 0,
        };
        let err = conv2d(&t(&[1, 1, 1], &[5.0]), &t(&[1, 2, 1, 1], &[2.0, 3.0]), &spec);
        assert!(err.is_err());
    }

    #[test]
    fn global_pool_examples() {
        let m = t(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(global_pool(&m, PoolKind::Average).unwrap().data(), &[2.5]);
        assert_eq!(global_pool(&m, PoolKind::Max).unwrap().data(), &[4.0]);
        let c = t(&[1, 2, 2], &[7.0; 4]);
        assert_eq!(global_pool(&c, PoolKind::Average).unwrap().data(), &[7.0]);
        assert_eq!(global_pool(&c, PoolKind::Max).unwrap().data(), &[7.0]);
    }

    #[test]
    fn nearest_upsample_replicates_blocks() {
        let out = upsample(
            &t(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]),
            UpsampleMode::Nearest,
            2,
        )
        .unwrap();
        assert_eq!(out.shape(), &[1, 4, 4]);
        assert_eq!(
            out.data(),
            &[
                1.0, 1.0, 2.0, 2.0, //
                1.0, 1.0, 2.0, 2.0, //
                3.0, 3.0, 4.0, 4.0, //
                3.0, 3.0, 4.0, 4.0,
            ]
        );
    }

    #[test]
    fn bilinear_half_pixel_mapping() {
        // src coords for scale 2 over a length-2 row: -0.25, 0.25, 0.75, 1.25
        // clamped to [0, 1].
        let out = upsample(&t(&[1, 1, 2], &[0.0, 1.0]), UpsampleMode::Bilinear, 2).unwrap();
        assert_eq!(out.shape(), &[1, 2, 4]);
        assert_eq!(out.data()[..4], [0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn unit_scale_upsample_is_identity() {
        let m = t(&[2, 2, 2], &[1.0, -2.0, 3.5, 4.0, 0.0, 9.0, -1.0, 2.0]);
        for mode in [UpsampleMode::Nearest, UpsampleMode::Bilinear] {
            assert_eq!(upsample(&m, mode, 1).unwrap(), m);
        }
        assert!(upsample(&m, UpsampleMode::Nearest, 0).is_err());
    }

    #[test]
    fn forward_pool_only() {
        let arch = ArchSpec::new(
            vec![LayerSpec::Pool {
                kind: PoolKind::Average,
            }],
            vec![],
        )
        .unwrap();
        let out = forward(&arch, &[], &t(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0])).unwrap();
        assert_eq!(out.data(), &[2.5]);
    }

    #[test]
    fn forward_identity_conv_then_relu_clamps() {
        let arch = ArchSpec::new(
            vec![
                LayerSpec::Conv(ConvLayerSpec {
                    in_channels: 1,
                    out_channels: 1,
                    kernel: 1,
                    stride: 1,
                    padding: 0,
                }),
                LayerSpec::Relu,
            ],
            vec![0],
        )
        .unwrap();
        let w = t(&[1, 1, 1, 1], &[1.0]);
        let out = forward(&arch, &[w], &t(&[1, 2, 2], &[-1.0, -2.0, -3.0, -4.0])).unwrap();
        assert_eq!(out.data(), &[0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn forward_error_names_layer() {
        let arch = ArchSpec::new(
            vec![
                LayerSpec::Pool {
                    kind: PoolKind::Average,
                },
                LayerSpec::Pool {
                    kind: PoolKind::Max,
                },
            ],
            vec![],
        )
        .unwrap();
        let err = forward(&arch, &[], &t(&[1, 2, 2], &[0.0; 4])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("layer 1"), "{msg}");
    }

    #[test]
    fn arch_json_round_trip_and_fixed_field_names() {
        let arch = ArchSpec::new(
            vec![
                LayerSpec::Conv(ConvLayerSpec {
                    in_channels: 3,
                    out_channels: 16,
                    kernel: 3,
                    stride: 2,
                    padding: 1,
                }),
                LayerSpec::Relu,
                LayerSpec::Upsample {
                    mode: UpsampleMode::Nearest,
                    scale: 2,
                },
                LayerSpec::Pool {
                    kind: PoolKind::Max,
                },
                LayerSpec::Linear {
                    in_features: 16,
                    out_features: 10,
                },
            ],
            vec![0],
        )
        .unwrap();
        let json = arch.to_json_string();
        assert_eq!(ArchSpec::from_json_str(&json).unwrap(), arch);

        // The wire format is pinned; parsing the documented schema must work.
        let doc = r#"{
            "layers": [
                {"type": "conv", "in_channels": 3, "out_channels": 16,
                 "kernel": 3, "stride": 2, "padding": 1},
                {"type": "relu"},
                {"type": "upsample", "mode": "nearest", "scale": 2},
                {"type": "pool", "kind": "max"},
                {"type": "linear", "in_features": 16, "out_features": 10}
            ],
            "stage_markers": [0]
        }"#;
        assert_eq!(ArchSpec::from_json_str(doc).unwrap(), arch);
    }

    #[test]
    fn arch_validation_rejects_bad_markers() {
        let conv = LayerSpec::Conv(ConvLayerSpec {
            in_channels: 1,
            out_channels: 1,
            kernel: 1,
            stride: 1,
            padding: 0,
        });
        assert!(ArchSpec::new(vec![conv, LayerSpec::Relu], vec![1]).is_err());
        assert!(ArchSpec::new(vec![conv, conv], vec![1, 0]).is_err());
        assert!(ArchSpec::new(vec![conv], vec![3]).is_err());
    }
}
