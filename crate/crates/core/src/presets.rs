//! Built-in convolutional chains in stride-stage notation.
//!
//! Presets model the convolutional part of each network as a plain conv
//! chain ending in global average pooling: activations are inserted by the
//! experiment runners when requested, and skip connections are ignored since
//! they change neither receptive fields nor the dominant cost terms. The
//! stage markers address the first convolution of each stage, which is what
//! stride rewriting modifies.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::analysis::StrideConfig;
use crate::error::Error;
use crate::nn::{ArchSpec, ConvLayerSpec, LayerSpec, PoolKind};

/// Known architecture presets and their baseline stride configurations:
/// ToyCNN 1-1-1-1, AlexNet 2-2-2-2, VGG16 2-2-2-2-2, ResNet18 and
/// PreActResNet18 1-2-2-2.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    ToyCnn,
    AlexNet,
    Vgg16,
    ResNet18,
    PreActResNet18,
}

impl Preset {
    pub const ALL: [Preset; 5] = [
        Preset::ToyCnn,
        Preset::AlexNet,
        Preset::Vgg16,
        Preset::ResNet18,
        Preset::PreActResNet18,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::ToyCnn => "toycnn",
            Preset::AlexNet => "alexnet",
            Preset::Vgg16 => "vgg16",
            Preset::ResNet18 => "resnet18",
            Preset::PreActResNet18 => "preactresnet18",
        }
    }

    /// Baseline stride configuration in stage notation.
    pub fn default_strides(self) -> StrideConfig {
        match self {
            Preset::ToyCnn => StrideConfig::new(vec![1, 1, 1, 1]),
            Preset::AlexNet => StrideConfig::new(vec![2, 2, 2, 2]),
            Preset::Vgg16 => StrideConfig::new(vec![2, 2, 2, 2, 2]),
            Preset::ResNet18 | Preset::PreActResNet18 => StrideConfig::new(vec![1, 2, 2, 2]),
        }
    }

    /// The convolutional chain with baseline strides, ending in global
    /// average pooling.
    pub fn arch(self) -> ArchSpec {
        match self {
            // 4 convolutions of 3, 16, 32 and 64 output channels on an RGB
            // input; every conv is its own stage.
            Preset::ToyCnn => chain(3, &[(3, 1), (16, 1), (32, 1), (64, 1)], &[0, 1, 2, 3]),
            // 5 convolutions, stages at the 4 downsampling points.
            Preset::AlexNet => chain(
                3,
                &[(64, 2), (192, 2), (384, 2), (256, 1), (256, 2)],
                &[0, 1, 2, 4],
            ),
            // 13 convolutions in 5 blocks; the first conv of each block
            // carries the stage stride.
            Preset::Vgg16 => chain(
                3,
                &[
                    (64, 2),
                    (64, 1),
                    (128, 2),
                    (128, 1),
                    (256, 2),
                    (256, 1),
                    (256, 1),
                    (512, 2),
                    (512, 1),
                    (512, 1),
                    (512, 2),
                    (512, 1),
                    (512, 1),
                ],
                &[0, 2, 4, 7, 10],
            ),
            // Stem plus 4 stages of two 2-conv blocks each (17 convolutions).
            Preset::ResNet18 | Preset::PreActResNet18 => {
                let mut specs = vec![(64usize, 1usize)];
                for (channels, stride) in [(64, 1), (128, 2), (256, 2), (512, 2)] {
                    specs.push((channels, stride));
                    specs.extend([(channels, 1); 3]);
                }
                chain(3, &specs, &[1, 5, 9, 13])
            }
        }
    }
}

/// Builds a k=3, p=1 conv chain from (out_channels, stride) pairs, ending in
/// global average pooling.
fn chain(input_channels: usize, specs: &[(usize, usize)], markers: &[usize]) -> ArchSpec {
    let mut layers = Vec::with_capacity(specs.len() + 1);
    let mut in_channels = input_channels;
    for &(out_channels, stride) in specs {
        layers.push(LayerSpec::Conv(ConvLayerSpec {
            in_channels,
            out_channels,
            kernel: 3,
            stride,
            padding: 1,
        }));
        in_channels = out_channels;
    }
    layers.push(LayerSpec::Pool {
        kind: PoolKind::Average,
    });
    ArchSpec::new(layers.clone(), markers.to_vec()).expect("presets are well-formed")
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s.to_lowercase())
            .ok_or_else(|| Error::invalid("preset", format!("unknown preset `{s}`")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::dims_report;

    #[test]
    fn presets_validate_and_match_their_stride_configs() {
        for preset in Preset::ALL {
            let arch = preset.arch();
            arch.validate().unwrap();
            let strides = preset.default_strides();
            assert_eq!(strides.strides.len(), arch.stage_markers.len());
            for (&marker, &s) in arch.stage_markers.iter().zip(&strides.strides) {
                match arch.layers[marker] {
                    LayerSpec::Conv(spec) => assert_eq!(spec.stride, s),
                    _ => panic!("marker must be conv"),
                }
            }
        }
    }

    #[test]
    fn resnet18_has_17_convs_and_4x4_final_map() {
        let arch = Preset::ResNet18.arch();
        let convs = arch
            .layers
            .iter()
            .filter(|l| matches!(l, LayerSpec::Conv(_)))
            .count();
        assert_eq!(convs, 17);
        let dims = dims_report(&arch, 32).unwrap();
        let pre_pool = &dims.layers[dims.layers.len() - 2];
        assert_eq!((pre_pool.out_height, pre_pool.out_width), (4, 4));
        assert_eq!(pre_pool.out_channels, 512);
    }

    #[test]
    fn toycnn_ends_at_64_channels() {
        let dims = dims_report(&Preset::ToyCnn.arch(), 32).unwrap();
        let last = dims.layers.last().unwrap();
        assert_eq!(last.kind, "pool");
        assert_eq!(last.out_channels, 64);
    }

    #[test]
    fn preset_names_round_trip() {
        for preset in Preset::ALL {
            assert_eq!(preset.name().parse::<Preset>().unwrap(), preset);
        }
        assert!("lenet".parse::<Preset>().is_err());
    }
}
