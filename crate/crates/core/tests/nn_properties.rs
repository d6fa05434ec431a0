//! Property tests for the layer algebra.

use proptest::prelude::*;

use convshield_core::nn::{
    conv2d, forward, global_pool, upsample, ArchSpec, ConvLayerSpec, LayerSpec, PoolKind,
    UpsampleMode,
};
use convshield_core::tensor::Tensor;

fn tensor_strategy(shape: &'static [usize]) -> impl Strategy<Value = Tensor> {
    let n: usize = shape.iter().product();
    prop::collection::vec(-1.0f64..1.0, n)
        .prop_map(move |data| Tensor::new(shape.to_vec(), data).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    // conv(a*x + b*y) == a*conv(x) + b*conv(y) for fixed weights.
    #[test]
    fn conv_is_linear_in_input(
        x in tensor_strategy(&[2, 6, 6]),
        y in tensor_strategy(&[2, 6, 6]),
        w in tensor_strategy(&[3, 2, 3, 3]),
        alpha in -2.0f64..2.0,
        beta in -2.0f64..2.0,
    ) {
        let spec = ConvLayerSpec {
            in_channels: 2,
            out_channels: 3,
            kernel: 3,
            stride: 1,
            padding: 1,
        };
        let mixed = x.scale(alpha).add(&y.scale(beta)).unwrap();
        let lhs = conv2d(&mixed, &w, &spec).unwrap();
        let rhs = conv2d(&x, &w, &spec)
            .unwrap()
            .scale(alpha)
            .add(&conv2d(&y, &w, &spec).unwrap().scale(beta))
            .unwrap();
        for (a, b) in lhs.data().iter().zip(rhs.data()) {
            prop_assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    // pool(a*x) == a*pool(x) for average pooling.
    #[test]
    fn average_pool_commutes_with_scaling(
        x in tensor_strategy(&[3, 5, 5]),
        alpha in -3.0f64..3.0,
    ) {
        let lhs = global_pool(&x.scale(alpha), PoolKind::Average).unwrap();
        let rhs = global_pool(&x, PoolKind::Average).unwrap().scale(alpha);
        for (a, b) in lhs.data().iter().zip(rhs.data()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    // Nearest upsampling commutes with a 1x1 convolution exactly.
    #[test]
    fn nearest_upsample_commutes_with_1x1_conv(
        x in tensor_strategy(&[2, 4, 4]),
        w in tensor_strategy(&[3, 2, 1, 1]),
        scale in 1usize..4,
    ) {
        let spec = ConvLayerSpec {
            in_channels: 2,
            out_channels: 3,
            kernel: 1,
            stride: 1,
            padding: 0,
        };
        let up_then_conv = conv2d(
            &upsample(&x, UpsampleMode::Nearest, scale).unwrap(),
            &w,
            &spec,
        )
        .unwrap();
        let conv_then_up = upsample(
            &conv2d(&x, &w, &spec).unwrap(),
            UpsampleMode::Nearest,
            scale,
        )
        .unwrap();
        prop_assert_eq!(up_then_conv, conv_then_up);
    }

    // For an activation-free architecture the output difference
    // forward(x + d) - forward(x) does not depend on the base input.
    #[test]
    fn linear_arch_difference_is_base_independent(
        x1 in tensor_strategy(&[1, 6, 6]),
        x2 in tensor_strategy(&[1, 6, 6]),
        d in tensor_strategy(&[1, 6, 6]),
        w in tensor_strategy(&[2, 1, 3, 3]),
    ) {
        let arch = ArchSpec::new(
            vec![
                LayerSpec::Conv(ConvLayerSpec {
                    in_channels: 1,
                    out_channels: 2,
                    kernel: 3,
                    stride: 1,
                    padding: 1,
                }),
                LayerSpec::Pool { kind: PoolKind::Average },
            ],
            vec![0],
        )
        .unwrap();
        let weights = [w];
        let diff_at = |x: &Tensor| {
            forward(&arch, &weights, &x.add(&d).unwrap())
                .unwrap()
                .sub(&forward(&arch, &weights, x).unwrap())
                .unwrap()
        };
        let d1 = diff_at(&x1);
        let d2 = diff_at(&x2);
        for (a, b) in d1.data().iter().zip(d2.data()) {
            prop_assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }
}
