//! End-to-end checks connecting the Monte Carlo runners to the analytical
//! bound machinery, plus an operator-norm oracle for the Lipschitz estimator.

use convshield_core::bounds::{avg_pool_tail_bound, empirical_tail};
use convshield_core::experiments::{
    init_arch_weights, lipschitz_lower_bound, prediction_invariance, run_disturbance,
    seeded_probe_inputs, ActivationChoice, ExperimentConfig,
};
use convshield_core::nn::{conv2d, ArchSpec, ConvLayerSpec, LayerSpec, PoolKind};
use convshield_core::tensor::{InitStrategy, Tensor};

/// With no layers before the pool, the traced "network" is the identity and
/// the pooled samples are means of i.i.d. bounded zero-mean entries, which is
/// exactly the regime of the average-pooling tail bound.
#[test]
fn identity_arch_pooled_samples_respect_avg_bound() {
    let eps = 0.1;
    let config = ExperimentConfig {
        arch: ArchSpec::new(
            vec![LayerSpec::Pool {
                kind: PoolKind::Average,
            }],
            vec![],
        )
        .unwrap(),
        init: InitStrategy::XavierUniform,
        activation: ActivationChoice::None,
        epsilon: eps,
        trials: 20_000,
        base_seed: 5,
        input_sizes: vec![(8, 8)],
        pooling: PoolKind::Average,
    };
    let report = run_disturbance(&config).unwrap();
    let samples = report.pooled_samples(8, 8).unwrap();
    assert_eq!(samples.len(), 20_000);
    for i in 1..=50 {
        let gamma = 0.05 * i as f64 / 50.0;
        let tail = empirical_tail(samples, gamma).unwrap();
        let bound = avg_pool_tail_bound(8, 8, -eps, eps, gamma).unwrap().value;
        let slack = 3.0 * (bound * (1.0 - bound) / samples.len() as f64).sqrt();
        assert!(
            tail <= bound + slack,
            "gamma {gamma}: tail {tail} vs bound {bound} (+{slack})"
        );
    }
}

/// Flattens the convolution into an explicit matrix by pushing basis tensors
/// through it, and bounds the Lipschitz estimate by the matrix's
/// infinity-operator norm (max absolute row sum).
#[test]
fn lipschitz_estimate_below_operator_norm_oracle() {
    let spec = ConvLayerSpec {
        in_channels: 1,
        out_channels: 2,
        kernel: 3,
        stride: 1,
        padding: 1,
    };
    let arch = ArchSpec::new(vec![LayerSpec::Conv(spec)], vec![0]).unwrap();
    let weights = init_arch_weights(&arch, InitStrategy::XavierNormal, 13).unwrap();

    // 16 inputs, 32 outputs: column j of the matrix is conv(e_j).
    let (n_in, n_out) = (16usize, 32usize);
    let mut columns = Vec::with_capacity(n_in);
    for j in 0..n_in {
        let mut basis = vec![0.0; n_in];
        basis[j] = 1.0;
        let e = Tensor::new(vec![1, 4, 4], basis).unwrap();
        columns.push(conv2d(&e, &weights[0], &spec).unwrap());
    }
    let inf_norm = (0..n_out)
        .map(|r| {
            (0..n_in)
                .map(|j| columns[j].data()[r].abs())
                .sum::<f64>()
        })
        .fold(0.0f64, f64::max);

    let probes = seeded_probe_inputs(1, 4, 4, 24, 17);
    let est = lipschitz_lower_bound(&arch, &weights, &probes, 200, 17).unwrap();
    assert!(est.lower_bound > 0.0);
    assert!(
        est.lower_bound <= inf_norm + 1e-12,
        "estimate {} exceeds operator norm {inf_norm}",
        est.lower_bound
    );

    // A 1-Lipschitz activation cannot push the estimate past the linear
    // operator norm either.
    let relu_arch = ArchSpec::new(
        vec![LayerSpec::Conv(spec), LayerSpec::Relu],
        vec![0],
    )
    .unwrap();
    let relu_est = lipschitz_lower_bound(&relu_arch, &weights, &probes, 200, 17).unwrap();
    assert!(relu_est.lower_bound <= inf_norm + 1e-12);
}

/// Invariance fractions at a fixed epsilon are binomial estimates; two runs
/// with disjoint trial streams must agree within a generous 99% interval.
#[test]
fn invariance_is_statistically_self_consistent() {
    let mut arch = ArchSpec::new(
        vec![
            LayerSpec::Conv(ConvLayerSpec {
                in_channels: 1,
                out_channels: 4,
                kernel: 3,
                stride: 1,
                padding: 1,
            }),
            LayerSpec::Pool {
                kind: PoolKind::Average,
            },
        ],
        vec![0],
    )
    .unwrap();
    arch.layers.push(LayerSpec::Linear {
        in_features: 4,
        out_features: 3,
    });
    let weights = init_arch_weights(&arch, InitStrategy::XavierNormal, 3).unwrap();
    let inputs = seeded_probe_inputs(1, 8, 8, 8, 3);
    let trials = 250;
    let run = |seed| {
        prediction_invariance(&arch, &weights, &inputs, &[0.3], trials, seed)
            .unwrap()
            .entries[0]
            .fraction
    };
    let (f1, f2) = (run(100), run(200));
    let n = (inputs.len() * trials) as f64;
    let pooled = 0.5 * (f1 + f2);
    let sigma = (pooled * (1.0 - pooled) / n).sqrt() * std::f64::consts::SQRT_2;
    assert!(
        (f1 - f2).abs() <= (2.58 * sigma).max(3.0 / n),
        "fractions {f1} and {f2} differ beyond the 99% interval"
    );
}
