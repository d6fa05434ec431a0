//! `convshield` — architecture analysis and perturbation-resistance tools on
//! the command line.
//!
//! Subcommands: `dims`, `rf`, `cost`, `rewrite`, `redundancy`, `bound`,
//! `simulate`, `invariance`, `lipschitz`. Reports go to stdout or `--out`,
//! as JSON (full precision) or CSV (6 significant digits). Exit codes:
//! 0 success, 2 usage error, 1 runtime error.

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};

use convshield_core::analysis::{
    cost, dims_report, receptive_field, redundancy_profile, rewrite_strides, StrideConfig,
};
use convshield_core::bounds::{evaluate_bound_query, BoundQuery, GivenParam};
use convshield_core::experiments::{
    init_arch_weights, lipschitz_lower_bound, prediction_invariance, run_disturbance,
    seeded_probe_inputs, ActivationChoice, ExperimentConfig,
};
use convshield_core::nn::{ArchSpec, LayerSpec, PoolKind};
use convshield_core::presets::Preset;
use convshield_core::tensor::InitStrategy;

/// Thread-count environment variable consulted when `--threads` is absent.
const THREADS_ENV: &str = "CONVSHIELD_THREADS";

#[derive(Parser)]
#[command(
    name = "convshield",
    version,
    about = "Convolutional feature-map size vs perturbation resistance: bounds, simulations, and architecture tools"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Per-layer output dimensions for a square input.
    Dims(DimsArgs),
    /// Receptive field of each convolution layer.
    Rf(DimsArgs),
    /// Flops / memory / parameter cost model.
    Cost(DimsArgs),
    /// Rewrite the per-stage stride configuration; emits the new arch JSON.
    Rewrite(RewriteArgs),
    /// Duplicate outputs caused by nearest-neighbor upsampling (1D).
    Redundancy(RedundancyArgs),
    /// Pooled-disturbance tail bound: probability from gamma, or minimal
    /// gamma from a probability.
    Bound(BoundArgs),
    /// Monte Carlo disturbance propagation over a sweep of input sizes.
    Simulate(SimulateArgs),
    /// Fraction of predictions unchanged under uniform perturbations.
    Invariance(InvarianceArgs),
    /// Empirical Lipschitz lower bound over sampled probe pairs.
    Lipschitz(LipschitzArgs),
}

#[derive(Args)]
struct ArchArgs {
    /// Built-in architecture preset.
    #[arg(long, value_enum)]
    preset: Option<PresetArg>,
    /// Architecture spec JSON file (see README for the schema).
    #[arg(long, value_name = "FILE")]
    arch: Option<PathBuf>,
    /// Override the per-stage strides, e.g. `1,1,2,2` or `1-1-2-2`.
    #[arg(long)]
    strides: Option<String>,
}

#[derive(Args)]
struct OutputArgs {
    /// Write the report here instead of stdout.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Report format.
    #[arg(long, value_enum, default_value_t = FormatArg::Json)]
    format: FormatArg,
}

#[derive(Args)]
struct DimsArgs {
    #[command(flatten)]
    arch: ArchArgs,
    /// Square input size in pixels.
    #[arg(long, default_value_t = 32)]
    input: usize,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct RewriteArgs {
    #[command(flatten)]
    arch: ArchArgs,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct RedundancyArgs {
    /// Nearest-neighbor upsampling factor.
    #[arg(long)]
    scale: usize,
    /// Filter width.
    #[arg(long)]
    kernel: usize,
    /// Input length before upsampling.
    #[arg(long)]
    len: usize,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct BoundArgs {
    /// Pooling operator.
    #[arg(long, value_enum)]
    pool: PoolArg,
    #[arg(long)]
    height: usize,
    #[arg(long)]
    width: usize,
    /// Lower end of the disturbance range.
    #[arg(long, allow_hyphen_values = true)]
    a: f64,
    /// Upper end of the disturbance range.
    #[arg(long, allow_hyphen_values = true)]
    b: f64,
    /// Tail probability; solves for the minimal gamma.
    #[arg(long, conflicts_with = "gamma")]
    p: Option<f64>,
    /// Disturbance magnitude; solves for the tail probability.
    #[arg(long)]
    gamma: Option<f64>,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    arch: ArchArgs,
    #[arg(long, value_enum, default_value_t = PoolArg::Avg)]
    pool: PoolArg,
    /// Perturbations are drawn i.i.d. from U[-epsilon, epsilon].
    #[arg(long, default_value_t = 0.1)]
    epsilon: f64,
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    /// Comma-separated square input sizes (e.g. `16,32,64`) or explicit
    /// `HxW` entries.
    #[arg(long, default_value = "16,32,64")]
    sizes: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    init: InitArgs,
    #[arg(long, value_enum, default_value_t = ActivationArg::None)]
    activation: ActivationArg,
    /// Worker threads (default: CONVSHIELD_THREADS, then all cores). The
    /// report is identical for every thread count.
    #[arg(long)]
    threads: Option<usize>,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct InvarianceArgs {
    #[command(flatten)]
    arch: ArchArgs,
    /// Classes of the random linear head appended after pooling.
    #[arg(long, default_value_t = 10)]
    classes: usize,
    /// Number of seeded probe inputs.
    #[arg(long, default_value_t = 8)]
    inputs: usize,
    /// Square input size in pixels.
    #[arg(long, default_value_t = 32)]
    input: usize,
    /// Comma-separated perturbation budgets.
    #[arg(
        long,
        default_value = "0,0.00784313725490196,0.01568627450980392,0.023529411764705882,0.03137254901960784,0.0392156862745098"
    )]
    epsilons: String,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    init: InitArgs,
    #[arg(long)]
    threads: Option<usize>,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct LipschitzArgs {
    #[command(flatten)]
    arch: ArchArgs,
    /// Number of seeded probe inputs.
    #[arg(long, default_value_t = 16)]
    probes: usize,
    /// Number of sampled probe pairs.
    #[arg(long, default_value_t = 64)]
    pairs: usize,
    /// Square input size in pixels.
    #[arg(long, default_value_t = 32)]
    input: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    init: InitArgs,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct InitArgs {
    /// Weight initialization strategy.
    #[arg(long, value_enum, default_value_t = InitArg::XavierUniform)]
    init: InitArg,
    /// Mean of the normal strategy.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    init_mean: f64,
    /// Std of the normal strategy.
    #[arg(long, default_value_t = 0.05)]
    init_std: f64,
    /// Half-width of the uniform strategy (bounds are +/- this value).
    #[arg(long, default_value_t = 0.05)]
    init_bound: f64,
}

impl InitArgs {
    fn strategy(&self) -> InitStrategy {
        match self.init {
            InitArg::Normal => InitStrategy::Normal {
                mean: self.init_mean,
                std: self.init_std,
            },
            InitArg::Uniform => InitStrategy::Uniform {
                low: -self.init_bound,
                high: self.init_bound,
            },
            InitArg::XavierNormal => InitStrategy::XavierNormal,
            InitArg::XavierUniform => InitStrategy::XavierUniform,
        }
    }
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum PresetArg {
    Toycnn,
    Alexnet,
    Vgg16,
    Resnet18,
    Preactresnet18,
}

impl PresetArg {
    fn preset(self) -> Preset {
        match self {
            PresetArg::Toycnn => Preset::ToyCnn,
            PresetArg::Alexnet => Preset::AlexNet,
            PresetArg::Vgg16 => Preset::Vgg16,
            PresetArg::Resnet18 => Preset::ResNet18,
            PresetArg::Preactresnet18 => Preset::PreActResNet18,
        }
    }
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum InitArg {
    Normal,
    Uniform,
    XavierNormal,
    XavierUniform,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum PoolArg {
    #[value(alias = "average")]
    Avg,
    Max,
}

impl PoolArg {
    fn kind(self) -> PoolKind {
        match self {
            PoolArg::Avg => PoolKind::Average,
            PoolArg::Max => PoolKind::Max,
        }
    }
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    Json,
    Csv,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum ActivationArg {
    None,
    Relu,
}

impl ActivationArg {
    fn choice(self) -> ActivationChoice {
        match self {
            ActivationArg::None => ActivationChoice::None,
            ActivationArg::Relu => ActivationChoice::Relu,
        }
    }
}

/// A failure plus the exit code it maps to: 2 for bad invocations, 1 for
/// runtime failures.
enum CliError {
    Usage(String),
    Runtime(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => write!(f, "{m}"),
        }
    }
}

fn usage(e: impl fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn runtime(e: impl fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

/// Rendered report in the requested format; `csv` is None for commands that
/// only emit JSON.
struct Rendered {
    json: String,
    csv: Option<String>,
}

fn json_of<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("reports serialize")
}

fn load_arch(args: &ArchArgs) -> Result<ArchSpec, CliError> {
    let arch = match (&args.preset, &args.arch) {
        (Some(p), None) => p.preset().arch(),
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
            ArchSpec::from_json_str(&text).map_err(usage)?
        }
        _ => {
            return Err(CliError::Usage(
                "exactly one of --preset or --arch is required".into(),
            ))
        }
    };
    match &args.strides {
        Some(s) => {
            let config = StrideConfig::from_str(s).map_err(usage)?;
            rewrite_strides(&arch, &config).map_err(usage)
        }
        None => Ok(arch),
    }
}

fn parse_sizes(text: &str) -> Result<Vec<(usize, usize)>, CliError> {
    text.split(',')
        .map(|tok| {
            let tok = tok.trim();
            let (h, w) = match tok.split_once('x') {
                Some((h, w)) => (h, w),
                None => (tok, tok),
            };
            match (h.trim().parse::<usize>(), w.trim().parse::<usize>()) {
                (Ok(h), Ok(w)) if h > 0 && w > 0 => Ok((h, w)),
                _ => Err(CliError::Usage(format!("bad size entry `{tok}`"))),
            }
        })
        .collect()
}

fn parse_epsilons(text: &str) -> Result<Vec<f64>, CliError> {
    text.split(',')
        .map(|tok| {
            let v = tok
                .trim()
                .parse::<f64>()
                .map_err(|_| CliError::Usage(format!("bad epsilon `{tok}`")))?;
            if !v.is_finite() || v < 0.0 {
                return Err(CliError::Usage(format!(
                    "epsilon must be finite and >= 0, got `{tok}`"
                )));
            }
            Ok(v)
        })
        .collect()
}

/// Builds a rayon pool honoring --threads, then CONVSHIELD_THREADS, then the
/// rayon default.
fn thread_pool(threads: Option<usize>) -> Result<rayon::ThreadPool, CliError> {
    let count = match threads {
        Some(n) => n,
        None => match std::env::var(THREADS_ENV) {
            Ok(v) => v
                .parse::<usize>()
                .map_err(|_| usage(format!("bad {THREADS_ENV} value `{v}`")))?,
            Err(_) => 0,
        },
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(count)
        .build()
        .map_err(runtime)
}

fn conv_input_channels(arch: &ArchSpec) -> usize {
    arch.layers
        .iter()
        .find_map(|l| match l {
            LayerSpec::Conv(spec) => Some(spec.in_channels),
            _ => None,
        })
        .unwrap_or(1)
}

fn run_dims(args: &DimsArgs) -> Result<Rendered, CliError> {
    let arch = load_arch(&args.arch)?;
    let report = dims_report(&arch, args.input).map_err(usage)?;
    Ok(Rendered {
        json: json_of(&report),
        csv: Some(report.to_csv()),
    })
}

fn run_rf(args: &DimsArgs) -> Result<Rendered, CliError> {
    let arch = load_arch(&args.arch)?;
    let report = receptive_field(&arch, args.input).map_err(usage)?;
    Ok(Rendered {
        json: json_of(&report),
        csv: Some(report.to_csv()),
    })
}

fn run_cost(args: &DimsArgs) -> Result<Rendered, CliError> {
    let arch = load_arch(&args.arch)?;
    let report = cost(&arch, args.input).map_err(usage)?;
    Ok(Rendered {
        json: json_of(&report),
        csv: Some(report.to_csv()),
    })
}

fn run_rewrite(args: &RewriteArgs) -> Result<Rendered, CliError> {
    if args.arch.strides.is_none() {
        return Err(CliError::Usage("rewrite requires --strides".into()));
    }
    let arch = load_arch(&args.arch)?;
    Ok(Rendered {
        json: arch.to_json_string(),
        csv: None,
    })
}

fn run_redundancy(args: &RedundancyArgs) -> Result<Rendered, CliError> {
    let profile = redundancy_profile(args.scale, args.kernel, args.len).map_err(usage)?;
    Ok(Rendered {
        json: json_of(&profile),
        csv: Some(profile.to_csv()),
    })
}

fn run_bound(args: &BoundArgs) -> Result<Rendered, CliError> {
    let given = match (args.p, args.gamma) {
        (Some(p), None) => GivenParam::P(p),
        (None, Some(g)) => GivenParam::Gamma(g),
        _ => {
            return Err(CliError::Usage(
                "exactly one of --p or --gamma is required".into(),
            ))
        }
    };
    let outcome = evaluate_bound_query(&BoundQuery {
        pooling: args.pool.kind(),
        height: args.height,
        width: args.width,
        a: args.a,
        b: args.b,
        given,
    })
    .map_err(usage)?;
    Ok(Rendered {
        json: json_of(&outcome),
        csv: Some(outcome.to_csv()),
    })
}

fn run_simulate(args: &SimulateArgs) -> Result<Rendered, CliError> {
    let config = ExperimentConfig {
        arch: load_arch(&args.arch)?,
        init: args.init.strategy(),
        activation: args.activation.choice(),
        epsilon: args.epsilon,
        trials: args.trials,
        base_seed: args.seed,
        input_sizes: parse_sizes(&args.sizes)?,
        pooling: args.pool.kind(),
    };
    if !config.epsilon.is_finite() || config.epsilon < 0.0 {
        return Err(CliError::Usage(format!(
            "epsilon must be finite and >= 0, got {}",
            config.epsilon
        )));
    }
    if config.trials == 0 {
        return Err(CliError::Usage("trials must be >= 1".into()));
    }
    let pool = thread_pool(args.threads)?;
    let report = pool.install(|| run_disturbance(&config)).map_err(runtime)?;
    Ok(Rendered {
        json: json_of(&report),
        csv: Some(report.to_csv()),
    })
}

fn run_invariance(args: &InvarianceArgs) -> Result<Rendered, CliError> {
    let mut arch = load_arch(&args.arch)?;
    let epsilons = parse_epsilons(&args.epsilons)?;
    if args.classes == 0 || args.inputs == 0 || args.trials == 0 {
        return Err(CliError::Usage(
            "classes, inputs and trials must all be >= 1".into(),
        ));
    }
    if !matches!(arch.layers.last(), Some(LayerSpec::Linear { .. })) {
        let dims = dims_report(&arch, args.input).map_err(usage)?;
        let last = dims
            .layers
            .last()
            .ok_or_else(|| usage("architecture has no layers"))?;
        let in_features = last.out_channels * last.out_height * last.out_width;
        arch.layers.push(LayerSpec::Linear {
            in_features,
            out_features: args.classes,
        });
    }
    let weights = init_arch_weights(&arch, args.init.strategy(), args.seed).map_err(usage)?;
    let inputs = seeded_probe_inputs(
        conv_input_channels(&arch),
        args.input,
        args.input,
        args.inputs,
        args.seed,
    );
    let pool = thread_pool(args.threads)?;
    let report = pool
        .install(|| prediction_invariance(&arch, &weights, &inputs, &epsilons, args.trials, args.seed))
        .map_err(runtime)?;
    Ok(Rendered {
        json: json_of(&report),
        csv: Some(report.to_csv()),
    })
}

fn run_lipschitz(args: &LipschitzArgs) -> Result<Rendered, CliError> {
    let arch = load_arch(&args.arch)?;
    if args.probes < 2 {
        return Err(CliError::Usage("need at least 2 probes".into()));
    }
    if args.pairs == 0 {
        return Err(CliError::Usage("pairs must be >= 1".into()));
    }
    let weights = init_arch_weights(&arch, args.init.strategy(), args.seed).map_err(usage)?;
    let inputs = seeded_probe_inputs(
        conv_input_channels(&arch),
        args.input,
        args.input,
        args.probes,
        args.seed,
    );
    let estimate =
        lipschitz_lower_bound(&arch, &weights, &inputs, args.pairs, args.seed).map_err(runtime)?;
    Ok(Rendered {
        json: json_of(&estimate),
        csv: Some(estimate.to_csv()),
    })
}

fn emit(rendered: Rendered, output: &OutputArgs) -> Result<(), CliError> {
    let mut body = match output.format {
        FormatArg::Json => rendered.json,
        FormatArg::Csv => rendered.csv.ok_or_else(|| {
            CliError::Usage("this command emits JSON only; use --format json".into())
        })?,
    };
    if !body.ends_with('\n') {
        body.push('\n');
    }
    match &output.out {
        Some(path) => std::fs::write(path, body)
            .map_err(|e| runtime(format!("cannot write {}: {e}", path.display()))),
        None => {
            print!("{body}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Dims(args) => emit(run_dims(args)?, &args.output),
        Command::Rf(args) => emit(run_rf(args)?, &args.output),
        Command::Cost(args) => emit(run_cost(args)?, &args.output),
        Command::Rewrite(args) => emit(run_rewrite(args)?, &args.output),
        Command::Redundancy(args) => emit(run_redundancy(args)?, &args.output),
        Command::Bound(args) => emit(run_bound(args)?, &args.output),
        Command::Simulate(args) => emit(run_simulate(args)?, &args.output),
        Command::Invariance(args) => emit(run_invariance(args)?, &args.output),
        Command::Lipschitz(args) => emit(run_lipschitz(args)?, &args.output),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
