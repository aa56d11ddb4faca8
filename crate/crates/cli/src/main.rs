//! `lpn` — train, evaluate and inspect local-propagation transform
//! networks.
//!
//! Exit codes: 0 success, 2 input error, 3 corrupt artifact, 4 numeric
//! failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use lpn_core::config::{parse_mode_tag, ConfigFile, HyperParams, NetworkConfig, ScheduleMode};
use lpn_core::data::{
    load_idx, normalize_with, to_class_matrix, LabeledDataset, NormalizeOptions,
};
use lpn_core::eval::{accuracy, embed, fit_linear, goal_propagation_gap, EvalSummary, EvalTimings};
use lpn_core::linalg::{frob_sq, log_det_gram};
use lpn_core::scheduler::{train_class_matrix, TrainOptions};
use lpn_core::stages::TargetFlavor;
use lpn_core::state::{load_weights, save_weights};
use lpn_core::{GoalSolveSettings, LpnError, WeightSet};

const EXIT_INPUT: u8 = 2;
const EXIT_CORRUPT: u8 = 3;
const EXIT_NUMERIC: u8 = 4;

#[derive(Parser)]
#[command(name = "lpn", version, about = "Local-propagation transform network trainer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a network and write checkpoint, metrics CSV, and eval JSON.
    Train(Box<TrainArgs>),
    /// Evaluate a checkpoint on a dataset; prints accuracy JSON to stdout.
    Eval(EvalArgs),
    /// Print per-level weight diagnostics of a checkpoint.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct DatasetArgs {
    /// IDX image file for training.
    #[arg(long)]
    train_images: Option<PathBuf>,
    /// IDX label file for training.
    #[arg(long)]
    train_labels: Option<PathBuf>,
    /// Synthetic two-sided Gaussian dataset, written as CxKxM
    /// (classes x per-class x dimension), e.g. 2x50x16.
    #[arg(long)]
    synthetic: Option<String>,
    /// Seed for the synthetic generator.
    #[arg(long, default_value_t = 7)]
    data_seed: u64,
    /// Samples kept per class (class-balanced truncation). Defaults to
    /// the minimum class count.
    #[arg(long)]
    per_class: Option<usize>,
    /// Normalization applied to samples: none | variance | centered.
    #[arg(long, default_value = "variance")]
    normalize: String,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    dataset: DatasetArgs,
    /// IDX image file for post-training evaluation.
    #[arg(long)]
    test_images: Option<PathBuf>,
    /// IDX label file for post-training evaluation.
    #[arg(long)]
    test_labels: Option<PathBuf>,
    /// Test samples used (prefix of the test set).
    #[arg(long, default_value_t = 1000)]
    test_count: usize,
    /// TOML configuration file with `network`/`hyper`/`options` sections.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Node count; builds a uniform-width network when no config file is
    /// given.
    #[arg(long)]
    nodes: Option<usize>,
    /// Node width for the uniform network (defaults to the input dim).
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    goal_node: Option<usize>,
    /// Scheduling mode: syn | asyn.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    batch_fraction: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Store backward weights independently instead of tying B = Aᵀ.
    #[arg(long)]
    untied_backward: bool,
    /// Hyperparameter override, name=value; repeatable. `--hp.name value`
    /// also works.
    #[arg(long = "hp")]
    hp: Vec<String>,
    /// Bernoulli probability of updating a level in asynchronous mode.
    #[arg(long)]
    bernoulli_p: Option<f64>,
    #[arg(long)]
    inner_rounds: Option<usize>,
    #[arg(long)]
    refine_steps: Option<usize>,
    /// Invert the gram of the previous level's representations in the
    /// backward-weight update.
    #[arg(long)]
    backward_gram_prev: bool,
    /// Use the factored forward-weight targets instead of the
    /// stationarity-consistent ones.
    #[arg(long)]
    factored_targets: bool,
    /// Record the goal-propagation gap on the full training set each
    /// iteration.
    #[arg(long)]
    probe_goal_gap: bool,
    /// Save a checkpoint every N iterations.
    #[arg(long, default_value_t = 0)]
    checkpoint_every: usize,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// TOML configuration (defaults to run_config.toml next to the
    /// checkpoint).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    images: Option<PathBuf>,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    synthetic: Option<String>,
    #[arg(long, default_value_t = 8)]
    data_seed: u64,
    #[arg(long)]
    per_class: Option<usize>,
    #[arg(long, default_value = "variance")]
    normalize: String,
    /// Also report the goal-propagation gap.
    #[arg(long)]
    probe_goal_gap: bool,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Columns in the random probe batch used for the sparsity report.
    #[arg(long, default_value_t = 64)]
    probe_cols: usize,
    #[arg(long, default_value_t = 0)]
    probe_seed: u64,
    /// Threshold used for the probe forward pass.
    #[arg(long, default_value_t = 0.5)]
    probe_tau: f64,
}

fn main() -> ExitCode {
    // Accept `--hp.name value` by rewriting it to `--hp name=value`.
    let mut argv: Vec<String> = Vec::new();
    let mut raw = std::env::args().peekable();
    while let Some(arg) = raw.next() {
        if let Some(name) = arg.strip_prefix("--hp.") {
            if let Some(value) = raw.next() {
                argv.push("--hp".into());
                argv.push(format!("{name}={value}"));
                continue;
            }
        }
        argv.push(arg);
    }
    let cli = Cli::parse_from(argv);
    let outcome = match cli.command {
        Command::Train(args) => cmd_train(*args),
        Command::Eval(args) => cmd_eval(args),
        Command::Inspect(args) => cmd_inspect(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", err.error);
            ExitCode::from(err.code)
        }
    }
}

struct CliError {
    code: u8,
    error: String,
}

fn input_error(msg: impl Into<String>) -> CliError {
    CliError {
        code: EXIT_INPUT,
        error: msg.into(),
    }
}

fn classify(err: LpnError, artifact: bool) -> CliError {
    let code = match &err {
        LpnError::LogDetUndefined
        | LpnError::RidgeRequired
        | LpnError::GramNotFinite
        | LpnError::GoalNonConvergence { .. } => EXIT_NUMERIC,
        LpnError::BadMagic { .. }
        | LpnError::UnexpectedEof(_)
        | LpnError::CorruptCheckpoint(_) => {
            if artifact {
                EXIT_CORRUPT
            } else {
                EXIT_INPUT
            }
        }
        _ => EXIT_INPUT,
    };
    CliError {
        code,
        error: err.to_string(),
    }
}

fn parse_synthetic_spec(spec: &str) -> Result<(usize, usize, usize), CliError> {
    let parts: Vec<&str> = spec.split('x').collect();
    if parts.len() != 3 {
        return Err(input_error(format!(
            "synthetic spec must be CxKxM, got {spec}"
        )));
    }
    let parse = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| input_error(format!("bad synthetic spec component {s}")))
    };
    Ok((parse(parts[0])?, parse(parts[1])?, parse(parts[2])?))
}

fn synthetic_gaussian(
    classes: usize,
    per_class: usize,
    dim: usize,
    center_seed: u64,
    sample_seed: u64,
) -> LabeledDataset {
    let mut crng = ChaCha8Rng::seed_from_u64(center_seed);
    let mut centers = Array2::<f64>::zeros((dim, classes));
    for c in 0..classes {
        let mut norm = 0.0;
        for i in 0..dim {
            let v: f64 = StandardNormal.sample(&mut crng);
            centers[[i, c]] = v;
            norm += v * v;
        }
        let norm = norm.sqrt().max(1e-12);
        for i in 0..dim {
            centers[[i, c]] = centers[[i, c]] / norm * 3.0;
        }
    }
    let mut srng = ChaCha8Rng::seed_from_u64(sample_seed);
    let mut samples = Array2::<f64>::zeros((dim, classes * per_class));
    let mut labels = Vec::with_capacity(classes * per_class);
    for c in 0..classes {
        for k in 0..per_class {
            for i in 0..dim {
                let noise: f64 = StandardNormal.sample(&mut srng);
                samples[[i, c * per_class + k]] = centers[[i, c]] + noise;
            }
            labels.push(c);
        }
    }
    LabeledDataset::new(samples, labels).expect("synthetic layout")
}

fn normalize_options(name: &str) -> Result<Option<NormalizeOptions>, CliError> {
    match name {
        "none" => Ok(None),
        "variance" => Ok(Some(NormalizeOptions::default())),
        "centered" => Ok(Some(NormalizeOptions {
            center_mean: true,
            per_dataset: false,
        })),
        other => Err(input_error(format!(
            "unknown normalization {other}; expected none|variance|centered"
        ))),
    }
}

fn load_dataset(args: &DatasetArgs) -> Result<(LabeledDataset, String), CliError> {
    let (dataset, name) = if let Some(spec) = &args.synthetic {
        let (c, k, m) = parse_synthetic_spec(spec)?;
        (
            synthetic_gaussian(c, k, m, args.data_seed, args.data_seed),
            format!("synthetic-{spec}"),
        )
    } else {
        let images = args
            .train_images
            .as_ref()
            .ok_or_else(|| input_error("missing --train-images (or --synthetic)"))?;
        let labels = args
            .train_labels
            .as_ref()
            .ok_or_else(|| input_error("missing --train-labels (or --synthetic)"))?;
        for path in [images, labels] {
            if !path.exists() {
                return Err(input_error(format!("dataset file not found: {}", path.display())));
            }
        }
        let ds = load_idx(images, labels).map_err(|e| classify(e, false))?;
        let name = images
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "idx".into());
        (ds, name)
    };
    let dataset = match normalize_options(&args.normalize)? {
        Some(opts) => normalize_with(&dataset, opts).map_err(|e| classify(e, false))?,
        None => dataset,
    };
    Ok((dataset, name))
}

fn build_network(
    args: &TrainArgs,
    input_dim: usize,
) -> Result<(NetworkConfig, HyperParams, TrainOptions), CliError> {
    let file = match &args.config {
        Some(path) => {
            if !path.exists() {
                return Err(input_error(format!("config file not found: {}", path.display())));
            }
            Some(ConfigFile::load(path).map_err(|e| classify(e, false))?)
        }
        None => None,
    };
    let mut config = match &file {
        Some(f) if f.network.is_some() => f.network_config().map_err(|e| classify(e, false))?,
        _ => {
            let nodes = args.nodes.unwrap_or(4);
            let width = args.width.unwrap_or(input_dim);
            NetworkConfig::new(input_dim, vec![width; nodes], args.goal_node.unwrap_or(nodes))
        }
    };
    if let Some(goal) = args.goal_node {
        config.goal_node = goal;
    }
    if let Some(mode) = &args.mode {
        config.schedule_mode = match mode.as_str() {
            "syn" => ScheduleMode::Synchronous,
            "asyn" => ScheduleMode::Asynchronous,
            other => return Err(input_error(format!("unknown mode {other}; expected syn|asyn"))),
        };
    }
    if args.untied_backward {
        config.tie_backward = false;
    }
    if config.input_dim != input_dim {
        return Err(input_error(format!(
            "config input_dim {} does not match dataset dimension {}",
            config.input_dim, input_dim
        )));
    }

    let mut hp = match &file {
        Some(f) => f.hyper_params(&config),
        None => HyperParams::defaults(&config),
    };
    if let Some(v) = args.iters {
        hp.max_iters = v;
    }
    if let Some(v) = args.batch_fraction {
        hp.batch_fraction = v;
    }
    if let Some(v) = args.rho {
        hp.rho = v;
    }
    if let Some(v) = args.seed {
        hp.seed = v;
    }
    for spec in &args.hp {
        let (name, value) = spec
            .split_once('=')
            .ok_or_else(|| input_error(format!("--hp expects name=value, got {spec}")))?;
        let value: f64 = value
            .parse()
            .map_err(|_| input_error(format!("--hp {name}: bad value {value}")))?;
        if !hp.set_by_name(name, value) {
            return Err(input_error(format!("--hp: unknown hyperparameter {name}")));
        }
    }

    let mut opts = TrainOptions {
        checkpoint_every: args.checkpoint_every,
        probe_goal_gap: args.probe_goal_gap,
        bernoulli_p: args.bernoulli_p,
        ..Default::default()
    };
    if let Some(f) = &file {
        if let Some(section) = &f.options {
            if let Some(v) = section.inner_rounds {
                opts.stage_two.inner_rounds = v;
            }
            if let Some(v) = section.refine_steps {
                opts.stage_two.refine_steps = v;
            }
            if let Some(v) = section.bernoulli_p {
                opts.bernoulli_p = Some(v);
            }
            if let Some(v) = section.backward_gram_prev {
                opts.stage_two.backward_gram_prev = v;
            }
            if let Some(v) = section.checkpoint_every {
                opts.checkpoint_every = v;
            }
            if let Some(v) = section.probe_goal_gap {
                opts.probe_goal_gap = opts.probe_goal_gap || v;
            }
        }
    }
    if let Some(v) = args.inner_rounds {
        opts.stage_two.inner_rounds = v;
    }
    if let Some(v) = args.refine_steps {
        opts.stage_two.refine_steps = v;
    }
    if args.backward_gram_prev {
        opts.stage_two.backward_gram_prev = true;
    }
    if args.factored_targets {
        opts.stage_two.target_flavor = TargetFlavor::Factored;
    }
    Ok((config, hp, opts))
}

fn write_run_config(path: &Path, config: &NetworkConfig, hp: &HyperParams) -> std::io::Result<()> {
    // Serialized by hand so the emitted file uses the documented layout.
    let mode = match config.schedule_mode {
        ScheduleMode::Synchronous => "synchronous",
        ScheduleMode::Asynchronous => "asynchronous",
    };
    let list = |v: &[f64]| {
        v.iter()
            .map(|x| format!("{x}"))
            .collect::<Vec<_>>()
            .join(", ")
    };
    let text = format!(
        "[network]\nL = {}\ninput_dim = {}\ndims = {:?}\ngoal_node = {}\ntie_backward = {}\nschedule_mode = \"{}\"\n\n\
         [hyper]\ntau = [{}]\nlambda0 = [{}]\nlambda1 = [{}]\nlambda2 = [{}]\nlambda3 = [{}]\nlambda4 = [{}]\nlambda5 = [{}]\nlambda_f = [{}]\nlambda_b = [{}]\nrho = {}\nbatch_fraction = {}\nmax_iters = {}\nseed = {}\npenalty_kind = \"identity\"\n",
        config.levels(),
        config.input_dim,
        config.dims,
        config.goal_node,
        config.tie_backward,
        mode,
        list(&hp.tau),
        list(&hp.lambda0),
        list(&hp.lambda1),
        list(&hp.lambda2),
        list(&hp.lambda3),
        list(&hp.lambda4),
        list(&hp.lambda5),
        list(&hp.lambda_f),
        list(&hp.lambda_b),
        hp.rho,
        hp.batch_fraction,
        hp.max_iters,
        hp.seed,
    );
    std::fs::write(path, text)
}

fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let (dataset, dataset_name) = load_dataset(&args.dataset)?;
    let (config, hp, mut opts) = build_network(&args, dataset.dim())?;
    lpn_core::validate(&config, &hp).map_err(|e| classify(e, false))?;

    std::fs::create_dir_all(&args.out).map_err(|e| input_error(e.to_string()))?;
    if opts.checkpoint_every > 0 {
        opts.checkpoint_dir = Some(args.out.clone());
    }

    let per_class = args.dataset.per_class.unwrap_or_else(|| {
        dataset.class_counts.iter().copied().min().unwrap_or(0)
    });
    let train_cm = to_class_matrix(&dataset, per_class).map_err(|e| classify(e, false))?;

    let tag = config.mode_tag();
    let parsed = parse_mode_tag(&tag);
    debug_assert_eq!(
        parsed,
        Some((config.schedule_mode, config.levels(), config.goal_node))
    );
    eprintln!(
        "training {tag} on {dataset_name}: {} classes x {} samples, {} iterations",
        train_cm.classes, train_cm.per_class, hp.max_iters
    );

    let train_started = Instant::now();
    let (weights, report) =
        train_class_matrix(&config, &hp, &train_cm, &opts).map_err(|e| classify(e, true))?;
    let train_secs = train_started.elapsed().as_secs_f64();

    save_weights(&args.out.join("weights.lpnw"), &weights).map_err(|e| classify(e, true))?;
    report
        .write_csv(&args.out.join("metrics.csv"))
        .map_err(|e| classify(e, true))?;
    write_run_config(&args.out.join("run_config.toml"), &config, &hp)
        .map_err(|e| input_error(e.to_string()))?;

    // Evaluation: held-out pair when provided, else the training subset.
    let embed_started = Instant::now();
    let (eval_inputs, eval_labels): (Array2<f64>, Vec<usize>) =
        match (&args.test_images, &args.test_labels) {
            (Some(images), Some(labels)) => {
                let test = load_idx(images, labels).map_err(|e| classify(e, false))?;
                let test = match normalize_options(&args.dataset.normalize)? {
                    Some(n) => normalize_with(&test, n).map_err(|e| classify(e, false))?,
                    None => test,
                };
                let take = args.test_count.min(test.n_samples());
                (
                    test.samples.slice(ndarray::s![.., ..take]).to_owned(),
                    test.labels[..take].to_vec(),
                )
            }
            _ if args.dataset.synthetic.is_some() => {
                let (c, k, m) = parse_synthetic_spec(args.dataset.synthetic.as_ref().unwrap())?;
                let test = synthetic_gaussian(c, k, m, args.dataset.data_seed, args.dataset.data_seed + 1);
                (test.samples.clone(), test.labels.clone())
            }
            _ => (train_cm.data.clone(), train_cm.labels()),
        };
    let train_reprs = embed(&weights, &hp, &train_cm.data).map_err(|e| classify(e, true))?;
    let eval_reprs = embed(&weights, &hp, &eval_inputs).map_err(|e| classify(e, true))?;
    let embed_secs = embed_started.elapsed().as_secs_f64();

    let fit_started = Instant::now();
    let clf =
        fit_linear(&train_reprs, &train_cm.labels(), 1e-3, 200).map_err(|e| classify(e, true))?;
    let acc = accuracy(&clf, &eval_reprs, &eval_labels);
    let fit_secs = fit_started.elapsed().as_secs_f64();

    let eps_hat = if opts.probe_goal_gap {
        Some(
            goal_propagation_gap(&weights, &hp, &train_cm, config.goal_node, &opts.goal)
                .map_err(|e| classify(e, true))?
                .1,
        )
    } else {
        None
    };

    let summary = EvalSummary {
        dataset: dataset_name,
        mode: tag,
        nodes: config.levels(),
        goal_node: config.goal_node,
        accuracy: acc,
        eps_hat,
        timings: EvalTimings {
            embed_secs,
            fit_secs,
        },
    };
    let json = serde_json::to_string_pretty(&summary).expect("serializable summary");
    std::fs::write(args.out.join("eval.json"), &json).map_err(|e| input_error(e.to_string()))?;
    println!("{json}");
    eprintln!("trained in {train_secs:.1}s; artifacts in {}", args.out.display());
    Ok(())
}

fn load_checkpoint(path: &Path) -> Result<WeightSet, CliError> {
    if !path.exists() {
        return Err(input_error(format!("checkpoint not found: {}", path.display())));
    }
    load_weights(path).map_err(|e| classify(e, true))
}

fn config_for_checkpoint(
    explicit: Option<&PathBuf>,
    checkpoint: &Path,
    weights: &WeightSet,
) -> Result<(NetworkConfig, HyperParams), CliError> {
    let fallback = checkpoint.parent().map(|d| d.join("run_config.toml"));
    let path = match explicit {
        Some(p) => Some(p.clone()),
        None => fallback.filter(|p| p.exists()),
    };
    if let Some(path) = path {
        if !path.exists() {
            return Err(input_error(format!("config file not found: {}", path.display())));
        }
        let file = ConfigFile::load(&path).map_err(|e| classify(e, false))?;
        let config = file.network_config().map_err(|e| classify(e, false))?;
        let hp = file.hyper_params(&config);
        return Ok((config, hp));
    }
    // Reconstruct the architecture from the weight shapes; thresholds
    // default to the standard width-derived values.
    let input_dim = weights.forward[0].ncols();
    let dims: Vec<usize> = weights.forward.iter().map(|a| a.nrows()).collect();
    let mut config = NetworkConfig::new(input_dim, dims, weights.levels());
    config.tie_backward = weights.is_tied();
    let hp = HyperParams::defaults(&config);
    Ok((config, hp))
}

fn cmd_eval(args: EvalArgs) -> Result<(), CliError> {
    let weights = load_checkpoint(&args.checkpoint)?;
    let (config, hp) = config_for_checkpoint(args.config.as_ref(), &args.checkpoint, &weights)?;

    let dataset_args = DatasetArgs {
        train_images: args.images.clone(),
        train_labels: args.labels.clone(),
        synthetic: args.synthetic.clone(),
        data_seed: args.data_seed,
        per_class: args.per_class,
        normalize: args.normalize.clone(),
    };
    let (dataset, dataset_name) = load_dataset(&dataset_args)?;
    if dataset.dim() != config.input_dim {
        return Err(input_error(format!(
            "dataset dimension {} does not match network input {}",
            dataset.dim(),
            config.input_dim
        )));
    }
    let per_class = args.per_class.unwrap_or_else(|| {
        dataset.class_counts.iter().copied().min().unwrap_or(0)
    });
    let cm = to_class_matrix(&dataset, per_class).map_err(|e| classify(e, false))?;

    let embed_started = Instant::now();
    let reprs = embed(&weights, &hp, &cm.data).map_err(|e| classify(e, true))?;
    let embed_secs = embed_started.elapsed().as_secs_f64();
    let fit_started = Instant::now();
    let clf = fit_linear(&reprs, &cm.labels(), 1e-3, 200).map_err(|e| classify(e, true))?;
    let acc = accuracy(&clf, &reprs, &cm.labels());
    let fit_secs = fit_started.elapsed().as_secs_f64();

    let eps_hat = if args.probe_goal_gap {
        Some(
            goal_propagation_gap(&weights, &hp, &cm, config.goal_node, &GoalSolveSettings::default())
                .map_err(|e| classify(e, true))?
                .1,
        )
    } else {
        None
    };

    let summary = EvalSummary {
        dataset: dataset_name,
        mode: config.mode_tag(),
        nodes: config.levels(),
        goal_node: config.goal_node,
        accuracy: acc,
        eps_hat,
        timings: EvalTimings {
            embed_secs,
            fit_secs,
        },
    };
    println!(
        "{}",
        serde_json::to_string_pretty(&summary).expect("serializable summary")
    );
    Ok(())
}

fn cmd_inspect(args: InspectArgs) -> Result<(), CliError> {
    let weights = load_checkpoint(&args.checkpoint)?;
    println!("levels: {}", weights.levels());
    println!("tied_backward: {}", weights.is_tied());
    for (l, a) in weights.forward.iter().enumerate() {
        let frob = frob_sq(&a.view()).sqrt();
        let gram = a.dot(&a.t());
        let eye = Array2::<f64>::eye(gram.nrows());
        let coherence = frob_sq(&(&gram - &eye).view()).sqrt();
        let logdet = log_det_gram(&a.view())
            .map(|v| format!("{v:.6}"))
            .unwrap_or_else(|| "singular".into());
        println!(
            "A_{l}: shape {}x{}, frobenius {frob:.6}, coherence {coherence:.6}, log_det_gram {logdet}",
            a.nrows(),
            a.ncols()
        );
    }
    if let Some(bs) = &weights.backward {
        for (i, b) in bs.iter().enumerate() {
            println!(
                "B_{}: shape {}x{}, frobenius {:.6}",
                i + 1,
                b.nrows(),
                b.ncols(),
                frob_sq(&b.view()).sqrt()
            );
        }
    }
    // Sparsity of a random probe batch pushed through the network.
    let input_dim = weights.forward[0].ncols();
    let mut rng = ChaCha8Rng::seed_from_u64(args.probe_seed);
    let probe = Array2::from_shape_fn((input_dim, args.probe_cols), |_| {
        let v: f64 = StandardNormal.sample(&mut rng);
        v
    });
    let dims: Vec<usize> = weights.forward.iter().map(|a| a.nrows()).collect();
    let mut config = NetworkConfig::new(input_dim, dims, weights.levels());
    config.tie_backward = weights.is_tied();
    let mut hp = HyperParams::defaults(&config);
    hp.tau = vec![args.probe_tau; config.levels()];
    let reprs = embed(&weights, &hp, &probe).map_err(|e| classify(e, true))?;
    let nnz = lpn_core::objective::mean_column_nnz(&reprs);
    println!(
        "probe: {} columns, tau {}, output nnz fraction {nnz:.6}",
        args.probe_cols, args.probe_tau
    );
    Ok(())
}
