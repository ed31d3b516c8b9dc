use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use kawhi::alignment::ablation::{copy_task_fixtures, identify_critical_heads, ToyAttentionModel};
use kawhi::alignment::{parse_head_list, spatial_saliency, AttentionStates, HeadConfig};
use kawhi::credit::{response_token_weights, segment_paragraphs, whitespace_token_offsets, WeightConfig, WeightTable};
use kawhi::geometry::{RasterImage, DEFAULT_PATCH_SIZE};
use kawhi::grpo::{compute_advantages, objective_terms, RolloutGroup};
use kawhi::harness::{
    generate_task, kawhi_train_step, render_heatmap, run_experiment, RunConfig, StageTimings, ToyPolicy, WeightMode,
};
use kawhi::numerics::{tensor_read, SeededRng};
use kawhi::sguf::{sguf_pipeline, RegionsReport, SgufConfig, TokenSelection};
use kawhi::KawhiError;

/// Vision-aware paragraph reweighting for GRPO, at desk scale.
#[derive(Parser, Debug)]
#[command(name = "kawhi", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Extract key regions and sampled visual tokens from an image.
    Regions(RegionsArgs),
    /// Per-token saliency (and optional paragraph weights) from Q/K states.
    Weights(WeightsArgs),
    /// Advantages and objective for a rollout group, or one toy-policy train step.
    TrainStep(TrainStepArgs),
    /// Head-ablation study on a small cross-attention model.
    AblateHeads(AblateArgs),
    /// Run the whole pipeline on a synthetic task and write every artifact.
    Demo(DemoArgs),
}

#[derive(Args, Debug)]
struct RegionsArgs {
    /// Input image (PNG, PGM or PPM).
    image: PathBuf,
    /// Patch edge length in pixels.
    #[arg(long, default_value_t = DEFAULT_PATCH_SIZE)]
    patch_size: usize,
    /// Structural saliency threshold.
    #[arg(long, default_value_t = 0.5)]
    delta_s: f64,
    /// Luminance threshold (L* units).
    #[arg(long, default_value_t = 30.0)]
    delta_l: f64,
    /// Relative energy threshold (fraction of the median region energy).
    #[arg(long, default_value_t = 0.1)]
    beta: f64,
    /// Fraction of background tokens dropped.
    #[arg(long, default_value_t = 0.7)]
    skip: f64,
    /// Gaussian smoothing sigma.
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    /// Seed for background sampling.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output JSON path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct WeightsArgs {
    /// Query states, KTEN `[T, H_q, d]`.
    #[arg(long)]
    queries: PathBuf,
    /// Key states, KTEN `[N, H_k, d]`.
    #[arg(long)]
    keys: PathBuf,
    /// Regions JSON written by `kawhi regions`; its `selected` list is used.
    #[arg(long)]
    selection: PathBuf,
    /// Critical query heads, e.g. `0,1,3,22-27`.
    #[arg(long, default_value = "0,1,3,22-27")]
    heads: String,
    /// Number of query heads.
    #[arg(long, default_value_t = 28)]
    hq: usize,
    /// Number of key heads.
    #[arg(long, default_value_t = 4)]
    hk: usize,
    /// Response text; when given, paragraph weights are added. Tokens are
    /// whitespace words plus one token per `\n\n`, and must number T.
    #[arg(long)]
    text: Option<PathBuf>,
    /// Softmax temperature.
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    /// Uniform-mixing coefficient.
    #[arg(long, default_value_t = 0.1)]
    smoothing: f64,
    /// Lower end of the weight range.
    #[arg(long, default_value_t = 0.1)]
    w_min: f64,
    /// Upper end of the weight range.
    #[arg(long, default_value_t = 1.0)]
    w_max: f64,
    /// Output JSON path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Uniform,
    Kawhi,
}

#[derive(Args, Debug)]
struct TrainStepArgs {
    /// Rollout group as JSON lines; without it a toy-policy step runs instead.
    #[arg(long)]
    rollouts: Option<PathBuf>,
    /// Run configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for the toy-policy step (overrides the config seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Advantage weighting for the toy-policy step.
    #[arg(long, value_enum, default_value_t = ModeArg::Kawhi)]
    mode: ModeArg,
    /// Output JSON path.
    #[arg(long)]
    out: PathBuf,
    /// Write per-stage timings (JSON) here.
    #[arg(long)]
    timings: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AblateArgs {
    /// Number of heads per layer.
    #[arg(long, default_value_t = 8)]
    num_heads: usize,
    /// The head that carries the copy circuit.
    #[arg(long, default_value_t = 2)]
    routing_head: usize,
    /// Visual slots per fixture.
    #[arg(long, default_value_t = 5)]
    slots: usize,
    /// Answer classes.
    #[arg(long, default_value_t = 6)]
    classes: usize,
    /// Output scale of the distractor heads.
    #[arg(long, default_value_t = 0.01)]
    distractor_scale: f64,
    /// Number of evaluation fixtures.
    #[arg(long, default_value_t = 200)]
    fixtures: usize,
    /// Score drop (percentage points) above which a head is critical.
    #[arg(long, default_value_t = 30.0)]
    threshold: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output JSON path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct DemoArgs {
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Run configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Optimizer steps per experiment arm.
    #[arg(long, default_value_t = 3)]
    steps: usize,
    /// Learning rate override.
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Directory for regions.json, step.json, experiment.json and heatmap.ppm.
    #[arg(long, default_value = "demo_out")]
    out_dir: PathBuf,
    /// Write per-stage timings (JSON) here.
    #[arg(long)]
    timings: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Runtime(KawhiError),
}

impl From<KawhiError> for Failure {
    fn from(e: KawhiError) -> Self {
        Failure::Runtime(e)
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn usage<T>(r: kawhi::Result<T>) -> CliResult<T> {
    r.map_err(|e| Failure::Usage(e.to_string()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult {
    let text = serde_json::to_string_pretty(value).map_err(KawhiError::from)? + "\n";
    write_file(path, text.as_bytes())
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult {
    fs::write(path, bytes).map_err(|e| {
        Failure::Runtime(KawhiError::Io {
            path: path.to_path_buf(),
            source: e,
        })
    })
}

fn load_config(path: Option<&Path>) -> CliResult<RunConfig> {
    match path {
        Some(p) => Ok(RunConfig::load(p)?),
        None => Ok(RunConfig::default()),
    }
}

fn regions(args: RegionsArgs) -> CliResult {
    let cfg = SgufConfig {
        structural_saliency_threshold: args.delta_s,
        luminance_threshold: args.delta_l,
        energy_threshold: args.beta,
        skip_ratio: args.skip,
        gaussian_sigma: args.sigma,
        seed: args.seed,
        ..SgufConfig::default()
    };
    usage(cfg.validate())?;
    if args.patch_size == 0 {
        return Err(Failure::Usage("--patch-size must be positive".into()));
    }
    let img = RasterImage::load(&args.image)?;
    let out = sguf_pipeline(&img, &cfg, args.patch_size)?;
    let report = RegionsReport::from_output(&out, &cfg);
    write_file(&args.out, report.to_json()?.as_bytes())
}

#[derive(Serialize)]
struct SaliencyOutput {
    response_indices: Vec<usize>,
    alpha: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    weights: Option<WeightTable>,
}

fn weights(args: WeightsArgs) -> CliResult {
    let critical = usage(parse_head_list(&args.heads))?;
    let wcfg = WeightConfig {
        temperature: args.temperature,
        smoothing: args.smoothing,
        w_min: args.w_min,
        w_max: args.w_max,
    };
    usage(wcfg.validate())?;
    // head_dim is taken from the query file; check the head counts first
    usage(HeadConfig::new(args.hq, args.hk, 1, critical.clone()))?;
    let queries = tensor_read(&args.queries)?;
    let keys = tensor_read(&args.keys)?;
    let d = queries.shape().get(2).copied().unwrap_or(0);
    let heads = HeadConfig::new(args.hq, args.hk, d, critical)?;
    let regions = RegionsReport::load(&args.selection)?;
    let selection = TokenSelection {
        key_count: 0,
        background_sampled_count: 0,
        selected: regions.selected,
    };
    let states = AttentionStates::new(queries, keys, &heads)?;
    let alpha = spatial_saliency(&states, &heads, &selection)?;
    let weights = match &args.text {
        None => None,
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| KawhiError::Io {
                path: path.clone(),
                source: e,
            })?;
            let offsets = whitespace_token_offsets(&text);
            let seg = segment_paragraphs(&text, &offsets)?;
            let (w, tokens) = response_token_weights(&seg, &alpha, &wcfg)?;
            Some(WeightTable::new(&seg, &w, tokens))
        }
    };
    write_json(
        &args.out,
        &SaliencyOutput {
            response_indices: states.response_indices.clone(),
            alpha: alpha.alpha,
            weights,
        },
    )
}

#[derive(Serialize)]
struct GroupOutput {
    advantages: Vec<f64>,
    token_advantages: Vec<Vec<f64>>,
    weighted: bool,
    objective: f64,
    logp_gradient: Vec<Vec<f64>>,
}

fn train_step(args: TrainStepArgs) -> CliResult {
    let mut cfg = load_config(args.config.as_deref())?;
    if let Some(path) = &args.rollouts {
        let group = RolloutGroup::load(path)?;
        let adv = compute_advantages(&group, &cfg.clip)?;
        let terms = objective_terms(&group, &adv, &cfg.clip)?;
        return write_json(
            &args.out,
            &GroupOutput {
                advantages: adv.response.clone(),
                token_advantages: adv.effective().to_vec(),
                weighted: adv.weighted.is_some(),
                objective: terms.value,
                logp_gradient: terms.logp_gradient,
            },
        );
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let mode = match args.mode {
        ModeArg::Uniform => WeightMode::Uniform,
        ModeArg::Kawhi => WeightMode::Kawhi,
    };
    let mut policy = ToyPolicy::new(&cfg.heads, cfg.embed_dim, cfg.seed)?;
    let mut rng = SeededRng::new(cfg.seed);
    let batch = (0..cfg.batch_size)
        .map(|_| generate_task(rng.next_u64(), cfg.patch_size, cfg.grid_patches))
        .collect::<kawhi::Result<Vec<_>>>()?;
    let report = kawhi_train_step(&mut policy, &batch, &cfg, mode, &mut rng)?;
    report_timings(&report.timings, None, args.timings.as_deref())?;
    write_json(&args.out, &report)
}

fn ablate(args: AblateArgs) -> CliResult {
    if args.slots == 0 || args.classes == 0 || args.num_heads == 0 {
        return Err(Failure::Usage(
            "--num-heads, --slots and --classes must be positive".into(),
        ));
    }
    let model = usage(ToyAttentionModel::routed(
        args.num_heads,
        args.routing_head,
        args.slots,
        args.classes,
        args.distractor_scale,
        args.seed,
    ))?;
    let fixtures = copy_task_fixtures(args.fixtures, args.slots, args.classes, args.seed ^ 0x5eed);
    write_json(&args.out, &identify_critical_heads(&model, &fixtures, args.threshold))
}

#[derive(Serialize)]
struct TimingOutput<'a> {
    step: &'a StageTimings,
    #[serde(skip_serializing_if = "Option::is_none")]
    overhead_percent: Option<f64>,
}

fn report_timings(step: &StageTimings, overhead: Option<f64>, path: Option<&Path>) -> CliResult {
    eprintln!(
        "timings: wall {:.4}s, stages {:.4}s (sguf {:.4}, rollout {:.4}, alignment {:.4}, weighting {:.4}, update {:.4})",
        step.wall, step.stage_sum(), step.sguf, step.rollout, step.alignment, step.weighting, step.update
    );
    if let Some(o) = overhead {
        eprintln!("weighted-arm overhead vs uniform: {o:.1}%");
    }
    match path {
        Some(p) => write_json(
            p,
            &TimingOutput {
                step,
                overhead_percent: overhead,
            },
        ),
        None => Ok(()),
    }
}

fn demo(args: DemoArgs) -> CliResult {
    let mut cfg = load_config(args.config.as_deref())?;
    cfg.seed = args.seed;
    if let Some(lr) = args.learning_rate {
        cfg.learning_rate = lr;
    }
    usage(cfg.validate())?;
    fs::create_dir_all(&args.out_dir).map_err(|e| KawhiError::Io {
        path: args.out_dir.clone(),
        source: e,
    })?;

    let task = generate_task(cfg.seed, cfg.patch_size, cfg.grid_patches)?;
    let sguf_cfg = SgufConfig {
        seed: cfg.sguf.seed ^ task.seed,
        ..cfg.sguf.clone()
    };
    let regions = sguf_pipeline(&task.image, &sguf_cfg, cfg.patch_size)?;
    let regions_report = RegionsReport::from_output(&regions, &sguf_cfg);
    write_file(&args.out_dir.join("regions.json"), regions_report.to_json()?.as_bytes())?;

    let mut policy = ToyPolicy::new(&cfg.heads, cfg.embed_dim, cfg.seed)?;
    let mut rng = SeededRng::new(cfg.seed);
    let step = kawhi_train_step(
        &mut policy,
        std::slice::from_ref(&task),
        &cfg,
        WeightMode::Kawhi,
        &mut rng,
    )?;
    write_json(&args.out_dir.join("step.json"), &step)?;

    let first = &step.tasks[0].responses[0];
    let heat = render_heatmap(&task.image, &regions.partition, &regions.selection, first)?;
    write_file(&args.out_dir.join("heatmap.ppm"), &heat.to_pnm())?;

    let experiment = run_experiment(&cfg, args.steps, &[cfg.seed])?;
    write_json(&args.out_dir.join("experiment.json"), &experiment)?;

    println!(
        "task seed {}: {} strokes, key patches {:?}",
        task.seed,
        task.answer(),
        task.key_patches
    );
    println!(
        "regions: {} total, {} key, {} tokens selected",
        regions.partition.regions.len(),
        regions.partition.key_regions().count(),
        regions.selection.len()
    );
    for (g, r) in step.tasks[0].responses.iter().enumerate() {
        let w: Vec<String> = r.paragraphs.iter().map(|p| format!("{:.4}", p.w)).collect();
        println!(
            "response {g}: reward {} advantage {:+.4} paragraph weights [{}]",
            r.reward,
            r.advantage,
            w.join(", ")
        );
    }
    for arm in &experiment.arms {
        let curve: Vec<String> = arm.eval_reward.iter().map(|x| format!("{x:.4}")).collect();
        println!("{} eval reward: {}", arm.name, curve.join(" "));
    }
    println!("artifacts written to {}", args.out_dir.display());
    report_timings(
        &step.timings,
        experiment.timings.overhead_percent,
        args.timings.as_deref(),
    )
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Regions(a) => regions(a),
        Command::Weights(a) => weights(a),
        Command::TrainStep(a) => train_step(a),
        Command::AblateHeads(a) => ablate(a),
        Command::Demo(a) => demo(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
