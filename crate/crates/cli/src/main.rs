//! Command-line pipeline: dataset generation, score-model training, reverse
//! diffusion sampling, MMD evaluation, the scalar-mixture testbed, and solver
//! benchmarks. Every command is deterministic under a fixed seed; effective
//! configs are dumped next to every artifact.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use config::{DatasetKind, RunConfig};
use gdiff_core::autodiff::{jacobian_frobenius_sq, Tape};
use gdiff_core::error::TrainError;
use gdiff_core::eval::{evaluate, orbit_breakdown_table, DEFAULT_MMD_SIGMA};
use gdiff_core::graph::{
    generate_community_small, generate_grid, load_edge_list, save_graphs, save_graphs_json,
    GraphDataset,
};
use gdiff_core::models::{
    assign_named_params, load_checkpoint, save_checkpoint, Checkpoint, ParamSet, ScoreModelA,
    ScoreModelX,
};
use gdiff_core::rng::SeedStream;
use gdiff_core::sde::SdeSpec;
use gdiff_core::solvers::{
    generate, DependencyMode, ModelScoreSource, SamplerConfig, SolverKind,
};
use gdiff_core::toy::{
    analytic_toy_source, format_point_cloud, format_toy_summary, run_toy, toy_spec,
    GaussMixture2D, ToyMlpConfig, ToyModels, ToyTrainSettings,
};
use gdiff_core::training::{format_metrics_log, train, CheckpointSink};

const EXIT_CONFIG: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_DIVERGED: u8 = 4;

#[derive(Parser)]
#[command(name = "gdiff", about = "score-based graph generation via a system of SDEs")]
struct Cli {
    /// Worker thread cap (default: available cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the two partial-score models on a dataset.
    Train(TrainArgs),
    /// Sample graphs from a trained checkpoint.
    Sample(SampleArgs),
    /// Compare a generated graph file against a test graph file with MMD.
    Eval(EvalArgs),
    /// Run the scalar two-variable mixture testbed.
    Toy(ToyArgs),
    /// Benchmark solver cost (score evaluations and wall clock) and the
    /// Jacobian-complexity diagnostic.
    Bench(BenchArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 8)]
    count: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    solver: Option<String>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    snr: Option<f64>,
    #[arg(long)]
    scale_eps: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Sample with the EMA shadow parameters when the checkpoint has them.
    #[arg(long, default_value_t = false)]
    ema: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    generated: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long, default_value_t = DEFAULT_MMD_SIGMA)]
    sigma: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ToyArgs {
    /// joint | sequential | independent | all
    #[arg(long, default_value = "all")]
    mode: String,
    /// analytic | trained
    #[arg(long, default_value = "analytic")]
    source: String,
    #[arg(long, default_value_t = 8192)]
    samples: usize,
    #[arg(long, default_value_t = 1000)]
    steps: usize,
    #[arg(long, default_value = "em")]
    solver: String,
    #[arg(long, default_value_t = 0.05)]
    snr: f64,
    #[arg(long, default_value_t = 1.0)]
    scale_eps: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Reduced training epochs (500) for the trained source.
    #[arg(long, default_value_t = false)]
    fast: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    steps: usize,
    #[arg(long, default_value_t = 4)]
    count: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Hutchinson probes for the Jacobian diagnostic (0 disables it).
    #[arg(long, default_value_t = 0)]
    jacobian_probes: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    let result = match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Sample(args) => cmd_sample(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Toy(args) => cmd_toy(args),
        Command::Bench(args) => cmd_bench(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<CliError>().map(|c| c.code).unwrap_or(EXIT_CONFIG);
            ExitCode::from(code)
        }
    }
}

#[derive(Debug)]
struct CliError {
    code: u8,
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "exit code {}", self.code)
    }
}

impl std::error::Error for CliError {}

fn fail(code: u8, err: anyhow::Error) -> anyhow::Error {
    err.context(CliError { code })
}

fn out_dir(cfg_dir: Option<&Path>, flag: Option<&Path>) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| std::env::var_os("GDIFF_OUT_DIR").map(PathBuf::from))
        .or_else(|| cfg_dir.map(Path::to_path_buf))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn build_dataset(cfg: &RunConfig) -> Result<GraphDataset> {
    let stream = SeedStream::new(cfg.seed);
    let mut ds = match cfg.dataset.kind {
        DatasetKind::CommunitySmall => {
            let params = cfg.dataset.community.unwrap_or_default();
            generate_community_small(cfg.dataset.count, &params, &mut stream.noise("dataset"))
                .map_err(|e| fail(EXIT_DATA, anyhow::anyhow!("{e}")))?
        }
        DatasetKind::Grid => generate_grid(cfg.dataset.count, &mut stream.noise("dataset"))
            .map_err(|e| fail(EXIT_DATA, anyhow::anyhow!("{e}")))?,
        DatasetKind::File => {
            let path = cfg.dataset.path.as_ref().expect("validated");
            load_edge_list(path).map_err(|e| fail(EXIT_DATA, anyhow::anyhow!("{e}")))?
        }
    };
    ds.assign_split(cfg.dataset.split_seed);
    Ok(ds)
}

fn init_models(cfg: &RunConfig, feature_dim: usize) -> (ScoreModelX, ScoreModelA) {
    let stream = SeedStream::new(cfg.seed);
    let mut init = stream.noise("init");
    let mx = ScoreModelX::new(cfg.model_x_config(feature_dim), &mut init);
    let ma = ScoreModelA::new(cfg.model_a_config(feature_dim), &mut init);
    (mx, ma)
}

fn specs(cfg: &RunConfig) -> Result<(SdeSpec, SdeSpec)> {
    Ok((
        cfg.sde_x.to_spec().map_err(|e| fail(EXIT_CONFIG, e))?,
        cfg.sde_a.to_spec().map_err(|e| fail(EXIT_CONFIG, e))?,
    ))
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let mut cfg = RunConfig::load(&args.config).map_err(|e| fail(EXIT_CONFIG, e))?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(epochs) = args.epochs {
        cfg.train.epochs = epochs;
    }
    let dir = out_dir(cfg.out_dir.as_deref(), args.out.as_deref());
    std::fs::create_dir_all(&dir)?;

    let dataset = build_dataset(&cfg)?;
    let train_set = dataset.train_view();
    let (spec_x, spec_a) = specs(&cfg)?;
    let (mut mx, mut ma) = init_models(&cfg, dataset.f);
    let echo = cfg.echo_json();
    std::fs::write(dir.join("effective_config.json"), &echo)?;

    let sink = cfg.train.checkpoint_every.map(|every| CheckpointSink {
        dir: dir.clone(),
        every,
        config_json: echo.clone(),
    });
    let started = Instant::now();
    let out = train(
        &train_set,
        &mut mx,
        &mut ma,
        &spec_x,
        &spec_a,
        &cfg.to_loss_config(),
        &cfg.to_train_config(),
        sink.as_ref(),
    )
    .map_err(|e| match e {
        TrainError::DivergenceDetected { .. } => fail(EXIT_DIVERGED, anyhow::anyhow!("{e}")),
        other => fail(EXIT_DATA, anyhow::anyhow!("{other}")),
    })?;

    let mut params = Vec::new();
    mx.visit_params(&mut |name, t| params.push((format!("x.{name}"), t.detach())));
    ma.visit_params(&mut |name, t| params.push((format!("a.{name}"), t.detach())));
    let ema = match &out.ema {
        Some(shadows) => params
            .iter()
            .map(|(n, _)| n.clone())
            .zip(shadows.iter().cloned())
            .collect(),
        None => Vec::new(),
    };
    let ckpt = Checkpoint {
        config_json: echo,
        step: cfg.train.epochs as u64,
        rng_seed: out.rng_seed,
        rng_word_pos: out.rng_word_pos,
        params,
        ema,
    };
    save_checkpoint(&ckpt, &dir.join("checkpoint.ckpt"))
        .map_err(|e| fail(EXIT_DATA, anyhow::anyhow!("{e}")))?;
    std::fs::write(dir.join("metrics.log"), format_metrics_log(&out.history))?;
    if let Some(last) = out.history.last() {
        println!(
            "trained {} epochs in {:.1}s (loss_x {:.4}, loss_a {:.4})",
            out.history.len(),
            started.elapsed().as_secs_f64(),
            last.loss_x,
            last.loss_a
        );
    } else {
        println!("trained 0 epochs (checkpoint holds initialized weights)");
    }
    println!("checkpoint: {}", dir.join("checkpoint.ckpt").display());
    Ok(())
}

fn load_models_from_checkpoint(
    cfg: &RunConfig,
    path: &Path,
    feature_dim: usize,
    use_ema: bool,
) -> Result<(ScoreModelX, ScoreModelA)> {
    let ckpt = load_checkpoint(path).map_err(|e| fail(EXIT_DATA, anyhow::anyhow!("{e}")))?;
    let saved: RunConfig = serde_json::from_str(&ckpt.config_json)
        .context("checkpoint carries an unreadable config echo")
        .map_err(|e| fail(EXIT_DATA, e))?;
    // compatibility: the sections that shape the models and the diffusion
    // must match; training/sampling knobs and seeds are free to differ
    let fingerprint = |c: &RunConfig| {
        serde_json::to_string(&(
            &c.dataset,
            &c.sde_x,
            &c.sde_a,
            &c.model_x,
            &c.model_a,
        ))
        .expect("serializable")
    };
    if fingerprint(cfg) != fingerprint(&saved) {
        return Err(fail(
            EXIT_CONFIG,
            anyhow::anyhow!(
                "checkpoint/config mismatch: checkpoint was trained under a different config"
            ),
        ));
    }
    let (mut mx, mut ma) = init_models(cfg, feature_dim);
    let source = if use_ema && !ckpt.ema.is_empty() { &ckpt.ema } else { &ckpt.params };
    assign_named_params(&mut mx, source, "x.")
        .map_err(|e| fail(EXIT_DATA, anyhow::anyhow!("{e}")))?;
    assign_named_params(&mut ma, source, "a.")
        .map_err(|e| fail(EXIT_DATA, anyhow::anyhow!("{e}")))?;
    Ok((mx, ma))
}

fn cmd_sample(args: SampleArgs) -> Result<()> {
    let mut cfg = RunConfig::load(&args.config).map_err(|e| fail(EXIT_CONFIG, e))?;
    let seed = args.seed.unwrap_or(cfg.seed);
    if let Some(solver) = &args.solver {
        cfg.sampler.solver = parse_solver(solver).map_err(|e| fail(EXIT_CONFIG, e))?;
    }
    if let Some(steps) = args.steps {
        cfg.sampler.steps = steps;
    }
    if let Some(snr) = args.snr {
        cfg.sampler.snr = snr;
    }
    if let Some(se) = args.scale_eps {
        cfg.sampler.scale_eps = se;
    }
    let dir = out_dir(cfg.out_dir.as_deref(), args.out.as_deref());
    std::fs::create_dir_all(&dir)?;

    let dataset = build_dataset(&cfg)?;
    let train_set = dataset.train_view();
    let (mx, ma) = load_models_from_checkpoint(&cfg, &args.checkpoint, dataset.f, args.ema)?;
    let (spec_x, spec_a) = specs(&cfg)?;
    let source = ModelScoreSource::new(&mx, &ma, spec_x, spec_a);
    let sampler = cfg.sampler.to_sampler();
    let (graphs, meta) =
        generate(&source, &sampler, &spec_x, &spec_a, &train_set, args.count, seed)
            .map_err(|e| fail(EXIT_DATA, anyhow::anyhow!("{e}")))?;
    let out_set = GraphDataset::from_graphs(graphs);
    save_graphs(&out_set, &dir.join("generated.txt"))
        .map_err(|e| fail(EXIT_DATA, anyhow::anyhow!("{e}")))?;
    save_graphs_json(&out_set, &dir.join("generated.json"))
        .map_err(|e| fail(EXIT_DATA, anyhow::anyhow!("{e}")))?;
    std::fs::write(dir.join("run_metadata.json"), serde_json::to_string_pretty(&meta)?)?;
    std::fs::write(dir.join("effective_config.json"), cfg.echo_json())?;
    println!(
        "sampled {} graphs with {} ({} score evaluations, {:.1}s)",
        meta.count, meta.solver, meta.score_evaluations, meta.wall_clock_secs
    );
    println!("graphs: {}", dir.join("generated.txt").display());
    Ok(())
}

fn parse_solver(name: &str) -> Result<SolverKind> {
    Ok(match name {
        "em" => SolverKind::Em,
        "reverse" => SolverKind::Reverse,
        "pc" | "pc-em" => SolverKind::PcEm,
        "pc-reverse" => SolverKind::PcReverse,
        "s4" => SolverKind::S4,
        other => bail!("unknown solver '{other}' (em, reverse, pc-em, pc-reverse, s4)"),
    })
}

fn parse_mode(name: &str) -> Result<DependencyMode> {
    Ok(match name {
        "joint" => DependencyMode::Joint,
        "sequential" | "seq" => DependencyMode::Sequential,
        "independent" | "indep" => DependencyMode::Independent,
        other => bail!("unknown mode '{other}' (joint, sequential, independent)"),
    })
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let generated =
        load_edge_list(&args.generated).map_err(|e| fail(EXIT_DATA, anyhow::anyhow!("{e}")))?;
    let test = load_edge_list(&args.test).map_err(|e| fail(EXIT_DATA, anyhow::anyhow!("{e}")))?;
    let report = evaluate(&generated.graphs, &test.graphs, args.sigma)
        .map_err(|e| fail(EXIT_DATA, anyhow::anyhow!("{e}")))?;
    let kv = report.to_key_value();
    print!("{kv}");
    if let Some(out) = &args.out {
        if let Some(parent) = out.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        std::fs::write(out, &kv)?;
        let breakdown = orbit_breakdown_table(&generated.graphs)
            .map_err(|e| fail(EXIT_DATA, anyhow::anyhow!("{e}")))?;
        std::fs::write(out.with_extension("orbits.tsv"), breakdown)?;
    }
    Ok(())
}

fn cmd_toy(args: ToyArgs) -> Result<()> {
    let dir = out_dir(None, args.out.as_deref());
    std::fs::create_dir_all(&dir)?;
    let mix = GaussMixture2D::default();
    let spec = toy_spec();
    let solver = parse_solver(&args.solver).map_err(|e| fail(EXIT_CONFIG, e))?;
    let cfg = SamplerConfig {
        solver,
        steps: args.steps,
        snr: args.snr,
        scale_eps: args.scale_eps,
        mode: DependencyMode::Joint,
        n_corrector_steps: 1,
        t_eps: 1e-3,
    };
    let modes: Vec<DependencyMode> = if args.mode == "all" {
        vec![DependencyMode::Joint, DependencyMode::Sequential, DependencyMode::Independent]
    } else {
        vec![parse_mode(&args.mode).map_err(|e| fail(EXIT_CONFIG, e))?]
    };

    let trained = match args.source.as_str() {
        "analytic" => None,
        "trained" => {
            let settings = ToyTrainSettings {
                epochs: if args.fast { 500 } else { 5000 },
                seed: args.seed,
                ..Default::default()
            };
            println!(
                "training toy models ({} epochs x 4 models, batch {})...",
                settings.epochs, settings.batch
            );
            let started = Instant::now();
            let models = ToyModels::train(&mix, &spec, ToyMlpConfig::paper_scale(2), &settings);
            println!("toy training took {:.1}s", started.elapsed().as_secs_f64());
            Some(models)
        }
        other => {
            return Err(fail(
                EXIT_CONFIG,
                anyhow::anyhow!("unknown source '{other}' (analytic, trained)"),
            ))
        }
    };

    for mode in modes {
        let started = Instant::now();
        let (samples, summary) = match &trained {
            Some(models) => {
                let source = models.source();
                run_toy(mode, &source, &mix, &spec, args.samples, &cfg, args.seed)
                    .map_err(|e| fail(EXIT_DATA, anyhow::anyhow!("{e}")))?
            }
            None => {
                let source = analytic_toy_source(mix, spec);
                run_toy(mode, &source, &mix, &spec, args.samples, &cfg, args.seed)
                    .map_err(|e| fail(EXIT_DATA, anyhow::anyhow!("{e}")))?
            }
        };
        let tag = match mode {
            DependencyMode::Joint => "joint",
            DependencyMode::Sequential => "sequential",
            DependencyMode::Independent => "independent",
        };
        std::fs::write(dir.join(format!("toy_{tag}.xy")), format_point_cloud(&samples))?;
        std::fs::write(dir.join(format!("toy_{tag}_summary.txt")), format_toy_summary(&summary))?;
        println!(
            "{tag}: within-mode corr {:+.3}, modes {}/{} ({:.1}s)",
            summary.within_mode_corr,
            summary.mode_counts[0],
            summary.mode_counts[1],
            started.elapsed().as_secs_f64()
        );
    }
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> Result<()> {
    let cfg = RunConfig::load(&args.config).map_err(|e| fail(EXIT_CONFIG, e))?;
    let dir = out_dir(cfg.out_dir.as_deref(), args.out.as_deref());
    std::fs::create_dir_all(&dir)?;
    let dataset = build_dataset(&cfg)?;
    let train_set = dataset.train_view();
    let (spec_x, spec_a) = specs(&cfg)?;
    let (mx, ma) = match &args.checkpoint {
        Some(path) => load_models_from_checkpoint(&cfg, path, dataset.f, false)?,
        None => init_models(&cfg, dataset.f),
    };

    let mut lines = vec!["solver\tscore_evals\twall_secs".to_string()];
    for solver in [SolverKind::Em, SolverKind::Reverse, SolverKind::PcEm, SolverKind::S4] {
        let source = ModelScoreSource::new(&mx, &ma, spec_x, spec_a);
        let sampler = SamplerConfig {
            solver,
            steps: args.steps,
            snr: cfg.sampler.snr,
            scale_eps: cfg.sampler.scale_eps,
            mode: DependencyMode::Joint,
            n_corrector_steps: 1,
            t_eps: cfg.sampler.t_eps,
        };
        let (_, meta) =
            generate(&source, &sampler, &spec_x, &spec_a, &train_set, args.count, args.seed)
                .map_err(|e| fail(EXIT_DATA, anyhow::anyhow!("{e}")))?;
        println!(
            "{:<10} evals {:>8}  wall {:>8.2}s",
            meta.solver, meta.score_evaluations, meta.wall_clock_secs
        );
        lines.push(format!(
            "{}\t{}\t{:.4}",
            meta.solver, meta.score_evaluations, meta.wall_clock_secs
        ));
    }
    std::fs::write(dir.join("solver_bench.tsv"), lines.join("\n") + "\n")?;

    if args.jacobian_probes > 0 {
        // squared Frobenius norm of each model's Jacobian with respect to its
        // own component, over a time grid
        let g = &train_set.graphs[0];
        let mut out = vec!["t\tjac_x\tjac_a".to_string()];
        let stream = SeedStream::new(args.seed);
        let mut noise = stream.noise("jacobian");
        for i in 1..=9 {
            let t = i as f64 / 10.0;
            let jx = jacobian_frobenius_sq(
                |tape: &Tape, x| {
                    mx.forward(tape, x, &g.a, &g.mask, t, &spec_x).map_err(|e| match e {
                        gdiff_core::error::ModelError::Autodiff(a) => a,
                        other => panic!("{other}"),
                    })
                },
                &g.x,
                args.jacobian_probes,
                &mut noise,
            )?;
            let ja = jacobian_frobenius_sq(
                |tape: &Tape, a| {
                    ma.forward(tape, &g.x, a, &g.mask, t, &spec_a).map_err(|e| match e {
                        gdiff_core::error::ModelError::Autodiff(a) => a,
                        other => panic!("{other}"),
                    })
                },
                &g.a,
                args.jacobian_probes,
                &mut noise,
            )?;
            println!("t={t:.1}  jac_x={jx:.3e}  jac_a={ja:.3e}");
            out.push(format!("{t:.1}\t{jx:.6e}\t{ja:.6e}"));
        }
        std::fs::write(dir.join("jacobian_diag.tsv"), out.join("\n") + "\n")?;
    }
    Ok(())
}
