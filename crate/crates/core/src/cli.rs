//! Command-line front end. Every subcommand reads and writes the same run
//! layout as a full `run`, so stages can be executed one at a time.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::artifact;
use crate::clustering::write_summary;
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::pipeline::{self, stage_seed, Arm, Layout, PipelineConfig, Status};
use crate::propagation::PropagationParams;
use crate::synthgen::{generate, write_generated, SyntheticSpec, PRESETS};
use crate::tuning::BestRecord;

#[derive(Debug, Parser)]
#[command(
    name = "cluster-augment",
    version,
    about = "Cluster-based label propagation for sparsely labeled text corpora"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML run configuration.
    #[arg(long, short, global = true)]
    pub config: Option<PathBuf>,
    /// Override a config key, e.g. `--set tuning.min_coverage=0.3`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Same as `--set seed=N`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Same as `--set workers=N`.
    #[arg(long, env = "CLUSTER_AUGMENT_WORKERS", global = true)]
    pub workers: Option<usize>,
    /// Same as `--set output_dir=DIR`.
    #[arg(long, global = true)]
    pub output_dir: Option<PathBuf>,
    /// Same as `--set input.labeled=FILE`.
    #[arg(long, global = true)]
    pub labeled: Option<PathBuf>,
    /// Same as `--set input.unlabeled=FILE`.
    #[arg(long, global = true)]
    pub unlabeled: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GoalArgs {
    /// Goal to process; repeatable. Defaults to the configured goals.
    #[arg(long = "goal")]
    pub goals: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic corpus and its ground truth.
    Generate {
        #[arg(long, default_value = "sep2", value_parser = clap::builder::PossibleValuesParser::new(PRESETS))]
        preset: String,
        #[arg(long, default_value = "data")]
        out: PathBuf,
    },
    /// Clean and embed the input corpora.
    Embed,
    /// Fit k-means on a goal's clustering input.
    Cluster {
        #[arg(long)]
        goal: String,
        #[arg(long, short)]
        k: usize,
    },
    /// Grid-search propagation parameters on masked validation labels.
    Tune(GoalArgs),
    /// Propagate synthetic labels with tuned or given parameters.
    Augment {
        #[command(flatten)]
        goals: GoalArgs,
        /// `K,RADIUS,THRESHOLD`, bypassing the tuned parameters.
        #[arg(long, value_name = "K,R,T")]
        params: Option<String>,
    },
    /// Train original and augmented classifiers on all labels.
    Train(GoalArgs),
    /// Bootstrap-compare the two arms.
    Evaluate(GoalArgs),
    /// Render summary CSVs from stored artifacts.
    Report,
    /// Run every stage for every goal.
    Run {
        /// Print the effective configuration and exit.
        #[arg(long)]
        print_config: bool,
    },
}

fn parse_params(text: &str) -> Result<PropagationParams> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    let bad = || Error::Config(format!("--params expects K,RADIUS,THRESHOLD, got {text:?}"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let k = parts[0].parse().map_err(|_| bad())?;
    let r = parts[1].parse().map_err(|_| bad())?;
    let t = parts[2].parse().map_err(|_| bad())?;
    PropagationParams::new(k, r, t).map_err(|e| Error::Config(e.to_string()))
}

impl GlobalArgs {
    fn overrides(&self) -> Vec<String> {
        let quote = |p: &PathBuf| toml::Value::String(p.display().to_string()).to_string();
        let mut out = self.overrides.clone();
        if let Some(s) = self.seed {
            out.push(format!("seed={s}"));
        }
        if let Some(w) = self.workers {
            out.push(format!("workers={w}"));
        }
        if let Some(d) = &self.output_dir {
            out.push(format!("output_dir={}", quote(d)));
        }
        if let Some(p) = &self.labeled {
            out.push(format!("input.labeled={}", quote(p)));
        }
        if let Some(p) = &self.unlabeled {
            out.push(format!("input.unlabeled={}", quote(p)));
        }
        out
    }

    pub fn load_config(&self) -> Result<PipelineConfig> {
        match &self.config {
            Some(path) => PipelineConfig::load(path, &self.overrides()),
            None => PipelineConfig::from_toml_with("", &self.overrides()),
        }
    }
}

struct Context {
    config: PipelineConfig,
    layout: Layout,
}

impl Context {
    fn corpus(&self) -> Result<Corpus> {
        pipeline::read_corpus(&self.layout)
    }

    fn goals(&self, args: &GoalArgs, corpus: &Corpus) -> Result<Vec<String>> {
        let goals = if args.goals.is_empty() {
            pipeline::resolve_goals(&self.config, corpus)
        } else {
            args.goals.clone()
        };
        for g in &goals {
            corpus.require_goal(g)?;
        }
        Ok(goals)
    }

    fn seed(&self, stage: &str, goal: &str) -> u64 {
        stage_seed(self.config.seed, stage, Some(goal))
    }

    fn prepared(&self, corpus: &Corpus, goal: &str) -> Result<pipeline::Prepared> {
        pipeline::ensure_prepared(
            &self.layout,
            &self.config,
            corpus,
            goal,
            self.seed("split", goal),
        )
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.3}"))
}

fn execute(cli: &Cli) -> Result<i32> {
    if let Command::Generate { preset, out } = &cli.command {
        let mut spec = SyntheticSpec::preset(preset).expect("validated by clap");
        if let Some(seed) = cli.global.seed {
            spec = spec.with_seed(seed);
        }
        let (corpus, truth) = generate(&spec)?;
        write_generated(out, &corpus, &truth)?;
        let counts = corpus.label_counts(&corpus.goals()[0]);
        println!(
            "wrote {} documents ({} labeled for {}) to {}",
            corpus.len(),
            counts.total_labeled(),
            corpus.goals()[0],
            out.display()
        );
        return Ok(0);
    }

    let config = cli.global.load_config()?;
    if let Command::Run { print_config: true } = cli.command {
        print!("{}", config.to_toml());
        return Ok(0);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {} workers: {e}", config.workers)))?;
    let ctx = Context {
        layout: Layout::new(&config.output_dir),
        config,
    };
    pool.install(|| dispatch(&cli.command, &ctx))
}

fn dispatch(command: &Command, ctx: &Context) -> Result<i32> {
    let layout = &ctx.layout;
    let config = &ctx.config;
    match command {
        Command::Generate { .. } => unreachable!("handled before config loading"),
        Command::Embed => {
            let corpus = pipeline::load_inputs(config)?;
            pipeline::write_corpus(layout, &corpus)?;
            let seed = stage_seed(config.seed, "embed", None);
            let (matrix, model) = pipeline::embed(&corpus, &config.embedding, seed)?;
            pipeline::write_embeddings(layout, &matrix, model.as_ref())?;
            println!(
                "embedded {} documents ({} backend, dim {}, {} flagged) into {}",
                matrix.len(),
                matrix.backend(),
                matrix.dim(),
                matrix.flagged().count(),
                layout.embeddings().display()
            );
        }
        Command::Cluster { goal, k } => {
            let corpus = ctx.corpus()?;
            let embeddings = pipeline::read_embeddings(layout)?;
            let prepared = ctx.prepared(&corpus, goal)?;
            let model = pipeline::cluster(
                layout,
                config,
                &prepared,
                &embeddings,
                goal,
                *k,
                ctx.seed("tune", goal),
            )?;
            write_summary(&model, std::io::stdout().lock()).map_err(|e| Error::io("stdout", e))?;
        }
        Command::Tune(args) => {
            let corpus = ctx.corpus()?;
            let embeddings = pipeline::read_embeddings(layout)?;
            for goal in ctx.goals(args, &corpus)? {
                let prepared = ctx.prepared(&corpus, &goal)?;
                let tuned = pipeline::tune(
                    config,
                    &prepared,
                    &embeddings,
                    &goal,
                    ctx.seed("tune", &goal),
                )?;
                pipeline::write_tuned(layout, &goal, &tuned)?;
                let b = &tuned.validation.best;
                println!(
                    "{goal}: {} combos; best K={} radius={}% threshold={}% accuracy={} sensitivity={} coverage={:.2}; test accuracy={} sensitivity={}",
                    tuned.validation.combos.len(),
                    b.params.clusters,
                    b.params.radius_pct,
                    b.params.threshold_pct,
                    fmt_opt(b.accuracy),
                    fmt_opt(b.sensitivity),
                    b.coverage,
                    fmt_opt(tuned.test.accuracy),
                    fmt_opt(tuned.test.sensitivity),
                );
            }
        }
        Command::Augment { goals, params } => {
            let given = params.as_deref().map(parse_params).transpose()?;
            let corpus = ctx.corpus()?;
            let embeddings = pipeline::read_embeddings(layout)?;
            for goal in ctx.goals(goals, &corpus)? {
                let params = match given {
                    Some(p) => p,
                    None => {
                        let best: BestRecord = artifact::read_json(&layout.best(&goal), "tune")?;
                        PropagationParams::new(
                            best.clusters,
                            best.distance_pct,
                            best.threshold_pct,
                        )?
                    }
                };
                let prepared = ctx.prepared(&corpus, &goal)?;
                let augmented = pipeline::augment_goal(
                    config,
                    &prepared,
                    &embeddings,
                    &params,
                    &goal,
                    ctx.seed("augment", &goal),
                )?;
                pipeline::write_augmented(layout, &goal, &augmented)?;
                let t = &augmented.report.totals;
                println!(
                    "{goal}: K={} radius={}% threshold={}% -> {} synthetic positives, {} synthetic negatives, {} neighborhoods skipped",
                    params.clusters, params.radius_pct, params.threshold_pct, t.synthetic_1, t.synthetic_0, t.skipped
                );
                for w in &augmented.report.warnings {
                    eprintln!("warning: {w}");
                }
            }
        }
        Command::Train(args) => {
            let corpus = ctx.corpus()?;
            let embeddings = pipeline::read_embeddings(layout)?;
            for goal in ctx.goals(args, &corpus)? {
                let augmented = pipeline::read_augmented(layout, &goal)?;
                let models = pipeline::train_arms(
                    config,
                    &augmented.corpus,
                    &embeddings,
                    &goal,
                    ctx.seed("train", &goal),
                )?;
                pipeline::write_models(layout, &goal, &models)?;
                for (arm, m) in [(Arm::Original, &models.0), (Arm::Augmented, &models.1)] {
                    println!(
                        "{goal}: {} classifier, final training loss {:.4}",
                        arm.name(),
                        m.loss_curve.last().copied().unwrap_or(f64::NAN)
                    );
                }
            }
        }
        Command::Evaluate(args) => {
            let corpus = ctx.corpus()?;
            let embeddings = pipeline::read_embeddings(layout)?;
            for goal in ctx.goals(args, &corpus)? {
                let augmented = pipeline::read_augmented(layout, &goal)?;
                let report = pipeline::evaluate(
                    config,
                    &corpus,
                    &augmented.corpus,
                    &embeddings,
                    &goal,
                    ctx.seed("bootstrap", &goal),
                )?;
                pipeline::write_bootstrap(layout, &goal, &report)?;
                println!(
                    "{goal}: B={} original acc={:.3} sens={:.3}; augmented acc={:.3} sens={:.3}; p(acc)={} p(sens)={}",
                    report.iterations,
                    report.original.mean_accuracy,
                    report.original.mean_sensitivity,
                    report.augmented.mean_accuracy,
                    report.augmented.mean_sensitivity,
                    fmt_opt(report.accuracy_test.map(|t| t.p)),
                    fmt_opt(report.sensitivity_test.map(|t| t.p)),
                );
            }
        }
        Command::Report => {
            let goals = pipeline::discover_goals(layout)?;
            for path in pipeline::render_reports(layout, &goals)? {
                println!("{}", path.display());
            }
        }
        Command::Run { .. } => {
            let manifest = pipeline::run_pipeline(config)?;
            for (goal, g) in &manifest.goals {
                match (&g.comparison, &g.cause) {
                    (Some(row), _) => println!(
                        "{goal}: original acc={:.3} sens={:.3}; augmented acc={:.3} sens={:.3}; p(acc)={} p(sens)={}",
                        row.orig_acc,
                        row.orig_sens,
                        row.aug_acc,
                        row.aug_sens,
                        fmt_opt(row.p_acc),
                        fmt_opt(row.p_sens)
                    ),
                    (None, Some(cause)) => {
                        eprintln!("{goal}: failed in {}: {cause}", g.failed_stage.as_deref().unwrap_or("?"))
                    }
                    (None, None) => {}
                }
            }
            println!("manifest: {}", layout.manifest().display());
            if manifest.status == Status::Partial {
                return Ok(4);
            }
        }
    }
    Ok(0)
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main() -> i32 {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
