use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

use nextpoi::config::{Aggregation, EpsilonMode, PipelineConfig, TzMode};
use nextpoi::pipeline::{self, Artifacts};
use nextpoi::{Error, Result};

#[derive(Parser)]
#[command(name = "nextpoi", version, about = "Next-POI recommendation pipeline")]
struct Cli {
    /// TOML config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    cmd: Cmd,
}

fn kebab<T: DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

#[derive(Args, Default)]
struct CorpusFlags {
    #[arg(long)]
    min_poi_visits: Option<usize>,
    #[arg(long)]
    min_traj_len: Option<usize>,
    #[arg(long)]
    min_user_trajs: Option<usize>,
    #[arg(long)]
    window_hours: Option<i64>,
    #[arg(long)]
    train_frac: Option<f64>,
    /// local | utc
    #[arg(long, value_parser = kebab::<TzMode>)]
    tz_mode: Option<TzMode>,
}

#[derive(Args, Default)]
struct EmbedFlags {
    /// POI embedding size.
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    category_dim: Option<usize>,
    #[arg(long)]
    walk_length: Option<usize>,
    #[arg(long)]
    walks_per_node: Option<usize>,
    #[arg(long)]
    embed_epochs: Option<usize>,
    #[arg(long)]
    embed_seed: Option<u64>,
}

#[derive(Args, Default)]
struct ModelFlags {
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    user_dim: Option<usize>,
    #[arg(long)]
    kappa_max: Option<usize>,
    /// hard | straight-through
    #[arg(long, value_parser = kebab::<EpsilonMode>)]
    epsilon_mode: Option<EpsilonMode>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    clip_norm: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Default)]
struct EvalFlags {
    /// Comma-separated cut-offs, e.g. 1,5,10.
    #[arg(long, value_delimiter = ',')]
    ks: Option<Vec<usize>>,
    /// per-prediction | per-user
    #[arg(long, value_parser = kebab::<Aggregation>)]
    aggregation: Option<Aggregation>,
    /// Restrict evaluation histories to training trajectories.
    #[arg(long)]
    strict_train_history: bool,
}

#[derive(Args)]
struct RunDirs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    context: PathBuf,
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long, default_value = "runs")]
    runs_dir: PathBuf,
    #[arg(long)]
    run_id: Option<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Parse, filter, segment and split a raw check-in TSV.
    Preprocess {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Keep only the first N users after filtering.
        #[arg(long)]
        max_users: Option<usize>,
        #[command(flatten)]
        flags: CorpusFlags,
    },
    /// Build transition graphs and context matrices.
    BuildContext {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train node2vec embeddings for POIs and categories.
    Embed {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        context: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        flags: EmbedFlags,
    },
    /// Train a model and evaluate it on the test split.
    Train {
        #[command(flatten)]
        dirs: RunDirs,
        #[arg(long)]
        variant: Option<String>,
        #[command(flatten)]
        model: ModelFlags,
        #[command(flatten)]
        eval: EvalFlags,
    },
    /// Evaluate a checkpoint.
    Evaluate {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        context: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        eval: EvalFlags,
    },
    /// Train and evaluate one ablation variant.
    Ablate {
        #[arg(long)]
        variant: String,
        #[command(flatten)]
        dirs: RunDirs,
        #[command(flatten)]
        model: ModelFlags,
        #[command(flatten)]
        eval: EvalFlags,
    },
    /// Retrain embeddings and model for each POI embedding size.
    SweepDim {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        context: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "100,200,300,400,500,600,700,800")]
        dims: Vec<usize>,
        #[arg(long, default_value = "runs")]
        runs_dir: PathBuf,
        #[arg(long)]
        run_id: Option<String>,
        #[command(flatten)]
        embed: EmbedFlags,
        #[command(flatten)]
        model: ModelFlags,
        #[command(flatten)]
        eval: EvalFlags,
    },
    /// Most similar history trajectory of a user's latest trajectory.
    CaseStudy {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Raw user id, or #<index>.
        #[arg(long)]
        user: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Dataset statistics and a results table over finished runs.
    Report {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        runs: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

macro_rules! set {
    ($($dst:expr => $src:expr),* $(,)?) => {
        $(if let Some(v) = $src { $dst = v; })*
    };
}

impl CorpusFlags {
    fn apply(self, c: &mut PipelineConfig) {
        let k = &mut c.corpus;
        set!(k.min_poi_visits => self.min_poi_visits, k.min_traj_len => self.min_traj_len,
             k.min_user_trajs => self.min_user_trajs, k.window_hours => self.window_hours,
             k.train_frac => self.train_frac, k.tz_mode => self.tz_mode);
    }
}

impl EmbedFlags {
    fn apply(self, c: &mut PipelineConfig) {
        let e = &mut c.embedding;
        set!(e.poi_dim => self.dim, e.category_dim => self.category_dim, e.walk_length => self.walk_length,
             e.walks_per_node => self.walks_per_node, e.epochs => self.embed_epochs, e.seed => self.embed_seed);
    }
}

impl ModelFlags {
    fn apply(self, c: &mut PipelineConfig) {
        let (m, t) = (&mut c.model, &mut c.train);
        set!(m.hidden => self.hidden, m.user_dim => self.user_dim, m.kappa_max => self.kappa_max,
             m.epsilon_mode => self.epsilon_mode, m.lambda => self.lambda, t.learning_rate => self.lr,
             t.weight_decay => self.weight_decay, t.clip_norm => self.clip_norm, t.batch_size => self.batch_size,
             t.max_epochs => self.max_epochs, t.seed => self.seed);
        if self.max_steps.is_some() {
            t.max_steps = self.max_steps;
        }
    }
}

impl EvalFlags {
    fn apply(self, c: &mut PipelineConfig) {
        set!(c.eval.ks => self.ks, c.eval.aggregation => self.aggregation);
        if self.strict_train_history {
            c.eval.strict_train_history = true;
        }
    }
}

fn run_dir(dirs: &RunDirs, verb: &str, cfg: &PipelineConfig) -> PathBuf {
    dirs.runs_dir
        .join(dirs.run_id.clone().unwrap_or_else(|| pipeline::run_id(verb, cfg)))
}

fn print_report(r: &nextpoi::metrics::EvalReport, dir: Option<&Path>) {
    println!("{} [{}] {}", r.dataset, r.variant, r.summary());
    if let Some(d) = dir {
        println!("outputs in {}", d.display());
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    match cli.cmd {
        Cmd::Preprocess { input, out, max_users, flags } => {
            flags.apply(&mut cfg);
            let meta = pipeline::run_preprocess(&input, &out, &cfg.corpus, max_users)?;
            println!("{}", pipeline::stats_line(&meta.stats));
        }
        Cmd::BuildContext { corpus, out } => {
            let ctx = pipeline::run_build_context(&corpus, &out, &cfg.context)?;
            println!(
                "context: {} POIs, {} POI edges, {} users",
                ctx.num_pois(),
                ctx.poi_graph.edges().count(),
                ctx.num_users()
            );
        }
        Cmd::Embed { corpus, context, out, seed, flags } => {
            flags.apply(&mut cfg);
            set!(cfg.embedding.seed => seed);
            // The corpus is only checked for consistency.
            Artifacts::load(&corpus, &context, None)?;
            let e = pipeline::run_embed(&context, &out, &cfg.embedding)?;
            println!("embeddings: POI {}x{}, category {}x{}", e.poi.nrows(), e.poi_dim(), e.category.nrows(), e.category_dim());
        }
        Cmd::Train { dirs, variant, model, eval } => {
            model.apply(&mut cfg);
            eval.apply(&mut cfg);
            set!(cfg.model.variant => variant);
            let art = Artifacts::load(&dirs.corpus, &dirs.context, Some(&dirs.embeddings))?;
            let dir = run_dir(&dirs, "train", &cfg);
            let r = pipeline::run_train(&art, &cfg, &dir)?;
            print_report(&r, Some(&dir));
        }
        Cmd::Evaluate { corpus, context, checkpoint, out, eval } => {
            eval.apply(&mut cfg);
            let art = Artifacts::load(&corpus, &context, None)?;
            let r = pipeline::run_evaluate(&art, &checkpoint, &cfg.eval, out.as_deref())?;
            print_report(&r, out.as_deref());
        }
        Cmd::Ablate { variant, dirs, model, eval } => {
            model.apply(&mut cfg);
            eval.apply(&mut cfg);
            cfg.model.variant = variant.clone();
            let art = Artifacts::load(&dirs.corpus, &dirs.context, Some(&dirs.embeddings))?;
            let dir = run_dir(&dirs, "ablate", &cfg);
            let r = pipeline::run_ablate(&art, &variant, &cfg, &dir)?;
            print_report(&r, Some(&dir));
        }
        Cmd::SweepDim { corpus, context, dims, runs_dir, run_id, embed, model, eval } => {
            embed.apply(&mut cfg);
            model.apply(&mut cfg);
            eval.apply(&mut cfg);
            let art = Artifacts::load(&corpus, &context, None)?;
            let dir = runs_dir.join(run_id.unwrap_or_else(|| pipeline::run_id("sweep-dim", &cfg)));
            for row in pipeline::run_sweep(&art, &dims, &cfg, &dir)? {
                println!("D_l {:>4}: {}", row.dim, row.report.summary());
            }
            println!("outputs in {}", dir.display());
        }
        Cmd::CaseStudy { corpus, checkpoint, user, out } => {
            let cs = pipeline::run_case_study(&corpus, &checkpoint, &user, &out)?;
            let top = cs.top();
            println!(
                "user #{}: current trajectory {} ({}) best matches trajectory {} ({}) with cosine {:.4}",
                cs.user, cs.current.index, cs.current.weekday, top.index, top.weekday, top.similarity
            );
        }
        Cmd::Report { corpus, runs, out } => {
            if corpus.is_none() && runs.is_none() {
                return Err(Error::Usage("report needs --corpus and/or --runs".into()));
            }
            let rows = pipeline::run_report(corpus.as_deref(), runs.as_deref(), &out)?;
            for r in rows {
                println!("{:<40} {}", r.run, r.report.summary());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
