//! Commands behind the `musechat` binary.
//!
//! Exit codes: 0 success, 1 contract or data error, 2 configuration error.

pub mod ablate;
pub mod config;
pub mod session;
pub mod train;

use crate::ablate::{ablation_csv, ablation_table, parse_variants, run_ablation, Variant};
use crate::config::{resolve_seed, RunConfig, CONFIG_FILE};
use crate::session::Session;
use crate::train::{
    config_for_checkpoint, load_model, load_reasoner, parent_dir, sibling, train_model, METRICS_FILE, MODEL_FILE,
    REASONER_FILE, REASONER_METRICS_FILE, VOCAB_FILE,
};
use clap::{Args, Parser, Subcommand};
use musechat::contrastive::FeatureSource;
use musechat::datasim::{build_dataset, Dataset, ALL_FILES};
use musechat::gradsuite::{run_suite, GradCase, GradPath, GRAD_TOLERANCE, MAX_DIMS};
use musechat::numerics::{load_checkpoint, save_checkpoint};
use musechat::reasoner::{reasoning_examples, Reasoner, ReasonerTrainer};
use musechat::retrieval::{evaluate_two_turn, evaluation_csv, render_text, EvalOptions};
use musechat::{Error, Result};
use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::PathBuf;

#[derive(Debug, Parser)]
#[command(name = "musechat", version, about = "Conversational music recommendation for videos")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with feature catalogs.
    GenData(GenDataArgs),
    /// Train the retrieval model contrastively.
    Train(TrainArgs),
    /// Train the justification decoder on a trained retrieval model.
    TrainReasoner(TrainReasonerArgs),
    /// Evaluate a checkpoint with the two-turn protocol.
    Eval(EvalArgs),
    /// Train and evaluate model variants side by side.
    Ablate(AblateArgs),
    /// Rank tracks for one video, then refine with prompts.
    Recommend(RecommendArgs),
    /// Compare analytic gradients with finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Number of quartets (one per track).
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Generation pool size.
    #[arg(long)]
    pub pool_size: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overwrite an existing dataset.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Stop once this many updates have been applied in total.
    #[arg(long)]
    pub steps: Option<u64>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainReasonerArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Trained retrieval model.
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Output directory (defaults to the checkpoint's directory).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub steps: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub pool_size: Option<usize>,
    #[arg(long, default_value_t = 2)]
    pub turns: usize,
    /// Split to evaluate: test or train.
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long)]
    pub seed: Option<u64>,
    /// CSV report path (defaults to eval.csv beside the checkpoint).
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Label of the report rows.
    #[arg(long, default_value = "model")]
    pub label: String,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Comma-separated variant names (default: all).
    #[arg(long)]
    pub variants: Option<String>,
    /// Directory for ablation.csv and ablation_runs.csv.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub pool_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct RecommendArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub video_id: String,
    /// Evaluation pool index within the video's split (default: the pool
    /// holding its paired track).
    #[arg(long)]
    pub pool: Option<usize>,
    #[arg(long)]
    pub pool_size: Option<usize>,
    #[arg(long, default_value_t = 5)]
    pub top_k: usize,
    /// Read one prompt per line from standard input.
    #[arg(long)]
    pub interactive: bool,
    /// Scripted prompt; repeat for several turns.
    #[arg(long)]
    pub prompt: Vec<String>,
    /// Directory holding the trained reasoner (defaults to the checkpoint's
    /// directory when it has one).
    #[arg(long)]
    pub reasoner: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Comma-separated widths, each in 1..=16.
    #[arg(long, default_value = "1,4,16")]
    pub dims: String,
    /// Number of seeds per path and width.
    #[arg(long, default_value_t = 20)]
    pub seeds: u64,
}

/// Exit code for a failed command.
pub fn exit_code(err: &Error) -> i32 {
    if err.is_config() {
        2
    } else {
        1
    }
}

/// Runs one command, writing its report to `out` and reading interactive
/// prompts from `input`.
pub fn run(cli: Cli, input: &mut dyn BufRead, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::GenData(a) => gen_data(a, out),
        Command::Train(a) => train(a, out),
        Command::TrainReasoner(a) => train_reasoner(a, out),
        Command::Eval(a) => eval(a, out),
        Command::Ablate(a) => ablate(a, out),
        Command::Recommend(a) => recommend(a, input, out),
        Command::Gradcheck(a) => gradcheck(a, out),
    }
}

fn load_dataset(flag: Option<PathBuf>, config: &RunConfig) -> Result<Dataset> {
    Dataset::load(&flag.unwrap_or_else(|| config.paths.data.clone()))
}

fn gen_data(a: GenDataArgs, out: &mut dyn Write) -> Result<()> {
    let mut cfg = RunConfig::load(a.config.as_deref())?;
    if let Some(n) = a.n {
        cfg.data.n = n;
    }
    if let Some(p) = a.pool_size {
        cfg.data.pool_size = p;
    }
    cfg.seed = resolve_seed(a.seed, &cfg);
    cfg.validate()?;
    let dir = a.out.unwrap_or_else(|| cfg.paths.data.clone());
    if dir.exists() {
        let occupied = !dir.is_dir() || std::fs::read_dir(&dir)?.next().is_some();
        if occupied && !a.force {
            return Err(Error::contract(format!(
                "output {} already exists (pass --force to overwrite)",
                dir.display()
            )));
        }
        for f in ALL_FILES {
            let p = dir.join(f);
            if p.exists() {
                std::fs::remove_file(p)?;
            }
        }
    }
    let ds = build_dataset(&cfg.data, &cfg.encoder, cfg.seed)?;
    ds.save(&dir)?;
    writeln!(
        out,
        "wrote {}: {} quartets ({} train, {} test), {} generation pools, {} tracks",
        dir.display(),
        ds.split.train.len() + ds.split.test.len(),
        ds.split.train.len(),
        ds.split.test.len(),
        ds.info.pools.len(),
        ds.tracks.len()
    )?;
    Ok(())
}

fn train(a: TrainArgs, out: &mut dyn Write) -> Result<()> {
    let mut cfg = RunConfig::load(a.config.as_deref())?;
    if let Some(e) = a.epochs {
        cfg.contrastive.epochs = e;
    }
    cfg.seed = resolve_seed(a.seed, &cfg);
    cfg.validate()?;
    let ds = load_dataset(a.data, &cfg)?;
    let dir = a.out.unwrap_or_else(|| cfg.paths.out.clone());
    std::fs::create_dir_all(&dir)?;
    cfg.save(&dir.join(CONFIG_FILE))?;
    let resume = a.resume.as_deref().map(load_checkpoint).transpose()?;
    let mut metrics = String::from("step,loss,tau\n");
    let every = cfg.contrastive.checkpoint_every as u64;
    let trainer = train_model(&cfg, &ds, resume.as_ref(), a.steps, |t, r| {
        metrics.push_str(&r.csv());
        metrics.push('\n');
        if every > 0 && r.step % every == 0 {
            save_checkpoint(&t.checkpoint(), dir.join(format!("step-{:06}.mckp", r.step)))?;
        }
        Ok(())
    })?;
    save_checkpoint(&trainer.checkpoint(), dir.join(MODEL_FILE))?;
    std::fs::write(dir.join(METRICS_FILE), &metrics)?;
    let rows = metrics.lines().count() - 1;
    writeln!(
        out,
        "trained to step {} ({rows} steps this run, tau {:.4}); wrote {}",
        trainer.step(),
        trainer.model.tau(),
        dir.join(MODEL_FILE).display()
    )?;
    if let Some(last) = metrics.lines().last().filter(|_| rows > 0) {
        writeln!(out, "last step,loss,tau: {last}")?;
    }
    Ok(())
}

fn train_reasoner(a: TrainReasonerArgs, out: &mut dyn Write) -> Result<()> {
    let mut cfg = config_for_checkpoint(a.config.as_deref(), &a.ckpt)?;
    if let Some(s) = a.steps {
        cfg.reasoner.steps = s;
    }
    cfg.seed = resolve_seed(a.seed, &cfg);
    cfg.validate()?;
    let ds = load_dataset(a.data, &cfg)?;
    let model = load_model(&cfg, &ds, &a.ckpt)?;
    let dir = a.out.unwrap_or_else(|| parent_dir(&a.ckpt));
    std::fs::create_dir_all(&dir)?;
    let (vocab, examples) = reasoning_examples(&model, &ds)?;
    let reasoner = Reasoner::new(vocab, cfg.fusion.width, &cfg.reasoner.decoder, cfg.seed)?;
    let mut trainer = ReasonerTrainer::new(reasoner, cfg.reasoner.clone(), cfg.seed)?;
    let mut metrics = String::from("step,nll\n");
    let records = trainer.run(&examples, cfg.reasoner.steps as u64, |_, r| {
        metrics.push_str(&r.csv());
        metrics.push('\n');
        Ok(())
    })?;
    save_checkpoint(&trainer.reasoner.store, dir.join(REASONER_FILE))?;
    trainer.reasoner.vocab.save(dir.join(VOCAB_FILE))?;
    std::fs::write(dir.join(REASONER_METRICS_FILE), metrics)?;
    writeln!(
        out,
        "trained reasoner for {} steps on {} examples (vocabulary {}); last batch NLL {:.4}; wrote {}",
        records.len(),
        examples.len(),
        trainer.reasoner.vocab.len(),
        records.last().map_or(f64::NAN, |r| r.nll),
        dir.join(REASONER_FILE).display()
    )?;
    Ok(())
}

fn eval(a: EvalArgs, out: &mut dyn Write) -> Result<()> {
    let mut cfg = config_for_checkpoint(a.config.as_deref(), &a.ckpt)?;
    if let Some(p) = a.pool_size {
        cfg.retrieval.pool_size = p;
    }
    cfg.seed = resolve_seed(a.seed, &cfg);
    cfg.validate()?;
    let ds = load_dataset(a.data, &cfg)?;
    let model = load_model(&cfg, &ds, &a.ckpt)?;
    let quartets = match a.split.as_str() {
        "test" => &ds.split.test,
        "train" => &ds.split.train,
        other => {
            return Err(Error::config(format!(
                "unknown split {other:?} (expected test or train)"
            )))
        }
    };
    let text = ds.text_encoder();
    let source = FeatureSource {
        catalog: &ds.features,
        text: &text,
    };
    let options = EvalOptions {
        pool_size: cfg.retrieval.pool_size,
        k_list: cfg.retrieval.k_list.clone(),
        turns: a.turns,
        test_modalities: model.config.fusion.modalities,
        seed: cfg.seed,
    };
    let evaluation = evaluate_two_turn(&model, quartets, source, &options)?;
    for (i, r) in evaluation.per_pool.iter().enumerate() {
        write!(out, "{}", render_text(&format!("{}#p{i}", a.label), r))?;
    }
    write!(out, "{}", render_text(&a.label, &evaluation.average))?;
    let csv = evaluation_csv(&a.label, &evaluation, &options.k_list, true);
    let report = a.report.unwrap_or_else(|| sibling(&a.ckpt, "eval.csv"));
    std::fs::write(&report, csv)?;
    writeln!(out, "wrote {}", report.display())?;
    Ok(())
}

fn ablate(a: AblateArgs, out: &mut dyn Write) -> Result<()> {
    let mut cfg = RunConfig::load(a.config.as_deref())?;
    if let Some(e) = a.epochs {
        cfg.contrastive.epochs = e;
    }
    if let Some(p) = a.pool_size {
        cfg.retrieval.pool_size = p;
    }
    cfg.seed = resolve_seed(a.seed, &cfg);
    let variants = match &a.variants {
        Some(list) => parse_variants(list)?,
        None => Variant::ALL.to_vec(),
    };
    cfg.validate()?;
    let ds = load_dataset(a.data, &cfg)?;
    let results = run_ablation(&cfg, &ds, &variants, |msg| {
        let _ = writeln!(out, "{msg}");
    })?;
    let k = &cfg.retrieval.k_list;
    write!(out, "{}", ablation_table(&results, k))?;
    let dir = a.out.unwrap_or_else(|| cfg.paths.out.clone());
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("ablation.csv"), ablation_csv(&results, k))?;
    let mut runs = String::new();
    for (i, (v, e)) in results.iter().enumerate() {
        runs.push_str(&evaluation_csv(v.name(), e, k, i == 0));
    }
    std::fs::write(dir.join("ablation_runs.csv"), runs)?;
    writeln!(out, "wrote {}", dir.join("ablation.csv").display())?;
    Ok(())
}

fn recommend(a: RecommendArgs, input: &mut dyn BufRead, out: &mut dyn Write) -> Result<()> {
    let mut cfg = config_for_checkpoint(a.config.as_deref(), &a.ckpt)?;
    if let Some(p) = a.pool_size {
        cfg.retrieval.pool_size = p;
    }
    cfg.seed = resolve_seed(a.seed, &cfg);
    cfg.validate()?;
    if a.top_k == 0 {
        return Err(Error::config("top-k must be positive"));
    }
    let ds = load_dataset(a.data, &cfg)?;
    let model = load_model(&cfg, &ds, &a.ckpt)?;
    let reasoner_dir = a.reasoner.clone().or_else(|| {
        let d = parent_dir(&a.ckpt);
        d.join(REASONER_FILE).is_file().then_some(d)
    });
    let reasoner = reasoner_dir.map(|d| load_reasoner(&cfg, &d)).transpose()?;
    let mut session = Session::open(&model, &ds, &a.video_id, a.pool, cfg.retrieval.pool_size, cfg.seed)?;
    writeln!(out, "video {} with a pool of {} tracks", a.video_id, session.pool.len())?;
    let first = session.first_turn()?.clone();
    write!(out, "{}", session.render_turn(&first, a.top_k))?;
    let mut prompts = a.prompt.clone();
    if a.interactive {
        writeln!(out, "enter a prompt per line (end of input stops)")?;
        for line in input.lines() {
            prompts.push(line?);
        }
    }
    for p in &prompts {
        let turn = session.refine(p.trim())?.clone();
        write!(out, "{}", session.render_turn(&turn, a.top_k))?;
    }
    let last = session.turns().last().expect("first turn ran").clone();
    let top = last.top();
    match &reasoner {
        Some(r) => {
            let why = session.justify(r, top, cfg.seed)?;
            let label = session.title(top).map_or(top.to_string(), |t| format!("{top} \"{t}\""));
            writeln!(out, "why {label}: {why}")?;
        }
        None => writeln!(out, "no reasoner found; run train-reasoner for a justification")?,
    }
    Ok(())
}

/// Gradient-suite results grouped per path and width.
pub fn gradcheck_report(cases: &[GradCase]) -> String {
    let mut out = format!(
        "{:<12} {:>4} {:>6} {:>14} {:>14}  status\n",
        "path", "dims", "seeds", "max rel err", "max abs err"
    );
    for path in GradPath::ALL {
        let mut dims: Vec<usize> = cases.iter().filter(|c| c.path == path).map(|c| c.dims).collect();
        dims.dedup();
        for d in dims {
            let group: Vec<&GradCase> = cases.iter().filter(|c| c.path == path && c.dims == d).collect();
            let rel = group.iter().map(|c| c.max_rel_error).fold(0.0, f64::max);
            let abs = group.iter().map(|c| c.max_abs_error).fold(0.0, f64::max);
            let ok = group.iter().all(|c| c.passed());
            let _ = writeln!(
                out,
                "{:<12} {:>4} {:>6} {:>14.3e} {:>14.3e}  {}",
                path.name(),
                d,
                group.len(),
                rel,
                abs,
                if ok { "pass" } else { "FAIL" }
            );
        }
    }
    for path in GradPath::ALL {
        let rel = cases
            .iter()
            .filter(|c| c.path == path)
            .map(|c| c.max_rel_error)
            .fold(0.0, f64::max);
        let _ = writeln!(out, "max relative error {:<12} {rel:.3e}", path.name());
    }
    out
}

pub fn parse_dims(list: &str) -> Result<Vec<usize>> {
    let dims: Vec<usize> = list
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| Error::config(format!("invalid width {s:?}"))))
        .collect::<Result<_>>()?;
    if dims.is_empty() || dims.iter().any(|&d| d == 0 || d > MAX_DIMS) {
        return Err(Error::config(format!("dims must be widths in 1..={MAX_DIMS}")));
    }
    Ok(dims)
}

fn gradcheck(a: GradcheckArgs, out: &mut dyn Write) -> Result<()> {
    let dims = parse_dims(&a.dims)?;
    if a.seeds == 0 {
        return Err(Error::config("seeds must be positive"));
    }
    let seeds: Vec<u64> = (1..=a.seeds).collect();
    let cases = run_suite(&dims, &seeds)?;
    write!(out, "{}", gradcheck_report(&cases))?;
    let failed = cases.iter().filter(|c| !c.passed()).count();
    if failed > 0 {
        return Err(Error::contract(format!(
            "{failed} of {} gradient checks exceed {GRAD_TOLERANCE:e}",
            cases.len()
        )));
    }
    writeln!(out, "all {} gradient checks within {GRAD_TOLERANCE:e}", cases.len())?;
    Ok(())
}

/// Parses `args`, runs the command against the process streams, and
/// returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let stdin = std::io::stdin();
    let stdout = std::io::stdout();
    let mut input = stdin.lock();
    let mut output = stdout.lock();
    match run(cli, &mut input, &mut output) {
        Ok(()) => 0,
        Err(e) => {
            let _ = output.flush();
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
