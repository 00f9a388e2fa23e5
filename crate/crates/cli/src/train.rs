//! Model construction, training, and checkpoint loading shared by commands.

use crate::config::{RunConfig, CONFIG_FILE};
use musechat::contrastive::{FeatureSource, MuseChat, StepRecord, Trainer};
use musechat::datasim::Dataset;
use musechat::numerics::{load_checkpoint, ParamStore};
use musechat::reasoner::{Reasoner, Vocabulary};
use musechat::Result;
use std::path::{Path, PathBuf};

pub const MODEL_FILE: &str = "model.mckp";
pub const METRICS_FILE: &str = "metrics.csv";
pub const REASONER_FILE: &str = "reasoner.mckp";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const REASONER_METRICS_FILE: &str = "reasoner_metrics.csv";

/// Fresh model shaped for `dataset`'s features.
pub fn new_model(config: &RunConfig, dataset: &Dataset) -> Result<MuseChat> {
    let enc = &dataset.info.encoder;
    MuseChat::new(
        &config.model_config(enc.d_in, enc.max_text_tokens),
        config.contrastive.tau0,
        config.seed,
    )
}

/// Trains until `steps` updates (default: every configured epoch), starting
/// from `resume` when given.
pub fn train_model(
    config: &RunConfig,
    dataset: &Dataset,
    resume: Option<&ParamStore>,
    steps: Option<u64>,
    on_step: impl FnMut(&Trainer, &StepRecord) -> Result<()>,
) -> Result<Trainer> {
    let model = new_model(config, dataset)?;
    let mut trainer = Trainer::new(model, config.contrastive.clone(), config.seed)?;
    if let Some(ckpt) = resume {
        trainer.resume(ckpt)?;
    }
    let text = dataset.text_encoder();
    let source = FeatureSource {
        catalog: &dataset.features,
        text: &text,
    };
    let train = &dataset.split.train;
    let total = steps.unwrap_or_else(|| trainer.total_steps(train.len()));
    trainer.run(train, source, total, on_step)?;
    Ok(trainer)
}

/// `--config` when given, else the configuration saved beside the
/// checkpoint, else defaults.
pub fn config_for_checkpoint(flag: Option<&Path>, ckpt: &Path) -> Result<RunConfig> {
    if flag.is_some() {
        return RunConfig::load(flag);
    }
    let side = sibling(ckpt, CONFIG_FILE);
    if side.is_file() {
        RunConfig::load(Some(&side))
    } else {
        RunConfig::load(None)
    }
}

pub fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

pub fn sibling(path: &Path, name: &str) -> PathBuf {
    parent_dir(path).join(name)
}

/// Model built from `config` with weights from `ckpt`. Shape disagreements
/// between the two are errors.
pub fn load_model(config: &RunConfig, dataset: &Dataset, ckpt: &Path) -> Result<MuseChat> {
    let store = load_checkpoint(ckpt)?;
    let mut model = new_model(config, dataset)?;
    model.load_values(&store)?;
    Ok(model)
}

/// Reasoner weights and vocabulary saved by `train-reasoner` in `dir`.
pub fn load_reasoner(config: &RunConfig, dir: &Path) -> Result<Reasoner> {
    let vocab = Vocabulary::load(dir.join(VOCAB_FILE))?;
    let store = load_checkpoint(dir.join(REASONER_FILE))?;
    let mut r = Reasoner::new(vocab, config.fusion.width, &config.reasoner.decoder, config.seed)?;
    r.load_values(&store)?;
    Ok(r)
}
