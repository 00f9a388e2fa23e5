//! A small causal decoder that writes a justification for a recommended
//! track. The averaged target-music branch output, projected by `f_l`,
//! fills the music slot of a fixed prompt scaffold; only response tokens
//! (and the closing EOS) are scored.

use crate::contrastive::MuseChat;
use crate::datasim::Dataset;
use crate::encoders::{segment_average, FeatureCatalog};
use crate::error::{Error, Result};
use crate::numerics::{
    AdamW, AdamWConfig, LayerNorm, Linear, Matrix, MultiHeadAttention, ParamId, ParamStore, Tape, Var,
};
use crate::rng::stream;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeSet, HashMap};
use std::path::Path;

pub const PAD: &str = "<pad>";
pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const UNK: &str = "<unk>";
/// Placeholder whose embedding is replaced by the projected music vector.
pub const MUSIC: &str = "<music>";
pub const TITLE_OPEN: &str = "<title>";
pub const TITLE_CLOSE: &str = "</title>";
pub const SPECIALS: [&str; 7] = [PAD, BOS, EOS, UNK, MUSIC, TITLE_OPEN, TITLE_CLOSE];

const SCAFFOLD_HEAD: &str = "### Recommender:";
const SCAFFOLD_TITLE: &str = "Music title:";
const SCAFFOLD_FEATURE: &str = "Music feature: <Music>";
const SCAFFOLD_TAIL: &str = "</Music> ; Generate Recommendation:";

/// Word-level vocabulary. Tokens are whitespace-separated words; ids are
/// dense with the specials first.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Specials, then scaffold words, then corpus words in sorted order.
    pub fn from_corpus<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let scaffold = [SCAFFOLD_HEAD, SCAFFOLD_TITLE, SCAFFOLD_FEATURE, SCAFFOLD_TAIL, ";"];
        let mut words = BTreeSet::new();
        for t in scaffold.into_iter().chain(texts) {
            words.extend(t.split_whitespace());
        }
        let tokens = SPECIALS
            .iter()
            .copied()
            .chain(words.into_iter().filter(|w| !SPECIALS.contains(w)))
            .map(str::to_string)
            .collect();
        Self::from_tokens(tokens).expect("corpus words are unique")
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < SPECIALS.len() || tokens[..SPECIALS.len()].iter().zip(SPECIALS).any(|(a, b)| a != b) {
            return Err(Error::data("vocabulary must start with the reserved specials"));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::data(format!("invalid vocabulary token {t:?} on line {}", i + 1)));
            }
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::data(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    fn special(&self, token: &str) -> usize {
        self.index[token]
    }

    pub fn is_special(&self, id: usize) -> bool {
        id < SPECIALS.len()
    }

    /// Unknown words map to `<unk>`.
    pub fn encode(&self, text: &str) -> Vec<usize> {
        let unk = self.special(UNK);
        text.split_whitespace().map(|w| self.id(w).unwrap_or(unk)).collect()
    }

    /// Like [`Vocabulary::encode`] but unknown words are an error.
    pub fn encode_strict(&self, text: &str) -> Result<Vec<usize>> {
        text.split_whitespace()
            .map(|w| {
                self.id(w)
                    .ok_or_else(|| Error::data(format!("word {w:?} is not in the vocabulary")))
            })
            .collect()
    }

    /// Response ids with the closing EOS.
    pub fn encode_response(&self, text: &str) -> Vec<usize> {
        let mut ids = self.encode(text);
        ids.push(self.special(EOS));
        ids
    }

    /// Joins non-special tokens with single spaces.
    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .filter(|&&i| !self.is_special(i))
            .filter_map(|&i| self.token(i))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// One token per line; the id is the line number.
    pub fn to_text(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::from_tokens(text.lines().map(str::to_string).collect())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

/// Prompt scaffold ids and the position of the music slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scaffold {
    pub ids: Vec<usize>,
    pub slot: usize,
}

/// `<bos> ### Recommender: [Music title: <title> … </title> ;] Music feature:
/// <Music> <music> </Music> ; Generate Recommendation:`.
pub fn scaffold(vocab: &Vocabulary, title: Option<&str>) -> Scaffold {
    let mut ids = vec![vocab.special(BOS)];
    ids.extend(vocab.encode(SCAFFOLD_HEAD));
    if let Some(title) = title {
        ids.extend(vocab.encode(SCAFFOLD_TITLE));
        ids.push(vocab.special(TITLE_OPEN));
        ids.extend(vocab.encode(title));
        ids.push(vocab.special(TITLE_CLOSE));
        ids.extend(vocab.encode(";"));
    }
    ids.extend(vocab.encode(SCAFFOLD_FEATURE));
    let slot = ids.len();
    ids.push(vocab.special(MUSIC));
    ids.extend(vocab.encode(SCAFFOLD_TAIL));
    Scaffold { ids, slot }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecoderConfig {
    pub layers: usize,
    pub heads: usize,
    pub width: usize,
    pub ffn_width: usize,
    pub context: usize,
    /// Sampling temperature. Zero selects greedy argmax decoding.
    pub temperature: f64,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            heads: 2,
            width: 64,
            ffn_width: 128,
            context: 128,
            temperature: 0.0,
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.ffn_width == 0 {
            return Err(Error::config("decoder widths must be positive"));
        }
        crate::numerics::check_heads(self.width, self.heads)?;
        if self.context < 32 {
            return Err(Error::config("decoder context must hold at least 32 tokens"));
        }
        if !(0.0..=0.1).contains(&self.temperature) {
            return Err(Error::config("decoder temperature must lie in [0, 0.1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReasonerConfig {
    pub decoder: DecoderConfig,
    pub batch_size: usize,
    pub steps: usize,
    pub lr: f64,
    pub weight_decay: f64,
}

impl Default for ReasonerConfig {
    fn default() -> Self {
        Self {
            decoder: DecoderConfig::default(),
            batch_size: 8,
            steps: 500,
            lr: 3e-3,
            weight_decay: 0.0,
        }
    }
}

impl ReasonerConfig {
    pub fn validate(&self) -> Result<()> {
        self.decoder.validate()?;
        if self.batch_size == 0 {
            return Err(Error::config("reasoner batch_size must be positive"));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::config("reasoner lr must be finite and non-negative"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config("reasoner weight_decay must be finite and non-negative"));
        }
        Ok(())
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamWConfig::default()
        }
    }
}

/// Mean over every row of a branch output, cls included.
pub fn average_music(branch_output: &Matrix) -> Result<Vec<f64>> {
    if branch_output.rows() == 0 {
        return Err(Error::contract("cannot average an empty music sequence"));
    }
    Ok(branch_output.mean_rows()?.into_vec())
}

/// Averaged music embedding and its projection into decoder width.
#[derive(Debug, Clone, PartialEq)]
pub struct MusicPrefix {
    pub mean: Vec<f64>,
    pub projected: Vec<f64>,
}

/// Averaged target-branch output of a track, averaged again over segments.
/// The encoder is only read.
pub fn track_music_mean(model: &MuseChat, catalog: &FeatureCatalog, id: &str) -> Result<Vec<f64>> {
    let item = catalog.get(id)?;
    let per: Vec<Vec<f64>> = (0..item.segments.len())
        .map(|s| {
            let mut tape = Tape::new(&model.store);
            let out = model.net.target.sequence(&mut tape, &item.segment(s))?;
            average_music(tape.value(out))
        })
        .collect::<Result<_>>()?;
    segment_average(&per)
}

#[derive(Debug, Clone)]
struct DecoderBlock {
    attn: MultiHeadAttention,
    norm1: LayerNorm,
    ff_in: Linear,
    ff_out: Linear,
    norm2: LayerNorm,
}

impl DecoderBlock {
    fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        let a = self.attn.forward_causal(tape, x)?;
        let x = tape.add(x, a)?;
        let x = self.norm1.forward(tape, x)?;
        let h = self.ff_in.forward(tape, x)?;
        let h = tape.gelu(h);
        let h = self.ff_out.forward(tape, h)?;
        let x = tape.add(x, h)?;
        self.norm2.forward(tape, x)
    }
}

/// Decoder weights, `f_l`, and the vocabulary they index.
#[derive(Debug, Clone)]
pub struct Reasoner {
    pub config: DecoderConfig,
    pub vocab: Vocabulary,
    pub music_dim: usize,
    pub store: ParamStore,
    pub(crate) f_l: Linear,
    embed: ParamId,
    pos: ParamId,
    blocks: Vec<DecoderBlock>,
    pub(crate) head: Linear,
}

impl Reasoner {
    /// Fresh weights with a zero output head, so every next-token
    /// distribution starts uniform.
    pub fn new(vocab: Vocabulary, music_dim: usize, config: &DecoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        if music_dim == 0 {
            return Err(Error::config("music dimension must be positive"));
        }
        let mut store = ParamStore::new();
        let mut rng = stream(seed, "reasoner-init", 0);
        let w = config.width;
        let f_l = Linear::new(&mut store, &mut rng, "reasoner.f_l", music_dim, w, true);
        let embed = store.add("reasoner.embed", Matrix::randn(vocab.len(), w, 0.1, &mut rng));
        let pos = store.add("reasoner.pos", Matrix::randn(config.context, w, 0.1, &mut rng));
        let blocks = (0..config.layers)
            .map(|l| {
                let name = format!("reasoner.block.{l}");
                Ok(DecoderBlock {
                    attn: MultiHeadAttention::new(&mut store, &mut rng, &format!("{name}.attn"), w, config.heads)?,
                    norm1: LayerNorm::new(&mut store, &format!("{name}.norm1"), w),
                    ff_in: Linear::new(
                        &mut store,
                        &mut rng,
                        &format!("{name}.ff_in"),
                        w,
                        config.ffn_width,
                        true,
                    ),
                    ff_out: Linear::new(
                        &mut store,
                        &mut rng,
                        &format!("{name}.ff_out"),
                        config.ffn_width,
                        w,
                        true,
                    ),
                    norm2: LayerNorm::new(&mut store, &format!("{name}.norm2"), w),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let head = Linear::new(&mut store, &mut rng, "reasoner.head", w, vocab.len(), true);
        store.value_mut(head.weight).fill(0.0);
        Ok(Self {
            config: config.clone(),
            vocab,
            music_dim,
            store,
            f_l,
            embed,
            pos,
            blocks,
            head,
        })
    }

    pub fn load_values(&mut self, checkpoint: &ParamStore) -> Result<()> {
        self.store.load_values_from(checkpoint)
    }

    fn check_mean(&self, mean: &[f64]) -> Result<()> {
        if mean.len() != self.music_dim {
            return Err(Error::Dimension {
                op: "reasoner music prefix",
                lhs: (1, mean.len()),
                rhs: (self.music_dim, self.config.width),
            });
        }
        Ok(())
    }

    pub fn prefix(&self, mean: &[f64]) -> Result<MusicPrefix> {
        self.check_mean(mean)?;
        let mut tape = Tape::new(&self.store);
        let m = tape.constant(Matrix::row_vector(mean));
        let p = self.f_l.forward(&mut tape, m)?;
        Ok(MusicPrefix {
            mean: mean.to_vec(),
            projected: tape.value(p).as_slice().to_vec(),
        })
    }

    /// Next-token logits (one row per input position).
    pub fn logits(&self, tape: &mut Tape<'_>, mean: &[f64], ids: &[usize], slot: usize) -> Result<Var> {
        self.check_mean(mean)?;
        let n = ids.len();
        if n == 0 || n > self.config.context {
            return Err(Error::contract(format!(
                "sequence of {n} tokens does not fit the context of {}",
                self.config.context
            )));
        }
        if slot >= n {
            return Err(Error::contract("music slot lies outside the sequence"));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.vocab.len()) {
            return Err(Error::data(format!(
                "token id {bad} is outside the vocabulary of {}",
                self.vocab.len()
            )));
        }
        let table = tape.param(self.embed);
        let m = tape.constant(Matrix::row_vector(mean));
        let music = self.f_l.forward(tape, m)?;
        let mut parts = Vec::with_capacity(3);
        if slot > 0 {
            parts.push(tape.select_rows(table, ids[..slot].to_vec())?);
        }
        parts.push(music);
        if slot + 1 < n {
            parts.push(tape.select_rows(table, ids[slot + 1..].to_vec())?);
        }
        let x = if parts.len() == 1 {
            parts[0]
        } else {
            tape.concat_rows(parts)?
        };
        let pos_table = tape.param(self.pos);
        let pos = tape.select_rows(pos_table, (0..n).collect())?;
        let mut x = tape.add(x, pos)?;
        for b in &self.blocks {
            x = b.forward(tape, x)?;
        }
        self.head.forward(tape, x)
    }

    /// Summed next-token NLL of `response` (ids, EOS included) after the
    /// no-title scaffold. Scaffold positions are not scored.
    pub fn generation_loss(&self, tape: &mut Tape<'_>, mean: &[f64], response: &[usize]) -> Result<Var> {
        if response.is_empty() {
            self.check_mean(mean)?;
            return Ok(tape.constant(Matrix::scalar(0.0)));
        }
        let sc = scaffold(&self.vocab, None);
        let start = sc.ids.len() - 1;
        let mut ids = sc.ids;
        ids.extend_from_slice(&response[..response.len() - 1]);
        let logits = self.logits(tape, mean, &ids, sc.slot)?;
        if let Some(&bad) = response.iter().find(|&&i| i >= self.vocab.len()) {
            return Err(Error::data(format!(
                "token id {bad} is outside the vocabulary of {}",
                self.vocab.len()
            )));
        }
        let targets = (0..ids.len())
            .map(|p| p.checked_sub(start).map(|r| response[r]))
            .collect();
        tape.cross_entropy_rows(logits, targets)
    }

    pub fn loss_value(&self, mean: &[f64], response: &[usize]) -> Result<f64> {
        let mut tape = Tape::new(&self.store);
        let l = self.generation_loss(&mut tape, mean, response)?;
        Ok(tape.value(l).item())
    }

    /// Decodes until EOS or the context is full. Zero temperature picks the
    /// argmax (lowest id on ties); otherwise tokens are sampled from
    /// `softmax(logits / temperature)` using `rng`.
    pub fn generate_ids<R: Rng + ?Sized>(&self, mean: &[f64], title: Option<&str>, rng: &mut R) -> Result<Vec<usize>> {
        let sc = scaffold(&self.vocab, title);
        let eos = self.vocab.special(EOS);
        let mut ids = sc.ids.clone();
        let mut out = Vec::new();
        while ids.len() < self.config.context {
            let mut tape = Tape::new(&self.store);
            let logits = self.logits(&mut tape, mean, &ids, sc.slot)?;
            let l = tape.value(logits);
            let next = pick(l.row(l.rows() - 1), self.config.temperature, rng);
            if next == eos {
                break;
            }
            out.push(next);
            ids.push(next);
        }
        Ok(out)
    }

    /// Greedy or temperature decoding rendered as text.
    pub fn generate(&self, mean: &[f64], title: Option<&str>, seed: u64) -> Result<String> {
        let ids = self.generate_ids(mean, title, &mut stream(seed, "reasoner-sample", 0))?;
        Ok(self.vocab.decode(&ids))
    }
}

fn pick<R: Rng + ?Sized>(logits: &[f64], temperature: f64, rng: &mut R) -> usize {
    let argmax = logits
        .iter()
        .enumerate()
        .fold(0, |best, (i, &v)| if v > logits[best] { i } else { best });
    if temperature == 0.0 {
        return argmax;
    }
    let top = logits[argmax];
    let weights: Vec<f64> = logits.iter().map(|&v| ((v - top) / temperature).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    argmax
}

/// One training pair: averaged music embedding and response ids (EOS
/// included).
#[derive(Debug, Clone, PartialEq)]
pub struct ReasonerExample {
    pub music: Vec<f64>,
    pub response: Vec<usize>,
}

/// Vocabulary from the training reasoning corpus, and one example per
/// training quartet built with the frozen target encoder.
pub fn reasoning_examples(model: &MuseChat, dataset: &Dataset) -> Result<(Vocabulary, Vec<ReasonerExample>)> {
    let train = &dataset.split.train;
    if train.is_empty() {
        return Err(Error::data("the training split holds no quartets"));
    }
    let vocab = Vocabulary::from_corpus(train.iter().map(|q| q.reasoning.as_str()));
    let examples = train
        .iter()
        .map(|q| {
            Ok(ReasonerExample {
                music: track_music_mean(model, &dataset.features, &q.target_id)?,
                response: vocab.encode_response(&q.reasoning),
            })
        })
        .collect::<Result<_>>()?;
    Ok((vocab, examples))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReasonerStep {
    pub step: u64,
    /// Mean per-token NLL of the batch.
    pub nll: f64,
}

impl ReasonerStep {
    pub fn csv(&self) -> String {
        format!("{},{:.17e}", self.step, self.nll)
    }
}

pub struct ReasonerTrainer {
    pub reasoner: Reasoner,
    pub optimizer: AdamW,
    pub config: ReasonerConfig,
    pub seed: u64,
}

impl ReasonerTrainer {
    pub fn new(reasoner: Reasoner, config: ReasonerConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let optimizer = AdamW::new(config.adamw(), &reasoner.store);
        Ok(Self {
            reasoner,
            optimizer,
            config,
            seed,
        })
    }

    pub fn step(&self) -> u64 {
        self.optimizer.steps_taken()
    }

    /// Example indices for 0-based step `step` from a per-epoch shuffle.
    pub fn batch_indices(&self, n: usize, step: u64) -> Vec<usize> {
        let b = self.config.batch_size.min(n);
        let per = n.div_ceil(b) as u64;
        let (epoch, pos) = (step / per, (step % per) as usize);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut stream(self.seed, "reasoner-epoch", epoch));
        order[pos * b..((pos + 1) * b).min(n)].to_vec()
    }

    pub fn train_step(&mut self, examples: &[ReasonerExample]) -> Result<ReasonerStep> {
        if examples.is_empty() {
            return Err(Error::data("reasoner training needs at least one example"));
        }
        let step = self.step();
        let batch = self.batch_indices(examples.len(), step);
        let tokens: usize = batch.iter().map(|&i| examples[i].response.len()).sum();
        let r = &mut self.reasoner;
        let (nll, grads) = {
            let mut tape = Tape::new(&r.store);
            let mut total = None;
            for &i in &batch {
                let l = r.generation_loss(&mut tape, &examples[i].music, &examples[i].response)?;
                total = Some(match total {
                    Some(t) => tape.add(t, l)?,
                    None => l,
                });
            }
            let total = total.expect("batches are nonempty");
            let mean = tape.scale(total, 1.0 / tokens.max(1) as f64);
            let value = tape.value(mean).item();
            if !value.is_finite() {
                return Err(Error::NonFinite { step: step + 1 });
            }
            (value, tape.backward(mean)?)
        };
        r.store.zero_grad();
        grads.accumulate_into(&mut r.store);
        self.optimizer.step(&mut r.store);
        if !r.store.iter().all(|p| p.value.is_finite()) {
            return Err(Error::NonFinite { step: step + 1 });
        }
        Ok(ReasonerStep { step: step + 1, nll })
    }

    pub fn run(
        &mut self,
        examples: &[ReasonerExample],
        total_steps: u64,
        mut on_step: impl FnMut(&ReasonerTrainer, &ReasonerStep) -> Result<()>,
    ) -> Result<Vec<ReasonerStep>> {
        let mut records = Vec::new();
        while self.step() < total_steps {
            let r = self.train_step(examples)?;
            on_step(self, &r)?;
            records.push(r);
        }
        Ok(records)
    }
}

/// Trains a fresh reasoner on `examples` for `config.steps` updates.
pub fn train_reasoner(
    vocab: Vocabulary,
    examples: &[ReasonerExample],
    config: &ReasonerConfig,
    seed: u64,
) -> Result<(Reasoner, Vec<ReasonerStep>)> {
    let dim = examples
        .first()
        .map(|e| e.music.len())
        .ok_or_else(|| Error::data("reasoner training needs at least one example"))?;
    let reasoner = Reasoner::new(vocab, dim, &config.decoder, seed)?;
    let mut trainer = ReasonerTrainer::new(reasoner, config.clone(), seed)?;
    let records = trainer.run(examples, config.steps as u64, |_, _| Ok(()))?;
    Ok((trainer.reasoner, records))
}

/// Mean per-token NLL over a set of examples.
pub fn mean_token_nll(reasoner: &Reasoner, examples: &[ReasonerExample]) -> Result<f64> {
    let mut total = 0.0;
    let mut tokens = 0;
    for e in examples {
        total += reasoner.loss_value(&e.music, &e.response)?;
        tokens += e.response.len();
    }
    if tokens == 0 {
        return Err(Error::data("no response tokens to score"));
    }
    Ok(total / tokens as f64)
}
