//! Target-music encoder, the cross-modal InfoNCE objective, and training.
//!
//! For a batch of fused queries `x_i` and target embeddings `y_j` the loss
//! is `Σ_i [logsumexp_j(s_ij/τ) − s_ii/τ]` with `s_ij = x_iᵀy_j`, where both
//! sides are optionally L2-normalized first. The denominator runs over the
//! whole batch, positive included. `τ` is trained as `log τ` and clamped.

use crate::datasim::DialogueQuartet;
use crate::encoders::{segment_average, FeatureCatalog, ModalityProjection, TextEncoder, TokenSequence};
use crate::error::{Error, Result};
use crate::fusion::{FusionConfig, FusionModel, QueryInput};
use crate::numerics::{AdamW, AdamWConfig, Matrix, ParamId, ParamStore, SelfAttentionStack, Tape, Var};
use crate::rng::{derive_seed, stream};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub const TAU_MIN: f64 = 1e-3;
pub const TAU_MAX: f64 = 1e2;
/// Floor on squared norms before normalizing.
const NORM_FLOOR_SQ: f64 = 1e-24;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContrastiveConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub normalize: bool,
    pub tau0: f64,
    /// Write a checkpoint every this many steps (0 disables).
    pub checkpoint_every: usize,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            epochs: 10,
            lr: 3e-3,
            weight_decay: 1.0,
            normalize: true,
            tau0: 0.1,
            checkpoint_every: 0,
        }
    }
}

impl ContrastiveConfig {
    /// Full-scale hyperparameters: batch 34, learning rate 4e-5, 3 epochs,
    /// decay 5e-4.
    pub fn paper_profile() -> Self {
        Self {
            batch_size: 34,
            epochs: 3,
            lr: 4e-5,
            weight_decay: 5e-4,
            ..Self::default()
        }
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamWConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::config("contrastive.batch_size must be at least 2"));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::config("contrastive.lr must be a non-negative number"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config("contrastive.weight_decay must be non-negative"));
        }
        if !(TAU_MIN..=TAU_MAX).contains(&self.tau0) {
            return Err(Error::config(format!(
                "contrastive.tau0 must lie in [{TAU_MIN}, {TAU_MAX}]"
            )));
        }
        Ok(())
    }
}

/// Separate encoder for pool tracks: projection plus its own stack.
#[derive(Debug, Clone)]
pub struct TargetEncoder {
    pub proj: ModalityProjection,
    pub stack: SelfAttentionStack,
}

impl TargetEncoder {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        d_in: usize,
        config: &FusionConfig,
    ) -> Result<Self> {
        Ok(Self {
            proj: ModalityProjection::new(store, rng, "target.proj", d_in, config.width),
            stack: SelfAttentionStack::new(
                store,
                rng,
                "target.stack",
                config.width,
                config.heads,
                config.target_layers,
            )?,
        })
    }

    /// Full branch output, cls row first.
    pub fn sequence(&self, tape: &mut Tape<'_>, seq: &TokenSequence) -> Result<Var> {
        let x = self.proj.project(tape, seq)?;
        self.stack.forward(tape, x)
    }

    pub fn encode(&self, tape: &mut Tape<'_>, seq: &TokenSequence) -> Result<Var> {
        let x = self.proj.project(tape, seq)?;
        encode_target_music(tape, x, &self.stack)
    }
}

/// cls row of the stack output for an already projected sequence.
pub fn encode_target_music(tape: &mut Tape<'_>, projected: Var, stack: &SelfAttentionStack) -> Result<Var> {
    let out = stack.forward(tape, projected)?;
    tape.row(out, 0)
}

fn normalized(v: &[f64]) -> Vec<f64> {
    let sq: f64 = v.iter().map(|x| x * x).sum();
    let n = sq.max(NORM_FLOOR_SQ).sqrt();
    v.iter().map(|x| x / n).collect()
}

/// `exp(xᵀy/τ)`, after L2 normalization of both sides when `normalize`.
pub fn discriminate(x: &[f64], y: &[f64], tau: f64, normalize: bool) -> f64 {
    let d = if normalize {
        crate::numerics::dot(&normalized(x), &normalized(y))
    } else {
        crate::numerics::dot(x, y)
    };
    (d / tau).exp()
}

/// Batch loss on plain matrices (rows of `x` are queries, rows of `y` the
/// matching targets).
pub fn cmc_loss(x: &Matrix, y: &Matrix, tau: f64, normalize: bool) -> Result<f64> {
    if x.shape() != y.shape() {
        return Err(Error::Dimension {
            op: "cmc_loss",
            lhs: x.shape(),
            rhs: y.shape(),
        });
    }
    let rows = |m: &Matrix| -> Vec<Vec<f64>> {
        (0..m.rows())
            .map(|r| {
                if normalize {
                    normalized(m.row(r))
                } else {
                    m.row(r).to_vec()
                }
            })
            .collect()
    };
    let (xs, ys) = (rows(x), rows(y));
    let mut total = 0.0;
    for (i, xi) in xs.iter().enumerate() {
        let logits: Vec<f64> = ys.iter().map(|yj| crate::numerics::dot(xi, yj) / tau).collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        total += lse - logits[i];
    }
    Ok(total)
}

/// Differentiable form of [`cmc_loss`] with `τ` as a 1×1 node.
pub fn cmc_loss_tape(tape: &mut Tape<'_>, x: Var, y: Var, tau: Var, normalize: bool) -> Result<Var> {
    if tape.shape(x) != tape.shape(y) {
        return Err(Error::Dimension {
            op: "cmc_loss",
            lhs: tape.shape(x),
            rhs: tape.shape(y),
        });
    }
    let (x, y) = if normalize {
        (tape.l2_normalize_rows(x), tape.l2_normalize_rows(y))
    } else {
        (x, y)
    };
    let sims = tape.matmul_bt(x, y)?;
    let logits = tape.div_scalar(sims, tau)?;
    let b = tape.shape(x).0;
    tape.cross_entropy_rows(logits, (0..b).map(Some).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_in: usize,
    pub max_text_tokens: usize,
    pub fusion: FusionConfig,
}

/// Parameter handles of the whole retrieval model.
#[derive(Debug, Clone)]
pub struct MuseChatNet {
    pub query: FusionModel,
    pub target: TargetEncoder,
    pub log_tau: ParamId,
}

/// One fully materialized training example (one segment per modality).
#[derive(Debug, Clone)]
pub struct Sample {
    pub video: TokenSequence,
    pub music: TokenSequence,
    pub text: TokenSequence,
    pub target: TokenSequence,
}

impl Sample {
    pub fn query(&self) -> QueryInput<'_> {
        QueryInput {
            video: Some(&self.video),
            music: Some(&self.music),
            text: Some(&self.text),
        }
    }
}

impl MuseChatNet {
    /// `τ = clamp(exp(log τ))` as a node.
    pub fn tau(&self, tape: &mut Tape<'_>) -> Var {
        let lt = tape.param(self.log_tau);
        let t = tape.exp(lt);
        tape.clamp(t, TAU_MIN, TAU_MAX)
    }

    /// Builds the batch loss on `tape`.
    pub fn batch_loss(&self, tape: &mut Tape<'_>, batch: &[Sample], normalize: bool) -> Result<Var> {
        if batch.is_empty() {
            return Err(Error::contract("empty batch"));
        }
        let mut queries = Vec::with_capacity(batch.len());
        let mut targets = Vec::with_capacity(batch.len());
        for s in batch {
            queries.push(self.query.fuse(tape, s.query())?);
            targets.push(self.target.encode(tape, &s.target)?);
        }
        let x = tape.concat_rows(queries)?;
        let y = tape.concat_rows(targets)?;
        let tau = self.tau(tape);
        cmc_loss_tape(tape, x, y, tau, normalize)
    }

    /// Loss value for `store` (used by finite-difference checks).
    pub fn loss_value(&self, store: &ParamStore, batch: &[Sample], normalize: bool) -> Result<f64> {
        let mut tape = Tape::new(store);
        let l = self.batch_loss(&mut tape, batch, normalize)?;
        Ok(tape.value(l).item())
    }
}

/// Retrieval model: parameter store plus handles.
#[derive(Debug, Clone)]
pub struct MuseChat {
    pub config: ModelConfig,
    pub net: MuseChatNet,
    pub store: ParamStore,
}

impl MuseChat {
    pub fn new(config: &ModelConfig, tau0: f64, seed: u64) -> Result<Self> {
        config.fusion.validate()?;
        if !(TAU_MIN..=TAU_MAX).contains(&tau0) {
            return Err(Error::config("initial temperature out of range"));
        }
        let mut store = ParamStore::new();
        let mut rng = stream(seed, "init", 0);
        let query = FusionModel::new(
            &mut store,
            &mut rng,
            config.d_in,
            config.max_text_tokens,
            &config.fusion,
        )?;
        let target = TargetEncoder::new(&mut store, &mut rng, config.d_in, &config.fusion)?;
        let log_tau = store.add("log_tau", Matrix::scalar(tau0.ln()));
        Ok(Self {
            config: config.clone(),
            net: MuseChatNet { query, target, log_tau },
            store,
        })
    }

    pub fn tau(&self) -> f64 {
        self.store.value(self.net.log_tau).item().exp().clamp(TAU_MIN, TAU_MAX)
    }

    /// Replaces parameter values from a checkpoint store (extra entries,
    /// such as optimizer state, are ignored).
    pub fn load_values(&mut self, checkpoint: &ParamStore) -> Result<()> {
        self.store.load_values_from(checkpoint)
    }

    /// Target embedding of one segment (1×d).
    pub fn embed_target_segment(&self, seq: &TokenSequence) -> Result<Vec<f64>> {
        let mut tape = Tape::new(&self.store);
        let v = self.net.target.encode(&mut tape, seq)?;
        Ok(tape.value(v).as_slice().to_vec())
    }

    /// Segment-averaged target embedding.
    pub fn embed_track(&self, catalog: &FeatureCatalog, id: &str) -> Result<Vec<f64>> {
        let item = catalog.get(id)?;
        let per: Vec<Vec<f64>> = (0..item.segments.len())
            .map(|s| self.embed_target_segment(&item.segment(s)))
            .collect::<Result<_>>()?;
        segment_average(&per)
    }

    /// Video-only query for one segment.
    pub fn first_turn_segment(&self, frames: &TokenSequence) -> Result<Vec<f64>> {
        let mut tape = Tape::new(&self.store);
        let v = self.net.query.first_turn(&mut tape, frames)?;
        Ok(tape.value(v).as_slice().to_vec())
    }

    /// Second-turn query for one segment.
    pub fn fuse_segment(&self, input: QueryInput<'_>) -> Result<Vec<f64>> {
        let mut tape = Tape::new(&self.store);
        let v = self.net.query.fuse(&mut tape, input)?;
        Ok(tape.value(v).as_slice().to_vec())
    }
}

/// Feature lookup shared by training and evaluation.
#[derive(Debug, Clone, Copy)]
pub struct FeatureSource<'a> {
    pub catalog: &'a FeatureCatalog,
    pub text: &'a TextEncoder,
}

impl FeatureSource<'_> {
    pub fn segment(&self, id: &str, s: usize) -> Result<TokenSequence> {
        let item = self.catalog.get(id)?;
        if item.segments.is_empty() {
            return Err(Error::data(format!("item {id} has no segments")));
        }
        Ok(item.segment(s % item.segments.len()))
    }

    pub fn segment_count(&self, id: &str) -> Result<usize> {
        Ok(self.catalog.get(id)?.segments.len())
    }

    /// Sample with independently drawn segments per item.
    pub fn sample<R: Rng + ?Sized>(&self, q: &DialogueQuartet, rng: &mut R) -> Result<Sample> {
        let mut pick = |id: &str| -> Result<TokenSequence> {
            let n = self.segment_count(id)?;
            self.segment(id, rng.gen_range(0..n.max(1)))
        };
        Ok(Sample {
            video: pick(&q.video_id)?,
            music: pick(&q.candidate_id)?,
            target: pick(&q.target_id)?,
            text: self.text.encode(&q.prompt).0,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    /// 1-based step index.
    pub step: u64,
    pub loss: f64,
    pub tau: f64,
}

impl StepRecord {
    pub fn csv(&self) -> String {
        format!("{},{},{}", self.step, self.loss, self.tau)
    }
}

/// Resumable training loop state.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: MuseChat,
    pub optimizer: AdamW,
    pub config: ContrastiveConfig,
    pub seed: u64,
}

pub const STEP_KEY: &str = "train.step";

impl Trainer {
    pub fn new(model: MuseChat, config: ContrastiveConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let optimizer = AdamW::new(config.adamw(), &model.store);
        Ok(Self {
            model,
            optimizer,
            config,
            seed,
        })
    }

    /// Restores parameters and optimizer state from [`Trainer::checkpoint`].
    pub fn resume(&mut self, checkpoint: &ParamStore) -> Result<()> {
        self.model.load_values(checkpoint)?;
        self.optimizer.import(&self.model.store, checkpoint)
    }

    pub fn step(&self) -> u64 {
        self.optimizer.steps_taken()
    }

    /// Model parameters plus optimizer state in one store.
    pub fn checkpoint(&self) -> ParamStore {
        let mut out = self.model.store.clone();
        for p in self.optimizer.export(&self.model.store).iter() {
            out.add(p.name.clone(), p.value.clone());
        }
        out
    }

    pub fn steps_per_epoch(&self, n: usize) -> usize {
        let b = self.config.batch_size;
        n / b + usize::from(n % b >= 2)
    }

    pub fn total_steps(&self, n: usize) -> u64 {
        (self.steps_per_epoch(n) * self.config.epochs) as u64
    }

    /// Quartet indices for 0-based step `step`. Batches come from a seeded
    /// per-epoch shuffle; a trailing chunk smaller than two is dropped, and a
    /// repeated target inside one batch keeps only its first quartet.
    pub fn batch_indices(&self, quartets: &[DialogueQuartet], step: u64) -> Vec<usize> {
        let n = quartets.len();
        let per = self.steps_per_epoch(n).max(1) as u64;
        let (epoch, pos) = (step / per, (step % per) as usize);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut stream(self.seed, "epoch-order", epoch));
        let b = self.config.batch_size;
        let chunk = &order[pos * b..((pos + 1) * b).min(n)];
        let mut seen = std::collections::BTreeSet::new();
        chunk
            .iter()
            .copied()
            .filter(|&i| seen.insert(quartets[i].target_id.as_str()))
            .collect()
    }

    pub fn batch(&self, quartets: &[DialogueQuartet], source: FeatureSource<'_>, step: u64) -> Result<Vec<Sample>> {
        self.batch_indices(quartets, step)
            .into_iter()
            .enumerate()
            .map(|(slot, i)| {
                let mut rng = stream(derive_seed(self.seed, "segment-step", step), "segment", slot as u64);
                source.sample(&quartets[i], &mut rng)
            })
            .collect()
    }

    /// One optimizer update. Fails with the step index on a non-finite loss.
    pub fn train_step(&mut self, quartets: &[DialogueQuartet], source: FeatureSource<'_>) -> Result<StepRecord> {
        let step = self.step();
        let batch = self.batch(quartets, source, step)?;
        let model = &mut self.model;
        let (loss, grads) = {
            let mut tape = Tape::new(&model.store);
            let l = model.net.batch_loss(&mut tape, &batch, self.config.normalize)?;
            let value = tape.value(l).item();
            if !value.is_finite() {
                return Err(Error::NonFinite { step: step + 1 });
            }
            (value, tape.backward(l)?)
        };
        model.store.zero_grad();
        grads.accumulate_into(&mut model.store);
        self.optimizer.step(&mut model.store);
        let lt = model.store.value_mut(model.net.log_tau);
        let clamped = lt.item().clamp(TAU_MIN.ln(), TAU_MAX.ln());
        lt.set(0, 0, clamped);
        if !model.store.iter().all(|p| p.value.is_finite()) {
            return Err(Error::NonFinite { step: step + 1 });
        }
        Ok(StepRecord {
            step: step + 1,
            loss,
            tau: model.tau(),
        })
    }

    /// Trains until `total_steps` updates have been applied, calling
    /// `on_step` after each one.
    pub fn run(
        &mut self,
        quartets: &[DialogueQuartet],
        source: FeatureSource<'_>,
        total_steps: u64,
        mut on_step: impl FnMut(&Trainer, &StepRecord) -> Result<()>,
    ) -> Result<Vec<StepRecord>> {
        if quartets.len() < 2 {
            return Err(Error::data("training needs at least two quartets"));
        }
        let mut records = Vec::new();
        while self.step() < total_steps {
            let r = self.train_step(quartets, source)?;
            on_step(self, &r)?;
            records.push(r);
        }
        Ok(records)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasim::{build_dataset, DataConfig};
    use crate::encoders::{EncoderConfig, Modality};
    use crate::numerics::{finite_difference_grad, max_relative_error_above_noise, roundoff_bound, DEFAULT_EPS};
    use crate::testutil::{dd_exp, dd_ln};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use twofloat::TwoFloat;

    fn tf(x: f64) -> TwoFloat {
        TwoFloat::from(x)
    }

    /// Normalization, dot products, and exponentials in double-double.
    fn tf_dot(x: &[f64], y: &[f64], normalize: bool) -> TwoFloat {
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).fold(tf(0.0), |acc, (p, q)| acc + tf(*p) * tf(*q));
        let d = dot(x, y);
        if normalize {
            d / (dot(x, x) * dot(y, y)).sqrt()
        } else {
            d
        }
    }

    fn tf_loss(x: &Matrix, y: &Matrix, tau: f64, normalize: bool) -> f64 {
        let b = x.rows();
        let mut total = tf(0.0);
        for i in 0..b {
            let h = |j: usize| dd_exp(tf_dot(x.row(i), y.row(j), normalize) / tf(tau));
            let denom = (0..b).fold(tf(0.0), |acc, j| acc + h(j));
            total += -dd_ln(h(i) / denom);
        }
        f64::from(total)
    }

    #[test]
    fn discriminate_cases() {
        assert_eq!(discriminate(&[1.0, 0.0], &[0.0, 1.0], 0.07, true), 1.0);
        assert!((discriminate(&[0.6, 0.8], &[0.6, 0.8], 1.0, false) - std::f64::consts::E).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for normalize in [true, false] {
            let x = Matrix::randn(1, 7, 0.4, &mut rng);
            let y = Matrix::randn(1, 7, 0.4, &mut rng);
            let got = discriminate(x.as_slice(), y.as_slice(), 0.3, normalize);
            let oracle = f64::from(dd_exp(tf_dot(x.as_slice(), y.as_slice(), normalize) / tf(0.3)));
            assert!((got - oracle).abs() / oracle < 1e-13, "{got} vs {oracle}");
        }
    }

    #[test]
    fn cmc_special_cases() {
        let one = Matrix::from_rows(&[vec![0.3, -2.0, 1.0]]);
        assert_eq!(cmc_loss(&one, &one.scale(2.0), 0.1, true).unwrap(), 0.0);
        for b in [2usize, 3, 5, 8] {
            let x = Matrix::filled(b, 4, 0.5);
            let y = Matrix::filled(b, 4, 3.0);
            let got = cmc_loss(&x, &y, 0.07, true).unwrap();
            let expected = b as f64 * (b as f64).ln();
            assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
        }
        let x = Matrix::filled(2, 4, 1.0);
        assert!((cmc_loss(&x, &x, 0.5, true).unwrap() - 1.386294361119890_6).abs() < 1e-12);
    }

    #[test]
    fn cmc_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for trial in 0..100 {
            let b = 1 + trial % 8;
            let normalize = trial % 3 != 0;
            let x = Matrix::randn(b, 6, 1.0, &mut rng);
            let y = Matrix::randn(b, 6, 1.0, &mut rng);
            let tau = rng.gen_range(0.05..2.0);
            let got = cmc_loss(&x, &y, tau, normalize).unwrap();
            let oracle = tf_loss(&x, &y, tau, normalize);
            assert!((got - oracle).abs() < 1e-10, "{got} vs {oracle}");
        }
    }

    #[test]
    fn tape_loss_matches_plain_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let store = ParamStore::new();
        for normalize in [true, false] {
            let x = Matrix::randn(5, 4, 1.0, &mut rng);
            let y = Matrix::randn(5, 4, 1.0, &mut rng);
            let mut tape = Tape::new(&store);
            let (xv, yv, tv) = (
                tape.constant(x.clone()),
                tape.constant(y.clone()),
                tape.constant(Matrix::scalar(0.2)),
            );
            let l = cmc_loss_tape(&mut tape, xv, yv, tv, normalize).unwrap();
            let plain = cmc_loss(&x, &y, 0.2, normalize).unwrap();
            assert!((tape.value(l).item() - plain).abs() < 1e-12);
        }
    }

    #[test]
    fn normalized_loss_is_scale_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Matrix::randn(4, 5, 1.0, &mut rng);
        let y = Matrix::randn(4, 5, 1.0, &mut rng);
        let base = cmc_loss(&x, &y, 0.1, true).unwrap();
        let mut scaled = x.clone();
        for c in 0..5 {
            scaled.set(2, c, x.get(2, c) * 17.5);
        }
        assert!((cmc_loss(&scaled, &y.scale(0.01), 0.1, true).unwrap() - base).abs() < 1e-12);
        assert!(base >= 0.0);
    }

    fn tiny_config(layers: usize) -> ModelConfig {
        ModelConfig {
            d_in: 5,
            max_text_tokens: 6,
            fusion: FusionConfig {
                width: 4,
                layers,
                target_layers: layers,
                heads: 2,
                ..FusionConfig::default()
            },
        }
    }

    fn tiny_batch(b: usize, d_in: usize, rng: &mut ChaCha8Rng) -> Vec<Sample> {
        (0..b)
            .map(|_| Sample {
                video: TokenSequence::new(Modality::Video, Matrix::randn(3, d_in, 1.0, rng)),
                music: TokenSequence::new(Modality::Music, Matrix::randn(3, d_in, 1.0, rng)),
                text: TokenSequence::new(Modality::Text, Matrix::randn(4, d_in, 1.0, rng)),
                target: TokenSequence::new(Modality::Music, Matrix::randn(3, d_in, 1.0, rng)),
            })
            .collect()
    }

    #[test]
    fn target_encoder_cases() {
        let model = MuseChat::new(&tiny_config(0), 0.1, 5).unwrap();
        let mut store = model.store.clone();
        let mut id = Matrix::zeros(5, 4);
        for i in 0..4 {
            id.set(i, i, 1.0);
        }
        *store.value_mut(model.net.target.proj.linear.weight) = id;
        let seq = TokenSequence::new(
            Modality::Music,
            Matrix::from_rows(&[vec![1.0, 2.0, 3.0, 4.0, 9.0], vec![0.0; 5]]),
        );
        let mut tape = Tape::new(&store);
        let a = model.net.target.encode(&mut tape, &seq).unwrap();
        let b = model.net.target.encode(&mut tape, &seq).unwrap();
        assert_eq!(tape.value(a).as_slice(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(tape.value(a), tape.value(b));
    }

    #[test]
    fn pipeline_gradient_matches_finite_differences() {
        for seed in 0..3u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let model = MuseChat::new(&tiny_config(1), 0.5, seed).unwrap();
            let batch = tiny_batch(3, 5, &mut rng);
            for normalize in [true, false] {
                let mut tape = Tape::new(&model.store);
                let l = model.net.batch_loss(&mut tape, &batch, normalize).unwrap();
                let g = tape.backward(l).unwrap();
                let analytic: Vec<Matrix> = model.store.ids().map(|id| g.param(id).cloned().unwrap()).collect();
                let mut store = model.store.clone();
                let net = model.net.clone();
                let numeric =
                    finite_difference_grad(&mut store, |s| net.loss_value(s, &batch, normalize), DEFAULT_EPS).unwrap();
                let noise = roundoff_bound(tape.value(l).item(), DEFAULT_EPS);
                let err = max_relative_error_above_noise(&analytic, &numeric, noise);
                assert!(err < 1e-4, "seed {seed} normalize {normalize}: {err}");
            }
        }
    }

    fn setup() -> (crate::datasim::Dataset, TextEncoder, ModelConfig) {
        let enc = EncoderConfig {
            segments: 3,
            ..EncoderConfig::default()
        };
        let data = DataConfig {
            n: 64,
            pool_size: 32,
            split: [1.0, 0.0],
            ..DataConfig::default()
        };
        let ds = build_dataset(&data, &enc, 21).unwrap();
        let text = ds.text_encoder();
        let cfg = ModelConfig {
            d_in: enc.d_in,
            max_text_tokens: enc.max_text_tokens,
            fusion: FusionConfig::default(),
        };
        (ds, text, cfg)
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let (ds, text, cfg) = setup();
        let source = FeatureSource {
            catalog: &ds.features,
            text: &text,
        };
        let run = || {
            let model = MuseChat::new(&cfg, 0.1, 1).unwrap();
            let mut t = Trainer::new(model, ContrastiveConfig::default(), 1).unwrap();
            t.run(&ds.split.train, source, 200, |_, _| Ok(())).unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.len(), 200);
        let bits = |r: &[StepRecord]| r.iter().map(|s| s.loss.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        let mean = |r: &[StepRecord]| r.iter().map(|s| s.loss).sum::<f64>() / r.len() as f64;
        let (first, last) = (mean(&a[..40]), mean(&a[160..]));
        assert!(last < first, "{first} -> {last}");
    }

    #[test]
    fn zero_lr_changes_nothing_but_decay() {
        let (ds, text, cfg) = setup();
        let source = FeatureSource {
            catalog: &ds.features,
            text: &text,
        };
        let model = MuseChat::new(&cfg, 0.1, 2).unwrap();
        let before = model.store.clone();
        let tc = ContrastiveConfig {
            lr: 0.0,
            ..ContrastiveConfig::default()
        };
        let mut t = Trainer::new(model, tc, 2).unwrap();
        t.run(&ds.split.train, source, 3, |_, _| Ok(())).unwrap();
        for (p, q) in t.model.store.iter().zip(before.iter()) {
            assert_eq!(p.value, q.value, "{}", p.name);
        }
    }

    #[test]
    fn resume_reproduces_the_next_step() {
        let (ds, text, cfg) = setup();
        let source = FeatureSource {
            catalog: &ds.features,
            text: &text,
        };
        let mut full = Trainer::new(MuseChat::new(&cfg, 0.1, 3).unwrap(), ContrastiveConfig::default(), 3).unwrap();
        let mut saved = None;
        let recs = full
            .run(&ds.split.train, source, 12, |t, r| {
                if r.step == 7 {
                    saved = Some(t.checkpoint());
                }
                Ok(())
            })
            .unwrap();
        let bytes = crate::numerics::encode_checkpoint(&saved.unwrap()).unwrap();
        let ckpt = crate::numerics::decode_checkpoint(&bytes).unwrap();
        let mut resumed = Trainer::new(MuseChat::new(&cfg, 0.1, 99).unwrap(), ContrastiveConfig::default(), 3).unwrap();
        resumed.resume(&ckpt).unwrap();
        let next = resumed.train_step(&ds.split.train, source).unwrap();
        assert_eq!(next.step, 8);
        assert_eq!(next.loss.to_bits(), recs[7].loss.to_bits());
    }

    #[test]
    fn encoders_have_disjoint_parameters() {
        let (ds, text, cfg) = setup();
        let source = FeatureSource {
            catalog: &ds.features,
            text: &text,
        };
        let mut model = MuseChat::new(&cfg, 0.1, 4).unwrap();
        model.store.freeze_prefix("query.");
        model.store.freeze_prefix("log_tau");
        let before = model.store.clone();
        let mut t = Trainer::new(model, ContrastiveConfig::default(), 4).unwrap();
        t.train_step(&ds.split.train, source).unwrap();
        let mut moved = 0;
        for (p, q) in t.model.store.iter().zip(before.iter()) {
            if p.name.starts_with("query.") {
                assert_eq!(p.value, q.value, "{}", p.name);
            } else if p.name.starts_with("target.") && p.value != q.value {
                moved += 1;
            }
        }
        assert!(moved > 0);
    }

    #[test]
    fn batches_have_distinct_targets_and_cover_epochs() {
        let (ds, _, cfg) = setup();
        let t = Trainer::new(MuseChat::new(&cfg, 0.1, 5).unwrap(), ContrastiveConfig::default(), 5).unwrap();
        let per = t.steps_per_epoch(ds.split.train.len()) as u64;
        let mut seen = Vec::new();
        for s in 0..per {
            let idx = t.batch_indices(&ds.split.train, s);
            let ids: std::collections::BTreeSet<_> = idx.iter().map(|&i| &ds.split.train[i].target_id).collect();
            assert_eq!(ids.len(), idx.len());
            seen.extend(idx);
        }
        seen.sort();
        assert_eq!(seen, (0..ds.split.train.len()).collect::<Vec<_>>());
    }

    #[test]
    fn config_validation() {
        assert!(ContrastiveConfig {
            batch_size: 1,
            ..Default::default()
        }
        .validate()
        .unwrap_err()
        .is_config());
        assert!(ContrastiveConfig {
            tau0: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        ContrastiveConfig::paper_profile().validate().unwrap();
    }
}
