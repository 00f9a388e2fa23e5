//! Finite-difference checks over every differentiable path of the model.
//!
//! Each case builds a small random instance of one path at width `dims`,
//! backpropagates a scalar loss, and compares against central differences.

use crate::contrastive::{ModelConfig, MuseChat, Sample};
use crate::encoders::{Modality, TokenSequence};
use crate::error::{Error, Result};
use crate::fusion::{FusionConfig, FusionStrategy};
use crate::numerics::{
    finite_difference_grad, max_relative_error_above_noise, roundoff_bound, Matrix, ParamStore, SelfAttentionStack,
    Tape, Var, DEFAULT_EPS,
};
use crate::reasoner::{DecoderConfig, Reasoner, Vocabulary};
use crate::rng::stream;
use std::fmt;
use std::str::FromStr;

pub const GRAD_TOLERANCE: f64 = 1e-4;
pub const MAX_DIMS: usize = 16;
pub const MAX_BATCH: usize = 4;

const CORPUS: [&str; 3] = [
    "a calm piano track with a mellow feel .",
    "this song fits the video with its drums and rock mood .",
    "i suggest wild skies , a jazz track built on cello .",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum GradPath {
    /// Self-attention stacks (MHA, residual, LayerNorm).
    Attention,
    /// Query fusion for every strategy.
    Fusion,
    /// Contrastive batch loss including the temperature.
    Contrastive,
    /// Next-token loss including the music projection.
    Reasoner,
}

impl GradPath {
    pub const ALL: [GradPath; 4] = [
        GradPath::Attention,
        GradPath::Fusion,
        GradPath::Contrastive,
        GradPath::Reasoner,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GradPath::Attention => "attention",
            GradPath::Fusion => "fusion",
            GradPath::Contrastive => "contrastive",
            GradPath::Reasoner => "reasoner",
        }
    }
}

impl fmt::Display for GradPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GradPath {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        GradPath::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::config(format!("unknown gradient path {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCase {
    pub path: GradPath,
    pub dims: usize,
    pub seed: u64,
    /// Relative error over entries whose gap exceeds rounding noise.
    pub max_rel_error: f64,
    pub max_abs_error: f64,
}

impl GradCase {
    pub fn passed(&self) -> bool {
        self.max_rel_error < GRAD_TOLERANCE
    }
}

/// Gradient agreement of one check.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GradError {
    pub relative: f64,
    pub absolute: f64,
}

impl GradError {
    fn max(self, other: GradError) -> GradError {
        GradError {
            relative: self.relative.max(other.relative),
            absolute: self.absolute.max(other.absolute),
        }
    }
}

/// Compares backprop with central differences for the scalar loss built by
/// `build`. Gaps within finite-difference rounding count as agreement in
/// the relative error.
pub fn compare_gradients<F>(store: &ParamStore, build: F) -> Result<GradError>
where
    F: Fn(&mut Tape<'_>) -> Result<Var>,
{
    let (f0, analytic) = {
        let mut tape = Tape::new(store);
        let l = build(&mut tape)?;
        let g = tape.backward(l)?;
        let analytic: Vec<Matrix> = store
            .ids()
            .map(|id| {
                g.param(id).cloned().unwrap_or_else(|| {
                    let (r, c) = store.value(id).shape();
                    Matrix::zeros(r, c)
                })
            })
            .collect();
        (tape.value(l).item(), analytic)
    };
    let mut probe = store.clone();
    let numeric = finite_difference_grad(
        &mut probe,
        |s| {
            let mut tape = Tape::new(s);
            let l = build(&mut tape)?;
            Ok(tape.value(l).item())
        },
        DEFAULT_EPS,
    )?;
    let absolute = analytic
        .iter()
        .zip(&numeric)
        .flat_map(|(a, n)| a.as_slice().iter().zip(n.as_slice()))
        .map(|(a, n)| (a - n).abs())
        .fold(0.0, f64::max);
    Ok(GradError {
        relative: max_relative_error_above_noise(&analytic, &numeric, roundoff_bound(f0, DEFAULT_EPS)),
        absolute,
    })
}

/// Moves every parameter off its initial value. Fresh LayerNorm shifts are
/// zero, which at width 1 makes every target exactly zero and parks the
/// normalization on its floor, where the true derivative is zero but
/// backprop amplifies rounding by the inverse floor.
fn jitter(store: &mut ParamStore, seed: u64) {
    let mut rng = stream(seed, "grad-jitter", 0);
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let (r, c) = store.value(id).shape();
        let noise = Matrix::randn(r, c, 0.1, &mut rng);
        let v = store.value_mut(id);
        for (x, n) in v.as_mut_slice().iter_mut().zip(noise.as_slice()) {
            *x += n;
        }
    }
}

fn heads_for(dims: usize) -> usize {
    if dims.is_multiple_of(2) {
        2
    } else {
        1
    }
}

/// Scalar readout `sum(x · w)` with a fixed random column `w`.
fn readout(tape: &mut Tape<'_>, x: Var, w: &Matrix) -> Result<Var> {
    let w = tape.constant(w.clone());
    let y = tape.matmul(x, w)?;
    Ok(tape.sum_all(y))
}

fn random_seq(modality: Modality, rows: usize, cols: usize, seed: u64, label: &str) -> TokenSequence {
    let mut rng = stream(seed, label, 0);
    TokenSequence::new(modality, Matrix::randn(rows, cols, 1.0, &mut rng))
}

fn tiny_model_config(dims: usize, strategy: FusionStrategy) -> ModelConfig {
    ModelConfig {
        d_in: dims + 1,
        max_text_tokens: 6,
        fusion: FusionConfig {
            width: dims,
            layers: 1,
            target_layers: 1,
            heads: heads_for(dims),
            strategy,
            ..FusionConfig::default()
        },
    }
}

fn tiny_batch(b: usize, d_in: usize, seed: u64) -> Vec<Sample> {
    (0..b as u64)
        .map(|i| Sample {
            video: random_seq(Modality::Video, 3, d_in, seed + i, "grad-video"),
            music: random_seq(Modality::Music, 3, d_in, seed + i, "grad-music"),
            text: random_seq(Modality::Text, 4, d_in, seed + i, "grad-text"),
            target: random_seq(Modality::Music, 3, d_in, seed + i, "grad-target"),
        })
        .collect()
}

fn check_attention(dims: usize, seed: u64) -> Result<GradError> {
    let mut store = ParamStore::new();
    let mut rng = stream(seed, "grad-attention", 0);
    let stack = SelfAttentionStack::new(&mut store, &mut rng, "stack", dims, heads_for(dims), 2)?;
    jitter(&mut store, seed);
    let x = Matrix::randn(4, dims, 1.0, &mut rng);
    let w = Matrix::randn(dims, 1, 1.0, &mut rng);
    compare_gradients(&store, |tape| {
        let input = tape.constant(x.clone());
        let out = stack.forward(tape, input)?;
        readout(tape, out, &w)
    })
}

fn check_fusion(dims: usize, seed: u64) -> Result<GradError> {
    let mut worst = GradError::default();
    for strategy in FusionStrategy::ALL {
        let mut model = MuseChat::new(&tiny_model_config(dims, strategy), 0.5, seed)?;
        jitter(&mut model.store, seed);
        let sample = tiny_batch(1, dims + 1, seed).remove(0);
        let w = Matrix::randn(dims, 1, 1.0, &mut stream(seed, "grad-fusion-readout", 0));
        let err = compare_gradients(&model.store, |tape| {
            let fused = model.net.query.fuse(tape, sample.query())?;
            readout(tape, fused, &w)
        })?;
        worst = worst.max(err);
    }
    Ok(worst)
}

fn check_contrastive(dims: usize, seed: u64) -> Result<GradError> {
    let mut model = MuseChat::new(&tiny_model_config(dims, FusionStrategy::Mvt), 0.5, seed)?;
    jitter(&mut model.store, seed);
    let b = 2 + (seed as usize % (MAX_BATCH - 1));
    let batch = tiny_batch(b, dims + 1, seed);
    let mut worst = GradError::default();
    for normalize in [true, false] {
        let err = compare_gradients(&model.store, |tape| model.net.batch_loss(tape, &batch, normalize))?;
        worst = worst.max(err);
    }
    Ok(worst)
}

fn check_reasoner(dims: usize, seed: u64) -> Result<GradError> {
    let vocab = Vocabulary::from_corpus(CORPUS);
    let config = DecoderConfig {
        layers: 1,
        heads: heads_for(dims),
        width: dims,
        ffn_width: 2 * dims,
        context: 48,
        temperature: 0.0,
    };
    let mut r = Reasoner::new(vocab, dims, &config, seed)?;
    let (rows, cols) = r.store.value(r.head.weight).shape();
    *r.store.value_mut(r.head.weight) = Matrix::randn(rows, cols, 0.5, &mut stream(seed, "grad-head", 0));
    let music = Matrix::randn(1, dims, 1.0, &mut stream(seed, "grad-music-mean", 0)).into_vec();
    let response = r.vocab.encode_response(CORPUS[seed as usize % CORPUS.len()]);
    compare_gradients(&r.store, |tape| r.generation_loss(tape, &music, &response))
}

/// One case of the suite.
pub fn check_path(path: GradPath, dims: usize, seed: u64) -> Result<GradCase> {
    if dims == 0 || dims > MAX_DIMS {
        return Err(Error::config(format!(
            "gradient check dims must be in 1..={MAX_DIMS}, got {dims}"
        )));
    }
    let err = match path {
        GradPath::Attention => check_attention(dims, seed)?,
        GradPath::Fusion => check_fusion(dims, seed)?,
        GradPath::Contrastive => check_contrastive(dims, seed)?,
        GradPath::Reasoner => check_reasoner(dims, seed)?,
    };
    Ok(GradCase {
        path,
        dims,
        seed,
        max_rel_error: err.relative,
        max_abs_error: err.absolute,
    })
}

/// Every path at every width and seed.
pub fn run_suite(dims: &[usize], seeds: &[u64]) -> Result<Vec<GradCase>> {
    let mut out = Vec::new();
    for path in GradPath::ALL {
        for &d in dims {
            for &s in seeds {
                out.push(check_path(path, d, s)?);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_path_passes_at_small_widths() {
        for path in GradPath::ALL {
            for dims in [1, 2, 3] {
                let case = check_path(path, dims, 11).unwrap();
                assert!(case.passed(), "{path} dims {dims}: {}", case.max_rel_error);
            }
        }
    }

    #[test]
    fn a_wrong_gradient_is_caught() {
        let mut store = ParamStore::new();
        let x = store.add("x", Matrix::from_rows(&[vec![0.7, -1.2]]));
        let err = compare_gradients(&store, |tape| {
            let v = tape.param(x);
            let e = tape.exp(v);
            tape.matmul_bt(e, e)
        })
        .unwrap();
        assert!(err.relative < GRAD_TOLERANCE);
        // A constant copy hides half of the true derivative from backprop.
        let err = compare_gradients(&store, |tape| {
            let v = tape.param(x);
            let frozen = tape.constant(tape.value(v).clone());
            let e = tape.exp(v);
            let fe = tape.exp(frozen);
            tape.matmul_bt(e, fe)
        })
        .unwrap();
        assert!(err.relative > 0.4, "{err:?}");
    }

    #[test]
    fn dims_outside_range_are_rejected() {
        assert!(check_path(GradPath::Attention, 0, 1).is_err());
        assert!(check_path(GradPath::Attention, MAX_DIMS + 1, 1).is_err());
        assert_eq!("fusion".parse::<GradPath>().unwrap(), GradPath::Fusion);
        assert!("nope".parse::<GradPath>().is_err());
    }
}
