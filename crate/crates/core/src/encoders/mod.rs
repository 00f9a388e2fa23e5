//! Frozen per-modality feature providers, pooling, and the trainable
//! projections into the shared width.

mod catalog;
mod synth;
mod text;

pub use catalog::{load_features, save_features, CatalogItem, FeatureCatalog, CATALOG_MAGIC, CATALOG_VERSION};
pub use synth::SynthProvider;
pub use text::{tokenize, TextEncoder, PAD_TOKEN};

use crate::error::{Error, Result};
use crate::numerics::{order_invariant_sum, Linear, Matrix, ParamStore, Tape, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Video,
    Text,
    Music,
}

impl Modality {
    pub fn code(self) -> u8 {
        match self {
            Modality::Video => 0,
            Modality::Text => 1,
            Modality::Music => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Modality::Video),
            1 => Some(Modality::Text),
            2 => Some(Modality::Music),
            _ => None,
        }
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "video" | "video-frame" => Ok(Modality::Video),
            "text" => Ok(Modality::Text),
            "music" => Ok(Modality::Music),
            other => Err(Error::config(format!("unknown modality {other:?}"))),
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modality::Video => "video",
            Modality::Text => "text",
            Modality::Music => "music",
        })
    }
}

/// Per-modality feature rows. Text and music carry a cls summary row
/// first; video frames carry none.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    pub modality: Modality,
    pub tokens: Matrix,
}

impl TokenSequence {
    pub fn new(modality: Modality, tokens: Matrix) -> Self {
        Self { modality, tokens }
    }

    pub fn has_cls(&self) -> bool {
        self.modality != Modality::Video
    }

    pub fn len(&self) -> usize {
        self.tokens.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.rows() == 0
    }

    pub fn width(&self) -> usize {
        self.tokens.cols()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    /// Width of the frozen features.
    pub d_in: usize,
    /// Number of latent factors behind every track and video.
    pub latent_dim: usize,
    /// Rows per music segment, cls included.
    pub music_tokens: usize,
    pub frames: usize,
    pub segments: usize,
    /// Text rows, cls included.
    pub max_text_tokens: usize,
    pub frame_noise: f64,
    pub token_noise: f64,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            d_in: 48,
            latent_dim: 50,
            music_tokens: 16,
            frames: 8,
            segments: 12,
            max_text_tokens: 24,
            frame_noise: 0.3,
            token_noise: 0.2,
            seed: 0x5eed_f00d,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_in", self.d_in),
            ("latent_dim", self.latent_dim),
            ("frames", self.frames),
            ("segments", self.segments),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::config(format!("encoder.{name} must be positive")));
        }
        if self.music_tokens < 2 {
            return Err(Error::config(
                "encoder.music_tokens must be at least 2 (cls + one token)",
            ));
        }
        if self.max_text_tokens < 2 {
            return Err(Error::config("encoder.max_text_tokens must be at least 2"));
        }
        if self.segments > u8::MAX as usize {
            return Err(Error::config("encoder.segments must fit in one byte"));
        }
        if !(self.frame_noise >= 0.0 && self.token_noise >= 0.0) {
            return Err(Error::config("encoder noise scales must be non-negative"));
        }
        Ok(())
    }
}

/// Trainable per-token linear map `d_in → d` (no bias, so pooling commutes
/// with projection).
#[derive(Debug, Clone)]
pub struct ModalityProjection {
    pub linear: Linear,
    pub d_in: usize,
    pub d: usize,
}

impl ModalityProjection {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, rng: &mut R, name: &str, d_in: usize, d: usize) -> Self {
        Self {
            linear: Linear::new(store, rng, name, d_in, d, false),
            d_in,
            d,
        }
    }

    /// n×d_in → n×d.
    pub fn project(&self, tape: &mut Tape<'_>, seq: &TokenSequence) -> Result<Var> {
        project_modality(tape, seq, self)
    }
}

pub fn project_modality(tape: &mut Tape<'_>, seq: &TokenSequence, proj: &ModalityProjection) -> Result<Var> {
    if seq.width() != proj.d_in {
        return Err(Error::Dimension {
            op: "project_modality",
            lhs: seq.tokens.shape(),
            rhs: (proj.d_in, proj.d),
        });
    }
    let x = tape.constant(seq.tokens.clone());
    proj.linear.forward(tape, x)
}

/// Projects each frame, then averages over time (1×d).
pub fn pool_video(tape: &mut Tape<'_>, frames: &TokenSequence, proj: &ModalityProjection) -> Result<Var> {
    if frames.is_empty() {
        return Err(Error::contract("pool_video needs at least one frame"));
    }
    let projected = project_modality(tape, frames, proj)?;
    tape.mean_rows(projected)
}

/// Arithmetic mean of equally wide embeddings, order-invariant.
pub fn segment_average(vectors: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = vectors
        .first()
        .ok_or_else(|| Error::contract("segment_average over an empty list"))?;
    let width = first.len();
    if let Some(bad) = vectors.iter().find(|v| v.len() != width) {
        return Err(Error::Dimension {
            op: "segment_average",
            lhs: (1, width),
            rhs: (1, bad.len()),
        });
    }
    let mut column = Vec::with_capacity(vectors.len());
    Ok((0..width)
        .map(|c| {
            column.clear();
            column.extend(vectors.iter().map(|v| v[c]));
            order_invariant_sum(&mut column) / vectors.len() as f64
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(d_in: usize, d: usize) -> (ParamStore, ModalityProjection) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = ModalityProjection::new(&mut store, &mut rng, "proj", d_in, d);
        (store, p)
    }

    #[test]
    fn modality_parsing() {
        assert_eq!("music".parse::<Modality>().unwrap(), Modality::Music);
        assert!(matches!("audio".parse::<Modality>(), Err(Error::Config(_))));
    }

    #[test]
    fn identity_projection_is_noop() {
        let (mut store, p) = setup(3, 3);
        *store.value_mut(p.linear.weight) = Matrix::identity(3);
        let seq = TokenSequence::new(
            Modality::Music,
            Matrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![-4.0, 0.5, 9.0]]),
        );
        let mut tape = Tape::new(&store);
        let y = p.project(&mut tape, &seq).unwrap();
        assert_eq!(tape.value(y), &seq.tokens);
    }

    #[test]
    fn zero_projection_gives_zero() {
        let (mut store, p) = setup(3, 2);
        *store.value_mut(p.linear.weight) = Matrix::zeros(3, 2);
        let seq = TokenSequence::new(Modality::Music, Matrix::filled(4, 3, 1.7));
        let mut tape = Tape::new(&store);
        let y = p.project(&mut tape, &seq).unwrap();
        assert_eq!(tape.value(y), &Matrix::zeros(4, 2));
    }

    #[test]
    fn projection_matches_matmul() {
        let (store, p) = setup(5, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let seq = TokenSequence::new(Modality::Text, Matrix::randn(6, 5, 1.0, &mut rng));
        let mut tape = Tape::new(&store);
        let y = p.project(&mut tape, &seq).unwrap();
        let expected = seq.tokens.matmul(store.value(p.linear.weight)).unwrap();
        assert!(tape.value(y).max_abs_diff(&expected) <= 1e-15);
    }

    #[test]
    fn width_mismatch() {
        let (store, p) = setup(5, 4);
        let seq = TokenSequence::new(Modality::Text, Matrix::zeros(2, 4));
        let mut tape = Tape::new(&store);
        assert!(matches!(p.project(&mut tape, &seq), Err(Error::Dimension { .. })));
    }

    #[test]
    fn pooling_cases() {
        let (store, p) = setup(3, 4);
        let f = vec![0.5, -1.0, 2.0];
        let neg: Vec<f64> = f.iter().map(|v| -v).collect();
        let mut tape = Tape::new(&store);

        let one = TokenSequence::new(Modality::Video, Matrix::row_vector(&f));
        let pooled = pool_video(&mut tape, &one, &p).unwrap();
        let proj = p.project(&mut tape, &one).unwrap();
        assert_eq!(tape.value(pooled), tape.value(proj));

        let pair = TokenSequence::new(Modality::Video, Matrix::from_rows(&[f, neg]));
        let pooled = pool_video(&mut tape, &pair, &p).unwrap();
        assert!(tape.value(pooled).as_slice().iter().all(|&v| v == 0.0));

        let empty = TokenSequence::new(Modality::Video, Matrix::zeros(0, 3));
        assert!(matches!(pool_video(&mut tape, &empty, &p), Err(Error::Contract(_))));
    }

    #[test]
    fn pooling_is_permutation_invariant_bitwise() {
        let (store, p) = setup(6, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let frames = Matrix::randn(8, 6, 3.0, &mut rng);
        let perm = [5usize, 2, 7, 0, 1, 6, 3, 4];
        let shuffled = frames.select_rows(&perm);
        let mut tape = Tape::new(&store);
        let a = pool_video(&mut tape, &TokenSequence::new(Modality::Video, frames), &p).unwrap();
        let b = pool_video(&mut tape, &TokenSequence::new(Modality::Video, shuffled), &p).unwrap();
        let bits = |v: &Matrix| v.as_slice().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(tape.value(a)), bits(tape.value(b)));
    }

    #[test]
    fn segment_average_cases() {
        let v = vec![0.25, -3.0, 7.0];
        assert_eq!(segment_average(&vec![v.clone(); 12]).unwrap(), v);
        let neg: Vec<f64> = v.iter().map(|x| -x).collect();
        let paired: Vec<Vec<f64>> = (0..12)
            .map(|i| if i % 2 == 0 { v.clone() } else { neg.clone() })
            .collect();
        assert!(segment_average(&paired).unwrap().iter().all(|&x| x == 0.0));
        assert!(segment_average(&[]).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = Matrix::randn(12, 7, 1.0, &mut rng);
        let rows: Vec<Vec<f64>> = (0..12).map(|r| m.row(r).to_vec()).collect();
        let got = segment_average(&rows).unwrap();
        for (c, g) in got.iter().enumerate() {
            let naive = (0..12).map(|r| m.get(r, c)).sum::<f64>() / 12.0;
            assert!((g - naive).abs() <= 1e-15);
        }
    }
}
