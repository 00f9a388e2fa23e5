//! Frozen synthetic feature providers.
//!
//! Each modality gets a fixed random linear map from the latent factor
//! space into `d_in`, derived from the provider seed. Music tokens each
//! see a different group of factors (plus a shared global component), so
//! individual tokens carry partial information the way spectrogram patches
//! do. Video frames all see the full latent through one map.

use super::{EncoderConfig, Modality, TokenSequence};
use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::rng::stream;
use rand::Rng;
use rand_distr::StandardNormal;

/// Share of each music token driven by the global (all-factor) map.
const MUSIC_GLOBAL_WEIGHT: f64 = 0.35;

#[derive(Debug, Clone)]
pub struct SynthProvider {
    config: EncoderConfig,
    video_map: Matrix,
    music_global: Matrix,
    music_token_maps: Vec<Matrix>,
    music_groups: Vec<Vec<usize>>,
    music_cls: Vec<f64>,
}

fn frozen(seed: u64, label: &str, index: u64, rows: usize, cols: usize, std: f64) -> Matrix {
    let mut rng = stream(seed, label, index);
    Matrix::randn(rows, cols, std, &mut rng)
}

impl SynthProvider {
    pub fn new(config: &EncoderConfig) -> Result<Self> {
        config.validate()?;
        let (k, d) = (config.latent_dim, config.d_in);
        let std = 3.0 / (k as f64).sqrt();
        let content_tokens = config.music_tokens - 1;
        let music_groups: Vec<Vec<usize>> = (0..content_tokens)
            .map(|j| (0..k).filter(|f| f % content_tokens == j).collect())
            .collect();
        let group_std = 3.0 / (k as f64 / content_tokens as f64).max(1.0).sqrt();
        Ok(Self {
            config: config.clone(),
            video_map: frozen(config.seed, "video-map", 0, k, d, std),
            music_global: frozen(config.seed, "music-global", 0, k, d, std),
            music_token_maps: (0..content_tokens)
                .map(|j| frozen(config.seed, "music-token-map", j as u64, k, d, group_std))
                .collect(),
            music_groups,
            music_cls: frozen(config.seed, "cls", Modality::Music.code() as u64, 1, d, 1.0).into_vec(),
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    /// Deterministic token sequence for one item segment: frozen map of the
    /// latent per token plus noise drawn from `noise_seed`.
    pub fn encode(&self, latent: &[f64], modality: Modality, noise_seed: u64) -> Result<TokenSequence> {
        if latent.len() != self.config.latent_dim {
            return Err(Error::Dimension {
                op: "synth_encode latent",
                lhs: (1, latent.len()),
                rhs: (1, self.config.latent_dim),
            });
        }
        let mut rng = stream(noise_seed, "synth-noise", modality.code() as u64);
        let z = Matrix::row_vector(latent);
        let d = self.config.d_in;
        match modality {
            Modality::Video => {
                let base = z.matmul(&self.video_map)?;
                let mut frames = Matrix::zeros(self.config.frames, d);
                for f in 0..self.config.frames {
                    for (o, b) in frames.row_mut(f).iter_mut().zip(base.as_slice()) {
                        *o = b + self.config.frame_noise * rng.sample::<f64, _>(StandardNormal);
                    }
                }
                Ok(TokenSequence::new(Modality::Video, frames))
            }
            Modality::Music => {
                let global = z.matmul(&self.music_global)?;
                let mut tokens = Matrix::zeros(self.config.music_tokens, d);
                tokens.row_mut(0).copy_from_slice(&self.music_cls);
                for (j, (map, group)) in self.music_token_maps.iter().zip(&self.music_groups).enumerate() {
                    let mut masked = vec![0.0; latent.len()];
                    for &f in group {
                        masked[f] = latent[f];
                    }
                    let local = Matrix::row_vector(&masked).matmul(map)?;
                    let row = tokens.row_mut(j + 1);
                    for ((x, g), l) in row.iter_mut().zip(global.as_slice()).zip(local.as_slice()) {
                        *x = MUSIC_GLOBAL_WEIGHT * g
                            + l
                            + self.config.token_noise * rng.sample::<f64, _>(StandardNormal);
                    }
                }
                Ok(TokenSequence::new(Modality::Music, tokens))
            }
            Modality::Text => Err(Error::config(
                "text features come from the token table, not from latent factors",
            )),
        }
    }
}
