//! Tri-modal query fusion and its baseline variants.
//!
//! The default strategy adds the pooled video vector to two single-query
//! cross-attention terms: the prompt's cls row attending over the candidate
//! music sequence, and the music cls row attending over the prompt.

use crate::encoders::{pool_video, ModalityProjection, TokenSequence};
use crate::error::{Error, Result};
use crate::numerics::{check_heads, MultiHeadAttention, ParamId, ParamStore, SelfAttentionStack, Tape, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FusionStrategy {
    Mvt,
    Sum,
    SelfAttn,
    CrossAttn,
    Mvp,
    MusicVideoOrder,
    TextVideoOrder,
}

impl FusionStrategy {
    pub const ALL: [FusionStrategy; 7] = [
        FusionStrategy::Mvt,
        FusionStrategy::Sum,
        FusionStrategy::SelfAttn,
        FusionStrategy::CrossAttn,
        FusionStrategy::Mvp,
        FusionStrategy::MusicVideoOrder,
        FusionStrategy::TextVideoOrder,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FusionStrategy::Mvt => "mvt",
            FusionStrategy::Sum => "sum",
            FusionStrategy::SelfAttn => "self-attn",
            FusionStrategy::CrossAttn => "cross-attn",
            FusionStrategy::Mvp => "mvp",
            FusionStrategy::MusicVideoOrder => "music-video-order",
            FusionStrategy::TextVideoOrder => "text-video-order",
        }
    }

    fn uses_stacks(self) -> bool {
        !matches!(
            self,
            FusionStrategy::Sum | FusionStrategy::CrossAttn | FusionStrategy::Mvp
        )
    }

    fn uses_cross(self) -> bool {
        matches!(
            self,
            FusionStrategy::Mvt
                | FusionStrategy::CrossAttn
                | FusionStrategy::MusicVideoOrder
                | FusionStrategy::TextVideoOrder
        )
    }
}

impl FromStr for FusionStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|v| v.name() == s).ok_or_else(|| {
            let names: Vec<_> = Self::ALL.iter().map(|v| v.name()).collect();
            Error::config(format!(
                "unknown fusion strategy {s:?} (expected one of {})",
                names.join(", ")
            ))
        })
    }
}

impl fmt::Display for FusionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Which query-side branches exist. Only the `mvt` and `cross-attn`
/// strategies accept a partial set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Modalities {
    pub video: bool,
    pub music: bool,
    pub text: bool,
}

impl Default for Modalities {
    fn default() -> Self {
        Self::ALL
    }
}

impl Modalities {
    pub const ALL: Modalities = Modalities {
        video: true,
        music: true,
        text: true,
    };

    pub fn and(self, other: Modalities) -> Modalities {
        Modalities {
            video: self.video && other.video,
            music: self.music && other.music,
            text: self.text && other.text,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    pub width: usize,
    /// Self-attention layers in the candidate-music and prompt branches.
    pub layers: usize,
    /// Self-attention layers in the target-music encoder.
    pub target_layers: usize,
    pub heads: usize,
    pub strategy: FusionStrategy,
    pub modalities: Modalities,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            width: 32,
            layers: 4,
            target_layers: 2,
            heads: 4,
            strategy: FusionStrategy::Mvt,
            modalities: Modalities::ALL,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 {
            return Err(Error::config("fusion.width must be positive"));
        }
        check_heads(self.width, self.heads).map_err(|_| {
            Error::config(format!(
                "fusion.heads {} does not divide fusion.width {}",
                self.heads, self.width
            ))
        })?;
        let m = self.modalities;
        let partial_ok = matches!(self.strategy, FusionStrategy::Mvt | FusionStrategy::CrossAttn);
        if m != Modalities::ALL && !partial_ok {
            return Err(Error::config(format!(
                "fusion.modalities can only be restricted for mvt or cross-attn, not {}",
                self.strategy
            )));
        }
        if self.strategy == FusionStrategy::Mvp && !m.video {
            return Err(Error::config("mvp needs the video branch"));
        }
        if !(m.video || m.music || m.text) {
            return Err(Error::config("fusion.modalities disables every branch"));
        }
        Ok(())
    }

    /// Branch depth actually built (`cross-attn` drops the stacks).
    pub fn branch_layers(&self) -> usize {
        if self.strategy.uses_stacks() {
            self.layers
        } else {
            0
        }
    }
}

/// Raw per-modality inputs for one query. Absent entries are treated as
/// dropped at test time.
#[derive(Debug, Clone, Copy, Default)]
pub struct QueryInput<'a> {
    pub video: Option<&'a TokenSequence>,
    pub music: Option<&'a TokenSequence>,
    pub text: Option<&'a TokenSequence>,
}

/// Applies a self-attention stack to an already projected sequence.
/// With zero layers this is the identity.
pub fn encode_branch(tape: &mut Tape<'_>, seq: Var, stack: &SelfAttentionStack) -> Result<Var> {
    stack.forward(tape, seq)
}

/// `video + t2a(text_cls; music) + a2t(music_cls; text)`.
pub fn cross_fuse(
    tape: &mut Tape<'_>,
    video: Var,
    music: Var,
    text: Var,
    t2a: &MultiHeadAttention,
    a2t: &MultiHeadAttention,
) -> Result<Var> {
    let widths = [tape.shape(video).1, tape.shape(music).1, tape.shape(text).1];
    if widths.iter().any(|&w| w != t2a.width) || tape.shape(video).0 != 1 {
        return Err(Error::Dimension {
            op: "cross_fuse",
            lhs: tape.shape(video),
            rhs: (tape.shape(music).1, tape.shape(text).1),
        });
    }
    let (m_cls, t_cls) = (tape.row(music, 0)?, tape.row(text, 0)?);
    let text_to_music = t2a.forward(tape, t_cls, music)?;
    let music_to_text = a2t.forward(tape, m_cls, text)?;
    let cross = tape.add(text_to_music, music_to_text)?;
    tape.add(video, cross)
}

/// Query-side model: projections, branch stacks, and cross layers.
#[derive(Debug, Clone)]
pub struct FusionModel {
    pub config: FusionConfig,
    pub video_proj: Option<ModalityProjection>,
    pub music_proj: Option<ModalityProjection>,
    pub text_proj: Option<ModalityProjection>,
    pub text_pos: Option<ParamId>,
    pub music_stack: SelfAttentionStack,
    pub text_stack: SelfAttentionStack,
    /// First cross term: prompt cls over music for `mvt`, video over the
    /// attended branch for the order variants.
    pub cross_a: Option<MultiHeadAttention>,
    /// Second cross term: music cls over prompt for `mvt`, the attended
    /// branch's cls over video for the order variants.
    pub cross_b: Option<MultiHeadAttention>,
    pub max_text_tokens: usize,
}

impl FusionModel {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        d_in: usize,
        max_text_tokens: usize,
        config: &FusionConfig,
    ) -> Result<Self> {
        config.validate()?;
        let (d, h, m) = (config.width, config.heads, config.modalities);
        let depth = config.branch_layers();
        let stacks = config.strategy.uses_stacks();
        let video_proj = m
            .video
            .then(|| ModalityProjection::new(store, rng, "query.video_proj", d_in, d));
        let (music_proj, text_proj, text_pos, mut music_stack, mut text_stack) =
            if config.strategy == FusionStrategy::Mvp {
                (
                    None,
                    None,
                    None,
                    SelfAttentionStack::default(),
                    SelfAttentionStack::default(),
                )
            } else {
                (
                    m.music
                        .then(|| ModalityProjection::new(store, rng, "query.music_proj", d_in, d)),
                    m.text
                        .then(|| ModalityProjection::new(store, rng, "query.text_proj", d_in, d)),
                    m.text
                        .then(|| store.add_randn("query.text_pos", max_text_tokens, d, rng)),
                    SelfAttentionStack::default(),
                    SelfAttentionStack::default(),
                )
            };
        if stacks {
            if music_proj.is_some() {
                music_stack = SelfAttentionStack::new(store, rng, "query.music_stack", d, h, depth)?;
            }
            if text_proj.is_some() {
                text_stack = SelfAttentionStack::new(store, rng, "query.text_stack", d, h, depth)?;
            }
        }
        let (mut cross_a, mut cross_b) = (None, None);
        if config.strategy.uses_cross() && m.music && m.text {
            let (a, b) = match config.strategy {
                FusionStrategy::MusicVideoOrder => ("query.video_to_music", "query.music_to_video"),
                FusionStrategy::TextVideoOrder => ("query.video_to_text", "query.text_to_video"),
                _ => ("query.t2a", "query.a2t"),
            };
            cross_a = Some(MultiHeadAttention::new(store, rng, a, d, h)?);
            cross_b = Some(MultiHeadAttention::new(store, rng, b, d, h)?);
        }
        Ok(Self {
            config: config.clone(),
            video_proj,
            music_proj,
            text_proj,
            text_pos,
            music_stack,
            text_stack,
            cross_a,
            cross_b,
            max_text_tokens,
        })
    }

    pub fn has_video(&self) -> bool {
        self.video_proj.is_some()
    }

    pub fn pooled_video(&self, tape: &mut Tape<'_>, frames: &TokenSequence) -> Result<Var> {
        let proj = self
            .video_proj
            .as_ref()
            .ok_or_else(|| Error::config("this model has no video branch"))?;
        pool_video(tape, frames, proj)
    }

    pub fn music_projected(&self, tape: &mut Tape<'_>, seq: &TokenSequence) -> Result<Var> {
        let proj = self
            .music_proj
            .as_ref()
            .ok_or_else(|| Error::config("this model has no candidate-music branch"))?;
        proj.project(tape, seq)
    }

    /// Projection plus the learned position rows.
    pub fn text_projected(&self, tape: &mut Tape<'_>, seq: &TokenSequence) -> Result<Var> {
        let (proj, pos) = match (&self.text_proj, self.text_pos) {
            (Some(p), Some(pos)) => (p, pos),
            _ => return Err(Error::config("this model has no prompt branch")),
        };
        if seq.len() > self.max_text_tokens {
            return Err(Error::contract(format!(
                "prompt has {} rows, limit is {}",
                seq.len(),
                self.max_text_tokens
            )));
        }
        let x = proj.project(tape, seq)?;
        let pos = tape.param(pos);
        let pos = tape.select_rows(pos, (0..seq.len()).collect())?;
        tape.add(x, pos)
    }

    pub fn music_branch(&self, tape: &mut Tape<'_>, seq: &TokenSequence) -> Result<Var> {
        let x = self.music_projected(tape, seq)?;
        encode_branch(tape, x, &self.music_stack)
    }

    pub fn text_branch(&self, tape: &mut Tape<'_>, seq: &TokenSequence) -> Result<Var> {
        let x = self.text_projected(tape, seq)?;
        encode_branch(tape, x, &self.text_stack)
    }

    /// Video-only query used for the opening turn.
    pub fn first_turn(&self, tape: &mut Tape<'_>, frames: &TokenSequence) -> Result<Var> {
        self.pooled_video(tape, frames)
    }

    /// Second-turn query from whatever inputs are present and enabled.
    pub fn fuse(&self, tape: &mut Tape<'_>, input: QueryInput<'_>) -> Result<Var> {
        let m = self.config.modalities;
        let video = input.video.filter(|_| m.video);
        let music = input.music.filter(|_| m.music);
        let text = input.text.filter(|_| m.text);
        let need = |present: bool, what: &str| {
            if present {
                Ok(())
            } else {
                Err(Error::config(format!(
                    "{} fusion needs the {what} input",
                    self.config.strategy
                )))
            }
        };
        match self.config.strategy {
            FusionStrategy::Mvp => {
                need(video.is_some(), "video")?;
                self.pooled_video(tape, video.unwrap())
            }
            FusionStrategy::Sum => {
                need(
                    video.is_some() && music.is_some() && text.is_some(),
                    "video, music and text",
                )?;
                let v = self.pooled_video(tape, video.unwrap())?;
                let mu = self.music_projected(tape, music.unwrap())?;
                let mu = tape.mean_rows(mu)?;
                let tx = self.text_projected(tape, text.unwrap())?;
                let tx = tape.mean_rows(tx)?;
                let s = tape.add(mu, tx)?;
                tape.add(v, s)
            }
            FusionStrategy::SelfAttn => {
                need(
                    video.is_some() && music.is_some() && text.is_some(),
                    "video, music and text",
                )?;
                let v = self.pooled_video(tape, video.unwrap())?;
                let mu = self.music_branch(tape, music.unwrap())?;
                let tx = self.text_branch(tape, text.unwrap())?;
                let (mc, tc) = (tape.row(mu, 0)?, tape.row(tx, 0)?);
                let s = tape.add(mc, tc)?;
                tape.add(v, s)
            }
            FusionStrategy::MusicVideoOrder | FusionStrategy::TextVideoOrder => {
                need(
                    video.is_some() && music.is_some() && text.is_some(),
                    "video, music and text",
                )?;
                let v = self.pooled_video(tape, video.unwrap())?;
                let mu = self.music_branch(tape, music.unwrap())?;
                let tx = self.text_branch(tape, text.unwrap())?;
                let (attended, other) = if self.config.strategy == FusionStrategy::MusicVideoOrder {
                    (mu, tx)
                } else {
                    (tx, mu)
                };
                let (a, b) = self.cross_pair()?;
                let attended_cls = tape.row(attended, 0)?;
                let video_over = a.forward(tape, v, attended)?;
                let over_video = b.forward(tape, attended_cls, v)?;
                let other_cls = tape.row(other, 0)?;
                let pair = tape.add(video_over, over_video)?;
                let pair = tape.add(pair, other_cls)?;
                tape.add(v, pair)
            }
            FusionStrategy::Mvt | FusionStrategy::CrossAttn => {
                let v = video.map(|f| self.pooled_video(tape, f)).transpose()?;
                let mu = music.map(|s| self.music_branch(tape, s)).transpose()?;
                let tx = text.map(|s| self.text_branch(tape, s)).transpose()?;
                let extra = match (mu, tx) {
                    (Some(mu), Some(tx)) => {
                        let (t2a, a2t) = self.cross_pair()?;
                        let zero = tape.constant(crate::numerics::Matrix::zeros(1, self.config.width));
                        Some(cross_fuse(tape, zero, mu, tx, t2a, a2t)?)
                    }
                    (Some(only), None) | (None, Some(only)) => Some(tape.row(only, 0)?),
                    (None, None) => None,
                };
                match (v, extra) {
                    (Some(v), Some(e)) => tape.add(v, e),
                    (Some(v), None) => Ok(v),
                    (None, Some(e)) => Ok(e),
                    (None, None) => Err(Error::config("no usable modality in the query")),
                }
            }
        }
    }

    fn cross_pair(&self) -> Result<(&MultiHeadAttention, &MultiHeadAttention)> {
        match (&self.cross_a, &self.cross_b) {
            (Some(a), Some(b)) => Ok((a, b)),
            _ => Err(Error::config("cross-attention layers were not built for this model")),
        }
    }
}
