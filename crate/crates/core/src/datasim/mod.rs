//! Synthetic conversational dataset.
//!
//! Tracks get sparse latent factor vectors. Two tagging systems name the
//! factors with disjoint vocabularies, and a track's top five tags per
//! system are its five strongest tagged factors. Each video is a noisy copy
//! of its target track's latent. Within each generation pool a surrogate
//! two-tower picker chooses the nearest non-target track as the first-turn
//! candidate, and the user prompt asks for the target's tags that the
//! candidate lacks while steering away from the candidate's extra tags.

mod templates;
mod words;

pub use words::{TAGS_A, TAGS_B};

use crate::encoders::{
    load_features, save_features, CatalogItem, EncoderConfig, FeatureCatalog, Modality, SynthProvider, TextEncoder,
};
use crate::error::{Error, Result};
use crate::numerics::cosine;
use crate::rng::{derive_seed, fnv1a, stream};
use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::path::Path;
use templates::{fill, join_tags};

pub const TAGS_PER_SYSTEM: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Number of videos, tracks, and quartets.
    pub n: usize,
    /// Tracks per generation pool.
    pub pool_size: usize,
    pub active_factors: usize,
    /// Standard deviation of the Gaussian noise separating a video's latent
    /// from its target track's latent.
    pub video_noise: f64,
    /// Per-segment latent jitter.
    pub segment_jitter: f64,
    /// Scale of the weak background weight on inactive factors.
    pub background: f64,
    pub metadata_fraction: f64,
    /// Tags per tagging system (at most the word list length).
    pub vocab_size: usize,
    pub max_desired: usize,
    pub max_undesired: usize,
    /// Train and test shares of the generation pools.
    pub split: [f64; 2],
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            n: 1024,
            pool_size: 100,
            active_factors: 6,
            video_noise: 0.25,
            segment_jitter: 0.05,
            background: 0.05,
            metadata_fraction: 0.3,
            vocab_size: 50,
            max_desired: 3,
            max_undesired: 2,
            split: [0.9, 0.1],
        }
    }
}

impl DataConfig {
    pub fn validate(&self, encoder: &EncoderConfig) -> Result<()> {
        if self.vocab_size < TAGS_PER_SYSTEM {
            return Err(Error::config(format!(
                "data.vocab_size must be at least {TAGS_PER_SYSTEM}"
            )));
        }
        if self.vocab_size > TAGS_A.len() || self.vocab_size > encoder.latent_dim {
            return Err(Error::config(
                "data.vocab_size exceeds the word lists or the latent dimension",
            ));
        }
        if self.active_factors == 0 || self.active_factors > encoder.latent_dim {
            return Err(Error::config("data.active_factors out of range"));
        }
        if self.pool_size < 2 {
            return Err(Error::config("data.pool_size must be at least 2"));
        }
        if self.n < self.pool_size {
            return Err(Error::config(format!(
                "data.n ({}) is smaller than data.pool_size ({})",
                self.n, self.pool_size
            )));
        }
        let [a, b] = self.split;
        if a < 0.0 || b < 0.0 || ((a + b) - 1.0).abs() > 1e-9 {
            return Err(Error::config("data.split must be two non-negative shares summing to 1"));
        }
        if !(0.0..=1.0).contains(&self.metadata_fraction) {
            return Err(Error::config("data.metadata_fraction must lie in [0, 1]"));
        }
        if self.video_noise < 0.0 || self.segment_jitter < 0.0 || self.background < 0.0 {
            return Err(Error::config("data noise scales must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Metadata {
    pub title: String,
    pub artist: String,
    pub album: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackProfile {
    pub id: String,
    pub latent: Vec<f64>,
    pub tags_a: Vec<String>,
    pub tags_b: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<Metadata>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoProfile {
    pub id: String,
    pub latent: Vec<f64>,
    pub target_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueQuartet {
    pub video_id: String,
    pub target_id: String,
    pub candidate_id: String,
    pub prompt: String,
    pub reasoning: String,
    pub target_tags_a: Vec<String>,
    pub target_tags_b: Vec<String>,
    pub candidate_tags_a: Vec<String>,
    pub candidate_tags_b: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<Metadata>,
    /// Generation pool holding both the candidate and the target.
    pub pool: usize,
}

/// Maps tags to latent factors for both tagging systems.
#[derive(Debug, Clone)]
pub struct Tagger {
    /// `factor_of_a[i]` is the factor named by `TAGS_A[i]`.
    factor_of_a: Vec<usize>,
    factor_of_b: Vec<usize>,
}

impl Tagger {
    pub fn new(latent_dim: usize, vocab_size: usize, seed: u64) -> Self {
        let perm = |label: &str| {
            let mut f: Vec<usize> = (0..latent_dim).collect();
            f.shuffle(&mut stream(seed, label, 0));
            f.truncate(vocab_size);
            f
        };
        Self {
            factor_of_a: perm("tag-perm-a"),
            factor_of_b: perm("tag-perm-b"),
        }
    }

    /// Tagged factors ordered by descending weight (ties by index).
    fn ranked(latent: &[f64], factors: &[usize]) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..factors.len()).collect();
        idx.sort_by(|&i, &j| {
            latent[factors[j]]
                .total_cmp(&latent[factors[i]])
                .then(factors[i].cmp(&factors[j]))
        });
        idx
    }

    pub fn top_tags(&self, latent: &[f64]) -> (Vec<String>, Vec<String>) {
        let pick = |factors: &[usize], words: &[&str; 50]| {
            Self::ranked(latent, factors)
                .into_iter()
                .take(TAGS_PER_SYSTEM)
                .map(|i| words[i].to_string())
                .collect()
        };
        (pick(&self.factor_of_a, &TAGS_A), pick(&self.factor_of_b, &TAGS_B))
    }

    pub fn factor_of(&self, tag: &str) -> Option<usize> {
        let find = |words: &[&str; 50], factors: &[usize]| {
            words[..factors.len()]
                .iter()
                .position(|w| *w == tag)
                .map(|i| factors[i])
        };
        find(&TAGS_A, &self.factor_of_a).or_else(|| find(&TAGS_B, &self.factor_of_b))
    }

    /// Every tag word with the factor it names.
    pub fn lexicon(&self) -> Vec<(&'static str, usize)> {
        let a = TAGS_A.iter().zip(&self.factor_of_a);
        let b = TAGS_B.iter().zip(&self.factor_of_b);
        a.chain(b).map(|(w, &f)| (*w, f)).collect()
    }

    pub fn tag_a(&self, factor: usize) -> Option<&'static str> {
        self.factor_of_a.iter().position(|&f| f == factor).map(|i| TAGS_A[i])
    }

    pub fn tag_b(&self, factor: usize) -> Option<&'static str> {
        self.factor_of_b.iter().position(|&f| f == factor).map(|i| TAGS_B[i])
    }
}

/// Everything produced by one generation run.
#[derive(Debug, Clone)]
pub struct SimData {
    pub tracks: Vec<TrackProfile>,
    pub videos: Vec<VideoProfile>,
    /// Generation pools as track ids.
    pub pools: Vec<Vec<String>>,
    /// One quartet per video, in video order.
    pub quartets: Vec<DialogueQuartet>,
    pub features: FeatureCatalog,
}

pub fn track_id(i: usize) -> String {
    format!("t{i:05}")
}

pub fn video_id(i: usize) -> String {
    format!("v{i:05}")
}

fn sample_latent(config: &DataConfig, k: usize, seed: u64, i: usize) -> Vec<f64> {
    let mut rng = stream(seed, "track-latent", i as u64);
    let bg = Normal::new(0.0, config.background.max(f64::MIN_POSITIVE)).unwrap();
    let mut z: Vec<f64> = (0..k)
        .map(|_| {
            if config.background > 0.0 {
                bg.sample(&mut rng).abs()
            } else {
                0.0
            }
        })
        .collect();
    for f in index::sample(&mut rng, k, config.active_factors) {
        z[f] = rng.gen_range(0.5..1.5);
    }
    z
}

fn sample_metadata(config: &DataConfig, seed: u64, i: usize) -> Option<Metadata> {
    let mut rng = stream(seed, "metadata", i as u64);
    if !rng.gen_bool(config.metadata_fraction) {
        return None;
    }
    let adj = words::TITLE_ADJECTIVES.choose(&mut rng).unwrap();
    let noun = words::TITLE_NOUNS.choose(&mut rng).unwrap();
    let artist = words::ARTISTS.choose(&mut rng).unwrap();
    let album_noun = words::TITLE_NOUNS.choose(&mut rng).unwrap();
    let album_word = words::ALBUM_WORDS.choose(&mut rng).unwrap();
    Some(Metadata {
        title: format!("{adj} {noun}"),
        artist: artist.to_string(),
        album: format!("{album_noun} {album_word}"),
    })
}

fn jittered(latent: &[f64], jitter: f64, rng: &mut impl Rng) -> Vec<f64> {
    latent
        .iter()
        .map(|v| v + jitter * rng.sample::<f64, _>(rand_distr::StandardNormal))
        .collect()
}

/// Seeded shuffle chunked into pools of `pool_size`. A remainder of at
/// least two tracks forms its own pool; a single leftover joins the last.
pub fn generation_pools(n: usize, pool_size: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(seed, "generation-pools", 0));
    let mut pools: Vec<Vec<usize>> = order.chunks(pool_size).map(|c| c.to_vec()).collect();
    if pools.len() > 1 && pools.last().is_some_and(|p| p.len() < 2) {
        let rest = pools.pop().unwrap();
        pools.last_mut().unwrap().extend(rest);
    }
    pools
}

/// Track profiles, videos, and frozen features.
pub fn generate_catalog(
    config: &DataConfig,
    encoder: &EncoderConfig,
    seed: u64,
) -> Result<(Vec<TrackProfile>, Vec<VideoProfile>, FeatureCatalog)> {
    config.validate(encoder)?;
    let k = encoder.latent_dim;
    let tagger = Tagger::new(k, config.vocab_size, seed);
    let provider = SynthProvider::new(encoder)?;
    let mut tracks = Vec::with_capacity(config.n);
    let mut videos = Vec::with_capacity(config.n);
    let mut features = FeatureCatalog::new();
    let noise = Normal::new(0.0, config.video_noise.max(f64::MIN_POSITIVE)).unwrap();
    for i in 0..config.n {
        let latent = sample_latent(config, k, seed, i);
        let (tags_a, tags_b) = tagger.top_tags(&latent);
        let id = track_id(i);
        let mut vrng = stream(seed, "video-latent", i as u64);
        let v_latent: Vec<f64> = latent
            .iter()
            .map(|z| {
                if config.video_noise > 0.0 {
                    z + noise.sample(&mut vrng)
                } else {
                    *z
                }
            })
            .collect();

        let segments = |modality: Modality, base: &[f64], label: &str| -> Result<Vec<_>> {
            (0..encoder.segments)
                .map(|s| {
                    let idx = (i * encoder.segments + s) as u64;
                    let mut jr = stream(seed, label, idx);
                    let z = jittered(base, config.segment_jitter, &mut jr);
                    let noise_seed = derive_seed(seed, &format!("{label}-noise"), idx);
                    Ok(provider.encode(&z, modality, noise_seed)?.tokens)
                })
                .collect()
        };
        let music = segments(Modality::Music, &latent, "music-segment")?;
        let frames = segments(Modality::Video, &v_latent, "video-segment")?;
        features.insert(
            id.clone(),
            CatalogItem {
                modality: Modality::Music,
                segments: music,
            },
        )?;
        features.insert(
            video_id(i),
            CatalogItem {
                modality: Modality::Video,
                segments: frames,
            },
        )?;

        videos.push(VideoProfile {
            id: video_id(i),
            latent: v_latent,
            target_id: id.clone(),
        });
        tracks.push(TrackProfile {
            id,
            latent,
            tags_a,
            tags_b,
            metadata: sample_metadata(config, seed, i),
        });
    }
    Ok((tracks, videos, features))
}

/// Nearest non-target track to the video by latent cosine (ties by id).
pub fn surrogate_mvp_candidate<'a>(
    video_latent: &[f64],
    target_id: &str,
    pool: &[&'a TrackProfile],
) -> Result<&'a TrackProfile> {
    if !pool.iter().any(|t| t.id == target_id) {
        return Err(Error::contract(format!("pool does not contain target {target_id}")));
    }
    let mut best: Option<(f64, &TrackProfile)> = None;
    for t in pool.iter().filter(|t| t.id != target_id) {
        let s = cosine(video_latent, &t.latent).unwrap_or(-1.0);
        let better = match best {
            None => true,
            Some((bs, bt)) => s > bs || (s == bs && t.id < bt.id),
        };
        if better {
            best = Some((s, t));
        }
    }
    best.map(|(_, t)| t)
        .ok_or_else(|| Error::contract("pool has no track besides the target"))
}

/// Top tagged factors of a track, strongest first.
fn top_factors(tagger: &Tagger, track: &TrackProfile) -> Vec<usize> {
    track.tags_a.iter().filter_map(|t| tagger.factor_of(t)).collect()
}

/// Renders the second-turn prompt. Tags are chosen per factor so the same
/// factor is never named twice.
pub fn build_prompt(
    tagger: &Tagger,
    config: &DataConfig,
    candidate: &TrackProfile,
    target: &TrackProfile,
    seed: u64,
) -> String {
    let mut rng = stream(
        seed,
        "prompt",
        fnv1a(target.id.as_bytes()) ^ fnv1a(candidate.id.as_bytes()),
    );
    let tf = top_factors(tagger, target);
    let cf = top_factors(tagger, candidate);
    let mut name = |f: usize| -> String {
        let a = tagger.tag_a(f);
        let b = tagger.tag_b(f);
        match (a, b) {
            (Some(a), Some(b)) => if rng.gen_bool(0.5) { a } else { b }.to_string(),
            (Some(a), None) => a.to_string(),
            (None, Some(b)) => b.to_string(),
            (None, None) => unreachable!("top factors are tagged"),
        }
    };
    let desired: Vec<String> = tf
        .iter()
        .filter(|f| !cf.contains(f))
        .take(config.max_desired)
        .map(|&f| name(f))
        .collect();
    let undesired: Vec<String> = cf
        .iter()
        .filter(|f| !tf.contains(f))
        .take(config.max_undesired)
        .map(|&f| name(f))
        .collect();
    if desired.is_empty() {
        let top = vec![name(tf[0])];
        return match &target.metadata {
            Some(m) => fill(
                templates::FALLBACK_TITLE_TEMPLATES[0],
                &[("title", &m.title), ("desired", &join_tags(&top))],
            ),
            None => fill(
                templates::DESIRED_TEMPLATES.choose(&mut rng).unwrap(),
                &[("desired", &join_tags(&top))],
            ),
        };
    }
    let mut choices: Vec<&str> = templates::CONTRAST_TEMPLATES.to_vec();
    if target.metadata.is_some() {
        choices.extend(templates::ARTIST_TEMPLATES);
    }
    let template = choices.choose(&mut rng).unwrap();
    let artist = target.metadata.as_ref().map(|m| m.artist.as_str()).unwrap_or("");
    fill(
        template,
        &[
            ("desired", &join_tags(&desired)),
            ("undesired", &join_tags(&undesired)),
            ("artist", artist),
        ],
    )
}

/// Justification text for recommending `target`.
pub fn render_reasoning(target: &TrackProfile) -> String {
    let pick = (fnv1a(target.id.as_bytes()) % 3) as usize;
    let slots = [
        ("t1", target.tags_a[0].as_str()),
        ("t2", target.tags_a[1].as_str()),
        ("t3", target.tags_b[0].as_str()),
    ];
    match &target.metadata {
        Some(m) => {
            let mut s = slots.to_vec();
            s.push(("title", &m.title));
            fill(templates::REASONING_WITH_TITLE[pick], &s)
        }
        None => fill(templates::REASONING_PLAIN[pick], &slots),
    }
}

/// Full generation: catalog, pools, candidates, prompts, and reasoning.
pub fn generate(config: &DataConfig, encoder: &EncoderConfig, seed: u64) -> Result<SimData> {
    let (tracks, videos, features) = generate_catalog(config, encoder, seed)?;
    let tagger = Tagger::new(encoder.latent_dim, config.vocab_size, seed);
    let pools_idx = generation_pools(config.n, config.pool_size, seed);
    let mut pool_of = vec![0usize; config.n];
    for (p, members) in pools_idx.iter().enumerate() {
        for &i in members {
            pool_of[i] = p;
        }
    }
    let quartets = videos
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let target = &tracks[i];
            let pool: Vec<&TrackProfile> = pools_idx[pool_of[i]].iter().map(|&j| &tracks[j]).collect();
            let cand = surrogate_mvp_candidate(&v.latent, &target.id, &pool)?;
            Ok(DialogueQuartet {
                video_id: v.id.clone(),
                target_id: target.id.clone(),
                candidate_id: cand.id.clone(),
                prompt: build_prompt(&tagger, config, cand, target, seed),
                reasoning: render_reasoning(target),
                target_tags_a: target.tags_a.clone(),
                target_tags_b: target.tags_b.clone(),
                candidate_tags_a: cand.tags_a.clone(),
                candidate_tags_b: cand.tags_b.clone(),
                metadata: target.metadata.clone(),
                pool: pool_of[i],
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let pools = pools_idx
        .iter()
        .map(|p| p.iter().map(|&i| track_id(i)).collect())
        .collect();
    Ok(SimData {
        tracks,
        videos,
        pools,
        quartets,
        features,
    })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Split {
    pub train: Vec<DialogueQuartet>,
    pub test: Vec<DialogueQuartet>,
}

/// Assigns whole generation pools to train or test, so no track id (target
/// or candidate) appears in both. Full-size pools are preferred for test.
pub fn emit_dataset(sim: &SimData, split: [f64; 2], seed: u64) -> Result<Split> {
    let [a, b] = split;
    if a < 0.0 || b < 0.0 || ((a + b) - 1.0).abs() > 1e-9 {
        return Err(Error::config("split shares must be non-negative and sum to 1"));
    }
    let n_pools = sim.pools.len();
    let n_test = ((b * n_pools as f64).round() as usize).min(n_pools);
    let full = sim.pools.iter().map(Vec::len).max().unwrap_or(0);
    let mut order: Vec<usize> = (0..n_pools).collect();
    order.shuffle(&mut stream(seed, "split", 0));
    order.sort_by_key(|&p| sim.pools[p].len() != full);
    let test_pools = &order[..n_test];
    let mut out = Split::default();
    for q in &sim.quartets {
        if test_pools.contains(&q.pool) {
            out.test.push(q.clone());
        } else {
            out.train.push(q.clone());
        }
    }
    Ok(out)
}

/// Header written next to the data files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub seed: u64,
    pub data: DataConfig,
    pub encoder: EncoderConfig,
    pub pools: Vec<Vec<String>>,
}

pub const TRAIN_FILE: &str = "train.jsonl";
pub const TEST_FILE: &str = "test.jsonl";
pub const TRACKS_FILE: &str = "tracks.jsonl";
pub const VIDEOS_FILE: &str = "videos.jsonl";
pub const FEATURES_FILE: &str = "features.mceb";
pub const INFO_FILE: &str = "dataset.json";
pub const ALL_FILES: [&str; 6] = [
    TRAIN_FILE,
    TEST_FILE,
    TRACKS_FILE,
    VIDEOS_FILE,
    FEATURES_FILE,
    INFO_FILE,
];

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in rows {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = std::fs::File::open(path).map_err(|e| Error::data(format!("cannot open {}: {e}", path.display())))?;
    std::io::BufReader::new(file)
        .lines()
        .enumerate()
        .filter(|(_, l)| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .map(|(n, line)| {
            serde_json::from_str(&line?).map_err(|e| Error::data(format!("{}:{}: {e}", path.display(), n + 1)))
        })
        .collect()
}

/// Loaded dataset directory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub info: DatasetInfo,
    pub split: Split,
    pub tracks: Vec<TrackProfile>,
    pub videos: Vec<VideoProfile>,
    pub features: FeatureCatalog,
}

impl Dataset {
    pub fn from_sim(sim: SimData, info: DatasetInfo, split: Split) -> Self {
        Self {
            info,
            split,
            tracks: sim.tracks,
            videos: sim.videos,
            features: sim.features,
        }
    }

    pub fn track(&self, id: &str) -> Option<&TrackProfile> {
        self.tracks
            .binary_search_by(|t| t.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.tracks[i])
    }

    pub fn tagger(&self) -> Tagger {
        Tagger::new(self.info.encoder.latent_dim, self.info.data.vocab_size, self.info.seed)
    }

    /// Frozen prompt encoder whose tag words carry their factors.
    pub fn text_encoder(&self) -> TextEncoder {
        let enc = &self.info.encoder;
        TextEncoder::new(enc.d_in, enc.max_text_tokens, enc.seed).with_lexicon(enc.latent_dim, self.tagger().lexicon())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_jsonl(&dir.join(TRAIN_FILE), &self.split.train)?;
        write_jsonl(&dir.join(TEST_FILE), &self.split.test)?;
        write_jsonl(&dir.join(TRACKS_FILE), &self.tracks)?;
        write_jsonl(&dir.join(VIDEOS_FILE), &self.videos)?;
        save_features(&self.features, dir.join(FEATURES_FILE))?;
        let mut info = serde_json::to_string_pretty(&self.info)?;
        info.push('\n');
        std::fs::write(dir.join(INFO_FILE), info)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        if !dir.is_dir() {
            return Err(Error::data(format!("data directory {} does not exist", dir.display())));
        }
        let info_path = dir.join(INFO_FILE);
        let info_text = std::fs::read_to_string(&info_path)
            .map_err(|e| Error::data(format!("cannot read {}: {e}", info_path.display())))?;
        let info: DatasetInfo = serde_json::from_str(&info_text)?;
        let mut tracks: Vec<TrackProfile> = read_jsonl(&dir.join(TRACKS_FILE))?;
        tracks.sort_by(|a, b| a.id.cmp(&b.id));
        Ok(Self {
            info,
            split: Split {
                train: read_jsonl(&dir.join(TRAIN_FILE))?,
                test: read_jsonl(&dir.join(TEST_FILE))?,
            },
            tracks,
            videos: read_jsonl(&dir.join(VIDEOS_FILE))?,
            features: load_features(dir.join(FEATURES_FILE))?,
        })
    }
}

/// Generates, splits, and packages a dataset in memory.
pub fn build_dataset(config: &DataConfig, encoder: &EncoderConfig, seed: u64) -> Result<Dataset> {
    let sim = generate(config, encoder, seed)?;
    let split = emit_dataset(&sim, config.split, seed)?;
    let info = DatasetInfo {
        seed,
        data: config.clone(),
        encoder: encoder.clone(),
        pools: sim.pools.clone(),
    };
    Ok(Dataset::from_sim(sim, info, split))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::tokenize;
    use std::collections::{BTreeSet, HashMap};

    fn small(n: usize, pool: usize) -> DataConfig {
        DataConfig {
            n,
            pool_size: pool,
            ..DataConfig::default()
        }
    }

    fn encoder() -> EncoderConfig {
        EncoderConfig {
            segments: 2,
            ..EncoderConfig::default()
        }
    }

    fn profile(id: &str, latent: Vec<f64>, tagger: &Tagger, meta: Option<Metadata>) -> TrackProfile {
        let (tags_a, tags_b) = tagger.top_tags(&latent);
        TrackProfile {
            id: id.into(),
            latent,
            tags_a,
            tags_b,
            metadata: meta,
        }
    }

    fn spiky(k: usize, active: &[(usize, f64)]) -> Vec<f64> {
        let mut z = vec![0.0; k];
        for &(f, w) in active {
            z[f] = w;
        }
        z
    }

    #[test]
    fn word_lists_are_distinct() {
        let all: BTreeSet<&str> = TAGS_A.iter().chain(TAGS_B.iter()).copied().collect();
        assert_eq!(all.len(), 100);
    }

    #[test]
    fn catalog_is_deterministic() {
        let a = generate_catalog(&small(40, 20), &encoder(), 3).unwrap();
        let b = generate_catalog(&small(40, 20), &encoder(), 3).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
        assert_eq!(a.2, b.2);
    }

    #[test]
    fn top_tag_is_the_largest_factor() {
        let (tracks, _, _) = generate_catalog(&small(50, 10), &encoder(), 4).unwrap();
        let tagger = Tagger::new(50, 50, 4);
        for t in &tracks {
            let argmax = (0..50).max_by(|&i, &j| t.latent[i].total_cmp(&t.latent[j])).unwrap();
            assert_eq!(tagger.factor_of(&t.tags_a[0]), Some(argmax));
            assert_eq!(tagger.factor_of(&t.tags_b[0]), Some(argmax));
            assert_eq!(t.tags_a.len(), 5);
            assert_eq!(t.tags_b.len(), 5);
        }
    }

    #[test]
    fn tag_frequencies_are_not_degenerate() {
        let cfg = DataConfig {
            n: 1000,
            ..DataConfig::default()
        };
        let tagger = Tagger::new(50, 50, 5);
        let mut counts: HashMap<String, usize> = HashMap::new();
        for i in 0..1000 {
            let (a, b) = tagger.top_tags(&sample_latent(&cfg, 50, 5, i));
            for t in a.into_iter().chain(b) {
                *counts.entry(t).or_default() += 1;
            }
        }
        assert!(counts.values().all(|&c| c <= 500), "{counts:?}");
    }

    #[test]
    fn small_vocab_is_rejected() {
        let cfg = DataConfig {
            vocab_size: 4,
            ..small(20, 10)
        };
        assert!(generate_catalog(&cfg, &encoder(), 0).unwrap_err().is_config());
    }

    #[test]
    fn candidate_cases() {
        let tagger = Tagger::new(50, 50, 1);
        let t = profile("t1", spiky(50, &[(1, 1.0)]), &tagger, None);
        let x = profile("t2", spiky(50, &[(2, 1.0)]), &tagger, None);
        let pool = [&t, &x];
        assert_eq!(surrogate_mvp_candidate(&t.latent, "t1", &pool).unwrap().id, "t2");
        assert!(surrogate_mvp_candidate(&t.latent, "t9", &pool).is_err());
    }

    #[test]
    fn candidate_matches_exhaustive_scan() {
        let cfg = DataConfig {
            n: 2000,
            ..DataConfig::default()
        };
        let tagger = Tagger::new(50, 50, 2);
        let tracks: Vec<TrackProfile> = (0..2000)
            .map(|i| profile(&track_id(i), sample_latent(&cfg, 50, 2, i), &tagger, None))
            .collect();
        let pool: Vec<&TrackProfile> = tracks.iter().collect();
        let video = jittered(&tracks[17].latent, 0.3, &mut stream(9, "v", 0));
        let got = surrogate_mvp_candidate(&video, &tracks[17].id, &pool).unwrap();
        let sims: Vec<f64> = tracks.iter().map(|t| cosine(&video, &t.latent).unwrap()).collect();
        let mut best = 0;
        for i in 0..2000 {
            if i != 17 && sims[i] > sims[best] {
                best = i;
            }
        }
        assert_eq!(got.id, tracks[best].id);
        for (i, s) in sims.iter().enumerate() {
            if i != 17 {
                assert!(cosine(&video, &got.latent).unwrap() >= *s);
            }
        }
    }

    #[test]
    fn prompt_cases() {
        let tagger = Tagger::new(50, 50, 3);
        let cfg = DataConfig::default();
        let target = profile(
            "t1",
            spiky(50, &[(0, 1.5), (1, 1.4), (2, 1.3), (3, 1.2), (4, 1.1)]),
            &tagger,
            None,
        );
        let cand = profile(
            "t2",
            spiky(50, &[(10, 1.5), (11, 1.4), (12, 1.3), (13, 1.2), (14, 1.1)]),
            &tagger,
            None,
        );
        let target_names: BTreeSet<String> = target.tags_a.iter().chain(&target.tags_b).cloned().collect();
        let cand_names: BTreeSet<String> = cand.tags_a.iter().chain(&cand.tags_b).cloned().collect();
        for seed in 0..50 {
            let p = build_prompt(&tagger, &cfg, &cand, &target, seed);
            let toks: BTreeSet<String> = tokenize(&p).into_iter().collect();
            assert!(toks.iter().any(|t| target_names.contains(t)), "{p}");
            assert!(toks.iter().any(|t| cand_names.contains(t)), "{p}");
        }

        let meta = Metadata {
            title: "golden river".into(),
            artist: "nova".into(),
            album: "fire tales".into(),
        };
        let twin = profile("t3", target.latent.clone(), &tagger, Some(meta));
        let p = build_prompt(&tagger, &cfg, &target, &twin, 1);
        assert!(p.contains("golden river"), "{p}");
        let plain = profile("t4", target.latent.clone(), &tagger, None);
        let p = build_prompt(&tagger, &cfg, &target, &plain, 1);
        assert!(tokenize(&p).iter().any(|t| target_names.contains(t)), "{p}");
    }

    #[test]
    fn prompts_fit_the_text_encoder() {
        let sim = generate(&small(500, 100), &encoder(), 6).unwrap();
        let limit = EncoderConfig::default().max_text_tokens - 1;
        for q in &sim.quartets {
            assert!(!q.prompt.is_empty());
            assert!(tokenize(&q.prompt).len() <= limit, "{}", q.prompt);
        }
    }

    #[test]
    fn reasoning_cases() {
        let tagger = Tagger::new(50, 50, 3);
        let z = spiky(50, &[(0, 1.5), (1, 1.4), (2, 1.3), (3, 1.2), (4, 1.1)]);
        let meta = Metadata {
            title: "velvet storm".into(),
            artist: "vega".into(),
            album: "rain letters".into(),
        };
        let with = profile("t1", z.clone(), &tagger, Some(meta));
        assert!(render_reasoning(&with).contains("velvet storm"));
        let without = profile("t2", z, &tagger, None);
        let r = render_reasoning(&without);
        let n_tags = tokenize(&r)
            .iter()
            .filter(|t| without.tags_a.contains(t) || without.tags_b.contains(t))
            .count();
        assert!(n_tags >= 2, "{r}");
    }

    #[test]
    fn reasoning_vocabulary_is_bounded() {
        let cfg = DataConfig {
            n: 1000,
            ..DataConfig::default()
        };
        let tagger = Tagger::new(50, 50, 8);
        let mut vocab = BTreeSet::new();
        for i in 0..1000 {
            let t = profile(
                &track_id(i),
                sample_latent(&cfg, 50, 8, i),
                &tagger,
                sample_metadata(&cfg, 8, i),
            );
            vocab.extend(tokenize(&render_reasoning(&t)));
        }
        assert!(vocab.len() <= 512, "{}", vocab.len());
    }

    #[test]
    fn quartet_invariants_and_informative_prompts() {
        let sim = generate(&small(300, 50), &encoder(), 7).unwrap();
        assert_eq!(sim.quartets.len(), 300);
        assert_eq!(sim.pools.len(), 6);
        let mut informative = 0;
        for q in &sim.quartets {
            assert_ne!(q.candidate_id, q.target_id);
            assert!(sim.pools[q.pool].contains(&q.candidate_id));
            assert!(sim.pools[q.pool].contains(&q.target_id));
            let t: BTreeSet<_> = q.target_tags_a.iter().collect();
            let c: BTreeSet<_> = q.candidate_tags_a.iter().collect();
            if t.symmetric_difference(&c).next().is_some() {
                informative += 1;
            }
        }
        assert!(informative * 100 >= 95 * 300, "{informative}");
    }

    #[test]
    fn pools_handle_remainders() {
        assert_eq!(generation_pools(100, 50, 1).len(), 2);
        let p = generation_pools(101, 50, 1);
        assert_eq!(p.iter().map(Vec::len).collect::<Vec<_>>(), vec![50, 51]);
        let p = generation_pools(104, 50, 1);
        assert_eq!(p.iter().map(Vec::len).collect::<Vec<_>>(), vec![50, 50, 4]);
    }

    #[test]
    fn split_cases() {
        let sim = generate(&small(200, 20), &encoder(), 8).unwrap();
        let all = emit_dataset(&sim, [1.0, 0.0], 8).unwrap();
        assert_eq!(all.train.len(), 200);
        assert!(all.test.is_empty());
        let s = emit_dataset(&sim, [0.9, 0.1], 8).unwrap();
        assert_eq!(s.test.len(), 20);
        let ids = |qs: &[DialogueQuartet]| -> BTreeSet<String> {
            qs.iter()
                .flat_map(|q| [q.video_id.clone(), q.target_id.clone(), q.candidate_id.clone()])
                .collect()
        };
        assert!(ids(&s.train).is_disjoint(&ids(&s.test)));
        assert!(emit_dataset(&sim, [0.5, 0.6], 8).unwrap_err().is_config());
    }

    #[test]
    fn files_are_byte_identical_across_runs() {
        let cfg = small(60, 20);
        let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
        for d in &dirs {
            build_dataset(&cfg, &encoder(), 11).unwrap().save(d.path()).unwrap();
        }
        for f in ALL_FILES {
            let a = std::fs::read(dirs[0].path().join(f)).unwrap();
            let b = std::fs::read(dirs[1].path().join(f)).unwrap();
            assert_eq!(fnv1a(&a), fnv1a(&b), "{f}");
        }
        let loaded = Dataset::load(dirs[0].path()).unwrap();
        assert_eq!(loaded.split.train.len() + loaded.split.test.len(), 60);
        assert_eq!(loaded.features.len(), 120);
    }
}
