//! Two-turn recommendation sessions: video first, then prompt refinement.

use musechat::contrastive::{FeatureSource, MuseChat};
use musechat::datasim::{build_prompt, Dataset, DialogueQuartet};
use musechat::encoders::TextEncoder;
use musechat::reasoner::{track_music_mean, Reasoner};
use musechat::retrieval::{build_pools, first_turn_query, rank, second_turn_query, MusicPool};
use musechat::rng::stream;
use musechat::{Error, Result};
use rand::seq::SliceRandom;
use rand::Rng;
use std::collections::BTreeMap;
use std::fmt::Write as _;

/// One ranked turn.
#[derive(Debug, Clone, PartialEq)]
pub struct TurnOutcome {
    pub turn: usize,
    pub candidate: Option<String>,
    pub prompt: Option<String>,
    pub order: Vec<String>,
    /// The prompt held no words and was encoded as padding.
    pub low_information: bool,
    /// Rank of the video's paired track when it is in the pool.
    pub target_rank: Option<usize>,
}

impl TurnOutcome {
    pub fn top(&self) -> &str {
        &self.order[0]
    }
}

pub struct Session<'a> {
    pub model: &'a MuseChat,
    pub dataset: &'a Dataset,
    pub text: TextEncoder,
    pub pool: MusicPool,
    pub quartet: &'a DialogueQuartet,
    turns: Vec<TurnOutcome>,
}

impl<'a> Session<'a> {
    /// Session for `video_id` over pool `pool_index` of its split (the pool
    /// holding its paired track when no index is given).
    pub fn open(
        model: &'a MuseChat,
        dataset: &'a Dataset,
        video_id: &str,
        pool_index: Option<usize>,
        pool_size: usize,
        seed: u64,
    ) -> Result<Self> {
        let in_split = |qs: &'a [DialogueQuartet]| qs.iter().find(|q| q.video_id == video_id).map(|q| (q, qs));
        let (quartet, split) = in_split(&dataset.split.test)
            .or_else(|| in_split(&dataset.split.train))
            .ok_or_else(|| Error::data(format!("unknown video id {video_id:?}")))?;
        let mut targets: Vec<String> = split.iter().map(|q| q.target_id.clone()).collect();
        targets.sort();
        let pools = build_pools(&targets, pool_size, seed)?;
        let ids = match pool_index {
            Some(i) => pools
                .get(i)
                .ok_or_else(|| Error::data(format!("pool index {i} out of range ({} pools)", pools.len())))?,
            None => pools
                .iter()
                .find(|p| p.contains(&quartet.target_id))
                .or(pools.first())
                .ok_or_else(|| Error::data("no evaluation pool"))?,
        };
        let pool = embed_pool(model, dataset, ids)?;
        Ok(Self {
            model,
            dataset,
            text: dataset.text_encoder(),
            pool,
            quartet,
            turns: Vec::new(),
        })
    }

    fn source(&self) -> FeatureSource<'_> {
        FeatureSource {
            catalog: &self.dataset.features,
            text: &self.text,
        }
    }

    fn record(&mut self, mut outcome: TurnOutcome) -> &TurnOutcome {
        outcome.target_rank = outcome
            .order
            .iter()
            .position(|id| *id == self.quartet.target_id)
            .map(|p| p + 1);
        self.turns.push(outcome);
        self.turns.last().expect("just pushed")
    }

    /// Video-only ranking.
    pub fn first_turn(&mut self) -> Result<&TurnOutcome> {
        let query = first_turn_query(self.model, &self.source(), &self.quartet.video_id)?
            .ok_or_else(|| Error::config("the model has no video branch"))?;
        let order = rank(&query, &self.pool)?.order;
        Ok(self.record(TurnOutcome {
            turn: 1,
            candidate: None,
            prompt: None,
            order,
            low_information: false,
            target_rank: None,
        }))
    }

    /// Re-ranks with the previous turn's top track as candidate.
    pub fn refine(&mut self, prompt: &str) -> Result<&TurnOutcome> {
        let candidate = self
            .turns
            .last()
            .map(|t| t.top().to_string())
            .ok_or_else(|| Error::contract("refine needs a previous turn"))?;
        let (seq, low_information) = self.text.encode(prompt);
        let keep = self.model.config.fusion.modalities;
        let query = second_turn_query(
            self.model,
            &self.source(),
            &self.quartet.video_id,
            &candidate,
            &seq,
            keep,
        )?;
        let order = rank(&query, &self.pool)?.order;
        let turn = self.turns.len() + 1;
        Ok(self.record(TurnOutcome {
            turn,
            candidate: Some(candidate),
            prompt: Some(prompt.to_string()),
            order,
            low_information,
            target_rank: None,
        }))
    }

    pub fn turns(&self) -> &[TurnOutcome] {
        &self.turns
    }

    /// Justification for `track_id`, with its title when known.
    pub fn justify(&self, reasoner: &Reasoner, track_id: &str, seed: u64) -> Result<String> {
        let mean = track_music_mean(self.model, &self.dataset.features, track_id)?;
        let title = self.title(track_id);
        reasoner.generate(&mean, title, seed)
    }

    pub fn title(&self, track_id: &str) -> Option<&str> {
        self.dataset
            .track(track_id)
            .and_then(|t| t.metadata.as_ref())
            .map(|m| m.title.as_str())
    }

    /// Human-readable listing of one turn.
    pub fn render_turn(&self, outcome: &TurnOutcome, top_k: usize) -> String {
        let mut out = match (&outcome.candidate, &outcome.prompt) {
            (Some(c), Some(p)) => format!("turn {} (candidate {c}, prompt {p:?})\n", outcome.turn),
            _ => format!("turn {} (video only)\n", outcome.turn),
        };
        if outcome.low_information {
            out.push_str("  note: empty prompt, low-information turn (padding only)\n");
        }
        for (i, id) in outcome.order.iter().take(top_k).enumerate() {
            let _ = write!(out, "  {:>3}. {id}", i + 1);
            if let Some(t) = self.title(id) {
                let _ = write!(out, "  \"{t}\"");
            }
            out.push('\n');
        }
        if let Some(r) = outcome.target_rank {
            let _ = writeln!(out, "  paired track {} at rank {r}", self.quartet.target_id);
        }
        out
    }
}

fn embed_pool(model: &MuseChat, dataset: &Dataset, ids: &[String]) -> Result<MusicPool> {
    MusicPool::new(
        ids.iter()
            .map(|id| Ok((id.clone(), model.embed_track(&dataset.features, id)?)))
            .collect::<Result<_>>()?,
    )
}

/// Outcome of the scripted-session harness.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScriptedStats {
    pub sessions: usize,
    /// Sessions whose second turn ranks the paired track strictly higher.
    pub improved: usize,
    /// Draws skipped because the first turn already ranked it first.
    pub skipped: usize,
}

impl ScriptedStats {
    pub fn rate(&self) -> f64 {
        self.improved as f64 / self.sessions.max(1) as f64
    }
}

/// Seeded sessions over random pools of `pool_size` tracks drawn from the
/// whole catalog. Each draw picks a held-out quartet and a pool holding its
/// paired track. Draws whose first turn already puts the paired track on top have
/// nothing to refine and are skipped. The remaining sessions take the
/// first-turn top track as candidate and send a prompt naming the paired
/// track's tags that the candidate lacks.
pub fn scripted_sessions(
    model: &MuseChat,
    dataset: &Dataset,
    sessions: usize,
    pool_size: usize,
    seed: u64,
) -> Result<ScriptedStats> {
    let quartets = &dataset.split.test;
    let ids: Vec<&str> = dataset.tracks.iter().map(|t| t.id.as_str()).collect();
    if quartets.is_empty() || pool_size < 2 || ids.len() < pool_size {
        return Err(Error::data("dataset too small for the requested pool size"));
    }
    let embeddings: BTreeMap<&str, Vec<f64>> = ids
        .iter()
        .map(|&id| Ok((id, model.embed_track(&dataset.features, id)?)))
        .collect::<Result<_>>()?;
    let text = dataset.text_encoder();
    let source = FeatureSource {
        catalog: &dataset.features,
        text: &text,
    };
    let tagger = dataset.tagger();
    let mut stats = ScriptedStats {
        sessions: 0,
        improved: 0,
        skipped: 0,
    };
    let max_draws = 100 * sessions.max(1);
    for draw in 0..max_draws as u64 {
        if stats.sessions == sessions {
            break;
        }
        let mut rng = stream(seed, "scripted-session", draw);
        let q = &quartets[rng.gen_range(0..quartets.len())];
        let mut members: Vec<&str> = ids
            .choose_multiple(&mut rng, pool_size)
            .copied()
            .filter(|id| *id != q.target_id)
            .take(pool_size - 1)
            .collect();
        members.push(&q.target_id);
        let pool = MusicPool::new(
            members
                .iter()
                .map(|id| (id.to_string(), embeddings[id].clone()))
                .collect(),
        )?;
        let query = first_turn_query(model, &source, &q.video_id)?
            .ok_or_else(|| Error::config("the model has no video branch"))?;
        let first = rank(&query, &pool)?;
        let r1 = first.rank_of(&q.target_id).expect("target is in the pool");
        if r1 == 1 {
            stats.skipped += 1;
            continue;
        }
        let candidate = &first.order[0];
        let cand = dataset
            .track(candidate)
            .ok_or_else(|| Error::data(format!("unknown track {candidate}")))?;
        let target = dataset
            .track(&q.target_id)
            .ok_or_else(|| Error::data(format!("unknown track {}", q.target_id)))?;
        let prompt = build_prompt(&tagger, &dataset.info.data, cand, target, seed ^ draw);
        let (seq, _) = text.encode(&prompt);
        let keep = model.config.fusion.modalities;
        let q2 = second_turn_query(model, &source, &q.video_id, candidate, &seq, keep)?;
        let r2 = rank(&q2, &pool)?.rank_of(&q.target_id).expect("target is in the pool");
        stats.sessions += 1;
        if r2 < r1 {
            stats.improved += 1;
        }
    }
    Ok(stats)
}
