//! Named model variants trained and evaluated side by side.

use crate::config::RunConfig;
use crate::train::train_model;
use musechat::contrastive::MuseChat;
use musechat::datasim::Dataset;
use musechat::fusion::{FusionStrategy, Modalities};
use musechat::retrieval::{evaluate_two_turn, EvalOptions, EvalReport, Evaluation};
use musechat::{Error, Result};
use std::fmt::{self, Write as _};
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Full,
    NoVideo,
    NoCandidateMusic,
    MusicTextOnlyAtTest,
    VideoOnlyAtTest,
    Sum,
    SelfAttn,
    CrossAttn,
    Mvp,
    MusicVideoOrder,
    TextVideoOrder,
}

const VIDEO_ONLY: Modalities = Modalities {
    video: true,
    music: false,
    text: false,
};
const MUSIC_TEXT: Modalities = Modalities {
    video: false,
    music: true,
    text: true,
};
const VIDEO_TEXT: Modalities = Modalities {
    video: true,
    music: false,
    text: true,
};

impl Variant {
    pub const ALL: [Variant; 11] = [
        Variant::Full,
        Variant::NoVideo,
        Variant::NoCandidateMusic,
        Variant::MusicTextOnlyAtTest,
        Variant::VideoOnlyAtTest,
        Variant::Sum,
        Variant::SelfAttn,
        Variant::CrossAttn,
        Variant::Mvp,
        Variant::MusicVideoOrder,
        Variant::TextVideoOrder,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoVideo => "no-video",
            Variant::NoCandidateMusic => "no-candidate-music",
            Variant::MusicTextOnlyAtTest => "music+text-only-at-test",
            Variant::VideoOnlyAtTest => "video-only-at-test",
            Variant::Sum => "sum",
            Variant::SelfAttn => "self-attn",
            Variant::CrossAttn => "cross-attn",
            Variant::Mvp => "mvp",
            Variant::MusicVideoOrder => "music-video-order",
            Variant::TextVideoOrder => "text-video-order",
        }
    }

    /// Strategy and branches of the model this variant trains.
    pub fn training(self) -> (FusionStrategy, Modalities) {
        match self {
            Variant::Full | Variant::MusicTextOnlyAtTest | Variant::VideoOnlyAtTest => {
                (FusionStrategy::Mvt, Modalities::ALL)
            }
            Variant::NoVideo => (FusionStrategy::Mvt, MUSIC_TEXT),
            Variant::NoCandidateMusic => (FusionStrategy::Mvt, VIDEO_TEXT),
            Variant::Sum => (FusionStrategy::Sum, Modalities::ALL),
            Variant::SelfAttn => (FusionStrategy::SelfAttn, Modalities::ALL),
            Variant::CrossAttn => (FusionStrategy::CrossAttn, Modalities::ALL),
            Variant::Mvp => (FusionStrategy::Mvp, Modalities::ALL),
            Variant::MusicVideoOrder => (FusionStrategy::MusicVideoOrder, Modalities::ALL),
            Variant::TextVideoOrder => (FusionStrategy::TextVideoOrder, Modalities::ALL),
        }
    }

    /// Inputs kept at evaluation time.
    pub fn test_modalities(self) -> Modalities {
        match self {
            Variant::MusicTextOnlyAtTest => MUSIC_TEXT,
            Variant::VideoOnlyAtTest => VIDEO_ONLY,
            v => v.training().1,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL.into_iter().find(|v| v.name() == s).ok_or_else(|| {
            let names: Vec<_> = Variant::ALL.iter().map(|v| v.name()).collect();
            Error::config(format!("unknown variant {s:?} (valid: {})", names.join(", ")))
        })
    }
}

/// Comma-separated names; duplicates are dropped, order kept.
pub fn parse_variants(list: &str) -> Result<Vec<Variant>> {
    let mut out = Vec::new();
    for name in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let v: Variant = name.parse()?;
        if !out.contains(&v) {
            out.push(v);
        }
    }
    if out.is_empty() {
        return Err(Error::config("no variants given"));
    }
    Ok(out)
}

/// Trains each distinct model once and evaluates every variant on the test
/// split.
pub fn run_ablation(
    config: &RunConfig,
    dataset: &Dataset,
    variants: &[Variant],
    mut progress: impl FnMut(&str),
) -> Result<Vec<(Variant, Evaluation)>> {
    let mut models: Vec<((FusionStrategy, Modalities), MuseChat)> = Vec::new();
    let mut out = Vec::with_capacity(variants.len());
    for &v in variants {
        let key = v.training();
        if !models.iter().any(|(k, _)| *k == key) {
            let mut c = config.clone();
            c.fusion.strategy = key.0;
            c.fusion.modalities = key.1;
            c.validate()?;
            progress(&format!("training {v} ({}, {})", key.0, describe(key.1)));
            let trainer = train_model(&c, dataset, None, None, |_, _| Ok(()))?;
            models.push((key, trainer.model));
        }
        let model = &models.iter().find(|(k, _)| *k == key).expect("trained above").1;
        let text = dataset.text_encoder();
        let source = musechat::contrastive::FeatureSource {
            catalog: &dataset.features,
            text: &text,
        };
        let options = EvalOptions {
            pool_size: config.retrieval.pool_size,
            k_list: config.retrieval.k_list.clone(),
            turns: 2,
            test_modalities: v.test_modalities(),
            seed: config.seed,
        };
        progress(&format!("evaluating {v}"));
        out.push((v, evaluate_two_turn(model, &dataset.split.test, source, &options)?));
    }
    Ok(out)
}

fn describe(m: Modalities) -> String {
    let names: Vec<&str> = [(m.video, "video"), (m.music, "music"), (m.text, "text")]
        .iter()
        .filter(|(on, _)| *on)
        .map(|(_, n)| *n)
        .collect();
    names.join("+")
}

type MetricRow = (String, Box<dyn Fn(&EvalReport) -> Option<f64>>);

fn metric_rows(k_list: &[usize]) -> Vec<MetricRow> {
    let mut rows: Vec<MetricRow> = Vec::new();
    for turn in 1..=2 {
        rows.push((format!("T{turn} MR"), Box::new(move |r| r.turn(turn).map(|t| t.mr))));
        for &k in k_list {
            rows.push((
                format!("T{turn} R@{k}"),
                Box::new(move |r| r.turn(turn).and_then(|t| t.recall_at(k))),
            ));
        }
    }
    rows.push(("SR".to_string(), Box::new(|r| Some(r.sr))));
    rows
}

/// Side-by-side CSV: one metric per row, one variant per column. Missing
/// turns are left empty.
pub fn ablation_csv(results: &[(Variant, Evaluation)], k_list: &[usize]) -> String {
    let mut out = String::from("metric");
    for (v, _) in results {
        let _ = write!(out, ",{v}");
    }
    out.push('\n');
    for (label, get) in metric_rows(k_list) {
        out.push_str(&label);
        for (_, e) in results {
            match get(&e.average) {
                Some(x) => {
                    let _ = write!(out, ",{x:.2}");
                }
                None => out.push(','),
            }
        }
        out.push('\n');
    }
    out
}

/// Variant names from the header line of [`ablation_csv`].
pub fn parse_ablation_header(line: &str) -> Result<Vec<Variant>> {
    let mut cells = line.trim_end().split(',');
    if cells.next() != Some("metric") {
        return Err(Error::data("ablation report header must start with `metric`"));
    }
    cells.map(str::parse).collect()
}

pub fn ablation_table(results: &[(Variant, Evaluation)], k_list: &[usize]) -> String {
    let rows = metric_rows(k_list);
    let label_w = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0).max(6);
    let widths: Vec<usize> = results.iter().map(|(v, _)| v.name().len().max(7)).collect();
    let mut out = format!("{:<label_w$}", "metric");
    for ((v, _), w) in results.iter().zip(&widths) {
        let _ = write!(out, "  {:>w$}", v.name());
    }
    out.push('\n');
    for (label, get) in rows {
        let _ = write!(out, "{label:<label_w$}");
        for ((_, e), w) in results.iter().zip(&widths) {
            let cell = get(&e.average).map_or("-".to_string(), |x| format!("{x:.2}"));
            let _ = write!(out, "  {cell:>w$}");
        }
        out.push('\n');
    }
    out
}
