//! Token and cost accounting per stage and per episode.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{Stage, Usage};

/// USD per million tokens.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StagePrice {
    pub input_per_mtok: f64,
    pub output_per_mtok: f64,
}

impl StagePrice {
    pub fn cost(&self, t: &StageTally) -> f64 {
        (t.input_tokens as f64 * self.input_per_mtok + t.output_tokens as f64 * self.output_per_mtok)
            / 1e6
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PriceTable {
    #[serde(default)]
    pub planner: StagePrice,
    #[serde(default)]
    pub grounder: StagePrice,
}

impl PriceTable {
    pub fn get(&self, stage: Stage) -> &StagePrice {
        match stage {
            Stage::Planner => &self.planner,
            Stage::Grounder => &self.grounder,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageTally {
    pub calls: u64,
    pub input_tokens: u64,
    pub output_tokens: u64,
}

impl StageTally {
    pub fn tokens(&self) -> u64 {
        self.input_tokens + self.output_tokens
    }

    fn add(&mut self, u: &Usage) {
        self.calls += 1;
        self.input_tokens += u.input_tokens;
        self.output_tokens += u.output_tokens;
    }
}

#[derive(Debug, Default)]
struct Inner {
    episodes: BTreeMap<String, [StageTally; 2]>,
}

/// Thread-safe usage accumulator shared by concurrently running episodes.
#[derive(Debug, Default)]
pub struct UsageLedger {
    inner: Mutex<Inner>,
    prices: PriceTable,
}

impl UsageLedger {
    pub fn new(prices: PriceTable) -> Self {
        Self {
            inner: Mutex::default(),
            prices,
        }
    }

    pub fn prices(&self) -> &PriceTable {
        &self.prices
    }

    /// Registers an episode so it counts in per-episode means even with
    /// zero calls.
    pub fn begin_episode(&self, episode_id: &str) {
        self.lock().episodes.entry(episode_id.to_string()).or_default();
    }

    pub fn record(&self, episode_id: &str, stage: Stage, usage: &Usage) {
        let mut inner = self.lock();
        let slots = inner.episodes.entry(episode_id.to_string()).or_default();
        slots[stage as usize].add(usage);
    }

    pub fn episode_count(&self) -> usize {
        self.lock().episodes.len()
    }

    pub fn episode(&self, episode_id: &str) -> Option<[StageTally; 2]> {
        self.lock().episodes.get(episode_id).copied()
    }

    pub fn totals(&self, stage: Stage) -> StageTally {
        let inner = self.lock();
        inner
            .episodes
            .values()
            .fold(StageTally::default(), |mut acc, slots| {
                let t = &slots[stage as usize];
                acc.calls += t.calls;
                acc.input_tokens += t.input_tokens;
                acc.output_tokens += t.output_tokens;
                acc
            })
    }

    pub fn report(&self) -> LedgerReport {
        let episodes = self.episode_count();
        let n = episodes.max(1) as f64;
        let stages: Vec<StageReport> = Stage::ALL
            .iter()
            .map(|&stage| {
                let totals = self.totals(stage);
                let cost = self.prices.get(stage).cost(&totals);
                StageReport {
                    stage,
                    totals,
                    mean_tokens: if episodes == 0 { 0.0 } else { totals.tokens() as f64 / n },
                    mean_calls: if episodes == 0 { 0.0 } else { totals.calls as f64 / n },
                    usd_per_episode: if episodes == 0 { 0.0 } else { cost / n },
                }
            })
            .collect();
        let usd_per_episode = stages.iter().map(|s| s.usd_per_episode).sum();
        LedgerReport {
            episodes,
            stages,
            usd_per_episode,
        }
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: Stage,
    pub totals: StageTally,
    pub mean_tokens: f64,
    pub mean_calls: f64,
    pub usd_per_episode: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerReport {
    pub episodes: usize,
    pub stages: Vec<StageReport>,
    pub usd_per_episode: f64,
}

impl fmt::Display for LedgerReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "episodes: {}", self.episodes)?;
        for s in &self.stages {
            writeln!(
                f,
                "{}: {} tokens with {:.2} calls per episode (${:.3} USD)",
                s.stage.name(),
                thousands(s.mean_tokens.round() as u64),
                s.mean_calls,
                s.usd_per_episode
            )?;
        }
        write!(f, "total: ${:.3} USD per episode", self.usd_per_episode)
    }
}

fn thousands(n: u64) -> String {
    let digits = n.to_string();
    let mut out = String::new();
    for (k, ch) in digits.chars().enumerate() {
        if k > 0 && (digits.len() - k).is_multiple_of(3) {
            out.push(',');
        }
        out.push(ch);
    }
    out
}
