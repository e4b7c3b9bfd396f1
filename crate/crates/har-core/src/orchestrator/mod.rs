//! Lifecycle driver: bootstrap on the first n+m weeks, then per-block
//! update cycles that match motifs, fill non-detection regions with
//! thresholded classifier predictions, discover new motifs, and grow the
//! cumulative segment set.

mod cycle;
mod rundir;

pub use cycle::{bootstrap, recognize_block, run_update_cycle, seed_points_for_training, CycleReport};
pub use rundir::{
    load_state, run_pipeline, InputSpec, PipelineRun, RunManifest, BUDGET_FILE, CLASSIFIER_FILE,
    EMBEDDER_FILE, KMEANS_FILE, MANIFEST_FILE, MEMORY_FILE, SEGMENTS_FILE,
};

use std::collections::{BTreeMap, BTreeSet};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::au::{ActionUnitSequence, EmbedderConfig, KMeansModel, MaskedEmbedder};
use crate::error::{HarError, Result};
use crate::motif::{AuSpan, MotifMemory};
use crate::ssl::{Classifier, TrainConfig};

/// Bootstrap and update cadence, in calendar weeks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    /// Cold phase: action-unit learning.
    pub n_weeks: u32,
    /// Warm phase: motif discovery and labeling.
    pub m_weeks: u32,
    /// Length of each update block.
    pub update_weeks: u32,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            n_weeks: 2,
            m_weeks: 2,
            update_weeks: 2,
        }
    }
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        if self.n_weeks < 1 || self.m_weeks < 1 || self.update_weeks < 1 {
            return Err(HarError::data("schedule: all phases must be >= 1 week"));
        }
        Ok(())
    }

    pub fn bootstrap_weeks(&self) -> u32 {
        self.n_weeks + self.m_weeks
    }
}

/// Where a segment came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SeedOrigin {
    MotifDetection,
    SslPrediction,
}

/// An activity-labeled action-unit span produced by the system; the unit of
/// the cumulative segment set and of classifier supervision.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SeedPoint {
    pub block_id: usize,
    pub au_span: AuSpan,
    pub activity: String,
    pub origin: SeedOrigin,
    pub model_version: u32,
}

/// Cumulative, append-only segment predictions A.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentSet {
    /// Matches the model version that last extended the set.
    pub version: u32,
    pub points: Vec<SeedPoint>,
}

impl SegmentSet {
    /// Canonical ordering so serialized sets are byte-stable.
    pub fn normalize(&mut self) {
        self.points.sort();
        self.points.dedup();
    }

    /// Distinct (block, AU index) pairs covered by segments of an activity
    /// (any activity when `None`).
    pub fn covered_units(&self, activity: Option<&str>) -> BTreeSet<(usize, usize)> {
        let mut covered = BTreeSet::new();
        for p in &self.points {
            if let Some(a) = activity {
                if p.activity != a {
                    continue;
                }
            }
            for i in p.au_span.start..=p.au_span.end {
                covered.insert((p.block_id, i));
            }
        }
        covered
    }

    pub fn is_superset_of(&self, earlier: &SegmentSet) -> bool {
        let have: BTreeSet<&SeedPoint> = self.points.iter().collect();
        earlier.points.iter().all(|p| have.contains(p))
    }
}

/// Everything the pipeline needs to run, captured in the manifest for
/// exact replay.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub schedule: Schedule,
    /// Sensor category prefixes kept at ingest (motion + door by default;
    /// temperature sensors carry no movement information).
    pub keep_sensors: Vec<String>,
    pub window_size: usize,
    pub stride: usize,
    pub k: usize,
    /// Select k by maximal silhouette over 8..=40 instead of `k`.
    pub auto_k: bool,
    pub embedder: EmbedderConfig,
    pub ssl: TrainConfig,
    pub min_motif_len: usize,
    pub max_motif_len: usize,
    pub min_support: usize,
    pub homogeneity_threshold: f64,
    /// Include ssl-origin spans as fine-tuning seeds.
    pub seed_origin_all: bool,
    /// Refresh the embedder and k-means each cycle (ablation; invalidates
    /// the stored motif alphabet).
    pub refresh_au: bool,
    /// Warm-start SSL training from the previous checkpoint instead of
    /// retraining from scratch.
    pub warm_start: bool,
    pub master_seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            schedule: Schedule::default(),
            keep_sensors: vec!["M".to_string(), "D".to_string()],
            window_size: crate::au::DEFAULT_WINDOW_SIZE,
            stride: crate::au::DEFAULT_STRIDE,
            k: crate::au::DEFAULT_K,
            auto_k: false,
            embedder: EmbedderConfig::default(),
            ssl: TrainConfig::default(),
            min_motif_len: crate::motif::MIN_MOTIF_LEN,
            max_motif_len: crate::motif::DEFAULT_MAX_LEN,
            min_support: crate::motif::MIN_SUPPORT,
            homogeneity_threshold: crate::motif::DEFAULT_HOMOGENEITY,
            seed_origin_all: false,
            refresh_au: false,
            warm_start: false,
            master_seed: 0,
        }
    }
}

impl PipelineConfig {
    /// Copies the master seed into the per-component seeds.
    pub fn with_master_seed(mut self, seed: u64) -> Self {
        self.master_seed = seed;
        self.embedder.seed = crate::derive_seed(seed, "embedder");
        self.ssl.seed = crate::derive_seed(seed, "ssl");
        self
    }
}

/// One budget ledger entry per cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetEntry {
    pub cycle: usize,
    pub queries: usize,
    pub cumulative: usize,
}

/// Mutable pipeline state across cycles.
pub struct UpdateState {
    pub config: PipelineConfig,
    pub embedder: MaskedEmbedder,
    pub kmeans: KMeansModel,
    pub memory: MotifMemory,
    pub classifier: Option<Classifier>,
    pub segments: SegmentSet,
    /// Completed update cycles; 0 right after bootstrap.
    pub cycle: usize,
    pub budget: Vec<BudgetEntry>,
    /// Patterns ever sent to the oracle; never re-queried.
    pub queried_patterns: BTreeSet<Vec<u32>>,
    /// Per-block action-unit sequences (block 0 = warm phase).
    pub block_sequences: BTreeMap<usize, ActionUnitSequence>,
    /// Per-block window-embedding features aligned with the sequences.
    pub block_features: BTreeMap<usize, Array2<f64>>,
    /// Raw token windows, kept only for the refresh-au ablation (the cold
    /// phase is cached under `usize::MAX`).
    pub window_cache: BTreeMap<usize, Vec<crate::au::EventWindow>>,
}

impl UpdateState {
    /// Model version of the current state (1 after bootstrap).
    pub fn model_version(&self) -> u32 {
        self.cycle as u32 + 1
    }

    /// Lockstep audit: memory version and segment version track the cycle.
    pub fn assert_version_lockstep(&self) -> Result<()> {
        if self.memory.version != self.model_version() {
            return Err(HarError::invariant(format!(
                "memory version {} != cycle-derived version {}",
                self.memory.version,
                self.model_version()
            )));
        }
        if self.segments.version != self.model_version() {
            return Err(HarError::invariant(format!(
                "segment-set version {} != cycle-derived version {}",
                self.segments.version,
                self.model_version()
            )));
        }
        Ok(())
    }

    pub fn cumulative_budget(&self) -> usize {
        self.budget.last().map(|b| b.cumulative).unwrap_or(0)
    }
}
