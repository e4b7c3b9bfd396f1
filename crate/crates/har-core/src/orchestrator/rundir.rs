//! Run-directory layout, manifest, and the end-to-end pipeline driver.
//!
//! Layout:
//!
//! ```text
//! run_dir/
//!   manifest.json          config + input spec; enough for exact replay
//!   ingest/
//!     summary.json
//!     diagnostics.json
//!   cycle-000/             bootstrap, model v1
//!     embedder.json  kmeans.json  memory.json  classifier.json
//!     segments.jsonl budget.json
//!   cycle-001/             after update cycle 1, model v2
//!     memory.json  classifier.json  segments.jsonl  budget.json
//!   ...
//! ```
//!
//! `segments.jsonl` holds the cumulative segment set after the cycle, one
//! canonical JSON object per line; replays must reproduce these files
//! byte-for-byte.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::au::{KMeansModel, MaskedEmbedder};
use crate::error::{HarError, Result};
use crate::eval::GroundTruthOracle;
use crate::ingest::{
    filter_sensors, parse_casas_file, partition_weeks_from, split_weeks, synth_generate,
    EventBlock, EventStream, ParseOptions, SynthConfig,
};
use crate::motif::MotifMemory;
use crate::orchestrator::{
    bootstrap, run_update_cycle, BudgetEntry, PipelineConfig, SeedPoint, SegmentSet, UpdateState,
};
use crate::ssl::Classifier;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const EMBEDDER_FILE: &str = "embedder.json";
pub const KMEANS_FILE: &str = "kmeans.json";
pub const MEMORY_FILE: &str = "memory.json";
pub const CLASSIFIER_FILE: &str = "classifier.json";
pub const SEGMENTS_FILE: &str = "segments.jsonl";
pub const BUDGET_FILE: &str = "budget.json";

/// Where the events come from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputSpec {
    Casas {
        path: String,
        /// Content hash recorded at first run; replays refuse changed files.
        sha256: String,
    },
    Synth {
        config: Box<SynthConfig>,
        seed: u64,
    },
}

/// Everything needed to reproduce a run exactly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub input: InputSpec,
    pub parse: ParseOptions,
    pub pipeline: PipelineConfig,
    /// Stop after this many update cycles (all available blocks otherwise).
    pub max_cycles: Option<usize>,
}

impl RunManifest {
    pub fn new(input: InputSpec, pipeline: PipelineConfig) -> Self {
        RunManifest {
            schema_version: 1,
            input,
            parse: ParseOptions::default(),
            pipeline,
            max_cycles: None,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, to_pretty_json(self)?)?;
        Ok(())
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(hex_string(&hasher.finalize()))
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn to_pretty_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn cycle_dir(run_dir: &Path, cycle: usize) -> PathBuf {
    run_dir.join(format!("cycle-{cycle:03}"))
}

/// Loads the ingested, sensor-filtered stream described by the manifest.
pub fn load_input(manifest: &RunManifest) -> Result<(EventStream, Vec<crate::ingest::ParseDiagnostic>)> {
    let (stream, diagnostics) = match &manifest.input {
        InputSpec::Casas { path, sha256 } => {
            let path = Path::new(path);
            let actual = sha256_file(path)?;
            if !sha256.is_empty() && actual != *sha256 {
                return Err(HarError::data(format!(
                    "input file {} hash mismatch: manifest {} vs actual {}",
                    path.display(),
                    sha256,
                    actual
                )));
            }
            let out = parse_casas_file(path, &manifest.parse)?;
            (out.stream, out.diagnostics)
        }
        InputSpec::Synth { config, seed } => (synth_generate(config, *seed)?, Vec::new()),
    };
    let keep: BTreeSet<String> = manifest.pipeline.keep_sensors.iter().cloned().collect();
    let filtered = filter_sensors(&stream, &keep)?;
    Ok((filtered.stream, diagnostics))
}

/// Splits the filtered stream into the bootstrap prefix and the update
/// blocks (indexed from 1, aligned to the bootstrap end date).
pub fn split_for_run(
    stream: &EventStream,
    config: &PipelineConfig,
) -> Result<(EventStream, Vec<EventBlock>)> {
    let (boot, rest) = split_weeks(stream, config.schedule.bootstrap_weeks());
    if boot.is_empty() {
        return Err(HarError::data("run: stream empty before bootstrap"));
    }
    let blocks = if rest.is_empty() {
        Vec::new()
    } else {
        let anchor = boot.events[0].timestamp.date()
            + chrono::Duration::days(config.schedule.bootstrap_weeks() as i64 * 7);
        let mut blocks = partition_weeks_from(&rest, anchor, config.schedule.update_weeks)?;
        for b in &mut blocks {
            b.index += 1; // block 0 is the warm phase
        }
        blocks
    };
    Ok((boot, blocks))
}

fn persist_cycle(run_dir: &Path, state: &UpdateState) -> Result<()> {
    let dir = cycle_dir(run_dir, state.cycle);
    std::fs::create_dir_all(&dir)?;
    if state.cycle == 0 || state.config.refresh_au {
        std::fs::write(dir.join(EMBEDDER_FILE), to_pretty_json(&state.embedder)?)?;
        std::fs::write(dir.join(KMEANS_FILE), to_pretty_json(&state.kmeans)?)?;
    }
    std::fs::write(dir.join(MEMORY_FILE), to_pretty_json(&state.memory)?)?;
    if let Some(classifier) = &state.classifier {
        std::fs::write(dir.join(CLASSIFIER_FILE), to_pretty_json(classifier)?)?;
    }
    let mut lines = String::new();
    for p in &state.segments.points {
        lines.push_str(&serde_json::to_string(p)?);
        lines.push('\n');
    }
    std::fs::write(dir.join(SEGMENTS_FILE), lines)?;
    std::fs::write(dir.join(BUDGET_FILE), to_pretty_json(&state.budget)?)?;
    Ok(())
}

/// A completed (or partially completed) pipeline run.
pub struct PipelineRun {
    pub state: UpdateState,
    pub update_blocks: Vec<EventBlock>,
    pub run_dir: PathBuf,
}

/// Executes bootstrap plus update cycles per the manifest, persisting every
/// cycle under `run_dir`. Deterministic: identical manifests produce
/// byte-identical cycle artifacts.
pub fn run_pipeline(manifest: &RunManifest, run_dir: &Path) -> Result<PipelineRun> {
    std::fs::create_dir_all(run_dir)?;
    let (stream, diagnostics) = load_input(manifest)?;
    let ingest_dir = run_dir.join("ingest");
    std::fs::create_dir_all(&ingest_dir)?;
    std::fs::write(
        ingest_dir.join("summary.json"),
        to_pretty_json(&stream.summary)?,
    )?;
    std::fs::write(
        ingest_dir.join("diagnostics.json"),
        to_pretty_json(&diagnostics)?,
    )?;

    let (boot, blocks) = split_for_run(&stream, &manifest.pipeline)?;
    let mut oracle = GroundTruthOracle::new();
    let mut state = bootstrap(&boot, &manifest.pipeline, &mut oracle)?;
    persist_cycle(run_dir, &state)?;

    let max_cycles = manifest.max_cycles.unwrap_or(usize::MAX);
    for block in &blocks {
        if state.cycle >= max_cycles {
            break;
        }
        run_update_cycle(&mut state, block, &mut oracle)?;
        if oracle.query_log().len() != state.cumulative_budget() {
            return Err(HarError::invariant(format!(
                "oracle log length {} != budget ledger {}",
                oracle.query_log().len(),
                state.cumulative_budget()
            )));
        }
        persist_cycle(run_dir, &state)?;
    }
    manifest.save(&run_dir.join(MANIFEST_FILE))?;
    Ok(PipelineRun {
        state,
        update_blocks: blocks,
        run_dir: run_dir.to_path_buf(),
    })
}

/// Persisted view of one model version, as the evaluator loads it.
pub struct StoredModel {
    pub version: u32,
    pub memory: MotifMemory,
    pub classifier: Option<Classifier>,
}

/// Loads the shared alphabet (embedder + kmeans) from cycle-000.
pub fn load_alphabet(run_dir: &Path) -> Result<(MaskedEmbedder, KMeansModel)> {
    let dir = cycle_dir(run_dir, 0);
    let embedder: MaskedEmbedder =
        serde_json::from_str(&std::fs::read_to_string(dir.join(EMBEDDER_FILE))?)?;
    let kmeans: KMeansModel =
        serde_json::from_str(&std::fs::read_to_string(dir.join(KMEANS_FILE))?)?;
    Ok((embedder, kmeans))
}

/// Loads the model persisted after `cycle` (version = cycle + 1). Fails
/// hard when the cycle directory or its memory is missing.
pub fn load_model(run_dir: &Path, cycle: usize) -> Result<StoredModel> {
    let dir = cycle_dir(run_dir, cycle);
    if !dir.exists() {
        return Err(HarError::data(format!(
            "missing checkpoint directory {}",
            dir.display()
        )));
    }
    let memory: MotifMemory =
        serde_json::from_str(&std::fs::read_to_string(dir.join(MEMORY_FILE))?)?;
    let classifier_path = dir.join(CLASSIFIER_FILE);
    let classifier: Option<Classifier> = if classifier_path.exists() {
        Some(serde_json::from_str(&std::fs::read_to_string(
            classifier_path,
        )?)?)
    } else {
        None
    };
    Ok(StoredModel {
        version: cycle as u32 + 1,
        memory,
        classifier,
    })
}

/// Number of persisted cycles (bootstrap included).
pub fn stored_cycles(run_dir: &Path) -> usize {
    let mut n = 0;
    while cycle_dir(run_dir, n).exists() {
        n += 1;
    }
    n
}

/// Loads the latest persisted state plus its segment set and budget, for
/// resuming updates.
pub fn load_state(run_dir: &Path) -> Result<(RunManifest, StoredModel, SegmentSet, Vec<BudgetEntry>)> {
    let manifest = RunManifest::load(&run_dir.join(MANIFEST_FILE))?;
    let cycles = stored_cycles(run_dir);
    if cycles == 0 {
        return Err(HarError::data("run directory holds no cycles"));
    }
    let latest = cycles - 1;
    let model = load_model(run_dir, latest)?;
    let dir = cycle_dir(run_dir, latest);
    let mut points: Vec<SeedPoint> = Vec::new();
    for line in std::fs::read_to_string(dir.join(SEGMENTS_FILE))?.lines() {
        if !line.trim().is_empty() {
            points.push(serde_json::from_str(line)?);
        }
    }
    let budget: Vec<BudgetEntry> =
        serde_json::from_str(&std::fs::read_to_string(dir.join(BUDGET_FILE))?)?;
    let segments = SegmentSet {
        version: model.version,
        points,
    };
    Ok((manifest, model, segments, budget))
}
