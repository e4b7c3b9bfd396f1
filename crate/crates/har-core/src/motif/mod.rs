//! Motif models: recurring action-unit subsequences labeled with one
//! activity each, stored in an append-only versioned memory and matched
//! against new action-unit sequences.

mod discover;
mod label;
mod matcher;
mod merge;

pub use discover::{discover_motifs, discover_motifs_multi, CandidateMotif};
pub use label::{label_motifs, AnnotationOracle, LabelOutcome};
pub use matcher::{match_sequence, verify_cover, Detection, NonDetectionRegion};
pub use merge::merge_motifs;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{HarError, Result};

/// Minimum motif length.
pub const MIN_MOTIF_LEN: usize = 2;
/// Minimum non-overlapping occurrence count.
pub const MIN_SUPPORT: usize = 5;
/// Default cap on discovered motif length; discovery cost grows quickly
/// with unbounded patterns.
pub const DEFAULT_MAX_LEN: usize = 25;
/// Default fraction of instances that must agree on one label.
pub const DEFAULT_HOMOGENEITY: f64 = 0.8;

/// Inclusive action-unit index span.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AuSpan {
    pub start: usize,
    pub end: usize,
}

impl AuSpan {
    pub fn new(start: usize, end: usize) -> Self {
        debug_assert!(start <= end);
        AuSpan { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, other: &AuSpan) -> bool {
        self.start <= other.start && other.end <= self.end
    }

    pub fn overlaps(&self, other: &AuSpan) -> bool {
        self.start <= other.end && other.start <= self.end
    }
}

/// A motif instance location: block plus action-unit span within it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MotifInstance {
    pub block_id: usize,
    pub span: AuSpan,
}

/// A labeled, filtered activity motif.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Motif {
    pub id: u64,
    pub au_pattern: Vec<u32>,
    /// Non-overlapping occurrence count at discovery/merge time.
    pub support: usize,
    pub label: String,
    pub version_introduced: u32,
    pub instance_spans: Vec<MotifInstance>,
    /// Block the pattern was first discovered in.
    pub discovered_block: usize,
}

impl Motif {
    pub fn len(&self) -> usize {
        self.au_pattern.len()
    }

    pub fn is_empty(&self) -> bool {
        self.au_pattern.is_empty()
    }
}

/// Versioned store of motifs. Versions strictly increase; patterns are
/// never evicted, so anything matched by version v is matched by v+1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotifMemory {
    pub version: u32,
    pub motifs: Vec<Motif>,
    next_id: u64,
    /// One line per filter decision, for audit.
    pub filter_log: Vec<String>,
}

impl MotifMemory {
    /// First memory version from the bootstrap's labeled, merged motifs.
    pub fn bootstrap(mut motifs: Vec<Motif>, filter_log: Vec<String>) -> Result<Self> {
        motifs.sort_by(|a, b| (&a.label, &a.au_pattern).cmp(&(&b.label, &b.au_pattern)));
        let mut next_id = 0;
        for m in &mut motifs {
            m.id = next_id;
            m.version_introduced = 1;
            next_id += 1;
        }
        let memory = MotifMemory {
            version: 1,
            motifs,
            next_id,
            filter_log,
        };
        memory.assert_sound()?;
        Ok(memory)
    }

    pub fn is_empty(&self) -> bool {
        self.motifs.is_empty()
    }

    /// Filter soundness: every stored motif satisfies the length and
    /// support floors and carries a label.
    pub fn assert_sound(&self) -> Result<()> {
        for m in &self.motifs {
            if m.au_pattern.len() < MIN_MOTIF_LEN {
                return Err(HarError::invariant(format!(
                    "motif {} shorter than {MIN_MOTIF_LEN}",
                    m.id
                )));
            }
            if m.support < MIN_SUPPORT {
                return Err(HarError::invariant(format!(
                    "motif {} support {} below {MIN_SUPPORT}",
                    m.id, m.support
                )));
            }
            if m.label.is_empty() {
                return Err(HarError::invariant(format!("motif {} unlabeled", m.id)));
            }
        }
        let mut seen = BTreeSet::new();
        for m in &self.motifs {
            if !seen.insert(&m.au_pattern) {
                return Err(HarError::invariant(format!(
                    "duplicate au_pattern {:?}",
                    m.au_pattern
                )));
            }
        }
        Ok(())
    }
}

/// Produces version+1: old motifs are retained verbatim (no forgetting) and
/// the merge rules are applied across old and new to add extended entries.
/// Merged entries keep the earliest `version_introduced`.
pub fn update_memory(memory: &MotifMemory, new_motifs: Vec<Motif>) -> Result<MotifMemory> {
    let next_version = memory.version + 1;
    let mut filter_log = memory.filter_log.clone();

    let mut pool = memory.motifs.clone();
    for mut m in new_motifs {
        m.version_introduced = next_version;
        pool.push(m);
    }
    let merged = merge_motifs(pool);

    // keep every pre-existing pattern, then append merged/new ones
    let mut out: Vec<Motif> = memory.motifs.clone();
    let mut patterns: BTreeSet<Vec<u32>> =
        out.iter().map(|m| m.au_pattern.clone()).collect();
    let mut next_id = memory.next_id;
    for m in merged {
        if patterns.contains(&m.au_pattern) {
            // refresh support/instances of the retained entry in place
            if let Some(existing) = out.iter_mut().find(|e| e.au_pattern == m.au_pattern) {
                if m.support > existing.support {
                    existing.support = m.support;
                    existing.instance_spans = m.instance_spans.clone();
                }
            }
            continue;
        }
        patterns.insert(m.au_pattern.clone());
        let mut m = m;
        m.id = next_id;
        next_id += 1;
        filter_log.push(format!(
            "v{next_version}: added motif {:?} label={} support={}",
            m.au_pattern, m.label, m.support
        ));
        out.push(m);
    }
    out.sort_by(|a, b| (&a.label, &a.au_pattern).cmp(&(&b.label, &b.au_pattern)));

    let updated = MotifMemory {
        version: next_version,
        motifs: out,
        next_id,
        filter_log,
    };
    updated.assert_sound()?;
    Ok(updated)
}

#[cfg(test)]
pub(crate) fn test_motif(pattern: &[u32], label: &str, support: usize) -> Motif {
    Motif {
        id: 0,
        au_pattern: pattern.to_vec(),
        support,
        label: label.to_string(),
        version_introduced: 1,
        instance_spans: (0..support)
            .map(|i| MotifInstance {
                block_id: 0,
                span: AuSpan::new(i * (pattern.len() + 2), i * (pattern.len() + 2) + pattern.len() - 1),
            })
            .collect(),
        discovered_block: 0,
    }
}
