//! Candidate labeling through an annotation oracle.

use std::collections::BTreeMap;

use crate::ingest::AnnotationInterval;
use crate::motif::{CandidateMotif, Motif, MotifInstance};

/// Answers activity-label queries for motif instances. Implementations are
/// pure functions of their ground truth; every query is logged by the
/// caller's budget ledger.
pub trait AnnotationOracle {
    /// Makes a block's truth available before its instances are queried:
    /// the event span of each action unit plus the block's retrospective
    /// annotation intervals. Oracles that answer from a script ignore this.
    fn register_block(
        &mut self,
        _block_id: usize,
        _au_event_spans: Vec<(usize, usize)>,
        _intervals: &[AnnotationInterval],
    ) {
    }

    /// Label for one instance span, or `None` when unknown or mixed.
    fn label_instance(&mut self, instance: &MotifInstance) -> Option<String>;
}

/// Labeling result with the annotation budget spent.
#[derive(Debug, Clone)]
pub struct LabelOutcome {
    pub motifs: Vec<Motif>,
    /// One query per instance shown to the oracle.
    pub queries_spent: usize,
    /// (pattern, reason) for candidates that failed a filter.
    pub dropped: Vec<(Vec<u32>, String)>,
}

/// Applies the homogeneity and strict-majority filters.
///
/// A candidate survives iff at least `homogeneity_threshold` of its
/// instances carry a single activity label and that label is the strict
/// majority over all instances (unknown answers count in the denominator).
pub fn label_motifs(
    candidates: Vec<CandidateMotif>,
    oracle: &mut dyn AnnotationOracle,
    homogeneity_threshold: f64,
) -> LabelOutcome {
    let mut motifs = Vec::new();
    let mut dropped = Vec::new();
    let mut queries_spent = 0usize;

    for cand in candidates {
        let n = cand.instances.len();
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        let mut answered = 0usize;
        for inst in &cand.instances {
            queries_spent += 1;
            if let Some(label) = oracle.label_instance(inst) {
                *counts.entry(label).or_insert(0) += 1;
                answered += 1;
            }
        }
        if answered == 0 {
            dropped.push((cand.pattern, "all instances unknown".to_string()));
            continue;
        }
        // best label; ties resolved by name for determinism, then rejected
        // below because a tie can never be a strict majority
        let (best_label, best_count) = counts
            .iter()
            .max_by_key(|(label, count)| (*count, std::cmp::Reverse(label.as_str())))
            .map(|(l, c)| (l.clone(), *c))
            .expect("non-empty counts");
        let homogeneous = best_count as f64 / n as f64 >= homogeneity_threshold;
        let strict_majority = 2 * best_count > n;
        if !homogeneous {
            dropped.push((
                cand.pattern,
                format!("homogeneity {best_count}/{n} below {homogeneity_threshold}"),
            ));
            continue;
        }
        if !strict_majority {
            dropped.push((
                cand.pattern,
                format!("label '{best_label}' not a strict majority ({best_count}/{n})"),
            ));
            continue;
        }
        motifs.push(Motif {
            id: 0, // assigned by the memory
            au_pattern: cand.pattern,
            support: cand.support,
            label: best_label,
            version_introduced: 0, // assigned by the memory
            instance_spans: cand.instances,
            discovered_block: cand
                .instances_first_block()
                .unwrap_or(0),
        });
    }

    LabelOutcome {
        motifs,
        queries_spent,
        dropped,
    }
}

impl CandidateMotif {
    fn instances_first_block(&self) -> Option<usize> {
        self.instances.iter().map(|i| i.block_id).min()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motif::AuSpan;

    struct ScriptedOracle {
        answers: Vec<Option<String>>,
        cursor: usize,
    }

    impl AnnotationOracle for ScriptedOracle {
        fn label_instance(&mut self, _instance: &MotifInstance) -> Option<String> {
            let a = self.answers[self.cursor].clone();
            self.cursor += 1;
            a
        }
    }

    fn candidate(n_instances: usize) -> CandidateMotif {
        let instances: Vec<MotifInstance> = (0..n_instances)
            .map(|i| MotifInstance {
                block_id: 0,
                span: AuSpan::new(i * 5, i * 5 + 1),
            })
            .collect();
        CandidateMotif {
            pattern: vec![3, 7],
            raw_occurrences: instances.clone(),
            support: n_instances,
            instances,
        }
    }

    fn run(answers: Vec<Option<&str>>, threshold: f64) -> LabelOutcome {
        let n = answers.len();
        let mut oracle = ScriptedOracle {
            answers: answers.into_iter().map(|a| a.map(str::to_string)).collect(),
            cursor: 0,
        };
        label_motifs(vec![candidate(n)], &mut oracle, threshold)
    }

    #[test]
    fn unanimous_labels_survive() {
        let out = run(vec![Some("Sleep"); 6], 0.8);
        assert_eq!(out.motifs.len(), 1);
        assert_eq!(out.motifs[0].label, "Sleep");
        assert_eq!(out.queries_spent, 6);
    }

    #[test]
    fn tie_has_no_strict_majority() {
        let out = run(
            vec![Some("Sleep"), Some("Sleep"), Some("Sleep"), Some("Work"), Some("Work"), Some("Work")],
            0.3,
        );
        assert!(out.motifs.is_empty());
        assert_eq!(out.dropped.len(), 1);
    }

    #[test]
    fn five_of_six_passes_both_filters() {
        let out = run(
            vec![Some("Sleep"), Some("Sleep"), Some("Sleep"), Some("Sleep"), Some("Sleep"), Some("Other")],
            0.8,
        );
        assert_eq!(out.motifs.len(), 1);
        assert_eq!(out.motifs[0].label, "Sleep");
    }

    #[test]
    fn all_unknown_is_dropped_and_logged() {
        let out = run(vec![None; 5], 0.8);
        assert!(out.motifs.is_empty());
        assert_eq!(out.dropped[0].1, "all instances unknown");
        assert_eq!(out.queries_spent, 5);
    }

    #[test]
    fn unknowns_count_against_homogeneity() {
        let out = run(vec![Some("Sleep"), Some("Sleep"), Some("Sleep"), None, None], 0.8);
        // 3/5 = 0.6 < 0.8
        assert!(out.motifs.is_empty());
    }
}
