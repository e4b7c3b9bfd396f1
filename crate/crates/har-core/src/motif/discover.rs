//! Frequent subsequence discovery over action-unit sequences.
//!
//! Candidates are contiguous patterns of length `min_len..=max_len` whose
//! leftmost-greedy non-overlapping occurrence count reaches the support
//! floor. Only maximal candidates survive: a pattern is dropped when every
//! one of its instances lies inside a raw occurrence of a longer kept
//! pattern.

use std::collections::BTreeMap;

use crate::au::ActionUnitSequence;
use crate::motif::{AuSpan, MotifInstance};

/// An unlabeled frequent pattern with its instances.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateMotif {
    pub pattern: Vec<u32>,
    /// Leftmost-greedy non-overlapping occurrences.
    pub instances: Vec<MotifInstance>,
    /// All occurrence positions, used for the maximality check.
    pub raw_occurrences: Vec<MotifInstance>,
    pub support: usize,
}

/// Discovery over a single block.
pub fn discover_motifs(
    seq: &ActionUnitSequence,
    min_len: usize,
    max_len: usize,
    min_support: usize,
) -> Vec<CandidateMotif> {
    discover_motifs_multi(&[(seq.block_id, seq.ids())], min_len, max_len, min_support)
}

/// Discovery over several blocks at once. Occurrences never cross block
/// boundaries; supports accumulate across blocks.
pub fn discover_motifs_multi(
    blocks: &[(usize, Vec<u32>)],
    min_len: usize,
    max_len: usize,
    min_support: usize,
) -> Vec<CandidateMotif> {
    assert!(min_len >= 1 && max_len >= min_len);
    if blocks.iter().all(|(_, ids)| ids.is_empty()) {
        return Vec::new();
    }

    // occurrences per pattern at the current length, grown apriori-style:
    // an (L+1)-gram can only start where a raw-frequent L-gram starts
    let mut frequent_starts: Vec<Vec<usize>> = blocks
        .iter()
        .map(|(_, ids)| (0..ids.len()).collect())
        .collect();
    let mut supported: Vec<CandidateMotif> = Vec::new();

    for len in 1..=max_len {
        let mut table: BTreeMap<Vec<u32>, Vec<MotifInstance>> = BTreeMap::new();
        for (bi, (block_id, ids)) in blocks.iter().enumerate() {
            for &start in &frequent_starts[bi] {
                if start + len > ids.len() {
                    continue;
                }
                let gram = ids[start..start + len].to_vec();
                table.entry(gram).or_default().push(MotifInstance {
                    block_id: *block_id,
                    span: AuSpan::new(start, start + len - 1),
                });
            }
        }

        let mut next_starts: Vec<Vec<usize>> = blocks.iter().map(|_| Vec::new()).collect();
        let mut any_frequent = false;
        for (pattern, raw) in table {
            if raw.len() < min_support {
                continue;
            }
            any_frequent = true;
            for inst in &raw {
                let bi = blocks
                    .iter()
                    .position(|(b, _)| *b == inst.block_id)
                    .expect("instance block known");
                next_starts[bi].push(inst.span.start);
            }
            if len < min_len {
                continue;
            }
            let instances = greedy_non_overlapping(&raw);
            if instances.len() >= min_support {
                supported.push(CandidateMotif {
                    support: instances.len(),
                    pattern,
                    instances,
                    raw_occurrences: raw,
                });
            }
        }
        for starts in &mut next_starts {
            starts.sort_unstable();
            starts.dedup();
        }
        frequent_starts = next_starts;
        if !any_frequent {
            break;
        }
    }

    retain_maximal(supported)
}

/// Leftmost-greedy selection of non-overlapping occurrences (per block).
fn greedy_non_overlapping(raw: &[MotifInstance]) -> Vec<MotifInstance> {
    let mut sorted: Vec<&MotifInstance> = raw.iter().collect();
    sorted.sort();
    let mut out: Vec<MotifInstance> = Vec::new();
    for inst in sorted {
        match out.last() {
            Some(prev) if prev.block_id == inst.block_id && prev.span.end >= inst.span.start => {}
            _ => out.push(*inst),
        }
    }
    out
}

/// Drops candidates all of whose instances are contained in raw occurrences
/// of longer kept candidates.
fn retain_maximal(mut candidates: Vec<CandidateMotif>) -> Vec<CandidateMotif> {
    candidates.sort_by(|a, b| {
        b.pattern
            .len()
            .cmp(&a.pattern.len())
            .then_with(|| a.pattern.cmp(&b.pattern))
    });
    // (block, start, end) spans of kept longer candidates, indexed by length
    let mut kept: Vec<CandidateMotif> = Vec::new();
    for cand in candidates {
        let absorbed = cand.instances.iter().all(|inst| {
            kept.iter()
                .filter(|k| k.pattern.len() > cand.pattern.len())
                .any(|k| {
                    k.raw_occurrences.iter().any(|occ| {
                        occ.block_id == inst.block_id && occ.span.contains(&inst.span)
                    })
                })
        });
        if !absorbed {
            kept.push(cand);
        }
    }
    kept.sort_by(|a, b| a.pattern.cmp(&b.pattern));
    kept
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::au::{ActionUnit, ActionUnitSequence};

    fn seq(ids: &[u32]) -> ActionUnitSequence {
        ActionUnitSequence {
            block_id: 0,
            units: ids
                .iter()
                .enumerate()
                .map(|(i, &c)| ActionUnit {
                    cluster_id: c,
                    span: (i * 20, i * 20 + 19),
                })
                .collect(),
        }
    }

    /// Exhaustive reference: every pattern in [min_len, max_len], greedy
    /// non-overlap count, then the same maximality rule.
    fn brute_force(
        ids: &[u32],
        min_len: usize,
        max_len: usize,
        min_support: usize,
    ) -> Vec<(Vec<u32>, usize)> {
        let mut all: Vec<CandidateMotif> = Vec::new();
        for len in min_len..=max_len.min(ids.len()) {
            let mut table: BTreeMap<Vec<u32>, Vec<MotifInstance>> = BTreeMap::new();
            for start in 0..=ids.len() - len {
                table
                    .entry(ids[start..start + len].to_vec())
                    .or_default()
                    .push(MotifInstance {
                        block_id: 0,
                        span: AuSpan::new(start, start + len - 1),
                    });
            }
            for (pattern, raw) in table {
                let instances = greedy_non_overlapping(&raw);
                if instances.len() >= min_support {
                    all.push(CandidateMotif {
                        support: instances.len(),
                        pattern,
                        instances,
                        raw_occurrences: raw,
                    });
                }
            }
        }
        retain_maximal(all)
            .into_iter()
            .map(|c| (c.pattern, c.support))
            .collect()
    }

    #[test]
    fn planted_pattern_found_with_support() {
        // [3,7,3] planted 6 times, separated by unique noise symbols
        let mut ids = Vec::new();
        for i in 0..6u32 {
            ids.extend_from_slice(&[3, 7, 3]);
            ids.extend_from_slice(&[100 + i, 200 + i]); // never repeats
        }
        let found = discover_motifs(&seq(&ids), 2, 5, 5);
        let target = found
            .iter()
            .find(|c| c.pattern == vec![3, 7, 3])
            .expect("planted pattern discovered");
        assert_eq!(target.support, 6);
        // matches the exhaustive reference
        let brute = brute_force(&ids, 2, 5, 5);
        let got: Vec<(Vec<u32>, usize)> = found
            .into_iter()
            .map(|c| (c.pattern, c.support))
            .collect();
        assert_eq!(got, brute);
    }

    #[test]
    fn below_support_is_absent() {
        let mut ids = Vec::new();
        for i in 0..4u32 {
            ids.extend_from_slice(&[3, 7, 3]);
            ids.extend_from_slice(&[100 + i, 200 + i]);
        }
        let found = discover_motifs(&seq(&ids), 2, 5, 5);
        assert!(found.iter().all(|c| c.pattern != vec![3, 7, 3]));
    }

    #[test]
    fn constant_sequence_keeps_only_maximal() {
        let ids = vec![5u32; 20];
        let found = discover_motifs(&seq(&ids), 2, 3, 5);
        // [5,5,5] tiles 6 times; [5,5] is absorbed by raw occurrences of it
        assert_eq!(found.len(), 1);
        assert_eq!(found[0].pattern, vec![5, 5, 5]);
        assert_eq!(found[0].support, 6);
        assert_eq!(
            brute_force(&ids, 2, 3, 5),
            vec![(vec![5, 5, 5], 6)]
        );
    }

    #[test]
    fn empty_sequence_empty_result() {
        assert!(discover_motifs(&seq(&[]), 2, 5, 5).is_empty());
    }

    #[test]
    fn discovery_matches_brute_force_on_random_ish_input() {
        // deterministic pseudo-random sequence over a small alphabet
        let ids: Vec<u32> = (0..200u32).map(|i| (i * 7 + i / 13) % 4).collect();
        let fast: Vec<(Vec<u32>, usize)> = discover_motifs(&seq(&ids), 2, 6, 5)
            .into_iter()
            .map(|c| (c.pattern, c.support))
            .collect();
        assert_eq!(fast, brute_force(&ids, 2, 6, 5));
    }

    #[test]
    fn multi_block_occurrences_do_not_cross_boundaries() {
        // pattern [1,2] straddles the boundary only if blocks were joined
        let blocks = vec![
            (0usize, vec![9, 9, 9, 1]),
            (1usize, vec![2, 9, 9, 9]),
        ];
        let found = discover_motifs_multi(&blocks, 2, 3, 1);
        assert!(found.iter().all(|c| c.pattern != vec![1, 2]));
    }
}
