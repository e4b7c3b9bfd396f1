//! Exact motif matching over action-unit sequences.

use serde::{Deserialize, Serialize};

use crate::au::ActionUnitSequence;
use crate::error::{HarError, Result};
use crate::motif::{AuSpan, Motif, MotifMemory};

/// One matched motif occurrence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Detection {
    pub au_span: AuSpan,
    pub activity: String,
    pub motif_id: u64,
    pub model_version: u32,
}

/// A maximal action-unit span not covered by any detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NonDetectionRegion {
    pub au_span: AuSpan,
}

/// Precedence: longer motif first, then higher support, then lexicographic
/// pattern order.
fn precedence(motifs: &[Motif]) -> Vec<&Motif> {
    let mut refs: Vec<&Motif> = motifs.iter().collect();
    refs.sort_by(|a, b| {
        b.au_pattern
            .len()
            .cmp(&a.au_pattern.len())
            .then_with(|| b.support.cmp(&a.support))
            .then_with(|| a.au_pattern.cmp(&b.au_pattern))
    });
    refs
}

/// Leftmost-greedy exact matching: scan left to right, try motifs in
/// precedence order at each position, and jump past a match. Detections
/// never overlap; the complement is returned as non-detection regions.
pub fn match_sequence(
    seq: &ActionUnitSequence,
    memory: &MotifMemory,
) -> Result<(Vec<Detection>, Vec<NonDetectionRegion>)> {
    if memory.version < 1 {
        return Err(HarError::invariant("match: memory version must be >= 1"));
    }
    let ids = seq.ids();
    let ordered = precedence(&memory.motifs);
    let mut detections = Vec::new();
    let mut pos = 0usize;
    while pos < ids.len() {
        let hit = ordered.iter().find(|m| {
            let len = m.au_pattern.len();
            pos + len <= ids.len() && ids[pos..pos + len] == m.au_pattern[..]
        });
        match hit {
            Some(m) => {
                let len = m.au_pattern.len();
                detections.push(Detection {
                    au_span: AuSpan::new(pos, pos + len - 1),
                    activity: m.label.clone(),
                    motif_id: m.id,
                    model_version: memory.version,
                });
                pos += len;
            }
            None => pos += 1,
        }
    }
    let regions = complement(ids.len(), &detections);
    Ok((detections, regions))
}

/// Maximal uncovered gaps between detections.
pub fn complement(len: usize, detections: &[Detection]) -> Vec<NonDetectionRegion> {
    let mut regions = Vec::new();
    let mut cursor = 0usize;
    for d in detections {
        if d.au_span.start > cursor {
            regions.push(NonDetectionRegion {
                au_span: AuSpan::new(cursor, d.au_span.start - 1),
            });
        }
        cursor = d.au_span.end + 1;
    }
    if cursor < len {
        regions.push(NonDetectionRegion {
            au_span: AuSpan::new(cursor, len - 1),
        });
    }
    regions
}

/// Cover partition check: detections and non-detections are disjoint and
/// together tile `[0, len)`.
pub fn verify_cover(
    len: usize,
    detections: &[Detection],
    regions: &[NonDetectionRegion],
) -> Result<()> {
    let mut covered = vec![0u8; len];
    for d in detections {
        for i in d.au_span.start..=d.au_span.end {
            covered[i] += 1;
        }
    }
    for r in regions {
        for i in r.au_span.start..=r.au_span.end {
            covered[i] += 1;
        }
    }
    if covered.iter().any(|&c| c != 1) {
        return Err(HarError::invariant(
            "detections and non-detections do not partition the sequence",
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::au::{ActionUnit, ActionUnitSequence};
    use crate::motif::{test_motif, MotifMemory};

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

    fn memory(motifs: Vec<crate::motif::Motif>) -> MotifMemory {
        MotifMemory::bootstrap(motifs, vec![]).unwrap()
    }

    #[test]
    fn no_occurrence_yields_full_non_detection() {
        let mem = memory(vec![test_motif(&[1, 2], "Eat", 5)]);
        let (d, r) = match_sequence(&seq(&[9, 9, 9, 9]), &mem).unwrap();
        assert!(d.is_empty());
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].au_span, AuSpan::new(0, 3));
    }

    #[test]
    fn exact_cover_has_no_regions() {
        let mem = memory(vec![test_motif(&[1, 2, 3], "Eat", 5)]);
        let (d, r) = match_sequence(&seq(&[1, 2, 3]), &mem).unwrap();
        assert_eq!(d.len(), 1);
        assert!(r.is_empty());
    }

    #[test]
    fn longer_motif_wins_at_same_position() {
        let mem = memory(vec![
            test_motif(&[1, 2, 3], "Eat", 5),
            test_motif(&[2, 3], "Eat", 5),
        ]);
        let (d, _) = match_sequence(&seq(&[1, 2, 3]), &mem).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].au_span, AuSpan::new(0, 2));
        let m = mem
            .motifs
            .iter()
            .find(|m| m.id == d[0].motif_id)
            .unwrap();
        assert_eq!(m.au_pattern, vec![1, 2, 3]);
    }

    #[test]
    fn empty_memory_unsupported_by_bootstrap_but_matchable() {
        // memory with zero motifs can exist transiently in tests
        let mem = MotifMemory {
            version: 1,
            motifs: vec![],
            next_id: 0,
            filter_log: vec![],
        };
        let (d, r) = match_sequence(&seq(&[1, 2, 3]), &mem).unwrap();
        assert!(d.is_empty());
        assert_eq!(r.len(), 1);
        verify_cover(3, &d, &r).unwrap();
    }

    #[test]
    fn detections_and_regions_partition() {
        let mem = memory(vec![
            test_motif(&[1, 2], "Eat", 5),
            test_motif(&[4, 4, 4], "Sleep", 6),
        ]);
        let ids = [9, 1, 2, 9, 4, 4, 4, 1, 2, 7];
        let (d, r) = match_sequence(&seq(&ids), &mem).unwrap();
        verify_cover(ids.len(), &d, &r).unwrap();
        assert_eq!(d.len(), 3);
    }
}
