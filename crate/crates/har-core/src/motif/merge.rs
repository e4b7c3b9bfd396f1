//! Merge/overlap rules for same-label motifs.

use crate::motif::{Motif, MotifInstance};

/// Result of trying to merge two patterns.
fn merge_patterns(a: &[u32], b: &[u32]) -> Option<Vec<u32>> {
    let (longer, shorter) = if a.len() >= b.len() { (a, b) } else { (b, a) };
    // substring rule: the shorter is contained in the longer
    if longer
        .windows(shorter.len())
        .any(|w| w == shorter)
    {
        return Some(longer.to_vec());
    }
    // overlap rule: suffix of one equals prefix of the other by at least
    // half of the shorter length; the union pattern is the concatenation
    let half = (shorter.len() as f64 / 2.0).ceil() as usize;
    let best = |x: &[u32], y: &[u32]| -> Option<usize> {
        // longest o < min(len) with x suffix == y prefix
        (half..=shorter.len().min(x.len()).min(y.len()))
            .rev()
            .find(|&o| x[x.len() - o..] == y[..o])
    };
    if let Some(o) = best(a, b) {
        let mut merged = a.to_vec();
        merged.extend_from_slice(&b[o..]);
        return Some(merged);
    }
    if let Some(o) = best(b, a) {
        let mut merged = b.to_vec();
        merged.extend_from_slice(&a[o..]);
        return Some(merged);
    }
    None
}

/// Maximum set of non-overlapping instances (earliest-end greedy), used to
/// recount support after a merge.
fn dedup_instances(mut instances: Vec<MotifInstance>) -> Vec<MotifInstance> {
    instances.sort_by_key(|i| (i.block_id, i.span.end, i.span.start));
    instances.dedup();
    let mut out: Vec<MotifInstance> = Vec::new();
    for inst in instances {
        match out.last() {
            Some(prev) if prev.block_id == inst.block_id && prev.span.end >= inst.span.start => {}
            _ => out.push(inst),
        }
    }
    out
}

/// Merges same-label motifs whose patterns are substrings of one another or
/// overlap by at least half of the shorter pattern. Supports are recounted
/// over the union of instances, overlapping spans removed. Runs to a
/// fixpoint; deterministic by (label, pattern) ordering.
pub fn merge_motifs(mut motifs: Vec<Motif>) -> Vec<Motif> {
    motifs.sort_by(|a, b| (&a.label, &a.au_pattern).cmp(&(&b.label, &b.au_pattern)));
    loop {
        let mut merged_any = false;
        'outer: for i in 0..motifs.len() {
            for j in (i + 1)..motifs.len() {
                if motifs[i].label != motifs[j].label {
                    continue;
                }
                let Some(pattern) = merge_patterns(&motifs[i].au_pattern, &motifs[j].au_pattern)
                else {
                    continue;
                };
                let b = motifs.remove(j);
                let a = motifs.remove(i);
                let instances = dedup_instances(
                    a.instance_spans
                        .iter()
                        .chain(b.instance_spans.iter())
                        .copied()
                        .collect(),
                );
                motifs.push(Motif {
                    id: a.id.min(b.id),
                    au_pattern: pattern,
                    support: instances.len(),
                    label: a.label.clone(),
                    version_introduced: a.version_introduced.min(b.version_introduced),
                    instance_spans: instances,
                    discovered_block: a.discovered_block.min(b.discovered_block),
                });
                motifs.sort_by(|x, y| (&x.label, &x.au_pattern).cmp(&(&y.label, &y.au_pattern)));
                merged_any = true;
                break 'outer;
            }
        }
        if !merged_any {
            return motifs;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motif::test_motif;

    #[test]
    fn substring_merges_into_longer() {
        let merged = merge_motifs(vec![
            test_motif(&[3, 7], "Sleep", 6),
            test_motif(&[3, 7, 9], "Sleep", 5),
        ]);
        assert_eq!(merged.len(), 1);
        assert_eq!(merged[0].au_pattern, vec![3, 7, 9]);
        assert_eq!(merged[0].label, "Sleep");
    }

    #[test]
    fn different_labels_do_not_merge() {
        let merged = merge_motifs(vec![
            test_motif(&[3, 7], "Sleep", 6),
            test_motif(&[3, 7, 9], "Work", 5),
        ]);
        assert_eq!(merged.len(), 2);
    }

    #[test]
    fn overlap_merges_to_union() {
        // [1,2,3] and [2,3,4] overlap by 2 of 3: union [1,2,3,4]
        let merged = merge_motifs(vec![
            test_motif(&[1, 2, 3], "Eat", 5),
            test_motif(&[2, 3, 4], "Eat", 5),
        ]);
        assert_eq!(merged.len(), 1);
        assert_eq!(merged[0].au_pattern, vec![1, 2, 3, 4]);
    }

    #[test]
    fn short_overlap_does_not_merge() {
        // overlap 1 of 3 < half
        let merged = merge_motifs(vec![
            test_motif(&[1, 2, 3], "Eat", 5),
            test_motif(&[3, 5, 6], "Eat", 5),
        ]);
        assert_eq!(merged.len(), 2);
    }

    #[test]
    fn support_recounted_without_overlapping_instances() {
        let mut a = test_motif(&[1, 2], "Eat", 5);
        let mut b = test_motif(&[1, 2, 3], "Eat", 5);
        // place b's instances on top of a's first instance
        use crate::motif::{AuSpan, MotifInstance};
        a.instance_spans = (0..5)
            .map(|i| MotifInstance {
                block_id: 0,
                span: AuSpan::new(i * 10, i * 10 + 1),
            })
            .collect();
        b.instance_spans = (0..5)
            .map(|i| MotifInstance {
                block_id: 0,
                span: AuSpan::new(i * 10, i * 10 + 2),
            })
            .collect();
        let merged = merge_motifs(vec![a, b]);
        assert_eq!(merged.len(), 1);
        // the union dedups to 5 disjoint spans
        assert_eq!(merged[0].support, 5);
    }

    #[test]
    fn chain_merges_to_fixpoint() {
        let merged = merge_motifs(vec![
            test_motif(&[1, 2, 3], "Eat", 5),
            test_motif(&[2, 3, 4], "Eat", 5),
            test_motif(&[3, 4, 5], "Eat", 5),
        ]);
        assert_eq!(merged.len(), 1);
        assert_eq!(merged[0].au_pattern, vec![1, 2, 3, 4, 5]);
    }
}
