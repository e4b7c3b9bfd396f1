//! Bootstrap and per-block update cycles.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::Array2;

use crate::au::{
    self, fit_kmeans, predict_action_units, select_k_by_silhouette, train_embedder,
    ActionUnitSequence, KMeansModel, MaskedEmbedder,
};
use crate::error::{HarError, Result};
use crate::ingest::{split_weeks, EventBlock, EventStream};
use crate::motif::{
    discover_motifs_multi, label_motifs, match_sequence, merge_motifs, update_memory,
    AnnotationOracle, AuSpan, Detection, MotifMemory, NonDetectionRegion,
};
use crate::orchestrator::{
    BudgetEntry, PipelineConfig, SeedOrigin, SeedPoint, SegmentSet, UpdateState,
};
use crate::ssl::{fine_tune, predict_thresholded_batch, pretrain, Classifier, FeatureVector};

/// What one update cycle did, for logs and tests.
#[derive(Debug, Clone)]
pub struct CycleReport {
    pub cycle: usize,
    pub block_id: usize,
    pub motif_detections: usize,
    pub ssl_points: usize,
    pub new_motifs: usize,
    pub queries: usize,
}

fn embed_windows(
    embedder: &MaskedEmbedder,
    stream: &EventStream,
    stride: usize,
    block_id: usize,
    kmeans: &KMeansModel,
) -> Result<(ActionUnitSequence, Array2<f64>)> {
    let windows = au::make_windows(stream, embedder.window_size, stride)?;
    let features = embedder.embed_batch(&windows)?;
    let units = au::assign_units(&windows, &features, kmeans);
    Ok((ActionUnitSequence { block_id, units }, features))
}

/// Bootstraps the pipeline on the first n+m weeks: the cold phase trains
/// the embedder and k-means, the warm phase yields the first motif memory
/// and segment set A1, and the first classifier is trained from A1.
pub fn bootstrap(
    stream: &EventStream,
    config: &PipelineConfig,
    oracle: &mut dyn AnnotationOracle,
) -> Result<UpdateState> {
    config.schedule.validate()?;
    let (cold, warm) = split_weeks(stream, config.schedule.n_weeks);
    if cold.is_empty() || warm.is_empty() {
        return Err(HarError::data(format!(
            "bootstrap: stream must span at least n+m = {} weeks",
            config.schedule.bootstrap_weeks()
        )));
    }

    // cold phase: action-unit alphabet
    let cold_windows = au::make_windows(&cold, config.window_size, config.stride)?;
    if cold_windows.is_empty() {
        return Err(HarError::data(
            "bootstrap: cold phase shorter than one window",
        ));
    }
    let embedder = train_embedder(&cold_windows, &config.embedder)?;
    let cold_features = embedder.embed_batch(&cold_windows)?;
    let k = if config.auto_k {
        select_k_by_silhouette(&cold_features, 8, 40, crate::derive_seed(config.master_seed, "kmeans"))?
    } else {
        config.k
    };
    let kmeans = fit_kmeans(
        &cold_features,
        k.min(cold_features.nrows()),
        crate::derive_seed(config.master_seed, "kmeans"),
    )?;

    // warm phase: motif models
    let (warm_seq, warm_features) = embed_windows(&embedder, &warm, config.stride, 0, &kmeans)?;
    oracle.register_block(
        0,
        warm_seq.units.iter().map(|u| u.span).collect(),
        &warm.intervals,
    );
    let candidates = discover_motifs_multi(
        &[(0, warm_seq.ids())],
        config.min_motif_len,
        config.max_motif_len,
        config.min_support,
    );
    let mut queried_patterns: BTreeSet<Vec<u32>> =
        candidates.iter().map(|c| c.pattern.clone()).collect();
    let outcome = label_motifs(candidates, oracle, config.homogeneity_threshold);
    let mut filter_log: Vec<String> = outcome
        .dropped
        .iter()
        .map(|(p, why)| format!("v1: dropped {p:?}: {why}"))
        .collect();
    if outcome.motifs.is_empty() {
        return Err(HarError::data(format!(
            "bootstrap: zero motifs survived the filters; cannot bootstrap.\nfilter log:\n{}",
            filter_log.join("\n")
        )));
    }
    let merged = merge_motifs(outcome.motifs);
    for m in &merged {
        filter_log.push(format!(
            "v1: kept {:?} label={} support={}",
            m.au_pattern, m.label, m.support
        ));
        queried_patterns.insert(m.au_pattern.clone());
    }
    let memory = MotifMemory::bootstrap(merged, filter_log)?;

    // A1: detections over the warm phase
    let (detections, _) = match_sequence(&warm_seq, &memory)?;
    let mut segments = SegmentSet {
        version: 1,
        points: detections
            .iter()
            .map(|d| SeedPoint {
                block_id: 0,
                au_span: d.au_span,
                activity: d.activity.clone(),
                origin: SeedOrigin::MotifDetection,
                model_version: 1,
            })
            .collect(),
    };
    segments.normalize();

    let mut state = UpdateState {
        config: config.clone(),
        embedder,
        kmeans,
        memory,
        classifier: None,
        segments,
        cycle: 0,
        budget: vec![BudgetEntry {
            cycle: 0,
            queries: outcome.queries_spent,
            cumulative: outcome.queries_spent,
        }],
        queried_patterns,
        block_sequences: BTreeMap::from([(0, warm_seq)]),
        block_features: BTreeMap::from([(0, warm_features)]),
        window_cache: if config.refresh_au {
            let warm_windows = au::make_windows(&warm, config.window_size, config.stride)?;
            BTreeMap::from([(usize::MAX, cold_windows), (0, warm_windows)])
        } else {
            BTreeMap::new()
        },
    };

    state.classifier = train_ssl(&state)?;
    state.assert_version_lockstep()?;
    Ok(state)
}

/// Per-AU thresholded predictions over the non-detection regions,
/// coalescing adjacent same-label units into one span.
fn ssl_fill(
    classifier: &Classifier,
    features: &Array2<f64>,
    regions: &[NonDetectionRegion],
    covered_by_motifs: &BTreeSet<usize>,
    theta: f64,
    block_id: usize,
    model_version: u32,
) -> Result<Vec<SeedPoint>> {
    let mut au_labels: BTreeMap<usize, String> = BTreeMap::new();
    for region in regions {
        let idx: Vec<usize> = (region.au_span.start..=region.au_span.end)
            .filter(|i| !covered_by_motifs.contains(i))
            .collect();
        if idx.is_empty() {
            continue;
        }
        let mut sub = Array2::zeros((idx.len(), features.ncols()));
        for (r, &i) in idx.iter().enumerate() {
            sub.row_mut(r).assign(&features.row(i));
        }
        let preds = predict_thresholded_batch(classifier, &sub, theta)?;
        for (&i, pred) in idx.iter().zip(preds) {
            if let Some((label_idx, _conf)) = pred {
                au_labels.insert(i, classifier.labels[label_idx].clone());
            }
        }
    }
    // coalesce adjacent same-label predictions
    let mut points: Vec<SeedPoint> = Vec::new();
    for (i, label) in au_labels {
        match points.last_mut() {
            Some(p) if p.au_span.end + 1 == i && p.activity == label => {
                p.au_span = AuSpan::new(p.au_span.start, i);
            }
            _ => points.push(SeedPoint {
                block_id,
                au_span: AuSpan::new(i, i),
                activity: label,
                origin: SeedOrigin::SslPrediction,
                model_version,
            }),
        }
    }
    Ok(points)
}

/// Expands the cumulative segment set into per-AU training pairs. Motif
/// detections are trusted supervision by default; SSL-origin spans join
/// only when `seed_origin_all` is set.
pub fn seed_points_for_training(state: &UpdateState) -> Vec<(FeatureVector, String)> {
    let mut pairs = Vec::new();
    for point in &state.segments.points {
        if point.origin == SeedOrigin::SslPrediction && !state.config.seed_origin_all {
            continue;
        }
        let Some(features) = state.block_features.get(&point.block_id) else {
            continue;
        };
        for i in point.au_span.start..=point.au_span.end {
            if i < features.nrows() {
                pairs.push((features.row(i).to_vec(), point.activity.clone()));
            }
        }
    }
    pairs
}

/// Pretrain on all observed action-unit features, then fine-tune on the
/// seed points. `None` when the seeds hold fewer than two labels or too
/// little data for a contrastive batch.
fn train_ssl(state: &UpdateState) -> Result<Option<Classifier>> {
    let mut all_features: Vec<FeatureVector> = Vec::new();
    for features in state.block_features.values() {
        all_features.extend(features.rows().into_iter().map(|r| r.to_vec()));
    }
    let mut ssl_config = state.config.ssl.clone();
    // deterministic per cycle, fresh stream each retrain
    ssl_config.seed = crate::derive_seed(
        state.config.ssl.seed,
        &format!("cycle-{}", state.cycle),
    );
    if all_features.len() < ssl_config.batch_size {
        return Ok(None);
    }
    let seeds = seed_points_for_training(state);
    let distinct: BTreeSet<&str> = seeds.iter().map(|(_, l)| l.as_str()).collect();
    if distinct.len() < 2 {
        return Ok(None);
    }
    let pretrained = pretrain(&all_features, &ssl_config)?;
    let classifier = fine_tune(&pretrained.encoder, &seeds, &ssl_config)?;
    Ok(Some(classifier))
}

/// Applies a fixed model version to one block: action units, motif
/// detections, thresholded SSL fill. This is both the evaluation path and
/// the extension half of an update cycle.
pub fn recognize_block(
    embedder: &MaskedEmbedder,
    kmeans: &KMeansModel,
    memory: &MotifMemory,
    classifier: Option<&Classifier>,
    stream: &EventStream,
    config: &PipelineConfig,
    block_id: usize,
) -> Result<(ActionUnitSequence, Array2<f64>, Vec<SeedPoint>)> {
    let (seq, features) = embed_windows(embedder, stream, config.stride, block_id, kmeans)?;
    let (detections, regions) = match_sequence(&seq, memory)?;
    let covered: BTreeSet<usize> = detections
        .iter()
        .flat_map(|d| d.au_span.start..=d.au_span.end)
        .collect();
    let mut points: Vec<SeedPoint> = detections
        .iter()
        .map(|d| SeedPoint {
            block_id,
            au_span: d.au_span,
            activity: d.activity.clone(),
            origin: SeedOrigin::MotifDetection,
            model_version: memory.version,
        })
        .collect();
    if let Some(classifier) = classifier {
        points.extend(ssl_fill(
            classifier,
            &features,
            &regions,
            &covered,
            config.ssl.softmax_threshold,
            block_id,
            memory.version,
        )?);
    }
    points.sort();
    Ok((seq, features, points))
}

/// One data-incremental update cycle over the next block.
///
/// Follows the additive contract: detections against the previous memory,
/// SSL predictions over its non-detection regions, motif discovery over all
/// observed data, a full re-scan of the block with the updated memory
/// (detections deduplicated, motif beats SSL on overlap), and from-scratch
/// SSL retraining on the grown segment set.
pub fn run_update_cycle(
    state: &mut UpdateState,
    block: &EventBlock,
    oracle: &mut dyn AnnotationOracle,
) -> Result<CycleReport> {
    let expected_block = state.cycle + 1;
    if block.index != expected_block {
        return Err(HarError::data(format!(
            "run_update_cycle: expected block {expected_block}, got {} (blocks must be contiguous)",
            block.index
        )));
    }
    // timestamp audit: the block's events must lie inside its nominal span
    for ev in &block.stream.events {
        let d = ev.timestamp.date();
        if d < block.start_date || d >= block.end_date {
            return Err(HarError::invariant(format!(
                "causality: event at {} outside block {} span [{}, {})",
                ev.timestamp, block.index, block.start_date, block.end_date
            )));
        }
    }

    let block_id = block.index;
    let prev_version = state.model_version();
    let next_version = prev_version + 1;

    // (1) action units for the new block
    let (seq, features) = embed_windows(
        &state.embedder,
        &block.stream,
        state.config.stride,
        block_id,
        &state.kmeans,
    )?;

    // empty block: bookkeeping only
    if seq.is_empty() {
        state.memory = update_memory(&state.memory, vec![])?;
        state.segments.version = next_version;
        state.cycle += 1;
        let cumulative = state.cumulative_budget();
        state.budget.push(BudgetEntry {
            cycle: state.cycle,
            queries: 0,
            cumulative,
        });
        state.block_sequences.insert(block_id, seq);
        state.block_features.insert(block_id, features);
        state.assert_version_lockstep()?;
        return Ok(CycleReport {
            cycle: state.cycle,
            block_id,
            motif_detections: 0,
            ssl_points: 0,
            new_motifs: 0,
            queries: 0,
        });
    }

    oracle.register_block(
        block_id,
        seq.units.iter().map(|u| u.span).collect(),
        &block.stream.intervals,
    );

    // (2) detections and non-detections against memory v(t)
    let (_detections_old, regions) = match_sequence(&seq, &state.memory)?;

    // (4) discovery over all observed data (warm + update blocks)
    state.block_sequences.insert(block_id, seq.clone());
    state.block_features.insert(block_id, features.clone());
    let all_blocks: Vec<(usize, Vec<u32>)> = state
        .block_sequences
        .iter()
        .map(|(&b, s)| (b, s.ids()))
        .collect();
    let candidates = discover_motifs_multi(
        &all_blocks,
        state.config.min_motif_len,
        state.config.max_motif_len,
        state.config.min_support,
    );
    let fresh: Vec<_> = candidates
        .into_iter()
        .filter(|c| !state.queried_patterns.contains(&c.pattern))
        .collect();
    for c in &fresh {
        state.queried_patterns.insert(c.pattern.clone());
    }
    let outcome = label_motifs(fresh, oracle, state.config.homogeneity_threshold);
    let new_motif_count = outcome.motifs.len();
    state.memory = update_memory(&state.memory, outcome.motifs)?;

    // (5) full re-scan with the updated memory; SSL fills what motifs leave
    let (detections_new, _) = match_sequence(&seq, &state.memory)?;
    let covered: BTreeSet<usize> = detections_new
        .iter()
        .flat_map(|d| d.au_span.start..=d.au_span.end)
        .collect();
    let mut a_t: Vec<SeedPoint> = detections_new
        .iter()
        .map(|d| SeedPoint {
            block_id,
            au_span: d.au_span,
            activity: d.activity.clone(),
            origin: SeedOrigin::MotifDetection,
            model_version: next_version,
        })
        .collect();

    // (3) classifier v(t) fills the old non-detection regions (motif wins
    // on overlap with the re-scan)
    let ssl_points = match &state.classifier {
        Some(classifier) => ssl_fill(
            classifier,
            &features,
            &regions,
            &covered,
            state.config.ssl.softmax_threshold,
            block_id,
            prev_version,
        )?,
        None => Vec::new(),
    };
    let ssl_count = ssl_points.len();
    a_t.extend(ssl_points);

    // (6) A_updated = A_{t-1} + A_t
    let before = state.segments.clone();
    state.segments.points.extend(a_t);
    state.segments.version = next_version;
    state.segments.normalize();
    if !state.segments.is_superset_of(&before) {
        return Err(HarError::invariant(
            "A_updated lost points from A_{t-1}; the segment set must be additive",
        ));
    }

    // bookkeeping
    state.cycle += 1;
    let cumulative = state.cumulative_budget() + outcome.queries_spent;
    state.budget.push(BudgetEntry {
        cycle: state.cycle,
        queries: outcome.queries_spent,
        cumulative,
    });

    // (7) refresh SSL from scratch on cumulative data
    if let Some(classifier) = train_ssl(state)? {
        state.classifier = Some(classifier);
    }

    // optional alphabet refresh (ablation)
    if state.config.refresh_au {
        let block_windows =
            au::make_windows(&block.stream, state.config.window_size, state.config.stride)?;
        state.window_cache.insert(block_id, block_windows);
        refresh_alphabet(state)?;
    }

    state.assert_version_lockstep()?;
    Ok(CycleReport {
        cycle: state.cycle,
        block_id,
        motif_detections: covered.len(),
        ssl_points: ssl_count,
        new_motifs: new_motif_count,
        queries: outcome.queries_spent,
    })
}

/// Ablation path: re-learn the embedder and k-means on every window seen so
/// far and re-predict all cached blocks. Stored motif patterns keep their
/// old cluster ids and may stop matching; that is the documented cost of
/// re-clustering.
fn refresh_alphabet(state: &mut UpdateState) -> Result<()> {
    let corpus: Vec<au::EventWindow> = state
        .window_cache
        .values()
        .flat_map(|ws| ws.iter().cloned())
        .collect();
    let mut embedder_config = state.config.embedder.clone();
    embedder_config.seed = crate::derive_seed(
        state.config.embedder.seed,
        &format!("refresh-{}", state.cycle),
    );
    state.embedder = train_embedder(&corpus, &embedder_config)?;
    let corpus_features = state.embedder.embed_batch(&corpus)?;
    state.kmeans = fit_kmeans(
        &corpus_features,
        state.config.k.min(corpus_features.nrows()),
        crate::derive_seed(state.config.master_seed, &format!("kmeans-refresh-{}", state.cycle)),
    )?;
    // re-predict every cached block under the new alphabet
    let block_ids: Vec<usize> = state
        .window_cache
        .keys()
        .copied()
        .filter(|&b| b != usize::MAX)
        .collect();
    for b in block_ids {
        let windows = &state.window_cache[&b];
        let features = state.embedder.embed_batch(windows)?;
        let units = au::assign_units(windows, &features, &state.kmeans);
        state
            .block_sequences
            .insert(b, ActionUnitSequence { block_id: b, units });
        state.block_features.insert(b, features);
    }
    Ok(())
}
