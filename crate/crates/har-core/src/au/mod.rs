//! Action units: windowing, masked-token embedding, clustering, prediction.
//!
//! A window of consecutive sensor events is embedded and assigned a cluster
//! id; the resulting (cluster id, span) sequence is the symbol stream every
//! later stage consumes.

mod embedder;
mod kmeans;
pub mod vocab;

pub use embedder::{train_embedder, EmbedderConfig, EmbedderTrainReport, MaskedEmbedder};
pub use kmeans::{
    fit_kmeans, fit_kmeans_capped, select_k_by_silhouette, silhouette, KMeansModel,
};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{HarError, Result};
use crate::ingest::EventStream;

/// Default window size: an action unit spans 20 sensor events.
pub const DEFAULT_WINDOW_SIZE: usize = 20;
/// Default stride equals the window size (tumbling windows), so action
/// units tile the stream without overlap and per-activity unit counts are
/// well defined.
pub const DEFAULT_STRIDE: usize = DEFAULT_WINDOW_SIZE;
/// Default cluster count; the alphabet size of the action-unit symbol
/// stream. Overridable, or selected by silhouette via `--auto-k`.
pub const DEFAULT_K: usize = 24;

/// A fixed-length token window over the event stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventWindow {
    /// Composite `sensor=state` token keys, one per event.
    pub tokens: Vec<String>,
    /// Inclusive (first, last) event indices within the source stream.
    pub span: (usize, usize),
}

/// One action unit: a cluster id over an event window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionUnit {
    pub cluster_id: u32,
    /// Inclusive (first, last) event indices within the source block.
    pub span: (usize, usize),
}

/// Cluster-id sequence over a block of the stream.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionUnitSequence {
    pub block_id: usize,
    pub units: Vec<ActionUnit>,
}

impl ActionUnitSequence {
    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn ids(&self) -> Vec<u32> {
        self.units.iter().map(|u| u.cluster_id).collect()
    }
}

/// Slides a window of `size` tokens over the stream at the given stride.
/// Trailing events that do not fill a window are dropped; a stream shorter
/// than one window yields an empty list.
pub fn make_windows(stream: &EventStream, size: usize, stride: usize) -> Result<Vec<EventWindow>> {
    if size < 1 {
        return Err(HarError::data("make_windows: size must be >= 1"));
    }
    if stride < 1 || stride > size {
        return Err(HarError::data(
            "make_windows: stride must satisfy 1 <= stride <= size",
        ));
    }
    let n = stream.events.len();
    if n < size {
        return Ok(Vec::new());
    }
    let keys: Vec<String> = stream.events.iter().map(vocab::token_key).collect();
    let count = (n - size) / stride + 1;
    let mut windows = Vec::with_capacity(count);
    for w in 0..count {
        let first = w * stride;
        let last = first + size - 1;
        windows.push(EventWindow {
            tokens: keys[first..=last].to_vec(),
            span: (first, last),
        });
    }
    Ok(windows)
}

/// Embeds every window of the block and assigns each to its nearest
/// centroid, producing the block's action-unit sequence.
pub fn predict_action_units(
    stream: &EventStream,
    embedder: &MaskedEmbedder,
    kmeans: &KMeansModel,
    stride: usize,
    block_id: usize,
) -> Result<ActionUnitSequence> {
    if embedder.dim != kmeans.dim {
        return Err(HarError::data(format!(
            "predict_action_units: embedder dim {} != kmeans dim {}",
            embedder.dim, kmeans.dim
        )));
    }
    let windows = make_windows(stream, embedder.window_size, stride)?;
    let embeddings = embedder.embed_batch(&windows)?;
    let units = assign_units(&windows, &embeddings, kmeans);
    Ok(ActionUnitSequence { block_id, units })
}

/// Cluster assignment for pre-computed window embeddings.
pub fn assign_units(
    windows: &[EventWindow],
    embeddings: &Array2<f64>,
    kmeans: &KMeansModel,
) -> Vec<ActionUnit> {
    windows
        .iter()
        .zip(embeddings.rows())
        .map(|(w, e)| ActionUnit {
            cluster_id: kmeans.assign(e.as_slice().unwrap()) as u32,
            span: w.span,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::SensorEvent;
    use chrono::NaiveDate;

    fn stream_of(n: usize) -> EventStream {
        let base = NaiveDate::from_ymd_opt(2024, 1, 1)
            .unwrap()
            .and_hms_opt(0, 0, 0)
            .unwrap();
        EventStream::from_events(
            (0..n)
                .map(|i| SensorEvent {
                    timestamp: base + chrono::Duration::seconds(i as i64),
                    sensor_id: format!("M{:03}", i % 5),
                    state: if i % 2 == 0 { "ON" } else { "OFF" }.into(),
                    raw_annotation: None,
                })
                .collect(),
        )
    }

    #[test]
    fn window_counts() {
        let s = stream_of(40);
        assert_eq!(make_windows(&s, 20, 20).unwrap().len(), 2);
        assert_eq!(make_windows(&s, 20, 1).unwrap().len(), 21);
        let short = stream_of(19);
        assert!(make_windows(&short, 20, 20).unwrap().is_empty());
    }

    #[test]
    fn window_spans_and_tokens() {
        let s = stream_of(45);
        let ws = make_windows(&s, 20, 20).unwrap();
        assert_eq!(ws[0].span, (0, 19));
        assert_eq!(ws[1].span, (20, 39));
        assert_eq!(ws[0].tokens[0], "M000=ON");
        // trailing 5 events dropped
        assert_eq!(ws.len(), 2);
    }

    #[test]
    fn stride_bounds_enforced() {
        let s = stream_of(40);
        assert!(make_windows(&s, 20, 0).is_err());
        assert!(make_windows(&s, 20, 21).is_err());
    }
}
