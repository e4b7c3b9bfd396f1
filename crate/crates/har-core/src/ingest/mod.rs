//! Event-stream ingestion: CASAS log parsing, sensor filtering, calendar
//! partitioning, and a deterministic synthetic generator for fixtures.
//!
//! Timestamps are kept for week partitioning and reporting only; nothing
//! downstream of windowing ever sees an absolute time.

mod parse;
mod synth;

pub use parse::{parse_casas, parse_casas_file, ParseDiagnostic, ParseOptions, ParseOutcome};
pub use synth::{synth_generate, SynthActivity, SynthConfig};

use std::collections::{BTreeMap, BTreeSet};

use chrono::{Datelike, NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::error::{HarError, Result};

/// Marker attached to an annotated sensor event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnnotationMarker {
    Begin,
    End,
}

/// One ambient-sensor state change, with an optional retrospective
/// activity annotation as recorded in the log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorEvent {
    pub timestamp: NaiveDateTime,
    pub sensor_id: String,
    /// Categorical state (ON/OFF, OPEN/CLOSE) or a numeric reading for
    /// temperature sensors; kept verbatim.
    pub state: String,
    pub raw_annotation: Option<(String, AnnotationMarker)>,
}

impl SensorEvent {
    /// Sensor category prefix: the leading non-digit characters of the id
    /// (`"M003"` -> `"M"`).
    pub fn category(&self) -> &str {
        let split = self
            .sensor_id
            .find(|c: char| c.is_ascii_digit())
            .unwrap_or(self.sensor_id.len());
        &self.sensor_id[..split]
    }
}

/// A ground-truth activity interval reconstructed from begin/end markers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationInterval {
    pub activity: String,
    pub start_index: usize,
    pub end_index: usize,
    pub start_time: NaiveDateTime,
    pub end_time: NaiveDateTime,
    /// True when the closing marker was missing and the interval was closed
    /// at the next begin of the same activity or at end of stream.
    pub auto_closed: bool,
}

/// Aggregate counts for reporting (Table-style dataset summaries).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSummary {
    /// Distinct calendar days with at least one event.
    pub days: usize,
    pub sensor_count: usize,
    pub activity_count: usize,
    pub resident_note: String,
}

/// An ordered, annotated sensor event stream.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EventStream {
    pub events: Vec<SensorEvent>,
    pub intervals: Vec<AnnotationInterval>,
    pub summary: DatasetSummary,
}

impl EventStream {
    /// Builds a stream from raw events: reconciles annotation markers into
    /// intervals and computes the summary.
    pub fn from_events(events: Vec<SensorEvent>) -> Self {
        let intervals = reconcile_annotations(&events);
        let summary = summarize(&events, &intervals);
        EventStream {
            events,
            intervals,
            summary,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    /// Serializes to canonical whitespace-separated log lines. Re-parsing the
    /// output reproduces the stream exactly.
    pub fn to_canonical_lines(&self) -> String {
        let mut out = String::new();
        for ev in &self.events {
            out.push_str(&ev.timestamp.format("%Y-%m-%d %H:%M:%S%.6f").to_string());
            out.push(' ');
            out.push_str(&ev.sensor_id);
            out.push(' ');
            out.push_str(&ev.state);
            if let Some((activity, marker)) = &ev.raw_annotation {
                out.push(' ');
                out.push_str(activity);
                out.push(' ');
                out.push_str(match marker {
                    AnnotationMarker::Begin => "begin",
                    AnnotationMarker::End => "end",
                });
            }
            out.push('\n');
        }
        out
    }
}

/// Closes begin/end markers into [`AnnotationInterval`]s.
///
/// A begin without a matching end closes at the next begin of the same
/// activity (exclusive) or at end of stream, flagged auto-closed. An end
/// without an open begin is dropped; the parser reports it separately.
pub fn reconcile_annotations(events: &[SensorEvent]) -> Vec<AnnotationInterval> {
    let mut open: BTreeMap<&str, (usize, NaiveDateTime)> = BTreeMap::new();
    let mut intervals = Vec::new();
    for (idx, ev) in events.iter().enumerate() {
        let Some((activity, marker)) = &ev.raw_annotation else {
            continue;
        };
        match marker {
            AnnotationMarker::Begin => {
                if let Some((start_index, start_time)) = open.remove(activity.as_str()) {
                    // auto-close at the event just before this begin
                    let end_index = idx.saturating_sub(1).max(start_index);
                    intervals.push(AnnotationInterval {
                        activity: activity.clone(),
                        start_index,
                        end_index,
                        start_time,
                        end_time: events[end_index].timestamp,
                        auto_closed: true,
                    });
                }
                open.insert(activity.as_str(), (idx, ev.timestamp));
            }
            AnnotationMarker::End => {
                if let Some((start_index, start_time)) = open.remove(activity.as_str()) {
                    intervals.push(AnnotationInterval {
                        activity: activity.clone(),
                        start_index,
                        end_index: idx,
                        start_time,
                        end_time: ev.timestamp,
                        auto_closed: false,
                    });
                }
                // end without begin: ignored here, reported by the parser
            }
        }
    }
    if let Some(last) = events.len().checked_sub(1) {
        for (activity, (start_index, start_time)) in open {
            intervals.push(AnnotationInterval {
                activity: activity.to_string(),
                start_index,
                end_index: last,
                start_time,
                end_time: events[last].timestamp,
                auto_closed: true,
            });
        }
    }
    intervals.sort_by(|a, b| {
        (a.start_index, a.end_index, &a.activity).cmp(&(b.start_index, b.end_index, &b.activity))
    });
    intervals
}

fn summarize(events: &[SensorEvent], intervals: &[AnnotationInterval]) -> DatasetSummary {
    let days: BTreeSet<NaiveDate> = events.iter().map(|e| e.timestamp.date()).collect();
    let sensors: BTreeSet<&str> = events.iter().map(|e| e.sensor_id.as_str()).collect();
    let activities: BTreeSet<&str> = intervals.iter().map(|i| i.activity.as_str()).collect();
    DatasetSummary {
        days: days.len(),
        sensor_count: sensors.len(),
        activity_count: activities.len(),
        resident_note: String::new(),
    }
}

/// Result of [`filter_sensors`].
#[derive(Debug, Clone)]
pub struct FilterOutcome {
    pub stream: EventStream,
    pub dropped_events: usize,
    pub dropped_intervals: usize,
    pub warnings: Vec<String>,
}

/// Keeps only events whose sensor category prefix is in `keep`, re-indexing
/// intervals onto the surviving events. Relative order is preserved.
pub fn filter_sensors(stream: &EventStream, keep: &BTreeSet<String>) -> Result<FilterOutcome> {
    if keep.is_empty() {
        return Err(HarError::data("filter_sensors: keep set must be non-empty"));
    }
    let mut new_index = vec![usize::MAX; stream.events.len()];
    let mut events = Vec::new();
    for (idx, ev) in stream.events.iter().enumerate() {
        if keep.contains(ev.category()) {
            new_index[idx] = events.len();
            events.push(ev.clone());
        }
    }
    let mut dropped_intervals = 0usize;
    let mut intervals = Vec::new();
    for interval in &stream.intervals {
        // first kept event at or after start, last kept event at or before end
        let start = (interval.start_index..=interval.end_index)
            .find(|&i| new_index[i] != usize::MAX)
            .map(|i| new_index[i]);
        let end = (interval.start_index..=interval.end_index)
            .rev()
            .find(|&i| new_index[i] != usize::MAX)
            .map(|i| new_index[i]);
        match (start, end) {
            (Some(s), Some(e)) => intervals.push(AnnotationInterval {
                start_index: s,
                end_index: e,
                ..interval.clone()
            }),
            _ => dropped_intervals += 1,
        }
    }
    let dropped_events = stream.events.len() - events.len();
    let mut warnings = Vec::new();
    if events.is_empty() {
        warnings.push("filter_sensors produced an empty stream".to_string());
    }
    if dropped_intervals > 0 {
        warnings.push(format!(
            "{dropped_intervals} annotation interval(s) lost all events and were dropped"
        ));
    }
    let summary = summarize(&events, &intervals);
    Ok(FilterOutcome {
        stream: EventStream {
            events,
            intervals,
            summary,
        },
        dropped_events,
        dropped_intervals,
        warnings,
    })
}

/// A contiguous slice of the stream covering `block_weeks` calendar weeks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EventBlock {
    pub index: usize,
    pub start_date: NaiveDate,
    /// Exclusive calendar end of the block's nominal span.
    pub end_date: NaiveDate,
    pub partial: bool,
    pub stream: EventStream,
}

/// Partitions the stream into consecutive blocks of `block_weeks` calendar
/// weeks, anchored at the first event's date. The final partial block is
/// retained and flagged.
pub fn partition_weeks(stream: &EventStream, block_weeks: u32) -> Result<Vec<EventBlock>> {
    if stream.events.is_empty() {
        return Err(HarError::data("partition_weeks: empty stream"));
    }
    partition_weeks_from(stream, stream.events[0].timestamp.date(), block_weeks)
}

/// [`partition_weeks`] with an explicit anchor date, so update blocks stay
/// aligned to the bootstrap boundary even when the stream has gaps.
pub fn partition_weeks_from(
    stream: &EventStream,
    anchor: NaiveDate,
    block_weeks: u32,
) -> Result<Vec<EventBlock>> {
    if block_weeks == 0 {
        return Err(HarError::data("partition_weeks: block_weeks must be >= 1"));
    }
    if stream.events.is_empty() {
        return Err(HarError::data("partition_weeks: empty stream"));
    }
    let block_days = (block_weeks as i64) * 7;
    let block_of = |d: NaiveDate| -> usize {
        let delta = (d - anchor).num_days();
        // events dated before the anchor (out-of-order logs) fall into block 0
        if delta < 0 {
            0
        } else {
            (delta / block_days) as usize
        }
    };
    let last_block = stream
        .events
        .iter()
        .map(|e| block_of(e.timestamp.date()))
        .max()
        .unwrap_or(0);

    let mut blocks = Vec::with_capacity(last_block + 1);
    for b in 0..=last_block {
        let start_date = anchor + chrono::Duration::days(b as i64 * block_days);
        let end_date = start_date + chrono::Duration::days(block_days);
        blocks.push((b, start_date, end_date, Vec::new()));
    }
    for ev in &stream.events {
        let b = block_of(ev.timestamp.date());
        blocks[b].3.push(ev.clone());
    }

    let last_event_date = stream
        .events
        .iter()
        .map(|e| e.timestamp.date())
        .max()
        .unwrap();
    let mut out = Vec::new();
    for (index, start_date, end_date, events) in blocks {
        let partial =
            index == last_block && last_event_date < end_date - chrono::Duration::days(1);
        out.push(EventBlock {
            index,
            start_date,
            end_date,
            partial,
            stream: EventStream::from_events(events),
        });
    }
    Ok(out)
}

/// Splits the first `weeks` calendar weeks off the stream (anchored at the
/// first event's date), returning (head, tail).
pub fn split_weeks(stream: &EventStream, weeks: u32) -> (EventStream, EventStream) {
    if stream.events.is_empty() {
        return (EventStream::default(), EventStream::default());
    }
    let anchor = stream.events[0].timestamp.date();
    let cutoff = anchor + chrono::Duration::days(weeks as i64 * 7);
    let (head, tail): (Vec<_>, Vec<_>) = stream
        .events
        .iter()
        .cloned()
        .partition(|e| e.timestamp.date() < cutoff);
    (EventStream::from_events(head), EventStream::from_events(tail))
}

/// Week number (0-based) of a date relative to an anchor date.
pub fn week_of(anchor: NaiveDate, date: NaiveDate) -> i64 {
    (date - anchor).num_days().div_euclid(7)
}

/// ISO-agnostic day ordinal helper used in reports.
pub fn day_ordinal(date: NaiveDate) -> i64 {
    date.num_days_from_ce() as i64
}
