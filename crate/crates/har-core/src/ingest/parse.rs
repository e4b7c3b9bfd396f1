//! CASAS log parser.
//!
//! Lines are whitespace-separated: `date time sensor_id state` with an
//! optional trailing `activity begin|end` annotation. Malformed lines are
//! collected as diagnostics rather than aborting the parse; the parse fails
//! hard only when the malformed fraction exceeds a configurable threshold.

use std::path::Path;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use crate::error::{HarError, Result};
use crate::ingest::{AnnotationMarker, EventStream, SensorEvent};

/// Parser configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParseOptions {
    /// Hard-failure threshold on `malformed lines / non-empty lines`.
    pub max_error_rate: f64,
}

impl Default for ParseOptions {
    fn default() -> Self {
        ParseOptions {
            max_error_rate: 0.05,
        }
    }
}

/// Kinds of recoverable parse findings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagnosticKind {
    /// Line dropped: wrong field count or unparseable timestamp.
    MalformedLine,
    /// `end` marker with no open `begin` for that activity.
    UnmatchedEnd,
    /// `begin` marker that had to be auto-closed.
    UnmatchedBegin,
    /// Event timestamp earlier than its predecessor (kept in file order).
    TimestampRegression,
    /// Annotation token present but the begin/end marker missing.
    DanglingAnnotation,
}

/// One parse finding, tied to a 1-based line number.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseDiagnostic {
    pub line: usize,
    pub kind: DiagnosticKind,
    pub message: String,
}

/// Parsed stream plus everything the parser had to repair or drop.
#[derive(Debug, Clone)]
pub struct ParseOutcome {
    pub stream: EventStream,
    pub diagnostics: Vec<ParseDiagnostic>,
}

impl ParseOutcome {
    /// Diagnostics that represent dropped lines (the ones counted against
    /// the error-rate threshold).
    pub fn malformed(&self) -> usize {
        self.diagnostics
            .iter()
            .filter(|d| d.kind == DiagnosticKind::MalformedLine)
            .count()
    }
}

fn parse_timestamp(date: &str, time: &str) -> Option<NaiveDateTime> {
    let joined = format!("{date} {time}");
    NaiveDateTime::parse_from_str(&joined, "%Y-%m-%d %H:%M:%S%.f").ok()
}

/// Parses CASAS-format text into an [`EventStream`].
///
/// Events keep file order; annotation intervals are reconciled afterwards
/// (see [`crate::ingest::reconcile_annotations`]). Unmatched markers are
/// reported, not fatal.
pub fn parse_casas(input: &str, options: &ParseOptions) -> Result<ParseOutcome> {
    let mut events: Vec<SensorEvent> = Vec::new();
    let mut diagnostics: Vec<ParseDiagnostic> = Vec::new();
    // remember which line produced each event, for marker diagnostics
    let mut event_lines: Vec<usize> = Vec::new();
    let mut non_empty = 0usize;

    for (line_idx, raw) in input.lines().enumerate() {
        let line_no = line_idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        non_empty += 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < 4 || fields.len() > 6 {
            diagnostics.push(ParseDiagnostic {
                line: line_no,
                kind: DiagnosticKind::MalformedLine,
                message: format!("expected 4-6 fields, got {}", fields.len()),
            });
            continue;
        }
        let Some(timestamp) = parse_timestamp(fields[0], fields[1]) else {
            diagnostics.push(ParseDiagnostic {
                line: line_no,
                kind: DiagnosticKind::MalformedLine,
                message: format!("unparseable timestamp '{} {}'", fields[0], fields[1]),
            });
            continue;
        };
        if fields[2].is_empty() {
            diagnostics.push(ParseDiagnostic {
                line: line_no,
                kind: DiagnosticKind::MalformedLine,
                message: "empty sensor id".to_string(),
            });
            continue;
        }
        let raw_annotation = match fields.len() {
            5 => {
                diagnostics.push(ParseDiagnostic {
                    line: line_no,
                    kind: DiagnosticKind::DanglingAnnotation,
                    message: format!("activity '{}' without begin/end marker", fields[4]),
                });
                None
            }
            6 => match fields[5].to_ascii_lowercase().as_str() {
                "begin" => Some((fields[4].to_string(), AnnotationMarker::Begin)),
                "end" => Some((fields[4].to_string(), AnnotationMarker::End)),
                other => {
                    diagnostics.push(ParseDiagnostic {
                        line: line_no,
                        kind: DiagnosticKind::DanglingAnnotation,
                        message: format!("unknown marker '{other}'"),
                    });
                    None
                }
            },
            _ => None,
        };
        if let Some(prev) = events.last() {
            if timestamp < prev.timestamp {
                diagnostics.push(ParseDiagnostic {
                    line: line_no,
                    kind: DiagnosticKind::TimestampRegression,
                    message: format!("timestamp {timestamp} precedes previous event"),
                });
            }
        }
        events.push(SensorEvent {
            timestamp,
            sensor_id: fields[2].to_string(),
            state: fields[3].to_string(),
            raw_annotation,
        });
        event_lines.push(line_no);
    }

    let malformed = diagnostics
        .iter()
        .filter(|d| d.kind == DiagnosticKind::MalformedLine)
        .count();
    if non_empty > 0 {
        let rate = malformed as f64 / non_empty as f64;
        if rate > options.max_error_rate {
            return Err(HarError::data(format!(
                "parse error rate {rate:.3} exceeds threshold {:.3} ({malformed}/{non_empty} lines)",
                options.max_error_rate
            )));
        }
    }

    let stream = EventStream::from_events(events);

    // report marker defects discovered during reconciliation
    for interval in &stream.intervals {
        if interval.auto_closed {
            diagnostics.push(ParseDiagnostic {
                line: event_lines[interval.start_index],
                kind: DiagnosticKind::UnmatchedBegin,
                message: format!("begin '{}' auto-closed", interval.activity),
            });
        }
    }
    // ends without begins: markers not consumed by any interval
    let mut consumed = vec![false; stream.events.len()];
    for interval in &stream.intervals {
        consumed[interval.start_index] = true;
        if !interval.auto_closed {
            consumed[interval.end_index] = true;
        }
    }
    for (idx, ev) in stream.events.iter().enumerate() {
        if let Some((activity, AnnotationMarker::End)) = &ev.raw_annotation {
            if !consumed[idx] {
                diagnostics.push(ParseDiagnostic {
                    line: event_lines[idx],
                    kind: DiagnosticKind::UnmatchedEnd,
                    message: format!("end '{activity}' without begin"),
                });
            }
        }
    }
    diagnostics.sort_by_key(|d| d.line);

    Ok(ParseOutcome {
        stream,
        diagnostics,
    })
}

/// Parses a CASAS log file from disk.
pub fn parse_casas_file(path: &Path, options: &ParseOptions) -> Result<ParseOutcome> {
    let text = std::fs::read_to_string(path)?;
    parse_casas(&text, options)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_annotated_line() {
        let out = parse_casas(
            "2010-11-04 05:40:51.303739 M003 ON Sleep begin\n",
            &ParseOptions::default(),
        )
        .unwrap();
        assert_eq!(out.stream.events.len(), 1);
        let ev = &out.stream.events[0];
        assert_eq!(ev.sensor_id, "M003");
        assert_eq!(ev.state, "ON");
        assert_eq!(
            ev.raw_annotation,
            Some(("Sleep".to_string(), AnnotationMarker::Begin))
        );
        // begin opens an interval at that index (auto-closed at EOS here)
        assert_eq!(out.stream.intervals.len(), 1);
        assert_eq!(out.stream.intervals[0].start_index, 0);
    }

    #[test]
    fn empty_input_yields_empty_stream() {
        let out = parse_casas("", &ParseOptions::default()).unwrap();
        assert!(out.stream.events.is_empty());
        assert!(out.stream.intervals.is_empty());
        assert!(out.diagnostics.is_empty());
    }

    #[test]
    fn malformed_lines_are_diagnosed_with_line_numbers() {
        let text = "2010-11-04 05:40:51 M003 ON\nnot a line\n2010-11-04 05:40:52 M003 OFF\n";
        let out = parse_casas(text, &ParseOptions { max_error_rate: 0.5 }).unwrap();
        assert_eq!(out.stream.events.len(), 2);
        assert_eq!(out.malformed(), 1);
        assert_eq!(out.diagnostics[0].line, 2);
    }

    #[test]
    fn error_rate_threshold_fails_hard() {
        let text = "garbage\ngarbage\n2010-11-04 05:40:52 M003 OFF\n";
        let err = parse_casas(text, &ParseOptions { max_error_rate: 0.5 }).unwrap_err();
        assert!(matches!(err, HarError::Data(_)));
    }

    #[test]
    fn unmatched_end_is_reported_not_fatal() {
        let text = "2010-11-04 05:40:51 M003 ON Sleep end\n";
        let out = parse_casas(text, &ParseOptions::default()).unwrap();
        assert_eq!(out.stream.events.len(), 1);
        assert!(out.stream.intervals.is_empty());
        assert!(out
            .diagnostics
            .iter()
            .any(|d| d.kind == DiagnosticKind::UnmatchedEnd));
    }

    #[test]
    fn timestamp_regression_is_warned_but_kept() {
        let text = "2010-11-04 05:40:52 M003 ON\n2010-11-04 05:40:51 M003 OFF\n";
        let out = parse_casas(text, &ParseOptions::default()).unwrap();
        assert_eq!(out.stream.events.len(), 2);
        assert!(out
            .diagnostics
            .iter()
            .any(|d| d.kind == DiagnosticKind::TimestampRegression));
    }

    #[test]
    fn canonical_round_trip() {
        let text = "2010-11-04 05:40:51.303739 M003 ON Sleep begin\n\
                    2010-11-04 05:41:00.000001 M004 OFF\n\
                    2010-11-04 06:02:03.5 D001 OPEN Sleep end\n";
        let out = parse_casas(text, &ParseOptions::default()).unwrap();
        let canonical = out.stream.to_canonical_lines();
        let reparsed = parse_casas(&canonical, &ParseOptions::default()).unwrap();
        assert_eq!(reparsed.stream, out.stream);
    }

    #[test]
    fn summary_counts() {
        let text = "2010-11-04 05:40:51 M003 ON Sleep begin\n\
                    2010-11-04 05:41:00 T001 21.5\n\
                    2010-11-05 06:02:03 M004 OFF Sleep end\n";
        let out = parse_casas(text, &ParseOptions::default()).unwrap();
        assert_eq!(out.stream.summary.days, 2);
        assert_eq!(out.stream.summary.sensor_count, 3);
        assert_eq!(out.stream.summary.activity_count, 1);
    }
}
