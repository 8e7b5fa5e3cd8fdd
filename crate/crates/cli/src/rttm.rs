//! RTTM segment files.
//!
//! Only `SPEAKER` lines are read: field 4 is the onset in seconds, field 5
//! the duration and field 8 the speaker label. Other fields are ignored.

use std::collections::BTreeMap;
use std::fmt::Write;
use std::path::Path;

use farfield::SegmentAnnotation;

use crate::error::{CliError, Result};

/// Speakers come back sorted by label.
pub fn parse_rttm(text: &str) -> Result<Vec<SegmentAnnotation>> {
    let mut speakers: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with(';') || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields[0] != "SPEAKER" {
            continue;
        }
        if fields.len() < 8 {
            return Err(CliError::input(format!(
                "RTTM line {}: expected at least 8 fields, got {}",
                i + 1,
                fields.len()
            )));
        }
        let num = |idx: usize, name: &str| -> Result<f64> {
            fields[idx]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite() && *v >= 0.0)
                .ok_or_else(|| {
                    CliError::input(format!(
                        "RTTM line {}: invalid {name} '{}'",
                        i + 1,
                        fields[idx]
                    ))
                })
        };
        let onset = num(3, "onset")?;
        let duration = num(4, "duration")?;
        let entry = speakers.entry(fields[7].to_string()).or_default();
        if duration > 0.0 {
            entry.push((onset, onset + duration));
        }
    }
    speakers
        .into_iter()
        .map(|(label, iv)| SegmentAnnotation::from_unsorted(label, iv).map_err(CliError::from))
        .collect()
}

pub fn read_rttm(path: &Path) -> Result<Vec<SegmentAnnotation>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_rttm(&text)
}

pub fn format_rttm(file_id: &str, annotations: &[SegmentAnnotation]) -> String {
    let mut out = String::new();
    for ann in annotations {
        for &(s, e) in &ann.intervals {
            let _ = writeln!(
                out,
                "SPEAKER {file_id} 1 {s:.3} {:.3} <NA> <NA> {} <NA> <NA>",
                e - s,
                ann.speaker
            );
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_merges() {
        let text = "\
;; comment
SPEAKER rec 1 1.00 0.50 <NA> <NA> bob <NA> <NA>
SPEAKER rec 1 0.20 0.30 <NA> <NA> alice <NA> <NA> extra
SPEAKER rec 1 1.40 0.20 <NA> <NA> bob <NA> <NA>
LEXEME rec 1 0.0 1.0 hi <NA> x <NA> <NA>
";
        let ann = parse_rttm(text).unwrap();
        assert_eq!(ann.len(), 2);
        assert_eq!(ann[0].speaker, "alice");
        assert_eq!(ann[0].intervals, vec![(0.2, 0.5)]);
        assert_eq!(ann[1].intervals.len(), 1);
        assert!((ann[1].intervals[0].1 - 1.6).abs() < 1e-12);
    }

    #[test]
    fn short_and_bad_lines_rejected() {
        assert!(parse_rttm("SPEAKER rec 1 0.0 1.0").is_err());
        assert!(parse_rttm("SPEAKER rec 1 x 1.0 <NA> <NA> a").is_err());
        assert!(parse_rttm("SPEAKER rec 1 0.0 -1 <NA> <NA> a").is_err());
    }

    #[test]
    fn round_trip() {
        let ann = vec![
            SegmentAnnotation::new("a", vec![(0.25, 1.5), (2.0, 3.125)]).unwrap(),
            SegmentAnnotation::new("b", vec![(1.0, 2.0)]).unwrap(),
        ];
        assert_eq!(parse_rttm(&format_rttm("rec", &ann)).unwrap(), ann);
    }
}
