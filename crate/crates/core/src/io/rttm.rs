use std::fmt::Write as _;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RttmTurn {
    pub session: String,
    pub start: f64,
    pub duration: f64,
    pub speaker: String,
}

impl RttmTurn {
    pub fn end(&self) -> f64 {
        self.start + self.duration
    }
}

/// One `SPEAKER` line per turn, times with two decimals.
pub fn format_rttm(turns: &[RttmTurn]) -> String {
    let mut out = String::new();
    for t in turns {
        writeln!(out, "SPEAKER {} 1 {:.2} {:.2} <NA> <NA> {} <NA> <NA>", t.session, t.start, t.duration, t.speaker)
            .expect("writing to a String");
    }
    out
}

/// Reads `SPEAKER` lines; blank lines and `;;` comments are skipped.
pub fn parse_rttm(text: &str) -> Result<Vec<RttmTurn>> {
    let mut turns = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with(";;") {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() < 8 {
            return Err(Error::Format(format!("rttm line {}: expected at least 8 fields", no + 1)));
        }
        if f[0] != "SPEAKER" {
            continue;
        }
        let num = |s: &str| {
            s.parse::<f64>().map_err(|e| Error::Format(format!("rttm line {}: {s:?}: {e}", no + 1)))
        };
        let (start, duration) = (num(f[3])?, num(f[4])?);
        if !(start >= 0.0 && duration >= 0.0) {
            return Err(Error::Format(format!("rttm line {}: negative time", no + 1)));
        }
        turns.push(RttmTurn { session: f[1].to_owned(), start, duration, speaker: f[7].to_owned() });
    }
    Ok(turns)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_format() {
        let t = RttmTurn { session: "s1".into(), start: 1.234, duration: 0.5, speaker: "spk0".into() };
        assert_eq!(format_rttm(&[t]), "SPEAKER s1 1 1.23 0.50 <NA> <NA> spk0 <NA> <NA>\n");
    }

    #[test]
    fn parse_round_trip() {
        let turns = vec![
            RttmTurn { session: "m".into(), start: 0.0, duration: 2.5, speaker: "a".into() },
            RttmTurn { session: "m".into(), start: 3.25, duration: 1.0, speaker: "b".into() },
        ];
        let text = format!(";; comment\n\n{}", format_rttm(&turns));
        assert_eq!(parse_rttm(&text).unwrap(), turns);
        assert!(parse_rttm("SPEAKER m 1 x 1 <NA> <NA> a").is_err());
        assert!(parse_rttm("SPEAKER m 1").is_err());
    }
}
