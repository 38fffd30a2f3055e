use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Word onset times within the scan, plus the sentence each word belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct WordTimeline {
    onset_seconds: Vec<f64>,
    sentence_index: Vec<usize>,
}

impl WordTimeline {
    pub fn new(onset_seconds: Vec<f64>, sentence_index: Vec<usize>) -> Result<Self> {
        if onset_seconds.len() != sentence_index.len() {
            return Err(Error::dims(format!(
                "{} onsets for {} sentence indices",
                onset_seconds.len(),
                sentence_index.len()
            )));
        }
        if let Some(i) = onset_seconds.iter().position(|t| !t.is_finite()) {
            return Err(Error::invalid(format!("non-finite onset for word {i}")));
        }
        if let Some(i) = onset_seconds.windows(2).position(|w| w[1] < w[0]) {
            return Err(Error::invalid(format!("onsets decrease at word {}", i + 1)));
        }
        Ok(WordTimeline {
            onset_seconds,
            sentence_index,
        })
    }

    /// Evenly spaced onsets covering `[0, duration)`, one sentence per
    /// `words_per_sentence` words.
    pub fn uniform(words: usize, duration_seconds: f64, words_per_sentence: usize) -> Self {
        let step = duration_seconds / words.max(1) as f64;
        let per = words_per_sentence.max(1);
        WordTimeline {
            onset_seconds: (0..words).map(|w| w as f64 * step).collect(),
            sentence_index: (0..words).map(|w| w / per).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.onset_seconds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.onset_seconds.is_empty()
    }

    pub fn onsets(&self) -> &[f64] {
        &self.onset_seconds
    }

    pub fn sentence_index(&self) -> &[usize] {
        &self.sentence_index
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("word_index\tonset_seconds\tsentence_index\n");
        for (w, (t, s)) in self.onset_seconds.iter().zip(&self.sentence_index).enumerate() {
            out.push_str(&format!("{w}\t{t}\t{s}\n"));
        }
        out
    }
}

/// Parse `word_index<TAB>onset_seconds<TAB>sentence_index` rows (header required).
pub fn parse_timeline(text: &str) -> Result<WordTimeline> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let err = |detail: String| Error::Parse {
            what: "timeline",
            line: i + 1,
            detail,
        };
        let cells: Vec<&str> = line.split('\t').map(str::trim).collect();
        if cells.len() != 3 {
            return Err(err(format!("expected 3 cells, found {}", cells.len())));
        }
        let w: usize = cells[0].parse().map_err(|_| err("bad word_index".into()))?;
        let t: f64 = cells[1].parse().map_err(|_| err("bad onset".into()))?;
        let s: usize = cells[2].parse().map_err(|_| err("bad sentence_index".into()))?;
        rows.push((w, t, s));
    }
    rows.sort_by_key(|r| r.0);
    if let Some((pos, r)) = rows.iter().enumerate().find(|(p, r)| r.0 != *p) {
        return Err(Error::Parse {
            what: "timeline",
            line: 0,
            detail: format!("gap in word_index: expected {pos}, found {}", r.0),
        });
    }
    WordTimeline::new(
        rows.iter().map(|r| r.1).collect(),
        rows.iter().map(|r| r.2).collect(),
    )
}

pub fn load_timeline(path: &Path) -> Result<WordTimeline> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_timeline(&text)
}

pub fn save_timeline(timeline: &WordTimeline, path: &Path) -> Result<()> {
    fs::write(path, timeline.to_tsv()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_round_trips() {
        let t = parse_timeline("word_index\tonset_seconds\tsentence_index\n0\t0.0\t0\n1\t0.5\t0\n2\t1.0\t1\n")
            .unwrap();
        assert_eq!(t.onsets(), &[0.0, 0.5, 1.0]);
        assert_eq!(parse_timeline(&t.to_tsv()).unwrap(), t);
    }

    #[test]
    fn decreasing_onsets_rejected() {
        assert!(WordTimeline::new(vec![1.0, 0.5], vec![0, 0]).is_err());
    }

    #[test]
    fn uniform_spacing() {
        let t = WordTimeline::uniform(4, 8.0, 2);
        assert_eq!(t.onsets(), &[0.0, 2.0, 4.0, 6.0]);
        assert_eq!(t.sentence_index(), &[0, 0, 1, 1]);
    }
}
