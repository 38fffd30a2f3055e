//! Per-word probing-task labels and their TSV forms.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Per-word integer labels for each probing task. Classes are dense:
/// every class `0..class_counts[t]` occurs at least once.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelTable {
    task_names: Vec<String>,
    columns: Vec<Vec<usize>>,
    class_counts: Vec<usize>,
}

impl LabelTable {
    /// Build from per-task columns; class counts are inferred as `max + 1`.
    pub fn new(task_names: Vec<String>, columns: Vec<Vec<usize>>) -> Result<Self> {
        if task_names.len() != columns.len() {
            return Err(Error::dims(format!(
                "{} task names for {} label columns",
                task_names.len(),
                columns.len()
            )));
        }
        let words = columns.first().map_or(0, Vec::len);
        let mut class_counts = Vec::with_capacity(columns.len());
        for (name, col) in task_names.iter().zip(&columns) {
            if col.len() != words {
                return Err(Error::dims(format!(
                    "task {name} has {} labels, expected {words}",
                    col.len()
                )));
            }
            let k = col.iter().max().map_or(0, |m| m + 1);
            let mut seen = vec![false; k];
            for &c in col {
                seen[c] = true;
            }
            if let Some(class) = seen.iter().position(|s| !s) {
                return Err(Error::UnusedClass {
                    task: name.clone(),
                    class,
                });
            }
            class_counts.push(k);
        }
        Ok(LabelTable {
            task_names,
            columns,
            class_counts,
        })
    }

    pub fn words(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn tasks(&self) -> usize {
        self.columns.len()
    }

    pub fn task_names(&self) -> &[String] {
        &self.task_names
    }

    pub fn class_counts(&self) -> &[usize] {
        &self.class_counts
    }

    pub fn column(&self, task: usize) -> &[usize] {
        &self.columns[task]
    }

    pub fn task_index(&self, name: &str) -> Option<usize> {
        self.task_names.iter().position(|t| t == name)
    }

    pub fn column_by_name(&self, name: &str) -> Result<&[usize]> {
        self.task_index(name)
            .map(|t| self.column(t))
            .ok_or_else(|| Error::invalid(format!("unknown task {name}")))
    }

    /// Serialize as the labels TSV (`word_index` then one column per task).
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("word_index");
        for name in &self.task_names {
            out.push('\t');
            out.push_str(name);
        }
        out.push('\n');
        for w in 0..self.words() {
            out.push_str(&w.to_string());
            for col in &self.columns {
                out.push('\t');
                out.push_str(&col[w].to_string());
            }
            out.push('\n');
        }
        out
    }
}

pub fn load_labels(path: &Path) -> Result<LabelTable> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_labels(&text)
}

pub fn save_labels(table: &LabelTable, path: &Path) -> Result<()> {
    fs::write(path, table.to_tsv()).map_err(|e| Error::io(path, e))
}

pub fn parse_labels(text: &str) -> Result<LabelTable> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or(Error::Parse {
        what: "labels",
        line: 1,
        detail: "empty file".into(),
    })?;
    let mut fields = header.split('\t');
    if fields.next().map(str::trim) != Some("word_index") {
        return Err(Error::Parse {
            what: "labels",
            line: 1,
            detail: "first header column must be word_index".into(),
        });
    }
    let task_names: Vec<String> = fields.map(|f| f.trim().to_string()).collect();
    if task_names.is_empty() {
        return Err(Error::NoTasks);
    }

    let mut rows: Vec<(usize, Vec<usize>)> = Vec::new();
    for (i, line) in lines {
        let cells: Vec<&str> = line.split('\t').map(str::trim).collect();
        if cells.len() != task_names.len() + 1 {
            return Err(Error::Parse {
                what: "labels",
                line: i + 1,
                detail: format!("expected {} cells, found {}", task_names.len() + 1, cells.len()),
            });
        }
        let parse = |s: &str| -> Result<usize> {
            let v: i64 = s.parse().map_err(|_| Error::Parse {
                what: "labels",
                line: i + 1,
                detail: format!("non-integer cell {s:?}"),
            })?;
            usize::try_from(v).map_err(|_| Error::Parse {
                what: "labels",
                line: i + 1,
                detail: format!("negative label {v}"),
            })
        };
        let index = parse(cells[0])?;
        let labels = cells[1..].iter().map(|c| parse(c)).collect::<Result<Vec<_>>>()?;
        rows.push((index, labels));
    }
    rows.sort_by_key(|(w, _)| *w);
    for (expected, (w, _)) in rows.iter().enumerate() {
        if *w != expected {
            return Err(Error::Parse {
                what: "labels",
                line: 0,
                detail: format!("gap in word_index: expected {expected}, found {w}"),
            });
        }
    }
    let mut columns = vec![Vec::with_capacity(rows.len()); task_names.len()];
    for (_, labels) in rows {
        for (col, l) in columns.iter_mut().zip(labels) {
            col.push(l);
        }
    }
    LabelTable::new(task_names, columns)
}

/// One labeled sentence from a SentEval-style probing corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentEvalRow {
    pub split: String,
    pub label: usize,
    pub sentence: String,
}

/// A probing corpus in `split<TAB>label<TAB>sentence` form. String labels are
/// mapped to dense integers in lexicographic order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentEvalCorpus {
    pub rows: Vec<SentEvalRow>,
    pub class_names: Vec<String>,
}

pub fn parse_senteval(text: &str) -> Result<SentEvalCorpus> {
    let mut raw = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.splitn(3, '\t');
        let (Some(split), Some(label), Some(sentence)) = (parts.next(), parts.next(), parts.next())
        else {
            return Err(Error::Parse {
                what: "senteval",
                line: i + 1,
                detail: "expected split<TAB>label<TAB>sentence".into(),
            });
        };
        raw.push((split.to_string(), label.to_string(), sentence.to_string()));
    }
    let class_names: Vec<String> = raw
        .iter()
        .map(|(_, l, _)| l.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let rows = raw
        .into_iter()
        .map(|(split, label, sentence)| SentEvalRow {
            split,
            label: class_names.binary_search(&label).expect("label collected above"),
            sentence,
        })
        .collect();
    Ok(SentEvalCorpus { rows, class_names })
}

pub fn load_senteval(path: &Path) -> Result<SentEvalCorpus> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_senteval(&text)
}
