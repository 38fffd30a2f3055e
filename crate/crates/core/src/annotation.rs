//! Probing-task label construction: class regrouping, sentence-to-word
//! expansion, task similarity, chance rates, and random baselines.

use rand::Rng;

use crate::data::LabelTable;
use crate::encoding::pearson;
use crate::error::{Error, Result};
use crate::seed;

pub const SENTENCE_LENGTH: &str = "SentenceLength";
pub const TREE_DEPTH: &str = "TreeDepth";
pub const TOP_CONSTITUENTS: &str = "TopConstituents";

/// The six probing tasks, in reporting order.
pub const PROBING_TASKS: [&str; 6] = [
    SENTENCE_LENGTH,
    TREE_DEPTH,
    TOP_CONSTITUENTS,
    "Tense",
    "SubjectNumber",
    "ObjectNumber",
];

/// Explicit binning for one task: class `i` covers raw values
/// `edges[i-1] < raw <= edges[i]`, the last class is open-ended.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegroupSpec {
    pub task_name: String,
    /// Smallest raw value accepted.
    pub min_raw: u64,
    /// Inclusive upper bound of every class except the last.
    pub upper_edges: Vec<u64>,
}

impl RegroupSpec {
    /// The built-in balancing bins, or `None` for tasks that pass through.
    pub fn builtin(task: &str) -> Option<Self> {
        let (min_raw, upper_edges) = match task {
            // ≤5 | 6–8 | ≥9
            SENTENCE_LENGTH => (0, vec![5, 8]),
            // 5 | 6–7 | ≥8
            TREE_DEPTH => (5, vec![5, 7]),
            // 1 | ≥2
            TOP_CONSTITUENTS => (0, vec![1]),
            _ => return None,
        };
        Some(RegroupSpec {
            task_name: task.to_string(),
            min_raw,
            upper_edges,
        })
    }

    pub fn classes(&self) -> usize {
        self.upper_edges.len() + 1
    }

    pub fn class_of(&self, raw: u64) -> Result<usize> {
        if raw < self.min_raw {
            return Err(Error::OutOfRange {
                task: self.task_name.clone(),
                value: raw as i64,
            });
        }
        Ok(self.upper_edges.partition_point(|&edge| edge < raw))
    }
}

pub fn regroup_labels(task: &str, raw: &[u64]) -> Result<Vec<usize>> {
    match RegroupSpec::builtin(task) {
        Some(spec) => raw.iter().map(|&r| spec.class_of(r)).collect(),
        None => Ok(raw.iter().map(|&r| r as usize).collect()),
    }
}

/// Broadcast one label per sentence to every word of that sentence.
pub fn expand_sentence_labels(
    sentence_labels: &[usize],
    sentence_index: &[usize],
) -> Result<Vec<usize>> {
    sentence_index
        .iter()
        .map(|&s| {
            sentence_labels
                .get(s)
                .copied()
                .ok_or(Error::SentenceIndex {
                    index: s,
                    sentences: sentence_labels.len(),
                })
        })
        .collect()
}

/// Pearson correlation between every pair of label columns. Entries involving
/// a constant column are `None`.
pub fn task_similarity_matrix(labels: &LabelTable) -> Result<Vec<Vec<Option<f64>>>> {
    if labels.words() < 2 {
        return Err(Error::invalid("task similarity needs at least 2 words"));
    }
    let cols: Vec<Vec<f64>> = (0..labels.tasks())
        .map(|t| labels.column(t).iter().map(|&v| v as f64).collect())
        .collect();
    let k = cols.len();
    let mut m = vec![vec![None; k]; k];
    for i in 0..k {
        for j in i..k {
            let r = if i == j {
                pearson(&cols[i], &cols[j])?.map(|_| 1.0)
            } else {
                pearson(&cols[i], &cols[j])?
            };
            m[i][j] = r;
            m[j][i] = r;
        }
    }
    Ok(m)
}

/// CSV with a task-name header; undefined entries are written as `NA`.
pub fn similarity_csv(task_names: &[String], m: &[Vec<Option<f64>>]) -> String {
    let mut out = String::from("task");
    for n in task_names {
        out.push(',');
        out.push_str(n);
    }
    out.push('\n');
    for (name, row) in task_names.iter().zip(m) {
        out.push_str(name);
        for v in row {
            out.push(',');
            match v {
                Some(v) => out.push_str(&format!("{v:.6}")),
                None => out.push_str("NA"),
            }
        }
        out.push('\n');
    }
    out
}

pub fn random_property_labels(n: usize, num_classes: usize, seed: u64) -> Result<Vec<usize>> {
    if num_classes < 2 {
        return Err(Error::invalid("random property needs at least 2 classes"));
    }
    let mut rng = seed::rng(seed);
    Ok((0..n).map(|_| rng.random_range(0..num_classes)).collect())
}

/// Majority-class rate in percent.
pub fn chance_rate(labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut counts = vec![0usize; k];
    for &l in labels {
        counts[l] += 1;
    }
    let majority = counts.into_iter().max().unwrap_or(0);
    100.0 * majority as f64 / labels.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sentence_length_bins() {
        assert_eq!(regroup_labels(SENTENCE_LENGTH, &[4, 5, 6, 7, 8, 9, 12]).unwrap(), vec![0, 0, 1, 1, 1, 2, 2]);
    }

    #[test]
    fn tree_depth_bins() {
        assert_eq!(regroup_labels(TREE_DEPTH, &[5, 6, 7, 8, 9]).unwrap(), vec![0, 1, 1, 2, 2]);
        let err = regroup_labels(TREE_DEPTH, &[4]).unwrap_err();
        assert!(err.to_string().contains("out of documented range"));
    }

    #[test]
    fn top_constituents_bins() {
        assert_eq!(regroup_labels(TOP_CONSTITUENTS, &[1, 3, 2]).unwrap(), vec![0, 1, 1]);
    }

    #[test]
    fn other_tasks_pass_through() {
        assert_eq!(regroup_labels("Tense", &[1, 0, 1]).unwrap(), vec![1, 0, 1]);
    }

    #[test]
    fn expand_sentences() {
        assert_eq!(expand_sentence_labels(&[1], &[0, 0, 0]).unwrap(), vec![1, 1, 1]);
        assert_eq!(expand_sentence_labels(&[0, 1], &[0, 0, 1]).unwrap(), vec![0, 0, 1]);
        assert!(expand_sentence_labels(&[0], &[0, 2]).is_err());
    }

    #[test]
    fn similarity_of_identical_and_complement_columns() {
        let a = vec![0, 1, 1, 0, 1];
        let not_a: Vec<usize> = a.iter().map(|v| 1 - v).collect();
        let t = LabelTable::new(
            vec!["a".into(), "b".into(), "c".into()],
            vec![a.clone(), a, not_a],
        )
        .unwrap();
        let m = task_similarity_matrix(&t).unwrap();
        assert!((m[0][1].unwrap() - 1.0).abs() < 1e-12);
        assert!((m[0][2].unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(m[1][1], Some(1.0));
    }

    #[test]
    fn constant_column_is_undefined() {
        let t = LabelTable::new(vec!["a".into(), "z".into()], vec![vec![0, 1, 0], vec![0, 0, 0]])
            .unwrap();
        let m = task_similarity_matrix(&t).unwrap();
        assert_eq!(m[0][1], None);
        assert_eq!(m[1][1], None);
        assert_eq!(m[0][0], Some(1.0));
        let csv = similarity_csv(t.task_names(), &m);
        assert_eq!(csv.lines().next(), Some("task,a,z"));
        assert!(csv.contains("NA"));
    }

    #[test]
    fn random_labels_are_deterministic() {
        assert_eq!(
            random_property_labels(4, 2, 7).unwrap(),
            random_property_labels(4, 2, 7).unwrap()
        );
        assert!(random_property_labels(4, 1, 7).is_err());
    }

    #[test]
    fn random_labels_are_balanced() {
        // binomial: sd of the class-0 frequency is sqrt(0.25 / n)
        let n = 10_000;
        let l = random_property_labels(n, 2, 11).unwrap();
        let freq = l.iter().filter(|&&c| c == 0).count() as f64 / n as f64;
        assert!((freq - 0.5).abs() <= 3.0 * (0.25 / n as f64).sqrt(), "{freq}");
    }

    #[test]
    fn random_labels_pass_chi_square() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        for (k, seed) in [(2usize, 1u64), (3, 2), (5, 3)] {
            let n = 10_000;
            let l = random_property_labels(n, k, seed).unwrap();
            let mut counts = vec![0f64; k];
            l.iter().for_each(|&c| counts[c] += 1.0);
            let e = n as f64 / k as f64;
            let stat: f64 = counts.iter().map(|o| (o - e).powi(2) / e).sum();
            let p = 1.0 - ChiSquared::new((k - 1) as f64).unwrap().cdf(stat);
            assert!(p > 0.01, "k={k} p={p}");
        }
    }

    #[test]
    fn chance_rates() {
        assert!((chance_rate(&[0, 0, 1]) - 66.666_666).abs() < 1e-4);
        assert_eq!(chance_rate(&[0, 1, 2, 0, 1, 2]), 100.0 / 3.0);
        // 5482 of 8267 words in the majority class rounds to 66.31
        let mut tense = vec![0usize; 5482];
        tense.extend(vec![1usize; 8267 - 5482]);
        assert_eq!(format!("{:.2}", chance_rate(&tense)), "66.31");
    }

    proptest! {
        #[test]
        fn regroup_is_monotone(a in 5u64..40, b in 5u64..40) {
            let (lo, hi) = (a.min(b), a.max(b));
            for task in [SENTENCE_LENGTH, TREE_DEPTH] {
                let c = regroup_labels(task, &[lo, hi]).unwrap();
                prop_assert!(c[0] <= c[1]);
            }
        }

        #[test]
        fn chance_rate_in_range(labels in proptest::collection::vec(0usize..4, 1..50)) {
            let c = chance_rate(&labels);
            prop_assert!(c > 0.0 && c <= 100.0);
        }

        #[test]
        fn similarity_is_symmetric(cols in proptest::collection::vec(proptest::collection::vec(0usize..3, 12), 2..5)) {
            // make each column use dense classes by appending 0,1,2
            let cols: Vec<Vec<usize>> = cols.into_iter().map(|mut c| { c.extend([0, 1, 2]); c }).collect();
            let names = (0..cols.len()).map(|i| format!("t{i}")).collect();
            let t = LabelTable::new(names, cols).unwrap();
            let m = task_similarity_matrix(&t).unwrap();
            for i in 0..m.len() {
                prop_assert_eq!(m[i][i], Some(1.0));
                for j in 0..m.len() {
                    match (m[i][j], m[j][i]) {
                        (Some(a), Some(b)) => prop_assert!((a - b).abs() <= 1e-12),
                        (a, b) => prop_assert_eq!(a, b),
                    }
                }
            }
        }
    }
}
