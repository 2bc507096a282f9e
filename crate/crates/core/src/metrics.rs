use serde::{Deserialize, Serialize};

/// Task metric used for evaluation and early stopping. Lower is better for all.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// Fraction of misclassified targets.
    ErrorRate,
    /// `exp` of the mean cross-entropy per target token.
    Perplexity,
    /// Total edit distance between predicted and reference sequences over
    /// total reference length.
    Cer,
}

impl Metric {
    pub fn name(&self) -> &'static str {
        match self {
            Metric::ErrorRate => "error_rate",
            Metric::Perplexity => "perplexity",
            Metric::Cer => "cer",
        }
    }
}

/// Levenshtein distance with unit costs.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for (i, x) in a.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let above = row[j + 1];
            row[j + 1] = if x == y {
                diag
            } else {
                1 + diag.min(above).min(row[j])
            };
            diag = above;
        }
    }
    row[b.len()]
}

/// Corpus-level CER over `(hypothesis, reference)` pairs.
pub fn cer<T: PartialEq>(pairs: &[(Vec<T>, Vec<T>)]) -> f64 {
    let (mut errors, mut total) = (0usize, 0usize);
    for (hyp, reference) in pairs {
        errors += edit_distance(hyp, reference);
        total += reference.len();
    }
    if total == 0 {
        0.0
    } else {
        errors as f64 / total as f64
    }
}
