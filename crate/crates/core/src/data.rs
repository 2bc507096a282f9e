//! Toy datasets: character-level text and synthetic sequence classification.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Batch, TaskKind};
use crate::rng::{purpose, Rng};

/// Character vocabulary built from training text. Ids `0..len()` are known
/// characters in sorted order; id `len()` is the reserved unknown token.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "VocabRepr", into = "VocabRepr")]
pub struct Vocabulary {
    chars: Vec<char>,
    lowercase: bool,
    index: BTreeMap<char, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabRepr {
    chars: String,
    lowercase: bool,
}

impl From<VocabRepr> for Vocabulary {
    fn from(r: VocabRepr) -> Self {
        Vocabulary::from_chars(r.chars.chars().collect(), r.lowercase)
    }
}

impl From<Vocabulary> for VocabRepr {
    fn from(v: Vocabulary) -> Self {
        VocabRepr {
            chars: v.chars.into_iter().collect(),
            lowercase: v.lowercase,
        }
    }
}

impl Vocabulary {
    pub fn from_text(text: &str, lowercase: bool) -> Self {
        let mut chars: Vec<char> = normalize(text, lowercase).chars().collect();
        chars.sort_unstable();
        chars.dedup();
        Self::from_chars(chars, lowercase)
    }

    fn from_chars(chars: Vec<char>, lowercase: bool) -> Self {
        let index = chars.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        Self { chars, lowercase, index }
    }

    /// Number of known characters, excluding the unknown token.
    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    pub fn unknown_id(&self) -> usize {
        self.chars.len()
    }

    /// Width of the id space including the unknown token.
    pub fn num_tokens(&self) -> usize {
        self.chars.len() + 1
    }

    pub fn lowercase(&self) -> bool {
        self.lowercase
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        normalize(text, self.lowercase)
            .chars()
            .map(|c| self.index.get(&c).copied().unwrap_or(self.unknown_id()))
            .collect()
    }

    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter().map(|&i| self.chars.get(i).copied().unwrap_or('\u{FFFD}')).collect()
    }
}

fn normalize(text: &str, lowercase: bool) -> String {
    let text = text.replace("\r\n", "\n");
    if lowercase {
        text.to_lowercase()
    } else {
        text
    }
}

#[derive(Clone, Debug)]
pub enum VocabPolicy {
    /// Build the vocabulary from this text.
    Fresh { lowercase: bool },
    /// Encode with an existing vocabulary; unseen characters map to unknown.
    Fixed(Vocabulary),
}

fn read_text(path: &Path) -> Result<String> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if text.is_empty() {
        return Err(Error::config(format!("corpus {} is empty", path.display())));
    }
    Ok(text)
}

/// Reads a UTF-8 file and tokenises it character by character.
pub fn load_char_corpus(path: &Path, policy: &VocabPolicy) -> Result<(Vec<usize>, Vocabulary)> {
    let text = read_text(path)?;
    let vocab = match policy {
        VocabPolicy::Fresh { lowercase } => Vocabulary::from_text(&text, *lowercase),
        VocabPolicy::Fixed(v) => v.clone(),
    };
    Ok((vocab.encode(&text), vocab))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sample {
    pub tokens: Vec<usize>,
    /// Next tokens (language modelling) or a single class label.
    pub target: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    task: TaskKind,
    steps: usize,
    input_tokens: usize,
    classes: usize,
    samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(task: TaskKind, steps: usize, input_tokens: usize, classes: usize, samples: Vec<Sample>) -> Result<Self> {
        let target_len = match task {
            TaskKind::CharLm => steps,
            TaskKind::SeqClassify => 1,
        };
        for (i, s) in samples.iter().enumerate() {
            if s.tokens.len() != steps || s.target.len() != target_len {
                return Err(Error::config(format!("sample {i} has the wrong length")));
            }
            if s.tokens.iter().any(|&t| t >= input_tokens) || s.target.iter().any(|&t| t >= classes) {
                return Err(Error::config(format!("sample {i} has an out-of-range token")));
            }
        }
        Ok(Self {
            task,
            steps,
            input_tokens,
            classes,
            samples,
        })
    }

    pub fn task(&self) -> TaskKind {
        self.task
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn input_tokens(&self) -> usize {
        self.input_tokens
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            ..self.clone_empty()
        }
    }

    fn clone_empty(&self) -> Dataset {
        Dataset {
            task: self.task,
            steps: self.steps,
            input_tokens: self.input_tokens,
            classes: self.classes,
            samples: Vec::new(),
        }
    }

    /// Stacks the given samples into a time-major batch.
    pub fn batch(&self, indices: &[usize]) -> Batch {
        let b = indices.len();
        let mut tokens = vec![0; self.steps * b];
        let mut targets = vec![0; if self.task == TaskKind::CharLm { self.steps * b } else { b }];
        for (col, &i) in indices.iter().enumerate() {
            let s = &self.samples[i];
            for t in 0..self.steps {
                tokens[t * b + col] = s.tokens[t];
            }
            match self.task {
                TaskKind::CharLm => {
                    for t in 0..self.steps {
                        targets[t * b + col] = s.target[t];
                    }
                }
                TaskKind::SeqClassify => targets[col] = s.target[0],
            }
        }
        Batch {
            tokens,
            targets,
            steps: self.steps,
            batch: b,
        }
    }
}

/// Cuts a token stream into non-overlapping windows of `steps + 1` tokens,
/// sharing boundary tokens: window `i` predicts tokens `i*steps+1 ..= (i+1)*steps`.
pub fn lm_windows(tokens: &[usize], steps: usize) -> Vec<Sample> {
    if steps == 0 || tokens.len() <= steps {
        return Vec::new();
    }
    (0..(tokens.len() - 1) / steps)
        .map(|i| {
            let w = &tokens[i * steps..i * steps + steps + 1];
            Sample {
                tokens: w[..steps].to_vec(),
                target: w[1..].to_vec(),
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifyRule {
    /// Label is `(first + last) mod classes`.
    FirstPlusLast,
    /// Binary: does the last token equal the first? Half of the samples do.
    FirstEqualsLast,
}

/// Generates `count` labelled sequences whose label depends on the first and
/// last tokens, so the recurrent state has to carry information across the
/// whole sequence.
pub fn generate_classification(
    count: usize,
    steps: usize,
    vocab: usize,
    classes: usize,
    rule: ClassifyRule,
    rng: &Rng,
) -> Result<Dataset> {
    if steps < 2 || vocab < 2 {
        return Err(Error::config("classification sequences need steps >= 2 and vocab >= 2"));
    }
    let classes = match rule {
        ClassifyRule::FirstPlusLast => classes,
        ClassifyRule::FirstEqualsLast => 2,
    };
    if classes < 2 {
        return Err(Error::config("classification needs at least 2 classes"));
    }
    let mut s = rng.substream(&[purpose::DATA]).stream();
    let samples = (0..count)
        .map(|i| {
            let mut tokens: Vec<usize> = (0..steps).map(|_| s.below(vocab)).collect();
            let label = match rule {
                ClassifyRule::FirstPlusLast => (tokens[0] + tokens[steps - 1]) % classes,
                ClassifyRule::FirstEqualsLast => {
                    if i % 2 == 0 {
                        tokens[steps - 1] = tokens[0];
                    } else if tokens[steps - 1] == tokens[0] {
                        tokens[steps - 1] = (tokens[0] + 1 + s.below(vocab - 1)) % vocab;
                    }
                    usize::from(tokens[steps - 1] == tokens[0])
                }
            };
            Sample {
                tokens,
                target: vec![label],
            }
        })
        .collect();
    Dataset::new(TaskKind::SeqClassify, steps, vocab, classes, samples)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    CharLm {
        path: PathBuf,
        steps: usize,
        #[serde(default)]
        lowercase: bool,
        /// Use only this many leading characters of the file.
        #[serde(default)]
        max_chars: Option<usize>,
    },
    SeqClassify {
        steps: usize,
        vocab: usize,
        classes: usize,
        rule: ClassifyRule,
        samples: usize,
    },
}

/// Where the data comes from and how it is divided. The training pool takes
/// the first `train` fraction, dev and test follow; for text the split is by
/// contiguous character ranges so the vocabulary sees training text only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub source: DatasetSource,
    pub train: f64,
    pub dev: f64,
    pub test: f64,
    pub seed: u64,
}

impl DatasetSpec {
    pub fn task(&self) -> TaskKind {
        match self.source {
            DatasetSource::CharLm { .. } => TaskKind::CharLm,
            DatasetSource::SeqClassify { .. } => TaskKind::SeqClassify,
        }
    }

    fn validate(&self) -> Result<()> {
        let fr = [self.train, self.dev, self.test];
        if fr.iter().any(|&f| !(f > 0.0)) || fr.iter().sum::<f64>() > 1.0 + 1e-12 {
            return Err(Error::config(format!(
                "split fractions {fr:?} must be positive and sum to at most 1"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Corpus {
    pub pool: Dataset,
    pub dev: Dataset,
    pub test: Dataset,
    pub vocab: Option<Vocabulary>,
}

impl Corpus {
    /// Width of the model's input id space.
    pub fn input_tokens(&self) -> usize {
        self.pool.input_tokens()
    }

    /// Width of the model's output head.
    pub fn classes(&self) -> usize {
        self.pool.classes()
    }
}

fn frac_len(total: usize, f: f64) -> usize {
    (total as f64 * f).floor() as usize
}

pub fn build_corpus(spec: &DatasetSpec) -> Result<Corpus> {
    spec.validate()?;
    match &spec.source {
        DatasetSource::CharLm {
            path,
            steps,
            lowercase,
            max_chars,
        } => {
            let text = read_text(path)?;
            let chars: Vec<char> = normalize(&text, *lowercase).chars().collect();
            let chars = &chars[..max_chars.map_or(chars.len(), |m| m.min(chars.len()))];
            let n_train = frac_len(chars.len(), spec.train);
            let n_dev = frac_len(chars.len(), spec.dev);
            let n_test = frac_len(chars.len(), spec.test);
            let piece = |a: usize, b: usize| chars[a..b].iter().collect::<String>();
            let train_text = piece(0, n_train);
            let vocab = Vocabulary::from_text(&train_text, *lowercase);
            let make = |text: &str| {
                Dataset::new(
                    TaskKind::CharLm,
                    *steps,
                    vocab.num_tokens(),
                    vocab.num_tokens(),
                    lm_windows(&vocab.encode(text), *steps),
                )
            };
            let pool = make(&train_text)?;
            let dev = make(&piece(n_train, n_train + n_dev))?;
            let test = make(&piece(n_train + n_dev, n_train + n_dev + n_test))?;
            if pool.is_empty() || dev.is_empty() || test.is_empty() {
                return Err(Error::config(format!(
                    "corpus {} too short for windows of {steps} characters",
                    path.display()
                )));
            }
            Ok(Corpus {
                pool,
                dev,
                test,
                vocab: Some(vocab),
            })
        }
        DatasetSource::SeqClassify {
            steps,
            vocab,
            classes,
            rule,
            samples,
        } => {
            let all = generate_classification(*samples, *steps, *vocab, *classes, *rule, &Rng::new(spec.seed))?;
            let n_train = frac_len(*samples, spec.train);
            let n_dev = frac_len(*samples, spec.dev);
            let n_test = frac_len(*samples, spec.test);
            let range = |a: usize, b: usize| all.subset(&(a..b).collect::<Vec<_>>());
            let corpus = Corpus {
                pool: range(0, n_train),
                dev: range(n_train, n_train + n_dev),
                test: range(n_train + n_dev, n_train + n_dev + n_test),
                vocab: None,
            };
            if corpus.pool.is_empty() || corpus.dev.is_empty() || corpus.test.is_empty() {
                return Err(Error::config(format!("{samples} samples leave an empty split")));
            }
            Ok(corpus)
        }
    }
}

/// Path of the bundled public-domain corpus (Milton, first ~200 KB).
pub fn bundled_corpus_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join("paradise_lost.txt")
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn temp_file(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn small_corpus_counts() {
        let f = temp_file("ab\nab");
        let (ids, vocab) = load_char_corpus(f.path(), &VocabPolicy::Fresh { lowercase: false }).unwrap();
        assert_eq!(ids.len(), 5);
        assert_eq!(vocab.len(), 3);
        assert_eq!(vocab.decode(&ids), "ab\nab");
    }

    #[test]
    fn unseen_character_maps_to_unknown() {
        let vocab = Vocabulary::from_text("abc", false);
        let f = temp_file("abz");
        let (ids, _) = load_char_corpus(f.path(), &VocabPolicy::Fixed(vocab.clone())).unwrap();
        assert_eq!(ids, vec![0, 1, vocab.unknown_id()]);
    }

    #[test]
    fn loading_is_deterministic() {
        let f = temp_file("the quick brown fox");
        let a = load_char_corpus(f.path(), &VocabPolicy::Fresh { lowercase: true }).unwrap();
        let b = load_char_corpus(f.path(), &VocabPolicy::Fresh { lowercase: true }).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_and_missing_files_fail() {
        let f = temp_file("");
        assert!(matches!(
            load_char_corpus(f.path(), &VocabPolicy::Fresh { lowercase: false }),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            load_char_corpus(Path::new("/nonexistent/corpus.txt"), &VocabPolicy::Fresh { lowercase: false }),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn windows_shift_targets_by_one() {
        let w = lm_windows(&[0, 1, 2, 3, 4, 5, 6], 3);
        assert_eq!(w.len(), 2);
        assert_eq!(w[0].tokens, vec![0, 1, 2]);
        assert_eq!(w[0].target, vec![1, 2, 3]);
        assert_eq!(w[1].tokens, vec![3, 4, 5]);
        assert_eq!(w[1].target, vec![4, 5, 6]);
    }

    #[test]
    fn batch_is_time_major() {
        let ds = Dataset::new(
            TaskKind::CharLm,
            2,
            10,
            10,
            vec![
                Sample { tokens: vec![1, 2], target: vec![2, 3] },
                Sample { tokens: vec![4, 5], target: vec![5, 6] },
            ],
        )
        .unwrap();
        let b = ds.batch(&[0, 1]);
        assert_eq!(b.tokens, vec![1, 4, 2, 5]);
        assert_eq!(b.targets, vec![2, 5, 3, 6]);
    }

    #[test]
    fn classification_labels_follow_rule() {
        let ds = generate_classification(200, 6, 5, 5, ClassifyRule::FirstPlusLast, &Rng::new(1)).unwrap();
        for s in ds.samples() {
            assert_eq!(s.target[0], (s.tokens[0] + s.tokens[5]) % 5);
        }
        let ds = generate_classification(200, 6, 5, 0, ClassifyRule::FirstEqualsLast, &Rng::new(1)).unwrap();
        let positives = ds.samples().iter().filter(|s| s.target[0] == 1).count();
        assert_eq!(positives, 100);
    }

    #[test]
    fn bundled_corpus_builds() {
        let spec = DatasetSpec {
            source: DatasetSource::CharLm {
                path: bundled_corpus_path(),
                steps: 16,
                lowercase: true,
                max_chars: Some(20_000),
            },
            train: 0.8,
            dev: 0.1,
            test: 0.1,
            seed: 0,
        };
        let c = build_corpus(&spec).unwrap();
        assert_eq!(c.pool.len(), (16_000 - 1) / 16);
        assert!(c.vocab.as_ref().unwrap().len() < 45);
    }
}
