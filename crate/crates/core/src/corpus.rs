//! One-sentence-per-line text corpora and their token vocabulary.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use crate::attack::BigramStats;
use crate::error::{Error, Result};

pub const END_MARKER: &str = "<eos>";
/// Id of [`END_MARKER`] in every corpus vocabulary.
pub const END_TOKEN: usize = 0;

/// Lowercased whitespace tokens.
pub fn tokenize(line: &str) -> Vec<String> {
    line.split_whitespace().map(str::to_lowercase).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    sentences: Vec<String>,
    sequences: Vec<Vec<usize>>,
    vocabulary: Vec<String>,
    index: HashMap<String, usize>,
}

impl Corpus {
    /// Builds a corpus from text. Blank lines are skipped; every sentence is
    /// terminated by the end marker, so at most `max_seq_len − 1` words fit.
    pub fn parse(text: &str, max_seq_len: usize, origin: &Path) -> Result<Corpus> {
        let mut vocabulary = vec![END_MARKER.to_string()];
        let mut index = HashMap::from([(END_MARKER.to_string(), END_TOKEN)]);
        let mut sentences = Vec::new();
        let mut sequences = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let words = tokenize(line);
            if words.is_empty() {
                continue;
            }
            if words.len() + 1 > max_seq_len {
                return Err(Error::Corpus {
                    path: origin.to_path_buf(),
                    line: i + 1,
                    reason: format!(
                        "sentence has {} tokens, at most {} fit before the end marker",
                        words.len(),
                        max_seq_len.saturating_sub(1)
                    ),
                });
            }
            let mut seq = Vec::with_capacity(words.len() + 1);
            for w in words {
                let next = vocabulary.len();
                let id = *index.entry(w.clone()).or_insert_with(|| {
                    vocabulary.push(w);
                    next
                });
                seq.push(id);
            }
            seq.push(END_TOKEN);
            sentences.push(line.trim().to_string());
            sequences.push(seq);
        }
        if sentences.is_empty() {
            return Err(Error::Corpus {
                path: origin.to_path_buf(),
                line: 0,
                reason: "corpus has no sentences".into(),
            });
        }
        Ok(Corpus {
            sentences,
            sequences,
            vocabulary,
            index,
        })
    }

    pub fn load(path: impl AsRef<Path>, max_seq_len: usize) -> Result<Corpus> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(PathBuf::from(path), e))?;
        Corpus::parse(&text, max_seq_len, path)
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn sentences(&self) -> &[String] {
        &self.sentences
    }

    /// Token ids per sentence, end marker included.
    pub fn sequences(&self) -> &[Vec<usize>] {
        &self.sequences
    }

    /// Token strings indexed by id.
    pub fn vocabulary(&self) -> &[String] {
        &self.vocabulary
    }

    pub fn vocab_size(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn token_id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Encodes arbitrary text with this vocabulary; `None` on unknown words.
    pub fn encode(&self, sentence: &str) -> Option<Vec<usize>> {
        let mut seq: Vec<usize> = tokenize(sentence)
            .iter()
            .map(|w| self.token_id(w))
            .collect::<Option<_>>()?;
        seq.push(END_TOKEN);
        Some(seq)
    }

    pub fn decode(&self, tokens: &[usize]) -> String {
        tokens
            .iter()
            .map(|&t| self.vocabulary.get(t).map_or("<unk>", |s| s.as_str()))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn bigram_stats(&self, floor: f64) -> BigramStats {
        BigramStats::from_sequences(self.sequences.iter().map(|s| s.as_slice()), floor)
    }
}
