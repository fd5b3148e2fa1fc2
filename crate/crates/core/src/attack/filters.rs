//! Cheap predicates that prune beam extensions before the span check.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::linalg::{axpy, cosine};
use crate::model::Model;

use super::WordBag;

/// A yes/no judgement on a whole token sequence. Any implementation can
/// stand in for the grammar check.
pub trait SequencePredicate: Send + Sync {
    fn accept(&self, sequence: &[usize]) -> bool;
}

/// Predicate that accepts everything.
#[derive(Clone, Copy, Debug, Default)]
pub struct AcceptAll;

impl SequencePredicate for AcceptAll {
    fn accept(&self, _: &[usize]) -> bool {
        true
    }
}

/// Rejects a token equal to the one just before it.
pub fn filter_eicw(sequence: &[usize], next_token: usize) -> bool {
    sequence.last() != Some(&next_token)
}

/// Bigram counts over public text. A sequence is admissible when every
/// adjacent pair has add-one-smoothed count strictly above `floor`.
#[derive(Clone, Debug, Default)]
pub struct BigramStats {
    counts: HashMap<(usize, usize), u64>,
    floor: f64,
}

impl BigramStats {
    pub fn from_sequences<'a, I>(sequences: I, floor: f64) -> Self
    where
        I: IntoIterator<Item = &'a [usize]>,
    {
        let mut counts = HashMap::new();
        for s in sequences {
            for w in s.windows(2) {
                *counts.entry((w[0], w[1])).or_insert(0) += 1;
            }
        }
        BigramStats { counts, floor }
    }

    pub fn count(&self, a: usize, b: usize) -> u64 {
        self.counts.get(&(a, b)).copied().unwrap_or(0)
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    pub fn with_floor(mut self, floor: f64) -> Self {
        self.floor = floor;
        self
    }
}

impl SequencePredicate for BigramStats {
    fn accept(&self, sequence: &[usize]) -> bool {
        sequence
            .windows(2)
            .all(|w| (self.count(w[0], w[1]) + 1) as f64 > self.floor)
    }
}

/// Mean-embedding cosine test against the whole bag.
#[derive(Clone, Debug)]
pub struct SemanticFilter {
    bag_mean: Vec<f64>,
    threshold: f64,
}

impl SemanticFilter {
    pub fn new(model: &Model, bag: &WordBag, threshold: f64) -> Result<Self> {
        if bag.is_empty() {
            return Err(Error::Empty("word bag"));
        }
        let bag_mean = mean_embedding(model, bag.tokens.iter().copied())?;
        Ok(SemanticFilter {
            bag_mean,
            threshold,
        })
    }

    pub fn accept(&self, model: &Model, sequence: &[usize]) -> bool {
        match mean_embedding(model, sequence.iter().copied()) {
            Ok(m) => cosine(&m, &self.bag_mean) >= self.threshold,
            Err(_) => false,
        }
    }
}

fn mean_embedding(model: &Model, tokens: impl Iterator<Item = usize>) -> Result<Vec<f64>> {
    let table = model.embedding().table();
    let mut sum = vec![0.0; table.cols()];
    let mut n = 0usize;
    for t in tokens {
        if t >= table.rows() {
            return Err(Error::OutOfRange {
                what: "token id",
                value: t,
                limit: table.rows(),
            });
        }
        axpy(1.0, table.row(t), &mut sum);
        n += 1;
    }
    if n == 0 {
        return Err(Error::Empty("token sequence"));
    }
    sum.iter_mut().for_each(|x| *x /= n as f64);
    Ok(sum)
}

/// Cosine between the mean frozen embedding of `sequence` and of the bag is
/// at least `threshold`.
pub fn filter_semantic(
    sequence: &[usize],
    bag: &WordBag,
    model: &Model,
    threshold: f64,
) -> Result<bool> {
    Ok(SemanticFilter::new(model, bag, threshold)?.accept(model, sequence))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    #[test]
    fn eicw_cases() {
        assert!(!filter_eicw(&[3], 3));
        assert!(filter_eicw(&[3], 4));
        assert!(filter_eicw(&[], 3));
    }

    #[test]
    fn grammar_cases() {
        let corpus = [vec![1, 2, 3], vec![2, 3, 0]];
        let stats = BigramStats::from_sequences(corpus.iter().map(|s| s.as_slice()), 1.0);
        assert_eq!(stats.count(2, 3), 2);
        assert!(stats.accept(&[1, 2, 3, 0]));
        assert!(!stats.accept(&[1, 3]));
        assert!(stats.accept(&[7]));
        let lax = stats.clone().with_floor(0.5);
        assert!(lax.accept(&[1, 3]));
        assert!(AcceptAll.accept(&[1, 3]));
    }

    #[test]
    fn semantic_cases() {
        let model = Model::new(ModelConfig::default()).unwrap();
        let bag = WordBag {
            tokens: [4, 9, 11].into_iter().collect(),
            ..Default::default()
        };
        assert!(filter_semantic(&[4, 9, 11], &bag, &model, 0.2).unwrap());
        assert!(filter_semantic(&[11, 4, 9], &bag, &model, 0.999_999).unwrap());
        assert!(!filter_semantic(&[4], &bag, &model, 1.1).unwrap());
        assert!(filter_semantic(&[4], &WordBag::default(), &model, 0.2).is_err());
    }
}
