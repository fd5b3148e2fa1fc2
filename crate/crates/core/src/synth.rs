//! Seeded synthetic batches and per-run random streams.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::END_TOKEN;
use crate::error::{Error, Result};

/// Stable 64-bit mix of a tuple of integers.
pub fn stream_id(parts: &[u64]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &p in parts {
        h ^= p;
        h = h.wrapping_mul(0x100_0000_01b3);
        h ^= h >> 29;
    }
    h
}

/// ChaCha stream `stream_id(parts)` under `seed`.
pub fn derive_rng(seed: u64, parts: &[u64]) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id(parts));
    rng
}

/// Draws sentences of distinct word tokens `1..vocab_size`, each closed by
/// the end token.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SentenceSampler {
    pub vocab_size: usize,
    pub min_words: usize,
    pub max_words: usize,
    /// Draw every word of a batch without replacement, not only within a
    /// sentence.
    #[serde(default)]
    pub distinct_across_batch: bool,
}

impl SentenceSampler {
    pub fn validate(&self) -> Result<()> {
        if self.min_words == 0 || self.min_words > self.max_words {
            return Err(Error::InvalidConfig(format!(
                "need 1 <= min_words <= max_words, got {}..{}",
                self.min_words, self.max_words
            )));
        }
        if self.max_words >= self.vocab_size {
            return Err(Error::InvalidConfig(format!(
                "{} words per sentence need more than {} vocabulary entries",
                self.max_words, self.vocab_size
            )));
        }
        Ok(())
    }

    pub fn sentence(&self, rng: &mut impl Rng) -> Vec<usize> {
        let len = rng.random_range(self.min_words..=self.max_words);
        let mut s: Vec<usize> = sample(rng, self.vocab_size - 1, len)
            .into_iter()
            .map(|i| i + 1)
            .collect();
        s.push(END_TOKEN);
        s
    }

    /// `batch_size` pairwise different sentences.
    pub fn batch(&self, rng: &mut impl Rng, batch_size: usize) -> Result<Vec<Vec<usize>>> {
        self.validate()?;
        if self.distinct_across_batch {
            return self.distinct_batch(rng, batch_size);
        }
        let mut out: Vec<Vec<usize>> = Vec::with_capacity(batch_size);
        let mut attempts = 0usize;
        while out.len() < batch_size {
            let s = self.sentence(rng);
            attempts += 1;
            if !out.contains(&s) {
                out.push(s);
            } else if attempts > 100 * batch_size + 100 {
                return Err(Error::InvalidConfig(
                    "cannot draw enough distinct sentences".into(),
                ));
            }
        }
        Ok(out)
    }
}

impl SentenceSampler {
    fn distinct_batch(&self, rng: &mut impl Rng, batch_size: usize) -> Result<Vec<Vec<usize>>> {
        let lengths: Vec<usize> = (0..batch_size)
            .map(|_| rng.random_range(self.min_words..=self.max_words))
            .collect();
        let total: usize = lengths.iter().sum();
        if total > self.vocab_size - 1 {
            return Err(Error::InvalidConfig(format!(
                "{total} distinct words requested from {} vocabulary words",
                self.vocab_size - 1
            )));
        }
        let mut words = sample(rng, self.vocab_size - 1, total)
            .into_iter()
            .map(|i| i + 1);
        Ok(lengths
            .iter()
            .map(|&n| {
                let mut s: Vec<usize> = words.by_ref().take(n).collect();
                s.push(END_TOKEN);
                s
            })
            .collect())
    }
}

/// Uniform binary labels.
pub fn random_labels(rng: &mut impl Rng, n: usize) -> Vec<u8> {
    (0..n).map(|_| rng.random_range(0..2u8)).collect()
}
