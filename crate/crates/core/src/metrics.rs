//! Recall-oriented ROUGE-N on token ids, greedy batch pairing and attack
//! success rate.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RougeScore {
    pub n: usize,
    /// Clipped matches of reference n-grams.
    pub matched: usize,
    /// Number of n-grams in the reference.
    pub total: usize,
    pub recall_percent: f64,
}

fn ngram_counts(tokens: &[usize], n: usize) -> HashMap<&[usize], usize> {
    let mut m = HashMap::new();
    for g in tokens.windows(n) {
        *m.entry(g).or_insert(0) += 1;
    }
    m
}

fn check_n(n: usize) -> Result<()> {
    if n == 1 || n == 2 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!(
            "ROUGE order must be 1 or 2, got {n}"
        )))
    }
}

/// `100 · Σ min(count_cand(g), count_ref(g)) / Σ count_ref(g)` over the
/// reference n-grams `g`.
pub fn rouge_n(candidate: &[usize], reference: &[usize], n: usize) -> Result<RougeScore> {
    check_n(n)?;
    if reference.len() < n {
        return Err(Error::OutOfRange {
            what: "reference length below ROUGE order",
            value: reference.len(),
            limit: n,
        });
    }
    let reference_counts = ngram_counts(reference, n);
    let candidate_counts = ngram_counts(candidate, n);
    let matched = reference_counts
        .iter()
        .map(|(g, &c)| c.min(candidate_counts.get(g).copied().unwrap_or(0)))
        .sum();
    let total = reference.len() + 1 - n;
    Ok(RougeScore {
        n,
        matched,
        total,
        recall_percent: 100.0 * matched as f64 / total as f64,
    })
}

pub fn exact_match(candidate: &[usize], reference: &[usize]) -> bool {
    candidate == reference
}

/// Pairs candidates with references greedily by ROUGE-1: the highest
/// remaining score is assigned first, ties going to the lower reference and
/// then the lower candidate index. Returns the candidate index per reference.
pub fn match_by_rouge1<C, R>(candidates: &[C], references: &[R]) -> Vec<Option<usize>>
where
    C: AsRef<[usize]>,
    R: AsRef<[usize]>,
{
    let mut cells: Vec<(f64, usize, usize)> = Vec::new();
    for (j, r) in references.iter().enumerate() {
        for (i, c) in candidates.iter().enumerate() {
            let s = rouge_n(c.as_ref(), r.as_ref(), 1).map_or(0.0, |s| s.recall_percent);
            cells.push((s, j, i));
        }
    }
    cells.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut assignment = vec![None; references.len()];
    let mut used = vec![false; candidates.len()];
    for (_, j, i) in cells {
        if assignment[j].is_none() && !used[i] {
            assignment[j] = Some(i);
            used[i] = true;
        }
    }
    assignment
}

/// Pooled ROUGE-N over an already fixed pairing. References shorter than
/// `n` are left out; `None` when no reference has an n-gram.
pub fn pooled_rouge<C, R>(
    candidates: &[C],
    references: &[R],
    assignment: &[Option<usize>],
    n: usize,
) -> Result<Option<f64>>
where
    C: AsRef<[usize]>,
    R: AsRef<[usize]>,
{
    check_n(n)?;
    let (mut matched, mut total) = (0usize, 0usize);
    for (r, a) in references.iter().zip(assignment) {
        let r = r.as_ref();
        if r.len() < n {
            continue;
        }
        total += r.len() + 1 - n;
        if let Some(i) = a {
            matched += rouge_n(candidates[*i].as_ref(), r, n)?.matched;
        }
    }
    Ok((total > 0).then(|| 100.0 * matched as f64 / total as f64))
}

/// Pooled ROUGE-N after greedy ROUGE-1 pairing.
pub fn corpus_rouge<C, R>(candidates: &[C], references: &[R], n: usize) -> Result<f64>
where
    C: AsRef<[usize]>,
    R: AsRef<[usize]>,
{
    if references.is_empty() {
        return Err(Error::Empty("reference set"));
    }
    let assignment = match_by_rouge1(candidates, references);
    pooled_rouge(candidates, references, &assignment, n)?.ok_or(Error::Empty("reference n-grams"))
}

/// Fraction of `scores` at or above `threshold` (both in percent).
pub fn success_rate(scores: &[f64], threshold: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::Empty("run list"));
    }
    if !(0.0..=100.0).contains(&threshold) {
        return Err(Error::InvalidConfig(format!(
            "success threshold must be in [0, 100], got {threshold}"
        )));
    }
    let hits = scores.iter().filter(|&&s| s >= threshold).count();
    Ok(hits as f64 / scores.len() as f64)
}

/// Fraction of reports whose corpus ROUGE-1 reaches `threshold`.
pub fn attack_success_rate(reports: &[crate::attack::AttackReport], threshold: f64) -> Result<f64> {
    let scores: Vec<f64> = reports.iter().map(|r| r.corpus_rouge1).collect();
    success_rate(&scores, threshold)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clipping() {
        let s = rouge_n(&[1, 1, 1], &[1, 2], 1).unwrap();
        assert_eq!((s.matched, s.total), (1, 2));
        assert_eq!(s.recall_percent, 50.0);
        assert!(rouge_n(&[1], &[1], 2).is_err());
        assert!(rouge_n(&[1], &[1], 3).is_err());
    }

    #[test]
    fn pairing_is_greedy() {
        let refs = [vec![1, 2], vec![3, 4]];
        let cands = [vec![3, 4], vec![1, 9]];
        assert_eq!(match_by_rouge1(&cands, &refs), vec![Some(1), Some(0)]);
        assert_eq!(corpus_rouge(&cands, &refs, 1).unwrap(), 75.0);
        assert!(corpus_rouge(&cands, &Vec::<Vec<usize>>::new(), 1).is_err());
    }

    #[test]
    fn success_counts() {
        assert_eq!(success_rate(&[100.0, 99.0, 50.0, 0.0], 99.0).unwrap(), 0.5);
        assert!(success_rate(&[], 99.0).is_err());
        assert!(success_rate(&[1.0], 101.0).is_err());
    }
}
