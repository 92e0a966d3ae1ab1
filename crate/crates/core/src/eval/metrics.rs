//! Corpus BLEU-4 and CIDEr over whitespace-tokenized captions.

use std::collections::HashMap;

use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 4;

type Ngrams<'a> = HashMap<&'a [String], usize>;

fn ngrams(tokens: &[String], n: usize) -> Ngrams<'_> {
    let mut out = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *out.entry(w).or_insert(0) += 1;
        }
    }
    out
}

fn check_inputs(candidates: &[Vec<String>], references: &[Vec<Vec<String>>]) -> Result<()> {
    if candidates.is_empty() {
        return Err(Error::EmptyInput { op: "caption metric" });
    }
    if candidates.len() != references.len() {
        return Err(Error::InvalidArgument(format!(
            "{} candidates but {} reference groups",
            candidates.len(),
            references.len()
        )));
    }
    if let Some(i) = references.iter().position(Vec::is_empty) {
        return Err(Error::InvalidArgument(format!("candidate {i} has no reference")));
    }
    Ok(())
}

/// Sufficient statistics for BLEU: clipped matches and candidate n-gram
/// totals per order, candidate length and effective reference length.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BleuStats {
    pub matches: [usize; MAX_ORDER],
    pub totals: [usize; MAX_ORDER],
    pub cand_len: usize,
    pub ref_len: usize,
}

impl BleuStats {
    pub fn of(candidate: &[String], references: &[Vec<String>]) -> Self {
        let mut s = BleuStats {
            cand_len: candidate.len(),
            ..Default::default()
        };
        // Closest reference length, shorter one on ties.
        s.ref_len = references
            .iter()
            .map(Vec::len)
            .min_by_key(|&l| (l.abs_diff(candidate.len()), l))
            .unwrap_or(0);
        for n in 1..=MAX_ORDER {
            let cand = ngrams(candidate, n);
            let mut max_ref: HashMap<&[String], usize> = HashMap::new();
            for r in references {
                for (g, c) in ngrams(r, n) {
                    let e = max_ref.entry(g).or_insert(0);
                    *e = (*e).max(c);
                }
            }
            s.matches[n - 1] = cand
                .iter()
                .map(|(g, &c)| c.min(max_ref.get(g).copied().unwrap_or(0)))
                .sum();
            s.totals[n - 1] = cand.values().sum();
        }
        s
    }

    fn add(&mut self, o: &BleuStats) {
        for n in 0..MAX_ORDER {
            self.matches[n] += o.matches[n];
            self.totals[n] += o.totals[n];
        }
        self.cand_len += o.cand_len;
        self.ref_len += o.ref_len;
    }

    pub fn brevity_penalty(&self) -> f64 {
        if self.cand_len == 0 {
            0.0
        } else if self.cand_len > self.ref_len {
            1.0
        } else {
            (1.0 - self.ref_len as f64 / self.cand_len as f64).exp()
        }
    }

    /// Unsmoothed score in `[0, 100]`; any zero precision gives 0.
    pub fn score(&self) -> f64 {
        let mut log_sum = 0.0;
        for n in 0..MAX_ORDER {
            if self.matches[n] == 0 {
                return 0.0;
            }
            log_sum += (self.matches[n] as f64 / self.totals[n] as f64).ln();
        }
        100.0 * self.brevity_penalty() * (log_sum / MAX_ORDER as f64).exp()
    }

    /// Add-one smoothing on the 3- and 4-gram precisions, for per-caption
    /// display only.
    pub fn smoothed_score(&self) -> f64 {
        let mut log_sum = 0.0;
        for n in 0..MAX_ORDER {
            let (m, t) = if n >= 2 {
                (self.matches[n] + 1, self.totals[n] + 1)
            } else {
                (self.matches[n], self.totals[n])
            };
            if m == 0 {
                return 0.0;
            }
            log_sum += (m as f64 / t as f64).ln();
        }
        100.0 * self.brevity_penalty() * (log_sum / MAX_ORDER as f64).exp()
    }
}

pub fn bleu_stats(candidates: &[Vec<String>], references: &[Vec<Vec<String>>]) -> Result<BleuStats> {
    check_inputs(candidates, references)?;
    let mut total = BleuStats::default();
    for (c, r) in candidates.iter().zip(references) {
        total.add(&BleuStats::of(c, r));
    }
    Ok(total)
}

/// Corpus-level BLEU-4 in `[0, 100]` with uniform weights, per-candidate
/// reference clipping and a closest-length brevity penalty.
pub fn bleu4(candidates: &[Vec<String>], references: &[Vec<Vec<String>>]) -> Result<f64> {
    Ok(bleu_stats(candidates, references)?.score())
}

/// Sentence BLEU-4 with add-one smoothing on 3/4-grams.
pub fn sentence_bleu_smoothed(candidate: &[String], references: &[Vec<String>]) -> Result<f64> {
    if references.is_empty() {
        return Err(Error::InvalidArgument("candidate has no reference".into()));
    }
    Ok(BleuStats::of(candidate, references).smoothed_score())
}

type TfIdf<'a> = HashMap<&'a [String], f64>;

fn tfidf<'a>(tokens: &'a [String], n: usize, df: &HashMap<&[String], usize>, log_n: f64) -> (TfIdf<'a>, f64) {
    let mut vec = HashMap::new();
    for (g, c) in ngrams(tokens, n) {
        let d = df.get(g).copied().unwrap_or(0).max(1) as f64;
        vec.insert(g, c as f64 * (log_n - d.ln()));
    }
    let norm = vec.values().map(|v| v * v).sum::<f64>().sqrt();
    (vec, norm)
}

fn cosine(a: &(TfIdf<'_>, f64), b: &(TfIdf<'_>, f64)) -> f64 {
    if a.1 == 0.0 || b.1 == 0.0 {
        return 0.0;
    }
    let dot: f64 = a.0.iter().filter_map(|(g, v)| b.0.get(g).map(|w| v * w)).sum();
    dot / (a.1 * b.1)
}

/// Per-candidate CIDEr scores. Document frequency counts the videos whose
/// reference set contains an n-gram; idf is `ln(N / max(1, df))`.
pub fn cider_scores(candidates: &[Vec<String>], references: &[Vec<Vec<String>>]) -> Result<Vec<f64>> {
    check_inputs(candidates, references)?;
    let log_n = (references.len() as f64).ln();
    let mut scores = vec![0.0; candidates.len()];
    for n in 1..=MAX_ORDER {
        let mut df: HashMap<&[String], usize> = HashMap::new();
        for refs in references {
            let mut seen: HashMap<&[String], ()> = HashMap::new();
            for r in refs {
                for g in ngrams(r, n).into_keys() {
                    seen.insert(g, ());
                }
            }
            for g in seen.into_keys() {
                *df.entry(g).or_insert(0) += 1;
            }
        }
        for (i, (c, refs)) in candidates.iter().zip(references).enumerate() {
            let cv = tfidf(c, n, &df, log_n);
            let mean: f64 = refs.iter().map(|r| cosine(&cv, &tfidf(r, n, &df, log_n))).sum::<f64>() / refs.len() as f64;
            scores[i] += mean;
        }
    }
    Ok(scores.into_iter().map(|s| 10.0 * s / MAX_ORDER as f64).collect())
}

/// Corpus CIDEr: mean of [`cider_scores`].
pub fn cider(candidates: &[Vec<String>], references: &[Vec<Vec<String>>]) -> Result<f64> {
    let s = cider_scores(candidates, references)?;
    Ok(s.iter().sum::<f64>() / s.len() as f64)
}
