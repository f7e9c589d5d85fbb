//! Corpus-level BLEU, chrF++ and METEOR-lite, plus the per-language report.
//!
//! All tokenization is Unicode-whitespace splitting. Scores are on a 0-100 scale.

use std::collections::{BTreeMap, HashMap};
use std::hash::Hash;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::ExecMode;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("{hyps} hypotheses but {refs} references")]
    LengthMismatch { hyps: usize, refs: usize },
    #[error("empty corpus")]
    Empty,
}

fn check<A, B>(h: &[A], r: &[B]) -> Result<(), MetricError> {
    if h.len() != r.len() {
        return Err(MetricError::LengthMismatch { hyps: h.len(), refs: r.len() });
    }
    if h.is_empty() {
        return Err(MetricError::Empty);
    }
    Ok(())
}

fn ngram_counts<T: Eq + Hash + Clone>(items: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut m = HashMap::new();
    if n > 0 && items.len() >= n {
        for w in items.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// (clipped matches, hypothesis n-gram count, reference n-gram count)
fn overlap<T: Eq + Hash + Clone>(hyp: &[T], reference: &[T], n: usize) -> (usize, usize, usize) {
    let h = ngram_counts(hyp, n);
    let r = ngram_counts(reference, n);
    let matches = h.iter().map(|(g, &c)| c.min(r.get(g).copied().unwrap_or(0))).sum();
    (matches, hyp.len().saturating_sub(n - 1), reference.len().saturating_sub(n - 1))
}

/// Corpus BLEU with uniform weights and no smoothing: any order with zero clipped matches
/// gives 0.
pub fn bleu<H: AsRef<str>, R: AsRef<str>>(hyps: &[H], refs: &[R], max_n: usize) -> Result<f64, MetricError> {
    check(hyps, refs)?;
    let mut matches = vec![0usize; max_n];
    let mut totals = vec![0usize; max_n];
    let (mut hyp_len, mut ref_len) = (0usize, 0usize);
    for (h, r) in hyps.iter().zip(refs) {
        let h: Vec<&str> = h.as_ref().split_whitespace().collect();
        let r: Vec<&str> = r.as_ref().split_whitespace().collect();
        hyp_len += h.len();
        ref_len += r.len();
        for n in 1..=max_n {
            let (m, t, _) = overlap(&h, &r, n);
            matches[n - 1] += m;
            totals[n - 1] += t;
        }
    }
    // Orders with no hypothesis n-grams at all (every hypothesis shorter than n) have an
    // undefined precision and are left out of the geometric mean.
    let orders: Vec<(usize, usize)> = matches.into_iter().zip(totals).filter(|&(_, t)| t > 0).collect();
    if hyp_len == 0 || orders.iter().any(|&(m, _)| m == 0) {
        return Ok(0.0);
    }
    let log_p: f64 =
        orders.iter().map(|&(m, t)| (m as f64 / t as f64).ln()).sum::<f64>() / orders.len() as f64;
    let bp = (1.0 - ref_len as f64 / hyp_len as f64).min(0.0);
    Ok(100.0 * (log_p + bp).exp())
}

/// F-beta averaged over character orders `1..=char_n` (whitespace removed) and word orders
/// `1..=word_n`, each from corpus-summed statistics. Orders with no n-grams on either side
/// are skipped.
pub fn chrf_pp<H: AsRef<str>, R: AsRef<str>>(
    hyps: &[H],
    refs: &[R],
    char_n: usize,
    word_n: usize,
    beta: f64,
) -> Result<f64, MetricError> {
    check(hyps, refs)?;
    let orders = char_n + word_n;
    // (matches, hyp total, ref total) per order
    let mut stats = vec![(0usize, 0usize, 0usize); orders];
    for (h, r) in hyps.iter().zip(refs) {
        let hc: Vec<char> = h.as_ref().chars().filter(|c| !c.is_whitespace()).collect();
        let rc: Vec<char> = r.as_ref().chars().filter(|c| !c.is_whitespace()).collect();
        let hw: Vec<&str> = h.as_ref().split_whitespace().collect();
        let rw: Vec<&str> = r.as_ref().split_whitespace().collect();
        for n in 1..=char_n {
            let (m, a, b) = overlap(&hc, &rc, n);
            let s = &mut stats[n - 1];
            *s = (s.0 + m, s.1 + a, s.2 + b);
        }
        for n in 1..=word_n {
            let (m, a, b) = overlap(&hw, &rw, n);
            let s = &mut stats[char_n + n - 1];
            *s = (s.0 + m, s.1 + a, s.2 + b);
        }
    }
    let b2 = beta * beta;
    let mut sum = 0.0;
    let mut effective = 0usize;
    for &(m, h, r) in &stats {
        if h == 0 || r == 0 {
            continue;
        }
        effective += 1;
        if m == 0 {
            continue;
        }
        let p = m as f64 / h as f64;
        let rec = m as f64 / r as f64;
        sum += (1.0 + b2) * p * rec / (b2 * p + rec);
    }
    if effective == 0 {
        return Ok(0.0);
    }
    Ok(100.0 * sum / effective as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeteorParams {
    pub alpha: f64,
    pub gamma: f64,
    pub beta_exp: f64,
}

impl Default for MeteorParams {
    fn default() -> Self {
        MeteorParams { alpha: 0.9, gamma: 0.5, beta_exp: 3.0 }
    }
}

/// Greedy leftmost exact alignment: each hypothesis word, left to right, takes the leftmost
/// unused identical reference word. Returns (hyp index, ref index) pairs in hypothesis order.
pub fn exact_alignment(hyp: &[&str], reference: &[&str]) -> Vec<(usize, usize)> {
    let mut used = vec![false; reference.len()];
    let mut out = Vec::new();
    for (i, w) in hyp.iter().enumerate() {
        if let Some(j) = (0..reference.len()).find(|&j| !used[j] && reference[j] == *w) {
            used[j] = true;
            out.push((i, j));
        }
    }
    out
}

/// Sentence-level METEOR-lite in `[0, 1]`.
pub fn meteor_lite_sentence(hyp: &str, reference: &str, p: MeteorParams) -> f64 {
    let h: Vec<&str> = hyp.split_whitespace().collect();
    let r: Vec<&str> = reference.split_whitespace().collect();
    let align = exact_alignment(&h, &r);
    let m = align.len();
    if m == 0 {
        return 0.0;
    }
    let chunks = 1 + align.windows(2).filter(|w| !(w[1].0 == w[0].0 + 1 && w[1].1 == w[0].1 + 1)).count();
    let precision = m as f64 / h.len() as f64;
    let recall = m as f64 / r.len() as f64;
    let f_mean = precision * recall / (p.alpha * precision + (1.0 - p.alpha) * recall);
    let penalty = p.gamma * (chunks as f64 / m as f64).powf(p.beta_exp);
    f_mean * (1.0 - penalty)
}

/// Mean sentence METEOR-lite over the corpus, ×100.
pub fn meteor_lite<H: AsRef<str>, R: AsRef<str>>(hyps: &[H], refs: &[R], p: MeteorParams) -> Result<f64, MetricError> {
    check(hyps, refs)?;
    let total: f64 = hyps.iter().zip(refs).map(|(h, r)| meteor_lite_sentence(h.as_ref(), r.as_ref(), p)).sum();
    Ok(100.0 * total / hyps.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub bleu: f64,
    pub meteor_lite: f64,
    pub chrf_pp: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub per_language: BTreeMap<String, Scores>,
    /// Unweighted mean over languages; `n` is the total pair count.
    pub average: Scores,
}

pub fn score_group<H: AsRef<str>, R: AsRef<str>>(hyps: &[H], refs: &[R]) -> Result<Scores, MetricError> {
    Ok(Scores {
        bleu: bleu(hyps, refs, 4)?,
        meteor_lite: meteor_lite(hyps, refs, MeteorParams::default())?,
        chrf_pp: chrf_pp(hyps, refs, 6, 2, 2.0)?,
        n: hyps.len(),
    })
}

/// A prediction to score: (language, hypothesis, reference).
pub type Prediction = (String, String, String);

pub fn evaluate(predictions: &[Prediction]) -> Result<MetricReport, MetricError> {
    evaluate_with(predictions, ExecMode::Parallel)
}

pub fn evaluate_with(predictions: &[Prediction], exec: ExecMode) -> Result<MetricReport, MetricError> {
    if predictions.is_empty() {
        return Err(MetricError::Empty);
    }
    let mut groups: BTreeMap<&str, (Vec<&str>, Vec<&str>)> = BTreeMap::new();
    for (lang, h, r) in predictions {
        let g = groups.entry(lang.as_str()).or_default();
        g.0.push(h);
        g.1.push(r);
    }
    let groups: Vec<_> = groups.into_iter().collect();
    let scored = exec.map(&groups, |_, (lang, (h, r))| score_group(h, r).map(|s| (lang.to_string(), s)));
    let per_language: BTreeMap<String, Scores> = scored.into_iter().collect::<Result<_, _>>()?;
    let k = per_language.len() as f64;
    let mean = |f: fn(&Scores) -> f64| per_language.values().map(f).sum::<f64>() / k;
    let average = Scores {
        bleu: mean(|s| s.bleu),
        meteor_lite: mean(|s| s.meteor_lite),
        chrf_pp: mean(|s| s.chrf_pp),
        n: per_language.values().map(|s| s.n).sum(),
    };
    Ok(MetricReport { per_language, average })
}

impl MetricReport {
    /// Aligned text table: one row per language and a final `Avg` row.
    pub fn render_table(&self) -> String {
        let mut s = format!("{:<10} {:>8} {:>8} {:>8} {:>6}\n", "Lang", "BLEU", "METEOR*", "chrF++", "n");
        let rows = self.per_language.iter().map(|(l, sc)| (l.as_str(), sc)).chain([("Avg", &self.average)]);
        for (lang, sc) in rows {
            s.push_str(&format!(
                "{:<10} {:>8.2} {:>8.2} {:>8.2} {:>6}\n",
                lang, sc.bleu, sc.meteor_lite, sc.chrf_pp, sc.n
            ));
        }
        s.push_str("* METEOR-lite: exact unigram matching only\n");
        s
    }
}
