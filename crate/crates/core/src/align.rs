//! Two-stage fact-sentence alignment.
//!
//! Stage 1 ranks a sentence's candidate facts by TF-IDF cosine similarity over character
//! 3-grams and keeps the top `K`. Stage 2 keeps the candidates an [`EntailmentScorer`] labels
//! as entailed, with the sentence as premise and the fact as hypothesis.

use std::collections::HashMap;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::ExecMode;
use crate::facts::FactTriple;
use crate::linearize::MARK_SEP;
use crate::train::Translator;

pub const DEFAULT_K: usize = 5;
pub const DEFAULT_ENTAIL_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum AlignError {
    #[error("K must be positive")]
    ZeroK,
    #[error("fact list is empty")]
    NoFacts,
    #[error("scorer failed on sentence {sentence:?} / fact {fact:?}: {source}")]
    Scorer { sentence: String, fact: String, source: Box<AlignError> },
    #[error("transport error talking to {endpoint}: {reason}")]
    Transport { endpoint: String, reason: String },
    #[error("protocol error from {endpoint}: {reason}")]
    Protocol { endpoint: String, reason: String },
    #[error("translation failed: {0}")]
    Translation(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntailLabel {
    Entail,
    Neutral,
    Contradict,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScorerOutput {
    pub entail_prob: f64,
    pub label: EntailLabel,
}

/// Premise/hypothesis entailment. Implementations must be deterministic for fixed inputs.
pub trait EntailmentScorer: Send + Sync {
    fn score(&self, premise: &str, hypothesis: &str) -> Result<ScorerOutput, AlignError>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub sentence: String,
    /// Sorted by score, non-increasing; at most `K` entries.
    pub candidates: Vec<(FactTriple, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentResult {
    pub sentence: String,
    pub aligned: Vec<FactTriple>,
    /// Scorer output for every candidate, in candidate order.
    pub outputs: Vec<(FactTriple, ScorerOutput)>,
}

/// Space-joined fact fields used for lexical matching.
pub fn fact_text(f: &FactTriple) -> String {
    f.text_fields().map(|(_, v)| v).collect::<Vec<_>>().join(" ")
}

/// `subject|relation|object` followed by `|qr:q` per qualifier.
pub fn nli_hypothesis(f: &FactTriple) -> String {
    let mut s = format!("{}|{}|{}", f.subject, f.relation, f.object);
    for q in &f.qualifiers {
        s.push('|');
        s.push_str(&q.qual_relation);
        s.push(':');
        s.push_str(&q.qual_value);
    }
    s
}

/// `sentence⟨SEP⟩subject|relation|object[|qr:q]*`
pub fn nli_input(sentence: &str, fact: &FactTriple) -> String {
    format!("{sentence}{MARK_SEP}{}", nli_hypothesis(fact))
}

fn char_trigrams(text: &str) -> HashMap<String, f64> {
    let norm: Vec<char> = format!(" {} ", text.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase())
        .chars()
        .collect();
    let mut m = HashMap::new();
    for w in norm.windows(3) {
        *m.entry(w.iter().collect::<String>()).or_insert(0.0) += 1.0;
    }
    m
}

/// TF-IDF cosine between `sentence` and each of `docs`, with smoothed idf
/// `ln((1 + N) / (1 + df)) + 1` over the N = 1 + |docs| documents.
pub fn tfidf_cosines(sentence: &str, docs: &[String]) -> Vec<f64> {
    let grams: Vec<HashMap<String, f64>> =
        std::iter::once(sentence).chain(docs.iter().map(String::as_str)).map(char_trigrams).collect();
    let n = grams.len() as f64;
    let mut df: HashMap<&str, f64> = HashMap::new();
    for g in &grams {
        for k in g.keys() {
            *df.entry(k.as_str()).or_insert(0.0) += 1.0;
        }
    }
    let weigh = |g: &HashMap<String, f64>| -> HashMap<String, f64> {
        g.iter().map(|(k, tf)| (k.clone(), tf * (((1.0 + n) / (1.0 + df[k.as_str()])).ln() + 1.0))).collect()
    };
    let weighted: Vec<HashMap<String, f64>> = grams.iter().map(weigh).collect();
    let norm = |v: &HashMap<String, f64>| v.values().map(|x| x * x).sum::<f64>().sqrt();
    let s = &weighted[0];
    let sn = norm(s);
    weighted[1..]
        .iter()
        .map(|d| {
            let dn = norm(d);
            if sn == 0.0 || dn == 0.0 {
                return 0.0;
            }
            let dot: f64 = s.iter().filter_map(|(k, x)| d.get(k).map(|y| x * y)).sum();
            (dot / (sn * dn)).clamp(0.0, 1.0)
        })
        .collect()
}

/// Top-`k` facts by character-trigram TF-IDF cosine with the sentence. Ties keep input order.
pub fn stage1_candidates(sentence: &str, facts: &[FactTriple], k: usize) -> Result<CandidateSet, AlignError> {
    stage1_candidates_translated(sentence, facts, k, None)
}

/// As [`stage1_candidates`], optionally rendering fact text into the sentence's language
/// first: `translator` is `(translator, fact language, sentence language)`.
pub fn stage1_candidates_translated(
    sentence: &str,
    facts: &[FactTriple],
    k: usize,
    translator: Option<(&dyn Translator, &str, &str)>,
) -> Result<CandidateSet, AlignError> {
    if k == 0 {
        return Err(AlignError::ZeroK);
    }
    if facts.is_empty() {
        return Err(AlignError::NoFacts);
    }
    let docs: Vec<String> = facts
        .iter()
        .map(|f| {
            let text = fact_text(f);
            match translator {
                Some((t, from, to)) if from != to => {
                    t.translate(&text, from, to).map_err(|e| AlignError::Translation(e.to_string()))
                }
                _ => Ok(text),
            }
        })
        .collect::<Result<_, _>>()?;
    let scores = tfidf_cosines(sentence, &docs);
    let mut ranked: Vec<(FactTriple, f64)> = facts.iter().cloned().zip(scores).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
    ranked.truncate(k);
    Ok(CandidateSet { sentence: sentence.to_string(), candidates: ranked })
}

/// Keeps exactly the candidates labeled `entail`, in candidate order.
pub fn stage2_filter(candidates: &CandidateSet, scorer: &dyn EntailmentScorer) -> Result<AlignmentResult, AlignError> {
    let mut aligned = Vec::new();
    let mut outputs = Vec::with_capacity(candidates.candidates.len());
    for (fact, _) in &candidates.candidates {
        let hypothesis = nli_hypothesis(fact);
        let out = scorer.score(&candidates.sentence, &hypothesis).map_err(|e| AlignError::Scorer {
            sentence: candidates.sentence.clone(),
            fact: hypothesis.clone(),
            source: Box::new(e),
        })?;
        if out.label == EntailLabel::Entail {
            aligned.push(fact.clone());
        }
        outputs.push((fact.clone(), out));
    }
    Ok(AlignmentResult { sentence: candidates.sentence.clone(), aligned, outputs })
}

/// Stage 1 then stage 2 for many (sentence, facts) pairs, fanned out per sentence.
pub fn align_batch(
    items: &[(String, Vec<FactTriple>)],
    k: usize,
    scorer: &dyn EntailmentScorer,
    exec: ExecMode,
) -> Result<Vec<AlignmentResult>, AlignError> {
    exec.map(items, |_, (sentence, facts)| stage2_filter(&stage1_candidates(sentence, facts, k)?, scorer))
        .into_iter()
        .collect()
}

const STOPWORDS: [&str; 16] =
    ["a", "an", "the", "of", "in", "on", "at", "to", "and", "or", "is", "was", "by", "for", "with", "as"];

/// Lowercased alphanumeric runs minus a small stopword list.
pub fn content_tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .filter(|t| !STOPWORDS.contains(&t.as_str()))
        .collect()
}

/// Offline stand-in for an NLI model: the entailment probability is the fraction of
/// hypothesis content tokens that occur in the premise; `entail` iff it reaches the
/// threshold (inclusive), otherwise `neutral`.
#[derive(Debug, Clone, Copy)]
pub struct LexicalScorer {
    pub threshold: f64,
}

impl Default for LexicalScorer {
    fn default() -> Self {
        LexicalScorer { threshold: DEFAULT_ENTAIL_THRESHOLD }
    }
}

impl LexicalScorer {
    pub fn score_text(&self, premise: &str, hypothesis: &str) -> ScorerOutput {
        let premise: std::collections::HashSet<String> = content_tokens(premise).into_iter().collect();
        let hyp = content_tokens(hypothesis);
        let entail_prob = if hyp.is_empty() {
            0.0
        } else {
            hyp.iter().filter(|t| premise.contains(*t)).count() as f64 / hyp.len() as f64
        };
        let label = if hyp.is_empty() || entail_prob < self.threshold { EntailLabel::Neutral } else { EntailLabel::Entail };
        ScorerOutput { entail_prob, label }
    }
}

impl EntailmentScorer for LexicalScorer {
    fn score(&self, premise: &str, hypothesis: &str) -> Result<ScorerOutput, AlignError> {
        Ok(self.score_text(premise, hypothesis))
    }
}

#[derive(Serialize)]
struct ScoreRequest<'a> {
    premise: &'a str,
    hypothesis: &'a str,
}

/// Counting semaphore bounding concurrent HTTP requests.
struct Gate {
    in_flight: Mutex<usize>,
    freed: Condvar,
    limit: usize,
}

impl Gate {
    fn acquire(&self) {
        let mut n = self.in_flight.lock().unwrap();
        while *n >= self.limit {
            n = self.freed.wait(n).unwrap();
        }
        *n += 1;
    }

    fn release(&self) {
        *self.in_flight.lock().unwrap() -= 1;
        self.freed.notify_one();
    }
}

/// HTTP client for a remote scorer speaking `POST /score`. Responses are cached by
/// (premise, hypothesis); a transport failure is retried once.
pub struct RemoteScorer {
    url: String,
    agent: ureq::Agent,
    cache: Mutex<HashMap<(String, String), ScorerOutput>>,
    gate: Gate,
}

pub const DEFAULT_MAX_IN_FLIGHT: usize = 8;

pub fn remote_scorer_client(endpoint: &str, timeout: Duration) -> Result<RemoteScorer, AlignError> {
    RemoteScorer::new(endpoint, timeout, DEFAULT_MAX_IN_FLIGHT)
}

impl RemoteScorer {
    pub fn new(endpoint: &str, timeout: Duration, max_in_flight: usize) -> Result<Self, AlignError> {
        if !(endpoint.starts_with("http://") || endpoint.starts_with("https://")) {
            return Err(AlignError::Transport { endpoint: endpoint.into(), reason: "not an HTTP URL".into() });
        }
        let base = endpoint.trim_end_matches('/');
        let url = if base.ends_with("/score") { base.to_string() } else { format!("{base}/score") };
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(RemoteScorer {
            url,
            agent,
            cache: Mutex::new(HashMap::new()),
            gate: Gate { in_flight: Mutex::new(0), freed: Condvar::new(), limit: max_in_flight.max(1) },
        })
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    fn protocol(&self, reason: impl Into<String>) -> AlignError {
        AlignError::Protocol { endpoint: self.url.clone(), reason: reason.into() }
    }

    fn request(&self, premise: &str, hypothesis: &str) -> Result<ScorerOutput, AlignError> {
        let body = ScoreRequest { premise, hypothesis };
        let mut last = String::new();
        for _ in 0..2 {
            self.gate.acquire();
            let sent = self.agent.post(&self.url).send_json(&body);
            self.gate.release();
            match sent {
                Ok(mut resp) => {
                    let status = resp.status().as_u16();
                    if status != 200 {
                        return Err(self.protocol(format!("HTTP status {status}")));
                    }
                    let out: ScorerOutput =
                        resp.body_mut().read_json().map_err(|e| self.protocol(format!("bad response body: {e}")))?;
                    if !(out.entail_prob.is_finite() && (0.0..=1.0).contains(&out.entail_prob)) {
                        return Err(self.protocol(format!("entail_prob {} outside [0, 1]", out.entail_prob)));
                    }
                    return Ok(out);
                }
                Err(e) => last = e.to_string(),
            }
        }
        Err(AlignError::Transport { endpoint: self.url.clone(), reason: last })
    }
}

impl EntailmentScorer for RemoteScorer {
    fn score(&self, premise: &str, hypothesis: &str) -> Result<ScorerOutput, AlignError> {
        let key = (premise.to_string(), hypothesis.to_string());
        if let Some(hit) = self.cache.lock().unwrap().get(&key) {
            return Ok(*hit);
        }
        let out = self.request(premise, hypothesis)?;
        self.cache.lock().unwrap().insert(key, out);
        Ok(out)
    }
}
