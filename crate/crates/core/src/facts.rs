//! Facts, corpus instances and the JSONL corpus format.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Marker strings that structure a linearized input. Fact fields may not contain them.
pub const RESERVED_MARKERS: [&str; 5] = ["⟨S⟩", "⟨R⟩", "⟨O⟩", "⟨T⟩", "⟨SEP⟩"];

pub const MIN_FACTS: usize = 1;
pub const MAX_FACTS: usize = 10;
pub const MIN_REFERENCE_WORDS: usize = 5;
pub const MAX_REFERENCE_WORDS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PropertyKind {
    WikibaseItem,
    Time,
    Quantity,
    Monolingualtext,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Qualifier {
    pub qual_relation: String,
    pub qual_value: String,
}

impl Qualifier {
    pub fn new(qual_relation: impl Into<String>, qual_value: impl Into<String>) -> Self {
        Qualifier { qual_relation: qual_relation.into(), qual_value: qual_value.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FactTriple {
    pub subject: String,
    pub relation: String,
    pub object: String,
    pub property_kind: PropertyKind,
    #[serde(default)]
    pub qualifiers: Vec<Qualifier>,
}

impl FactTriple {
    pub fn new(
        subject: impl Into<String>,
        relation: impl Into<String>,
        object: impl Into<String>,
        property_kind: PropertyKind,
    ) -> Self {
        FactTriple {
            subject: subject.into(),
            relation: relation.into(),
            object: object.into(),
            property_kind,
            qualifiers: Vec::new(),
        }
    }

    pub fn with_qualifier(mut self, qual_relation: &str, qual_value: &str) -> Self {
        self.qualifiers.push(Qualifier::new(qual_relation, qual_value));
        self
    }

    /// All text fields in linearization order: subject, relation, object, then each
    /// qualifier's relation and value.
    pub fn text_fields(&self) -> impl Iterator<Item = (&'static str, &str)> {
        [("subject", self.subject.as_str()), ("relation", self.relation.as_str()), ("object", self.object.as_str())]
            .into_iter()
            .chain(self.qualifiers.iter().flat_map(|q| {
                [("qual_relation", q.qual_relation.as_str()), ("qual_value", q.qual_value.as_str())]
            }))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusInstance {
    pub entity_id: String,
    pub language: String,
    #[serde(default)]
    pub section_title: String,
    pub reference_text: String,
    pub facts: Vec<FactTriple>,
}

/// Whitespace word count used by the reference-length filter.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

pub fn contains_marker(text: &str) -> bool {
    RESERVED_MARKERS.iter().any(|m| text.contains(m))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    FactCountOutOfRange(usize),
    WordCountTooLow(usize),
    WordCountTooHigh(usize),
    ReservedMarker { field: String },
    EmptyField { field: String },
    InvalidLanguageTag(String),
    UnknownLanguage(String),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::FactCountOutOfRange(n) => write!(f, "fact count out of range ({n}, allowed {MIN_FACTS}..={MAX_FACTS})"),
            Violation::WordCountTooLow(n) => write!(f, "word count < {MIN_REFERENCE_WORDS} ({n})"),
            Violation::WordCountTooHigh(n) => write!(f, "word count > {MAX_REFERENCE_WORDS} ({n})"),
            Violation::ReservedMarker { field } => write!(f, "reserved marker in field {field}"),
            Violation::EmptyField { field } => write!(f, "empty field {field}"),
            Violation::InvalidLanguageTag(t) => write!(f, "invalid language tag {t:?}"),
            Violation::UnknownLanguage(t) => write!(f, "language {t:?} not in configured set"),
        }
    }
}

/// Validation settings. The default accepts any well-formed language tag.
#[derive(Debug, Clone, Default)]
pub struct ValidationPolicy {
    pub languages: Option<Vec<String>>,
}

impl ValidationPolicy {
    pub fn with_languages<S: AsRef<str>>(langs: &[S]) -> Self {
        ValidationPolicy { languages: Some(langs.iter().map(|s| s.as_ref().to_string()).collect()) }
    }

    pub fn validate(&self, inst: CorpusInstance) -> std::result::Result<CorpusInstance, Vec<Violation>> {
        let mut violations = Vec::new();
        let lang = inst.language.as_str();
        if lang.is_empty() || lang.chars().any(char::is_whitespace) || contains_marker(lang) {
            violations.push(Violation::InvalidLanguageTag(lang.to_string()));
        } else if let Some(langs) = &self.languages {
            if !langs.iter().any(|l| l == lang) {
                violations.push(Violation::UnknownLanguage(lang.to_string()));
            }
        }
        if inst.entity_id.trim().is_empty() {
            violations.push(Violation::EmptyField { field: "entity_id".into() });
        }
        if !(MIN_FACTS..=MAX_FACTS).contains(&inst.facts.len()) {
            violations.push(Violation::FactCountOutOfRange(inst.facts.len()));
        }
        let words = word_count(&inst.reference_text);
        if words < MIN_REFERENCE_WORDS {
            violations.push(Violation::WordCountTooLow(words));
        } else if words > MAX_REFERENCE_WORDS {
            violations.push(Violation::WordCountTooHigh(words));
        }
        if contains_marker(&inst.section_title) {
            violations.push(Violation::ReservedMarker { field: "section_title".into() });
        }
        for (i, fact) in inst.facts.iter().enumerate() {
            for (name, value) in fact.text_fields() {
                let field = format!("facts[{i}].{name}");
                if value.trim().is_empty() {
                    violations.push(Violation::EmptyField { field });
                } else if contains_marker(value) {
                    violations.push(Violation::ReservedMarker { field });
                }
            }
        }
        if violations.is_empty() {
            Ok(inst)
        } else {
            Err(violations)
        }
    }
}

/// Checks every instance invariant, returning all violations rather than the first.
pub fn validate_instance(inst: CorpusInstance) -> std::result::Result<CorpusInstance, Vec<Violation>> {
    ValidationPolicy::default().validate(inst)
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: malformed record: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: invalid instance: {}", join_violations(.violations))]
    Invalid { line: usize, violations: Vec<Violation> },
    #[error("line {line}: duplicate instance (entity {entity_id}, language {language}) first seen on line {first}")]
    Duplicate { line: usize, first: usize, entity_id: String, language: String },
    #[error("corpus is empty")]
    Empty,
    #[error("k must be positive")]
    ZeroK,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

pub fn parse_corpus<R: BufRead>(reader: R) -> Result<Vec<CorpusInstance>, CorpusError> {
    parse_corpus_with(reader, &ValidationPolicy::default())
}

/// Parses a JSONL corpus. Blank lines are skipped; line numbers are 1-based.
pub fn parse_corpus_with<R: BufRead>(reader: R, policy: &ValidationPolicy) -> Result<Vec<CorpusInstance>, CorpusError> {
    let mut out = Vec::new();
    let mut seen: HashMap<(String, String, String), usize> = HashMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let inst: CorpusInstance = serde_json::from_str(&line)
            .map_err(|e| CorpusError::Malformed { line: line_no, reason: e.to_string() })?;
        let inst = policy
            .validate(inst)
            .map_err(|violations| CorpusError::Invalid { line: line_no, violations })?;
        let key = (inst.entity_id.clone(), inst.language.clone(), inst.reference_text.clone());
        if let Some(&first) = seen.get(&key) {
            return Err(CorpusError::Duplicate {
                line: line_no,
                first,
                entity_id: inst.entity_id,
                language: inst.language,
            });
        }
        seen.insert(key, line_no);
        out.push(inst);
    }
    Ok(out)
}

pub fn parse_corpus_str(text: &str) -> Result<Vec<CorpusInstance>, CorpusError> {
    parse_corpus(text.as_bytes())
}

pub fn serialize_corpus<W: Write>(corpus: &[CorpusInstance], mut w: W) -> std::io::Result<()> {
    for inst in corpus {
        serde_json::to_writer(&mut w, inst)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn corpus_to_string(corpus: &[CorpusInstance]) -> String {
    let mut buf = Vec::new();
    serialize_corpus(corpus, &mut buf).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}

/// Languages present in a corpus, sorted.
pub fn languages(corpus: &[CorpusInstance]) -> Vec<String> {
    let set: std::collections::BTreeSet<&str> = corpus.iter().map(|i| i.language.as_str()).collect();
    set.into_iter().map(str::to_string).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LanguageStats {
    pub instances: usize,
    pub avg_words: f64,
    pub min_words: usize,
    pub max_words: usize,
    pub avg_facts: f64,
    /// Fact count (1..=10) to fraction of instances.
    pub fact_histogram: BTreeMap<usize, f64>,
    pub top_relations: Vec<(String, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatsReport {
    pub per_language: BTreeMap<String, LanguageStats>,
    pub overall: LanguageStats,
}

fn language_stats(insts: &[&CorpusInstance], k: usize) -> LanguageStats {
    let n = insts.len();
    let words: Vec<usize> = insts.iter().map(|i| word_count(&i.reference_text)).collect();
    let total_words: usize = words.iter().sum();
    let total_facts: usize = insts.iter().map(|i| i.facts.len()).sum();

    let mut counts = [0usize; MAX_FACTS + 1];
    for inst in insts {
        counts[inst.facts.len().min(MAX_FACTS)] += 1;
    }
    let fact_histogram = (MIN_FACTS..=MAX_FACTS).map(|c| (c, counts[c] as f64 / n as f64)).collect();

    let mut rel: HashMap<&str, usize> = HashMap::new();
    for f in insts.iter().flat_map(|i| &i.facts) {
        *rel.entry(f.relation.as_str()).or_default() += 1;
    }
    let mut top: Vec<(String, usize)> = rel.into_iter().map(|(r, c)| (r.to_string(), c)).collect();
    top.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    top.truncate(k);

    LanguageStats {
        instances: n,
        avg_words: total_words as f64 / n as f64,
        min_words: words.iter().copied().min().unwrap_or(0),
        max_words: words.iter().copied().max().unwrap_or(0),
        avg_facts: total_facts as f64 / n as f64,
        fact_histogram,
        top_relations: top,
    }
}

/// Per-language and overall statistics with the `k` most frequent relations.
pub fn corpus_stats(corpus: &[CorpusInstance], k: usize) -> Result<StatsReport, CorpusError> {
    if corpus.is_empty() {
        return Err(CorpusError::Empty);
    }
    if k == 0 {
        return Err(CorpusError::ZeroK);
    }
    let mut by_lang: BTreeMap<String, Vec<&CorpusInstance>> = BTreeMap::new();
    for inst in corpus {
        by_lang.entry(inst.language.clone()).or_default().push(inst);
    }
    let per_language = by_lang.iter().map(|(l, insts)| (l.clone(), language_stats(insts, k))).collect();
    let all: Vec<&CorpusInstance> = corpus.iter().collect();
    Ok(StatsReport { per_language, overall: language_stats(&all, k) })
}

impl StatsReport {
    /// Plain-text rendering: a summary table, then histograms and top relations.
    pub fn render_text(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!(
            "{:<10} {:>7} {:>8} {:>6} {:>6} {:>7}\n",
            "lang", "n", "avg|T|", "min", "max", "avg|F|"
        ));
        let rows = self.per_language.iter().map(|(l, st)| (l.as_str(), st)).chain([("all", &self.overall)]);
        for (lang, st) in rows.clone() {
            s.push_str(&format!(
                "{:<10} {:>7} {:>8.2} {:>6} {:>6} {:>7.2}\n",
                lang, st.instances, st.avg_words, st.min_words, st.max_words, st.avg_facts
            ));
        }
        s.push_str("\nfact-count histogram\n");
        for (lang, st) in rows.clone() {
            let bins: Vec<String> = st.fact_histogram.iter().map(|(c, f)| format!("{c}:{f:.3}")).collect();
            s.push_str(&format!("{:<10} {}\n", lang, bins.join(" ")));
        }
        s.push_str("\ntop relations\n");
        for (lang, st) in rows {
            let rels: Vec<String> = st.top_relations.iter().map(|(r, c)| format!("{r} ({c})")).collect();
            s.push_str(&format!("{:<10} {}\n", lang, rels.join(", ")));
        }
        s
    }
}

/// Deduplicated relation inventory across a corpus.
pub fn relation_set(corpus: &[CorpusInstance]) -> HashSet<String> {
    corpus.iter().flat_map(|i| &i.facts).map(|f| f.relation.clone()).collect()
}
