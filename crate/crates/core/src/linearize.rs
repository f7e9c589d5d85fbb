//! Structure-aware fact linearization, its inverse, and the word-level vocabulary.
//!
//! A fact set is rendered as
//!
//! ```text
//! generate <lang> ⟨S⟩ s ⟨R⟩ r ⟨O⟩ o [⟨R⟩ qr ⟨O⟩ q]* ... ⟨T⟩ <title>
//! ```
//!
//! and every whitespace token gets a [`RoleId`]: marker tokens take the role of the span
//! they open, everything outside fact spans is [`RoleId::Other`].

use std::collections::HashMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::facts::{contains_marker, CorpusInstance, FactTriple, Qualifier};

pub const MARK_S: &str = "⟨S⟩";
pub const MARK_R: &str = "⟨R⟩";
pub const MARK_O: &str = "⟨O⟩";
pub const MARK_T: &str = "⟨T⟩";
pub const MARK_SEP: &str = "⟨SEP⟩";
pub const GENERATE: &str = "generate";
pub const TRANSLATE: &str = "translate";

/// Reserved tokens in id order. Language control tokens follow immediately after.
pub const RESERVED_TOKENS: [&str; 11] =
    ["⟨PAD⟩", "⟨BOS⟩", "⟨EOS⟩", "⟨UNK⟩", MARK_S, MARK_R, MARK_O, MARK_T, MARK_SEP, GENERATE, TRANSLATE];

pub const PAD_ID: u32 = 0;
pub const BOS_ID: u32 = 1;
pub const EOS_ID: u32 = 2;
pub const UNK_ID: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum RoleId {
    Other = 0,
    Subject = 1,
    Relation = 2,
    Object = 3,
}

impl RoleId {
    pub const COUNT: usize = 4;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<RoleId> {
        match i {
            0 => Some(RoleId::Other),
            1 => Some(RoleId::Subject),
            2 => Some(RoleId::Relation),
            3 => Some(RoleId::Object),
            _ => None,
        }
    }
}

/// Assigns roles to a token sequence: the role of token `i` is determined by the most recent
/// marker at or before `i`.
pub fn assign_roles<S: AsRef<str>>(tokens: &[S]) -> Vec<RoleId> {
    let mut current = RoleId::Other;
    tokens
        .iter()
        .map(|t| {
            match t.as_ref() {
                MARK_S => current = RoleId::Subject,
                MARK_R => current = RoleId::Relation,
                MARK_O => current = RoleId::Object,
                MARK_T | MARK_SEP => current = RoleId::Other,
                _ => {}
            }
            current
        })
        .collect()
}

#[derive(Debug, Error, PartialEq)]
pub enum LinearizeError {
    #[error("fact list is empty")]
    NoFacts,
    #[error("language {0:?} is not in the vocabulary's configured set")]
    UnknownLanguage(String),
    #[error("field {field} contains a reserved marker")]
    ReservedMarker { field: String },
    #[error("parse error at token {position}: {reason}")]
    Parse { position: usize, reason: String },
    #[error("max_size {max_size} is smaller than the {reserved} reserved tokens")]
    VocabTooSmall { max_size: usize, reserved: usize },
    #[error("cannot build a vocabulary from an empty corpus")]
    EmptyCorpus,
    #[error("vocabulary file: {0}")]
    VocabFile(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinearizedInput {
    pub surface: String,
    pub tokens: Vec<u32>,
    pub roles: Vec<RoleId>,
}

impl LinearizedInput {
    /// Builds the id and role sequences for already-split surface tokens.
    pub fn from_tokens(words: &[&str], vocab: &Vocabulary) -> Self {
        let tokens: Vec<u32> = words.iter().map(|w| vocab.id(w)).collect();
        let roles = assign_roles(words);
        assert_eq!(tokens.len(), roles.len());
        LinearizedInput { surface: words.join(" "), tokens, roles }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Whitespace-split surface tokens for a fact set, without touching a vocabulary.
pub fn surface_tokens<'a>(facts: &'a [FactTriple], language: &'a str, section_title: &'a str) -> Vec<&'a str> {
    let mut out = vec![GENERATE, language];
    for f in facts {
        out.push(MARK_S);
        out.extend(f.subject.split_whitespace());
        out.push(MARK_R);
        out.extend(f.relation.split_whitespace());
        out.push(MARK_O);
        out.extend(f.object.split_whitespace());
        for q in &f.qualifiers {
            out.push(MARK_R);
            out.extend(q.qual_relation.split_whitespace());
            out.push(MARK_O);
            out.extend(q.qual_value.split_whitespace());
        }
    }
    out.push(MARK_T);
    out.extend(section_title.split_whitespace());
    out
}

pub fn linearize(
    facts: &[FactTriple],
    language: &str,
    section_title: &str,
    vocab: &Vocabulary,
) -> Result<LinearizedInput, LinearizeError> {
    if facts.is_empty() {
        return Err(LinearizeError::NoFacts);
    }
    if !vocab.has_language(language) {
        return Err(LinearizeError::UnknownLanguage(language.to_string()));
    }
    for (i, f) in facts.iter().enumerate() {
        for (name, value) in f.text_fields() {
            if contains_marker(value) {
                return Err(LinearizeError::ReservedMarker { field: format!("facts[{i}].{name}") });
            }
        }
    }
    if contains_marker(section_title) {
        return Err(LinearizeError::ReservedMarker { field: "section_title".into() });
    }
    Ok(LinearizedInput::from_tokens(&surface_tokens(facts, language, section_title), vocab))
}

pub fn linearize_instance(inst: &CorpusInstance, vocab: &Vocabulary) -> Result<LinearizedInput, LinearizeError> {
    linearize(&inst.facts, &inst.language, &inst.section_title, vocab)
}

/// A fact without its property kind, which the surface form does not carry.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FactSkeleton {
    pub subject: String,
    pub relation: String,
    pub object: String,
    pub qualifiers: Vec<Qualifier>,
}

impl From<&FactTriple> for FactSkeleton {
    fn from(f: &FactTriple) -> Self {
        FactSkeleton {
            subject: f.subject.clone(),
            relation: f.relation.clone(),
            object: f.object.clone(),
            qualifiers: f.qualifiers.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Delinearized {
    pub facts: Vec<FactSkeleton>,
    pub language: String,
    pub section_title: String,
}

struct Parser<'a> {
    toks: Vec<&'a str>,
    pos: usize,
}

fn is_marker(t: &str) -> bool {
    matches!(t, MARK_S | MARK_R | MARK_O | MARK_T | MARK_SEP)
}

impl<'a> Parser<'a> {
    fn err<T>(&self, reason: impl Into<String>) -> Result<T, LinearizeError> {
        Err(LinearizeError::Parse { position: self.pos, reason: reason.into() })
    }

    fn peek(&self) -> Option<&'a str> {
        self.toks.get(self.pos).copied()
    }

    fn expect(&mut self, marker: &str) -> Result<(), LinearizeError> {
        match self.peek() {
            Some(t) if t == marker => {
                self.pos += 1;
                Ok(())
            }
            Some(t) => self.err(format!("expected {marker}, found {t:?}")),
            None => self.err(format!("expected {marker}, found end of input")),
        }
    }

    /// Consumes plain words up to the next marker; `allow_empty` only for the title.
    fn span(&mut self, what: &str, allow_empty: bool) -> Result<String, LinearizeError> {
        let start = self.pos;
        while let Some(t) = self.peek() {
            if is_marker(t) {
                break;
            }
            self.pos += 1;
        }
        if start == self.pos && !allow_empty {
            return self.err(format!("empty {what}"));
        }
        Ok(self.toks[start..self.pos].join(" "))
    }
}

/// Parses a surface produced by [`linearize`] back into facts, language and title.
///
/// Fields come back whitespace-normalized (single spaces), which is the identity for
/// fields that were normalized to begin with.
pub fn delinearize(surface: &str) -> Result<Delinearized, LinearizeError> {
    let mut p = Parser { toks: surface.split_whitespace().collect(), pos: 0 };
    p.expect(GENERATE)?;
    let language = match p.peek() {
        Some(t) if !is_marker(t) => t.to_string(),
        _ => return p.err("missing language token"),
    };
    p.pos += 1;

    let mut facts = Vec::new();
    while p.peek() == Some(MARK_S) {
        p.pos += 1;
        let subject = p.span("subject", false)?;
        p.expect(MARK_R)?;
        let relation = p.span("relation", false)?;
        p.expect(MARK_O)?;
        let object = p.span("object", false)?;
        let mut qualifiers = Vec::new();
        while p.peek() == Some(MARK_R) {
            p.pos += 1;
            let qual_relation = p.span("qualifier relation", false)?;
            p.expect(MARK_O)?;
            let qual_value = p.span("qualifier value", false)?;
            qualifiers.push(Qualifier { qual_relation, qual_value });
        }
        facts.push(FactSkeleton { subject, relation, object, qualifiers });
    }
    if facts.is_empty() {
        return p.err("expected at least one fact opened by ⟨S⟩");
    }
    p.expect(MARK_T)?;
    let section_title = p.span("title", true)?;
    if p.pos != p.toks.len() {
        return p.err(format!("unexpected marker {:?} after title", p.toks[p.pos]));
    }
    Ok(Delinearized { facts, language, section_title })
}

/// Word-level vocabulary: a bijection between tokens and ids with reserved tokens first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    languages: Vec<String>,
}

impl Vocabulary {
    /// Reserved tokens plus language tokens, with no ordinary words.
    pub fn with_languages<S: AsRef<str>>(languages: &[S]) -> Self {
        Self::from_parts(languages.iter().map(|l| l.as_ref().to_string()).collect(), Vec::new())
    }

    fn from_parts(languages: Vec<String>, words: Vec<String>) -> Self {
        let mut tokens: Vec<String> = RESERVED_TOKENS.iter().map(|s| s.to_string()).collect();
        tokens.extend(languages.iter().cloned());
        tokens.extend(words);
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Vocabulary { tokens, index, languages }
    }

    pub fn reserved_count(&self) -> usize {
        RESERVED_TOKENS.len() + self.languages.len()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn languages(&self) -> &[String] {
        &self.languages
    }

    pub fn has_language(&self, lang: &str) -> bool {
        self.languages.iter().any(|l| l == lang)
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn get(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        text.split_whitespace().map(|w| self.id(w)).collect()
    }

    /// Joins token strings with single spaces, dropping PAD/BOS/EOS.
    pub fn decode(&self, ids: &[u32]) -> String {
        ids.iter()
            .filter(|&&i| !matches!(i, PAD_ID | BOS_ID | EOS_ID))
            .map(|&i| self.token(i).unwrap_or("⟨UNK⟩"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// One token per line; line number is the id.
    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for t in &self.tokens {
            writeln!(w, "{t}")?;
        }
        Ok(())
    }

    /// Reads a vocabulary file. The language set is not recoverable from the file alone,
    /// so callers pass it (checkpoints record it).
    pub fn read<R: BufRead, S: AsRef<str>>(r: R, languages: &[S]) -> Result<Self, LinearizeError> {
        let lines: Vec<String> = r.lines().collect::<Result<_, _>>().map_err(|e| LinearizeError::VocabFile(e.to_string()))?;
        let languages: Vec<String> = languages.iter().map(|l| l.as_ref().to_string()).collect();
        let head = RESERVED_TOKENS.len() + languages.len();
        if lines.len() < head {
            return Err(LinearizeError::VocabFile(format!("only {} lines, need at least {head}", lines.len())));
        }
        for (i, expected) in RESERVED_TOKENS.iter().map(|s| s.to_string()).chain(languages.iter().cloned()).enumerate() {
            if lines[i] != expected {
                return Err(LinearizeError::VocabFile(format!("line {}: expected {expected:?}, found {:?}", i + 1, lines[i])));
            }
        }
        let v = Self::from_parts(languages, lines[head..].to_vec());
        if v.index.len() != v.tokens.len() {
            return Err(LinearizeError::VocabFile("duplicate token".into()));
        }
        Ok(v)
    }
}

/// Builds a vocabulary of at most `max_size` entries from arbitrary texts. Words are ranked
/// by frequency, ties broken lexicographically.
pub fn build_vocab_from_texts<'a, I, S>(texts: I, languages: &[S], max_size: usize) -> Result<Vocabulary, LinearizeError>
where
    I: IntoIterator<Item = &'a str>,
    S: AsRef<str>,
{
    let base = Vocabulary::with_languages(languages);
    let reserved = base.reserved_count();
    if max_size < reserved {
        return Err(LinearizeError::VocabTooSmall { max_size, reserved });
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for text in texts {
        for w in text.split_whitespace() {
            if base.get(w).is_none() {
                *counts.entry(w).or_default() += 1;
            }
        }
    }
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked.truncate(max_size - reserved);
    Ok(Vocabulary::from_parts(base.languages, ranked.into_iter().map(|(w, _)| w.to_string()).collect()))
}

/// Vocabulary over the source fields, titles and references of a corpus.
pub fn build_vocab(corpus: &[CorpusInstance], max_size: usize) -> Result<Vocabulary, LinearizeError> {
    if corpus.is_empty() {
        return Err(LinearizeError::EmptyCorpus);
    }
    let languages = crate::facts::languages(corpus);
    let texts = corpus.iter().flat_map(|inst| {
        inst.facts
            .iter()
            .flat_map(|f| f.text_fields().map(|(_, v)| v))
            .chain([inst.section_title.as_str(), inst.reference_text.as_str()])
    });
    build_vocab_from_texts(texts, &languages, max_size)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::facts::PropertyKind;

    fn modi() -> FactTriple {
        FactTriple::new("Narendra Modi", "position held", "Chief Minister of Gujarat", PropertyKind::WikibaseItem)
            .with_qualifier("start time", "7 October 2001")
            .with_qualifier("end time", "22 May 2014")
            .with_qualifier("replaces", "Keshubhai Patel")
            .with_qualifier("replaced by", "Anandiben Patel")
    }

    #[test]
    fn modi_surface_and_roles() {
        let vocab = Vocabulary::with_languages(&["English"]);
        let lin = linearize(&[modi()], "English", "Career", &vocab).unwrap();
        assert_eq!(
            lin.surface,
            "generate English ⟨S⟩ Narendra Modi ⟨R⟩ position held ⟨O⟩ Chief Minister of Gujarat \
             ⟨R⟩ start time ⟨O⟩ 7 October 2001 ⟨R⟩ end time ⟨O⟩ 22 May 2014 ⟨R⟩ replaces ⟨O⟩ Keshubhai Patel \
             ⟨R⟩ replaced by ⟨O⟩ Anandiben Patel ⟨T⟩ Career"
        );
        let head: Vec<u8> = lin.roles[..10].iter().map(|r| *r as u8).collect();
        assert_eq!(head, [0, 0, 1, 1, 1, 2, 2, 2, 3, 3]);
        assert_eq!(lin.roles.last(), Some(&RoleId::Other));
        assert_eq!(lin.tokens.len(), lin.roles.len());
        // Title words are out of vocabulary here.
        assert_eq!(*lin.tokens.last().unwrap(), UNK_ID);
    }

    #[test]
    fn empty_title_ends_with_title_marker() {
        let vocab = Vocabulary::with_languages(&["hi"]);
        let f = FactTriple::new("a", "b", "c", PropertyKind::Time);
        let lin = linearize(&[f], "hi", "", &vocab).unwrap();
        assert!(lin.surface.ends_with("⟨O⟩ c ⟨T⟩"));
    }

    #[test]
    fn linearize_errors() {
        let vocab = Vocabulary::with_languages(&["hi"]);
        assert_eq!(linearize(&[], "hi", "", &vocab), Err(LinearizeError::NoFacts));
        let f = FactTriple::new("a", "b", "c", PropertyKind::Time);
        assert!(matches!(linearize(&[f], "bn", "", &vocab), Err(LinearizeError::UnknownLanguage(_))));
    }

    #[test]
    fn modi_round_trip() {
        let vocab = Vocabulary::with_languages(&["English"]);
        let lin = linearize(&[modi()], "English", "Career", &vocab).unwrap();
        let d = delinearize(&lin.surface).unwrap();
        assert_eq!(d.facts, vec![FactSkeleton::from(&modi())]);
        assert_eq!(d.language, "English");
        assert_eq!(d.section_title, "Career");
    }

    #[test]
    fn missing_relation_is_a_parse_error() {
        let err = delinearize("generate hi ⟨S⟩ a ⟨O⟩ b").unwrap_err();
        assert_eq!(err, LinearizeError::Parse { position: 4, reason: "expected ⟨R⟩, found \"⟨O⟩\"".into() });
        assert!(delinearize("generate hi ⟨T⟩ x").is_err());
        assert!(delinearize("generate hi ⟨S⟩ a ⟨R⟩ b ⟨O⟩ c").is_err());
        assert!(delinearize("generate hi ⟨S⟩ a ⟨R⟩ ⟨O⟩ c ⟨T⟩").is_err());
    }

    #[test]
    fn vocab_frequency_cut() {
        let texts = ["a a", "b a"];
        let v = build_vocab_from_texts(texts, &["hi"], RESERVED_TOKENS.len() + 1 + 1).unwrap();
        assert!(v.get("a").is_some());
        assert_eq!(v.id("b"), UNK_ID);
        assert!(matches!(
            build_vocab_from_texts(texts, &["hi"], 3),
            Err(LinearizeError::VocabTooSmall { .. })
        ));
    }

    #[test]
    fn vocab_file_round_trip() {
        let v = build_vocab_from_texts(["x y z y"], &["bn", "hi"], 100).unwrap();
        let mut buf = Vec::new();
        v.write(&mut buf).unwrap();
        let back = Vocabulary::read(&buf[..], &["bn", "hi"]).unwrap();
        assert_eq!(back, v);
        assert!(Vocabulary::read(&buf[..], &["hi"]).is_err());
    }
}
