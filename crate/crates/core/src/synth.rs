//! Deterministic synthetic corpus over toy languages.
//!
//! Facts are English and drawn from the ten most frequent English relations. References in
//! `en-toy` come from fixed templates; `xx-rev` reverses the English word order; `yy-map`
//! substitutes every word by ROT13 on letters and ROT5 on digits (a self-inverse bijection).

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::facts::{CorpusInstance, FactTriple, PropertyKind};
use crate::train::{TranslateError, TranslationPair, Translator};

/// The ten most frequent English fact relations.
pub const TOP_RELATIONS: [&str; 10] = [
    "occupation",
    "date of birth",
    "position held",
    "country of citizenship",
    "educated at",
    "date of death",
    "award received",
    "place of birth",
    "member of sports team",
    "member of political party",
];

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("need at least 2 languages, got {0}")]
    TooFewLanguages(usize),
    #[error("unknown toy language {0:?} (expected en-toy, xx-rev or yy-map)")]
    UnknownLanguage(String),
    #[error("fact-count distribution must have 4 non-negative entries summing to 1")]
    BadDistribution,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ToyLanguage {
    English,
    Reversed,
    Mapped,
}

impl ToyLanguage {
    pub fn parse(tag: &str) -> Result<Self, SynthError> {
        match tag {
            "en-toy" => Ok(ToyLanguage::English),
            "xx-rev" => Ok(ToyLanguage::Reversed),
            "yy-map" => Ok(ToyLanguage::Mapped),
            _ => Err(SynthError::UnknownLanguage(tag.to_string())),
        }
    }

    /// English text rendered in this language.
    pub fn from_english(self, text: &str) -> String {
        let words = text.split_whitespace();
        match self {
            ToyLanguage::English => words.collect::<Vec<_>>().join(" "),
            ToyLanguage::Reversed => words.rev().collect::<Vec<_>>().join(" "),
            ToyLanguage::Mapped => words.map(rot_word).collect::<Vec<_>>().join(" "),
        }
    }

    pub fn to_english(self, text: &str) -> String {
        // Both transforms are involutions.
        self.from_english(text)
    }
}

pub const ENGLISH_TAG: &str = "en-toy";

/// ROT13 on ASCII letters and ROT5 on ASCII digits; everything else unchanged.
pub fn rot_word(w: &str) -> String {
    w.chars()
        .map(|c| match c {
            'a'..='z' => (((c as u8 - b'a') + 13) % 26 + b'a') as char,
            'A'..='Z' => (((c as u8 - b'A') + 13) % 26 + b'A') as char,
            '0'..='9' => (((c as u8 - b'0') + 5) % 10 + b'0') as char,
            _ => c,
        })
        .collect()
}

/// Translator between the toy languages, pivoting through English.
#[derive(Debug, Clone, Copy, Default)]
pub struct ToyTranslator;

impl Translator for ToyTranslator {
    fn translate(&self, text: &str, from: &str, to: &str) -> Result<String, TranslateError> {
        let err = |reason: String| TranslateError { from: from.into(), to: to.into(), reason };
        let src = ToyLanguage::parse(from).map_err(|e| err(e.to_string()))?;
        let dst = ToyLanguage::parse(to).map_err(|e| err(e.to_string()))?;
        Ok(dst.from_english(&src.to_english(text)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub seed: u64,
    pub languages: Vec<String>,
    pub instances_per_language: usize,
    /// Probability of 1, 2, 3 and 4 facts per instance.
    pub fact_count_dist: [f64; 4],
    /// Distinct values drawn per slot (names, objects, date parts); capped by the built-in pools.
    pub pool_size: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            seed: 7,
            languages: vec!["en-toy".into(), "xx-rev".into(), "yy-map".into()],
            instances_per_language: 60,
            fact_count_dist: [0.4, 0.3, 0.2, 0.1],
            pool_size: 4,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<Vec<ToyLanguage>, SynthError> {
        if self.languages.len() < 2 {
            return Err(SynthError::TooFewLanguages(self.languages.len()));
        }
        let sum: f64 = self.fact_count_dist.iter().sum();
        if self.fact_count_dist.iter().any(|&p| p.is_nan() || p < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(SynthError::BadDistribution);
        }
        self.languages.iter().map(|l| ToyLanguage::parse(l)).collect()
    }
}

const FIRST: [&str; 10] = ["Asha", "Ravi", "Meera", "Arjun", "Kavya", "Vikram", "Nisha", "Rahul", "Priya", "Sanjay"];
const LAST: [&str; 8] = ["Rao", "Iyer", "Das", "Patel", "Singh", "Menon", "Bose", "Nair"];
const OCCUPATIONS: [&str; 8] = ["painter", "teacher", "doctor", "poet", "singer", "farmer", "lawyer", "engineer"];
const POSITIONS: [&str; 6] =
    ["Mayor of Pune", "Governor of Goa", "Minister of Health", "Mayor of Surat", "Governor of Assam", "Minister of Sport"];
const COUNTRIES: [&str; 6] = ["India", "Nepal", "Bhutan", "Kenya", "Brazil", "Canada"];
const SCHOOLS: [&str; 6] =
    ["Delhi University", "Madras University", "Pune College", "Kerala University", "Bombay College", "Assam College"];
const AWARDS: [&str; 6] = ["Padma Shri", "Padma Bhushan", "Kala Ratna", "Sahitya Award", "Arjuna Award", "Gold Medal"];
const CITIES: [&str; 8] = ["Pune", "Kochi", "Surat", "Patna", "Mysore", "Indore", "Nagpur", "Agra"];
const TEAMS: [&str; 6] = ["Mumbai Indians", "Chennai Kings", "Delhi Capitals", "Kerala Blasters", "Pune Warriors", "Goa Tigers"];
const PARTIES: [&str; 5] = ["Green Party", "Labour Party", "Peoples Party", "Unity Party", "Farmers Party"];
const MONTHS: [&str; 12] =
    ["January", "February", "March", "April", "May", "June", "July", "August", "September", "October", "November", "December"];
const DAYS: [u32; 8] = [1, 3, 7, 12, 15, 19, 24, 28];
const BIRTH_YEARS: [u32; 8] = [1931, 1938, 1944, 1950, 1957, 1962, 1968, 1975];
const DEATH_YEARS: [u32; 6] = [1990, 1996, 2001, 2008, 2013, 2019];
const START_YEARS: [u32; 6] = [1985, 1991, 1998, 2004, 2009, 2014];
const TITLES: [&str; 4] = ["Career", "Early life", "Personal life", ""];

struct Picker<'r> {
    rng: &'r mut ChaCha8Rng,
    pool: usize,
}

impl Picker<'_> {
    fn pick<'a, T>(&mut self, xs: &'a [T]) -> &'a T {
        &xs[self.rng.gen_range(0..xs.len().min(self.pool))]
    }
}

fn date(pk: &mut Picker, years: &[u32]) -> String {
    format!("{} {} {}", pk.pick(&DAYS), pk.pick(&MONTHS), pk.pick(years))
}

/// One fact for `relation` plus its English clause.
fn make_fact(pk: &mut Picker, subject: &str, relation: &str) -> (FactTriple, String) {
    let item = |o: &str| FactTriple::new(subject, relation, o, PropertyKind::WikibaseItem);
    match relation {
        "occupation" => {
            let o = *pk.pick(&OCCUPATIONS);
            (item(o), format!("worked as a {o}"))
        }
        "date of birth" => {
            let d = date(pk, &BIRTH_YEARS);
            (FactTriple::new(subject, relation, &d, PropertyKind::Time), format!("was born on {d}"))
        }
        "date of death" => {
            let d = date(pk, &DEATH_YEARS);
            (FactTriple::new(subject, relation, &d, PropertyKind::Time), format!("died on {d}"))
        }
        "position held" => {
            let o = *pk.pick(&POSITIONS);
            let y = pk.pick(&START_YEARS).to_string();
            (item(o).with_qualifier("start time", &y), format!("served as {o} from {y}"))
        }
        "country of citizenship" => {
            let o = *pk.pick(&COUNTRIES);
            (item(o), format!("is a citizen of {o}"))
        }
        "educated at" => {
            let o = *pk.pick(&SCHOOLS);
            (item(o), format!("studied at {o}"))
        }
        "award received" => {
            let o = *pk.pick(&AWARDS);
            (item(o), format!("received the {o}"))
        }
        "place of birth" => {
            let o = *pk.pick(&CITIES);
            (item(o), format!("was born in {o}"))
        }
        "member of sports team" => {
            let o = *pk.pick(&TEAMS);
            (item(o), format!("played for {o}"))
        }
        "member of political party" => {
            let o = *pk.pick(&PARTIES);
            (item(o), format!("joined the {o}"))
        }
        _ => unreachable!("relation outside the synthetic inventory"),
    }
}

/// A synthetic entity: its facts and English reference.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthEntity {
    pub entity_id: String,
    pub section_title: String,
    pub facts: Vec<FactTriple>,
    pub english: String,
}

fn entities(spec: &SynthSpec) -> Vec<SynthEntity> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let pk = &mut Picker { rng: &mut rng, pool: spec.pool_size.max(1) };
    (0..spec.instances_per_language)
        .map(|i| {
            let subject = format!("{} {}", pk.pick(&FIRST), pk.pick(&LAST));
            let u: f64 = pk.rng.gen();
            let mut acc = 0.0;
            let mut n = 4;
            for (k, p) in spec.fact_count_dist.iter().enumerate() {
                acc += p;
                if u < acc {
                    n = k + 1;
                    break;
                }
            }
            let relations: Vec<&str> = TOP_RELATIONS.choose_multiple(pk.rng, n).copied().collect();
            let (facts, clauses): (Vec<_>, Vec<_>) = relations.iter().map(|r| make_fact(pk, &subject, r)).unzip();
            let section_title = pk.pick(&TITLES).to_string();
            SynthEntity {
                entity_id: format!("Q{}", 1000 + i),
                section_title,
                facts,
                english: format!("{subject} {} .", clauses.join(" and ")),
            }
        })
        .collect()
}

/// Entity-major corpus: every entity appears once per language.
pub fn synth_corpus(spec: &SynthSpec) -> Result<Vec<CorpusInstance>, SynthError> {
    let langs = spec.validate()?;
    let mut out = Vec::with_capacity(spec.instances_per_language * langs.len());
    for e in entities(spec) {
        for (tag, lang) in spec.languages.iter().zip(&langs) {
            out.push(CorpusInstance {
                entity_id: e.entity_id.clone(),
                language: tag.clone(),
                section_title: e.section_title.clone(),
                reference_text: lang.from_english(&e.english),
                facts: e.facts.clone(),
            });
        }
    }
    Ok(out)
}

/// English-to-toy translation pairs built from the same templates, for translation pretraining.
pub fn synth_translation_pairs(spec: &SynthSpec) -> Result<Vec<TranslationPair>, SynthError> {
    let langs = spec.validate()?;
    let mut out = Vec::new();
    for e in entities(spec) {
        for (tag, lang) in spec.languages.iter().zip(&langs) {
            if *lang != ToyLanguage::English {
                out.push(TranslationPair { source: e.english.clone(), target: lang.from_english(&e.english), language: tag.clone() });
            }
        }
    }
    Ok(out)
}

/// Splits by entity so that every language of an entity lands on the same side. Returns
/// (kept, held out) with `round(fraction · #entities)` entities held out.
pub fn split_by_entity(corpus: &[CorpusInstance], fraction: f64, seed: u64) -> (Vec<CorpusInstance>, Vec<CorpusInstance>) {
    let ids: BTreeSet<&str> = corpus.iter().map(|i| i.entity_id.as_str()).collect();
    let mut ids: Vec<&str> = ids.into_iter().collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_out = (fraction * ids.len() as f64).round() as usize;
    let held: BTreeSet<&str> = ids[..n_out].iter().copied().collect();
    corpus.iter().cloned().partition(|i| !held.contains(i.entity_id.as_str()))
}
