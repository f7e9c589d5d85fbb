use std::collections::HashMap;
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{TrainError, Translator};
use crate::facts::{CorpusInstance, FactTriple};
use crate::linearize::{linearize, LinearizedInput, Vocabulary, TRANSLATE};

/// How the corpus is turned into (source, target) pairs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setup {
    /// One model over every language.
    Multilingual,
    /// One model per language; the view holds only that language.
    Bilingual(String),
    /// Fact fields are translated into the target language before linearization.
    TranslateInput,
    /// Targets are the English reference; outputs are translated after decoding.
    TranslateOutput,
}

impl fmt::Display for Setup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Setup::Multilingual => write!(f, "multilingual"),
            Setup::Bilingual(l) => write!(f, "bilingual({l})"),
            Setup::TranslateInput => write!(f, "translate_input"),
            Setup::TranslateOutput => write!(f, "translate_output"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Xf2t,
    Translation,
}

/// One training pair plus the bookkeeping needed to evaluate it.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub entity_id: String,
    /// Language the final output should be in.
    pub language: String,
    pub task: Task,
    pub source: LinearizedInput,
    pub target: Vec<u32>,
    pub target_text: String,
}

fn xf2t_example(
    inst: &CorpusInstance,
    facts: &[FactTriple],
    control_lang: &str,
    target_text: &str,
    vocab: &Vocabulary,
) -> Result<Example, TrainError> {
    Ok(Example {
        entity_id: inst.entity_id.clone(),
        language: inst.language.clone(),
        task: Task::Xf2t,
        source: linearize(facts, control_lang, &inst.section_title, vocab)?,
        target: vocab.encode(target_text),
        target_text: target_text.to_string(),
    })
}

/// Facts with every text field passed through the translator.
pub fn translate_source_facts(
    facts: &[FactTriple],
    translator: &dyn Translator,
    from: &str,
    to: &str,
) -> Result<Vec<FactTriple>, TrainError> {
    let tr = |s: &str| translator.translate(s, from, to);
    facts
        .iter()
        .map(|f| {
            Ok(FactTriple {
                subject: tr(&f.subject)?,
                relation: tr(&f.relation)?,
                object: tr(&f.object)?,
                property_kind: f.property_kind,
                qualifiers: f
                    .qualifiers
                    .iter()
                    .map(|q| Ok(crate::facts::Qualifier { qual_relation: tr(&q.qual_relation)?, qual_value: tr(&q.qual_value)? }))
                    .collect::<Result<_, TrainError>>()?,
            })
        })
        .collect()
}

/// Builds the training view for a setup. `english` is the tag of the language facts are
/// expressed in (and the output language for `TranslateOutput`).
pub fn build_view(
    corpus: &[CorpusInstance],
    setup: &Setup,
    translator: Option<&dyn Translator>,
    vocab: &Vocabulary,
    english: &str,
) -> Result<Vec<Example>, TrainError> {
    match setup {
        Setup::Multilingual => corpus
            .iter()
            .map(|i| xf2t_example(i, &i.facts, &i.language, &i.reference_text, vocab))
            .collect(),
        Setup::Bilingual(lang) => {
            if !corpus.iter().any(|i| &i.language == lang) {
                return Err(TrainError::LanguageAbsent(lang.clone()));
            }
            corpus
                .iter()
                .filter(|i| &i.language == lang)
                .map(|i| xf2t_example(i, &i.facts, &i.language, &i.reference_text, vocab))
                .collect()
        }
        Setup::TranslateInput => {
            let t = translator.ok_or(TrainError::MissingTranslator("translate_input"))?;
            corpus
                .iter()
                .map(|i| {
                    let facts = translate_source_facts(&i.facts, t, english, &i.language)?;
                    xf2t_example(i, &facts, &i.language, &i.reference_text, vocab)
                })
                .collect()
        }
        Setup::TranslateOutput => {
            translator.ok_or(TrainError::MissingTranslator("translate_output"))?;
            let english_refs: HashMap<&str, &str> = corpus
                .iter()
                .filter(|i| i.language == english)
                .map(|i| (i.entity_id.as_str(), i.reference_text.as_str()))
                .collect();
            corpus
                .iter()
                .filter_map(|i| english_refs.get(i.entity_id.as_str()).map(|r| (i, *r)))
                .map(|(i, r)| xf2t_example(i, &i.facts, english, r, vocab))
                .collect()
        }
    }
}

/// A parallel sentence pair for translation pretraining (English source).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranslationPair {
    pub source: String,
    pub target: String,
    pub language: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PretrainPlan {
    None,
    EnglishOnly,
    Multilingual,
    MultiStage,
    MultiTask,
}

impl PretrainPlan {
    fn name(self) -> &'static str {
        match self {
            PretrainPlan::None => "none",
            PretrainPlan::EnglishOnly => "english_only",
            PretrainPlan::Multilingual => "multilingual",
            PretrainPlan::MultiStage => "multi_stage",
            PretrainPlan::MultiTask => "multi_task",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phase {
    pub name: String,
    pub examples: Vec<Example>,
    pub epochs: usize,
}

fn translation_example(p: &TranslationPair, vocab: &Vocabulary) -> Example {
    let words: Vec<&str> = [TRANSLATE, p.language.as_str()].into_iter().chain(p.source.split_whitespace()).collect();
    Example {
        entity_id: String::new(),
        language: p.language.clone(),
        task: Task::Translation,
        source: LinearizedInput::from_tokens(&words, vocab),
        target: vocab.encode(&p.target),
        target_text: p.target.clone(),
    }
}

/// Expands a pretraining plan into ordered phases of `epochs` each.
///
/// `MultiTask` interleaves shuffled translation and XF2T examples 1:1 (translation first);
/// whichever list is longer contributes its remainder at the end.
pub fn build_pretrain_plan(
    plan: PretrainPlan,
    pretrain_corpus: &[CorpusInstance],
    translation_pairs: &[TranslationPair],
    vocab: &Vocabulary,
    english: &str,
    epochs: usize,
    seed: u64,
) -> Result<Vec<Phase>, TrainError> {
    let name = plan.name();
    let needs_pairs = matches!(plan, PretrainPlan::MultiStage | PretrainPlan::MultiTask);
    if needs_pairs && translation_pairs.is_empty() {
        return Err(TrainError::MissingTranslationPairs(name));
    }
    let xf2t = |english_only: bool| -> Result<Vec<Example>, TrainError> {
        let view: Vec<Example> = build_view(pretrain_corpus, &Setup::Multilingual, None, vocab, english)?
            .into_iter()
            .filter(|e| !english_only || e.language == english)
            .collect();
        if view.is_empty() {
            let reason = if english_only { format!("no {english} instances in the pretraining corpus") } else { "pretraining corpus is empty".into() };
            return Err(TrainError::NoPretrainData { plan: name, reason });
        }
        Ok(view)
    };
    let translation = || translation_pairs.iter().map(|p| translation_example(p, vocab)).collect::<Vec<_>>();
    let phase = |name: &str, examples| Phase { name: name.to_string(), examples, epochs };

    Ok(match plan {
        PretrainPlan::None => Vec::new(),
        PretrainPlan::EnglishOnly => vec![phase("pretrain_xf2t_en", xf2t(true)?)],
        PretrainPlan::Multilingual => vec![phase("pretrain_xf2t", xf2t(false)?)],
        PretrainPlan::MultiStage => vec![phase("pretrain_translation", translation()), phase("pretrain_xf2t", xf2t(false)?)],
        PretrainPlan::MultiTask => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut t = translation();
            let mut x = xf2t(false)?;
            t.shuffle(&mut rng);
            x.shuffle(&mut rng);
            let mut mixed = Vec::with_capacity(t.len() + x.len());
            let (mut ti, mut xi) = (t.into_iter(), x.into_iter());
            loop {
                match (ti.next(), xi.next()) {
                    (None, None) => break,
                    (a, b) => mixed.extend(a.into_iter().chain(b)),
                }
            }
            vec![phase("pretrain_multitask", mixed)]
        }
    })
}
