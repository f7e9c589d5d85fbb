use std::collections::HashMap;

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
#[error("cannot translate from {from} to {to}: {reason}")]
pub struct TranslateError {
    pub from: String,
    pub to: String,
    pub reason: String,
}

/// Text translation between language tags. Must be deterministic for fixed inputs.
pub trait Translator: Send + Sync {
    fn translate(&self, text: &str, from: &str, to: &str) -> Result<String, TranslateError>;
}

/// Word-by-word table lookup per language pair; unknown words pass through unchanged and
/// identical source and target languages are the identity.
#[derive(Debug, Clone, Default)]
pub struct DictionaryTranslator {
    tables: HashMap<(String, String), HashMap<String, String>>,
}

impl DictionaryTranslator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, from: &str, to: &str, word: &str, translation: &str) {
        self.tables.entry((from.into(), to.into())).or_default().insert(word.into(), translation.into());
    }

    pub fn with_entries(mut self, from: &str, to: &str, entries: &[(&str, &str)]) -> Self {
        for (w, t) in entries {
            self.insert(from, to, w, t);
        }
        self
    }
}

impl Translator for DictionaryTranslator {
    fn translate(&self, text: &str, from: &str, to: &str) -> Result<String, TranslateError> {
        if from == to {
            return Ok(text.split_whitespace().collect::<Vec<_>>().join(" "));
        }
        let table = self.tables.get(&(from.to_string(), to.to_string()));
        Ok(text
            .split_whitespace()
            .map(|w| table.and_then(|t| t.get(w)).map_or(w, String::as_str))
            .collect::<Vec<_>>()
            .join(" "))
    }
}
