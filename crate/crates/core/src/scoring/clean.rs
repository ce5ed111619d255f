//! Response text normalization.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::spell::SymSpell;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum CleanStep {
    Removed(String),
    Corrected { from: String, to: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cleaned {
    pub tokens: Vec<String>,
    pub trace: Vec<CleanStep>,
}

impl Cleaned {
    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Lowercases, drops apostrophes, turns other punctuation into spaces and
/// keeps hyphens only between word characters.
pub fn tokenize(raw: &str) -> Vec<String> {
    let lower = raw.to_lowercase();
    let chars: Vec<char> = lower
        .chars()
        .filter(|c| *c != '\'' && *c != '\u{2019}')
        .collect();
    let mut buf = String::with_capacity(chars.len());
    for (i, &c) in chars.iter().enumerate() {
        let inner_hyphen = c == '-'
            && i > 0
            && chars[i - 1].is_alphanumeric()
            && chars.get(i + 1).is_some_and(|n| n.is_alphanumeric());
        if c.is_alphanumeric() || inner_hyphen {
            buf.push(c);
        } else {
            buf.push(' ');
        }
    }
    buf.split_whitespace().map(str::to_string).collect()
}

/// Full cleaning pass. Stop words are removed both before and after spelling
/// correction so that a correction landing on a stop word does not survive,
/// which keeps the pass idempotent.
pub fn clean(raw: &str, stop_words: &BTreeSet<String>, speller: Option<&SymSpell>) -> Cleaned {
    let mut trace = Vec::new();
    let drop_stop = |tokens: Vec<String>, trace: &mut Vec<CleanStep>| -> Vec<String> {
        tokens
            .into_iter()
            .filter(|t| {
                let stop = stop_words.contains(t);
                if stop {
                    trace.push(CleanStep::Removed(t.clone()));
                }
                !stop
            })
            .collect()
    };
    let mut tokens = drop_stop(tokenize(raw), &mut trace);
    if let Some(sp) = speller.filter(|s| !s.is_empty()) {
        for t in &mut tokens {
            if t.chars().any(|c| c.is_ascii_digit()) || sp.contains(t) {
                continue;
            }
            if let Some(s) = sp.lookup(t) {
                trace.push(CleanStep::Corrected {
                    from: t.clone(),
                    to: s.term.clone(),
                });
                *t = s.term;
            }
        }
        tokens = drop_stop(tokens, &mut trace);
    }
    Cleaned { tokens, trace }
}
