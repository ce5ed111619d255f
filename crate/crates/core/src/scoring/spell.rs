//! Symmetric-delete spelling correction.
//!
//! Every dictionary word is indexed under all strings reachable by deleting up
//! to `max_distance` characters. A query generates its own deletes, collects
//! the words sharing any of them and keeps those whose optimal string
//! alignment distance is within bound. Among those, the smallest distance
//! wins, then the highest corpus count, then lexical order.

use std::collections::{BTreeMap, BTreeSet, HashMap};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Suggestion {
    pub term: String,
    pub distance: usize,
    pub count: u64,
}

#[derive(Debug, Clone, Default)]
pub struct SymSpell {
    max_distance: usize,
    words: Vec<(String, u64)>,
    index: HashMap<String, Vec<usize>>,
}

fn deletes(word: &str, max_distance: usize) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    out.insert(word.to_string());
    let mut frontier = vec![word.chars().collect::<Vec<char>>()];
    for _ in 0..max_distance {
        let mut next = Vec::new();
        for w in &frontier {
            for i in 0..w.len() {
                let mut d = w.clone();
                d.remove(i);
                if out.insert(d.iter().collect()) {
                    next.push(d);
                }
            }
        }
        frontier = next;
    }
    out
}

impl SymSpell {
    pub fn new(dictionary: &BTreeMap<String, u64>, max_distance: usize) -> Self {
        let mut s = Self {
            max_distance,
            words: Vec::with_capacity(dictionary.len()),
            index: HashMap::new(),
        };
        for (word, &count) in dictionary {
            let i = s.words.len();
            s.words.push((word.clone(), count));
            for d in deletes(word, max_distance) {
                s.index.entry(d).or_default().push(i);
            }
        }
        s
    }

    pub fn max_distance(&self) -> usize {
        self.max_distance
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index
            .get(word)
            .is_some_and(|ids| ids.iter().any(|&i| self.words[i].0 == word))
    }

    /// Best correction within the distance bound, if any.
    pub fn lookup(&self, word: &str) -> Option<Suggestion> {
        let mut seen = BTreeSet::new();
        let mut best: Option<Suggestion> = None;
        for d in deletes(word, self.max_distance) {
            let Some(ids) = self.index.get(&d) else {
                continue;
            };
            for &i in ids {
                if !seen.insert(i) {
                    continue;
                }
                let (term, count) = &self.words[i];
                let distance = strsim::osa_distance(word, term);
                if distance > self.max_distance {
                    continue;
                }
                let cand = Suggestion {
                    term: term.clone(),
                    distance,
                    count: *count,
                };
                let better = match &best {
                    None => true,
                    Some(b) => {
                        (cand.distance, std::cmp::Reverse(cand.count), &cand.term)
                            < (b.distance, std::cmp::Reverse(b.count), &b.term)
                    }
                };
                if better {
                    best = Some(cand);
                }
            }
        }
        best
    }
}
