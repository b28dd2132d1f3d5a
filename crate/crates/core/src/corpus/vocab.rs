use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::Dataset;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
const PAD_TOKEN: &str = "<pad>";
const UNK_TOKEN: &str = "<unk>";

/// Token/id bijection with reserved PAD and UNK ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Vocabulary holding only the reserved entries.
    pub fn empty() -> Self {
        Vocab::from(Vec::new())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 2
    }

    /// Id of a token, falling back to UNK. Never fails.
    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

impl From<Vec<String>> for Vocab {
    /// Accepts either a full token list (starting with the reserved entries)
    /// or a list of real tokens only.
    fn from(list: Vec<String>) -> Self {
        let mut tokens = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
        let skip = if list.len() >= 2 && list[0] == PAD_TOKEN && list[1] == UNK_TOKEN {
            2
        } else {
            0
        };
        for t in list.into_iter().skip(skip) {
            if t != PAD_TOKEN && t != UNK_TOKEN && !tokens.contains(&t) {
                tokens.push(t);
            }
        }
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocab { tokens, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

/// Tokens with corpus frequency >= `min_count`, ordered by descending
/// frequency with lexicographic tie-breaks.
pub fn build_vocab(datasets: &[&Dataset], min_count: usize) -> Vocab {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for ds in datasets {
        for ex in &ds.examples {
            for tok in ex.all_tokens() {
                *counts.entry(tok).or_default() += 1;
            }
        }
    }
    let mut ranked: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|(t, c)| *c >= min_count.max(1) && t != PAD_TOKEN && t != UNK_TOKEN)
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Vocab::from(ranked.into_iter().map(|(t, _)| t).collect::<Vec<_>>())
}
