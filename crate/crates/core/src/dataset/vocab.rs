use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{IdcError, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
const SPECIALS: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

/// Word-level vocabulary. Ids 0..4 are the specials; the remaining words are
/// sorted so the mapping depends only on the set of training captions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn build<'a>(captions: impl IntoIterator<Item = &'a str>) -> Self {
        let words: BTreeSet<String> = captions
            .into_iter()
            .flat_map(|c| c.split_whitespace().map(str::to_lowercase).collect::<Vec<_>>())
            .collect();
        let tokens = SPECIALS.iter().map(|s| s.to_string()).chain(words).collect();
        Self::from_tokens(tokens).expect("specials and sorted words are distinct")
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < SPECIALS.len() || tokens[..SPECIALS.len()] != SPECIALS {
            return Err(IdcError::InvalidArgument(
                "vocabulary must start with <pad> <bos> <eos> <unk>".into(),
            ));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(IdcError::InvalidArgument(format!("duplicate token {t:?}")));
            }
        }
        Ok(Vocab { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens.get(id).map(String::as_str).unwrap_or(SPECIALS[UNK])
    }
}

impl TryFrom<Vec<String>> for Vocab {
    type Error = IdcError;
    fn try_from(tokens: Vec<String>) -> Result<Self> {
        Vocab::from_tokens(tokens)
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

/// Whitespace split and lowercase; unknown words map to UNK. No BOS/EOS.
pub fn tokenize(caption: &str, vocab: &Vocab) -> Vec<usize> {
    caption
        .split_whitespace()
        .map(|w| vocab.id(&w.to_lowercase()))
        .collect()
}

/// Joins words with single spaces. Stops at EOS and skips PAD/BOS.
pub fn detokenize(ids: &[usize], vocab: &Vocab) -> String {
    ids.iter()
        .take_while(|&&i| i != EOS)
        .filter(|&&i| i != PAD && i != BOS)
        .map(|&i| vocab.token(i))
        .collect::<Vec<_>>()
        .join(" ")
}
