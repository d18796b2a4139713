use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::cefr::CefrLevel;
use crate::controls::ROLE_DELIMITER;
use crate::srl::RoleLabel;

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const FIRST_CEFR: usize = 4;
pub const FIRST_ROLE: usize = FIRST_CEFR + 6;
/// Number of reserved ids preceding ordinary words.
pub const RESERVED: usize = FIRST_ROLE + 6;

pub const PAD_TOKEN: &str = "<pad>";
pub const BOS_TOKEN: &str = "<s>";
pub const EOS_TOKEN: &str = "</s>";
pub const UNK_TOKEN: &str = "<unk>";

/// Role suffix as it appears split off an input item, e.g. `|ARG0`.
pub fn role_token(role: RoleLabel) -> String {
    format!("{ROLE_DELIMITER}{role}")
}

/// Word-level token/id bijection with a fixed reserved prefix: PAD, BOS,
/// EOS, UNK, the six CEFR control tokens, then the six role suffix tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocabulary {
    fn from(tokens: Vec<String>) -> Self {
        let ids = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocabulary { tokens, ids }
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum VocabularyError {
    #[error("reserved token `{token}` expected at id {id}")]
    ReservedMismatch { id: usize, token: String },
    #[error("token `{0}` appears twice")]
    Duplicate(String),
}

pub fn reserved_tokens() -> Vec<String> {
    let mut tokens: Vec<String> = [PAD_TOKEN, BOS_TOKEN, EOS_TOKEN, UNK_TOKEN].map(String::from).to_vec();
    tokens.extend(CefrLevel::ALL.iter().map(|l| l.control_token()));
    tokens.extend(RoleLabel::ALL.iter().map(|&r| role_token(r)));
    tokens
}

impl Vocabulary {
    /// Reserved tokens followed by `words` ordered by descending count, ties
    /// alphabetical. Words equal to a reserved token are ignored.
    pub fn build<'a>(words: impl IntoIterator<Item = &'a str>) -> Vocabulary {
        let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
        for w in words {
            *counts.entry(w).or_default() += 1;
        }
        let mut tokens = reserved_tokens();
        let reserved: std::collections::HashSet<String> = tokens.iter().cloned().collect();
        let mut ranked: Vec<(&str, u64)> = counts.into_iter().filter(|(w, _)| !reserved.contains(*w)).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        tokens.extend(ranked.into_iter().map(|(w, _)| w.to_string()));
        Vocabulary::from(tokens)
    }

    /// Checks the reserved prefix and uniqueness, e.g. after deserializing.
    pub fn validate(&self) -> Result<(), VocabularyError> {
        for (id, token) in reserved_tokens().into_iter().enumerate() {
            if self.tokens.get(id) != Some(&token) {
                return Err(VocabularyError::ReservedMismatch { id, token });
            }
        }
        if self.ids.len() != self.tokens.len() {
            let mut seen = std::collections::HashSet::new();
            let dup = self.tokens.iter().find(|t| !seen.insert(*t)).cloned().unwrap_or_default();
            return Err(VocabularyError::Duplicate(dup));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.ids.get(token).copied()
    }

    pub fn id(&self, token: &str) -> usize {
        self.get(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn is_control(id: usize) -> bool {
        (FIRST_CEFR..RESERVED).contains(&id)
    }

    /// Ids the decoder may never emit.
    pub fn is_banned_output(id: usize) -> bool {
        id == PAD || id == BOS || id == UNK || Self::is_control(id)
    }
}
