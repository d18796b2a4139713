//! Concept sets annotated with control codes, and their token-sequence form.
//!
//! Surface syntax: an optional leading `<CEFR:XX>` token followed by one
//! item per concept, either a bare lemma (`dog`) or `lemma|ROLE`
//! (`dog|ARG0`), separated by single spaces.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::cefr::CefrLevel;
use crate::corpus::ConceptSet;
use crate::srl::RoleLabel;

pub const ROLE_DELIMITER: char = '|';

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabeledConcept {
    pub concept: String,
    pub role: Option<RoleLabel>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct LabeledConceptSet {
    items: Vec<LabeledConcept>,
    cefr: Option<CefrLevel>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ControlError {
    #[error("token {position} (`{token}`): {reason}")]
    Malformed { position: usize, token: String, reason: String },
    #[error("concept `{0}` appears more than once")]
    DuplicateConcept(String),
    #[error("`{0}` is not a valid concept lemma")]
    InvalidConcept(String),
}

pub(crate) fn valid_concept(concept: &str) -> bool {
    !concept.is_empty()
        && !concept.starts_with('<')
        && !concept.chars().any(|c| c.is_whitespace() || c == ROLE_DELIMITER || c.is_uppercase())
}

impl LabeledConceptSet {
    pub fn new(items: Vec<LabeledConcept>, cefr: Option<CefrLevel>) -> Result<Self, ControlError> {
        for (i, item) in items.iter().enumerate() {
            if !valid_concept(&item.concept) {
                return Err(ControlError::InvalidConcept(item.concept.clone()));
            }
            if items[..i].iter().any(|other| other.concept == item.concept) {
                return Err(ControlError::DuplicateConcept(item.concept.clone()));
            }
        }
        Ok(Self { items, cefr })
    }

    /// Unlabeled items in the set's canonical order.
    pub fn from_concepts(concepts: &ConceptSet) -> Self {
        let items = concepts.iter().map(|c| LabeledConcept { concept: c.to_string(), role: None }).collect();
        Self { items, cefr: None }
    }

    pub fn with_cefr(mut self, level: Option<CefrLevel>) -> Self {
        self.cefr = level;
        self
    }

    /// Drops every role annotation, keeping concepts and CEFR level.
    pub fn without_roles(&self) -> Self {
        let items = self.items.iter().map(|i| LabeledConcept { concept: i.concept.clone(), role: None }).collect();
        Self { items, cefr: self.cefr }
    }

    pub fn items(&self) -> &[LabeledConcept] {
        &self.items
    }

    pub fn cefr(&self) -> Option<CefrLevel> {
        self.cefr
    }

    pub fn concepts(&self) -> ConceptSet {
        self.items.iter().map(|i| i.concept.clone()).collect()
    }

    pub fn role_of(&self, concept: &str) -> Option<RoleLabel> {
        self.items.iter().find(|i| i.concept == concept).and_then(|i| i.role)
    }

    pub fn has_roles(&self) -> bool {
        self.items.iter().any(|i| i.role.is_some())
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

impl fmt::Display for LabeledConceptSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&serialize_controls(self).join(" "))
    }
}

pub fn serialize_controls(labeled: &LabeledConceptSet) -> Vec<String> {
    let mut tokens = Vec::with_capacity(labeled.items.len() + 1);
    if let Some(level) = labeled.cefr {
        tokens.push(level.control_token());
    }
    for item in &labeled.items {
        tokens.push(match item.role {
            Some(role) => format!("{}{ROLE_DELIMITER}{}", item.concept, role),
            None => item.concept.clone(),
        });
    }
    tokens
}

pub fn parse_controls<S: AsRef<str>>(tokens: &[S]) -> Result<LabeledConceptSet, ControlError> {
    let mut cefr = None;
    let mut items: Vec<LabeledConcept> = Vec::with_capacity(tokens.len());
    for (position, token) in tokens.iter().map(AsRef::as_ref).enumerate() {
        let malformed = |reason: &str| ControlError::Malformed { position, token: token.to_string(), reason: reason.to_string() };
        if token.starts_with('<') {
            if position != 0 {
                return Err(malformed("a CEFR control token may only appear first"));
            }
            cefr = Some(CefrLevel::from_control_token(token).ok_or_else(|| malformed("unknown control token"))?);
            continue;
        }
        let (concept, role) = match token.split_once(ROLE_DELIMITER) {
            Some((concept, role)) => {
                let role: RoleLabel = role.parse().map_err(|_| malformed("unknown role label"))?;
                (concept, Some(role))
            }
            None => (token, None),
        };
        if !valid_concept(concept) {
            return Err(malformed("not a lowercase lemma"));
        }
        if items.iter().any(|i| i.concept == concept) {
            return Err(malformed("concept repeated"));
        }
        items.push(LabeledConcept { concept: concept.to_string(), role });
    }
    Ok(LabeledConceptSet { items, cefr })
}

/// Whitespace-separated convenience form of [`parse_controls`].
pub fn parse_control_string(text: &str) -> Result<LabeledConceptSet, ControlError> {
    let tokens: Vec<&str> = text.split_whitespace().collect();
    parse_controls(&tokens)
}
