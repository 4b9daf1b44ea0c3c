//! POS and NER label schemes.
//!
//! Both label vocabularies reserve id 0 for a null label carried by special
//! tokens (padding, sentence markers). Real tags follow.

use std::collections::HashMap;
use std::fmt;

pub const POS_TAGS: [&str; 17] = [
    "ADJ", "ADP", "ADV", "AUX", "CCONJ", "DET", "INTJ", "NOUN", "NUM", "PART", "PRON", "PROPN",
    "PUNCT", "SCONJ", "SYM", "VERB", "X",
];

pub const ENTITY_TYPES: [&str; 18] = [
    "CARDINAL",
    "DATE",
    "EVENT",
    "FAC",
    "GPE",
    "LANGUAGE",
    "LAW",
    "LOC",
    "MONEY",
    "NORP",
    "ORDINAL",
    "ORG",
    "PERCENT",
    "PERSON",
    "PRODUCT",
    "QUANTITY",
    "TIME",
    "WORK_OF_ART",
];

pub const NULL_LABEL: usize = 0;
pub const NULL_NAME: &str = "<null>";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LabelFamily {
    Pos,
    Ner,
}

impl LabelFamily {
    pub fn name(self) -> &'static str {
        match self {
            LabelFamily::Pos => "pos",
            LabelFamily::Ner => "ner",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "pos" => Some(LabelFamily::Pos),
            "ner" => Some(LabelFamily::Ner),
            _ => None,
        }
    }
}

impl fmt::Display for LabelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// BIO prefix of an NER tag.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Bio<'a> {
    Outside,
    Begin(&'a str),
    Inside(&'a str),
}

/// Ordered label inventory for one family, with the null label at id 0.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelVocab {
    family: LabelFamily,
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl LabelVocab {
    fn from_names(family: LabelFamily, tags: impl IntoIterator<Item = String>) -> Self {
        let names: Vec<String> = std::iter::once(NULL_NAME.to_string()).chain(tags).collect();
        let index = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
        LabelVocab {
            family,
            names,
            index,
        }
    }

    /// Null + the 17 universal POS tags.
    pub fn pos() -> Self {
        Self::from_names(LabelFamily::Pos, POS_TAGS.iter().map(|s| s.to_string()))
    }

    /// Null + `O` + `B_t`/`I_t` for every entity type.
    pub fn ner() -> Self {
        let tags = std::iter::once("O".to_string()).chain(
            ENTITY_TYPES
                .iter()
                .flat_map(|t| [format!("B_{t}"), format!("I_{t}")]),
        );
        Self::from_names(LabelFamily::Ner, tags)
    }

    pub fn for_family(family: LabelFamily) -> Self {
        match family {
            LabelFamily::Pos => Self::pos(),
            LabelFamily::Ner => Self::ner(),
        }
    }

    pub fn family(&self) -> LabelFamily {
        self.family
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Looks up a tag. NER tags written with a hyphen (`B-PER`) are accepted.
    pub fn id(&self, tag: &str) -> Option<usize> {
        if let Some(&i) = self.index.get(tag) {
            return Some(i);
        }
        if self.family == LabelFamily::Ner && tag.len() > 2 && tag.as_bytes()[1] == b'-' {
            return self
                .index
                .get(&format!("{}_{}", &tag[..1], &tag[2..]))
                .copied();
        }
        None
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn bio(&self, id: usize) -> Option<Bio<'_>> {
        let name = self.names.get(id)?;
        if name == "O" {
            Some(Bio::Outside)
        } else if let Some(t) = name.strip_prefix("B_") {
            Some(Bio::Begin(t))
        } else {
            name.strip_prefix("I_").map(Bio::Inside)
        }
    }

    pub fn outside(&self) -> usize {
        self.id("O").unwrap_or(NULL_LABEL)
    }

    pub fn begin(&self, entity: &str) -> Option<usize> {
        self.id(&format!("B_{entity}"))
    }

    pub fn inside(&self, entity: &str) -> Option<usize> {
        self.id(&format!("I_{entity}"))
    }
}

/// Returns the position of the first `I_t` that does not continue a `B_t`
/// or `I_t` span, if any.
pub fn first_bio_violation(ner: &LabelVocab, tags: &[usize]) -> Option<usize> {
    let mut prev: Option<&str> = None;
    for (i, &t) in tags.iter().enumerate() {
        match ner.bio(t) {
            Some(Bio::Begin(e)) => prev = Some(e),
            Some(Bio::Inside(e)) => {
                if prev != Some(e) {
                    return Some(i);
                }
            }
            _ => prev = None,
        }
    }
    None
}
