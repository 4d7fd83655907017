use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Index into a [`ClassCatalog`].
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct ClassId(pub usize);

impl ClassId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// The name reserved for regions that belong to no catalog class.
pub const BACKGROUND_NAME: &str = "background";

/// Groundtruth or predicted label for a region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "LabelRepr", try_from = "LabelRepr")]
pub enum Label {
    Background,
    Class(ClassId),
}

impl Label {
    pub fn is_background(self) -> bool {
        matches!(self, Label::Background)
    }

    pub fn class(self) -> Option<ClassId> {
        match self {
            Label::Background => None,
            Label::Class(c) => Some(c),
        }
    }
}

/// Wire form: a class index, or the string "background".
#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum LabelRepr {
    Index(usize),
    Name(String),
}

impl From<Label> for LabelRepr {
    fn from(l: Label) -> Self {
        match l {
            Label::Background => LabelRepr::Name(BACKGROUND_NAME.to_string()),
            Label::Class(c) => LabelRepr::Index(c.0),
        }
    }
}

impl TryFrom<LabelRepr> for Label {
    type Error = String;

    fn try_from(r: LabelRepr) -> std::result::Result<Self, String> {
        match r {
            LabelRepr::Index(i) => Ok(Label::Class(ClassId(i))),
            LabelRepr::Name(s) if s == BACKGROUND_NAME => Ok(Label::Background),
            LabelRepr::Name(s) => Err(format!("unknown label `{s}`")),
        }
    }
}

/// Ordered list of class names. Class identity is the position in this list,
/// so every artifact that stores indices must carry the catalog alongside.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawCatalog")]
pub struct ClassCatalog {
    classes: Vec<String>,
}

#[derive(Deserialize)]
struct RawCatalog {
    classes: Vec<String>,
}

impl TryFrom<RawCatalog> for ClassCatalog {
    type Error = String;

    fn try_from(raw: RawCatalog) -> std::result::Result<Self, String> {
        ClassCatalog::new(raw.classes).map_err(|e| e.to_string())
    }
}

impl ClassCatalog {
    pub fn new(classes: Vec<String>) -> Result<Self> {
        if classes.is_empty() {
            return Err(Error::config("classes", "catalog must not be empty"));
        }
        let mut seen = std::collections::HashSet::new();
        for name in &classes {
            if name.is_empty() {
                return Err(Error::config("classes", "class names must be non-empty"));
            }
            if name == BACKGROUND_NAME {
                return Err(Error::config(
                    "classes",
                    format!("`{BACKGROUND_NAME}` is reserved"),
                ));
            }
            if !seen.insert(name.clone()) {
                return Err(Error::config("classes", format!("duplicate class `{name}`")));
            }
        }
        Ok(ClassCatalog { classes })
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.classes
    }

    pub fn ids(&self) -> impl Iterator<Item = ClassId> {
        (0..self.classes.len()).map(ClassId)
    }

    pub fn index_of(&self, name: &str) -> Option<ClassId> {
        self.classes.iter().position(|c| c == name).map(ClassId)
    }

    /// Panics on an out-of-range id; ids are only minted by this catalog.
    pub fn name(&self, id: ClassId) -> &str {
        &self.classes[id.0]
    }

    pub fn label_name(&self, label: Label) -> &str {
        match label {
            Label::Background => BACKGROUND_NAME,
            Label::Class(c) => self.name(c),
        }
    }

    /// Parses a class name or "background" into a label.
    pub fn parse_label(&self, s: &str) -> Result<Label> {
        if s == BACKGROUND_NAME {
            return Ok(Label::Background);
        }
        self.index_of(s)
            .map(Label::Class)
            .ok_or_else(|| Error::UnknownClass(s.to_string()))
    }

    pub fn contains_id(&self, id: ClassId) -> bool {
        id.0 < self.classes.len()
    }
}
