//! Annotated examples, datasets and reply lists.
//!
//! Example files hold one JSON object per line:
//!
//! ```text
//! {"id":"g1-17","context":[{"role":"state","text":"..."}],"message":"...","label":"nonsense","category":"invalid_order"}
//! ```
//!
//! Context blocks are opaque role-tagged text; each scorer decides how to render them.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

pub type TokenId = u32;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ContextBlock {
    pub role: String,
    pub text: String,
}

impl ContextBlock {
    pub fn new(role: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            role: role.into(),
            text: text.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Good,
    Nonsense,
}

impl Label {
    pub fn is_nonsense(self) -> bool {
        self == Label::Nonsense
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "good" => Ok(Label::Good),
            "nonsense" => Ok(Label::Nonsense),
            other => Err(format!("unknown label value {other:?}")),
        }
    }
}

/// One annotated classification instance.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub context: Vec<ContextBlock>,
    pub message: String,
    pub label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
}

impl Example {
    pub fn new(id: impl Into<String>, message: impl Into<String>, label: Label) -> Self {
        Self {
            id: id.into(),
            context: Vec::new(),
            message: message.into(),
            label,
            category: None,
        }
    }

    pub fn with_context(mut self, role: &str, text: &str) -> Self {
        self.context.push(ContextBlock::new(role, text));
        self
    }

    pub fn with_category(mut self, category: impl Into<String>) -> Self {
        self.category = Some(category.into());
        self
    }

    /// Canonical single-line JSON encoding (object keys sorted).
    pub fn to_canonical_line(&self) -> String {
        // serde_json's Value map is ordered by key unless preserve_order is enabled.
        let value = serde_json::to_value(self).expect("example serializes");
        value.to_string()
    }

    /// Stable content digest, used to key cached scores.
    pub fn digest(&self) -> String {
        crate::manifest::sha256_hex(self.to_canonical_line().as_bytes())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "validation" | "valid" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

/// An immutable collection of examples tagged with the split it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub split: Split,
    examples: Vec<Example>,
    /// 1-based source line of each example.
    lines: Vec<usize>,
}

impl Dataset {
    pub fn new(split: Split, examples: Vec<Example>) -> Self {
        let lines = (1..=examples.len()).collect();
        Self { split, examples, lines }
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn good(&self) -> Vec<&Example> {
        self.examples.iter().filter(|e| e.label == Label::Good).collect()
    }

    pub fn bad(&self) -> Vec<&Example> {
        self.examples.iter().filter(|e| e.label == Label::Nonsense).collect()
    }

    pub fn gold(&self) -> Vec<bool> {
        self.examples.iter().map(|e| e.label.is_nonsense()).collect()
    }

    /// Keeps only the bad examples of category `cat`; good examples are untouched.
    pub fn filter_by_category(&self, cat: &str) -> Dataset {
        let (examples, lines) = self
            .examples
            .iter()
            .zip(&self.lines)
            .filter(|(e, _)| e.label == Label::Good || e.category.as_deref() == Some(cat))
            .map(|(e, l)| (e.clone(), *l))
            .unzip();
        Dataset {
            split: self.split,
            examples,
            lines,
        }
    }

    /// Lists issues without failing.
    pub fn validate(&self) -> ValidationReport {
        let mut issues = Vec::new();
        let mut seen: HashMap<&str, usize> = HashMap::new();
        let mut good = 0;
        let mut nonsense = 0;
        let mut categories = BTreeMap::new();
        for (ex, &line) in self.examples.iter().zip(&self.lines) {
            if let Some(&first) = seen.get(ex.id.as_str()) {
                issues.push(Issue::DuplicateId {
                    id: ex.id.clone(),
                    first_line: first,
                    second_line: line,
                });
            } else {
                seen.insert(&ex.id, line);
            }
            if ex.message.trim().is_empty() {
                issues.push(Issue::EmptyMessage {
                    id: ex.id.clone(),
                    line,
                });
            }
            match ex.label {
                Label::Good => good += 1,
                Label::Nonsense => nonsense += 1,
            }
            if let Some(cat) = &ex.category {
                *categories.entry(cat.clone()).or_insert(0usize) += 1;
            }
        }
        ValidationReport {
            split: self.split,
            total: self.examples.len(),
            good,
            nonsense,
            categories,
            issues,
        }
    }

    /// Canonical encoding of the whole dataset, one example per line.
    pub fn to_canonical_string(&self) -> String {
        let mut out = String::new();
        for ex in &self.examples {
            out.push_str(&ex.to_canonical_line());
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_canonical_string()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Issue {
    DuplicateId {
        id: String,
        first_line: usize,
        second_line: usize,
    },
    EmptyMessage {
        id: String,
        line: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub split: Split,
    pub total: usize,
    pub good: usize,
    pub nonsense: usize,
    pub categories: BTreeMap<String, usize>,
    pub issues: Vec<Issue>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.issues.is_empty()
    }
}

pub fn load_examples(path: &Path, split: Split) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_examples(&text, split, path)
}

/// Parses line-delimited example records. `origin` is only used in error messages.
pub fn parse_examples(text: &str, split: Split, origin: &Path) -> Result<Dataset> {
    let mut examples = Vec::new();
    let mut lines = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let fail = |message: String| Error::Record {
            path: origin.to_path_buf(),
            line,
            message,
        };
        let ex = parse_record(raw).map_err(fail)?;
        if let Some(first) = seen.insert(ex.id.clone(), line) {
            return Err(Error::DuplicateId {
                id: ex.id,
                first,
                second: line,
            });
        }
        examples.push(ex);
        lines.push(line);
    }
    Ok(Dataset { split, examples, lines })
}

fn parse_record(raw: &str) -> Result<Example, String> {
    let value: Value = serde_json::from_str(raw).map_err(|e| format!("malformed record: {e}"))?;
    let obj = value.as_object().ok_or_else(|| "record is not an object".to_string())?;
    let string_field = |name: &str| -> Result<String, String> {
        match obj.get(name) {
            None => Err(format!("missing field \"{name}\"")),
            Some(Value::String(s)) => Ok(s.clone()),
            Some(_) => Err(format!("field \"{name}\" must be a string")),
        }
    };
    let id = string_field("id")?;
    let message = string_field("message")?;
    if message.is_empty() {
        return Err("field \"message\" must be nonempty".into());
    }
    let label: Label = string_field("label")?
        .parse()
        .map_err(|e| format!("field \"label\": {e}"))?;
    let context = match obj.get("context") {
        None | Some(Value::Null) => Vec::new(),
        Some(v) => serde_json::from_value(v.clone()).map_err(|e| format!("field \"context\": {e}"))?,
    };
    let category = match obj.get("category") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(s.clone()),
        Some(_) => return Err("field \"category\" must be a string".into()),
    };
    Ok(Example {
        id,
        context,
        message,
        label,
        category,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplyOrigin {
    Handcrafted,
    Autoreply,
    LmGenerated,
}

/// A candidate follow-up reply. Replies may be deliberately incomplete sentences.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Reply {
    pub tokens: Vec<TokenId>,
    pub text: String,
    pub origin: ReplyOrigin,
}

impl Reply {
    pub fn new(tokens: Vec<TokenId>, text: impl Into<String>, origin: ReplyOrigin) -> Self {
        Self {
            tokens,
            text: text.into(),
            origin,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

pub fn load_replies(path: &Path, max_len: usize) -> Result<Vec<Reply>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut replies = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let fail = |message: String| Error::Record {
            path: path.to_path_buf(),
            line: idx + 1,
            message,
        };
        let reply: Reply = serde_json::from_str(raw).map_err(|e| fail(format!("malformed reply: {e}")))?;
        if reply.tokens.is_empty() || reply.tokens.len() > max_len {
            return Err(fail(format!(
                "reply must have between 1 and {max_len} tokens, got {}",
                reply.tokens.len()
            )));
        }
        replies.push(reply);
    }
    Ok(replies)
}

pub fn write_replies(path: &Path, replies: &[Reply]) -> Result<()> {
    let mut out = String::new();
    for r in replies {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
