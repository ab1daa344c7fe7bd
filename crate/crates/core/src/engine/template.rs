//! Prompt templates loaded from YAML files, one per template.
//!
//! A body refers to variables as `{name}` (lowercase identifier in braces).
//! Any other brace usage, such as JSON examples, is left untouched. Every
//! variable the engine supplies must appear in the body and the body may not
//! reference anything else; both are checked at load time.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};
use std::time::SystemTime;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateName {
    System,
    SuggestDimensions,
    GenerateIdeas,
    Evaluate,
    Modify,
    Merge,
}

impl TemplateName {
    pub const ALL: [TemplateName; 6] = [
        TemplateName::System,
        TemplateName::SuggestDimensions,
        TemplateName::GenerateIdeas,
        TemplateName::Evaluate,
        TemplateName::Modify,
        TemplateName::Merge,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateName::System => "system",
            TemplateName::SuggestDimensions => "suggest_dimensions",
            TemplateName::GenerateIdeas => "generate_ideas",
            TemplateName::Evaluate => "evaluate",
            TemplateName::Modify => "modify",
            TemplateName::Merge => "merge",
        }
    }

    /// Variables the engine fills in for this template.
    pub fn placeholders(self) -> &'static [&'static str] {
        match self {
            TemplateName::System => &[],
            TemplateName::SuggestDimensions => &["intent", "count"],
            TemplateName::GenerateIdeas => &["intent", "related_works_string", "dimensions", "existing_ideas"],
            TemplateName::Evaluate => &["intent", "ideas", "dimensions", "corrections", "score_fields", "score_keys"],
            TemplateName::Modify => &["idea", "modifications", "intent"],
            TemplateName::Merge => &["idea_a", "idea_b"],
        }
    }

    pub fn file_name(self) -> String {
        format!("{}.yaml", self.as_str())
    }
}

impl fmt::Display for TemplateName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("cannot read template {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid template {path}: {message}")]
    Yaml { path: PathBuf, message: String },
    #[error("template {path} declares name {found:?}, expected {expected:?}")]
    NameMismatch {
        path: PathBuf,
        expected: &'static str,
        found: String,
    },
    #[error("template {template} is missing placeholder {{{placeholder}}}")]
    MissingPlaceholder { template: TemplateName, placeholder: String },
    #[error("template {template} references unknown placeholder {{{placeholder}}}")]
    UnknownPlaceholder { template: TemplateName, placeholder: String },
    #[error("template {template} rendered without a value for {{{placeholder}}}")]
    MissingValue { template: TemplateName, placeholder: String },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub name: String,
    pub body: String,
}

enum Piece<'a> {
    Text(&'a str),
    Var(&'a str),
}

/// Splits a body into literal text and `{identifier}` references.
fn pieces(body: &str) -> Vec<Piece<'_>> {
    let mut out = Vec::new();
    let bytes = body.as_bytes();
    let mut literal_start = 0;
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'{' {
            let ident_len = bytes[i + 1..]
                .iter()
                .take_while(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || **b == b'_')
                .count();
            let close = i + 1 + ident_len;
            if ident_len > 0 && bytes[i + 1].is_ascii_lowercase() && close < bytes.len() && bytes[close] == b'}' {
                if literal_start < i {
                    out.push(Piece::Text(&body[literal_start..i]));
                }
                out.push(Piece::Var(&body[i + 1..close]));
                i = close + 1;
                literal_start = i;
                continue;
            }
        }
        i += 1;
    }
    if literal_start < body.len() {
        out.push(Piece::Text(&body[literal_start..]));
    }
    out
}

impl PromptTemplate {
    pub fn placeholders(&self) -> Vec<&str> {
        pieces(&self.body)
            .into_iter()
            .filter_map(|p| match p {
                Piece::Var(v) => Some(v),
                Piece::Text(_) => None,
            })
            .collect()
    }

    fn check(&self, name: TemplateName) -> Result<(), TemplateError> {
        let used = self.placeholders();
        for required in name.placeholders() {
            if !used.contains(required) {
                return Err(TemplateError::MissingPlaceholder {
                    template: name,
                    placeholder: required.to_string(),
                });
            }
        }
        if let Some(unknown) = used.iter().find(|u| !name.placeholders().contains(u)) {
            return Err(TemplateError::UnknownPlaceholder {
                template: name,
                placeholder: unknown.to_string(),
            });
        }
        Ok(())
    }

    /// Substitutes values in one pass; inserted text is never re-scanned.
    pub fn render(&self, name: TemplateName, values: &[(&str, &str)]) -> Result<String, TemplateError> {
        let mut out = String::with_capacity(self.body.len() + values.iter().map(|(_, v)| v.len()).sum::<usize>());
        for piece in pieces(&self.body) {
            match piece {
                Piece::Text(t) => out.push_str(t),
                Piece::Var(v) => {
                    let value = values
                        .iter()
                        .find(|(k, _)| *k == v)
                        .map(|(_, val)| *val)
                        .ok_or_else(|| TemplateError::MissingValue {
                            template: name,
                            placeholder: v.to_string(),
                        })?;
                    out.push_str(value);
                }
            }
        }
        Ok(out)
    }
}

/// A complete, validated set of the six templates.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TemplateSet {
    templates: BTreeMap<TemplateName, PromptTemplate>,
}

impl TemplateSet {
    pub fn load_dir(dir: &Path) -> Result<Self, TemplateError> {
        let mut templates = BTreeMap::new();
        for name in TemplateName::ALL {
            let path = dir.join(name.file_name());
            let text = std::fs::read_to_string(&path).map_err(|source| TemplateError::Io {
                path: path.clone(),
                source,
            })?;
            let template: PromptTemplate = serde_yaml::from_str(&text).map_err(|e| TemplateError::Yaml {
                path: path.clone(),
                message: e.to_string(),
            })?;
            if template.name != name.as_str() {
                return Err(TemplateError::NameMismatch {
                    path,
                    expected: name.as_str(),
                    found: template.name,
                });
            }
            template.check(name)?;
            templates.insert(name, template);
        }
        Ok(Self { templates })
    }

    pub fn get(&self, name: TemplateName) -> &PromptTemplate {
        &self.templates[&name]
    }

    pub fn render(&self, name: TemplateName, values: &[(&str, &str)]) -> Result<String, TemplateError> {
        self.get(name).render(name, values)
    }

    pub fn system_message(&self) -> &str {
        self.get(TemplateName::System).body.trim()
    }
}

/// Reloads the template directory when any file's modification time changes.
/// A broken edit keeps the previous set in service.
#[derive(Debug)]
pub struct TemplateRegistry {
    dir: PathBuf,
    state: RwLock<(Arc<TemplateSet>, Vec<Option<SystemTime>>)>,
}

impl TemplateRegistry {
    pub fn load(dir: impl Into<PathBuf>) -> Result<Self, TemplateError> {
        let dir = dir.into();
        let set = TemplateSet::load_dir(&dir)?;
        let stamps = Self::stamps(&dir);
        Ok(Self {
            dir,
            state: RwLock::new((Arc::new(set), stamps)),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn stamps(dir: &Path) -> Vec<Option<SystemTime>> {
        TemplateName::ALL
            .iter()
            .map(|n| std::fs::metadata(dir.join(n.file_name())).and_then(|m| m.modified()).ok())
            .collect()
    }

    pub fn current(&self) -> Arc<TemplateSet> {
        let stamps = Self::stamps(&self.dir);
        {
            let state = self.state.read().unwrap_or_else(|e| e.into_inner());
            if state.1 == stamps {
                return state.0.clone();
            }
        }
        let mut state = self.state.write().unwrap_or_else(|e| e.into_inner());
        if state.1 != stamps {
            match TemplateSet::load_dir(&self.dir) {
                Ok(set) => {
                    tracing::info!(dir = %self.dir.display(), "prompt templates reloaded");
                    state.0 = Arc::new(set);
                }
                Err(e) => tracing::warn!(error = %e, "template reload failed; keeping previous templates"),
            }
            state.1 = stamps;
        }
        state.0.clone()
    }
}

/// The `prompts/` directory shipped at the workspace root.
pub fn default_prompt_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../prompts")
}
