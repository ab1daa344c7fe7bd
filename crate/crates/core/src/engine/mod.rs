//! LLM-backed operations: dimension suggestion, seed generation, evaluation,
//! steering rewrites and synthesis.
//!
//! Each operation renders a template, calls the provider, and parses the
//! reply against an expected schema. Parse and transport failures are
//! retried `retries` times; parse retries carry a format reminder.

pub mod parse;
pub mod provider;
pub mod stub;
pub mod template;

use std::sync::Arc;

use futures::stream::{BoxStream, StreamExt};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::model::{
    DimensionDraft, DimensionPair, FragmentNode, IdeaDraft, IdeaNode, ScoreVector, Session,
};
use parse::{parse_response, salvage_array_objects, ExpectedSchema, ParseError, Payload};
use provider::{Operation, Provider, ProviderError, ProviderRequest};
use template::{TemplateError, TemplateName, TemplateRegistry, TemplateSet};

pub use parse::EvaluationRow;

pub const SEED_BATCH: usize = 3;
pub const DEFAULT_DIMENSION_COUNT: usize = 5;
pub const MAX_DIMENSION_COUNT: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub retries: u32,
    pub generation_temperature: f32,
    pub evaluation_temperature: f32,
    pub max_tokens: u32,
    /// Replaces the system template when set.
    pub system_message: Option<String>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            retries: 2,
            generation_temperature: 0.8,
            evaluation_temperature: 0.2,
            max_tokens: 4096,
            system_message: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid request: {0}")]
    Validation(String),
    #[error("could not parse model output: {0}")]
    Parse(ParseError),
    #[error(transparent)]
    Upstream(ProviderError),
    #[error("only {} of {expected} ideas were produced: {cause}", drafts.len())]
    Partial {
        drafts: Vec<IdeaDraft>,
        expected: usize,
        cause: Box<EngineError>,
    },
    #[error(transparent)]
    Template(#[from] TemplateError),
}

/// A prior user correction, as shown to the evaluator.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrectionNote {
    pub title: String,
    pub dimension: String,
    pub from: i64,
    pub to: i64,
}

impl CorrectionNote {
    /// Notes for every correction in the session, oldest first.
    pub fn from_session(session: &Session) -> Vec<CorrectionNote> {
        session
            .corrections()
            .iter()
            .filter_map(|c| {
                Some(CorrectionNote {
                    title: session.node(&c.node_id)?.title.clone(),
                    dimension: session.dimension(&c.dimension_pair_id)?.label(),
                    from: c.old_score.get(),
                    to: c.new_score.get(),
                })
            })
            .collect()
    }

    fn line(&self) -> String {
        format!(
            "idea {:?} was corrected on dimension {:?} from {} to {}",
            self.title, self.dimension, self.from, self.to
        )
    }
}

pub struct Engine {
    provider: Arc<dyn Provider>,
    templates: Arc<TemplateRegistry>,
    config: EngineConfig,
}

fn idea_json(d: &IdeaDraft) -> String {
    serde_json::to_string_pretty(&json!({"Name": d.name, "Title": d.title, "Problem": d.problem}))
        .expect("serializable")
}

fn dims_context(dims: &[DimensionPair]) -> Value {
    Value::Array(
        dims.iter()
            .map(|d| json!({"id": d.id, "pole_a": d.pole_a_name, "pole_b": d.pole_b_name}))
            .collect(),
    )
}

fn draft_context(d: &IdeaDraft) -> Value {
    json!({"name": d.name, "title": d.title, "problem": d.problem})
}

fn scores_context(s: &ScoreVector) -> Value {
    Value::Object(s.entries.iter().map(|(k, e)| (k.clone(), json!(e.score.get()))).collect())
}

fn format_reminder(err: &ParseError) -> String {
    format!(
        "\n\nFORMAT REMINDER: your previous reply could not be used ({}). Reply with THOUGHT followed by the JSON payload exactly as specified above, using the requested field names.",
        err.detail
    )
}

impl Engine {
    pub fn new(provider: Arc<dyn Provider>, templates: Arc<TemplateRegistry>, config: EngineConfig) -> Self {
        Self {
            provider,
            templates,
            config,
        }
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    fn request(
        &self,
        templates: &TemplateSet,
        operation: Operation,
        user_message: String,
        temperature: f32,
        context: Value,
    ) -> ProviderRequest {
        ProviderRequest {
            operation,
            system_message: self
                .config
                .system_message
                .clone()
                .unwrap_or_else(|| templates.system_message().to_string()),
            user_message,
            temperature,
            max_tokens: self.config.max_tokens,
            context,
        }
    }

    async fn call(
        &self,
        operation: Operation,
        template: TemplateName,
        values: &[(&str, &str)],
        temperature: f32,
        context: Value,
        schema: &ExpectedSchema,
    ) -> Result<Payload, EngineError> {
        let templates = self.templates.current();
        let prompt = templates.render(template, values)?;
        let mut last = None;
        for attempt in 0..=self.config.retries {
            let user = match &last {
                Some(EngineError::Parse(e)) => prompt.clone() + &format_reminder(e),
                _ => prompt.clone(),
            };
            let req = self.request(&templates, operation, user, temperature, context.clone());
            let err = match self.provider.complete(&req).await {
                Ok(resp) => match parse_response(&resp.raw_text, schema) {
                    Ok(p) => return Ok(p),
                    Err(e) => EngineError::Parse(e),
                },
                Err(e) => EngineError::Upstream(e),
            };
            tracing::warn!(?operation, attempt, error = %err, "provider call failed");
            last = Some(err);
        }
        Err(last.expect("at least one attempt"))
    }

    pub async fn suggest_dimensions(&self, intent: &str, count: usize) -> Result<Vec<DimensionDraft>, EngineError> {
        if intent.trim().is_empty() {
            return Err(EngineError::Validation("intent must not be empty".into()));
        }
        if !(1..=MAX_DIMENSION_COUNT).contains(&count) {
            return Err(EngineError::Validation(format!(
                "dimension count must be between 1 and {MAX_DIMENSION_COUNT}, got {count}"
            )));
        }
        let count_text = count.to_string();
        let payload = self
            .call(
                Operation::SuggestDimensions,
                TemplateName::SuggestDimensions,
                &[("intent", intent), ("count", &count_text)],
                self.config.generation_temperature,
                json!({"intent": intent, "count": count}),
                &ExpectedSchema::DimensionPairs { count },
            )
            .await?;
        match payload {
            Payload::DimensionPairs(p) => Ok(p),
            _ => unreachable!("schema determines payload"),
        }
    }

    /// Drafts from a partial reply beyond the `have` already emitted,
    /// stopping at the first object that is not a valid draft.
    fn new_drafts(text: &str, have: usize) -> Vec<IdeaDraft> {
        salvage_array_objects(text)
            .iter()
            .take(SEED_BATCH)
            .enumerate()
            .map_while(|(i, v)| parse::idea_from_value(v, &format!("[{i}]")).ok())
            .skip(have)
            .collect()
    }

    /// Three seed drafts, each yielded as soon as it has been parsed.
    ///
    /// Failures before any draft was yielded are retried. Once a draft has
    /// been yielded the batch is not restarted: a failure ends the stream
    /// with [`EngineError::Partial`].
    pub fn stream_seed_ideas<'a>(
        &'a self,
        intent: &'a str,
        dims: &'a [DimensionPair],
        related_works: Option<&'a str>,
        existing_titles: &'a [String],
    ) -> BoxStream<'a, Result<IdeaDraft, EngineError>> {
        async_stream::stream! {
            if dims.is_empty() {
                yield Err(EngineError::Validation("select at least one dimension before generating".into()));
                return;
            }
            let templates = self.templates.current();
            let dim_lines = dims
                .iter()
                .map(|d| format!("- {} (-50) vs {} (+50): {}", d.pole_a_name, d.pole_b_name, d.explanation))
                .collect::<Vec<_>>()
                .join("\n");
            let existing = if existing_titles.is_empty() {
                "None yet.".to_string()
            } else {
                existing_titles.join("; ")
            };
            let prompt = match templates.render(
                TemplateName::GenerateIdeas,
                &[
                    ("intent", intent),
                    ("related_works_string", related_works.unwrap_or("None provided.")),
                    ("dimensions", &dim_lines),
                    ("existing_ideas", &existing),
                ],
            ) {
                Ok(p) => p,
                Err(e) => {
                    yield Err(EngineError::Template(e));
                    return;
                }
            };
            let context = json!({
                "intent": intent,
                "dimensions": dims_context(dims),
                "related_works": related_works,
                "existing_titles": existing_titles,
            });
            let schema = ExpectedSchema::IdeaDrafts { count: SEED_BATCH };
            let mut emitted: Vec<IdeaDraft> = Vec::new();
            let mut last: Option<EngineError> = None;
            for attempt in 0..=self.config.retries {
                let user = match &last {
                    Some(EngineError::Parse(e)) => prompt.clone() + &format_reminder(e),
                    _ => prompt.clone(),
                };
                let req = self.request(
                    &templates,
                    Operation::GenerateIdeas,
                    user,
                    self.config.generation_temperature,
                    context.clone(),
                );
                let mut text = String::new();
                let mut pending: Option<String> = None;
                let mut failure = None;
                {
                    let mut chunks = self.provider.complete_stream(&req);
                    // A chunk is only examined once another one follows, so a
                    // reply delivered in one piece is validated whole and can
                    // still be retried.
                    while let Some(item) = chunks.next().await {
                        match item {
                            Ok(chunk) => {
                                if let Some(prev) = pending.replace(chunk) {
                                    text.push_str(&prev);
                                    for d in Self::new_drafts(&text, emitted.len()) {
                                        emitted.push(d.clone());
                                        yield Ok(d);
                                    }
                                }
                            }
                            Err(e) => {
                                failure = Some(EngineError::Upstream(e));
                                break;
                            }
                        }
                    }
                }
                if let Some(rest) = pending {
                    text.push_str(&rest);
                }
                let outcome = match failure {
                    Some(e) => Err(e),
                    None => parse_response(&text, &schema).map_err(EngineError::Parse),
                };
                match outcome {
                    Ok(Payload::IdeaDrafts(all)) => {
                        for d in all.into_iter().skip(emitted.len()) {
                            yield Ok(d);
                        }
                        return;
                    }
                    Ok(_) => unreachable!("schema determines payload"),
                    Err(e) => {
                        tracing::warn!(attempt, error = %e, "seed generation failed");
                        if attempt == self.config.retries {
                            // Out of retries: hand over whatever did parse.
                            for d in Self::new_drafts(&text, emitted.len()) {
                                emitted.push(d.clone());
                                yield Ok(d);
                            }
                        }
                        if !emitted.is_empty() {
                            yield Err(EngineError::Partial {
                                drafts: emitted,
                                expected: SEED_BATCH,
                                cause: Box::new(e),
                            });
                            return;
                        }
                        last = Some(e);
                    }
                }
            }
            yield Err(last.expect("at least one attempt"));
        }
        .boxed()
    }

    pub async fn generate_seed_ideas(
        &self,
        intent: &str,
        dims: &[DimensionPair],
        related_works: Option<&str>,
        existing_titles: &[String],
    ) -> Result<Vec<IdeaDraft>, EngineError> {
        let mut stream = self.stream_seed_ideas(intent, dims, related_works, existing_titles);
        let mut out = Vec::new();
        while let Some(item) = stream.next().await {
            out.push(item?);
        }
        Ok(out)
    }

    /// Scores for each draft on each dimension, in input order.
    pub async fn evaluate_ideas(
        &self,
        intent: &str,
        drafts: &[IdeaDraft],
        dims: &[DimensionPair],
        corrections: &[CorrectionNote],
    ) -> Result<Vec<ScoreVector>, EngineError> {
        if drafts.is_empty() {
            return Err(EngineError::Validation("nothing to evaluate".into()));
        }
        if !(1..=3).contains(&dims.len()) {
            return Err(EngineError::Validation(format!(
                "evaluation needs 1 to 3 dimension pairs, got {}",
                dims.len()
            )));
        }
        let ideas = serde_json::to_string_pretty(
            &drafts
                .iter()
                .map(|d| json!({"Name": d.name, "Title": d.title, "Problem": d.problem}))
                .collect::<Vec<_>>(),
        )
        .expect("serializable");
        let blocks = dims
            .iter()
            .enumerate()
            .map(|(i, d)| {
                format!(
                    "Dimension Pair {n}: {label}\n-- {a} (Score: -50): {da}\n-- {b} (Score: +50): {db}",
                    n = i + 1,
                    label = d.label(),
                    a = d.pole_a_name,
                    da = d.pole_a_description,
                    b = d.pole_b_name,
                    db = d.pole_b_description,
                )
            })
            .collect::<Vec<_>>()
            .join("\n\n");
        let correction_text = if corrections.is_empty() {
            "No prior user corrections.".to_string()
        } else {
            let lines: Vec<String> = corrections.iter().map(|c| format!("- {}", c.line())).collect();
            format!(
                "Prior user corrections; keep your scores consistent with them:\n{}",
                lines.join("\n")
            )
        };
        let score_fields = (1..=dims.len())
            .map(|i| format!("Dimension{i}Score (-50 to +50)"))
            .collect::<Vec<_>>()
            .join(", ");
        let mut keys: Vec<String> = (1..=dims.len())
            .flat_map(|i| [format!("\"Dimension{i}Score\""), format!("\"Dimension{i}Reasoning\"")])
            .collect();
        let last_key = keys.pop().expect("at least one dimension");
        let score_keys = format!("{}, and {last_key}", keys.join(", "));
        let titles: Vec<String> = drafts.iter().map(|d| d.title.clone()).collect();
        let payload = self
            .call(
                Operation::Evaluate,
                TemplateName::Evaluate,
                &[
                    ("intent", intent),
                    ("ideas", &ideas),
                    ("dimensions", &blocks),
                    ("corrections", &correction_text),
                    ("score_fields", &score_fields),
                    ("score_keys", &score_keys),
                ],
                self.config.evaluation_temperature,
                json!({
                    "intent": intent,
                    "ideas": drafts.iter().map(|d| json!({"title": d.title})).collect::<Vec<_>>(),
                    "dimensions": dims_context(dims),
                    "corrections": corrections,
                }),
                &ExpectedSchema::Evaluations {
                    titles,
                    dimensions: dims.len(),
                },
            )
            .await?;
        let Payload::Evaluations(rows) = payload else {
            unreachable!("schema determines payload")
        };
        Ok(rows
            .into_iter()
            .map(|row| {
                let mut v = ScoreVector::new();
                for (d, (score, reasoning)) in dims.iter().zip(row.scores) {
                    v.set(d.id.clone(), score, reasoning);
                }
                v
            })
            .collect())
    }

    /// Rewrites `node` to fit `target`. Returns the node's own content
    /// without calling the provider when nothing moved.
    pub async fn steer_idea(
        &self,
        intent: &str,
        node: &IdeaNode,
        target: &ScoreVector,
        dims: &[DimensionPair],
    ) -> Result<IdeaDraft, EngineError> {
        if !target.has_exact_keys(dims.iter().map(|d| d.id.as_str())) {
            return Err(EngineError::Validation(
                "target scores must cover exactly the selected dimensions".into(),
            ));
        }
        if target.same_scores(&node.scores) {
            return Ok(node.draft());
        }
        let modifications = dims
            .iter()
            .map(|d| {
                let from = node.scores.score(&d.id).map(|s| s.get()).unwrap_or(0);
                let to = target.score(&d.id).expect("checked keys").get();
                format!(
                    "{} (-50 = {}, +50 = {}): current {:+}, target {:+}",
                    d.label(),
                    d.pole_a_name,
                    d.pole_b_name,
                    from,
                    to
                )
            })
            .collect::<Vec<_>>()
            .join("; ");
        let draft = node.draft();
        let idea = idea_json(&draft);
        let payload = self
            .call(
                Operation::Steer,
                TemplateName::Modify,
                &[("idea", &idea), ("modifications", &modifications), ("intent", intent)],
                self.config.generation_temperature,
                json!({
                    "intent": intent,
                    "idea": draft_context(&draft),
                    "current": scores_context(&node.scores),
                    "target": scores_context(target),
                    "dimensions": dims_context(dims),
                }),
                &ExpectedSchema::SingleIdea,
            )
            .await?;
        match payload {
            Payload::SingleIdea(d) => Ok(d),
            _ => unreachable!("schema determines payload"),
        }
    }

    pub async fn merge_ideas(&self, a: &IdeaNode, b: &IdeaNode) -> Result<IdeaDraft, EngineError> {
        if a.id == b.id {
            return Err(EngineError::Validation(format!("cannot merge {} with itself", a.id)));
        }
        let (da, db) = (a.draft(), b.draft());
        self.merge_call(
            Operation::Merge,
            &idea_json(&da),
            &idea_json(&db),
            json!({"idea_a": draft_context(&da), "idea_b": draft_context(&db)}),
        )
        .await
    }

    /// Revises `idea` with a fragment, using the merge prompt with the
    /// fragment text as Idea B.
    pub async fn incorporate_fragment(&self, idea: &IdeaNode, fragment: &FragmentNode) -> Result<IdeaDraft, EngineError> {
        if fragment.text.trim().is_empty() {
            return Err(EngineError::Validation("fragment text is empty".into()));
        }
        let d = idea.draft();
        self.merge_call(
            Operation::IncorporateFragment,
            &idea_json(&d),
            &fragment.text,
            json!({"idea": draft_context(&d), "fragment": fragment.text}),
        )
        .await
    }

    async fn merge_call(&self, op: Operation, a: &str, b: &str, context: Value) -> Result<IdeaDraft, EngineError> {
        let payload = self
            .call(
                op,
                TemplateName::Merge,
                &[("idea_a", a), ("idea_b", b)],
                self.config.generation_temperature,
                context,
                &ExpectedSchema::SingleIdea,
            )
            .await?;
        match payload {
            Payload::SingleIdea(d) => Ok(d),
            _ => unreachable!("schema determines payload"),
        }
    }
}
