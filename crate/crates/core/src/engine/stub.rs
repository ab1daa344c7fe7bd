//! Offline providers.
//!
//! [`StubProvider`] answers from the request context alone, so identical
//! requests give byte-identical responses in any process. An optional
//! fixture pins specific dimensions, ideas, scores and rewrites; everything
//! else is derived from a SHA-256 hash of the inputs.
//!
//! [`ScriptedProvider`] replays canned responses in order, for tests.

use std::collections::VecDeque;
use std::path::Path;
use std::sync::Mutex;

use async_trait::async_trait;
use futures::stream::{self, BoxStream, StreamExt};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::provider::{Operation, Provider, ProviderError, ProviderRequest, ProviderResponse, UsageCounts};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixtureScore {
    pub title: String,
    /// Name of the pair's first pole; ids are session-specific.
    pub pole_a: String,
    pub score: i64,
    #[serde(default)]
    pub reasoning: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixtureSteer {
    pub from_title: String,
    pub idea: Value,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixtureMerge {
    /// Unordered.
    pub titles: [String; 2],
    pub idea: Value,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StubFixture {
    /// Dimension and idea entries apply when the intent contains this text.
    pub intent_contains: String,
    pub dimension_pairs: Vec<Value>,
    pub idea_batches: Vec<Vec<Value>>,
    pub scores: Vec<FixtureScore>,
    pub steer: Vec<FixtureSteer>,
    pub merge: Vec<FixtureMerge>,
}

impl StubFixture {
    pub fn load(path: &Path) -> Result<Self, ProviderError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ProviderError::Config(format!("cannot read fixture {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| ProviderError::Config(format!("invalid fixture {}: {e}", path.display())))
    }

    fn matches(&self, intent: &str) -> bool {
        !self.intent_contains.is_empty() && intent.to_lowercase().contains(&self.intent_contains.to_lowercase())
    }
}

/// The wearable-health fixture shipped at the workspace root.
pub fn default_fixture_path() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/wearable_health.json")
}

const DIMENSION_POOL: [(&str, &str, &str, &str); 10] = [
    ("Theory-Driven", "Data-Driven", "Starts from explicit models or hypotheses.", "Lets patterns emerge from collected data."),
    ("Novel Methods", "Established Frameworks", "Invents new techniques.", "Builds on proven, well-understood tools."),
    ("HCI-oriented", "AI-oriented", "Centers people, interaction and experience.", "Centers models, algorithms and capability."),
    ("Simple Models", "Complex Models", "Small, interpretable, cheap to run.", "Expressive, data-hungry, costly."),
    ("Short-term Impact", "Long-term Vision", "Near-term, deployable results.", "Foundational work paying off later."),
    ("Individual Focus", "Population Focus", "Tailored to single users.", "Targets groups or society at large."),
    ("Exploratory", "Confirmatory", "Open-ended discovery.", "Tests pre-registered hypotheses."),
    ("Lab Study", "Field Deployment", "Controlled settings.", "Real-world, in-the-wild use."),
    ("Specialized", "General-Purpose", "Solves one well-defined problem.", "Transfers across many problems."),
    ("High Risk High Reward", "Low Risk Incremental", "Ambitious with uncertain payoff.", "Safe, steady improvements."),
];

const APPROACHES: [&str; 12] = [
    "Participatory Design Study",
    "Benchmark Dataset",
    "Simulation Framework",
    "Field Deployment",
    "Formal Model",
    "Interactive Prototype",
    "Longitudinal Diary Study",
    "Meta-Analysis",
    "Federated Pipeline",
    "Causal Inference Study",
    "Crowdsourced Annotation",
    "Mixed-Initiative Toolkit",
];

pub struct StubProvider {
    seed: u64,
    fixture: StubFixture,
}

impl StubProvider {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            fixture: StubFixture::default(),
        }
    }

    pub fn with_fixture(seed: u64, fixture: StubFixture) -> Self {
        Self { seed, fixture }
    }

    fn hash(&self, parts: &[&str]) -> u64 {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        for p in parts {
            h.update(p.as_bytes());
            h.update([0x1f]);
        }
        let digest = h.finalize();
        u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
    }

    /// Deterministic score in [-50, 50].
    pub fn hashed_score(&self, title: &str, dimension_id: &str) -> i64 {
        (self.hash(&["score", title, dimension_id]) % 101) as i64 - 50
    }

    fn answer(&self, request: &ProviderRequest) -> Result<(String, Value), ProviderError> {
        let ctx = &request.context;
        let text = |v: &Value, key: &str| v[key].as_str().unwrap_or_default().to_string();
        let intent = text(ctx, "intent");
        let payload = match request.operation {
            Operation::SuggestDimensions => {
                let count = ctx["count"].as_u64().unwrap_or(5) as usize;
                let mut pairs: Vec<Value> = Vec::new();
                if self.fixture.matches(&intent) {
                    pairs.extend(self.fixture.dimension_pairs.iter().take(count).cloned());
                }
                let offset = (self.hash(&["dimensions", &intent]) % DIMENSION_POOL.len() as u64) as usize;
                let mut k = 0;
                while pairs.len() < count && k < DIMENSION_POOL.len() {
                    let (a, b, da, db) = DIMENSION_POOL[(offset + k) % DIMENSION_POOL.len()];
                    k += 1;
                    if pairs.iter().any(|p| p["dimensionA"] == a || p["dimensionB"] == a) {
                        continue;
                    }
                    pairs.push(json!({
                        "dimensionA": a,
                        "dimensionB": b,
                        "descriptionA": da,
                        "descriptionB": db,
                        "explanation": format!("Research on {intent} must choose between {a} and {b}."),
                    }));
                }
                json!({ "dimension_pairs": pairs })
            }
            Operation::GenerateIdeas => {
                let existing: Vec<String> = ctx["existing_titles"]
                    .as_array()
                    .map(|a| a.iter().filter_map(|v| v.as_str().map(str::to_string)).collect())
                    .unwrap_or_default();
                let batch = existing.len() / 3;
                if self.fixture.matches(&intent) {
                    if let Some(ideas) = self.fixture.idea_batches.get(batch) {
                        return Ok((
                            format!("Batch {} of fixture ideas for the intent.", batch + 1),
                            Value::Array(ideas.clone()),
                        ));
                    }
                }
                let topic: String = intent.split_whitespace().take(6).collect::<Vec<_>>().join(" ");
                let start = self.hash(&["ideas", &intent]) as usize;
                let mut taken: Vec<String> = existing.clone();
                let mut ideas = Vec::new();
                for i in 0..3 {
                    let approach = APPROACHES[(start + batch * 3 + i) % APPROACHES.len()];
                    let base = format!("{approach} for {topic}");
                    let mut title = base.clone();
                    let mut n = 2;
                    while taken.contains(&title) {
                        title = format!("{base} ({n})");
                        n += 1;
                    }
                    taken.push(title.clone());
                    ideas.push(json!({
                        "Name": slug(&title),
                        "Title": title,
                        "Problem": format!(
                            "How can a {} advance {}?\n\nCurrent work leaves this open because evidence is scattered and methods do not transfer.",
                            approach.to_lowercase(), intent
                        ),
                    }));
                }
                Value::Array(ideas)
            }
            Operation::Evaluate => {
                let dims = ctx["dimensions"].as_array().cloned().unwrap_or_default();
                let rows: Vec<Value> = ctx["ideas"]
                    .as_array()
                    .cloned()
                    .unwrap_or_default()
                    .iter()
                    .map(|idea| {
                        let title = text(idea, "title");
                        let mut row = serde_json::Map::new();
                        row.insert("Title".into(), json!(title));
                        for (i, d) in dims.iter().enumerate() {
                            let pole_a = text(d, "pole_a");
                            let (score, reasoning) = match self
                                .fixture
                                .scores
                                .iter()
                                .find(|s| s.title == title && s.pole_a == pole_a)
                            {
                                Some(s) => (s.score, s.reasoning.clone()),
                                None => (
                                    self.hashed_score(&title, &text(d, "id")),
                                    format!("Placement between {} and {}.", pole_a, text(d, "pole_b")),
                                ),
                            };
                            row.insert(format!("Dimension{}Score", i + 1), json!(score));
                            row.insert(format!("Dimension{}Reasoning", i + 1), json!(reasoning));
                        }
                        Value::Object(row)
                    })
                    .collect();
                Value::Array(rows)
            }
            Operation::Steer => {
                let idea = &ctx["idea"];
                let title = text(idea, "title");
                if let Some(f) = self.fixture.steer.iter().find(|s| s.from_title == title) {
                    return Ok(("Applied the fixture rewrite.".into(), f.idea.clone()));
                }
                let mut tags = Vec::new();
                for d in ctx["dimensions"].as_array().cloned().unwrap_or_default() {
                    let id = text(&d, "id");
                    let from = ctx["current"][&id].as_i64().unwrap_or(0);
                    let to = ctx["target"][&id].as_i64().unwrap_or(from);
                    if to != from {
                        tags.push(format!("{id} {:+}", to - from));
                    }
                }
                let new_title = format!("{title} [{}]", tags.join(", "));
                json!({
                    "Name": slug(&new_title),
                    "Title": new_title,
                    "Problem": format!("{}\n\nAdjusted toward the requested balance: {}.", text(idea, "problem"), tags.join(", ")),
                })
            }
            Operation::Merge => {
                let (a, b) = (&ctx["idea_a"], &ctx["idea_b"]);
                let (ta, tb) = (text(a, "title"), text(b, "title"));
                if let Some(f) = self
                    .fixture
                    .merge
                    .iter()
                    .find(|m| (m.titles[0] == ta && m.titles[1] == tb) || (m.titles[0] == tb && m.titles[1] == ta))
                {
                    return Ok(("Applied the fixture merge.".into(), f.idea.clone()));
                }
                let title = format!("{ta} + {tb}");
                json!({
                    "Name": slug(&title),
                    "Title": title,
                    "Problem": format!("{}\n\n{}", text(a, "problem"), text(b, "problem")),
                })
            }
            Operation::IncorporateFragment => {
                let idea = &ctx["idea"];
                let title = format!("{}+frag", text(idea, "title"));
                json!({
                    "Name": slug(&title),
                    "Title": title,
                    "Problem": format!("{}\n\nIncorporates: {}", text(idea, "problem"), text(ctx, "fragment")),
                })
            }
        };
        Ok((format!("Deterministic {:?} response.", request.operation), payload))
    }
}

fn slug(title: &str) -> String {
    let mut s = String::new();
    for c in title.chars() {
        if c.is_ascii_alphanumeric() {
            s.push(c.to_ascii_lowercase());
        } else if !s.ends_with('_') && !s.is_empty() {
            s.push('_');
        }
    }
    s.trim_end_matches('_').to_string()
}

fn render(thought: &str, payload: &Value) -> String {
    let body = serde_json::to_string_pretty(payload).expect("serializable");
    format!("THOUGHT: {thought}\n\n```json\n{body}\n```\n")
}

fn word_count(s: &str) -> u64 {
    s.split_whitespace().count() as u64
}

const STREAM_CHUNK: usize = 48;

fn chunks(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut start = 0;
    while start < text.len() {
        let mut end = (start + STREAM_CHUNK).min(text.len());
        while !text.is_char_boundary(end) {
            end += 1;
        }
        out.push(text[start..end].to_string());
        start = end;
    }
    out
}

#[async_trait]
impl Provider for StubProvider {
    async fn complete(&self, request: &ProviderRequest) -> Result<ProviderResponse, ProviderError> {
        let (thought, payload) = self.answer(request)?;
        let raw_text = render(&thought, &payload);
        Ok(ProviderResponse {
            usage_counts: UsageCounts {
                prompt_tokens: word_count(&request.system_message) + word_count(&request.user_message),
                completion_tokens: word_count(&raw_text),
            },
            raw_text,
            finish_reason: "stop".into(),
        })
    }

    fn complete_stream<'a>(&'a self, request: &'a ProviderRequest) -> BoxStream<'a, Result<String, ProviderError>> {
        match self.answer(request) {
            Ok((thought, payload)) => stream::iter(chunks(&render(&thought, &payload)).into_iter().map(Ok)).boxed(),
            Err(e) => stream::once(async move { Err(e) }).boxed(),
        }
    }
}

/// Returns queued responses in order and records every request.
#[derive(Default)]
pub struct ScriptedProvider {
    queue: Mutex<VecDeque<Result<String, ProviderError>>>,
    seen: Mutex<Vec<ProviderRequest>>,
}

impl ScriptedProvider {
    pub fn new(responses: impl IntoIterator<Item = Result<String, ProviderError>>) -> Self {
        Self {
            queue: Mutex::new(responses.into_iter().collect()),
            seen: Mutex::new(Vec::new()),
        }
    }

    pub fn requests(&self) -> Vec<ProviderRequest> {
        self.seen.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }
}

#[async_trait]
impl Provider for ScriptedProvider {
    async fn complete(&self, request: &ProviderRequest) -> Result<ProviderResponse, ProviderError> {
        self.seen.lock().unwrap_or_else(|e| e.into_inner()).push(request.clone());
        let next = self
            .queue
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .pop_front()
            .unwrap_or_else(|| Err(ProviderError::Transport("script exhausted".into())));
        next.map(|raw_text| ProviderResponse {
            raw_text,
            finish_reason: "stop".into(),
            usage_counts: UsageCounts::default(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn request(operation: Operation, context: Value) -> ProviderRequest {
        ProviderRequest {
            operation,
            system_message: "s".into(),
            user_message: "u".into(),
            temperature: 0.8,
            max_tokens: 100,
            context,
        }
    }

    #[tokio::test]
    async fn identical_requests_identical_text() {
        let p = StubProvider::new(7);
        let r = request(Operation::SuggestDimensions, json!({"intent": "x", "count": 5}));
        let a = p.complete(&r).await.unwrap().raw_text;
        let b = StubProvider::new(7).complete(&r).await.unwrap().raw_text;
        assert_eq!(a, b);
        let c = StubProvider::new(8).complete(&r).await.unwrap().raw_text;
        assert_ne!(a, c);
    }

    #[tokio::test]
    async fn stream_concatenates_to_complete() {
        let p = StubProvider::new(1);
        let r = request(Operation::GenerateIdeas, json!({"intent": "accessible maps für alle", "existing_titles": []}));
        let whole = p.complete(&r).await.unwrap().raw_text;
        let parts: Vec<String> = p.complete_stream(&r).map(|c| c.unwrap()).collect().await;
        assert!(parts.len() > 1);
        assert_eq!(parts.concat(), whole);
    }

    #[test]
    fn hashed_scores_in_range() {
        let p = StubProvider::new(0);
        for i in 0..2000 {
            let s = p.hashed_score(&format!("t{i}"), "dim-0001");
            assert!((-50..=50).contains(&s));
        }
    }

    #[test]
    fn slugs() {
        assert_eq!(slug("Agent-Based Modeling"), "agent_based_modeling");
        assert_eq!(slug("  A + B!"), "a_b");
    }
}
