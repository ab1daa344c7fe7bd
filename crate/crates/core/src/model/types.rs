use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use indexmap::IndexMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::ModelError;

pub type Timestamp = DateTime<Utc>;

pub const SCORE_MIN: i64 = -50;
pub const SCORE_MAX: i64 = 50;

/// Position on a bipolar spectrum: -50 is full alignment with pole A,
/// +50 with pole B, 0 is balanced.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "i64")]
pub struct Score(i8);

impl Score {
    pub const MIN: Score = Score(-50);
    pub const MAX: Score = Score(50);
    pub const ZERO: Score = Score(0);

    pub fn new(value: i64) -> Result<Self, ModelError> {
        if (SCORE_MIN..=SCORE_MAX).contains(&value) {
            Ok(Score(value as i8))
        } else {
            Err(ModelError::Validation(format!(
                "score {value} outside [{SCORE_MIN}, {SCORE_MAX}]"
            )))
        }
    }

    /// Saturating constructor for values that are clamped by contract
    /// (geometry inputs), never for provider output.
    pub fn clamped(value: i64) -> Self {
        Score(value.clamp(SCORE_MIN, SCORE_MAX) as i8)
    }

    pub fn get(self) -> i64 {
        self.0 as i64
    }

    /// Display-only affine view on a 0..=100 spectrum (0 = pole A).
    pub fn as_percent(self) -> u8 {
        (self.0 as i16 + 50) as u8
    }
}

impl TryFrom<i64> for Score {
    type Error = ModelError;

    fn try_from(value: i64) -> Result<Self, Self::Error> {
        Score::new(value)
    }
}

impl From<Score> for i64 {
    fn from(score: Score) -> i64 {
        score.get()
    }
}

impl fmt::Display for Score {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0 > 0 {
            write!(f, "+{}", self.0)
        } else {
            write!(f, "{}", self.0)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Axis::X => "X",
            Axis::Y => "Y",
            Axis::Z => "Z",
        };
        f.write_str(s)
    }
}

impl FromStr for Axis {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "X" | "x" => Ok(Axis::X),
            "Y" | "y" => Ok(Axis::Y),
            "Z" | "z" => Ok(Axis::Z),
            other => Err(ModelError::Validation(format!("unknown axis {other:?}"))),
        }
    }
}

/// `axis` is written as "X" / "Y" / "Z" or "unassigned".
mod axis_slot {
    use super::*;

    pub fn serialize<S: Serializer>(axis: &Option<Axis>, s: S) -> Result<S::Ok, S::Error> {
        match axis {
            Some(a) => a.serialize(s),
            None => s.serialize_str("unassigned"),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Axis>, D::Error> {
        let raw = String::deserialize(d)?;
        match raw.as_str() {
            "unassigned" => Ok(None),
            "X" => Ok(Some(Axis::X)),
            "Y" => Ok(Some(Axis::Y)),
            "Z" => Ok(Some(Axis::Z)),
            other => Err(serde::de::Error::custom(format!(
                "expected one of X, Y, Z, unassigned; got {other:?}"
            ))),
        }
    }
}

/// A bipolar trade-off spectrum between two named poles.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DimensionPair {
    pub id: String,
    pub pole_a_name: String,
    pub pole_a_description: String,
    pub pole_b_name: String,
    pub pole_b_description: String,
    pub explanation: String,
    #[serde(with = "axis_slot")]
    pub axis: Option<Axis>,
    pub enabled: bool,
}

impl DimensionPair {
    pub fn label(&self) -> String {
        format!("{} vs {}", self.pole_a_name, self.pole_b_name)
    }
}

/// Dimension content without identity, as proposed by a model or a user.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DimensionDraft {
    pub pole_a_name: String,
    pub pole_a_description: String,
    pub pole_b_name: String,
    pub pole_b_description: String,
    pub explanation: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisAssignment {
    pub dimension_pair_id: String,
    pub axis: Axis,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreEntry {
    pub score: Score,
    pub reasoning: String,
}

/// One score per dimension pair, keyed by dimension id.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreVector {
    pub entries: IndexMap<String, ScoreEntry>,
}

impl ScoreVector {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, dimension_id: impl Into<String>, score: Score) -> Self {
        self.set(dimension_id, score, String::new());
        self
    }

    pub fn set(&mut self, dimension_id: impl Into<String>, score: Score, reasoning: impl Into<String>) {
        self.entries.insert(
            dimension_id.into(),
            ScoreEntry {
                score,
                reasoning: reasoning.into(),
            },
        );
    }

    pub fn score(&self, dimension_id: &str) -> Option<Score> {
        self.entries.get(dimension_id).map(|e| e.score)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// True when both vectors hold the same score on every key (reasoning ignored).
    pub fn same_scores(&self, other: &ScoreVector) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .all(|(k, e)| other.score(k) == Some(e.score))
    }

    pub fn has_exact_keys<'a>(&self, ids: impl IntoIterator<Item = &'a str>) -> bool {
        let mut n = 0;
        for id in ids {
            if !self.entries.contains_key(id) {
                return false;
            }
            n += 1;
        }
        n == self.entries.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    Seed,
    Steered,
    Merged,
    Fragment,
    /// Reserved. Corrections update scores in place and never create nodes.
    Corrected,
}

impl fmt::Display for EdgeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            EdgeKind::Seed => "seed",
            EdgeKind::Steered => "steered",
            EdgeKind::Merged => "merged",
            EdgeKind::Fragment => "fragment",
            EdgeKind::Corrected => "corrected",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParentLink {
    pub node_or_fragment_id: String,
    pub edge_kind: EdgeKind,
}

impl ParentLink {
    pub fn new(id: impl Into<String>, edge_kind: EdgeKind) -> Self {
        Self {
            node_or_fragment_id: id.into(),
            edge_kind,
        }
    }
}

/// Idea content as produced by a generation primitive.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdeaDraft {
    pub name: String,
    pub title: String,
    pub problem: String,
}

impl IdeaDraft {
    pub fn new(name: impl Into<String>, title: impl Into<String>, problem: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            title: title.into(),
            problem: problem.into(),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        for (field, value) in [("name", &self.name), ("title", &self.title), ("problem", &self.problem)] {
            if value.trim().is_empty() {
                return Err(ModelError::Validation(format!("idea {field} is empty")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdeaNode {
    pub id: String,
    pub name: String,
    pub title: String,
    pub problem: String,
    pub scores: ScoreVector,
    pub parents: Vec<ParentLink>,
    pub origin: EdgeKind,
    pub created_at: Timestamp,
}

impl IdeaNode {
    pub fn draft(&self) -> IdeaDraft {
        IdeaDraft {
            name: self.name.clone(),
            title: self.title.clone(),
            problem: self.problem.clone(),
        }
    }

    /// Everything a fragment may be selected from.
    pub fn contains_text(&self, selection: &str) -> bool {
        self.name.contains(selection) || self.title.contains(selection) || self.problem.contains(selection)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FragmentNode {
    pub id: String,
    pub text: String,
    pub source_idea_id: String,
    pub created_at: Timestamp,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrectionRecord {
    pub node_id: String,
    pub dimension_pair_id: String,
    pub old_score: Score,
    pub new_score: Score,
    pub timestamp: Timestamp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    SessionCreated,
    DragStart,
    DragEnd,
    PostDragChoice,
    IdeaGenerated,
    Merge,
    FragmentCreated,
    FragmentApplied,
    Rotation,
    DimensionToggle,
    ViewChange,
    ScoreCorrection,
}

impl EventKind {
    pub const ALL: [EventKind; 12] = [
        EventKind::SessionCreated,
        EventKind::DragStart,
        EventKind::DragEnd,
        EventKind::PostDragChoice,
        EventKind::IdeaGenerated,
        EventKind::Merge,
        EventKind::FragmentCreated,
        EventKind::FragmentApplied,
        EventKind::Rotation,
        EventKind::DimensionToggle,
        EventKind::ViewChange,
        EventKind::ScoreCorrection,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::SessionCreated => "session_created",
            EventKind::DragStart => "drag_start",
            EventKind::DragEnd => "drag_end",
            EventKind::PostDragChoice => "post_drag_choice",
            EventKind::IdeaGenerated => "idea_generated",
            EventKind::Merge => "merge",
            EventKind::FragmentCreated => "fragment_created",
            EventKind::FragmentApplied => "fragment_applied",
            EventKind::Rotation => "rotation",
            EventKind::DimensionToggle => "dimension_toggle",
            EventKind::ViewChange => "view_change",
            EventKind::ScoreCorrection => "score_correction",
        }
    }

    /// `session_created` is written by the service only.
    pub fn client_may_send(self) -> bool {
        self != EventKind::SessionCreated
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EventKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EventKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| ModelError::Validation(format!("unknown event kind {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventSource {
    Server,
    Client,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InteractionEvent {
    pub kind: EventKind,
    pub payload: serde_json::Value,
    pub timestamp: Timestamp,
    pub source: EventSource,
}

impl InteractionEvent {
    pub fn server(kind: EventKind, payload: serde_json::Value, timestamp: Timestamp) -> Self {
        Self {
            kind,
            payload,
            timestamp,
            source: EventSource::Server,
        }
    }

    pub fn client(kind: EventKind, payload: serde_json::Value, timestamp: Timestamp) -> Self {
        Self {
            kind,
            payload,
            timestamp,
            source: EventSource::Client,
        }
    }
}
