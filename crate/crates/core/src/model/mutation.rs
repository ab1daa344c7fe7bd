use serde::{Deserialize, Serialize};

use super::{
    Axis, AxisAssignment, CorrectionRecord, DimensionPair, FragmentNode, IdeaNode, InteractionEvent,
    ScoreVector, Timestamp,
};

/// A fully resolved state change. Ids and timestamps are fixed at
/// preparation time so that applying a mutation is deterministic.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Mutation {
    Created {
        id: String,
        intent: String,
        at: Timestamp,
    },
    CandidatesAdded {
        pairs: Vec<DimensionPair>,
    },
    DimensionsSelected {
        assignments: Vec<AxisAssignment>,
        at: Timestamp,
    },
    AxisToggled {
        axis: Axis,
        enabled: bool,
        at: Timestamp,
    },
    IdeaAdded {
        node: IdeaNode,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        request_token: Option<String>,
    },
    FragmentCreated {
        fragment: FragmentNode,
    },
    ScoresCorrected {
        node_id: String,
        scores: ScoreVector,
        records: Vec<CorrectionRecord>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        request_token: Option<String>,
        at: Timestamp,
    },
    ScoresReevaluated {
        node_id: String,
        scores: ScoreVector,
        at: Timestamp,
    },
    EventsRecorded {
        events: Vec<InteractionEvent>,
    },
}

impl Mutation {
    /// Id of the node or fragment this mutation created or changed, if any.
    pub fn subject_id(&self) -> Option<&str> {
        match self {
            Mutation::Created { id, .. } => Some(id),
            Mutation::IdeaAdded { node, .. } => Some(&node.id),
            Mutation::FragmentCreated { fragment } => Some(&fragment.id),
            Mutation::ScoresCorrected { node_id, .. } | Mutation::ScoresReevaluated { node_id, .. } => {
                Some(node_id)
            }
            _ => None,
        }
    }
}
