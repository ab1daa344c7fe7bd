use std::collections::{BTreeMap, HashMap, HashSet};

use chrono::Utc;
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{
    Axis, AxisAssignment, CorrectionRecord, DimensionDraft, DimensionPair, EdgeKind, EventKind, EventSource,
    FragmentNode, IdeaDraft, IdeaNode, InteractionEvent, ModelError, Mutation, ParentLink,
    ScoreVector, Timestamp,
};

pub const MAX_SELECTED_DIMENSIONS: usize = 3;

/// One ideation workspace.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Session {
    pub(super) id: String,
    pub(super) intent: String,
    pub(super) dimension_candidates: Vec<DimensionPair>,
    pub(super) selected_dimensions: Vec<AxisAssignment>,
    pub(super) nodes: IndexMap<String, IdeaNode>,
    pub(super) fragments: IndexMap<String, FragmentNode>,
    pub(super) corrections: Vec<CorrectionRecord>,
    pub(super) events: Vec<InteractionEvent>,
    pub(super) created_at: Timestamp,
    /// Idempotency token -> id of the node the tokenized request produced.
    pub(super) request_tokens: BTreeMap<String, String>,
}

/// Input for adding an idea node. Ids and timestamps are assigned by the session.
#[derive(Clone, Debug, PartialEq)]
pub struct NewIdea {
    pub content: IdeaDraft,
    pub scores: ScoreVector,
    pub parents: Vec<ParentLink>,
    pub origin: EdgeKind,
    pub request_token: Option<String>,
}

impl NewIdea {
    pub fn seed(content: IdeaDraft, scores: ScoreVector) -> Self {
        Self {
            content,
            scores,
            parents: Vec::new(),
            origin: EdgeKind::Seed,
            request_token: None,
        }
    }

    pub fn steered(parent: &str, content: IdeaDraft, scores: ScoreVector) -> Self {
        Self {
            content,
            scores,
            parents: vec![ParentLink::new(parent, EdgeKind::Steered)],
            origin: EdgeKind::Steered,
            request_token: None,
        }
    }

    pub fn merged(a: &str, b: &str, content: IdeaDraft, scores: ScoreVector) -> Self {
        Self {
            content,
            scores,
            parents: vec![
                ParentLink::new(a, EdgeKind::Merged),
                ParentLink::new(b, EdgeKind::Merged),
            ],
            origin: EdgeKind::Merged,
            request_token: None,
        }
    }

    pub fn from_fragment(idea: &str, fragment: &str, content: IdeaDraft, scores: ScoreVector) -> Self {
        Self {
            content,
            scores,
            parents: vec![
                ParentLink::new(idea, EdgeKind::Fragment),
                ParentLink::new(fragment, EdgeKind::Fragment),
            ],
            origin: EdgeKind::Fragment,
            request_token: None,
        }
    }

    pub fn with_token(mut self, token: Option<String>) -> Self {
        self.request_token = token;
        self
    }
}

/// One ancestor in a lineage walk: the ancestor's id and the kind of edge
/// through which it was first reached.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineageEntry {
    pub id: String,
    pub edge_kind: EdgeKind,
}

impl Session {
    /// Starts a new session. The returned mutation is the first journal record.
    pub fn create(id: impl Into<String>, intent: &str) -> Result<(Session, Mutation), ModelError> {
        let mutation = Mutation::Created {
            id: id.into(),
            intent: intent.trim().to_string(),
            at: Utc::now(),
        };
        let session = Session::from_created(&mutation)?;
        Ok((session, mutation))
    }

    /// Rebuilds a session from its `Created` record.
    pub fn from_created(mutation: &Mutation) -> Result<Session, ModelError> {
        let Mutation::Created { id, intent, at } = mutation else {
            return Err(ModelError::Integrity(
                "session journal must start with a created record".into(),
            ));
        };
        if intent.trim().is_empty() {
            return Err(ModelError::invalid("intent must not be empty"));
        }
        if id.is_empty() {
            return Err(ModelError::invalid("session id must not be empty"));
        }
        Ok(Session {
            id: id.clone(),
            intent: intent.clone(),
            dimension_candidates: Vec::new(),
            selected_dimensions: Vec::new(),
            nodes: IndexMap::new(),
            fragments: IndexMap::new(),
            corrections: Vec::new(),
            events: vec![InteractionEvent::server(
                EventKind::SessionCreated,
                json!({ "intent": intent }),
                *at,
            )],
            created_at: *at,
            request_tokens: BTreeMap::new(),
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn intent(&self) -> &str {
        &self.intent
    }

    pub fn created_at(&self) -> Timestamp {
        self.created_at
    }

    pub fn dimension_candidates(&self) -> &[DimensionPair] {
        &self.dimension_candidates
    }

    pub fn selected_dimensions(&self) -> &[AxisAssignment] {
        &self.selected_dimensions
    }

    pub fn dimension(&self, id: &str) -> Option<&DimensionPair> {
        self.dimension_candidates.iter().find(|d| d.id == id)
    }

    /// Selected pairs in axis-assignment order.
    pub fn selected_pairs(&self) -> Vec<&DimensionPair> {
        self.selected_dimensions
            .iter()
            .filter_map(|a| self.dimension(&a.dimension_pair_id))
            .collect()
    }

    /// Pair currently enabled on `axis`, if any.
    pub fn enabled_pair(&self, axis: Axis) -> Option<&DimensionPair> {
        self.dimension_candidates
            .iter()
            .find(|d| d.enabled && d.axis == Some(axis))
    }

    pub fn nodes(&self) -> impl ExactSizeIterator<Item = &IdeaNode> {
        self.nodes.values()
    }

    pub fn node(&self, id: &str) -> Option<&IdeaNode> {
        self.nodes.get(id)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn fragments(&self) -> impl ExactSizeIterator<Item = &FragmentNode> {
        self.fragments.values()
    }

    pub fn fragment(&self, id: &str) -> Option<&FragmentNode> {
        self.fragments.get(id)
    }

    pub fn corrections(&self) -> &[CorrectionRecord] {
        &self.corrections
    }

    pub fn events(&self) -> &[InteractionEvent] {
        &self.events
    }

    pub fn request_tokens(&self) -> &BTreeMap<String, String> {
        &self.request_tokens
    }

    /// Node id produced earlier under `token`, if any.
    pub fn token_outcome(&self, token: &str) -> Option<&str> {
        self.request_tokens.get(token).map(String::as_str)
    }

    fn last_timestamp(&self) -> Timestamp {
        self.events.last().map(|e| e.timestamp).unwrap_or(self.created_at)
    }

    /// Wall clock, held back from running behind the log tail.
    fn stamp(&self) -> Timestamp {
        Utc::now().max(self.last_timestamp())
    }

    fn fresh_id(&self, prefix: &str, start: usize) -> String {
        let mut n = start;
        loop {
            let id = format!("{prefix}-{n:04}");
            if !self.nodes.contains_key(&id)
                && !self.fragments.contains_key(&id)
                && self.dimension(&id).is_none()
            {
                return id;
            }
            n += 1;
        }
    }

    // ---- preparation --------------------------------------------------

    pub fn prepare_add_candidates(&self, drafts: Vec<DimensionDraft>) -> Result<Mutation, ModelError> {
        let mut pairs = Vec::with_capacity(drafts.len());
        let mut next = self.dimension_candidates.len() + 1;
        for draft in drafts {
            let mut id = self.fresh_id("dim", next);
            while pairs.iter().any(|p: &DimensionPair| p.id == id) {
                next += 1;
                id = self.fresh_id("dim", next);
            }
            next += 1;
            pairs.push(DimensionPair {
                id,
                pole_a_name: draft.pole_a_name,
                pole_a_description: draft.pole_a_description,
                pole_b_name: draft.pole_b_name,
                pole_b_description: draft.pole_b_description,
                explanation: draft.explanation,
                axis: None,
                enabled: false,
            });
        }
        let m = Mutation::CandidatesAdded { pairs };
        self.check(&m)?;
        Ok(m)
    }

    pub fn prepare_select_dimensions(&self, assignments: &[AxisAssignment]) -> Result<Mutation, ModelError> {
        let m = Mutation::DimensionsSelected {
            assignments: assignments.to_vec(),
            at: self.stamp(),
        };
        self.check(&m)?;
        Ok(m)
    }

    pub fn prepare_set_axis_enabled(&self, axis: Axis, enabled: bool) -> Result<Mutation, ModelError> {
        let m = Mutation::AxisToggled {
            axis,
            enabled,
            at: self.stamp(),
        };
        self.check(&m)?;
        Ok(m)
    }

    pub fn prepare_add_idea(&self, idea: NewIdea) -> Result<Mutation, ModelError> {
        let m = Mutation::IdeaAdded {
            node: IdeaNode {
                id: self.fresh_id("idea", self.nodes.len() + 1),
                name: idea.content.name,
                title: idea.content.title,
                problem: idea.content.problem,
                scores: idea.scores,
                parents: idea.parents,
                origin: idea.origin,
                created_at: self.stamp(),
            },
            request_token: idea.request_token,
        };
        self.check(&m)?;
        Ok(m)
    }

    pub fn prepare_fragment(&self, source_idea_id: &str, selection: &str) -> Result<Mutation, ModelError> {
        let m = Mutation::FragmentCreated {
            fragment: FragmentNode {
                id: self.fresh_id("frag", self.fragments.len() + 1),
                text: selection.to_string(),
                source_idea_id: source_idea_id.to_string(),
                created_at: self.stamp(),
            },
        };
        self.check(&m)?;
        Ok(m)
    }

    /// Replaces a node's scores with user-supplied ones, recording one
    /// correction per dimension whose score changed.
    pub fn prepare_correction(
        &self,
        node_id: &str,
        new_scores: &ScoreVector,
        request_token: Option<String>,
    ) -> Result<Mutation, ModelError> {
        let node = self
            .nodes
            .get(node_id)
            .ok_or_else(|| ModelError::not_found("node", node_id))?;
        let at = self.stamp();
        let mut scores = ScoreVector::new();
        let mut records = Vec::new();
        for (dim, entry) in &new_scores.entries {
            let old = node.scores.entries.get(dim);
            let reasoning = if !entry.reasoning.trim().is_empty() {
                entry.reasoning.clone()
            } else if let Some(old) = old.filter(|o| o.score == entry.score) {
                old.reasoning.clone()
            } else {
                "corrected by user".to_string()
            };
            scores.set(dim.clone(), entry.score, reasoning);
            if let Some(old) = old.filter(|o| o.score != entry.score) {
                records.push(CorrectionRecord {
                    node_id: node_id.to_string(),
                    dimension_pair_id: dim.clone(),
                    old_score: old.score,
                    new_score: entry.score,
                    timestamp: at,
                });
            }
        }
        let m = Mutation::ScoresCorrected {
            node_id: node_id.to_string(),
            scores,
            records,
            request_token,
            at,
        };
        self.check(&m)?;
        Ok(m)
    }

    /// Replaces a node's scores after an explicit re-evaluation pass.
    pub fn prepare_reevaluation(&self, node_id: &str, scores: ScoreVector) -> Result<Mutation, ModelError> {
        let m = Mutation::ScoresReevaluated {
            node_id: node_id.to_string(),
            scores,
            at: self.stamp(),
        };
        self.check(&m)?;
        Ok(m)
    }

    /// Client events are appended as a unit or not at all.
    pub fn prepare_events(&self, events: Vec<InteractionEvent>) -> Result<Mutation, ModelError> {
        let m = Mutation::EventsRecorded { events };
        self.check(&m)?;
        Ok(m)
    }

    // ---- validation -----------------------------------------------------

    fn check_not_before(&self, at: Timestamp) -> Result<(), ModelError> {
        if at < self.last_timestamp() {
            return Err(ModelError::invalid(format!(
                "timestamp {at} precedes the last logged event ({})",
                self.last_timestamp()
            )));
        }
        Ok(())
    }

    fn check_scores_cover_selection(&self, scores: &ScoreVector) -> Result<(), ModelError> {
        if self.selected_dimensions.is_empty() {
            return Err(ModelError::invalid("no dimensions selected"));
        }
        let selected = self.selected_dimensions.iter().map(|a| a.dimension_pair_id.as_str());
        if !scores.has_exact_keys(selected) {
            let have: Vec<_> = scores.keys().collect();
            let want: Vec<_> = self
                .selected_dimensions
                .iter()
                .map(|a| a.dimension_pair_id.as_str())
                .collect();
            return Err(ModelError::invalid(format!(
                "scores cover {have:?} but selected dimensions are {want:?}"
            )));
        }
        Ok(())
    }

    /// Validates a mutation against the current state without applying it.
    pub fn check(&self, m: &Mutation) -> Result<(), ModelError> {
        match m {
            Mutation::Created { .. } => Err(ModelError::Integrity(
                "session already created".into(),
            )),
            Mutation::CandidatesAdded { pairs } => {
                let mut seen = HashSet::new();
                for p in pairs {
                    validate_pair_content(p)?;
                    if self.dimension(&p.id).is_some() || !seen.insert(p.id.as_str()) {
                        return Err(ModelError::Integrity(format!("duplicate dimension id {}", p.id)));
                    }
                    if p.axis.is_some() || p.enabled {
                        return Err(ModelError::invalid("new candidates start unassigned"));
                    }
                }
                Ok(())
            }
            Mutation::DimensionsSelected { assignments, at } => {
                self.check_not_before(*at)?;
                if assignments.is_empty() || assignments.len() > MAX_SELECTED_DIMENSIONS {
                    return Err(ModelError::invalid(format!(
                        "select between 1 and {MAX_SELECTED_DIMENSIONS} dimension pairs, got {}",
                        assignments.len()
                    )));
                }
                let mut axes = HashSet::new();
                let mut ids = HashSet::new();
                for a in assignments {
                    if !axes.insert(a.axis) {
                        return Err(ModelError::invalid(format!("axis {} assigned twice", a.axis)));
                    }
                    if !ids.insert(a.dimension_pair_id.as_str()) {
                        return Err(ModelError::invalid(format!(
                            "dimension {} assigned twice",
                            a.dimension_pair_id
                        )));
                    }
                    if self.dimension(&a.dimension_pair_id).is_none() {
                        return Err(ModelError::not_found("dimension", &a.dimension_pair_id));
                    }
                }
                Ok(())
            }
            Mutation::AxisToggled { axis, enabled, at } => {
                self.check_not_before(*at)?;
                if !self.selected_dimensions.iter().any(|a| a.axis == *axis) {
                    return Err(ModelError::invalid(format!("no dimension assigned to axis {axis}")));
                }
                if !enabled {
                    let remaining = self
                        .dimension_candidates
                        .iter()
                        .filter(|d| d.enabled && d.axis != Some(*axis))
                        .count();
                    if remaining == 0 {
                        return Err(ModelError::invalid("at least one axis must stay enabled"));
                    }
                }
                Ok(())
            }
            Mutation::IdeaAdded { node, request_token } => {
                self.check_not_before(node.created_at)?;
                if self.nodes.contains_key(&node.id) || self.fragments.contains_key(&node.id) {
                    return Err(ModelError::Integrity(format!("duplicate node id {}", node.id)));
                }
                if let Some(token) = request_token {
                    if self.request_tokens.contains_key(token) {
                        return Err(ModelError::Integrity(format!("request token {token:?} already used")));
                    }
                }
                node.draft().validate()?;
                self.check_parents(node)?;
                self.check_scores_cover_selection(&node.scores)
            }
            Mutation::FragmentCreated { fragment } => {
                self.check_not_before(fragment.created_at)?;
                if fragment.text.trim().is_empty() {
                    return Err(ModelError::invalid("fragment selection is blank"));
                }
                if self.fragments.contains_key(&fragment.id) || self.nodes.contains_key(&fragment.id) {
                    return Err(ModelError::Integrity(format!("duplicate fragment id {}", fragment.id)));
                }
                let source = self
                    .nodes
                    .get(&fragment.source_idea_id)
                    .ok_or_else(|| ModelError::not_found("node", &fragment.source_idea_id))?;
                if !source.contains_text(&fragment.text) {
                    return Err(ModelError::invalid(
                        "fragment text is not a verbatim substring of its source idea",
                    ));
                }
                Ok(())
            }
            Mutation::ScoresCorrected {
                node_id,
                scores,
                records,
                request_token,
                at,
            } => {
                self.check_not_before(*at)?;
                let node = self
                    .nodes
                    .get(node_id)
                    .ok_or_else(|| ModelError::not_found("node", node_id))?;
                if let Some(token) = request_token {
                    if self.request_tokens.contains_key(token) {
                        return Err(ModelError::Integrity(format!("request token {token:?} already used")));
                    }
                }
                self.check_scores_cover_selection(scores)?;
                for r in records {
                    if &r.node_id != node_id || self.dimension(&r.dimension_pair_id).is_none() {
                        return Err(ModelError::Integrity("correction record does not match".into()));
                    }
                    if node.scores.score(&r.dimension_pair_id) != Some(r.old_score)
                        || scores.score(&r.dimension_pair_id) != Some(r.new_score)
                    {
                        return Err(ModelError::Integrity("correction record scores do not match".into()));
                    }
                }
                Ok(())
            }
            Mutation::ScoresReevaluated { node_id, scores, at } => {
                self.check_not_before(*at)?;
                if !self.nodes.contains_key(node_id) {
                    return Err(ModelError::not_found("node", node_id));
                }
                self.check_scores_cover_selection(scores)
            }
            Mutation::EventsRecorded { events } => {
                let mut last = self.last_timestamp();
                for e in events {
                    if e.source == EventSource::Client && !e.kind.client_may_send() {
                        return Err(ModelError::invalid(format!("event kind {} is recorded by the service only", e.kind)));
                    }
                    if e.timestamp < last {
                        return Err(ModelError::invalid(format!(
                            "event timestamps out of order: {} after {}",
                            e.timestamp, last
                        )));
                    }
                    last = e.timestamp;
                }
                Ok(())
            }
        }
    }

    fn check_parents(&self, node: &IdeaNode) -> Result<(), ModelError> {
        let mut ideas = 0;
        let mut fragments = 0;
        let mut seen = HashSet::new();
        for link in &node.parents {
            let pid = &link.node_or_fragment_id;
            if pid == &node.id {
                return Err(ModelError::Integrity(format!("node {} would be its own parent", node.id)));
            }
            if !seen.insert(pid.as_str()) {
                return Err(ModelError::invalid(format!("parent {pid} listed twice")));
            }
            if link.edge_kind != node.origin {
                return Err(ModelError::invalid(format!(
                    "edge kind {} does not match origin {}",
                    link.edge_kind, node.origin
                )));
            }
            if self.nodes.contains_key(pid) {
                ideas += 1;
            } else if self.fragments.contains_key(pid) {
                fragments += 1;
            } else {
                return Err(ModelError::not_found("parent", pid));
            }
        }
        let (want_ideas, want_fragments) = match node.origin {
            EdgeKind::Seed => (0, 0),
            EdgeKind::Steered | EdgeKind::Corrected => (1, 0),
            EdgeKind::Merged => (2, 0),
            EdgeKind::Fragment => (1, 1),
        };
        if ideas != want_ideas || fragments != want_fragments {
            return Err(ModelError::invalid(format!(
                "{} node needs {want_ideas} idea parent(s) and {want_fragments} fragment parent(s), got {ideas} and {fragments}",
                node.origin
            )));
        }
        if self.reaches(&node.parents, &node.id) {
            return Err(ModelError::Integrity(format!("adding {} would create a cycle", node.id)));
        }
        Ok(())
    }

    /// Whether `target` is reachable by walking up from `from`.
    fn reaches(&self, from: &[ParentLink], target: &str) -> bool {
        let mut stack: Vec<&str> = from.iter().map(|l| l.node_or_fragment_id.as_str()).collect();
        let mut seen = HashSet::new();
        while let Some(id) = stack.pop() {
            if id == target {
                return true;
            }
            if !seen.insert(id) {
                continue;
            }
            for p in self.parent_ids(id) {
                stack.push(p);
            }
        }
        false
    }

    /// Provenance parents of an idea or fragment. A fragment's parent is its
    /// source idea.
    fn parent_ids<'a>(&'a self, id: &str) -> Vec<&'a str> {
        if let Some(n) = self.nodes.get(id) {
            n.parents.iter().map(|l| l.node_or_fragment_id.as_str()).collect()
        } else if let Some(f) = self.fragments.get(id) {
            vec![f.source_idea_id.as_str()]
        } else {
            Vec::new()
        }
    }

    // ---- application ----------------------------------------------------

    /// Validates and applies a mutation. On error the session is unchanged.
    pub fn apply(&mut self, m: &Mutation) -> Result<(), ModelError> {
        self.check(m)?;
        match m.clone() {
            Mutation::Created { .. } => unreachable!("rejected by check"),
            Mutation::CandidatesAdded { pairs } => {
                self.dimension_candidates.extend(pairs);
            }
            Mutation::DimensionsSelected { assignments, .. } => {
                for d in &mut self.dimension_candidates {
                    match assignments.iter().find(|a| a.dimension_pair_id == d.id) {
                        Some(a) => {
                            d.axis = Some(a.axis);
                            d.enabled = true;
                        }
                        None => {
                            d.axis = None;
                            d.enabled = false;
                        }
                    }
                }
                self.selected_dimensions = assignments;
            }
            Mutation::AxisToggled { axis, enabled, at } => {
                for d in &mut self.dimension_candidates {
                    if d.axis == Some(axis) {
                        d.enabled = enabled;
                    }
                }
                self.events.push(InteractionEvent::server(
                    EventKind::DimensionToggle,
                    json!({ "axis": axis, "enabled": enabled }),
                    at,
                ));
            }
            Mutation::IdeaAdded { node, request_token } => {
                let at = node.created_at;
                let parents: Vec<&str> = node
                    .parents
                    .iter()
                    .map(|l| l.node_or_fragment_id.as_str())
                    .collect();
                self.events.push(InteractionEvent::server(
                    EventKind::IdeaGenerated,
                    json!({ "node_id": node.id, "origin": node.origin, "parents": parents }),
                    at,
                ));
                match node.origin {
                    EdgeKind::Merged => self.events.push(InteractionEvent::server(
                        EventKind::Merge,
                        json!({ "node_id": node.id, "parents": parents }),
                        at,
                    )),
                    EdgeKind::Fragment => {
                        let fragment = parents.iter().find(|p| self.fragments.contains_key(**p));
                        let idea = parents.iter().find(|p| self.nodes.contains_key(**p));
                        self.events.push(InteractionEvent::server(
                            EventKind::FragmentApplied,
                            json!({ "node_id": node.id, "fragment_id": fragment, "target_id": idea }),
                            at,
                        ));
                    }
                    _ => {}
                }
                if let Some(token) = request_token {
                    self.request_tokens.insert(token, node.id.clone());
                }
                self.nodes.insert(node.id.clone(), node);
            }
            Mutation::FragmentCreated { fragment } => {
                self.events.push(InteractionEvent::server(
                    EventKind::FragmentCreated,
                    json!({ "fragment_id": fragment.id, "source_idea_id": fragment.source_idea_id }),
                    fragment.created_at,
                ));
                self.fragments.insert(fragment.id.clone(), fragment);
            }
            Mutation::ScoresCorrected {
                node_id,
                scores,
                records,
                request_token,
                at,
            } => {
                let changes: Vec<_> = records
                    .iter()
                    .map(|r| {
                        json!({
                            "dimension_pair_id": r.dimension_pair_id,
                            "old_score": r.old_score,
                            "new_score": r.new_score,
                        })
                    })
                    .collect();
                self.events.push(InteractionEvent::server(
                    EventKind::ScoreCorrection,
                    json!({ "node_id": node_id, "changes": changes }),
                    at,
                ));
                self.corrections.extend(records);
                if let Some(token) = request_token {
                    self.request_tokens.insert(token, node_id.clone());
                }
                if let Some(node) = self.nodes.get_mut(&node_id) {
                    node.scores = scores;
                }
            }
            Mutation::ScoresReevaluated { node_id, scores, .. } => {
                if let Some(node) = self.nodes.get_mut(&node_id) {
                    node.scores = scores;
                }
            }
            Mutation::EventsRecorded { events } => {
                self.events.extend(events);
            }
        }
        Ok(())
    }

    // ---- convenience wrappers (prepare + apply) ---------------------------

    pub fn add_candidates(&mut self, drafts: Vec<DimensionDraft>) -> Result<Vec<String>, ModelError> {
        let m = self.prepare_add_candidates(drafts)?;
        let ids = match &m {
            Mutation::CandidatesAdded { pairs } => pairs.iter().map(|p| p.id.clone()).collect(),
            _ => unreachable!(),
        };
        self.apply(&m)?;
        Ok(ids)
    }

    pub fn select_dimensions(&mut self, assignments: &[AxisAssignment]) -> Result<(), ModelError> {
        let m = self.prepare_select_dimensions(assignments)?;
        self.apply(&m)
    }

    /// Returns the axes enabled after the change.
    pub fn set_dimension_enabled(&mut self, axis: Axis, enabled: bool) -> Result<Vec<Axis>, ModelError> {
        let m = self.prepare_set_axis_enabled(axis, enabled)?;
        self.apply(&m)?;
        Ok(Axis::ALL
            .into_iter()
            .filter(|a| self.enabled_pair(*a).is_some())
            .collect())
    }

    pub fn add_idea(&mut self, idea: NewIdea) -> Result<String, ModelError> {
        let m = self.prepare_add_idea(idea)?;
        self.apply(&m)?;
        Ok(m.subject_id().unwrap_or_default().to_string())
    }

    pub fn create_fragment(&mut self, source_idea_id: &str, selection: &str) -> Result<String, ModelError> {
        let m = self.prepare_fragment(source_idea_id, selection)?;
        self.apply(&m)?;
        Ok(m.subject_id().unwrap_or_default().to_string())
    }

    pub fn correct_scores(&mut self, node_id: &str, new_scores: &ScoreVector) -> Result<(), ModelError> {
        let m = self.prepare_correction(node_id, new_scores, None)?;
        self.apply(&m)
    }

    pub fn record_event(&mut self, event: InteractionEvent) -> Result<(), ModelError> {
        let m = self.prepare_events(vec![event])?;
        self.apply(&m)
    }

    // ---- queries ------------------------------------------------------------

    /// Ancestors of a node, parents before children, each listed once.
    ///
    /// Fragment parents are included and continue to their source idea.
    pub fn lineage(&self, node_id: &str) -> Result<Vec<LineageEntry>, ModelError> {
        if !self.nodes.contains_key(node_id) {
            return Err(ModelError::not_found("node", node_id));
        }
        let mut out = Vec::new();
        let mut done: HashSet<String> = HashSet::new();
        done.insert(node_id.to_string());
        // Iterative post-order DFS over parent links in listed order.
        let mut stack: Vec<(String, EdgeKind, usize)> = Vec::new();
        let mut reached_via: HashMap<String, EdgeKind> = HashMap::new();
        let roots = self.parent_links(node_id);
        for (pid, kind) in roots.into_iter().rev() {
            stack.push((pid, kind, 0));
        }
        let mut on_path: HashSet<String> = HashSet::new();
        while let Some((id, kind, visited)) = stack.pop() {
            if visited == 0 {
                if done.contains(&id) || on_path.contains(&id) {
                    continue;
                }
                reached_via.entry(id.clone()).or_insert(kind);
                on_path.insert(id.clone());
                stack.push((id.clone(), kind, 1));
                for (pid, pkind) in self.parent_links(&id).into_iter().rev() {
                    if !done.contains(&pid) {
                        stack.push((pid, pkind, 0));
                    }
                }
            } else {
                on_path.remove(&id);
                if done.insert(id.clone()) {
                    let edge_kind = reached_via[&id];
                    out.push(LineageEntry { id, edge_kind });
                }
            }
        }
        Ok(out)
    }

    fn parent_links(&self, id: &str) -> Vec<(String, EdgeKind)> {
        if let Some(n) = self.nodes.get(id) {
            n.parents
                .iter()
                .map(|l| (l.node_or_fragment_id.clone(), l.edge_kind))
                .collect()
        } else if let Some(f) = self.fragments.get(id) {
            vec![(f.source_idea_id.clone(), EdgeKind::Fragment)]
        } else {
            Vec::new()
        }
    }

    /// Checks every structural invariant of the session.
    pub fn verify(&self) -> Result<(), ModelError> {
        if self.intent.trim().is_empty() {
            return Err(ModelError::invalid("intent must not be empty"));
        }
        let mut ids = HashSet::new();
        for d in &self.dimension_candidates {
            validate_pair_content(d)?;
            if !ids.insert(d.id.as_str()) {
                return Err(ModelError::Integrity(format!("duplicate dimension id {}", d.id)));
            }
        }
        if self.selected_dimensions.len() > MAX_SELECTED_DIMENSIONS {
            return Err(ModelError::Integrity("more than three dimensions selected".into()));
        }
        let mut axes = HashSet::new();
        for a in &self.selected_dimensions {
            if !axes.insert(a.axis) {
                return Err(ModelError::Integrity(format!("axis {} assigned twice", a.axis)));
            }
            let d = self
                .dimension(&a.dimension_pair_id)
                .ok_or_else(|| ModelError::not_found("dimension", &a.dimension_pair_id))?;
            if d.axis != Some(a.axis) {
                return Err(ModelError::Integrity(format!("dimension {} axis mismatch", d.id)));
            }
        }
        let mut enabled_axes = HashSet::new();
        for d in &self.dimension_candidates {
            let selected = self
                .selected_dimensions
                .iter()
                .any(|a| a.dimension_pair_id == d.id);
            if !selected && (d.axis.is_some() || d.enabled) {
                return Err(ModelError::Integrity(format!("unselected dimension {} is active", d.id)));
            }
            if d.enabled && !enabled_axes.insert(d.axis) {
                return Err(ModelError::Integrity("two enabled pairs on one axis".into()));
            }
        }
        if !self.selected_dimensions.is_empty() && enabled_axes.is_empty() {
            return Err(ModelError::Integrity("every axis is disabled".into()));
        }

        // Idea parents must precede their children in creation order.
        let mut known_ideas: HashSet<&str> = HashSet::new();
        for node in self.nodes.values() {
            node.draft().validate()?;
            if node.scores.is_empty() || node.scores.len() > MAX_SELECTED_DIMENSIONS {
                return Err(ModelError::Integrity(format!("node {} has {} scores", node.id, node.scores.len())));
            }
            let (mut ideas, mut frags) = (0, 0);
            for link in &node.parents {
                if link.edge_kind != node.origin {
                    return Err(ModelError::Integrity(format!("node {} edge kind mismatch", node.id)));
                }
                let pid = link.node_or_fragment_id.as_str();
                if known_ideas.contains(pid) {
                    ideas += 1;
                } else if self.fragments.contains_key(pid) {
                    frags += 1;
                } else {
                    return Err(ModelError::Integrity(format!(
                        "node {} references unknown or later parent {pid}",
                        node.id
                    )));
                }
            }
            let arity_ok = match node.origin {
                EdgeKind::Seed => ideas == 0 && frags == 0,
                EdgeKind::Steered | EdgeKind::Corrected => ideas == 1 && frags == 0,
                EdgeKind::Merged => ideas == 2 && frags == 0,
                EdgeKind::Fragment => ideas == 1 && frags == 1,
            };
            if !arity_ok || node.parents.len() != ideas + frags {
                return Err(ModelError::Integrity(format!("node {} violates parent arity", node.id)));
            }
            if !known_ideas.insert(node.id.as_str()) {
                return Err(ModelError::Integrity(format!("duplicate node id {}", node.id)));
            }
        }
        for f in self.fragments.values() {
            if f.text.trim().is_empty() {
                return Err(ModelError::Integrity(format!("fragment {} is blank", f.id)));
            }
            let source = self
                .nodes
                .get(&f.source_idea_id)
                .ok_or_else(|| ModelError::not_found("node", &f.source_idea_id))?;
            if !source.contains_text(&f.text) {
                return Err(ModelError::Integrity(format!("fragment {} is not in its source", f.id)));
            }
        }
        // Full acyclicity over the combined idea/fragment graph.
        for id in self.nodes.keys().chain(self.fragments.keys()) {
            let links: Vec<ParentLink> = self
                .parent_links(id)
                .into_iter()
                .map(|(p, k)| ParentLink::new(p, k))
                .collect();
            if self.reaches(&links, id) {
                return Err(ModelError::Integrity(format!("cycle through {id}")));
            }
        }
        for c in &self.corrections {
            if !self.nodes.contains_key(&c.node_id) {
                return Err(ModelError::not_found("node", &c.node_id));
            }
            if self.dimension(&c.dimension_pair_id).is_none() {
                return Err(ModelError::not_found("dimension", &c.dimension_pair_id));
            }
        }
        for pair in self.events.windows(2) {
            if pair[1].timestamp < pair[0].timestamp {
                return Err(ModelError::Integrity("event timestamps decrease".into()));
            }
        }
        for (token, id) in &self.request_tokens {
            if !self.nodes.contains_key(id) {
                return Err(ModelError::Integrity(format!("token {token:?} points at unknown node {id}")));
            }
        }
        Ok(())
    }
}

fn validate_pair_content(p: &DimensionPair) -> Result<(), ModelError> {
    if p.pole_a_name.trim().is_empty() || p.pole_b_name.trim().is_empty() {
        return Err(ModelError::invalid("pole names must not be empty"));
    }
    if p.pole_a_name.trim() == p.pole_b_name.trim() {
        return Err(ModelError::invalid(format!(
            "pole names must differ (both {:?})",
            p.pole_a_name
        )));
    }
    Ok(())
}
