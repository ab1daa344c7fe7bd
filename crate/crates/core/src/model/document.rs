use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{
    AxisAssignment, CorrectionRecord, DimensionPair, FragmentNode, IdeaNode, InteractionEvent, ModelError,
    Session, Timestamp,
};

/// Portable session document. Top-level keys and field names are stable.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionDocument {
    pub session: SessionHeader,
    pub dimensions: Vec<DimensionPair>,
    pub nodes: Vec<IdeaNode>,
    pub fragments: Vec<FragmentNode>,
    pub corrections: Vec<CorrectionRecord>,
    pub events: Vec<InteractionEvent>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionHeader {
    pub id: String,
    pub intent: String,
    pub selected_dimensions: Vec<AxisAssignment>,
    pub created_at: Timestamp,
}

impl SessionDocument {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("session documents always serialize")
    }

    /// Parses and schema-checks a document. Errors carry the path of the
    /// offending field.
    pub fn from_json(text: &str) -> Result<SessionDocument, ModelError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|err| {
            let path = err.path().to_string();
            ModelError::Format {
                path,
                message: err.into_inner().to_string(),
            }
        })
    }
}

impl Session {
    pub fn export(&self) -> SessionDocument {
        SessionDocument {
            session: SessionHeader {
                id: self.id.clone(),
                intent: self.intent.clone(),
                selected_dimensions: self.selected_dimensions.clone(),
                created_at: self.created_at,
            },
            dimensions: self.dimension_candidates.clone(),
            nodes: self.nodes.values().cloned().collect(),
            fragments: self.fragments.values().cloned().collect(),
            corrections: self.corrections.clone(),
            events: self.events.clone(),
        }
    }

    pub fn export_json(&self) -> String {
        self.export().to_json()
    }

    pub fn import(doc: SessionDocument) -> Result<Session, ModelError> {
        Session::from_parts(doc, BTreeMap::new())
    }

    pub fn import_json(text: &str) -> Result<Session, ModelError> {
        Session::import(SessionDocument::from_json(text)?)
    }

    /// Rebuilds a session from a document plus idempotency-token state.
    pub fn from_parts(doc: SessionDocument, request_tokens: BTreeMap<String, String>) -> Result<Session, ModelError> {
        let mut nodes = indexmap::IndexMap::with_capacity(doc.nodes.len());
        for n in doc.nodes {
            let id = n.id.clone();
            if nodes.insert(id.clone(), n).is_some() {
                return Err(ModelError::Integrity(format!("duplicate node id {id}")));
            }
        }
        let mut fragments = indexmap::IndexMap::with_capacity(doc.fragments.len());
        for f in doc.fragments {
            let id = f.id.clone();
            if fragments.insert(id.clone(), f).is_some() {
                return Err(ModelError::Integrity(format!("duplicate fragment id {id}")));
            }
        }
        let session = Session {
            id: doc.session.id,
            intent: doc.session.intent,
            dimension_candidates: doc.dimensions,
            selected_dimensions: doc.session.selected_dimensions,
            nodes,
            fragments,
            corrections: doc.corrections,
            events: doc.events,
            created_at: doc.session.created_at,
            request_tokens,
        };
        session.verify()?;
        Ok(session)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_session_round_trips() {
        let (s, _) = Session::create("s-1", "x").unwrap();
        let text = s.export_json();
        let back = Session::import_json(&text).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.export_json(), text);
        let doc: serde_json::Value = serde_json::from_str(&text).unwrap();
        let keys: Vec<_> = doc.as_object().unwrap().keys().cloned().collect();
        assert_eq!(keys.len(), 6);
        for key in ["session", "dimensions", "nodes", "fragments", "corrections", "events"] {
            assert!(doc.get(key).is_some(), "missing {key}");
        }
    }

    #[test]
    fn truncated_document_is_format_error() {
        let (s, _) = Session::create("s-1", "x").unwrap();
        let text = s.export_json();
        let cut = &text[..text.len() / 2];
        assert!(matches!(Session::import_json(cut), Err(ModelError::Format { .. })));
    }

    #[test]
    fn format_error_names_the_field() {
        let (s, _) = Session::create("s-1", "x").unwrap();
        let mut doc: serde_json::Value = serde_json::from_str(&s.export_json()).unwrap();
        doc["session"]["created_at"] = serde_json::json!(17);
        let err = Session::import_json(&doc.to_string()).unwrap_err();
        match err {
            ModelError::Format { path, .. } => assert_eq!(path, "session.created_at"),
            other => panic!("unexpected {other:?}"),
        }
        doc["session"]["created_at"] = serde_json::json!(s.created_at());
        doc["events"][0]["kind"] = serde_json::json!("teleport");
        let err = Session::import_json(&doc.to_string()).unwrap_err();
        match err {
            ModelError::Format { path, .. } => assert_eq!(path, "events[0].kind"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
