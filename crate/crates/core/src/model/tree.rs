use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{EdgeKind, Session};

/// Id of the synthetic root standing for the session intent.
pub const TREE_ROOT_ID: &str = "root";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeNodeKind {
    Intent,
    Idea,
    Fragment,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeNode {
    pub id: String,
    pub kind: TreeNodeKind,
    pub label: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub origin: Option<EdgeKind>,
    pub depth: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeEdge {
    pub parent: String,
    pub child: String,
    /// `seed`, `steered`, `merged`, `fragment`, or `extracted` for the
    /// edge from an idea to a fragment cut from it.
    pub kind: String,
}

/// Parent-child projection of the provenance graph, rooted at the intent.
/// Nodes and edges are listed in creation order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvenanceTree {
    pub nodes: Vec<TreeNode>,
    pub edges: Vec<TreeEdge>,
}

impl ProvenanceTree {
    pub fn build(session: &Session) -> ProvenanceTree {
        let mut nodes = vec![TreeNode {
            id: TREE_ROOT_ID.to_string(),
            kind: TreeNodeKind::Intent,
            label: session.intent().to_string(),
            origin: None,
            depth: 0,
        }];
        let mut edges = Vec::new();
        let mut depth: HashMap<&str, usize> = HashMap::new();
        depth.insert(TREE_ROOT_ID, 0);

        // Interleave ideas and fragments by creation time, never emitting a
        // child before its parents.
        let mut ideas = session.nodes().peekable();
        let mut frags = session.fragments().peekable();
        loop {
            let take_idea = match (ideas.peek(), frags.peek()) {
                (Some(i), Some(f)) => {
                    let blocked = i
                        .parents
                        .iter()
                        .any(|l| !depth.contains_key(l.node_or_fragment_id.as_str()));
                    !blocked && (i.created_at <= f.created_at || !depth.contains_key(f.source_idea_id.as_str()))
                }
                (Some(_), None) => true,
                (None, Some(_)) => false,
                (None, None) => break,
            };
            if take_idea {
                let node = ideas.next().expect("peeked");
                let d = if node.parents.is_empty() {
                    edges.push(TreeEdge {
                        parent: TREE_ROOT_ID.to_string(),
                        child: node.id.clone(),
                        kind: EdgeKind::Seed.to_string(),
                    });
                    1
                } else {
                    let mut d = 0;
                    for link in &node.parents {
                        edges.push(TreeEdge {
                            parent: link.node_or_fragment_id.clone(),
                            child: node.id.clone(),
                            kind: link.edge_kind.to_string(),
                        });
                        d = d.max(depth.get(link.node_or_fragment_id.as_str()).copied().unwrap_or(0) + 1);
                    }
                    d
                };
                depth.insert(node.id.as_str(), d);
                nodes.push(TreeNode {
                    id: node.id.clone(),
                    kind: TreeNodeKind::Idea,
                    label: node.title.clone(),
                    origin: Some(node.origin),
                    depth: d,
                });
            } else {
                let frag = frags.next().expect("peeked");
                let d = depth.get(frag.source_idea_id.as_str()).copied().unwrap_or(0) + 1;
                depth.insert(frag.id.as_str(), d);
                edges.push(TreeEdge {
                    parent: frag.source_idea_id.clone(),
                    child: frag.id.clone(),
                    kind: "extracted".to_string(),
                });
                nodes.push(TreeNode {
                    id: frag.id.clone(),
                    kind: TreeNodeKind::Fragment,
                    label: frag.text.clone(),
                    origin: None,
                    depth: d,
                });
            }
        }
        ProvenanceTree { nodes, edges }
    }

    /// Longest root-to-idea path, counted in edges.
    pub fn depth(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| n.kind == TreeNodeKind::Idea)
            .map(|n| n.depth)
            .max()
            .unwrap_or(0)
    }

    pub fn incoming(&self, id: &str) -> impl Iterator<Item = &TreeEdge> {
        let id = id.to_string();
        self.edges.iter().filter(move |e| e.child == id)
    }
}
