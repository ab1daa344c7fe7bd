//! Random operation sequences over a stub-backed session, and an oracle
//! for the provenance graph that does not reuse the model's own checks.

#![allow(dead_code)]

use std::collections::{HashMap, HashSet, VecDeque};
use std::sync::Arc;

use chrono::{Duration, Utc};
use ideaspace_core::engine::stub::StubProvider;
use ideaspace_core::engine::template::{default_prompt_dir, TemplateRegistry};
use ideaspace_core::engine::{CorrectionNote, Engine, EngineConfig};
use ideaspace_core::model::{
    Axis, AxisAssignment, DimensionPair, EdgeKind, EventKind, IdeaDraft, InteractionEvent, NewIdea, Score,
    ScoreVector, Session, SessionDocument,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn stub_engine(seed: u64) -> Engine {
    let templates = Arc::new(TemplateRegistry::load(default_prompt_dir()).expect("templates"));
    Engine::new(Arc::new(StubProvider::new(seed)), templates, EngineConfig::default())
}

/// Checks structural rules on an exported document.
pub fn check_graph(doc: &SessionDocument) -> Result<(), String> {
    let dims: HashSet<&str> = doc.dimensions.iter().map(|d| d.id.as_str()).collect();
    let ideas: HashMap<&str, usize> = doc.nodes.iter().enumerate().map(|(i, n)| (n.id.as_str(), i)).collect();
    let frags: HashMap<&str, usize> = doc.fragments.iter().enumerate().map(|(i, f)| (f.id.as_str(), i)).collect();
    if ideas.len() != doc.nodes.len() || frags.len() != doc.fragments.len() {
        return Err("duplicate ids".into());
    }
    if ideas.keys().any(|id| frags.contains_key(id)) {
        return Err("idea and fragment share an id".into());
    }

    // Edges parent -> child over both node kinds.
    let mut edges: Vec<(&str, &str)> = Vec::new();
    for n in &doc.nodes {
        let idea_parents: Vec<_> = n
            .parents
            .iter()
            .filter(|p| ideas.contains_key(p.node_or_fragment_id.as_str()))
            .collect();
        let frag_parents: Vec<_> = n
            .parents
            .iter()
            .filter(|p| frags.contains_key(p.node_or_fragment_id.as_str()))
            .collect();
        if idea_parents.len() + frag_parents.len() != n.parents.len() {
            return Err(format!("{} has a dangling parent", n.id));
        }
        let distinct: HashSet<&str> = n.parents.iter().map(|p| p.node_or_fragment_id.as_str()).collect();
        if distinct.len() != n.parents.len() {
            return Err(format!("{} lists a parent twice", n.id));
        }
        if n.parents.iter().any(|p| p.edge_kind != n.origin) {
            return Err(format!("{} has an edge kind differing from its origin", n.id));
        }
        let arity_ok = match n.origin {
            EdgeKind::Seed => n.parents.is_empty(),
            EdgeKind::Steered => idea_parents.len() == 1 && frag_parents.is_empty(),
            EdgeKind::Merged => idea_parents.len() == 2 && frag_parents.is_empty(),
            EdgeKind::Fragment => idea_parents.len() == 1 && frag_parents.len() == 1,
            EdgeKind::Corrected => false,
        };
        if !arity_ok {
            return Err(format!("{} breaks the arity rule for {:?}", n.id, n.origin));
        }
        for (dim, entry) in &n.scores.entries {
            if !dims.contains(dim.as_str()) {
                return Err(format!("{} scored on unknown dimension {dim}", n.id));
            }
            if !(-50..=50).contains(&entry.score.get()) {
                return Err(format!("{} score out of range", n.id));
            }
        }
        for p in &n.parents {
            edges.push((p.node_or_fragment_id.as_str(), n.id.as_str()));
        }
    }
    for f in &doc.fragments {
        let Some(&src) = ideas.get(f.source_idea_id.as_str()) else {
            return Err(format!("{} cut from unknown idea", f.id));
        };
        let s = &doc.nodes[src];
        if f.text.trim().is_empty() {
            return Err(format!("{} has blank text", f.id));
        }
        if !(s.title.contains(&f.text) || s.problem.contains(&f.text) || s.name.contains(&f.text)) {
            return Err(format!("{} text is not verbatim from its source", f.id));
        }
        edges.push((f.source_idea_id.as_str(), f.id.as_str()));
    }
    for c in &doc.corrections {
        if !ideas.contains_key(c.node_id.as_str()) {
            return Err(format!("correction for unknown node {}", c.node_id));
        }
    }

    // Kahn's algorithm: every vertex must be removable.
    let vertices: Vec<&str> = ideas.keys().chain(frags.keys()).copied().collect();
    let mut indegree: HashMap<&str, usize> = vertices.iter().map(|v| (*v, 0)).collect();
    let mut children: HashMap<&str, Vec<&str>> = HashMap::new();
    for (p, c) in &edges {
        *indegree.get_mut(c).unwrap() += 1;
        children.entry(p).or_default().push(c);
    }
    let mut queue: VecDeque<&str> = indegree.iter().filter(|(_, d)| **d == 0).map(|(v, _)| *v).collect();
    let mut removed = 0;
    while let Some(v) = queue.pop_front() {
        removed += 1;
        for c in children.get(v).into_iter().flatten() {
            let d = indegree.get_mut(c).unwrap();
            *d -= 1;
            if *d == 0 {
                queue.push_back(c);
            }
        }
    }
    if removed != vertices.len() {
        return Err("provenance graph has a cycle".into());
    }

    if doc.events.windows(2).any(|w| w[1].timestamp < w[0].timestamp) {
        return Err("event log is not ordered".into());
    }
    Ok(())
}

/// export -> import -> export must reproduce the document exactly.
pub fn check_fixed_point(session: &Session) -> Result<(), String> {
    let first = session.export_json();
    let second = Session::import_json(&first).map_err(|e| e.to_string())?.export_json();
    if first == second {
        Ok(())
    } else {
        Err("export/import/export changed the document".into())
    }
}

fn selected(s: &Session) -> Vec<DimensionPair> {
    s.selected_pairs().into_iter().cloned().collect()
}

fn random_scores(rng: &mut ChaCha8Rng, dims: &[DimensionPair]) -> ScoreVector {
    let mut v = ScoreVector::new();
    for d in dims {
        v.set(d.id.clone(), Score::new(rng.gen_range(-50..=50)).unwrap(), "random");
    }
    v
}

fn random_idea(rng: &mut ChaCha8Rng, s: &Session) -> Option<String> {
    let ids: Vec<&str> = s.nodes().map(|n| n.id.as_str()).collect();
    ids.choose(rng).map(|s| s.to_string())
}

/// A verbatim, non-blank slice of a node's title, on char boundaries.
fn random_selection(rng: &mut ChaCha8Rng, title: &str) -> String {
    let bounds: Vec<usize> = title.char_indices().map(|(i, _)| i).chain([title.len()]).collect();
    loop {
        let a = rng.gen_range(0..bounds.len() - 1);
        let b = rng.gen_range(a + 1..bounds.len());
        let text = &title[bounds[a]..bounds[b]];
        if !text.trim().is_empty() {
            return text.to_string();
        }
    }
}

#[derive(Debug, Default)]
pub struct RunStats {
    pub applied: usize,
    pub rejected: usize,
}

/// Runs `ops` random operations, checking the graph after each one.
pub async fn random_run(seed: u64, ops: usize) -> Result<(Session, RunStats), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let engine = stub_engine(seed);
    let intent = "wearable data for health prediction";
    let (mut s, _) = Session::create(format!("run-{seed}"), intent).map_err(|e| e.to_string())?;
    let drafts = engine.suggest_dimensions(intent, 5).await.map_err(|e| e.to_string())?;
    let ids = s.add_candidates(drafts).map_err(|e| e.to_string())?;
    let axes = rng.gen_range(1..=3);
    let assignments: Vec<AxisAssignment> = ids
        .choose_multiple(&mut rng, axes)
        .zip(Axis::ALL)
        .map(|(id, axis)| AxisAssignment {
            dimension_pair_id: id.clone(),
            axis,
        })
        .collect();
    s.select_dimensions(&assignments).map_err(|e| e.to_string())?;
    let dims = selected(&s);
    let mut clock = Utc::now();
    let mut stats = RunStats::default();

    for step in 0..ops {
        let op = if s.node_count() < 2 { 0 } else { rng.gen_range(0..9) };
        // Only operations that may be refused need a before-image.
        let before = matches!(op, 6 | 8).then(|| s.export());
        let outcome: Result<(), String> = match op {
            0 => {
                let titles: Vec<String> = s.nodes().map(|n| n.title.clone()).collect();
                let seeds = engine
                    .generate_seed_ideas(intent, &dims, None, &titles)
                    .await
                    .map_err(|e| e.to_string())?;
                let scores = engine
                    .evaluate_ideas(intent, &seeds, &dims, &CorrectionNote::from_session(&s))
                    .await
                    .map_err(|e| e.to_string())?;
                for (d, sc) in seeds.into_iter().zip(scores) {
                    s.add_idea(NewIdea::seed(d, sc)).map_err(|e| e.to_string())?;
                }
                Ok(())
            }
            1 => {
                let id = random_idea(&mut rng, &s).unwrap();
                let target = random_scores(&mut rng, &dims);
                let node = s.node(&id).unwrap().clone();
                let draft = engine.steer_idea(intent, &node, &target, &dims).await.map_err(|e| e.to_string())?;
                s.add_idea(NewIdea::steered(&id, draft, target)).map(drop).map_err(|e| e.to_string())
            }
            2 => {
                let id = random_idea(&mut rng, &s).unwrap();
                let target = random_scores(&mut rng, &dims);
                s.correct_scores(&id, &target).map_err(|e| e.to_string())
            }
            3 => {
                let a = random_idea(&mut rng, &s).unwrap();
                let b = random_idea(&mut rng, &s).unwrap();
                if a == b {
                    continue;
                }
                let (na, nb) = (s.node(&a).unwrap().clone(), s.node(&b).unwrap().clone());
                let draft = engine.merge_ideas(&na, &nb).await.map_err(|e| e.to_string())?;
                let scores = engine
                    .evaluate_ideas(intent, std::slice::from_ref(&draft), &dims, &[])
                    .await
                    .map_err(|e| e.to_string())?
                    .remove(0);
                s.add_idea(NewIdea::merged(&a, &b, draft, scores)).map(drop).map_err(|e| e.to_string())
            }
            4 => {
                let id = random_idea(&mut rng, &s).unwrap();
                let text = random_selection(&mut rng, &s.node(&id).unwrap().title.clone());
                s.create_fragment(&id, &text).map(drop).map_err(|e| e.to_string())
            }
            5 => {
                let frags: Vec<String> = s.fragments().map(|f| f.id.clone()).collect();
                let Some(fid) = frags.choose(&mut rng).cloned() else { continue };
                let id = random_idea(&mut rng, &s).unwrap();
                let (node, frag) = (s.node(&id).unwrap().clone(), s.fragment(&fid).unwrap().clone());
                let draft = engine.incorporate_fragment(&node, &frag).await.map_err(|e| e.to_string())?;
                let scores = random_scores(&mut rng, &dims);
                s.add_idea(NewIdea::from_fragment(&id, &fid, draft, scores))
                    .map(drop)
                    .map_err(|e| e.to_string())
            }
            6 => {
                let axis = Axis::ALL[rng.gen_range(0..3)];
                // May legitimately fail when it would disable the last axis.
                match s.set_dimension_enabled(axis, rng.gen_bool(0.5)) {
                    Ok(_) => Ok(()),
                    Err(_) => Err("rejected".into()),
                }
            }
            7 => {
                clock = clock.max(Utc::now()) + Duration::milliseconds(rng.gen_range(0..50));
                let kind = [EventKind::Rotation, EventKind::ViewChange, EventKind::DragStart][rng.gen_range(0..3)];
                s.record_event(InteractionEvent::client(kind, serde_json::json!({"step": step}), clock))
                    .map_err(|e| e.to_string())
            }
            _ => {
                // Invalid requests must be refused without touching state.
                let id = random_idea(&mut rng, &s).unwrap();
                let bogus = match rng.gen_range(0..3) {
                    0 => NewIdea::merged(&id, &id, IdeaDraft::new("n", "t", "p"), random_scores(&mut rng, &dims)),
                    1 => NewIdea::steered("idea-9999", IdeaDraft::new("n", "t", "p"), random_scores(&mut rng, &dims)),
                    _ => NewIdea::from_fragment(&id, "frag-9999", IdeaDraft::new("n", "t", "p"), random_scores(&mut rng, &dims)),
                };
                if s.add_idea(bogus).is_ok() {
                    return Err(format!("step {step}: invalid idea accepted"));
                }
                Err("rejected".into())
            }
        };
        match outcome {
            Ok(()) => stats.applied += 1,
            Err(e) if e != "rejected" => return Err(format!("step {step} (op {op}): valid operation failed: {e}")),
            Err(_) => {
                stats.rejected += 1;
                if before.as_ref() != Some(&s.export()) {
                    return Err(format!("step {step}: rejected operation {op} changed the session"));
                }
            }
        }
        check_graph(&s.export()).map_err(|e| format!("step {step} (op {op}): {e}"))?;
    }
    Ok((s, stats))
}
