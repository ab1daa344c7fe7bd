//! Geometry of the evaluation cube.
//!
//! Scores in [-50, +50] map linearly onto normalized cube coordinates in
//! [-1, +1] (`score / 50`). Axes whose dimension is disabled collapse to 0.
//! All functions here are pure.

mod face;
pub mod vectors;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Axis, Score, ScoreVector, Session, SCORE_MAX};

pub use face::{snap_to_face, visible_axes, Face, FaceAxes, ViewDirection};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GeometryError {
    #[error("no score for dimension {dimension} on axis {axis}")]
    MissingScore { axis: Axis, dimension: String },
    #[error("view direction must be a non-zero vector")]
    ZeroView,
    #[error("view direction is not unit length (norm {0})")]
    NotUnit(String),
}

/// Dimension ids bound to each enabled axis.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActiveAxes {
    pub x: Option<String>,
    pub y: Option<String>,
    pub z: Option<String>,
}

impl ActiveAxes {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, axis: Axis, dimension_id: impl Into<String>) -> Self {
        *self.slot_mut(axis) = Some(dimension_id.into());
        self
    }

    /// Enabled, selected pairs of a session.
    pub fn of(session: &Session) -> Self {
        let mut axes = ActiveAxes::new();
        for axis in Axis::ALL {
            if let Some(pair) = session.enabled_pair(axis) {
                *axes.slot_mut(axis) = Some(pair.id.clone());
            }
        }
        axes
    }

    fn slot_mut(&mut self, axis: Axis) -> &mut Option<String> {
        match axis {
            Axis::X => &mut self.x,
            Axis::Y => &mut self.y,
            Axis::Z => &mut self.z,
        }
    }

    pub fn get(&self, axis: Axis) -> Option<&str> {
        match axis {
            Axis::X => self.x.as_deref(),
            Axis::Y => self.y.as_deref(),
            Axis::Z => self.z.as_deref(),
        }
    }

    pub fn is_enabled(&self, axis: Axis) -> bool {
        self.get(axis).is_some()
    }

    pub fn enabled(&self) -> impl Iterator<Item = (Axis, &str)> {
        Axis::ALL
            .into_iter()
            .filter_map(move |a| self.get(a).map(|id| (a, id)))
    }

    pub fn count(&self) -> usize {
        self.enabled().count()
    }
}

/// Normalized cube coordinates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Position3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Position3 {
    pub const ORIGIN: Position3 = Position3 { x: 0.0, y: 0.0, z: 0.0 };

    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn get(&self, axis: Axis) -> f64 {
        match axis {
            Axis::X => self.x,
            Axis::Y => self.y,
            Axis::Z => self.z,
        }
    }

    pub fn set(&mut self, axis: Axis, value: f64) {
        match axis {
            Axis::X => self.x = value,
            Axis::Y => self.y = value,
            Axis::Z => self.z = value,
        }
    }

    pub fn clamped(self) -> Self {
        Self {
            x: clamp_unit(self.x),
            y: clamp_unit(self.y),
            z: clamp_unit(self.z),
        }
    }
}

/// Clamps to [-1, 1]; NaN maps to 0.
pub fn clamp_unit(v: f64) -> f64 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(-1.0, 1.0)
    }
}

pub fn score_to_coordinate(score: Score) -> f64 {
    score.get() as f64 / SCORE_MAX as f64
}

/// Inverse of [`score_to_coordinate`] on the integer grid: round half away
/// from zero after scaling, clamped to the score range.
pub fn coordinate_to_score(component: f64) -> Score {
    let scaled = clamp_unit(component) * SCORE_MAX as f64;
    // f64::round rounds half away from zero.
    Score::clamped(scaled.round() as i64)
}

pub fn score_to_position(scores: &ScoreVector, axes: &ActiveAxes) -> Result<Position3, GeometryError> {
    let mut p = Position3::ORIGIN;
    for (axis, dim) in axes.enabled() {
        let score = scores.score(dim).ok_or_else(|| GeometryError::MissingScore {
            axis,
            dimension: dim.to_string(),
        })?;
        p.set(axis, score_to_coordinate(score));
    }
    Ok(p)
}

/// Scores for the enabled axes, with empty reasoning.
pub fn position_to_scores(p: Position3, axes: &ActiveAxes) -> ScoreVector {
    let mut v = ScoreVector::new();
    for (axis, dim) in axes.enabled() {
        v.set(dim, coordinate_to_score(p.get(axis)), String::new());
    }
    v
}

/// Reasoning attached to scores set by a drag target.
pub const DRAG_REASONING: &str = "target position set by drag";

/// Target scores for dropping a node at plane coordinates `(u, v)` on a
/// snapped face. Visible enabled axes take the drop position under the
/// face's sign convention; every other score is carried over unchanged.
pub fn project_drag(
    node_scores: &ScoreVector,
    face: Face,
    drop: (f64, f64),
    axes: &ActiveAxes,
) -> Result<ScoreVector, GeometryError> {
    let layout = visible_axes(face);
    let mut target = node_scores.clone();
    for (axis, sign, coord) in [
        (layout.horizontal, layout.horizontal_sign, drop.0),
        (layout.vertical, layout.vertical_sign, drop.1),
    ] {
        let Some(dim) = axes.get(axis) else { continue };
        if !node_scores.entries.contains_key(dim) {
            return Err(GeometryError::MissingScore {
                axis,
                dimension: dim.to_string(),
            });
        }
        let score = coordinate_to_score(sign as f64 * clamp_unit(coord));
        let unchanged = node_scores.score(dim) == Some(score);
        if !unchanged {
            target.set(dim, score, DRAG_REASONING);
        }
    }
    Ok(target)
}

/// Euclidean distance over enabled axes only.
pub fn distance(a: Position3, b: Position3, axes: &ActiveAxes) -> f64 {
    axes.enabled()
        .map(|(axis, _)| {
            let d = a.get(axis) - b.get(axis);
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

pub const DEFAULT_MERGE_THRESHOLD: f64 = 0.15;

/// Nearest other node within `threshold` of the drag position. Ties go to
/// the lexicographically smallest id.
pub fn detect_merge_target<'a, I>(
    dragged_id: &str,
    dragged: Position3,
    others: I,
    axes: &ActiveAxes,
    threshold: f64,
) -> Option<String>
where
    I: IntoIterator<Item = (&'a str, Position3)>,
{
    let mut best: Option<(f64, &str)> = None;
    for (id, pos) in others {
        if id == dragged_id {
            continue;
        }
        let d = distance(dragged, pos, axes);
        if d.is_nan() || d > threshold {
            continue;
        }
        best = match best {
            Some((bd, bid)) if bd < d || (bd == d && bid <= id) => Some((bd, bid)),
            _ => Some((d, id)),
        };
    }
    best.map(|(_, id)| id.to_string())
}

/// Radius range for depth-encoded node size.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisplayScale {
    pub r_min: f64,
    pub r_max: f64,
}

impl Default for DisplayScale {
    fn default() -> Self {
        Self { r_min: 0.5, r_max: 1.5 }
    }
}

/// Linear in z: z = -1 gives `r_min`, z = +1 (nearest on the front view) `r_max`.
pub fn node_display_size(z: f64, scale: DisplayScale) -> f64 {
    let z = clamp_unit(z);
    scale.r_min + (z + 1.0) / 2.0 * (scale.r_max - scale.r_min)
}

/// Geometry settings exposed as configuration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeometryConfig {
    pub merge_threshold: f64,
    pub node_radius_min: f64,
    pub node_radius_max: f64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self {
            merge_threshold: DEFAULT_MERGE_THRESHOLD,
            node_radius_min: 0.5,
            node_radius_max: 1.5,
        }
    }
}

impl GeometryConfig {
    pub fn display_scale(&self) -> DisplayScale {
        DisplayScale {
            r_min: self.node_radius_min,
            r_max: self.node_radius_max,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: i64) -> Score {
        Score::new(v).unwrap()
    }

    fn xyz() -> ActiveAxes {
        ActiveAxes::new().with(Axis::X, "dx").with(Axis::Y, "dy").with(Axis::Z, "dz")
    }

    fn vec3(x: i64, y: i64, z: i64) -> ScoreVector {
        ScoreVector::new().with("dx", s(x)).with("dy", s(y)).with("dz", s(z))
    }

    #[test]
    fn boundary_and_origin() {
        assert_eq!(score_to_position(&vec3(50, 0, 0), &xyz()).unwrap(), Position3::new(1.0, 0.0, 0.0));
        assert_eq!(score_to_position(&vec3(0, 0, 0), &xyz()).unwrap(), Position3::ORIGIN);
        let p = score_to_position(&vec3(0, 0, -40), &xyz()).unwrap();
        assert_eq!(p.z, -0.8);
    }

    #[test]
    fn missing_score_is_error() {
        let v = ScoreVector::new().with("dx", s(1));
        assert!(matches!(
            score_to_position(&v, &xyz()),
            Err(GeometryError::MissingScore { axis: Axis::Y, .. })
        ));
    }

    #[test]
    fn disabled_axes_are_zero() {
        let axes = ActiveAxes::new().with(Axis::X, "dx");
        let p = score_to_position(&vec3(10, 20, 30), &axes).unwrap();
        assert_eq!(p, Position3::new(0.2, 0.0, 0.0));
    }

    #[test]
    fn inverse_rounds_half_away_from_zero() {
        let v = position_to_scores(Position3::new(1.0, -0.8, 0.0), &xyz());
        assert_eq!(v, vec3(50, -40, 0));
        // 0.013 * 50 = 0.65
        assert_eq!(coordinate_to_score(0.013), s(1));
        assert_eq!(coordinate_to_score(0.01), s(1)); // 0.5 -> 1
        assert_eq!(coordinate_to_score(-0.01), s(-1)); // -0.5 -> -1
        assert_eq!(coordinate_to_score(0.009), s(0));
        assert_eq!(coordinate_to_score(3.0), s(50));
        assert_eq!(coordinate_to_score(f64::NAN), s(0));
    }

    #[test]
    fn drag_on_front_face() {
        let node = vec3(-30, 10, -40);
        let target = project_drag(&node, Face::PosZ, (0.5, -0.2), &xyz()).unwrap();
        assert!(target.same_scores(&vec3(25, -10, -40)));
        let clamped = project_drag(&node, Face::PosZ, (1.4, 0.0), &xyz()).unwrap();
        assert_eq!(clamped.score("dx"), Some(s(50)));
    }

    #[test]
    fn drag_ignores_disabled_visible_axis() {
        let axes = ActiveAxes::new().with(Axis::X, "dx").with(Axis::Z, "dz");
        let node = vec3(-30, 10, -40);
        let target = project_drag(&node, Face::PosZ, (0.5, 0.9), &axes).unwrap();
        assert!(target.same_scores(&vec3(25, 10, -40)));
    }

    #[test]
    fn merge_threshold() {
        let axes = xyz();
        let a = Position3::new(0.0, 0.0, 0.0);
        let near = Position3::new(0.1, 0.0, 0.0);
        let far = Position3::new(0.2, 0.0, 0.0);
        assert_eq!(
            detect_merge_target("a", a, [("b", near)], &axes, DEFAULT_MERGE_THRESHOLD),
            Some("b".to_string())
        );
        assert_eq!(detect_merge_target("a", a, [("b", far)], &axes, DEFAULT_MERGE_THRESHOLD), None);
        assert_eq!(detect_merge_target("a", a, [("a", a)], &axes, DEFAULT_MERGE_THRESHOLD), None);
        // equidistant candidates: smallest id wins regardless of order
        let tie = [("idea-0009", near), ("idea-0002", Position3::new(-0.1, 0.0, 0.0))];
        assert_eq!(
            detect_merge_target("a", a, tie, &axes, DEFAULT_MERGE_THRESHOLD),
            Some("idea-0002".to_string())
        );
    }

    #[test]
    fn merge_distance_uses_enabled_axes() {
        let axes = ActiveAxes::new().with(Axis::X, "dx");
        let a = Position3::new(0.0, 0.0, 0.0);
        let b = Position3::new(0.05, 0.9, -0.9);
        assert_eq!(detect_merge_target("a", a, [("b", b)], &axes, 0.15), Some("b".into()));
    }

    #[test]
    fn display_size() {
        let scale = DisplayScale::default();
        assert_eq!(node_display_size(1.0, scale), 1.5);
        assert_eq!(node_display_size(-1.0, scale), 0.5);
        assert_eq!(node_display_size(0.0, scale), 1.0);
        assert_eq!(node_display_size(7.0, scale), 1.5);
    }
}
