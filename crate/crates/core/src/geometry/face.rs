use std::fmt;

use serde::{Deserialize, Serialize};

use super::GeometryError;
use crate::model::Axis;

/// Cube face, named by its outward normal.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Face {
    PosX,
    NegX,
    PosY,
    NegY,
    PosZ,
    NegZ,
}

impl Face {
    /// Also the snap tie-break priority, highest first.
    pub const ALL: [Face; 6] = [Face::PosX, Face::NegX, Face::PosY, Face::NegY, Face::PosZ, Face::NegZ];

    pub fn normal(self) -> [f64; 3] {
        match self {
            Face::PosX => [1.0, 0.0, 0.0],
            Face::NegX => [-1.0, 0.0, 0.0],
            Face::PosY => [0.0, 1.0, 0.0],
            Face::NegY => [0.0, -1.0, 0.0],
            Face::PosZ => [0.0, 0.0, 1.0],
            Face::NegZ => [0.0, 0.0, -1.0],
        }
    }

    /// Screen-up direction of a camera snapped to this face.
    pub fn camera_up(self) -> [f64; 3] {
        match self {
            Face::PosX | Face::NegX | Face::PosZ | Face::NegZ => [0.0, 1.0, 0.0],
            Face::PosY | Face::NegY => [0.0, 0.0, -1.0],
        }
    }
}

impl fmt::Display for Face {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Unit vector from the camera toward the cube center.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewDirection {
    dx: f64,
    dy: f64,
    dz: f64,
}

const UNIT_TOLERANCE: f64 = 1e-9;

impl ViewDirection {
    /// Accepts an already-normalized vector.
    pub fn new(dx: f64, dy: f64, dz: f64) -> Result<Self, GeometryError> {
        let norm = (dx * dx + dy * dy + dz * dz).sqrt();
        if norm == 0.0 {
            return Err(GeometryError::ZeroView);
        }
        // NaN components fail this comparison too.
        let unit = (norm - 1.0).abs() <= UNIT_TOLERANCE;
        if !unit {
            return Err(GeometryError::NotUnit(norm.to_string()));
        }
        Ok(Self { dx, dy, dz })
    }

    /// Normalizes any non-zero finite vector.
    pub fn normalized(dx: f64, dy: f64, dz: f64) -> Result<Self, GeometryError> {
        let norm = (dx * dx + dy * dy + dz * dz).sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(GeometryError::ZeroView);
        }
        Ok(Self {
            dx: dx / norm,
            dy: dy / norm,
            dz: dz / norm,
        })
    }

    pub fn components(&self) -> [f64; 3] {
        [self.dx, self.dy, self.dz]
    }
}

/// The face whose outward normal best faces the camera, i.e. maximizes
/// `dot(normal, -view)`.
///
/// Equivalent to picking the largest-magnitude component of `-view`, with
/// X before Y before Z on equal magnitude, and the sign selecting Pos/Neg.
pub fn snap_to_face(view: ViewDirection) -> Face {
    let toward_camera = view.components().map(|c| -c);
    let mut best = 0;
    for i in 1..3 {
        if toward_camera[i].abs() > toward_camera[best].abs() {
            best = i;
        }
    }
    let positive = toward_camera[best] > 0.0;
    match (best, positive) {
        (0, true) => Face::PosX,
        (0, false) => Face::NegX,
        (1, true) => Face::PosY,
        (1, false) => Face::NegY,
        (2, true) => Face::PosZ,
        _ => Face::NegZ,
    }
}

/// Screen layout of a snapped face.
///
/// `*_sign` is +1 when moving right (or up) on screen increases the score on
/// that axis. Per face, with a right-handed scene:
///
/// | face | horizontal | vertical | locked |
/// |------|-----------|----------|--------|
/// | PosZ | +X | +Y | Z |
/// | NegZ | -X | +Y | Z |
/// | PosX | -Z | +Y | X |
/// | NegX | +Z | +Y | X |
/// | PosY | +X | -Z | Y |
/// | NegY | -X | -Z | Y |
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaceAxes {
    pub horizontal: Axis,
    pub horizontal_sign: i8,
    pub vertical: Axis,
    pub vertical_sign: i8,
    pub locked: Axis,
}

pub fn visible_axes(face: Face) -> FaceAxes {
    let (horizontal, horizontal_sign, vertical, vertical_sign, locked) = match face {
        Face::PosZ => (Axis::X, 1, Axis::Y, 1, Axis::Z),
        Face::NegZ => (Axis::X, -1, Axis::Y, 1, Axis::Z),
        Face::PosX => (Axis::Z, -1, Axis::Y, 1, Axis::X),
        Face::NegX => (Axis::Z, 1, Axis::Y, 1, Axis::X),
        Face::PosY => (Axis::X, 1, Axis::Z, -1, Axis::Y),
        Face::NegY => (Axis::X, -1, Axis::Z, -1, Axis::Y),
    };
    FaceAxes {
        horizontal,
        horizontal_sign,
        vertical,
        vertical_sign,
        locked,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
        [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
    }

    fn signed_unit(axis: Axis, sign: i8) -> [f64; 3] {
        let mut v = [0.0; 3];
        v[axis.index()] = sign as f64;
        v
    }

    #[test]
    fn axis_aligned_views() {
        assert_eq!(snap_to_face(ViewDirection::new(0.0, 0.0, -1.0).unwrap()), Face::PosZ);
        assert_eq!(snap_to_face(ViewDirection::new(0.0, 0.0, 1.0).unwrap()), Face::NegZ);
        assert_eq!(snap_to_face(ViewDirection::new(1.0, 0.0, 0.0).unwrap()), Face::NegX);
        assert_eq!(snap_to_face(ViewDirection::new(0.0, -1.0, 0.0).unwrap()), Face::PosY);
    }

    #[test]
    fn oblique_and_tie() {
        let v = ViewDirection::normalized(-0.8, -0.1, -0.1).unwrap();
        assert_eq!(snap_to_face(v), Face::PosX);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert_eq!(snap_to_face(ViewDirection::new(-h, -h, 0.0).unwrap()), Face::PosX);
        assert_eq!(snap_to_face(ViewDirection::new(0.0, h, h).unwrap()), Face::NegY);
    }

    #[test]
    fn rejects_bad_vectors() {
        assert_eq!(ViewDirection::new(0.0, 0.0, 0.0), Err(GeometryError::ZeroView));
        assert!(matches!(ViewDirection::new(0.0, 0.0, 2.0), Err(GeometryError::NotUnit(_))));
        assert_eq!(ViewDirection::normalized(0.0, 0.0, 0.0), Err(GeometryError::ZeroView));
    }

    #[test]
    fn table_entries() {
        let front = visible_axes(Face::PosZ);
        assert_eq!((front.horizontal, front.vertical, front.locked), (Axis::X, Axis::Y, Axis::Z));
        let left = visible_axes(Face::NegX);
        assert_eq!((left.horizontal, left.vertical, left.locked), (Axis::Z, Axis::Y, Axis::X));
    }

    #[test]
    fn faces_partition_axes() {
        for face in Face::ALL {
            let l = visible_axes(face);
            let mut axes = vec![l.horizontal, l.vertical, l.locked];
            axes.sort();
            assert_eq!(axes, vec![Axis::X, Axis::Y, Axis::Z], "{face}");
            assert_eq!(l.locked.index(), face.normal().iter().position(|c| *c != 0.0).unwrap());
        }
    }

    /// Screen right must equal forward x up for a camera looking at the face.
    #[test]
    fn layout_matches_camera_basis() {
        for face in Face::ALL {
            let l = visible_axes(face);
            let forward = face.normal().map(|c| -c);
            let up = face.camera_up();
            assert_eq!(cross(forward, up), signed_unit(l.horizontal, l.horizontal_sign), "{face}");
            assert_eq!(up, signed_unit(l.vertical, l.vertical_sign), "{face}");
        }
    }
}
