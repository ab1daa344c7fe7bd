//! Reference vectors for clients that re-implement the drag and snap
//! conversions. Generated deterministically from a seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{project_drag, snap_to_face, ActiveAxes, Face, ViewDirection};
use crate::model::{Axis, Score, ScoreVector};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DragVector {
    pub face: Face,
    /// Scores on X, Y, Z before the drag.
    pub node_scores: [i64; 3],
    /// Drop point in face-plane coordinates, before clamping.
    pub drop: [f64; 2],
    /// Target scores on X, Y, Z.
    pub expected: [i64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapVector {
    pub view: [f64; 3],
    pub face: Face,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeometryVectors {
    pub seed: u64,
    pub drag: Vec<DragVector>,
    pub snap: Vec<SnapVector>,
}

const DIMS: [&str; 3] = ["x", "y", "z"];

fn all_axes() -> ActiveAxes {
    ActiveAxes::new()
        .with(Axis::X, DIMS[0])
        .with(Axis::Y, DIMS[1])
        .with(Axis::Z, DIMS[2])
}

pub fn generate(count: usize, seed: u64) -> GeometryVectors {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let axes = all_axes();
    let mut drag = Vec::with_capacity(count);
    let mut snap = Vec::with_capacity(count);
    for _ in 0..count {
        let face = Face::ALL[rng.gen_range(0..6)];
        let node_scores = [0; 3].map(|_| rng.gen_range(-50..=50i64));
        // Slightly past the face edge so clients exercise clamping.
        let drop = [rng.gen_range(-1.2..=1.2), rng.gen_range(-1.2..=1.2)];
        let mut scores = ScoreVector::new();
        for (dim, s) in DIMS.iter().zip(node_scores) {
            scores.set(*dim, Score::new(s).expect("in range"), "");
        }
        let target = project_drag(&scores, face, (drop[0], drop[1]), &axes).expect("all axes scored");
        let expected = DIMS.map(|d| target.score(d).expect("scored").get());
        drag.push(DragVector {
            face,
            node_scores,
            drop,
            expected,
        });

        let view = loop {
            let v: [f64; 3] = [0; 3].map(|_| rng.gen_range(-1.0..=1.0));
            if let Ok(dir) = ViewDirection::normalized(v[0], v[1], v[2]) {
                break dir;
            }
        };
        snap.push(SnapVector {
            view: view.components(),
            face: snap_to_face(view),
        });
    }
    GeometryVectors { seed, drag, snap }
}
