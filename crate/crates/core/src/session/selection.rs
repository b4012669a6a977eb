use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::SessionError;
use crate::cluster::Clustering;
use crate::dataset::Dataset;
use crate::embedding::Embedding;

/// A set of spot indices shared by every view.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Selection(BTreeSet<usize>);

impl Selection {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn all(n: usize) -> Self {
        Self((0..n).collect())
    }

    /// Collects indices, rejecting any outside `0..n`.
    pub fn from_indices<I: IntoIterator<Item = usize>>(indices: I, n: usize) -> Result<Self, SessionError> {
        let set: BTreeSet<usize> = indices.into_iter().collect();
        if let Some(&index) = set.range(n..).next() {
            return Err(SessionError::IndexOutOfRange { index, n });
        }
        Ok(Self(set))
    }

    pub fn contains(&self, index: usize) -> bool {
        self.0.contains(&index)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Ascending indices.
    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied()
    }

    pub fn to_vec(&self) -> Vec<usize> {
        self.iter().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CombineMode {
    Replace,
    Union,
    Intersect,
    Subtract,
}

/// Set algebra on selections of the same dataset. `Replace` yields `b`.
pub fn combine(a: &Selection, b: &Selection, mode: CombineMode) -> Selection {
    match mode {
        CombineMode::Replace => b.clone(),
        CombineMode::Union => Selection(a.0.union(&b.0).copied().collect()),
        CombineMode::Intersect => Selection(a.0.intersection(&b.0).copied().collect()),
        CombineMode::Subtract => Selection(a.0.difference(&b.0).copied().collect()),
    }
}

/// Brush shape; the boundary counts as inside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Rect { x0: f64, y0: f64, x1: f64, y1: f64 },
    Polygon { points: Vec<[f64; 2]> },
}

impl Shape {
    fn validate(&self) -> Result<(), SessionError> {
        match self {
            Shape::Rect { x0, y0, x1, y1 } => {
                if ![x0, y0, x1, y1].iter().all(|v| v.is_finite()) {
                    return Err(SessionError::DegenerateShape("non-finite rectangle corner".into()));
                }
                if x0 == x1 || y0 == y1 {
                    return Err(SessionError::DegenerateShape("rectangle has zero area".into()));
                }
            }
            Shape::Polygon { points } => {
                if points.len() < 3 {
                    return Err(SessionError::DegenerateShape(
                        "polygon needs at least 3 vertices".into(),
                    ));
                }
                if points.iter().flatten().any(|v| !v.is_finite()) {
                    return Err(SessionError::DegenerateShape("non-finite polygon vertex".into()));
                }
                if polygon_area(points) == 0.0 {
                    return Err(SessionError::DegenerateShape("polygon has zero area".into()));
                }
            }
        }
        Ok(())
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        match self {
            Shape::Rect { x0, y0, x1, y1 } => {
                let (xmin, xmax) = (x0.min(*x1), x0.max(*x1));
                let (ymin, ymax) = (y0.min(*y1), y0.max(*y1));
                p[0] >= xmin && p[0] <= xmax && p[1] >= ymin && p[1] <= ymax
            }
            Shape::Polygon { points } => point_in_polygon(p, points),
        }
    }
}

fn polygon_area(points: &[[f64; 2]]) -> f64 {
    let n = points.len();
    (0..n)
        .map(|i| {
            let a = points[i];
            let b = points[(i + 1) % n];
            a[0] * b[1] - b[0] * a[1]
        })
        .sum::<f64>()
        / 2.0
}

fn on_segment(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> bool {
    let cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
    let scale = (b[0] - a[0]).abs() + (b[1] - a[1]).abs();
    cross.abs() <= 1e-12 * scale.max(1.0)
        && p[0] >= a[0].min(b[0])
        && p[0] <= a[0].max(b[0])
        && p[1] >= a[1].min(b[1])
        && p[1] <= a[1].max(b[1])
}

/// Even-odd point-in-polygon test with the boundary counted as inside.
pub fn point_in_polygon(p: [f64; 2], vertices: &[[f64; 2]]) -> bool {
    let n = vertices.len();
    if n < 3 {
        return false;
    }
    let mut inside = false;
    for i in 0..n {
        let a = vertices[i];
        let b = vertices[(i + 1) % n];
        if on_segment(p, a, b) {
            return true;
        }
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x = a[0] + (p[1] - a[1]) / (b[1] - a[1]) * (b[0] - a[0]);
            if p[0] < x {
                inside = !inside;
            }
        }
    }
    inside
}

/// Where a brush looks for spot coordinates.
#[derive(Debug, Clone, Copy)]
pub enum PointSource<'a> {
    /// Spot positions in image pixels.
    Image(&'a Dataset),
    /// 2D PCA coordinates.
    Scatter(&'a Embedding),
}

pub fn select_by_region(source: PointSource<'_>, shape: &Shape) -> Result<Selection, SessionError> {
    shape.validate()?;
    let hits: BTreeSet<usize> = match source {
        PointSource::Image(ds) => ds
            .spots()
            .iter()
            .enumerate()
            .filter(|(_, s)| shape.contains(s.position))
            .map(|(i, _)| i)
            .collect(),
        PointSource::Scatter(emb) => emb
            .coords
            .iter()
            .enumerate()
            .filter(|(_, c)| shape.contains(**c))
            .map(|(i, _)| i)
            .collect(),
    };
    Ok(Selection(hits))
}

pub fn select_by_cluster(clustering: &Clustering, label: usize) -> Result<Selection, SessionError> {
    if label >= clustering.k {
        return Err(SessionError::BadLabel {
            label,
            k: clustering.k,
        });
    }
    Ok(Selection(
        clustering
            .labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == label)
            .map(|(i, _)| i)
            .collect(),
    ))
}
