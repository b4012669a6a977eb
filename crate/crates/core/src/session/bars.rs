use serde::{Deserialize, Serialize};

use super::{Selection, SessionError};
use crate::embedding::Embedding;

/// Upper bound on the number of stacked bars drawn at once.
pub const DEFAULT_BAR_CAP: usize = 500;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BarSubset {
    /// Spot indices in ascending PC1 order.
    pub bar_indices: Vec<usize>,
    /// Size of the source set before decimation.
    pub source_len: usize,
}

impl BarSubset {
    pub fn is_decimated(&self) -> bool {
        self.bar_indices.len() < self.source_len
    }
}

/// `round(i * (m - 1) / (cap - 1))` in exact integer arithmetic, halves up.
fn resample_position(i: usize, m: usize, cap: usize) -> usize {
    let num = (i as u128) * (m as u128 - 1);
    let den = cap as u128 - 1;
    ((2 * num + den) / (2 * den)) as usize
}

/// Orders the source by PC1 and, when it has more than `cap` members, keeps
/// `cap` of them by nearest-neighbor resampling that always includes both
/// ends. `None` means every spot.
pub fn bar_subset(
    embedding: &Embedding,
    source: Option<&Selection>,
    cap: usize,
) -> Result<BarSubset, SessionError> {
    if cap < 2 {
        return Err(SessionError::BadCap(cap));
    }
    let n = embedding.pc1_order.len();
    let ordered: Vec<usize> = match source {
        None => embedding.pc1_order.clone(),
        Some(sel) => {
            if let Some(index) = sel.iter().find(|&i| i >= n) {
                return Err(SessionError::IndexOutOfRange { index, n });
            }
            embedding
                .pc1_order
                .iter()
                .copied()
                .filter(|&i| sel.contains(i))
                .collect()
        }
    };
    let m = ordered.len();
    let bar_indices = if m <= cap {
        ordered
    } else {
        (0..cap)
            .map(|i| ordered[resample_position(i, m, cap)])
            .collect()
    };
    Ok(BarSubset {
        bar_indices,
        source_len: m,
    })
}
