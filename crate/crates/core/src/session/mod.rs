//! Shared interaction state for the linked views: selections, the decimated
//! bar subset, the occlusion mask and the sortable table.

mod bars;
mod mask;
mod selection;
mod table;

pub use bars::{bar_subset, BarSubset, DEFAULT_BAR_CAP};
pub use mask::{render_mask, MaskImage, MaskStyle, DEFAULT_OVERLAY_ALPHA, DEFAULT_OVERLAY_COLOR};
pub use selection::{
    combine, point_in_polygon, select_by_cluster, select_by_region, CombineMode, PointSource,
    Selection, Shape,
};
pub use table::{table_rows, SortKey, TableQuery, TableRow};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SessionError {
    #[error("degenerate selection shape: {0}")]
    DegenerateShape(String),
    #[error("cluster label {label} is out of range for k = {k}")]
    BadLabel { label: usize, k: usize },
    #[error("bar cap must be at least 2, got {0}")]
    BadCap(usize),
    #[error("spot index {index} is out of range for {n} spots")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("unknown cell type {0:?}")]
    UnknownCellType(String),
    #[error("overlay alpha must lie in (0, 1], got {0}")]
    BadAlpha(f64),
    #[error("embedding has {embedding} spots but the selection universe has {selection}")]
    SizeMismatch { embedding: usize, selection: usize },
}
