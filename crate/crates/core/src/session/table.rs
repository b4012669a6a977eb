use serde::{Deserialize, Serialize};

use super::SessionError;
use crate::composition::Composition;
use crate::dataset::Dataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "name", rename_all = "snake_case")]
pub enum SortKey {
    SpotId,
    CellType(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableQuery {
    pub sort_by: SortKey,
    pub descending: bool,
    /// Keep rows whose proportion of the named cell type is `>=` the threshold.
    pub min_filter: Option<(String, f64)>,
}

impl Default for TableQuery {
    fn default() -> Self {
        Self {
            sort_by: SortKey::SpotId,
            descending: false,
            min_filter: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableRow<'a> {
    pub index: usize,
    pub id: &'a str,
    pub composition: &'a Composition,
}

/// Filters, then stably sorts; equal keys keep spot-index order in both
/// directions.
pub fn table_rows<'a>(
    dataset: &'a Dataset,
    query: &TableQuery,
) -> Result<Vec<TableRow<'a>>, SessionError> {
    let lookup = |name: &str| {
        dataset
            .cell_type_index(name)
            .ok_or_else(|| SessionError::UnknownCellType(name.to_owned()))
    };
    let sort_col = match &query.sort_by {
        SortKey::SpotId => None,
        SortKey::CellType(name) => Some(lookup(name)?),
    };
    let filter = match &query.min_filter {
        Some((name, threshold)) => Some((lookup(name)?, *threshold)),
        None => None,
    };

    let mut rows: Vec<TableRow<'a>> = dataset
        .spots()
        .iter()
        .enumerate()
        .filter(|(_, s)| filter.is_none_or(|(col, t)| s.composition.parts()[col] >= t))
        .map(|(index, s)| TableRow {
            index,
            id: &s.id,
            composition: &s.composition,
        })
        .collect();

    rows.sort_by(|a, b| {
        let ord = match sort_col {
            None => a.id.cmp(b.id),
            Some(col) => a.composition.parts()[col].total_cmp(&b.composition.parts()[col]),
        };
        if query.descending {
            ord.reverse()
        } else {
            ord
        }
    });
    Ok(rows)
}
