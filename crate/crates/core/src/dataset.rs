//! Dataset loading, validation and synthetic fixture generation.
//!
//! On disk a dataset is a JSON manifest pointing at a proportions CSV
//! (`spot_id,<type1>,...`), a positions CSV (`spot_id,x,y`) and a PNG or JPEG
//! histology image. Relative paths resolve against the manifest's directory.
//! Spot index order is the row order of the positions file.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::composition::{closure, Composition};

/// Default tolerance on `|sum - 1|` before a proportion row is rejected.
pub const DEFAULT_SUM_TOLERANCE: f64 = 1e-3;

pub const DEFAULT_SPOT_RADIUS_PX: f64 = 5.0;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),
    #[error("{}:{line}{}: {message}", file.display(), column.map(|c| format!(":{c}")).unwrap_or_default())]
    Parse {
        file: PathBuf,
        line: u64,
        column: Option<usize>,
        message: String,
    },
    #[error("spot id {0:?} is not present in both tables")]
    IdMismatch(String),
    #[error("spot {0:?} lies outside the image")]
    OutOfBounds(String),
    #[error("bad header in {}: {message}", file.display())]
    BadHeader { file: PathBuf, message: String },
    #[error("duplicate spot id {0:?}")]
    DuplicateId(String),
    #[error("invalid manifest: {0}")]
    Manifest(String),
    #[error("image error: {0}")]
    Image(String),
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error("grid step {step} leaves no spot inside a {width}x{height} image")]
    EmptyGrid { width: u32, height: u32, step: f64 },
    #[error("spot at ({x}, {y}) is covered by no region")]
    UncoveredSpot { x: f64, y: f64 },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProportionError {
    #[error("need at least 2 proportions, got {0}")]
    TooFewParts(usize),
    #[error("proportion {index} is negative ({value})")]
    NegativeEntry { index: usize, value: f64 },
    #[error("proportion {index} is not finite")]
    NonFinite { index: usize },
    #[error("proportions sum to {0}, outside tolerance")]
    SumOutOfTolerance(f64),
}

/// Rejects negatives and rows whose sum is off by more than `tol`; closes
/// the rest onto the simplex.
pub fn validate_proportions(row: &[f64], tol: f64) -> Result<Composition, ProportionError> {
    if row.len() < 2 {
        return Err(ProportionError::TooFewParts(row.len()));
    }
    if let Some(index) = row.iter().position(|v| !v.is_finite()) {
        return Err(ProportionError::NonFinite { index });
    }
    if let Some((index, &value)) = row.iter().enumerate().find(|(_, v)| **v < 0.0) {
        return Err(ProportionError::NegativeEntry { index, value });
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > tol {
        return Err(ProportionError::SumOutOfTolerance(sum));
    }
    Ok(closure(row).expect("validated non-negative row with positive sum"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpotRecord {
    pub id: String,
    /// Image pixel coordinates, origin top-left, y pointing down.
    pub position: [f64; 2],
    pub composition: Composition,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRef {
    pub path: PathBuf,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Dataset {
    cell_types: Vec<String>,
    spots: Vec<SpotRecord>,
    image: ImageRef,
    spot_radius_px: f64,
}

impl Dataset {
    pub fn new(
        cell_types: Vec<String>,
        spots: Vec<SpotRecord>,
        image: ImageRef,
        spot_radius_px: f64,
    ) -> Result<Self, DatasetError> {
        if cell_types.len() < 2 {
            return Err(DatasetError::Invalid("need at least 2 cell types".into()));
        }
        let mut names = HashSet::new();
        if let Some(dup) = cell_types.iter().find(|t| !names.insert(t.as_str())) {
            return Err(DatasetError::Invalid(format!("duplicate cell type {dup:?}")));
        }
        if spots.is_empty() {
            return Err(DatasetError::Invalid("dataset has no spots".into()));
        }
        if !(spot_radius_px.is_finite() && spot_radius_px > 0.0) {
            return Err(DatasetError::Invalid(format!(
                "spot radius must be positive, got {spot_radius_px}"
            )));
        }
        let mut ids = HashSet::new();
        for s in &spots {
            if !ids.insert(s.id.as_str()) {
                return Err(DatasetError::DuplicateId(s.id.clone()));
            }
            if s.composition.dim() != cell_types.len() {
                return Err(DatasetError::Invalid(format!(
                    "spot {:?} has {} parts, expected {}",
                    s.id,
                    s.composition.dim(),
                    cell_types.len()
                )));
            }
            let [x, y] = s.position;
            let inside = x >= 0.0 && y >= 0.0 && x < image.width as f64 && y < image.height as f64;
            if !inside {
                return Err(DatasetError::OutOfBounds(s.id.clone()));
            }
        }
        Ok(Self {
            cell_types,
            spots,
            image,
            spot_radius_px,
        })
    }

    pub fn cell_types(&self) -> &[String] {
        &self.cell_types
    }

    pub fn spots(&self) -> &[SpotRecord] {
        &self.spots
    }

    pub fn image(&self) -> &ImageRef {
        &self.image
    }

    pub fn spot_radius_px(&self) -> f64 {
        self.spot_radius_px
    }

    pub fn len(&self) -> usize {
        self.spots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spots.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.cell_types.len()
    }

    pub fn cell_type_index(&self, name: &str) -> Option<usize> {
        self.cell_types.iter().position(|t| t == name)
    }

    pub fn compositions(&self) -> Vec<Composition> {
        self.spots.iter().map(|s| s.composition.clone()).collect()
    }

    pub fn positions(&self) -> Vec<[f64; 2]> {
        self.spots.iter().map(|s| s.position).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub proportions: PathBuf,
    pub positions: PathBuf,
    pub image: PathBuf,
    #[serde(default = "default_radius")]
    pub spot_radius_px: f64,
}

fn default_radius() -> f64 {
    DEFAULT_SPOT_RADIUS_PX
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn read_file(path: &Path) -> Result<String, DatasetError> {
    fs::read_to_string(path).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => DatasetError::MissingFile(path.to_path_buf()),
        _ => DatasetError::Io(e),
    })
}

fn csv_reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes())
}

fn csv_error(file: &Path, err: csv::Error) -> DatasetError {
    let line = err.position().map_or(0, |p| p.line());
    DatasetError::Parse {
        file: file.to_path_buf(),
        line,
        column: None,
        message: err.to_string(),
    }
}

fn parse_field(file: &Path, line: u64, column: usize, raw: &str) -> Result<f64, DatasetError> {
    raw.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| DatasetError::Parse {
            file: file.to_path_buf(),
            line,
            column: Some(column),
            message: format!("not a finite number: {raw:?}"),
        })
}

type ProportionRows = (Vec<String>, HashMap<String, Composition>);

fn read_proportions(path: &Path, tol: f64) -> Result<ProportionRows, DatasetError> {
    let text = read_file(path)?;
    let mut rdr = csv_reader(&text);
    let header = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    let bad_header = |message: String| DatasetError::BadHeader {
        file: path.to_path_buf(),
        message,
    };
    if header.get(0) != Some("spot_id") {
        return Err(bad_header("first column must be spot_id".into()));
    }
    let cell_types: Vec<String> = header.iter().skip(1).map(str::to_owned).collect();
    if cell_types.len() < 2 {
        return Err(bad_header("need at least two cell-type columns".into()));
    }
    let mut seen = HashSet::new();
    if let Some(dup) = cell_types.iter().find(|t| t.is_empty() || !seen.insert(t.as_str())) {
        return Err(bad_header(format!("empty or duplicate cell type {dup:?}")));
    }

    let mut rows = HashMap::new();
    for record in rdr.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != header.len() {
            return Err(DatasetError::Parse {
                file: path.to_path_buf(),
                line,
                column: Some(record.len().min(header.len()) + 1),
                message: format!("expected {} fields, got {}", header.len(), record.len()),
            });
        }
        let id = record[0].to_owned();
        let values = record
            .iter()
            .enumerate()
            .skip(1)
            .map(|(col, raw)| parse_field(path, line, col + 1, raw))
            .collect::<Result<Vec<_>, _>>()?;
        let comp = validate_proportions(&values, tol).map_err(|e| DatasetError::Parse {
            file: path.to_path_buf(),
            line,
            column: match e {
                ProportionError::NegativeEntry { index, .. }
                | ProportionError::NonFinite { index } => Some(index + 2),
                _ => None,
            },
            message: e.to_string(),
        })?;
        if rows.insert(id.clone(), comp).is_some() {
            return Err(DatasetError::DuplicateId(id));
        }
    }
    Ok((cell_types, rows))
}

fn read_positions(path: &Path) -> Result<Vec<(String, [f64; 2], u64)>, DatasetError> {
    let text = read_file(path)?;
    let mut rdr = csv_reader(&text);
    let header = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.iter().collect::<Vec<_>>() != ["spot_id", "x", "y"] {
        return Err(DatasetError::BadHeader {
            file: path.to_path_buf(),
            message: "expected spot_id,x,y".into(),
        });
    }
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 3 {
            return Err(DatasetError::Parse {
                file: path.to_path_buf(),
                line,
                column: Some(record.len().min(3) + 1),
                message: format!("expected 3 fields, got {}", record.len()),
            });
        }
        let x = parse_field(path, line, 2, &record[1])?;
        let y = parse_field(path, line, 3, &record[2])?;
        out.push((record[0].to_owned(), [x, y], line));
    }
    Ok(out)
}

/// Loads and validates the dataset described by a JSON manifest.
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset, DatasetError> {
    load_dataset_with_tolerance(manifest_path, DEFAULT_SUM_TOLERANCE)
}

pub fn load_dataset_with_tolerance(
    manifest_path: &Path,
    tol: f64,
) -> Result<Dataset, DatasetError> {
    let text = read_file(manifest_path)?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| DatasetError::Manifest(e.to_string()))?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));

    let image_path = resolve(base, &manifest.image);
    if !image_path.is_file() {
        return Err(DatasetError::MissingFile(image_path));
    }
    let (width, height) =
        image::image_dimensions(&image_path).map_err(|e| DatasetError::Image(e.to_string()))?;

    let (cell_types, mut proportions) = read_proportions(&resolve(base, &manifest.proportions), tol)?;
    let positions = read_positions(&resolve(base, &manifest.positions))?;

    let mut spots = Vec::with_capacity(positions.len());
    for (id, position, _line) in positions {
        let composition = proportions
            .remove(&id)
            .ok_or_else(|| DatasetError::IdMismatch(id.clone()))?;
        spots.push(SpotRecord {
            id,
            position,
            composition,
        });
    }
    if let Some(id) = proportions.into_keys().min() {
        return Err(DatasetError::IdMismatch(id));
    }

    Dataset::new(
        cell_types,
        spots,
        ImageRef {
            path: image_path,
            width,
            height,
        },
        manifest.spot_radius_px,
    )
}

pub const PROPORTIONS_FILE: &str = "proportions.csv";
pub const POSITIONS_FILE: &str = "positions.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes the two CSV tables and a manifest into `dir`; returns the manifest
/// path. The image is referenced, not copied: a relative image path in the
/// dataset is written as-is and therefore resolves against `dir`.
pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<PathBuf, DatasetError> {
    fs::create_dir_all(dir)?;

    let mut props = csv::Writer::from_path(dir.join(PROPORTIONS_FILE)).map_err(csv_io)?;
    let mut header = vec!["spot_id".to_owned()];
    header.extend(dataset.cell_types.iter().cloned());
    props.write_record(&header).map_err(csv_io)?;
    for s in &dataset.spots {
        let mut rec = vec![s.id.clone()];
        rec.extend(s.composition.parts().iter().map(|v| v.to_string()));
        props.write_record(&rec).map_err(csv_io)?;
    }
    props.flush()?;

    let mut pos = csv::Writer::from_path(dir.join(POSITIONS_FILE)).map_err(csv_io)?;
    pos.write_record(["spot_id", "x", "y"]).map_err(csv_io)?;
    for s in &dataset.spots {
        pos.write_record([s.id.clone(), s.position[0].to_string(), s.position[1].to_string()])
            .map_err(csv_io)?;
    }
    pos.flush()?;

    let manifest = Manifest {
        proportions: PROPORTIONS_FILE.into(),
        positions: POSITIONS_FILE.into(),
        image: dataset.image.path.clone(),
        spot_radius_px: dataset.spot_radius_px,
    };
    let manifest_path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&manifest_path, json + "\n")?;
    Ok(manifest_path)
}

fn csv_io(e: csv::Error) -> DatasetError {
    DatasetError::Io(io::Error::other(e))
}

/// Writes a flat mid-gray RGB PNG of the given size.
pub fn write_placeholder_image(path: &Path, width: u32, height: u32) -> Result<(), DatasetError> {
    let img = image::RgbImage::from_pixel(width, height, image::Rgb([128, 128, 128]));
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| DatasetError::Image(e.to_string()))
}

/// Area a synthetic region occupies. A spot belongs to the first listed
/// region containing it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RegionShape {
    /// Points with `normal . p <= offset`.
    HalfPlane { normal: [f64; 2], offset: f64 },
    /// Closed polygon, boundary included.
    Polygon { vertices: Vec<[f64; 2]> },
}

impl RegionShape {
    pub fn contains(&self, p: [f64; 2]) -> bool {
        match self {
            RegionShape::HalfPlane { normal, offset } => {
                normal[0] * p[0] + normal[1] * p[1] <= *offset
            }
            RegionShape::Polygon { vertices } => crate::session::point_in_polygon(p, vertices),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub shape: RegionShape,
    /// Dirichlet concentration, one strictly positive entry per cell type.
    pub concentration: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub width: u32,
    pub height: u32,
    pub grid_step: f64,
    pub regions: Vec<Region>,
    pub seed: u64,
    /// Defaults to `celltype_1..celltype_d`.
    #[serde(default)]
    pub cell_types: Option<Vec<String>>,
    #[serde(default = "default_radius")]
    pub spot_radius_px: f64,
    /// Image path recorded in the dataset; relative paths resolve against
    /// the directory the dataset is written to.
    #[serde(default = "default_image_name")]
    pub image_path: PathBuf,
}

fn default_image_name() -> PathBuf {
    PathBuf::from("image.png")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticGroundTruth {
    pub region_labels: Vec<usize>,
    pub region_params: Vec<Vec<f64>>,
}

/// Lays spots on a regular grid (cell centers at `step/2 + i*step`) and
/// draws each composition from its region's Dirichlet distribution.
pub fn generate_synthetic(
    spec: &SyntheticSpec,
) -> Result<(Dataset, SyntheticGroundTruth), DatasetError> {
    let step = spec.grid_step;
    if !(step.is_finite() && step > 0.0) {
        return Err(DatasetError::Invalid(format!("grid step must be positive, got {step}")));
    }
    let Some(first) = spec.regions.first() else {
        return Err(DatasetError::Invalid("at least one region is required".into()));
    };
    let d = first.concentration.len();
    for r in &spec.regions {
        if r.concentration.len() != d {
            return Err(DatasetError::Invalid("regions disagree on the number of cell types".into()));
        }
        if r.concentration.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
            return Err(DatasetError::Invalid("concentrations must be strictly positive".into()));
        }
    }
    let cell_types = match &spec.cell_types {
        Some(names) if names.len() == d => names.clone(),
        Some(names) => {
            return Err(DatasetError::Invalid(format!(
                "{} cell-type names for {d} concentration entries",
                names.len()
            )))
        }
        None => (1..=d).map(|i| format!("celltype_{i}")).collect(),
    };

    let axis = |extent: u32| -> Vec<f64> {
        (0..)
            .map(|i| step / 2.0 + i as f64 * step)
            .take_while(|&v| v < extent as f64)
            .collect()
    };
    let xs = axis(spec.width);
    let ys = axis(spec.height);
    // A step wider than the image puts its first center outside too.
    if xs.is_empty() || ys.is_empty() || step > spec.width as f64 || step > spec.height as f64 {
        return Err(DatasetError::EmptyGrid {
            width: spec.width,
            height: spec.height,
            step,
        });
    }

    let gammas: Vec<Vec<Gamma<f64>>> = spec
        .regions
        .iter()
        .map(|r| {
            r.concentration
                .iter()
                .map(|&a| Gamma::new(a, 1.0).expect("positive shape"))
                .collect()
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let total = xs.len() * ys.len();
    let width = total.to_string().len().max(4);
    let mut spots = Vec::with_capacity(total);
    let mut labels = Vec::with_capacity(total);
    for &y in &ys {
        for &x in &xs {
            let region = spec
                .regions
                .iter()
                .position(|r| r.shape.contains([x, y]))
                .ok_or(DatasetError::UncoveredSpot { x, y })?;
            let draw: Vec<f64> = gammas[region].iter().map(|g| g.sample(&mut rng)).collect();
            let composition = closure(&draw)
                .map_err(|e| DatasetError::Invalid(format!("Dirichlet draw failed: {e}")))?;
            spots.push(SpotRecord {
                id: format!("spot_{:0width$}", spots.len()),
                position: [x, y],
                composition,
            });
            labels.push(region);
        }
    }

    let dataset = Dataset::new(
        cell_types,
        spots,
        ImageRef {
            path: spec.image_path.clone(),
            width: spec.width,
            height: spec.height,
        },
        spec.spot_radius_px,
    )?;
    let truth = SyntheticGroundTruth {
        region_labels: labels,
        region_params: spec.regions.iter().map(|r| r.concentration.clone()).collect(),
    };
    Ok((dataset, truth))
}

/// The two-region fixture: a 500x500 image, 10 px grid (2,500 spots), six
/// cell types; the left half is dominated by the first type and the right
/// half by the last.
pub fn two_regions_preset(seed: u64) -> SyntheticSpec {
    let mut left = vec![1.0; 6];
    left[0] = 50.0;
    let mut right = vec![1.0; 6];
    right[5] = 50.0;
    SyntheticSpec {
        width: 500,
        height: 500,
        grid_step: 10.0,
        regions: vec![
            Region {
                shape: RegionShape::HalfPlane {
                    normal: [1.0, 0.0],
                    offset: 250.0,
                },
                concentration: left,
            },
            Region {
                shape: RegionShape::HalfPlane {
                    normal: [-1.0, 0.0],
                    offset: -250.0,
                },
                concentration: right,
            },
        ],
        seed,
        cell_types: None,
        spot_radius_px: DEFAULT_SPOT_RADIUS_PX,
        image_path: default_image_name(),
    }
}
