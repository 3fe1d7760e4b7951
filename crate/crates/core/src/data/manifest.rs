//! CSV dataset manifests: the on-disk catalog format.
//!
//! A manifest is a CSV file with the exact header
//! `image_path,tissue_label,cell_label,pair_path,split`. Paths are relative
//! to the manifest's directory; `cell_label` and `pair_path` may be empty.
//! `pair_path` names the paired input used by the `mask` and `external_pair`
//! degradations (a categorical mask PNG or an alternative-modality RGB PNG,
//! respectively).
//!
//! The source id of a record is its image file stem up to the last
//! underscore (`images/src00012_img.png` → `src00012`); a stem without an
//! underscore is its own source id. Records from the same source must not
//! straddle the train/test split.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::degrade::{mask_to_3channel, DegradeSpec, Degradation, MASK_CLASS_COUNT};
use super::tile::{load_mask_png, ImageTile};
use super::{DataError, PairedSample};

/// Train/test split tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}` (expected train or test)")),
        }
    }
}

/// One manifest row.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRecord {
    /// Dense image, relative to the manifest directory.
    pub image_path: PathBuf,
    pub tissue_label: String,
    pub cell_label: Option<String>,
    /// Paired input (mask or alternative modality), relative to the
    /// manifest directory.
    pub pair_path: Option<PathBuf>,
    pub split: Split,
}

/// A validated dataset catalog with class name tables.
#[derive(Debug, Clone)]
pub struct DatasetManifest {
    root: PathBuf,
    records: Vec<ManifestRecord>,
    tissue_classes: Vec<String>,
    cell_classes: Vec<String>,
}

const HEADER: [&str; 5] = ["image_path", "tissue_label", "cell_label", "pair_path", "split"];

/// Derives the source identity from an image path: the file stem up to the
/// last underscore.
pub fn source_id_of(path: &Path) -> String {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    match stem.rfind('_') {
        Some(pos) => stem[..pos].to_string(),
        None => stem,
    }
}

/// Reads and validates a manifest: header shape, file existence, split
/// hygiene. Row numbers in errors are 1-based data rows (header excluded).
pub fn load_manifest(path: &Path) -> Result<DatasetManifest, DataError> {
    let root = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_path(path)
        .map_err(|e| DataError::ManifestLoad {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
    let headers = reader
        .headers()
        .map_err(|e| DataError::ManifestLoad {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?
        .clone();
    if headers.iter().collect::<Vec<_>>() != HEADER {
        return Err(DataError::ManifestLoad {
            path: path.to_path_buf(),
            detail: format!(
                "header must be `{}`, found `{}`",
                HEADER.join(","),
                headers.iter().collect::<Vec<_>>().join(",")
            ),
        });
    }

    let mut records = Vec::new();
    let mut source_split: BTreeMap<String, Split> = BTreeMap::new();
    for (idx, row) in reader.records().enumerate() {
        let rownum = idx + 1;
        let row = row.map_err(|e| DataError::ManifestRow {
            row: rownum,
            detail: e.to_string(),
        })?;
        let field = |i: usize| row.get(i).unwrap_or("").trim().to_string();
        let image_path = PathBuf::from(field(0));
        if image_path.as_os_str().is_empty() {
            return Err(DataError::ManifestRow {
                row: rownum,
                detail: "empty image_path".into(),
            });
        }
        let tissue_label = field(1);
        if tissue_label.is_empty() {
            return Err(DataError::ManifestRow {
                row: rownum,
                detail: "empty tissue_label".into(),
            });
        }
        let cell_label = Some(field(2)).filter(|s| !s.is_empty());
        let pair_path = Some(field(3)).filter(|s| !s.is_empty()).map(PathBuf::from);
        let split: Split = field(4).parse().map_err(|e| DataError::ManifestRow {
            row: rownum,
            detail: e,
        })?;

        if !root.join(&image_path).is_file() {
            return Err(DataError::ManifestRow {
                row: rownum,
                detail: format!("referenced image `{}` does not exist", image_path.display()),
            });
        }
        if let Some(p) = &pair_path {
            if !root.join(p).is_file() {
                return Err(DataError::ManifestRow {
                    row: rownum,
                    detail: format!("referenced pair `{}` does not exist", p.display()),
                });
            }
        }

        let source = source_id_of(&image_path);
        match source_split.get(&source) {
            Some(prev) if *prev != split => {
                return Err(DataError::SplitOverlap { source_id: source });
            }
            _ => {
                source_split.insert(source, split);
            }
        }

        records.push(ManifestRecord {
            image_path,
            tissue_label,
            cell_label,
            pair_path,
            split,
        });
    }

    let mut tissue_classes: Vec<String> = records.iter().map(|r| r.tissue_label.clone()).collect();
    tissue_classes.sort();
    tissue_classes.dedup();
    let mut cell_classes: Vec<String> = records
        .iter()
        .filter_map(|r| r.cell_label.clone())
        .collect();
    cell_classes.sort();
    cell_classes.dedup();

    Ok(DatasetManifest {
        root,
        records,
        tissue_classes,
        cell_classes,
    })
}

/// Writes records in the documented CSV format, creating parent directories.
pub fn save_manifest(path: &Path, records: &[ManifestRecord]) -> Result<(), DataError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|source| DataError::Io {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    let mut writer = csv::Writer::from_path(path).map_err(|e| DataError::ManifestLoad {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    writer
        .write_record(HEADER)
        .and_then(|()| {
            for r in records {
                writer.write_record([
                    r.image_path.display().to_string(),
                    r.tissue_label.clone(),
                    r.cell_label.clone().unwrap_or_default(),
                    r.pair_path
                        .as_ref()
                        .map(|p| p.display().to_string())
                        .unwrap_or_default(),
                    r.split.to_string(),
                ])?;
            }
            writer.flush()?;
            Ok(())
        })
        .map_err(|e| DataError::ManifestLoad {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[ManifestRecord] {
        &self.records
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Sorted distinct tissue label names; a label's class id is its index.
    pub fn tissue_classes(&self) -> &[String] {
        &self.tissue_classes
    }

    /// Sorted distinct cell label names; a label's class id is its index.
    pub fn cell_classes(&self) -> &[String] {
        &self.cell_classes
    }

    /// Materializes one split: loads dense tiles and constructs sparse views
    /// per the degradation spec. Labels are class-table indices.
    pub fn load_split(
        &self,
        split: Split,
        degrade: &DegradeSpec,
    ) -> Result<Vec<PairedSample>, DataError> {
        let mut out = Vec::new();
        for (idx, rec) in self.records.iter().enumerate() {
            if rec.split != split {
                continue;
            }
            let rownum = idx + 1;
            let dense = ImageTile::load_png(&self.root.join(&rec.image_path))?;
            let sparse = match degrade.kind {
                Degradation::CropPad | Degradation::Downsample => {
                    degrade.sparse_from_dense(&dense)?
                }
                Degradation::Mask => {
                    let p = rec.pair_path.as_ref().ok_or(DataError::ManifestRow {
                        row: rownum,
                        detail: "mask degradation requires pair_path".into(),
                    })?;
                    let mask = load_mask_png(&self.root.join(p))?;
                    mask_to_3channel(&mask, MASK_CLASS_COUNT)?
                }
                Degradation::ExternalPair => {
                    let p = rec.pair_path.as_ref().ok_or(DataError::ManifestRow {
                        row: rownum,
                        detail: "external_pair degradation requires pair_path".into(),
                    })?;
                    ImageTile::load_png(&self.root.join(p))?
                }
            };
            let tissue_label = self
                .tissue_classes
                .binary_search(&rec.tissue_label)
                .map_err(|_| DataError::ManifestRow {
                    row: rownum,
                    detail: format!("tissue label `{}` missing from class table", rec.tissue_label),
                })?;
            let cell_label = match &rec.cell_label {
                Some(name) => Some(self.cell_classes.binary_search(name).map_err(|_| {
                    DataError::ManifestRow {
                        row: rownum,
                        detail: format!("cell label `{name}` missing from class table"),
                    }
                })?),
                None => None,
            };
            out.push(PairedSample {
                dense,
                sparse,
                tissue_label,
                cell_label,
                source_id: source_id_of(&rec.image_path),
            });
        }
        Ok(out)
    }
}
