//! Report assembly: gathers the artifacts of a set of runs into one
//! self-contained directory — a JSON index, an accuracy table mirroring the
//! sweep grid (loss × asymmetric × shared-weights rows), per-evaluation
//! confusion tables, and copies of any CKA / saliency images the runs
//! produced. All outputs are byte-deterministic for a fixed input tree.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use image::{GrayImage, Luma, Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use super::{AnalysisError, CkaMatrix, Heatmap};
use crate::data::ImageTile;
use crate::train::RunSummary;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> AnalysisError + '_ {
    move |source| AnalysisError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// One evaluation outcome, written by the `eval` command into a run
/// directory as `eval_<task>_<branch>_<split>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalArtifact {
    pub task: String,
    pub branch: String,
    pub split: String,
    pub accuracy: f64,
    pub n_classes: usize,
    /// `confusion[true][pred]` counts.
    pub confusion: Vec<Vec<usize>>,
}

impl EvalArtifact {
    pub fn file_name(&self) -> String {
        format!("eval_{}_{}_{}.json", self.task, self.branch, self.split)
    }

    pub fn save(&self, run_dir: &Path) -> Result<PathBuf, AnalysisError> {
        let path = run_dir.join(self.file_name());
        let json = serde_json::to_string_pretty(self).expect("artifact serializes");
        std::fs::write(&path, json).map_err(io_err(&path))?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<Self, AnalysisError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|e| AnalysisError::BadArtifact {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })
    }

    /// Confusion matrix as CSV with labeled axes (rows = true class).
    pub fn confusion_csv(&self) -> String {
        let mut out = String::from("true\\pred");
        for c in 0..self.n_classes {
            out.push_str(&format!(",{c}"));
        }
        out.push('\n');
        for (r, row) in self.confusion.iter().enumerate() {
            out.push_str(&r.to_string());
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

/// A short per-eval line for the report index.
#[derive(Debug, Clone, Serialize)]
pub struct EvalLine {
    pub task: String,
    pub branch: String,
    pub split: String,
    pub accuracy: f64,
}

/// One discovered run: its summary plus the grid coordinates parsed from
/// the config copy (absent for supervised runs and bare directories).
#[derive(Debug, Clone, Serialize)]
pub struct RunEntry {
    pub dir: String,
    pub kind: String,
    pub config_hash: String,
    pub seed: u64,
    pub loss: Option<String>,
    pub asymmetric: Option<bool>,
    pub shared_weights: Option<bool>,
    pub accuracies: BTreeMap<String, f64>,
    pub evals: Vec<EvalLine>,
    #[serde(skip)]
    pub eval_artifacts: Vec<EvalArtifact>,
    #[serde(skip)]
    pub path: PathBuf,
}

/// Scans `root` for run subdirectories containing a `summary.json`.
/// Directories without one are listed as absent (skipped), not errors.
/// Entries come back sorted by directory name.
pub fn collect_runs(root: &Path) -> Result<Vec<RunEntry>, AnalysisError> {
    let mut names: Vec<String> = Vec::new();
    for entry in std::fs::read_dir(root).map_err(io_err(root))? {
        let entry = entry.map_err(io_err(root))?;
        if entry.path().is_dir() {
            names.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    names.sort();

    let mut runs = Vec::new();
    for name in names {
        let dir = root.join(&name);
        let summary_path = dir.join("summary.json");
        let Ok(summary) = RunSummary::load(&summary_path) else {
            continue; // absent or unreadable run: listed as missing, not fatal
        };

        // Grid coordinates from the config copy, when one exists and has
        // the fields (the supervised baseline's config has none of them).
        let (mut loss, mut asymmetric, mut shared_weights) = (None, None, None);
        if let Ok(text) = std::fs::read_to_string(dir.join("config.toml")) {
            if let Ok(val) = text.parse::<toml::Value>() {
                loss = val.get("loss").and_then(|v| v.as_str()).map(String::from);
                asymmetric = val.get("asymmetric").and_then(|v| v.as_bool());
                shared_weights = val.get("shared_weights").and_then(|v| v.as_bool());
            }
        }

        let mut eval_files: Vec<PathBuf> = Vec::new();
        for entry in std::fs::read_dir(&dir).map_err(io_err(&dir))? {
            let path = entry.map_err(io_err(&dir))?.path();
            let fname = path.file_name().unwrap_or_default().to_string_lossy();
            if fname.starts_with("eval_") && fname.ends_with(".json") {
                eval_files.push(path);
            }
        }
        eval_files.sort();
        let mut eval_artifacts = Vec::new();
        for path in &eval_files {
            eval_artifacts.push(EvalArtifact::load(path)?);
        }
        let evals = eval_artifacts
            .iter()
            .map(|e| EvalLine {
                task: e.task.clone(),
                branch: e.branch.clone(),
                split: e.split.clone(),
                accuracy: e.accuracy,
            })
            .collect();

        runs.push(RunEntry {
            dir: name,
            kind: summary.kind,
            config_hash: summary.config_hash,
            seed: summary.seed,
            loss,
            asymmetric,
            shared_weights,
            accuracies: summary.accuracies,
            evals,
            eval_artifacts,
            path: dir,
        });
    }
    Ok(runs)
}

fn opt_str<T: std::fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map(|x| x.to_string()).unwrap_or_default()
}

/// The grid-shaped accuracy table: one row per run, the loss / asymmetric /
/// shared-weights columns first, then every accuracy key seen in any run.
fn accuracy_table(runs: &[RunEntry]) -> String {
    let acc_keys: BTreeSet<&str> = runs
        .iter()
        .flat_map(|r| r.accuracies.keys().map(String::as_str))
        .collect();
    let mut out = String::from("run,kind,loss,asymmetric,shared_weights");
    for k in &acc_keys {
        out.push(',');
        out.push_str(k);
    }
    out.push('\n');
    for r in runs {
        out.push_str(&format!(
            "{},{},{},{},{}",
            r.dir,
            r.kind,
            opt_str(&r.loss),
            opt_str(&r.asymmetric),
            opt_str(&r.shared_weights)
        ));
        for k in &acc_keys {
            out.push(',');
            if let Some(v) = r.accuracies.get(*k) {
                out.push_str(&format!("{v:e}"));
            }
        }
        out.push('\n');
    }
    out
}

/// Renders a CKA matrix as a grayscale image: one `cell_px`² block per
/// entry, 0 → black, 1 → white, rows = model-A layers top to bottom.
pub fn render_cka_image(m: &CkaMatrix, cell_px: usize) -> GrayImage {
    let cell = cell_px.max(1) as u32;
    let (rows, cols) = m.values.dim();
    let mut img = GrayImage::new(cols as u32 * cell, rows as u32 * cell);
    for (x, y, px) in img.enumerate_pixels_mut() {
        let r = (y / cell) as usize;
        let c = (x / cell) as usize;
        let v = m.values[[r, c]].clamp(0.0, 1.0);
        *px = Luma([(v * 255.0).round() as u8]);
    }
    img
}

/// Blends a saliency heatmap over its source image: hot pixels pull toward
/// red, cold ones toward blue, at 50% opacity over the tile.
pub fn render_overlay_image(tile: &ImageTile, hm: &Heatmap) -> Result<RgbImage, AnalysisError> {
    let (h, w) = hm.values.dim();
    if (tile.height(), tile.width()) != (h, w) {
        return Err(AnalysisError::AxisMismatch {
            detail: format!(
                "heatmap {h}x{w} vs image {}x{}",
                tile.height(),
                tile.width()
            ),
        });
    }
    let px = tile.pixels();
    let to_u8 = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    let mut img = RgbImage::new(w as u32, h as u32);
    for (x, y, out) in img.enumerate_pixels_mut() {
        let (r, c) = (y as usize, x as usize);
        let heat = hm.values[[r, c]];
        *out = Rgb([
            to_u8(0.5 * px[[r, c, 0]] + 0.5 * heat),
            to_u8(0.5 * px[[r, c, 1]]),
            to_u8(0.5 * px[[r, c, 2]] + 0.5 * (1.0 - heat)),
        ]);
    }
    Ok(img)
}

/// Saves an image, mapping failures to [`AnalysisError::Image`].
pub fn save_image<P>(img: &image::ImageBuffer<P, Vec<u8>>, path: &Path) -> Result<(), AnalysisError>
where
    P: image::Pixel<Subpixel = u8> + image::PixelWithColorType,
{
    img.save(path).map_err(|source| AnalysisError::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Names of run-dir files that the report copies verbatim (analysis images
/// and CKA tables produced by the `cka` / `gradcam` commands).
fn is_copied_artifact(name: &str) -> bool {
    (name.starts_with("cka_") && (name.ends_with(".csv") || name.ends_with(".png")))
        || (name.starts_with("gradcam_") && name.ends_with(".png"))
}

#[derive(Serialize)]
struct ReportIndex<'a> {
    runs: &'a [RunEntry],
    /// Report-relative paths of every file, index excluded.
    files: Vec<String>,
}

/// Builds the report directory: `index.json`, `accuracy_table.csv`, one
/// confusion CSV per evaluation, and copies of per-run analysis images.
/// Returns the paths written (index first).
pub fn render_report(root: &Path, out_dir: &Path) -> Result<Vec<PathBuf>, AnalysisError> {
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let runs = collect_runs(root)?;

    let mut files: Vec<String> = Vec::new();
    let mut write = |name: &str, bytes: &[u8]| -> Result<PathBuf, AnalysisError> {
        let path = out_dir.join(name);
        std::fs::write(&path, bytes).map_err(io_err(&path))?;
        files.push(name.to_string());
        Ok(path)
    };

    write("accuracy_table.csv", accuracy_table(&runs).as_bytes())?;
    for run in &runs {
        for eval in &run.eval_artifacts {
            let name = format!(
                "confusion_{}_{}_{}_{}.csv",
                run.dir, eval.task, eval.branch, eval.split
            );
            write(&name, eval.confusion_csv().as_bytes())?;
        }
        let mut names: Vec<String> = Vec::new();
        for entry in std::fs::read_dir(&run.path).map_err(io_err(&run.path))? {
            let path = entry.map_err(io_err(&run.path))?.path();
            let fname = path.file_name().unwrap_or_default().to_string_lossy();
            if path.is_file() && is_copied_artifact(&fname) {
                names.push(fname.into_owned());
            }
        }
        names.sort();
        for fname in names {
            let bytes = std::fs::read(run.path.join(&fname)).map_err(io_err(&run.path))?;
            write(&format!("{}_{}", run.dir, fname), &bytes)?;
        }
    }

    let index = ReportIndex {
        runs: &runs,
        files: files.clone(),
    };
    let index_path = out_dir.join("index.json");
    let json = serde_json::to_string_pretty(&index).expect("index serializes");
    std::fs::write(&index_path, json).map_err(io_err(&index_path))?;

    let mut written = vec![index_path];
    written.extend(files.into_iter().map(|f| out_dir.join(f)));
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::{config_hash, ExperimentConfig, LossKind};
    use crate::data::Degradation;
    use ndarray::Array2;

    fn fake_run(
        root: &Path,
        name: &str,
        kind: &str,
        seed: u64,
        config: Option<&ExperimentConfig>,
        acc: &[(&str, f64)],
    ) {
        let dir = root.join(name);
        std::fs::create_dir_all(&dir).unwrap();
        let mut summary = RunSummary {
            kind: kind.into(),
            config_hash: config.map(config_hash).unwrap_or_else(|| "feed".into()),
            seed,
            epochs: 1,
            steps: 2,
            initial_loss: 2.0,
            final_loss: 1.0,
            wall_clock_s: 123.456, // must not leak into report bytes
            ..RunSummary::default()
        };
        for (k, v) in acc {
            summary.accuracies.insert((*k).to_string(), *v);
        }
        summary.save(&dir.join("summary.json")).unwrap();
        if let Some(cfg) = config {
            std::fs::write(dir.join("config.toml"), cfg.to_toml()).unwrap();
        }
    }

    fn sample_eval() -> EvalArtifact {
        EvalArtifact {
            task: "tissue".into(),
            branch: "sparse".into(),
            split: "test".into(),
            accuracy: 0.75,
            n_classes: 2,
            confusion: vec![vec![3, 1], vec![1, 3]],
        }
    }

    #[test]
    fn empty_run_set_yields_a_valid_empty_report() {
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path().join("runs");
        std::fs::create_dir_all(&root).unwrap();
        let out = tmp.path().join("report");
        let written = render_report(&root, &out).unwrap();
        assert!(written.iter().any(|p| p.ends_with("index.json")));
        let idx: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(out.join("index.json")).unwrap())
                .unwrap();
        assert_eq!(idx["runs"].as_array().unwrap().len(), 0);
        let table = std::fs::read_to_string(out.join("accuracy_table.csv")).unwrap();
        assert_eq!(table.lines().count(), 1, "header only");
    }

    #[test]
    fn directories_without_summaries_are_skipped_not_fatal() {
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path();
        fake_run(root, "run_a", "joint", 1, None, &[("p", 0.5)]);
        std::fs::create_dir_all(root.join("incomplete")).unwrap();
        std::fs::write(root.join("stray.txt"), "not a run").unwrap();
        let runs = collect_runs(root).unwrap();
        assert_eq!(runs.len(), 1);
        assert_eq!(runs[0].dir, "run_a");
        assert_eq!(runs[0].loss, None, "no config copy, no grid columns");
    }

    #[test]
    fn eight_condition_grid_gives_eight_rows_with_grid_columns() {
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path();
        let mut n = 0;
        for loss in [LossKind::Vicreg, LossKind::Simclr] {
            for asym in [false, true] {
                for shared in [false, true] {
                    let cfg =
                        ExperimentConfig::desk(loss, asym, shared, Degradation::Downsample, 0);
                    fake_run(
                        root,
                        &format!("run_{n}"),
                        "joint",
                        0,
                        Some(&cfg),
                        &[("probe_tissue_sparse_test", 0.5 + 0.01 * n as f64)],
                    );
                    n += 1;
                }
            }
        }
        let out = root.join("report");
        render_report(root, &out).unwrap();
        let table = std::fs::read_to_string(out.join("accuracy_table.csv")).unwrap();
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines.len(), 9, "header + 8 grid rows");
        assert!(lines[0].starts_with("run,kind,loss,asymmetric,shared_weights"));
        assert!(lines[0].ends_with(",probe_tissue_sparse_test"));
        // Each grid cell appears exactly once.
        for loss in ["vicreg", "simclr"] {
            for asym in ["false", "true"] {
                for shared in ["false", "true"] {
                    let cell = format!(",joint,{loss},{asym},{shared},");
                    assert_eq!(
                        lines.iter().filter(|l| l.contains(&cell)).count(),
                        1,
                        "{cell}"
                    );
                }
            }
        }
    }

    #[test]
    fn report_bytes_are_identical_across_renders() {
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path();
        let cfg = ExperimentConfig::desk(LossKind::Vicreg, true, false, Degradation::Mask, 3);
        fake_run(root, "run_x", "joint", 3, Some(&cfg), &[("a", 0.25), ("b", 0.5)]);
        sample_eval().save(&root.join("run_x")).unwrap();
        // An analysis image in the run dir gets copied verbatim.
        std::fs::write(root.join("run_x").join("cka_layers.csv"), "layer,x\n").unwrap();

        let out1 = root.join("report1");
        let out2 = root.join("report2");
        let w1 = render_report(root, &out1).unwrap();
        render_report(root, &out2).unwrap();
        assert!(w1.len() >= 4, "index, table, confusion, copied csv");
        for path in &w1 {
            let name = path.file_name().unwrap();
            assert_eq!(
                std::fs::read(out1.join(name)).unwrap(),
                std::fs::read(out2.join(name)).unwrap(),
                "{name:?}"
            );
        }
        // wall_clock_s never reaches report bytes.
        let idx = std::fs::read_to_string(out1.join("index.json")).unwrap();
        assert!(!idx.contains("wall_clock"));
        assert!(!idx.contains("123.456"));
        assert!(idx.contains("run_x_cka_layers.csv"));
    }

    #[test]
    fn eval_artifact_roundtrips_and_prints_labeled_confusion() {
        let tmp = tempfile::tempdir().unwrap();
        let artifact = sample_eval();
        let path = artifact.save(tmp.path()).unwrap();
        assert!(path.ends_with("eval_tissue_sparse_test.json"));
        let back = EvalArtifact::load(&path).unwrap();
        assert_eq!(back, artifact);
        assert_eq!(
            artifact.confusion_csv(),
            "true\\pred,0,1\n0,3,1\n1,1,3\n"
        );
        std::fs::write(&path, "{ not json").unwrap();
        assert!(matches!(
            EvalArtifact::load(&path),
            Err(AnalysisError::BadArtifact { .. })
        ));
    }

    #[test]
    fn cka_image_maps_values_to_gray_cells() {
        let m = CkaMatrix {
            model_a: "a".into(),
            model_b: "b".into(),
            layers_a: vec!["conv1".into(), "conv2".into()],
            layers_b: vec!["conv1".into(), "conv2".into(), "conv3".into()],
            values: Array2::from_shape_vec((2, 3), vec![0.0, 0.5, 1.0, 1.0, 0.5, 0.0]).unwrap(),
        };
        let img = render_cka_image(&m, 4);
        assert_eq!(img.dimensions(), (12, 8));
        assert_eq!(img.get_pixel(0, 0).0[0], 0); // value 0.0
        assert_eq!(img.get_pixel(11, 0).0[0], 255); // value 1.0
        assert_eq!(img.get_pixel(0, 7).0[0], 255); // row 1 col 0 = 1.0
        assert_eq!(img.get_pixel(5, 5).0[0], 128); // 0.5 rounds to 128
    }

    #[test]
    fn overlay_blends_image_and_heatmap_and_checks_shapes() {
        use ndarray::Array3;
        let px = Array3::from_elem((4, 4, 3), 0.2f32);
        let tile = ImageTile::new(px).unwrap();
        let mut values = Array2::zeros((4, 4));
        values[[0, 0]] = 1.0;
        let hm = Heatmap {
            values,
            layer: "conv1".into(),
            target: "class_0".into(),
            zero: false,
        };
        let img = render_overlay_image(&tile, &hm).unwrap();
        assert_eq!(img.dimensions(), (4, 4));
        // Hot corner: r = 0.5*0.2 + 0.5*1.0 = 0.6; b = 0.5*0.2.
        assert_eq!(img.get_pixel(0, 0).0, [153, 26, 26]);
        // Cold pixel: r = 0.1, b = 0.1 + 0.5.
        assert_eq!(img.get_pixel(1, 0).0, [26, 26, 153]);

        let bad = Heatmap {
            values: Array2::zeros((2, 2)),
            layer: "conv1".into(),
            target: "class_0".into(),
            zero: true,
        };
        assert!(matches!(
            render_overlay_image(&tile, &bad),
            Err(AnalysisError::AxisMismatch { .. })
        ));
    }

    #[test]
    fn png_bytes_are_deterministic() {
        let tmp = tempfile::tempdir().unwrap();
        let m = CkaMatrix {
            model_a: "a".into(),
            model_b: "b".into(),
            layers_a: vec!["conv1".into()],
            layers_b: vec!["conv1".into()],
            values: Array2::from_elem((1, 1), 0.5),
        };
        let img = render_cka_image(&m, 8);
        let p1 = tmp.path().join("one.png");
        let p2 = tmp.path().join("two.png");
        save_image(&img, &p1).unwrap();
        save_image(&img, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }
}
