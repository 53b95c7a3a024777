//! Detection-level matching metrics, per-window classification reports,
//! and the feature-ablation / hyperparameter-sweep harnesses.

use serde::{Deserialize, Serialize};

use crate::ensemble::DetectionSet;
use crate::error::{Error, Result};
use crate::forest::{stratified_folds, train_forest, TrainConfig};
use crate::imagecore::{AnnotatedImage, Annotation, BoundingBox, DefectClass};
use crate::texfeat::FeatureFlags;
use crate::windowing::{build_dataset, DatasetConfig, WindowSpec};
use crate::Real;

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

fn f1(p: f64, r: f64) -> f64 {
    ratio(2.0 * p * r, p + r)
}

/// Which side of the coverage rule the 40 % refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoverageRule {
    /// A defect counts as detected when ≥ `coverage` of its own area is
    /// covered by the union of same-class predictions.
    #[default]
    DefectArea,
    /// A defect counts as detected when some prediction overlaps it by
    /// ≥ `coverage` of the prediction's area.
    PredictionArea,
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct MatchCounts {
    pub tp_weighted: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl MatchCounts {
    pub fn precision(&self) -> f64 {
        ratio(self.tp_weighted as f64, (self.tp_weighted + self.fp) as f64)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp_weighted as f64, (self.tp_weighted + self.fn_) as f64)
    }

    pub fn f1(&self) -> f64 {
        f1(self.precision(), self.recall())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatchReport {
    pub per_class: Vec<(String, MatchCounts)>,
    pub overall: MatchCounts,
    pub coverage: f64,
    pub rule: CoverageRule,
}

/// Fraction of `truth`'s area covered by the union of the given boxes,
/// computed by rasterizing the truth rectangle.
fn union_coverage(truth: &BoundingBox, preds: &[&BoundingBox]) -> f64 {
    let mut covered = vec![false; truth.area()];
    for p in preds {
        let x0 = p.x.max(truth.x);
        let y0 = p.y.max(truth.y);
        let x1 = p.right().min(truth.right());
        let y1 = p.bottom().min(truth.bottom());
        if x1 <= x0 || y1 <= y0 {
            continue;
        }
        for y in y0..y1 {
            for x in x0..x1 {
                covered[(y - truth.y) * truth.w + (x - truth.x)] = true;
            }
        }
    }
    covered.iter().filter(|&&c| c).count() as f64 / truth.area() as f64
}

/// Class-separated detection matching. A prediction is a true positive
/// when it intersects at least one same-class truth, weighted by how many
/// truths it covers; a prediction intersecting none is a false positive;
/// a truth failing the coverage rule is a false negative.
pub fn match_detections(
    preds: &DetectionSet,
    truths: &[Annotation],
    coverage: f64,
    rule: CoverageRule,
) -> Result<MatchReport> {
    if !(coverage > 0.0 && coverage <= 1.0) {
        return Err(Error::Argument(format!(
            "coverage must be in (0, 1], got {coverage}"
        )));
    }
    let mut per_class = Vec::new();
    let mut overall = MatchCounts::default();
    for class in DefectClass::ALL {
        let class_preds: Vec<&BoundingBox> = preds
            .detections
            .iter()
            .filter(|d| d.label == class)
            .map(|d| &d.bbox)
            .collect();
        let class_truths: Vec<&BoundingBox> = truths
            .iter()
            .filter(|t| t.label == class)
            .map(|t| &t.bbox)
            .collect();
        let mut counts = MatchCounts::default();
        for p in &class_preds {
            let hits = class_truths.iter().filter(|t| p.intersects(t)).count();
            if hits == 0 {
                counts.fp += 1;
            } else {
                counts.tp_weighted += hits;
            }
        }
        for t in &class_truths {
            let detected = match rule {
                CoverageRule::DefectArea => union_coverage(t, &class_preds) >= coverage,
                CoverageRule::PredictionArea => class_preds
                    .iter()
                    .any(|p| t.intersection_area(p) as f64 >= coverage * p.area() as f64),
            };
            if !detected {
                counts.fn_ += 1;
            }
        }
        overall.tp_weighted += counts.tp_weighted;
        overall.fp += counts.fp;
        overall.fn_ += counts.fn_;
        per_class.push((class.name().to_string(), counts));
    }
    Ok(MatchReport {
        per_class,
        overall,
        coverage,
        rule,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassScore {
    pub class: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WindowMetrics {
    pub per_class: Vec<ClassScore>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

/// One-vs-rest precision/recall/F1 per class; the macro average is the
/// unweighted mean over classes present in the truth.
pub fn classification_report<T: PartialEq + std::fmt::Debug>(
    truths: &[T],
    preds: &[T],
    classes: &[T],
) -> Result<WindowMetrics> {
    if truths.len() != preds.len() {
        return Err(Error::Argument(format!(
            "label sequences differ in length: {} vs {}",
            truths.len(),
            preds.len()
        )));
    }
    let mut per_class = Vec::with_capacity(classes.len());
    let mut macro_p = 0.0;
    let mut macro_r = 0.0;
    let mut macro_f = 0.0;
    let mut present = 0usize;
    for c in classes {
        let tp = truths
            .iter()
            .zip(preds)
            .filter(|(t, p)| *t == c && *p == c)
            .count() as f64;
        let fp = truths
            .iter()
            .zip(preds)
            .filter(|(t, p)| *t != c && *p == c)
            .count() as f64;
        let fn_ = truths
            .iter()
            .zip(preds)
            .filter(|(t, p)| *t == c && *p != c)
            .count() as f64;
        let support = (tp + fn_) as usize;
        let p = ratio(tp, tp + fp);
        let r = ratio(tp, tp + fn_);
        let f = f1(p, r);
        if support > 0 {
            macro_p += p;
            macro_r += r;
            macro_f += f;
            present += 1;
        }
        per_class.push(ClassScore {
            class: format!("{c:?}"),
            precision: p,
            recall: r,
            f1: f,
            support,
        });
    }
    let n = present.max(1) as f64;
    Ok(WindowMetrics {
        per_class,
        macro_precision: macro_p / n,
        macro_recall: macro_r / n,
        macro_f1: macro_f / n,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationRow {
    pub flags: String,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub window: usize,
    pub step: usize,
    pub threshold: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub seed: u64,
}

/// Trains on a fixed stratified 80/20 holdout of the prepared corpus and
/// reports per-window macro scores.
fn holdout_eval<F: Real>(
    images: &[AnnotatedImage<F>],
    cfg: &DatasetConfig,
    train_cfg: &TrainConfig,
    seed: u64,
) -> Result<(f64, f64, f64)> {
    let rows = build_dataset(images, cfg)?;
    let data = crate::forest::Dataset::from_windows(&rows)?;
    if data.n_classes() < 2 {
        return Err(Error::Training(
            "harness needs at least two classes in the window table".into(),
        ));
    }
    // 5 stratified folds; fold 0 is the 20 % holdout
    let folds = stratified_folds(&data.labels, &data.classes, 5, seed)?;
    let train_idx: Vec<usize> = (0..data.n_samples()).filter(|&i| folds[i] != 0).collect();
    let test_idx: Vec<usize> = (0..data.n_samples()).filter(|&i| folds[i] == 0).collect();
    let model = train_forest(&data.subset(&train_idx), train_cfg)?;
    let mut truths = Vec::with_capacity(test_idx.len());
    let mut preds = Vec::with_capacity(test_idx.len());
    let mut row = vec![F::zero(); data.n_features()];
    for &i in &test_idx {
        for (col, slot) in data.columns.iter().zip(row.iter_mut()) {
            *slot = col[i];
        }
        truths.push(data.labels[i]);
        preds.push(model.predict(&row)?.0);
    }
    let class_ids: Vec<usize> = (0..data.n_classes()).collect();
    let report = classification_report(&truths, &preds, &class_ids)?;
    Ok((report.macro_precision, report.macro_recall, report.macro_f1))
}

/// One row per non-empty feature subset, 15 rows in table order
/// (L the most significant flag, descending).
pub fn ablation_harness<F: Real>(
    images: &[AnnotatedImage<F>],
    base_cfg: &DatasetConfig,
    train_cfg: &TrainConfig,
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::with_capacity(15);
    for (row_index, flags) in FeatureFlags::all_subsets().into_iter().enumerate() {
        let seed = base_cfg.seed ^ (row_index as u64).wrapping_mul(0xA076_1D64_78BD_642F);
        let cfg = DatasetConfig {
            flags,
            seed,
            ..base_cfg.clone()
        };
        let (p, r, f) = holdout_eval(images, &cfg, train_cfg, seed)?;
        rows.push(AblationRow {
            flags: flags.to_string(),
            macro_precision: p,
            macro_recall: r,
            macro_f1: f,
            seed,
        });
    }
    Ok(rows)
}

/// The window/step/threshold sweep grid used by the paper-style table:
/// windows {128, 256, 384} × steps {32, 64} × thresholds {0.1, 0.3}.
pub fn paper_sweep_grid() -> (Vec<usize>, Vec<usize>, Vec<f64>) {
    (vec![128, 256, 384], vec![32, 64], vec![0.1, 0.3])
}

fn dedup_preserving_order<T: PartialEq + Copy>(xs: &[T]) -> Vec<T> {
    let mut out: Vec<T> = Vec::new();
    for &x in xs {
        if !out.contains(&x) {
            out.push(x);
        }
    }
    out
}

/// Full cross product of window sizes, step sizes, and IoMA thresholds,
/// each cell evaluated under the same holdout protocol as the ablation
/// harness. The caller passes the raw (unpreprocessed) corpus; each cell
/// re-fits the images to its own window/step grid.
pub fn grid_harness<F: Real>(
    raw_images: &[AnnotatedImage<F>],
    windows: &[usize],
    steps: &[usize],
    thresholds: &[f64],
    base_cfg: &DatasetConfig,
    train_cfg: &TrainConfig,
    sigma: f64,
) -> Result<Vec<SweepRow>> {
    let windows = dedup_preserving_order(windows);
    let steps = dedup_preserving_order(steps);
    let thresholds = dedup_preserving_order(thresholds);
    for (&w, &s) in windows.iter().flat_map(|w| steps.iter().map(move |s| (w, s))) {
        if w < s {
            return Err(Error::Argument(format!("window {w} smaller than step {s}")));
        }
    }
    let mut rows = Vec::new();
    let mut row_index = 0u64;
    for &window in &windows {
        for &step in &steps {
            // the grid fit depends only on (window, step); share it
            // across thresholds
            let prepared: Vec<AnnotatedImage<F>> = raw_images
                .iter()
                .map(|img| crate::windowing::prepare_image(img, window, step, sigma))
                .collect::<Result<_>>()?;
            for &threshold in &thresholds {
                let seed = base_cfg.seed ^ row_index.wrapping_mul(0xE703_7ED1_A0B4_28DB);
                let cfg = DatasetConfig {
                    window: WindowSpec::new(window, step)?,
                    ioma_threshold: threshold,
                    seed,
                    ..base_cfg.clone()
                };
                let (p, r, f) = holdout_eval(&prepared, &cfg, train_cfg, seed)?;
                rows.push(SweepRow {
                    window,
                    step,
                    threshold,
                    macro_precision: p,
                    macro_recall: r,
                    macro_f1: f,
                    seed,
                });
                row_index += 1;
            }
        }
    }
    Ok(rows)
}

/// Aligned-column rendering of the ablation table.
pub fn render_ablation_table(rows: &[AblationRow]) -> String {
    let mut out = String::from("L G F W  Precision  Recall     F1\n");
    for r in rows {
        for letter in ["L", "G", "F", "W"] {
            out.push_str(if r.flags.contains(letter) { "x " } else { ". " });
        }
        out.push_str(&format!(
            " {:<10.3}{:<11.3}{:.3}\n",
            r.macro_precision, r.macro_recall, r.macro_f1
        ));
    }
    out
}

/// Aligned-column rendering of the window/step/threshold sweep table.
pub fn render_sweep_table(rows: &[SweepRow]) -> String {
    let mut out = String::from("Window  Step  Thresh  Precision  Recall     F1\n");
    for r in rows {
        out.push_str(&format!(
            "{:<8}{:<6}{:<8.1}{:<11.3}{:<11.3}{:.3}\n",
            r.window, r.step, r.threshold, r.macro_precision, r.macro_recall, r.macro_f1
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::Detection;

    fn det(x: usize, y: usize, w: usize, h: usize, label: DefectClass) -> Detection {
        Detection {
            bbox: BoundingBox::new(x, y, w, h).unwrap(),
            label,
            score: 0.9,
        }
    }

    fn ann(x: usize, y: usize, w: usize, h: usize, label: DefectClass) -> Annotation {
        Annotation {
            bbox: BoundingBox::new(x, y, w, h).unwrap(),
            label,
        }
    }

    fn detset(detections: Vec<Detection>) -> DetectionSet {
        DetectionSet {
            source_id: "t".into(),
            detections,
        }
    }

    #[test]
    fn exact_match_is_perfect() {
        let truths = vec![ann(10, 10, 30, 30, DefectClass::Blister)];
        let preds = detset(vec![det(10, 10, 30, 30, DefectClass::Blister)]);
        let r = match_detections(&preds, &truths, 0.4, CoverageRule::DefectArea).unwrap();
        assert_eq!(r.overall.precision(), 1.0);
        assert_eq!(r.overall.recall(), 1.0);
    }

    #[test]
    fn one_prediction_covering_two_truths_weighs_two() {
        let truths = vec![
            ann(0, 0, 20, 20, DefectClass::Wire),
            ann(40, 0, 20, 20, DefectClass::Wire),
        ];
        let preds = detset(vec![det(0, 0, 60, 20, DefectClass::Wire)]);
        let r = match_detections(&preds, &truths, 0.4, CoverageRule::DefectArea).unwrap();
        assert_eq!(r.overall.tp_weighted, 2);
        assert_eq!(r.overall.fn_, 0);
        assert_eq!(r.overall.fp, 0);
    }

    #[test]
    fn thirty_percent_coverage_is_false_negative() {
        // prediction covers 30x100 of the 100x100 truth, and clips a
        // second truth so it still counts as TP
        let truths = vec![
            ann(0, 0, 100, 100, DefectClass::Blister),
            ann(100, 0, 10, 10, DefectClass::Blister),
        ];
        let preds = detset(vec![det(70, 0, 40, 100, DefectClass::Blister)]);
        let r = match_detections(&preds, &truths, 0.4, CoverageRule::DefectArea).unwrap();
        let blister = &r.per_class[0].1;
        assert_eq!(blister.tp_weighted, 2);
        assert_eq!(blister.fn_, 1, "30% < 40% coverage");
    }

    #[test]
    fn cross_class_overlap_counts_as_fp() {
        let truths = vec![ann(0, 0, 30, 30, DefectClass::Blister)];
        let preds = detset(vec![det(0, 0, 30, 30, DefectClass::Wire)]);
        let r = match_detections(&preds, &truths, 0.4, CoverageRule::DefectArea).unwrap();
        assert_eq!(r.overall.fp, 1);
        assert_eq!(r.overall.fn_, 1);
        assert_eq!(r.overall.tp_weighted, 0);
    }

    #[test]
    fn disjoint_prediction_adds_exactly_one_fp() {
        let truths = vec![ann(0, 0, 30, 30, DefectClass::Blister)];
        let base = detset(vec![det(0, 0, 30, 30, DefectClass::Blister)]);
        let with_extra = detset(vec![
            det(0, 0, 30, 30, DefectClass::Blister),
            det(500, 500, 10, 10, DefectClass::Blister),
        ]);
        let a = match_detections(&base, &truths, 0.4, CoverageRule::DefectArea).unwrap();
        let b = match_detections(&with_extra, &truths, 0.4, CoverageRule::DefectArea).unwrap();
        assert_eq!(b.overall.fp, a.overall.fp + 1);
        assert_eq!(b.overall.tp_weighted, a.overall.tp_weighted);
        assert_eq!(b.overall.fn_, a.overall.fn_);
    }

    #[test]
    fn covered_truth_never_decreases_recall() {
        let preds = detset(vec![det(0, 0, 100, 100, DefectClass::Blister)]);
        let truths_one = vec![ann(10, 10, 20, 20, DefectClass::Blister)];
        let truths_two = vec![
            ann(10, 10, 20, 20, DefectClass::Blister),
            ann(50, 50, 20, 20, DefectClass::Blister),
        ];
        let a = match_detections(&preds, &truths_one, 0.4, CoverageRule::DefectArea).unwrap();
        let b = match_detections(&preds, &truths_two, 0.4, CoverageRule::DefectArea).unwrap();
        assert!(b.overall.recall() >= a.overall.recall());
    }

    #[test]
    fn prediction_area_rule_differs() {
        // a huge prediction fully covers a tiny truth: detected under
        // DefectArea, missed under PredictionArea (tiny overlap fraction)
        let truths = vec![ann(0, 0, 10, 10, DefectClass::Wire)];
        let preds = detset(vec![det(0, 0, 200, 200, DefectClass::Wire)]);
        let a = match_detections(&preds, &truths, 0.4, CoverageRule::DefectArea).unwrap();
        let b = match_detections(&preds, &truths, 0.4, CoverageRule::PredictionArea).unwrap();
        assert_eq!(a.overall.fn_, 0);
        assert_eq!(b.overall.fn_, 1);
    }

    #[test]
    fn perfect_window_predictions() {
        let truths = vec![0usize, 1, 2, 1, 0];
        let report = classification_report(&truths, &truths, &[0, 1, 2]).unwrap();
        assert_eq!(report.macro_precision, 1.0);
        assert_eq!(report.macro_recall, 1.0);
        assert_eq!(report.macro_f1, 1.0);
    }

    #[test]
    fn all_background_predictions_zero_defect_recall() {
        let truths = vec![0usize, 1, 2, 0];
        let preds = vec![0usize, 0, 0, 0];
        let report = classification_report(&truths, &preds, &[0, 1, 2]).unwrap();
        assert_eq!(report.per_class[1].recall, 0.0);
        assert_eq!(report.per_class[2].recall, 0.0);
    }

    #[test]
    fn hand_computed_confusion_matrix() {
        // confusion counts:
        //   truth 0: pred 0 x3, pred 1 x1
        //   truth 1: pred 1 x2, pred 2 x2
        //   truth 2: pred 2 x1
        let truths = vec![0, 0, 0, 0, 1, 1, 1, 1, 2];
        let preds = vec![0, 0, 0, 1, 1, 1, 2, 2, 2];
        let report = classification_report(&truths, &preds, &[0, 1, 2]).unwrap();
        // class 0: p = 3/3, r = 3/4
        assert!((report.per_class[0].precision - 1.0).abs() < 1e-12);
        assert!((report.per_class[0].recall - 0.75).abs() < 1e-12);
        // class 1: p = 2/3, r = 2/4
        assert!((report.per_class[1].precision - 2.0 / 3.0).abs() < 1e-12);
        assert!((report.per_class[1].recall - 0.5).abs() < 1e-12);
        // class 2: p = 1/3, r = 1/1
        assert!((report.per_class[2].precision - 1.0 / 3.0).abs() < 1e-12);
        assert!((report.per_class[2].recall - 1.0).abs() < 1e-12);
    }

    #[test]
    fn macro_scores_permutation_invariant() {
        let truths = vec![0usize, 0, 1, 1, 2, 2, 0, 1];
        let preds = vec![0usize, 1, 1, 2, 2, 0, 0, 1];
        let relabel = |v: &[usize]| -> Vec<usize> { v.iter().map(|&x| (x + 1) % 3).collect() };
        let a = classification_report(&truths, &preds, &[0, 1, 2]).unwrap();
        let b = classification_report(&relabel(&truths), &relabel(&preds), &[0, 1, 2]).unwrap();
        assert!((a.macro_f1 - b.macro_f1).abs() < 1e-12);
        assert!((a.macro_precision - b.macro_precision).abs() < 1e-12);
    }

    #[test]
    fn length_mismatch_rejected() {
        assert!(classification_report(&[0usize, 1], &[0usize], &[0, 1]).is_err());
    }

    #[test]
    fn dedup_preserves_order() {
        assert_eq!(dedup_preserving_order(&[3, 1, 3, 2, 1]), vec![3, 1, 2]);
    }
}
