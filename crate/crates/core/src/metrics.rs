//! Evaluation: average precision, C-MAP, L1 error, thresholded risk PR curves
//! and the humans-vs-machine comparison.
//!
//! AP is non-interpolated: items are ranked by descending score (ties keep
//! input order) and `AP = (1/|pos|)·Σ_{k: item k positive} precision@k`.
//! Equivalently it is the area `Σ_k (recall_k - recall_{k-1})·precision_k`
//! under the per-rank PR points of [`PrCurve`].

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::taxonomy::AttributeTaxonomy;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("no positive examples")]
    NoPositives,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("NaN score at position {0}")]
    NanScore(usize),
    #[error("attribute {0} has a desired preference but no usable study images or human rating")]
    MissingAttributeGroup(usize),
    #[error("study image `{0}` refers to an attribute without a desired preference")]
    MissingPreference(String),
}

/// Indices sorted by descending score; ties keep their input order.
fn ranking(scores: &[f64]) -> Result<Vec<usize>, MetricsError> {
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(MetricsError::NanScore(i));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).expect("no NaN"));
    Ok(order)
}

fn check_pair(scores: &[f64], positives: &[bool]) -> Result<usize, MetricsError> {
    if scores.len() != positives.len() {
        return Err(MetricsError::LengthMismatch(scores.len(), positives.len()));
    }
    let n_pos = positives.iter().filter(|&&p| p).count();
    if n_pos == 0 {
        return Err(MetricsError::NoPositives);
    }
    Ok(n_pos)
}

/// Non-interpolated average precision of a ranking.
pub fn average_precision(scores: &[f64], positives: &[bool]) -> Result<f64, MetricsError> {
    let n_pos = check_pair(scores, positives)?;
    let order = ranking(scores)?;
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if positives[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / n_pos as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
}

/// Precision/recall after each rank position, with its area.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
    /// `Σ_k (recall_k - recall_{k-1})·precision_k` with `recall_0 = 0`.
    pub auc: f64,
}

pub fn pr_curve(scores: &[f64], positives: &[bool]) -> Result<PrCurve, MetricsError> {
    let n_pos = check_pair(scores, positives)? as f64;
    let order = ranking(scores)?;
    let mut points = Vec::with_capacity(order.len());
    let mut hits = 0usize;
    let mut auc = 0.0;
    let mut prev_recall = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if positives[i] {
            hits += 1;
        }
        let recall = hits as f64 / n_pos;
        let precision = hits as f64 / (rank + 1) as f64;
        auc += (recall - prev_recall) * precision;
        prev_recall = recall;
        points.push(PrPoint { recall, precision });
    }
    Ok(PrCurve { points, auc })
}

fn check_matrix<T, U>(a: &[Vec<T>], b: &[Vec<U>]) -> Result<usize, MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::ShapeMismatch(format!("{} vs {} rows", a.len(), b.len())));
    }
    let cols = a.first().map_or(0, Vec::len);
    for (i, (ra, rb)) in a.iter().zip(b).enumerate() {
        if ra.len() != cols || rb.len() != cols {
            return Err(MetricsError::ShapeMismatch(format!(
                "row {i} has {} / {} columns, expected {cols}",
                ra.len(),
                rb.len()
            )));
        }
    }
    Ok(cols)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CMapReport {
    /// AP per attribute; `None` where the attribute has no positive image.
    pub per_attribute_ap: Vec<Option<f64>>,
    pub skipped: Vec<usize>,
    /// Mean AP over attributes with positives; `None` if there are none.
    pub c_map: Option<f64>,
}

/// Class-based mean AP over an `images × attributes` score matrix.
pub fn c_map(scores: &[Vec<f64>], labels: &[Vec<bool>]) -> Result<CMapReport, MetricsError> {
    let cols = check_matrix(scores, labels)?;
    let mut per_attribute_ap = Vec::with_capacity(cols);
    let mut skipped = Vec::new();
    for a in 0..cols {
        let s: Vec<f64> = scores.iter().map(|r| r[a]).collect();
        let p: Vec<bool> = labels.iter().map(|r| r[a]).collect();
        match average_precision(&s, &p) {
            Ok(ap) => per_attribute_ap.push(Some(ap)),
            Err(MetricsError::NoPositives) => {
                per_attribute_ap.push(None);
                skipped.push(a);
            }
            Err(e) => return Err(e),
        }
    }
    let included: Vec<f64> = per_attribute_ap.iter().flatten().copied().collect();
    let c_map = (!included.is_empty()).then(|| included.iter().sum::<f64>() / included.len() as f64);
    Ok(CMapReport {
        per_attribute_ap,
        skipped,
        c_map,
    })
}

/// Mean absolute difference over all cells of two equally shaped matrices.
pub fn l1_error(pred: &[Vec<f64>], gt: &[Vec<f64>]) -> Result<f64, MetricsError> {
    let cols = check_matrix(pred, gt)?;
    let cells = pred.len() * cols;
    if cells == 0 {
        return Ok(0.0);
    }
    let total: f64 = pred
        .iter()
        .zip(gt)
        .flat_map(|(p, g)| p.iter().zip(g).map(|(a, b)| (a - b).abs()))
        .sum();
    Ok(total / cells as f64)
}

/// The sensitivity thresholds reported for risk ("1+" … "4+").
pub const DEFAULT_RISK_THRESHOLDS: [f64; 4] = [1.0, 2.0, 3.0, 4.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileCurve {
    pub profile_id: usize,
    pub curve: PrCurve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdReport {
    pub threshold: f64,
    /// Mean AP over profiles that have at least one image with `gt >= threshold`.
    pub map: Option<f64>,
    pub curves: Vec<ProfileCurve>,
    pub skipped_profiles: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskEvalReport {
    pub l1: f64,
    pub thresholds: Vec<ThresholdReport>,
}

impl RiskEvalReport {
    pub fn map_at(&self, threshold: f64) -> Option<f64> {
        self.thresholds
            .iter()
            .find(|t| t.threshold == threshold)
            .and_then(|t| t.map)
    }
}

/// L1 error plus, per threshold `t` and profile, the PR curve of predicted risk
/// against `gt >= t`. Matrices are `images × profiles`; `profile_ids` labels
/// the columns.
pub fn risk_pr_curves(
    pred: &[Vec<f64>],
    gt: &[Vec<f64>],
    thresholds: &[f64],
    profile_ids: &[usize],
) -> Result<RiskEvalReport, MetricsError> {
    let cols = check_matrix(pred, gt)?;
    if !pred.is_empty() && profile_ids.len() != cols {
        return Err(MetricsError::ShapeMismatch(format!(
            "{} profile ids for {cols} columns",
            profile_ids.len()
        )));
    }
    let l1 = l1_error(pred, gt)?;
    let mut reports = Vec::with_capacity(thresholds.len());
    for &t in thresholds {
        let mut curves = Vec::new();
        let mut skipped = Vec::new();
        for (p, &pid) in profile_ids.iter().enumerate().take(cols) {
            let scores: Vec<f64> = pred.iter().map(|r| r[p]).collect();
            let positives: Vec<bool> = gt.iter().map(|r| r[p] >= t).collect();
            match pr_curve(&scores, &positives) {
                Ok(curve) => curves.push(ProfileCurve {
                    profile_id: pid,
                    curve,
                }),
                Err(MetricsError::NoPositives) => skipped.push(pid),
                Err(e) => return Err(e),
            }
        }
        let map = (!curves.is_empty())
            .then(|| curves.iter().map(|c| c.curve.auc).sum::<f64>() / curves.len() as f64);
        reports.push(ThresholdReport {
            threshold: t,
            map,
            curves,
            skipped_profiles: skipped,
        });
    }
    Ok(RiskEvalReport {
        l1,
        thresholds: reports,
    })
}

/// A study image with the machine risk estimates computed for it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyImage {
    pub image_id: String,
    /// Attribute the image was chosen to represent.
    pub attribute: usize,
    pub ap_pr: f64,
    pub pr_head: f64,
}

/// Inputs to the humans-vs-machine comparison. Per-attribute vectors are
/// indexed by attribute id; `None` marks attributes outside the study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanMachineInput {
    pub desired: Vec<Option<f64>>,
    pub human_visual: Vec<Option<f64>>,
    pub images: Vec<StudyImage>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Candidate {
    HumanVisual,
    ApPr,
    PrHead,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdCurve {
    pub threshold: f64,
    /// `None` when no study image has a desired score at or above the threshold.
    pub curve: Option<PrCurve>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateReport {
    pub candidate: Candidate,
    /// Mean over study images of |estimate - desired preference|.
    pub l1: f64,
    pub per_attribute_l1: Vec<Option<f64>>,
    pub curves: Vec<ThresholdCurve>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanMachineReport {
    pub attributes: Vec<usize>,
    pub candidates: Vec<CandidateReport>,
}

/// Compare human image-based judgement and both machine estimators against
/// the users' desired preference for each study image's attribute.
pub fn human_vs_machine(input: &HumanMachineInput, thresholds: &[f64]) -> Result<HumanMachineReport, MetricsError> {
    let n_attr = input.desired.len();
    if input.human_visual.len() != n_attr {
        return Err(MetricsError::LengthMismatch(n_attr, input.human_visual.len()));
    }
    for img in &input.images {
        if input.desired.get(img.attribute).copied().flatten().is_none() {
            return Err(MetricsError::MissingPreference(img.image_id.clone()));
        }
    }
    let mut images_per_attr = vec![0usize; n_attr];
    for img in &input.images {
        images_per_attr[img.attribute] += 1;
    }
    let mut attributes = Vec::new();
    for (a, d) in input.desired.iter().enumerate() {
        if d.is_some() {
            if images_per_attr[a] == 0 || input.human_visual[a].is_none() {
                return Err(MetricsError::MissingAttributeGroup(a));
            }
            attributes.push(a);
        }
    }

    let desired: Vec<f64> = input
        .images
        .iter()
        .map(|img| input.desired[img.attribute].expect("checked above"))
        .collect();
    let candidates = [Candidate::HumanVisual, Candidate::ApPr, Candidate::PrHead]
        .into_iter()
        .map(|candidate| {
            let estimate: Vec<f64> = input
                .images
                .iter()
                .map(|img| match candidate {
                    Candidate::HumanVisual => input.human_visual[img.attribute].expect("checked above"),
                    Candidate::ApPr => img.ap_pr,
                    Candidate::PrHead => img.pr_head,
                })
                .collect();
            let mut sums = vec![0.0; n_attr];
            for (img, (e, d)) in input.images.iter().zip(estimate.iter().zip(&desired)) {
                sums[img.attribute] += (e - d).abs();
            }
            let per_attribute_l1 = sums
                .iter()
                .zip(&images_per_attr)
                .map(|(&s, &n)| (n > 0).then(|| s / n as f64))
                .collect();
            let l1 = if estimate.is_empty() {
                0.0
            } else {
                estimate
                    .iter()
                    .zip(&desired)
                    .map(|(e, d)| (e - d).abs())
                    .sum::<f64>()
                    / estimate.len() as f64
            };
            let curves = thresholds
                .iter()
                .map(|&t| {
                    let positives: Vec<bool> = desired.iter().map(|&d| d >= t).collect();
                    match pr_curve(&estimate, &positives) {
                        Ok(curve) => Ok(ThresholdCurve {
                            threshold: t,
                            curve: Some(curve),
                        }),
                        Err(MetricsError::NoPositives) => Ok(ThresholdCurve {
                            threshold: t,
                            curve: None,
                        }),
                        Err(e) => Err(e),
                    }
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok(CandidateReport {
                candidate,
                l1,
                per_attribute_l1,
                curves,
            })
        })
        .collect::<Result<Vec<_>, MetricsError>>()?;
    Ok(HumanMachineReport {
        attributes,
        candidates,
    })
}

/// Per-attribute AP as CSV: `attribute_id,attribute_key,ap` (empty AP when skipped).
pub fn write_ap_csv<W: Write>(w: W, taxonomy: &AttributeTaxonomy, report: &CMapReport) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["attribute_id", "attribute_key", "ap"])?;
    for (a, ap) in report.per_attribute_ap.iter().enumerate() {
        let key = taxonomy.get(a).map_or("", |x| x.key.as_str());
        out.write_record([a.to_string(), key.to_string(), ap.map(|v| v.to_string()).unwrap_or_default()])?;
    }
    out.flush()?;
    Ok(())
}

/// Per-attribute L1 of every candidate as CSV, one row per studied attribute.
pub fn write_l1_csv<W: Write>(w: W, taxonomy: &AttributeTaxonomy, report: &HumanMachineReport) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["attribute_id".to_string(), "attribute_key".to_string()];
    header.extend(report.candidates.iter().map(|c| {
        serde_json::to_value(c.candidate)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default()
    }));
    out.write_record(&header)?;
    for &a in &report.attributes {
        let mut row = vec![a.to_string(), taxonomy.get(a).map_or(String::new(), |x| x.key.clone())];
        row.extend(
            report
                .candidates
                .iter()
                .map(|c| c.per_attribute_l1[a].map(|v| v.to_string()).unwrap_or_default()),
        );
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ap_examples() {
        assert_eq!(average_precision(&[0.9, 0.8, 0.1], &[true, true, false]).unwrap(), 1.0);
        let ap = average_precision(&[0.9, 0.8, 0.1], &[false, false, true]).unwrap();
        assert!((ap - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(
            average_precision(&[0.1], &[false]),
            Err(MetricsError::NoPositives)
        );
        assert_eq!(
            average_precision(&[0.1, 0.2], &[true]),
            Err(MetricsError::LengthMismatch(2, 1))
        );
        assert_eq!(
            average_precision(&[f64::NAN], &[true]),
            Err(MetricsError::NanScore(0))
        );
    }

    #[test]
    fn ties_are_stable() {
        // Equal scores: the earlier positive ranks first.
        let ap = average_precision(&[0.5, 0.5], &[true, false]).unwrap();
        assert_eq!(ap, 1.0);
        let ap = average_precision(&[0.5, 0.5], &[false, true]).unwrap();
        assert_eq!(ap, 0.5);
    }

    #[test]
    fn curve_area_equals_ap() {
        let s = [0.3, 0.9, 0.1, 0.5, 0.7];
        let p = [true, false, true, false, true];
        let c = pr_curve(&s, &p).unwrap();
        assert!((c.auc - average_precision(&s, &p).unwrap()).abs() < 1e-15);
        assert!(c.points.windows(2).all(|w| w[0].recall <= w[1].recall));
        assert_eq!(c.points.last().unwrap().recall, 1.0);
    }

    #[test]
    fn c_map_perfect_and_anti_correlated() {
        let labels = vec![vec![true, false], vec![false, true], vec![true, false], vec![false, false]];
        let perfect: Vec<Vec<f64>> = labels
            .iter()
            .map(|r| r.iter().map(|&l| if l { 1.0 } else { 0.0 }).collect())
            .collect();
        assert_eq!(c_map(&perfect, &labels).unwrap().c_map, Some(1.0));

        let anti: Vec<Vec<f64>> = perfect.iter().map(|r| r.iter().map(|v| 1.0 - v).collect()).collect();
        let r = c_map(&anti, &labels).unwrap();
        // Attribute 0: scores [0,1,0,1] → ranking 1,3,0,2; positives at ranks 3 and 4.
        let ap0 = (1.0 / 3.0 + 2.0 / 4.0) / 2.0;
        // Attribute 1: scores [1,0,1,1] → ranking 0,2,3,1; positive at rank 4.
        let ap1 = 1.0 / 4.0;
        assert!((r.per_attribute_ap[0].unwrap() - ap0).abs() < 1e-15);
        assert!((r.per_attribute_ap[1].unwrap() - ap1).abs() < 1e-15);
        assert!((r.c_map.unwrap() - (ap0 + ap1) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn c_map_skips_attributes_without_positives() {
        let labels = vec![vec![true, false], vec![false, false]];
        let scores = vec![vec![0.9, 0.1], vec![0.1, 0.2]];
        let r = c_map(&scores, &labels).unwrap();
        assert_eq!(r.skipped, vec![1]);
        assert_eq!(r.per_attribute_ap[1], None);
        assert_eq!(r.c_map, Some(1.0));
    }

    #[test]
    fn l1_examples() {
        let gt = vec![vec![1.0, 2.0], vec![0.5, 5.0]];
        assert_eq!(l1_error(&gt, &gt).unwrap(), 0.0);
        let plus: Vec<Vec<f64>> = gt.iter().map(|r| r.iter().map(|v| v + 1.0).collect()).collect();
        assert_eq!(l1_error(&plus, &gt).unwrap(), 1.0);
        assert!(matches!(
            l1_error(&gt, &gt[..1]),
            Err(MetricsError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn risk_curves_on_a_toy_matrix() {
        // 4 images × 2 profiles.
        let gt = vec![vec![0.5, 4.0], vec![3.0, 1.0], vec![5.0, 0.5], vec![1.0, 3.0]];
        let pred = vec![vec![1.0, 3.5], vec![2.0, 2.5], vec![4.5, 0.0], vec![2.5, 3.0]];
        let r = risk_pr_curves(&pred, &gt, &[3.0], &[0, 1]).unwrap();
        let t = &r.thresholds[0];
        // Profile 0: ranking by pred = images 2,3,1,0; positives {1,2} → ranks 1 and 3.
        let ap0 = (1.0 + 2.0 / 3.0) / 2.0;
        // Profile 1: ranking = images 0,3,1,2; positives {0,3} → ranks 1 and 2.
        let ap1 = 1.0;
        assert!((t.curves[0].curve.auc - ap0).abs() < 1e-15);
        assert!((t.curves[1].curve.auc - ap1).abs() < 1e-15);
        assert!((t.map.unwrap() - (ap0 + ap1) / 2.0).abs() < 1e-15);
        let total: f64 = [0.5, 0.5, 1.0, 1.5, 0.5, 0.5, 1.5, 0.0].iter().sum();
        assert!((r.l1 - total / 8.0).abs() < 1e-15);
    }

    #[test]
    fn risk_curves_skip_profiles_without_positives() {
        let gt = vec![vec![0.5, 4.0], vec![1.0, 1.0]];
        let r = risk_pr_curves(&gt, &gt, &[4.0, 5.0], &[7, 9]).unwrap();
        assert_eq!(r.thresholds[0].skipped_profiles, vec![7]);
        assert_eq!(r.map_at(4.0), Some(1.0));
        assert_eq!(r.map_at(5.0), None);
        assert_eq!(r.thresholds[1].skipped_profiles, vec![7, 9]);
    }

    fn study(human_offset: &[f64]) -> HumanMachineInput {
        let desired = vec![Some(2.0), Some(4.0), None];
        let human_visual = vec![Some(2.0 + human_offset[0]), Some(4.0 + human_offset[1]), None];
        let images = (0..4)
            .map(|i| StudyImage {
                image_id: format!("img{i}"),
                attribute: i % 2,
                ap_pr: if i % 2 == 0 { 2.0 } else { 4.0 },
                pr_head: 3.0,
            })
            .collect();
        HumanMachineInput {
            desired,
            human_visual,
            images,
        }
    }

    #[test]
    fn human_vs_machine_l1() {
        let r = human_vs_machine(&study(&[0.5, -1.5]), &[3.0]).unwrap();
        assert_eq!(r.attributes, vec![0, 1]);
        let get = |c| r.candidates.iter().find(|x| x.candidate == c).unwrap();
        assert_eq!(get(Candidate::ApPr).l1, 0.0);
        assert_eq!(get(Candidate::PrHead).l1, 1.0);
        assert_eq!(get(Candidate::HumanVisual).l1, 1.0);
        assert_eq!(get(Candidate::HumanVisual).per_attribute_l1, vec![Some(0.5), Some(1.5), None]);
        assert_eq!(get(Candidate::ApPr).curves[0].curve.as_ref().unwrap().auc, 1.0);
    }

    #[test]
    fn human_vs_machine_requires_every_group() {
        let mut s = study(&[0.0, 0.0]);
        s.images.retain(|i| i.attribute == 0);
        assert_eq!(human_vs_machine(&s, &[3.0]), Err(MetricsError::MissingAttributeGroup(1)));
        let mut s = study(&[0.0, 0.0]);
        s.images[0].attribute = 2;
        assert!(matches!(
            human_vs_machine(&s, &[3.0]),
            Err(MetricsError::MissingPreference(_))
        ));
    }

    #[test]
    fn csv_exports() {
        let t = AttributeTaxonomy::bundled();
        let mut per = vec![None; 68];
        per[0] = Some(0.25);
        let report = CMapReport {
            per_attribute_ap: per,
            skipped: (1..68).collect(),
            c_map: Some(0.25),
        };
        let mut buf = Vec::new();
        write_ap_csv(&mut buf, &t, &report).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("attribute_id,attribute_key,ap\n0,a0_age_approx,0.25\n"));
        assert_eq!(text.lines().count(), 69);

        let hm = human_vs_machine(&study(&[0.5, -1.5]), &[3.0]).unwrap();
        let mut buf = Vec::new();
        write_l1_csv(&mut buf, &t, &hm).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("attribute_id,attribute_key,human_visual,ap_pr,pr_head\n"));
        assert_eq!(text.lines().count(), 3);
    }
}
