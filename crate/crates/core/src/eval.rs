//! Detection evaluation: greedy IoU matching, precision/recall curves,
//! 101-point interpolated AP, COCO-style AP over IoU thresholds, and per-image
//! precision/recall/F1 with histograms.
//!
//! Matching is greedy in descending score order (lower detection index first
//! on equal scores); each ground truth is used at most once and crowd regions
//! are never matched.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::coco_io::{CocoDataset, Segmentation};
use crate::error::{Error, Result};
use crate::geom::{iou, mask_iou, score_order, BBox, InstanceMask};

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub image_id: u64,
    pub category_id: u64,
    pub bbox: BBox,
    pub score: f64,
    pub mask: Option<InstanceMask>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub id: u64,
    pub image_id: u64,
    pub category_id: u64,
    pub bbox: BBox,
    pub iscrowd: bool,
    pub mask: Option<InstanceMask>,
}

impl GroundTruth {
    /// Ground truths from a dataset, decoding masks when `with_masks`.
    pub fn from_dataset(ds: &CocoDataset, with_masks: bool) -> Result<Vec<GroundTruth>> {
        let dims: HashMap<u64, (u32, u32)> =
            ds.images.iter().map(|i| (i.id, (i.width, i.height))).collect();
        ds.annotations
            .iter()
            .map(|a| {
                let mask = if with_masks && !a.segmentation.is_empty() {
                    let (w, h) = dims[&a.image_id];
                    Some(a.segmentation.to_mask(w, h)?)
                } else {
                    None
                };
                Ok(GroundTruth {
                    id: a.id,
                    image_id: a.image_id,
                    category_id: a.category_id,
                    bbox: a.bbox,
                    iscrowd: a.iscrowd == 1,
                    mask,
                })
            })
            .collect()
    }
}

/// Matching outcome for one detection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetMatch {
    pub tp: bool,
    /// Index into the ground-truth slice.
    pub gt: Option<usize>,
    /// IoU with the best remaining candidate when the detection was visited.
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub iou_thresh: f64,
    /// Parallel to the detection slice.
    pub dets: Vec<DetMatch>,
    /// Parallel to the ground-truth slice: matching detection index.
    pub gts: Vec<Option<usize>>,
    /// Crowd ground truths, excluded from matching and from recall.
    pub gt_ignored: Vec<bool>,
}

impl MatchResult {
    pub fn tp_count(&self) -> usize {
        self.dets.iter().filter(|d| d.tp).count()
    }

    pub fn fp_count(&self) -> usize {
        self.dets.len() - self.tp_count()
    }

    pub fn fn_count(&self) -> usize {
        self.gts
            .iter()
            .zip(&self.gt_ignored)
            .filter(|(m, &ign)| m.is_none() && !ign)
            .count()
    }
}

/// IoUs between each detection and the non-crowd ground truths sharing its
/// image and category.
struct Candidates {
    per_det: Vec<Vec<(usize, f64)>>,
}

impl Candidates {
    fn build(dets: &[Detection], gts: &[GroundTruth], use_masks: bool) -> Result<Self> {
        let mut groups: HashMap<(u64, u64), Vec<usize>> = HashMap::new();
        for (j, g) in gts.iter().enumerate() {
            if !g.iscrowd {
                groups.entry((g.image_id, g.category_id)).or_default().push(j);
            }
        }
        let per_det = dets
            .iter()
            .enumerate()
            .map(|(i, d)| {
                let Some(cands) = groups.get(&(d.image_id, d.category_id)) else {
                    return Ok(Vec::new());
                };
                cands
                    .iter()
                    .map(|&j| {
                        let v = if use_masks {
                            let (Some(dm), Some(gm)) = (&d.mask, &gts[j].mask) else {
                                return Err(Error::Schema {
                                    entity: if d.mask.is_none() { "detection" } else { "annotation" },
                                    id: if d.mask.is_none() { i as u64 } else { gts[j].id },
                                    message: "mask matching requested but segmentation is missing".into(),
                                });
                            };
                            mask_iou(dm, gm)?
                        } else {
                            iou(&d.bbox, &gts[j].bbox)
                        };
                        Ok((j, v))
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;
        Ok(Self { per_det })
    }

    fn greedy(&self, order: &[usize], n_gts: usize, iou_thresh: f64) -> (Vec<DetMatch>, Vec<Option<usize>>) {
        let mut gt_used: Vec<Option<usize>> = vec![None; n_gts];
        let mut out = vec![
            DetMatch {
                tp: false,
                gt: None,
                iou: 0.0
            };
            self.per_det.len()
        ];
        for &i in order {
            let mut best: Option<(usize, f64)> = None;
            for &(j, v) in &self.per_det[i] {
                if gt_used[j].is_some() {
                    continue;
                }
                if best.is_none_or(|(bj, bv)| v > bv || (v == bv && j < bj)) {
                    best = Some((j, v));
                }
            }
            if let Some((j, v)) = best {
                out[i].iou = v;
                if v >= iou_thresh {
                    out[i].tp = true;
                    out[i].gt = Some(j);
                    gt_used[j] = Some(i);
                }
            }
        }
        (out, gt_used)
    }
}

fn detection_order(dets: &[Detection]) -> Vec<usize> {
    score_order(dets.iter().map(|d| d.score))
}

pub fn match_detections(
    dets: &[Detection],
    gts: &[GroundTruth],
    iou_thresh: f64,
    use_masks: bool,
) -> Result<MatchResult> {
    let cands = Candidates::build(dets, gts, use_masks)?;
    let (dm, gm) = cands.greedy(&detection_order(dets), gts.len(), iou_thresh);
    Ok(MatchResult {
        iou_thresh,
        dets: dm,
        gts: gm,
        gt_ignored: gts.iter().map(|g| g.iscrowd).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Precision/recall at every distinct score threshold, highest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
    pub n_gt: usize,
}

/// Sweep the score threshold over `(score, is_tp)` pairs. Returns `None` when
/// there is no ground truth, since recall is undefined then.
pub fn pr_curve(scored: &[(f64, bool)], n_gt: usize) -> Option<PrCurve> {
    if n_gt == 0 {
        return None;
    }
    let mut sorted = scored.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut points = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    for (k, &(score, hit)) in sorted.iter().enumerate() {
        if hit {
            tp += 1;
        } else {
            fp += 1;
        }
        let last_of_group = sorted.get(k + 1).is_none_or(|n| n.0 != score);
        if last_of_group {
            points.push(PrPoint {
                threshold: score,
                precision: tp as f64 / (tp + fp) as f64,
                recall: tp as f64 / n_gt as f64,
            });
        }
    }
    Some(PrCurve { points, n_gt })
}

pub const RECALL_POINTS: usize = 101;

/// Mean over recall levels `0.00, 0.01, …, 1.00` of the best precision
/// reached at that recall or beyond (0 where never reached).
pub fn average_precision_101(curve: &PrCurve) -> f64 {
    let pts = &curve.points;
    let mut envelope = vec![0.0; pts.len()];
    let mut run = 0.0f64;
    for i in (0..pts.len()).rev() {
        run = run.max(pts[i].precision);
        envelope[i] = run;
    }
    let mut sum = 0.0;
    for k in 0..RECALL_POINTS {
        let r = k as f64 / 100.0;
        let first = pts.partition_point(|p| p.recall < r);
        if first < pts.len() {
            sum += envelope[first];
        }
    }
    sum / RECALL_POINTS as f64
}

/// IoU thresholds `0.50, 0.55, …, 0.95`.
pub fn coco_iou_thresholds() -> Vec<f64> {
    (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryAp {
    pub category_id: u64,
    /// AP at each of [`coco_iou_thresholds`].
    pub ap: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApSummary {
    pub ap50: f64,
    pub ap75: f64,
    pub map: f64,
    pub iou_thresholds: Vec<f64>,
    /// Category-averaged AP at each threshold.
    pub ap_per_threshold: Vec<f64>,
    pub per_category: Vec<CategoryAp>,
}

/// AP for one category at one IoU threshold, from a precomputed match.
fn category_ap(dets: &[Detection], gts: &[GroundTruth], m: &MatchResult, cat: u64) -> Option<f64> {
    let n_gt = gts.iter().filter(|g| g.category_id == cat && !g.iscrowd).count();
    let scored: Vec<(f64, bool)> = dets
        .iter()
        .zip(&m.dets)
        .filter(|(d, _)| d.category_id == cat)
        .map(|(d, r)| (d.score, r.tp))
        .collect();
    pr_curve(&scored, n_gt).map(|c| average_precision_101(&c))
}

/// AP50, AP75 and the mean over `0.50:0.05:0.95`, each averaged over the
/// categories that have ground truth.
pub fn coco_map(dets: &[Detection], gts: &[GroundTruth], use_masks: bool) -> Result<ApSummary> {
    let cats: BTreeSet<u64> = gts.iter().filter(|g| !g.iscrowd).map(|g| g.category_id).collect();
    if cats.is_empty() {
        return Err(Error::NoGroundTruth);
    }
    let thresholds = coco_iou_thresholds();
    let cands = Candidates::build(dets, gts, use_masks)?;
    let order = detection_order(dets);
    let mut per_category: Vec<CategoryAp> = cats
        .iter()
        .map(|&c| CategoryAp {
            category_id: c,
            ap: Vec::with_capacity(thresholds.len()),
        })
        .collect();
    for &t in &thresholds {
        let (dm, gm) = cands.greedy(&order, gts.len(), t);
        let m = MatchResult {
            iou_thresh: t,
            dets: dm,
            gts: gm,
            gt_ignored: gts.iter().map(|g| g.iscrowd).collect(),
        };
        for ca in &mut per_category {
            let ap = category_ap(dets, gts, &m, ca.category_id).unwrap_or(0.0);
            ca.ap.push(ap);
        }
    }
    let ap_per_threshold: Vec<f64> = (0..thresholds.len())
        .map(|k| per_category.iter().map(|c| c.ap[k]).sum::<f64>() / per_category.len() as f64)
        .collect();
    let map = ap_per_threshold.iter().sum::<f64>() / ap_per_threshold.len() as f64;
    Ok(ApSummary {
        ap50: ap_per_threshold[0],
        ap75: ap_per_threshold[5],
        map,
        iou_thresholds: thresholds,
        ap_per_threshold,
        per_category,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImagePrf {
    pub image_id: u64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

pub const HISTOGRAM_BINS: usize = 20;

/// Counts over `[0, 1]` in 0.05-wide bins; 1.0 falls in the last bin.
pub fn histogram(values: impl IntoIterator<Item = f64>) -> Vec<u64> {
    let mut bins = vec![0u64; HISTOGRAM_BINS];
    for v in values {
        let b = ((v * HISTOGRAM_BINS as f64 + 1e-9).floor() as usize).min(HISTOGRAM_BINS - 1);
        bins[b] += 1;
    }
    bins
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histograms {
    pub precision: Vec<u64>,
    pub recall: Vec<u64>,
    pub f1: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrfSummary {
    /// Per-image values averaged over images with ground truth.
    pub m_precision: f64,
    pub m_recall: f64,
    pub m_f1: f64,
    /// Counts summed over every image first.
    pub pooled_precision: f64,
    pub pooled_recall: f64,
    pub pooled_f1: f64,
    pub images_evaluated: usize,
    /// Images without ground truth, left out of the per-image means.
    pub images_skipped: usize,
    pub per_image: Vec<ImagePrf>,
    pub histograms: Histograms,
}

/// Per-image precision, recall and F1 from a match result. `image_ids` lists
/// every image of the dataset so that empty ones are counted. Precision of
/// an image without detections is 0.
pub fn mean_prf(
    image_ids: &[u64],
    dets: &[Detection],
    gts: &[GroundTruth],
    m: &MatchResult,
) -> PrfSummary {
    let mut counts: BTreeMap<u64, (usize, usize, usize, usize)> =
        image_ids.iter().map(|&id| (id, (0, 0, 0, 0))).collect();
    for (d, r) in dets.iter().zip(&m.dets) {
        let e = counts.entry(d.image_id).or_default();
        if r.tp {
            e.0 += 1;
        } else {
            e.1 += 1;
        }
    }
    for (j, g) in gts.iter().enumerate() {
        if g.iscrowd {
            continue;
        }
        let e = counts.entry(g.image_id).or_default();
        e.3 += 1;
        if m.gts[j].is_none() {
            e.2 += 1;
        }
    }
    let (mut stp, mut sfp, mut sfn) = (0usize, 0usize, 0usize);
    let mut per_image = Vec::new();
    let mut skipped = 0;
    for (&image_id, &(tp, fp, fn_, n_gt)) in &counts {
        stp += tp;
        sfp += fp;
        sfn += fn_;
        if n_gt == 0 {
            skipped += 1;
            continue;
        }
        let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
        let recall = tp as f64 / (tp + fn_) as f64;
        per_image.push(ImagePrf {
            image_id,
            tp,
            fp,
            fn_,
            precision,
            recall,
            f1: f1_score(precision, recall),
        });
    }
    let n = per_image.len();
    let mean = |f: fn(&ImagePrf) -> f64| {
        if n == 0 {
            0.0
        } else {
            per_image.iter().map(f).sum::<f64>() / n as f64
        }
    };
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let pooled_precision = ratio(stp, stp + sfp);
    let pooled_recall = ratio(stp, stp + sfn);
    PrfSummary {
        m_precision: mean(|p| p.precision),
        m_recall: mean(|p| p.recall),
        m_f1: mean(|p| p.f1),
        pooled_precision,
        pooled_recall,
        pooled_f1: f1_score(pooled_precision, pooled_recall),
        images_evaluated: n,
        images_skipped: skipped,
        histograms: Histograms {
            precision: histogram(per_image.iter().map(|p| p.precision)),
            recall: histogram(per_image.iter().map(|p| p.recall)),
            f1: histogram(per_image.iter().map(|p| p.f1)),
        },
        per_image,
    }
}

/// Detections per category; every id in `categories` is present.
pub fn category_counts(dets: &[Detection], categories: &[u64]) -> BTreeMap<u64, usize> {
    let mut out: BTreeMap<u64, usize> = categories.iter().map(|&c| (c, 0)).collect();
    for d in dets {
        *out.entry(d.category_id).or_default() += 1;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryCount {
    pub category_id: u64,
    pub name: String,
    pub count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalParams {
    pub use_masks: bool,
    /// IoU used for the precision/recall/F1 battery.
    pub match_iou: f64,
}

impl Default for EvalParams {
    fn default() -> Self {
        Self {
            use_masks: false,
            match_iou: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub use_masks: bool,
    pub match_iou: f64,
    pub ap50: f64,
    pub ap75: f64,
    pub map: f64,
    pub iou_thresholds: Vec<f64>,
    pub ap_per_threshold: Vec<f64>,
    pub per_category_ap: Vec<CategoryAp>,
    pub m_precision: f64,
    pub m_recall: f64,
    pub m_f1: f64,
    pub pooled_precision: f64,
    pub pooled_recall: f64,
    pub pooled_f1: f64,
    pub images_evaluated: usize,
    pub images_skipped: usize,
    pub category_counts: Vec<CategoryCount>,
    pub histograms: Histograms,
}

impl EvalReport {
    /// Scalar metrics in a fixed order, as written to the CSV.
    pub fn metrics(&self) -> Vec<(String, f64)> {
        let mut out = vec![
            ("ap50".to_string(), self.ap50),
            ("ap75".to_string(), self.ap75),
            ("map".to_string(), self.map),
            ("m_precision".to_string(), self.m_precision),
            ("m_recall".to_string(), self.m_recall),
            ("m_f1".to_string(), self.m_f1),
            ("pooled_precision".to_string(), self.pooled_precision),
            ("pooled_recall".to_string(), self.pooled_recall),
            ("pooled_f1".to_string(), self.pooled_f1),
            ("images_evaluated".to_string(), self.images_evaluated as f64),
            ("images_skipped".to_string(), self.images_skipped as f64),
        ];
        for c in &self.category_counts {
            out.push((format!("count_{}", c.name), c.count as f64));
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,value\n");
        for (k, v) in self.metrics() {
            let _ = writeln!(s, "{k},{v:?}");
        }
        s
    }

    pub fn histogram_csv(&self) -> String {
        let mut s = String::from("bin_lo,bin_hi,precision,recall,f1\n");
        let h = &self.histograms;
        for b in 0..HISTOGRAM_BINS {
            let _ = writeln!(
                s,
                "{:.2},{:.2},{},{},{}",
                b as f64 / HISTOGRAM_BINS as f64,
                (b + 1) as f64 / HISTOGRAM_BINS as f64,
                h.precision[b],
                h.recall[b],
                h.f1[b]
            );
        }
        s
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serialization is infallible");
        s.push('\n');
        s
    }
}

pub fn evaluate(gt: &CocoDataset, dets: &[Detection], params: EvalParams) -> Result<EvalReport> {
    let gts = GroundTruth::from_dataset(gt, params.use_masks)?;
    let ap = coco_map(dets, &gts, params.use_masks)?;
    let m = match_detections(dets, &gts, params.match_iou, params.use_masks)?;
    let image_ids: Vec<u64> = gt.images.iter().map(|i| i.id).collect();
    let prf = mean_prf(&image_ids, dets, &gts, &m);
    let mut cat_ids: Vec<u64> = gt.categories.iter().map(|c| c.id).collect();
    cat_ids.sort_unstable();
    let names: HashMap<u64, &str> = gt.categories.iter().map(|c| (c.id, c.name.as_str())).collect();
    let category_counts = category_counts(dets, &cat_ids)
        .into_iter()
        .map(|(id, count)| CategoryCount {
            category_id: id,
            name: names.get(&id).map_or_else(|| id.to_string(), |n| n.to_string()),
            count,
        })
        .collect();
    Ok(EvalReport {
        use_masks: params.use_masks,
        match_iou: params.match_iou,
        ap50: ap.ap50,
        ap75: ap.ap75,
        map: ap.map,
        iou_thresholds: ap.iou_thresholds,
        ap_per_threshold: ap.ap_per_threshold,
        per_category_ap: ap.per_category,
        m_precision: prf.m_precision,
        m_recall: prf.m_recall,
        m_f1: prf.m_f1,
        pooled_precision: prf.pooled_precision,
        pooled_recall: prf.pooled_recall,
        pooled_f1: prf.pooled_f1,
        images_evaluated: prf.images_evaluated,
        images_skipped: prf.images_skipped,
        category_counts,
        histograms: prf.histograms,
    })
}

/// One entry of a COCO results file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub image_id: u64,
    pub category_id: u64,
    pub bbox: [f64; 4],
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segmentation: Option<Segmentation>,
}

impl From<&Detection> for DetectionRecord {
    fn from(d: &Detection) -> Self {
        Self {
            image_id: d.image_id,
            category_id: d.category_id,
            bbox: d.bbox.to_array(),
            score: d.score,
            segmentation: d.mask.as_ref().map(|m| Segmentation::Rle(crate::coco_io::Rle::from_mask(m))),
        }
    }
}

/// Read a COCO results file. Masks are decoded against the image sizes in
/// `gt` when `decode_masks` is set.
pub fn read_detections(path: impl AsRef<Path>, gt: &CocoDataset, decode_masks: bool) -> Result<Vec<Detection>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let records: Vec<DetectionRecord> = serde_json::from_slice(&bytes).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    detections_from_records(&records, gt, decode_masks)
}

pub fn detections_from_records(records: &[DetectionRecord], gt: &CocoDataset, decode_masks: bool) -> Result<Vec<Detection>> {
    let dims: HashMap<u64, (u32, u32)> = gt.images.iter().map(|i| (i.id, (i.width, i.height))).collect();
    records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let bad = |message: String| Error::Schema {
                entity: "detection",
                id: i as u64,
                message,
            };
            if !(0.0..=1.0).contains(&r.score) {
                return Err(bad(format!("score {} outside [0, 1]", r.score)));
            }
            let bbox = BBox::from_array(r.bbox);
            if !bbox.is_valid() {
                return Err(bad(format!("invalid bbox {:?}", r.bbox)));
            }
            let &(w, h) = dims
                .get(&r.image_id)
                .ok_or_else(|| bad(format!("unknown image id {}", r.image_id)))?;
            let mask = match (&r.segmentation, decode_masks) {
                (Some(s), true) => Some(s.to_mask(w, h).map_err(|e| bad(e.to_string()))?),
                _ => None,
            };
            Ok(Detection {
                image_id: r.image_id,
                category_id: r.category_id,
                bbox,
                score: r.score,
                mask,
            })
        })
        .collect()
}

pub fn write_detections(path: impl AsRef<Path>, dets: &[Detection]) -> Result<()> {
    let path = path.as_ref();
    let records: Vec<DetectionRecord> = dets.iter().map(DetectionRecord::from).collect();
    let mut bytes = serde_json::to_vec(&records).expect("detections serialize");
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
