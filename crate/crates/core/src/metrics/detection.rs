//! Detection scoring: greedy IoU matching, all-point interpolated AP and mAP, plus the
//! detection TSV format (`image_id, category, score|-, x1, y1, x2, y2`).

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;

/// One predicted (`score` present) or ground-truth (`score` absent) object.
#[derive(Clone, Debug, PartialEq)]
pub struct DetectionRecord {
    pub image_id: String,
    pub category: String,
    pub score: Option<f64>,
    /// `[x1, y1, x2, y2]` with `x1 < x2`, `y1 < y2`.
    pub bbox: [f64; 4],
}

impl DetectionRecord {
    pub fn new(image_id: impl Into<String>, category: impl Into<String>, score: Option<f64>, bbox: [f64; 4]) -> Result<Self> {
        let [x1, y1, x2, y2] = bbox;
        if !bbox.iter().all(|v| v.is_finite()) || !(x1 < x2 && y1 < y2) {
            return Err(Error::invalid(format!("box {bbox:?} must satisfy x1 < x2 and y1 < y2")));
        }
        if let Some(s) = score {
            if !(0.0..=1.0).contains(&s) {
                return Err(Error::invalid(format!("score {s} outside [0,1]")));
            }
        }
        Ok(Self {
            image_id: image_id.into(),
            category: category.into(),
            score,
            bbox,
        })
    }

    pub fn is_prediction(&self) -> bool {
        self.score.is_some()
    }

    pub fn area(&self) -> f64 {
        (self.bbox[2] - self.bbox[0]) * (self.bbox[3] - self.bbox[1])
    }

    pub fn to_line(&self) -> String {
        let [x1, y1, x2, y2] = self.bbox;
        let score = self.score.map_or_else(|| "-".to_string(), |s| s.to_string());
        format!("{}\t{}\t{score}\t{x1}\t{y1}\t{x2}\t{y2}", self.image_id, self.category)
    }

    pub fn parse_line(line: &str, line_no: usize) -> Result<Self> {
        let bad = |reason: String| Error::Parse {
            what: "detection record",
            line: line_no,
            reason,
        };
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 7 {
            return Err(bad(format!("expected 7 tab-separated fields, got {}", f.len())));
        }
        let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad(format!("bad number {s:?}")));
        let score = match f[2].trim() {
            "-" => None,
            s => Some(num(s)?),
        };
        let bbox = [num(f[3])?, num(f[4])?, num(f[5])?, num(f[6])?];
        Self::new(f[0], f[1], score, bbox).map_err(|e| bad(e.to_string()))
    }
}

pub fn iou(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    let iw = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let ih = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = iw * ih;
    let union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// Parses a detection TSV. Blank lines and lines starting with `#` are ignored.
pub fn parse_detections(text: &str) -> Result<Vec<DetectionRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|(i, l)| DetectionRecord::parse_line(l, i + 1))
        .collect()
}

pub fn read_detections(path: &Path) -> Result<Vec<DetectionRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_detections(&text)
}

pub fn format_detections(records: &[DetectionRecord]) -> String {
    let mut s = String::new();
    for r in records {
        s.push_str(&r.to_line());
        s.push('\n');
    }
    s
}

/// Marks each prediction (in descending score order, stable for ties) as a true positive when it
/// overlaps an unmatched truth of the same image with IoU at or above the threshold. Returns the
/// sorted prediction indices with their match flags.
fn greedy_match(predictions: &[&DetectionRecord], truths: &[&DetectionRecord], iou_threshold: f64) -> Vec<(usize, bool)> {
    let mut order: Vec<usize> = (0..predictions.len()).collect();
    order.sort_by(|&a, &b| {
        let (sa, sb) = (predictions[a].score.unwrap_or(0.0), predictions[b].score.unwrap_or(0.0));
        sb.total_cmp(&sa)
    });
    let mut by_image: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, t) in truths.iter().enumerate() {
        by_image.entry(t.image_id.as_str()).or_default().push(i);
    }
    let mut used = vec![false; truths.len()];
    order
        .into_iter()
        .map(|pi| {
            let p = predictions[pi];
            let mut best: Option<(usize, f64)> = None;
            for &ti in by_image.get(p.image_id.as_str()).map(Vec::as_slice).unwrap_or(&[]) {
                if used[ti] {
                    continue;
                }
                let o = iou(&p.bbox, &truths[ti].bbox);
                if o >= iou_threshold && best.is_none_or(|(_, b)| o > b) {
                    best = Some((ti, o));
                }
            }
            if let Some((ti, _)) = best {
                used[ti] = true;
            }
            (pi, best.is_some())
        })
        .collect()
}

/// Average precision of one category with all-point interpolation.
///
/// Predictions with equal scores form a single operating point. Returns `None` when there are
/// neither predictions nor truths; `Some(0.0)` when only one side is empty.
pub fn average_precision(predictions: &[DetectionRecord], truths: &[DetectionRecord], iou_threshold: f64) -> Result<Option<f64>> {
    if !(0.0..=1.0).contains(&iou_threshold) {
        return Err(Error::invalid(format!("IoU threshold {iou_threshold} outside [0,1]")));
    }
    let preds: Vec<&DetectionRecord> = predictions.iter().collect();
    let gts: Vec<&DetectionRecord> = truths.iter().collect();
    if let Some(p) = preds.iter().find(|p| p.score.is_none()) {
        return Err(Error::invalid(format!("prediction on {} has no score", p.image_id)));
    }
    if preds.is_empty() && gts.is_empty() {
        return Ok(None);
    }
    if preds.is_empty() || gts.is_empty() {
        return Ok(Some(0.0));
    }
    let matched = greedy_match(&preds, &gts, iou_threshold);

    // Operating points (cumulative tp, cumulative count) at the end of each tie group.
    let mut points: Vec<(usize, usize)> = Vec::new();
    let mut tp = 0;
    for (k, &(pi, is_tp)) in matched.iter().enumerate() {
        tp += is_tp as usize;
        let last_of_group = matched
            .get(k + 1)
            .is_none_or(|&(next, _)| preds[next].score != preds[pi].score);
        if last_of_group {
            points.push((tp, k + 1));
        }
    }
    // Precision envelope: best precision at this or any higher recall.
    let mut envelope = vec![0.0f64; points.len()];
    let mut best = 0.0f64;
    for (i, &(tp, n)) in points.iter().enumerate().rev() {
        best = best.max(tp as f64 / n as f64);
        envelope[i] = best;
    }
    let mut area = 0.0;
    let mut prev_tp = 0;
    for (&(tp, _), &p) in points.iter().zip(&envelope) {
        area += (tp - prev_tp) as f64 * p;
        prev_tp = tp;
    }
    Ok(Some(area / gts.len() as f64))
}

/// Per-category AP table and their mean.
#[derive(Clone, Debug, PartialEq)]
pub struct MapReport {
    /// `None` for categories without ground truth; those are excluded from the mean.
    pub per_category: Vec<(String, Option<f64>)>,
    pub map: f64,
}

impl MapReport {
    pub fn to_table(&self) -> String {
        let mut s = String::from("category\tAP\n");
        for (c, ap) in &self.per_category {
            match ap {
                Some(v) => writeln!(s, "{c}\t{v:.4}"),
                None => writeln!(s, "{c}\t-"),
            }
            .expect("writing to a String");
        }
        writeln!(s, "mAP\t{:.4}", self.map).expect("writing to a String");
        s
    }
}

/// Mean AP over the categories (from `categories`) that have at least one ground-truth box.
pub fn mean_average_precision(
    predictions: &[DetectionRecord],
    truths: &[DetectionRecord],
    categories: &[String],
    iou_threshold: f64,
) -> Result<MapReport> {
    if categories.is_empty() {
        return Err(Error::invalid("mAP needs at least one category"));
    }
    let mut per_category = Vec::with_capacity(categories.len());
    let mut sum = 0.0;
    let mut counted = 0usize;
    for cat in categories {
        let p: Vec<DetectionRecord> = predictions.iter().filter(|r| &r.category == cat).cloned().collect();
        let t: Vec<DetectionRecord> = truths.iter().filter(|r| &r.category == cat).cloned().collect();
        if t.is_empty() {
            if p.is_empty() {
                log::warn!("category {cat:?} has neither predictions nor ground truth; excluded from mAP");
            } else {
                log::warn!("category {cat:?} has predictions but no ground truth; excluded from mAP");
            }
            per_category.push((cat.clone(), None));
            continue;
        }
        let ap = average_precision(&p, &t, iou_threshold)?.unwrap_or(0.0);
        sum += ap;
        counted += 1;
        per_category.push((cat.clone(), Some(ap)));
    }
    if counted == 0 {
        return Err(Error::invalid("no category has ground truth"));
    }
    Ok(MapReport {
        per_category,
        map: sum / counted as f64,
    })
}

/// Sorted union of the categories appearing in either record set.
pub fn categories_of(predictions: &[DetectionRecord], truths: &[DetectionRecord]) -> Vec<String> {
    let set: BTreeSet<&str> = predictions.iter().chain(truths).map(|r| r.category.as_str()).collect();
    set.into_iter().map(str::to_string).collect()
}

/// Number of ground-truth boxes per category, useful for reporting.
pub fn truth_counts(truths: &[DetectionRecord]) -> BTreeMap<String, usize> {
    let mut m = BTreeMap::new();
    for t in truths {
        *m.entry(t.category.clone()).or_insert(0) += 1;
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gt(img: &str, b: [f64; 4]) -> DetectionRecord {
        DetectionRecord::new(img, "car", None, b).unwrap()
    }

    fn pred(img: &str, s: f64, b: [f64; 4]) -> DetectionRecord {
        DetectionRecord::new(img, "car", Some(s), b).unwrap()
    }

    #[test]
    fn hand_computed_curve() {
        let truths = vec![gt("a", [0.0, 0.0, 10.0, 10.0]), gt("a", [20.0, 20.0, 30.0, 30.0])];
        let preds = vec![
            pred("a", 0.9, [0.0, 0.0, 10.0, 10.0]),
            pred("a", 0.8, [50.0, 50.0, 60.0, 60.0]),
            pred("a", 0.7, [20.0, 20.0, 30.0, 30.0]),
        ];
        let ap = average_precision(&preds, &truths, 0.5).unwrap().unwrap();
        assert!((ap - (0.5 + 0.5 * 2.0 / 3.0)).abs() < 1e-12);
        assert!((ap - 0.8333).abs() < 1e-4);
    }

    #[test]
    fn perfect_and_disjoint() {
        let truths = vec![gt("a", [0.0, 0.0, 1.0, 1.0]), gt("b", [0.0, 0.0, 1.0, 1.0])];
        let perfect = vec![pred("a", 0.3, [0.0, 0.0, 1.0, 1.0]), pred("b", 0.6, [0.0, 0.0, 1.0, 1.0])];
        assert_eq!(average_precision(&perfect, &truths, 0.5).unwrap(), Some(1.0));
        let miss = vec![pred("a", 0.9, [5.0, 5.0, 6.0, 6.0])];
        assert_eq!(average_precision(&miss, &truths, 0.5).unwrap(), Some(0.0));
        // a box on the wrong image never matches
        let wrong = vec![pred("c", 0.9, [0.0, 0.0, 1.0, 1.0])];
        assert_eq!(average_precision(&wrong, &truths, 0.5).unwrap(), Some(0.0));
    }

    #[test]
    fn empty_cases() {
        let p = vec![pred("a", 0.9, [0.0, 0.0, 1.0, 1.0])];
        assert_eq!(average_precision(&p, &[], 0.5).unwrap(), Some(0.0));
        assert_eq!(average_precision(&[], &[], 0.5).unwrap(), None);
    }

    #[test]
    fn duplicate_predictions_count_as_false_positives() {
        let truths = vec![gt("a", [0.0, 0.0, 10.0, 10.0])];
        let preds = vec![pred("a", 0.9, [0.0, 0.0, 10.0, 10.0]), pred("a", 0.8, [0.0, 0.0, 10.0, 9.0])];
        assert_eq!(average_precision(&preds, &truths, 0.5).unwrap(), Some(1.0));
        let preds = vec![pred("a", 0.9, [0.0, 0.0, 10.0, 9.0]), pred("a", 0.95, [40.0, 0.0, 50.0, 9.0])];
        assert_eq!(average_precision(&preds, &truths, 0.5).unwrap(), Some(0.5));
    }

    #[test]
    fn map_over_categories_with_truth() {
        let mut truths = vec![gt("a", [0.0, 0.0, 1.0, 1.0])];
        truths.push(DetectionRecord::new("a", "ship", None, [2.0, 2.0, 3.0, 3.0]).unwrap());
        let preds = vec![pred("a", 0.9, [0.0, 0.0, 1.0, 1.0])];
        let cats = vec!["car".to_string(), "ship".to_string(), "plane".to_string()];
        let r = mean_average_precision(&preds, &truths, &cats, 0.5).unwrap();
        assert_eq!(r.map, 0.5);
        assert_eq!(r.per_category[2], ("plane".to_string(), None));
        assert!(r.to_table().contains("mAP\t0.5000"));
        assert!(mean_average_precision(&preds, &[], &cats, 0.5).is_err());
        assert!(mean_average_precision(&preds, &truths, &[], 0.5).is_err());
    }

    #[test]
    fn tsv_round_trip_and_line_numbers() {
        let recs = vec![pred("img 1", 0.25, [1.5, 2.0, 3.0, 4.0]), gt("img2", [0.0, 0.0, 1.0, 1.0])];
        let text = format_detections(&recs);
        assert_eq!(text, "img 1\tcar\t0.25\t1.5\t2\t3\t4\nimg2\tcar\t-\t0\t0\t1\t1\n");
        assert_eq!(parse_detections(&text).unwrap(), recs);
        let err = parse_detections("a\tcar\t-\t0\t0\t1\t1\n\nb\tcar\t0.5\t3\t0\t1\t1\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        assert!(matches!(parse_detections("x\ty\n").unwrap_err(), Error::Parse { line: 1, .. }));
    }

    #[test]
    fn iou_basics() {
        assert_eq!(iou(&[0.0, 0.0, 2.0, 2.0], &[1.0, 0.0, 3.0, 2.0]), 1.0 / 3.0);
        assert_eq!(iou(&[0.0, 0.0, 1.0, 1.0], &[2.0, 2.0, 3.0, 3.0]), 0.0);
    }
}
