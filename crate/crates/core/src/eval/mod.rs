//! Thresholded evaluation against the binary road mask.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::groundtruth::BinaryMask;
use crate::raster::{FloatRaster, RgbImage};

/// Predictions at or above the threshold count as road.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

pub fn binarize(prediction: &FloatRaster, threshold: f64) -> BinaryMask {
    let bits = prediction.values().iter().map(|&v| v >= threshold).collect();
    BinaryMask::new(prediction.width(), prediction.height(), bits).expect("dimensions come from a raster")
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn merge(self, o: ConfusionCounts) -> ConfusionCounts {
        ConfusionCounts {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            tn: self.tn + o.tn,
        }
    }
}

/// Counts over valid pixels, road being the positive class.
pub fn confusion(pred: &BinaryMask, truth: &BinaryMask, valid: &BinaryMask) -> Result<ConfusionCounts> {
    if !pred.same_dims(truth) || !pred.same_dims(valid) {
        return Err(Error::Shape("prediction, truth and valid mask differ in size".into()));
    }
    let mut c = ConfusionCounts::default();
    for ((&p, &t), &v) in pred.bits().iter().zip(truth.bits()).zip(valid.bits()) {
        if !v {
            continue;
        }
        match (p, t) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    if c.total() == 0 {
        return Err(Error::Empty("no valid pixels to evaluate".into()));
    }
    Ok(c)
}

/// Ratios of a confusion table; `None` marks a 0/0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub iou: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub accuracy: Option<f64>,
    pub counts: ConfusionCounts,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den != 0).then(|| num as f64 / den as f64)
}

pub fn metrics(c: ConfusionCounts) -> Metrics {
    Metrics {
        iou: ratio(c.tp, c.tp + c.fp + c.fn_),
        precision: ratio(c.tp, c.tp + c.fp),
        recall: ratio(c.tp, c.tp + c.fn_),
        accuracy: ratio(c.tp + c.tn, c.total()),
        counts: c,
    }
}

/// IoU implied by precision and recall: `PR / (P + R - PR)`.
pub fn iou_from_precision_recall(p: f64, r: f64) -> Option<f64> {
    let den = p + r - p * r;
    (den != 0.0).then(|| p * r / den)
}

/// Metrics labelled with the experiment cell that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub area: String,
    pub model: String,
    pub t_max: u32,
    pub lambda: f64,
    pub metrics: Metrics,
}

pub const TP_COLOR: [u8; 3] = [0, 200, 0];
pub const FP_COLOR: [u8; 3] = [220, 0, 0];
pub const FN_COLOR: [u8; 3] = [0, 80, 255];
pub const TN_COLOR: [u8; 3] = [64, 64, 64];
pub const INVALID_COLOR: [u8; 3] = [0, 0, 0];

pub fn overlay(pred: &BinaryMask, truth: &BinaryMask, valid: &BinaryMask) -> Result<RgbImage> {
    if !pred.same_dims(truth) || !pred.same_dims(valid) {
        return Err(Error::Shape("prediction, truth and valid mask differ in size".into()));
    }
    let pixels = pred
        .bits()
        .iter()
        .zip(truth.bits())
        .zip(valid.bits())
        .map(|((&p, &t), &v)| match (v, p, t) {
            (false, _, _) => INVALID_COLOR,
            (true, true, true) => TP_COLOR,
            (true, true, false) => FP_COLOR,
            (true, false, true) => FN_COLOR,
            (true, false, false) => TN_COLOR,
        })
        .collect();
    Ok(RgbImage {
        width: pred.width(),
        height: pred.height(),
        pixels,
    })
}

pub const SWEEP_HEADER: [&str; 8] = ["area", "model", "t_max", "lambda", "iou", "precision", "recall", "accuracy"];

/// One line of a sweep table; metric columns are percentages rounded to
/// two decimals, `None` printed as `NA`.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub area: String,
    pub model: String,
    pub t_max: u32,
    pub lambda: f64,
    pub iou: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub accuracy: Option<f64>,
}

fn percent(v: Option<f64>) -> Option<f64> {
    // rounding through the printed form keeps parsed and fresh rows equal
    v.map(|x| format!("{:.2}", 100.0 * x).parse().expect("formatted float parses"))
}

impl SweepRow {
    pub fn from_report(r: &MetricsReport) -> Self {
        Self {
            area: r.area.clone(),
            model: r.model.clone(),
            t_max: r.t_max,
            lambda: r.lambda,
            iou: percent(r.metrics.iou),
            precision: percent(r.metrics.precision),
            recall: percent(r.metrics.recall),
            accuracy: percent(r.metrics.accuracy),
        }
    }

    fn key(&self) -> (&str, &str, u32, u64) {
        // lambda is validated finite and >= 1, so its bit pattern orders like the value
        (&self.area, &self.model, self.t_max, self.lambda.to_bits())
    }
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.2}"))
}

/// Rows sorted by (area, model, t_max, lambda) under the fixed header.
pub fn write_sweep_csv(rows: &[SweepRow]) -> Result<String> {
    let mut rows: Vec<&SweepRow> = rows.iter().collect();
    rows.sort_by(|a, b| a.key().cmp(&b.key()));
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    let fail = |e: csv::Error| Error::Format(e.to_string());
    w.write_record(SWEEP_HEADER).map_err(fail)?;
    for r in rows {
        w.write_record([
            r.area.clone(),
            r.model.clone(),
            r.t_max.to_string(),
            r.lambda.to_string(),
            cell(r.iou),
            cell(r.precision),
            cell(r.recall),
            cell(r.accuracy),
        ])
        .map_err(fail)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
}

pub fn sweep_report(results: &[MetricsReport]) -> Result<String> {
    write_sweep_csv(&results.iter().map(SweepRow::from_report).collect::<Vec<_>>())
}

pub fn parse_sweep_csv(text: &str) -> Result<Vec<SweepRow>> {
    let mut r = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let header = r.headers().map_err(|e| Error::Format(e.to_string()))?;
    if header.iter().ne(SWEEP_HEADER) {
        return Err(Error::Format(format!("unexpected sweep header `{}`", header.iter().collect::<Vec<_>>().join(","))));
    }
    let num = |s: &str, what: &str| -> Result<f64> {
        s.parse().map_err(|_| Error::Format(format!("bad {what} `{s}`")))
    };
    let opt = |s: &str, what: &str| -> Result<Option<f64>> {
        if s == "NA" {
            Ok(None)
        } else {
            num(s, what).map(Some)
        }
    };
    r.records()
        .map(|rec| {
            let rec = rec.map_err(|e| Error::Format(e.to_string()))?;
            Ok(SweepRow {
                area: rec[0].to_string(),
                model: rec[1].to_string(),
                t_max: rec[2].parse().map_err(|_| Error::Format(format!("bad t_max `{}`", &rec[2])))?,
                lambda: num(&rec[3], "lambda")?,
                iou: opt(&rec[4], "iou")?,
                precision: opt(&rec[5], "precision")?,
                recall: opt(&rec[6], "recall")?,
                accuracy: opt(&rec[7], "accuracy")?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests;
