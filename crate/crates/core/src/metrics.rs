//! Evaluation quantities: event-masked IoU, detection rate, endpoint error and focal loss.

use std::io::Write;

use crate::error::{Error, Result};
use crate::geometry::FlowField;
use crate::grid::Grid;

pub const DEFAULT_DETECTION_IOU: f64 = 0.3;
pub const DEFAULT_FOCAL_GAMMA: f64 = 0.25;
pub const PROBABILITY_EPS: f64 = 1e-7;

/// IoU of prediction and ground truth restricted to pixels that saw events.
///
/// Returns `None` when neither mask intersects the event pixels.
pub fn event_masked_iou(gt: &Grid<bool>, pred: &Grid<bool>, events: &Grid<bool>) -> Result<Option<f64>> {
    pred.ensure_dims(gt.dims())?;
    events.ensure_dims(gt.dims())?;
    let mut inter = 0usize;
    let mut union = 0usize;
    for ((&o, &p), &e) in gt.as_slice().iter().zip(pred.as_slice()).zip(events.as_slice()) {
        if !e {
            continue;
        }
        inter += (o && p) as usize;
        union += (o || p) as usize;
    }
    Ok((union > 0).then(|| inter as f64 / union as f64))
}

/// Fraction of entries at or above `threshold`.
pub fn detection_rate(ious: &[f64], threshold: f64) -> Result<f64> {
    if ious.is_empty() {
        return Err(Error::Empty("detection rate over no slices"));
    }
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Domain(format!("IoU threshold must lie in (0, 1), got {threshold}")));
    }
    Ok(ious.iter().filter(|&&v| v >= threshold).count() as f64 / ious.len() as f64)
}

/// Mean endpoint error over jointly valid pixels.
pub fn epe(a: &FlowField, b: &FlowField) -> Result<f64> {
    b.u.ensure_dims(a.dims())?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for i in 0..a.u.len() {
        if a.valid.as_slice()[i] && b.valid.as_slice()[i] {
            let du = a.u.as_slice()[i] - b.u.as_slice()[i];
            let dv = a.v.as_slice()[i] - b.v.as_slice()[i];
            sum += du.hypot(dv);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Empty("no jointly valid pixels for endpoint error"));
    }
    Ok(sum / n as f64)
}

/// `−(1 − p_t)^γ · ln p_t` with `p_t = p` for `y = 1` and `1 − p` otherwise.
///
/// `p` is clamped to `[ε, 1 − ε]` with `ε = 1e−7`.
pub fn focal_loss(p: f64, y: i8, gamma: f64) -> f64 {
    let p = p.clamp(PROBABILITY_EPS, 1.0 - PROBABILITY_EPS);
    let pt = if y == 1 { p } else { 1.0 - p };
    -(1.0 - pt).powf(gamma) * pt.ln()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SliceIoU {
    pub time: f64,
    /// `None` when the event-masked union is empty.
    pub iou: Option<f64>,
    /// Ground truth intersects the event pixels.
    pub has_object: bool,
}

impl SliceIoU {
    pub fn evaluate(time: f64, gt: &Grid<bool>, pred: &Grid<bool>, events: &Grid<bool>) -> Result<Self> {
        let iou = event_masked_iou(gt, pred, events)?;
        let has_object = gt
            .as_slice()
            .iter()
            .zip(events.as_slice())
            .any(|(&o, &e)| o && e);
        Ok(Self { time, iou, has_object })
    }

    fn counted(&self) -> Option<f64> {
        if self.has_object {
            self.iou
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IoUReport {
    pub per_slice: Vec<SliceIoU>,
    /// Statistics over slices whose ground truth intersects events.
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub detection_rate: Option<f64>,
    pub detection_threshold: f64,
}

impl IoUReport {
    pub fn new(per_slice: Vec<SliceIoU>, detection_threshold: f64) -> Result<Self> {
        let values: Vec<f64> = per_slice.iter().filter_map(SliceIoU::counted).collect();
        let (mean, std, rate) = if values.is_empty() {
            (None, None, None)
        } else {
            let n = values.len() as f64;
            let mean = values.iter().sum::<f64>() / n;
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            (Some(mean), Some(var.sqrt()), Some(detection_rate(&values, detection_threshold)?))
        };
        Ok(Self {
            per_slice,
            mean,
            std,
            detection_rate: rate,
            detection_threshold,
        })
    }

    pub fn evaluated(&self) -> usize {
        self.per_slice.iter().filter(|s| s.counted().is_some()).count()
    }

    /// `mean±std` in whole percent.
    pub fn summary(&self) -> String {
        match (self.mean, self.std) {
            (Some(m), Some(s)) => format!("{}±{}", (m * 100.0).round() as i64, (s * 100.0).round() as i64),
            _ => "n/a".into(),
        }
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "slice_time,iou,detected")?;
        for s in &self.per_slice {
            match s.counted() {
                Some(iou) => writeln!(out, "{},{},{}", s.time, iou, iou >= self.detection_threshold)?,
                None => writeln!(out, "{},,n/a", s.time)?,
            }
        }
        Ok(())
    }

    pub fn write_summary<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "iou = {}", self.summary())?;
        writeln!(out, "slices = {}", self.per_slice.len())?;
        writeln!(out, "evaluated = {}", self.evaluated())?;
        match self.detection_rate {
            Some(r) => writeln!(out, "detection_rate@{} = {:.3}", self.detection_threshold, r),
            None => writeln!(out, "detection_rate@{} = n/a", self.detection_threshold),
        }
    }
}
