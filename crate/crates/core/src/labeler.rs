//! Residual flow, histogram thresholding and mask cleanup.
//!
//! Residual magnitudes are binned into a clipped histogram. The threshold is
//! the bin boundary maximizing between-class variance; two confidence tests on
//! the histogram decide whether the slice is labeled at all.

use std::fmt;
use std::io::Write;

use crate::error::{Error, Result};
use crate::geometry::FlowField;
use crate::grid::Grid;

pub const DEFAULT_BINS: usize = 256;
pub const DEFAULT_CLIP: f64 = 10.0;
pub const DEFAULT_EPS_TOTAL_VAR: f64 = 4.0;
pub const DEFAULT_EPS_SEPARATION: f64 = 0.25;
pub const DEFAULT_MORPH_RADIUS: usize = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualField {
    pub r: Grid<f64>,
    pub valid: Grid<bool>,
}

/// Per-pixel `‖observed − rigid‖₂`, valid where both inputs are.
pub fn residual_field(observed: &FlowField, rigid: &FlowField) -> Result<ResidualField> {
    rigid.u.ensure_dims(observed.dims())?;
    if observed.dt != rigid.dt {
        return Err(Error::Unit(observed.dt, rigid.dt));
    }
    let (w, h) = observed.dims();
    let mut r = Grid::filled(w, h, 0.0);
    let mut valid = Grid::filled(w, h, false);
    for i in 0..w * h {
        if !(observed.valid.as_slice()[i] && rigid.valid.as_slice()[i]) {
            continue;
        }
        let du = observed.u.as_slice()[i] - rigid.u.as_slice()[i];
        let dv = observed.v.as_slice()[i] - rigid.v.as_slice()[i];
        let m = (du * du + dv * dv).sqrt();
        if m.is_finite() {
            r.as_mut_slice()[i] = m;
            valid.as_mut_slice()[i] = true;
        }
    }
    Ok(ResidualField { r, valid })
}

/// Residual histogram over `[0, clip_value)`; larger values land in the last bin.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualHistogram {
    pub counts: Vec<u64>,
    pub bin_width: f64,
    pub clip_value: f64,
    pub total: u64,
}

impl ResidualHistogram {
    pub fn empty(bins: usize, clip_value: f64) -> Result<Self> {
        if bins < 2 {
            return Err(Error::Domain(format!("histogram needs at least 2 bins, got {bins}")));
        }
        if !(clip_value > 0.0 && clip_value.is_finite()) {
            return Err(Error::Domain(format!("clip value must be positive, got {clip_value}")));
        }
        Ok(Self {
            counts: vec![0; bins],
            bin_width: clip_value / bins as f64,
            clip_value,
            total: 0,
        })
    }

    pub fn from_counts(counts: Vec<u64>, clip_value: f64) -> Result<Self> {
        let mut h = Self::empty(counts.len(), clip_value)?;
        h.total = counts.iter().sum();
        h.counts = counts;
        Ok(h)
    }

    pub fn from_values(values: impl IntoIterator<Item = f64>, bins: usize, clip_value: f64) -> Result<Self> {
        let mut h = Self::empty(bins, clip_value)?;
        for v in values {
            h.add(v);
        }
        Ok(h)
    }

    pub fn from_residuals(res: &ResidualField, bins: usize, clip_value: f64) -> Result<Self> {
        Self::from_values(
            res.r
                .as_slice()
                .iter()
                .zip(res.valid.as_slice())
                .filter(|(_, &ok)| ok)
                .map(|(&r, _)| r),
            bins,
            clip_value,
        )
    }

    #[inline]
    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    #[inline]
    pub fn bin_of(&self, value: f64) -> usize {
        let last = self.bins() - 1;
        if !(value > 0.0) {
            return 0;
        }
        let k = (value / self.bin_width).floor();
        if k >= last as f64 {
            last
        } else {
            k as usize
        }
    }

    pub fn add(&mut self, value: f64) {
        let k = self.bin_of(value);
        self.counts[k] += 1;
        self.total += 1;
    }

    /// Upper edge of bin `k` in pixels.
    #[inline]
    pub fn upper_edge(&self, k: usize) -> f64 {
        (k + 1) as f64 * self.bin_width
    }

    /// Bin center of `k` in pixels.
    #[inline]
    pub fn center(&self, k: usize) -> f64 {
        (k as f64 + 0.5) * self.bin_width
    }
}

/// Integer class moments in half-bin units: each sample in bin `k` sits at `2k + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClassSums {
    pub count: u64,
    pub sum: u64,
}

/// Between-class variance (half-bin units²) from exact integer class moments.
///
/// Shared by the fast scan and any direct evaluation, so both see the same
/// floating-point rounding.
pub fn between_class_variance_units(low: ClassSums, high: ClassSums) -> f64 {
    let n = (low.count + high.count) as f64;
    if low.count == 0 || high.count == 0 {
        return 0.0;
    }
    let mu = (low.sum + high.sum) as f64 / n;
    let mu_low = low.sum as f64 / low.count as f64;
    let mu_high = high.sum as f64 / high.count as f64;
    let w_low = low.count as f64 / n;
    let w_high = high.count as f64 / n;
    w_low * (mu_low - mu) * (mu_low - mu) + w_high * (mu_high - mu) * (mu_high - mu)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OtsuResult {
    /// Bin whose upper edge is the threshold.
    pub bin: usize,
    /// Threshold in pixels; residuals strictly above it are IMO.
    pub threshold: f64,
    pub between_class_variance: f64,
    pub total_variance: f64,
}

fn total_variance_units(hist: &ResidualHistogram) -> f64 {
    let n = hist.total as u128;
    let mut s: u128 = 0;
    let mut q: u128 = 0;
    for (k, &c) in hist.counts.iter().enumerate() {
        let v = (2 * k + 1) as u128;
        s += c as u128 * v;
        q += c as u128 * v * v;
    }
    // n²·var = n·q − s², exact in integers.
    let num = n * q - s * s;
    num as f64 / (n as f64 * n as f64)
}

/// Exhaustive between-class variance scan over all bin boundaries.
///
/// Candidates are boundaries whose lower class is non-empty; the first maximum
/// wins, so ties resolve toward the smaller threshold.
pub fn otsu_threshold(hist: &ResidualHistogram) -> Result<OtsuResult> {
    if hist.total == 0 {
        return Err(Error::EmptyHistogram);
    }
    let total = ClassSums {
        count: hist.total,
        sum: hist
            .counts
            .iter()
            .enumerate()
            .map(|(k, &c)| c * (2 * k as u64 + 1))
            .sum(),
    };
    let mut low = ClassSums { count: 0, sum: 0 };
    let mut best: Option<(usize, f64)> = None;
    for (k, &c) in hist.counts.iter().enumerate() {
        low.count += c;
        low.sum += c * (2 * k as u64 + 1);
        if low.count == 0 {
            continue;
        }
        let high = ClassSums {
            count: total.count - low.count,
            sum: total.sum - low.sum,
        };
        let var = between_class_variance_units(low, high);
        if best.is_none_or(|(_, b)| var > b) {
            best = Some((k, var));
        }
    }
    let (bin, var_units) = best.ok_or(Error::EmptyHistogram)?;
    let unit_sq = (hist.bin_width / 2.0) * (hist.bin_width / 2.0);
    let total_variance = total_variance_units(hist) * unit_sq;
    let between = (var_units * unit_sq).clamp(0.0, total_variance);
    Ok(OtsuResult {
        bin,
        threshold: hist.upper_edge(bin),
        between_class_variance: between,
        total_variance,
    })
}

/// Direction of the total-variance confidence test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TotalVarianceRule {
    /// Reject when the total variance exceeds the bound.
    #[default]
    RejectAbove,
    /// Reject when the total variance falls below the bound.
    RejectBelow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RejectionReason {
    None,
    TotalVarianceTooHigh,
    TotalVarianceTooLow,
    SeparationTooLow,
}

impl RejectionReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::None => "none",
            Self::TotalVarianceTooHigh => "total_variance_too_high",
            Self::TotalVarianceTooLow => "total_variance_too_low",
            Self::SeparationTooLow => "separation_too_low",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            Self::None,
            Self::TotalVarianceTooHigh,
            Self::TotalVarianceTooLow,
            Self::SeparationTooLow,
        ]
        .into_iter()
        .find(|r| r.as_str() == s)
    }
}

impl fmt::Display for RejectionReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdDecision {
    pub threshold: f64,
    pub total_variance: f64,
    pub between_class_variance: f64,
    pub accepted: bool,
    pub rejection_reason: RejectionReason,
}

/// Otsu threshold followed by the two confidence tests.
///
/// Stage one checks the histogram's total variance against `eps_total_var`
/// (direction set by `rule`), stage two requires the between-class variance
/// to reach `eps_separation`. The threshold is always filled in.
pub fn decide_threshold(
    hist: &ResidualHistogram,
    eps_total_var: f64,
    eps_separation: f64,
    rule: TotalVarianceRule,
) -> Result<ThresholdDecision> {
    let otsu = otsu_threshold(hist)?;
    let reason = match rule {
        TotalVarianceRule::RejectAbove if otsu.total_variance > eps_total_var => {
            RejectionReason::TotalVarianceTooHigh
        }
        TotalVarianceRule::RejectBelow if otsu.total_variance < eps_total_var => {
            RejectionReason::TotalVarianceTooLow
        }
        _ if otsu.between_class_variance < eps_separation => RejectionReason::SeparationTooLow,
        _ => RejectionReason::None,
    };
    Ok(ThresholdDecision {
        threshold: otsu.threshold,
        total_variance: otsu.total_variance,
        between_class_variance: otsu.between_class_variance,
        accepted: reason == RejectionReason::None,
        rejection_reason: reason,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Label {
    Background = 0,
    Imo = 1,
    Invalid = 255,
}

impl Label {
    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Self::Background),
            1 => Some(Self::Imo),
            255 => Some(Self::Invalid),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelMask {
    pub label: Grid<Label>,
    pub decision: ThresholdDecision,
    pub slice_time: f64,
}

impl LabelMask {
    pub fn imo(&self) -> Grid<bool> {
        self.label.map(|&l| l == Label::Imo)
    }

    pub fn to_bytes(&self) -> Grid<u8> {
        self.label.map(|&l| l as u8)
    }

    /// Mask from a known IMO set. IMO pixels win over invalid ones.
    pub fn from_truth(imo: &Grid<bool>, valid: &Grid<bool>, slice_time: f64) -> Result<Self> {
        valid.ensure_dims(imo.dims())?;
        let label = Grid::from_fn(imo.width(), imo.height(), |c, r| {
            match (*imo.get(c, r), *valid.get(c, r)) {
                (true, _) => Label::Imo,
                (false, true) => Label::Background,
                (false, false) => Label::Invalid,
            }
        });
        Ok(Self {
            label,
            decision: ThresholdDecision {
                threshold: 0.0,
                total_variance: 0.0,
                between_class_variance: 0.0,
                accepted: true,
                rejection_reason: RejectionReason::None,
            },
            slice_time,
        })
    }

    /// Fraction of pixels whose imo/not-imo assignment matches `truth`.
    pub fn pixel_accuracy(&self, truth: &Grid<bool>) -> Result<f64> {
        truth.ensure_dims(self.label.dims())?;
        let agree = self
            .label
            .as_slice()
            .iter()
            .zip(truth.as_slice())
            .filter(|(&l, &t)| (l == Label::Imo) == t)
            .count();
        Ok(agree as f64 / truth.len() as f64)
    }
}

/// Labels `r > threshold` as IMO and the rest of the valid pixels as
/// background, then closes the IMO class with a `(2·radius + 1)²` square.
pub fn make_label_mask(
    res: &ResidualField,
    decision: &ThresholdDecision,
    slice_time: f64,
    closing_radius: usize,
) -> Result<LabelMask> {
    if !decision.accepted {
        return Err(Error::RejectedDecision(decision.rejection_reason.as_str()));
    }
    let label = Grid::from_vec(
        res.r.width(),
        res.r.height(),
        res.r
            .as_slice()
            .iter()
            .zip(res.valid.as_slice())
            .map(|(&r, &ok)| match (ok, r > decision.threshold) {
                (false, _) => Label::Invalid,
                (true, true) => Label::Imo,
                (true, false) => Label::Background,
            })
            .collect(),
    )?;
    let mask = LabelMask {
        label,
        decision: *decision,
        slice_time,
    };
    Ok(morphological_close(&mask, closing_radius))
}

/// One separable pass: a pixel is set when any (`want_all == false`) or every
/// (`want_all == true`) in-bounds pixel within `radius` along the axis is set.
/// Both directions keep running window counts and walk memory row by row.
fn window_pass(src: &[bool], w: usize, h: usize, radius: usize, horizontal: bool, want_all: bool) -> Vec<bool> {
    let mut out = vec![false; src.len()];
    let hit = |set: usize, span: usize| if want_all { set == span } else { set > 0 };
    if horizontal {
        for (line, dst) in src.chunks_exact(w).zip(out.chunks_exact_mut(w)) {
            let mut set: usize = line[..radius.min(w)].iter().map(|&b| b as usize).sum();
            for k in 0..w {
                if k + radius < w {
                    set += line[k + radius] as usize;
                }
                if k > radius {
                    set -= line[k - radius - 1] as usize;
                }
                let span = (k + radius).min(w - 1) - k.saturating_sub(radius) + 1;
                dst[k] = hit(set, span);
            }
        }
    } else {
        let mut set = vec![0usize; w];
        for row in src.chunks_exact(w).take(radius.min(h)) {
            for (c, &b) in set.iter_mut().zip(row) {
                *c += b as usize;
            }
        }
        for k in 0..h {
            if k + radius < h {
                for (c, &b) in set.iter_mut().zip(&src[(k + radius) * w..(k + radius + 1) * w]) {
                    *c += b as usize;
                }
            }
            if k > radius {
                let old = k - radius - 1;
                for (c, &b) in set.iter_mut().zip(&src[old * w..(old + 1) * w]) {
                    *c -= b as usize;
                }
            }
            let span = (k + radius).min(h - 1) - k.saturating_sub(radius) + 1;
            for (o, &c) in out[k * w..(k + 1) * w].iter_mut().zip(&set) {
                *o = hit(c, span);
            }
        }
    }
    out
}

pub(crate) fn dilate(mask: &[bool], w: usize, h: usize, radius: usize) -> Vec<bool> {
    let rows = window_pass(mask, w, h, radius, true, false);
    window_pass(&rows, w, h, radius, false, false)
}

pub(crate) fn erode(mask: &[bool], w: usize, h: usize, radius: usize) -> Vec<bool> {
    let rows = window_pass(mask, w, h, radius, true, true);
    window_pass(&rows, w, h, radius, false, true)
}

/// Closing (dilation then erosion) of the IMO class with a square element.
///
/// Computed as on an unbounded background plane: the raster is padded by
/// `radius` before the two passes and cropped afterwards. Invalid pixels count
/// as background during morphology and are restored afterwards.
pub fn morphological_close(mask: &LabelMask, radius: usize) -> LabelMask {
    if radius == 0 || mask.label.is_empty() {
        return mask.clone();
    }
    let (w, h) = mask.label.dims();
    let (pw, ph) = (w + 2 * radius, h + 2 * radius);
    let mut padded = vec![false; pw * ph];
    for row in 0..h {
        for col in 0..w {
            padded[(row + radius) * pw + col + radius] = *mask.label.get(col, row) == Label::Imo;
        }
    }
    let closed = erode(&dilate(&padded, pw, ph, radius), pw, ph, radius);
    let mut out = mask.clone();
    for row in 0..h {
        for col in 0..w {
            let l = out.label.get_mut(col, row);
            if *l != Label::Invalid {
                let c = closed[(row + radius) * pw + col + radius];
                *l = if c { Label::Imo } else { Label::Background };
            }
        }
    }
    out
}

/// Writes the human-readable decision block for one slice.
pub fn write_decision_block<W: Write>(
    mut out: W,
    slice: usize,
    time: f64,
    status: &str,
    decision: Option<&ThresholdDecision>,
) -> std::io::Result<()> {
    writeln!(out, "[[slice]]")?;
    writeln!(out, "index = {slice}")?;
    writeln!(out, "time = {}", fmt_float(time))?;
    writeln!(out, "status = \"{status}\"")?;
    if let Some(d) = decision {
        writeln!(out, "accepted = {}", d.accepted)?;
        writeln!(out, "threshold = {}", fmt_float(d.threshold))?;
        writeln!(out, "total_variance = {}", fmt_float(d.total_variance))?;
        writeln!(out, "between_class_variance = {}", fmt_float(d.between_class_variance))?;
        writeln!(out, "rejection_reason = \"{}\"", d.rejection_reason)?;
    } else {
        writeln!(out, "accepted = false")?;
    }
    writeln!(out)
}

/// Float formatting that always parses back as a float in key-value files.
pub fn fmt_float(v: f64) -> String {
    if v.is_finite() && v == v.trunc() && v.abs() < 1e15 {
        format!("{v:.1}")
    } else if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v}")
    }
}
