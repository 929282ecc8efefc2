//! Per-slice labeling: egomotion, rigid field, residual, threshold, mask.

use std::io::Write;

use crate::egomotion::{estimate_egomotion, EgomotionEstimate};
use crate::error::Result;
use crate::geometry::{render_rigid_field, CameraIntrinsics, DepthMap, FlowField};
use crate::grid::Grid;
use crate::io::config::PipelineConfig;
use crate::labeler::{
    decide_threshold, make_label_mask, residual_field, write_decision_block, Label, LabelMask,
    ResidualHistogram, ThresholdDecision,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SliceStatus {
    Accepted,
    /// The threshold decision failed one of the variance tests.
    Rejected,
    /// Egomotion or residual computation failed.
    Failed,
}

impl SliceStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Accepted => "accepted",
            Self::Rejected => "rejected",
            Self::Failed => "failed",
        }
    }
}

#[derive(Debug)]
pub struct SliceLabel {
    pub index: usize,
    pub time: f64,
    pub status: SliceStatus,
    pub estimate: Result<EgomotionEstimate>,
    pub decision: Option<ThresholdDecision>,
    /// Present only for accepted slices.
    pub mask: Option<LabelMask>,
}

impl SliceLabel {
    /// Mask bytes as written to disk; skipped slices are entirely `255`.
    pub fn mask_bytes(&self, width: usize, height: usize) -> Grid<u8> {
        match &self.mask {
            Some(m) => m.to_bytes(),
            None => Grid::filled(width, height, Label::Invalid as u8),
        }
    }

    pub fn write_meta<W: Write>(&self, out: W) -> std::io::Result<()> {
        write_decision_block(out, self.index, self.time, self.status.as_str(), self.decision.as_ref())
    }
}

/// Runs the full labeling chain on one slice. Never fails: problems are
/// reported through `status` and `estimate`.
pub fn label_slice(
    flow: &FlowField,
    depth: &DepthMap,
    intr: &CameraIntrinsics,
    cfg: &PipelineConfig,
    index: usize,
    time: f64,
) -> SliceLabel {
    let mut depth = depth.clone();
    depth.clip(cfg.z_max);
    let estimate = estimate_egomotion(flow, &depth, intr, &cfg.ransac);
    let failed = |estimate| SliceLabel {
        index,
        time,
        status: SliceStatus::Failed,
        estimate,
        decision: None,
        mask: None,
    };
    let velocity = match &estimate {
        Ok(e) => e.velocity,
        Err(_) => return failed(estimate),
    };
    let decision = render_rigid_field(&depth, &velocity, intr, flow.dt)
        .and_then(|rigid| residual_field(flow, &rigid))
        .and_then(|res| {
            let hist = ResidualHistogram::from_residuals(&res, cfg.labeler.bins, cfg.labeler.clip_value)?;
            let d = decide_threshold(
                &hist,
                cfg.labeler.eps_total_var,
                cfg.labeler.eps_separation,
                cfg.labeler.total_variance_rule,
            )?;
            Ok((res, d))
        });
    let (res, decision) = match decision {
        Ok(x) => x,
        Err(e) => return failed(Err(e)),
    };
    if !decision.accepted {
        return SliceLabel {
            index,
            time,
            status: SliceStatus::Rejected,
            estimate,
            decision: Some(decision),
            mask: None,
        };
    }
    match make_label_mask(&res, &decision, time, cfg.labeler.morph_radius) {
        Ok(mask) => SliceLabel {
            index,
            time,
            status: SliceStatus::Accepted,
            estimate,
            decision: Some(decision),
            mask: Some(mask),
        },
        Err(e) => failed(Err(e)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::CameraVelocity;
    use crate::labeler::RejectionReason;

    fn scene(w: usize, h: usize, offset: f64) -> (FlowField, DepthMap, CameraIntrinsics) {
        let intr = CameraIntrinsics::centered(w, h);
        let depth = DepthMap::from_depths(Grid::from_fn(w, h, |c, r| 1.0 + 0.01 * ((c * 7 + r * 3) % 50) as f64), 3.0);
        let vel = CameraVelocity::new([0.2, -0.1, 0.3], [0.05, 0.1, -0.05]);
        let mut flow = render_rigid_field(&depth, &vel, &intr, 0.025).unwrap();
        for r in 10..25 {
            for c in 10..30 {
                *flow.u.get_mut(c, r) += offset;
            }
        }
        (flow, depth, intr)
    }

    #[test]
    fn moving_box_is_labeled() {
        let (flow, depth, intr) = scene(64, 48, 3.0);
        let out = label_slice(&flow, &depth, &intr, &PipelineConfig::default(), 0, 0.0);
        assert_eq!(out.status, SliceStatus::Accepted);
        let truth = Grid::from_fn(64, 48, |c, r| (10..30).contains(&c) && (10..25).contains(&r));
        assert_eq!(out.mask.as_ref().unwrap().imo(), truth);
    }

    #[test]
    fn rigid_scene_is_rejected_and_skipped() {
        let (flow, depth, intr) = scene(64, 48, 0.0);
        let out = label_slice(&flow, &depth, &intr, &PipelineConfig::default(), 3, 0.075);
        assert_eq!(out.status, SliceStatus::Rejected);
        assert_eq!(out.decision.unwrap().rejection_reason, RejectionReason::SeparationTooLow);
        assert!(out.mask_bytes(64, 48).as_slice().iter().all(|&b| b == 255));
        let mut meta = Vec::new();
        out.write_meta(&mut meta).unwrap();
        let meta = String::from_utf8(meta).unwrap();
        assert!(meta.contains("status = \"rejected\"") && meta.contains("separation_too_low"));
    }

    #[test]
    fn missing_depth_fails_cleanly() {
        let (flow, _, intr) = scene(40, 30, 0.0);
        let depth = DepthMap::from_depths(Grid::filled(40, 30, 10.0), 3.0);
        let out = label_slice(&flow, &depth, &intr, &PipelineConfig::default(), 0, 0.0);
        assert_eq!(out.status, SliceStatus::Failed);
        assert!(out.estimate.is_err());
    }
}
