//! Robust camera velocity from dense flow and depth.
//!
//! Every valid pixel contributes two linear equations in the twist
//! `θ = (v_x, v_y, v_z, ω_x, ω_y, ω_z)`. Minimal 3-pixel hypotheses are scored
//! by consensus under a flow-residual threshold; the best consensus set is
//! refined with a least-squares solve.

use std::io::Write;

use nalgebra::{DMatrix, DVector, Matrix6, Vector2, Vector6};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{
    motion_field_coefficients, rigid_flow_unchecked, CameraIntrinsics, CameraVelocity, DepthMap, FlowField, PixelSample,
};
use crate::grid::Grid;

/// Samples whose stacked system exceeds this condition number are degenerate.
pub const MAX_CONDITION: f64 = 1e12;

/// Hard cap on hypothesis draws, as a multiple of `max_iterations`.
const DRAW_CAP_FACTOR: usize = 10;

/// Hypotheses evaluated per parallel batch.
const BATCH: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct RansacConfig {
    pub max_iterations: usize,
    pub stop_probability: f64,
    pub sample_size: usize,
    /// Flow residual in pixels per slice below which a pixel is an inlier.
    pub inlier_threshold: f64,
    pub min_inlier_fraction: f64,
    /// Pixels used for consensus scoring; `0` scores every valid pixel.
    pub scoring_subsample: usize,
    pub rng_seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            max_iterations: 300,
            stop_probability: 0.999,
            sample_size: 3,
            inlier_threshold: 0.5,
            min_inlier_fraction: 0.3,
            scoring_subsample: 10_000,
            rng_seed: 0,
        }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.stop_probability > 0.0 && self.stop_probability < 1.0) {
            return Err(Error::Domain(format!(
                "stop_probability must lie in (0, 1), got {}",
                self.stop_probability
            )));
        }
        if self.sample_size < 3 {
            return Err(Error::Domain(format!(
                "sample_size must be at least 3, got {}",
                self.sample_size
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::Domain("max_iterations must be at least 1".into()));
        }
        if !(self.inlier_threshold > 0.0) {
            return Err(Error::Domain("inlier_threshold must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.min_inlier_fraction) {
            return Err(Error::Domain("min_inlier_fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EgomotionEstimate {
    pub velocity: CameraVelocity,
    pub inlier_mask: Grid<bool>,
    pub inlier_count: usize,
    /// Pixels valid in both flow and depth.
    pub candidate_count: usize,
    pub iterations_used: usize,
    /// Mean flow residual over inliers, pixels per slice.
    pub mean_inlier_residual: f64,
}

impl EgomotionEstimate {
    pub fn inlier_fraction(&self) -> f64 {
        if self.candidate_count == 0 {
            0.0
        } else {
            self.inlier_count as f64 / self.candidate_count as f64
        }
    }
}

/// Two rows of the linear system contributed by one pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesignRows {
    pub ax: [f64; 6],
    pub ay: [f64; 6],
    pub bx: f64,
    pub by: f64,
}

/// Rows are the motion-field coefficients that
/// [`rigid_flow_at`](crate::geometry::rigid_flow_at) contracts with the twist,
/// so the linear system and the motion field share one definition.
pub fn build_design_rows(sample: &PixelSample) -> Result<DesignRows> {
    if !(sample.z > 0.0) || !sample.z.is_finite() {
        return Err(Error::Domain(format!("depth must be positive, got {}", sample.z)));
    }
    Ok(design_rows_unchecked(sample))
}

#[inline]
fn design_rows_unchecked(s: &PixelSample) -> DesignRows {
    let (ax, ay) = motion_field_coefficients(s.x, s.y, s.z);
    DesignRows {
        ax,
        ay,
        bx: s.flow.x,
        by: s.flow.y,
    }
}

fn stack(samples: &[PixelSample]) -> (DMatrix<f64>, DVector<f64>) {
    let n = samples.len();
    let mut a = DMatrix::zeros(2 * n, 6);
    let mut b = DVector::zeros(2 * n);
    for (i, s) in samples.iter().enumerate() {
        let rows = design_rows_unchecked(s);
        for j in 0..6 {
            a[(2 * i, j)] = rows.ax[j];
            a[(2 * i + 1, j)] = rows.ay[j];
        }
        b[2 * i] = rows.bx;
        b[2 * i + 1] = rows.by;
    }
    (a, b)
}

fn check_depths(samples: &[PixelSample]) -> Result<()> {
    if let Some(s) = samples.iter().find(|s| !(s.z > 0.0) || !s.z.is_finite()) {
        return Err(Error::Domain(format!("depth must be positive, got {}", s.z)));
    }
    Ok(())
}

/// Exact solve of the 6×6 system stacked from three pixels.
///
/// Returns [`Error::DegenerateSample`] when the system is (numerically) rank
/// deficient; callers resample.
pub fn solve_minimal(samples: &[PixelSample; 3]) -> Result<CameraVelocity> {
    check_depths(samples)?;
    let (a, b) = stack(samples);
    let a = Matrix6::from_iterator(a.iter().copied());
    let b = Vector6::from_iterator(b.iter().copied());
    solve_well_conditioned(a, b)
}

fn solve_well_conditioned(a: Matrix6<f64>, b: Vector6<f64>) -> Result<CameraVelocity> {
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(cond <= MAX_CONDITION) {
        return Err(Error::DegenerateSample(cond));
    }
    let theta = svd
        .solve(&b, 0.0)
        .map_err(|e| Error::Domain(e.to_string()))?;
    Ok(CameraVelocity::from_vector(&theta))
}

/// Minimum-norm least-squares twist over all samples.
///
/// Streams the rows into the 6×6 Gram matrix, solves it through its SVD
/// (rank-deficient systems get the minimum-norm answer) and applies one step
/// of iterative refinement against the original rows. The refinement step
/// recovers the accuracy lost by squaring the condition number.
pub fn solve_least_squares(samples: &[PixelSample]) -> Result<CameraVelocity> {
    if samples.len() < 3 {
        return Err(Error::InsufficientData {
            needed: 3,
            got: samples.len(),
        });
    }
    check_depths(samples)?;
    let rows = || samples.iter().map(design_rows_unchecked);
    let mut g = [[0.0; 6]; 6];
    let mut atb = Vector6::zeros();
    for r in rows() {
        accumulate_gram(&mut g, &r.ax);
        accumulate_gram(&mut g, &r.ay);
        for j in 0..6 {
            atb[j] += r.ax[j] * r.bx + r.ay[j] * r.by;
        }
    }
    let gram = Matrix6::from_fn(|i, j| g[i][j]);
    let svd = gram.svd(true, true);
    let eps = svd.singular_values.max() * (2 * samples.len()) as f64 * f64::EPSILON;
    let solve = |rhs: &Vector6<f64>| svd.solve(rhs, eps).map_err(|e| Error::Domain(e.to_string()));
    let theta = solve(&atb)?;
    let mut atr = Vector6::zeros();
    for r in rows() {
        let ex = r.bx - dot6(&r.ax, &theta);
        let ey = r.by - dot6(&r.ay, &theta);
        for j in 0..6 {
            atr[j] += r.ax[j] * ex + r.ay[j] * ey;
        }
    }
    let theta = theta + solve(&atr)?;
    Ok(CameraVelocity::from_vector(&theta))
}

#[inline]
fn accumulate_gram(g: &mut [[f64; 6]; 6], a: &[f64; 6]) {
    for (gi, &ai) in g.iter_mut().zip(a) {
        for (gij, &aj) in gi.iter_mut().zip(a) {
            *gij += ai * aj;
        }
    }
}

#[inline]
fn dot6(a: &[f64; 6], t: &Vector6<f64>) -> f64 {
    (0..6).map(|j| a[j] * t[j]).sum()
}

/// Pixel observation prepared for fast consensus scoring.
#[derive(Debug, Clone, Copy)]
struct Candidate {
    index: usize,
    sample: PixelSample,
    /// Observed flow in pixels per slice.
    observed: Vector2<f64>,
}

struct Scorer {
    fx_dt: f64,
    fy_dt: f64,
    threshold_sq: f64,
}

impl Scorer {
    #[inline]
    fn residual_sq(&self, c: &Candidate, vel: &CameraVelocity) -> f64 {
        let f = rigid_flow_unchecked(c.sample.x, c.sample.y, c.sample.z, vel);
        let du = c.observed.x - f.x * self.fx_dt;
        let dv = c.observed.y - f.y * self.fy_dt;
        du * du + dv * dv
    }

    fn count(&self, set: &[Candidate], vel: &CameraVelocity) -> usize {
        set.iter()
            .filter(|c| self.residual_sq(c, vel) < self.threshold_sq)
            .count()
    }
}

fn collect_candidates(
    flow: &FlowField,
    depth: &DepthMap,
    intr: &CameraIntrinsics,
) -> Vec<Candidate> {
    let (w, h) = intr.dims();
    let mut out = Vec::with_capacity(w * h);
    for row in 0..h {
        for col in 0..w {
            let i = row * w + col;
            if !(flow.valid.as_slice()[i] && depth.valid.as_slice()[i]) {
                continue;
            }
            let z = depth.z.as_slice()[i];
            let (u, v) = (flow.u.as_slice()[i], flow.v.as_slice()[i]);
            if !(z > 0.0 && z.is_finite() && u.is_finite() && v.is_finite()) {
                continue;
            }
            let (x, y) = intr.normalize(col as f64, row as f64);
            out.push(Candidate {
                index: i,
                sample: PixelSample {
                    x,
                    y,
                    z,
                    flow: Vector2::new(u / (intr.fx * flow.dt), v / (intr.fy * flow.dt)),
                },
                observed: Vector2::new(u, v),
            });
        }
    }
    out
}

fn solve_sample(samples: &[PixelSample]) -> Result<CameraVelocity> {
    if let Ok(three) = <&[PixelSample; 3]>::try_from(samples) {
        return solve_minimal(three);
    }
    // Larger samples: SVD of the stacked system, same conditioning test.
    let (a, b) = stack(samples);
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(cond <= MAX_CONDITION) {
        return Err(Error::DegenerateSample(cond));
    }
    let theta = svd.solve(&b, 0.0).map_err(|e| Error::Domain(e.to_string()))?;
    Ok(CameraVelocity::from_vector(&Vector6::from_iterator(theta.iter().copied())))
}

fn stop_reached(best_inliers: usize, scored: usize, sample_size: usize, k: usize, p: f64) -> bool {
    if scored == 0 {
        return false;
    }
    let w = best_inliers as f64 / scored as f64;
    let all_good = w.powi(sample_size as i32);
    if all_good >= 1.0 {
        return true;
    }
    1.0 - (1.0 - all_good).powi(k as i32) >= p
}

/// RANSAC over minimal samples followed by least-squares refinement on the consensus set.
///
/// Deterministic for a given `cfg.rng_seed`: hypotheses are drawn sequentially
/// from one seeded stream and scored in parallel batches, and the best model
/// is reduced by `(inlier count, earliest iteration)`.
pub fn estimate_egomotion(
    flow: &FlowField,
    depth: &DepthMap,
    intr: &CameraIntrinsics,
    cfg: &RansacConfig,
) -> Result<EgomotionEstimate> {
    cfg.validate()?;
    intr.validate()?;
    flow.u.ensure_dims(intr.dims())?;
    depth.z.ensure_dims(intr.dims())?;

    let candidates = collect_candidates(flow, depth, intr);
    if candidates.len() < cfg.sample_size {
        return Err(Error::InsufficientData {
            needed: cfg.sample_size,
            got: candidates.len(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let scoring: Vec<Candidate> =
        if cfg.scoring_subsample > 0 && candidates.len() > cfg.scoring_subsample {
            let mut picked = index::sample(&mut rng, candidates.len(), cfg.scoring_subsample).into_vec();
            picked.sort_unstable();
            picked.into_iter().map(|i| candidates[i]).collect()
        } else {
            candidates.clone()
        };

    let scorer = Scorer {
        fx_dt: intr.fx * flow.dt,
        fy_dt: intr.fy * flow.dt,
        threshold_sq: cfg.inlier_threshold * cfg.inlier_threshold,
    };

    let draw_cap = cfg.max_iterations * DRAW_CAP_FACTOR;
    let mut draws = 0usize;
    let mut iterations = 0usize;
    let mut best: Option<(usize, CameraVelocity)> = None;
    let mut sample = Vec::with_capacity(cfg.sample_size);

    'outer: while iterations < cfg.max_iterations && draws < draw_cap {
        let mut batch = Vec::with_capacity(BATCH);
        while batch.len() < BATCH && iterations + batch.len() < cfg.max_iterations && draws < draw_cap {
            draws += 1;
            sample.clear();
            sample.extend(
                index::sample(&mut rng, candidates.len(), cfg.sample_size)
                    .into_iter()
                    .map(|i| candidates[i].sample),
            );
            match solve_sample(&sample) {
                Ok(model) if model.is_finite() => batch.push(model),
                _ => continue,
            }
        }
        if batch.is_empty() {
            break;
        }
        let counts: Vec<usize> = batch
            .par_iter()
            .map(|model| scorer.count(&scoring, model))
            .collect();
        for (model, count) in batch.into_iter().zip(counts) {
            iterations += 1;
            if best.as_ref().is_none_or(|(c, _)| count > *c) {
                best = Some((count, model));
            }
            let best_count = best.as_ref().map_or(0, |(c, _)| *c);
            if stop_reached(best_count, scoring.len(), cfg.sample_size, iterations, cfg.stop_probability) {
                break 'outer;
            }
        }
    }

    let (best_count, best_model) = match best {
        Some(b) => b,
        None => {
            return Err(Error::EstimationFailed {
                best: 0.0,
                required: cfg.min_inlier_fraction,
            })
        }
    };
    let best_fraction = best_count as f64 / scoring.len() as f64;
    if best_fraction < cfg.min_inlier_fraction || best_count < 3 {
        return Err(Error::EstimationFailed {
            best: best_fraction,
            required: cfg.min_inlier_fraction,
        });
    }

    let consensus: Vec<PixelSample> = candidates
        .iter()
        .filter(|c| scorer.residual_sq(c, &best_model) < scorer.threshold_sq)
        .map(|c| c.sample)
        .collect();
    let refined = match solve_least_squares(&consensus) {
        Ok(v) if v.is_finite() => v,
        _ => best_model,
    };

    // Final consensus under the refined model; fall back to the hypothesis if
    // refinement lost support.
    let (velocity, mask, count, residual_sum) = {
        let tally = |vel: &CameraVelocity| {
            let mut mask = Grid::filled(intr.width, intr.height, false);
            let mut count = 0usize;
            let mut sum = 0.0;
            for c in &candidates {
                let r2 = scorer.residual_sq(c, vel);
                if r2 < scorer.threshold_sq {
                    mask.as_mut_slice()[c.index] = true;
                    count += 1;
                    sum += r2.sqrt();
                }
            }
            (mask, count, sum)
        };
        let (mask, count, sum) = tally(&refined);
        if count >= consensus.len() || consensus.is_empty() {
            (refined, mask, count, sum)
        } else {
            let (m2, c2, s2) = tally(&best_model);
            if c2 > count {
                (best_model, m2, c2, s2)
            } else {
                (refined, mask, count, sum)
            }
        }
    };

    Ok(EgomotionEstimate {
        velocity,
        inlier_mask: mask,
        inlier_count: count,
        candidate_count: candidates.len(),
        iterations_used: iterations,
        mean_inlier_residual: if count > 0 { residual_sum / count as f64 } else { 0.0 },
    })
}

/// One row of the velocity trace export.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityTraceRow {
    pub slice: usize,
    pub t: f64,
    pub estimate: Option<(CameraVelocity, f64, usize)>,
}

impl VelocityTraceRow {
    pub fn from_result(slice: usize, t: f64, result: &Result<EgomotionEstimate>) -> Self {
        Self {
            slice,
            t,
            estimate: result
                .as_ref()
                .ok()
                .map(|e| (e.velocity, e.inlier_fraction(), e.iterations_used)),
        }
    }
}

pub const VELOCITY_TRACE_HEADER: &str =
    "slice,t,v_x,v_y,v_z,omega_x,omega_y,omega_z,inlier_fraction,iterations,status";

/// Writes `rows` as CSV; failed slices leave the numeric columns empty.
pub fn write_velocity_trace<W: Write>(mut out: W, rows: &[VelocityTraceRow]) -> std::io::Result<()> {
    writeln!(out, "{VELOCITY_TRACE_HEADER}")?;
    for row in rows {
        write_velocity_trace_row(&mut out, row)?;
    }
    Ok(())
}

pub fn write_velocity_trace_row<W: Write>(mut out: W, row: &VelocityTraceRow) -> std::io::Result<()> {
    match &row.estimate {
        Some((v, fraction, iterations)) => writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},ok",
            row.slice, row.t, v.v.x, v.v.y, v.v.z, v.omega.x, v.omega.y, v.omega.z, fraction, iterations
        ),
        None => writeln!(out, "{},{},,,,,,,,,failed", row.slice, row.t),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{render_rigid_field, rigid_flow_at};
    use rand::Rng;

    fn random_twist(rng: &mut impl Rng, scale: f64) -> CameraVelocity {
        CameraVelocity::new(
            [0, 1, 2].map(|_| rng.random_range(-scale..scale)),
            [0, 1, 2].map(|_| rng.random_range(-scale..scale)),
        )
    }

    fn sample_from(x: f64, y: f64, z: f64, theta: &CameraVelocity) -> PixelSample {
        PixelSample {
            x,
            y,
            z,
            flow: rigid_flow_at(x, y, z, theta).unwrap(),
        }
    }

    #[test]
    fn design_rows_at_principal_point() {
        let rows = build_design_rows(&PixelSample { x: 0.0, y: 0.0, z: 1.0, flow: Vector2::zeros() }).unwrap();
        assert_eq!(rows.ax, [-1.0, 0.0, 0.0, 0.0, -1.0, 0.0]);
        assert_eq!(rows.ay, [0.0, -1.0, 0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn design_rows_hand_expansion() {
        let rows = build_design_rows(&PixelSample { x: 0.2, y: 0.1, z: 2.0, flow: Vector2::zeros() }).unwrap();
        let expected = [-0.5, 0.0, 0.1, 0.02, -1.04, 0.1];
        for (a, b) in rows.ax.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15, "{:?}", rows.ax);
        }
        // A_y = [0, −1/z, y/z, 1+y², −xy, −x]
        let expected_y = [0.0, -0.5, 0.05, 1.01, -0.02, -0.2];
        for (a, b) in rows.ay.iter().zip(expected_y) {
            assert!((a - b).abs() < 1e-15, "{:?}", rows.ay);
        }
    }

    #[test]
    fn design_rows_reproduce_motion_field() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = PixelSample { x: 0.31, y: -0.27, z: 1.9, flow: Vector2::zeros() };
        let rows = build_design_rows(&s).unwrap();
        for _ in 0..100 {
            let theta = random_twist(&mut rng, 2.0);
            let t = theta.to_vector();
            let f = rigid_flow_at(s.x, s.y, s.z, &theta).unwrap();
            let px: f64 = (0..6).map(|j| rows.ax[j] * t[j]).sum();
            let py: f64 = (0..6).map(|j| rows.ay[j] * t[j]).sum();
            assert!((px - f.x).abs() <= 1e-12 * (1.0 + f.x.abs()));
            assert!((py - f.y).abs() <= 1e-12 * (1.0 + f.y.abs()));
        }
    }

    #[test]
    fn design_rows_reject_bad_depth() {
        assert!(build_design_rows(&PixelSample { x: 0.0, y: 0.0, z: 0.0, flow: Vector2::zeros() }).is_err());
    }

    #[test]
    fn minimal_solve_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let theta = random_twist(&mut rng, 1.0);
            let samples = [
                sample_from(-0.4, -0.3, 1.2, &theta),
                sample_from(0.35, -0.1, 2.1, &theta),
                sample_from(0.05, 0.42, 0.8, &theta),
            ];
            let est = solve_minimal(&samples).unwrap();
            assert!(est.max_abs_diff(&theta) < 1e-9);
        }
    }

    #[test]
    fn minimal_solve_flags_duplicates() {
        let theta = CameraVelocity::new([0.1, 0.0, 0.2], [0.0, 0.1, 0.0]);
        let s = sample_from(0.1, 0.2, 1.0, &theta);
        assert!(matches!(solve_minimal(&[s, s, s]), Err(Error::DegenerateSample(_))));
    }

    #[test]
    fn minimal_solve_zero_flow() {
        let z = CameraVelocity::ZERO;
        let samples = [sample_from(-0.4, -0.3, 1.2, &z), sample_from(0.35, -0.1, 2.1, &z), sample_from(0.05, 0.42, 0.8, &z)];
        assert_eq!(solve_minimal(&samples).unwrap().to_vector(), Vector6::zeros());
    }

    fn random_samples(rng: &mut impl Rng, n: usize, theta: &CameraVelocity) -> Vec<PixelSample> {
        (0..n)
            .map(|_| {
                sample_from(
                    rng.random_range(-0.6..0.6),
                    rng.random_range(-0.5..0.5),
                    rng.random_range(0.5..3.0),
                    theta,
                )
            })
            .collect()
    }

    #[test]
    fn least_squares_round_trip_and_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let theta = random_twist(&mut rng, 1.0);
        let samples = random_samples(&mut rng, 400, &theta);
        assert!(solve_least_squares(&samples).unwrap().max_abs_diff(&theta) < 1e-9);

        let zero = random_samples(&mut rng, 50, &CameraVelocity::ZERO);
        assert!(solve_least_squares(&zero).unwrap().to_vector().amax() < 1e-15);

        assert!(matches!(
            solve_least_squares(&samples[..2]),
            Err(Error::InsufficientData { needed: 3, got: 2 })
        ));
    }

    #[test]
    fn least_squares_error_shrinks_with_more_samples() {
        use rand_distr::{Distribution, Normal};
        let noise = Normal::new(0.0, 0.05).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let theta = CameraVelocity::new([0.2, -0.1, 0.3], [0.05, -0.02, 0.1]);
        let mut mean_errors = Vec::new();
        for n in [20usize, 200, 2000] {
            let mut total = 0.0;
            for _ in 0..20 {
                let mut samples = random_samples(&mut rng, n, &theta);
                for s in &mut samples {
                    s.flow += Vector2::new(noise.sample(&mut rng), noise.sample(&mut rng));
                }
                total += (solve_least_squares(&samples).unwrap().to_vector() - theta.to_vector()).norm();
            }
            mean_errors.push(total / 20.0);
        }
        assert!(mean_errors[0] > mean_errors[1] && mean_errors[1] > mean_errors[2], "{mean_errors:?}");
    }

    struct Scene {
        intr: CameraIntrinsics,
        depth: DepthMap,
        flow: FlowField,
        imo: Grid<bool>,
        theta: CameraVelocity,
    }

    /// Random depth, rigid flow from `theta`, and a left band of `fraction`
    /// of the columns offset by `offset` pixels.
    fn scene(seed: u64, fraction: f64, offset: f64) -> Scene {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let intr = CameraIntrinsics::centered(80, 60);
        let depth = DepthMap::from_depths(Grid::from_fn(80, 60, |_, _| rng.random_range(0.8..2.5)), 3.0);
        let theta = CameraVelocity::new([0.3, -0.1, 0.4], [0.1, 0.2, -0.15]);
        let mut flow = render_rigid_field(&depth, &theta, &intr, 0.025).unwrap();
        let cutoff = (80.0 * fraction).round() as usize;
        let imo = Grid::from_fn(80, 60, |c, _| c < cutoff);
        for (i, &m) in imo.as_slice().iter().enumerate() {
            if m {
                flow.u.as_mut_slice()[i] += offset * 0.6;
                flow.v.as_mut_slice()[i] += offset * 0.8;
            }
        }
        Scene { intr, depth, flow, imo, theta }
    }

    #[test]
    fn ransac_rejects_imo_pixels() {
        let s = scene(1, 0.3, 5.0);
        let est = estimate_egomotion(&s.flow, &s.depth, &s.intr, &RansacConfig::default()).unwrap();
        assert!(est.velocity.max_abs_diff(&s.theta) < 1e-6, "{:?}", est.velocity);
        let imo_total = s.imo.count_true();
        let leaked = s.imo.as_slice().iter().zip(est.inlier_mask.as_slice()).filter(|(&m, &i)| m && i).count();
        assert!(leaked as f64 <= 0.01 * imo_total as f64);
        assert_eq!(est.inlier_count, est.inlier_mask.count_true());
        assert!(est.mean_inlier_residual <= RansacConfig::default().inlier_threshold);
    }

    #[test]
    fn ransac_rigid_scene_is_exact() {
        let s = scene(2, 0.0, 0.0);
        let est = estimate_egomotion(&s.flow, &s.depth, &s.intr, &RansacConfig::default()).unwrap();
        assert!(est.velocity.max_abs_diff(&s.theta) < 1e-9);
        assert_eq!(est.inlier_count, 80 * 60);
        assert!(est.iterations_used < 300);
    }

    #[test]
    fn ransac_zero_flow() {
        let s = scene(3, 0.0, 0.0);
        let flow = FlowField::zeros(80, 60, 0.025);
        let est = estimate_egomotion(&flow, &s.depth, &s.intr, &RansacConfig::default()).unwrap();
        assert!(est.velocity.to_vector().amax() < 1e-12);
        assert_eq!(est.inlier_count, 80 * 60);
    }

    #[test]
    fn ransac_is_deterministic() {
        let s = scene(4, 0.35, 7.0);
        let cfg = RansacConfig { rng_seed: 99, ..Default::default() };
        let a = estimate_egomotion(&s.flow, &s.depth, &s.intr, &cfg).unwrap();
        let b = estimate_egomotion(&s.flow, &s.depth, &s.intr, &cfg).unwrap();
        assert_eq!(a.velocity.to_vector().map(f64::to_bits), b.velocity.to_vector().map(f64::to_bits));
        assert_eq!(a, b);
    }

    #[test]
    fn naive_least_squares_is_biased() {
        let s = scene(5, 0.3, 5.0);
        let all: Vec<PixelSample> = collect_candidates(&s.flow, &s.depth, &s.intr).into_iter().map(|c| c.sample).collect();
        let naive = solve_least_squares(&all).unwrap();
        let robust = estimate_egomotion(&s.flow, &s.depth, &s.intr, &RansacConfig::default()).unwrap();
        let err = |v: &CameraVelocity| (v.to_vector() - s.theta.to_vector()).norm();
        assert!(err(&naive) > err(&robust.velocity));
    }

    #[test]
    fn failure_when_no_consensus() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let s = scene(6, 0.0, 0.0);
        let flow = FlowField::new(
            Grid::from_fn(80, 60, |_, _| rng.random_range(-20.0..20.0)),
            Grid::from_fn(80, 60, |_, _| rng.random_range(-20.0..20.0)),
            Grid::filled(80, 60, true),
            0.025,
        )
        .unwrap();
        assert!(matches!(
            estimate_egomotion(&flow, &s.depth, &s.intr, &RansacConfig::default()),
            Err(Error::EstimationFailed { .. })
        ));
    }

    #[test]
    fn insufficient_valid_pixels() {
        let s = scene(7, 0.0, 0.0);
        let mut flow = s.flow.clone();
        flow.valid = Grid::filled(80, 60, false);
        *flow.valid.get_mut(1, 1) = true;
        assert!(matches!(
            estimate_egomotion(&flow, &s.depth, &s.intr, &RansacConfig::default()),
            Err(Error::InsufficientData { .. })
        ));
    }

    #[test]
    fn config_validation() {
        let bad = [
            RansacConfig { stop_probability: 1.0, ..Default::default() },
            RansacConfig { sample_size: 2, ..Default::default() },
            RansacConfig { max_iterations: 0, ..Default::default() },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err());
        }
    }

    #[test]
    fn larger_samples_are_supported() {
        let s = scene(8, 0.2, 6.0);
        let cfg = RansacConfig { sample_size: 5, ..Default::default() };
        let est = estimate_egomotion(&s.flow, &s.depth, &s.intr, &cfg).unwrap();
        assert!(est.velocity.max_abs_diff(&s.theta) < 1e-6);
    }

    #[test]
    fn trace_csv_layout() {
        let rows = vec![
            VelocityTraceRow { slice: 0, t: 0.0, estimate: Some((CameraVelocity::new([1.0, 2.0, 3.0], [0.5, 0.25, -1.0]), 1.0, 12)) },
            VelocityTraceRow { slice: 1, t: 0.025, estimate: None },
        ];
        let mut buf = Vec::new();
        write_velocity_trace(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], VELOCITY_TRACE_HEADER);
        assert_eq!(lines[1], "0,0,1,2,3,0.5,0.25,-1,1,12,ok");
        assert_eq!(lines[2], "1,0.025,,,,,,,,,failed");
    }
}
