//! Calibrated pinhole camera and the instantaneous rigid motion field.
//!
//! A scene point `P` seen from a camera moving with twist `(v, ω)` moves in the
//! camera frame as `Ṗ = −v − ω × P`. Differentiating the projection
//! `(X/Z, Y/Z)` gives the image motion at calibrated coordinates `(x, y)`:
//!
//! ```text
//! ẋ = (−v_x + x·v_z)/Z + x·y·ω_x − (1 + x²)·ω_y + y·ω_z
//! ẏ = (−v_y + y·v_z)/Z + (1 + y²)·ω_x − x·y·ω_y − x·ω_z
//! ```
//!
//! Flow rasters are stored in pixels per slice. The calibrated, per-second form
//! is only used inside [`rigid_flow_at`] and converted at the raster boundary.

use nalgebra::{Vector2, Vector3, Vector6};

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Pinhole intrinsics of an undistorted sensor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let intr = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        intr.validate()?;
        Ok(intr)
    }

    /// Centered principal point with a 90° horizontal field of view.
    pub fn centered(width: usize, height: usize) -> Self {
        let f = width as f64 / 2.0;
        Self {
            fx: f,
            fy: f,
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
            width,
            height,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.fx, self.fy, self.cx, self.cy]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::Domain(format!(
                "focal lengths must be positive and finite (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Domain("sensor size must be non-zero".into()));
        }
        if !(0.0..self.width as f64).contains(&self.cx) || !(0.0..self.height as f64).contains(&self.cy)
        {
            return Err(Error::Domain(format!(
                "principal point ({}, {}) outside {}x{} sensor",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// Pixel coordinates to calibrated image coordinates.
    #[inline]
    pub fn normalize(&self, col: f64, row: f64) -> (f64, f64) {
        ((col - self.cx) / self.fx, (row - self.cy) / self.fy)
    }

    #[inline]
    pub fn denormalize(&self, x: f64, y: f64) -> (f64, f64) {
        (x * self.fx + self.cx, y * self.fy + self.cy)
    }
}

/// Instantaneous camera twist: linear velocity in m/s, angular in rad/s.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CameraVelocity {
    pub v: Vector3<f64>,
    pub omega: Vector3<f64>,
}

impl CameraVelocity {
    pub const ZERO: Self = Self {
        v: Vector3::new(0.0, 0.0, 0.0),
        omega: Vector3::new(0.0, 0.0, 0.0),
    };

    pub fn new(v: [f64; 3], omega: [f64; 3]) -> Self {
        Self {
            v: Vector3::from(v),
            omega: Vector3::from(omega),
        }
    }

    /// Packs as `(v_x, v_y, v_z, ω_x, ω_y, ω_z)`.
    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(
            self.v.x,
            self.v.y,
            self.v.z,
            self.omega.x,
            self.omega.y,
            self.omega.z,
        )
    }

    pub fn from_vector(theta: &Vector6<f64>) -> Self {
        Self {
            v: Vector3::new(theta[0], theta[1], theta[2]),
            omega: Vector3::new(theta[3], theta[4], theta[5]),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.v.iter().chain(self.omega.iter()).all(|c| c.is_finite())
    }

    /// Sup-norm distance between twists.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        (self.to_vector() - other.to_vector()).amax()
    }
}

/// One pixel observation in calibrated coordinates: position, depth and motion per second.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelSample {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub flow: Vector2<f64>,
}

/// Dense flow in pixels per slice of duration `dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub u: Grid<f64>,
    pub v: Grid<f64>,
    pub valid: Grid<bool>,
    pub dt: f64,
}

impl FlowField {
    pub fn new(u: Grid<f64>, v: Grid<f64>, valid: Grid<bool>, dt: f64) -> Result<Self> {
        v.ensure_dims(u.dims())?;
        valid.ensure_dims(u.dims())?;
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Domain(format!("slice duration must be positive, got {dt}")));
        }
        Ok(Self { u, v, valid, dt })
    }

    pub fn zeros(width: usize, height: usize, dt: f64) -> Self {
        Self {
            u: Grid::filled(width, height, 0.0),
            v: Grid::filled(width, height, 0.0),
            valid: Grid::filled(width, height, true),
            dt,
        }
    }

    /// Constant flow `(du, dv)` at every pixel.
    pub fn constant(width: usize, height: usize, du: f64, dv: f64, dt: f64) -> Self {
        Self {
            u: Grid::filled(width, height, du),
            v: Grid::filled(width, height, dv),
            valid: Grid::filled(width, height, true),
            dt,
        }
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        self.u.dims()
    }

    #[inline]
    pub fn at(&self, i: usize) -> Vector2<f64> {
        Vector2::new(self.u.as_slice()[i], self.v.as_slice()[i])
    }
}

/// Metric depth with validity.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub z: Grid<f64>,
    pub valid: Grid<bool>,
}

impl DepthMap {
    pub const DEFAULT_MAX_DEPTH: f64 = 3.0;

    /// Validity is derived: finite, positive and no farther than `z_max`.
    pub fn from_depths(z: Grid<f64>, z_max: f64) -> Self {
        let valid = z.map(|&d| d.is_finite() && d > 0.0 && d <= z_max);
        Self { z, valid }
    }

    /// Uses an explicit validity mask; fails when a valid pixel breaks the depth range.
    pub fn new(z: Grid<f64>, valid: Grid<bool>, z_max: f64) -> Result<Self> {
        valid.ensure_dims(z.dims())?;
        for (i, (&d, &ok)) in z.as_slice().iter().zip(valid.as_slice()).enumerate() {
            if ok && !(d > 0.0 && d <= z_max) {
                return Err(Error::Domain(format!(
                    "valid depth {d} at pixel {i} outside (0, {z_max}]"
                )));
            }
        }
        Ok(Self { z, valid })
    }

    /// Marks pixels beyond `z_max` invalid.
    pub fn clip(&mut self, z_max: f64) {
        for (ok, &d) in self.valid.as_mut_slice().iter_mut().zip(self.z.as_slice()) {
            *ok = *ok && d.is_finite() && d > 0.0 && d <= z_max;
        }
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        self.z.dims()
    }
}

/// Image motion (calibrated units per second) of a static point at depth `z`
/// seen by a camera moving with `vel`.
pub fn rigid_flow_at(x: f64, y: f64, z: f64, vel: &CameraVelocity) -> Result<Vector2<f64>> {
    if !(z > 0.0) || !z.is_finite() {
        return Err(Error::Domain(format!("depth must be positive, got {z}")));
    }
    if !(x.is_finite() && y.is_finite() && vel.is_finite()) {
        return Err(Error::Domain("non-finite pixel or velocity".into()));
    }
    Ok(rigid_flow_unchecked(x, y, z, vel))
}

/// Coefficients of the motion field, which is linear in the twist
/// `(v_x, v_y, v_z, ω_x, ω_y, ω_z)`. Returns the rows for `ẋ` and `ẏ`.
///
/// `ẋ = (−v_x + x·v_z)/z + x·y·ω_x − (1 + x²)·ω_y + y·ω_z`
/// `ẏ = (−v_y + y·v_z)/z + (1 + y²)·ω_x − x·y·ω_y − x·ω_z`
#[inline]
pub(crate) fn motion_field_coefficients(x: f64, y: f64, z: f64) -> ([f64; 6], [f64; 6]) {
    let iz = 1.0 / z;
    (
        [-iz, 0.0, x * iz, x * y, -(1.0 + x * x), y],
        [0.0, -iz, y * iz, 1.0 + y * y, -x * y, -x],
    )
}

#[inline]
pub(crate) fn rigid_flow_unchecked(x: f64, y: f64, z: f64, vel: &CameraVelocity) -> Vector2<f64> {
    let (cx, cy) = motion_field_coefficients(x, y, z);
    let t = [vel.v.x, vel.v.y, vel.v.z, vel.omega.x, vel.omega.y, vel.omega.z];
    let dot = |c: &[f64; 6]| c.iter().zip(&t).map(|(a, b)| a * b).sum::<f64>();
    Vector2::new(dot(&cx), dot(&cy))
}

/// Renders the flow (pixels per `dt`) induced by camera motion over a depth map.
///
/// Pixels with invalid depth are invalid in the output and carry zero flow.
pub fn render_rigid_field(
    depth: &DepthMap,
    vel: &CameraVelocity,
    intr: &CameraIntrinsics,
    dt: f64,
) -> Result<FlowField> {
    depth.z.ensure_dims(intr.dims())?;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Domain(format!("slice duration must be positive, got {dt}")));
    }
    if !vel.is_finite() {
        return Err(Error::Domain("non-finite velocity".into()));
    }
    let (w, h) = intr.dims();
    let mut u = Grid::filled(w, h, 0.0);
    let mut v = Grid::filled(w, h, 0.0);
    for row in 0..h {
        for col in 0..w {
            let i = row * w + col;
            if !depth.valid.as_slice()[i] {
                continue;
            }
            let (x, y) = intr.normalize(col as f64, row as f64);
            let f = rigid_flow_unchecked(x, y, depth.z.as_slice()[i], vel);
            u.as_mut_slice()[i] = f.x * intr.fx * dt;
            v.as_mut_slice()[i] = f.y * intr.fy * dt;
        }
    }
    FlowField::new(u, v, depth.valid.clone(), dt)
}

/// Adds per-object fields to a rigid field inside each object's region.
///
/// Regions must be pairwise disjoint. Outside every region the rigid field is
/// copied unchanged; inside region `i` validity also requires the object field
/// to be valid.
pub fn compose_motion_field(
    rigid: &FlowField,
    object_fields: &[(FlowField, Grid<bool>)],
) -> Result<FlowField> {
    let dims = rigid.dims();
    let mut owner: Vec<Option<usize>> = vec![None; dims.0 * dims.1];
    for (k, (field, region)) in object_fields.iter().enumerate() {
        field.u.ensure_dims(dims)?;
        region.ensure_dims(dims)?;
        if field.dt != rigid.dt {
            return Err(Error::Unit(rigid.dt, field.dt));
        }
        for (i, &inside) in region.as_slice().iter().enumerate() {
            if !inside {
                continue;
            }
            if let Some(other) = owner[i] {
                return Err(Error::Invariant(format!(
                    "object regions {other} and {k} overlap at pixel ({}, {})",
                    i % dims.0,
                    i / dims.0
                )));
            }
            owner[i] = Some(k);
        }
    }

    let mut out = rigid.clone();
    for (i, slot) in owner.iter().enumerate() {
        if let Some(k) = *slot {
            let field = &object_fields[k].0;
            out.u.as_mut_slice()[i] += field.u.as_slice()[i];
            out.v.as_mut_slice()[i] += field.v.as_slice()[i];
            let valid = &mut out.valid.as_mut_slice()[i];
            *valid = *valid && field.valid.as_slice()[i];
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Projection of a point moving under `Ṗ = −v − ω × P`, differentiated by
    /// central differences with an RK4 trajectory.
    fn finite_difference_flow(x: f64, y: f64, z: f64, vel: &CameraVelocity) -> Vector2<f64> {
        let deriv = |p: Vector3<f64>| -vel.v - vel.omega.cross(&p);
        let step = |p: Vector3<f64>, h: f64| {
            let k1 = deriv(p);
            let k2 = deriv(p + k1 * (h / 2.0));
            let k3 = deriv(p + k2 * (h / 2.0));
            let k4 = deriv(p + k3 * h);
            p + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
        };
        let p0 = Vector3::new(x * z, y * z, z);
        let dt = 1e-6;
        let fwd = step(p0, dt);
        let back = step(p0, -dt);
        let proj = |p: Vector3<f64>| Vector2::new(p.x / p.z, p.y / p.z);
        (proj(fwd) - proj(back)) / (2.0 * dt)
    }

    fn vel(v: [f64; 3], w: [f64; 3]) -> CameraVelocity {
        CameraVelocity::new(v, w)
    }

    #[test]
    fn zero_velocity_zero_flow() {
        let f = rigid_flow_at(0.0, 0.0, 1.0, &CameraVelocity::ZERO).unwrap();
        assert_eq!(f, Vector2::zeros());
    }

    #[test]
    fn forward_translation_is_zero_at_principal_point() {
        let f = rigid_flow_at(0.0, 0.0, 2.0, &vel([0.0, 0.0, 1.0], [0.0; 3])).unwrap();
        assert_eq!(f, Vector2::zeros());
    }

    #[test]
    fn matches_finite_difference_example() {
        let v = vel([0.3, 0.0, 0.1], [0.0, 0.05, 0.0]);
        let f = rigid_flow_at(0.1, -0.2, 1.5, &v).unwrap();
        let fd = finite_difference_flow(0.1, -0.2, 1.5, &v);
        // ẋ = (−0.3 + 0.01)/1.5 − 1.01·0.05, ẏ = (−0.02)/1.5 + 0.001
        assert!((f - fd).norm() < 1e-8, "{f} vs {fd}");
        assert!((f.x - (-0.29 / 1.5 - 0.0505)).abs() < 1e-15);
        assert!((f.y - (-0.02 / 1.5 + 0.001)).abs() < 1e-15);
    }

    #[test]
    fn finite_difference_oracle_on_random_inputs() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let x = rng.random_range(-0.8..0.8);
            let y = rng.random_range(-0.8..0.8);
            let z = rng.random_range(0.3..5.0);
            let v = vel(
                [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
                [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
            );
            let f = rigid_flow_at(x, y, z, &v).unwrap();
            let fd = finite_difference_flow(x, y, z, &v);
            let err = (f - fd).norm() / f.norm().max(1e-3);
            assert!(err < 1e-6, "relative error {err} at ({x}, {y}, {z})");
        }
    }

    #[test]
    fn rejects_non_positive_depth() {
        assert!(matches!(
            rigid_flow_at(0.0, 0.0, 0.0, &CameraVelocity::ZERO),
            Err(Error::Domain(_))
        ));
        assert!(rigid_flow_at(0.0, 0.0, -1.0, &CameraVelocity::ZERO).is_err());
        assert!(rigid_flow_at(0.0, 0.0, f64::NAN, &CameraVelocity::ZERO).is_err());
    }

    #[test]
    fn intrinsics_validation() {
        assert!(CameraIntrinsics::new(100.0, 100.0, 80.0, 60.0, 160, 120).is_ok());
        assert!(CameraIntrinsics::new(0.0, 100.0, 80.0, 60.0, 160, 120).is_err());
        assert!(CameraIntrinsics::new(100.0, 100.0, 160.0, 60.0, 160, 120).is_err());
        assert!(CameraIntrinsics::new(100.0, 100.0, 80.0, -1.0, 160, 120).is_err());
    }

    fn plane(intr: &CameraIntrinsics, z: f64) -> DepthMap {
        DepthMap::from_depths(Grid::filled(intr.width, intr.height, z), 10.0)
    }

    #[test]
    fn zero_velocity_renders_zero_field() {
        let intr = CameraIntrinsics::centered(32, 24);
        let mut depth = plane(&intr, 2.0);
        *depth.valid.get_mut(3, 4) = false;
        let flow = render_rigid_field(&depth, &CameraVelocity::ZERO, &intr, 0.025).unwrap();
        assert!(flow.u.as_slice().iter().all(|&u| u == 0.0));
        assert!(flow.v.as_slice().iter().all(|&v| v == 0.0));
        assert_eq!(flow.valid, depth.valid);
    }

    #[test]
    fn roll_field_is_tangential() {
        let intr = CameraIntrinsics::new(120.0, 110.0, 15.5, 11.5, 32, 24).unwrap();
        let depth = plane(&intr, 1.7);
        let flow = render_rigid_field(&depth, &vel([0.0; 3], [0.0, 0.0, 0.8]), &intr, 0.025).unwrap();
        for row in 0..24 {
            for col in 0..32 {
                let (rx, ry) = (col as f64 - intr.cx, row as f64 - intr.cy);
                // In pixel units the roll field is (fx·y, −fy·x)·ω·dt; the
                // matching radial direction in pixels is (x·fx, y·fy) scaled
                // by the anisotropy, so test in calibrated coordinates.
                let (x, y) = intr.normalize(col as f64, row as f64);
                let i = row * 32 + col;
                let (fu, fv) = (flow.u.as_slice()[i] / intr.fx, flow.v.as_slice()[i] / intr.fy);
                assert!((fu * x + fv * y).abs() < 1e-9, "pixel ({rx}, {ry})");
            }
        }
    }

    #[test]
    fn lateral_translation_over_plane_is_uniform() {
        let intr = CameraIntrinsics::centered(40, 30);
        let z = 1.25;
        let dt = 0.025;
        let depth = plane(&intr, z);
        let flow = render_rigid_field(&depth, &vel([1.0, 0.0, 0.0], [0.0; 3]), &intr, dt).unwrap();
        let expected = -intr.fx * dt / z;
        for i in 0..flow.u.len() {
            assert!((flow.u.as_slice()[i] - expected).abs() < 1e-12);
            assert_eq!(flow.v.as_slice()[i], 0.0);
        }
    }

    #[test]
    fn render_rejects_dimension_mismatch() {
        let intr = CameraIntrinsics::centered(40, 30);
        let depth = DepthMap::from_depths(Grid::filled(30, 40, 1.0), 3.0);
        assert!(matches!(
            render_rigid_field(&depth, &CameraVelocity::ZERO, &intr, 0.025),
            Err(Error::Shape { .. })
        ));
    }

    fn boxed(w: usize, h: usize, c0: usize, r0: usize, c1: usize, r1: usize) -> Grid<bool> {
        Grid::from_fn(w, h, |c, r| c >= c0 && c < c1 && r >= r0 && r < r1)
    }

    #[test]
    fn compose_identity_cases() {
        let rigid = FlowField::constant(16, 12, 0.3, -0.2, 0.025);
        assert_eq!(compose_motion_field(&rigid, &[]).unwrap(), rigid);
        let zero = FlowField::zeros(16, 12, 0.025);
        let out = compose_motion_field(&rigid, &[(zero, boxed(16, 12, 2, 2, 6, 6))]).unwrap();
        assert_eq!(out, rigid);
    }

    #[test]
    fn compose_two_boxes() {
        let rigid = FlowField::zeros(16, 12, 0.025);
        let a = (FlowField::constant(16, 12, 1.0, 0.0, 0.025), boxed(16, 12, 1, 1, 5, 5));
        let b = (FlowField::constant(16, 12, 0.0, 1.0, 0.025), boxed(16, 12, 8, 6, 12, 10));
        let out = compose_motion_field(&rigid, &[a.clone(), b.clone()]).unwrap();
        for i in 0..out.u.len() {
            let expected = if a.1.as_slice()[i] {
                (1.0, 0.0)
            } else if b.1.as_slice()[i] {
                (0.0, 1.0)
            } else {
                (0.0, 0.0)
            };
            assert_eq!((out.u.as_slice()[i], out.v.as_slice()[i]), expected);
        }
    }

    #[test]
    fn compose_rejects_overlap() {
        let rigid = FlowField::zeros(16, 12, 0.025);
        let a = (FlowField::zeros(16, 12, 0.025), boxed(16, 12, 1, 1, 5, 5));
        let b = (FlowField::zeros(16, 12, 0.025), boxed(16, 12, 4, 4, 8, 8));
        assert!(matches!(compose_motion_field(&rigid, &[a, b]), Err(Error::Invariant(_))));
    }

    #[test]
    fn compose_rejects_dt_mismatch() {
        let rigid = FlowField::zeros(16, 12, 0.025);
        let a = (FlowField::zeros(16, 12, 0.05), boxed(16, 12, 1, 1, 5, 5));
        assert!(matches!(compose_motion_field(&rigid, &[a]), Err(Error::Unit(..))));
    }

    fn arb_twist() -> impl Strategy<Value = CameraVelocity> {
        (prop::array::uniform3(-2.0..2.0f64), prop::array::uniform3(-2.0..2.0f64))
            .prop_map(|(v, w)| CameraVelocity::new(v, w))
    }

    proptest! {
        #[test]
        fn linear_in_twist(
            x in -1.0..1.0f64, y in -1.0..1.0f64, z in 0.2..6.0f64,
            a in -3.0..3.0f64, b in -3.0..3.0f64,
            t1 in arb_twist(), t2 in arb_twist(),
        ) {
            let mix = CameraVelocity::from_vector(&(t1.to_vector() * a + t2.to_vector() * b));
            let lhs = rigid_flow_at(x, y, z, &mix).unwrap();
            let rhs = rigid_flow_at(x, y, z, &t1).unwrap() * a + rigid_flow_at(x, y, z, &t2).unwrap() * b;
            let scale = 1.0 + lhs.norm().max(rhs.norm()) * 10.0;
            prop_assert!((lhs - rhs).norm() <= 1e-12 * scale * 10.0);
        }

        #[test]
        fn translation_scales_inversely_with_depth(
            x in -1.0..1.0f64, y in -1.0..1.0f64, z in 0.2..6.0f64, t in arb_twist(),
        ) {
            let trans = CameraVelocity { v: t.v, omega: Vector3::zeros() };
            let rot = CameraVelocity { v: Vector3::zeros(), omega: t.omega };
            let near = rigid_flow_at(x, y, z, &trans).unwrap();
            let far = rigid_flow_at(x, y, 2.0 * z, &trans).unwrap();
            prop_assert!((far * 2.0 - near).norm() <= 1e-12 * (1.0 + near.norm()));
            prop_assert_eq!(rigid_flow_at(x, y, z, &rot).unwrap(), rigid_flow_at(x, y, 2.0 * z, &rot).unwrap());
        }

        #[test]
        fn compose_outside_objects_is_rigid(
            seed in any::<u64>(), c0 in 0usize..10, r0 in 0usize..8,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let (w, h) = (16, 12);
            let rigid = FlowField::new(
                Grid::from_fn(w, h, |_, _| rng.random_range(-5.0..5.0)),
                Grid::from_fn(w, h, |_, _| rng.random_range(-5.0..5.0)),
                Grid::filled(w, h, true),
                0.025,
            ).unwrap();
            let region = boxed(w, h, c0, r0, c0 + 5, r0 + 3);
            let obj = FlowField::constant(w, h, 1.5, -0.5, 0.025);
            let out = compose_motion_field(&rigid, &[(obj, region.clone())]).unwrap();
            for i in 0..out.u.len() {
                if !region.as_slice()[i] {
                    prop_assert_eq!(out.u.as_slice()[i].to_bits(), rigid.u.as_slice()[i].to_bits());
                    prop_assert_eq!(out.v.as_slice()[i].to_bits(), rigid.v.as_slice()[i].to_bits());
                }
            }
        }
    }
}
