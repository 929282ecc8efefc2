//! Synthetic scenes with known depth, egomotion, moving objects, flow and events.
//!
//! Object motion convention: each object carries its own twist, and the flow it
//! adds inside its region is the rigid field of that twist over the object's
//! depth. The residual after removing the true camera field is therefore
//! exactly the object's field.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, Error, Result};
use crate::events::{project_events, Event, EventSlice};
use crate::geometry::{
    compose_motion_field, render_rigid_field, CameraIntrinsics, CameraVelocity, DepthMap, FlowField,
};
use crate::grid::Grid;
use crate::io::config::PipelineConfig;
use crate::io::events::EventWriter;
use crate::io::fields::{depth_plane, flow_planes};
use crate::io::raster::{Dtype, RasterHeader, RasterWriter};
use crate::labeler::{fmt_float, LabelMask, ThresholdDecision};
use crate::metrics::SliceIoU;
use crate::pipeline::{label_slice, SliceStatus};

pub const DEFAULT_WIDTH: usize = 160;
pub const DEFAULT_HEIGHT: usize = 120;
/// Cropped event-camera resolution used for the throughput preset.
pub const CROPPED_WIDTH: usize = 320;
pub const CROPPED_HEIGHT: usize = 215;

pub const FLOW_FILE: &str = "flow.evr";
pub const CLEAN_FLOW_FILE: &str = "clean_flow.evr";
pub const RIGID_FLOW_FILE: &str = "rigid_flow.evr";
pub const DEPTH_FILE: &str = "depth.evr";
pub const GT_MASK_FILE: &str = "gt_mask.evr";
pub const EVENTS_FILE: &str = "events.bin";
pub const META_FILE: &str = "meta.toml";
pub const CONFIG_FILE: &str = "pipeline.toml";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case", deny_unknown_fields)]
pub enum DepthModel {
    Constant { z: f64 },
    /// `z = z0 + gx·x + gy·y` over calibrated coordinates.
    Plane { z0: f64, gx: f64, gy: f64 },
    /// Independent uniform depth per pixel.
    Textured { z_min: f64, z_max: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case", deny_unknown_fields)]
pub enum Region {
    /// Columns `x0..x1`, rows `y0..y1`.
    Box { x0: usize, y0: usize, x1: usize, y1: usize },
    /// Pixels whose centre lies within `radius` of `(cx, cy)`.
    Disk { cx: f64, cy: f64, radius: f64 },
}

impl Region {
    pub fn contains(&self, col: usize, row: usize) -> bool {
        match *self {
            Region::Box { x0, y0, x1, y1 } => (x0..x1).contains(&col) && (y0..y1).contains(&row),
            Region::Disk { cx, cy, radius } => {
                let (dx, dy) = (col as f64 - cx, row as f64 - cy);
                dx * dx + dy * dy <= radius * radius
            }
        }
    }

    pub fn mask(&self, width: usize, height: usize) -> Grid<bool> {
        Grid::from_fn(width, height, |c, r| self.contains(c, r))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectSpec {
    pub region: Region,
    pub velocity: CameraVelocity,
    /// Added to the background depth inside the region.
    pub depth_offset: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub intrinsics: CameraIntrinsics,
    pub depth_model: DepthModel,
    pub camera_velocity: CameraVelocity,
    pub objects: Vec<ObjectSpec>,
    /// Standard deviation of the Gaussian flow noise per component, pixels.
    pub flow_noise_sigma: f64,
    /// Fraction of pixels emitting events.
    pub event_texture_density: f64,
    pub events_per_pixel: usize,
    /// Fraction of pixels whose flow gets a gross error of uniform magnitude in
    /// `[0, gross_error_max]` and uniform direction.
    pub gross_error_fraction: f64,
    pub gross_error_max: f64,
    /// Slice duration in seconds; slice `k` covers `[k·dt, (k+1)·dt)`.
    pub dt: f64,
    pub slices: usize,
    pub rng_seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            intrinsics: CameraIntrinsics::centered(DEFAULT_WIDTH, DEFAULT_HEIGHT),
            depth_model: DepthModel::Constant { z: 2.0 },
            camera_velocity: CameraVelocity::ZERO,
            objects: Vec::new(),
            flow_noise_sigma: 0.0,
            event_texture_density: 0.2,
            events_per_pixel: 4,
            gross_error_fraction: 0.0,
            gross_error_max: 10.0,
            dt: 0.025,
            slices: 1,
            rng_seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Twist {
    pub v: [f64; 3],
    pub omega: [f64; 3],
}

impl From<CameraVelocity> for Twist {
    fn from(c: CameraVelocity) -> Self {
        Self {
            v: c.v.into(),
            omega: c.omega.into(),
        }
    }
}

impl From<Twist> for CameraVelocity {
    fn from(t: Twist) -> Self {
        CameraVelocity::new(t.v, t.omega)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CameraFile {
    width: usize,
    height: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fx: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cx: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cy: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObjectFile {
    v: [f64; 3],
    omega: [f64; 3],
    #[serde(default)]
    depth_offset: f64,
    region: Region,
}

fn default_spec() -> SceneSpec {
    SceneSpec::default()
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneFile {
    #[serde(default)]
    seed: u64,
    #[serde(default = "default_dt")]
    dt: f64,
    #[serde(default = "default_slices")]
    slices: usize,
    #[serde(default)]
    flow_noise_sigma: f64,
    #[serde(default = "default_density")]
    event_texture_density: f64,
    #[serde(default = "default_events_per_pixel")]
    events_per_pixel: usize,
    #[serde(default)]
    gross_error_fraction: f64,
    #[serde(default = "default_gross_max")]
    gross_error_max: f64,
    camera: CameraFile,
    camera_velocity: Twist,
    depth: DepthModel,
    #[serde(default)]
    objects: Vec<ObjectFile>,
}

fn default_dt() -> f64 {
    default_spec().dt
}
fn default_slices() -> usize {
    default_spec().slices
}
fn default_density() -> f64 {
    default_spec().event_texture_density
}
fn default_events_per_pixel() -> usize {
    default_spec().events_per_pixel
}
fn default_gross_max() -> f64 {
    default_spec().gross_error_max
}

impl SceneSpec {
    /// Randomized scene with the default suite options.
    pub fn random(seed: u64) -> Self {
        random_scene(seed, &SuiteOptions::default())
    }

    pub fn dims(&self) -> (usize, usize) {
        self.intrinsics.dims()
    }

    /// Parses the TOML scene format. Errors carry line and column context.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: SceneFile = toml::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
        let base = CameraIntrinsics::centered(file.camera.width, file.camera.height);
        let intrinsics = CameraIntrinsics::new(
            file.camera.fx.unwrap_or(base.fx),
            file.camera.fy.unwrap_or(base.fy),
            file.camera.cx.unwrap_or(base.cx),
            file.camera.cy.unwrap_or(base.cy),
            file.camera.width,
            file.camera.height,
        )?;
        let spec = Self {
            intrinsics,
            depth_model: file.depth,
            camera_velocity: file.camera_velocity.into(),
            objects: file
                .objects
                .into_iter()
                .map(|o| ObjectSpec {
                    region: o.region,
                    velocity: CameraVelocity::new(o.v, o.omega),
                    depth_offset: o.depth_offset,
                })
                .collect(),
            flow_noise_sigma: file.flow_noise_sigma,
            event_texture_density: file.event_texture_density,
            events_per_pixel: file.events_per_pixel,
            gross_error_fraction: file.gross_error_fraction,
            gross_error_max: file.gross_error_max,
            dt: file.dt,
            slices: file.slices,
            rng_seed: file.seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml_string(&self) -> String {
        let i = &self.intrinsics;
        let file = SceneFile {
            seed: self.rng_seed,
            dt: self.dt,
            slices: self.slices,
            flow_noise_sigma: self.flow_noise_sigma,
            event_texture_density: self.event_texture_density,
            events_per_pixel: self.events_per_pixel,
            gross_error_fraction: self.gross_error_fraction,
            gross_error_max: self.gross_error_max,
            camera: CameraFile {
                width: i.width,
                height: i.height,
                fx: Some(i.fx),
                fy: Some(i.fy),
                cx: Some(i.cx),
                cy: Some(i.cy),
            },
            camera_velocity: self.camera_velocity.into(),
            depth: self.depth_model,
            objects: self
                .objects
                .iter()
                .map(|o| ObjectFile {
                    v: o.velocity.v.into(),
                    omega: o.velocity.omega.into(),
                    depth_offset: o.depth_offset,
                    region: o.region,
                })
                .collect(),
        };
        toml::to_string(&file).expect("scene spec serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| Error::File {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    /// Checks parameter ranges, region disjointness and positive object depth.
    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        let bad = |what: String| Err(Error::Domain(what));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if self.slices == 0 {
            return bad("slices must be at least 1".into());
        }
        if !(self.flow_noise_sigma >= 0.0 && self.flow_noise_sigma.is_finite()) {
            return bad(format!("flow_noise_sigma must be >= 0, got {}", self.flow_noise_sigma));
        }
        for (name, f) in [
            ("event_texture_density", self.event_texture_density),
            ("gross_error_fraction", self.gross_error_fraction),
        ] {
            if !(0.0..=1.0).contains(&f) {
                return bad(format!("{name} must lie in [0, 1], got {f}"));
            }
        }
        if !(self.gross_error_max >= 0.0 && self.gross_error_max.is_finite()) {
            return bad(format!("gross_error_max must be >= 0, got {}", self.gross_error_max));
        }
        if !self.camera_velocity.is_finite() || self.objects.iter().any(|o| !o.velocity.is_finite()) {
            return bad("non-finite twist".into());
        }
        match self.depth_model {
            DepthModel::Constant { z } if !(z > 0.0 && z.is_finite()) => {
                return bad(format!("constant depth must be positive, got {z}"))
            }
            DepthModel::Textured { z_min, z_max } if !(z_min > 0.0 && z_max >= z_min && z_max.is_finite()) => {
                return bad(format!("textured depth range [{z_min}, {z_max}] invalid"))
            }
            _ => {}
        }
        let background = self.background_depth();
        let (w, h) = self.dims();
        let mut owner: Vec<Option<usize>> = vec![None; w * h];
        for (k, obj) in self.objects.iter().enumerate() {
            for row in 0..h {
                for col in 0..w {
                    if !obj.region.contains(col, row) {
                        continue;
                    }
                    let i = row * w + col;
                    if let Some(j) = owner[i] {
                        return Err(Error::Invariant(format!(
                            "objects {j} and {k} overlap at pixel ({col}, {row})"
                        )));
                    }
                    owner[i] = Some(k);
                    let z = background.as_slice()[i] + obj.depth_offset;
                    if !(z > 0.0 && z.is_finite()) {
                        return Err(Error::Invariant(format!(
                            "object {k} has non-positive depth {z} at pixel ({col}, {row})"
                        )));
                    }
                }
            }
        }
        if background.as_slice().iter().any(|&z| !(z > 0.0 && z.is_finite())) {
            return bad("background depth must be positive everywhere".into());
        }
        Ok(())
    }

    /// Depth without objects. Textured depth draws from its own seeded stream so
    /// every slice of a sequence sees the same scene.
    pub fn background_depth(&self) -> Grid<f64> {
        let (w, h) = self.dims();
        match self.depth_model {
            DepthModel::Constant { z } => Grid::filled(w, h, z),
            DepthModel::Plane { z0, gx, gy } => Grid::from_fn(w, h, |c, r| {
                let (x, y) = self.intrinsics.normalize(c as f64, r as f64);
                z0 + gx * x + gy * y
            }),
            DepthModel::Textured { z_min, z_max } => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.rng_seed);
                rng.set_stream(0);
                Grid::from_fn(w, h, |_, _| z_min + (z_max - z_min) * rng.random::<f64>())
            }
        }
    }

    /// Depth including object offsets.
    pub fn depth(&self) -> Grid<f64> {
        let mut z = self.background_depth();
        let (w, h) = self.dims();
        for obj in &self.objects {
            for row in 0..h {
                for col in 0..w {
                    if obj.region.contains(col, row) {
                        *z.get_mut(col, row) += obj.depth_offset;
                    }
                }
            }
        }
        z
    }

    /// Smallest and largest object-field magnitude (pixels per slice) over each
    /// object's region; `None` for empty regions.
    pub fn object_residual_range(&self) -> Vec<Option<(f64, f64)>> {
        let z = self.depth();
        let (w, h) = self.dims();
        let i = &self.intrinsics;
        self.objects
            .iter()
            .map(|obj| {
                let mut range: Option<(f64, f64)> = None;
                for row in 0..h {
                    for col in 0..w {
                        if !obj.region.contains(col, row) {
                            continue;
                        }
                        let (x, y) = i.normalize(col as f64, row as f64);
                        let f = crate::geometry::rigid_flow_unchecked(x, y, *z.get(col, row), &obj.velocity);
                        let m = (f.x * i.fx * self.dt).hypot(f.y * i.fy * self.dt);
                        range = Some(range.map_or((m, m), |(lo, hi)| (lo.min(m), hi.max(m))));
                    }
                }
                range
            })
            .collect()
    }
}

/// Everything produced for one slice of a scene.
#[derive(Debug, Clone)]
pub struct GroundTruthBundle {
    pub intrinsics: CameraIntrinsics,
    pub slice_index: usize,
    /// Composed flow with noise and gross errors.
    pub flow: FlowField,
    pub clean_flow: FlowField,
    pub depth: DepthMap,
    pub rigid_flow: FlowField,
    pub imo_mask: LabelMask,
    pub events: EventSlice,
    /// Source pixel of each event, aligned with `events.events`.
    pub event_sources: Vec<(u16, u16)>,
    pub camera_velocity: CameraVelocity,
}

impl GroundTruthBundle {
    pub fn imo(&self) -> Grid<bool> {
        self.imo_mask.imo()
    }

    pub fn event_mask(&self) -> Grid<bool> {
        let (w, h) = self.intrinsics.dims();
        project_events(&self.events, w, h)
    }
}

/// Slice-independent part of a scene, rendered once per sequence.
pub struct SceneRenderer {
    spec: SceneSpec,
    depth: DepthMap,
    rigid: FlowField,
    clean: FlowField,
    imo: Grid<bool>,
}

impl SceneRenderer {
    pub fn new(spec: &SceneSpec) -> Result<Self> {
        spec.validate()?;
        let (w, h) = spec.dims();
        let depth = DepthMap::from_depths(spec.depth(), f64::INFINITY);
        let rigid = render_rigid_field(&depth, &spec.camera_velocity, &spec.intrinsics, spec.dt)?;
        let mut parts = Vec::with_capacity(spec.objects.len());
        for obj in &spec.objects {
            let field = render_rigid_field(&depth, &obj.velocity, &spec.intrinsics, spec.dt)?;
            parts.push((field, obj.region.mask(w, h)));
        }
        let clean = compose_motion_field(&rigid, &parts)?;
        let imo = Grid::from_fn(w, h, |c, r| spec.objects.iter().any(|o| o.region.contains(c, r)));
        Ok(Self {
            spec: spec.clone(),
            depth,
            rigid,
            clean,
            imo,
        })
    }

    pub fn spec(&self) -> &SceneSpec {
        &self.spec
    }

    pub fn slice(&self, k: usize) -> Result<GroundTruthBundle> {
        let spec = &self.spec;
        let (w, h) = spec.dims();
        let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
        rng.set_stream(k as u64 + 1);

        let mut flow = self.clean.clone();
        if spec.flow_noise_sigma > 0.0 {
            let normal = Normal::new(0.0, spec.flow_noise_sigma).map_err(|e| Error::Domain(e.to_string()))?;
            for i in 0..w * h {
                let (du, dv) = (normal.sample(&mut rng), normal.sample(&mut rng));
                if flow.valid.as_slice()[i] {
                    flow.u.as_mut_slice()[i] += du;
                    flow.v.as_mut_slice()[i] += dv;
                }
            }
        }
        if spec.gross_error_fraction > 0.0 {
            for i in 0..w * h {
                if !rng.random_bool(spec.gross_error_fraction) {
                    continue;
                }
                let m = spec.gross_error_max * rng.random::<f64>();
                let phi = std::f64::consts::TAU * rng.random::<f64>();
                flow.u.as_mut_slice()[i] += m * phi.cos();
                flow.v.as_mut_slice()[i] += m * phi.sin();
            }
        }

        let t_start = k as f64 * spec.dt;
        let t_end = (k + 1) as f64 * spec.dt;
        let mut tagged: Vec<(Event, (u16, u16))> = Vec::new();
        if spec.event_texture_density > 0.0 && spec.events_per_pixel > 0 {
            for row in 0..h {
                for col in 0..w {
                    if !rng.random_bool(spec.event_texture_density) {
                        continue;
                    }
                    let i = row * w + col;
                    let (u, v) = (self.clean.u.as_slice()[i], self.clean.v.as_slice()[i]);
                    for _ in 0..spec.events_per_pixel {
                        let t = loop {
                            let t = t_start + (t_end - t_start) * rng.random::<f64>();
                            if t < t_end {
                                break t;
                            }
                        };
                        let p = if rng.random_bool(0.5) { 1 } else { -1 };
                        let tau = (t - t_start) / (t_end - t_start);
                        let x = (col as f64 + u * tau).round();
                        let y = (row as f64 + v * tau).round();
                        if x >= 0.0 && y >= 0.0 && (x as usize) < w && (y as usize) < h {
                            tagged.push((Event::new(t, x as u16, y as u16, p), (col as u16, row as u16)));
                        }
                    }
                }
            }
        }
        tagged.sort_by(|a, b| a.0.t.total_cmp(&b.0.t));
        let (events, event_sources): (Vec<Event>, Vec<(u16, u16)>) = tagged.into_iter().unzip();

        Ok(GroundTruthBundle {
            intrinsics: spec.intrinsics,
            slice_index: k,
            flow,
            clean_flow: self.clean.clone(),
            depth: self.depth.clone(),
            rigid_flow: self.rigid.clone(),
            imo_mask: LabelMask::from_truth(&self.imo, &self.depth.valid, t_start)?,
            events: EventSlice::new(events, t_start, t_end)?,
            event_sources,
            camera_velocity: spec.camera_velocity,
        })
    }
}

/// First slice of the scene.
pub fn generate(spec: &SceneSpec) -> Result<GroundTruthBundle> {
    SceneRenderer::new(spec)?.slice(0)
}

/// Summary written next to a bundle on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleMeta {
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub dt: f64,
    pub slices: usize,
    pub seed: u64,
    pub objects: usize,
    pub imo_pixels: usize,
    pub events: u64,
    pub camera_velocity: Twist,
}

impl BundleMeta {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| Error::File {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(toml::from_str(&text).map_err(|e| ConfigError::Syntax(e.to_string()))?)
    }
}

/// Writes every slice of `spec` into `dir`, one slice in memory at a time.
///
/// Flow files hold `2·slices` f32 channels `(u₀, v₀, u₁, v₁, …)`, the ground
/// truth mask one u8 channel per slice, depth a single f32 channel. A
/// `pipeline.toml` carrying the scene intrinsics is written for the other
/// subcommands.
pub fn write_bundle(spec: &SceneSpec, dir: impl AsRef<Path>) -> Result<BundleMeta> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|source| Error::File {
        path: dir.to_path_buf(),
        source,
    })?;
    let renderer = SceneRenderer::new(spec)?;
    let (w, h) = spec.dims();
    let f32_header = |channels| RasterHeader {
        dtype: Dtype::F32,
        channels,
        width: w,
        height: h,
    };
    let mut flow_w = RasterWriter::create(dir.join(FLOW_FILE), f32_header(2 * spec.slices))?;
    let mut clean_w = RasterWriter::create(dir.join(CLEAN_FLOW_FILE), f32_header(2 * spec.slices))?;
    let mut rigid_w = RasterWriter::create(dir.join(RIGID_FLOW_FILE), f32_header(2 * spec.slices))?;
    let mut mask_w = RasterWriter::create(
        dir.join(GT_MASK_FILE),
        RasterHeader {
            dtype: Dtype::U8,
            channels: spec.slices,
            width: w,
            height: h,
        },
    )?;
    let mut events_w = EventWriter::create(dir.join(EVENTS_FILE))?;
    let mut imo_pixels = 0;
    for k in 0..spec.slices {
        let b = renderer.slice(k)?;
        for (writer, field) in [(&mut flow_w, &b.flow), (&mut clean_w, &b.clean_flow), (&mut rigid_w, &b.rigid_flow)] {
            for plane in flow_planes(field) {
                writer.write_f32(&plane)?;
            }
        }
        mask_w.write_u8(&b.imo_mask.to_bytes())?;
        events_w.write(&b.events.events)?;
        if k == 0 {
            let mut depth_w = RasterWriter::create(dir.join(DEPTH_FILE), f32_header(1))?;
            depth_w.write_f32(&depth_plane(&b.depth))?;
            depth_w.finish()?;
            imo_pixels = b.imo().count_true();
        }
    }
    flow_w.finish()?;
    clean_w.finish()?;
    rigid_w.finish()?;
    mask_w.finish()?;
    let events = events_w.finish()?;

    let i = &spec.intrinsics;
    let meta = BundleMeta {
        width: w,
        height: h,
        fx: i.fx,
        fy: i.fy,
        cx: i.cx,
        cy: i.cy,
        dt: spec.dt,
        slices: spec.slices,
        seed: spec.rng_seed,
        objects: spec.objects.len(),
        imo_pixels,
        events,
        camera_velocity: spec.camera_velocity.into(),
    };
    let write = |name: &str, text: String| {
        let path = dir.join(name);
        fs::write(&path, text).map_err(|source| Error::File { path, source })
    };
    write(META_FILE, toml::to_string(&meta).expect("meta serializes"))?;
    write(
        CONFIG_FILE,
        format!(
            "[intrinsics]\nfx = {}\nfy = {}\ncx = {}\ncy = {}\n\n[events]\nslice_period = {}\n",
            fmt_float(i.fx),
            fmt_float(i.fy),
            fmt_float(i.cx),
            fmt_float(i.cy),
            fmt_float(spec.dt)
        ),
    )?;
    Ok(meta)
}

/// SplitMix64 step: decorrelated per-scene seeds from one base seed.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// 99th percentile of `‖n‖` for isotropic 2D Gaussian noise of per-axis σ.
pub fn noise_p99(sigma: f64) -> f64 {
    sigma * (-2.0 * 0.01f64.ln()).sqrt()
}

/// Knobs for randomized scenes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuiteOptions {
    pub width: usize,
    pub height: usize,
    pub noise_sigma: f64,
    /// Lower bound on every object's residual, pixels per slice.
    pub min_imo_residual: f64,
    /// Object residuals are drawn in `[min, min·spread]` before depth variation.
    pub residual_spread: f64,
    /// Upper bound on max/min residual within one object. Velocity draws are
    /// retried and the tightest kept; values below 2.5 rule out textured depth.
    pub max_residual_ratio: f64,
    /// Total object area is drawn in `[min_imo_fraction, max_imo_fraction]`
    /// of the image.
    pub min_imo_fraction: f64,
    pub max_imo_fraction: f64,
    pub max_objects: usize,
    pub event_texture_density: f64,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            width: DEFAULT_WIDTH,
            height: DEFAULT_HEIGHT,
            noise_sigma: 0.0,
            min_imo_residual: 5.0,
            residual_spread: 1.3,
            max_residual_ratio: f64::INFINITY,
            min_imo_fraction: 0.04,
            max_imo_fraction: 0.4,
            max_objects: 3,
            event_texture_density: 0.2,
        }
    }
}

impl SuiteOptions {
    /// Scenes whose smallest object residual is `ratio` times the 99th
    /// percentile of the background noise residual. Objects are kept tight
    /// (one residual level, max/min within 1.25) and cover 20 to 30 % of the
    /// image, so the slice histogram is cleanly bimodal under the default
    /// filter bounds.
    pub fn labeling(noise_sigma: f64, ratio: f64) -> Self {
        Self {
            noise_sigma,
            min_imo_residual: ratio * noise_p99(noise_sigma),
            residual_spread: 1.0,
            max_residual_ratio: 1.25,
            min_imo_fraction: 0.2,
            max_imo_fraction: 0.3,
            ..Self::default()
        }
    }
}

fn place_object(rng: &mut ChaCha8Rng, w: usize, h: usize, area: f64, taken: &[(usize, usize, usize, usize)]) -> Option<Region> {
    const MARGIN: usize = 3;
    for _ in 0..200 {
        let disk = rng.random_bool(0.5);
        let (bw, bh) = if disk {
            let d = (2.0 * (area / std::f64::consts::PI).sqrt()).ceil() as usize + 1;
            (d, d)
        } else {
            let aspect = rng.random_range(0.6..1.6f64);
            let bw = (area * aspect).sqrt().round().max(2.0) as usize;
            let bh = (area / bw as f64).round().max(2.0) as usize;
            (bw, bh)
        };
        if bw + 2 >= w || bh + 2 >= h {
            continue;
        }
        let x0 = rng.random_range(1..w - bw);
        let y0 = rng.random_range(1..h - bh);
        let (x1, y1) = (x0 + bw, y0 + bh);
        let clear = taken.iter().all(|&(a0, b0, a1, b1)| {
            x1 + MARGIN <= a0 || a1 + MARGIN <= x0 || y1 + MARGIN <= b0 || b1 + MARGIN <= y0
        });
        if !clear {
            continue;
        }
        return Some(if disk {
            Region::Disk {
                cx: x0 as f64 + (bw as f64 - 1.0) / 2.0,
                cy: y0 as f64 + (bh as f64 - 1.0) / 2.0,
                radius: (area / std::f64::consts::PI).sqrt(),
            }
        } else {
            Region::Box { x0, y0, x1, y1 }
        });
    }
    None
}

fn bounds(region: &Region) -> (usize, usize, usize, usize) {
    match *region {
        Region::Box { x0, y0, x1, y1 } => (x0, y0, x1, y1),
        Region::Disk { cx, cy, radius } => (
            (cx - radius).floor().max(0.0) as usize,
            (cy - radius).floor().max(0.0) as usize,
            (cx + radius).ceil() as usize + 1,
            (cy + radius).ceil() as usize + 1,
        ),
    }
}

/// Randomized scene: random egomotion and depth model, 1 to `max_objects`
/// disjoint boxes or disks moving mostly in the image plane, each scaled so
/// its smallest residual lands in `[min, min·spread]`.
pub fn random_scene(seed: u64, opts: &SuiteOptions) -> SceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (opts.width, opts.height);
    let intrinsics = CameraIntrinsics::centered(w, h);
    let uniform3 = |rng: &mut ChaCha8Rng, s: f64| [0; 3].map(|_| rng.random_range(-s..=s));
    let camera_velocity = CameraVelocity::new(uniform3(&mut rng, 0.4), uniform3(&mut rng, 0.3));
    let models = if opts.max_residual_ratio < 2.5 { 2 } else { 3 };
    let depth_model = match rng.random_range(0..models) {
        0 => DepthModel::Constant {
            z: rng.random_range(1.2..2.2),
        },
        1 => DepthModel::Plane {
            z0: rng.random_range(1.5..2.0),
            gx: rng.random_range(-0.3..0.3),
            gy: rng.random_range(-0.3..0.3),
        },
        _ => DepthModel::Textured { z_min: 1.0, z_max: 2.5 },
    };

    let mut spec = SceneSpec {
        intrinsics,
        depth_model,
        camera_velocity,
        objects: Vec::new(),
        flow_noise_sigma: opts.noise_sigma,
        event_texture_density: opts.event_texture_density,
        rng_seed: seed,
        ..SceneSpec::default()
    };
    if opts.max_objects == 0 {
        return spec;
    }

    let n = rng.random_range(1..=opts.max_objects);
    let lo_frac = opts.min_imo_fraction.min(opts.max_imo_fraction);
    let total = rng.random_range(lo_frac..=opts.max_imo_fraction);
    let pixels = (w * h) as f64;
    let mut taken = Vec::new();
    for _ in 0..n {
        let area = (total / n as f64 * pixels).max(16.0);
        let Some(region) = place_object(&mut rng, w, h, area, &taken) else { continue };
        taken.push(bounds(&region));
        let mut best: Option<(f64, ObjectSpec)> = None;
        let tries = if opts.max_residual_ratio.is_finite() { 32 } else { 1 };
        for _ in 0..tries {
            let phi = rng.random_range(0.0..std::f64::consts::TAU);
            let obj = ObjectSpec {
                region,
                velocity: CameraVelocity::new(
                    [phi.cos(), phi.sin(), rng.random_range(-0.2..0.2)],
                    uniform3(&mut rng, 0.02),
                ),
                depth_offset: rng.random_range(-0.4..0.0),
            };
            if tries == 1 {
                best = Some((0.0, obj));
                break;
            }
            let probe = SceneSpec { objects: vec![obj], ..spec.clone() };
            let ratio = match probe.object_residual_range()[0] {
                Some((lo, hi)) if lo > 0.0 => hi / lo,
                _ => f64::INFINITY,
            };
            if best.as_ref().is_none_or(|(r, _)| ratio < *r) {
                best = Some((ratio, obj));
            }
            if ratio <= opts.max_residual_ratio {
                break;
            }
        }
        if let Some((ratio, obj)) = best {
            if ratio <= opts.max_residual_ratio {
                spec.objects.push(obj);
            }
        }
    }

    let ranges = spec.object_residual_range();
    for (obj, range) in spec.objects.iter_mut().zip(ranges) {
        let target = opts.min_imo_residual * rng.random_range(1.0..=opts.residual_spread.max(1.0));
        if let Some((lo, _)) = range.filter(|(lo, _)| *lo > 0.0) {
            let s = target / lo;
            obj.velocity = CameraVelocity::from_vector(&(obj.velocity.to_vector() * s));
        }
    }
    spec.objects.retain(|o| o.velocity.is_finite());
    spec
}

/// Scene families for the two-stage filter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterScenario {
    /// No moving objects, light noise.
    AllRigid,
    /// Gross uniform errors on most pixels.
    UniformNoise,
    /// Objects with a clearly separated residual of a few pixels.
    Bimodal,
}

pub fn filter_scene(kind: FilterScenario, seed: u64) -> SceneSpec {
    match kind {
        FilterScenario::AllRigid => random_scene(
            seed,
            &SuiteOptions {
                noise_sigma: 0.05,
                max_objects: 0,
                ..SuiteOptions::default()
            },
        ),
        FilterScenario::UniformNoise => SceneSpec {
            gross_error_fraction: 0.6,
            gross_error_max: 10.0,
            ..filter_scene(FilterScenario::AllRigid, seed)
        },
        FilterScenario::Bimodal => random_scene(
            seed,
            &SuiteOptions {
                noise_sigma: 0.05,
                min_imo_residual: 2.0,
                min_imo_fraction: 0.1,
                max_imo_fraction: 0.3,
                ..SuiteOptions::default()
            },
        ),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepStatus {
    Ok,
    /// No ground-truth object pixel received events.
    NoObject,
    Failed,
}

impl SweepStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Ok => "ok",
            Self::NoObject => "no_object",
            Self::Failed => "failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub scene: usize,
    pub seed: u64,
    pub status: SweepStatus,
    pub slice_status: Option<SliceStatus>,
    /// Sup-norm distance between estimated and true camera twist.
    pub egomotion_error: Option<f64>,
    pub inlier_count: Option<usize>,
    pub iou: Option<f64>,
    pub detected: Option<bool>,
    pub pixel_accuracy: Option<f64>,
    pub decision: Option<ThresholdDecision>,
    pub message: Option<String>,
}

impl SweepRow {
    fn failed(scene: usize, seed: u64, err: &Error) -> Self {
        Self {
            scene,
            seed,
            status: SweepStatus::Failed,
            slice_status: None,
            egomotion_error: None,
            inlier_count: None,
            iou: None,
            detected: None,
            pixel_accuracy: None,
            decision: None,
            message: Some(err.to_string()),
        }
    }
}

fn sweep_one(scene: usize, spec: &SceneSpec, cfg: &PipelineConfig) -> SweepRow {
    let bundle = match generate(spec) {
        Ok(b) => b,
        Err(e) => return SweepRow::failed(scene, spec.rng_seed, &e),
    };
    let (w, h) = spec.dims();
    let out = label_slice(&bundle.flow, &bundle.depth, &spec.intrinsics, cfg, 0, bundle.events.t_start);
    let pred = out.mask.as_ref().map_or_else(|| Grid::filled(w, h, false), LabelMask::imo);
    let truth = bundle.imo();
    let (egomotion_error, inlier_count) = match &out.estimate {
        Ok(e) => (Some(e.velocity.max_abs_diff(&spec.camera_velocity)), Some(e.inlier_count)),
        Err(_) => (None, None),
    };
    let result = SliceIoU::evaluate(bundle.events.t_start, &truth, &pred, &bundle.event_mask()).map(|iou| {
        let agree = pred.as_slice().iter().zip(truth.as_slice()).filter(|(a, b)| a == b).count();
        (iou, agree as f64 / truth.len() as f64)
    });
    let (slice_iou, accuracy) = match result {
        Ok(x) => x,
        Err(e) => return SweepRow::failed(scene, spec.rng_seed, &e),
    };
    let status = if out.status == SliceStatus::Failed {
        SweepStatus::Failed
    } else if !slice_iou.has_object {
        SweepStatus::NoObject
    } else {
        SweepStatus::Ok
    };
    let iou = slice_iou.has_object.then_some(slice_iou.iou).flatten();
    SweepRow {
        scene,
        seed: spec.rng_seed,
        status,
        slice_status: Some(out.status),
        egomotion_error,
        inlier_count,
        iou,
        detected: iou.map(|v| v >= cfg.metrics.detection_iou),
        pixel_accuracy: Some(accuracy),
        decision: out.decision,
        message: out.estimate.as_ref().err().map(ToString::to_string),
    }
}

/// Runs generate → label → evaluate on the first slice of every scene.
///
/// Scenes run in parallel; rows come back in input order. Each scene uses its
/// own intrinsics, ignoring `cfg.intrinsics`.
pub fn sweep(specs: &[SceneSpec], cfg: &PipelineConfig) -> Result<Vec<SweepRow>> {
    if specs.is_empty() {
        return Err(Error::Empty("sweep needs at least one scene"));
    }
    Ok(specs
        .par_iter()
        .enumerate()
        .map(|(i, spec)| sweep_one(i, spec, cfg))
        .collect())
}

pub const SWEEP_HEADER: &str = "scene,seed,status,slice_status,egomotion_error,inlier_count,iou,detected,pixel_accuracy,threshold,total_variance,between_class_variance,rejection_reason";

pub fn write_sweep_csv<W: std::io::Write>(mut out: W, rows: &[SweepRow]) -> std::io::Result<()> {
    let opt = |v: Option<f64>| v.map(fmt_float).unwrap_or_default();
    writeln!(out, "{SWEEP_HEADER}")?;
    for r in rows {
        let d = r.decision.as_ref();
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.scene,
            r.seed,
            r.status.as_str(),
            r.slice_status.map_or("", |s| s.as_str()),
            opt(r.egomotion_error),
            r.inlier_count.map(|c| c.to_string()).unwrap_or_default(),
            opt(r.iou),
            r.detected.map(|d| d.to_string()).unwrap_or_default(),
            opt(r.pixel_accuracy),
            opt(d.map(|d| d.threshold)),
            opt(d.map(|d| d.total_variance)),
            opt(d.map(|d| d.between_class_variance)),
            d.map_or("", |d| d.rejection_reason.as_str()),
        )?;
    }
    Ok(())
}
