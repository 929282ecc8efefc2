use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use rayon::prelude::*;

use motionseg::egomotion::{
    estimate_egomotion, write_velocity_trace_row, VelocityTraceRow, VELOCITY_TRACE_HEADER,
};
use motionseg::error::Error;
use motionseg::events::{build_volume, window_index, EventSlice, Slicer};
use motionseg::geometry::{CameraIntrinsics, DepthMap, FlowField};
use motionseg::grid::Grid;
use motionseg::io::config::{PipelineConfig, ENV_PREFIX};
use motionseg::io::fields::{depth_from_plane, flow_from_planes};
use motionseg::io::raster::{Dtype, RasterHeader, RasterReader, RasterWriter};
use motionseg::io::{load_config, EventReader};
use motionseg::labeler::Label;
use motionseg::metrics::{IoUReport, SliceIoU};
use motionseg::pipeline::label_slice;
use motionseg::simulator::{write_bundle, SceneSpec};

const ENV_HELP: &str = "\
Configuration keys can be overridden from the environment with
MOTIONSEG_<SECTION>__<KEY>=<value>, e.g. MOTIONSEG_RANSAC__MAX_ITERATIONS=500.
Log verbosity follows RUST_LOG (default: info).

Exit codes: 0 success, 1 internal or numeric failure, 2 usage or parse failure.";

#[derive(Parser)]
#[command(name = "motionseg", version, about = "Geometric IMO pseudo-labels from flow and depth", after_help = ENV_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene and write its ground truth bundle.
    Simulate {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed in the scene file.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Estimate camera velocity per slice and write a velocity trace CSV.
    Egomotion {
        #[command(flatten)]
        input: FlowInput,
        #[arg(long)]
        out: PathBuf,
    },
    /// Produce IMO pseudo-label masks with per-slice decision metadata.
    Label {
        #[command(flatten)]
        input: FlowInput,
        #[arg(long)]
        out_mask: PathBuf,
        #[arg(long)]
        out_meta: PathBuf,
    },
    /// Build event volumes, one block of bins per slice.
    Volume {
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Sensor width; inferred from the events when omitted.
        #[arg(long)]
        width: Option<usize>,
        /// Sensor height; inferred from the events when omitted.
        #[arg(long)]
        height: Option<usize>,
    },
    /// Event-masked IoU of predicted against ground-truth masks.
    Eval {
        #[arg(long)]
        gt_mask: PathBuf,
        #[arg(long)]
        pred_mask: PathBuf,
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct FlowInput {
    /// f32 raster with channels (u₀, v₀, u₁, v₁, …) in pixels per slice.
    #[arg(long)]
    flow: PathBuf,
    /// f32 raster with one channel, or one channel per slice.
    #[arg(long)]
    depth: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

/// Failure with its exit code.
struct Failure {
    code: u8,
    error: Error,
}

impl From<Error> for Failure {
    fn from(error: Error) -> Self {
        let code = match &error {
            Error::File { .. } | Error::Format(_) | Error::Config(_) | Error::Shape { .. } => 2,
            _ => 1,
        };
        Self { code, error }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self { code: 1, error: e.into() }
    }
}

fn usage(error: Error) -> Failure {
    Failure { code: 2, error }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn config(path: Option<&Path>) -> CliResult<PipelineConfig> {
    let mut cfg = match path {
        Some(p) => load_config(p).map_err(usage)?,
        None => PipelineConfig::default(),
    };
    cfg.apply_env(std::env::vars().filter(|(k, _)| k.starts_with(ENV_PREFIX)))
        .map_err(|e| usage(e.into()))?;
    Ok(cfg)
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    let file = File::create(path).map_err(|source| {
        usage(Error::File {
            path: path.to_path_buf(),
            source,
        })
    })?;
    Ok(BufWriter::new(file))
}

fn worker_pool(cfg: &PipelineConfig) -> CliResult<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Failure {
            code: 1,
            error: Error::Domain(e.to_string()),
        })
}

/// Flow and depth rasters read slice by slice.
struct SliceSource {
    flow: RasterReader,
    depth: RasterReader,
    per_slice_depth: bool,
    slices: usize,
    intr: CameraIntrinsics,
    dt: f64,
    z_max: f64,
}

impl SliceSource {
    fn open(input: &FlowInput, cfg: &PipelineConfig) -> CliResult<Self> {
        let flow = RasterReader::open(&input.flow)?;
        let depth = RasterReader::open(&input.depth)?;
        let (fh, dh) = (*flow.header(), *depth.header());
        for (h, what) in [(fh, "flow"), (dh, "depth")] {
            if h.dtype != Dtype::F32 {
                return Err(usage(Error::Domain(format!(
                    "{what} raster must be f32, found {}",
                    h.dtype.name()
                ))));
            }
        }
        if fh.channels % 2 != 0 {
            return Err(usage(Error::Domain(format!(
                "flow raster needs an even channel count, found {}",
                fh.channels
            ))));
        }
        if (fh.width, fh.height) != (dh.width, dh.height) {
            return Err(usage(Error::Shape {
                expected: (fh.width, fh.height),
                found: (dh.width, dh.height),
            }));
        }
        let slices = fh.channels / 2;
        if dh.channels != 1 && dh.channels != slices {
            return Err(usage(Error::Domain(format!(
                "depth raster has {} channels; expected 1 or {slices}",
                dh.channels
            ))));
        }
        let intr = cfg.intrinsics.resolve(fh.width, fh.height).map_err(usage)?;
        Ok(Self {
            flow,
            depth,
            per_slice_depth: dh.channels > 1,
            slices,
            intr,
            dt: cfg.events.slice_period,
            z_max: cfg.z_max,
        })
    }

    fn read(&mut self, k: usize, cached_depth: &mut Option<DepthMap>) -> CliResult<(FlowField, DepthMap)> {
        let u = self.flow.read_f32(2 * k)?;
        let v = self.flow.read_f32(2 * k + 1)?;
        let flow = flow_from_planes(&u, &v, self.dt)?;
        let depth = if self.per_slice_depth {
            depth_from_plane(&self.depth.read_f32(k)?, self.z_max)
        } else {
            if cached_depth.is_none() {
                *cached_depth = Some(depth_from_plane(&self.depth.read_f32(0)?, self.z_max));
            }
            cached_depth.clone().expect("depth cached")
        };
        Ok((flow, depth))
    }
}

/// Runs `work` over every slice in bounded chunks on the worker pool and hands
/// results to `sink` in slice order.
fn for_each_slice<T: Send>(
    source: &mut SliceSource,
    cfg: &PipelineConfig,
    work: impl Fn(usize, f64, &FlowField, &DepthMap, &CameraIntrinsics) -> T + Sync,
    mut sink: impl FnMut(usize, f64, T, f64) -> CliResult<()>,
) -> CliResult<()> {
    let pool = worker_pool(cfg)?;
    let chunk = 2 * pool.current_num_threads().max(1);
    let mut depth_cache = None;
    let started = Instant::now();
    for start in (0..source.slices).step_by(chunk) {
        let end = (start + chunk).min(source.slices);
        let mut inputs = Vec::with_capacity(end - start);
        for k in start..end {
            inputs.push((k, source.read(k, &mut depth_cache)?));
        }
        let intr = source.intr;
        let dt = source.dt;
        let results: Vec<(T, f64)> = pool.install(|| {
            inputs
                .par_iter()
                .map(|(k, (flow, depth))| {
                    let t0 = Instant::now();
                    let out = work(*k, *k as f64 * dt, flow, depth, &intr);
                    (out, t0.elapsed().as_secs_f64())
                })
                .collect()
        });
        for ((k, _), (out, secs)) in inputs.iter().zip(results) {
            sink(*k, *k as f64 * dt, out, secs)?;
        }
    }
    let total = started.elapsed().as_secs_f64();
    info!(
        target: "motionseg::timing",
        "done slices={} wall_s={total:.6} slices_per_s={:.3}",
        source.slices,
        if total > 0.0 { source.slices as f64 / total } else { f64::INFINITY }
    );
    Ok(())
}

fn run_simulate(spec: &Path, out: &Path, seed: Option<u64>) -> CliResult<()> {
    let mut spec = SceneSpec::load(spec).map_err(usage)?;
    if let Some(s) = seed {
        spec.rng_seed = s;
    }
    let meta = write_bundle(&spec, out)?;
    info!(
        "simulate out={} slices={} imo_pixels={} events={}",
        out.display(),
        meta.slices,
        meta.imo_pixels,
        meta.events
    );
    Ok(())
}

fn run_egomotion(input: &FlowInput, out: &Path) -> CliResult<()> {
    let cfg = config(input.config.as_deref())?;
    let mut source = SliceSource::open(input, &cfg)?;
    let mut csv = create(out)?;
    writeln!(csv, "{VELOCITY_TRACE_HEADER}")?;
    for_each_slice(
        &mut source,
        &cfg,
        |_, _, flow, depth, intr| {
            let mut depth = depth.clone();
            depth.clip(cfg.z_max);
            estimate_egomotion(flow, &depth, intr, &cfg.ransac)
        },
        |k, t, est, secs| {
            match &est {
                Ok(e) => info!(
                    target: "motionseg::slice",
                    "slice={k} t={t:.6} status=ok inlier_fraction={:.4} iterations={} elapsed_ms={:.3}",
                    e.inlier_fraction(),
                    e.iterations_used,
                    secs * 1e3
                ),
                Err(e) => warn!(
                    target: "motionseg::slice",
                    "slice={k} t={t:.6} status=failed elapsed_ms={:.3} reason=\"{e}\"",
                    secs * 1e3
                ),
            }
            write_velocity_trace_row(&mut csv, &VelocityTraceRow::from_result(k, t, &est))?;
            Ok(())
        },
    )?;
    csv.flush()?;
    Ok(())
}

fn run_label(input: &FlowInput, out_mask: &Path, out_meta: &Path) -> CliResult<()> {
    let cfg = config(input.config.as_deref())?;
    let mut source = SliceSource::open(input, &cfg)?;
    let (w, h) = source.intr.dims();
    let mut masks = RasterWriter::create(
        out_mask,
        RasterHeader {
            dtype: Dtype::U8,
            channels: source.slices,
            width: w,
            height: h,
        },
    )
    .map_err(usage)?;
    let mut meta = create(out_meta)?;
    writeln!(meta, "slices = {}", source.slices)?;
    writeln!(meta, "width = {w}")?;
    writeln!(meta, "height = {h}")?;
    for_each_slice(
        &mut source,
        &cfg,
        |k, t, flow, depth, intr| label_slice(flow, depth, intr, &cfg, k, t),
        |k, t, slice, secs| {
            let d = slice.decision.as_ref();
            info!(
                target: "motionseg::slice",
                "slice={k} t={t:.6} status={} threshold={} reason={} elapsed_ms={:.3}",
                slice.status.as_str(),
                d.map_or("-".into(), |d| format!("{:.4}", d.threshold)),
                d.map_or("-", |d| d.rejection_reason.as_str()),
                secs * 1e3
            );
            masks.write_u8(&slice.mask_bytes(w, h))?;
            writeln!(meta)?;
            slice.write_meta(&mut meta)?;
            Ok(())
        },
    )?;
    masks.finish()?;
    meta.flush()?;
    Ok(())
}

fn run_volume(events: &Path, config_path: Option<&Path>, out: &Path, width: Option<usize>, height: Option<usize>) -> CliResult<()> {
    let cfg = config(config_path)?;
    let period = cfg.events.slice_period;
    let bins = cfg.events.bins;

    // First pass: sensor extent and slice count, validating the stream.
    let mut slices = 0usize;
    let (mut max_x, mut max_y) = (0usize, 0usize);
    let mut any = false;
    for slice in Slicer::new(EventReader::open(events).map_err(usage)?, period)? {
        let slice = slice.map_err(usage)?;
        for e in &slice.events {
            max_x = max_x.max(e.x as usize);
            max_y = max_y.max(e.y as usize);
            any = true;
        }
        slices += 1;
    }
    let w = width.unwrap_or(if any { max_x + 1 } else { 0 });
    let h = height.unwrap_or(if any { max_y + 1 } else { 0 });

    let mut writer = RasterWriter::create(
        out,
        RasterHeader {
            dtype: Dtype::F32,
            channels: bins * slices.max(1),
            width: w,
            height: h,
        },
    )
    .map_err(usage)?;
    let write_volume = |writer: &mut RasterWriter, slice: &EventSlice| -> CliResult<()> {
        let vol = build_volume(slice, bins, w, h).map_err(usage)?;
        let mass: f64 = slice.events.iter().map(|e| e.p as f64).sum();
        let total = vol.total();
        let ok = (total - mass).abs() <= 1e-9;
        info!(
            target: "motionseg::slice",
            "volume t_start={:.6} events={} polarity_sum={mass} volume_sum={total} mass_conserved={ok}",
            slice.t_start,
            slice.events.len()
        );
        if !ok {
            return Err(Failure {
                code: 1,
                error: Error::Invariant(format!("volume mass {total} differs from polarity sum {mass}")),
            });
        }
        let plane = w * h;
        for b in 0..bins {
            let data = vol.data[b * plane..(b + 1) * plane].iter().map(|&x| x as f32).collect();
            writer.write_f32(&Grid::from_vec(w, h, data)?)?;
        }
        Ok(())
    };
    if slices == 0 {
        let empty = EventSlice::new(Vec::new(), 0.0, period)?;
        write_volume(&mut writer, &empty)?;
    }
    for slice in Slicer::new(EventReader::open(events).map_err(usage)?, period)? {
        write_volume(&mut writer, &slice.map_err(usage)?)?;
    }
    writer.finish()?;
    println!("volume slices={} bins={bins} width={w} height={h}", slices.max(1));
    Ok(())
}

fn run_eval(gt: &Path, pred: &Path, events: &Path, config_path: Option<&Path>, out: &Path) -> CliResult<()> {
    let cfg = config(config_path)?;
    let mut gt = RasterReader::open(gt)?;
    let mut pred = RasterReader::open(pred)?;
    let (gh, ph) = (*gt.header(), *pred.header());
    if (gh.width, gh.height, gh.channels) != (ph.width, ph.height, ph.channels) {
        return Err(usage(Error::Domain(format!(
            "mask rasters differ: {}x{}x{} vs {}x{}x{}",
            gh.width, gh.height, gh.channels, ph.width, ph.height, ph.channels
        ))));
    }
    let (w, h, slices) = (gh.width, gh.height, gh.channels);
    let period = cfg.events.slice_period;

    // Event pixels per slice; slice k covers [k·period, (k+1)·period).
    let mut hits = vec![Grid::filled(w, h, false); slices];
    let mut stray = 0usize;
    for e in EventReader::open(events).map_err(usage)? {
        let e = e.map_err(usage)?;
        let k = window_index(e.t, period);
        let (x, y) = (e.x as usize, e.y as usize);
        if k < 0 || k as usize >= slices || x >= w || y >= h {
            stray += 1;
            continue;
        }
        *hits[k as usize].get_mut(x, y) = true;
    }
    if stray > 0 {
        warn!("{stray} events fall outside the mask slices or sensor and were ignored");
    }

    let imo = |g: Grid<u8>| g.map(|&b| b == Label::Imo as u8);
    let mut per_slice = Vec::with_capacity(slices);
    for (k, hit) in hits.iter().enumerate() {
        let s = SliceIoU::evaluate(k as f64 * period, &imo(gt.read_u8(k)?), &imo(pred.read_u8(k)?), hit)?;
        info!(
            target: "motionseg::slice",
            "slice={k} iou={} has_object={}",
            s.iou.map_or("n/a".into(), |v| format!("{v:.4}")),
            s.has_object
        );
        per_slice.push(s);
    }
    let report = IoUReport::new(per_slice, cfg.metrics.detection_iou)?;
    let mut csv = create(out)?;
    report.write_csv(&mut csv)?;
    csv.flush()?;
    report.write_summary(std::io::stdout().lock())?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp_micros()
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match &cli.command {
        Command::Simulate { spec, out, seed } => run_simulate(spec, out, *seed),
        Command::Egomotion { input, out } => run_egomotion(input, out),
        Command::Label {
            input,
            out_mask,
            out_meta,
        } => run_label(input, out_mask, out_meta),
        Command::Volume {
            events,
            config,
            out,
            width,
            height,
        } => run_volume(events, config.as_deref(), out, *width, *height),
        Command::Eval {
            gt_mask,
            pred_mask,
            events,
            config,
            out,
        } => run_eval(gt_mask, pred_mask, events, config.as_deref(), out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.error);
            ExitCode::from(f.code)
        }
    }
}
