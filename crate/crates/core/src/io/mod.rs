//! File formats and configuration loading.

pub mod config;
pub mod events;
pub mod fields;
pub mod raster;

pub use config::{load_config, PipelineConfig};
pub use events::{read_events, write_events, EventReader, EventWriter};
pub use raster::{read_raster, write_raster, Dtype, Raster, RasterData, RasterReader, RasterWriter};
