//! Measurement harnesses behind the `bench-*` commands: learned versus
//! hand-set ray aggregation, tiled versus naive rasterization, and
//! coarse-to-fine versus direct dense attention.

pub mod agg;
pub mod alloc;
pub mod c2f;
pub mod raster;

pub use agg::{march, run_agg_bench, AggBenchReport, AggBenchSpec, Bump, RayField, Strategy, StrategyResult};
pub use alloc::{counting_installed, measure_peak, CountingAlloc};
pub use c2f::{run_c2f_bench, C2fReport, PathCost};
pub use raster::{random_cloud, raster_case, run_raster_bench, RasterBenchReport, RasterCase};
