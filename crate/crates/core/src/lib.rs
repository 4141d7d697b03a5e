//! Object-based metric-semantic mapping over floor plans and Monte Carlo
//! localization against the resulting maps.

pub mod annotator;
pub mod assignment;
pub mod evalkit;
pub mod geometry;
pub mod io;
pub mod localizer;
pub mod mapper;
pub mod noisemodel;
pub mod simulator;
pub mod worldmodel;
