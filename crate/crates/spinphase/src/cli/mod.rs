//! The command surface: scenario files, deterministic reports, and the
//! runner that turns one into the other.
//!
//! A scenario is a versioned TOML document naming a spin size, a field
//! program over [0, tau], one analysis, optional tolerance overrides and
//! output paths. Running it produces a JSON report wrapping the resolved
//! scenario, the result records, and the diagnostics (grids, seed,
//! tolerances, warnings) that make the numbers reproducible. All floats are
//! serialized with 17 significant digits so repeated runs are byte
//! identical, and files are written atomically.

pub mod report;
pub mod runner;
pub mod scenario;
