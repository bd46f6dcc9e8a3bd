//! Package usage profiling for Debian-style systems.
//!
//! Per-file reference counts exported by the kernel and periodic process
//! samples are turned into per-file usage scores, which are then summed per
//! installed package. Packages left at zero are candidates for removal when
//! slimming a general-purpose distribution down to one application.
//!
//! The pipeline is [`ingest`] → [`deps`] / [`pkgdb`] → [`scorer`] → [`report`].
//! [`collect`] captures the inputs on a live host and [`simulate`] produces
//! synthetic ones along with an independent reference scorer.

pub mod cli;
pub mod collect;
pub mod deps;
pub mod exec;
pub mod ingest;
pub mod pkgdb;
pub mod report;
pub mod scorer;
pub mod simulate;

pub use exec::Execution;
pub use ingest::{ProcessSample, RefRecord};
pub use pkgdb::{OwnershipIndex, UNOWNED};
pub use scorer::{FileScore, PackageScore, ScoreConfig, ScoreTable};
