//! Dynamic weighted set cover with hierarchical leveling.
//!
//! The engine maintains a cover of the live universe under element insertions
//! and deletions. Sets live on a geometric level hierarchy; element weights
//! decay geometrically with their intrinsic level, and the tight sets (those
//! whose composite weight reaches `cost/(1+eps)`) form the maintained cover.
//! Deletions park their weight as per-set dead weight, and once the total
//! dead weight outgrows an `eps` fraction of the cover, a prefix of the
//! hierarchy is rebuilt.
//!
//! Quick start:
//!
//! ```
//! use setcover::{Config, Engine, Update};
//!
//! let cfg = Config {
//!     epsilon: 0.2,
//!     cost_ratio_c: 2,
//!     max_frequency_f: 2,
//!     capacity_n: 16,
//!     deterministic: true,
//!     rng_seed: 0,
//! };
//! let mut engine = Engine::new(cfg, &[1.0, 0.5]).unwrap();
//! engine
//!     .apply_update(&Update::Insert { elem: 1, members: vec![0, 1] })
//!     .unwrap();
//! assert!(!engine.query_cover().is_empty());
//! ```
//!
//! See the `examples/` directory for runnable walkthroughs of each major
//! capability, and the `dsc` binary for trace execution, checking,
//! workload generation, and benchmarking.

mod config;
mod engine;
mod levels;
mod model;

pub mod bench;
pub mod report;
pub mod trace;
pub mod verify;
pub mod workload;

pub use config::{ceil_log_scan, Config, ConfigError, EtaEntry, PowerTable, RandSchedule};
pub use engine::{ElemView, Engine, SetView};
pub use model::{CoverDelta, ElemId, EngineStats, SetId, TimingStats, Update, UpdateError};
