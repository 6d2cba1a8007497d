//! Weakly-private keyword retrieval over a hyper-rectangle database.

pub mod agreement;
pub mod db;
mod error;
pub mod event;
pub mod leakage;
pub mod pir;

pub use agreement::{
    answer_circuit, context_generation, params_for_epsilon, parameter_table, profile_generation, Context, LoadedProfile,
    Profile, ProfileCache, ProfileId,
};
pub use db::{
    estimate_worst_collisions, expected_max_load, map_keyword, CellAddress, DbSnapshot, Geometry, HyperDb, ResizePolicy,
    Retention, TickReport,
};
pub use error::{CoreError, Result};
pub use event::{EventKind, IcfEvent, KeywordType};
pub use leakage::{empirical_anonymity, leakage_report, LeakageReport};
pub use pir::{answer, extract, query, AnswerOptions, AnswerStats, WpirAnswer, WpirQuery};
pub use sparsewpir_he as he;
