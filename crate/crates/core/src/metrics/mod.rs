//! Per-trial features and the behavioural indices computed from them.
//!
//! Corpus-level indices are computed over main-phase trials only; features
//! are derived over the whole session so that streaks and confidence carry
//! across the practice/main boundary.

mod bootstrap;
mod features;
#[cfg(test)]
pub(crate) use features::fixtures;
mod indices;

pub use bootstrap::{bootstrap_ci, BootstrapCi};
pub use features::{derive_features, DerivedFeatures, TrialFeatures};
pub use indices::{
    baseline_summary, freeze_index, freeze_index_with, hazard_curve, lockin_episodes, persistence_lengths,
    switch_curve, BaselineSummary, CurveCell, FreezeCount, FreezeDenominator, LockinSummary, PeakMode,
    PersistenceEpisode,
};

/// Default largest loss streak reported by the switch and hazard curves.
pub const DEFAULT_K_MAX: u32 = 8;
