//! Statistical machinery: IRLS logistic regression and the nested model
//! ladder, a two-stage approximation to random loss-streak slopes,
//! Kaplan–Meier / log-rank survival analysis, and the hypothesis tests used to
//! compare groups.

mod describe;
mod ladder;
mod logistic;
mod survival;
mod hypothesis;

pub use describe::{mean, pearson, sample_sd, sample_variance};
pub use ladder::{
    model_ladder, two_stage_fit, DroppedSession, GroupSlopes, LadderResult, LadderRow, SessionSlope, TwoStageResult, LADDER,
    MIN_OPPORTUNITIES,
};
pub use logistic::{
    fit_design, logistic_fit, observations_from_logs, FitOptions, RegressionResult, SwitchObservation, Term,
    LOSS_STREAK_CAP,
};
pub use survival::{km_estimate, logrank_test, SurvivalEstimate};
pub use hypothesis::{
    chi_square_prop, chi_square_prop_with, cohens_d, mann_whitney, mann_whitney_exact_p, mann_whitney_normal_p,
    mann_whitney_u, welch_t, TestResult, EXACT_MANN_WHITNEY_LIMIT,
};
