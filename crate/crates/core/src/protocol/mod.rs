//! End-to-end experiment drivers.
//!
//! This module wires the other layers together: offline training over
//! context windows ([`train_offline`]), return-conditioned closed-loop
//! evaluation ([`rollout_dt`]), few-shot adaptation ([`adapt_k_shot`]), the
//! behavior-cloning baseline ([`train_bc`]), and the three experiment
//! drivers ([`run_single_task`], [`run_multitask`],
//! [`run_hinf_comparison`]).
//!
//! Reproducibility contract: every stochastic choice derives from a named
//! seed substream, episode `i` of an evaluation always runs on substream
//! `seed/"episode"/i` regardless of worker count, and aggregation order is
//! fixed — so any `jobs` setting produces the identical report.

mod bc;
mod dt_policy;
mod eval;
mod experiments;
mod train;

#[cfg(test)]
mod tests;

pub use bc::{bc_from_json, bc_to_json, train_bc, BcConfig, BcModel, BcOutcome, BcPairs, BcPolicy};
pub use dt_policy::{check_dim_compat, DtPolicy, ReplayPolicy};
pub use eval::{
    field_trajectory_csv, mean_std, rollout_dt, rollout_policy, run_episode_capturing,
    EpisodeEval, EvalConfig, EvalReport, ProtocolTag,
};
pub use experiments::{
    assemble_dataset, cap_scores, default_target_return, hinf_csv, multitask_breakdown_csv,
    multitask_csv, multitask_tasks, run_hinf_comparison, run_multitask, run_single_task,
    single_task_csv, Demonstrators, GammaRow, HinfConfig, HinfReport, MultitaskCell,
    MultitaskConfig, MultitaskOutcome, MultitaskReport, MultitaskTaskRow, NamedLog,
    SingleTaskConfig, SingleTaskOutcome, SingleTaskReport, TableRow, TaskCounts, GAMMA_GRID,
};
pub use train::{
    adapt_k_shot, dataset_windows, train_offline, train_windows, AdaptConfig, TrainConfig,
    TrainOutcome,
};
