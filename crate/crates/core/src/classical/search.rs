//! Derivative-free static output-feedback search (cross-entropy style).
//!
//! Stands in for on-policy RL demonstrators: a population of Gaussian
//! perturbations of the flat gain parameters `(F, bias)` is evaluated on a
//! common set of seeded episodes (fresh per iteration, shared across the
//! population), the elite mean becomes the next center, and the perturbation
//! scale shrinks geometrically. The incumbent center is always re-evaluated
//! as candidate 0 (elitism).
//!
//! Returns from different iterations see different episodes, so the
//! iteration winner is re-scored on a **fixed reference panel** of episodes
//! before it may displace the best-so-far gain. That keeps the best-so-far
//! comparison on one yardstick (and hence non-decreasing by construction).
//!
//! Two policies fall out of one run: the **converged** gain (best-so-far at
//! the plateau/budget) and the **medium** gain — the earliest best-so-far
//! snapshot whose reference return reaches 25% of the initial-to-plateau
//! improvement, mimicking an early-stopped training run.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::env::{EnvSpec, RewardSpec};
use crate::error::{Error, Result};
use crate::rng::{self, StreamKey};

use super::StaticGain;

/// Search hyperparameters. `Default` gives the desk-scale settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    /// Candidates per iteration (incumbent included).
    pub population: usize,
    /// Iteration budget.
    pub iterations: usize,
    /// Episodes per candidate evaluation (common seeds per iteration).
    pub episodes_per_eval: usize,
    /// Root seed for perturbations and evaluation episodes.
    pub seed: u64,
    /// Initial perturbation standard deviation.
    pub sigma0: f64,
    /// Geometric decay of the perturbation scale per iteration.
    pub sigma_decay: f64,
    /// Fraction of the population selected as elites.
    pub elite_frac: f64,
    /// Stop early after this many iterations without best-so-far improvement.
    pub plateau_patience: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            population: 24,
            iterations: 40,
            episodes_per_eval: 4,
            seed: 0,
            sigma0: 0.5,
            sigma_decay: 0.93,
            elite_frac: 0.25,
            plateau_patience: 10,
        }
    }
}

/// One row of the score trace (CSV: iteration, mean_return, best_return).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    /// Mean return over the iteration's candidates (diverged ones excluded).
    pub mean_return: f64,
    /// Best-so-far evaluated return after the iteration.
    pub best_return: f64,
}

/// Full search result.
#[derive(Debug, Clone)]
pub struct SearchOutcome {
    /// Best-so-far gain at budget/plateau ("converged" demonstrator).
    pub converged: StaticGain,
    /// Earliest snapshot reaching 25% of the improvement ("medium").
    pub medium: StaticGain,
    /// Evaluated mean return of `converged` / `medium`.
    pub converged_return: f64,
    pub medium_return: f64,
    pub trace: Vec<TraceRow>,
    pub iterations_run: usize,
}

/// Serialize the trace as the CSV external interface.
pub fn trace_to_csv(trace: &[TraceRow]) -> String {
    let mut out = String::from("iteration,mean_return,best_return\n");
    for row in trace {
        out.push_str(&format!(
            "{},{:.17e},{:.17e}\n",
            row.iteration, row.mean_return, row.best_return
        ));
    }
    out
}

fn theta_len(n_a: usize, n_o: usize) -> usize {
    n_a * n_o + n_a
}

fn gain_from_theta(theta: &[f64], n_a: usize, n_o: usize) -> StaticGain {
    let f = DMatrix::from_fn(n_a, n_o, |i, j| theta[i * n_o + j]);
    let bias = DVector::from_fn(n_a, |i, _| theta[n_a * n_o + i]);
    StaticGain { f, bias }
}

/// Mean return of the gain over `episodes_per_eval` episodes with the given
/// seeds; `None` when any episode faults (diverged candidate).
fn evaluate_candidate(
    env: &EnvSpec,
    reward_spec: &RewardSpec,
    theta: &[f64],
    episode_seeds: &[u64],
) -> Option<f64> {
    let gain = gain_from_theta(theta, env.n_a(), env.n_o());
    let mut policy = super::StaticPolicy::deterministic(gain);
    let mut total = 0.0;
    for &seed in episode_seeds {
        match crate::env::rollout_episode(env, reward_spec, &mut policy, seed) {
            Ok(record) => total += record.rewards.iter().sum::<f64>(),
            Err(Error::Diverged { .. }) => return None,
            Err(_) => return None,
        }
    }
    Some(total / episode_seeds.len() as f64)
}

/// Run the derivative-free search. Deterministic given `search.seed`.
///
/// With `iterations = 0` both gains are the zero-initialized center,
/// unevaluated (`converged_return`/`medium_return` are NaN) and the trace is
/// empty.
pub fn fit_static_gain(
    env: &EnvSpec,
    reward_spec: &RewardSpec,
    search: &SearchConfig,
) -> Result<SearchOutcome> {
    if search.population < 2 {
        return Err(Error::invalid("population must be >= 2"));
    }
    if !(search.elite_frac > 0.0 && search.elite_frac <= 1.0) {
        return Err(Error::invalid("elite_frac must lie in (0, 1]"));
    }
    let n_a = env.n_a();
    let n_o = env.n_o();
    let dim = theta_len(n_a, n_o);
    let mut center = vec![0.0f64; dim];

    if search.iterations == 0 {
        let gain = gain_from_theta(&center, n_a, n_o);
        return Ok(SearchOutcome {
            converged: gain.clone(),
            medium: gain,
            converged_return: f64::NAN,
            medium_return: f64::NAN,
            trace: Vec::new(),
            iterations_run: 0,
        });
    }

    let mut sigma = search.sigma0;
    let n_elite = ((search.population as f64 * search.elite_frac).ceil() as usize)
        .clamp(1, search.population);

    // Fixed reference panel: best-so-far candidates from every iteration are
    // compared on these episodes, never on the per-iteration ones.
    let reference_seeds: Vec<u64> = (0..search.episodes_per_eval)
        .map(|e| {
            StreamKey::new(search.seed)
                .with("search-ref")
                .with_index(e as u64)
                .seed()
        })
        .collect();

    let mut best_theta = center.clone();
    let mut best_return = f64::NEG_INFINITY;
    // Best-so-far snapshot after each iteration, for the medium pick.
    let mut snapshots: Vec<(Vec<f64>, f64)> = Vec::new();
    let mut trace = Vec::new();
    let mut since_improvement = 0usize;
    let mut iterations_run = 0usize;

    for iter in 0..search.iterations {
        iterations_run = iter + 1;
        // Common random numbers: every candidate sees the same episodes.
        let episode_seeds: Vec<u64> = (0..search.episodes_per_eval)
            .map(|e| {
                StreamKey::new(search.seed)
                    .with("search-ep")
                    .with_index(iter as u64)
                    .with_index(e as u64)
                    .seed()
            })
            .collect();
        let mut perturb_rng = StreamKey::new(search.seed)
            .with("search-sample")
            .with_index(iter as u64)
            .rng();

        // Candidate 0 is the incumbent center (elitism).
        let mut candidates: Vec<Vec<f64>> = Vec::with_capacity(search.population);
        candidates.push(center.clone());
        for _ in 1..search.population {
            let theta: Vec<f64> = center
                .iter()
                .map(|&c| c + rng::gaussian(&mut perturb_rng, sigma))
                .collect();
            candidates.push(theta);
        }

        let scores: Vec<Option<f64>> = candidates
            .iter()
            .map(|theta| evaluate_candidate(env, reward_spec, theta, &episode_seeds))
            .collect();

        let valid: Vec<(usize, f64)> = scores
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.map(|v| (i, v)))
            .collect();
        if valid.is_empty() {
            return Err(Error::Protocol(format!(
                "static-gain search: all {} candidates diverged at iteration {iter}",
                search.population
            )));
        }

        // Rank descending by return; ties break toward the lower index so the
        // ordering (and thus the whole search) is deterministic.
        let mut ranked = valid.clone();
        ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        let elites: Vec<&Vec<f64>> = ranked
            .iter()
            .take(n_elite)
            .map(|&(i, _)| &candidates[i])
            .collect();

        // Re-score the iteration winner on the reference panel; only a
        // reference improvement displaces the best-so-far gain.
        let mut improved = false;
        let winner = &candidates[ranked[0].0];
        if let Some(ref_return) = evaluate_candidate(env, reward_spec, winner, &reference_seeds) {
            if ref_return > best_return {
                best_return = ref_return;
                best_theta = winner.clone();
                improved = true;
            }
        }

        // Elite mean becomes the next center.
        for d in 0..dim {
            center[d] = elites.iter().map(|t| t[d]).sum::<f64>() / elites.len() as f64;
        }
        sigma *= search.sigma_decay;

        let mean_return = valid.iter().map(|&(_, v)| v).sum::<f64>() / valid.len() as f64;
        trace.push(TraceRow {
            iteration: iter,
            mean_return,
            best_return,
        });
        snapshots.push((best_theta.clone(), best_return));

        if improved {
            since_improvement = 0;
        } else {
            since_improvement += 1;
            if since_improvement >= search.plateau_patience {
                break;
            }
        }
    }

    // Medium pick: earliest snapshot reaching 25% of the improvement from
    // the iteration-0 best to the final best.
    let j0 = snapshots[0].1;
    let j_final = best_return;
    let threshold = j0 + 0.25 * (j_final - j0);
    let medium_snapshot = snapshots
        .iter()
        .find(|(_, j)| *j >= threshold)
        .unwrap_or(&snapshots[0]);

    Ok(SearchOutcome {
        converged: gain_from_theta(&best_theta, n_a, n_o),
        medium: gain_from_theta(&medium_snapshot.0, n_a, n_o),
        converged_return: best_return,
        medium_return: medium_snapshot.1,
        trace,
        iterations_run,
    })
}
