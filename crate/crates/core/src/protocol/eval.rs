//! Return-conditioned evaluation rollouts and report aggregation.

use serde::{Deserialize, Serialize};

use crate::data::{normalize_score, Anchors, Provenance, TaskSpec};
use crate::env::{Environment, EpisodeRecord, Policy};
use crate::error::{Error, Result};
use crate::model::Checkpoint;
use crate::rng::StreamKey;

use super::dt_policy::{check_dim_compat, DtPolicy};

/// How an evaluation is run: episode count, the return prompt, the seed for
/// the episode streams, and an optional normalized-score cap applied per
/// episode before averaging.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub episodes: usize,
    pub target_return: f64,
    pub seed: u64,
    pub score_cap: Option<(f64, f64)>,
}

impl EvalConfig {
    pub fn new(episodes: usize, target_return: f64, seed: u64) -> Self {
        EvalConfig {
            episodes,
            target_return,
            seed,
            score_cap: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 {
            return Err(Error::invalid("evaluation needs at least one episode"));
        }
        if !self.target_return.is_finite() {
            return Err(Error::invalid("target return must be finite"));
        }
        if let Some((lo, hi)) = self.score_cap {
            if !(lo < hi) {
                return Err(Error::invalid(format!(
                    "score cap low {lo} must be below high {hi}"
                )));
            }
        }
        Ok(())
    }
}

/// Which protocol produced a report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolTag {
    Single,
    ZeroShot,
    KShot(usize),
    Hinf,
    Bc,
}

/// One evaluated episode.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeEval {
    pub episode: usize,
    pub seed: u64,
    pub raw_return: f64,
    /// Normalized score (capped if the config caps).
    pub normalized: f64,
    pub steps: usize,
    pub diverged: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub fault: Option<String>,
    /// Prompt sequence R̂_0..R̂_{T−1} for return-conditioned policies.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub prompts: Option<Vec<f64>>,
}

/// Per-task evaluation report: raw per-episode data plus aggregates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub task_id: String,
    pub provenance: Provenance,
    pub protocol: ProtocolTag,
    pub target_return: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub score_cap: Option<(f64, f64)>,
    pub anchors: Anchors,
    pub mean_return: f64,
    pub std_return: f64,
    pub mean_normalized: f64,
    pub std_normalized: f64,
    pub n_diverged: usize,
    pub episodes: Vec<EpisodeEval>,
}

impl EvalReport {
    fn from_episodes(
        task: &TaskSpec,
        protocol: ProtocolTag,
        eval: &EvalConfig,
        anchors: &Anchors,
        episodes: Vec<EpisodeEval>,
    ) -> Self {
        let raws: Vec<f64> = episodes.iter().map(|e| e.raw_return).collect();
        let norms: Vec<f64> = episodes.iter().map(|e| e.normalized).collect();
        let (mean_return, std_return) = mean_std(&raws);
        let (mean_normalized, std_normalized) = mean_std(&norms);
        EvalReport {
            task_id: task.task_id.clone(),
            provenance: task.provenance.clone(),
            protocol,
            target_return: eval.target_return,
            score_cap: eval.score_cap,
            anchors: anchors.clone(),
            mean_return,
            std_return,
            mean_normalized,
            std_normalized,
            n_diverged: episodes.iter().filter(|e| e.diverged).count(),
            episodes,
        }
    }
}

impl EvalReport {
    /// Re-score every episode under different anchors (raw returns are
    /// anchor-independent) and recompute the aggregates.
    pub fn with_anchors(mut self, anchors: &Anchors) -> EvalReport {
        for e in &mut self.episodes {
            e.normalized = cap_score(normalize_score(e.raw_return, anchors), self.score_cap);
        }
        let norms: Vec<f64> = self.episodes.iter().map(|e| e.normalized).collect();
        (self.mean_normalized, self.std_normalized) = mean_std(&norms);
        self.anchors = anchors.clone();
        self
    }
}

/// Mean and sample standard deviation (0 for a single observation).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Run one closed-loop episode, capturing environment faults (divergence or
/// a non-finite action) as a flagged partial record instead of an error.
pub fn run_episode_capturing(
    task: &TaskSpec,
    policy: &mut dyn Policy,
    seed: u64,
) -> Result<(EpisodeRecord, Option<String>)> {
    let (mut env, o0) = Environment::reset(&task.env, &task.reward, seed)?;
    policy.reset_episode(seed);
    let mut record = EpisodeRecord {
        obs: Vec::new(),
        actions: Vec::new(),
        rewards: Vec::new(),
    };
    let mut obs = o0;
    loop {
        let action = policy.act(&obs);
        match env.step(&action) {
            Ok(res) => {
                policy.observe_reward(res.reward);
                record.obs.push(obs);
                record.actions.push(action);
                record.rewards.push(res.reward);
                if res.done {
                    return Ok((record, None));
                }
                obs = res.obs;
            }
            Err(e @ (Error::Diverged { .. } | Error::NonFinite(_))) => {
                return Ok((record, Some(e.to_string())));
            }
            Err(e) => return Err(e),
        }
    }
}

fn episode_seed(eval_seed: u64, index: usize) -> u64 {
    StreamKey::new(eval_seed)
        .with("episode")
        .with_index(index as u64)
        .seed()
}

fn cap_score(x: f64, cap: Option<(f64, f64)>) -> f64 {
    match cap {
        Some((lo, hi)) => x.clamp(lo, hi),
        None => x,
    }
}

/// The shared evaluation engine. Episodes are independent: episode `i`
/// always runs on the seed substream `eval.seed / "episode" / i` and results
/// aggregate in index order, so the report is identical for any worker
/// count.
fn eval_engine<P, F, G>(
    task: &TaskSpec,
    eval: &EvalConfig,
    anchors: &Anchors,
    tag: ProtocolTag,
    jobs: usize,
    make_policy: F,
    prompts_of: G,
) -> Result<EvalReport>
where
    P: Policy,
    F: Fn() -> Result<P> + Sync,
    G: Fn(&P) -> Option<Vec<f64>> + Sync,
{
    eval.validate()?;
    let n = eval.episodes;
    let jobs = jobs.max(1).min(n);

    let run_one = |policy: &mut P, i: usize| -> Result<EpisodeEval> {
        let seed = episode_seed(eval.seed, i);
        let (record, fault) = run_episode_capturing(task, policy, seed)?;
        let raw = record.episode_return();
        Ok(EpisodeEval {
            episode: i,
            seed,
            raw_return: raw,
            normalized: cap_score(normalize_score(raw, anchors), eval.score_cap),
            steps: record.rewards.len(),
            diverged: fault.is_some(),
            fault,
            prompts: prompts_of(policy),
        })
    };

    let mut episodes: Vec<Option<EpisodeEval>> = vec![None; n];
    if jobs == 1 {
        let mut policy = make_policy()?;
        for (i, slot) in episodes.iter_mut().enumerate() {
            *slot = Some(run_one(&mut policy, i)?);
        }
    } else {
        let results: Vec<Vec<(usize, Result<EpisodeEval>)>> = std::thread::scope(|scope| {
            let handles: Vec<_> = (0..jobs)
                .map(|w| {
                    let run_one = &run_one;
                    let make_policy = &make_policy;
                    scope.spawn(move || {
                        let mut out = Vec::new();
                        let mut policy = match make_policy() {
                            Ok(p) => p,
                            Err(e) => {
                                out.push((w, Err(e)));
                                return out;
                            }
                        };
                        let mut i = w;
                        while i < n {
                            out.push((i, run_one(&mut policy, i)));
                            i += jobs;
                        }
                        out
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("evaluation worker panicked"))
                .collect()
        });
        let mut flat: Vec<(usize, Result<EpisodeEval>)> =
            results.into_iter().flatten().collect();
        flat.sort_by_key(|(i, _)| *i);
        for (i, r) in flat {
            episodes[i] = Some(r?);
        }
    }

    let episodes: Vec<EpisodeEval> = episodes
        .into_iter()
        .map(|e| e.expect("every episode index filled"))
        .collect();
    Ok(EvalReport::from_episodes(task, tag, eval, anchors, episodes))
}

/// Evaluate a checkpoint with return-conditioned rollouts.
///
/// Per episode: the prompt starts at `eval.target_return` and each realized
/// reward decrements it; the policy sees the K-step window of (prompts,
/// observations, past actions). Environment faults score the episode at the
/// accumulated return up to the fault and flag it in the report.
pub fn rollout_dt(
    ckpt: &Checkpoint,
    task: &TaskSpec,
    eval: &EvalConfig,
    anchors: &Anchors,
    tag: ProtocolTag,
    jobs: usize,
) -> Result<EvalReport> {
    check_dim_compat(&ckpt.config, task)?;
    eval_engine(
        task,
        eval,
        anchors,
        tag,
        jobs,
        || DtPolicy::new(ckpt, eval.target_return),
        |p: &DtPolicy| Some(p.prompts().to_vec()),
    )
}

/// Evaluate any non-prompted policy (demonstrators, behavior cloning, H∞)
/// under the same harness and report shape. `make_policy` builds one policy
/// instance per worker; `target_return` in `eval` is recorded but unused.
pub fn rollout_policy<P, F>(
    make_policy: F,
    task: &TaskSpec,
    eval: &EvalConfig,
    anchors: &Anchors,
    tag: ProtocolTag,
    jobs: usize,
) -> Result<EvalReport>
where
    P: Policy,
    F: Fn() -> Result<P> + Sync,
{
    eval_engine(task, eval, anchors, tag, jobs, make_policy, |_| None)
}

/// Roll one episode and dump the state/field trajectory as a CSV grid
/// (column `step`, then one column per state entry) for heatmap plotting.
/// Stops at the horizon or at the first fault, dumping what was simulated.
pub fn field_trajectory_csv(
    task: &TaskSpec,
    policy: &mut dyn Policy,
    seed: u64,
) -> Result<String> {
    let (mut env, o0) = Environment::reset(&task.env, &task.reward, seed)?;
    policy.reset_episode(seed);
    let n_s = task.env.n_s();
    let mut out = String::from("step");
    for i in 0..n_s {
        out.push_str(&format!(",s{i}"));
    }
    out.push('\n');
    let mut push_row = |t: usize, s: &nalgebra::DVector<f64>| {
        out.push_str(&t.to_string());
        for v in s.iter() {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    };
    push_row(0, &env.state().s);
    let mut obs = o0;
    for t in 0..task.env.n_steps() {
        let action = policy.act(&obs);
        match env.step(&action) {
            Ok(res) => {
                policy.observe_reward(res.reward);
                push_row(t + 1, &env.state().s);
                if res.done {
                    break;
                }
                obs = res.obs;
            }
            Err(Error::Diverged { .. } | Error::NonFinite(_)) => break,
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}
