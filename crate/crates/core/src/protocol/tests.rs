//! Oracle tests for the protocol layer.
//!
//! Provenance tags: [PAPER] — behaviour the protocol is defined to have;
//! [DERIVED] — numeric oracle computed by hand or by an independent
//! reference computation inside the test; [TRIVIAL] — definitional
//! identities, shape contracts, and error paths.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use super::*;
use crate::classical::{SearchConfig, StaticGain, StaticPolicy};
use crate::data::{builtin_task, rollout_collect, Anchors, Dataset, Provenance, TaskSpec};
use crate::env::{rollout_episode, EnvSpec, LinearSystemSpec, RewardSpec};
use crate::error::Error;
use crate::model::{init_params, save_checkpoint, AdamWHyper, Checkpoint, ModelConfig, TrainableSet};

// ---------------------------------------------------------------------------
// Fixtures
// ---------------------------------------------------------------------------

/// A small stable 2-state system: n_o = 2 (identity observation), n_a = 1.
fn toy_task(noise_cov: f64, n_steps: usize) -> TaskSpec {
    let a = DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.0, 0.8]);
    let b2 = DMatrix::from_row_slice(2, 1, &[1.0, 0.5]);
    let c = DMatrix::identity(2, 2);
    let sys = LinearSystemSpec::new(a, b2, c, noise_cov, n_steps, 1.0).unwrap();
    let reward = RewardSpec::new(
        DMatrix::identity(2, 2),
        DMatrix::from_element(1, 1, 0.1),
        DMatrix::zeros(2, 1),
        DVector::zeros(2),
    )
    .unwrap();
    TaskSpec::new(
        "toy".to_string(),
        EnvSpec::Linear(sys),
        reward,
        Provenance::Nominal,
    )
    .unwrap()
}

fn expert_gain() -> StaticGain {
    StaticGain {
        f: DMatrix::from_row_slice(1, 2, &[-0.4, -0.2]),
        bias: DVector::zeros(1),
    }
}

fn collect_dataset(task: &TaskSpec, gain: &StaticGain, noise: f64, n: usize, seed: u64) -> Dataset {
    let mut policy = StaticPolicy::new(gain.clone(), noise);
    let batch = rollout_collect(task, &mut policy, n, seed).unwrap();
    assemble_dataset(
        vec![task.clone()],
        BTreeMap::new(),
        "static-gain-test",
        seed,
        batch.trajectories,
    )
}

fn init_ckpt(cfg: &ModelConfig) -> Checkpoint {
    Checkpoint {
        config: cfg.clone(),
        params: init_params(cfg, cfg.seed).unwrap(),
        adapters: None,
        opt_state: None,
    }
}

fn quick_train(cfg: &ModelConfig, dataset: &Dataset, epochs: usize) -> Checkpoint {
    let train = TrainConfig {
        epochs,
        batch_size: 64,
        seed: 0,
        trainable: TrainableSet::All,
        hyper: AdamWHyper::default(),
    };
    let outcome = train_offline(dataset, cfg, &train).unwrap();
    assert!(outcome.aborted.is_none());
    outcome.checkpoint
}

fn ckpt_bytes(ckpt: &Checkpoint) -> Vec<u8> {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.ckpt");
    save_checkpoint(
        &path,
        &ckpt.config,
        &ckpt.params,
        ckpt.adapters.as_ref(),
        ckpt.opt_state.as_ref(),
    )
    .unwrap();
    std::fs::read(&path).unwrap()
}

fn small_search(seed: u64) -> SearchConfig {
    SearchConfig {
        population: 10,
        iterations: 12,
        episodes_per_eval: 2,
        seed,
        sigma0: 0.5,
        sigma_decay: 0.9,
        elite_frac: 0.3,
        plateau_patience: 6,
    }
}

fn bits(x: f64) -> u64 {
    x.to_bits()
}

// ---------------------------------------------------------------------------
// train_offline
// ---------------------------------------------------------------------------

/// [TRIVIAL] Zero training epochs leave the model exactly at its
/// initialization (bitwise), with an empty log.
#[test]
fn train_offline_zero_epochs_is_initialization() {
    let task = toy_task(0.01, 5);
    let dataset = collect_dataset(&task, &expert_gain(), 0.1, 3, 0);
    let cfg = ModelConfig::tiny(2, 1);
    let train = TrainConfig::new(0, 7);
    let outcome = train_offline(&dataset, &cfg, &train).unwrap();
    assert!(outcome.log.is_empty());
    assert_eq!(outcome.steps_run, 0);
    let reference = init_params(&cfg, cfg.seed).unwrap();
    for (name, t) in reference.tensors() {
        assert!(
            t.bits_eq(outcome.checkpoint.params.get(name)),
            "tensor {name} moved"
        );
    }
    assert!(outcome.checkpoint.adapters.is_none());
}

/// [DERIVED] Overfitting oracle: a tiny model trained on 10 noise-free
/// trajectories from a deterministic policy must drive the training loss
/// below 1% of its initial value — the data is exactly memorizable.
#[test]
fn train_offline_overfits_memorizable_data() {
    let task = toy_task(0.0, 6);
    let dataset = collect_dataset(&task, &expert_gain(), 0.0, 10, 3);
    let cfg = ModelConfig::tiny(2, 1);
    let train = TrainConfig {
        epochs: 400,
        batch_size: 64,
        seed: 0,
        trainable: TrainableSet::All,
        hyper: AdamWHyper {
            lr: 2e-2,
            weight_decay: 0.0,
            ..AdamWHyper::default()
        },
    };
    let outcome = train_offline(&dataset, &cfg, &train).unwrap();
    assert!(outcome.aborted.is_none());
    let first = outcome.log.first().unwrap().loss;
    let last = outcome.log.last().unwrap().loss;
    assert!(
        last < 0.01 * first,
        "loss only fell from {first} to {last} (need < 1%)"
    );
}

/// [TRIVIAL] Determinism: two runs with the same seed produce identical
/// (step, loss, lr) logs; wall time is excluded by definition.
#[test]
fn train_offline_same_seed_identical_logs() {
    let task = toy_task(0.01, 5);
    let dataset = collect_dataset(&task, &expert_gain(), 0.1, 4, 1);
    let cfg = ModelConfig::tiny(2, 1);
    let mut train = TrainConfig::new(3, 42);
    train.batch_size = 8;
    let a = train_offline(&dataset, &cfg, &train).unwrap();
    let b = train_offline(&dataset, &cfg, &train).unwrap();
    assert_eq!(a.log.len(), b.log.len());
    assert!(!a.log.is_empty());
    for (ra, rb) in a.log.iter().zip(&b.log) {
        assert_eq!(ra.step, rb.step);
        assert_eq!(bits(ra.loss), bits(rb.loss));
        assert_eq!(bits(ra.lr), bits(rb.lr));
    }
    // The trained checkpoints agree bitwise too.
    for (name, t) in a.checkpoint.params.tensors() {
        assert!(t.bits_eq(b.checkpoint.params.get(name)));
    }
}

/// [TRIVIAL] Error contract: a training run whose loss goes non-finite
/// aborts and returns the last epoch-boundary state — here the
/// initialization, because the explosion happens in the first epoch.
#[test]
fn train_offline_abort_rolls_back_to_last_good() {
    let task = toy_task(0.01, 5);
    let dataset = collect_dataset(&task, &expert_gain(), 0.1, 4, 1);
    let cfg = ModelConfig::tiny(2, 1);
    let train = TrainConfig {
        epochs: 3,
        batch_size: 4,
        seed: 0,
        trainable: TrainableSet::All,
        hyper: AdamWHyper {
            lr: 1e80,
            weight_decay: 0.0,
            ..AdamWHyper::default()
        },
    };
    let outcome = train_offline(&dataset, &cfg, &train).unwrap();
    assert!(outcome.aborted.is_some(), "1e80 learning rate must abort");
    let reference = init_params(&cfg, cfg.seed).unwrap();
    for (name, t) in reference.tensors() {
        assert!(
            t.bits_eq(outcome.checkpoint.params.get(name)),
            "abort did not roll {name} back"
        );
    }
}

// ---------------------------------------------------------------------------
// rollout_dt
// ---------------------------------------------------------------------------

/// [PAPER] Prompt decrement: the logged prompt sequence satisfies
/// R̂₀ = target and R̂ₜ₊₁ = R̂ₜ − rₜ exactly (bitwise) at every step.
#[test]
fn rollout_dt_prompt_decrement_identity() {
    let task = toy_task(0.01, 8);
    let ckpt = init_ckpt(&ModelConfig::tiny(2, 1));
    let eval = EvalConfig::new(2, -5.0, 9);
    let anchors = Anchors::new(0.0, -10.0).unwrap();
    let report = rollout_dt(&ckpt, &task, &eval, &anchors, ProtocolTag::Single, 1).unwrap();

    for ep in &report.episodes {
        let prompts = ep.prompts.as_ref().expect("DT episodes log prompts");
        assert_eq!(prompts.len(), ep.steps);
        assert_eq!(bits(prompts[0]), bits(-5.0));

        // Re-run the same episode seed and check the decrement against the
        // realized rewards.
        let mut policy = DtPolicy::new(&ckpt, eval.target_return).unwrap();
        let (record, fault) = run_episode_capturing(&task, &mut policy, ep.seed).unwrap();
        assert!(fault.is_none());
        assert_eq!(bits(record.episode_return()), bits(ep.raw_return));
        let replayed = policy.prompts();
        assert_eq!(replayed.len(), prompts.len());
        for t in 0..prompts.len() {
            assert_eq!(bits(replayed[t]), bits(prompts[t]));
            if t + 1 < prompts.len() {
                assert_eq!(
                    bits(prompts[t + 1]),
                    bits(prompts[t] - record.rewards[t]),
                    "decrement violated at step {t}"
                );
            }
        }
    }
}

/// [TRIVIAL] Every non-faulting episode runs exactly `n_steps` steps, and
/// normalized scores are consistent with the anchors.
#[test]
fn rollout_dt_episode_length_and_normalization() {
    let task = toy_task(0.01, 8);
    let ckpt = init_ckpt(&ModelConfig::tiny(2, 1));
    let eval = EvalConfig::new(3, -5.0, 2);
    let anchors = Anchors::new(-2.0, -12.0).unwrap();
    let report = rollout_dt(&ckpt, &task, &eval, &anchors, ProtocolTag::Single, 1).unwrap();
    assert_eq!(report.episodes.len(), 3);
    assert_eq!(report.n_diverged, 0);
    for ep in &report.episodes {
        assert_eq!(ep.steps, 8);
        assert!(!ep.diverged);
        let expected = (ep.raw_return - anchors.j_medium()) / (anchors.j_expert() - anchors.j_medium());
        assert_eq!(bits(ep.normalized), bits(expected));
    }
}

/// [DERIVED] Replay oracle: a policy replaying a recorded trajectory's
/// actions on the noise-free environment reproduces that trajectory's
/// return to 1e−10 (and its observations bitwise).
#[test]
fn replay_policy_reproduces_recorded_trajectory() {
    let task = toy_task(0.0, 10);
    let mut demonstrator = StaticPolicy::deterministic(expert_gain());
    let record = rollout_episode(&task.env, &task.reward, &mut demonstrator, 99).unwrap();

    let mut replay = ReplayPolicy::new(record.actions.clone());
    let (replayed, fault) = run_episode_capturing(&task, &mut replay, 99).unwrap();
    assert!(fault.is_none());
    assert!(
        (replayed.episode_return() - record.episode_return()).abs() <= 1e-10,
        "replayed return {} vs recorded {}",
        replayed.episode_return(),
        record.episode_return()
    );
    for (a, b) in replayed.obs.iter().zip(&record.obs) {
        assert_eq!(a, b);
    }
}

/// [TRIVIAL] Fault capture: a policy that drives the state past the
/// divergence bound gets its episodes scored at the partial return and
/// flagged, not errored.
#[test]
fn faulting_episodes_are_captured_and_flagged() {
    let task = toy_task(0.01, 10);
    let destabilizing = StaticGain {
        f: DMatrix::zeros(1, 2),
        bias: DVector::from_element(1, 1.0e8),
    };
    let eval = EvalConfig::new(2, 0.0, 4);
    let anchors = Anchors::new(1.0, 0.0).unwrap();
    let report = rollout_policy(
        || Ok(StaticPolicy::deterministic(destabilizing.clone())),
        &task,
        &eval,
        &anchors,
        ProtocolTag::Single,
        1,
    )
    .unwrap();
    assert_eq!(report.n_diverged, 2);
    for ep in &report.episodes {
        assert!(ep.diverged);
        assert!(ep.fault.is_some());
        assert!(ep.steps < 10);
        assert!(ep.raw_return.is_finite());
    }
}

/// [TRIVIAL] Zero-shot evaluation is a pure function of (checkpoint, task,
/// seed): repeated runs give identical reports and never mutate the
/// checkpoint (byte-identical on disk before and after).
#[test]
fn rollout_dt_is_pure_and_leaves_checkpoint_unchanged() {
    let task = toy_task(0.01, 6);
    let ckpt = init_ckpt(&ModelConfig::tiny(2, 1));
    let before = ckpt_bytes(&ckpt);
    let eval = EvalConfig::new(2, -5.0, 21);
    let anchors = Anchors::new(0.0, -10.0).unwrap();
    let a = rollout_dt(&ckpt, &task, &eval, &anchors, ProtocolTag::ZeroShot, 1).unwrap();
    let b = rollout_dt(&ckpt, &task, &eval, &anchors, ProtocolTag::ZeroShot, 1).unwrap();
    assert_eq!(
        serde_json::to_string(&a).unwrap(),
        serde_json::to_string(&b).unwrap()
    );
    assert_eq!(before, ckpt_bytes(&ckpt));
}

/// [TRIVIAL] Worker-count invariance: the report is bit-identical whether
/// episodes run on one worker or several (fixed per-episode substreams,
/// index-ordered aggregation).
#[test]
fn reports_are_identical_for_any_job_count() {
    let task = toy_task(0.01, 6);
    let eval = EvalConfig::new(5, 0.0, 3);
    let anchors = Anchors::new(1.0, 0.0).unwrap();
    let make = || Ok(StaticPolicy::new(expert_gain(), 0.2));
    let serial = rollout_policy(make, &task, &eval, &anchors, ProtocolTag::Single, 1).unwrap();
    let parallel = rollout_policy(make, &task, &eval, &anchors, ProtocolTag::Single, 3).unwrap();
    assert_eq!(
        serde_json::to_string(&serial).unwrap(),
        serde_json::to_string(&parallel).unwrap()
    );

    let ckpt = init_ckpt(&ModelConfig::tiny(2, 1));
    let eval_dt = EvalConfig::new(3, -5.0, 8);
    let dt1 = rollout_dt(&ckpt, &task, &eval_dt, &anchors, ProtocolTag::Single, 1).unwrap();
    let dt2 = rollout_dt(&ckpt, &task, &eval_dt, &anchors, ProtocolTag::Single, 2).unwrap();
    assert_eq!(
        serde_json::to_string(&dt1).unwrap(),
        serde_json::to_string(&dt2).unwrap()
    );
}

/// [TRIVIAL] Dimension compatibility: a model sized for one PDE family
/// evaluates on the other (shared observation/action interface), while a
/// linear task with different dims is rejected with a diagnostic.
#[test]
fn cross_environment_dimension_compatibility() {
    let burgers = builtin_task("burgers").unwrap();
    let cdr = builtin_task("cdr").unwrap();
    let he1 = builtin_task("he1").unwrap();
    let cfg = ModelConfig::tiny(burgers.env.n_o(), burgers.env.n_a());
    assert!(check_dim_compat(&cfg, &burgers).is_ok());
    assert!(check_dim_compat(&cfg, &cdr).is_ok());
    let err = check_dim_compat(&cfg, &he1).unwrap_err();
    assert!(matches!(err, Error::Dimension(_)));
    assert!(err.to_string().contains("he1"));
}

// ---------------------------------------------------------------------------
// adapt_k_shot
// ---------------------------------------------------------------------------

/// [PAPER] Frozen-base contract: adaptation trains fresh adapters only; the
/// base parameters are bit-for-bit unchanged, and the input checkpoint file
/// would be byte-identical.
#[test]
fn adaptation_never_mutates_base_parameters() {
    let task = toy_task(0.01, 5);
    let dataset = collect_dataset(&task, &expert_gain(), 0.1, 4, 2);
    let cfg = ModelConfig::tiny(2, 1);
    let base = quick_train(&cfg, &dataset, 1);
    let base_bytes = ckpt_bytes(&base);

    let demos = collect_dataset(&task, &expert_gain(), 0.05, 2, 9).trajectories;
    let adapt = AdaptConfig {
        epochs: 3,
        batch_size: 8,
        seed: 5,
        adapt_all: false,
        hyper: AdamWHyper::default(),
    };
    let adapted = adapt_k_shot(&base, &demos, &adapt).unwrap();
    assert!(adapted.aborted.is_none());
    assert!(adapted.steps_run > 0);

    assert_eq!(base_bytes, ckpt_bytes(&base));
    for (name, t) in base.params.tensors() {
        assert!(
            t.bits_eq(adapted.checkpoint.params.get(name)),
            "adaptation moved base tensor {name}"
        );
    }
    // Adapters exist, are base-frozen, and actually moved during training.
    let adapters = adapted.checkpoint.adapters.as_ref().unwrap();
    assert!(adapters.frozen_base());
    let moved = adapters
        .tensors()
        .values()
        .any(|t| t.data().iter().any(|&v| v != 0.0));
    assert!(moved);
}

/// [TRIVIAL] Zero-epoch adaptation behaves exactly like zero-shot: fresh
/// adapters are an exact identity, so rollouts agree bitwise.
#[test]
fn zero_epoch_adaptation_equals_zero_shot() {
    let task = toy_task(0.01, 6);
    let cfg = ModelConfig::tiny(2, 1);
    let base = init_ckpt(&cfg);
    let demos = collect_dataset(&task, &expert_gain(), 0.05, 2, 9).trajectories;
    let adapt = AdaptConfig {
        epochs: 0,
        batch_size: 8,
        seed: 5,
        adapt_all: false,
        hyper: AdamWHyper::default(),
    };
    let adapted = adapt_k_shot(&base, &demos, &adapt).unwrap();
    assert!(adapted.checkpoint.adapters.is_some());

    let eval = EvalConfig::new(3, -5.0, 33);
    let anchors = Anchors::new(0.0, -10.0).unwrap();
    let zero_shot = rollout_dt(&base, &task, &eval, &anchors, ProtocolTag::ZeroShot, 1).unwrap();
    let k0 = rollout_dt(
        &adapted.checkpoint,
        &task,
        &eval,
        &anchors,
        ProtocolTag::KShot(0),
        1,
    )
    .unwrap();
    for (a, b) in zero_shot.episodes.iter().zip(&k0.episodes) {
        assert_eq!(bits(a.raw_return), bits(b.raw_return));
    }
}

/// [TRIVIAL] The full-fine-tune escape hatch trains base weights (they
/// move) and attaches no adapters.
#[test]
fn adapt_all_escape_hatch_trains_base_copy() {
    let task = toy_task(0.01, 5);
    let cfg = ModelConfig::tiny(2, 1);
    let base = init_ckpt(&cfg);
    let demos = collect_dataset(&task, &expert_gain(), 0.05, 2, 9).trajectories;
    let adapt = AdaptConfig {
        epochs: 2,
        batch_size: 8,
        seed: 5,
        adapt_all: true,
        hyper: AdamWHyper::default(),
    };
    let before = ckpt_bytes(&base);
    let adapted = adapt_k_shot(&base, &demos, &adapt).unwrap();
    assert!(adapted.checkpoint.adapters.is_none());
    let moved = base
        .params
        .tensors()
        .iter()
        .any(|(name, t)| !t.bits_eq(adapted.checkpoint.params.get(name)));
    assert!(moved, "full fine-tuning should move base weights");
    // The input checkpoint itself is still untouched.
    assert_eq!(before, ckpt_bytes(&base));
}

// ---------------------------------------------------------------------------
// Behavior cloning
// ---------------------------------------------------------------------------

/// [DERIVED] Realizable-target oracle: on a dataset generated by a static
/// gain with zero exploration noise the regression target is exactly
/// a = F·o, and BC must recover it to MSE < 1e−4.
#[test]
fn bc_recovers_static_gain_actions() {
    let task = toy_task(0.01, 6);
    let dataset = collect_dataset(&task, &expert_gain(), 0.0, 15, 4);
    let cfg = BcConfig {
        d_model: 16,
        epochs: 400,
        batch_size: 64,
        seed: 0,
        hyper: AdamWHyper {
            lr: 1e-2,
            weight_decay: 0.0,
            ..AdamWHyper::default()
        },
    };
    let outcome = train_bc(&dataset.trajectories, &cfg).unwrap();
    assert!(outcome.aborted.is_none());
    let pairs = BcPairs::from_trajectories(&dataset.trajectories).unwrap();
    let mse = outcome.model.mse(&pairs).unwrap();
    assert!(mse < 1e-4, "BC MSE {mse} (need < 1e-4)");
}

/// [TRIVIAL] BC is return-blind by construction: rollouts are bit-identical
/// under different target returns, and a serialized model round-trips
/// exactly.
#[test]
fn bc_is_return_invariant_and_serializes_exactly() {
    let task = toy_task(0.01, 6);
    let dataset = collect_dataset(&task, &expert_gain(), 0.05, 4, 4);
    let cfg = BcConfig::new(8, 3, 0);
    let outcome = train_bc(&dataset.trajectories, &cfg).unwrap();
    let model = outcome.model;

    let anchors = Anchors::new(0.0, -10.0).unwrap();
    let mut eval = EvalConfig::new(3, -5.0, 12);
    let low = rollout_policy(
        || Ok(BcPolicy::new(model.clone())),
        &task,
        &eval,
        &anchors,
        ProtocolTag::Bc,
        1,
    )
    .unwrap();
    eval.target_return = -500.0;
    let high = rollout_policy(
        || Ok(BcPolicy::new(model.clone())),
        &task,
        &eval,
        &anchors,
        ProtocolTag::Bc,
        1,
    )
    .unwrap();
    for (a, b) in low.episodes.iter().zip(&high.episodes) {
        assert_eq!(bits(a.raw_return), bits(b.raw_return));
    }

    let json = bc_to_json(&model);
    let back = bc_from_json(&json).unwrap();
    assert_eq!(model, back);
    // Corrupted shape is rejected with the tensor named.
    let bad = json.replace("\"n_o\": 2", "\"n_o\": 3");
    assert!(bc_from_json(&bad).is_err());
}

// ---------------------------------------------------------------------------
// Anchors and normalization
// ---------------------------------------------------------------------------

/// [DERIVED] Anchor consistency: re-evaluating a demonstrator under its own
/// anchors (fresh episode seeds) lands within 3·std/√episodes of its
/// defining value — 1.0 for the expert, 0.0 for the medium.
#[test]
fn anchor_consistency_within_monte_carlo_error() {
    let task = toy_task(0.01, 10);
    let episodes = 200;
    let identity = Anchors::new(1.0, 0.0).unwrap();
    let expert = expert_gain();
    let medium = StaticGain::zeros(1, 2);

    let raw = |gain: &StaticGain, seed: u64, anchors: &Anchors| {
        let eval = EvalConfig::new(episodes, 0.0, seed);
        rollout_policy(
            || Ok(StaticPolicy::new(gain.clone(), 0.1)),
            &task,
            &eval,
            anchors,
            ProtocolTag::Single,
            1,
        )
        .unwrap()
    };

    let j_expert = raw(&expert, 100, &identity).mean_return;
    let j_medium = raw(&medium, 101, &identity).mean_return;
    let anchors = Anchors::new(j_expert, j_medium).unwrap();

    let expert_re = raw(&expert, 200, &anchors);
    let medium_re = raw(&medium, 201, &anchors);
    let n = episodes as f64;
    let e_bound = 3.0 * expert_re.std_normalized / n.sqrt();
    let m_bound = 3.0 * medium_re.std_normalized / n.sqrt();
    assert!(
        (expert_re.mean_normalized - 1.0).abs() <= e_bound,
        "expert renormalized to {} (bound {e_bound})",
        expert_re.mean_normalized
    );
    assert!(
        (medium_re.mean_normalized - 0.0).abs() <= m_bound,
        "medium renormalized to {} (bound {m_bound})",
        medium_re.mean_normalized
    );
}

/// [PAPER] Score capping: 5 caps to 2 and −3 caps to −1 under the
/// documented [−1, 2] clamp, both in the helper and inside reports.
#[test]
fn score_caps_clamp_documented_examples() {
    assert_eq!(cap_scores(&[5.0, -3.0, 0.5], (-1.0, 2.0)), vec![2.0, -1.0, 0.5]);

    // Inside the harness: anchors (1, 0) make normalized == raw return; a
    // replayed constant reward of +5 per step over 1 step scores 5 → 2.
    let task = toy_task(0.01, 4);
    let mut eval = EvalConfig::new(2, 0.0, 6);
    eval.score_cap = Some((-1.0, 2.0));
    assert!(eval.validate().is_ok());
    let anchors = Anchors::new(1.0, 0.0).unwrap();
    let report = rollout_policy(
        || Ok(StaticPolicy::deterministic(StaticGain::zeros(1, 2))),
        &task,
        &eval,
        &anchors,
        ProtocolTag::Hinf,
        1,
    )
    .unwrap();
    for ep in &report.episodes {
        assert!(ep.normalized >= -1.0 && ep.normalized <= 2.0);
        // Quadratic tracking rewards are non-positive, so the cap binds at
        // the low end exactly when the raw return is below −1.
        if ep.raw_return < -1.0 {
            assert_eq!(ep.normalized, -1.0);
        }
    }

    let bad = EvalConfig {
        score_cap: Some((2.0, -1.0)),
        ..EvalConfig::new(1, 0.0, 0)
    };
    assert!(bad.validate().is_err());
}

/// [TRIVIAL] The evaluation-report statistics are the textbook mean and
/// sample standard deviation.
#[test]
fn mean_std_matches_hand_values() {
    let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
    assert!((m - 2.5).abs() < 1e-15);
    assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-12);
    let (m1, s1) = mean_std(&[7.25]);
    assert_eq!(m1, 7.25);
    assert_eq!(s1, 0.0);
}

// ---------------------------------------------------------------------------
// Experiment drivers
// ---------------------------------------------------------------------------

/// [TRIVIAL] Single-task report shape: one row per (dataset, method) pair in
/// a fixed order, the demonstrator rows sitting exactly on their anchor
/// definitions (1.0 expert, 0.0 medium).
#[test]
fn single_task_report_shape_and_demonstrator_rows() {
    let task = toy_task(0.01, 6);
    let demos = Demonstrators {
        expert: expert_gain(),
        medium: StaticGain::zeros(1, 2),
        expert_noise: 0.05,
        medium_noise: 0.05,
    };
    let cfg = ModelConfig::tiny(2, 1);
    let single = SingleTaskConfig {
        n_traj: 6,
        anchor_episodes: 40,
        eval: EvalConfig::new(2, -5.0, 11),
        train: TrainConfig::new(2, 0),
        bc: BcConfig::new(8, 2, 0),
        data_seed: 4,
    };
    let outcome = run_single_task(&task, &demos, &cfg, &single, 1).unwrap();
    let report = outcome.report;

    let got: Vec<(String, String)> = report
        .rows
        .iter()
        .map(|r| (r.dataset.clone(), r.method.clone()))
        .collect();
    let want = [
        ("expert", "demonstrator"),
        ("expert", "bc"),
        ("expert", "dt"),
        ("medium", "demonstrator"),
        ("medium", "bc"),
        ("medium", "dt"),
    ];
    assert_eq!(
        got,
        want.map(|(d, m)| (d.to_string(), m.to_string())).to_vec()
    );
    assert_eq!(report.reports.len(), 6);

    // The demonstrator rows reuse the anchor-defining episodes, so their
    // normalized means sit on the endpoints up to floating-point summation
    // order.
    assert!((report.rows[0].mean_normalized - 1.0).abs() < 1e-9);
    assert!((report.rows[3].mean_normalized - 0.0).abs() < 1e-9);

    let csv = single_task_csv(&report);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 7);
    assert_eq!(
        lines[0],
        "dataset,method,mean_normalized,std_normalized,mean_return,std_return"
    );

    // Training logs for both DT runs and both BC runs came back.
    let names: Vec<&str> = outcome.logs.iter().map(|l| l.name.as_str()).collect();
    assert_eq!(
        names,
        ["train_bc_expert", "train_dt_expert", "train_bc_medium", "train_dt_medium"]
    );
}

/// [TRIVIAL] Multi-task task sampling: requested counts come back, ids are
/// unique, and provenance records the exact documented perturbation sizes.
#[test]
fn multitask_tasks_counts_sizes_and_ids() {
    let counts = TaskCounts {
        train: 4,
        in_dist: 2,
        out_dist: 2,
    };
    let (train, ind, out) = multitask_tasks("he1", &counts, 7).unwrap();
    assert_eq!((train.len(), ind.len(), out.len()), (4, 2, 2));

    let mut ids: Vec<&str> = train
        .iter()
        .chain(&ind)
        .chain(&out)
        .map(|t| t.task_id.as_str())
        .collect();
    ids.sort();
    ids.dedup();
    assert_eq!(ids.len(), 8, "task ids must be unique");

    for t in train.iter().chain(&ind) {
        match &t.provenance {
            Provenance::Perturbed {
                delta_a_norm,
                delta_b2_norm,
                ..
            } => {
                assert_eq!(*delta_a_norm, 0.05);
                assert_eq!(*delta_b2_norm, 0.05);
            }
            other => panic!("expected a perturbed task, got {other:?}"),
        }
    }
    for t in &out {
        match &t.provenance {
            Provenance::Perturbed { delta_a_norm, .. } => assert_eq!(*delta_a_norm, 0.15),
            other => panic!("expected a perturbed task, got {other:?}"),
        }
    }

    // PDE out-of-distribution tasks enumerate the documented tuples.
    let pde_counts = TaskCounts {
        train: 2,
        in_dist: 1,
        out_dist: 9,
    };
    let (_, _, cdr_out) = multitask_tasks("cdr", &pde_counts, 1).unwrap();
    let ids: Vec<String> = cdr_out.iter().map(|t| t.task_id.clone()).collect();
    let want: Vec<String> = (0..9).map(|i| format!("cdr/out_dist-{i}")).collect();
    assert_eq!(ids, want);
}

/// [TRIVIAL] Multi-task report shape on a miniature run: 2×2 cells, one
/// breakdown row per test task, pooled dataset of the expected size, and
/// the zero-shot checkpoint untouched on disk.
#[test]
fn multitask_report_shape_miniature_run() {
    let cfg = ModelConfig::tiny(1, 2); // he1 has n_o = 1, n_a = 2
    let mt = MultitaskConfig {
        counts: TaskCounts {
            train: 2,
            in_dist: 1,
            out_dist: 1,
        },
        k_shot: 2,
        traj_per_task: 2,
        anchor_episodes: 25,
        eval: EvalConfig::new(2, -10.0, 13),
        train: TrainConfig::new(1, 0),
        adapt: AdaptConfig {
            epochs: 1,
            batch_size: 16,
            seed: 0,
            adapt_all: false,
            hyper: AdamWHyper::default(),
        },
        search: small_search(0),
        expert_noise: 0.1,
        medium_noise: 0.1,
        data_seed: 2,
    };
    let outcome = run_multitask("he1", &cfg, &mt, 1).unwrap();
    let report = &outcome.report;

    assert_eq!(report.kind, "he1");
    assert_eq!(report.k, 2);
    assert_eq!(report.tasks.len(), 2);
    assert_eq!(report.reports.len(), 4); // (zero, k) × 2 test tasks
    assert_eq!(outcome.dataset.trajectories.len(), 4);
    for c in [
        report.in_zero_shot,
        report.in_k_shot,
        report.out_zero_shot,
        report.out_k_shot,
    ] {
        assert!(c.mean.is_finite());
        assert!(c.std >= 0.0);
    }
    let dists: Vec<&str> = report.tasks.iter().map(|t| t.dist.as_str()).collect();
    assert_eq!(dists, ["in", "out"]);

    // The base checkpoint survives zero-shot evaluation byte-identically.
    let bytes = ckpt_bytes(&outcome.checkpoint);
    let anchors = report.tasks[0].anchors.clone();
    let in_task = multitask_tasks("he1", &mt.counts, mt.data_seed).unwrap().1[0].clone();
    let _ = rollout_dt(
        &outcome.checkpoint,
        &in_task,
        &mt.eval,
        &anchors,
        ProtocolTag::ZeroShot,
        1,
    )
    .unwrap();
    assert_eq!(bytes, ckpt_bytes(&outcome.checkpoint));

    let cells_csv = multitask_csv(report);
    assert!(cells_csv.starts_with("shot,in_mean,in_std,out_mean,out_std\n"));
    assert_eq!(cells_csv.lines().count(), 3);
    let breakdown = multitask_breakdown_csv(report);
    assert_eq!(breakdown.lines().count(), 3);
}

/// [PAPER] γ-grid mechanics: the scan covers all 13 documented values in
/// order, infeasible entries are logged without scores, feasible ones carry
/// capped means, and the selection is the feasible argmax.
#[test]
fn hinf_comparison_scans_grid_and_selects_argmax() {
    assert_eq!(
        GAMMA_GRID,
        [0.5, 1.0, 2.0, 3.0, 4.0, 5.0, 10.0, 20.0, 50.0, 100.0, 200.0, 500.0, 1000.0]
    );

    let cfg = HinfConfig {
        n_in: 1,
        n_out: 1,
        anchor_episodes: 25,
        eval: EvalConfig::new(2, 0.0, 7),
        search: small_search(1),
        expert_noise: 0.1,
        medium_noise: 0.1,
        data_seed: 6,
    };
    let report = run_hinf_comparison("he1", &cfg, 1).unwrap();
    assert_eq!(report.rows.len(), 13);
    let grid: Vec<f64> = report.rows.iter().map(|r| r.gamma).collect();
    assert_eq!(grid, GAMMA_GRID.to_vec());

    let mut best: Option<(f64, f64)> = None;
    for row in &report.rows {
        if row.feasible {
            let mean = row.in_dist_mean.expect("feasible rows are scored");
            assert!((-1.0..=2.0).contains(&mean), "capped mean {mean}");
            assert!(row.reason.is_none());
            let better = best.map_or(true, |(_, bm)| mean > bm);
            if better {
                best = Some((row.gamma, mean));
            }
        } else {
            assert!(row.in_dist_mean.is_none());
            assert!(row.reason.is_some());
        }
    }
    let (best_gamma, best_mean) = best.expect("at least one feasible γ");
    assert_eq!(report.selected_gamma, best_gamma);
    assert_eq!(report.selected_in_dist_mean, best_mean);
    assert!((-1.0..=2.0).contains(&report.out_dist_mean));
    assert!((-1.0..=2.0).contains(&report.nominal_score));

    let csv = hinf_csv(&report);
    assert!(csv.starts_with("gamma,feasible,in_dist_mean,selected,reason\n"));
    assert_eq!(csv.lines().count(), 14);
}

/// [TRIVIAL] The documented default target returns resolve per family,
/// including perturbed ids, and unknown families are rejected.
#[test]
fn default_target_returns_per_family() {
    assert_eq!(default_target_return("he1").unwrap(), -10.0);
    assert_eq!(default_target_return("ac4").unwrap(), -0.1);
    assert_eq!(default_target_return("cm3").unwrap(), -5.0);
    assert_eq!(default_target_return("cdr").unwrap(), -300.0);
    assert_eq!(default_target_return("burgers").unwrap(), -110.0);
    assert_eq!(default_target_return("he1/pert-12345").unwrap(), -10.0);
    assert_eq!(default_target_return("cdr/out_dist-3").unwrap(), -300.0);
    assert!(default_target_return("pendulum").is_err());
}

/// [TRIVIAL] Field-trajectory dump: a `step` column plus one column per
/// state entry, one row per simulated step plus the initial field.
#[test]
fn field_trajectory_csv_shape() {
    let task = toy_task(0.01, 7);
    let mut policy = StaticPolicy::deterministic(expert_gain());
    let csv = field_trajectory_csv(&task, &mut policy, 3).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "step,s0,s1");
    assert_eq!(lines.len(), 1 + 7 + 1); // header + initial field + 7 steps
    for (i, line) in lines[1..].iter().enumerate() {
        assert!(line.starts_with(&format!("{i},")));
        assert_eq!(line.split(',').count(), 3);
    }
}

/// [TRIVIAL] Evaluation reports round-trip through their JSON external form
/// with exact floats.
#[test]
fn eval_report_json_round_trip() {
    let task = toy_task(0.01, 5);
    let eval = EvalConfig::new(2, 0.0, 19);
    let anchors = Anchors::new(1.0, 0.0).unwrap();
    let report = rollout_policy(
        || Ok(StaticPolicy::new(expert_gain(), 0.3)),
        &task,
        &eval,
        &anchors,
        ProtocolTag::Single,
        1,
    )
    .unwrap();
    let json = serde_json::to_string_pretty(&report).unwrap();
    let back: EvalReport = serde_json::from_str(&json).unwrap();
    assert_eq!(bits(back.mean_return), bits(report.mean_return));
    assert_eq!(back.episodes.len(), report.episodes.len());
    for (a, b) in report.episodes.iter().zip(&back.episodes) {
        assert_eq!(bits(a.raw_return), bits(b.raw_return));
        assert_eq!(bits(a.normalized), bits(b.normalized));
    }
}
