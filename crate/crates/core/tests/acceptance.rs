//! Acceptance gate: one test per criterion, each printing a PASS/FAIL line.
//! Run with `cargo test --test acceptance -- --nocapture` to see the lines.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::OnceLock;
use std::time::Instant;

use tbrl::agent::{Agent, AgentConfig, Encoder, Policy, Transition};
use tbrl::engine::{
    self, generate_game, oracle_solve, ConceptPool, Difficulty, GameEnv, GameSpec, TextEnv,
    VocabMode,
};
use tbrl::lab::{self, EncoderKind, ExperimentConfig};
use tbrl::textenc::{cosine, synth_pretrain, EncoderParams};

fn report(n: u32, ok: bool, detail: &str) {
    println!("ACCEPTANCE {n}: {}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "criterion {n} failed: {detail}");
}

fn pool() -> ConceptPool {
    ConceptPool::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("data/concepts.json")).unwrap()
}

// ---------------------------------------------------------------------------
// Criterion 1: gradient fidelity over the full pipeline
// ---------------------------------------------------------------------------

#[test]
fn acceptance_1_gradient_fidelity() {
    use rand::{Rng, SeedableRng};
    let started = Instant::now();
    let p = pool();
    let words = engine::template_vocabulary();
    let mut worst: f64 = 0.0;
    for seed in 1..=5u64 {
        let table = synth_pretrain(&p, &words, 4, seed);
        let enc = EncoderParams::new(table, 5, false, seed + 100);
        let config = AgentConfig {
            seed: seed + 200,
            warmup_transitions: 1,
            batch_size: 1,
            fine_tune_encoder: true,
            ..Default::default()
        };
        let mut agent = Agent::new(Encoder::Gru(enc), config);
        // Full-scale random head: the near-zero production init would push
        // encoder gradients below finite-difference resolution.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed + 300);
        for w in &mut agent.qnet.head_w {
            *w = rng.gen_range(-0.5..0.5);
        }
        agent.buffer.push(Transition {
            obs_text: "you see a closed fridge and an apple on the floor".into(),
            action_text: "take apple".into(),
            reward: 1.0,
            next_obs_text: "you are carrying an apple".into(),
            next_admissible: vec!["look".into(), "put apple in fridge".into()],
            done: false,
        });
        let indices = vec![0usize];
        let targets = agent.compute_targets(&indices);
        let (_, grads) = agent.batch_loss_and_grads(&indices, &targets);
        let theta = agent.flat_params(true);
        let analytic = Agent::flat_grads(&grads, true);
        let err = tbrl::numcore::grad_check(
            |th| {
                let mut probe = agent.clone();
                probe.load_flat(true, th);
                let (loss, _) = probe.batch_loss_and_grads(&indices, &targets);
                loss
            },
            &theta,
            &analytic,
            // Larger step than the unit tests use: near-zero gradient
            // coordinates hit the checker's 1e-8 denominator floor, where
            // central-difference roundoff (~f·eps_mach/eps) dominates. The
            // pipeline is smooth, so the added truncation error is tiny.
            3e-4,
        );
        worst = worst.max(err);
    }
    let elapsed = started.elapsed().as_secs_f64();
    report(
        1,
        worst < 1e-4 && elapsed < 30.0,
        &format!("max rel err {worst:.3e}, elapsed {elapsed:.1}s"),
    );
}

// ---------------------------------------------------------------------------
// Criterion 2: byte-identical outputs on rerun
// ---------------------------------------------------------------------------

fn dir_bytes(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                files.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    files.sort();
    files
}

#[test]
fn acceptance_2_determinism() {
    let p = pool();
    let cfg = ExperimentConfig {
        difficulty: Difficulty::Easy,
        encoder: EncoderKind::EmbeddingFrozen,
        dim: 8,
        hidden: 8,
        n_train_games: 2,
        n_eval_games: 2,
        episodes: 6,
        n_runs: 2,
        warmup_transitions: 8,
        batch_size: 4,
        ..ExperimentConfig::default()
    };
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    lab::run_experiment(&cfg, &p, dir_a.path()).unwrap();
    lab::run_experiment(&cfg, &p, dir_b.path()).unwrap();
    let a = dir_bytes(dir_a.path());
    let b = dir_bytes(dir_b.path());
    let ok = !a.is_empty() && a == b;
    report(2, ok, "rerun artifacts differ");
}

// ---------------------------------------------------------------------------
// Criterion 3: solvability of every generated game, both vocabularies
// ---------------------------------------------------------------------------

#[test]
fn acceptance_3_solvability() {
    let p = pool();
    let mut ok = true;
    let mut detail = String::new();
    for difficulty in [Difficulty::Easy, Difficulty::Medium, Difficulty::Hard] {
        for seed in 0..50u64 {
            for mode in [VocabMode::Id, VocabMode::Ood] {
                let spec = generate_game(difficulty, seed, &p, mode).unwrap();
                match oracle_solve(&spec) {
                    Some(solution) if solution.len() as u32 <= spec.max_steps => {
                        let mut env = GameEnv::new(spec);
                        env.reset();
                        for action in &solution {
                            env.step(action).unwrap();
                        }
                        if env.score() != env.max_score() {
                            ok = false;
                            detail = format!(
                                "replay of {difficulty:?}/{seed}/{mode:?} scored {}/{}",
                                env.score(),
                                env.max_score()
                            );
                        }
                    }
                    other => {
                        ok = false;
                        detail = format!(
                            "{difficulty:?}/{seed}/{mode:?}: oracle returned {:?}",
                            other.map(|s| s.len())
                        );
                    }
                }
            }
        }
    }
    report(3, ok, &detail);
}

// ---------------------------------------------------------------------------
// Criteria 4 and 5 share the trained desk-scale suite
// ---------------------------------------------------------------------------

struct Suite {
    /// encoder kind -> condition -> mean normalized score over 5 seeds.
    eval: BTreeMap<EncoderKind, BTreeMap<String, f64>>,
    /// Wall time of the hash + frozen portion (criterion 4 budget).
    hash_frozen_secs: f64,
}

fn suite_config(encoder: EncoderKind) -> ExperimentConfig {
    ExperimentConfig {
        difficulty: Difficulty::Medium,
        encoder,
        dim: 12,
        hidden: 32,
        episodes: 150,
        gamma: 0.6,
        lr: 3e-3,
        n_runs: 5,
        ..ExperimentConfig::default()
    }
}

fn run_suite(encoder: EncoderKind, p: &ConceptPool) -> BTreeMap<String, f64> {
    let cfg = suite_config(encoder);
    let mut sums: BTreeMap<String, f64> = BTreeMap::new();
    for seed in cfg.base_seed..cfg.base_seed + cfg.n_runs as u64 {
        let result = lab::run_one(&cfg, p, seed).unwrap();
        for (cond, v) in result.eval {
            *sums.entry(cond).or_insert(0.0) += v;
        }
    }
    sums.into_iter().map(|(k, v)| (k, v / cfg.n_runs as f64)).collect()
}

fn suite() -> &'static Suite {
    static SUITE: OnceLock<Suite> = OnceLock::new();
    SUITE.get_or_init(|| {
        let p = pool();
        let started = Instant::now();
        let hash = run_suite(EncoderKind::Hash, &p);
        let frozen = run_suite(EncoderKind::EmbeddingFrozen, &p);
        let hash_frozen_secs = started.elapsed().as_secs_f64();
        let finetuned = run_suite(EncoderKind::EmbeddingFinetuned, &p);
        let mut eval = BTreeMap::new();
        eval.insert(EncoderKind::Hash, hash);
        eval.insert(EncoderKind::EmbeddingFrozen, frozen);
        eval.insert(EncoderKind::EmbeddingFinetuned, finetuned);
        Suite { eval, hash_frozen_secs }
    })
}

#[test]
fn acceptance_4_vocabulary_shift_ordering() {
    let s = suite();
    let hash = &s.eval[&EncoderKind::Hash];
    let frozen = &s.eval[&EncoderKind::EmbeddingFrozen];
    let gap_a = hash["id"] - hash["ood"];
    let gap_b = frozen["ood"] - hash["ood"];
    let ok = gap_a >= 0.15 && gap_b >= 0.15 && s.hash_frozen_secs < 900.0;
    report(
        4,
        ok,
        &format!(
            "hash id {:.3} ood {:.3} (gap {gap_a:.3}); frozen ood {:.3} (gap {gap_b:.3}); {:.0}s",
            hash["id"], hash["ood"], frozen["ood"], s.hash_frozen_secs
        ),
    );
}

#[test]
fn acceptance_5_fine_tuning_harms_robustness() {
    let s = suite();
    let hash = &s.eval[&EncoderKind::Hash];
    let frozen = &s.eval[&EncoderKind::EmbeddingFrozen];
    let finetuned = &s.eval[&EncoderKind::EmbeddingFinetuned];
    let rel_drop = |e: &BTreeMap<String, f64>| (e["id"] - e["lexical"]) / e["id"];
    let frozen_drop = rel_drop(frozen);
    let finetuned_drop = rel_drop(finetuned);
    let a = frozen_drop.abs() <= 0.20;
    let b = finetuned_drop > frozen_drop;
    let c = hash["lexical"] <= 0.1 * hash["id"];
    report(
        5,
        a && b && c,
        &format!(
            "frozen drop {frozen_drop:.3}, finetuned drop {finetuned_drop:.3}, \
             hash lexical {:.3} vs id {:.3}",
            hash["lexical"], hash["id"]
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion 6: semantic degeneration on a scripted co-occurrence game
// ---------------------------------------------------------------------------

/// One room, a closed fridge, an apple on the floor, goal apple-in-fridge:
/// "apple" and "fridge" co-occur in every rewarded transition.
fn scripted_spec() -> GameSpec {
    GameSpec {
        seed: 0,
        difficulty: Difficulty::Easy,
        rooms: vec![engine::RoomSpec { name: "kitchen".into() }],
        furniture: vec![engine::FurnitureSpec {
            name: "fridge".into(),
            kind: engine::FurnitureKind::Container,
            room: 0,
            starts_open: false,
        }],
        objects: vec![engine::ObjectSpec {
            concept: "apple".into(),
            name: "apple".into(),
            start: engine::StartLocation::Floor(0),
        }],
        goals: vec![engine::GoalSpec { object: 0, dest: "fridge".into() }],
        max_steps: 50,
        template_set_id: 0,
    }
}

fn train_scripted(seed: u64, fine_tune: bool) -> Agent {
    let p = pool();
    let table = synth_pretrain(&p, &engine::template_vocabulary(), 12, 7);
    let enc = EncoderParams::new(table, 32, !fine_tune, seed ^ 0xE0C0);
    let cfg = AgentConfig {
        seed,
        gamma: 0.6,
        lr: 3e-3,
        fine_tune_encoder: fine_tune,
        warmup_transitions: 16,
        ..Default::default()
    };
    let mut agent = Agent::new(Encoder::Gru(enc), cfg);
    for _ in 0..40 {
        let mut env = GameEnv::new(scripted_spec());
        agent.play_episode(&mut env, Policy::Sample, true).unwrap();
    }
    agent
}

#[test]
fn acceptance_6_semantic_degeneration() {
    let mut decreased = 0;
    let mut ok = true;
    let mut detail = String::new();
    for seed in 1..=5u64 {
        // Fine-tuned: X and Y drift towards each other.
        let agent = train_scripted(seed, true);
        let Encoder::Gru(p) = &agent.encoder else { unreachable!() };
        let t = &p.embedding;
        let dist =
            |m: &tbrl::numcore::Mat| 1.0 - cosine(m.row(t.row_of("apple")), m.row(t.row_of("fridge")));
        let before = dist(&t.pretrained_snapshot);
        let after = dist(&t.matrix);
        if after < before {
            decreased += 1;
        }
        // Tokens absent from the scripted game's text never drift.
        for absent in ["sock", "pome", "hammer", "wardrobe"] {
            let d = t.drift()[t.row_of(absent)].1;
            if d != 0.0 {
                ok = false;
                detail = format!("absent token {absent} drifted {d} (fine-tuned, seed {seed})");
            }
        }
        // Frozen: every drift is exactly zero.
        let frozen_agent = train_scripted(seed, false);
        let Encoder::Gru(fp) = &frozen_agent.encoder else { unreachable!() };
        if fp.embedding.drift().iter().any(|(_, d, _)| *d != 0.0) {
            ok = false;
            detail = format!("frozen encoder drifted (seed {seed})");
        }
    }
    if decreased < 4 {
        ok = false;
        detail = format!("cosine distance decreased in only {decreased}/5 seeds");
    }
    report(6, ok, &detail);
}

// ---------------------------------------------------------------------------
// Criterion 7: property suites (each >= 100 randomized cases)
// ---------------------------------------------------------------------------

#[test]
fn acceptance_7_property_suites() {
    use proptest::prelude::*;
    use proptest::test_runner::{Config, TestError, TestRunner};

    fn cases() -> Config {
        Config { cases: 128, failure_persistence: None, ..Config::default() }
    }
    fn run<S: Strategy>(
        name: &str,
        strategy: S,
        check: impl Fn(S::Value) -> Result<(), proptest::test_runner::TestCaseError>,
        failures: &mut Vec<String>,
    ) {
        let mut runner = TestRunner::new(cases());
        if let Err(e) = runner.run(&strategy, check) {
            let what = match e {
                TestError::Fail(reason, _) => reason.to_string(),
                TestError::Abort(reason) => reason.to_string(),
            };
            failures.push(format!("{name}: {what}"));
        }
    }

    let p = pool();
    let lexicon = tbrl::perturb::Lexicon::from_pool(&p);
    let difficulties = [Difficulty::Easy, Difficulty::Medium, Difficulty::Hard];
    let mut failures: Vec<String> = Vec::new();

    // Replay buffer: size never exceeds capacity; FIFO eviction keeps
    // exactly the most recent pushes, in order.
    run(
        "replay_fifo",
        (1usize..40, proptest::collection::vec(any::<u16>(), 0..120)),
        |(capacity, labels)| {
            let mut buffer = tbrl::agent::ReplayBuffer::new(capacity, 0);
            for &label in &labels {
                buffer.push(Transition {
                    obs_text: label.to_string(),
                    action_text: String::new(),
                    reward: 0.0,
                    next_obs_text: String::new(),
                    next_admissible: vec!["look".into()],
                    done: false,
                });
                prop_assert!(buffer.len() <= capacity);
            }
            let kept = labels.len().min(capacity);
            prop_assert_eq!(buffer.len(), kept);
            for i in 0..kept {
                let expected = labels[labels.len() - kept + i].to_string();
                prop_assert_eq!(&buffer.get(i).obs_text, &expected);
            }
            Ok(())
        },
        &mut failures,
    );

    // Softmax: a probability distribution, invariant under shifts.
    run(
        "softmax",
        (proptest::collection::vec(-50.0f64..50.0, 1..16), -20.0f64..20.0),
        |(xs, shift)| {
            let probs = tbrl::numcore::softmax(&xs).expect("softmax on finite logits");
            prop_assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(probs.iter().all(|&v| v > 0.0 && v <= 1.0));
            let shifted: Vec<f64> = xs.iter().map(|x| x + shift).collect();
            let shifted_probs =
                tbrl::numcore::softmax(&shifted).expect("softmax on finite logits");
            for (a, b) in probs.iter().zip(shifted_probs) {
                prop_assert!((a - b).abs() < 1e-9);
            }
            Ok(())
        },
        &mut failures,
    );

    // TD loss: zero exactly at the fixed point q == target, with zero
    // gradient; elsewhere matches its closed form.
    run(
        "td_fixed_point",
        (-10.0f64..10.0, -10.0f64..10.0),
        |(q, target)| {
            let (loss0, grad0) = tbrl::numcore::squared_td_loss(q, q);
            prop_assert_eq!(loss0, 0.0);
            prop_assert_eq!(grad0, 0.0);
            let (loss, grad) = tbrl::numcore::squared_td_loss(q, target);
            prop_assert!((loss - (target - q) * (target - q)).abs() < 1e-12);
            prop_assert!((grad - (-2.0 * (target - q))).abs() < 1e-12);
            Ok(())
        },
        &mut failures,
    );

    // Normalized score: stays in [0, 1] and never decreases along any
    // random walk through any generated game.
    run(
        "normalized_score_bounds",
        (0usize..3, 0u64..500, proptest::collection::vec(any::<u8>(), 1..60)),
        |(d, seed, picks)| {
            let spec = generate_game(difficulties[d], seed, &pool(), VocabMode::Id).unwrap();
            let mut env = GameEnv::new(spec);
            let mut obs = env.reset();
            let mut last = 0.0;
            for &pick in &picks {
                if env.done() {
                    break;
                }
                let action = &obs.admissible_actions[pick as usize % obs.admissible_actions.len()];
                let action = action.clone();
                obs = env.step(&action).unwrap().observation;
                let norm = engine::normalized_score(env.score(), env.max_score()).unwrap();
                prop_assert!((0.0..=1.0).contains(&norm));
                prop_assert!(norm >= last);
                last = norm;
            }
            Ok(())
        },
        &mut failures,
    );

    // Perturbation semantics: the same engine-action sequence drives all
    // three modes through identical underlying states and rewards.
    run(
        "perturbation_semantics",
        (0u64..200, proptest::collection::vec(any::<u8>(), 1..30)),
        |(seed, picks)| {
            use tbrl::perturb::{wrap_env, PerturbMode};
            let spec = generate_game(Difficulty::Medium, seed, &pool(), VocabMode::Id).unwrap();
            let mut raw = GameEnv::new(spec.clone());
            let mut raw_obs = raw.reset();
            let mut wrapped: Vec<_> = [PerturbMode::None, PerturbMode::Paraphrase, PerturbMode::Lexical]
                .into_iter()
                .map(|mode| {
                    let mut env = wrap_env(spec.clone(), mode, lexicon.clone(), seed);
                    env.reset();
                    env
                })
                .collect();
            for &pick in &picks {
                if raw.done() {
                    break;
                }
                let action =
                    raw_obs.admissible_actions[pick as usize % raw_obs.admissible_actions.len()].clone();
                let outcome = raw.step(&action).unwrap();
                for env in &mut wrapped {
                    let shown = env.perturbed_form(&action).expect("engine action admissible");
                    let wrapped_outcome = env.step(&shown).unwrap();
                    prop_assert_eq!(wrapped_outcome.reward.to_bits(), outcome.reward.to_bits());
                    prop_assert_eq!(wrapped_outcome.done, outcome.done);
                    prop_assert_eq!(env.inner_state(), raw.state());
                }
                raw_obs = outcome.observation;
            }
            Ok(())
        },
        &mut failures,
    );

    // Template-fact equivalence: every template set renders the same fact
    // set, and extraction recovers it from the text.
    run(
        "template_fact_equivalence",
        (0usize..3, 0u64..500, proptest::collection::vec(any::<u8>(), 1..20)),
        |(d, seed, picks)| {
            let spec = generate_game(difficulties[d], seed, &pool(), VocabMode::Id).unwrap();
            let mut env = GameEnv::new(spec.clone());
            let mut obs = env.reset();
            for &pick in &picks {
                let truth = engine::observation_facts(env.state(), &spec);
                for set in 0..engine::TEMPLATE_SET_COUNT {
                    let text = engine::render_observation(env.state(), &spec, set).unwrap();
                    prop_assert_eq!(&engine::facts_from_text(&text, &spec), &truth);
                }
                if env.done() {
                    break;
                }
                let action = obs.admissible_actions[pick as usize % obs.admissible_actions.len()].clone();
                obs = env.step(&action).unwrap().observation;
            }
            Ok(())
        },
        &mut failures,
    );

    report(7, failures.is_empty(), &failures.join("; "));
}
