//! Experiment orchestration: configures encoder/agent combinations, trains
//! over generated games, evaluates under vocabulary shift and text
//! perturbations, reports embedding drift, and exposes it all on a CLI.

use crate::agent::{Agent, AgentConfig, Encoder, Policy, QNetParams, TokenUsage};
use crate::engine::{
    generate_game, oracle_solve, ConceptPool, Difficulty, GameEnv, GameSpec, TextEnv, VocabMode,
};
use crate::perturb::{wrap_env, Lexicon, PerturbMode};
use crate::textenc::{synth_pretrain, EmbeddingTable, EncoderParams};
use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum LabError {
    #[error(transparent)]
    Engine(#[from] crate::engine::EngineError),
    #[error(transparent)]
    Agent(#[from] crate::agent::AgentError),
    #[error(transparent)]
    TextEnc(#[from] crate::textenc::TextEncError),
    #[error(transparent)]
    Perturb(#[from] crate::perturb::PerturbError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
    #[error("bad argument: {0}")]
    BadArg(String),
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    /// Salted hash of the whole string to a random unit vector; carries no
    /// lexical semantics at all.
    Hash,
    /// Pretrained embeddings + GRU, weights frozen during RL.
    EmbeddingFrozen,
    /// Pretrained embeddings + GRU, fine-tuned by the RL gradient.
    EmbeddingFinetuned,
}

impl std::str::FromStr for EncoderKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "hash" => Ok(EncoderKind::Hash),
            "embedding_frozen" | "frozen" => Ok(EncoderKind::EmbeddingFrozen),
            "embedding_finetuned" | "finetuned" => Ok(EncoderKind::EmbeddingFinetuned),
            other => Err(format!(
                "unknown encoder {other:?} (expected hash | embedding_frozen | embedding_finetuned)"
            )),
        }
    }
}

impl EncoderKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EncoderKind::Hash => "hash",
            EncoderKind::EmbeddingFrozen => "embedding_frozen",
            EncoderKind::EmbeddingFinetuned => "embedding_finetuned",
        }
    }
}

/// Full desk-scale experiment description. Serializable so a run is
/// reproducible from its config file alone.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub difficulty: Difficulty,
    pub encoder: EncoderKind,
    /// Embedding / hash vector dimension.
    pub dim: usize,
    /// GRU hidden size (both encoder and Q-network).
    pub hidden: usize,
    pub n_train_games: usize,
    /// Evaluation reuses the training seeds first, then fresh ones, so the
    /// default (equal counts) evaluates exactly the training games and their
    /// OOD-vocabulary twins.
    pub n_eval_games: usize,
    pub episodes: usize,
    /// First run seed; runs use base_seed..base_seed + n_runs.
    pub base_seed: u64,
    pub n_runs: usize,
    pub pretrain_seed: u64,
    /// Seed of the first training game; game i uses game_seed_base + i.
    pub game_seed_base: u64,
    pub gamma: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    pub warmup_transitions: usize,
    pub train_every: u32,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let a = AgentConfig::default();
        ExperimentConfig {
            difficulty: Difficulty::Medium,
            encoder: EncoderKind::Hash,
            dim: 24,
            hidden: 24,
            n_train_games: 5,
            n_eval_games: 5,
            episodes: 100,
            base_seed: 1,
            n_runs: 5,
            pretrain_seed: 7,
            game_seed_base: 1000,
            gamma: a.gamma,
            lr: a.lr,
            batch_size: a.batch_size,
            replay_capacity: a.replay_capacity,
            warmup_transitions: a.warmup_transitions,
            train_every: a.train_every,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, LabError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    fn agent_config(&self, run_seed: u64) -> AgentConfig {
        AgentConfig {
            gamma: self.gamma,
            lr: self.lr,
            batch_size: self.batch_size,
            replay_capacity: self.replay_capacity,
            warmup_transitions: self.warmup_transitions,
            train_every: self.train_every,
            fine_tune_encoder: self.encoder == EncoderKind::EmbeddingFinetuned,
            seed: run_seed,
        }
    }
}

// ---------------------------------------------------------------------------
// Running experiments
// ---------------------------------------------------------------------------

/// One training episode's outcome; the pinned CSV row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub run_seed: u64,
    pub episode: usize,
    pub game_id: u64,
    pub score: u32,
    pub max_score: u32,
    pub normalized_score: f64,
    pub moves: u32,
    pub mean_loss: f64,
}

pub const EPISODE_CSV_HEADER: &str =
    "run_seed,episode,game_id,score,max_score,normalized_score,moves,mean_loss";

/// Everything produced by one seeded run.
pub struct RunResult {
    pub seed: u64,
    pub episodes: Vec<EpisodeRow>,
    /// condition name -> mean normalized evaluation score.
    pub eval: BTreeMap<String, f64>,
    pub agent: Agent,
    /// Embedding table before any RL training (GRU encoders only).
    pub pretrained: Option<EmbeddingTable>,
}

/// Builds the encoder for one run. Hash encoders are salted by the run
/// seed; GRU encoders share the pretrained table across runs and differ
/// only in their recurrent initialization.
pub fn build_encoder(cfg: &ExperimentConfig, pool: &ConceptPool, run_seed: u64) -> Encoder {
    match cfg.encoder {
        EncoderKind::Hash => Encoder::Hash { dim: cfg.dim, salt: run_seed },
        EncoderKind::EmbeddingFrozen | EncoderKind::EmbeddingFinetuned => {
            let table = synth_pretrain(
                pool,
                &crate::engine::template_vocabulary(),
                cfg.dim,
                cfg.pretrain_seed,
            );
            let frozen = cfg.encoder == EncoderKind::EmbeddingFrozen;
            Encoder::Gru(EncoderParams::new(table, cfg.hidden, frozen, run_seed ^ 0xE0C0))
        }
    }
}

/// The training game for index i, ID vocabulary.
pub fn train_spec(
    cfg: &ExperimentConfig,
    pool: &ConceptPool,
    i: usize,
) -> Result<GameSpec, LabError> {
    Ok(generate_game(cfg.difficulty, cfg.game_seed_base + i as u64, pool, VocabMode::Id)?)
}

fn eval_specs(
    cfg: &ExperimentConfig,
    pool: &ConceptPool,
    mode: VocabMode,
) -> Result<Vec<GameSpec>, LabError> {
    (0..cfg.n_eval_games)
        .map(|i| Ok(generate_game(cfg.difficulty, cfg.game_seed_base + i as u64, pool, mode)?))
        .collect()
}

fn eval_mean<E: TextEnv>(
    agent: &mut Agent,
    mut envs: Vec<E>,
) -> Result<f64, LabError> {
    let mut total = 0.0;
    for env in &mut envs {
        let res = agent.play_episode(env, Policy::Greedy, false)?;
        total += res.normalized;
    }
    Ok(total / envs.len().max(1) as f64)
}

/// Trains and evaluates one seeded run: `episodes` training episodes cycling
/// the training games, then greedy evaluation under four conditions: the ID
/// games, their OOD-vocabulary twins, and lexical / paraphrase perturbations
/// of the ID games.
pub fn run_one(
    cfg: &ExperimentConfig,
    pool: &ConceptPool,
    run_seed: u64,
) -> Result<RunResult, LabError> {
    let encoder = build_encoder(cfg, pool, run_seed);
    let pretrained = match &encoder {
        Encoder::Gru(p) => Some(p.embedding.clone()),
        Encoder::Hash { .. } => None,
    };
    let mut agent = Agent::new(encoder, cfg.agent_config(run_seed));

    let train_specs: Vec<GameSpec> =
        (0..cfg.n_train_games).map(|i| train_spec(cfg, pool, i)).collect::<Result<_, _>>()?;

    let mut episodes = Vec::with_capacity(cfg.episodes);
    for ep in 0..cfg.episodes {
        let spec = &train_specs[ep % train_specs.len()];
        let mut env = GameEnv::new(spec.clone());
        let res = agent.play_episode(&mut env, Policy::Sample, true)?;
        episodes.push(EpisodeRow {
            run_seed,
            episode: ep,
            game_id: spec.seed,
            score: res.score,
            max_score: res.max_score,
            normalized_score: res.normalized,
            moves: res.moves,
            mean_loss: res.mean_loss,
        });
    }

    let mut eval = BTreeMap::new();
    let id_specs = eval_specs(cfg, pool, VocabMode::Id)?;
    let ood_specs = eval_specs(cfg, pool, VocabMode::Ood)?;
    let lexicon = Lexicon::from_pool(pool);
    eval.insert(
        "id".to_string(),
        eval_mean(&mut agent, id_specs.iter().map(|s| GameEnv::new(s.clone())).collect())?,
    );
    eval.insert(
        "ood".to_string(),
        eval_mean(&mut agent, ood_specs.iter().map(|s| GameEnv::new(s.clone())).collect())?,
    );
    eval.insert(
        "lexical".to_string(),
        eval_mean(
            &mut agent,
            id_specs
                .iter()
                .map(|s| wrap_env(s.clone(), PerturbMode::Lexical, lexicon.clone(), run_seed))
                .collect(),
        )?,
    );
    eval.insert(
        "paraphrase".to_string(),
        eval_mean(
            &mut agent,
            id_specs
                .iter()
                .map(|s| wrap_env(s.clone(), PerturbMode::Paraphrase, lexicon.clone(), run_seed))
                .collect(),
        )?,
    );

    Ok(RunResult { seed: run_seed, episodes, eval, agent, pretrained })
}

/// Mean and sample standard deviation (n-1). A single run reports std 0 and
/// sets the flag.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
    pub single_run: bool,
}

pub fn aggregate(values: &[f64]) -> Aggregate {
    let n = values.len();
    assert!(n > 0, "aggregate of no values");
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Aggregate { mean, std, n, single_run: n == 1 }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub config: ExperimentConfig,
    /// condition -> aggregate over run seeds.
    pub eval: BTreeMap<String, Aggregate>,
    /// Mean normalized training score over the last quarter of episodes,
    /// aggregated over runs.
    pub train_tail: Aggregate,
}

/// Runs every seed of the experiment and writes all artifacts under
/// `out_dir`: per-run episode CSVs, evaluation JSON, checkpoints, drift
/// reports, embedding snapshots, plus a top-level summary.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    pool: &ConceptPool,
    out_dir: &Path,
) -> Result<ExperimentSummary, LabError> {
    std::fs::create_dir_all(out_dir)?;
    let mut per_condition: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut tails = Vec::new();
    for run_seed in cfg.base_seed..cfg.base_seed + cfg.n_runs as u64 {
        let result = run_one(cfg, pool, run_seed)?;
        let run_dir = out_dir.join(format!("run{run_seed}"));
        std::fs::create_dir_all(&run_dir)?;
        write_episode_csv(&run_dir.join("episodes.csv"), &result.episodes)?;
        std::fs::write(
            run_dir.join("eval.json"),
            serde_json::to_string_pretty(&result.eval)?,
        )?;
        save_checkpoint(&run_dir.join("checkpoint.json"), &result.agent)?;
        if let Encoder::Gru(p) = &result.agent.encoder {
            if let Some(pre) = &result.pretrained {
                pre.write_glove(&run_dir.join("embedding_start.glove"))?;
            }
            p.embedding.write_glove(&run_dir.join("embedding_end.glove"))?;
            let report = drift_report(&p.embedding, &result.agent.usage, 10);
            std::fs::write(
                run_dir.join("drift.json"),
                serde_json::to_string_pretty(&report)?,
            )?;
        }
        for (cond, v) in &result.eval {
            per_condition.entry(cond.clone()).or_default().push(*v);
        }
        let tail_from = result.episodes.len() - result.episodes.len() / 4;
        let tail: Vec<f64> =
            result.episodes[tail_from..].iter().map(|e| e.normalized_score).collect();
        tails.push(tail.iter().sum::<f64>() / tail.len().max(1) as f64);
    }
    let summary = ExperimentSummary {
        config: cfg.clone(),
        eval: per_condition.iter().map(|(k, v)| (k.clone(), aggregate(v))).collect(),
        train_tail: aggregate(&tails),
    };
    std::fs::write(out_dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(summary)
}

fn write_episode_csv(path: &Path, rows: &[EpisodeRow]) -> Result<(), LabError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "{EPISODE_CSV_HEADER}")?;
    for r in rows {
        writeln!(
            f,
            "{},{},{},{},{},{},{},{}",
            r.run_seed,
            r.episode,
            r.game_id,
            r.score,
            r.max_score,
            r.normalized_score,
            r.moves,
            r.mean_loss
        )?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

/// The persistent part of an agent. Optimizer moments, replay contents and
/// caches are deliberately not checkpointed; a reloaded agent is for
/// evaluation and analysis.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub encoder: Encoder,
    pub qnet: QNetParams,
    pub config: AgentConfig,
    pub usage: TokenUsage,
}

pub fn save_checkpoint(path: &Path, agent: &Agent) -> Result<(), LabError> {
    let ckpt = Checkpoint {
        encoder: agent.encoder.clone(),
        qnet: agent.qnet.clone(),
        config: agent.config.clone(),
        usage: agent.usage.clone(),
    };
    std::fs::write(path, serde_json::to_string(&ckpt)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Agent, LabError> {
    let ckpt: Checkpoint = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    let mut agent = Agent::new(ckpt.encoder, ckpt.config);
    agent.qnet = ckpt.qnet;
    agent.usage = ckpt.usage;
    Ok(agent)
}

// ---------------------------------------------------------------------------
// Drift analysis
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DriftPartition {
    pub n: usize,
    pub mean_drift: f64,
    pub degenerate: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DriftReport {
    /// Tokens of transitions that carried positive reward.
    pub rewarded: DriftPartition,
    /// Tokens seen during training but never in a rewarded transition.
    pub unrewarded: DriftPartition,
    /// Vocabulary entries never observed in training text.
    pub never_seen: DriftPartition,
    /// Highest-drift tokens, (token, cosine distance), descending.
    pub top: Vec<(String, f64)>,
}

fn summarize(items: &[(String, f64, bool)]) -> DriftPartition {
    DriftPartition {
        n: items.len(),
        mean_drift: if items.is_empty() {
            0.0
        } else {
            items.iter().map(|(_, d, _)| d).sum::<f64>() / items.len() as f64
        },
        degenerate: items.iter().filter(|(_, _, deg)| *deg).count(),
    }
}

/// Partitions vocabulary drift by how training used each token. The three
/// partitions are disjoint and cover the vocabulary.
pub fn drift_report(table: &EmbeddingTable, usage: &TokenUsage, top_k: usize) -> DriftReport {
    let drift = table.drift();
    let mut rewarded = Vec::new();
    let mut unrewarded = Vec::new();
    let mut never = Vec::new();
    for entry in &drift {
        if usage.rewarded.contains(&entry.0) {
            rewarded.push(entry.clone());
        } else if usage.seen.contains(&entry.0) {
            unrewarded.push(entry.clone());
        } else {
            never.push(entry.clone());
        }
    }
    let mut sorted = drift.clone();
    sorted.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    DriftReport {
        rewarded: summarize(&rewarded),
        unrewarded: summarize(&unrewarded),
        never_seen: summarize(&never),
        top: sorted.into_iter().take(top_k).map(|(t, d, _)| (t, d)).collect(),
    }
}

// ---------------------------------------------------------------------------
// 2-D projection
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Projection {
    /// (token, x, y) coordinates under the top two principal components.
    pub points: Vec<(String, f64, f64)>,
    /// Set when the centered matrix has rank < 2 (projection collapses).
    pub degenerate: bool,
}

/// Projects the embedding rows to 2-D by PCA on the mean-centered matrix.
/// Deterministic: eigenvectors are ordered by eigenvalue and each component's
/// sign is fixed so its largest-magnitude loading is positive.
pub fn project_2d(table: &EmbeddingTable) -> Projection {
    let n = table.vocab_size();
    let d = table.dim;
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(table.matrix.row(i)) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    // Covariance (d x d), symmetric by construction.
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for i in 0..n {
        let row = table.matrix.row(i);
        for a in 0..d {
            let xa = row[a] - mean[a];
            for b in a..d {
                let v = xa * (row[b] - mean[b]);
                cov[(a, b)] += v;
                if a != b {
                    cov[(b, a)] += v;
                }
            }
        }
    }
    cov /= (n.max(2) - 1) as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let mut components = Vec::with_capacity(2);
    for &k in order.iter().take(2) {
        let mut comp: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
        // Sign convention: largest-|loading| coordinate positive.
        let lead = comp
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
            .map(|(i, _)| i)
            .unwrap_or(0);
        if comp[lead] < 0.0 {
            for c in &mut comp {
                *c = -*c;
            }
        }
        components.push(comp);
    }
    let degenerate = order.len() < 2 || eig.eigenvalues[order[1]] <= 1e-12;
    let points = (0..n)
        .map(|i| {
            let row = table.matrix.row(i);
            let proj = |comp: &[f64]| -> f64 {
                row.iter().zip(&mean).zip(comp).map(|((v, m), c)| (v - m) * c).sum()
            };
            (table.tokens[i].clone(), proj(&components[0]), proj(&components[1]))
        })
        .collect();
    Projection { points, degenerate }
}

// ---------------------------------------------------------------------------
// CLI
// ---------------------------------------------------------------------------

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "tbrl", version, about = "Desk-scale text-based RL laboratory")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate games, verify solvability, and write their specs as JSON.
    Gen {
        #[arg(long, default_value = "medium")]
        difficulty: Difficulty,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long, default_value = "id")]
        vocab: String,
        #[arg(long, default_value = "games")]
        out_dir: PathBuf,
        #[arg(long)]
        pool: Option<PathBuf>,
    },
    /// Train one experiment (all run seeds) and write artifacts.
    Train {
        /// JSON experiment config; defaults apply for missing fields.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override the config's encoder kind.
        #[arg(long)]
        encoder: Option<EncoderKind>,
        /// Override the config's difficulty.
        #[arg(long)]
        difficulty: Option<Difficulty>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        #[arg(long)]
        pool: Option<PathBuf>,
    },
    /// Greedy-evaluate a checkpoint on a game spec.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Game spec JSON written by `gen`.
        #[arg(long)]
        game: PathBuf,
    },
    /// Greedy-evaluate a checkpoint on a perturbed game.
    PerturbEval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        game: PathBuf,
        /// none | paraphrase | lexical
        #[arg(long)]
        mode: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        pool: Option<PathBuf>,
    },
    /// Print the usage-partitioned embedding drift report of a checkpoint.
    Drift {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 10)]
        top_k: usize,
    },
    /// Project a checkpoint's embedding table to 2-D and write CSV.
    Project {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "projection.csv")]
        out: PathBuf,
    },
    /// Play a generated game interactively on stdin/stdout.
    Play {
        #[arg(long, default_value = "medium")]
        difficulty: Difficulty,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "id")]
        vocab: String,
        #[arg(long)]
        pool: Option<PathBuf>,
    },
}

fn parse_vocab(s: &str) -> Result<VocabMode, LabError> {
    match s {
        "id" => Ok(VocabMode::Id),
        "ood" => Ok(VocabMode::Ood),
        other => Err(LabError::BadArg(format!("unknown vocab {other:?} (expected id | ood)"))),
    }
}

fn parse_mode(s: &str) -> Result<PerturbMode, LabError> {
    match s {
        "none" => Ok(PerturbMode::None),
        "paraphrase" => Ok(PerturbMode::Paraphrase),
        "lexical" => Ok(PerturbMode::Lexical),
        other => Err(LabError::BadArg(format!(
            "unknown mode {other:?} (expected none | paraphrase | lexical)"
        ))),
    }
}

/// Locates the concept pool: explicit flag, TBRL_POOL env var, or the
/// bundled data file.
pub fn load_pool(explicit: Option<&Path>) -> Result<ConceptPool, LabError> {
    if let Some(p) = explicit {
        return Ok(ConceptPool::load(p)?);
    }
    if let Ok(p) = std::env::var("TBRL_POOL") {
        return Ok(ConceptPool::load(Path::new(&p))?);
    }
    let bundled = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/concepts.json");
    Ok(ConceptPool::load(&bundled)?)
}

fn run_cli(cli: Cli) -> Result<(), LabError> {
    match cli.cmd {
        Cmd::Gen { difficulty, seed, count, vocab, out_dir, pool } => {
            let pool = load_pool(pool.as_deref())?;
            let vocab = parse_vocab(&vocab)?;
            std::fs::create_dir_all(&out_dir)?;
            for i in 0..count {
                let s = seed + i as u64;
                let spec = generate_game(difficulty, s, &pool, vocab)?;
                let solution = oracle_solve(&spec);
                let path = out_dir.join(format!("game_{}_{s}.json", difficulty.as_str()));
                std::fs::write(&path, spec.to_json())?;
                match solution {
                    Some(sol) => println!(
                        "{}: max_score={} oracle_moves={}",
                        path.display(),
                        spec.max_score(),
                        sol.len()
                    ),
                    None => println!("{}: UNSOLVABLE", path.display()),
                }
            }
            Ok(())
        }
        Cmd::Train { config, encoder, difficulty, out_dir, pool } => {
            let pool = load_pool(pool.as_deref())?;
            let mut cfg = match config {
                Some(p) => ExperimentConfig::load(&p)?,
                None => ExperimentConfig::default(),
            };
            if let Some(e) = encoder {
                cfg.encoder = e;
            }
            if let Some(d) = difficulty {
                cfg.difficulty = d;
            }
            let summary = run_experiment(&cfg, &pool, &out_dir)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
            Ok(())
        }
        Cmd::Eval { checkpoint, game } => {
            let mut agent = load_checkpoint(&checkpoint)?;
            let spec = GameSpec::from_json(&std::fs::read_to_string(&game)?)?;
            let mut env = GameEnv::new(spec);
            let res = agent.play_episode(&mut env, Policy::Greedy, false)?;
            println!(
                "score={}/{} normalized={} moves={}",
                res.score, res.max_score, res.normalized, res.moves
            );
            Ok(())
        }
        Cmd::PerturbEval { checkpoint, game, mode, seed, pool } => {
            let mut agent = load_checkpoint(&checkpoint)?;
            let spec = GameSpec::from_json(&std::fs::read_to_string(&game)?)?;
            let mode = parse_mode(&mode)?;
            let lexicon = Lexicon::from_pool(&load_pool(pool.as_deref())?);
            let mut env = wrap_env(spec, mode, lexicon, seed);
            let res = agent.play_episode(&mut env, Policy::Greedy, false)?;
            println!(
                "mode={} score={}/{} normalized={} moves={}",
                mode.as_str(),
                res.score,
                res.max_score,
                res.normalized,
                res.moves
            );
            Ok(())
        }
        Cmd::Drift { checkpoint, top_k } => {
            let agent = load_checkpoint(&checkpoint)?;
            match &agent.encoder {
                Encoder::Gru(p) => {
                    let report = drift_report(&p.embedding, &agent.usage, top_k);
                    println!("{}", serde_json::to_string_pretty(&report)?);
                    Ok(())
                }
                Encoder::Hash { .. } => {
                    Err(LabError::BadArg("hash encoders have no embedding to drift".into()))
                }
            }
        }
        Cmd::Project { checkpoint, out } => {
            let agent = load_checkpoint(&checkpoint)?;
            match &agent.encoder {
                Encoder::Gru(p) => {
                    let projection = project_2d(&p.embedding);
                    let mut f = std::io::BufWriter::new(std::fs::File::create(&out)?);
                    writeln!(f, "token,x,y")?;
                    for (t, x, y) in &projection.points {
                        writeln!(f, "{t},{x},{y}")?;
                    }
                    if projection.degenerate {
                        eprintln!("warning: projection is degenerate (rank < 2)");
                    }
                    println!("wrote {} points to {}", projection.points.len(), out.display());
                    Ok(())
                }
                Encoder::Hash { .. } => {
                    Err(LabError::BadArg("hash encoders have no embedding to project".into()))
                }
            }
        }
        Cmd::Play { difficulty, seed, vocab, pool } => {
            let pool = load_pool(pool.as_deref())?;
            let spec = generate_game(difficulty, seed, &pool, parse_vocab(&vocab)?)?;
            play(spec)
        }
    }
}

/// Interactive stdin loop; type an action number or its full text.
fn play(spec: GameSpec) -> Result<(), LabError> {
    let mut env = GameEnv::new(spec);
    let mut obs = env.reset();
    let stdin = std::io::stdin();
    loop {
        println!("\n{}", obs.text);
        println!("score {}/{}  steps {}", env.score(), env.max_score(), env.steps());
        if env.done() {
            println!("game over");
            return Ok(());
        }
        for (i, a) in obs.admissible_actions.iter().enumerate() {
            println!("  [{i}] {a}");
        }
        print!("> ");
        std::io::stdout().flush()?;
        let mut line = String::new();
        if stdin.read_line(&mut line)? == 0 {
            return Ok(());
        }
        let line = line.trim();
        if line == "quit" || line == "exit" {
            return Ok(());
        }
        let action = match line.parse::<usize>() {
            Ok(i) if i < obs.admissible_actions.len() => obs.admissible_actions[i].clone(),
            _ => line.to_string(),
        };
        match env.step(&action) {
            Ok(outcome) => {
                if outcome.reward > 0.0 {
                    println!("(+{} reward)", outcome.reward);
                }
                obs = outcome.observation;
            }
            Err(e) => println!("{e}"),
        }
    }
}

pub fn cli_main() {
    let cli = Cli::parse();
    if let Err(e) = run_cli(cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
