//! DRRN-style agent: Q(o, a) = g(f(o), f(a)) with a state-action GRU and a
//! linear scorer, softmax action sampling, uniform experience replay, and TD
//! training that optionally backpropagates into the text encoder.

use crate::engine::{EngineError, TextEnv};
use crate::numcore::{
    adam_step, gru_backward, gru_forward, softmax, squared_td_loss, AdamConfig, AdamState,
    GruParams, Mat, NumError,
};
use crate::textenc::{tokenize, hash_encode, EncoderParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error("empty q-value vector")]
    EmptyQValues,
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

// ---------------------------------------------------------------------------
// Replay buffer
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub obs_text: String,
    pub action_text: String,
    pub reward: f64,
    pub next_obs_text: String,
    pub next_admissible: Vec<String>,
    pub done: bool,
}

/// Ring buffer with FIFO eviction and uniform sampling with replacement.
#[derive(Clone)]
pub struct ReplayBuffer {
    buf: VecDeque<Transition>,
    capacity: usize,
    rng: ChaCha8Rng,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, seed: u64) -> Self {
        ReplayBuffer {
            buf: VecDeque::with_capacity(capacity),
            capacity,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn push(&mut self, t: Transition) {
        if self.buf.len() == self.capacity {
            self.buf.pop_front();
        }
        self.buf.push_back(t);
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.buf[i]
    }

    pub fn contains(&self, t: &Transition) -> bool {
        self.buf.iter().any(|x| x == t)
    }

    pub fn sample_indices(&mut self, n: usize) -> Vec<usize> {
        (0..n).map(|_| self.rng.gen_range(0..self.buf.len())).collect()
    }
}

// ---------------------------------------------------------------------------
// Config and parameters
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AgentConfig {
    pub gamma: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    pub warmup_transitions: usize,
    pub train_every: u32,
    pub fine_tune_encoder: bool,
    pub seed: u64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            gamma: 0.9,
            lr: 1e-3,
            batch_size: 32,
            replay_capacity: 10_000,
            warmup_transitions: 100,
            train_every: 1,
            fine_tune_encoder: false,
            seed: 0,
        }
    }
}

/// The RL network phi: state-action GRU plus a linear head to a scalar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QNetParams {
    pub sa_gru: GruParams,
    pub head_w: Vec<f64>,
    pub head_b: f64,
}

impl QNetParams {
    pub fn new(hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sa_gru = GruParams::glorot(hidden, hidden, &mut rng);
        // Small head init keeps untrained Q near zero, so greedy play
        // prefers actions whose value TD learning has actually raised.
        let s = 1e-2;
        let head_w = (0..hidden).map(|_| rng.gen_range(-s..s)).collect();
        QNetParams { sa_gru, head_w, head_b: 0.0 }
    }

    pub fn hidden(&self) -> usize {
        self.sa_gru.hidden
    }
}

/// Text encoder families. `Hash` reduces the whole string to a salted random
/// unit vector; `Gru` runs token embeddings through a GRU.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Encoder {
    Hash { dim: usize, salt: u64 },
    Gru(EncoderParams),
}

impl Encoder {
    pub fn out_dim(&self) -> usize {
        match self {
            Encoder::Hash { dim, .. } => *dim,
            Encoder::Gru(p) => p.hidden(),
        }
    }

    pub fn encode(&self, text: &str) -> Vec<f64> {
        match self {
            Encoder::Hash { dim, salt } => hash_encode(text, *dim, *salt),
            Encoder::Gru(p) => p.encode(text),
        }
    }

    /// Whether training gradients may flow into this encoder.
    pub fn trainable(&self, fine_tune: bool) -> bool {
        match self {
            Encoder::Hash { .. } => false,
            Encoder::Gru(p) => fine_tune && !p.frozen,
        }
    }
}

// ---------------------------------------------------------------------------
// Free operations
// ---------------------------------------------------------------------------

/// Bellman target; no gradient flows through `max_next_q`.
pub fn td_target(reward: f64, gamma: f64, max_next_q: f64, done: bool) -> f64 {
    if done {
        reward
    } else {
        reward + gamma * max_next_q
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Policy {
    Sample,
    Greedy,
}

/// Sample mode draws from softmax(q); greedy takes the argmax with ties
/// broken by lowest index.
pub fn select_action(
    q_values: &[f64],
    mode: Policy,
    rng: &mut ChaCha8Rng,
) -> Result<usize, AgentError> {
    if q_values.is_empty() {
        return Err(AgentError::EmptyQValues);
    }
    match mode {
        Policy::Greedy => {
            let mut best = 0;
            for (i, &q) in q_values.iter().enumerate() {
                if q > q_values[best] {
                    best = i;
                }
            }
            Ok(best)
        }
        Policy::Sample => {
            let probs = softmax(q_values)?;
            let draw: f64 = rng.gen();
            let mut acc = 0.0;
            for (i, p) in probs.iter().enumerate() {
                acc += p;
                if draw < acc {
                    return Ok(i);
                }
            }
            Ok(probs.len() - 1)
        }
    }
}

// ---------------------------------------------------------------------------
// Agent
// ---------------------------------------------------------------------------

/// Tokens observed in training transitions, split by whether the transition
/// paid a reward. Feeds the drift report.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TokenUsage {
    pub rewarded: BTreeSet<String>,
    pub seen: BTreeSet<String>,
}

impl TokenUsage {
    fn record(&mut self, t: &Transition) {
        for tok in tokenize(&t.obs_text).into_iter().chain(tokenize(&t.action_text)) {
            if t.reward > 0.0 {
                self.rewarded.insert(tok.clone());
            }
            self.seen.insert(tok);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    pub score: u32,
    pub max_score: u32,
    pub normalized: f64,
    pub moves: u32,
    pub mean_loss: f64,
}

/// Gradients for one batch, shaped like the trainable parameters.
pub struct BatchGrads {
    pub sa: GruParams,
    pub head_w: Vec<f64>,
    pub head_b: f64,
    pub enc_gru: Option<GruParams>,
    pub emb: Option<Mat>,
}

#[derive(Clone)]
pub struct Agent {
    pub encoder: Encoder,
    pub qnet: QNetParams,
    pub config: AgentConfig,
    pub buffer: ReplayBuffer,
    pub usage: TokenUsage,
    rng: ChaCha8Rng,
    adam: AdamConfig,
    opt_states: BTreeMap<String, AdamState>,
    opt_t: u64,
    /// f(text) memo, valid only while the encoder cannot change.
    frozen_cache: HashMap<String, Vec<f64>>,
    env_steps: u32,
}

impl Agent {
    pub fn new(encoder: Encoder, config: AgentConfig) -> Self {
        let hidden = encoder.out_dim();
        let qnet = QNetParams::new(hidden, config.seed.wrapping_add(0x51));
        let buffer = ReplayBuffer::new(config.replay_capacity, config.seed.wrapping_add(0x52));
        let rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x53));
        let adam = AdamConfig { lr: config.lr, ..Default::default() };
        Agent {
            encoder,
            qnet,
            config,
            buffer,
            usage: TokenUsage::default(),
            rng,
            adam,
            opt_states: BTreeMap::new(),
            opt_t: 0,
            frozen_cache: HashMap::new(),
            env_steps: 0,
        }
    }

    fn encoder_is_static(&self) -> bool {
        !self.encoder.trainable(self.config.fine_tune_encoder)
    }

    fn encode_memo(&mut self, text: &str) -> Vec<f64> {
        if self.encoder_is_static() {
            if let Some(v) = self.frozen_cache.get(text) {
                return v.clone();
            }
            let v = self.encoder.encode(text);
            self.frozen_cache.insert(text.to_string(), v.clone());
            return v;
        }
        self.encoder.encode(text)
    }

    /// Q(o, a): the state-action GRU consumes (f(o), f(a)) from a zero
    /// hidden state; the head maps the final hidden state to a scalar.
    pub fn q_value(&self, obs_text: &str, action_text: &str) -> f64 {
        let fo = self.encoder.encode(obs_text);
        let fa = self.encoder.encode(action_text);
        q_from_encodings(&self.qnet, &fo, &fa)
    }

    /// Q-values for every action against one observation, with encoding memo.
    pub fn q_values(&mut self, obs_text: &str, actions: &[String]) -> Vec<f64> {
        let fo = self.encode_memo(obs_text);
        actions
            .iter()
            .map(|a| {
                let fa = self.encode_memo(a);
                q_from_encodings(&self.qnet, &fo, &fa)
            })
            .collect()
    }

    /// Bellman targets for a batch, computed with current parameters and
    /// treated as constants during the gradient step.
    pub fn compute_targets(&mut self, indices: &[usize]) -> Vec<f64> {
        let mut targets = Vec::with_capacity(indices.len());
        for &i in indices {
            let t = self.buffer.get(i).clone();
            let target = if t.done {
                t.reward
            } else {
                let qs = self.q_values(&t.next_obs_text, &t.next_admissible);
                let max_q = qs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                td_target(t.reward, self.config.gamma, max_q, false)
            };
            targets.push(target);
        }
        targets
    }

    /// Mean TD loss and its gradients over a sampled batch. Does not touch
    /// the parameters.
    pub fn batch_loss_and_grads(&self, indices: &[usize], targets: &[f64]) -> (f64, BatchGrads) {
        let hidden = self.qnet.hidden();
        let train_enc = !self.encoder_is_static();
        let enc_gru_shape = match &self.encoder {
            Encoder::Gru(p) => Some((p.embedding.dim, p.gru.hidden)),
            Encoder::Hash { .. } => None,
        };
        let mut grads = BatchGrads {
            sa: GruParams::zeros(hidden, hidden),
            head_w: vec![0.0; hidden],
            head_b: 0.0,
            enc_gru: if train_enc {
                enc_gru_shape.map(|(i, h)| GruParams::zeros(i, h))
            } else {
                None
            },
            emb: if train_enc {
                match &self.encoder {
                    Encoder::Gru(p) => {
                        Some(Mat::zeros(p.embedding.vocab_size(), p.embedding.dim))
                    }
                    Encoder::Hash { .. } => None,
                }
            } else {
                None
            },
        };
        let batch = indices.len() as f64;
        let mut total_loss = 0.0;

        for (&i, &target) in indices.iter().zip(targets) {
            let t = self.buffer.get(i);
            // Encoder forward with caches kept when gradients must flow back.
            let (fo, fa, enc_caches) = match &self.encoder {
                Encoder::Hash { dim, salt } => (
                    hash_encode(&t.obs_text, *dim, *salt),
                    hash_encode(&t.action_text, *dim, *salt),
                    None,
                ),
                Encoder::Gru(p) => {
                    let (fo, co, ro) = p.encode_cached(&t.obs_text);
                    let (fa, ca, ra) = p.encode_cached(&t.action_text);
                    (fo, fa, Some(((co, ro), (ca, ra))))
                }
            };
            let (h2, sa_cache) = gru_forward(&self.qnet.sa_gru, &[fo, fa]).expect("sa dims");
            let q: f64 =
                self.qnet.head_w.iter().zip(&h2).map(|(w, h)| w * h).sum::<f64>() + self.qnet.head_b;

            let (loss, dq_raw) = squared_td_loss(q, target);
            total_loss += loss / batch;
            let dq = dq_raw / batch;

            for (gw, h) in grads.head_w.iter_mut().zip(&h2) {
                *gw += dq * h;
            }
            grads.head_b += dq;
            let dh2: Vec<f64> = self.qnet.head_w.iter().map(|w| w * dq).collect();
            let (sa_g, dxs) = gru_backward(&self.qnet.sa_gru, &sa_cache, &dh2).expect("sa bwd");
            accumulate_gru(&mut grads.sa, &sa_g);

            if train_enc {
                if let (Encoder::Gru(p), Some(((co, ro), (ca, ra)))) = (&self.encoder, &enc_caches)
                {
                    for (cache, rows, dfe) in [(co, ro, &dxs[0]), (ca, ra, &dxs[1])] {
                        let (enc_g, dcols) = gru_backward(&p.gru, cache, dfe).expect("enc bwd");
                        accumulate_gru(grads.enc_gru.as_mut().unwrap(), &enc_g);
                        let emb = grads.emb.as_mut().unwrap();
                        for (row, dcol) in rows.iter().zip(&dcols) {
                            for (cell, d) in emb.row_mut(*row).iter_mut().zip(dcol) {
                                *cell += d;
                            }
                        }
                    }
                }
            }
        }
        (total_loss, grads)
    }

    fn adam_apply(&mut self, name: &str, param: &mut [f64], grad: &[f64]) -> Result<(), NumError> {
        let state = self
            .opt_states
            .entry(name.to_string())
            .or_insert_with(|| AdamState::new(param.len()));
        adam_step(param, grad, state, self.opt_t, &self.adam)
    }

    /// One TD training step: sample, backpropagate, Adam. Returns the batch
    /// mean loss, or None when the buffer is below warmup (no-op).
    pub fn train_step(&mut self) -> Result<Option<f64>, AgentError> {
        if self.buffer.len() < self.config.warmup_transitions {
            return Ok(None);
        }
        let indices = self.buffer.sample_indices(self.config.batch_size);
        let targets = self.compute_targets(&indices);
        let (loss, grads) = self.batch_loss_and_grads(&indices, &targets);

        self.opt_t += 1;
        let mut qnet = std::mem::replace(&mut self.qnet, QNetParams::new(1, 0));
        for ((name, param), (_, grad)) in
            qnet.sa_gru.tensors_mut().into_iter().zip(grads.sa.tensors())
        {
            self.adam_apply(&format!("sa.{name}"), param, grad)?;
        }
        self.adam_apply("head.w", &mut qnet.head_w, &grads.head_w)?;
        let mut hb = [qnet.head_b];
        self.adam_apply("head.b", &mut hb, &[grads.head_b])?;
        qnet.head_b = hb[0];
        self.qnet = qnet;

        if let (Some(enc_g), Some(emb_g)) = (&grads.enc_gru, &grads.emb) {
            let mut encoder = std::mem::replace(&mut self.encoder, Encoder::Hash { dim: 1, salt: 0 });
            if let Encoder::Gru(p) = &mut encoder {
                for ((name, param), (_, grad)) in
                    p.gru.tensors_mut().into_iter().zip(enc_g.tensors())
                {
                    self.adam_apply(&format!("enc.{name}"), param, grad)?;
                }
                self.adam_apply("enc.emb", &mut p.embedding.matrix.data, &emb_g.data)?;
            }
            self.encoder = encoder;
        }
        Ok(Some(loss))
    }

    /// Runs one episode. In learn mode every transition is pushed to replay
    /// and a training step runs every `train_every` environment steps.
    pub fn play_episode(
        &mut self,
        env: &mut dyn TextEnv,
        policy: Policy,
        learn: bool,
    ) -> Result<EpisodeResult, AgentError> {
        let mut obs = env.reset();
        let mut losses: Vec<f64> = Vec::new();
        while !env.done() {
            let qs = self.q_values(&obs.text, &obs.admissible_actions);
            let choice = select_action(&qs, policy, &mut self.rng)?;
            let action = obs.admissible_actions[choice].clone();
            let outcome = env.step(&action)?;
            // Truncation at max_steps is not a true terminal: bootstrap
            // through it. Goal completion is terminal.
            let solved = env.score() == env.max_score();
            let transition = Transition {
                obs_text: obs.text.clone(),
                action_text: action,
                reward: outcome.reward,
                next_obs_text: outcome.observation.text.clone(),
                next_admissible: outcome.observation.admissible_actions.clone(),
                done: outcome.done && solved,
            };
            if learn {
                self.usage.record(&transition);
                self.buffer.push(transition);
                self.env_steps += 1;
                if self.env_steps % self.config.train_every == 0 {
                    if let Some(loss) = self.train_step()? {
                        losses.push(loss);
                    }
                }
            }
            obs = outcome.observation;
        }
        let score = env.score();
        let max_score = env.max_score();
        let mean_loss = if losses.is_empty() {
            0.0
        } else {
            losses.iter().sum::<f64>() / losses.len() as f64
        };
        Ok(EpisodeResult {
            score,
            max_score,
            normalized: crate::engine::normalized_score(score, max_score)?,
            moves: env.steps(),
            mean_loss,
        })
    }

    /// Flattens trainable parameters (and optionally the encoder's) for
    /// gradient checking and checkpoint round-trips.
    pub fn flat_params(&self, include_encoder: bool) -> Vec<f64> {
        let mut flat = Vec::new();
        for (_, t) in self.qnet.sa_gru.tensors() {
            flat.extend_from_slice(t);
        }
        flat.extend_from_slice(&self.qnet.head_w);
        flat.push(self.qnet.head_b);
        if include_encoder {
            if let Encoder::Gru(p) = &self.encoder {
                for (_, t) in p.gru.tensors() {
                    flat.extend_from_slice(t);
                }
                flat.extend_from_slice(&p.embedding.matrix.data);
            }
        }
        flat
    }

    pub fn load_flat(&mut self, include_encoder: bool, flat: &[f64]) {
        let mut off = 0;
        for (_, t) in self.qnet.sa_gru.tensors_mut() {
            t.copy_from_slice(&flat[off..off + t.len()]);
            off += t.len();
        }
        let n = self.qnet.head_w.len();
        self.qnet.head_w.copy_from_slice(&flat[off..off + n]);
        off += n;
        self.qnet.head_b = flat[off];
        off += 1;
        if include_encoder {
            if let Encoder::Gru(p) = &mut self.encoder {
                for (_, t) in p.gru.tensors_mut() {
                    t.copy_from_slice(&flat[off..off + t.len()]);
                    off += t.len();
                }
                let n = p.embedding.matrix.data.len();
                p.embedding.matrix.data.copy_from_slice(&flat[off..off + n]);
                off += n;
            }
        }
        debug_assert_eq!(off, flat.len());
    }

    /// Gradients in the same layout as `flat_params`.
    pub fn flat_grads(grads: &BatchGrads, include_encoder: bool) -> Vec<f64> {
        let mut flat = Vec::new();
        for (_, t) in grads.sa.tensors() {
            flat.extend_from_slice(t);
        }
        flat.extend_from_slice(&grads.head_w);
        flat.push(grads.head_b);
        if include_encoder {
            if let Some(g) = &grads.enc_gru {
                for (_, t) in g.tensors() {
                    flat.extend_from_slice(t);
                }
            }
            if let Some(m) = &grads.emb {
                flat.extend_from_slice(&m.data);
            }
        }
        flat
    }
}

fn q_from_encodings(qnet: &QNetParams, fo: &[f64], fa: &[f64]) -> f64 {
    let (h2, _) = gru_forward(&qnet.sa_gru, &[fo.to_vec(), fa.to_vec()]).expect("sa dims");
    qnet.head_w.iter().zip(&h2).map(|(w, h)| w * h).sum::<f64>() + qnet.head_b
}

fn accumulate_gru(dst: &mut GruParams, src: &GruParams) {
    for ((_, d), (_, s)) in dst.tensors_mut().into_iter().zip(src.tensors()) {
        for (a, b) in d.iter_mut().zip(s) {
            *a += b;
        }
    }
}
