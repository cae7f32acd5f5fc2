//! Evaluation-time text perturbations: lexical substitution from a synonym
//! lexicon, and paraphrase via alternate observation templates. Both are
//! exposed as drop-in environment wrappers that transform observation text
//! and action strings consistently, so the underlying game is unchanged.

use crate::engine::{
    generate_game, render_observation, ConceptPool, Difficulty, EngineError, GameEnv, GameSpec,
    Observation, StepOutcome, TextEnv, VocabMode, TEMPLATE_SET_COUNT,
};
use crate::textenc::{fnv1a64, tokenize};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};

#[derive(Debug, thiserror::Error)]
pub enum PerturbError {
    #[error("lexicon invariant violated: {0}")]
    BadLexicon(String),
    #[error("no alternate template set available")]
    MissingAlternate,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("lexicon parse error on line {0}")]
    Parse(usize),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// Token -> ordered replacement list. First choice is used for substitution.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Lexicon {
    pub entries: BTreeMap<String, Vec<String>>,
}

impl Lexicon {
    pub fn new(entries: BTreeMap<String, Vec<String>>) -> Result<Self, PerturbError> {
        let lex = Lexicon { entries };
        lex.validate()?;
        Ok(lex)
    }

    /// File format: one entry per line, "token<TAB>rep1,rep2,...", UTF-8.
    pub fn load(path: &std::path::Path) -> Result<Self, PerturbError> {
        let text = std::fs::read_to_string(path)?;
        let mut entries = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (token, reps) = line.split_once('\t').ok_or(PerturbError::Parse(lineno + 1))?;
            let reps: Vec<String> = reps
                .split(',')
                .map(|r| r.trim().to_string())
                .filter(|r| !r.is_empty())
                .collect();
            if reps.is_empty() {
                return Err(PerturbError::Parse(lineno + 1));
            }
            entries.insert(token.trim().to_string(), reps);
        }
        Self::new(entries)
    }

    /// Builds the pool-aligned lexicon: each concept's ID names map to its
    /// OOD names, each furniture name to its synonyms, and the surface
    /// verbs to their synonym-group alternates. With this lexicon a
    /// full-rate substitution rewrites every action string.
    pub fn from_pool(pool: &ConceptPool) -> Self {
        let mut entries = BTreeMap::new();
        for c in &pool.concepts {
            for name in &c.names_id {
                entries.insert(name.clone(), c.names_ood.clone());
            }
        }
        for f in &pool.furniture {
            if !f.synonyms.is_empty() {
                entries.insert(f.name.clone(), f.synonyms.clone());
            }
        }
        for group in crate::engine::surface_synonym_groups() {
            if group.len() > 1 {
                entries.insert(group[0].clone(), group[1..].to_vec());
            }
        }
        Lexicon { entries }
    }

    fn validate(&self) -> Result<(), PerturbError> {
        for (token, reps) in &self.entries {
            if reps.first() == Some(token) {
                return Err(PerturbError::BadLexicon(format!(
                    "{token:?} maps to itself as first choice"
                )));
            }
            for rep in reps {
                if rep.split_whitespace().count() != 1 {
                    return Err(PerturbError::BadLexicon(format!(
                        "replacement {rep:?} is not a single token"
                    )));
                }
            }
        }
        // Acyclic under first-choice substitution: walking first choices
        // from any token must terminate.
        for start in self.entries.keys() {
            let mut cursor = start;
            let mut hops = 0;
            while let Some(reps) = self.entries.get(cursor) {
                cursor = &reps[0];
                hops += 1;
                if hops > self.entries.len() {
                    return Err(PerturbError::BadLexicon(format!(
                        "cycle under first-choice substitution from {start:?}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Replaces each lexicon-covered token with its first replacement with
/// probability `rate`. Pure function of (text, lexicon, rate, seed): the
/// PRNG is keyed on the seed and the text itself.
pub fn lexical_substitute(text: &str, lexicon: &Lexicon, rate: f64, seed: u64) -> String {
    assert!(rate > 0.0 && rate <= 1.0, "rate must be in (0, 1]");
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a64(text.to_lowercase().as_bytes()));
    let tokens = tokenize(text);
    let out: Vec<String> = tokens
        .into_iter()
        .map(|t| match lexicon.entries.get(&t) {
            Some(reps) if rng.gen::<f64>() < rate => reps[0].clone(),
            _ => t,
        })
        .collect();
    out.join(" ")
}

/// Renders the observation with a template set different from the one the
/// spec trains on.
pub fn paraphrase_render(
    state: &crate::engine::GameState,
    spec: &GameSpec,
) -> Result<String, PerturbError> {
    if TEMPLATE_SET_COUNT < 2 {
        return Err(PerturbError::MissingAlternate);
    }
    let alternate = (spec.template_set_id + 1) % TEMPLATE_SET_COUNT;
    Ok(render_observation(state, spec, alternate)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PerturbMode {
    None,
    Paraphrase,
    Lexical,
}

impl PerturbMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            PerturbMode::None => "none",
            PerturbMode::Paraphrase => "paraphrase",
            PerturbMode::Lexical => "lexical",
        }
    }
}

/// Environment wrapper applying one perturbation mode to observation text
/// and action strings. A perturbed action maps back to the same underlying
/// engine action, so reachable states and rewards are untouched.
pub struct PerturbedEnv {
    inner: GameEnv,
    mode: PerturbMode,
    lexicon: Lexicon,
    rate: f64,
    seed: u64,
    /// perturbed action string -> engine action string, for the current obs.
    action_map: HashMap<String, String>,
}

pub fn wrap_env(spec: GameSpec, mode: PerturbMode, lexicon: Lexicon, seed: u64) -> PerturbedEnv {
    PerturbedEnv {
        inner: GameEnv::new(spec),
        mode,
        lexicon,
        rate: 1.0,
        seed,
        action_map: HashMap::new(),
    }
}

/// Generates the same structural game with out-of-distribution surface
/// names and returns it as a raw environment.
pub fn ood_vocab_env(
    spec_seed: u64,
    difficulty: Difficulty,
    pool: &ConceptPool,
) -> Result<GameEnv, EngineError> {
    let spec = generate_game(difficulty, spec_seed, pool, VocabMode::Ood)?;
    Ok(GameEnv::new(spec))
}

impl PerturbedEnv {
    fn transform_text(&self, text: &str) -> String {
        match self.mode {
            PerturbMode::None | PerturbMode::Paraphrase => text.to_string(),
            PerturbMode::Lexical => lexical_substitute(text, &self.lexicon, self.rate, self.seed),
        }
    }

    fn transform_obs(&mut self, obs: &Observation) -> Observation {
        let text = match self.mode {
            PerturbMode::None => obs.text.clone(),
            PerturbMode::Paraphrase => {
                paraphrase_render(self.inner.state(), &self.inner.spec).expect("alternate set")
            }
            PerturbMode::Lexical => self.transform_text(&obs.text),
        };
        self.action_map.clear();
        let mut actions: Vec<String> = Vec::with_capacity(obs.admissible_actions.len());
        for engine_action in &obs.admissible_actions {
            let shown = match self.mode {
                // Paraphrase rewords descriptions only; actions keep their
                // grammar surface form.
                PerturbMode::None | PerturbMode::Paraphrase => engine_action.clone(),
                PerturbMode::Lexical => self.transform_text(engine_action),
            };
            let prior = self.action_map.insert(shown.clone(), engine_action.clone());
            debug_assert!(prior.is_none(), "perturbation collided two actions on {shown:?}");
            actions.push(shown);
        }
        actions.sort();
        Observation { text, admissible_actions: actions }
    }

    /// The perturbed surface form of an engine action in the current state.
    pub fn perturbed_form(&self, engine_action: &str) -> Option<String> {
        self.action_map
            .iter()
            .find(|(_, orig)| orig.as_str() == engine_action)
            .map(|(shown, _)| shown.clone())
    }

    pub fn inner_state(&self) -> &crate::engine::GameState {
        self.inner.state()
    }
}

impl TextEnv for PerturbedEnv {
    fn reset(&mut self) -> Observation {
        let obs = self.inner.reset();
        self.transform_obs(&obs)
    }

    fn step(&mut self, action: &str) -> Result<StepOutcome, EngineError> {
        let engine_action = self
            .action_map
            .get(action)
            .cloned()
            .ok_or_else(|| EngineError::InadmissibleAction(action.to_string()))?;
        let outcome = self.inner.step(&engine_action)?;
        let observation = self.transform_obs(&outcome.observation);
        Ok(StepOutcome { observation, reward: outcome.reward, done: outcome.done })
    }

    fn score(&self) -> u32 {
        self.inner.score()
    }

    fn max_score(&self) -> u32 {
        self.inner.max_score()
    }

    fn steps(&self) -> u32 {
        self.inner.steps()
    }

    fn done(&self) -> bool {
        self.inner.done()
    }
}
