//! Desk-scale laboratory for text-based reinforcement learning: a
//! deterministic household-cleanup game engine, swappable text encoders,
//! a DRRN-style Q-agent with hand-derived backpropagation, perturbation
//! evaluation wrappers, and an experiment runner.

pub mod agent;
pub mod engine;
pub mod lab;
pub mod numcore;
pub mod perturb;
pub mod textenc;
