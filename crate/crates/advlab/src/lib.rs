//! Desk-scale laboratory for crafting and evaluating norm-constrained
//! adversarial attacks on neural network policies trained with
//! reinforcement learning.
//!
//! The crate covers the full loop: tiny image-observation environments,
//! a tape-based autodiff engine, DQN and policy-gradient trainers, fast
//! gradient sign attacks under ℓ∞/ℓ2/ℓ1 budgets, white-box and transfer
//! evaluation, and deterministic CSV/SVG reporting. Start with the
//! `examples/` directory; each example exercises one capability end to end.

pub mod attacks;
pub mod config;
pub mod envs;
pub mod eval;
pub mod pipeline;
pub mod policy;
pub mod report;
pub mod tensor;
pub mod training;

/// One splitmix64 step; used to derive independent seed streams from a base
/// seed without correlating them.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
