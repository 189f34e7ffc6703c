//! Fast-gradient attacks on policies under ℓ∞, ℓ2, and ℓ1 budgets.
//!
//! The attack loss treats the policy's own favourite action as the label:
//! J is the cross-entropy between the output distribution and the one-hot
//! distribution on its argmax (Q-values are first pushed through a
//! temperature-1 softmax). Linearizing J around the observation gives a
//! closed-form optimal perturbation for each norm family: the sign of the
//! gradient for ℓ∞, the rescaled gradient direction for ℓ2, and a greedy
//! allocation over the highest-impact pixels for ℓ1.

use crate::envs::Observation;
use crate::policy::{
    argmax, q_to_distribution, PolicyError, PolicyNetwork, TracedWeights,
};
use crate::tensor::{input_gradient, Tape, Tensor, TensorError};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("attack loss is degenerate: best action probability is ~0")]
    DegenerateLoss,
    #[error("gradient norm is numerically zero; no attack direction")]
    DegenerateGradient,
    #[error("perturbation rule for {expected} called with a {got} spec")]
    NormMismatch { expected: NormKind, got: NormKind },
    #[error("invalid attack spec: {0}")]
    BadSpec(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

impl AttackError {
    /// Degenerate events leave the step unattacked rather than aborting a
    /// rollout; callers count them.
    pub fn is_degenerate(&self) -> bool {
        matches!(
            self,
            AttackError::DegenerateLoss | AttackError::DegenerateGradient
        )
    }
}

/// Norm family constraining the perturbation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    LInf,
    L2,
    L1,
}

impl NormKind {
    pub const ALL: [NormKind; 3] = [NormKind::LInf, NormKind::L2, NormKind::L1];

    pub fn name(&self) -> &'static str {
        match self {
            NormKind::LInf => "linf",
            NormKind::L2 => "l2",
            NormKind::L1 => "l1",
        }
    }

    /// Total budget for a `d`-dimensional input: every rule is normalized
    /// to the perturbation mass of the ℓ∞ box with radius ε.
    pub fn budget(&self, epsilon: f64, d: usize) -> f64 {
        match self {
            NormKind::LInf => epsilon,
            NormKind::L2 => epsilon * (d as f64).sqrt(),
            NormKind::L1 => epsilon * d as f64,
        }
    }
}

impl fmt::Display for NormKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NormKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "linf" => Ok(NormKind::LInf),
            "l2" => Ok(NormKind::L2),
            "l1" => Ok(NormKind::L1),
            other => Err(format!("unknown norm {other:?}")),
        }
    }
}

/// Norm family, budget parameter, and the feature box the result must
/// stay inside.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub norm: NormKind,
    pub epsilon: f64,
    pub clip_low: f64,
    pub clip_high: f64,
}

impl AttackSpec {
    pub fn new(norm: NormKind, epsilon: f64) -> Result<Self, AttackError> {
        let spec = AttackSpec {
            norm,
            epsilon,
            clip_low: 0.0,
            clip_high: 1.0,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), AttackError> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(AttackError::BadSpec(format!(
                "epsilon must be finite and nonnegative, got {}",
                self.epsilon
            )));
        }
        if !(self.clip_low < self.clip_high) {
            return Err(AttackError::BadSpec(format!(
                "clip bounds [{}, {}] are empty",
                self.clip_low, self.clip_high
            )));
        }
        Ok(())
    }
}

/// The attack loss at one observation and its input gradient ∇x J.
#[derive(Debug, Clone)]
pub struct AttackGradient {
    pub loss: f64,
    pub grad: Tensor,
}

/// A crafted perturbation η together with the spec that produced it.
#[derive(Debug, Clone)]
pub struct Perturbation {
    pub eta: Tensor,
    pub spec: AttackSpec,
}

/// Cross-entropy of the policy's output against the one-hot distribution
/// on its own top action, differentiated with respect to the observation.
///
/// Q-value networks are attacked through a temperature-1 softmax of their
/// Q-values; their greedy test-time behaviour is unchanged.
pub fn attack_loss(source: &PolicyNetwork, obs: &Observation) -> Result<AttackGradient, AttackError> {
    let mut tape = Tape::new();
    let input = tape.leaf(obs.frames().clone());
    let weights = TracedWeights::insert(source, &mut tape);
    let fwd = crate::policy::traced_forward(source.spec(), &weights, &mut tape, input)?;

    // Self-labelling: y's argmax plays the role of the true class.
    let probs_var = tape.softmax(fwd.logits)?;
    let probs = tape.value(probs_var).data().to_vec();
    let target = argmax(&probs);
    if probs[target] <= 1e-12 {
        return Err(AttackError::DegenerateLoss);
    }

    let n = probs.len();
    let mut onehot = vec![0.0; n];
    onehot[target] = 1.0;
    let onehot = tape.leaf(Tensor::from_vec(vec![n], onehot)?);
    let logp = tape.log_softmax(fwd.logits)?;
    let picked = tape.mul(logp, onehot)?;
    let total = tape.sum(picked)?;
    let loss_var = tape.scale(total, -1.0)?;

    let loss = tape.value(loss_var).item()?;
    let grad = input_gradient(&tape, loss_var, input)?;
    Ok(AttackGradient { loss, grad })
}

/// Just the loss value (used to measure how much a crafted input hurts).
pub fn attack_loss_value(source: &PolicyNetwork, obs: &Observation) -> Result<f64, AttackError> {
    let out = crate::policy::forward_policy(source, obs)?;
    let dist = match out {
        crate::policy::PolicyOutput::Distribution(d) => d,
        crate::policy::PolicyOutput::Q(q) => q_to_distribution(&q, 1.0)?,
    };
    let target = argmax(dist.probs());
    let p = dist.probs()[target];
    if p <= 1e-12 {
        return Err(AttackError::DegenerateLoss);
    }
    Ok(-p.ln())
}

fn expect_norm(spec: &AttackSpec, expected: NormKind) -> Result<(), AttackError> {
    if spec.norm != expected {
        return Err(AttackError::NormMismatch {
            expected,
            got: spec.norm,
        });
    }
    Ok(())
}

/// η = ε·sign(∇x J), with sign(0) = 0.
pub fn perturb_linf(g: &AttackGradient, spec: &AttackSpec) -> Result<Perturbation, AttackError> {
    expect_norm(spec, NormKind::LInf)?;
    let eta = g
        .grad
        .data()
        .iter()
        .map(|&v| {
            if v > 0.0 {
                spec.epsilon
            } else if v < 0.0 {
                -spec.epsilon
            } else {
                0.0
            }
        })
        .collect();
    Ok(Perturbation {
        eta: Tensor::from_vec(g.grad.shape().to_vec(), eta)?,
        spec: *spec,
    })
}

/// η = ε√d · ∇x J / ‖∇x J‖2; the whole ℓ2 budget lands on the gradient
/// direction.
pub fn perturb_l2(g: &AttackGradient, spec: &AttackSpec) -> Result<Perturbation, AttackError> {
    expect_norm(spec, NormKind::L2)?;
    let norm: f64 = g.grad.data().iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm <= 1e-12 {
        return Err(AttackError::DegenerateGradient);
    }
    let scale = spec.norm.budget(spec.epsilon, g.grad.numel()) / norm;
    let eta = g.grad.data().iter().map(|&v| v * scale).collect();
    Ok(Perturbation {
        eta: Tensor::from_vec(g.grad.shape().to_vec(), eta)?,
        spec: *spec,
    })
}

/// Greedy ℓ1 allocation: visit dimensions by decreasing |∇x J| (ties to
/// the lowest index) and push each feature toward its nearer box bound in
/// the gradient's direction until the budget εd runs out. Zero-gradient
/// dimensions are skipped.
pub fn perturb_l1(
    g: &AttackGradient,
    obs: &Observation,
    spec: &AttackSpec,
) -> Result<Perturbation, AttackError> {
    expect_norm(spec, NormKind::L1)?;
    let x = obs.frames().data();
    let grad = g.grad.data();
    if x.len() != grad.len() {
        return Err(AttackError::Tensor(TensorError::ShapeMismatch {
            op: "perturb_l1",
            lhs: obs.frames().shape().to_vec(),
            rhs: g.grad.shape().to_vec(),
        }));
    }

    let mut order: Vec<usize> = (0..grad.len()).collect();
    order.sort_by(|&a, &b| {
        grad[b]
            .abs()
            .partial_cmp(&grad[a].abs())
            .expect("finite gradients")
            .then(a.cmp(&b))
    });

    let mut remaining = spec.norm.budget(spec.epsilon, grad.len());
    let mut eta = vec![0.0; grad.len()];
    for i in order {
        if remaining <= 0.0 {
            break;
        }
        if grad[i] == 0.0 {
            continue;
        }
        let room = if grad[i] > 0.0 {
            spec.clip_high - x[i]
        } else {
            x[i] - spec.clip_low
        };
        let step = remaining.min(room.max(0.0));
        eta[i] = if grad[i] > 0.0 { step } else { -step };
        remaining -= step;
    }
    Ok(Perturbation {
        eta: Tensor::from_vec(g.grad.shape().to_vec(), eta)?,
        spec: *spec,
    })
}

/// Dispatch to the spec's norm rule.
pub fn perturb(
    g: &AttackGradient,
    obs: &Observation,
    spec: &AttackSpec,
) -> Result<Perturbation, AttackError> {
    match spec.norm {
        NormKind::LInf => perturb_linf(g, spec),
        NormKind::L2 => perturb_l2(g, spec),
        NormKind::L1 => perturb_l1(g, obs, spec),
    }
}

/// Craft the adversarial observation clip(x + η). With ε = 0 the input is
/// returned unchanged and no gradient is computed. Degenerate gradients
/// and losses propagate; rollouts treat those steps as unattacked.
pub fn craft(
    source: &PolicyNetwork,
    obs: &Observation,
    spec: &AttackSpec,
) -> Result<Observation, AttackError> {
    craft_with_loss(source, obs, spec).map(|(adv, _)| adv)
}

/// [`craft`] plus the attack loss J at the clean observation, for trace
/// streams. The loss is `None` when ε = 0 short-circuits the gradient.
pub fn craft_with_loss(
    source: &PolicyNetwork,
    obs: &Observation,
    spec: &AttackSpec,
) -> Result<(Observation, Option<f64>), AttackError> {
    spec.validate()?;
    if spec.epsilon == 0.0 {
        return Ok((obs.clone(), None));
    }
    let g = attack_loss(source, obs)?;
    let p = perturb(&g, obs, spec)?;
    let adv = obs
        .frames()
        .data()
        .iter()
        .zip(p.eta.data())
        .map(|(&x, &e)| (x + e).clamp(spec.clip_low, spec.clip_high))
        .collect();
    let adv = Observation::from_tensor(Tensor::from_vec(obs.frames().shape().to_vec(), adv)?);
    Ok((adv, Some(g.loss)))
}
