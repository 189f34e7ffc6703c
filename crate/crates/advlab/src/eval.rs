//! Rollout engine with per-step attack injection, white-box ε-sweeps, and
//! black-box transfer matrices across policy seeds and algorithms.
//!
//! The adversary recomputes its perturbation at every timestep from the
//! current (clean) observation; the target policy then acts on the
//! perturbed copy. Rollout seeds are shared across attack settings so the
//! same environment randomness faces every variant, and report rows merge
//! in a fixed key order regardless of execution order.

use crate::attacks::{craft_with_loss, AttackError, AttackSpec, NormKind};
use crate::envs::{EnvConfig, EnvError, StackedEnv};
use crate::policy::{act_greedy, act_stochastic, PolicyError, PolicyKind, PolicyNetwork};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::Write;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("unknown policy id {0:?}")]
    UnknownPolicy(String),
    #[error("insufficient policy pool: {0}")]
    InsufficientPool(String),
    #[error("invalid sweep: {0}")]
    BadSweep(String),
    #[error("csv schema violation: {0}")]
    Schema(String),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// How much the adversary knew: nothing extra (white-box), the algorithm
/// but not the seed (policy transfer), or neither (algorithm transfer).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransferMode {
    None,
    Policy,
    Algorithm,
}

impl TransferMode {
    pub fn name(&self) -> &'static str {
        match self {
            TransferMode::None => "none",
            TransferMode::Policy => "policy",
            TransferMode::Algorithm => "algorithm",
        }
    }
}

impl fmt::Display for TransferMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TransferMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(TransferMode::None),
            "policy" => Ok(TransferMode::Policy),
            "algorithm" => Ok(TransferMode::Algorithm),
            other => Err(format!("unknown transfer mode {other:?}")),
        }
    }
}

/// Named, insertion-ordered collection of trained policies.
#[derive(Default)]
pub struct PolicyPool {
    entries: Vec<(String, PolicyNetwork)>,
}

impl PolicyPool {
    pub fn new() -> Self {
        PolicyPool::default()
    }

    pub fn insert(&mut self, id: impl Into<String>, net: PolicyNetwork) {
        self.entries.push((id.into(), net));
    }

    pub fn get(&self, id: &str) -> Option<&PolicyNetwork> {
        self.entries.iter().find(|(n, _)| n == id).map(|(_, p)| p)
    }

    pub fn ids(&self) -> Vec<&str> {
        self.entries.iter().map(|(n, _)| n.as_str()).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn require(&self, id: &str) -> Result<&PolicyNetwork, EvalError> {
        self.get(id)
            .ok_or_else(|| EvalError::UnknownPolicy(id.into()))
    }
}

/// One rollout request: which policy runs, which policy's gradients craft
/// the attack (defaults to the target, i.e. white-box), and the seed.
#[derive(Debug, Clone)]
pub struct RolloutSpec {
    pub env: EnvConfig,
    pub target_id: String,
    pub attack: Option<AttackSpec>,
    pub source_id: Option<String>,
    pub seed: u64,
}

/// Undiscounted return, episode length, and how many attack steps fell
/// back to the clean observation because the gradient or loss degenerated.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutResult {
    pub episode_return: f64,
    pub length: usize,
    pub degenerate_steps: usize,
}

/// Run one episode. Every step the adversary crafts a fresh perturbation
/// from the current observation; the target acts on the perturbed copy
/// (greedy for Q-value policies, sampled for stochastic ones) while the
/// true frame history advances from the clean environment state.
pub fn rollout(spec: &RolloutSpec, pool: &PolicyPool) -> Result<RolloutResult, EvalError> {
    rollout_traced(spec, pool, None)
}

/// [`rollout`], optionally streaming one `step,loss,norm,degenerate`
/// record per attacked step for debugging.
pub fn rollout_traced(
    spec: &RolloutSpec,
    pool: &PolicyPool,
    mut trace: Option<&mut dyn Write>,
) -> Result<RolloutResult, EvalError> {
    let target = pool.require(&spec.target_id)?;
    let source = match &spec.source_id {
        Some(id) => pool.require(id)?,
        None => target,
    };
    if source.spec().input_shape != target.spec().input_shape {
        return Err(EvalError::InsufficientPool(format!(
            "gradient source {:?} and target {:?} observe different shapes",
            source.spec().input_shape,
            target.spec().input_shape
        )));
    }

    let mut env: StackedEnv = spec.env.build();
    let mut obs = env.reset(spec.seed);
    let mut action_rng = ChaCha8Rng::seed_from_u64(crate::derive_seed(spec.seed, 1));
    if let Some(out) = trace.as_deref_mut() {
        writeln!(out, "step,loss,norm,degenerate")?;
    }

    let mut total = 0.0;
    let mut length = 0usize;
    let mut degenerate = 0usize;
    loop {
        let acted_on = match &spec.attack {
            Some(attack) => match craft_with_loss(source, &obs, attack) {
                Ok((adv, loss)) => {
                    if let Some(out) = trace.as_deref_mut() {
                        let loss = loss.map(|l| l.to_string()).unwrap_or_default();
                        writeln!(out, "{length},{loss},{},0", attack.norm)?;
                    }
                    adv
                }
                Err(e) if e.is_degenerate() => {
                    degenerate += 1;
                    if let Some(out) = trace.as_deref_mut() {
                        writeln!(out, "{length},,{},1", attack.norm)?;
                    }
                    obs.clone()
                }
                Err(e) => return Err(e.into()),
            },
            None => obs.clone(),
        };

        let action = match target.kind() {
            PolicyKind::QValue => act_greedy(target, &acted_on)?,
            PolicyKind::Stochastic => act_stochastic(target, &acted_on, &mut action_rng)?,
        };
        let (next, reward, done) = env.step(action)?;
        total += reward;
        length += 1;
        obs = next;
        if done {
            return Ok(RolloutResult {
                episode_return: total,
                length,
                degenerate_steps: degenerate,
            });
        }
    }
}

/// One experimental cell: per-(policy, attack, transfer mode, ε) summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub env: String,
    pub algorithm: String,
    pub target_id: String,
    pub transfer_mode: String,
    pub source_id: String,
    pub norm: String,
    pub epsilon: f64,
    pub mean_return: f64,
    pub std_return: f64,
    pub n_rollouts: usize,
    pub degenerate_steps: usize,
}

pub const CSV_HEADER: &str =
    "env,algorithm,target_id,transfer_mode,source_id,norm,epsilon,mean_return,std_return,n_rollouts,degenerate_steps";

fn norm_order(norm: &str) -> usize {
    match norm {
        "none" => 0,
        "linf" => 1,
        "l2" => 2,
        "l1" => 3,
        _ => 4,
    }
}

impl EvalRow {
    fn sort_key(&self) -> (String, String, String, String, String, usize, u64) {
        (
            self.env.clone(),
            self.algorithm.clone(),
            self.target_id.clone(),
            self.transfer_mode.clone(),
            self.source_id.clone(),
            norm_order(&self.norm),
            self.epsilon.to_bits(),
        )
    }
}

/// Rows for a set of evaluation cells, kept in a fixed key order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    pub fn sort(&mut self) {
        self.rows.sort_by_key(|r| r.sort_key());
    }

    pub fn merge(mut reports: Vec<EvalReport>) -> EvalReport {
        let rows = reports.drain(..).flat_map(|r| r.rows).collect();
        let mut merged = EvalReport { rows };
        merged.sort();
        merged
    }

    /// Serialize with the exact column header the schema pins.
    pub fn to_csv_string(&self) -> Result<String, EvalError> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        for row in &self.rows {
            writer.serialize(row)?;
        }
        let bytes = writer
            .into_inner()
            .map_err(|e| EvalError::Io(std::io::Error::other(e.to_string())))?;
        Ok(String::from_utf8(bytes).expect("csv is utf-8"))
    }

    pub fn write_csv(&self, path: &std::path::Path) -> Result<(), EvalError> {
        Ok(std::fs::write(path, self.to_csv_string()?)?)
    }

    /// Parse a report, validating the header column by column.
    pub fn from_csv_str(text: &str) -> Result<EvalReport, EvalError> {
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let headers = reader.headers()?.clone();
        let expected: Vec<&str> = CSV_HEADER.split(',').collect();
        if headers.len() != expected.len() {
            return Err(EvalError::Schema(format!(
                "expected {} columns, found {}",
                expected.len(),
                headers.len()
            )));
        }
        for (i, want) in expected.iter().enumerate() {
            if headers.get(i) != Some(want) {
                return Err(EvalError::Schema(format!(
                    "column {i} should be {want:?}, found {:?}",
                    headers.get(i).unwrap_or("")
                )));
            }
        }
        let rows = reader
            .deserialize()
            .collect::<Result<Vec<EvalRow>, csv::Error>>()?;
        Ok(EvalReport { rows })
    }

    pub fn read_csv(path: &std::path::Path) -> Result<EvalReport, EvalError> {
        Self::from_csv_str(&std::fs::read_to_string(path)?)
    }
}

pub(crate) fn mean_and_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Average one cell over `n` rollouts seeded `base_seed..base_seed+n`.
/// The same seeds face every attack setting, so cells are comparable.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    pool: &PolicyPool,
    env: &EnvConfig,
    target_id: &str,
    attack: Option<AttackSpec>,
    source_id: Option<&str>,
    mode: TransferMode,
    n: usize,
    base_seed: u64,
) -> Result<EvalRow, EvalError> {
    assert!(n >= 1, "need at least one rollout");
    let target = pool.require(target_id)?;
    let mut returns = Vec::with_capacity(n);
    let mut degenerate = 0usize;
    for i in 0..n {
        let spec = RolloutSpec {
            env: env.clone(),
            target_id: target_id.to_string(),
            attack,
            source_id: source_id.map(|s| s.to_string()),
            seed: base_seed + i as u64,
        };
        let result = rollout(&spec, pool)?;
        returns.push(result.episode_return);
        degenerate += result.degenerate_steps;
    }
    let (mean, std) = mean_and_std(&returns);
    Ok(EvalRow {
        env: env.kind.name().to_string(),
        algorithm: target.provenance().algorithm.clone(),
        target_id: target_id.to_string(),
        transfer_mode: mode.name().to_string(),
        source_id: source_id.unwrap_or(target_id).to_string(),
        norm: attack
            .map(|a| a.norm.name().to_string())
            .unwrap_or_else(|| "none".into()),
        epsilon: attack.map(|a| a.epsilon).unwrap_or(0.0),
        mean_return: mean,
        std_return: std,
        n_rollouts: n,
        degenerate_steps: degenerate,
    })
}

/// White-box sweep: every (policy, norm, ε) cell with the adversary
/// reading the target's own gradients. The ε = 0 rows double as the
/// unattacked baseline.
pub fn whitebox_sweep(
    pool: &PolicyPool,
    epsilons: &[f64],
    norms: &[NormKind],
    env: &EnvConfig,
    rollouts: usize,
    base_seed: u64,
) -> Result<EvalReport, EvalError> {
    if epsilons.is_empty() || !epsilons.contains(&0.0) {
        return Err(EvalError::BadSweep(
            "epsilon list must be non-empty and include 0".into(),
        ));
    }
    let mut cells = Vec::new();
    for id in pool.ids() {
        for &norm in norms {
            for &eps in epsilons {
                cells.push((id.to_string(), norm, eps));
            }
        }
    }
    let rows = cells
        .par_iter()
        .map(|(id, norm, eps)| {
            let attack = AttackSpec::new(*norm, *eps)?;
            evaluate(
                pool,
                env,
                id,
                Some(attack),
                None,
                TransferMode::None,
                rollouts,
                base_seed,
            )
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    let mut report = EvalReport { rows };
    report.sort();
    Ok(report)
}

/// All adversary→target ordered pairs allowed by the mode: same algorithm
/// and a different seed for policy transfer, different algorithms for
/// algorithm transfer.
pub fn transfer_pairs(
    pool: &PolicyPool,
    mode: TransferMode,
) -> Result<Vec<(String, String)>, EvalError> {
    let ids = pool.ids();
    let algo = |id: &str| {
        pool.get(id)
            .map(|p| p.provenance().algorithm.clone())
            .expect("id from pool")
    };
    let mut pairs = Vec::new();
    match mode {
        TransferMode::None => {
            return Err(EvalError::InsufficientPool(
                "transfer matrix needs mode policy or algorithm".into(),
            ))
        }
        TransferMode::Policy => {
            for &src in &ids {
                for &tgt in &ids {
                    if src != tgt && algo(src) == algo(tgt) {
                        pairs.push((src.to_string(), tgt.to_string()));
                    }
                }
            }
            if pairs.is_empty() {
                return Err(EvalError::InsufficientPool(
                    "policy transfer requires at least 2 policies sharing an algorithm".into(),
                ));
            }
        }
        TransferMode::Algorithm => {
            for &src in &ids {
                for &tgt in &ids {
                    if algo(src) != algo(tgt) {
                        pairs.push((src.to_string(), tgt.to_string()));
                    }
                }
            }
            if pairs.is_empty() {
                return Err(EvalError::InsufficientPool(
                    "algorithm transfer requires at least 2 different algorithms".into(),
                ));
            }
        }
    }
    Ok(pairs)
}

/// Evaluate every allowed adversary→target pair under one attack spec.
pub fn transfer_matrix(
    pool: &PolicyPool,
    mode: TransferMode,
    attack: AttackSpec,
    env: &EnvConfig,
    rollouts: usize,
    base_seed: u64,
) -> Result<EvalReport, EvalError> {
    let pairs = transfer_pairs(pool, mode)?;
    let rows = pairs
        .par_iter()
        .map(|(src, tgt)| {
            evaluate(
                pool,
                env,
                tgt,
                Some(attack),
                Some(src),
                mode,
                rollouts,
                base_seed,
            )
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    let mut report = EvalReport { rows };
    report.sort();
    Ok(report)
}

/// Mean and std of the uniform-random policy over `n` seeded rollouts;
/// the floor that trained policies must clear.
pub fn random_policy_baseline(
    env: &EnvConfig,
    n: usize,
    base_seed: u64,
) -> Result<(f64, f64), EvalError> {
    let mut returns = Vec::with_capacity(n);
    let mut stacked = env.build();
    let actions = stacked.action_count();
    for i in 0..n {
        let seed = base_seed + i as u64;
        stacked.reset(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(crate::derive_seed(seed, 1));
        let mut total = 0.0;
        loop {
            let (_, reward, done) = stacked.step(rng.random_range(0..actions))?;
            total += reward;
            if done {
                break;
            }
        }
        returns.push(total);
    }
    Ok(mean_and_std(&returns))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{init_weights, ArchitectureSpec, HeadKind, Provenance};
    use rand::SeedableRng;

    fn small_env() -> EnvConfig {
        EnvConfig {
            step_cap: 12,
            hazard_count: 3,
            ..EnvConfig::hazardgrid()
        }
    }

    fn pool_with(envs: &EnvConfig, specs: &[(&str, &str, HeadKind, u64)]) -> PolicyPool {
        let mut pool = PolicyPool::new();
        for &(id, algo, head, seed) in specs {
            let arch = ArchitectureSpec::desk_default(
                envs.observation_shape(),
                envs.action_count(),
                head,
            );
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let net = crate::policy::PolicyNetwork::new(
                arch.clone(),
                init_weights(&arch, &mut rng).unwrap(),
                Provenance {
                    algorithm: algo.into(),
                    seed,
                    train_return: 0.0,
                },
            )
            .unwrap();
            pool.insert(id, net);
        }
        pool
    }

    #[test]
    fn mean_and_std_definition() {
        let (mean, std) = mean_and_std(&[2.0, 4.0]);
        assert_eq!(mean, 3.0);
        assert!((std - 2.0_f64.sqrt()).abs() < 1e-12);

        let (mean, std) = mean_and_std(&[5.0]);
        assert_eq!(mean, 5.0);
        assert_eq!(std, 0.0);
    }

    #[test]
    fn unattacked_rollouts_are_deterministic() {
        let env = small_env();
        let pool = pool_with(&env, &[("a", "dqn", HeadKind::QValues, 1)]);
        let spec = RolloutSpec {
            env: env.clone(),
            target_id: "a".into(),
            attack: None,
            source_id: None,
            seed: 42,
        };
        let r1 = rollout(&spec, &pool).unwrap();
        let r2 = rollout(&spec, &pool).unwrap();
        assert_eq!(r1, r2);
    }

    #[test]
    fn zero_epsilon_matches_unattacked_exactly() {
        let env = small_env();
        let pool = pool_with(
            &env,
            &[
                ("q", "dqn", HeadKind::QValues, 1),
                ("s", "pg", HeadKind::Distribution, 2),
            ],
        );
        for id in ["q", "s"] {
            for norm in NormKind::ALL {
                let clean =
                    evaluate(&pool, &env, id, None, None, TransferMode::None, 3, 100).unwrap();
                let zero = evaluate(
                    &pool,
                    &env,
                    id,
                    Some(AttackSpec::new(norm, 0.0).unwrap()),
                    None,
                    TransferMode::None,
                    3,
                    100,
                )
                .unwrap();
                assert_eq!(clean.mean_return, zero.mean_return);
                assert_eq!(clean.std_return, zero.std_return);
                assert_eq!(clean.degenerate_steps, 0);
                assert_eq!(zero.degenerate_steps, 0);
            }
        }
    }

    #[test]
    fn evaluate_is_seed_deterministic() {
        let env = small_env();
        let pool = pool_with(&env, &[("a", "dqn", HeadKind::QValues, 3)]);
        let attack = AttackSpec::new(NormKind::LInf, 0.02).unwrap();
        let run = || {
            evaluate(
                &pool,
                &env,
                "a",
                Some(attack),
                None,
                TransferMode::None,
                3,
                7,
            )
            .unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn whitebox_sweep_row_count_is_cartesian() {
        let env = small_env();
        let pool = pool_with(
            &env,
            &[
                ("a", "dqn", HeadKind::QValues, 1),
                ("b", "pg", HeadKind::Distribution, 2),
            ],
        );
        let report = whitebox_sweep(
            &pool,
            &[0.0, 0.05],
            &[NormKind::LInf, NormKind::L1],
            &env,
            2,
            50,
        )
        .unwrap();
        assert_eq!(report.rows.len(), 2 * 2 * 2);

        // ε list without 0 is rejected
        assert!(matches!(
            whitebox_sweep(&pool, &[0.1], &[NormKind::LInf], &env, 2, 50),
            Err(EvalError::BadSweep(_))
        ));
    }

    #[test]
    fn transfer_pair_counting() {
        let env = small_env();
        let pool = pool_with(
            &env,
            &[
                ("d1", "dqn", HeadKind::QValues, 1),
                ("d2", "dqn", HeadKind::QValues, 2),
                ("d3", "dqn", HeadKind::QValues, 3),
            ],
        );
        assert_eq!(transfer_pairs(&pool, TransferMode::Policy).unwrap().len(), 6);
        assert!(matches!(
            transfer_pairs(&pool, TransferMode::Algorithm),
            Err(EvalError::InsufficientPool(_))
        ));

        let mixed = pool_with(
            &env,
            &[
                ("d1", "dqn", HeadKind::QValues, 1),
                ("d2", "dqn", HeadKind::QValues, 2),
                ("p1", "pg", HeadKind::Distribution, 3),
            ],
        );
        assert_eq!(
            transfer_pairs(&mixed, TransferMode::Algorithm).unwrap().len(),
            4
        );

        let lonely = pool_with(&env, &[("d1", "dqn", HeadKind::QValues, 1)]);
        assert!(matches!(
            transfer_pairs(&lonely, TransferMode::Policy),
            Err(EvalError::InsufficientPool(_))
        ));
    }

    #[test]
    fn transfer_matrix_runs_all_pairs() {
        let env = small_env();
        let pool = pool_with(
            &env,
            &[
                ("d1", "dqn", HeadKind::QValues, 1),
                ("d2", "dqn", HeadKind::QValues, 2),
            ],
        );
        let attack = AttackSpec::new(NormKind::LInf, 0.05).unwrap();
        let report = transfer_matrix(&pool, TransferMode::Policy, attack, &env, 2, 11).unwrap();
        assert_eq!(report.rows.len(), 2);
        for row in &report.rows {
            assert_eq!(row.transfer_mode, "policy");
            assert_ne!(row.source_id, row.target_id);
        }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let env = small_env();
        let pool = pool_with(&env, &[("a", "dqn", HeadKind::QValues, 5)]);
        let report = whitebox_sweep(&pool, &[0.0, 0.03], &[NormKind::L2], &env, 2, 9).unwrap();
        let text = report.to_csv_string().unwrap();
        assert!(text.starts_with(CSV_HEADER));
        let parsed = EvalReport::from_csv_str(&text).unwrap();
        assert_eq!(parsed, report);
        assert_eq!(parsed.to_csv_string().unwrap(), text);
    }

    #[test]
    fn csv_schema_violations_name_the_column() {
        let bad = "env,algorithm,WRONG,transfer_mode\n";
        match EvalReport::from_csv_str(bad) {
            Err(EvalError::Schema(msg)) => assert!(msg.contains("column"), "{msg}"),
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn trace_stream_has_one_record_per_step() {
        let env = small_env();
        let pool = pool_with(&env, &[("a", "dqn", HeadKind::QValues, 1)]);
        let spec = RolloutSpec {
            env: env.clone(),
            target_id: "a".into(),
            attack: Some(AttackSpec::new(NormKind::LInf, 0.02).unwrap()),
            source_id: None,
            seed: 3,
        };
        let mut buffer = Vec::new();
        let result = rollout_traced(&spec, &pool, Some(&mut buffer)).unwrap();
        let text = String::from_utf8(buffer).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("step,loss,norm,degenerate"));
        assert_eq!(lines.count(), result.length);
    }

    #[test]
    fn random_baseline_is_deterministic_and_bounded() {
        let env = small_env();
        let (mean, std) = random_policy_baseline(&env, 20, 0).unwrap();
        let (mean2, _) = random_policy_baseline(&env, 20, 0).unwrap();
        assert_eq!(mean, mean2);
        assert!((-1.0..=1.0).contains(&mean));
        assert!(std >= 0.0);
    }

    #[test]
    fn unknown_policy_is_reported() {
        let env = small_env();
        let pool = PolicyPool::new();
        let spec = RolloutSpec {
            env,
            target_id: "ghost".into(),
            attack: None,
            source_id: None,
            seed: 0,
        };
        assert!(matches!(
            rollout(&spec, &pool),
            Err(EvalError::UnknownPolicy(_))
        ));
    }
}
