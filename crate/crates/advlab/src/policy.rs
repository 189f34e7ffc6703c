//! Policy network representation, forward evaluation to action
//! distributions or Q-values, action selection, and checkpoint
//! serialization.
//!
//! One architecture description is shared by every training algorithm; the
//! head kind decides whether the final layer's output is read as softmax
//! logits (stochastic policies) or as raw Q-values (value-based policies,
//! which act greedily).

use crate::envs::Observation;
use crate::tensor::{Tape, Tensor, TensorError, VarId};
use rand::Rng;
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("observation shape {got:?} does not match network input {expected:?}")]
    ShapeMismatch { expected: Vec<usize>, got: Vec<usize> },
    #[error("operation requires a {expected} policy")]
    WrongKind { expected: &'static str },
    #[error("softmax temperature must be positive, got {temperature}")]
    InvalidTemperature { temperature: f64 },
    #[error("invalid architecture: {0}")]
    InvalidSpec(String),
    #[error("invalid action distribution: {0}")]
    InvalidDistribution(String),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

/// Errors raised when reading a checkpoint file.
#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("unsupported checkpoint version: {found:?}")]
    VersionMismatch { found: String },
    #[error("malformed checkpoint at line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("checkpoint is inconsistent: {reason}")]
    ShapeInconsistency { reason: String },
}

// ── Architecture ────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Layer {
    Conv {
        filters: usize,
        kernel: (usize, usize),
        stride: usize,
    },
    Relu,
    Flatten,
    Dense { units: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    /// Final layer output is passed through softmax.
    Distribution,
    /// Final layer output is read as raw Q-values.
    QValues,
}

/// Ordered layer descriptors plus the input shape and output head.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchitectureSpec {
    pub input_shape: Vec<usize>,
    pub layers: Vec<Layer>,
    pub head: HeadKind,
}

impl ArchitectureSpec {
    /// The shared desk-scale shape: one small conv layer into a dense
    /// hidden layer, scaled for 16×16-and-under inputs.
    pub fn desk_default(input_shape: Vec<usize>, actions: usize, head: HeadKind) -> Self {
        ArchitectureSpec {
            input_shape,
            layers: vec![
                Layer::Conv {
                    filters: 8,
                    kernel: (3, 3),
                    stride: 2,
                },
                Layer::Relu,
                Layer::Flatten,
                Layer::Dense { units: 64 },
                Layer::Relu,
                Layer::Dense { units: actions },
            ],
            head,
        }
    }

    /// Walk the layer chain and return each layer's logical output shape.
    /// Fails if any step is inconsistent or the output is not a flat
    /// vector of at least two actions.
    pub fn validate(&self) -> Result<Vec<Vec<usize>>, PolicyError> {
        let mut shape = self.input_shape.clone();
        if shape.len() != 3 || shape.iter().any(|&d| d == 0) {
            return Err(PolicyError::InvalidSpec(format!(
                "input shape must be [c, h, w] with positive dims, got {shape:?}"
            )));
        }
        let mut chain = Vec::with_capacity(self.layers.len());
        for (idx, layer) in self.layers.iter().enumerate() {
            shape = match layer {
                Layer::Conv {
                    filters,
                    kernel,
                    stride,
                } => {
                    if shape.len() != 3 {
                        return Err(PolicyError::InvalidSpec(format!(
                            "layer {idx}: conv needs a 3-D input, got {shape:?}"
                        )));
                    }
                    let (h, w) = (shape[1], shape[2]);
                    if *stride == 0 || kernel.0 > h || kernel.1 > w || *filters == 0 {
                        return Err(PolicyError::InvalidSpec(format!(
                            "layer {idx}: conv {filters}x{kernel:?}/{stride} does not fit {shape:?}"
                        )));
                    }
                    vec![
                        *filters,
                        (h - kernel.0) / stride + 1,
                        (w - kernel.1) / stride + 1,
                    ]
                }
                Layer::Relu => shape,
                Layer::Flatten => vec![shape.iter().product()],
                Layer::Dense { units } => {
                    if shape.len() != 1 || *units == 0 {
                        return Err(PolicyError::InvalidSpec(format!(
                            "layer {idx}: dense({units}) needs a flattened input, got {shape:?}"
                        )));
                    }
                    vec![*units]
                }
            };
            chain.push(shape.clone());
        }
        match chain.last() {
            Some(last) if last.len() == 1 && last[0] >= 2 => Ok(chain),
            other => Err(PolicyError::InvalidSpec(format!(
                "network must end in at least two outputs, got {other:?}"
            ))),
        }
    }

    pub fn action_count(&self) -> Result<usize, PolicyError> {
        Ok(self.validate()?.last().expect("validated chain")[0])
    }

    /// Named weight tensors this architecture requires, in layer order.
    pub fn weight_shapes(&self) -> Result<Vec<(String, Vec<usize>)>, PolicyError> {
        let chain = self.validate()?;
        let mut shapes = Vec::new();
        let mut current = self.input_shape.clone();
        for (idx, layer) in self.layers.iter().enumerate() {
            match layer {
                Layer::Conv {
                    filters, kernel, ..
                } => {
                    shapes.push((
                        format!("conv{idx}.w"),
                        vec![*filters, current[0], kernel.0, kernel.1],
                    ));
                }
                Layer::Dense { units } => {
                    shapes.push((format!("dense{idx}.w"), vec![*units, current[0]]));
                    shapes.push((format!("dense{idx}.b"), vec![*units, 1]));
                }
                Layer::Relu | Layer::Flatten => {}
            }
            current = chain[idx].clone();
        }
        Ok(shapes)
    }
}

// ── Weights and the network ─────────────────────────────────────────────

/// Ordered, named collection of weight tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMap {
    entries: Vec<(String, Tensor)>,
}

impl WeightMap {
    pub fn from_entries(entries: Vec<(String, Tensor)>) -> Self {
        WeightMap { entries }
    }

    pub fn entries(&self) -> &[(String, Tensor)] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    pub fn parameter_count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }
}

/// Uniform Xavier initialization for every layer; biases start at zero.
pub fn init_weights<R: Rng>(spec: &ArchitectureSpec, rng: &mut R) -> Result<WeightMap, PolicyError> {
    let mut entries = Vec::new();
    for (name, shape) in spec.weight_shapes()? {
        let tensor = if name.ends_with(".b") {
            Tensor::zeros(shape)
        } else {
            let (fan_in, fan_out) = if shape.len() == 4 {
                (shape[1] * shape[2] * shape[3], shape[0] * shape[2] * shape[3])
            } else {
                (shape[1], shape[0])
            };
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let numel: usize = shape.iter().product();
            let data = (0..numel).map(|_| rng.random_range(-limit..limit)).collect();
            Tensor::from_vec(shape, data)?
        };
        entries.push((name, tensor));
    }
    Ok(WeightMap { entries })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyKind {
    Stochastic,
    QValue,
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicyKind::Stochastic => write!(f, "stochastic"),
            PolicyKind::QValue => write!(f, "q-value"),
        }
    }
}

/// Where a policy came from: which algorithm, which training seed, and the
/// evaluation return it finished with.
#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub algorithm: String,
    pub seed: u64,
    pub train_return: f64,
}

/// A trained (or freshly initialized) policy: architecture plus weights.
/// Immutable once constructed; forward passes never mutate it.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNetwork {
    spec: ArchitectureSpec,
    weights: WeightMap,
    kind: PolicyKind,
    provenance: Provenance,
}

impl PolicyNetwork {
    pub fn new(
        spec: ArchitectureSpec,
        weights: WeightMap,
        provenance: Provenance,
    ) -> Result<Self, PolicyError> {
        let expected = spec.weight_shapes()?;
        if expected.len() != weights.entries.len() {
            return Err(PolicyError::InvalidSpec(format!(
                "expected {} weight tensors, got {}",
                expected.len(),
                weights.entries.len()
            )));
        }
        for ((name, shape), (got_name, got)) in expected.iter().zip(&weights.entries) {
            if name != got_name || shape != got.shape() {
                return Err(PolicyError::InvalidSpec(format!(
                    "weight {got_name} has shape {:?}, expected {name} {shape:?}",
                    got.shape()
                )));
            }
        }
        let kind = match spec.head {
            HeadKind::Distribution => PolicyKind::Stochastic,
            HeadKind::QValues => PolicyKind::QValue,
        };
        Ok(PolicyNetwork {
            spec,
            weights,
            kind,
            provenance,
        })
    }

    pub fn spec(&self) -> &ArchitectureSpec {
        &self.spec
    }

    pub fn weights(&self) -> &WeightMap {
        &self.weights
    }

    pub fn kind(&self) -> PolicyKind {
        self.kind
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn action_count(&self) -> usize {
        self.spec.action_count().expect("validated at construction")
    }
}

// ── Forward evaluation ──────────────────────────────────────────────────

/// Probability weights over actions; nonnegative and summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionDistribution {
    probs: Tensor,
}

impl ActionDistribution {
    pub fn new(probs: Tensor) -> Result<Self, PolicyError> {
        let sum: f64 = probs.data().iter().sum();
        if probs.data().iter().any(|&p| p < 0.0) {
            return Err(PolicyError::InvalidDistribution(
                "negative probability".into(),
            ));
        }
        if (sum - 1.0).abs() > 1e-9 {
            return Err(PolicyError::InvalidDistribution(format!(
                "probabilities sum to {sum}"
            )));
        }
        Ok(ActionDistribution { probs })
    }

    pub fn probs(&self) -> &[f64] {
        self.probs.data()
    }
}

/// Raw Q-values per action.
#[derive(Debug, Clone, PartialEq)]
pub struct QValues {
    values: Tensor,
}

impl QValues {
    pub fn new(values: Tensor) -> Self {
        QValues { values }
    }

    pub fn values(&self) -> &[f64] {
        self.values.data()
    }
}

#[derive(Debug, Clone)]
pub enum PolicyOutput {
    Distribution(ActionDistribution),
    Q(QValues),
}

/// Handles to a network's weights after insertion into a tape, so a batch
/// of forward passes can share one set of weight leaves.
pub struct TracedWeights {
    vars: Vec<VarId>,
}

impl TracedWeights {
    pub fn insert(net: &PolicyNetwork, tape: &mut Tape) -> Self {
        let vars = net
            .weights
            .entries()
            .iter()
            .map(|(_, t)| tape.leaf(t.clone()))
            .collect();
        TracedWeights { vars }
    }

    pub fn vars(&self) -> &[VarId] {
        &self.vars
    }
}

/// Result of one traced pass: the flat logits vector and the trunk
/// activation feeding the final dense layer (used by value heads).
pub struct TracedForward {
    pub logits: VarId,
    pub trunk: VarId,
}

/// Run the architecture on a recorded input, reusing already-inserted
/// weight leaves. Records every primitive on the tape.
pub fn traced_forward(
    spec: &ArchitectureSpec,
    weights: &TracedWeights,
    tape: &mut Tape,
    input: VarId,
) -> Result<TracedForward, PolicyError> {
    if tape.value(input).shape() != spec.input_shape.as_slice() {
        return Err(PolicyError::ShapeMismatch {
            expected: spec.input_shape.clone(),
            got: tape.value(input).shape().to_vec(),
        });
    }
    let mut next_weight = 0;
    let take = |n: &mut usize| {
        let v = weights.vars[*n];
        *n += 1;
        v
    };
    let mut current = input;
    let mut trunk = input;
    for layer in &spec.layers {
        current = match layer {
            Layer::Conv { stride, .. } => {
                let w = take(&mut next_weight);
                tape.conv2d(current, w, *stride)?
            }
            Layer::Relu => tape.relu(current)?,
            Layer::Flatten => {
                let numel = tape.value(current).numel();
                tape.reshape(current, vec![numel, 1])?
            }
            Layer::Dense { units } => {
                trunk = current;
                let w = take(&mut next_weight);
                let b = take(&mut next_weight);
                let prod = tape.matmul(w, current)?;
                let out = tape.add(prod, b)?;
                let _ = units;
                out
            }
        };
    }
    let actions = tape.value(current).numel();
    let logits = tape.reshape(current, vec![actions])?;
    Ok(TracedForward { logits, trunk })
}

/// Evaluate the policy on one observation: softmax action distribution for
/// distribution heads, raw values for Q-heads.
pub fn forward_policy(net: &PolicyNetwork, obs: &Observation) -> Result<PolicyOutput, PolicyError> {
    let mut tape = Tape::new();
    let input = tape.leaf(obs.frames().clone());
    let weights = TracedWeights::insert(net, &mut tape);
    let out = traced_forward(&net.spec, &weights, &mut tape, input)?;
    match net.spec.head {
        HeadKind::Distribution => {
            let probs = tape.softmax(out.logits)?;
            Ok(PolicyOutput::Distribution(ActionDistribution::new(
                tape.value(probs).clone(),
            )?))
        }
        HeadKind::QValues => Ok(PolicyOutput::Q(QValues::new(
            tape.value(out.logits).clone(),
        ))),
    }
}

/// Softmax of Q-values at the given temperature, with max subtraction.
pub fn q_to_distribution(q: &QValues, temperature: f64) -> Result<ActionDistribution, PolicyError> {
    if temperature <= 0.0 {
        return Err(PolicyError::InvalidTemperature { temperature });
    }
    let max = q
        .values()
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = q
        .values()
        .iter()
        .map(|&v| ((v - max) / temperature).exp())
        .collect();
    let total: f64 = exps.iter().sum();
    let probs: Vec<f64> = exps.iter().map(|&e| e / total).collect();
    let n = probs.len();
    ActionDistribution::new(Tensor::from_vec(vec![n], probs)?)
}

/// Index of the largest value; ties break toward the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Deterministic action choice: argmax of Q-values or of probabilities.
pub fn act_greedy(net: &PolicyNetwork, obs: &Observation) -> Result<usize, PolicyError> {
    Ok(match forward_policy(net, obs)? {
        PolicyOutput::Distribution(d) => argmax(d.probs()),
        PolicyOutput::Q(q) => argmax(q.values()),
    })
}

/// Sample one action from a distribution using the provided stream.
pub fn sample_action<R: Rng>(dist: &ActionDistribution, rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut cumulative = 0.0;
    for (i, &p) in dist.probs().iter().enumerate() {
        cumulative += p;
        if u < cumulative {
            return i;
        }
    }
    dist.probs().len() - 1
}

/// Sample an action from a stochastic policy's distribution. Q-value
/// policies are deterministic; use [`act_greedy`] for them.
pub fn act_stochastic<R: Rng>(
    net: &PolicyNetwork,
    obs: &Observation,
    rng: &mut R,
) -> Result<usize, PolicyError> {
    match forward_policy(net, obs)? {
        PolicyOutput::Distribution(d) => Ok(sample_action(&d, rng)),
        PolicyOutput::Q(_) => Err(PolicyError::WrongKind {
            expected: "stochastic",
        }),
    }
}

// ── Checkpoint io ───────────────────────────────────────────────────────
//
// Versioned line-oriented text. Field order is fixed:
//   advlab-checkpoint v1
//   kind <q|dist>
//   algorithm <tag>
//   seed <u64>
//   return <f64>
//   input <c> <h> <w>
//   layer <conv f kh kw stride | relu | flatten | dense units>   (repeated)
//   head <q|dist>
//   tensor <name> <ndim> <dims...>                               (repeated,
//     followed by its values, eight per line)
//   end
// Floats use Rust's shortest round-trip decimal form, so a save/load cycle
// reproduces every bit.

const CHECKPOINT_MAGIC: &str = "advlab-checkpoint v1";

pub fn save_checkpoint(net: &PolicyNetwork, path: &Path) -> Result<(), PolicyError> {
    let mut out = String::new();
    out.push_str(CHECKPOINT_MAGIC);
    out.push('\n');
    let kind = match net.kind {
        PolicyKind::QValue => "q",
        PolicyKind::Stochastic => "dist",
    };
    out.push_str(&format!("kind {kind}\n"));
    out.push_str(&format!("algorithm {}\n", net.provenance.algorithm));
    out.push_str(&format!("seed {}\n", net.provenance.seed));
    out.push_str(&format!("return {}\n", net.provenance.train_return));
    out.push_str(&format!(
        "input {} {} {}\n",
        net.spec.input_shape[0], net.spec.input_shape[1], net.spec.input_shape[2]
    ));
    for layer in &net.spec.layers {
        match layer {
            Layer::Conv {
                filters,
                kernel,
                stride,
            } => out.push_str(&format!(
                "layer conv {filters} {} {} {stride}\n",
                kernel.0, kernel.1
            )),
            Layer::Relu => out.push_str("layer relu\n"),
            Layer::Flatten => out.push_str("layer flatten\n"),
            Layer::Dense { units } => out.push_str(&format!("layer dense {units}\n")),
        }
    }
    out.push_str(&format!("head {kind}\n"));
    for (name, tensor) in net.weights.entries() {
        out.push_str(&format!("tensor {name} {}", tensor.shape().len()));
        for d in tensor.shape() {
            out.push_str(&format!(" {d}"));
        }
        out.push('\n');
        for chunk in tensor.data().chunks(8) {
            let line: Vec<String> = chunk.iter().map(|v| format!("{v}")).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
    }
    out.push_str("end\n");

    let mut file = std::fs::File::create(path).map_err(CheckpointError::Io)?;
    file.write_all(out.as_bytes()).map_err(CheckpointError::Io)?;
    Ok(())
}

struct LineReader {
    lines: Vec<String>,
    pos: usize,
}

impl LineReader {
    fn next(&mut self) -> Result<(usize, &str), CheckpointError> {
        if self.pos >= self.lines.len() {
            return Err(CheckpointError::Malformed {
                line: self.lines.len(),
                reason: "unexpected end of file".into(),
            });
        }
        self.pos += 1;
        Ok((self.pos, self.lines[self.pos - 1].as_str()))
    }

    fn peek(&self) -> Option<&str> {
        self.lines.get(self.pos).map(|s| s.as_str())
    }
}

fn malformed(line: usize, reason: impl Into<String>) -> CheckpointError {
    CheckpointError::Malformed {
        line,
        reason: reason.into(),
    }
}

fn expect_field<'a>(
    reader: &'a mut LineReader,
    key: &str,
) -> Result<(usize, &'a str), CheckpointError> {
    let (line_no, line) = reader.next()?;
    match line.strip_prefix(key).and_then(|r| r.strip_prefix(' ')) {
        Some(rest) => Ok((line_no, rest)),
        None => Err(malformed(line_no, format!("expected `{key} ...`"))),
    }
}

pub fn load_checkpoint(path: &Path) -> Result<PolicyNetwork, PolicyError> {
    let file = std::fs::File::open(path).map_err(CheckpointError::Io)?;
    let lines: Vec<String> = std::io::BufReader::new(file)
        .lines()
        .collect::<Result<_, _>>()
        .map_err(CheckpointError::Io)?;
    let mut reader = LineReader { lines, pos: 0 };

    let (_, magic) = reader.next()?;
    if magic != CHECKPOINT_MAGIC {
        return Err(CheckpointError::VersionMismatch {
            found: magic.to_string(),
        }
        .into());
    }

    let (kind_line, kind_str) = expect_field(&mut reader, "kind")?;
    let kind = match kind_str {
        "q" => PolicyKind::QValue,
        "dist" => PolicyKind::Stochastic,
        other => return Err(malformed(kind_line, format!("unknown kind {other:?}")).into()),
    };
    let (_, algorithm) = expect_field(&mut reader, "algorithm")?;
    let algorithm = algorithm.to_string();
    let (seed_line, seed_str) = expect_field(&mut reader, "seed")?;
    let seed: u64 = seed_str
        .parse()
        .map_err(|_| malformed(seed_line, "seed is not an integer"))?;
    let (ret_line, ret_str) = expect_field(&mut reader, "return")?;
    let train_return: f64 = ret_str
        .parse()
        .map_err(|_| malformed(ret_line, "return is not a number"))?;
    let (input_line, input_str) = expect_field(&mut reader, "input")?;
    let input_shape: Vec<usize> = input_str
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| malformed(input_line, "input shape is not integers"))?;

    let mut layers = Vec::new();
    loop {
        match reader.peek() {
            Some(line) if line.starts_with("layer ") => {
                let (line_no, rest) = expect_field(&mut reader, "layer")?;
                let tokens: Vec<&str> = rest.split_whitespace().collect();
                let layer = match tokens.as_slice() {
                    ["conv", f, kh, kw, s] => Layer::Conv {
                        filters: f
                            .parse()
                            .map_err(|_| malformed(line_no, "bad conv filters"))?,
                        kernel: (
                            kh.parse().map_err(|_| malformed(line_no, "bad kernel"))?,
                            kw.parse().map_err(|_| malformed(line_no, "bad kernel"))?,
                        ),
                        stride: s.parse().map_err(|_| malformed(line_no, "bad stride"))?,
                    },
                    ["relu"] => Layer::Relu,
                    ["flatten"] => Layer::Flatten,
                    ["dense", units] => Layer::Dense {
                        units: units
                            .parse()
                            .map_err(|_| malformed(line_no, "bad dense units"))?,
                    },
                    _ => return Err(malformed(line_no, format!("unknown layer {rest:?}")).into()),
                };
                layers.push(layer);
            }
            _ => break,
        }
    }

    let (head_line, head_str) = expect_field(&mut reader, "head")?;
    let head = match head_str {
        "q" => HeadKind::QValues,
        "dist" => HeadKind::Distribution,
        other => return Err(malformed(head_line, format!("unknown head {other:?}")).into()),
    };
    let expected_kind = match head {
        HeadKind::Distribution => PolicyKind::Stochastic,
        HeadKind::QValues => PolicyKind::QValue,
    };
    if kind != expected_kind {
        return Err(CheckpointError::ShapeInconsistency {
            reason: format!("kind {kind} disagrees with head {head_str}"),
        }
        .into());
    }

    let spec = ArchitectureSpec {
        input_shape,
        layers,
        head,
    };
    let expected_weights = spec.weight_shapes().map_err(|e| {
        CheckpointError::ShapeInconsistency {
            reason: e.to_string(),
        }
    })?;

    let mut entries = Vec::new();
    for (want_name, want_shape) in &expected_weights {
        let (line_no, rest) = expect_field(&mut reader, "tensor")?;
        let tokens: Vec<&str> = rest.split_whitespace().collect();
        if tokens.len() < 2 {
            return Err(malformed(line_no, "tensor header too short").into());
        }
        let name = tokens[0].to_string();
        let ndim: usize = tokens[1]
            .parse()
            .map_err(|_| malformed(line_no, "bad tensor rank"))?;
        if tokens.len() != 2 + ndim {
            return Err(malformed(line_no, "tensor rank disagrees with dims").into());
        }
        let shape: Vec<usize> = tokens[2..]
            .iter()
            .map(|t| t.parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|_| malformed(line_no, "bad tensor dims"))?;
        if &name != want_name || &shape != want_shape {
            return Err(CheckpointError::ShapeInconsistency {
                reason: format!(
                    "tensor {name} {shape:?} does not match architecture ({want_name} {want_shape:?})"
                ),
            }
            .into());
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        while data.len() < numel {
            let (line_no, line) = reader.next()?;
            for token in line.split_whitespace() {
                let v: f64 = token
                    .parse()
                    .map_err(|_| malformed(line_no, format!("bad float {token:?}")))?;
                data.push(v);
            }
            if data.len() > numel {
                return Err(malformed(line_no, "too many values for tensor").into());
            }
        }
        entries.push((
            name,
            Tensor::from_vec(shape, data).map_err(|e| CheckpointError::ShapeInconsistency {
                reason: e.to_string(),
            })?,
        ));
    }

    let (end_line, end) = reader.next()?;
    if end != "end" {
        return Err(malformed(end_line, "missing end marker").into());
    }

    PolicyNetwork::new(
        spec,
        WeightMap::from_entries(entries),
        Provenance {
            algorithm,
            seed,
            train_return,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::Observation;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_spec(head: HeadKind) -> ArchitectureSpec {
        ArchitectureSpec {
            input_shape: vec![2, 5, 5],
            layers: vec![
                Layer::Conv {
                    filters: 3,
                    kernel: (2, 2),
                    stride: 1,
                },
                Layer::Relu,
                Layer::Flatten,
                Layer::Dense { units: 8 },
                Layer::Relu,
                Layer::Dense { units: 4 },
            ],
            head,
        }
    }

    fn random_net(head: HeadKind, seed: u64) -> PolicyNetwork {
        let spec = tiny_spec(head);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = init_weights(&spec, &mut rng).unwrap();
        PolicyNetwork::new(
            spec,
            weights,
            Provenance {
                algorithm: "test".into(),
                seed,
                train_return: 0.0,
            },
        )
        .unwrap()
    }

    fn zero_net(head: HeadKind) -> PolicyNetwork {
        let spec = tiny_spec(head);
        let weights = WeightMap::from_entries(
            spec.weight_shapes()
                .unwrap()
                .into_iter()
                .map(|(n, s)| (n, Tensor::zeros(s)))
                .collect(),
        );
        PolicyNetwork::new(
            spec,
            weights,
            Provenance {
                algorithm: "test".into(),
                seed: 0,
                train_return: 0.0,
            },
        )
        .unwrap()
    }

    fn random_obs(seed: u64) -> Observation {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..50).map(|_| rng.random_range(0.0..1.0)).collect();
        Observation::from_tensor(Tensor::from_vec(vec![2, 5, 5], data).unwrap())
    }

    #[test]
    fn zero_weights_give_uniform_distribution() {
        let net = zero_net(HeadKind::Distribution);
        match forward_policy(&net, &random_obs(1)).unwrap() {
            PolicyOutput::Distribution(d) => {
                for &p in d.probs() {
                    assert!((p - 0.25).abs() < 1e-12);
                }
            }
            _ => panic!("expected distribution"),
        }
    }

    #[test]
    fn zero_weights_give_zero_q() {
        let net = zero_net(HeadKind::QValues);
        match forward_policy(&net, &random_obs(1)).unwrap() {
            PolicyOutput::Q(q) => assert!(q.values().iter().all(|&v| v == 0.0)),
            _ => panic!("expected q-values"),
        }
    }

    #[test]
    fn distribution_sums_to_one() {
        let net = random_net(HeadKind::Distribution, 5);
        for seed in 0..20 {
            match forward_policy(&net, &random_obs(seed)).unwrap() {
                PolicyOutput::Distribution(d) => {
                    let sum: f64 = d.probs().iter().sum();
                    assert!((sum - 1.0).abs() < 1e-9);
                    assert!(d.probs().iter().all(|&p| p >= 0.0));
                }
                _ => unreachable!(),
            }
        }
    }

    #[test]
    fn observation_shape_is_checked() {
        let net = random_net(HeadKind::Distribution, 5);
        let bad = Observation::from_tensor(Tensor::zeros(vec![2, 4, 4]));
        assert!(matches!(
            forward_policy(&net, &bad),
            Err(PolicyError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn q_to_distribution_basics() {
        let q = QValues::new(Tensor::from_vec(vec![3], vec![1.0, 1.0, 1.0]).unwrap());
        let d = q_to_distribution(&q, 1.0).unwrap();
        for &p in d.probs() {
            assert!((p - 1.0 / 3.0).abs() < 1e-12);
        }

        let q = QValues::new(Tensor::from_vec(vec![2], vec![0.0, 2.0_f64.ln()]).unwrap());
        let d = q_to_distribution(&q, 1.0).unwrap();
        assert!((d.probs()[0] - 1.0 / 3.0).abs() < 1e-12);
        assert!((d.probs()[1] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn q_to_distribution_is_shift_invariant() {
        let big = QValues::new(Tensor::from_vec(vec![2], vec![1000.0, 1001.0]).unwrap());
        let small = QValues::new(Tensor::from_vec(vec![2], vec![0.0, 1.0]).unwrap());
        let db = q_to_distribution(&big, 1.0).unwrap();
        let ds = q_to_distribution(&small, 1.0).unwrap();
        for (a, b) in db.probs().iter().zip(ds.probs()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn q_to_distribution_rejects_bad_temperature() {
        let q = QValues::new(Tensor::from_vec(vec![2], vec![0.0, 1.0]).unwrap());
        assert!(matches!(
            q_to_distribution(&q, 0.0),
            Err(PolicyError::InvalidTemperature { .. })
        ));
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[0.1, 0.9, 0.3]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        // constant shifts leave the winner unchanged
        assert_eq!(argmax(&[1.1, 1.9, 1.3]), 1);
    }

    #[test]
    fn stochastic_sampling_matches_distribution() {
        // degenerate distribution always picks its only support
        let d = ActionDistribution::new(Tensor::from_vec(vec![3], vec![1.0, 0.0, 0.0]).unwrap())
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            assert_eq!(sample_action(&d, &mut rng), 0);
        }

        // an even coin lands near half over 10k draws
        let d = ActionDistribution::new(Tensor::from_vec(vec![2], vec![0.5, 0.5]).unwrap())
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let zeros = (0..10_000)
            .filter(|_| sample_action(&d, &mut rng) == 0)
            .count();
        let freq = zeros as f64 / 10_000.0;
        assert!((0.48..=0.52).contains(&freq), "frequency {freq}");
    }

    #[test]
    fn same_rng_seed_gives_same_action_sequence() {
        let net = random_net(HeadKind::Distribution, 9);
        let obs = random_obs(3);
        let sample = |seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..20)
                .map(|_| act_stochastic(&net, &obs, &mut rng).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(sample(11), sample(11));
    }

    #[test]
    fn act_stochastic_rejects_q_head() {
        let net = random_net(HeadKind::QValues, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            act_stochastic(&net, &random_obs(0), &mut rng),
            Err(PolicyError::WrongKind { .. })
        ));
    }

    #[test]
    fn checkpoint_round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        let net = random_net(HeadKind::QValues, 21);
        save_checkpoint(&net, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();

        assert_eq!(loaded.kind(), PolicyKind::QValue);
        assert_eq!(loaded.provenance(), net.provenance());
        for seed in 0..100 {
            let obs = random_obs(seed);
            let (a, b) = (
                forward_policy(&net, &obs).unwrap(),
                forward_policy(&loaded, &obs).unwrap(),
            );
            match (a, b) {
                (PolicyOutput::Q(x), PolicyOutput::Q(y)) => {
                    assert_eq!(x.values(), y.values());
                }
                _ => panic!("kind changed across round trip"),
            }
        }
    }

    #[test]
    fn truncated_checkpoint_is_malformed() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        let net = random_net(HeadKind::Distribution, 3);
        save_checkpoint(&net, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let cut = text.len() / 2;
        std::fs::write(&path, &text[..cut]).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(PolicyError::Checkpoint(CheckpointError::Malformed { .. }))
        ));
    }

    #[test]
    fn wrong_version_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        std::fs::write(&path, "advlab-checkpoint v99\n").unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(PolicyError::Checkpoint(CheckpointError::VersionMismatch { .. }))
        ));
    }

    #[test]
    fn weight_shape_mismatch_is_rejected() {
        let spec = tiny_spec(HeadKind::QValues);
        let mut shapes = spec.weight_shapes().unwrap();
        shapes[0].1 = vec![1, 1, 1, 1];
        let weights = WeightMap::from_entries(
            shapes
                .into_iter()
                .map(|(n, s)| (n, Tensor::zeros(s)))
                .collect(),
        );
        assert!(PolicyNetwork::new(
            spec,
            weights,
            Provenance {
                algorithm: "test".into(),
                seed: 0,
                train_return: 0.0,
            },
        )
        .is_err());
    }
}
