//! Network architectures: the approximator, the two-head small network, the
//! big model (white-box network or ground-truth oracle), FLOPs accounting and
//! checkpoint files.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::data::{one_hot, Dataset};
use crate::error::{contract, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Classification,
    Regression,
}

/// Layer widths of a dense network. The extractor is shared by both heads;
/// `head` is the approximator head whose last width is the number of classes
/// (or regression outputs). The predictor head is always a single dense layer
/// from the extractor output to one unit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchSpec {
    pub input_dim: usize,
    pub extractor: Vec<usize>,
    pub head: Vec<usize>,
    #[serde(default = "default_task")]
    pub task: Task,
}

fn default_task() -> Task {
    Task::Classification
}

impl ArchSpec {
    pub fn classifier(input_dim: usize, extractor: Vec<usize>, head: Vec<usize>) -> Self {
        Self {
            input_dim,
            extractor,
            head,
            task: Task::Classification,
        }
    }

    pub fn regressor(input_dim: usize, extractor: Vec<usize>, head: Vec<usize>) -> Self {
        Self {
            input_dim,
            extractor,
            head,
            task: Task::Regression,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return contract("input_dim must be positive");
        }
        if self.head.is_empty() {
            return contract("approximator head needs at least one layer");
        }
        if self.extractor.iter().chain(&self.head).any(|&w| w == 0) {
            return contract(format!("layer widths must be positive: {self}"));
        }
        if self.task == Task::Classification && self.outputs() < 2 {
            return contract(format!("classification needs K >= 2, got {}", self.outputs()));
        }
        Ok(())
    }

    /// K for classification, output dimension for regression.
    pub fn outputs(&self) -> usize {
        *self.head.last().unwrap_or(&0)
    }

    pub fn feature_dim(&self) -> usize {
        self.extractor.last().copied().unwrap_or(self.input_dim)
    }

    pub fn extractor_dims(&self) -> Vec<(usize, usize)> {
        chain_dims(self.input_dim, &self.extractor)
    }

    pub fn head_dims(&self) -> Vec<(usize, usize)> {
        chain_dims(self.feature_dim(), &self.head)
    }

    pub fn predictor_dims(&self) -> (usize, usize) {
        (self.feature_dim(), 1)
    }
}

impl std::fmt::Display for ArchSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{:?} d={} extractor={:?} head={:?}",
            self.task, self.input_dim, self.extractor, self.head
        )
    }
}

fn chain_dims(mut fan_in: usize, widths: &[usize]) -> Vec<(usize, usize)> {
    widths
        .iter()
        .map(|&w| {
            let d = (fan_in, w);
            fan_in = w;
            d
        })
        .collect()
}

fn layer_flops((fan_in, fan_out): (usize, usize)) -> u64 {
    (2 * fan_in * fan_out + fan_out) as u64
}

/// Dense-layer FLOPs: `2·in·out + out` per layer (one multiply and one add per
/// MAC, plus the bias add).
pub fn count_flops(spec: &ArchSpec, include_predictor: bool) -> u64 {
    let body: u64 = spec
        .extractor_dims()
        .into_iter()
        .chain(spec.head_dims())
        .map(layer_flops)
        .sum();
    if include_predictor {
        body + layer_flops(spec.predictor_dims())
    } else {
        body
    }
}

/// Picks the pool member with the most FLOPs that still fits `budget_flops`.
/// Ties go to the earlier entry.
pub fn profile_select(pool: &[(String, ArchSpec)], budget_flops: u64) -> Result<&str> {
    if pool.is_empty() {
        return contract("architecture pool is empty");
    }
    let mut best: Option<(&str, u64)> = None;
    for (name, spec) in pool {
        let flops = count_flops(spec, true);
        if flops <= budget_flops && best.is_none_or(|(_, f)| flops > f) {
            best = Some((name, flops));
        }
    }
    best.map(|(n, _)| n).ok_or(Error::NoArchitectureFits {
        budget: budget_flops,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Dense {
    fn init(store: &mut ParamStore, (fan_in, fan_out): (usize, usize), rng: &mut ChaCha8Rng, zero_bias: bool) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w: Vec<f64> = (0..fan_in * fan_out).map(|_| rng.gen_range(-bound..=bound)).collect();
        let b: Vec<f64> = if zero_bias {
            vec![0.0; fan_out]
        } else {
            (0..fan_out).map(|_| rng.gen_range(-bound..=bound)).collect()
        };
        Self {
            weight: store.add(Tensor::new(vec![fan_in, fan_out], w).unwrap()),
            bias: store.add(Tensor::vector(b)),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.dense(x, w, b)
    }
}

fn check_width(spec: &ArchSpec, x: &Tensor) -> Result<()> {
    if x.shape().len() != 2 || x.cols() != spec.input_dim {
        return Err(Error::Dimension {
            op: "network input",
            left: x.shape().to_vec(),
            right: vec![spec.input_dim],
        });
    }
    Ok(())
}

/// Feature extractor plus approximator head, without a predictor.
#[derive(Debug, Clone, PartialEq)]
pub struct Approximator {
    arch: ArchSpec,
    params: ParamStore,
    extractor: Vec<Dense>,
    head: Vec<Dense>,
}

impl Approximator {
    /// Fan-in scaled uniform initialization in `[-1/√fan_in, 1/√fan_in]`.
    pub fn new(arch: ArchSpec, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let extractor = arch
            .extractor_dims()
            .into_iter()
            .map(|d| Dense::init(&mut params, d, &mut rng, false))
            .collect();
        let head = arch
            .head_dims()
            .into_iter()
            .map(|d| Dense::init(&mut params, d, &mut rng, false))
            .collect();
        Ok(Self {
            arch,
            params,
            extractor,
            head,
        })
    }

    pub fn arch(&self) -> &ArchSpec {
        &self.arch
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn extractor_layers(&self) -> &[Dense] {
        &self.extractor
    }

    pub fn head_layers(&self) -> &[Dense] {
        &self.head
    }

    /// Shared features: relu after every extractor layer.
    pub fn features(&self, g: &mut Graph, x: Var) -> Result<Var> {
        self.features_with(g, &self.params, x)
    }

    fn features_with(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let mut h = x;
        for layer in &self.extractor {
            let z = layer.forward(g, store, h)?;
            h = g.relu(z)?;
        }
        Ok(h)
    }

    /// Approximator head: relu between hidden layers, softmax (classification)
    /// or identity (regression) on the last.
    pub fn head_forward(&self, g: &mut Graph, features: Var) -> Result<Var> {
        self.head_forward_with(g, &self.params, features)
    }

    fn head_forward_with(&self, g: &mut Graph, store: &ParamStore, features: Var) -> Result<Var> {
        let mut h = features;
        let last = self.head.len() - 1;
        for (i, layer) in self.head.iter().enumerate() {
            let z = layer.forward(g, store, h)?;
            h = if i < last {
                g.relu(z)?
            } else {
                match self.arch.task {
                    Task::Classification => g.softmax(z)?,
                    Task::Regression => z,
                }
            };
        }
        Ok(h)
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let f = self.features(g, x)?;
        self.head_forward(g, f)
    }

    /// Class probabilities (or regression outputs) for a `M × d` batch.
    pub fn predict(&self, batch: &Tensor) -> Result<Tensor> {
        check_width(&self.arch, batch)?;
        let mut g = Graph::new();
        let x = g.input(batch.clone());
        let out = self.forward(&mut g, x)?;
        Ok(g.value(out).clone())
    }

    /// Fraction of `data` whose argmax prediction equals the label.
    pub fn accuracy(&self, data: &Dataset) -> Result<f64> {
        let labels = data
            .labels()
            .ok_or_else(|| Error::Contract("accuracy needs class labels".into()))?;
        let probs = self.predict(&data.feature_tensor())?;
        let correct = (0..data.len())
            .filter(|&i| argmax(probs.row(i)) == labels[i])
            .count();
        Ok(correct as f64 / data.len() as f64)
    }
}

/// Index of the largest entry (first one on ties).
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Small network with a shared extractor, the approximator head and the
/// scalar predictor head `q(x) = sigmoid(w·features + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoHeadNet {
    approx: Approximator,
    predictor: Dense,
}

/// Adds a freshly initialized predictor head to a pretrained approximator.
/// All approximator parameters are reused unchanged; the predictor bias starts
/// at zero.
pub fn insert_predictor_head(pretrained: Approximator, seed: u64) -> TwoHeadNet {
    let mut approx = pretrained;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let dims = approx.arch.predictor_dims();
    let predictor = Dense::init(&mut approx.params, dims, &mut rng, true);
    TwoHeadNet { approx, predictor }
}

/// Output of a two-head forward pass recorded on a graph.
#[derive(Debug, Clone, Copy)]
pub struct TwoHeadVars {
    /// `M × K` probabilities (or `M × m` regression outputs).
    pub out: Var,
    /// Length-`M` predictor scores.
    pub q: Var,
}

impl TwoHeadNet {
    pub fn arch(&self) -> &ArchSpec {
        &self.approx.arch
    }

    pub fn approximator(&self) -> &Approximator {
        &self.approx
    }

    pub fn params(&self) -> &ParamStore {
        &self.approx.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.approx.params
    }

    pub fn predictor_layer(&self) -> Dense {
        self.predictor
    }

    /// Drops the predictor head.
    pub fn into_approximator(self) -> Approximator {
        let mut approx = self.approx;
        let mut kept = ParamStore::new();
        for (id, t) in approx.params.ids().zip(approx.params.iter()) {
            if id != self.predictor.weight && id != self.predictor.bias {
                kept.add(t.clone());
            }
        }
        approx.params = kept;
        approx
    }

    /// One shared extractor pass feeding both heads.
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<TwoHeadVars> {
        self.forward_with(g, &self.approx.params, x)
    }

    /// [`forward`](Self::forward) with parameter values read from `store`,
    /// which must share this net's layout (e.g. a clone of [`params`](Self::params)).
    pub fn forward_with(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<TwoHeadVars> {
        let f = self.approx.features_with(g, store, x)?;
        let out = self.approx.head_forward_with(g, store, f)?;
        let logit = self.predictor.forward(g, store, f)?;
        let q = g.sigmoid(logit)?;
        let m = g.value(q).rows();
        let q = g.reshape(q, vec![m])?;
        Ok(TwoHeadVars { out, q })
    }

    /// `(probs, q)` for a `M × d` batch.
    pub fn predict(&self, batch: &Tensor) -> Result<(Tensor, Vec<f64>)> {
        check_width(self.arch(), batch)?;
        let mut g = Graph::new();
        let x = g.input(batch.clone());
        let vars = self.forward(&mut g, x)?;
        Ok((g.value(vars.out).clone(), g.value(vars.q).values().to_vec()))
    }
}

/// The cloud model: a trained network or the ground-truth oracle.
#[derive(Debug, Clone, PartialEq)]
pub enum BigModel {
    WhiteBox(Approximator),
    Oracle,
}

impl BigModel {
    pub fn is_oracle(&self) -> bool {
        matches!(self, BigModel::Oracle)
    }

    /// `M × K` probabilities for the given rows of `data`. The oracle answers
    /// with the one-hot ground-truth label of each queried row.
    pub fn probs(&self, data: &Dataset, idx: &[usize]) -> Result<Tensor> {
        match self {
            BigModel::WhiteBox(net) => net.predict(&data.batch_features(idx)),
            BigModel::Oracle => {
                let labels = data
                    .batch_labels(idx)
                    .ok_or_else(|| Error::Contract("oracle probabilities need class labels".into()))?;
                let k = data.num_classes().unwrap();
                let rows: Vec<Vec<f64>> = labels.iter().map(|&y| one_hot(y, k)).collect::<Result<_>>()?;
                Tensor::from_rows(&rows)
            }
        }
    }

    /// Per-sample correctness of the big model's argmax on `data`.
    pub fn correct(&self, data: &Dataset) -> Result<Vec<bool>> {
        match self {
            BigModel::Oracle => Ok(vec![true; data.len()]),
            BigModel::WhiteBox(net) => {
                let labels = data
                    .labels()
                    .ok_or_else(|| Error::Contract("white-box correctness needs class labels".into()))?;
                let probs = net.predict(&data.feature_tensor())?;
                Ok((0..data.len()).map(|i| argmax(probs.row(i)) == labels[i]).collect())
            }
        }
    }
}

pub const CHECKPOINT_FORMAT: &str = "appeal-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointKind {
    Approximator,
    TwoHead,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StoredTensor {
    shape: Vec<usize>,
    values: Vec<f64>,
}

/// On-disk layout: JSON with the architecture and every parameter array in
/// layer order (extractor, approximator head, then predictor weight/bias).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    format: String,
    version: u32,
    kind: CheckpointKind,
    arch: ArchSpec,
    params: Vec<StoredTensor>,
}

fn stored(store: &ParamStore) -> Vec<StoredTensor> {
    store
        .iter()
        .map(|t| StoredTensor {
            shape: t.shape().to_vec(),
            values: t.values().to_vec(),
        })
        .collect()
}

fn write_checkpoint(path: &Path, file: &CheckpointFile) -> Result<()> {
    let mut text = serde_json::to_string_pretty(file)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn read_checkpoint(path: &Path, kind: CheckpointKind) -> Result<CheckpointFile> {
    let text = std::fs::read_to_string(path)?;
    let file: CheckpointFile = serde_json::from_str(&text)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    if file.format != CHECKPOINT_FORMAT || file.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "{}: unsupported format {:?} version {}",
            path.display(),
            file.format,
            file.version
        )));
    }
    if file.kind != kind {
        return Err(Error::Checkpoint(format!(
            "{}: expected a {kind:?} checkpoint, found {:?}",
            path.display(),
            file.kind
        )));
    }
    Ok(file)
}

fn restore(arch: &ArchSpec, stored: Vec<StoredTensor>, with_predictor: bool) -> Result<(Approximator, Option<Dense>)> {
    let mut net = Approximator::new(arch.clone(), 0)?;
    let mut predictor = None;
    if with_predictor {
        predictor = Some(Dense::init(
            &mut net.params,
            arch.predictor_dims(),
            &mut ChaCha8Rng::seed_from_u64(0),
            true,
        ));
    }
    if stored.len() != net.params.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} parameter arrays for {arch}, found {}",
            net.params.len(),
            stored.len()
        )));
    }
    let ids: Vec<_> = net.params.ids().collect();
    for (id, st) in ids.into_iter().zip(stored) {
        let t = net.params.get_mut(id);
        if t.shape() != st.shape.as_slice() {
            return Err(Error::Checkpoint(format!(
                "parameter {} has shape {:?}, expected {:?}",
                id.index(),
                st.shape,
                t.shape()
            )));
        }
        *t = Tensor::new(st.shape, st.values)?;
    }
    Ok((net, predictor))
}

impl Approximator {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_checkpoint(
            path.as_ref(),
            &CheckpointFile {
                format: CHECKPOINT_FORMAT.into(),
                version: CHECKPOINT_VERSION,
                kind: CheckpointKind::Approximator,
                arch: self.arch.clone(),
                params: stored(&self.params),
            },
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = read_checkpoint(path.as_ref(), CheckpointKind::Approximator)?;
        Ok(restore(&file.arch, file.params, false)?.0)
    }
}

impl TwoHeadNet {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_checkpoint(
            path.as_ref(),
            &CheckpointFile {
                format: CHECKPOINT_FORMAT.into(),
                version: CHECKPOINT_VERSION,
                kind: CheckpointKind::TwoHead,
                arch: self.arch().clone(),
                params: stored(self.params()),
            },
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = read_checkpoint(path.as_ref(), CheckpointKind::TwoHead)?;
        let (approx, predictor) = restore(&file.arch, file.params, true)?;
        Ok(Self {
            approx,
            predictor: predictor.unwrap(),
        })
    }
}
