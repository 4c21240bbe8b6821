//! Networks and parameter management.
//!
//! A feature extractor is a stack of blocks (linear layer + activation)
//! that exposes every block's output, so losses can attach to intermediate
//! features as well as the final ones. Parameters live in a [`ParamStore`]
//! keyed by dotted names; binding a store onto a tape turns the stored
//! values into differentiable leaves for one forward/backward pass.

mod adam;
mod checkpoint;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint};

use std::collections::BTreeMap;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::{GradStore, Tape, Tensor};

/// Gradients keyed by parameter name, as consumed by the optimizer.
pub type GradMap = BTreeMap<String, Tensor>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Elu,
    Softplus,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: &Tensor) -> Result<Tensor> {
        match self {
            Activation::Identity => Ok(x.clone()),
            Activation::Relu => tape.relu(x),
            Activation::Elu => tape.elu(x),
            Activation::Softplus => tape.softplus(x),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "identity" | "linear" => Ok(Activation::Identity),
            "relu" => Ok(Activation::Relu),
            "elu" => Ok(Activation::Elu),
            "softplus" => Ok(Activation::Softplus),
            other => Err(Error::parse(format!("unknown activation `{other}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
            Activation::Elu => "elu",
            Activation::Softplus => "softplus",
        }
    }
}

// ── Parameter store ────────────────────────────────────────────────────

#[derive(Clone, Debug)]
pub struct Param {
    pub value: Tensor,
    /// Per-parameter learning-rate multiplier applied by the optimizer.
    pub lr_mult: f64,
}

/// Named parameter tensors with per-name learning-rate multipliers.
///
/// Iteration is always in sorted name order, which keeps optimizer updates
/// and checkpoints deterministic.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: BTreeMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor) -> Result<()> {
        self.insert_with_mult(name, value, 1.0)
    }

    pub fn insert_with_mult(&mut self, name: &str, value: Tensor, lr_mult: f64) -> Result<()> {
        if !(lr_mult > 0.0) {
            return Err(Error::contract(format!(
                "lr multiplier for `{name}` must be positive, got {lr_mult}"
            )));
        }
        if self.params.contains_key(name) {
            return Err(Error::contract(format!("duplicate parameter name `{name}`")));
        }
        self.params.insert(name.to_string(), Param { value: value.detach(), lr_mult });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Param> {
        self.params
            .get(name)
            .ok_or_else(|| Error::contract(format!("unknown parameter `{name}`")))
    }

    pub fn value(&self, name: &str) -> Result<&Tensor> {
        Ok(&self.get(name)?.value)
    }

    /// Replaces a parameter's values; the shape must be unchanged.
    pub fn set_value(&mut self, name: &str, value: Tensor) -> Result<()> {
        let param = self
            .params
            .get_mut(name)
            .ok_or_else(|| Error::contract(format!("unknown parameter `{name}`")))?;
        if param.value.shape() != value.shape() {
            return Err(Error::dimension(format!(
                "parameter `{name}`: shape {:?} cannot replace {:?}",
                value.shape(),
                param.value.shape()
            )));
        }
        param.value = value.detach();
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Sorted iteration over `(name, param)`.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> Vec<String> {
        self.params.keys().cloned().collect()
    }

    /// Copies all parameters whose name starts with `prefix` into a new
    /// store (multipliers preserved).
    pub fn subset(&self, prefix: &str) -> ParamStore {
        let params = self
            .params
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        ParamStore { params }
    }

    /// Registers every parameter as a requires-grad leaf on `tape`. On an
    /// inactive tape the result holds plain constants.
    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        let map = self
            .params
            .iter()
            .map(|(k, v)| (k.clone(), tape.leaf(&v.value, true)))
            .collect();
        BoundParams { map }
    }

    /// Extracts gradients for every bound parameter from a backward pass.
    /// Parameters absent from the gradient store are reported in the
    /// second return value rather than silently dropped.
    pub fn collect_grads(&self, bound: &BoundParams, grads: &GradStore) -> (GradMap, Vec<String>) {
        let mut map = GradMap::new();
        let mut missing = Vec::new();
        for name in self.params.keys() {
            match bound.map.get(name).and_then(|t| grads.get(t)) {
                Some(g) => {
                    map.insert(name.clone(), g.clone());
                }
                None => missing.push(name.clone()),
            }
        }
        (map, missing)
    }
}

/// Parameters bound onto a tape for one pass.
#[derive(Debug)]
pub struct BoundParams {
    map: BTreeMap<String, Tensor>,
}

impl BoundParams {
    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.map
            .get(name)
            .ok_or_else(|| Error::contract(format!("parameter `{name}` not bound")))
    }
}

// ── Initialization ─────────────────────────────────────────────────────

/// Xavier-uniform weights: U(-a, a) with a = sqrt(6 / (d_in + d_out)).
pub fn xavier_uniform(rng: &mut Rng, d_in: usize, d_out: usize) -> Tensor {
    let a = (6.0 / (d_in + d_out) as f64).sqrt();
    let values: Vec<f64> = (0..d_in * d_out).map(|_| rng.gen_range(-a..a)).collect();
    Tensor::from_parts(vec![d_in, d_out], values)
}

// ── Block MLP ──────────────────────────────────────────────────────────

#[derive(Clone, Debug, PartialEq)]
pub struct BlockMlpSpec {
    pub input_dim: usize,
    /// Output width of each block, lowest block first. At least two blocks.
    pub widths: Vec<usize>,
    pub activation: Activation,
}

impl BlockMlpSpec {
    pub fn block_count(&self) -> usize {
        self.widths.len()
    }

    pub fn feature_dim(&self) -> usize {
        *self.widths.last().expect("validated non-empty")
    }
}

/// Feature extractor made of `B >= 2` blocks; the forward pass returns all
/// intermediate block outputs, final block last.
#[derive(Clone, Debug)]
pub struct BlockMlp {
    spec: BlockMlpSpec,
    prefix: String,
}

impl BlockMlp {
    pub fn new(spec: BlockMlpSpec, prefix: &str) -> Result<Self> {
        if spec.widths.len() < 2 {
            return Err(Error::contract(format!(
                "a block extractor needs at least 2 blocks, got {}",
                spec.widths.len()
            )));
        }
        if spec.input_dim == 0 || spec.widths.iter().any(|&w| w == 0) {
            return Err(Error::contract("zero-width layer".to_string()));
        }
        Ok(BlockMlp { spec, prefix: prefix.to_string() })
    }

    pub fn spec(&self) -> &BlockMlpSpec {
        &self.spec
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    fn weight_name(&self, block: usize) -> String {
        format!("{}.block{}.w", self.prefix, block)
    }

    fn bias_name(&self, block: usize) -> String {
        format!("{}.block{}.b", self.prefix, block)
    }

    /// Registers Xavier-uniform weights and zero biases.
    pub fn init_params(&self, store: &mut ParamStore, rng: &mut Rng) -> Result<()> {
        let mut d_in = self.spec.input_dim;
        for (b, &d_out) in self.spec.widths.iter().enumerate() {
            store.insert(&self.weight_name(b), xavier_uniform(rng, d_in, d_out))?;
            store.insert(&self.bias_name(b), Tensor::zeros(vec![d_out]))?;
            d_in = d_out;
        }
        Ok(())
    }

    /// Forward pass returning one feature tensor per block, lowest first;
    /// the last entry is the extractor output.
    pub fn forward_features(
        &self,
        tape: &mut Tape,
        params: &BoundParams,
        x: &Tensor,
    ) -> Result<Vec<Tensor>> {
        if x.rank() != 2 || x.shape()[1] != self.spec.input_dim {
            return Err(Error::dimension(format!(
                "extractor expects [n,{}] input, got {:?}",
                self.spec.input_dim,
                x.shape()
            )));
        }
        let mut features = Vec::with_capacity(self.spec.widths.len());
        let mut h = x.clone();
        for b in 0..self.spec.widths.len() {
            let w = params.get(&self.weight_name(b))?;
            let bias = params.get(&self.bias_name(b))?;
            let lin = tape.matmul(&h, w)?;
            let lin = tape.add_row(&lin, bias)?;
            let out = self.spec.activation.apply(tape, &lin)?;
            features.push(out.clone());
            h = out;
        }
        Ok(features)
    }

    /// Convenience forward without gradient recording.
    pub fn features_nograd(&self, store: &ParamStore, x: &Tensor) -> Result<Vec<Tensor>> {
        let mut tape = Tape::inactive();
        let bound = store.bind(&mut tape);
        self.forward_features(&mut tape, &bound, x)
    }
}

/// Deep-copies the extractor's parameters out of `store` into a frozen
/// model: its forward pass never records gradients and later mutation of
/// the source store cannot affect it.
pub fn clone_frozen(model: &BlockMlp, store: &ParamStore) -> Result<FrozenExtractor> {
    let params = store.subset(&format!("{}.", model.prefix()));
    let expect = model.spec().widths.len() * 2;
    if params.len() != expect {
        return Err(Error::contract(format!(
            "store holds {} `{}` parameters, extractor needs {expect}",
            params.len(),
            model.prefix()
        )));
    }
    Ok(FrozenExtractor { model: model.clone(), params })
}

/// A reference feature extractor with gradients permanently disabled.
#[derive(Clone, Debug)]
pub struct FrozenExtractor {
    model: BlockMlp,
    params: ParamStore,
}

impl FrozenExtractor {
    pub fn model(&self) -> &BlockMlp {
        &self.model
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn block_count(&self) -> usize {
        self.model.spec().block_count()
    }

    /// Block features as plain constants.
    pub fn features(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        self.model.features_nograd(&self.params, x)
    }
}

// ── Classifier ─────────────────────────────────────────────────────────

/// Dropout handling for the classifier forward pass.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut Rng),
}

#[derive(Clone, Debug)]
pub struct Classifier {
    pub input_dim: usize,
    pub classes: usize,
    /// Dropout probability on the classifier input, in [0, 1).
    pub dropout: f64,
    prefix: String,
}

impl Classifier {
    pub fn new(input_dim: usize, classes: usize, dropout: f64, prefix: &str) -> Result<Self> {
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::contract(format!("dropout {dropout} outside [0,1)")));
        }
        if classes < 2 {
            return Err(Error::contract("classifier needs at least 2 classes".to_string()));
        }
        Ok(Classifier { input_dim, classes, dropout, prefix: prefix.to_string() })
    }

    fn weight_name(&self) -> String {
        format!("{}.w", self.prefix)
    }

    fn bias_name(&self) -> String {
        format!("{}.b", self.prefix)
    }

    pub fn init_params(&self, store: &mut ParamStore, rng: &mut Rng) -> Result<()> {
        store.insert(&self.weight_name(), xavier_uniform(rng, self.input_dim, self.classes))?;
        store.insert(&self.bias_name(), Tensor::zeros(vec![self.classes]))
    }

    /// Affine logits; inverted dropout (scale 1/(1-p)) is applied to `z`
    /// only in train mode.
    pub fn forward_logits(
        &self,
        tape: &mut Tape,
        params: &BoundParams,
        z: &Tensor,
        mode: Mode<'_>,
    ) -> Result<Tensor> {
        if z.rank() != 2 || z.shape()[1] != self.input_dim {
            return Err(Error::dimension(format!(
                "classifier expects [n,{}] features, got {:?}",
                self.input_dim,
                z.shape()
            )));
        }
        let mut h = z.clone();
        if let Mode::Train(rng) = mode {
            if self.dropout > 0.0 {
                let keep_scale = 1.0 / (1.0 - self.dropout);
                let mask: Vec<f64> = (0..z.numel())
                    .map(|_| if rng.gen::<f64>() < self.dropout { 0.0 } else { keep_scale })
                    .collect();
                let mask = Tensor::from_parts(z.shape().to_vec(), mask);
                h = tape.mul(&h, &mask)?;
            }
        }
        let w = params.get(&self.weight_name())?;
        let b = params.get(&self.bias_name())?;
        let lin = tape.matmul(&h, w)?;
        tape.add_row(&lin, b)
    }

    /// Eval-mode class predictions (argmax of logits, ties to the lower
    /// class index).
    pub fn predict(&self, store: &ParamStore, z: &Tensor) -> Result<Vec<usize>> {
        let mut tape = Tape::inactive();
        let bound = store.bind(&mut tape);
        let logits = self.forward_logits(&mut tape, &bound, z, Mode::Eval)?;
        let k = self.classes;
        Ok((0..logits.rows())
            .map(|i| {
                let row = &logits.values()[i * k..(i + 1) * k];
                let mut best = 0;
                for (j, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect())
    }
}

/// Fraction of rows whose argmax prediction matches the label.
pub fn accuracy(
    model: &BlockMlp,
    classifier: &Classifier,
    store: &ParamStore,
    x: &Tensor,
    labels: &[usize],
) -> Result<f64> {
    let feats = model.features_nograd(store, x)?;
    let z = feats.last().expect("at least two blocks");
    let preds = classifier.predict(store, z)?;
    if preds.len() != labels.len() {
        return Err(Error::contract("prediction/label count mismatch".to_string()));
    }
    let hits = preds.iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / labels.len().max(1) as f64)
}

/// Finite-difference check of a loss over every parameter in `store`:
/// returns the worst relative error across all coordinates. The loss
/// closure must be a pure function of the bound parameters.
pub fn grad_check_params<F>(loss_fn: F, store: &ParamStore, step: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &BoundParams) -> Result<Tensor>,
{
    let mut tape = Tape::active();
    let bound = store.bind(&mut tape);
    let loss = loss_fn(&mut tape, &bound)?;
    if loss.numel() != 1 {
        return Err(Error::contract("grad_check_params expects a scalar loss"));
    }
    let grads = tape.backward(&loss)?;
    let (analytic, missing) = store.collect_grads(&bound, &grads);
    if !missing.is_empty() {
        return Err(Error::contract(format!("no gradient for {missing:?}")));
    }

    let eval = |st: &ParamStore| -> Result<f64> {
        let mut tape = Tape::inactive();
        let bound = st.bind(&mut tape);
        Ok(loss_fn(&mut tape, &bound)?.value())
    };

    let mut worst = 0.0f64;
    for (name, param) in store.iter() {
        let base = param.value.values();
        for i in 0..base.len() {
            let perturb = |delta: f64| -> Result<f64> {
                let mut vals = base.to_vec();
                vals[i] += delta;
                let mut st = store.clone();
                st.set_value(name, Tensor::from_parts(param.value.shape().to_vec(), vals))?;
                eval(&st)
            };
            let numeric = (perturb(step)? - perturb(-step)?) / (2.0 * step);
            let a = analytic[name].values()[i];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs() + 1e-12);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}
