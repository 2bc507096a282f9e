//! Ordered layered models. Layer 0 is nearest the input, the last layer is
//! the output head.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{init_layer, layer_forward, LayerInput, LayerKind, LayerSpec, Mode, SeqShape};
use crate::rng::{purpose, Rng};
use crate::tape::{grad_check, ParamId, Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    /// Next-token prediction at every timestep.
    CharLm,
    /// One label per sequence, predicted from the last timestep.
    SeqClassify,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    pub params: Vec<Tensor>,
    pub frozen: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayeredModel {
    layers: Vec<Layer>,
    task: TaskKind,
    seed: u64,
    trained_epoch: Option<usize>,
}

/// A minibatch of equal-length sequences in time-major order.
///
/// `tokens[t * batch + b]` is token `t` of sequence `b`. Targets are laid out
/// the same way for language modelling and hold one label per sequence for
/// classification.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub tokens: Vec<usize>,
    pub targets: Vec<usize>,
    pub steps: usize,
    pub batch: usize,
}

impl Batch {
    pub fn shape(&self) -> SeqShape {
        SeqShape {
            steps: self.steps,
            batch: self.batch,
        }
    }
}

/// Checks the structural invariants of a layer stack.
pub fn validate_specs(specs: &[LayerSpec]) -> Result<()> {
    let top = specs.last().ok_or_else(|| Error::config("a model needs at least one layer"))?;
    for spec in specs {
        spec.validate()?;
    }
    for (k, pair) in specs.windows(2).enumerate() {
        if pair[0].output_dim != pair[1].input_dim {
            return Err(Error::config(format!(
                "layer {k} (`{}`) emits width {} but layer {} (`{}`) expects {}",
                pair[0],
                pair[0].output_dim,
                k + 1,
                pair[1],
                pair[1].input_dim
            )));
        }
    }
    if top.kind != LayerKind::Output {
        return Err(Error::config(format!("topmost layer `{top}` is not an output head")));
    }
    if let Some(k) = specs[..specs.len() - 1].iter().position(|s| s.kind == LayerKind::Output) {
        return Err(Error::config(format!("output head at layer {k} is not topmost")));
    }
    if let Some(k) = specs.iter().skip(1).position(|s| s.kind == LayerKind::Embedding) {
        return Err(Error::config(format!("embedding at layer {} must be layer 0", k + 1)));
    }
    Ok(())
}

/// Builds a model with every layer initialised from its own substream of
/// `seed`. All layers start unfrozen.
pub fn build_model(specs: &[LayerSpec], task: TaskKind, seed: u64) -> Result<LayeredModel> {
    validate_specs(specs)?;
    let root = Rng::new(seed);
    let layers = specs
        .iter()
        .enumerate()
        .map(|(k, spec)| Layer {
            spec: *spec,
            params: init_layer(spec, &init_stream(&root, k)),
            frozen: false,
        })
        .collect();
    Ok(LayeredModel {
        layers,
        task,
        seed,
        trained_epoch: None,
    })
}

/// The substream that initialises layer `index` under `root`.
pub(crate) fn init_stream(root: &Rng, index: usize) -> Rng {
    root.substream(&[purpose::INIT, index as u64])
}

impl LayeredModel {
    /// Reassembles a model from stored parts, checking every invariant.
    pub fn from_layers(layers: Vec<Layer>, task: TaskKind, seed: u64) -> Result<Self> {
        let specs: Vec<LayerSpec> = layers.iter().map(|l| l.spec).collect();
        validate_specs(&specs)?;
        for (k, layer) in layers.iter().enumerate() {
            let shapes = layer.spec.param_shapes();
            if shapes.len() != layer.params.len()
                || shapes.iter().zip(&layer.params).any(|(s, p)| s.as_slice() != p.shape())
            {
                return Err(Error::config(format!(
                    "layer {k} (`{}`) parameters do not match its spec",
                    layer.spec
                )));
            }
        }
        Ok(Self {
            layers,
            task,
            seed,
            trained_epoch: None,
        })
    }

    pub fn with_trained_epoch(mut self, epoch: Option<usize>) -> Self {
        self.trained_epoch = epoch;
        self
    }

    /// Epoch of the training run these parameters come from; `None` for a
    /// freshly built model.
    pub fn trained_epoch(&self) -> Option<usize> {
        self.trained_epoch
    }

    pub(crate) fn set_trained_epoch(&mut self, epoch: usize) {
        self.trained_epoch = Some(epoch);
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layer(&self, index: usize) -> &Layer {
        &self.layers[index]
    }

    pub(crate) fn layer_mut(&mut self, index: usize) -> &mut Layer {
        &mut self.layers[index]
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    pub fn task(&self) -> TaskKind {
        self.task
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn vocab_size(&self) -> usize {
        self.layers[0].spec.input_dim
    }

    pub fn num_outputs(&self) -> usize {
        self.layers[self.layers.len() - 1].spec.output_dim
    }

    pub fn frozen_flags(&self) -> Vec<bool> {
        self.layers.iter().map(|l| l.frozen).collect()
    }

    pub fn has_trainable_params(&self) -> bool {
        self.layers.iter().any(|l| !l.frozen && !l.params.is_empty())
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().flat_map(|l| &l.params).map(Tensor::len).sum()
    }

    /// Copies every parameter and frozen flag from `other`, which must share
    /// this model's architecture.
    pub fn load_state_from(&mut self, other: &LayeredModel) -> Result<()> {
        if self.specs() != other.specs() {
            return Err(Error::contract("cannot load parameters from a different architecture"));
        }
        self.layers.clone_from(&other.layers);
        self.trained_epoch = other.trained_epoch;
        Ok(())
    }

    /// Bitwise equality of every parameter of the given layers.
    pub fn layers_bit_eq(&self, other: &LayeredModel, layers: impl IntoIterator<Item = usize>) -> bool {
        layers.into_iter().all(|k| {
            let (a, b) = (&self.layers[k], &other.layers[k]);
            a.spec == b.spec && a.params.len() == b.params.len() && a.params.iter().zip(&b.params).all(|(x, y)| x.bit_eq(y))
        })
    }

    /// Bitwise equality of all parameters, specs and frozen flags.
    pub fn bit_eq(&self, other: &LayeredModel) -> bool {
        self.len() == other.len()
            && self.task == other.task
            && self.frozen_flags() == other.frozen_flags()
            && self.layers_bit_eq(other, 0..self.len())
    }

    /// Records the forward pass on `tape` and returns the logits node.
    ///
    /// Frozen layers enter the tape as constants, so they never receive
    /// gradients. In train mode `dropout` seeds the masks; each dropout
    /// layer draws from its own substream.
    pub fn forward(&self, tape: &mut Tape, batch: &Batch, mode: Mode, dropout: Option<&Rng>) -> Result<Var> {
        let vars: Vec<Vec<Var>> = self
            .layers
            .iter()
            .enumerate()
            .map(|(k, layer)| {
                layer
                    .params
                    .iter()
                    .enumerate()
                    .map(|(slot, p)| {
                        if layer.frozen {
                            tape.constant(p.clone())
                        } else {
                            tape.param(ParamId::new(k, slot), p.clone())
                        }
                    })
                    .collect()
            })
            .collect();
        self.forward_with(tape, &vars, batch, mode, dropout)
    }

    fn forward_with(
        &self,
        tape: &mut Tape,
        vars: &[Vec<Var>],
        batch: &Batch,
        mode: Mode,
        dropout: Option<&Rng>,
    ) -> Result<Var> {
        if batch.tokens.len() != batch.steps * batch.batch || batch.steps == 0 || batch.batch == 0 {
            return Err(Error::Shape {
                op: "model_forward",
                left: vec![batch.tokens.len()],
                right: vec![batch.steps, batch.batch],
            });
        }
        let shape = batch.shape();
        let mut current: Option<Var> = None;
        for (k, layer) in self.layers.iter().enumerate() {
            let mut input = match current {
                None => LayerInput::Tokens(&batch.tokens),
                Some(v) => LayerInput::Activations(v),
            };
            if layer.spec.kind == LayerKind::Output && self.task == TaskKind::SeqClassify {
                if let LayerInput::Activations(v) = input {
                    let last = tape.slice_rows(v, (shape.steps - 1) * shape.batch, shape.batch)?;
                    input = LayerInput::Activations(last);
                }
            }
            let mut stream = match (mode, dropout) {
                (Mode::Train, Some(rng)) => Some(rng.substream(&[purpose::DROPOUT, k as u64]).stream()),
                _ => None,
            };
            current = Some(layer_forward(
                &layer.spec,
                tape,
                &vars[k],
                input,
                shape,
                mode,
                stream.as_mut(),
            )?);
        }
        Ok(current.expect("validated models have at least one layer"))
    }

    /// Forward pass plus mean softmax cross-entropy; returns `(loss, logits)`.
    pub fn loss(&self, tape: &mut Tape, batch: &Batch, mode: Mode, dropout: Option<&Rng>) -> Result<(Var, Var)> {
        let logits = self.forward(tape, batch, mode, dropout)?;
        let loss = tape.softmax_cross_entropy(logits, &batch.targets)?;
        Ok((loss, logits))
    }

    /// Eval-mode logits without building gradients.
    pub fn predict(&self, batch: &Batch) -> Result<Tensor> {
        let mut tape = Tape::new();
        let logits = self.forward(&mut tape, batch, Mode::Eval, None)?;
        Ok(tape.value(logits).clone())
    }
}

/// Worst relative error between tape gradients and central differences of
/// the batch loss, over every parameter of every layer (frozen or not).
pub fn model_grad_check(model: &LayeredModel, batch: &Batch, epsilon: f64, mode: Mode, dropout: Option<&Rng>) -> Result<f64> {
    let flat: Vec<Tensor> = model.layers.iter().flat_map(|l| l.params.iter().cloned()).collect();
    let counts: Vec<usize> = model.layers.iter().map(|l| l.params.len()).collect();
    grad_check(&flat, epsilon, |tape, vars| {
        let mut grouped = Vec::with_capacity(counts.len());
        let mut offset = 0;
        for &c in &counts {
            grouped.push(vars[offset..offset + c].to_vec());
            offset += c;
        }
        let logits = model.forward_with(tape, &grouped, batch, mode, dropout)?;
        tape.softmax_cross_entropy(logits, &batch.targets)
    })
}
