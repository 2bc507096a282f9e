//! Layer kinds, Glorot initialisation, and per-layer forward passes.
//!
//! Sequence activations are carried as time-major matrices: row `t * batch + b`
//! holds timestep `t` of sequence `b`. Recurrent layers start from a zero state.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{Rng, Stream};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LayerKind {
    Embedding,
    Dense(Activation),
    TanhRnn,
    Lstm,
    Dropout(f64),
    /// Linear projection to logits; trained with softmax cross-entropy.
    Output,
}

/// One freezable unit of a layered model.
///
/// Textual form (used in configs and checkpoint metadata):
/// `embedding 27->16`, `lstm 16->32`, `dense(tanh) 32->32`,
/// `dropout(0.5) 32->32`, `output 32->27`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub input_dim: usize,
    pub output_dim: usize,
}

impl LayerSpec {
    pub fn new(kind: LayerKind, input_dim: usize, output_dim: usize) -> Result<Self> {
        let spec = Self {
            kind,
            input_dim,
            output_dim,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn embedding(vocab: usize, dim: usize) -> Result<Self> {
        Self::new(LayerKind::Embedding, vocab, dim)
    }

    pub fn dense(input: usize, output: usize, activation: Activation) -> Result<Self> {
        Self::new(LayerKind::Dense(activation), input, output)
    }

    pub fn tanh_rnn(input: usize, hidden: usize) -> Result<Self> {
        Self::new(LayerKind::TanhRnn, input, hidden)
    }

    pub fn lstm(input: usize, hidden: usize) -> Result<Self> {
        Self::new(LayerKind::Lstm, input, hidden)
    }

    pub fn dropout(dim: usize, rate: f64) -> Result<Self> {
        Self::new(LayerKind::Dropout(rate), dim, dim)
    }

    pub fn output(input: usize, classes: usize) -> Result<Self> {
        Self::new(LayerKind::Output, input, classes)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::config(format!("layer `{self}` has a zero dimension")));
        }
        if let LayerKind::Dropout(rate) = self.kind {
            if !(0.0..1.0).contains(&rate) {
                return Err(Error::config(format!("dropout rate {rate} outside [0, 1)")));
            }
            if self.input_dim != self.output_dim {
                return Err(Error::config(format!("dropout layer `{self}` must preserve its width")));
            }
        }
        Ok(())
    }

    pub fn is_recurrent(&self) -> bool {
        matches!(self.kind, LayerKind::TanhRnn | LayerKind::Lstm)
    }

    /// Shapes of the parameter tensors, in slot order.
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        let (i, o) = (self.input_dim, self.output_dim);
        match self.kind {
            LayerKind::Embedding => vec![vec![i, o]],
            LayerKind::Dense(_) | LayerKind::Output => vec![vec![i, o], vec![o]],
            LayerKind::TanhRnn => vec![vec![i, o], vec![o, o], vec![o]],
            LayerKind::Lstm => vec![vec![i, 4 * o], vec![o, 4 * o], vec![4 * o]],
            LayerKind::Dropout(_) => vec![],
        }
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            LayerKind::Embedding => write!(f, "embedding")?,
            LayerKind::Dense(a) => {
                let name = match a {
                    Activation::Tanh => "tanh",
                    Activation::Relu => "relu",
                    Activation::None => "none",
                };
                write!(f, "dense({name})")?
            }
            LayerKind::TanhRnn => write!(f, "tanh_rnn")?,
            LayerKind::Lstm => write!(f, "lstm")?,
            LayerKind::Dropout(rate) => write!(f, "dropout({rate})")?,
            LayerKind::Output => write!(f, "output")?,
        }
        write!(f, " {}->{}", self.input_dim, self.output_dim)
    }
}

impl FromStr for LayerSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::config(format!("cannot parse layer spec `{s}`"));
        let (head, dims) = s.trim().split_once(char::is_whitespace).ok_or_else(bad)?;
        let (input, output) = dims.trim().split_once("->").ok_or_else(bad)?;
        let input_dim: usize = input.trim().parse().map_err(|_| bad())?;
        let output_dim: usize = output.trim().parse().map_err(|_| bad())?;
        let (name, arg) = match head.split_once('(') {
            Some((name, rest)) => (name, Some(rest.strip_suffix(')').ok_or_else(bad)?)),
            None => (head, None),
        };
        let kind = match (name, arg) {
            ("embedding", None) => LayerKind::Embedding,
            ("dense", None) | ("dense", Some("none")) => LayerKind::Dense(Activation::None),
            ("dense", Some("tanh")) => LayerKind::Dense(Activation::Tanh),
            ("dense", Some("relu")) => LayerKind::Dense(Activation::Relu),
            ("tanh_rnn", None) => LayerKind::TanhRnn,
            ("lstm", None) => LayerKind::Lstm,
            ("dropout", Some(rate)) => LayerKind::Dropout(rate.parse().map_err(|_| bad())?),
            ("output", None) => LayerKind::Output,
            _ => return Err(bad()),
        };
        LayerSpec::new(kind, input_dim, output_dim)
    }
}

impl TryFrom<String> for LayerSpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<LayerSpec> for String {
    fn from(spec: LayerSpec) -> String {
        spec.to_string()
    }
}

fn glorot(stream: &mut Stream, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| stream.uniform_range(-bound, bound)).collect();
    Tensor::from_parts(shape.to_vec(), data)
}

/// Fresh parameters for `spec`, drawn from `rng`'s stream.
///
/// Weights are Glorot-uniform. Recurrent matrices use the per-gate fan
/// (`hidden`, not `4 * hidden`) so every LSTM gate gets the same bound as a
/// plain RNN of that width. Biases are zero, except the LSTM forget gate
/// (second quarter of the bias) which starts at 1.
pub fn init_layer(spec: &LayerSpec, rng: &Rng) -> Vec<Tensor> {
    let mut s = rng.stream();
    let (i, o) = (spec.input_dim, spec.output_dim);
    match spec.kind {
        LayerKind::Embedding => vec![glorot(&mut s, &[i, o], i, o)],
        LayerKind::Dense(_) | LayerKind::Output => vec![glorot(&mut s, &[i, o], i, o), Tensor::zeros(&[o])],
        LayerKind::TanhRnn => vec![
            glorot(&mut s, &[i, o], i, o),
            glorot(&mut s, &[o, o], o, o),
            Tensor::zeros(&[o]),
        ],
        LayerKind::Lstm => {
            let mut bias = Tensor::zeros(&[4 * o]);
            bias.data_mut()[o..2 * o].fill(1.0);
            vec![
                glorot(&mut s, &[i, 4 * o], i, o),
                glorot(&mut s, &[o, 4 * o], o, o),
                bias,
            ]
        }
        LayerKind::Dropout(_) => vec![],
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Eval,
}

/// Time-major layout of the rows flowing through a layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SeqShape {
    pub steps: usize,
    pub batch: usize,
}

impl SeqShape {
    pub fn rows(&self) -> usize {
        self.steps * self.batch
    }
}

pub enum LayerInput<'a> {
    Tokens(&'a [usize]),
    Activations(Var),
}

fn one_hot(tokens: &[usize], width: usize) -> Result<Tensor> {
    let mut t = Tensor::zeros(&[tokens.len(), width]);
    for (row, &tok) in tokens.iter().enumerate() {
        if tok >= width {
            return Err(Error::Index {
                op: "one_hot",
                index: tok,
                bound: width,
            });
        }
        t.data_mut()[row * width + tok] = 1.0;
    }
    Ok(t)
}

/// Runs one layer on the tape. `params` are the layer's parameter nodes in
/// slot order; `dropout` supplies the mask stream in train mode.
pub fn layer_forward(
    spec: &LayerSpec,
    tape: &mut Tape,
    params: &[Var],
    input: LayerInput<'_>,
    shape: SeqShape,
    mode: Mode,
    dropout: Option<&mut Stream>,
) -> Result<Var> {
    let x = match (spec.kind, input) {
        (LayerKind::Embedding, LayerInput::Tokens(tokens)) => {
            return tape.gather_rows(params[0], tokens);
        }
        (LayerKind::Embedding, LayerInput::Activations(_)) => {
            return Err(Error::contract("embedding layer must receive token ids"));
        }
        (_, LayerInput::Tokens(tokens)) => tape.constant(one_hot(tokens, spec.input_dim)?),
        (_, LayerInput::Activations(v)) => v,
    };
    let got = tape.value(x).shape().to_vec();
    if got.len() != 2 || got[1] != spec.input_dim {
        return Err(Error::Shape {
            op: "layer_forward",
            left: got,
            right: vec![spec.input_dim],
        });
    }

    match spec.kind {
        LayerKind::Embedding => unreachable!("handled above"),
        LayerKind::Dense(act) => {
            let z = tape.matmul(x, params[0])?;
            let z = tape.add_bias(z, params[1])?;
            Ok(match act {
                Activation::Tanh => tape.tanh(z),
                Activation::Relu => tape.relu(z),
                Activation::None => z,
            })
        }
        LayerKind::Output => {
            let z = tape.matmul(x, params[0])?;
            tape.add_bias(z, params[1])
        }
        LayerKind::Dropout(rate) => {
            if mode == Mode::Eval || rate == 0.0 {
                return Ok(x);
            }
            let stream = dropout.ok_or_else(|| Error::contract("train-mode dropout needs a random stream"))?;
            let keep = 1.0 / (1.0 - rate);
            let dims = tape.value(x).shape().to_vec();
            let n = dims.iter().product();
            let data = (0..n)
                .map(|_| if stream.uniform() < rate { 0.0 } else { keep })
                .collect();
            let mask = tape.constant(Tensor::from_parts(dims, data));
            tape.mul(x, mask)
        }
        LayerKind::TanhRnn => {
            check_rows(tape, x, shape)?;
            let h = spec.output_dim;
            let xw = tape.matmul(x, params[0])?;
            let xw = tape.add_bias(xw, params[2])?;
            let mut states = Vec::with_capacity(shape.steps);
            let mut prev: Option<Var> = None;
            for t in 0..shape.steps {
                let mut a = tape.slice_rows(xw, t * shape.batch, shape.batch)?;
                if let Some(p) = prev {
                    let rec = tape.matmul(p, params[1])?;
                    a = tape.add(a, rec)?;
                }
                let state = tape.tanh(a);
                debug_assert_eq!(tape.value(state).cols(), h);
                states.push(state);
                prev = Some(state);
            }
            tape.concat_rows(&states)
        }
        LayerKind::Lstm => {
            check_rows(tape, x, shape)?;
            let h = spec.output_dim;
            let xw = tape.matmul(x, params[0])?;
            let xw = tape.add_bias(xw, params[2])?;
            let mut states = Vec::with_capacity(shape.steps);
            let mut prev: Option<(Var, Var)> = None;
            for t in 0..shape.steps {
                let mut z = tape.slice_rows(xw, t * shape.batch, shape.batch)?;
                if let Some((hp, _)) = prev {
                    let rec = tape.matmul(hp, params[1])?;
                    z = tape.add(z, rec)?;
                }
                let i = tape.slice_cols(z, 0, h)?;
                let i = tape.sigmoid(i);
                let g = tape.slice_cols(z, 2 * h, h)?;
                let g = tape.tanh(g);
                let o = tape.slice_cols(z, 3 * h, h)?;
                let o = tape.sigmoid(o);
                let mut c = tape.mul(i, g)?;
                if let Some((_, cp)) = prev {
                    let f = tape.slice_cols(z, h, h)?;
                    let f = tape.sigmoid(f);
                    let kept = tape.mul(f, cp)?;
                    c = tape.add(kept, c)?;
                }
                let squashed = tape.tanh(c);
                let state = tape.mul(o, squashed)?;
                states.push(state);
                prev = Some((state, c));
            }
            tape.concat_rows(&states)
        }
    }
}

fn check_rows(tape: &Tape, x: Var, shape: SeqShape) -> Result<()> {
    let got = tape.value(x).shape();
    if got[0] != shape.rows() {
        return Err(Error::Shape {
            op: "recurrent_forward",
            left: got.to_vec(),
            right: vec![shape.steps, shape.batch],
        });
    }
    Ok(())
}
