//! Multilayer perceptrons on top of [`Graph`].

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DiffError, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputActivation {
    None,
    Softmax,
    Sigmoid,
    Tanh,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layer_widths: Vec<usize>,
    pub activation: Activation,
    pub output_activation: OutputActivation,
}

impl MlpSpec {
    pub fn new(layer_widths: Vec<usize>, activation: Activation, output_activation: OutputActivation) -> Result<Self> {
        let spec = Self {
            layer_widths,
            activation,
            output_activation,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_widths.len() < 2 {
            return Err(DiffError::InvalidArgument(format!(
                "an MLP needs at least 2 layer widths, got {:?}",
                self.layer_widths
            )));
        }
        if self.layer_widths.contains(&0) {
            return Err(DiffError::InvalidArgument(format!(
                "layer widths must be positive, got {:?}",
                self.layer_widths
            )));
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.layer_widths.last().unwrap()
    }

    pub fn n_layers(&self) -> usize {
        self.layer_widths.len() - 1
    }

    /// Shapes of `[W0, b0, W1, b1, ...]`.
    pub fn param_shapes(&self) -> Vec<[usize; 2]> {
        self.layer_widths
            .windows(2)
            .flat_map(|w| [[w[0], w[1]], [1, w[1]]])
            .collect()
    }

    pub fn n_params(&self) -> usize {
        self.param_shapes().iter().map(|s| s[0] * s[1]).sum()
    }
}

/// An MLP's parameters, `[W0, b0, W1, b1, ...]` with `W: [in, out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub params: Vec<Tensor>,
}

impl Mlp {
    /// Glorot-uniform weights, zero biases.
    pub fn init<R: Rng + ?Sized>(spec: MlpSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let params = spec
            .layer_widths
            .windows(2)
            .flat_map(|w| {
                let limit = (6.0 / (w[0] + w[1]) as f64).sqrt();
                [Tensor::uniform(w[0], w[1], limit, rng), Tensor::zeros(1, w[1])]
            })
            .collect();
        Ok(Self { spec, params })
    }

    pub fn zeros(spec: MlpSpec) -> Result<Self> {
        spec.validate()?;
        let params = spec
            .param_shapes()
            .iter()
            .map(|s| Tensor::zeros(s[0], s[1]))
            .collect();
        Ok(Self { spec, params })
    }

    pub fn from_params(spec: MlpSpec, params: Vec<Tensor>) -> Result<Self> {
        spec.validate()?;
        let shapes = spec.param_shapes();
        if shapes.len() != params.len() {
            return Err(DiffError::InvalidArgument(format!(
                "expected {} parameter tensors, got {}",
                shapes.len(),
                params.len()
            )));
        }
        for (i, (s, p)) in shapes.iter().zip(&params).enumerate() {
            if p.shape() != s {
                return Err(DiffError::Shape {
                    op: "mlp params",
                    detail: format!("tensor {i}: expected {s:?}, found {:?}", p.shape()),
                });
            }
        }
        Ok(Self { spec, params })
    }

    /// Adds the parameters to `g` as leaves.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Vec<Var> {
        self.params.iter().map(|p| g.leaf(p.clone(), trainable)).collect()
    }

    /// Convenience: bind as constants and run the forward pass.
    pub fn forward_const(&self, g: &mut Graph, input: Var) -> Result<Var> {
        let vars = self.bind(g, false);
        mlp_forward(g, &self.spec, &vars, input)
    }

    /// Forward pass on plain rows without keeping a tape around.
    pub fn eval(&self, input: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let x = g.constant(input.clone());
        let y = self.forward_const(&mut g, x)?;
        Ok(g.value(y).clone())
    }

    pub fn copy_from(&mut self, other: &Mlp) {
        self.params.clone_from(&other.params);
    }
}

/// Row-wise MLP forward pass recorded on `g`.
pub fn mlp_forward(g: &mut Graph, spec: &MlpSpec, params: &[Var], input: Var) -> Result<Var> {
    let n_layers = spec.n_layers();
    if params.len() != 2 * n_layers {
        return Err(DiffError::InvalidArgument(format!(
            "expected {} parameter tensors, got {}",
            2 * n_layers,
            params.len()
        )));
    }
    let in_cols = g.value(input).cols();
    if in_cols != spec.input_width() {
        return Err(DiffError::Shape {
            op: "mlp_forward",
            detail: format!(
                "layer 0 expects input width {}, got {in_cols}",
                spec.input_width()
            ),
        });
    }
    check_params(g, spec, params)?;
    let z = g.matmul(input, params[0])?;
    let h = g.add_row(z, params[1])?;
    finish(g, spec, params, h)
}

fn check_params(g: &Graph, spec: &MlpSpec, params: &[Var]) -> Result<()> {
    for layer in 0..spec.n_layers() {
        let (w, b) = (params[2 * layer], params[2 * layer + 1]);
        let expect = [spec.layer_widths[layer], spec.layer_widths[layer + 1]];
        if g.value(w).shape() != expect || g.value(b).shape() != [1, expect[1]] {
            return Err(DiffError::Shape {
                op: "mlp_forward",
                detail: format!(
                    "layer {layer} expects weight {expect:?}, got {:?} / bias {:?}",
                    g.value(w).shape(),
                    g.value(b).shape()
                ),
            });
        }
    }
    Ok(())
}

/// Runs everything after the first affine map, given its output `h`.
fn finish(g: &mut Graph, spec: &MlpSpec, params: &[Var], mut h: Var) -> Result<Var> {
    let n_layers = spec.n_layers();
    for layer in 0..n_layers {
        if layer > 0 {
            let z = g.matmul(h, params[2 * layer])?;
            h = g.add_row(z, params[2 * layer + 1])?;
        }
        if layer + 1 < n_layers {
            h = match spec.activation {
                Activation::Tanh => g.tanh(h),
                Activation::Relu => g.relu(h),
            };
        }
    }
    Ok(match spec.output_activation {
        OutputActivation::None => h,
        OutputActivation::Softmax => g.softmax(h)?,
        OutputActivation::Sigmoid => g.sigmoid(h),
        OutputActivation::Tanh => g.tanh(h),
    })
}

/// Forward pass on `concat_cols([a, gather_rows(c, idx)])` without
/// materializing the repeated rows of `c`.
///
/// Used when many rows share a context, e.g. particles of one agent sharing
/// its observation: the context block of the first layer is applied once per
/// context row and then broadcast.
pub fn mlp_forward_split(
    g: &mut Graph,
    spec: &MlpSpec,
    params: &[Var],
    a: Var,
    c: Var,
    idx: &[usize],
) -> Result<Var> {
    let n_layers = spec.n_layers();
    if params.len() != 2 * n_layers {
        return Err(DiffError::InvalidArgument(format!(
            "expected {} parameter tensors, got {}",
            2 * n_layers,
            params.len()
        )));
    }
    let (a_rows, a_cols) = g.value(a).dims2();
    let c_cols = g.value(c).cols();
    if a_cols + c_cols != spec.input_width() || idx.len() != a_rows {
        return Err(DiffError::Shape {
            op: "mlp_forward_split",
            detail: format!(
                "layer 0 expects input width {}, got {a_cols} + {c_cols} ({} index rows for {a_rows} rows)",
                spec.input_width(),
                idx.len()
            ),
        });
    }
    check_params(g, spec, params)?;
    let wa = g.gather_rows(params[0], (0..a_cols).collect())?;
    let wc = g.gather_rows(params[0], (a_cols..a_cols + c_cols).collect())?;
    let za = g.matmul(a, wa)?;
    let zc = g.matmul(c, wc)?;
    let zc = g.gather_rows(zc, idx.to_vec())?;
    let z = g.add(za, zc)?;
    let h = g.add_row(z, params[1])?;
    finish(g, spec, params, h)
}
