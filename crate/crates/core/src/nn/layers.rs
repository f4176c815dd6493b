//! Layer kinds. Activations are batch-major: `(examples, features)`.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;

/// Output columns per GEMM shard. Fixed, so results do not depend on the
/// number of worker threads.
pub const GEMM_SHARD: usize = 128;

/// `a · b`, computed in column shards of `b` that may run in parallel.
pub fn matmul(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Array2<f64> {
    let n = b.ncols();
    if n <= GEMM_SHARD {
        return a.dot(&b);
    }
    let ranges = par::ranges(n, GEMM_SHARD);
    let parts = par::map_slice(&ranges, |r| a.dot(&b.slice(s![.., r.clone()])));
    let mut out = Array2::zeros((a.nrows(), n));
    for (r, p) in ranges.iter().zip(parts) {
        out.slice_mut(s![.., r.clone()]).assign(&p);
    }
    out
}

/// Shape-only description, as stored in bundle layer tables.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Dense { input: usize, output: usize },
    Relu { dim: usize },
    Bias { dim: usize },
    Scale { dim: usize },
}

impl LayerKind {
    pub fn input_dim(self) -> usize {
        match self {
            LayerKind::Dense { input, .. } => input,
            LayerKind::Relu { dim } | LayerKind::Bias { dim } | LayerKind::Scale { dim } => dim,
        }
    }

    pub fn output_dim(self) -> usize {
        match self {
            LayerKind::Dense { output, .. } => output,
            LayerKind::Relu { dim } | LayerKind::Bias { dim } | LayerKind::Scale { dim } => dim,
        }
    }

    /// Lengths of the flat parameter arrays, in storage order.
    pub fn param_lens(self) -> Vec<usize> {
        match self {
            LayerKind::Dense { input, output } => vec![input * output, output],
            LayerKind::Relu { .. } => vec![],
            LayerKind::Bias { dim } | LayerKind::Scale { dim } => vec![dim],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LayerKind::Dense { .. } => "dense",
            LayerKind::Relu { .. } => "relu",
            LayerKind::Bias { .. } => "bias",
            LayerKind::Scale { .. } => "scale",
        }
    }
}

/// A layer with its parameters, gradients and forward cache.
#[derive(Clone, Debug)]
pub enum Layer {
    /// `y = x·W + b`, `W` is `input × output`.
    Dense {
        weight: Array2<f64>,
        bias: Array1<f64>,
        grad_weight: Array2<f64>,
        grad_bias: Array1<f64>,
        input: Option<Array2<f64>>,
    },
    /// `y = max(x, 0)`; derivative at 0 is 0.
    Relu { dim: usize, output: Option<Array2<f64>> },
    /// `y = x + b`.
    Bias {
        value: Array1<f64>,
        grad: Array1<f64>,
        primed: bool,
    },
    /// `y = x ⊙ s`, entries of `s` nonzero.
    Scale {
        value: Array1<f64>,
        grad: Array1<f64>,
        input: Option<Array2<f64>>,
    },
}

impl Layer {
    /// Glorot-uniform weights `±√(6/(in+out))`, zero bias.
    pub fn dense(input: usize, output: usize, rng: &mut impl Rng) -> Self {
        let limit = (6.0 / (input + output) as f64).sqrt();
        let weight = Array2::from_shape_simple_fn((input, output), || rng.random_range(-limit..=limit));
        Self::dense_from(weight, Array1::zeros(output))
    }

    pub fn dense_from(weight: Array2<f64>, bias: Array1<f64>) -> Self {
        assert_eq!(weight.ncols(), bias.len(), "dense bias length");
        Layer::Dense {
            grad_weight: Array2::zeros(weight.dim()),
            grad_bias: Array1::zeros(bias.len()),
            weight,
            bias,
            input: None,
        }
    }

    pub fn relu(dim: usize) -> Self {
        Layer::Relu { dim, output: None }
    }

    pub fn bias(value: Array1<f64>) -> Self {
        Layer::Bias {
            grad: Array1::zeros(value.len()),
            value,
            primed: false,
        }
    }

    pub fn scale(value: Array1<f64>) -> Result<Self> {
        if let Some(i) = value.iter().position(|&v| v == 0.0 || !v.is_finite()) {
            return Err(Error::Config(format!("scale entry {i} must be finite and nonzero")));
        }
        Ok(Layer::Scale {
            grad: Array1::zeros(value.len()),
            value,
            input: None,
        })
    }

    /// Rebuilds a layer from its kind and flat parameter arrays.
    pub fn from_params(kind: LayerKind, params: Vec<Vec<f64>>) -> Result<Self> {
        let lens = kind.param_lens();
        if params.len() != lens.len() || params.iter().zip(&lens).any(|(p, &l)| p.len() != l) {
            return Err(Error::CorruptBundle(format!("parameter sizes do not match {kind:?}")));
        }
        let mut it = params.into_iter();
        Ok(match kind {
            LayerKind::Dense { input, output } => {
                let w = Array2::from_shape_vec((input, output), it.next().expect("len checked"))
                    .map_err(|e| Error::CorruptBundle(e.to_string()))?;
                Layer::dense_from(w, Array1::from(it.next().expect("len checked")))
            }
            LayerKind::Relu { dim } => Layer::relu(dim),
            LayerKind::Bias { .. } => Layer::bias(Array1::from(it.next().expect("len checked"))),
            LayerKind::Scale { .. } => Layer::scale(Array1::from(it.next().expect("len checked")))
                .map_err(|e| Error::CorruptBundle(e.to_string()))?,
        })
    }

    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Dense { weight, .. } => LayerKind::Dense {
                input: weight.nrows(),
                output: weight.ncols(),
            },
            Layer::Relu { dim, .. } => LayerKind::Relu { dim: *dim },
            Layer::Bias { value, .. } => LayerKind::Bias { dim: value.len() },
            Layer::Scale { value, .. } => LayerKind::Scale { dim: value.len() },
        }
    }

    pub fn param_count(&self) -> usize {
        self.kind().param_lens().iter().sum()
    }

    /// Inference without touching the cache.
    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        match self {
            Layer::Dense { weight, bias, .. } => matmul(x, weight.view()) + bias,
            Layer::Relu { .. } => x.mapv(|v| v.max(0.0)),
            Layer::Bias { value, .. } => &x + value,
            Layer::Scale { value, .. } => &x * value,
        }
    }

    fn check_input(&self, x: &Array2<f64>) -> Result<()> {
        let want = self.kind().input_dim();
        if x.ncols() != want {
            return Err(Error::Shape(format!(
                "{} layer expects {want} features, got {}",
                self.kind().name(),
                x.ncols()
            )));
        }
        Ok(())
    }

    /// Forward pass that keeps what [`Layer::backward`] needs.
    pub fn forward(&mut self, x: Array2<f64>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        let y = self.predict(x.view());
        match self {
            Layer::Dense { input, .. } | Layer::Scale { input, .. } => *input = Some(x),
            Layer::Relu { output, .. } => *output = Some(y.clone()),
            Layer::Bias { primed, .. } => *primed = true,
        }
        Ok(y)
    }

    /// Sets parameter gradients from `dy` and returns `dL/dx` when
    /// `input_grad` is set. Consumes the forward cache.
    pub fn backward(&mut self, dy: Array2<f64>, input_grad: bool) -> Result<Option<Array2<f64>>> {
        match self {
            Layer::Dense {
                weight,
                grad_weight,
                grad_bias,
                input,
                ..
            } => {
                let x = input.take().ok_or(Error::NoForwardCache)?;
                *grad_weight = matmul(x.t(), dy.view());
                *grad_bias = dy.sum_axis(Axis(0));
                Ok(input_grad.then(|| matmul(dy.view(), weight.t())))
            }
            Layer::Relu { output, .. } => {
                let y = output.take().ok_or(Error::NoForwardCache)?;
                let mut dx = dy;
                dx.zip_mut_with(&y, |d, &v| {
                    if v <= 0.0 {
                        *d = 0.0;
                    }
                });
                Ok(Some(dx))
            }
            Layer::Bias { grad, primed, .. } => {
                if !std::mem::take(primed) {
                    return Err(Error::NoForwardCache);
                }
                *grad = dy.sum_axis(Axis(0));
                Ok(Some(dy))
            }
            Layer::Scale { value, grad, input } => {
                let x = input.take().ok_or(Error::NoForwardCache)?;
                *grad = (&dy * &x).sum_axis(Axis(0));
                Ok(input_grad.then(|| dy * &*value))
            }
        }
    }

    /// Flat parameter slices in storage order.
    pub fn params(&self) -> Vec<&[f64]> {
        match self {
            Layer::Dense { weight, bias, .. } => vec![slice(weight.as_slice()), slice(bias.as_slice())],
            Layer::Relu { .. } => vec![],
            Layer::Bias { value, .. } | Layer::Scale { value, .. } => vec![slice(value.as_slice())],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            Layer::Dense { weight, bias, .. } => vec![slice_mut(weight.as_slice_mut()), slice_mut(bias.as_slice_mut())],
            Layer::Relu { .. } => vec![],
            Layer::Bias { value, .. } | Layer::Scale { value, .. } => vec![slice_mut(value.as_slice_mut())],
        }
    }

    pub fn grads(&self) -> Vec<&[f64]> {
        match self {
            Layer::Dense {
                grad_weight, grad_bias, ..
            } => vec![slice(grad_weight.as_slice()), slice(grad_bias.as_slice())],
            Layer::Relu { .. } => vec![],
            Layer::Bias { grad, .. } | Layer::Scale { grad, .. } => vec![slice(grad.as_slice())],
        }
    }

    /// `(parameters, gradient)` pairs for an optimizer step.
    pub fn params_and_grads(&mut self) -> Vec<(&mut [f64], &[f64])> {
        match self {
            Layer::Dense {
                weight,
                bias,
                grad_weight,
                grad_bias,
                ..
            } => vec![
                (slice_mut(weight.as_slice_mut()), slice(grad_weight.as_slice())),
                (slice_mut(bias.as_slice_mut()), slice(grad_bias.as_slice())),
            ],
            Layer::Relu { .. } => vec![],
            Layer::Bias { value, grad, .. } | Layer::Scale { value, grad, .. } => {
                vec![(slice_mut(value.as_slice_mut()), slice(grad.as_slice()))]
            }
        }
    }

    /// Euclidean norm of all parameters.
    pub fn param_norm(&self) -> f64 {
        self.params()
            .iter()
            .flat_map(|p| p.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn clear_cache(&mut self) {
        match self {
            Layer::Dense { input, .. } | Layer::Scale { input, .. } => *input = None,
            Layer::Relu { output, .. } => *output = None,
            Layer::Bias { primed, .. } => *primed = false,
        }
    }
}

fn slice(s: Option<&[f64]>) -> &[f64] {
    s.expect("parameters are stored contiguously")
}

fn slice_mut(s: Option<&mut [f64]>) -> &mut [f64] {
    s.expect("parameters are stored contiguously")
}
