//! Branches feeding an implicit concatenation, followed by a head chain.
//!
//! A single-chain network is one branch with an empty head. With two
//! branches the head sees `[branch 0 ∥ branch 1]`.

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::layers::{Layer, LayerKind};
use crate::dataset::Batch;
use crate::error::{Error, Result};

/// Which part of an example a branch reads.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputBlock {
    Amplitude,
    Phase,
    /// `[amplitude ∥ phase]`.
    Concat,
}

#[derive(Clone, Debug)]
pub struct Branch {
    pub input: InputBlock,
    pub layers: Vec<Layer>,
}

/// Layer table of a network, without parameters.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkLayout {
    pub branches: Vec<(InputBlock, Vec<LayerKind>)>,
    pub head: Vec<LayerKind>,
}

#[derive(Clone, Debug)]
pub struct Network {
    branches: Vec<Branch>,
    head: Vec<Layer>,
}

fn chain_dims(layers: &[Layer], input: usize) -> Result<usize> {
    let mut dim = input;
    for (i, l) in layers.iter().enumerate() {
        let k = l.kind();
        if k.input_dim() != dim {
            return Err(Error::Shape(format!(
                "layer {i} ({}) expects {} inputs but receives {dim}",
                k.name(),
                k.input_dim()
            )));
        }
        dim = k.output_dim();
    }
    Ok(dim)
}

impl Network {
    pub fn new(branches: Vec<Branch>, head: Vec<Layer>) -> Result<Self> {
        if branches.is_empty() || branches.len() > 2 {
            return Err(Error::Shape(format!(
                "networks have 1 or 2 branches, got {}",
                branches.len()
            )));
        }
        let mut width = 0;
        for (b, br) in branches.iter().enumerate() {
            let first = br
                .layers
                .first()
                .ok_or_else(|| Error::Shape(format!("branch {b} is empty")))?;
            width += chain_dims(&br.layers, first.kind().input_dim())?;
        }
        if branches.len() == 2 && head.is_empty() {
            return Err(Error::Shape("two branches need a head".into()));
        }
        chain_dims(&head, width)?;
        Ok(Self { branches, head })
    }

    pub fn chain(input: InputBlock, layers: Vec<Layer>) -> Result<Self> {
        Self::new(vec![Branch { input, layers }], Vec::new())
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    pub fn head(&self) -> &[Layer] {
        &self.head
    }

    pub fn input_dims(&self) -> Vec<usize> {
        self.branches.iter().map(|b| b.layers[0].kind().input_dim()).collect()
    }

    pub fn output_dim(&self) -> usize {
        let last = self
            .head
            .last()
            .or_else(|| self.branches[0].layers.last())
            .expect("non-empty");
        last.kind().output_dim()
    }

    pub fn layout(&self) -> NetworkLayout {
        NetworkLayout {
            branches: self
                .branches
                .iter()
                .map(|b| (b.input, b.layers.iter().map(Layer::kind).collect()))
                .collect(),
            head: self.head.iter().map(Layer::kind).collect(),
        }
    }

    /// Every layer: branches in order, then the head.
    pub fn layers(&self) -> impl Iterator<Item = &Layer> {
        self.branches
            .iter()
            .flat_map(|b| b.layers.iter())
            .chain(self.head.iter())
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut Layer> {
        self.branches
            .iter_mut()
            .flat_map(|b| b.layers.iter_mut())
            .chain(self.head.iter_mut())
    }

    pub fn param_count(&self) -> usize {
        self.layers().map(Layer::param_count).sum()
    }

    pub fn layer_norms(&self) -> Vec<f64> {
        self.layers().map(Layer::param_norm).collect()
    }

    /// Splits a batch into per-branch inputs.
    pub fn inputs(&self, batch: &Batch) -> Result<Vec<Array2<f64>>> {
        let missing = |what: &str| Error::Shape(format!("network needs {what} inputs the batch lacks"));
        self.branches
            .iter()
            .map(|b| match b.input {
                InputBlock::Amplitude => batch.amp.clone().ok_or_else(|| missing("amplitude")),
                InputBlock::Phase => batch.phase.clone().ok_or_else(|| missing("phase")),
                InputBlock::Concat => {
                    let a = batch.amp.as_ref().ok_or_else(|| missing("amplitude"))?;
                    let p = batch.phase.as_ref().ok_or_else(|| missing("phase"))?;
                    concatenate(Axis(1), &[a.view(), p.view()]).map_err(|e| Error::Shape(e.to_string()))
                }
            })
            .collect()
    }

    fn check_inputs(&self, shapes: &[(usize, usize)]) -> Result<()> {
        let dims = self.input_dims();
        if shapes.len() != dims.len() {
            return Err(Error::Shape(format!(
                "{} inputs for {} branches",
                shapes.len(),
                dims.len()
            )));
        }
        let rows = shapes[0].0;
        for (i, (&(r, c), &d)) in shapes.iter().zip(&dims).enumerate() {
            if c != d || r != rows {
                return Err(Error::Shape(format!(
                    "branch {i} input is {r}×{c}, expected {rows}×{d}"
                )));
            }
        }
        Ok(())
    }

    pub fn predict(&self, inputs: &[ArrayView2<'_, f64>]) -> Result<Array2<f64>> {
        self.check_inputs(&inputs.iter().map(|x| x.dim()).collect::<Vec<_>>())?;
        let mut outs = Vec::with_capacity(self.branches.len());
        for (b, x) in self.branches.iter().zip(inputs) {
            let mut h = b.layers[0].predict(x.view());
            for l in &b.layers[1..] {
                h = l.predict(h.view());
            }
            outs.push(h);
        }
        let mut h = join(outs);
        for l in &self.head {
            h = l.predict(h.view());
        }
        Ok(h)
    }

    pub fn forward(&mut self, inputs: Vec<Array2<f64>>) -> Result<Array2<f64>> {
        self.check_inputs(&inputs.iter().map(|x| x.dim()).collect::<Vec<_>>())?;
        let mut outs = Vec::with_capacity(self.branches.len());
        for (b, x) in self.branches.iter_mut().zip(inputs) {
            let mut h = x;
            for l in &mut b.layers {
                h = l.forward(h)?;
            }
            outs.push(h);
        }
        let mut h = join(outs);
        for l in &mut self.head {
            h = l.forward(h)?;
        }
        Ok(h)
    }

    /// Fills every parameter gradient from `dL/dy`. Returns the input
    /// gradient of each branch when `input_grad` is set.
    pub fn backward(&mut self, dy: Array2<f64>, input_grad: bool) -> Result<Vec<Option<Array2<f64>>>> {
        let mut d = dy;
        for l in self.head.iter_mut().rev() {
            d = l.backward(d, true)?.expect("head layers return input gradients");
        }
        let widths: Vec<usize> = self
            .branches
            .iter()
            .map(|b| b.layers.last().expect("non-empty").kind().output_dim())
            .collect();
        let mut offset = 0;
        let mut grads = Vec::with_capacity(self.branches.len());
        for (b, w) in self.branches.iter_mut().zip(widths) {
            let mut g = Some(d.slice(s![.., offset..offset + w]).to_owned());
            offset += w;
            for (i, l) in b.layers.iter_mut().enumerate().rev() {
                let dy = g.take().expect("gradient flows to every layer");
                g = l.backward(dy, input_grad || i > 0)?;
            }
            grads.push(g);
        }
        Ok(grads)
    }

    pub fn params(&self) -> Vec<&[f64]> {
        self.layers().flat_map(Layer::params).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers_mut().flat_map(Layer::params_mut).collect()
    }

    pub fn grads(&self) -> Vec<&[f64]> {
        self.layers().flat_map(Layer::grads).collect()
    }

    pub fn params_and_grads(&mut self) -> Vec<(&mut [f64], &[f64])> {
        self.layers_mut().flat_map(Layer::params_and_grads).collect()
    }

    pub fn clear_cache(&mut self) {
        self.layers_mut().for_each(Layer::clear_cache);
    }

    /// Copies parameters from a network with the same layout.
    pub fn load_params_from(&mut self, other: &Network) -> Result<()> {
        if self.layout() != other.layout() {
            return Err(Error::Shape("networks have different layouts".into()));
        }
        for (dst, src) in self.params_mut().into_iter().zip(other.params()) {
            dst.copy_from_slice(src);
        }
        Ok(())
    }

    /// Rebuilds a network from its layout and flat parameters in storage order.
    pub fn from_layout(layout: &NetworkLayout, mut params: impl Iterator<Item = Vec<f64>>) -> Result<Self> {
        let mut build = |kinds: &[LayerKind]| -> Result<Vec<Layer>> {
            kinds
                .iter()
                .map(|&k| {
                    let p: Vec<Vec<f64>> = k.param_lens().iter().map_while(|_| params.next()).collect();
                    Layer::from_params(k, p)
                })
                .collect()
        };
        let mut branches = Vec::new();
        for (input, kinds) in &layout.branches {
            branches.push(Branch {
                input: *input,
                layers: build(kinds)?,
            });
        }
        let head = build(&layout.head)?;
        Self::new(branches, head).map_err(|e| Error::CorruptBundle(e.to_string()))
    }
}

fn join(mut outs: Vec<Array2<f64>>) -> Array2<f64> {
    if outs.len() == 1 {
        return outs.pop().expect("one output");
    }
    let views: Vec<_> = outs.iter().map(|o| o.view()).collect();
    concatenate(Axis(1), &views).expect("rows agree")
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array1};

    #[test]
    fn concat_backward_splits_gradient() {
        let mut net = Network::new(
            vec![
                Branch {
                    input: InputBlock::Amplitude,
                    layers: vec![Layer::bias(Array1::zeros(2))],
                },
                Branch {
                    input: InputBlock::Phase,
                    layers: vec![Layer::bias(Array1::zeros(3))],
                },
            ],
            vec![Layer::bias(Array1::zeros(5))],
        )
        .unwrap();
        let y = net.forward(vec![array![[1.0, 2.0]], array![[3.0, 4.0, 5.0]]]).unwrap();
        assert_eq!(y, array![[1.0, 2.0, 3.0, 4.0, 5.0]]);
        let g = net.backward(array![[10.0, 20.0, 30.0, 40.0, 50.0]], true).unwrap();
        assert_eq!(g[0].as_ref().unwrap(), &array![[10.0, 20.0]]);
        assert_eq!(g[1].as_ref().unwrap(), &array![[30.0, 40.0, 50.0]]);
    }

    #[test]
    fn dimension_mismatches_are_rejected() {
        let bad = Network::chain(
            InputBlock::Amplitude,
            vec![Layer::relu(3), Layer::bias(Array1::zeros(4))],
        );
        assert!(matches!(bad, Err(Error::Shape(_))));
        let net = Network::chain(InputBlock::Amplitude, vec![Layer::relu(3)]).unwrap();
        assert!(net.predict(&[Array2::zeros((2, 4)).view()]).is_err());
    }
}
