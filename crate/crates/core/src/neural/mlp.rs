use ndarray::{Array1, Array2, ArrayView2, ArrayViewD, ArrayViewMutD, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::params::Parameters;
use crate::error::{Error, Result};

/// Affine layer `y = x W + b` with `W` stored as `(inputs, outputs)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

/// Rectified hidden layers, identity output.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

/// Inputs seen by each layer during a forward pass.
#[derive(Clone, Debug)]
pub struct MlpTape {
    inputs: Vec<Array2<f64>>,
}

impl Mlp {
    /// He-initialised network with layer widths `dims` (input first).
    pub fn new<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Self {
        assert!(dims.len() >= 2, "an mlp needs input and output widths");
        let layers = dims
            .windows(2)
            .map(|d| {
                let normal = Normal::new(0.0, (2.0 / d[0] as f64).sqrt()).expect("finite std");
                Linear {
                    w: Array2::from_shape_simple_fn((d[0], d[1]), || normal.sample(rng)),
                    b: Array1::zeros(d[1]),
                }
            })
            .collect();
        Mlp { layers }
    }

    pub fn zeros_like(&self) -> Self {
        Mlp {
            layers: self
                .layers
                .iter()
                .map(|l| Linear {
                    w: Array2::zeros(l.w.raw_dim()),
                    b: Array1::zeros(l.b.len()),
                })
                .collect(),
        }
    }

    /// Zeroes the output layer so the initial output is exactly zero.
    pub fn zero_output_layer(&mut self) {
        if let Some(l) = self.layers.last_mut() {
            l.w.fill(0.0);
            l.b.fill(0.0);
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().w.ncols()
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Shape {
                layer: 0,
                msg: format!("input width {} != {}", x.ncols(), self.input_dim()),
            });
        }
        Ok(())
    }

    /// Batched forward pass over the rows of `x`, without a tape.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        let mut h = affine(&self.layers[0], x);
        for l in &self.layers[1..] {
            h.mapv_inplace(relu);
            h = affine(l, h.view());
        }
        Ok(h)
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, MlpTape)> {
        self.check_input(&x)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        inputs.push(x.to_owned());
        let mut h = affine(&self.layers[0], x);
        for l in &self.layers[1..] {
            h.mapv_inplace(relu);
            let next = affine(l, h.view());
            inputs.push(h);
            h = next;
        }
        Ok((h, MlpTape { inputs }))
    }

    /// Reverse pass. Returns parameter gradients and the gradient with
    /// respect to the input rows.
    pub fn backward(&self, tape: &MlpTape, upstream: ArrayView2<f64>) -> Result<(Mlp, Array2<f64>)> {
        let last = self.layers.len() - 1;
        let batch = tape.inputs[0].nrows();
        if upstream.ncols() != self.output_dim() || upstream.nrows() != batch {
            return Err(Error::Shape {
                layer: last,
                msg: format!(
                    "upstream {:?} does not match output ({batch}, {})",
                    upstream.shape(),
                    self.output_dim()
                ),
            });
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut g = upstream.to_owned();
        for i in (0..self.layers.len()).rev() {
            let input = &tape.inputs[i];
            grads.push(Linear {
                w: input.t().dot(&g),
                b: g.sum_axis(Axis(0)),
            });
            let mut g_in = g.dot(&self.layers[i].w.t());
            if i > 0 {
                g_in.zip_mut_with(input, |gi, &x| {
                    if x <= 0.0 {
                        *gi = 0.0;
                    }
                });
            }
            g = g_in;
        }
        grads.reverse();
        Ok((Mlp { layers: grads }, g))
    }

    pub fn named_blocks(&self, prefix: &str) -> Vec<(String, ArrayViewD<'_, f64>)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                [
                    (format!("{prefix}/{i}/w"), l.w.view().into_dyn()),
                    (format!("{prefix}/{i}/b"), l.b.view().into_dyn()),
                ]
            })
            .collect()
    }

    pub fn named_blocks_mut(&mut self, prefix: &str) -> Vec<(String, ArrayViewMutD<'_, f64>)> {
        self.layers
            .iter_mut()
            .enumerate()
            .flat_map(|(i, l)| {
                [
                    (format!("{prefix}/{i}/w"), l.w.view_mut().into_dyn()),
                    (format!("{prefix}/{i}/b"), l.b.view_mut().into_dyn()),
                ]
            })
            .collect()
    }
}

impl Parameters for Mlp {
    fn blocks(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        self.named_blocks("mlp")
    }
    fn blocks_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f64>)> {
        self.named_blocks_mut("mlp")
    }
}

fn relu(x: f64) -> f64 {
    x.max(0.0)
}

fn affine(l: &Linear, x: ArrayView2<f64>) -> Array2<f64> {
    let mut y = x.dot(&l.w);
    y += &l.b;
    y
}
