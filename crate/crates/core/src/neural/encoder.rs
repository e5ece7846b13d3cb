use ndarray::{concatenate, s, Array2, ArrayViewD, ArrayViewMutD, Axis};
use rand::Rng;

use super::mlp::{Mlp, MlpTape};
use super::ops::{segment_max, segment_maxpool, segment_maxpool_backward, SetBatch};
use super::params::Parameters;
use crate::error::{Error, Result};

/// Per-type set encoders whose max-pooled embeddings are concatenated with
/// dense features and fed to a head.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderNet {
    pub sets: Vec<Mlp>,
    pub head: Mlp,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct NetInput {
    pub dense: Array2<f64>,
    pub sets: Vec<SetBatch>,
}

impl NetInput {
    pub fn batch_len(&self) -> usize {
        self.dense.nrows()
    }
}

#[derive(Clone, Debug)]
pub struct EncoderTape {
    sets: Vec<(MlpTape, Vec<Vec<Option<usize>>>, usize)>,
    head: MlpTape,
}

/// Gradient with respect to every input row.
#[derive(Clone, Debug, PartialEq)]
pub struct InputGrad {
    pub dense: Array2<f64>,
    pub sets: Vec<Array2<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EncoderShape<'a> {
    pub dense: usize,
    pub sets: &'a [usize],
    pub set_hidden: &'a [usize],
    pub head_hidden: &'a [usize],
    pub out: usize,
}

impl EncoderNet {
    pub fn new<R: Rng + ?Sized>(shape: EncoderShape<'_>, rng: &mut R) -> Self {
        let embed = *shape.set_hidden.last().expect("set encoders need a width");
        let sets = shape
            .sets
            .iter()
            .map(|&d| {
                let dims: Vec<usize> = std::iter::once(d).chain(shape.set_hidden.iter().copied()).collect();
                Mlp::new(&dims, rng)
            })
            .collect();
        let head_in = shape.dense + embed * shape.sets.len();
        let dims: Vec<usize> = std::iter::once(head_in)
            .chain(shape.head_hidden.iter().copied())
            .chain(std::iter::once(shape.out))
            .collect();
        EncoderNet {
            sets,
            head: Mlp::new(&dims, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        EncoderNet {
            sets: self.sets.iter().map(Mlp::zeros_like).collect(),
            head: self.head.zeros_like(),
        }
    }

    pub fn output_dim(&self) -> usize {
        self.head.output_dim()
    }

    fn check(&self, input: &NetInput) -> Result<()> {
        if input.sets.len() != self.sets.len() {
            return Err(Error::Shape {
                layer: 0,
                msg: format!("{} set inputs for {} encoders", input.sets.len(), self.sets.len()),
            });
        }
        for set in &input.sets {
            set.check()?;
            if set.batch_len() != input.batch_len() {
                return Err(Error::Shape {
                    layer: 0,
                    msg: "set batch size differs from dense batch size".into(),
                });
            }
        }
        Ok(())
    }

    fn pooled(&self, input: &NetInput, embeds: &[Array2<f64>]) -> Array2<f64> {
        let mut parts = vec![input.dense.clone()];
        for (set, e) in input.sets.iter().zip(embeds) {
            parts.push(segment_max(e.view(), &set.offsets));
        }
        let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
        concatenate(Axis(1), &views).expect("row counts agree")
    }

    pub fn predict(&self, input: &NetInput) -> Result<Array2<f64>> {
        self.check(input)?;
        let embeds = self
            .sets
            .iter()
            .zip(&input.sets)
            .map(|(m, s)| m.predict(s.rows.view()))
            .collect::<Result<Vec<_>>>()?;
        self.head.predict(self.pooled(input, &embeds).view())
    }

    pub fn forward(&self, input: &NetInput) -> Result<(Array2<f64>, EncoderTape)> {
        self.check(input)?;
        let mut parts = vec![input.dense.clone()];
        let mut tapes = Vec::with_capacity(self.sets.len());
        for (m, set) in self.sets.iter().zip(&input.sets) {
            let (e, tape) = m.forward(set.rows.view())?;
            let (pooled, arg) = segment_maxpool(e.view(), &set.offsets);
            parts.push(pooled);
            tapes.push((tape, arg, set.rows.nrows()));
        }
        let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
        let joined = concatenate(Axis(1), &views).expect("row counts agree");
        let (out, head) = self.head.forward(joined.view())?;
        Ok((out, EncoderTape { sets: tapes, head }))
    }

    pub fn backward(&self, tape: &EncoderTape, upstream: ndarray::ArrayView2<f64>) -> Result<(EncoderNet, InputGrad)> {
        let (head_grad, g_joined) = self.head.backward(&tape.head, upstream)?;
        let dense_dim = self.head.input_dim() - self.sets.iter().map(Mlp::output_dim).sum::<usize>();
        let dense = g_joined.slice(s![.., ..dense_dim]).to_owned();
        let mut col = dense_dim;
        let mut set_grads = Vec::with_capacity(self.sets.len());
        let mut set_inputs = Vec::with_capacity(self.sets.len());
        for (m, (t, arg, n_rows)) in self.sets.iter().zip(&tape.sets) {
            let w = m.output_dim();
            let g_pooled = g_joined.slice(s![.., col..col + w]);
            col += w;
            let g_rows = segment_maxpool_backward(g_pooled, arg, *n_rows);
            let (g, gx) = m.backward(t, g_rows.view())?;
            set_grads.push(g);
            set_inputs.push(gx);
        }
        Ok((
            EncoderNet {
                sets: set_grads,
                head: head_grad,
            },
            InputGrad {
                dense,
                sets: set_inputs,
            },
        ))
    }

    pub fn named_blocks(&self, prefix: &str) -> Vec<(String, ArrayViewD<'_, f64>)> {
        let mut out = Vec::new();
        for (i, m) in self.sets.iter().enumerate() {
            out.extend(m.named_blocks(&format!("{prefix}/set{i}")));
        }
        out.extend(self.head.named_blocks(&format!("{prefix}/head")));
        out
    }

    pub fn named_blocks_mut(&mut self, prefix: &str) -> Vec<(String, ArrayViewMutD<'_, f64>)> {
        let mut out = Vec::new();
        for (i, m) in self.sets.iter_mut().enumerate() {
            out.extend(m.named_blocks_mut(&format!("{prefix}/set{i}")));
        }
        out.extend(self.head.named_blocks_mut(&format!("{prefix}/head")));
        out
    }
}

impl Parameters for EncoderNet {
    fn blocks(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        self.named_blocks("net")
    }
    fn blocks_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f64>)> {
        self.named_blocks_mut("net")
    }
}
