use std::collections::BTreeMap;

use ndarray::{ArrayD, ArrayViewD, ArrayViewMutD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A model whose parameters can be enumerated as named arrays.
///
/// Gradients are stored in a value of the same type, so the two
/// enumerations line up block for block.
pub trait Parameters {
    fn blocks(&self) -> Vec<(String, ArrayViewD<'_, f64>)>;
    fn blocks_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f64>)>;

    fn num_parameters(&self) -> usize {
        self.blocks().iter().map(|(_, a)| a.len()).sum()
    }

    /// `self += scale * other`, block by block.
    fn add_scaled(&mut self, other: &Self, scale: f64)
    where
        Self: Sized,
    {
        let src = other.blocks();
        for ((_, mut dst), (_, s)) in self.blocks_mut().into_iter().zip(src) {
            dst.scaled_add(scale, &s);
        }
    }

    fn fill(&mut self, value: f64) {
        for (_, mut a) in self.blocks_mut() {
            a.fill(value);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Flat name-to-tensor map used in checkpoints.
pub type ParamMap = BTreeMap<String, Tensor>;

pub fn export<P: Parameters>(model: &P) -> ParamMap {
    model
        .blocks()
        .into_iter()
        .map(|(name, a)| {
            let t = Tensor {
                shape: a.shape().to_vec(),
                data: a.iter().copied().collect(),
            };
            (name, t)
        })
        .collect()
}

/// Loads every block of `model` from `map`; shapes must match exactly.
pub fn import<P: Parameters>(model: &mut P, map: &ParamMap) -> Result<()> {
    for (i, (name, mut dst)) in model.blocks_mut().into_iter().enumerate() {
        let t = map.get(&name).ok_or_else(|| Error::Shape {
            layer: i,
            msg: format!("missing block {name}"),
        })?;
        if t.shape != dst.shape() {
            return Err(Error::Shape {
                layer: i,
                msg: format!("block {name}: shape {:?} != {:?}", t.shape, dst.shape()),
            });
        }
        let src = ArrayD::from_shape_vec(IxDyn(&t.shape), t.data.clone()).map_err(|e| Error::Shape {
            layer: i,
            msg: e.to_string(),
        })?;
        dst.assign(&src);
    }
    Ok(())
}
