use crate::tensor::{init_weights, matmul_at_into, matmul_bt_into, matmul_into, InitScheme, Rng};
use crate::{Error, Result, Tensor};

/// Fully connected affine layer `y = W x + b`, `W` stored `(out, in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Dense {
    pub fn new(weight: Tensor, bias: Tensor) -> Result<Self> {
        let (out, _) = weight.dims2()?;
        if bias.shape() != [out] {
            return Err(Error::Shape(format!(
                "dense bias {:?} does not match {out} outputs",
                bias.shape()
            )));
        }
        Ok(Dense { weight, bias })
    }

    pub fn init(inputs: usize, outputs: usize, scheme: InitScheme, rng: &mut Rng) -> Result<Self> {
        let weight = init_weights(&[outputs, inputs], scheme, rng)?;
        Ok(Dense {
            weight,
            bias: Tensor::zeros(&[outputs]),
        })
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[0]
    }

    /// `X Wᵀ` for a batch `(n, in)`, bias excluded.
    pub(crate) fn linear_batch(&self, x: &Tensor) -> Tensor {
        let (n, i, o) = (x.rows(), self.inputs(), self.outputs());
        let mut z = vec![0.0; n * o];
        matmul_bt_into(x.data(), self.weight.data(), &mut z, n, i, o);
        Tensor::from_parts(vec![n, o], z)
    }

    pub(crate) fn add_bias(&self, z: &Tensor) -> Tensor {
        let o = self.outputs();
        let mut y = z.clone();
        for row in y.data_mut().chunks_mut(o) {
            for (v, b) in row.iter_mut().zip(self.bias.data()) {
                *v += b;
            }
        }
        y
    }

    /// Returns `(dW, db, dX)`.
    pub(crate) fn backward(&self, x: &Tensor, dy: &Tensor) -> (Tensor, Tensor, Tensor) {
        let (n, i, o) = (x.rows(), self.inputs(), self.outputs());
        let mut dw = vec![0.0; o * i];
        matmul_at_into(dy.data(), x.data(), &mut dw, o, n, i);
        let mut db = vec![0.0; o];
        for row in dy.data().chunks(o) {
            for (acc, g) in db.iter_mut().zip(row) {
                *acc += g;
            }
        }
        let mut dx = vec![0.0; n * i];
        matmul_into(dy.data(), self.weight.data(), &mut dx, n, o, i);
        (
            Tensor::from_parts(vec![o, i], dw),
            Tensor::from_parts(vec![o], db),
            Tensor::from_parts(x.shape().to_vec(), dx),
        )
    }

    pub(crate) fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut z = vec![0.0; self.outputs()];
        matmul_bt_into(x, self.weight.data(), &mut z, 1, self.inputs(), self.outputs());
        z
    }

    pub(crate) fn apply_adjoint(&self, y: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.inputs()];
        matmul_into(y, self.weight.data(), &mut x, 1, self.outputs(), self.inputs());
        x
    }
}
