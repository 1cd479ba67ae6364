use crate::{Error, Result, Tensor};

/// Max pooling over `size×size` windows with the given stride.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaxPool {
    pub size: usize,
    pub stride: usize,
}

impl MaxPool {
    pub fn new(size: usize, stride: usize) -> Result<Self> {
        if size == 0 || stride == 0 {
            return Err(Error::Config("max pool size and stride must be at least 1".into()));
        }
        Ok(MaxPool { size, stride })
    }

    pub(crate) fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match input {
            &[c, h, w] if h >= self.size && w >= self.size => Ok(vec![
                c,
                (h - self.size) / self.stride + 1,
                (w - self.size) / self.stride + 1,
            ]),
            _ => Err(Error::Shape(format!(
                "max pool {}x{} cannot take instance shape {input:?}",
                self.size, self.size
            ))),
        }
    }

    /// Returns the pooled batch and, per output element, the flat input index
    /// that won (first index wins on ties).
    pub(crate) fn forward(&self, x: &Tensor) -> Result<(Tensor, Vec<usize>)> {
        let out_shape = self.output_shape(&x.shape()[1..])?;
        let &[c, h, w] = &x.shape()[1..] else { unreachable!() };
        let (oh, ow) = (out_shape[1], out_shape[2]);
        let n = x.rows();
        let mut y = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::with_capacity(y.capacity());
        for i in 0..n {
            let base = i * c * h * w;
            for ch in 0..c {
                for oi in 0..oh {
                    for oj in 0..ow {
                        let mut best = usize::MAX;
                        let mut best_v = f64::NEG_INFINITY;
                        for ki in 0..self.size {
                            for kj in 0..self.size {
                                let idx = base + (ch * h + oi * self.stride + ki) * w + oj * self.stride + kj;
                                let v = x.data()[idx];
                                if best == usize::MAX || v > best_v {
                                    best = idx;
                                    best_v = v;
                                }
                            }
                        }
                        y.push(best_v);
                        argmax.push(best);
                    }
                }
            }
        }
        let mut shape = vec![n];
        shape.extend(out_shape);
        Ok((Tensor::from_parts(shape, y), argmax))
    }

    pub(crate) fn backward(in_shape: &[usize], argmax: &[usize], dy: &Tensor) -> Tensor {
        let mut dx = Tensor::zeros(in_shape);
        for (&idx, g) in argmax.iter().zip(dy.data()) {
            dx.data_mut()[idx] += g;
        }
        dx
    }
}
