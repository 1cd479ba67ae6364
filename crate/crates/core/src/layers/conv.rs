//! 2-d convolution via im2col.
//!
//! The linear term of a convolution is multiplication by a block matrix whose
//! blocks are doubly block circulant. That matrix is never formed here: the
//! forward pass lowers each instance to a column matrix and multiplies by the
//! flattened kernel, and the adjoint scatters back with col2im.

use crate::tensor::{init_weights, matmul_at_into, matmul_bt_into, matmul_into, InitScheme, Rng};
use crate::{Error, Result, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    /// `(out_channels, in_channels, kh, kw)`.
    pub kernel: Tensor,
    pub bias: Tensor,
    pub stride: usize,
    /// Zero padding `(rows, cols)` added on each side.
    pub padding: (usize, usize),
}

/// Spatial geometry of one convolution applied to one input shape.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Geometry {
    pub ic: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub oc: usize,
    pub oh: usize,
    pub ow: usize,
    pub stride: usize,
    pub ph: usize,
    pub pw: usize,
}

impl Geometry {
    fn patch(&self) -> usize {
        self.ic * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }

    pub fn in_len(&self) -> usize {
        self.ic * self.h * self.w
    }

    pub fn out_len(&self) -> usize {
        self.oc * self.positions()
    }
}

impl Conv2d {
    pub fn new(kernel: Tensor, bias: Tensor, stride: usize, padding: (usize, usize)) -> Result<Self> {
        let &[oc, _, _, _] = kernel.shape() else {
            return Err(Error::Shape(format!(
                "conv kernel must be 4-d, got {:?}",
                kernel.shape()
            )));
        };
        if bias.shape() != [oc] {
            return Err(Error::Shape(format!(
                "conv bias {:?} does not match {oc} output channels",
                bias.shape()
            )));
        }
        if stride == 0 {
            return Err(Error::Config("conv stride must be at least 1".into()));
        }
        Ok(Conv2d {
            kernel,
            bias,
            stride,
            padding,
        })
    }

    pub fn init(
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        stride: usize,
        padding: (usize, usize),
        scheme: InitScheme,
        rng: &mut Rng,
    ) -> Result<Self> {
        let k = init_weights(&[out_channels, in_channels, kernel.0, kernel.1], scheme, rng)?;
        Conv2d::new(k, Tensor::zeros(&[out_channels]), stride, padding)
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.shape()[0]
    }

    pub(crate) fn geometry(&self, input: &[usize]) -> Result<Geometry> {
        let &[ic, h, w] = input else {
            return Err(Error::Shape(format!(
                "conv expects (channels, height, width) instances, got {input:?}"
            )));
        };
        let s = self.kernel.shape();
        let (oc, kic, kh, kw) = (s[0], s[1], s[2], s[3]);
        if ic != kic {
            return Err(Error::Shape(format!(
                "conv kernel takes {kic} channels, input has {ic}"
            )));
        }
        let (ph, pw) = self.padding;
        if h + 2 * ph < kh || w + 2 * pw < kw {
            return Err(Error::Shape(format!(
                "kernel {kh}x{kw} larger than padded input {}x{}",
                h + 2 * ph,
                w + 2 * pw
            )));
        }
        Ok(Geometry {
            ic,
            h,
            w,
            kh,
            kw,
            oc,
            oh: (h + 2 * ph - kh) / self.stride + 1,
            ow: (w + 2 * pw - kw) / self.stride + 1,
            stride: self.stride,
            ph,
            pw,
        })
    }

    pub(crate) fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let g = self.geometry(input)?;
        Ok(vec![g.oc, g.oh, g.ow])
    }

    /// Linear term for one instance; returns `(oc, oh*ow)` flattened.
    pub(crate) fn apply(&self, g: &Geometry, x: &[f64]) -> Vec<f64> {
        let cols = im2col(g, x);
        let mut z = vec![0.0; g.out_len()];
        matmul_into(self.kernel.data(), &cols, &mut z, g.oc, g.patch(), g.positions());
        z
    }

    /// Adjoint of the linear term (transposed convolution) for one instance.
    pub(crate) fn apply_adjoint(&self, g: &Geometry, y: &[f64]) -> Vec<f64> {
        let mut dcols = vec![0.0; g.patch() * g.positions()];
        matmul_at_into(self.kernel.data(), y, &mut dcols, g.patch(), g.oc, g.positions());
        let mut x = vec![0.0; g.in_len()];
        col2im(g, &dcols, &mut x);
        x
    }

    pub(crate) fn linear_batch(&self, g: &Geometry, x: &Tensor) -> Tensor {
        let n = x.rows();
        let mut z = Vec::with_capacity(n * g.out_len());
        for i in 0..n {
            z.extend(self.apply(g, x.row(i)));
        }
        Tensor::from_parts(vec![n, g.oc, g.oh, g.ow], z)
    }

    pub(crate) fn add_bias(&self, g: &Geometry, z: &Tensor) -> Tensor {
        let mut y = z.clone();
        let hw = g.positions();
        for inst in y.data_mut().chunks_mut(g.out_len()) {
            for (c, plane) in inst.chunks_mut(hw).enumerate() {
                let b = self.bias.data()[c];
                plane.iter_mut().for_each(|v| *v += b);
            }
        }
        y
    }

    /// Returns `(dK, db, dX)`.
    pub(crate) fn backward(&self, g: &Geometry, x: &Tensor, dy: &Tensor) -> (Tensor, Tensor, Tensor) {
        let n = x.rows();
        let mut dk = vec![0.0; self.kernel.len()];
        let mut db = vec![0.0; g.oc];
        let mut dx = Vec::with_capacity(x.len());
        for i in 0..n {
            let dyi = dy.row(i);
            let cols = im2col(g, x.row(i));
            matmul_bt_into(dyi, &cols, &mut dk, g.oc, g.positions(), g.patch());
            for (c, plane) in dyi.chunks(g.positions()).enumerate() {
                db[c] += plane.iter().sum::<f64>();
            }
            dx.extend(self.apply_adjoint(g, dyi));
        }
        (
            Tensor::from_parts(self.kernel.shape().to_vec(), dk),
            Tensor::from_parts(vec![g.oc], db),
            Tensor::from_parts(x.shape().to_vec(), dx),
        )
    }
}

/// Lowers one `(ic, h, w)` instance to a `(ic*kh*kw, oh*ow)` column matrix.
fn im2col(g: &Geometry, x: &[f64]) -> Vec<f64> {
    let positions = g.positions();
    let mut cols = vec![0.0; g.patch() * positions];
    for c in 0..g.ic {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * positions..(row + 1) * positions];
                for oi in 0..g.oh {
                    let Some(r) = (oi * g.stride + ki).checked_sub(g.ph).filter(|&r| r < g.h) else {
                        continue;
                    };
                    for oj in 0..g.ow {
                        if let Some(s) = (oj * g.stride + kj).checked_sub(g.pw).filter(|&s| s < g.w) {
                            dst[oi * g.ow + oj] = x[(c * g.h + r) * g.w + s];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Scatter-adds a column matrix back onto an instance buffer.
fn col2im(g: &Geometry, cols: &[f64], x: &mut [f64]) {
    let positions = g.positions();
    for c in 0..g.ic {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * positions..(row + 1) * positions];
                for oi in 0..g.oh {
                    let Some(r) = (oi * g.stride + ki).checked_sub(g.ph).filter(|&r| r < g.h) else {
                        continue;
                    };
                    for oj in 0..g.ow {
                        if let Some(s) = (oj * g.stride + kj).checked_sub(g.pw).filter(|&s| s < g.w) {
                            x[(c * g.h + r) * g.w + s] += src[oi * g.ow + oj];
                        }
                    }
                }
            }
        }
    }
}
