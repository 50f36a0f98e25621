//! Same-padded, stride-1 2-D cross-correlation lowered to GEMM via im2col.

use super::linalg::gemm;
use super::tape::{accumulate_into, Op, Tape, Var};
use super::{Result, Tensor, TensorError};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeometry {
    batch: usize,
    c_in: usize,
    c_out: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
}

impl ConvGeometry {
    fn patch(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    fn columns(&self) -> usize {
        self.batch * self.h * self.w
    }
}

pub(crate) struct ConvRecord<T> {
    input: Var,
    kernel: Var,
    bias: Option<Var>,
    geom: ConvGeometry,
    /// im2col matrix, `patch × (batch·h·w)`
    cols: Vec<T>,
}

fn im2col<T: Scalar>(x: &[T], g: &ConvGeometry) -> Vec<T> {
    let (ph, pw) = (g.kh / 2, g.kw / 2);
    let hw = g.h * g.w;
    let ncols = g.columns();
    let mut cols = vec![T::zero(); g.patch() * ncols];
    for c in 0..g.c_in {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let dst = &mut cols[row * ncols..(row + 1) * ncols];
                for b in 0..g.batch {
                    let plane = &x[(b * g.c_in + c) * hw..(b * g.c_in + c + 1) * hw];
                    for y in 0..g.h {
                        let sy = y as isize + ky as isize - ph as isize;
                        if sy < 0 || sy >= g.h as isize {
                            continue;
                        }
                        let src_row = &plane[sy as usize * g.w..(sy as usize + 1) * g.w];
                        let out_row = &mut dst[b * hw + y * g.w..b * hw + (y + 1) * g.w];
                        for (xo, o) in out_row.iter_mut().enumerate() {
                            let sx = xo as isize + kx as isize - pw as isize;
                            if sx >= 0 && sx < g.w as isize {
                                *o = src_row[sx as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im<T: Scalar>(cols: &[T], g: &ConvGeometry, dx: &mut [T]) {
    let (ph, pw) = (g.kh / 2, g.kw / 2);
    let hw = g.h * g.w;
    let ncols = g.columns();
    for c in 0..g.c_in {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let src = &cols[row * ncols..(row + 1) * ncols];
                for b in 0..g.batch {
                    let base = (b * g.c_in + c) * hw;
                    for y in 0..g.h {
                        let sy = y as isize + ky as isize - ph as isize;
                        if sy < 0 || sy >= g.h as isize {
                            continue;
                        }
                        let in_row = &src[b * hw + y * g.w..b * hw + (y + 1) * g.w];
                        for (xo, &v) in in_row.iter().enumerate() {
                            let sx = xo as isize + kx as isize - pw as isize;
                            if sx >= 0 && sx < g.w as isize {
                                dx[base + sy as usize * g.w + sx as usize] += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

impl<T: Scalar> Tape<T> {
    /// Batched convolution: `input [B, C_in, H, W]`, `kernel [C_out, C_in, k, k]`
    /// with odd `k`, zero padding `k/2`, stride 1, optional `bias [C_out]`.
    /// A rank-3 input is treated as a batch of one.
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Option<Var>) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        let ks = self.shape(kernel).to_vec();
        let (batch, c_in, h, w, squeeze) = match *xs.as_slice() {
            [c, h, w] => (1, c, h, w, true),
            [b, c, h, w] => (b, c, h, w, false),
            _ => return Err(TensorError::dim("conv2d", &xs, &ks)),
        };
        if ks.len() != 4 || ks[1] != c_in || ks[2].is_multiple_of(2) || ks[3].is_multiple_of(2) {
            return Err(TensorError::dim("conv2d", &xs, &ks));
        }
        let c_out = ks[0];
        if let Some(b) = bias {
            if self.shape(b) != [c_out] {
                return Err(TensorError::dim("conv2d", &ks, self.shape(b)));
            }
        }
        let geom = ConvGeometry {
            batch,
            c_in,
            c_out,
            h,
            w,
            kh: ks[2],
            kw: ks[3],
        };
        let cols = im2col(self.value(input).data(), &geom);
        let ncols = geom.columns();
        let mut tmp = vec![T::zero(); c_out * ncols];
        gemm(c_out, geom.patch(), ncols, self.value(kernel).data(), false, &cols, false, &mut tmp, false);
        let hw = h * w;
        let mut out = vec![T::zero(); batch * c_out * hw];
        let bias_vals = bias.map(|b| self.value(b).data().to_vec());
        for co in 0..c_out {
            let bv = bias_vals.as_ref().map_or(T::zero(), |v| v[co]);
            for b in 0..batch {
                let src = &tmp[co * ncols + b * hw..co * ncols + (b + 1) * hw];
                let dst = &mut out[(b * c_out + co) * hw..(b * c_out + co + 1) * hw];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d = s + bv;
                }
            }
        }
        let shape = if squeeze {
            vec![c_out, h, w]
        } else {
            vec![batch, c_out, h, w]
        };
        let value = Tensor::new(shape, out)?;
        let mut inputs = vec![input, kernel];
        inputs.extend(bias);
        let rg = inputs.iter().any(|&v| self.requires_grad(v));
        let rec = ConvRecord {
            input,
            kernel,
            bias,
            geom,
            cols: if rg { cols } else { Vec::new() },
        };
        Ok(self.push(value, Op::Conv2d(Box::new(rec)), rg))
    }
}

impl<T: Scalar> ConvRecord<T> {
    pub(crate) fn backward(&self, tape: &Tape<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let geom = &self.geom;
        let hw = geom.h * geom.w;
        let ncols = geom.columns();
        // gradient rearranged to [C_out, B·H·W]
        let mut gt = vec![T::zero(); geom.c_out * ncols];
        for b in 0..geom.batch {
            for co in 0..geom.c_out {
                gt[co * ncols + b * hw..co * ncols + (b + 1) * hw]
                    .copy_from_slice(&g[(b * geom.c_out + co) * hw..(b * geom.c_out + co + 1) * hw]);
            }
        }
        if let Some(bias) = self.bias {
            if tape.requires_grad(bias) {
                accumulate_into(&mut grads[bias.0], geom.c_out, |gb| {
                    for (co, d) in gb.iter_mut().enumerate() {
                        *d += gt[co * ncols..(co + 1) * ncols].iter().copied().sum();
                    }
                });
            }
        }
        if tape.requires_grad(self.kernel) {
            accumulate_into(&mut grads[self.kernel.0], geom.c_out * geom.patch(), |gk| {
                gemm(geom.c_out, ncols, geom.patch(), &gt, false, &self.cols, true, gk, true)
            });
        }
        if tape.requires_grad(self.input) {
            let mut dcols = vec![T::zero(); geom.patch() * ncols];
            gemm(
                geom.patch(),
                geom.c_out,
                ncols,
                tape.value(self.kernel).data(),
                true,
                &gt,
                false,
                &mut dcols,
                false,
            );
            accumulate_into(&mut grads[self.input.0], geom.batch * geom.c_in * hw, |gx| {
                col2im(&dcols, geom, gx)
            });
        }
    }
}
