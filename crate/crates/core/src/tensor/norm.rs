//! Per-channel batch normalization over batch and spatial axes.

use super::tape::{accumulate_into, Op, Tape, Var};
use super::{Result, Tensor, TensorError};
use crate::scalar::{lit, Scalar};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.99;

/// Batch mean and (biased) variance per channel from a training-mode pass.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Scalar> BatchNormStats<T> {
    /// `running ← momentum·running + (1 − momentum)·batch`
    pub fn update_running(&self, running_mean: &mut [T], running_var: &mut [T]) {
        let m: T = lit(BN_MOMENTUM);
        let one_m = T::one() - m;
        for (r, &b) in running_mean.iter_mut().zip(&self.mean) {
            *r = m * *r + one_m * b;
        }
        for (r, &b) in running_var.iter_mut().zip(&self.var) {
            *r = m * *r + one_m * b;
        }
    }
}

pub(crate) struct BnRecord<T> {
    input: Var,
    gamma: Var,
    beta: Var,
    xhat: Vec<T>,
    inv_std: Vec<T>,
    /// statistics came from the batch itself (training mode)
    batch_stats: bool,
    batch: usize,
    channels: usize,
    spatial: usize,
}

fn layout(shape: &[usize]) -> Result<(usize, usize, usize)> {
    if shape.len() < 2 {
        return Err(TensorError::invalid(
            "batch_norm",
            format!("expected [batch, channels, ...], got {shape:?}"),
        ));
    }
    Ok((shape[0], shape[1], shape[2..].iter().product()))
}

impl<T: Scalar> Tape<T> {
    fn check_affine(&self, input: Var, gamma: Var, beta: Var) -> Result<(usize, usize, usize)> {
        let (b, c, sp) = layout(self.shape(input))?;
        for p in [gamma, beta] {
            if self.shape(p) != [c] {
                return Err(TensorError::dim("batch_norm", self.shape(input), self.shape(p)));
            }
        }
        Ok((b, c, sp))
    }

    fn finish_bn(&mut self, rec: BnRecord<T>, gamma: Var, beta: Var) -> Result<Var> {
        let g = self.value(gamma).data();
        let bta = self.value(beta).data();
        let mut out = vec![T::zero(); rec.xhat.len()];
        let sp = rec.spatial;
        for b in 0..rec.batch {
            for c in 0..rec.channels {
                let off = (b * rec.channels + c) * sp;
                for i in off..off + sp {
                    out[i] = g[c] * rec.xhat[i] + bta[c];
                }
            }
        }
        let value = Tensor::new(self.shape(rec.input).to_vec(), out)?;
        let rg = [rec.input, gamma, beta].iter().any(|&v| self.requires_grad(v));
        Ok(self.push(value, Op::BatchNorm(Box::new(rec)), rg))
    }

    /// Training-mode batch normalization: statistics are taken from `input`
    /// (shape `[B, C, ...]`) and returned so running averages can be updated.
    pub fn batch_norm(&mut self, input: Var, gamma: Var, beta: Var) -> Result<(Var, BatchNormStats<T>)> {
        let (batch, channels, spatial) = self.check_affine(input, gamma, beta)?;
        let x = self.value(input).data();
        let n = T::from_usize(batch * spatial).unwrap();
        let eps: T = lit(BN_EPS);
        let mut mean = vec![T::zero(); channels];
        let mut var = vec![T::zero(); channels];
        for c in 0..channels {
            let mut s = T::zero();
            for b in 0..batch {
                let off = (b * channels + c) * spatial;
                s += x[off..off + spatial].iter().copied().sum();
            }
            let m = s / n;
            let mut v = T::zero();
            for b in 0..batch {
                let off = (b * channels + c) * spatial;
                v += x[off..off + spatial].iter().map(|&xi| (xi - m) * (xi - m)).sum();
            }
            mean[c] = m;
            var[c] = v / n;
        }
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut xhat = vec![T::zero(); x.len()];
        for b in 0..batch {
            for c in 0..channels {
                let off = (b * channels + c) * spatial;
                for i in off..off + spatial {
                    xhat[i] = (x[i] - mean[c]) * inv_std[c];
                }
            }
        }
        let rec = BnRecord {
            input,
            gamma,
            beta,
            xhat,
            inv_std,
            batch_stats: true,
            batch,
            channels,
            spatial,
        };
        let y = self.finish_bn(rec, gamma, beta)?;
        Ok((y, BatchNormStats { mean, var }))
    }

    /// Inference-mode batch normalization with fixed running statistics.
    pub fn batch_norm_eval(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[T],
        running_var: &[T],
    ) -> Result<Var> {
        let (batch, channels, spatial) = self.check_affine(input, gamma, beta)?;
        if running_mean.len() != channels || running_var.len() != channels {
            return Err(TensorError::dim("batch_norm", &[channels], &[running_mean.len(), running_var.len()]));
        }
        let eps: T = lit(BN_EPS);
        let inv_std: Vec<T> = running_var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let x = self.value(input).data();
        let mut xhat = vec![T::zero(); x.len()];
        for b in 0..batch {
            for c in 0..channels {
                let off = (b * channels + c) * spatial;
                for i in off..off + spatial {
                    xhat[i] = (x[i] - running_mean[c]) * inv_std[c];
                }
            }
        }
        let rec = BnRecord {
            input,
            gamma,
            beta,
            xhat,
            inv_std,
            batch_stats: false,
            batch,
            channels,
            spatial,
        };
        self.finish_bn(rec, gamma, beta)
    }
}

impl<T: Scalar> BnRecord<T> {
    pub(crate) fn backward(&self, tape: &Tape<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let (bsz, ch, sp) = (self.batch, self.channels, self.spatial);
        let mut sum_g = vec![T::zero(); ch];
        let mut sum_gx = vec![T::zero(); ch];
        for b in 0..bsz {
            for c in 0..ch {
                let off = (b * ch + c) * sp;
                for i in off..off + sp {
                    sum_g[c] += g[i];
                    sum_gx[c] += g[i] * self.xhat[i];
                }
            }
        }
        if tape.requires_grad(self.gamma) {
            accumulate_into(&mut grads[self.gamma.0], ch, |d| {
                d.iter_mut().zip(&sum_gx).for_each(|(d, &s)| *d += s)
            });
        }
        if tape.requires_grad(self.beta) {
            accumulate_into(&mut grads[self.beta.0], ch, |d| {
                d.iter_mut().zip(&sum_g).for_each(|(d, &s)| *d += s)
            });
        }
        if !tape.requires_grad(self.input) {
            return;
        }
        let gamma = tape.value(self.gamma).data();
        let n = T::from_usize(bsz * sp).unwrap();
        accumulate_into(&mut grads[self.input.0], g.len(), |dx| {
            for b in 0..bsz {
                for c in 0..ch {
                    let off = (b * ch + c) * sp;
                    let k = gamma[c] * self.inv_std[c];
                    if self.batch_stats {
                        // dx = γ/σ · (g − mean(g) − x̂·mean(g·x̂))
                        let mg = sum_g[c] / n;
                        let mgx = sum_gx[c] / n;
                        for i in off..off + sp {
                            dx[i] += k * (g[i] - mg - self.xhat[i] * mgx);
                        }
                    } else {
                        for i in off..off + sp {
                            dx[i] += k * g[i];
                        }
                    }
                }
            }
        });
    }
}
