//! Central finite-difference verification of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::tape::{Tape, Var};
use super::{Result, Tensor, TensorError};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    /// Finite-difference step.
    pub h: f64,
    /// Check at most this many randomly chosen coordinates per input.
    pub max_coords: Option<usize>,
    pub seed: u64,
    /// Multiplies analytic gradients before comparison. Anything other than
    /// 1.0 is a deliberate fault used to test that the checker detects errors.
    pub analytic_scale: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            h: 1e-5,
            max_coords: None,
            seed: 0,
            analytic_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// `max |a − n| / max(|a|, |n|, 1e-8)` over checked coordinates.
    pub max_rel_error: f64,
    pub worst_input: usize,
    pub worst_coord: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub coords_checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

fn eval<T: Scalar, F>(f: &F, inputs: &[Tensor<T>]) -> Result<(Tape<T>, Vec<Var>, Var)>
where
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.variable(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    Ok((tape, vars, out))
}

/// Compares reverse-mode gradients of the scalar function `f` at `inputs`
/// against `(f(x + h·e) − f(x − h·e)) / 2h` coordinate by coordinate.
pub fn gradient_check<T: Scalar, F>(inputs: &[Tensor<T>], config: &GradCheckConfig, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    let (tape, vars, out) = eval(&f, inputs)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|&v| grads.get(v).map(|g| g.to_f64_vec()).unwrap_or_default())
        .collect();
    drop(tape);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let h = T::from_f64_lossy(config.h);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_input: 0,
        worst_coord: 0,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
        coords_checked: 0,
    };
    let mut probe = inputs.to_vec();
    for (idx, input) in inputs.iter().enumerate() {
        let n = input.numel();
        let coords: Vec<usize> = match config.max_coords {
            Some(k) if k < n => {
                let mut c = sample(&mut rng, n, k).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..n).collect(),
        };
        for coord in coords {
            let x0 = input.data()[coord];
            probe[idx].data_mut()[coord] = x0 + h;
            let (t, _, o) = eval(&f, &probe)?;
            let fp = t.value(o).data()[0].to_f64_lossy();
            probe[idx].data_mut()[coord] = x0 - h;
            let (t, _, o) = eval(&f, &probe)?;
            let fm = t.value(o).data()[0].to_f64_lossy();
            probe[idx].data_mut()[coord] = x0;
            if !fp.is_finite() || !fm.is_finite() {
                return Err(TensorError::Probe { input: idx, coord });
            }
            // the actual step after rounding to T
            let step = ((x0 + h) - (x0 - h)).to_f64_lossy();
            let numeric = (fp - fm) / step;
            let a = analytic[idx][coord] * config.analytic_scale;
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            let rel = (a - numeric).abs() / denom;
            report.coords_checked += 1;
            if rel > report.max_rel_error || !rel.is_finite() {
                report.max_rel_error = rel;
                report.worst_input = idx;
                report.worst_coord = coord;
                report.worst_analytic = a;
                report.worst_numeric = numeric;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_is_exact() {
        let x = Tensor::<f64>::from_f64(&[2, 3], &[0.5, -1.0, 2.0, 3.5, -0.25, 1.0]).unwrap();
        let r = gradient_check(&[x], &GradCheckConfig::default(), |tape, v| {
            let sq = tape.mul(v[0], v[0])?;
            Ok(tape.sum(sq))
        })
        .unwrap();
        assert!(r.max_rel_error < 1e-8, "{r:?}");
        assert_eq!(r.coords_checked, 6);
    }

    #[test]
    fn injected_fault_is_detected() {
        let x = Tensor::<f64>::from_f64(&[3], &[0.5, -1.0, 2.0]).unwrap();
        let cfg = GradCheckConfig {
            analytic_scale: 1.01,
            ..Default::default()
        };
        let r = gradient_check(&[x], &cfg, |tape, v| {
            let s = tape.tanh(v[0]);
            Ok(tape.sum(s))
        })
        .unwrap();
        assert!(!r.passes(1e-4));
    }

    #[test]
    fn non_finite_probe_is_an_error() {
        let x = Tensor::<f64>::from_f64(&[1], &[0.0]).unwrap();
        let err = gradient_check(&[x], &GradCheckConfig::default(), |tape, v| {
            // infinite slope makes every probe non-finite
            let y = tape.affine(v[0], f64::INFINITY, 0.0);
            Ok(tape.sum(y))
        })
        .unwrap_err();
        assert!(matches!(err, TensorError::Probe { .. }));
    }
}
