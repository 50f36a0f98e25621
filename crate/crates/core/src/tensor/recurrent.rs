//! Recurrent cells composed from tape primitives.
//!
//! All cells take batched inputs `x: [B, d_in]`, state `[B, d_h]`.

use super::tape::{Tape, Var};
use super::{Result, TensorError};
use crate::scalar::Scalar;

/// LSTM weights with gates packed in the order input, forget, candidate, output.
#[derive(Debug, Clone, Copy)]
pub struct LstmParams {
    /// `[d_in, 4·d_h]`
    pub w_x: Var,
    /// `[d_h, 4·d_h]`
    pub w_h: Var,
    /// `[4·d_h]`
    pub bias: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct GruParams {
    /// `[d_in, 3·d_h]`, gates update, reset, candidate
    pub w_x: Var,
    pub w_h: Var,
    pub b_x: Var,
    pub b_h: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct RnnParams {
    pub w_x: Var,
    pub w_h: Var,
    pub bias: Var,
}

fn check_state<T: Scalar>(tape: &Tape<T>, op: &'static str, x: Var, h: Var, w_x: Var, w_h: Var, gates: usize) -> Result<usize> {
    let (xs, hs) = (tape.shape(x), tape.shape(h));
    if xs.len() != 2 || hs.len() != 2 || xs[0] != hs[0] {
        return Err(TensorError::dim(op, xs, hs));
    }
    let d_h = hs[1];
    if tape.shape(w_x) != [xs[1], gates * d_h] {
        return Err(TensorError::dim(op, xs, tape.shape(w_x)));
    }
    if tape.shape(w_h) != [d_h, gates * d_h] {
        return Err(TensorError::dim(op, hs, tape.shape(w_h)));
    }
    Ok(d_h)
}

fn preactivation<T: Scalar>(tape: &mut Tape<T>, x: Var, h: Var, w_x: Var, w_h: Var, bias: Var) -> Result<Var> {
    let gx = tape.matmul(x, w_x)?;
    let gh = tape.matmul(h, w_h)?;
    let z = tape.add(gx, gh)?;
    tape.add_broadcast(z, bias)
}

/// One LSTM step; returns `(h, c)`.
pub fn lstm_cell<T: Scalar>(tape: &mut Tape<T>, x: Var, h_prev: Var, c_prev: Var, p: &LstmParams) -> Result<(Var, Var)> {
    let d_h = check_state(tape, "lstm_cell", x, h_prev, p.w_x, p.w_h, 4)?;
    if tape.shape(c_prev) != tape.shape(h_prev) {
        return Err(TensorError::dim("lstm_cell", tape.shape(h_prev), tape.shape(c_prev)));
    }
    let z = preactivation(tape, x, h_prev, p.w_x, p.w_h, p.bias)?;
    let zi = tape.slice_last(z, 0, d_h)?;
    let zf = tape.slice_last(z, d_h, d_h)?;
    let zg = tape.slice_last(z, 2 * d_h, d_h)?;
    let zo = tape.slice_last(z, 3 * d_h, d_h)?;
    let i = tape.sigmoid(zi);
    let f = tape.sigmoid(zf);
    let g = tape.tanh(zg);
    let o = tape.sigmoid(zo);
    let keep = tape.mul(f, c_prev)?;
    let write = tape.mul(i, g)?;
    let c = tape.add(keep, write)?;
    let tc = tape.tanh(c);
    let h = tape.mul(o, tc)?;
    Ok((h, c))
}

/// One GRU step (reset gate applied after the hidden projection).
pub fn gru_cell<T: Scalar>(tape: &mut Tape<T>, x: Var, h_prev: Var, p: &GruParams) -> Result<Var> {
    let d_h = check_state(tape, "gru_cell", x, h_prev, p.w_x, p.w_h, 3)?;
    let gx = tape.matmul(x, p.w_x)?;
    let gx = tape.add_broadcast(gx, p.b_x)?;
    let gh = tape.matmul(h_prev, p.w_h)?;
    let gh = tape.add_broadcast(gh, p.b_h)?;
    let xz = tape.slice_last(gx, 0, d_h)?;
    let xr = tape.slice_last(gx, d_h, d_h)?;
    let xn = tape.slice_last(gx, 2 * d_h, d_h)?;
    let hz = tape.slice_last(gh, 0, d_h)?;
    let hr = tape.slice_last(gh, d_h, d_h)?;
    let hn = tape.slice_last(gh, 2 * d_h, d_h)?;
    let z = tape.add(xz, hz)?;
    let z = tape.sigmoid(z);
    let r = tape.add(xr, hr)?;
    let r = tape.sigmoid(r);
    let rh = tape.mul(r, hn)?;
    let n = tape.add(xn, rh)?;
    let n = tape.tanh(n);
    let one_minus_z = tape.one_minus(z);
    let a = tape.mul(one_minus_z, n)?;
    let b = tape.mul(z, h_prev)?;
    tape.add(a, b)
}

/// One Elman step: `h = tanh(x·W_x + h·W_h + b)`.
pub fn rnn_cell<T: Scalar>(tape: &mut Tape<T>, x: Var, h_prev: Var, p: &RnnParams) -> Result<Var> {
    check_state(tape, "rnn_cell", x, h_prev, p.w_x, p.w_h, 1)?;
    let z = preactivation(tape, x, h_prev, p.w_x, p.w_h, p.bias)?;
    Ok(tape.tanh(z))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn sig(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    fn consts(tape: &mut Tape<f64>, d_in: usize, d_h: usize, wx: &[f64], wh: &[f64], b: &[f64]) -> LstmParams {
        LstmParams {
            w_x: tape.constant(Tensor::from_f64(&[d_in, 4 * d_h], wx).unwrap()),
            w_h: tape.constant(Tensor::from_f64(&[d_h, 4 * d_h], wh).unwrap()),
            bias: tape.constant(Tensor::from_f64(&[4 * d_h], b).unwrap()),
        }
    }

    #[test]
    fn zero_parameters_are_a_fixed_point() {
        let mut tape = Tape::<f64>::new();
        let p = consts(&mut tape, 3, 2, &[0.0; 24], &[0.0; 16], &[0.0; 8]);
        let x = tape.constant(Tensor::from_f64(&[1, 3], &[1.0, -2.0, 5.0]).unwrap());
        let z = tape.constant(Tensor::zeros(&[1, 2]));
        let (h, c) = lstm_cell(&mut tape, x, z, z, &p).unwrap();
        assert_eq!(tape.value(h).data(), &[0.0, 0.0]);
        assert_eq!(tape.value(c).data(), &[0.0, 0.0]);
    }

    #[test]
    fn saturated_forget_gate_keeps_cell() {
        let mut tape = Tape::<f64>::new();
        // input gate driven to zero too, so nothing is written
        let mut b = vec![0.0; 4];
        b[0] = -100.0;
        b[1] = 100.0;
        let p = consts(&mut tape, 2, 1, &[0.0; 8], &[0.0; 4], &b);
        let x = tape.constant(Tensor::from_f64(&[1, 2], &[0.7, -0.3]).unwrap());
        let h0 = tape.constant(Tensor::from_f64(&[1, 1], &[0.2]).unwrap());
        let c0 = tape.constant(Tensor::from_f64(&[1, 1], &[1.25]).unwrap());
        let (_, c) = lstm_cell(&mut tape, x, h0, c0, &p).unwrap();
        assert!((tape.value(c).data()[0] - 1.25).abs() < 1e-12);
    }

    #[test]
    fn matches_scalar_recurrence() {
        // d_in = 2, d_h = 2, unrolled two steps by hand
        let wx: Vec<f64> = (0..16).map(|i| ((i as f64) * 0.37).sin() * 0.5).collect();
        let wh: Vec<f64> = (0..16).map(|i| ((i as f64) * 0.71).cos() * 0.5).collect();
        let bias: Vec<f64> = (0..8).map(|i| (i as f64 - 4.0) * 0.1).collect();
        let xs = [[0.5, -1.0], [1.5, 0.25]];

        let (mut h, mut c) = ([0.1, -0.2], [0.3, 0.05]);
        let mut want = vec![];
        for x in &xs {
            let mut z = [0.0; 8];
            for (j, zj) in z.iter_mut().enumerate() {
                *zj = bias[j];
                for k in 0..2 {
                    *zj += x[k] * wx[k * 8 + j] + h[k] * wh[k * 8 + j];
                }
            }
            let mut nh = [0.0; 2];
            let mut nc = [0.0; 2];
            for u in 0..2 {
                let (i, f, g, o) = (sig(z[u]), sig(z[2 + u]), z[4 + u].tanh(), sig(z[6 + u]));
                nc[u] = f * c[u] + i * g;
                nh[u] = o * nc[u].tanh();
            }
            h = nh;
            c = nc;
            want.push((h, c));
        }

        let mut tape = Tape::<f64>::new();
        let p = consts(&mut tape, 2, 2, &wx, &wh, &bias);
        let mut hv = tape.constant(Tensor::from_f64(&[1, 2], &[0.1, -0.2]).unwrap());
        let mut cv = tape.constant(Tensor::from_f64(&[1, 2], &[0.3, 0.05]).unwrap());
        for (x, (wh_, wc_)) in xs.iter().zip(&want) {
            let xv = tape.constant(Tensor::from_f64(&[1, 2], x).unwrap());
            let (h2, c2) = lstm_cell(&mut tape, xv, hv, cv, &p).unwrap();
            for u in 0..2 {
                assert!((tape.value(h2).data()[u] - wh_[u]).abs() < 1e-12);
                assert!((tape.value(c2).data()[u] - wc_[u]).abs() < 1e-12);
            }
            hv = h2;
            cv = c2;
        }
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut tape = Tape::<f64>::new();
        let p = consts(&mut tape, 3, 2, &[0.0; 24], &[0.0; 16], &[0.0; 8]);
        let x = tape.constant(Tensor::zeros(&[1, 4]));
        let z = tape.constant(Tensor::zeros(&[1, 2]));
        assert!(matches!(lstm_cell(&mut tape, x, z, z, &p), Err(TensorError::Dimension { .. })));
    }

    #[test]
    fn gru_with_zero_weights_halves_state() {
        // z = σ(0) = 0.5, n = tanh(0) = 0 → h' = 0.5·h
        let mut tape = Tape::<f64>::new();
        let p = GruParams {
            w_x: tape.constant(Tensor::zeros(&[2, 6])),
            w_h: tape.constant(Tensor::zeros(&[2, 6])),
            b_x: tape.constant(Tensor::zeros(&[6])),
            b_h: tape.constant(Tensor::zeros(&[6])),
        };
        let x = tape.constant(Tensor::ones(&[1, 2]));
        let h = tape.constant(Tensor::from_f64(&[1, 2], &[0.8, -0.4]).unwrap());
        let h2 = gru_cell(&mut tape, x, h, &p).unwrap();
        assert_eq!(tape.value(h2).data(), &[0.4, -0.2]);
    }
}
