use rand::Rng;

use super::Result;
use crate::scalar::Scalar;
use crate::tensor::{
    lstm_cell, BatchNormStats, InitScheme, LstmParams, ParamId, ParamKind, ParamStore, Tape, Tensor, TensorError, Var,
};

/// Running-statistic update produced by a training-mode batch norm.
#[derive(Debug, Clone)]
pub struct BnUpdate<T> {
    pub mean: ParamId,
    pub var: ParamId,
    pub stats: BatchNormStats<T>,
}

impl<T: Scalar> BnUpdate<T> {
    pub fn apply(&self, store: &mut ParamStore<T>) {
        let mut mean = store.value(self.mean).data().to_vec();
        let mut var = store.value(self.var).data().to_vec();
        self.stats.update_running(&mut mean, &mut var);
        store.value_mut(self.mean).data_mut().copy_from_slice(&mean);
        store.value_mut(self.var).data_mut().copy_from_slice(&var);
    }
}

/// Places every stored tensor on the tape; trainable entries require gradients.
pub fn bind<T: Scalar>(tape: &mut Tape<T>, store: &ParamStore<T>) -> Vec<Var> {
    store
        .entries()
        .iter()
        .map(|e| tape.leaf(e.value.clone(), e.kind == ParamKind::Trainable))
        .collect()
}

/// One forward pass: the tape, bound parameters and collected side effects.
pub struct Ctx<'a, T: Scalar> {
    pub tape: &'a mut Tape<T>,
    pub vars: &'a [Var],
    pub store: &'a ParamStore<T>,
    pub train: bool,
    pub bn_updates: Vec<BnUpdate<T>>,
}

impl<'a, T: Scalar> Ctx<'a, T> {
    pub fn new(tape: &'a mut Tape<T>, vars: &'a [Var], store: &'a ParamStore<T>, train: bool) -> Self {
        Ctx {
            tape,
            vars,
            store,
            train,
            bn_updates: Vec::new(),
        }
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }
}

pub(crate) fn trainable<T: Scalar, R: Rng + ?Sized>(
    store: &mut ParamStore<T>,
    rng: &mut R,
    name: String,
    shape: &[usize],
    init: InitScheme,
) -> ParamId {
    store.add(name, shape, ParamKind::Trainable, init, rng)
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct BnIds {
    gamma: ParamId,
    beta: ParamId,
    mean: ParamId,
    var: ParamId,
}

impl BnIds {
    fn new<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, rng: &mut R, name: &str, c: usize) -> Self {
        BnIds {
            gamma: trainable(store, rng, format!("{name}.gamma"), &[c], InitScheme::ONES),
            beta: trainable(store, rng, format!("{name}.beta"), &[c], InitScheme::ZEROS),
            mean: store.add(format!("{name}.running_mean"), &[c], ParamKind::Buffer, InitScheme::ZEROS, rng),
            var: store.add(format!("{name}.running_var"), &[c], ParamKind::Buffer, InitScheme::ONES, rng),
        }
    }

    fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let (g, b) = (ctx.var(self.gamma), ctx.var(self.beta));
        if ctx.train {
            let (y, stats) = ctx.tape.batch_norm(x, g, b)?;
            ctx.bn_updates.push(BnUpdate {
                mean: self.mean,
                var: self.var,
                stats,
            });
            Ok(y)
        } else {
            let store = ctx.store;
            Ok(ctx.tape.batch_norm_eval(x, g, b, store.value(self.mean).data(), store.value(self.var).data())?)
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvIds {
    pub kernel: ParamId,
    pub bias: Option<ParamId>,
}

impl ConvIds {
    fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        bias: bool,
    ) -> Self {
        ConvIds {
            kernel: trainable(
                store,
                rng,
                format!("{name}.kernel"),
                &[c_out, c_in, k, k],
                InitScheme::FanInUniform { fan_in: c_in * k * k },
            ),
            bias: bias.then(|| trainable(store, rng, format!("{name}.bias"), &[c_out], InitScheme::ZEROS)),
        }
    }

    fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let (k, b) = (ctx.var(self.kernel), self.bias.map(|b| ctx.var(b)));
        Ok(ctx.tape.conv2d(x, k, b)?)
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct DenseIds {
    pub w: ParamId,
    pub b: ParamId,
}

impl DenseIds {
    pub(crate) fn new<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, rng: &mut R, name: &str, n_in: usize, n_out: usize) -> Self {
        DenseIds {
            w: trainable(store, rng, format!("{name}.w"), &[n_in, n_out], InitScheme::FanInUniform { fan_in: n_in }),
            b: trainable(store, rng, format!("{name}.b"), &[n_out], InitScheme::ZEROS),
        }
    }

    pub(crate) fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let (w, b) = (ctx.var(self.w), ctx.var(self.b));
        Ok(ctx.tape.dense(x, w, b)?)
    }
}

/// Pre-activation residual block: `x + F(x)` with
/// `F = Conv∘ReLU∘BN∘Conv∘ReLU∘BN`, the shortcut projected by a 1×1
/// convolution when the channel count changes. The first convolution has no
/// bias: the batch norm after it would cancel any per-channel shift.
#[derive(Debug, Clone)]
pub struct ResidualBlock {
    pub c_in: usize,
    pub filters: usize,
    bn1: BnIds,
    conv1: ConvIds,
    bn2: BnIds,
    conv2: ConvIds,
    shortcut: Option<ConvIds>,
}

impl ResidualBlock {
    pub fn new<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, rng: &mut R, name: &str, c_in: usize, filters: usize) -> Self {
        ResidualBlock {
            c_in,
            filters,
            bn1: BnIds::new(store, rng, &format!("{name}.bn1"), c_in),
            conv1: ConvIds::new(store, rng, &format!("{name}.conv1"), c_in, filters, 3, false),
            bn2: BnIds::new(store, rng, &format!("{name}.bn2"), filters),
            conv2: ConvIds::new(store, rng, &format!("{name}.conv2"), filters, filters, 3, true),
            shortcut: (c_in != filters).then(|| ConvIds::new(store, rng, &format!("{name}.shortcut"), c_in, filters, 1, true)),
        }
    }

    /// Kernels and biases of the residual path (not the shortcut).
    pub fn residual_conv_params(&self) -> Vec<ParamId> {
        [Some(self.conv1.kernel), self.conv1.bias, Some(self.conv2.kernel), self.conv2.bias]
            .into_iter()
            .flatten()
            .collect()
    }

    /// `x: [B, c_in, H, W] → [B, filters, H, W]`
    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let y = self.bn1.forward(ctx, x)?;
        let y = ctx.tape.relu(y);
        let y = self.conv1.forward(ctx, y)?;
        let y = self.bn2.forward(ctx, y)?;
        let y = ctx.tape.relu(y);
        let y = self.conv2.forward(ctx, y)?;
        let skip = match &self.shortcut {
            Some(p) => p.forward(ctx, x)?,
            None => x,
        };
        Ok(ctx.tape.add(y, skip)?)
    }
}

/// Residual image branch: two blocks, then a dense map of each time column's
/// `filters · s` features to `s` outputs, giving an `n`-step sequence.
#[derive(Debug, Clone)]
pub struct FlowBranch {
    pub channels: usize,
    rb1: ResidualBlock,
    rb2: ResidualBlock,
    dense: DenseIds,
}

impl FlowBranch {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        channels: usize,
        filters: [usize; 2],
        stations: usize,
    ) -> Self {
        FlowBranch {
            channels,
            rb1: ResidualBlock::new(store, rng, &format!("{name}.rb1"), channels, filters[0]),
            rb2: ResidualBlock::new(store, rng, &format!("{name}.rb2"), filters[0], filters[1]),
            dense: DenseIds::new(store, rng, &format!("{name}.dense"), filters[1] * stations, stations),
        }
    }

    /// `image: [B, C, s, n] → [B, n, s]`
    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, image: Var) -> Result<Var> {
        let shape = ctx.tape.shape(image).to_vec();
        if shape.len() != 4 || shape[1] != self.channels {
            return Err(TensorError::dim("flow branch", &shape, &[self.channels]).into());
        }
        let (b, s, n) = (shape[0], shape[2], shape[3]);
        let y = self.rb1.forward(ctx, image)?;
        let y = self.rb2.forward(ctx, y)?;
        let f = self.rb2.filters;
        let y = ctx.tape.permute(y, &[0, 3, 1, 2])?;
        let y = ctx.tape.reshape(y, &[b, n, f * s])?;
        self.dense.forward(ctx, y)
    }
}

/// Stacked LSTM layer unrolled over a sequence.
#[derive(Debug, Clone, Copy)]
pub struct LstmLayer {
    pub hidden: usize,
    w_x: ParamId,
    w_h: ParamId,
    bias: ParamId,
}

impl LstmLayer {
    pub fn new<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, rng: &mut R, name: &str, d_in: usize, hidden: usize) -> Self {
        LstmLayer {
            hidden,
            w_x: trainable(store, rng, format!("{name}.w_x"), &[d_in, 4 * hidden], InitScheme::RECURRENT),
            w_h: trainable(store, rng, format!("{name}.w_h"), &[hidden, 4 * hidden], InitScheme::RECURRENT),
            bias: trainable(store, rng, format!("{name}.bias"), &[4 * hidden], InitScheme::ZEROS),
        }
    }

    pub fn params<T: Scalar>(&self, ctx: &Ctx<'_, T>) -> LstmParams {
        LstmParams {
            w_x: ctx.var(self.w_x),
            w_h: ctx.var(self.w_h),
            bias: ctx.var(self.bias),
        }
    }

    /// `seq: [B, n, d_in] → [B, n, hidden]`, zero initial state.
    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, seq: Var) -> Result<Var> {
        let p = self.params(ctx);
        run_lstm(ctx.tape, seq, self.hidden, &p)
    }
}

/// Unrolls an LSTM over axis 1 of `seq: [B, n, d_in]` from a zero state and
/// returns every hidden state, `[B, n, hidden]`.
pub fn run_lstm<T: Scalar>(tape: &mut Tape<T>, seq: Var, hidden: usize, p: &LstmParams) -> Result<Var> {
    let shape = tape.shape(seq).to_vec();
    if shape.len() != 3 {
        return Err(TensorError::dim("lstm sequence", &shape, &[hidden]).into());
    }
    let (b, n) = (shape[0], shape[1]);
    let mut h = tape.constant(Tensor::zeros(&[b, hidden]));
    let mut c = h;
    let mut outs = Vec::with_capacity(n);
    for t in 0..n {
        let x = tape.select(seq, 1, t)?;
        let (h2, c2) = lstm_cell(tape, x, h, c, p)?;
        outs.push(h2);
        h = h2;
        c = c2;
    }
    Ok(tape.stack(&outs, 1)?)
}

/// Weather and air-quality branch: per-step dense re-weighting of the
/// indicators to width `s`, then LSTM `s → h` and LSTM `h → s`.
#[derive(Debug, Clone)]
pub struct ExoBranch {
    pub rows: usize,
    dense: DenseIds,
    lstm1: LstmLayer,
    lstm2: LstmLayer,
}

impl ExoBranch {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        rows: usize,
        hidden: usize,
        stations: usize,
    ) -> Self {
        ExoBranch {
            rows,
            dense: DenseIds::new(store, rng, &format!("{name}.dense"), rows, stations),
            lstm1: LstmLayer::new(store, rng, &format!("{name}.lstm1"), stations, hidden),
            lstm2: LstmLayer::new(store, rng, &format!("{name}.lstm2"), hidden, stations),
        }
    }

    /// `indicators: [B, e, n] → [B, n, s]`
    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, indicators: Var) -> Result<Var> {
        let shape = ctx.tape.shape(indicators).to_vec();
        if shape.len() != 3 || shape[1] != self.rows {
            return Err(TensorError::dim("exogenous branch", &shape, &[self.rows]).into());
        }
        let x = ctx.tape.permute(indicators, &[0, 2, 1])?;
        let x = self.dense.forward(ctx, x)?;
        let x = self.lstm1.forward(ctx, x)?;
        self.lstm2.forward(ctx, x)
    }
}

/// `Σ Wᵢ ∘ Oᵢ` with each `Wᵢ: [n, s]` broadcast over the batch of `Oᵢ: [B, n, s]`.
pub fn fuse<T: Scalar>(tape: &mut Tape<T>, outputs: &[Var], weights: &[Var]) -> Result<Var> {
    if outputs.is_empty() || outputs.len() != weights.len() {
        return Err(TensorError::invalid("fuse", "need one weight per branch output and at least one branch").into());
    }
    let mut acc = tape.mul_broadcast(outputs[0], weights[0])?;
    for (&o, &w) in outputs.iter().zip(weights).skip(1) {
        let term = tape.mul_broadcast(o, w)?;
        acc = tape.add(acc, term)?;
    }
    Ok(acc)
}

/// Attention re-weighting variables: element-wise pre-scale and shift, both
/// `[n, h]`, then a per-step dense `h → h` with sigmoid.
#[derive(Debug, Clone, Copy)]
pub struct AttentionParams {
    pub scale: Var,
    pub shift: Var,
    pub w: Var,
    pub b: Var,
}

/// `A = σ(dense(W ∘ Out + b))`, returns `(A ∘ Out, A)` for `out: [B, n, h]`.
pub fn attention<T: Scalar>(tape: &mut Tape<T>, out: Var, p: &AttentionParams) -> Result<(Var, Var)> {
    let pre = tape.mul_broadcast(out, p.scale)?;
    let pre = tape.add_broadcast(pre, p.shift)?;
    let z = tape.dense(pre, p.w, p.b)?;
    let a = tape.sigmoid(z);
    let weighted = tape.mul(a, out)?;
    Ok((weighted, a))
}
