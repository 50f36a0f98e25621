//! Finite-difference checks of every differentiable building block, from
//! single tape ops up to the full forward pass of a toy network.
//!
//! Each operation is probed at several random points. At every point the
//! scalar objective is a fixed random weighting of the op's outputs, so all
//! output coordinates contribute to the checked gradient.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::{Instant, SampleBatch};
use crate::model::{
    attention, fuse, trainable, AttentionParams, Ctx, DenseIds, Forecaster, LstmLayer, ModelError, ModelSpec,
    ResLstm, ResidualBlock, Variant,
};
use crate::tensor::{
    gradient_check, lstm_cell, GradCheckConfig, InitScheme, LstmParams, ParamKind, ParamStore, Tape, Tensor,
    TensorError, Var,
};

type Result<T> = std::result::Result<T, TensorError>;

/// Operations covered by [`run_suite`], in report order.
pub const OPERATIONS: [&str; 8] = [
    "conv2d",
    "batch_norm",
    "dense",
    "lstm_cell",
    "residual_block",
    "attention_lstm",
    "fuse",
    "full_forward",
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuiteConfig {
    /// Random evaluation points per operation.
    pub probes: usize,
    pub h: f64,
    pub tol: f64,
    pub seed: u64,
    /// Coordinates sampled per input tensor at each point; `None` checks all.
    pub max_coords: Option<usize>,
    /// Deliberate analytic-gradient scaling, 1.0 for an honest run.
    pub analytic_scale: f64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            probes: 10,
            h: 1e-5,
            tol: 1e-4,
            seed: 0,
            max_coords: Some(6),
            analytic_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OpReport {
    pub name: &'static str,
    /// Worst relative error over every probe.
    pub max_rel_error: f64,
    pub probes: usize,
    pub coords_checked: usize,
}

impl OpReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor::new(shape.to_vec(), data).expect("non-empty shape")
}

/// `Σ y ∘ R` with `R` drawn from a stream keyed only by `seed`, so every
/// re-evaluation uses the same weights.
fn objective(tape: &mut Tape<f64>, outs: &[Var], seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let mut total: Option<Var> = None;
    for &y in outs {
        let shape = tape.shape(y).to_vec();
        let r = tape.constant(random(&mut rng, &shape, 1.0));
        let prod = tape.mul(y, r)?;
        let s = tape.sum(prod);
        total = Some(match total {
            Some(t) => tape.add(t, s)?,
            None => s,
        });
    }
    Ok(total.expect("at least one output"))
}

fn model_err(e: ModelError) -> TensorError {
    match e {
        ModelError::Tensor(t) => t,
        other => TensorError::invalid("gradsuite", other.to_string()),
    }
}

/// Moves every trainable entry to a random point. Weight matrices and
/// kernels get variance-preserving magnitudes `U(±√(3/fan_in))`, element-wise
/// scales (batch-norm gammas, fusion and attention weights) `1 + U(±0.5)`, fusion weights
/// `(1 + U(±0.5)) / branches`,
/// and vectors `U(±0.5)`. Initial values are a poor probe point: zero biases
/// and small recurrent weights leave some gradients near round-off level.
fn randomize(store: &mut ParamStore<f64>, rng: &mut ChaCha8Rng) {
    let branches = store.entries().iter().filter(|e| e.name.starts_with("fusion.")).count().max(1) as f64;
    for e in store.entries_mut() {
        if e.kind != ParamKind::Trainable {
            continue;
        }
        let shape = e.value.shape().to_vec();
        let elementwise = e.name.ends_with("gamma") || e.name.ends_with(".scale");
        let (centre, half) = if e.name.starts_with("fusion.") {
            // averages the branches so the trunk sees unit-scale inputs
            (1.0 / branches, 0.5 / branches)
        } else if elementwise {
            (1.0, 0.5)
        } else if e.name.ends_with(".shift") || shape.len() == 1 {
            (0.0, 0.5)
        } else {
            // dense and recurrent weights are [fan_in, out]; kernels [out, fan_in…]
            let fan_in = if shape.len() == 2 { shape[0] } else { e.value.numel() / shape[0] };
            (0.0, (3.0 / fan_in as f64).sqrt())
        };
        for v in e.value.data_mut() {
            *v = centre + rng.random_range(-half..half);
        }
    }
}

/// Inputs for a store-backed check: `extra` first, then every trainable entry.
fn store_inputs(store: &ParamStore<f64>, extra: Vec<Tensor<f64>>) -> Vec<Tensor<f64>> {
    let mut inputs = extra;
    inputs.extend(
        store
            .entries()
            .iter()
            .filter(|e| e.kind == ParamKind::Trainable)
            .map(|e| e.value.clone()),
    );
    inputs
}

/// Maps checked variables back onto store order; non-trainable entries
/// become constants.
fn store_vars(tape: &mut Tape<f64>, store: &ParamStore<f64>, checked: &[Var]) -> Vec<Var> {
    let mut next = checked.iter();
    store
        .entries()
        .iter()
        .map(|e| match e.kind {
            ParamKind::Trainable => *next.next().expect("one variable per trainable entry"),
            _ => tape.constant(e.value.clone()),
        })
        .collect()
}

fn check_store<F>(
    store: &ParamStore<f64>,
    extra: Vec<Tensor<f64>>,
    gc: &GradCheckConfig,
    forward: F,
) -> Result<crate::tensor::GradCheckReport>
where
    F: Fn(&mut Ctx<'_, f64>, &[Var]) -> std::result::Result<Vec<Var>, ModelError>,
{
    let n_extra = extra.len();
    let inputs = store_inputs(store, extra);
    gradient_check(&inputs, gc, |tape, v| {
        let (ex, params) = v.split_at(n_extra);
        let vars = store_vars(tape, store, params);
        let outs = {
            let mut ctx = Ctx::new(tape, &vars, store, true);
            forward(&mut ctx, ex).map_err(model_err)?
        };
        objective(tape, &outs, gc.seed)
    })
}

fn probe(name: &str, rng: &mut ChaCha8Rng, gc: &GradCheckConfig) -> Result<crate::tensor::GradCheckReport> {
    match name {
        "conv2d" => {
            let inputs = vec![random(rng, &[2, 2, 4, 3], 1.0), random(rng, &[3, 2, 3, 3], 0.5), random(rng, &[3], 0.5)];
            gradient_check(&inputs, gc, |tape, v| {
                let y = tape.conv2d(v[0], v[1], Some(v[2]))?;
                objective(tape, &[y], gc.seed)
            })
        }
        "batch_norm" => {
            let inputs = vec![random(rng, &[3, 2, 3, 2], 1.0), random(rng, &[2], 1.5), random(rng, &[2], 0.5)];
            let mean = [0.1, -0.2];
            let var = [0.8, 1.3];
            gradient_check(&inputs, gc, |tape, v| {
                let (train, _) = tape.batch_norm(v[0], v[1], v[2])?;
                let eval = tape.batch_norm_eval(v[0], v[1], v[2], &mean, &var)?;
                objective(tape, &[train, eval], gc.seed)
            })
        }
        "dense" => {
            // a rank-3 input exercises the per-step path as well
            let inputs = vec![random(rng, &[2, 3, 4], 1.0), random(rng, &[4, 5], 0.5), random(rng, &[5], 0.5)];
            gradient_check(&inputs, gc, |tape, v| {
                let y = tape.dense(v[0], v[1], v[2])?;
                objective(tape, &[y], gc.seed)
            })
        }
        "lstm_cell" => {
            let inputs = vec![
                random(rng, &[2, 3], 1.0),
                random(rng, &[2, 4], 0.5),
                random(rng, &[2, 4], 0.5),
                random(rng, &[3, 16], 0.5),
                random(rng, &[4, 16], 0.5),
                random(rng, &[16], 0.5),
            ];
            gradient_check(&inputs, gc, |tape, v| {
                let p = LstmParams {
                    w_x: v[3],
                    w_h: v[4],
                    bias: v[5],
                };
                let (h, c) = lstm_cell(tape, v[0], v[1], v[2], &p)?;
                objective(tape, &[h, c], gc.seed)
            })
        }
        "residual_block" => {
            let mut store = ParamStore::new();
            let block = ResidualBlock::new(&mut store, rng, "block", 2, 3);
            randomize(&mut store, rng);
            let x = random(rng, &[2, 2, 4, 3], 1.0);
            check_store(&store, vec![x], gc, |ctx, ex| Ok(vec![block.forward(ctx, ex[0])?]))
        }
        "attention_lstm" => {
            let (n, d, h) = (3, 4, 5);
            let mut store = ParamStore::new();
            let lstm = LstmLayer::new(&mut store, rng, "lstm", d, h);
            let scale = trainable(&mut store, rng, "att.scale".into(), &[n, h], InitScheme::ONES);
            let shift = trainable(&mut store, rng, "att.shift".into(), &[n, h], InitScheme::ZEROS);
            let dense = DenseIds::new(&mut store, rng, "att.dense", h, h);
            randomize(&mut store, rng);
            let x = random(rng, &[2, n, d], 1.0);
            check_store(&store, vec![x], gc, |ctx, ex| {
                let seq = lstm.forward(ctx, ex[0])?;
                let p = AttentionParams {
                    scale: ctx.var(scale),
                    shift: ctx.var(shift),
                    w: ctx.var(dense.w),
                    b: ctx.var(dense.b),
                };
                let (weighted, _) = attention(ctx.tape, seq, &p)?;
                Ok(vec![weighted])
            })
        }
        "fuse" => {
            let (b, n, s) = (2, 3, 4);
            let mut inputs: Vec<Tensor<f64>> = (0..3).map(|_| random(rng, &[b, n, s], 1.0)).collect();
            inputs.extend((0..3).map(|_| random(rng, &[n, s], 1.0)));
            gradient_check(&inputs, gc, |tape, v| {
                let y = fuse(tape, &v[..3], &v[3..]).map_err(model_err)?;
                objective(tape, &[y], gc.seed)
            })
        }
        "full_forward" => {
            let (s, n, b) = (4, 3, 3);
            let mut spec = ModelSpec::new(Variant::Full, s, n).map_err(model_err)?;
            spec.filters = [2, 3];
            spec.exo_hidden = 3;
            spec.trunk_hidden = 4;
            spec.seed = rng.random();
            let mut model = ResLstm::<f64>::new(spec).map_err(model_err)?;
            randomize(model.params_mut(), rng);
            let e = model.exo_rows();
            let batch = SampleBatch {
                i1: random(rng, &[b, 3, s, n], 1.0),
                i2: random(rng, &[b, 3, s, n], 1.0),
                i3: random(rng, &[b, s, n], 1.0),
                i4: random(rng, &[b, e, n], 1.0),
                target: random(rng, &[b, s], 1.0),
                instants: vec![Instant { day: 0, slot: 0 }; b],
            };
            let target = batch.target.clone();
            let inputs = store_inputs(model.params(), Vec::new());
            let store = model.params();
            gradient_check(&inputs, gc, |tape, v| {
                let vars = store_vars(tape, store, v);
                let pred = {
                    let mut ctx = Ctx::new(tape, &vars, store, true);
                    model.predict(&mut ctx, &batch).map_err(model_err)?
                };
                let t = tape.constant(target.clone());
                tape.mse_loss(pred, t)
            })
        }
        other => Err(TensorError::invalid("gradsuite", format!("unknown operation `{other}`"))),
    }
}

/// Checks one named operation at `config.probes` random points.
pub fn run_op(name: &'static str, config: &SuiteConfig) -> Result<OpReport> {
    let mut report = OpReport {
        name,
        max_rel_error: 0.0,
        probes: config.probes,
        coords_checked: 0,
    };
    for p in 0..config.probes {
        let seed = config.seed.wrapping_mul(1_000_003).wrapping_add(p as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gc = GradCheckConfig {
            h: config.h,
            max_coords: config.max_coords,
            seed,
            analytic_scale: config.analytic_scale,
        };
        let r = probe(name, &mut rng, &gc)?;
        log::debug!("{name} probe {p}: {r:?}");
        report.coords_checked += r.coords_checked;
        if r.max_rel_error > report.max_rel_error || !r.max_rel_error.is_finite() {
            report.max_rel_error = r.max_rel_error;
        }
    }
    Ok(report)
}

pub fn run_suite(config: &SuiteConfig) -> Result<Vec<OpReport>> {
    OPERATIONS.iter().map(|name| run_op(name, config)).collect()
}
