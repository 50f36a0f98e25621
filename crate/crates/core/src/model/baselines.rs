use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{trainable, Ctx, DenseIds, LstmLayer};
use super::{check_layout, Forecaster, ModelError, Result};
use crate::data::{Instant, PreparedData, SampleBatch};
use crate::scalar::Scalar;
use crate::tensor::{gru_cell, rnn_cell, GruParams, InitScheme, ParamId, ParamStore, RnnParams, Tape, Tensor, Var};

/// Hidden width of the fully connected and recurrent baselines.
pub const BASELINE_HIDDEN: usize = 100;
/// Filters of the two convolution layers of the CNN baseline.
pub const CNN_FILTERS: [usize; 2] = [32, 64];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    HistoricalAverage,
    Bpnn,
    Rnn,
    Lstm,
    Gru,
    Cnn,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 6] = [
        BaselineKind::HistoricalAverage,
        BaselineKind::Bpnn,
        BaselineKind::Rnn,
        BaselineKind::Lstm,
        BaselineKind::Gru,
        BaselineKind::Cnn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::HistoricalAverage => "historical_average",
            BaselineKind::Bpnn => "bpnn",
            BaselineKind::Rnn => "rnn",
            BaselineKind::Lstm => "lstm",
            BaselineKind::Gru => "gru",
            BaselineKind::Cnn => "cnn",
        }
    }
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BaselineKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        BaselineKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| ModelError::Config(format!("unknown baseline `{s}`")))
    }
}

/// Predicts the mean inflow of the same slot over the training days.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoricalAverage {
    stations: usize,
    slots_per_day: usize,
    /// `stations × slots_per_day`
    means: Vec<f64>,
}

impl HistoricalAverage {
    pub fn fit(data: &PreparedData, days: Range<usize>) -> Result<Self> {
        if days.is_empty() {
            return Err(ModelError::Config("historical average needs at least one training day".into()));
        }
        let (s, spd) = (data.stations, data.slots_per_day);
        let mut means = vec![0.0; s * spd];
        for st in 0..s {
            for slot in 0..spd {
                let total: f64 = days.clone().map(|d| data.raw_inflow[st * data.columns + d * spd + slot]).sum();
                means[st * spd + slot] = total / days.len() as f64;
            }
        }
        Ok(HistoricalAverage {
            stations: s,
            slots_per_day: spd,
            means,
        })
    }

    /// Count-scale predictions, `[B·s]` in batch order.
    pub fn predict(&self, instants: &[Instant]) -> Vec<f64> {
        instants
            .iter()
            .flat_map(|i| (0..self.stations).map(move |st| self.means[st * self.slots_per_day + i.slot]))
            .collect()
    }
}

#[derive(Debug, Clone)]
enum Body {
    Bpnn { h1: DenseIds, h2: DenseIds },
    Rnn { l1: [ParamId; 3], l2: [ParamId; 3] },
    Lstm { l1: LstmLayer, l2: LstmLayer },
    Gru { l1: [ParamId; 4], l2: [ParamId; 4] },
    Cnn { c1: [ParamId; 2], c2: [ParamId; 2] },
}

/// Single network over all stations reading the real-time inflow window.
#[derive(Debug, Clone)]
pub struct BaselineNet<T> {
    kind: BaselineKind,
    stations: usize,
    n: usize,
    store: ParamStore<T>,
    body: Body,
    head: DenseIds,
}

impl<T: Scalar> BaselineNet<T> {
    pub fn new(kind: BaselineKind, stations: usize, n: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let (s, h) = (stations, BASELINE_HIDDEN);
        let rec = |store: &mut ParamStore<T>, rng: &mut ChaCha8Rng, name: &str, d: usize, gates: usize| {
            [
                trainable(store, rng, format!("{name}.w_x"), &[d, gates * h], InitScheme::RECURRENT),
                trainable(store, rng, format!("{name}.w_h"), &[h, gates * h], InitScheme::RECURRENT),
                trainable(store, rng, format!("{name}.b_x"), &[gates * h], InitScheme::ZEROS),
                trainable(store, rng, format!("{name}.b_h"), &[gates * h], InitScheme::ZEROS),
            ]
        };
        let conv = |store: &mut ParamStore<T>, rng: &mut ChaCha8Rng, name: &str, c_in: usize, c_out: usize| {
            [
                trainable(store, rng, format!("{name}.kernel"), &[c_out, c_in, 3, 3], InitScheme::FanInUniform { fan_in: 9 * c_in }),
                trainable(store, rng, format!("{name}.bias"), &[c_out], InitScheme::ZEROS),
            ]
        };
        let (body, head_in) = match kind {
            BaselineKind::HistoricalAverage => {
                return Err(ModelError::Config("historical average has no network; use HistoricalAverage".into()))
            }
            BaselineKind::Bpnn => (
                Body::Bpnn {
                    h1: DenseIds::new(&mut store, &mut rng, "bpnn.hidden1", s * n, h),
                    h2: DenseIds::new(&mut store, &mut rng, "bpnn.hidden2", h, h),
                },
                h,
            ),
            BaselineKind::Rnn => {
                let l1 = rec(&mut store, &mut rng, "rnn.layer1", s, 1);
                let l2 = rec(&mut store, &mut rng, "rnn.layer2", h, 1);
                // single bias per layer for the Elman cell
                (Body::Rnn { l1: [l1[0], l1[1], l1[2]], l2: [l2[0], l2[1], l2[2]] }, h)
            }
            BaselineKind::Lstm => (
                Body::Lstm {
                    l1: LstmLayer::new(&mut store, &mut rng, "lstm.layer1", s, h),
                    l2: LstmLayer::new(&mut store, &mut rng, "lstm.layer2", h, h),
                },
                h,
            ),
            BaselineKind::Gru => (
                Body::Gru {
                    l1: rec(&mut store, &mut rng, "gru.layer1", s, 3),
                    l2: rec(&mut store, &mut rng, "gru.layer2", h, 3),
                },
                h,
            ),
            BaselineKind::Cnn => (
                Body::Cnn {
                    c1: conv(&mut store, &mut rng, "cnn.conv1", 1, CNN_FILTERS[0]),
                    c2: conv(&mut store, &mut rng, "cnn.conv2", CNN_FILTERS[0], CNN_FILTERS[1]),
                },
                CNN_FILTERS[1] * s * n,
            ),
        };
        let head = DenseIds::new(&mut store, &mut rng, &format!("{}.output", kind.name()), head_in, s);
        Ok(BaselineNet {
            kind,
            stations,
            n,
            store,
            body,
            head,
        })
    }

    /// Rebuilds the layout and adopts stored values after checking them.
    pub fn with_params(kind: BaselineKind, stations: usize, n: usize, store: ParamStore<T>) -> Result<Self> {
        let mut net = Self::new(kind, stations, n, 0)?;
        check_layout(&net.store, &store)?;
        net.store = store;
        Ok(net)
    }

    pub fn kind(&self) -> BaselineKind {
        self.kind
    }

    pub fn stations(&self) -> usize {
        self.stations
    }

    pub fn n(&self) -> usize {
        self.n
    }
}

fn run_cells<T: Scalar>(
    tape: &mut Tape<T>,
    seq: Var,
    hidden: usize,
    mut step: impl FnMut(&mut Tape<T>, Var, Var) -> crate::tensor::Result<Var>,
) -> Result<Var> {
    let shape = tape.shape(seq).to_vec();
    let (b, n) = (shape[0], shape[1]);
    let mut h = tape.constant(Tensor::zeros(&[b, hidden]));
    let mut outs = Vec::with_capacity(n);
    for t in 0..n {
        let x = tape.select(seq, 1, t)?;
        h = step(tape, x, h)?;
        outs.push(h);
    }
    Ok(tape.stack(&outs, 1)?)
}

impl<T: Scalar> Forecaster<T> for BaselineNet<T> {
    fn params(&self) -> &ParamStore<T> {
        &self.store
    }

    fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    fn exo_rows(&self) -> usize {
        1
    }

    fn predict(&self, ctx: &mut Ctx<'_, T>, batch: &SampleBatch<T>) -> Result<Var> {
        let (b, s, n, h) = (batch.len(), self.stations, self.n, BASELINE_HIDDEN);
        let i1 = ctx.tape.constant(batch.i1.clone());
        // real-time inflow window [B, s, n]
        let window = ctx.tape.select(i1, 1, 0)?;
        let features = match &self.body {
            Body::Bpnn { h1, h2 } => {
                let x = ctx.tape.reshape(window, &[b, s * n])?;
                let x = h1.forward(ctx, x)?;
                let x = ctx.tape.relu(x);
                let x = h2.forward(ctx, x)?;
                ctx.tape.relu(x)
            }
            Body::Cnn { c1, c2 } => {
                let x = ctx.tape.reshape(window, &[b, 1, s, n])?;
                let x = ctx.tape.conv2d(x, ctx.vars[c1[0].0], Some(ctx.vars[c1[1].0]))?;
                let x = ctx.tape.relu(x);
                let x = ctx.tape.conv2d(x, ctx.vars[c2[0].0], Some(ctx.vars[c2[1].0]))?;
                let x = ctx.tape.relu(x);
                ctx.tape.reshape(x, &[b, CNN_FILTERS[1] * s * n])?
            }
            recurrent => {
                let seq = ctx.tape.permute(window, &[0, 2, 1])?;
                let out = match recurrent {
                    Body::Lstm { l1, l2 } => {
                        let y = l1.forward(ctx, seq)?;
                        l2.forward(ctx, y)?
                    }
                    Body::Rnn { l1, l2 } => {
                        let mut y = seq;
                        for l in [l1, l2] {
                            let p = RnnParams {
                                w_x: ctx.var(l[0]),
                                w_h: ctx.var(l[1]),
                                bias: ctx.var(l[2]),
                            };
                            y = run_cells(ctx.tape, y, h, |t, x, hp| rnn_cell(t, x, hp, &p))?;
                        }
                        y
                    }
                    Body::Gru { l1, l2 } => {
                        let mut y = seq;
                        for l in [l1, l2] {
                            let p = GruParams {
                                w_x: ctx.var(l[0]),
                                w_h: ctx.var(l[1]),
                                b_x: ctx.var(l[2]),
                                b_h: ctx.var(l[3]),
                            };
                            y = run_cells(ctx.tape, y, h, |t, x, hp| gru_cell(t, x, hp, &p))?;
                        }
                        y
                    }
                    _ => unreachable!("non-recurrent bodies handled above"),
                };
                ctx.tape.select(out, 1, n - 1)?
            }
        };
        self.head.forward(ctx, features)
    }
}
