use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{attention, fuse, trainable, AttentionParams, Ctx, DenseIds, ExoBranch, FlowBranch, LstmLayer};
use super::{check_layout, Branch, Forecaster, ModelSpec, Result};
use crate::data::SampleBatch;
use crate::scalar::Scalar;
use crate::tensor::{InitScheme, ParamId, ParamStore, TensorError, Var};

/// Fusion weights and the attention pre-scale start near one so every branch
/// contributes from the first step.
const NEAR_ONE: InitScheme = InitScheme::Uniform { low: 0.9, high: 1.1 };

#[derive(Debug, Clone)]
enum BranchNet {
    Flow(FlowBranch),
    Exo(ExoBranch),
}

#[derive(Debug, Clone)]
struct BranchSlot {
    branch: Branch,
    net: BranchNet,
    fusion: ParamId,
}

/// Residual image branches, graph branch and indicator branch fused by
/// learned Hadamard weights, then an attention LSTM trunk and a dense output.
#[derive(Debug, Clone)]
pub struct ResLstm<T> {
    spec: ModelSpec,
    store: ParamStore<T>,
    branches: Vec<BranchSlot>,
    trunk: LstmLayer,
    att_scale: ParamId,
    att_shift: ParamId,
    att_dense: DenseIds,
    output: DenseIds,
}

impl<T: Scalar> ResLstm<T> {
    /// Builds and initializes the network from `spec.seed`.
    pub fn new(spec: ModelSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut store = ParamStore::new();
        let (s, n) = (spec.stations, spec.n);
        let mut branches = Vec::new();
        for branch in spec.active_branches() {
            let key = branch.key();
            let net = match branch {
                Branch::Inflow | Branch::Outflow => BranchNet::Flow(FlowBranch::new(&mut store, &mut rng, &key, 3, spec.filters, s)),
                Branch::Pattern(_) => BranchNet::Flow(FlowBranch::new(&mut store, &mut rng, &key, 2, spec.filters, s)),
                Branch::Graph => BranchNet::Flow(FlowBranch::new(&mut store, &mut rng, &key, 1, spec.filters, s)),
                Branch::Exogenous => {
                    BranchNet::Exo(ExoBranch::new(&mut store, &mut rng, &key, spec.exo_rows, spec.exo_hidden, s))
                }
            };
            let fusion = trainable(&mut store, &mut rng, format!("fusion.{key}"), &[n, s], NEAR_ONE);
            branches.push(BranchSlot { branch, net, fusion });
        }
        let h = spec.trunk_hidden;
        let trunk = LstmLayer::new(&mut store, &mut rng, "trunk.lstm", s, h);
        let att_scale = trainable(&mut store, &mut rng, "trunk.attention.scale".into(), &[n, h], NEAR_ONE);
        let att_shift = trainable(&mut store, &mut rng, "trunk.attention.shift".into(), &[n, h], InitScheme::ZEROS);
        let att_dense = DenseIds::new(&mut store, &mut rng, "trunk.attention.dense", h, h);
        let output = DenseIds::new(&mut store, &mut rng, "trunk.output", n * h, s);
        Ok(ResLstm {
            spec,
            store,
            branches,
            trunk,
            att_scale,
            att_shift,
            att_dense,
            output,
        })
    }

    /// Rebuilds the layout for `spec` and adopts stored values, checking that
    /// names and shapes agree.
    pub fn with_params(spec: ModelSpec, store: ParamStore<T>) -> Result<Self> {
        let mut model = Self::new(spec)?;
        check_layout(&model.store, &store)?;
        model.store = store;
        Ok(model)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    /// Fusion weight of `branch`, if enabled.
    pub fn fusion_weight(&self, branch: Branch) -> Option<ParamId> {
        self.branches.iter().find(|b| b.branch == branch).map(|b| b.fusion)
    }

    fn branch_input(ctx: &mut Ctx<'_, T>, branch: Branch, batch: &SampleBatch<T>) -> Result<Var> {
        let tape = &mut *ctx.tape;
        Ok(match branch {
            Branch::Inflow => tape.constant(batch.i1.clone()),
            Branch::Outflow => tape.constant(batch.i2.clone()),
            Branch::Pattern(p) => {
                let i1 = tape.constant(batch.i1.clone());
                let i2 = tape.constant(batch.i2.clone());
                let a = tape.select(i1, 1, p)?;
                let b = tape.select(i2, 1, p)?;
                tape.stack(&[a, b], 1)?
            }
            Branch::Graph => {
                let s = batch.i3.shape();
                let image = batch.i3.clone().reshape(&[s[0], 1, s[1], s[2]])?;
                tape.constant(image)
            }
            Branch::Exogenous => tape.constant(batch.i4.clone()),
        })
    }

    /// Fused branch sequence `[B, n, s]`.
    pub fn fused(&self, ctx: &mut Ctx<'_, T>, batch: &SampleBatch<T>) -> Result<Var> {
        let (b, s, n) = (batch.len(), self.spec.stations, self.spec.n);
        if batch.i3.shape() != [b, s, n] {
            return Err(TensorError::dim("reslstm input", batch.i3.shape(), &[b, s, n]).into());
        }
        let mut outs = Vec::with_capacity(self.branches.len());
        let mut weights = Vec::with_capacity(self.branches.len());
        for slot in &self.branches {
            let x = Self::branch_input(ctx, slot.branch, batch)?;
            let o = match &slot.net {
                BranchNet::Flow(f) => f.forward(ctx, x)?,
                BranchNet::Exo(e) => e.forward(ctx, x)?,
            };
            outs.push(o);
            weights.push(ctx.var(slot.fusion));
        }
        fuse(ctx.tape, &outs, &weights)
    }
}

impl<T: Scalar> Forecaster<T> for ResLstm<T> {
    fn params(&self) -> &ParamStore<T> {
        &self.store
    }

    fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    fn exo_rows(&self) -> usize {
        self.spec.exo_rows
    }

    fn predict(&self, ctx: &mut Ctx<'_, T>, batch: &SampleBatch<T>) -> Result<Var> {
        let fused = self.fused(ctx, batch)?;
        let seq = self.trunk.forward(ctx, fused)?;
        let p = AttentionParams {
            scale: ctx.var(self.att_scale),
            shift: ctx.var(self.att_shift),
            w: ctx.var(self.att_dense.w),
            b: ctx.var(self.att_dense.b),
        };
        let (weighted, _) = attention(ctx.tape, seq, &p)?;
        let flat = ctx.tape.reshape(weighted, &[batch.len(), self.spec.n * self.spec.trunk_hidden])?;
        self.output.forward(ctx, flat)
    }
}
