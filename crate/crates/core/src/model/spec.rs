use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::data::{INDICATORS, WEATHER_INDICATORS};

/// Model variants with stable, CLI-facing names.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    /// Graph branch only.
    GcnOnly,
    /// Without the graph branch.
    NoGraph,
    /// Without weather and air quality.
    NoWa,
    /// Weather only, no air quality.
    NoA,
    /// Flows regrouped as one two-channel image per pattern.
    TwoChannel,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Full,
        Variant::GcnOnly,
        Variant::NoGraph,
        Variant::NoWa,
        Variant::NoA,
        Variant::TwoChannel,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::GcnOnly => "gcn_only",
            Variant::NoGraph => "no_graph",
            Variant::NoWa => "no_wa",
            Variant::NoA => "no_a",
            Variant::TwoChannel => "two_channel",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, ModelError> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| ModelError::Config(format!("unknown variant `{s}` (expected one of full, gcn_only, no_graph, no_wa, no_a, two_channel)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchToggles {
    pub inflow: bool,
    pub outflow: bool,
    pub graph: bool,
    pub exogenous: bool,
}

/// One input branch of the network, in fusion order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    /// Three-pattern inflow image.
    Inflow,
    /// Three-pattern outflow image.
    Outflow,
    /// Inflow and outflow of one pattern (0 real-time, 1 daily, 2 weekly).
    Pattern(usize),
    Graph,
    Exogenous,
}

impl Branch {
    pub fn key(self) -> String {
        match self {
            Branch::Inflow => "inflow".into(),
            Branch::Outflow => "outflow".into(),
            Branch::Pattern(p) => format!("pattern{p}"),
            Branch::Graph => "graph".into(),
            Branch::Exogenous => "exo".into(),
        }
    }
}

/// Architecture hyperparameters. The dense width of every branch output and
/// of the final layer equals `stations`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub variant: Variant,
    pub stations: usize,
    /// History steps per window.
    pub n: usize,
    pub branches: BranchToggles,
    pub two_channel: bool,
    /// Filters of the two residual blocks.
    pub filters: [usize; 2],
    /// Indicator rows fed to the exogenous branch.
    pub exo_rows: usize,
    /// Width of the first exogenous LSTM layer (the second has width `stations`).
    pub exo_hidden: usize,
    /// Width of the trunk attention LSTM.
    pub trunk_hidden: usize,
    pub lr: f64,
    pub seed: u64,
}

impl ModelSpec {
    /// Reference widths: filters 32/64, LSTM widths 128, learning rate 0.001.
    pub fn new(variant: Variant, stations: usize, n: usize) -> Result<Self, ModelError> {
        let all = BranchToggles {
            inflow: true,
            outflow: true,
            graph: true,
            exogenous: true,
        };
        let (branches, exo_rows, two_channel) = match variant {
            Variant::Full => (all, INDICATORS.len(), false),
            Variant::GcnOnly => (
                BranchToggles {
                    inflow: false,
                    outflow: false,
                    graph: true,
                    exogenous: false,
                },
                INDICATORS.len(),
                false,
            ),
            Variant::NoGraph => (BranchToggles { graph: false, ..all }, INDICATORS.len(), false),
            Variant::NoWa => (BranchToggles { exogenous: false, ..all }, INDICATORS.len(), false),
            Variant::NoA => (all, WEATHER_INDICATORS, false),
            Variant::TwoChannel => (all, INDICATORS.len(), true),
        };
        let spec = ModelSpec {
            variant,
            stations,
            n,
            branches,
            two_channel,
            filters: [32, 64],
            exo_rows,
            exo_hidden: 128,
            trunk_hidden: 128,
            lr: 1e-3,
            seed: 0,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let b = self.branches;
        if !(b.inflow || b.outflow || b.graph || b.exogenous) {
            return Err(ModelError::Config("at least one branch must be enabled".into()));
        }
        if self.two_channel && b.inflow != b.outflow {
            return Err(ModelError::Config("two-channel pattern branches need both inflow and outflow".into()));
        }
        let widths = [self.stations, self.n, self.filters[0], self.filters[1], self.exo_hidden, self.trunk_hidden, self.exo_rows];
        if widths.contains(&0) {
            return Err(ModelError::Config(format!("all widths must be positive: {self:?}")));
        }
        if self.exo_rows > INDICATORS.len() {
            return Err(ModelError::Config(format!("at most {} indicator rows", INDICATORS.len())));
        }
        Ok(())
    }

    /// Enabled branches in fusion order.
    pub fn active_branches(&self) -> Vec<Branch> {
        let b = self.branches;
        let mut out = Vec::new();
        if self.two_channel {
            if b.inflow && b.outflow {
                out.extend((0..3).map(Branch::Pattern));
            }
        } else {
            if b.inflow {
                out.push(Branch::Inflow);
            }
            if b.outflow {
                out.push(Branch::Outflow);
            }
        }
        if b.graph {
            out.push(Branch::Graph);
        }
        if b.exogenous {
            out.push(Branch::Exogenous);
        }
        out
    }

    /// Trainable scalars of one enabled branch, its fusion weight included.
    pub fn branch_param_count(&self, branch: Branch) -> usize {
        let fusion = self.n * self.stations;
        fusion
            + match branch {
                Branch::Inflow | Branch::Outflow => flow_branch_count(3, self.filters, self.stations),
                Branch::Pattern(_) => flow_branch_count(2, self.filters, self.stations),
                Branch::Graph => flow_branch_count(1, self.filters, self.stations),
                Branch::Exogenous => exo_branch_count(self.exo_rows, self.exo_hidden, self.stations),
            }
    }

    /// Trainable scalars of the trunk: attention LSTM and output layer.
    pub fn trunk_param_count(&self) -> usize {
        let (s, h, n) = (self.stations, self.trunk_hidden, self.n);
        lstm_count(s, h) + 2 * n * h + (h * h + h) + (n * h * s + s)
    }

    /// Total trainable scalars; equals the model's optimizer-visible count.
    pub fn param_count(&self) -> usize {
        self.active_branches().into_iter().map(|b| self.branch_param_count(b)).sum::<usize>() + self.trunk_param_count()
    }
}

/// Pre-activation residual block `c → f`: two batch norms, two 3×3
/// convolutions (only the second with bias), and a 1×1 projection with bias
/// when `c ≠ f`.
pub fn residual_block_count(c: usize, f: usize) -> usize {
    let projection = if c != f { f * c + f } else { 0 };
    2 * c + 9 * f * c + 2 * f + (9 * f * f + f) + projection
}

/// Two residual blocks then a per-step dense `f₂·s → s`.
pub fn flow_branch_count(channels: usize, filters: [usize; 2], s: usize) -> usize {
    residual_block_count(channels, filters[0]) + residual_block_count(filters[0], filters[1]) + filters[1] * s * s + s
}

/// Gates packed as `[d_in, 4h]`, `[h, 4h]`, `[4h]`.
pub fn lstm_count(d_in: usize, h: usize) -> usize {
    4 * h * (d_in + h + 1)
}

/// Per-step dense `e → s`, then LSTM `s → h`, then LSTM `h → s`.
pub fn exo_branch_count(e: usize, h: usize, s: usize) -> usize {
    (e * s + s) + lstm_count(s, h) + lstm_count(h, s)
}

/// Builds the spec for a named variant.
pub fn make_variant(name: &str, stations: usize, n: usize) -> Result<ModelSpec, ModelError> {
    ModelSpec::new(name.parse()?, stations, n)
}
