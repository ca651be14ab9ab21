//! The conditional relation unit.
//!
//! A unit maps an array of `n` objects (each a `K x F` matrix) plus one or two
//! conditioning vectors to an array of `k_max - 1` objects of the same shape.
//! For every subset size `k` in `2..=k_max` it draws `t` random `k`-subsets,
//! aggregates each subset with a set function `g`, fuses the result with the
//! context through a conditioning network `h`, and averages the `t` fused
//! tensors.

mod forms;
mod sampling;
mod unit;

use serde::{Deserialize, Serialize};

use crate::diffcore::{Graph, Var};
use crate::error::{Error, Result};

pub use forms::{g_aggregate, Conditioner};
pub use sampling::{binomial, sample_subsets};
pub use unit::{crn_forward, CrnOutput, CrnUnit};

/// Set function applied to each sampled subset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GForm {
    /// Elementwise mean of the subset members.
    AveragePool,
    /// Feature-axis concatenation followed by a per-order projection back to `F`.
    Concat,
}

/// Conditioning network `h`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HForm {
    /// `ELU(W [x; c])`
    Additive,
    /// `ELU(W [x; x⊙c; c])`
    Multiplicative,
    /// `maxpool(BiLSTM([x; x⊙c; c]))` over the element axis.
    Sequential,
    /// `ELU(W [x; c1; c2])`
    DualAdditive,
    /// `ELU(W [x; x⊙c1; x⊙c2; c1; c2])`
    DualMultiplicative,
    /// `maxpool(BiLSTM([x; x⊙c1; x⊙c2; c1; c2]))`
    DualSequential,
}

impl HForm {
    pub fn is_dual(self) -> bool {
        matches!(
            self,
            HForm::DualAdditive | HForm::DualMultiplicative | HForm::DualSequential
        )
    }

    /// The two-context variant of this form.
    pub fn dual(self) -> Self {
        match self {
            HForm::Additive | HForm::DualAdditive => HForm::DualAdditive,
            HForm::Multiplicative | HForm::DualMultiplicative => HForm::DualMultiplicative,
            HForm::Sequential | HForm::DualSequential => HForm::DualSequential,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            HForm::Additive => "additive",
            HForm::Multiplicative => "multiplicative",
            HForm::Sequential => "sequential",
            HForm::DualAdditive => "dual-additive",
            HForm::DualMultiplicative => "dual-multiplicative",
            HForm::DualSequential => "dual-sequential",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            HForm::Additive,
            HForm::Multiplicative,
            HForm::Sequential,
            HForm::DualAdditive,
            HForm::DualMultiplicative,
            HForm::DualSequential,
        ]
        .into_iter()
        .find(|f| f.name() == s || f.name().replace('-', "_") == s)
    }
}

/// Hyperparameters of one unit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrnConfig {
    /// Largest subset size. `1` selects the no-relation mode, where single
    /// objects pass through `h` unaggregated.
    pub k_max: usize,
    /// Subsets sampled per size.
    pub t: usize,
    pub g_form: GForm,
    pub h_form: HForm,
    pub rng_seed: u64,
}

impl CrnConfig {
    /// `k_max = n - 1`, `t = 2`, average-pool `g`.
    pub fn full(n: usize, h_form: HForm) -> Self {
        Self {
            k_max: n.saturating_sub(1).max(1),
            t: 2,
            g_form: GForm::AveragePool,
            h_form,
            rng_seed: 0,
        }
    }
}

/// An ordered array of equally shaped `K x F` objects living on a graph.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectArray {
    objects: Vec<Var>,
    rows: usize,
    cols: usize,
}

impl ObjectArray {
    pub fn new(g: &Graph, objects: Vec<Var>) -> Result<Self> {
        let first = *objects
            .first()
            .ok_or_else(|| Error::Contract("object array must hold at least one object".into()))?;
        let shape = |v: Var| (g.value(v).rows(), g.value(v).cols());
        let (rows, cols) = shape(first);
        if let Some(&bad) = objects.iter().find(|&&o| shape(o) != (rows, cols)) {
            return Err(Error::Dimension {
                op: "object array",
                left: vec![rows, cols],
                right: g.shape(bad).to_vec(),
            });
        }
        Ok(Self { objects, rows, cols })
    }

    /// Splits a `[n * K, F]` matrix into `n` objects of `K` rows each.
    pub fn split_rows(g: &mut Graph, stacked: Var, per_object: usize) -> Result<Self> {
        let total = g.value(stacked).rows();
        if per_object == 0 || !total.is_multiple_of(per_object) {
            return Err(Error::Dimension {
                op: "split_rows",
                left: g.shape(stacked).to_vec(),
                right: vec![per_object],
            });
        }
        let objects = (0..total / per_object)
            .map(|i| g.slice_rows(stacked, i * per_object, (i + 1) * per_object))
            .collect::<Result<Vec<_>>>()?;
        Self::new(g, objects)
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    /// Elements per object (`K`).
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Feature width (`F`).
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn objects(&self) -> &[Var] {
        &self.objects
    }

    pub fn get(&self, i: usize) -> Var {
        self.objects[i]
    }

    /// All objects stacked into one `[n * K, F]` matrix.
    pub fn stack(&self, g: &mut Graph) -> Result<Var> {
        if self.objects.len() == 1 {
            return Ok(self.objects[0]);
        }
        g.concat_rows(&self.objects)
    }
}

/// One or two `[1, F]` conditioning features.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConditioningContext {
    pub c1: Var,
    pub c2: Option<Var>,
}

impl ConditioningContext {
    pub fn single(c: Var) -> Self {
        Self { c1: c, c2: None }
    }

    pub fn dual(c1: Var, c2: Var) -> Self {
        Self { c1, c2: Some(c2) }
    }

    pub(crate) fn check(&self, g: &Graph, width: usize, form: HForm) -> Result<()> {
        for c in std::iter::once(self.c1).chain(self.c2) {
            let t = g.value(c);
            if t.rows() != 1 || t.cols() != width {
                return Err(Error::Dimension {
                    op: "conditioning context",
                    left: t.shape().to_vec(),
                    right: vec![1, width],
                });
            }
        }
        if form.is_dual() && self.c2.is_none() {
            return Err(Error::Config(format!(
                "{} conditioning needs a second context feature",
                form.name()
            )));
        }
        Ok(())
    }
}
