use rand::Rng;

use super::{ConditioningContext, GForm, HForm};
use crate::diffcore::{Axis, BiLstm, Graph, Linear, ParamId, ParamStore, Var};
use crate::error::{Error, Result};

/// Applies the set function to the members of one subset.
///
/// Average pooling returns a `K x F` mean; concatenation returns `K x (k F)`.
pub fn g_aggregate(g: &mut Graph, members: &[Var], form: GForm) -> Result<Var> {
    if members.is_empty() {
        return Err(Error::Contract("g over an empty subset".into()));
    }
    if members.len() == 1 {
        return Ok(members[0]);
    }
    match form {
        GForm::AveragePool => g.mean_of(members),
        GForm::Concat => {
            let shape = g.shape(members[0]).to_vec();
            if let Some(&bad) = members.iter().find(|&&m| g.shape(m) != shape.as_slice()) {
                return Err(Error::Dimension {
                    op: "g concat",
                    left: shape,
                    right: g.shape(bad).to_vec(),
                });
            }
            g.concat_cols(members)
        }
    }
}

/// Parameters of one conditioning network `h`.
///
/// The affine forms keep `W` as row blocks (one per slot of the concatenated
/// input), which computes exactly `W [x; x⊙c; c]` but lets the context-only
/// block be evaluated once per subset size rather than once per subset.
#[derive(Clone, Debug)]
pub enum Conditioner {
    Affine {
        form: HForm,
        x: Linear,
        gated: Vec<Linear>,
        context: Vec<Linear>,
    },
    Sequential {
        form: HForm,
        lstm: BiLstm,
    },
}

impl Conditioner {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, width: usize, form: HForm, rng: &mut R) -> Result<Self> {
        let contexts = if form.is_dual() { 2 } else { 1 };
        match form {
            HForm::Additive | HForm::DualAdditive | HForm::Multiplicative | HForm::DualMultiplicative => {
                let gated = if matches!(form, HForm::Multiplicative | HForm::DualMultiplicative) {
                    (1..=contexts)
                        .map(|i| Linear::new(store, &format!("{name}.xc{i}"), width, width, false, rng))
                        .collect()
                } else {
                    Vec::new()
                };
                Ok(Conditioner::Affine {
                    form,
                    x: Linear::new(store, &format!("{name}.x"), width, width, false, rng),
                    gated,
                    context: (1..=contexts)
                        .map(|i| Linear::new(store, &format!("{name}.c{i}"), width, width, false, rng))
                        .collect(),
                })
            }
            HForm::Sequential | HForm::DualSequential => Ok(Conditioner::Sequential {
                form,
                lstm: BiLstm::new(store, &format!("{name}.lstm"), (1 + 2 * contexts) * width, width, rng)?,
            }),
        }
    }

    pub fn form(&self) -> HForm {
        match self {
            Conditioner::Affine { form, .. } | Conditioner::Sequential { form, .. } => *form,
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        match self {
            Conditioner::Affine { x, gated, context, .. } => std::iter::once(x)
                .chain(gated)
                .chain(context)
                .map(|l| l.weight)
                .collect(),
            Conditioner::Sequential { lstm, .. } => [&lstm.forward, &lstm.backward]
                .iter()
                .flat_map(|l| [l.w_ih, l.w_hh, l.bias])
                .collect(),
        }
    }

    fn contexts(ctx: &ConditioningContext, form: HForm) -> Vec<Var> {
        if form.is_dual() {
            vec![ctx.c1, ctx.c2.expect("checked by caller")]
        } else {
            vec![ctx.c1]
        }
    }

    /// The `[1, F]` sum of context-only blocks, `None` for sequential forms.
    pub fn context_term(&self, g: &mut Graph, ctx: &ConditioningContext) -> Result<Option<Var>> {
        let Conditioner::Affine { form, context, .. } = self else {
            return Ok(None);
        };
        let cs = Self::contexts(ctx, *form);
        let mut acc = context[0].forward(g, cs[0])?;
        for (lin, &c) in context.iter().zip(&cs).skip(1) {
            let term = lin.forward(g, c)?;
            acc = g.add(acc, term)?;
        }
        Ok(Some(acc))
    }

    /// `h(x, c)` for a `K x F` input, given the precomputed context term.
    pub fn apply(&self, g: &mut Graph, x: Var, ctx: &ConditioningContext, context_term: Option<Var>) -> Result<Var> {
        match self {
            Conditioner::Affine { form, x: wx, gated, .. } => {
                let mut pre = wx.forward(g, x)?;
                for (lin, c) in gated.iter().zip(Self::contexts(ctx, *form)) {
                    let xc = g.mul_row(x, c)?;
                    let term = lin.forward(g, xc)?;
                    pre = g.add(pre, term)?;
                }
                let ct = context_term.ok_or_else(|| Error::Contract("missing context term".into()))?;
                let pre = g.add_row(pre, ct)?;
                Ok(g.elu(pre))
            }
            Conditioner::Sequential { form, lstm } => {
                let k = g.value(x).rows();
                let cs = Self::contexts(ctx, *form);
                let mut slots = vec![x];
                for &c in &cs {
                    slots.push(g.mul_row(x, c)?);
                }
                for &c in &cs {
                    slots.push(tile_rows(g, c, k)?);
                }
                let s = g.concat_cols(&slots)?;
                let (hidden, _) = lstm.encode(g, s)?;
                let pooled = g.max_pool(hidden, Axis::Rows);
                tile_rows(g, pooled, k)
            }
        }
    }

    /// One-off `h(x, c)`.
    pub fn condition(&self, g: &mut Graph, x: Var, ctx: &ConditioningContext) -> Result<Var> {
        let term = self.context_term(g, ctx)?;
        self.apply(g, x, ctx, term)
    }
}

fn tile_rows(g: &mut Graph, row: Var, k: usize) -> Result<Var> {
    if k == 1 {
        return Ok(row);
    }
    g.concat_rows(&vec![row; k])
}
