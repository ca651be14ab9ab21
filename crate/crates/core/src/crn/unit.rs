use rand::Rng;

use super::forms::{g_aggregate, Conditioner};
use super::sampling::{binomial, draw, sample_subsets};
use super::{ConditioningContext, CrnConfig, GForm, ObjectArray};
use crate::diffcore::{Graph, Linear, ParamId, ParamStore};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
struct Order {
    k: usize,
    projection: Option<Linear>,
    h: Conditioner,
}

/// A relation unit bound to an input length `n` and width `F`.
///
/// Every subset size owns its own `h` (and, for concatenating `g`, its own
/// projection); the `t` subsets of one size share them.
#[derive(Clone, Debug)]
pub struct CrnUnit {
    name: String,
    config: CrnConfig,
    n_objects: usize,
    width: usize,
    orders: Vec<Order>,
}

/// Result array plus the subsets drawn for each order.
#[derive(Clone, Debug)]
pub struct CrnOutput {
    pub results: ObjectArray,
    pub subsets: Vec<Vec<Vec<usize>>>,
}

impl CrnUnit {
    /// Subset sizes run for an input of `n` objects.
    ///
    /// * `n == 2`: one pass over the full pair, whatever `k_max` says.
    /// * `n == 1` or `k_max <= 1`: no-relation mode over single objects.
    /// * otherwise `2..=k_max`, which requires `k_max < n`.
    pub fn orders_for(n: usize, config: &CrnConfig) -> Result<Vec<usize>> {
        if n == 0 {
            return Err(Error::Contract("relation unit needs at least one object".into()));
        }
        if config.t == 0 || config.k_max == 0 {
            return Err(Error::Config(format!(
                "k_max and t must be positive, got k_max={}, t={}",
                config.k_max, config.t
            )));
        }
        if n == 2 {
            return Ok(vec![2]);
        }
        if n == 1 || config.k_max == 1 {
            return Ok(vec![1]);
        }
        if config.k_max >= n {
            return Err(Error::Config(format!(
                "k_max must be below the input length: k_max={}, n={n}",
                config.k_max
            )));
        }
        for k in 2..=config.k_max {
            let combinations = binomial(n, k);
            if config.t as u128 >= combinations {
                return Err(Error::Sampling {
                    n,
                    k,
                    t: config.t,
                    combinations,
                });
            }
        }
        Ok((2..=config.k_max).collect())
    }

    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        n_objects: usize,
        width: usize,
        config: CrnConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let orders = Self::orders_for(n_objects, &config)?
            .into_iter()
            .map(|k| {
                let prefix = format!("{name}.k{k}");
                let projection = (config.g_form == GForm::Concat && k > 1)
                    .then(|| Linear::new(store, &format!("{prefix}.g"), k * width, width, false, rng));
                let h = Conditioner::new(store, &format!("{prefix}.h"), width, config.h_form, rng)?;
                Ok(Order { k, projection, h })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            name: name.to_string(),
            config,
            n_objects,
            width,
            orders,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn config(&self) -> &CrnConfig {
        &self.config
    }

    pub fn n_objects(&self) -> usize {
        self.n_objects
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Length of the result array.
    pub fn output_len(&self) -> usize {
        self.orders.len()
    }

    pub fn subset_sizes(&self) -> Vec<usize> {
        self.orders.iter().map(|o| o.k).collect()
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.orders
            .iter()
            .flat_map(|o| o.projection.iter().map(|p| p.weight).chain(o.h.params()))
            .collect()
    }

    /// Draws the subsets of every order.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<Vec<Vec<usize>>>> {
        let n = self.n_objects;
        self.orders
            .iter()
            .map(|o| match o.k {
                1 => Ok((0..self.config.t).map(|_| vec![rng.gen_range(0..n)]).collect()),
                2 if n == 2 => Ok(draw(2, 2, 1, rng)),
                k => sample_subsets(n, k, self.config.t, rng),
            })
            .collect()
    }

    /// Samples subsets from `rng` and runs the unit.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        g: &mut Graph,
        input: &ObjectArray,
        ctx: &ConditioningContext,
        rng: &mut R,
    ) -> Result<CrnOutput> {
        self.check(g, input, ctx)?;
        let subsets = self.sample(rng)?;
        let results = self.forward_with_subsets(g, input, ctx, &subsets)?;
        Ok(CrnOutput { results, subsets })
    }

    /// Runs the unit over caller-provided subsets (one list per order).
    pub fn forward_with_subsets(
        &self,
        g: &mut Graph,
        input: &ObjectArray,
        ctx: &ConditioningContext,
        subsets: &[Vec<Vec<usize>>],
    ) -> Result<ObjectArray> {
        self.check(g, input, ctx)?;
        if subsets.len() != self.orders.len() {
            return Err(Error::Contract(format!(
                "expected subsets for {} orders, got {}",
                self.orders.len(),
                subsets.len()
            )));
        }
        let mut results = Vec::with_capacity(self.orders.len());
        for (order, draws) in self.orders.iter().zip(subsets) {
            if draws.is_empty() {
                return Err(Error::Contract(format!("no subsets for order {}", order.k)));
            }
            let term = order.h.context_term(g, ctx)?;
            let mut fused = Vec::with_capacity(draws.len());
            for subset in draws {
                if subset.len() != order.k {
                    return Err(Error::Contract(format!(
                        "subset {subset:?} does not have size {}",
                        order.k
                    )));
                }
                let members = subset
                    .iter()
                    .map(|&i| {
                        input.objects().get(i).copied().ok_or(Error::Index {
                            index: i,
                            len: input.len(),
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                let mut x = g_aggregate(g, &members, self.config.g_form)?;
                if let Some(p) = &order.projection {
                    x = p.forward(g, x)?;
                }
                fused.push(order.h.apply(g, x, ctx, term)?);
            }
            results.push(if fused.len() == 1 { fused[0] } else { g.mean_of(&fused)? });
        }
        ObjectArray::new(g, results)
    }

    fn check(&self, g: &Graph, input: &ObjectArray, ctx: &ConditioningContext) -> Result<()> {
        if input.len() != self.n_objects {
            return Err(Error::Contract(format!(
                "unit `{}` was built for {} objects, got {}",
                self.name,
                self.n_objects,
                input.len()
            )));
        }
        if input.cols() != self.width {
            return Err(Error::Dimension {
                op: "relation unit input",
                left: vec![input.rows(), input.cols()],
                right: vec![input.rows(), self.width],
            });
        }
        ctx.check(g, self.width, self.config.h_form)
    }
}

/// Convenience wrapper: one unit, a fresh rng seeded from the config.
pub fn crn_forward(
    g: &mut Graph,
    unit: &CrnUnit,
    input: &ObjectArray,
    ctx: &ConditioningContext,
) -> Result<CrnOutput> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(unit.config.rng_seed);
    unit.forward(g, input, ctx, &mut rng)
}

