//! Central finite-difference checks of tape gradients.
//!
//! The numeric side only ever evaluates the forward pass, so it stays
//! independent of the backward rules it is checking.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diffcore::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::error::Result;

/// Denominator floor for the relative error: below this magnitude both
/// derivatives count as zero.
pub const REL_ERROR_FLOOR: f64 = 1e-7;

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    pub eps: f64,
    pub probes_per_group: usize,
    pub tolerance: f64,
    pub seed: u64,
    /// Negative control: scales every analytic gradient by this factor.
    pub corrupt_factor: Option<f64>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            probes_per_group: 8,
            tolerance: 1e-4,
            seed: 0,
            corrupt_factor: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GroupReport {
    pub name: String,
    pub probes: usize,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub groups: Vec<GroupReport>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.groups.iter().map(|g| g.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.groups.iter().all(|g| g.max_rel_error < self.tolerance)
    }
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for g in &self.groups {
            let verdict = if g.max_rel_error < self.tolerance { "ok" } else { "FAIL" };
            writeln!(
                f,
                "{:<32} probes={:<4} max_rel_err={:.3e} {verdict}",
                g.name, g.probes, g.max_rel_error
            )?;
        }
        Ok(())
    }
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs());
    if denom < REL_ERROR_FLOOR {
        return 0.0;
    }
    (analytic - numeric).abs() / denom
}

/// Evaluates the scalar loss built by `loss` against `store`.
pub fn eval_loss<F>(store: &ParamStore, loss: &F) -> Result<f64>
where
    F: for<'a> Fn(&mut Graph<'a>) -> Result<Var>,
{
    let mut g = Graph::with_params(store);
    let l = loss(&mut g)?;
    Ok(g.value(l).item())
}

/// Checks gradients of `loss` with respect to groups of parameters. Each group
/// is probed at up to `probes_per_group` randomly chosen scalar positions; a
/// group smaller than that is checked exhaustively.
pub fn check_parameters<F>(
    store: &mut ParamStore,
    groups: &[(String, Vec<ParamId>)],
    cfg: &GradCheckConfig,
    loss: F,
) -> Result<GradCheckReport>
where
    F: for<'a> Fn(&mut Graph<'a>) -> Result<Var>,
{
    let analytic: Vec<(ParamId, Tensor)> = {
        let mut g = Graph::with_params(store);
        let l = loss(&mut g)?;
        let grads = g.backward(l)?;
        store
            .ids()
            .map(|id| {
                let grad = grads
                    .param(id)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(store.value(id).shape()));
                (id, grad)
            })
            .collect()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut reports = Vec::new();
    for (name, ids) in groups {
        let mut positions: Vec<(ParamId, usize)> = ids
            .iter()
            .flat_map(|&id| (0..store.value(id).len()).map(move |i| (id, i)))
            .collect();
        positions.shuffle(&mut rng);
        positions.truncate(cfg.probes_per_group);
        let mut worst: f64 = 0.0;
        for &(id, i) in &positions {
            let original = store.value(id).data()[i];
            store.value_mut(id).data_mut()[i] = original + cfg.eps;
            let plus = eval_loss(store, &loss)?;
            store.value_mut(id).data_mut()[i] = original - cfg.eps;
            let minus = eval_loss(store, &loss)?;
            store.value_mut(id).data_mut()[i] = original;
            let numeric = (plus - minus) / (2.0 * cfg.eps);
            let mut a = analytic[id.index()].1.data()[i];
            if let Some(f) = cfg.corrupt_factor {
                a *= f;
            }
            worst = worst.max(rel_error(a, numeric));
        }
        reports.push(GroupReport {
            name: name.clone(),
            probes: positions.len(),
            max_rel_error: worst,
        });
    }
    Ok(GradCheckReport {
        groups: reports,
        tolerance: cfg.tolerance,
    })
}

/// Groups every parameter of `store` by the first `depth` dot-separated
/// segments of its name.
pub fn groups_by_prefix(store: &ParamStore, depth: usize) -> Vec<(String, Vec<ParamId>)> {
    let mut groups: Vec<(String, Vec<ParamId>)> = Vec::new();
    for (id, p) in store.iter() {
        let key = p.name.split('.').take(depth).collect::<Vec<_>>().join(".");
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, ids)) => ids.push(id),
            None => groups.push((key, vec![id])),
        }
    }
    groups
}

/// Checks one relation unit of form `form` over `n` random `k x f` objects,
/// with `k_max = n - 1`, `t = 2` and the loss `sum(out ⊙ out)`. Subsets are
/// drawn once so both sides see the same graph.
pub fn check_crn(form: crate::crn::HForm, n: usize, f: usize, k: usize, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    use crate::crn::{ConditioningContext, CrnConfig, CrnUnit, ObjectArray};
    use rand::Rng;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut store = ParamStore::new();
    let config = CrnConfig { rng_seed: cfg.seed, ..CrnConfig::full(n, form) };
    let unit = CrnUnit::new(&mut store, "crn", n, f, config, &mut rng)?;
    let mut rand = |rows: usize| Tensor::matrix(rows, f, (0..rows * f).map(|_| rng.gen_range(-1.0..1.0)).collect());
    let inputs = (0..n).map(|_| rand(k)).collect::<Result<Vec<_>>>()?;
    let (c1, c2) = (rand(1)?, rand(1)?);
    let subsets = unit.sample(&mut rng)?;
    let groups = groups_by_prefix(&store, 3);
    check_parameters(&mut store, &groups, cfg, |g| {
        let vs = inputs.iter().map(|t| g.input(t.clone())).collect();
        let arr = ObjectArray::new(g, vs)?;
        let c1 = g.input(c1.clone());
        let c2 = g.input(c2.clone());
        let ctx = ConditioningContext { c1, c2: form.is_dual().then_some(c2) };
        let out = unit.forward_with_subsets(g, &arr, &ctx, &subsets)?.stack(g)?;
        let sq = g.hadamard(out, out)?;
        Ok(g.sum(sq))
    })
}
