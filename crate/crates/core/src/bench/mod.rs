//! Analytic cost model for relation units and hierarchies, plus an
//! instrumented harness that counts operations and times forward passes.
//!
//! Counts are scalar floating-point operations: a multiply-add is two, an
//! average over `k` members is `k` per element. This is the unit the
//! closed-form costs are written in (an average of `k` objects "costs `k`",
//! an `F x F` map "costs `F²`" per row and slot).

use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::crn::{ConditioningContext, CrnConfig, CrnUnit, GForm, HForm, ObjectArray};
use crate::diffcore::{Graph, ParamStore, Tensor};
use crate::hcrn::{Levels, Question, VisualStream, VisualStreamConfig};
use crate::{Error, Result};

/// Leading-order cost of one unit, split by function.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CrnCost {
    pub g: f64,
    pub h: f64,
}

impl CrnCost {
    pub fn total(self) -> f64 {
        self.g + self.h
    }

    fn scaled(self, s: f64) -> Self {
        Self { g: self.g * s, h: self.h * s }
    }
}

impl std::ops::Add for CrnCost {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self { g: self.g + o.g, h: self.h + o.h }
    }
}

/// `g = (t/2) k_max (k_max - 1) K F`, `h = (4t + 2)(k_max - 1) K F²`.
///
/// `k_max < 2` means no relations are formed, so both terms are zero.
pub fn cost_crn(t: usize, k_max: usize, k: usize, f: usize) -> CrnCost {
    if k_max < 2 {
        return CrnCost::default();
    }
    let (t, km, k, f) = (t as f64, k_max as f64, k as f64, f as f64);
    CrnCost {
        g: t / 2.0 * km * (km - 1.0) * k * f,
        h: (4.0 * t + 2.0) * (km - 1.0) * k * f * f,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelCost {
    pub level: String,
    pub cost: CrnCost,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchyCost {
    /// Unit-by-unit sums, following the units the model actually builds.
    pub levels: Vec<LevelCost>,
    pub exact: CrnCost,
    /// The closed orders: `2(T+N)LF + 20LF²` for two levels and
    /// `2(T+N/P+P)LF + 30LF²` for three.
    pub order: CrnCost,
}

/// Full-policy `k_max` of the second unit of a pair over `n` inputs.
fn pair(t: usize, n: usize, k: usize, f: usize, both: bool) -> CrnCost {
    let first = cost_crn(t, n.saturating_sub(1), k, f);
    if both {
        first + cost_crn(t, n.saturating_sub(3), k, f)
    } else {
        first
    }
}

/// Analytic cost of a two- or three-level visual stream at width `f`, with
/// `t = 2` and `k_max = n - 1` throughout.
pub fn cost_hcrn(config: &VisualStreamConfig, f: usize) -> Result<HierarchyCost> {
    let (n, t) = (config.clips, config.clip_len);
    let l = (n * t) as f64;
    let ff = f as f64;
    let mut levels = vec![LevelCost {
        level: "clip".into(),
        cost: pair(2, t, 1, f, true).scaled(n as f64),
    }];
    let order = match config.levels {
        Levels::Two => {
            levels.push(LevelCost {
                level: "video".into(),
                cost: pair(2, n, t.saturating_sub(4), f, true),
            });
            CrnCost {
                g: 2.0 * (t + n) as f64 * l * ff,
                h: 20.0 * l * ff * ff,
            }
        }
        Levels::Three => {
            let [p, q] = config
                .grouping
                .ok_or_else(|| Error::Config("three levels need a [P, Q] grouping".into()))?;
            if p * q != n {
                return Err(Error::Config(format!("N = {n} is not P*Q = {p}*{q}")));
            }
            levels.push(LevelCost {
                level: "sub-video".into(),
                cost: pair(2, q, t.saturating_sub(4), f, true).scaled(p as f64),
            });
            levels.push(LevelCost {
                level: "video".into(),
                cost: pair(2, p, q.saturating_sub(4) * t.saturating_sub(4), f, p >= 5),
            });
            CrnCost {
                g: 2.0 * (t as f64 + n as f64 / p as f64 + p as f64) * l * ff,
                h: 30.0 * l * ff * ff,
            }
        }
        other => {
            return Err(Error::Config(format!(
                "the cost model covers two and three levels, got {other}"
            )))
        }
    };
    let exact = levels.iter().fold(CrnCost::default(), |acc, l| acc + l.cost);
    Ok(HierarchyCost { levels, exact, order })
}

/// Width at which the closed-order totals of two and three levels meet:
/// `2(N - N/P - P) L F = 10 L F²`.
pub fn order_crossover(n: usize, p: usize) -> f64 {
    2.0 * (n as f64 - n as f64 / p as f64 - p as f64) / 10.0
}

/// Counted operations of one unit over `k_max + 1` random `K x F` objects.
pub fn count_crn(t: usize, k_max: usize, k: usize, f: usize, form: HForm, seed: u64) -> Result<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let n = k_max + 1;
    let config = CrnConfig { k_max, t, g_form: GForm::AveragePool, h_form: form, rng_seed: seed };
    let unit = CrnUnit::new(&mut store, "bench", n, f, config, &mut rng)?;
    let mut rand = |rows: usize| {
        Tensor::matrix(rows, f, (0..rows * f).map(|_| rng.gen_range(-1.0..1.0)).collect())
    };
    let objects: Vec<Tensor> = (0..n).map(|_| rand(k)).collect::<Result<_>>()?;
    let (c1, c2) = (rand(1)?, rand(1)?);
    let mut g = Graph::with_params(&store);
    let vars = objects.into_iter().map(|x| g.input(x)).collect();
    let input = ObjectArray::new(&g, vars)?;
    let ctx = if form.is_dual() {
        ConditioningContext::dual(g.input(c1), g.input(c2))
    } else {
        ConditioningContext::single(g.input(c1))
    };
    let before = g.flops();
    unit.forward(&mut g, &input, &ctx, &mut ChaCha8Rng::seed_from_u64(seed))?;
    Ok(g.flops() - before)
}

/// One benchmarked configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub id: String,
    pub visual: VisualStreamConfig,
    pub width: usize,
}

impl BenchConfig {
    pub fn two_level(n: usize, t: usize, f: usize) -> Self {
        Self {
            id: format!("L2-N{n}-T{t}-F{f}"),
            visual: VisualStreamConfig::two_level(n, t),
            width: f,
        }
    }

    pub fn three_level(p: usize, q: usize, t: usize, f: usize) -> Self {
        Self {
            id: format!("L3-N{}-T{t}-P{p}-Q{q}-F{f}", p * q),
            visual: VisualStreamConfig::three_level(p, q, t),
            width: f,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub config: BenchConfig,
    pub analytic: HierarchyCost,
    /// Counted operations of one forward pass.
    pub macs: u64,
    pub wall_ms_median: f64,
    pub wall_ms_iqr: f64,
    pub repeats: usize,
}

/// Median and interquartile range (linear interpolation between order
/// statistics).
pub fn median_iqr(samples: &[f64]) -> (f64, f64) {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let pos = p * (s.len() - 1) as f64;
        let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
        s[lo] + (s[hi] - s[lo]) * (pos - lo as f64)
    };
    (q(0.5), q(0.75) - q(0.25))
}

struct Fixture {
    frames: Vec<Tensor>,
    motions: Tensor,
    question: Tensor,
}

fn fixture(n: usize, t: usize, f: usize, rng: &mut ChaCha8Rng) -> Fixture {
    let mut rand = |rows: usize| {
        Tensor::matrix(rows, f, (0..rows * f).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("shape")
    };
    Fixture {
        frames: (0..n * t).map(|_| rand(1)).collect(),
        motions: rand(n),
        question: rand(1),
    }
}

fn forward(stream: &VisualStream, store: &ParamStore, fx: &Fixture, n: usize, t: usize, seed: u64) -> Result<u64> {
    let mut g = Graph::with_params(store);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frames: Vec<_> = fx.frames.iter().map(|x| g.input(x.clone())).collect();
    let clips = (0..n)
        .map(|i| ObjectArray::new(&g, frames[i * t..(i + 1) * t].to_vec()))
        .collect::<Result<Vec<_>>>()?;
    let motions = g.input(fx.motions.clone());
    let q = g.input(fx.question.clone());
    let before = g.flops();
    stream.forward(&mut g, &clips, Some(motions), &Question { q, a: None }, &mut rng)?;
    Ok(g.flops() - before)
}

/// Runs `repeats` timed forward passes of the visual stream.
pub fn measure(config: &BenchConfig, repeats: usize, seed: u64) -> Result<CostReport> {
    if repeats < 3 {
        return Err(Error::Config(format!("need at least 3 repeats, got {repeats}")));
    }
    let v = &config.visual;
    let analytic = cost_hcrn(v, config.width)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let stream = VisualStream::new(&mut store, v, config.width, false, &mut rng)?;
    let fx = fixture(v.clips, v.clip_len, config.width, &mut rng);

    // one untimed pass warms caches and the allocator
    let macs = forward(&stream, &store, &fx, v.clips, v.clip_len, seed)?;
    let mut times = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let start = Instant::now();
        let m = forward(&stream, &store, &fx, v.clips, v.clip_len, seed)?;
        times.push(start.elapsed().as_secs_f64() * 1e3);
        if m != macs {
            return Err(Error::Contract(format!("operation count drifted: {m} != {macs}")));
        }
    }
    let (wall_ms_median, wall_ms_iqr) = median_iqr(&times);
    Ok(CostReport {
        config: config.clone(),
        analytic,
        macs,
        wall_ms_median,
        wall_ms_iqr,
        repeats,
    })
}

#[derive(Serialize)]
struct CsvRow<'a> {
    config_id: &'a str,
    levels: String,
    #[serde(rename = "N")]
    n: usize,
    #[serde(rename = "T")]
    t: usize,
    #[serde(rename = "P")]
    p: Option<usize>,
    #[serde(rename = "Q")]
    q: Option<usize>,
    #[serde(rename = "F")]
    f: usize,
    analytic_g: f64,
    analytic_h: f64,
    macs: u64,
    wall_ms_median: f64,
    wall_ms_iqr: f64,
}

/// Writes one CSV row per report.
pub fn write_csv<W: Write>(out: W, reports: &[CostReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in reports {
        let v = &r.config.visual;
        w.serialize(CsvRow {
            config_id: &r.config.id,
            levels: v.levels.to_string(),
            n: v.clips,
            t: v.clip_len,
            p: v.grouping.map(|[p, _]| p),
            q: v.grouping.map(|[_, q]| q),
            f: r.config.width,
            analytic_g: r.analytic.exact.g,
            analytic_h: r.analytic.exact.h,
            macs: r.macs,
            wall_ms_median: r.wall_ms_median,
            wall_ms_iqr: r.wall_ms_iqr,
        })
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    w.flush()?;
    Ok(())
}

/// One-line comparison of a shallower and a deeper report.
pub fn compare(shallow: &CostReport, deep: &CostReport) -> String {
    format!(
        "{} vs {}: ops {:.3}x, wall {:.3}x, analytic {:.3}x",
        shallow.config.id,
        deep.config.id,
        shallow.macs as f64 / deep.macs as f64,
        shallow.wall_ms_median / deep.wall_ms_median,
        shallow.analytic.exact.total() / deep.analytic.exact.total(),
    )
}
