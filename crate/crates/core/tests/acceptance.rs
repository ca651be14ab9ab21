//! Acceptance suite. Each criterion prints one `PASS`/`FAIL` line before
//! asserting, so `cargo test --test acceptance -- --nocapture` doubles as a
//! report.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crnkit::bench::{cost_crn, count_crn, measure, BenchConfig};
use crnkit::crn::{crn_forward, ConditioningContext, CrnConfig, CrnUnit, HForm, ObjectArray};
use crnkit::data::{gen_task, Sample, SyntheticTaskSpec, TaskKind};
use crnkit::diffcore::{BiLstm, Graph, ParamStore, Tensor, Var};
use crnkit::gradcheck::{check_crn, check_parameters, groups_by_prefix, GradCheckConfig, GradCheckReport};
use crnkit::hcrn::{
    AnswerTask, AttentionReadout, ChoiceLoss, HcrnModel, KMaxPolicy, ModelConfig, Question, TextualStreamConfig,
    VisualStream, VisualStreamConfig,
};
use crnkit::train::{samples, DataSource, OptimizerConfig, RunConfig, Trainer};

fn report(id: u32, name: &str, pass: bool, detail: &str) {
    println!("criterion {id} [{name}]: {} ({detail})", if pass { "PASS" } else { "FAIL" });
}

fn rand_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn inputs(g: &mut Graph, ts: &[Tensor]) -> ObjectArray {
    let vs = ts.iter().map(|t| g.input(t.clone())).collect();
    ObjectArray::new(g, vs).unwrap()
}

#[test]
fn c1_shape_contracts() {
    let mut failures = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for n in [2, 3, 5, 8, 16] {
        let mut store = ParamStore::new();
        let unit = CrnUnit::new(&mut store, "u", n, 3, CrnConfig::full(n, HForm::Multiplicative), &mut rng).unwrap();
        let ts: Vec<_> = (0..n).map(|_| rand_tensor(&mut rng, 2, 3)).collect();
        let c = rand_tensor(&mut rng, 1, 3);
        let mut g = Graph::with_params(&store);
        let arr = inputs(&mut g, &ts);
        let cv = g.input(c);
        let out = crn_forward(&mut g, &unit, &arr, &ConditioningContext::single(cv)).unwrap();
        if out.results.len() != 1.max(n.saturating_sub(2)) {
            failures.push(format!("n={n}: {} outputs", out.results.len()));
        }
    }
    for n in 5..=16 {
        let mut store = ParamStore::new();
        let first = CrnUnit::new(&mut store, "a", n, 2, CrnConfig::full(n, HForm::Additive), &mut rng).unwrap();
        let m = first.output_len();
        let second = CrnUnit::new(&mut store, "b", m, 2, CrnConfig::full(m, HForm::Multiplicative), &mut rng).unwrap();
        let ts: Vec<_> = (0..n).map(|_| rand_tensor(&mut rng, 1, 2)).collect();
        let c = rand_tensor(&mut rng, 1, 2);
        let mut g = Graph::with_params(&store);
        let arr = inputs(&mut g, &ts);
        let ctx = ConditioningContext::single(g.input(c));
        let mid = first.forward(&mut g, &arr, &ctx, &mut rng).unwrap().results;
        let out = second.forward(&mut g, &mid, &ctx, &mut rng).unwrap().results;
        if out.len() != n - 4 {
            failures.push(format!("pair over {n}: {}", out.len()));
        }
    }
    for n in [5, 6, 8] {
        for t in [5, 7, 8] {
            let d = 2;
            let mut store = ParamStore::new();
            let stream = VisualStream::new(&mut store, &VisualStreamConfig::two_level(n, t), d, false, &mut rng).unwrap();
            let frames: Vec<_> = (0..n * t).map(|_| rand_tensor(&mut rng, 1, d)).collect();
            let motion = rand_tensor(&mut rng, n, d);
            let q = rand_tensor(&mut rng, 1, d);
            let mut g = Graph::with_params(&store);
            let clips: Vec<_> = frames.chunks(t).map(|c| inputs(&mut g, c)).collect();
            let m = g.input(motion);
            let q = g.input(q);
            let o = stream.encode(&mut g, &clips, Some(m), &Question { q, a: None }, &mut rng).unwrap();
            if o.len() * o.rows() != (n - 4) * (t - 4) {
                failures.push(format!("N={n} T={t}: H'={}", o.len() * o.rows()));
            }
        }
    }
    let pass = failures.is_empty();
    report(1, "shape contracts", pass, &if pass { "all exact".into() } else { failures.join("; ") });
    assert!(pass);
}

fn sum_sq(g: &mut Graph, x: Var) -> Var {
    let sq = g.hadamard(x, x).unwrap();
    g.sum(sq)
}

fn count_sample(n: usize, t: usize, dim: usize) -> Sample {
    let spec = SyntheticTaskSpec { samples: 1, clips: n, clip_len: t, feature_dim: dim, word_dim: dim, question_len: 2, motif_range: [0, 3], ..Default::default() };
    gen_task(&spec).unwrap().sample(0).unwrap()
}

fn longform_sample(dim: usize) -> Sample {
    let spec = SyntheticTaskSpec {
        kind: TaskKind::LongformChoice,
        samples: 1,
        clips: 5,
        clip_len: 5,
        feature_dim: dim,
        word_dim: 6,
        question_len: 2,
        choices: 3,
        subtitle_len: 12,
        ..Default::default()
    };
    gen_task(&spec).unwrap().sample(0).unwrap()
}

fn model_check(config: ModelConfig, sample: &Sample, cfg: &GradCheckConfig) -> GradCheckReport {
    let mut store = ParamStore::new();
    let model = HcrnModel::new(&mut store, config, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    let groups = model.param_groups(&store);
    check_parameters(&mut store, &groups, cfg, |g| {
        let out = model.forward(g, sample, &mut ChaCha8Rng::seed_from_u64(11))?;
        model.loss(g, out, sample.target)
    })
    .unwrap()
}

#[test]
fn c2_gradient_suite() {
    let cfg = GradCheckConfig { probes_per_group: 6, ..GradCheckConfig::default() };
    let mut worst: Vec<(String, f64)> = Vec::new();
    for form in [
        HForm::Additive,
        HForm::Multiplicative,
        HForm::Sequential,
        HForm::DualAdditive,
        HForm::DualMultiplicative,
        HForm::DualSequential,
    ] {
        worst.push((form.name().into(), check_crn(form, 5, 4, 2, &cfg).unwrap().max_rel_error()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut store = ParamStore::new();
    let readout = AttentionReadout::new(&mut store, "readout", 4, true, &mut rng);
    let (o, q, a) = (rand_tensor(&mut rng, 6, 4), rand_tensor(&mut rng, 1, 4), rand_tensor(&mut rng, 1, 4));
    let groups = groups_by_prefix(&store, 2);
    let r = check_parameters(&mut store, &groups, &cfg, |g| {
        let (o, q, a) = (g.input(o.clone()), g.input(q.clone()), g.input(a.clone()));
        let (out, _) = readout.forward(g, o, &Question { q, a: Some(a) })?;
        Ok(sum_sq(g, out))
    })
    .unwrap();
    worst.push(("attention readout".into(), r.max_rel_error()));

    let mut store = ParamStore::new();
    let lstm = BiLstm::new(&mut store, "bilstm", 3, 4, &mut rng).unwrap();
    let seq = rand_tensor(&mut rng, 4, 3);
    let groups = groups_by_prefix(&store, 2);
    let r = check_parameters(&mut store, &groups, &cfg, |g| {
        let x = g.input(seq.clone());
        let (h, last) = lstm.encode(g, x)?;
        let (a, b) = (sum_sq(g, h), sum_sq(g, last));
        g.add(a, b)
    })
    .unwrap();
    worst.push(("bilstm".into(), r.max_rel_error()));

    let d = 8;
    let visual = VisualStreamConfig::two_level(5, 5);
    let base = ModelConfig {
        width: d,
        appearance_dim: 4,
        motion_dim: 4,
        word_dim: 4,
        visual: Some(visual.clone()),
        textual: None,
        answer: AnswerTask::Count,
    };
    let count = count_sample(5, 5, 4);
    worst.push(("2-level hcrn, count decoder".into(), model_check(base.clone(), &count, &cfg).max_rel_error()));

    let mut open = count_sample(5, 5, 4);
    open.target = crnkit::data::Target::Class(1);
    let oe = ModelConfig { answer: AnswerTask::OpenEnded { classes: 3 }, ..base.clone() };
    worst.push(("open-ended decoder".into(), model_check(oe, &open, &cfg).max_rel_error()));

    let lf = longform_sample(4);
    let mc = ModelConfig {
        word_dim: 6,
        visual: Some(VisualStreamConfig::long_form(5, 5)),
        textual: Some(TextualStreamConfig { segments: 4, ..TextualStreamConfig::default() }),
        answer: AnswerTask::MultiChoice { choices: 3, loss: ChoiceLoss::Hinge },
        ..base
    };
    worst.push(("multi-choice decoder".into(), model_check(mc, &lf, &cfg).max_rel_error()));

    let max = worst.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    let failing: Vec<_> = worst.iter().filter(|(_, e)| *e >= 1e-4).map(|(n, e)| format!("{n} {e:.2e}")).collect();
    let pass = failing.is_empty();
    report(2, "gradient suite", pass, &format!("max rel err {max:.2e} over {} checks {}", worst.len(), failing.join(", ")));
    assert!(pass);
}

#[test]
fn c3_cost_model_fidelity() {
    let mut worst = 0.0f64;
    let mut lines = Vec::new();
    for f in [32, 64] {
        for k_max in [3, 7, 15] {
            let counted = count_crn(2, k_max, 1, f, HForm::Multiplicative, 0).unwrap() as f64;
            let analytic = cost_crn(2, k_max, 1, f).total();
            let rel = (counted - analytic) / analytic;
            worst = worst.max(rel.abs());
            lines.push(format!("F={f} k_max={k_max}: {rel:+.3}"));
        }
    }
    let pass = worst <= 0.2;
    report(3, "cost model fidelity", pass, &format!("max deviation {:.1}%; {}", worst * 100.0, lines.join(", ")));
    assert!(pass);
}

#[test]
fn c4_depth_saves_work() {
    let f = 2;
    let shallow = measure(&BenchConfig::two_level(24, 16, f), 9, 0).unwrap();
    let deep = measure(&BenchConfig::three_level(4, 6, 16, f), 9, 0).unwrap();
    let ops = shallow.macs as f64 / deep.macs as f64;
    let wall = shallow.wall_ms_median / deep.wall_ms_median;
    let pass = deep.macs < shallow.macs && wall >= 1.3;
    report(
        4,
        "depth saves work",
        pass,
        &format!(
            "F={f}: ops {} vs {} ({ops:.3}x), wall {:.3} vs {:.3} ms ({wall:.3}x, need >= 1.3x)",
            shallow.macs, deep.macs, shallow.wall_ms_median, deep.wall_ms_median
        ),
    );
    assert!(deep.macs < shallow.macs);
    assert!(wall >= 1.3, "wall-clock ratio {wall:.3} below 1.3");
}

fn count_config(seed: u64, relations: bool) -> RunConfig {
    let spec = SyntheticTaskSpec { samples: 2000, clips: 8, clip_len: 8, feature_dim: 16, word_dim: 16, ..Default::default() };
    let mut visual = VisualStreamConfig::two_level(8, 8);
    if !relations {
        visual.k_max = KMaxPolicy::Fixed(1);
        visual.t = 1;
    }
    RunConfig {
        task: TaskKind::Count,
        model: ModelConfig {
            width: 32,
            appearance_dim: 16,
            motion_dim: 16,
            word_dim: 16,
            visual: Some(visual),
            textual: None,
            answer: AnswerTask::Count,
        },
        optimizer: OptimizerConfig { lr: 1e-3, ..OptimizerConfig::for_task(TaskKind::Count) },
        data: DataSource::Synthetic { spec, eval_samples: 400 },
        seed,
        output_dir: None,
    }
}

/// Trains for the configured epochs and evaluates once at the end.
fn train_and_eval(config: RunConfig) -> crnkit::train::EvalReport {
    let (train, eval) = config.load_data().unwrap();
    let (train, eval) = (samples(&train).unwrap(), samples(&eval).unwrap());
    let epochs = config.optimizer.epochs;
    let mut trainer = Trainer::new(config).unwrap();
    for e in 0..epochs {
        trainer.train_epoch(&train, e).unwrap();
    }
    trainer.evaluate(&eval).unwrap()
}

#[test]
fn c5_relations_help() {
    let seeds = [0, 1, 2];
    let mean = |relations: bool| {
        seeds.iter().map(|&s| train_and_eval(count_config(s, relations)).mse.unwrap()).sum::<f64>() / seeds.len() as f64
    };
    let (with, without) = (mean(true), mean(false));
    let gain = (without - with) / without;
    let pass = gain >= 0.1;
    report(5, "relations help", pass, &format!("eval MSE {with:.3} with relations vs {without:.3} without ({:.1}% lower)", gain * 100.0));
    assert!(pass);
}

fn longform_config(textual: bool) -> RunConfig {
    let spec = SyntheticTaskSpec {
        kind: TaskKind::LongformChoice,
        samples: 3000,
        clips: 1,
        clip_len: 1,
        feature_dim: 2,
        word_dim: 16,
        question_len: 3,
        subtitle_len: 24,
        ..Default::default()
    };
    RunConfig {
        task: TaskKind::LongformChoice,
        model: ModelConfig {
            width: 32,
            appearance_dim: 2,
            motion_dim: 2,
            word_dim: 16,
            visual: None,
            textual: textual.then(TextualStreamConfig::default),
            answer: AnswerTask::MultiChoice { choices: 4, loss: ChoiceLoss::CrossEntropy },
        },
        optimizer: OptimizerConfig { lr: 2e-3, epochs: 15, ..OptimizerConfig::for_task(TaskKind::LongformChoice) },
        data: DataSource::Synthetic { spec, eval_samples: 600 },
        seed: 0,
        output_dir: None,
    }
}

#[test]
fn c6_textual_preselection_helps() {
    let full = train_and_eval(longform_config(true)).accuracy;
    let baseline = train_and_eval(longform_config(false)).accuracy;
    let pass = full >= 0.9 && (baseline - 0.25).abs() <= 0.05;
    report(6, "textual pre-selection helps", pass, &format!("textual stream {:.1}%, question-only {:.1}% (chance 25%)", full * 100.0, baseline * 100.0));
    assert!(pass);
}

fn tiny_run(seed: u64) -> Vec<u64> {
    let spec = SyntheticTaskSpec { samples: 16, clips: 5, clip_len: 5, feature_dim: 4, word_dim: 4, question_len: 2, motif_range: [0, 4], ..Default::default() };
    let config = RunConfig {
        task: TaskKind::Count,
        model: ModelConfig {
            width: 4,
            appearance_dim: 4,
            motion_dim: 4,
            word_dim: 4,
            visual: Some(VisualStreamConfig::two_level(5, 5)),
            textual: None,
            answer: AnswerTask::Count,
        },
        optimizer: OptimizerConfig { lr: 1e-3, batch: 4, epochs: 3, ..OptimizerConfig::for_task(TaskKind::Count) },
        data: DataSource::Synthetic { spec, eval_samples: 4 },
        seed,
        output_dir: None,
    };
    let (train, _) = config.load_data().unwrap();
    let train = samples(&train).unwrap();
    let mut trainer = Trainer::new(config).unwrap();
    (0..3).map(|e| trainer.train_epoch(&train, e).unwrap().to_bits()).collect()
}

#[test]
fn c7_determinism() {
    let draw = || {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let unit = CrnUnit::new(&mut store, "u", 12, 2, CrnConfig::full(12, HForm::Additive), &mut rng).unwrap();
        unit.sample(&mut rng).unwrap()
    };
    let subsets = draw() == draw();
    let losses = tiny_run(5) == tiny_run(5);
    let macs = |s| measure(&BenchConfig::three_level(2, 5, 8, 4), 3, s).unwrap().macs;
    let ops = macs(3) == macs(3);
    let pass = subsets && losses && ops;
    report(7, "determinism", pass, &format!("subsets {subsets}, loss trajectory {losses}, op counts {ops}"));
    assert!(pass);
}
