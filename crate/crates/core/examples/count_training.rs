//! Trains a 2-level model on the synthetic count task, once with relations
//! and once with the relation-free ablation (`k_max = 1`, `t = 1`).
//!
//! `cargo run --release --example count_training -- 2000 25` reproduces the
//! full-size comparison; the defaults finish in seconds.

use crnkit::data::{SyntheticTaskSpec, TaskKind};
use crnkit::hcrn::{AnswerTask, KMaxPolicy, ModelConfig, VisualStreamConfig};
use crnkit::train::{run_training, DataSource, OptimizerConfig, RunConfig};

fn config(samples: usize, epochs: usize, relations: bool) -> RunConfig {
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
        optimizer: OptimizerConfig { lr: 1e-3, epochs, ..OptimizerConfig::for_task(TaskKind::Count) },
        data: DataSource::Synthetic {
            spec: SyntheticTaskSpec {
                samples,
                clips: 8,
                clip_len: 8,
                feature_dim: 16,
                word_dim: 16,
                ..SyntheticTaskSpec::default()
            },
            eval_samples: 200,
        },
        seed: 0,
        output_dir: None,
    }
}

fn main() -> crnkit::Result<()> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<usize>().expect("numeric argument"));
    let samples = args.next().unwrap_or(256);
    let epochs = args.next().unwrap_or(4);
    for relations in [true, false] {
        let (_, history) = run_training(config(samples, epochs, relations))?;
        let last = history.last().expect("at least one epoch");
        println!(
            "relations={relations:<5} train loss {:.3}  eval mse {:.3} (raw {:.3})  exact {:.1}%",
            last.train_loss,
            last.eval.mse.unwrap_or(f64::NAN),
            last.eval.mse_raw.unwrap_or(f64::NAN),
            last.eval.accuracy * 100.0
        );
    }
    Ok(())
}
