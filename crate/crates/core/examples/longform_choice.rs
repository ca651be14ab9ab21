//! Multi-choice questions answered from subtitles: the textual stream
//! against a model that sees only the question and the candidates.
//!
//! `cargo run --release --example longform_choice -- 3000 15` matches the
//! acceptance setting.

use crnkit::data::{SyntheticTaskSpec, TaskKind};
use crnkit::hcrn::{AnswerTask, ChoiceLoss, ModelConfig, TextualStreamConfig};
use crnkit::train::{run_training, DataSource, OptimizerConfig, RunConfig};

fn config(samples: usize, epochs: usize, textual: bool) -> RunConfig {
    let spec = SyntheticTaskSpec {
        kind: TaskKind::LongformChoice,
        samples,
        clips: 1,
        clip_len: 1,
        feature_dim: 2,
        word_dim: 16,
        question_len: 3,
        subtitle_len: 24,
        ..SyntheticTaskSpec::default()
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
        optimizer: OptimizerConfig { lr: 2e-3, epochs, ..OptimizerConfig::for_task(TaskKind::LongformChoice) },
        data: DataSource::Synthetic { spec, eval_samples: 200 },
        seed: 0,
        output_dir: None,
    }
}

fn main() -> crnkit::Result<()> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<usize>().expect("numeric argument"));
    let samples = args.next().unwrap_or(300);
    let epochs = args.next().unwrap_or(3);
    for (name, textual) in [("subtitles", true), ("question only", false)] {
        let (_, history) = run_training(config(samples, epochs, textual))?;
        for m in &history {
            println!("{name:<14} epoch {:>2} loss {:.3} eval acc {:.1}%", m.epoch, m.train_loss, m.eval.accuracy * 100.0);
        }
    }
    Ok(())
}
