//! Trains the toy S4 configuration and reports held-out metrics plus the
//! audio-swap probe. Usage: `calibrate [config] [checkpoint]`.

use std::path::PathBuf;
use std::time::Instant;

use avseg_core::data::{Partition, Task};
use avseg_core::trainer::{audio_swap_probe, evaluate_partition, train_with, TrainConfig};

fn main() -> avseg_core::Result<()> {
    let mut args = std::env::args().skip(1);
    let mut config = match args.next() {
        Some(p) => TrainConfig::parse(&std::fs::read_to_string(p)?)?,
        None => TrainConfig::toy(Task::S4),
    };
    config.checkpoint_path = Some(PathBuf::from(
        args.next().unwrap_or("/tmp/calibrate.avsf".into()),
    ));
    let start = Instant::now();
    let out = train_with(&config, |r| {
        if r.step % 100 == 0 {
            eprintln!(
                "step {} total {:.4} l_mix {:.4} ({:.0?})",
                r.step,
                r.total,
                r.l_mix,
                start.elapsed()
            );
        }
    })?;
    for e in &out.log.evals {
        eprintln!("val step {} miou {:.4} f {:.4}", e.step, e.miou, e.fscore);
    }
    let mut wide = config.clone();
    wide.eval_clips = 100;
    let test = evaluate_partition(&out.model, &wide, Partition::Test)?;
    println!("test miou {:.4} fscore {:.4}", test.miou, test.fscore);
    let probe = audio_swap_probe(&out.model, &config, 20)?;
    println!(
        "swap iou_with_b before {:.4} after {:.4}",
        probe.mean_before(),
        probe.mean_after()
    );
    println!("elapsed {:.0?}", start.elapsed());
    Ok(())
}
