//! Error breakdown of a checkpoint on held-out S4 clips: recall of the
//! sounding object, coverage of each distractor, and stray background.

use avseg_core::data::{generate_clip, seed_in_partition, Partition, Task};
use avseg_core::metrics::{miou, predict_labels};
use avseg_core::trainer::{audio_swap_probe, evaluate_partition, load_model};

fn main() -> avseg_core::Result<()> {
    let path = std::env::args().nth(1).expect("checkpoint");
    let (model, config) = load_model(std::path::Path::new(&path))?;
    let synth = config.synth();
    let (mut iou, mut recall, mut distract, mut stray, mut n_d) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let n = 60;
    for i in 0..n {
        let seed = seed_in_partition(config.data_seed, Partition::Test, i);
        let clip = generate_clip(Task::S4, &synth, seed)?;
        let pred = predict_labels(&model.predict(&clip.frames, &clip.audio)?);
        iou += miou(&pred, &clip.gt, 1)?;
        let frames = clip.n_frames();
        let mut covered = vec![false; pred.data.len()];
        for k in 0..clip.instances.len() {
            let gt = clip.resound(&synth, vec![vec![k]; frames])?.gt;
            let area = gt.data.iter().filter(|&&g| g != 0).count() as f64;
            let hit = gt
                .data
                .iter()
                .zip(&pred.data)
                .filter(|(&g, &p)| g != 0 && p != 0)
                .count() as f64;
            gt.data
                .iter()
                .enumerate()
                .filter(|(_, &g)| g != 0)
                .for_each(|(j, _)| covered[j] = true);
            if k == clip.sounding[0][0] {
                recall += hit / area;
            } else {
                distract += hit / area;
                n_d += 1.0;
            }
        }
        let bg = covered.iter().filter(|&&c| !c).count() as f64;
        stray += pred
            .data
            .iter()
            .zip(&covered)
            .filter(|(&p, &c)| p != 0 && !c)
            .count() as f64
            / bg;
    }
    let n = n as f64;
    let mut wide = config.clone();
    wide.eval_clips = 100;
    for part in [Partition::Val, Partition::Test, Partition::Train] {
        let r = evaluate_partition(&model, &wide, part)?;
        println!("{part}: dataset miou {:.3} f {:.3}", r.miou, r.fscore);
    }
    println!(
        "iou {:.3} sounding recall {:.3} distractor coverage {:.3} background fp rate {:.4}",
        iou / n,
        recall / n,
        distract / n_d,
        stray / n
    );
    let swap = audio_swap_probe(&model, &config, 20)?;
    println!("swap {:.3} -> {:.3}", swap.mean_before(), swap.mean_after());
    println!(
        "before {:?}",
        swap.before
            .iter()
            .map(|v| (v * 100.0).round() / 100.0)
            .collect::<Vec<_>>()
    );
    println!(
        "after  {:?}",
        swap.after
            .iter()
            .map(|v| (v * 100.0).round() / 100.0)
            .collect::<Vec<_>>()
    );
    Ok(())
}
