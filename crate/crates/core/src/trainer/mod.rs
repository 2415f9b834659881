//! Seeded training, evaluation, checkpoints and the ablation driver.

mod ablation;
mod checkpoint;
mod config;

pub use ablation::{
    ablate, ablation_cells, AblationCell, AblationRow, AblationTable, ABLATION_SEEDS,
};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, load_model, save_checkpoint,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use config::{output_classes, TrainConfig};

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::data::{
    generate_clip, generate_clip_with, seed_in_partition, Clip, LabelMap, Partition, Task,
};
use crate::error::{Error, Result};
use crate::loss::total_loss;
use crate::metrics::{miou, predict_labels, MetricAccumulator, MetricReport};
use crate::model::{Bound, Model};
use crate::tensor::{AdamW, Tape, Tensor};

/// Offset between the training-clip streams of consecutive run seeds.
const SEED_STRIDE: u64 = 1 << 32;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub l_iou: f64,
    pub l_mix: f64,
    pub total: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalRecord {
    pub step: usize,
    pub miou: f64,
    pub fscore: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunLog {
    pub steps: Vec<StepRecord>,
    pub evals: Vec<EvalRecord>,
}

impl RunLog {
    pub fn steps_csv(&self) -> String {
        let mut s = String::from("step,l_iou,l_mix,total\n");
        for r in &self.steps {
            writeln!(s, "{},{},{},{}", r.step, r.l_iou, r.l_mix, r.total).expect("write to String");
        }
        s
    }

    pub fn evals_csv(&self) -> String {
        let mut s = String::from("step,miou,fscore\n");
        for r in &self.evals {
            writeln!(s, "{},{},{}", r.step, r.miou, r.fscore).expect("write to String");
        }
        s
    }

    /// Writes `steps.csv` and `eval.csv` into `dir`, creating it if needed.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("steps.csv"), self.steps_csv())?;
        fs::write(dir.join("eval.csv"), self.evals_csv())?;
        Ok(())
    }

    pub fn final_eval(&self) -> Option<&EvalRecord> {
        self.evals.last()
    }
}

pub struct TrainOutcome {
    pub model: Model,
    pub config: TrainConfig,
    pub log: RunLog,
}

/// Seed of the `index`-th training clip for a run seeded with `seed`.
pub fn train_clip_seed(config: &TrainConfig, index: u64) -> u64 {
    seed_in_partition(
        config.data_seed,
        Partition::Train,
        config.seed.wrapping_mul(SEED_STRIDE).wrapping_add(index),
    )
}

pub fn train(config: &TrainConfig) -> Result<TrainOutcome> {
    train_with(config, |_| {})
}

/// As [`train`], calling `progress` after every step.
pub fn train_with(
    config: &TrainConfig,
    mut progress: impl FnMut(&StepRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    let synth = config.synth();
    let mut model = Model::new(config.model.clone(), config.seed)?;
    let mut opt = AdamW::new(config.optimizer(), &model.params);
    let mut log = RunLog::default();

    for step in 1..=config.steps {
        let clips = (0..config.batch_size)
            .map(|b| {
                let index = ((step - 1) * config.batch_size + b) as u64;
                generate_clip(config.task, &synth, train_clip_seed(config, index))
            })
            .collect::<Result<Vec<_>>>()?;
        let (frames, audio, gt) = stack_clips(&clips)?;

        let mut tape = Tape::new();
        let bound = model.params.bind(&mut tape);
        let f = tape.constant(frames);
        let a = tape.constant(audio);
        let bundle = model.forward(&mut tape, Bound(&bound), f, a)?;
        let terms = total_loss(&mut tape, &bundle, &gt, config.model.lambda_mix)?;
        let r = terms.report(&tape);
        let record = StepRecord {
            step,
            l_iou: r.l_iou,
            l_mix: r.l_mix,
            total: r.total,
        };
        if ![r.l_iou, r.l_mix, r.total].iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                step,
                detail: format!("l_iou={} l_mix={} total={}", r.l_iou, r.l_mix, r.total),
            });
        }
        tape.backward(terms.total)?;
        model.params.accumulate_grads(&tape, &bound);
        opt.step(&mut model.params)?;
        log.steps.push(record);
        progress(&record);

        let periodic = config.eval_every > 0 && step % config.eval_every == 0;
        if periodic || step == config.steps {
            let m = evaluate_partition(&model, config, Partition::Val)?;
            log.evals.push(EvalRecord {
                step,
                miou: m.miou,
                fscore: m.fscore,
            });
        }
    }

    if let Some(path) = &config.checkpoint_path {
        save_checkpoint(&model.params, config, path)?;
    }
    if let Some(dir) = &config.log_path {
        log.write(dir)?;
    }
    Ok(TrainOutcome {
        model,
        config: config.clone(),
        log,
    })
}

/// Concatenates clips along the frame axis: frames, audio and labels.
pub fn stack_clips(clips: &[Clip]) -> Result<(Tensor, Tensor, LabelMap)> {
    let first = clips
        .first()
        .ok_or_else(|| Error::contract("cannot stack an empty batch"))?;
    let fs = first.frames.shape();
    let d = first.audio.shape()[1];
    let t: usize = clips.iter().map(Clip::n_frames).sum();
    let mut frames = Vec::with_capacity(t * fs[1] * fs[2] * fs[3]);
    let mut audio = Vec::with_capacity(t * d);
    for c in clips {
        if c.frames.shape()[1..] != fs[1..] || c.audio.shape()[1] != d {
            return Err(Error::dim("clips in a batch must share extents"));
        }
        frames.extend_from_slice(c.frames.data());
        audio.extend_from_slice(c.audio.data());
    }
    let gt = LabelMap::concat(&clips.iter().map(|c| &c.gt).collect::<Vec<_>>());
    Ok((
        Tensor::new(&[t, fs[1], fs[2], fs[3]], frames)?,
        Tensor::new(&[t, d], audio)?,
        gt,
    ))
}

pub fn accumulator_for(model: &Model) -> MetricAccumulator {
    if model.config.n_class == 1 {
        MetricAccumulator::binary()
    } else {
        MetricAccumulator::semantic(model.config.n_class)
    }
}

/// Dataset-level metrics of `model` over `clips`.
pub fn evaluate_clips(model: &Model, task: Task, clips: &[Clip]) -> Result<MetricReport> {
    let mut acc = accumulator_for(model);
    for clip in clips {
        if clip.task != task {
            return Err(Error::config(format!(
                "model was trained for {task}, clip {} belongs to {}",
                clip.seed, clip.task
            )));
        }
        let logits = model.predict(&clip.frames, &clip.audio)?;
        acc.update(&predict_labels(&logits), &clip.gt)?;
    }
    Ok(acc.report())
}

/// Scores the first `config.eval_clips` clips of `partition`.
pub fn evaluate_partition(
    model: &Model,
    config: &TrainConfig,
    partition: Partition,
) -> Result<MetricReport> {
    let synth = config.synth();
    let mut acc = accumulator_for(model);
    for i in 0..config.eval_clips as u64 {
        let clip = generate_clip(
            config.task,
            &synth,
            seed_in_partition(config.data_seed, partition, i),
        )?;
        let logits = model.predict(&clip.frames, &clip.audio)?;
        acc.update(&predict_labels(&logits), &clip.gt)?;
    }
    Ok(acc.report())
}

/// Loads a checkpoint and scores it on a synthetic split of its own task.
pub fn evaluate(checkpoint: &Path, partition: Partition) -> Result<(TrainConfig, MetricReport)> {
    let (model, config) = load_model(checkpoint)?;
    let report = evaluate_partition(&model, &config, partition)?;
    Ok((config, report))
}

/// Per-scene IoU with object B before and after the audio swap.
#[derive(Clone, Debug, PartialEq)]
pub struct SwapProbe {
    pub before: Vec<f64>,
    pub after: Vec<f64>,
}

impl SwapProbe {
    pub fn mean_before(&self) -> f64 {
        self.before.iter().sum::<f64>() / self.before.len() as f64
    }

    pub fn mean_after(&self) -> f64 {
        self.after.iter().sum::<f64>() / self.after.len() as f64
    }
}

/// Two-object held-out S4 scenes: the audio first names object A, then
/// object B; each prediction is scored against B's mask.
pub fn audio_swap_probe(model: &Model, config: &TrainConfig, scenes: usize) -> Result<SwapProbe> {
    if config.task != Task::S4 {
        return Err(Error::config("the swap probe needs an S4 model"));
    }
    let synth = config.synth();
    let frames = synth.frames_for(Task::S4);
    let mut probe = SwapProbe {
        before: Vec::with_capacity(scenes),
        after: Vec::with_capacity(scenes),
    };
    for i in 0..scenes as u64 {
        // well clear of the indices scored by `evaluate_partition`
        let seed = seed_in_partition(config.data_seed, Partition::Test, 1000 + i);
        let clip = generate_clip_with(Task::S4, &synth, seed, Some(2))?;
        let a = clip.resound(&synth, vec![vec![0]; frames])?;
        let b = clip.resound(&synth, vec![vec![1]; frames])?;
        let pa = predict_labels(&model.predict(&a.frames, &a.audio)?);
        let pb = predict_labels(&model.predict(&b.frames, &b.audio)?);
        probe.before.push(miou(&pa, &b.gt, 1)?);
        probe.after.push(miou(&pb, &b.gt, 1)?);
    }
    Ok(probe)
}

/// `task,split,miou,fscore` header plus one row.
pub fn eval_csv(task: Task, split: &str, report: &MetricReport) -> String {
    format!(
        "task,split,miou,fscore\n{task},{split},{},{}\n",
        report.miou, report.fscore
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn smoke_config() -> TrainConfig {
        let mut c = TrainConfig::micro(Task::S4);
        c.steps = 3;
        c.eval_every = 2;
        c.eval_clips = 2;
        c
    }

    #[test]
    fn short_run_logs_every_step() {
        let out = train(&smoke_config()).unwrap();
        let steps: Vec<usize> = out.log.steps.iter().map(|r| r.step).collect();
        assert_eq!(steps, vec![1, 2, 3]);
        let evals: Vec<usize> = out.log.evals.iter().map(|r| r.step).collect();
        assert_eq!(evals, vec![2, 3]);
        assert!(out
            .log
            .steps_csv()
            .starts_with("step,l_iou,l_mix,total\n1,"));
    }

    #[test]
    fn evaluation_rejects_foreign_task() {
        let c = smoke_config();
        let model = Model::new(c.model.clone(), 0).unwrap();
        let clip = generate_clip(Task::Ms3, &c.synth(), 1).unwrap();
        assert!(matches!(
            evaluate_clips(&model, Task::S4, &[clip]),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn training_seeds_stay_in_train_partition() {
        let mut c = smoke_config();
        for seed in [0, 1, 7] {
            c.seed = seed;
            for i in 0..40 {
                let s = train_clip_seed(&c, i);
                assert_eq!(crate::data::partition_of(s, c.data_seed), Partition::Train);
            }
        }
    }
}
