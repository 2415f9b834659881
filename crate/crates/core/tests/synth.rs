use std::collections::{BTreeSet, HashMap};

use avseg_core::data::{
    audio_for, generate_clip, make_split, AudioPrototypeBank, Clip, Partition, SynthConfig, Task,
};
use proptest::prelude::*;

fn config() -> SynthConfig {
    SynthConfig::default()
}

/// 8-connected components of the nonzero cells in one label frame.
fn components(labels: &[u16], w: usize, h: usize) -> usize {
    let mut seen = vec![false; labels.len()];
    let mut count = 0;
    for start in 0..labels.len() {
        if labels[start] == 0 || seen[start] {
            continue;
        }
        count += 1;
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(i) = stack.pop() {
            let (x, y) = ((i % w) as i64, (i / w) as i64);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if labels[j] != 0 && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
    }
    count
}

fn gt_classes(clip: &Clip, t: usize) -> BTreeSet<u16> {
    clip.gt
        .frame(t)
        .iter()
        .copied()
        .filter(|&c| c != 0)
        .collect()
}

#[test]
fn generation_is_deterministic() {
    for task in [Task::S4, Task::Ms3, Task::Avss] {
        let a = generate_clip(task, &config(), 77).unwrap();
        let b = generate_clip(task, &config(), 77).unwrap();
        assert_eq!(a.frames.data(), b.frames.data());
        assert_eq!(a.audio.data(), b.audio.data());
        assert_eq!(a.gt, b.gt);
        assert_eq!(a.sounding, b.sounding);
        let c = generate_clip(task, &config(), 78).unwrap();
        assert_ne!(a.frames.data(), c.frames.data());
    }
}

#[test]
fn s4_labels_form_one_component_of_one_class() {
    for seed in 0..200 {
        let clip = generate_clip(Task::S4, &config(), seed).unwrap();
        let first = &clip.sounding[0];
        assert_eq!(first.len(), 1);
        for t in 0..clip.n_frames() {
            assert_eq!(&clip.sounding[t], first, "seed {seed}: S4 source changed");
            let frame = clip.gt.frame(t);
            assert_eq!(gt_classes(&clip, t).len(), 1, "seed {seed} frame {t}");
            assert_eq!(
                components(frame, clip.gt.width, clip.gt.height),
                1,
                "seed {seed} frame {t}"
            );
        }
    }
}

#[test]
fn foreground_fraction_is_small() {
    for task in [Task::S4, Task::Ms3] {
        let (mut fg, mut total) = (0usize, 0usize);
        for d in make_split(task, 100, 0).unwrap() {
            let clip = generate_clip(task, &config(), d.seed).unwrap();
            fg += clip.gt.data.iter().filter(|&&c| c != 0).count();
            total += clip.gt.data.len();
        }
        let frac = fg as f64 / total as f64;
        assert!(
            frac > 0.02 && frac < 0.4,
            "{task}: foreground fraction {frac}"
        );
    }
}

#[test]
fn sounding_classes_are_uniform() {
    let split = make_split(Task::S4, 500, 0).unwrap();
    let mut counts: HashMap<u16, usize> = HashMap::new();
    for d in &split {
        let clip = generate_clip(Task::S4, &config(), d.seed).unwrap();
        *counts.entry(clip.sounding_classes(0)[0]).or_default() += 1;
    }
    let expected = 500.0 / config().n_classes as f64;
    assert_eq!(counts.len(), config().n_classes);
    for (class, n) in counts {
        let dev = (n as f64 - expected).abs() / expected;
        assert!(dev <= 0.2, "class {class}: {n} clips, expected {expected}");
    }
}

#[test]
fn split_partitions_are_disjoint_70_15_15() {
    let split = make_split(Task::Ms3, 100, 40).unwrap();
    let count = |p| split.iter().filter(|d| d.partition == p).count();
    assert_eq!(
        (
            count(Partition::Train),
            count(Partition::Val),
            count(Partition::Test)
        ),
        (70, 15, 15)
    );
    let seeds: BTreeSet<u64> = split.iter().map(|d| d.seed).collect();
    assert_eq!(seeds, (40..140).collect());
}

#[test]
fn gt_matches_audio_and_a_distractor_exists() {
    let cfg = SynthConfig {
        noise_sigma: 0.0,
        ..config()
    };
    let bank = AudioPrototypeBank::new(cfg.n_classes, cfg.audio_dim, cfg.bank_seed).unwrap();
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
    for task in [Task::S4, Task::Ms3, Task::Avss] {
        for seed in 0..60 {
            let clip = generate_clip(task, &cfg, seed).unwrap();
            for t in 0..clip.n_frames() {
                let classes = clip.sounding_classes(t);
                let set: BTreeSet<u16> = classes.iter().copied().collect();
                assert_eq!(gt_classes(&clip, t), set, "{task} seed {seed} frame {t}");
                assert!(
                    clip.sounding[t].len() < clip.instances.len(),
                    "{task} seed {seed}: no distractor"
                );
                let want = audio_for(&classes, &bank, 0.0, &mut rng).unwrap();
                let got = &clip.audio.data()[t * cfg.audio_dim..(t + 1) * cfg.audio_dim];
                assert!(got.iter().zip(&want).all(|(a, b)| (a - b).abs() < 1e-12));
            }
        }
    }
}

#[test]
fn instances_stay_in_frame_and_colors_follow_class() {
    let cfg = config();
    let mut colors: HashMap<u16, [u64; 3]> = HashMap::new();
    for seed in 0..100 {
        let clip = generate_clip(Task::Ms3, &cfg, seed).unwrap();
        let classes: BTreeSet<u16> = clip.instances.iter().map(|i| i.class_id).collect();
        assert_eq!(
            classes.len(),
            clip.instances.len(),
            "duplicate class in seed {seed}"
        );
        assert!((2..=4).contains(&clip.instances.len()));
        for inst in &clip.instances {
            let key = inst.color.map(f64::to_bits);
            assert_eq!(*colors.entry(inst.class_id).or_insert(key), key);
            for t in 0..clip.n_frames() {
                // nothing just outside the frame is covered
                let c = inst.center_at(t, cfg.width, cfg.height);
                let (w, h) = (cfg.width as f64, cfg.height as f64);
                for i in 0..=4 * cfg.width {
                    let s = i as f64 / 4.0;
                    for (px, py) in [(s, -0.5), (s, h + 0.5), (-0.5, s), (w + 0.5, s)] {
                        assert!(
                            !inst.covers(c, px, py),
                            "seed {seed}: {:?} leaves the frame",
                            inst.kind
                        );
                    }
                }
            }
        }
        assert!(clip.frames.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}

#[test]
fn audio_is_injective_over_small_class_sets() {
    let bank = AudioPrototypeBank::new(6, 64, 3).unwrap();
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
    let mut sets: Vec<Vec<u16>> = Vec::new();
    for a in 1..=6u16 {
        sets.push(vec![a]);
        for b in a + 1..=6 {
            sets.push(vec![a, b]);
            for c in b + 1..=6 {
                sets.push(vec![a, b, c]);
            }
        }
    }
    let vecs: Vec<Vec<f64>> = sets
        .iter()
        .map(|s| audio_for(s, &bank, 0.0, &mut rng).unwrap())
        .collect();
    for i in 0..vecs.len() {
        for j in i + 1..vecs.len() {
            let gap: f64 = vecs[i]
                .iter()
                .zip(&vecs[j])
                .map(|(a, b)| (a - b).powi(2))
                .sum();
            assert!(gap > 1e-6, "{:?} and {:?} collide", sets[i], sets[j]);
        }
    }
}

#[test]
fn too_many_classes_for_the_audio_width_is_a_config_error() {
    let cfg = SynthConfig {
        n_classes: 8,
        audio_dim: 4,
        ..config()
    };
    assert!(matches!(
        generate_clip(Task::S4, &cfg, 0),
        Err(avseg_core::Error::Config(_))
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn any_seed_generates_a_valid_clip(seed in any::<u64>(), task in 0u32..3) {
        let task = Task::from_code(task).unwrap();
        let clip = generate_clip(task, &config(), seed).unwrap();
        prop_assert_eq!(clip.n_frames(), task.default_frames());
        prop_assert!(clip.frames.is_finite());
        for t in 0..clip.n_frames() {
            prop_assert!(!clip.sounding[t].is_empty());
            prop_assert!(clip.sounding[t].len() < clip.instances.len());
            prop_assert_eq!(gt_classes(&clip, t), clip.sounding_classes(t).into_iter().collect::<BTreeSet<_>>());
        }
    }
}
