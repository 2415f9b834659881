use avseg_core::data::{generate_clip, LabelMap, Task};
use avseg_core::loss::{dice_loss, total_loss};
use avseg_core::metrics::MetricAccumulator;
use avseg_core::model::{Bound, MixerVariant, Model};
use avseg_core::tensor::{Tape, Tensor};
use avseg_core::trainer::TrainConfig;
use proptest::collection::vec;
use proptest::prelude::*;

fn labels(frames: usize, h: usize, w: usize, data: Vec<u16>) -> LabelMap {
    LabelMap {
        frames,
        height: h,
        width: w,
        data,
    }
}

/// Two label maps of the same random extent, classes below `n`.
fn label_pair(n: u16) -> impl Strategy<Value = (LabelMap, LabelMap)> {
    (1usize..3, 1usize..7, 1usize..7).prop_flat_map(move |(t, h, w)| {
        let len = t * h * w;
        (vec(0..n, len), vec(0..n, len))
            .prop_map(move |(a, b)| (labels(t, h, w, a), labels(t, h, w, b)))
    })
}

fn accumulate(pairs: &[(&LabelMap, &LabelMap)], n_class: usize) -> MetricAccumulator {
    let mut acc = if n_class <= 1 {
        MetricAccumulator::binary()
    } else {
        MetricAccumulator::semantic(n_class)
    };
    for (p, g) in pairs {
        acc.update(p, g).unwrap();
    }
    acc
}

fn permute(m: &LabelMap, perm: &[usize]) -> LabelMap {
    labels(
        m.frames,
        m.height,
        m.width,
        perm.iter().map(|&i| m.data[i]).collect(),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn metrics_ignore_a_shared_pixel_permutation(
        (pred, gt) in label_pair(4),
        key in vec(any::<u32>(), 36 * 2),
    ) {
        let mut perm: Vec<usize> = (0..pred.data.len()).collect();
        perm.sort_by_key(|&i| key[i]);
        for n_class in [1, 4] {
            let a = accumulate(&[(&pred, &gt)], n_class).report();
            let b = accumulate(&[(&permute(&pred, &perm), &permute(&gt, &perm))], n_class).report();
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn binary_miou_is_symmetric((pred, gt) in label_pair(2)) {
        let a = accumulate(&[(&pred, &gt)], 1).report().miou;
        let b = accumulate(&[(&gt, &pred)], 1).report().miou;
        prop_assert_eq!(a, b);
    }

    #[test]
    fn merged_halves_equal_the_whole(
        (p1, g1) in label_pair(3),
        (p2, g2) in label_pair(3),
        (p3, g3) in label_pair(3),
    ) {
        for n_class in [1, 3] {
            let whole = accumulate(&[(&p1, &g1), (&p2, &g2), (&p3, &g3)], n_class);
            let mut left = accumulate(&[(&p1, &g1)], n_class);
            let mut right = accumulate(&[(&p2, &g2)], n_class);
            right.merge(&accumulate(&[(&p3, &g3)], n_class));
            left.merge(&right);
            prop_assert_eq!(&left, &whole);
            prop_assert_eq!(left.report(), whole.report());
        }
    }

    #[test]
    fn reshape_round_trips(dims in vec(1usize..5, 1..5), seed in any::<u64>()) {
        let n: usize = dims.iter().product();
        let x = Tensor::from_fn(&dims, |i| (i as f64 + seed as f64 % 7.0).sin());
        let mut tape = Tape::new();
        let v = tape.constant(x.clone());
        let flat = tape.reshape(v, &[n]).unwrap();
        let back = tape.reshape(flat, &dims).unwrap();
        prop_assert_eq!(tape.value(back), &x);
    }

    #[test]
    fn softmax_rows_sum_to_one(values in vec(-1e3f64..1e3, 1..40), cols in 1usize..6) {
        let rows = values.len().div_ceil(cols);
        let mut data = values.clone();
        data.resize(rows * cols, 0.0);
        let mut tape = Tape::new();
        let v = tape.constant(Tensor::new(&[rows, cols], data).unwrap());
        let s = tape.softmax(v, 1).unwrap();
        for row in tape.value(s).data().chunks(cols) {
            prop_assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn dice_stays_in_the_unit_interval(
        p in vec(0.0f64..=1.0, 12),
        g in vec(any::<bool>(), 12),
    ) {
        let g: Vec<f64> = g.into_iter().map(f64::from).collect();
        let mut tape = Tape::new();
        let pv = tape.constant(Tensor::new(&[3, 2, 2], p.clone()).unwrap());
        let gv = tape.constant(Tensor::new(&[3, 2, 2], g.clone()).unwrap());
        let l = dice_loss(&mut tape, pv, gv).unwrap();
        let l = tape.value(l).item();
        prop_assert!((0.0..=1.0).contains(&l));
        // binary predictions score zero exactly when they equal the target
        let hard: Vec<f64> = p.iter().map(|&x| f64::from(u8::from(x >= 0.5))).collect();
        let hv = tape.constant(Tensor::new(&[3, 2, 2], hard.clone()).unwrap());
        let l = dice_loss(&mut tape, hv, gv).unwrap();
        prop_assert_eq!(tape.value(l).item() == 0.0, hard == g);
    }

    #[test]
    fn train_config_round_trips(
        steps in 1usize..100_000,
        lr in 1e-6f64..1.0,
        batch in 1usize..8,
        seed in any::<u64>(),
        mixer in prop_oneof![Just(MixerVariant::Cha), Just(MixerVariant::Cra), Just(MixerVariant::None)],
        task in 0u32..3,
        learnable in any::<bool>(),
    ) {
        let mut c = TrainConfig::toy(Task::from_code(task).unwrap());
        c.steps = steps;
        c.lr = lr;
        c.batch_size = batch;
        c.seed = seed;
        c.model.mixer = mixer;
        c.model.use_learnable_queries = learnable;
        let text = c.render();
        let back = TrainConfig::parse(&text).unwrap();
        prop_assert_eq!(&back, &c);
        prop_assert_eq!(back.render(), text);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn total_is_the_weighted_sum(lambda in 0.0f64..2.0, model_seed in 0u64..1000, clip_seed in 0u64..1000) {
        let config = TrainConfig::micro(Task::S4);
        let model = Model::new(config.model.clone(), model_seed).unwrap();
        let clip = generate_clip(Task::S4, &config.synth(), clip_seed).unwrap();
        let mut tape = Tape::new();
        let bound = model.params.bind(&mut tape);
        let f = tape.constant(clip.frames.clone());
        let a = tape.constant(clip.audio.clone());
        let bundle = model.forward(&mut tape, Bound(&bound), f, a).unwrap();
        let r = total_loss(&mut tape, &bundle, &clip.gt, lambda).unwrap().report(&tape);
        prop_assert!((r.total - (r.l_iou + lambda * r.l_mix)).abs() <= 1e-12);
        prop_assert!(r.l_iou >= 0.0 && r.l_iou <= 1.0 + 1e-9);
        prop_assert!(r.l_mix >= 0.0 && r.l_mix <= 1.0 + 1e-9);
    }
}
