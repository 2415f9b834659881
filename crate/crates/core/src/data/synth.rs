use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Clip, LabelMap, SynthConfig, Task};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub(crate) const PALETTE: [[f64; 3]; 8] = [
    [0.90, 0.15, 0.15],
    [0.15, 0.80, 0.20],
    [0.20, 0.35, 0.95],
    [0.95, 0.85, 0.10],
    [0.85, 0.20, 0.85],
    [0.10, 0.85, 0.85],
    [0.95, 0.55, 0.10],
    [0.92, 0.92, 0.92],
];

const BACKGROUND: f64 = 0.12;
const MAX_SCENE_TRIES: usize = 64;
const MAX_PLACEMENT_TRIES: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ShapeKind {
    Circle,
    Square,
    Triangle,
}

impl ShapeKind {
    pub fn for_class(class_id: u16) -> Self {
        match (class_id - 1) % 3 {
            0 => ShapeKind::Circle,
            1 => ShapeKind::Square,
            _ => ShapeKind::Triangle,
        }
    }

    /// Radius of the smallest centered circle containing the shape.
    fn bounding_factor(self) -> f64 {
        match self {
            ShapeKind::Circle => 1.0,
            ShapeKind::Square | ShapeKind::Triangle => std::f64::consts::SQRT_2,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShapeInstance {
    pub kind: ShapeKind,
    pub class_id: u16,
    /// Center at frame 0, in pixels.
    pub center: (f64, f64),
    pub radius: f64,
    pub color: [f64; 3],
    /// Pixels per frame.
    pub velocity: (f64, f64),
}

impl ShapeInstance {
    /// Center at frame `t`; motion is linear and clamped so the shape stays inside.
    pub fn center_at(&self, t: usize, width: usize, height: usize) -> (f64, f64) {
        let m = self.radius + 0.5;
        let x = (self.center.0 + self.velocity.0 * t as f64).clamp(m, width as f64 - m);
        let y = (self.center.1 + self.velocity.1 * t as f64).clamp(m, height as f64 - m);
        (x, y)
    }

    /// Whether the pixel center `(px, py)` lies inside the shape centered at `c`.
    pub fn covers(&self, c: (f64, f64), px: f64, py: f64) -> bool {
        let (dx, dy) = (px - c.0, py - c.1);
        let r = self.radius;
        match self.kind {
            ShapeKind::Circle => dx * dx + dy * dy <= r * r,
            ShapeKind::Square => dx.abs() <= r && dy.abs() <= r,
            ShapeKind::Triangle => dy >= -r && dy <= r && dx.abs() <= (dy + r) / 2.0,
        }
    }
}

/// Fixed orthonormal per-class audio vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioPrototypeBank {
    dim: usize,
    protos: Vec<Vec<f64>>,
}

impl AudioPrototypeBank {
    /// Gaussian draws orthonormalized by modified Gram-Schmidt.
    pub fn new(n_classes: usize, dim: usize, seed: u64) -> Result<Self> {
        if n_classes > dim {
            return Err(Error::config(format!(
                "{n_classes} orthonormal prototypes do not fit in {dim} dimensions"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let mut protos: Vec<Vec<f64>> = Vec::with_capacity(n_classes);
        while protos.len() < n_classes {
            let mut v: Vec<f64> = (0..dim).map(|_| normal.sample(&mut rng)).collect();
            for p in &protos {
                let dot: f64 = v.iter().zip(p).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(p).for_each(|(a, b)| *a -= dot * b);
            }
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if norm > 1e-6 {
                v.iter_mut().for_each(|a| *a /= norm);
                protos.push(v);
            }
        }
        Ok(AudioPrototypeBank { dim, protos })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_classes(&self) -> usize {
        self.protos.len()
    }

    /// Prototype of class id `c` (1-based).
    pub fn prototype(&self, class_id: u16) -> Option<&[f64]> {
        (class_id as usize)
            .checked_sub(1)
            .and_then(|i| self.protos.get(i))
            .map(Vec::as_slice)
    }
}

/// Normalized sum of the prototypes of `classes` plus Gaussian noise of scale
/// `noise_sigma`. An empty set is silence: the zero vector plus noise.
pub fn audio_for(
    classes: &[u16],
    bank: &AudioPrototypeBank,
    noise_sigma: f64,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    let mut v = vec![0.0; bank.dim()];
    for &c in classes {
        let p = bank.prototype(c).ok_or_else(|| {
            Error::config(format!(
                "class {c} outside prototype bank of {} classes",
                bank.n_classes()
            ))
        })?;
        v.iter_mut().zip(p).for_each(|(a, b)| *a += b);
    }
    let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|a| *a /= norm);
    }
    if noise_sigma > 0.0 {
        let normal = Normal::new(0.0, noise_sigma).map_err(|e| Error::config(e.to_string()))?;
        v.iter_mut().for_each(|a| *a += normal.sample(rng));
    }
    Ok(v)
}

fn clip_rng(task: Task, seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::from(task.code()) << 8 | stream);
    rng
}

/// Places 2-4 instances with distinct classes whose bounding circles stay
/// apart over the whole clip. `n_instances` pins the count when given.
fn place_instances(
    config: &SynthConfig,
    frames: usize,
    rng: &mut ChaCha8Rng,
    n_instances: Option<usize>,
) -> Vec<ShapeInstance> {
    let (w, h) = (config.width, config.height);
    let max_n = 4.min(config.n_classes);
    let n = n_instances.unwrap_or_else(|| rng.gen_range(2..=max_n.max(2)));
    let n = n.min(config.n_classes);
    let classes = sample(rng, config.n_classes, n);
    let side = w.min(h) as f64;
    let mut placed: Vec<ShapeInstance> = Vec::with_capacity(n);
    for ci in classes.iter() {
        let class_id = (ci + 1) as u16;
        let kind = ShapeKind::for_class(class_id);
        for _ in 0..MAX_PLACEMENT_TRIES {
            let radius = rng.gen_range(side / 10.0..side / 6.0);
            let b = radius * kind.bounding_factor();
            let cand = ShapeInstance {
                kind,
                class_id,
                center: (
                    rng.gen_range(b..w as f64 - b),
                    rng.gen_range(b..h as f64 - b),
                ),
                radius,
                color: PALETTE[ci],
                velocity: (rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5)),
            };
            let clear = placed.iter().all(|o| {
                (0..frames).all(|t| {
                    let (a, c) = (cand.center_at(t, w, h), o.center_at(t, w, h));
                    let dist = ((a.0 - c.0).powi(2) + (a.1 - c.1).powi(2)).sqrt();
                    dist >= b + o.radius * o.kind.bounding_factor() + 2.0
                })
            });
            if clear {
                placed.push(cand);
                break;
            }
        }
    }
    placed
}

/// Full-resolution map of which instance covers each pixel, later instances on top.
fn instance_map(instances: &[ShapeInstance], t: usize, w: usize, h: usize) -> Vec<Option<usize>> {
    let mut map = vec![None; w * h];
    for (i, inst) in instances.iter().enumerate() {
        let c = inst.center_at(t, w, h);
        let r = inst.radius * inst.kind.bounding_factor() + 1.0;
        let (x0, x1) = (
            ((c.0 - r).floor().max(0.0)) as usize,
            ((c.0 + r).ceil() as usize).min(w),
        );
        let (y0, y1) = (
            ((c.1 - r).floor().max(0.0)) as usize,
            ((c.1 + r).ceil() as usize).min(h),
        );
        for y in y0..y1 {
            for x in x0..x1 {
                if inst.covers(c, x as f64 + 0.5, y as f64 + 0.5) {
                    map[y * w + x] = Some(i);
                }
            }
        }
    }
    map
}

/// Quarter-resolution labels by 4×4 majority vote; ties go to the smaller label.
fn downsample_labels(full: &[u16], w: usize, h: usize, out: &mut [u16]) {
    let (ow, oh) = (w / 4, h / 4);
    let mut counts: Vec<(u16, u8)> = Vec::with_capacity(16);
    for by in 0..oh {
        for bx in 0..ow {
            counts.clear();
            for y in 4 * by..4 * by + 4 {
                for x in 4 * bx..4 * bx + 4 {
                    let l = full[y * w + x];
                    match counts.iter_mut().find(|(c, _)| *c == l) {
                        Some(e) => e.1 += 1,
                        None => counts.push((l, 1)),
                    }
                }
            }
            let best = counts
                .iter()
                .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
                .expect("non-empty block");
            out[by * ow + bx] = best.0;
        }
    }
}

/// Per-frame sounding instance indices. Every frame keeps at least one silent instance.
fn choose_sounding(
    task: Task,
    n_inst: usize,
    frames: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<usize>> {
    match task {
        Task::S4 => {
            let i = rng.gen_range(0..n_inst);
            vec![vec![i]; frames]
        }
        Task::Ms3 | Task::Avss => (0..frames)
            .map(|_| {
                let k = rng.gen_range(1..=3.min(n_inst - 1));
                let mut s = sample(rng, n_inst, k).into_vec();
                s.sort_unstable();
                s
            })
            .collect(),
    }
}

pub(super) fn render(
    task: Task,
    seed: u64,
    config: &SynthConfig,
    instances: Vec<ShapeInstance>,
    sounding: Vec<Vec<usize>>,
) -> Result<Clip> {
    let (w, h) = (config.width, config.height);
    let frames = sounding.len();
    let bank = AudioPrototypeBank::new(config.n_classes, config.audio_dim, config.bank_seed)?;
    let mut noise_rng = clip_rng(task, seed, 1);

    let mut pixels = vec![0.0; frames * 3 * h * w];
    let mut audio = Vec::with_capacity(frames * config.audio_dim);
    let mut gt = LabelMap::zeros(frames, h / 4, w / 4);
    let mut full = vec![0u16; w * h];
    for (t, sounding_t) in sounding.iter().enumerate() {
        let map = instance_map(&instances, t, w, h);
        for (i, owner) in map.iter().enumerate() {
            let color = owner.map_or([BACKGROUND; 3], |o| instances[o].color);
            for (ch, &v) in color.iter().enumerate() {
                pixels[(t * 3 + ch) * h * w + i] = v;
            }
            full[i] = match owner {
                Some(o) if sounding_t.contains(o) => instances[*o].class_id,
                _ => 0,
            };
        }
        let n = (h / 4) * (w / 4);
        downsample_labels(&full, w, h, &mut gt.data[t * n..(t + 1) * n]);

        let classes: Vec<u16> = sounding_t.iter().map(|&i| instances[i].class_id).collect();
        audio.extend(audio_for(
            &classes,
            &bank,
            config.noise_sigma,
            &mut noise_rng,
        )?);
    }
    Ok(Clip {
        task,
        seed,
        frames: Tensor::new(&[frames, 3, h, w], pixels)?,
        audio: Tensor::new(&[frames, config.audio_dim], audio)?,
        gt,
        instances,
        sounding,
    })
}

/// Pure function of `(task, config, seed)`.
pub fn generate_clip(task: Task, config: &SynthConfig, seed: u64) -> Result<Clip> {
    generate_clip_with(task, config, seed, None)
}

/// As [`generate_clip`], optionally pinning the number of objects in the scene.
pub fn generate_clip_with(
    task: Task,
    config: &SynthConfig,
    seed: u64,
    n_instances: Option<usize>,
) -> Result<Clip> {
    config.validate()?;
    if let Some(n) = n_instances {
        if n < 2 || n > config.n_classes {
            return Err(Error::config(format!(
                "scenes need between 2 and {} objects, got {n}",
                config.n_classes
            )));
        }
    }
    let frames = config.frames_for(task);
    let mut rng = clip_rng(task, seed, 0);
    // Redraw whole scenes from the same stream until one fits; deterministic.
    let mut instances = Vec::new();
    for _ in 0..MAX_SCENE_TRIES {
        instances = place_instances(config, frames, &mut rng, n_instances);
        if instances.len() >= 2 && n_instances.is_none_or(|n| n == instances.len()) {
            break;
        }
    }
    if instances.len() < 2 || n_instances.is_some_and(|n| n != instances.len()) {
        return Err(Error::config(format!(
            "could not place a scene for seed {seed} in a {}x{} frame",
            config.width, config.height
        )));
    }
    let sounding = choose_sounding(task, instances.len(), frames, &mut rng);
    render(task, seed, config, instances, sounding)
}

impl Clip {
    /// Same scene with a different sounding assignment; audio and labels are
    /// regenerated, frames are unchanged.
    pub fn resound(&self, config: &SynthConfig, sounding: Vec<Vec<usize>>) -> Result<Clip> {
        if sounding.len() != self.n_frames()
            || sounding
                .iter()
                .flatten()
                .any(|&i| i >= self.instances.len())
        {
            return Err(Error::config(
                "sounding sets must cover every frame and name existing instances",
            ));
        }
        render(
            self.task,
            self.seed,
            config,
            self.instances.clone(),
            sounding,
        )
    }
}
