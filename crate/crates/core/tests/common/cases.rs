//! Finite-difference cases shared by the gradient tests and the acceptance run.

use avseg_core::data::{generate_clip, LabelMap, SynthConfig, Task};
use avseg_core::loss::total_loss;
use avseg_core::model::{Bound, Model, ModelConfig};
use avseg_core::tensor::{Tape, Tensor, Var};
use avseg_core::Result;
use rand::Rng;

use super::{away_from_zero, gradcheck, relative_error, rng, uniform, FD_STEP};

pub const OP_TOL: f64 = 1e-4;
pub const END_TO_END_TOL: f64 = 1e-3;

type OpFn = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;

pub struct Case {
    pub name: &'static str,
    pub inputs: Vec<Tensor>,
    pub f: OpFn,
}

impl Case {
    fn new(
        name: &'static str,
        inputs: Vec<Tensor>,
        f: impl Fn(&mut Tape, &[Var]) -> Result<Var> + 'static,
    ) -> Self {
        Case {
            name,
            inputs,
            f: Box::new(f),
        }
    }

    /// Worst relative error between backward and central differences.
    pub fn error(&self) -> f64 {
        gradcheck(&self.inputs, &self.f)
    }

    pub fn shapes(&self) -> Vec<Vec<usize>> {
        self.inputs.iter().map(|t| t.shape().to_vec()).collect()
    }
}

/// Every differentiable op, each on at least three shapes.
pub fn op_cases() -> Vec<Case> {
    let mut cases = Vec::new();
    let mut r = rng(1);

    for (a, b) in [
        (vec![3, 4], vec![4, 2]),
        (vec![2, 3, 5], vec![2, 5, 4]),
        (vec![2, 2, 3, 4], vec![4, 3]),
        (vec![1, 6], vec![3, 6, 2]),
    ] {
        let inputs = vec![
            uniform(&mut r, &a, -1.0, 1.0),
            uniform(&mut r, &b, -1.0, 1.0),
        ];
        cases.push(Case::new("matmul", inputs, |t, v| t.matmul(v[0], v[1])));
    }

    for (shape, axis) in [
        (vec![5], 0),
        (vec![3, 4], 1),
        (vec![2, 3, 4], 1),
        (vec![2, 3, 4], 0),
    ] {
        let inputs = vec![uniform(&mut r, &shape, -3.0, 3.0)];
        cases.push(Case::new("softmax", inputs, move |t, v| {
            t.softmax(v[0], axis)
        }));
    }
    for shape in [vec![4], vec![2, 5], vec![2, 1, 3]] {
        let inputs = vec![uniform(&mut r, &shape, -3.0, 3.0)];
        cases.push(Case::new("softmax_last", inputs, |t, v| {
            t.softmax_last(v[0])
        }));
    }

    for (a, b) in [
        (vec![3, 4], vec![3, 4]),
        (vec![2, 3, 4], vec![4]),
        (vec![2, 1, 4], vec![3, 1]),
        (vec![1], vec![2, 3]),
    ] {
        let x = uniform(&mut r, &a, -2.0, 2.0);
        let y = away_from_zero(&mut r, &b, 0.5, 2.0);
        cases.push(Case::new("add", vec![x.clone(), y.clone()], |t, v| {
            t.add(v[0], v[1])
        }));
        cases.push(Case::new("sub", vec![x.clone(), y.clone()], |t, v| {
            t.sub(v[0], v[1])
        }));
        cases.push(Case::new("mul", vec![x.clone(), y.clone()], |t, v| {
            t.mul(v[0], v[1])
        }));
        cases.push(Case::new("div", vec![x, y], |t, v| t.div(v[0], v[1])));
    }

    for shape in [vec![7], vec![3, 4], vec![2, 3, 2]] {
        // off the relu kink
        let x = away_from_zero(&mut r, &shape, 0.05, 3.0);
        cases.push(Case::new("relu", vec![x.clone()], |t, v| Ok(t.relu(v[0]))));
        cases.push(Case::new("gelu", vec![x.clone()], |t, v| Ok(t.gelu(v[0]))));
        cases.push(Case::new("sigmoid", vec![x.clone()], |t, v| {
            Ok(t.sigmoid(v[0]))
        }));
        cases.push(Case::new("scale", vec![x.clone()], |t, v| {
            Ok(t.scale(v[0], -1.7))
        }));
        cases.push(Case::new("add_scalar", vec![x], |t, v| {
            Ok(t.add_scalar(v[0], 0.3))
        }));
    }

    for shape in [vec![1, 6], vec![4, 5], vec![2, 3, 8]] {
        let d = *shape.last().unwrap();
        let inputs = vec![
            uniform(&mut r, &shape, -2.0, 2.0),
            uniform(&mut r, &[d], 0.5, 1.5),
            uniform(&mut r, &[d], -0.5, 0.5),
        ];
        cases.push(Case::new("layer_norm", inputs, |t, v| {
            t.layer_norm(v[0], v[1], v[2])
        }));
    }

    for shape in [vec![2, 6], vec![3, 2, 4], vec![2, 3, 2, 2]] {
        let x = uniform(&mut r, &shape, -1.0, 1.0);
        let n: usize = shape.iter().product();
        let rank = shape.len();
        cases.push(Case::new("reshape", vec![x.clone()], move |t, v| {
            t.reshape(v[0], &[n / 2, 2])
        }));
        let perm: Vec<usize> = (0..rank).rev().collect();
        cases.push(Case::new("permute", vec![x.clone()], move |t, v| {
            t.permute(v[0], &perm)
        }));
        cases.push(Case::new("transpose_last", vec![x.clone()], |t, v| {
            t.transpose_last(v[0])
        }));
        let y = uniform(&mut r, &shape, -1.0, 1.0);
        cases.push(Case::new("concat", vec![x.clone(), y], |t, v| {
            t.concat(&[v[0], v[1], v[0]], 0)
        }));
        let len = shape[rank - 1] - 1;
        cases.push(Case::new("slice", vec![x.clone()], move |t, v| {
            t.slice(v[0], rank - 1, 1, len)
        }));
        cases.push(Case::new("sum", vec![x.clone()], |t, v| Ok(t.sum(v[0]))));
        cases.push(Case::new("mean", vec![x.clone()], |t, v| Ok(t.mean(v[0]))));
        cases.push(Case::new("sum_axis", vec![x.clone()], |t, v| {
            t.sum_axis(v[0], 1)
        }));
        cases.push(Case::new("mean_axis", vec![x], move |t, v| {
            t.mean_axis(v[0], rank - 1)
        }));
    }

    for shape in [vec![1, 1, 1, 1], vec![1, 2, 3, 3], vec![2, 1, 2, 4]] {
        let inputs = vec![uniform(&mut r, &shape, -1.0, 1.0)];
        cases.push(Case::new("upsample2x", inputs, |t, v| t.upsample2x(v[0])));
    }

    for (x, cout, k, stride) in [
        (vec![1, 1, 5, 5], 2, 3, 1),
        (vec![2, 3, 6, 4], 4, 3, 2),
        (vec![1, 2, 4, 4], 3, 1, 1),
        (vec![1, 2, 7, 5], 1, 5, 2),
    ] {
        let cin = x[1];
        let inputs = vec![
            uniform(&mut r, &x, -1.0, 1.0),
            uniform(&mut r, &[cout, cin, k, k], -1.0, 1.0),
            uniform(&mut r, &[cout], -1.0, 1.0),
        ];
        cases.push(Case::new("conv2d", inputs, move |t, v| {
            t.conv2d(v[0], v[1], v[2], stride)
        }));
    }
    cases
}

fn micro_loss(model: &Model, frames: &Tensor, audio: &Tensor, gt: &LabelMap) -> f64 {
    let mut tape = Tape::new();
    let bound: Vec<Var> = model
        .params
        .iter()
        .map(|p| tape.constant(p.value.clone()))
        .collect();
    let f = tape.constant(frames.clone());
    let a = tape.constant(audio.clone());
    let bundle = model.forward(&mut tape, Bound(&bound), f, a).unwrap();
    let terms = total_loss(&mut tape, &bundle, gt, model.config.lambda_mix).unwrap();
    tape.value(terms.total).item()
}

/// Samples `n` parameter elements of the micro model with |grad| ≥ 1e-6 and
/// compares backward against central differences of the full loss.
/// Returns the worst per-element relative error and the vector relative error.
pub fn end_to_end(n: usize) -> (f64, f64) {
    let config = ModelConfig::micro();
    let mut model = Model::new(config.clone(), 11).unwrap();
    let synth = SynthConfig {
        height: config.height,
        width: config.width,
        audio_dim: config.d_model,
        frames: Some(config.frames),
        ..SynthConfig::default()
    };
    let clip = generate_clip(Task::S4, &synth, 3).unwrap();

    let mut tape = Tape::new();
    let bound = model.params.bind(&mut tape);
    let f = tape.constant(clip.frames.clone());
    let a = tape.constant(clip.audio.clone());
    let bundle = model.forward(&mut tape, Bound(&bound), f, a).unwrap();
    let terms = total_loss(&mut tape, &bundle, &clip.gt, config.lambda_mix).unwrap();
    tape.backward(terms.total).unwrap();
    let grads: Vec<Option<Tensor>> = bound.iter().map(|&v| tape.grad(v)).collect();
    let ids: Vec<_> = model
        .params
        .iter()
        .map(|p| model.params.find(&p.name).unwrap())
        .collect();

    let mut r = rng(12);
    let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
    let mut worst: f64 = 0.0;
    while analytic.len() < n {
        let p = r.gen_range(0..ids.len());
        let Some(grad) = &grads[p] else { continue };
        let j = r.gen_range(0..grad.len());
        let g = grad.data()[j];
        if g.abs() < 1e-6 {
            continue;
        }
        let id = ids[p];
        let orig = model.params.get(id).value.data()[j];
        let mut at = |v: f64| {
            model.params.get_mut(id).value.data_mut()[j] = v;
            micro_loss(&model, &clip.frames, &clip.audio, &clip.gt)
        };
        let fd = (at(orig + FD_STEP) - at(orig - FD_STEP)) / (2.0 * FD_STEP);
        at(orig);
        worst = worst.max((g - fd).abs() / g.abs().max(fd.abs()));
        analytic.push(g);
        numeric.push(fd);
    }
    (worst, relative_error(&analytic, &numeric))
}
