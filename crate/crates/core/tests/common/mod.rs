#![allow(dead_code)]

pub mod cases;
pub mod oracle;

use avseg_core::tensor::{Tape, Tensor, Var};
use avseg_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

/// Uniform values in `[lo, hi]` with random sign; keeps inputs off kinks and poles.
pub fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let v = rng.gen_range(lo..hi);
        if rng.gen_bool(0.5) {
            v
        } else {
            -v
        }
    })
}

/// `‖a − n‖ / (‖a‖ + ‖n‖)`, zero when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, n)| a - n));
    let scale = norm(&mut analytic.iter().copied()) + norm(&mut numeric.iter().copied());
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Builds `Σ f(inputs) ⊙ R` for a fixed random `R`, so every output element
/// gets a distinct upstream gradient.
fn projected(
    inputs: &[Tensor],
    weights_seed: u64,
    f: &dyn Fn(&mut Tape, &[Var]) -> Result<Var>,
    requires_grad: bool,
) -> (Tape, Vec<Var>, Var) {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| tape.leaf(t.clone(), requires_grad))
        .collect();
    let out = f(&mut tape, &vars).expect("op under test");
    let mut r = rng(weights_seed);
    let proj = uniform(&mut r, tape.shape(out), -1.0, 1.0);
    let proj = tape.constant(proj);
    let prod = tape.mul(out, proj).expect("same shape");
    let loss = tape.sum(prod);
    (tape, vars, loss)
}

/// Worst relative error over all inputs between backward and central differences.
pub fn gradcheck(inputs: &[Tensor], f: &dyn Fn(&mut Tape, &[Var]) -> Result<Var>) -> f64 {
    let (mut tape, vars, loss) = projected(inputs, 99, f, true);
    tape.backward(loss).expect("scalar loss");
    let mut worst: f64 = 0.0;
    for (i, (input, &var)) in inputs.iter().zip(&vars).enumerate() {
        let analytic = tape.grad(var).expect("input reached");
        let mut numeric = Vec::with_capacity(input.len());
        for j in 0..input.len() {
            let eval = |delta: f64| {
                let mut shifted = inputs.to_vec();
                shifted[i].data_mut()[j] += delta;
                let (t, _, l) = projected(&shifted, 99, f, false);
                t.value(l).item()
            };
            numeric.push((eval(FD_STEP) - eval(-FD_STEP)) / (2.0 * FD_STEP));
        }
        worst = worst.max(relative_error(analytic.data(), &numeric));
    }
    worst
}
