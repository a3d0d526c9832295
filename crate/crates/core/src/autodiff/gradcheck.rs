//! Central finite-difference gradient checking.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Tape, Tensor, Var};
use crate::error::Result;

pub const FD_STEP: f64 = 1e-5;

/// Builds the graph under test from leaf variables.
pub type Builder<'a> = dyn Fn(&mut Tape, &[Var]) -> Result<Var> + 'a;

fn project(tape: &mut Tape, out: Var, weights: &[f64]) -> Result<Var> {
    let shape = tape.value(out).shape().to_vec();
    let w = tape.constant(Tensor::new(shape, weights.to_vec())?);
    let p = tape.mul(out, w)?;
    Ok(tape.sum(p))
}

fn scalar_value(build: &Builder, inputs: &[Tensor], weights: &[f64]) -> Result<f64> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = build(&mut tape, &vars)?;
    let s = project(&mut tape, out, weights)?;
    Ok(tape.value(s).item())
}

/// Largest normwise relative error, over all inputs, between the tape
/// gradient of `sum(w ⊙ f(inputs))` and central differences with step
/// [`FD_STEP`]. The projection `w` is drawn from `seed`.
pub fn max_relative_error(build: &Builder, inputs: &[Tensor], seed: u64) -> Result<f64> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = build(&mut tape, &vars)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights: Vec<f64> = (0..tape.value(out).numel())
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let s = project(&mut tape, out, &weights)?;
    tape.backward(s)?;

    let mut worst = 0.0f64;
    for (k, v) in vars.iter().enumerate() {
        let analytic = tape
            .grad(*v)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; inputs[k].numel()]);
        let mut numeric = vec![0.0; analytic.len()];
        for idx in 0..numeric.len() {
            let mut shifted = inputs.to_vec();
            let x0 = inputs[k].data()[idx];
            shifted[k].data_mut()[idx] = x0 + FD_STEP;
            let fp = scalar_value(build, &shifted, &weights)?;
            shifted[k].data_mut()[idx] = x0 - FD_STEP;
            let fm = scalar_value(build, &shifted, &weights)?;
            numeric[idx] = (fp - fm) / (2.0 * FD_STEP);
        }
        let diff: f64 = analytic
            .iter()
            .zip(&numeric)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
        let scale = na.max(nn);
        let rel = if scale < 1e-12 { diff } else { diff / scale };
        worst = worst.max(rel);
    }
    Ok(worst)
}

/// Sampling range for a test input.
#[derive(Clone, Copy, Debug)]
pub enum Domain {
    /// Uniform on [-1, 1].
    Any,
    /// Uniform on [0.5, 2].
    Positive,
    /// Magnitude in [0.1, 1] with random sign; keeps clear of kinks at 0.
    AwayFromZero,
    /// Integer-free placeholder for inputs that are not differentiated but
    /// must stay fixed across trials.
    Fixed(f64),
}

pub struct OpCase {
    pub name: &'static str,
    pub inputs: Vec<(Vec<usize>, Domain)>,
    pub build: Box<Builder<'static>>,
}

fn sample(shape: &[usize], dom: Domain, rng: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| match dom {
            Domain::Any => rng.random_range(-1.0..1.0),
            Domain::Positive => rng.random_range(0.5..2.0),
            Domain::AwayFromZero => {
                let m = rng.random_range(0.1..1.0);
                if rng.random::<bool>() {
                    m
                } else {
                    -m
                }
            }
            Domain::Fixed(v) => v,
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches")
}

/// Runs `trials` random instances of a case; returns the worst error.
pub fn check_case(case: &OpCase, trials: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for t in 0..trials {
        let inputs: Vec<Tensor> = case
            .inputs
            .iter()
            .map(|(s, d)| sample(s, *d, &mut rng))
            .collect();
        worst = worst.max(max_relative_error(&*case.build, &inputs, seed ^ (t as u64 + 1))?);
    }
    Ok(worst)
}

fn case(
    name: &'static str,
    inputs: Vec<(Vec<usize>, Domain)>,
    build: impl Fn(&mut Tape, &[Var]) -> Result<Var> + 'static,
) -> OpCase {
    OpCase {
        name,
        inputs,
        build: Box::new(build),
    }
}

/// Every differentiable op of the tape, with kink-free input domains.
pub fn op_catalogue() -> Vec<OpCase> {
    use Domain::*;
    let m = |r: usize, c: usize| vec![r, c];
    let mask: Vec<bool> = (0..20).map(|k| k % 3 != 1).collect();
    let ce_rows = vec![0, 2, 3, 3];
    let ce_targets = vec![1, 0, 2, 1];
    vec![
        case("matmul", vec![(m(3, 4), Any), (m(4, 2), Any)], |t, v| t.matmul(v[0], v[1])),
        case("add", vec![(m(3, 4), Any), (m(3, 4), Any)], |t, v| t.add(v[0], v[1])),
        case("add_row_bcast", vec![(m(3, 4), Any), (vec![4], Any)], |t, v| t.add(v[0], v[1])),
        case("sub_col_bcast", vec![(m(3, 4), Any), (m(3, 1), Any)], |t, v| t.sub(v[0], v[1])),
        case("mul", vec![(m(3, 4), Any), (m(3, 4), Any)], |t, v| t.mul(v[0], v[1])),
        case("mul_row_bcast", vec![(vec![2, 3, 4], Any), (m(1, 4), Any)], |t, v| t.mul(v[0], v[1])),
        case("div_col_bcast", vec![(m(3, 4), Any), (m(3, 1), AwayFromZero)], |t, v| t.div(v[0], v[1])),
        case("add_scalar", vec![(m(2, 3), Any)], |t, v| Ok(t.add_scalar(v[0], 0.7))),
        case("scale", vec![(m(2, 3), Any)], |t, v| Ok(t.scale(v[0], -1.3))),
        case("row_softmax", vec![(m(4, 5), Any)], |t, v| t.row_softmax(v[0], None)),
        case("row_softmax_masked", vec![(m(4, 5), Any)], move |t, v| {
            t.row_softmax(v[0], Some(&mask))
        }),
        case("row_normalize", vec![(m(4, 5), Positive)], |t, v| t.row_normalize(v[0])),
        case("relu", vec![(m(3, 4), AwayFromZero)], |t, v| Ok(t.relu(v[0]))),
        case("gelu", vec![(m(3, 4), Any)], |t, v| Ok(t.gelu(v[0]))),
        case("sigmoid", vec![(m(3, 4), Any)], |t, v| Ok(t.sigmoid(v[0]))),
        case("abs", vec![(m(3, 4), AwayFromZero)], |t, v| Ok(t.abs(v[0]))),
        case("exp", vec![(m(3, 4), Any)], |t, v| Ok(t.exp(v[0]))),
        case("log", vec![(m(3, 4), Positive)], |t, v| Ok(t.log(v[0]))),
        case("powf", vec![(m(3, 4), Positive)], |t, v| Ok(t.powf(v[0], -0.5))),
        case("transpose", vec![(m(3, 4), Any)], |t, v| t.transpose(v[0])),
        case("reshape", vec![(m(3, 4), Any)], |t, v| t.reshape(v[0], &[2, 6])),
        case("concat_axis0", vec![(m(2, 3), Any), (m(1, 3), Any)], |t, v| t.concat(&[v[0], v[1]], 0)),
        case("concat_axis1", vec![(vec![2, 2, 3], Any), (vec![2, 1, 3], Any)], |t, v| {
            t.concat(&[v[0], v[1]], 1)
        }),
        case("sum", vec![(m(3, 4), Any)], |t, v| Ok(t.sum(v[0]))),
        case("mean", vec![(m(3, 4), Any)], |t, v| Ok(t.mean(v[0]))),
        case("sum_axis0", vec![(m(3, 4), Any)], |t, v| t.sum_axis(v[0], 0)),
        case("sum_axis1", vec![(m(3, 4), Any)], |t, v| t.sum_axis(v[0], 1)),
        case("squared_error", vec![(m(3, 4), Any), (m(3, 4), Any)], |t, v| {
            t.squared_error(v[0], v[1])
        }),
        case("cross_entropy", vec![(m(4, 3), Any)], move |t, v| {
            t.cross_entropy(v[0], &ce_rows, &ce_targets)
        }),
        case("dropout", vec![(m(4, 5), Any)], |t, v| t.dropout(v[0], 0.3, 17)),
        case("conv1d", vec![(vec![2, 7, 3], Any), (vec![2, 3, 4], Any)], |t, v| {
            t.conv1d(v[0], v[1], 2)
        }),
        case("node_mix", vec![(m(4, 4), Any), (vec![2, 4, 3], Any)], |t, v| t.node_mix(v[0], v[1])),
    ]
}
