use super::gradcheck::{check_case, op_catalogue};
use super::*;
use crate::error::Error;

fn t2(rows: &[Vec<f64>]) -> Tensor {
    Tensor::from_rows(rows).unwrap()
}

#[test]
fn every_op_matches_finite_differences() {
    for (k, case) in op_catalogue().iter().enumerate() {
        let err = check_case(case, 20, 1000 + k as u64).unwrap();
        assert!(err < 1e-5, "{}: relative error {:e}", case.name, err);
    }
}

#[test]
fn identity_matmul() {
    let mut tape = Tape::new();
    let a = t2(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]);
    let i = tape.constant(Tensor::eye(3));
    let av = tape.constant(a.clone());
    let out = tape.matmul(i, av).unwrap();
    assert_eq!(tape.value(out).data(), a.data());
}

#[test]
fn uniform_softmax_and_cross_entropy() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::filled(&[1, 4], 0.3));
    let s = tape.row_softmax(x, None).unwrap();
    assert_eq!(tape.value(s).data(), &[0.25; 4]);
    for k in 2..8 {
        let z = tape.constant(Tensor::zeros(&[3, k]));
        let ce = tape.cross_entropy(z, &[0, 1, 2], &[0, k - 1, 1]).unwrap();
        assert!((tape.value(ce).item() - (k as f64).ln()).abs() < 1e-14);
    }
}

#[test]
fn masked_softmax_empty_row_is_zero() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::filled(&[2, 2], 1.0));
    let s = tape.row_softmax(x, Some(&[false, false, true, false])).unwrap();
    assert_eq!(tape.value(s).data(), &[0.0, 0.0, 1.0, 0.0]);
}

#[test]
fn sum_and_half_norm_gradients() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::new(vec![5], vec![1.0, -1.0, 2.0, 0.0, 3.0]).unwrap());
    let s = tape.sum(x);
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[1.0; 5]);

    let mut tape = Tape::new();
    let x = tape.param(Tensor::new(vec![2], vec![1.0, -2.0]).unwrap());
    let sq = tape.powf(x, 2.0);
    let s = tape.sum(sq);
    let l = tape.scale(s, 0.5);
    tape.backward(l).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[1.0, -2.0]);
}

#[test]
fn shape_errors_name_op_and_shapes() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[2, 3]));
    let err = tape.matmul(a, b).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("matmul") && msg.contains("[2, 3]"), "{}", msg);
    let c = tape.constant(Tensor::zeros(&[4]));
    assert!(matches!(tape.add(a, c), Err(Error::ShapeMismatch { op: "add", .. })));
}

#[test]
fn non_scalar_loss_rejected() {
    let mut tape = Tape::new();
    let a = tape.param(Tensor::zeros(&[2, 3]));
    assert!(matches!(tape.backward(a), Err(Error::NonScalarLoss(_))));
}

#[test]
fn constants_are_not_recorded_for_grad() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::ones(&[2, 2]));
    let b = tape.param(Tensor::ones(&[2, 2]));
    let c = tape.relu(a);
    let d = tape.mul(c, b).unwrap();
    let s = tape.sum(d);
    assert!(!tape.requires_grad(c));
    tape.backward(s).unwrap();
    assert!(tape.grad(a).is_none() && tape.grad(c).is_none());
    assert!(tape.grad(b).is_some());
}

#[test]
fn only_ancestors_receive_gradients() {
    let mut tape = Tape::new();
    let a = tape.param(Tensor::ones(&[3]));
    let b = tape.param(Tensor::ones(&[3]));
    let sa = tape.sum(a);
    let _sb = tape.sum(b);
    tape.backward(sa).unwrap();
    assert!(tape.grad(a).is_some());
    assert!(tape.grad(b).is_none());
}

fn mlp_grads(seed_scale: f64) -> (Vec<f64>, Vec<f64>) {
    let mut tape = Tape::new();
    let x = tape.constant(t2(&[vec![0.5, -1.0, 2.0], vec![1.5, 0.2, -0.3]]));
    let w1 = tape.param(Tensor::new(vec![3, 4], (0..12).map(|k| (k as f64 * 0.37).sin() * seed_scale).collect()).unwrap());
    let w2 = tape.param(Tensor::new(vec![4, 1], vec![0.3, -0.2, 0.5, 0.1]).unwrap());
    let h = tape.matmul(x, w1).unwrap();
    let h = tape.gelu(h);
    let y = tape.matmul(h, w2).unwrap();
    let target = tape.constant(Tensor::zeros(&[2, 1]));
    let e = tape.squared_error(y, target).unwrap();
    let l = tape.mean(e);
    tape.backward(l).unwrap();
    let g1 = tape.grad(w1).unwrap().to_vec();
    tape.zero_grad();
    tape.backward(l).unwrap();
    let g1b = tape.grad(w1).unwrap().to_vec();
    assert_eq!(g1, g1b);
    tape.backward(l).unwrap();
    let doubled = tape.grad(w1).unwrap().to_vec();
    for (a, b) in doubled.iter().zip(&g1) {
        assert_eq!(*a, 2.0 * b);
    }
    (g1, tape.grad(w2).unwrap().to_vec())
}

#[test]
fn replay_and_accumulation() {
    let a = mlp_grads(1.0);
    let b = mlp_grads(1.0);
    assert_eq!(a, b);
}

#[test]
fn two_layer_mlp_matches_finite_differences() {
    let build = |t: &mut Tape, v: &[Var]| -> crate::Result<Var> {
        let h = t.matmul(v[0], v[1])?;
        let h = t.relu(h);
        let y = t.matmul(h, v[2])?;
        let e = t.squared_error(y, v[3])?;
        Ok(t.mean(e))
    };
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    for trial in 0..20 {
        let mut r = |s: &[usize]| {
            let n: usize = s.iter().product();
            Tensor::new(s.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
        };
        let inputs = vec![r(&[5, 3]), r(&[3, 6]), r(&[6, 2]), r(&[5, 2])];
        let err = gradcheck::max_relative_error(&build, &inputs, trial).unwrap();
        assert!(err < 1e-5, "trial {}: {:e}", trial, err);
    }
}

#[test]
fn dropout_is_seeded_and_inverted() {
    let run = |seed| {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::ones(&[50, 20]));
        let d = tape.dropout(x, 0.5, seed).unwrap();
        tape.value(d).data().to_vec()
    };
    let a = run(4);
    assert_eq!(a, run(4));
    assert_ne!(a, run(5));
    assert!(a.iter().all(|&v| v == 0.0 || v == 2.0));
    let mean = a.iter().sum::<f64>() / a.len() as f64;
    assert!((mean - 1.0).abs() < 0.1);
}

#[test]
fn conv1d_reference() {
    // single channel, kernel [1, -1] at dilation 2: out[t] = x[t] - x[t+2]
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::new(vec![1, 5, 1], vec![1.0, 2.0, 4.0, 8.0, 16.0]).unwrap());
    let w = tape.constant(Tensor::new(vec![2, 1, 1], vec![1.0, -1.0]).unwrap());
    let y = tape.conv1d(x, w, 2).unwrap();
    assert_eq!(tape.value(y).shape(), &[1, 3, 1]);
    assert_eq!(tape.value(y).data(), &[-3.0, -6.0, -12.0]);
    assert!(tape.conv1d(x, w, 5).is_err());
}

#[test]
fn jacobian_of_linear_map() {
    // y = x W, Jacobian of y[0, :] wrt x[0, :] is Wᵀ
    let mut tape = Tape::new();
    let x = tape.param(Tensor::new(vec![1, 3], vec![0.1, 0.2, 0.3]).unwrap());
    let wt = t2(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]);
    let w = tape.constant(wt.clone());
    let y = tape.matmul(x, w).unwrap();
    let n = jacobian_block_norm(&mut tape, x, y, &[0, 1], &[0, 1, 2]).unwrap();
    assert!((n - wt.norm()).abs() < 1e-12);
    let n = jacobian_block_norm(&mut tape, x, y, &[1], &[2]).unwrap();
    assert_eq!(n, 6.0);
}
