//! Randomized finite-difference checks, one per operation.
//!
//! Every analytic gradient out of the reverse sweep is compared against a
//! central-difference probe of the same forward expression. The probe only
//! ever calls the forward path, so the two sides stay independent.

use autodiff::gradcheck::{central_difference, max_relative_error, DEFAULT_STEP};
use autodiff::{Real, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: Real = 1e-4;
const FLOOR: Real = 1e-6;

fn uniform(rng: &mut ChaCha8Rng, n: usize) -> Vec<Real> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Check d(loss)/d(probe) for the expression `build` constructs.
/// `build` must put the probed values into a leaf and return
/// (scalar loss, probe leaf).
fn fd_check<F>(x0: &[Real], build: F)
where
    F: Fn(&Tape, &[Real]) -> (Tensor, Tensor),
{
    let tape = Tape::new();
    let (loss, probe) = build(&tape, x0);
    loss.backward().unwrap();
    let analytic = probe
        .grad()
        .expect("probe leaf must receive a gradient");
    let numeric = central_difference(
        |x| {
            let t = Tape::new();
            let (l, _) = build(&t, x);
            l.scalar().unwrap()
        },
        x0,
        DEFAULT_STEP,
    );
    let err = max_relative_error(&analytic, &numeric, FLOOR);
    assert!(
        err < TOL,
        "finite-difference disagreement {err:e} (tolerance {TOL:e})"
    );
}

/// Reduce to a scalar through fixed pseudo-random weights so symmetric
/// errors cannot cancel.
fn weighted_sum(tape: &Tape, x: &Tensor, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w: Vec<Real> = (0..x.numel()).map(|_| rng.gen_range(0.1..1.0)).collect();
    let w = tape.constant(w, x.shape()).unwrap();
    x.mul(&w).unwrap().sum()
}

#[test]
fn add_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x0 = uniform(&mut rng, 12);
    let other = uniform(&mut rng, 12);
    fd_check(&x0, |tape, x| {
        let a = tape.leaf(x.to_vec(), &[3, 4]).unwrap();
        let b = tape.constant(other.clone(), &[3, 4]).unwrap();
        let y = a.add(&b).unwrap();
        (weighted_sum(tape, &y, 1), a)
    });
}

#[test]
fn add_bias_gradient_wrt_both_operands() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let xv = uniform(&mut rng, 12);
    let bv = uniform(&mut rng, 4);
    fd_check(&xv, |tape, x| {
        let a = tape.leaf(x.to_vec(), &[3, 4]).unwrap();
        let b = tape.constant(bv.clone(), &[4]).unwrap();
        (weighted_sum(tape, &a.add_bias(&b).unwrap(), 2), a)
    });
    fd_check(&bv, |tape, b| {
        let a = tape.constant(xv.clone(), &[3, 4]).unwrap();
        let bias = tape.leaf(b.to_vec(), &[4]).unwrap();
        (weighted_sum(tape, &a.add_bias(&bias).unwrap(), 2), bias)
    });
}

#[test]
fn mul_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let x0 = uniform(&mut rng, 10);
    let other = uniform(&mut rng, 10);
    fd_check(&x0, |tape, x| {
        let a = tape.leaf(x.to_vec(), &[10]).unwrap();
        let b = tape.constant(other.clone(), &[10]).unwrap();
        (weighted_sum(tape, &a.mul(&b).unwrap(), 3), a)
    });
}

#[test]
fn scale_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let x0 = uniform(&mut rng, 8);
    fd_check(&x0, |tape, x| {
        let a = tape.leaf(x.to_vec(), &[8]).unwrap();
        (weighted_sum(tape, &a.scale(-2.5), 4), a)
    });
}

#[test]
fn matmul_gradient_wrt_both_operands() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let av = uniform(&mut rng, 6);
    let bv = uniform(&mut rng, 12);
    fd_check(&av, |tape, x| {
        let a = tape.leaf(x.to_vec(), &[2, 3]).unwrap();
        let b = tape.constant(bv.clone(), &[3, 4]).unwrap();
        (weighted_sum(tape, &a.matmul(&b).unwrap(), 5), a)
    });
    fd_check(&bv, |tape, x| {
        let a = tape.constant(av.clone(), &[2, 3]).unwrap();
        let b = tape.leaf(x.to_vec(), &[3, 4]).unwrap();
        (weighted_sum(tape, &a.matmul(&b).unwrap(), 5), b)
    });
}

#[test]
fn transpose_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let x0 = uniform(&mut rng, 6);
    fd_check(&x0, |tape, x| {
        let a = tape.leaf(x.to_vec(), &[2, 3]).unwrap();
        (weighted_sum(tape, &a.transpose().unwrap(), 6), a)
    });
}

#[test]
fn relu_gradient_away_from_kink() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    // Keep probes off the non-differentiable point at zero.
    let x0: Vec<Real> = (0..10)
        .map(|_| {
            let mag = rng.gen_range(0.1..1.0);
            if rng.gen::<bool>() {
                mag
            } else {
                -mag
            }
        })
        .collect();
    fd_check(&x0, |tape, x| {
        let a = tape.leaf(x.to_vec(), &[10]).unwrap();
        (weighted_sum(tape, &a.relu(), 7), a)
    });
}

#[test]
fn softmax_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let x0 = uniform(&mut rng, 12);
    fd_check(&x0, |tape, x| {
        let a = tape.leaf(x.to_vec(), &[3, 4]).unwrap();
        (weighted_sum(tape, &a.softmax_rows().unwrap(), 8), a)
    });
}

#[test]
fn layer_norm_gradient_wrt_all_operands() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let xv = uniform(&mut rng, 12);
    let gv: Vec<Real> = (0..4).map(|_| rng.gen_range(0.5..1.5)).collect();
    let bv = uniform(&mut rng, 4);
    fd_check(&xv, |tape, x| {
        let a = tape.leaf(x.to_vec(), &[3, 4]).unwrap();
        let g = tape.constant(gv.clone(), &[4]).unwrap();
        let b = tape.constant(bv.clone(), &[4]).unwrap();
        (weighted_sum(tape, &a.layer_norm(&g, &b, 1e-5).unwrap(), 9), a)
    });
    fd_check(&gv, |tape, g| {
        let a = tape.constant(xv.clone(), &[3, 4]).unwrap();
        let gain = tape.leaf(g.to_vec(), &[4]).unwrap();
        let b = tape.constant(bv.clone(), &[4]).unwrap();
        (
            weighted_sum(tape, &a.layer_norm(&gain, &b, 1e-5).unwrap(), 9),
            gain,
        )
    });
    fd_check(&bv, |tape, b| {
        let a = tape.constant(xv.clone(), &[3, 4]).unwrap();
        let g = tape.constant(gv.clone(), &[4]).unwrap();
        let bias = tape.leaf(b.to_vec(), &[4]).unwrap();
        (
            weighted_sum(tape, &a.layer_norm(&g, &bias, 1e-5).unwrap(), 9),
            bias,
        )
    });
}

#[test]
fn mean_rows_and_slice_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let x0 = uniform(&mut rng, 12);
    fd_check(&x0, |tape, x| {
        let a = tape.leaf(x.to_vec(), &[4, 3]).unwrap();
        (weighted_sum(tape, &a.mean_rows().unwrap(), 10), a)
    });
    fd_check(&x0, |tape, x| {
        let a = tape.leaf(x.to_vec(), &[4, 3]).unwrap();
        (weighted_sum(tape, &a.slice_rows(1, 3).unwrap(), 11), a)
    });
    fd_check(&x0, |tape, x| {
        let a = tape.leaf(x.to_vec(), &[4, 3]).unwrap();
        (weighted_sum(tape, &a.slice_cols(0, 2).unwrap(), 12), a)
    });
}

#[test]
fn concat_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let x0 = uniform(&mut rng, 5);
    let other = uniform(&mut rng, 3);
    fd_check(&x0, |tape, x| {
        let a = tape.leaf(x.to_vec(), &[5]).unwrap();
        let b = tape.constant(other.clone(), &[3]).unwrap();
        (weighted_sum(tape, &Tensor::concat(&[&a, &b]).unwrap(), 13), a)
    });

    let m0 = uniform(&mut rng, 6);
    let m1 = uniform(&mut rng, 9);
    fd_check(&m0, |tape, x| {
        let a = tape.leaf(x.to_vec(), &[3, 2]).unwrap();
        let b = tape.constant(m1.clone(), &[3, 3]).unwrap();
        (
            weighted_sum(tape, &Tensor::concat_cols(&[&a, &b]).unwrap(), 14),
            a,
        )
    });
}

#[test]
fn gather_rows_gradient_with_repeats() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let x0 = uniform(&mut rng, 8);
    fd_check(&x0, |tape, x| {
        let table = tape.leaf(x.to_vec(), &[4, 2]).unwrap();
        let picked = table.gather_rows(&[1, 3, 1, 0]).unwrap();
        (weighted_sum(tape, &picked, 15), table)
    });
}

#[test]
fn reshape_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let x0 = uniform(&mut rng, 6);
    fd_check(&x0, |tape, x| {
        let a = tape.leaf(x.to_vec(), &[6]).unwrap();
        (weighted_sum(tape, &a.reshape(&[2, 3]).unwrap(), 16), a)
    });
}

#[test]
fn cross_entropy_gradient_with_pads_and_smoothing() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let x0 = uniform(&mut rng, 20);
    let targets = vec![2, 0, 4, 1]; // second position is pad
    fd_check(&x0, |tape, x| {
        let logits = tape.leaf(x.to_vec(), &[4, 5]).unwrap();
        let out = logits
            .cross_entropy_label_smoothed(&targets, 0.1, 0)
            .unwrap();
        (out.loss, logits)
    });
}

#[test]
fn composed_network_gradient() {
    // linear -> relu -> linear -> softmax cross-entropy, probed at the
    // first weight matrix. Exercises gradient flow through a chain.
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let w1 = uniform(&mut rng, 12);
    let w2 = uniform(&mut rng, 20);
    let input = uniform(&mut rng, 6);
    fd_check(&w1, |tape, w| {
        let x = tape.constant(input.clone(), &[2, 3]).unwrap();
        let w1 = tape.leaf(w.to_vec(), &[3, 4]).unwrap();
        let w2 = tape.constant(w2.clone(), &[4, 5]).unwrap();
        let h = x.matmul(&w1).unwrap().relu();
        let logits = h.matmul(&w2).unwrap();
        let out = logits.cross_entropy_label_smoothed(&[1, 3], 0.1, 0).unwrap();
        (out.loss, w1)
    });
}
