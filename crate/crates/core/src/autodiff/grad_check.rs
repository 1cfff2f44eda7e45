//! Central finite-difference validation of tape gradients.

use super::tape::{Tape, Var};
use super::tensor::Tensor;

/// Compare the tape gradient of a scalar-valued function against central
/// finite differences, returning the maximum relative error
/// `|analytic - fd| / (|analytic| + |fd| + 1e-8)` over coordinates of `x`.
///
/// `f` must be deterministic: it is evaluated twice at `x` and a value
/// mismatch panics, since the check would be meaningless.
pub fn grad_check_finite_diff<F>(f: F, x: &Tensor, epsilon: f32) -> f32
where
    F: Fn(&mut Tape, Var) -> Var,
{
    let eval = |data: &[f32]| -> f32 {
        let mut tape = Tape::new();
        let t = Tensor::new(data.to_vec(), x.shape().to_vec());
        let v = tape.param(&t);
        let loss = f(&mut tape, v);
        tape.scalar_value(loss)
    };

    let v0 = eval(x.data());
    let v1 = eval(x.data());
    assert!(
        v0 == v1,
        "grad_check_finite_diff: non-deterministic function ({v0} vs {v1}); check is unreliable"
    );

    // Analytic gradient.
    let mut tape = Tape::new();
    let xv = tape.param(x);
    let loss = f(&mut tape, xv);
    assert_eq!(tape.value(loss).len(), 1, "grad_check_finite_diff: f must be scalar-valued");
    let grads = tape.backward(loss);
    let zeros = vec![0.0f32; x.numel()];
    let analytic: Vec<f32> = grads.get(xv).map(|g| g.to_vec()).unwrap_or(zeros);

    let mut max_rel = 0.0f32;
    let mut probe = x.data().to_vec();
    for i in 0..probe.len() {
        let orig = probe[i];
        probe[i] = orig + epsilon;
        let up = eval(&probe);
        probe[i] = orig - epsilon;
        let down = eval(&probe);
        probe[i] = orig;
        let fd = (up - down) / (2.0 * epsilon);
        let rel = (analytic[i] - fd).abs() / (analytic[i].abs() + fd.abs() + 1e-8);
        if rel > max_rel {
            max_rel = rel;
        }
    }
    max_rel
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_tensor(shape: Vec<usize>, seed: u64) -> Tensor {
        let mut rng = crate::rng::stream(seed, 99);
        let n: usize = shape.iter().product();
        let data: Vec<f32> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::new(data, shape)
    }

    #[test]
    fn sum_has_exact_gradient() {
        let x = random_tensor(vec![3, 4], 1);
        let err = grad_check_finite_diff(|t, v| t.sum(v), &x, 1e-3);
        assert!(err < 1e-3, "relative error {err}");
    }

    #[test]
    #[should_panic(expected = "non-deterministic")]
    fn nondeterministic_function_is_rejected() {
        use std::sync::atomic::{AtomicU32, Ordering};
        static CALLS: AtomicU32 = AtomicU32::new(0);
        let x = Tensor::new(vec![1.0], vec![1]);
        grad_check_finite_diff(
            |t, v| {
                let n = CALLS.fetch_add(1, Ordering::SeqCst);
                let s = t.scale(v, 1.0 + n as f32);
                t.sum(s)
            },
            &x,
            1e-3,
        );
    }
}
