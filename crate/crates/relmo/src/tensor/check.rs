//! Finite-difference gradient checking.
//!
//! [`grad_check`] is the crate's ground truth for derivatives: it compares
//! the tape's reverse-mode gradient of a scalar-valued tensor function
//! against central finite differences, component by component, and reports
//! the worst relative error
//!
//! ```text
//! max_i |analytic_i - numeric_i| / max(1, |analytic_i|)
//! ```
//!
//! The function under test must be deterministic. Stochasticity (dropout in
//! training mode) is detected by evaluating the function under two
//! different tape seeds; any disagreement aborts the check with an error
//! telling the caller to switch to eval mode.

use super::{Tape, TapeError, TensorId};
use thiserror::Error;

/// Step sizes outside this window either drown in roundoff (too small) or
/// in truncation error (too large) for f64 central differences.
pub const EPS_MIN: f64 = 1e-7;
pub const EPS_MAX: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum CheckError {
    #[error("finite-difference step {eps} outside [{EPS_MIN}, {EPS_MAX}]")]
    EpsOutOfRange { eps: f64 },
    #[error(
        "function under check is stochastic (dropout enabled?): two runs \
         disagreed by {delta:e}; run the model in eval mode"
    )]
    Stochastic { delta: f64 },
    #[error("function produced a non-finite value at perturbation {index}")]
    NonFinite { index: usize },
    #[error(transparent)]
    Tape(#[from] TapeError),
}

/// Worst-case relative error between reverse-mode and central-difference
/// gradients of `f` at `x`.
///
/// `f` receives a fresh tape plus the leaf holding `x` and must return a
/// single-element tensor. It is invoked once per gradient evaluation plus
/// twice per component of `x`, each time on a fresh tape.
pub fn grad_check<F>(f: F, x: &[f64], shape: &[usize], eps: f64) -> Result<f64, CheckError>
where
    F: Fn(&mut Tape, TensorId) -> Result<TensorId, TapeError>,
{
    if !(EPS_MIN..=EPS_MAX).contains(&eps) {
        return Err(CheckError::EpsOutOfRange { eps });
    }

    let eval = |vals: &[f64], seed: u64| -> Result<f64, CheckError> {
        let mut tape = Tape::with_seed(seed);
        let leaf = tape.param(vals.to_vec(), shape.to_vec())?;
        let out = f(&mut tape, leaf)?;
        let oshape = tape.shape_of(out).to_vec();
        if tape.value(out).len() != 1 {
            return Err(CheckError::Tape(TapeError::NonScalarLoss { shape: oshape }));
        }
        Ok(tape.scalar_value(out))
    };

    // Determinism probe: dropout masks depend on the tape seed, so a
    // stochastic function cannot agree across two different seeds.
    let probe_a = eval(x, 17)?;
    let probe_b = eval(x, 18)?;
    if probe_a != probe_b {
        return Err(CheckError::Stochastic {
            delta: (probe_a - probe_b).abs(),
        });
    }

    // Analytic gradient from one reverse sweep.
    let analytic = {
        let mut tape = Tape::with_seed(17);
        let leaf = tape.param(x.to_vec(), shape.to_vec())?;
        let out = f(&mut tape, leaf)?;
        let oshape = tape.shape_of(out).to_vec();
        if tape.value(out).len() != 1 {
            return Err(CheckError::Tape(TapeError::NonScalarLoss { shape: oshape }));
        }
        tape.backward(out)?;
        tape.grad(leaf)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; x.len()])
    };

    // Central differences, one component at a time.
    let mut worst = 0.0f64;
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + eps;
        let hi = eval(&probe, 17)?;
        probe[i] = orig - eps;
        let lo = eval(&probe, 17)?;
        probe[i] = orig;
        if !hi.is_finite() || !lo.is_finite() {
            return Err(CheckError::NonFinite { index: i });
        }
        let numeric = (hi - lo) / (2.0 * eps);
        let rel = (analytic[i] - numeric).abs() / analytic[i].abs().max(1.0);
        worst = worst.max(rel);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_checks_out() {
        let x = vec![1.0, -2.0, 3.0, 0.5];
        let err = grad_check(
            |t, id| {
                let sq = t.mul(id, id)?;
                Ok(t.sum(sq))
            },
            &x,
            &[2, 2],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-8, "sum of squares err {err}");
    }

    #[test]
    fn softmax_composite_stays_under_primitive_tolerance() {
        let x = vec![0.2, -1.0, 0.7];
        let err = grad_check(
            |t, id| {
                let s = t.softmax(id, 1)?;
                let w = t.constant(vec![3.0, -1.0, 2.0], vec![1, 3])?;
                let y = t.mul(s, w)?;
                Ok(t.sum(y))
            },
            &x,
            &[1, 3],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "softmax composite err {err}");
    }

    #[test]
    fn rejects_out_of_range_eps() {
        let r = grad_check(|t, id| Ok(t.sum(id)), &[1.0], &[1], 1e-9);
        assert!(matches!(r, Err(CheckError::EpsOutOfRange { .. })));
        let r = grad_check(|t, id| Ok(t.sum(id)), &[1.0], &[1], 0.5);
        assert!(matches!(r, Err(CheckError::EpsOutOfRange { .. })));
    }

    #[test]
    fn detects_stochastic_function_and_suggests_eval_mode() {
        let r = grad_check(
            |t, id| {
                let d = t.dropout(id, 0.5, true)?;
                Ok(t.sum(d))
            },
            &[1.0, 2.0, 3.0, 4.0],
            &[2, 2],
            1e-5,
        );
        match r {
            Err(CheckError::Stochastic { .. }) => {
                let msg = r.unwrap_err().to_string();
                assert!(msg.contains("eval mode"), "{msg}");
            }
            other => panic!("expected stochastic error, got {other:?}"),
        }
    }

    #[test]
    fn eval_mode_dropout_passes() {
        let err = grad_check(
            |t, id| {
                let d = t.dropout(id, 0.5, false)?;
                let sq = t.mul(d, d)?;
                Ok(t.sum(sq))
            },
            &[1.0, 2.0],
            &[1, 2],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-8);
    }
}
