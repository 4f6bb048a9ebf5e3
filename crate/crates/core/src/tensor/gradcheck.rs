use super::{Real, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Outcome of a finite-difference comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    /// `max |analytic − numeric| / max(|analytic|, |numeric|, 1e-8)`.
    pub max_rel_error: f64,
    /// Location of the worst coordinate as (parameter, flat index).
    pub worst: (usize, usize),
    pub coordinates: usize,
}

/// Conventional probe step: 1e-3 for 32-bit, 1e-6 for 64-bit.
pub fn default_eps<F: Real>() -> F {
    if std::mem::size_of::<F>() <= 4 {
        F::of(1e-3)
    } else {
        F::of(1e-6)
    }
}

fn eval<F: Real, Fun>(f: &Fun, params: &[Tensor<F>]) -> Result<(Tape<F>, Vec<Var>, Var)>
where
    Fun: Fn(&mut Tape<F>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p)).collect();
    let out = f(&mut tape, &vars)?;
    Ok((tape, vars, out))
}

/// Compares the tape gradient of the scalar `f(params)` against central
/// differences with step `eps` (see [`default_eps`] when unsure).
pub fn grad_check<F: Real, Fun>(f: Fun, params: &[Tensor<F>], eps: F) -> Result<GradCheckReport>
where
    Fun: Fn(&mut Tape<F>, &[Var]) -> Result<Var>,
{
    let (mut tape, vars, loss) = eval(&f, params)?;
    tape.backward(loss)?;
    let analytic: Vec<Vec<F>> = vars
        .iter()
        .zip(params)
        .map(|(&v, p)| tape.grad(v).map_or_else(|| vec![F::zero(); p.numel()], <[F]>::to_vec))
        .collect();
    drop(tape);

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        coordinates: 0,
    };
    let mut probe = params.to_vec();
    for (pi, grads) in analytic.iter().enumerate() {
        for idx in 0..grads.len() {
            let orig = probe[pi].data()[idx];
            let mut at = |x: F| -> Result<f64> {
                probe[pi].data_mut()[idx] = x;
                let (tape, _, out) = eval(&f, &probe)?;
                let v = tape.value(out).item();
                if !v.is_finite() {
                    return Err(Error::ProbeFailure { param: pi, index: idx });
                }
                Ok(v.as_f64())
            };
            let plus = at(orig + eps)?;
            let minus = at(orig - eps)?;
            probe[pi].data_mut()[idx] = orig;
            let numeric = (plus - minus) / (2.0 * eps.as_f64());
            let a = grads[idx].as_f64();
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = (pi, idx);
            }
            report.coordinates += 1;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let x = Tensor::from_vec(vec![1], vec![3.0f64]).unwrap();
        let report = grad_check(
            |t, v| {
                let sq = t.mul(v[0], v[0])?;
                t.sum(sq)
            },
            &[x],
            1e-3,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-9, "{report:?}");
    }

    #[test]
    fn non_finite_probe_is_reported() {
        let x = Tensor::from_vec(vec![2], vec![1.0f32, 2.0]).unwrap();
        let err = grad_check(
            |t, v| {
                let big = t.scale(v[0], 1e300)?;
                t.sum(big)
            },
            &[x],
            1e-3,
        );
        assert!(matches!(err, Err(Error::ProbeFailure { param: 0, index: 0 })));
    }
}
