use super::{NumericError, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub eps: f64,
    /// Skip coordinates where the forward and backward one-sided slopes
    /// disagree, i.e. a ReLU/max kink lies within `eps` of the point.
    pub skip_kinks: bool,
    /// Relative one-sided slope disagreement that marks a kink.
    pub kink_tol: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-4,
            skip_kinks: false,
            kink_tol: 1e-2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// max over checked coordinates of `|a − n| / max(1, |a|, |n|)`.
    pub max_rel_err: f64,
    pub checked: usize,
    pub skipped: usize,
    /// (input index, flat coordinate) of the worst coordinate.
    pub worst: Option<(usize, usize)>,
}

/// Compares tape gradients of the scalar `f(x)` against central differences.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<GradCheckReport, NumericError>
where
    F: Fn(&mut Tape, Var) -> Result<Var, NumericError>,
{
    grad_check_many(
        |tape, vars| f(tape, vars[0]),
        std::slice::from_ref(x),
        GradCheckOptions {
            eps,
            ..Default::default()
        },
    )
}

/// Multi-input form of [`grad_check`]: every coordinate of every input is
/// perturbed in turn.
pub fn grad_check_many<F>(
    f: F,
    xs: &[Tensor],
    opts: GradCheckOptions,
) -> Result<GradCheckReport, NumericError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, NumericError>,
{
    let eval = |inputs: &[Tensor]| -> Result<f64, NumericError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        scalar_of(&tape, out)
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = xs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let f0 = scalar_of(&tape, out)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.wrt(v).clone()).collect();
    drop(tape);

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        checked: 0,
        skipped: 0,
        worst: None,
    };
    let mut probe = xs.to_vec();
    for (ti, x) in xs.iter().enumerate() {
        for k in 0..x.len() {
            let orig = x.data()[k];
            probe[ti].data_mut()[k] = orig + opts.eps;
            let fp = eval(&probe)?;
            probe[ti].data_mut()[k] = orig - opts.eps;
            let fm = eval(&probe)?;
            probe[ti].data_mut()[k] = orig;

            if opts.skip_kinks {
                let fwd = (fp - f0) / opts.eps;
                let bwd = (f0 - fm) / opts.eps;
                if (fwd - bwd).abs() > opts.kink_tol * 1f64.max(fwd.abs()).max(bwd.abs()) {
                    report.skipped += 1;
                    continue;
                }
            }
            let numeric = (fp - fm) / (2.0 * opts.eps);
            let a = analytic[ti].data()[k];
            let rel = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            report.checked += 1;
            if report.worst.is_none() || rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = Some((ti, k));
            }
        }
    }
    Ok(report)
}

fn scalar_of(tape: &Tape, v: Var) -> Result<f64, NumericError> {
    let t = tape.value(v);
    if t.len() != 1 {
        return Err(NumericError::Contract(format!(
            "gradient check needs a scalar function, got shape {:?}",
            t.shape()
        )));
    }
    Ok(t.data()[0])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        // f(x) = x², analytic 6 at x = 3
        let r = grad_check(
            |t, x| {
                let sq = t.matmul(x, x)?;
                Ok(t.sum(sq))
            },
            &Tensor::matrix(1, 1, vec![3.0]).unwrap(),
            1e-4,
        )
        .unwrap();
        assert!(r.max_rel_err < 1e-6, "{r:?}");
    }

    #[test]
    fn constant_function_has_zero_gradients() {
        let r = grad_check(
            |t, _| Ok(t.constant(Tensor::scalar(5.0))),
            &Tensor::ones(&[2, 2]),
            1e-4,
        )
        .unwrap();
        assert_eq!(r.max_rel_err, 0.0);
        assert_eq!(r.checked, 4);
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // relu at exactly 0 has a one-sided slope of 1 but tape gradient 0
        let r = grad_check(
            |t, x| {
                let y = t.relu(x);
                Ok(t.sum(y))
            },
            &Tensor::zeros(&[1, 1]),
            1e-4,
        )
        .unwrap();
        assert!(r.max_rel_err > 0.4);

        let r = grad_check_many(
            |t, x| {
                let y = t.relu(x[0]);
                Ok(t.sum(y))
            },
            &[Tensor::zeros(&[1, 1])],
            GradCheckOptions {
                skip_kinks: true,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!((r.checked, r.skipped), (0, 1));
    }

    #[test]
    fn non_scalar_function_rejected() {
        let r = grad_check(|t, x| Ok(t.relu(x)), &Tensor::ones(&[2, 1]), 1e-4);
        assert!(matches!(r, Err(NumericError::Contract(_))));
    }
}
