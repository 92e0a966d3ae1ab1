use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Largest component-wise relative error, with denominator
    /// `max(1, |analytic|, |numeric|)`.
    pub max_rel_error: f64,
    /// `(input index, element index)` of the worst component.
    pub worst: (usize, usize),
    pub checked: usize,
}

/// Compares tape gradients of a scalar function against central differences.
pub fn grad_check<F>(f: F, point: &Tensor, epsilon: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    grad_check_many(|tape, vars| f(tape, vars[0]), std::slice::from_ref(point), epsilon)
}

/// Multi-input variant of [`grad_check`]: every element of every input is
/// perturbed in turn.
pub fn grad_check_many<F>(f: F, points: &[Tensor], epsilon: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(1e-7..=1e-3).contains(&epsilon) {
        return Err(Error::InvalidArgument(format!(
            "grad_check epsilon {epsilon} outside [1e-7, 1e-3]"
        )));
    }
    let eval = |inputs: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        scalar_of(&tape, out)
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = points.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    scalar_of(&tape, out)?;
    let grads = tape.backward(out)?;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        checked: 0,
    };
    let mut work: Vec<Tensor> = points.to_vec();
    for (i, &v) in vars.iter().enumerate() {
        let analytic = grads.tensor(&tape, v);
        for j in 0..points[i].numel() {
            let orig = points[i].data()[j];
            work[i].data_mut()[j] = orig + epsilon;
            let plus = eval(&work)?;
            work[i].data_mut()[j] = orig - epsilon;
            let minus = eval(&work)?;
            work[i].data_mut()[j] = orig;

            let numeric = (plus - minus) / (2.0 * epsilon);
            let a = analytic.data()[j];
            let rel = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = (i, j);
            }
            report.checked += 1;
        }
    }
    Ok(report)
}

fn scalar_of(tape: &Tape, v: Var) -> Result<f64> {
    tape.value(v).item().ok_or_else(|| {
        Error::InvalidArgument(format!(
            "grad_check needs a scalar output, got shape {:?}",
            tape.shape(v)
        ))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_map_is_exact() {
        let w = Tensor::matrix(3, 1, vec![0.5, -1.25, 2.0]).unwrap();
        let report = grad_check(
            |tape, x| {
                let w = tape.constant(w.clone());
                let y = tape.linear(x, w, None)?;
                Ok(tape.sum(y))
            },
            &Tensor::vector(vec![0.3, -0.7, 1.1]),
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-8, "{report:?}");
        assert_eq!(report.checked, 3);
    }

    #[test]
    fn rejects_non_scalar_and_bad_epsilon() {
        let p = Tensor::vector(vec![1.0, 2.0]);
        assert!(grad_check(|t, x| Ok(t.tanh(x)), &p, 1e-5).is_err());
        assert!(grad_check(|t, x| Ok(t.sum(x)), &p, 1e-1).is_err());
    }
}
