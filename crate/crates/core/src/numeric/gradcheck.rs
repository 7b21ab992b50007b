use rand::Rng;

use super::{Matrix, ParamStore, Tape, Var};
use crate::error::{Error, Result};

/// Outcome of [`finite_diff_check`].
#[derive(Clone, Debug)]
pub struct GradCheck {
    pub max_relative_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

fn scalar_loss<F>(loss_fn: &mut F, params: &ParamStore) -> Result<f64>
where
    F: FnMut(&ParamStore, &mut Tape) -> Result<Var>,
{
    let mut tape = Tape::new();
    let out = loss_fn(params, &mut tape)?;
    let v = tape.value(out);
    if v.shape() != (1, 1) {
        return Err(Error::Shape {
            op: "finite_diff_check loss",
            left: v.shape(),
            right: (1, 1),
        });
    }
    Ok(v.item())
}

/// Compares recorded gradients against central differences on `samples`
/// randomly chosen scalar parameters.
///
/// `loss_fn` records a scalar loss on the tape it is given and must be
/// deterministic. The relative error of each entry is
/// `|a - n| / max(|a|, |n|, 1e-8)`. Gradient slots in `params` are zeroed
/// on entry and hold the analytic gradient on return.
pub fn finite_diff_check<F, R>(
    mut loss_fn: F,
    params: &mut ParamStore,
    eps: f64,
    samples: usize,
    rng: &mut R,
) -> Result<GradCheck>
where
    F: FnMut(&ParamStore, &mut Tape) -> Result<Var>,
    R: Rng + ?Sized,
{
    if !(eps > 0.0) {
        return Err(Error::param("finite-difference step must be positive"));
    }
    params.zero_grads();
    {
        let mut tape = Tape::new();
        let out = loss_fn(params, &mut tape)?;
        tape.backward(out, &Matrix::scalar(1.0), params)?;
    }

    let slots: Vec<(String, usize)> = params
        .iter()
        .flat_map(|(name, p)| (0..p.value.len()).map(move |i| (name.to_owned(), i)))
        .collect();
    if slots.is_empty() {
        return Ok(GradCheck {
            max_relative_error: 0.0,
            worst: None,
            checked: 0,
        });
    }
    let picks = rand::seq::index::sample(rng, slots.len(), samples.min(slots.len()));

    let mut report = GradCheck {
        max_relative_error: 0.0,
        worst: None,
        checked: 0,
    };
    for pick in picks.iter() {
        let (name, idx) = &slots[pick];
        let analytic = params.grad(name).expect("sampled name exists").as_slice()[*idx];
        let original = params.value(name)?.as_slice()[*idx];

        let mut probe = |delta: f64, params: &mut ParamStore| -> Result<f64> {
            params.get_mut(name).expect("exists").value.as_mut_slice()[*idx] = original + delta;
            scalar_loss(&mut loss_fn, params)
        };
        let plus = probe(eps, params)?;
        let minus = probe(-eps, params)?;
        params.get_mut(name).expect("exists").value.as_mut_slice()[*idx] = original;

        let numeric = (plus - minus) / (2.0 * eps);
        let denom = analytic.abs().max(numeric.abs()).max(1e-8);
        let rel = (analytic - numeric).abs() / denom;
        if rel > report.max_relative_error || report.worst.is_none() {
            report.max_relative_error = report.max_relative_error.max(rel);
            report.worst = Some((name.clone(), *idx));
        }
        report.checked += 1;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn quadratic_is_exact() {
        let mut store = ParamStore::new();
        store.insert("theta", Matrix::scalar(3.0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let check = finite_diff_check(
            |p, t| {
                let x = t.param(p, "theta")?;
                t.mul(x, x)
            },
            &mut store,
            1e-5,
            1,
            &mut rng,
        )
        .unwrap();
        assert!(check.max_relative_error < 1e-8, "{check:?}");
        assert_eq!(store.grad("theta").unwrap().item(), 6.0);
    }

    #[test]
    fn tanh_at_zero() {
        let mut store = ParamStore::new();
        store.insert("theta", Matrix::scalar(0.0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let check = finite_diff_check(
            |p, t| {
                let x = t.param(p, "theta")?;
                Ok(t.tanh(x))
            },
            &mut store,
            1e-5,
            1,
            &mut rng,
        )
        .unwrap();
        assert!(check.max_relative_error < 1e-8, "{check:?}");
    }

    #[test]
    fn rejects_nonpositive_eps() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = finite_diff_check(
            |_, t| Ok(t.constant(Matrix::scalar(0.0))),
            &mut store,
            0.0,
            1,
            &mut rng,
        );
        assert!(r.is_err());
    }
}
