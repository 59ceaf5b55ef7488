//! Central finite-difference gradient checking.

use rand::seq::index::sample;
use rand::Rng;

use crate::error::{DiffError, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Options for [`grad_check`].
#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Check every coordinate when the total is at most this many,
    /// otherwise a uniform random subsample of this size.
    pub max_coords: usize,
    /// Lower bound on the relative-error denominator, so coordinates whose
    /// true gradient is ~0 are judged by absolute error.
    pub denom_floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            max_coords: 256,
            denom_floor: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoordError {
    pub tensor: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub coords_checked: usize,
    pub worst: Option<CoordError>,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

/// Builds a scalar from parameter leaves. Called repeatedly on fresh graphs.
pub trait ScalarFn: Fn(&mut Graph, &[Var]) -> Result<Var> {}
impl<F: Fn(&mut Graph, &[Var]) -> Result<Var>> ScalarFn for F {}

fn evaluate<F: ScalarFn>(f: &F, params: &[Tensor]) -> Result<f64> {
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let out = f(&mut g, &vars)?;
    let v = g.value(out);
    if v.len() != 1 {
        return Err(DiffError::NonScalarLoss(v.shape().to_vec()));
    }
    let x = v.item();
    if !x.is_finite() {
        return Err(DiffError::NonFiniteLoss(x));
    }
    Ok(x)
}

/// Analytic gradients of `f` at `params` via [`Graph::backward`].
pub fn analytic_gradients<F: ScalarFn>(f: &F, params: &[Tensor]) -> Result<Vec<Tensor>> {
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let out = f(&mut g, &vars)?;
    let x = g.value(out).item();
    if !x.is_finite() {
        return Err(DiffError::NonFiniteLoss(x));
    }
    let grads = g.backward(out)?;
    Ok(vars.iter().map(|&v| grads.get(v)).collect())
}

/// Compares `analytic` against central differences of `f`.
pub fn compare_gradients<F: ScalarFn, R: Rng + ?Sized>(
    f: &F,
    params: &[Tensor],
    analytic: &[Tensor],
    opts: GradCheckOptions,
    rng: &mut R,
) -> Result<GradCheckReport> {
    if !(opts.step > 0.0) {
        return Err(DiffError::InvalidArgument(format!("step must be > 0, got {}", opts.step)));
    }
    if analytic.len() != params.len() {
        return Err(DiffError::GradientCount {
            expected: params.len(),
            found: analytic.len(),
        });
    }
    let coords: Vec<(usize, usize)> = params
        .iter()
        .enumerate()
        .flat_map(|(t, p)| (0..p.len()).map(move |i| (t, i)))
        .collect();
    let chosen: Vec<(usize, usize)> = if coords.len() <= opts.max_coords {
        coords
    } else {
        let mut idx = sample(rng, coords.len(), opts.max_coords).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| coords[i]).collect()
    };

    let mut work = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        coords_checked: 0,
        worst: None,
    };
    for (t, i) in chosen {
        let orig = work[t].data()[i];
        work[t].data_mut()[i] = orig + opts.step;
        let plus = evaluate(f, &work)?;
        work[t].data_mut()[i] = orig - opts.step;
        let minus = evaluate(f, &work)?;
        work[t].data_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * opts.step);
        let a = analytic[t].data()[i];
        let denom = a.abs().max(numeric.abs()).max(opts.denom_floor);
        let rel = (a - numeric).abs() / denom;
        report.coords_checked += 1;
        if rel > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(rel);
            report.worst = Some(CoordError {
                tensor: t,
                index: i,
                analytic: a,
                numeric,
                rel_error: rel,
            });
        }
    }
    Ok(report)
}

/// Checks backprop of `f` against central finite differences.
pub fn grad_check<F: ScalarFn, R: Rng + ?Sized>(
    f: &F,
    params: &[Tensor],
    opts: GradCheckOptions,
    rng: &mut R,
) -> Result<GradCheckReport> {
    let analytic = analytic_gradients(f, params)?;
    compare_gradients(f, params, &analytic, opts, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn quadratic(g: &mut Graph, p: &[Var]) -> Result<Var> {
        let sq = g.square(p[0]);
        let s = g.sum(sq);
        let lin = g.scale(p[0], 3.0);
        let l = g.sum(lin);
        g.add(s, l)
    }

    #[test]
    fn quadratic_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = Tensor::uniform(3, 4, 2.0, &mut rng);
        let r = grad_check(&quadratic, &[p], GradCheckOptions::default(), &mut rng).unwrap();
        assert!(r.max_rel_error < 1e-8, "{r:?}");
        assert_eq!(r.coords_checked, 12);
    }

    #[test]
    fn corrupted_gradient_is_flagged() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = Tensor::uniform(2, 2, 1.0, &mut rng);
        let mut grads = analytic_gradients(&quadratic, std::slice::from_ref(&p)).unwrap();
        grads[0].data_mut()[1] += 0.5;
        let r = compare_gradients(&quadratic, &[p], &grads, GradCheckOptions::default(), &mut rng).unwrap();
        assert!(r.max_rel_error > 1e-2);
        assert_eq!(r.worst.unwrap().index, 1);
    }

    #[test]
    fn subsamples_large_params() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = Tensor::uniform(40, 40, 1.0, &mut rng);
        let r = grad_check(&quadratic, &[p], GradCheckOptions::default(), &mut rng).unwrap();
        assert_eq!(r.coords_checked, 256);
    }

    #[test]
    fn non_finite_loss_fails() {
        let f = |g: &mut Graph, p: &[Var]| -> Result<Var> {
            let e = g.scale(p[0], 1e6);
            let e = g.exp(e);
            Ok(g.sum(e))
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let r = grad_check(&f, &[Tensor::scalar(1.0)], GradCheckOptions::default(), &mut rng);
        assert!(matches!(r, Err(DiffError::NonFiniteLoss(_))));
    }

    #[test]
    fn rejects_non_positive_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let opts = GradCheckOptions {
            step: 0.0,
            ..Default::default()
        };
        assert!(grad_check(&quadratic, &[Tensor::scalar(1.0)], opts, &mut rng).is_err());
    }
}
