use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Matrix, NumericsError};

/// Denominator floor for relative errors. Below this magnitude central
/// differences at `h = 1e-5` are dominated by roundoff (about `eps * |f| / h`),
/// so such coordinates are compared on an absolute scale instead.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-4;

/// Which parameter coordinates a finite-difference check visits.
#[derive(Clone, Copy, Debug)]
pub enum Coordinates {
    All,
    /// `count` coordinates drawn without replacement among the finite ones.
    Sampled { count: usize, seed: u64 },
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// `(parameter index, flat element index)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
}

/// Compares `analytic` against central differences `(f(p+h) - f(p-h)) / 2h`.
///
/// `params` is perturbed in place one coordinate at a time and restored
/// afterwards. Non-finite parameter entries (masked transitions) are skipped.
pub fn finite_diff_check<F>(
    mut f: F,
    params: &mut [Matrix],
    analytic: &[Matrix],
    h: f64,
    coords: Coordinates,
) -> Result<GradCheckReport, NumericsError>
where
    F: FnMut(&[Matrix]) -> f64,
{
    if params.len() != analytic.len() {
        return Err(NumericsError::ParamCount {
            params: params.len(),
            grads: analytic.len(),
        });
    }
    for (p, g) in params.iter().zip(analytic) {
        if p.shape() != g.shape() {
            return Err(NumericsError::shape("finite_diff_check", p.shape(), g.shape()));
        }
    }

    let mut all = Vec::new();
    for (pi, p) in params.iter().enumerate() {
        for (ei, v) in p.data().iter().enumerate() {
            if v.is_finite() {
                all.push((pi, ei));
            }
        }
    }
    let chosen: Vec<(usize, usize)> = match coords {
        Coordinates::All => all,
        Coordinates::Sampled { count, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = count.min(all.len());
            let mut picked: Vec<usize> = sample(&mut rng, all.len(), n).into_vec();
            picked.sort_unstable();
            picked.into_iter().map(|i| all[i]).collect()
        }
    };

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: None,
        checked: 0,
    };
    for (pi, ei) in chosen {
        let original = params[pi].data()[ei];
        params[pi].data_mut()[ei] = original + h;
        let plus = f(params);
        params[pi].data_mut()[ei] = original - h;
        let minus = f(params);
        params[pi].data_mut()[ei] = original;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(NumericsError::NonFinite { param: pi, element: ei });
        }
        let numeric = (plus - minus) / (2.0 * h);
        let exact = analytic[pi].data()[ei];
        let err = relative_error(exact, numeric);
        report.checked += 1;
        if report.worst.is_none() || err > report.max_relative_error {
            report.max_relative_error = err;
            report.worst = Some((pi, ei));
        }
    }
    Ok(report)
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(RELATIVE_ERROR_FLOOR)
}
