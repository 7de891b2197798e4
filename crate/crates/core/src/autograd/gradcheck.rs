use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, ParamStore, Var};
use crate::error::{Error, Result};
use crate::tensor::ops::NormMode;

pub const DEFAULT_EPS: f64 = 1e-4;
pub const DEFAULT_SAMPLES: usize = 64;
pub const DEFAULT_FLOOR: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckOptions {
    /// Central-difference half step.
    pub eps: f64,
    /// Coordinates checked per parameter (all of them for smaller ones).
    pub samples: usize,
    pub seed: u64,
    /// Smallest gradient magnitude used as a relative-error denominator.
    pub floor: f64,
    /// Retries of a kink-crossing coordinate, each with a tenfold smaller step.
    pub kink_retries: usize,
}

impl GradCheckOptions {
    /// Settings for whole-network checks, where loss round-off is around
    /// 1e-14 and gradients below 1e-3 can only be resolved absolutely.
    pub fn end_to_end() -> Self {
        GradCheckOptions {
            eps: 1e-5,
            samples: 2,
            seed: 0,
            floor: 1e-3,
            kink_retries: 1,
        }
    }
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            eps: DEFAULT_EPS,
            samples: DEFAULT_SAMPLES,
            seed: 0,
            floor: DEFAULT_FLOOR,
            kink_retries: 1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub checked: usize,
    /// Coordinates whose perturbation crossed a kink.
    pub skipped: usize,
    pub max_rel_err: f64,
    /// Flat index and (analytic, numeric) values at the worst coordinate.
    pub worst: (usize, f64, f64),
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.params
            .iter()
            .map(|p| p.max_rel_err)
            .fold(0.0, f64::max)
    }

    pub fn checked(&self) -> usize {
        self.params.iter().map(|p| p.checked).sum()
    }

    pub fn skipped(&self) -> usize {
        self.params.iter().map(|p| p.skipped).sum()
    }

    pub fn worst(&self) -> Option<&ParamCheck> {
        self.params
            .iter()
            .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
    }
}

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Loss value and kink signature.
fn eval_loss<F>(store: &ParamStore<f64>, mode: NormMode, f: &F) -> Result<(f64, u64)>
where
    F: Fn(&mut Graph<'_, f64>) -> Result<Var>,
{
    let mut g = Graph::new(store, mode);
    let loss = f(&mut g)?;
    let v = g.value(loss).item()?;
    if !v.is_finite() {
        return Err(Error::NonFinite {
            op: "grad_check loss",
        });
    }
    Ok((v, g.kink_signature()))
}

/// Coordinates tried per wanted sample before giving up on a parameter.
const MAX_TRIES_PER_SAMPLE: usize = 16;

/// Compares reverse-mode gradients of the scalar built by `f` against
/// central differences on sampled coordinates of every parameter.
///
/// A coordinate whose ±eps evaluations change any nonsmooth decision (see
/// [`Graph::kink_signature`]) is skipped and another one is drawn, since a
/// central difference across a kink does not estimate the derivative.
pub fn grad_check<F>(
    store: &mut ParamStore<f64>,
    mode: NormMode,
    opts: &GradCheckOptions,
    f: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_, f64>) -> Result<Var>,
{
    let GradCheckOptions {
        eps,
        samples,
        seed,
        floor,
        kink_retries,
    } = *opts;
    if !(eps > 0.0) || !(floor > 0.0) {
        return Err(Error::InvalidArgument(
            "grad_check eps and floor must be positive".into(),
        ));
    }
    let (grads, base) = {
        let mut g = Graph::new(&*store, mode);
        let loss = f(&mut g)?;
        if !g.value(loss).item()?.is_finite() {
            return Err(Error::NonFinite {
                op: "grad_check loss",
            });
        }
        (g.backward(loss)?, g.kink_signature())
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport { params: Vec::new() };
    let ids: Vec<_> = store.param_ids().collect();
    for id in ids {
        let numel = store.param(id).value.numel();
        let want = samples.min(numel);
        let tries = (want * MAX_TRIES_PER_SAMPLE).min(numel);
        let coords = rand::seq::index::sample(&mut rng, numel, tries).into_vec();
        let mut check = ParamCheck {
            name: store.param(id).name.clone(),
            checked: 0,
            skipped: 0,
            max_rel_err: 0.0,
            worst: (0, 0.0, 0.0),
        };
        for &i in &coords {
            if check.checked == want {
                break;
            }
            let orig = store.param(id).value.data()[i];
            let mut numeric = None;
            let mut h = eps;
            for _ in 0..=kink_retries {
                store.param_mut(id).value.data_mut()[i] = orig + h;
                let plus = eval_loss(store, mode, &f);
                store.param_mut(id).value.data_mut()[i] = orig - h;
                let minus = eval_loss(store, mode, &f);
                store.param_mut(id).value.data_mut()[i] = orig;
                let ((plus, sp), (minus, sm)) = (plus?, minus?);
                if sp == base && sm == base {
                    numeric = Some((plus - minus) / (2.0 * h));
                    break;
                }
                h /= 10.0;
            }
            let Some(numeric) = numeric else {
                check.skipped += 1;
                continue;
            };
            check.checked += 1;
            let analytic = grads.get(id).map_or(0.0, |g| g.data()[i]);
            let e = rel_err(analytic, numeric, floor);
            if e >= check.max_rel_err {
                check.max_rel_err = e;
                check.worst = (i, analytic, numeric);
            }
        }
        report.params.push(check);
    }
    Ok(report)
}
