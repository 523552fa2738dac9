use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::{Gradients, ParamId, ParameterStore};

/// One objective evaluation handed to [`grad_check`].
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub loss: f64,
    /// Required for the base point; ignored for perturbed evaluations.
    pub grads: Option<Gradients<f64>>,
    /// Hash of the non-smooth branches taken (see `Graph::kink_signature`).
    pub kink_signature: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckConfig {
    pub step: f64,
    /// Coordinates sampled per parameter tensor.
    pub coords_per_param: usize,
    /// Coordinates whose analytic and numeric gradients are both below this
    /// magnitude are compared by absolute rather than relative error, since
    /// finite-difference roundoff dominates there. They are also only used
    /// to fill up the quota when too few larger coordinates exist.
    pub small_magnitude: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            coords_per_param: 8,
            small_magnitude: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoordinateCheck {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Largest relative error over coordinates with a gradient of at least
    /// `small_magnitude`.
    pub max_rel_error: f64,
    /// Largest absolute error over the remaining (near-zero) coordinates.
    pub max_abs_error_small: f64,
    pub checked_small: usize,
    pub worst: Option<CoordinateCheck>,
    pub checked: usize,
    /// Coordinates skipped because a perturbation crossed a kink.
    pub skipped_kinks: usize,
    pub per_param: Vec<ParamCheck>,
}

#[derive(Debug, Error, PartialEq)]
pub enum GradCheckError {
    #[error("objective returned a non-finite loss")]
    NonFinite,
    #[error("base evaluation did not return gradients")]
    MissingGradients,
}

/// Relative error `|a - n| / max(|a|, |n|, 1e-12)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12)
}

/// Compares analytic gradients against central finite differences on a
/// random subset of coordinates of every parameter.
pub fn grad_check<O>(
    store: &ParameterStore<f64>,
    mut objective: O,
    config: &GradCheckConfig,
) -> Result<GradCheckReport, GradCheckError>
where
    O: FnMut(&ParameterStore<f64>) -> Evaluation,
{
    let base = objective(store);
    if !base.loss.is_finite() {
        return Err(GradCheckError::NonFinite);
    }
    let grads = base.grads.ok_or(GradCheckError::MissingGradients)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut work = store.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error_small: 0.0,
        checked_small: 0,
        worst: None,
        checked: 0,
        skipped_kinks: 0,
        per_param: Vec::new(),
    };
    let h = config.step;

    for id in store.ids().collect::<Vec<ParamId>>() {
        let analytic = grads.dense(id, store);
        let coords = pick_coordinates(&analytic, config, &mut rng);
        let mut param = ParamCheck {
            name: store.name(id).to_string(),
            checked: 0,
            max_rel_error: 0.0,
        };
        for i in coords {
            let x0 = store.get(id).data()[i];
            work.get_mut(id).data_mut()[i] = x0 + h;
            let plus = objective(&work);
            work.get_mut(id).data_mut()[i] = x0 - h;
            let minus = objective(&work);
            work.get_mut(id).data_mut()[i] = x0;
            if !plus.loss.is_finite() || !minus.loss.is_finite() {
                return Err(GradCheckError::NonFinite);
            }
            if plus.kink_signature != base.kink_signature || minus.kink_signature != base.kink_signature {
                report.skipped_kinks += 1;
                continue;
            }
            let numeric = (plus.loss - minus.loss) / (2.0 * h);
            if analytic[i].abs().max(numeric.abs()) < config.small_magnitude {
                report.checked_small += 1;
                report.max_abs_error_small = report.max_abs_error_small.max((analytic[i] - numeric).abs());
                continue;
            }
            let err = relative_error(analytic[i], numeric);
            param.checked += 1;
            param.max_rel_error = param.max_rel_error.max(err);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some(CoordinateCheck {
                    param: param.name.clone(),
                    index: i,
                    analytic: analytic[i],
                    numeric,
                    rel_error: err,
                });
            }
        }
        report.per_param.push(param);
    }
    Ok(report)
}

fn pick_coordinates(analytic: &[f64], config: &GradCheckConfig, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut strong: Vec<usize> = (0..analytic.len())
        .filter(|&i| analytic[i].abs() >= config.small_magnitude)
        .collect();
    strong.shuffle(rng);
    strong.truncate(config.coords_per_param);
    if strong.len() < config.coords_per_param {
        let mut weak: Vec<usize> = (0..analytic.len())
            .filter(|&i| analytic[i].abs() < config.small_magnitude)
            .collect();
        weak.shuffle(rng);
        weak.truncate(config.coords_per_param - strong.len());
        strong.extend(weak);
    }
    strong
}
