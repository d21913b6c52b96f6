//! Monte Carlo robustness comparison of the game-theoretic and weighted-sum
//! schedules under degradation-parameter uncertainty.
//!
//! The uncertain parameter is the per-interval coefficient bundle
//! `zeta = (B1_t, B2_hat_t)_{t<T}` (2T coordinates). Draws are independent
//! per-coordinate uniforms on `[low * zeta0, high * zeta0]`, deterministic
//! per `(seed, draw index)` so parallel and serial runs agree bitwise.
//!
//! Two metrics per draw and hyperparameter value:
//!
//! * sensitivity — displacement of the argmin per unit parameter change,
//!   `|u(zeta0) - u(zeta)| / |zeta - zeta0|`;
//! * empirical regret — relative objective loss from optimizing against the
//!   nominal bundle instead of the realized one,
//!   `(F(u(zeta0), zeta) - F(u(zeta), zeta)) / F(u(zeta), zeta)`.
//!
//! Total cost can cross zero (V2G revenue can outweigh degradation), so
//! regret draws whose denominator is too small are excluded and counted
//! rather than reported with a flipped sign.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::equilibrium::{GameInstance, ZetaBundle};
use crate::qp::SolveSettings;
use crate::session::assign_intervals;
use crate::{Error, Result};

/// Uniform multiplicative perturbation around the nominal bundle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbationSpec {
    pub low_factor: f64,
    pub high_factor: f64,
    pub sample_count: usize,
    pub rng_seed: u64,
}

impl Default for PerturbationSpec {
    fn default() -> Self {
        Self {
            low_factor: 0.9,
            high_factor: 1.1,
            sample_count: 100,
            rng_seed: 2024,
        }
    }
}

impl PerturbationSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.low_factor > 0.0 && self.low_factor <= 1.0 && self.high_factor >= 1.0) {
            return Err(Error::domain(format!(
                "need 0 < low <= 1 <= high, got [{}, {}]",
                self.low_factor, self.high_factor
            )));
        }
        if self.sample_count == 0 {
            return Err(Error::domain("sample_count must be >= 1"));
        }
        Ok(())
    }
}

/// Relative-regret guard: draws with |denominator| below this times
/// `(1 + |numerator|)` are excluded and counted.
pub const REGRET_DENOMINATOR_GUARD: f64 = 1e-6;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic per-(seed, index) generator for one draw.
fn draw_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut state = seed;
    let a = splitmix64(&mut state);
    let mut state2 = index as u64 ^ 0xA5A5_A5A5_5A5A_5A5A;
    let b = splitmix64(&mut state2);
    ChaCha8Rng::seed_from_u64(a ^ b.rotate_left(17))
}

/// Draw number `index` of the perturbed bundle: every coordinate is an
/// independent uniform on `[low * nominal, high * nominal]`.
pub fn draw_zeta(spec: &PerturbationSpec, nominal: &ZetaBundle, index: usize) -> ZetaBundle {
    let mut rng = draw_rng(spec.rng_seed, index);
    let mut factor = |v: f64| -> f64 {
        if spec.low_factor == spec.high_factor {
            return v * spec.low_factor;
        }
        v * rng.gen_range(spec.low_factor..=spec.high_factor)
    };
    ZetaBundle {
        b1: nominal.b1.iter().map(|&v| factor(v)).collect(),
        b2_hat: nominal.b2_hat.iter().map(|&v| factor(v)).collect(),
    }
}

/// Which optimization is being perturbed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Objective {
    /// The splitting-game potential (hyperparameter is the instance's split).
    Potential,
    /// The weighted sum with the given weight.
    WeightedSum(f64),
}

fn argmin(instance: &GameInstance, objective: Objective, settings: &SolveSettings) -> Result<Vec<f64>> {
    match objective {
        Objective::Potential => instance.argmin_potential(settings),
        Objective::WeightedSum(rho) => instance.argmin_multiobjective(rho, settings),
    }
}

fn objective_value(instance: &GameInstance, objective: Objective, p: &[f64]) -> f64 {
    match objective {
        Objective::Potential => instance.potential_value(p),
        Objective::WeightedSum(rho) => instance.multiobjective_value(rho, p),
    }
}

fn euclidean_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Sensitivity of one draw; `None` when the perturbation has zero norm.
pub fn sensitivity_sample(
    nominal: &GameInstance,
    objective: Objective,
    zeta: &ZetaBundle,
    settings: &SolveSettings,
) -> Result<Option<f64>> {
    let dist = nominal.coeffs.distance(zeta);
    if dist == 0.0 {
        return Ok(None);
    }
    let u0 = argmin(nominal, objective, settings)?;
    let perturbed = nominal.with_coefficients(zeta.clone())?;
    let u1 = argmin(&perturbed, objective, settings)?;
    Ok(Some(euclidean_distance(&u0, &u1) / dist))
}

/// Raw regret pieces of one draw; `value` is `None` when the denominator
/// guard excluded the draw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegretSample {
    pub numerator: f64,
    pub denominator: f64,
    pub value: Option<f64>,
}

pub fn regret_sample(
    nominal: &GameInstance,
    objective: Objective,
    zeta: &ZetaBundle,
    settings: &SolveSettings,
) -> Result<RegretSample> {
    let u_nominal = argmin(nominal, objective, settings)?;
    let perturbed = nominal.with_coefficients(zeta.clone())?;
    let u_aware = if nominal.coeffs == *zeta {
        // Identical bundle means identical optimizer; keep the regret at an
        // exact zero instead of re-solving into round-off.
        u_nominal.clone()
    } else {
        argmin(&perturbed, objective, settings)?
    };
    let at_nominal_choice = objective_value(&perturbed, objective, &u_nominal);
    // The true parameter-aware optimum can never exceed any feasible
    // candidate; taking the tighter of the two known values absorbs last-bit
    // solver noise when both argmins coincide.
    let at_aware_choice =
        objective_value(&perturbed, objective, &u_aware).min(at_nominal_choice);
    let numerator = at_nominal_choice - at_aware_choice;
    let denominator = at_aware_choice;
    let value = if denominator.abs() < REGRET_DENOMINATOR_GUARD * (1.0 + numerator.abs()) {
        None
    } else {
        Some(numerator / denominator)
    };
    Ok(RegretSample {
        numerator,
        denominator,
        value,
    })
}

/// Five-number summary for box plots.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
}

/// Linear-interpolation quantile (type 7) of an unsorted sample set.
pub fn quantile(samples: &[f64], q: f64) -> f64 {
    assert!(!samples.is_empty(), "quantile of empty sample set");
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
    }
}

pub fn quantiles(samples: &[f64]) -> Quantiles {
    Quantiles {
        min: quantile(samples, 0.0),
        q25: quantile(samples, 0.25),
        median: quantile(samples, 0.5),
        q75: quantile(samples, 0.75),
        max: quantile(samples, 1.0),
    }
}

/// Samples and summary statistics for one hyperparameter value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperStats {
    /// `w` (as a float) for the game, `rho` for the weighted sum.
    pub hyper: f64,
    pub sensitivity: Vec<f64>,
    pub regret: Vec<f64>,
    pub regret_numerators: Vec<f64>,
    pub regret_excluded: usize,
    pub sensitivity_quantiles: Quantiles,
    pub regret_quantiles: Quantiles,
}

/// Full comparison output for both approaches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessSummary {
    pub game_theoretic: Vec<HyperStats>,
    pub multi_objective: Vec<HyperStats>,
    pub draws: usize,
    pub rng_seed: u64,
    pub low_factor: f64,
    pub high_factor: f64,
}

impl RobustnessSummary {
    fn pooled(stats: &[HyperStats], pick: fn(&HyperStats) -> &Vec<f64>) -> Vec<f64> {
        stats.iter().flat_map(|h| pick(h).iter().copied()).collect()
    }

    pub fn pooled_median_sensitivity_gt(&self) -> f64 {
        quantile(&Self::pooled(&self.game_theoretic, |h| &h.sensitivity), 0.5)
    }

    pub fn pooled_median_sensitivity_mo(&self) -> f64 {
        quantile(&Self::pooled(&self.multi_objective, |h| &h.sensitivity), 0.5)
    }

    pub fn pooled_median_regret_gt(&self) -> f64 {
        quantile(&Self::pooled(&self.game_theoretic, |h| &h.regret), 0.5)
    }

    pub fn pooled_median_regret_mo(&self) -> f64 {
        quantile(&Self::pooled(&self.multi_objective, |h| &h.regret), 0.5)
    }

    pub fn min_regret_numerator(&self) -> f64 {
        self.game_theoretic
            .iter()
            .chain(&self.multi_objective)
            .flat_map(|h| h.regret_numerators.iter().copied())
            .fold(f64::INFINITY, f64::min)
    }
}

/// Hyperparameter grids for the two approaches; entry `k` of each side is
/// treated as the matched pair `(w_k, rho_k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperGrid {
    pub w_values: Vec<usize>,
    pub rho_values: Vec<f64>,
}

impl HyperGrid {
    /// Full grid: `w` over `0..=T` and `T + 1` evenly spaced weights.
    pub fn matched(t: usize) -> Self {
        Self {
            w_values: (0..=t).collect(),
            rho_values: crate::equilibrium::rho_grid(t),
        }
    }
}

/// Run the full cross of hyperparameters and draws on one base instance.
/// The splitting game is re-split per `w` with the price-based rule; the
/// weighted sum reuses the base instance per `rho`. Draw `i` uses the bundle
/// from [`draw_zeta`] with index `i`, shared between the two approaches.
pub fn run_comparison(
    base: &GameInstance,
    spec: &PerturbationSpec,
    grid: &HyperGrid,
    settings: &SolveSettings,
) -> Result<RobustnessSummary> {
    spec.validate()?;
    if grid.w_values.is_empty() || grid.rho_values.is_empty() {
        return Err(Error::domain("hyperparameter grid must be non-empty"));
    }
    let draws: Vec<ZetaBundle> = (0..spec.sample_count)
        .map(|i| draw_zeta(spec, &base.coeffs, i))
        .collect();

    let gt = grid
        .w_values
        .par_iter()
        .map(|&w| -> Result<HyperStats> {
            let split = assign_intervals(&base.cfg.alpha_eur_per_kwh, w)?;
            let instance = base.with_split(split)?;
            hyper_stats(&instance, Objective::Potential, w as f64, &draws, settings)
        })
        .collect::<Result<Vec<_>>>()?;

    let mo = grid
        .rho_values
        .par_iter()
        .map(|&rho| -> Result<HyperStats> {
            hyper_stats(base, Objective::WeightedSum(rho), rho, &draws, settings)
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(RobustnessSummary {
        game_theoretic: gt,
        multi_objective: mo,
        draws: spec.sample_count,
        rng_seed: spec.rng_seed,
        low_factor: spec.low_factor,
        high_factor: spec.high_factor,
    })
}

fn hyper_stats(
    instance: &GameInstance,
    objective: Objective,
    hyper: f64,
    draws: &[ZetaBundle],
    settings: &SolveSettings,
) -> Result<HyperStats> {
    // One nominal solve shared by all draws of this hyperparameter value.
    let u0 = argmin(instance, objective, settings)?;
    let per_draw: Vec<(Option<f64>, RegretSample)> = draws
        .par_iter()
        .map(|zeta| -> Result<(Option<f64>, RegretSample)> {
            let dist = instance.coeffs.distance(zeta);
            let perturbed = instance.with_coefficients(zeta.clone())?;
            let u1 = if instance.coeffs == *zeta {
                u0.clone()
            } else {
                argmin(&perturbed, objective, settings)?
            };
            let sens = if dist == 0.0 {
                None
            } else {
                Some(euclidean_distance(&u0, &u1) / dist)
            };
            let at_nominal_choice = objective_value(&perturbed, objective, &u0);
            // Same argmin bound as regret_sample: the aware optimum cannot
            // exceed any feasible candidate.
            let at_aware_choice =
                objective_value(&perturbed, objective, &u1).min(at_nominal_choice);
            let numerator = at_nominal_choice - at_aware_choice;
            let denominator = at_aware_choice;
            let value =
                if denominator.abs() < REGRET_DENOMINATOR_GUARD * (1.0 + numerator.abs()) {
                    None
                } else {
                    Some(numerator / denominator)
                };
            Ok((
                sens,
                RegretSample {
                    numerator,
                    denominator,
                    value,
                },
            ))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut sensitivity = Vec::new();
    let mut regret = Vec::new();
    let mut regret_numerators = Vec::new();
    let mut regret_excluded = 0;
    for (sens, reg) in per_draw {
        if let Some(s) = sens {
            sensitivity.push(s);
        }
        regret_numerators.push(reg.numerator);
        match reg.value {
            Some(r) => regret.push(r),
            None => regret_excluded += 1,
        }
    }
    let sensitivity_quantiles = if sensitivity.is_empty() {
        quantiles(&[0.0])
    } else {
        quantiles(&sensitivity)
    };
    let regret_quantiles = if regret.is_empty() {
        quantiles(&[0.0])
    } else {
        quantiles(&regret)
    };
    Ok(HyperStats {
        hyper,
        sensitivity,
        regret,
        regret_numerators,
        regret_excluded,
        sensitivity_quantiles,
        regret_quantiles,
    })
}
