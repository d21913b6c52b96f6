//! The horizon-splitting charging game and its weighted-sum alternative.
//!
//! Two players share one power vector `P_bat` over the horizon. The V2G
//! player owns the intervals in `split.v2g` and minimizes the tariff cost
//!
//! ```text
//! theta1(P) = sum_t alpha_t * P_t * dt                    (all intervals)
//! ```
//!
//! the battery-degradation player owns `split.bd` and minimizes
//!
//! ```text
//! theta2(P) = gamma * sum_t Q_cyc_t(P_t)                  (all intervals)
//! ```
//!
//! Both are coupled through the energy corridor and terminal band. The game
//! admits the exact potential
//!
//! ```text
//! P(u) = sum_{j in v2g} alpha_j P_j dt + gamma * sum_{j in bd} Q_cyc_j(P_j)
//! ```
//!
//! whose unilateral differences coincide with each player's objective
//! differences; minimizing it over the shared feasible set yields a
//! generalized Nash equilibrium. The weighted-sum problem instead minimizes
//! `rho * theta1 + (1 - rho) * theta2` over all intervals with the same
//! constraints.
//!
//! A [`GameInstance`] freezes the session, the split and the per-interval
//! cyclic coefficients (the interval coefficient is evaluated at the mean of
//! the two bracketing temperature samples). Objective evaluators here are
//! plain sums, independent of the QP path, so they double as the oracle side
//! of the verification operations.

use std::io::{BufRead, BufReader, Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::degradation::{
    self, smooth_loss_from_coeffs, CellDegradationParams,
};
use crate::qp::{solve, QuadraticProgram, RowPattern, SolveSettings, SolveStatus};
use crate::session::{
    check_feasibility, energy_trace, sample_feasible, sample_feasible_with_fixed,
    ChargingSchedule, HorizonSplit, SessionConfig,
};
use crate::thermal::TemperatureProfile;
use crate::{Error, Result};

/// Per-interval cyclic coefficient bundle; also the perturbation variable of
/// the robustness study (2T coordinates).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZetaBundle {
    /// Clamped `B1` per interval (1/Ah).
    pub b1: Vec<f64>,
    /// `B2_hat` per interval (1/kW at cell scale).
    pub b2_hat: Vec<f64>,
}

impl ZetaBundle {
    pub fn len(&self) -> usize {
        self.b1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.b1.is_empty()
    }

    /// Euclidean distance over the flattened (B1_t, B2_hat_t) coordinates.
    pub fn distance(&self, other: &ZetaBundle) -> f64 {
        let mut acc = 0.0;
        for (a, b) in self.b1.iter().zip(&other.b1) {
            acc += (a - b) * (a - b);
        }
        for (a, b) in self.b2_hat.iter().zip(&other.b2_hat) {
            acc += (a - b) * (a - b);
        }
        acc.sqrt()
    }
}

/// One fully specified game: session, split, coefficient schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct GameInstance {
    pub cfg: SessionConfig,
    pub split: HorizonSplit,
    /// Nominal per-interval cyclic coefficients.
    pub coeffs: ZetaBundle,
    /// Per-interval cycle budget (percent-to-fraction folded in).
    pub n_hat: f64,
    /// Intervals whose raw `B1` polynomial was clamped to the convexity floor.
    pub clamped: Vec<bool>,
    /// Curve-fit parameter `h` of the smooth surrogate.
    pub h: f64,
}

impl GameInstance {
    /// Build an instance from a simulated temperature profile (`T + 1`
    /// samples on the session grid).
    pub fn from_profile(
        cfg: SessionConfig,
        split: HorizonSplit,
        profile: &TemperatureProfile,
        params: &CellDegradationParams,
    ) -> Result<Self> {
        cfg.validate()?;
        cfg.feasibility_precheck()?;
        split.validate(cfg.t)?;
        params.validate()?;
        profile.validate()?;
        if profile.len() != cfg.t + 1 {
            return Err(Error::domain(format!(
                "temperature profile has {} samples, expected T + 1 = {}",
                profile.len(),
                cfg.t + 1
            )));
        }
        let mut b1 = Vec::with_capacity(cfg.t);
        let mut b2_hat = Vec::with_capacity(cfg.t);
        let mut clamped = Vec::with_capacity(cfg.t);
        for t in 0..cfg.t {
            let temp = profile.interval_battery_temp(t);
            let c = degradation::cyclic_coefficients(temp, params, &cfg.pack)?;
            b1.push(c.b1);
            b2_hat.push(c.b2_hat);
            clamped.push(c.clamped);
        }
        let n_hat =
            degradation::n_hat(cfg.pack.n_max_cycles, cfg.delta_t_h, cfg.horizon_hours())?;
        Ok(Self {
            cfg,
            split,
            coeffs: ZetaBundle { b1, b2_hat },
            n_hat,
            clamped,
            h: params.h,
        })
    }

    /// Convenience constructor for a constant battery temperature.
    pub fn at_constant_temperature(
        cfg: SessionConfig,
        split: HorizonSplit,
        t_b_kelvin: f64,
        params: &CellDegradationParams,
    ) -> Result<Self> {
        let t = cfg.t;
        let times: Vec<f64> = (0..=t).map(|i| cfg.delta_t_h * i as f64).collect();
        let profile = TemperatureProfile {
            t_a: vec![t_b_kelvin; t + 1],
            t_b: vec![t_b_kelvin; t + 1],
            t_c: vec![t_b_kelvin; t + 1],
            times_h: times,
        };
        Self::from_profile(cfg, split, &profile, params)
    }

    /// Same session with a replacement coefficient bundle. Perturbed bundles
    /// may dip below the construction-time floor (a floored nominal value
    /// scaled by a factor < 1); convexity only needs strict positivity.
    pub fn with_coefficients(&self, coeffs: ZetaBundle) -> Result<Self> {
        if coeffs.b1.len() != self.cfg.t || coeffs.b2_hat.len() != self.cfg.t {
            return Err(Error::domain(
                "coefficient vectors must match the horizon length",
            ));
        }
        if coeffs.b1.iter().any(|&b| !(b > 0.0)) {
            return Err(Error::domain(
                "every B1 must be strictly positive (convexity)",
            ));
        }
        Ok(Self {
            coeffs,
            ..self.clone()
        })
    }

    /// Same instance under a different horizon split.
    pub fn with_split(&self, split: HorizonSplit) -> Result<Self> {
        split.validate(self.cfg.t)?;
        Ok(Self {
            split,
            ..self.clone()
        })
    }

    /// Smooth cyclic loss of interval `t` at power `p_kw` (capacity fraction).
    pub fn cyclic_loss_fraction_at(&self, t: usize, p_kw: f64) -> f64 {
        smooth_loss_from_coeffs(
            p_kw,
            self.coeffs.b1[t],
            self.coeffs.b2_hat[t],
            self.n_hat,
            self.h,
            &self.cfg.pack,
        )
    }

    /// Quadratic euro-cost coefficient of interval `t`: the factor on
    /// `P_t^2` in `gamma * Q_cyc_t`.
    fn quad_cost_coeff(&self, t: usize) -> f64 {
        let pack = &self.cfg.pack;
        let s = pack.scale_s();
        pack.gamma_eur_per_kwh
            * pack.pack_capacity_kwh
            * self.coeffs.b1[t]
            * pack.c_rated_ah
            * pack.c_rated_ah
            * self.n_hat
            * self.coeffs.b2_hat[t]
            * self.coeffs.b2_hat[t]
            / (self.h * s * s)
    }

    /// Tariff cost over all intervals (EUR).
    pub fn theta1(&self, p_kw: &[f64]) -> f64 {
        self.cfg
            .alpha_eur_per_kwh
            .iter()
            .zip(p_kw)
            .map(|(a, p)| a * p * self.cfg.delta_t_h)
            .sum()
    }

    /// Degradation cost over all intervals (EUR), constant terms included.
    pub fn theta2(&self, p_kw: &[f64]) -> f64 {
        let pack = &self.cfg.pack;
        let loss: f64 = (0..self.cfg.t)
            .map(|t| self.cyclic_loss_fraction_at(t, p_kw[t]))
            .sum();
        pack.gamma_eur_per_kwh * pack.pack_capacity_kwh * loss
    }

    /// Exact potential: v2g-owned tariff terms plus gamma-weighted bd-owned
    /// cyclic losses, constants included.
    pub fn potential_value(&self, p_kw: &[f64]) -> f64 {
        let pack = &self.cfg.pack;
        let mut acc = 0.0;
        for &j in &self.split.v2g {
            acc += self.cfg.alpha_eur_per_kwh[j] * p_kw[j] * self.cfg.delta_t_h;
        }
        for &j in &self.split.bd {
            acc += pack.gamma_eur_per_kwh
                * pack.pack_capacity_kwh
                * self.cyclic_loss_fraction_at(j, p_kw[j]);
        }
        acc
    }

    /// Weighted-sum objective `rho * theta1 + (1 - rho) * theta2`.
    pub fn multiobjective_value(&self, rho: f64, p_kw: &[f64]) -> f64 {
        rho * self.theta1(p_kw) + (1.0 - rho) * self.theta2(p_kw)
    }

    /// Shared constraint rows: box bounds as unit rows, the energy corridor
    /// as prefix rows, and the terminal band as one final prefix row.
    fn constraint_rows(&self) -> (Vec<RowPattern>, Vec<f64>, Vec<f64>) {
        let cfg = &self.cfg;
        let t_n = cfg.t;
        let (cor_lo, cor_hi) = cfg.corridor_sum_bounds();
        let (term_lo, term_hi) = cfg.terminal_sum_bounds();
        let mut rows = Vec::with_capacity(2 * t_n + 1);
        let mut lower = Vec::with_capacity(2 * t_n + 1);
        let mut upper = Vec::with_capacity(2 * t_n + 1);
        for i in 0..t_n {
            rows.push(RowPattern::Unit(i));
            lower.push(cfg.p_min_kw);
            upper.push(cfg.p_max_kw);
        }
        for t in 0..t_n {
            rows.push(RowPattern::Prefix(t));
            lower.push(cor_lo);
            upper.push(cor_hi);
        }
        rows.push(RowPattern::Prefix(t_n - 1));
        lower.push(term_lo);
        upper.push(term_hi);
        (rows, lower, upper)
    }

    /// Assemble the potential-minimization QP (constant offsets dropped).
    pub fn build_potential(&self) -> Result<QuadraticProgram> {
        self.cfg.feasibility_precheck()?;
        let t_n = self.cfg.t;
        let mut diag = vec![0.0; t_n];
        let mut linear = vec![0.0; t_n];
        for &j in &self.split.v2g {
            linear[j] = self.cfg.alpha_eur_per_kwh[j] * self.cfg.delta_t_h;
        }
        for &j in &self.split.bd {
            // Half convention: diag entry is twice the cost coefficient.
            diag[j] = 2.0 * self.quad_cost_coeff(j);
        }
        let (rows, lower, upper) = self.constraint_rows();
        QuadraticProgram::new(diag, linear, rows, lower, upper)
    }

    /// Assemble the weighted-sum QP over all intervals.
    pub fn build_multiobjective(&self, rho: f64) -> Result<QuadraticProgram> {
        if !(0.0..=1.0).contains(&rho) {
            return Err(Error::domain(format!("rho must lie in [0, 1], got {rho}")));
        }
        self.cfg.feasibility_precheck()?;
        let t_n = self.cfg.t;
        let mut diag = vec![0.0; t_n];
        let mut linear = vec![0.0; t_n];
        for j in 0..t_n {
            linear[j] = rho * self.cfg.alpha_eur_per_kwh[j] * self.cfg.delta_t_h;
            diag[j] = 2.0 * (1.0 - rho) * self.quad_cost_coeff(j);
        }
        let (rows, lower, upper) = self.constraint_rows();
        QuadraticProgram::new(diag, linear, rows, lower, upper)
    }

    /// Wrap a solved power vector into a schedule with recomputed costs.
    pub fn schedule_from_power(&self, p_kw: Vec<f64>) -> ChargingSchedule {
        let pack = &self.cfg.pack;
        let loss: f64 = (0..self.cfg.t)
            .map(|t| self.cyclic_loss_fraction_at(t, p_kw[t]))
            .sum();
        ChargingSchedule {
            energy_trace_kwh: energy_trace(&self.cfg, &p_kw),
            revenue_cost_eur: self.theta1(&p_kw),
            degradation_loss_fraction: loss,
            degradation_cost_eur: pack.gamma_eur_per_kwh * pack.pack_capacity_kwh * loss,
            feasibility: check_feasibility(&p_kw, &self.cfg),
            p_bat_kw: p_kw,
        }
    }

    fn solve_program(
        &self,
        qp: &QuadraticProgram,
        settings: &SolveSettings,
    ) -> Result<ChargingSchedule> {
        let report = solve(qp, settings)?;
        match report.status {
            SolveStatus::Optimal => {}
            SolveStatus::Infeasible => {
                return Err(Error::Infeasible(
                    "solver produced a primal infeasibility certificate".into(),
                ))
            }
            SolveStatus::MaxIterations => {
                return Err(Error::Solver(format!(
                    "iteration limit reached with residuals ({:.3e}, {:.3e})",
                    report.primal_residual, report.dual_residual
                )))
            }
        }
        Ok(self.schedule_from_power(report.x))
    }

    /// Solve the potential problem; the minimizer is a generalized Nash
    /// equilibrium of the splitting game.
    pub fn solve_gne(&self, settings: &SolveSettings) -> Result<ChargingSchedule> {
        let qp = self.build_potential()?;
        self.solve_program(&qp, settings)
    }

    /// Solve the weighted-sum problem for weight `rho`.
    pub fn solve_multiobjective(
        &self,
        rho: f64,
        settings: &SolveSettings,
    ) -> Result<ChargingSchedule> {
        let qp = self.build_multiobjective(rho)?;
        self.solve_program(&qp, settings)
    }

    /// Raw argmin of either problem (used by the robustness metrics, which
    /// compare power vectors directly).
    pub fn argmin_potential(&self, settings: &SolveSettings) -> Result<Vec<f64>> {
        Ok(self.solve_gne(settings)?.p_bat_kw)
    }

    pub fn argmin_multiobjective(&self, rho: f64, settings: &SolveSettings) -> Result<Vec<f64>> {
        Ok(self.solve_multiobjective(rho, settings)?.p_bat_kw)
    }

    /// Sample random feasible points and random unilateral deviations and
    /// return the largest deviation between the potential difference and the
    /// deviating player's objective difference. Exactness of the potential
    /// means the result is numerical noise only.
    pub fn verify_potential_identity(&self, trials: usize, rng_seed: u64) -> Result<f64> {
        if trials == 0 {
            return Err(Error::domain("at least one trial required"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let mask = self.split.v2g_mask(self.cfg.t);
        let mut worst = 0.0f64;
        for trial in 0..trials {
            let base = sample_feasible(&self.cfg, &mut rng)?;
            let v2g_deviates = trial % 2 == 0;
            let mut fixed: Vec<Option<f64>> = base.iter().copied().map(Some).collect();
            for t in 0..self.cfg.t {
                if mask[t] == v2g_deviates {
                    fixed[t] = None;
                }
            }
            let deviated = sample_feasible_with_fixed(&self.cfg, &fixed, &mut rng)?;
            let d_potential = self.potential_value(&deviated) - self.potential_value(&base);
            let d_theta = if v2g_deviates {
                self.theta1(&deviated) - self.theta1(&base)
            } else {
                self.theta2(&deviated) - self.theta2(&base)
            };
            worst = worst.max((d_potential - d_theta).abs());
        }
        Ok(worst)
    }

    /// Re-solve each player's own problem with the opponent's block fixed and
    /// report the relative objective improvement either player could still
    /// achieve. Both are ~0 at a generalized Nash equilibrium.
    pub fn verify_gne(
        &self,
        schedule: &ChargingSchedule,
        settings: &SolveSettings,
    ) -> Result<PlayerImprovements> {
        let v2g = self.best_response_improvement(schedule, true, settings)?;
        let bd = self.best_response_improvement(schedule, false, settings)?;
        Ok(PlayerImprovements {
            v2g_relative: v2g,
            bd_relative: bd,
        })
    }

    /// Best-response improvement of one player, relative to the scale of its
    /// current objective value: `(old - new) / max(1, |old|)`.
    fn best_response_improvement(
        &self,
        schedule: &ChargingSchedule,
        v2g_player: bool,
        settings: &SolveSettings,
    ) -> Result<f64> {
        let own: &[usize] = if v2g_player {
            &self.split.v2g
        } else {
            &self.split.bd
        };
        let theta = |p: &[f64]| {
            if v2g_player {
                self.theta1(p)
            } else {
                self.theta2(p)
            }
        };
        let old_value = theta(&schedule.p_bat_kw);
        if own.is_empty() {
            return Ok(0.0);
        }

        let qp = self.best_response_program(&schedule.p_bat_kw, own, v2g_player)?;
        let report = solve(&qp, settings)?;
        if report.status != SolveStatus::Optimal {
            return Err(Error::Solver(format!(
                "best-response solve ended with {:?}",
                report.status
            )));
        }
        let mut candidate = schedule.p_bat_kw.clone();
        for (slot, &j) in own.iter().enumerate() {
            candidate[j] = report.x[slot];
        }
        let new_value = theta(&candidate);
        Ok((old_value - new_value) / old_value.abs().max(1.0))
    }

    /// One player's problem over its own coordinates with the opponent's
    /// contribution folded into the prefix-row bounds. The corridor is
    /// enforced at every interval of the horizon.
    fn best_response_program(
        &self,
        current: &[f64],
        own: &[usize],
        v2g_player: bool,
    ) -> Result<QuadraticProgram> {
        let cfg = &self.cfg;
        let n_own = own.len();
        let mut diag = vec![0.0; n_own];
        let mut linear = vec![0.0; n_own];
        for (slot, &j) in own.iter().enumerate() {
            if v2g_player {
                linear[slot] = cfg.alpha_eur_per_kwh[j] * cfg.delta_t_h;
            } else {
                diag[slot] = 2.0 * self.quad_cost_coeff(j);
            }
        }

        let mut rows = Vec::new();
        let mut lower = Vec::new();
        let mut upper = Vec::new();
        for slot in 0..n_own {
            rows.push(RowPattern::Unit(slot));
            lower.push(cfg.p_min_kw);
            upper.push(cfg.p_max_kw);
        }

        let own_mask = {
            let mut m = vec![false; cfg.t];
            for &j in own {
                m[j] = true;
            }
            m
        };
        let (cor_lo, cor_hi) = cfg.corridor_sum_bounds();
        let (term_lo, term_hi) = cfg.terminal_sum_bounds();
        // For each horizon interval t, the prefix over own coordinates with
        // index <= t plus the fixed opponent prefix must stay in bounds.
        // Rows with the same own-prefix length are merged by intersecting
        // their bounds.
        let mut fixed_prefix = 0.0;
        let mut own_count = 0usize;
        let mut merged: Vec<(f64, f64)> = Vec::new(); // per own-prefix count k >= 1
        let mut zero_own_bounds: Option<(f64, f64)> = None;
        for t in 0..cfg.t {
            if own_mask[t] {
                own_count += 1;
            } else {
                fixed_prefix += current[t];
            }
            let (mut lo, mut hi) = (cor_lo - fixed_prefix, cor_hi - fixed_prefix);
            if t == cfg.t - 1 {
                lo = lo.max(term_lo - fixed_prefix);
                hi = hi.min(term_hi - fixed_prefix);
            }
            if own_count == 0 {
                let entry = zero_own_bounds.get_or_insert((f64::NEG_INFINITY, f64::INFINITY));
                entry.0 = entry.0.max(lo);
                entry.1 = entry.1.min(hi);
            } else {
                if merged.len() < own_count {
                    merged.resize(own_count, (f64::NEG_INFINITY, f64::INFINITY));
                }
                let entry = &mut merged[own_count - 1];
                entry.0 = entry.0.max(lo);
                entry.1 = entry.1.min(hi);
            }
        }
        // The opponent block comes from a solved schedule and may carry
        // solver noise up to the feasibility gate; widen accordingly.
        const SLACK: f64 = 1e-6;
        if let Some((lo, hi)) = zero_own_bounds {
            if lo > SLACK || hi < -SLACK {
                return Err(Error::Infeasible(
                    "opponent block violates the corridor on its own".into(),
                ));
            }
        }
        for (k, &(lo, hi)) in merged.iter().enumerate() {
            let (mut lo, mut hi) = (lo, hi);
            if lo > hi {
                if lo - hi > SLACK {
                    return Err(Error::Infeasible(
                        "per-player corridor bounds are inconsistent".into(),
                    ));
                }
                let mid = 0.5 * (lo + hi);
                lo = mid;
                hi = mid;
            }
            rows.push(RowPattern::Prefix(k));
            lower.push(lo);
            upper.push(hi);
        }
        QuadraticProgram::new(diag, linear, rows, lower, upper)
    }
}

/// Best-response improvements of the two players (relative).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlayerImprovements {
    pub v2g_relative: f64,
    pub bd_relative: f64,
}

impl PlayerImprovements {
    pub fn max(&self) -> f64 {
        self.v2g_relative.max(self.bd_relative)
    }
}

/// Hyperparameter of a trade-off point: interval count `w` for the game,
/// weight `rho` for the weighted sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value")]
pub enum Hyper {
    W(usize),
    Rho(f64),
}

/// One marker on a trade-off curve. Both costs are recomputed from the
/// schedule over all intervals, never read from solver internals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffPoint {
    pub hyper: Hyper,
    pub charging_cost_eur: f64,
    pub degradation_cost_eur: f64,
    pub cyclic_loss_fraction: f64,
    pub schedule: ChargingSchedule,
}

impl TradeoffPoint {
    pub fn from_schedule(hyper: Hyper, schedule: ChargingSchedule) -> Self {
        Self {
            hyper,
            charging_cost_eur: schedule.revenue_cost_eur,
            degradation_cost_eur: schedule.degradation_cost_eur,
            cyclic_loss_fraction: schedule.degradation_loss_fraction,
            schedule,
        }
    }
}

/// The weighted-sum comparison grid: `T + 1` evenly spaced weights in [0, 1],
/// mirroring the discrete values of `w`.
pub fn rho_grid(t: usize) -> Vec<f64> {
    (0..=t).map(|k| k as f64 / t as f64).collect()
}

/// Export a schedule as `interval,p_kw,energy_kwh` rows (1-based intervals).
pub fn write_schedule_csv<W: Write>(out: &mut W, schedule: &ChargingSchedule) -> Result<()> {
    writeln!(out, "interval,p_kw,energy_kwh")?;
    for (i, (p, e)) in schedule
        .p_bat_kw
        .iter()
        .zip(&schedule.energy_trace_kwh)
        .enumerate()
    {
        writeln!(out, "{},{:.12},{:.12}", i + 1, p, e)?;
    }
    Ok(())
}

/// Re-import a schedule CSV written by [`write_schedule_csv`]; returns the
/// power vector (energies are recomputed downstream).
pub fn read_schedule_csv<R: Read>(reader: R, context: &str) -> Result<Vec<f64>> {
    let mut p = Vec::new();
    let mut saw_header = false;
    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !saw_header {
            if line != "interval,p_kw,energy_kwh" {
                return Err(Error::parse(
                    context,
                    format!("expected schedule header, got '{line}'"),
                ));
            }
            saw_header = true;
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(Error::parse(
                context,
                format!("line {}: expected three fields", idx + 1),
            ));
        }
        let p_kw: f64 = fields[1].trim().parse().map_err(|e| {
            Error::parse(context, format!("line {}: bad power: {e}", idx + 1))
        })?;
        p.push(p_kw);
    }
    if p.is_empty() {
        return Err(Error::parse(context, "schedule file contains no rows"));
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::degradation::BatteryPackSpec;
    use crate::session::assign_intervals;

    pub(crate) fn reference_config() -> SessionConfig {
        SessionConfig {
            t: 16,
            delta_t_h: 0.25,
            p_min_kw: -22.0,
            p_max_kw: 22.0,
            e_min_kwh: 10.0,
            e_max_kwh: 50.0,
            e_0_kwh: 25.0,
            e_des_kwh: 45.0,
            epsilon_kwh: 1.0,
            eta_avg: 0.95,
            alpha_eur_per_kwh: vec![
                0.08, 0.10, 0.14, 0.22, 0.31, 0.38, 0.27, 0.16, 0.09, 0.07, 0.12, 0.19, 0.29,
                0.35, 0.24, 0.11,
            ],
            pack: BatteryPackSpec::default_50kwh(),
        }
    }

    pub(crate) fn reference_instance(w: usize) -> GameInstance {
        let cfg = reference_config();
        let split = assign_intervals(&cfg.alpha_eur_per_kwh, w).unwrap();
        GameInstance::at_constant_temperature(
            cfg,
            split,
            313.0,
            &CellDegradationParams::default(),
        )
        .unwrap()
    }

    #[test]
    fn all_v2g_split_builds_a_pure_lp() {
        let instance = reference_instance(16);
        let qp = instance.build_potential().unwrap();
        assert!(qp.diag().iter().all(|&d| d == 0.0));
        assert!(qp.linear().iter().any(|&l| l != 0.0));
    }

    #[test]
    fn all_bd_split_builds_a_revenue_free_program() {
        let instance = reference_instance(0);
        let qp = instance.build_potential().unwrap();
        assert!(qp.linear().iter().all(|&l| l == 0.0));
        assert!(qp.diag().iter().all(|&d| d > 0.0));
    }

    #[test]
    fn potential_equals_independent_term_sum() {
        // T = 4 toy: the potential must equal theta1's v2g terms plus the
        // gamma-weighted bd losses, evaluated here by explicit summation.
        let mut cfg = reference_config();
        cfg.t = 4;
        cfg.alpha_eur_per_kwh = vec![0.3, 0.1, 0.4, 0.2];
        cfg.e_des_kwh = 25.0;
        cfg.epsilon_kwh = 2.0;
        let split = assign_intervals(&cfg.alpha_eur_per_kwh, 3).unwrap();
        let instance = GameInstance::at_constant_temperature(
            cfg,
            split,
            313.0,
            &CellDegradationParams::default(),
        )
        .unwrap();
        let p = [5.0, -3.0, 2.5, 0.75];
        let mut expect = 0.0;
        for &j in &instance.split.v2g {
            expect += instance.cfg.alpha_eur_per_kwh[j] * p[j] * 0.25;
        }
        for &j in &instance.split.bd {
            expect += 585.0 * 50.0 * instance.cyclic_loss_fraction_at(j, p[j]);
        }
        assert!((instance.potential_value(&p) - expect).abs() < 1e-12);
    }

    #[test]
    fn gne_schedule_is_feasible_and_hits_terminal_band() {
        let settings = SolveSettings::default();
        for w in [0, 5, 16] {
            let instance = reference_instance(w);
            let schedule = instance.solve_gne(&settings).unwrap();
            assert!(
                schedule.feasibility.is_feasible(1e-6),
                "w = {w}: {:?}",
                schedule.feasibility
            );
            let e_final = *schedule.energy_trace_kwh.last().unwrap();
            assert!((e_final - 45.0).abs() <= 1.0 + 1e-6);
        }
    }

    #[test]
    fn zero_schedule_optimal_when_nothing_to_do() {
        let mut cfg = reference_config();
        cfg.e_des_kwh = cfg.e_0_kwh;
        cfg.epsilon_kwh = 5.0;
        cfg.alpha_eur_per_kwh = vec![0.0; 16];
        let split = assign_intervals(&cfg.alpha_eur_per_kwh, 8).unwrap();
        let instance = GameInstance::at_constant_temperature(
            cfg,
            split,
            313.0,
            &CellDegradationParams::default(),
        )
        .unwrap();
        let schedule = instance.solve_gne(&SolveSettings::default()).unwrap();
        for &p in &schedule.p_bat_kw {
            assert!(p.abs() < 1e-6);
        }
    }

    #[test]
    fn multiobjective_rho_one_matches_full_v2g_potential() {
        let instance = reference_instance(16);
        let qp_mo = instance.build_multiobjective(1.0).unwrap();
        let qp_gt = instance.build_potential().unwrap();
        assert_eq!(qp_mo, qp_gt);
    }

    #[test]
    fn multiobjective_rho_zero_idles_when_target_met() {
        let mut cfg = reference_config();
        cfg.e_des_kwh = cfg.e_0_kwh;
        cfg.epsilon_kwh = 2.0;
        let split = assign_intervals(&cfg.alpha_eur_per_kwh, 4).unwrap();
        let instance = GameInstance::at_constant_temperature(
            cfg,
            split,
            313.0,
            &CellDegradationParams::default(),
        )
        .unwrap();
        let schedule = instance
            .solve_multiobjective(0.0, &SolveSettings::default())
            .unwrap();
        for &p in &schedule.p_bat_kw {
            assert!(p.abs() < 1e-6);
        }
    }

    #[test]
    fn potential_identity_holds_on_reference_instance() {
        let instance = reference_instance(9);
        let worst = instance.verify_potential_identity(200, 42).unwrap();
        assert!(worst <= 1e-9, "max |dP - dTheta| = {worst}");
    }

    #[test]
    fn zero_deviation_has_zero_discrepancy() {
        let instance = reference_instance(9);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let base = sample_feasible(&instance.cfg, &mut rng).unwrap();
        let d_p = instance.potential_value(&base) - instance.potential_value(&base);
        let d_t = instance.theta1(&base) - instance.theta1(&base);
        assert_eq!(d_p, 0.0);
        assert_eq!(d_t, 0.0);
    }

    #[test]
    fn explicit_user_split_is_accepted() {
        let cfg = reference_config();
        let split = HorizonSplit::from_v2g_set(vec![3, 0, 14], cfg.t).unwrap();
        assert_eq!(split.v2g, vec![0, 3, 14]);
        assert_eq!(split.w(), 3);
        let instance = GameInstance::at_constant_temperature(
            cfg,
            split,
            313.0,
            &CellDegradationParams::default(),
        )
        .unwrap();
        let schedule = instance.solve_gne(&SolveSettings::default()).unwrap();
        assert!(schedule.feasibility.is_feasible(1e-6));
        assert!(HorizonSplit::from_v2g_set(vec![16], 16).is_err());
    }

    #[test]
    fn v2g_deviation_leaves_bd_potential_term_unchanged() {
        let instance = reference_instance(9);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let base = sample_feasible(&instance.cfg, &mut rng).unwrap();
        let mask = instance.split.v2g_mask(instance.cfg.t);
        let mut fixed: Vec<Option<f64>> = base.iter().copied().map(Some).collect();
        for t in 0..instance.cfg.t {
            if mask[t] {
                fixed[t] = None;
            }
        }
        let deviated = sample_feasible_with_fixed(&instance.cfg, &fixed, &mut rng).unwrap();
        let bd_term = |p: &[f64]| -> f64 {
            instance
                .split
                .bd
                .iter()
                .map(|&j| instance.cyclic_loss_fraction_at(j, p[j]))
                .sum()
        };
        assert_eq!(bd_term(&base), bd_term(&deviated));
    }

    #[test]
    fn gne_passes_best_response_check() {
        let settings = SolveSettings::default();
        let instance = reference_instance(9);
        let schedule = instance.solve_gne(&settings).unwrap();
        let imp = instance.verify_gne(&schedule, &settings).unwrap();
        assert!(imp.max() <= 1e-6, "{imp:?}");
    }

    #[test]
    fn perturbed_schedule_fails_best_response_check() {
        let settings = SolveSettings::default();
        let instance = reference_instance(9);
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        // A random feasible point is generically not an equilibrium.
        let mut found = false;
        for _ in 0..5 {
            let p = sample_feasible(&instance.cfg, &mut rng).unwrap();
            let schedule = instance.schedule_from_power(p);
            let imp = instance.verify_gne(&schedule, &settings).unwrap();
            if imp.max() > 1e-6 {
                found = true;
                break;
            }
        }
        assert!(found, "no random feasible point could be improved");
    }

    #[test]
    fn degenerate_splits_have_trivial_player() {
        let settings = SolveSettings::default();
        for w in [0, 16] {
            let instance = reference_instance(w);
            let schedule = instance.solve_gne(&settings).unwrap();
            let imp = instance.verify_gne(&schedule, &settings).unwrap();
            if w == 0 {
                assert_eq!(imp.v2g_relative, 0.0);
            } else {
                assert_eq!(imp.bd_relative, 0.0);
            }
        }
    }

    #[test]
    fn rho_grid_matches_w_grid_resolution() {
        let grid = rho_grid(16);
        assert_eq!(grid.len(), 17);
        assert_eq!(grid[0], 0.0);
        assert_eq!(grid[16], 1.0);
    }

    #[test]
    fn schedule_csv_round_trip() {
        let instance = reference_instance(7);
        let schedule = instance.solve_gne(&SolveSettings::default()).unwrap();
        let mut buf = Vec::new();
        write_schedule_csv(&mut buf, &schedule).unwrap();
        let p = read_schedule_csv(buf.as_slice(), "test").unwrap();
        let rebuilt = instance.schedule_from_power(p);
        assert!((rebuilt.revenue_cost_eur - schedule.revenue_cost_eur).abs() < 1e-9);
        assert!((rebuilt.degradation_cost_eur - schedule.degradation_cost_eur).abs() < 1e-9);
    }

    #[test]
    fn tradeoff_point_recomputes_costs_from_schedule() {
        let instance = reference_instance(6);
        let schedule = instance.solve_gne(&SolveSettings::default()).unwrap();
        let point = TradeoffPoint::from_schedule(Hyper::W(6), schedule.clone());
        assert!((point.charging_cost_eur - instance.theta1(&schedule.p_bat_kw)).abs() < 1e-9);
        assert!(
            (point.degradation_cost_eur - instance.theta2(&schedule.p_bat_kw)).abs() < 1e-9
        );
    }
}
