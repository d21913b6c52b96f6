//! Charging-session description and the feasible set shared by both players.
//!
//! A session is `T` intervals of length `delta_t` hours. The decision vector
//! is the per-interval battery power `P_bat` (kW, positive = charging). Three
//! constraint families define feasibility:
//!
//! * box bounds `P_min <= P_t <= P_max` on every interval,
//! * the energy corridor `E_min <= E_0 + eta * dt * sum_{j<=t} P_j <= E_max`
//!   at every `t`,
//! * the terminal band `|E_des - E_T| <= epsilon`.
//!
//! The horizon is split between the V2G player and the battery-degradation
//! player by the price-based rule: the `w` intervals with the highest tariff
//! go to V2G, ties broken toward the earlier index. Interval indices are
//! 0-based in code; exported CSV uses 1-based interval numbers.

use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::degradation::BatteryPackSpec;
use crate::{Error, Result};

/// Fully resolved session parameters in engineering units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    /// Number of intervals in the horizon.
    pub t: usize,
    /// Interval length (hours).
    pub delta_t_h: f64,
    /// Discharging bound (kW, <= 0).
    pub p_min_kw: f64,
    /// Charging bound (kW, >= 0).
    pub p_max_kw: f64,
    /// Lower energy corridor bound (kWh).
    pub e_min_kwh: f64,
    /// Upper energy corridor bound (kWh).
    pub e_max_kwh: f64,
    /// Energy at plug-in (kWh).
    pub e_0_kwh: f64,
    /// Desired energy at departure (kWh).
    pub e_des_kwh: f64,
    /// Terminal tolerance (kWh).
    pub epsilon_kwh: f64,
    /// Average charging/discharging efficiency, shared by both directions.
    pub eta_avg: f64,
    /// V2G tariff per interval (EUR/kWh), length `t`.
    pub alpha_eur_per_kwh: Vec<f64>,
    /// Battery pack backing this session.
    pub pack: BatteryPackSpec,
}

impl SessionConfig {
    pub fn horizon_hours(&self) -> f64 {
        self.t as f64 * self.delta_t_h
    }

    /// Corridor bounds expressed on the power prefix sum `sum_{j<=t} P_j`.
    pub fn corridor_sum_bounds(&self) -> (f64, f64) {
        let scale = self.eta_avg * self.delta_t_h;
        (
            (self.e_min_kwh - self.e_0_kwh) / scale,
            (self.e_max_kwh - self.e_0_kwh) / scale,
        )
    }

    /// Terminal band expressed on the full-horizon power sum.
    pub fn terminal_sum_bounds(&self) -> (f64, f64) {
        let scale = self.eta_avg * self.delta_t_h;
        (
            (self.e_des_kwh - self.epsilon_kwh - self.e_0_kwh) / scale,
            (self.e_des_kwh + self.epsilon_kwh - self.e_0_kwh) / scale,
        )
    }

    /// Collects every violated structural invariant (not just the first).
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.t == 0 {
            bad.push("horizon must contain at least one interval".into());
        }
        if !(self.delta_t_h > 0.0) {
            bad.push(format!("delta_t_h must be > 0, got {}", self.delta_t_h));
        }
        if self.p_min_kw > 0.0 {
            bad.push(format!("p_min_kw must be <= 0, got {}", self.p_min_kw));
        }
        if self.p_max_kw < 0.0 {
            bad.push(format!("p_max_kw must be >= 0, got {}", self.p_max_kw));
        }
        if self.p_min_kw > self.p_max_kw {
            bad.push("p_min_kw exceeds p_max_kw".into());
        }
        if self.e_min_kwh > self.e_max_kwh {
            bad.push("e_min_kwh exceeds e_max_kwh".into());
        }
        if self.e_0_kwh < self.e_min_kwh || self.e_0_kwh > self.e_max_kwh {
            bad.push(format!(
                "e_0_kwh = {} outside corridor [{}, {}]",
                self.e_0_kwh, self.e_min_kwh, self.e_max_kwh
            ));
        }
        if self.e_des_kwh < self.e_min_kwh || self.e_des_kwh > self.e_max_kwh {
            bad.push(format!(
                "e_des_kwh = {} outside corridor [{}, {}]",
                self.e_des_kwh, self.e_min_kwh, self.e_max_kwh
            ));
        }
        if self.epsilon_kwh < 0.0 {
            bad.push(format!("epsilon_kwh must be >= 0, got {}", self.epsilon_kwh));
        }
        if !(self.eta_avg > 0.0 && self.eta_avg <= 1.0) {
            bad.push(format!("eta_avg must lie in (0, 1], got {}", self.eta_avg));
        }
        if self.alpha_eur_per_kwh.len() != self.t {
            bad.push(format!(
                "tariff length {} does not match horizon {}",
                self.alpha_eur_per_kwh.len(),
                self.t
            ));
        }
        if self.alpha_eur_per_kwh.iter().any(|a| !a.is_finite()) {
            bad.push("tariff contains non-finite entries".into());
        }
        if let Err(Error::InvalidConfig(mut pack_bad)) = self.pack.validate() {
            bad.append(&mut pack_bad);
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(bad))
        }
    }

    /// Necessary reachability condition for the terminal band: the desired
    /// energy change must be coverable at full power within tolerance.
    pub fn feasibility_precheck(&self) -> Result<()> {
        let reach = self.eta_avg
            * self.delta_t_h
            * self.t as f64
            * self.p_max_kw.max(-self.p_min_kw)
            + self.epsilon_kwh;
        let need = (self.e_des_kwh - self.e_0_kwh).abs();
        if need > reach {
            return Err(Error::Infeasible(format!(
                "|E_des - E_0| = {need:.3} kWh exceeds reachable {reach:.3} kWh \
                 over {} intervals",
                self.t
            )));
        }
        Ok(())
    }
}

/// Session energy quantities in per-unit of pack capacity; the configuration
/// boundary representation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerUnitSession {
    pub t: usize,
    pub delta_t_h: f64,
    pub p_min_kw: f64,
    pub p_max_kw: f64,
    pub e_min_pu: f64,
    pub e_max_pu: f64,
    pub e_0_pu: f64,
    pub e_des_pu: f64,
    pub epsilon_pu: f64,
    #[serde(default = "default_eta")]
    pub eta_avg: f64,
}

fn default_eta() -> f64 {
    0.95
}

/// Scale per-unit energies by pack capacity; powers pass through unchanged.
pub fn per_unit_to_kwh(
    pu: &PerUnitSession,
    alpha_eur_per_kwh: Vec<f64>,
    pack: BatteryPackSpec,
) -> SessionConfig {
    let cap = pack.pack_capacity_kwh;
    SessionConfig {
        t: pu.t,
        delta_t_h: pu.delta_t_h,
        p_min_kw: pu.p_min_kw,
        p_max_kw: pu.p_max_kw,
        e_min_kwh: pu.e_min_pu * cap,
        e_max_kwh: pu.e_max_pu * cap,
        e_0_kwh: pu.e_0_pu * cap,
        e_des_kwh: pu.e_des_pu * cap,
        epsilon_kwh: pu.epsilon_pu * cap,
        eta_avg: pu.eta_avg,
        alpha_eur_per_kwh,
        pack,
    }
}

/// Partition of the horizon into V2G-owned and BD-owned interval sets
/// (0-based indices, each kept sorted).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HorizonSplit {
    pub v2g: Vec<usize>,
    pub bd: Vec<usize>,
}

impl HorizonSplit {
    pub fn w(&self) -> usize {
        self.v2g.len()
    }

    /// Per-interval ownership mask: `true` where the V2G player decides.
    pub fn v2g_mask(&self, t: usize) -> Vec<bool> {
        let mut mask = vec![false; t];
        for &i in &self.v2g {
            mask[i] = true;
        }
        mask
    }

    pub fn validate(&self, t: usize) -> Result<()> {
        let mut seen = vec![false; t];
        for &i in self.v2g.iter().chain(&self.bd) {
            if i >= t {
                return Err(Error::domain(format!("interval index {i} out of range")));
            }
            if seen[i] {
                return Err(Error::domain(format!("interval {i} assigned twice")));
            }
            seen[i] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::domain("split does not cover the horizon"));
        }
        Ok(())
    }

    /// Explicit split from a user-supplied V2G set; the remainder goes to BD.
    pub fn from_v2g_set(mut v2g: Vec<usize>, t: usize) -> Result<Self> {
        v2g.sort_unstable();
        v2g.dedup();
        if v2g.iter().any(|&i| i >= t) {
            return Err(Error::domain("v2g interval index out of range"));
        }
        let mut mask = vec![false; t];
        for &i in &v2g {
            mask[i] = true;
        }
        let bd = (0..t).filter(|&i| !mask[i]).collect();
        Ok(Self { v2g, bd })
    }
}

/// Price-based assignment: the `w` highest-tariff intervals go to the V2G
/// player, ties broken by the earlier time index (stable descending sort).
pub fn assign_intervals(alpha: &[f64], w: usize) -> Result<HorizonSplit> {
    if w > alpha.len() {
        return Err(Error::domain(format!(
            "w = {w} exceeds horizon length {}",
            alpha.len()
        )));
    }
    let mut order: Vec<usize> = (0..alpha.len()).collect();
    order.sort_by(|&i, &j| alpha[j].partial_cmp(&alpha[i]).unwrap());
    let mut v2g: Vec<usize> = order[..w].to_vec();
    let mut bd: Vec<usize> = order[w..].to_vec();
    v2g.sort_unstable();
    bd.sort_unstable();
    Ok(HorizonSplit { v2g, bd })
}

/// Maximum violations of the three constraint families (report-only; zero
/// everywhere means feasible).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FeasibilityReport {
    /// Worst box-bound violation (kW).
    pub box_violation_kw: f64,
    /// Worst energy-corridor violation over all intervals (kWh).
    pub corridor_violation_kwh: f64,
    /// Violation of the terminal band (kWh).
    pub terminal_violation_kwh: f64,
}

impl FeasibilityReport {
    pub fn max_violation(&self) -> f64 {
        self.box_violation_kw
            .max(self.corridor_violation_kwh)
            .max(self.terminal_violation_kwh)
    }

    pub fn is_feasible(&self, tol: f64) -> bool {
        self.max_violation() <= tol
    }
}

/// Battery energy after each interval: `E_t = E_0 + eta * dt * sum_{j<=t} P_j`.
pub fn energy_trace(cfg: &SessionConfig, p_kw: &[f64]) -> Vec<f64> {
    let mut trace = Vec::with_capacity(p_kw.len());
    let mut sum = 0.0;
    for &p in p_kw {
        sum += p;
        trace.push(cfg.e_0_kwh + cfg.eta_avg * cfg.delta_t_h * sum);
    }
    trace
}

/// Evaluate a power vector against the session constraints.
pub fn check_feasibility(p_kw: &[f64], cfg: &SessionConfig) -> FeasibilityReport {
    let mut report = FeasibilityReport::default();
    for &p in p_kw {
        report.box_violation_kw = report
            .box_violation_kw
            .max(cfg.p_min_kw - p)
            .max(p - cfg.p_max_kw);
    }
    let trace = energy_trace(cfg, p_kw);
    for &e in &trace {
        report.corridor_violation_kwh = report
            .corridor_violation_kwh
            .max(cfg.e_min_kwh - e)
            .max(e - cfg.e_max_kwh);
    }
    let e_final = trace.last().copied().unwrap_or(cfg.e_0_kwh);
    report.terminal_violation_kwh =
        ((cfg.e_des_kwh - e_final).abs() - cfg.epsilon_kwh).max(0.0);
    report.box_violation_kw = report.box_violation_kw.max(0.0);
    report.corridor_violation_kwh = report.corridor_violation_kwh.max(0.0);
    report
}

/// A solved schedule together with its cost breakdown, all recomputed from
/// the power vector rather than taken from solver internals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChargingSchedule {
    /// Battery power per interval (kW).
    pub p_bat_kw: Vec<f64>,
    /// Energy after each interval (kWh).
    pub energy_trace_kwh: Vec<f64>,
    /// Tariff cost over all intervals (EUR); negative means net revenue.
    pub revenue_cost_eur: f64,
    /// Cyclic capacity loss over all intervals (fraction of capacity).
    pub degradation_loss_fraction: f64,
    /// Euro value of the cyclic loss.
    pub degradation_cost_eur: f64,
    /// Constraint violations of the power vector.
    pub feasibility: FeasibilityReport,
}

/// Per-interval feasible ranges for the prefix sum `s_t = sum_{j<=t} P_j`,
/// computed backward so that forward sampling can never paint itself into an
/// infeasible corner. `fixed[t] = Some(p)` pins interval `t` to power `p`.
fn reachable_prefix_intervals(
    cfg: &SessionConfig,
    fixed: &[Option<f64>],
) -> Result<Vec<(f64, f64)>> {
    let t_n = cfg.t;
    let (cor_lo, cor_hi) = cfg.corridor_sum_bounds();
    let (term_lo, term_hi) = cfg.terminal_sum_bounds();
    let mut lo = vec![0.0; t_n];
    let mut hi = vec![0.0; t_n];
    lo[t_n - 1] = cor_lo.max(term_lo);
    hi[t_n - 1] = cor_hi.min(term_hi);
    for t in (0..t_n - 1).rev() {
        let (step_lo, step_hi) = match fixed[t + 1] {
            Some(p) => (p, p),
            None => (cfg.p_min_kw, cfg.p_max_kw),
        };
        lo[t] = (lo[t + 1] - step_hi).max(cor_lo);
        hi[t] = (hi[t + 1] - step_lo).min(cor_hi);
        if lo[t] > hi[t] + 1e-9 {
            return Err(Error::Infeasible(format!(
                "no feasible prefix sum at interval {t}"
            )));
        }
    }
    // Interval 0 must be reachable from s = 0 in one step.
    let (step_lo, step_hi) = match fixed[0] {
        Some(p) => (p, p),
        None => (cfg.p_min_kw, cfg.p_max_kw),
    };
    if step_hi < lo[0] - 1e-9 || step_lo > hi[0] + 1e-9 {
        return Err(Error::Infeasible(
            "first interval cannot reach the feasible corridor".into(),
        ));
    }
    Ok(lo.into_iter().zip(hi).collect())
}

/// Draw a uniformly spread feasible power vector. Respects box, corridor and
/// terminal constraints by sampling each interval inside the backward
/// reachable set.
pub fn sample_feasible(cfg: &SessionConfig, rng: &mut impl Rng) -> Result<Vec<f64>> {
    sample_feasible_with_fixed(cfg, &vec![None; cfg.t], rng)
}

/// As [`sample_feasible`], but intervals with `fixed[t] = Some(p)` keep power
/// `p` (used for unilateral deviations of one player).
pub fn sample_feasible_with_fixed(
    cfg: &SessionConfig,
    fixed: &[Option<f64>],
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    assert_eq!(fixed.len(), cfg.t);
    let ranges = reachable_prefix_intervals(cfg, fixed)?;
    let mut p = Vec::with_capacity(cfg.t);
    let mut s = 0.0;
    for t in 0..cfg.t {
        let (r_lo, r_hi) = ranges[t];
        let value = match fixed[t] {
            Some(v) => v,
            None => {
                let lo = cfg.p_min_kw.max(r_lo - s);
                let hi = cfg.p_max_kw.min(r_hi - s);
                if lo > hi {
                    // Round-off collapse; the midpoint keeps the walk alive.
                    0.5 * (lo + hi)
                } else {
                    rng.gen_range(lo..=hi)
                }
            }
        };
        s += value;
        p.push(value);
    }
    Ok(p)
}

/// Parse a `interval,alpha_eur_per_kwh` tariff file (1-based interval column,
/// `#` comment lines ignored).
pub fn load_tariff_reader<R: Read>(reader: R, context: &str) -> Result<Vec<f64>> {
    let mut alpha = Vec::new();
    let mut saw_header = false;
    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !saw_header {
            if line != "interval,alpha_eur_per_kwh" {
                return Err(Error::parse(
                    context,
                    format!("expected header 'interval,alpha_eur_per_kwh', got '{line}'"),
                ));
            }
            saw_header = true;
            continue;
        }
        let mut parts = line.split(',');
        let (i, a) = match (parts.next(), parts.next(), parts.next()) {
            (Some(i), Some(a), None) => (i, a),
            _ => {
                return Err(Error::parse(
                    context,
                    format!("line {}: expected two fields", idx + 1),
                ))
            }
        };
        let i: usize = i.trim().parse().map_err(|e| {
            Error::parse(context, format!("line {}: bad interval '{i}': {e}", idx + 1))
        })?;
        if i != alpha.len() + 1 {
            return Err(Error::parse(
                context,
                format!("line {}: interval {} out of order", idx + 1, i),
            ));
        }
        let a: f64 = a.trim().parse().map_err(|e| {
            Error::parse(context, format!("line {}: bad tariff '{a}': {e}", idx + 1))
        })?;
        alpha.push(a);
    }
    if alpha.is_empty() {
        return Err(Error::parse(context, "tariff file contains no rows"));
    }
    Ok(alpha)
}

pub fn load_tariff_csv(path: &Path) -> Result<Vec<f64>> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
    load_tariff_reader(file, &path.display().to_string())
}
