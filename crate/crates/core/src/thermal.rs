//! Lumped cabin/battery thermal model.
//!
//! Two coupled states, cabin temperature `T_c` and battery temperature `T_b`,
//! driven by the ambient temperature `T_a`:
//!
//! ```text
//! M_c dT_c/dt = K_ac (T_a - T_c) + K_bc (T_b - T_c) + q_rad + q_hvac
//! M_b dT_b/dt = K_ab (T_a - T_b) + K_bc (T_c - T_b) + q_btms + Q
//! ```
//!
//! `Q` is the resistive heat generated by charging/discharging. It is held
//! constant over a session using the representative current
//! `I_hat = rho * P_max / V_pack` (`rho` is the expected V2G participation
//! level), so the optimized power never feeds back into the temperature. The
//! battery thermal management system removes a fixed share of the generated
//! heat, `q_btms = -btms_efficiency * Q`, at all ambient temperatures; the
//! default efficiency is 0.9. Solar and HVAC loads default to zero for a
//! parked vehicle.
//!
//! Integration is classical fixed-step 4th-order Runge-Kutta (default step
//! 1 s; the thermal time constants are minutes-scale). Ambient samples are
//! interpolated piecewise-linearly. The trajectory is then resampled onto the
//! session grid so the profile carries exactly `T + 1` samples.

use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const KELVIN_OFFSET: f64 = 273.15;

pub fn celsius_to_kelvin(c: f64) -> f64 {
    c + KELVIN_OFFSET
}

/// Thermal masses, heat-transfer coefficients and loads of the lumped model.
///
/// The shipped defaults are plausible car-scale magnitudes and are meant to
/// be overridden from configuration when a measured set is available.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThermalParams {
    /// Cabin thermal mass (J/K).
    pub m_c_j_per_k: f64,
    /// Battery thermal mass (J/K).
    pub m_b_j_per_k: f64,
    /// Ambient-cabin heat transfer (W/K).
    pub k_ac_w_per_k: f64,
    /// Ambient-battery heat transfer (W/K).
    pub k_ab_w_per_k: f64,
    /// Battery-cabin heat transfer (W/K).
    pub k_bc_w_per_k: f64,
    /// Solar load on the car (W); zero for a shaded parking spot.
    pub q_rad_w: f64,
    /// HVAC load (W); zero while parked.
    pub q_hvac_w: f64,
    /// Share of generated heat removed by the BTMS.
    pub btms_efficiency: f64,
    /// Pack internal resistance used for heat generation (Ohm).
    pub r_int_ohm: f64,
}

impl Default for ThermalParams {
    fn default() -> Self {
        Self {
            m_c_j_per_k: 1.2e5,
            m_b_j_per_k: 3.5e5,
            k_ac_w_per_k: 120.0,
            k_ab_w_per_k: 25.0,
            k_bc_w_per_k: 60.0,
            q_rad_w: 0.0,
            q_hvac_w: 0.0,
            btms_efficiency: 0.9,
            r_int_ohm: 0.1,
        }
    }
}

impl ThermalParams {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        for (name, v) in [
            ("m_c_j_per_k", self.m_c_j_per_k),
            ("m_b_j_per_k", self.m_b_j_per_k),
            ("k_ac_w_per_k", self.k_ac_w_per_k),
            ("k_ab_w_per_k", self.k_ab_w_per_k),
            ("k_bc_w_per_k", self.k_bc_w_per_k),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                bad.push(format!("{name} must be strictly positive, got {v}"));
            }
        }
        if !(0.0..=1.0).contains(&self.btms_efficiency) {
            bad.push(format!(
                "btms_efficiency must lie in [0, 1], got {}",
                self.btms_efficiency
            ));
        }
        if self.r_int_ohm < 0.0 || !self.r_int_ohm.is_finite() {
            bad.push(format!("r_int_ohm must be >= 0, got {}", self.r_int_ohm));
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(bad))
        }
    }

    /// Steady-state `(T_c, T_b)` for constant ambient `t_a` and constant net
    /// battery heat `q_net = q_btms + Q`. Solves the 2x2 linear balance.
    pub fn steady_state(&self, t_a: f64, q_net_w: f64) -> (f64, f64) {
        // K_ac (Ta - Tc) + K_bc (Tb - Tc) + q_rad + q_hvac = 0
        // K_ab (Ta - Tb) + K_bc (Tc - Tb) + q_net         = 0
        let (kac, kab, kbc) = (self.k_ac_w_per_k, self.k_ab_w_per_k, self.k_bc_w_per_k);
        let q_c = self.q_rad_w + self.q_hvac_w;
        // Unknowns x = (Tc - Ta, Tb - Ta):
        //   (kac + kbc) x0 - kbc x1 = q_c
        //   -kbc x0 + (kab + kbc) x1 = q_net
        let a = kac + kbc;
        let b = -kbc;
        let c = -kbc;
        let d = kab + kbc;
        let det = a * d - b * c;
        let x0 = (q_c * d - b * q_net_w) / det;
        let x1 = (a * q_net_w - c * q_c) / det;
        (t_a + x0, t_a + x1)
    }
}

/// Ambient temperature as a piecewise-linear function of time.
#[derive(Debug, Clone, PartialEq)]
pub struct AmbientSeries {
    times_h: Vec<f64>,
    temps_k: Vec<f64>,
}

impl AmbientSeries {
    pub fn new(times_h: Vec<f64>, temps_k: Vec<f64>) -> Result<Self> {
        if times_h.len() != temps_k.len() || times_h.is_empty() {
            return Err(Error::domain(
                "ambient series needs equally many times and temperatures (>= 1)".to_string(),
            ));
        }
        for w in times_h.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::domain(format!(
                    "ambient sample times must be strictly increasing ({} then {})",
                    w[0], w[1]
                )));
            }
        }
        for &t in &temps_k {
            if !t.is_finite() || t <= 0.0 {
                return Err(Error::domain(format!(
                    "ambient temperature must be finite positive Kelvin, got {t}"
                )));
            }
        }
        Ok(Self { times_h, temps_k })
    }

    pub fn constant(temp_k: f64) -> Result<Self> {
        Self::new(vec![0.0], vec![temp_k])
    }

    /// Parse `time_h,temp_C` rows; Celsius values are converted to Kelvin.
    pub fn from_csv_reader<R: Read>(reader: R, context: &str) -> Result<Self> {
        let mut times = Vec::new();
        let mut temps = Vec::new();
        for (idx, line) in BufReader::new(reader).lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if idx == 0 || times.is_empty() && line.starts_with("time_h") {
                if line != "time_h,temp_C" {
                    return Err(Error::parse(
                        context,
                        format!("expected header 'time_h,temp_C', got '{line}'"),
                    ));
                }
                continue;
            }
            let mut parts = line.split(',');
            let (t, c) = match (parts.next(), parts.next(), parts.next()) {
                (Some(t), Some(c), None) => (t, c),
                _ => {
                    return Err(Error::parse(
                        context,
                        format!("line {}: expected two comma-separated fields", idx + 1),
                    ))
                }
            };
            let t: f64 = t.trim().parse().map_err(|e| {
                Error::parse(context, format!("line {}: bad time '{t}': {e}", idx + 1))
            })?;
            let c: f64 = c.trim().parse().map_err(|e| {
                Error::parse(context, format!("line {}: bad temp '{c}': {e}", idx + 1))
            })?;
            times.push(t);
            temps.push(celsius_to_kelvin(c));
        }
        Self::new(times, temps)
    }

    pub fn from_csv_path(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)
            .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
        Self::from_csv_reader(file, &path.display().to_string())
    }

    /// Last sample time; constant series extend indefinitely.
    pub fn end_time_h(&self) -> f64 {
        *self.times_h.last().unwrap()
    }

    /// Linear interpolation, clamped to the first/last sample outside the
    /// covered range.
    pub fn sample(&self, t_h: f64) -> f64 {
        let times = &self.times_h;
        let temps = &self.temps_k;
        if t_h <= times[0] {
            return temps[0];
        }
        if t_h >= *times.last().unwrap() {
            return *temps.last().unwrap();
        }
        let i = match times.binary_search_by(|probe| probe.partial_cmp(&t_h).unwrap()) {
            Ok(i) => return temps[i],
            Err(i) => i,
        };
        let (t0, t1) = (times[i - 1], times[i]);
        let frac = (t_h - t0) / (t1 - t0);
        temps[i - 1] + frac * (temps[i] - temps[i - 1])
    }

    /// Shift the series so `start_h` becomes time zero (used to cut a session
    /// window out of a long record).
    pub fn window_from(&self, start_h: f64) -> AmbientSeries {
        let times = self
            .times_h
            .iter()
            .map(|t| t - start_h)
            .collect::<Vec<_>>();
        AmbientSeries {
            times_h: times,
            temps_k: self.temps_k.clone(),
        }
    }
}

/// Sampled trajectory of ambient, battery and cabin temperature (Kelvin).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemperatureProfile {
    pub times_h: Vec<f64>,
    pub t_a: Vec<f64>,
    pub t_b: Vec<f64>,
    pub t_c: Vec<f64>,
}

impl TemperatureProfile {
    pub fn len(&self) -> usize {
        self.times_h.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times_h.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.times_h.len();
        if self.t_a.len() != n || self.t_b.len() != n || self.t_c.len() != n {
            return Err(Error::domain(
                "temperature profile vectors must have equal lengths".to_string(),
            ));
        }
        for w in self.times_h.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::domain(
                    "profile times must be strictly increasing".to_string(),
                ));
            }
        }
        for &v in self.t_a.iter().chain(&self.t_b).chain(&self.t_c) {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::domain(format!(
                    "profile temperatures must be finite positive Kelvin, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// Battery temperature representative of interval `t` (mean of the two
    /// bracketing grid samples).
    pub fn interval_battery_temp(&self, t: usize) -> f64 {
        0.5 * (self.t_b[t] + self.t_b[t + 1])
    }
}

/// Representative pack current `I_hat = rho * P_max / V_pack` in amperes.
pub fn representative_current_a(rho: f64, p_max_kw: f64, v_pack: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::domain(format!("rho must lie in [0, 1], got {rho}")));
    }
    if !(p_max_kw > 0.0) || !(v_pack > 0.0) {
        return Err(Error::domain(format!(
            "p_max_kw and v_pack must be > 0, got {p_max_kw} and {v_pack}"
        )));
    }
    Ok(rho * p_max_kw * 1000.0 / v_pack)
}

/// Resistive heat `Q = I_hat^2 * R_int` in watts.
pub fn heat_generation_w(i_hat_a: f64, r_int_ohm: f64) -> Result<f64> {
    if r_int_ohm < 0.0 || !r_int_ohm.is_finite() {
        return Err(Error::domain(format!(
            "internal resistance must be >= 0, got {r_int_ohm}"
        )));
    }
    if !i_hat_a.is_finite() {
        return Err(Error::domain("current must be finite".to_string()));
    }
    Ok(i_hat_a * i_hat_a * r_int_ohm)
}

/// Integrate the coupled ODEs with fixed-step RK4 and resample onto a grid of
/// `n_out + 1` evenly spaced output times covering `[0, duration_h]`.
///
/// `q_w` is the constant generated heat; the BTMS contribution
/// `-btms_efficiency * q_w` is applied at every step. A non-finite state
/// aborts with [`Error::Integration`] naming the offending time.
pub fn simulate_temperatures(
    ambient: &AmbientSeries,
    params: &ThermalParams,
    q_w: f64,
    step_s: f64,
    duration_h: f64,
    t_b0_k: f64,
    t_c0_k: f64,
    n_out: usize,
) -> Result<TemperatureProfile> {
    params.validate()?;
    if !(step_s > 0.0) || !step_s.is_finite() {
        return Err(Error::domain(format!("step must be > 0 s, got {step_s}")));
    }
    if !(duration_h > 0.0) || n_out == 0 {
        return Err(Error::domain(
            "duration must be > 0 h and n_out >= 1".to_string(),
        ));
    }
    if q_w < 0.0 || !q_w.is_finite() {
        return Err(Error::domain(format!("heat must be >= 0 W, got {q_w}")));
    }

    let q_net = q_w - params.btms_efficiency * q_w;
    let deriv = |t_s: f64, t_c: f64, t_b: f64| -> (f64, f64) {
        let t_a = ambient.sample(t_s / 3600.0);
        let d_tc = (params.k_ac_w_per_k * (t_a - t_c)
            + params.k_bc_w_per_k * (t_b - t_c)
            + params.q_rad_w
            + params.q_hvac_w)
            / params.m_c_j_per_k;
        let d_tb = (params.k_ab_w_per_k * (t_a - t_b) + params.k_bc_w_per_k * (t_c - t_b) + q_net)
            / params.m_b_j_per_k;
        (d_tc, d_tb)
    };

    let duration_s = duration_h * 3600.0;
    let n_steps = (duration_s / step_s).ceil().max(1.0) as usize;
    // Uniform step that lands exactly on the endpoint.
    let h = duration_s / n_steps as f64;

    let mut nodes_t_c = Vec::with_capacity(n_steps + 1);
    let mut nodes_t_b = Vec::with_capacity(n_steps + 1);
    nodes_t_c.push(t_c0_k);
    nodes_t_b.push(t_b0_k);
    let (mut t_c, mut t_b) = (t_c0_k, t_b0_k);
    for k in 0..n_steps {
        let t_s = k as f64 * h;
        let (k1c, k1b) = deriv(t_s, t_c, t_b);
        let (k2c, k2b) = deriv(t_s + 0.5 * h, t_c + 0.5 * h * k1c, t_b + 0.5 * h * k1b);
        let (k3c, k3b) = deriv(t_s + 0.5 * h, t_c + 0.5 * h * k2c, t_b + 0.5 * h * k2b);
        let (k4c, k4b) = deriv(t_s + h, t_c + h * k3c, t_b + h * k3b);
        t_c += h / 6.0 * (k1c + 2.0 * k2c + 2.0 * k3c + k4c);
        t_b += h / 6.0 * (k1b + 2.0 * k2b + 2.0 * k3b + k4b);
        // Non-finite or wildly non-physical states mean the step is too
        // large for the stiffness of this parameter set.
        let diverged = |t: f64| !t.is_finite() || t <= 0.0 || t > 1e6;
        if diverged(t_c) || diverged(t_b) {
            return Err(Error::Integration {
                time_h: (t_s + h) / 3600.0,
                step_s,
            });
        }
        nodes_t_c.push(t_c);
        nodes_t_b.push(t_b);
    }

    // Resample node trajectory onto the output grid.
    let mut times_h = Vec::with_capacity(n_out + 1);
    let mut out_a = Vec::with_capacity(n_out + 1);
    let mut out_b = Vec::with_capacity(n_out + 1);
    let mut out_c = Vec::with_capacity(n_out + 1);
    for j in 0..=n_out {
        let t_h = duration_h * j as f64 / n_out as f64;
        let pos = (t_h * 3600.0) / h;
        let i = (pos.floor() as usize).min(n_steps - 1);
        let frac = pos - i as f64;
        out_c.push(nodes_t_c[i] + frac * (nodes_t_c[i + 1] - nodes_t_c[i]));
        out_b.push(nodes_t_b[i] + frac * (nodes_t_b[i + 1] - nodes_t_b[i]));
        out_a.push(ambient.sample(t_h));
        times_h.push(t_h);
    }

    let profile = TemperatureProfile {
        times_h,
        t_a: out_a,
        t_b: out_b,
        t_c: out_c,
    };
    profile.validate()?;
    Ok(profile)
}

/// Endpoint battery temperature of a pure RK4 run (no resampling); exposed
/// for step-convergence studies.
pub fn endpoint_battery_temp(
    ambient: &AmbientSeries,
    params: &ThermalParams,
    q_w: f64,
    step_s: f64,
    duration_h: f64,
    t_b0_k: f64,
    t_c0_k: f64,
) -> Result<f64> {
    let profile =
        simulate_temperatures(ambient, params, q_w, step_s, duration_h, t_b0_k, t_c0_k, 1)?;
    Ok(*profile.t_b.last().unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn representative_current_arithmetic() {
        assert_eq!(representative_current_a(0.0, 22.0, 350.0).unwrap(), 0.0);
        let full = representative_current_a(1.0, 22.0, 350.0).unwrap();
        assert!((full - 62.857142857142854).abs() < 1e-12);
        let half = representative_current_a(0.5, 22.0, 350.0).unwrap();
        assert!((2.0 * half - full).abs() < 1e-12);
        assert!(representative_current_a(1.5, 22.0, 350.0).is_err());
        assert!(representative_current_a(-0.1, 22.0, 350.0).is_err());
    }

    #[test]
    fn heat_generation_arithmetic() {
        assert_eq!(heat_generation_w(0.0, 0.1).unwrap(), 0.0);
        let q = heat_generation_w(62.857142857142854, 0.1).unwrap();
        assert!((q - 395.102).abs() < 1e-2);
        assert_eq!(
            heat_generation_w(-5.0, 0.2).unwrap(),
            heat_generation_w(5.0, 0.2).unwrap()
        );
        assert!(heat_generation_w(1.0, -0.1).is_err());
    }

    #[test]
    fn equilibrium_is_a_fixed_point() {
        let t_a = 293.15;
        let ambient = AmbientSeries::constant(t_a).unwrap();
        let params = ThermalParams::default();
        let profile =
            simulate_temperatures(&ambient, &params, 0.0, 1.0, 12.0, t_a, t_a, 48).unwrap();
        for (&b, &c) in profile.t_b.iter().zip(&profile.t_c) {
            assert!((b - t_a).abs() < 1e-9);
            assert!((c - t_a).abs() < 1e-9);
        }
    }

    #[test]
    fn converges_to_linear_steady_state() {
        let t_a = 283.15;
        let params = ThermalParams::default();
        let q = 400.0;
        let q_net = q * (1.0 - params.btms_efficiency);
        let (tc_ss, tb_ss) = params.steady_state(t_a, q_net);
        let ambient = AmbientSeries::constant(t_a).unwrap();
        // Long horizon so every mode has fully decayed.
        let profile =
            simulate_temperatures(&ambient, &params, q, 30.0, 200.0, t_a, t_a, 100).unwrap();
        assert!((profile.t_b.last().unwrap() - tb_ss).abs() < 1e-6);
        assert!((profile.t_c.last().unwrap() - tc_ss).abs() < 1e-6);
    }

    #[test]
    fn steady_offset_linear_in_heat() {
        // Simulated (not closed-form) steady offsets for two heat levels
        // must scale linearly with Q.
        let t_a = 290.0;
        let params = ThermalParams::default();
        let ambient = AmbientSeries::constant(t_a).unwrap();
        let offset = |q: f64| {
            let p = simulate_temperatures(&ambient, &params, q, 30.0, 200.0, t_a, t_a, 10)
                .unwrap();
            p.t_b.last().unwrap() - t_a
        };
        let off1 = offset(100.0);
        let off2 = offset(200.0);
        assert!((off2 - 2.0 * off1).abs() <= 1e-6 * off2.abs());
    }

    #[test]
    fn contraction_toward_ambient_without_heat() {
        let t_a = 293.15;
        let ambient = AmbientSeries::constant(t_a).unwrap();
        let params = ThermalParams::default();
        let profile =
            simulate_temperatures(&ambient, &params, 0.0, 5.0, 6.0, t_a + 15.0, t_a - 10.0, 60)
                .unwrap();
        let mut last = f64::INFINITY;
        for i in 0..profile.len() {
            let dev = (profile.t_b[i] - t_a).abs().max((profile.t_c[i] - t_a).abs());
            assert!(dev <= last + 1e-12);
            last = dev;
        }
    }

    #[test]
    fn rk4_step_halving_contracts_at_fourth_order() {
        let t_a = 288.15;
        let ambient = AmbientSeries::constant(t_a).unwrap();
        let params = ThermalParams::default();
        // Large steps so truncation error dominates round-off.
        let h0 = 480.0;
        let run = |h: f64| {
            endpoint_battery_temp(&ambient, &params, 350.0, h, 4.0, t_a + 12.0, t_a - 6.0).unwrap()
        };
        let e0 = run(h0);
        let e1 = run(h0 / 2.0);
        let e2 = run(h0 / 4.0);
        let ratio = (e0 - e1).abs() / (e1 - e2).abs();
        assert!(
            (12.0..=20.0).contains(&ratio),
            "expected ~16x contraction, got {ratio}"
        );
    }

    #[test]
    fn output_grid_has_t_plus_one_samples() {
        let ambient = AmbientSeries::constant(293.15).unwrap();
        let profile = simulate_temperatures(
            &ambient,
            &ThermalParams::default(),
            100.0,
            1.0,
            4.0,
            293.15,
            293.15,
            16,
        )
        .unwrap();
        assert_eq!(profile.len(), 17);
        assert_eq!(profile.times_h[0], 0.0);
        assert!((profile.times_h[16] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn ambient_csv_parses_and_converts_to_kelvin() {
        let csv = "time_h,temp_C\n0.0,10.0\n12.0,20.0\n24.0,10.0\n";
        let series = AmbientSeries::from_csv_reader(csv.as_bytes(), "test").unwrap();
        assert!((series.sample(0.0) - 283.15).abs() < 1e-12);
        assert!((series.sample(6.0) - 288.15).abs() < 1e-12);
        assert!((series.sample(12.0) - 293.15).abs() < 1e-12);
        // Clamped outside the record.
        assert!((series.sample(30.0) - 283.15).abs() < 1e-12);
    }

    #[test]
    fn ambient_csv_rejects_bad_header() {
        let csv = "hour,celsius\n0.0,10.0\n";
        assert!(AmbientSeries::from_csv_reader(csv.as_bytes(), "test").is_err());
    }

    #[test]
    fn divergence_reports_offending_time() {
        // An absurd step makes RK4 unstable for this system.
        let ambient = AmbientSeries::constant(293.15).unwrap();
        let mut params = ThermalParams::default();
        params.m_c_j_per_k = 10.0;
        params.m_b_j_per_k = 10.0;
        let res = simulate_temperatures(&ambient, &params, 0.0, 3600.0, 10.0, 400.0, 200.0, 10);
        match res {
            Err(Error::Integration { time_h, .. }) => assert!(time_h > 0.0),
            other => panic!("expected integration error, got {other:?}"),
        }
    }
}
