//! Study runners: each consumes a validated configuration, sweeps its
//! scenario grid in parallel, gates every produced schedule through the
//! session feasibility check, and emits metadata-tagged CSV files.

use std::path::PathBuf;

use rayon::prelude::*;
use serde::Serialize;

use v2g_core::degradation::BatteryPackSpec;
use v2g_core::equilibrium::{write_schedule_csv, GameInstance};
use v2g_core::qp::SolveSettings;
use v2g_core::robustness::{run_comparison, HyperGrid, PerturbationSpec, RobustnessSummary};
use v2g_core::session::{assign_intervals, ChargingSchedule, SessionConfig};
use v2g_core::thermal::{
    celsius_to_kelvin, heat_generation_w, representative_current_a, simulate_temperatures,
    AmbientSeries, TemperatureProfile,
};
use v2g_core::{Error, Result};

use crate::config::{LoadedConfig, StudyKind};
use crate::output::{write_csv, Meta};
use crate::synth;

/// Feasibility gate applied to every schedule a study emits.
pub const SCHEDULE_FEASIBILITY_TOL: f64 = 1e-6;

/// Everything a runner needs: the configuration plus output routing.
#[derive(Debug, Clone)]
pub struct StudyContext {
    pub loaded: LoadedConfig,
    pub out_dir: Option<PathBuf>,
    pub settings: SolveSettings,
}

impl StudyContext {
    pub fn new(loaded: LoadedConfig) -> Self {
        let out_dir = loaded.config.study.out_dir.as_ref().map(|d| {
            if d.is_absolute() {
                d.clone()
            } else {
                loaded.base_dir.join(d)
            }
        });
        // Residual scales grow with the corridor sums; tighter tolerances
        // here keep even unpolished iterates well inside the 1e-6 gate.
        let settings = SolveSettings {
            eps_abs: 1e-9,
            eps_rel: 1e-9,
            ..SolveSettings::default()
        };
        Self {
            loaded,
            out_dir,
            settings,
        }
    }

    pub fn with_out_dir(mut self, dir: Option<PathBuf>) -> Self {
        if dir.is_some() {
            self.out_dir = dir;
        }
        self
    }

    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(seed) = seed {
            self.loaded.config.study.seed = seed;
        }
        self
    }

    fn seed(&self) -> u64 {
        self.loaded.config.study.seed
    }

    fn meta(&self) -> Meta {
        Meta::new(&self.loaded.config_hash, self.seed())
    }

    fn w_values(&self, t: usize) -> Vec<usize> {
        self.loaded
            .config
            .study
            .w_values
            .clone()
            .unwrap_or_else(|| (0..=t).collect())
    }

    fn rho_values(&self, t: usize) -> Vec<f64> {
        self.loaded
            .config
            .study
            .rho_values
            .clone()
            .unwrap_or_else(|| v2g_core::equilibrium::rho_grid(t))
    }

    fn ambient(&self) -> Result<AmbientSeries> {
        let cfg = &self.loaded.config.ambient;
        if let Some(path) = &cfg.path {
            return AmbientSeries::from_csv_path(&self.loaded.resolve(path));
        }
        if let Some(c) = cfg.constant_c {
            return AmbientSeries::constant(celsius_to_kelvin(c));
        }
        Err(Error::InvalidConfig(vec![
            "ambient: either constant_c or path is required".into(),
        ]))
    }

    /// Precompute the battery temperature for one session at participation
    /// level `rho`, on the session's own interval grid.
    fn profile_for(
        &self,
        ambient: &AmbientSeries,
        session: &SessionConfig,
        rho: f64,
        step_s: f64,
    ) -> Result<TemperatureProfile> {
        let thermal = &self.loaded.config.thermal;
        let i_hat = representative_current_a(rho, session.p_max_kw, session.pack.v_pack)?;
        let q_w = heat_generation_w(i_hat, thermal.params.r_int_ohm)?;
        let t0 = ambient.sample(0.0);
        simulate_temperatures(
            ambient,
            &thermal.params,
            q_w,
            step_s,
            session.horizon_hours(),
            t0,
            t0,
            session.t,
        )
    }

    /// Splitting-game instance for one `w`; the thermal participation level
    /// follows `w / T`.
    fn instance_for_w(
        &self,
        session: &SessionConfig,
        ambient: &AmbientSeries,
        w: usize,
        step_s: f64,
    ) -> Result<GameInstance> {
        let rho = w as f64 / session.t as f64;
        let profile = self.profile_for(ambient, session, rho, step_s)?;
        let split = assign_intervals(&session.alpha_eur_per_kwh, w)?;
        GameInstance::from_profile(
            session.clone(),
            split,
            &profile,
            &self.loaded.config.degradation,
        )
    }

    fn gate(&self, schedule: &ChargingSchedule, what: &str) -> Result<()> {
        if !schedule
            .feasibility
            .is_feasible(SCHEDULE_FEASIBILITY_TOL)
        {
            return Err(Error::Infeasible(format!(
                "{what}: emitted schedule violates constraints by {:.3e}",
                schedule.feasibility.max_violation()
            )));
        }
        Ok(())
    }
}

fn least_squares_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mean_x: f64 = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y: f64 = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mean_x) * (p.0 - mean_x)).sum();
    let sxy: f64 = points
        .iter()
        .map(|p| (p.0 - mean_x) * (p.1 - mean_y))
        .sum();
    sxy / sxx
}

// ---------------------------------------------------------------------------
// Temperature study
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct TemperatureRow {
    pub t_a_c: f64,
    pub w: usize,
    pub charging_cost_eur: f64,
    pub degradation_cost_eur: f64,
    pub cyclic_loss_pct: f64,
    pub b1_clamped: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct TemperatureSlope {
    pub t_a_c: f64,
    /// Fitted slope of cyclic loss (%) against `w / T`.
    pub slope_pct: f64,
    pub b1_clamped: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct TemperatureStudy {
    pub rows: Vec<TemperatureRow>,
    pub slopes: Vec<TemperatureSlope>,
}

pub fn run_temperature(ctx: &StudyContext) -> Result<TemperatureStudy> {
    let session = ctx.loaded.session()?;
    let study = &ctx.loaded.config.study;
    let w_values = ctx.w_values(session.t);
    if w_values.is_empty() {
        return Err(Error::InvalidConfig(vec!["empty w sweep".into()]));
    }
    let step_s = ctx.loaded.config.thermal.step_s();

    let cells: Vec<(f64, usize)> = study
        .t_a_values_c
        .iter()
        .flat_map(|&t_a| w_values.iter().map(move |&w| (t_a, w)))
        .collect();
    let rows: Vec<TemperatureRow> = cells
        .par_iter()
        .map(|&(t_a_c, w)| -> Result<TemperatureRow> {
            let ambient = AmbientSeries::constant(celsius_to_kelvin(t_a_c))?;
            let instance = ctx.instance_for_w(&session, &ambient, w, step_s)?;
            let schedule = instance.solve_gne(&ctx.settings)?;
            ctx.gate(&schedule, &format!("temperature study T_a={t_a_c} w={w}"))?;
            Ok(TemperatureRow {
                t_a_c,
                w,
                charging_cost_eur: schedule.revenue_cost_eur,
                degradation_cost_eur: schedule.degradation_cost_eur,
                cyclic_loss_pct: schedule.degradation_loss_fraction * 100.0,
                b1_clamped: instance.clamped.iter().any(|&c| c),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let t_n = session.t as f64;
    let slopes: Vec<TemperatureSlope> = study
        .t_a_values_c
        .iter()
        .map(|&t_a| {
            let points: Vec<(f64, f64)> = rows
                .iter()
                .filter(|r| r.t_a_c == t_a)
                .map(|r| (r.w as f64 / t_n, r.cyclic_loss_pct))
                .collect();
            TemperatureSlope {
                t_a_c: t_a,
                slope_pct: least_squares_slope(&points),
                b1_clamped: rows
                    .iter()
                    .any(|r| r.t_a_c == t_a && r.b1_clamped),
            }
        })
        .collect();

    if let Some(dir) = &ctx.out_dir {
        let meta = ctx.meta().with("study", StudyKind::Temperature);
        write_csv(
            &dir.join("temperature_tradeoff.csv"),
            &meta,
            "t_a_c,w,charging_cost_eur,degradation_cost_eur,cyclic_loss_pct,b1_clamped",
            rows.iter().map(|r| {
                format!(
                    "{},{},{:.9},{:.9},{:.9},{}",
                    r.t_a_c, r.w, r.charging_cost_eur, r.degradation_cost_eur,
                    r.cyclic_loss_pct, r.b1_clamped
                )
            }),
        )?;
        write_csv(
            &dir.join("temperature_slopes.csv"),
            &meta,
            "t_a_c,slope_pct,b1_clamped",
            slopes.iter().map(|s| {
                format!("{},{:.9},{}", s.t_a_c, s.slope_pct, s.b1_clamped)
            }),
        )?;
    }

    Ok(TemperatureStudy { rows, slopes })
}

// ---------------------------------------------------------------------------
// Tariff-variance study
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct TariffVarianceRow {
    pub scale: f64,
    pub w: usize,
    pub charging_cost_eur: f64,
    pub degradation_cost_eur: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TariffVarianceStudy {
    pub rows: Vec<TariffVarianceRow>,
    /// One synthesized tariff per scale, sharing the same Gaussian shape.
    pub profiles: Vec<(f64, Vec<f64>)>,
}

pub fn run_tariff_variance(ctx: &StudyContext) -> Result<TariffVarianceStudy> {
    let base_session = ctx.loaded.session()?;
    let study = &ctx.loaded.config.study;
    let scales = &study.variance_scales;
    if scales.is_empty() {
        return Err(Error::InvalidConfig(vec!["empty variance scales".into()]));
    }
    let w_values = ctx.w_values(base_session.t);
    let ambient = ctx.ambient()?;
    let step_s = ctx.loaded.config.thermal.step_s();
    let relative_std = ctx.loaded.config.tariff.relative_std;

    // One Gaussian shape across all scales: the family differs only in the
    // amplitude of its deviations around the common mean.
    let shape = synth::normal_shape(base_session.t, ctx.seed(), 0);
    let profiles: Vec<(f64, Vec<f64>)> = scales
        .iter()
        .map(|&s| {
            (
                s,
                synth::scale_profile(&base_session.alpha_eur_per_kwh, &shape, relative_std, s),
            )
        })
        .collect();

    let cells: Vec<(usize, usize)> = (0..profiles.len())
        .flat_map(|si| w_values.iter().map(move |&w| (si, w)))
        .collect();
    let rows: Vec<TariffVarianceRow> = cells
        .par_iter()
        .map(|&(si, w)| -> Result<TariffVarianceRow> {
            let (scale, alpha) = &profiles[si];
            let mut session = base_session.clone();
            session.alpha_eur_per_kwh = alpha.clone();
            let instance = ctx.instance_for_w(&session, &ambient, w, step_s)?;
            let schedule = instance.solve_gne(&ctx.settings)?;
            ctx.gate(&schedule, &format!("tariff-variance scale={scale} w={w}"))?;
            Ok(TariffVarianceRow {
                scale: *scale,
                w,
                charging_cost_eur: schedule.revenue_cost_eur,
                degradation_cost_eur: schedule.degradation_cost_eur,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    if let Some(dir) = &ctx.out_dir {
        let meta = ctx.meta().with("study", StudyKind::TariffVariance);
        write_csv(
            &dir.join("tariff_variance_tradeoff.csv"),
            &meta,
            "scale,w,charging_cost_eur,degradation_cost_eur",
            rows.iter().map(|r| {
                format!(
                    "{},{},{:.9},{:.9}",
                    r.scale, r.w, r.charging_cost_eur, r.degradation_cost_eur
                )
            }),
        )?;
        let header = std::iter::once("interval".to_string())
            .chain(profiles.iter().map(|(s, _)| format!("alpha_scale_{s}")))
            .collect::<Vec<_>>()
            .join(",");
        let rows_profiles = (0..base_session.t).map(|i| {
            let mut fields = vec![(i + 1).to_string()];
            for (_, alpha) in &profiles {
                fields.push(format!("{:.9}", alpha[i]));
            }
            fields.join(",")
        });
        write_csv(&dir.join("tariff_profiles.csv"), &meta, &header, rows_profiles)?;
    }

    Ok(TariffVarianceStudy { rows, profiles })
}

// ---------------------------------------------------------------------------
// Charger-rating study
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct ChargerRow {
    pub rating_kw: f64,
    pub w: usize,
    pub charging_cost_eur: f64,
    pub degradation_cost_eur: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ChargerSpan {
    pub rating_kw: f64,
    pub charging_span_eur: f64,
    pub degradation_span_eur: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ChargerStudy {
    pub rows: Vec<ChargerRow>,
    pub spans: Vec<ChargerSpan>,
}

pub fn run_charger(ctx: &StudyContext) -> Result<ChargerStudy> {
    let base_session = ctx.loaded.session()?;
    let study = &ctx.loaded.config.study;
    if study.charger_ratings_kw.is_empty() {
        return Err(Error::InvalidConfig(vec!["empty charger ratings".into()]));
    }
    let w_values = ctx.w_values(base_session.t);
    let ambient = ctx.ambient()?;
    let step_s = ctx.loaded.config.thermal.step_s();

    // Fail early (with the session report) when a rating cannot reach the
    // terminal target at all.
    for &rating in &study.charger_ratings_kw {
        let mut session = base_session.clone();
        session.p_min_kw = -rating;
        session.p_max_kw = rating;
        session.feasibility_precheck()?;
    }

    let cells: Vec<(f64, usize)> = study
        .charger_ratings_kw
        .iter()
        .flat_map(|&r| w_values.iter().map(move |&w| (r, w)))
        .collect();
    let rows: Vec<ChargerRow> = cells
        .par_iter()
        .map(|&(rating, w)| -> Result<ChargerRow> {
            let mut session = base_session.clone();
            session.p_min_kw = -rating;
            session.p_max_kw = rating;
            let instance = ctx.instance_for_w(&session, &ambient, w, step_s)?;
            let schedule = instance.solve_gne(&ctx.settings)?;
            ctx.gate(&schedule, &format!("charger study rating={rating} w={w}"))?;
            Ok(ChargerRow {
                rating_kw: rating,
                w,
                charging_cost_eur: schedule.revenue_cost_eur,
                degradation_cost_eur: schedule.degradation_cost_eur,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let spans: Vec<ChargerSpan> = study
        .charger_ratings_kw
        .iter()
        .map(|&rating| {
            let charging: Vec<f64> = rows
                .iter()
                .filter(|r| r.rating_kw == rating)
                .map(|r| r.charging_cost_eur)
                .collect();
            let degradation: Vec<f64> = rows
                .iter()
                .filter(|r| r.rating_kw == rating)
                .map(|r| r.degradation_cost_eur)
                .collect();
            let span = |v: &[f64]| {
                v.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                    - v.iter().cloned().fold(f64::INFINITY, f64::min)
            };
            ChargerSpan {
                rating_kw: rating,
                charging_span_eur: span(&charging),
                degradation_span_eur: span(&degradation),
            }
        })
        .collect();

    if let Some(dir) = &ctx.out_dir {
        let meta = ctx.meta().with("study", StudyKind::Charger);
        write_csv(
            &dir.join("charger_tradeoff.csv"),
            &meta,
            "rating_kw,w,charging_cost_eur,degradation_cost_eur",
            rows.iter().map(|r| {
                format!(
                    "{},{},{:.9},{:.9}",
                    r.rating_kw, r.w, r.charging_cost_eur, r.degradation_cost_eur
                )
            }),
        )?;
        write_csv(
            &dir.join("charger_spans.csv"),
            &meta,
            "rating_kw,charging_span_eur,degradation_span_eur",
            spans.iter().map(|s| {
                format!(
                    "{},{:.9},{:.9}",
                    s.rating_kw, s.charging_span_eur, s.degradation_span_eur
                )
            }),
        )?;
    }

    Ok(ChargerStudy { rows, spans })
}

// ---------------------------------------------------------------------------
// Charging-profile export
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct ProfilesStudy {
    pub schedules: Vec<(usize, ChargingSchedule)>,
    pub alpha: Vec<f64>,
}

pub fn run_profiles(ctx: &StudyContext) -> Result<ProfilesStudy> {
    let session = ctx.loaded.session()?;
    let study = &ctx.loaded.config.study;
    let ambient = ctx.ambient()?;
    let step_s = ctx.loaded.config.thermal.step_s();

    let schedules: Vec<(usize, ChargingSchedule)> = study
        .profile_w_values
        .par_iter()
        .map(|&w| -> Result<(usize, ChargingSchedule)> {
            let instance = ctx.instance_for_w(&session, &ambient, w, step_s)?;
            let schedule = instance.solve_gne(&ctx.settings)?;
            ctx.gate(&schedule, &format!("profile export w={w}"))?;
            Ok((w, schedule))
        })
        .collect::<Result<Vec<_>>>()?;

    if let Some(dir) = &ctx.out_dir {
        std::fs::create_dir_all(dir)?;
        let meta = ctx.meta().with("study", StudyKind::Profiles);
        for (w, schedule) in &schedules {
            let mut buf = Vec::new();
            for (key, value) in &meta.entries {
                use std::io::Write as _;
                writeln!(buf, "# {key}={value}")?;
            }
            write_schedule_csv(&mut buf, schedule)?;
            std::fs::write(dir.join(format!("profile_w{w}.csv")), &buf)?;
            let json = serde_json::to_string_pretty(schedule)
                .map_err(|e| Error::parse("profile json", e.to_string()))?;
            std::fs::write(dir.join(format!("profile_w{w}.json")), json)?;
        }
        let header = std::iter::once("interval,alpha_eur_per_kwh".to_string())
            .chain(schedules.iter().map(|(w, _)| format!("p_w{w}_kw")))
            .collect::<Vec<_>>()
            .join(",");
        let rows = (0..session.t).map(|i| {
            let mut fields = vec![
                (i + 1).to_string(),
                format!("{:.9}", session.alpha_eur_per_kwh[i]),
            ];
            for (_, schedule) in &schedules {
                fields.push(format!("{:.9}", schedule.p_bat_kw[i]));
            }
            fields.join(",")
        });
        write_csv(&dir.join("profiles_overlay.csv"), &meta, &header, rows)?;
    }

    Ok(ProfilesStudy {
        schedules,
        alpha: session.alpha_eur_per_kwh,
    })
}

// ---------------------------------------------------------------------------
// Robustness study
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct RobustnessStudy {
    pub summary: RobustnessSummary,
}

pub fn run_robustness(ctx: &StudyContext) -> Result<RobustnessStudy> {
    let session = ctx.loaded.session()?;
    let study = &ctx.loaded.config.study;
    let ambient = ctx.ambient()?;
    let thermal = &ctx.loaded.config.thermal;

    // One nominal instance at the configured participation level; the
    // comparison re-splits it per w internally.
    let profile = ctx.profile_for(&ambient, &session, thermal.rho(), thermal.step_s())?;
    let split = assign_intervals(&session.alpha_eur_per_kwh, session.t / 2)?;
    let base = GameInstance::from_profile(
        session.clone(),
        split,
        &profile,
        &ctx.loaded.config.degradation,
    )?;

    let spec = PerturbationSpec {
        low_factor: study.perturbation_low,
        high_factor: study.perturbation_high,
        sample_count: study.draws,
        rng_seed: ctx.seed(),
    };
    let grid = HyperGrid {
        w_values: ctx.w_values(session.t),
        rho_values: ctx.rho_values(session.t),
    };
    let summary = run_comparison(&base, &spec, &grid, &ctx.settings)?;

    if let Some(dir) = &ctx.out_dir {
        let meta = ctx
            .meta()
            .with("study", StudyKind::Robustness)
            .with("draws", study.draws)
            .with("low_factor", study.perturbation_low)
            .with("high_factor", study.perturbation_high);
        let mut rows: Vec<String> = Vec::new();
        for (approach, stats) in [
            ("gt", &summary.game_theoretic),
            ("mo", &summary.multi_objective),
        ] {
            for h in stats.iter() {
                let q_sens = &h.sensitivity_quantiles;
                let q_reg = &h.regret_quantiles;
                for (stat, value) in [
                    ("sensitivity_min", q_sens.min),
                    ("sensitivity_q25", q_sens.q25),
                    ("sensitivity_median", q_sens.median),
                    ("sensitivity_q75", q_sens.q75),
                    ("sensitivity_max", q_sens.max),
                    ("regret_min", q_reg.min),
                    ("regret_q25", q_reg.q25),
                    ("regret_median", q_reg.median),
                    ("regret_q75", q_reg.q75),
                    ("regret_max", q_reg.max),
                    ("regret_excluded", h.regret_excluded as f64),
                ] {
                    rows.push(format!("{approach},{},{stat},{:.12e}", h.hyper, value));
                }
            }
        }
        write_csv(
            &dir.join("robustness_summary.csv"),
            &meta,
            "approach,hyper,stat,value",
            rows,
        )?;

        if study.emit_raw_samples {
            let mut raw: Vec<String> = Vec::new();
            for (approach, stats) in [
                ("gt", &summary.game_theoretic),
                ("mo", &summary.multi_objective),
            ] {
                for h in stats.iter() {
                    for (i, s) in h.sensitivity.iter().enumerate() {
                        raw.push(format!("{approach},{},{i},sensitivity,{s:.12e}", h.hyper));
                    }
                    for (i, r) in h.regret.iter().enumerate() {
                        raw.push(format!("{approach},{},{i},regret,{r:.12e}", h.hyper));
                    }
                }
            }
            write_csv(
                &dir.join("robustness_samples.csv"),
                &meta,
                "approach,hyper,sample,metric,value",
                raw,
            )?;
        }
    }

    Ok(RobustnessStudy { summary })
}

// ---------------------------------------------------------------------------
// Year-long projection study
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct ProjectionRow {
    pub capacity_kwh: f64,
    pub w: usize,
    pub annual_charging_cost_eur: f64,
    pub annual_cyclic_loss_pct: f64,
    pub annual_degradation_cost_eur: f64,
    pub sessions: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProjectionStudy {
    pub rows: Vec<ProjectionRow>,
    pub session_intervals: usize,
}

/// Weekday pattern (0 = Monday) for `k` V2G days per week: spread across the
/// week starting Monday/Wednesday/Friday.
fn weekday_pattern(days_per_week: usize) -> Vec<usize> {
    const ORDER: [usize; 7] = [0, 2, 4, 1, 3, 5, 6];
    let mut days: Vec<usize> = ORDER[..days_per_week.min(7)].to_vec();
    days.sort_unstable();
    days
}

pub fn run_projection(ctx: &StudyContext) -> Result<ProjectionStudy> {
    let config = &ctx.loaded.config;
    let study = &config.study;
    let ambient_path = config.ambient.path.as_ref().ok_or_else(|| {
        Error::InvalidConfig(vec!["projection requires ambient.path".into()])
    })?;
    let ambient = AmbientSeries::from_csv_path(&ctx.loaded.resolve(ambient_path))?;
    // Session windows run 8:00-20:00; the last one starts on day 364.
    let needed_h = 364.0 * 24.0 + 8.0 + study.projection_session_hours;
    if ambient.end_time_h() + 1e-9 < needed_h {
        return Err(Error::InvalidConfig(vec![format!(
            "ambient file covers {:.1} h but a full year needs {needed_h:.1} h",
            ambient.end_time_h()
        )]));
    }

    let delta_t = config.session.delta_t_h;
    let t_proj = (study.projection_session_hours / delta_t).round() as usize;
    let mean = ctx.loaded.mean_tariff()?;
    if mean.len() < t_proj {
        return Err(Error::InvalidConfig(vec![format!(
            "tariff mean profile has {} intervals, projection sessions need {t_proj}",
            mean.len()
        )]));
    }
    let mean = &mean[..t_proj];
    let w_values: Vec<usize> = ctx
        .w_values(t_proj)
        .into_iter()
        .filter(|&w| w <= t_proj)
        .collect();

    let pattern = weekday_pattern(study.v2g_days_per_week);
    let session_days: Vec<usize> = (0..365)
        .filter(|day| pattern.contains(&(day_of_week(*day))))
        .collect();

    let cells: Vec<(f64, usize)> = study
        .capacities_kwh
        .iter()
        .flat_map(|&cap| w_values.iter().map(move |&w| (cap, w)))
        .collect();

    let rows: Vec<ProjectionRow> = cells
        .par_iter()
        .map(|&(capacity, w)| -> Result<ProjectionRow> {
            let pack = scaled_pack(&config.pack, capacity);
            let mut pu = config.session.clone();
            pu.t = t_proj;
            let mut charging_cost = 0.0;
            let mut loss_fraction = 0.0;
            // First gap matches the steady weekly rhythm.
            let mut prev_day: i64 = pattern.last().map_or(0, |&d| d as i64) - 7;
            for (session_idx, &day) in session_days.iter().enumerate() {
                let gap_days = (day as i64 - prev_day) as f64;
                prev_day = day as i64;
                let alpha = synth::synthesize(
                    mean,
                    config.tariff.relative_std,
                    ctx.seed(),
                    session_idx as u64,
                );
                let mut session =
                    v2g_core::session::per_unit_to_kwh(&pu, alpha, pack.clone());
                let drained = session.e_des_kwh - study.daily_drive_kwh * gap_days;
                session.e_0_kwh = drained.clamp(session.e_min_kwh, session.e_max_kwh);
                session.validate()?;

                let start_h = day as f64 * 24.0 + 8.0;
                let window = ambient.window_from(start_h);
                let instance =
                    ctx.instance_for_w(&session, &window, w, study.projection_step_s)?;
                let schedule = instance.solve_gne(&ctx.settings)?;
                ctx.gate(
                    &schedule,
                    &format!("projection cap={capacity} w={w} day={day}"),
                )?;
                charging_cost += schedule.revenue_cost_eur;
                loss_fraction += schedule.degradation_loss_fraction;
            }
            Ok(ProjectionRow {
                capacity_kwh: capacity,
                w,
                annual_charging_cost_eur: charging_cost,
                annual_cyclic_loss_pct: loss_fraction * 100.0,
                annual_degradation_cost_eur: pack.gamma_eur_per_kwh
                    * pack.pack_capacity_kwh
                    * loss_fraction,
                sessions: session_days.len(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    if let Some(dir) = &ctx.out_dir {
        let meta = ctx
            .meta()
            .with("study", StudyKind::Projection)
            .with("session_intervals", t_proj)
            .with("v2g_days_per_week", study.v2g_days_per_week);
        write_csv(
            &dir.join("projection_tradeoff.csv"),
            &meta,
            "capacity_kwh,w,annual_charging_cost_eur,annual_cyclic_loss_pct,\
             annual_degradation_cost_eur,sessions",
            rows.iter().map(|r| {
                format!(
                    "{},{},{:.9},{:.9},{:.9},{}",
                    r.capacity_kwh,
                    r.w,
                    r.annual_charging_cost_eur,
                    r.annual_cyclic_loss_pct,
                    r.annual_degradation_cost_eur,
                    r.sessions
                )
            }),
        )?;
    }

    Ok(ProjectionStudy {
        rows,
        session_intervals: t_proj,
    })
}

fn day_of_week(day: usize) -> usize {
    day % 7
}

/// Scale the reference pack to a different energy capacity by adjusting the
/// number of parallel strings; cell properties stay fixed.
fn scaled_pack(base: &BatteryPackSpec, capacity_kwh: f64) -> BatteryPackSpec {
    let ratio = capacity_kwh / base.pack_capacity_kwh;
    let parallel = ((f64::from(base.n_parallel) * ratio).round() as u32).max(1);
    BatteryPackSpec {
        n_parallel: parallel,
        pack_capacity_kwh: capacity_kwh,
        ..base.clone()
    }
}
