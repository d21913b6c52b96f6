//! Runner-level tests on trimmed grids, driven by the shipped example
//! configurations.

use std::path::{Path, PathBuf};

use v2g_core::Error;
use v2g_studies::config::load_config;
use v2g_studies::studies::{
    run_charger, run_profiles, run_projection, run_robustness, run_tariff_variance,
    run_temperature, StudyContext,
};

fn config_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

fn context(name: &str, out: Option<&Path>) -> StudyContext {
    let loaded = load_config(&config_path(name)).unwrap();
    let mut ctx = StudyContext::new(loaded);
    ctx.out_dir = out.map(Path::to_path_buf);
    // Trim the thermal step for test speed; minutes-scale dynamics are still
    // fully resolved at 30 s.
    ctx.loaded.config.thermal.step_s = Some(30.0);
    ctx
}

#[test]
fn temperature_study_costs_move_monotonically_with_w() {
    let mut ctx = context("temperature.json", None);
    ctx.loaded.config.study.t_a_values_c = vec![10.0, 40.0];
    ctx.loaded.config.study.w_values = Some(vec![0, 4, 8, 12, 16]);
    let study = run_temperature(&ctx).unwrap();
    for &t_a in &[10.0, 40.0] {
        let series: Vec<_> = study.rows.iter().filter(|r| r.t_a_c == t_a).collect();
        for pair in series.windows(2) {
            assert!(
                pair[1].charging_cost_eur <= pair[0].charging_cost_eur + 1e-6,
                "T_a = {t_a}: charging cost increased from w = {} to {}",
                pair[0].w,
                pair[1].w
            );
        }
    }
}

#[test]
fn temperature_slopes_fall_with_warmer_unclamped_climates() {
    let mut ctx = context("temperature.json", None);
    ctx.loaded.config.study.t_a_values_c = vec![10.0, 40.0];
    ctx.loaded.config.study.w_values = Some(vec![0, 4, 8, 12, 16]);
    let study = run_temperature(&ctx).unwrap();
    let slope = |t: f64| {
        study
            .slopes
            .iter()
            .find(|s| s.t_a_c == t)
            .unwrap()
            .clone()
    };
    let cold = slope(10.0);
    let hot = slope(40.0);
    assert!(!cold.b1_clamped && !hot.b1_clamped);
    assert!(
        cold.slope_pct > hot.slope_pct,
        "cold slope {} should exceed hot slope {}",
        cold.slope_pct,
        hot.slope_pct
    );
}

#[test]
fn tariff_variance_scale_zero_returns_the_mean_profile() {
    let mut ctx = context("tariff_variance.json", None);
    ctx.loaded.config.study.w_values = Some(vec![0, 8, 16]);
    let study = run_tariff_variance(&ctx).unwrap();
    let session = ctx.loaded.session().unwrap();
    let zero = study
        .profiles
        .iter()
        .find(|(s, _)| *s == 0.0)
        .expect("scale 0 present");
    assert_eq!(zero.1, session.alpha_eur_per_kwh);
}

#[test]
fn tariff_variance_higher_scales_are_more_exploitable() {
    let mut ctx = context("tariff_variance.json", None);
    ctx.loaded.config.study.w_values = Some(vec![0, 4, 8, 12, 16]);
    let study = run_tariff_variance(&ctx).unwrap();
    let scales = [0.0, 1.0, 2.0];
    for w in [0usize, 4, 8, 12, 16] {
        for pair in scales.windows(2) {
            let cost = |s: f64| {
                study
                    .rows
                    .iter()
                    .find(|r| r.scale == s && r.w == w)
                    .unwrap()
                    .charging_cost_eur
            };
            assert!(
                cost(pair[1]) <= cost(pair[0]) + 1e-6,
                "w = {w}: scale {} cost above scale {}",
                pair[1],
                pair[0]
            );
        }
    }
}

#[test]
fn charger_spans_grow_with_rating() {
    let mut ctx = context("charger.json", None);
    ctx.loaded.config.study.w_values = Some(vec![0, 4, 8, 12, 16]);
    let study = run_charger(&ctx).unwrap();
    for pair in study.spans.windows(2) {
        assert!(pair[1].charging_span_eur >= pair[0].charging_span_eur - 1e-6);
        assert!(pair[1].degradation_span_eur >= pair[0].degradation_span_eur - 1e-6);
    }
}

#[test]
fn charger_below_minimum_rating_surfaces_infeasibility() {
    let mut ctx = context("charger.json", None);
    // 2 kW for 4 hours cannot move the battery from 25 to 45 kWh.
    ctx.loaded.config.study.charger_ratings_kw = vec![2.0];
    match run_charger(&ctx) {
        Err(Error::Infeasible(msg)) => assert!(msg.contains("kWh"), "{msg}"),
        other => panic!("expected infeasibility, got {other:?}"),
    }
}

#[test]
fn profile_export_writes_deterministic_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let mut ctx = context("profiles.json", Some(dir.path()));
    ctx.loaded.config.study.profile_w_values = vec![0, 8, 16];
    let study = run_profiles(&ctx).unwrap();
    let session = ctx.loaded.session().unwrap();
    for (w, schedule) in &study.schedules {
        let e_final = *schedule.energy_trace_kwh.last().unwrap();
        assert!(
            (e_final - session.e_des_kwh).abs() <= session.epsilon_kwh + 1e-6,
            "w = {w}: terminal energy {e_final}"
        );
        let path = dir.path().join(format!("profile_w{w}.csv"));
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("# tool_version="));
        let p = v2g_core::equilibrium::read_schedule_csv(text.as_bytes(), "test").unwrap();
        for (a, b) in p.iter().zip(&schedule.p_bat_kw) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    // A second run with the same configuration reproduces identical bytes.
    let overlay_a = std::fs::read(dir.path().join("profiles_overlay.csv")).unwrap();
    run_profiles(&ctx).unwrap();
    let overlay_b = std::fs::read(dir.path().join("profiles_overlay.csv")).unwrap();
    assert_eq!(overlay_a, overlay_b);
}

#[test]
fn robustness_runner_is_reproducible() {
    let mut ctx = context("robustness.json", None);
    ctx.loaded.config.session.t = 8;
    ctx.loaded.config.study.draws = 4;
    ctx.loaded.config.study.w_values = Some(vec![0, 4, 8]);
    ctx.loaded.config.study.rho_values = Some(vec![0.0, 0.5, 1.0]);
    let a = run_robustness(&ctx).unwrap();
    let b = run_robustness(&ctx).unwrap();
    assert_eq!(a.summary, b.summary);
    assert_eq!(a.summary.draws, 4);
}

#[test]
fn projection_orders_capacity_losses_and_minimizes_at_w_zero() {
    let mut ctx = context("projection.json", None);
    // Trimmed year: short sessions, one V2G day per week, two capacities.
    ctx.loaded.config.study.projection_session_hours = 2.0;
    ctx.loaded.config.study.v2g_days_per_week = 1;
    ctx.loaded.config.study.capacities_kwh = vec![50.0, 100.0];
    ctx.loaded.config.study.w_values = Some(vec![0, 4, 8]);
    ctx.loaded.config.study.projection_step_s = 60.0;
    let study = run_projection(&ctx).unwrap();
    assert_eq!(study.session_intervals, 8);

    for w in [0usize, 4, 8] {
        let loss = |cap: f64| {
            study
                .rows
                .iter()
                .find(|r| r.capacity_kwh == cap && r.w == w)
                .unwrap()
                .annual_cyclic_loss_pct
        };
        assert!(
            loss(50.0) > loss(100.0),
            "w = {w}: smaller pack should lose more capacity"
        );
    }
    for cap in [50.0, 100.0] {
        let series: Vec<_> = study
            .rows
            .iter()
            .filter(|r| r.capacity_kwh == cap)
            .collect();
        let at_zero = series.iter().find(|r| r.w == 0).unwrap();
        for row in &series {
            assert!(
                at_zero.annual_degradation_cost_eur
                    <= row.annual_degradation_cost_eur + 1e-6,
                "cap = {cap}: w = 0 is not the degradation minimum"
            );
        }
    }
}

#[test]
fn projection_without_v2g_days_accumulates_nothing() {
    let mut ctx = context("projection.json", None);
    ctx.loaded.config.study.projection_session_hours = 2.0;
    ctx.loaded.config.study.v2g_days_per_week = 0;
    ctx.loaded.config.study.capacities_kwh = vec![50.0];
    ctx.loaded.config.study.w_values = Some(vec![0, 8]);
    let study = run_projection(&ctx).unwrap();
    for row in &study.rows {
        assert_eq!(row.sessions, 0);
        assert_eq!(row.annual_degradation_cost_eur, 0.0);
        assert_eq!(row.annual_charging_cost_eur, 0.0);
    }
}

#[test]
fn projection_rejects_short_ambient_records() {
    let dir = tempfile::tempdir().unwrap();
    let short = dir.path().join("short.csv");
    std::fs::write(&short, "time_h,temp_C\n0,10\n100,12\n").unwrap();
    let mut ctx = context("projection.json", None);
    ctx.loaded.config.ambient.path = Some(short);
    ctx.loaded.base_dir = PathBuf::from("/");
    match run_projection(&ctx) {
        Err(Error::InvalidConfig(list)) => {
            assert!(list.iter().any(|v| v.contains("full year")), "{list:?}")
        }
        other => panic!("expected config error, got {other:?}"),
    }
}
