//! Deterministic solver for the convex quadratic programs behind the
//! charging problems.
//!
//! Problems have the separable form
//!
//! ```text
//! minimize    0.5 * x' diag(p) x + q' x
//! subject to  l <= A x <= u
//! ```
//!
//! The one-half factor is the objective convention module-wide; see
//! [`QuadraticProgram::objective_value`]. Every row of `A` is either a unit
//! row `e_i'` (a box bound on one variable) or a prefix row summing
//! coordinates `0..=k` (an energy-corridor or terminal constraint), so the
//! matrix is never stored explicitly.
//!
//! The solver is an operator-splitting (ADMM) iteration in the style of
//! OSQP: alternate a regularized equality-constrained minimization with a
//! projection onto the bound slab, followed by a dual update. On
//! convergence, an active-set polish solves the KKT equality system of the
//! detected active rows and is kept only when it strictly reduces the worst
//! residual. Primal infeasibility is detected through the standard
//! divergence certificate on the dual increment. All arithmetic is fixed
//! order: identical inputs and settings reproduce bitwise-identical reports.

use crate::{Error, Result};

/// Sparse row pattern of the constraint matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RowPattern {
    /// Unit row selecting one coordinate.
    Unit(usize),
    /// Prefix row summing coordinates `0..=k`.
    Prefix(usize),
}

impl RowPattern {
    fn max_index(&self) -> usize {
        match *self {
            RowPattern::Unit(i) => i,
            RowPattern::Prefix(k) => k,
        }
    }

    fn dot(&self, x: &[f64]) -> f64 {
        match *self {
            RowPattern::Unit(i) => x[i],
            RowPattern::Prefix(k) => x[..=k].iter().sum(),
        }
    }

    fn add_scaled(&self, scale: f64, out: &mut [f64]) {
        match *self {
            RowPattern::Unit(i) => out[i] += scale,
            RowPattern::Prefix(k) => {
                for v in &mut out[..=k] {
                    *v += scale;
                }
            }
        }
    }
}

/// Convex QP with diagonal Hessian over unit and prefix-sum rows.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticProgram {
    diag_q: Vec<f64>,
    linear: Vec<f64>,
    rows: Vec<RowPattern>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl QuadraticProgram {
    pub fn new(
        diag_q: Vec<f64>,
        linear: Vec<f64>,
        rows: Vec<RowPattern>,
        lower: Vec<f64>,
        upper: Vec<f64>,
    ) -> Result<Self> {
        let n = diag_q.len();
        let m = rows.len();
        if linear.len() != n {
            return Err(Error::domain(
                "linear term length must match variable count",
            ));
        }
        if lower.len() != m || upper.len() != m {
            return Err(Error::domain(
                "bound vectors must match the constraint row count",
            ));
        }
        if let Some(bad) = diag_q.iter().find(|d| !d.is_finite() || **d < 0.0) {
            return Err(Error::domain(format!(
                "quadratic diagonal must be finite and >= 0 (convexity), got {bad}"
            )));
        }
        for (i, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if lo > hi {
                return Err(Error::domain(format!(
                    "row {i}: lower bound {lo} exceeds upper bound {hi}"
                )));
            }
        }
        for row in &rows {
            if row.max_index() >= n {
                return Err(Error::domain(format!(
                    "row pattern {row:?} references a variable out of range"
                )));
            }
        }
        Ok(Self {
            diag_q,
            linear,
            rows,
            lower,
            upper,
        })
    }

    pub fn n(&self) -> usize {
        self.diag_q.len()
    }

    pub fn m(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[RowPattern] {
        &self.rows
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag_q
    }

    pub fn linear(&self) -> &[f64] {
        &self.linear
    }

    /// `0.5 * x' diag(p) x + q' x`.
    pub fn objective_value(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.n() {
            acc += 0.5 * self.diag_q[i] * x[i] * x[i] + self.linear[i] * x[i];
        }
        acc
    }

    fn ax(&self, x: &[f64], out: &mut [f64]) {
        // Prefix rows share the running cumulative sum.
        let mut cumsum = vec![0.0; self.n()];
        let mut acc = 0.0;
        for (i, &v) in x.iter().enumerate() {
            acc += v;
            cumsum[i] = acc;
        }
        for (r, row) in self.rows.iter().enumerate() {
            out[r] = match *row {
                RowPattern::Unit(i) => x[i],
                RowPattern::Prefix(k) => cumsum[k],
            };
        }
    }

    fn at_y(&self, y: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        // Unit rows add directly; prefix rows accumulate a reverse suffix sum.
        let mut prefix_weight = vec![0.0; self.n()];
        for (r, row) in self.rows.iter().enumerate() {
            match *row {
                RowPattern::Unit(i) => out[i] += y[r],
                RowPattern::Prefix(k) => prefix_weight[k] += y[r],
            }
        }
        let mut acc = 0.0;
        for j in (0..self.n()).rev() {
            acc += prefix_weight[j];
            out[j] += acc;
        }
    }

    /// Worst violation of `l <= Ax <= u`.
    pub fn constraint_violation(&self, x: &[f64]) -> f64 {
        let mut ax = vec![0.0; self.m()];
        self.ax(x, &mut ax);
        let mut worst = 0.0f64;
        for (r, &v) in ax.iter().enumerate() {
            worst = worst.max(self.lower[r] - v).max(v - self.upper[r]);
        }
        worst.max(0.0)
    }
}

/// ADMM and polish settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveSettings {
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub max_iter: usize,
    /// Proximal regularization on the x-update.
    pub sigma: f64,
    /// Initial penalty weight; adapted during the run when `adaptive_rho`.
    pub rho: f64,
    /// Over-relaxation factor in (0, 2).
    pub over_relaxation: f64,
    pub adaptive_rho: bool,
    pub polish: bool,
}

impl Default for SolveSettings {
    fn default() -> Self {
        Self {
            eps_abs: 1e-8,
            eps_rel: 1e-8,
            max_iter: 200_000,
            sigma: 1e-6,
            rho: 0.1,
            over_relaxation: 1.6,
            adaptive_rho: true,
            polish: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    MaxIterations,
    Infeasible,
}

/// Solve outcome. The residuals are the true residuals of the returned
/// iterate, recomputed after any polishing.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub x: Vec<f64>,
    pub objective: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub iterations: usize,
    pub status: SolveStatus,
    pub polished: bool,
}

const CHECK_EVERY: usize = 25;
const RHO_UPDATE_EVERY: usize = 100;
const RHO_MIN: f64 = 1e-6;
const RHO_MAX: f64 = 1e6;
const EPS_PINF: f64 = 1e-9;
const POLISH_DELTA: f64 = 1e-9;

/// Penalty weights per row; near-equality rows get a stiffer weight.
fn rho_vector(qp: &QuadraticProgram, rho: f64) -> Vec<f64> {
    qp.lower
        .iter()
        .zip(&qp.upper)
        .map(|(&lo, &hi)| {
            let span = hi - lo;
            if span <= 1e-6 * (1.0 + lo.abs().max(hi.abs())) {
                (rho * 1e3).clamp(RHO_MIN, RHO_MAX)
            } else {
                rho
            }
        })
        .collect()
}

/// Dense lower-triangular Cholesky of `diag(p) + sigma I + A' R A`.
fn factor_normal_matrix(qp: &QuadraticProgram, rho_vec: &[f64], sigma: f64) -> Result<Vec<f64>> {
    let n = qp.n();
    let mut m = vec![0.0; n * n];
    // Unit-row and prefix-row contributions to A' R A.
    let mut unit_weight = vec![0.0; n];
    let mut prefix_weight = vec![0.0; n];
    for (r, row) in qp.rows.iter().enumerate() {
        match *row {
            RowPattern::Unit(i) => unit_weight[i] += rho_vec[r],
            RowPattern::Prefix(k) => prefix_weight[k] += rho_vec[r],
        }
    }
    // suffix[j] = total weight of prefix rows covering coordinate j.
    let mut suffix = vec![0.0; n + 1];
    for j in (0..n).rev() {
        suffix[j] = suffix[j + 1] + prefix_weight[j];
    }
    for i in 0..n {
        for j in 0..n {
            m[i * n + j] = suffix[i.max(j)];
        }
        m[i * n + i] += qp.diag_q[i] + sigma + unit_weight[i];
    }
    cholesky_factor(&mut m, n)
        .map_err(|_| Error::Solver("normal matrix is not positive definite".into()))?;
    Ok(m)
}

fn cholesky_factor(a: &mut [f64], n: usize) -> std::result::Result<(), ()> {
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if !(d > 0.0) {
            return Err(());
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut v = a[i * n + j];
            for k in 0..j {
                v -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = v / d;
        }
    }
    Ok(())
}

fn cholesky_solve(l: &[f64], n: usize, b: &mut [f64]) {
    for i in 0..n {
        let mut v = b[i];
        for k in 0..i {
            v -= l[i * n + k] * b[k];
        }
        b[i] = v / l[i * n + i];
    }
    for i in (0..n).rev() {
        let mut v = b[i];
        for k in i + 1..n {
            v -= l[k * n + i] * b[k];
        }
        b[i] = v / l[i * n + i];
    }
}

fn lu_factor(a: &mut [f64], n: usize, piv: &mut [usize]) -> std::result::Result<(), ()> {
    let scale = a.iter().fold(0.0f64, |s, v| s.max(v.abs())).max(1.0);
    for col in 0..n {
        let mut p = col;
        let mut best = a[col * n + col].abs();
        for r in col + 1..n {
            let v = a[r * n + col].abs();
            if v > best {
                best = v;
                p = r;
            }
        }
        if best <= 1e-14 * scale {
            return Err(());
        }
        piv[col] = p;
        if p != col {
            for c in 0..n {
                a.swap(col * n + c, p * n + c);
            }
        }
        let d = a[col * n + col];
        for r in col + 1..n {
            let f = a[r * n + col] / d;
            a[r * n + col] = f;
            for c in col + 1..n {
                a[r * n + c] -= f * a[col * n + c];
            }
        }
    }
    Ok(())
}

fn lu_solve(a: &[f64], n: usize, piv: &[usize], b: &mut [f64]) {
    for col in 0..n {
        b.swap(col, piv[col]);
    }
    for i in 0..n {
        let mut v = b[i];
        for k in 0..i {
            v -= a[i * n + k] * b[k];
        }
        b[i] = v;
    }
    for i in (0..n).rev() {
        let mut v = b[i];
        for k in i + 1..n {
            v -= a[i * n + k] * b[k];
        }
        b[i] = v / a[i * n + i];
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |s, x| s.max(x.abs()))
}

struct Residuals {
    prim: f64,
    dual: f64,
    prim_scale: f64,
    dual_scale: f64,
}

fn residuals(qp: &QuadraticProgram, x: &[f64], z: &[f64], y: &[f64]) -> Residuals {
    let n = qp.n();
    let m = qp.m();
    let mut ax = vec![0.0; m];
    qp.ax(x, &mut ax);
    let mut prim = 0.0f64;
    for r in 0..m {
        prim = prim.max((ax[r] - z[r]).abs());
    }
    let mut aty = vec![0.0; n];
    qp.at_y(y, &mut aty);
    let mut px_norm = 0.0f64;
    let mut dual = 0.0f64;
    for i in 0..n {
        let px = qp.diag_q[i] * x[i];
        px_norm = px_norm.max(px.abs());
        dual = dual.max((px + qp.linear[i] + aty[i]).abs());
    }
    Residuals {
        prim,
        dual,
        prim_scale: inf_norm(&ax).max(inf_norm(z)),
        dual_scale: px_norm.max(inf_norm(&qp.linear)).max(inf_norm(&aty)),
    }
}

/// Minimize the QP. See the module docs for the algorithm outline.
pub fn solve(qp: &QuadraticProgram, settings: &SolveSettings) -> Result<SolveReport> {
    let n = qp.n();
    let m = qp.m();
    if n == 0 {
        return Err(Error::domain("empty problem"));
    }
    let alpha = settings.over_relaxation;
    let mut rho = settings.rho;
    let mut rho_vec = rho_vector(qp, rho);
    let mut chol = factor_normal_matrix(qp, &rho_vec, settings.sigma)?;

    let mut x = vec![0.0; n];
    let mut z: Vec<f64> = (0..m)
        .map(|r| 0.0f64.clamp(qp.lower[r], qp.upper[r]))
        .collect();
    let mut y = vec![0.0; m];
    let mut delta_y = vec![0.0; m];
    let mut ax_tilde = vec![0.0; m];
    let mut rhs = vec![0.0; n];
    let mut status = SolveStatus::MaxIterations;
    let mut iterations = settings.max_iter;

    // Once the iterate is coarsely converged the active set is usually
    // correct, and the KKT polish delivers machine-precision residuals far
    // cheaper than running the splitting to the tight tolerance.
    let coarse_abs = settings.eps_abs.max(1e-6);
    let coarse_rel = settings.eps_rel.max(1e-6);
    let polish_target = settings.eps_abs.max(1e-9);
    let mut early_polish: Option<PolishResult> = None;
    let mut next_polish_attempt = 0usize;

    for iter in 1..=settings.max_iter {
        // x-update: (P + sigma I + A'RA) x~ = sigma x - q + A'(R z - y)
        let scaled: Vec<f64> = (0..m).map(|r| rho_vec[r] * z[r] - y[r]).collect();
        qp.at_y(&scaled, &mut rhs);
        for i in 0..n {
            rhs[i] += settings.sigma * x[i] - qp.linear[i];
        }
        cholesky_solve(&chol, n, &mut rhs);
        let x_tilde = &rhs;
        qp.ax(x_tilde, &mut ax_tilde);

        for i in 0..n {
            x[i] = alpha * x_tilde[i] + (1.0 - alpha) * x[i];
        }
        for r in 0..m {
            let v = alpha * ax_tilde[r] + (1.0 - alpha) * z[r];
            let z_new = (v + y[r] / rho_vec[r]).clamp(qp.lower[r], qp.upper[r]);
            let y_new = y[r] + rho_vec[r] * (v - z_new);
            delta_y[r] = y_new - y[r];
            z[r] = z_new;
            y[r] = y_new;
        }

        if iter % CHECK_EVERY == 0 || iter == settings.max_iter {
            let res = residuals(qp, &x, &z, &y);
            let eps_prim = settings.eps_abs + settings.eps_rel * res.prim_scale;
            let eps_dual = settings.eps_abs + settings.eps_rel * res.dual_scale;
            if res.prim <= eps_prim && res.dual <= eps_dual {
                status = SolveStatus::Optimal;
                iterations = iter;
                break;
            }

            if settings.polish
                && iter >= next_polish_attempt
                && res.prim <= coarse_abs + coarse_rel * res.prim_scale
                && res.dual <= coarse_abs + coarse_rel * res.dual_scale
            {
                if let Some(pol) = polish(qp, &y) {
                    if pol.violation.max(pol.stationarity) <= polish_target {
                        early_polish = Some(pol);
                        status = SolveStatus::Optimal;
                        iterations = iter;
                        break;
                    }
                }
                next_polish_attempt = iter + 500;
            }

            // Primal infeasibility certificate on the dual increment.
            let dy_norm = inf_norm(&delta_y);
            if dy_norm > 0.0 {
                let mut at_dy = vec![0.0; n];
                qp.at_y(&delta_y, &mut at_dy);
                let support: f64 = (0..m)
                    .map(|r| qp.upper[r] * delta_y[r].max(0.0) + qp.lower[r] * delta_y[r].min(0.0))
                    .sum();
                if inf_norm(&at_dy) <= EPS_PINF * dy_norm && support <= -EPS_PINF * dy_norm {
                    status = SolveStatus::Infeasible;
                    iterations = iter;
                    break;
                }
            }

            if settings.adaptive_rho && iter % RHO_UPDATE_EVERY == 0 {
                let num = res.prim / res.prim_scale.max(1e-12);
                let den = res.dual / res.dual_scale.max(1e-12);
                if num > 0.0 && den > 0.0 {
                    let candidate = (rho * (num / den).sqrt()).clamp(RHO_MIN, RHO_MAX);
                    if candidate > 5.0 * rho || candidate < rho / 5.0 {
                        rho = candidate;
                        rho_vec = rho_vector(qp, rho);
                        chol = factor_normal_matrix(qp, &rho_vec, settings.sigma)?;
                    }
                }
            }
        }
    }

    let mut polished = false;
    let mut final_prim;
    let mut final_dual;
    {
        let res = residuals(qp, &x, &z, &y);
        final_prim = res.prim.max(qp.constraint_violation(&x));
        final_dual = res.dual;
    }
    if let Some(pol) = early_polish {
        x = pol.x;
        final_prim = pol.violation;
        final_dual = pol.stationarity;
        polished = true;
    } else if settings.polish && status != SolveStatus::Infeasible {
        if let Some(pol) = polish(qp, &y) {
            let after_worst = pol.violation.max(pol.stationarity);
            if after_worst <= final_prim.max(final_dual) {
                x = pol.x;
                final_prim = pol.violation;
                final_dual = pol.stationarity;
                polished = true;
                if status == SolveStatus::MaxIterations
                    && after_worst <= settings.eps_abs.max(1e-9)
                {
                    status = SolveStatus::Optimal;
                }
            }
        }
    }

    Ok(SolveReport {
        objective: qp.objective_value(&x),
        x,
        primal_residual: final_prim,
        dual_residual: final_dual,
        iterations,
        status,
        polished,
    })
}

struct PolishResult {
    x: Vec<f64>,
    /// Worst violation of `l <= Ax <= u` at the polished point.
    violation: f64,
    /// KKT stationarity residual with the recovered multipliers.
    stationarity: f64,
}

/// Solve the KKT equality system on the detected active set, dropping rows
/// whose recovered multiplier has the wrong sign and retrying (active-set
/// repair), up to a few rounds.
fn polish(qp: &QuadraticProgram, y: &[f64]) -> Option<PolishResult> {
    let m = qp.m();
    let y_tol = 1e-9 * (1.0 + inf_norm(y));

    // One active row per distinct pattern; duplicates keep the stronger dual.
    let mut active: Vec<(usize, f64)> = Vec::new();
    let mut best_for_pattern: std::collections::HashMap<RowPattern, (usize, f64, f64)> =
        std::collections::HashMap::new();
    for r in 0..m {
        let span = qp.upper[r] - qp.lower[r];
        let equality = span <= 1e-12 * (1.0 + qp.lower[r].abs().max(qp.upper[r].abs()));
        let bound = if equality {
            qp.lower[r]
        } else if y[r] < -y_tol {
            qp.lower[r]
        } else if y[r] > y_tol {
            qp.upper[r]
        } else {
            continue;
        };
        let strength = if equality { f64::INFINITY } else { y[r].abs() };
        match best_for_pattern.get(&qp.rows[r]) {
            Some(&(_, s, _)) if s >= strength => {}
            _ => {
                best_for_pattern.insert(qp.rows[r], (r, strength, bound));
            }
        }
    }
    for (_, (r, _, bound)) in best_for_pattern.drain() {
        active.push((r, bound));
    }
    active.sort_by_key(|(r, _)| *r);

    for _round in 0..4 {
        let (result, multipliers) = solve_active_kkt(qp, &active)?;
        // Dual feasibility of the recovered multipliers: a wrong-signed
        // multiplier means the row does not actually bind; drop and retry.
        let mut offenders = Vec::new();
        for (j, &(r, bound)) in active.iter().enumerate() {
            let span = qp.upper[r] - qp.lower[r];
            if span > 1e-12 * (1.0 + bound.abs()) {
                let mult = multipliers[j];
                let at_lower = (bound - qp.lower[r]).abs() <= (bound - qp.upper[r]).abs();
                if (at_lower && mult > 1e-7) || (!at_lower && mult < -1e-7) {
                    offenders.push(j);
                }
            }
        }
        if offenders.is_empty() {
            return Some(result);
        }
        for &j in offenders.iter().rev() {
            active.remove(j);
        }
    }
    None
}

/// One equality-constrained KKT solve with iterative refinement; returns the
/// polish candidate and the multipliers of the active rows.
fn solve_active_kkt(
    qp: &QuadraticProgram,
    active: &[(usize, f64)],
) -> Option<(PolishResult, Vec<f64>)> {
    let n = qp.n();
    let m = qp.m();
    let ma = active.len();
    let dim = n + ma;

    // KKT matrix [P + dI, Aa'; Aa, -dI] with small regularization, solved by
    // LU and tightened with refinement against the unregularized system.
    let mut k = vec![0.0; dim * dim];
    for i in 0..n {
        k[i * dim + i] = qp.diag_q[i] + POLISH_DELTA;
    }
    for (j, &(r, _)) in active.iter().enumerate() {
        let mut row_vec = vec![0.0; n];
        qp.rows[r].add_scaled(1.0, &mut row_vec);
        for i in 0..n {
            k[i * dim + (n + j)] = row_vec[i];
            k[(n + j) * dim + i] = row_vec[i];
        }
        k[(n + j) * dim + (n + j)] = -POLISH_DELTA;
    }
    let mut rhs = vec![0.0; dim];
    for i in 0..n {
        rhs[i] = -qp.linear[i];
    }
    for (j, &(_, bound)) in active.iter().enumerate() {
        rhs[n + j] = bound;
    }

    let mut factored = k.clone();
    let mut piv = vec![0usize; dim];
    lu_factor(&mut factored, dim, &mut piv).ok()?;
    let mut v = rhs.clone();
    lu_solve(&factored, dim, &piv, &mut v);

    // Refinement against the unregularized KKT operator.
    for _ in 0..3 {
        let mut resid = rhs.clone();
        for i in 0..n {
            resid[i] -= qp.diag_q[i] * v[i];
        }
        for (j, &(r, _)) in active.iter().enumerate() {
            // Upper block: A_act' * nu; lower block: A_act * x.
            qp.rows[r].add_scaled(-v[n + j], &mut resid[..n]);
            resid[n + j] -= qp.rows[r].dot(&v[..n]);
        }
        let mut d = resid;
        lu_solve(&factored, dim, &piv, &mut d);
        for i in 0..dim {
            v[i] += d[i];
        }
    }

    let x_pol = v[..n].to_vec();
    let violation = qp.constraint_violation(&x_pol);
    // Stationarity with the recovered multipliers on active rows.
    let mut y_full = vec![0.0; m];
    for (j, &(r, _)) in active.iter().enumerate() {
        y_full[r] = v[n + j];
    }
    let mut aty = vec![0.0; n];
    qp.at_y(&y_full, &mut aty);
    let mut stat = 0.0f64;
    for i in 0..n {
        stat = stat.max((qp.diag_q[i] * x_pol[i] + qp.linear[i] + aty[i]).abs());
    }
    let multipliers = v[n..].to_vec();
    Some((
        PolishResult {
            x: x_pol,
            violation,
            stationarity: stat,
        },
        multipliers,
    ))
}
