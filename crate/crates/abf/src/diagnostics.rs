//! Entropies, Fisher information, Wasserstein distance, and decay-rate fits.
//!
//! For a density snapshot `ψ` against the stationary `ψ_∞`, the report carries
//! the entropy hierarchy
//!
//! ```text
//! E   = H(μ_t | μ_∞)                 total
//! E_M = H(μ_t^ξ | μ_∞^ξ)            macroscopic (ξ-marginal)
//! e_m(x) = H(μ_{t|x} | μ_{∞|x})     local, mixing both channels
//! E_m = ∫ e_m ψ^ξ dx                 microscopic
//! e_c(x) = H(μ^I_{t|x} | μ^I_{∞|x}) Bernoulli channel weights
//! E_c = ∫ e_c ψ^ξ dx                 channel entropy
//! P   = Σ_i ∫ (ψ^{ξ,I}/ψ^{ξ,I}_∞ − 1)² ψ^{ξ,I}_∞ dx
//! ```
//!
//! All quadratures use the solver's cell weights, and the conditionals are
//! renormalized per slice before entropies are taken, so the decomposition
//! `E = E_M + E_m` and the comparison `E_c ≤ P` hold discretely (to rounding),
//! not just in the continuum limit.

use crate::error::{Error, Result};
use crate::fokker_planck::{BiasProfile, DensityField};
use crate::grid::Grid;

/// Cells with less probability than this are treated as empty (`0·ln 0 = 0`).
pub const DENSITY_FLOOR: f64 = 1e-30;

/// Relative entropy `Σ p ln(p/q) w` of discrete densities against measure
/// weights `w`. Requires `q > 0` wherever `p > 0`.
pub fn relative_entropy(p: &[f64], q: &[f64], weights: &[f64]) -> Result<f64> {
    if p.len() != q.len() || p.len() != weights.len() {
        return Err(Error::InvalidInput("mismatched lengths in relative_entropy".into()));
    }
    let mut h = 0.0;
    for (idx, ((&pi, &qi), &wi)) in p.iter().zip(q).zip(weights).enumerate() {
        if pi <= DENSITY_FLOOR {
            continue;
        }
        if qi <= 0.0 {
            return Err(Error::NotAbsolutelyContinuous(idx));
        }
        h += pi * (pi / qi).ln() * wi;
    }
    Ok(h)
}

/// Discrete Fisher information `Σ |∂ ln(p/q)|² p w` with centered differences
/// (`periodic` wraps; otherwise one-sided at the ends). `spacing` is the grid
/// step, the weight is `spacing` per cell.
pub fn fisher_information(p: &[f64], q: &[f64], spacing: f64, periodic: bool) -> Result<f64> {
    let n = p.len();
    if q.len() != n {
        return Err(Error::InvalidInput("mismatched lengths in fisher_information".into()));
    }
    if n < 3 {
        return Err(Error::InvalidInput("need at least 3 cells".into()));
    }
    let log_ratio = |i: usize| -> Result<f64> {
        if p[i] <= 0.0 || q[i] <= 0.0 {
            return Err(Error::NotAbsolutelyContinuous(i));
        }
        Ok((p[i] / q[i]).ln())
    };
    let mut total = 0.0;
    for i in 0..n {
        if p[i] <= DENSITY_FLOOR {
            continue;
        }
        let grad = if periodic {
            (log_ratio((i + 1) % n)? - log_ratio((i + n - 1) % n)?) / (2.0 * spacing)
        } else if i == 0 {
            (log_ratio(1)? - log_ratio(0)?) / spacing
        } else if i == n - 1 {
            (log_ratio(n - 1)? - log_ratio(n - 2)?) / spacing
        } else {
            (log_ratio(i + 1)? - log_ratio(i - 1)?) / (2.0 * spacing)
        };
        total += grad * grad * p[i] * spacing;
    }
    Ok(total)
}

/// One time sample of the full entropy hierarchy.
#[derive(Debug, Clone)]
pub struct EntropyReport {
    pub t: f64,
    /// Total entropy `E`.
    pub e_total: f64,
    /// Macroscopic entropy `E_M`.
    pub e_macro: f64,
    /// Microscopic entropy `E_m`.
    pub e_micro: f64,
    /// Channel entropy `E_c`.
    pub e_channel: f64,
    /// The χ² functional `P` bounding `E_c`.
    pub p_chi2: f64,
    /// `F(ψ^ξ | ψ^ξ_∞)`.
    pub f_macro: f64,
    /// `∫ |A'_t − A'|² ψ^ξ dx`.
    pub bias_error: f64,
    /// Local entropies `e_m(x)`.
    pub e_m_local: Vec<f64>,
    /// Bernoulli entropies `e_c(x)`.
    pub e_c_local: Vec<f64>,
    /// Channel-local entropies `e_cl(x, i)`, indexed `i * n_x + j`.
    pub e_cl_local: Vec<f64>,
    /// Cells `(x, i)` whose channel marginal vanished; their `e_cl` enters as 0
    /// with weight 0 rather than being silently hidden.
    pub empty_conditional_cells: usize,
}

/// Computes every functional of one snapshot with consistent cell quadrature.
pub fn entropy_report(
    t: f64,
    field: &DensityField,
    field_inf: &DensityField,
    bias: &BiasProfile,
    reference_force: &[f64],
    grid: &Grid,
) -> Result<EntropyReport> {
    let n_x = grid.n_x;
    let n_y = grid.n_y;
    let dx = grid.dx();
    let dy = grid.dy();
    if field.n_x != n_x || field_inf.n_x != n_x || bias.force.len() != n_x {
        return Err(Error::InvalidInput("snapshot does not match the grid".into()));
    }

    let xi = field.marginal_xi(grid);
    let xi_inf = field_inf.marginal_xi(grid);
    let mx: Vec<f64> = (0..n_x).map(|j| xi.get(0, j) + xi.get(1, j)).collect();
    let mx_inf: Vec<f64> = (0..n_x).map(|j| xi_inf.get(0, j) + xi_inf.get(1, j)).collect();

    let mut e_total = 0.0;
    let mut e_macro = 0.0;
    let mut e_micro = 0.0;
    let mut e_channel = 0.0;
    let mut p_chi2 = 0.0;
    let mut bias_error = 0.0;
    let mut e_m_local = vec![0.0; n_x];
    let mut e_c_local = vec![0.0; n_x];
    let mut e_cl_local = vec![0.0; 2 * n_x];
    let mut empty_cells = 0usize;

    for j in 0..n_x {
        if mx[j] <= DENSITY_FLOOR {
            return Err(Error::EmptyMarginal { cell: j });
        }
        if mx_inf[j] <= 0.0 {
            return Err(Error::NotAbsolutelyContinuous(j));
        }
        e_macro += mx[j] * (mx[j] / mx_inf[j]).ln() * dx;

        let mut e_m_j = 0.0;
        let mut e_c_j = 0.0;
        for i in 0..2 {
            let w = xi.get(i, j) / mx[j];
            let w_inf = xi_inf.get(i, j) / mx_inf[j];
            // chi^2 functional
            let qi = xi_inf.get(i, j);
            if qi <= 0.0 {
                return Err(Error::NotAbsolutelyContinuous(j));
            }
            let r = xi.get(i, j) / qi - 1.0;
            p_chi2 += r * r * qi * dx;

            if w <= DENSITY_FLOOR {
                // empty channel at this slice: contributes 0 with weight 0
                empty_cells += 1;
                continue;
            }
            e_c_j += w * (w / w_inf).ln();

            // channel-local conditional entropy e_cl(x, i)
            let m = xi.get(i, j);
            let m_inf = xi_inf.get(i, j);
            let base = (i * n_x + j) * n_y;
            let mut e_cl = 0.0;
            for k in 0..n_y {
                let p = field.data()[base + k] * dy / m;
                if p <= DENSITY_FLOOR {
                    continue;
                }
                let q = field_inf.data()[base + k] * dy / m_inf;
                if q <= 0.0 {
                    return Err(Error::NotAbsolutelyContinuous(base + k));
                }
                e_cl += p * (p / q).ln();
            }
            e_cl_local[i * n_x + j] = e_cl;
            // e_m = e_c + sum_i w_i e_cl(i): the exact discrete decomposition
            e_m_j += w * e_cl;
        }
        e_m_j += e_c_j;
        e_m_local[j] = e_m_j;
        e_c_local[j] = e_c_j;
        e_micro += e_m_j * mx[j] * dx;
        e_channel += e_c_j * mx[j] * dx;

        let db = bias.force[j] - reference_force[j];
        bias_error += db * db * mx[j] * dx;
    }

    // total entropy from the global densities
    for idx in 0..field.data().len() {
        let p = field.data()[idx];
        if p <= DENSITY_FLOOR {
            continue;
        }
        let q = field_inf.data()[idx];
        if q <= 0.0 {
            return Err(Error::NotAbsolutelyContinuous(idx));
        }
        e_total += p * (p / q).ln();
    }
    e_total *= dx * dy;

    let f_macro = fisher_information(&mx, &mx_inf, dx, true)?;

    Ok(EntropyReport {
        t,
        e_total,
        e_macro,
        e_micro,
        e_channel,
        p_chi2,
        f_macro,
        bias_error,
        e_m_local,
        e_c_local,
        e_cl_local,
        empty_conditional_cells: empty_cells,
    })
}

/// Checks `∫|A'_t − A'|² ψ^ξ ≤ 2R² E_m + tol`; the margin is the slack
/// `2R² E_m − bias_error`.
pub fn bias_error_bound_check(report: &EntropyReport, r_const: f64) -> (bool, f64) {
    let bound = 2.0 * r_const * r_const * report.e_micro;
    let margin = bound - report.bias_error;
    (report.bias_error <= bound + 1e-12, margin)
}

/// 1-D Wasserstein distance with linear cost, `∫ |F_p − F_q|`, for discrete
/// densities on a common uniform grid with step `spacing`.
pub fn wasserstein_1d(p: &[f64], q: &[f64], spacing: f64) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::InvalidInput(
            "wasserstein_1d needs densities on the same grid".into(),
        ));
    }
    let mut cdf_gap = 0.0;
    let mut total = 0.0;
    for (pi, qi) in p.iter().zip(q) {
        cdf_gap += (pi - qi) * spacing;
        total += cdf_gap.abs() * spacing;
    }
    Ok(total)
}

/// Window selection for decay-rate fits.
#[derive(Debug, Clone, Copy)]
pub enum FitWindow {
    /// Use the last `fraction` of the samples whose value exceeds the floor.
    LastFraction { fraction: f64, floor: f64 },
    /// Use samples with `t1 <= t <= t2`.
    Explicit { t1: f64, t2: f64 },
}

impl Default for FitWindow {
    fn default() -> Self {
        FitWindow::LastFraction {
            fraction: 0.5,
            floor: 1e-12,
        }
    }
}

/// Result of a log-linear least-squares fit `ln v ≈ a − rate·t`.
#[derive(Debug, Clone)]
pub struct RateEstimate {
    pub rate: f64,
    pub window: (f64, f64),
    pub r_squared: f64,
    /// Rate re-fitted on ~8 sliding sub-windows, as `(t_mid, rate)`.
    pub per_window: Vec<(f64, f64)>,
}

/// Fits an exponential decay rate to a positive series.
pub fn fit_decay_rate(times: &[f64], values: &[f64], window: FitWindow) -> Result<RateEstimate> {
    if times.len() != values.len() {
        return Err(Error::RateFit("times and values differ in length".into()));
    }
    let selected: Vec<(f64, f64)> = match window {
        FitWindow::LastFraction { fraction, floor } => {
            let alive: Vec<(f64, f64)> = times
                .iter()
                .zip(values)
                .filter(|(_, &v)| v > floor)
                .map(|(&t, &v)| (t, v))
                .collect();
            let start = ((alive.len() as f64) * (1.0 - fraction)).floor() as usize;
            alive[start.min(alive.len())..].to_vec()
        }
        FitWindow::Explicit { t1, t2 } => times
            .iter()
            .zip(values)
            .filter(|(&t, _)| t >= t1 && t <= t2)
            .map(|(&t, &v)| (t, v))
            .collect(),
    };
    if selected.len() < 10 {
        return Err(Error::RateFit(format!(
            "need >= 10 samples in the fit window, have {}",
            selected.len()
        )));
    }
    if let Some((t, v)) = selected.iter().find(|(_, v)| !(*v > 0.0)) {
        return Err(Error::RateFit(format!("nonpositive value {v:e} at t = {t}")));
    }
    let (rate, r2) = log_linear_fit(&selected);
    let window_span = (selected[0].0, selected[selected.len() - 1].0);

    let n_sub = 8.min(selected.len() / 10).max(1);
    let chunk = selected.len() / n_sub;
    let mut per_window = Vec::new();
    if chunk >= 3 {
        for w in 0..n_sub {
            let lo = w * chunk;
            let hi = ((w + 1) * chunk).min(selected.len());
            if hi - lo < 3 {
                continue;
            }
            let sub = &selected[lo..hi];
            let (r, _) = log_linear_fit(sub);
            per_window.push((0.5 * (sub[0].0 + sub[sub.len() - 1].0), r));
        }
    }
    Ok(RateEstimate {
        rate,
        window: window_span,
        r_squared: r2,
        per_window,
    })
}

fn log_linear_fit(samples: &[(f64, f64)]) -> (f64, f64) {
    let n = samples.len() as f64;
    let (mut st, mut sy, mut stt, mut sty, mut syy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(t, v) in samples {
        let y = v.ln();
        st += t;
        sy += y;
        stt += t * t;
        sty += t * y;
        syy += y * y;
    }
    let denom = n * stt - st * st;
    let slope = (n * sty - st * sy) / denom;
    let ss_tot = syy - sy * sy / n;
    let ss_res = ss_tot - slope * (sty - st * sy / n);
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    (-slope, r2)
}
