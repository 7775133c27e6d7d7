//! The run pipeline: validate → reference → solve/simulate → diagnose →
//! spectral → report, with every artifact emitted as CSV so the verdict is
//! recomputable from the files alone.

use crate::config::{RunConfig, RunMode};
use abf::diagnostics::{entropy_report, fit_decay_rate, EntropyReport, FitWindow, RateEstimate};
use abf::fokker_planck::{
    run_pde_observed, stationary_density, BiasProfile, DensityField, SolverMode,
};
use abf::model::{estimate_constants, reference_free_energy, validate_h1, HypothesisReport};
use abf::sde::{run_sde, SdeParams, SdeRun};
use abf::spectral::{
    build_operator, lsi_beta_scan, lsi_estimate, spectral_gap, EpsilonRule, RatePrediction,
    SpectralGap,
};
use abf::Grid;
use anyhow::{bail, Context, Result};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

const FOUR_PI_SQ: f64 = 4.0 * std::f64::consts::PI * std::f64::consts::PI;

/// Writes `name` in the output directory, creating directories as needed.
fn write_file(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    std::fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

fn fmt_f(v: f64) -> String {
    format!("{v:.17e}")
}

pub fn cmd_validate(cfg: &RunConfig) -> Result<i32> {
    let system = cfg.system()?;
    let grid = cfg.grid(&system)?;
    let violations = validate_h1(&system, &grid)?;
    if violations.is_empty() {
        println!("[H1] holds on the {}x{} grid: no violations", grid.n_x, grid.n_y);
        return Ok(0);
    }
    println!("[H1] violations ({}):", violations.len());
    for v in violations.iter().take(20) {
        println!("  {v}");
    }
    if violations.len() > 20 {
        println!("  ... and {} more", violations.len() - 20);
    }
    Ok(1)
}

pub fn cmd_reference(cfg: &RunConfig, out: &Path) -> Result<i32> {
    let system = cfg.system()?;
    let grid = cfg.grid(&system)?;
    let prof = reference_free_energy(&system, &grid)?;
    let mut csv = String::from("x,a,a_prime\n");
    for j in 0..grid.n_x {
        writeln!(csv, "{},{},{}", fmt_f(prof.x[j]), fmt_f(prof.a[j]), fmt_f(prof.a_prime[j]))?;
    }
    let path = write_file(out, "reference.csv", &csv)?;
    println!("wrote {}", path.display());
    Ok(0)
}

fn field_csv(field: &DensityField, grid: &Grid) -> String {
    let mut csv = String::from("i,x,y,psi\n");
    for i in 0..2 {
        for j in 0..grid.n_x {
            for k in 0..grid.n_y {
                let _ = writeln!(
                    csv,
                    "{},{},{},{}",
                    i,
                    fmt_f(grid.x_center(j)),
                    fmt_f(grid.y_center(k)),
                    fmt_f(field.get(i, j, k))
                );
            }
        }
    }
    csv
}

fn bias_csv(bias: &BiasProfile, grid: &Grid) -> String {
    let a = bias.potential(grid.dx());
    let mut csv = String::from("x,a_prime_t,a_t\n");
    for j in 0..grid.n_x {
        let _ = writeln!(
            csv,
            "{},{},{}",
            fmt_f(grid.x_center(j)),
            fmt_f(bias.force[j]),
            fmt_f(a[j])
        );
    }
    csv
}

fn entropy_csv(reports: &[EntropyReport]) -> String {
    let mut csv = String::from("t,E,E_M,E_m,E_c,P,F_macro,bias_error\n");
    for r in reports {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{}",
            fmt_f(r.t),
            fmt_f(r.e_total),
            fmt_f(r.e_macro),
            fmt_f(r.e_micro),
            fmt_f(r.e_channel),
            fmt_f(r.p_chi2),
            fmt_f(r.f_macro),
            fmt_f(r.bias_error)
        );
    }
    csv
}

/// Everything the PDE leg of a run produces.
pub struct PdeArtifacts {
    pub reports: Vec<EntropyReport>,
    pub hyp: HypothesisReport,
    pub gap: SpectralGap,
    pub dt: f64,
}

pub fn solve_pde(cfg: &RunConfig, out: &Path) -> Result<PdeArtifacts> {
    let system = cfg.system()?;
    let grid = cfg.grid(&system)?;
    let stat = stationary_density(&system, &grid)?;
    let prof = reference_free_energy(&system, &grid)?;
    let initial = DensityField::initial(&cfg.init, &system, &grid)?;

    let est = lsi_estimate(&system, &grid)?;
    let rho = est.rho_lower.unwrap_or(est.rho_poincare);
    let hyp = estimate_constants(&system, &grid, &initial.marginal_x(&grid).values, Some(rho))?;
    let op = build_operator(&system, &grid)?;
    let gap = spectral_gap(&op, 3)?;

    let mut reports = Vec::new();
    let mut snapshot_idx = 0usize;
    let snapshot_every = cfg.snapshot_every;
    let record_every = cfg.record_every.max(1);
    let mut last: Option<(DensityField, BiasProfile)> = None;
    let (dt, _, _) = run_pde_observed(
        &system,
        &grid,
        &initial,
        cfg.t_end,
        cfg.dt,
        record_every,
        SolverMode::Abf,
        |step_idx, t, field, bias| {
            reports.push(entropy_report(t, field, &stat, bias, &prof.a_prime, &grid)?);
            if step_idx == 0 || (snapshot_every > 0 && step_idx % snapshot_every == 0) {
                let _ = write_file(out, &format!("psi_t{snapshot_idx}.csv"), &field_csv(field, &grid));
                let _ = write_file(out, &format!("bias_t{snapshot_idx}.csv"), &bias_csv(bias, &grid));
                snapshot_idx += 1;
            }
            last = Some((field.clone(), bias.clone()));
            Ok(())
        },
    )?;
    if let Some((field, bias)) = &last {
        write_file(out, "psi_final.csv", &field_csv(field, &grid))?;
        write_file(out, "bias_final.csv", &bias_csv(bias, &grid))?;
    }
    write_file(out, "entropy.csv", &entropy_csv(&reports))?;

    Ok(PdeArtifacts {
        reports,
        hyp: hyp.with_theta(gap.theta),
        gap,
        dt,
    })
}

pub fn simulate_sde(cfg: &RunConfig, out: &Path) -> Result<SdeRun> {
    let system = cfg.system()?;
    let grid = cfg.grid(&system)?;
    let params = SdeParams {
        n_walkers: cfg.n_walkers,
        dt: cfg.sde_dt,
        t_end: cfg.t_end,
        n_bins: cfg.n_bins,
        n_min: cfg.n_min,
        n_ramp: cfg.n_ramp,
        seed: cfg.seed,
        apply_bias: cfg.apply_bias,
    };
    let run = run_sde(
        &system,
        &params,
        grid.l,
        &cfg.init,
        &grid,
        cfg.sde_record_every.max(1),
    )?;
    for (idx, rec) in run.records.iter().enumerate() {
        let mut csv = String::from("bin,x_center,count,a_prime_t\n");
        let raw = rec.stats.raw_estimate(params.n_min);
        for b in 0..rec.stats.n_bins {
            let _ = writeln!(
                csv,
                "{},{},{},{}",
                b,
                fmt_f((b as f64 + 0.5) / rec.stats.n_bins as f64),
                rec.stats.counts[b],
                fmt_f(raw[b])
            );
        }
        write_file(out, &format!("bins_t{idx}.csv"), &csv)?;
        write_file(out, &format!("hist_t{idx}.csv"), &field_csv(&rec.histogram, &grid))?;
    }
    Ok(run)
}

pub struct DiagnoseArtifacts {
    pub em_fit: RateEstimate,
    pub identities: IdentityChecks,
}

#[derive(Debug, Clone)]
pub struct IdentityChecks {
    pub max_decomposition_gap: f64,
    pub max_channel_excess: f64,
    pub max_macro_increase: f64,
    pub bias_bound_ok: bool,
    pub worst_bias_margin: f64,
}

pub fn diagnose(
    reports: &[EntropyReport],
    r_const: f64,
    fit_fraction: f64,
    out: &Path,
) -> Result<DiagnoseArtifacts> {
    let times: Vec<f64> = reports.iter().map(|r| r.t).collect();
    let em: Vec<f64> = reports.iter().map(|r| r.e_micro).collect();
    let window = FitWindow::LastFraction {
        fraction: fit_fraction,
        floor: 1e-12,
    };
    let em_fit = fit_decay_rate(&times, &em, window)?;

    let mut csv = String::from("series,window_t1,window_t2,rate,r_squared\n");
    let _ = writeln!(
        csv,
        "E_m,{},{},{},{}",
        fmt_f(em_fit.window.0),
        fmt_f(em_fit.window.1),
        fmt_f(em_fit.rate),
        fmt_f(em_fit.r_squared)
    );
    for (mid, rate) in &em_fit.per_window {
        let _ = writeln!(csv, "E_m_window,{},{},{},", fmt_f(*mid), fmt_f(*mid), fmt_f(*rate));
    }
    // the macroscopic Fisher rate when it decays cleanly
    let fm: Vec<f64> = reports.iter().map(|r| r.f_macro).collect();
    if let Ok(fit) = fit_decay_rate(&times, &fm, window) {
        let _ = writeln!(
            csv,
            "F_macro,{},{},{},{}",
            fmt_f(fit.window.0),
            fmt_f(fit.window.1),
            fmt_f(fit.rate),
            fmt_f(fit.r_squared)
        );
    }
    write_file(out, "rates.csv", &csv)?;

    let mut max_decomp: f64 = 0.0;
    let mut max_excess = f64::NEG_INFINITY;
    let mut max_increase = f64::NEG_INFINITY;
    let mut bias_ok = true;
    let mut worst_margin = f64::INFINITY;
    for (idx, r) in reports.iter().enumerate() {
        max_decomp = max_decomp.max((r.e_total - r.e_macro - r.e_micro).abs());
        max_excess = max_excess.max(r.e_channel - r.p_chi2);
        if idx > 0 {
            max_increase = max_increase.max(r.e_macro - reports[idx - 1].e_macro);
        }
        let bound = 2.0 * r_const * r_const * r.e_micro;
        bias_ok &= r.bias_error <= bound + 1e-12;
        worst_margin = worst_margin.min(bound - r.bias_error);
    }
    Ok(DiagnoseArtifacts {
        em_fit,
        identities: IdentityChecks {
            max_decomposition_gap: max_decomp,
            max_channel_excess: max_excess,
            max_macro_increase: max_increase,
            bias_bound_ok: bias_ok,
            worst_bias_margin: worst_margin,
        },
    })
}

pub fn spectral_artifacts(
    cfg: &RunConfig,
    hyp: &HypothesisReport,
    gap: &SpectralGap,
    lambda_rate: f64,
    remark2: bool,
    out: &Path,
) -> Result<RatePrediction> {
    let mut csv = String::from("quantity,value\n");
    let _ = writeln!(csv, "theta,{}", fmt_f(gap.theta));
    let _ = writeln!(csv, "kernel_eigenvalue,{}", fmt_f(gap.kernel_eigenvalue));
    for (m, ev) in gap.eigenvalues.iter().enumerate() {
        let _ = writeln!(csv, "sigma_{},{}", m + 1, fmt_f(*ev));
    }
    write_file(out, "spectral.csv", &csv)?;

    let pred = RatePrediction::extended(
        hyp,
        gap.theta,
        EpsilonRule::Fraction(cfg.epsilon_fraction),
        lambda_rate,
    );
    let mut csv = String::from("quantity,value\n");
    for (k, v) in [
        ("rho", pred.rho),
        ("C", pred.c_const),
        ("M", pred.m_const),
        ("c", pred.c_inf),
        ("M_tilde", pred.m_tilde),
        ("R", pred.r_const),
        ("theta", pred.theta),
        ("theta_min", pred.theta_min),
        ("alpha_star", pred.alpha_star),
        ("lambda_minus", pred.lambda_minus),
        ("lambda_plus", pred.lambda_plus),
        ("Lambda_theta", pred.lambda_theta),
        ("epsilon", pred.epsilon),
        ("predicted_rate", pred.predicted_rate),
        ("remark2_rate", pred.remark2_rate),
        ("h4_satisfied", if pred.h4_satisfied { 1.0 } else { 0.0 }),
        (
            "verdict_predicted_rate",
            if remark2 {
                pred.remark2_rate
            } else {
                pred.predicted_rate
            },
        ),
    ] {
        let _ = writeln!(csv, "{k},{}", fmt_f(v));
    }
    write_file(out, "prediction.csv", &csv)?;
    Ok(pred)
}

/// The beta scan of the double-well conditional (the `doublewell-lsi` preset).
pub fn cmd_lsi_scan(cfg: &RunConfig, out: &Path) -> Result<i32> {
    let (b0, b1, count) = cfg
        .beta_scan
        .ok_or_else(|| anyhow::anyhow!("no [spectral] beta_scan configured"))?;
    let betas: Vec<f64> = (0..count)
        .map(|i| b0 + (b1 - b0) * i as f64 / (count.max(2) - 1) as f64)
        .collect();
    let scan = lsi_beta_scan(|y| y.powi(4) / 4.0 - y * y / 2.0, 3.0, 2001, &betas);
    let mut csv = String::from("beta,gap,rate\n");
    for p in &scan {
        let _ = writeln!(csv, "{},{},{}", fmt_f(p.beta), fmt_f(p.gap), fmt_f(p.rate));
    }
    write_file(out, "lsi_scan.csv", &csv)?;
    // slope of ln(rate) vs beta against the barrier height 1/4
    let n = scan.len() as f64;
    let sb: f64 = scan.iter().map(|p| p.beta).sum();
    let sl: f64 = scan.iter().map(|p| p.rate.ln()).sum();
    let sbb: f64 = scan.iter().map(|p| p.beta * p.beta).sum();
    let sbl: f64 = scan.iter().map(|p| p.beta * p.rate.ln()).sum();
    let slope = (n * sbl - sb * sl) / (n * sbb - sb * sb);
    let err = (slope + 0.25).abs() / 0.25;
    println!(
        "double-well scan: slope of ln(rate) vs beta = {slope:.4} (barrier -0.25, err {:.1}%)",
        err * 100.0
    );
    let mut csv = String::from("check,value,threshold,pass\n");
    let _ = writeln!(csv, "lsi_slope_error,{},{},{}", fmt_f(err), fmt_f(0.15), err <= 0.15);
    write_file(out, "summary.csv", &csv)?;
    Ok(i32::from(err > 0.15))
}

/// One row of the verdict table.
struct Check {
    name: &'static str,
    value: f64,
    threshold: f64,
    pass: bool,
}

pub fn cmd_run(cfg: &RunConfig, out: &Path) -> Result<i32> {
    if cfg.beta_scan.is_some() {
        return cmd_lsi_scan(cfg, out);
    }
    let system = cfg.system()?;
    let grid = cfg.grid(&system)?;

    // validate: remark-2 scenarios intentionally run with an empty exclusion,
    // which [H1] flags; everything else must be clean
    let violations = validate_h1(&system, &grid)?;
    if cfg.remark2_mode() {
        let unexpected: Vec<_> = violations
            .iter()
            .filter(|v| {
                !matches!(v.kind, abf::model::H1ViolationKind::ExclusionMeasure)
            })
            .collect();
        if !unexpected.is_empty() {
            write_error(out, &format!("{} [H1] violations", unexpected.len()))?;
            bail!("constant-switching scenario needs V_0 = V_1 everywhere");
        }
    } else if !violations.is_empty() {
        write_error(out, &format!("{} [H1] violations", violations.len()))?;
        bail!("[H1] does not hold; run `abf validate` for details");
    }

    cmd_reference(cfg, out)?;

    let pde = match cfg.mode {
        RunMode::Pde | RunMode::Both => Some(solve_pde(cfg, out)?),
        RunMode::Sde => None,
    };
    if matches!(cfg.mode, RunMode::Sde | RunMode::Both) {
        simulate_sde(cfg, out)?;
    }

    let Some(pde) = pde else {
        println!("particle run complete (no PDE verdict requested)");
        return Ok(0);
    };

    let diag = diagnose(&pde.reports, pde.hyp.r_const(), cfg.fit_window_fraction, out)?;
    let pred = spectral_artifacts(
        cfg,
        &pde.hyp,
        &pde.gap,
        system.lambda_rate(),
        cfg.remark2_mode(),
        out,
    )?;

    let predicted = if cfg.remark2_mode() {
        pred.remark2_rate
    } else {
        pred.predicted_rate
    };
    let checks = vec![
        Check {
            name: "entropy_decomposition_gap",
            value: diag.identities.max_decomposition_gap,
            threshold: 1e-10,
            pass: diag.identities.max_decomposition_gap <= 1e-10,
        },
        Check {
            name: "channel_entropy_excess",
            value: diag.identities.max_channel_excess,
            threshold: 1e-12,
            pass: diag.identities.max_channel_excess <= 1e-12,
        },
        Check {
            name: "bias_error_bound_margin",
            value: diag.identities.worst_bias_margin,
            threshold: 0.0,
            pass: diag.identities.bias_bound_ok,
        },
        Check {
            name: "macro_entropy_monotone",
            value: diag.identities.max_macro_increase,
            threshold: 1e-8,
            pass: diag.identities.max_macro_increase <= 1e-8,
        },
        Check {
            name: "rate_bound",
            value: diag.em_fit.rate,
            threshold: 0.95 * predicted,
            pass: diag.em_fit.rate >= 0.95 * predicted,
        },
    ];

    let mut csv = String::from("check,value,threshold,pass\n");
    for c in &checks {
        let _ = writeln!(csv, "{},{},{},{}", c.name, fmt_f(c.value), fmt_f(c.threshold), c.pass);
    }
    let _ = writeln!(csv, "measured_em_rate,{},,", fmt_f(diag.em_fit.rate));
    let _ = writeln!(csv, "predicted_rate,{},,", fmt_f(predicted));
    let _ = writeln!(csv, "fit_r_squared,{},,", fmt_f(diag.em_fit.r_squared));
    let _ = writeln!(csv, "h4_satisfied,{},,", if pred.h4_satisfied { 1 } else { 0 });
    write_file(out, "summary.csv", &csv)?;

    let mut txt = String::new();
    let _ = writeln!(txt, "run: {}", cfg.name);
    let _ = writeln!(
        txt,
        "grid {}x{} (L = {}), dt = {:.6e}, t_end = {}",
        grid.n_x, grid.n_y, grid.l, pde.dt, cfg.t_end
    );
    let _ = writeln!(
        txt,
        "constants: rho = {:.6}, C = {:.6}, M = {:.6}, c = {:.6}, M~ = {:.6}, R = {:.6}",
        pde.hyp.rho,
        pde.hyp.c_const,
        pde.hyp.m_const,
        pde.hyp.c_inf,
        pde.hyp.m_tilde,
        pde.hyp.r_const()
    );
    let _ = writeln!(
        txt,
        "spectral gap theta = {:.6} (theta_min = {:.6}), [H4] satisfied: {}",
        pred.theta, pred.theta_min, pred.h4_satisfied
    );
    if !pred.h4_satisfied {
        let _ = writeln!(
            txt,
            "  NOTE: theta <= theta_min, the main theorem predicts no rate here; the\n  \
             closed-form Lambda(theta) = {:.4} < 0 makes the rate bound vacuous",
            pred.lambda_theta
        );
    }
    let _ = writeln!(
        txt,
        "measured E_m rate {:.6} (R^2 = {:.6}) vs predicted {:.6} ({})",
        diag.em_fit.rate,
        diag.em_fit.r_squared,
        predicted,
        if cfg.remark2_mode() {
            "2 min(rho, 4pi^2, lambda)"
        } else {
            "2 min(Lambda - eps, 4pi^2)"
        }
    );
    let _ = writeln!(txt, "4pi^2 = {FOUR_PI_SQ:.6}");
    let mut all_pass = true;
    for c in &checks {
        all_pass &= c.pass;
        let _ = writeln!(
            txt,
            "{:32} {:>14.6e} vs {:>14.6e}  {}",
            c.name,
            c.value,
            c.threshold,
            if c.pass { "PASS" } else { "FAIL" }
        );
    }
    let _ = writeln!(txt, "verdict: {}", if all_pass { "PASS" } else { "FAIL" });
    print!("{txt}");
    write_file(out, "summary.txt", &txt)?;

    Ok(i32::from(!all_pass))
}

fn write_error(out: &Path, message: &str) -> Result<()> {
    let mut csv = String::from("kind,message\n");
    let _ = writeln!(csv, "error,{}", message.replace(',', ";"));
    write_file(out, "error.csv", &csv)?;
    Ok(())
}

/// Recomputes the verdict from the emitted CSVs alone.
pub fn cmd_report(out: &Path) -> Result<i32> {
    let entropy = std::fs::read_to_string(out.join("entropy.csv"))
        .context("entropy.csv not found; run solve-pde or run first")?;
    let mut times = Vec::new();
    let mut reports: Vec<(f64, f64, f64, f64, f64, f64, f64, f64)> = Vec::new();
    for line in entropy.lines().skip(1) {
        let vals: Vec<f64> = line
            .split(',')
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<_, _>>()?;
        if vals.len() != 8 {
            bail!("entropy.csv row with {} columns", vals.len());
        }
        times.push(vals[0]);
        reports.push((
            vals[0], vals[1], vals[2], vals[3], vals[4], vals[5], vals[6], vals[7],
        ));
    }
    let prediction = std::fs::read_to_string(out.join("prediction.csv"))
        .context("prediction.csv not found; run spectral or run first")?;
    let mut lookup = std::collections::BTreeMap::new();
    for line in prediction.lines().skip(1) {
        if let Some((k, v)) = line.split_once(',') {
            lookup.insert(k.to_string(), v.parse::<f64>()?);
        }
    }
    let r_const = lookup["R"];
    let predicted = lookup["verdict_predicted_rate"];

    let em: Vec<f64> = reports.iter().map(|r| r.3).collect();
    let fit = fit_decay_rate(&times, &em, FitWindow::default())?;
    let mut max_decomp: f64 = 0.0;
    let mut max_excess = f64::NEG_INFINITY;
    let mut bias_ok = true;
    for r in &reports {
        max_decomp = max_decomp.max((r.1 - r.2 - r.3).abs());
        max_excess = max_excess.max(r.4 - r.5);
        bias_ok &= r.7 <= 2.0 * r_const * r_const * r.3 + 1e-12;
    }
    let rate_ok = fit.rate >= 0.95 * predicted;
    println!(
        "recomputed from CSVs: |E-E_M-E_m| <= {max_decomp:.3e}, max(E_c-P) = {max_excess:.3e}, \
         bias bound: {bias_ok}, measured rate {:.4} vs predicted {predicted:.4} ({})",
        fit.rate,
        if rate_ok { "PASS" } else { "FAIL" }
    );
    let all = max_decomp <= 1e-10 && max_excess <= 1e-12 && bias_ok && rate_ok;
    println!("verdict: {}", if all { "PASS" } else { "FAIL" });
    Ok(i32::from(!all))
}
