//! Bi-channel potential systems and their measurable hypothesis ingredients.
//!
//! A system is a pair of channel potentials `V_0, V_1` on `𝕋 × ℝ` (β = 1,
//! dimensionless energies), a switching rate `λ ≥ 0`, and the exclusion region
//! `ℰ ⊂ 𝕋` on which switching is forbidden. The structural assumption is that
//! the channels coincide wherever switching is allowed:
//!
//! ```text
//! λ(x) = λ·1_{𝕋\ℰ}(x),    V_0(x,·) = V_1(x,·)  for all x ∉ ℰ.
//! ```
//!
//! This module validates that assumption on a grid, computes the reference
//! free energy `A(x) = −ln Σ_i ∫ e^{−V_i(x,y)} dy` (normalised so that
//! `∫ e^{−A} dx = 1`, which makes the stationary ξ-marginal exactly uniform),
//! and measures the constants `C`, `M`, `c`, `M̃`, `θ_min` that the rate
//! theory consumes.

use crate::error::{Error, Result};
use crate::grid::Grid;
use std::fmt;
use std::io::BufRead;
use std::path::Path;

/// How much stationary mass may sit outside `[-L, L]` per channel.
pub const TRUNCATION_TOLERANCE: f64 = 1e-8;

/// A finite union of closed arcs on the unit torus. Arc endpoints count as
/// inside (`λ = 0` there). An arc `(a, b)` with `a > b` wraps through 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Exclusion {
    arcs: Vec<(f64, f64)>,
}

impl Exclusion {
    pub fn empty() -> Self {
        Self { arcs: Vec::new() }
    }

    /// Single closed arc from `a` to `b` (positively oriented, wrap allowed).
    pub fn interval(a: f64, b: f64) -> Self {
        Self {
            arcs: vec![(a.rem_euclid(1.0), b.rem_euclid(1.0))],
        }
    }

    pub fn from_arcs(arcs: Vec<(f64, f64)>) -> Self {
        Self {
            arcs: arcs
                .into_iter()
                .map(|(a, b)| (a.rem_euclid(1.0), b.rem_euclid(1.0)))
                .collect(),
        }
    }

    pub fn arcs(&self) -> &[(f64, f64)] {
        &self.arcs
    }

    pub fn is_empty(&self) -> bool {
        self.arcs.is_empty()
    }

    pub fn contains(&self, x: f64) -> bool {
        let x = x.rem_euclid(1.0);
        self.arcs.iter().any(|&(a, b)| {
            if a <= b {
                x >= a && x <= b
            } else {
                x >= a || x <= b
            }
        })
    }

    /// Total Lebesgue measure of the union (arcs assumed disjoint).
    pub fn measure(&self) -> f64 {
        self.arcs
            .iter()
            .map(|&(a, b)| if a <= b { b - a } else { 1.0 - a + b })
            .sum()
    }
}

impl fmt::Display for Exclusion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.arcs.is_empty() {
            return write!(f, "empty");
        }
        let parts: Vec<String> = self
            .arcs
            .iter()
            .map(|(a, b)| format!("[{a}, {b}]"))
            .collect();
        write!(f, "{}", parts.join(" u "))
    }
}

/// Declarative description of a potential family, as read from configuration.
#[derive(Debug, Clone)]
pub enum PotentialSpec {
    /// `V_i(x,y) = (y − (−1)^i h s(x))² / (2σ²) + a cos(2πx)` with the smooth
    /// separation envelope `s(x) = sin²(π (x−x₀)/|ℰ|)` supported on the single
    /// exclusion arc.
    GaussianChannel {
        /// Amplitude `a` of the `cos(2πx)` free-energy term.
        amplitude: f64,
        /// Channel half-separation `h`.
        separation: f64,
        /// Channel width `σ`.
        width: f64,
        exclusion: Exclusion,
    },
    /// Grid-tabulated channel potentials (one plain-text matrix per channel).
    Tabulated {
        table0: PotentialTable,
        table1: PotentialTable,
        exclusion: Exclusion,
    },
}

/// A tabulated potential on its own uniform cell-centered grid.
#[derive(Debug, Clone)]
pub struct PotentialTable {
    pub n_x: usize,
    pub n_y: usize,
    pub l: f64,
    /// Row-major over x then y.
    pub values: Vec<f64>,
}

/// Bilinear interpolation on a cell-centered table, periodic in x, clamped in y.
fn bilinear(n_x: usize, n_y: usize, l: f64, data: &[f64], x: f64, y: f64) -> f64 {
    let dx = 1.0 / n_x as f64;
    let dy = 2.0 * l / n_y as f64;
    let fx = (x.rem_euclid(1.0)) / dx - 0.5;
    let fy = ((y + l) / dy - 0.5).clamp(0.0, n_y as f64 - 1.0);
    let j0f = fx.floor();
    let k0f = fy.floor().clamp(0.0, n_y as f64 - 2.0);
    let tx = fx - j0f;
    let ty = fy - k0f;
    let j0 = (j0f.rem_euclid(n_x as f64)) as usize;
    let j1 = (j0 + 1) % n_x;
    let k0 = k0f as usize;
    let k1 = (k0 + 1).min(n_y - 1);
    (1.0 - tx) * (1.0 - ty) * data[j0 * n_y + k0]
        + tx * (1.0 - ty) * data[j1 * n_y + k0]
        + (1.0 - tx) * ty * data[j0 * n_y + k1]
        + tx * ty * data[j1 * n_y + k1]
}

impl PotentialTable {
    /// Reads the plain-text format: header line `nx ny L`, then `nx·ny` values
    /// row-major over x then y (whitespace separated, any line breaking).
    pub fn read<P: AsRef<Path>>(path: P) -> Result<Self> {
        let file = std::fs::File::open(path.as_ref())?;
        let mut lines = std::io::BufReader::new(file).lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::InvalidInput("empty potential table".into()))??;
        let mut it = header.split_whitespace();
        let parse = |s: Option<&str>, what: &str| -> Result<f64> {
            s.ok_or_else(|| Error::InvalidInput(format!("missing {what} in table header")))?
                .parse::<f64>()
                .map_err(|e| Error::InvalidInput(format!("bad {what} in table header: {e}")))
        };
        let n_x = parse(it.next(), "nx")? as usize;
        let n_y = parse(it.next(), "ny")? as usize;
        let l = parse(it.next(), "L")?;
        let mut values = Vec::with_capacity(n_x * n_y);
        for line in lines {
            for tok in line?.split_whitespace() {
                values.push(tok.parse::<f64>().map_err(|e| {
                    Error::InvalidInput(format!("bad table value {tok:?}: {e}"))
                })?);
            }
        }
        if values.len() != n_x * n_y {
            return Err(Error::InvalidInput(format!(
                "table has {} values, expected {} x {} = {}",
                values.len(),
                n_x,
                n_y,
                n_x * n_y
            )));
        }
        Ok(Self { n_x, n_y, l, values })
    }

    fn value(&self, jx: usize, ky: usize) -> f64 {
        self.values[jx * self.n_y + ky]
    }

    /// Bilinear interpolation, periodic in x, clamped at the y edges.
    fn eval(&self, x: f64, y: f64) -> f64 {
        bilinear(self.n_x, self.n_y, self.l, &self.values, x, y)
    }
}

/// Evaluator family for one bi-channel system.
enum Potential {
    Gaussian {
        amplitude: f64,
        separation: f64,
        inv_two_width_sq: f64,
        inv_width_sq: f64,
        arc_start: f64,
        arc_len: f64,
    },
    Tabulated {
        tables: [PotentialTable; 2],
        /// Centered-difference derivative tables, same layout as `values`.
        d_x: [Vec<f64>; 2],
        d_y: [Vec<f64>; 2],
        d_xy: [Vec<f64>; 2],
    },
}

/// The pair of channel potentials with switching rate and exclusion region.
pub struct BiChannelSystem {
    potential: Potential,
    lambda_rate: f64,
    exclusion: Exclusion,
}

impl BiChannelSystem {
    pub fn new(spec: PotentialSpec, lambda_rate: f64) -> Result<Self> {
        if lambda_rate < 0.0 {
            return Err(Error::InvalidInput("switching rate must be nonnegative".into()));
        }
        match spec {
            PotentialSpec::GaussianChannel {
                amplitude,
                separation,
                width,
                exclusion,
            } => {
                if width <= 0.0 {
                    return Err(Error::InvalidInput("channel width must be positive".into()));
                }
                if separation != 0.0 && exclusion.arcs().len() != 1 {
                    return Err(Error::InvalidInput(
                        "gaussian-channel with separation needs exactly one exclusion arc \
                         to carry the envelope"
                            .into(),
                    ));
                }
                let (arc_start, arc_len) = match exclusion.arcs().first() {
                    Some(&(a, b)) => (a, if a <= b { b - a } else { 1.0 - a + b }),
                    None => (0.0, 1.0),
                };
                Ok(Self {
                    potential: Potential::Gaussian {
                        amplitude,
                        separation,
                        inv_two_width_sq: 0.5 / (width * width),
                        inv_width_sq: 1.0 / (width * width),
                        arc_start,
                        arc_len,
                    },
                    lambda_rate,
                    exclusion,
                })
            }
            PotentialSpec::Tabulated {
                table0,
                table1,
                exclusion,
            } => {
                if table0.n_x != table1.n_x || table0.n_y != table1.n_y || table0.l != table1.l {
                    return Err(Error::InvalidInput(
                        "tabulated channels must share the same grid".into(),
                    ));
                }
                let tables = [table0, table1];
                let mut d_x: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
                let mut d_y: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
                let mut d_xy: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
                for i in 0..2 {
                    let t = &tables[i];
                    let (nx, ny) = (t.n_x, t.n_y);
                    let dx = 1.0 / nx as f64;
                    let dy = 2.0 * t.l / ny as f64;
                    let mut gx = vec![0.0; nx * ny];
                    let mut gy = vec![0.0; nx * ny];
                    for j in 0..nx {
                        let (jp, jm) = ((j + 1) % nx, (j + nx - 1) % nx);
                        for k in 0..ny {
                            gx[j * ny + k] =
                                (t.value(jp, k) - t.value(jm, k)) / (2.0 * dx);
                            // one-sided at the y edges
                            gy[j * ny + k] = if k == 0 {
                                (t.value(j, 1) - t.value(j, 0)) / dy
                            } else if k == ny - 1 {
                                (t.value(j, ny - 1) - t.value(j, ny - 2)) / dy
                            } else {
                                (t.value(j, k + 1) - t.value(j, k - 1)) / (2.0 * dy)
                            };
                        }
                    }
                    let mut gxy = vec![0.0; nx * ny];
                    for j in 0..nx {
                        for k in 0..ny {
                            gxy[j * ny + k] = if k == 0 {
                                gx[j * ny + 1] - gx[j * ny]
                            } else if k == ny - 1 {
                                gx[j * ny + ny - 1] - gx[j * ny + ny - 2]
                            } else {
                                (gx[j * ny + k + 1] - gx[j * ny + k - 1]) / 2.0
                            } / if k == 0 || k == ny - 1 { dy } else { 1.0 };
                        }
                    }
                    d_x[i] = gx;
                    d_y[i] = gy;
                    d_xy[i] = gxy;
                }
                Ok(Self {
                    potential: Potential::Tabulated {
                        tables,
                        d_x,
                        d_y,
                        d_xy,
                    },
                    lambda_rate,
                    exclusion,
                })
            }
        }
    }

    pub fn exclusion(&self) -> &Exclusion {
        &self.exclusion
    }

    pub fn lambda_rate(&self) -> f64 {
        self.lambda_rate
    }

    /// Position-dependent switching rate `λ(x) = λ·1_{𝕋\ℰ}(x)`.
    #[inline]
    pub fn lambda(&self, x: f64) -> f64 {
        if self.exclusion.contains(x) {
            0.0
        } else {
            self.lambda_rate
        }
    }

    /// Separation envelope `s(x)` (0 outside the exclusion arc).
    #[inline]
    fn envelope(&self, x: f64) -> (f64, f64) {
        match &self.potential {
            Potential::Gaussian {
                arc_start, arc_len, ..
            } => {
                let u = (x - arc_start).rem_euclid(1.0);
                if u <= *arc_len {
                    let phase = std::f64::consts::PI * u / arc_len;
                    let s = phase.sin().powi(2);
                    let ds = std::f64::consts::PI / arc_len * (2.0 * phase).sin();
                    (s, ds)
                } else {
                    (0.0, 0.0)
                }
            }
            Potential::Tabulated { .. } => (0.0, 0.0),
        }
    }

    /// Channel center `(−1)^i h s(x)` and its x-derivative (gaussian family).
    #[inline]
    fn center(&self, x: f64, channel: usize) -> (f64, f64) {
        match &self.potential {
            Potential::Gaussian { separation, .. } => {
                let sgn = if channel == 0 { 1.0 } else { -1.0 };
                let (s, ds) = self.envelope(x);
                (sgn * separation * s, sgn * separation * ds)
            }
            Potential::Tabulated { .. } => (0.0, 0.0),
        }
    }

    pub fn v(&self, x: f64, y: f64, channel: usize) -> f64 {
        match &self.potential {
            Potential::Gaussian {
                amplitude,
                inv_two_width_sq,
                ..
            } => {
                let (c, _) = self.center(x, channel);
                let d = y - c;
                d * d * inv_two_width_sq
                    + amplitude * (2.0 * std::f64::consts::PI * x).cos()
            }
            Potential::Tabulated { tables, .. } => tables[channel].eval(x, y),
        }
    }

    pub fn dx_v(&self, x: f64, y: f64, channel: usize) -> f64 {
        match &self.potential {
            Potential::Gaussian {
                amplitude,
                inv_width_sq,
                ..
            } => {
                let (c, dc) = self.center(x, channel);
                -(y - c) * dc * inv_width_sq
                    - 2.0 * std::f64::consts::PI
                        * amplitude
                        * (2.0 * std::f64::consts::PI * x).sin()
            }
            Potential::Tabulated { tables, d_x, .. } => {
                interp_table(&tables[channel], &d_x[channel], x, y)
            }
        }
    }

    pub fn dy_v(&self, x: f64, y: f64, channel: usize) -> f64 {
        match &self.potential {
            Potential::Gaussian { inv_width_sq, .. } => {
                let (c, _) = self.center(x, channel);
                (y - c) * inv_width_sq
            }
            Potential::Tabulated { tables, d_y, .. } => {
                interp_table(&tables[channel], &d_y[channel], x, y)
            }
        }
    }

    pub fn dxy_v(&self, x: f64, y: f64, channel: usize) -> f64 {
        match &self.potential {
            Potential::Gaussian { inv_width_sq, .. } => {
                let (_, dc) = self.center(x, channel);
                -dc * inv_width_sq
            }
            Potential::Tabulated { tables, d_xy, .. } => {
                interp_table(&tables[channel], &d_xy[channel], x, y)
            }
        }
    }

    /// Curvature `∂_yy V_i` (used by the Bakry-Emery bound).
    pub fn dyy_v(&self, x: f64, y: f64, channel: usize) -> f64 {
        match &self.potential {
            Potential::Gaussian { inv_width_sq, .. } => *inv_width_sq,
            Potential::Tabulated { tables, .. } => {
                let t = &tables[channel];
                let dy = 2.0 * t.l / t.n_y as f64;
                (t.eval(x, y + dy) - 2.0 * t.eval(x, y) + t.eval(x, y - dy)) / (dy * dy)
            }
        }
    }

    /// Default y half-extent: outermost channel center plus 6.5 widths, so the
    /// stationary mass outside stays below 1e-10 per channel.
    pub fn default_l(&self) -> f64 {
        match &self.potential {
            Potential::Gaussian {
                separation,
                inv_width_sq,
                ..
            } => {
                let width = (1.0 / inv_width_sq).sqrt();
                separation.abs() + 6.5 * width
            }
            Potential::Tabulated { tables, .. } => tables[0].l,
        }
    }
}

fn interp_table(t: &PotentialTable, data: &[f64], x: f64, y: f64) -> f64 {
    bilinear(t.n_x, t.n_y, t.l, data, x, y)
}

/// Reference free energy and mean force on the x-grid.
///
/// `A` is normalised so that `Σ_j e^{−A_j} dx = 1`; `a_prime` is the quadrature
/// ratio of the two-channel Boltzmann averages, projected to zero mean.
#[derive(Debug, Clone)]
pub struct FreeEnergyProfile {
    pub x: Vec<f64>,
    pub a: Vec<f64>,
    pub a_prime: Vec<f64>,
}

/// One violation of the structural hypothesis on a grid node.
#[derive(Debug, Clone)]
pub struct H1Violation {
    pub kind: H1ViolationKind,
    pub magnitude: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum H1ViolationKind {
    /// `|V_0 − V_1| > tol` at a node outside the exclusion region.
    PotentialMismatch { j: usize, k: usize, x: f64, y: f64 },
    /// The exclusion region has measure 0 or 1.
    ExclusionMeasure,
}

impl fmt::Display for H1Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            H1ViolationKind::PotentialMismatch { j, k, x, y } => write!(
                f,
                "V_0 != V_1 at node ({j}, {k}) = ({x:.6}, {y:.6}), |diff| = {:.3e}",
                self.magnitude
            ),
            H1ViolationKind::ExclusionMeasure => {
                write!(f, "measure of the exclusion region is {}", self.magnitude)
            }
        }
    }
}

const H1_EQUALITY_TOL: f64 = 1e-12;

/// Checks the structural hypothesis on the grid: `V_0(x,·) = V_1(x,·)` for all
/// nodes with `x ∉ ℰ`, and `0 < |ℰ| < 1`. Returns the empty list iff both hold.
pub fn validate_h1(system: &BiChannelSystem, grid: &Grid) -> Result<Vec<H1Violation>> {
    check_normalizable(system, grid)?;
    let mut violations = Vec::new();
    let measure = system.exclusion().measure();
    if !(measure > 0.0 && measure < 1.0) {
        violations.push(H1Violation {
            kind: H1ViolationKind::ExclusionMeasure,
            magnitude: measure,
        });
    }
    for j in 0..grid.n_x {
        let x = grid.x_center(j);
        if system.exclusion().contains(x) {
            continue;
        }
        for k in 0..grid.n_y {
            let y = grid.y_center(k);
            let diff = (system.v(x, y, 0) - system.v(x, y, 1)).abs();
            if diff > H1_EQUALITY_TOL {
                violations.push(H1Violation {
                    kind: H1ViolationKind::PotentialMismatch { j, k, x, y },
                    magnitude: diff,
                });
            }
        }
    }
    Ok(violations)
}

fn check_normalizable(system: &BiChannelSystem, grid: &Grid) -> Result<()> {
    for i in 0..2 {
        let mut total = 0.0;
        for j in 0..grid.n_x {
            let x = grid.x_center(j);
            for k in 0..grid.n_y {
                let w = (-system.v(x, grid.y_center(k), i)).exp();
                if !w.is_finite() {
                    return Err(Error::NonNormalizable(format!(
                        "exp(-V_{i}) not finite at x = {x}"
                    )));
                }
                total += w;
            }
        }
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::NonNormalizable(format!(
                "int exp(-V_{i}) dy dx = {total:e} on the truncated domain"
            )));
        }
    }
    Ok(())
}

/// Per-column Boltzmann moments `Σ_k e^{−V_i} dy` and `Σ_k ∂_xV_i e^{−V_i} dy`.
pub(crate) fn boltzmann_moments(
    system: &BiChannelSystem,
    grid: &Grid,
    j: usize,
    channel: usize,
) -> (f64, f64) {
    let x = grid.x_center(j);
    let dy = grid.dy();
    let mut mass = 0.0;
    let mut force = 0.0;
    for k in 0..grid.n_y {
        let y = grid.y_center(k);
        let w = (-system.v(x, y, channel)).exp();
        mass += w;
        force += system.dx_v(x, y, channel) * w;
    }
    (mass * dy, force * dy)
}

/// Estimates how much of `e^{−V_i(x,·)}` escapes the truncation, by geometric
/// extrapolation of the boundary cells. Errors if above the tolerance.
fn check_truncation(system: &BiChannelSystem, grid: &Grid) -> Result<()> {
    let dy = grid.dy();
    for i in 0..2 {
        let mut worst: f64 = 0.0;
        let mut worst_x = 0.0;
        for j in 0..grid.n_x {
            let x = grid.x_center(j);
            let (mass, _) = boltzmann_moments(system, grid, j, i);
            if mass <= 0.0 {
                continue;
            }
            for (edge, inner) in [(grid.n_y - 1, grid.n_y - 2), (0, 1)] {
                let fe = (-system.v(x, grid.y_center(edge), i)).exp();
                let fi = (-system.v(x, grid.y_center(inner), i)).exp();
                let ratio = if fi > 0.0 { (fe / fi).min(0.99) } else { 0.0 };
                let outside = fe * dy * ratio / (1.0 - ratio);
                let frac = outside / mass;
                if frac > worst {
                    worst = frac;
                    worst_x = x;
                }
            }
        }
        if worst > TRUNCATION_TOLERANCE {
            let needed = grid.l * 1.5;
            return Err(Error::Truncation(format!(
                "channel {i} leaks mass fraction {worst:.3e} at x = {worst_x:.4} \
                 (tolerance {TRUNCATION_TOLERANCE:.0e}); increase the y half-extent \
                 to about {needed:.2}"
            )));
        }
    }
    Ok(())
}

/// Discrete reference free energy `A(x) = −ln Σ_i ∫ e^{−V_i} dy` and mean force
/// `A'(x) = Σ_i ∫ ∂_xV_i e^{−V_i} dy / Σ_i ∫ e^{−V_i} dy`, both with the same
/// cell quadrature the solver uses. `A` is shifted so `Σ e^{−A} dx = 1` and
/// `A'` is projected to zero mean over the torus.
pub fn reference_free_energy(system: &BiChannelSystem, grid: &Grid) -> Result<FreeEnergyProfile> {
    check_normalizable(system, grid)?;
    check_truncation(system, grid)?;
    let n = grid.n_x;
    let dx = grid.dx();
    let mut a = vec![0.0; n];
    let mut a_prime = vec![0.0; n];
    for j in 0..n {
        let (m0, f0) = boltzmann_moments(system, grid, j, 0);
        let (m1, f1) = boltzmann_moments(system, grid, j, 1);
        let mass = m0 + m1;
        if mass <= 0.0 {
            return Err(Error::NonNormalizable(format!(
                "zero Boltzmann mass at x-cell {j}"
            )));
        }
        a[j] = -mass.ln();
        a_prime[j] = (f0 + f1) / mass;
    }
    // additive constant: int e^{-A} dx = 1
    let z: f64 = a.iter().map(|&ai| (-ai).exp()).sum::<f64>() * dx;
    for ai in a.iter_mut() {
        *ai += z.ln();
    }
    let mean: f64 = a_prime.iter().sum::<f64>() / n as f64;
    for v in a_prime.iter_mut() {
        *v -= mean;
    }
    Ok(FreeEnergyProfile {
        x: grid.x_centers(),
        a,
        a_prime,
    })
}

/// Measured ingredients of the hypotheses and the threshold `θ_min`.
#[derive(Debug, Clone)]
pub struct HypothesisReport {
    /// `sup_{x,i} |∫ ∂_xV_i dμ_{∞|x,i}|`.
    pub c_const: f64,
    /// `sup |∂_xy V_i|` over the grid.
    pub m_const: f64,
    /// `inf_{x,i} ψ^{ξ,I}_∞`.
    pub c_inf: f64,
    /// `sup_x ψ^ξ(0, x)` of the supplied initial marginal.
    pub m_tilde: f64,
    /// LSI constant of the conditional measures.
    pub rho: f64,
    /// `θ_min = 8 (C + M ρ^{−1/2})² M̃ / c`.
    pub theta_min: f64,
    pub h1_ok: bool,
    pub h2_ok: bool,
    pub h3_ok: bool,
    /// Spectral gap, once computed; `[H4]` is decidable only then.
    pub theta: Option<f64>,
}

impl HypothesisReport {
    /// `R = C + M ρ^{−1/2}`.
    pub fn r_const(&self) -> f64 {
        self.c_const + self.m_const / self.rho.sqrt()
    }

    pub fn with_theta(mut self, theta: f64) -> Self {
        self.theta = Some(theta);
        self
    }

    pub fn h4_ok(&self) -> Option<bool> {
        self.theta.map(|t| t > self.theta_min)
    }
}

/// Measures `C`, `M`, `c`, `M̃` on the grid and assembles `θ_min`.
///
/// `rho` may be supplied (e.g. a known Bakry-Emery constant); otherwise the
/// spectral module's estimate is used.
pub fn estimate_constants(
    system: &BiChannelSystem,
    grid: &Grid,
    initial_marginal: &[f64],
    rho: Option<f64>,
) -> Result<HypothesisReport> {
    if initial_marginal.len() != grid.n_x {
        return Err(Error::InvalidInput(format!(
            "initial marginal has {} cells, grid has {}",
            initial_marginal.len(),
            grid.n_x
        )));
    }
    let h1_ok = validate_h1(system, grid)?.is_empty();
    check_truncation(system, grid)?;
    let rho = match rho {
        Some(r) => r,
        None => {
            let est = crate::spectral::lsi_estimate(system, grid)?;
            est.rho_lower.unwrap_or(est.rho_poincare)
        }
    };
    if !(rho > 0.0) {
        return Err(Error::Hypothesis(format!("need rho > 0, got {rho:e}")));
    }

    let mut c_const: f64 = 0.0;
    let mut m_const: f64 = 0.0;
    // the stationary channel marginal is m_i/(m_0 + m_1): the free-energy
    // factor cancels, so no normalization convention enters
    let mut c_inf = f64::INFINITY;
    for j in 0..grid.n_x {
        let x = grid.x_center(j);
        let mut masses = [0.0; 2];
        for i in 0..2 {
            let (mass, force) = boltzmann_moments(system, grid, j, i);
            if mass <= 0.0 {
                return Err(Error::Hypothesis(format!(
                    "conditional mass vanished at x-cell {j}, channel {i} \
                     (truncation too aggressive)"
                )));
            }
            masses[i] = mass;
            c_const = c_const.max((force / mass).abs());
            for k in 0..grid.n_y {
                m_const = m_const.max(system.dxy_v(x, grid.y_center(k), i).abs());
            }
        }
        let total = masses[0] + masses[1];
        c_inf = c_inf.min(masses[0] / total).min(masses[1] / total);
    }
    if !(c_inf > 0.0) {
        return Err(Error::Hypothesis(format!(
            "inf psi^xi,I_inf = {c_inf:e} <= 0 after quadrature"
        )));
    }
    let m_tilde = initial_marginal.iter().cloned().fold(0.0f64, f64::max);
    let r = c_const + m_const / rho.sqrt();
    let theta_min = 8.0 * r * r * m_tilde / c_inf;
    Ok(HypothesisReport {
        c_const,
        m_const,
        c_inf,
        m_tilde,
        rho,
        theta_min,
        h1_ok,
        h2_ok: m_const.is_finite() && c_const.is_finite(),
        h3_ok: rho > 0.0,
        theta: None,
    })
}

/// Convenience constructor for the built-in family, used across the test suites.
pub fn gaussian_system(
    a: f64,
    h: f64,
    sigma: f64,
    lambda: f64,
    e0: f64,
    e1: f64,
) -> BiChannelSystem {
    BiChannelSystem::new(
        PotentialSpec::GaussianChannel {
            amplitude: a,
            separation: h,
            width: sigma,
            exclusion: Exclusion::interval(e0, e1),
        },
        lambda,
    )
    .expect("valid gaussian-channel parameters")
}
