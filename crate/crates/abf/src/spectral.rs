//! The channel-coupled operator, its spectral gap, LSI estimates for the
//! conditional measures, and the predicted decay rate.
//!
//! The operator acts on pairs `φ = (φ_0, φ_1)` of densities on the torus,
//!
//! ```text
//! 𝓛_i φ = −[ ∂_x(ψ^{ξ,I}_{∞,i} ∂_x(φ_i/ψ^{ξ,I}_{∞,i})) − λ(x)(φ_i − φ_{1−i}) ],
//! ```
//!
//! and is symmetric positive semidefinite in the weighted inner product
//! `⟨f, g⟩ = Σ_i ∫ f_i g_i / ψ^{ξ,I}_{∞,i} dx`, with kernel spanned by
//! `ψ^{ξ,I}_∞` itself. Its gap `θ` on the zero-sum subspace measures how good
//! a bias the free energy is within each channel; the closed-form rate
//! function `Λ(θ)` then predicts the asymptotic decay `2·min{Λ(θ)−ε, 4π²}`
//! of the microscopic entropy.

use crate::error::{Error, Result};
use crate::fokker_planck::stationary_density;
use crate::grid::Grid;
use crate::model::{BiChannelSystem, HypothesisReport};
use crate::numerics::{harmonic_mean, lanczos_smallest, BandedLdlt, BandedSpd, SymTridiag};

/// Above this dimension the dense symmetric solver gives way to shift-invert
/// Lanczos on the banded standard form.
const DENSE_LIMIT: usize = 2048;

/// Discretized channel-coupled operator on the x-grid.
///
/// Stored as the quadratic-form matrix `K` (so `⟨f, 𝓛g⟩ = fᵀ K g`) together
/// with the diagonal mass matrix `M` of the weighted inner product; the
/// interleaved ordering `idx(i, j) = 2j + i` makes `K` pentadiagonal up to the
/// two periodic corner entries.
pub struct OperatorL {
    pub n_x: usize,
    pub dx: f64,
    /// Stationary per-channel marginal, indexed `i * n_x + j`.
    pub marginal: Vec<f64>,
    /// `λ(x_j)` per column.
    pub lambda_x: Vec<f64>,
    /// Main diagonal of `K`.
    k_diag: Vec<f64>,
    /// First subdiagonal (jump coupling), `K[2j+1, 2j]`.
    k_band1: Vec<f64>,
    /// Second subdiagonal (diffusion), `K[2(j+1)+i, 2j+i]`.
    k_band2: Vec<f64>,
    /// Periodic corner entries `K[2(n_x−1)+i, i]` per channel.
    k_corner: [f64; 2],
    /// Mass diagonal `M[2j+i] = dx / marginal[i*n_x+j]`.
    m_diag: Vec<f64>,
}

impl OperatorL {
    #[inline]
    fn id(i: usize, j: usize) -> usize {
        2 * j + i
    }

    /// Assembles the operator from an explicit stationary marginal and rate
    /// profile (the oracle-test entry point).
    pub fn from_marginal(marginal: [Vec<f64>; 2], lambda_x: Vec<f64>, dx: f64) -> Result<Self> {
        let n_x = lambda_x.len();
        if marginal[0].len() != n_x || marginal[1].len() != n_x {
            return Err(Error::InvalidInput("marginal and lambda lengths differ".into()));
        }
        if marginal.iter().flatten().any(|&m| !(m > 0.0)) {
            return Err(Error::Hypothesis(
                "stationary channel marginal must be strictly positive (c > 0)".into(),
            ));
        }
        let n = 2 * n_x;
        let mut k_diag = vec![0.0; n];
        let mut k_band1 = vec![0.0; n - 1];
        let mut k_band2 = vec![0.0; n - 2];
        let mut k_corner = [0.0; 2];
        let mut m_diag = vec![0.0; n];

        for i in 0..2 {
            for j in 0..n_x {
                let jp = (j + 1) % n_x;
                let (a, b) = (marginal[i][j], marginal[i][jp]);
                let c = harmonic_mean(a, b) / dx;
                let (ia, ib) = (Self::id(i, j), Self::id(i, jp));
                k_diag[ia] += c / (a * a);
                k_diag[ib] += c / (b * b);
                let off = -c / (a * b);
                if jp == j + 1 {
                    k_band2[ia] = off;
                } else {
                    k_corner[i] = off;
                }
            }
        }
        for j in 0..n_x {
            if lambda_x[j] > 0.0 {
                let c = lambda_x[j] * dx / marginal[0][j];
                k_diag[Self::id(0, j)] += c;
                k_diag[Self::id(1, j)] += c;
                k_band1[Self::id(0, j)] = -c;
            }
        }
        for i in 0..2 {
            for j in 0..n_x {
                m_diag[Self::id(i, j)] = dx / marginal[i][j];
            }
        }
        let marginal_flat = {
            let mut v = marginal[0].clone();
            v.extend_from_slice(&marginal[1]);
            v
        };
        Ok(Self {
            n_x,
            dx,
            marginal: marginal_flat,
            lambda_x,
            k_diag,
            k_band1,
            k_band2,
            k_corner,
            m_diag,
        })
    }

    /// Weighted inner product `⟨f, g⟩ = Σ_i ∫ f_i g_i / ψ^{ξ,I}_{∞,i} dx`, with
    /// `f`, `g` indexed `i * n_x + j`.
    pub fn inner(&self, f: &[f64], g: &[f64]) -> f64 {
        let n_x = self.n_x;
        let mut acc = 0.0;
        for i in 0..2 {
            for j in 0..n_x {
                acc += f[i * n_x + j] * g[i * n_x + j] * self.m_diag[Self::id(i, j)];
            }
        }
        acc
    }

    /// Applies `𝓛` to `φ` (indexed `i * n_x + j`): `𝓛φ = M⁻¹ K φ`.
    pub fn apply(&self, phi: &[f64]) -> Vec<f64> {
        let n_x = self.n_x;
        let mut z = vec![0.0; 2 * n_x];
        let kphi = self.k_times(phi);
        for i in 0..2 {
            for j in 0..n_x {
                let id = Self::id(i, j);
                z[i * n_x + j] = kphi[id] / self.m_diag[id];
            }
        }
        z
    }

    /// `K φ` in the interleaved ordering, input indexed `i * n_x + j`.
    fn k_times(&self, phi: &[f64]) -> Vec<f64> {
        let n_x = self.n_x;
        let n = 2 * n_x;
        let x = |id: usize| -> f64 {
            let (j, i) = (id / 2, id % 2);
            phi[i * n_x + j]
        };
        let mut out = vec![0.0; n];
        for id in 0..n {
            let mut acc = self.k_diag[id] * x(id);
            if id >= 1 && self.k_band1[id - 1] != 0.0 {
                acc += self.k_band1[id - 1] * x(id - 1);
            }
            if id + 1 < n && self.k_band1[id] != 0.0 {
                acc += self.k_band1[id] * x(id + 1);
            }
            if id >= 2 {
                acc += self.k_band2[id - 2] * x(id - 2);
            }
            if id + 2 < n {
                acc += self.k_band2[id] * x(id + 2);
            }
            out[id] = acc;
        }
        // periodic corners
        for i in 0..2 {
            let a = Self::id(i, n_x - 1);
            let b = Self::id(i, 0);
            out[a] += self.k_corner[i] * x(b);
            out[b] += self.k_corner[i] * x(a);
        }
        out
    }

    /// Quadratic form `⟨φ, 𝓛φ⟩ = φᵀ K φ`.
    pub fn quadratic_form(&self, phi: &[f64]) -> f64 {
        let n_x = self.n_x;
        let kphi = self.k_times(phi);
        let mut acc = 0.0;
        for i in 0..2 {
            for j in 0..n_x {
                acc += phi[i * n_x + j] * kphi[Self::id(i, j)];
            }
        }
        acc
    }

    /// Entry of the symmetric standard form `B = M^{−1/2} K M^{−1/2}`.
    fn b_entry(&self, row: usize, col: usize, k_val: f64) -> f64 {
        k_val / (self.m_diag[row] * self.m_diag[col]).sqrt()
    }
}

/// Builds the operator from the system's stationary state on the grid (same
/// face weights as the Fokker-Planck solver).
pub fn build_operator(system: &BiChannelSystem, grid: &Grid) -> Result<OperatorL> {
    let stat = stationary_density(system, grid)?;
    let xi = stat.marginal_xi(grid);
    let m0: Vec<f64> = (0..grid.n_x).map(|j| xi.get(0, j)).collect();
    let m1: Vec<f64> = (0..grid.n_x).map(|j| xi.get(1, j)).collect();
    let lambda_x: Vec<f64> = (0..grid.n_x)
        .map(|j| system.lambda(grid.x_center(j)))
        .collect();
    OperatorL::from_marginal([m0, m1], lambda_x, grid.dx())
}

/// The gap and the lowest eigenpairs of `𝓛` on the zero-sum subspace.
pub struct SpectralGap {
    /// `θ = σ₁`, the smallest Rayleigh quotient over `𝓦₀`.
    pub theta: f64,
    /// `σ₁ ≤ σ₂ ≤ …` (kernel eigenvalue excluded).
    pub eigenvalues: Vec<f64>,
    /// Matching eigenvectors, `⟨·,·⟩`-orthonormal, indexed `i * n_x + j`.
    pub eigenvectors: Vec<Vec<f64>>,
    /// The numerically-zero kernel eigenvalue that was deflated.
    pub kernel_eigenvalue: f64,
}

/// Computes the smallest eigenpairs of the operator in the weighted inner
/// product and deflates the stationary kernel direction; `k` pairs (at least
/// 3) are returned beyond the kernel.
pub fn spectral_gap(op: &OperatorL, k: usize) -> Result<SpectralGap> {
    let k = k.max(3);
    let n = 2 * op.n_x;
    let (raw_vals, raw_vecs) = if n <= DENSE_LIMIT {
        dense_eigen(op, k + 1)?
    } else {
        banded_eigen(op, k + 1)?
    };
    let scale = raw_vals.last().copied().unwrap_or(1.0).abs().max(1.0);
    let kernel = raw_vals[0];
    if kernel.abs() > 1e-7 * scale {
        return Err(Error::Eigensolver(format!(
            "expected a kernel eigenvalue near zero, got {kernel:e}; \
             the supplied marginal is not stationary for the jump rate"
        )));
    }
    let eigenvalues: Vec<f64> = raw_vals[1..].to_vec();
    let eigenvectors: Vec<Vec<f64>> = raw_vecs[1..].to_vec();
    Ok(SpectralGap {
        theta: eigenvalues[0],
        eigenvalues,
        eigenvectors,
        kernel_eigenvalue: kernel,
    })
}

/// Dense path: full symmetric eigendecomposition of `B`.
fn dense_eigen(op: &OperatorL, k: usize) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let n = 2 * op.n_x;
    let mut b = nalgebra::DMatrix::<f64>::zeros(n, n);
    for id in 0..n {
        b[(id, id)] = op.b_entry(id, id, op.k_diag[id]);
        if id + 1 < n && op.k_band1[id] != 0.0 {
            let v = op.b_entry(id + 1, id, op.k_band1[id]);
            b[(id + 1, id)] = v;
            b[(id, id + 1)] = v;
        }
        if id + 2 < n {
            let v = op.b_entry(id + 2, id, op.k_band2[id]);
            b[(id + 2, id)] = v;
            b[(id, id + 2)] = v;
        }
    }
    for i in 0..2 {
        let a = OperatorL::id(i, op.n_x - 1);
        let c = OperatorL::id(i, 0);
        let v = op.b_entry(a, c, op.k_corner[i]);
        b[(a, c)] = v;
        b[(c, a)] = v;
    }
    let se = b.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&p, &q| se.eigenvalues[p].partial_cmp(&se.eigenvalues[q]).unwrap());
    let k = k.min(n);
    let mut vals = Vec::with_capacity(k);
    let mut vecs = Vec::with_capacity(k);
    for &col in order.iter().take(k) {
        vals.push(se.eigenvalues[col]);
        vecs.push(standard_to_density(op, se.eigenvectors.column(col).as_slice()));
    }
    Ok((vals, vecs))
}

/// Shift-invert Lanczos on the banded standard form; the two periodic corner
/// entries are restored with a rank-4 Woodbury correction.
fn banded_eigen(op: &OperatorL, k: usize) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let n = 2 * op.n_x;
    let mut diag = vec![0.0; n];
    let mut band1 = vec![0.0; n];
    let mut band2 = vec![0.0; n];
    for id in 0..n {
        diag[id] = op.b_entry(id, id, op.k_diag[id]);
        if id + 1 < n {
            band1[id] = op.b_entry(id + 1, id, op.k_band1[id]);
        }
        if id + 2 < n {
            band2[id] = op.b_entry(id + 2, id, op.k_band2[id]);
        }
    }
    let trace: f64 = diag.iter().sum();
    let sigma = -1e-3 * trace / n as f64 - 1e-12;
    let shifted = BandedSpd {
        n,
        bw: 2,
        diag: diag.iter().map(|d| d - sigma).collect(),
        bands: vec![band1, band2],
    };
    let ldlt = shifted
        .factorize()
        .map_err(|e| Error::Eigensolver(format!("banded LDL^T failed: {e}")))?;
    let corners: Vec<(usize, usize, f64)> = (0..2)
        .map(|i| {
            let a = OperatorL::id(i, op.n_x - 1);
            let c = OperatorL::id(i, 0);
            (a, c, op.b_entry(a, c, op.k_corner[i]))
        })
        .collect();
    let solver = WoodburySolver::new(&ldlt, &corners, n)?;
    let (vals, vecs) = lanczos_smallest(
        n,
        k,
        sigma,
        |x| solver.solve(x),
        (6 * k + 40).min(n),
        1e-13,
    )
    .map_err(Error::Eigensolver)?;
    let density_vecs: Vec<Vec<f64>> = vecs
        .iter()
        .map(|v| standard_to_density(op, v))
        .collect();
    Ok((vals, density_vecs))
}

/// Rank-corrected banded solver: `A = A_band + Σ_p c_p (e_a e_bᵀ + e_b e_aᵀ)`.
struct WoodburySolver<'a> {
    ldlt: &'a BandedLdlt,
    cols: Vec<Vec<f64>>,
    capacitance_inv: nalgebra::DMatrix<f64>,
    positions: Vec<usize>,
}

impl<'a> WoodburySolver<'a> {
    fn new(ldlt: &'a BandedLdlt, corners: &[(usize, usize, f64)], n: usize) -> Result<Self> {
        let mut positions = Vec::new();
        let mut s_inv_entries = Vec::new();
        for &(a, b, c) in corners {
            if c == 0.0 {
                continue;
            }
            positions.push(a);
            positions.push(b);
            s_inv_entries.push(c);
        }
        let r = positions.len();
        if r == 0 {
            return Ok(Self {
                ldlt,
                cols: Vec::new(),
                capacitance_inv: nalgebra::DMatrix::zeros(0, 0),
                positions,
            });
        }
        // columns Ab^{-1} e_p
        let mut cols = Vec::with_capacity(r);
        for &p in &positions {
            let mut e = vec![0.0; n];
            e[p] = 1.0;
            ldlt.solve(&mut e);
            cols.push(e);
        }
        // capacitance C = S^{-1} + U^T Ab^{-1} U, with S block-diag([[0,c],[c,0]])
        let mut cap = nalgebra::DMatrix::<f64>::zeros(r, r);
        for blk in 0..r / 2 {
            let c = s_inv_entries[blk];
            cap[(2 * blk, 2 * blk + 1)] += 1.0 / c;
            cap[(2 * blk + 1, 2 * blk)] += 1.0 / c;
        }
        for (col_idx, col) in cols.iter().enumerate() {
            for (row_idx, &p) in positions.iter().enumerate() {
                cap[(row_idx, col_idx)] += col[p];
            }
        }
        let capacitance_inv = cap
            .try_inverse()
            .ok_or_else(|| Error::Eigensolver("singular Woodbury capacitance".into()))?;
        Ok(Self {
            ldlt,
            cols,
            capacitance_inv,
            positions,
        })
    }

    fn solve(&self, x: &mut [f64]) {
        self.ldlt.solve(x);
        let r = self.positions.len();
        if r == 0 {
            return;
        }
        let ut: Vec<f64> = self.positions.iter().map(|&p| x[p]).collect();
        let ut = nalgebra::DVector::from_vec(ut);
        let coef = &self.capacitance_inv * ut;
        for (idx, col) in self.cols.iter().enumerate() {
            let c = coef[idx];
            for (xi, &ci) in x.iter_mut().zip(col) {
                *xi -= c * ci;
            }
        }
    }
}

/// Converts a unit vector of the standard form back to density coordinates
/// `φ = M^{−1/2} z` (already `⟨·,·⟩`-orthonormal), reindexed to `i * n_x + j`.
fn standard_to_density(op: &OperatorL, z: &[f64]) -> Vec<f64> {
    let n_x = op.n_x;
    let mut phi = vec![0.0; 2 * n_x];
    for i in 0..2 {
        for j in 0..n_x {
            let id = OperatorL::id(i, j);
            phi[i * n_x + j] = z[id] / op.m_diag[id].sqrt();
        }
    }
    phi
}

/// LSI/Poincaré estimates for the conditional measures `μ_{∞|x,i}`.
#[derive(Debug, Clone)]
pub struct LsiEstimate {
    /// `min_{x,i}` of the smallest nonzero eigenvalue of the 1-D weighted
    /// operator `−∂_y(e^{−V_i} ∂_y(·/e^{−V_i}))` — an upper bound for the LSI
    /// constant.
    pub rho_poincare: f64,
    /// Bakry-Emery lower bound `min_{x,i} inf_y ∂_yy V_i`, available when the
    /// curvature is positive everywhere (then each conditional is α-convex and
    /// satisfies LSI(α)).
    pub rho_lower: Option<f64>,
    /// Location `(j, i)` of the worst Poincaré constant.
    pub argmin: (usize, usize),
}

/// Smallest nonzero eigenvalue of the 1-D weighted operator for the density
/// `w_k ∝ e^{−V(y_k)}` on a uniform grid with spacing `dy` (no-flux ends).
fn conditional_gap(weights: &[f64], dy: f64) -> f64 {
    let n = weights.len();
    let total: f64 = weights.iter().sum::<f64>() * dy;
    let w: Vec<f64> = weights.iter().map(|v| (v / total).max(1e-290)).collect();
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n - 1];
    for k in 0..n - 1 {
        let c = harmonic_mean(w[k], w[k + 1]) / dy;
        d[k] += c / (w[k] * w[k]);
        d[k + 1] += c / (w[k + 1] * w[k + 1]);
        e[k] = -c / (w[k] * w[k + 1]);
    }
    // standard form with mass diag dy/w
    for k in 0..n {
        d[k] *= w[k] / dy;
    }
    for k in 0..n - 1 {
        e[k] *= (w[k] * w[k + 1]).sqrt() / dy;
    }
    let t = SymTridiag { d, e };
    t.smallest_eigenvalues(2)[1]
}

/// Estimates `ρ` over all grid columns and both channels.
pub fn lsi_estimate(system: &BiChannelSystem, grid: &Grid) -> Result<LsiEstimate> {
    let mut rho_poincare = f64::INFINITY;
    let mut argmin = (0, 0);
    let mut alpha_min = f64::INFINITY;
    let mut weights = vec![0.0; grid.n_y];
    for j in 0..grid.n_x {
        let x = grid.x_center(j);
        for i in 0..2 {
            let mut vmin = f64::INFINITY;
            for k in 0..grid.n_y {
                vmin = vmin.min(system.v(x, grid.y_center(k), i));
            }
            let mut mass = 0.0;
            for k in 0..grid.n_y {
                let y = grid.y_center(k);
                weights[k] = (-(system.v(x, y, i) - vmin)).exp();
                mass += weights[k];
                alpha_min = alpha_min.min(system.dyy_v(x, y, i));
            }
            if !(mass > 0.0) {
                return Err(Error::NonNormalizable(format!(
                    "conditional at x-cell {j}, channel {i} vanished"
                )));
            }
            let gap = conditional_gap(&weights, grid.dy());
            if gap < rho_poincare {
                rho_poincare = gap;
                argmin = (j, i);
            }
        }
    }
    let rho_lower = if alpha_min > 0.0 { Some(alpha_min) } else { None };
    Ok(LsiEstimate {
        rho_poincare,
        rho_lower,
        argmin,
    })
}

/// One sample of the inverse-temperature scan of a 1-D conditional potential.
#[derive(Debug, Clone, Copy)]
pub struct BetaScanPoint {
    pub beta: f64,
    /// Gap of the weighted operator for the scaled potential `βW` (β = 1
    /// time units).
    pub gap: f64,
    /// Physical relaxation rate `gap/β`: the β = 1 convention rescales time by
    /// β, so the rate of the temperature-β dynamics is the gap divided by β.
    pub rate: f64,
}

/// Scans the Poincaré constant of `μ_β ∝ e^{−βW}` over inverse temperatures.
pub fn lsi_beta_scan(
    w: impl Fn(f64) -> f64,
    l: f64,
    n_y: usize,
    betas: &[f64],
) -> Vec<BetaScanPoint> {
    let dy = 2.0 * l / n_y as f64;
    betas
        .iter()
        .map(|&beta| {
            let mut vmin = f64::INFINITY;
            for k in 0..n_y {
                vmin = vmin.min(beta * w(-l + (k as f64 + 0.5) * dy));
            }
            let weights: Vec<f64> = (0..n_y)
                .map(|k| (-(beta * w(-l + (k as f64 + 0.5) * dy) - vmin)).exp())
                .collect();
            let gap = conditional_gap(&weights, dy);
            BetaScanPoint {
                beta,
                gap,
                rate: gap / beta,
            }
        })
        .collect()
}

/// The closed-form rate machinery of the main theorem.
#[derive(Debug, Clone, Copy)]
pub struct RateFunction {
    pub rho: f64,
    pub r_const: f64,
    pub m_tilde: f64,
    pub c_inf: f64,
}

impl RateFunction {
    pub fn from_report(hyp: &HypothesisReport) -> Self {
        Self {
            rho: hyp.rho,
            r_const: hyp.r_const(),
            m_tilde: hyp.m_tilde,
            c_inf: hyp.c_inf,
        }
    }

    /// `θ_min = 8 R² M̃ / c`.
    pub fn theta_min(&self) -> f64 {
        8.0 * self.r_const * self.r_const * self.m_tilde / self.c_inf
    }

    /// `Λ(θ) = ½[(ρ + θ/2) − √((ρ − θ/2)² + 16 R² M̃ ρ / c)]`, the closed form
    /// at `α* = M̃/c`. Increasing in θ, positive exactly for `θ > θ_min`,
    /// with limits 0 at `θ_min` and ρ at infinity.
    pub fn lambda_of(&self, theta: f64) -> f64 {
        let half = 0.5 * theta;
        let disc = (self.rho - half) * (self.rho - half)
            + 16.0 * self.r_const * self.r_const * self.m_tilde * self.rho / self.c_inf;
        0.5 * ((self.rho + half) - disc.sqrt())
    }

    /// `α* = M̃/c`, the paper's near-optimal choice.
    pub fn alpha_star(&self) -> f64 {
        self.m_tilde / self.c_inf
    }

    /// The 2×2 coefficient matrix `A(θ, α)` of the entropy system.
    pub fn matrix_a(&self, theta: f64, alpha: f64) -> [[f64; 2]; 2] {
        [
            [-self.rho, self.rho],
            [
                4.0 * alpha * self.r_const * self.r_const,
                -(1.0 - self.m_tilde / (2.0 * alpha * self.c_inf)) * theta,
            ],
        ]
    }

    /// Eigenvalues `(−λ₋, −λ₊)` of `A(θ, α)` (ascending), so `λ₊ = Λ(θ)` at
    /// `α = α*`.
    pub fn matrix_eigenvalues(&self, theta: f64, alpha: f64) -> (f64, f64) {
        let a = self.matrix_a(theta, alpha);
        let tr = a[0][0] + a[1][1];
        let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
        let disc = (tr * tr - 4.0 * det).max(0.0).sqrt();
        (0.5 * (tr - disc), 0.5 * (tr + disc))
    }

    /// Admissible α interval `(α₋, α₊)` where `det A > 0` (requires θ > θ_min).
    pub fn alpha_interval(&self, theta: f64) -> Result<(f64, f64)> {
        let tmin = self.theta_min();
        if theta <= tmin {
            return Err(Error::H4Violated {
                theta,
                theta_min: tmin,
            });
        }
        let r2 = self.r_const * self.r_const;
        let disc = (theta * theta * self.c_inf * self.c_inf
            - 8.0 * self.m_tilde * theta * r2 * self.c_inf)
            .sqrt();
        Ok((
            (theta * self.c_inf - disc) / (8.0 * r2 * self.c_inf),
            (theta * self.c_inf + disc) / (8.0 * r2 * self.c_inf),
        ))
    }

    /// Golden-section maximization of `λ₊` over the admissible α interval.
    /// Exposed for comparison; all reported predictions use `α*`.
    pub fn optimize_alpha(&self, theta: f64) -> Result<(f64, f64)> {
        let (mut a, mut b) = self.alpha_interval(theta)?;
        // also honor tr(A) < 0
        let lo_tr = self.m_tilde * theta / (2.0 * self.c_inf * (self.rho + theta));
        a = a.max(lo_tr * (1.0 + 1e-12));
        let phi = (5.0f64.sqrt() - 1.0) / 2.0;
        // minimize −λ₊, i.e. the larger eigenvalue of A
        let f = |alpha: f64| -> f64 { self.matrix_eigenvalues(theta, alpha).1 };
        let (mut x1, mut x2) = (b - phi * (b - a), a + phi * (b - a));
        let (mut f1, mut f2) = (f(x1), f(x2));
        for _ in 0..200 {
            if f1 < f2 {
                b = x2;
                x2 = x1;
                f2 = f1;
                x1 = b - phi * (b - a);
                f1 = f(x1);
            } else {
                a = x1;
                x1 = x2;
                f1 = f2;
                x2 = a + phi * (b - a);
                f2 = f(x2);
            }
            if (b - a).abs() < 1e-14 * b.abs().max(1.0) {
                break;
            }
        }
        let alpha = 0.5 * (a + b);
        Ok((alpha, -f(alpha)))
    }
}

/// How ε is chosen inside `(0, Λ(θ))`.
#[derive(Debug, Clone, Copy)]
pub enum EpsilonRule {
    /// `ε = fraction·Λ(θ)` (clamped to 0 when Λ ≤ 0 in extended reports).
    Fraction(f64),
    Explicit(f64),
}

impl Default for EpsilonRule {
    fn default() -> Self {
        EpsilonRule::Fraction(0.05)
    }
}

/// Constants and predicted decay rates of the main convergence theorem.
#[derive(Debug, Clone)]
pub struct RatePrediction {
    pub rho: f64,
    pub c_const: f64,
    pub m_const: f64,
    pub c_inf: f64,
    pub m_tilde: f64,
    pub r_const: f64,
    pub theta: f64,
    pub theta_min: f64,
    pub alpha_star: f64,
    /// Eigenvalues `λ₋ ≥ λ₊` of `−A(θ, α*)`.
    pub lambda_minus: f64,
    pub lambda_plus: f64,
    /// Closed-form `Λ(θ)`.
    pub lambda_theta: f64,
    pub epsilon: f64,
    /// `2·min{Λ(θ) − ε, 4π²}`.
    pub predicted_rate: f64,
    /// `2·min{ρ, 4π², λ}` for the constant-switching scenario.
    pub remark2_rate: f64,
    /// Whether `θ > θ_min` held, i.e. the theorem actually applies.
    pub h4_satisfied: bool,
}

const FOUR_PI_SQ: f64 = 4.0 * std::f64::consts::PI * std::f64::consts::PI;

fn assemble_prediction(
    hyp: &HypothesisReport,
    theta: f64,
    epsilon: EpsilonRule,
    lambda_rate: f64,
) -> RatePrediction {
    let rf = RateFunction::from_report(hyp);
    let lambda_theta = rf.lambda_of(theta);
    let eps = match epsilon {
        EpsilonRule::Fraction(f) => (f * lambda_theta).max(0.0),
        EpsilonRule::Explicit(e) => e,
    };
    let (neg_minus, neg_plus) = rf.matrix_eigenvalues(theta, rf.alpha_star());
    RatePrediction {
        rho: hyp.rho,
        c_const: hyp.c_const,
        m_const: hyp.m_const,
        c_inf: hyp.c_inf,
        m_tilde: hyp.m_tilde,
        r_const: hyp.r_const(),
        theta,
        theta_min: rf.theta_min(),
        alpha_star: rf.alpha_star(),
        lambda_minus: -neg_minus,
        lambda_plus: -neg_plus,
        lambda_theta,
        epsilon: eps,
        predicted_rate: 2.0 * (lambda_theta - eps).min(FOUR_PI_SQ),
        remark2_rate: 2.0 * hyp.rho.min(FOUR_PI_SQ).min(lambda_rate),
        h4_satisfied: theta > rf.theta_min(),
    }
}

/// The theorem's rate prediction; errors when `θ ≤ θ_min` (hypothesis [H4]).
pub fn rate_prediction(
    hyp: &HypothesisReport,
    theta: f64,
    epsilon: EpsilonRule,
    lambda_rate: f64,
) -> Result<RatePrediction> {
    let pred = assemble_prediction(hyp, theta, epsilon, lambda_rate);
    if !pred.h4_satisfied {
        return Err(Error::H4Violated {
            theta,
            theta_min: pred.theta_min,
        });
    }
    if !(pred.epsilon > 0.0 && pred.epsilon < pred.lambda_theta) {
        return Err(Error::InvalidInput(format!(
            "need 0 < epsilon < Lambda(theta); got epsilon = {}, Lambda = {}",
            pred.epsilon, pred.lambda_theta
        )));
    }
    Ok(pred)
}

impl RatePrediction {
    /// Evaluates the same formulas without the `[H4]` gate, for reporting on
    /// scenarios where the theorem does not apply (`h4_satisfied` records it;
    /// `Λ(θ) < 0` there and the predicted rate is vacuous).
    pub fn extended(
        hyp: &HypothesisReport,
        theta: f64,
        epsilon: EpsilonRule,
        lambda_rate: f64,
    ) -> RatePrediction {
        assemble_prediction(hyp, theta, epsilon, lambda_rate)
    }
}
