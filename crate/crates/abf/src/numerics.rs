//! Small shared numerical kernels: face weights, symmetric tridiagonal
//! eigenvalues by Sturm bisection, banded LDLᵀ, and a shift-invert Lanczos
//! used by the spectral module above the dense-solver threshold.

/// Harmonic mean, the face weight used by both the Fokker-Planck solver and
/// the operator assembly.
#[inline]
pub fn harmonic_mean(a: f64, b: f64) -> f64 {
    2.0 * a * b / (a + b)
}

/// Symmetric tridiagonal matrix with diagonal `d` and off-diagonal `e`.
pub struct SymTridiag {
    pub d: Vec<f64>,
    pub e: Vec<f64>,
}

impl SymTridiag {
    /// Number of eigenvalues strictly below `x` (Sturm sequence count).
    fn count_below(&self, x: f64) -> usize {
        let n = self.d.len();
        let mut count = 0;
        let mut q = self.d[0] - x;
        if q < 0.0 {
            count += 1;
        }
        for i in 1..n {
            let e2 = self.e[i - 1] * self.e[i - 1];
            // Guard against exact zeros in the recurrence.
            let denom = if q == 0.0 { 1e-300 } else { q };
            q = self.d[i] - x - e2 / denom;
            if q < 0.0 {
                count += 1;
            }
        }
        count
    }

    /// The `k` smallest eigenvalues, by bisection on the Sturm count.
    pub fn smallest_eigenvalues(&self, k: usize) -> Vec<f64> {
        let n = self.d.len();
        let k = k.min(n);
        // Gershgorin bounds.
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..n {
            let r = if i > 0 { self.e[i - 1].abs() } else { 0.0 }
                + if i < n - 1 { self.e[i].abs() } else { 0.0 };
            lo = lo.min(self.d[i] - r);
            hi = hi.max(self.d[i] + r);
        }
        let scale = (hi - lo).max(1e-300);
        (0..k)
            .map(|m| {
                let (mut a, mut b) = (lo, hi);
                // eigenvalue m (0-based): smallest x with count_below(x) > m
                for _ in 0..200 {
                    let mid = 0.5 * (a + b);
                    if self.count_below(mid) > m {
                        b = mid;
                    } else {
                        a = mid;
                    }
                    if b - a < 1e-15 * scale {
                        break;
                    }
                }
                0.5 * (a + b)
            })
            .collect()
    }
}

/// Symmetric positive definite banded matrix in LDLᵀ-friendly storage.
///
/// `bands[b][i]` holds the entry `A[i + b + 1, i]` for `b = 0..bw`, and `diag`
/// the main diagonal; only the lower triangle is stored.
pub struct BandedSpd {
    pub n: usize,
    pub bw: usize,
    pub diag: Vec<f64>,
    pub bands: Vec<Vec<f64>>,
}

pub struct BandedLdlt {
    n: usize,
    bw: usize,
    d: Vec<f64>,
    /// Unit lower-triangular factors, same band layout as the input.
    l: Vec<Vec<f64>>,
}

impl BandedSpd {
    pub fn factorize(&self) -> Result<BandedLdlt, String> {
        let (n, bw) = (self.n, self.bw);
        let mut d = vec![0.0; n];
        let mut l = vec![vec![0.0; n]; bw];
        for j in 0..n {
            let mut dj = self.diag[j];
            for b in 0..bw.min(j) {
                let i = j - b - 1; // column i contributes l[b][i] = L[j, i]
                dj -= l[b][i] * l[b][i] * d[i];
            }
            if !(dj > 0.0) || !dj.is_finite() {
                return Err(format!("non-positive pivot {dj:e} at column {j}"));
            }
            d[j] = dj;
            for b in 0..bw {
                let row = j + b + 1;
                if row >= n {
                    break;
                }
                let mut v = self.bands[b][j];
                // overlap with earlier columns i in (row - bw, j)
                let i_lo = row.saturating_sub(bw);
                for i in i_lo..j {
                    let bj = j - i - 1; // L[j, i]
                    let br = row - i - 1; // L[row, i]
                    if br < bw {
                        v -= l[bj][i] * l[br][i] * d[i];
                    }
                }
                l[b][j] = v / dj;
            }
        }
        Ok(BandedLdlt { n, bw, d, l })
    }
}

impl BandedLdlt {
    /// Solves `A x = rhs` in place.
    pub fn solve(&self, x: &mut [f64]) {
        let (n, bw) = (self.n, self.bw);
        for j in 0..n {
            let xj = x[j];
            for b in 0..bw {
                let row = j + b + 1;
                if row >= n {
                    break;
                }
                x[row] -= self.l[b][j] * xj;
            }
        }
        for j in 0..n {
            x[j] /= self.d[j];
        }
        for j in (0..n).rev() {
            let mut s = x[j];
            for b in 0..bw {
                let row = j + b + 1;
                if row >= n {
                    break;
                }
                s -= self.l[b][j] * x[row];
            }
            x[j] = s;
        }
    }
}

/// Smallest `k` eigenpairs of a symmetric operator given through shift-invert
/// applications `x ↦ (A - σI)⁻¹x`.
///
/// Pairs are extracted one at a time by Lanczos with full reorthogonalization,
/// deflating each converged eigenvector; repeated eigenvalues are therefore
/// found with their multiplicity. Returns `(eigenvalues of A, eigenvectors)`
/// sorted ascending.
pub fn lanczos_smallest<F>(
    n: usize,
    k: usize,
    sigma: f64,
    mut solve: F,
    max_iter: usize,
    tol: f64,
) -> Result<(Vec<f64>, Vec<Vec<f64>>), String>
where
    F: FnMut(&mut [f64]),
{
    let k = k.min(n);
    let mut vals: Vec<f64> = Vec::with_capacity(k);
    let mut vecs: Vec<Vec<f64>> = Vec::with_capacity(k);
    for r in 0..k {
        let (val, vec) = lanczos_one(n, sigma, &mut solve, &vecs, max_iter, tol, r as u64)?;
        vals.push(val);
        vecs.push(vec);
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| vals[a].partial_cmp(&vals[b]).unwrap());
    Ok((
        order.iter().map(|&i| vals[i]).collect(),
        order.iter().map(|&i| vecs[i].clone()).collect(),
    ))
}

/// One shift-inverted Lanczos run in the orthogonal complement of `locked`,
/// returning the smallest eigenpair of `A` there.
fn lanczos_one<F>(
    n: usize,
    sigma: f64,
    solve: &mut F,
    locked: &[Vec<f64>],
    max_iter: usize,
    tol: f64,
    seed_salt: u64,
) -> Result<(f64, Vec<f64>), String>
where
    F: FnMut(&mut [f64]),
{
    use rand::Rng;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(0x5eed ^ seed_salt);
    let m = max_iter.min(n - locked.len());
    if m == 0 {
        return Err("Krylov space exhausted".into());
    }
    let mut vs: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut alpha: Vec<f64> = Vec::with_capacity(m);
    let mut beta: Vec<f64> = Vec::with_capacity(m);

    let mut v0: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
    orthogonalize(&mut v0, locked);
    normalize(&mut v0);
    vs.push(v0);

    let mut prev_ritz = f64::NAN;
    for it in 0..m {
        let mut w = vs[it].clone();
        solve(&mut w);
        orthogonalize(&mut w, locked);
        let a = dot(&w, &vs[it]);
        alpha.push(a);
        {
            let vi = vs[it].clone();
            axpy(&mut w, -a, &vi);
        }
        if it > 0 {
            let b = beta[it - 1];
            let vp = vs[it - 1].clone();
            axpy(&mut w, -b, &vp);
        }
        for _ in 0..2 {
            orthogonalize(&mut w, locked);
            orthogonalize(&mut w, &vs);
        }
        let b = norm(&w);
        if it >= 2 {
            let t = SymTridiag {
                d: alpha.clone(),
                e: beta.clone(),
            };
            let largest = *t.smallest_eigenvalues(it + 1).last().unwrap();
            if (largest - prev_ritz).abs() <= tol * largest.abs().max(1.0) || b < 1e-14 {
                break;
            }
            prev_ritz = largest;
        }
        if b < 1e-14 || it + 1 == m {
            break;
        }
        beta.push(b);
        let mut v = w;
        scale(&mut v, 1.0 / b);
        vs.push(v);
    }

    let m_used = alpha.len();
    let t = nalgebra::DMatrix::<f64>::from_fn(m_used, m_used, |i, j| {
        if i == j {
            alpha[i]
        } else if i + 1 == j {
            beta[i]
        } else if j + 1 == i {
            beta[j]
        } else {
            0.0
        }
    });
    let se = t.symmetric_eigen();
    // the largest inverse-operator Ritz value is the smallest eigenvalue of A
    let mut best = 0;
    for i in 1..m_used {
        if se.eigenvalues[i] > se.eigenvalues[best] {
            best = i;
        }
    }
    let nu = se.eigenvalues[best];
    if nu == 0.0 {
        return Err("shift-invert produced a zero Ritz value".into());
    }
    let mut v = vec![0.0; n];
    for (i, basis) in vs.iter().enumerate().take(m_used) {
        axpy(&mut v, se.eigenvectors[(i, best)], basis);
    }
    orthogonalize(&mut v, locked);
    normalize(&mut v);
    Ok((sigma + 1.0 / nu, v))
}

fn orthogonalize(w: &mut [f64], basis: &[Vec<f64>]) {
    for v in basis {
        let p = dot(w, v);
        axpy(w, -p, v);
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
fn scale(a: &mut [f64], s: f64) {
    for x in a.iter_mut() {
        *x *= s;
    }
}

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

fn normalize(a: &mut [f64]) {
    let n = norm(a);
    if n > 0.0 {
        scale(a, 1.0 / n);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tridiag_bisection_matches_laplacian_spectrum() {
        // -u'' on n points, Dirichlet: eigenvalues 4 sin^2(pi m / (2(n+1))) / h^2, h = 1
        let n = 50;
        let t = SymTridiag {
            d: vec![2.0; n],
            e: vec![-1.0; n - 1],
        };
        let evs = t.smallest_eigenvalues(3);
        for (m, ev) in evs.iter().enumerate() {
            let exact = 4.0 * (std::f64::consts::PI * (m as f64 + 1.0) / (2.0 * (n as f64 + 1.0)))
                .sin()
                .powi(2);
            assert!((ev - exact).abs() < 1e-10, "m={m}: {ev} vs {exact}");
        }
    }

    #[test]
    fn banded_ldlt_solves() {
        // pentadiagonal SPD test matrix
        let n = 40;
        let m = BandedSpd {
            n,
            bw: 2,
            diag: vec![5.0; n],
            bands: vec![vec![-1.0; n], vec![-0.5; n]],
        };
        let f = m.factorize().unwrap();
        let xs: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        // rhs = A xs
        let mut rhs = vec![0.0; n];
        for i in 0..n {
            let mut s = 5.0 * xs[i];
            if i + 1 < n {
                s += -1.0 * xs[i + 1];
            }
            if i >= 1 {
                s += -1.0 * xs[i - 1];
            }
            if i + 2 < n {
                s += -0.5 * xs[i + 2];
            }
            if i >= 2 {
                s += -0.5 * xs[i - 2];
            }
            rhs[i] = s;
        }
        f.solve(&mut rhs);
        for i in 0..n {
            assert!((rhs[i] - xs[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn shift_invert_lanczos_matches_dense() {
        let n = 60;
        // SPD pentadiagonal
        let banded = BandedSpd {
            n,
            bw: 2,
            diag: (0..n).map(|i| 4.0 + 0.05 * (i as f64).sin()).collect(),
            bands: vec![vec![-1.0; n], vec![-0.3; n]],
        };
        let sigma = -0.1;
        let shifted = BandedSpd {
            n,
            bw: 2,
            diag: banded.diag.iter().map(|d| d - sigma).collect(),
            bands: banded.bands.clone(),
        };
        let f = shifted.factorize().unwrap();
        let (vals, _) = lanczos_smallest(n, 3, sigma, |x| f.solve(x), 50, 1e-12).unwrap();

        let dense = nalgebra::DMatrix::<f64>::from_fn(n, n, |i, j| {
            if i == j {
                banded.diag[i]
            } else if i.abs_diff(j) == 1 {
                -1.0
            } else if i.abs_diff(j) == 2 {
                -0.3
            } else {
                0.0
            }
        });
        let mut evs: Vec<f64> = dense.symmetric_eigen().eigenvalues.iter().copied().collect();
        evs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for m in 0..3 {
            assert!(
                (vals[m] - evs[m]).abs() < 1e-9,
                "pair {m}: {} vs {}",
                vals[m],
                evs[m]
            );
        }
    }
}
