use crate::error::{Error, Result};

/// Uniform cell-centered grid on `𝕋 × [-L, L]`.
///
/// The x direction is periodic with `n_x` cells of width `dx = 1/n_x`; the y
/// direction has `n_y` cells of width `dy = 2L/n_y` with no-flux faces at `±L`.
/// All quadratures in the crate use the cell measure `dx·dy` (midpoint rule,
/// identical to the trapezoid rule on the periodic direction), so discrete
/// identities like mass conservation and the entropy decomposition hold exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub n_x: usize,
    pub n_y: usize,
    /// Half-extent of the truncated y-domain.
    pub l: f64,
}

impl Grid {
    pub fn new(n_x: usize, n_y: usize, l: f64) -> Result<Self> {
        if n_x < 8 || n_y < 8 {
            return Err(Error::InvalidInput(format!(
                "grid must have n_x, n_y >= 8 (got {n_x} x {n_y})"
            )));
        }
        if !(l > 0.0) || !l.is_finite() {
            return Err(Error::InvalidInput(format!("y half-extent must be positive (got {l})")));
        }
        Ok(Self { n_x, n_y, l })
    }

    #[inline]
    pub fn dx(&self) -> f64 {
        1.0 / self.n_x as f64
    }

    #[inline]
    pub fn dy(&self) -> f64 {
        2.0 * self.l / self.n_y as f64
    }

    #[inline]
    pub fn x_center(&self, j: usize) -> f64 {
        (j as f64 + 0.5) * self.dx()
    }

    #[inline]
    pub fn y_center(&self, k: usize) -> f64 {
        -self.l + (k as f64 + 0.5) * self.dy()
    }

    pub fn x_centers(&self) -> Vec<f64> {
        (0..self.n_x).map(|j| self.x_center(j)).collect()
    }

    pub fn y_centers(&self) -> Vec<f64> {
        (0..self.n_y).map(|k| self.y_center(k)).collect()
    }

    /// Cell measure `dx·dy`.
    #[inline]
    pub fn cell_area(&self) -> f64 {
        self.dx() * self.dy()
    }
}
