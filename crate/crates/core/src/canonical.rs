//! The canonical recursion `Ψ_{j+1} = J(γ_{j-1}, γ_j) Ψ_j − K(γ_j)/K(γ_{j-1}) Ψ_{j-1}`
//! and its polar form.
//!
//! Writing `(x_j, y_j) = (Ψ_j, Ψ_{j-1}) = ρ_j (cos θ_j, sin θ_j)` turns one step
//! of the recursion into a phase map `θ_{j+1} = 𝒯(θ_j)` and a squared radius
//! ratio `(ρ_{j+1}/ρ_j)² = ℱ(θ_j)`. Phases are kept in `[0, π)`.

use std::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64;

use crate::xfer::TransferMatrix;
use crate::{Error, Result};

/// Recursion values beyond this magnitude must be rescaled by the caller.
pub const OVERFLOW_LIMIT: f64 = 1e280;
/// `|K|` at or below this value is treated as a zero of `K`.
pub const SINGULAR_K: f64 = 1e-12;
/// Largest imaginary part tolerated when specializing coefficients to real values.
pub const REAL_TOL: f64 = 1e-9;

/// Coefficients `S̄`, `S`, `K` of one potential unit.
///
/// `kfun` is normalized by `1/i` relative to `½(M11 − M22 + M21 − M12)` so that
/// it is real for real potentials; only ratios of `K` enter the recursion, so
/// the factor is immaterial.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CanonicalCoefficients {
    pub sbar: Complex64,
    pub s: Complex64,
    pub kfun: Complex64,
}

impl CanonicalCoefficients {
    /// `K = 0`: the unit cannot be written in canonical form at this energy.
    pub fn is_degenerate(&self) -> bool {
        self.kfun.norm() <= SINGULAR_K
    }

    pub fn to_real(&self) -> Result<RealCoefficients> {
        let worst = self.sbar.im.abs().max(self.s.im.abs()).max(self.kfun.im.abs());
        if worst > REAL_TOL {
            return Err(Error::ComplexCoefficients(worst));
        }
        Ok(RealCoefficients {
            sbar: self.sbar.re,
            s: self.s.re,
            kfun: self.kfun.re,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RealCoefficients {
    pub sbar: f64,
    pub s: f64,
    pub kfun: f64,
}

pub fn coefficients_from_matrix(m: &TransferMatrix) -> CanonicalCoefficients {
    let (m11, m12, m21, m22) = (m.m11(), m.m12(), m.m21(), m.m22());
    CanonicalCoefficients {
        sbar: 0.5 * (m11 + m12 + m21 + m22),
        s: 0.5 * (m11 - m12 - m21 + m22),
        kfun: 0.5 * (m11 - m22 + m21 - m12) * Complex64::new(0.0, -1.0),
    }
}

/// Specialized formulas for real-potential matrices `[[α, β], [β*, α*]]`.
pub fn real_coefficients_from_matrix(m: &TransferMatrix) -> RealCoefficients {
    let (a, b) = (m.m11(), m.m12());
    RealCoefficients {
        sbar: a.re + b.re,
        s: a.re - b.re,
        kfun: a.im - b.im,
    }
}

/// A chain's canonical coefficients tabulated at one energy.
///
/// Species are indexed `0..n`. `J(prev, cur)` and `K(cur)` are the coefficients
/// of the step that crosses a `cur` unit preceded by a `prev` unit.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalModel {
    energy: f64,
    n: usize,
    j: Vec<f64>,
    k: Vec<f64>,
}

impl CanonicalModel {
    /// `j` is row-major: `j[prev * n + cur]`.
    pub fn new(energy: f64, j: Vec<f64>, k: Vec<f64>) -> Result<Self> {
        let n = k.len();
        if n == 0 {
            return Err(Error::InvalidInput("a model needs at least one species".into()));
        }
        if j.len() != n * n {
            return Err(Error::InvalidInput(format!(
                "J table has {} entries, expected {}",
                j.len(),
                n * n
            )));
        }
        if j.iter().chain(&k).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite coefficient at energy {energy}"
            )));
        }
        if let Some(species) = k.iter().position(|v| v.abs() <= SINGULAR_K) {
            return Err(Error::SingularK { species, energy });
        }
        Ok(Self { energy, n, j, k })
    }

    /// Models whose `J` depends only on the current species.
    pub fn site_local(energy: f64, j: &[f64], k: Vec<f64>) -> Result<Self> {
        let n = j.len();
        let table = (0..n * n).map(|idx| j[idx % n]).collect();
        Self::new(energy, table, k)
    }

    /// Coefficients of a chain of real-potential units from their transfer
    /// matrices: `J(p, c) = S̄_c + S_p K_c / K_p`.
    pub fn from_transfer_matrices(energy: f64, ms: &[TransferMatrix]) -> Result<Self> {
        let coeffs = ms
            .iter()
            .map(|m| coefficients_from_matrix(m).to_real())
            .collect::<Result<Vec<_>>>()?;
        let n = coeffs.len();
        let k: Vec<f64> = coeffs.iter().map(|c| c.kfun).collect();
        if let Some(species) = k.iter().position(|v| v.abs() <= SINGULAR_K) {
            return Err(Error::SingularK { species, energy });
        }
        let mut j = Vec::with_capacity(n * n);
        for p in &coeffs {
            for c in &coeffs {
                j.push(c.sbar + p.s * c.kfun / p.kfun);
            }
        }
        Self::new(energy, j, k)
    }

    pub fn energy(&self) -> f64 {
        self.energy
    }

    pub fn species_count(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn j(&self, prev: usize, cur: usize) -> f64 {
        self.j[prev * self.n + cur]
    }

    #[inline]
    pub fn k(&self, species: usize) -> f64 {
        self.k[species]
    }

    /// `K(cur) / K(prev)`.
    #[inline]
    pub fn k_ratio(&self, prev: usize, cur: usize) -> f64 {
        self.k[cur] / self.k[prev]
    }

    pub fn k_sign(&self, species: usize) -> f64 {
        self.k[species].signum()
    }

    /// No eigenvalue can exist at this energy: `J²(γ', γ) > 4 K(γ)/K(γ')`
    /// for every ordered pair of species.
    pub fn in_gap(&self) -> bool {
        (0..self.n).all(|p| (0..self.n).all(|c| self.j(p, c).powi(2) > 4.0 * self.k_ratio(p, c)))
    }
}

pub fn gap_condition(model: &CanonicalModel) -> bool {
    model.in_gap()
}

/// One step of the recursion.
pub fn canonical_step(psi_j: f64, psi_jm1: f64, j_coeff: f64, k_ratio: f64) -> Result<f64> {
    let next = j_coeff * psi_j - k_ratio * psi_jm1;
    if next.abs() > OVERFLOW_LIMIT || !next.is_finite() {
        return Err(Error::Overflow(next));
    }
    Ok(next)
}

/// A phase in `[0, π)` together with an integer branch counter.
///
/// [`phase_forward`] increments `winding` on each step where the amplitude
/// changes sign, i.e. where the lifted phase crosses a half-turn boundary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhasePoint {
    pub theta: f64,
    pub winding: i64,
}

impl PhasePoint {
    /// Reduces an arbitrary angle into `[0, π)`, moving whole half-turns into `winding`.
    pub fn new(theta: f64) -> Self {
        let (theta, winding) = reduce_phase(theta);
        Self { theta, winding }
    }
}

pub(crate) fn reduce_phase(theta: f64) -> (f64, i64) {
    let n = (theta / PI).floor();
    let mut t = theta - n * PI;
    let mut n = n as i64;
    if t >= PI {
        t -= PI;
        n += 1;
    }
    if t < 0.0 {
        t = 0.0;
    }
    (t, n)
}

/// `θ' = arctan{(J − r tan θ)^{-1}}` reduced to `[0, π)`.
///
/// Evaluated as the polar angle of the mapped vector `(J cos θ − r sin θ, cos θ)`,
/// which has no poles.
pub fn phase_forward(theta: PhasePoint, j_coeff: f64, k_ratio: f64) -> PhasePoint {
    let (s, c) = theta.theta.sin_cos();
    let (next, sign_change) = forward_angle(s, c, j_coeff, k_ratio);
    PhasePoint {
        theta: next,
        winding: theta.winding + i64::from(sign_change),
    }
}

#[inline]
pub(crate) fn forward_angle(sin: f64, cos: f64, j_coeff: f64, k_ratio: f64) -> (f64, bool) {
    let x = j_coeff * cos - k_ratio * sin;
    let mut t = cos.atan2(x);
    if t < 0.0 {
        t += PI;
    }
    if t >= PI {
        t -= PI;
    }
    // Ψ_{j+1}/Ψ_j = cot θ' < 0.
    (t, t > FRAC_PI_2)
}

/// Principal branch of the inverse phase map,
/// `𝒯⁻¹(θ) = arctan{(J − cot θ) / r}` with `r = K(γ_j)/K(γ_{j-1})`,
/// valued in `[-π/2, π/2]`.
///
/// `𝒯⁻¹(0) = −π/2` for `r > 0` and `+π/2` for `r < 0`; the map increases with
/// `θ` iff `r > 0`.
pub fn phase_inverse(theta: f64, j_coeff: f64, k_ratio: f64) -> f64 {
    let (s, c) = theta.sin_cos();
    if s <= 0.0 {
        return -k_ratio.signum() * FRAC_PI_2;
    }
    ((j_coeff * s - c) / (k_ratio * s)).atan()
}

/// `ℱ(θ) = cos²θ + (J cos θ − r sin θ)²`, the squared growth of the state
/// vector in one step.
#[inline]
pub fn radius_factor(theta: f64, j_coeff: f64, k_ratio: f64) -> f64 {
    let (s, c) = theta.sin_cos();
    let x = j_coeff * c - k_ratio * s;
    c * c + x * x
}
