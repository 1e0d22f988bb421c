//! Continuous transfer matrices.
//!
//! A [`TransferMatrix`] relates the plane-wave amplitudes `(A, B)` of
//! `A e^{ikx} + B e^{-ikx}` on the left of a potential to those on its right.
//! Matrices of real potentials belong to SU(1,1); every matrix, real or
//! complex, is unimodular.

use std::ops::Mul;

use num_complex::Complex64;

use crate::{Error, Result};

/// Default tolerance on `|det M - 1|`.
pub const UNIMODULAR_TOL: f64 = 1e-10;
/// Default tolerance for [`classify_symmetry`].
pub const SYMMETRY_TOL: f64 = 1e-9;

const RENORMALIZE_EVERY: usize = 64;
const WAVENUMBER_RTOL: f64 = 1e-12;
const I: Complex64 = Complex64::new(0.0, 1.0);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransferMatrix {
    m11: Complex64,
    m12: Complex64,
    m21: Complex64,
    m22: Complex64,
    k: f64,
}

impl TransferMatrix {
    /// Builds a matrix, checking `k > 0` and unimodularity within [`UNIMODULAR_TOL`].
    pub fn new(k: f64, m11: Complex64, m12: Complex64, m21: Complex64, m22: Complex64) -> Result<Self> {
        check_wavenumber(k)?;
        let m = Self { m11, m12, m21, m22, k };
        let drift = (m.det() - 1.0).norm();
        if !(drift <= UNIMODULAR_TOL) {
            return Err(Error::NotUnimodular(drift));
        }
        Ok(m)
    }

    pub(crate) fn from_raw(k: f64, m11: Complex64, m12: Complex64, m21: Complex64, m22: Complex64) -> Self {
        Self { m11, m12, m21, m22, k }
    }

    pub fn identity(k: f64) -> Self {
        let one = Complex64::new(1.0, 0.0);
        let zero = Complex64::new(0.0, 0.0);
        Self::from_raw(k, one, zero, zero, one)
    }

    /// Free propagation over `length`: `diag(e^{ik·length}, e^{-ik·length})`.
    pub fn free(k: f64, length: f64) -> Self {
        let phase = Complex64::from_polar(1.0, k * length);
        Self::from_raw(
            k,
            phase,
            Complex64::new(0.0, 0.0),
            Complex64::new(0.0, 0.0),
            phase.conj(),
        )
    }

    /// Point scatterer `V(x) = strength·δ(x)` in units where `ψ'' = (V - k²)ψ`.
    ///
    /// Obtained from continuity of ψ and the jump `ψ'(0⁺) - ψ'(0⁻) = strength·ψ(0)`;
    /// it is a convenience constructor, not one of the analytic results of the
    /// formalism. `T = 1 / (1 + (strength / 2k)²)`.
    pub fn delta(k: f64, strength: f64) -> Self {
        let a = Complex64::new(0.0, strength / (2.0 * k));
        let one = Complex64::new(1.0, 0.0);
        Self::from_raw(k, one - a, -a, a, one + a)
    }

    pub fn m11(&self) -> Complex64 {
        self.m11
    }
    pub fn m12(&self) -> Complex64 {
        self.m12
    }
    pub fn m21(&self) -> Complex64 {
        self.m21
    }
    pub fn m22(&self) -> Complex64 {
        self.m22
    }
    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn det(&self) -> Complex64 {
        self.m11 * self.m22 - self.m12 * self.m21
    }

    /// Inverse, assuming unit determinant.
    pub fn inverse(&self) -> Self {
        Self::from_raw(self.k, self.m22, -self.m12, -self.m21, self.m11)
    }

    pub(crate) fn scale(&self, factor: Complex64) -> Self {
        Self::from_raw(
            self.k,
            self.m11 * factor,
            self.m12 * factor,
            self.m21 * factor,
            self.m22 * factor,
        )
    }

    pub(crate) fn max_abs(&self) -> f64 {
        self.m11
            .norm()
            .max(self.m12.norm())
            .max(self.m21.norm())
            .max(self.m22.norm())
    }

    /// Divides by `det^{1/2}` to remove rounding drift. For products with
    /// `‖M‖² ≳ 1/ε` the computed determinant is rounding noise and the
    /// matrix is left unchanged.
    fn renormalized(&self) -> Self {
        let det = self.det();
        if det.is_finite() && (det - 1.0).norm() < 0.5 {
            self.scale(det.sqrt().inv())
        } else {
            *self
        }
    }
}

impl Mul for TransferMatrix {
    type Output = TransferMatrix;

    /// `self · rhs`: `rhs` acts first.
    fn mul(self, rhs: TransferMatrix) -> TransferMatrix {
        TransferMatrix::from_raw(
            self.k,
            self.m11 * rhs.m11 + self.m12 * rhs.m21,
            self.m11 * rhs.m12 + self.m12 * rhs.m22,
            self.m21 * rhs.m11 + self.m22 * rhs.m21,
            self.m21 * rhs.m12 + self.m22 * rhs.m22,
        )
    }
}

fn check_wavenumber(k: f64) -> Result<()> {
    if k.is_finite() && k > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "wavenumber must be positive and finite, got {k}"
        )))
    }
}

pub(crate) fn check_same_wavenumber(a: f64, b: f64) -> Result<()> {
    if (a - b).abs() > WAVENUMBER_RTOL * a.abs().max(b.abs()) {
        Err(Error::MismatchedWavenumber(a, b))
    } else {
        Ok(())
    }
}

/// Product of the matrices of consecutive potential units.
///
/// `ms` is given in chain order, left to right: element 0 is applied first,
/// so the result is `M_{N-1} ⋯ M_1 M_0`. The partial product is renormalized
/// by `det^{-1/2}` every 64 factors to keep it unimodular.
pub fn compose(ms: &[TransferMatrix]) -> Result<TransferMatrix> {
    let (first, rest) = ms
        .split_first()
        .ok_or_else(|| Error::InvalidInput("cannot compose an empty list of matrices".into()))?;
    let mut acc = *first;
    for (i, m) in rest.iter().enumerate() {
        check_same_wavenumber(first.k, m.k)?;
        acc = *m * acc;
        if (i + 1) % RENORMALIZE_EVERY == 0 {
            acc = acc.renormalized();
        }
    }
    Ok(acc.renormalized())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScatteringAmplitudes {
    pub t: Complex64,
    pub r_left: Complex64,
    pub r_right: Complex64,
}

impl ScatteringAmplitudes {
    /// A region with no potential.
    pub fn free() -> Self {
        Self {
            t: Complex64::new(1.0, 0.0),
            r_left: Complex64::new(0.0, 0.0),
            r_right: Complex64::new(0.0, 0.0),
        }
    }

    /// `T = |t|²`.
    pub fn transmission(&self) -> f64 {
        self.t.norm_sqr()
    }

    /// `R = |r_L|²`.
    pub fn reflection(&self) -> f64 {
        self.r_left.norm_sqr()
    }
}

pub fn scattering_amplitudes(m: &TransferMatrix) -> Result<ScatteringAmplitudes> {
    let m22 = m.m22;
    if !(m22.norm() >= 1e-300) {
        return Err(Error::SingularMatrix(m22.norm()));
    }
    Ok(ScatteringAmplitudes {
        t: m22.inv(),
        r_left: -m.m21 / m22,
        r_right: m.m12 / m22,
    })
}

/// Amplitudes of potential 1 followed (on its right) by potential 2, from the
/// coherent sum of multiple reflections between them.
///
/// The closed forms hold beyond the convergence radius of the geometric
/// series; they are the matrix product `M2·M1` written in amplitudes.
pub fn compose_scattering(s1: &ScatteringAmplitudes, s2: &ScatteringAmplitudes) -> Result<ScatteringAmplitudes> {
    let denom = 1.0 - s2.r_left * s1.r_right;
    if denom.norm() < 1e-14 {
        return Err(Error::ResonancePole(denom.norm()));
    }
    Ok(ScatteringAmplitudes {
        t: s1.t * s2.t / denom,
        r_left: s1.r_left + s2.r_left * s1.t * s1.t / denom,
        r_right: s2.r_right + s1.r_right * s2.t * s2.t / denom,
    })
}

/// Symmetry classes of transfer matrices, most specific first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SymmetryClass {
    /// `[[α, ib], [-ib, α*]]`: real potential with parity symmetry.
    RealParity,
    /// `[[α, β], [β*, α*]]` ∈ SU(1,1): real potential.
    Real,
    /// `[[α, ib], [ic, α*]]`: complex PT-symmetric potential.
    ComplexPT,
    /// `[[α, β], [-β, γ]]`: complex potential with parity symmetry.
    ComplexParity,
    /// No relation among the elements besides `det = 1`.
    GeneralComplex,
}

impl SymmetryClass {
    /// Whether `|r_L| = |r_R|` holds for every matrix of this class.
    pub fn equal_reflection_moduli(self) -> bool {
        matches!(self, Self::RealParity | Self::Real | Self::ComplexParity)
    }
}

pub fn classify_symmetry(m: &TransferMatrix, tol: f64) -> Result<SymmetryClass> {
    let drift = (m.det() - 1.0).norm();
    if drift > tol {
        return Err(Error::NotUnimodular(drift));
    }
    let close = |a: Complex64, b: Complex64| (a - b).norm() <= tol;
    let conj_diagonal = close(m.m22, m.m11.conj());
    let conj_offdiagonal = close(m.m21, m.m12.conj());
    let parity = close(m.m21, -m.m12);
    let imaginary_offdiagonal = m.m12.re.abs() <= tol && m.m21.re.abs() <= tol;

    let class = if conj_diagonal && conj_offdiagonal && parity {
        SymmetryClass::RealParity
    } else if conj_diagonal && conj_offdiagonal {
        SymmetryClass::Real
    } else if conj_diagonal && imaginary_offdiagonal {
        SymmetryClass::ComplexPT
    } else if parity {
        SymmetryClass::ComplexParity
    } else {
        SymmetryClass::GeneralComplex
    };
    Ok(class)
}

/// Matrix of the potential truncated to `[-d1, d2]`, built from its
/// asymptotic matrix.
pub fn apply_cutoff(m_asymptotic: &TransferMatrix, k: f64, d1: f64, d2: f64) -> Result<TransferMatrix> {
    check_wavenumber(k)?;
    check_same_wavenumber(m_asymptotic.k, k)?;
    if !(d1 >= 0.0 && d2 >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "cut-off distances must be non-negative, got d1={d1}, d2={d2}"
        )));
    }
    let sum = Complex64::from_polar(1.0, k * (d2 + d1));
    let diff = Complex64::from_polar(1.0, k * (d2 - d1));
    Ok(TransferMatrix::from_raw(
        k,
        m_asymptotic.m11 * sum,
        m_asymptotic.m12 * diff,
        m_asymptotic.m21 * diff.conj(),
        m_asymptotic.m22 * sum.conj(),
    ))
}

/// Plane-wave coefficients of two elementary solutions `u`, `v` at `x → ±∞`:
/// `u(±∞) = U1± e^{ikx} + U2± e^{-ikx}` and likewise for `v`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AsymptoticSolutions {
    pub u1_plus: Complex64,
    pub u2_plus: Complex64,
    pub v1_plus: Complex64,
    pub v2_plus: Complex64,
    pub u1_minus: Complex64,
    pub u2_minus: Complex64,
    pub v1_minus: Complex64,
    pub v2_minus: Complex64,
}

/// Asymptotic transfer matrix from the plane-wave content of two elementary
/// solutions with Wronskian `W = v u' - v' u`.
pub fn asymptotic_matrix_from_solutions(
    sol: &AsymptoticSolutions,
    wronskian: Complex64,
    k: f64,
) -> Result<TransferMatrix> {
    check_wavenumber(k)?;
    if wronskian.norm() < 1e-14 {
        return Err(Error::DegenerateSolutions(wronskian.norm()));
    }
    let f = 2.0 * I * k / wronskian;
    let s = sol;
    TransferMatrix::new(
        k,
        f * (s.u1_plus * s.v2_minus - s.v1_plus * s.u2_minus),
        f * (s.v1_plus * s.u1_minus - s.u1_plus * s.v1_minus),
        f * (s.u2_plus * s.v2_minus - s.v2_plus * s.u2_minus),
        f * (s.v2_plus * s.u1_minus - s.u2_plus * s.v1_minus),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, SQRT_2};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn close(a: Complex64, b: Complex64, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    #[test]
    fn compose_identities() {
        let id = TransferMatrix::identity(1.0);
        let m = compose(&[id, id]).unwrap();
        assert_eq!(m, id);
    }

    #[test]
    fn compose_adds_phases() {
        let p = TransferMatrix::free(1.0, FRAC_PI_4);
        let m = compose(&[p, p]).unwrap();
        assert!(close(m.m11(), c(0.0, 1.0), 1e-15));
        assert!(close(m.m22(), c(0.0, -1.0), 1e-15));
        assert!(m.m12().norm() < 1e-15 && m.m21().norm() < 1e-15);
    }

    #[test]
    fn compose_order_is_chain_order() {
        let a = TransferMatrix::delta(1.3, 0.7);
        let b = TransferMatrix::free(1.3, 0.4);
        let m = compose(&[a, b]).unwrap();
        let direct = b * a;
        for (x, y) in [
            (m.m11, direct.m11),
            (m.m12, direct.m12),
            (m.m21, direct.m21),
            (m.m22, direct.m22),
        ] {
            assert!(close(x, y, 1e-14));
        }
    }

    #[test]
    fn compose_rejects_mixed_wavenumbers() {
        let err = compose(&[TransferMatrix::identity(1.0), TransferMatrix::identity(1.1)]).unwrap_err();
        assert!(matches!(err, Error::MismatchedWavenumber(..)));
        assert!(compose(&[]).is_err());
    }

    #[test]
    fn identity_scatters_nothing() {
        let s = scattering_amplitudes(&TransferMatrix::identity(2.0)).unwrap();
        assert_eq!(s, ScatteringAmplitudes::free());
    }

    #[test]
    fn delta_half_transmission() {
        // Hand solution of the matching conditions: t = 1/(1 + i v/2k), so
        // T = 1/(1 + (v/2k)²) = 1/2 for v = 2, k = 1.
        let s = scattering_amplitudes(&TransferMatrix::delta(1.0, 2.0)).unwrap();
        assert!((s.transmission() - 0.5).abs() < 1e-15);
        assert!((s.t - c(1.0, 1.0).inv()).norm() < 1e-15);
        assert!((s.transmission() + s.reflection() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn singular_m22() {
        let z = c(0.0, 0.0);
        let m = TransferMatrix::from_raw(1.0, c(1.0, 0.0), z, z, z);
        assert!(matches!(scattering_amplitudes(&m), Err(Error::SingularMatrix(_))));
    }

    #[test]
    fn compose_scattering_with_free_region() {
        let s1 = scattering_amplitudes(&TransferMatrix::delta(0.8, 1.7)).unwrap();
        let s = compose_scattering(&s1, &ScatteringAmplitudes::free()).unwrap();
        assert_eq!(s, s1);
    }

    #[test]
    fn compose_scattering_two_deltas_matches_product() {
        let m = TransferMatrix::delta(1.0, 2.0);
        let s1 = scattering_amplitudes(&m).unwrap();
        let pair = compose_scattering(&s1, &s1).unwrap();
        let direct = scattering_amplitudes(&(m * m)).unwrap();
        assert!(close(pair.t, direct.t, 1e-14));
        assert!(close(pair.r_left, direct.r_left, 1e-14));
        assert!(close(pair.r_right, direct.r_right, 1e-14));
    }

    #[test]
    fn opaque_barrier_blocks_everything() {
        let s1 = ScatteringAmplitudes {
            t: c(0.0, 0.0),
            r_left: c(1.0, 0.0),
            r_right: c(0.0, 1.0),
        };
        let s2 = scattering_amplitudes(&TransferMatrix::delta(1.0, 0.3)).unwrap();
        assert_eq!(compose_scattering(&s1, &s2).unwrap().t, c(0.0, 0.0));
    }

    #[test]
    fn resonance_pole() {
        let s1 = ScatteringAmplitudes {
            t: c(0.0, 0.0),
            r_left: c(1.0, 0.0),
            r_right: c(1.0, 0.0),
        };
        let s2 = ScatteringAmplitudes {
            t: c(0.0, 0.0),
            r_left: c(1.0, 0.0),
            r_right: c(1.0, 0.0),
        };
        assert!(matches!(compose_scattering(&s1, &s2), Err(Error::ResonancePole(_))));
    }

    #[test]
    fn classify_table_rows() {
        let rp = TransferMatrix::new(1.0, c(SQRT_2, 0.0), c(0.0, 1.0), c(0.0, -1.0), c(SQRT_2, 0.0)).unwrap();
        assert_eq!(classify_symmetry(&rp, SYMMETRY_TOL).unwrap(), SymmetryClass::RealParity);

        // |α|² + bc = 1 with α = √2, b = 1/2, c = -2.
        let pt = TransferMatrix::new(1.0, c(SQRT_2, 0.0), c(0.0, 0.5), c(0.0, -2.0), c(SQRT_2, 0.0)).unwrap();
        assert_eq!(classify_symmetry(&pt, SYMMETRY_TOL).unwrap(), SymmetryClass::ComplexPT);

        let alpha = c(1.2, 0.5);
        let beta = (alpha.norm_sqr() - 1.0).sqrt() * Complex64::from_polar(1.0, 0.3);
        let real = TransferMatrix::new(1.0, alpha, beta, beta.conj(), alpha.conj()).unwrap();
        assert_eq!(classify_symmetry(&real, SYMMETRY_TOL).unwrap(), SymmetryClass::Real);

        // αγ + β² = 1.
        let (a, g, b) = (c(2.0, 1.0), c(0.5, -0.3), c(0.0, 0.0));
        let b = b + ((1.0 - a * g) as Complex64).sqrt();
        let cp = TransferMatrix::new(1.0, a, b, -b, g).unwrap();
        assert_eq!(
            classify_symmetry(&cp, SYMMETRY_TOL).unwrap(),
            SymmetryClass::ComplexParity
        );

        let (a, b, d) = (c(1.5, 0.2), c(0.3, 0.7), c(-0.4, 0.9));
        let gm = (1.0 + b * d) / a;
        let general = TransferMatrix::new(1.0, a, b, d, gm).unwrap();
        assert_eq!(
            classify_symmetry(&general, SYMMETRY_TOL).unwrap(),
            SymmetryClass::GeneralComplex
        );
    }

    #[test]
    fn classify_rejects_non_unimodular() {
        let m = TransferMatrix::from_raw(1.0, c(2.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(1.0, 0.0));
        assert!(matches!(classify_symmetry(&m, 1e-9), Err(Error::NotUnimodular(_))));
    }

    #[test]
    fn classification_stable_under_tolerance_scaling() {
        let m = TransferMatrix::delta(0.9, 1.1);
        let base = classify_symmetry(&m, 1e-12).unwrap();
        for tol in [1e-11, 1e-10, 1e-9] {
            assert_eq!(classify_symmetry(&m, tol).unwrap(), base);
        }
        assert_eq!(base, SymmetryClass::RealParity);
    }

    #[test]
    fn cutoff_zero_is_noop() {
        let m = TransferMatrix::delta(1.4, 0.6);
        assert_eq!(apply_cutoff(&m, 1.4, 0.0, 0.0).unwrap(), m);
    }

    #[test]
    fn cutoff_identity_half_pi() {
        let m = apply_cutoff(&TransferMatrix::identity(1.0), 1.0, FRAC_PI_2, FRAC_PI_2).unwrap();
        assert!(close(m.m11(), c(-1.0, 0.0), 1e-15));
        assert!(close(m.m22(), c(-1.0, 0.0), 1e-15));
    }

    #[test]
    fn cutoff_preserves_det() {
        let m = TransferMatrix::delta(0.7, 3.0) * TransferMatrix::free(0.7, 0.3);
        let cut = apply_cutoff(&m, 0.7, 0.4, 1.9).unwrap();
        assert!(close(cut.det(), m.det(), 1e-14));
        assert!(apply_cutoff(&m, 0.7, -1.0, 0.0).is_err());
    }

    #[test]
    fn asymptotic_free_particle_is_identity() {
        let one = c(1.0, 0.0);
        let zero = c(0.0, 0.0);
        let sol = AsymptoticSolutions {
            u1_plus: one,
            u2_plus: zero,
            v1_plus: zero,
            v2_plus: one,
            u1_minus: one,
            u2_minus: zero,
            v1_minus: zero,
            v2_minus: one,
        };
        let k = 1.7;
        // W = v u' - v' u = 2ik for u = e^{ikx}, v = e^{-ikx}.
        let m = asymptotic_matrix_from_solutions(&sol, c(0.0, 2.0 * k), k).unwrap();
        let id = TransferMatrix::identity(k);
        assert!(close(m.m11(), id.m11(), 1e-15) && close(m.m22(), id.m22(), 1e-15));
        assert!(m.m12().norm() < 1e-15 && m.m21().norm() < 1e-15);
        assert!(matches!(
            asymptotic_matrix_from_solutions(&sol, c(0.0, 0.0), k),
            Err(Error::DegenerateSolutions(_))
        ));
    }
}
