//! Localization and spectral observables on finite chains.

use std::f64::consts::PI;

use crate::canonical::CanonicalModel;
use crate::chain::{StateTrajectory, WireSequence};
use crate::models::{ModelFamily, TightBinding};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LyapunovMethod {
    FromTransmission,
    FromState,
    Complex,
    ThermodynamicLimit,
}

impl LyapunovMethod {
    pub fn tag(self) -> &'static str {
        match self {
            Self::FromTransmission => "from-T",
            Self::FromState => "from-state",
            Self::Complex => "complex",
            Self::ThermodynamicLimit => "tl",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LyapunovEstimate {
    pub lambda: f64,
    /// Localization length `1/λ`; infinite when `λ = 0`.
    pub xi: f64,
    pub n_sites: usize,
    pub method: LyapunovMethod,
}

impl LyapunovEstimate {
    pub(crate) fn new(lambda: f64, n_sites: usize, method: LyapunovMethod) -> Self {
        Self {
            lambda,
            xi: lambda.recip(),
            n_sites,
            method,
        }
    }
}

/// `λ = −log T / (2n)`.
pub fn lyapunov_from_transmission(t: f64, n: usize) -> Result<LyapunovEstimate> {
    if !(t <= 1.0) || t < 0.0 || n == 0 {
        return Err(Error::InvalidInput(format!(
            "need T in (0, 1] and n ≥ 1, got T={t}, n={n}"
        )));
    }
    if t == 0.0 {
        return Err(Error::ZeroTransmission);
    }
    lyapunov_from_log_transmission(t.ln(), n)
}

/// Same as [`lyapunov_from_transmission`] from an accumulated `log T`.
pub fn lyapunov_from_log_transmission(log_t: f64, n: usize) -> Result<LyapunovEstimate> {
    if n == 0 || log_t.is_nan() {
        return Err(Error::InvalidInput(format!(
            "need n ≥ 1 and a finite log T, got {log_t}, n={n}"
        )));
    }
    let lambda = (-log_t / (2.0 * n as f64)).max(0.0);
    Ok(LyapunovEstimate::new(lambda, n, LyapunovMethod::FromTransmission))
}

/// Growth rate of the hard-wall state, `(1/N) log sqrt(Ψ_{N+1}² + Ψ_N²)`;
/// this is always the largest exponent.
pub fn lyapunov_from_state(traj: &StateTrajectory) -> LyapunovEstimate {
    let n = traj.n_sites();
    let lambda = if n == 0 {
        0.0
    } else {
        (traj.log_radius() / n as f64).max(0.0)
    };
    LyapunovEstimate::new(lambda, n, LyapunovMethod::FromState)
}

/// `(re, im)` of the complex exponent: `re` as in [`lyapunov_from_state`],
/// `im = π ×` the fraction of sites after which the state changes sign.
///
/// For tight-binding chains (`J = E − ε`) a sign change follows every site
/// below the band and none above it.
pub fn complex_lyapunov(traj: &StateTrajectory) -> (f64, f64) {
    let n = traj.n_sites();
    if n == 0 {
        return (0.0, 0.0);
    }
    let changes: usize = traj.sign_changes().iter().sum();
    (lyapunov_from_state(traj).lambda, PI * changes as f64 / n as f64)
}

/// `Σ|Ψ|⁴ / (Σ|Ψ|²)²`.
pub fn ipr(amplitudes: &[f64]) -> Result<f64> {
    let top = amplitudes.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    if top == 0.0 || !top.is_finite() {
        return Err(Error::ZeroState);
    }
    let (mut s2, mut s4) = (0.0, 0.0);
    for v in amplitudes {
        let u = (v / top).powi(2);
        s2 += u;
        s4 += u * u;
    }
    Ok(s4 / (s2 * s2))
}

/// IPR from `log |Ψ_j|`, for states too large to hold directly.
pub fn ipr_from_log_amplitudes(log_abs: &[f64]) -> Result<f64> {
    let top = log_abs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        return Err(Error::ZeroState);
    }
    let scaled: Vec<f64> = log_abs.iter().map(|l| (l - top).exp()).collect();
    ipr(&scaled)
}

/// Sign-change counts of the hard-wall state at one energy.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeCountTally {
    pub energy: f64,
    /// Sign changes after sites of each species (first and last sites excluded).
    pub sign_changes: Vec<usize>,
    pub sites_per_species: Vec<usize>,
    pub n_sites: usize,
}

impl NodeCountTally {
    /// `𝒩_α`: sign changes after `α` sites per site of the chain.
    pub fn concentration(&self, species: usize) -> f64 {
        self.sign_changes[species] as f64 / self.n_sites as f64
    }

    /// Total fraction of sites followed by a sign change, `Σ_α 𝒩_α`.
    pub fn idos(&self) -> f64 {
        self.sign_changes.iter().sum::<usize>() as f64 / self.n_sites as f64
    }
}

/// Counts sign changes with the ratio recursion `s ← J − r/s`, which never
/// overflows: `s = ∞` steps to `J`, `s = 0` steps to `−sgn(r)·∞`, and `s < 0`
/// is a sign change.
pub fn node_count(model: &CanonicalModel, seq: &WireSequence) -> Result<NodeCountTally> {
    let ns = model.species_count();
    let species = seq.species();
    let n = species.len();
    if let Some(&bad) = species.iter().find(|&&s| s >= ns) {
        return Err(Error::InvalidInput(format!(
            "sequence uses species {bad}, model has {ns}"
        )));
    }
    let mut sign_changes = vec![0usize; ns];
    let mut sites_per_species = vec![0usize; ns];
    let mut s = f64::INFINITY;
    for (j, &c) in species.iter().enumerate() {
        sites_per_species[c] += 1;
        let p = if j == 0 { c } else { species[j - 1] };
        let jj = model.j(p, c);
        let r = model.k_ratio(p, c);
        s = if s.is_infinite() {
            jj
        } else if s == 0.0 {
            -r.signum() * f64::INFINITY
        } else {
            jj - r / s
        };
        if s < 0.0 && j > 0 && j + 1 < n {
            sign_changes[c] += 1;
        }
    }
    Ok(NodeCountTally {
        energy: model.energy(),
        sign_changes,
        sites_per_species,
        n_sites: n,
    })
}

/// One row of a node-counting DOS scan.
#[derive(Debug, Clone, PartialEq)]
pub struct DosPoint {
    pub energy: f64,
    pub g: f64,
    pub idos: f64,
}

/// `g(E) = |Σ_α sgn K(α) d𝒩_α/dE|` on a frozen chain, by central differences
/// of half-width `delta_e`. Falls back to a one-sided difference when the
/// neighbour on one side is singular or has a different `sgn K`.
pub fn node_count_dos(
    family: &dyn ModelFamily,
    seq: &WireSequence,
    energies: &[f64],
    delta_e: f64,
) -> Result<Vec<DosPoint>> {
    if !(delta_e > 0.0) {
        return Err(Error::InvalidInput(format!("delta_e must be positive, got {delta_e}")));
    }
    energies
        .iter()
        .map(|&e| node_count_dos_point(family, seq, e, delta_e))
        .collect()
}

pub fn node_count_dos_point(
    family: &dyn ModelFamily,
    seq: &WireSequence,
    energy: f64,
    delta_e: f64,
) -> Result<DosPoint> {
    if seq.is_empty() {
        return Err(Error::InvalidInput("empty chain".into()));
    }
    let centre_model = family.at_energy(energy)?;
    let centre = node_count(&centre_model, seq)?;
    let signs: Vec<f64> = (0..centre_model.species_count())
        .map(|s| centre_model.k_sign(s))
        .collect();
    let side = |e: f64| -> Option<NodeCountTally> {
        let m = family.at_energy(e).ok()?;
        let same = (0..m.species_count()).all(|s| m.k_sign(s) == signs[s]);
        if same {
            node_count(&m, seq).ok()
        } else {
            None
        }
    };
    let weighted =
        |t: &NodeCountTally| -> f64 { signs.iter().enumerate().map(|(s, sg)| sg * t.concentration(s)).sum() };
    let (lo, hi) = (side(energy - delta_e), side(energy + delta_e));
    let deriv = match (&lo, &hi) {
        (Some(l), Some(h)) => (weighted(h) - weighted(l)) / (2.0 * delta_e),
        (None, Some(h)) => (weighted(h) - weighted(&centre)) / delta_e,
        (Some(l), None) => (weighted(&centre) - weighted(l)) / delta_e,
        (None, None) => return Err(Error::SingularK { species: 0, energy }),
    };
    Ok(DosPoint {
        energy,
        g: deriv.abs(),
        idos: centre.idos(),
    })
}

/// Both exponents of the product of `[[J, −r], [1, 0]]` steps, from
/// Gram–Schmidt reorthonormalization at every step.
pub fn lyapunov_pair(model: &CanonicalModel, seq: &WireSequence) -> Result<(f64, f64)> {
    let species = seq.species();
    if species.is_empty() {
        return Err(Error::InvalidInput("empty chain".into()));
    }
    let (mut u, mut v) = ([1.0_f64, 0.0], [0.0_f64, 1.0]);
    let (mut l1, mut l2) = (0.0, 0.0);
    for (j, &c) in species.iter().enumerate() {
        let p = if j == 0 { c } else { species[j - 1] };
        let (jj, r) = (model.j(p, c), model.k_ratio(p, c));
        let step = |w: [f64; 2]| [jj * w[0] - r * w[1], w[0]];
        u = step(u);
        v = step(v);
        let nu = u[0].hypot(u[1]);
        u = [u[0] / nu, u[1] / nu];
        let proj = u[0] * v[0] + u[1] * v[1];
        v = [v[0] - proj * u[0], v[1] - proj * u[1]];
        let nv = v[0].hypot(v[1]);
        v = [v[0] / nv, v[1] / nv];
        l1 += nu.ln();
        l2 += nv.ln();
    }
    let n = species.len() as f64;
    Ok((l1 / n, l2 / n))
}

/// `(1/N) log |det(P_N ⋯ P_1)|` with `det P_j = K(γ_j)/K(γ_{j−1})`.
pub fn log_det_rate(model: &CanonicalModel, seq: &WireSequence) -> f64 {
    let species = seq.species();
    if species.is_empty() {
        return 0.0;
    }
    let sum: f64 = species.windows(2).map(|w| model.k_ratio(w[0], w[1]).abs().ln()).sum();
    sum / species.len() as f64
}

/// Number of eigenvalues below `x` of the hard-wall tight-binding Hamiltonian
/// with diagonal `eps` and unit hopping.
pub fn sturm_count(eps: &[f64], x: f64) -> usize {
    let mut count = 0;
    let mut d = 1.0;
    for (j, &e) in eps.iter().enumerate() {
        d = if j == 0 { e - x } else { e - x - 1.0 / d };
        if d == 0.0 {
            d = -f64::EPSILON;
        }
        if d < 0.0 {
            count += 1;
        }
    }
    count
}

#[derive(Debug, Clone, PartialEq)]
pub struct Eigenstate {
    pub energy: f64,
    /// Unit-norm amplitudes on sites `1..=N`.
    pub amplitudes: Vec<f64>,
}

/// Site energies of a tight-binding wire.
pub fn site_energies(model: &TightBinding, seq: &WireSequence) -> Result<Vec<f64>> {
    let eps = model.epsilons();
    seq.species()
        .iter()
        .map(|&s| {
            eps.get(s)
                .copied()
                .ok_or_else(|| Error::InvalidInput(format!("species {s} not in model")))
        })
        .collect()
}

/// The lowest eigenstate with energy `≥ target` of the hard-wall
/// tight-binding Hamiltonian; bisection on the Sturm count, then inverse
/// iteration.
pub fn tight_binding_eigenstate(eps: &[f64], target: f64) -> Result<Eigenstate> {
    let n = eps.len();
    if n == 0 {
        return Err(Error::InvalidInput("empty chain".into()));
    }
    let bound = eps.iter().fold(0.0_f64, |a, e| a.max(e.abs())) + 2.0;
    let index = sturm_count(eps, target);
    if index == n {
        return Err(Error::InvalidInput(format!("no eigenvalue at or above {target}")));
    }
    // eigenvalue #index (0-based, ascending) lies in [lo, hi)
    let (mut lo, mut hi) = (target.max(-bound) - 1e-12, bound + 1e-12);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if sturm_count(eps, mid) > index {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let energy = 0.5 * (lo + hi);
    let mut x = vec![1.0 / (n as f64).sqrt(); n];
    for _ in 0..4 {
        x = solve_shifted(eps, energy, &x);
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::InvalidInput("inverse iteration failed".into()));
        }
        for v in &mut x {
            *v /= norm;
        }
    }
    Ok(Eigenstate { energy, amplitudes: x })
}

/// Solves `(H − shift) y = b` for the unit-hopping tridiagonal `H` by
/// Gaussian elimination with partial pivoting.
fn solve_shifted(eps: &[f64], shift: f64, b: &[f64]) -> Vec<f64> {
    let n = eps.len();
    let tiny = f64::EPSILON * (eps.iter().fold(0.0_f64, |a, e| a.max(e.abs())) + 2.0);
    // upper factor: diagonal d, superdiagonals u and u2 (fill-in from row swaps)
    let mut d: Vec<f64> = eps.iter().map(|e| e - shift).collect();
    let mut u = vec![1.0; n];
    let mut u2 = vec![0.0; n];
    let mut rhs = b.to_vec();
    for i in 0..n.saturating_sub(1) {
        // sub-diagonal entry below d[i] is 1
        if d[i].abs() >= 1.0 {
            let m = 1.0 / d[i];
            d[i + 1] -= m * u[i];
            rhs[i + 1] -= m * rhs[i];
        } else {
            // swap rows i and i+1: row i+1 is (1, d[i+1], u[i+1])
            let (ri, ri1) = ((d[i], u[i], 0.0), (1.0, d[i + 1], if i + 2 < n { 1.0 } else { 0.0 }));
            let m = ri.0 / ri1.0;
            d[i] = ri1.0;
            u[i] = ri1.1;
            u2[i] = ri1.2;
            d[i + 1] = ri.1 - m * ri1.1;
            u[i + 1] = ri.2 - m * ri1.2;
            rhs.swap(i, i + 1);
            rhs[i + 1] -= m * rhs[i];
        }
    }
    let mut y = vec![0.0; n];
    for i in (0..n).rev() {
        let mut acc = rhs[i];
        if i + 1 < n {
            acc -= u[i] * y[i + 1];
        }
        if i + 2 < n {
            acc -= u2[i] * y[i + 2];
        }
        let piv = if d[i].abs() < tiny { tiny.copysign(d[i]) } else { d[i] };
        y[i] = acc / piv;
    }
    y
}
