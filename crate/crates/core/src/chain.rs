//! Disorder sequences and finite-chain engines.

use std::io::{self, Write};

use num_complex::Complex64;
use rand::{RngExt, SeedableRng};
use rand_pcg::Pcg64;

use crate::canonical::CanonicalModel;
use crate::models::TightBinding;
use crate::xfer::{check_same_wavenumber, ScatteringAmplitudes, TransferMatrix};
use crate::{Error, Result};

/// Generator behind every [`WireSequence`]; reported in output metadata.
pub const RNG_NAME: &str = "pcg64 (PCG XSL-RR 128/64, rand_pcg 0.10)";

const PROB_TOL: f64 = 1e-12;
const RESCALE_EVERY: usize = 32;
const RESCALE_ABOVE: f64 = 1e100;

/// Species concentrations `c_γ` and nearest-neighbour pair probabilities `p_γβ`.
///
/// `p_γβ` is the probability that the site following a `γ` site is a `β`
/// site, so `C_γβ = c_γ p_γβ` is the frequency of the pair `γβ`. The
/// uncorrelated case is `p_γβ = c_β`.
#[derive(Debug, Clone, PartialEq)]
pub struct DisorderSpec {
    concentrations: Vec<f64>,
    pairs: Vec<f64>,
    seed: u64,
}

impl DisorderSpec {
    pub fn uncorrelated(concentrations: Vec<f64>, seed: u64) -> Result<Self> {
        let rows = vec![concentrations.clone(); concentrations.len()];
        Self::correlated(concentrations, rows, seed)
    }

    /// A single species.
    pub fn pure(seed: u64) -> Self {
        Self {
            concentrations: vec![1.0],
            pairs: vec![1.0],
            seed,
        }
    }

    pub fn correlated(concentrations: Vec<f64>, pair_probabilities: Vec<Vec<f64>>, seed: u64) -> Result<Self> {
        let n = concentrations.len();
        let bad = |msg: String| Err(Error::InvalidSpec(msg));
        if n == 0 {
            return bad("no species".into());
        }
        if concentrations.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return bad(format!("concentrations must lie in [0, 1]: {concentrations:?}"));
        }
        let total: f64 = concentrations.iter().sum();
        if (total - 1.0).abs() > PROB_TOL {
            return bad(format!("concentrations sum to {total}, not 1"));
        }
        if pair_probabilities.len() != n || pair_probabilities.iter().any(|r| r.len() != n) {
            return bad(format!("pair-probability table must be {n}×{n}"));
        }
        for (g, row) in pair_probabilities.iter().enumerate() {
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return bad(format!("row {g} of the pair probabilities leaves [0, 1]"));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > PROB_TOL {
                return bad(format!("row {g} of the pair probabilities sums to {s}, not 1"));
            }
        }
        for b in 0..n {
            let inflow: f64 = (0..n).map(|g| concentrations[g] * pair_probabilities[g][b]).sum();
            if (inflow - concentrations[b]).abs() > PROB_TOL {
                return bad(format!(
                    "concentrations are not stationary under the pair probabilities (species {b}: {inflow} vs {})",
                    concentrations[b]
                ));
            }
        }
        Ok(Self {
            concentrations,
            pairs: pair_probabilities.concat(),
            seed,
        })
    }

    pub fn species_count(&self) -> usize {
        self.concentrations.len()
    }

    pub fn concentrations(&self) -> &[f64] {
        &self.concentrations
    }

    pub fn concentration(&self, species: usize) -> f64 {
        self.concentrations[species]
    }

    /// `p_γβ`: probability that `beta` follows `gamma`.
    pub fn pair_probability(&self, gamma: usize, beta: usize) -> f64 {
        self.pairs[gamma * self.species_count() + beta]
    }

    /// Probability that the site preceding a `gamma` site is a `beta` site,
    /// `c_β p_βγ / c_γ`. Equals `p_γβ` whenever `C_γβ = C_βγ`.
    pub fn left_neighbor_probability(&self, gamma: usize, beta: usize) -> f64 {
        let cg = self.concentrations[gamma];
        if cg == 0.0 {
            return self.concentrations[beta];
        }
        self.concentrations[beta] * self.pair_probability(beta, gamma) / cg
    }

    /// `C_γβ = c_γ p_γβ`.
    pub fn pair_frequency(&self, gamma: usize, beta: usize) -> f64 {
        self.concentrations[gamma] * self.pair_probability(gamma, beta)
    }

    pub fn is_uncorrelated(&self) -> bool {
        let n = self.species_count();
        (0..n).all(|g| (0..n).all(|b| (self.pair_probability(g, b) - self.concentrations[b]).abs() <= PROB_TOL))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Species of sites `1..=N` of a wire, in order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WireSequence {
    species: Vec<usize>,
    seed: u64,
}

impl WireSequence {
    /// A sequence given explicitly (no generator involved; seed recorded as 0).
    pub fn from_species(species: Vec<usize>) -> Self {
        Self { species, seed: 0 }
    }

    pub fn species(&self) -> &[usize] {
        &self.species
    }

    pub fn len(&self) -> usize {
        self.species.len()
    }

    pub fn is_empty(&self) -> bool {
        self.species.is_empty()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn prefix(&self, n: usize) -> WireSequence {
        Self {
            species: self.species[..n.min(self.len())].to_vec(),
            seed: self.seed,
        }
    }

    /// One `site species` line per site, sites numbered from 1.
    pub fn write_text<W: Write>(&self, mut out: W) -> io::Result<()> {
        for (i, s) in self.species.iter().enumerate() {
            writeln!(out, "{} {}", i + 1, s)?;
        }
        Ok(())
    }
}

fn draw(rng: &mut Pcg64, probabilities: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probabilities.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

/// Draws `n` sites: the first from `c`, each successor from the row `p_{γ_j ·}`.
/// Deterministic in `(spec, n)`.
pub fn generate_sequence(spec: &DisorderSpec, n: usize) -> Result<WireSequence> {
    let k = spec.species_count();
    let mut rng = Pcg64::seed_from_u64(spec.seed);
    let mut species = Vec::with_capacity(n);
    if n > 0 {
        let mut cur = draw(&mut rng, &spec.concentrations);
        species.push(cur);
        for _ in 1..n {
            cur = draw(&mut rng, &spec.pairs[cur * k..(cur + 1) * k]);
            species.push(cur);
        }
    }
    Ok(WireSequence {
        species,
        seed: spec.seed,
    })
}

/// Hard-wall solution `Ψ_0 = 0`, `Ψ_1 = 1` propagated through a wire.
///
/// Amplitudes are kept rescaled; logarithms are exact up to rounding.
/// Sign changes are tallied per species of the site they follow, excluding
/// the first and last sites. A zero amplitude carries the sign of its
/// predecessor.
#[derive(Debug, Clone, PartialEq)]
pub struct StateTrajectory {
    n_sites: usize,
    log_radius: f64,
    log_last: f64,
    phase: f64,
    signs: Vec<i8>,
    sign_changes: Vec<usize>,
    sites_per_species: Vec<usize>,
    log_abs: Option<Vec<f64>>,
}

impl StateTrajectory {
    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    /// `log sqrt(Ψ_{N+1}² + Ψ_N²)`.
    pub fn log_radius(&self) -> f64 {
        self.log_radius
    }

    /// `log |Ψ_{N+1}|`.
    pub fn log_last(&self) -> f64 {
        self.log_last
    }

    /// Phase of `(Ψ_{N+1}, Ψ_N)` in `[0, π)`.
    pub fn phase(&self) -> f64 {
        self.phase
    }

    /// Effective signs of `Ψ_1 ..= Ψ_{N+1}`.
    pub fn signs(&self) -> &[i8] {
        &self.signs
    }

    pub fn sign_changes(&self) -> &[usize] {
        &self.sign_changes
    }

    pub fn sites_per_species(&self) -> &[usize] {
        &self.sites_per_species
    }

    /// `log |Ψ_j|` for `j = 1..=N`, when requested.
    pub fn log_amplitudes(&self) -> Option<&[f64]> {
        self.log_abs.as_deref()
    }

    /// `Ψ_j / max_j |Ψ_j|` for `j = 1..=N`, when amplitudes were stored.
    pub fn normalized_amplitudes(&self) -> Option<Vec<f64>> {
        let logs = self.log_abs.as_ref()?;
        let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Some(
            logs.iter()
                .zip(&self.signs)
                .map(|(&l, &s)| f64::from(s) * (l - top).exp())
                .collect(),
        )
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PropagationOptions {
    pub store_amplitudes: bool,
}

pub fn propagate_canonical(
    model: &CanonicalModel,
    seq: &WireSequence,
    opts: PropagationOptions,
) -> Result<StateTrajectory> {
    propagate_with_interval(model, seq, opts, RESCALE_EVERY)
}

pub(crate) fn propagate_with_interval(
    model: &CanonicalModel,
    seq: &WireSequence,
    opts: PropagationOptions,
    interval: usize,
) -> Result<StateTrajectory> {
    let n = seq.len();
    let ns = model.species_count();
    let species = seq.species();
    if let Some(&bad) = species.iter().find(|&&s| s >= ns) {
        return Err(Error::InvalidInput(format!(
            "sequence uses species {bad}, model has {ns}"
        )));
    }
    let mut sites_per_species = vec![0usize; ns];
    for &s in species {
        sites_per_species[s] += 1;
    }
    let mut sign_changes = vec![0usize; ns];
    let mut signs = Vec::with_capacity(n + 1);
    let mut log_abs = opts.store_amplitudes.then(|| Vec::with_capacity(n));

    // (cur, prev) = (Ψ_j, Ψ_{j-1}) · e^{-log_scale}
    let (mut cur, mut prev) = (1.0_f64, 0.0_f64);
    let mut log_scale = 0.0;
    let mut sign: i8 = 1;
    if n > 0 {
        signs.push(sign);
    }
    for j in 0..n {
        if let Some(v) = log_abs.as_mut() {
            v.push(cur.abs().ln() + log_scale);
        }
        let c = species[j];
        let p = if j == 0 { c } else { species[j - 1] };
        let next = model.j(p, c) * cur - model.k_ratio(p, c) * prev;
        if !next.is_finite() {
            return Err(Error::Overflow(next));
        }
        let next_sign = if next > 0.0 {
            1
        } else if next < 0.0 {
            -1
        } else {
            sign
        };
        if next_sign != sign && j > 0 && j + 1 < n {
            sign_changes[c] += 1;
        }
        sign = next_sign;
        signs.push(sign);
        prev = cur;
        cur = next;
        let m = cur.abs().max(prev.abs());
        if ((j + 1) % interval == 0 || m > RESCALE_ABOVE) && m > 0.0 {
            cur /= m;
            prev /= m;
            log_scale += m.ln();
        }
    }
    let (log_radius, log_last, phase) = if n == 0 {
        (0.0, 0.0, 0.0)
    } else {
        let r = cur.hypot(prev);
        let mut phase = prev.atan2(cur);
        if phase < 0.0 {
            phase += std::f64::consts::PI;
        }
        if phase >= std::f64::consts::PI {
            phase -= std::f64::consts::PI;
        }
        (r.ln() + log_scale, cur.abs().ln() + log_scale, phase)
    };
    Ok(StateTrajectory {
        n_sites: n,
        log_radius,
        log_last,
        phase,
        signs,
        sign_changes,
        sites_per_species,
        log_abs,
    })
}

/// Transmission through a chain of unimodular steps `[[J_lead + δ_j, -1], [1, 0]]`
/// embedded between two ideal leads whose step is `J_lead = 2 cos q`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatticeTransmission {
    pub sites: usize,
    pub log_transmission: f64,
    pub reflection: f64,
}

impl LatticeTransmission {
    pub fn transmission(&self) -> f64 {
        self.log_transmission.exp()
    }

    /// `log |t|`.
    pub fn log_abs_t(&self) -> f64 {
        0.5 * self.log_transmission
    }
}

/// Evaluates the transmission after each of `checkpoints` steps (ascending);
/// the last checkpoint bounds how much of `detunings` is consumed.
///
/// The product is accumulated in the plane-wave basis of the leads, where a
/// step with `δ = 0` is the exact phase `diag(e^{iq}, e^{-iq})`; this keeps
/// nearly free chains accurate at small `q`.
pub fn lattice_transmission<I>(detunings: I, lead_j: f64, checkpoints: &[usize]) -> Result<Vec<LatticeTransmission>>
where
    I: IntoIterator<Item = f64>,
{
    if !(lead_j.abs() < 2.0) {
        return Err(Error::InvalidInput(format!(
            "lead step {lead_j} has no propagating waves (need |J| < 2)"
        )));
    }
    lattice_transmission_q(detunings, (lead_j / 2.0).acos(), checkpoints)
}

/// As [`lattice_transmission`] with the lead wavenumber `q ∈ (0, π)` given directly.
fn lattice_transmission_q<I>(detunings: I, q: f64, checkpoints: &[usize]) -> Result<Vec<LatticeTransmission>>
where
    I: IntoIterator<Item = f64>,
{
    if checkpoints.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidInput("checkpoints must be ascending".into()));
    }
    let z = Complex64::from_polar(1.0, q);
    let zb = z.conj();
    // B⁻¹ E₁₁ B with B = [[z, z̄], [1, 1]]
    let w = Complex64::new(0.0, 2.0 * q.sin()).inv();
    let (c1, c2) = (z * w, zb * w);
    let evaluate = |m: &[Complex64; 4], log_scale: f64, sites: usize| -> Result<LatticeTransmission> {
        let m22 = m[3];
        let n22 = m22.norm();
        if !(n22 > 0.0 && n22.is_finite()) {
            return Err(Error::UnstableProduct);
        }
        Ok(LatticeTransmission {
            sites,
            log_transmission: -2.0 * (n22.ln() + log_scale),
            reflection: (m[2] / m22).norm_sqr(),
        })
    };

    let one = Complex64::new(1.0, 0.0);
    let zero = Complex64::new(0.0, 0.0);
    let mut out = Vec::with_capacity(checkpoints.len());
    let mut m = [one, zero, zero, one];
    let mut log_scale = 0.0;
    let mut next_cp = checkpoints.iter().peekable();
    while next_cp.peek() == Some(&&0) {
        out.push(evaluate(&m, log_scale, 0)?);
        next_cp.next();
    }
    let Some(&last) = checkpoints.last() else {
        return Ok(out);
    };
    for (i, d) in detunings.into_iter().take(last).enumerate() {
        // step = [[z + d c1, d c2], [-d c1, z̄ - d c2]]
        let (s11, s12, s21, s22) = (z + d * c1, d * c2, -d * c1, zb - d * c2);
        m = [
            s11 * m[0] + s12 * m[2],
            s11 * m[1] + s12 * m[3],
            s21 * m[0] + s22 * m[2],
            s21 * m[1] + s22 * m[3],
        ];
        let big = m.iter().fold(0.0_f64, |a, v| a.max(v.norm()));
        if !big.is_finite() {
            return Err(Error::UnstableProduct);
        }
        if big > RESCALE_ABOVE || (i + 1) % RESCALE_EVERY == 0 {
            for v in &mut m {
                *v /= big;
            }
            log_scale += big.ln();
        }
        while next_cp.peek() == Some(&&(i + 1)) {
            out.push(evaluate(&m, log_scale, i + 1)?);
            next_cp.next();
        }
    }
    if next_cp.peek().is_some() {
        return Err(Error::InvalidInput("checkpoint beyond the end of the chain".into()));
    }
    Ok(out)
}

/// `(T, R)` of a sampled potential from the discretized Schrödinger equation
/// `ψ_{n+1} = [(V_n − k²)Δx² + 2] ψ_n − ψ_{n−1}`, with `V = 0` outside the samples.
///
/// Asymptotic plane waves are imposed with the lattice wavenumber
/// `q = arccos(1 − (kΔx)²/2)`, the exact free solution of the discrete
/// equation, so `T + R = 1` holds to rounding; `q = kΔx + O((kΔx)³)`.
pub fn transmission_discretized(potential_samples: &[f64], dx: f64, k: f64) -> Result<(f64, f64)> {
    if !(dx > 0.0 && k > 0.0 && dx.is_finite() && k.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "need dx > 0 and k > 0, got dx={dx}, k={k}"
        )));
    }
    if !(k * dx < 2.0) {
        return Err(Error::InvalidInput(format!(
            "k·dx = {} does not resolve the wave (need < 2)",
            k * dx
        )));
    }
    // 2 − (kΔx)² = 2 cos q, written to avoid cancellation at small kΔx
    let q = 2.0 * (0.5 * k * dx).asin();
    let dx2 = dx * dx;
    let res = lattice_transmission_q(potential_samples.iter().map(|v| v * dx2), q, &[potential_samples.len()])?;
    let r = res[0];
    Ok((r.transmission(), r.reflection))
}

/// Samples of a square barrier of `height` on `[0, width]` at spacing `dx`;
/// the two edge samples take the mid value `height / 2`.
pub fn square_barrier_samples(height: f64, width: f64, dx: f64) -> Vec<f64> {
    let m = (width / dx).round() as usize;
    (0..=m)
        .map(|i| if i == 0 || i == m { 0.5 * height } else { height })
        .collect()
}

/// Scattering of a chain of continuous transfer matrices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainTransmission {
    /// Amplitudes; `t` underflows to zero for very opaque chains.
    pub amplitudes: ScatteringAmplitudes,
    pub log_abs_t: f64,
}

impl ChainTransmission {
    pub fn transmission(&self) -> f64 {
        (2.0 * self.log_abs_t).exp()
    }

    pub fn reflection(&self) -> f64 {
        self.amplitudes.r_left.norm_sqr()
    }
}

/// Scattering amplitudes of `M_{N-1} ⋯ M_0` (element 0 applied first), with
/// the product rescaled as it grows.
pub fn transmission_matrix_chain(ms: &[TransferMatrix]) -> Result<ChainTransmission> {
    let (first, _) = ms
        .split_first()
        .ok_or_else(|| Error::InvalidInput("empty chain".into()))?;
    let mut acc = TransferMatrix::identity(first.k());
    let mut log_scale = 0.0;
    for (i, m) in ms.iter().enumerate() {
        check_same_wavenumber(first.k(), m.k())?;
        acc = *m * acc;
        let big = acc.max_abs();
        if !big.is_finite() {
            return Err(Error::UnstableProduct);
        }
        if big > RESCALE_ABOVE || (i + 1) % RESCALE_EVERY == 0 {
            acc = acc.scale(Complex64::new(1.0 / big, 0.0));
            log_scale += big.ln();
        }
    }
    let m22 = acc.m22();
    if !(m22.norm() >= 1e-300) {
        return Err(Error::SingularMatrix(m22.norm()));
    }
    let log_abs_t = -m22.norm().ln() - log_scale;
    let t = m22.inv() * (-log_scale).exp();
    Ok(ChainTransmission {
        amplitudes: ScatteringAmplitudes {
            t,
            r_left: -acc.m21() / m22,
            r_right: acc.m12() / m22,
        },
        log_abs_t,
    })
}

/// Transmission of a tight-binding segment between ideal `ε = 0` leads,
/// evaluated after each checkpoint length. Needs `|E| < 2`.
pub fn tight_binding_transmission(
    model: &TightBinding,
    seq: &WireSequence,
    energy: f64,
    checkpoints: &[usize],
) -> Result<Vec<LatticeTransmission>> {
    let eps = model.epsilons();
    if let Some(&bad) = seq.species().iter().find(|&&s| s >= eps.len()) {
        return Err(Error::InvalidInput(format!(
            "sequence uses species {bad}, model has {}",
            eps.len()
        )));
    }
    lattice_transmission(seq.species().iter().map(|&s| -eps[s]), energy, checkpoints)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{tb_model, ModelFamily, TightBindingSpecies};

    #[test]
    fn pure_concentration_gives_single_species() {
        let spec = DisorderSpec::uncorrelated(vec![1.0, 0.0], 9).unwrap();
        assert!(generate_sequence(&spec, 1000)
            .unwrap()
            .species()
            .iter()
            .all(|&s| s == 0));
    }

    #[test]
    fn absorbing_rows_freeze_the_sequence() {
        let spec = DisorderSpec::correlated(vec![0.5, 0.5], vec![vec![1.0, 0.0], vec![0.0, 1.0]], 4).unwrap();
        for seed in 0..20 {
            let seq = generate_sequence(&spec.clone().with_seed(seed), 500).unwrap();
            let first = seq.species()[0];
            assert!(seq.species().iter().all(|&s| s == first));
        }
    }

    #[test]
    fn spec_validation() {
        assert!(DisorderSpec::uncorrelated(vec![0.5, 0.6], 0).is_err());
        assert!(DisorderSpec::correlated(vec![0.5, 0.5], vec![vec![0.9, 0.2], vec![0.5, 0.5]], 0).is_err());
        // rows fine, but (0.5, 0.5) is not stationary for these rows
        let err = DisorderSpec::correlated(vec![0.5, 0.5], vec![vec![0.9, 0.1], vec![0.5, 0.5]], 0).unwrap_err();
        assert!(matches!(err, Error::InvalidSpec(_)));
        let ok = DisorderSpec::correlated(vec![0.25, 0.75], vec![vec![0.4, 0.6], vec![0.2, 0.8]], 0).unwrap();
        assert!((ok.left_neighbor_probability(0, 1) - 0.6).abs() < 1e-15);
        assert!(!ok.is_uncorrelated());
        assert!(DisorderSpec::uncorrelated(vec![0.3, 0.7], 1).unwrap().is_uncorrelated());
    }

    #[test]
    fn sequence_is_deterministic() {
        let spec = DisorderSpec::uncorrelated(vec![0.3, 0.7], 1234).unwrap();
        let a = generate_sequence(&spec, 10_000).unwrap();
        let b = generate_sequence(&spec, 10_000).unwrap();
        assert_eq!(a, b);
        let c = generate_sequence(&spec.with_seed(1235), 10_000).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn sequence_text_export() {
        let seq = WireSequence::from_species(vec![1, 0, 1]);
        let mut buf = Vec::new();
        seq.write_text(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "1 1\n2 0\n3 1\n");
    }

    fn tb(eps: f64, energy: f64) -> CanonicalModel {
        tb_model(&[TightBindingSpecies { epsilon: eps }], energy).unwrap()
    }

    #[test]
    fn band_center_period_four() {
        let seq = WireSequence::from_species(vec![0; 8]);
        let traj = propagate_canonical(&tb(0.0, 0.0), &seq, PropagationOptions { store_amplitudes: true }).unwrap();
        let amps = traj.normalized_amplitudes().unwrap();
        let expect = [1.0, 0.0, -1.0, 0.0, 1.0, 0.0, -1.0, 0.0];
        for (a, e) in amps.iter().zip(expect) {
            assert!((a - e).abs() < 1e-15);
        }
        assert_eq!(traj.signs(), &[1, 1, -1, -1, 1, 1, -1, -1, 1]);
    }

    #[test]
    fn free_chain_chebyshev_pattern() {
        let ka = 0.9_f64;
        let seq = WireSequence::from_species(vec![0; 50]);
        let traj = propagate_canonical(
            &tb(0.0, 2.0 * ka.cos()),
            &seq,
            PropagationOptions { store_amplitudes: true },
        )
        .unwrap();
        for (j, l) in traj.log_amplitudes().unwrap().iter().enumerate() {
            let exact = ((j + 1) as f64 * ka).sin().abs() / ka.sin();
            assert!((l.exp() - exact).abs() < 1e-12, "site {}", j + 1);
        }
    }

    #[test]
    fn rescaled_log_matches_direct_recursion() {
        let spec = DisorderSpec::uncorrelated(vec![0.5, 0.5], 77).unwrap();
        let model = crate::models::TightBinding::binary(1.0).at_energy(0.3).unwrap();
        let seq = generate_sequence(&spec, 1000).unwrap();
        let traj = propagate_canonical(&model, &seq, PropagationOptions::default()).unwrap();
        let (mut cur, mut prev) = (1.0_f64, 0.0_f64);
        for (j, &c) in seq.species().iter().enumerate() {
            let p = if j == 0 { c } else { seq.species()[j - 1] };
            let next = model.j(p, c) * cur - model.k_ratio(p, c) * prev;
            prev = cur;
            cur = next;
        }
        assert!(cur.is_finite());
        let direct = cur.abs().ln();
        assert!((traj.log_last() - direct).abs() < 1e-8 * direct.abs().max(1.0));
    }

    #[test]
    fn rescale_interval_does_not_matter() {
        let spec = DisorderSpec::uncorrelated(vec![0.5, 0.5], 5).unwrap();
        let model = crate::models::TightBinding::binary(2.0).at_energy(2.5).unwrap();
        let seq = generate_sequence(&spec, 20_000).unwrap();
        let reference = propagate_with_interval(&model, &seq, PropagationOptions::default(), 32).unwrap();
        for interval in [1, 7, 128] {
            let t = propagate_with_interval(&model, &seq, PropagationOptions::default(), interval).unwrap();
            assert!((t.log_radius() - reference.log_radius()).abs() < 1e-10 * reference.log_radius().abs());
            assert_eq!(t.sign_changes(), reference.sign_changes());
        }
    }

    #[test]
    fn long_chain_stays_finite() {
        let spec = DisorderSpec::uncorrelated(vec![0.5, 0.5], 1).unwrap();
        let model = crate::models::TightBinding::binary(3.0).at_energy(5.5).unwrap();
        let seq = generate_sequence(&spec, 1_000_000).unwrap();
        let traj = propagate_canonical(&model, &seq, PropagationOptions::default()).unwrap();
        assert!(traj.log_radius().is_finite() && traj.log_radius() > 1e5);
    }

    #[test]
    fn zero_potential_is_transparent() {
        for k in [0.3, 1.0, 2.0] {
            let (t, r) = transmission_discretized(&vec![0.0; 5000], 1e-3, k).unwrap();
            assert!((t - 1.0).abs() < 1e-10 && r < 1e-10);
        }
    }

    #[test]
    fn random_potentials_conserve_flux() {
        let mut rng = Pcg64::seed_from_u64(8);
        for _ in 0..100 {
            let n = rng.random_range(10..3000);
            let samples: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..4.0)).collect();
            let k = rng.random_range(0.2..3.0);
            let (t, r) = transmission_discretized(&samples, 2e-3, k).unwrap();
            assert!((t + r - 1.0).abs() < 1e-9, "T+R = {}", t + r);
        }
    }

    #[test]
    fn discretized_input_validation() {
        assert!(transmission_discretized(&[0.0], 0.0, 1.0).is_err());
        assert!(transmission_discretized(&[0.0], 1.0, 2.5).is_err());
    }

    #[test]
    fn identity_chain_transmits() {
        let ms = vec![TransferMatrix::identity(1.0); 100];
        let res = transmission_matrix_chain(&ms).unwrap();
        assert!((res.amplitudes.t - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        assert_eq!(res.log_abs_t, 0.0);
    }

    #[test]
    fn two_delta_units_match_composition_rule() {
        let m = TransferMatrix::delta(1.0, 2.0);
        let chain = transmission_matrix_chain(&[m, m]).unwrap();
        let s = crate::xfer::scattering_amplitudes(&m).unwrap();
        let pair = crate::xfer::compose_scattering(&s, &s).unwrap();
        assert!((chain.amplitudes.t - pair.t).norm() < 1e-12);
        assert!((chain.amplitudes.r_left - pair.r_left).norm() < 1e-12);
        assert!((chain.amplitudes.r_right - pair.r_right).norm() < 1e-12);
    }

    #[test]
    fn ordered_chain_follows_bloch_oscillation() {
        // For a unit cell in SU(1,1) with tr M = 2cos φ:
        // (M^N)_12 = β sin(Nφ)/sin φ and T_N = 1 / (1 + |β|² sin²(Nφ)/sin²φ).
        let k = 1.1;
        let cell = TransferMatrix::free(k, 1.0) * TransferMatrix::delta(k, 0.8);
        let half_trace = cell.m11().re;
        assert!(half_trace.abs() < 1.0, "energy must be in an allowed band");
        let phi = half_trace.acos();
        let beta2 = cell.m12().norm_sqr();
        for n in [1usize, 2, 7, 50, 333, 1000] {
            let res = transmission_matrix_chain(&vec![cell; n]).unwrap();
            let oracle = 1.0 / (1.0 + beta2 * (n as f64 * phi).sin().powi(2) / phi.sin().powi(2));
            assert!((res.transmission() - oracle).abs() < 1e-9, "N={n}");
            assert!(res.transmission() >= 1.0 / (1.0 + beta2 / phi.sin().powi(2)) - 1e-12);
        }
    }

    #[test]
    fn lattice_transmission_checkpoints() {
        let res = lattice_transmission(std::iter::repeat(0.0), 0.5, &[0, 10, 10, 100]).unwrap();
        assert_eq!(res.len(), 4);
        for r in &res {
            assert!(
                r.log_transmission.abs() < 1e-12,
                "ordered chain equal to the lead is transparent"
            );
        }
        assert!(lattice_transmission(std::iter::repeat(0.0), 2.5, &[1]).is_err());
        assert!(lattice_transmission([0.0; 3], 0.5, &[5]).is_err());
    }

    #[test]
    fn single_impurity_closed_form() {
        // one site of energy ε in a free chain: T = 4 sin²q / (4 sin²q + ε²)
        let tb = TightBinding::new(&[0.7]).unwrap();
        let seq = WireSequence::from_species(vec![0]);
        for e in [-1.5, -0.2, 0.9, 1.7] {
            let q: f64 = (e / 2.0_f64).acos();
            let s2 = 4.0 * q.sin().powi(2);
            let r = tight_binding_transmission(&tb, &seq, e, &[1]).unwrap()[0];
            assert!((r.transmission() - s2 / (s2 + 0.49)).abs() < 1e-13);
            assert!((r.transmission() + r.reflection - 1.0).abs() < 1e-13);
        }
    }

    fn barrier_error(dx: f64) -> f64 {
        let (e, v0, width) = (2.0_f64, 1.0, 2.0);
        let kp = (e - v0).sqrt();
        let exact = 1.0 / (1.0 + v0 * v0 * (kp * width).sin().powi(2) / (4.0 * e * (e - v0)));
        let (t, _) = transmission_discretized(&square_barrier_samples(v0, width, dx), dx, e.sqrt()).unwrap();
        (t - exact).abs()
    }

    #[test]
    fn square_barrier_converges_quadratically() {
        let (e1, e2) = (barrier_error(4e-3), barrier_error(2e-3));
        assert!(e2 < 1e-3);
        let ratio = e1 / e2;
        assert!((3.0..5.0).contains(&ratio), "ratio {ratio}, errors {e1} {e2}");
    }
}
