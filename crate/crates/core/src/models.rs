//! Concrete potential families.

use crate::canonical::CanonicalModel;
use crate::xfer::TransferMatrix;
use crate::{Error, Result};

/// An energy-dependent family of canonical models over a fixed species set.
pub trait ModelFamily: Send + Sync {
    fn species_count(&self) -> usize;

    /// The canonical coefficients at `energy`; fails with
    /// [`Error::SingularK`] where some `K` vanishes.
    fn at_energy(&self, energy: f64) -> Result<CanonicalModel>;

    fn gap_condition(&self, energy: f64) -> Result<bool> {
        Ok(self.at_energy(energy)?.in_gap())
    }
}

/// One tight-binding site with on-site energy `epsilon`; transfer integrals are 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TightBindingSpecies {
    pub epsilon: f64,
}

/// `u_{j+1} = (E − ε_j) u_j − u_{j−1}`: `J = E − ε_γ`, `K ≡ 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct TightBinding {
    species: Vec<TightBindingSpecies>,
}

impl TightBinding {
    pub fn new(epsilons: &[f64]) -> Result<Self> {
        if epsilons.is_empty() {
            return Err(Error::InvalidInput(
                "tight-binding model needs at least one species".into(),
            ));
        }
        if let Some(e) = epsilons.iter().find(|e| !e.is_finite()) {
            return Err(Error::InvalidInput(format!("on-site energy must be finite, got {e}")));
        }
        Ok(Self {
            species: epsilons
                .iter()
                .map(|&epsilon| TightBindingSpecies { epsilon })
                .collect(),
        })
    }

    /// Binary alloy with `ε_1 = −ε`, `ε_2 = +ε`.
    pub fn binary(epsilon: f64) -> Self {
        Self::new(&[-epsilon, epsilon]).expect("finite on-site energies")
    }

    pub fn species(&self) -> &[TightBindingSpecies] {
        &self.species
    }

    pub fn epsilons(&self) -> Vec<f64> {
        self.species.iter().map(|s| s.epsilon).collect()
    }
}

impl ModelFamily for TightBinding {
    fn species_count(&self) -> usize {
        self.species.len()
    }

    fn at_energy(&self, energy: f64) -> Result<CanonicalModel> {
        tb_model(&self.species, energy)
    }
}

pub fn tb_model(species: &[TightBindingSpecies], energy: f64) -> Result<CanonicalModel> {
    let j: Vec<f64> = species.iter().map(|s| energy - s.epsilon).collect();
    CanonicalModel::site_local(energy, &j, vec![1.0; species.len()])
}

/// Lyapunov exponent of the ordered chain: 0 in the band, `arccosh(|E − ε|/2)` outside.
pub fn pure_chain_lambda(epsilon: f64, energy: f64) -> f64 {
    let x = (energy - epsilon).abs() / 2.0;
    if x <= 1.0 {
        0.0
    } else {
        x.acosh()
    }
}

/// `g(E) = π⁻¹ [4 − (E − ε)²]^{−1/2}` inside the band.
pub fn pure_chain_dos(epsilon: f64, energy: f64) -> Result<f64> {
    let d = energy - epsilon;
    if d.abs() >= 2.0 || d.is_nan() {
        return Err(Error::OutOfBand { epsilon, energy });
    }
    Ok(1.0 / (std::f64::consts::PI * (4.0 - d * d).sqrt()))
}

/// A point scatterer of `strength` followed by a free segment of `spacing`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaCell {
    pub strength: f64,
    pub spacing: f64,
}

/// Chain of delta cells in units `ħ²/2m = 1`, so `E = k²`.
///
/// Cells of different spacing give species-dependent `K = sin(k a_γ)`, whose
/// sign changes with energy; it is the simplest model where `K` is not constant.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaChain {
    cells: Vec<DeltaCell>,
}

impl DeltaChain {
    pub fn new(cells: Vec<DeltaCell>) -> Result<Self> {
        if cells.is_empty() {
            return Err(Error::InvalidInput("delta chain needs at least one species".into()));
        }
        for c in &cells {
            if !(c.spacing > 0.0 && c.spacing.is_finite() && c.strength.is_finite()) {
                return Err(Error::InvalidInput(format!("invalid delta cell {c:?}")));
            }
        }
        Ok(Self { cells })
    }

    pub fn cells(&self) -> &[DeltaCell] {
        &self.cells
    }

    pub fn wavenumber(energy: f64) -> Result<f64> {
        if energy > 0.0 && energy.is_finite() {
            Ok(energy.sqrt())
        } else {
            Err(Error::InvalidInput(format!(
                "delta chains are defined for positive energies, got {energy}"
            )))
        }
    }

    /// Per-species cell matrices at `energy`.
    pub fn transfer_matrices(&self, energy: f64) -> Result<Vec<TransferMatrix>> {
        let k = Self::wavenumber(energy)?;
        Ok(self
            .cells
            .iter()
            .map(|c| TransferMatrix::free(k, c.spacing) * TransferMatrix::delta(k, c.strength))
            .collect())
    }
}

impl ModelFamily for DeltaChain {
    fn species_count(&self) -> usize {
        self.cells.len()
    }

    fn at_energy(&self, energy: f64) -> Result<CanonicalModel> {
        CanonicalModel::from_transfer_matrices(energy, &self.transfer_matrices(energy)?)
    }
}
