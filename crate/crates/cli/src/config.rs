//! JSON run configuration and its validation.

use std::path::PathBuf;

use qwire::chain::DisorderSpec;
use qwire::models::TightBinding;
use serde::Deserialize;

pub const DEFAULT_N_SITES: usize = 100_000;
pub const DEFAULT_N_THETA: usize = 1024;
pub const DEFAULT_DELTA_E: f64 = 1e-2;
/// Default grid spacing of sampled potentials is chosen so that `k·dx` stays below this.
pub const DEFAULT_K_DX: f64 = 1e-2;
const MAX_ENERGIES: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    Finite,
    Tl,
    Both,
}

impl std::str::FromStr for Engine {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "finite" => Ok(Engine::Finite),
            "tl" => Ok(Engine::Tl),
            "both" => Ok(Engine::Both),
            _ => Err(format!("unknown engine {s:?} (expected finite, tl or both)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

impl std::str::FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            _ => Err(format!("unknown format {s:?} (expected csv or json)")),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    model: RawModel,
    #[serde(default)]
    disorder: Option<RawDisorder>,
    #[serde(default)]
    engine: Option<Engine>,
    energies: RawEnergies,
    #[serde(default)]
    parameters: RawParameters,
    #[serde(default)]
    potential: Option<Potential>,
    #[serde(default)]
    output: RawOutput,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    #[serde(rename = "type")]
    kind: String,
    epsilons: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDisorder {
    concentrations: Vec<f64>,
    #[serde(default)]
    pair_probabilities: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    seed: u64,
}

#[derive(Debug, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
enum RawEnergies {
    List { values: Vec<f64> },
    Grid { min: f64, max: f64, step: f64 },
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawParameters {
    n_sites: Option<usize>,
    n_theta: Option<usize>,
    tol: Option<f64>,
    max_iter: Option<usize>,
    delta_e: Option<f64>,
    dx: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    path: Option<PathBuf>,
    format: Option<Format>,
}

/// Continuum potential for the transmission command, in units where
/// `ψ'' = (V − k²)ψ` and `E = k²`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Potential {
    SquareBarrier { height: f64, width: f64 },
    Samples { dx: f64, values: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    pub n_sites: usize,
    pub n_theta: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub delta_e: f64,
    pub dx: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub model: TightBinding,
    pub disorder: DisorderSpec,
    pub engine: Engine,
    pub energies: Vec<f64>,
    pub parameters: Parameters,
    pub potential: Option<Potential>,
    pub output_path: Option<PathBuf>,
    pub format: Format,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub engine: Option<Engine>,
    pub output: Option<PathBuf>,
    pub format: Option<Format>,
}

/// Every problem found in a configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigErrors(pub Vec<String>);

impl std::fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(
            f,
            "invalid configuration ({} problem{}):",
            self.0.len(),
            if self.0.len() == 1 { "" } else { "s" }
        )?;
        for e in &self.0 {
            writeln!(f, "  - {e}")?;
        }
        Ok(())
    }
}

impl RunConfig {
    pub fn parse(text: &str, overrides: &Overrides) -> Result<Self, ConfigErrors> {
        let raw: RawConfig = serde_json::from_str(text).map_err(|e| ConfigErrors(vec![e.to_string()]))?;
        let mut errors = Vec::new();

        if raw.model.kind != "tight-binding" {
            errors.push(format!(
                "model.type must be \"tight-binding\", got {:?}",
                raw.model.kind
            ));
        }
        let model = TightBinding::new(&raw.model.epsilons)
            .map_err(|e| errors.push(format!("model.epsilons: {e}")))
            .ok();

        let ns = raw.model.epsilons.len();
        let disorder = match &raw.disorder {
            None if ns == 1 => Some(DisorderSpec::pure(0)),
            None if ns == 0 => None,
            None => {
                errors.push(format!("disorder block required for {ns} species"));
                None
            }
            Some(d) => {
                if d.concentrations.len() != ns {
                    errors.push(format!(
                        "disorder.concentrations has {} entries, model has {ns} species",
                        d.concentrations.len()
                    ));
                    None
                } else {
                    let spec = match &d.pair_probabilities {
                        Some(p) => DisorderSpec::correlated(d.concentrations.clone(), p.clone(), d.seed),
                        None => DisorderSpec::uncorrelated(d.concentrations.clone(), d.seed),
                    };
                    spec.map_err(|e| errors.push(format!("disorder: {e}"))).ok()
                }
            }
        };
        let disorder = disorder.map(|d| match overrides.seed {
            Some(s) => d.with_seed(s),
            None => d,
        });

        let energies = match raw.energies {
            RawEnergies::List { values } => {
                if values.is_empty() {
                    errors.push("energies.values is empty".into());
                }
                if values.iter().any(|e| !e.is_finite()) {
                    errors.push("energies.values must be finite".into());
                }
                values
            }
            RawEnergies::Grid { min, max, step } => grid(min, max, step).unwrap_or_else(|e| {
                errors.extend(e);
                Vec::new()
            }),
        };

        let p = raw.parameters;
        let parameters = Parameters {
            n_sites: p.n_sites.unwrap_or(DEFAULT_N_SITES),
            n_theta: p.n_theta.unwrap_or(DEFAULT_N_THETA),
            tol: p.tol.unwrap_or(qwire::tlsolver::DEFAULT_TOL),
            max_iter: p.max_iter.unwrap_or(qwire::tlsolver::DEFAULT_MAX_ITER),
            delta_e: p.delta_e.unwrap_or(DEFAULT_DELTA_E),
            dx: p.dx,
        };
        if parameters.n_sites < 3 {
            errors.push(format!(
                "parameters.n_sites must be at least 3, got {}",
                parameters.n_sites
            ));
        }
        if parameters.n_theta < 2 {
            errors.push(format!(
                "parameters.n_theta must be at least 2, got {}",
                parameters.n_theta
            ));
        }
        if !(parameters.tol > 0.0) {
            errors.push(format!("parameters.tol must be positive, got {}", parameters.tol));
        }
        if parameters.max_iter == 0 {
            errors.push("parameters.max_iter must be positive".into());
        }
        if !(parameters.delta_e > 0.0 && parameters.delta_e.is_finite()) {
            errors.push(format!(
                "parameters.delta_e must be positive, got {}",
                parameters.delta_e
            ));
        }
        if let Some(dx) = parameters.dx {
            if !(dx > 0.0 && dx.is_finite()) {
                errors.push(format!("parameters.dx must be positive, got {dx}"));
            }
        }

        match &raw.potential {
            Some(Potential::SquareBarrier { height, width }) => {
                if !height.is_finite() {
                    errors.push("potential.height must be finite".into());
                }
                if !(*width > 0.0 && width.is_finite()) {
                    errors.push(format!("potential.width must be positive, got {width}"));
                }
            }
            Some(Potential::Samples { dx, values }) => {
                if !(*dx > 0.0 && dx.is_finite()) {
                    errors.push(format!("potential.dx must be positive, got {dx}"));
                }
                if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
                    errors.push("potential.values must be a non-empty list of finite numbers".into());
                }
            }
            None => {}
        }

        if !errors.is_empty() {
            return Err(ConfigErrors(errors));
        }
        Ok(RunConfig {
            model: model.expect("checked above"),
            disorder: disorder.expect("checked above"),
            engine: overrides.engine.or(raw.engine).unwrap_or(Engine::Finite),
            energies,
            parameters,
            potential: raw.potential,
            output_path: overrides.output.clone().or(raw.output.path),
            format: overrides.format.or(raw.output.format).unwrap_or(Format::Csv),
        })
    }

    /// Checks that apply only to the transmission command.
    pub fn validate_transmit(&self) -> Result<(), ConfigErrors> {
        let mut errors = Vec::new();
        match &self.potential {
            None => {
                for &e in &self.energies {
                    if !(e.abs() < 2.0) {
                        errors.push(format!("energy {e} lies outside the lead band (−2, 2)"));
                    }
                }
            }
            Some(p) => {
                for &e in &self.energies {
                    if !(e > 0.0) {
                        errors.push(format!("energy {e} must be positive for a continuum potential"));
                    }
                }
                let k_max = self.energies.iter().fold(0.0_f64, |a, &e| a.max(e)).sqrt();
                let dx = match p {
                    Potential::Samples { dx, .. } => *dx,
                    Potential::SquareBarrier { width, .. } => {
                        let dx = self.barrier_dx();
                        let cells = width / dx;
                        if (cells - cells.round()).abs() > 1e-9 * cells.max(1.0) {
                            errors.push(format!(
                                "parameters.dx = {dx} does not divide the barrier width {width}"
                            ));
                        }
                        dx
                    }
                };
                if k_max * dx >= 2.0 {
                    errors.push(format!(
                        "grid spacing {dx} is too coarse for k = {k_max} (need k·dx < 2)"
                    ));
                }
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(ConfigErrors(errors))
        }
    }

    /// Grid spacing for a square barrier: `parameters.dx`, or the largest
    /// spacing that divides the width and gives `k·dx ≤ 0.01` at the largest energy.
    pub fn barrier_dx(&self) -> f64 {
        let width = match &self.potential {
            Some(Potential::SquareBarrier { width, .. }) => *width,
            _ => return self.parameters.dx.unwrap_or(f64::NAN),
        };
        self.parameters.dx.unwrap_or_else(|| {
            let k_max = self.energies.iter().fold(0.0_f64, |a, &e| a.max(e)).sqrt();
            width / (width * k_max / DEFAULT_K_DX).ceil().max(1.0)
        })
    }
}

fn grid(min: f64, max: f64, step: f64) -> Result<Vec<f64>, Vec<String>> {
    let mut errors = Vec::new();
    if !(min.is_finite() && max.is_finite() && max >= min) {
        errors.push(format!("energies: need finite min ≤ max, got [{min}, {max}]"));
    }
    if !(step > 0.0 && step.is_finite()) {
        errors.push(format!("energies.step must be positive, got {step}"));
    }
    if !errors.is_empty() {
        return Err(errors);
    }
    let count = ((max - min) / step + 1e-9).floor() + 1.0;
    if count > MAX_ENERGIES as f64 {
        return Err(vec![format!("energy grid has {count} points, limit is {MAX_ENERGIES}")]);
    }
    Ok((0..count as usize).map(|i| min + i as f64 * step).collect())
}
