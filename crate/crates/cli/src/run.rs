//! Energy scans behind the three subcommands.

use qwire::chain::{
    generate_sequence, propagate_canonical, square_barrier_samples, tight_binding_transmission,
    transmission_discretized, PropagationOptions, WireSequence,
};
use qwire::models::ModelFamily;
use qwire::observables::{
    ipr, lyapunov_from_log_transmission, lyapunov_from_state, node_count_dos_point, site_energies,
    tight_binding_eigenstate,
};
use qwire::tlsolver::{tl_point, SolverOptions, TlPoint};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{Engine, Potential, RunConfig};

/// Energies per warm-started TL chunk; fixed so results do not depend on
/// the thread count.
pub const TL_CHUNK: usize = 16;
/// Scans with fewer converged rows than this fraction fail.
pub const MIN_CONVERGED_FRACTION: f64 = 0.9;

/// One output row. Missing quantities are `None` and written as empty
/// fields (CSV) or `null` (JSON).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyScanRecord {
    pub energy: f64,
    #[serde(rename = "T")]
    pub t: Option<f64>,
    #[serde(rename = "R")]
    pub r: Option<f64>,
    pub lambda: Option<f64>,
    pub xi: Option<f64>,
    pub g: Option<f64>,
    pub idos: Option<f64>,
    pub ipr: Option<f64>,
    pub engine: &'static str,
    pub converged: Option<bool>,
    pub seed: Option<u64>,
}

impl EnergyScanRecord {
    fn empty(energy: f64, engine: &'static str) -> Self {
        Self {
            energy,
            t: None,
            r: None,
            lambda: None,
            xi: None,
            g: None,
            idos: None,
            ipr: None,
            engine,
            converged: None,
            seed: None,
        }
    }

    fn failed(energy: f64, engine: &'static str, seed: Option<u64>) -> Self {
        Self {
            converged: Some(false),
            seed,
            ..Self::empty(energy, engine)
        }
    }

    /// Sets `λ` and, when `λ > 0`, `ξ = 1/λ`.
    fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = Some(lambda);
        self.xi = (lambda > 0.0).then(|| 1.0 / lambda);
        self
    }

    pub fn failed_row(&self) -> bool {
        self.converged == Some(false)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Transmit,
    Dos,
    Lyapunov,
}

pub fn run(cmd: Command, cfg: &RunConfig) -> Result<Vec<EnergyScanRecord>, String> {
    let mut records = match cmd {
        Command::Transmit => transmit(cfg)?,
        Command::Dos | Command::Lyapunov => {
            let mut out = Vec::new();
            if matches!(cfg.engine, Engine::Finite | Engine::Both) {
                out.extend(finite(cmd, cfg)?);
            }
            if matches!(cfg.engine, Engine::Tl | Engine::Both) {
                out.extend(thermodynamic(cmd, cfg));
            }
            out
        }
    };
    // stable: with mode "both" the finite row precedes the tl row
    records.sort_by(|a, b| a.energy.total_cmp(&b.energy));
    Ok(records)
}

fn sequence(cfg: &RunConfig) -> Result<WireSequence, String> {
    generate_sequence(&cfg.disorder, cfg.parameters.n_sites).map_err(|e| e.to_string())
}

fn transmit(cfg: &RunConfig) -> Result<Vec<EnergyScanRecord>, String> {
    match &cfg.potential {
        Some(p) => {
            let (samples, dx) = match p {
                Potential::SquareBarrier { height, width } => {
                    let dx = cfg.barrier_dx();
                    (square_barrier_samples(*height, *width, dx), dx)
                }
                Potential::Samples { dx, values } => (values.clone(), *dx),
            };
            Ok(cfg
                .energies
                .par_iter()
                .map(|&e| match transmission_discretized(&samples, dx, e.sqrt()) {
                    Ok((t, r)) => EnergyScanRecord {
                        t: Some(t),
                        r: Some(r),
                        converged: Some(true),
                        ..EnergyScanRecord::empty(e, "discretized")
                    },
                    Err(_) => EnergyScanRecord::failed(e, "discretized", None),
                })
                .collect())
        }
        None => {
            let seq = sequence(cfg)?;
            let seed = Some(seq.seed());
            let n = seq.len();
            Ok(cfg
                .energies
                .par_iter()
                .map(|&e| {
                    let point = tight_binding_transmission(&cfg.model, &seq, e, &[n])
                        .ok()
                        .and_then(|v| v.into_iter().next());
                    match point {
                        Some(p) => {
                            let mut rec = EnergyScanRecord {
                                t: Some(p.transmission()),
                                r: Some(p.reflection),
                                converged: Some(true),
                                seed,
                                ..EnergyScanRecord::empty(e, "lattice")
                            };
                            if let Ok(l) = lyapunov_from_log_transmission(p.log_transmission, n) {
                                rec = rec.with_lambda(l.lambda);
                            }
                            rec
                        }
                        None => EnergyScanRecord::failed(e, "lattice", seed),
                    }
                })
                .collect())
        }
    }
}

fn finite(cmd: Command, cfg: &RunConfig) -> Result<Vec<EnergyScanRecord>, String> {
    let seq = sequence(cfg)?;
    let seed = Some(seq.seed());
    let eps = site_energies(&cfg.model, &seq).map_err(|e| e.to_string())?;
    let family: &dyn ModelFamily = &cfg.model;
    Ok(cfg
        .energies
        .par_iter()
        .map(|&e| {
            let base = EnergyScanRecord {
                seed,
                ..EnergyScanRecord::empty(e, "finite")
            };
            match cmd {
                Command::Dos => match node_count_dos_point(family, &seq, e, cfg.parameters.delta_e) {
                    Ok(p) => EnergyScanRecord {
                        g: Some(p.g),
                        idos: Some(p.idos),
                        ..base
                    },
                    Err(_) => EnergyScanRecord::failed(e, "finite", seed),
                },
                _ => {
                    let state = family
                        .at_energy(e)
                        .and_then(|m| propagate_canonical(&m, &seq, PropagationOptions::default()));
                    match state {
                        Ok(traj) => {
                            let p = tight_binding_eigenstate(&eps, e)
                                .ok()
                                .and_then(|s| ipr(&s.amplitudes).ok());
                            EnergyScanRecord { ipr: p, ..base }.with_lambda(lyapunov_from_state(&traj).lambda)
                        }
                        Err(_) => EnergyScanRecord::failed(e, "finite", seed),
                    }
                }
            }
        })
        .collect())
}

fn thermodynamic(cmd: Command, cfg: &RunConfig) -> Vec<EnergyScanRecord> {
    let p = &cfg.parameters;
    let opts = SolverOptions {
        n_theta: p.n_theta,
        tol: p.tol,
        max_iter: p.max_iter,
        ..SolverOptions::default()
    };
    let mut sorted = cfg.energies.clone();
    sorted.sort_by(f64::total_cmp);
    sorted
        .par_chunks(TL_CHUNK)
        .flat_map_iter(|chunk| {
            let mut warm = None;
            chunk
                .iter()
                .map(
                    |&e| match tl_point(&cfg.model, &cfg.disorder, e, p.delta_e, &opts, warm.as_deref()) {
                        Ok((point, tables)) => {
                            warm = Some(tables);
                            tl_record(cmd, &point)
                        }
                        Err(_) => {
                            warm = None;
                            EnergyScanRecord::failed(e, "tl", None)
                        }
                    },
                )
                .collect::<Vec<_>>()
        })
        .collect()
}

fn tl_record(cmd: Command, p: &TlPoint) -> EnergyScanRecord {
    let base = EnergyScanRecord {
        converged: Some(p.converged),
        ..EnergyScanRecord::empty(p.energy, "tl")
    };
    match cmd {
        Command::Dos => EnergyScanRecord {
            g: Some(p.g),
            idos: Some(p.idos),
            ..base
        },
        _ => EnergyScanRecord {
            idos: Some(p.idos),
            ..base
        }
        .with_lambda(p.lyapunov.lambda),
    }
}

/// Whether the scan meets the convergence quota of its command.
pub fn acceptable(cmd: Command, records: &[EnergyScanRecord]) -> bool {
    let failed = records.iter().filter(|r| r.failed_row()).count();
    match cmd {
        Command::Transmit => failed == 0,
        _ => records.is_empty() || (records.len() - failed) as f64 >= MIN_CONVERGED_FRACTION * records.len() as f64,
    }
}
