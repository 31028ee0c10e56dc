//! Invariant suite run against a configured model before trusting its output.

use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::dynamics::{evolve, EvolveOptions};
use crate::error::Result;
use crate::liouvillian::{apply_compiled, CompiledGenerator, Sector};
use crate::operator::{DensityState, Level};
use crate::protocol::{choose_layout, compute_t2pi, Truncation};
use crate::rates::{compute_effective_rates, steady_state_closed_form, PrepVariant};
use crate::scheme::{build_generator, Channels, SchemeParams};

/// One invariant: `value` must not exceed `tolerance`.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub value: f64,
    pub tolerance: f64,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.value <= self.tolerance
    }
}

/// Full-rank test state with deterministic pseudo-random entries.
fn scrambled_state(dim: usize) -> DMatrix<Complex64> {
    let mut s: u64 = 0x9e37_79b9_7f4a_7c15;
    let mut next = || {
        s ^= s << 13;
        s ^= s >> 7;
        s ^= s << 17;
        (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    };
    let b = DMatrix::from_fn(dim, dim, |_, _| Complex64::new(next(), next()));
    let mut rho = &b * b.adjoint();
    let tr = rho.trace();
    rho /= tr;
    rho
}

/// Hermiticity of `H(t)`, trace and Hermiticity preservation of the
/// generator, agreement of the compiled and dense generators, a short
/// evolution under the positivity and trace monitors, and sanity of the rate
/// model.
pub fn invariant_suite(
    params: &SchemeParams,
    channels: &Channels,
    truncation: Truncation,
    tol: f64,
    variant: PrepVariant,
) -> Result<Vec<Check>> {
    let layout = choose_layout(params, channels, truncation)?;
    let generator = build_generator(params, &layout, channels)?;
    let mut checks = Vec::new();

    let period = if params.delta > 0.0 {
        std::f64::consts::TAU / params.delta
    } else {
        1.0
    };
    let herm = (0..8)
        .map(|k| {
            let h = generator.hamiltonian_at(k as f64 * period / 8.0);
            h.hermiticity_error() / h.matrix().max_abs().max(1.0)
        })
        .fold(0.0, f64::max);
    checks.push(Check {
        name: "hamiltonian_hermiticity",
        value: herm,
        tolerance: 1e-14,
    });

    let sector = Arc::new(Sector::for_generator(&generator));
    let n = layout.total_dim();
    let full = scrambled_state(n);
    let rho = DMatrix::from_fn(n, n, |i, j| {
        if sector.position(i, j).is_some() {
            full[(i, j)]
        } else {
            Complex64::new(0.0, 0.0)
        }
    });
    let t = 0.3 * period;
    let drho = generator.apply(t, &rho)?;
    let scale = drho.iter().map(|z| z.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    checks.push(Check {
        name: "trace_preservation",
        value: drho.trace().norm() / scale,
        tolerance: 1e-12,
    });
    checks.push(Check {
        name: "hermiticity_preservation",
        value: (&drho - drho.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max) / scale,
        tolerance: 1e-12,
    });

    let compiled = CompiledGenerator::compile(&generator, sector)?;
    let state = DensityState::from_matrix(&layout, rho)?;
    let fast = apply_compiled(&compiled, t, &state)?;
    checks.push(Check {
        name: "compiled_matches_dense",
        value: (&fast - &drho).iter().map(|z| z.norm()).fold(0.0, f64::max) / scale,
        tolerance: 1e-12,
    });

    let rho0 = DensityState::basis(&layout, Level::Down, Level::Down, &vec![0; layout.mode_count()])?;
    let duration = 4.0 * compute_t2pi(params)?;
    let times: Vec<f64> = (0..=40).map(|k| duration * k as f64 / 40.0).collect();
    let traj = evolve(&rho0, &generator, (0.0, duration), &times, &EvolveOptions::with_tol(tol))?;
    let d = traj.diagnostics;
    checks.push(Check {
        name: "trace_drift",
        value: d.max_trace_drift,
        tolerance: crate::dynamics::TRACE_DRIFT_TOL,
    });
    checks.push(Check {
        name: "negative_eigenvalue",
        value: (-d.min_eigenvalue).max(0.0),
        tolerance: 1e-8,
    });
    checks.push(Check {
        name: "population_sum",
        value: traj.records.iter().map(|r| (r.total() - 1.0).abs()).fold(0.0, f64::max),
        tolerance: 1e-8,
    });

    let rates = compute_effective_rates(params, variant)?;
    let neg = rates.fields().iter().map(|(_, v)| (-v).max(0.0)).fold(0.0, f64::max);
    checks.push(Check {
        name: "rate_nonnegativity",
        value: neg,
        tolerance: 0.0,
    });
    if let Ok(ss) = steady_state_closed_form(&rates) {
        checks.push(Check {
            name: "rate_fidelity_in_unit_interval",
            value: (-ss.fidelity).max(ss.fidelity - 1.0).max(0.0),
            tolerance: 0.0,
        });
    }
    Ok(checks)
}
