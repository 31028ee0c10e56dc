//! Master-equation propagation, unitary propagation and steady states.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::integrator::{integrate, ErrorNorm, IntegratorOptions, IntegratorStats, OdeSystem};
use crate::liouvillian::{CompiledGenerator, Sector};
use crate::measurement::{PopulationProbe, PopulationRecord};
use crate::operator::{DensityState, QuantumOperator, POSITIVITY_TOL};
use crate::scheme::LindbladGenerator;

/// Default local error tolerance.
pub const DEFAULT_TOL: f64 = 1e-8;

/// Largest tolerated drift of `Tr ρ` over a trajectory.
pub const TRACE_DRIFT_TOL: f64 = 1e-9;

/// What a [`Trajectory`] keeps per sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Storage {
    /// Population records only, plus a full state every
    /// `checkpoint_every` samples.
    #[default]
    Populations,
    /// A full density matrix at every sample.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvolveOptions {
    pub tol: f64,
    pub storage: Storage,
    /// Full-state checkpoint cadence in samples (0 disables checkpoints).
    pub checkpoint_every: usize,
    /// Check trace, Hermiticity and positivity at every sample.
    pub monitor: bool,
    pub h_max: Option<f64>,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            storage: Storage::Populations,
            checkpoint_every: 100,
            monitor: true,
            h_max: None,
        }
    }
}

impl EvolveOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            tol,
            ..Self::default()
        }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if !(1e-12..=1e-4).contains(&self.tol) {
            return Err(Error::param("tol", format!("must lie in [1e-12, 1e-4], got {}", self.tol)));
        }
        Ok(())
    }

    pub(crate) fn integrator(&self) -> IntegratorOptions {
        // Small eigenvalues decide positivity, so every entry is held to the
        // tolerance rather than the RMS over entries.
        IntegratorOptions {
            norm: ErrorNorm::Max,
            h_max: self.h_max,
            ..IntegratorOptions::with_tol(self.tol)
        }
    }
}

/// Summary of the invariant checks made along a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Diagnostics {
    pub max_trace_drift: f64,
    pub max_hermiticity_error: f64,
    pub min_eigenvalue: f64,
    pub stats: IntegratorStats,
}

impl Diagnostics {
    /// Combine the checks of two runs.
    pub fn merge(&mut self, other: &Self) {
        self.max_trace_drift = self.max_trace_drift.max(other.max_trace_drift);
        self.max_hermiticity_error = self.max_hermiticity_error.max(other.max_hermiticity_error);
        self.min_eigenvalue = self.min_eigenvalue.min(other.min_eigenvalue);
        self.stats.merge(&other.stats);
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub records: Vec<PopulationRecord>,
    /// Every sample when storing full states, empty otherwise.
    pub states: Vec<DensityState>,
    /// `(sample index, state)` pairs.
    pub checkpoints: Vec<(usize, DensityState)>,
    pub final_state: DensityState,
    pub diagnostics: Diagnostics,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

struct Compiled<'a>(&'a CompiledGenerator);

impl OdeSystem for Compiled<'_> {
    fn dim(&self) -> usize {
        self.0.len()
    }

    fn rhs(&self, t: f64, y: &[Complex64], dy: &mut [Complex64]) {
        self.0.apply(t, y, dy);
    }
}

/// Checks a packed state against the density-matrix invariants.
pub(crate) struct Monitor<'a> {
    sector: &'a Sector,
    trace0: Complex64,
    pub(crate) diagnostics: Diagnostics,
}

impl<'a> Monitor<'a> {
    pub(crate) fn new(sector: &'a Sector, y0: &[Complex64]) -> Self {
        Self::with_trace(sector, sector.trace(y0))
    }

    pub(crate) fn with_trace(sector: &'a Sector, trace0: Complex64) -> Self {
        Self {
            sector,
            trace0,
            diagnostics: Diagnostics {
                min_eigenvalue: f64::INFINITY,
                ..Default::default()
            },
        }
    }

    pub(crate) fn check(&mut self, t: f64, y: &[Complex64]) -> Result<()> {
        if y.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::NonFinite { t });
        }
        let drift = (self.sector.trace(y) - self.trace0).norm();
        let herm = self.sector.hermiticity_error(y);
        let min_eig = self.sector.min_eigenvalue(y);
        let d = &mut self.diagnostics;
        d.max_trace_drift = d.max_trace_drift.max(drift);
        d.max_hermiticity_error = d.max_hermiticity_error.max(herm);
        d.min_eigenvalue = d.min_eigenvalue.min(min_eig);
        if drift > TRACE_DRIFT_TOL {
            return Err(Error::TraceDrift { t, drift });
        }
        if min_eig < -POSITIVITY_TOL {
            return Err(Error::PositivityViolation {
                t,
                min_eigenvalue: min_eig,
            });
        }
        Ok(())
    }
}

/// Propagate `rho0` under `generator` over `t_span`, recording at
/// `sample_times`.
pub fn evolve(
    rho0: &DensityState,
    generator: &LindbladGenerator,
    t_span: (f64, f64),
    sample_times: &[f64],
    options: &EvolveOptions,
) -> Result<Trajectory> {
    if rho0.layout() != generator.layout() {
        return Err(Error::LayoutMismatch);
    }
    let sector = Arc::new(Sector::for_problem(generator, rho0));
    let compiled = CompiledGenerator::compile(generator, sector)?;
    evolve_compiled(rho0, &compiled, t_span, sample_times, options)
}

/// As [`evolve`], reusing an already compiled generator.
pub fn evolve_compiled(
    rho0: &DensityState,
    compiled: &CompiledGenerator,
    t_span: (f64, f64),
    sample_times: &[f64],
    options: &EvolveOptions,
) -> Result<Trajectory> {
    options.validate()?;
    rho0.validate()?;
    let mut y = compiled.pack(rho0)?;
    let probe = PopulationProbe::new(compiled.layout(), compiled.sector())?;
    let sector = compiled.sector().clone();
    let mut monitor = Monitor::new(&sector, &y);
    let mut times = Vec::with_capacity(sample_times.len());
    let mut records = Vec::with_capacity(sample_times.len());
    let mut states = Vec::new();
    let mut checkpoints = Vec::new();
    let layout = compiled.layout().clone();
    let stats = integrate(
        &Compiled(compiled),
        t_span.0,
        t_span.1,
        &mut y,
        sample_times,
        &options.integrator(),
        |t, ys| {
            if options.monitor {
                monitor.check(t, ys)?;
            }
            let index = times.len();
            times.push(t);
            records.push(probe.record(t, ys));
            let full = options.storage == Storage::Full;
            let checkpoint = options.checkpoint_every > 0 && index % options.checkpoint_every == 0;
            if full || checkpoint {
                let state = DensityState::from_matrix(&layout, sector.unpack(ys))?;
                if checkpoint {
                    checkpoints.push((index, state.clone()));
                }
                if full {
                    states.push(state);
                }
            }
            Ok(())
        },
    )?;
    if options.monitor {
        monitor.check(t_span.1, &y)?;
    }
    let mut diagnostics = monitor.diagnostics;
    diagnostics.stats = stats;
    if !options.monitor {
        diagnostics.min_eigenvalue = f64::NAN;
    }
    Ok(Trajectory {
        times,
        records,
        states,
        checkpoints,
        final_state: compiled.unpack(&y)?,
        diagnostics,
    })
}

/// Propagate a packed state in place from `t0` to `t1` without sampling.
/// Returns integrator statistics.
pub fn propagate_packed(
    compiled: &CompiledGenerator,
    y: &mut [Complex64],
    t0: f64,
    t1: f64,
    options: &EvolveOptions,
) -> Result<IntegratorStats> {
    options.validate()?;
    let stats = integrate(&Compiled(compiled), t0, t1, y, &[], &options.integrator(), |_, _| Ok(()))?;
    if options.monitor {
        let mut monitor = Monitor::new(compiled.sector(), y);
        monitor.check(t1, y)?;
    }
    Ok(stats)
}

/// `ρ → U ρ U†` with `U = exp(−iH·duration)`, via the eigendecomposition of
/// the Hermitian `H`.
pub fn propagate_unitary(rho: &DensityState, h: &QuantumOperator, duration: f64) -> Result<DensityState> {
    if rho.layout() != h.layout() {
        return Err(Error::LayoutMismatch);
    }
    let dev = h.hermiticity_error();
    if dev > 1e-12 * h.matrix().max_abs().max(1.0) {
        return Err(Error::NotHermitian { deviation: dev });
    }
    let u = unitary(h, duration);
    DensityState::from_matrix(rho.layout(), &u * rho.matrix() * u.adjoint())
}

/// `exp(−iH·duration)` for a Hermitian `H`.
pub fn unitary(h: &QuantumOperator, duration: f64) -> DMatrix<Complex64> {
    let dense = h.to_dense();
    let herm = (&dense + dense.adjoint()) * Complex64::new(0.5, 0.0);
    let eig = herm.symmetric_eigen();
    let phases = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|&l| Complex64::from_polar(1.0, -l * duration)),
    );
    let v = &eig.eigenvectors;
    let mut scaled = v.clone();
    for (j, p) in phases.iter().enumerate() {
        for i in 0..scaled.nrows() {
            scaled[(i, j)] *= p;
        }
    }
    scaled * v.adjoint()
}

/// Time average of the records with `t_a ≤ t ≤ t_b` by the trapezoid rule.
/// A zero-length window returns the sample at (or nearest before) `t_b`.
pub fn steady_by_window(trajectory: &Trajectory, window: (f64, f64)) -> Result<PopulationRecord> {
    window_average(&trajectory.times, &trajectory.records, window)
}

pub fn window_average(times: &[f64], records: &[PopulationRecord], window: (f64, f64)) -> Result<PopulationRecord> {
    let (ta, tb) = window;
    if !(tb >= ta) {
        return Err(Error::EmptyWindow(format!("[{ta}, {tb}] is reversed")));
    }
    let (Some(&first), Some(&last)) = (times.first(), times.last()) else {
        return Err(Error::EmptyWindow("trajectory has no samples".into()));
    };
    let slack = 1e-9 * last.abs().max(1e-300);
    if ta < first - slack || tb > last + slack {
        return Err(Error::EmptyWindow(format!(
            "[{ta}, {tb}] not within trajectory span [{first}, {last}]"
        )));
    }
    let inside: Vec<usize> = (0..times.len())
        .filter(|&i| times[i] >= ta - slack && times[i] <= tb + slack)
        .collect();
    if tb - ta <= slack {
        let idx = (0..times.len()).rev().find(|&i| times[i] <= tb + slack).unwrap_or(0);
        let mut r = records[idx];
        r.time = tb;
        return Ok(r);
    }
    match inside.as_slice() {
        [] => Err(Error::EmptyWindow(format!("no samples in [{ta}, {tb}]"))),
        [only] => {
            let mut r = records[*only];
            r.time = 0.5 * (ta + tb);
            Ok(r)
        }
        idx => {
            let span = times[*idx.last().unwrap()] - times[idx[0]];
            let terms = idx.windows(2).flat_map(|w| {
                let dt = times[w[1]] - times[w[0]];
                [(0.5 * dt / span, &records[w[0]]), (0.5 * dt / span, &records[w[1]])]
            });
            Ok(PopulationRecord::weighted_sum(0.5 * (ta + tb), terms))
        }
    }
}

/// Mean of per-step records whose step number lies in `[first, last]`.
pub fn step_window_mean(records: &[PopulationRecord], steps: (usize, usize)) -> Result<PopulationRecord> {
    let chosen: Vec<&PopulationRecord> = records
        .iter()
        .filter(|r| r.time >= steps.0 as f64 && r.time <= steps.1 as f64)
        .collect();
    if chosen.is_empty() {
        return Err(Error::EmptyWindow(format!("no steps in [{}, {}]", steps.0, steps.1)));
    }
    let w = 1.0 / chosen.len() as f64;
    Ok(PopulationRecord::weighted_sum(
        0.5 * (steps.0 + steps.1) as f64,
        chosen.into_iter().map(|r| (w, r)),
    ))
}

/// Largest sector size handled by the dense SVD.
pub const NULLSPACE_MAX_DIM: usize = 3000;

/// Relative singular-value threshold for the null space.
pub const NULLSPACE_RTOL: f64 = 1e-10;

/// Normalised steady state of a time-independent generator from the null
/// space of its superoperator.
pub fn liouvillian_nullspace(generator: &LindbladGenerator) -> Result<DensityState> {
    if !generator.is_time_independent() {
        return Err(Error::TimeDependent);
    }
    let compiled = CompiledGenerator::new(generator)?;
    let n = compiled.len();
    if n > NULLSPACE_MAX_DIM {
        return Err(Error::param(
            "layout",
            format!("superoperator sector of size {n} exceeds the dense limit {NULLSPACE_MAX_DIM}"),
        ));
    }
    let g = compiled.static_part().to_dense();
    let svd = g.svd(false, true);
    let sigma_max = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let threshold = NULLSPACE_RTOL * sigma_max.max(f64::MIN_POSITIVE);
    let null: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] <= threshold)
        .collect();
    if null.len() != 1 {
        return Err(Error::DegenerateNullSpace {
            multiplicity: null.len(),
        });
    }
    let v_t = svd.v_t.expect("requested");
    let y: Vec<Complex64> = v_t.row(null[0]).iter().map(|v| v.conj()).collect();
    let tr = compiled.sector().trace(&y);
    if tr.norm() < 1e-12 {
        return Err(Error::InvalidState("null vector is traceless".into()));
    }
    let y: Vec<Complex64> = y.iter().map(|v| v / tr).collect();
    let m = compiled.sector().unpack(&y);
    let herm = (&m + m.adjoint()) * Complex64::new(0.5, 0.0);
    DensityState::from_matrix(generator.layout(), herm)
}
