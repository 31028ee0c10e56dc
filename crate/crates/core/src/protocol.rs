//! Continuous and stepwise pumping sequences, averaging over the sideband
//! imbalance `r`, and error-budget ablations.

use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::dynamics::{evolve, propagate_packed, window_average, Diagnostics, EvolveOptions, Monitor, DEFAULT_TOL};
use crate::error::{Error, Result};
use crate::liouvillian::{CompiledGenerator, Sector};
use crate::measurement::{PopulationProbe, PopulationRecord};
use crate::operator::{DensityState, HilbertLayout, Level};
use crate::parallel::try_par_map;
use crate::scheme::{build_generator, Channels, SchemeParams};

/// Steady-state averaging window of the continuous protocol, seconds.
pub const CONTINUOUS_WINDOW: (f64, f64) = (6e-3, 12e-3);
/// Steady-state averaging window of the stepwise protocol, step numbers.
pub const STEPWISE_WINDOW: (usize, usize) = (35, 59);

/// Fock-space cut-offs of the two modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Truncation {
    pub mode3: usize,
    pub mode4: usize,
}

impl Default for Truncation {
    fn default() -> Self {
        Self { mode3: 5, mode4: 3 }
    }
}

impl Truncation {
    pub fn doubled(self) -> Self {
        Self {
            mode3: 2 * self.mode3,
            mode4: 2 * self.mode4,
        }
    }
}

/// Smallest layout that hosts the enabled channels: the leak level only when
/// spontaneous emission feeds it, mode 4 only when its coupling is on.
pub fn choose_layout(params: &SchemeParams, channels: &Channels, truncation: Truncation) -> Result<HilbertLayout> {
    let levels = if channels.spontaneous && params.gamma_table.uses_leak() {
        4
    } else {
        3
    };
    if channels.mode4 {
        HilbertLayout::new(levels, &[truncation.mode3, truncation.mode4])
    } else {
        HilbertLayout::new(levels, &[truncation.mode3])
    }
}

/// `2π/√(Ω_s² + Ω_c²)`, the return period of `|S⟩|0⟩` under the coherent
/// drive.
pub fn compute_t2pi(params: &SchemeParams) -> Result<f64> {
    let w = params.omega_s.hypot(params.omega_c);
    if !(w > 0.0) {
        return Err(Error::param("omega_s", "Ω_s and Ω_c cannot both be zero"));
    }
    Ok(std::f64::consts::TAU / w)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousSchedule {
    pub duration: f64,
    pub sample_times: Vec<f64>,
    pub channels: Channels,
    pub window: (f64, f64),
    pub initial: (Level, Level),
    pub truncation: Truncation,
    pub tol: f64,
}

impl ContinuousSchedule {
    /// Samples every `dt` from 0 to `duration`.
    pub fn uniform(duration: f64, dt: f64) -> Self {
        let n = (duration / dt).round() as usize;
        Self {
            duration,
            sample_times: (0..=n).map(|k| (k as f64 * dt).min(duration)).collect(),
            channels: Channels::all(),
            window: CONTINUOUS_WINDOW,
            initial: (Level::Down, Level::Down),
            truncation: Truncation::default(),
            tol: DEFAULT_TOL,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration.is_finite() && self.duration >= 0.0) {
            return Err(Error::param("duration", "must be finite and >= 0"));
        }
        if self.sample_times.iter().any(|&t| !(0.0..=self.duration).contains(&t)) {
            return Err(Error::param("sample_times", "must lie within [0, duration]"));
        }
        if self.sample_times.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::param("sample_times", "must be nondecreasing"));
        }
        Ok(())
    }
}

/// How the motion is cooled between coherent pulses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CoolingMode {
    /// Evolve under the cooling and heating channels for `t_cool`.
    Lindblad,
    /// Replace the motion by its cooled distribution: thermal at `n̄` for
    /// mode 3 (ground state if heating is off), ground state for mode 4.
    #[default]
    ThermalReset,
}

impl CoolingMode {
    pub fn name(self) -> &'static str {
        match self {
            CoolingMode::Lindblad => "lindblad",
            CoolingMode::ThermalReset => "thermal-reset",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "lindblad" => Ok(CoolingMode::Lindblad),
            "thermal-reset" => Ok(CoolingMode::ThermalReset),
            other => Err(Error::param(
                "cooling_mode",
                format!("expected `lindblad` or `thermal-reset`, got `{other}`"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepwiseSchedule {
    pub n_steps: usize,
    pub t_cool: f64,
    /// Coherent pulse length; the return period `t_2π` when `None`.
    pub t_coh: Option<f64>,
    pub t_repump: f64,
    pub cooling_mode: CoolingMode,
    pub channels: Channels,
    pub window: (usize, usize),
    pub truncation: Truncation,
    pub tol: f64,
}

impl Default for StepwiseSchedule {
    fn default() -> Self {
        Self {
            n_steps: 60,
            t_cool: 100e-6,
            t_coh: None,
            t_repump: 6e-6,
            cooling_mode: CoolingMode::default(),
            channels: Channels::all(),
            window: STEPWISE_WINDOW,
            truncation: Truncation::default(),
            tol: DEFAULT_TOL,
        }
    }
}

impl StepwiseSchedule {
    pub fn validate(&self) -> Result<()> {
        let durations = [("t_cool", Some(self.t_cool)), ("t_coh", self.t_coh), ("t_repump", Some(self.t_repump))];
        for (name, v) in durations {
            if let Some(v) = v {
                if !(v.is_finite() && v >= 0.0) {
                    return Err(Error::param(name, format!("must be finite and >= 0, got {v}")));
                }
            }
        }
        Ok(())
    }

    pub fn coherent_time(&self, params: &SchemeParams) -> Result<f64> {
        match self.t_coh {
            Some(t) => Ok(t),
            None => compute_t2pi(params),
        }
    }

    /// Duration of one cool–pulse–repump step.
    pub fn step_duration(&self, params: &SchemeParams) -> Result<f64> {
        Ok(self.t_cool + self.coherent_time(params)? + self.t_repump)
    }
}

/// A population series and the invariant checks made while producing it.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub records: Vec<PopulationRecord>,
    pub diagnostics: Diagnostics,
}

fn initial_state(layout: &HilbertLayout, ions: (Level, Level)) -> Result<DensityState> {
    DensityState::basis(layout, ions.0, ions.1, &vec![0; layout.mode_count()])
}

/// Full master-equation evolution of the continuous protocol from
/// `|initial⟩|0⟩`.
pub fn run_continuous(params: &SchemeParams, schedule: &ContinuousSchedule) -> Result<Series> {
    schedule.validate()?;
    let layout = choose_layout(params, &schedule.channels, schedule.truncation)?;
    let generator = build_generator(params, &layout, &schedule.channels)?;
    let rho0 = initial_state(&layout, schedule.initial)?;
    let options = EvolveOptions::with_tol(schedule.tol);
    let traj = evolve(&rho0, &generator, (0.0, schedule.duration), &schedule.sample_times, &options)?;
    Ok(Series {
        records: traj.records,
        diagnostics: traj.diagnostics,
    })
}

/// Stepwise protocol from `|↓↓⟩|0⟩`. Record `k` holds the populations after
/// the repump of step `k`; record 0 is the initial state.
pub fn run_stepwise(params: &SchemeParams, schedule: &StepwiseSchedule) -> Result<Series> {
    schedule.validate()?;
    params.validate()?;
    let ch = schedule.channels;
    let t_coh = schedule.coherent_time(params)?;
    let layout = choose_layout(params, &ch, schedule.truncation)?;
    let none = Channels::none();
    let coherent = build_generator(
        params,
        &layout,
        &Channels {
            sideband: ch.sideband,
            carrier: ch.carrier,
            mode4: ch.mode4,
            spontaneous: ch.spontaneous,
            ..none
        },
    )?;
    let repump = build_generator(
        params,
        &layout,
        &Channels {
            repump: ch.repump,
            spontaneous: ch.spontaneous,
            ..none
        },
    )?;
    let cooling = build_generator(
        params,
        &layout,
        &Channels {
            cooling: ch.cooling,
            heating: ch.heating,
            ..none
        },
    )?;
    let sector = Arc::new(Sector::for_generators(&[&coherent, &repump, &cooling])?);
    let coherent = CompiledGenerator::compile(&coherent, sector.clone())?;
    let repump = CompiledGenerator::compile(&repump, sector.clone())?;
    let cooling = CompiledGenerator::compile(&cooling, sector.clone())?;
    let probe = PopulationProbe::new(&layout, &sector)?;

    let rho0 = initial_state(&layout, (Level::Down, Level::Down))?;
    let mut y = sector.pack(rho0.matrix())?;
    let mut monitor = Monitor::with_trace(&sector, Complex64::new(1.0, 0.0));
    let options = EvolveOptions {
        monitor: false,
        ..EvolveOptions::with_tol(schedule.tol)
    };
    // Each pulse starts from a near-pure reset state whose small eigenvalues
    // carry the error accumulated over the whole pulse, so the pulse gets a
    // tenth of the tolerance.
    let pulse_options = EvolveOptions {
        tol: (schedule.tol * 0.1).max(1e-12),
        ..options
    };
    let nbar = if ch.heating { params.nbar } else { 0.0 };
    let motion = DensityState::thermal_motion(&layout, &[nbar, 0.0]);

    let mut records = Vec::with_capacity(schedule.n_steps + 1);
    records.push(probe.record(0.0, &y));
    let mut t = 0.0;
    for k in 1..=schedule.n_steps {
        if ch.cooling && schedule.t_cool > 0.0 {
            match schedule.cooling_mode {
                CoolingMode::ThermalReset => y = thermal_reset(&layout, &sector, &y, &motion)?,
                CoolingMode::Lindblad => {
                    let s = propagate_packed(&cooling, &mut y, t, t + schedule.t_cool, &options)?;
                    monitor.diagnostics.stats.merge(&s);
                }
            }
        }
        t += schedule.t_cool;
        for (gen, dt, opts) in [(&coherent, t_coh, &pulse_options), (&repump, schedule.t_repump, &options)] {
            if dt > 0.0 {
                let s = propagate_packed(gen, &mut y, t, t + dt, opts)?;
                monitor.diagnostics.stats.merge(&s);
            }
            t += dt;
        }
        monitor.check(t, &y)?;
        records.push(probe.record(k as f64, &y));
    }
    if schedule.n_steps == 0 {
        monitor.check(0.0, &y)?;
    }
    Ok(Series {
        records,
        diagnostics: monitor.diagnostics,
    })
}

/// Keep the ions, replace the motion by `motion` (a flattened diagonal
/// distribution).
fn thermal_reset(layout: &HilbertLayout, sector: &Sector, y: &[Complex64], motion: &[f64]) -> Result<Vec<Complex64>> {
    let rho = DensityState::from_matrix(layout, sector.unpack(y))?;
    let ions: DMatrix<Complex64> = rho.reduce_to_ions();
    let fresh = DensityState::product(layout, &ions, motion)?;
    sector.pack(fresh.matrix())
}

/// Nodes and weights of the `n`-point Gauss–Hermite rule for the standard
/// normal distribution, by the Golub–Welsch eigenvalue method.
pub fn gauss_hermite(n: usize) -> Vec<(f64, f64)> {
    if n == 0 {
        return Vec::new();
    }
    let jacobi = DMatrix::from_fn(n, n, |i, j| {
        if i.abs_diff(j) == 1 {
            (i.max(j) as f64).sqrt()
        } else {
            0.0
        }
    });
    let eig = jacobi.symmetric_eigen();
    let mut out: Vec<(f64, f64)> = (0..n)
        .map(|k| (eig.eigenvalues[k], eig.eigenvectors[(0, k)].powi(2)))
        .collect();
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Exact symmetry of the rule.
    for k in 0..n / 2 {
        let (x, w) = (0.5 * (out[n - 1 - k].0 - out[k].0), 0.5 * (out[k].1 + out[n - 1 - k].1));
        out[k] = (-x, w);
        out[n - 1 - k] = (x, w);
    }
    if n % 2 == 1 {
        out[n / 2].0 = 0.0;
    }
    out
}

/// Gaussian distribution of the sideband imbalance `r`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnsembleSpec {
    pub r_mean: f64,
    pub r_rms: f64,
    pub nodes: usize,
}

impl Default for EnsembleSpec {
    fn default() -> Self {
        Self {
            r_mean: 0.0,
            r_rms: 0.014,
            nodes: 7,
        }
    }
}

impl EnsembleSpec {
    pub fn single(r: f64) -> Self {
        Self {
            r_mean: r,
            r_rms: 0.0,
            nodes: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r_rms.is_finite() && self.r_rms >= 0.0) {
            return Err(Error::param("r_rms", "must be finite and >= 0"));
        }
        if !self.r_mean.is_finite() {
            return Err(Error::param("r_mean", "must be finite"));
        }
        if self.nodes == 0 || self.nodes.is_multiple_of(2) {
            return Err(Error::param("nodes", format!("must be odd and >= 1, got {}", self.nodes)));
        }
        Ok(())
    }

    /// `(r, weight)` quadrature points. With `fold`, points mirrored about
    /// `r_mean` are merged, which is exact when the runner is even in
    /// `r − r_mean`.
    pub fn points(&self, fold: bool) -> Result<Vec<(f64, f64)>> {
        self.validate()?;
        if self.r_rms == 0.0 {
            return Ok(vec![(self.r_mean, 1.0)]);
        }
        let rule = gauss_hermite(self.nodes);
        let pts: Vec<(f64, f64)> = if fold {
            let mid = self.nodes / 2;
            (mid..self.nodes)
                .map(|k| {
                    let w = if k == mid { rule[k].1 } else { 2.0 * rule[k].1 };
                    (rule[k].0, w)
                })
                .collect()
        } else {
            rule
        };
        Ok(pts.into_iter().map(|(x, w)| (self.r_mean + self.r_rms * x, w)).collect())
    }
}

fn average(runs: &[(f64, Series)]) -> Result<Series> {
    let Some((_, first)) = runs.first() else {
        return Err(Error::param("ensemble", "no quadrature points"));
    };
    let len = first.records.len();
    if runs.iter().any(|(_, s)| s.records.len() != len) {
        return Err(Error::DimensionMismatch {
            expected: len,
            found: runs.iter().map(|(_, s)| s.records.len()).find(|&l| l != len).unwrap_or(len),
        });
    }
    let records = (0..len)
        .map(|i| PopulationRecord::weighted_sum(first.records[i].time, runs.iter().map(|(w, s)| (*w, &s.records[i]))))
        .collect();
    let mut diagnostics = first.diagnostics;
    for (_, s) in &runs[1..] {
        diagnostics.merge(&s.diagnostics);
    }
    Ok(Series { records, diagnostics })
}

/// Quadrature-weighted average of `runner(r)` over the ensemble. Nodes run
/// in parallel; the result does not depend on completion order.
pub fn gaussian_average<F>(runner: F, ensemble: &EnsembleSpec) -> Result<Series>
where
    F: Fn(f64) -> Result<Series> + Sync + Send,
{
    average_points(runner, &ensemble.points(false)?)
}

/// As [`gaussian_average`] for runners that are even in `r − r_mean`:
/// mirrored nodes are evaluated once.
pub fn gaussian_average_symmetric<F>(runner: F, ensemble: &EnsembleSpec) -> Result<Series>
where
    F: Fn(f64) -> Result<Series> + Sync + Send,
{
    average_points(runner, &ensemble.points(true)?)
}

fn average_points<F>(runner: F, points: &[(f64, f64)]) -> Result<Series>
where
    F: Fn(f64) -> Result<Series> + Sync + Send,
{
    let runs = try_par_map(points, |&(r, w)| Ok((w, runner(r)?)))?;
    average(&runs)
}

/// Either protocol.
#[derive(Debug, Clone, PartialEq)]
pub enum Schedule {
    Continuous(ContinuousSchedule),
    Stepwise(StepwiseSchedule),
}

impl Schedule {
    pub fn channels(&self) -> Channels {
        match self {
            Schedule::Continuous(s) => s.channels,
            Schedule::Stepwise(s) => s.channels,
        }
    }

    pub fn channels_mut(&mut self) -> &mut Channels {
        match self {
            Schedule::Continuous(s) => &mut s.channels,
            Schedule::Stepwise(s) => &mut s.channels,
        }
    }

    pub fn truncation_mut(&mut self) -> &mut Truncation {
        match self {
            Schedule::Continuous(s) => &mut s.truncation,
            Schedule::Stepwise(s) => &mut s.truncation,
        }
    }

    pub fn tol_mut(&mut self) -> &mut f64 {
        match self {
            Schedule::Continuous(s) => &mut s.tol,
            Schedule::Stepwise(s) => &mut s.tol,
        }
    }

    pub fn run(&self, params: &SchemeParams) -> Result<Series> {
        match self {
            Schedule::Continuous(s) => run_continuous(params, s),
            Schedule::Stepwise(s) => run_stepwise(params, s),
        }
    }

    /// Mean populations over the steady-state window.
    pub fn steady(&self, series: &Series) -> Result<PopulationRecord> {
        match self {
            Schedule::Continuous(s) => {
                let times: Vec<f64> = series.records.iter().map(|r| r.time).collect();
                window_average(&times, &series.records, s.window)
            }
            Schedule::Stepwise(s) => crate::dynamics::step_window_mean(&series.records, s.window),
        }
    }

    /// True if swapping the ions maps the run at `r_mean + d` onto the run
    /// at `r_mean − d`.
    fn symmetric(&self, params: &SchemeParams, ensemble: &EnsembleSpec) -> bool {
        let initial = match self {
            Schedule::Continuous(s) => s.initial,
            Schedule::Stepwise(_) => (Level::Down, Level::Down),
        };
        ensemble.r_mean == 0.0 && params.phi == 0.0 && initial.0 == initial.1
    }
}

/// Run `schedule` over the `r` ensemble; `params.r` is replaced by each node.
pub fn run_ensemble(params: &SchemeParams, schedule: &Schedule, ensemble: &EnsembleSpec) -> Result<Series> {
    let runner = |r: f64| {
        let p = SchemeParams { r, ..params.clone() };
        schedule.run(&p)
    };
    if schedule.symmetric(params, ensemble) {
        gaussian_average_symmetric(runner, ensemble)
    } else {
        gaussian_average(runner, ensemble)
    }
}

/// A modification of the baseline model for the error budget.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Ablation {
    NoSpontaneous,
    /// `r = 0` with no ensemble spread.
    RZero,
    /// `n̄ = 0`: no heating, and ground-state resets in the stepwise protocol.
    PerfectCooling,
    NoMode4,
    /// Switch off one named channel.
    Disable(String),
}

impl Ablation {
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        Ok(match s {
            "no-spontaneous" | "spontaneous" => Ablation::NoSpontaneous,
            "r-zero" | "r0" => Ablation::RZero,
            "perfect-cooling" | "nbar-zero" => Ablation::PerfectCooling,
            "no-mode4" | "mode4" => Ablation::NoMode4,
            other => {
                let name = other.strip_prefix("no-").unwrap_or(other);
                Channels::all().get(name)?;
                Ablation::Disable(name.to_string())
            }
        })
    }

    /// Parse a comma-separated list.
    pub fn parse_list(s: &str) -> Result<Vec<Self>> {
        s.split(',').filter(|x| !x.trim().is_empty()).map(Self::parse).collect()
    }

    pub fn label(&self) -> String {
        match self {
            Ablation::NoSpontaneous => "no-spontaneous".into(),
            Ablation::RZero => "r-zero".into(),
            Ablation::PerfectCooling => "perfect-cooling".into(),
            Ablation::NoMode4 => "no-mode4".into(),
            Ablation::Disable(name) => format!("no-{name}"),
        }
    }

    /// The standard four ablations.
    pub fn standard() -> Vec<Self> {
        vec![
            Ablation::NoSpontaneous,
            Ablation::RZero,
            Ablation::NoMode4,
            Ablation::PerfectCooling,
        ]
    }

    pub fn apply(&self, params: &mut SchemeParams, schedule: &mut Schedule, ensemble: &mut EnsembleSpec) -> Result<()> {
        match self {
            Ablation::NoSpontaneous => schedule.channels_mut().spontaneous = false,
            Ablation::RZero => {
                params.r = 0.0;
                *ensemble = EnsembleSpec::single(0.0);
            }
            Ablation::PerfectCooling => params.nbar = 0.0,
            Ablation::NoMode4 => schedule.channels_mut().mode4 = false,
            Ablation::Disable(name) => schedule.channels_mut().set(name, false)?,
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BudgetRow {
    pub label: String,
    pub channels: String,
    pub steady: PopulationRecord,
    pub delta_p_s: f64,
}

/// Steady-state singlet population of the baseline and of each ablation,
/// with the change relative to the baseline. Rows are evaluated in parallel
/// and returned baseline first, then in `ablations` order.
pub fn error_budget(
    params: &SchemeParams,
    schedule: &Schedule,
    ensemble: &EnsembleSpec,
    ablations: &[Ablation],
) -> Result<Vec<BudgetRow>> {
    let mut variants = vec![("baseline".to_string(), params.clone(), schedule.clone(), *ensemble)];
    for a in ablations {
        let (mut p, mut s, mut e) = (params.clone(), schedule.clone(), *ensemble);
        a.apply(&mut p, &mut s, &mut e)?;
        variants.push((a.label(), p, s, e));
    }
    let steady = try_par_map(&variants, |(_, p, s, e)| s.steady(&run_ensemble(p, s, e)?))?;
    let base = steady[0].p_s;
    Ok(variants
        .into_iter()
        .zip(steady)
        .map(|((label, _, s, _), st)| BudgetRow {
            label,
            channels: s.channels().to_string(),
            delta_p_s: st.p_s - base,
            steady: st,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scheme::GammaTable;

    const TAU: f64 = std::f64::consts::TAU;

    fn stepwise_params() -> SchemeParams {
        SchemeParams {
            omega_s: TAU * 8.4e3,
            omega_c: TAU * 1.24e3,
            r: 0.0,
            phi: 0.0,
            gamma_up_a: 5.0 / 9.0 / 3e-6,
            gamma_down_a: 4.0 / 9.0 / 3e-6,
            gamma_aa: 3.0 / 9.0 / 3e-6,
            kappa: 1e5,
            nbar: 0.08,
            gamma_table: GammaTable::uniform(1e-4 * TAU * 8.4e3),
            eta3: 0.180,
            eta4: 0.155,
            delta: TAU * 250e3,
            kappa4: 800.0,
        }
    }

    #[test]
    fn return_period() {
        let p = stepwise_params();
        let t = compute_t2pi(&p).unwrap();
        assert!((t - 117.8e-6).abs() < 0.1e-6);
        let s = StepwiseSchedule::default();
        assert!((s.step_duration(&p).unwrap() - 224e-6).abs() < 1e-6);
        let mut q = p.clone();
        q.omega_c = 0.0;
        assert_eq!(compute_t2pi(&q).unwrap(), TAU / q.omega_s);
        q.omega_s = 0.0;
        assert!(compute_t2pi(&q).is_err());
    }

    #[test]
    fn quadrature_rule() {
        for n in [1, 3, 7, 11] {
            let rule = gauss_hermite(n);
            let w: f64 = rule.iter().map(|p| p.1).sum();
            let m2: f64 = rule.iter().map(|p| p.1 * p.0 * p.0).sum();
            let m4: f64 = rule.iter().map(|p| p.1 * p.0.powi(4)).sum();
            assert!((w - 1.0).abs() < 1e-12);
            if n > 1 {
                assert!((m2 - 1.0).abs() < 1e-12);
            }
            if n > 2 {
                assert!((m4 - 3.0).abs() < 1e-11);
            }
        }
        let e = EnsembleSpec::default();
        let folded = e.points(true).unwrap();
        assert_eq!(folded.len(), 4);
        assert!((folded.iter().map(|p| p.1).sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(EnsembleSpec { nodes: 4, ..e }.validate().is_err());
        assert_eq!(EnsembleSpec { r_rms: 0.0, ..e }.points(false).unwrap(), vec![(0.0, 1.0)]);
    }

    #[test]
    fn layout_follows_channels() {
        let p = stepwise_params();
        let l = choose_layout(&p, &Channels::all(), Truncation::default()).unwrap();
        assert_eq!((l.ion_levels(), l.total_dim()), (4, 240));
        let c = Channels::parse("-spontaneous,-mode4").unwrap();
        let l = choose_layout(&p, &c, Truncation::default()).unwrap();
        assert_eq!((l.ion_levels(), l.total_dim()), (3, 45));
    }

    #[test]
    fn zero_steps_give_initial_populations() {
        let s = StepwiseSchedule {
            n_steps: 0,
            ..Default::default()
        };
        let out = run_stepwise(&stepwise_params(), &s).unwrap();
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.records[0].p_dd, 1.0);
    }

    #[test]
    fn singlet_is_dark_without_dissipation() {
        // Coherent sideband only; an r = 0 singlet does not move.
        let p = SchemeParams {
            omega_c: 0.0,
            ..stepwise_params()
        };
        let s = ContinuousSchedule {
            channels: Channels::parse("sideband").unwrap(),
            initial: (Level::Up, Level::Down),
            // A pure state has many zero eigenvalues; keep integration
            // errors well below the positivity tolerance.
            tol: 1e-11,
            ..ContinuousSchedule::uniform(1e-3, 1e-4)
        };
        let out = run_continuous(&p, &s).unwrap();
        // |↑↓⟩ = (|T⟩ + |S⟩)/√2 keeps its singlet half.
        for r in &out.records {
            assert!((r.p_s - 0.5).abs() < 1e-9);
        }
    }

    #[test]
    fn ablation_parsing() {
        assert_eq!(Ablation::parse("spontaneous").unwrap(), Ablation::NoSpontaneous);
        assert_eq!(Ablation::parse("no-heating").unwrap(), Ablation::Disable("heating".into()));
        assert!(matches!(Ablation::parse("bogus"), Err(Error::UnknownChannel(_))));
        assert_eq!(Ablation::parse_list("r0,mode4").unwrap(), vec![Ablation::RZero, Ablation::NoMode4]);
    }

    #[test]
    fn short_stepwise_runs_pump_the_singlet() {
        let s = StepwiseSchedule {
            n_steps: 6,
            window: (3, 6),
            channels: Channels::parse("-spontaneous,-mode4").unwrap(),
            ..Default::default()
        };
        let p = stepwise_params();
        let out = run_stepwise(&p, &s).unwrap();
        assert_eq!(out.records.len(), 7);
        for r in &out.records {
            assert!((r.total() - 1.0).abs() < 1e-8);
        }
        assert!(out.records[6].p_s > 0.4, "{:?}", out.records[6]);
        assert!(out.records[6].p_s > out.records[1].p_s);
        let lind = StepwiseSchedule {
            cooling_mode: CoolingMode::Lindblad,
            ..s.clone()
        };
        let out2 = run_stepwise(&p, &lind).unwrap();
        assert!((out2.records[6].p_s - out.records[6].p_s).abs() < 0.05);
    }
}
