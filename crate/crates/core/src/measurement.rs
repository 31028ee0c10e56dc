//! Spin populations, simulated fluorescence detection and the
//! reconstruction of populations from detection probabilities.
//!
//! Detection counts ions in `|↓⟩`; `|↑⟩`, `|a⟩` and the leak level are all
//! dark. Analysis pulses are ideal rotations on the `{↓, ↑}` subspace of both
//! ions and act as the identity on `|a⟩` and the leak level.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::liouvillian::Sector;
use crate::operator::{DensityState, HilbertLayout, Level, MODE3};

/// Populations of the two-ion internal states. `a_manifold` collects every
/// state with at least one ion in `|a⟩` and none in the leak level; `leak`
/// every state with at least one ion in the leak level.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SpinPopulations {
    pub singlet: f64,
    pub triplet: f64,
    pub up_up: f64,
    pub down_down: f64,
    pub a_manifold: f64,
    pub leak: f64,
}

impl SpinPopulations {
    pub fn total(&self) -> f64 {
        self.singlet + self.triplet + self.up_up + self.down_down + self.a_manifold + self.leak
    }
}

/// Time- or step-stamped populations as emitted by the protocols.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PopulationRecord {
    /// Seconds for continuous runs, step number for stepwise runs.
    pub time: f64,
    pub p_s: f64,
    pub p_t: f64,
    pub p_uu: f64,
    pub p_dd: f64,
    pub p_a: f64,
    pub p_leak: f64,
    pub nbar_mode3: f64,
}

impl PopulationRecord {
    pub fn from_populations(time: f64, p: &SpinPopulations, nbar_mode3: f64) -> Self {
        Self {
            time,
            p_s: p.singlet,
            p_t: p.triplet,
            p_uu: p.up_up,
            p_dd: p.down_down,
            p_a: p.a_manifold,
            p_leak: p.leak,
            nbar_mode3,
        }
    }

    pub fn total(&self) -> f64 {
        self.p_s + self.p_t + self.p_uu + self.p_dd + self.p_a + self.p_leak
    }

    /// Field values in CSV column order (after the time column).
    pub fn values(&self) -> [f64; 7] {
        [self.p_s, self.p_t, self.p_uu, self.p_dd, self.p_a, self.p_leak, self.nbar_mode3]
    }

    /// Linear combination `Σ wᵢ recordᵢ`, used for window averages and
    /// quadrature sums. The time stamp is taken from `time`.
    pub fn weighted_sum<'a>(time: f64, terms: impl IntoIterator<Item = (f64, &'a PopulationRecord)>) -> Self {
        let mut out = PopulationRecord {
            time,
            ..Default::default()
        };
        for (w, r) in terms {
            out.p_s += w * r.p_s;
            out.p_t += w * r.p_t;
            out.p_uu += w * r.p_uu;
            out.p_dd += w * r.p_dd;
            out.p_a += w * r.p_a;
            out.p_leak += w * r.p_leak;
            out.nbar_mode3 += w * r.nbar_mode3;
        }
        out
    }
}

/// Populations from a reduced two-ion density matrix with `levels` states per
/// ion.
pub fn populations_from_ions(ions: &DMatrix<Complex64>, levels: usize) -> SpinPopulations {
    let idx = |a: Level, b: Level| a.index() * levels + b.index();
    let ud = idx(Level::Up, Level::Down);
    let du = idx(Level::Down, Level::Up);
    let half = 0.5 * (ions[(ud, ud)].re + ions[(du, du)].re);
    let coherence = ions[(ud, du)].re;
    let mut a_manifold = 0.0;
    let mut leak = 0.0;
    for s in 0..levels * levels {
        let (l1, l2) = (s / levels, s % levels);
        let p = ions[(s, s)].re;
        if l1 == Level::Leak.index() || l2 == Level::Leak.index() {
            leak += p;
        } else if l1 == Level::Aux.index() || l2 == Level::Aux.index() {
            a_manifold += p;
        }
    }
    SpinPopulations {
        singlet: half - coherence,
        triplet: half + coherence,
        up_up: ions[(idx(Level::Up, Level::Up), idx(Level::Up, Level::Up))].re,
        down_down: ions[(idx(Level::Down, Level::Down), idx(Level::Down, Level::Down))].re,
        a_manifold,
        leak,
    }
}

pub fn spin_populations(rho: &DensityState) -> SpinPopulations {
    populations_from_ions(&rho.reduce_to_ions(), rho.layout().ion_levels())
}

/// Population record of a full state.
pub fn record(time: f64, rho: &DensityState) -> PopulationRecord {
    let nbar = rho.mean_occupation(MODE3).unwrap_or(0.0);
    PopulationRecord::from_populations(time, &spin_populations(rho), nbar)
}

/// Precomputed index lists that read a [`PopulationRecord`] straight out of
/// a packed sector vector without unpacking the density matrix.
#[derive(Debug, Clone)]
pub struct PopulationProbe {
    levels: usize,
    /// For each spin index `s`, positions of `ρ_{(s,k),(s,k)}` over motion `k`.
    diagonal: Vec<Vec<usize>>,
    /// Positions of `ρ_{(↑↓,k),(↓↑,k)}`.
    coherence: Vec<usize>,
    /// `(position, n₃)` for every diagonal entry with `n₃ > 0`.
    occupation: Vec<(usize, f64)>,
}

impl PopulationProbe {
    pub fn new(layout: &HilbertLayout, sector: &Sector) -> Result<Self> {
        if sector.dim() != layout.total_dim() {
            return Err(Error::DimensionMismatch {
                expected: layout.total_dim(),
                found: sector.dim(),
            });
        }
        let levels = layout.ion_levels();
        let m = layout.motional_dim();
        let pos = |i: usize, j: usize| {
            sector
                .position(i, j)
                .ok_or_else(|| Error::InvalidState("population entry outside sector".into()))
        };
        let mut diagonal = vec![Vec::with_capacity(m); levels * levels];
        let mut occupation = Vec::new();
        for i in 0..layout.total_dim() {
            let p = pos(i, i)?;
            diagonal[i / m].push(p);
            let n3 = layout.decode(i).modes[MODE3];
            if n3 > 0 {
                occupation.push((p, n3 as f64));
            }
        }
        let ud = layout.spin_index(Level::Up, Level::Down);
        let du = layout.spin_index(Level::Down, Level::Up);
        let coherence = (0..m).map(|k| pos(ud * m + k, du * m + k)).collect::<Result<_>>()?;
        Ok(Self {
            levels,
            diagonal,
            coherence,
            occupation,
        })
    }

    pub fn record(&self, time: f64, y: &[Complex64]) -> PopulationRecord {
        let l = self.levels;
        let diag: Vec<f64> = self
            .diagonal
            .iter()
            .map(|ps| ps.iter().map(|&p| y[p].re).sum())
            .collect();
        let coherence: f64 = self.coherence.iter().map(|&p| y[p].re).sum();
        let mut ions = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            l * l,
            diag.iter().map(|&d| Complex64::new(d, 0.0)),
        ));
        let ud = Level::Up.index() * l + Level::Down.index();
        let du = Level::Down.index() * l + Level::Up.index();
        ions[(ud, du)] = Complex64::new(coherence, 0.0);
        let pops = populations_from_ions(&ions, l);
        let nbar = self.occupation.iter().map(|&(p, n)| n * y[p].re).sum();
        PopulationRecord::from_populations(time, &pops, nbar)
    }
}

/// Analysis pulse applied before detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Pulse {
    None,
    Pi,
    /// π/2 pulse with a uniformly random phase, averaged exactly.
    PiHalfPhaseAveraged,
}

/// Probabilities of detecting two, one or zero ions bright.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionResult {
    pub p2: f64,
    pub p1: f64,
    pub p0: f64,
    pub pulse: Pulse,
}

/// Single-ion rotation by `angle` about the axis `(cos φ, sin φ)` on
/// `{↓, ↑}`, identity on the other levels.
pub fn qubit_rotation(levels: usize, angle: f64, phase: f64) -> DMatrix<Complex64> {
    let mut r = DMatrix::identity(levels, levels);
    let (d, u) = (Level::Down.index(), Level::Up.index());
    let c = Complex64::new((angle / 2.0).cos(), 0.0);
    let s = (angle / 2.0).sin();
    r[(d, d)] = c;
    r[(u, u)] = c;
    r[(d, u)] = Complex64::new(0.0, -s) * Complex64::from_polar(1.0, -phase);
    r[(u, d)] = Complex64::new(0.0, -s) * Complex64::from_polar(1.0, phase);
    r
}

fn bright_counts(ions: &DMatrix<Complex64>, levels: usize) -> (f64, f64, f64) {
    let down = Level::Down.index();
    let (mut p2, mut p1, mut p0) = (0.0, 0.0, 0.0);
    for s in 0..levels * levels {
        let bright = (s / levels == down) as u8 + (s % levels == down) as u8;
        let p = ions[(s, s)].re;
        match bright {
            2 => p2 += p,
            1 => p1 += p,
            _ => p0 += p,
        }
    }
    (p2, p1, p0)
}

fn rotate(ions: &DMatrix<Complex64>, u: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    u * ions * u.adjoint()
}

/// Detection on a reduced two-ion matrix.
pub fn detect_ions(ions: &DMatrix<Complex64>, levels: usize, pulse: Pulse) -> DetectionResult {
    let rotated = match pulse {
        Pulse::None => ions.clone(),
        Pulse::Pi => {
            let r = qubit_rotation(levels, std::f64::consts::PI, 0.0);
            rotate(ions, &r.kronecker(&r))
        }
        Pulse::PiHalfPhaseAveraged => phase_averaged_pi_half(ions, levels),
    };
    let (p2, p1, p0) = bright_counts(&rotated, levels);
    DetectionResult { p2, p1, p0, pulse }
}

/// `E_φ[U(φ) ρ U(φ)†]` for `U(φ) = R(φ) ⊗ R(φ)` with `R` a π/2 rotation.
///
/// `R(φ) = R₀ + e^{iφ}R₊ + e^{−iφ}R₋`, so `U(φ) = Σ_m e^{imφ} U_m` with
/// `m ∈ {−2,…,2}`, and the phase average keeps only the diagonal terms
/// `Σ_m U_m ρ U_m†`.
fn phase_averaged_pi_half(ions: &DMatrix<Complex64>, levels: usize) -> DMatrix<Complex64> {
    let (d, u) = (Level::Down.index(), Level::Up.index());
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut r0 = DMatrix::identity(levels, levels);
    r0[(d, d)] = Complex64::new(s, 0.0);
    r0[(u, u)] = Complex64::new(s, 0.0);
    let mut rp = DMatrix::zeros(levels, levels);
    rp[(u, d)] = Complex64::new(0.0, -s);
    let mut rm = DMatrix::zeros(levels, levels);
    rm[(d, u)] = Complex64::new(0.0, -s);
    let parts = [(0i32, r0), (1, rp), (-1, rm)];
    let mut by_m: Vec<DMatrix<Complex64>> = vec![DMatrix::zeros(levels * levels, levels * levels); 5];
    for (m1, a) in &parts {
        for (m2, b) in &parts {
            by_m[(m1 + m2 + 2) as usize] += a.kronecker(b);
        }
    }
    by_m.iter().fold(DMatrix::zeros(levels * levels, levels * levels), |acc, um| acc + rotate(ions, um))
}

pub fn simulate_detection(rho: &DensityState, pulse: Pulse) -> DetectionResult {
    detect_ions(&rho.reduce_to_ions(), rho.layout().ion_levels(), pulse)
}

/// Populations recovered from the three detection experiments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reconstruction {
    pub singlet: f64,
    pub triplet: f64,
    pub up_up: f64,
    pub down_down: f64,
    /// Estimated weight of states with both ions outside the qubit manifold,
    /// `(p_out/2)²`, assuming the two ions leave it independently.
    pub aa_estimate: f64,
    /// Set when a population falls outside `[0, 1]` or `aa_estimate`
    /// exceeds [`AA_NEGLIGIBLE`]; in either case the assumption behind the
    /// reconstruction no longer holds.
    pub flagged: bool,
}

/// Range tolerance on reconstructed populations.
pub const RECONSTRUCTION_TOL: f64 = 1e-9;

/// Largest two-ions-outside weight still treated as negligible.
pub const AA_NEGLIGIBLE: f64 = 0.01;

/// Invert the detection probabilities. The `|aa⟩` weight is not observable
/// from these three experiments (it cancels from every combination), so it
/// is assumed to vanish; the result is flagged when that is implausible.
pub fn reconstruct_populations(
    none: &DetectionResult,
    pi: &DetectionResult,
    pi_half: &DetectionResult,
) -> Result<Reconstruction> {
    if none.pulse != Pulse::None || pi.pulse != Pulse::Pi || pi_half.pulse != Pulse::PiHalfPhaseAveraged {
        return Err(Error::InvalidState("detection results passed in the wrong order".into()));
    }
    // ρ_↑↓,↑↓ + ρ_↓↑,↓↑
    let diag_sum = none.p1 - (pi.p0 - none.p2);
    let coherence = -0.5 + 2.0 * pi_half.p0 + 0.5 * (none.p2 - none.p0) + 0.5 * (pi.p2 - pi.p0);
    let singlet = 0.5 * diag_sum - coherence;
    let triplet = 0.5 * diag_sum + coherence;
    let up_up = pi.p2;
    let down_down = none.p2;
    let aa_estimate = (0.5 * outside_manifold_probability(none, pi).max(0.0)).powi(2);
    let in_range = |p: f64| (-RECONSTRUCTION_TOL..=1.0 + RECONSTRUCTION_TOL).contains(&p);
    let flagged =
        ![singlet, triplet, up_up, down_down].into_iter().all(in_range) || aa_estimate > AA_NEGLIGIBLE;
    Ok(Reconstruction {
        singlet,
        triplet,
        up_up,
        down_down,
        aa_estimate,
        flagged,
    })
}

/// Probability of at least one ion outside the qubit manifold,
/// `P₀ + P₀,π − (P₂ + P₂,π)`.
pub fn outside_manifold_probability(none: &DetectionResult, pi: &DetectionResult) -> f64 {
    none.p0 + pi.p0 - (none.p2 + pi.p2)
}
