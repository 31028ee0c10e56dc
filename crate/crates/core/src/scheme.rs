//! Physical parameters of the pumping scheme and the Hamiltonians and
//! Lindblad channels built from them.
//!
//! All rates and Rabi frequencies are angular (rad/s or 1/s). Unit-suffixed
//! inputs such as `"7.8 khz_2pi"` are converted by [`crate::config`].

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::operator::{
    embed_ion_operator, mode_lowering, transition, HilbertLayout, Ion, Level, QuantumOperator, MODE3, MODE4,
};

/// Tolerance used when checking that a built Hamiltonian is Hermitian.
pub const HERMITIAN_BUILD_TOL: f64 = 1e-12;

/// Spontaneous-emission rates induced by the sideband laser, keyed by
/// `(from, to)`. An entry `(i, j) → Γ` yields the jump operator `√Γ |j⟩⟨i|` on
/// each ion. Diagonal (Rayleigh) entries are accepted but never turned into
/// operators.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GammaTable {
    entries: BTreeMap<(Level, Level), f64>,
}

impl GammaTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Uniform table: every off-diagonal channel among `{↓, ↑, a}` plus the
    /// `↑ → x` leak at the same rate.
    pub fn uniform(rate: f64) -> Self {
        let mut t = Self::new();
        for from in [Level::Down, Level::Up, Level::Aux] {
            for to in [Level::Down, Level::Up, Level::Aux] {
                if from != to {
                    t.set(from, to, rate);
                }
            }
        }
        t.set(Level::Up, Level::Leak, rate);
        t
    }

    pub fn set(&mut self, from: Level, to: Level, rate: f64) {
        self.entries.insert((from, to), rate);
    }

    /// Rate for `from → to`; absent entries are zero.
    pub fn rate(&self, from: Level, to: Level) -> f64 {
        self.entries.get(&(from, to)).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (Level, Level, f64)> + '_ {
        self.entries.iter().map(|(&(f, t), &g)| (f, t, g))
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            entries: self.entries.iter().map(|(&k, &v)| (k, v * factor)).collect(),
        }
    }

    /// Aggregate rate out of `|↑⟩` into the unrepumped leak level.
    pub fn up_leak_rate(&self) -> f64 {
        self.rate(Level::Up, Level::Leak)
    }

    /// True if any nonzero entry involves the leak level.
    pub fn uses_leak(&self) -> bool {
        self.iter()
            .any(|(f, t, g)| g > 0.0 && f != t && (f == Level::Leak || t == Level::Leak))
    }
}

/// Every physical rate and coupling of the scheme, in angular units.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemeParams {
    pub omega_s: f64,
    pub omega_c: f64,
    pub r: f64,
    pub phi: f64,
    pub gamma_up_a: f64,
    pub gamma_down_a: f64,
    pub gamma_aa: f64,
    pub kappa: f64,
    pub nbar: f64,
    pub gamma_table: GammaTable,
    pub eta3: f64,
    pub eta4: f64,
    pub delta: f64,
    pub kappa4: f64,
}

impl SchemeParams {
    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("omega_s", self.omega_s),
            ("omega_c", self.omega_c),
            ("gamma_up_a", self.gamma_up_a),
            ("gamma_down_a", self.gamma_down_a),
            ("gamma_aa", self.gamma_aa),
            ("kappa", self.kappa),
            ("nbar", self.nbar),
            ("delta", self.delta),
            ("kappa4", self.kappa4),
        ];
        for (name, v) in nonneg {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::param(name, format!("must be finite and >= 0, got {v}")));
            }
        }
        if !self.r.is_finite() || self.r.abs() >= 1.0 {
            return Err(Error::param("r", format!("|r| must be < 1, got {}", self.r)));
        }
        if !self.phi.is_finite() {
            return Err(Error::param("phi", "must be finite"));
        }
        for (name, v) in [("eta3", self.eta3), ("eta4", self.eta4)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::param(name, format!("must lie in (0, 1), got {v}")));
            }
        }
        for (from, to, g) in self.gamma_table.iter() {
            if !g.is_finite() || g < 0.0 {
                return Err(Error::param(
                    format!("gamma_table.{}_{}", from.name(), to.name()),
                    format!("must be finite and >= 0, got {g}"),
                ));
            }
        }
        Ok(())
    }

    /// Heating rate balancing the cooling at occupation `n̄`.
    pub fn kappa_h(&self) -> f64 {
        self.kappa * self.nbar / (1.0 + self.nbar)
    }

    /// Total linewidth of `|a⟩`: `γ_↓a + γ_↑a + γ_aa`.
    pub fn linewidth(&self) -> f64 {
        self.gamma_down_a + self.gamma_up_a + self.gamma_aa
    }

    /// Depletion rate of `|a⟩`, `γ_↑a + γ_↓a`.
    pub fn repump_depletion(&self) -> f64 {
        self.gamma_up_a + self.gamma_down_a
    }

    /// Mode-4 coupling amplitude `Ω_s η₄/η₃`.
    pub fn mode4_coupling(&self) -> f64 {
        self.omega_s * self.eta4 / self.eta3
    }
}

/// Physical processes that can be switched on and off independently.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Channels {
    pub sideband: bool,
    pub carrier: bool,
    pub repump: bool,
    pub cooling: bool,
    pub heating: bool,
    pub spontaneous: bool,
    pub mode4: bool,
}

impl Default for Channels {
    fn default() -> Self {
        Self::all()
    }
}

impl Channels {
    pub const NAMES: [&'static str; 7] = [
        "sideband",
        "carrier",
        "repump",
        "cooling",
        "heating",
        "spontaneous",
        "mode4",
    ];

    pub fn all() -> Self {
        Self {
            sideband: true,
            carrier: true,
            repump: true,
            cooling: true,
            heating: true,
            spontaneous: true,
            mode4: true,
        }
    }

    pub fn none() -> Self {
        Self {
            sideband: false,
            carrier: false,
            repump: false,
            cooling: false,
            heating: false,
            spontaneous: false,
            mode4: false,
        }
    }

    fn flag_mut(&mut self, name: &str) -> Result<&mut bool> {
        Ok(match name {
            "sideband" => &mut self.sideband,
            "carrier" => &mut self.carrier,
            "repump" => &mut self.repump,
            "cooling" => &mut self.cooling,
            "heating" => &mut self.heating,
            "spontaneous" => &mut self.spontaneous,
            "mode4" => &mut self.mode4,
            other => return Err(Error::UnknownChannel(other.to_string())),
        })
    }

    pub fn get(&self, name: &str) -> Result<bool> {
        let mut c = *self;
        Ok(*c.flag_mut(name)?)
    }

    pub fn set(&mut self, name: &str, on: bool) -> Result<()> {
        *self.flag_mut(name)? = on;
        Ok(())
    }

    /// Parse a comma-separated list. A plain list enables exactly the named
    /// channels; a list whose entries all start with `-` disables them from
    /// the full set. `all` and `none` are accepted on their own.
    pub fn parse(spec: &str) -> Result<Self> {
        let items: Vec<&str> = spec.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
        match items.as_slice() {
            [] | ["all"] => return Ok(Self::all()),
            ["none"] => return Ok(Self::none()),
            _ => {}
        }
        let negative = items.iter().all(|s| s.starts_with('-'));
        let mut c = if negative { Self::all() } else { Self::none() };
        for item in items {
            let name = item.strip_prefix('-').unwrap_or(item);
            if item.starts_with('-') != negative {
                return Err(Error::Config(format!(
                    "channel list `{spec}` mixes enabled and disabled entries"
                )));
            }
            c.set(name, !negative)?;
        }
        Ok(c)
    }

    pub fn enabled_names(&self) -> Vec<&'static str> {
        Self::NAMES
            .iter()
            .copied()
            .filter(|n| self.get(n).unwrap_or(false))
            .collect()
    }
}

impl fmt::Display for Channels {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names = self.enabled_names();
        if names.is_empty() {
            f.write_str("none")
        } else {
            f.write_str(&names.join(","))
        }
    }
}

fn require_aux(layout: &HilbertLayout) -> Result<()> {
    if layout.has_level(Level::Aux) {
        Ok(())
    } else {
        Err(Error::MissingLevel("aux"))
    }
}

fn ion_op(layout: &HilbertLayout, ion: Ion, to: Level, from: Level) -> Result<QuantumOperator> {
    embed_ion_operator(layout, ion, &transition(layout.ion_levels(), to, from))
}

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

/// Raising part of the sideband drive,
/// `Ω_s[(1−r/2)|↑⟩₁⟨↓| + (1+r/2)e^{iφ}|↑⟩₂⟨↓|] b†`.
pub fn sideband_raising(params: &SchemeParams, layout: &HilbertLayout) -> Result<QuantumOperator> {
    let b_dag = mode_lowering(layout, MODE3)?.adjoint();
    let s1 = ion_op(layout, Ion::First, Level::Up, Level::Down)?.scale(c(1.0 - params.r / 2.0));
    let s2 = ion_op(layout, Ion::Second, Level::Up, Level::Down)?
        .scale(Complex64::from_polar(1.0 + params.r / 2.0, params.phi));
    s1.add(&s2)?.mul(&b_dag).map(|op| op.scale(c(params.omega_s)))
}

/// Sideband Hamiltonian `H_s` (raising part plus its adjoint).
pub fn build_sideband_hamiltonian(params: &SchemeParams, layout: &HilbertLayout) -> Result<QuantumOperator> {
    Ok(sideband_raising(params, layout)?.plus_adjoint())
}

/// Carrier Hamiltonian `H_c = Ω_c(|a⟩₁⟨↑| + |a⟩₂⟨↑|) + h.c.`.
pub fn build_carrier_hamiltonian(params: &SchemeParams, layout: &HilbertLayout) -> Result<QuantumOperator> {
    require_aux(layout)?;
    let a1 = ion_op(layout, Ion::First, Level::Aux, Level::Up)?;
    let a2 = ion_op(layout, Ion::Second, Level::Aux, Level::Up)?;
    Ok(a1.add(&a2)?.scale(c(params.omega_c)).plus_adjoint())
}

/// `H_coh = H_s + H_c`.
pub fn build_coherent_hamiltonian(params: &SchemeParams, layout: &HilbertLayout) -> Result<QuantumOperator> {
    require_aux(layout)?;
    build_sideband_hamiltonian(params, layout)?.add(&build_carrier_hamiltonian(params, layout)?)
}

/// The operator `X = Ω_s(η₄/η₃)(|↑⟩₁⟨↓| − |↑⟩₂⟨↓|) c†`, so that the mode-4
/// Hamiltonian is `X e^{−iδt} + X† e^{iδt}`.
pub fn build_mode4_coupling(params: &SchemeParams, layout: &HilbertLayout) -> Result<QuantumOperator> {
    if !layout.has_mode4() {
        return Err(Error::ChannelUnavailable("mode4: layout has no fourth mode"));
    }
    let c_dag = mode_lowering(layout, MODE4)?.adjoint();
    let s1 = ion_op(layout, Ion::First, Level::Up, Level::Down)?;
    let s2 = ion_op(layout, Ion::Second, Level::Up, Level::Down)?;
    Ok(s1.sub(&s2)?.mul(&c_dag)?.scale(c(params.mode4_coupling())))
}

/// Off-resonant mode-4 coupling at time `t` (seconds).
pub fn build_mode4_hamiltonian(params: &SchemeParams, layout: &HilbertLayout, t: f64) -> Result<QuantumOperator> {
    let x = build_mode4_coupling(params, layout)?;
    let phase = Complex64::from_polar(1.0, -params.delta * t);
    let term = x.scale(phase);
    Ok(term.plus_adjoint())
}

/// `{√κ b, √κ_h b†}` on mode 3 and, if present, `√κ₄ c` on mode 4. Zero-rate
/// operators are omitted.
pub fn build_cooling_lindblads(params: &SchemeParams, layout: &HilbertLayout) -> Result<Vec<QuantumOperator>> {
    let mut out = build_mode3_cooling(params, layout, true, true)?;
    if layout.has_mode4() {
        out.extend(build_mode4_cooling(params, layout)?);
    }
    Ok(out)
}

pub(crate) fn build_mode3_cooling(
    params: &SchemeParams,
    layout: &HilbertLayout,
    cooling: bool,
    heating: bool,
) -> Result<Vec<QuantumOperator>> {
    let b = mode_lowering(layout, MODE3)?;
    let mut out = Vec::new();
    if cooling && params.kappa > 0.0 {
        out.push(b.scale(c(params.kappa.sqrt())));
    }
    let kh = params.kappa_h();
    if heating && kh > 0.0 {
        out.push(b.adjoint().scale(c(kh.sqrt())));
    }
    Ok(out)
}

pub(crate) fn build_mode4_cooling(params: &SchemeParams, layout: &HilbertLayout) -> Result<Vec<QuantumOperator>> {
    if !layout.has_mode4() || params.kappa4 <= 0.0 {
        return Ok(Vec::new());
    }
    Ok(vec![mode_lowering(layout, MODE4)?.scale(c(params.kappa4.sqrt()))])
}

/// Per ion, `√γ_↑a |↑⟩⟨a|` and `√γ_↓a |↓⟩⟨a|`; zero rates are omitted.
pub fn build_repump_lindblads(params: &SchemeParams, layout: &HilbertLayout) -> Result<Vec<QuantumOperator>> {
    require_aux(layout)?;
    let mut out = Vec::new();
    for ion in [Ion::First, Ion::Second] {
        for (to, g) in [(Level::Up, params.gamma_up_a), (Level::Down, params.gamma_down_a)] {
            if g > 0.0 {
                out.push(ion_op(layout, ion, to, Level::Aux)?.scale(c(g.sqrt())));
            }
        }
    }
    Ok(out)
}

/// One jump operator `√Γ |j⟩⟨i|` per nonzero off-diagonal table entry and ion.
pub fn build_spontaneous_lindblads(params: &SchemeParams, layout: &HilbertLayout) -> Result<Vec<QuantumOperator>> {
    let mut out = Vec::new();
    for (from, to, g) in params.gamma_table.iter() {
        if from == to || g == 0.0 {
            continue;
        }
        if !layout.has_level(from) || !layout.has_level(to) {
            return Err(Error::MissingLevel(if from == Level::Leak || to == Level::Leak {
                "leak"
            } else {
                "aux"
            }));
        }
        for ion in [Ion::First, Ion::Second] {
            out.push(ion_op(layout, ion, to, from)?.scale(c(g.sqrt())));
        }
    }
    Ok(out)
}

/// A periodic Hamiltonian term `A e^{−iωt} + A† e^{iωt}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Harmonic {
    pub op: QuantumOperator,
    pub frequency: f64,
}

/// Lindblad generator
/// `ρ̇ = −i[H(t), ρ] + Σ_k (L_k ρ L_k† − ½{L_k†L_k, ρ})`
/// with `H(t) = H₀ + Σ_h (A_h e^{−iω_h t} + h.c.)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LindbladGenerator {
    layout: HilbertLayout,
    hamiltonian: QuantumOperator,
    harmonics: Vec<Harmonic>,
    lindblads: Vec<QuantumOperator>,
}

/// Assemble a generator, checking layouts and Hermiticity of the static part.
pub fn assemble_generator(
    hamiltonian: QuantumOperator,
    harmonics: Vec<Harmonic>,
    lindblads: Vec<QuantumOperator>,
) -> Result<LindbladGenerator> {
    let layout = hamiltonian.layout().clone();
    if harmonics.iter().any(|h| h.op.layout() != &layout) || lindblads.iter().any(|l| l.layout() != &layout) {
        return Err(Error::LayoutMismatch);
    }
    let dev = hamiltonian.hermiticity_error();
    if dev > HERMITIAN_BUILD_TOL * hamiltonian.matrix().max_abs().max(1.0) {
        return Err(Error::NotHermitian { deviation: dev });
    }
    Ok(LindbladGenerator {
        layout,
        hamiltonian,
        harmonics: harmonics.into_iter().filter(|h| !h.op.is_zero()).collect(),
        lindblads: lindblads.into_iter().filter(|l| !l.is_zero()).collect(),
    })
}

impl LindbladGenerator {
    /// Generator that does nothing.
    pub fn zero(layout: &HilbertLayout) -> Self {
        Self {
            layout: layout.clone(),
            hamiltonian: QuantumOperator::zero(layout),
            harmonics: Vec::new(),
            lindblads: Vec::new(),
        }
    }

    pub fn layout(&self) -> &HilbertLayout {
        &self.layout
    }

    pub fn static_hamiltonian(&self) -> &QuantumOperator {
        &self.hamiltonian
    }

    pub fn harmonics(&self) -> &[Harmonic] {
        &self.harmonics
    }

    pub fn lindblads(&self) -> &[QuantumOperator] {
        &self.lindblads
    }

    pub fn is_time_independent(&self) -> bool {
        self.harmonics.iter().all(|h| h.frequency == 0.0)
    }

    /// Full Hamiltonian at time `t`.
    pub fn hamiltonian_at(&self, t: f64) -> QuantumOperator {
        self.harmonics.iter().fold(self.hamiltonian.clone(), |acc, h| {
            let term = h.op.scale(Complex64::from_polar(1.0, -h.frequency * t)).plus_adjoint();
            acc.add(&term).expect("layouts checked on assembly")
        })
    }

    /// Time-independent generator with the harmonics frozen at time `t`.
    pub fn frozen_at(&self, t: f64) -> Self {
        Self {
            layout: self.layout.clone(),
            hamiltonian: self.hamiltonian_at(t),
            harmonics: Vec::new(),
            lindblads: self.lindblads.clone(),
        }
    }

    /// Dense evaluation of `ρ̇` at time `t`. Reference path; the propagators
    /// use the compiled form in [`crate::liouvillian`].
    pub fn apply(&self, t: f64, rho: &DMatrix<Complex64>) -> Result<DMatrix<Complex64>> {
        let n = self.layout.total_dim();
        if rho.nrows() != n || rho.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: rho.nrows().max(rho.ncols()),
            });
        }
        let h = self.hamiltonian_at(t).to_dense();
        let minus_i = Complex64::new(0.0, -1.0);
        let mut out = (&h * rho - rho * &h) * minus_i;
        for l in &self.lindblads {
            let ld = l.to_dense();
            let ldag = ld.adjoint();
            let ll = &ldag * &ld;
            out += &ld * rho * &ldag - (&ll * rho + rho * &ll) * c(0.5);
        }
        Ok(out)
    }
}

/// Build the full generator for the given channel selection. Channels that
/// the layout cannot host (mode 4 without a fourth mode) are skipped; a
/// spontaneous table that targets a missing level is an error.
pub fn build_generator(
    params: &SchemeParams,
    layout: &HilbertLayout,
    channels: &Channels,
) -> Result<LindbladGenerator> {
    params.validate()?;
    let mut h = QuantumOperator::zero(layout);
    if channels.sideband {
        h = h.add(&build_sideband_hamiltonian(params, layout)?)?;
    }
    if channels.carrier {
        h = h.add(&build_carrier_hamiltonian(params, layout)?)?;
    }
    let mut harmonics = Vec::new();
    if channels.mode4 && layout.has_mode4() {
        harmonics.push(Harmonic {
            op: build_mode4_coupling(params, layout)?,
            frequency: params.delta,
        });
    }
    let mut ls = build_mode3_cooling(params, layout, channels.cooling, channels.heating)?;
    if channels.cooling {
        ls.extend(build_mode4_cooling(params, layout)?);
    }
    if channels.repump {
        ls.extend(build_repump_lindblads(params, layout)?);
    }
    if channels.spontaneous {
        ls.extend(build_spontaneous_lindblads(params, layout)?);
    }
    assemble_generator(h, harmonics, ls)
}
