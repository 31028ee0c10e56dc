//! Effective rate model of the pumping scheme.
//!
//! The ground-state populations `P_S, P_↑↑, P_T, P_↓↓` are coupled by a
//! preparation rate `γ_+`, a reshuffling rate `κ_res` and three loss rates
//! `γ⁻_↑↑, γ⁻_T, γ⁻_↓↓` obtained by adiabatic elimination of the excited
//! states. The model is cheap and serves as an independent check of the
//! master-equation pipeline.

use nalgebra::{Matrix5, Vector5};

use crate::error::{Error, Result};
use crate::operator::Level;
use crate::scheme::SchemeParams;

/// Formula used for the singlet preparation rate `γ_+`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PrepVariant {
    /// Overdamped weak drive, `4γ_↓a Ω_c²/γ²`.
    Weak,
    /// With power broadening, `4γ_↓a Ω_c²/(γ² + 16Ω_c²)`.
    Broadened,
    /// Power broadening and thermal ground-state weight, with the prefactor
    /// and broadening term `γ_↓a Ω_c²/((γ² + 4Ω_c²)(1 + n̄))`.
    #[default]
    Thermal,
    /// The broadened rate times `1/(1 + n̄)`.
    ThermalConsistent,
}

impl PrepVariant {
    pub const NAMES: [&'static str; 4] = ["weak", "broadened", "thermal", "thermal-consistent"];

    pub fn name(self) -> &'static str {
        match self {
            PrepVariant::Weak => "weak",
            PrepVariant::Broadened => "broadened",
            PrepVariant::Thermal => "thermal",
            PrepVariant::ThermalConsistent => "thermal-consistent",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "weak" => Ok(PrepVariant::Weak),
            "broadened" => Ok(PrepVariant::Broadened),
            "thermal" => Ok(PrepVariant::Thermal),
            "thermal-consistent" => Ok(PrepVariant::ThermalConsistent),
            other => Err(Error::param(
                "variant",
                format!("unknown variant `{other}`, expected one of {:?}", Self::NAMES),
            )),
        }
    }
}

/// All effective rates, in 1/s.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffectiveRates {
    pub gamma_plus: f64,
    pub kappa_res: f64,
    pub gamma_inh: f64,
    /// Spontaneous-emission losses from the singlet.
    pub se_uu: f64,
    pub se_t: f64,
    pub se_dd: f64,
    pub kappa_r: f64,
    pub kappa_4: f64,
    /// Rate of `|↑⟩` into the unrepumped leak states.
    pub gamma_up_leak: f64,
    /// Linewidth-weighted repump branching used to split `γ⁻_inh`.
    pub branch_up: f64,
    pub gamma_minus_uu: f64,
    pub gamma_minus_t: f64,
    pub gamma_minus_dd: f64,
}

impl EffectiveRates {
    /// Assemble the composite loss rates from their components.
    ///
    /// `branch_up` is the fraction `γ_↑a/(γ_↑a + γ_↓a)` of repumps ending in
    /// `|↑⟩`.
    #[allow(clippy::too_many_arguments)]
    pub fn from_components(
        gamma_plus: f64,
        kappa_res: f64,
        gamma_inh: f64,
        se: [f64; 3],
        kappa_r: f64,
        kappa_4: f64,
        gamma_up_leak: f64,
        branch_up: f64,
    ) -> Self {
        let branch_down = 1.0 - branch_up;
        Self {
            gamma_plus,
            kappa_res,
            gamma_inh,
            se_uu: se[0],
            se_t: se[1],
            se_dd: se[2],
            kappa_r,
            kappa_4,
            gamma_up_leak,
            branch_up,
            gamma_minus_uu: gamma_inh * branch_up + se[0] + kappa_r + kappa_4,
            gamma_minus_t: gamma_inh * branch_down / 2.0 + se[1],
            gamma_minus_dd: se[2],
        }
    }

    /// Overall loss rate from the singlet.
    pub fn gamma_minus(&self) -> f64 {
        self.gamma_minus_uu + self.gamma_minus_t + self.gamma_minus_dd
    }

    /// Every rate multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self::from_components(
            self.gamma_plus * factor,
            self.kappa_res * factor,
            self.gamma_inh * factor,
            [self.se_uu * factor, self.se_t * factor, self.se_dd * factor],
            self.kappa_r * factor,
            self.kappa_4 * factor,
            self.gamma_up_leak * factor,
            self.branch_up,
        )
    }

    fn all(&self) -> [(&'static str, f64); 13] {
        [
            ("gamma_plus", self.gamma_plus),
            ("kappa_res", self.kappa_res),
            ("gamma_inh", self.gamma_inh),
            ("se_uu", self.se_uu),
            ("se_t", self.se_t),
            ("se_dd", self.se_dd),
            ("kappa_r", self.kappa_r),
            ("kappa_4", self.kappa_4),
            ("gamma_up_leak", self.gamma_up_leak),
            ("branch_up", self.branch_up),
            ("gamma_minus_uu", self.gamma_minus_uu),
            ("gamma_minus_t", self.gamma_minus_t),
            ("gamma_minus_dd", self.gamma_minus_dd),
        ]
    }

    /// `(name, value)` pairs for reporting.
    pub fn fields(&self) -> Vec<(&'static str, f64)> {
        self.all().to_vec()
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Evaluate every effective rate for `params`.
pub fn compute_effective_rates(params: &SchemeParams, variant: PrepVariant) -> Result<EffectiveRates> {
    params.validate()?;
    let p = params;
    let gamma = p.linewidth();
    let oc2 = p.omega_c * p.omega_c;
    if p.omega_s == 0.0 {
        return Err(Error::Regime("Ω_s = 0 makes the inherent depumping rate singular".into()));
    }
    if p.kappa == 0.0 && p.r != 0.0 && p.nbar != 0.0 {
        return Err(Error::Regime("κ = 0 with r ≠ 0 and n̄ ≠ 0 makes κ⁻_r singular".into()));
    }
    if p.delta == 0.0 && p.kappa4 != 0.0 {
        return Err(Error::Regime("δ = 0 makes the mode-4 depumping rate singular".into()));
    }
    if gamma == 0.0 && oc2 != 0.0 && variant == PrepVariant::Weak {
        return Err(Error::Regime("γ = 0 makes the weak-drive preparation rate singular".into()));
    }

    let thermal = 1.0 / (1.0 + p.nbar);
    let gamma_plus = match variant {
        PrepVariant::Weak => ratio(4.0 * p.gamma_down_a * oc2, gamma * gamma),
        PrepVariant::Broadened => ratio(4.0 * p.gamma_down_a * oc2, gamma * gamma + 16.0 * oc2),
        PrepVariant::Thermal => ratio(p.gamma_down_a * oc2, gamma * gamma + 4.0 * oc2) * thermal,
        PrepVariant::ThermalConsistent => ratio(4.0 * p.gamma_down_a * oc2, gamma * gamma + 16.0 * oc2) * thermal,
    };
    let kappa_res = p.kappa / 2.0;
    let gamma_inh = (gamma + p.kappa) * oc2 / (4.0 * p.omega_s * p.omega_s);

    // Scattering into |a⟩ is followed by repumping, so the a-decay rates in
    // the loss formulas are the repump rates. `g(from, to)` reads the
    // scattering table.
    let g = |from, to| p.gamma_table.rate(from, to);
    let (up_a, down_a) = (p.gamma_up_a, p.gamma_down_a);
    let sum = up_a + down_a;
    let half_k = p.kappa / 2.0;
    let a_from_down = g(Level::Down, Level::Aux);
    let a_from_up = g(Level::Up, Level::Aux);
    let se_uu = g(Level::Down, Level::Up)
        + ratio(up_a * a_from_down, sum)
        + ratio(up_a * a_from_up, 2.0 * sum) * (1.0 + ratio(half_k, sum + half_k));
    let se_t = ratio(down_a * a_from_down, 2.0 * sum)
        + ratio(sum * a_from_up, 4.0 * (sum + half_k))
        + ratio(down_a * a_from_up, 2.0 * sum) * ratio(half_k, sum + half_k);
    let se_dd = g(Level::Up, Level::Down) + ratio(down_a * a_from_up, 2.0 * (sum + half_k));

    let kappa_r = if p.r == 0.0 || p.nbar == 0.0 {
        0.0
    } else {
        16.0 * (p.r * p.omega_s).powi(2) * p.nbar / (5.0 * p.kappa)
    };
    let kappa_4 = if p.kappa4 == 0.0 {
        0.0
    } else {
        2.0 * p.kappa4 * p.mode4_coupling().powi(2) / (p.delta * p.delta)
    };

    Ok(EffectiveRates::from_components(
        gamma_plus,
        kappa_res,
        gamma_inh,
        [se_uu, se_t, se_dd],
        kappa_r,
        kappa_4,
        p.gamma_table.up_leak_rate(),
        ratio(up_a, sum),
    ))
}

/// Populations of the rate model.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RatePopulations {
    pub p_s: f64,
    pub p_uu: f64,
    pub p_t: f64,
    pub p_dd: f64,
    pub p_leak: f64,
}

impl RatePopulations {
    pub fn down_down() -> Self {
        Self {
            p_dd: 1.0,
            ..Self::default()
        }
    }

    pub fn total(&self) -> f64 {
        self.p_s + self.p_uu + self.p_t + self.p_dd + self.p_leak
    }

    fn to_vector(self) -> Vector5<f64> {
        Vector5::new(self.p_s, self.p_uu, self.p_t, self.p_dd, self.p_leak)
    }

    fn from_vector(v: &Vector5<f64>) -> Self {
        Self {
            p_s: v[0],
            p_uu: v[1],
            p_t: v[2],
            p_dd: v[3],
            p_leak: v[4],
        }
    }

    fn validate(&self) -> Result<()> {
        let v = self.to_vector();
        if v.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidState("rate populations must be finite and nonnegative".into()));
        }
        if self.total() > 1.0 + 1e-12 {
            return Err(Error::InvalidState(format!("rate populations sum to {}", self.total())));
        }
        Ok(())
    }
}

/// Generator of the rate equations in the order `(S, ↑↑, T, ↓↓, leak)`.
pub fn rate_matrix(rates: &EffectiveRates, include_leak: bool) -> Matrix5<f64> {
    let r = rates;
    let gp = r.gamma_plus;
    let k = r.kappa_res;
    let leak = if include_leak { r.gamma_up_leak } else { 0.0 };
    #[rustfmt::skip]
    let m = Matrix5::new(
        -r.gamma_minus() - leak, gp,               0.0,     0.0, 0.0,
        r.gamma_minus_uu,        -2.0 * gp - 2.0 * leak, k, 0.0, 0.0,
        r.gamma_minus_t,         gp,               -k - leak, k, 0.0,
        r.gamma_minus_dd,        0.0,              0.0,     -k,  0.0,
        leak,                    2.0 * leak,       leak,    0.0, 0.0,
    );
    m
}

/// Solve the rate equations exactly (matrix exponential) at `sample_times`
/// measured from `t0`.
pub fn integrate_rate_equations(
    rates: &EffectiveRates,
    p0: RatePopulations,
    t0: f64,
    sample_times: &[f64],
    include_leak: bool,
) -> Result<Vec<(f64, RatePopulations)>> {
    p0.validate()?;
    let m = rate_matrix(rates, include_leak);
    let v0 = p0.to_vector();
    sample_times
        .iter()
        .map(|&t| {
            if t < t0 {
                return Err(Error::param("sample_times", format!("{t} precedes the start time {t0}")));
            }
            let v = (m * (t - t0)).exp() * v0;
            Ok((t, RatePopulations::from_vector(&v)))
        })
        .collect()
}

/// Closed-form steady state of the closed (leak-free) rate model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteadyState {
    pub fidelity: f64,
    pub error: f64,
}

/// `F = 1/(1 + E)` with
/// `E = γ_−/γ_+ + (γ⁻_↑↑ + 2γ⁻_T + 3γ⁻_↓↓)/κ_res`.
pub fn steady_state_closed_form(rates: &EffectiveRates) -> Result<SteadyState> {
    if rates.gamma_plus <= 0.0 {
        return Err(Error::NoPumping("γ_+ = 0"));
    }
    if rates.kappa_res <= 0.0 {
        return Err(Error::NoPumping("κ_res = 0"));
    }
    let r = rates;
    let error = r.gamma_minus() / r.gamma_plus
        + (r.gamma_minus_uu + 2.0 * r.gamma_minus_t + 3.0 * r.gamma_minus_dd) / r.kappa_res;
    Ok(SteadyState {
        fidelity: 1.0 / (1.0 + error),
        error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scheme::GammaTable;

    const TAU: f64 = std::f64::consts::TAU;

    fn continuous() -> SchemeParams {
        let depletion = 1.0 / 88e-6;
        SchemeParams {
            omega_s: TAU * 7.8e3,
            omega_c: TAU * 0.543e3,
            r: 0.0,
            phi: 0.0,
            gamma_up_a: depletion * 5.0 / 9.0,
            gamma_down_a: depletion * 4.0 / 9.0,
            gamma_aa: depletion * 3.0 / 9.0,
            kappa: 1.0 / 203e-6,
            nbar: 0.11,
            gamma_table: GammaTable::uniform(1e-4 * TAU * 7.8e3),
            eta3: 0.180,
            eta4: 0.155,
            delta: TAU * 250e3,
            kappa4: 800.0,
        }
    }

    #[test]
    fn variants_and_inherent_rate() {
        let p = continuous();
        let weak = compute_effective_rates(&p, PrepVariant::Weak).unwrap();
        let thermal = compute_effective_rates(&p, PrepVariant::Thermal).unwrap();
        let consistent = compute_effective_rates(&p, PrepVariant::ThermalConsistent).unwrap();
        let broadened = compute_effective_rates(&p, PrepVariant::Broadened).unwrap();
        assert!((weak.gamma_plus - 1024.0).abs() < 1.0);
        assert!((broadened.gamma_plus - 565.6).abs() < 0.5);
        assert!((thermal.gamma_plus - 191.8).abs() < 0.2);
        assert!((consistent.gamma_plus * 1.11 - broadened.gamma_plus).abs() < 1e-9);
        assert!((thermal.kappa_res - 2463.05).abs() < 0.1);
        assert!((thermal.gamma_inh - 24.33).abs() < 0.01);
        assert!((thermal.kappa_4 - 1.155).abs() < 0.005);
        assert_eq!(thermal.kappa_r, 0.0);
    }

    #[test]
    fn composites_follow_components() {
        let mut p = continuous();
        p.r = 0.02;
        let r = compute_effective_rates(&p, PrepVariant::Thermal).unwrap();
        let b = p.gamma_up_a / (p.gamma_up_a + p.gamma_down_a);
        assert_eq!(r.gamma_minus_uu, r.gamma_inh * b + r.se_uu + r.kappa_r + r.kappa_4);
        assert_eq!(r.gamma_minus_t, r.gamma_inh * (1.0 - b) / 2.0 + r.se_t);
        assert_eq!(r.gamma_minus_dd, r.se_dd);
        let expect = 16.0 * (0.02 * p.omega_s).powi(2) * p.nbar / (5.0 * p.kappa);
        assert!((r.kappa_r - expect).abs() < 1e-9 * expect);
    }

    #[test]
    fn no_carrier_means_no_pumping() {
        let mut p = continuous();
        p.omega_c = 0.0;
        let r = compute_effective_rates(&p, PrepVariant::Thermal).unwrap();
        assert_eq!(r.gamma_plus, 0.0);
        assert_eq!(r.gamma_inh, 0.0);
        assert_eq!(steady_state_closed_form(&r).unwrap_err(), Error::NoPumping("γ_+ = 0"));
    }

    #[test]
    fn regime_guards() {
        let mut p = continuous();
        p.omega_s = 0.0;
        assert!(matches!(compute_effective_rates(&p, PrepVariant::Thermal), Err(Error::Regime(_))));
        let mut p = continuous();
        p.kappa = 0.0;
        p.r = 0.01;
        assert!(matches!(compute_effective_rates(&p, PrepVariant::Thermal), Err(Error::Regime(_))));
    }

    #[test]
    fn inherent_error_contribution() {
        let mut p = continuous();
        p.gamma_table = GammaTable::new();
        p.kappa4 = 0.0;
        let r = compute_effective_rates(&p, PrepVariant::Thermal).unwrap();
        let e = steady_state_closed_form(&r).unwrap().error;
        assert!((e - 0.11).abs() < 0.005, "{e}");
    }

    #[test]
    fn lossless_model_is_perfect() {
        let r = EffectiveRates::from_components(100.0, 50.0, 0.0, [0.0; 3], 0.0, 0.0, 0.0, 0.5);
        assert_eq!(steady_state_closed_form(&r).unwrap().fidelity, 1.0);
    }

    #[test]
    fn ode_long_time_matches_closed_form() {
        let r = compute_effective_rates(&continuous(), PrepVariant::Thermal).unwrap();
        let ss = steady_state_closed_form(&r).unwrap();
        let out = integrate_rate_equations(&r, RatePopulations::down_down(), 0.0, &[1.0], false).unwrap();
        assert!((out[0].1.p_s - ss.fidelity).abs() < 1e-9);
        assert!((out[0].1.total() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn preparation_only_splits_evenly() {
        let r = EffectiveRates::from_components(10.0, 0.0, 0.0, [0.0; 3], 0.0, 0.0, 0.0, 0.5);
        let p0 = RatePopulations {
            p_uu: 1.0,
            ..Default::default()
        };
        let out = integrate_rate_equations(&r, p0, 0.0, &[0.0, 5.0], false).unwrap();
        assert_eq!(out[0].1, p0);
        assert!((out[1].1.p_s - 0.5).abs() < 1e-12);
        assert!((out[1].1.p_t - 0.5).abs() < 1e-12);
    }

    #[test]
    fn leak_drains_the_manifold() {
        let r = compute_effective_rates(&continuous(), PrepVariant::Thermal).unwrap();
        let out = integrate_rate_equations(&r, RatePopulations::down_down(), 0.0, &[0.02, 0.2], true).unwrap();
        assert!(out[1].1.p_leak > out[0].1.p_leak && out[0].1.p_leak > 0.0);
        assert!((out[1].1.total() - 1.0).abs() < 1e-12);
    }
}
