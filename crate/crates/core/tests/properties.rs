use nalgebra::DMatrix;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use singlet_core::config::Quantity;
use singlet_core::dynamics::Diagnostics;
use singlet_core::measurement::{detect_ions, qubit_rotation, reconstruct_populations, PopulationRecord, Pulse};
use singlet_core::protocol::{gaussian_average, EnsembleSpec, Series};
use singlet_core::rates::{compute_effective_rates, steady_state_closed_form, PrepVariant};
use singlet_core::scheme::{GammaTable, SchemeParams};

const TAU: f64 = std::f64::consts::TAU;

fn c(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

/// Random density matrix supported on {↓,↑}⊗{↓,↑}, embedded in `levels`
/// states per ion.
fn random_qubit_state(rng: &mut ChaCha8Rng, levels: usize) -> DMatrix<Complex64> {
    let b = DMatrix::from_fn(4, 4, |_, _| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
    let mut small = &b * b.adjoint();
    let tr = small.trace();
    small /= tr;
    let embed = |k: usize| (k / 2) * levels + (k % 2);
    let n = levels * levels;
    let mut out = DMatrix::zeros(n, n);
    for i in 0..4 {
        for j in 0..4 {
            out[(embed(i), embed(j))] = small[(i, j)];
        }
    }
    out
}

fn ket(levels: usize, amps: &[((usize, usize), f64)]) -> nalgebra::DVector<Complex64> {
    let mut v = nalgebra::DVector::zeros(levels * levels);
    for &((a, b), x) in amps {
        v[a * levels + b] = c(x);
    }
    v
}

fn expect(rho: &DMatrix<Complex64>, v: &nalgebra::DVector<Complex64>) -> f64 {
    (v.adjoint() * rho * v)[(0, 0)].re
}

#[test]
fn reconstruction_recovers_direct_populations() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let h = std::f64::consts::FRAC_1_SQRT_2;
    for k in 0..1000 {
        let levels = 3 + k % 2;
        let rho = random_qubit_state(&mut rng, levels);
        let s = ket(levels, &[((1, 0), h), ((0, 1), -h)]);
        let t = ket(levels, &[((1, 0), h), ((0, 1), h)]);
        let uu = ket(levels, &[((1, 1), 1.0)]);
        let dd = ket(levels, &[((0, 0), 1.0)]);
        let rec = reconstruct_populations(
            &detect_ions(&rho, levels, Pulse::None),
            &detect_ions(&rho, levels, Pulse::Pi),
            &detect_ions(&rho, levels, Pulse::PiHalfPhaseAveraged),
        )
        .unwrap();
        assert!((rec.singlet - expect(&rho, &s)).abs() < 1e-9, "state {k}");
        assert!((rec.triplet - expect(&rho, &t)).abs() < 1e-9, "state {k}");
        assert!((rec.up_up - expect(&rho, &uu)).abs() < 1e-9, "state {k}");
        assert!((rec.down_down - expect(&rho, &dd)).abs() < 1e-9, "state {k}");
        assert!(!rec.flagged);
    }
}

#[test]
fn phase_average_matches_64_phase_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let levels = 4;
    for _ in 0..20 {
        let rho = random_qubit_state(&mut rng, levels);
        let avg = detect_ions(&rho, levels, Pulse::PiHalfPhaseAveraged);
        let mut p = [0.0; 3];
        for k in 0..64 {
            let r = qubit_rotation(levels, std::f64::consts::FRAC_PI_2, TAU * k as f64 / 64.0);
            let u = r.kronecker(&r);
            let rotated = &u * &rho * u.adjoint();
            let d = detect_ions(&rotated, levels, Pulse::None);
            p[0] += d.p2 / 64.0;
            p[1] += d.p1 / 64.0;
            p[2] += d.p0 / 64.0;
        }
        assert!((avg.p2 - p[0]).abs() < 1e-10);
        assert!((avg.p1 - p[1]).abs() < 1e-10);
        assert!((avg.p0 - p[2]).abs() < 1e-10);
    }
}

fn params(omega_s: f64, omega_c: f64, nbar: f64, scatter: f64) -> SchemeParams {
    SchemeParams {
        omega_s,
        omega_c,
        r: 0.0,
        phi: 0.0,
        gamma_up_a: 5.0 / 9.0 / 88e-6,
        gamma_down_a: 4.0 / 9.0 / 88e-6,
        gamma_aa: 3.0 / 9.0 / 88e-6,
        kappa: 1.0 / 203e-6,
        nbar,
        gamma_table: GammaTable::uniform(scatter),
        eta3: 0.18,
        eta4: 0.155,
        delta: TAU * 250e3,
        kappa4: 0.0,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fidelity_invariant_under_rate_rescaling(
        ws in 2e3f64..20e3, wc in 0.1e3f64..2e3, nbar in 0.0f64..0.5, g in 0.0f64..20.0, f in 1e-3f64..1e3,
    ) {
        let rates = compute_effective_rates(&params(TAU * ws, TAU * wc, nbar, g), PrepVariant::Thermal).unwrap();
        let a = steady_state_closed_form(&rates).unwrap();
        let b = steady_state_closed_form(&rates.scaled(f)).unwrap();
        prop_assert!((a.fidelity - b.fidelity).abs() <= 1e-12 * a.fidelity.abs().max(1.0));
    }

    #[test]
    fn error_falls_with_sideband_strength(ws in 2e3f64..20e3, bump in 1.01f64..3.0) {
        let e = |w: f64| {
            let rates = compute_effective_rates(&params(TAU * w, TAU * 0.543e3, 0.11, 5.0), PrepVariant::Thermal).unwrap();
            steady_state_closed_form(&rates).unwrap().error
        };
        prop_assert!(e(ws * bump) < e(ws));
    }

    #[test]
    fn quantity_text_roundtrips(v in -1e6f64..1e6, unit in 0usize..9) {
        let units = ["khz_2pi", "hz_2pi", "per_s", "us_1e", "ms_1e", "omega_s", "us", "ms", "s"];
        let q: Quantity = format!("{v} {}", units[unit]).parse().unwrap();
        prop_assert_eq!(q, q.to_string().parse::<Quantity>().unwrap());
        prop_assert_eq!(q.value, v);
    }
}

fn series_of(f: impl Fn(f64) -> f64, r: f64) -> Series {
    let rec = PopulationRecord {
        time: 0.0,
        p_s: f(r),
        p_t: 1.0 - f(r),
        ..Default::default()
    };
    Series {
        records: vec![rec],
        diagnostics: Diagnostics::default(),
    }
}

#[test]
fn seven_and_eleven_nodes_agree_for_smooth_response() {
    // P_S(r) = 0.8 − 120 r², the curvature seen in full runs.
    let f = |r: f64| 0.8 - 120.0 * r * r + 3000.0 * r.powi(4);
    let avg = |nodes| {
        let e = EnsembleSpec {
            r_mean: 0.0,
            r_rms: 0.014,
            nodes,
        };
        gaussian_average(|r| Ok(series_of(f, r)), &e).unwrap().records[0].p_s
    };
    let s2 = 0.014f64.powi(2);
    let exact = 0.8 - 120.0 * s2 + 3000.0 * 3.0 * s2 * s2;
    assert!((avg(7) - exact).abs() < 1e-13);
    assert!((avg(7) - avg(11)).abs() < 1e-13);
}
