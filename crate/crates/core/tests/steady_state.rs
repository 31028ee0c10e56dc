use singlet_core::operator::Level;
use singlet_core::protocol::{run_continuous, ContinuousSchedule, Schedule, Truncation};
use singlet_core::scheme::{Channels, GammaTable, SchemeParams};

const TAU: f64 = std::f64::consts::TAU;

/// Model without the leak level, so the steady state is unique.
fn small_params() -> SchemeParams {
    let mut gamma_table = GammaTable::uniform(5.0);
    gamma_table.set(Level::Up, Level::Leak, 0.0);
    SchemeParams {
        omega_s: TAU * 7.8e3,
        omega_c: TAU * 0.543e3,
        r: 0.0,
        phi: 0.0,
        gamma_up_a: 5.0 / 9.0 / 88e-6,
        gamma_down_a: 4.0 / 9.0 / 88e-6,
        gamma_aa: 3.0 / 9.0 / 88e-6,
        kappa: 1.0 / 203e-6,
        nbar: 0.11,
        gamma_table,
        eta3: 0.18,
        eta4: 0.155,
        delta: TAU * 250e3,
        kappa4: 800.0,
    }
}

fn schedule(initial: (Level, Level)) -> ContinuousSchedule {
    let mut channels = Channels::all();
    channels.mode4 = false;
    ContinuousSchedule {
        channels,
        initial,
        window: (30e-3, 40e-3),
        truncation: Truncation { mode3: 4, mode4: 1 },
        ..ContinuousSchedule::uniform(40e-3, 0.25e-3)
    }
}

#[test]
fn steady_state_forgets_initial_spin_state() {
    let p = small_params();
    let steady = |init| {
        let s = schedule(init);
        let series = run_continuous(&p, &s).unwrap();
        Schedule::Continuous(s).steady(&series).unwrap()
    };
    let a = steady((Level::Down, Level::Down));
    let b = steady((Level::Up, Level::Up));
    assert!((a.p_s - b.p_s).abs() < 1e-3, "{} vs {}", a.p_s, b.p_s);
    assert!(a.p_s > 0.5);
}
