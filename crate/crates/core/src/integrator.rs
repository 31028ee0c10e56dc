//! Adaptive Dormand–Prince 5(4) integration of complex linear systems with
//! fourth-order dense output.
//!
//! Step-size control uses a mixed absolute/relative error norm (RMS or
//! maximum over components) with a PI controller. The right-hand side is evaluated at the stage
//! times, so explicitly time-dependent generators are handled without
//! averaging.

use num_complex::Complex64;

use crate::error::{Error, Result};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

// Butcher tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
// Error estimate: difference between the fifth- and fourth-order solutions.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
// Dense output.
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

const SAFETY: f64 = 0.9;
const BETA: f64 = 0.04;

/// A first-order system `y' = f(t, y)` over complex vectors.
pub trait OdeSystem {
    fn dim(&self) -> usize;
    fn rhs(&self, t: f64, y: &[Complex64], dy: &mut [Complex64]);
}

/// How per-component scaled errors are combined into one step error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ErrorNorm {
    #[default]
    Rms,
    /// Worst component. The RMS norm lets a few components carry errors
    /// `√n` times the tolerance, which is too loose for nearly pure states.
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorOptions {
    pub rtol: f64,
    pub atol: f64,
    pub norm: ErrorNorm,
    /// Initial step; chosen automatically when `None`.
    pub h_init: Option<f64>,
    /// Upper bound on the step size (seconds); unbounded when `None`.
    pub h_max: Option<f64>,
    pub max_steps: usize,
}

impl IntegratorOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            rtol: tol,
            atol: tol,
            ..Self::default()
        }
    }
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-8,
            atol: 1e-8,
            norm: ErrorNorm::Rms,
            h_init: None,
            h_max: None,
            max_steps: 50_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct IntegratorStats {
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
}

impl IntegratorStats {
    pub fn merge(&mut self, other: &Self) {
        self.accepted += other.accepted;
        self.rejected += other.rejected;
        self.rhs_evals += other.rhs_evals;
    }
}

/// Integrate from `t0` to `t_end`, calling `observe(t, y)` at every entry of
/// `sample_times` (which must be sorted and lie in `[t0, t_end]`). Samples
/// inside a step are produced by dense output. `y` holds the final state on
/// return.
pub fn integrate<S, F>(
    system: &S,
    t0: f64,
    t_end: f64,
    y: &mut [Complex64],
    sample_times: &[f64],
    options: &IntegratorOptions,
    mut observe: F,
) -> Result<IntegratorStats>
where
    S: OdeSystem + ?Sized,
    F: FnMut(f64, &[Complex64]) -> Result<()>,
{
    let n = system.dim();
    assert_eq!(y.len(), n, "state length does not match system dimension");
    if !(t_end >= t0) {
        return Err(Error::param("t_span", format!("end {t_end} precedes start {t0}")));
    }
    if sample_times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::param("sample_times", "must be sorted"));
    }
    if let (Some(&first), Some(&last)) = (sample_times.first(), sample_times.last()) {
        if first < t0 || last > t_end {
            return Err(Error::param("sample_times", "must lie within the integration span"));
        }
    }
    let mut stats = IntegratorStats::default();
    let mut next_sample = 0;
    while next_sample < sample_times.len() && sample_times[next_sample] <= t0 {
        observe(sample_times[next_sample], y)?;
        next_sample += 1;
    }
    if t_end == t0 {
        return Ok(stats);
    }

    let mut k: Vec<Vec<Complex64>> = (0..7).map(|_| vec![ZERO; n]).collect();
    let mut ytmp = vec![ZERO; n];
    let mut ynew = vec![ZERO; n];
    let mut dense = vec![ZERO; n];
    let mut cont: Vec<Vec<Complex64>> = (0..5).map(|_| vec![ZERO; n]).collect();

    let mut t = t0;
    system.rhs(t, y, &mut k[0]);
    stats.rhs_evals += 1;

    let span = t_end - t0;
    let h_max = options.h_max.unwrap_or(span).min(span);
    let mut h = match options.h_init {
        Some(h) => h.min(h_max),
        None => initial_step(system, t, y, &k[0], options, h_max, &mut stats),
    };
    let mut err_old = 1e-4f64;
    let mut last_rejected = false;

    loop {
        if stats.accepted + stats.rejected >= options.max_steps {
            return Err(Error::StepSizeUnderflow { t, h });
        }
        let last = t + h >= t_end;
        if last {
            h = t_end - t;
        }
        if h <= 1e-14 * t.abs().max(span) {
            return Err(Error::StepSizeUnderflow { t, h });
        }
        stage(&mut ytmp, y, h, &[(A21, &k[0])]);
        system.rhs(t + C2 * h, &ytmp, &mut k[1]);
        stage(&mut ytmp, y, h, &[(A31, &k[0]), (A32, &k[1])]);
        system.rhs(t + C3 * h, &ytmp, &mut k[2]);
        stage(&mut ytmp, y, h, &[(A41, &k[0]), (A42, &k[1]), (A43, &k[2])]);
        system.rhs(t + C4 * h, &ytmp, &mut k[3]);
        stage(&mut ytmp, y, h, &[(A51, &k[0]), (A52, &k[1]), (A53, &k[2]), (A54, &k[3])]);
        system.rhs(t + C5 * h, &ytmp, &mut k[4]);
        stage(
            &mut ytmp,
            y,
            h,
            &[(A61, &k[0]), (A62, &k[1]), (A63, &k[2]), (A64, &k[3]), (A65, &k[4])],
        );
        let t_new = if last { t_end } else { t + h };
        system.rhs(t_new, &ytmp, &mut k[5]);
        stage(
            &mut ynew,
            y,
            h,
            &[(A71, &k[0]), (A73, &k[2]), (A74, &k[3]), (A75, &k[4]), (A76, &k[5])],
        );
        system.rhs(t_new, &ynew, &mut k[6]);
        stats.rhs_evals += 6;

        let (mut sum, mut worst) = (0.0, 0.0f64);
        for i in 0..n {
            let e = h * (E1 * k[0][i] + E3 * k[2][i] + E4 * k[3][i] + E5 * k[4][i] + E6 * k[5][i] + E7 * k[6][i]);
            let sc = options.atol + options.rtol * y[i].norm().max(ynew[i].norm());
            let q = e.norm_sqr() / (sc * sc);
            sum += q;
            worst = worst.max(q);
        }
        let err = match options.norm {
            ErrorNorm::Rms => (sum / n as f64).sqrt(),
            ErrorNorm::Max => worst.sqrt(),
        };
        if !err.is_finite() {
            if ynew.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) && h < 1e-12 * span {
                return Err(Error::NonFinite { t });
            }
            h *= 0.1;
            last_rejected = true;
            stats.rejected += 1;
            continue;
        }

        // PI step-size controller.
        let fac11 = err.powf(0.2 - 0.75 * BETA);
        let fac = (fac11 / err_old.powf(BETA) / SAFETY).clamp(0.1, 5.0);
        if err <= 1.0 {
            for i in 0..n {
                let ydiff = ynew[i] - y[i];
                let bspl = h * k[0][i] - ydiff;
                cont[0][i] = y[i];
                cont[1][i] = ydiff;
                cont[2][i] = bspl;
                cont[3][i] = ydiff - h * k[6][i] - bspl;
                cont[4][i] = h
                    * (D1 * k[0][i] + D3 * k[2][i] + D4 * k[3][i] + D5 * k[4][i] + D6 * k[5][i] + D7 * k[6][i]);
            }
            while next_sample < sample_times.len() && (sample_times[next_sample] <= t_new || last) {
                let ts = sample_times[next_sample];
                let theta = ((ts - t) / h).clamp(0.0, 1.0);
                let theta1 = 1.0 - theta;
                for i in 0..n {
                    dense[i] = cont[0][i]
                        + theta * (cont[1][i] + theta1 * (cont[2][i] + theta * (cont[3][i] + theta1 * cont[4][i])));
                }
                observe(ts, &dense)?;
                next_sample += 1;
            }
            y.copy_from_slice(&ynew);
            k.swap(0, 6);
            t = t_new;
            stats.accepted += 1;
            err_old = err.max(1e-4);
            if last {
                return Ok(stats);
            }
            let mut h_next = h / fac;
            if last_rejected {
                h_next = h_next.min(h);
            }
            h = h_next.min(h_max);
            last_rejected = false;
        } else {
            h /= (fac11 / SAFETY).min(5.0);
            last_rejected = true;
            stats.rejected += 1;
        }
    }
}

fn stage(out: &mut [Complex64], y: &[Complex64], h: f64, terms: &[(f64, &Vec<Complex64>)]) {
    out.copy_from_slice(y);
    for &(a, k) in terms {
        let s = h * a;
        for (o, v) in out.iter_mut().zip(k.iter()) {
            *o += s * v;
        }
    }
}

fn rms(v: &[Complex64], y: &[Complex64], options: &IntegratorOptions) -> f64 {
    let n = v.len().max(1) as f64;
    (v.iter()
        .zip(y)
        .map(|(a, b)| {
            let sc = options.atol + options.rtol * b.norm();
            a.norm_sqr() / (sc * sc)
        })
        .sum::<f64>()
        / n)
        .sqrt()
}

/// Starting step from the norms of `y` and `f(t, y)` and one explicit Euler
/// probe.
fn initial_step<S: OdeSystem + ?Sized>(
    system: &S,
    t: f64,
    y: &[Complex64],
    f0: &[Complex64],
    options: &IntegratorOptions,
    h_max: f64,
    stats: &mut IntegratorStats,
) -> f64 {
    let d0 = rms(y, y, options);
    let d1 = rms(f0, y, options);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 * h_max.max(1e-12) } else { 0.01 * d0 / d1 };
    let h0 = h0.min(h_max);
    let y1: Vec<Complex64> = y.iter().zip(f0).map(|(a, b)| a + h0 * b).collect();
    let mut f1 = vec![ZERO; y.len()];
    system.rhs(t + h0, &y1, &mut f1);
    stats.rhs_evals += 1;
    let diff: Vec<Complex64> = f1.iter().zip(f0).map(|(a, b)| a - b).collect();
    let d2 = rms(&diff, y, options) / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6 * h0)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    (100.0 * h0).min(h1).min(h_max)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Rotation {
        omega: f64,
    }

    impl OdeSystem for Rotation {
        fn dim(&self) -> usize {
            1
        }
        fn rhs(&self, _t: f64, y: &[Complex64], dy: &mut [Complex64]) {
            dy[0] = Complex64::new(0.0, -self.omega) * y[0];
        }
    }

    struct Forced;

    impl OdeSystem for Forced {
        fn dim(&self) -> usize {
            1
        }
        fn rhs(&self, t: f64, _y: &[Complex64], dy: &mut [Complex64]) {
            dy[0] = Complex64::new((3.0 * t).cos(), 0.0);
        }
    }

    #[test]
    fn exponential_phase_is_accurate() {
        let sys = Rotation { omega: 2.0 };
        let mut y = vec![Complex64::new(1.0, 0.0)];
        let samples: Vec<f64> = (0..=20).map(|k| k as f64 * 0.5).collect();
        let mut worst = 0.0f64;
        integrate(&sys, 0.0, 10.0, &mut y, &samples, &IntegratorOptions::with_tol(1e-10), |t, v| {
            let exact = Complex64::from_polar(1.0, -2.0 * t);
            worst = worst.max((v[0] - exact).norm());
            Ok(())
        })
        .unwrap();
        assert!(worst < 1e-7, "{worst}");
    }

    #[test]
    fn explicit_time_dependence_uses_stage_times() {
        let mut y = vec![Complex64::new(0.0, 0.0)];
        integrate(&Forced, 0.0, 4.0, &mut y, &[], &IntegratorOptions::with_tol(1e-10), |_, _| Ok(())).unwrap();
        assert!((y[0].re - (12.0f64).sin() / 3.0).abs() < 1e-8);
    }

    #[test]
    fn error_scales_with_tolerance() {
        let sys = Rotation { omega: 5.0 };
        let err = |tol: f64| {
            let mut y = vec![Complex64::new(1.0, 0.0)];
            integrate(&sys, 0.0, 10.0, &mut y, &[], &IntegratorOptions::with_tol(tol), |_, _| Ok(())).unwrap();
            (y[0] - Complex64::from_polar(1.0, -50.0)).norm()
        };
        let (e1, e2) = (err(1e-6), err(1e-9));
        assert!(e2 < e1 / 50.0, "{e1} {e2}");
    }

    #[test]
    fn zero_span_and_bad_samples() {
        let sys = Rotation { omega: 1.0 };
        let mut y = vec![Complex64::new(1.0, 0.0)];
        let mut calls = 0;
        integrate(&sys, 1.0, 1.0, &mut y, &[1.0], &IntegratorOptions::default(), |_, _| {
            calls += 1;
            Ok(())
        })
        .unwrap();
        assert_eq!(calls, 1);
        assert!(integrate(&sys, 0.0, 1.0, &mut y, &[2.0], &IntegratorOptions::default(), |_, _| Ok(())).is_err());
    }

    #[test]
    fn step_budget_exhaustion_is_reported() {
        let sys = Rotation { omega: 1e6 };
        let mut y = vec![Complex64::new(1.0, 0.0)];
        let opts = IntegratorOptions {
            max_steps: 10,
            ..IntegratorOptions::with_tol(1e-10)
        };
        let r = integrate(&sys, 0.0, 1.0, &mut y, &[], &opts, |_, _| Ok(()));
        assert!(matches!(r, Err(Error::StepSizeUnderflow { .. })));
    }
}
