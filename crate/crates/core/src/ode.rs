//! Adaptive Dormand–Prince 5(4) integrator for small real systems.
//!
//! Integration may run in either direction. The caller supplies output
//! stations that the integrator hits exactly; every accepted step is also
//! reported to an observer so trajectories can be sampled densely.

/// Right-hand side `y' = rhs(x, y)` of an `N`-dimensional system.
pub trait OdeSystem<const N: usize> {
    fn rhs(&self, x: f64, y: &[f64; N]) -> [f64; N];
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepControl {
    pub rtol: f64,
    pub atol: f64,
    /// Absolute step-size floor; stepping below it ends the run with `Underflow`.
    pub h_min: f64,
    pub max_steps: usize,
    /// A state component above this magnitude ends the run with `Blowup`.
    pub overflow: f64,
    /// Components `0..error_dims` enter the error norm; the rest are
    /// accumulated quadratures that are integrated but not controlled.
    pub error_dims: usize,
}

impl Default for StepControl {
    fn default() -> Self {
        Self {
            rtol: 1e-10,
            atol: 1e-12,
            h_min: 1e-300,
            max_steps: 5_000_000,
            overflow: 1e150,
            error_dims: usize::MAX,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Termination {
    Completed,
    Blowup,
    Underflow,
    StepLimit,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct IntegratorStats {
    pub steps: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
    /// Largest accepted normalized local error estimate (≤ 1 by construction).
    pub max_local_error: f64,
}

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
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// 5th-order minus embedded 4th-order weights
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

fn comb<const N: usize>(y: &[f64; N], h: f64, terms: &[(f64, &[f64; N])]) -> [f64; N] {
    let mut out = *y;
    for (c, k) in terms {
        for i in 0..N {
            out[i] += h * c * k[i];
        }
    }
    out
}

pub struct Integrator {
    pub control: StepControl,
}

impl Integrator {
    pub fn new(control: StepControl) -> Self {
        Self { control }
    }

    /// Integrates from `x0` through each station in turn (monotone in the
    /// direction of integration). `observe(x, y)` is called at `x0`, after
    /// every accepted step, and is guaranteed to see every station.
    pub fn run<const N: usize, S: OdeSystem<N>>(
        &self,
        sys: &S,
        x0: f64,
        y0: [f64; N],
        stations: &[f64],
        mut observe: impl FnMut(f64, &[f64; N]),
    ) -> (Termination, IntegratorStats) {
        let ctl = self.control;
        let err_dims = ctl.error_dims.min(N);
        let mut stats = IntegratorStats::default();
        let mut x = x0;
        let mut y = y0;
        observe(x, &y);
        let Some(&last) = stations.last() else {
            return (Termination::Completed, stats);
        };
        let dir = if last >= x0 { 1.0 } else { -1.0 };
        let mut k1 = sys.rhs(x, &y);
        stats.rhs_evals += 1;
        let mut h = initial_step(&y, &k1, (last - x0).abs(), err_dims, &ctl);

        for &target in stations {
            while dir * (target - x) > 0.0 {
                if stats.steps + stats.rejected >= ctl.max_steps {
                    return (Termination::StepLimit, stats);
                }
                let remaining = (target - x).abs();
                if h < ctl.h_min {
                    return (Termination::Underflow, stats);
                }
                // a step clipped onto a station does not shrink the next proposal
                let proposal = h;
                let last_step = h >= remaining * (1.0 - 1e-12);
                if last_step {
                    h = remaining;
                }
                let hs = dir * h;
                let k2 = sys.rhs(x + C2 * hs, &comb(&y, hs, &[(A21, &k1)]));
                let k3 = sys.rhs(x + C3 * hs, &comb(&y, hs, &[(A31, &k1), (A32, &k2)]));
                let k4 = sys.rhs(
                    x + C4 * hs,
                    &comb(&y, hs, &[(A41, &k1), (A42, &k2), (A43, &k3)]),
                );
                let k5 = sys.rhs(
                    x + C5 * hs,
                    &comb(&y, hs, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]),
                );
                let x_new = if last_step { target } else { x + hs };
                let k6 = sys.rhs(
                    x + hs,
                    &comb(
                        &y,
                        hs,
                        &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)],
                    ),
                );
                let y_new = comb(
                    &y,
                    hs,
                    &[(B1, &k1), (B3, &k3), (B4, &k4), (B5, &k5), (B6, &k6)],
                );
                let k7 = sys.rhs(x_new, &y_new);
                stats.rhs_evals += 6;

                let mut err = 0.0_f64;
                for i in 0..err_dims {
                    let e = hs
                        * (E1 * k1[i]
                            + E3 * k3[i]
                            + E4 * k4[i]
                            + E5 * k5[i]
                            + E6 * k6[i]
                            + E7 * k7[i]);
                    let sc = ctl.atol + ctl.rtol * y[i].abs().max(y_new[i].abs());
                    err = err.max((e / sc).abs());
                }
                if !err.is_finite() {
                    err = 1e10;
                }
                if err <= 1.0 {
                    x = x_new;
                    y = y_new;
                    k1 = k7;
                    stats.steps += 1;
                    stats.max_local_error = stats.max_local_error.max(err);
                    observe(x, &y);
                    if y.iter().any(|v| !v.is_finite() || v.abs() > ctl.overflow) {
                        return (Termination::Blowup, stats);
                    }
                    let fac = if err == 0.0 {
                        5.0
                    } else {
                        (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
                    };
                    h = if last_step {
                        proposal.max(h * fac)
                    } else {
                        h * fac
                    };
                } else {
                    stats.rejected += 1;
                    h *= (0.9 * err.powf(-0.2)).clamp(0.1, 0.9);
                }
            }
        }
        (Termination::Completed, stats)
    }
}

fn initial_step<const N: usize>(
    y: &[f64; N],
    f: &[f64; N],
    span: f64,
    dims: usize,
    ctl: &StepControl,
) -> f64 {
    let mut d0 = 0.0_f64;
    let mut d1 = 0.0_f64;
    for i in 0..dims {
        let sc = ctl.atol + ctl.rtol * y[i].abs();
        d0 = d0.max((y[i] / sc).abs());
        d1 = d1.max((f[i] / sc).abs());
    }
    let h = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6 * span
    } else {
        0.01 * d0 / d1
    };
    h.min(span).max(1e-12 * span)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Decay;
    impl OdeSystem<1> for Decay {
        fn rhs(&self, _x: f64, y: &[f64; 1]) -> [f64; 1] {
            [-y[0]]
        }
    }

    struct Oscillator;
    impl OdeSystem<2> for Oscillator {
        fn rhs(&self, _x: f64, y: &[f64; 2]) -> [f64; 2] {
            [y[1], -y[0]]
        }
    }

    #[test]
    fn exponential_decay_both_directions() {
        let int = Integrator::new(StepControl::default());
        let mut last = [0.0];
        let (t, _) = int.run(&Decay, 0.0, [1.0], &[0.5, 2.0], |_, y| last = *y);
        assert_eq!(t, Termination::Completed);
        assert!((last[0] - (-2.0f64).exp()).abs() < 1e-11);
        let (_, _) = int.run(&Decay, 2.0, [1.0], &[0.0], |_, y| last = *y);
        assert!((last[0] - 2.0f64.exp()).abs() < 1e-9);
    }

    #[test]
    fn stations_are_hit_exactly() {
        let int = Integrator::new(StepControl::default());
        let mut seen = Vec::new();
        int.run(&Oscillator, 0.0, [0.0, 1.0], &[1.0, 2.5, 10.0], |x, y| {
            seen.push((x, y[0]))
        });
        for s in [1.0, 2.5, 10.0] {
            let (_, v) = seen.iter().find(|(x, _)| *x == s).expect("station visited");
            assert!((v - s.sin()).abs() < 1e-9);
        }
    }

    #[test]
    fn blowup_is_flagged() {
        struct Grow;
        impl OdeSystem<1> for Grow {
            fn rhs(&self, _x: f64, y: &[f64; 1]) -> [f64; 1] {
                [y[0] * y[0]]
            }
        }
        let int = Integrator::new(StepControl {
            overflow: 1e10,
            ..Default::default()
        });
        let (t, _) = int.run(&Grow, 0.0, [1.0], &[2.0], |_, _| {});
        assert!(matches!(t, Termination::Blowup | Termination::Underflow));
    }
}
