//! Adaptive Dormand-Prince 5(4) stepping for complex-valued linear ODEs.

use num_complex::Complex64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub rtol: f64,
    pub atol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { rtol: 1e-9, atol: 1e-11 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

impl std::ops::AddAssign for StepStats {
    fn add_assign(&mut self, o: Self) {
        self.accepted += o.accepted;
        self.rejected += o.rejected;
        self.evaluations += o.evaluations;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepFailure {
    pub time: f64,
    pub reason: String,
}

const A: [&[f64]; 6] = [
    &[1.0 / 5.0],
    &[3.0 / 40.0, 9.0 / 40.0],
    &[44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0],
    &[19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0],
    &[9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0],
    &[35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const E: [f64; 7] = [
    35.0 / 384.0 - 5179.0 / 57600.0,
    0.0,
    500.0 / 1113.0 - 7571.0 / 16695.0,
    125.0 / 192.0 - 393.0 / 640.0,
    -2187.0 / 6784.0 + 92097.0 / 339200.0,
    11.0 / 84.0 - 187.0 / 2100.0,
    -1.0 / 40.0,
];

const SAFETY: f64 = 0.9;
const MAX_GROWTH: f64 = 5.0;
const MIN_SHRINK: f64 = 0.2;
const MAX_STEPS: usize = 50_000_000;

/// Reusable stage buffers for a fixed state size.
#[derive(Debug, Clone)]
pub struct Workspace {
    k: [Vec<Complex64>; 7],
    stage: Vec<Complex64>,
    next: Vec<Complex64>,
}

impl Workspace {
    pub fn new(n: usize) -> Self {
        let z = vec![Complex64::new(0.0, 0.0); n];
        Self { k: std::array::from_fn(|_| z.clone()), stage: z.clone(), next: z }
    }

    fn len(&self) -> usize {
        self.stage.len()
    }
}

/// Integrate `dy/dt = f(t, y)` from `t0` to `t1` in place. `max_step` caps
/// the step size; the first trial step is `max_step` (or the whole interval).
pub fn dopri5<F>(
    mut f: F,
    t0: f64,
    t1: f64,
    y: &mut [Complex64],
    tol: Tolerances,
    max_step: f64,
    ws: &mut Workspace,
) -> Result<StepStats, StepFailure>
where
    F: FnMut(f64, &[Complex64], &mut [Complex64]),
{
    let n = y.len();
    if ws.len() != n {
        *ws = Workspace::new(n);
    }
    let mut stats = StepStats::default();
    if t1 <= t0 {
        return Ok(stats);
    }
    let span = t1 - t0;
    let min_step = span * 1e-14;
    let mut t = t0;
    let mut h = max_step.min(span);
    f(t, y, &mut ws.k[0]);
    stats.evaluations += 1;

    while t < t1 {
        if stats.accepted + stats.rejected > MAX_STEPS {
            return Err(StepFailure { time: t, reason: "step budget exhausted".into() });
        }
        let last = t + h >= t1;
        if last {
            h = t1 - t;
        }
        for s in 1..7 {
            let coeffs = A[s - 1];
            ws.stage.copy_from_slice(y);
            for (j, &a) in coeffs.iter().enumerate() {
                if a != 0.0 {
                    let ha = h * a;
                    for (st, kj) in ws.stage.iter_mut().zip(&ws.k[j]) {
                        *st += kj * ha;
                    }
                }
            }
            let (_, tail) = ws.k.split_at_mut(s);
            f(t + C[s] * h, &ws.stage, &mut tail[0]);
            stats.evaluations += 1;
        }
        // Stage 6 evaluated at the fifth-order solution, which is the FSAL value.
        std::mem::swap(&mut ws.stage, &mut ws.next);

        let mut acc = 0.0;
        for i in 0..n {
            let mut e = Complex64::new(0.0, 0.0);
            for (j, &ej) in E.iter().enumerate() {
                if ej != 0.0 {
                    e += ws.k[j][i] * ej;
                }
            }
            let scale = tol.atol + tol.rtol * y[i].norm().max(ws.next[i].norm());
            acc += (e.norm() * h / scale).powi(2);
        }
        let err = (acc / n as f64).sqrt();
        if !err.is_finite() {
            return Err(StepFailure { time: t, reason: "non-finite error estimate".into() });
        }
        if err <= 1.0 {
            t = if last { t1 } else { t + h };
            y.copy_from_slice(&ws.next);
            ws.k.swap(0, 6);
            stats.accepted += 1;
            let factor = if err == 0.0 { MAX_GROWTH } else { (SAFETY * err.powf(-0.2)).min(MAX_GROWTH) };
            h = (h * factor).min(max_step);
        } else {
            stats.rejected += 1;
            h *= (SAFETY * err.powf(-0.2)).max(MIN_SHRINK);
            if h < min_step {
                return Err(StepFailure { time: t, reason: format!("step size underflow (h = {h:.3e})") });
            }
        }
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay() {
        let mut y = vec![Complex64::new(1.0, 0.0)];
        let mut ws = Workspace::new(1);
        dopri5(|_, y, dy| dy[0] = -y[0], 0.0, 2.0, &mut y, Tolerances::default(), 0.5, &mut ws).unwrap();
        assert!((y[0].re - (-2.0f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn harmonic_rotation() {
        let w = 3.7;
        let mut y = vec![Complex64::new(1.0, 0.0)];
        let mut ws = Workspace::new(1);
        let stats = dopri5(
            |_, y, dy| dy[0] = Complex64::new(0.0, -w) * y[0],
            0.0,
            10.0,
            &mut y,
            Tolerances::default(),
            0.1,
            &mut ws,
        )
        .unwrap();
        let exact = Complex64::from_polar(1.0, -w * 10.0);
        assert!((y[0] - exact).norm() < 1e-8);
        assert!(stats.accepted >= 100);
    }

    #[test]
    fn time_dependent_rhs() {
        // dy/dt = 2t y -> y = exp(t^2)
        let mut y = vec![Complex64::new(1.0, 0.0)];
        let mut ws = Workspace::new(1);
        dopri5(|t, y, dy| dy[0] = y[0] * (2.0 * t), 0.0, 1.5, &mut y, Tolerances::default(), 1.0, &mut ws).unwrap();
        assert!((y[0].re / 2.25f64.exp() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn empty_interval() {
        let mut y = vec![Complex64::new(1.0, 0.0)];
        let mut ws = Workspace::new(1);
        let s = dopri5(|_, _, _| panic!(), 1.0, 1.0, &mut y, Tolerances::default(), 0.1, &mut ws).unwrap();
        assert_eq!(s.evaluations, 0);
    }
}
