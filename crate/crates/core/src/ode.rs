//! Adaptive Dormand–Prince 5(4) integrator for small dense systems.

use crate::error::{Error, Result};

/// Mixed absolute/relative error tolerance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerance {
    pub atol: f64,
    pub rtol: f64,
}

impl Tolerance {
    pub const fn new(atol: f64, rtol: f64) -> Self {
        Tolerance { atol, rtol }
    }

    pub const fn uniform(tol: f64) -> Self {
        Tolerance { atol: tol, rtol: tol }
    }
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance::uniform(1e-5)
    }
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
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const MAX_STEPS: usize = 2_000_000;

fn lin(y: &[f64], h: f64, terms: &[(f64, &[f64])]) -> Vec<f64> {
    let mut out = y.to_vec();
    for (k, v) in terms {
        for (o, vi) in out.iter_mut().zip(v.iter()) {
            *o += h * k * vi;
        }
    }
    out
}

/// Integrates `dy/dt = f(t, y)` from `t0` and returns the solution at every
/// entry of `outputs`, which must be monotone in the direction of travel.
/// Steps are clipped so that every output time is hit exactly.
pub fn integrate<F>(mut f: F, t0: f64, y0: &[f64], outputs: &[f64], tol: Tolerance) -> Result<Vec<Vec<f64>>>
where
    F: FnMut(f64, &[f64]) -> Vec<f64>,
{
    let mut results = Vec::with_capacity(outputs.len());
    let Some(&t_last) = outputs.last() else {
        return Ok(results);
    };
    let dir = if t_last >= t0 { 1.0 } else { -1.0 };
    for w in outputs.windows(2) {
        if (w[1] - w[0]) * dir < 0.0 {
            return Err(Error::SolverFailure("output times are not monotone".into()));
        }
    }

    let n = y0.len();
    let mut t = t0;
    let mut y = y0.to_vec();
    let mut k1 = f(t, &y);
    let span = (t_last - t0).abs();
    let mut h = initial_step(&mut f, t, &y, &k1, dir, tol, span);
    let mut steps = 0usize;

    for &t_out in outputs {
        while (t_out - t) * dir > 0.0 {
            steps += 1;
            if steps > MAX_STEPS {
                return Err(Error::SolverFailure(format!("exceeded {MAX_STEPS} steps")));
            }
            let remaining = (t_out - t).abs();
            let mut step = h.min(remaining);
            let hits_output = step >= remaining * (1.0 - 1e-12);
            if hits_output {
                step = remaining;
            }
            let hs = step * dir;
            let k2 = f(t + C2 * hs, &lin(&y, hs, &[(A21, &k1)]));
            let k3 = f(t + C3 * hs, &lin(&y, hs, &[(A31, &k1), (A32, &k2)]));
            let k4 = f(t + C4 * hs, &lin(&y, hs, &[(A41, &k1), (A42, &k2), (A43, &k3)]));
            let k5 = f(
                t + C5 * hs,
                &lin(&y, hs, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]),
            );
            let k6 = f(
                t + hs,
                &lin(&y, hs, &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)]),
            );
            let y_new = lin(&y, hs, &[(B1, &k1), (B3, &k3), (B4, &k4), (B5, &k5), (B6, &k6)]);
            let t_new = if hits_output { t_out } else { t + hs };
            let k7 = f(t_new, &y_new);

            let mut err = 0.0;
            for i in 0..n {
                let e = hs
                    * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
                let sc = tol.atol + tol.rtol * y[i].abs().max(y_new[i].abs());
                err += (e / sc).powi(2);
            }
            let err = (err / n.max(1) as f64).sqrt();
            if !err.is_finite() {
                h = step * 0.1;
                if h < 1e-300 {
                    return Err(Error::SolverFailure(format!("non-finite derivative near t = {t}")));
                }
                continue;
            }
            let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            if err <= 1.0 {
                t = t_new;
                y = y_new;
                k1 = k7;
                h = if hits_output { h.max(step * factor) } else { step * factor };
            } else {
                h = step * factor.min(1.0);
                if h <= span.max(1.0) * 1e-15 {
                    return Err(Error::SolverFailure(format!("step size underflow at t = {t}")));
                }
            }
        }
        results.push(y.clone());
    }
    Ok(results)
}

fn initial_step<F>(f: &mut F, t: f64, y: &[f64], k1: &[f64], dir: f64, tol: Tolerance, span: f64) -> f64
where
    F: FnMut(f64, &[f64]) -> Vec<f64>,
{
    if span == 0.0 {
        return 0.0;
    }
    let n = y.len().max(1) as f64;
    let sc: Vec<f64> = y.iter().map(|v| tol.atol + tol.rtol * v.abs()).collect();
    let d0 = (y.iter().zip(&sc).map(|(v, s)| (v / s).powi(2)).sum::<f64>() / n).sqrt();
    let d1 = (k1.iter().zip(&sc).map(|(v, s)| (v / s).powi(2)).sum::<f64>() / n).sqrt();
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let h0 = h0.min(span);
    let y1: Vec<f64> = y.iter().zip(k1).map(|(v, k)| v + dir * h0 * k).collect();
    let k2 = f(t + dir * h0, &y1);
    let d2 = (k2
        .iter()
        .zip(k1)
        .zip(&sc)
        .map(|((a, b), s)| ((a - b) / s).powi(2))
        .sum::<f64>()
        / n)
        .sqrt()
        / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    (100.0 * h0).min(h1).min(span)
}
