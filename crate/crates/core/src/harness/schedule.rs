//! Timestep schedules from `T` down to the cutoff `eps`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    /// `t_i = eps + (T − eps)((N − i)/N)²`, denser near `eps`.
    Quadratic,
    /// `t_i = eps + (T − eps)(N − i)/N`.
    Uniform,
}

impl ScheduleKind {
    /// Formula echoed into run metadata.
    pub fn formula(self) -> &'static str {
        match self {
            ScheduleKind::Quadratic => "t_i = eps + (T - eps) * ((N - i) / N)^2",
            ScheduleKind::Uniform => "t_i = eps + (T - eps) * (N - i) / N",
        }
    }
}

/// Strictly decreasing nodes `t_0 = T > … > t_N = eps`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub kind: ScheduleKind,
    pub n: usize,
    pub t_end: f64,
    pub eps: f64,
    pub times: Vec<f64>,
}

pub fn make_schedule(kind: ScheduleKind, n: usize, t_end: f64, eps: f64) -> Result<Schedule> {
    if n == 0 {
        return Err(Error::BadRange("need at least one step".into()));
    }
    if !(eps > 0.0 && eps < t_end && t_end.is_finite()) {
        return Err(Error::BadRange(format!("need 0 < eps < T, got eps = {eps}, T = {t_end}")));
    }
    let span = t_end - eps;
    let mut times: Vec<f64> = (0..=n)
        .map(|i| {
            let r = (n - i) as f64 / n as f64;
            match kind {
                ScheduleKind::Quadratic => eps + span * r * r,
                ScheduleKind::Uniform => eps + span * r,
            }
        })
        .collect();
    times[0] = t_end;
    times[n] = eps;
    if times.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::BadRange(format!("{n} steps do not resolve [{eps}, {t_end}]")));
    }
    Ok(Schedule { kind, n, t_end, eps, times })
}
