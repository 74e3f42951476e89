//! Fixed-step RK4 and adaptive Dormand–Prince integration with monitor
//! channels.

use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::Error;

#[derive(Debug, Error)]
pub enum OdeError {
    #[error("non-finite value in component {component} at t = {t}")]
    StepFailure { t: f64, component: usize },
    #[error("right-hand side failed at t = {t}: {source}")]
    Rhs { t: f64, source: Box<Error> },
    #[error("monitor '{name}' failed at t = {t}: {source}")]
    Monitor { name: String, t: f64, source: Box<Error> },
    #[error("maximum number of steps ({steps}) exceeded at t = {t}")]
    MaxStepsExceeded { t: f64, steps: usize },
    #[error("tolerance unreachable at t = {t}: step size {h:e} underflows")]
    ToleranceUnreachable { t: f64, h: f64 },
    #[error("no monitor channel named '{0}'")]
    MissingChannel(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}

type RhsFn<'a> = dyn Fn(f64, &[f64]) -> Result<Vec<f64>, Error> + Sync + 'a;
type MonitorFn<'a> = dyn Fn(f64, &[f64]) -> Result<f64, Error> + Sync + 'a;

/// An autonomous or time-dependent first-order system with labelled state.
pub struct OdeProblem<'a> {
    pub labels: Vec<String>,
    rhs: Box<RhsFn<'a>>,
}

impl<'a> OdeProblem<'a> {
    pub fn new(labels: Vec<String>, rhs: impl Fn(f64, &[f64]) -> Result<Vec<f64>, Error> + Sync + 'a) -> Self {
        OdeProblem { labels, rhs: Box::new(rhs) }
    }

    pub fn dim(&self) -> usize {
        self.labels.len()
    }

    pub fn eval(&self, t: f64, y: &[f64]) -> Result<Vec<f64>, OdeError> {
        (self.rhs)(t, y).map_err(|e| OdeError::Rhs { t, source: Box::new(e) })
    }
}

/// A named scalar evaluated at every output sample.
pub struct Monitor<'a> {
    pub name: String,
    f: Box<MonitorFn<'a>>,
}

impl<'a> Monitor<'a> {
    pub fn new(name: impl Into<String>, f: impl Fn(f64, &[f64]) -> Result<f64, Error> + Sync + 'a) -> Self {
        Monitor { name: name.into(), f: Box::new(f) }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum Method {
    Rk4 { h: f64 },
    Dp45 { rtol: f64, atol: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct IntegratorConfig {
    #[serde(flatten)]
    pub method: Method,
    pub t0: f64,
    pub t1: f64,
    pub max_steps: usize,
    /// Record every `stride`-th step (the final step is always recorded).
    pub stride: usize,
}

impl IntegratorConfig {
    pub fn rk4(t0: f64, t1: f64, h: f64) -> Self {
        IntegratorConfig { method: Method::Rk4 { h }, t0, t1, max_steps: 10_000_000, stride: 1 }
    }

    pub fn dp45(t0: f64, t1: f64, rtol: f64, atol: f64) -> Self {
        IntegratorConfig { method: Method::Dp45 { rtol, atol }, t0, t1, max_steps: 1_000_000, stride: 1 }
    }
}

/// Sampled solution with monitor channels.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Trajectory {
    pub labels: Vec<String>,
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub monitors: Vec<(String, Vec<f64>)>,
}

impl Trajectory {
    pub fn channel(&self, name: &str) -> Result<&[f64], OdeError> {
        self.monitors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
            .ok_or_else(|| OdeError::MissingChannel(name.to_string()))
    }

    /// Time series of one state component.
    pub fn component(&self, label: &str) -> Option<Vec<f64>> {
        let k = self.labels.iter().position(|l| l == label)?;
        Some(self.states.iter().map(|s| s[k]).collect())
    }

    pub fn last(&self) -> &[f64] {
        self.states.last().expect("non-empty trajectory")
    }

    /// CSV with a header row, 17 significant digits and LF line endings.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t");
        for l in self.labels.iter().chain(self.monitors.iter().map(|(n, _)| n)) {
            out.push(',');
            out.push_str(l);
        }
        out.push('\n');
        for (k, t) in self.times.iter().enumerate() {
            let _ = write!(out, "{t:.16e}");
            for v in self.states[k].iter().chain(self.monitors.iter().map(|(_, c)| &c[k])) {
                let _ = write!(out, ",{v:.16e}");
            }
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("plain data")
    }
}

/// Largest deviation of a channel from its initial value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Drift {
    pub max_abs_deviation: f64,
    pub time_of_max: f64,
}

pub fn monitor_drift(traj: &Trajectory, channel: &str) -> Result<Drift, OdeError> {
    let c = traj.channel(channel)?;
    let mut d = Drift { max_abs_deviation: 0.0, time_of_max: traj.times[0] };
    for (k, v) in c.iter().enumerate() {
        let dev = (v - c[0]).abs();
        if dev > d.max_abs_deviation || dev.is_nan() {
            d = Drift { max_abs_deviation: dev, time_of_max: traj.times[k] };
        }
    }
    Ok(d)
}

struct Recorder<'m, 'a> {
    traj: Trajectory,
    monitors: &'m [Monitor<'a>],
}

impl Recorder<'_, '_> {
    fn push(&mut self, t: f64, y: &[f64]) -> Result<(), OdeError> {
        self.traj.times.push(t);
        self.traj.states.push(y.to_vec());
        for (k, m) in self.monitors.iter().enumerate() {
            let v = (m.f)(t, y).map_err(|e| OdeError::Monitor { name: m.name.clone(), t, source: Box::new(e) })?;
            self.traj.monitors[k].1.push(v);
        }
        Ok(())
    }
}

fn check_finite(t: f64, y: &[f64]) -> Result<(), OdeError> {
    match y.iter().position(|v| !v.is_finite()) {
        Some(component) => Err(OdeError::StepFailure { t, component }),
        None => Ok(()),
    }
}

fn axpy(y: &[f64], h: f64, k: &[f64]) -> Vec<f64> {
    y.iter().zip(k).map(|(a, b)| a + h * b).collect()
}

/// Integrates `problem` from `y0` over `[t0, t1]`.
pub fn integrate(problem: &OdeProblem<'_>, config: &IntegratorConfig, y0: &[f64], monitors: &[Monitor<'_>]) -> Result<Trajectory, OdeError> {
    if y0.len() != problem.dim() {
        return Err(OdeError::Config(format!("initial state has {} components, problem has {}", y0.len(), problem.dim())));
    }
    if !(config.t1 > config.t0) {
        return Err(OdeError::Config("t1 must exceed t0".into()));
    }
    let stride = config.stride.max(1);
    let mut rec = Recorder {
        traj: Trajectory {
            labels: problem.labels.clone(),
            times: vec![],
            states: vec![],
            monitors: monitors.iter().map(|m| (m.name.clone(), vec![])).collect(),
        },
        monitors,
    };
    check_finite(config.t0, y0)?;
    rec.push(config.t0, y0)?;
    match config.method {
        Method::Rk4 { h } => rk4(problem, config, h, y0, stride, &mut rec)?,
        Method::Dp45 { rtol, atol } => dp45(problem, config, rtol, atol, y0, stride, &mut rec)?,
    }
    Ok(rec.traj)
}

fn rk4(problem: &OdeProblem<'_>, cfg: &IntegratorConfig, h: f64, y0: &[f64], stride: usize, rec: &mut Recorder) -> Result<(), OdeError> {
    if !(h > 0.0) {
        return Err(OdeError::Config("step size must be positive".into()));
    }
    let span = cfg.t1 - cfg.t0;
    let steps = ((span / h).round() as usize).max(1);
    if steps > cfg.max_steps {
        return Err(OdeError::MaxStepsExceeded { t: cfg.t0, steps: cfg.max_steps });
    }
    let h = span / steps as f64;
    let mut y = y0.to_vec();
    for k in 0..steps {
        let t = cfg.t0 + k as f64 * h;
        let k1 = problem.eval(t, &y)?;
        let k2 = problem.eval(t + 0.5 * h, &axpy(&y, 0.5 * h, &k1))?;
        let k3 = problem.eval(t + 0.5 * h, &axpy(&y, 0.5 * h, &k2))?;
        let k4 = problem.eval(t + h, &axpy(&y, h, &k3))?;
        for i in 0..y.len() {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        let tn = if k + 1 == steps { cfg.t1 } else { cfg.t0 + (k + 1) as f64 * h };
        check_finite(tn, &y)?;
        if (k + 1) % stride == 0 || k + 1 == steps {
            rec.push(tn, &y)?;
        }
    }
    Ok(())
}

const A: [[f64; 6]; 6] = [
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const C: [f64; 6] = [1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
/// Fifth-order weights minus embedded fourth-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

fn dp45(problem: &OdeProblem<'_>, cfg: &IntegratorConfig, rtol: f64, atol: f64, y0: &[f64], stride: usize, rec: &mut Recorder) -> Result<(), OdeError> {
    if !(rtol > 0.0 && atol >= 0.0) {
        return Err(OdeError::Config("tolerances must be positive".into()));
    }
    let n = y0.len();
    let mut t = cfg.t0;
    let mut y = y0.to_vec();
    let mut k1 = problem.eval(t, &y)?;
    let mut h = {
        let scale: f64 = y.iter().map(|v| atol + rtol * v.abs()).fold(f64::INFINITY, f64::min);
        let slope = k1.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let guess = if slope > 0.0 { 0.01 * scale.max(1e-12) / slope } else { 1e-3 };
        guess.clamp(1e-10, cfg.t1 - cfg.t0).min(0.1 * (cfg.t1 - cfg.t0))
    };
    let mut accepted = 0usize;
    let mut attempts = 0usize;
    while t < cfg.t1 {
        attempts += 1;
        if attempts > cfg.max_steps {
            return Err(OdeError::MaxStepsExceeded { t, steps: cfg.max_steps });
        }
        let last = t + h >= cfg.t1;
        if last {
            h = cfg.t1 - t;
        }
        if h <= 16.0 * f64::EPSILON * t.abs().max(1.0) {
            return Err(OdeError::ToleranceUnreachable { t, h });
        }
        let mut ks: Vec<Vec<f64>> = vec![k1.clone()];
        for s in 0..6 {
            let mut ys = y.clone();
            for (j, kj) in ks.iter().enumerate() {
                let a = A[s][j];
                if a != 0.0 {
                    for i in 0..n {
                        ys[i] += h * a * kj[i];
                    }
                }
            }
            ks.push(problem.eval(t + C[s] * h, &ys)?);
            if s == 5 {
                // Stage 7 is evaluated at the fifth-order solution.
                let ynew = ys;
                let mut err = 0.0;
                for i in 0..n {
                    let e: f64 = (0..7).map(|j| E[j] * ks[j][i]).sum::<f64>() * h;
                    let sc = atol + rtol * y[i].abs().max(ynew[i].abs());
                    err += (e / sc).powi(2);
                }
                let err = (err / n.max(1) as f64).sqrt();
                if !err.is_finite() {
                    let bad = ynew.iter().position(|v| !v.is_finite()).unwrap_or(0);
                    if h < 1e-12 {
                        return Err(OdeError::StepFailure { t, component: bad });
                    }
                    h *= 0.2;
                    break;
                }
                if err <= 1.0 {
                    t = if last { cfg.t1 } else { t + h };
                    y = ynew;
                    k1 = ks[6].clone();
                    accepted += 1;
                    if accepted % stride == 0 || t >= cfg.t1 {
                        rec.push(t, &y)?;
                    }
                }
                let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                h *= factor;
            }
        }
    }
    Ok(())
}
