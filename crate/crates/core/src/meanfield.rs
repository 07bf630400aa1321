//! Two-group mean-field SI model.
//!
//! State is `(U1, U2, E)`: unengaged fractions of the two trait groups and the
//! engaged fraction, summing to one. With degree `k` and per-edge rates
//! `tau1`, `tau2`:
//!
//! ```text
//! dU1/dt = -k tau1 U1 E
//! dU2/dt = -k tau2 U2 E
//! dE/dt  =  k (tau1 U1 + tau2 U2) E
//! ```
//!
//! One time unit is one simulation iteration.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MeanFieldError {
    #[error("step {0} does not divide one time unit")]
    InvalidStep(f64),
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("invalid parameters: {0}")]
    InvalidParameters(String),
    #[error("state is not an equilibrium (|rhs| = {0:e})")]
    NotAnEquilibrium(f64),
    #[error("initial engaged fraction {0} is above 0.05")]
    InitTooLarge(f64),
    #[error("observed curve is constant")]
    DegenerateCurve,
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanFieldParams {
    pub tau1: f64,
    pub tau2: f64,
    pub k: f64,
}

impl MeanFieldParams {
    pub fn new(tau1: f64, tau2: f64, k: f64) -> Result<Self, MeanFieldError> {
        if !(tau1 >= 0.0 && tau2 >= 0.0 && tau1.is_finite() && tau2.is_finite()) {
            return Err(MeanFieldError::InvalidParameters(format!("rates ({tau1}, {tau2}) must be finite and >= 0")));
        }
        if !(k >= 1.0 && k.is_finite()) {
            return Err(MeanFieldError::InvalidParameters(format!("degree {k} must be >= 1")));
        }
        Ok(Self { tau1, tau2, k })
    }

    /// Growth rate of E near the spread-free state with group-1 share `a`.
    pub fn lambda(&self, a: f64) -> f64 {
        self.k * (self.tau1 * a + self.tau2 * (1.0 - a))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanFieldState {
    pub u1: f64,
    pub u2: f64,
    pub e: f64,
}

impl MeanFieldState {
    pub const FULLY_ENGAGED: Self = Self { u1: 0.0, u2: 0.0, e: 1.0 };

    pub fn new(u1: f64, u2: f64, e: f64) -> Self {
        Self { u1, u2, e }
    }

    /// `E = 1/n`, the rest split by group share `a` for group 1.
    pub fn seeded(n: usize, a: f64) -> Self {
        let e = 1.0 / n as f64;
        Self {
            u1: a * (1.0 - e),
            u2: (1.0 - a) * (1.0 - e),
            e,
        }
    }

    pub fn spread_free(a: f64) -> Self {
        Self { u1: a, u2: 1.0 - a, e: 0.0 }
    }

    pub fn mass(&self) -> f64 {
        self.u1 + self.u2 + self.e
    }

    pub fn validate(&self) -> Result<(), MeanFieldError> {
        let ok = [self.u1, self.u2, self.e].iter().all(|v| (0.0..=1.0).contains(v));
        if !ok || (self.mass() - 1.0).abs() > 1e-9 {
            return Err(MeanFieldError::InvalidState(format!("{self:?}")));
        }
        Ok(())
    }

    fn axpy(&self, h: f64, d: &Self) -> Self {
        Self {
            u1: self.u1 + h * d.u1,
            u2: self.u2 + h * d.u2,
            e: self.e + h * d.e,
        }
    }

    pub fn to_array(&self) -> [f64; 3] {
        [self.u1, self.u2, self.e]
    }
}

pub fn rhs(s: &MeanFieldState, p: &MeanFieldParams) -> MeanFieldState {
    let a = p.k * p.tau1 * s.u1 * s.e;
    let b = p.k * p.tau2 * s.u2 * s.e;
    MeanFieldState { u1: -a, u2: -b, e: a + b }
}

fn rk4_step(s: &MeanFieldState, p: &MeanFieldParams, h: f64) -> MeanFieldState {
    let k1 = rhs(s, p);
    let k2 = rhs(&s.axpy(h / 2.0, &k1), p);
    let k3 = rhs(&s.axpy(h / 2.0, &k2), p);
    let k4 = rhs(&s.axpy(h, &k3), p);
    MeanFieldState {
        u1: s.u1 + h / 6.0 * (k1.u1 + 2.0 * k2.u1 + 2.0 * k3.u1 + k4.u1),
        u2: s.u2 + h / 6.0 * (k1.u2 + 2.0 * k2.u2 + 2.0 * k3.u2 + k4.u2),
        e: s.e + h / 6.0 * (k1.e + 2.0 * k2.e + 2.0 * k3.e + k4.e),
    }
}

pub const DEFAULT_STEP: f64 = 0.01;

fn steps_per_unit(h: f64) -> Result<usize, MeanFieldError> {
    if !(h > 0.0 && h <= 1.0) {
        return Err(MeanFieldError::InvalidStep(h));
    }
    let n = (1.0 / h).round();
    if (n * h - 1.0).abs() > 1e-9 {
        return Err(MeanFieldError::InvalidStep(h));
    }
    Ok(n as usize)
}

/// Samples at t = 0, 1, ..., t_end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<MeanFieldState>,
}

impl Trajectory {
    pub fn engaged(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.e).collect()
    }

    /// Engaged fraction of each group over the whole population, given the
    /// group shares.
    pub fn group_engaged(&self, shares: [f64; 2]) -> [Vec<f64>; 2] {
        [
            self.states.iter().map(|s| shares[0] - s.u1).collect(),
            self.states.iter().map(|s| shares[1] - s.u2).collect(),
        ]
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), MeanFieldError> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["t", "U1", "U2", "E"])?;
        for (t, s) in self.states.iter().enumerate() {
            wtr.write_record([t.to_string(), s.u1.to_string(), s.u2.to_string(), s.e.to_string()])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Classical RK4 with fixed step `h`, which must divide one time unit.
pub fn integrate(p: &MeanFieldParams, init: &MeanFieldState, t_end: usize, h: f64) -> Result<Trajectory, MeanFieldError> {
    let per_unit = steps_per_unit(h)?;
    init.validate()?;
    let mut states = Vec::with_capacity(t_end + 1);
    let mut s = *init;
    states.push(s);
    for _ in 0..t_end {
        for _ in 0..per_unit {
            s = rk4_step(&s, p, h);
        }
        states.push(s);
    }
    Ok(Trajectory { states })
}

/// The two equilibrium families.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Equilibrium {
    /// `(a, 1 - a, 0)` for any `a` in [0, 1].
    SpreadFree,
    FullyEngaged,
}

impl Equilibrium {
    pub fn state(&self, a: f64) -> MeanFieldState {
        match self {
            Equilibrium::SpreadFree => MeanFieldState::spread_free(a),
            Equilibrium::FullyEngaged => MeanFieldState::FULLY_ENGAGED,
        }
    }
}

pub fn equilibria(_p: &MeanFieldParams) -> [Equilibrium; 2] {
    [Equilibrium::SpreadFree, Equilibrium::FullyEngaged]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    Stable,
    Unstable,
    /// No strictly positive or strictly negative direction to report, as
    /// with zero rates.
    Degenerate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub equilibrium: MeanFieldState,
    pub jacobian: [[f64; 2]; 2],
    pub eigenvalues: [f64; 2],
    pub fd_eigenvalues: [f64; 2],
    pub classification: Classification,
    /// Growth rate along E at spread-free states.
    pub lambda: Option<f64>,
}

/// Jacobian of the reduced system in (U1, U2) with E = 1 - U1 - U2.
pub fn reduced_jacobian(p: &MeanFieldParams, s: &MeanFieldState) -> [[f64; 2]; 2] {
    let (u1, u2) = (s.u1, s.u2);
    [
        [-p.k * p.tau1 * (1.0 - 2.0 * u1 - u2), p.k * p.tau1 * u1],
        [p.k * p.tau2 * u2, -p.k * p.tau2 * (1.0 - u1 - 2.0 * u2)],
    ]
}

fn reduced_rhs(p: &MeanFieldParams, u1: f64, u2: f64) -> [f64; 2] {
    let d = rhs(&MeanFieldState::new(u1, u2, 1.0 - u1 - u2), p);
    [d.u1, d.u2]
}

fn fd_jacobian(p: &MeanFieldParams, s: &MeanFieldState, h: f64) -> [[f64; 2]; 2] {
    let mut j = [[0.0; 2]; 2];
    for col in 0..2 {
        let (du1, du2) = if col == 0 { (h, 0.0) } else { (0.0, h) };
        let plus = reduced_rhs(p, s.u1 + du1, s.u2 + du2);
        let minus = reduced_rhs(p, s.u1 - du1, s.u2 - du2);
        for row in 0..2 {
            j[row][col] = (plus[row] - minus[row]) / (2.0 * h);
        }
    }
    j
}

/// Real eigenvalues of a 2x2 matrix in ascending order. The discriminant is
/// clamped at zero; the reduced Jacobian at equilibria is always real.
fn eigenvalues_2x2(m: [[f64; 2]; 2]) -> [f64; 2] {
    let tr = m[0][0] + m[1][1];
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
    [tr / 2.0 - disc, tr / 2.0 + disc]
}

const EIG_TOL: f64 = 1e-12;

pub fn stability(p: &MeanFieldParams, point: &MeanFieldState) -> Result<StabilityReport, MeanFieldError> {
    point.validate()?;
    let d = rhs(point, p);
    let norm = d.u1.abs() + d.u2.abs() + d.e.abs();
    if norm > 1e-12 {
        return Err(MeanFieldError::NotAnEquilibrium(norm));
    }
    let jacobian = reduced_jacobian(p, point);
    let eigenvalues = eigenvalues_2x2(jacobian);
    let fd_eigenvalues = eigenvalues_2x2(fd_jacobian(p, point, 1e-6));
    let classification = if eigenvalues[1] > EIG_TOL {
        Classification::Unstable
    } else if eigenvalues[1] < -EIG_TOL {
        Classification::Stable
    } else {
        Classification::Degenerate
    };
    let lambda = (point.e == 0.0).then(|| {
        let a = point.u1 / (point.u1 + point.u2);
        p.lambda(a)
    });
    Ok(StabilityReport {
        equilibrium: *point,
        jacobian,
        eigenvalues,
        fd_eigenvalues,
        classification,
        lambda,
    })
}

/// Early-time comparison of E(t) with `E(0) exp(lambda t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthCheck {
    pub lambda: f64,
    /// Integer times compared (those with E(t) <= the cap).
    pub samples: usize,
    /// max |E - E0 e^{lambda t}| / (E0 e^{lambda t}).
    pub relative_gap: f64,
    /// max |ln E - ln E0 - lambda t|.
    pub log_deviation: f64,
}

pub const GROWTH_CAP: f64 = 0.1;

/// Compares the trajectory at integer times while E(t) stays at or below
/// `cap`, up to `horizon`.
pub fn early_growth_check(
    p: &MeanFieldParams,
    init: &MeanFieldState,
    horizon: usize,
    cap: f64,
) -> Result<GrowthCheck, MeanFieldError> {
    if init.e > 0.05 {
        return Err(MeanFieldError::InitTooLarge(init.e));
    }
    if init.e <= 0.0 {
        return Err(MeanFieldError::InvalidState("initial engaged fraction must be positive".into()));
    }
    let a = init.u1 / (init.u1 + init.u2);
    let lambda = p.lambda(a);
    let traj = integrate(p, init, horizon, DEFAULT_STEP)?;
    let mut check = GrowthCheck {
        lambda,
        samples: 0,
        relative_gap: 0.0,
        log_deviation: 0.0,
    };
    for (t, s) in traj.states.iter().enumerate() {
        if s.e > cap {
            break;
        }
        let expo = init.e * (lambda * t as f64).exp();
        check.samples += 1;
        check.relative_gap = check.relative_gap.max((s.e - expo).abs() / expo);
        check.log_deviation = check.log_deviation.max((s.e.ln() - expo.ln()).abs());
    }
    Ok(check)
}

/// Group-resolved targets added to the fit objective.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupTargets {
    pub shares: [f64; 2],
    pub curves: [Vec<f64>; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitTauOptions {
    pub bounds: [(f64, f64); 2],
    pub step: f64,
    pub starts: Vec<[f64; 2]>,
    pub max_evaluations: usize,
    pub groups: Option<GroupTargets>,
}

impl Default for FitTauOptions {
    fn default() -> Self {
        Self {
            bounds: [(0.0, 1.0), (0.0, 1.0)],
            step: DEFAULT_STEP,
            starts: vec![[0.05, 0.05], [0.05, 0.5], [0.5, 0.05], [0.5, 0.5], [0.25, 0.25]],
            max_evaluations: 4000,
            groups: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultistartEntry {
    pub start: [f64; 2],
    pub start_objective: f64,
    pub end: [f64; 2],
    pub objective: f64,
    pub evaluations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauFit {
    pub tau1: f64,
    pub tau2: f64,
    pub k: f64,
    pub init: MeanFieldState,
    pub objective: f64,
    /// RMSE of the fitted E(t) against the observed total curve.
    pub rmse: f64,
    pub multistart_trace: Vec<MultistartEntry>,
}

impl TauFit {
    pub fn params(&self) -> MeanFieldParams {
        MeanFieldParams {
            tau1: self.tau1,
            tau2: self.tau2,
            k: self.k,
        }
    }

    pub fn to_json(&self) -> Value {
        json!({
            "tau1": self.tau1,
            "tau2": self.tau2,
            "k": self.k,
            "init": self.init.to_array(),
            "rmse": self.rmse,
            "multistart_trace": self.multistart_trace,
        })
    }

    /// Model E(t) at t = 0..=t_end.
    pub fn curve(&self, t_end: usize) -> Vec<f64> {
        integrate(&self.params(), &self.init, t_end, DEFAULT_STEP)
            .map(|t| t.engaged())
            .unwrap_or_default()
    }
}

struct Objective<'a> {
    observed: &'a [f64],
    init: MeanFieldState,
    k: f64,
    opts: &'a FitTauOptions,
}

impl Objective<'_> {
    fn clamp(&self, x: [f64; 2]) -> [f64; 2] {
        [
            x[0].clamp(self.opts.bounds[0].0, self.opts.bounds[0].1),
            x[1].clamp(self.opts.bounds[1].0, self.opts.bounds[1].1),
        ]
    }

    fn eval(&self, x: [f64; 2]) -> f64 {
        let p = MeanFieldParams {
            tau1: x[0],
            tau2: x[1],
            k: self.k,
        };
        let t_end = self.observed.len() - 1;
        let traj = integrate(&p, &self.init, t_end, self.opts.step).expect("validated before fitting");
        let mut sse: f64 = traj
            .states
            .iter()
            .zip(self.observed)
            .map(|(s, o)| (s.e - o).powi(2))
            .sum();
        if let Some(g) = &self.opts.groups {
            let model = traj.group_engaged(g.shares);
            for (m, o) in model.iter().zip(&g.curves) {
                sse += m.iter().zip(o).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            }
        }
        sse
    }
}

/// Bounded Nelder–Mead: vertices are clamped into the box.
fn nelder_mead(obj: &Objective<'_>, start: [f64; 2], max_evals: usize) -> ([f64; 2], f64, usize) {
    let evals = std::cell::Cell::new(0usize);
    let f = |x: [f64; 2]| {
        evals.set(evals.get() + 1);
        obj.eval(x)
    };
    let mut best = (obj.clamp(start), f64::INFINITY);
    best.1 = f(best.0);
    let mut scale = 0.05;
    // Restart from the incumbent until a restart stops improving.
    loop {
        let x0 = best.0;
        let mut simplex: Vec<([f64; 2], f64)> = [x0, [x0[0] + scale, x0[1]], [x0[0], x0[1] + scale]]
            .into_iter()
            .map(|x| {
                let x = obj.clamp(x);
                (x, f(x))
            })
            .collect();
        loop {
            simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
            let spread = simplex[2].1 - simplex[0].1;
            let size = simplex
                .iter()
                .map(|(x, _)| (x[0] - simplex[0].0[0]).abs().max((x[1] - simplex[0].0[1]).abs()))
                .fold(0.0, f64::max);
            if size < 1e-10 || (spread <= 1e-20 && size < 1e-7) || evals.get() >= max_evals {
                break;
            }
            let c = [
                (simplex[0].0[0] + simplex[1].0[0]) / 2.0,
                (simplex[0].0[1] + simplex[1].0[1]) / 2.0,
            ];
            let worst = simplex[2];
            let along = |t: f64| obj.clamp([c[0] + t * (worst.0[0] - c[0]), c[1] + t * (worst.0[1] - c[1])]);
            let xr = along(-1.0);
            let fr = f(xr);
            if fr < simplex[0].1 {
                let xe = along(-2.0);
                let fe = f(xe);
                simplex[2] = if fe < fr { (xe, fe) } else { (xr, fr) };
            } else if fr < simplex[1].1 {
                simplex[2] = (xr, fr);
            } else {
                let (xc, fc) = if fr < worst.1 {
                    let x = along(-0.5);
                    (x, f(x))
                } else {
                    let x = along(0.5);
                    (x, f(x))
                };
                if fc < worst.1.min(fr) {
                    simplex[2] = (xc, fc);
                } else {
                    let b = simplex[0].0;
                    for v in simplex.iter_mut().skip(1) {
                        let x = obj.clamp([(b[0] + v.0[0]) / 2.0, (b[1] + v.0[1]) / 2.0]);
                        *v = (x, f(x));
                    }
                }
            }
        }
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let improved = simplex[0].1 < best.1 * (1.0 - 1e-12) - 1e-300;
        if simplex[0].1 <= best.1 {
            best = simplex[0];
        }
        if !improved || evals.get() >= max_evals {
            break;
        }
        scale = (scale * 0.5).max(1e-4);
    }
    (best.0, best.1, evals.get())
}

/// Least-squares fit of `(tau1, tau2)` to an observed engagement curve
/// sampled at t = 0, 1, ...
pub fn fit_tau(observed: &[f64], init: &MeanFieldState, k: f64, opts: &FitTauOptions) -> Result<TauFit, MeanFieldError> {
    if observed.len() < 3 {
        return Err(MeanFieldError::InvalidParameters("need at least 3 observed points".into()));
    }
    if !(k >= 1.0) {
        return Err(MeanFieldError::InvalidParameters(format!("degree {k} must be >= 1")));
    }
    steps_per_unit(opts.step)?;
    init.validate()?;
    if let Some(g) = &opts.groups {
        if g.curves.iter().any(|c| c.len() != observed.len()) {
            return Err(MeanFieldError::InvalidParameters("group curves differ in length from total".into()));
        }
    }
    let (lo, hi) = observed
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if hi - lo < 1e-12 {
        return Err(MeanFieldError::DegenerateCurve);
    }
    if opts.starts.is_empty() {
        return Err(MeanFieldError::InvalidParameters("no multistart points".into()));
    }
    let obj = Objective {
        observed,
        init: *init,
        k,
        opts,
    };
    let trace: Vec<MultistartEntry> = opts
        .starts
        .par_iter()
        .map(|&start| {
            let start = obj.clamp(start);
            let start_objective = obj.eval(start);
            let (end, objective, evaluations) = nelder_mead(&obj, start, opts.max_evaluations);
            MultistartEntry {
                start,
                start_objective,
                end,
                objective,
                evaluations,
            }
        })
        .collect();
    let best = trace
        .iter()
        .min_by(|a, b| a.objective.total_cmp(&b.objective))
        .expect("non-empty");
    // With equal unengaged shares and no group targets the total curve is
    // symmetric in the two rates; report them with group 1 as the slower one.
    let mut end = best.end;
    if opts.groups.is_none() && init.u1 == init.u2 && end[0] > end[1] {
        end.swap(0, 1);
    }
    let params = MeanFieldParams {
        tau1: end[0],
        tau2: end[1],
        k,
    };
    let model = integrate(&params, init, observed.len() - 1, opts.step)?.engaged();
    let rmse = (model.iter().zip(observed).map(|(m, o)| (m - o).powi(2)).sum::<f64>() / observed.len() as f64).sqrt();
    Ok(TauFit {
        tau1: end[0],
        tau2: end[1],
        k,
        init: *init,
        objective: best.objective,
        rmse,
        multistart_trace: trace,
    })
}
