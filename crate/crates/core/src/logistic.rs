//! Logistic models of the per-exposure share decision.
//!
//! Three parameterizations share one fitting path:
//!
//! * `full32`: one weight per trait profile plus a severity weight, no
//!   separate intercept.
//! * `two_group`: one weight per behavioral profile group plus severity.
//! * `linear`: five additive trait weights, severity, and an intercept.
//!
//! Each variant is a fixed design row `x(t, s)`; the linear score is `θ·x`.
//! Fitting runs Newton-Raphson with step halving on the (concave) likelihood
//! and an optional tiny ridge penalty.

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::events::Severity;
use crate::traits::{enumerate_profiles, ProfileGrouping, Trait, TraitProfile, NUM_PROFILES, NUM_TRAITS};

#[derive(Debug, Error)]
pub enum LogisticError {
    #[error("dataset is empty")]
    EmptyData,
    #[error("coefficient {0:?} has no supporting rows in the data")]
    UnseenFeature(String),
    #[error("profile {0} is not in any group")]
    UnknownProfileGroup(TraitProfile),
    #[error("two-group model needs exactly 2 groups, got {0}")]
    WrongGroupCount(usize),
    #[error("Fisher information is singular")]
    SingularInformation,
    #[error("malformed parameters: {0}")]
    Malformed(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

const P_CLAMP: f64 = 1e-12;

/// Numerically stable `1 / (1 + e^-z)`.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// One prompt outcome used as a training datapoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExposureRow {
    pub profile: TraitProfile,
    pub severity: Severity,
    pub engaged: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct Cell {
    trials: u64,
    yes: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExposureDataset {
    rows: Vec<ExposureRow>,
}

impl ExposureDataset {
    pub fn new(rows: Vec<ExposureRow>) -> Self {
        Self { rows }
    }

    pub fn push(&mut self, row: ExposureRow) {
        self.rows.push(row);
    }

    pub fn rows(&self) -> &[ExposureRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Yes-rate of every (profile, severity) cell that has data.
    pub fn cell_rates(&self) -> BTreeMap<(TraitProfile, Severity), f64> {
        self.cells()
            .into_iter()
            .filter(|(_, c)| c.trials > 0)
            .map(|(k, c)| (k, c.yes as f64 / c.trials as f64))
            .collect()
    }

    fn cells(&self) -> BTreeMap<(TraitProfile, Severity), Cell> {
        let mut out: BTreeMap<(TraitProfile, Severity), Cell> = BTreeMap::new();
        for r in &self.rows {
            let c = out.entry((r.profile, r.severity)).or_default();
            c.trials += 1;
            c.yes += u64::from(r.engaged);
        }
        out
    }
}

/// Which model to fit.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelSpec {
    Full32,
    TwoGroup(ProfileGrouping),
    Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FullProfileParams {
    pub beta_profile: [f64; NUM_PROFILES],
    pub beta_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoGroupParams {
    pub beta_g1: f64,
    pub beta_g2: f64,
    pub beta_s: f64,
    grouping: ProfileGrouping,
    lookup: [Option<usize>; NUM_PROFILES],
}

impl TwoGroupParams {
    pub fn new(
        beta_g1: f64,
        beta_g2: f64,
        beta_s: f64,
        grouping: ProfileGrouping,
    ) -> Result<Self, LogisticError> {
        if grouping.num_groups() != 2 {
            return Err(LogisticError::WrongGroupCount(grouping.num_groups()));
        }
        let lookup = grouping.lookup_table();
        Ok(Self {
            beta_g1,
            beta_g2,
            beta_s,
            grouping,
            lookup,
        })
    }

    pub fn grouping(&self) -> &ProfileGrouping {
        &self.grouping
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearTraitParams {
    /// Indexed in canonical trait order (O, C, E, N, A).
    pub beta_traits: [f64; NUM_TRAITS],
    pub beta_s: f64,
    pub intercept: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LogisticParams {
    Full32(FullProfileParams),
    TwoGroup(TwoGroupParams),
    Linear(LinearTraitParams),
}

impl LogisticParams {
    /// All-zero coefficients for `spec`.
    pub fn zeros(spec: &ModelSpec) -> Result<Self, LogisticError> {
        Ok(match spec {
            ModelSpec::Full32 => Self::Full32(FullProfileParams {
                beta_profile: [0.0; NUM_PROFILES],
                beta_s: 0.0,
            }),
            ModelSpec::TwoGroup(g) => Self::TwoGroup(TwoGroupParams::new(0.0, 0.0, 0.0, g.clone())?),
            ModelSpec::Linear => Self::Linear(LinearTraitParams {
                beta_traits: [0.0; NUM_TRAITS],
                beta_s: 0.0,
                intercept: 0.0,
            }),
        })
    }

    pub fn variant_name(&self) -> &'static str {
        match self {
            Self::Full32(_) => "full32",
            Self::TwoGroup(_) => "two_group",
            Self::Linear(_) => "linear",
        }
    }

    pub fn num_coefficients(&self) -> usize {
        match self {
            Self::Full32(_) => NUM_PROFILES + 1,
            Self::TwoGroup(_) => 3,
            Self::Linear(_) => NUM_TRAITS + 2,
        }
    }

    /// Position of the severity weight in [`Self::coefficients`].
    pub fn severity_index(&self) -> usize {
        match self {
            Self::Full32(_) => NUM_PROFILES,
            Self::TwoGroup(_) => 2,
            Self::Linear(_) => NUM_TRAITS,
        }
    }

    /// Coefficient names in design-row order.
    pub fn coefficient_names(&self) -> Vec<String> {
        match self {
            Self::Full32(_) => enumerate_profiles()
                .into_iter()
                .map(|p| p.to_string())
                .chain(["severity".to_string()])
                .collect(),
            Self::TwoGroup(_) => vec!["group1".into(), "group2".into(), "severity".into()],
            Self::Linear(_) => Trait::ALL
                .iter()
                .map(|t| t.name().to_string())
                .chain(["severity".to_string(), "intercept".to_string()])
                .collect(),
        }
    }

    pub fn coefficients(&self) -> Vec<f64> {
        match self {
            Self::Full32(p) => p.beta_profile.iter().copied().chain([p.beta_s]).collect(),
            Self::TwoGroup(p) => vec![p.beta_g1, p.beta_g2, p.beta_s],
            Self::Linear(p) => p
                .beta_traits
                .iter()
                .copied()
                .chain([p.beta_s, p.intercept])
                .collect(),
        }
    }

    pub fn set_coefficients(&mut self, theta: &[f64]) {
        assert_eq!(theta.len(), self.num_coefficients());
        match self {
            Self::Full32(p) => {
                p.beta_profile.copy_from_slice(&theta[..NUM_PROFILES]);
                p.beta_s = theta[NUM_PROFILES];
            }
            Self::TwoGroup(p) => {
                p.beta_g1 = theta[0];
                p.beta_g2 = theta[1];
                p.beta_s = theta[2];
            }
            Self::Linear(p) => {
                p.beta_traits.copy_from_slice(&theta[..NUM_TRAITS]);
                p.beta_s = theta[NUM_TRAITS];
                p.intercept = theta[NUM_TRAITS + 1];
            }
        }
    }

    /// Design row `x(t, s)`.
    pub fn features(&self, profile: TraitProfile, severity: Severity) -> Result<Vec<f64>, LogisticError> {
        let s = severity.as_f64();
        Ok(match self {
            Self::Full32(_) => {
                let mut x = vec![0.0; NUM_PROFILES + 1];
                x[profile.index()] = 1.0;
                x[NUM_PROFILES] = s;
                x
            }
            Self::TwoGroup(p) => match p.lookup[profile.index()] {
                Some(1) => vec![1.0, 0.0, s],
                Some(2) => vec![0.0, 1.0, s],
                _ => return Err(LogisticError::UnknownProfileGroup(profile)),
            },
            Self::Linear(_) => profile
                .bits()
                .iter()
                .map(|&b| f64::from(u8::from(b)))
                .chain([s, 1.0])
                .collect(),
        })
    }

    pub fn score(&self, profile: TraitProfile, severity: Severity) -> Result<f64, LogisticError> {
        let x = self.features(profile, severity)?;
        Ok(x.iter().zip(self.coefficients()).map(|(a, b)| a * b).sum())
    }

    /// Engagement probability for a trait profile under an event of the given severity.
    pub fn predict(&self, profile: TraitProfile, severity: Severity) -> Result<f64, LogisticError> {
        self.score(profile, severity).map(sigmoid)
    }

    pub fn to_json(&self) -> Value {
        let coefficients: serde_json::Map<String, Value> = self
            .coefficient_names()
            .into_iter()
            .zip(self.coefficients())
            .map(|(k, v)| (k, json!(v)))
            .collect();
        let mut out = json!({
            "variant": self.variant_name(),
            "coefficients": coefficients,
        });
        if let Self::TwoGroup(p) = self {
            out["grouping"] = serde_json::to_value(&p.grouping).expect("grouping serializes");
        }
        out
    }

    pub fn from_json(v: &Value) -> Result<Self, LogisticError> {
        let variant = v["variant"]
            .as_str()
            .ok_or_else(|| LogisticError::Malformed("missing \"variant\"".into()))?;
        let mut params = match variant {
            "full32" => Self::zeros(&ModelSpec::Full32)?,
            "linear" => Self::zeros(&ModelSpec::Linear)?,
            "two_group" => {
                let g: ProfileGrouping = serde_json::from_value(v["grouping"].clone())
                    .map_err(|e| LogisticError::Malformed(format!("grouping: {e}")))?;
                Self::zeros(&ModelSpec::TwoGroup(g))?
            }
            other => return Err(LogisticError::Malformed(format!("unknown variant {other:?}"))),
        };
        let coeffs = v["coefficients"]
            .as_object()
            .ok_or_else(|| LogisticError::Malformed("missing \"coefficients\"".into()))?;
        let theta = params
            .coefficient_names()
            .iter()
            .map(|name| {
                coeffs
                    .get(name)
                    .and_then(Value::as_f64)
                    .ok_or_else(|| LogisticError::Malformed(format!("missing coefficient {name:?}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        params.set_coefficients(&theta);
        Ok(params)
    }
}

struct DesignCell {
    x: Vec<f64>,
    trials: f64,
    yes: f64,
}

fn design(params: &LogisticParams, data: &ExposureDataset) -> Result<Vec<DesignCell>, LogisticError> {
    data.cells()
        .into_iter()
        .map(|((profile, severity), c)| {
            Ok(DesignCell {
                x: params.features(profile, severity)?,
                trials: c.trials as f64,
                yes: c.yes as f64,
            })
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Negative log-likelihood with `p` clamped to `[1e-12, 1 - 1e-12]`.
pub fn nll(params: &LogisticParams, data: &ExposureDataset) -> Result<f64, LogisticError> {
    if data.is_empty() {
        return Err(LogisticError::EmptyData);
    }
    let theta = params.coefficients();
    let mut total = 0.0;
    for cell in design(params, data)? {
        let p = sigmoid(dot(&cell.x, &theta)).clamp(P_CLAMP, 1.0 - P_CLAMP);
        total -= cell.yes * p.ln() + (cell.trials - cell.yes) * (1.0 - p).ln();
    }
    Ok(total)
}

/// Gradient of the (unclamped) negative log-likelihood, `Σ (p - y) x`.
pub fn nll_gradient(params: &LogisticParams, data: &ExposureDataset) -> Result<Vec<f64>, LogisticError> {
    let theta = params.coefficients();
    let mut g = vec![0.0; theta.len()];
    for cell in design(params, data)? {
        let p = sigmoid(dot(&cell.x, &theta));
        let r = cell.trials * p - cell.yes;
        for (gi, xi) in g.iter_mut().zip(&cell.x) {
            *gi += r * xi;
        }
    }
    Ok(g)
}

#[derive(Debug, Clone)]
pub struct FitOptions {
    /// L2 penalty weight `λ`; the objective is `nll + λ/2 ‖θ‖²`.
    pub ridge: f64,
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    /// Condition number above which Newton falls back to gradient descent.
    pub max_condition: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            ridge: 1e-6,
            max_iterations: 200,
            gradient_tolerance: 1e-8,
            max_condition: 1e12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub converged: bool,
    pub iterations: usize,
    /// Clamped negative log-likelihood at the returned coefficients.
    pub nll: f64,
    /// Objective actually minimized (unclamped NLL plus the ridge term).
    pub penalized_nll: f64,
    pub gradient_max_norm: f64,
    pub gradient_steps: usize,
    /// Coefficients held at zero because no row exercises them.
    pub pinned: Vec<String>,
    /// Indicator features whose rows all share one outcome.
    pub separation: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: LogisticParams,
    pub report: FitReport,
}

impl FitResult {
    pub fn to_json(&self) -> Value {
        let mut v = self.params.to_json();
        v["nll"] = json!(self.report.nll);
        v["penalized_nll"] = json!(self.report.penalized_nll);
        v["converged"] = json!(self.report.converged);
        v["iterations"] = json!(self.report.iterations);
        v["quasi_separation"] = json!(self.report.separation);
        v
    }
}

struct Objective<'a> {
    cells: &'a [DesignCell],
    active: &'a [usize],
    ridge: f64,
    dim: usize,
}

impl Objective<'_> {
    fn full(&self, reduced: &[f64]) -> Vec<f64> {
        let mut theta = vec![0.0; self.dim];
        for (&i, &v) in self.active.iter().zip(reduced) {
            theta[i] = v;
        }
        theta
    }

    fn value(&self, reduced: &[f64]) -> f64 {
        let theta = self.full(reduced);
        let mut f = 0.5 * self.ridge * reduced.iter().map(|v| v * v).sum::<f64>();
        for c in self.cells {
            let z = dot(&c.x, &theta);
            f += c.yes * softplus(-z) + (c.trials - c.yes) * softplus(z);
        }
        f
    }

    fn grad_hess(&self, reduced: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let theta = self.full(reduced);
        let m = self.active.len();
        let mut g = DVector::from_iterator(m, reduced.iter().map(|v| self.ridge * v));
        let mut h = DMatrix::from_diagonal_element(m, m, self.ridge);
        for c in self.cells {
            let p = sigmoid(dot(&c.x, &theta));
            let r = c.trials * p - c.yes;
            let w = c.trials * p * (1.0 - p);
            for (a, &i) in self.active.iter().enumerate() {
                if c.x[i] == 0.0 {
                    continue;
                }
                g[a] += r * c.x[i];
                for (b, &j) in self.active.iter().enumerate() {
                    h[(a, b)] += w * c.x[i] * c.x[j];
                }
            }
        }
        (g, h)
    }
}

/// Maximum-likelihood fit of `spec` to `data`.
///
/// A severity weight with no severe rows is pinned at zero; any other
/// coefficient without support is an error.
pub fn fit(spec: &ModelSpec, data: &ExposureDataset, opts: &FitOptions) -> Result<FitResult, LogisticError> {
    if data.is_empty() {
        return Err(LogisticError::EmptyData);
    }
    let mut params = LogisticParams::zeros(spec)?;
    let names = params.coefficient_names();
    let cells = design(&params, data)?;
    let dim = params.num_coefficients();
    let sev = params.severity_index();

    let mut active = Vec::with_capacity(dim);
    let mut pinned = Vec::new();
    let mut separation = Vec::new();
    for j in 0..dim {
        let support: Vec<&DesignCell> = cells.iter().filter(|c| c.x[j] != 0.0).collect();
        if support.is_empty() {
            if j == sev {
                pinned.push(names[j].clone());
                continue;
            }
            return Err(LogisticError::UnseenFeature(names[j].clone()));
        }
        active.push(j);
        let is_indicator = cells.iter().all(|c| c.x[j] == 0.0 || c.x[j] == 1.0);
        let all_yes = support.iter().all(|c| c.yes == c.trials);
        let all_no = support.iter().all(|c| c.yes == 0.0);
        let is_intercept = cells.iter().all(|c| c.x[j] == 1.0);
        if is_indicator && !is_intercept && (all_yes || all_no) {
            separation.push(names[j].clone());
        }
    }

    let obj = Objective {
        cells: &cells,
        active: &active,
        ridge: opts.ridge,
        dim,
    };
    let mut theta = vec![0.0; active.len()];
    let mut f = obj.value(&theta);
    let mut converged = false;
    let mut iterations = 0;
    let mut gradient_steps = 0;
    let mut gnorm = f64::INFINITY;
    while iterations < opts.max_iterations {
        let (g, h) = obj.grad_hess(&theta);
        gnorm = g.amax();
        if gnorm < opts.gradient_tolerance {
            converged = true;
            break;
        }
        iterations += 1;

        let eig = SymmetricEigen::new(h.clone());
        let max_eig = eig.eigenvalues.max();
        let min_eig = eig.eigenvalues.min();
        let newton = (min_eig > 0.0 && max_eig / min_eig <= opts.max_condition)
            .then(|| h.clone().cholesky())
            .flatten()
            .map(|ch| ch.solve(&(-&g)));
        let dir = match newton {
            Some(d) => d,
            None => {
                gradient_steps += 1;
                -&g / max_eig.max(f64::MIN_POSITIVE)
            }
        };
        let slope = g.dot(&dir);
        let mut step = 1.0;
        let mut accepted = false;
        while step > 1e-12 {
            let trial: Vec<f64> = theta.iter().zip(dir.iter()).map(|(t, d)| t + step * d).collect();
            let ft = obj.value(&trial);
            if ft <= f + 1e-4 * step * slope {
                theta = trial;
                f = ft;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // no further decrease is representable
            let (g, _) = obj.grad_hess(&theta);
            gnorm = g.amax();
            converged = gnorm < opts.gradient_tolerance;
            break;
        }
    }

    params.set_coefficients(&obj.full(&theta));
    let report = FitReport {
        converged,
        iterations,
        nll: nll(&params, data)?,
        penalized_nll: f,
        gradient_max_norm: gnorm,
        gradient_steps,
        pinned,
        separation,
    };
    if !report.converged {
        log::warn!(
            "{} fit stopped after {} iterations with gradient {:.3e}",
            params.variant_name(),
            report.iterations,
            report.gradient_max_norm
        );
    }
    Ok(FitResult { params, report })
}

/// Complementary error function, fractional error below 1.2e-7 everywhere.
pub fn erfc(x: f64) -> f64 {
    let z = x.abs();
    let t = 1.0 / (1.0 + 0.5 * z);
    let poly = -z * z - 1.265_512_23
        + t * (1.000_023_68
            + t * (0.374_091_96
                + t * (0.096_784_18
                    + t * (-0.186_288_06
                        + t * (0.278_868_07
                            + t * (-1.135_203_98
                                + t * (1.488_515_87 + t * (-0.822_152_23 + t * 0.170_872_77))))))));
    let r = t * poly.exp();
    if x >= 0.0 {
        r
    } else {
        2.0 - r
    }
}

/// Two-sided normal tail probability `P(|Z| > |z|)`.
pub fn two_sided_p(z: f64) -> f64 {
    erfc(z.abs() / std::f64::consts::SQRT_2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaldRow {
    pub parameter: String,
    pub estimate: f64,
    pub std_error: f64,
    pub z_stat: f64,
    pub p_value: f64,
}

fn display_name(params: &LogisticParams, raw: &str) -> String {
    match (params, raw) {
        (_, "severity") => "Event Severity".into(),
        (LogisticParams::Full32(_), p) => format!("Profile {p}"),
        (_, other) => {
            let mut c = other.chars();
            c.next()
                .map(|f| f.to_uppercase().chain(c).collect())
                .unwrap_or_default()
        }
    }
}

/// Standard errors from the inverse observed information `X'WX`, Wald z
/// statistics and two-sided normal p-values.
pub fn wald_stats(params: &LogisticParams, data: &ExposureDataset) -> Result<Vec<WaldRow>, LogisticError> {
    if data.is_empty() {
        return Err(LogisticError::EmptyData);
    }
    let theta = params.coefficients();
    let dim = theta.len();
    let mut info = DMatrix::<f64>::zeros(dim, dim);
    for c in design(params, data)? {
        let p = sigmoid(dot(&c.x, &theta));
        let w = c.trials * p * (1.0 - p);
        for i in 0..dim {
            for j in 0..dim {
                info[(i, j)] += w * c.x[i] * c.x[j];
            }
        }
    }
    let eig = SymmetricEigen::new(info.clone());
    let max_eig = eig.eigenvalues.max();
    let min_eig = eig.eigenvalues.min();
    if !(max_eig > 0.0) || min_eig <= max_eig * 1e-12 {
        return Err(LogisticError::SingularInformation);
    }
    let cov = info.try_inverse().ok_or(LogisticError::SingularInformation)?;
    Ok(params
        .coefficient_names()
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let se = cov[(i, i)].sqrt();
            let z = theta[i] / se;
            WaldRow {
                parameter: display_name(params, name),
                estimate: theta[i],
                std_error: se,
                z_stat: z,
                p_value: two_sided_p(z),
            }
        })
        .collect())
}

/// Wald table as CSV, rows in coefficient order.
pub fn write_wald_csv<W: Write>(rows: &[WaldRow], w: W) -> Result<(), LogisticError> {
    let mut wtr = csv::Writer::from_writer(w);
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}
