//! Degradation-trajectory regressions with one intercept per transducer,
//! cycle prediction and a normalized health index.
//!
//! Models are ordinary least squares on the design
//! `[transducer indicators | fixed terms | interaction products]`. The
//! per-transducer intercepts are fixed effects rather than shrunken random
//! effects, and inference is reported as plain t-statistics, which are
//! anti-conservative compared with Kenward-Roger adjusted tests.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::session::{ResultRow, Side, Source, TransducerKey};

#[derive(Debug, Error, PartialEq)]
pub enum HealthError {
    #[error("cannot parse model '{0}': {1}")]
    BadFormula(String, String),
    #[error("design matrix is rank deficient (condition {0:.3e}); a term is constant or collinear with the transducer intercepts")]
    RankDeficient(f64),
    #[error("insufficient observations: {0}")]
    Insufficient(String),
    #[error("transducer {0} is not part of the fit")]
    UnknownTransducer(String),
    #[error("missing value for term '{0}'")]
    MissingValue(String),
    #[error("term '{0}' is not in the fit")]
    UnknownTerm(String),
    #[error("failure_cycle must be positive, got {0}")]
    BadFailureCycle(f64),
}

/// One measured data point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub pair: String,
    pub side: Side,
    pub source: Source,
    pub run: u32,
    pub cycle: u32,
    pub metrics: BTreeMap<String, f64>,
}

impl Observation {
    pub fn transducer(&self) -> TransducerKey {
        TransducerKey::new(self.pair.clone(), self.side)
    }

    /// Value of a model variable: `cycle`, `source` (mic 0, phone 1), `run`
    /// or any metric name.
    pub fn value(&self, name: &str) -> Option<f64> {
        match name {
            "cycle" => Some(self.cycle as f64),
            "source" => Some(self.source.indicator()),
            "run" => Some(self.run as f64),
            metric => self.metrics.get(metric).copied(),
        }
    }

    /// Observation for a measurable results row; unmeasurable rows carry no
    /// data and yield `None`.
    pub fn from_row(row: &ResultRow) -> Option<Self> {
        row.measurable.then(|| Observation {
            pair: row.pair.clone(),
            side: row.side,
            source: row.source,
            run: row.run,
            cycle: row.cycle,
            metrics: row.metrics(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Term {
    Variable(String),
    Interaction(String, String),
}

impl Term {
    pub fn name(&self) -> String {
        match self {
            Term::Variable(v) => v.clone(),
            Term::Interaction(a, b) => format!("{a}:{b}"),
        }
    }

    fn variables(&self) -> Vec<&str> {
        match self {
            Term::Variable(v) => vec![v],
            Term::Interaction(a, b) => vec![a, b],
        }
    }

    fn evaluate(&self, lookup: impl Fn(&str) -> Option<f64>) -> Option<f64> {
        match self {
            Term::Variable(v) => lookup(v),
            Term::Interaction(a, b) => Some(lookup(a)? * lookup(b)?),
        }
    }
}

/// `response ~ a + b`, `response ~ a * b` (= `a + b + a:b`) or `a:b`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub response: String,
    pub terms: Vec<Term>,
}

impl ModelSpec {
    pub fn new(response: impl Into<String>, terms: Vec<Term>) -> Self {
        Self {
            response: response.into(),
            terms,
        }
    }

    pub fn parse(formula: &str) -> Result<Self, HealthError> {
        let bad = |msg: &str| HealthError::BadFormula(formula.to_string(), msg.to_string());
        let (lhs, rhs) = formula.split_once('~').ok_or_else(|| bad("expected 'response ~ terms'"))?;
        let response = lhs.trim();
        if response.is_empty() || !is_identifier(response) {
            return Err(bad("response must be a single variable name"));
        }
        let mut terms: Vec<Term> = Vec::new();
        let mut push = |t: Term| {
            if !terms.contains(&t) {
                terms.push(t);
            }
        };
        for part in rhs.split('+').map(str::trim) {
            if part.is_empty() {
                return Err(bad("empty term"));
            }
            let (op, split) = if let Some(s) = part.split_once('*') {
                ('*', s)
            } else if let Some(s) = part.split_once(':') {
                (':', s)
            } else {
                if !is_identifier(part) {
                    return Err(bad(&format!("invalid variable '{part}'")));
                }
                push(Term::Variable(part.to_string()));
                continue;
            };
            let (a, b) = (split.0.trim(), split.1.trim());
            if !is_identifier(a) || !is_identifier(b) {
                return Err(bad(&format!("invalid interaction '{part}'")));
            }
            if op == '*' {
                push(Term::Variable(a.to_string()));
                push(Term::Variable(b.to_string()));
            }
            push(Term::Interaction(a.to_string(), b.to_string()));
        }
        if terms.iter().any(|t| t.variables().contains(&response)) {
            return Err(bad("response appears among the terms"));
        }
        Ok(Self {
            response: response.to_string(),
            terms,
        })
    }

    fn variables(&self) -> BTreeSet<&str> {
        std::iter::once(self.response.as_str())
            .chain(self.terms.iter().flat_map(Term::variables))
            .collect()
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let terms: Vec<String> = self.terms.iter().map(Term::name).collect();
        write!(f, "{} ~ {}", self.response, terms.join(" + "))
    }
}

fn is_identifier(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub name: String,
    pub estimate: f64,
    pub std_error: f64,
    pub t_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransducerIntercept {
    pub transducer: TransducerKey,
    pub estimate: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFit {
    pub response: String,
    pub spec: ModelSpec,
    pub terms: Vec<Coefficient>,
    pub intercepts: Vec<TransducerIntercept>,
    pub residual_sd: f64,
    pub n_obs: usize,
    /// Coefficient covariance, ordered intercepts first, then terms.
    pub covariance: Vec<Vec<f64>>,
}

/// Singular values below this fraction of the largest count as zero.
const RANK_TOLERANCE: f64 = 1e-10;

/// Least-squares fit of `spec` with one intercept per transducer.
/// Observations missing any variable the model uses are left out.
pub fn fit(observations: &[Observation], spec: &ModelSpec) -> Result<ModelFit, HealthError> {
    let vars = spec.variables();
    let rows: Vec<&Observation> = observations
        .iter()
        .filter(|o| vars.iter().all(|v| o.value(v).is_some_and(f64::is_finite)))
        .collect();

    let mut per_transducer: BTreeMap<TransducerKey, usize> = BTreeMap::new();
    for o in &rows {
        *per_transducer.entry(o.transducer()).or_default() += 1;
    }
    if per_transducer.is_empty() {
        return Err(HealthError::Insufficient(format!(
            "no observations carry all of {:?}",
            vars
        )));
    }
    if let Some((t, n)) = per_transducer.iter().find(|(_, &n)| n < 2) {
        return Err(HealthError::Insufficient(format!(
            "transducer {t} has {n} observation(s); need at least 2"
        )));
    }
    let distinct: BTreeSet<u64> = rows
        .iter()
        .map(|o| o.value(&spec.response).unwrap().to_bits())
        .collect();
    if distinct.len() < 2 {
        return Err(HealthError::Insufficient(format!(
            "response '{}' takes fewer than 2 distinct values",
            spec.response
        )));
    }

    let transducers: Vec<TransducerKey> = per_transducer.keys().cloned().collect();
    let n_int = transducers.len();
    let p = n_int + spec.terms.len();
    let n = rows.len();
    if n < p + 1 {
        return Err(HealthError::Insufficient(format!(
            "{n} observations for {p} parameters"
        )));
    }
    let index: BTreeMap<&TransducerKey, usize> = transducers.iter().enumerate().map(|(i, t)| (t, i)).collect();
    let mut x = DMatrix::<f64>::zeros(n, p);
    let mut y = DVector::<f64>::zeros(n);
    for (i, o) in rows.iter().enumerate() {
        x[(i, index[&o.transducer()])] = 1.0;
        for (j, term) in spec.terms.iter().enumerate() {
            x[(i, n_int + j)] = term.evaluate(|v| o.value(v)).unwrap();
        }
        y[i] = o.value(&spec.response).unwrap();
    }

    let svd = x.clone().svd(true, true);
    let s = &svd.singular_values;
    let s_max = s.max();
    let s_min = s.min();
    if s_min <= RANK_TOLERANCE * s_max {
        return Err(HealthError::RankDeficient(s_max / s_min));
    }
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let s_inv = DVector::from_iterator(p, s.iter().map(|v| 1.0 / v));
    let beta = v_t.transpose() * (s_inv.component_mul(&(u.transpose() * &y)));
    let residuals = &y - &x * &beta;
    let rss = residuals.norm_squared();
    let dof = (n - p) as f64;
    let sigma2 = rss / dof;
    let s_inv2 = DMatrix::from_diagonal(&s_inv.map(|v| v * v));
    let xtx_inv = v_t.transpose() * s_inv2 * v_t;
    let cov = xtx_inv * sigma2;

    let se = |j: usize| cov[(j, j)].max(0.0).sqrt();
    let intercepts = transducers
        .into_iter()
        .enumerate()
        .map(|(j, transducer)| TransducerIntercept {
            transducer,
            estimate: beta[j],
            std_error: se(j),
        })
        .collect();
    let terms = spec
        .terms
        .iter()
        .enumerate()
        .map(|(k, term)| {
            let j = n_int + k;
            Coefficient {
                name: term.name(),
                estimate: beta[j],
                std_error: se(j),
                t_value: beta[j] / se(j),
            }
        })
        .collect();
    Ok(ModelFit {
        response: spec.response.clone(),
        spec: spec.clone(),
        terms,
        intercepts,
        residual_sd: sigma2.sqrt(),
        n_obs: n,
        covariance: (0..p).map(|r| (0..p).map(|c| cov[(r, c)]).collect()).collect(),
    })
}

impl ModelFit {
    pub fn term(&self, name: &str) -> Option<&Coefficient> {
        self.terms.iter().find(|c| c.name == name)
    }

    pub fn intercept(&self, transducer: &TransducerKey) -> Option<f64> {
        self.intercepts
            .iter()
            .find(|i| &i.transducer == transducer)
            .map(|i| i.estimate)
    }

    fn term_values(&self, values: &BTreeMap<String, f64>) -> Result<Vec<f64>, HealthError> {
        self.spec
            .terms
            .iter()
            .map(|t| {
                t.evaluate(|v| values.get(v).copied()).ok_or_else(|| {
                    let missing = t
                        .variables()
                        .into_iter()
                        .find(|v| !values.contains_key(*v))
                        .unwrap_or_default();
                    HealthError::MissingValue(missing.to_string())
                })
            })
            .collect()
    }

    /// Linear predictor for one transducer; unclamped.
    pub fn predict(&self, values: &BTreeMap<String, f64>, transducer: &TransducerKey) -> Result<f64, HealthError> {
        let base = self
            .intercept(transducer)
            .ok_or_else(|| HealthError::UnknownTransducer(transducer.to_string()))?;
        let xs = self.term_values(values)?;
        Ok(base + self.terms.iter().zip(xs).map(|(c, x)| c.estimate * x).sum::<f64>())
    }

    /// Prediction averaged over transducer intercepts, with its standard
    /// error from the coefficient covariance.
    pub fn mean_prediction(&self, values: &BTreeMap<String, f64>) -> Result<(f64, f64), HealthError> {
        let xs = self.term_values(values)?;
        let n_int = self.intercepts.len();
        let mut c = vec![1.0 / n_int as f64; n_int];
        c.extend(xs);
        let estimates: Vec<f64> = self
            .intercepts
            .iter()
            .map(|i| i.estimate)
            .chain(self.terms.iter().map(|t| t.estimate))
            .collect();
        let mean = c.iter().zip(&estimates).map(|(a, b)| a * b).sum();
        let var: f64 = (0..c.len())
            .flat_map(|r| (0..c.len()).map(move |k| (r, k)))
            .map(|(r, k)| c[r] * self.covariance[r][k] * c[k])
            .sum();
        Ok((mean, var.max(0.0).sqrt()))
    }
}

/// Estimated laundry cycle for a transducer given its metric values.
pub fn predict_cycle(
    fit: &ModelFit,
    values: &BTreeMap<String, f64>,
    transducer: &TransducerKey,
) -> Result<f64, HealthError> {
    fit.predict(values, transducer)
}

/// `1 − clamp(predicted_cycle / failure_cycle, 0, 1)`: 1 is pristine, 0 is
/// at or beyond failure.
pub fn health_index(
    fit: &ModelFit,
    values: &BTreeMap<String, f64>,
    transducer: &TransducerKey,
    failure_cycle: f64,
) -> Result<f64, HealthError> {
    if !(failure_cycle > 0.0) {
        return Err(HealthError::BadFailureCycle(failure_cycle));
    }
    let cycle = predict_cycle(fit, values, transducer)?;
    Ok(health_from_cycle(cycle, failure_cycle))
}

pub fn health_from_cycle(predicted_cycle: f64, failure_cycle: f64) -> f64 {
    1.0 - (predicted_cycle / failure_cycle).clamp(0.0, 1.0)
}

/// `∂response/∂term` at the conditioning values: the term's own slope plus,
/// for each interaction containing it, the interaction slope times the
/// partner's value.
pub fn marginal_effect(fit: &ModelFit, term: &str, at: &BTreeMap<String, f64>) -> Result<f64, HealthError> {
    let own = fit
        .term(term)
        .ok_or_else(|| HealthError::UnknownTerm(term.to_string()))?
        .estimate;
    let mut effect = own;
    for (spec_term, coef) in fit.spec.terms.iter().zip(&fit.terms) {
        if let Term::Interaction(a, b) = spec_term {
            let partner = if a == term {
                b
            } else if b == term {
                a
            } else {
                continue;
            };
            let value = at
                .get(partner)
                .ok_or_else(|| HealthError::MissingValue(partner.clone()))?;
            effect += coef.estimate * value;
        }
    }
    Ok(effect)
}
