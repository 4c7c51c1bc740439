//! JSON run configuration, resolved into a [`Scenario`].
//!
//! A config either starts from a built-in scenario (`"scenario"`) and
//! overrides parts of it, or declares its own chart and Lagrangian.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::catalog::{load_scenario, Scenario, SimulationSpec};
use crate::chart::ChartSpec;
use crate::constraints::MetricData;
use crate::dynamics::{IntegratorOptions, Method};
use crate::error::{Error, Result};
use crate::expr::Expression;
use crate::forms::LagrangianSystem;
use crate::regularizer::{AlmostProductSpec, ConnectionSpec};
use crate::sampling::SamplingSpec;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Name of a built-in scenario to start from.
    pub scenario: Option<String>,
    /// Report name for custom systems.
    pub name: Option<String>,
    pub chart: Option<ChartConfig>,
    pub lagrangian: Option<String>,
    pub metric: Option<MetricConfig>,
    pub kernel_field: Option<Vec<String>>,
    pub constraints: Option<Vec<String>>,
    pub regularization: Option<RegularizationConfig>,
    pub sampling: Option<SamplingSpec>,
    pub simulation: Option<SimulationConfig>,
    pub output: Option<OutputConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChartConfig {
    pub leaf: Vec<String>,
    #[serde(default)]
    pub fiber: Vec<String>,
    #[serde(default)]
    pub time: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricConfig {
    pub g: Vec<Vec<String>>,
    pub a: Vec<String>,
    pub v: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegularizationConfig {
    pub p: Option<Vec<Vec<String>>>,
    pub q: Option<Vec<String>>,
    pub connection: Option<ConnectionConfig>,
    pub declared_split: Option<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConnectionMode {
    #[default]
    Zero,
    Linear,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConnectionConfig {
    #[serde(default)]
    pub mode: ConnectionMode,
    #[serde(default)]
    pub leaf: Vec<Vec<Vec<String>>>,
    #[serde(default)]
    pub fiber: Vec<Vec<Vec<String>>>,
    pub time: Option<Vec<Vec<String>>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub initial: Option<Vec<f64>>,
    pub t0: Option<f64>,
    pub t1: Option<f64>,
    pub method: Option<Method>,
    pub step: Option<f64>,
    pub rtol: Option<f64>,
    pub atol: Option<f64>,
    pub max_condition: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<String>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::config("config", e.to_string()))
    }

    pub fn for_scenario(name: &str) -> Self {
        RunConfig { scenario: Some(name.to_string()), ..Default::default() }
    }

    pub fn resolve(&self) -> Result<Scenario> {
        let mut s = self.base()?;
        let chart = s.chart().clone();
        if let Some(k) = &self.kernel_field {
            s.kernel_field = Some(parse_list(k, &chart, "kernel_field")?);
        }
        if let Some(c) = &self.constraints {
            s.declared_constraints = parse_list(c, &chart, "constraints")?;
        }
        if let Some(r) = &self.regularization {
            apply_regularization(&mut s, r, &chart)?;
        }
        if let Some(sp) = &self.sampling {
            s.sampling = sp.clone();
        }
        if let Some(sim) = &self.simulation {
            apply_simulation(&mut s, sim)?;
        }
        Ok(s)
    }

    fn base(&self) -> Result<Scenario> {
        let system_override = self.lagrangian.is_some() || self.metric.is_some();
        if self.lagrangian.is_some() && self.metric.is_some() {
            return Err(Error::config("lagrangian", "give either `lagrangian` or `metric`, not both"));
        }
        let (mut s, chart) = match (&self.scenario, &self.chart) {
            (Some(_), Some(_)) => return Err(Error::config("chart", "a built-in scenario fixes its own chart")),
            (None, None) => return Err(Error::config("chart", "required unless `scenario` is given")),
            (Some(name), None) => {
                let s = load_scenario(name)?;
                let c = s.chart().clone();
                (s, c)
            }
            (None, Some(c)) => {
                if !system_override {
                    return Err(Error::config("lagrangian", "a custom chart needs `lagrangian` or `metric`"));
                }
                let chart = Arc::new(ChartSpec::new(&c.leaf, &c.fiber, c.time).map_err(|e| Error::config("chart", e.to_string()))?);
                let placeholder = LagrangianSystem::new(Expression::constant(0.0, &chart));
                (custom(self.name.as_deref().unwrap_or("custom"), placeholder), chart)
            }
        };
        if let Some(src) = &self.lagrangian {
            let l = Expression::parse(src, &chart).map_err(|e| Error::config("lagrangian", e.to_string()))?;
            replace_system(&mut s, LagrangianSystem::new(l));
            s.metric = None;
        }
        if let Some(m) = &self.metric {
            let metric = MetricData::parse(&chart, &m.g, &m.a, &m.v).map_err(|e| as_config("metric", e))?;
            replace_system(&mut s, LagrangianSystem::new(metric.lagrangian()));
            s.metric = Some(metric);
        }
        if let Some(n) = &self.name {
            s.name = n.clone();
        }
        Ok(s)
    }
}

fn custom(name: &str, system: LagrangianSystem) -> Scenario {
    let c = system.chart.clone();
    Scenario {
        name: name.to_string(),
        almost_product: AlmostProductSpec::zero(&c),
        connection: ConnectionSpec::Zero,
        system,
        metric: None,
        kernel_field: None,
        declared_constraints: Vec::new(),
        declared_split: false,
        sampling: SamplingSpec::default(),
        simulation: None,
        expected: None,
    }
}

/// A new Lagrangian invalidates promised properties and closed-form references.
fn replace_system(s: &mut Scenario, sys: LagrangianSystem) {
    s.system = sys;
    s.expected = None;
    if let Some(sim) = &mut s.simulation {
        sim.reference = None;
    }
}

fn as_config(field: &str, e: Error) -> Error {
    match e {
        Error::Config { .. } => e,
        other => Error::config(field, other.to_string()),
    }
}

fn parse_list(srcs: &[String], chart: &Arc<ChartSpec>, field: &str) -> Result<Vec<Expression>> {
    srcs.iter()
        .enumerate()
        .map(|(i, src)| Expression::parse(src, chart).map_err(|e| Error::config(format!("{field}[{i}]"), e.to_string())))
        .collect()
}

fn parse_table(rows: &[Vec<String>], chart: &Arc<ChartSpec>, field: &str) -> Result<Vec<Vec<Expression>>> {
    rows.iter().enumerate().map(|(i, r)| parse_list(r, chart, &format!("{field}[{i}]"))).collect()
}

fn apply_regularization(s: &mut Scenario, r: &RegularizationConfig, chart: &Arc<ChartSpec>) -> Result<()> {
    if r.p.is_some() || r.q.is_some() {
        let zero = AlmostProductSpec::zero(chart);
        let p: Vec<Vec<String>> = match &r.p {
            Some(p) => p.clone(),
            None => zero.p.iter().map(|row| row.iter().map(|e| e.to_string()).collect()).collect(),
        };
        let q: Option<Vec<String>> = match &r.q {
            Some(q) => Some(q.clone()),
            None => zero.q.as_ref().map(|q| q.iter().map(|e| e.to_string()).collect()),
        };
        s.almost_product = AlmostProductSpec::parse(chart, &p, q.as_deref()).map_err(|e| as_config("regularization.p", e))?;
    }
    if let Some(c) = &r.connection {
        s.connection = match c.mode {
            ConnectionMode::Zero => ConnectionSpec::Zero,
            ConnectionMode::Linear => ConnectionSpec::Linear {
                leaf: c.leaf.iter().enumerate().map(|(a, m)| parse_table(m, chart, &format!("regularization.connection.leaf[{a}]"))).collect::<Result<_>>()?,
                fiber: c.fiber.iter().enumerate().map(|(a, m)| parse_table(m, chart, &format!("regularization.connection.fiber[{a}]"))).collect::<Result<_>>()?,
                time: c.time.as_ref().map(|t| parse_table(t, chart, "regularization.connection.time")).transpose()?,
            },
        };
    }
    if let Some(d) = r.declared_split {
        s.declared_split = d;
    }
    Ok(())
}

fn apply_simulation(s: &mut Scenario, c: &SimulationConfig) -> Result<()> {
    let dim = s.chart().dim();
    let mut sim = match s.simulation.take() {
        Some(sim) => sim,
        None => SimulationSpec {
            initial: c.initial.clone().ok_or_else(|| Error::config("simulation.initial", "required: the scenario declares no initial state"))?,
            t_span: (0.0, 0.0),
            options: IntegratorOptions::default(),
            reference: None,
        },
    };
    if let Some(init) = &c.initial {
        if *init != sim.initial {
            sim.reference = None;
        }
        sim.initial = init.clone();
    }
    if sim.initial.len() != dim {
        return Err(Error::config("simulation.initial", format!("expected {dim} values, got {}", sim.initial.len())));
    }
    if let Some(t0) = c.t0 {
        if t0 != sim.t_span.0 {
            sim.reference = None;
        }
        sim.t_span.0 = t0;
    }
    if let Some(t1) = c.t1 {
        sim.t_span.1 = t1;
    }
    let o = &mut sim.options;
    o.method = c.method.unwrap_or(o.method);
    o.step = c.step.unwrap_or(o.step);
    o.rtol = c.rtol.unwrap_or(o.rtol);
    o.atol = c.atol.unwrap_or(o.atol);
    o.max_condition = c.max_condition.unwrap_or(o.max_condition);
    s.simulation = Some(sim);
    Ok(())
}
