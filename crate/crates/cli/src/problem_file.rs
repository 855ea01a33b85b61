use anyhow::{bail, Context, Result};
use persuasion_core::dist::StateDistribution;
use persuasion_core::model::{Payoffs, Problem, ReceiverType};
use persuasion_core::reduced_form::SolverConfig;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub version: u32,
    pub distribution: StateDistribution,
    pub types: Vec<TypeEntry>,
    pub actions: Vec<String>,
    pub u1: Vec<Vec<f64>>,
    pub u2: Vec<Vec<f64>>,
    /// Defaults to all zeros.
    #[serde(default)]
    pub v1: Option<Vec<Vec<f64>>>,
    pub v2: Vec<Vec<f64>>,
    #[serde(default)]
    pub participation: Option<Vec<f64>>,
    #[serde(default)]
    pub solver: Option<SolverConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TypeEntry {
    pub label: String,
    pub weight: f64,
}

/// Parses JSON, reporting the offending field path and position on failure.
pub fn parse_json<T: serde::de::DeserializeOwned>(text: &str, what: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        anyhow::anyhow!(
            "{what}: {inner} (field `{path}`, line {}, column {})",
            inner.line(),
            inner.column()
        )
    })
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    parse_json(&text, &path.display().to_string())
}

impl ProblemFile {
    pub fn load(path: &Path) -> Result<Self> {
        let f: Self = read_json(path)?;
        if f.version != VERSION {
            bail!("{}: unsupported version {} (expected {VERSION})", path.display(), f.version);
        }
        Ok(f)
    }

    /// Builds the problem, renormalizing weights that do not sum to one.
    pub fn to_problem(&self) -> Result<Problem> {
        let total: f64 = self.types.iter().map(|t| t.weight).sum();
        let mut types: Vec<ReceiverType> = self
            .types
            .iter()
            .map(|t| ReceiverType {
                label: t.label.clone(),
                weight: t.weight,
            })
            .collect();
        if total > 0.0 && (total - 1.0).abs() > 1e-9 {
            eprintln!("warning: type weights sum to {total}; renormalizing");
            for t in &mut types {
                t.weight /= total;
            }
        }
        let v1 = self
            .v1
            .clone()
            .unwrap_or_else(|| vec![vec![0.0; self.actions.len()]; self.types.len()]);
        let payoffs = Payoffs {
            u1: self.u1.clone(),
            u2: self.u2.clone(),
            v1,
            v2: self.v2.clone(),
        };
        let mut p = Problem::new(self.distribution.clone(), types, self.actions.clone(), payoffs)?;
        if let Some(b) = &self.participation {
            p = p.with_participation(b.clone())?;
        }
        Ok(p)
    }

    pub fn solver_config(&self) -> SolverConfig {
        self.solver.clone().unwrap_or_default()
    }
}
