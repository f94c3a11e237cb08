//! Run configuration as a sectioned TOML file.
//!
//! ```toml
//! [model]
//! id = "nlar1"
//! n = 200
//!
//! [abc]
//! budget = 20000
//! ```
//!
//! Every section is optional; missing keys take the model's defaults and
//! unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::abc::AbcConfig;
use crate::enca::EncaConfig;
use crate::error::{Error, Result};
use crate::inca::IncaConfig;
use crate::mcmc::McmcConfig;
use crate::models::{Model, ModelId, PriorSpec, ThresholdMap};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSection {
    pub id: ModelId,
    /// Length of observed and simulated series.
    pub n: usize,
    pub x0: f64,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Parameters of the synthetic observation.
    pub theta: Vec<f64>,
    pub observation_seed: u64,
    /// Calibrated DYNAMO threshold constants.
    pub f2: ThresholdMap,
}

impl ModelSection {
    pub fn default_for(id: ModelId) -> Self {
        let prior = PriorSpec::default_for(id);
        Self {
            id,
            n: 200,
            x0: prior.x0,
            lower: prior.lower,
            upper: prior.upper,
            theta: id.true_theta(),
            observation_seed: 1,
            f2: ThresholdMap::default(),
        }
    }

    pub fn model(&self) -> Model {
        match self.id {
            ModelId::Nlar1 => Model::nlar1(),
            ModelId::Dynamo => Model::dynamo_with(self.f2),
        }
    }

    pub fn prior(&self) -> Result<PriorSpec> {
        PriorSpec::for_model(self.id, self.lower.clone(), self.upper.clone(), self.x0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelSection,
    pub enca: EncaConfig,
    pub inca: IncaConfig,
    pub abc: AbcConfig,
    pub mcmc: McmcConfig,
}

fn merge(base: &mut toml::Table, over: &toml::Table, path: &str) -> Result<()> {
    for (k, v) in over {
        let here = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
        match (base.get_mut(k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o, &here)?,
            (Some(toml::Value::Table(_)), _) => return Err(Error::Config(format!("`{here}` must be a section"))),
            (_, v) => {
                base.insert(k.clone(), v.clone());
            }
        }
    }
    Ok(())
}

fn unknown_keys(merged: &toml::Table, known: &toml::Table, path: &str, out: &mut Vec<String>) {
    for (k, v) in merged {
        let here = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
        match (known.get(k), v) {
            (None, _) => out.push(here),
            (Some(toml::Value::Table(kt)), toml::Value::Table(mt)) => unknown_keys(mt, kt, &here, out),
            _ => {}
        }
    }
}

/// Merge `key = value` strings (dotted keys allowed) into `t`.
pub fn apply_overrides(t: &mut toml::Table, overrides: &[String]) -> Result<()> {
    for o in overrides {
        let piece: toml::Table = o
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(format!("override `{o}`: {e}")))?;
        merge(t, &piece, "")?;
    }
    Ok(())
}

impl RunConfig {
    pub fn default_for(id: ModelId) -> Self {
        Self {
            model: ModelSection::default_for(id),
            enca: EncaConfig::default_for(id),
            inca: IncaConfig::default_for(id),
            abc: AbcConfig::default(),
            mcmc: McmcConfig::default(),
        }
    }

    /// Defaults for the model named in `[model] id` (NLAR1 if absent),
    /// overridden by the given table.
    pub fn from_table(over: &toml::Table) -> Result<Self> {
        let id = match over.get("model").and_then(|m| m.get("id")) {
            Some(toml::Value::String(s)) => s.parse()?,
            Some(_) => return Err(Error::Config("`model.id` must be a string".into())),
            None => ModelId::Nlar1,
        };
        let mut base = toml::Table::try_from(Self::default_for(id)).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut base, over, "")?;
        let cfg: Self = base.clone().try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let known = toml::Table::try_from(&cfg).map_err(|e| Error::Config(e.to_string()))?;
        let mut unknown = Vec::new();
        unknown_keys(&base, &known, "", &mut unknown);
        unknown.retain(|k| !OPTIONAL_KEYS.contains(&k.as_str()));
        if !unknown.is_empty() {
            return Err(Error::Config(format!("unknown keys: {}", unknown.join(", "))));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let t: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        Self::from_table(&t)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Apply `key = value` overrides, e.g. `abc.budget=5000`.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        let mut t = toml::Table::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        apply_overrides(&mut t, overrides)?;
        Self::from_table(&t)
    }

    /// Optional file, then a model choice, then `key = value` overrides.
    /// Choosing a model selects that model's defaults for keys the file
    /// leaves unset.
    pub fn resolve(file: Option<&Path>, model: Option<ModelId>, overrides: &[String]) -> Result<Self> {
        let mut t = match file {
            Some(p) => std::fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
                .parse::<toml::Table>()
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
            None => toml::Table::new(),
        };
        if let Some(m) = model {
            let mut id = toml::Table::new();
            id.insert("id".into(), toml::Value::String(m.as_str().into()));
            let mut over = toml::Table::new();
            over.insert("model".into(), toml::Value::Table(id));
            merge(&mut t, &over, "")?;
        }
        apply_overrides(&mut t, overrides)?;
        Self::from_table(&t)
    }

    /// Use one seed for every stochastic stage.
    pub fn set_seed(&mut self, seed: u64) {
        self.enca.seed = seed;
        self.inca.seed = seed;
        self.abc.seed = seed;
        self.mcmc.seed = seed;
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let prior = self.model.prior()?;
        if self.model.n == 0 {
            return Err(Error::Config("model.n must be ≥ 1".into()));
        }
        if self.model.theta.len() != prior.dim() {
            return Err(Error::Config(format!(
                "model.theta needs {} components for {}",
                prior.dim(),
                self.model.id
            )));
        }
        self.enca.validate()?;
        self.inca.validate()?;
        self.abc.validate()?;
        Ok(())
    }
}

const OPTIONAL_KEYS: [&str; 3] = ["enca.c_x", "mcmc.proposal_scales", "mcmc.init"];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default_for(ModelId::Nlar1));
    }

    #[test]
    fn sections_override() {
        let c = RunConfig::parse("[model]\nid = \"dynamo\"\n[abc]\nbudget = 5000\n").unwrap();
        assert_eq!(c.model.id, ModelId::Dynamo);
        assert_eq!(c.model.theta, vec![1.11, 0.15, 0.08]);
        assert_eq!(c.abc.budget, 5000);
        let again = RunConfig::parse(&c.to_toml().unwrap()).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        assert!(RunConfig::parse("[abc]\nbudgett = 5\n").is_err());
        assert!(RunConfig::parse("[abc\n").is_err());
        assert!(RunConfig::parse("[mcmc]\ninit = [5.3, 0.015]\n").is_ok());
    }

    #[test]
    fn dotted_overrides() {
        let c = RunConfig::default_for(ModelId::Nlar1)
            .with_overrides(&["abc.budget = 7000".into(), "model.n = 50".into()])
            .unwrap();
        assert_eq!((c.abc.budget, c.model.n), (7000, 50));
    }

    #[test]
    fn model_choice_selects_its_defaults() {
        let c = RunConfig::resolve(None, Some(ModelId::Dynamo), &["enca.q = 5".into()]).unwrap();
        assert_eq!(c.model.lower, vec![0.9, 0.05, 0.02]);
        assert_eq!(c.enca.q, 5);
    }
}
