use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::TuningError;
use crate::learner::{Family, ParamSet};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Distribution {
    Fixed { value: f64 },
    /// Uniform over the integers lo..=hi.
    Int { lo: i64, hi: i64 },
    Uniform { lo: f64, hi: f64 },
    LogUniform { lo: f64, hi: f64 },
}

impl Distribution {
    fn validate(&self) -> Result<(), String> {
        match *self {
            Distribution::Fixed { value } if value.is_finite() => Ok(()),
            Distribution::Int { lo, hi } if lo <= hi => Ok(()),
            Distribution::Uniform { lo, hi } if lo.is_finite() && hi.is_finite() && lo <= hi => Ok(()),
            Distribution::LogUniform { lo, hi } if lo > 0.0 && hi.is_finite() && lo <= hi => Ok(()),
            d => Err(format!("invalid bounds in {d}")),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Distribution::Fixed { value } => value,
            Distribution::Int { lo, hi } => rng.random_range(lo..=hi) as f64,
            Distribution::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
            Distribution::LogUniform { lo, hi } => (lo.ln() + (hi.ln() - lo.ln()) * rng.random::<f64>()).exp(),
        }
    }
}

impl fmt::Display for Distribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Distribution::Fixed { value } => write!(f, "{value}"),
            Distribution::Int { lo, hi } => write!(f, "int {lo} {hi}"),
            Distribution::Uniform { lo, hi } => write!(f, "uniform {lo} {hi}"),
            Distribution::LogUniform { lo, hi } => write!(f, "loguniform {lo} {hi}"),
        }
    }
}

/// Per-parameter sampling distributions. Parameters are drawn in name order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub params: BTreeMap<String, Distribution>,
}

impl SearchSpace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, name: &str, dist: Distribution) -> Self {
        self.params.insert(name.to_string(), dist);
        self
    }

    /// A space containing exactly one configuration.
    pub fn point(params: &ParamSet) -> Self {
        SearchSpace {
            params: params
                .iter()
                .map(|(k, &v)| (k.clone(), Distribution::Fixed { value: v }))
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<(), TuningError> {
        for (name, d) in &self.params {
            d.validate().map_err(|e| TuningError::InvalidSpace(format!("{name}: {e}")))?;
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamSet {
        self.params.iter().map(|(k, d)| (k.clone(), d.sample(rng))).collect()
    }

    /// Parses lines of `name = int LO HI | uniform LO HI | loguniform LO HI | VALUE`.
    /// Blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self, TuningError> {
        let mut space = SearchSpace::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: &str| TuningError::InvalidSpace(format!("line {}: {msg}: `{raw}`", lineno + 1));
            let (name, spec) = line.split_once('=').ok_or_else(|| err("expected `name = distribution`"))?;
            let words: Vec<&str> = spec.split_whitespace().collect();
            let num = |s: &str| s.parse::<f64>().map_err(|_| err("bad number"));
            let dist = match words.as_slice() {
                [v] => Distribution::Fixed { value: num(v)? },
                ["int", lo, hi] => Distribution::Int {
                    lo: lo.parse().map_err(|_| err("bad integer"))?,
                    hi: hi.parse().map_err(|_| err("bad integer"))?,
                },
                ["uniform", lo, hi] => Distribution::Uniform { lo: num(lo)?, hi: num(hi)? },
                ["loguniform", lo, hi] => Distribution::LogUniform { lo: num(lo)?, hi: num(hi)? },
                _ => return Err(err("unknown distribution")),
            };
            dist.validate().map_err(|e| err(&e))?;
            space.params.insert(name.trim().to_string(), dist);
        }
        Ok(space)
    }

    pub fn to_config(&self) -> String {
        self.params.iter().map(|(k, d)| format!("{k} = {d}\n")).collect()
    }

    /// Default spaces. Booster values are the conventional ranges for the
    /// named parameters; the other families use ranges of similar breadth.
    pub fn default_for(family: Family) -> Self {
        use Distribution::*;
        let booster = SearchSpace::new()
            .with("max_depth", Int { lo: 2, hi: 10 })
            .with("learning_rate", LogUniform { lo: 0.01, hi: 0.5 })
            .with("min_child_weight", Uniform { lo: 0.0, hi: 10.0 })
            .with("subsample", Uniform { lo: 0.5, hi: 1.0 })
            .with("colsample_bytree", Uniform { lo: 0.5, hi: 1.0 })
            .with("scale_pos_weight", Uniform { lo: 0.5, hi: 4.0 })
            .with("n_rounds", Int { lo: 50, hi: 500 });
        match family {
            Family::Booster => booster
                .with("gamma", LogUniform { lo: 1e-3, hi: 10.0 })
                .with("reg_lambda", LogUniform { lo: 1e-3, hi: 10.0 }),
            Family::Gbdt => booster,
            Family::Forest => SearchSpace::new()
                .with("n_trees", Int { lo: 50, hi: 300 })
                .with("max_depth", Int { lo: 3, hi: 20 })
                .with("min_child_weight", Uniform { lo: 0.0, hi: 10.0 })
                .with("colsample_bytree", Uniform { lo: 0.3, hi: 1.0 }),
            Family::Knn => SearchSpace::new().with("k", Int { lo: 1, hi: 30 }),
            Family::Linear => SearchSpace::new().with("ridge_alpha", LogUniform { lo: 1e-4, hi: 100.0 }),
        }
    }
}
