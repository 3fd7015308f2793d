use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::diffusion::DEFAULT_GUIDANCE;
use crate::ensemble::EnsembleConfig;
use crate::error::{GaudaError, Result};
use crate::sampling::SampleWeighting;

/// How the original batch is drawn and whether synthesis is used.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    /// Uniform draws.
    None,
    /// Class weights from validation scores, starting from frequency weights.
    As,
    /// Class weights from ensemble uncertainty.
    UncertaintyAs,
    /// Uniform draws with uncertainty-targeted synthetic replacements.
    Gauda,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Policy {
    pub kind: PolicyKind,
    /// Classic flip / rotation augmentation on top.
    pub aug: bool,
}

impl Policy {
    pub const fn new(kind: PolicyKind, aug: bool) -> Self {
        Policy { kind, aug }
    }

    /// The six policies of the comparison table.
    pub fn comparison_set() -> Vec<Policy> {
        use PolicyKind::*;
        vec![
            Policy::new(None, false),
            Policy::new(None, true),
            Policy::new(As, false),
            Policy::new(As, true),
            Policy::new(Gauda, false),
            Policy::new(Gauda, true),
        ]
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let base = match self.kind {
            PolicyKind::None => {
                return f.write_str(if self.aug { "aug" } else { "none" });
            }
            PolicyKind::As => "as",
            PolicyKind::UncertaintyAs => "ue-as",
            PolicyKind::Gauda => "gauda",
        };
        if self.aug {
            write!(f, "{base}+aug")
        } else {
            f.write_str(base)
        }
    }
}

impl FromStr for Policy {
    type Err = GaudaError;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        let (base, aug) = match lower.strip_suffix("+aug") {
            Some(b) => (b, true),
            None => (lower.as_str(), false),
        };
        let kind = match base {
            "none" | "baseline" => PolicyKind::None,
            "aug" if !aug => return Ok(Policy::new(PolicyKind::None, true)),
            "as" => PolicyKind::As,
            "ue-as" => PolicyKind::UncertaintyAs,
            "gauda" => PolicyKind::Gauda,
            _ => return Err(GaudaError::Config(format!("unknown policy '{s}'"))),
        };
        Ok(Policy::new(kind, aug))
    }
}

impl Serialize for PolicyName {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.0.to_string())
    }
}

impl<'de> Deserialize<'de> for PolicyName {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map(PolicyName).map_err(serde::de::Error::custom)
    }
}

/// A policy serialised by its display name (`"gauda+aug"`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PolicyName(pub Policy);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaudaConfig {
    pub total_steps: usize,
    pub batch: usize,
    pub val_interval: usize,
    /// Number of most-uncertain classes to synthesise for.
    pub n_c: usize,
    pub omega: f64,
    /// Synthetic samples requested per validation round, split over classes.
    pub synth_batch: usize,
    /// Cap on synthetic samples requested over the whole run.
    pub synth_budget: Option<usize>,
    pub replace_fraction: f64,
    /// Pool capacity as a multiple of `synth_batch`.
    pub pool_factor: usize,
    /// Turns off synthesis while keeping the GAUDA batch path.
    pub synthesis: bool,
    /// Keep synthetic pairs whose decoded mask lacks the conditioned class.
    pub keep_off_target: bool,
    pub sample_weighting: SampleWeighting,
    pub aug_probability: f64,
}

impl Default for GaudaConfig {
    fn default() -> Self {
        GaudaConfig {
            total_steps: 1500,
            batch: 16,
            val_interval: 100,
            n_c: 2,
            omega: DEFAULT_GUIDANCE,
            synth_batch: 32,
            synth_budget: None,
            replace_fraction: 0.25,
            pool_factor: 4,
            synthesis: true,
            keep_off_target: false,
            sample_weighting: SampleWeighting::Mean,
            aug_probability: 0.2,
        }
    }
}

impl GaudaConfig {
    /// Full-scale values: `n_c = 5`, validation every 200 steps.
    pub fn full_scale() -> Self {
        GaudaConfig {
            n_c: 5,
            val_interval: 200,
            ..GaudaConfig::default()
        }
    }

    pub fn validate(&self, classes: usize) -> Result<()> {
        if self.n_c == 0 || self.n_c > classes {
            return Err(GaudaError::Config(format!("n_c = {} must lie in 1..={classes}", self.n_c)));
        }
        if !(0.0..=1.0).contains(&self.replace_fraction) {
            return Err(GaudaError::Config("replace_fraction must lie in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.aug_probability) {
            return Err(GaudaError::Config("aug_probability must lie in [0, 1]".into()));
        }
        if self.batch == 0 || self.val_interval == 0 || self.total_steps == 0 {
            return Err(GaudaError::Config("batch, val_interval and total_steps must be positive".into()));
        }
        if !(self.omega >= 0.0) {
            return Err(GaudaError::Config("omega must be >= 0".into()));
        }
        Ok(())
    }

    pub fn pool_capacity(&self) -> usize {
        (self.pool_factor * self.synth_batch).max(1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainerConfig {
    pub policy: PolicyName,
    pub gauda: GaudaConfig,
    pub ensemble: EnsembleConfig,
}

impl TrainerConfig {
    pub fn new(policy: Policy, gauda: GaudaConfig, ensemble: EnsembleConfig) -> Self {
        TrainerConfig {
            policy: PolicyName(policy),
            gauda,
            ensemble,
        }
    }

    pub fn policy(&self) -> Policy {
        self.policy.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn policy_names_roundtrip() {
        for p in Policy::comparison_set() {
            assert_eq!(p.to_string().parse::<Policy>().unwrap(), p);
        }
        assert_eq!("ue-as".parse::<Policy>().unwrap().kind, PolicyKind::UncertaintyAs);
        assert!("bogus".parse::<Policy>().is_err());
    }

    #[test]
    fn defaults_and_validation() {
        assert_eq!(GaudaConfig::full_scale().n_c, 5);
        assert_eq!(GaudaConfig::default().omega, 3.0);
        assert!(GaudaConfig { n_c: 5, ..GaudaConfig::default() }.validate(4).is_err());
        assert!(GaudaConfig { replace_fraction: 1.5, ..GaudaConfig::default() }.validate(4).is_err());
        let json = serde_json::to_string(&TrainerConfig::new(
            Policy::new(PolicyKind::Gauda, true),
            GaudaConfig::default(),
            EnsembleConfig::default(),
        ))
        .unwrap();
        assert!(json.contains("\"gauda+aug\""));
    }
}
