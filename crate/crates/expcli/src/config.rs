//! Suite configuration: per-suite desk-scale defaults, JSON loading with
//! unknown keys rejected, and the run manifest.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ima_core::flows::FlowConfig;
use ima_core::mixing::{InitKind, MixingOptions, PriorKind};
use ima_core::training::{RegularizerKind, RegularizerSpec, TrainConfig};
use serde::{Deserialize, Deserializer, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SuiteKind {
    #[serde(rename = "fig1")]
    Fig1,
    #[serde(rename = "figA_uniform")]
    FigAUniform,
    #[serde(rename = "recovery")]
    Recovery,
    #[serde(rename = "training_dynamics")]
    TrainingDynamics,
    #[serde(rename = "reg_comparison")]
    RegComparison,
}

impl SuiteKind {
    pub const ALL: [SuiteKind; 5] = [
        SuiteKind::Fig1,
        SuiteKind::FigAUniform,
        SuiteKind::Recovery,
        SuiteKind::TrainingDynamics,
        SuiteKind::RegComparison,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SuiteKind::Fig1 => "fig1",
            SuiteKind::FigAUniform => "figA_uniform",
            SuiteKind::Recovery => "recovery",
            SuiteKind::TrainingDynamics => "training_dynamics",
            SuiteKind::RegComparison => "reg_comparison",
        }
    }
}

impl fmt::Display for SuiteKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SuiteKind {
    type Err = CliError;
    fn from_str(s: &str) -> Result<Self> {
        SuiteKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = SuiteKind::ALL.iter().map(|k| k.name()).collect();
                CliError::config(format!("unknown suite `{s}` (expected one of {})", names.join(", ")))
            })
    }
}

fn one_or_many<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<usize>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(usize),
        Many(Vec<usize>),
    }
    Ok(match OneOrMany::deserialize(d)? {
        OneOrMany::One(n) => vec![n],
        OneOrMany::Many(v) => v,
    })
}

/// Everything that determines a suite's output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteConfig {
    pub suite: SuiteKind,
    /// Data dimension(s); a single number is accepted.
    #[serde(deserialize_with = "one_or_many")]
    pub n: Vec<usize>,
    /// Mixing depths `L`.
    pub layers: Vec<usize>,
    pub init_kind: InitKind,
    pub prior: PriorKind,
    /// Replicate seeds; each seeds one mixing and, offset by `train.seed`,
    /// the flow initialization and training stream.
    pub seeds: Vec<u64>,
    /// Ignored by the Darmois suites, which always fit by plain likelihood.
    pub regularizers: Vec<RegularizerSpec>,
    pub mixing: MixingOptions,
    pub train: TrainConfig,
    pub flow: FlowConfig,
    /// Samples for the final C_IMA, KLD and MCC estimates.
    pub eval_samples: usize,
    /// Points per 2D scatter export (recovery suite, n = 2 only).
    pub scatter_points: usize,
    /// Quadrature nodes per axis for the exact 2D Darmois map.
    pub darmois_nodes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

fn cima_grid() -> Vec<RegularizerSpec> {
    [0.0, 0.5, 1.0]
        .into_iter()
        .map(|l| RegularizerSpec::cima(l).expect("valid strength"))
        .collect()
}

impl SuiteConfig {
    /// Desk-scale defaults: 5 seeds, 2·10⁴ iterations, a 4-block width-16
    /// residual flow trained on batches of 64.
    pub fn defaults(suite: SuiteKind) -> Self {
        let mut cfg = SuiteConfig {
            suite,
            n: vec![5],
            layers: vec![2, 4, 8],
            init_kind: InitKind::Orthogonal,
            prior: PriorKind::StandardNormal,
            seeds: (0..5).collect(),
            regularizers: cima_grid(),
            mixing: MixingOptions::default(),
            train: TrainConfig {
                iterations: 20_000,
                batch_size: 64,
                eval_every: 500,
                eval_batch: 2048,
                ..TrainConfig::default()
            },
            flow: FlowConfig {
                blocks: 4,
                hidden_width: 16,
                ..FlowConfig::default()
            },
            eval_samples: 10_000,
            scatter_points: 1000,
            darmois_nodes: 512,
            out: None,
        };
        match suite {
            SuiteKind::Fig1 => {
                cfg.layers = vec![2, 4, 8, 12, 16, 20];
                cfg.regularizers = vec![RegularizerSpec::none()];
            }
            SuiteKind::FigAUniform => {
                cfg.layers = vec![2, 3, 4, 5];
                cfg.init_kind = InitKind::Uniform;
                cfg.regularizers = vec![RegularizerSpec::none()];
            }
            SuiteKind::Recovery => {}
            SuiteKind::TrainingDynamics => {
                cfg.n = vec![2, 5];
                cfg.layers = vec![4];
            }
            SuiteKind::RegComparison => {
                cfg.layers = vec![4];
                let mut regs = cima_grid();
                for kind in [RegularizerKind::L1, RegularizerKind::L2] {
                    for s in [1e-4, 5e-4, 1e-3] {
                        regs.push(RegularizerSpec::new(kind, s).expect("valid strength"));
                    }
                }
                cfg.regularizers = regs;
            }
        }
        cfg
    }

    /// Parses a JSON config. Keys left out take the defaults of the named
    /// suite; nested objects (`train`, `flow`, `mixing`) merge key by key.
    pub fn from_json(text: &str) -> Result<Self> {
        let user: Value = serde_json::from_str(text).map_err(|e| CliError::config(format!("invalid JSON: {e}")))?;
        let Value::Object(user) = user else {
            return Err(CliError::config("config must be a JSON object"));
        };
        let suite: SuiteKind = match user.get("suite") {
            Some(Value::String(s)) => s.parse()?,
            Some(_) => return Err(CliError::config("`suite` must be a string")),
            None => return Err(CliError::config("missing required key `suite`")),
        };
        let mut merged = serde_json::to_value(Self::defaults(suite))?;
        let target = merged.as_object_mut().expect("struct serializes to an object");
        for (k, v) in user {
            match (target.get_mut(&k), v) {
                (Some(Value::Object(base)), Value::Object(over)) => base.extend(over),
                (_, v) => {
                    target.insert(k, v);
                }
            }
        }
        let cfg: SuiteConfig = serde_json::from_value(merged).map_err(|e| CliError::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(CliError::config(msg));
        if self.n.is_empty() || self.layers.is_empty() || self.seeds.is_empty() {
            return bad("`n`, `layers` and `seeds` must be non-empty".into());
        }
        if let Some(n) = self.n.iter().find(|&&n| n < 2) {
            return bad(format!("dimension {n} is below 2"));
        }
        if self.layers.contains(&0) {
            return bad("mixing depth must be at least 1".into());
        }
        for (name, dup) in [("n", has_duplicates(&self.n)), ("layers", has_duplicates(&self.layers))] {
            if dup {
                return bad(format!("`{name}` has duplicate entries"));
            }
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != self.seeds.len() {
            return bad("`seeds` has duplicate entries".into());
        }
        if self.regularizers.is_empty() {
            return bad("`regularizers` must be non-empty".into());
        }
        if !(self.mixing.alpha > 0.0) || !(self.mixing.bias_scale >= 0.0) {
            return bad("mixing needs alpha > 0 and bias_scale ≥ 0".into());
        }
        if self.eval_samples < 100 {
            return bad("`eval_samples` must be at least 100".into());
        }
        if self.scatter_points == 0 || self.darmois_nodes < 16 {
            return bad("`scatter_points` must be positive and `darmois_nodes` at least 16".into());
        }
        self.train.validate().map_err(|e| CliError::config(e.to_string()))?;
        for &n in &self.n {
            self.flow.validate(n).map_err(|e| CliError::config(e.to_string()))?;
        }
        match self.suite {
            SuiteKind::Fig1 | SuiteKind::FigAUniform | SuiteKind::Recovery | SuiteKind::RegComparison
                if self.n.len() != 1 =>
            {
                bad(format!("suite {} takes a single `n`", self.suite))
            }
            SuiteKind::FigAUniform if self.init_kind != InitKind::Uniform => {
                bad("suite figA_uniform needs init_kind = uniform".into())
            }
            _ => Ok(()),
        }
    }

    pub fn n(&self) -> usize {
        self.n[0]
    }

    /// Seed of the flow initialization and training stream for a replicate.
    pub fn run_seed(&self, seed: u64) -> u64 {
        self.train.seed.wrapping_mul(1_000_003).wrapping_add(seed)
    }

    pub fn manifest(&self) -> Manifest {
        let mut config = self.clone();
        config.out = None;
        Manifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config,
        }
    }
}

fn has_duplicates(v: &[usize]) -> bool {
    let mut s = v.to_vec();
    s.sort_unstable();
    s.windows(2).any(|w| w[0] == w[1])
}

/// Provenance written next to every suite output. The output directory is
/// excluded so moving results does not change the hash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config: SuiteConfig,
}

impl Manifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    /// First 16 hex digits of the SHA-256 of the compact JSON.
    pub fn hash(&self) -> String {
        short_hash(&serde_json::to_string(self).expect("manifest serializes"))
    }
}

pub fn short_hash(text: &str) -> String {
    hex::encode(&Sha256::digest(text.as_bytes())[..8])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        for k in SuiteKind::ALL {
            SuiteConfig::defaults(k).validate().unwrap();
            assert_eq!(k.name().parse::<SuiteKind>().unwrap(), k);
        }
    }

    #[test]
    fn partial_config_merges_with_defaults() {
        let cfg = SuiteConfig::from_json(r#"{"suite":"recovery","n":2,"train":{"iterations":10}}"#).unwrap();
        assert_eq!(cfg.n, vec![2]);
        assert_eq!(cfg.train.iterations, 10);
        assert_eq!(cfg.train.batch_size, 64);
        assert_eq!(cfg.layers, vec![2, 4, 8]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for text in [
            r#"{"suite":"fig1","colour":1}"#,
            r#"{"suite":"fig1","train":{"iters":1}}"#,
            r#"{"suite":"fig1","flow":{"depth":1}}"#,
            r#"{"suite":"fig9"}"#,
            r#"{"n":5}"#,
            r#"{"suite":"figA_uniform","init_kind":"orthogonal"}"#,
            r#"{"suite":"recovery","regularizers":[{"kind":"cima","strength":-1}]}"#,
        ] {
            assert!(matches!(SuiteConfig::from_json(text), Err(CliError::Config(_))), "{text}");
        }
    }

    #[test]
    fn hash_ignores_output_dir_only() {
        let mut a = SuiteConfig::defaults(SuiteKind::Fig1);
        let h = a.manifest().hash();
        a.out = Some("/tmp/x".into());
        assert_eq!(a.manifest().hash(), h);
        a.seeds.push(9);
        assert_ne!(a.manifest().hash(), h);
        assert_eq!(h.len(), 16);
    }
}
