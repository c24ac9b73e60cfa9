//! Config loading: JSON file, CLI overrides merged in before hashing, strict
//! unknown-key rejection, and deterministic SHA-256 config hashes.

use hoconv_core::train::TrainConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Io(String),
    Divergence(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Divergence(_) => 4,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Io(m) | CliError::Divergence(m) => m,
        }
    }
}

impl From<hoconv_core::Error> for CliError {
    fn from(e: hoconv_core::Error) -> Self {
        match e {
            hoconv_core::Error::Io(err) => CliError::Io(err.to_string()),
            hoconv_core::Error::Format(m) => CliError::Io(m),
            hoconv_core::Error::Diverged { epoch } => {
                CliError::Divergence(format!("training diverged at epoch {epoch}"))
            }
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Flag-level overrides applied on top of the config file before hashing.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seeds: Option<Vec<u64>>,
}

/// Loads the JSON config, merges overrides, hashes the canonical form, then
/// parses into the typed config. serde_json keeps object keys sorted, so the
/// hash is stable under key reordering in the file.
pub fn load_config<T: DeserializeOwned>(
    path: Option<&Path>,
    overrides: &Overrides,
) -> CliResult<(T, String)> {
    let mut value: serde_json::Value = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
        }
        None => serde_json::Value::Object(Default::default()),
    };
    let obj = value
        .as_object_mut()
        .ok_or_else(|| CliError::Config("config root must be a JSON object".into()))?;
    if let Some(out) = &overrides.out {
        obj.insert(
            "out".into(),
            serde_json::Value::String(out.to_string_lossy().into_owned()),
        );
    }
    if let Some(seeds) = &overrides.seeds {
        obj.insert(
            "seeds".into(),
            serde_json::Value::Array(
                seeds
                    .iter()
                    .map(|&s| serde_json::Value::Number(s.into()))
                    .collect(),
            ),
        );
        obj.remove("seed_count");
        obj.remove("base_seed");
    }
    let hash = hash_value(&value);
    let typed: T = serde_json::from_value(value)
        .map_err(|e| CliError::Config(format!("config: {e}")))?;
    Ok((typed, hash))
}

pub fn hash_value(value: &serde_json::Value) -> String {
    let canonical = serde_json::to_string(value).expect("json value serializes");
    let mut hasher = Sha256::new();
    hasher.update(canonical.as_bytes());
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Seed list: explicit `seeds`, or `base_seed + index` for `seed_count`.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct SeedSpec {
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
    #[serde(default)]
    pub seed_count: Option<usize>,
    #[serde(default)]
    pub base_seed: Option<u64>,
}

impl SeedSpec {
    pub fn expand(&self, default_base: u64, default_count: usize) -> CliResult<Vec<u64>> {
        if let Some(seeds) = &self.seeds {
            if seeds.is_empty() {
                return Err(CliError::Config("seed list is empty".into()));
            }
            return Ok(seeds.clone());
        }
        let base = self.base_seed.unwrap_or(default_base);
        let count = self.seed_count.unwrap_or(default_count);
        if count == 0 {
            return Err(CliError::Config("seed_count must be >= 1".into()));
        }
        Ok((0..count as u64).map(|i| base + i).collect())
    }
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn default_sizes() -> (usize, usize, usize) {
    (2000, 1000, 2000)
}

fn default_side() -> usize {
    32
}

fn default_level() -> f64 {
    1.0
}

fn default_seed() -> u64 {
    7
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenConfig {
    #[serde(default = "default_sizes")]
    pub sizes: (usize, usize, usize),
    #[serde(default = "default_side")]
    pub height: usize,
    #[serde(default = "default_side")]
    pub width: usize,
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

impl GenConfig {
    /// --seeds overrides the scalar seed with its first entry.
    pub fn effective_seed(&self) -> u64 {
        match &self.seeds {
            Some(list) if !list.is_empty() => list[0],
            _ => self.seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainCmdConfig {
    pub dataset_dir: PathBuf,
    #[serde(default = "default_model")]
    pub model: String,
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
    #[serde(default)]
    pub seed_count: Option<usize>,
    #[serde(default)]
    pub base_seed: Option<u64>,
    /// optimizer/schedule settings; the per-run seed is filled per seed
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

fn default_model() -> String {
    "hocnn3".into()
}

impl TrainCmdConfig {
    pub fn expand_seeds(&self) -> CliResult<Vec<u64>> {
        SeedSpec {
            seeds: self.seeds.clone(),
            seed_count: self.seed_count,
            base_seed: self.base_seed,
        }
        .expand(1, 5)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub checkpoint: PathBuf,
    pub dataset: PathBuf,
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

fn default_pca_models() -> Vec<String> {
    vec!["cnn".into(), "hocnn2".into(), "hocnn3".into()]
}

fn default_n_inits() -> usize {
    1000
}

fn default_nonlinearities() -> Vec<String> {
    vec!["relu".into()]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PcaTiedConfig {
    #[serde(default = "default_pca_models")]
    pub models: Vec<String>,
    #[serde(default = "default_n_inits")]
    pub n_inits: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
    /// seed for the fixed composite input image
    #[serde(default = "default_seed")]
    pub composite_seed: u64,
    #[serde(default = "default_nonlinearities")]
    pub nonlinearities: Vec<String>,
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

impl PcaTiedConfig {
    pub fn effective_seed(&self) -> u64 {
        match &self.seeds {
            Some(list) if !list.is_empty() => list[0],
            _ => self.seed,
        }
    }
}

fn default_stimuli_per_class() -> usize {
    10
}

fn default_bins() -> usize {
    20
}

fn default_label_a() -> String {
    "cnn".into()
}

fn default_label_b() -> String {
    "hocnn3".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RsaConfig {
    pub checkpoints_a: Vec<PathBuf>,
    pub checkpoints_b: Vec<PathBuf>,
    #[serde(default = "default_label_a")]
    pub label_a: String,
    #[serde(default = "default_label_b")]
    pub label_b: String,
    pub dataset: PathBuf,
    #[serde(default = "default_stimuli_per_class")]
    pub stimuli_per_class: usize,
    #[serde(default = "default_bins")]
    pub n_bins: usize,
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

fn default_intensities() -> Vec<f64> {
    vec![0.0, 0.05, 0.09, 0.12, 0.16, 0.20]
}

fn default_max_images() -> usize {
    500
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbConfig {
    pub checkpoints: Vec<PathBuf>,
    pub dataset: PathBuf,
    #[serde(default = "default_intensities")]
    pub intensities: Vec<f64>,
    #[serde(default = "default_level")]
    pub texture_level: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
    /// evaluation subsample cap, from the front of the dataset
    #[serde(default = "default_max_images")]
    pub max_images: usize,
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

impl PerturbConfig {
    pub fn effective_seed(&self) -> u64 {
        match &self.seeds {
            Some(list) if !list.is_empty() => list[0],
            _ => self.seed,
        }
    }
}

fn default_kernel() -> usize {
    3
}

fn default_one() -> usize {
    1
}

fn default_max_order() -> usize {
    3
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlopsConfig {
    #[serde(default = "default_kernel")]
    pub kh: usize,
    #[serde(default = "default_kernel")]
    pub kw: usize,
    #[serde(default = "default_one")]
    pub c_in: usize,
    #[serde(default = "default_one")]
    pub out_channels: usize,
    #[serde(default = "default_max_order")]
    pub max_order: usize,
    #[serde(default = "default_side")]
    pub input_h: usize,
    #[serde(default = "default_side")]
    pub input_w: usize,
    #[serde(default = "default_one")]
    pub stride: usize,
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_is_stable_under_key_order() {
        let a: serde_json::Value = serde_json::from_str(r#"{"b":1,"a":{"y":2,"x":3}}"#).unwrap();
        let b: serde_json::Value = serde_json::from_str(r#"{"a":{"x":3,"y":2},"b":1}"#).unwrap();
        assert_eq!(hash_value(&a), hash_value(&b));
    }

    #[test]
    fn unknown_keys_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"seed": 3, "bogus_key": 1}"#).unwrap();
        let r: CliResult<(GenConfig, String)> = load_config(Some(&p), &Overrides::default());
        assert!(matches!(r, Err(CliError::Config(_))));
    }

    #[test]
    fn seed_expansion_from_count() {
        let spec = SeedSpec {
            seeds: None,
            seed_count: Some(3),
            base_seed: Some(100),
        };
        assert_eq!(spec.expand(0, 1).unwrap(), vec![100, 101, 102]);
        let explicit = SeedSpec {
            seeds: Some(vec![5, 9]),
            seed_count: None,
            base_seed: None,
        };
        assert_eq!(explicit.expand(0, 1).unwrap(), vec![5, 9]);
    }

    #[test]
    fn overrides_change_hash_and_fields() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"seed": 3}"#).unwrap();
        let (cfg1, h1): (GenConfig, String) =
            load_config(Some(&p), &Overrides::default()).unwrap();
        let with_out = Overrides {
            out: Some(PathBuf::from("elsewhere")),
            ..Default::default()
        };
        let (cfg2, h2): (GenConfig, String) = load_config(Some(&p), &with_out).unwrap();
        assert_ne!(h1, h2);
        assert_eq!(cfg1.out, PathBuf::from("out"));
        assert_eq!(cfg2.out, PathBuf::from("elsewhere"));
    }
}
