//! Experiment configuration: a TOML document layered over a dataset
//! profile, with a content hash recorded in every artifact.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cgcf::{CfConfig, Method};
use crate::classifier::TrainConfig;
use crate::dataset::SplitSpec;
use crate::error::{Error, Result};
use crate::metrics::DEFAULT_MIN_COUNT;
use crate::vae::VaeConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Aids,
    Mutagenicity,
    Nci1,
    Synthetic,
}

impl Profile {
    pub fn from_name(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "aids" => Ok(Profile::Aids),
            "mutagenicity" => Ok(Profile::Mutagenicity),
            "nci1" => Ok(Profile::Nci1),
            "synthetic" => Ok(Profile::Synthetic),
            other => Err(Error::InvalidArgument(format!(
                "unknown profile {other:?}; expected aids, mutagenicity, nci1 or synthetic"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    /// Benchmark name as used in the file names (`AIDS`, `NCI1`, ...), or
    /// `synthetic`.
    pub name: String,
    /// Directory with the `<name>_*.txt` files, or its parent.
    pub path: Option<PathBuf>,
    /// Graphs with this many nodes or more are dropped; also the padded size.
    pub max_nodes: usize,
    pub min_node_label_freq: usize,
    /// Graph count of the synthetic dataset.
    pub synthetic_graphs: usize,
}

impl DatasetConfig {
    pub fn is_synthetic(&self) -> bool {
        self.name.eq_ignore_ascii_case("synthetic")
    }

    /// The directory holding the benchmark files.
    pub fn data_dir(&self) -> Result<PathBuf> {
        let base = self
            .path
            .clone()
            .ok_or_else(|| Error::InvalidArgument(format!("dataset {} needs `path`", self.name)))?;
        let nested = base.join(&self.name);
        let marker = format!("{}_A.txt", self.name);
        Ok(if !base.join(&marker).exists() && nested.join(&marker).exists() {
            nested
        } else {
            base
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub test_fraction: f64,
    pub val_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateConfig {
    pub methods: Vec<Method>,
    pub min_count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub profile: Profile,
    /// Global seed; the split, both trainings and the counterfactual search
    /// all take their seed from it.
    pub seed: u64,
    pub out_dir: PathBuf,
    pub dataset: DatasetConfig,
    pub split: SplitConfig,
    pub classifier: TrainConfig,
    pub vae: VaeConfig,
    pub cf: CfConfig,
    pub evaluate: EvaluateConfig,
}

impl ExperimentConfig {
    /// Defaults of a dataset profile.
    pub fn profile(profile: Profile) -> Self {
        let (name, max_nodes, beta) = match profile {
            Profile::Aids => ("AIDS", 30, 0.1),
            Profile::Mutagenicity => ("Mutagenicity", 50, 0.5),
            Profile::Nci1 => ("NCI1", 50, 0.5),
            Profile::Synthetic => ("synthetic", 8, 0.5),
        };
        let synthetic = profile == Profile::Synthetic;
        let mut cfg = Self {
            profile,
            seed: 0,
            out_dir: PathBuf::from(format!("runs/{}", name.to_ascii_lowercase())),
            dataset: DatasetConfig {
                name: name.to_string(),
                path: (!synthetic).then(|| PathBuf::from("data")),
                max_nodes,
                min_node_label_freq: 50,
                synthetic_graphs: 500,
            },
            split: SplitConfig {
                test_fraction: 0.1,
                val_fraction: 0.1,
            },
            classifier: TrainConfig::default(),
            vae: VaeConfig {
                beta,
                epochs: if synthetic { 300 } else { 2000 },
                batch_size: if synthetic { 16 } else { 64 },
                ..VaeConfig::default()
            },
            cf: CfConfig::default(),
            evaluate: EvaluateConfig {
                methods: Method::ALL.to_vec(),
                min_count: DEFAULT_MIN_COUNT,
            },
        };
        cfg.apply_seed(0);
        cfg
    }

    /// Parses a TOML document. `profile` picks the defaults every other key
    /// overrides; relative paths are taken relative to `base_dir`.
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let user: toml::Table = toml::from_str(text)?;
        let profile = match user.get("profile") {
            Some(toml::Value::String(s)) => Profile::from_name(s)?,
            Some(other) => return Err(Error::InvalidArgument(format!("`profile` must be a string, got {other}"))),
            None => Profile::Synthetic,
        };
        let mut merged = toml::Table::try_from(Self::profile(profile))
            .map_err(|e| Error::InvalidArgument(format!("serialising defaults: {e}")))?;
        merge(&mut merged, user);
        let mut cfg: Self = merged.try_into()?;
        if cfg.out_dir.is_relative() {
            cfg.out_dir = base_dir.join(&cfg.out_dir);
        }
        if let Some(p) = cfg.dataset.path.as_mut().filter(|p| p.is_relative()) {
            *p = base_dir.join(&*p);
        }
        let seed = cfg.seed;
        cfg.apply_seed(seed);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::InvalidArgument(format!("serialising config: {e}")))
    }

    /// Sets the global seed and every seed derived from it.
    pub fn apply_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.classifier.seed = seed;
        self.vae.seed = seed;
        self.cf.seed = seed;
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            test_fraction: self.split.test_fraction,
            val_fraction: self.split.val_fraction,
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.classifier.validate()?;
        self.vae.validate()?;
        self.cf.validate()?;
        if self.dataset.max_nodes == 0 || self.evaluate.min_count == 0 || self.evaluate.methods.is_empty() {
            return Err(Error::InvalidArgument(
                "max_nodes, min_count and the method list must be non-empty".into(),
            ));
        }
        if self.dataset.is_synthetic() && self.dataset.max_nodes > 8 {
            return Err(Error::InvalidArgument("the synthetic dataset allows at most 8 nodes".into()));
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON form, excluding the output and data
    /// locations.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out_dir = PathBuf::new();
        c.dataset.path = None;
        let json = serde_json::to_string(&c).expect("config serialises");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles_carry_dataset_defaults() {
        let aids = ExperimentConfig::profile(Profile::Aids);
        assert_eq!((aids.dataset.max_nodes, aids.vae.beta), (30, 0.1));
        let nci = ExperimentConfig::profile(Profile::Nci1);
        assert_eq!((nci.dataset.max_nodes, nci.vae.beta, nci.vae.epochs), (50, 0.5, 2000));
        let syn = ExperimentConfig::profile(Profile::Synthetic);
        assert!(syn.dataset.is_synthetic() && syn.vae.epochs <= 300);
        assert_eq!(syn.cf.iterations, 1000);
        assert_eq!(syn.cf.k_nn, 10);
    }

    #[test]
    fn toml_overrides_layer_over_the_profile() {
        let text = r#"
profile = "mutagenicity"
seed = 7
out_dir = "out"

[dataset]
path = "tu"

[vae]
epochs = 5

[cf]
lambda = 0.5
"#;
        let cfg = ExperimentConfig::from_toml(text, Path::new("/exp")).unwrap();
        assert_eq!(cfg.profile, Profile::Mutagenicity);
        assert_eq!(cfg.vae.epochs, 5);
        assert_eq!(cfg.vae.beta, 0.5);
        assert_eq!(cfg.cf.lambda, 0.5);
        assert_eq!((cfg.vae.seed, cfg.classifier.seed, cfg.cf.seed), (7, 7, 7));
        assert_eq!(cfg.out_dir, PathBuf::from("/exp/out"));
        assert_eq!(cfg.dataset.path, Some(PathBuf::from("/exp/tu")));
        let again = ExperimentConfig::from_toml(&cfg.to_toml().unwrap(), Path::new("/")).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(ExperimentConfig::from_toml("profile = \"aids\"\n[vae]\nbogus = 1\n", Path::new(".")).is_err());
        assert!(ExperimentConfig::from_toml("profile = \"cora\"\n", Path::new(".")).is_err());
        assert!(ExperimentConfig::from_toml("[cf]\ntau = 0.0\n", Path::new(".")).is_err());
        assert!(ExperimentConfig::from_toml("[dataset]\nmax_nodes = 9\n", Path::new(".")).is_err());
    }

    #[test]
    fn hash_ignores_locations_but_not_settings() {
        let a = ExperimentConfig::profile(Profile::Aids);
        let mut b = a.clone();
        b.out_dir = PathBuf::from("/elsewhere");
        b.dataset.path = Some(PathBuf::from("/data2"));
        assert_eq!(a.hash(), b.hash());
        b.apply_seed(1);
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
