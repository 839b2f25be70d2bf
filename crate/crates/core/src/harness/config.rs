use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::language::TaskFamily;
use crate::model::TrainConfig;
use crate::sparsify::{MaskConfig, SearchSpace};
use crate::task::{Modality, Rule};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Standard,
    RandomControl,
    PrunedBase,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Standard => "standard",
            Self::RandomControl => "random_control",
            Self::PrunedBase => "pruned_base",
        }
    }

    /// Subdirectory of the experiment directory holding this mode's branches.
    pub fn subdir(self) -> Option<&'static str> {
        match self {
            Self::Standard => None,
            Self::RandomControl => Some("control-random"),
            Self::PrunedBase => Some("pruned"),
        }
    }
}

/// Train / val / test example counts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitSizes {
    pub const fn new(train: usize, val: usize, test: usize) -> Self {
        Self { train, val, test }
    }

    fn validate(&self, what: &str) -> Result<()> {
        if self.train == 0 || self.val == 0 || self.test == 0 {
            return Err(Error::Config(format!("{what} sizes must be positive: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleSizes {
    pub base: SplitSizes,
    pub mask_train: SplitSizes,
    /// Test-Target / Test-Other sets; only val and test are generated.
    pub probe: SplitSizes,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSizes {
    pub vision: RoleSizes,
    /// `None` uses each language family's own sizes.
    pub language: Option<RoleSizes>,
}

impl Default for DatasetSizes {
    fn default() -> Self {
        let vision = SplitSizes::new(5000, 500, 1000);
        Self {
            vision: RoleSizes {
                base: SplitSizes::new(100_000, 1000, 1000),
                mask_train: vision,
                probe: vision,
            },
            language: None,
        }
    }
}

impl DatasetSizes {
    pub fn for_rule(&self, rule: Rule) -> RoleSizes {
        match (rule.modality(), TaskFamily::of(rule)) {
            (Modality::Language, Some(family)) => self.language.unwrap_or_else(|| {
                let [train, val, test] = family.default_sizes();
                let s = SplitSizes::new(train, val, test);
                RoleSizes {
                    base: s,
                    mask_train: s,
                    probe: s,
                }
            }),
            _ => self.vision,
        }
    }

    /// The same counts for every rule and role.
    pub fn uniform(sizes: SplitSizes) -> Self {
        let all = RoleSizes {
            base: sizes,
            mask_train: sizes,
            probe: sizes,
        };
        Self {
            vision: all,
            language: Some(all),
        }
    }
}

/// Base-model training settings per modality; seeds come from the experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSettings {
    pub vision: TrainConfig,
    pub language: TrainConfig,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            vision: TrainConfig {
                max_epochs: 20,
                patience: 5,
                ..TrainConfig::default()
            },
            language: TrainConfig::default(),
        }
    }
}

impl TrainSettings {
    pub fn for_rule(&self, rule: Rule, seed: u64) -> TrainConfig {
        let cfg = match rule.modality() {
            Modality::Vision => &self.vision,
            Modality::Language => &self.language,
        };
        TrainConfig { seed, ..cfg.clone() }
    }
}

/// A declarative experiment. Every field has a default, so `{}` is the full
/// default experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub mode: Mode,
    pub rules: Vec<Rule>,
    /// Base-model seeds.
    pub seeds: Vec<u64>,
    /// Mask runs per (model, subroutine).
    pub repeats: usize,
    /// Seed of every generated dataset.
    pub data_seed: u64,
    pub sizes: DatasetSizes,
    pub train: TrainSettings,
    /// Fixed mask settings; the search varies start layer, learning rate and `s0`.
    pub mask: MaskConfig,
    pub search: SearchSpace,
    /// Search space for pruning the base model on its own task.
    pub prune_search: SearchSpace,
    pub out: PathBuf,
    /// Worker threads; never affects results.
    pub jobs: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "default".into(),
            mode: Mode::Standard,
            rules: Rule::all().to_vec(),
            seeds: vec![0, 1, 2],
            repeats: 3,
            data_seed: 0,
            sizes: DatasetSizes::default(),
            train: TrainSettings::default(),
            mask: MaskConfig::default(),
            search: SearchSpace::default(),
            prune_search: SearchSpace {
                start_layers: vec![0],
                ..SearchSpace::default()
            },
            out: PathBuf::from("out"),
            jobs: 1,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return fail(format!("experiment name {:?} must be a plain directory name", self.name));
        }
        if self.rules.is_empty() || self.seeds.is_empty() {
            return fail("need at least one rule and one seed".into());
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != self.seeds.len() {
            return fail(format!("seeds must be distinct: {:?}", self.seeds));
        }
        let mut rules = self.rules.clone();
        rules.sort_unstable();
        rules.dedup();
        if rules.len() != self.rules.len() {
            return fail(format!("rules must be distinct: {:?}", self.rules));
        }
        if self.repeats == 0 {
            return fail("repeats must be at least 1".into());
        }
        if self.search.size() == 0 || self.prune_search.size() == 0 {
            return fail("search spaces must be nonempty".into());
        }
        if self.jobs == 0 {
            return fail("jobs must be at least 1".into());
        }
        for rule in &self.rules {
            let s = self.sizes.for_rule(*rule);
            s.base.validate("base")?;
            s.mask_train.validate("mask-train")?;
            s.probe.validate("probe")?;
        }
        self.train.vision.validate()?;
        self.train.language.validate()?;
        Ok(())
    }

    /// SHA-256 (hex, 16 chars) of the canonical JSON of everything that can
    /// change a result; `out`, `jobs` and `mode` are excluded.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.out = PathBuf::new();
        canonical.jobs = 1;
        canonical.mode = Mode::Standard;
        let json = serde_json::to_vec(&canonical).expect("config serializes");
        hex::encode(&Sha256::digest(&json)[..8])
    }

    pub fn experiment_dir(&self) -> PathBuf {
        self.out.join(&self.name)
    }

    /// Directory of this config's mode.
    pub fn mode_dir(&self) -> PathBuf {
        match self.mode.subdir() {
            Some(sub) => self.experiment_dir().join(sub),
            None => self.experiment_dir(),
        }
    }

    pub fn branch_dir(&self, rule: Rule, seed: u64) -> PathBuf {
        self.mode_dir().join(rule.to_string()).join(seed.to_string())
    }

    /// Dataset cache: `$COMPOSTRUCT_CACHE`, else `<out>/cache`.
    pub fn cache_dir(&self) -> PathBuf {
        std::env::var_os("COMPOSTRUCT_CACHE")
            .map(PathBuf::from)
            .unwrap_or_else(|| self.out.join("cache"))
    }
}
