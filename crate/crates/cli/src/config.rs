//! The TOML run configuration: strict schema, `--set` overrides, and the
//! translation into core training types.
//!
//! Unknown keys are rejected rather than warned about, so a typo in a
//! hyperparameter name fails the run instead of silently using a default.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use privkd_core::data::{carve, feature_stats, gen_blobs, load_idx, sample, standardize, Dataset};
use privkd_core::nn::optim::OptimConfig;
use privkd_core::privacy::DpConfig;
use privkd_core::trainer::{DataBundle, NetSpec, TrainConfig, TrainMode};
use privkd_core::{adversarial::GanMode, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Blobs,
    Idx,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub source: DataSource,
    pub n: Option<usize>,
    pub classes: Option<usize>,
    pub dim: Option<usize>,
    #[serde(default = "default_spread")]
    pub spread: f64,
    pub images: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub n_private: usize,
    pub n_public: usize,
    pub n_test: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub standardize: bool,
    #[serde(default)]
    pub allow_overlap: bool,
}

fn default_spread() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimName {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeacherSection {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch: usize,
    pub optim: OptimName,
    pub lr: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_checkpoint")]
    pub checkpoint: PathBuf,
}

fn default_checkpoint() -> PathBuf {
    PathBuf::from("teacher.json")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetSection {
    pub hidden: Vec<usize>,
    pub optim: OptimName,
    pub lr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeName {
    Joint,
    KdOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GanModeName {
    Minimax,
    Nonsaturating,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferSection {
    #[serde(default = "default_mode")]
    pub mode: ModeName,
    pub epochs: usize,
    #[serde(default = "default_one")]
    pub d_epochs: usize,
    #[serde(default = "default_one")]
    pub s_epochs: usize,
    pub batch: usize,
    pub tau: f64,
    pub alpha: f64,
    #[serde(default = "default_relax_temp")]
    pub relax_temp: f64,
    #[serde(default = "default_relax_anneal")]
    pub relax_anneal: f64,
    #[serde(default = "default_gan_mode")]
    pub gan_mode: GanModeName,
    #[serde(default = "default_one")]
    pub gan_samples: usize,
    #[serde(default)]
    pub tau_sq_rescale: bool,
    #[serde(default)]
    pub condition_d_on_input: bool,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub per_batch: bool,
}

fn default_mode() -> ModeName {
    ModeName::Joint
}

fn default_one() -> usize {
    1
}

fn default_relax_temp() -> f64 {
    1.0
}

fn default_relax_anneal() -> f64 {
    1.0
}

fn default_gan_mode() -> GanModeName {
    GanModeName::Minimax
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrivacySection {
    pub clip: f64,
    pub noise_multiplier: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    NPub,
    M,
    Alpha,
    Epochs,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub data: DataSection,
    pub teacher: TeacherSection,
    pub student: NetSection,
    pub discriminator: NetSection,
    pub transfer: TransferSection,
    pub privacy: PrivacySection,
    pub output: OutputSection,
    pub sweep: Option<SweepSection>,
}

/// Reads a config file, applies `--set section.key=value` overrides on the
/// raw TOML tree, then deserializes against the strict schema.
pub fn load(path: &Path, overrides: &[String]) -> Result<Config> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
    let mut tree: toml::Value = text
        .parse()
        .map_err(|e| Error::config(format!("cannot parse config {}: {e}", path.display())))?;
    for spec in overrides {
        apply_set(&mut tree, spec)?;
    }
    let cfg: Config = tree
        .try_into()
        .map_err(|e| Error::config(format!("invalid config: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

fn apply_set(root: &mut toml::Value, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::config(format!("--set expects key=value, got `{spec}`")))?;
    let value = parse_override_value(raw);
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::config(format!("--set key `{path}` is malformed")));
    }
    let mut cursor = root;
    for key in &keys[..keys.len() - 1] {
        let table = cursor
            .as_table_mut()
            .ok_or_else(|| Error::config(format!("--set key `{path}` descends into a non-table")))?;
        cursor = table
            .entry(key.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    let table = cursor
        .as_table_mut()
        .ok_or_else(|| Error::config(format!("--set key `{path}` descends into a non-table")))?;
    table.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

/// Parses the right-hand side as a TOML literal (number, bool, array) and
/// falls back to a plain string, so `--set transfer.mode=kd_only` works
/// without quoting.
fn parse_override_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .map(|mut t| t.remove("v").expect("just inserted"))
        .unwrap_or_else(|_| toml::Value::String(raw.to_string()))
}

impl Config {
    pub fn validate(&self) -> Result<()> {
        match self.data.source {
            DataSource::Blobs => {
                for (key, set) in [
                    ("data.n", self.data.n.is_some()),
                    ("data.classes", self.data.classes.is_some()),
                    ("data.dim", self.data.dim.is_some()),
                ] {
                    if !set {
                        return Err(Error::config(format!(
                            "{key} is required when data.source = \"blobs\""
                        )));
                    }
                }
            }
            DataSource::Idx => {
                for (key, set) in [
                    ("data.images", self.data.images.is_some()),
                    ("data.labels", self.data.labels.is_some()),
                ] {
                    if !set {
                        return Err(Error::config(format!(
                            "{key} is required when data.source = \"idx\""
                        )));
                    }
                }
            }
        }
        if self.data.n_private == 0 || self.data.n_test == 0 {
            return Err(Error::config(
                "data.n_private and data.n_test must be at least 1".to_string(),
            ));
        }
        if self.data.n_public == 0 {
            return Err(Error::config(
                "data.n_public must be at least 1; the student trains on the public set"
                    .to_string(),
            ));
        }
        if let Some(sweep) = &self.sweep {
            if sweep.values.is_empty() {
                return Err(Error::config("sweep.values must be nonempty".to_string()));
            }
            if sweep.seeds.is_empty() {
                return Err(Error::config("sweep.seeds must be nonempty".to_string()));
            }
        }
        Ok(())
    }

    /// Materializes the private training set and the public/test bundle.
    /// The public split is unlabeled: the student only ever distills from
    /// teacher outputs on it.
    pub fn build_data(&self) -> Result<(Dataset, DataBundle)> {
        let d = &self.data;
        let full = match d.source {
            DataSource::Blobs => gen_blobs(
                d.n.expect("validated"),
                d.classes.expect("validated"),
                d.dim.expect("validated"),
                d.spread,
                d.seed,
            )?,
            DataSource::Idx => load_idx(
                d.images.as_ref().expect("validated"),
                d.labels.as_ref().expect("validated"),
            )?,
        };
        let (mut private, mut public, mut test) = if d.allow_overlap {
            let parts = carve(&full, &[d.n_private, d.n_test], d.seed)?;
            let mut it = parts.into_iter();
            let private = it.next().expect("two parts");
            let test = it.next().expect("two parts");
            let public = sample(&private, d.n_public, d.seed.wrapping_add(1))?;
            (private, public, test)
        } else {
            let parts = carve(&full, &[d.n_private, d.n_public, d.n_test], d.seed)?;
            let mut it = parts.into_iter();
            (
                it.next().expect("three parts"),
                it.next().expect("three parts"),
                it.next().expect("three parts"),
            )
        };
        if d.standardize {
            let stats = feature_stats(&private)?;
            standardize(&mut private, &stats)?;
            standardize(&mut public, &stats)?;
            standardize(&mut test, &stats)?;
        }
        Ok((
            private,
            DataBundle {
                public: public.without_labels(),
                test,
            },
        ))
    }

    pub fn teacher_optim(&self) -> OptimConfig {
        optim_config(self.teacher.optim, self.teacher.lr)
    }

    /// The resolved training configuration for a public set of `n_public`
    /// examples; the privacy sample rate is always batch over public size.
    pub fn train_config(&self, n_public: usize) -> Result<TrainConfig> {
        let t = &self.transfer;
        let q = t.batch as f64 / n_public as f64;
        Ok(TrainConfig {
            mode: match t.mode {
                ModeName::Joint => TrainMode::Joint,
                ModeName::KdOnly => TrainMode::KdOnly,
            },
            epochs: t.epochs,
            d_epochs: t.d_epochs,
            s_epochs: t.s_epochs,
            batch: t.batch,
            tau: t.tau,
            alpha: t.alpha,
            relax_temp: t.relax_temp,
            relax_anneal: t.relax_anneal,
            gan_mode: match t.gan_mode {
                GanModeName::Minimax => GanMode::Minimax,
                GanModeName::Nonsaturating => GanMode::Nonsaturating,
            },
            gan_samples: t.gan_samples,
            tau_sq_rescale: t.tau_sq_rescale,
            condition_d_on_input: t.condition_d_on_input,
            student: NetSpec {
                hidden: self.student.hidden.clone(),
                optim: optim_config(self.student.optim, self.student.lr),
            },
            discriminator: NetSpec {
                hidden: self.discriminator.hidden.clone(),
                optim: optim_config(self.discriminator.optim, self.discriminator.lr),
            },
            dp: DpConfig::new(
                self.privacy.clip,
                self.privacy.noise_multiplier,
                q,
                n_public,
                self.privacy.delta,
            )?,
            seed: t.seed,
            per_batch: t.per_batch,
        })
    }

    pub fn teacher_path(&self) -> PathBuf {
        if self.teacher.checkpoint.is_absolute() {
            self.teacher.checkpoint.clone()
        } else {
            self.output.dir.join(&self.teacher.checkpoint)
        }
    }

    pub fn out_path(&self, name: &str) -> PathBuf {
        self.output.dir.join(name)
    }
}

fn optim_config(name: OptimName, lr: f64) -> OptimConfig {
    match name {
        OptimName::Sgd => OptimConfig::sgd(lr),
        OptimName::Adam => OptimConfig::adam(lr),
    }
}

const KEY_TABLE: &[(&str, &str, &str, &str)] = &[
    ("data.source", "string", "required", "\"blobs\" (synthetic Gaussian clusters) or \"idx\" (image/label file pair)"),
    ("data.n", "int", "blobs only", "total points to generate before splitting"),
    ("data.classes", "int", "blobs only", "number of cluster labels"),
    ("data.dim", "int", "blobs only", "feature dimension"),
    ("data.spread", "float", "1.0", "cluster standard deviation; centers sit about six spreads apart"),
    ("data.images", "path", "idx only", "big-endian image file, magic 0x00000803"),
    ("data.labels", "path", "idx only", "big-endian label file, magic 0x00000801"),
    ("data.n_private", "int", "required", "examples carved for teacher pretraining"),
    ("data.n_public", "int", "required", "unlabeled examples the student distills on"),
    ("data.n_test", "int", "required", "held-out labeled examples for accuracy reports"),
    ("data.seed", "int", "0", "seed for generation and the split permutation"),
    ("data.standardize", "bool", "false", "standardize all splits with mean/sd fit on the private split"),
    ("data.allow_overlap", "bool", "false", "draw the public split from the private pool instead of disjointly"),
    ("teacher.hidden", "int array", "required", "hidden layer widths"),
    ("teacher.epochs", "int", "required", "pretraining passes over the private split"),
    ("teacher.batch", "int", "required", "pretraining batch size"),
    ("teacher.optim", "string", "required", "\"sgd\" or \"adam\""),
    ("teacher.lr", "float", "required", "pretraining learning rate"),
    ("teacher.seed", "int", "0", "teacher init and batch-order seed"),
    ("teacher.checkpoint", "path", "teacher.json", "checkpoint name, resolved inside output.dir unless absolute"),
    ("student.hidden", "int array", "required", "hidden layer widths"),
    ("student.optim", "string", "required", "\"sgd\" or \"adam\""),
    ("student.lr", "float", "required", "student learning rate"),
    ("discriminator.hidden", "int array", "required", "hidden layer widths"),
    ("discriminator.optim", "string", "required", "\"sgd\" or \"adam\""),
    ("discriminator.lr", "float", "required", "discriminator learning rate"),
    ("transfer.mode", "string", "joint", "\"joint\" (distillation plus adversary) or \"kd_only\""),
    ("transfer.epochs", "int", "required", "outer rounds; each runs d_epochs then s_epochs passes"),
    ("transfer.d_epochs", "int", "1", "discriminator passes per round"),
    ("transfer.s_epochs", "int", "1", "student passes per round"),
    ("transfer.batch", "int", "required", "public batch size; sets the accounted sample rate batch/n_public"),
    ("transfer.tau", "float", "required", "distillation temperature"),
    ("transfer.alpha", "float", "required", "weight on the sanitized distillation loss, in [0, 1]"),
    ("transfer.relax_temp", "float", "1.0", "Gumbel-softmax relaxation temperature"),
    ("transfer.relax_anneal", "float", "1.0", "multiplier applied to relax_temp each round, in (0, 1]"),
    ("transfer.gan_mode", "string", "minimax", "\"minimax\" or \"nonsaturating\" student objective"),
    ("transfer.gan_samples", "int", "1", "relaxed samples per example in the student's adversarial loss"),
    ("transfer.tau_sq_rescale", "bool", "false", "multiply the distillation loss by tau^2"),
    ("transfer.condition_d_on_input", "bool", "false", "append the input features to the discriminator's input"),
    ("transfer.seed", "int", "0", "transfer-run seed: student and discriminator init plus all draws"),
    ("transfer.per_batch", "bool", "false", "also write batches.csv with per-batch losses"),
    ("privacy.clip", "float", "required", "L2 bound per per-example loss vector"),
    ("privacy.noise_multiplier", "float", "required", "sigma / clip for the Gaussian release"),
    ("privacy.delta", "float", "required", "failure probability for the reported (epsilon, delta)"),
    ("output.dir", "path", "required", "directory all artifacts are written into"),
    ("sweep.axis", "string", "sweep only", "one of \"n_pub\", \"m\", \"alpha\", \"epochs\""),
    ("sweep.values", "float array", "sweep only", "axis values, one cell each"),
    ("sweep.seeds", "int array", "sweep only", "transfer seeds run per cell"),
];

/// The config key reference, rendered from one table so `privkd keys`
/// always matches what the schema accepts.
pub fn key_reference() -> String {
    let mut out = String::from(
        "Config keys (TOML). Unknown keys are errors. Any key can be\noverridden with --set key=value.\n\n",
    );
    for (key, ty, default, what) in KEY_TABLE {
        out.push_str(&format!("{key:<34} {ty:<12} {default:<14} {what}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn minimal_toml() -> String {
        r#"
[data]
source = "blobs"
n = 60
classes = 3
dim = 4
n_private = 30
n_public = 20
n_test = 10

[teacher]
hidden = [8]
epochs = 2
batch = 10
optim = "adam"
lr = 1e-2

[student]
hidden = [6]
optim = "adam"
lr = 1e-3

[discriminator]
hidden = [6]
optim = "adam"
lr = 1e-3

[transfer]
epochs = 2
batch = 5
tau = 2.0
alpha = 0.75

[privacy]
clip = 1.0
noise_multiplier = 1.1
delta = 1e-5

[output]
dir = "out"
"#
        .to_string()
    }

    fn write_config(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn minimal_config_round_trips_with_defaults() {
        let f = write_config(&minimal_toml());
        let cfg = load(f.path(), &[]).unwrap();
        assert_eq!(cfg.transfer.mode, ModeName::Joint);
        assert_eq!(cfg.transfer.d_epochs, 1);
        assert_eq!(cfg.transfer.gan_samples, 1);
        assert_eq!(cfg.data.spread, 1.0);
        assert!(!cfg.transfer.per_batch);
        let tc = cfg.train_config(20).unwrap();
        assert_eq!(tc.batch, 5);
        assert!((tc.dp.sample_rate - 0.25).abs() < 1e-15);
    }

    #[test]
    fn unknown_keys_are_rejected_with_their_name() {
        let text = minimal_toml().replace("tau = 2.0", "tau = 2.0\ntemperture = 3.0");
        let f = write_config(&text);
        let err = load(f.path(), &[]).unwrap_err().to_string();
        assert!(err.contains("temperture"), "message was: {err}");
    }

    #[test]
    fn overrides_rewrite_numbers_strings_and_arrays() {
        let f = write_config(&minimal_toml());
        let cfg = load(
            f.path(),
            &[
                "transfer.alpha=0.5".to_string(),
                "transfer.mode=kd_only".to_string(),
                "student.hidden=[12, 4]".to_string(),
                "privacy.delta=1e-6".to_string(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.transfer.alpha, 0.5);
        assert_eq!(cfg.transfer.mode, ModeName::KdOnly);
        assert_eq!(cfg.student.hidden, vec![12, 4]);
        assert_eq!(cfg.privacy.delta, 1e-6);
    }

    #[test]
    fn override_with_bad_shape_is_a_config_error() {
        let f = write_config(&minimal_toml());
        assert!(load(f.path(), &["transfer.alpha".to_string()]).is_err());
        assert!(load(f.path(), &["transfer.alpha=not_a_number".to_string()]).is_err());
    }

    #[test]
    fn idx_source_requires_both_paths() {
        let text = minimal_toml().replace("source = \"blobs\"", "source = \"idx\"");
        let f = write_config(&text);
        let err = load(f.path(), &[]).unwrap_err().to_string();
        assert!(err.contains("data.images"), "message was: {err}");
    }

    #[test]
    fn blob_configs_name_the_missing_key() {
        let text = minimal_toml().replace("dim = 4\n", "");
        let f = write_config(&text);
        let err = load(f.path(), &[]).unwrap_err().to_string();
        assert!(err.contains("data.dim"), "message was: {err}");
    }

    #[test]
    fn data_splits_are_disjoint_and_sized_as_asked() {
        let f = write_config(&minimal_toml());
        let cfg = load(f.path(), &[]).unwrap();
        let (private, bundle) = cfg.build_data().unwrap();
        assert_eq!(private.len(), 30);
        assert_eq!(bundle.public.len(), 20);
        assert_eq!(bundle.test.len(), 10);
        assert!(bundle.public.labels().is_none());
        assert!(bundle.test.labels().is_some());
        assert!(private.labels().is_some());
    }

    #[test]
    fn overlap_flag_draws_public_from_the_private_pool() {
        let text = minimal_toml().replace("n_public = 20", "n_public = 25\nallow_overlap = true");
        let f = write_config(&text);
        let cfg = load(f.path(), &[]).unwrap();
        let (private, bundle) = cfg.build_data().unwrap();
        assert_eq!(private.len(), 30);
        assert_eq!(bundle.public.len(), 25);
    }
}
