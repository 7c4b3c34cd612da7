//! Run configuration: a preset overlaid with a flat `key = value` file.
//!
//! ```text
//! # comment
//! seed = 7
//! cohort.n_per_cell = 100
//! cohort.skin_types = I, II, III, IV, V, VI, unknown
//! sampler.guidance_scale = 10
//! classifier.planted.kind = oracle
//! classifier.planted.attribute = skin_type
//! classifier.planted.accuracy = I:0.95, II:0.9, *:0.7
//! ```
//!
//! Unknown keys are errors. If the file names any classifier, the preset's
//! classifiers are dropped.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Duration;

use sha2::{Digest, Sha256};

use crate::adapters::{
    planted_oracle, ClassifierHandle, ClassifierKind, ExternalCommand, DEFAULT_TIMEOUT,
};
use crate::cohort::{derive_stream, Attribute, AttributeVocabulary, CohortSpec, DEFAULT_ROW_CAP};
use crate::flowgen::{SamplerConfig, TrainConfig};
use crate::lesionworld::WorldParams;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Preset {
    /// Desk-scale training budget; finishes in minutes on one core.
    #[default]
    Desk,
    /// Full training budget (80,000 steps at batch 1024).
    Full,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Preset::Desk),
            "full" => Ok(Preset::Full),
            other => Err(Error::Config(format!(
                "unknown preset `{other}` (desk or full)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AccuracyTable {
    /// Per surface value, with an optional fallback for unlisted values.
    Values {
        entries: BTreeMap<String, f64>,
        fallback: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum ClassifierSpec {
    Oracle {
        attribute: String,
        accuracy: AccuracyTable,
    },
    External {
        command: String,
        workdir: Option<PathBuf>,
        timeout: Duration,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditConfig {
    pub seed: u64,
    pub output: PathBuf,
    pub world: WorldParams,
    pub cohort: CohortSpec,
    pub max_rows: u64,
    pub train: TrainConfig,
    pub hidden: Vec<usize>,
    /// Ground-truth renders per grid cell used to train the generator.
    pub samples_per_cell: u32,
    pub sampler: SamplerConfig,
    /// Ordered by name.
    pub classifiers: BTreeMap<String, ClassifierSpec>,
}

/// Preset planted skin-type oracle: accuracy 0.95 for type I falling by 0.05
/// per type to 0.65 for `unknown`. Rebuilt over the configured skin types
/// when a config defines no classifiers.
pub const PLANTED_SKIN_ORACLE: &str = "planted-skin";

impl AuditConfig {
    pub fn preset(preset: Preset) -> AuditConfig {
        let vocab = AttributeVocabulary::default();
        let classifiers = planted_skin_classifiers(&vocab);
        let (train_steps, batch_size) = match preset {
            Preset::Desk => (20_000, 128),
            Preset::Full => (80_000, 1024),
        };
        AuditConfig {
            seed: 0,
            output: PathBuf::from("out"),
            world: WorldParams::default(),
            cohort: CohortSpec {
                vocabulary: vocab,
                n_per_cell: 100,
                master_seed: 0,
            },
            max_rows: DEFAULT_ROW_CAP,
            train: TrainConfig {
                train_steps,
                batch_size,
                ..TrainConfig::default()
            },
            hidden: vec![64, 64],
            samples_per_cell: 50,
            sampler: SamplerConfig::default(),
            classifiers,
        }
    }

    /// Applies `text` on top of `preset`, then derives the seeds.
    pub fn parse(text: &str, preset: Preset) -> Result<AuditConfig> {
        let mut cfg = AuditConfig::preset(preset);
        let mut classifier_keys: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        let mut seen = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let at = |msg: String| Error::Config(format!("line {}: {msg}", lineno + 1));
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| at(format!("expected `key = value`, got {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            if let Some(prev) = seen.insert(key.to_string(), lineno + 1) {
                return Err(at(format!("`{key}` already set on line {prev}")));
            }
            if let Some(rest) = key.strip_prefix("classifier.") {
                let (name, field) = rest.rsplit_once('.').ok_or_else(|| {
                    at(format!("expected classifier.<name>.<field>, got `{key}`"))
                })?;
                if name.is_empty()
                    || !name
                        .chars()
                        .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
                {
                    return Err(at(format!(
                        "classifier name `{name}` must be [A-Za-z0-9_-]+"
                    )));
                }
                classifier_keys
                    .entry(name.to_string())
                    .or_default()
                    .insert(field.to_string(), value.to_string());
                continue;
            }
            cfg.set(key, value).map_err(|e| at(e.to_string()))?;
        }
        if classifier_keys.is_empty() {
            cfg.classifiers = planted_skin_classifiers(&cfg.cohort.vocabulary);
        } else {
            cfg.classifiers.clear();
            for (name, fields) in classifier_keys {
                cfg.classifiers
                    .insert(name.clone(), classifier_from_fields(&name, fields)?);
            }
        }
        cfg.cohort.master_seed = cfg.seed;
        cfg.train.seed = derive_stream(cfg.seed, "train");
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let vocab = &mut self.cohort.vocabulary;
        match key {
            "seed" => self.seed = num(key, value)?,
            "output" => self.output = PathBuf::from(value),
            "world.image_side" => self.world.image_side = num(key, value)?,
            "world.background_base" => self.world.background_base = num(key, value)?,
            "world.skin_step" => self.world.skin_step = num(key, value)?,
            "world.radius_base" => self.world.radius_base = num(key, value)?,
            "world.age_step" => self.world.age_step = num(key, value)?,
            "world.lesion_contrast" => {
                self.world.lesion_contrast = list(value)
                    .iter()
                    .map(|v| num(key, v))
                    .collect::<Result<_>>()?
            }
            "world.pixel_noise_sigma" => self.world.pixel_noise_sigma = num(key, value)?,
            "cohort.sexes" => vocab.sexes = list(value),
            "cohort.age_bands" => vocab.age_bands = list(value),
            "cohort.skin_types" => vocab.skin_types = list(value),
            "cohort.sizes" => vocab.sizes = list(value),
            "cohort.diagnoses" => vocab.diagnoses = list(value),
            "cohort.n_per_cell" => self.cohort.n_per_cell = num(key, value)?,
            "cohort.max_rows" => self.max_rows = num(key, value)?,
            "train.steps" => self.train.train_steps = num(key, value)?,
            "train.batch_size" => self.train.batch_size = num(key, value)?,
            "train.learning_rate" => self.train.learning_rate = num(key, value)?,
            "train.weight_decay" => self.train.weight_decay = num(key, value)?,
            "train.condition_dropout" => {
                self.train.condition_dropout_probability = num(key, value)?
            }
            "train.hidden" => {
                self.hidden = list(value)
                    .iter()
                    .map(|v| num(key, v))
                    .collect::<Result<_>>()?
            }
            "train.samples_per_cell" => self.samples_per_cell = num(key, value)?,
            "sampler.steps" => self.sampler.steps = num(key, value)?,
            "sampler.guidance_scale" => self.sampler.guidance_scale = num(key, value)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.cohort.vocabulary.validate()?;
        if self.cohort.n_per_cell == 0 {
            return Err(Error::Config("cohort.n_per_cell must be at least 1".into()));
        }
        if self.samples_per_cell == 0 {
            return Err(Error::Config(
                "train.samples_per_cell must be at least 1".into(),
            ));
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::Config("train.hidden widths must be positive".into()));
        }
        let as_config = |e: Error| match e {
            Error::Input(m) => Error::Config(m),
            other => other,
        };
        self.train.validate().map_err(as_config)?;
        self.sampler.validate().map_err(as_config)?;
        crate::lesionworld::World::new(self.world.clone(), &self.cohort.vocabulary)?;
        self.classifier_handles().map(|_| ())
    }

    /// Handles for every configured classifier, in name order. Oracle seeds
    /// are `derive_stream(seed, "classifier:<name>")`.
    pub fn classifier_handles(&self) -> Result<Vec<ClassifierHandle>> {
        let vocab = &self.cohort.vocabulary;
        self.classifiers
            .iter()
            .map(|(name, spec)| match spec {
                ClassifierSpec::Oracle {
                    attribute,
                    accuracy,
                } => {
                    let attr = Attribute::from_name(attribute)
                        .map_err(|e| Error::Config(e.to_string()))?;
                    let AccuracyTable::Values { entries, fallback } = accuracy;
                    let mut table = BTreeMap::new();
                    for v in vocab.values(attr) {
                        if let Some(a) = entries.get(v).copied().or(*fallback) {
                            table.insert(v.clone(), a);
                        }
                    }
                    if let Some(extra) = entries.keys().find(|k| !vocab.values(attr).contains(k)) {
                        return Err(Error::Config(format!(
                            "classifier `{name}`: `{extra}` is not a {attr} value"
                        )));
                    }
                    planted_oracle(
                        name,
                        attribute,
                        &table,
                        vocab,
                        derive_stream(self.seed, &format!("classifier:{name}")),
                    )
                }
                ClassifierSpec::External {
                    command,
                    workdir,
                    timeout,
                } => Ok(ClassifierHandle {
                    name: name.clone(),
                    kind: ClassifierKind::External(ExternalCommand {
                        command: command.clone(),
                        workdir: workdir.clone(),
                        timeout: *timeout,
                    }),
                }),
            })
            .collect()
    }

    /// Every setting except `output`, one `key = value` per line, sorted by
    /// key. Embedded in artifacts; two runs with equal echoes are the same run.
    pub fn canonical_echo(&self) -> String {
        let mut kv: BTreeMap<String, String> = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            kv.insert(k.to_string(), v);
        };
        let join = |xs: &[String]| xs.join(", ");
        let joinf = |xs: &[f64]| {
            xs.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(", ")
        };
        let v = &self.cohort.vocabulary;
        put("seed", self.seed.to_string());
        put("world.image_side", self.world.image_side.to_string());
        put(
            "world.background_base",
            self.world.background_base.to_string(),
        );
        put("world.skin_step", self.world.skin_step.to_string());
        put("world.radius_base", self.world.radius_base.to_string());
        put("world.age_step", self.world.age_step.to_string());
        put("world.lesion_contrast", joinf(&self.world.lesion_contrast));
        put(
            "world.pixel_noise_sigma",
            self.world.pixel_noise_sigma.to_string(),
        );
        put("cohort.sexes", join(&v.sexes));
        put("cohort.age_bands", join(&v.age_bands));
        put("cohort.skin_types", join(&v.skin_types));
        put("cohort.sizes", join(&v.sizes));
        put("cohort.diagnoses", join(&v.diagnoses));
        put("cohort.n_per_cell", self.cohort.n_per_cell.to_string());
        put("cohort.max_rows", self.max_rows.to_string());
        put("train.steps", self.train.train_steps.to_string());
        put("train.batch_size", self.train.batch_size.to_string());
        put("train.learning_rate", self.train.learning_rate.to_string());
        put("train.weight_decay", self.train.weight_decay.to_string());
        put(
            "train.condition_dropout",
            self.train.condition_dropout_probability.to_string(),
        );
        put(
            "train.hidden",
            self.hidden
                .iter()
                .map(|h| h.to_string())
                .collect::<Vec<_>>()
                .join(", "),
        );
        put("train.samples_per_cell", self.samples_per_cell.to_string());
        put("sampler.steps", self.sampler.steps.to_string());
        put(
            "sampler.guidance_scale",
            self.sampler.guidance_scale.to_string(),
        );
        for (name, spec) in &self.classifiers {
            let k = |f: &str| format!("classifier.{name}.{f}");
            match spec {
                ClassifierSpec::Oracle {
                    attribute,
                    accuracy,
                } => {
                    kv.insert(k("kind"), "oracle".into());
                    kv.insert(k("attribute"), attribute.clone());
                    let AccuracyTable::Values { entries, fallback } = accuracy;
                    let mut parts: Vec<String> =
                        entries.iter().map(|(v, a)| format!("{v}:{a}")).collect();
                    if let Some(f) = fallback {
                        parts.push(format!("*:{f}"));
                    }
                    kv.insert(k("accuracy"), parts.join(", "));
                }
                ClassifierSpec::External {
                    command,
                    workdir,
                    timeout,
                } => {
                    kv.insert(k("kind"), "external".into());
                    kv.insert(k("command"), command.clone());
                    if let Some(w) = workdir {
                        kv.insert(k("workdir"), w.display().to_string());
                    }
                    kv.insert(k("timeout"), timeout.as_secs_f64().to_string());
                }
            }
        }
        kv.into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// SHA-256 of [`canonical_echo`](Self::canonical_echo), lowercase hex.
    pub fn config_hash(&self) -> String {
        hex(&Sha256::digest(self.canonical_echo().as_bytes()))
    }

    /// Cohort used to render the generator's training images. Its seed is
    /// derived separately so training noise never reuses a manifest row's seed.
    pub fn training_cohort(&self) -> CohortSpec {
        CohortSpec {
            vocabulary: self.cohort.vocabulary.clone(),
            n_per_cell: self.samples_per_cell,
            master_seed: derive_stream(self.seed, "world"),
        }
    }

    pub fn init_seed(&self) -> u64 {
        derive_stream(self.seed, "init")
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

/// The preset classifier set: the planted skin-type oracle over the given
/// skin types, 0.95 for the first and 0.05 less per type, floored at 0.
fn planted_skin_classifiers(vocab: &AttributeVocabulary) -> BTreeMap<String, ClassifierSpec> {
    let entries = vocab
        .skin_types
        .iter()
        .enumerate()
        .map(|(i, v)| (v.clone(), round4((0.95 - 0.05 * i as f64).max(0.0))))
        .collect();
    BTreeMap::from([(
        PLANTED_SKIN_ORACLE.to_string(),
        ClassifierSpec::Oracle {
            attribute: "skin_type".into(),
            accuracy: AccuracyTable::Values {
                entries,
                fallback: None,
            },
        },
    )])
}

fn list(value: &str) -> Vec<String> {
    value
        .split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect()
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse {value:?}")))
}

fn classifier_from_fields(
    name: &str,
    mut fields: BTreeMap<String, String>,
) -> Result<ClassifierSpec> {
    let err = |m: String| Error::Config(format!("classifier `{name}`: {m}"));
    let kind = fields
        .remove("kind")
        .ok_or_else(|| err("missing `kind`".into()))?;
    let spec = match kind.as_str() {
        "oracle" => {
            let attribute = fields
                .remove("attribute")
                .ok_or_else(|| err("missing `attribute`".into()))?;
            let raw = fields
                .remove("accuracy")
                .ok_or_else(|| err("missing `accuracy`".into()))?;
            let mut entries = BTreeMap::new();
            let mut fallback = None;
            for part in list(&raw) {
                let (v, a) = part
                    .rsplit_once(':')
                    .ok_or_else(|| err(format!("accuracy entry `{part}` is not value:accuracy")))?;
                let a: f64 = a
                    .trim()
                    .parse()
                    .map_err(|_| err(format!("accuracy `{a}` is not a number")))?;
                match v.trim() {
                    "*" => fallback = Some(a),
                    v => {
                        entries.insert(v.to_string(), a);
                    }
                }
            }
            ClassifierSpec::Oracle {
                attribute,
                accuracy: AccuracyTable::Values { entries, fallback },
            }
        }
        "external" => {
            let command = fields
                .remove("command")
                .ok_or_else(|| err("missing `command`".into()))?;
            let workdir = fields.remove("workdir").map(PathBuf::from);
            let timeout = match fields.remove("timeout") {
                Some(t) => {
                    let secs: f64 = t
                        .parse()
                        .map_err(|_| err(format!("timeout `{t}` is not a number")))?;
                    if !(secs > 0.0 && secs.is_finite()) {
                        return Err(err(format!("timeout {secs} must be positive")));
                    }
                    Duration::from_secs_f64(secs)
                }
                None => DEFAULT_TIMEOUT,
            };
            ClassifierSpec::External {
                command,
                workdir,
                timeout,
            }
        }
        other => return Err(err(format!("unknown kind `{other}` (oracle or external)"))),
    };
    if let Some(extra) = fields.keys().next() {
        return Err(err(format!("unknown key `{extra}` for kind `{kind}`")));
    }
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_preset() {
        let cfg = AuditConfig::parse("", Preset::Desk).unwrap();
        assert_eq!(cfg.cohort.total_rows(), 11_200);
        assert_eq!(cfg.train.train_steps, 20_000);
        assert_eq!(cfg.sampler, SamplerConfig::default());
        assert_eq!(cfg.classifiers.len(), 1);
        let full = AuditConfig::parse("", Preset::Full).unwrap();
        assert_eq!(
            (full.train.train_steps, full.train.batch_size),
            (80_000, 1024)
        );
    }

    #[test]
    fn keys_override_and_unknown_keys_fail() {
        let cfg = AuditConfig::parse(
            "# tiny\nseed = 9\ncohort.sexes = f\ncohort.age_bands = 30, 40\ncohort.skin_types = I,II,III,IV,V,VI,unknown\ncohort.n_per_cell=3\n",
            Preset::Desk,
        )
        .unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.cohort.master_seed, 9);
        assert_eq!(cfg.cohort.total_rows(), 2 * 7 * 3);
        assert!(matches!(
            AuditConfig::parse("colour = red", Preset::Desk),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            AuditConfig::parse("seed = x", Preset::Desk),
            Err(Error::Config(_))
        ));
        assert!(AuditConfig::parse("seed = 1\nseed = 2", Preset::Desk).is_err());
        assert!(AuditConfig::parse("just words", Preset::Desk).is_err());
    }

    #[test]
    fn invalid_vocabulary_is_reported() {
        let err = AuditConfig::parse("cohort.sexes = male, male", Preset::Desk).unwrap_err();
        assert!(matches!(err, Error::Vocabulary(_)), "{err:?}");
    }

    #[test]
    fn classifier_blocks_replace_preset_classifiers() {
        let text = "classifier.a.kind = oracle\nclassifier.a.attribute = sex\nclassifier.a.accuracy = male:0.9, *:0.5\n\
                    classifier.b.kind = external\nclassifier.b.command = ./run.sh --fast\nclassifier.b.timeout = 3\n";
        let cfg = AuditConfig::parse(text, Preset::Desk).unwrap();
        assert_eq!(cfg.classifiers.keys().collect::<Vec<_>>(), ["a", "b"]);
        let handles = cfg.classifier_handles().unwrap();
        match &handles[0].kind {
            ClassifierKind::Oracle(o) => assert_eq!(o.accuracy, vec![0.9, 0.5]),
            _ => panic!(),
        }
        match &handles[1].kind {
            ClassifierKind::External(e) => {
                assert_eq!(e.command, "./run.sh --fast");
                assert_eq!(e.timeout, Duration::from_secs(3));
            }
            _ => panic!(),
        }
        assert!(AuditConfig::parse("classifier.a.kind = oracle\nclassifier.a.attribute = sex\nclassifier.a.accuracy = male:0.9", Preset::Desk).is_err());
        assert!(AuditConfig::parse("classifier.a.kind = magic", Preset::Desk).is_err());
        assert!(AuditConfig::parse(
            "classifier.a.kind = external\nclassifier.a.command = x\nclassifier.a.colour = 1",
            Preset::Desk
        )
        .is_err());
    }

    #[test]
    fn echo_is_sorted_complete_and_ignores_output() {
        let a = AuditConfig::parse("output = /tmp/a", Preset::Desk).unwrap();
        let b = AuditConfig::parse("output = /tmp/b", Preset::Desk).unwrap();
        assert_eq!(a.canonical_echo(), b.canonical_echo());
        assert_eq!(a.config_hash(), b.config_hash());
        let echo = a.canonical_echo();
        let keys: Vec<&str> = echo
            .lines()
            .map(|l| l.split(" = ").next().unwrap())
            .collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
        assert!(echo.contains("classifier.planted-skin.accuracy = I:0.95, II:0.9, III:0.85, IV:0.8, V:0.75, VI:0.7, unknown:0.65\n"));
        // the echo parses back to the same configuration
        let again = AuditConfig::parse(&echo, Preset::Full).unwrap();
        assert_eq!(again.canonical_echo(), echo);
        let c = AuditConfig::parse("seed = 1", Preset::Desk).unwrap();
        assert_ne!(c.config_hash(), a.config_hash());
    }

    #[test]
    fn derived_seeds_are_distinct_streams() {
        let cfg = AuditConfig::parse("seed = 5", Preset::Desk).unwrap();
        let seeds = [
            cfg.cohort.master_seed,
            cfg.train.seed,
            cfg.training_cohort().master_seed,
            cfg.init_seed(),
        ];
        for i in 0..4 {
            for j in i + 1..4 {
                assert_ne!(seeds[i], seeds[j]);
            }
        }
    }
}
