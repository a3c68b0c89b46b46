//! Run configuration.
//!
//! Grammar: one `key = value` per line; `#` starts a comment; blank lines
//! are ignored; later lines override earlier ones. Lists are
//! comma-separated. Command-line values override the file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use zbcnn::data::synth::SYNTH_CLASSES;
use zbcnn::data::AugmentConfig;
use zbcnn::model::ModelSpec;
use zbcnn::train::{InitConfig, SgdConfig, SigmaScale, TrainConfig};
use zbcnn::{Error, Result};

/// Every key with its default, in snapshot order.
const DEFAULTS: &[(&str, &str)] = &[
    ("seed", "0"),
    ("threads", "1"),
    ("out", "run"),
    ("weights", ""),
    // data
    ("manifest", ""),
    ("image_root", ""),
    ("classes", ""),
    ("synth_subjects", "60"),
    ("synth_per_subject", "25"),
    ("fau_names", "auto"),
    // model
    ("conv_filters", "64,128,256"),
    ("kernel", "5"),
    ("hidden", "300"),
    ("dropout", "0.5"),
    ("init_scale", "sqrt_fan_in"),
    ("init_k_min", "0.2"),
    ("init_k_max", "1.2"),
    ("init_calibrate", "1.0"),
    // optimizer and schedule
    ("learning_rate", "0.01"),
    ("momentum", "0.9"),
    ("weight_decay", "1e-5"),
    ("batch_size", "64"),
    ("epochs", "150"),
    // augmentation
    ("augment", "true"),
    ("aug_translate_px", "5"),
    ("aug_rotate_deg", "10"),
    ("aug_scale_min", "0.9"),
    ("aug_scale_max", "1.1"),
    ("aug_flip_prob", "0.5"),
    ("aug_gain_min", "0.8"),
    ("aug_gain_max", "1.2"),
    ("aug_bias_min", "-0.1"),
    ("aug_bias_max", "0.1"),
    // protocol
    ("protocol", "holdout"),
    ("holdout_folds", "5"),
    ("cv_folds", "10"),
    // introspection and analysis
    ("layer", "3"),
    ("filters", "auto:10"),
    ("topn", "10"),
    ("mode", "guided"),
    ("overlay", "reconstruction"),
    ("bins", "32"),
    ("min_support", "5"),
    ("split", "train"),
];

#[derive(Clone, Debug, PartialEq)]
pub struct RawConfig {
    values: BTreeMap<String, String>,
}

fn usage(msg: String) -> Error {
    Error::Usage(msg)
}

impl RawConfig {
    pub fn defaults() -> Self {
        RawConfig { values: DEFAULTS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect() }
    }

    pub fn parse_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| usage(format!("{origin}:{}: expected `key = value`, got {line:?}", n + 1)))?;
            self.set(k.trim(), v.trim()).map_err(|e| usage(format!("{origin}:{}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn load_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.parse_text(&text, &path.display().to_string())
    }

    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.to_string();
                Ok(())
            }
            None => Err(format!("unknown config key {key:?}")),
        }
    }

    /// Applies a `key=value` override.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair.split_once('=').ok_or_else(|| usage(format!("--set expects key=value, got {pair:?}")))?;
        self.set(k.trim(), v.trim()).map_err(usage)
    }

    pub fn get(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).expect("known key")
    }

    fn num<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        self.get(key).parse().map_err(|_| usage(format!("{key} = {:?} is not a valid number", self.get(key))))
    }

    fn flag(&self, key: &str) -> Result<bool> {
        match self.get(key) {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            v => Err(usage(format!("{key} = {v:?} is not a boolean"))),
        }
    }

    fn list(&self, key: &str) -> Vec<String> {
        self.get(key).split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect()
    }

    /// Every key in the grammar above, in the default order.
    pub fn snapshot(&self) -> String {
        let mut s = String::from("# resolved configuration\n");
        for (k, _) in DEFAULTS {
            s.push_str(&format!("{k} = {}\n", self.get(k)));
        }
        s
    }

    /// FNV-1a of the snapshot text.
    pub fn hash(&self) -> u64 {
        self.snapshot().bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
    }

    pub fn resolve(&self) -> Result<RunConfig> {
        let filters: Vec<usize> = self
            .list("conv_filters")
            .iter()
            .map(|s| s.parse().map_err(|_| usage(format!("conv_filters entry {s:?} is not an integer"))))
            .collect::<Result<_>>()?;
        let filters: [usize; 3] =
            filters.try_into().map_err(|_| usage("conv_filters needs exactly three widths".into()))?;
        let scale = SigmaScale::parse(self.get("init_scale"))
            .ok_or_else(|| usage(format!("init_scale must be fan_in or sqrt_fan_in, got {:?}", self.get("init_scale"))))?;
        let calibrate = match self.get("init_calibrate") {
            "none" => None,
            _ => Some(self.num("init_calibrate")?),
        };
        let augment = AugmentConfig {
            translate_px: self.num("aug_translate_px")?,
            rotate_deg: self.num("aug_rotate_deg")?,
            scale_range: [self.num("aug_scale_min")?, self.num("aug_scale_max")?],
            flip_prob: self.num("aug_flip_prob")?,
            intensity_gain: [self.num("aug_gain_min")?, self.num("aug_gain_max")?],
            intensity_bias: [self.num("aug_bias_min")?, self.num("aug_bias_max")?],
        };
        augment.validate().map_err(usage)?;
        let dropout: f64 = self.num("dropout")?;
        zbcnn::layers::check_rate(dropout)?;
        let manifest = self.get("manifest");
        let classes = self.list("classes");
        let classes = if classes.is_empty() {
            if !manifest.is_empty() {
                return Err(usage("a manifest needs an explicit `classes` list".into()));
            }
            SYNTH_CLASSES.iter().map(|s| s.to_string()).collect()
        } else {
            classes
        };
        let data = if manifest.is_empty() {
            DataSource::Synth { subjects: self.num("synth_subjects")?, per_subject: self.num("synth_per_subject")? }
        } else {
            let manifest = PathBuf::from(manifest);
            let root = match self.get("image_root") {
                "" => manifest.parent().map(Path::to_path_buf).unwrap_or_default(),
                r => PathBuf::from(r),
            };
            DataSource::Manifest { manifest, image_root: root }
        };
        let synthetic_names = match self.get("fau_names") {
            "auto" => matches!(data, DataSource::Synth { .. }),
            "synthetic" => true,
            "numeric" => false,
            v => return Err(usage(format!("fau_names must be auto, synthetic or numeric, got {v:?}"))),
        };
        let protocol = match self.get("protocol") {
            "holdout" => Protocol::Holdout,
            "ck_plus_10fold" => Protocol::SubjectFolds,
            "tfd_5fold" => Protocol::ManifestFolds,
            "none" => Protocol::All,
            v => return Err(usage(format!("protocol must be holdout, ck_plus_10fold, tfd_5fold or none, got {v:?}"))),
        };
        let split = match self.get("split") {
            "train" => false,
            "all" => true,
            v => return Err(usage(format!("split must be train or all, got {v:?}"))),
        };
        let n_classes = classes.len();
        Ok(RunConfig {
            seed: self.num("seed")?,
            out: PathBuf::from(self.get("out")),
            data,
            classes,
            synthetic_names,
            spec: ModelSpec::with_widths(
                [1, zbcnn::data::IMAGE_SIDE, zbcnn::data::IMAGE_SIDE],
                filters,
                self.num("kernel")?,
                self.num("hidden")?,
                n_classes,
                dropout,
            ),
            init: InitConfig { k_range: [self.num("init_k_min")?, self.num("init_k_max")?], scale, calibrate },
            train: TrainConfig {
                sgd: SgdConfig {
                    learning_rate: self.num("learning_rate")?,
                    momentum: self.num("momentum")?,
                    weight_decay: self.num("weight_decay")?,
                    batch_size: self.num("batch_size")?,
                },
                epochs: self.num("epochs")?,
                augment: self.flag("augment")?.then_some(augment),
                threads: self.num::<usize>("threads")?.max(1),
            },
            protocol,
            holdout_folds: self.num("holdout_folds")?,
            cv_folds: self.num("cv_folds")?,
            layer: self.num("layer")?,
            filters: FilterSelect::parse(self.get("filters"))?,
            topn: self.num("topn")?,
            mode: zbcnn::introspect::ReconMode::parse(self.get("mode"))
                .ok_or_else(|| usage(format!("mode must be plain or guided, got {:?}", self.get("mode"))))?,
            overlay: zbcnn::introspect::Overlay::parse(self.get("overlay")).ok_or_else(|| {
                usage(format!("overlay must be reconstruction, input or blend, got {:?}", self.get("overlay")))
            })?,
            bins: self.num("bins")?,
            min_support: self.num("min_support")?,
            all_samples: split,
            weights: match self.get("weights") {
                "" => None,
                w => Some(PathBuf::from(w)),
            },
            hash: self.hash(),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Synth { subjects: usize, per_subject: usize },
    Manifest { manifest: PathBuf, image_root: PathBuf },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Protocol {
    /// Subject-independent holdout: one of `holdout_folds` folds is tested.
    Holdout,
    /// Rotating subject-independent k-fold.
    SubjectFolds,
    /// Folds and roles from the manifest.
    ManifestFolds,
    /// Train on every sample.
    All,
}

#[derive(Clone, Debug, PartialEq)]
pub enum FilterSelect {
    List(Vec<usize>),
    /// The `k` most class-selective filters.
    Auto(usize),
    All,
}

impl FilterSelect {
    pub fn parse(s: &str) -> Result<Self> {
        if s == "all" {
            return Ok(FilterSelect::All);
        }
        if let Some(k) = s.strip_prefix("auto:") {
            return k.parse().map(FilterSelect::Auto).map_err(|_| usage(format!("bad filter selection {s:?}")));
        }
        s.split(',')
            .map(|t| t.trim().parse().map_err(|_| usage(format!("bad filter index {t:?}"))))
            .collect::<Result<Vec<_>>>()
            .map(FilterSelect::List)
    }
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub data: DataSource,
    pub classes: Vec<String>,
    pub synthetic_names: bool,
    pub spec: ModelSpec,
    pub init: InitConfig,
    pub train: TrainConfig,
    pub protocol: Protocol,
    pub holdout_folds: usize,
    pub cv_folds: usize,
    pub layer: usize,
    pub filters: FilterSelect,
    pub topn: usize,
    pub mode: zbcnn::introspect::ReconMode,
    pub overlay: zbcnn::introspect::Overlay,
    pub bins: usize,
    pub min_support: usize,
    pub all_samples: bool,
    pub weights: Option<PathBuf>,
    pub hash: u64,
}
