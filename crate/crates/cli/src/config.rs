use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ecgstate::model::{CCEConfig, ModelConfig, TEConfig};
use ecgstate::training::TrainConfig;
use ecgstate::{Error, Result, Task};

/// How subjects are split for cross-validation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FoldMode {
    Loso,
    Grouped,
}

impl FromStr for FoldMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "loso" => Ok(FoldMode::Loso),
            "grouped" => Ok(FoldMode::Grouped),
            _ => Err(format!("expected loso or grouped, got `{s}`")),
        }
    }
}

impl Display for FoldMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FoldMode::Loso => "loso",
            FoldMode::Grouped => "grouped",
        })
    }
}

/// Everything a command needs, after task defaults and overrides.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub task: Task,
    pub seed: u64,
    pub epoch_seconds: usize,
    pub sampling_rate: usize,
    pub embed_dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub te_channels: Vec<usize>,
    pub te_strides: Vec<usize>,
    pub te_kernel: usize,
    pub dropout: f64,
    pub train: TrainConfig,
    pub folds: FoldMode,
    pub group_sizes: Vec<usize>,
    pub validation_fraction: f64,
    pub overfit: bool,
    pub snr_threshold_db: f64,
    pub synth_per_class: usize,
    pub synth_subjects: usize,
    pub synth_snr_db: f64,
    pub synth_rate: u32,
    pub manifest: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub resume: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

/// Canonical key order, also used for the echoed configuration.
pub const KEYS: &[&str] = &[
    "task",
    "seed",
    "epoch_seconds",
    "sampling_rate",
    "embed_dim",
    "heads",
    "layers",
    "te_channels",
    "te_strides",
    "te_kernel",
    "dropout",
    "learning_rate",
    "batch_size",
    "epochs",
    "mixup",
    "mixup_alpha",
    "gamma",
    "effective_eps",
    "weight_decay",
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
    "folds",
    "group_sizes",
    "validation_fraction",
    "overfit",
    "snr_threshold_db",
    "synth_per_class",
    "synth_subjects",
    "synth_snr_db",
    "synth_rate",
    "manifest",
    "checkpoint",
    "resume",
    "out_dir",
];

fn parse<T: FromStr>(v: &str) -> std::result::Result<T, String> {
    v.parse().map_err(|_| format!("cannot parse `{v}`"))
}

fn parse_f64(v: &str) -> std::result::Result<f64, String> {
    let x: f64 = parse(v)?;
    if !x.is_finite() {
        return Err(format!("`{v}` is not finite"));
    }
    Ok(x)
}

fn parse_list(v: &str) -> std::result::Result<Vec<usize>, String> {
    v.split(',').map(|p| parse::<usize>(p.trim())).collect()
}

fn positive(v: &str) -> std::result::Result<usize, String> {
    match parse::<usize>(v)? {
        0 => Err("must be ≥ 1".into()),
        n => Ok(n),
    }
}

fn path(v: &str) -> std::result::Result<Option<PathBuf>, String> {
    if v.contains('#') {
        // would read back as a comment
        return Err("paths may not contain `#`".into());
    }
    if v.is_empty() {
        Ok(None)
    } else {
        Ok(Some(PathBuf::from(v)))
    }
}

fn join(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Defaults for a task: the full-size model and its training settings.
    pub fn for_task(task: Task) -> Self {
        RunConfig {
            task,
            seed: 0,
            epoch_seconds: task.epoch_seconds(),
            sampling_rate: 500,
            embed_dim: 128,
            heads: 8,
            layers: 2,
            te_channels: vec![16, 32, 64, 64],
            te_strides: vec![5, 5, 5, 4],
            te_kernel: 7,
            dropout: 0.1,
            train: TrainConfig::for_task(task),
            folds: FoldMode::Loso,
            group_sizes: vec![2, 2, 2, 2, 3],
            validation_fraction: 0.2,
            overfit: false,
            snr_threshold_db: 10.0,
            synth_per_class: 50,
            synth_subjects: 1,
            synth_snr_db: 30.0,
            synth_rate: 512,
            manifest: None,
            checkpoint: None,
            resume: None,
            out_dir: None,
        }
    }

    fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        match key {
            "seed" => self.seed = parse(v)?,
            "epoch_seconds" => self.epoch_seconds = positive(v)?,
            "sampling_rate" => self.sampling_rate = positive(v)?,
            "embed_dim" => self.embed_dim = positive(v)?,
            "heads" => self.heads = positive(v)?,
            "layers" => self.layers = parse(v)?,
            "te_channels" => self.te_channels = parse_list(v)?,
            "te_strides" => self.te_strides = parse_list(v)?,
            "te_kernel" => self.te_kernel = positive(v)?,
            "dropout" => {
                let p = parse_f64(v)?;
                if !(0.0..1.0).contains(&p) {
                    return Err("must lie in [0, 1)".into());
                }
                self.dropout = p;
            }
            "learning_rate" => self.train.learning_rate = parse_f64(v)?,
            "batch_size" => self.train.batch_size = positive(v)?,
            "epochs" => self.train.epochs = parse(v)?,
            "mixup" => self.train.mixup = parse(v)?,
            "mixup_alpha" => self.train.mixup_alpha = parse_f64(v)?,
            "gamma" => self.train.focal_gamma = parse_f64(v)?,
            "effective_eps" => self.train.effective_eps = parse_f64(v)?,
            "weight_decay" => self.train.weight_decay = parse_f64(v)?,
            "adam_beta1" => self.train.adam_beta1 = parse_f64(v)?,
            "adam_beta2" => self.train.adam_beta2 = parse_f64(v)?,
            "adam_eps" => self.train.adam_eps = parse_f64(v)?,
            "folds" => self.folds = v.parse()?,
            "group_sizes" => self.group_sizes = parse_list(v)?,
            "validation_fraction" => {
                let f = parse_f64(v)?;
                if !(0.0..1.0).contains(&f) {
                    return Err("must lie in [0, 1)".into());
                }
                self.validation_fraction = f;
            }
            "overfit" => self.overfit = parse(v)?,
            "snr_threshold_db" => self.snr_threshold_db = parse_f64(v)?,
            "synth_per_class" => self.synth_per_class = parse(v)?,
            "synth_subjects" => self.synth_subjects = positive(v)?,
            "synth_snr_db" => self.synth_snr_db = parse_f64(v)?,
            "synth_rate" => match parse::<u32>(v)? {
                r @ (500 | 512) => self.synth_rate = r,
                _ => return Err("must be 500 or 512".into()),
            },
            "manifest" => self.manifest = path(v)?,
            "checkpoint" => self.checkpoint = path(v)?,
            "resume" => self.resume = path(v)?,
            "out_dir" => self.out_dir = path(v)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        self.train.seed = self.seed;
        // single-key range checks so the error points at the offending line
        if key != "seed" && KEYS.contains(&key) && is_train_key(key) {
            self.train.validate().map_err(|e| e.to_string())?;
        }
        Ok(())
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let te = TEConfig::from_plan(
            self.sampling_rate,
            self.epoch_seconds,
            self.embed_dim,
            &self.te_channels,
            &self.te_strides,
            self.te_kernel,
            self.dropout,
        )?;
        let mut cce = CCEConfig::new(self.embed_dim, self.heads, self.layers);
        cce.dropout_p = self.dropout;
        ModelConfig::new(te, cce)
    }

    pub fn validate(&self) -> Result<()> {
        self.model_config()?;
        self.train.validate()?;
        if self.sampling_rate != 500 {
            return Err(Error::Config(format!(
                "sampling_rate must match the 500 Hz preprocessing output, got {}",
                self.sampling_rate
            )));
        }
        Ok(())
    }

    /// `key = value` lines that re-parse to an equal configuration.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let p = |o: &Option<PathBuf>| o.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let values: Vec<String> = vec![
            self.task.to_string(),
            self.seed.to_string(),
            self.epoch_seconds.to_string(),
            self.sampling_rate.to_string(),
            self.embed_dim.to_string(),
            self.heads.to_string(),
            self.layers.to_string(),
            join(&self.te_channels),
            join(&self.te_strides),
            self.te_kernel.to_string(),
            self.dropout.to_string(),
            t.learning_rate.to_string(),
            t.batch_size.to_string(),
            t.epochs.to_string(),
            t.mixup.to_string(),
            t.mixup_alpha.to_string(),
            t.focal_gamma.to_string(),
            t.effective_eps.to_string(),
            t.weight_decay.to_string(),
            t.adam_beta1.to_string(),
            t.adam_beta2.to_string(),
            t.adam_eps.to_string(),
            self.folds.to_string(),
            join(&self.group_sizes),
            self.validation_fraction.to_string(),
            self.overfit.to_string(),
            self.snr_threshold_db.to_string(),
            self.synth_per_class.to_string(),
            self.synth_subjects.to_string(),
            self.synth_snr_db.to_string(),
            self.synth_rate.to_string(),
            p(&self.manifest),
            p(&self.checkpoint),
            p(&self.resume),
            p(&self.out_dir),
        ];
        let mut s = String::new();
        for (k, v) in KEYS.iter().zip(values) {
            if v.is_empty() {
                s.push_str(&format!("# {k} =\n"));
            } else {
                s.push_str(&format!("{k} = {v}\n"));
            }
        }
        s
    }

    pub fn require_manifest(&self) -> Result<&Path> {
        required(&self.manifest, "manifest")
    }

    pub fn require_out_dir(&self) -> Result<&Path> {
        required(&self.out_dir, "out_dir")
    }

    pub fn require_checkpoint(&self) -> Result<&Path> {
        required(&self.checkpoint, "checkpoint")
    }
}

fn is_train_key(key: &str) -> bool {
    matches!(
        key,
        "learning_rate"
            | "batch_size"
            | "mixup_alpha"
            | "gamma"
            | "effective_eps"
            | "weight_decay"
            | "adam_beta1"
            | "adam_beta2"
            | "adam_eps"
    )
}

fn required<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| {
        Error::Config(format!("`{key}` is required (config line `{key} = ...` or --set {key}=...)"))
    })
}

/// One `key = value` setting and where it came from.
struct Setting {
    key: String,
    value: String,
    origin: String,
}

fn read_settings(text: &str, source: &str) -> Result<Vec<Setting>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let origin = format!("{source} line {}", i + 1);
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("{origin}: expected `key = value`, found `{line}`")))?;
        out.push(Setting {
            key: k.trim().to_string(),
            value: v.trim().to_string(),
            origin,
        });
    }
    Ok(out)
}

/// Parses config text plus `key=value` overrides. The task's defaults are
/// applied first, then every setting in order (file lines, then overrides).
pub fn parse_config_str(text: &str, source: &str, overrides: &[String]) -> Result<RunConfig> {
    let mut settings = read_settings(text, source)?;
    for (i, o) in overrides.iter().enumerate() {
        let origin = format!("override #{} (`{o}`)", i + 1);
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("{origin}: expected key=value")))?;
        settings.push(Setting {
            key: k.trim().to_string(),
            value: v.trim().to_string(),
            origin,
        });
    }
    let mut task = Task::Sleep;
    for s in settings.iter().filter(|s| s.key == "task") {
        task = s
            .value
            .parse()
            .map_err(|e: Error| Error::Config(format!("{}: {e}", s.origin)))?;
    }
    let mut cfg = RunConfig::for_task(task);
    for s in settings.iter().filter(|s| s.key != "task") {
        cfg.set(&s.key, &s.value)
            .map_err(|e| Error::Config(format!("{}: `{}`: {e}", s.origin, s.key)))?;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Io {
                path: p.to_path_buf(),
                source: e,
            })?;
            parse_config_str(&text, &p.display().to_string(), overrides)
        }
        None => parse_config_str("", "<none>", overrides),
    }
}
