//! Run configuration with layered resolution: built-in defaults, then a
//! named preset, then a flat `key = value` config file, then command-line
//! flags. The fully resolved configuration is persisted next to every
//! command's outputs as `resolved-config.txt`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use lowfer::model::Hyperparams;
use lowfer::train::TrainConfig;

/// Every tunable of a run, fully resolved (no optional fields).
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Dataset directory holding `train.txt`, `valid.txt`, `test.txt`.
    pub data: Option<PathBuf>,
    /// Output directory for artifacts.
    pub out: PathBuf,
    /// Name of the applied preset, for provenance.
    pub preset: Option<String>,
    pub seed: u64,
    /// Size of the global worker pool; 1 disables parallelism.
    pub threads: usize,
    pub entity_dim: usize,
    pub relation_dim: usize,
    pub rank: usize,
    pub dropout_entity: f64,
    pub dropout_fusion: f64,
    pub dropout_output: f64,
    pub label_smoothing: f64,
    pub power_l2_normalize: bool,
    pub tanh_output: bool,
    pub learning_rate: f64,
    pub decay_rate: f64,
    pub l2_lambda: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub eval_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: None,
            out: PathBuf::from("out"),
            preset: None,
            seed: 0,
            threads: 1,
            entity_dim: 200,
            relation_dim: 30,
            rank: 10,
            dropout_entity: 0.0,
            dropout_fusion: 0.0,
            dropout_output: 0.0,
            label_smoothing: 0.0,
            power_l2_normalize: false,
            tanh_output: false,
            learning_rate: 0.0005,
            decay_rate: 1.0,
            l2_lambda: 0.0,
            epochs: 500,
            batch_size: 128,
            eval_every: 20,
        }
    }
}

/// Keys accepted in config files, in the order they are persisted.
pub const CONFIG_KEYS: [&str; 19] = [
    "data",
    "out",
    "seed",
    "threads",
    "entity_dim",
    "relation_dim",
    "rank",
    "dropout_entity",
    "dropout_fusion",
    "dropout_output",
    "label_smoothing",
    "power_l2_normalize",
    "tanh_output",
    "learning_rate",
    "decay_rate",
    "l2_lambda",
    "epochs",
    "batch_size",
    "eval_every",
];

impl RunConfig {
    /// Applies one of the named hyperparameter bundles.
    pub fn apply_preset(&mut self, name: &str) -> Result<(), String> {
        // (learning rate, decay, d_e, d_r, k, dropouts, label smoothing)
        let (lr, dr, d_e, d_r, k, drops, ls) = match name {
            "wn18" => (0.005, 0.995, 200, 30, 10, (0.2, 0.1, 0.2), 0.1),
            "wn18rr" => (0.01, 1.0, 200, 30, 30, (0.2, 0.2, 0.3), 0.1),
            "fb15k" => (0.003, 0.99, 300, 30, 50, (0.2, 0.2, 0.3), 0.0),
            "fb15k-237" => (0.0005, 1.0, 200, 200, 100, (0.3, 0.4, 0.5), 0.1),
            other => {
                return Err(format!(
                    "unknown preset '{other}' (expected wn18, wn18rr, fb15k, or fb15k-237)"
                ))
            }
        };
        self.preset = Some(name.to_string());
        self.learning_rate = lr;
        self.decay_rate = dr;
        self.entity_dim = d_e;
        self.relation_dim = d_r;
        self.rank = k;
        self.dropout_entity = drops.0;
        self.dropout_fusion = drops.1;
        self.dropout_output = drops.2;
        self.label_smoothing = ls;
        Ok(())
    }

    /// Sets one field from its config-file key.
    pub fn apply_key(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String> {
            value
                .parse()
                .map_err(|_| format!("invalid value '{value}' for key '{key}'"))
        }
        match key {
            "data" => self.data = Some(PathBuf::from(value)),
            "out" => self.out = PathBuf::from(value),
            "seed" => self.seed = parse(key, value)?,
            "threads" => self.threads = parse(key, value)?,
            "entity_dim" => self.entity_dim = parse(key, value)?,
            "relation_dim" => self.relation_dim = parse(key, value)?,
            "rank" => self.rank = parse(key, value)?,
            "dropout_entity" => self.dropout_entity = parse(key, value)?,
            "dropout_fusion" => self.dropout_fusion = parse(key, value)?,
            "dropout_output" => self.dropout_output = parse(key, value)?,
            "label_smoothing" => self.label_smoothing = parse(key, value)?,
            "power_l2_normalize" => self.power_l2_normalize = parse(key, value)?,
            "tanh_output" => self.tanh_output = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "decay_rate" => self.decay_rate = parse(key, value)?,
            "l2_lambda" => self.l2_lambda = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "eval_every" => self.eval_every = parse(key, value)?,
            other => {
                return Err(format!(
                    "unknown config key '{other}' (known keys: {})",
                    CONFIG_KEYS.join(", ")
                ))
            }
        }
        Ok(())
    }

    /// Reads a flat config file: one `key = value` per line, `#` comments
    /// and blank lines skipped.
    pub fn apply_file(&mut self, path: &Path) -> Result<(), String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config file {}: {e}", path.display()))?;
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                format!(
                    "{}:{}: expected 'key = value', found '{line}'",
                    path.display(),
                    idx + 1
                )
            })?;
            self.apply_key(key.trim(), value.trim())
                .map_err(|e| format!("{}:{}: {e}", path.display(), idx + 1))?;
        }
        Ok(())
    }

    /// The resolved configuration in config-file syntax, for provenance.
    pub fn to_flat_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# resolved configuration");
        let _ = writeln!(s, "# preset: {}", self.preset.as_deref().unwrap_or("none"));
        if let Some(data) = &self.data {
            let _ = writeln!(s, "data = {}", data.display());
        }
        let _ = writeln!(s, "out = {}", self.out.display());
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "threads = {}", self.threads);
        let _ = writeln!(s, "entity_dim = {}", self.entity_dim);
        let _ = writeln!(s, "relation_dim = {}", self.relation_dim);
        let _ = writeln!(s, "rank = {}", self.rank);
        let _ = writeln!(s, "dropout_entity = {}", self.dropout_entity);
        let _ = writeln!(s, "dropout_fusion = {}", self.dropout_fusion);
        let _ = writeln!(s, "dropout_output = {}", self.dropout_output);
        let _ = writeln!(s, "label_smoothing = {}", self.label_smoothing);
        let _ = writeln!(s, "power_l2_normalize = {}", self.power_l2_normalize);
        let _ = writeln!(s, "tanh_output = {}", self.tanh_output);
        let _ = writeln!(s, "learning_rate = {}", self.learning_rate);
        let _ = writeln!(s, "decay_rate = {}", self.decay_rate);
        let _ = writeln!(s, "l2_lambda = {}", self.l2_lambda);
        let _ = writeln!(s, "epochs = {}", self.epochs);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "eval_every = {}", self.eval_every);
        s
    }

    /// Model hyperparameters of this configuration.
    pub fn hyperparams(&self) -> Hyperparams {
        let mut h = Hyperparams::bare(self.entity_dim, self.relation_dim, self.rank);
        h.dropout_entity = self.dropout_entity;
        h.dropout_fusion = self.dropout_fusion;
        h.dropout_output = self.dropout_output;
        h.label_smoothing = self.label_smoothing;
        h.power_l2_normalize = self.power_l2_normalize;
        h.tanh_output = self.tanh_output;
        h
    }

    /// Training configuration of this run.
    pub fn train_config(&self) -> TrainConfig {
        let mut c = TrainConfig::new(self.hyperparams());
        c.learning_rate = self.learning_rate;
        c.decay_rate = self.decay_rate;
        c.epochs = self.epochs;
        c.batch_size = self.batch_size;
        c.l2_lambda = self.l2_lambda;
        c.seed = self.seed;
        c.eval_every = self.eval_every;
        c
    }
}
