//! Run configuration: every tunable of the pipeline, loadable from a
//! `key=value` file and overridable from the command line.

use std::path::PathBuf;
use std::str::FromStr;

use chrono::NaiveDate;
use seawatch::nn::{AdamConfig, CellKind, GruConvention, LossKind, ModelConfig, TrainConfig};
use seawatch::preprocess::PreprocessConfig;
use seawatch::sequence::{SplitGranularity, SplitSpec};
use seawatch::synth::SynthConfig;
use seawatch::{kv, Error, Result, NUM_FEATURES, SLOTS_PER_DAY};

/// Which stored set `score` evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreSet {
    Train,
    Val,
    Test,
    All,
}

impl ScoreSet {
    pub fn name(self) -> &'static str {
        match self {
            ScoreSet::Train => "train",
            ScoreSet::Val => "val",
            ScoreSet::Test => "test",
            ScoreSet::All => "all",
        }
    }
}

/// Where the mean and standard deviation behind the threshold come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThresholdStats {
    Scored,
    Train,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub input: String,
    pub work_dir: PathBuf,
    pub deterministic: bool,

    pub min_length: f64,
    pub tolerance_secs: i64,
    pub min_entries: usize,
    pub max_fill: usize,
    pub max_missing_fraction: f64,

    pub test_fraction: f64,
    pub val_fraction: f64,
    pub split_granularity: SplitGranularity,
    pub seed: u64,

    pub cell: CellKind,
    pub gru_convention: GruConvention,
    pub bidirectional: bool,
    pub layers: usize,
    pub hidden: usize,
    pub dropout: f64,
    pub recurrent_dropout: f64,

    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub loss: LossKind,
    pub threads: usize,

    pub k: f64,
    pub min_appearances: usize,
    pub score_set: ScoreSet,
    pub threshold_stats: ThresholdStats,
    pub masked_rmse: bool,
    pub per_feature_rmse: bool,
    pub histogram_bins: usize,

    /// `outliers`, `all`, or `;`-separated `mmsi:day` pairs.
    pub geojson_select: String,
    pub geojson_output: String,

    pub synth_dir: PathBuf,
    /// Ground-truth labels of the synthetic corpus, kept out of `synth_dir`
    /// so the directory can be ingested as is.
    pub synth_labels: PathBuf,
    pub synth_vessels: usize,
    pub synth_days: usize,
    pub synth_anomaly_fraction: f64,
    pub synth_start_day: NaiveDate,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = ModelConfig::bidirectional(CellKind::Gru);
        let pre = PreprocessConfig::default();
        let split = SplitSpec::default();
        let train = TrainConfig::default();
        let synth = SynthConfig::default();
        Self {
            input: String::new(),
            work_dir: PathBuf::from("seawatch_run"),
            deterministic: false,
            min_length: 20.0,
            tolerance_secs: pre.tolerance_secs,
            min_entries: pre.min_entries,
            max_fill: pre.max_fill,
            max_missing_fraction: pre.max_missing_fraction,
            test_fraction: split.test_fraction,
            val_fraction: split.val_fraction_of_train,
            split_granularity: split.granularity,
            seed: 42,
            cell: model.cell,
            gru_convention: model.gru_convention,
            bidirectional: model.bidirectional,
            layers: model.layers,
            hidden: model.hidden,
            dropout: model.dropout_rate,
            recurrent_dropout: model.recurrent_dropout_rate,
            epochs: train.epochs,
            batch_size: train.batch_size,
            learning_rate: train.adam.learning_rate,
            beta1: train.adam.beta1,
            beta2: train.adam.beta2,
            epsilon: train.adam.epsilon,
            loss: train.loss,
            threads: train.threads,
            k: 6.0,
            min_appearances: 5,
            score_set: ScoreSet::Test,
            threshold_stats: ThresholdStats::Scored,
            masked_rmse: false,
            per_feature_rmse: false,
            histogram_bins: 50,
            geojson_select: "outliers".into(),
            geojson_output: "outliers.geojson".into(),
            synth_dir: PathBuf::from("synthetic_ais"),
            synth_labels: PathBuf::from("synthetic_labels.csv"),
            synth_vessels: synth.vessels,
            synth_days: synth.days_per_vessel,
            synth_anomaly_fraction: synth.anomaly_fraction,
            synth_start_day: synth.start_day,
        }
    }
}

fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}`")))
}

fn boolean(key: &str, v: &str) -> Result<bool> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("`{key}`: expected true or false, got `{v}`"))),
    }
}

fn bad(key: &str, v: &str, allowed: &str) -> Error {
    Error::Config(format!("`{key}`: `{v}` is not one of {allowed}"))
}

impl RunConfig {
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "input" => self.input = v.to_string(),
            "work_dir" => self.work_dir = PathBuf::from(v),
            "deterministic" => self.deterministic = boolean(key, v)?,
            "min_length" => self.min_length = num(key, v)?,
            "tolerance_secs" => self.tolerance_secs = num(key, v)?,
            "min_entries" => self.min_entries = num(key, v)?,
            "max_fill" => self.max_fill = num(key, v)?,
            "max_missing_fraction" => self.max_missing_fraction = num(key, v)?,
            "test_fraction" => self.test_fraction = num(key, v)?,
            "val_fraction" => self.val_fraction = num(key, v)?,
            "split_granularity" => {
                self.split_granularity = match v {
                    "record" => SplitGranularity::Record,
                    "vessel" => SplitGranularity::Vessel,
                    _ => return Err(bad(key, v, "record, vessel")),
                }
            }
            "seed" => self.seed = num(key, v)?,
            "cell" => self.cell = CellKind::parse(v).ok_or_else(|| bad(key, v, "gru, simple_rnn"))?,
            "gru_convention" => {
                self.gru_convention = GruConvention::parse(v).ok_or_else(|| bad(key, v, "candidate, previous"))?
            }
            "bidirectional" => self.bidirectional = boolean(key, v)?,
            "layers" => self.layers = num(key, v)?,
            "hidden" => self.hidden = num(key, v)?,
            "dropout" => self.dropout = num(key, v)?,
            "recurrent_dropout" => self.recurrent_dropout = num(key, v)?,
            "epochs" => self.epochs = num(key, v)?,
            "batch_size" => self.batch_size = num(key, v)?,
            "learning_rate" => self.learning_rate = num(key, v)?,
            "beta1" => self.beta1 = num(key, v)?,
            "beta2" => self.beta2 = num(key, v)?,
            "epsilon" => self.epsilon = num(key, v)?,
            "loss" => {
                self.loss = match v {
                    "mse" => LossKind::Mse,
                    "masked_mse" => LossKind::MaskedMse,
                    _ => return Err(bad(key, v, "mse, masked_mse")),
                }
            }
            "threads" => self.threads = num(key, v)?,
            "k" => self.k = num(key, v)?,
            "min_appearances" => self.min_appearances = num(key, v)?,
            "score_set" => {
                self.score_set = match v {
                    "train" => ScoreSet::Train,
                    "val" => ScoreSet::Val,
                    "test" => ScoreSet::Test,
                    "all" => ScoreSet::All,
                    _ => return Err(bad(key, v, "train, val, test, all")),
                }
            }
            "threshold_stats" => {
                self.threshold_stats = match v {
                    "scored" => ThresholdStats::Scored,
                    "train" => ThresholdStats::Train,
                    _ => return Err(bad(key, v, "scored, train")),
                }
            }
            "masked_rmse" => self.masked_rmse = boolean(key, v)?,
            "per_feature_rmse" => self.per_feature_rmse = boolean(key, v)?,
            "histogram_bins" => self.histogram_bins = num(key, v)?,
            "geojson_select" => self.geojson_select = v.to_string(),
            "geojson_output" => self.geojson_output = v.to_string(),
            "synth_dir" => self.synth_dir = PathBuf::from(v),
            "synth_labels" => self.synth_labels = PathBuf::from(v),
            "synth_vessels" => self.synth_vessels = num(key, v)?,
            "synth_days" => self.synth_days = num(key, v)?,
            "synth_anomaly_fraction" => self.synth_anomaly_fraction = num(key, v)?,
            "synth_start_day" => self.synth_start_day = num(key, v)?,
            _ => return Err(Error::Config(format!("unknown configuration key `{key}`"))),
        }
        Ok(())
    }

    /// Applies `key=value` text on top of the current values.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (k, v) in kv::parse(text)? {
            self.set(&k, &v)?;
        }
        Ok(())
    }

    /// Applies one `key=value` override.
    pub fn apply_override(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{pair}` is not key=value")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn pairs(&self) -> Vec<(&'static str, String)> {
        let granularity = match self.split_granularity {
            SplitGranularity::Record => "record",
            SplitGranularity::Vessel => "vessel",
        };
        let loss = match self.loss {
            LossKind::Mse => "mse",
            LossKind::MaskedMse => "masked_mse",
        };
        let threshold_stats = match self.threshold_stats {
            ThresholdStats::Scored => "scored",
            ThresholdStats::Train => "train",
        };
        vec![
            ("input", self.input.clone()),
            ("work_dir", self.work_dir.display().to_string()),
            ("deterministic", self.deterministic.to_string()),
            ("min_length", self.min_length.to_string()),
            ("tolerance_secs", self.tolerance_secs.to_string()),
            ("min_entries", self.min_entries.to_string()),
            ("max_fill", self.max_fill.to_string()),
            ("max_missing_fraction", self.max_missing_fraction.to_string()),
            ("test_fraction", self.test_fraction.to_string()),
            ("val_fraction", self.val_fraction.to_string()),
            ("split_granularity", granularity.to_string()),
            ("seed", self.seed.to_string()),
            ("cell", self.cell.name().to_string()),
            ("gru_convention", self.gru_convention.name().to_string()),
            ("bidirectional", self.bidirectional.to_string()),
            ("layers", self.layers.to_string()),
            ("hidden", self.hidden.to_string()),
            ("dropout", self.dropout.to_string()),
            ("recurrent_dropout", self.recurrent_dropout.to_string()),
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("learning_rate", self.learning_rate.to_string()),
            ("beta1", self.beta1.to_string()),
            ("beta2", self.beta2.to_string()),
            ("epsilon", self.epsilon.to_string()),
            ("loss", loss.to_string()),
            ("threads", self.threads.to_string()),
            ("k", self.k.to_string()),
            ("min_appearances", self.min_appearances.to_string()),
            ("score_set", self.score_set.name().to_string()),
            ("threshold_stats", threshold_stats.to_string()),
            ("masked_rmse", self.masked_rmse.to_string()),
            ("per_feature_rmse", self.per_feature_rmse.to_string()),
            ("histogram_bins", self.histogram_bins.to_string()),
            ("geojson_select", self.geojson_select.clone()),
            ("geojson_output", self.geojson_output.clone()),
            ("synth_dir", self.synth_dir.display().to_string()),
            ("synth_labels", self.synth_labels.display().to_string()),
            ("synth_vessels", self.synth_vessels.to_string()),
            ("synth_days", self.synth_days.to_string()),
            ("synth_anomaly_fraction", self.synth_anomaly_fraction.to_string()),
            ("synth_start_day", self.synth_start_day.to_string()),
        ]
    }

    pub fn render(&self) -> String {
        kv::render(self.pairs())
    }

    pub fn preprocess(&self) -> PreprocessConfig {
        PreprocessConfig {
            tolerance_secs: self.tolerance_secs,
            min_entries: self.min_entries,
            max_fill: self.max_fill,
            max_missing_fraction: self.max_missing_fraction,
        }
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            test_fraction: self.test_fraction,
            val_fraction_of_train: self.val_fraction,
            seed: self.seed,
            granularity: self.split_granularity,
        }
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            cell: self.cell,
            gru_convention: self.gru_convention,
            bidirectional: self.bidirectional,
            layers: self.layers,
            hidden: self.hidden,
            dropout_rate: self.dropout,
            recurrent_dropout_rate: self.recurrent_dropout,
            timesteps: SLOTS_PER_DAY,
            features: NUM_FEATURES,
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            adam: AdamConfig {
                learning_rate: self.learning_rate,
                beta1: self.beta1,
                beta2: self.beta2,
                epsilon: self.epsilon,
            },
            seed: self.seed,
            loss: self.loss,
            threads: if self.deterministic { 1 } else { self.threads },
        }
    }

    pub fn synth(&self) -> SynthConfig {
        SynthConfig {
            vessels: self.synth_vessels,
            days_per_vessel: self.synth_days,
            start_day: self.synth_start_day,
            anomaly_fraction: self.synth_anomaly_fraction,
            seed: self.seed,
            ..SynthConfig::default()
        }
    }

    /// Checks every section; called before any command does work.
    pub fn validate(&self) -> Result<()> {
        if !(self.min_length.is_finite() && self.min_length >= 0.0) {
            return Err(Error::Config("min_length must be a finite value >= 0".into()));
        }
        self.preprocess().validate()?;
        self.split_spec().validate()?;
        self.model().validate()?;
        self.train().validate()?;
        self.synth().validate()?;
        if !(self.k > 0.0 && self.k.is_finite()) {
            return Err(Error::Config("k must be > 0".into()));
        }
        if self.min_appearances == 0 {
            return Err(Error::Config("min_appearances must be >= 1".into()));
        }
        if self.histogram_bins == 0 {
            return Err(Error::Config("histogram_bins must be >= 1".into()));
        }
        if self.work_dir.as_os_str().is_empty() {
            return Err(Error::Config("work_dir is empty".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_parses_back_to_the_same_config() {
        let mut c = RunConfig::default();
        c.apply_text("hidden=16\nloss=masked_mse\nk=2.5\nsplit_granularity=vessel\n").unwrap();
        let mut back = RunConfig::default();
        back.apply_text(&c.render()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hidden, 16);
    }

    #[test]
    fn overrides_and_errors() {
        let mut c = RunConfig::default();
        c.apply_override("epochs = 3").unwrap();
        assert_eq!(c.epochs, 3);
        assert!(c.apply_override("nope=1").is_err());
        assert!(c.apply_override("epochs").is_err());
        assert!(c.apply_override("cell=lstm").is_err());
        assert!(c.apply_override("bidirectional=maybe").is_err());
    }

    #[test]
    fn validation_catches_bad_values() {
        assert!(RunConfig::default().validate().is_ok());
        for kv in ["k=0", "epochs=0", "test_fraction=1.5", "hidden=0", "min_appearances=0", "dropout=1"] {
            let mut c = RunConfig::default();
            c.apply_override(kv).unwrap();
            assert!(c.validate().is_err(), "{kv}");
        }
    }

    #[test]
    fn deterministic_forces_one_thread() {
        let mut c = RunConfig::default();
        c.threads = 4;
        c.deterministic = true;
        assert_eq!(c.train().threads, 1);
    }
}
