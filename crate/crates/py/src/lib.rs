//! Python bindings: build corpora from AIS CSV files, train the recurrent
//! autoencoder and score vessel-days.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use pyo3::exceptions::{PyArithmeticError, PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use seawatch::detect::{fit_distribution, flag_outliers, score_set, RmseKind, ScoreRecord};
use seawatch::ingest::{filter_by_length, group_and_sort, parse_ais_files, AisSchema, Mmsi};
use seawatch::nn::{checkpoint, train, AdamConfig, CellKind, GruConvention, Model, ModelConfig, TrainConfig};
use seawatch::preprocess::{compute_global_stats, normalize_days, prepare_days, NormalizationStats, PreprocessConfig};
use seawatch::sequence::{assemble, split, SequenceSet, SplitSpec};
use seawatch::synth::{generate, SynthConfig};
use seawatch::{Error, NUM_FEATURES, SLOTS_PER_DAY};

fn py_err(e: Error) -> PyErr {
    if e.is_config() {
        PyValueError::new_err(e.to_string())
    } else if e.is_numeric() {
        PyArithmeticError::new_err(e.to_string())
    } else {
        PyIOError::new_err(e.to_string())
    }
}

/// Normalized `N x 48 x 4` vessel-day sequences with their ids.
#[pyclass(module = "pyseawatch", skip_from_py_object)]
#[derive(Clone)]
struct Corpus {
    set: SequenceSet,
    stats: Option<NormalizationStats>,
}

#[pymethods]
impl Corpus {
    /// Ingests AIS CSV files and runs the full preprocessing chain.
    #[staticmethod]
    #[pyo3(signature = (paths, min_length = 20.0))]
    fn from_csv(paths: Vec<String>, min_length: f64) -> PyResult<Self> {
        let paths: Vec<PathBuf> = paths.into_iter().map(PathBuf::from).collect();
        let (records, _) = parse_ais_files(&paths, &AisSchema::default()).map_err(py_err)?;
        let tracks = group_and_sort(filter_by_length(records, min_length));
        let cfg = PreprocessConfig::default();
        let (grids, mut report) = prepare_days(&tracks, &cfg);
        let stats = compute_global_stats(&grids).map_err(py_err)?;
        let days = normalize_days(&grids, &stats, cfg.max_missing_fraction, &mut report).map_err(py_err)?;
        Ok(Self {
            set: assemble(&days),
            stats: Some(stats),
        })
    }

    /// `(N, 48, 4)`.
    #[getter]
    fn shape(&self) -> (usize, usize, usize) {
        (self.set.len(), SLOTS_PER_DAY, NUM_FEATURES)
    }

    fn __len__(&self) -> usize {
        self.set.len()
    }

    /// `(mmsi, "YYYY-MM-DD")` per row.
    #[getter]
    fn ids(&self) -> Vec<(u32, String)> {
        self.set.ids().iter().map(|i| (i.mmsi.0, i.day.to_string())).collect()
    }

    /// Row `i` flattened in (slot, feature) order.
    fn row(&self, i: usize) -> PyResult<Vec<f64>> {
        if i >= self.set.len() {
            return Err(PyValueError::new_err(format!("row {i} out of range")));
        }
        Ok(self.set.row(i).to_vec())
    }

    /// Global per-feature minima and maxima, ordered LAT, LON, SOG, COG.
    fn stats<'py>(&self, py: Python<'py>) -> PyResult<Option<Bound<'py, PyDict>>> {
        let Some(s) = &self.stats else { return Ok(None) };
        let d = PyDict::new(py);
        d.set_item("min", s.min.to_vec())?;
        d.set_item("max", s.max.to_vec())?;
        Ok(Some(d))
    }

    /// Returns `(train, validation, test)`.
    #[pyo3(signature = (test_fraction = 0.2, val_fraction = 0.2, seed = 0))]
    fn split(&self, test_fraction: f64, val_fraction: f64, seed: u64) -> PyResult<(Corpus, Corpus, Corpus)> {
        let spec = SplitSpec {
            test_fraction,
            val_fraction_of_train: val_fraction,
            seed,
            ..SplitSpec::default()
        };
        let (a, b, c) = split(&self.set, &spec).map_err(py_err)?;
        let wrap = |set| Corpus {
            set,
            stats: self.stats,
        };
        Ok((wrap(a), wrap(b), wrap(c)))
    }
}

/// Recurrent sequence autoencoder.
#[pyclass(module = "pyseawatch")]
struct Autoencoder {
    model: Model,
}

#[pymethods]
impl Autoencoder {
    #[new]
    #[pyo3(signature = (cell = "gru", bidirectional = true, layers = 1, hidden = 32, dropout = 0.2, recurrent_dropout = 0.2, gru_convention = "candidate", seed = 0))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        cell: &str,
        bidirectional: bool,
        layers: usize,
        hidden: usize,
        dropout: f64,
        recurrent_dropout: f64,
        gru_convention: &str,
        seed: u64,
    ) -> PyResult<Self> {
        let cell = CellKind::parse(cell).ok_or_else(|| PyValueError::new_err(format!("unknown cell `{cell}`")))?;
        let convention = GruConvention::parse(gru_convention)
            .ok_or_else(|| PyValueError::new_err(format!("unknown GRU convention `{gru_convention}`")))?;
        let config = ModelConfig {
            cell,
            gru_convention: convention,
            bidirectional,
            layers,
            hidden,
            dropout_rate: dropout,
            recurrent_dropout_rate: recurrent_dropout,
            timesteps: SLOTS_PER_DAY,
            features: NUM_FEATURES,
        };
        Ok(Self {
            model: Model::new(config, seed).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            model: checkpoint::load(Path::new(path)).map_err(py_err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        checkpoint::save(&self.model, Path::new(path)).map_err(py_err)
    }

    #[getter]
    fn num_parameters(&self) -> usize {
        self.model.params.num_parameters()
    }

    /// Trains in place; returns `(epoch, train_loss, val_loss)` per epoch.
    #[pyo3(signature = (train_set, val_set, epochs = 5, batch_size = 256, learning_rate = 1e-3, seed = 0, threads = 1))]
    #[allow(clippy::too_many_arguments)]
    fn fit(
        &mut self,
        train_set: &Corpus,
        val_set: &Corpus,
        epochs: usize,
        batch_size: usize,
        learning_rate: f64,
        seed: u64,
        threads: usize,
    ) -> PyResult<Vec<(usize, f64, f64)>> {
        let cfg = TrainConfig {
            epochs,
            batch_size,
            adam: AdamConfig {
                learning_rate,
                ..AdamConfig::default()
            },
            seed,
            threads,
            ..TrainConfig::default()
        };
        let history = train(
            &mut self.model,
            train_set.set.tensor(),
            val_set.set.tensor(),
            &cfg,
            |_, _| Ok(()),
        )
        .map_err(py_err)?;
        Ok(history
            .epochs
            .iter()
            .map(|e| (e.epoch, e.train_loss, e.val_loss))
            .collect())
    }

    /// Eval-mode reconstruction, one flat row per sequence.
    fn reconstruct(&self, corpus: &Corpus) -> PyResult<Vec<Vec<f64>>> {
        let out = self.model.reconstruct(corpus.set.tensor()).map_err(py_err)?;
        let n = SLOTS_PER_DAY * NUM_FEATURES;
        Ok(out.data().chunks(n).map(<[f64]>::to_vec).collect())
    }

    /// `(mmsi, day, rmse)` per sequence.
    #[pyo3(signature = (corpus, masked = false))]
    fn score(&self, corpus: &Corpus, masked: bool) -> PyResult<Vec<(u32, String, f64)>> {
        let kind = if masked { RmseKind::Masked } else { RmseKind::AllCells };
        let scores = score_set(&self.model, &corpus.set, kind, false).map_err(py_err)?;
        Ok(scores.iter().map(|s| (s.mmsi.0, s.day.to_string(), s.rmse)).collect())
    }
}

/// Mean-plus-`k`-sigma thresholding of a list of scores. Returns a dict
/// with `mean`, `std`, `median`, `threshold` and the `flagged` indices,
/// highest score first.
#[pyfunction]
#[pyo3(signature = (scores, k = 6.0))]
fn outliers<'py>(py: Python<'py>, scores: Vec<f64>, k: f64) -> PyResult<Bound<'py, PyDict>> {
    let dist = fit_distribution(&scores, 10).map_err(py_err)?;
    let day = NaiveDate::default();
    let records: Vec<ScoreRecord> = scores
        .iter()
        .enumerate()
        .map(|(i, &rmse)| ScoreRecord {
            mmsi: Mmsi(i as u32),
            day,
            rmse,
            feature_rmse: None,
        })
        .collect();
    let report = flag_outliers(&records, &dist, k).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("mean", dist.mean)?;
    d.set_item("std", dist.std)?;
    d.set_item("median", dist.median)?;
    d.set_item("threshold", report.threshold)?;
    d.set_item("flagged", report.flagged.iter().map(|r| r.mmsi.0 as usize).collect::<Vec<_>>())?;
    Ok(d)
}

/// Writes a synthetic AIS CSV to `path` and returns
/// `(mmsi, day, anomalous)` for every vessel-day.
#[pyfunction]
#[pyo3(signature = (path, vessels = 100, days = 20, anomaly_fraction = 0.02, seed = 7))]
fn synthesize(
    path: &str,
    vessels: usize,
    days: usize,
    anomaly_fraction: f64,
    seed: u64,
) -> PyResult<Vec<(u32, String, bool)>> {
    let corpus = generate(&SynthConfig {
        vessels,
        days_per_vessel: days,
        anomaly_fraction,
        seed,
        ..SynthConfig::default()
    })
    .map_err(py_err)?;
    let file = std::fs::File::create(path).map_err(|e| PyIOError::new_err(format!("{path}: {e}")))?;
    corpus.write_ais_csv(std::io::BufWriter::new(file)).map_err(py_err)?;
    Ok(corpus
        .labels
        .iter()
        .map(|l| (l.mmsi.0, l.day.to_string(), l.anomalous))
        .collect())
}

#[pymodule]
fn pyseawatch(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Corpus>()?;
    m.add_class::<Autoencoder>()?;
    m.add_function(wrap_pyfunction!(outliers, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    Ok(())
}
