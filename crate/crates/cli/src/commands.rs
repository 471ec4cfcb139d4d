//! One function per subcommand. Each reads its inputs from the work
//! directory, writes its artifacts there and returns what it touched.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use seawatch::detect::{
    fit_distribution, flag_outliers, histogram_csv, offender_frequency, offenders_csv, outliers_csv,
    read_scores_csv, score_set, scores_csv, RmseKind, ScoreDistribution, ScoreRecord,
};
use seawatch::geojson::export_geojson;
use seawatch::ingest::{
    filter_by_length_reported, group_and_sort_reported, parse_ais_files, read_tracks_csv, write_tracks_csv, AisSchema,
    Mmsi, VesselTrack,
};
use seawatch::io::{read_corpus, write_corpus};
use seawatch::nn::{checkpoint, train, Model, TrainingHistory};
use seawatch::preprocess::{compute_global_stats, normalize_days, prepare_days, NormalizationStats};
use seawatch::sequence::{assemble, split, SequenceSet};
use seawatch::synth::generate;
use seawatch::{Error, Result};

use crate::config::{RunConfig, ScoreSet, ThresholdStats};
use crate::manifest::StageRecord;

pub const TRACKS: &str = "tracks.csv";
pub const INGEST_REPORT: &str = "ingest_report.csv";
pub const CORPUS: &str = "corpus";
pub const STATS: &str = "stats.txt";
pub const PREPROCESS_REPORT: &str = "preprocess_report.txt";
pub const MODEL: &str = "model.ckpt";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const HISTORY: &str = "history.csv";
pub const SCORES: &str = "scores.csv";
pub const HISTOGRAM: &str = "histogram.csv";
pub const OUTLIERS: &str = "outliers.csv";
pub const OFFENDERS: &str = "offenders.csv";
pub const REPORT: &str = "report.txt";

/// Tensor and sidecar paths of a stored set (`corpus`, `train`, ...).
pub fn set_paths(work_dir: &Path, name: &str) -> (PathBuf, PathBuf) {
    (work_dir.join(format!("{name}.bin")), work_dir.join(format!("{name}_ids.csv")))
}

fn load_set(work_dir: &Path, name: &str) -> Result<(SequenceSet, Vec<PathBuf>)> {
    let (t, s) = set_paths(work_dir, name);
    for p in [&t, &s] {
        if !p.exists() {
            return Err(Error::Data(format!("{} not found; run the earlier stages first", p.display())));
        }
    }
    Ok((read_corpus(&t, &s)?, vec![t, s]))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io_at(path, e))
}

fn require(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Data(format!("{what} {} not found", path.display())))
    }
}

/// Expands `input` into a sorted list of CSV files: a directory (its `*.csv`
/// entries), a glob pattern, or a single file.
pub fn resolve_inputs(input: &str) -> Result<Vec<PathBuf>> {
    if input.trim().is_empty() {
        return Err(Error::Config("`input` is not set".into()));
    }
    let path = Path::new(input);
    let mut files: Vec<PathBuf> = if input.contains(['*', '?', '[']) {
        glob::glob(input)
            .map_err(|e| Error::Config(format!("bad input pattern `{input}`: {e}")))?
            .filter_map(|p| p.ok())
            .filter(|p| p.is_file())
            .collect()
    } else if path.is_dir() {
        std::fs::read_dir(path)
            .map_err(|e| Error::io_at(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && p.extension().is_some_and(|x| x.eq_ignore_ascii_case("csv")))
            .collect()
    } else if path.is_file() {
        vec![path.to_path_buf()]
    } else {
        Vec::new()
    };
    files.sort();
    if files.is_empty() {
        return Err(Error::Data(format!("no CSV files match `{input}`")));
    }
    Ok(files)
}

pub fn ingest(cfg: &RunConfig) -> Result<StageRecord> {
    let files = resolve_inputs(&cfg.input)?;
    let (records, mut report) = parse_ais_files(&files, &AisSchema::default())?;
    let records = filter_by_length_reported(records, cfg.min_length, &mut report);
    let tracks = group_and_sort_reported(records, &mut report);

    let tracks_path = cfg.work_dir.join(TRACKS);
    let f = std::fs::File::create(&tracks_path).map_err(|e| Error::io_at(&tracks_path, e))?;
    write_tracks_csv(&tracks, std::io::BufWriter::new(f))?;
    let report_path = cfg.work_dir.join(INGEST_REPORT);
    write_text(&report_path, &report.to_csv())?;

    println!("ingested {} file(s)", files.len());
    print!("{}", report.to_key_value());
    println!("tracks={}", tracks.len());
    Ok(StageRecord {
        inputs: files,
        outputs: vec![tracks_path, report_path],
    })
}

pub fn preprocess(cfg: &RunConfig) -> Result<StageRecord> {
    let tracks_path = cfg.work_dir.join(TRACKS);
    require(&tracks_path, "track store")?;
    let tracks = read_tracks_csv(&tracks_path)?;
    let pcfg = cfg.preprocess();
    let (grids, mut report) = prepare_days(&tracks, &pcfg);
    if grids.is_empty() {
        return Err(Error::Data("no vessel-day survived preprocessing".into()));
    }
    let stats = compute_global_stats(&grids)?;
    let days = normalize_days(&grids, &stats, pcfg.max_missing_fraction, &mut report)?;
    let set = assemble(&days);

    let (t, s) = set_paths(&cfg.work_dir, CORPUS);
    write_corpus(&set, &t, &s)?;
    let stats_path = cfg.work_dir.join(STATS);
    stats.save(&stats_path)?;
    let report_path = cfg.work_dir.join(PREPROCESS_REPORT);
    write_text(&report_path, &report.to_key_value())?;

    print!("{}", report.to_key_value());
    println!("sequences={}", set.len());
    Ok(StageRecord {
        inputs: vec![tracks_path],
        outputs: vec![t, s, stats_path, report_path],
    })
}

pub fn split_cmd(cfg: &RunConfig) -> Result<StageRecord> {
    let (set, inputs) = load_set(&cfg.work_dir, CORPUS)?;
    let (train_set, val_set, test_set) = split(&set, &cfg.split_spec())?;
    let mut outputs = Vec::new();
    for (name, part) in [("train", &train_set), ("val", &val_set), ("test", &test_set)] {
        let (t, s) = set_paths(&cfg.work_dir, name);
        write_corpus(part, &t, &s)?;
        println!("{name}={}", part.len());
        outputs.extend([t, s]);
    }
    Ok(StageRecord { inputs, outputs })
}

pub fn train_cmd(cfg: &RunConfig) -> Result<StageRecord> {
    let (train_set, mut inputs) = load_set(&cfg.work_dir, "train")?;
    let (val_set, val_inputs) = load_set(&cfg.work_dir, "val")?;
    inputs.extend(val_inputs);

    let ckpt_dir = cfg.work_dir.join(CHECKPOINT_DIR);
    std::fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io_at(&ckpt_dir, e))?;
    let mut model = Model::new(cfg.model(), cfg.seed)?;
    let mut outputs = Vec::new();
    let history_path = cfg.work_dir.join(HISTORY);
    let mut so_far = TrainingHistory::default();
    let result = train(
        &mut model,
        train_set.tensor(),
        val_set.tensor(),
        &cfg.train(),
        |m, rec| {
            let p = ckpt_dir.join(format!("epoch_{:03}.ckpt", rec.epoch));
            checkpoint::save(m, &p)?;
            outputs.push(p);
            so_far.epochs.push(rec.clone());
            write_text(&history_path, &so_far.to_csv())?;
            println!(
                "epoch {} train_loss={:e} val_loss={:e} wall_seconds={:.3}",
                rec.epoch, rec.train_loss, rec.val_loss, rec.wall_seconds
            );
            Ok(())
        },
    );
    let history = result?;
    write_text(&history_path, &history.to_csv())?;
    let model_path = cfg.work_dir.join(MODEL);
    checkpoint::save(&model, &model_path)?;
    outputs.extend([history_path, model_path]);
    Ok(StageRecord { inputs, outputs })
}

fn rmse_kind(cfg: &RunConfig) -> RmseKind {
    if cfg.masked_rmse {
        RmseKind::Masked
    } else {
        RmseKind::AllCells
    }
}

pub fn score(cfg: &RunConfig) -> Result<StageRecord> {
    let stats_path = cfg.work_dir.join(STATS);
    require(&stats_path, "normalization stats")?;
    NormalizationStats::load(&stats_path)?;
    let model_path = cfg.work_dir.join(MODEL);
    require(&model_path, "checkpoint")?;
    let model = checkpoint::load(&model_path)?;

    let set_name = match cfg.score_set {
        ScoreSet::All => CORPUS,
        other => other.name(),
    };
    let (set, mut inputs) = load_set(&cfg.work_dir, set_name)?;
    inputs.extend([stats_path, model_path]);
    if set.is_empty() {
        return Err(Error::Data(format!("the {} set is empty", cfg.score_set.name())));
    }
    let kind = rmse_kind(cfg);
    let scores = score_set(&model, &set, kind, cfg.per_feature_rmse)?;
    let values: Vec<f64> = scores.iter().map(|s| s.rmse).collect();
    let dist = fit_distribution(&values, cfg.histogram_bins)?;
    let threshold_dist = match cfg.threshold_stats {
        ThresholdStats::Scored => dist.clone(),
        ThresholdStats::Train => {
            let (train_set, train_inputs) = load_set(&cfg.work_dir, "train")?;
            inputs.extend(train_inputs);
            let train_scores = score_set(&model, &train_set, kind, false)?;
            let v: Vec<f64> = train_scores.iter().map(|s| s.rmse).collect();
            fit_distribution(&v, cfg.histogram_bins)?
        }
    };
    let outliers = flag_outliers(&scores, &threshold_dist, cfg.k)?;
    let offenders = offender_frequency(&outliers, cfg.min_appearances)?;

    let files = [
        (SCORES, scores_csv(&scores, kind)),
        (HISTOGRAM, histogram_csv(&dist.histogram)),
        (OUTLIERS, outliers_csv(&outliers)),
        (OFFENDERS, offenders_csv(&offenders)),
    ];
    let mut outputs = Vec::new();
    for (name, text) in files {
        let p = cfg.work_dir.join(name);
        write_text(&p, &text)?;
        outputs.push(p);
    }
    print_summary(&dist, &threshold_dist, cfg.k, outliers.flagged.len(), &offenders.persistent);
    Ok(StageRecord { inputs, outputs })
}

fn print_summary(
    dist: &ScoreDistribution,
    threshold_dist: &ScoreDistribution,
    k: f64,
    flagged: usize,
    persistent: &[(Mmsi, usize)],
) {
    println!(
        "scored={} mean={} std={} median={}",
        dist.count, dist.mean, dist.std, dist.median
    );
    println!(
        "threshold={} (mean {} + {k} x std {})",
        threshold_dist.mean + k * threshold_dist.std,
        threshold_dist.mean,
        threshold_dist.std
    );
    println!("flagged={flagged} persistent_offenders={}", persistent.len());
    for (m, c) in persistent {
        println!("  {m} flagged {c} times");
    }
}

fn parse_selection(text: &str) -> Result<Vec<(Mmsi, NaiveDate)>> {
    text.split(';')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|item| {
            let bad = || Error::Config(format!("selection item `{item}` is not mmsi:YYYY-MM-DD"));
            let (m, d) = item.split_once(':').ok_or_else(bad)?;
            let mmsi = Mmsi::parse(m.trim()).ok_or_else(bad)?;
            let day = d.trim().parse().map_err(|_| bad())?;
            Ok((mmsi, day))
        })
        .collect()
}

fn read_outlier_keys(path: &Path) -> Result<Vec<(Mmsi, NaiveDate)>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let bad = || Error::Data(format!("{}: bad row {}", path.display(), i + 1));
        let mmsi = row.get(1).and_then(Mmsi::parse).ok_or_else(bad)?;
        let day = row.get(2).and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        out.push((mmsi, day));
    }
    Ok(out)
}

pub fn export_geojson_cmd(cfg: &RunConfig) -> Result<StageRecord> {
    let stats_path = cfg.work_dir.join(STATS);
    require(&stats_path, "normalization stats")?;
    let stats = NormalizationStats::load(&stats_path)?;
    let (set, mut inputs) = load_set(&cfg.work_dir, CORPUS)?;
    inputs.push(stats_path);

    let scores_path = cfg.work_dir.join(SCORES);
    let scores: Vec<ScoreRecord> = if scores_path.exists() {
        inputs.push(scores_path.clone());
        read_scores_csv(&scores_path)?
    } else {
        Vec::new()
    };
    let selection = match cfg.geojson_select.trim() {
        "outliers" => {
            let p = cfg.work_dir.join(OUTLIERS);
            require(&p, "outlier list")?;
            inputs.push(p.clone());
            read_outlier_keys(&p)?
        }
        "all" => set.ids().iter().map(|id| (id.mmsi, id.day)).collect(),
        list => parse_selection(list)?,
    };
    let value = export_geojson(&set, &selection, &stats, &scores)?;
    let out = cfg.work_dir.join(&cfg.geojson_output);
    let text = serde_json::to_string_pretty(&value).expect("serializable");
    write_text(&out, &(text + "\n"))?;
    println!("exported {} vessel-day(s) to {}", selection.len(), out.display());
    Ok(StageRecord {
        inputs,
        outputs: vec![out],
    })
}

/// Re-thresholds an existing scores file with the configured `k` and
/// `min_appearances` and gathers earlier stage summaries into one report.
pub fn report(cfg: &RunConfig) -> Result<StageRecord> {
    let scores_path = cfg.work_dir.join(SCORES);
    require(&scores_path, "scores file")?;
    let scores = read_scores_csv(&scores_path)?;
    let values: Vec<f64> = scores.iter().map(|s| s.rmse).collect();
    let dist = fit_distribution(&values, cfg.histogram_bins)?;
    let outliers = flag_outliers(&scores, &dist, cfg.k)?;
    let offenders = offender_frequency(&outliers, cfg.min_appearances)?;
    let mut inputs = vec![scores_path];

    let mut pairs: Vec<(String, String)> = vec![
        ("scored".into(), dist.count.to_string()),
        ("rmse_mean".into(), dist.mean.to_string()),
        ("rmse_std".into(), dist.std.to_string()),
        ("rmse_median".into(), dist.median.to_string()),
        ("right_skewed".into(), (dist.mean > dist.median).to_string()),
        ("k".into(), cfg.k.to_string()),
        ("threshold".into(), outliers.threshold.to_string()),
        ("flagged".into(), outliers.flagged.len().to_string()),
        ("min_appearances".into(), cfg.min_appearances.to_string()),
        ("persistent_offenders".into(), offenders.persistent.len().to_string()),
    ];
    for (m, c) in &offenders.persistent {
        pairs.push((format!("offender.{m}"), c.to_string()));
    }
    for (name, prefix) in [(PREPROCESS_REPORT, "preprocess"), (STATS, "stats")] {
        let p = cfg.work_dir.join(name);
        if let Ok(text) = std::fs::read_to_string(&p) {
            for (k, v) in seawatch::kv::parse(&text)? {
                pairs.push((format!("{prefix}.{k}"), v));
            }
            inputs.push(p);
        }
    }
    let hist = cfg.work_dir.join(HISTORY);
    if let Ok(text) = std::fs::read_to_string(&hist) {
        if let Some(last) = text.lines().skip(1).filter(|l| !l.is_empty()).last() {
            let cols: Vec<&str> = last.split(',').collect();
            for (i, name) in ["epoch", "train_loss", "val_loss", "wall_seconds"].iter().enumerate() {
                if let Some(v) = cols.get(i) {
                    pairs.push((format!("train.final_{name}"), v.to_string()));
                }
            }
        }
        inputs.push(hist);
    }
    let text = seawatch::kv::render(pairs.iter().map(|(k, v)| (k.as_str(), v.clone())));
    let out = cfg.work_dir.join(REPORT);
    write_text(&out, &text)?;
    print!("{text}");
    Ok(StageRecord {
        inputs,
        outputs: vec![out],
    })
}

/// Writes a synthetic corpus as one AIS CSV per UTC day plus a labels file.
pub fn synth(cfg: &RunConfig) -> Result<StageRecord> {
    let corpus = generate(&cfg.synth())?;
    let dir = &cfg.synth_dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::io_at(dir, e))?;
    let mut by_day: BTreeMap<NaiveDate, Vec<VesselTrack>> = BTreeMap::new();
    for t in &corpus.tracks {
        let mut per_day: BTreeMap<NaiveDate, VesselTrack> = BTreeMap::new();
        for r in &t.records {
            per_day
                .entry(r.date())
                .or_insert_with(|| VesselTrack {
                    mmsi: t.mmsi,
                    records: Vec::new(),
                })
                .records
                .push(r.clone());
        }
        for (d, vt) in per_day {
            by_day.entry(d).or_default().push(vt);
        }
    }
    let mut outputs = Vec::new();
    for (day, tracks) in &by_day {
        let p = dir.join(format!("AIS_{}.csv", day.format("%Y_%m_%d")));
        let f = std::fs::File::create(&p).map_err(|e| Error::io_at(&p, e))?;
        write_tracks_csv(tracks, std::io::BufWriter::new(f))?;
        outputs.push(p);
    }
    let labels = cfg.synth_labels.clone();
    if let Some(parent) = labels.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io_at(parent, e))?;
    }
    write_text(&labels, &corpus.labels_csv())?;
    outputs.push(labels);
    let anomalous: HashSet<_> = corpus.labels.iter().filter(|l| l.anomalous).map(|l| (l.mmsi, l.day)).collect();
    println!(
        "wrote {} daily file(s), {} vessel-days, {} anomalous, to {}",
        by_day.len(),
        corpus.labels.len(),
        anomalous.len(),
        dir.display()
    );
    Ok(StageRecord {
        inputs: Vec::new(),
        outputs,
    })
}
