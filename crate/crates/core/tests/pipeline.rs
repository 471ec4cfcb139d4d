use std::collections::HashSet;

use seawatch::detect::{fit_distribution, flag_outliers, read_scores_csv, score_set, scores_csv, RmseKind};
use seawatch::geojson::{export_geojson, track_coordinates};
use seawatch::ingest::{filter_by_length, group_and_sort, parse_ais_files, AisSchema};
use seawatch::io::{read_corpus, write_corpus};
use seawatch::nn::{checkpoint, evaluate, train, CellKind, LossKind, Model, ModelConfig, TrainConfig};
use seawatch::preprocess::{compute_global_stats, normalize_days, prepare_days, NormalizationStats, PreprocessConfig};
use seawatch::sequence::{assemble, split, SplitSpec};
use seawatch::synth::{generate, SynthConfig};
use seawatch::SENTINEL;

fn corpus_cfg() -> SynthConfig {
    SynthConfig {
        vessels: 8,
        days_per_vessel: 4,
        anomaly_fraction: 0.125,
        short_vessel_fraction: 0.25,
        seed: 21,
        ..SynthConfig::default()
    }
}

#[test]
fn files_to_sequences_to_scores() {
    let dir = tempfile::tempdir().unwrap();
    let synth = generate(&corpus_cfg()).unwrap();
    let ais = dir.path().join("ais.csv");
    synth.write_ais_csv(std::fs::File::create(&ais).unwrap()).unwrap();

    let (records, report) = parse_ais_files(&[ais], &AisSchema::default()).unwrap();
    assert_eq!(report.rows_rejected, 0);
    assert_eq!(records.len(), 8 * 4 * 48);
    let tracks = group_and_sort(filter_by_length(records, 20.0));
    let short: HashSet<_> = synth
        .tracks
        .iter()
        .filter(|t| t.records[0].length == Some(12.0))
        .map(|t| t.mmsi)
        .collect();
    assert_eq!(tracks.len(), 8 - short.len());
    assert!(tracks.iter().all(|t| !short.contains(&t.mmsi)));

    let cfg = PreprocessConfig::default();
    let (grids, mut prep) = prepare_days(&tracks, &cfg);
    let stats = compute_global_stats(&grids).unwrap();
    let days = normalize_days(&grids, &stats, cfg.max_missing_fraction, &mut prep).unwrap();
    let set = assemble(&days);
    assert_eq!(set.len(), tracks.len() * 4);
    assert!(set.data().iter().all(|v| (0.0..=1.0).contains(v)));

    // Corpus and stats survive a trip through disk.
    let (bin, ids) = (dir.path().join("c.bin"), dir.path().join("c_ids.csv"));
    write_corpus(&set, &bin, &ids).unwrap();
    let back = read_corpus(&bin, &ids).unwrap();
    assert_eq!(back.ids(), set.ids());
    assert_eq!(back.data(), set.data());
    let sp = dir.path().join("stats.txt");
    stats.save(&sp).unwrap();
    assert_eq!(NormalizationStats::load(&sp).unwrap(), stats);

    let (tr, va, te) = split(&set, &SplitSpec::default()).unwrap();
    assert_eq!(tr.len() + va.len() + te.len(), set.len());

    let mut model = Model::new(
        ModelConfig {
            hidden: 4,
            ..ModelConfig::bidirectional(CellKind::Gru)
        },
        3,
    )
    .unwrap();
    let history = train(
        &mut model,
        tr.tensor(),
        va.tensor(),
        &TrainConfig {
            epochs: 2,
            batch_size: 8,
            threads: 1,
            ..TrainConfig::default()
        },
        |_, _| Ok(()),
    )
    .unwrap();
    assert_eq!(history.epochs.len(), 2);

    // Checkpoints reproduce the model exactly.
    let ck = dir.path().join("m.ckpt");
    checkpoint::save(&model, &ck).unwrap();
    let loaded = checkpoint::load(&ck).unwrap();
    assert_eq!(
        evaluate(&loaded, va.tensor(), LossKind::Mse).unwrap(),
        evaluate(&model, va.tensor(), LossKind::Mse).unwrap()
    );

    let scores = score_set(&loaded, &set, RmseKind::AllCells, true).unwrap();
    assert_eq!(scores.len(), set.len());
    let csv_path = dir.path().join("scores.csv");
    std::fs::write(&csv_path, scores_csv(&scores, RmseKind::AllCells)).unwrap();
    let reread = read_scores_csv(&csv_path).unwrap();
    assert_eq!(reread.iter().map(|s| s.rmse).collect::<Vec<_>>(), scores.iter().map(|s| s.rmse).collect::<Vec<_>>());

    let values: Vec<f64> = scores.iter().map(|s| s.rmse).collect();
    let dist = fit_distribution(&values, 10).unwrap();
    assert_eq!(dist.histogram.counts.iter().sum::<usize>(), scores.len());
    let flagged = flag_outliers(&scores, &dist, 0.5).unwrap().flagged;
    assert!(flagged.iter().all(|r| r.rmse > dist.mean + 0.5 * dist.std));

    let sel: Vec<_> = flagged.iter().map(|r| (r.mmsi, r.day)).collect();
    let geo = export_geojson(&set, &sel, &stats, &scores).unwrap();
    assert_eq!(geo["features"].as_array().unwrap().len(), sel.len());
}

#[test]
fn geojson_coordinates_recover_reported_positions() {
    let synth = generate(&corpus_cfg()).unwrap();
    let cfg = PreprocessConfig::default();
    let (grids, mut prep) = prepare_days(&synth.tracks, &cfg);
    let stats = compute_global_stats(&grids).unwrap();
    let days = normalize_days(&grids, &stats, cfg.max_missing_fraction, &mut prep).unwrap();
    let set = assemble(&days);
    let first = &synth.tracks[0].records[..48];
    let coords = track_coordinates(set.row(0), &stats);
    assert_eq!(coords.len(), 48);
    for (c, r) in coords.iter().zip(first) {
        assert!((c[0] - r.lon).abs() < 1e-9 && (c[1] - r.lat).abs() < 1e-9);
    }

    // Sentinel cells are skipped.
    let mut row = set.row(0).to_vec();
    for v in &mut row[40 * 4..] {
        *v = SENTINEL;
    }
    assert_eq!(track_coordinates(&row, &stats).len(), 40);
}
