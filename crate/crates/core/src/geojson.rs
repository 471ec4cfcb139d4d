//! GeoJSON export of vessel-day tracks.

use std::collections::HashMap;

use chrono::NaiveDate;
use serde_json::{json, Value};

use crate::detect::ScoreRecord;
use crate::ingest::Mmsi;
use crate::preprocess::{denormalize, Feature, NormalizationStats};
use crate::sequence::SequenceSet;
use crate::{Error, Result, NUM_FEATURES, SENTINEL, SLOTS_PER_DAY};

/// Denormalized `[lon, lat]` positions of one sequence, missing slots omitted.
pub fn track_coordinates(row: &[f64], stats: &NormalizationStats) -> Vec<[f64; 2]> {
    (0..SLOTS_PER_DAY)
        .filter_map(|t| {
            let lat = row[t * NUM_FEATURES + Feature::Lat.index()];
            let lon = row[t * NUM_FEATURES + Feature::Lon.index()];
            (lat != SENTINEL && lon != SENTINEL).then(|| {
                [
                    denormalize(lon, Feature::Lon, stats),
                    denormalize(lat, Feature::Lat, stats),
                ]
            })
        })
        .collect()
}

/// A FeatureCollection with one LineString per selected vessel-day, in
/// selection order. Scores, when given, become the `rmse` property.
pub fn export_geojson(
    set: &SequenceSet,
    selection: &[(Mmsi, NaiveDate)],
    stats: &NormalizationStats,
    scores: &[ScoreRecord],
) -> Result<Value> {
    let index: HashMap<(Mmsi, NaiveDate), usize> = set
        .ids()
        .iter()
        .enumerate()
        .map(|(i, id)| ((id.mmsi, id.day), i))
        .collect();
    let rmse: HashMap<(Mmsi, NaiveDate), f64> = scores.iter().map(|s| ((s.mmsi, s.day), s.rmse)).collect();

    let mut features = Vec::with_capacity(selection.len());
    for key in selection {
        let &i = index
            .get(key)
            .ok_or_else(|| Error::Data(format!("vessel-day {} {} not in corpus", key.0, key.1)))?;
        let coords = track_coordinates(set.row(i), stats);
        if coords.len() < 2 {
            return Err(Error::Data(format!(
                "vessel-day {} {} has {} positions, a line needs 2",
                key.0,
                key.1,
                coords.len()
            )));
        }
        features.push(json!({
            "type": "Feature",
            "geometry": { "type": "LineString", "coordinates": coords },
            "properties": {
                "mmsi": key.0.to_string(),
                "day": key.1.to_string(),
                "rmse": rmse.get(key),
            },
        }));
    }
    Ok(json!({ "type": "FeatureCollection", "features": features }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sequence::SequenceId;

    fn stats() -> NormalizationStats {
        NormalizationStats::new([30.0, -120.0, 0.0, 0.0], [40.0, -110.0, 20.0, 359.0]).unwrap()
    }

    fn set() -> SequenceSet {
        let mut data = vec![0.5; SLOTS_PER_DAY * NUM_FEATURES];
        for f in 0..NUM_FEATURES {
            data[3 * NUM_FEATURES + f] = SENTINEL;
        }
        data[0] = 0.0;
        data[1] = 1.0;
        let id = SequenceId {
            mmsi: Mmsi(123456789),
            day: NaiveDate::from_ymd_opt(2020, 1, 2).unwrap(),
        };
        SequenceSet::from_parts(data, vec![id]).unwrap()
    }

    #[test]
    fn line_string_in_lon_lat_order() {
        let s = set();
        let key = (Mmsi(123456789), NaiveDate::from_ymd_opt(2020, 1, 2).unwrap());
        let score = ScoreRecord {
            mmsi: key.0,
            day: key.1,
            rmse: 0.25,
            feature_rmse: None,
        };
        let v = export_geojson(&s, &[key], &stats(), &[score]).unwrap();
        assert_eq!(v["type"], "FeatureCollection");
        let f = &v["features"][0];
        assert_eq!(f["geometry"]["type"], "LineString");
        let coords = f["geometry"]["coordinates"].as_array().unwrap();
        assert_eq!(coords.len(), SLOTS_PER_DAY - 1);
        assert_eq!(coords[0], json!([-110.0, 30.0]));
        assert_eq!(coords[1], json!([-115.0, 35.0]));
        assert_eq!(f["properties"]["mmsi"], "123456789");
        assert_eq!(f["properties"]["day"], "2020-01-02");
        assert_eq!(f["properties"]["rmse"], 0.25);
    }

    #[test]
    fn unknown_selection_is_an_error() {
        let key = (Mmsi(1), NaiveDate::from_ymd_opt(2020, 1, 2).unwrap());
        assert!(export_geojson(&set(), &[key], &stats(), &[]).is_err());
    }

    #[test]
    fn empty_selection_gives_empty_collection() {
        let v = export_geojson(&set(), &[], &stats(), &[]).unwrap();
        assert_eq!(v["features"].as_array().unwrap().len(), 0);
    }
}
