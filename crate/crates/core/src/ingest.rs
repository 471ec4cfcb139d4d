//! AIS CSV ingestion: parsing, validation, length filtering and per-vessel
//! grouping.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDate, NaiveDateTime};
use rayon::prelude::*;

use crate::{Error, Result};

/// Maritime Mobile Service Identity, a 9-digit transceiver id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Mmsi(pub u32);

impl Mmsi {
    pub const MAX: u32 = 999_999_999;

    pub fn parse(s: &str) -> Option<Self> {
        let s = s.trim();
        if s.is_empty() || s.len() > 9 || !s.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        let v: u32 = s.parse().ok()?;
        (v > 0).then_some(Mmsi(v))
    }
}

impl fmt::Display for Mmsi {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:09}", self.0)
    }
}

/// One validated AIS position report. `timestamp` is UTC seconds since the
/// Unix epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct AisRecord {
    pub mmsi: Mmsi,
    pub timestamp: i64,
    pub lat: f64,
    pub lon: f64,
    pub sog: f64,
    pub cog: f64,
    /// Vessel length in meters, `None` when the source field is blank.
    pub length: Option<f64>,
}

impl AisRecord {
    pub fn datetime(&self) -> NaiveDateTime {
        DateTime::from_timestamp(self.timestamp, 0)
            .expect("validated timestamp")
            .naive_utc()
    }

    pub fn date(&self) -> NaiveDate {
        self.datetime().date()
    }
}

/// All reports of one vessel, ascending by timestamp with unique timestamps.
#[derive(Debug, Clone, PartialEq)]
pub struct VesselTrack {
    pub mmsi: Mmsi,
    pub records: Vec<AisRecord>,
}

impl VesselTrack {
    /// Distinct UTC dates covered by the track, ascending.
    pub fn days(&self) -> Vec<NaiveDate> {
        let mut days: Vec<NaiveDate> = self.records.iter().map(AisRecord::date).collect();
        days.dedup();
        days
    }
}

/// Column names for each logical field. Defaults follow the
/// MarineCadastre export headers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AisSchema {
    pub mmsi: String,
    pub timestamp: String,
    pub lat: String,
    pub lon: String,
    pub sog: String,
    pub cog: String,
    pub length: String,
}

impl Default for AisSchema {
    fn default() -> Self {
        Self {
            mmsi: "MMSI".into(),
            timestamp: "BaseDateTime".into(),
            lat: "LAT".into(),
            lon: "LON".into(),
            sog: "SOG".into(),
            cog: "COG".into(),
            length: "Length".into(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct ColumnIndex {
    mmsi: usize,
    timestamp: usize,
    lat: usize,
    lon: usize,
    sog: usize,
    cog: usize,
    length: usize,
}

impl AisSchema {
    fn resolve(&self, header: &csv::StringRecord) -> Result<ColumnIndex> {
        let find = |name: &str| -> Result<usize> {
            let wanted = name.trim();
            header
                .iter()
                .position(|h| h.trim() == wanted)
                .or_else(|| {
                    header
                        .iter()
                        .position(|h| h.trim().eq_ignore_ascii_case(wanted))
                })
                .ok_or_else(|| Error::MissingColumn(name.to_string()))
        };
        Ok(ColumnIndex {
            mmsi: find(&self.mmsi)?,
            timestamp: find(&self.timestamp)?,
            lat: find(&self.lat)?,
            lon: find(&self.lon)?,
            sog: find(&self.sog)?,
            cog: find(&self.cog)?,
            length: find(&self.length)?,
        })
    }
}

/// Tallies for one ingestion run.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IngestReport {
    pub rows_read: usize,
    pub rows_accepted: usize,
    pub rows_rejected: usize,
    pub reject_reasons: BTreeMap<String, usize>,
    pub vessels_kept: usize,
    pub vessels_dropped_by_length: usize,
}

impl IngestReport {
    fn reject(&mut self, reason: &str) {
        self.rows_rejected += 1;
        *self.reject_reasons.entry(reason.to_string()).or_default() += 1;
    }

    pub fn merge(&mut self, other: &IngestReport) {
        self.rows_read += other.rows_read;
        self.rows_accepted += other.rows_accepted;
        self.rows_rejected += other.rows_rejected;
        for (k, v) in &other.reject_reasons {
            *self.reject_reasons.entry(k.clone()).or_default() += v;
        }
        self.vessels_kept += other.vessels_kept;
        self.vessels_dropped_by_length += other.vessels_dropped_by_length;
    }

    fn pairs(&self) -> Vec<(String, String)> {
        let mut v = vec![
            ("rows_read".to_string(), self.rows_read.to_string()),
            ("rows_accepted".to_string(), self.rows_accepted.to_string()),
            ("rows_rejected".to_string(), self.rows_rejected.to_string()),
            ("vessels_kept".to_string(), self.vessels_kept.to_string()),
            (
                "vessels_dropped_by_length".to_string(),
                self.vessels_dropped_by_length.to_string(),
            ),
        ];
        for (reason, n) in &self.reject_reasons {
            v.push((format!("reject.{reason}"), n.to_string()));
        }
        v
    }

    pub fn to_key_value(&self) -> String {
        self.pairs()
            .into_iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("key,value\n");
        for (k, v) in self.pairs() {
            s.push_str(&format!("{k},{v}\n"));
        }
        s
    }
}

fn parse_timestamp(raw: &str) -> Option<i64> {
    let raw = raw.trim();
    ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S"]
        .iter()
        .find_map(|fmt| NaiveDateTime::parse_from_str(raw, fmt).ok())
        .map(|dt| dt.and_utc().timestamp())
}

pub fn format_timestamp(ts: i64) -> String {
    DateTime::from_timestamp(ts, 0)
        .map(|dt| dt.format("%Y-%m-%dT%H:%M:%S").to_string())
        .unwrap_or_default()
}

fn parse_finite(raw: &str) -> Option<f64> {
    raw.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

fn parse_row(row: &csv::StringRecord, cols: ColumnIndex) -> std::result::Result<AisRecord, &'static str> {
    let field = |i: usize| row.get(i).ok_or("missing_field");

    let mmsi = Mmsi::parse(field(cols.mmsi)?).ok_or("mmsi_invalid")?;
    let timestamp = parse_timestamp(field(cols.timestamp)?).ok_or("timestamp_unparsable")?;

    let lat = parse_finite(field(cols.lat)?).ok_or("lat_unparsable")?;
    if !(-90.0..=90.0).contains(&lat) {
        return Err("lat_out_of_range");
    }
    let lon = parse_finite(field(cols.lon)?).ok_or("lon_unparsable")?;
    if !(-180.0..=180.0).contains(&lon) {
        return Err("lon_out_of_range");
    }
    let sog = parse_finite(field(cols.sog)?).ok_or("sog_unparsable")?;
    if sog < 0.0 {
        return Err("sog_out_of_range");
    }
    let mut cog = parse_finite(field(cols.cog)?).ok_or("cog_unparsable")?;
    if !(0.0..=360.0).contains(&cog) {
        return Err("cog_out_of_range");
    }
    if cog == 360.0 {
        cog = 0.0;
    }
    let raw_len = field(cols.length)?.trim();
    let length = if raw_len.is_empty() {
        None
    } else {
        let l = parse_finite(raw_len).ok_or("length_unparsable")?;
        if l < 0.0 {
            return Err("length_out_of_range");
        }
        Some(l)
    };

    Ok(AisRecord {
        mmsi,
        timestamp,
        lat,
        lon,
        sog,
        cog,
        length,
    })
}

/// Parses one CSV stream. Row-level problems are tallied in the report;
/// only a missing column or a failing reader is an error.
pub fn parse_ais_csv<R: Read>(source: R, schema: &AisSchema) -> Result<(Vec<AisRecord>, IngestReport)> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .has_headers(true)
        .from_reader(source);
    let header = match reader.headers() {
        Ok(h) => h.clone(),
        Err(e) => return Err(fatal_or_header(e)),
    };
    if header.is_empty() || header.iter().all(|h| h.trim().is_empty()) {
        return Err(Error::MissingColumn(schema.mmsi.clone()));
    }
    let cols = schema.resolve(&header)?;

    let mut records = Vec::new();
    let mut report = IngestReport::default();
    let mut row = csv::StringRecord::new();
    loop {
        match reader.read_record(&mut row) {
            Ok(false) => break,
            Ok(true) => {
                report.rows_read += 1;
                match parse_row(&row, cols) {
                    Ok(rec) => {
                        report.rows_accepted += 1;
                        records.push(rec);
                    }
                    Err(reason) => report.reject(reason),
                }
            }
            Err(e) => match e.kind() {
                csv::ErrorKind::Io(_) => return Err(e.into()),
                _ => {
                    report.rows_read += 1;
                    report.reject("malformed_row");
                    if e.position().is_none() {
                        // Reader cannot resynchronize without a position.
                        break;
                    }
                }
            },
        }
    }
    Ok((records, report))
}

fn fatal_or_header(e: csv::Error) -> Error {
    match e.kind() {
        csv::ErrorKind::Io(_) => e.into(),
        _ => Error::Data(format!("unreadable header: {e}")),
    }
}

/// Parses several files in parallel; results are merged in the given order.
pub fn parse_ais_files(paths: &[PathBuf], schema: &AisSchema) -> Result<(Vec<AisRecord>, IngestReport)> {
    let parsed: Vec<Result<(Vec<AisRecord>, IngestReport)>> = paths
        .par_iter()
        .map(|p| {
            let f = std::fs::File::open(p).map_err(|e| Error::io_at(p, e))?;
            parse_ais_csv(std::io::BufReader::new(f), schema).map_err(|e| match e {
                Error::Io(io) => Error::io_at(p, io),
                other => other,
            })
        })
        .collect();
    let mut records = Vec::new();
    let mut report = IngestReport::default();
    for part in parsed {
        let (mut r, rep) = part?;
        records.append(&mut r);
        report.merge(&rep);
    }
    Ok((records, report))
}

/// Keeps records of vessels strictly longer than `min_length` meters.
/// Records with unknown length are dropped.
pub fn filter_by_length(records: Vec<AisRecord>, min_length: f64) -> Vec<AisRecord> {
    records
        .into_iter()
        .filter(|r| matches!(r.length, Some(l) if l > min_length))
        .collect()
}

/// [`filter_by_length`] plus vessel tallies in `report`.
pub fn filter_by_length_reported(
    records: Vec<AisRecord>,
    min_length: f64,
    report: &mut IngestReport,
) -> Vec<AisRecord> {
    let before: BTreeSet<Mmsi> = records.iter().map(|r| r.mmsi).collect();
    let kept = filter_by_length(records, min_length);
    let after: BTreeSet<Mmsi> = kept.iter().map(|r| r.mmsi).collect();
    report.vessels_kept = after.len();
    report.vessels_dropped_by_length = before.len() - after.len();
    kept
}

/// Groups records per MMSI (tracks ascending by MMSI), sorts each track by
/// time and keeps the first record in input order for duplicate timestamps.
pub fn group_and_sort(records: Vec<AisRecord>) -> Vec<VesselTrack> {
    group_and_sort_counted(records).0
}

/// Like [`group_and_sort`], also returning the number of duplicates removed.
pub fn group_and_sort_counted(records: Vec<AisRecord>) -> (Vec<VesselTrack>, usize) {
    let mut by_vessel: BTreeMap<Mmsi, Vec<AisRecord>> = BTreeMap::new();
    for r in records {
        by_vessel.entry(r.mmsi).or_default().push(r);
    }
    let mut duplicates = 0;
    let tracks = by_vessel
        .into_iter()
        .map(|(mmsi, mut recs)| {
            recs.sort_by_key(|r| r.timestamp);
            let before = recs.len();
            recs.dedup_by_key(|r| r.timestamp);
            duplicates += before - recs.len();
            VesselTrack { mmsi, records: recs }
        })
        .collect();
    (tracks, duplicates)
}

/// [`group_and_sort`] moving duplicates from accepted to rejected in `report`.
pub fn group_and_sort_reported(records: Vec<AisRecord>, report: &mut IngestReport) -> Vec<VesselTrack> {
    let (tracks, dups) = group_and_sort_counted(records);
    if dups > 0 {
        report.rows_accepted -= dups;
        report.rows_rejected += dups;
        *report
            .reject_reasons
            .entry("duplicate_timestamp".to_string())
            .or_default() += dups;
    }
    tracks
}

/// Writes tracks back out as a CSV in the default schema, one row per record
/// in track order. The output parses with [`parse_ais_csv`].
pub fn write_tracks_csv<W: Write>(tracks: &[VesselTrack], out: W) -> Result<()> {
    let s = AisSchema::default();
    let mut w = csv::Writer::from_writer(out);
    w.write_record([&s.mmsi, &s.timestamp, &s.lat, &s.lon, &s.sog, &s.cog, &s.length])?;
    for t in tracks {
        for r in &t.records {
            w.write_record([
                r.mmsi.to_string(),
                format_timestamp(r.timestamp),
                r.lat.to_string(),
                r.lon.to_string(),
                r.sog.to_string(),
                r.cog.to_string(),
                r.length.map(|l| l.to_string()).unwrap_or_default(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_tracks_csv(path: &Path) -> Result<Vec<VesselTrack>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io_at(path, e))?;
    let (records, report) = parse_ais_csv(std::io::BufReader::new(f), &AisSchema::default())?;
    if report.rows_rejected > 0 {
        return Err(Error::Data(format!(
            "{}: track store has {} invalid rows",
            path.display(),
            report.rows_rejected
        )));
    }
    Ok(group_and_sort(records))
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "MMSI,BaseDateTime,LAT,LON,SOG,COG,Heading,VesselName,Length\n";

    fn parse(body: &str) -> (Vec<AisRecord>, IngestReport) {
        parse_ais_csv(format!("{HEADER}{body}").as_bytes(), &AisSchema::default()).unwrap()
    }

    fn rec(mmsi: u32, ts: i64, len: Option<f64>) -> AisRecord {
        AisRecord {
            mmsi: Mmsi(mmsi),
            timestamp: ts,
            lat: 10.0,
            lon: 20.0,
            sog: 5.0,
            cog: 90.0,
            length: len,
        }
    }

    #[test]
    fn latitude_out_of_range_is_rejected() {
        let (recs, rep) = parse("367000001,2019-03-06T00:00:00,91.0,-70.0,10,90,511,X,100\n");
        assert!(recs.is_empty());
        assert_eq!(rep.rows_rejected, 1);
        assert_eq!(rep.reject_reasons["lat_out_of_range"], 1);
    }

    #[test]
    fn header_only() {
        let (recs, rep) = parse("");
        assert!(recs.is_empty());
        assert_eq!(rep.rows_read, 0);
    }

    #[test]
    fn five_rows_one_bad_timestamp() {
        let body = "\
367000001,2019-03-06T00:00:00,40.0,-70.0,10,90,511,X,100
367000001,2019-03-06T00:30:00,40.1,-70.0,10,90,511,X,100
367000001,2019-03-06 01:00:00,40.2,-70.0,10,90,511,X,100
367000002,2019-03-06T25:00:00,40.0,-71.0,10,90,511,Y,50
367000002,2019-03-06T01:30:00,40.0,-71.0,10,90,511,Y,50
";
        let (recs, rep) = parse(body);
        assert_eq!(recs.len(), 4);
        assert_eq!(rep.rows_rejected, 1);
        assert_eq!(rep.reject_reasons["timestamp_unparsable"], 1);
        assert_eq!(rep.rows_read, rep.rows_accepted + rep.rows_rejected);
    }

    #[test]
    fn cog_360_wraps_and_blank_length_is_unknown() {
        let (recs, _) = parse("367000001,2019-03-06T00:00:00,40.0,-70.0,10,360,511,X,\n");
        assert_eq!(recs[0].cog, 0.0);
        assert_eq!(recs[0].length, None);
        let (recs, rep) = parse("367000001,2019-03-06T00:00:00,40.0,-70.0,10,360.5,511,X,3\n");
        assert!(recs.is_empty());
        assert_eq!(rep.reject_reasons["cog_out_of_range"], 1);
    }

    #[test]
    fn reordered_columns_via_schema() {
        let text = "len,lon,lat,t,id,sog,cog\n30,-70,40,2019-03-06T00:00:00,367000001,3,4\n";
        let schema = AisSchema {
            mmsi: "id".into(),
            timestamp: "t".into(),
            lat: "lat".into(),
            lon: "lon".into(),
            sog: "sog".into(),
            cog: "cog".into(),
            length: "len".into(),
        };
        let (recs, _) = parse_ais_csv(text.as_bytes(), &schema).unwrap();
        assert_eq!(recs[0].lat, 40.0);
        assert_eq!(recs[0].lon, -70.0);
        assert_eq!(recs[0].length, Some(30.0));
    }

    #[test]
    fn missing_column_is_fatal() {
        let err = parse_ais_csv("MMSI,LAT\n".as_bytes(), &AisSchema::default()).unwrap_err();
        assert!(matches!(err, Error::MissingColumn(c) if c == "BaseDateTime"));
    }

    #[test]
    fn short_row_is_tallied() {
        let (recs, rep) = parse("367000001,2019-03-06T00:00:00,40.0\n");
        assert!(recs.is_empty());
        assert_eq!(rep.reject_reasons["missing_field"], 1);
    }

    #[test]
    fn length_filter_is_strict() {
        let kept = filter_by_length(vec![rec(1, 0, Some(20.0)), rec(2, 0, Some(250.0)), rec(3, 0, None)], 20.0);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].mmsi, Mmsi(2));
    }

    #[test]
    fn length_filter_fixture() {
        let lens = [25.0, 10.0, 300.0, 20.0, 21.0, 19.9, 150.0, 80.0, 45.0, 33.0];
        let recs: Vec<_> = lens.iter().enumerate().map(|(i, &l)| rec(i as u32 + 1, 0, Some(l))).collect();
        let mut report = IngestReport::default();
        let kept = filter_by_length_reported(recs, 20.0, &mut report);
        assert_eq!(kept.len(), 7);
        assert_eq!(report.vessels_kept, 7);
        assert_eq!(report.vessels_dropped_by_length, 3);
    }

    #[test]
    fn sorts_within_track() {
        let tracks = group_and_sort(vec![rec(5, 3, None), rec(5, 1, None), rec(5, 2, None)]);
        assert_eq!(tracks.len(), 1);
        let ts: Vec<i64> = tracks[0].records.iter().map(|r| r.timestamp).collect();
        assert_eq!(ts, vec![1, 2, 3]);
    }

    #[test]
    fn duplicate_timestamp_first_wins() {
        let mut a = rec(5, 10, None);
        a.sog = 1.0;
        let mut b = rec(5, 10, None);
        b.sog = 2.0;
        let mut report = IngestReport {
            rows_read: 2,
            rows_accepted: 2,
            ..Default::default()
        };
        let tracks = group_and_sort_reported(vec![a, b], &mut report);
        assert_eq!(tracks[0].records.len(), 1);
        assert_eq!(tracks[0].records[0].sog, 1.0);
        assert_eq!(report.reject_reasons["duplicate_timestamp"], 1);
        assert_eq!(report.rows_read, report.rows_accepted + report.rows_rejected);
    }

    #[test]
    fn interleaved_vessels() {
        let recs = vec![
            rec(3, 5, None),
            rec(1, 4, None),
            rec(2, 9, None),
            rec(1, 1, None),
            rec(3, 2, None),
            rec(2, 3, None),
        ];
        let tracks = group_and_sort(recs);
        let ids: Vec<u32> = tracks.iter().map(|t| t.mmsi.0).collect();
        assert_eq!(ids, vec![1, 2, 3]);
        for t in &tracks {
            assert_eq!(t.records.len(), 2);
            assert!(t.records[0].timestamp < t.records[1].timestamp);
        }
    }

    #[test]
    fn report_renders() {
        let (_, rep) = parse("367000001,2019-03-06T00:00:00,91.0,-70.0,10,90,511,X,100\n");
        let kv = rep.to_key_value();
        assert!(kv.contains("rows_read=1\n"));
        assert!(kv.contains("reject.lat_out_of_range=1\n"));
        assert!(rep.to_csv().starts_with("key,value\nrows_read,1\n"));
    }

    #[test]
    fn tracks_csv_round_trip() {
        let (recs, _) = parse(
            "367000001,2019-03-06T00:00:00,40.5,-70.25,10.1,90,511,X,100\n\
             367000002,2019-03-06T00:30:00,41.0,-71.0,0,0,511,Y,50.5\n",
        );
        let tracks = group_and_sort(recs);
        let mut buf = Vec::new();
        write_tracks_csv(&tracks, &mut buf).unwrap();
        let (again, rep) = parse_ais_csv(buf.as_slice(), &AisSchema::default()).unwrap();
        assert_eq!(rep.rows_rejected, 0);
        assert_eq!(group_and_sort(again), tracks);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn parsing_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..400)) {
                let mut input = HEADER.as_bytes().to_vec();
                input.extend(bytes);
                if let Ok((recs, rep)) = parse_ais_csv(input.as_slice(), &AisSchema::default()) {
                    prop_assert_eq!(rep.rows_read, rep.rows_accepted + rep.rows_rejected);
                    prop_assert_eq!(recs.len(), rep.rows_accepted);
                    for r in recs {
                        prop_assert!((-90.0..=90.0).contains(&r.lat));
                        prop_assert!((-180.0..=180.0).contains(&r.lon));
                        prop_assert!((0.0..360.0).contains(&r.cog));
                    }
                }
            }

            #[test]
            fn length_filter_idempotent(lens in proptest::collection::vec(proptest::option::of(0.0f64..60.0), 0..40), min in 0.0f64..40.0) {
                let recs: Vec<_> = lens.iter().enumerate().map(|(i, l)| rec(i as u32 + 1, 0, *l)).collect();
                let once = filter_by_length(recs, min);
                let twice = filter_by_length(once.clone(), min);
                prop_assert_eq!(once, twice);
            }

            #[test]
            fn grouping_preserves_multiset(items in proptest::collection::vec((1u32..5, 0i64..20), 0..60)) {
                let recs: Vec<_> = items.iter().map(|&(m, t)| rec(m, t, None)).collect();
                let mut expected: Vec<(u32, i64)> = items.clone();
                expected.sort_unstable();
                expected.dedup();
                let mut got: Vec<(u32, i64)> = group_and_sort(recs)
                    .into_iter()
                    .flat_map(|t| t.records.into_iter().map(|r| (r.mmsi.0, r.timestamp)))
                    .collect();
                got.sort_unstable();
                prop_assert_eq!(got, expected);
            }
        }
    }
}
