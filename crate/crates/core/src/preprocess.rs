//! Vessel tracks to normalized 48-slot daily feature grids.
//!
//! Stage order: resample onto the 30-minute grid, drop sparse days,
//! interpolate interior gaps, drop days with too many missing slots, then
//! min-max normalize with `-1` standing in for whatever is still missing.

use std::path::Path;

use chrono::NaiveDate;
use rayon::prelude::*;

use crate::ingest::{Mmsi, VesselTrack};
use crate::{kv, Error, Result, NUM_FEATURES, SENTINEL, SLOTS_PER_DAY};

pub const SLOT_SECONDS: i64 = 30 * 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Feature {
    Lat,
    Lon,
    Sog,
    Cog,
}

impl Feature {
    /// Tensor order.
    pub const ALL: [Feature; NUM_FEATURES] = [Feature::Lat, Feature::Lon, Feature::Sog, Feature::Cog];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Feature::Lat => "lat",
            Feature::Lon => "lon",
            Feature::Sog => "sog",
            Feature::Cog => "cog",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureTuple {
    pub lat: f64,
    pub lon: f64,
    pub sog: f64,
    pub cog: f64,
}

impl FeatureTuple {
    pub fn to_array(self) -> [f64; NUM_FEATURES] {
        [self.lat, self.lon, self.sog, self.cog]
    }

    pub fn from_array(a: [f64; NUM_FEATURES]) -> Self {
        Self {
            lat: a[0],
            lon: a[1],
            sog: a[2],
            cog: a[3],
        }
    }
}

/// One vessel's day on the 00:00-anchored 30-minute grid. Slot `i` covers
/// `00:00 + i * 30 min`; `None` marks a missing slot.
#[derive(Debug, Clone, PartialEq)]
pub struct DailyGrid {
    pub mmsi: Mmsi,
    pub day: NaiveDate,
    pub slots: [Option<FeatureTuple>; SLOTS_PER_DAY],
}

impl DailyGrid {
    pub fn empty(mmsi: Mmsi, day: NaiveDate) -> Self {
        Self {
            mmsi,
            day,
            slots: [None; SLOTS_PER_DAY],
        }
    }

    pub fn mask(&self) -> [bool; SLOTS_PER_DAY] {
        std::array::from_fn(|i| self.slots[i].is_some())
    }

    pub fn present(&self) -> usize {
        self.slots.iter().filter(|s| s.is_some()).count()
    }

    pub fn missing(&self) -> usize {
        SLOTS_PER_DAY - self.present()
    }
}

/// Tunables for the grid stages.
#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessConfig {
    /// Max distance in seconds between a report and the grid instant it fills.
    pub tolerance_secs: i64,
    /// Minimum present slots for a day to be kept before interpolation.
    pub min_entries: usize,
    /// Longest interior gap (in slots) that interpolation may fill.
    pub max_fill: usize,
    /// Days with a larger missing fraction after interpolation are dropped.
    pub max_missing_fraction: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            tolerance_secs: 60,
            min_entries: 20,
            max_fill: 20,
            max_missing_fraction: 0.30,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tolerance_secs < 0 {
            return Err(Error::Config("tolerance must be >= 0".into()));
        }
        if self.min_entries > SLOTS_PER_DAY {
            return Err(Error::Config(format!("min_entries must be <= {SLOTS_PER_DAY}")));
        }
        if !(0.0..=1.0).contains(&self.max_missing_fraction) {
            return Err(Error::Config("max_missing_fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

fn day_start(day: NaiveDate) -> i64 {
    day.and_hms_opt(0, 0, 0).expect("midnight").and_utc().timestamp()
}

/// Snaps the nearest report within `tolerance` seconds onto each grid
/// instant of `day`. Ties go to the earlier report; a report fills at most
/// one slot.
pub fn resample_daily(track: &VesselTrack, day: NaiveDate, tolerance: i64) -> DailyGrid {
    let mut grid = DailyGrid::empty(track.mmsi, day);
    let recs = &track.records;
    let start = day_start(day);
    let mut used_upto: Option<usize> = None;
    for (slot, cell) in grid.slots.iter_mut().enumerate() {
        let g = start + slot as i64 * SLOT_SECONDS;
        let lo = recs.partition_point(|r| r.timestamp < g - tolerance);
        let lo = match used_upto {
            Some(u) => lo.max(u + 1),
            None => lo,
        };
        let best = recs[lo.min(recs.len())..]
            .iter()
            .enumerate()
            .take_while(|(_, r)| r.timestamp <= g + tolerance)
            .min_by_key(|(_, r)| (r.timestamp - g).abs())
            .map(|(i, _)| lo + i);
        if let Some(i) = best {
            let r = &recs[i];
            *cell = Some(FeatureTuple {
                lat: r.lat,
                lon: r.lon,
                sog: r.sog,
                cog: r.cog,
            });
            used_upto = Some(i);
        }
    }
    grid
}

/// Keeps the grid iff it has at least `min_entries` present slots.
pub fn drop_sparse_day(grid: DailyGrid, min_entries: usize) -> Option<DailyGrid> {
    (grid.present() >= min_entries).then_some(grid)
}

/// Fills every interior run of missing slots no longer than `max_fill` by
/// per-feature linear interpolation over slot index. Leading and trailing
/// runs are never filled.
pub fn interpolate_gaps(mut grid: DailyGrid, max_fill: usize) -> DailyGrid {
    let mut prev: Option<usize> = None;
    for i in 0..SLOTS_PER_DAY {
        if grid.slots[i].is_none() {
            continue;
        }
        if let Some(p) = prev {
            let gap = i - p - 1;
            if gap > 0 && gap <= max_fill {
                let a = grid.slots[p].expect("present").to_array();
                let b = grid.slots[i].expect("present").to_array();
                let span = (i - p) as f64;
                for j in p + 1..i {
                    let w = (j - p) as f64 / span;
                    let v: [f64; NUM_FEATURES] = std::array::from_fn(|f| a[f] + (b[f] - a[f]) * w);
                    grid.slots[j] = Some(FeatureTuple::from_array(v));
                }
            }
        }
        prev = Some(i);
    }
    grid
}

pub fn exceeds_missing_fraction(grid: &DailyGrid, max_missing_fraction: f64) -> bool {
    grid.missing() as f64 / SLOTS_PER_DAY as f64 > max_missing_fraction
}

/// Per-feature global extrema for min-max scaling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizationStats {
    pub min: [f64; NUM_FEATURES],
    pub max: [f64; NUM_FEATURES],
}

impl NormalizationStats {
    pub fn new(min: [f64; NUM_FEATURES], max: [f64; NUM_FEATURES]) -> Result<Self> {
        for f in Feature::ALL {
            let (lo, hi) = (min[f.index()], max[f.index()]);
            if !lo.is_finite() || !hi.is_finite() {
                return Err(Error::Data(format!("feature `{}` has non-finite extrema", f.name())));
            }
            if hi <= lo {
                return Err(Error::DegenerateFeature(f.name()));
            }
        }
        Ok(Self { min, max })
    }

    /// Maps `x` into `[0, 1]`, clamping values outside the known range.
    /// Returns the scaled value and whether clamping happened.
    pub fn normalize(&self, x: f64, feature: Feature) -> (f64, bool) {
        let f = feature.index();
        let v = (x - self.min[f]) / (self.max[f] - self.min[f]);
        if v < 0.0 {
            (0.0, true)
        } else if v > 1.0 {
            (1.0, true)
        } else {
            (v, false)
        }
    }

    pub fn to_key_value(&self) -> String {
        let mut pairs = Vec::new();
        for f in Feature::ALL {
            pairs.push((format!("{}_min", f.name()), self.min[f.index()]));
            pairs.push((format!("{}_max", f.name()), self.max[f.index()]));
        }
        pairs.into_iter().map(|(k, v)| format!("{k}={v:?}\n")).collect()
    }

    pub fn from_key_value(text: &str) -> Result<Self> {
        let map = kv::parse(text)?;
        let mut min = [0.0; NUM_FEATURES];
        let mut max = [0.0; NUM_FEATURES];
        for f in Feature::ALL {
            min[f.index()] = kv::get_f64(&map, &format!("{}_min", f.name()))?;
            max[f.index()] = kv::get_f64(&map, &format!("{}_max", f.name()))?;
        }
        Self::new(min, max)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_key_value()).map_err(|e| Error::io_at(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io_at(path, e))?;
        Self::from_key_value(&text)
    }
}

/// Global extrema over all present cells of `days`.
pub fn compute_global_stats(days: &[DailyGrid]) -> Result<NormalizationStats> {
    let init = || ([f64::INFINITY; NUM_FEATURES], [f64::NEG_INFINITY; NUM_FEATURES]);
    let (min, max) = days
        .par_iter()
        .fold(init, |(mut lo, mut hi), g| {
            for t in g.slots.iter().flatten() {
                for (f, v) in t.to_array().into_iter().enumerate() {
                    lo[f] = lo[f].min(v);
                    hi[f] = hi[f].max(v);
                }
            }
            (lo, hi)
        })
        .reduce(init, |(mut lo, mut hi), (l2, h2)| {
            for f in 0..NUM_FEATURES {
                lo[f] = lo[f].min(l2[f]);
                hi[f] = hi[f].max(h2[f]);
            }
            (lo, hi)
        });
    for f in Feature::ALL {
        if min[f.index()] == f64::INFINITY {
            return Err(Error::Data(format!("feature `{}` has no present values", f.name())));
        }
    }
    NormalizationStats::new(min, max)
}

/// A normalized day: every cell is in `[0, 1]` or exactly [`SENTINEL`].
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedDay {
    pub mmsi: Mmsi,
    pub day: NaiveDate,
    pub matrix: [[f64; NUM_FEATURES]; SLOTS_PER_DAY],
}

impl NormalizedDay {
    pub fn flat(&self) -> impl Iterator<Item = f64> + '_ {
        self.matrix.iter().flat_map(|row| row.iter().copied())
    }
}

/// Scales present cells into `[0, 1]` and writes the sentinel into missing
/// ones. Returns the day and the number of clamped cells.
pub fn normalize_day(
    grid: &DailyGrid,
    stats: &NormalizationStats,
    max_missing_fraction: f64,
) -> Result<(NormalizedDay, usize)> {
    if exceeds_missing_fraction(grid, max_missing_fraction) {
        return Err(Error::TooManyMissing {
            missing: grid.missing(),
            slots: SLOTS_PER_DAY,
            limit: max_missing_fraction,
        });
    }
    let mut clamped = 0;
    let mut matrix = [[SENTINEL; NUM_FEATURES]; SLOTS_PER_DAY];
    for (row, slot) in matrix.iter_mut().zip(&grid.slots) {
        if let Some(t) = slot {
            let raw = t.to_array();
            for f in Feature::ALL {
                let (v, c) = stats.normalize(raw[f.index()], f);
                row[f.index()] = v;
                clamped += c as usize;
            }
        }
    }
    Ok((
        NormalizedDay {
            mmsi: grid.mmsi,
            day: grid.day,
            matrix,
        },
        clamped,
    ))
}

/// Inverse scaling; the sentinel passes through unchanged.
pub fn denormalize(value: f64, feature: Feature, stats: &NormalizationStats) -> f64 {
    if value == SENTINEL {
        return SENTINEL;
    }
    let f = feature.index();
    stats.min[f] + value * (stats.max[f] - stats.min[f])
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PreprocessReport {
    pub days_considered: usize,
    pub dropped_sparse: usize,
    pub dropped_missing_fraction: usize,
    pub days_kept: usize,
    pub slots_interpolated: usize,
    pub cells_clamped: usize,
    /// `missing_histogram[m]` counts kept days with `m` missing slots.
    pub missing_histogram: Vec<usize>,
}

impl PreprocessReport {
    pub fn to_key_value(&self) -> String {
        let mut s = kv::render([
            ("days_considered", self.days_considered.to_string()),
            ("dropped_sparse", self.dropped_sparse.to_string()),
            ("dropped_missing_fraction", self.dropped_missing_fraction.to_string()),
            ("days_kept", self.days_kept.to_string()),
            ("slots_interpolated", self.slots_interpolated.to_string()),
            ("cells_clamped", self.cells_clamped.to_string()),
        ]);
        for (m, n) in self.missing_histogram.iter().enumerate() {
            if *n > 0 {
                s.push_str(&format!("missing_slots.{m}={n}\n"));
            }
        }
        s
    }
}

fn prepare_track(track: &VesselTrack, cfg: &PreprocessConfig) -> (Vec<DailyGrid>, PreprocessReport) {
    let mut rep = PreprocessReport {
        missing_histogram: vec![0; SLOTS_PER_DAY + 1],
        ..Default::default()
    };
    let mut kept = Vec::new();
    for day in track.days() {
        rep.days_considered += 1;
        let grid = resample_daily(track, day, cfg.tolerance_secs);
        let Some(grid) = drop_sparse_day(grid, cfg.min_entries) else {
            rep.dropped_sparse += 1;
            continue;
        };
        let before = grid.present();
        let grid = interpolate_gaps(grid, cfg.max_fill);
        rep.slots_interpolated += grid.present() - before;
        if exceeds_missing_fraction(&grid, cfg.max_missing_fraction) {
            rep.dropped_missing_fraction += 1;
            continue;
        }
        rep.days_kept += 1;
        rep.missing_histogram[grid.missing()] += 1;
        kept.push(grid);
    }
    (kept, rep)
}

/// Runs the grid stages over all tracks (in parallel, merged in track order).
pub fn prepare_days(tracks: &[VesselTrack], cfg: &PreprocessConfig) -> (Vec<DailyGrid>, PreprocessReport) {
    let parts: Vec<_> = tracks.par_iter().map(|t| prepare_track(t, cfg)).collect();
    let mut grids = Vec::new();
    let mut report = PreprocessReport {
        missing_histogram: vec![0; SLOTS_PER_DAY + 1],
        ..Default::default()
    };
    for (mut g, r) in parts {
        grids.append(&mut g);
        report.days_considered += r.days_considered;
        report.dropped_sparse += r.dropped_sparse;
        report.dropped_missing_fraction += r.dropped_missing_fraction;
        report.days_kept += r.days_kept;
        report.slots_interpolated += r.slots_interpolated;
        for (a, b) in report.missing_histogram.iter_mut().zip(&r.missing_histogram) {
            *a += b;
        }
    }
    (grids, report)
}

/// Normalizes prepared grids. `report.cells_clamped` accumulates clamps.
pub fn normalize_days(
    grids: &[DailyGrid],
    stats: &NormalizationStats,
    max_missing_fraction: f64,
    report: &mut PreprocessReport,
) -> Result<Vec<NormalizedDay>> {
    let mut out = Vec::with_capacity(grids.len());
    for g in grids {
        let (d, c) = normalize_day(g, stats, max_missing_fraction)?;
        report.cells_clamped += c;
        out.push(d);
    }
    Ok(out)
}
