//! Synthetic AIS traffic with labelled teleport anomalies.
//!
//! Each vessel-day is a smooth constant-speed route with a slowly turning
//! heading, reported once per grid slot with a few seconds of jitter. An
//! anomalous day has a mid-day window whose positions are displaced by a
//! fixed jump of at least `min_jump_deg` degrees, after which the vessel
//! returns to its route.

use std::io::Write;

use chrono::{Days, NaiveDate};

use crate::ingest::{write_tracks_csv, AisRecord, Mmsi, VesselTrack};
use crate::preprocess::SLOT_SECONDS;
use crate::rng::SplitMix64;
use crate::{Error, Result, SLOTS_PER_DAY};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub vessels: usize,
    pub days_per_vessel: usize,
    pub start_day: NaiveDate,
    pub anomaly_fraction: f64,
    pub min_jump_deg: f64,
    pub max_jump_deg: f64,
    /// Reports land within this many seconds of the grid instant.
    pub jitter_secs: i64,
    /// Fraction of vessels given a length of 12 m.
    pub short_vessel_fraction: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            vessels: 100,
            days_per_vessel: 20,
            start_day: NaiveDate::from_ymd_opt(2019, 1, 1).expect("valid date"),
            anomaly_fraction: 0.02,
            min_jump_deg: 5.0,
            max_jump_deg: 8.0,
            jitter_secs: 45,
            short_vessel_fraction: 0.0,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vessels == 0 || self.days_per_vessel == 0 {
            return Err(Error::Config("synthetic corpus needs vessels and days".into()));
        }
        if !(0.0..=1.0).contains(&self.anomaly_fraction) || !(0.0..=1.0).contains(&self.short_vessel_fraction) {
            return Err(Error::Config("fractions must lie in [0, 1]".into()));
        }
        if !(self.min_jump_deg > 0.0 && self.max_jump_deg >= self.min_jump_deg) {
            return Err(Error::Config("need 0 < min_jump_deg <= max_jump_deg".into()));
        }
        if !(0..60).contains(&self.jitter_secs) {
            return Err(Error::Config("jitter_secs must be in [0, 60)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DayLabel {
    pub mmsi: Mmsi,
    pub day: NaiveDate,
    pub anomalous: bool,
    /// First displaced slot and window length, for anomalous days.
    pub window: Option<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub tracks: Vec<VesselTrack>,
    /// One label per vessel-day, ordered by (mmsi, day).
    pub labels: Vec<DayLabel>,
}

fn round_to(x: f64, decimals: i32) -> f64 {
    let p = 10f64.powi(decimals);
    (x * p).round() / p
}

struct Route {
    lat: f64,
    lon: f64,
    heading: f64,
    turn: f64,
    speed: f64,
    speed_wave: f64,
    phase: f64,
}

impl Route {
    fn sample(rng: &mut SplitMix64) -> Self {
        Self {
            lat: rng.uniform(32.0, 36.0),
            lon: rng.uniform(-122.0, -118.0),
            heading: rng.uniform(60.0, 300.0),
            turn: rng.uniform(-0.3, 0.3),
            speed: rng.uniform(3.0, 9.0),
            speed_wave: rng.uniform(0.0, 1.0),
            phase: rng.uniform(0.0, std::f64::consts::TAU),
        }
    }

    /// (lat, lon, sog, cog) at every slot.
    fn positions(&self, rng: &mut SplitMix64) -> Vec<[f64; 4]> {
        let (mut lat, mut lon, mut heading) = (self.lat, self.lon, self.heading);
        let mut out = Vec::with_capacity(SLOTS_PER_DAY);
        for t in 0..SLOTS_PER_DAY {
            let sog = (self.speed + self.speed_wave * (self.phase + t as f64 / 6.0).sin() + 0.2 * rng.normal()).max(0.0);
            let cog = heading + 0.5 * rng.normal();
            out.push([lat, lon, sog, cog]);
            // Knots over half an hour, in degrees of latitude.
            let deg = sog * 0.5 / 60.0;
            let h = heading.to_radians();
            lat += deg * h.cos();
            lon += deg * h.sin() / lat.to_radians().cos();
            heading += self.turn;
        }
        out
    }
}

/// Generates the corpus. Exactly `round(anomaly_fraction * total_days)`
/// days are anomalous.
pub fn generate(cfg: &SynthConfig) -> Result<SynthCorpus> {
    cfg.validate()?;
    let mut master = SplitMix64::new(cfg.seed);
    let mut pick = master.fork();
    let mut rng = master.fork();
    let total = cfg.vessels * cfg.days_per_vessel;
    let n_anom = (cfg.anomaly_fraction * total as f64).round() as usize;
    let mut order: Vec<usize> = (0..total).collect();
    pick.shuffle(&mut order);
    let mut anomalous = vec![false; total];
    for &i in &order[..n_anom] {
        anomalous[i] = true;
    }

    let mut tracks = Vec::with_capacity(cfg.vessels);
    let mut labels = Vec::with_capacity(total);
    for v in 0..cfg.vessels {
        let mmsi = Mmsi(366_000_000 + v as u32 * 17);
        let length = if rng.next_f64() < cfg.short_vessel_fraction {
            12.0
        } else {
            round_to(rng.uniform(25.0, 300.0), 0)
        };
        let mut records = Vec::with_capacity(cfg.days_per_vessel * SLOTS_PER_DAY);
        for d in 0..cfg.days_per_vessel {
            let day = cfg
                .start_day
                .checked_add_days(Days::new(d as u64))
                .ok_or_else(|| Error::Config("start_day out of range".into()))?;
            let midnight = day.and_hms_opt(0, 0, 0).expect("midnight").and_utc().timestamp();
            let mut pos = Route::sample(&mut rng).positions(&mut rng);
            let window = if anomalous[v * cfg.days_per_vessel + d] {
                let start = 12 + rng.below(8) as usize;
                let len = 12 + rng.below(13) as usize;
                let jump = rng.uniform(cfg.min_jump_deg, cfg.max_jump_deg);
                let angle = rng.uniform(0.0, std::f64::consts::TAU);
                for p in &mut pos[start..start + len] {
                    p[0] += jump * angle.cos();
                    p[1] += jump * angle.sin();
                }
                Some((start, len))
            } else {
                None
            };
            for (t, p) in pos.iter().enumerate() {
                let lo = if t == 0 { 0 } else { -cfg.jitter_secs };
                let jitter = lo + rng.below((cfg.jitter_secs - lo + 1) as u64) as i64;
                records.push(AisRecord {
                    mmsi,
                    timestamp: midnight + t as i64 * SLOT_SECONDS + jitter,
                    lat: round_to(p[0], 5),
                    lon: round_to(p[1], 5),
                    sog: round_to(p[2], 1),
                    cog: round_to(p[3].rem_euclid(360.0), 1) % 360.0,
                    length: Some(length),
                });
            }
            labels.push(DayLabel {
                mmsi,
                day,
                anomalous: window.is_some(),
                window,
            });
        }
        tracks.push(VesselTrack { mmsi, records });
    }
    Ok(SynthCorpus { tracks, labels })
}

impl SynthCorpus {
    pub fn write_ais_csv<W: Write>(&self, out: W) -> Result<()> {
        write_tracks_csv(&self.tracks, out)
    }

    pub fn labels_csv(&self) -> String {
        let mut s = String::from("mmsi,day,anomalous,window_start,window_len\n");
        for l in &self.labels {
            let (a, b) = l.window.map(|(a, b)| (a.to_string(), b.to_string())).unwrap_or_default();
            s.push_str(&format!("{},{},{},{a},{b}\n", l.mmsi, l.day, u8::from(l.anomalous)));
        }
        s
    }
}
