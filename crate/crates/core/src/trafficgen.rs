//! Synthetic demand: bimodal hourly totals, zone-weight patterns, turn
//! splits, per-vehicle departures and per-minute TMC aggregation.
//!
//! Every stage conserves vehicles, so the hour totals, zone totals, movement
//! totals, plan count and the sum of the per-minute tables all agree.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::apportion::apportion;
use crate::error::{Error, Result};
use crate::model::{tmc_header, Movement, TmcTable, Turn, Zone};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HourKind {
    Offpeak,
    Peak,
}

/// Hourly vehicle totals drawn from one of two normal laws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BimodalProfile {
    pub mu_offpeak: f64,
    pub sigma_offpeak: f64,
    pub mu_peak: f64,
    pub sigma_peak: f64,
    pub hours: Vec<HourKind>,
}

impl Default for BimodalProfile {
    fn default() -> Self {
        BimodalProfile {
            mu_offpeak: 2500.0,
            sigma_offpeak: 300.0,
            mu_peak: 20000.0,
            sigma_peak: 400.0,
            hours: vec![
                HourKind::Offpeak,
                HourKind::Peak,
                HourKind::Peak,
                HourKind::Offpeak,
            ],
        }
    }
}

impl BimodalProfile {
    pub fn constant(kind: HourKind, hours: usize) -> Self {
        BimodalProfile {
            hours: vec![kind; hours],
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let params = [
            self.mu_offpeak,
            self.sigma_offpeak,
            self.mu_peak,
            self.sigma_peak,
        ];
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidProfile("parameters must be finite".into()));
        }
        if self.sigma_offpeak < 0.0 || self.sigma_peak < 0.0 {
            return Err(Error::InvalidProfile(
                "standard deviations must be >= 0".into(),
            ));
        }
        if self.hours.is_empty() {
            return Err(Error::InvalidProfile("profile has no hours".into()));
        }
        Ok(())
    }

    pub fn minutes(&self) -> u32 {
        self.hours.len() as u32 * 60
    }

    /// Minutes that fall in peak hours; the hybrid policy runs dynamic
    /// timing on exactly these.
    pub fn peak_minutes(&self) -> std::collections::BTreeSet<u32> {
        self.hours
            .iter()
            .enumerate()
            .filter(|(_, k)| **k == HourKind::Peak)
            .flat_map(|(h, _)| (h as u32 * 60)..(h as u32 * 60 + 60))
            .collect()
    }

    fn law(&self, kind: HourKind) -> (f64, f64) {
        match kind {
            HourKind::Offpeak => (self.mu_offpeak, self.sigma_offpeak),
            HourKind::Peak => (self.mu_peak, self.sigma_peak),
        }
    }
}

/// One normal draw per hour, rounded half away from zero and clamped at zero.
pub fn hourly_counts(profile: &BimodalProfile, seed: u64) -> Result<Vec<u64>> {
    profile.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    profile
        .hours
        .iter()
        .map(|&kind| {
            let (mu, sigma) = profile.law(kind);
            let normal =
                Normal::new(mu, sigma).map_err(|e| Error::InvalidProfile(e.to_string()))?;
            let draw: f64 = normal.sample(&mut rng);
            Ok(draw.round().max(0.0) as u64)
        })
        .collect()
}

/// Share of incoming vehicles per zone, ordered (West, North, East, South).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZonePattern {
    weights: [f64; 4],
}

/// The all-halves vector the complementary patterns are taken against.
pub const UNIVERSAL_PATTERN: [f64; 4] = [0.5; 4];

impl ZonePattern {
    pub fn new(weights: [f64; 4]) -> Result<Self> {
        if weights.iter().any(|w| !(0.0..=1.0).contains(w)) {
            return Err(Error::InvalidPattern(format!(
                "weights {weights:?} must lie in [0, 1]"
            )));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidPattern(format!(
                "weights {weights:?} sum to {sum}, not 1"
            )));
        }
        Ok(ZonePattern { weights })
    }

    pub fn weights(&self) -> [f64; 4] {
        self.weights
    }

    /// `UNIVERSAL_PATTERN - self`, element-wise.
    pub fn complement(&self) -> Result<ZonePattern> {
        let mut w = [0.0; 4];
        for i in 0..4 {
            w[i] = UNIVERSAL_PATTERN[i] - self.weights[i];
        }
        ZonePattern::new(w)
    }
}

/// PA..PG. PD, PF and PG are the complements of PC, PB and PE.
pub fn pattern_library() -> Vec<(&'static str, ZonePattern)> {
    let pa = ZonePattern::new([0.25; 4]).unwrap();
    let pb = ZonePattern::new([0.4, 0.4, 0.1, 0.1]).unwrap();
    let pc = ZonePattern::new([0.4, 0.1, 0.4, 0.1]).unwrap();
    let pe = ZonePattern::new([0.1, 0.4, 0.4, 0.1]).unwrap();
    vec![
        ("PA", pa),
        ("PB", pb),
        ("PC", pc),
        ("PD", pc.complement().unwrap()),
        ("PE", pe),
        ("PF", pb.complement().unwrap()),
        ("PG", pe.complement().unwrap()),
    ]
}

pub fn pattern(name: &str) -> Result<ZonePattern> {
    pattern_library()
        .into_iter()
        .find(|(n, _)| n.eq_ignore_ascii_case(name))
        .map(|(_, p)| p)
        .ok_or_else(|| Error::UnknownPattern(name.to_string()))
}

/// Left/through/right split for each zone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TurnRatio {
    pub west: [f64; 3],
    pub north: [f64; 3],
    pub east: [f64; 3],
    pub south: [f64; 3],
}

impl Default for TurnRatio {
    fn default() -> Self {
        TurnRatio::uniform([0.25, 0.60, 0.15])
    }
}

impl TurnRatio {
    pub fn uniform(split: [f64; 3]) -> Self {
        TurnRatio {
            west: split,
            north: split,
            east: split,
            south: split,
        }
    }

    pub fn for_zone(&self, z: Zone) -> [f64; 3] {
        match z {
            Zone::West => self.west,
            Zone::North => self.north,
            Zone::East => self.east,
            Zone::South => self.south,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for z in Zone::ALL {
            let r = self.for_zone(z);
            let bad = |reason: String| Error::InvalidTurnRatio {
                zone: z.to_string(),
                reason,
            };
            if r.iter().any(|x| !(0.0..=1.0).contains(x)) {
                return Err(bad(format!("fractions {r:?} must lie in [0, 1]")));
            }
            let sum: f64 = r.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(bad(format!("fractions {r:?} sum to {sum}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitMode {
    /// Largest-remainder apportionment.
    #[default]
    Deterministic,
    /// Multinomial draw.
    Sampled,
}

fn multinomial<R: Rng>(total: u64, weights: &[f64], rng: &mut R) -> Vec<u64> {
    let mut out = vec![0; weights.len()];
    let mut left = total;
    let mut mass: f64 = weights.iter().sum();
    for (i, w) in weights.iter().enumerate() {
        if left == 0 || mass <= 0.0 {
            break;
        }
        if i + 1 == weights.len() {
            out[i] = left;
            break;
        }
        let p = (w / mass).clamp(0.0, 1.0);
        let k = Binomial::new(left, p)
            .expect("p is clamped to [0, 1]")
            .sample(rng);
        out[i] = k;
        left -= k;
        mass -= w;
    }
    out
}

fn split(total: u64, weights: &[f64], mode: SplitMode, rng: &mut ChaCha8Rng) -> Vec<u64> {
    match mode {
        SplitMode::Deterministic => apportion(total, weights),
        SplitMode::Sampled => multinomial(total, weights, rng),
    }
}

pub fn split_by_zone(total: u64, pattern: &ZonePattern, mode: SplitMode, seed: u64) -> [u64; 4] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = split(total, &pattern.weights, mode, &mut rng);
    [v[0], v[1], v[2], v[3]]
}

pub fn split_by_movement(
    zone_counts: [u64; 4],
    ratios: &TurnRatio,
    mode: SplitMode,
    seed: u64,
) -> Result<TmcTable> {
    ratios.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut table = TmcTable::zero();
    for z in Zone::ALL {
        let parts = split(zone_counts[z.index()], &ratios.for_zone(z), mode, &mut rng);
        for (t, n) in Turn::ALL.into_iter().zip(parts) {
            table[Movement::new(z, t)] = n;
        }
    }
    Ok(table)
}

/// A single vehicle to inject.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct VehiclePlan {
    pub id: String,
    /// Seconds from simulation start.
    pub depart: u32,
    pub movement: Movement,
}

/// Give every vehicle of hour `h` a uniform departure second in
/// `[3600h, 3600h + 3600)`. The result is sorted by departure and ids
/// `v0, v1, ...` follow that order.
pub fn schedule_departures(hourly: &[TmcTable], seed: u64) -> Vec<VehiclePlan> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut raw: Vec<(u32, usize, Movement)> = Vec::new();
    for (h, table) in hourly.iter().enumerate() {
        let base = h as u32 * 3600;
        for m in Movement::ALL {
            for _ in 0..table[m] {
                let seq = raw.len();
                raw.push((base + rng.random_range(0..3600), seq, m));
            }
        }
    }
    raw.sort_unstable();
    raw.into_iter()
        .enumerate()
        .map(|(i, (depart, _, movement))| VehiclePlan {
            id: format!("v{i}"),
            depart,
            movement,
        })
        .collect()
}

/// Per-minute turning movement counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MinuteTmc {
    pub tables: Vec<TmcTable>,
}

impl MinuteTmc {
    pub fn minutes(&self) -> usize {
        self.tables.len()
    }

    pub fn total(&self) -> u64 {
        self.tables.iter().map(TmcTable::total).sum()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(tmc_header("minute"))?;
        for (m, t) in self.tables.iter().enumerate() {
            let row = std::iter::once(m.to_string()).chain(t.counts().iter().map(u64::to_string));
            wtr.write_record(row)?;
        }
        wtr.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    /// Rows must be numbered 0, 1, 2, ... in order.
    pub fn read_csv<R: Read>(reader: R) -> Result<MinuteTmc> {
        let rows = crate::model::read_keyed_tmc(reader)?;
        let mut tables = Vec::with_capacity(rows.len());
        for (i, (key, t)) in rows.into_iter().enumerate() {
            if key.trim().parse::<usize>().ok() != Some(i) {
                return Err(Error::Malformed(format!(
                    "expected minute {i}, found '{key}'"
                )));
            }
            tables.push(t);
        }
        Ok(MinuteTmc { tables })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(f)
    }

    pub fn load(path: &Path) -> Result<MinuteTmc> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        MinuteTmc::read_csv(f)
    }
}

/// Bucket plans into `minutes` one-minute tables.
pub fn aggregate_per_minute(plans: &[VehiclePlan], minutes: u32) -> Result<MinuteTmc> {
    let mut tables = vec![TmcTable::zero(); minutes as usize];
    for p in plans {
        let slot = (p.depart / 60) as usize;
        let table = tables.get_mut(slot).ok_or_else(|| Error::OutOfHorizon {
            id: p.id.clone(),
            depart: p.depart,
            minutes,
        })?;
        table.add(p.movement, 1);
    }
    Ok(MinuteTmc { tables })
}

/// Keyed demand description, usually read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemandSpec {
    pub seed: u64,
    pub profile: BimodalProfile,
    /// Library pattern name; ignored when `weights` is given.
    pub pattern: String,
    pub weights: Option<[f64; 4]>,
    pub turn_ratio: TurnRatio,
    pub mode: SplitMode,
}

impl Default for DemandSpec {
    fn default() -> Self {
        DemandSpec {
            seed: 0,
            profile: BimodalProfile::default(),
            pattern: "PA".into(),
            weights: None,
            turn_ratio: TurnRatio::default(),
            mode: SplitMode::Deterministic,
        }
    }
}

impl DemandSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        DemandSpec::from_toml(&text)
    }

    pub fn zone_pattern(&self) -> Result<ZonePattern> {
        match self.weights {
            Some(w) => ZonePattern::new(w),
            None => pattern(&self.pattern),
        }
    }
}

/// Everything produced by one generator run.
#[derive(Debug, Clone, PartialEq)]
pub struct Demand {
    pub hourly_totals: Vec<u64>,
    pub hourly_tmc: Vec<TmcTable>,
    pub plans: Vec<VehiclePlan>,
    pub minute_tmc: MinuteTmc,
}

impl Demand {
    pub fn minutes(&self) -> u32 {
        self.minute_tmc.minutes() as u32
    }
}

/// Run the whole pipeline. Stage seeds are drawn from one stream seeded by
/// `spec.seed`, so equal specs give bit-identical output.
pub fn generate(spec: &DemandSpec) -> Result<Demand> {
    let pattern = spec.zone_pattern()?;
    spec.turn_ratio.validate()?;
    let mut master = ChaCha8Rng::seed_from_u64(spec.seed);
    let hourly_totals = hourly_counts(&spec.profile, master.next_u64())?;
    let mut hourly_tmc = Vec::with_capacity(hourly_totals.len());
    for &total in &hourly_totals {
        let zones = split_by_zone(total, &pattern, spec.mode, master.next_u64());
        hourly_tmc.push(split_by_movement(
            zones,
            &spec.turn_ratio,
            spec.mode,
            master.next_u64(),
        )?);
    }
    let plans = schedule_departures(&hourly_tmc, master.next_u64());
    let minute_tmc = aggregate_per_minute(&plans, spec.profile.minutes())?;
    Ok(Demand {
        hourly_totals,
        hourly_tmc,
        plans,
        minute_tmc,
    })
}
