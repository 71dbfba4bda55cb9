//! Grid comparison of signal policies over intersections, zone patterns and
//! cycle lengths.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{builtin_geometries, IntersectionGeometry};
use crate::rl::{train, Hyperparams};
use crate::signals::{Timing, DEFAULT_YELLOW};
use crate::sim::{run, Controller, SimConfig, SimResult};
use crate::trafficgen::{
    generate, pattern_library, BimodalProfile, DemandSpec, SplitMode, TurnRatio,
};

/// Controllers in tie-break order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyName {
    Static,
    Dynamic,
    Hybrid,
    Rl,
}

impl PolicyName {
    pub const ALL: [PolicyName; 4] = [
        PolicyName::Static,
        PolicyName::Dynamic,
        PolicyName::Hybrid,
        PolicyName::Rl,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PolicyName::Static => "static",
            PolicyName::Dynamic => "dynamic",
            PolicyName::Hybrid => "hybrid",
            PolicyName::Rl => "rl",
        }
    }

    /// Letter used in the winners table.
    pub fn short(self) -> &'static str {
        match self {
            PolicyName::Static => "S",
            PolicyName::Dynamic => "D",
            PolicyName::Hybrid => "H",
            PolicyName::Rl => "RL",
        }
    }
}

impl fmt::Display for PolicyName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PolicyName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PolicyName::ALL
            .into_iter()
            .find(|p| p.as_str().eq_ignore_ascii_case(s) || p.short().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidParameter(format!("unknown policy '{s}'")))
    }
}

/// Relative NWT margin within which policies count as tied.
pub const TIE_THRESHOLD: f64 = 0.005;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub seed: u64,
    pub profile: BimodalProfile,
    /// Geometry ids to run; empty means every loaded geometry.
    pub intersections: Vec<String>,
    pub patterns: Vec<String>,
    pub policies: Vec<PolicyName>,
    pub cycles: Vec<u32>,
    pub yellow: u32,
    pub turn_ratio: TurnRatio,
    pub mode: SplitMode,
    pub saturation_headway: f64,
    pub permissive_left_factor: f64,
    pub rl: Hyperparams,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        let sim = SimConfig::new(0);
        ExperimentSpec {
            seed: 1,
            profile: BimodalProfile::default(),
            intersections: Vec::new(),
            patterns: pattern_library()
                .into_iter()
                .map(|(n, _)| n.to_string())
                .collect(),
            policies: PolicyName::ALL.to_vec(),
            cycles: vec![60, 90, 120, 150],
            yellow: DEFAULT_YELLOW,
            turn_ratio: TurnRatio::default(),
            mode: SplitMode::Deterministic,
            saturation_headway: sim.saturation_headway,
            permissive_left_factor: sim.permissive_left_factor,
            rl: Hyperparams::default(),
        }
    }
}

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ExperimentSpec::from_toml(&text)
    }

    /// Demand seed shared by every policy and cycle of one
    /// (intersection, pattern) pair.
    pub fn cell_seed(&self, intersection: usize, pattern: usize) -> u64 {
        splitmix(self.seed ^ splitmix(((intersection as u64) << 32) | pattern as u64))
    }
}

fn splitmix(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRow {
    pub intersection: String,
    pub pattern: String,
    pub policy: PolicyName,
    pub cycle: u32,
    pub result: SimResult,
}

/// Every simulated cell, sorted by (intersection, pattern, policy, cycle).
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentMatrix {
    pub rows: Vec<ExperimentRow>,
}

/// Run the whole grid. Cells run in parallel; the RL learner is trained once
/// per (intersection, pattern) demand and reused for every cycle length.
pub fn run_experiment(
    spec: &ExperimentSpec,
    geometries: &[IntersectionGeometry],
) -> Result<ExperimentMatrix> {
    let selected: Vec<&IntersectionGeometry> = if spec.intersections.is_empty() {
        geometries.iter().collect()
    } else {
        spec.intersections
            .iter()
            .map(|id| {
                geometries
                    .iter()
                    .find(|g| g.id() == id)
                    .ok_or_else(|| Error::InvalidGeometry {
                        id: id.clone(),
                        reason: "not among the loaded geometries".into(),
                    })
            })
            .collect::<Result<_>>()?
    };
    if spec.cycles.is_empty() || spec.policies.is_empty() || spec.patterns.is_empty() {
        return Err(Error::InvalidParameter(
            "cycles, policies and patterns must be non-empty".into(),
        ));
    }
    spec.profile.validate()?;
    let pairs: Vec<(usize, usize)> = (0..selected.len())
        .flat_map(|i| (0..spec.patterns.len()).map(move |p| (i, p)))
        .collect();

    let blocks = pairs
        .par_iter()
        .map(|&(i, p)| run_pair(spec, i, selected[i], p))
        .collect::<Result<Vec<_>>>()?;
    let mut rows: Vec<ExperimentRow> = blocks.into_iter().flatten().collect();
    rows.sort_by(|a, b| {
        (&a.intersection, &a.pattern, a.policy, a.cycle).cmp(&(
            &b.intersection,
            &b.pattern,
            b.policy,
            b.cycle,
        ))
    });
    Ok(ExperimentMatrix { rows })
}

fn run_pair(
    spec: &ExperimentSpec,
    gi: usize,
    geo: &IntersectionGeometry,
    pi: usize,
) -> Result<Vec<ExperimentRow>> {
    let pattern = &spec.patterns[pi];
    let cell_err = |policy: &str, cycle: u32| {
        let intersection = geo.id().to_string();
        let pattern = pattern.clone();
        let policy = policy.to_string();
        move |e: Error| Error::Cell {
            intersection,
            pattern,
            policy,
            cycle,
            source: Box::new(e),
        }
    };
    let demand_spec = DemandSpec {
        seed: spec.cell_seed(gi, pi),
        profile: spec.profile.clone(),
        pattern: pattern.clone(),
        weights: None,
        turn_ratio: spec.turn_ratio,
        mode: spec.mode,
    };
    let demand = generate(&demand_spec).map_err(cell_err("-", 0))?;
    let peaks = spec.profile.peak_minutes();
    let learned = if spec.policies.contains(&PolicyName::Rl) {
        let cycle = spec.cycles.iter().copied().max().unwrap_or(0);
        let timing = Timing::new(cycle, spec.yellow);
        let trained = train(&demand.minute_tmc, &timing, demand_spec.seed, &spec.rl)
            .map_err(cell_err(PolicyName::Rl.as_str(), cycle))?;
        Some(trained.policy)
    } else {
        None
    };
    let cfg = SimConfig {
        saturation_headway: spec.saturation_headway,
        permissive_left_factor: spec.permissive_left_factor,
        horizon: demand.minutes() * 60,
    };
    let cells: Vec<(PolicyName, u32)> = spec
        .policies
        .iter()
        .flat_map(|&p| spec.cycles.iter().map(move |&c| (p, c)))
        .collect();
    cells
        .par_iter()
        .map(|&(policy, cycle)| {
            let controller = match policy {
                PolicyName::Static => Controller::Static,
                PolicyName::Dynamic => Controller::Dynamic,
                PolicyName::Hybrid => Controller::Hybrid(&peaks),
                PolicyName::Rl => Controller::Rl(learned.as_ref().expect("trained above")),
            };
            let timing = Timing::new(cycle, spec.yellow);
            let result = controller
                .program(&demand.minute_tmc, &timing)
                .and_then(|program| run(geo, &demand.plans, &program, &cfg))
                .map_err(cell_err(policy.as_str(), cycle))?;
            log::debug!(
                "{} {} {} {}: nwt {:.2}",
                geo.id(),
                pattern,
                policy,
                cycle,
                result.nwt
            );
            Ok(ExperimentRow {
                intersection: geo.id().to_string(),
                pattern: pattern.clone(),
                policy,
                cycle,
                result,
            })
        })
        .collect()
}

/// Lowest NWT over cycle lengths for each policy of one
/// (intersection, pattern) pair.
pub fn best_nwt(
    matrix: &ExperimentMatrix,
    intersection: &str,
    pattern: &str,
) -> BTreeMap<PolicyName, f64> {
    let mut best: BTreeMap<PolicyName, f64> = BTreeMap::new();
    for r in matrix
        .rows
        .iter()
        .filter(|r| r.intersection == intersection && r.pattern == pattern)
    {
        let e = best.entry(r.policy).or_insert(f64::INFINITY);
        *e = e.min(r.result.nwt);
    }
    best
}

/// The earliest policy (S, D, H, RL order) whose best NWT is within
/// [`TIE_THRESHOLD`] of the overall best.
pub fn winner(best: &BTreeMap<PolicyName, f64>) -> Option<PolicyName> {
    let min = best.values().copied().fold(f64::INFINITY, f64::min);
    best.iter()
        .find(|(_, &v)| v <= min * (1.0 + TIE_THRESHOLD))
        .map(|(&p, _)| p)
}

/// Winner per pattern (rows) and intersection (columns), both in first-seen
/// order.
#[derive(Debug, Clone, PartialEq)]
pub struct WinnersTable {
    pub intersections: Vec<String>,
    pub patterns: Vec<String>,
    /// `cells[pattern][intersection]`
    pub cells: Vec<Vec<Option<PolicyName>>>,
}

impl ExperimentMatrix {
    fn distinct<'a>(&'a self, key: impl Fn(&'a ExperimentRow) -> &'a String) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.rows {
            if !out.contains(key(r)) {
                out.push(key(r).clone());
            }
        }
        out
    }

    pub fn winners(&self) -> WinnersTable {
        let intersections = self.distinct(|r| &r.intersection);
        let patterns = self.distinct(|r| &r.pattern);
        let cells = patterns
            .iter()
            .map(|p| {
                intersections
                    .iter()
                    .map(|i| winner(&best_nwt(self, i, p)))
                    .collect()
            })
            .collect();
        WinnersTable {
            intersections,
            patterns,
            cells,
        }
    }

    /// `intersection,pattern,policy,cycle,injected,served,residual,total_wait,nwt`
    pub fn write_report<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record([
            "intersection",
            "pattern",
            "policy",
            "cycle",
            "injected",
            "served",
            "residual",
            "total_wait",
            "nwt",
        ])?;
        for r in &self.rows {
            wtr.write_record([
                r.intersection.clone(),
                r.pattern.clone(),
                r.policy.to_string(),
                r.cycle.to_string(),
                r.result.injected.to_string(),
                r.result.served.to_string(),
                r.result.residual_queue.to_string(),
                r.result.total_wait.to_string(),
                format!("{:.4}", r.result.nwt),
            ])?;
        }
        wtr.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

impl WinnersTable {
    /// `pattern,<intersection ids...>` with S/D/H/RL cells.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["pattern".to_string()];
        header.extend(self.intersections.iter().cloned());
        wtr.write_record(&header)?;
        for (p, row) in self.patterns.iter().zip(&self.cells) {
            let mut rec = vec![p.clone()];
            rec.extend(
                row.iter()
                    .map(|c| c.map_or("-", PolicyName::short).to_string()),
            );
            wtr.write_record(&rec)?;
        }
        wtr.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// Geometries for a run: the bundled six unless a file is given.
pub fn geometries_or_builtin(path: Option<&Path>) -> Result<Vec<IntersectionGeometry>> {
    match path {
        Some(p) => crate::model::load_geometries(p),
        None => Ok(builtin_geometries()),
    }
}
