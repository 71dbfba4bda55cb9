//! Four-phase signal plans and per-minute signal programs.
//!
//! Protected-left layout: P1 serves the east-west through and right
//! movements (lefts permissive), P2 the protected east-west lefts, P3 and P4
//! the same for north-south. Every plan's greens plus yellows add up to the
//! cycle exactly.

use std::collections::BTreeSet;
use std::io::{Read, Write};

use crate::apportion::apportion_quotas;
use crate::error::{Error, Result};
use crate::model::{Movement, MovementSet, TmcTable};
use crate::trafficgen::MinuteTmc;

pub const DEFAULT_YELLOW: u32 = 3;
pub const DEFAULT_MIN_GREEN: u32 = 5;

/// Cycle length, yellow per phase and the minimum green, all in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Timing {
    pub cycle: u32,
    pub yellow: u32,
    pub min_green: u32,
}

impl Timing {
    pub fn new(cycle: u32, yellow: u32) -> Timing {
        Timing {
            cycle,
            yellow,
            min_green: DEFAULT_MIN_GREEN,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.cycle < 4 * (self.yellow + self.min_green) || self.min_green == 0 {
            return Err(Error::CycleTooShort {
                cycle: self.cycle,
                yellow: self.yellow,
                min_green: self.min_green,
            });
        }
        Ok(())
    }

    /// Seconds of green per cycle, `cycle - 4 * yellow`.
    pub fn usable_green(&self) -> u32 {
        self.cycle - 4 * self.yellow
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Phase {
    pub served: MovementSet,
    /// Movements allowed to proceed while yielding.
    pub permissive: MovementSet,
    pub green: u32,
    pub yellow: u32,
}

impl Phase {
    pub fn duration(&self) -> u32 {
        self.green + self.yellow
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PhaseLayout {
    /// Protected lefts in P2/P4, permissive lefts in P1/P3.
    ProtectedLeft,
    /// One phase per approach in the order WB, NB, EB, SB.
    Split,
}

impl PhaseLayout {
    /// (served, permissive) per phase.
    pub fn movement_sets(self) -> [(MovementSet, MovementSet); 4] {
        use Movement::*;
        match self {
            PhaseLayout::ProtectedLeft => [
                (
                    MovementSet::of(&[Wbt, Wbr, Ebt, Ebr]),
                    MovementSet::of(&[Wbl, Ebl]),
                ),
                (MovementSet::of(&[Wbl, Ebl]), MovementSet::EMPTY),
                (
                    MovementSet::of(&[Nbt, Nbr, Sbt, Sbr]),
                    MovementSet::of(&[Nbl, Sbl]),
                ),
                (MovementSet::of(&[Nbl, Sbl]), MovementSet::EMPTY),
            ],
            PhaseLayout::Split => [
                (MovementSet::of(&[Wbl, Wbt, Wbr]), MovementSet::EMPTY),
                (MovementSet::of(&[Nbl, Nbt, Nbr]), MovementSet::EMPTY),
                (MovementSet::of(&[Ebl, Ebt, Ebr]), MovementSet::EMPTY),
                (MovementSet::of(&[Sbl, Sbt, Sbr]), MovementSet::EMPTY),
            ],
        }
    }
}

/// One cycle: four phases, each a green followed by a yellow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PhasePlan {
    layout: PhaseLayout,
    phases: [Phase; 4],
}

impl PhasePlan {
    pub fn new(layout: PhaseLayout, greens: [u32; 4], yellow: u32) -> PhasePlan {
        let sets = layout.movement_sets();
        let phases = std::array::from_fn(|i| Phase {
            served: sets[i].0,
            permissive: sets[i].1,
            green: greens[i],
            yellow,
        });
        PhasePlan { layout, phases }
    }

    pub fn layout(&self) -> PhaseLayout {
        self.layout
    }

    pub fn phases(&self) -> &[Phase; 4] {
        &self.phases
    }

    pub fn greens(&self) -> [u32; 4] {
        self.phases.map(|p| p.green)
    }

    pub fn cycle(&self) -> u32 {
        self.phases.iter().map(Phase::duration).sum()
    }
}

/// Critical volumes `[a, b, c, d]`, one per protected-left phase.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticalCounts(pub [f64; 4]);

impl CriticalCounts {
    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }
}

pub fn critical_counts(tmc: &TmcTable) -> CriticalCounts {
    use Movement::*;
    let c = |m: Movement| tmc[m] as f64;
    CriticalCounts([
        ((c(Wbt) + c(Wbr)) / 2.0).max((c(Ebt) + c(Ebr)) / 2.0),
        c(Wbl).max(c(Ebl)),
        ((c(Nbt) + c(Nbr)) / 2.0).max((c(Sbt) + c(Sbr)) / 2.0),
        c(Nbl).max(c(Sbl)),
    ])
}

/// Turn real-valued green quotas into integer greens summing to the usable
/// green, none below `min_green`.
///
/// Phases whose quota falls under the floor are pinned to it and the rest
/// of the budget is re-spread over the remaining phases in proportion to
/// their quotas, repeating until no quota is under the floor. The final split
/// is a largest-remainder rounding.
pub fn allocate_greens(quotas: [f64; 4], timing: &Timing) -> Result<[u32; 4]> {
    timing.validate()?;
    let budget = timing.usable_green() as f64;
    let floor = timing.min_green as f64;
    let mut pinned = [false; 4];
    let mut scaled = quotas;
    loop {
        let free_raw: f64 = (0..4)
            .filter(|&i| !pinned[i])
            .map(|i| quotas[i].max(0.0))
            .sum();
        let free_n = pinned.iter().filter(|p| !**p).count() as f64;
        let remaining = budget - floor * (4.0 - free_n);
        for i in (0..4).filter(|&i| !pinned[i]) {
            scaled[i] = if free_raw > 0.0 {
                quotas[i].max(0.0) * remaining / free_raw
            } else {
                remaining / free_n
            };
        }
        let under: Vec<usize> = (0..4)
            .filter(|&i| !pinned[i] && scaled[i] < floor)
            .collect();
        if under.is_empty() {
            break;
        }
        for i in under {
            pinned[i] = true;
            scaled[i] = floor;
        }
    }
    let free: Vec<usize> = (0..4).filter(|&i| !pinned[i]).collect();
    let free_budget = timing.usable_green() - timing.min_green * (4 - free.len() as u32);
    let free_quotas: Vec<f64> = free.iter().map(|&i| scaled[i]).collect();
    let rounded = apportion_quotas(free_budget as u64, &free_quotas);
    let mut greens = [timing.min_green; 4];
    for (&i, g) in free.iter().zip(rounded) {
        greens[i] = g as u32;
    }
    Ok(greens)
}

/// Equal greens; leftover seconds go one each to the earliest phases.
pub fn static_plan(timing: &Timing) -> Result<PhasePlan> {
    let g = timing.usable_green() as f64 / 4.0;
    let greens = allocate_greens([g; 4], timing)?;
    Ok(PhasePlan::new(
        PhaseLayout::ProtectedLeft,
        greens,
        timing.yellow,
    ))
}

/// Greens proportional to the critical counts: quota
/// `critical / total * cycle - yellow` per phase. An all-zero table falls
/// back to the static plan.
pub fn dynamic_plan(tmc: &TmcTable, timing: &Timing) -> Result<PhasePlan> {
    let crit = critical_counts(tmc);
    let total = crit.total();
    if total <= 0.0 {
        return static_plan(timing);
    }
    let cycle = timing.cycle as f64;
    let yellow = timing.yellow as f64;
    let quotas = crit.0.map(|x| x / total * cycle - yellow);
    let greens = allocate_greens(quotas, timing)?;
    Ok(PhasePlan::new(
        PhaseLayout::ProtectedLeft,
        greens,
        timing.yellow,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Policy {
    Static,
    Dynamic,
    Hybrid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProgramEntry {
    /// First minute covered.
    pub start: u32,
    /// One past the last minute covered.
    pub end: u32,
    pub plan: PhasePlan,
}

/// Phase plans over consecutive minute intervals starting at minute 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignalProgram {
    entries: Vec<ProgramEntry>,
}

impl SignalProgram {
    pub fn new(entries: Vec<ProgramEntry>) -> Result<Self> {
        let p = SignalProgram { entries };
        p.validate()?;
        Ok(p)
    }

    /// The same plan every minute.
    pub fn per_minute(plans: Vec<PhasePlan>) -> Result<Self> {
        SignalProgram::new(
            plans
                .into_iter()
                .enumerate()
                .map(|(m, plan)| ProgramEntry {
                    start: m as u32,
                    end: m as u32 + 1,
                    plan,
                })
                .collect(),
        )
    }

    pub fn validate(&self) -> Result<()> {
        let mut expected = 0;
        for e in &self.entries {
            if e.start != expected {
                return Err(Error::ProgramGap(format!(
                    "entry starts at minute {} but minute {expected} is uncovered",
                    e.start
                )));
            }
            if e.end <= e.start {
                return Err(Error::ProgramGap(format!(
                    "empty interval at minute {}",
                    e.start
                )));
            }
            expected = e.end;
        }
        Ok(())
    }

    pub fn entries(&self) -> &[ProgramEntry] {
        &self.entries
    }

    /// Minutes covered.
    pub fn minutes(&self) -> u32 {
        self.entries.last().map_or(0, |e| e.end)
    }

    pub fn plan_at(&self, minute: u32) -> Option<&PhasePlan> {
        let i = self.entries.partition_point(|e| e.end <= minute);
        self.entries.get(i).map(|e| &e.plan)
    }

    /// One row per minute: `minute,g1,y1,g2,y2,g3,y3,g4,y4`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["minute", "g1", "y1", "g2", "y2", "g3", "y3", "g4", "y4"])?;
        for e in &self.entries {
            for m in e.start..e.end {
                let mut row = vec![m.to_string()];
                for p in e.plan.phases() {
                    row.push(p.green.to_string());
                    row.push(p.yellow.to_string());
                }
                wtr.write_record(&row)?;
            }
        }
        wtr.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    /// Parse the per-minute CSV; the file does not record the layout, so the
    /// caller supplies it.
    pub fn read_csv<R: Read>(reader: R, layout: PhaseLayout) -> Result<SignalProgram> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut entries = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let nums: Vec<u32> = rec
                .iter()
                .map(|f| {
                    f.parse().map_err(|_| {
                        Error::Malformed(format!("bad number '{f}' in program row {}", i + 2))
                    })
                })
                .collect::<Result<_>>()?;
            if nums.len() != 9 {
                return Err(Error::Malformed(format!(
                    "program row {} needs 9 fields",
                    i + 2
                )));
            }
            let sets = layout.movement_sets();
            let phases = std::array::from_fn(|k| Phase {
                served: sets[k].0,
                permissive: sets[k].1,
                green: nums[1 + 2 * k],
                yellow: nums[2 + 2 * k],
            });
            entries.push(ProgramEntry {
                start: nums[0],
                end: nums[0] + 1,
                plan: PhasePlan { layout, phases },
            });
        }
        SignalProgram::new(entries)
    }
}

/// Build a per-minute program.
///
/// Static repeats one plan; dynamic derives each minute's plan from that
/// minute's counts; hybrid is dynamic on `peak_minutes` and static elsewhere.
pub fn build_program(
    minute_tmc: &MinuteTmc,
    policy: Policy,
    timing: &Timing,
    peak_minutes: &BTreeSet<u32>,
) -> Result<SignalProgram> {
    let fixed = static_plan(timing)?;
    let plans = minute_tmc
        .tables
        .iter()
        .enumerate()
        .map(|(m, tmc)| {
            let dynamic = match policy {
                Policy::Static => false,
                Policy::Dynamic => true,
                Policy::Hybrid => peak_minutes.contains(&(m as u32)),
            };
            if dynamic {
                dynamic_plan(tmc, timing)
            } else {
                Ok(fixed)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    SignalProgram::per_minute(plans)
}
