//! Trajectory back end: box overlap, LCSS similarity, and classification of
//! tracked paths against the twelve reference ("typical") paths of a junction.

use std::io::Read;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{Movement, TmcTable, Turn, Zone};

/// Default IoU above which a track and a detection are associated.
pub const IOU_MATCH_THRESHOLD: f64 = 0.5;
/// Default LCSS matching radius in pixels.
pub const DEFAULT_EPS: f64 = 25.0;
/// Default minimum similarity for a trajectory to be counted.
pub const DEFAULT_MIN_SIMILARITY: f64 = 0.6;

/// Axis-aligned box: top-left corner plus width and height, in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        if !(w > 0.0 && h > 0.0) {
            return Err(Error::InvalidBox(format!(
                "width {w} and height {h} must be positive"
            )));
        }
        Ok(BBox { x, y, w, h })
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }
}

/// Intersection over union.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = ((a.x + a.w).min(b.x + b.w) - a.x.max(b.x)).max(0.0);
    let ih = ((a.y + a.h).min(b.y + b.h) - a.y.max(b.y)).max(0.0);
    let inter = iw * ih;
    inter / (a.area() + b.area() - inter)
}

pub fn is_match(a: &BBox, b: &BBox, threshold: f64) -> bool {
    iou(a, b) > threshold
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Point {
        Point { x, y }
    }

    pub fn chebyshev(&self, other: &Point) -> f64 {
        (self.x - other.x).abs().max((self.y - other.y).abs())
    }
}

/// Longest common subsequence where two points match when their Chebyshev
/// distance is at most `eps`.
pub fn lcss(a: &[Point], b: &[Point], eps: f64) -> usize {
    lcss_windowed(a, b, eps, None)
}

/// LCSS with an optional index window: `a[i]` and `b[j]` may only match when
/// `|i - j| <= window`.
pub fn lcss_windowed(a: &[Point], b: &[Point], eps: f64, window: Option<usize>) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for (i, pa) in a.iter().enumerate() {
        for (j, pb) in b.iter().enumerate() {
            let in_window = window.is_none_or(|w| i.abs_diff(j) <= w);
            cur[j + 1] = if in_window && pa.chebyshev(pb) <= eps {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCSS length normalized by the shorter sequence.
pub fn similarity(a: &[Point], b: &[Point], eps: f64) -> f64 {
    let shorter = a.len().min(b.len());
    if shorter == 0 {
        return 0.0;
    }
    lcss(a, b, eps) as f64 / shorter as f64
}

/// Road-user class attached to a track.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoadUser {
    Pedestrian,
    Vehicle,
    Other(i64),
}

impl From<i64> for RoadUser {
    fn from(v: i64) -> Self {
        match v {
            0 => RoadUser::Pedestrian,
            1 => RoadUser::Vehicle,
            other => RoadUser::Other(other),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub id: String,
    pub class: RoadUser,
    pub points: Vec<Point>,
}

impl Trajectory {
    pub fn new(id: impl Into<String>, class: RoadUser, points: Vec<Point>) -> Result<Self> {
        let id = id.into();
        if points.len() < 2 {
            return Err(Error::InvalidTrajectory {
                id,
                reason: format!("needs at least 2 points, has {}", points.len()),
            });
        }
        Ok(Trajectory { id, class, points })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TypicalPath {
    pub movement: Movement,
    pub points: Vec<Point>,
}

/// Reference paths, at most one per movement, kept in movement order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TypicalPaths {
    paths: Vec<TypicalPath>,
}

impl TypicalPaths {
    pub fn new(mut paths: Vec<TypicalPath>) -> Result<Self> {
        paths.sort_by_key(|p| p.movement);
        if let Some(w) = paths.windows(2).find(|w| w[0].movement == w[1].movement) {
            return Err(Error::Malformed(format!(
                "duplicate typical path for {}",
                w[0].movement
            )));
        }
        if let Some(p) = paths.iter().find(|p| p.points.is_empty()) {
            return Err(Error::Malformed(format!(
                "typical path for {} is empty",
                p.movement
            )));
        }
        Ok(TypicalPaths { paths })
    }

    pub fn paths(&self) -> &[TypicalPath] {
        &self.paths
    }

    pub fn get(&self, m: Movement) -> Option<&TypicalPath> {
        self.paths.iter().find(|p| p.movement == m)
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn is_complete(&self) -> bool {
        self.paths.len() == 12
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Classification {
    Matched { movement: Movement, similarity: f64 },
    Unmatched { best_similarity: f64 },
}

impl Classification {
    pub fn movement(&self) -> Option<Movement> {
        match self {
            Classification::Matched { movement, .. } => Some(*movement),
            Classification::Unmatched { .. } => None,
        }
    }
}

/// Assign the movement of the most similar typical path, or `Unmatched`
/// when the best similarity is below `min_sim`. Equal similarities resolve to
/// the earlier movement.
pub fn classify(t: &Trajectory, paths: &TypicalPaths, eps: f64, min_sim: f64) -> Classification {
    let mut best: Option<(Movement, f64)> = None;
    for p in paths.paths() {
        let s = similarity(&t.points, &p.points, eps);
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((p.movement, s));
        }
    }
    match best {
        Some((movement, similarity)) if similarity >= min_sim => Classification::Matched {
            movement,
            similarity,
        },
        Some((_, s)) => Classification::Unmatched { best_similarity: s },
        None => Classification::Unmatched {
            best_similarity: 0.0,
        },
    }
}

/// Result of counting a batch of trajectories.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MovementCount {
    pub tmc: TmcTable,
    pub unmatched: u64,
    /// Pedestrians and other non-vehicle classes.
    pub skipped: u64,
}

impl MovementCount {
    pub fn input_size(&self) -> u64 {
        self.tmc.total() + self.unmatched + self.skipped
    }
}

pub fn count_movements(
    trajs: &[Trajectory],
    paths: &TypicalPaths,
    eps: f64,
    min_sim: f64,
) -> MovementCount {
    let labels: Vec<Option<Option<Movement>>> = trajs
        .par_iter()
        .map(|t| match t.class {
            RoadUser::Vehicle => Some(classify(t, paths, eps, min_sim).movement()),
            _ => None,
        })
        .collect();
    let mut out = MovementCount::default();
    for label in labels {
        match label {
            Some(Some(m)) => out.tmc.add(m, 1),
            Some(None) => out.unmatched += 1,
            None => out.skipped += 1,
        }
    }
    out
}

/// Read `id,class,frame,x,y` rows. Rows of one trajectory must be contiguous
/// with strictly increasing frames.
pub fn read_trajectories<R: Read>(reader: R) -> Result<Vec<Trajectory>> {
    #[derive(serde::Deserialize)]
    struct Row {
        id: String,
        class: i64,
        frame: i64,
        x: f64,
        y: f64,
    }
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut out: Vec<Trajectory> = Vec::new();
    let mut current: Option<(String, i64, i64, Vec<Point>)> = None;
    let finish =
        |cur: Option<(String, i64, i64, Vec<Point>)>, out: &mut Vec<Trajectory>| -> Result<()> {
            if let Some((id, class, _, pts)) = cur {
                if out.iter().any(|t| t.id == id) {
                    return Err(Error::InvalidTrajectory {
                        id,
                        reason: "rows are not contiguous".into(),
                    });
                }
                out.push(Trajectory::new(id, class.into(), pts)?);
            }
            Ok(())
        };
    for row in rdr.deserialize::<Row>() {
        let row = row?;
        match current.as_mut() {
            Some((id, class, last, pts)) if *id == row.id => {
                if row.frame <= *last {
                    return Err(Error::InvalidTrajectory {
                        id: row.id,
                        reason: format!("frame {} does not follow {}", row.frame, last),
                    });
                }
                if row.class != *class {
                    return Err(Error::InvalidTrajectory {
                        id: row.id,
                        reason: "class changes mid-track".into(),
                    });
                }
                *last = row.frame;
                pts.push(Point::new(row.x, row.y));
            }
            _ => {
                finish(current.take(), &mut out)?;
                current = Some((row.id, row.class, row.frame, vec![Point::new(row.x, row.y)]));
            }
        }
    }
    finish(current.take(), &mut out)?;
    Ok(out)
}

/// Read `movement,x,y` rows; the points of each movement are in path order.
pub fn read_typical_paths<R: Read>(reader: R) -> Result<TypicalPaths> {
    #[derive(serde::Deserialize)]
    struct Row {
        movement: String,
        x: f64,
        y: f64,
    }
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut paths: Vec<TypicalPath> = Vec::new();
    for row in rdr.deserialize::<Row>() {
        let row = row?;
        let m: Movement = row.movement.parse()?;
        match paths.last_mut() {
            Some(p) if p.movement == m => p.points.push(Point::new(row.x, row.y)),
            _ => paths.push(TypicalPath {
                movement: m,
                points: vec![Point::new(row.x, row.y)],
            }),
        }
    }
    TypicalPaths::new(paths)
}

pub fn write_typical_paths<W: std::io::Write>(writer: W, paths: &TypicalPaths) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["movement", "x", "y"])?;
    for p in paths.paths() {
        for pt in &p.points {
            wtr.write_record([p.movement.label(), pt.x.to_string(), pt.y.to_string()])?;
        }
    }
    wtr.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn load_trajectories(path: &Path) -> Result<Vec<Trajectory>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_trajectories(f)
}

pub fn load_typical_paths(path: &Path) -> Result<TypicalPaths> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_typical_paths(f)
}

/// Twelve schematic paths for a plus-shaped junction centred in a
/// `2 * arm`-pixel square, right-hand traffic with lanes `lane_offset`
/// pixels off the road axis. Each path has `3 * per_segment` points:
/// approach, turn and exit.
pub fn schematic_paths(arm: f64, lane_offset: f64, per_segment: usize) -> TypicalPaths {
    let centre = Point::new(arm, arm);
    // Unit vector from the centre towards each zone; y grows northwards.
    let towards = |z: Zone| match z {
        Zone::West => (-1.0, 0.0),
        Zone::North => (0.0, 1.0),
        Zone::East => (1.0, 0.0),
        Zone::South => (0.0, -1.0),
    };
    let right_of = |(dx, dy): (f64, f64)| (dy, -dx);
    let at = |along: (f64, f64), dist: f64, side: (f64, f64)| {
        Point::new(
            centre.x + along.0 * dist + side.0 * lane_offset,
            centre.y + along.1 * dist + side.1 * lane_offset,
        )
    };
    let radius = 2.5 * lane_offset;
    let lerp =
        |a: Point, b: Point, t: f64| Point::new(a.x + (b.x - a.x) * t, a.y + (b.y - a.y) * t);
    let n = per_segment.max(2);
    let paths = Movement::ALL
        .into_iter()
        .map(|m| {
            let inward = {
                let (x, y) = towards(m.origin());
                (-x, -y)
            };
            let outward = towards(m.destination());
            let entry = at(towards(m.origin()), arm, right_of(inward));
            let stop = at(towards(m.origin()), radius, right_of(inward));
            let leave = at(outward, radius, right_of(outward));
            let exit = at(outward, arm, right_of(outward));
            let control = match m.turn() {
                Turn::Through => lerp(stop, leave, 0.5),
                _ => {
                    // Corner where the entry lane line meets the exit lane line.
                    let a = right_of(inward);
                    let b = right_of(outward);
                    Point::new(
                        centre.x + (a.0 + b.0) * lane_offset,
                        centre.y + (a.1 + b.1) * lane_offset,
                    )
                }
            };
            let mut points = Vec::with_capacity(3 * n);
            for i in 0..n {
                points.push(lerp(entry, stop, i as f64 / n as f64));
            }
            for i in 0..n {
                let t = i as f64 / n as f64;
                let p = lerp(lerp(stop, control, t), lerp(control, leave, t), t);
                points.push(p);
            }
            for i in 0..n {
                points.push(lerp(leave, exit, i as f64 / (n - 1) as f64));
            }
            TypicalPath {
                movement: m,
                points,
            }
        })
        .collect();
    TypicalPaths::new(paths).expect("one path per movement")
}
