//! Zones, turning movements, intersection geometry and turning-movement-count
//! tables, plus the per-edge capacity rates derived from them.

use std::fmt;
use std::io::Read;
use std::ops::{Index, IndexMut};
use std::path::Path;
use std::str::FromStr;

use serde::Deserialize;

use crate::apportion::round_half_away;
use crate::error::{Error, Result};

/// One leg of a four-leg junction. Declaration order (West, North, East,
/// South) is the order of every 4-vector in the crate; edge labels number the
/// zones 1..=4 in the same order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Zone {
    West,
    North,
    East,
    South,
}

impl Zone {
    pub const ALL: [Zone; 4] = [Zone::West, Zone::North, Zone::East, Zone::South];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Zone {
        Zone::ALL[i % 4]
    }

    /// Single-letter code: W, N, E or S.
    pub fn letter(self) -> char {
        match self {
            Zone::West => 'W',
            Zone::North => 'N',
            Zone::East => 'E',
            Zone::South => 'S',
        }
    }

    /// Edge label number used in network files (1 = West .. 4 = South).
    pub fn label(self) -> u8 {
        self as u8 + 1
    }

    pub fn inbound_edge(self) -> String {
        format!("{}i", self.label())
    }

    pub fn outbound_edge(self) -> String {
        format!("{}o", self.label())
    }
}

impl fmt::Display for Zone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Turn {
    Left,
    Through,
    Right,
}

impl Turn {
    pub const ALL: [Turn; 3] = [Turn::Left, Turn::Through, Turn::Right];

    pub fn letter(self) -> char {
        match self {
            Turn::Left => 'L',
            Turn::Through => 'T',
            Turn::Right => 'R',
        }
    }
}

/// A turning movement: the zone a vehicle enters from plus its turn.
///
/// The twelve variants are ordered zone-major (W, N, E, S) then L, T, R. That
/// order is used for TMC columns, signal state strings and tie-breaking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Movement {
    Wbl,
    Wbt,
    Wbr,
    Nbl,
    Nbt,
    Nbr,
    Ebl,
    Ebt,
    Ebr,
    Sbl,
    Sbt,
    Sbr,
}

impl Movement {
    pub const ALL: [Movement; 12] = [
        Movement::Wbl,
        Movement::Wbt,
        Movement::Wbr,
        Movement::Nbl,
        Movement::Nbt,
        Movement::Nbr,
        Movement::Ebl,
        Movement::Ebt,
        Movement::Ebr,
        Movement::Sbl,
        Movement::Sbt,
        Movement::Sbr,
    ];

    pub fn new(origin: Zone, turn: Turn) -> Movement {
        Movement::ALL[origin.index() * 3 + turn as usize]
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn origin(self) -> Zone {
        Zone::from_index(self.index() / 3)
    }

    pub fn turn(self) -> Turn {
        Turn::ALL[self.index() % 3]
    }

    /// Zone the vehicle leaves through, for right-hand traffic.
    pub fn destination(self) -> Zone {
        let step = match self.turn() {
            Turn::Left => 1,
            Turn::Through => 2,
            Turn::Right => 3,
        };
        Zone::from_index(self.origin().index() + step)
    }

    /// The movement connecting an origin and a distinct destination zone.
    pub fn from_zones(origin: Zone, destination: Zone) -> Option<Movement> {
        Turn::ALL
            .into_iter()
            .map(|t| Movement::new(origin, t))
            .find(|m| m.destination() == destination)
    }

    pub fn label(self) -> String {
        format!("{}B{}", self.origin().letter(), self.turn().letter())
    }
}

impl fmt::Display for Movement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for Movement {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let up = s.trim().to_ascii_uppercase();
        Movement::ALL
            .into_iter()
            .find(|m| m.label() == up)
            .ok_or_else(|| Error::UnknownMovement(s.to_string()))
    }
}

/// A small set of movements stored as a bitmask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct MovementSet(u16);

impl MovementSet {
    pub const EMPTY: MovementSet = MovementSet(0);

    pub fn of(movements: &[Movement]) -> MovementSet {
        movements.iter().fold(MovementSet::EMPTY, |s, &m| s.with(m))
    }

    pub fn with(self, m: Movement) -> MovementSet {
        MovementSet(self.0 | 1 << m.index())
    }

    pub fn contains(self, m: Movement) -> bool {
        self.0 & (1 << m.index()) != 0
    }

    pub fn union(self, other: MovementSet) -> MovementSet {
        MovementSet(self.0 | other.0)
    }

    pub fn is_disjoint(self, other: MovementSet) -> bool {
        self.0 & other.0 == 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = Movement> {
        Movement::ALL.into_iter().filter(move |m| self.contains(*m))
    }
}

/// Lane counts of a four-leg junction, per zone, for inbound and outbound
/// edges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntersectionGeometry {
    id: String,
    lanes_in: [u32; 4],
    lanes_out: [u32; 4],
}

impl IntersectionGeometry {
    pub fn new(id: impl Into<String>, lanes_in: [u32; 4], lanes_out: [u32; 4]) -> Result<Self> {
        let id = id.into();
        if let Some(z) = (0..4).find(|&z| lanes_in[z] == 0 || lanes_out[z] == 0) {
            return Err(Error::InvalidGeometry {
                id,
                reason: format!("zone {} has a zero lane count", Zone::from_index(z)),
            });
        }
        Ok(IntersectionGeometry {
            id,
            lanes_in,
            lanes_out,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn lanes_in(&self, z: Zone) -> u32 {
        self.lanes_in[z.index()]
    }

    pub fn lanes_out(&self, z: Zone) -> u32 {
        self.lanes_out[z.index()]
    }

    pub fn total_lanes(&self) -> u32 {
        self.lanes_in.iter().chain(&self.lanes_out).sum()
    }
}

#[derive(Debug, Deserialize)]
struct GeometryRecord {
    id: String,
    lanes_1i: u32,
    lanes_1o: u32,
    lanes_2i: u32,
    lanes_2o: u32,
    lanes_3i: u32,
    lanes_3o: u32,
    lanes_4i: u32,
    lanes_4o: u32,
}

/// Parse a geometry CSV (`id,lanes_1i,lanes_1o,...,lanes_4o`).
pub fn read_geometries<R: Read>(reader: R) -> Result<Vec<IntersectionGeometry>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    rdr.deserialize::<GeometryRecord>()
        .map(|rec| {
            let r = rec?;
            IntersectionGeometry::new(
                r.id,
                [r.lanes_1i, r.lanes_2i, r.lanes_3i, r.lanes_4i],
                [r.lanes_1o, r.lanes_2o, r.lanes_3o, r.lanes_4o],
            )
        })
        .collect()
}

pub fn load_geometries(path: &Path) -> Result<Vec<IntersectionGeometry>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_geometries(file)
}

pub fn write_geometries<W: std::io::Write>(writer: W, geos: &[IntersectionGeometry]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record([
        "id", "lanes_1i", "lanes_1o", "lanes_2i", "lanes_2o", "lanes_3i", "lanes_3o", "lanes_4i",
        "lanes_4o",
    ])?;
    for g in geos {
        let mut row = vec![g.id.clone()];
        for z in 0..4 {
            row.push(g.lanes_in[z].to_string());
            row.push(g.lanes_out[z].to_string());
        }
        wtr.write_record(&row)?;
    }
    wtr.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

const GEOMETRY_CSV: &str = include_str!("../data/geometry.csv");
const OBSERVED_TMC_CSV: &str = include_str!("../data/observed_tmc.csv");

/// The six surveyed Las Vegas junctions INT1..INT6.
pub fn builtin_geometries() -> Vec<IntersectionGeometry> {
    read_geometries(GEOMETRY_CSV.as_bytes()).expect("bundled geometry fixture is valid")
}

/// Camera-derived one-hour counts for INT1..INT6. WBR and SBR were not
/// observed and are stored as zero.
pub fn builtin_observed_tmc() -> Vec<(String, TmcTable)> {
    read_keyed_tmc(OBSERVED_TMC_CSV.as_bytes()).expect("bundled TMC fixture is valid")
}

/// Per-movement vehicle counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct TmcTable {
    counts: [u64; 12],
}

impl TmcTable {
    pub fn zero() -> TmcTable {
        TmcTable::default()
    }

    pub fn from_counts(counts: [u64; 12]) -> TmcTable {
        TmcTable { counts }
    }

    pub fn counts(&self) -> &[u64; 12] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn add(&mut self, m: Movement, n: u64) {
        self.counts[m.index()] += n;
    }

    /// Sum of the three movements entering from `z`.
    pub fn inflow_count(&self, z: Zone) -> u64 {
        Movement::ALL
            .iter()
            .filter(|m| m.origin() == z)
            .map(|&m| self[m])
            .sum()
    }

    /// Sum of the three movements leaving through `z`.
    pub fn outflow_count(&self, z: Zone) -> u64 {
        Movement::ALL
            .iter()
            .filter(|m| m.destination() == z)
            .map(|&m| self[m])
            .sum()
    }

    /// Inbound volumes per approach (WB, NB, EB, SB).
    pub fn direction_volumes(&self) -> [u64; 4] {
        Zone::ALL.map(|z| self.inflow_count(z))
    }
}

impl Index<Movement> for TmcTable {
    type Output = u64;

    fn index(&self, m: Movement) -> &u64 {
        &self.counts[m.index()]
    }
}

impl IndexMut<Movement> for TmcTable {
    fn index_mut(&mut self, m: Movement) -> &mut u64 {
        &mut self.counts[m.index()]
    }
}

impl std::iter::Sum for TmcTable {
    fn sum<I: Iterator<Item = TmcTable>>(iter: I) -> TmcTable {
        iter.fold(TmcTable::zero(), |mut acc, t| {
            for m in Movement::ALL {
                acc[m] += t[m];
            }
            acc
        })
    }
}

pub fn tmc_header(key: &str) -> Vec<String> {
    std::iter::once(key.to_string())
        .chain(Movement::ALL.iter().map(|m| m.label()))
        .collect()
}

fn parse_tmc_row(rec: &csv::StringRecord, line: usize) -> Result<TmcTable> {
    if rec.len() != 13 {
        return Err(Error::Malformed(format!(
            "TMC row {line} has {} fields, expected 13",
            rec.len()
        )));
    }
    let mut t = TmcTable::zero();
    for (i, m) in Movement::ALL.into_iter().enumerate() {
        t[m] = rec[i + 1].trim().parse().map_err(|_| {
            Error::Malformed(format!("bad count '{}' in TMC row {line}", &rec[i + 1]))
        })?;
    }
    Ok(t)
}

fn check_tmc_header(headers: &csv::StringRecord) -> Result<()> {
    let expected = tmc_header("");
    let ok = headers.len() == 13
        && headers
            .iter()
            .skip(1)
            .zip(expected.iter().skip(1))
            .all(|(a, b)| a.trim().eq_ignore_ascii_case(b));
    if ok {
        Ok(())
    } else {
        Err(Error::Malformed(format!(
            "TMC header must list WBL..SBR in order, got {:?}",
            headers
        )))
    }
}

/// Read a TMC CSV whose first column is a text key (e.g. an intersection id).
pub fn read_keyed_tmc<R: Read>(reader: R) -> Result<Vec<(String, TmcTable)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    check_tmc_header(rdr.headers()?)?;
    rdr.records()
        .enumerate()
        .map(|(i, rec)| {
            let rec = rec?;
            Ok((rec[0].to_string(), parse_tmc_row(&rec, i + 2)?))
        })
        .collect()
}

/// Write rows of `key,WBL,...,SBR` under a header whose first column is `key`.
pub fn write_keyed_tmc<W: std::io::Write>(
    writer: W,
    key: &str,
    rows: &[(String, TmcTable)],
) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(tmc_header(key))?;
    for (k, t) in rows {
        let mut rec = vec![k.clone()];
        rec.extend(t.counts().iter().map(|c| c.to_string()));
        wtr.write_record(&rec)?;
    }
    wtr.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Per-edge count-per-lane rates plus the intersection-wide total rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CapacityReport {
    pub inflow: [u64; 4],
    pub outflow: [u64; 4],
    pub total: u64,
}

impl CapacityReport {
    /// Cells in table order: C1i, C1o, C2i, C2o, C3i, C3o, C4i, C4o, TC.
    pub fn cells(&self) -> [u64; 9] {
        let mut out = [0; 9];
        for z in 0..4 {
            out[2 * z] = self.inflow[z];
            out[2 * z + 1] = self.outflow[z];
        }
        out[8] = self.total;
        out
    }
}

fn rate(count: u64, lanes: u32) -> u64 {
    round_half_away(count as f64 / lanes as f64) as u64
}

pub fn zone_capacity_rates(geo: &IntersectionGeometry, tmc: &TmcTable) -> CapacityReport {
    CapacityReport {
        inflow: Zone::ALL.map(|z| rate(tmc.inflow_count(z), geo.lanes_in(z))),
        outflow: Zone::ALL.map(|z| rate(tmc.outflow_count(z), geo.lanes_out(z))),
        total: rate(tmc.total(), geo.total_lanes()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn int(id: &str) -> (IntersectionGeometry, TmcTable) {
        let geo = builtin_geometries()
            .into_iter()
            .find(|g| g.id() == id)
            .unwrap();
        let tmc = builtin_observed_tmc()
            .into_iter()
            .find(|(k, _)| k == id)
            .unwrap()
            .1;
        (geo, tmc)
    }

    #[test]
    fn destinations_match_right_hand_traffic() {
        use Movement::*;
        let expect = [
            (Wbl, Zone::North),
            (Wbt, Zone::East),
            (Wbr, Zone::South),
            (Nbl, Zone::East),
            (Nbt, Zone::South),
            (Nbr, Zone::West),
            (Ebl, Zone::South),
            (Ebt, Zone::West),
            (Ebr, Zone::North),
            (Sbl, Zone::West),
            (Sbt, Zone::North),
            (Sbr, Zone::East),
        ];
        for (m, d) in expect {
            assert_eq!(m.destination(), d, "{m}");
            assert_eq!(Movement::from_zones(m.origin(), d), Some(m));
        }
        assert_eq!(Movement::from_zones(Zone::West, Zone::West), None);
    }

    #[test]
    fn labels_round_trip() {
        for m in Movement::ALL {
            assert_eq!(m.label().parse::<Movement>().unwrap(), m);
        }
        assert!("XBL".parse::<Movement>().is_err());
        assert_eq!(Movement::Wbl.origin(), Zone::West);
        assert_eq!(Movement::Sbr.origin(), Zone::South);
    }

    #[test]
    fn inflow_examples() {
        let (_, int1) = int("INT1");
        assert_eq!(int1.inflow_count(Zone::North), 1204);
        assert_eq!(TmcTable::zero().inflow_count(Zone::West), 0);
        let (_, int2) = int("INT2");
        assert_eq!(int2.inflow_count(Zone::East), 752);
    }

    #[test]
    fn outflow_examples() {
        let (_, int1) = int("INT1");
        assert_eq!(int1.outflow_count(Zone::North), 1160);
        assert_eq!(int1.outflow_count(Zone::West), 1658);
        assert_eq!(TmcTable::zero().outflow_count(Zone::South), 0);
    }

    #[test]
    fn capacity_examples() {
        let (geo, tmc) = int("INT1");
        let r = zone_capacity_rates(&geo, &tmc);
        assert_eq!(r.inflow[1], 241);
        assert_eq!(r.outflow[1], 387);
        assert_eq!(r.total, 103);
        let (geo, tmc) = int("INT5");
        assert_eq!(zone_capacity_rates(&geo, &tmc).total, 483);
        let zero = zone_capacity_rates(&geo, &TmcTable::zero());
        assert_eq!(zero.cells(), [0; 9]);
    }

    #[test]
    fn geometry_rejects_zero_lanes() {
        assert!(IntersectionGeometry::new("x", [1, 1, 0, 1], [1; 4]).is_err());
        let g = IntersectionGeometry::new("x", [6, 5, 6, 6], [4, 3, 4, 3]).unwrap();
        assert_eq!(g.total_lanes(), 37);
    }

    #[test]
    fn geometry_csv_round_trip() {
        let geos = builtin_geometries();
        assert_eq!(geos.len(), 6);
        let mut buf = Vec::new();
        write_geometries(&mut buf, &geos).unwrap();
        assert_eq!(read_geometries(buf.as_slice()).unwrap(), geos);
        assert_eq!(String::from_utf8(buf).unwrap(), GEOMETRY_CSV);
    }

    #[test]
    fn tmc_header_is_checked() {
        let bad = "id,WBT,WBL,WBR,NBL,NBT,NBR,EBL,EBT,EBR,SBL,SBT,SBR\nx,0,0,0,0,0,0,0,0,0,0,0,0\n";
        assert!(read_keyed_tmc(bad.as_bytes()).is_err());
    }

    #[test]
    fn observed_tmc_round_trip() {
        let rows = builtin_observed_tmc();
        let mut buf = Vec::new();
        write_keyed_tmc(&mut buf, "id", &rows).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), OBSERVED_TMC_CSV);
        assert_eq!(read_keyed_tmc(buf.as_slice()).unwrap(), rows);
    }

    proptest::proptest! {
        #[test]
        fn flows_partition_total(counts in proptest::array::uniform12(0u64..10_000)) {
            let t = TmcTable::from_counts(counts);
            let ins: u64 = Zone::ALL.iter().map(|&z| t.inflow_count(z)).sum();
            let outs: u64 = Zone::ALL.iter().map(|&z| t.outflow_count(z)).sum();
            proptest::prop_assert_eq!(ins, t.total());
            proptest::prop_assert_eq!(outs, t.total());
        }

        #[test]
        fn total_rate_is_monotone(counts in proptest::array::uniform12(0u64..10_000), idx in 0usize..12, k in 0u64..1000) {
            let geo = &builtin_geometries()[idx % 6];
            let t = TmcTable::from_counts(counts);
            let mut more = t;
            more[Movement::ALL[idx]] += k;
            proptest::prop_assert!(zone_capacity_rates(geo, &more).total >= zone_capacity_rates(geo, &t).total);
        }
    }
}
