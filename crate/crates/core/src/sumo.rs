//! SUMO route and traffic-light files.
//!
//! Edges are named `1i`..`4i` (entering from W, N, E, S) and `1o`..`4o`.
//! Traffic-light state strings have one slot per movement in
//! [`Movement::ALL`] order (W, N, E, S approaches, each L, T, R); this link
//! order is a convention of these files, so the network's connections have
//! to be declared in the same order.

use std::collections::HashMap;
use std::io::Write;

use quick_xml::events::{BytesDecl, BytesEnd, BytesStart, Event};
use quick_xml::{Reader, Writer};

use crate::error::{Error, Result};
use crate::model::{Movement, Zone};
use crate::signals::{PhasePlan, SignalProgram};
use crate::trafficgen::VehiclePlan;

const VTYPE: &str = "car";

fn writer() -> Writer<Vec<u8>> {
    let mut w = Writer::new_with_indent(Vec::new(), b' ', 4);
    w.write_event(Event::Decl(BytesDecl::new("1.0", Some("UTF-8"), None)))
        .expect("writing to memory");
    w
}

fn finish(w: Writer<Vec<u8>>) -> String {
    let mut bytes = w.into_inner();
    bytes.push(b'\n');
    String::from_utf8(bytes).expect("writer emits UTF-8")
}

fn attr(e: &BytesStart<'_>, name: &str) -> Result<Option<String>> {
    for a in e.attributes() {
        let a = a.map_err(quick_xml::Error::from)?;
        if a.key.as_ref() == name.as_bytes() {
            return Ok(Some(a.unescape_value()?.into_owned()));
        }
    }
    Ok(None)
}

fn required(e: &BytesStart<'_>, name: &str) -> Result<String> {
    attr(e, name)?.ok_or_else(|| {
        Error::Malformed(format!(
            "<{}> lacks '{name}'",
            String::from_utf8_lossy(e.name().as_ref())
        ))
    })
}

/// Route document for the vehicles; they must be sorted by departure.
pub fn emit_routes(plans: &[VehiclePlan]) -> Result<String> {
    if let Some(i) = plans.windows(2).position(|w| w[1].depart < w[0].depart) {
        return Err(Error::UnsortedPlans(i + 1));
    }
    let mut w = writer();
    let io = |e| Error::io("<routes>", e);
    w.write_event(Event::Start(BytesStart::new("routes")))
        .map_err(io)?;
    w.create_element("vType")
        .with_attributes([
            ("id", VTYPE),
            ("accel", "2.6"),
            ("decel", "4.5"),
            ("length", "5"),
            ("maxSpeed", "13.89"),
        ])
        .write_empty()
        .map_err(io)?;
    for p in plans {
        let depart = format!("{}.00", p.depart);
        let edges = format!(
            "{} {}",
            p.movement.origin().inbound_edge(),
            p.movement.destination().outbound_edge()
        );
        w.create_element("vehicle")
            .with_attributes([
                ("id", p.id.as_str()),
                ("type", VTYPE),
                ("depart", depart.as_str()),
            ])
            .write_inner_content(|w| {
                w.create_element("route")
                    .with_attribute(("edges", edges.as_str()))
                    .write_empty()
                    .map(|_| ())
            })
            .map_err(io)?;
    }
    w.write_event(Event::End(BytesEnd::new("routes")))
        .map_err(io)?;
    Ok(finish(w))
}

fn edge_zone(edge: &str, suffix: char) -> Option<Zone> {
    let digit = edge.strip_suffix(suffix)?.parse::<usize>().ok()?;
    (1..=4)
        .contains(&digit)
        .then(|| Zone::from_index(digit - 1))
}

/// Parse a route document back into vehicle plans.
pub fn parse_routes(xml: &str) -> Result<Vec<VehiclePlan>> {
    let mut reader = Reader::from_str(xml);
    reader.config_mut().trim_text(true);
    let mut plans = Vec::new();
    let mut current: Option<(String, u32)> = None;
    loop {
        match reader.read_event()? {
            Event::Start(e) | Event::Empty(e) if e.name().as_ref() == b"vehicle" => {
                let id = required(&e, "id")?;
                let raw = required(&e, "depart")?;
                let secs: f64 = raw
                    .parse()
                    .map_err(|_| Error::Malformed(format!("vehicle '{id}' has depart '{raw}'")))?;
                if !(secs >= 0.0) || secs.fract() != 0.0 || secs > u32::MAX as f64 {
                    return Err(Error::Malformed(format!(
                        "vehicle '{id}' departs at {raw}; whole seconds expected"
                    )));
                }
                current = Some((id, secs as u32));
            }
            Event::Start(e) | Event::Empty(e) if e.name().as_ref() == b"route" => {
                let (id, depart) = current
                    .take()
                    .ok_or_else(|| Error::Malformed("<route> outside a <vehicle>".into()))?;
                let edges = required(&e, "edges")?;
                let parts: Vec<&str> = edges.split_whitespace().collect();
                let movement = match parts[..] {
                    [a, b] => edge_zone(a, 'i')
                        .zip(edge_zone(b, 'o'))
                        .and_then(|(o, d)| Movement::from_zones(o, d)),
                    _ => None,
                }
                .ok_or_else(|| Error::Malformed(format!("vehicle '{id}' has route '{edges}'")))?;
                plans.push(VehiclePlan {
                    id,
                    depart,
                    movement,
                });
            }
            Event::Eof => break,
            _ => {}
        }
    }
    Ok(plans)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TlsPhase {
    pub duration: u32,
    pub state: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TlsProgram {
    pub program_id: String,
    pub phases: Vec<TlsPhase>,
}

impl TlsProgram {
    pub fn cycle(&self) -> u32 {
        self.phases.iter().map(|p| p.duration).sum()
    }
}

/// Green then yellow for each of the four phases.
pub fn plan_phases(plan: &PhasePlan) -> Vec<TlsPhase> {
    let mut out = Vec::with_capacity(8);
    for phase in plan.phases() {
        let green: String = Movement::ALL
            .iter()
            .map(|&m| {
                if phase.served.contains(m) {
                    'G'
                } else if phase.permissive.contains(m) {
                    'g'
                } else {
                    'r'
                }
            })
            .collect();
        let yellow = green
            .chars()
            .map(|c| if c == 'r' { 'r' } else { 'y' })
            .collect();
        out.push(TlsPhase {
            duration: phase.green,
            state: green,
        });
        out.push(TlsPhase {
            duration: phase.yellow,
            state: yellow,
        });
    }
    out
}

/// One tlLogic per distinct plan and the minute-by-minute schedule saying
/// which one is active.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TlsBundle {
    pub tls_id: String,
    pub programs: Vec<TlsProgram>,
    /// `(minute, program_id)` for every minute of the program.
    pub schedule: Vec<(u32, String)>,
}

pub fn emit_tls(program: &SignalProgram, tls_id: &str) -> TlsBundle {
    let mut programs: Vec<TlsProgram> = Vec::new();
    let mut index: HashMap<PhasePlan, usize> = HashMap::new();
    let mut schedule = Vec::new();
    for e in program.entries() {
        let k = *index.entry(e.plan).or_insert_with(|| {
            programs.push(TlsProgram {
                program_id: format!("p{}", programs.len()),
                phases: plan_phases(&e.plan),
            });
            programs.len() - 1
        });
        for m in e.start..e.end {
            schedule.push((m, programs[k].program_id.clone()));
        }
    }
    TlsBundle {
        tls_id: tls_id.to_string(),
        programs,
        schedule,
    }
}

impl TlsBundle {
    pub fn to_xml(&self) -> Result<String> {
        let mut w = writer();
        let io = |e| Error::io("<additional>", e);
        w.write_event(Event::Start(BytesStart::new("additional")))
            .map_err(io)?;
        for p in &self.programs {
            w.create_element("tlLogic")
                .with_attributes([
                    ("id", self.tls_id.as_str()),
                    ("type", "static"),
                    ("programID", p.program_id.as_str()),
                    ("offset", "0"),
                ])
                .write_inner_content(|w| {
                    for ph in &p.phases {
                        let d = ph.duration.to_string();
                        w.create_element("phase")
                            .with_attributes([
                                ("duration", d.as_str()),
                                ("state", ph.state.as_str()),
                            ])
                            .write_empty()?;
                    }
                    Ok::<(), std::io::Error>(())
                })
                .map_err(io)?;
        }
        w.write_event(Event::End(BytesEnd::new("additional")))
            .map_err(io)?;
        Ok(finish(w))
    }

    /// `minute,program_id`
    pub fn write_schedule_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["minute", "program_id"])?;
        for (m, id) in &self.schedule {
            wtr.write_record([m.to_string(), id.clone()])?;
        }
        wtr.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// Parse the tlLogic programs of an additional file. Returns the traffic
/// light id (empty if there are no programs) and the programs in order.
pub fn parse_tls(xml: &str) -> Result<(String, Vec<TlsProgram>)> {
    let mut reader = Reader::from_str(xml);
    reader.config_mut().trim_text(true);
    let mut tls_id = String::new();
    let mut programs: Vec<TlsProgram> = Vec::new();
    loop {
        match reader.read_event()? {
            Event::Start(e) | Event::Empty(e) if e.name().as_ref() == b"tlLogic" => {
                tls_id = required(&e, "id")?;
                programs.push(TlsProgram {
                    program_id: required(&e, "programID")?,
                    phases: Vec::new(),
                });
            }
            Event::Start(e) | Event::Empty(e) if e.name().as_ref() == b"phase" => {
                let program = programs
                    .last_mut()
                    .ok_or_else(|| Error::Malformed("<phase> outside a <tlLogic>".into()))?;
                let raw = required(&e, "duration")?;
                let duration = raw
                    .parse::<f64>()
                    .ok()
                    .filter(|d| *d >= 0.0 && d.fract() == 0.0)
                    .ok_or_else(|| Error::Malformed(format!("phase duration '{raw}'")))?
                    as u32;
                let state = required(&e, "state")?;
                if state.len() != 12 || !state.chars().all(|c| "GgyrR".contains(c)) {
                    return Err(Error::Malformed(format!("phase state '{state}'")));
                }
                program.phases.push(TlsPhase { duration, state });
            }
            Event::Eof => break,
            _ => {}
        }
    }
    Ok((tls_id, programs))
}
