//! TOML scenario files.
//!
//! Nodes are referenced by name. Unknown keys are rejected. Links are taken
//! as written: a link whose medium does not suit its endpoints loads fine
//! and is reported by [`Scenario::validate_topology`].

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::EngineConfig;
use crate::radio::{RadioOverrides, RadioParams, SPEED_OF_LIGHT};
use crate::topology::{
    Carrier, Directive, FlowSpec, Link, LinkId, Medium, Node, NodeId, Position, Role, Scenario, DEFAULT_PACKET_SIZE,
    DEFAULT_WIRED_DELAY,
};
use crate::trace::Assertion;

const PAPER_REFERENCE: &str = include_str!("../scenarios/paper-reference.toml");
const BAP_COMPARE: &str = include_str!("../scenarios/bap-compare.toml");

/// Names accepted by [`builtin`].
pub const BUILTIN: [&str; 2] = ["paper-reference", "bap-compare"];

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("{0}")]
    Toml(#[from] toml::de::Error),
    #[error("{key} (line {line}): {message}")]
    Invalid { key: String, line: usize, message: String },
    #[error("unknown built-in scenario `{0}`")]
    UnknownBuiltin(String),
    #[error("{0}: {1}")]
    Io(String, std::io::Error),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileNode {
    name: String,
    role: Role,
    position: Position,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tx_power: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    group: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cell: Option<Carrier>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum FileMedium {
    Wired,
    Radio,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileLink {
    endpoints: [String; 2],
    medium: FileMedium,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    /// bit/s, wired only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    capacity: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    carrier: Option<Carrier>,
    /// Seconds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    delay: Option<f64>,
    #[serde(default, skip_serializing_if = "RadioOverrides::is_empty")]
    radio: RadioOverrides,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileFlow {
    id: String,
    src: String,
    dst: String,
    rate: f64,
    #[serde(default = "default_packet_size")]
    packet_size: u32,
    start: f64,
    stop: f64,
}

fn default_packet_size() -> u32 {
    DEFAULT_PACKET_SIZE
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    name: String,
    #[serde(default)]
    seed: u64,
    duration: f64,
    #[serde(default)]
    radio_defaults: RadioParams,
    #[serde(default)]
    engine: EngineConfig,
    #[serde(default, rename = "node")]
    nodes: Vec<FileNode>,
    #[serde(default, rename = "link")]
    links: Vec<FileLink>,
    #[serde(default, rename = "flow")]
    flows: Vec<FileFlow>,
    #[serde(default)]
    schedule: Vec<Directive>,
    #[serde(default, rename = "assert")]
    assertions: Vec<Assertion>,
}

/// Line of the `n`-th `[[table]]` header, 1-based; 0 when not found.
fn table_line(text: &str, table: &str, n: usize) -> usize {
    let header = format!("[[{table}]]");
    text.lines()
        .enumerate()
        .filter(|(_, l)| l.trim() == header)
        .nth(n)
        .map_or(0, |(i, _)| i + 1)
}

pub fn parse(text: &str) -> Result<Scenario, ParseError> {
    let file: ScenarioFile = toml::from_str(text)?;
    let invalid = |table: &str, i: usize, field: &str, message: String| ParseError::Invalid {
        key: format!("{table}[{i}].{field}"),
        line: table_line(text, table, i),
        message,
    };

    let mut s = Scenario::new(file.name, file.duration);
    s.seed = file.seed;
    s.radio_defaults = file.radio_defaults;
    s.engine = file.engine;
    s.schedule = file.schedule;
    s.assertions = file.assertions;
    for (i, n) in file.nodes.into_iter().enumerate() {
        s.nodes.push(Node {
            id: NodeId(i as u32 + 1),
            name: n.name,
            role: n.role,
            position: n.position,
            tx_power: n.tx_power,
            owner_group: n.group,
            cell: n.cell,
        });
    }
    let lookup = |s: &Scenario, table: &str, i: usize, field: &str, name: &str| {
        s.node_by_name(name)
            .map(|n| n.id)
            .ok_or_else(|| invalid(table, i, field, format!("unknown node `{name}`")))
    };
    for (i, l) in file.links.into_iter().enumerate() {
        let a = lookup(&s, "link", i, "endpoints", &l.endpoints[0])?;
        let b = lookup(&s, "link", i, "endpoints", &l.endpoints[1])?;
        let medium = match l.medium {
            FileMedium::Wired => Medium::Wired {
                capacity: l
                    .capacity
                    .ok_or_else(|| invalid("link", i, "capacity", "wired link needs a capacity".into()))?,
            },
            FileMedium::Radio => {
                let du_cell = [a, b]
                    .iter()
                    .filter_map(|n| s.node(*n))
                    .find(|n| n.role.is_du())
                    .and_then(|n| n.cell.clone());
                Medium::Radio {
                    carrier: l.carrier.or(du_cell).ok_or_else(|| {
                        invalid("link", i, "carrier", "radio link needs a carrier or a DU endpoint with a cell".into())
                    })?,
                }
            }
        };
        let delay = l.delay.unwrap_or_else(|| match medium {
            Medium::Wired { .. } => DEFAULT_WIRED_DELAY,
            Medium::Radio { .. } => {
                let (pa, pb) = (s.node(a).unwrap().position, s.node(b).unwrap().position);
                pa.distance(&pb) / SPEED_OF_LIGHT
            }
        });
        s.links.push(Link {
            id: LinkId(i as u32 + 1),
            name: l.name,
            endpoints: (a, b),
            medium,
            propagation_delay: delay,
            radio: l.radio,
        });
    }
    for (i, f) in file.flows.into_iter().enumerate() {
        let src = lookup(&s, "flow", i, "src", &f.src)?;
        let dst = lookup(&s, "flow", i, "dst", &f.dst)?;
        s.flows.push(FlowSpec {
            id: f.id,
            src,
            dst,
            rate: f.rate,
            packet_size: f.packet_size,
            start: f.start,
            stop: f.stop,
        });
    }
    Ok(s)
}

pub fn load(path: &Path) -> Result<Scenario, ParseError> {
    let text = std::fs::read_to_string(path).map_err(|e| ParseError::Io(path.display().to_string(), e))?;
    parse(&text)
}

/// A bundled scenario by name.
pub fn builtin(name: &str) -> Result<Scenario, ParseError> {
    match name {
        "paper-reference" => parse(PAPER_REFERENCE),
        "bap-compare" => parse(BAP_COMPARE),
        other => Err(ParseError::UnknownBuiltin(other.to_string())),
    }
}

/// Serializes a scenario back to the file format.
pub fn to_toml(s: &Scenario) -> Result<String, toml::ser::Error> {
    let name = |id: NodeId| s.node(id).map_or_else(|| id.to_string(), |n| n.name.clone());
    let file = ScenarioFile {
        name: s.name.clone(),
        seed: s.seed,
        duration: s.duration,
        radio_defaults: s.radio_defaults.clone(),
        engine: s.engine.clone(),
        nodes: s
            .nodes
            .iter()
            .map(|n| FileNode {
                name: n.name.clone(),
                role: n.role,
                position: n.position,
                tx_power: n.tx_power,
                group: n.owner_group.clone(),
                cell: n.cell.clone(),
            })
            .collect(),
        links: s
            .links
            .iter()
            .map(|l| {
                let (medium, capacity, carrier) = match &l.medium {
                    Medium::Wired { capacity } => (FileMedium::Wired, Some(*capacity), None),
                    Medium::Radio { carrier } => (FileMedium::Radio, None, Some(carrier.clone())),
                };
                FileLink {
                    endpoints: [name(l.endpoints.0), name(l.endpoints.1)],
                    medium,
                    name: l.name.clone(),
                    capacity,
                    carrier,
                    delay: Some(l.propagation_delay),
                    radio: l.radio.clone(),
                }
            })
            .collect(),
        flows: s
            .flows
            .iter()
            .map(|f| FileFlow {
                id: f.id.clone(),
                src: name(f.src),
                dst: name(f.dst),
                rate: f.rate,
                packet_size: f.packet_size,
                start: f.start,
                stop: f.stop,
            })
            .collect(),
        schedule: s.schedule.clone(),
        assertions: s.assertions.clone(),
    };
    toml::to_string(&file)
}
