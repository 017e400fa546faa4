//! Readers for the TNTP `_net.tntp` and `_trips.tntp` text formats.

use std::collections::HashMap;

use super::{Link, Network, OdEntry, OdTable};
use crate::error::{MateError, Result};

struct Metadata {
    values: HashMap<String, String>,
    /// 0-based index of the first line after `<END OF METADATA>`.
    body_start: usize,
}

fn read_metadata(lines: &[&str]) -> Result<Metadata> {
    let mut values = HashMap::new();
    for (i, raw) in lines.iter().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('~') {
            continue;
        }
        if !line.starts_with('<') {
            return Err(MateError::parse(i + 1, "expected a <KEY> metadata line"));
        }
        let close = line
            .find('>')
            .ok_or_else(|| MateError::parse(i + 1, "unterminated metadata key"))?;
        let key = line[1..close].trim().to_ascii_uppercase();
        if key == "END OF METADATA" {
            return Ok(Metadata {
                values,
                body_start: i + 1,
            });
        }
        values.insert(key, line[close + 1..].trim().to_string());
    }
    Err(MateError::parse(lines.len(), "missing <END OF METADATA>"))
}

fn metadata_count(meta: &Metadata, key: &str, line: usize) -> Result<usize> {
    let raw = meta
        .values
        .get(key)
        .ok_or_else(|| MateError::parse(line, format!("missing <{key}> in header")))?;
    raw.parse()
        .map_err(|_| MateError::parse(line, format!("<{key}> is not an integer: {raw:?}")))
}

fn parse_number(token: &str, line: usize, what: &str) -> Result<f64> {
    token
        .parse::<f64>()
        .map_err(|_| MateError::parse(line, format!("invalid {what}: {token:?}")))
}

/// Parses a TNTP network file. Nodes are labelled `1..=<NUMBER OF NODES>`.
pub fn parse_tntp_network(text: &str) -> Result<Network> {
    let lines: Vec<&str> = text.lines().collect();
    let meta = read_metadata(&lines)?;
    let header_line = meta.body_start.max(1);
    let num_nodes = metadata_count(&meta, "NUMBER OF NODES", header_line)?;
    let num_links = metadata_count(&meta, "NUMBER OF LINKS", header_line)?;

    let mut links = Vec::with_capacity(num_links);
    for (offset, raw) in lines[meta.body_start..].iter().enumerate() {
        let line_no = meta.body_start + offset + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('~') {
            continue;
        }
        let tokens: Vec<&str> = line
            .trim_end_matches(';')
            .split_whitespace()
            .filter(|t| *t != ";")
            .collect();
        if tokens.len() < 5 {
            return Err(MateError::parse(
                line_no,
                format!("expected at least 5 link fields, found {}", tokens.len()),
            ));
        }
        let node = |token: &str| -> Result<usize> {
            let label: usize = token
                .parse()
                .map_err(|_| MateError::parse(line_no, format!("invalid node id {token:?}")))?;
            if label == 0 || label > num_nodes {
                return Err(MateError::parse(
                    line_no,
                    format!("dangling node reference {label} (network has {num_nodes} nodes)"),
                ));
            }
            Ok(label - 1)
        };
        let tail = node(tokens[0])?;
        let head = node(tokens[1])?;
        let capacity = parse_number(tokens[2], line_no, "capacity")?;
        let free_flow_time = parse_number(tokens[4], line_no, "free-flow time")?;
        if !(capacity > 0.0) {
            return Err(MateError::parse(line_no, format!("non-positive capacity {capacity}")));
        }
        if !(free_flow_time > 0.0) {
            return Err(MateError::parse(
                line_no,
                format!("non-positive free-flow time {free_flow_time}"),
            ));
        }
        links.push(Link {
            tail,
            head,
            capacity,
            free_flow_time,
        });
    }
    if links.is_empty() {
        return Err(MateError::parse(lines.len(), "empty link section"));
    }
    if links.len() != num_links {
        return Err(MateError::parse(
            lines.len(),
            format!("header declares {num_links} links, found {}", links.len()),
        ));
    }
    Network::new((1..=num_nodes as u64).collect(), links)
}

/// Parses a TNTP trips file against `network`'s node labels.
pub fn parse_tntp_trips(text: &str, network: &Network) -> Result<OdTable> {
    let lines: Vec<&str> = text.lines().collect();
    let meta = read_metadata(&lines)?;
    metadata_count(&meta, "NUMBER OF ZONES", meta.body_start.max(1))?;

    let zone = |token: &str, line_no: usize| -> Result<usize> {
        let label: u64 = token
            .trim()
            .parse()
            .map_err(|_| MateError::parse(line_no, format!("invalid zone id {token:?}")))?;
        network
            .node_index(label)
            .ok_or_else(|| MateError::parse(line_no, format!("dangling node reference {label}")))
    };

    let mut entries = Vec::new();
    let mut origin: Option<usize> = None;
    for (offset, raw) in lines[meta.body_start..].iter().enumerate() {
        let line_no = meta.body_start + offset + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('~') {
            continue;
        }
        if let Some(rest) = line.strip_prefix("Origin") {
            origin = Some(zone(rest, line_no)?);
            continue;
        }
        let o = origin.ok_or_else(|| MateError::parse(line_no, "destination entries before any Origin"))?;
        for cell in line.split(';').map(str::trim).filter(|c| !c.is_empty()) {
            let (dest, value) = cell
                .split_once(':')
                .ok_or_else(|| MateError::parse(line_no, format!("expected `dest : value`, got {cell:?}")))?;
            let demand = parse_number(value.trim(), line_no, "demand")?;
            if demand < 0.0 {
                return Err(MateError::parse(line_no, format!("negative demand {demand}")));
            }
            entries.push(OdEntry {
                origin: o,
                destination: zone(dest, line_no)?,
                demand,
            });
        }
    }
    Ok(OdTable::new(entries))
}

/// Parses a network file and its trip table.
pub fn parse_tntp(net_text: &str, trips_text: &str) -> Result<(Network, OdTable)> {
    let network = parse_tntp_network(net_text)?;
    let trips = parse_tntp_trips(trips_text, &network)?;
    Ok((network, trips))
}
