//! Text and binary file formats.
//!
//! Text formats are strict: tokens are separated by exactly one space, ids are
//! plain decimal digits, and anything left over on a line is an error. Lines
//! starting with `#` and empty lines are skipped.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::adaptive::DriftSample;
use crate::error::{Error, Result};
use crate::graph::{EventKind, EventLog, Graph, GraphEvent};
use crate::matrix::ColumnMatrix;
use crate::propagation::{PropagationConfig, PropagationState};

pub const MATRIX_MAGIC: &[u8; 4] = b"IGNN";
pub const MATRIX_VERSION: u16 = 1;
pub const STATE_VERSION: u32 = 1;

const MATRIX_HEADER_LEN: usize = 4 + 2 + 8 + 8;

pub const ESTIMATE_FILE: &str = "estimate.ignn";
pub const RESIDUAL_FILE: &str = "residual.ignn";
pub const SIGNAL_FILE: &str = "signal.ignn";
pub const GRAPH_FILE: &str = "graph.txt";
pub const STATE_HEADER_FILE: &str = "state.txt";

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse { line, message: message.into() }
}

/// Non-comment lines with their 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.split('\n')
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn parse_id(token: &str, line: usize) -> Result<usize> {
    if token.is_empty() || !token.bytes().all(|b| b.is_ascii_digit()) {
        return Err(parse_err(line, format!("expected a decimal id, found {token:?}")));
    }
    token
        .parse()
        .map_err(|_| parse_err(line, format!("id {token:?} is too large")))
}

fn parse_float(token: &str, line: usize) -> Result<f64> {
    let value: f64 = token
        .parse()
        .map_err(|_| parse_err(line, format!("expected a number, found {token:?}")))?;
    if !value.is_finite() {
        return Err(parse_err(line, format!("non-finite value {token:?}")));
    }
    Ok(value)
}

fn check_node(id: usize, n: usize, line: usize) -> Result<usize> {
    if id >= n {
        return Err(parse_err(line, format!("node {id} out of range for {n} nodes")));
    }
    Ok(id)
}

fn parse_header<'a>(lines: &mut impl Iterator<Item = (usize, &'a str)>) -> Result<usize> {
    let (line, text) = lines.next().ok_or_else(|| parse_err(0, "missing `n <count>` header"))?;
    let tokens: Vec<&str> = text.split(' ').collect();
    match tokens.as_slice() {
        ["n", count] => {
            let n = parse_id(count, line)?;
            if n == 0 {
                return Err(parse_err(line, "node count must be at least 1"));
            }
            Ok(n)
        }
        _ => Err(parse_err(line, format!("expected `n <count>` header, found {text:?}"))),
    }
}

fn parse_pair(tokens: &[&str], n: usize, line: usize) -> Result<(usize, usize)> {
    let u = check_node(parse_id(tokens[0], line)?, n, line)?;
    let v = check_node(parse_id(tokens[1], line)?, n, line)?;
    if u == v {
        return Err(parse_err(line, format!("self-loop ({u}, {u}) is implicit and may not be listed")));
    }
    Ok((u, v))
}

fn utf8(bytes: Vec<u8>) -> Result<String> {
    String::from_utf8(bytes).map_err(|e| parse_err(0, format!("input is not UTF-8: {e}")))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeList {
    pub graph: Graph,
    /// Lines naming an edge that was already listed.
    pub duplicates: usize,
}

pub fn parse_edge_list(text: &str) -> Result<EdgeList> {
    let mut lines = content_lines(text);
    let n = parse_header(&mut lines)?;
    let mut graph = Graph::new(n)?;
    let mut duplicates = 0;
    for (line, text) in lines {
        let tokens: Vec<&str> = text.split(' ').collect();
        if tokens.len() != 2 {
            return Err(parse_err(line, format!("expected `<u> <v>`, found {text:?}")));
        }
        let (u, v) = parse_pair(&tokens, n, line)?;
        if graph.has_edge(u, v) {
            duplicates += 1;
        } else {
            graph.insert_edge(u, v)?;
        }
    }
    Ok(EdgeList { graph, duplicates })
}

pub fn load_edge_list(mut source: impl Read) -> Result<EdgeList> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    parse_edge_list(&utf8(bytes)?)
}

/// Header plus every edge once as `min max`, in ascending order.
pub fn write_edge_list(g: &Graph) -> String {
    let mut out = format!("n {}\n", g.node_count());
    for (u, v) in g.edges() {
        out.push_str(&format!("{u} {v}\n"));
    }
    out
}

pub fn parse_events(text: &str) -> Result<EventLog> {
    let mut lines = content_lines(text);
    let n = parse_header(&mut lines)?;
    let mut log = EventLog::new(n);
    for (line, text) in lines {
        let tokens: Vec<&str> = text.split(' ').collect();
        if tokens.len() != 3 {
            return Err(parse_err(line, format!("expected `i|d <u> <v>`, found {text:?}")));
        }
        let (u, v) = parse_pair(&tokens[1..], n, line)?;
        let ev = match tokens[0] {
            "i" => GraphEvent::insert(u, v),
            "d" => GraphEvent::delete(u, v),
            other => return Err(parse_err(line, format!("unknown event kind {other:?}"))),
        };
        log.push(ev);
    }
    Ok(log)
}

pub fn load_events(mut source: impl Read) -> Result<EventLog> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    parse_events(&utf8(bytes)?)
}

pub fn write_events(log: &EventLog) -> String {
    let mut out = format!("n {}\n", log.node_count);
    for ev in &log.events {
        let tag = match ev.kind {
            EventKind::InsertEdge => 'i',
            EventKind::DeleteEdge => 'd',
        };
        out.push_str(&format!("{tag} {} {}\n", ev.u, ev.v));
    }
    out
}

/// One block id per line, no header.
pub fn parse_labels(text: &str) -> Result<Vec<usize>> {
    content_lines(text).map(|(line, t)| parse_id(t, line)).collect()
}

pub fn write_labels(labels: &[usize]) -> String {
    labels.iter().map(|b| format!("{b}\n")).collect()
}

/// Drift log line: `<event_index> <delta_z> [baseline]`, where the optional
/// baseline is the distance of the embedding from the initial one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftRecord {
    pub sample: DriftSample,
    pub baseline: Option<f64>,
}

pub fn parse_drift_log(text: &str) -> Result<Vec<DriftRecord>> {
    let mut out = Vec::new();
    for (line, text) in content_lines(text) {
        let tokens: Vec<&str> = text.split(' ').collect();
        if !(2..=3).contains(&tokens.len()) {
            return Err(parse_err(line, format!("expected `<event_index> <delta_z> [baseline]`, found {text:?}")));
        }
        let event_index = parse_id(tokens[0], line)? as u64;
        let delta_z = parse_float(tokens[1], line)?;
        if delta_z < 0.0 {
            return Err(parse_err(line, format!("negative drift {delta_z}")));
        }
        let baseline = tokens.get(2).map(|t| parse_float(t, line)).transpose()?;
        if let Some(prev) = out.last().map(|r: &DriftRecord| r.sample.event_index) {
            if event_index <= prev {
                return Err(parse_err(line, format!("event index {event_index} does not increase past {prev}")));
            }
        }
        out.push(DriftRecord { sample: DriftSample { event_index, delta_z }, baseline });
    }
    Ok(out)
}

pub fn write_drift_log(records: &[DriftRecord]) -> String {
    let mut out = String::new();
    for r in records {
        match r.baseline {
            Some(b) => out.push_str(&format!("{} {} {b}\n", r.sample.event_index, r.sample.delta_z)),
            None => out.push_str(&format!("{} {}\n", r.sample.event_index, r.sample.delta_z)),
        }
    }
    out
}

pub fn write_schedule(indices: &[u64]) -> String {
    indices.iter().map(|i| format!("{i}\n")).collect()
}

pub fn parse_schedule(text: &str) -> Result<Vec<u64>> {
    content_lines(text).map(|(line, t)| parse_id(t, line).map(|i| i as u64)).collect()
}

pub fn encode_matrix(m: &ColumnMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(MATRIX_HEADER_LEN + 8 * m.rows() * m.cols());
    out.extend_from_slice(MATRIX_MAGIC);
    out.extend_from_slice(&MATRIX_VERSION.to_le_bytes());
    out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
    for v in m.to_row_major() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_matrix(bytes: &[u8]) -> Result<ColumnMatrix> {
    if bytes.len() < MATRIX_HEADER_LEN {
        return Err(Error::MatrixFormat(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if &bytes[..4] != MATRIX_MAGIC {
        return Err(Error::MatrixFormat("bad magic".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != MATRIX_VERSION {
        return Err(Error::MatrixFormat(format!("unsupported version {version}")));
    }
    let word = |at: usize| u64::from_le_bytes(bytes[at..at + 8].try_into().expect("8 bytes"));
    let (rows, cols) = (word(6), word(14));
    let payload = rows
        .checked_mul(cols)
        .and_then(|c| c.checked_mul(8))
        .and_then(|p| usize::try_from(p).ok())
        .ok_or_else(|| Error::MatrixFormat(format!("{rows}x{cols} is too large")))?;
    let body = &bytes[MATRIX_HEADER_LEN..];
    if body.len() != payload {
        return Err(Error::MatrixFormat(format!(
            "{rows}x{cols} needs {payload} payload bytes, found {}",
            body.len()
        )));
    }
    let values: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    ColumnMatrix::from_row_major(rows as usize, cols as usize, &values)
}

pub fn write_matrix(mut sink: impl Write, m: &ColumnMatrix) -> Result<()> {
    sink.write_all(&encode_matrix(m))?;
    Ok(())
}

pub fn read_matrix(mut source: impl Read) -> Result<ColumnMatrix> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    decode_matrix(&bytes)
}

pub fn save_matrix(path: &Path, m: &ColumnMatrix) -> Result<()> {
    fs::write(path, encode_matrix(m))?;
    Ok(())
}

pub fn load_matrix(path: &Path) -> Result<ColumnMatrix> {
    decode_matrix(&fs::read(path)?)
}

/// Everything needed to resume incremental updates.
#[derive(Debug, Clone)]
pub struct SavedState {
    pub config: PropagationConfig,
    pub graph: Graph,
    pub state: PropagationState,
}

fn state_header(cfg: &PropagationConfig, state: &PropagationState) -> String {
    format!(
        "version={STATE_VERSION}\nalpha={}\nbeta={}\nepsilon={}\nnodes={}\ndims={}\n",
        cfg.alpha,
        cfg.beta,
        cfg.epsilon,
        state.node_count(),
        state.dims()
    )
}

/// Parses `key=value` lines; every key must appear exactly once.
pub fn parse_key_values(text: &str, keys: &[&str]) -> Result<Vec<String>> {
    let mut values: Vec<Option<String>> = vec![None; keys.len()];
    for (line, text) in content_lines(text) {
        let (key, value) = text
            .split_once('=')
            .ok_or_else(|| parse_err(line, format!("expected `key=value`, found {text:?}")))?;
        let slot = keys
            .iter()
            .position(|k| *k == key)
            .ok_or_else(|| parse_err(line, format!("unknown key {key:?}")))?;
        if values[slot].replace(value.to_string()).is_some() {
            return Err(parse_err(line, format!("repeated key {key:?}")));
        }
    }
    values
        .into_iter()
        .zip(keys)
        .map(|(v, k)| v.ok_or_else(|| parse_err(0, format!("missing key {k:?}"))))
        .collect()
}

pub fn save_state(dir: &Path, cfg: &PropagationConfig, g: &Graph, state: &PropagationState) -> Result<()> {
    if state.is_poisoned() {
        return Err(Error::Poisoned);
    }
    fs::create_dir_all(dir)?;
    save_matrix(&dir.join(ESTIMATE_FILE), state.estimate())?;
    save_matrix(&dir.join(RESIDUAL_FILE), state.residual())?;
    save_matrix(&dir.join(SIGNAL_FILE), state.signal())?;
    fs::write(dir.join(GRAPH_FILE), write_edge_list(g))?;
    fs::write(dir.join(STATE_HEADER_FILE), state_header(cfg, state))?;
    Ok(())
}

pub fn load_state(dir: &Path) -> Result<SavedState> {
    let header = fs::read_to_string(dir.join(STATE_HEADER_FILE))?;
    let v = parse_key_values(&header, &["version", "alpha", "beta", "epsilon", "nodes", "dims"])?;
    if v[0] != STATE_VERSION.to_string() {
        return Err(parse_err(0, format!("unsupported state version {:?}", v[0])));
    }
    let config = PropagationConfig::new(parse_float(&v[1], 0)?, parse_float(&v[2], 0)?, parse_float(&v[3], 0)?)?;
    let (nodes, dims) = (parse_id(&v[4], 0)?, parse_id(&v[5], 0)?);
    let graph = parse_edge_list(&fs::read_to_string(dir.join(GRAPH_FILE))?)?.graph;
    let estimate = load_matrix(&dir.join(ESTIMATE_FILE))?;
    let residual = load_matrix(&dir.join(RESIDUAL_FILE))?;
    let signal = load_matrix(&dir.join(SIGNAL_FILE))?;
    for m in [&estimate, &residual, &signal] {
        if m.rows() != nodes || m.cols() != dims {
            return Err(Error::ShapeMismatch { expected_rows: nodes, expected_cols: dims, rows: m.rows(), cols: m.cols() });
        }
    }
    if graph.node_count() != nodes {
        return Err(Error::ShapeMismatch {
            expected_rows: nodes,
            expected_cols: dims,
            rows: graph.node_count(),
            cols: dims,
        });
    }
    let state = PropagationState::from_parts(estimate, residual, signal)?;
    Ok(SavedState { config, graph, state })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn edge_list_examples() {
        let e = parse_edge_list("n 2\n0 1\n").unwrap();
        assert_eq!(e.graph.degrees(), vec![2, 2]);
        assert_eq!(e.duplicates, 0);
        let e = parse_edge_list("n 2\n0 1\n0 1\n").unwrap();
        assert_eq!(e.graph.degrees(), vec![2, 2]);
        assert_eq!(e.duplicates, 1);
        let e = parse_edge_list("# comment\nn 3\n").unwrap();
        assert_eq!(e.graph.edge_count(), 0);
        assert_eq!(e.graph.node_count(), 3);
    }

    #[test]
    fn edge_list_errors_carry_line_numbers() {
        let cases = [
            ("n 2\n0 1 \n", 2),
            ("n 2\n0  1\n", 2),
            ("n 2\n0 2\n", 2),
            ("n 2\n# c\n1 1\n", 3),
            ("n 2\n0 x\n", 2),
            ("n 2\n0 +1\n", 2),
            ("0 1\n", 1),
            ("n 0\n", 1),
            ("", 0),
        ];
        for (text, line) in cases {
            match parse_edge_list(text) {
                Err(Error::Parse { line: l, .. }) => assert_eq!(l, line, "{text:?}"),
                other => panic!("{text:?} gave {other:?}"),
            }
        }
    }

    #[test]
    fn edge_list_round_trip() {
        let mut g = Graph::new(5).unwrap();
        g.insert_edge(3, 1).unwrap();
        g.insert_edge(0, 4).unwrap();
        let text = write_edge_list(&g);
        assert_eq!(text, "n 5\n0 4\n1 3\n");
        assert_eq!(parse_edge_list(&text).unwrap().graph.canonical_adjacency(), g.canonical_adjacency());
    }

    #[test]
    fn events_round_trip_and_reject_garbage() {
        let text = "n 4\ni 0 1\nd 0 1\ni 2 3\n";
        let log = parse_events(text).unwrap();
        assert_eq!(log.events, vec![GraphEvent::insert(0, 1), GraphEvent::delete(0, 1), GraphEvent::insert(2, 3)]);
        assert_eq!(write_events(&log), text);
        assert!(parse_events("n 4\nx 0 1\n").is_err());
        assert!(parse_events("n 4\ni 0 1 2\n").is_err());
        assert!(parse_events("n 4\ni 0 0\n").is_err());
        assert!(parse_events("n 4\ni 0 1\r\n").is_err());
    }

    #[test]
    fn labels_and_schedule_round_trip() {
        assert_eq!(parse_labels(&write_labels(&[0, 2, 1])).unwrap(), vec![0, 2, 1]);
        assert_eq!(parse_schedule(&write_schedule(&[3, 7, 10])).unwrap(), vec![3, 7, 10]);
        assert!(parse_labels("1 2\n").is_err());
    }

    #[test]
    fn drift_log_parsing() {
        let recs = parse_drift_log("1 0.5\n2 0.25 1.5\n").unwrap();
        assert_eq!(recs[0].sample, DriftSample { event_index: 1, delta_z: 0.5 });
        assert_eq!(recs[1].baseline, Some(1.5));
        assert_eq!(parse_drift_log(&write_drift_log(&recs)).unwrap(), recs);
        assert!(parse_drift_log("1 -0.5\n").is_err());
        assert!(parse_drift_log("2 0.5\n2 0.5\n").is_err());
        assert!(parse_drift_log("1 NaN\n").is_err());
        assert!(parse_drift_log("1 0.5 1 2\n").is_err());
    }

    #[test]
    fn matrix_round_trip_is_bit_exact() {
        let m = ColumnMatrix::from_row_major(2, 3, &[1.0, -0.0, f64::MIN_POSITIVE, 1e300, -2.5, 0.1]).unwrap();
        let bytes = encode_matrix(&m);
        assert_eq!(bytes.len(), 22 + 48);
        assert_eq!(&bytes[..6], b"IGNN\x01\x00");
        assert_eq!(bytes[22..30], 1.0f64.to_le_bytes());
        assert_eq!(bytes[30..38], (-0.0f64).to_le_bytes());
        let back = decode_matrix(&bytes).unwrap();
        let bits = |m: &ColumnMatrix| m.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&m));
        assert_eq!(encode_matrix(&back), bytes);
    }

    #[test]
    fn matrix_rejects_malformed_input() {
        let bytes = encode_matrix(&ColumnMatrix::zeros(2, 2));
        let mut trailing = bytes.clone();
        trailing.push(0);
        assert!(decode_matrix(&trailing).is_err());
        assert!(decode_matrix(&bytes[..bytes.len() - 1]).is_err());
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(decode_matrix(&magic).is_err());
        let mut version = bytes.clone();
        version[4] = 2;
        assert!(decode_matrix(&version).is_err());
        let mut huge = bytes.clone();
        huge[6..14].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(decode_matrix(&huge).is_err());
        assert!(decode_matrix(b"IGN").is_err());
    }

    #[test]
    fn key_values() {
        let v = parse_key_values("a=1\nb=x=y\n", &["a", "b"]).unwrap();
        assert_eq!(v, vec!["1", "x=y"]);
        assert!(parse_key_values("a=1\n", &["a", "b"]).is_err());
        assert!(parse_key_values("a=1\na=2\nb=1\n", &["a", "b"]).is_err());
        assert!(parse_key_values("c=1\n", &["a"]).is_err());
    }
}
