//! Plain-text lattice snapshots of actions and reputations.
//!
//! ```text
//! t=1000 T=1.1 S=-0.1 seed=1
//! actions
//! CCD
//! ...
//! reputations
//! 1.000 0.250 0.000
//! ...
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::game::Action;
use crate::topology::NeighborGraph;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnapshotHeader {
    pub t: u64,
    pub temptation: f64,
    pub sucker: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub header: SnapshotHeader,
    pub side: usize,
    /// Row-major, `side * side` entries.
    pub actions: Vec<Action>,
    pub reputations: Vec<f64>,
}

pub fn render_snapshot(actions: &[Action], reputations: &[f64], side: usize, header: SnapshotHeader) -> Result<String> {
    let n = side * side;
    if actions.len() != n || reputations.len() != n {
        return Err(Error::Snapshot(format!(
            "{side}x{side} grid needs {n} cells, got {} actions and {} reputations",
            actions.len(),
            reputations.len()
        )));
    }
    if let Some(p) = reputations.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::Snapshot(format!("reputation {p} outside [0, 1]")));
    }
    let mut out = format!(
        "t={} T={} S={} seed={}\nactions\n",
        header.t, header.temptation, header.sucker, header.seed
    );
    for row in actions.chunks(side) {
        out.extend(row.iter().map(|a| a.as_char()));
        out.push('\n');
    }
    out.push_str("reputations\n");
    for row in reputations.chunks(side) {
        let cells: Vec<String> = row.iter().map(|p| format!("{p:.3}")).collect();
        out.push_str(&cells.join(" "));
        out.push('\n');
    }
    Ok(out)
}

/// Writes a snapshot; only lattice topologies have a grid to draw.
pub fn export_snapshot(
    graph: &NeighborGraph,
    actions: &[Action],
    reputations: &[f64],
    header: SnapshotHeader,
    path: &Path,
) -> Result<()> {
    let side = graph.side().ok_or_else(|| {
        Error::Snapshot(format!(
            "{:?} topology has no grid layout; snapshots need a lattice",
            graph.kind()
        ))
    })?;
    let text = render_snapshot(actions, reputations, side, header)?;
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn header_field<T: std::str::FromStr>(fields: &[&str], key: &str) -> Result<T> {
    fields
        .iter()
        .find_map(|f| f.strip_prefix(key).and_then(|v| v.strip_prefix('=')))
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Snapshot(format!("header is missing a valid `{key}`")))
}

pub fn parse_snapshot(text: &str) -> Result<Snapshot> {
    let lines: Vec<&str> = text.lines().collect();
    let fields: Vec<&str> = lines.first().map(|l| l.split_whitespace().collect()).unwrap_or_default();
    let header = SnapshotHeader {
        t: header_field(&fields, "t")?,
        temptation: header_field(&fields, "T")?,
        sucker: header_field(&fields, "S")?,
        seed: header_field(&fields, "seed")?,
    };
    if lines.get(1) != Some(&"actions") {
        return Err(Error::Snapshot("line 2 must be `actions`".into()));
    }
    let split = lines
        .iter()
        .position(|l| *l == "reputations")
        .ok_or_else(|| Error::Snapshot("missing `reputations` section".into()))?;
    let action_rows = &lines[2..split];
    let rep_rows = &lines[split + 1..];
    let side = action_rows.len();
    if side == 0 || rep_rows.len() != side {
        return Err(Error::Snapshot(format!(
            "grid has {side} action rows and {} reputation rows",
            rep_rows.len()
        )));
    }
    let mut actions = Vec::with_capacity(side * side);
    for (r, row) in action_rows.iter().enumerate() {
        if row.chars().count() != side {
            return Err(Error::Snapshot(format!("action row {r} is not {side} wide")));
        }
        for c in row.chars() {
            actions.push(match c {
                'C' => Action::Cooperate,
                'D' => Action::Defect,
                other => return Err(Error::Snapshot(format!("unknown action `{other}` in row {r}"))),
            });
        }
    }
    let mut reputations = Vec::with_capacity(side * side);
    for (r, row) in rep_rows.iter().enumerate() {
        let cells: Vec<&str> = row.split_whitespace().collect();
        if cells.len() != side {
            return Err(Error::Snapshot(format!("reputation row {r} is not {side} wide")));
        }
        for c in cells {
            reputations.push(
                c.parse::<f64>()
                    .map_err(|_| Error::Snapshot(format!("bad reputation `{c}` in row {r}")))?,
            );
        }
    }
    Ok(Snapshot {
        header,
        side,
        actions,
        reputations,
    })
}
