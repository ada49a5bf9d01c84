//! Interaction structures: periodic lattices and well-mixed round matchings.
//!
//! Agents on an `L × L` lattice are indexed row-major, `i = row * L + col`,
//! and "north" is `row - 1`. Neighbour lists use a fixed compass order so
//! that network input slots keep their meaning over time.

use std::borrow::Cow;
use std::collections::HashSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TopologyKind {
    LatticeVonNeumann,
    LatticeMoore,
    Honeycomb,
    WellMixed { k: usize },
}

impl TopologyKind {
    pub fn is_lattice(self) -> bool {
        !matches!(self, TopologyKind::WellMixed { .. })
    }
}

/// Uniform-degree adjacency for one interaction round, stored flat.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Adjacency {
    degree: usize,
    flat: Vec<usize>,
}

impl Adjacency {
    fn from_lists(lists: Vec<Vec<usize>>, degree: usize) -> Self {
        let mut flat = Vec::with_capacity(lists.len() * degree);
        for l in lists {
            debug_assert_eq!(l.len(), degree);
            flat.extend(l);
        }
        Adjacency { degree, flat }
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn n_agents(&self) -> usize {
        self.flat.len() / self.degree
    }

    pub fn neighbours(&self, i: usize) -> &[usize] {
        &self.flat[i * self.degree..(i + 1) * self.degree]
    }

    /// Slot of `j` in `i`'s neighbour list.
    pub fn slot_of(&self, i: usize, j: usize) -> Option<usize> {
        self.neighbours(i).iter().position(|&x| x == j)
    }
}

#[derive(Debug, Clone)]
pub struct NeighborGraph {
    kind: TopologyKind,
    n_agents: usize,
    degree: usize,
    side: Option<usize>,
    fixed: Option<Adjacency>,
    seed: u64,
    resample_each_step: bool,
}

fn wrap(x: isize, l: usize) -> usize {
    x.rem_euclid(l as isize) as usize
}

/// Builds a periodic `side × side` lattice of the given kind.
pub fn build_lattice(side: usize, kind: TopologyKind) -> Result<NeighborGraph> {
    if side < 3 {
        return Err(Error::Topology(format!(
            "lattice side {side} too small; periodic wrap needs at least 3"
        )));
    }
    let offsets: Vec<(isize, isize)> = match kind {
        TopologyKind::LatticeVonNeumann => vec![(-1, 0), (0, 1), (1, 0), (0, -1)],
        TopologyKind::LatticeMoore => vec![
            (-1, 0),
            (0, 1),
            (1, 0),
            (0, -1),
            (-1, 1),
            (1, 1),
            (1, -1),
            (-1, -1),
        ],
        TopologyKind::Honeycomb => {
            if side % 2 != 0 {
                return Err(Error::Topology(format!(
                    "honeycomb brick-wall tiling needs an even side, got {side}"
                )));
            }
            Vec::new()
        }
        TopologyKind::WellMixed { .. } => {
            return Err(Error::Topology(
                "well-mixed populations are built with build_well_mixed".into(),
            ))
        }
    };
    let l = side;
    let mut lists = Vec::with_capacity(l * l);
    for row in 0..l {
        for col in 0..l {
            let (r, c) = (row as isize, col as isize);
            let at = |dr: isize, dc: isize| wrap(r + dr, l) * l + wrap(c + dc, l);
            let list = if kind == TopologyKind::Honeycomb {
                // brick wall: the vertical bond points down on even parity
                let vertical = if (row + col) % 2 == 0 { at(1, 0) } else { at(-1, 0) };
                vec![vertical, at(0, 1), at(0, -1)]
            } else {
                offsets.iter().map(|&(dr, dc)| at(dr, dc)).collect()
            };
            lists.push(list);
        }
    }
    let degree = lists[0].len();
    Ok(NeighborGraph {
        kind,
        n_agents: l * l,
        degree,
        side: Some(l),
        fixed: Some(Adjacency::from_lists(lists, degree)),
        seed: 0,
        resample_each_step: false,
    })
}

/// Well-mixed population with `k` opponents per round, resampled each round.
pub fn build_well_mixed(n: usize, k: usize, seed: u64) -> Result<NeighborGraph> {
    build_well_mixed_with(n, k, seed, true)
}

pub fn build_well_mixed_with(
    n: usize,
    k: usize,
    seed: u64,
    resample_each_step: bool,
) -> Result<NeighborGraph> {
    if k == 0 || k >= n {
        return Err(Error::Topology(format!(
            "well-mixed needs 0 < k < n, got n={n} k={k}"
        )));
    }
    if (n * k) % 2 != 0 {
        return Err(Error::Topology(format!(
            "no {k}-regular round graph on {n} agents (n*k odd)"
        )));
    }
    let mut g = NeighborGraph {
        kind: TopologyKind::WellMixed { k },
        n_agents: n,
        degree: k,
        side: None,
        fixed: None,
        seed,
        resample_each_step,
    };
    if !resample_each_step {
        g.fixed = Some(g.sample_round(0));
    }
    Ok(g)
}

impl NeighborGraph {
    pub fn kind(&self) -> TopologyKind {
        self.kind
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn side(&self) -> Option<usize> {
        self.side
    }

    pub fn resample_each_step(&self) -> bool {
        self.resample_each_step
    }

    /// Adjacency for interaction round `t`. Lattices ignore `t`.
    pub fn round(&self, t: u64) -> Cow<'_, Adjacency> {
        match &self.fixed {
            Some(adj) => Cow::Borrowed(adj),
            None => Cow::Owned(self.sample_round(t)),
        }
    }

    pub fn neighbours(&self, i: usize, t: u64) -> Result<Vec<usize>> {
        if i >= self.n_agents {
            return Err(Error::AgentOutOfRange {
                index: i,
                n_agents: self.n_agents,
            });
        }
        Ok(self.round(t).neighbours(i).to_vec())
    }

    /// Seeded k-regular simple graph for round `t` (pairing model with
    /// suitable-pair selection, restarting on dead ends).
    fn sample_round(&self, t: u64) -> Adjacency {
        let (n, k) = (self.n_agents, self.degree);
        let mut rng = rng::stream(self.seed, Purpose::Matching, &[t]);
        loop {
            let mut points: Vec<usize> = (0..n).flat_map(|v| std::iter::repeat(v).take(k)).collect();
            let mut edges: HashSet<(usize, usize)> = HashSet::with_capacity(n * k / 2);
            let mut lists = vec![Vec::with_capacity(k); n];
            let mut stuck = false;
            while !points.is_empty() {
                let mut picked = None;
                for _ in 0..64 {
                    let a = rng.gen_range(0..points.len());
                    let b = rng.gen_range(0..points.len());
                    if a != b && suitable(points[a], points[b], &edges) {
                        picked = Some((a, b));
                        break;
                    }
                }
                if picked.is_none() {
                    let mut candidates = Vec::new();
                    for a in 0..points.len() {
                        for b in a + 1..points.len() {
                            if suitable(points[a], points[b], &edges) {
                                candidates.push((a, b));
                            }
                        }
                    }
                    if candidates.is_empty() {
                        stuck = true;
                        break;
                    }
                    picked = Some(candidates[rng.gen_range(0..candidates.len())]);
                }
                let (a, b) = picked.unwrap();
                let (u, v) = (points[a], points[b]);
                edges.insert((u.min(v), u.max(v)));
                lists[u].push(v);
                lists[v].push(u);
                let (hi, lo) = (a.max(b), a.min(b));
                points.swap_remove(hi);
                points.swap_remove(lo);
            }
            if !stuck {
                for l in &mut lists {
                    l.sort_unstable();
                }
                return Adjacency::from_lists(lists, k);
            }
        }
    }
}

fn suitable(u: usize, v: usize, edges: &HashSet<(usize, usize)>) -> bool {
    u != v && !edges.contains(&(u.min(v), u.max(v)))
}
