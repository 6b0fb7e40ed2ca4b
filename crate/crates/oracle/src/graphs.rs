//! Version graph properties on randomly built histories.

use std::collections::{BTreeMap, BTreeSet};

use got_core::{apply_diff, Diff, PreferTheirs, State, VersionGraph, VersionId};
use rand::rngs::StdRng;
use rand::seq::IteratorRandom;
use rand::{Rng, SeedableRng};

use crate::algebra::{random_diff, registry};
use crate::{ensure, Outcome};

const REFS: [&str; 3] = ["SNAPSHOT", "peer-a", "peer-b"];

fn pick(rng: &mut StdRng, g: &VersionGraph) -> VersionId {
    g.vertices().choose(rng).cloned().expect("graph has ROOT")
}

/// A history of at most `max` versions with forks, merges and refs.
pub fn random_graph(rng: &mut StdRng, max: usize) -> Result<VersionGraph, String> {
    let reg = registry();
    let mut g = VersionGraph::new();
    let target = rng.gen_range(2..=max);
    let mut guard = 0;
    while g.len() < target && guard < 10 * max {
        guard += 1;
        match rng.gen_range(0..10) {
            0..=5 => {
                let from = if rng.gen_bool(0.5) { g.head().clone() } else { pick(rng, &g) };
                let state = g.state_at(&from).map_err(|e| e.to_string())?;
                let diff = random_diff(rng, &state, 2, 3);
                g.extend(&from, diff).map_err(|e| e.to_string())?;
            }
            6..=7 => {
                let head = g.head().clone();
                let forked: Vec<VersionId> = g.vertices().filter(|v| !g.is_ancestor(v, &head)).cloned().collect();
                if let Some(theirs) = forked.into_iter().choose(rng) {
                    if g.len() + 1 <= target {
                        g.fold_in(&theirs, &PreferTheirs, &reg).map_err(|e| e.to_string())?;
                    }
                }
            }
            _ => {
                let name = REFS[rng.gen_range(0..REFS.len())];
                let v = pick(rng, &g);
                g.update_ref(name, &v).map_err(|e| e.to_string())?;
            }
        }
    }
    Ok(g)
}

struct Adjacency {
    parents: BTreeMap<VersionId, Vec<VersionId>>,
    children: BTreeMap<VersionId, Vec<VersionId>>,
}

fn adjacency(g: &VersionGraph) -> Adjacency {
    let mut adj = Adjacency {
        parents: BTreeMap::new(),
        children: BTreeMap::new(),
    };
    for (src, dst, _) in g.edges() {
        adj.parents.entry(dst.clone()).or_default().push(src.clone());
        adj.children.entry(src.clone()).or_default().push(dst.clone());
    }
    adj
}

/// Reachability by plain search over the exported edges.
fn reach_up(adj: &Adjacency, from: &VersionId) -> BTreeSet<VersionId> {
    let mut seen = BTreeSet::from([from.clone()]);
    let mut stack = vec![from.clone()];
    while let Some(v) = stack.pop() {
        for p in adj.parents.get(&v).into_iter().flatten() {
            if seen.insert(p.clone()) {
                stack.push(p.clone());
            }
        }
    }
    seen
}

/// After GC: retained versions keep their states, every version reachable
/// from no anchor is gone, anchors stay, and no unreferenced version is left
/// with exactly one parent and one child.
pub fn gc_safety(seed: u64, cases: usize, max_vertices: usize) -> Outcome {
    let mut rng = StdRng::seed_from_u64(seed);
    let (mut merges, mut collected) = (0, 0);
    for _ in 0..cases {
        let mut g = random_graph(&mut rng, max_vertices)?;
        merges += adjacency(&g).parents.values().filter(|p| p.len() > 1).count();
        let before: BTreeMap<VersionId, State> = g
            .vertices()
            .map(|v| Ok((v.clone(), g.state_at(v)?)))
            .collect::<Result<_, got_core::Error>>()
            .map_err(|e| e.to_string())?;
        let mut anchors: BTreeSet<VersionId> = g.refs().values().cloned().collect();
        anchors.insert(VersionId::root());
        anchors.insert(g.head().clone());
        let adj = adjacency(&g);
        let live: BTreeSet<VersionId> = anchors.iter().flat_map(|a| reach_up(&adj, a)).collect();
        let (head, refs) = (g.head().clone(), g.refs().clone());

        let removed = g.garbage_collect().map_err(|e| e.to_string())?;
        collected += removed.len();
        g.check_invariants().map_err(|e| e.to_string())?;
        ensure!(g.head() == &head && g.refs() == &refs, "gc moved head or refs");
        for v in g.vertices() {
            ensure!(live.contains(v), "kept unreachable version {v}");
            let state = g.state_at(v).map_err(|e| e.to_string())?;
            ensure!(state == before[v], "state of {v} changed");
        }
        for v in before.keys() {
            ensure!(g.contains(v) != removed.contains(v), "removed set disagrees on {v}");
            if !live.contains(v) {
                ensure!(!g.contains(v), "unreachable {v} survived");
            }
        }
        for a in &anchors {
            ensure!(g.contains(a), "anchor {a} removed");
        }
        let adj = adjacency(&g);
        for v in g.vertices().filter(|v| !anchors.contains(*v)) {
            let ins = adj.parents.get(v).map_or(0, Vec::len);
            let outs = adj.children.get(v).map_or(0, Vec::len);
            ensure!(!(ins == 1 && outs == 1), "linear interior {v} survived");
        }
    }
    ensure!(merges > 0 && collected > 0, "generator produced no merges or nothing to collect");
    Ok(cases)
}

/// Every ROOT -> v path folds to `state_at(v)`.
pub fn path_agreement(seed: u64, cases: usize, max_vertices: usize) -> Outcome {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut paths = 0;
    for _ in 0..cases {
        let g = random_graph(&mut rng, max_vertices)?;
        let mut edge_diff: BTreeMap<(VersionId, VersionId), Diff> = BTreeMap::new();
        let mut children: BTreeMap<VersionId, Vec<VersionId>> = BTreeMap::new();
        for (s, d, diff) in g.edges() {
            edge_diff.insert((s.clone(), d.clone()), diff.clone());
            children.entry(s.clone()).or_default().push(d.clone());
        }
        // depth-first enumeration carrying the folded state
        let mut stack = vec![(VersionId::root(), State::new())];
        while let Some((v, state)) = stack.pop() {
            paths += 1;
            ensure!(paths < 2_000_000, "path explosion");
            let expected = g.state_at(&v).map_err(|e| e.to_string())?;
            ensure!(state == expected, "a path to {v} disagrees with state_at");
            for c in children.get(&v).into_iter().flatten() {
                let next = apply_diff(&state, &edge_diff[&(v.clone(), c.clone())]).map_err(|e| e.to_string())?;
                stack.push((c.clone(), next));
            }
        }
    }
    Ok(paths)
}

/// `delta_between(v)` takes `state_at(v)` to the head state for every
/// ancestor `v` of head.
pub fn delta_round_trip(seed: u64, cases: usize, max_vertices: usize) -> Outcome {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut checked = 0;
    for _ in 0..cases {
        let g = random_graph(&mut rng, max_vertices)?;
        let head_state = g.head_state().map_err(|e| e.to_string())?;
        for v in reach_up(&adjacency(&g), g.head()) {
            let (diff, to) = g.delta_between(&v).map_err(|e| e.to_string())?;
            ensure!(&to == g.head(), "delta_between reported {to}");
            let from = g.state_at(&v).map_err(|e| e.to_string())?;
            ensure!(apply_diff(&from, &diff).ok() == Some(head_state.clone()), "delta from {v} is wrong");
            checked += 1;
        }
    }
    Ok(checked)
}
