//! Diff algebra against a flat (type, pkey, dimension) -> value view of
//! states. Every check returns the number of instances it ran.

use std::collections::{BTreeMap, BTreeSet};

use got_core::{
    apply_diff, compose_diffs, detect_conflicts, diff_states, Diff, ObjectDelta, ObjectKey, ObjectState, Registry,
    State, Value, ValueKind,
};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::{ensure, Outcome};

pub const TYPES: [&str; 3] = ["A", "B", "C"];
pub const DIMS: [&str; 3] = ["x", "y", "z"];

type Triple = (String, i64, String);

/// Types A, B and C, each keyed by `id` with Int dimensions x, y, z.
pub fn registry() -> Registry {
    let mut reg = Registry::new();
    for t in TYPES {
        reg.register_schema(
            t,
            "id",
            &[("id", ValueKind::Int), ("x", ValueKind::Int), ("y", ValueKind::Int), ("z", ValueKind::Int)],
        )
        .expect("fixed schemas");
    }
    reg
}

/// Existing keys plus every (type, pkey, dim) value.
#[derive(Debug, PartialEq, Eq, Clone, Default)]
struct Flat {
    live: BTreeSet<(String, i64)>,
    cells: BTreeMap<Triple, i64>,
}

fn flatten(s: &State) -> Flat {
    let mut f = Flat::default();
    for o in s.iter() {
        let pk = o.pkey.as_int().expect("int keys");
        f.live.insert((o.type_name.clone(), pk));
        for (d, v) in &o.dims {
            f.cells.insert((o.type_name.clone(), pk, d.clone()), v.as_int().expect("int dims"));
        }
    }
    f
}

pub fn object(t: &str, pk: i64, vals: [i64; 3]) -> ObjectState {
    let mut dims: BTreeMap<String, Value> = DIMS.iter().zip(vals).map(|(d, v)| (d.to_string(), Value::Int(v))).collect();
    dims.insert("id".into(), Value::Int(pk));
    ObjectState::new(t, Value::Int(pk), dims)
}

fn universe(ntypes: usize, npkeys: i64) -> Vec<(&'static str, i64)> {
    TYPES[..ntypes]
        .iter()
        .flat_map(|t| (0..npkeys).map(move |pk| (*t, pk)))
        .collect()
}

fn random_vals(rng: &mut StdRng) -> [i64; 3] {
    [rng.gen_range(0..3), rng.gen_range(0..3), rng.gen_range(0..3)]
}

pub fn random_state(rng: &mut StdRng, ntypes: usize, npkeys: i64) -> State {
    let mut objs = Vec::new();
    for (t, pk) in universe(ntypes, npkeys) {
        if rng.gen_bool(0.5) {
            objs.push(object(t, pk, random_vals(rng)));
        }
    }
    State::from_objects(objs)
}

/// A diff that applies cleanly to `base`.
pub fn random_diff(rng: &mut StdRng, base: &State, ntypes: usize, npkeys: i64) -> Diff {
    let mut d = Diff::new();
    for (t, pk) in universe(ntypes, npkeys) {
        if rng.gen_bool(0.5) {
            continue;
        }
        let key = ObjectKey::new(t, pk);
        let delta = if base.get_key(&key).is_some() {
            if rng.gen_bool(0.25) {
                ObjectDelta::Deleted
            } else {
                let mut dims = BTreeMap::new();
                while dims.is_empty() {
                    for dim in DIMS {
                        if rng.gen_bool(0.5) {
                            dims.insert(dim.to_string(), Value::Int(rng.gen_range(0..3)));
                        }
                    }
                }
                ObjectDelta::Modified(dims)
            }
        } else {
            ObjectDelta::New(object(t, pk, random_vals(rng)).dims)
        };
        d.insert(key, delta);
    }
    d
}

/// Applies a diff to the flat view, one cell at a time.
fn flat_apply(base: &Flat, diff: &Diff) -> Option<Flat> {
    let mut out = base.clone();
    for (key, delta) in diff.iter() {
        let id = (key.type_name.clone(), key.pkey.as_int()?);
        let exists = out.live.contains(&id);
        match delta {
            ObjectDelta::New(dims) => {
                if exists {
                    return None;
                }
                out.live.insert(id.clone());
                for (d, v) in dims {
                    out.cells.insert((id.0.clone(), id.1, d.clone()), v.as_int()?);
                }
            }
            ObjectDelta::Modified(dims) => {
                if !exists {
                    return None;
                }
                for (d, v) in dims {
                    out.cells.insert((id.0.clone(), id.1, d.clone()), v.as_int()?);
                }
            }
            ObjectDelta::Deleted => {
                if !out.live.remove(&id) {
                    return None;
                }
                out.cells.retain(|(t, pk, _), _| !(t == &id.0 && *pk == id.1));
            }
        }
    }
    Some(out)
}

fn sizes(rng: &mut StdRng) -> (usize, i64) {
    (rng.gen_range(1..=3), rng.gen_range(1..=5))
}

pub fn application(seed: u64, cases: usize) -> Outcome {
    let mut rng = StdRng::seed_from_u64(seed);
    for _ in 0..cases {
        let (nt, np) = sizes(&mut rng);
        let s = random_state(&mut rng, nt, np);
        let d = random_diff(&mut rng, &s, nt, np);
        let applied = apply_diff(&s, &d).map_err(|e| e.to_string())?;
        ensure!(Some(flatten(&applied)) == flat_apply(&flatten(&s), &d), "apply {d:?} to {s:?}");
        ensure!(apply_diff(&s, &Diff::new()).ok() == Some(s.clone()), "empty diff changed {s:?}");

        // a diff built against some other state applies iff the oracle can
        let other = random_state(&mut rng, nt, np);
        let d = random_diff(&mut rng, &other, nt, np);
        let oracle = flat_apply(&flatten(&s), &d);
        match apply_diff(&s, &d) {
            Ok(out) => ensure!(Some(flatten(&out)) == oracle, "apply {d:?} to {s:?}"),
            Err(_) => ensure!(oracle.is_none(), "strict apply rejected {d:?} on {s:?}"),
        }
    }
    Ok(cases)
}

pub fn composition(seed: u64, cases: usize) -> Outcome {
    let mut rng = StdRng::seed_from_u64(seed);
    for _ in 0..cases {
        let (nt, np) = sizes(&mut rng);
        let s = random_state(&mut rng, nt, np);
        let d1 = random_diff(&mut rng, &s, nt, np);
        let mid = apply_diff(&s, &d1).map_err(|e| e.to_string())?;
        let d2 = random_diff(&mut rng, &mid, nt, np);
        let sequential = flat_apply(&flatten(&s), &d1).and_then(|f| flat_apply(&f, &d2));
        let composed = compose_diffs(&d1, &d2).map_err(|e| e.to_string())?;
        let direct = apply_diff(&s, &composed).map_err(|e| e.to_string())?;
        ensure!(Some(flatten(&direct)) == sequential, "compose {d1:?} then {d2:?} on {s:?}");
        ensure!(compose_diffs(&d1, &Diff::new()).ok() == Some(d1.clone()), "right identity");
        ensure!(compose_diffs(&Diff::new(), &d2).ok() == Some(d2.clone()), "left identity");
    }
    Ok(cases)
}

pub fn differencing(seed: u64, cases: usize) -> Outcome {
    let mut rng = StdRng::seed_from_u64(seed);
    for _ in 0..cases {
        let (nt, np) = sizes(&mut rng);
        let from = random_state(&mut rng, nt, np);
        let to = random_state(&mut rng, nt, np);
        let d = diff_states(&from, &to);
        ensure!(apply_diff(&from, &d).ok() == Some(to.clone()), "round trip {from:?} -> {to:?}");
        ensure!(diff_states(&from, &from).is_empty(), "self difference not empty");

        // minimality: every entry reflects an actual change
        let (f, t) = (flatten(&from), flatten(&to));
        for (key, delta) in d.iter() {
            let id = (key.type_name.clone(), key.pkey.as_int().unwrap_or_default());
            let ok = match delta {
                ObjectDelta::New(_) => !f.live.contains(&id) && t.live.contains(&id),
                ObjectDelta::Deleted => f.live.contains(&id) && !t.live.contains(&id),
                ObjectDelta::Modified(dims) => dims.iter().all(|(dim, v)| {
                    f.cells.get(&(id.0.clone(), id.1, dim.clone())) != v.as_int().as_ref()
                }),
            };
            ensure!(ok, "non-minimal entry {key} {delta:?}");
        }
    }
    Ok(cases)
}

/// Dimensions a delta writes; deletion and creation write the object's
/// existence as well as every dimension.
fn written(delta: Option<&ObjectDelta>) -> BTreeSet<String> {
    match delta {
        None => BTreeSet::new(),
        Some(ObjectDelta::Modified(dims)) => dims.keys().cloned().collect(),
        Some(_) => DIMS
            .iter()
            .map(|d| d.to_string())
            .chain(["id".into(), "#exists".into()])
            .collect(),
    }
}

/// Per-triple oracle: a key conflicts when some (type, pkey, dim) triple is
/// written by both sides, unless both sides delete the object.
fn oracle_conflicts(keys: &[ObjectKey], yours: &Diff, theirs: &Diff) -> (BTreeSet<ObjectKey>, Diff) {
    let mut conflicting = BTreeSet::new();
    let mut passthrough = Diff::new();
    for key in keys {
        let (y, t) = (yours.get(key), theirs.get(key));
        let both_delete = matches!((y, t), (Some(ObjectDelta::Deleted), Some(ObjectDelta::Deleted)));
        let clash = written(y).intersection(&written(t)).next().is_some();
        if clash && !both_delete {
            conflicting.insert(key.clone());
        } else if let Some(t) = t {
            if !both_delete {
                passthrough.insert(key.clone(), t.clone());
            }
        }
    }
    (conflicting, passthrough)
}

fn check_conflicts(base: &State, yours: &Diff, theirs: &Diff, keys: &[ObjectKey]) -> Result<(), String> {
    let report = detect_conflicts(base, yours, theirs);
    let (conflicting, passthrough) = oracle_conflicts(keys, yours, theirs);
    ensure!(report.conflicting == conflicting, "conflicts for yours {yours:?} theirs {theirs:?}");
    ensure!(report.nonconflicting_theirs == passthrough, "passthrough for yours {yours:?} theirs {theirs:?}");
    let your_state = apply_diff(base, yours).map_err(|e| e.to_string())?;
    ensure!(
        apply_diff(&your_state, &report.nonconflicting_theirs).is_ok(),
        "passthrough does not apply on yours"
    );
    Ok(())
}

/// Every delta that applies to one object A(0), values drawn from {0, 1}.
fn all_deltas(exists: bool) -> Vec<Option<ObjectDelta>> {
    let combos = |dims: &[&str]| -> Vec<BTreeMap<String, Value>> {
        let mut acc = vec![BTreeMap::new()];
        for d in dims {
            acc = acc
                .into_iter()
                .flat_map(|m| {
                    (0..2).map(move |v| {
                        let mut m = m.clone();
                        m.insert(d.to_string(), Value::Int(v));
                        m
                    })
                })
                .collect();
        }
        acc
    };
    let mut out = vec![None];
    if exists {
        out.push(Some(ObjectDelta::Deleted));
        for mask in 1..8u8 {
            let dims: Vec<&str> = DIMS
                .iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, d)| *d)
                .collect();
            out.extend(combos(&dims).into_iter().map(|m| Some(ObjectDelta::Modified(m))));
        }
    } else {
        for mut m in combos(&DIMS) {
            m.insert("id".into(), Value::Int(0));
            out.push(Some(ObjectDelta::New(m)));
        }
    }
    out
}

/// Every (yours, theirs) pair of single-object deltas, then random diff
/// pairs over universes of up to 3 types and 5 keys.
pub fn conflicts(seed: u64, cases: usize) -> Outcome {
    let key = ObjectKey::new("A", 0);
    let mut checked = 0;
    for exists in [false, true] {
        let base = if exists {
            State::from_objects([object("A", 0, [0, 0, 0])])
        } else {
            State::new()
        };
        let deltas = all_deltas(exists);
        let one = |d: &Option<ObjectDelta>| -> Diff { d.iter().map(|d| (key.clone(), d.clone())).collect() };
        for y in &deltas {
            for t in &deltas {
                check_conflicts(&base, &one(y), &one(t), std::slice::from_ref(&key))?;
                checked += 1;
            }
        }
    }
    ensure!(checked == 9 * 9 + 28 * 28, "enumerated {checked} single-object pairs");

    let mut rng = StdRng::seed_from_u64(seed);
    for _ in 0..cases {
        let (nt, np) = sizes(&mut rng);
        let base = random_state(&mut rng, nt, np);
        let yours = random_diff(&mut rng, &base, nt, np);
        let theirs = random_diff(&mut rng, &base, nt, np);
        let keys: Vec<ObjectKey> = universe(nt, np).into_iter().map(|(t, pk)| ObjectKey::new(t, pk)).collect();
        check_conflicts(&base, &yours, &theirs, &keys)?;
    }
    Ok(checked + cases)
}
