//! Object states, diffs and the diff algebra.
//!
//! A [`State`] maps each type name to its objects keyed by primary key. A
//! [`Diff`] holds at most one [`ObjectDelta`] per `(type, pkey)`. All the
//! operations here are pure: inputs are never mutated.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::schema::{ObjectState, Registry};
use crate::value::Value;

pub type Dims = BTreeMap<String, Value>;

/// Address of one object: its type and primary key.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ObjectKey {
    pub type_name: String,
    pub pkey: Value,
}

impl ObjectKey {
    pub fn new(type_name: &str, pkey: impl Into<Value>) -> ObjectKey {
        ObjectKey {
            type_name: type_name.to_string(),
            pkey: pkey.into(),
        }
    }

    /// Wire form `type_name:tagged_pkey`, e.g. `Line:i:5`.
    pub fn to_wire(&self) -> String {
        format!("{}:{}", self.type_name, self.pkey.to_tagged())
    }

    pub fn from_wire(s: &str) -> Result<ObjectKey> {
        let (type_name, tagged) = s
            .split_once(':')
            .ok_or_else(|| Error::Decode(format!("bad object key `{s}`")))?;
        Ok(ObjectKey {
            type_name: type_name.to_string(),
            pkey: Value::from_tagged(tagged)?,
        })
    }
}

impl fmt::Display for ObjectKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({})", self.type_name, self.pkey)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct State {
    types: BTreeMap<String, BTreeMap<Value, ObjectState>>,
}

impl State {
    pub fn new() -> State {
        State::default()
    }

    pub fn is_empty(&self) -> bool {
        self.types.is_empty()
    }

    pub fn len(&self) -> usize {
        self.types.values().map(BTreeMap::len).sum()
    }

    pub fn get(&self, type_name: &str, pkey: &Value) -> Option<&ObjectState> {
        self.types.get(type_name).and_then(|objs| objs.get(pkey))
    }

    pub fn get_key(&self, key: &ObjectKey) -> Option<&ObjectState> {
        self.get(&key.type_name, &key.pkey)
    }

    /// Objects of one type in ascending primary-key order.
    pub fn objects<'a>(&'a self, type_name: &str) -> impl Iterator<Item = &'a ObjectState> + 'a {
        self.types.get(type_name).into_iter().flat_map(|objs| objs.values())
    }

    pub fn iter(&self) -> impl Iterator<Item = &ObjectState> {
        self.types.values().flat_map(|objs| objs.values())
    }

    pub fn type_names(&self) -> impl Iterator<Item = &str> {
        self.types.keys().map(String::as_str)
    }

    /// Inserts or replaces an object.
    pub fn put(&mut self, obj: ObjectState) {
        self.types
            .entry(obj.type_name.clone())
            .or_default()
            .insert(obj.pkey.clone(), obj);
    }

    pub fn remove(&mut self, type_name: &str, pkey: &Value) -> Option<ObjectState> {
        let objs = self.types.get_mut(type_name)?;
        let removed = objs.remove(pkey);
        if objs.is_empty() {
            self.types.remove(type_name);
        }
        removed
    }

    pub fn from_objects(objs: impl IntoIterator<Item = ObjectState>) -> State {
        let mut s = State::new();
        for o in objs {
            s.put(o);
        }
        s
    }

    pub fn check(&self, registry: &Registry) -> Result<()> {
        self.iter().try_for_each(|o| registry.check_object(o))
    }

    pub fn to_json(&self) -> serde_json::Value {
        let mut out = serde_json::Map::new();
        for (type_name, objs) in &self.types {
            let mut by_key = serde_json::Map::new();
            for (pkey, obj) in objs {
                by_key.insert(pkey.to_tagged(), dims_to_json(&obj.dims));
            }
            out.insert(type_name.clone(), serde_json::Value::Object(by_key));
        }
        serde_json::Value::Object(out)
    }

    pub fn from_json(v: &serde_json::Value) -> Result<State> {
        let types = v
            .as_object()
            .ok_or_else(|| Error::Decode("state must be an object".into()))?;
        let mut s = State::new();
        for (type_name, objs) in types {
            let objs = objs
                .as_object()
                .ok_or_else(|| Error::Decode(format!("objects of `{type_name}` must be an object")))?;
            for (tagged, dims) in objs {
                let pkey = Value::from_tagged(tagged)?;
                s.put(ObjectState::new(type_name, pkey, dims_from_json(dims)?));
            }
        }
        Ok(s)
    }
}

impl Serialize for State {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_json().serialize(s)
    }
}

impl<'de> Deserialize<'de> for State {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = serde_json::Value::deserialize(d)?;
        State::from_json(&v).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ObjectDelta {
    /// Object created; carries every dimension.
    New(Dims),
    /// Object changed; carries only the changed dimensions.
    Modified(Dims),
    Deleted,
}

impl ObjectDelta {
    pub fn kind_name(&self) -> &'static str {
        match self {
            ObjectDelta::New(_) => "new",
            ObjectDelta::Modified(_) => "mod",
            ObjectDelta::Deleted => "del",
        }
    }

    pub fn dims(&self) -> Option<&Dims> {
        match self {
            ObjectDelta::New(d) | ObjectDelta::Modified(d) => Some(d),
            ObjectDelta::Deleted => None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Diff {
    entries: BTreeMap<ObjectKey, ObjectDelta>,
}

impl Diff {
    pub fn new() -> Diff {
        Diff::default()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn get(&self, key: &ObjectKey) -> Option<&ObjectDelta> {
        self.entries.get(key)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ObjectKey, &ObjectDelta)> {
        self.entries.iter()
    }

    pub fn keys(&self) -> impl Iterator<Item = &ObjectKey> {
        self.entries.keys()
    }

    /// Sets the delta for `key`, replacing any existing entry.
    pub fn insert(&mut self, key: ObjectKey, delta: ObjectDelta) {
        self.entries.insert(key, delta);
    }

    pub fn remove(&mut self, key: &ObjectKey) -> Option<ObjectDelta> {
        self.entries.remove(key)
    }

    pub fn new_object(obj: &ObjectState) -> Diff {
        let mut d = Diff::new();
        d.insert(
            ObjectKey::new(&obj.type_name, obj.pkey.clone()),
            ObjectDelta::New(obj.dims.clone()),
        );
        d
    }

    /// Validates every delta against the registry's schemas.
    pub fn check(&self, registry: &Registry) -> Result<()> {
        for (key, delta) in &self.entries {
            let schema = registry.get(&key.type_name)?;
            match delta {
                ObjectDelta::New(dims) => {
                    registry.check_object(&ObjectState::new(&key.type_name, key.pkey.clone(), dims.clone()))?
                }
                ObjectDelta::Modified(dims) => {
                    if dims.is_empty() {
                        return Err(invalid(key, "empty modification"));
                    }
                    schema.check_partial(dims)?;
                    if let Some(pk) = dims.get(&schema.primary_key) {
                        if *pk != key.pkey {
                            return Err(Error::PrimaryKeyWrite(schema.primary_key.clone()));
                        }
                    }
                }
                ObjectDelta::Deleted => {}
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> serde_json::Value {
        let mut out = serde_json::Map::new();
        for (key, delta) in &self.entries {
            let mut entry = serde_json::Map::new();
            entry.insert("kind".into(), delta.kind_name().into());
            let dims = delta.dims().map(dims_to_json).unwrap_or_else(|| serde_json::json!({}));
            entry.insert("dims".into(), dims);
            out.insert(key.to_wire(), serde_json::Value::Object(entry));
        }
        serde_json::Value::Object(out)
    }

    pub fn from_json(v: &serde_json::Value) -> Result<Diff> {
        let entries = v
            .as_object()
            .ok_or_else(|| Error::Decode("diff must be an object".into()))?;
        let mut d = Diff::new();
        for (wire, entry) in entries {
            let key = ObjectKey::from_wire(wire)?;
            let kind = entry
                .get("kind")
                .and_then(|k| k.as_str())
                .ok_or_else(|| Error::Decode(format!("missing kind for `{wire}`")))?;
            let dims = match entry.get("dims") {
                Some(dims) => dims_from_json(dims)?,
                None => Dims::new(),
            };
            let delta = match kind {
                "new" => ObjectDelta::New(dims),
                "mod" => ObjectDelta::Modified(dims),
                "del" => ObjectDelta::Deleted,
                other => return Err(Error::Decode(format!("unknown delta kind `{other}`"))),
            };
            d.insert(key, delta);
        }
        Ok(d)
    }
}

impl FromIterator<(ObjectKey, ObjectDelta)> for Diff {
    fn from_iter<T: IntoIterator<Item = (ObjectKey, ObjectDelta)>>(iter: T) -> Self {
        Diff {
            entries: iter.into_iter().collect(),
        }
    }
}

impl Serialize for Diff {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_json().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Diff {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = serde_json::Value::deserialize(d)?;
        Diff::from_json(&v).map_err(serde::de::Error::custom)
    }
}

fn dims_to_json(dims: &Dims) -> serde_json::Value {
    serde_json::Value::Object(dims.iter().map(|(k, v)| (k.clone(), v.to_json())).collect())
}

fn dims_from_json(v: &serde_json::Value) -> Result<Dims> {
    v.as_object()
        .ok_or_else(|| Error::Decode("dims must be an object".into()))?
        .iter()
        .map(|(k, v)| Ok((k.clone(), Value::from_json(v)?)))
        .collect()
}

fn invalid(key: &ObjectKey, detail: &str) -> Error {
    Error::InvalidDelta {
        key: key.to_string(),
        detail: detail.to_string(),
    }
}

/// Applies `diff` to `state` in strict mode: modifications and deletions must
/// target existing objects and creations must target absent keys.
pub fn apply_diff(state: &State, diff: &Diff) -> Result<State> {
    let mut out = state.clone();
    for (key, delta) in diff.iter() {
        match delta {
            ObjectDelta::New(dims) => {
                if out.get_key(key).is_some() {
                    return Err(Error::ObjectExists(key.to_string()));
                }
                out.put(ObjectState::new(&key.type_name, key.pkey.clone(), dims.clone()));
            }
            ObjectDelta::Modified(dims) => {
                let mut obj = out
                    .get_key(key)
                    .cloned()
                    .ok_or_else(|| Error::MissingObject(key.to_string()))?;
                for (dim, value) in dims {
                    obj.dims.insert(dim.clone(), value.clone());
                }
                out.put(obj);
            }
            ObjectDelta::Deleted => {
                if out.remove(&key.type_name, &key.pkey).is_none() {
                    return Err(Error::MissingObject(key.to_string()));
                }
            }
        }
    }
    Ok(out)
}

/// Composes two consecutive diffs into one with the same effect.
pub fn compose_diffs(first: &Diff, second: &Diff) -> Result<Diff> {
    let mut out = first.clone();
    for (key, later) in second.iter() {
        let merged = match (first.get(key), later) {
            (None, d) => Some(d.clone()),
            (Some(ObjectDelta::New(a)), ObjectDelta::Modified(b)) => Some(ObjectDelta::New(overlay(a, b))),
            (Some(ObjectDelta::New(_)), ObjectDelta::Deleted) => None,
            (Some(ObjectDelta::Modified(a)), ObjectDelta::Modified(b)) => {
                Some(ObjectDelta::Modified(overlay(a, b)))
            }
            (Some(ObjectDelta::Modified(_)), ObjectDelta::Deleted) => Some(ObjectDelta::Deleted),
            // A deletion in `first` means the object existed before it, so
            // re-creating it amounts to replacing every dimension.
            (Some(ObjectDelta::Deleted), ObjectDelta::New(b)) => Some(ObjectDelta::Modified(b.clone())),
            (Some(earlier), later) => {
                return Err(Error::IncompatibleDeltas {
                    key: key.to_string(),
                    first: earlier.kind_name(),
                    second: later.kind_name(),
                })
            }
        };
        match merged {
            Some(d) => out.insert(key.clone(), d),
            None => {
                out.remove(key);
            }
        }
    }
    Ok(out)
}

fn overlay(base: &Dims, top: &Dims) -> Dims {
    let mut out = base.clone();
    out.extend(top.iter().map(|(k, v)| (k.clone(), v.clone())));
    out
}

/// Minimal diff taking `from` to `to`.
pub fn diff_states(from: &State, to: &State) -> Diff {
    let mut out = Diff::new();
    for obj in from.iter() {
        let key = ObjectKey::new(&obj.type_name, obj.pkey.clone());
        match to.get_key(&key) {
            None => out.insert(key, ObjectDelta::Deleted),
            Some(after) if after.dims != obj.dims => {
                let changed: Dims = after
                    .dims
                    .iter()
                    .filter(|(dim, v)| obj.dims.get(*dim) != Some(*v))
                    .map(|(k, v)| (k.clone(), v.clone()))
                    .collect();
                if changed.is_empty() {
                    // `to` dropped a dimension: only a full replacement restores it
                    out.insert(key, ObjectDelta::Modified(after.dims.clone()));
                } else {
                    out.insert(key, ObjectDelta::Modified(changed));
                }
            }
            Some(_) => {}
        }
    }
    for obj in to.iter() {
        if from.get(&obj.type_name, &obj.pkey).is_none() {
            out.insert(
                ObjectKey::new(&obj.type_name, obj.pkey.clone()),
                ObjectDelta::New(obj.dims.clone()),
            );
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(n: i64, text: &str) -> ObjectState {
        ObjectState::new(
            "Line",
            Value::Int(n),
            [("line_num".to_string(), Value::Int(n)), ("line".to_string(), Value::from(text))]
                .into_iter()
                .collect(),
        )
    }

    fn word(w: &str, count: i64) -> ObjectState {
        ObjectState::new(
            "WordCount",
            Value::from(w),
            [("word".to_string(), Value::from(w)), ("count".to_string(), Value::Int(count))]
                .into_iter()
                .collect(),
        )
    }

    fn count_mod(c: i64) -> ObjectDelta {
        ObjectDelta::Modified([("count".to_string(), Value::Int(c))].into_iter().collect())
    }

    #[test]
    fn adding_sixth_line() {
        let five = State::from_objects((0..5).map(|i| line(i, "x")));
        let d = Diff::new_object(&line(5, "bar"));
        let six = apply_diff(&five, &d).unwrap();
        assert_eq!(six.objects("Line").count(), 6);
        assert_eq!(six.get("Line", &Value::Int(5)).unwrap().get("line"), Some(&Value::from("bar")));
        // input untouched
        assert_eq!(five.len(), 5);
    }

    #[test]
    fn empty_diff_is_identity() {
        let s = State::from_objects([line(0, "foo"), word("bar", 2)]);
        assert_eq!(apply_diff(&s, &Diff::new()).unwrap(), s);
        assert_eq!(diff_states(&s, &s), Diff::new());
    }

    #[test]
    fn strict_application_errors() {
        let s = State::from_objects([word("bar", 2)]);
        let mut d = Diff::new();
        d.insert(ObjectKey::new("WordCount", "foo"), count_mod(1));
        assert!(matches!(apply_diff(&s, &d), Err(Error::MissingObject(_))));
        let mut d = Diff::new();
        d.insert(ObjectKey::new("WordCount", "foo"), ObjectDelta::Deleted);
        assert!(matches!(apply_diff(&s, &d), Err(Error::MissingObject(_))));
        assert!(matches!(apply_diff(&s, &Diff::new_object(&word("bar", 1))), Err(Error::ObjectExists(_))));
    }

    #[test]
    fn count_update_diff() {
        let from = State::from_objects([word("bar", 2)]);
        let to = State::from_objects([word("bar", 3)]);
        let d = diff_states(&from, &to);
        let mut expected = Diff::new();
        expected.insert(ObjectKey::new("WordCount", "bar"), count_mod(3));
        assert_eq!(d, expected);
    }

    #[test]
    fn compose_kind_rules() {
        let key = ObjectKey::new("WordCount", "bar");
        let new0: Diff = Diff::new_object(&word("bar", 0));
        let mut mod1 = Diff::new();
        mod1.insert(key.clone(), count_mod(1));
        let composed = compose_diffs(&new0, &mod1).unwrap();
        assert_eq!(composed, Diff::new_object(&word("bar", 1)));

        assert_eq!(compose_diffs(&new0, &Diff::new()).unwrap(), new0);

        let mut del = Diff::new();
        del.insert(key.clone(), ObjectDelta::Deleted);
        assert!(compose_diffs(&new0, &del).unwrap().is_empty());
        assert_eq!(compose_diffs(&mod1, &del).unwrap(), del);
        assert!(matches!(compose_diffs(&del, &mod1), Err(Error::IncompatibleDeltas { .. })));
        assert!(compose_diffs(&new0, &new0).is_err());
        assert_eq!(
            compose_diffs(&del, &new0).unwrap().get(&key),
            Some(&ObjectDelta::Modified(word("bar", 0).dims))
        );
    }

    #[test]
    fn wire_format() {
        let mut d = Diff::new_object(&line(5, "bar"));
        d.insert(ObjectKey::new("WordCount", "bar"), count_mod(3));
        d.insert(ObjectKey::new("Stop", 0), ObjectDelta::Deleted);
        let json = d.to_json();
        assert_eq!(
            json,
            serde_json::json!({
                "Line:i:5": {"kind": "new", "dims": {"line_num": 5, "line": "bar"}},
                "WordCount:s:bar": {"kind": "mod", "dims": {"count": 3}},
                "Stop:i:0": {"kind": "del", "dims": {}},
            })
        );
        assert_eq!(Diff::from_json(&json).unwrap(), d);
        let s = State::from_objects([line(5, "bar"), word("a:b", 1)]);
        assert_eq!(State::from_json(&s.to_json()).unwrap(), s);
        assert!(Diff::from_json(&serde_json::json!({"Line:i:1": {"kind": "zap"}})).is_err());
    }
}
