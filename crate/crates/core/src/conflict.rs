//! Three-way conflict detection between two diffs taken from one base state.

use std::collections::BTreeSet;

use crate::schema::ObjectState;
use crate::state::{Diff, ObjectDelta, ObjectKey, State};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConflictReport {
    /// Objects with contradictory changes that need the merge function.
    pub conflicting: BTreeSet<ObjectKey>,
    /// Incoming changes that can be applied on top of `yours` as-is.
    pub nonconflicting_theirs: Diff,
}

impl ConflictReport {
    pub fn has_conflicts(&self) -> bool {
        !self.conflicting.is_empty()
    }
}

/// One conflicting object as seen at the fork point and at both tips. `None`
/// means the object does not exist (never created, or deleted) at that side.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Conflict {
    pub key: ObjectKey,
    pub orig: Option<ObjectState>,
    pub yours: Option<ObjectState>,
    pub theirs: Option<ObjectState>,
}

/// Compares `yours` and `theirs`, both relative to `base`.
///
/// Conflicts are per dimension: an object touched by both sides conflicts
/// when both write the same dimension (even to equal values, since two
/// increments that both land on `3` are still two increments), when one side
/// deletes what the other creates or modifies, or when both create it.
/// Modifications of disjoint dimensions are folded into
/// `nonconflicting_theirs`; concurrent deletions agree.
pub fn detect_conflicts(_base: &State, yours: &Diff, theirs: &Diff) -> ConflictReport {
    let mut report = ConflictReport::default();
    for (key, their_delta) in theirs.iter() {
        let Some(your_delta) = yours.get(key) else {
            report.nonconflicting_theirs.insert(key.clone(), their_delta.clone());
            continue;
        };
        match (your_delta, their_delta) {
            (ObjectDelta::Modified(mine), ObjectDelta::Modified(other)) => {
                if other.keys().any(|dim| mine.contains_key(dim)) {
                    report.conflicting.insert(key.clone());
                } else {
                    report
                        .nonconflicting_theirs
                        .insert(key.clone(), ObjectDelta::Modified(other.clone()));
                }
            }
            (ObjectDelta::Deleted, ObjectDelta::Deleted) => {}
            _ => {
                report.conflicting.insert(key.clone());
            }
        }
    }
    report
}

/// Builds the conflict triples handed to a merge function.
pub fn conflict_triples(
    report: &ConflictReport,
    orig: &State,
    yours: &State,
    theirs: &State,
) -> Vec<Conflict> {
    report
        .conflicting
        .iter()
        .map(|key| Conflict {
            key: key.clone(),
            orig: orig.get_key(key).cloned(),
            yours: yours.get_key(key).cloned(),
            theirs: theirs.get_key(key).cloned(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::value::Value;

    use crate::state::Dims;

    fn count(c: i64) -> Dims {
        [("count".to_string(), Value::Int(c))].into_iter().collect()
    }

    fn word_new(w: &str, c: i64) -> Dims {
        let mut d = count(c);
        d.insert("word".into(), Value::from(w));
        d
    }

    #[test]
    fn equal_writes_to_one_dimension_conflict() {
        let key = ObjectKey::new("WordCount", "bar");
        let mut a = Diff::new();
        a.insert(key.clone(), ObjectDelta::Modified(count(3)));
        let r = detect_conflicts(&State::new(), &a, &a.clone());
        assert!(r.conflicting.contains(&key));
        assert!(r.nonconflicting_theirs.is_empty());

        let mut both_new = Diff::new();
        both_new.insert(key.clone(), ObjectDelta::New(word_new("bar", 1)));
        assert!(detect_conflicts(&State::new(), &both_new, &both_new.clone()).has_conflicts());
    }

    #[test]
    fn concurrent_creation_conflicts() {
        let key = ObjectKey::new("WordCount", "bar");
        let mut a = Diff::new();
        a.insert(key.clone(), ObjectDelta::New(word_new("bar", 3)));
        let mut b = Diff::new();
        b.insert(key.clone(), ObjectDelta::New(word_new("bar", 2)));
        let r = detect_conflicts(&State::new(), &a, &b);
        assert_eq!(r.conflicting.into_iter().collect::<Vec<_>>(), vec![key]);
    }

    #[test]
    fn disjoint_dimensions_auto_merge() {
        let key = ObjectKey::new("T", 1);
        let mut a = Diff::new();
        a.insert(key.clone(), ObjectDelta::Modified([("x".to_string(), Value::Int(1))].into_iter().collect()));
        let mut b = Diff::new();
        b.insert(key.clone(), ObjectDelta::Modified([("y".to_string(), Value::Int(2))].into_iter().collect()));
        let other = ObjectKey::new("T", 2);
        b.insert(other.clone(), ObjectDelta::Deleted);
        let r = detect_conflicts(&State::new(), &a, &b);
        assert!(!r.has_conflicts());
        assert_eq!(
            r.nonconflicting_theirs.get(&key),
            Some(&ObjectDelta::Modified([("y".to_string(), Value::Int(2))].into_iter().collect()))
        );
        assert_eq!(r.nonconflicting_theirs.get(&other), Some(&ObjectDelta::Deleted));
    }

    #[test]
    fn delete_versus_modify_conflicts_and_double_delete_does_not() {
        let key = ObjectKey::new("WordCount", "bar");
        let mut del = Diff::new();
        del.insert(key.clone(), ObjectDelta::Deleted);
        let mut modify = Diff::new();
        modify.insert(key.clone(), ObjectDelta::Modified(count(4)));
        assert!(detect_conflicts(&State::new(), &del, &modify).has_conflicts());
        assert!(detect_conflicts(&State::new(), &modify, &del).has_conflicts());
        assert!(!detect_conflicts(&State::new(), &del, &del).has_conflicts());
    }
}
