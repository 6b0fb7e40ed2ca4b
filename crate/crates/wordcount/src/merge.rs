//! The Grouper's merge functions.

use got_core::{Error, MergeInput, ObjectState, Resolver, Result, State, Value};

use crate::schema::WORD_COUNT;

fn count(obj: &ObjectState) -> Result<i64> {
    obj.get("count")
        .and_then(Value::as_int)
        .ok_or_else(|| Error::Resolver(format!("{} has no count", obj.pkey)))
}

fn merge_counts(input: &MergeInput<'_>, subtract_orig: bool) -> Result<State> {
    let mut merged = input.update_not_conflicting()?;
    for c in &input.conflicts {
        if c.key.type_name != WORD_COUNT {
            return Err(Error::Resolver(format!("unexpected conflict on {}", c.key.type_name)));
        }
        let (Some(yours), Some(theirs)) = (&c.yours, &c.theirs) else {
            return Err(Error::Resolver(format!("WordCount {} was deleted", c.key.pkey)));
        };
        let mut total = count(yours)? + count(theirs)?;
        if subtract_orig {
            // absent for objects both sides created
            if let Some(orig) = &c.orig {
                total -= count(orig)?;
            }
        }
        let mut obj = yours.clone();
        obj.dims.insert("count".into(), Value::Int(total));
        merged.put(obj);
    }
    Ok(merged)
}

/// Adds both counts, counting the common history twice.
#[derive(Debug, Clone, Copy, Default)]
pub struct BuggyMerge;

impl Resolver for BuggyMerge {
    fn merge(&self, input: &MergeInput<'_>) -> Result<State> {
        merge_counts(input, false)
    }
}

/// Adds both increments over the fork point.
#[derive(Debug, Clone, Copy, Default)]
pub struct FixedMerge;

impl Resolver for FixedMerge {
    fn merge(&self, input: &MergeInput<'_>) -> Result<State> {
        merge_counts(input, true)
    }
}

#[cfg(test)]
mod tests {
    use got_core::{diff_states, VersionGraph};

    use super::*;
    use crate::schema::{registry, word_count};

    fn counts(pairs: &[(&str, i64)]) -> State {
        State::from_objects(pairs.iter().map(|(w, n)| word_count(w, *n)))
    }

    /// Folds `theirs` into a head at `yours`, both forked from `orig`.
    fn merged(resolver: &dyn Resolver, orig: &State, yours: &State, theirs: &State) -> State {
        let mut g = VersionGraph::new();
        let o = g.extend(&g.head().clone(), diff_states(&State::new(), orig)).unwrap();
        g.extend(&o, diff_states(orig, yours)).unwrap();
        let t = g.extend(&o, diff_states(orig, theirs)).unwrap();
        let report = g.fold_in(&t, resolver, &registry()).unwrap();
        assert!(report.resolver_invoked);
        g.head_state().unwrap()
    }

    #[test]
    fn concurrent_increments_of_two() {
        let (orig, three) = (counts(&[("bar", 2)]), counts(&[("bar", 3)]));
        assert_eq!(merged(&BuggyMerge, &orig, &three, &three), counts(&[("bar", 6)]));
        assert_eq!(merged(&FixedMerge, &orig, &three, &three), counts(&[("bar", 4)]));
    }

    #[test]
    fn both_sides_create_the_word() {
        let empty = State::new();
        let (a, b) = (counts(&[("foo", 2)]), counts(&[("foo", 5)]));
        assert_eq!(merged(&FixedMerge, &empty, &a, &b), counts(&[("foo", 7)]));
        assert_eq!(merged(&BuggyMerge, &empty, &a, &b), counts(&[("foo", 7)]));
    }

    #[test]
    fn non_conflicting_changes_are_taken() {
        let orig = counts(&[("bar", 1), ("baz", 1)]);
        let yours = counts(&[("bar", 2), ("baz", 1)]);
        let theirs = counts(&[("bar", 3), ("baz", 1), ("foo", 1)]);
        assert_eq!(
            merged(&FixedMerge, &orig, &yours, &theirs),
            counts(&[("bar", 4), ("baz", 1), ("foo", 1)])
        );
    }

    #[test]
    fn other_types_are_rejected() {
        let orig = State::from_objects([crate::schema::stop(0)]);
        let mut accepted = crate::schema::stop(0);
        accepted.dims.insert("accepted".into(), Value::Bool(true));
        let yours = State::from_objects([accepted.clone()]);
        let mut g = VersionGraph::new();
        let o = g.extend(&g.head().clone(), diff_states(&State::new(), &orig)).unwrap();
        g.extend(&o, diff_states(&orig, &yours)).unwrap();
        let t = g.extend(&o, diff_states(&orig, &yours)).unwrap();
        let err = g.fold_in(&t, &FixedMerge, &registry()).unwrap_err();
        assert!(matches!(err, Error::Resolver(_)), "{err}");
    }
}
