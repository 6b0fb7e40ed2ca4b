//! Word-frequency counting with a Grouper and WordCounter nodes.

pub mod apps;
pub mod cluster;
pub mod driver;
pub mod merge;
pub mod schema;

pub use apps::{grouper_app, parse, render, sequential_counts, worker_app, Counts};
pub use cluster::{worker_name, ClusterError, LocalCluster, MergeKind, ProcessCluster, Setup, GROUPER};
pub use merge::{BuggyMerge, FixedMerge};

/// The six-line input of the debugging walkthrough. Two workers that both
/// see `bar` counted once and then count one more each make the buggy merge
/// report 6 instead of 4.
pub const DEMO_INPUT: [&str; 6] = ["foo", "bar", "bar", "baz", "bar", "bar"];

pub fn demo_lines() -> Vec<String> {
    DEMO_INPUT.iter().map(|s| s.to_string()).collect()
}
