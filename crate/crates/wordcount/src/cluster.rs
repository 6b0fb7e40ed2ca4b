//! Launching a Grouper and its workers, in this process or as separate
//! `got-node` processes.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdout, Command, Stdio};
use std::str::FromStr;
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use got_core::{Dataframe, Gate, LocalNet, Registration, Repository, Resolver};
use gotcha::server::{router, Background};
use gotcha::{Controller, HttpTransport, LocalTransport, Mode};
use thiserror::Error;

use crate::apps::{grouper_app, parse, worker_app, Counts};
use crate::merge::{BuggyMerge, FixedMerge};
use crate::schema::registry;

pub const GROUPER: &str = "Grouper";

/// `WordCounter1`, `WordCounter2`, ... for indices 0, 1, ...
pub fn worker_name(index: usize) -> String {
    format!("WordCounter{}", index + 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MergeKind {
    Buggy,
    Fixed,
}

impl MergeKind {
    pub fn resolver(self) -> Arc<dyn Resolver> {
        match self {
            MergeKind::Buggy => Arc::new(BuggyMerge),
            MergeKind::Fixed => Arc::new(FixedMerge),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MergeKind::Buggy => "buggy",
            MergeKind::Fixed => "fixed",
        }
    }
}

impl FromStr for MergeKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "buggy" => Ok(MergeKind::Buggy),
            "fixed" => Ok(MergeKind::Fixed),
            other => Err(format!("unknown merge `{other}` (buggy|fixed)")),
        }
    }
}

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("{0}")]
    Got(#[from] got_core::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("{node} failed: {detail}")]
    Node { node: String, detail: String },
}

#[derive(Debug, Clone)]
pub struct Setup {
    pub lines: Vec<String>,
    pub workers: usize,
    pub merge: MergeKind,
    /// Grouper sleep between checkouts that saw nothing new.
    pub poll: Duration,
}

impl Setup {
    pub fn new(lines: Vec<String>, workers: usize, merge: MergeKind) -> Setup {
        Setup {
            lines,
            workers,
            merge,
            poll: Duration::from_millis(2),
        }
    }
}

/// All nodes as threads of this process over an in-memory network. With a
/// controller every node is gated by it.
pub struct LocalCluster {
    pub controller: Option<Arc<Controller>>,
    grouper: JoinHandle<got_core::Result<Counts>>,
    workers: Vec<(String, JoinHandle<got_core::Result<()>>)>,
}

impl LocalCluster {
    pub fn launch(setup: &Setup, debug: Option<Mode>) -> LocalCluster {
        let net = LocalNet::new();
        let controller = debug.map(|mode| Controller::new(Arc::new(LocalTransport(net.clone())), mode));
        let gate = controller.clone().map(|c| c as Arc<dyn Gate>);
        let reg = registry();
        let node = |name: &str, resolver: Arc<dyn Resolver>, remote: Option<&str>| {
            let repo = Repository::new(name, reg.clone(), resolver, gate.clone());
            net.attach(name, repo.clone());
            if let Some(ctl) = &controller {
                ctl.register(Registration {
                    name: name.to_string(),
                    address: name.to_string(),
                    remote: remote.map(String::from),
                    types: reg.names().map(String::from).collect(),
                })
                .expect("fresh names");
            }
            match remote {
                Some(r) => Dataframe::new(repo).with_remote(r, net.link(r)),
                None => Dataframe::new(repo),
            }
        };

        // everyone registers before any application starts
        let mut grouper_df = node(GROUPER, setup.merge.resolver(), None);
        let worker_dfs: Vec<(String, Dataframe)> = (0..setup.workers)
            .map(|i| {
                let name = worker_name(i);
                let df = node(&name, Arc::new(got_core::PreferTheirs), Some(GROUPER));
                (name, df)
            })
            .collect();

        let finish = |name: String| {
            let ctl = controller.clone();
            move || {
                if let Some(ctl) = ctl {
                    let _ = ctl.finished(&name);
                }
            }
        };
        let (lines, n, poll) = (setup.lines.clone(), setup.workers, setup.poll);
        let done = finish(GROUPER.to_string());
        let grouper = std::thread::spawn(move || {
            let out = grouper_app(&mut grouper_df, &lines, n, poll);
            done();
            out
        });
        let workers = worker_dfs
            .into_iter()
            .enumerate()
            .map(|(i, (name, mut df))| {
                let done = finish(name.clone());
                let t = std::thread::spawn(move || {
                    let out = worker_app(&mut df, i, n);
                    done();
                    out
                });
                (name, t)
            })
            .collect();
        LocalCluster {
            controller,
            grouper,
            workers,
        }
    }

    /// Waits for every node and returns the Grouper's tally.
    pub fn join(self) -> Result<Counts, ClusterError> {
        let failed = |node: &str, detail: String| ClusterError::Node {
            node: node.to_string(),
            detail,
        };
        for (name, t) in self.workers {
            t.join()
                .map_err(|_| failed(&name, "panicked".into()))?
                .map_err(|e| failed(&name, e.to_string()))?;
        }
        self.grouper
            .join()
            .map_err(|_| failed(GROUPER, "panicked".into()))?
            .map_err(|e| failed(GROUPER, e.to_string()))
    }
}

/// Runs the whole application in this process without a controller.
pub fn run_direct_local(setup: &Setup) -> Result<Counts, ClusterError> {
    LocalCluster::launch(setup, None).join()
}

/// The `got-node` binary next to the running executable (or its parent,
/// for test binaries under `deps/`).
pub fn sibling_binary(name: &str) -> Option<PathBuf> {
    let exe = std::env::current_exe().ok()?;
    let file = format!("{name}{}", std::env::consts::EXE_SUFFIX);
    let mut dir = exe.parent();
    while let Some(d) = dir {
        let candidate = d.join(&file);
        if candidate.is_file() {
            return Some(candidate);
        }
        if d.file_name().is_some_and(|n| n == "target") {
            break;
        }
        dir = d.parent();
    }
    None
}

/// One node per OS process. With a controller it runs in this process and
/// the nodes register with it over HTTP.
pub struct ProcessCluster {
    pub controller: Option<Arc<Controller>>,
    pub gcn: Option<Background>,
    grouper: Child,
    grouper_out: BufReader<ChildStdout>,
    workers: Vec<(String, Child)>,
    _input: tempfile::NamedTempFile,
}

impl ProcessCluster {
    pub fn launch(node_bin: &Path, setup: &Setup, debug: Option<Mode>) -> Result<ProcessCluster, ClusterError> {
        let (controller, gcn) = match debug {
            Some(mode) => {
                let ctl = Controller::new(Arc::new(HttpTransport::new()), mode);
                let gcn = Background::start("127.0.0.1:0", router(ctl.clone()))?;
                (Some(ctl), Some(gcn))
            }
            None => (None, None),
        };
        let mut input = tempfile::NamedTempFile::new()?;
        for l in &setup.lines {
            writeln!(input, "{l}")?;
        }
        input.flush()?;

        let base = |name: &str| {
            let mut cmd = Command::new(node_bin);
            cmd.arg("--name").arg(name).arg("--merge").arg(setup.merge.name());
            cmd.arg("--poll-ms").arg(setup.poll.as_millis().to_string());
            cmd.env_remove(got_node::GCN_ENV);
            if let Some(g) = &gcn {
                cmd.arg("--debug").arg(g.addr.to_string());
            }
            cmd
        };

        let mut grouper = base(GROUPER)
            .args(["--app", "grouper", "--port", "0", "--"])
            .arg(input.path())
            .arg(setup.workers.to_string())
            .stdout(Stdio::piped())
            .spawn()?;
        let mut grouper_out = BufReader::new(grouper.stdout.take().expect("piped stdout"));
        let mut first = String::new();
        grouper_out.read_line(&mut first)?;
        let addr = first
            .trim()
            .strip_prefix("listening ")
            .ok_or_else(|| ClusterError::Node {
                node: GROUPER.into(),
                detail: format!("unexpected first line {first:?}"),
            })?
            .to_string();

        let mut workers = Vec::new();
        for i in 0..setup.workers {
            let name = worker_name(i);
            let child = base(&name)
                .args(["--app", "worker", "--remote", &addr, "--"])
                .arg(i.to_string())
                .arg(setup.workers.to_string())
                .stdout(Stdio::null())
                .spawn()?;
            workers.push((name, child));
        }
        Ok(ProcessCluster {
            controller,
            gcn,
            grouper,
            grouper_out,
            workers,
            _input: input,
        })
    }

    /// Waits until every node has registered with the controller.
    pub fn wait_registered(&self, timeout: Duration) -> bool {
        let Some(ctl) = &self.controller else {
            return true;
        };
        let deadline = std::time::Instant::now() + timeout;
        while ctl.topology().nodes.len() < self.workers.len() + 1 {
            if std::time::Instant::now() > deadline {
                return false;
            }
            std::thread::sleep(Duration::from_millis(5));
        }
        true
    }

    pub fn node_names(&self) -> Vec<String> {
        std::iter::once(GROUPER.to_string())
            .chain(self.workers.iter().map(|(n, _)| n.clone()))
            .collect()
    }

    /// Waits for every process; returns the Grouper's printed tally.
    pub fn join(mut self) -> Result<Counts, ClusterError> {
        let mut output = String::new();
        self.grouper_out.read_to_string(&mut output)?;
        let status = self.grouper.wait()?;
        if !status.success() {
            return Err(ClusterError::Node {
                node: GROUPER.into(),
                detail: status.to_string(),
            });
        }
        for (name, child) in &mut self.workers {
            let status = child.wait()?;
            if !status.success() {
                return Err(ClusterError::Node {
                    node: name.clone(),
                    detail: status.to_string(),
                });
            }
        }
        Ok(parse(&output))
    }
}

impl Drop for ProcessCluster {
    fn drop(&mut self) {
        // no-ops after a successful join
        let _ = self.grouper.kill();
        let _ = self.grouper.wait();
        for (_, child) in &mut self.workers {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}
