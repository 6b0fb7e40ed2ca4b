//! Controller behaviour with in-process nodes.

use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use got_core::{
    Dataframe, Gate, LocalNet, ObjectState, Phase, PreferTheirs, Registration, Registry, Repository, StepKind,
    SyncMessage, Value, ValueKind, VersionId,
};
use gotcha::{ControlApi, ControlError, Controller, Direction, Event, LocalTransport, Mode, ReorderRequest};

fn registry() -> Arc<Registry> {
    let mut reg = Registry::new();
    reg.register_schema("Counter", "name", &[("name", ValueKind::Str), ("n", ValueKind::Int)])
        .unwrap();
    Arc::new(reg)
}

fn counter(name: &str, n: i64) -> ObjectState {
    ObjectState::build(registry().get("Counter").unwrap(), [("name", Value::from(name)), ("n", Value::Int(n))])
        .unwrap()
}

struct Rig {
    net: Arc<LocalNet>,
    ctl: Arc<Controller>,
}

impl Rig {
    fn new(mode: Mode) -> Rig {
        let net = LocalNet::new();
        let ctl = Controller::new(Arc::new(LocalTransport(net.clone())), mode);
        Rig { net, ctl }
    }

    fn node(&self, name: &str, remote: Option<&str>) -> Dataframe {
        let gate: Arc<dyn Gate> = self.ctl.clone();
        let repo = Repository::new(name, registry(), Arc::new(PreferTheirs), Some(gate));
        self.net.attach(name, repo.clone());
        self.ctl
            .register(Registration {
                name: name.into(),
                address: name.into(),
                remote: remote.map(String::from),
                types: vec!["Counter".into()],
            })
            .unwrap();
        match remote {
            Some(r) => Dataframe::new(repo).with_remote(r, self.net.link(r)),
            None => Dataframe::new(repo),
        }
    }

    /// A node that only serves peers.
    fn server(&self, name: &str) -> Dataframe {
        let df = self.node(name, None);
        self.ctl.finished(name).unwrap();
        df
    }

    fn run<T: Send + 'static>(
        &self,
        name: &str,
        mut df: Dataframe,
        app: impl FnOnce(&mut Dataframe) -> T + Send + 'static,
    ) -> JoinHandle<(Dataframe, T)> {
        let ctl = self.ctl.clone();
        let name = name.to_string();
        std::thread::spawn(move || {
            let out = app(&mut df);
            ctl.finished(&name).unwrap();
            (df, out)
        })
    }

    fn settle(&self) {
        let deadline = Instant::now() + Duration::from_secs(10);
        while !self.ctl.status().quiescent() {
            assert!(Instant::now() < deadline, "no quiescence: {:?}", self.ctl.status());
            std::thread::sleep(Duration::from_millis(2));
        }
    }

    fn head(&self, node: &str) -> Option<(StepKind, Option<Phase>)> {
        let steps = self.ctl.steps(node).unwrap();
        steps.pending.first().map(|s| (s.kind, s.next_phase()))
    }

    fn step(&self, node: &str) {
        ControlApi::step_node(&*self.ctl, node).unwrap();
        self.settle();
    }
}

#[test]
fn stepping_a_commit_phase_by_phase() {
    let rig = Rig::new(Mode::Paused);
    let df = rig.node("A", None);
    let t = rig.run("A", df, |df| {
        df.add_one(counter("x", 1)).unwrap();
        df.commit().unwrap()
    });
    rig.settle();
    assert_eq!(rig.head("A"), Some((StepKind::Commit, Some(Phase::ReceiveData))));
    rig.step("A");
    assert_eq!(rig.head("A"), Some((StepKind::Commit, Some(Phase::ExtendGraph))));
    rig.step("A");
    assert_eq!(rig.head("A"), Some((StepKind::Commit, Some(Phase::GarbageCollect))));
    rig.step("A");
    let (_, v) = t.join().unwrap();

    let steps = rig.ctl.steps("A").unwrap();
    assert!(steps.pending.is_empty());
    assert_eq!(steps.executed.len(), 1);
    assert_eq!(steps.executed[0].grants, vec![1, 2, 3]);
    assert_eq!(rig.ctl.history("A").unwrap().head, v);
    let state = rig.ctl.state("A", None).unwrap();
    assert_eq!(state.get("Counter", &Value::from("x")).unwrap().get("n"), Some(&Value::Int(1)));
    assert_eq!(
        ControlApi::step_node(&*rig.ctl, "A"),
        Err(ControlError::NoPendingPhase("A".into()))
    );
    assert_eq!(ControlApi::step_all(&*rig.ctl).unwrap_err(), ControlError::NoPendingPhase("any node".into()));
    assert!(rig.ctl.status().all_finished());
}

#[test]
fn registration_and_topology() {
    let rig = Rig::new(Mode::Paused);
    assert!(rig.ctl.topology().nodes.is_empty());
    let mut events = rig.ctl.subscribe();
    rig.server("S");
    rig.node("A", Some("S"));
    rig.node("B", Some("S"));
    let topo = rig.ctl.topology();
    assert_eq!(topo.nodes.len(), 3);
    let mut edges: Vec<(String, String)> = topo.edges.into_iter().map(|e| (e.from, e.to)).collect();
    edges.sort();
    assert_eq!(edges, vec![("A".into(), "S".into()), ("B".into(), "S".into())]);
    let dup = rig.ctl.register(Registration {
        name: "A".into(),
        address: "elsewhere".into(),
        remote: None,
        types: vec![],
    });
    assert_eq!(dup, Err(ControlError::DuplicateNode("A".into())));
    assert_eq!(
        events.try_recv().unwrap(),
        Event::NodeRegistered { node: "S".into() }
    );
    assert!(matches!(rig.ctl.steps("nobody"), Err(ControlError::UnknownNode(_))));
}

fn sender(step: &gotcha::StepView) -> String {
    match &step.payload {
        Some(SyncMessage::PushRequest { sender_id, .. }) => sender_id.clone(),
        other => panic!("not a push: {other:?}"),
    }
}

#[test]
fn reorder_pending_pushes_at_the_receiver() {
    let rig = Rig::new(Mode::Paused);
    rig.server("S");
    let mut threads = Vec::new();
    for (name, key) in [("A", "a"), ("B", "b")] {
        let df = rig.node(name, Some("S"));
        threads.push(rig.run(name, df, move |df| {
            df.add_one(counter(key, 1)).unwrap();
            df.commit().unwrap();
            df.push().unwrap()
        }));
    }
    // drive both clients until their requests are queued at S
    rig.settle();
    while rig.ctl.steps("S").unwrap().pending.len() < 2 {
        for n in ["A", "B"] {
            if rig.ctl.status().nodes.iter().any(|s| s.name == n && s.awaiting) {
                rig.step(n);
            }
        }
    }
    let pending = rig.ctl.steps("S").unwrap().pending;
    assert!(pending.iter().all(|s| s.kind == StepKind::RespondToPush && !s.started));
    let (first, second) = (sender(&pending[0]), sender(&pending[1]));

    let promote = |id: &str| ReorderRequest {
        step_id: id.to_string(),
        direction: Direction::Promote,
    };
    assert!(matches!(
        rig.ctl.reorder("S", promote(&pending[0].step_id)),
        Err(ControlError::OutOfBounds(_))
    ));
    assert!(matches!(
        rig.ctl.reorder(
            "S",
            ReorderRequest {
                step_id: pending[1].step_id.clone(),
                direction: Direction::Demote
            }
        ),
        Err(ControlError::OutOfBounds(_))
    ));
    rig.ctl.reorder("S", promote(&pending[1].step_id)).unwrap();
    let now = rig.ctl.steps("S").unwrap().pending;
    assert_eq!((sender(&now[0]), sender(&now[1])), (second.clone(), first.clone()));

    // once started the head is pinned
    rig.step("S");
    assert!(matches!(
        rig.ctl.reorder("S", promote(&now[1].step_id)),
        Err(ControlError::StepActive(_))
    ));

    ControlApi::play(&*rig.ctl).unwrap();
    for t in threads {
        t.join().unwrap();
    }
    rig.settle();
    let executed = rig.ctl.steps("S").unwrap().executed;
    let order: Vec<String> = executed.iter().map(sender).collect();
    assert_eq!(order, vec![second, first]);
    let state = rig.ctl.state("S", None).unwrap();
    assert_eq!(state.len(), 2);
    assert!(rig.ctl.status().all_finished());
}

#[test]
fn rollback_rules() {
    let rig = Rig::new(Mode::FreeRun);
    let df = rig.node("A", None);
    let (df, (v1, v2)) = rig
        .run("A", df, |df| {
            df.add_one(counter("x", 1)).unwrap();
            let v1 = df.commit().unwrap();
            df.add_one(counter("y", 1)).unwrap();
            (v1, df.commit().unwrap())
        })
        .join()
        .unwrap();
    assert_eq!(rig.ctl.history("A").unwrap().head, v2);
    assert_eq!(rig.ctl.rollback("A", &v1), Err(ControlError::NotPaused));

    ControlApi::pause(&*rig.ctl).unwrap();
    assert!(matches!(
        rig.ctl.rollback("A", &VersionId::from("nope")),
        Err(ControlError::History(_))
    ));
    // the interior version was collapsed by garbage collection
    assert!(matches!(rig.ctl.rollback("A", &v1), Err(ControlError::History(_))));
    rig.ctl.rollback("A", &v2).unwrap();
    rig.ctl.rollback("A", &VersionId::root()).unwrap();
    assert_eq!(rig.ctl.history("A").unwrap().head, VersionId::root());
    assert_eq!(df.repo().head(), VersionId::root());
    assert!(rig.ctl.state("A", None).unwrap().is_empty());
    assert!(matches!(rig.ctl.rollback("A", &v2), Err(ControlError::History(_))));
}

#[test]
fn rollback_refused_mid_step() {
    let rig = Rig::new(Mode::Paused);
    let df = rig.node("A", None);
    let t = rig.run("A", df, |df| {
        df.add_one(counter("x", 1)).unwrap();
        df.commit().unwrap();
        df.add_one(counter("y", 1)).unwrap();
        df.commit().unwrap();
    });
    rig.settle();
    for _ in 0..4 {
        rig.step("A");
    }
    assert_eq!(rig.head("A"), Some((StepKind::Commit, Some(Phase::ExtendGraph))));
    let err = rig.ctl.rollback("A", &VersionId::root()).unwrap_err();
    assert!(matches!(err, ControlError::StepActive(_)), "{err}");
    ControlApi::play(&*rig.ctl).unwrap();
    t.join().unwrap();
}

#[test]
fn free_run_pauses_on_breakpoint() {
    let rig = Rig::new(Mode::FreeRun);
    assert!(matches!(rig.ctl.add_breakpoint("exists(Counter, n = 2)"), Err(ControlError::Parse(_))));
    let bp = rig.ctl.add_breakpoint("exists(Counter, n == 2)").unwrap();
    let df = rig.node("A", None);
    let t = rig.run("A", df, |df| {
        for n in 1..=3 {
            df.add_one(counter(&format!("c{n}"), n)).unwrap();
            df.commit().unwrap();
        }
    });
    let deadline = Instant::now() + Duration::from_secs(10);
    while rig.ctl.status().mode != Mode::Paused {
        assert!(Instant::now() < deadline, "breakpoint never hit");
        std::thread::sleep(Duration::from_millis(2));
    }
    rig.settle();
    let status = rig.ctl.status();
    assert_eq!(status.hits.len(), 1);
    assert_eq!(status.hits[0].breakpoint_id, bp.id);
    assert_eq!(status.hits[0].node, "A");
    // the second commit extended the graph and waits to collect garbage
    assert_eq!(rig.head("A"), Some((StepKind::Commit, Some(Phase::GarbageCollect))));
    let state = rig.ctl.state("A", None).unwrap();
    assert!(state.objects("Counter").any(|o| o.get("n") == Some(&Value::Int(2))));

    // the predicate keeps holding; play must not stop again for it
    ControlApi::play(&*rig.ctl).unwrap();
    t.join().unwrap();
    rig.settle();
    assert_eq!(rig.ctl.status().hits.len(), 1);
    assert_eq!(rig.ctl.status().mode, Mode::FreeRun);
    rig.ctl.remove_breakpoint(bp.id).unwrap();
    assert!(rig.ctl.breakpoints().is_empty());
    assert_eq!(rig.ctl.remove_breakpoint(bp.id), Err(ControlError::UnknownBreakpoint(bp.id)));
}
