//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits non-zero if any failed.

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use got_core::{
    apply_diff, Dataframe, Diff, LocalNet, Phase, Registration, Repository, State, StepKind, VersionGraph, VersionId,
};
use got_oracle::{algebra, graphs};
use got_wordcount::cluster::run_direct_local;
use got_wordcount::driver::{drive_to_fork, random_schedule, run_scenario, Driver};
use got_wordcount::schema::{line, registry, LINE};
use got_wordcount::{
    demo_lines, sequential_counts, Counts, LocalCluster, MergeKind, ProcessCluster, Setup, GROUPER,
};
use gotcha::{ControlApi, Controller, HttpControl, LocalTransport, Mode};
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};

type Check = Result<String, String>;

fn node_bin() -> &'static Path {
    Path::new(env!("CARGO_BIN_EXE_got-node"))
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn counts(v: &[(&str, i64)]) -> Counts {
    v.iter().map(|(w, n)| (w.to_string(), *n)).collect()
}

fn debug_processes(merge: MergeKind) -> Result<(ProcessCluster, HttpControl), String> {
    let cluster = ProcessCluster::launch(node_bin(), &Setup::new(demo_lines(), 2, merge), Some(Mode::Paused))
        .map_err(err)?;
    if !cluster.wait_registered(Duration::from_secs(20)) {
        return Err("nodes did not register".into());
    }
    let api = HttpControl::new(&cluster.gcn.as_ref().expect("debug cluster").addr.to_string());
    Ok((cluster, api))
}

fn scripted_processes(merge: MergeKind) -> Result<Counts, String> {
    let (cluster, api) = debug_processes(merge)?;
    run_scenario(&mut Driver::new(&api)).map_err(err)?;
    cluster.join().map_err(err)
}

fn bug_reproduction() -> Check {
    let start = Instant::now();
    let buggy = scripted_processes(MergeKind::Buggy)?;
    let fixed = scripted_processes(MergeKind::Fixed)?;
    let took = start.elapsed();
    if buggy != counts(&[("foo", 1), ("bar", 6), ("baz", 1)]) {
        return Err(format!("buggy merge printed {buggy:?}"));
    }
    if fixed != counts(&[("foo", 1), ("bar", 4), ("baz", 1)]) {
        return Err(format!("fixed merge printed {fixed:?}"));
    }
    if took >= Duration::from_secs(30) {
        return Err(format!("took {took:?}"));
    }
    Ok(format!("buggy bar 6, fixed bar 4, 3 processes each, {took:.2?} total"))
}

fn breakpoint_walkthrough() -> Check {
    let (cluster, api) = debug_processes(MergeKind::Buggy)?;
    let mut d = Driver::new(&api);
    drive_to_fork(&mut d).map_err(err)?;
    let bp = api.add_breakpoint("exists(WordCount, count == 6)").map_err(err)?;
    api.play().map_err(err)?;
    let deadline = Instant::now() + Duration::from_secs(20);
    let status = loop {
        let s = api.status().map_err(err)?;
        if s.mode == Mode::Paused && !s.hits.is_empty() && s.quiescent() {
            break s;
        }
        if Instant::now() > deadline {
            return Err("no pause".into());
        }
        std::thread::sleep(Duration::from_millis(2));
    };
    let hit = &status.hits[0];
    if status.hits.len() != 1 || hit.node != GROUPER {
        return Err(format!("hits {:?}", status.hits));
    }
    let steps = api.steps(GROUPER).map_err(err)?;
    let head = steps.pending.first().ok_or("Grouper has no pending step")?;
    if head.kind != StepKind::RespondToPush
        || head.next_phase() != Some(Phase::GarbageCollect)
        || !head.phases.contains(&Phase::RunMerge)
        || !head.awaiting
    {
        return Err(format!("Grouper head step {head:?}"));
    }
    let state = api.state(GROUPER, None).map_err(err)?;
    let bar = state
        .get("WordCount", &"bar".into())
        .and_then(|o| o.get("count").and_then(|v| v.as_int()));
    if bar != Some(6) {
        return Err(format!("Grouper bar is {bar:?}"));
    }
    let grants = status.grants;
    std::thread::sleep(Duration::from_millis(50));
    if api.status().map_err(err)?.grants != grants {
        return Err("grants continued after the pause".into());
    }
    api.remove_breakpoint(bp.id).map_err(err)?;
    api.play().map_err(err)?;
    let out = cluster.join().map_err(err)?;
    Ok(format!(
        "paused at Grouper respond-to-push before garbage-collect (run-merge present), finished with {out:?}"
    ))
}

fn random_input(rng: &mut StdRng) -> Vec<String> {
    let vocab: Vec<String> = (0..rng.gen_range(1..=8)).map(|i| format!("w{i}")).collect();
    (0..rng.gen_range(1..=30))
        .map(|_| {
            let n = rng.gen_range(0..=4);
            (0..n)
                .map(|_| vocab.choose(rng).unwrap().as_str())
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect()
}

fn convergence() -> Check {
    let mut rng = StdRng::seed_from_u64(2024);
    let mut grants = 0;
    for input in 0..20 {
        let lines = random_input(&mut rng);
        let workers = rng.gen_range(1..=3);
        let expected = sequential_counts(&lines);
        for seed in 0..10 {
            let mut setup = Setup::new(lines.clone(), workers, MergeKind::Fixed);
            setup.poll = Duration::ZERO;
            let cluster = LocalCluster::launch(&setup, Some(Mode::Paused));
            let ctl = cluster.controller.clone().expect("debug cluster");
            grants += random_schedule(&mut Driver::new(&*ctl), seed).map_err(err)?;
            let got = cluster.join().map_err(err)?;
            if got != expected {
                return Err(format!("input {input} seed {seed}: {got:?} != {expected:?}"));
            }
        }
    }
    Ok(format!("200 schedules ({grants} grants) match the sequential count"))
}

fn diff_algebra() -> Check {
    let checks = [
        ("composition", algebra::composition(2, 300)),
        ("application", algebra::application(1, 300)),
        ("differencing", algebra::differencing(3, 300)),
        ("conflicts", algebra::conflicts(4, 500)),
    ];
    let mut parts = Vec::new();
    for (name, outcome) in checks {
        parts.push(format!("{name} {}", outcome.map_err(|e| format!("{name}: {e}"))?));
    }
    Ok(parts.join(", "))
}

/// The Grouper keeps the version a worker fetched while that worker's ref
/// holds it, and collapses it once the ref moves on.
fn collapse_reproduction() -> Result<(), String> {
    let cluster = LocalCluster::launch(&Setup::new(demo_lines(), 2, MergeKind::Fixed), Some(Mode::Paused));
    let ctl = cluster.controller.clone().expect("debug cluster");
    let mut d = Driver::new(&*ctl);
    let w1 = got_wordcount::worker_name(0);
    for _ in 0..5 {
        d.until_more(GROUPER, StepKind::Commit, "publishing").map_err(err)?;
    }
    d.step(&w1).map_err(err)?;
    let respond = ctl
        .steps(GROUPER)
        .map_err(err)?
        .pending
        .into_iter()
        .find(|s| s.kind == StepKind::RespondToFetch)
        .ok_or("no respond-to-fetch at the Grouper")?;
    d.promote_to_front(GROUPER, &respond.step_id).map_err(err)?;
    d.until_more(&w1, StepKind::Fetch, "fetching").map_err(err)?;
    let pinned = ctl.history(GROUPER).map_err(err)?.head;
    d.until_more(GROUPER, StepKind::Commit, "publishing").map_err(err)?;

    let h = ctl.history(GROUPER).map_err(err)?;
    let mut vertices = h.vertices.clone();
    vertices.sort();
    let mut expected = vec![VersionId::root(), pinned.clone(), h.head.clone()];
    expected.sort();
    if vertices != expected {
        return Err(format!("Grouper versions {vertices:?}"));
    }
    let edge = h
        .edges
        .iter()
        .find(|e| e.src == pinned && e.dst == h.head)
        .ok_or("no edge from the fetched version to head")?;
    if edge.diff != Diff::new_object(&line(5, "bar")) {
        return Err(format!("edge diff {:?}", edge.diff));
    }

    // the worker's next fetch moves its ref to head; the pinned version is
    // then an unreferenced interior vertex
    let mut g = VersionGraph::from_export(&h).map_err(err)?;
    let holders: Vec<String> = h.refs.iter().filter(|(_, v)| **v == pinned).map(|(k, _)| k.clone()).collect();
    if holders.is_empty() {
        return Err(format!("no ref holds {pinned}"));
    }
    let head_state = g.state_at(&h.head).map_err(err)?;
    for r in &holders {
        g.update_ref(r, &h.head).map_err(err)?;
    }
    let removed = g.garbage_collect().map_err(err)?;
    if removed != BTreeSet::from([pinned.clone()]) {
        return Err(format!("collected {removed:?}"));
    }
    let composed = g.edge(&VersionId::root(), &h.head).ok_or("no composed ROOT -> head edge")?;
    if apply_diff(&State::new(), composed).map_err(err)? != head_state || g.state_at(&h.head).map_err(err)? != head_state {
        return Err("state of head changed".into());
    }

    ctl.play().map_err(err)?;
    cluster.join().map_err(err)?;
    Ok(())
}

fn gc_safety() -> Check {
    let n = graphs::gc_safety(5, 200, 50)?;
    collapse_reproduction().map_err(|e| format!("collapse: {e}"))?;
    Ok(format!(
        "{n} random graphs; a fetched Grouper version is kept as {{ROOT, v, head}} and collapsed once unreferenced"
    ))
}

fn free_run_transparency() -> Check {
    let mut compared = Vec::new();
    let setup = Setup::new(demo_lines(), 2, MergeKind::Fixed);
    let direct = ProcessCluster::launch(node_bin(), &setup, None)
        .map_err(err)?
        .join()
        .map_err(err)?;
    let debugged = ProcessCluster::launch(node_bin(), &setup, Some(Mode::FreeRun))
        .map_err(err)?
        .join()
        .map_err(err)?;
    if direct != debugged {
        return Err(format!("processes: direct {direct:?}, free-run {debugged:?}"));
    }
    compared.push("3 processes".to_string());

    let mut rng = StdRng::seed_from_u64(99);
    for _ in 0..5 {
        let setup = Setup::new(random_input(&mut rng), 3, MergeKind::Fixed);
        let direct = run_direct_local(&setup).map_err(err)?;
        let debugged = LocalCluster::launch(&setup, Some(Mode::FreeRun)).join().map_err(err)?;
        if direct != debugged {
            return Err(format!("in-process: direct {direct:?}, free-run {debugged:?}"));
        }
    }
    compared.push("5 random in-process inputs".to_string());
    Ok(format!("identical output on {}", compared.join(" and ")))
}

type Rows = Vec<(i64, String)>;

fn lines_read(df: &Dataframe) -> got_core::Result<Rows> {
    let mut rows = Vec::new();
    for h in df.read_all(LINE)? {
        let n = df.get(&h, "line_num")?.as_int().unwrap_or(-1);
        let text = df.get(&h, "line")?.as_str().unwrap_or_default().to_string();
        rows.push((n, text));
    }
    Ok(rows)
}

fn read_stability() -> Check {
    let net = LocalNet::new();
    let ctl = Controller::new(Arc::new(LocalTransport(net.clone())), Mode::Paused);
    let reg = registry();
    let worker = "WordCounter1";
    let mut dfs = Vec::new();
    for (name, remote) in [(GROUPER, None), (worker, Some(GROUPER))] {
        let gate: Arc<dyn got_core::Gate> = ctl.clone();
        let repo = Repository::new(name, reg.clone(), Arc::new(got_core::PreferTheirs), Some(gate));
        net.attach(name, repo.clone());
        ctl.register(Registration {
            name: name.to_string(),
            address: name.to_string(),
            remote: remote.map(String::from),
            types: reg.names().map(String::from).collect(),
        })
        .map_err(err)?;
        let df = Dataframe::new(repo);
        dfs.push(match remote {
            Some(r) => df.with_remote(r, net.link(r)),
            None => df,
        });
    }
    let mut wdf = dfs.pop().unwrap();
    let mut gdf = dfs.pop().unwrap();
    let finish = |name: &'static str| {
        let ctl = ctl.clone();
        move || {
            let _ = ctl.finished(name);
        }
    };

    let done = finish(GROUPER);
    let grouper = std::thread::spawn(move || -> got_core::Result<()> {
        let text = demo_lines();
        gdf.add_many((0..3).map(|i| line(i, &text[i as usize])))?;
        gdf.commit()?;
        gdf.add_many((3..6).map(|i| line(i, &text[i as usize])))?;
        gdf.commit()?;
        done();
        Ok(())
    });
    let done = finish(worker);
    let reader = std::thread::spawn(move || -> got_core::Result<Vec<Rows>> {
        wdf.pull()?;
        let first = lines_read(&wdf)?;
        wdf.fetch()?;
        let after_fetch = lines_read(&wdf)?;
        wdf.pull()?;
        let after_pull = lines_read(&wdf)?;
        done();
        Ok(vec![first, after_fetch, after_pull])
    });

    let mut d = Driver::new(&*ctl);
    d.until_more(GROUPER, StepKind::Commit, "first commit").map_err(err)?;
    d.step(worker).map_err(err)?;
    let respond = ctl
        .steps(GROUPER)
        .map_err(err)?
        .pending
        .into_iter()
        .find(|s| s.kind == StepKind::RespondToFetch)
        .ok_or("no respond-to-fetch")?;
    d.promote_to_front(GROUPER, &respond.step_id).map_err(err)?;
    d.until_more(worker, StepKind::Checkout, "first pull").map_err(err)?;
    let before = ctl.history(GROUPER).map_err(err)?.head;
    d.until_more(GROUPER, StepKind::Commit, "second commit").map_err(err)?;
    let advanced = ctl.history(GROUPER).map_err(err)?.head;
    if advanced == before {
        return Err("Grouper history did not advance".into());
    }
    d.until_more(worker, StepKind::Fetch, "fetch").map_err(err)?;
    if !ctl.history(worker).map_err(err)?.vertices.contains(&advanced) {
        return Err("worker did not receive the new version".into());
    }
    ctl.play().map_err(err)?;

    grouper.join().map_err(|_| "Grouper panicked")?.map_err(err)?;
    let reads = reader.join().map_err(|_| "worker panicked")?.map_err(err)?;
    if reads[0].len() != 3 || reads[0] != reads[1] {
        return Err(format!("reads changed without a pull: {:?} then {:?}", reads[0], reads[1]));
    }
    if reads[2].len() != 6 {
        return Err(format!("pull did not bring the new lines: {:?}", reads[2]));
    }
    Ok("3 lines read before and after a fetch of the advanced Grouper history, 6 after the next pull".into())
}

fn main() {
    let criteria: [(&str, fn() -> Check); 7] = [
        ("bug reproduction", bug_reproduction),
        ("breakpoint walkthrough", breakpoint_walkthrough),
        ("convergence", convergence),
        ("diff algebra", diff_algebra),
        ("gc safety", gc_safety),
        ("free-run transparency", free_run_transparency),
        ("read stability", read_stability),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        match check() {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
