//! Driving a paused controller: the scripted lost-update interleaving and a
//! seeded random schedule.

use std::time::Duration;

use got_core::StepKind;
use gotcha::{ControlApi, ControlError, Direction, ReorderRequest, StepView};
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use thiserror::Error;

use crate::cluster::{worker_name, GROUPER};

#[derive(Debug, Error)]
pub enum DriverError {
    #[error("controller: {0}")]
    Api(#[from] ControlError),
    #[error("nothing to step while {at}")]
    Stuck { at: String },
    #[error("no quiescence while {at}")]
    Timeout { at: String },
}

pub type DriverResult<T> = Result<T, DriverError>;

pub struct Driver<'a> {
    api: &'a dyn ControlApi,
    timeout: Duration,
    /// One line per grant: `node: step-kind phase`.
    pub transcript: Vec<String>,
}

impl<'a> Driver<'a> {
    pub fn new(api: &'a dyn ControlApi) -> Driver<'a> {
        Driver {
            api,
            timeout: Duration::from_secs(20),
            transcript: Vec::new(),
        }
    }

    pub fn api(&self) -> &dyn ControlApi {
        self.api
    }

    pub fn settle(&self, at: &str) -> DriverResult<()> {
        if self.api.wait_quiescent(self.timeout)? {
            Ok(())
        } else {
            Err(DriverError::Timeout { at: at.to_string() })
        }
    }

    pub fn head(&self, node: &str) -> DriverResult<Option<StepView>> {
        Ok(self.api.steps(node)?.pending.into_iter().next())
    }

    pub fn awaiting(&self, node: &str) -> DriverResult<bool> {
        Ok(self.head(node)?.is_some_and(|s| s.awaiting))
    }

    pub fn executed(&self, node: &str, kind: StepKind) -> DriverResult<usize> {
        Ok(self.api.steps(node)?.executed.iter().filter(|s| s.kind == kind).count())
    }

    /// Grants the head step of `node` one phase and waits for the effects.
    pub fn step(&mut self, node: &str) -> DriverResult<()> {
        if let Some(h) = self.head(node)? {
            let phase = h.next_phase().map(|p| p.name()).unwrap_or("done");
            self.transcript.push(format!("{node}: {} {phase}", h.kind.name()));
        }
        self.api.step_node(node)?;
        self.settle(&format!("stepping {node}"))
    }

    /// Moves the pending step `step_id` of `node` to the front.
    pub fn promote_to_front(&mut self, node: &str, step_id: &str) -> DriverResult<()> {
        while self.api.steps(node)?.pending.first().is_some_and(|s| s.step_id != step_id) {
            let req = ReorderRequest {
                step_id: step_id.to_string(),
                direction: Direction::Promote,
            };
            self.api.reorder(node, req)?;
        }
        Ok(())
    }

    /// Steps `node`, or its peer while `node` waits on it, until `done`.
    fn advance(
        &mut self,
        node: &str,
        peer: &str,
        at: &str,
        mut done: impl FnMut(&Self) -> DriverResult<bool>,
    ) -> DriverResult<()> {
        self.settle(at)?;
        while !done(self)? {
            if self.awaiting(node)? {
                self.step(node)?;
            } else if self.awaiting(peer)? {
                self.step(peer)?;
            } else {
                return Err(DriverError::Stuck { at: at.to_string() });
            }
        }
        Ok(())
    }

    pub fn until_more(&mut self, node: &str, kind: StepKind, at: &str) -> DriverResult<()> {
        let before = self.executed(node, kind)?;
        self.advance(node, GROUPER, at, |d| Ok(d.executed(node, kind)? > before))
    }

    /// Lets `node` run one pull, count, commit, push iteration.
    pub fn round(&mut self, node: &str) -> DriverResult<()> {
        self.until_more(node, StepKind::Push, &format!("{node} runs a round"))
    }
}

/// Brings two workers to the point where both counted the same `bar` line
/// on top of the same base: Grouper publishes all lines, the workers take
/// turns on the first four, then both pull and commit without pushing.
pub fn drive_to_fork(d: &mut Driver) -> DriverResult<()> {
    let (w1, w2) = (worker_name(0), worker_name(1));
    d.settle("starting")?;
    loop {
        match d.head(GROUPER)? {
            Some(s) if s.kind == StepKind::Checkout => break,
            Some(s) if s.awaiting => d.step(GROUPER)?,
            _ => {
                return Err(DriverError::Stuck {
                    at: "Grouper publishes its input".into(),
                })
            }
        }
    }
    for w in [&w1, &w2, &w1, &w2] {
        d.round(w)?;
    }
    for w in [&w1, &w2] {
        d.until_more(w, StepKind::Checkout, &format!("{w} pulls"))?;
        d.until_more(w, StepKind::Commit, &format!("{w} commits"))?;
    }
    Ok(())
}

/// Pushes both forked commits, the second one forcing a merge at the
/// Grouper.
pub fn push_fork(d: &mut Driver) -> DriverResult<()> {
    for w in [worker_name(0), worker_name(1)] {
        d.until_more(&w, StepKind::Push, &format!("{w} pushes"))?;
    }
    Ok(())
}

/// The whole lost-update scenario: fork, push both sides, then free-run to
/// completion.
pub fn run_scenario(d: &mut Driver) -> DriverResult<()> {
    drive_to_fork(d)?;
    push_fork(d)?;
    d.api().play()?;
    Ok(())
}

/// Steps random awaiting nodes (and sometimes reorders a pending queue)
/// until every node finished. Returns the number of grants issued.
pub fn random_schedule(d: &mut Driver, seed: u64) -> DriverResult<usize> {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut grants = 0;
    loop {
        d.settle("random schedule")?;
        let status = d.api().status()?;
        if status.all_finished() {
            return Ok(grants);
        }
        if rng.gen_bool(0.2) {
            let queued: Vec<&str> = status
                .nodes
                .iter()
                .filter(|n| n.pending > 1)
                .map(|n| n.name.as_str())
                .collect();
            if let Some(node) = queued.choose(&mut rng) {
                let pending = d.api().steps(node)?.pending;
                let pick = pending.choose(&mut rng).expect("more than one pending step");
                let direction = if rng.gen_bool(0.5) {
                    Direction::Promote
                } else {
                    Direction::Demote
                };
                let req = ReorderRequest {
                    step_id: pick.step_id.clone(),
                    direction,
                };
                match d.api().reorder(node, req) {
                    Ok(()) => d.transcript.push(format!("{node}: {direction:?} {}", pick.kind.name())),
                    Err(ControlError::OutOfBounds(_) | ControlError::StepActive(_)) => {}
                    Err(ControlError::Rejected { status: 409, .. }) => {}
                    Err(e) => return Err(e.into()),
                }
            }
        }
        let awaiting: Vec<&str> = status
            .nodes
            .iter()
            .filter(|n| n.awaiting)
            .map(|n| n.name.as_str())
            .collect();
        let Some(node) = awaiting.choose(&mut rng).map(|s| s.to_string()) else {
            return Err(DriverError::Stuck {
                at: "random schedule".into(),
            });
        };
        d.step(&node)?;
        grants += 1;
    }
}
