//! Scripted-interleaving checks of the stale synchronous read guarantee.
//!
//! Every update adds a distinct power of two, so the set of updates a read
//! observed can be decoded exactly from the values it returned. A reference
//! model tracks which updates exist and which are committed, and each read is
//! checked against it.

use std::collections::BTreeSet;
use std::sync::mpsc;
use std::sync::Arc;
use std::time::{Duration, Instant};

use mlps_core::{Clock, StalenessBound, WorkerId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::client::{LocalClient, PsClient};
use crate::server::ParamServer;
use crate::table::{Schema, TableSpec};

const TABLE: &str = "t";
const ROWS: u64 = 4;
const WIDTH: usize = 2;
const SHARDS: usize = 2;
/// Distinct powers of two that still sum exactly in an f64.
const MAX_UPDATES: usize = 52;

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub workers: usize,
    pub staleness: u64,
    pub clocks: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioOutcome {
    pub name: String,
    pub workers: usize,
    pub staleness: u64,
    pub clocks: u64,
    pub reads: usize,
    pub blocked: usize,
    pub failure: Option<String>,
}

impl ScenarioOutcome {
    pub fn passed(&self) -> bool {
        self.failure.is_none()
    }
}

/// 27 scenarios: 2 to 4 workers, `s` in {0, 1, 2}, three interleaving seeds
/// each, with between 4 and 8 clocks.
pub fn ssp_scenarios() -> Vec<Scenario> {
    let mut out = Vec::new();
    for workers in 2..=4 {
        for staleness in 0..=2 {
            for k in 0..3u64 {
                let clocks = 8 - (k + workers as u64) % 5;
                out.push(Scenario {
                    name: format!("w{workers}-s{staleness}-k{k}"),
                    workers,
                    staleness,
                    clocks,
                    seed: 1000 * workers as u64 + 10 * staleness + k,
                });
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Step {
    Read,
    Inc,
    Commit,
}

struct Update {
    worker: usize,
    clock: Clock,
    committed: bool,
}

fn servers(workers: usize, staleness: u64) -> Vec<Arc<ParamServer>> {
    let schema = Arc::new(Schema::new(vec![TableSpec::zeros(TABLE, ROWS, WIDTH)], SHARDS));
    (0..SHARDS)
        .map(|sh| {
            Arc::new(ParamServer::new(
                sh,
                schema.clone(),
                workers,
                StalenessBound(staleness),
            ))
        })
        .collect()
}

fn decode(values: &[f64]) -> Result<BTreeSet<usize>, String> {
    let mut seen = BTreeSet::new();
    for &v in values {
        if v < 0.0 || v.fract() != 0.0 || v >= 2f64.powi(MAX_UPDATES as i32) {
            return Err(format!("undecodable value {v}"));
        }
        let bits = v as u64;
        for k in 0..MAX_UPDATES {
            if bits >> k & 1 == 1 && !seen.insert(k) {
                return Err(format!("update {k} seen twice"));
            }
        }
    }
    Ok(seen)
}

/// Runs one scenario single-threaded: a seeded scheduler picks which worker
/// takes its next step. A worker whose read would block is parked until some
/// commit changes the picture.
pub fn run_scenario(sc: &Scenario) -> ScenarioOutcome {
    let mut outcome = ScenarioOutcome {
        name: sc.name.clone(),
        workers: sc.workers,
        staleness: sc.staleness,
        clocks: sc.clocks,
        reads: 0,
        blocked: 0,
        failure: None,
    };
    if let Err(e) = drive(sc, &mut outcome) {
        outcome.failure = Some(e);
    }
    outcome
}

fn drive(sc: &Scenario, outcome: &mut ScenarioOutcome) -> Result<(), String> {
    let shards = servers(sc.workers, sc.staleness);
    let mut clients: Vec<LocalClient> = (0..sc.workers)
        .map(|w| LocalClient::new(w as WorkerId, shards.clone(), None))
        .collect();
    let program: Vec<Step> = (0..sc.clocks)
        .flat_map(|_| [Step::Read, Step::Inc, Step::Read, Step::Commit])
        .collect();
    let mut pc = vec![0usize; sc.workers];
    let mut committed = vec![0u64; sc.workers];
    let mut parked = vec![false; sc.workers];
    let mut updates: Vec<Update> = Vec::new();
    let per_clock = (MAX_UPDATES / (sc.workers * sc.clocks as usize)).clamp(1, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(sc.seed);

    loop {
        let live: Vec<usize> = (0..sc.workers)
            .filter(|&w| pc[w] < program.len() && !parked[w])
            .collect();
        if live.is_empty() {
            if pc.iter().all(|&p| p == program.len()) {
                return Ok(());
            }
            return Err("every unfinished worker is blocked".into());
        }
        let w = live[rng.gen_range(0..live.len())];
        let c = committed[w];
        match program[pc[w]] {
            Step::Read => {
                // the guarantee: everything stamped <= c - s - 1 is committed
                let model_permits = committed.iter().all(|&o| o + sc.staleness >= c);
                let open = (0..ROWS).try_fold(true, |acc, r| {
                    let shard = &shards[r as usize % SHARDS];
                    shard
                        .try_get(TABLE, r, w as WorkerId)
                        .map(|got| acc && got.is_some())
                        .map_err(|e| e.to_string())
                })?;
                if open != model_permits {
                    return Err(format!(
                        "worker {w} at clock {c}: server gate {open}, reference {model_permits}"
                    ));
                }
                if !open {
                    outcome.blocked += 1;
                    parked[w] = true;
                    continue;
                }
                let values = clients[w].get_table(TABLE).map_err(|e| e.to_string())?;
                let seen = decode(&values)?;
                outcome.reads += 1;
                for (k, u) in updates.iter().enumerate() {
                    let required = u.worker == w || u.clock + sc.staleness < c;
                    if required && !seen.contains(&k) {
                        return Err(format!(
                            "worker {w} at clock {c} missed update {k} (worker {}, clock {})",
                            u.worker, u.clock
                        ));
                    }
                    if seen.contains(&k) && u.worker != w && !u.committed {
                        return Err(format!("worker {w} saw uncommitted update {k}"));
                    }
                }
                if seen.iter().any(|&k| k >= updates.len()) {
                    return Err(format!("worker {w} saw an update that was never made"));
                }
            }
            Step::Inc => {
                for _ in 0..per_clock {
                    let k = updates.len();
                    let row = rng.gen_range(0..ROWS);
                    let col = rng.gen_range(0..WIDTH as u32);
                    clients[w]
                        .inc(TABLE, &[(row, col, 2f64.powi(k as i32))])
                        .map_err(|e| e.to_string())?;
                    updates.push(Update {
                        worker: w,
                        clock: c,
                        committed: false,
                    });
                }
            }
            Step::Commit => {
                let next = clients[w].commit().map_err(|e| e.to_string())?;
                committed[w] += 1;
                if next != committed[w] {
                    return Err(format!("worker {w} commit returned {next}"));
                }
                for u in updates.iter_mut().filter(|u| u.worker == w && u.clock == c) {
                    u.committed = true;
                }
                parked.iter_mut().for_each(|p| *p = false);
            }
        }
        pc[w] += 1;
    }
}

/// Two threads, `s = 1`: the fast worker reaches clock 2 while the straggler
/// is still at clock 0, so its read must wait. The straggler's commit must
/// release it, and the released read must include the straggler's update.
pub fn straggler_scenario(hold: Duration) -> ScenarioOutcome {
    let mut outcome = ScenarioOutcome {
        name: "straggler-blocks-reader".into(),
        workers: 2,
        staleness: 1,
        clocks: 3,
        reads: 0,
        blocked: 0,
        failure: None,
    };
    if let Err(e) = straggler(hold, &mut outcome) {
        outcome.failure = Some(e);
    }
    outcome
}

fn straggler(hold: Duration, outcome: &mut ScenarioOutcome) -> Result<(), String> {
    let shards = servers(2, 1);
    let mut fast = LocalClient::new(0, shards.clone(), None);
    let mut slow = LocalClient::new(1, shards.clone(), None);
    let err = |e: crate::error::PsError| e.to_string();
    for _ in 0..2 {
        fast.get(TABLE, 0).map_err(err)?;
        fast.inc(TABLE, &[(0, 0, 1.0)]).map_err(err)?;
        fast.commit().map_err(err)?;
    }
    let (tx, rx) = mpsc::channel();
    let reader = std::thread::spawn(move || {
        let t0 = Instant::now();
        let got = fast.get(TABLE, 0);
        let _ = tx.send((t0.elapsed(), got));
    });
    match rx.recv_timeout(hold) {
        Err(mpsc::RecvTimeoutError::Timeout) => outcome.blocked += 1,
        Ok((_, got)) => {
            let _ = reader.join();
            return Err(format!("read returned before the straggler committed: {got:?}"));
        }
        Err(e) => return Err(e.to_string()),
    }
    slow.inc(TABLE, &[(0, 0, 100.0)]).map_err(err)?;
    slow.commit().map_err(err)?;
    let (waited, got) = rx
        .recv_timeout(Duration::from_secs(10))
        .map_err(|_| "reader still blocked after the straggler committed".to_string())?;
    reader.join().map_err(|_| "reader panicked".to_string())?;
    let values = got.map_err(err)?;
    outcome.reads += 1;
    if waited < hold {
        return Err(format!("reader waited only {waited:?}"));
    }
    if values[0] != 102.0 {
        return Err(format!("released read returned {}, expected 102", values[0]));
    }
    Ok(())
}

/// Every scripted scenario plus the straggler check.
pub fn run_suite() -> Vec<ScenarioOutcome> {
    let mut out: Vec<ScenarioOutcome> = ssp_scenarios().iter().map(run_scenario).collect();
    out.push(straggler_scenario(Duration::from_millis(100)));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decode_rejects_duplicates_and_fractions() {
        assert_eq!(decode(&[5.0, 2.0]).unwrap(), BTreeSet::from([0, 1, 2]));
        assert!(decode(&[1.0, 1.0]).is_err());
        assert!(decode(&[0.5]).is_err());
    }

    #[test]
    fn suite_shape() {
        let s = ssp_scenarios();
        assert!(s.len() >= 20);
        assert!(s.iter().all(|x| (2..=4).contains(&x.workers) && x.clocks <= 8 && x.staleness <= 2));
    }

    #[test]
    fn every_scenario_passes() {
        for o in run_suite() {
            assert!(o.passed(), "{}: {:?}", o.name, o.failure);
            assert!(o.reads > 0);
        }
    }

    #[test]
    fn staleness_bound_causes_blocking() {
        let blocked: usize = ssp_scenarios()
            .iter()
            .filter(|s| s.staleness == 0)
            .map(|s| run_scenario(s).blocked)
            .sum();
        assert!(blocked > 0);
    }
}
