use std::collections::BTreeMap;
use std::sync::Arc;

use mlps::server::ParamServer;
use mlps::table::{CellOp, Schema, TableSpec};
use mlps_core::StalenessBound;
use proptest::prelude::*;

const ROWS: u64 = 3;
const WIDTH: usize = 2;

#[derive(Debug, Clone)]
enum Op {
    Inc { row: u64, col: u32, delta: i8 },
    Commit,
    Read { row: u64 },
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        3 => (0..ROWS, 0..WIDTH as u32, any::<i8>()).prop_map(|(row, col, delta)| Op::Inc { row, col, delta }),
        2 => Just(Op::Commit),
        2 => (0..ROWS).prop_map(|row| Op::Read { row }),
    ]
}

/// Committed deltas keyed by (clock, worker, row, col). Integer-valued so
/// every sum is exact.
type Ledger = BTreeMap<(u64, u32, u64, u32), f64>;

fn expected_row(ledger: &Ledger, reader: u32, frontier: u64, row: u64) -> Vec<f64> {
    let mut v = vec![0.0; WIDTH];
    for (&(clock, writer, r, col), d) in ledger {
        if r == row && (clock < frontier || writer == reader) {
            v[col as usize] += d;
        }
    }
    v
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn interleaved_programs_obey_ssp(
        workers in 1usize..4,
        s in 0u64..3,
        program in prop::collection::vec((0u32..4, op()), 0..80),
    ) {
        let schema = Arc::new(Schema::new(vec![TableSpec::zeros("t", ROWS, WIDTH)], 1));
        let server = ParamServer::new(0, schema, workers, StalenessBound(s));
        let mut clocks = vec![0u64; workers];
        let mut staged: Vec<Vec<(u64, u32, f64)>> = vec![Vec::new(); workers];
        let mut ledger = Ledger::new();
        for (w, op) in program {
            let w = w % workers as u32;
            let wi = w as usize;
            match op {
                Op::Inc { row, col, delta } => {
                    server
                        .stage(w, clocks[wi], [((0, row, col), CellOp::Delta(delta as f64))])
                        .unwrap();
                    staged[wi].push((row, col, delta as f64));
                }
                Op::Commit => {
                    let next = server.commit(w, clocks[wi]).unwrap();
                    for (row, col, d) in staged[wi].drain(..) {
                        *ledger.entry((clocks[wi], w, row, col)).or_default() += d;
                    }
                    clocks[wi] += 1;
                    prop_assert_eq!(next, clocks[wi]);
                }
                Op::Read { row } => {
                    let frontier = *clocks.iter().min().unwrap();
                    let within = frontier + s >= clocks[wi];
                    match server.try_get("t", row, w).unwrap() {
                        None => prop_assert!(!within, "blocked although within the bound"),
                        Some(read) => {
                            prop_assert!(within, "served beyond the bound");
                            prop_assert_eq!(read.frontier, frontier);
                            prop_assert!(read.staleness() <= s);
                            prop_assert_eq!(read.values, expected_row(&ledger, w, frontier, row));
                        }
                    }
                }
            }
        }
        // bring everyone to the same clock; every committed delta is merged
        let top = clocks.iter().copied().max().unwrap_or(0);
        for (w, c) in clocks.iter_mut().enumerate() {
            while *c < top {
                server.commit(w as u32, *c).unwrap();
                for (row, col, d) in staged[w].drain(..) {
                    *ledger.entry((*c, w as u32, row, col)).or_default() += d;
                }
                *c += 1;
            }
        }
        prop_assert_eq!(server.frontier(), top);
        for row in 0..ROWS {
            let mut want = vec![0.0; WIDTH];
            for (&(_, _, r, col), d) in &ledger {
                if r == row {
                    want[col as usize] += d;
                }
            }
            prop_assert_eq!(server.try_get("t", row, 0).unwrap().unwrap().values, want);
        }
    }
}

#[test]
fn overwrite_supersedes_other_deltas_in_the_same_clock() {
    let schema = Arc::new(Schema::new(vec![TableSpec::zeros("t", 1, 1)], 1));
    let server = ParamServer::new(0, schema, 2, StalenessBound(0));
    server.stage(0, 0, [((0, 0, 0), CellOp::Delta(5.0))]).unwrap();
    server.stage(1, 0, [((0, 0, 0), CellOp::Overwrite(2.0))]).unwrap();
    server.commit(0, 0).unwrap();
    server.commit(1, 0).unwrap();
    assert_eq!(server.try_get("t", 0, 0).unwrap().unwrap().values, vec![2.0]);
}

#[test]
fn conflicting_puts_keep_the_first_and_report() {
    let schema = Arc::new(Schema::new(vec![TableSpec::zeros("t", 1, 1)], 1));
    let server = ParamServer::new(0, schema, 2, StalenessBound(0));
    server.stage(0, 0, [((0, 0, 0), CellOp::Overwrite(1.0))]).unwrap();
    server.stage(1, 0, [((0, 0, 0), CellOp::Overwrite(9.0))]).unwrap();
    server.commit(0, 0).unwrap();
    let _ = server.commit(1, 0);
    assert_eq!(server.try_get("t", 0, 0).unwrap().unwrap().values, vec![1.0]);
    assert_eq!(server.conflicts().len(), 1);
}
