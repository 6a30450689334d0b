use mlps_core::protocol::{ProtocolError, Status};
use mlps_core::WorkerId;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PsError {
    #[error("unknown table {0:?}")]
    UnknownTable(String),
    #[error("table {table:?} has no row {row}")]
    UnknownRow { table: String, row: u64 },
    #[error("table {table:?} has no column {col}")]
    UnknownColumn { table: String, col: u32 },
    #[error("worker {0} is not registered")]
    UnknownWorker(WorkerId),
    #[error("read interrupted by shutdown")]
    Interrupted,
    #[error("conflicting puts to {table:?} row {row} col {col} at clock {clock}")]
    PutConflict {
        table: String,
        row: u64,
        col: u32,
        clock: u64,
    },
    #[error("worker {worker} holds no overwrite right for {table:?} row {row} col {col}")]
    PutNotPermitted {
        worker: WorkerId,
        table: String,
        row: u64,
        col: u32,
    },
    #[error("worker {worker} sent clock {got}, server is at {expected}")]
    ClockMismatch {
        worker: WorkerId,
        expected: u64,
        got: u64,
    },
    #[error("row {row} is not stored on shard {shard}")]
    WrongShard { row: u64, shard: usize },
    #[error("transport: {0}")]
    Transport(String),
    #[error("server error: {0}")]
    Remote(String),
}

impl PsError {
    pub fn status(&self) -> Status {
        match self {
            PsError::UnknownTable(_) => Status::UnknownTable,
            PsError::UnknownRow { .. } | PsError::UnknownColumn { .. } | PsError::WrongShard { .. } => {
                Status::UnknownRow
            }
            PsError::UnknownWorker(_) => Status::UnknownWorker,
            PsError::Interrupted => Status::Interrupted,
            PsError::PutConflict { .. } => Status::PutConflict,
            _ => Status::BadRequest,
        }
    }

    /// Wire detail string; `from_status` inverts it for conflicts.
    pub fn detail(&self) -> String {
        match self {
            PsError::PutConflict {
                table,
                row,
                col,
                clock,
            } => format!("{table},{row},{col},{clock}"),
            other => other.to_string(),
        }
    }

    pub fn from_status(status: Status, detail: String) -> Self {
        match status {
            Status::Interrupted => PsError::Interrupted,
            Status::PutConflict => {
                let mut parts = detail.rsplitn(4, ',');
                let clock = parts.next().and_then(|v| v.parse().ok());
                let col = parts.next().and_then(|v| v.parse().ok());
                let row = parts.next().and_then(|v| v.parse().ok());
                match (parts.next(), row, col, clock) {
                    (Some(table), Some(row), Some(col), Some(clock)) => PsError::PutConflict {
                        table: table.to_string(),
                        row,
                        col,
                        clock,
                    },
                    _ => PsError::Remote(detail),
                }
            }
            _ => PsError::Remote(detail),
        }
    }
}

impl From<ProtocolError> for PsError {
    fn from(e: ProtocolError) -> Self {
        PsError::Transport(e.to_string())
    }
}

impl From<crate::transport::TransportError> for PsError {
    fn from(e: crate::transport::TransportError) -> Self {
        match e {
            crate::transport::TransportError::Closed => PsError::Interrupted,
            other => PsError::Transport(other.to_string()),
        }
    }
}
