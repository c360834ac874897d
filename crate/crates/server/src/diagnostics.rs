//! Per-session, deliver-once messages shown at the top of the next page.

use std::collections::HashMap;
use std::sync::Mutex;

use hdb_core::Timestamp;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub session: String,
    pub message: String,
    pub created: Timestamp,
}

#[derive(Debug, Default)]
pub struct DiagnosticStore {
    pending: Mutex<HashMap<String, Vec<Diagnostic>>>,
}

impl DiagnosticStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&self, session: &str, message: impl Into<String>, now: Timestamp) {
        let d = Diagnostic { session: session.to_owned(), message: message.into(), created: now };
        self.pending.lock().expect("diagnostics lock").entry(d.session.clone()).or_default().push(d);
    }

    /// Everything pending for `session`, in push order; the queue is left empty.
    pub fn drain(&self, session: &str) -> Vec<Diagnostic> {
        self.pending.lock().expect("diagnostics lock").remove(session).unwrap_or_default()
    }

    pub fn pending(&self, session: &str) -> usize {
        self.pending.lock().expect("diagnostics lock").get(session).map_or(0, Vec::len)
    }

    /// Drops a logged-out session's queue.
    pub fn forget(&self, session: &str) {
        self.pending.lock().expect("diagnostics lock").remove(session);
    }
}
