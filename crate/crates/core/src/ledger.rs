//! Communication accounting. One transfer is one model upload; broadcasts
//! and downloads are not counted.

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransferScope {
    /// Upload to a group-level FL aggregator.
    Group,
    /// Upload to the central server / merger.
    Central,
}

/// Shared upload counters. Increments are atomic, so concurrent group runs
/// can charge the same ledger.
#[derive(Debug)]
pub struct CommLedger {
    group_transfers: AtomicU64,
    central_transfers: AtomicU64,
    bytes_per_transfer: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerTotals {
    pub group_transfers: u64,
    pub central_transfers: u64,
    pub bytes_per_transfer: u64,
}

impl LedgerTotals {
    pub fn group_bytes(&self) -> u64 {
        self.group_transfers * self.bytes_per_transfer
    }

    pub fn central_bytes(&self) -> u64 {
        self.central_transfers * self.bytes_per_transfer
    }
}

impl CommLedger {
    pub fn new(bytes_per_transfer: u64) -> Self {
        Self { group_transfers: AtomicU64::new(0), central_transfers: AtomicU64::new(0), bytes_per_transfer }
    }

    pub fn record(&self, scope: TransferScope) {
        self.record_many(scope, 1);
    }

    pub fn record_many(&self, scope: TransferScope, count: u64) {
        let counter = match scope {
            TransferScope::Group => &self.group_transfers,
            TransferScope::Central => &self.central_transfers,
        };
        counter.fetch_add(count, Ordering::SeqCst);
    }

    pub fn totals(&self) -> LedgerTotals {
        LedgerTotals {
            group_transfers: self.group_transfers.load(Ordering::SeqCst),
            central_transfers: self.central_transfers.load(Ordering::SeqCst),
            bytes_per_transfer: self.bytes_per_transfer,
        }
    }
}
