use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Count of answered queries against an inference budget `B`.
///
/// `consume` is a compare-and-swap loop, so concurrent callers observe a total
/// order and at most `B` of them ever succeed. `budget: None` means unlimited,
/// which is what model-releasing mechanisms use.
#[derive(Debug, Serialize, Deserialize)]
pub struct BudgetState {
    budget: Option<u64>,
    used: AtomicU64,
}

impl BudgetState {
    pub fn limited(budget: u64) -> Self {
        Self { budget: Some(budget), used: AtomicU64::new(0) }
    }

    pub fn unlimited() -> Self {
        Self { budget: None, used: AtomicU64::new(0) }
    }

    pub fn budget(&self) -> Option<u64> {
        self.budget
    }

    pub fn used(&self) -> u64 {
        self.used.load(Ordering::SeqCst)
    }

    pub fn remaining(&self) -> Option<u64> {
        self.budget.map(|b| b.saturating_sub(self.used()))
    }

    /// Claims one query and returns its zero-based index, or refuses without
    /// changing the count once `B` queries have been answered.
    pub fn consume(&self) -> Result<u64> {
        let mut cur = self.used.load(Ordering::SeqCst);
        loop {
            if let Some(b) = self.budget {
                if cur >= b {
                    return Err(Error::BudgetExhausted { used: cur, budget: b });
                }
            }
            match self.used.compare_exchange_weak(cur, cur + 1, Ordering::SeqCst, Ordering::SeqCst) {
                Ok(_) => return Ok(cur),
                Err(actual) => cur = actual,
            }
        }
    }
}

impl Clone for BudgetState {
    fn clone(&self) -> Self {
        Self { budget: self.budget, used: AtomicU64::new(self.used()) }
    }
}

pub fn consume_budget(state: &BudgetState) -> Result<u64> {
    state.consume()
}
