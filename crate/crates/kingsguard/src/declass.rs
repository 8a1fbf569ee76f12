//! Runtime cumulative hash over committed control-flow edges, the loop-once
//! rule, and authorized-declassification-path membership.
//!
//! Each committed control transfer contributes `SHA256(prev || be64(source)
//! || be64(target))` to the running digest. A backward conditional branch is
//! a loop edge and is hashed only on its first occurrence per enclave entry,
//! so the digest is insensitive to iteration counts but still pins the loop
//! structure.

use std::collections::BTreeSet;

use sha2::{Digest, Sha256};
use thiserror::Error;

/// 32-byte SHA-256 digest.
pub type HashValue = [u8; 32];

/// Initial chain value: 32 zero bytes.
pub const INIT_HASH: HashValue = [0u8; 32];

/// One chain step.
pub fn chain_step(prev: &HashValue, source: u64, target: u64) -> HashValue {
    let mut h = Sha256::new();
    h.update(prev);
    h.update(source.to_be_bytes());
    h.update(target.to_be_bytes());
    h.finalize().into()
}

/// Kind of a committed control transfer, as seen by the branch monitor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeKind {
    /// Taken conditional branch with target >= branch pc.
    ForwardBranchTaken,
    /// JAL or JALR, any direction.
    Jump,
    /// Taken conditional branch with target < branch pc (a loop edge).
    BackwardBranch,
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
#[error("illegal lifecycle transition: {0:?} while {1}")]
pub struct IllegalLifecycleTransition(pub LifecycleEvent, pub &'static str);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LifecycleEvent {
    Enter,
    Exit,
    Suspend,
    Resume,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum EngineState {
    Idle,
    Active,
    Suspended,
}

/// The hash engine's architectural state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeclassState {
    h_current: HashValue,
    state: EngineState,
    seen_loops: BTreeSet<(u64, u64)>,
    initialized: bool,
    /// Number of chain steps actually performed.
    pub updates: u64,
    /// Loop edges whose re-hash was suppressed.
    pub suppressed: u64,
}

impl Default for DeclassState {
    fn default() -> Self {
        DeclassState {
            h_current: INIT_HASH,
            state: EngineState::Idle,
            seen_loops: BTreeSet::new(),
            initialized: false,
            updates: 0,
            suppressed: 0,
        }
    }
}

impl DeclassState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn enabled(&self) -> bool {
        self.state == EngineState::Active
    }

    /// True while a suspended session's digest is parked in the engine.
    pub fn suspended(&self) -> bool {
        self.state == EngineState::Suspended
    }

    pub fn h_current(&self) -> HashValue {
        self.h_current
    }

    /// True once at least one edge has been absorbed since the last Enter.
    pub fn initialized(&self) -> bool {
        self.initialized
    }

    /// Absorb one committed control transfer. Loop edges are keyed on the
    /// exact (source, target) pair and hashed once per enclave entry.
    /// Returns true when the digest advanced.
    pub fn on_control_flow(&mut self, source: u64, target: u64, kind: EdgeKind) -> bool {
        debug_assert!(self.enabled(), "hash engine disabled");
        if kind == EdgeKind::BackwardBranch && !self.seen_loops.insert((source, target)) {
            self.suppressed += 1;
            return false;
        }
        self.h_current = chain_step(&self.h_current, source, target);
        self.initialized = true;
        self.updates += 1;
        true
    }

    pub fn matches_adp(&self, adps: &AdpHashSet) -> bool {
        adps.contains(&self.h_current)
    }

    pub fn lifecycle(&mut self, event: LifecycleEvent) -> Result<(), IllegalLifecycleTransition> {
        use EngineState::*;
        use LifecycleEvent::*;
        let name = match self.state {
            Idle => "idle",
            Active => "active",
            Suspended => "suspended",
        };
        match (event, self.state) {
            (Enter, Idle) => {
                self.h_current = INIT_HASH;
                self.seen_loops.clear();
                self.initialized = false;
                self.state = Active;
            }
            (Exit, Active) => {
                self.h_current = INIT_HASH;
                self.initialized = false;
                self.state = Idle;
            }
            (Suspend, Active) => self.state = Suspended,
            (Resume, Suspended) => self.state = Active,
            _ => return Err(IllegalLifecycleTransition(event, name)),
        }
        Ok(())
    }
}

/// The set of authorized declassification path digests, as carried by a
/// verified program image.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AdpHashSet {
    digests: BTreeSet<HashValue>,
}

impl AdpHashSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_digests(digests: impl IntoIterator<Item = HashValue>) -> Self {
        AdpHashSet {
            digests: digests.into_iter().collect(),
        }
    }

    pub fn insert(&mut self, d: HashValue) -> bool {
        self.digests.insert(d)
    }

    pub fn contains(&self, d: &HashValue) -> bool {
        self.digests.contains(d)
    }

    pub fn len(&self) -> usize {
        self.digests.len()
    }

    pub fn is_empty(&self) -> bool {
        self.digests.is_empty()
    }

    /// Digests in canonical (sorted) order.
    pub fn iter(&self) -> impl Iterator<Item = &HashValue> {
        self.digests.iter()
    }
}
