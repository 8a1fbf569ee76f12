//! Run-time event records: violations, trace stream lines, counters, and the
//! per-run report.

use std::fmt;

use crate::declass::HashValue;

/// The three enforcement outcomes worth flagging.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    ZeroizedStore,
    RedirectedAccess,
    DeniedSharedRead,
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ViolationKind::ZeroizedStore => "ZeroizedStore",
            ViolationKind::RedirectedAccess => "RedirectedAccess",
            ViolationKind::DeniedSharedRead => "DeniedSharedRead",
        };
        f.write_str(s)
    }
}

/// One enforcement event: (cycle, kind, pc, address, eid).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Violation {
    pub cycle: u64,
    pub kind: ViolationKind,
    pub pc: u64,
    pub address: u64,
    pub eid: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccessKind {
    Load,
    Store,
}

impl fmt::Display for AccessKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AccessKind::Load => "load",
            AccessKind::Store => "store",
        })
    }
}

/// One line of the trace stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TraceEvent {
    Violation(Violation),
    /// Committed control-flow edge absorbed by the hash engine.
    HashUpdate {
        cycle: u64,
        source: u64,
        target: u64,
        digest_prefix: [u8; 8],
    },
    /// Tainted branch condition observed (diagnostic only; implicit flows
    /// are not propagated).
    TaintedBranch {
        cycle: u64,
        pc: u64,
    },
    /// Declassified store or register release.
    Declassified {
        cycle: u64,
        pc: u64,
        address: u64,
        eid: u64,
    },
    /// Data access that landed on a page not owned by the executing context.
    NonEnclaveAccess {
        cycle: u64,
        vpage: u64,
        kind: AccessKind,
        eid: u64,
    },
    /// Page allocated on fault.
    PageAlloc {
        cycle: u64,
        vpage: u64,
        ppage: u64,
        eid: u64,
    },
    /// Enclave lifecycle transition.
    ContextSwitch {
        cycle: u64,
        what: &'static str,
        eid: u64,
    },
}

impl fmt::Display for TraceEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TraceEvent::Violation(v) => write!(
                f,
                "{}\t{}\t{:#x}\t{:#x}\t{}",
                v.cycle, v.kind, v.pc, v.address, v.eid
            ),
            TraceEvent::HashUpdate {
                cycle,
                source,
                target,
                digest_prefix,
            } => {
                write!(f, "{cycle}\tHashUpdate\t{source:#x}\t{target:#x}\t")?;
                for b in digest_prefix {
                    write!(f, "{b:02x}")?;
                }
                Ok(())
            }
            TraceEvent::TaintedBranch { cycle, pc } => {
                write!(f, "{cycle}\tTaintedBranch\t{pc:#x}")
            }
            TraceEvent::Declassified {
                cycle,
                pc,
                address,
                eid,
            } => {
                write!(f, "{cycle}\tDeclassified\t{pc:#x}\t{address:#x}\t{eid}")
            }
            TraceEvent::NonEnclaveAccess {
                cycle,
                vpage,
                kind,
                eid,
            } => {
                write!(f, "{cycle}\tNonEnclaveAccess\t{vpage:#x}\t{kind}\t{eid}")
            }
            TraceEvent::PageAlloc {
                cycle,
                vpage,
                ppage,
                eid,
            } => {
                write!(f, "{cycle}\tPageAlloc\t{vpage:#x}\t{ppage:#x}\t{eid}")
            }
            TraceEvent::ContextSwitch { cycle, what, eid } => {
                write!(f, "{cycle}\tContextSwitch\t{what}\t{eid}")
            }
        }
    }
}

/// Deterministic event counters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Counters {
    pub steps: u64,
    pub data_loads: u64,
    pub data_stores: u64,
    pub enclave_data_loads: u64,
    pub enclave_data_stores: u64,
    pub shadow_accesses: u64,
    pub hash_updates: u64,
    pub suppressed_loop_hashes: u64,
    pub taken_enclave_transfers: u64,
    pub context_switches: u64,
    pub page_faults: u64,
    pub declass_matches: u64,
}

impl Counters {
    /// The two exact accounting identities every run must satisfy.
    pub fn identities_hold(&self) -> bool {
        self.shadow_accesses == self.enclave_data_loads + self.enclave_data_stores
            && self.hash_updates == self.taken_enclave_transfers - self.suppressed_loop_hashes
    }
}

/// Why a run stopped.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RunOutcome {
    Halted,
    /// `max_steps` elapsed before HALT.
    StepBudgetExceeded,
    Trapped(crate::machine::TrapKind),
}

/// Digest of an enclave session's hash chain, captured just before the
/// engine reset at exit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SessionDigest {
    pub eid: u64,
    pub exit_cycle: u64,
    pub digest: HashValue,
}

/// Everything observable about one finished run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunReport {
    pub outcome: RunOutcome,
    pub counters: Counters,
    pub violations: Vec<Violation>,
    pub trace: Vec<TraceEvent>,
    /// Hash-chain digest of each enclave session at its exit.
    pub session_digests: Vec<SessionDigest>,
    /// (virtual page, kind) sequence of data accesses that landed on pages
    /// not owned by the executing context.
    pub non_enclave_accesses: Vec<(u64, AccessKind, u64)>,
    /// SHA-256 over the contents of all unowned pages, in page order.
    pub non_enclave_digest: HashValue,
    /// Digest of the final architectural state (registers, pc, shared regs).
    pub state_digest: HashValue,
    /// Result of reading every shared register from host context after the
    /// run, in index order.
    pub host_shared_reads: Vec<u64>,
}

impl RunReport {
    pub fn count(&self, kind: ViolationKind) -> usize {
        self.violations.iter().filter(|v| v.kind == kind).count()
    }
}
