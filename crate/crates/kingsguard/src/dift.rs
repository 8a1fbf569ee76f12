//! Dynamic information-flow tracking: taint propagation and the three
//! enforcement points that guard the enclave boundary.
//!
//! The boundary checks are pure functions over the current machine facts;
//! the machine applies their outcomes (zeroizing registers, rewriting an
//! effective address, stamping a shared register) and logs violations.

/// A 64-bit value carrying a one-bit taint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TaintedWord {
    pub value: u64,
    pub taint: bool,
}

impl TaintedWord {
    pub const ZERO: TaintedWord = TaintedWord {
        value: 0,
        taint: false,
    };

    pub fn new(value: u64, taint: bool) -> Self {
        TaintedWord { value, taint }
    }

    pub fn clean(value: u64) -> Self {
        TaintedWord {
            value,
            taint: false,
        }
    }
}

/// A user-visible register shared across enclave and host contexts.
///
/// `owner` is 0 while the register holds data readable by anyone; a nonzero
/// owner is the EID of the enclave whose tainted data currently sits in the
/// register.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SharedRegister {
    pub value: u64,
    pub owner: u64,
}

/// Instruction shapes distinguished by the propagation table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PropFormat {
    RegReg,
    RegImm,
    Load,
    Store,
}

/// Which propagation rule the register-operand format uses. `Or` is the
/// architected rule; `AndMutant` is a deliberately broken variant kept for
/// checking that the noninterference oracle actually detects propagation
/// bugs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TaintRule {
    #[default]
    Or,
    AndMutant,
}

/// Taint propagation for one instruction.
///
/// - `RegReg`: union of both source taints
/// - `RegImm`: source taint passes through
/// - `Load`: the shadow-memory bit of the loaded word
/// - `Store`: the value operand's taint travels to shadow memory
pub fn propagate(
    format: PropFormat,
    rs1_t: bool,
    rs2_t: bool,
    shadow_t: bool,
    rule: TaintRule,
) -> bool {
    match format {
        PropFormat::RegReg => match rule {
            TaintRule::Or => rs1_t || rs2_t,
            TaintRule::AndMutant => rs1_t && rs2_t,
        },
        PropFormat::RegImm => rs1_t,
        PropFormat::Load => shadow_t,
        PropFormat::Store => rs1_t,
    }
}

/// Outcome of the store-side boundary check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StoreCheck {
    /// Store proceeds, taint travels to shadow memory.
    Commit,
    /// Tainted store to non-enclave memory authorized by a matching
    /// declassification path: the value is written, the taint is dropped.
    CommitDeclassified,
    /// Tainted store to non-enclave memory with no authorization: the value
    /// register, its taint, and the target cell are all forced to zero.
    Zeroize,
}

/// Boundary rule for a store executed in enclave mode.
///
/// `target_owned_by_curr` is true when the target page's ownership-table
/// entry equals the executing enclave's EID. `declass_match` reports whether
/// the runtime path hash currently matches an authorized declassification
/// path; it is only consulted for tainted stores leaving the enclave.
pub fn check_store(
    target_owned_by_curr: bool,
    value_taint: bool,
    declass_match: bool,
) -> StoreCheck {
    if target_owned_by_curr || !value_taint {
        StoreCheck::Commit
    } else if declass_match {
        StoreCheck::CommitDeclassified
    } else {
        StoreCheck::Zeroize
    }
}

/// Result of the address-side boundary check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AddressCheck {
    /// Use the address as computed.
    Pass(u64),
    /// Tainted address into non-enclave memory: use the fixed address instead.
    Redirect(u64),
}

/// Boundary rule for any enclave-mode memory access: a tainted effective
/// address pointing outside the enclave's own pages is replaced with the
/// configured fixed address so the access pattern cannot encode secrets.
pub fn check_address(addr: TaintedWord, target_owned_by_curr: bool, a_fixed: u64) -> AddressCheck {
    if !target_owned_by_curr && addr.taint {
        AddressCheck::Redirect(a_fixed)
    } else {
        AddressCheck::Pass(addr.value)
    }
}

/// Write to a shared register.
///
/// An enclave-mode write of tainted data stamps the register with the
/// writer's EID; every other write leaves the register unstamped. Any writer
/// may overwrite a stamped register, transferring or clearing the stamp.
pub fn write_shared(sr: &mut SharedRegister, word: TaintedWord, curr_eid: u64) {
    sr.value = word.value;
    sr.owner = if curr_eid != 0 && word.taint {
        curr_eid
    } else {
        0
    };
}

/// Outcome of a shared-register read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SharedRead {
    /// Read allowed; the taint is set when the register was stamped by the
    /// reading enclave, so tainted data cannot launder through the register.
    Allowed(TaintedWord),
    /// Reader's EID does not match the stamp: the read returns zero and the
    /// register is wiped.
    Denied,
}

/// Read from a shared register under the stamp check. On a denied read the
/// register itself is zeroed, not just the result.
pub fn read_shared(sr: &mut SharedRegister, curr_eid: u64, protections: bool) -> SharedRead {
    if !protections || sr.owner == 0 || sr.owner == curr_eid {
        let taint = sr.owner != 0;
        SharedRead::Allowed(TaintedWord::new(sr.value, taint))
    } else {
        sr.value = 0;
        sr.owner = 0;
        SharedRead::Denied
    }
}
