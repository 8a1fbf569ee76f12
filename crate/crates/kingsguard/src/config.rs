//! Simulator configuration: physical-memory geometry, virtual layout
//! conventions, enforcement knobs.

use crate::dift::TaintRule;

pub const PAGE_SIZE: u64 = 4096;
pub const WORD_BYTES: u64 = 8;

/// Virtual base addresses a program's sections are assembled at.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayoutConfig {
    pub text_base: u64,
    pub data_base: u64,
    pub sensitive_base: u64,
}

impl LayoutConfig {
    /// Default layout for enclave images.
    pub fn enclave() -> Self {
        LayoutConfig {
            text_base: 0x10_0000,
            data_base: 0x12_0000,
            sensitive_base: 0x14_0000,
        }
    }

    /// Default layout for host programs (no sensitive section).
    pub fn host() -> Self {
        LayoutConfig {
            text_base: 0x1_0000,
            data_base: 0x3_0000,
            sensitive_base: 0x5_0000,
        }
    }
}

/// Whole-simulation configuration. `Default` gives the desk-scale setup used
/// by the scenario suite.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimConfig {
    /// Physical memory size in bytes; power of two, at least 1 MiB.
    pub mem_size: u64,
    /// Number of EID-stamped shared registers.
    pub num_shared_regs: usize,
    /// Fixed valid non-enclave address substituted for tainted addresses.
    pub a_fixed: u64,
    /// Virtual pages treated as memory-mapped peripherals (never owned).
    pub peripheral_pages: Vec<u64>,
    /// Master switch for the three enforcement points.
    pub protections: bool,
    /// Active propagation rule for register-operand instructions.
    pub taint_rule: TaintRule,
    /// Maximum enclaves alive at once.
    pub max_enclaves: usize,
    /// Maximum byte length of one OCALL buffer copy.
    pub ocall_max_len: u64,
    /// Host-visible virtual base of the per-enclave OCALL staging pages;
    /// enclave N's staging page sits at `staging_base + (N-1) * PAGE_SIZE`.
    pub staging_base: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            mem_size: 1 << 20,
            num_shared_regs: 4,
            a_fixed: 0x7_F008,
            peripheral_pages: vec![0x8_0000 / PAGE_SIZE],
            protections: true,
            taint_rule: TaintRule::Or,
            max_enclaves: 8,
            ocall_max_len: 4096,
            staging_base: 0x9_0000,
        }
    }
}

impl SimConfig {
    pub fn with_protections(mut self, on: bool) -> Self {
        self.protections = on;
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.mem_size < (1 << 20) || !self.mem_size.is_power_of_two() {
            return Err(format!(
                "memory size must be a power of two >= 1 MiB, got {:#x}",
                self.mem_size
            ));
        }
        if self.num_shared_regs == 0 || self.num_shared_regs > 256 {
            return Err("shared register count must be in 1..=256".into());
        }
        if !self.a_fixed.is_multiple_of(WORD_BYTES) {
            return Err("a_fixed must be 8-byte aligned".into());
        }
        if self.peripheral_pages.contains(&(self.a_fixed / PAGE_SIZE)) {
            return Err("a_fixed must not point into a peripheral page".into());
        }
        Ok(())
    }
}
