//! Instruction-level simulator of a trusted-execution architecture that
//! tracks sensitive data in hardware: per-word taints in shadow memory,
//! ownership-table page isolation, EID-stamped shared registers, and
//! declassification gated on a cumulative hash over committed control flow.
//!
//! The crate bundles:
//! - the machine itself ([`machine::Simulator`]): fetch/decode/execute with
//!   taint propagation and the boundary checks applied on every access;
//! - the trusted monitor ([`monitor`]): image verification, enclave
//!   lifecycle, context scrubbing, taint placement on page faults;
//! - the build toolchain ([`binprep`]): assembler, control-flow graph,
//!   static enumeration of authorized declassification paths, and the
//!   MAC-protected image container;
//! - a scenario harness ([`harness`]): the attack-vector suite, a sensor
//!   pipeline case study, and a differential noninterference oracle.

pub mod binprep;
pub mod config;
pub mod declass;
pub mod dift;
pub mod harness;
pub mod isa;
pub mod machine;
pub mod mem;
pub mod monitor;
pub mod trace;

pub use config::{LayoutConfig, SimConfig};
pub use machine::{Mode, Poke, Simulator, StepOutcome, TrapKind};
pub use trace::{RunOutcome, RunReport, ViolationKind};
