//! The simulator core: machine state, the fetch-decode-execute loop, and
//! run orchestration.
//!
//! One `Simulator` is one confined instance: machine state, physical memory,
//! page tables, and the monitor share no state with any other instance, so
//! harness code may run instances in parallel freely.

use std::collections::{BTreeMap, BTreeSet};

use sha2::{Digest, Sha256};

use crate::binprep::Program;
use crate::config::{SimConfig, PAGE_SIZE, WORD_BYTES};
use crate::declass::{DeclassState, EdgeKind, HashValue};
use crate::dift::{
    check_address, check_store, propagate, read_shared, write_shared, AddressCheck, PropFormat,
    SharedRead, SharedRegister, StoreCheck, TaintedWord,
};
use crate::isa::{Instruction, Opcode, INSTR_BYTES, NUM_REGS, REG_A0, REG_A1, REG_A7};
use crate::mem::{PageTable, PhysicalMemory};
use crate::monitor::{EcallError, HostContext, LoadError, SecurityMonitor};
use crate::trace::{
    AccessKind, Counters, RunOutcome, RunReport, SessionDigest, TraceEvent, Violation,
    ViolationKind,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Host,
    Enclave,
}

/// Architectural machine state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MachineState {
    pub pc: u64,
    pub regs: [TaintedWord; NUM_REGS],
    pub mode: Mode,
    pub curr_eid: u64,
    pub shared_regs: Vec<SharedRegister>,
    pub hash: DeclassState,
    pub cycle: u64,
}

impl MachineState {
    fn new(num_shared: usize) -> Self {
        MachineState {
            pc: 0,
            regs: [TaintedWord::ZERO; NUM_REGS],
            mode: Mode::Host,
            curr_eid: 0,
            shared_regs: vec![SharedRegister::default(); num_shared],
            hash: DeclassState::new(),
            cycle: 0,
        }
    }
}

/// Reasons a step can abort the run. Page faults are serviced internally
/// and never surface here.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrapKind {
    UndecodableInstruction(u64),
    OwnershipViolation(u64),
    MisalignedAccess(u64),
    ShadowRegionAccess(u64),
    IllegalEcall(u64),
    NoSuchEnclave(u64),
    NothingToResume,
    BufferOutOfEnclave,
    LengthExceeded,
    OutOfPhysicalMemory,
    HaltInEnclave,
    NoInterruptHandler,
    BadSharedRegister(u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Continue,
    Halted,
    Trap(TrapKind),
}

/// Out-of-band memory write simulating an in-enclave memory corruption:
/// when the machine is about to execute `at_pc` for the `occurrence`-th
/// time, `value` is written (untainted) at `vaddr` in the current context.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Poke {
    pub at_pc: u64,
    pub occurrence: u32,
    pub vaddr: u64,
    pub value: u64,
}

#[derive(Debug, Clone)]
struct PokeState {
    poke: Poke,
    hits: u32,
}

enum Flow {
    Normal,
    Halted,
}

/// One confined simulation instance.
#[derive(Debug)]
pub struct Simulator {
    pub cfg: SimConfig,
    pub state: MachineState,
    pub mem: PhysicalMemory,
    pub sm: SecurityMonitor,
    pub(crate) page_tables: BTreeMap<u64, PageTable>,
    pub(crate) shared_frames: BTreeMap<u64, u64>,
    pub(crate) host_prog: Option<Program>,
    pub(crate) host_ctx: Option<HostContext>,
    registered_images: Vec<Vec<u8>>,
    pub counters: Counters,
    pub trace: Vec<TraceEvent>,
    pub(crate) violations: Vec<Violation>,
    pub(crate) session_digests: Vec<SessionDigest>,
    pub(crate) non_enclave_accesses: Vec<(u64, AccessKind, u64)>,
    pokes: Vec<PokeState>,
    interrupts: BTreeSet<u64>,
    pub last_create_error: Option<LoadError>,
}

impl Simulator {
    pub fn new(cfg: SimConfig, key: crate::binprep::MacKey) -> Self {
        cfg.validate().expect("invalid simulator configuration");
        let mem = PhysicalMemory::new(cfg.mem_size);
        let mut sim = Simulator {
            state: MachineState::new(cfg.num_shared_regs),
            mem,
            sm: SecurityMonitor::new(key),
            page_tables: BTreeMap::new(),
            shared_frames: BTreeMap::new(),
            host_prog: None,
            host_ctx: None,
            registered_images: Vec::new(),
            counters: Counters::default(),
            trace: Vec::new(),
            violations: Vec::new(),
            session_digests: Vec::new(),
            non_enclave_accesses: Vec::new(),
            pokes: Vec::new(),
            interrupts: BTreeSet::new(),
            last_create_error: None,
            cfg,
        };
        // peripheral frames exist from boot and are never owned
        for vpage in sim.cfg.peripheral_pages.clone() {
            sim.ensure_shared_frame(vpage).expect("peripheral frame");
        }
        sim
    }

    /// Install the host program and point the machine at its entry.
    pub fn load_host_program(&mut self, prog: Program) {
        assert!(
            prog.sensitive.is_empty(),
            "host programs cannot carry a sensitive section"
        );
        self.state.pc = prog.entry;
        self.host_prog = Some(prog);
    }

    /// Hand an image to the OS role; the host creates enclaves from it by
    /// index via the create ECALL.
    pub fn register_image(&mut self, bytes: Vec<u8>) -> u64 {
        self.registered_images.push(bytes);
        (self.registered_images.len() - 1) as u64
    }

    pub fn add_poke(&mut self, poke: Poke) {
        self.pokes.push(PokeState { poke, hits: 0 });
    }

    /// Deliver a hardware interrupt at the start of the given step (0-based).
    /// Interrupts arriving while the host runs are dropped.
    pub fn schedule_interrupt(&mut self, step: u64) {
        self.interrupts.insert(step);
    }

    /// Attack/test hook: a malicious OS maps an arbitrary frame into a
    /// context's page table. The ownership table still guards every access.
    pub fn map_foreign(&mut self, ctx: u64, vpage: u64, ppage: u64) {
        self.page_tables
            .entry(ctx)
            .or_default()
            .map_page(vpage, ppage);
    }

    fn ctx_id(&self) -> u64 {
        match self.state.mode {
            Mode::Host => 0,
            Mode::Enclave => self.state.curr_eid,
        }
    }

    fn reg(&self, i: u8) -> TaintedWord {
        self.state.regs[i as usize]
    }

    fn set_reg(&mut self, i: u8, word: TaintedWord) {
        if i != 0 {
            self.state.regs[i as usize] = word;
        }
    }

    pub(crate) fn log_violation(&mut self, kind: ViolationKind, address: u64) {
        let v = Violation {
            cycle: self.state.cycle,
            kind,
            pc: self.state.pc,
            address,
            eid: self.state.curr_eid,
        };
        self.violations.push(v);
        self.trace.push(TraceEvent::Violation(v));
    }

    /// Translate, servicing page faults through the monitor path.
    pub(crate) fn translate_or_fault(&mut self, ctx: u64, vaddr: u64) -> Result<u64, TrapKind> {
        loop {
            if let Some(paddr) = self
                .page_tables
                .get(&ctx)
                .and_then(|pt| pt.translate(vaddr))
            {
                return Ok(paddr);
            }
            self.on_page_fault(ctx, vaddr)?;
        }
    }

    /// Translate without allocating. For inspection only.
    pub fn try_translate(&self, ctx: u64, vaddr: u64) -> Option<u64> {
        self.page_tables
            .get(&ctx)
            .and_then(|pt| pt.translate(vaddr))
    }

    /// Read a mapped word in a context, for assertions and reporting.
    pub fn read_vaddr(&self, ctx: u64, vaddr: u64) -> Option<u64> {
        let paddr = self.try_translate(ctx, vaddr)?;
        self.mem.read_word_raw(paddr).ok()
    }

    /// Number of enclave sessions that have exited so far.
    pub fn session_count(&self) -> usize {
        self.session_digests.len()
    }

    /// Chain digest of the most recently exited enclave session.
    pub fn last_session_digest(&self) -> Option<HashValue> {
        self.session_digests.last().map(|s| s.digest)
    }

    /// Read a word from the shared (unowned) address space, regardless of
    /// which context faulted it in.
    pub fn read_shared_word(&self, vaddr: u64) -> Option<u64> {
        let ppage = self.shared_frames.get(&(vaddr / PAGE_SIZE))?;
        self.mem
            .read_word_raw(ppage * PAGE_SIZE + vaddr % PAGE_SIZE)
            .ok()
    }

    fn fetch(&mut self, pc: u64) -> Result<Instruction, TrapKind> {
        let ctx = self.ctx_id();
        let paddr = self.translate_or_fault(ctx, pc)?;
        if paddr >= self.mem.shadow_base {
            return Err(TrapKind::ShadowRegionAccess(pc));
        }
        if !self.mem.ot.check_access(paddr, self.state.curr_eid) {
            return Err(TrapKind::OwnershipViolation(pc));
        }
        let instr = if ctx == 0 {
            self.host_prog.as_ref().and_then(|p| p.instruction_at(pc))
        } else {
            self.sm.enclaves[&ctx].instruction_at(pc)
        };
        instr.copied().ok_or(TrapKind::UndecodableInstruction(pc))
    }

    /// Effective-address resolution shared by loads and stores: alignment,
    /// the tainted-address redirect, translation, the ownership check, and
    /// access accounting. Returns (paddr, final vaddr, owned-by-current-
    /// enclave).
    ///
    /// The redirect is decided from the virtual address alone (whether it
    /// falls in the enclave's own range), before any translation: a page
    /// walk at a secret-derived address would itself hand the OS an
    /// observable fault.
    fn resolve_data_addr(
        &mut self,
        ea: u64,
        addr_taint: bool,
        kind: AccessKind,
    ) -> Result<(u64, u64, bool), TrapKind> {
        if !ea.is_multiple_of(WORD_BYTES) {
            return Err(TrapKind::MisalignedAccess(ea));
        }
        let ctx = self.ctx_id();
        let eid = self.state.curr_eid;
        let mut vaddr = ea;

        if self.state.mode == Mode::Enclave && self.cfg.protections {
            let in_own_range = self.sm.enclaves[&eid].owns_vaddr(vaddr);
            let probe = TaintedWord::new(vaddr, addr_taint);
            if let AddressCheck::Redirect(a_fixed) =
                check_address(probe, in_own_range, self.cfg.a_fixed)
            {
                // the logged address is the post-redirect one, keeping the
                // event stream independent of the secret-derived address
                self.log_violation(ViolationKind::RedirectedAccess, a_fixed);
                vaddr = a_fixed;
            }
        }

        let paddr = self.translate_or_fault(ctx, vaddr)?;
        if paddr >= self.mem.shadow_base {
            return Err(TrapKind::ShadowRegionAccess(vaddr));
        }
        let owned = self.state.mode == Mode::Enclave && self.mem.ot.owner(paddr / PAGE_SIZE) == eid;

        if !self.mem.ot.check_access(paddr, eid) {
            return Err(TrapKind::OwnershipViolation(vaddr));
        }

        match kind {
            AccessKind::Load => {
                self.counters.data_loads += 1;
                if self.state.mode == Mode::Enclave {
                    self.counters.enclave_data_loads += 1;
                    self.counters.shadow_accesses += 1;
                }
            }
            AccessKind::Store => {
                self.counters.data_stores += 1;
                if self.state.mode == Mode::Enclave {
                    self.counters.enclave_data_stores += 1;
                    self.counters.shadow_accesses += 1;
                }
            }
        }
        let owner = self.mem.ot.owner(paddr / PAGE_SIZE);
        if owner == 0 || owner != eid {
            let vpage = vaddr / PAGE_SIZE;
            self.non_enclave_accesses.push((vpage, kind, eid));
            self.trace.push(TraceEvent::NonEnclaveAccess {
                cycle: self.state.cycle,
                vpage,
                kind,
                eid,
            });
        }
        Ok((paddr, vaddr, owned))
    }

    fn exec_load(&mut self, instr: &Instruction) -> Result<(), TrapKind> {
        let base = self.reg(instr.rs1);
        let ea = base.value.wrapping_add(instr.imm as u64);
        let (paddr, _, _) = self.resolve_data_addr(ea, base.taint, AccessKind::Load)?;
        let value = self.mem.read_word_raw(paddr).expect("guarded load");
        let shadow_t = if self.state.mode == Mode::Enclave {
            self.mem
                .read_shadow_bit(paddr)
                .expect("guarded shadow read")
        } else {
            false
        };
        let taint = propagate(
            PropFormat::Load,
            base.taint,
            false,
            shadow_t,
            self.cfg.taint_rule,
        );
        self.set_reg(instr.rd, TaintedWord::new(value, taint));
        Ok(())
    }

    fn exec_store(&mut self, instr: &Instruction) -> Result<(), TrapKind> {
        let base = self.reg(instr.rs1);
        let ea = base.value.wrapping_add(instr.imm as u64);
        let value = self.reg(instr.rs2);
        let (paddr, vaddr, owned) = self.resolve_data_addr(ea, base.taint, AccessKind::Store)?;

        if self.state.mode == Mode::Host {
            // host registers carry no taints; shadow memory is untouched
            self.mem
                .write_word_raw(paddr, value.value)
                .expect("guarded store");
            return Ok(());
        }

        let decision = if self.cfg.protections {
            let matched = if value.taint && !owned {
                let eid = self.state.curr_eid;
                self.state
                    .hash
                    .matches_adp(&self.sm.enclaves[&eid].hash_buf)
            } else {
                false
            };
            check_store(owned, value.taint, matched)
        } else {
            StoreCheck::Commit
        };

        match decision {
            StoreCheck::Commit => {
                let shadow = propagate(
                    PropFormat::Store,
                    value.taint,
                    false,
                    false,
                    self.cfg.taint_rule,
                );
                self.mem
                    .write_word_raw(paddr, value.value)
                    .expect("guarded store");
                self.mem
                    .write_shadow_bit(paddr, shadow)
                    .expect("guarded shadow write");
            }
            StoreCheck::CommitDeclassified => {
                self.mem
                    .write_word_raw(paddr, value.value)
                    .expect("guarded store");
                self.mem
                    .write_shadow_bit(paddr, false)
                    .expect("guarded shadow write");
                self.set_reg(instr.rs2, TaintedWord::clean(value.value));
                self.counters.declass_matches += 1;
                self.trace.push(TraceEvent::Declassified {
                    cycle: self.state.cycle,
                    pc: self.state.pc,
                    address: vaddr,
                    eid: self.state.curr_eid,
                });
            }
            StoreCheck::Zeroize => {
                self.mem.write_word_raw(paddr, 0).expect("guarded store");
                self.mem
                    .write_shadow_bit(paddr, false)
                    .expect("guarded shadow write");
                self.set_reg(instr.rs2, TaintedWord::ZERO);
                self.log_violation(ViolationKind::ZeroizedStore, vaddr);
            }
        }
        Ok(())
    }

    /// Commit a taken control transfer: counters, loop classification, and
    /// the hash engine update.
    fn commit_transfer(&mut self, source: u64, target: u64, conditional: bool) {
        if self.state.mode != Mode::Enclave {
            return;
        }
        self.counters.taken_enclave_transfers += 1;
        let kind = if conditional {
            if target < source {
                EdgeKind::BackwardBranch
            } else {
                EdgeKind::ForwardBranchTaken
            }
        } else {
            EdgeKind::Jump
        };
        if self.state.hash.on_control_flow(source, target, kind) {
            self.counters.hash_updates += 1;
            let digest = self.state.hash.h_current();
            self.trace.push(TraceEvent::HashUpdate {
                cycle: self.state.cycle,
                source,
                target,
                digest_prefix: digest[..8].try_into().unwrap(),
            });
        } else {
            self.counters.suppressed_loop_hashes += 1;
        }
    }

    fn exec_ecall(&mut self) -> Result<(), TrapKind> {
        let number = self.reg(REG_A7 as u8).value;
        let a0 = self.reg(REG_A0 as u8).value;
        let a1 = self.reg(REG_A1 as u8).value;
        match (self.state.mode, number) {
            (Mode::Host, 1) => {
                // create: a0 = registered image index; a0 <- EID or 0
                let Some(bytes) = self.registered_images.get(a0 as usize).cloned() else {
                    return Err(TrapKind::IllegalEcall(number));
                };
                let eid = match self.sm.verify_image(&bytes) {
                    Ok(prog) => match self.ecreate(prog) {
                        Ok(eid) => eid,
                        Err(_) => {
                            self.trace.push(TraceEvent::ContextSwitch {
                                cycle: self.state.cycle,
                                what: "ecreate-abort",
                                eid: 0,
                            });
                            0
                        }
                    },
                    Err(e) => {
                        self.last_create_error = Some(e);
                        self.trace.push(TraceEvent::ContextSwitch {
                            cycle: self.state.cycle,
                            what: "ecreate-abort",
                            eid: 0,
                        });
                        0
                    }
                };
                self.set_reg(REG_A0 as u8, TaintedWord::clean(eid));
                self.state.pc += INSTR_BYTES;
                Ok(())
            }
            (Mode::Host, 2) => match self.eenter(a0) {
                Ok(()) => Ok(()),
                Err(EcallError::NoSuchEnclave(e)) => Err(TrapKind::NoSuchEnclave(e)),
                Err(_) => Err(TrapKind::IllegalEcall(number)),
            },
            (Mode::Enclave, 3) => {
                self.eexit();
                Ok(())
            }
            (Mode::Enclave, 4) => match self.ocall(a0, a1) {
                Ok(()) => Ok(()),
                Err(EcallError::BufferOutOfEnclave) => Err(TrapKind::BufferOutOfEnclave),
                Err(EcallError::LengthExceeded) => Err(TrapKind::LengthExceeded),
                Err(_) => Err(TrapKind::IllegalEcall(number)),
            },
            (Mode::Host, 5) => match self.resume(a0) {
                Ok(()) => Ok(()),
                Err(EcallError::NoSuchEnclave(e)) => Err(TrapKind::NoSuchEnclave(e)),
                Err(_) => Err(TrapKind::NothingToResume),
            },
            (Mode::Host, 6) => match self.oreturn(a0) {
                Ok(()) => Ok(()),
                Err(EcallError::NoSuchEnclave(e)) => Err(TrapKind::NoSuchEnclave(e)),
                Err(EcallError::NothingToResume) => Err(TrapKind::NothingToResume),
                Err(_) => Err(TrapKind::BufferOutOfEnclave),
            },
            _ => Err(TrapKind::IllegalEcall(number)),
        }
    }

    fn exec_one(&mut self) -> Result<Flow, TrapKind> {
        let pc = self.state.pc;
        let instr = self.fetch(pc)?;
        use Opcode::*;
        match instr.opcode {
            Add | Sub | And | Or | Xor | Sll | Srl => {
                let a = self.reg(instr.rs1);
                let b = self.reg(instr.rs2);
                let value = match instr.opcode {
                    Add => a.value.wrapping_add(b.value),
                    Sub => a.value.wrapping_sub(b.value),
                    And => a.value & b.value,
                    Or => a.value | b.value,
                    Xor => a.value ^ b.value,
                    Sll => a.value.wrapping_shl((b.value & 63) as u32),
                    Srl => a.value.wrapping_shr((b.value & 63) as u32),
                    _ => unreachable!(),
                };
                let taint = if self.state.mode == Mode::Enclave {
                    propagate(
                        PropFormat::RegReg,
                        a.taint,
                        b.taint,
                        false,
                        self.cfg.taint_rule,
                    )
                } else {
                    false
                };
                self.set_reg(instr.rd, TaintedWord::new(value, taint));
                self.state.pc += INSTR_BYTES;
            }
            Addi => {
                let a = self.reg(instr.rs1);
                let value = a.value.wrapping_add(instr.imm as u64);
                let taint = if self.state.mode == Mode::Enclave {
                    propagate(
                        PropFormat::RegImm,
                        a.taint,
                        false,
                        false,
                        self.cfg.taint_rule,
                    )
                } else {
                    false
                };
                self.set_reg(instr.rd, TaintedWord::new(value, taint));
                self.state.pc += INSTR_BYTES;
            }
            Ld => {
                self.exec_load(&instr)?;
                self.state.pc += INSTR_BYTES;
            }
            Sd => {
                self.exec_store(&instr)?;
                self.state.pc += INSTR_BYTES;
            }
            Beq | Bne | Blt => {
                let a = self.reg(instr.rs1);
                let b = self.reg(instr.rs2);
                if self.state.mode == Mode::Enclave && (a.taint || b.taint) {
                    self.trace.push(TraceEvent::TaintedBranch {
                        cycle: self.state.cycle,
                        pc,
                    });
                }
                let taken = match instr.opcode {
                    Beq => a.value == b.value,
                    Bne => a.value != b.value,
                    Blt => (a.value as i64) < (b.value as i64),
                    _ => unreachable!(),
                };
                if taken {
                    let target = instr.imm as u64;
                    self.commit_transfer(pc, target, true);
                    self.state.pc = target;
                } else {
                    self.state.pc += INSTR_BYTES;
                }
            }
            Jal => {
                let target = instr.imm as u64;
                self.set_reg(instr.rd, TaintedWord::clean(pc + INSTR_BYTES));
                self.commit_transfer(pc, target, false);
                self.state.pc = target;
            }
            Jalr => {
                let base = self.reg(instr.rs1);
                let target = base.value.wrapping_add(instr.imm as u64);
                self.set_reg(instr.rd, TaintedWord::clean(pc + INSTR_BYTES));
                self.commit_transfer(pc, target, false);
                self.state.pc = target;
            }
            Movsr => {
                if instr.sr as usize >= self.state.shared_regs.len() {
                    return Err(TrapKind::BadSharedRegister(instr.sr));
                }
                let word = self.reg(instr.rs1);
                let eid = if self.state.mode == Mode::Enclave {
                    self.state.curr_eid
                } else {
                    0
                };
                write_shared(&mut self.state.shared_regs[instr.sr as usize], word, eid);
                self.state.pc += INSTR_BYTES;
            }
            Movrs => {
                if instr.sr as usize >= self.state.shared_regs.len() {
                    return Err(TrapKind::BadSharedRegister(instr.sr));
                }
                let eid = if self.state.mode == Mode::Enclave {
                    self.state.curr_eid
                } else {
                    0
                };
                let result = read_shared(
                    &mut self.state.shared_regs[instr.sr as usize],
                    eid,
                    self.cfg.protections,
                );
                match result {
                    SharedRead::Allowed(word) => self.set_reg(instr.rd, word),
                    SharedRead::Denied => {
                        self.set_reg(instr.rd, TaintedWord::ZERO);
                        self.log_violation(ViolationKind::DeniedSharedRead, instr.sr as u64);
                    }
                }
                self.state.pc += INSTR_BYTES;
            }
            Ecall => {
                self.exec_ecall()?;
            }
            Halt => {
                if self.state.mode == Mode::Enclave {
                    return Err(TrapKind::HaltInEnclave);
                }
                return Ok(Flow::Halted);
            }
        }
        Ok(Flow::Normal)
    }

    /// Execute one step: either an interrupt delivery (asynchronous exit,
    /// no instruction retires) or one instruction, preceded by any pending
    /// pokes.
    pub fn step(&mut self) -> StepOutcome {
        if self.interrupts.remove(&self.counters.steps) && self.state.mode == Mode::Enclave {
            let delivered = self.aex();
            self.state.cycle += 1;
            self.counters.steps += 1;
            return match delivered {
                Ok(()) => StepOutcome::Continue,
                Err(kind) => StepOutcome::Trap(kind),
            };
        }

        let pc = self.state.pc;
        let ctx = self.ctx_id();
        for i in 0..self.pokes.len() {
            if self.pokes[i].poke.at_pc == pc {
                self.pokes[i].hits += 1;
                if self.pokes[i].hits == self.pokes[i].poke.occurrence {
                    let poke = self.pokes[i].poke;
                    match self.translate_or_fault(ctx, poke.vaddr) {
                        Ok(paddr) => {
                            self.mem
                                .write_word_raw(paddr, poke.value)
                                .expect("poke write");
                            self.mem.write_shadow_bit(paddr, false).expect("poke taint");
                        }
                        Err(kind) => return StepOutcome::Trap(kind),
                    }
                }
            }
        }

        let result = self.exec_one();
        self.state.cycle += 1;
        self.counters.steps += 1;
        debug_assert_eq!(self.state.regs[0], TaintedWord::ZERO);
        debug_assert!(
            (self.state.mode == Mode::Host) == (self.state.curr_eid == 0),
            "mode/eid invariant"
        );
        match result {
            Ok(Flow::Normal) => StepOutcome::Continue,
            Ok(Flow::Halted) => StepOutcome::Halted,
            Err(kind) => StepOutcome::Trap(kind),
        }
    }

    /// Run until HALT, an unrecoverable trap, or the step budget.
    pub fn run(&mut self, max_steps: u64) -> RunReport {
        assert!(max_steps > 0);
        let mut outcome = RunOutcome::StepBudgetExceeded;
        for _ in 0..max_steps {
            match self.step() {
                StepOutcome::Continue => {}
                StepOutcome::Halted => {
                    outcome = RunOutcome::Halted;
                    break;
                }
                StepOutcome::Trap(kind) => {
                    outcome = RunOutcome::Trapped(kind);
                    break;
                }
            }
        }
        self.collect_report(outcome)
    }

    /// Contents of every unowned (shared) page, keyed by virtual page.
    pub fn non_enclave_pages(&self) -> BTreeMap<u64, Vec<u64>> {
        let mut out = BTreeMap::new();
        for (&vpage, &ppage) in &self.shared_frames {
            let mut words = Vec::with_capacity((PAGE_SIZE / WORD_BYTES) as usize);
            for w in 0..PAGE_SIZE / WORD_BYTES {
                words.push(
                    self.mem
                        .read_word_raw(ppage * PAGE_SIZE + w * WORD_BYTES)
                        .expect("shared page word"),
                );
            }
            out.insert(vpage, words);
        }
        out
    }

    /// Assemble the report for a run that ended with `outcome`. Used by
    /// `run` and by harness code that drives `step` manually.
    pub fn collect_report(&mut self, outcome: RunOutcome) -> RunReport {
        debug_assert!(self.counters.identities_hold(), "counter identities");

        let pages = self.non_enclave_pages();
        let mut h = Sha256::new();
        for (vpage, words) in &pages {
            h.update(vpage.to_be_bytes());
            for w in words {
                h.update(w.to_le_bytes());
            }
        }
        let non_enclave_digest: HashValue = h.finalize().into();

        let mut host_shared_reads = Vec::with_capacity(self.state.shared_regs.len());
        for i in 0..self.state.shared_regs.len() {
            let value = match read_shared(&mut self.state.shared_regs[i], 0, self.cfg.protections) {
                SharedRead::Allowed(word) => word.value,
                SharedRead::Denied => 0,
            };
            host_shared_reads.push(value);
        }

        let mut h = Sha256::new();
        h.update(self.state.pc.to_le_bytes());
        h.update(self.state.curr_eid.to_le_bytes());
        h.update([matches!(self.state.mode, Mode::Enclave) as u8]);
        for r in &self.state.regs {
            h.update(r.value.to_le_bytes());
            h.update([r.taint as u8]);
        }
        for sr in &self.state.shared_regs {
            h.update(sr.value.to_le_bytes());
            h.update(sr.owner.to_le_bytes());
        }
        h.update(self.state.hash.h_current());
        let state_digest: HashValue = h.finalize().into();

        RunReport {
            outcome,
            counters: self.counters,
            violations: self.violations.clone(),
            trace: self.trace.clone(),
            session_digests: self.session_digests.clone(),
            non_enclave_accesses: self.non_enclave_accesses.clone(),
            non_enclave_digest,
            state_digest,
            host_shared_reads,
        }
    }
}
