//! Trusted monitor layer: image verification, enclave records, the
//! lifecycle transitions (create/enter/exit/ocall/async-exit/resume), and
//! taint placement on page faults.
//!
//! Monitor handlers run as native code inside the simulator, mirroring the
//! trust split: the monitor is trusted, the simulated OS role is not. The
//! taint and hash buffers extracted from a verified image live only in
//! monitor-private storage and are never mapped into any page table.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::binprep::{
    ImageError, MacKey, ProgramImage, SEC_DATA, SEC_HASHES, SEC_MAC, SEC_SENSITIVE, SEC_TAINTS,
};
use crate::config::{LayoutConfig, PAGE_SIZE, WORD_BYTES};
use crate::declass::{AdpHashSet, LifecycleEvent};
use crate::dift::TaintedWord;
use crate::isa::{Instruction, INSTR_BYTES, NUM_REGS, REG_A0, REG_A1, REG_A2, REG_A7};
use crate::machine::{Mode, Simulator, TrapKind};
use crate::mem::PageBacking;
use crate::trace::TraceEvent;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LoadError {
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("missing or empty section {0}")]
    MissingSection(&'static str),
    #[error("MAC mismatch on section {0}")]
    MacMismatch(&'static str),
    #[error("taint bitmap covers {bitmap_bits} words but the sensitive section has {words}")]
    TaintSizeMismatch { words: u64, bitmap_bits: u64 },
    #[error("section layout is not page aligned or overlaps")]
    BadLayout,
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum EcallError {
    #[error("enclave cap reached")]
    TooManyEnclaves,
    #[error("a suspended enclave session holds the hash engine")]
    EngineBusy,
    #[error("no enclave with EID {0}")]
    NoSuchEnclave(u64),
    #[error("nothing to resume")]
    NothingToResume,
    #[error("ocall buffer outside enclave memory")]
    BufferOutOfEnclave,
    #[error("ocall length exceeds the configured maximum")]
    LengthExceeded,
    #[error("image layout collides with reserved pages")]
    LayoutConflict,
}

/// An image whose protected sections passed MAC verification.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerifiedProgram {
    pub entry_point: u64,
    pub layout: LayoutConfig,
    pub text: Vec<Instruction>,
    pub data: Vec<u8>,
    pub sensitive: Vec<u8>,
    pub taint_buf: Vec<u8>,
    pub hash_buf: AdpHashSet,
}

/// Saved enclave execution context.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SavedContext {
    pub regs: [TaintedWord; NUM_REGS],
    pub pc: u64,
    pub kind: SavedBy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SavedBy {
    Aex,
    Ocall { buf_vaddr: u64, len: u64 },
}

/// Host context snapshot taken at enclave entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HostContext {
    pub regs: [TaintedWord; NUM_REGS],
    pub pc: u64,
}

/// Monitor-private record of one live enclave.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnclaveRecord {
    pub eid: u64,
    pub entry_point: u64,
    pub layout: LayoutConfig,
    pub text: Vec<Instruction>,
    pub data: Vec<u8>,
    pub sensitive: Vec<u8>,
    pub taint_buf: Vec<u8>,
    pub hash_buf: AdpHashSet,
    /// Virtual byte range of the sensitive section.
    pub d_star_range: (u64, u64),
    /// Page-rounded private virtual range; faults inside it allocate
    /// enclave-owned frames, faults outside map shared frames.
    pub span: (u64, u64),
    pub saved_ctx: Option<SavedContext>,
    pub host_resume_pc: u64,
    pub staging_vaddr: u64,
}

impl EnclaveRecord {
    pub fn owns_vaddr(&self, vaddr: u64) -> bool {
        vaddr >= self.span.0 && vaddr < self.span.1
    }

    pub fn instruction_at(&self, vaddr: u64) -> Option<&Instruction> {
        if vaddr < self.layout.text_base || !vaddr.is_multiple_of(INSTR_BYTES) {
            return None;
        }
        self.text
            .get(((vaddr - self.layout.text_base) / INSTR_BYTES) as usize)
    }
}

/// The trusted monitor: verification key plus the enclave table.
#[derive(Debug, Clone)]
pub struct SecurityMonitor {
    key: MacKey,
    pub enclaves: BTreeMap<u64, EnclaveRecord>,
    next_eid: u64,
}

impl SecurityMonitor {
    pub fn new(key: MacKey) -> Self {
        SecurityMonitor {
            key,
            enclaves: BTreeMap::new(),
            next_eid: 1,
        }
    }

    /// Parse an image and verify the MACs over the taint and hash sections.
    /// Creation must be refused outright when either section is absent or
    /// empty, so a stripped image cannot degrade into an untracked enclave.
    pub fn verify_image(&self, bytes: &[u8]) -> Result<VerifiedProgram, LoadError> {
        let img = ProgramImage::parse(bytes)?;

        let taints = img.section(SEC_TAINTS).unwrap_or(&[]);
        if taints.is_empty() {
            return Err(LoadError::MissingSection(SEC_TAINTS));
        }
        let hashes = img.section(SEC_HASHES).unwrap_or(&[]);
        if hashes.is_empty() {
            return Err(LoadError::MissingSection(SEC_HASHES));
        }
        let mac = img.section(SEC_MAC).unwrap_or(&[]);
        if mac.len() != 64 {
            return Err(LoadError::MissingSection(SEC_MAC));
        }
        if mac[..32] != crate::binprep::section_mac(&self.key, taints) {
            return Err(LoadError::MacMismatch(SEC_TAINTS));
        }
        if mac[32..] != crate::binprep::section_mac(&self.key, hashes) {
            return Err(LoadError::MacMismatch(SEC_HASHES));
        }

        let layout = img.layout()?;
        if layout.text_base % PAGE_SIZE != 0
            || layout.data_base % PAGE_SIZE != 0
            || layout.sensitive_base % PAGE_SIZE != 0
        {
            return Err(LoadError::BadLayout);
        }
        let text = img.decode_text()?;
        let data = img.section(SEC_DATA).unwrap_or(&[]).to_vec();
        let sensitive = img.section(SEC_SENSITIVE).unwrap_or(&[]).to_vec();
        let words = (sensitive.len() as u64) / WORD_BYTES;
        let bitmap_capacity = taints.len() as u64 * 8;
        if words.div_ceil(8) * 8 != bitmap_capacity {
            return Err(LoadError::TaintSizeMismatch {
                words,
                bitmap_bits: bitmap_capacity,
            });
        }

        // sections must not collide once page-rounded
        let ranges = [
            (layout.text_base, text.len() as u64 * INSTR_BYTES),
            (layout.data_base, data.len() as u64),
            (layout.sensitive_base, sensitive.len() as u64),
        ];
        for (i, &(a, alen)) in ranges.iter().enumerate() {
            for &(b, blen) in &ranges[i + 1..] {
                let a_end = (a + alen).div_ceil(PAGE_SIZE) * PAGE_SIZE;
                let b_end = (b + blen).div_ceil(PAGE_SIZE) * PAGE_SIZE;
                if a < b_end && b < a_end {
                    return Err(LoadError::BadLayout);
                }
            }
        }

        Ok(VerifiedProgram {
            entry_point: img.entry_point()?,
            layout,
            text,
            data,
            sensitive,
            taint_buf: taints.to_vec(),
            hash_buf: img.adp_hashes()?,
        })
    }

    pub fn fresh_eid(&mut self) -> u64 {
        let eid = self.next_eid;
        self.next_eid += 1;
        eid
    }
}

impl Simulator {
    /// ECREATE: register a verified program as a new enclave. Pages are not
    /// allocated here; everything is faulted in lazily.
    pub fn ecreate(&mut self, prog: VerifiedProgram) -> Result<u64, EcallError> {
        if self.sm.enclaves.len() >= self.cfg.max_enclaves {
            return Err(EcallError::TooManyEnclaves);
        }
        let span_lo = prog
            .layout
            .text_base
            .min(prog.layout.data_base)
            .min(prog.layout.sensitive_base);
        let ends = [
            prog.layout.text_base + prog.text.len() as u64 * INSTR_BYTES,
            prog.layout.data_base + prog.data.len() as u64,
            prog.layout.sensitive_base + prog.sensitive.len() as u64,
        ];
        let span_hi = ends.iter().copied().max().unwrap().div_ceil(PAGE_SIZE) * PAGE_SIZE;
        let span = (span_lo, span_hi);

        // the fixed redirect target, peripherals, and staging pages must
        // stay outside every enclave's private range
        let conflicts = |v: u64| v >= span.0 && v < span.1;
        if conflicts(self.cfg.a_fixed)
            || self
                .cfg
                .peripheral_pages
                .iter()
                .any(|&p| conflicts(p * PAGE_SIZE))
        {
            return Err(EcallError::LayoutConflict);
        }

        let eid = self.sm.fresh_eid();
        let staging_vaddr = self.cfg.staging_base + (eid - 1) * PAGE_SIZE;
        if conflicts(staging_vaddr) {
            return Err(EcallError::LayoutConflict);
        }
        self.ensure_shared_frame(staging_vaddr / PAGE_SIZE)
            .map_err(|_| EcallError::LayoutConflict)?;

        let d_star_range = (
            prog.layout.sensitive_base,
            prog.layout.sensitive_base + prog.sensitive.len() as u64,
        );
        self.sm.enclaves.insert(
            eid,
            EnclaveRecord {
                eid,
                entry_point: prog.entry_point,
                layout: prog.layout,
                text: prog.text,
                data: prog.data,
                sensitive: prog.sensitive,
                taint_buf: prog.taint_buf,
                hash_buf: prog.hash_buf,
                d_star_range,
                span,
                saved_ctx: None,
                host_resume_pc: 0,
                staging_vaddr,
            },
        );
        self.trace.push(TraceEvent::ContextSwitch {
            cycle: self.state.cycle,
            what: "ecreate",
            eid,
        });
        Ok(eid)
    }

    /// EENTER: save the host context and transfer to the enclave entry
    /// point with taint tracking and hashing enabled. Arguments a0..a2 pass
    /// through; all other registers start cleared.
    pub fn eenter(&mut self, eid: u64) -> Result<(), EcallError> {
        debug_assert_eq!(self.state.mode, Mode::Host);
        if !self.sm.enclaves.contains_key(&eid) {
            return Err(EcallError::NoSuchEnclave(eid));
        }
        // a suspended session (after an asynchronous exit or during an
        // ocall) still owns the hash engine; it must resume, not re-enter
        if self.state.hash.suspended() {
            return Err(EcallError::EngineBusy);
        }
        let resume_pc = self.state.pc + INSTR_BYTES;
        self.host_ctx = Some(HostContext {
            regs: self.state.regs,
            pc: resume_pc,
        });
        let rec = self.sm.enclaves.get_mut(&eid).unwrap();
        rec.host_resume_pc = resume_pc;
        let entry = rec.entry_point;

        let args = [
            self.state.regs[REG_A0],
            self.state.regs[REG_A1],
            self.state.regs[REG_A2],
        ];
        self.state.regs = [TaintedWord::ZERO; NUM_REGS];
        self.state.regs[REG_A0] = TaintedWord::clean(args[0].value);
        self.state.regs[REG_A1] = TaintedWord::clean(args[1].value);
        self.state.regs[REG_A2] = TaintedWord::clean(args[2].value);

        self.state.mode = Mode::Enclave;
        self.state.curr_eid = eid;
        self.state.pc = entry;
        self.state
            .hash
            .lifecycle(LifecycleEvent::Enter)
            .expect("hash engine idle at eenter");
        self.counters.context_switches += 1;
        self.trace.push(TraceEvent::ContextSwitch {
            cycle: self.state.cycle,
            what: "eenter",
            eid,
        });
        Ok(())
    }

    /// EEXIT: gate the designated return registers (a0, a1) through the
    /// declassification check, clear everything else, and return to the
    /// host. Register state after exit is all zeros except the gated
    /// returns; the host resumes at the instruction after its EENTER.
    pub fn eexit(&mut self) {
        debug_assert_eq!(self.state.mode, Mode::Enclave);
        let eid = self.state.curr_eid;
        let rec = &self.sm.enclaves[&eid];
        let resume_pc = rec.host_resume_pc;
        let hash_buf = rec.hash_buf.clone();

        self.session_digests.push(crate::trace::SessionDigest {
            eid,
            exit_cycle: self.state.cycle,
            digest: self.state.hash.h_current(),
        });

        let mut returns = [TaintedWord::ZERO; 2];
        for (slot, reg) in [(0, REG_A0), (1, REG_A1)] {
            let word = self.state.regs[reg];
            returns[slot] = if !word.taint || !self.cfg.protections {
                TaintedWord::clean(word.value)
            } else if self.state.hash.matches_adp(&hash_buf) {
                self.counters.declass_matches += 1;
                self.trace.push(TraceEvent::Declassified {
                    cycle: self.state.cycle,
                    pc: self.state.pc,
                    address: reg as u64,
                    eid,
                });
                TaintedWord::clean(word.value)
            } else {
                self.log_violation(crate::trace::ViolationKind::ZeroizedStore, reg as u64);
                TaintedWord::ZERO
            };
        }

        self.state.regs = [TaintedWord::ZERO; NUM_REGS];
        self.state.regs[REG_A0] = returns[0];
        self.state.regs[REG_A1] = returns[1];
        self.state.mode = Mode::Host;
        self.state.curr_eid = 0;
        self.state.pc = resume_pc;
        self.state
            .hash
            .lifecycle(LifecycleEvent::Exit)
            .expect("hash engine active at eexit");
        self.counters.context_switches += 1;
        self.trace.push(TraceEvent::ContextSwitch {
            cycle: self.state.cycle,
            what: "eexit",
            eid,
        });
    }

    /// OCALL: copy `len` bytes from an enclave-owned buffer to the
    /// unowned staging page, applying the store-side declassification gate
    /// word by word, then transfer to the host like an exit that can be
    /// resumed. The host sees a0 = staging address, a1 = length, a7 = 4.
    pub fn ocall(&mut self, buf_vaddr: u64, len: u64) -> Result<(), EcallError> {
        debug_assert_eq!(self.state.mode, Mode::Enclave);
        let eid = self.state.curr_eid;
        if len > self.cfg.ocall_max_len {
            return Err(EcallError::LengthExceeded);
        }
        if !buf_vaddr.is_multiple_of(WORD_BYTES) || !len.is_multiple_of(WORD_BYTES) {
            return Err(EcallError::BufferOutOfEnclave);
        }
        let rec = &self.sm.enclaves[&eid];
        if !(rec.owns_vaddr(buf_vaddr) && (len == 0 || rec.owns_vaddr(buf_vaddr + len - 1))) {
            return Err(EcallError::BufferOutOfEnclave);
        }
        let staging_vaddr = rec.staging_vaddr;
        let resume_pc = self.state.pc + INSTR_BYTES;
        let host_resume = rec.host_resume_pc;
        let matched = self.state.hash.matches_adp(&rec.hash_buf);

        for i in 0..len / WORD_BYTES {
            let src = buf_vaddr + i * WORD_BYTES;
            let paddr = self
                .translate_or_fault(eid, src)
                .map_err(|_| EcallError::BufferOutOfEnclave)?;
            if !self.mem.ot.check_access(paddr, eid) {
                return Err(EcallError::BufferOutOfEnclave);
            }
            let value = self.mem.read_word_raw(paddr).expect("ocall source word");
            let taint = self.mem.read_shadow_bit(paddr).expect("ocall source taint");
            let out = if !taint || !self.cfg.protections {
                value
            } else if matched {
                self.counters.declass_matches += 1;
                self.trace.push(TraceEvent::Declassified {
                    cycle: self.state.cycle,
                    pc: self.state.pc,
                    address: src,
                    eid,
                });
                value
            } else {
                self.log_violation(crate::trace::ViolationKind::ZeroizedStore, src);
                0
            };
            let dst = self
                .translate_or_fault(0, staging_vaddr + i * WORD_BYTES)
                .map_err(|_| EcallError::BufferOutOfEnclave)?;
            self.mem.write_word_raw(dst, out).expect("staging word");
        }

        let rec = self.sm.enclaves.get_mut(&eid).unwrap();
        rec.saved_ctx = Some(SavedContext {
            regs: self.state.regs,
            pc: resume_pc,
            kind: SavedBy::Ocall { buf_vaddr, len },
        });
        self.state.regs = [TaintedWord::ZERO; NUM_REGS];
        self.state.regs[REG_A0] = TaintedWord::clean(staging_vaddr);
        self.state.regs[REG_A1] = TaintedWord::clean(len);
        self.state.regs[REG_A7] = TaintedWord::clean(4);
        self.state.mode = Mode::Host;
        self.state.curr_eid = 0;
        self.state.pc = host_resume;
        self.state
            .hash
            .lifecycle(LifecycleEvent::Suspend)
            .expect("hash engine active at ocall");
        self.counters.context_switches += 1;
        self.trace.push(TraceEvent::ContextSwitch {
            cycle: self.state.cycle,
            what: "ocall",
            eid,
        });
        Ok(())
    }

    /// ORETURN: copy staged results back into the enclave buffer (marked
    /// untainted; the data originates outside the enclave) and resume after
    /// the OCALL.
    pub fn oreturn(&mut self, eid: u64) -> Result<(), EcallError> {
        debug_assert_eq!(self.state.mode, Mode::Host);
        let rec = self
            .sm
            .enclaves
            .get(&eid)
            .ok_or(EcallError::NoSuchEnclave(eid))?;
        let Some(saved) = rec.saved_ctx.clone() else {
            return Err(EcallError::NothingToResume);
        };
        let SavedBy::Ocall { buf_vaddr, len } = saved.kind else {
            return Err(EcallError::NothingToResume);
        };
        let staging_vaddr = rec.staging_vaddr;

        for i in 0..len / WORD_BYTES {
            let src = self
                .translate_or_fault(0, staging_vaddr + i * WORD_BYTES)
                .map_err(|_| EcallError::BufferOutOfEnclave)?;
            let value = self.mem.read_word_raw(src).expect("staging word");
            let dst = self
                .translate_or_fault(eid, buf_vaddr + i * WORD_BYTES)
                .map_err(|_| EcallError::BufferOutOfEnclave)?;
            self.mem
                .write_word_raw(dst, value)
                .expect("ocall result word");
            self.mem
                .write_shadow_bit(dst, false)
                .expect("ocall result taint");
        }

        self.sm.enclaves.get_mut(&eid).unwrap().saved_ctx = None;
        self.state.regs = saved.regs;
        self.state.pc = saved.pc;
        self.state.mode = Mode::Enclave;
        self.state.curr_eid = eid;
        self.state
            .hash
            .lifecycle(LifecycleEvent::Resume)
            .expect("hash engine suspended at oreturn");
        self.counters.context_switches += 1;
        self.trace.push(TraceEvent::ContextSwitch {
            cycle: self.state.cycle,
            what: "oreturn",
            eid,
        });
        Ok(())
    }

    /// Asynchronous exit: save the full enclave context, scrub the register
    /// file, suspend the hash engine (its value is kept), and transfer to
    /// the host interrupt handler.
    pub fn aex(&mut self) -> Result<(), TrapKind> {
        debug_assert_eq!(self.state.mode, Mode::Enclave);
        let eid = self.state.curr_eid;
        let handler = self
            .host_prog
            .as_ref()
            .and_then(|p| p.handler)
            .ok_or(TrapKind::NoInterruptHandler)?;
        let rec = self.sm.enclaves.get_mut(&eid).unwrap();
        rec.saved_ctx = Some(SavedContext {
            regs: self.state.regs,
            pc: self.state.pc,
            kind: SavedBy::Aex,
        });
        self.state.regs = [TaintedWord::ZERO; NUM_REGS];
        self.state.mode = Mode::Host;
        self.state.curr_eid = 0;
        self.state.pc = handler;
        self.state
            .hash
            .lifecycle(LifecycleEvent::Suspend)
            .expect("hash engine active at aex");
        self.counters.context_switches += 1;
        self.trace.push(TraceEvent::ContextSwitch {
            cycle: self.state.cycle,
            what: "aex",
            eid,
        });
        Ok(())
    }

    /// Resume enclave execution from a context saved by an asynchronous
    /// exit; the register file and taints come back bit-exact.
    pub fn resume(&mut self, eid: u64) -> Result<(), EcallError> {
        debug_assert_eq!(self.state.mode, Mode::Host);
        let rec = self
            .sm
            .enclaves
            .get_mut(&eid)
            .ok_or(EcallError::NoSuchEnclave(eid))?;
        let Some(saved) = rec.saved_ctx.take() else {
            return Err(EcallError::NothingToResume);
        };
        if saved.kind != SavedBy::Aex {
            rec.saved_ctx = Some(saved);
            return Err(EcallError::NothingToResume);
        }
        self.state.regs = saved.regs;
        self.state.pc = saved.pc;
        self.state.mode = Mode::Enclave;
        self.state.curr_eid = eid;
        self.state
            .hash
            .lifecycle(LifecycleEvent::Resume)
            .expect("hash engine suspended at resume");
        self.counters.context_switches += 1;
        self.trace.push(TraceEvent::ContextSwitch {
            cycle: self.state.cycle,
            what: "resume",
            eid,
        });
        Ok(())
    }

    /// Page-fault service. The OS role picks a frame and fills it from the
    /// image; the monitor intercepts to place the taint bits: a page inside
    /// the sensitive section gets its 64-byte shadow block from the taint
    /// buffer at the page's offset, every other page's block is zeroed.
    pub fn on_page_fault(&mut self, ctx: u64, vaddr: u64) -> Result<(), TrapKind> {
        let vpage = vaddr / PAGE_SIZE;
        self.counters.page_faults += 1;

        if ctx != 0 {
            let rec = &self.sm.enclaves[&ctx];
            if rec.owns_vaddr(vaddr) {
                let backing = enclave_page_backing(rec, vpage);
                let (d_lo, d_hi) = rec.d_star_range;
                let taint_fill = if vpage * PAGE_SIZE < d_hi && d_lo < (vpage + 1) * PAGE_SIZE {
                    // word offset of this page within the sensitive section
                    Some((
                        (vpage * PAGE_SIZE - d_lo) / WORD_BYTES,
                        (d_hi - d_lo) / WORD_BYTES,
                    ))
                } else {
                    None
                };
                let bitmap = taint_fill.map(|_| rec.taint_buf.clone());
                let ppage = self
                    .mem
                    .alloc_frame(ctx, &backing)
                    .map_err(|_| TrapKind::OutOfPhysicalMemory)?;
                match (taint_fill, bitmap) {
                    (Some((word_off, word_len)), Some(bitmap)) => self
                        .mem
                        .fill_page_shadow(ppage, &bitmap, word_off, word_len)
                        .expect("shadow fill"),
                    _ => self.mem.zero_page_shadow(ppage).expect("shadow zero"),
                }
                self.page_tables
                    .entry(ctx)
                    .or_default()
                    .map_page(vpage, ppage);
                self.trace.push(TraceEvent::PageAlloc {
                    cycle: self.state.cycle,
                    vpage,
                    ppage,
                    eid: ctx,
                });
                return Ok(());
            }
        }

        // host fault, or an enclave touching the shared address space
        let ppage = self.ensure_shared_frame(vpage)?;
        self.page_tables
            .entry(ctx)
            .or_default()
            .map_page(vpage, ppage);
        Ok(())
    }

    /// Find or create the shared (unowned) frame backing a virtual page.
    pub(crate) fn ensure_shared_frame(&mut self, vpage: u64) -> Result<u64, TrapKind> {
        if let Some(&ppage) = self.shared_frames.get(&vpage) {
            return Ok(ppage);
        }
        let backing = match &self.host_prog {
            Some(prog) => host_page_backing(prog, vpage),
            None => PageBacking::Zero,
        };
        let ppage = self
            .mem
            .alloc_frame(0, &backing)
            .map_err(|_| TrapKind::OutOfPhysicalMemory)?;
        self.mem.zero_page_shadow(ppage).expect("shadow zero");
        self.shared_frames.insert(vpage, ppage);
        self.trace.push(TraceEvent::PageAlloc {
            cycle: self.state.cycle,
            vpage,
            ppage,
            eid: 0,
        });
        Ok(ppage)
    }
}

/// Image bytes covering one page of an enclave's private range. Text pages
/// are not materialized as data (instructions are fetched from the decoded
/// image), so they read as zeros.
fn enclave_page_backing(rec: &EnclaveRecord, vpage: u64) -> PageBacking {
    let page_lo = vpage * PAGE_SIZE;
    section_slice(rec.layout.data_base, &rec.data, page_lo)
        .or_else(|| section_slice(rec.layout.sensitive_base, &rec.sensitive, page_lo))
        .map(PageBacking::Bytes)
        .unwrap_or(PageBacking::Zero)
}

fn host_page_backing(prog: &crate::binprep::Program, vpage: u64) -> PageBacking {
    let page_lo = vpage * PAGE_SIZE;
    let data = crate::binprep::words_to_bytes(&prog.data);
    section_slice(prog.layout.data_base, &data, page_lo)
        .map(PageBacking::Bytes)
        .unwrap_or(PageBacking::Zero)
}

/// The bytes of `section` (based at `base`) that fall into the page starting
/// at `page_lo`, shifted to their in-page offset.
fn section_slice(base: u64, section: &[u8], page_lo: u64) -> Option<Vec<u8>> {
    let sec_end = base + section.len() as u64;
    let page_hi = page_lo + PAGE_SIZE;
    if base >= page_hi || sec_end <= page_lo {
        return None;
    }
    let mut page = vec![0u8; PAGE_SIZE as usize];
    let copy_lo = base.max(page_lo);
    let copy_hi = sec_end.min(page_hi);
    let src = &section[(copy_lo - base) as usize..(copy_hi - base) as usize];
    page[(copy_lo - page_lo) as usize..(copy_hi - page_lo) as usize].copy_from_slice(src);
    Some(page)
}
