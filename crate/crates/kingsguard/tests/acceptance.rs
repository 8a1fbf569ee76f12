//! Acceptance suite: one test per release criterion, each printing a
//! PASS/FAIL line. Run with `cargo test --test acceptance -- --nocapture`
//! to see the lines even on success.

use std::time::{Duration, Instant};

use kingsguard::binprep::{
    assemble, prepare_image, MacKey, ProgramImage, DEFAULT_PATH_BOUND, SEC_HASHES, SEC_TAINTS,
};
use kingsguard::config::{LayoutConfig, SimConfig, PAGE_SIZE, WORD_BYTES};
use kingsguard::dift::{TaintRule, TaintedWord};
use kingsguard::harness::{
    fuzz_noninterference, host_driver, run_declass_golden, run_scenario, ALL_SCENARIOS,
};
use kingsguard::machine::Simulator;
use kingsguard::monitor::LoadError;
use kingsguard::trace::{RunOutcome, TraceEvent};
use kingsguard::{StepOutcome, TrapKind};

const KEY: MacKey = MacKey([0x4B; 32]);

fn report(criterion: u32, what: &str, result: Result<(), String>) {
    match &result {
        Ok(()) => println!("criterion {criterion} [{what}]: PASS"),
        Err(e) => println!("criterion {criterion} [{what}]: FAIL - {e}"),
    }
    if let Err(e) = result {
        panic!("criterion {criterion} failed: {e}");
    }
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

// --- criterion 1 ----------------------------------------------------------

#[test]
fn criterion_1_attack_vector_golden_suite() {
    let result = (|| -> Result<(), String> {
        for name in ["av1", "av2", "av3", "av4"] {
            for protections in [false, true] {
                let started = Instant::now();
                run_scenario(name, protections)
                    .map_err(|e| format!("{name} protections={protections}: {e}"))?;
                let elapsed = started.elapsed();
                check(elapsed < Duration::from_secs(1), || {
                    format!("{name} protections={protections} took {elapsed:?}")
                })?;
            }
        }
        Ok(())
    })();
    report(
        1,
        "attack vectors leak when off, blocked with exact post-states when on",
        result,
    );
}

// --- criterion 2 ----------------------------------------------------------

#[test]
fn criterion_2_declassification_end_to_end() {
    let result = (|| -> Result<(), String> {
        let legit = run_declass_golden(false).map_err(|e| e.to_string())?;
        check(legit.released == legit.expected_value, || {
            format!(
                "legit release: got {:#x}, want {:#x}",
                legit.released, legit.expected_value
            )
        })?;
        check(legit.zeroized == 0, || {
            format!("legit run zeroized {} stores", legit.zeroized)
        })?;
        check(legit.image_hashes.len() == 1, || {
            format!(
                "expected one authorized path, image has {}",
                legit.image_hashes.len()
            )
        })?;
        check(
            legit.runtime_match_digest == Some(legit.image_hashes[0]),
            || {
                format!(
                    "prep/runtime digest mismatch: runtime {:02x?} vs image {:02x?}",
                    legit.runtime_match_digest, legit.image_hashes[0]
                )
            },
        )?;

        let hijacked = run_declass_golden(true).map_err(|e| e.to_string())?;
        check(hijacked.released == 0, || {
            format!("hijacked run released {:#x}", hijacked.released)
        })?;
        check(hijacked.zeroized >= 1, || {
            "hijacked run logged no zeroized store".into()
        })?;
        Ok(())
    })();
    report(
        2,
        "legitimate path releases, hijacked path emits zeros, hashes agree bit-for-bit",
        result,
    );
}

// --- criterion 3 ----------------------------------------------------------

/// Bottom-test loop: the backward branch commits on every iteration
/// including a single one, so iteration counts cannot show in the digest.
fn loop_enclave(iterations: u64) -> String {
    format!(
        "
.entry main
.adp nb
main:
    ADDI x1, x0, {iterations}
    ADDI x9, x0, skey
    LD   x2, 0(x9)          # keep tainted state live across interrupts
    JAL  x0, entry
body:
    ADD  x2, x2, x1
    ADDI x1, x1, -1
entry:
    BNE  x1, x0, body
    JAL  x0, fin
fin:
nb: BNE x0, x0, never
    ADDI a7, x0, 3
    ECALL
never:
    ADDI x9, x0, 0x60400
    SD x0, 0(x9)
    ADDI a7, x0, 3
    ECALL
.sensitive
skey: .quad 0x51E
"
    )
}

const RESUMING_HOST: &str = "
.entry hmain
.handler irq
hmain:
    ADDI a0, x0, 0
    ADDI a7, x0, 1
    ECALL
    ADDI x6, x0, eidslot
    SD   a0, 0(x6)
    ADDI a7, x0, 2
    ECALL
    HALT
irq:
    ADDI x6, x0, eidslot
    LD   a0, 0(x6)
    ADDI a7, x0, 5
    ECALL
    HALT
.data
eidslot: .quad 0
";

fn run_loop_program(
    iterations: u64,
    interrupts: &[u64],
) -> Result<(Simulator, RunOutcome), String> {
    let prog =
        assemble(&loop_enclave(iterations), LayoutConfig::enclave()).map_err(|e| e.to_string())?;
    let (img, _) = prepare_image(&prog, &KEY, DEFAULT_PATH_BOUND).map_err(|e| e.to_string())?;
    let mut sim = Simulator::new(SimConfig::default(), KEY);
    sim.register_image(img.to_bytes());
    sim.load_host_program(
        assemble(RESUMING_HOST, LayoutConfig::host()).map_err(|e| e.to_string())?,
    );
    for &s in interrupts {
        sim.schedule_interrupt(s);
    }
    let outcome = sim.run(10_000).outcome;
    Ok((sim, outcome))
}

fn session_digest(sim: &Simulator) -> Result<[u8; 32], String> {
    sim.last_session_digest()
        .ok_or_else(|| "no enclave session completed".into())
}

#[test]
fn criterion_3_hash_chain_properties() {
    let result = (|| -> Result<(), String> {
        // (a) loop hashed once: body 1x vs 10x
        let (sim1, o1) = run_loop_program(1, &[])?;
        let (sim10, o10) = run_loop_program(10, &[])?;
        check(
            o1 == RunOutcome::Halted && o10 == RunOutcome::Halted,
            || format!("loop runs ended with {o1:?} / {o10:?}"),
        )?;
        let d1 = session_digest(&sim1)?;
        let d10 = session_digest(&sim10)?;
        check(d1 == d10, || {
            "digest depends on the loop iteration count".into()
        })?;
        check(sim10.counters.suppressed_loop_hashes == 9, || {
            format!(
                "expected 9 suppressed re-hashes, got {}",
                sim10.counters.suppressed_loop_hashes
            )
        })?;

        // (b) asynchronous exits are transparent to the chain
        for interrupts in [&[8u64][..], &[8, 15][..], &[7, 13, 22][..]] {
            let (sim_irq, outcome) = run_loop_program(10, interrupts)?;
            check(outcome == RunOutcome::Halted, || {
                format!("interrupted run ended with {outcome:?}")
            })?;
            let suspended = sim_irq
                .trace
                .iter()
                .filter(|e| matches!(e, TraceEvent::ContextSwitch { what: "aex", .. }))
                .count();
            check(suspended == interrupts.len(), || {
                format!(
                    "expected {} asynchronous exits, saw {suspended}",
                    interrupts.len()
                )
            })?;
            let d = session_digest(&sim_irq)?;
            check(d == d10, || {
                format!("digest changed under interrupts at {interrupts:?}")
            })?;
        }

        // (c) exit resets the chain: two sessions of one enclave match
        let two_session_host = "
.entry hmain
hmain:
    ADDI a0, x0, 0
    ADDI a7, x0, 1
    ECALL
    ADDI x6, x0, eidslot
    SD   a0, 0(x6)
    ADDI a7, x0, 2
    ECALL
    ADDI x6, x0, eidslot
    LD   a0, 0(x6)
    ADDI a7, x0, 2
    ECALL
    HALT
.data
eidslot: .quad 0
";
        let prog =
            assemble(&loop_enclave(4), LayoutConfig::enclave()).map_err(|e| e.to_string())?;
        let (img, _) = prepare_image(&prog, &KEY, DEFAULT_PATH_BOUND).map_err(|e| e.to_string())?;
        let mut sim = Simulator::new(SimConfig::default(), KEY);
        sim.register_image(img.to_bytes());
        sim.load_host_program(
            assemble(two_session_host, LayoutConfig::host()).map_err(|e| e.to_string())?,
        );
        let rep = sim.run(10_000);
        check(rep.outcome == RunOutcome::Halted, || {
            format!("two-session run ended with {:?}", rep.outcome)
        })?;
        check(rep.session_digests.len() == 2, || {
            format!("expected 2 sessions, got {}", rep.session_digests.len())
        })?;
        check(
            rep.session_digests[0].digest == rep.session_digests[1].digest,
            || "re-entry did not start a fresh chain".into(),
        )?;
        Ok(())
    })();
    report(
        3,
        "loop hashed once, suspend/resume transparent, exit resets the chain",
        result,
    );
}

// --- criterion 4 ----------------------------------------------------------

fn touch_pages_enclave(pages: u64) -> String {
    format!(
        "
.entry main
.adp nb
main:
    ADDI x8, x0, sdata
    ADDI x9, x0, {pages}
touch:
    LD   x1, 0(x8)
    ADDI x8, x8, 4096
    ADDI x9, x9, -1
    BNE  x9, x0, touch
nb: BNE x0, x0, never
    ADDI a7, x0, 3
    ECALL
never:
    ADDI x9, x0, 0x60400
    SD x0, 0(x9)
    ADDI a7, x0, 3
    ECALL
.data
pad: .quad 0
.sensitive
sdata: .zero {{words}}
"
    )
}

fn check_shadow_matches_bitmap(words: u64) -> Result<(), String> {
    let pages = words.div_ceil(PAGE_SIZE / WORD_BYTES);
    let src = touch_pages_enclave(pages).replace("{words}", &words.to_string());
    let prog = assemble(&src, LayoutConfig::enclave()).map_err(|e| e.to_string())?;
    let (img, _) = prepare_image(&prog, &KEY, DEFAULT_PATH_BOUND).map_err(|e| e.to_string())?;
    let image_bytes = img.to_bytes();
    let bitmap = ProgramImage::parse(&image_bytes)
        .map_err(|e| e.to_string())?
        .section(SEC_TAINTS)
        .ok_or("no taint section")?
        .to_vec();

    let mut sim = Simulator::new(SimConfig::default(), KEY);
    sim.register_image(image_bytes);
    sim.load_host_program(
        assemble(&host_driver("", ""), LayoutConfig::host()).map_err(|e| e.to_string())?,
    );
    let rep = sim.run(100_000);
    check(rep.outcome == RunOutcome::Halted, || {
        format!("{words}-word run ended with {:?}", rep.outcome)
    })?;

    let base = LayoutConfig::enclave().sensitive_base;
    let words_per_page = PAGE_SIZE / WORD_BYTES;
    for page in 0..pages {
        let vaddr = base + page * PAGE_SIZE;
        let paddr = sim
            .try_translate(1, vaddr)
            .ok_or_else(|| format!("sensitive page {page} not mapped"))?;
        for w in 0..words_per_page {
            let idx = page * words_per_page + w;
            let expected = idx < words && (bitmap[(idx / 8) as usize] >> (idx % 8)) & 1 == 1;
            let actual = sim
                .mem
                .read_shadow_bit(paddr + w * WORD_BYTES)
                .map_err(|e| e.to_string())?;
            check(actual == expected, || {
                format!("word {idx} ({words} total): shadow {actual}, bitmap {expected}")
            })?;
        }
    }
    Ok(())
}

#[test]
fn criterion_4_page_load_taint_placement() {
    let result = (|| -> Result<(), String> {
        // one page, several pages with a ragged tail, and the full 16
        for words in [512u64, 3 * 512 + 5, 16 * 512] {
            check_shadow_matches_bitmap(words)?;
        }
        Ok(())
    })();
    report(
        4,
        "shadow bits equal the image taint bitmap for every sensitive word",
        result,
    );
}

// --- criterion 5 ----------------------------------------------------------

#[test]
fn criterion_5_noninterference_fuzzing() {
    let result = (|| -> Result<(), String> {
        let started = Instant::now();
        let summary =
            fuzz_noninterference(2026, 60, 9, TaintRule::Or).map_err(|e| e.to_string())?;
        check(summary.trials >= 500, || {
            format!("only {} trials", summary.trials)
        })?;
        check(summary.counterexamples.is_empty(), || {
            let c = &summary.counterexamples[0];
            format!(
                "distinguishable pair found: {}\nsecrets {:x?} vs {:x?}\n{}",
                c.witness, c.secret_a, c.secret_b, c.program
            )
        })?;
        check(summary.indistinguishable == summary.trials, || {
            format!(
                "{} of {} trials indistinguishable",
                summary.indistinguishable, summary.trials
            )
        })?;

        // sensitivity: a broken propagation rule must be caught
        let mutant =
            fuzz_noninterference(2027, 10, 3, TaintRule::AndMutant).map_err(|e| e.to_string())?;
        check(!mutant.counterexamples.is_empty(), || {
            "planted propagation bug produced no counterexample".into()
        })?;

        let elapsed = started.elapsed();
        check(elapsed < Duration::from_secs(60), || {
            format!("fuzzing took {elapsed:?}")
        })?;
        Ok(())
    })();
    report(
        5,
        "500+ random trials indistinguishable; planted bug detected",
        result,
    );
}

// --- criterion 6 ----------------------------------------------------------

#[test]
fn criterion_6_counter_identities() {
    let result = (|| -> Result<(), String> {
        for name in ALL_SCENARIOS {
            for protections in [false, true] {
                let r = run_scenario(name, protections)
                    .map_err(|e| format!("{name} protections={protections}: {e}"))?;
                let c = r.report.counters;
                check(
                    c.shadow_accesses == c.enclave_data_loads + c.enclave_data_stores,
                    || {
                        format!(
                            "{name}: shadow {} != enclave loads {} + stores {}",
                            c.shadow_accesses, c.enclave_data_loads, c.enclave_data_stores
                        )
                    },
                )?;
                check(
                    c.hash_updates == c.taken_enclave_transfers - c.suppressed_loop_hashes,
                    || {
                        format!(
                            "{name}: hash updates {} != transfers {} - suppressed {}",
                            c.hash_updates, c.taken_enclave_transfers, c.suppressed_loop_hashes
                        )
                    },
                )?;
            }
        }
        Ok(())
    })();
    report(
        6,
        "shadow and hash counters satisfy their accounting identities exactly",
        result,
    );
}

// --- criterion 7 ----------------------------------------------------------

#[test]
fn criterion_7_image_roundtrip_and_tamper() {
    let result = (|| -> Result<(), String> {
        let srcs = [
            kingsguard::harness::AV1_ENCLAVE,
            kingsguard::harness::AV2_ENCLAVE,
            kingsguard::harness::AV3_ENCLAVE,
            kingsguard::harness::AV4_ENCLAVE,
        ];
        for src in srcs {
            let prog = assemble(src, LayoutConfig::enclave()).map_err(|e| e.to_string())?;
            let (img, _) =
                prepare_image(&prog, &KEY, DEFAULT_PATH_BOUND).map_err(|e| e.to_string())?;
            let bytes = img.to_bytes();
            let parsed = ProgramImage::parse(&bytes).map_err(|e| e.to_string())?;
            check(parsed == img, || "parse/emit mismatch".into())?;
            check(parsed.to_bytes() == bytes, || {
                "re-emitted bytes differ".into()
            })?;
        }

        // every single-bit flip in the protected sections must be caught
        let prog = assemble(kingsguard::harness::AV1_ENCLAVE, LayoutConfig::enclave())
            .map_err(|e| e.to_string())?;
        let (img, _) = prepare_image(&prog, &KEY, DEFAULT_PATH_BOUND).map_err(|e| e.to_string())?;
        let sim = Simulator::new(SimConfig::default(), KEY);
        for section in [SEC_TAINTS, SEC_HASHES] {
            let len = img.section(section).unwrap().len();
            for bit in 0..len * 8 {
                let mut tampered = img.clone();
                tampered.section_mut(section).unwrap()[bit / 8] ^= 1 << (bit % 8);
                match sim.sm.verify_image(&tampered.to_bytes()) {
                    Err(LoadError::MacMismatch(s)) if s == section => {}
                    other => {
                        return Err(format!(
                            "flip of bit {bit} in {section} gave {other:?}, not a MAC mismatch"
                        ))
                    }
                }
            }
        }

        // a stripped hash section aborts creation outright
        let mut stripped = img.clone();
        stripped.remove_section(SEC_HASHES);
        match sim.sm.verify_image(&stripped.to_bytes()) {
            Err(LoadError::MissingSection(SEC_HASHES)) => {}
            other => return Err(format!("stripped hashes gave {other:?}")),
        }
        Ok(())
    })();
    report(
        7,
        "parse/emit identity; any protected-section bit flip fails the MAC; stripping aborts",
        result,
    );
}

// --- criterion 8 ----------------------------------------------------------

#[test]
fn criterion_8_isolation_suite() {
    let result = (|| -> Result<(), String> {
        // (a) host access to an enclave-owned page is denied even when the
        // OS maps the frame into the host's page table
        let enclave = "
.entry main
.adp nb
main:
    ADDI x8, x0, word
    ADDI x9, x0, 0x4242
    SD   x9, 0(x8)
nb: BNE x0, x0, never
    ADDI a7, x0, 3
    ECALL
never:
    ADDI x9, x0, 0x60400
    SD x0, 0(x9)
    ADDI a7, x0, 3
    ECALL
.data
word: .quad 0
.sensitive
s: .quad 1
";
        let host = "
.entry hmain
hmain:
    ADDI a0, x0, 0
    ADDI a7, x0, 1
    ECALL
    ADDI a7, x0, 2
    ECALL
    ADDI x9, x0, 0x66000
    LD   x5, 0(x9)          # lands on the foreign-mapped enclave frame
    HALT
";
        let prog = assemble(enclave, LayoutConfig::enclave()).map_err(|e| e.to_string())?;
        let (img, _) = prepare_image(&prog, &KEY, DEFAULT_PATH_BOUND).map_err(|e| e.to_string())?;
        let mut sim = Simulator::new(SimConfig::default(), KEY);
        sim.register_image(img.to_bytes());
        sim.load_host_program(assemble(host, LayoutConfig::host()).map_err(|e| e.to_string())?);
        for _ in 0..10_000 {
            if sim.session_count() > 0 {
                break;
            }
            sim.step();
        }
        let frame = sim
            .try_translate(1, prog.symbol("word"))
            .ok_or("enclave data page not mapped")?
            / PAGE_SIZE;
        sim.map_foreign(0, 0x66, frame);
        let rep = sim.run(10_000);
        check(
            rep.outcome == RunOutcome::Trapped(TrapKind::OwnershipViolation(0x66000)),
            || format!("host access ended with {:?}", rep.outcome),
        )?;

        // (b) + (c): registers are scrubbed across the asynchronous exit and
        // restored bit-exactly on resume
        let prog =
            assemble(&loop_enclave(10), LayoutConfig::enclave()).map_err(|e| e.to_string())?;
        let (img, _) = prepare_image(&prog, &KEY, DEFAULT_PATH_BOUND).map_err(|e| e.to_string())?;
        let mut sim = Simulator::new(SimConfig::default(), KEY);
        sim.register_image(img.to_bytes());
        sim.load_host_program(
            assemble(RESUMING_HOST, LayoutConfig::host()).map_err(|e| e.to_string())?,
        );
        sim.schedule_interrupt(14);

        let mut snapshot: Option<([TaintedWord; 32], u64)> = None;
        let mut verified_zero = false;
        let mut verified_restore = false;
        for _ in 0..10_000 {
            let before = (sim.state.regs, sim.state.pc);
            let events = sim.trace.len();
            match sim.step() {
                StepOutcome::Continue => {}
                StepOutcome::Halted => break,
                StepOutcome::Trap(kind) => return Err(format!("unexpected trap {kind:?}")),
            }
            for event in &sim.trace[events..] {
                if let TraceEvent::ContextSwitch { what: "aex", .. } = event {
                    snapshot = Some(before);
                    check(
                        sim.state.regs.iter().all(|r| *r == TaintedWord::ZERO),
                        || "registers visible after the asynchronous exit".into(),
                    )?;
                    verified_zero = true;
                }
                if let TraceEvent::ContextSwitch { what: "resume", .. } = event {
                    let (regs, pc) = snapshot.ok_or("resume before any exit")?;
                    check(sim.state.regs == regs, || {
                        "register file not restored bit-exactly".into()
                    })?;
                    check(sim.state.pc == pc, || "resume pc differs".into())?;
                    verified_restore = true;
                }
            }
        }
        check(verified_zero, || "no asynchronous exit observed".into())?;
        check(verified_restore, || "no resume observed".into())?;

        // tainted state must have been live across the exit for the check
        // to mean anything
        let (regs, _) = snapshot.unwrap();
        check(regs.iter().any(|r| r.taint), || {
            "snapshot carried no taints; test program needs a tainted register".into()
        })?;
        Ok(())
    })();
    report(
        8,
        "enclave pages closed to the host; exit scrubs and resume restores registers",
        result,
    );
}
