//! Scenario library and security oracles: the four attack-vector
//! demonstrations, the sensor-pipeline case study, a differential
//! noninterference check, and a randomized program generator driving it.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::binprep::{assemble, prepare_image, MacKey, Program, DEFAULT_PATH_BOUND};
use crate::config::{LayoutConfig, SimConfig};
use crate::dift::TaintRule;
use crate::machine::{Poke, Simulator};
use crate::trace::{AccessKind, RunOutcome, RunReport, ViolationKind};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ScenarioError {
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
    #[error("assertion failed: {0}")]
    AssertionFailure(String),
    #[error("an authorized path matched during the run; the oracle does not apply")]
    AdpMatchedDuringRun,
    #[error("precondition violated: {0}")]
    Precondition(String),
}

/// Outcome of one scenario run: the checks performed and the run report of
/// the attack leg.
#[derive(Debug, Clone)]
pub struct ScenarioReport {
    pub name: String,
    pub protections: bool,
    pub checks: Vec<String>,
    pub report: RunReport,
}

const TEST_KEY: MacKey = MacKey([0x4B; 32]);

// Shared-space addresses used by the scenario programs; all outside every
// image's private range.
const SINK: u64 = 0x6_0008; // AV1 leak target
const REL_OUT: u64 = 0x6_0010; // AV1 legit release target
const PROBE_BASE: u64 = 0x6_0000; // AV2 attacker array
const SPI_BUF: u64 = 0x8_0000; // AV4 peripheral word (default config)
const SCADA_IN: u64 = 0x6_1000;
const SCADA_OUT: u64 = 0x6_2000;

struct Checks {
    list: Vec<String>,
}

impl Checks {
    fn new() -> Self {
        Checks { list: Vec::new() }
    }

    fn expect(&mut self, what: &str, ok: bool, detail: String) -> Result<(), ScenarioError> {
        if ok {
            self.list.push(format!("ok: {what}"));
            Ok(())
        } else {
            Err(ScenarioError::AssertionFailure(format!("{what}: {detail}")))
        }
    }

    fn expect_eq<T: PartialEq + std::fmt::Debug>(
        &mut self,
        what: &str,
        got: T,
        want: T,
    ) -> Result<(), ScenarioError> {
        let ok = got == want;
        self.expect(what, ok, format!("got {got:?}, want {want:?}"))
    }
}

/// Assemble an enclave source, optionally override the secret words, and
/// return the image bytes plus the assembled program (for its symbols).
pub fn build_image(
    src: &str,
    secrets: Option<Vec<u64>>,
    key: &MacKey,
) -> Result<(Vec<u8>, Program), ScenarioError> {
    let mut prog = assemble(src, LayoutConfig::enclave())
        .map_err(|e| ScenarioError::Precondition(format!("enclave assembly: {e}")))?;
    if let Some(words) = secrets {
        prog = prog.with_sensitive_words(words);
    }
    let (img, _) = prepare_image(&prog, key, DEFAULT_PATH_BOUND)
        .map_err(|e| ScenarioError::Precondition(format!("image prep: {e}")))?;
    Ok((img.to_bytes(), prog))
}

/// Standard host driver: create enclave image 0, enter it, then run the
/// scenario-specific epilogue and halt.
pub fn host_driver(post: &str, data: &str) -> String {
    format!(
        ".entry hmain
hmain:
    ADDI a0, x0, 0      # image index
    ADDI a7, x0, 1      # create
    ECALL
    ADDI a7, x0, 2      # enter
    ECALL
{post}
    HALT
.data
hostout: .quad 0
{data}
"
    )
}

fn build_sim(
    enclave_src: &str,
    secrets: Option<Vec<u64>>,
    host_src: &str,
    protections: bool,
) -> Result<(Simulator, Program, Program), ScenarioError> {
    let (image, enclave_prog) = build_image(enclave_src, secrets, &TEST_KEY)?;
    let host_prog = assemble(host_src, LayoutConfig::host())
        .map_err(|e| ScenarioError::Precondition(format!("host assembly: {e}")))?;
    let cfg = SimConfig::default().with_protections(protections);
    let mut sim = Simulator::new(cfg, TEST_KEY);
    sim.register_image(image);
    sim.load_host_program(host_prog.clone());
    Ok((sim, enclave_prog, host_prog))
}

fn expect_halted(report: &RunReport) -> Result<(), ScenarioError> {
    if report.outcome == RunOutcome::Halted {
        Ok(())
    } else {
        Err(ScenarioError::AssertionFailure(format!(
            "run did not halt cleanly: {:?}",
            report.outcome
        )))
    }
}

/// Run one registered scenario with protections on or off.
pub fn run_scenario(name: &str, protections: bool) -> Result<ScenarioReport, ScenarioError> {
    match name {
        "av1" => av1(protections),
        "av2" => av2(protections),
        "av3" => av3(protections),
        "av4" => av4(protections),
        "scada" => scada_suite(protections),
        other => Err(ScenarioError::UnknownScenario(other.to_string())),
    }
}

pub const ALL_SCENARIOS: &[&str] = &["av1", "av2", "av3", "av4", "scada"];

// --- AV1: direct copy of a secret to non-enclave memory -----------------

pub const AV1_ENCLAVE: &str = "
.entry main
.release rel
main:
    ADDI x8, x0, ra_slot
    ADDI x9, x0, cont
    SD   x9, 0(x8)          # legitimate return target
    ADDI x5, x0, 1
ldra:
    LD   x10, 0(x8)         # corrupted by the gadget injector
    .targets cont
    JALR x0, x10, 0
gadget:
    ADDI x11, x0, secret
    LD   x1, 0(x11)         # tainted secret
    ADDI x12, x0, 0x60008
    SD   x1, 0(x12)         # direct copy to non-enclave memory
    JAL  x0, done
cont:
    ADDI x13, x0, secret
    LD   x2, 0(x13)
    ADDI x14, x0, 0x1111
    XOR  x2, x2, x14        # masked release value, still tainted
    ADDI x12, x0, 0x60010
rel:
    SD   x2, 0(x12)         # authorized release site
done:
    ADDI a7, x0, 3          # exit
    ECALL
.data
ra_slot: .quad 0
.sensitive
secret: .quad 0
";

fn av1(protections: bool) -> Result<ScenarioReport, ScenarioError> {
    let secret = 0xC0FFEEu64;
    let mut checks = Checks::new();

    // attack leg: the injector rewrites the stored return target
    let host = host_driver("", "");
    let (mut sim, prog, _) = build_sim(AV1_ENCLAVE, Some(vec![secret]), &host, protections)?;
    sim.add_poke(Poke {
        at_pc: prog.symbol("ldra"),
        occurrence: 1,
        vaddr: prog.symbol("ra_slot"),
        value: prog.symbol("gadget"),
    });
    let report = sim.run(10_000);
    expect_halted(&report)?;
    let sink = sim.read_shared_word(SINK).unwrap_or(0);

    if protections {
        checks.expect_eq("hijacked store leaves zero in the sink", sink, 0)?;
        checks.expect_eq(
            "exactly one zeroized store",
            report.count(ViolationKind::ZeroizedStore),
            1,
        )?;
        checks.expect_eq(
            "no declassification on the hijacked path",
            report.counters.declass_matches,
            0,
        )?;

        // legitimate leg: untampered run releases through the authorized path
        let (mut legit, _, _) = build_sim(AV1_ENCLAVE, Some(vec![secret]), &host, true)?;
        let lreport = legit.run(10_000);
        expect_halted(&lreport)?;
        checks.expect_eq(
            "authorized path declassifies the masked value",
            legit.read_shared_word(REL_OUT).unwrap_or(0),
            secret ^ 0x1111,
        )?;
        checks.expect(
            "release used declassification",
            lreport.counters.declass_matches >= 1,
            format!("declass_matches = {}", lreport.counters.declass_matches),
        )?;
        checks.expect_eq(
            "legitimate run has no zeroized stores",
            lreport.count(ViolationKind::ZeroizedStore),
            0,
        )?;
    } else {
        checks.expect_eq("secret leaks to the sink without protections", sink, secret)?;
    }

    Ok(ScenarioReport {
        name: "av1".into(),
        protections,
        checks: checks.list,
        report,
    })
}

// --- AV2: secret encoded into non-enclave addresses ----------------------

pub const AV2_ENCLAVE: &str = "
.entry main
.release rel
main:
    ADDI x11, x0, secret
    LD   x1, 0(x11)         # tainted secret, 0..15
    ADDI x9, x0, 12
    SLL  x1, x1, x9         # page-number encode
    ADDI x8, x0, 0x60000
    ADD  x1, x1, x8         # tainted address
    LD   x3, 0(x1)          # probe access
    BNE  x0, x0, never      # static path to the release stub, never taken
    ADDI a7, x0, 3
    ECALL
never:
    ADDI x12, x0, 0x60100
rel:
    SD   x0, 0(x12)
    ADDI a7, x0, 3
    ECALL
.sensitive
secret: .quad 0
";

fn av2(protections: bool) -> Result<ScenarioReport, ScenarioError> {
    let secret = 5u64;
    let mut checks = Checks::new();
    let host = host_driver("", "");
    let (mut sim, _, _) = build_sim(AV2_ENCLAVE, Some(vec![secret]), &host, protections)?;
    let report = sim.run(10_000);
    expect_halted(&report)?;

    let enclave_pages: Vec<u64> = report
        .non_enclave_accesses
        .iter()
        .filter(|(_, _, eid)| *eid != 0)
        .map(|(vpage, _, _)| *vpage)
        .collect();
    let a_fixed_page = sim.cfg.a_fixed / crate::config::PAGE_SIZE;
    let secret_page = (PROBE_BASE >> 12) + secret;

    if protections {
        checks.expect(
            "every enclave access to non-enclave memory lands on the fixed page",
            !enclave_pages.is_empty() && enclave_pages.iter().all(|p| *p == a_fixed_page),
            format!("pages touched: {enclave_pages:x?}"),
        )?;
        checks.expect(
            "redirect was taken",
            report.count(ViolationKind::RedirectedAccess) >= 1,
            format!(
                "redirects = {}",
                report.count(ViolationKind::RedirectedAccess)
            ),
        )?;
    } else {
        checks.expect(
            "probe page encodes the secret without protections",
            enclave_pages.contains(&secret_page),
            format!("pages touched: {enclave_pages:x?}, wanted {secret_page:#x}"),
        )?;
    }

    Ok(ScenarioReport {
        name: "av2".into(),
        protections,
        checks: checks.list,
        report,
    })
}

// --- AV3: leak through an EID-stamped shared register --------------------

pub const AV3_ENCLAVE: &str = "
.entry main
.release rel
main:
    ADDI x11, x0, secret
    LD   x1, 0(x11)
    MOVSR sr0, x1           # stamped with this enclave's EID
    BNE  x0, x0, never
    ADDI a7, x0, 3
    ECALL
never:
    ADDI x12, x0, 0x60100
rel:
    SD   x0, 0(x12)
    ADDI a7, x0, 3
    ECALL
.sensitive
secret: .quad 0
";

const AV3_LEGIT_ENCLAVE: &str = "
.entry main
.release rel
main:
    ADDI x1, x0, 42         # untainted result for the host
    MOVSR sr0, x1
    BNE  x0, x0, never
    ADDI a7, x0, 3
    ECALL
never:
    ADDI x12, x0, 0x60100
rel:
    SD   x0, 0(x12)
    ADDI a7, x0, 3
    ECALL
.sensitive
pad: .quad 0
";

fn av3(protections: bool) -> Result<ScenarioReport, ScenarioError> {
    let secret = 0x5EC12E7u64;
    let mut checks = Checks::new();
    let post = "
    MOVRS x5, sr0
    ADDI x6, x0, hostout
    SD   x5, 0(x6)";
    let host = host_driver(post, "");
    let (mut sim, _, host_prog) = build_sim(AV3_ENCLAVE, Some(vec![secret]), &host, protections)?;
    let report = sim.run(10_000);
    expect_halted(&report)?;
    let hostout = sim
        .read_shared_word(host_prog.symbol("hostout"))
        .unwrap_or(0);

    if protections {
        checks.expect_eq("host read of the stamped register returns zero", hostout, 0)?;
        checks.expect(
            "denied read was logged",
            report.count(ViolationKind::DeniedSharedRead) >= 1,
            format!(
                "denials = {}",
                report.count(ViolationKind::DeniedSharedRead)
            ),
        )?;
        checks.expect_eq(
            "register was wiped, not just the read",
            sim.state.shared_regs[0].value,
            0,
        )?;

        // legitimate leg: untainted shared-register handoff still works
        let (mut legit, _, lhost) = build_sim(AV3_LEGIT_ENCLAVE, None, &host, true)?;
        let lreport = legit.run(10_000);
        expect_halted(&lreport)?;
        checks.expect_eq(
            "untainted shared-register value reaches the host",
            legit.read_shared_word(lhost.symbol("hostout")).unwrap_or(0),
            42,
        )?;
    } else {
        checks.expect_eq("secret leaks via the shared register", hostout, secret)?;
    }

    Ok(ScenarioReport {
        name: "av3".into(),
        protections,
        checks: checks.list,
        report,
    })
}

// --- AV4: leak through a memory-mapped peripheral ------------------------

pub const AV4_ENCLAVE: &str = "
.entry main
.release rel
main:
    ADDI x11, x0, secret
    LD   x1, 0(x11)
    ADDI x8, x0, 0x80000    # peripheral buffer
    SD   x1, 0(x8)          # off-path store to the device
    BNE  x0, x0, never
    ADDI a7, x0, 3
    ECALL
never:
    ADDI x12, x0, 0x60100
rel:
    SD   x0, 0(x12)
    ADDI a7, x0, 3
    ECALL
.sensitive
secret: .quad 0
";

const AV4_LEGIT_ENCLAVE: &str = "
.entry main
.release rel
main:
    ADDI x11, x0, secret
    LD   x1, 0(x11)
    ADDI x13, x0, 0x3C3C
    XOR  x2, x1, x13        # encrypt before it leaves (still tainted)
    ADDI x8, x0, 0x80000
    JAL  x0, devwrite       # the driver-call edge the authorized path pins
devwrite:
rel:
    SD   x2, 0(x8)          # authorized release to the device
    ADDI a7, x0, 3
    ECALL
.sensitive
secret: .quad 0
";

fn av4(protections: bool) -> Result<ScenarioReport, ScenarioError> {
    let secret = 0xB00Fu64;
    let mut checks = Checks::new();
    let post = "
    ADDI x9, x0, 0x80000
    LD   x5, 0(x9)          # non-enclave code reads the device buffer
    ADDI x6, x0, hostout
    SD   x5, 0(x6)";
    let host = host_driver(post, "");
    let (mut sim, _, _) = build_sim(AV4_ENCLAVE, Some(vec![secret]), &host, protections)?;
    let report = sim.run(10_000);
    expect_halted(&report)?;
    let spi = sim.read_shared_word(SPI_BUF).unwrap_or(0);

    if protections {
        checks.expect_eq("peripheral buffer holds zeros", spi, 0)?;
        checks.expect(
            "store was zeroized",
            report.count(ViolationKind::ZeroizedStore) >= 1,
            format!("zeroized = {}", report.count(ViolationKind::ZeroizedStore)),
        )?;

        let (mut legit, _, _) = build_sim(AV4_LEGIT_ENCLAVE, Some(vec![secret]), &host, true)?;
        let lreport = legit.run(10_000);
        expect_halted(&lreport)?;
        checks.expect_eq(
            "authorized device write carries the encrypted value",
            legit.read_shared_word(SPI_BUF).unwrap_or(0),
            secret ^ 0x3C3C,
        )?;
        checks.expect(
            "device release was declassified",
            lreport.counters.declass_matches >= 1,
            format!("declass_matches = {}", lreport.counters.declass_matches),
        )?;
    } else {
        checks.expect_eq(
            "secret reaches the peripheral without protections",
            spi,
            secret,
        )?;
    }

    Ok(ScenarioReport {
        name: "av4".into(),
        protections,
        checks: checks.list,
        report,
    })
}

// --- Sensor pipeline case study ------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScadaVuln {
    None,
    Overflow,
    SharedReg,
}

const KS_STEP: u64 = 0x1F3;
const KS2_OFFSET: u64 = 0x777;

fn keystream(key: u64, offset: u64, i: u64) -> u64 {
    key.wrapping_add(offset)
        .wrapping_add(i.wrapping_mul(KS_STEP))
}

/// The in-enclave transform, mirrored in Rust: one butterfly stage over
/// eight words.
pub fn butterfly8(x: &[u64; 8]) -> [u64; 8] {
    let mut y = [0u64; 8];
    for i in 0..4 {
        y[i] = x[i].wrapping_add(x[i + 4]);
        y[i + 4] = x[i].wrapping_sub(x[i + 4]);
    }
    y
}

fn scada_enclave(vuln: ScadaVuln) -> String {
    let extra = match vuln {
        ScadaVuln::SharedReg => {
            "    MOVSR sr0, x6          # plaintext word to a shared register\n"
        }
        _ => "",
    };
    format!(
        ".entry main
.release relstore
main:
    ADDI x9, x0, key
    LD   x1, 0(x9)          # session key, tainted
    ADD  x2, x1, x0         # keystream state
    ADDI x8, x0, 0x1F3
    ADDI x3, x0, 8
    ADDI x4, x0, 0x61000    # ciphertext input (shared)
    ADDI x5, x0, pt
dec_loop:
    LD   x6, 0(x4)
    XOR  x6, x6, x2         # plaintext, tainted via the key
    SD   x6, 0(x5)
    ADD  x2, x2, x8
    ADDI x4, x4, 8
    ADDI x5, x5, 8
    ADDI x3, x3, -1
    BNE  x3, x0, dec_loop
{extra}
    ADDI x29, x0, ra_slot
    ADDI x30, x0, transform
    SD   x30, 0(x29)
ldra:
    LD   x30, 0(x29)        # corrupted by the overflow in the attack runs
    .targets transform
    JALR x0, x30, 0
leak_gadget:
    ADDI x3, x0, 8
    ADDI x5, x0, pt
    ADDI x4, x0, 0x62000
leak_loop:
    LD   x6, 0(x5)
    SD   x6, 0(x4)          # plaintext straight to the output buffer
    ADDI x5, x5, 8
    ADDI x4, x4, 8
    ADDI x3, x3, -1
    BNE  x3, x0, leak_loop
    JAL  x0, fin
transform:
    ADDI x5, x0, pt
    ADDI x7, x0, tr
    LD x19, 0(x5)
    LD x20, 8(x5)
    LD x21, 16(x5)
    LD x22, 24(x5)
    LD x23, 32(x5)
    LD x24, 40(x5)
    LD x25, 48(x5)
    LD x26, 56(x5)
    ADD x27, x19, x23
    SD  x27, 0(x7)
    ADD x27, x20, x24
    SD  x27, 8(x7)
    ADD x27, x21, x25
    SD  x27, 16(x7)
    ADD x27, x22, x26
    SD  x27, 24(x7)
    SUB x27, x19, x23
    SD  x27, 32(x7)
    SUB x27, x20, x24
    SD  x27, 40(x7)
    SUB x27, x21, x25
    SD  x27, 48(x7)
    SUB x27, x22, x26
    SD  x27, 56(x7)
    ADD  x2, x1, x0
    ADDI x9, x0, 0x777
    ADD  x2, x2, x9         # second keystream
    ADDI x3, x0, 8
    ADDI x7, x0, tr
    ADDI x4, x0, 0x62000
enc_loop:
    LD   x6, 0(x7)
    XOR  x6, x6, x2         # re-encrypted output
relstore:
    SD   x6, 0(x4)          # authorized release
    ADD  x2, x2, x8
    ADDI x7, x7, 8
    ADDI x4, x4, 8
    ADDI x3, x3, -1
    BNE  x3, x0, enc_loop
fin:
    ADDI a7, x0, 3
    ECALL
.data
ra_slot: .quad 0
pt: .zero 8
tr: .zero 8
.sensitive
key: .quad 0
"
    )
}

fn scada_host(ciphertext: &[u64; 8]) -> String {
    let mut writes = String::new();
    for (i, ct) in ciphertext.iter().enumerate() {
        writes.push_str(&format!(
            "    ADDI x1, x0, {ct}\n    ADDI x2, x0, {addr}\n    SD x1, 0(x2)\n",
            addr = SCADA_IN + 8 * i as u64
        ));
    }
    format!(
        ".entry hmain
hmain:
{writes}
    ADDI a0, x0, 0
    ADDI a7, x0, 1
    ECALL
    ADDI a7, x0, 2
    ECALL
    MOVRS x5, sr0           # probe the shared register after the switch
    ADDI x6, x0, hostout
    SD   x5, 0(x6)
    HALT
.data
hostout: .quad 0
"
    )
}

/// Run the partial-discharge pipeline with an optional planted
/// vulnerability.
pub fn run_scada(protections: bool, vuln: ScadaVuln) -> Result<ScenarioReport, ScenarioError> {
    let key = 0x1D5E_A501u64;
    let plaintext: [u64; 8] = [9, 212, 4096, 77, 500, 3, 0x8000, 42];
    let mut ciphertext = [0u64; 8];
    for i in 0..8 {
        ciphertext[i] = plaintext[i] ^ keystream(key, 0, i as u64);
    }

    let enclave_src = scada_enclave(vuln);
    let host_src = scada_host(&ciphertext);
    let (mut sim, prog, host_prog) =
        build_sim(&enclave_src, Some(vec![key]), &host_src, protections)?;
    if vuln == ScadaVuln::Overflow {
        sim.add_poke(Poke {
            at_pc: prog.symbol("ldra"),
            occurrence: 1,
            vaddr: prog.symbol("ra_slot"),
            value: prog.symbol("leak_gadget"),
        });
    }
    let report = sim.run(10_000);
    expect_halted(&report)?;

    let mut out = [0u64; 8];
    for (i, slot) in out.iter_mut().enumerate() {
        *slot = sim.read_shared_word(SCADA_OUT + 8 * i as u64).unwrap_or(0);
    }
    let hostout = sim
        .read_shared_word(host_prog.symbol("hostout"))
        .unwrap_or(0);

    let transformed = butterfly8(&plaintext);
    let mut checks = Checks::new();
    match (protections, vuln) {
        (true, ScadaVuln::None) => {
            let mut decrypted = [0u64; 8];
            for i in 0..8 {
                decrypted[i] = out[i] ^ keystream(key, KS2_OFFSET, i as u64);
            }
            checks.expect_eq(
                "released output decrypts to the transformed samples",
                decrypted,
                transformed,
            )?;
            checks.expect(
                "all eight release stores declassified",
                report.counters.declass_matches >= 8,
                format!("declass_matches = {}", report.counters.declass_matches),
            )?;
            checks.expect_eq(
                "clean pipeline has no zeroized stores",
                report.count(ViolationKind::ZeroizedStore),
                0,
            )?;
        }
        (true, ScadaVuln::Overflow) => {
            checks.expect_eq("output buffer is all zeros", out, [0u64; 8])?;
            checks.expect(
                "leak stores were zeroized",
                report.count(ViolationKind::ZeroizedStore) >= 1,
                format!("zeroized = {}", report.count(ViolationKind::ZeroizedStore)),
            )?;
        }
        (true, ScadaVuln::SharedReg) => {
            checks.expect_eq("host read of the stamped register is zero", hostout, 0)?;
            checks.expect(
                "denied read was logged",
                report.count(ViolationKind::DeniedSharedRead) >= 1,
                format!(
                    "denials = {}",
                    report.count(ViolationKind::DeniedSharedRead)
                ),
            )?;
        }
        (false, ScadaVuln::Overflow) => {
            checks.expect_eq("plaintext leaks to the output buffer", out, plaintext)?;
        }
        (false, ScadaVuln::SharedReg) => {
            checks.expect_eq(
                "plaintext word leaks via the shared register",
                hostout,
                plaintext[7],
            )?;
        }
        (false, ScadaVuln::None) => {
            let mut decrypted = [0u64; 8];
            for i in 0..8 {
                decrypted[i] = out[i] ^ keystream(key, KS2_OFFSET, i as u64);
            }
            checks.expect_eq(
                "pipeline output is correct with protections off",
                decrypted,
                transformed,
            )?;
        }
    }

    Ok(ScenarioReport {
        name: format!("scada-{vuln:?}").to_lowercase(),
        protections,
        checks: checks.list,
        report,
    })
}

fn scada_suite(protections: bool) -> Result<ScenarioReport, ScenarioError> {
    let mut all = Checks::new();
    let mut last = None;
    for vuln in [ScadaVuln::None, ScadaVuln::Overflow, ScadaVuln::SharedReg] {
        let r = run_scada(protections, vuln)?;
        all.list
            .extend(r.checks.iter().map(|c| format!("[{}] {c}", r.name)));
        last = Some(r);
    }
    let last = last.unwrap();
    Ok(ScenarioReport {
        name: "scada".into(),
        protections,
        checks: all.list,
        report: last.report,
    })
}

// --- Declassification end-to-end golden ----------------------------------

/// Six-call pipeline for the end-to-end declassification check. Every call
/// returns through a slot in memory, so the injector can bend the control
/// flow: the first poke sends mac's return back to n1, the second sends
/// sess_write's second return straight to n6, releasing the buffer while it
/// still holds the session key.
const DECLASS_CHAIN_ENCLAVE: &str = "
.entry main
.release relsd
main:
n1: JAL x5, sess_write
n2: JAL x5, kdf
n3: JAL x5, encrypt_fn
n4: JAL x5, mac_fn
n5: JAL x5, cipher_rel
n6: JAL x5, release_fn
after6:
    ADDI a7, x0, 3
    ECALL

sess_write:
    ADDI x20, x0, sw_slot
    SD   x5, 0(x20)
    ADDI x21, x0, skey
    LD   x1, 0(x21)         # session key, tainted
    ADDI x22, x0, buf
    SD   x1, 0(x22)         # buf = session_key
sw_ld:
    LD   x23, 0(x20)
    .targets n2
    JALR x0, x23, 0

kdf:
    ADDI x20, x0, kdf_slot
    SD   x5, 0(x20)
    ADDI x21, x0, skey
    LD   x2, 0(x21)
    ADDI x24, x0, 0x4DF3
    XOR  x2, x2, x24        # derived key, tainted
    LD   x23, 0(x20)
    .targets n3
    JALR x0, x23, 0

encrypt_fn:
    ADDI x20, x0, enc_slot
    SD   x5, 0(x20)
    ADDI x21, x0, input
    LD   x3, 0(x21)
    XOR  x3, x3, x2         # cipher, tainted
    LD   x23, 0(x20)
    .targets n4
    JALR x0, x23, 0

mac_fn:
    ADDI x20, x0, mac_slot
    SD   x5, 0(x20)
    ADDI x24, x0, 0x1234
    ADD  x4, x3, x24        # cipher_mac, tainted
mac_ld:
    LD   x23, 0(x20)
    .targets n5
    JALR x0, x23, 0

cipher_rel:
    ADDI x20, x0, cr_slot
    SD   x5, 0(x20)
    ADDI x22, x0, buf
    SD   x4, 0(x22)         # buf = cipher_mac
    LD   x23, 0(x20)
    .targets n6
    JALR x0, x23, 0

release_fn:
    ADDI x20, x0, rel_slot
    SD   x5, 0(x20)
    ADDI x22, x0, buf
    LD   x6, 0(x22)
    ADDI x25, x0, 0x60208
relsd:
    SD   x6, 0(x25)         # write out of the enclave
    LD   x23, 0(x20)
    .targets after6
    JALR x0, x23, 0

.data
buf: .quad 0
input: .quad 0x7777
sw_slot: .quad 0
kdf_slot: .quad 0
enc_slot: .quad 0
mac_slot: .quad 0
cr_slot: .quad 0
rel_slot: .quad 0
.sensitive
skey: .quad 0
";

const DECLASS_RELEASE_ADDR: u64 = 0x6_0208;

#[derive(Debug, Clone)]
pub struct DeclassGoldenOutcome {
    /// Value observed at the non-enclave release address after the run.
    pub released: u64,
    /// What the legitimate pipeline should release.
    pub expected_value: u64,
    /// Runtime chain digest captured at the moment of the match (legit runs).
    pub runtime_match_digest: Option<crate::declass::HashValue>,
    /// The digests carried by the image's hash section.
    pub image_hashes: Vec<crate::declass::HashValue>,
    pub zeroized: usize,
    pub report: RunReport,
}

/// Drive the six-node pipeline either straight through (release authorized)
/// or with the two return-address corruptions (release suppressed).
pub fn run_declass_golden(hijacked: bool) -> Result<DeclassGoldenOutcome, ScenarioError> {
    let skey = 0x0101_5EA5_0F0Fu64;
    let input = 0x7777u64;
    let derived = skey ^ 0x4DF3;
    let cipher = input ^ derived;
    let cipher_mac = cipher.wrapping_add(0x1234);

    let host = host_driver("", "");
    let (image, _) = build_image(DECLASS_CHAIN_ENCLAVE, Some(vec![skey]), &TEST_KEY)?;
    let image_hashes: Vec<_> = crate::binprep::ProgramImage::parse(&image)
        .map_err(|e| ScenarioError::Precondition(e.to_string()))?
        .adp_hashes()
        .map_err(|e| ScenarioError::Precondition(e.to_string()))?
        .iter()
        .copied()
        .collect();

    let (mut sim, prog, _) = build_sim(DECLASS_CHAIN_ENCLAVE, Some(vec![skey]), &host, true)?;
    if hijacked {
        sim.add_poke(Poke {
            at_pc: prog.symbol("mac_ld"),
            occurrence: 1,
            vaddr: prog.symbol("mac_slot"),
            value: prog.symbol("n1"),
        });
        sim.add_poke(Poke {
            at_pc: prog.symbol("sw_ld"),
            occurrence: 2,
            vaddr: prog.symbol("sw_slot"),
            value: prog.symbol("n6"),
        });
    }

    // single-step so the chain digest can be read at the match point
    let mut runtime_match_digest = None;
    let mut outcome = None;
    for _ in 0..10_000 {
        match sim.step() {
            crate::machine::StepOutcome::Continue => {
                if runtime_match_digest.is_none() && sim.counters.declass_matches > 0 {
                    runtime_match_digest = Some(sim.state.hash.h_current());
                }
            }
            crate::machine::StepOutcome::Halted => {
                outcome = Some(RunOutcome::Halted);
                break;
            }
            crate::machine::StepOutcome::Trap(kind) => {
                outcome = Some(RunOutcome::Trapped(kind));
                break;
            }
        }
    }
    if outcome != Some(RunOutcome::Halted) {
        return Err(ScenarioError::AssertionFailure(format!(
            "golden run ended with {outcome:?}"
        )));
    }
    let report = sim.collect_report(RunOutcome::Halted);
    let released = sim.read_shared_word(DECLASS_RELEASE_ADDR).unwrap_or(0);

    Ok(DeclassGoldenOutcome {
        released,
        expected_value: cipher_mac,
        runtime_match_digest,
        image_hashes,
        zeroized: report.count(ViolationKind::ZeroizedStore),
        report,
    })
}

// --- Differential noninterference oracle ---------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DiffResult {
    Indistinguishable,
    Distinguishable(String),
}

type Observables = (
    BTreeMap<u64, Vec<u64>>,
    Vec<u64>,
    Vec<(u64, AccessKind, u64)>,
    u64,
);

fn observe(
    enclave_src: &str,
    host_src: &str,
    secrets: &[u64],
    cfg: &SimConfig,
) -> Result<Observables, ScenarioError> {
    let (image, _) = build_image(enclave_src, Some(secrets.to_vec()), &TEST_KEY)?;
    let host_prog = assemble(host_src, LayoutConfig::host())
        .map_err(|e| ScenarioError::Precondition(format!("host assembly: {e}")))?;
    let mut sim = Simulator::new(cfg.clone(), TEST_KEY);
    sim.register_image(image);
    sim.load_host_program(host_prog);
    let report = sim.run(50_000);
    if !matches!(report.outcome, RunOutcome::Halted) {
        return Err(ScenarioError::Precondition(format!(
            "differential program did not halt: {:?}",
            report.outcome
        )));
    }
    Ok((
        sim.non_enclave_pages(),
        report.host_shared_reads,
        report.non_enclave_accesses,
        report.counters.declass_matches,
    ))
}

fn compare_observables(a: &Observables, b: &Observables) -> DiffResult {
    let (pages_a, shared_a, acc_a, _) = a;
    let (pages_b, shared_b, acc_b, _) = b;
    if pages_a != pages_b {
        for (vpage, words_a) in pages_a {
            match pages_b.get(vpage) {
                None => {
                    return DiffResult::Distinguishable(format!(
                        "page {vpage:#x} mapped only in run A"
                    ))
                }
                Some(words_b) => {
                    if let Some(i) = (0..words_a.len()).find(|&i| words_a[i] != words_b[i]) {
                        return DiffResult::Distinguishable(format!(
                            "word {i} of page {vpage:#x}: {:#x} vs {:#x}",
                            words_a[i], words_b[i]
                        ));
                    }
                }
            }
        }
        return DiffResult::Distinguishable("page set differs between runs".into());
    }
    if shared_a != shared_b {
        return DiffResult::Distinguishable(format!(
            "host shared-register reads differ: {shared_a:x?} vs {shared_b:x?}"
        ));
    }
    if acc_a != acc_b {
        return DiffResult::Distinguishable(format!(
            "non-enclave access sequences differ ({} vs {} events)",
            acc_a.len(),
            acc_b.len()
        ));
    }
    DiffResult::Indistinguishable
}

/// Run one program twice, differing only in the sensitive-section words,
/// and compare everything a non-enclave observer can see: unowned memory,
/// host shared-register reads, and the non-enclave page access sequence.
///
/// Inapplicable (and an error) when a declassification fired in either run,
/// since authorized output legitimately depends on the secret.
pub fn differential_check(
    enclave_src: &str,
    host_src: &str,
    secret_a: &[u64],
    secret_b: &[u64],
) -> Result<DiffResult, ScenarioError> {
    differential_check_with_rule(enclave_src, host_src, secret_a, secret_b, TaintRule::Or)
}

fn differential_check_with_rule(
    enclave_src: &str,
    host_src: &str,
    secret_a: &[u64],
    secret_b: &[u64],
    rule: TaintRule,
) -> Result<DiffResult, ScenarioError> {
    let cfg = SimConfig {
        taint_rule: rule,
        ..SimConfig::default()
    };
    let a = observe(enclave_src, host_src, secret_a, &cfg)?;
    let b = observe(enclave_src, host_src, secret_b, &cfg)?;
    if a.3 > 0 || b.3 > 0 {
        return Err(ScenarioError::AdpMatchedDuringRun);
    }
    Ok(compare_observables(&a, &b))
}

/// The same comparison with protections disabled, for demonstrating that
/// the observables really do depend on the secret without enforcement.
pub fn differential_check_unprotected(
    enclave_src: &str,
    host_src: &str,
    secret_a: &[u64],
    secret_b: &[u64],
) -> Result<DiffResult, ScenarioError> {
    let cfg = SimConfig::default().with_protections(false);
    let a = observe(enclave_src, host_src, secret_a, &cfg)?;
    let b = observe(enclave_src, host_src, secret_b, &cfg)?;
    Ok(compare_observables(&a, &b))
}

// --- Randomized noninterference fuzzing -----------------------------------

#[derive(Debug, Clone)]
pub struct Counterexample {
    pub program: String,
    pub secret_a: Vec<u64>,
    pub secret_b: Vec<u64>,
    pub witness: String,
}

#[derive(Debug, Clone)]
pub struct FuzzSummary {
    pub trials: u64,
    pub indistinguishable: u64,
    pub counterexamples: Vec<Counterexample>,
}

const FUZZ_SECRET_WORDS: usize = 4;

/// Generate a random enclave program whose control flow and address
/// computations stay independent of the secret words, so the explicit-flow
/// tracker must render its runs indistinguishable.
///
/// Register discipline: x1..x5 may carry secret-derived values; x8, x9 and
/// x19..x21 only ever hold clean values (constants, counters, addresses).
/// Data flows from clean into secret registers, never back.
pub fn generate_program(rng: &mut ChaCha8Rng) -> String {
    let secret_regs = ["x1", "x2", "x3", "x4", "x5"];
    let clean_regs = ["x8", "x9", "x19", "x20", "x21"];
    let ops = ["ADD", "SUB", "AND", "OR", "XOR"];
    fn pick(rng: &mut ChaCha8Rng, pool: &[&'static str]) -> &'static str {
        pool[rng.gen_range(0..pool.len())]
    }

    let mut body = String::new();
    let mut label = 0usize;

    body.push_str("    ADDI x22, x0, sdata\n    ADDI x23, x0, 0x60300\n    ADDI x24, x0, own\n");
    for (i, r) in secret_regs.iter().enumerate() {
        body.push_str(&format!(
            "    LD   {r}, {off}(x22)\n",
            off = 8 * (i % FUZZ_SECRET_WORDS)
        ));
    }
    for r in &clean_regs {
        body.push_str(&format!(
            "    ADDI {r}, x0, {}\n",
            rng.gen_range(0u64..0xFFFF)
        ));
    }

    let n_ops = rng.gen_range(12..32);
    for _ in 0..n_ops {
        match rng.gen_range(0u32..10) {
            0..=2 => {
                // secret-pool arithmetic, possibly mixing in a clean source
                let rd = pick(rng, &secret_regs);
                let rs1 = pick(rng, &secret_regs);
                let rs2 = if rng.gen_bool(0.5) {
                    pick(rng, &secret_regs)
                } else {
                    pick(rng, &clean_regs)
                };
                let op = pick(rng, &ops);
                body.push_str(&format!("    {op} {rd}, {rs1}, {rs2}\n"));
            }
            3 => {
                let rd = pick(rng, &clean_regs);
                let rs1 = pick(rng, &clean_regs);
                let rs2 = pick(rng, &clean_regs);
                let op = pick(rng, &ops);
                body.push_str(&format!("    {op} {rd}, {rs1}, {rs2}\n"));
            }
            4 => {
                // store anything to the enclave's own scratch
                let rs = if rng.gen_bool(0.7) {
                    pick(rng, &secret_regs)
                } else {
                    pick(rng, &clean_regs)
                };
                body.push_str(&format!("    SD {rs}, {}(x24)\n", 8 * rng.gen_range(0..8)));
            }
            5 => {
                // load own scratch back into the secret pool
                let rd = pick(rng, &secret_regs);
                body.push_str(&format!("    LD {rd}, {}(x24)\n", 8 * rng.gen_range(0..8)));
            }
            6 => {
                // store to the shared page: zeroized when tainted,
                // committed identically when the value is clean-derived
                let rs = if rng.gen_bool(0.7) {
                    pick(rng, &secret_regs)
                } else {
                    pick(rng, &clean_regs)
                };
                body.push_str(&format!("    SD {rs}, {}(x23)\n", 8 * rng.gen_range(0..8)));
            }
            7 => {
                // shared-register round trip within the enclave
                let rs = pick(rng, &secret_regs);
                let rd = pick(rng, &secret_regs);
                body.push_str(&format!("    MOVSR sr0, {rs}\n    MOVRS {rd}, sr0\n"));
            }
            8 => {
                // a bounded loop driven by a clean counter
                let iters = rng.gen_range(2u64..5);
                let rd = pick(rng, &secret_regs);
                let rs = pick(rng, &secret_regs);
                body.push_str(&format!(
                    "    ADDI x25, x0, {iters}\nfl{label}:\n    ADD {rd}, {rd}, {rs}\n    ADDI x25, x25, -1\n    BNE x25, x0, fl{label}\n"
                ));
                label += 1;
            }
            _ => {
                // secret-indexed access into non-enclave memory: the
                // tainted address must be replaced by the fixed one
                let rs = pick(rng, &secret_regs);
                let rd = pick(rng, &secret_regs);
                body.push_str(&format!(
                    "    ADDI x25, x0, 0x38\n    AND x26, {rs}, x25\n    ADD x26, x26, x23\n    LD {rd}, 0(x26)\n"
                ));
            }
        }
    }

    // sensitivity detector: a mixed value reaching the shared page must be
    // caught by the taint union; a broken propagation rule commits it
    body.push_str(
        "    ADDI x27, x0, sdata\n    LD x28, 0(x27)\n    XOR x28, x28, x8\n    SD x28, 56(x23)\n",
    );

    format!(
        ".entry main
.adp nb
main:
{body}
nb: BNE x0, x0, never
    ADDI a7, x0, 3
    ECALL
never:
    SD x0, 0(x23)
    ADDI a7, x0, 3
    ECALL
.data
own: .zero 8
.sensitive
sdata: .zero {FUZZ_SECRET_WORDS}
"
    )
}

/// Randomized differential testing: `n_programs` generated programs, each
/// run with `n_pairs` random secret pairs. With the architected propagation
/// rule every trial must come out indistinguishable; the mutant rule exists
/// to prove the oracle notices a broken tracker.
pub fn fuzz_noninterference(
    seed: u64,
    n_programs: u64,
    n_pairs: u64,
    rule: TaintRule,
) -> Result<FuzzSummary, ScenarioError> {
    if n_programs == 0 || n_pairs == 0 {
        return Err(ScenarioError::Precondition(
            "n_programs and n_pairs must be positive".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut summary = FuzzSummary {
        trials: 0,
        indistinguishable: 0,
        counterexamples: Vec::new(),
    };
    let host = host_driver("", "");

    for _ in 0..n_programs {
        let program = generate_program(&mut rng);
        for _ in 0..n_pairs {
            let mut secret_a: Vec<u64> = Vec::with_capacity(FUZZ_SECRET_WORDS);
            let mut secret_b: Vec<u64> = Vec::with_capacity(FUZZ_SECRET_WORDS);
            for _ in 0..FUZZ_SECRET_WORDS {
                secret_a.push(rng.gen());
                secret_b.push(rng.gen());
            }
            // the detector watches word 0; make sure the pair differs there
            if secret_a[0] == secret_b[0] {
                secret_b[0] = secret_a[0].wrapping_add(1);
            }
            summary.trials += 1;
            match differential_check_with_rule(&program, &host, &secret_a, &secret_b, rule) {
                Ok(DiffResult::Indistinguishable) => summary.indistinguishable += 1,
                Ok(DiffResult::Distinguishable(witness)) => {
                    summary.counterexamples.push(Counterexample {
                        program: program.clone(),
                        secret_a,
                        secret_b,
                        witness,
                    });
                }
                Err(ScenarioError::AdpMatchedDuringRun) => {
                    // generated programs never follow their decoy path, so a
                    // match here is a generator bug worth failing loudly
                    return Err(ScenarioError::AdpMatchedDuringRun);
                }
                Err(e) => return Err(e),
            }
        }
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_scenario() {
        assert!(matches!(
            run_scenario("av9", true),
            Err(ScenarioError::UnknownScenario(_))
        ));
    }

    #[test]
    fn fuzz_rejects_zero_programs() {
        assert!(matches!(
            fuzz_noninterference(1, 0, 3, TaintRule::Or),
            Err(ScenarioError::Precondition(_))
        ));
    }

    #[test]
    fn av1_both_modes() {
        run_scenario("av1", false).unwrap();
        run_scenario("av1", true).unwrap();
    }

    #[test]
    fn av2_both_modes() {
        run_scenario("av2", false).unwrap();
        run_scenario("av2", true).unwrap();
    }

    #[test]
    fn av3_both_modes() {
        run_scenario("av3", false).unwrap();
        run_scenario("av3", true).unwrap();
    }

    #[test]
    fn av4_both_modes() {
        run_scenario("av4", false).unwrap();
        run_scenario("av4", true).unwrap();
    }

    #[test]
    fn scada_matrix() {
        for vuln in [ScadaVuln::None, ScadaVuln::Overflow, ScadaVuln::SharedReg] {
            run_scada(true, vuln).unwrap();
        }
        run_scada(false, ScadaVuln::Overflow).unwrap();
        run_scada(false, ScadaVuln::SharedReg).unwrap();
    }

    #[test]
    fn declass_golden_legit_and_hijacked() {
        let legit = run_declass_golden(false).unwrap();
        assert_eq!(legit.released, legit.expected_value);
        assert_eq!(legit.zeroized, 0);
        assert_eq!(legit.image_hashes.len(), 1);
        assert_eq!(legit.runtime_match_digest, Some(legit.image_hashes[0]));

        let bad = run_declass_golden(true).unwrap();
        assert_eq!(bad.released, 0);
        assert!(bad.zeroized >= 1);
        assert_eq!(bad.runtime_match_digest, None);
    }

    #[test]
    fn differential_av2_secrets() {
        // the address-probe program never reaches its release site, so the
        // oracle applies; runs must look identical from outside
        let host = host_driver("", "");
        let result = differential_check(AV2_ENCLAVE, &host, &[3], &[9]).unwrap();
        assert_eq!(result, DiffResult::Indistinguishable);
    }

    #[test]
    fn differential_distinguishes_without_protections() {
        // with enforcement off the leaked cell differs between secrets
        let host = host_driver("", "");
        let result = differential_check_unprotected(AV2_ENCLAVE, &host, &[3], &[9]).unwrap();
        assert!(matches!(result, DiffResult::Distinguishable(_)));
    }

    #[test]
    fn differential_rejects_declassifying_programs() {
        // the untampered direct-copy program releases through its path, so
        // the oracle refuses to judge it
        let host = host_driver("", "");
        assert_eq!(
            differential_check(AV1_ENCLAVE, &host, &[0x11], &[0x22]),
            Err(ScenarioError::AdpMatchedDuringRun)
        );
    }

    #[test]
    fn differential_detects_leaks_when_protections_matter() {
        // sanity for the comparison itself: declare the probe access bug by
        // running the generator's detector pattern with the mutant rule
        let host = host_driver("", "");
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let program = generate_program(&mut rng);
        let r = differential_check_with_rule(
            &program,
            &host,
            &[1, 2, 3, 4],
            &[5, 6, 7, 8],
            TaintRule::AndMutant,
        )
        .unwrap();
        assert!(matches!(r, DiffResult::Distinguishable(_)));
    }

    #[test]
    fn fuzz_small_clean() {
        let summary = fuzz_noninterference(1, 6, 2, TaintRule::Or).unwrap();
        assert_eq!(summary.trials, 12);
        assert!(
            summary.counterexamples.is_empty(),
            "counterexample: {}",
            summary
                .counterexamples
                .first()
                .map(|c| format!("{}\n{}", c.witness, c.program))
                .unwrap_or_default()
        );
    }

    #[test]
    fn fuzz_mutant_detected() {
        let summary = fuzz_noninterference(7, 4, 2, TaintRule::AndMutant).unwrap();
        assert!(
            !summary.counterexamples.is_empty(),
            "planted propagation bug went unnoticed"
        );
    }
}
