//! Two-pass assembler for the simulator's textual assembly language.
//!
//! Syntax sketch:
//!
//! ```text
//! .text                       # section switches
//! .entry main                 # exactly one entry point
//! .release out_store          # marks a declassification release site
//! .targets done, fixup        # allowed targets of the next JALR
//! .handler on_irq             # host interrupt handler (host programs)
//! .adp n1, n2, n3             # manual declassification path
//! main:
//!     ADDI a0, x0, buf        # labels usable wherever an immediate fits
//!     LD   x1, 8(a0)
//!     BNE  x1, x0, main
//! out_store:
//!     SD   x1, 0(a0)
//!     HALT
//! .data
//! buf:  .quad 1, 0x2A, -3
//!       .zero 4               # four zero words
//! .sensitive
//! key:  .quad 0xDEADBEEF
//! ```
//!
//! Comments start with `#` or `;`. Registers are `x0`..`x31` with ABI
//! aliases `a0`..`a7` for `x10`..`x17`; shared registers are `sr0`, `sr1`, and so on.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::config::LayoutConfig;
use crate::isa::{Instruction, Opcode, INSTR_BYTES};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AsmError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {1}: duplicate label `{0}`")]
    DuplicateLabel(String, usize),
    #[error("line {1}: unresolved label `{0}`")]
    UnresolvedLabel(String, usize),
    #[error("program must declare exactly one .entry")]
    EntryCount,
    #[error(".entry label `{0}` is not in .text")]
    EntryNotInText(String),
    #[error(".release label `{0}` is not in .text")]
    ReleaseNotInText(String),
    #[error(".handler label `{0}` is not in .text")]
    HandlerNotInText(String),
}

/// Assembled program: decoded text plus data/sensitive words, the symbol
/// table, and the prep annotations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Program {
    pub layout: LayoutConfig,
    pub text: Vec<Instruction>,
    pub data: Vec<u64>,
    pub sensitive: Vec<u64>,
    pub entry: u64,
    pub handler: Option<u64>,
    /// Virtual addresses of instructions marked `.release`.
    pub release_points: Vec<u64>,
    /// Manual declassification paths as node-address sequences.
    pub manual_adps: Vec<Vec<u64>>,
    /// Allowed destinations of each annotated JALR, keyed by its address.
    pub jalr_targets: BTreeMap<u64, Vec<u64>>,
    pub symbols: BTreeMap<String, u64>,
}

impl Program {
    pub fn symbol(&self, name: &str) -> u64 {
        self.symbols[name]
    }

    pub fn text_end(&self) -> u64 {
        self.layout.text_base + self.text.len() as u64 * INSTR_BYTES
    }

    pub fn instruction_at(&self, vaddr: u64) -> Option<&Instruction> {
        if vaddr < self.layout.text_base || !vaddr.is_multiple_of(INSTR_BYTES) {
            return None;
        }
        self.text
            .get(((vaddr - self.layout.text_base) / INSTR_BYTES) as usize)
    }

    /// Replace the sensitive-section words (used to vary secrets between
    /// runs of one program).
    pub fn with_sensitive_words(mut self, words: Vec<u64>) -> Self {
        self.sensitive = words;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Section {
    Text,
    Data,
    Sensitive,
}

enum Line {
    Instr(Instruction, Vec<PendingLabel>),
    Words(Vec<WordInit>),
}

/// An operand that still needs the symbol table.
struct PendingLabel {
    field: ImmField,
    name: String,
    line: usize,
}

enum ImmField {
    Imm,
}

enum WordInit {
    Value(u64),
    Label(String, usize),
}

struct PassState {
    section: Section,
    text_len: u64,
    data_len: u64,
    sensitive_len: u64,
}

pub fn assemble(source: &str, layout: LayoutConfig) -> Result<Program, AsmError> {
    let mut labels: BTreeMap<String, u64> = BTreeMap::new();
    let mut lines: Vec<(usize, Line, Section)> = Vec::new();
    let mut entry_label: Option<(String, usize)> = None;
    let mut handler_label: Option<(String, usize)> = None;
    let mut release_labels: Vec<(String, usize)> = Vec::new();
    let mut adp_label_seqs: Vec<Vec<(String, usize)>> = Vec::new();
    let mut pending_targets: Option<Vec<(String, usize)>> = None;
    let mut jalr_target_labels: Vec<(u64, Vec<(String, usize)>)> = Vec::new();

    let mut st = PassState {
        section: Section::Text,
        text_len: 0,
        data_len: 0,
        sensitive_len: 0,
    };

    for (lineno, raw) in source.lines().enumerate() {
        let lineno = lineno + 1;
        let mut line = raw;
        if let Some(i) = line.find(['#', ';']) {
            line = &line[..i];
        }
        let mut line = line.trim();
        if line.is_empty() {
            continue;
        }

        // leading labels
        while let Some(colon) = line.find(':') {
            let (label, rest) = line.split_at(colon);
            let label = label.trim();
            if !is_ident(label) {
                return Err(AsmError::Parse {
                    line: lineno,
                    msg: format!("bad label `{label}`"),
                });
            }
            let addr = current_addr(&st, layout);
            if labels.insert(label.to_string(), addr).is_some() {
                return Err(AsmError::DuplicateLabel(label.to_string(), lineno));
            }
            line = rest[1..].trim();
        }
        if line.is_empty() {
            continue;
        }

        if let Some(rest) = line.strip_prefix('.') {
            let (dir, args) = rest.split_once(char::is_whitespace).unwrap_or((rest, ""));
            let args = args.trim();
            match dir {
                "text" => st.section = Section::Text,
                "data" => st.section = Section::Data,
                "sensitive" => st.section = Section::Sensitive,
                "entry" => {
                    if entry_label.replace((args.to_string(), lineno)).is_some() {
                        return Err(AsmError::EntryCount);
                    }
                }
                "handler" => handler_label = Some((args.to_string(), lineno)),
                "release" => release_labels.push((args.to_string(), lineno)),
                "adp" => {
                    adp_label_seqs.push(
                        args.split(',')
                            .map(|s| (s.trim().to_string(), lineno))
                            .collect(),
                    );
                }
                "targets" => {
                    pending_targets = Some(
                        args.split(',')
                            .map(|s| (s.trim().to_string(), lineno))
                            .collect(),
                    );
                }
                "quad" | "zero" => {
                    let words = parse_words(dir, args, lineno)?;
                    bump_words(&mut st, words.len() as u64, lineno)?;
                    lines.push((lineno, Line::Words(words), st.section));
                }
                _ => {
                    return Err(AsmError::Parse {
                        line: lineno,
                        msg: format!("unknown directive .{dir}"),
                    })
                }
            }
            continue;
        }

        match st.section {
            Section::Text => {
                let addr = layout.text_base + st.text_len * INSTR_BYTES;
                let (instr, pend) = parse_instr(line, lineno)?;
                if instr.opcode == Opcode::Jalr {
                    if let Some(ts) = pending_targets.take() {
                        jalr_target_labels.push((addr, ts));
                    }
                }
                st.text_len += 1;
                lines.push((lineno, Line::Instr(instr, pend), Section::Text));
            }
            _ => {
                // bare word list shorthand inside data sections
                let words = parse_words("quad", line, lineno)?;
                bump_words(&mut st, words.len() as u64, lineno)?;
                lines.push((lineno, Line::Words(words), st.section));
            }
        }
    }

    // pass 2: resolve
    let resolve = |name: &str, line: usize| -> Result<u64, AsmError> {
        labels
            .get(name)
            .copied()
            .ok_or_else(|| AsmError::UnresolvedLabel(name.to_string(), line))
    };

    let mut text = Vec::new();
    let mut data = Vec::new();
    let mut sensitive = Vec::new();
    for (_, line, section) in lines {
        match line {
            Line::Instr(mut instr, pend) => {
                for p in pend {
                    let v = resolve(&p.name, p.line)?;
                    match p.field {
                        ImmField::Imm => instr.imm = v as i64,
                    }
                }
                text.push(instr);
            }
            Line::Words(words) => {
                let out = match section {
                    Section::Data => &mut data,
                    Section::Sensitive => &mut sensitive,
                    Section::Text => unreachable!(),
                };
                for w in words {
                    out.push(match w {
                        WordInit::Value(v) => v,
                        WordInit::Label(name, line) => resolve(&name, line)?,
                    });
                }
            }
        }
    }

    let (entry_label, entry_line) = entry_label.ok_or(AsmError::EntryCount)?;
    let entry = resolve(&entry_label, entry_line)?;
    let text_end = layout.text_base + text.len() as u64 * INSTR_BYTES;
    let in_text = |a: u64| a >= layout.text_base && a < text_end;
    if !in_text(entry) {
        return Err(AsmError::EntryNotInText(entry_label));
    }

    let handler = match handler_label {
        Some((name, line)) => {
            let a = resolve(&name, line)?;
            if !in_text(a) {
                return Err(AsmError::HandlerNotInText(name));
            }
            Some(a)
        }
        None => None,
    };

    let mut release_points = Vec::new();
    for (name, line) in release_labels {
        let a = resolve(&name, line)?;
        if !in_text(a) {
            return Err(AsmError::ReleaseNotInText(name));
        }
        release_points.push(a);
    }

    let mut manual_adps = Vec::new();
    for seq in adp_label_seqs {
        let mut path = Vec::new();
        for (name, line) in seq {
            path.push(resolve(&name, line)?);
        }
        manual_adps.push(path);
    }

    let mut jalr_targets = BTreeMap::new();
    for (addr, ts) in jalr_target_labels {
        let mut resolved = Vec::new();
        for (name, line) in ts {
            resolved.push(resolve(&name, line)?);
        }
        jalr_targets.insert(addr, resolved);
    }

    Ok(Program {
        layout,
        text,
        data,
        sensitive,
        entry,
        handler,
        release_points,
        manual_adps,
        jalr_targets,
        symbols: labels,
    })
}

fn current_addr(st: &PassState, layout: LayoutConfig) -> u64 {
    match st.section {
        Section::Text => layout.text_base + st.text_len * INSTR_BYTES,
        Section::Data => layout.data_base + st.data_len * 8,
        Section::Sensitive => layout.sensitive_base + st.sensitive_len * 8,
    }
}

fn bump_words(st: &mut PassState, n: u64, line: usize) -> Result<(), AsmError> {
    match st.section {
        Section::Text => Err(AsmError::Parse {
            line,
            msg: "data directive inside .text".into(),
        }),
        Section::Data => {
            st.data_len += n;
            Ok(())
        }
        Section::Sensitive => {
            st.sensitive_len += n;
            Ok(())
        }
    }
}

fn parse_words(dir: &str, args: &str, line: usize) -> Result<Vec<WordInit>, AsmError> {
    if dir == "zero" {
        let n: u64 = args.trim().parse().map_err(|_| AsmError::Parse {
            line,
            msg: format!("bad .zero count `{args}`"),
        })?;
        return Ok((0..n).map(|_| WordInit::Value(0)).collect());
    }
    args.split(',')
        .map(|tok| {
            let tok = tok.trim();
            match parse_int(tok) {
                Some(v) => Ok(WordInit::Value(v)),
                None if is_ident(tok) => Ok(WordInit::Label(tok.to_string(), line)),
                None => Err(AsmError::Parse {
                    line,
                    msg: format!("bad word value `{tok}`"),
                }),
            }
        })
        .collect()
}

fn is_ident(s: &str) -> bool {
    !s.is_empty()
        && s.chars().next().unwrap().is_ascii_alphabetic()
        && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn parse_int(tok: &str) -> Option<u64> {
    let (neg, t) = match tok.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, tok),
    };
    let mag = if let Some(hex) = t.strip_prefix("0x").or_else(|| t.strip_prefix("0X")) {
        u64::from_str_radix(hex, 16).ok()?
    } else {
        t.parse::<u64>().ok()?
    };
    Some(if neg {
        (mag as i64).wrapping_neg() as u64
    } else {
        mag
    })
}

fn parse_reg(tok: &str, line: usize) -> Result<u8, AsmError> {
    let err = || AsmError::Parse {
        line,
        msg: format!("bad register `{tok}`"),
    };
    if let Some(n) = tok.strip_prefix('x') {
        let n: u8 = n.parse().map_err(|_| err())?;
        if n < 32 {
            return Ok(n);
        }
    } else if let Some(n) = tok.strip_prefix('a') {
        let n: u8 = n.parse().map_err(|_| err())?;
        if n < 8 {
            return Ok(10 + n);
        }
    }
    Err(err())
}

fn parse_sr(tok: &str, line: usize) -> Result<u8, AsmError> {
    tok.strip_prefix("sr")
        .and_then(|n| n.parse().ok())
        .ok_or_else(|| AsmError::Parse {
            line,
            msg: format!("bad shared register `{tok}`"),
        })
}

enum ImmTok {
    Value(i64),
    Label(String),
}

fn parse_imm_tok(tok: &str, line: usize) -> Result<ImmTok, AsmError> {
    match parse_int(tok) {
        Some(v) => Ok(ImmTok::Value(v as i64)),
        None if is_ident(tok) => Ok(ImmTok::Label(tok.to_string())),
        None => Err(AsmError::Parse {
            line,
            msg: format!("bad immediate `{tok}`"),
        }),
    }
}

/// `imm(reg)` memory operand.
fn parse_mem_operand(tok: &str, line: usize) -> Result<(i64, u8), AsmError> {
    let err = || AsmError::Parse {
        line,
        msg: format!("bad memory operand `{tok}`"),
    };
    let open = tok.find('(').ok_or_else(err)?;
    if !tok.ends_with(')') {
        return Err(err());
    }
    let imm = parse_int(tok[..open].trim()).ok_or_else(err)? as i64;
    let reg = parse_reg(tok[open + 1..tok.len() - 1].trim(), line)?;
    Ok((imm, reg))
}

fn parse_instr(line: &str, lineno: usize) -> Result<(Instruction, Vec<PendingLabel>), AsmError> {
    let (mnem, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
    let ops: Vec<&str> = if rest.trim().is_empty() {
        Vec::new()
    } else {
        rest.split(',').map(str::trim).collect()
    };
    let want = |n: usize| -> Result<(), AsmError> {
        if ops.len() == n {
            Ok(())
        } else {
            Err(AsmError::Parse {
                line: lineno,
                msg: format!("{mnem} wants {n} operands, got {}", ops.len()),
            })
        }
    };

    use Opcode::*;
    let mut pend = Vec::new();
    let mut imm_operand = |instr: &mut Instruction, tok: &str| -> Result<(), AsmError> {
        match parse_imm_tok(tok, lineno)? {
            ImmTok::Value(v) => instr.imm = v,
            ImmTok::Label(name) => pend.push(PendingLabel {
                field: ImmField::Imm,
                name,
                line: lineno,
            }),
        }
        Ok(())
    };

    let opcode = match mnem.to_ascii_uppercase().as_str() {
        "ADD" => Add,
        "SUB" => Sub,
        "AND" => And,
        "OR" => Or,
        "XOR" => Xor,
        "SLL" => Sll,
        "SRL" => Srl,
        "ADDI" => Addi,
        "LD" => Ld,
        "SD" => Sd,
        "BEQ" => Beq,
        "BNE" => Bne,
        "BLT" => Blt,
        "JAL" => Jal,
        "JALR" => Jalr,
        "MOVSR" => Movsr,
        "MOVRS" => Movrs,
        "ECALL" => Ecall,
        "HALT" => Halt,
        other => {
            return Err(AsmError::Parse {
                line: lineno,
                msg: format!("unknown mnemonic `{other}`"),
            })
        }
    };

    let mut instr = Instruction::new(opcode);
    match opcode {
        Add | Sub | And | Or | Xor | Sll | Srl => {
            want(3)?;
            instr.rd = parse_reg(ops[0], lineno)?;
            instr.rs1 = parse_reg(ops[1], lineno)?;
            instr.rs2 = parse_reg(ops[2], lineno)?;
        }
        Addi => {
            want(3)?;
            instr.rd = parse_reg(ops[0], lineno)?;
            instr.rs1 = parse_reg(ops[1], lineno)?;
            imm_operand(&mut instr, ops[2])?;
        }
        Ld => {
            want(2)?;
            instr.rd = parse_reg(ops[0], lineno)?;
            let (imm, rs1) = parse_mem_operand(ops[1], lineno)?;
            instr.imm = imm;
            instr.rs1 = rs1;
        }
        Sd => {
            want(2)?;
            instr.rs2 = parse_reg(ops[0], lineno)?;
            let (imm, rs1) = parse_mem_operand(ops[1], lineno)?;
            instr.imm = imm;
            instr.rs1 = rs1;
        }
        Beq | Bne | Blt => {
            want(3)?;
            instr.rs1 = parse_reg(ops[0], lineno)?;
            instr.rs2 = parse_reg(ops[1], lineno)?;
            imm_operand(&mut instr, ops[2])?;
        }
        Jal => {
            want(2)?;
            instr.rd = parse_reg(ops[0], lineno)?;
            imm_operand(&mut instr, ops[1])?;
        }
        Jalr => {
            want(3)?;
            instr.rd = parse_reg(ops[0], lineno)?;
            instr.rs1 = parse_reg(ops[1], lineno)?;
            imm_operand(&mut instr, ops[2])?;
        }
        Movsr => {
            want(2)?;
            instr.sr = parse_sr(ops[0], lineno)?;
            instr.rs1 = parse_reg(ops[1], lineno)?;
        }
        Movrs => {
            want(2)?;
            instr.rd = parse_reg(ops[0], lineno)?;
            instr.sr = parse_sr(ops[1], lineno)?;
        }
        Ecall | Halt => want(0)?,
    }
    Ok((instr, pend))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn asm(src: &str) -> Program {
        assemble(src, LayoutConfig::enclave()).unwrap()
    }

    #[test]
    fn minimal_halt_program() {
        let p = asm(".entry main\nmain: HALT\n");
        assert_eq!(p.text.len(), 1);
        assert_eq!(p.text[0].opcode, Opcode::Halt);
        assert_eq!(p.entry, LayoutConfig::enclave().text_base);
    }

    #[test]
    fn sections_and_addresses() {
        let p = asm(".entry main
             .text
             main: ADDI a0, x0, buf
                   LD x1, 8(a0)
                   HALT
             .data
             buf: .quad 1, 0x2A, -3
             .sensitive
             key: .quad 0xDEAD
        ");
        let l = LayoutConfig::enclave();
        assert_eq!(p.symbol("buf"), l.data_base);
        assert_eq!(p.symbol("key"), l.sensitive_base);
        assert_eq!(p.data, vec![1, 0x2A, (-3i64) as u64]);
        assert_eq!(p.sensitive, vec![0xDEAD]);
        // ADDI immediate resolved to buf's address
        assert_eq!(p.text[0].imm, l.data_base as i64);
        // three quadwords of sensitive data means 24 bytes
        let p2 = asm(".entry m\nm: HALT\n.sensitive\ns: .quad 1, 2, 3\n");
        assert_eq!(p2.sensitive.len() * 8, 24);
    }

    #[test]
    fn duplicate_label_rejected() {
        let err = assemble(".entry a\na: HALT\na: HALT\n", LayoutConfig::enclave()).unwrap_err();
        assert!(matches!(err, AsmError::DuplicateLabel(name, _) if name == "a"));
    }

    #[test]
    fn unresolved_label_rejected() {
        let err = assemble(
            ".entry main\nmain: JAL x0, nowhere\n",
            LayoutConfig::enclave(),
        )
        .unwrap_err();
        assert!(matches!(err, AsmError::UnresolvedLabel(name, _) if name == "nowhere"));
    }

    #[test]
    fn entry_required_and_unique() {
        assert_eq!(
            assemble("main: HALT\n", LayoutConfig::enclave()).unwrap_err(),
            AsmError::EntryCount
        );
        assert_eq!(
            assemble(
                ".entry a\n.entry b\na: HALT\nb: HALT\n",
                LayoutConfig::enclave()
            )
            .unwrap_err(),
            AsmError::EntryCount
        );
    }

    #[test]
    fn release_must_be_text() {
        let err = assemble(
            ".entry m\n.release d\nm: HALT\n.data\nd: .quad 0\n",
            LayoutConfig::enclave(),
        )
        .unwrap_err();
        assert!(matches!(err, AsmError::ReleaseNotInText(_)));
    }

    #[test]
    fn jalr_targets_attach_to_next_jalr() {
        let p = asm(".entry m
             m: ADDI x1, x0, t
                .targets t, u
                JALR x0, x1, 0
             t: HALT
             u: HALT
        ");
        let jalr_addr = p.symbol("m") + 4;
        assert_eq!(
            p.jalr_targets[&jalr_addr],
            vec![p.symbol("t"), p.symbol("u")]
        );
    }

    #[test]
    fn store_operand_convention() {
        // SD rs2, imm(rs1): value register first, base in parentheses
        let p = asm(".entry m\nm: SD x5, 16(x6)\nHALT\n");
        let i = p.text[0];
        assert_eq!(i.rs2, 5);
        assert_eq!(i.rs1, 6);
        assert_eq!(i.imm, 16);
    }

    #[test]
    fn register_aliases() {
        let p = asm(".entry m\nm: ADD a0, a7, x3\nHALT\n");
        assert_eq!(p.text[0].rd, 10);
        assert_eq!(p.text[0].rs1, 17);
    }

    #[test]
    fn comments_and_blank_lines() {
        let p = asm("# header\n.entry m  ; trailing\n\nm: HALT # done\n");
        assert_eq!(p.text.len(), 1);
    }
}
