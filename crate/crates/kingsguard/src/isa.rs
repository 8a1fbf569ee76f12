//! Minimal 64-bit RISC-like instruction set used by the simulator.
//!
//! Instructions are kept in decoded form; the program image stores them as
//! fixed 16-byte records (see [`crate::binprep::image`]). Every instruction
//! occupies 4 bytes of the virtual text space so that program counters and
//! branch targets behave like a conventional RISC machine.

use std::fmt;

/// Byte footprint of one instruction in the virtual address space.
pub const INSTR_BYTES: u64 = 4;

/// Number of general-purpose registers. Register `x0` is hardwired to zero.
pub const NUM_REGS: usize = 32;

/// ABI argument registers: `a0` is `x10`, ..., `a7` is `x17`.
pub const REG_A0: usize = 10;
pub const REG_A1: usize = 11;
pub const REG_A2: usize = 12;
pub const REG_A7: usize = 17;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Opcode {
    Add = 0,
    Sub = 1,
    And = 2,
    Or = 3,
    Xor = 4,
    Sll = 5,
    Srl = 6,
    Addi = 7,
    Ld = 8,
    Sd = 9,
    Beq = 10,
    Bne = 11,
    Blt = 12,
    Jal = 13,
    Jalr = 14,
    Movsr = 15,
    Movrs = 16,
    Ecall = 17,
    Halt = 18,
}

impl Opcode {
    pub fn from_u8(v: u8) -> Option<Self> {
        use Opcode::*;
        Some(match v {
            0 => Add,
            1 => Sub,
            2 => And,
            3 => Or,
            4 => Xor,
            5 => Sll,
            6 => Srl,
            7 => Addi,
            8 => Ld,
            9 => Sd,
            10 => Beq,
            11 => Bne,
            12 => Blt,
            13 => Jal,
            14 => Jalr,
            15 => Movsr,
            16 => Movrs,
            17 => Ecall,
            18 => Halt,
            _ => return None,
        })
    }

    pub fn mnemonic(self) -> &'static str {
        use Opcode::*;
        match self {
            Add => "ADD",
            Sub => "SUB",
            And => "AND",
            Or => "OR",
            Xor => "XOR",
            Sll => "SLL",
            Srl => "SRL",
            Addi => "ADDI",
            Ld => "LD",
            Sd => "SD",
            Beq => "BEQ",
            Bne => "BNE",
            Blt => "BLT",
            Jal => "JAL",
            Jalr => "JALR",
            Movsr => "MOVSR",
            Movrs => "MOVRS",
            Ecall => "ECALL",
            Halt => "HALT",
        }
    }

    /// True for BEQ/BNE/BLT.
    pub fn is_conditional_branch(self) -> bool {
        matches!(self, Opcode::Beq | Opcode::Bne | Opcode::Blt)
    }

    /// True for every instruction that can commit a control transfer.
    pub fn is_control_flow(self) -> bool {
        self.is_conditional_branch() || matches!(self, Opcode::Jal | Opcode::Jalr)
    }
}

/// One decoded instruction.
///
/// Field use depends on the opcode:
/// - register format (`ADD`..`SRL`): `rd`, `rs1`, `rs2`
/// - immediate format (`ADDI`): `rd`, `rs1`, `imm`
/// - load (`LD rd, imm(rs1)`): `rd`, `rs1`, `imm`
/// - store (`SD rs2, imm(rs1)`): `rs1` base, `rs2` source, `imm`
/// - branches (`BEQ rs1, rs2, target`): `rs1`, `rs2`, `imm` = absolute target
/// - `JAL rd, target`: `rd`, `imm` = absolute target
/// - `JALR rd, rs1, imm`: target = `rs1 + imm`
/// - `MOVSR sr, rs1` / `MOVRS rd, sr`: shared-register index in `sr`
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Instruction {
    pub opcode: Opcode,
    pub rd: u8,
    pub rs1: u8,
    pub rs2: u8,
    pub sr: u8,
    pub imm: i64,
}

impl Instruction {
    pub fn new(opcode: Opcode) -> Self {
        Instruction {
            opcode,
            rd: 0,
            rs1: 0,
            rs2: 0,
            sr: 0,
            imm: 0,
        }
    }
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Opcode::*;
        let m = self.opcode.mnemonic();
        match self.opcode {
            Add | Sub | And | Or | Xor | Sll | Srl => {
                write!(f, "{} x{}, x{}, x{}", m, self.rd, self.rs1, self.rs2)
            }
            Addi => write!(f, "{} x{}, x{}, {}", m, self.rd, self.rs1, self.imm),
            Ld => write!(f, "{} x{}, {}(x{})", m, self.rd, self.imm, self.rs1),
            Sd => write!(f, "{} x{}, {}(x{})", m, self.rs2, self.imm, self.rs1),
            Beq | Bne | Blt => {
                write!(f, "{} x{}, x{}, {:#x}", m, self.rs1, self.rs2, self.imm)
            }
            Jal => write!(f, "{} x{}, {:#x}", m, self.rd, self.imm),
            Jalr => write!(f, "{} x{}, x{}, {}", m, self.rd, self.rs1, self.imm),
            Movsr => write!(f, "{} sr{}, x{}", m, self.sr, self.rs1),
            Movrs => write!(f, "{} x{}, sr{}", m, self.rd, self.sr),
            Ecall | Halt => write!(f, "{}", m),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn opcode_roundtrip() {
        for v in 0u8..=18 {
            let op = Opcode::from_u8(v).unwrap();
            assert_eq!(op as u8, v);
        }
        assert!(Opcode::from_u8(19).is_none());
        assert!(Opcode::from_u8(255).is_none());
    }

    #[test]
    fn control_flow_classification() {
        assert!(Opcode::Beq.is_conditional_branch());
        assert!(Opcode::Jal.is_control_flow());
        assert!(!Opcode::Jal.is_conditional_branch());
        assert!(!Opcode::Add.is_control_flow());
        assert!(!Opcode::Ecall.is_control_flow());
    }
}
