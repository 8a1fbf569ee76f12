//! Control-flow graph over the assembled text, static enumeration of
//! authorized declassification paths, and build-time path hashing.
//!
//! The runtime hash engine absorbs taken control transfers only, so a path
//! here is the sequence of (source, target) pairs of taken branches and
//! jumps on the way from the entry point to a release site. Backward
//! conditional branches are capped at one traversal per path, mirroring the
//! engine's loop-once rule; the build-time chain therefore agrees with the
//! runtime digest bit for bit.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::declass::{chain_step, HashValue, INIT_HASH};
use crate::isa::{Instruction, Opcode, INSTR_BYTES};

use super::asm::Program;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CfgError {
    #[error("indirect jump at {0:#x} lacks a .targets annotation")]
    UnannotatedIndirectJump(u64),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AdpError {
    #[error("path enumeration exceeded the bound of {0}")]
    PathExplosion(usize),
    #[error("manual path is not connected in the CFG: {0}")]
    DisconnectedAdp(String),
    #[error("no release points and no manual paths")]
    NoReleasePoints,
}

/// One control-flow instruction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CfgNode {
    pub addr: u64,
    pub opcode: Opcode,
    /// Static destinations when the transfer is taken. Conditional branches
    /// and JAL have one; JALR lists its annotation.
    pub taken_targets: Vec<u64>,
    /// Fall-through address for conditional branches.
    pub fallthrough: Option<u64>,
    /// Conditional branch whose target precedes it: a loop edge.
    pub is_back_edge: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cfg {
    pub nodes: BTreeMap<u64, CfgNode>,
    pub entry: u64,
}

/// Collect every branch/jump in the text into a node, resolving JALR
/// destinations from the program's annotations.
pub fn build_cfg(prog: &Program) -> Result<Cfg, CfgError> {
    let mut nodes = BTreeMap::new();
    for (i, instr) in prog.text.iter().enumerate() {
        let addr = prog.layout.text_base + i as u64 * INSTR_BYTES;
        if !instr.opcode.is_control_flow() {
            continue;
        }
        let node = match instr.opcode {
            Opcode::Beq | Opcode::Bne | Opcode::Blt => {
                let target = instr.imm as u64;
                CfgNode {
                    addr,
                    opcode: instr.opcode,
                    taken_targets: vec![target],
                    fallthrough: Some(addr + INSTR_BYTES),
                    is_back_edge: target < addr,
                }
            }
            Opcode::Jal => CfgNode {
                addr,
                opcode: instr.opcode,
                taken_targets: vec![instr.imm as u64],
                fallthrough: None,
                is_back_edge: false,
            },
            Opcode::Jalr => {
                let targets = prog
                    .jalr_targets
                    .get(&addr)
                    .cloned()
                    .ok_or(CfgError::UnannotatedIndirectJump(addr))?;
                CfgNode {
                    addr,
                    opcode: instr.opcode,
                    taken_targets: targets,
                    fallthrough: None,
                    is_back_edge: false,
                }
            }
            _ => unreachable!(),
        };
        nodes.insert(addr, node);
    }
    Ok(Cfg {
        nodes,
        entry: prog.entry,
    })
}

/// One enumerated path: the taken edges in order, plus the release site the
/// path authorizes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdpPath {
    pub edges: Vec<(u64, u64)>,
    pub release_point: u64,
    pub digest: HashValue,
}

/// Build-time twin of the runtime chain: hash the edges in order, skipping
/// repeats of loop edges.
pub fn path_hash(edges: &[(u64, u64)], cfg: &Cfg) -> HashValue {
    let mut h = INIT_HASH;
    let mut seen_loops = BTreeSet::new();
    for &(s, t) in edges {
        let looped = cfg.nodes.get(&s).is_some_and(|n| n.is_back_edge);
        if looped && !seen_loops.insert((s, t)) {
            continue;
        }
        h = chain_step(&h, s, t);
    }
    h
}

struct Walker<'a> {
    prog: &'a Program,
    cfg: &'a Cfg,
    release_points: BTreeSet<u64>,
    bound: usize,
    paths: Vec<AdpPath>,
    seen: BTreeSet<(u64, Vec<(u64, u64)>)>,
    fuel: u64,
}

const WALK_FUEL: u64 = 1_000_000;
const MAX_PATH_EDGES: usize = 4096;

impl Walker<'_> {
    fn instr(&self, addr: u64) -> Option<&Instruction> {
        self.prog.instruction_at(addr)
    }

    fn record(&mut self, release: u64, edges: &[(u64, u64)]) -> Result<(), AdpError> {
        if edges.is_empty() {
            // an edgeless walk hashes to the init constant, which must never
            // authorize a release
            return Ok(());
        }
        let key = (release, edges.to_vec());
        if !self.seen.insert(key) {
            return Ok(());
        }
        let digest = path_hash(edges, self.cfg);
        self.paths.push(AdpPath {
            edges: edges.to_vec(),
            release_point: release,
            digest,
        });
        if self.paths.len() > self.bound {
            return Err(AdpError::PathExplosion(self.bound));
        }
        Ok(())
    }

    fn walk(
        &mut self,
        mut addr: u64,
        taken_back: &BTreeSet<(u64, u64)>,
        chain: &[(u64, u64)],
    ) -> Result<(), AdpError> {
        if chain.len() > MAX_PATH_EDGES {
            return Err(AdpError::PathExplosion(self.bound));
        }
        loop {
            self.fuel = self
                .fuel
                .checked_sub(1)
                .ok_or(AdpError::PathExplosion(self.bound))?;
            let Some(&instr) = self.instr(addr) else {
                return Ok(()); // walked off the text section
            };
            if self.release_points.contains(&addr) {
                self.record(addr, chain)?;
            }
            match instr.opcode {
                Opcode::Halt => return Ok(()),
                Opcode::Ecall => {
                    // A marked ECALL is an OCALL release site: the enclave
                    // resumes after it with the chain preserved. Any other
                    // ECALL ends the path (enclave exit).
                    if self.release_points.contains(&addr) {
                        addr += INSTR_BYTES;
                        continue;
                    }
                    return Ok(());
                }
                op if op.is_control_flow() => {
                    let node = self.cfg.nodes[&addr].clone();
                    // not-taken leg of a conditional branch
                    if let Some(ft) = node.fallthrough {
                        self.walk(ft, taken_back, chain)?;
                    }
                    for &target in &node.taken_targets {
                        let edge = (addr, target);
                        if node.is_back_edge {
                            if taken_back.contains(&edge) {
                                continue; // loop edge already spent on this path
                            }
                            let mut tb = taken_back.clone();
                            tb.insert(edge);
                            let mut c = chain.to_vec();
                            c.push(edge);
                            self.walk(target, &tb, &c)?;
                        } else {
                            let mut c = chain.to_vec();
                            c.push(edge);
                            self.walk(target, taken_back, &c)?;
                        }
                    }
                    return Ok(());
                }
                _ => addr += INSTR_BYTES,
            }
        }
    }
}

/// Enumerate every static path from the entry point to each release point,
/// with loop edges traversed at most once per path.
pub fn enumerate_adps(
    prog: &Program,
    cfg: &Cfg,
    path_bound: usize,
) -> Result<Vec<AdpPath>, AdpError> {
    if prog.release_points.is_empty() {
        return Err(AdpError::NoReleasePoints);
    }
    let mut w = Walker {
        prog,
        cfg,
        release_points: prog.release_points.iter().copied().collect(),
        bound: path_bound,
        paths: Vec::new(),
        seen: BTreeSet::new(),
        fuel: WALK_FUEL,
    };
    w.walk(cfg.entry, &BTreeSet::new(), &[])?;
    Ok(w.paths)
}

/// Resolve a manual node sequence into its taken-edge list, checking that
/// each listed node leads to the next by straight-line flow (not-taken
/// conditionals may be skipped over).
pub fn resolve_manual_adp(
    prog: &Program,
    cfg: &Cfg,
    node_seq: &[u64],
) -> Result<Vec<(u64, u64)>, AdpError> {
    let describe = |seq: &[u64]| {
        seq.iter()
            .map(|a| format!("{a:#x}"))
            .collect::<Vec<_>>()
            .join(" -> ")
    };
    if node_seq.is_empty() {
        return Err(AdpError::DisconnectedAdp("empty path".into()));
    }
    let mut edges = Vec::new();
    for (i, &addr) in node_seq.iter().enumerate() {
        let node = cfg
            .nodes
            .get(&addr)
            .ok_or_else(|| AdpError::DisconnectedAdp(describe(node_seq)))?;
        let next = node_seq.get(i + 1).copied();
        let mut chosen = None;
        for &target in &node.taken_targets {
            let ok = match next {
                Some(n) => straight_line_reaches(prog, cfg, target, n),
                None => true, // last node: any target completes the path
            };
            if ok {
                chosen = Some(target);
                break;
            }
        }
        let target = chosen.ok_or_else(|| AdpError::DisconnectedAdp(describe(node_seq)))?;
        edges.push((addr, target));
    }
    Ok(edges)
}

/// Can control reach `goal` from `from` without taking any transfer?
/// Conditional branches may fall through; jumps and enclave exits stop the
/// scan.
fn straight_line_reaches(prog: &Program, cfg: &Cfg, mut from: u64, goal: u64) -> bool {
    let mut fuel = prog.text.len() as u64 + 1;
    loop {
        if from == goal {
            return true;
        }
        if fuel == 0 {
            return false;
        }
        fuel -= 1;
        let Some(instr) = prog.instruction_at(from) else {
            return false;
        };
        match instr.opcode {
            Opcode::Halt | Opcode::Ecall | Opcode::Jal | Opcode::Jalr => return false,
            op if op.is_conditional_branch() => {
                debug_assert!(cfg.nodes.contains_key(&from));
                from += INSTR_BYTES; // not taken
            }
            _ => from += INSTR_BYTES,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::LayoutConfig;

    fn prep(src: &str) -> (Program, Cfg) {
        let prog = super::super::asm::assemble(src, LayoutConfig::enclave()).unwrap();
        let cfg = build_cfg(&prog).unwrap();
        (prog, cfg)
    }

    #[test]
    fn straight_line_has_no_nodes() {
        let (_, cfg) = prep(".entry m\nm: ADDI x1, x0, 1\nADD x2, x1, x1\nHALT\n");
        assert!(cfg.nodes.is_empty());
    }

    #[test]
    fn backward_branch_marked() {
        let (p, cfg) = prep(
            ".entry m
             m: ADDI x1, x0, 3
             loop: ADDI x1, x1, -1
                   BNE x1, x0, loop
             HALT
        ",
        );
        assert_eq!(cfg.nodes.len(), 1);
        let node = cfg.nodes.values().next().unwrap();
        assert!(node.is_back_edge);
        assert_eq!(node.taken_targets, vec![p.symbol("loop")]);
    }

    #[test]
    fn jalr_needs_annotation() {
        let prog = super::super::asm::assemble(
            ".entry m\nm: JALR x0, x1, 0\nHALT\n",
            LayoutConfig::enclave(),
        )
        .unwrap();
        assert!(matches!(
            build_cfg(&prog),
            Err(CfgError::UnannotatedIndirectJump(_))
        ));
    }

    #[test]
    fn linear_chain_single_path() {
        // six jumps in a row, release at the end
        let (prog, cfg) = prep(
            ".entry m
             .release rel
             m:  JAL x0, n2
             n2: JAL x0, n3
             n3: JAL x0, n4
             n4: JAL x0, n5
             n5: JAL x0, n6
             n6: JAL x0, fin
             fin: ADDI x9, x0, 8
             rel: SD x9, 0(x8)
             HALT
        ",
        );
        let paths = enumerate_adps(&prog, &cfg, 256).unwrap();
        assert_eq!(paths.len(), 1);
        assert_eq!(paths[0].edges.len(), 6);
        assert_eq!(paths[0].release_point, prog.symbol("rel"));
    }

    #[test]
    fn diamond_yields_two_paths() {
        let (prog, cfg) = prep(
            ".entry m
             .release rel
             m:   BEQ x1, x0, right
             left: ADDI x2, x0, 1
                   JAL x0, join
             right: ADDI x2, x0, 2
             join: ADDI x3, x0, 3
             rel:  SD x2, 0(x8)
             HALT
        ",
        );
        let paths = enumerate_adps(&prog, &cfg, 256).unwrap();
        assert_eq!(paths.len(), 2);
        // brute-force oracle: walk the 2-node graph by hand
        // taken: (m, right) then straight to rel -> 1 edge
        // not taken: left, JAL join -> 1 edge (the JAL)
        let digests: BTreeSet<_> = paths.iter().map(|p| p.digest).collect();
        let m = prog.symbol("m");
        let jal = prog.symbol("left") + 4;
        let by_hand_taken = path_hash(&[(m, prog.symbol("right"))], &cfg);
        let by_hand_not = path_hash(&[(jal, prog.symbol("join"))], &cfg);
        assert_eq!(digests, BTreeSet::from([by_hand_taken, by_hand_not]));
    }

    #[test]
    fn diamond_explodes_bound_one() {
        let (prog, cfg) = prep(
            ".entry m
             .release rel
             m:   BEQ x1, x0, right
             left: JAL x0, join
             right: ADDI x2, x0, 2
             join: ADDI x3, x0, 3
             rel:  SD x2, 0(x8)
             HALT
        ",
        );
        assert_eq!(
            enumerate_adps(&prog, &cfg, 1),
            Err(AdpError::PathExplosion(1))
        );
    }

    #[test]
    fn loop_enumerates_zero_and_one_traversal() {
        let (prog, cfg) = prep(
            ".entry m
             .release rel
             m: ADDI x1, x0, 8
             loop: ADDI x1, x1, -1
             rel:  SD x1, 0(x8)
                   BNE x1, x0, loop
             HALT
        ",
        );
        let paths = enumerate_adps(&prog, &cfg, 256).unwrap();
        // the pre-back-edge arrival has no edges and is dropped; one
        // traversal of the loop gives the single authorized chain
        assert_eq!(paths.len(), 1);
        assert_eq!(paths[0].edges.len(), 1);
        let _ = prog;
    }

    #[test]
    fn path_hash_dedupes_loop_edges() {
        let (prog, cfg) = prep(
            ".entry m
             m: ADDI x1, x0, 8
             loop: ADDI x1, x1, -1
                   BNE x1, x0, loop
             HALT
        ",
        );
        let b = prog.symbol("loop") + 4;
        let l = prog.symbol("loop");
        let once = path_hash(&[(b, l)], &cfg);
        let listed_twice = path_hash(&[(b, l), (b, l)], &cfg);
        assert_eq!(once, listed_twice);
    }

    #[test]
    fn empty_edge_list_hashes_to_init() {
        let (_, cfg) = prep(".entry m\nm: HALT\n");
        assert_eq!(path_hash(&[], &cfg), INIT_HASH);
    }

    #[test]
    fn manual_adp_connectivity() {
        let (prog, cfg) = prep(
            ".entry m
             m:  JAL x0, mid
             mid: ADDI x1, x0, 1
             j2: JAL x0, fin
             fin: HALT
        ",
        );
        let m = prog.symbol("m");
        let j2 = prog.symbol("j2");
        let edges = resolve_manual_adp(&prog, &cfg, &[m, j2]).unwrap();
        assert_eq!(
            edges,
            vec![(m, prog.symbol("mid")), (j2, prog.symbol("fin"))]
        );
        // j2 cannot lead back to m
        assert!(matches!(
            resolve_manual_adp(&prog, &cfg, &[j2, m]),
            Err(AdpError::DisconnectedAdp(_))
        ));
    }
}
