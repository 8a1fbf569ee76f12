//! Build-time toolchain: assemble source, collect the sensitive section,
//! emit the taint bitmap, enumerate authorized declassification paths,
//! compute their cumulative hashes, and emit a MAC-protected program image.

pub mod asm;
pub mod cfg;
pub mod image;

use thiserror::Error;

pub use asm::{assemble, AsmError, Program};
pub use cfg::{
    build_cfg, enumerate_adps, path_hash, resolve_manual_adp, AdpError, AdpPath, Cfg, CfgError,
    CfgNode,
};
pub use image::{
    build_taint_bitmap, decode_text, encode_text, section_mac, words_to_bytes, ImageError, MacKey,
    ProgramImage, IMAGE_MAGIC, IMAGE_VERSION, SEC_DATA, SEC_ENTRY, SEC_HASHES, SEC_LAYOUT, SEC_MAC,
    SEC_SENSITIVE, SEC_TAINTS, SEC_TEXT,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PrepError {
    #[error(transparent)]
    Asm(#[from] AsmError),
    #[error(transparent)]
    Cfg(#[from] CfgError),
    #[error(transparent)]
    Adp(#[from] AdpError),
    #[error(transparent)]
    Image(#[from] ImageError),
}

pub const DEFAULT_PATH_BOUND: usize = 256;

/// Everything the prep run learned, kept for diagnostics and dump output.
#[derive(Debug, Clone)]
pub struct PrepInfo {
    pub cfg: Cfg,
    pub paths: Vec<AdpPath>,
}

/// Turn an assembled program into a loadable image.
///
/// Manual `.adp` paths, when present, bypass enumeration; otherwise every
/// static path from the entry point to a `.release` site is enumerated under
/// `path_bound`.
pub fn prepare_image(
    prog: &Program,
    key: &MacKey,
    path_bound: usize,
) -> Result<(ProgramImage, PrepInfo), PrepError> {
    let cfg = build_cfg(prog)?;

    let paths = if !prog.manual_adps.is_empty() {
        let mut out = Vec::new();
        for seq in &prog.manual_adps {
            let edges = resolve_manual_adp(prog, &cfg, seq)?;
            let digest = path_hash(&edges, &cfg);
            out.push(AdpPath {
                edges,
                release_point: seq.last().copied().unwrap_or(prog.entry),
                digest,
            });
        }
        out
    } else {
        enumerate_adps(prog, &cfg, path_bound)?
    };

    let sensitive_bytes = words_to_bytes(&prog.sensitive);
    let taints = build_taint_bitmap(&sensitive_bytes)?;

    let mut hashes = crate::declass::AdpHashSet::new();
    for p in &paths {
        hashes.insert(p.digest);
    }
    let mut hashes_bytes = Vec::with_capacity(hashes.len() * 32);
    for d in hashes.iter() {
        hashes_bytes.extend_from_slice(d);
    }

    let mut mac = Vec::with_capacity(64);
    mac.extend_from_slice(&section_mac(key, &taints));
    mac.extend_from_slice(&section_mac(key, &hashes_bytes));

    let image = ProgramImage {
        sections: vec![
            (SEC_TEXT.into(), encode_text(&prog.text)),
            (SEC_DATA.into(), words_to_bytes(&prog.data)),
            (SEC_SENSITIVE.into(), sensitive_bytes),
            (SEC_ENTRY.into(), prog.entry.to_le_bytes().to_vec()),
            (
                SEC_LAYOUT.into(),
                [
                    prog.layout.text_base.to_le_bytes(),
                    prog.layout.data_base.to_le_bytes(),
                    prog.layout.sensitive_base.to_le_bytes(),
                ]
                .concat(),
            ),
            (SEC_TAINTS.into(), taints),
            (SEC_HASHES.into(), hashes_bytes),
            (SEC_MAC.into(), mac),
        ],
    };
    Ok((image, PrepInfo { cfg, paths }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::LayoutConfig;

    const SRC: &str = "
        .entry main
        .release rel
        main: ADDI x8, x0, out
              JAL x0, fin
        fin:  ADDI x9, x0, 7
        rel:  SD x9, 0(x8)
              HALT
        .data
        out: .quad 0
        .sensitive
        key: .quad 0x1111, 0x2222
    ";

    fn key() -> MacKey {
        MacKey([0x42; 32])
    }

    #[test]
    fn prepared_image_sections() {
        let prog = assemble(SRC, LayoutConfig::enclave()).unwrap();
        let (img, info) = prepare_image(&prog, &key(), DEFAULT_PATH_BOUND).unwrap();
        assert_eq!(img.section(SEC_TAINTS).unwrap(), &[0b11]);
        assert_eq!(
            img.section(SEC_HASHES).unwrap().len(),
            32 * info.paths.len()
        );
        assert_eq!(img.section(SEC_MAC).unwrap().len(), 64);
        assert_eq!(img.entry_point().unwrap(), prog.entry);
        assert_eq!(img.layout().unwrap(), prog.layout);
        assert_eq!(img.decode_text().unwrap(), prog.text);
    }

    #[test]
    fn image_byte_stream_deterministic() {
        let prog = assemble(SRC, LayoutConfig::enclave()).unwrap();
        let (a, _) = prepare_image(&prog, &key(), DEFAULT_PATH_BOUND).unwrap();
        let (b, _) = prepare_image(&prog, &key(), DEFAULT_PATH_BOUND).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
    }

    #[test]
    fn single_edge_path_matches_runtime_chain() {
        // the prep-side digest of one edge equals the runtime first-edge form
        let prog = assemble(SRC, LayoutConfig::enclave()).unwrap();
        let (_, info) = prepare_image(&prog, &key(), DEFAULT_PATH_BOUND).unwrap();
        assert_eq!(info.paths.len(), 1);
        let jal = prog.symbol("main") + 4;
        let fin = prog.symbol("fin");
        let expect = crate::declass::chain_step(&crate::declass::INIT_HASH, jal, fin);
        assert_eq!(info.paths[0].digest, expect);
    }

    #[test]
    fn manual_adp_bypasses_enumeration() {
        let src = "
            .entry main
            .adp j1
            main: BEQ x1, x0, alt   # would enumerate two paths if released
            j1:   JAL x0, fin
            alt:  ADDI x1, x0, 1
            fin:  HALT
        ";
        let prog = assemble(src, LayoutConfig::enclave()).unwrap();
        let (img, info) = prepare_image(&prog, &key(), DEFAULT_PATH_BOUND).unwrap();
        assert_eq!(info.paths.len(), 1);
        assert_eq!(img.section(SEC_HASHES).unwrap().len(), 32);
    }
}
