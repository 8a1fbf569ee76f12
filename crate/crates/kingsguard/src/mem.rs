//! Physical memory with a reserved shadow region, the ownership table, and
//! per-context page tables with lazy allocation.
//!
//! The shadow region sits at the top of physical memory and stores one taint
//! bit per 64-bit data word: each 4 KiB data page maps to exactly 64 bytes of
//! shadow storage. The region is never mapped into any page table; every
//! simulated access is checked against it.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::config::{PAGE_SIZE, WORD_BYTES};

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum MemError {
    #[error("page fault at {0:#x}")]
    PageFault(u64),
    #[error("access to shadow region at {0:#x}")]
    ShadowRegionAccess(u64),
    #[error("misaligned access at {0:#x}")]
    Misaligned(u64),
    #[error("ownership violation at {0:#x}")]
    OwnershipViolation(u64),
    #[error("out of physical memory")]
    OutOfPhysicalMemory,
}

/// Shadow byte address and bit index for a data word.
///
/// One shadow byte covers 8 consecutive data words (64 data bytes); the bit
/// within the byte is the word index, i.e. address bits 5..3.
pub fn shadow_address(
    data_paddr: u64,
    data_base: u64,
    shadow_base: u64,
) -> Result<(u64, u8), MemError> {
    if !data_paddr.is_multiple_of(WORD_BYTES) {
        return Err(MemError::Misaligned(data_paddr));
    }
    if data_paddr >= shadow_base {
        return Err(MemError::ShadowRegionAccess(data_paddr));
    }
    let byte = ((data_paddr - data_base) >> 6) + shadow_base;
    let bit = ((data_paddr >> 3) & 7) as u8;
    Ok((byte, bit))
}

/// Per-physical-page record of the owning enclave. Entry 0 means the page is
/// accessible to any context.
#[derive(Debug, Clone)]
pub struct OwnershipTable {
    entries: Vec<u64>,
}

impl OwnershipTable {
    fn new(num_pages: usize) -> Self {
        OwnershipTable {
            entries: vec![0; num_pages],
        }
    }

    pub fn owner(&self, ppage: u64) -> u64 {
        self.entries[ppage as usize]
    }

    pub fn set_owner(&mut self, ppage: u64, eid: u64) {
        self.entries[ppage as usize] = eid;
    }

    /// Access is allowed when the page is unowned or owned by the caller.
    pub fn check_access(&self, paddr: u64, curr_eid: u64) -> bool {
        let owner = self.owner(paddr / PAGE_SIZE);
        owner == 0 || owner == curr_eid
    }
}

/// What a freshly allocated page is filled with.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PageBacking {
    Zero,
    /// Copy of raw section bytes; shorter-than-page content is zero padded.
    Bytes(Vec<u8>),
}

/// One context's virtual page number -> physical page number map.
#[derive(Debug, Clone, Default)]
pub struct PageTable {
    map: BTreeMap<u64, u64>,
}

impl PageTable {
    pub fn translate(&self, vaddr: u64) -> Option<u64> {
        self.map
            .get(&(vaddr / PAGE_SIZE))
            .map(|ppage| ppage * PAGE_SIZE + vaddr % PAGE_SIZE)
    }

    pub fn map_page(&mut self, vpage: u64, ppage: u64) {
        self.map.insert(vpage, ppage);
    }

    pub fn lookup(&self, vpage: u64) -> Option<u64> {
        self.map.get(&vpage).copied()
    }

    pub fn mapped_pages(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        self.map.iter().map(|(v, p)| (*v, *p))
    }
}

/// Physical memory plus the ownership table and the frame allocator.
#[derive(Debug, Clone)]
pub struct PhysicalMemory {
    bytes: Vec<u8>,
    pub shadow_base: u64,
    pub ot: OwnershipTable,
    next_free_page: u64,
}

impl PhysicalMemory {
    /// `size` must be a power of two >= 1 MiB. The shadow region is carved
    /// from the top: one taint bit per 64-bit data word, i.e. one shadow
    /// byte per 64 data bytes, rounded up to whole pages.
    pub fn new(size: u64) -> Self {
        assert!(size >= (1 << 20) && size.is_power_of_two());
        // smallest page-multiple shadow length covering the data region
        let mut shadow_len = PAGE_SIZE;
        while (size - shadow_len).div_ceil(64).div_ceil(PAGE_SIZE) * PAGE_SIZE > shadow_len {
            shadow_len += PAGE_SIZE;
        }
        let shadow_base = size - shadow_len;
        PhysicalMemory {
            bytes: vec![0; size as usize],
            shadow_base,
            ot: OwnershipTable::new((size / PAGE_SIZE) as usize),
            next_free_page: 0,
        }
    }

    pub fn size(&self) -> u64 {
        self.bytes.len() as u64
    }

    pub fn num_data_pages(&self) -> u64 {
        self.shadow_base / PAGE_SIZE
    }

    /// Grab the next free data frame. Frames are handed out in ascending
    /// order and never recycled within one simulation instance.
    pub fn alloc_frame(&mut self, owner_eid: u64, backing: &PageBacking) -> Result<u64, MemError> {
        let ppage = self.next_free_page;
        if ppage >= self.num_data_pages() {
            return Err(MemError::OutOfPhysicalMemory);
        }
        self.next_free_page += 1;
        self.ot.set_owner(ppage, owner_eid);
        let start = (ppage * PAGE_SIZE) as usize;
        match backing {
            PageBacking::Zero => {}
            PageBacking::Bytes(content) => {
                let n = content.len().min(PAGE_SIZE as usize);
                self.bytes[start..start + n].copy_from_slice(&content[..n]);
            }
        }
        Ok(ppage)
    }

    /// Raw word read, no ownership or shadow-taint handling. Used by trusted
    /// monitor code and by report collection.
    pub fn read_word_raw(&self, paddr: u64) -> Result<u64, MemError> {
        self.check_data_addr(paddr)?;
        let i = paddr as usize;
        Ok(u64::from_le_bytes(self.bytes[i..i + 8].try_into().unwrap()))
    }

    /// Raw word write, no ownership or shadow-taint handling.
    pub fn write_word_raw(&mut self, paddr: u64, value: u64) -> Result<(), MemError> {
        self.check_data_addr(paddr)?;
        let i = paddr as usize;
        self.bytes[i..i + 8].copy_from_slice(&value.to_le_bytes());
        Ok(())
    }

    fn check_data_addr(&self, paddr: u64) -> Result<(), MemError> {
        if !paddr.is_multiple_of(WORD_BYTES) {
            return Err(MemError::Misaligned(paddr));
        }
        if paddr >= self.shadow_base {
            return Err(MemError::ShadowRegionAccess(paddr));
        }
        Ok(())
    }

    pub fn read_shadow_bit(&self, data_paddr: u64) -> Result<bool, MemError> {
        let (byte, bit) = shadow_address(data_paddr, 0, self.shadow_base)?;
        Ok(self.bytes[byte as usize] >> bit & 1 == 1)
    }

    pub fn write_shadow_bit(&mut self, data_paddr: u64, taint: bool) -> Result<(), MemError> {
        let (byte, bit) = shadow_address(data_paddr, 0, self.shadow_base)?;
        let b = &mut self.bytes[byte as usize];
        if taint {
            *b |= 1 << bit;
        } else {
            *b &= !(1 << bit);
        }
        Ok(())
    }

    /// Write the 64-byte shadow block of one data page from a bit slice of a
    /// taint bitmap. `bitmap_word_off` is the index of the page's first word
    /// within the bitmap; words past `bitmap_word_len` are untainted.
    pub fn fill_page_shadow(
        &mut self,
        ppage: u64,
        bitmap: &[u8],
        bitmap_word_off: u64,
        bitmap_word_len: u64,
    ) -> Result<(), MemError> {
        let words_per_page = PAGE_SIZE / WORD_BYTES;
        for w in 0..words_per_page {
            let idx = bitmap_word_off + w;
            let taint = idx < bitmap_word_len && (bitmap[(idx / 8) as usize] >> (idx % 8)) & 1 == 1;
            self.write_shadow_bit(ppage * PAGE_SIZE + w * WORD_BYTES, taint)?;
        }
        Ok(())
    }

    /// Zero the 64-byte shadow block of one data page.
    pub fn zero_page_shadow(&mut self, ppage: u64) -> Result<(), MemError> {
        self.fill_page_shadow(ppage, &[], 0, 0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn shadow_address_examples() {
        // base 0, shadow at 0x7F0000
        assert_eq!(shadow_address(0x0, 0, 0x7F_0000).unwrap(), (0x7F_0000, 0));
        assert_eq!(shadow_address(0x38, 0, 0x7F_0000).unwrap(), (0x7F_0000, 7));
        assert_eq!(shadow_address(0x40, 0, 0x7F_0000).unwrap(), (0x7F_0001, 0));
    }

    #[test]
    fn shadow_address_rejects_shadow_region() {
        assert_eq!(
            shadow_address(0x7F_0000, 0, 0x7F_0000),
            Err(MemError::ShadowRegionAccess(0x7F_0000))
        );
    }

    #[test]
    fn shadow_address_rejects_misaligned() {
        assert_eq!(
            shadow_address(0x3, 0, 0x7F_0000),
            Err(MemError::Misaligned(0x3))
        );
    }

    #[test]
    fn shadow_region_geometry() {
        // each 4 KiB data page needs exactly 64 shadow bytes
        assert_eq!(PAGE_SIZE / WORD_BYTES / 8, 64);
        for size in [1u64 << 20, 1 << 21, 1 << 24] {
            let mem = PhysicalMemory::new(size);
            let needed = mem.shadow_base.div_ceil(64);
            // the region covers every data word and is minimal in pages
            assert!(mem.size() - mem.shadow_base >= needed, "size {size:#x}");
            assert!(
                mem.size() - (mem.shadow_base + PAGE_SIZE)
                    < (mem.shadow_base + PAGE_SIZE).div_ceil(64)
            );
            // the very last data word's shadow byte stays in bounds
            let (byte, _) = shadow_address(mem.shadow_base - 8, 0, mem.shadow_base).unwrap();
            assert!(byte < mem.size());
        }
    }

    #[test]
    fn ownership_check() {
        let mut ot = OwnershipTable::new(16);
        ot.set_owner(3, 7);
        assert!(ot.check_access(3 * PAGE_SIZE, 7));
        assert!(!ot.check_access(3 * PAGE_SIZE, 0));
        assert!(!ot.check_access(3 * PAGE_SIZE, 5));
        // unowned pages are open to everyone
        assert!(ot.check_access(0, 0));
        assert!(ot.check_access(0, 7));
    }

    #[test]
    fn frame_exhaustion() {
        let mut mem = PhysicalMemory::new(1 << 20);
        let n = mem.num_data_pages();
        for _ in 0..n {
            mem.alloc_frame(0, &PageBacking::Zero).unwrap();
        }
        assert_eq!(
            mem.alloc_frame(0, &PageBacking::Zero),
            Err(MemError::OutOfPhysicalMemory)
        );
    }

    #[test]
    fn page_shadow_fill_respects_bitmap_bounds() {
        let mut mem = PhysicalMemory::new(1 << 20);
        let ppage = mem.alloc_frame(1, &PageBacking::Zero).unwrap();
        // 9 tainted words: 0xFF, 0x01
        mem.fill_page_shadow(ppage, &[0xFF, 0x01], 0, 9).unwrap();
        for w in 0..9 {
            assert!(
                mem.read_shadow_bit(ppage * PAGE_SIZE + w * 8).unwrap(),
                "word {w}"
            );
        }
        for w in 9..512 {
            assert!(
                !mem.read_shadow_bit(ppage * PAGE_SIZE + w * 8).unwrap(),
                "word {w}"
            );
        }
    }

    proptest! {
        // value+taint round-trip through memory and shadow
        #[test]
        fn taint_roundtrip(word_idx in 0u64..512, value in any::<u64>(), taint in any::<bool>()) {
            let mut mem = PhysicalMemory::new(1 << 20);
            let ppage = mem.alloc_frame(1, &PageBacking::Zero).unwrap();
            let paddr = ppage * PAGE_SIZE + word_idx * 8;
            mem.write_word_raw(paddr, value).unwrap();
            mem.write_shadow_bit(paddr, taint).unwrap();
            prop_assert_eq!(mem.read_word_raw(paddr).unwrap(), value);
            prop_assert_eq!(mem.read_shadow_bit(paddr).unwrap(), taint);
        }

        // distinct words never alias in shadow storage
        #[test]
        fn shadow_bits_disjoint(a in 0u64..2048, b in 0u64..2048) {
            prop_assume!(a != b);
            let sa = shadow_address(a * 8, 0, 0x7F_0000).unwrap();
            let sb = shadow_address(b * 8, 0, 0x7F_0000).unwrap();
            prop_assert_ne!(sa, sb);
        }
    }
}
