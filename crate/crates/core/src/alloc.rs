//! The three BPF-memory allocators: a page allocator handing out whole
//! frames, a sub-page object allocator for fine-grained pieces (stacks),
//! and a virtual allocator reserving unbacked ranges that persistent
//! contexts are mapped into on demand.

use crate::mem::{AsId, Machine, MemError, Pfn, PAGE_SIZE};
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum AllocError {
    #[error("degenerate request rejected")]
    BadRequest,
    #[error("out of physical frames")]
    OutOfFrames,
    #[error("virtual layout window exhausted")]
    LayoutExhausted,
    #[error("object pool cannot satisfy the request")]
    PoolFull,
    #[error("free of an address that is not a live object")]
    BadFree,
    #[error("reservation index out of range")]
    OutOfRange,
    #[error("reservation page already backed")]
    AlreadyBacked,
    #[error(transparent)]
    Mem(#[from] MemError),
}

/// A program's slice of virtual address space; allocation is a bump cursor.
#[derive(Debug, Clone)]
pub struct VirtWindow {
    pub base: u64,
    pub end: u64,
    cursor: u64,
}

impl VirtWindow {
    pub fn new(base: u64, len: u64) -> VirtWindow {
        assert!(base.is_multiple_of(PAGE_SIZE) && len.is_multiple_of(PAGE_SIZE));
        VirtWindow { base, end: base + len, cursor: base }
    }

    pub fn reserve(&mut self, n_pages: u64) -> Result<u64, AllocError> {
        if n_pages == 0 {
            return Err(AllocError::BadRequest);
        }
        let vaddr = self.cursor;
        let len = n_pages.checked_mul(PAGE_SIZE).ok_or(AllocError::LayoutExhausted)?;
        if vaddr.checked_add(len).map(|end| end > self.end).unwrap_or(true) {
            return Err(AllocError::LayoutExhausted);
        }
        self.cursor += len;
        Ok(vaddr)
    }

    /// Leave one page unmapped: the guard holes flanking stacks and maps.
    pub fn skip_guard(&mut self) {
        self.cursor = (self.cursor + PAGE_SIZE).min(self.end);
    }
}

/// Frames owned by one program, all mapped with the owner's key.
#[derive(Debug)]
pub struct PagePool {
    key: u8,
    pages: Vec<(u64, Pfn)>,
}

impl PagePool {
    pub fn new(key: u8) -> PagePool {
        PagePool { key, pages: Vec::new() }
    }

    pub fn key(&self) -> u8 {
        self.key
    }

    /// Allocate `n_pages` fresh zero-filled frames, mapped contiguously in
    /// the window with this pool's key.
    pub fn alloc(
        &mut self,
        m: &mut Machine,
        space: AsId,
        win: &mut VirtWindow,
        n_pages: u64,
        writable: bool,
    ) -> Result<u64, AllocError> {
        self.alloc_inner(m, space, win, n_pages, writable, false)
    }

    /// Executable mapping for code pages; never writable (W^X).
    pub fn alloc_exec(
        &mut self,
        m: &mut Machine,
        space: AsId,
        win: &mut VirtWindow,
        n_pages: u64,
    ) -> Result<u64, AllocError> {
        self.alloc_inner(m, space, win, n_pages, false, true)
    }

    /// Same as [`PagePool::alloc`] but with an explicit key (metadata pages carry the
    /// critical-domain key, not the pool owner's).
    pub fn alloc_with_key(
        &mut self,
        m: &mut Machine,
        space: AsId,
        win: &mut VirtWindow,
        n_pages: u64,
        writable: bool,
        key: u8,
    ) -> Result<u64, AllocError> {
        let saved = self.key;
        self.key = key;
        let r = self.alloc_inner(m, space, win, n_pages, writable, false);
        self.key = saved;
        r
    }

    fn alloc_inner(
        &mut self,
        m: &mut Machine,
        space: AsId,
        win: &mut VirtWindow,
        n_pages: u64,
        writable: bool,
        executable: bool,
    ) -> Result<u64, AllocError> {
        let vaddr = win.reserve(n_pages)?;
        for i in 0..n_pages {
            let pfn = m.alloc_frame().map_err(|_| AllocError::OutOfFrames)?;
            m.map_page(space, vaddr + i * PAGE_SIZE, pfn, writable, executable, self.key)?;
            self.pages.push((vaddr + i * PAGE_SIZE, pfn));
        }
        Ok(vaddr)
    }

    pub fn frames(&self) -> impl Iterator<Item = Pfn> + '_ {
        self.pages.iter().map(|(_, pfn)| *pfn)
    }

    /// Unmap every page from the owning space, then return the frames.
    /// Frames go back to the machine only after the unmap, so no alias can
    /// observe recycled memory.
    pub fn release(self, m: &mut Machine, space: AsId) {
        for (vaddr, pfn) in self.pages {
            m.unmap_page(space, vaddr).expect("pool page vanished");
            m.free_frame(pfn);
        }
    }
}

const OBJ_ALIGN: u64 = 8;

/// Sub-page allocator: 8-byte-aligned chunks carved out of pool pages.
/// Objects never straddle a page boundary.
#[derive(Debug, Default)]
pub struct ObjectPool {
    free: Vec<(u64, u64)>,
    live: std::collections::BTreeMap<u64, u64>,
}

impl ObjectPool {
    pub fn new() -> ObjectPool {
        ObjectPool::default()
    }

    pub fn alloc(
        &mut self,
        m: &mut Machine,
        space: AsId,
        win: &mut VirtWindow,
        pages: &mut PagePool,
        size: u64,
    ) -> Result<u64, AllocError> {
        if size == 0 || size > PAGE_SIZE {
            return Err(AllocError::BadRequest);
        }
        let size = size.div_ceil(OBJ_ALIGN) * OBJ_ALIGN;
        // first fit from the free list
        if let Some(i) = self.free.iter().position(|(_, len)| *len >= size) {
            let (addr, len) = self.free.swap_remove(i);
            if len > size {
                self.free.push((addr + size, len - size));
            }
            self.live.insert(addr, size);
            return Ok(addr);
        }
        let page = pages.alloc(m, space, win, 1, true)?;
        if size < PAGE_SIZE {
            self.free.push((page + size, PAGE_SIZE - size));
        }
        self.live.insert(page, size);
        Ok(page)
    }

    pub fn free(&mut self, addr: u64) -> Result<(), AllocError> {
        match self.live.remove(&addr) {
            Some(size) => {
                self.free.push((addr, size));
                Ok(())
            }
            None => Err(AllocError::BadFree),
        }
    }

    pub fn live_objects(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        self.live.iter().map(|(a, s)| (*a, *s))
    }
}

/// A run of reserved, initially unbacked virtual pages.
#[derive(Debug)]
pub struct VirtReservation {
    pub base: u64,
    backing: Vec<Option<Pfn>>,
}

pub fn virt_reserve(win: &mut VirtWindow, n_pages: u64) -> Result<VirtReservation, AllocError> {
    let base = win.reserve(n_pages)?;
    Ok(VirtReservation { base, backing: vec![None; n_pages as usize] })
}

/// Alias an existing frame into the reservation (mapping, not copying).
pub fn virt_map(
    m: &mut Machine,
    space: AsId,
    res: &mut VirtReservation,
    page_index: usize,
    pfn: Pfn,
    key: u8,
    writable: bool,
) -> Result<(), AllocError> {
    let slot = res.backing.get_mut(page_index).ok_or(AllocError::OutOfRange)?;
    if slot.is_some() {
        return Err(AllocError::AlreadyBacked);
    }
    m.map_page(space, res.base + page_index as u64 * PAGE_SIZE, pfn, writable, false, key)?;
    *slot = Some(pfn);
    Ok(())
}

/// Drop the alias; the backing frame itself is untouched.
pub fn virt_unmap(
    m: &mut Machine,
    space: AsId,
    res: &mut VirtReservation,
    page_index: usize,
) -> Result<(), AllocError> {
    let slot = res.backing.get_mut(page_index).ok_or(AllocError::OutOfRange)?;
    if slot.is_none() {
        return Err(AllocError::OutOfRange);
    }
    m.unmap_page(space, res.base + page_index as u64 * PAGE_SIZE)?;
    *slot = None;
    Ok(())
}
