//! Emulated physical memory, page tables with protection-key bits, the PKRS
//! permission register, and a PCID-tagged TLB with selective-flush CR3
//! semantics.
//!
//! Every byte the runtime or helpers touch flows through [`Machine::read`] /
//! [`Machine::write`]. The check order is fixed: presence (TLB, then walk),
//! base R/W/X permissions, then protection key. Keys never gate instruction
//! fetch; code is protected by W^X instead.

use serde::Serialize;
use std::collections::BTreeMap;
use std::collections::VecDeque;
use std::fmt;
use thiserror::Error;

pub const PAGE_SIZE: u64 = 4096;
pub const PAGE_SHIFT: u64 = 12;

/// Physical frame number. Frame 0 is reserved and unmappable.
pub type Pfn = u32;

/// Address-space handle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct AsId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum AccessKind {
    Read,
    Write,
    Exec,
}

impl AccessKind {
    fn letter(self) -> char {
        match self {
            AccessKind::Read => 'R',
            AccessKind::Write => 'W',
            AccessKind::Exec => 'X',
        }
    }
}

/// Per-key permission encoding: 00 access-enabled, 01 access-disabled,
/// 10 write-disabled. Pattern 11 behaves as access-disabled (AD dominates).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KeyPerm {
    AccessEnabled,
    AccessDisabled,
    WriteDisabled,
}

impl KeyPerm {
    pub fn bits(self) -> u32 {
        match self {
            KeyPerm::AccessEnabled => 0b00,
            KeyPerm::AccessDisabled => 0b01,
            KeyPerm::WriteDisabled => 0b10,
        }
    }
}

/// The 32-bit supervisor permission register: sixteen two-bit (AD, WD)
/// fields, one per protection key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PkrsState {
    pub raw: u32,
}

impl PkrsState {
    /// All keys access-enabled.
    pub fn all_enabled() -> PkrsState {
        PkrsState { raw: 0 }
    }

    /// All keys access-disabled.
    pub fn all_disabled() -> PkrsState {
        PkrsState { raw: 0x5555_5555 }
    }

    pub fn from_raw(raw: u32) -> PkrsState {
        PkrsState { raw }
    }

    pub fn with_key(mut self, key: u8, perm: KeyPerm) -> PkrsState {
        self.set_bits(key, perm.bits());
        self
    }

    /// Set the raw two-bit field for a key (patterns 00/01/10/11).
    pub fn set_bits(&mut self, key: u8, bits: u32) {
        assert!(key < 16 && bits < 4);
        let shift = 2 * key as u32;
        self.raw = (self.raw & !(0b11 << shift)) | (bits << shift);
    }

    pub fn bits(&self, key: u8) -> u32 {
        (self.raw >> (2 * key as u32)) & 0b11
    }

    pub fn access_disabled(&self, key: u8) -> bool {
        self.bits(key) & 0b01 != 0
    }

    pub fn write_disabled(&self, key: u8) -> bool {
        self.bits(key) & 0b10 != 0
    }
}

/// A page-table entry. `key` models the four reserved PTE bits holding the
/// protection key.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pte {
    pub pfn: Pfn,
    pub present: bool,
    pub writable: bool,
    pub executable: bool,
    pub key: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TlbEntry {
    pub pcid: u16,
    pub vpn: u64,
    pub pfn: Pfn,
    pub writable: bool,
    pub executable: bool,
    pub key: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    PageFault,
    WriteProtFault,
    PkAccessDisabled,
    PkWriteDisabled,
    ExecFault,
}

/// A failed access. `Display` renders the stable one-line trace format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Fault {
    pub kind: FaultKind,
    pub vaddr: u64,
    pub pcid: u16,
    pub access: AccessKind,
}

impl fmt::Display for Fault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "FAULT kind={:?} pcid={} vaddr=0x{:x} access={}",
            self.kind,
            self.pcid,
            self.vaddr,
            self.access.letter()
        )
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum MemError {
    #[error("out of physical frames")]
    OutOfFrames,
    #[error("frame 0 is reserved")]
    ReservedFrame,
    #[error("unknown address space {0:?}")]
    UnknownAddressSpace(AsId),
    #[error("vaddr 0x{0:x} is already mapped")]
    AlreadyMapped(u64),
    #[error("vaddr 0x{0:x} is not mapped")]
    NotMapped(u64),
    #[error("vaddr 0x{0:x}: writable+executable mapping refused")]
    WxViolation(u64),
    #[error("vaddr 0x{0:x} is not page-aligned")]
    Unaligned(u64),
}

/// One emulated address space: a flat vpn -> PTE table plus its PCID.
#[derive(Debug)]
pub struct AddressSpace {
    pub id: AsId,
    pub pcid: u16,
    table: BTreeMap<u64, Pte>,
}

impl AddressSpace {
    pub fn lookup(&self, vpn: u64) -> Option<&Pte> {
        self.table.get(&vpn).filter(|p| p.present)
    }

    pub fn mapped_pages(&self) -> usize {
        self.table.len()
    }
}

/// Who is driving the current accesses; used by the domain-confinement audit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccessContext {
    /// Trusted simulator/kernel paths; not audited.
    Privileged,
    /// Instructions of a BPF program body.
    Bpf,
    /// A helper body running on behalf of a BPF program.
    Helper,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct MemCounters {
    pub tlb_hits: u64,
    pub tlb_fills: u64,
    pub selective_flushes: u64,
    pub full_flushes: u64,
    pub faults: BTreeMap<FaultKind, u64>,
    /// Successful accesses that violated the protection-domain policy while
    /// auditing was armed. Must stay zero with all protections enabled.
    pub audit_violations: u64,
    /// TLB hits whose translation disagreed with a fresh page walk of the
    /// active space. Always zero unless the TLB is corrupted.
    pub tlb_shadow_mismatches: u64,
}

#[derive(Debug, Clone, Copy)]
pub struct MachineConfig {
    pub pcid_bits: u8,
    pub tlb_capacity: usize,
    pub max_frames: usize,
}

impl Default for MachineConfig {
    fn default() -> Self {
        MachineConfig { pcid_bits: 12, tlb_capacity: 256, max_frames: 16384 }
    }
}

/// The simulated CPU+MMU: physical frames, address spaces, TLB, PKRS.
///
/// One machine per simulation instance; externally synchronized.
pub struct Machine {
    cfg: MachineConfig,
    frames: Vec<Box<[u8]>>,
    free_frames: Vec<Pfn>,
    spaces: BTreeMap<AsId, AddressSpace>,
    next_as: u32,
    tlb: VecDeque<TlbEntry>,
    pkrs: PkrsState,
    active_as: Option<AsId>,
    active_pcid: u16,
    context: AccessContext,
    audit_armed: bool,
    pub counters: MemCounters,
}

impl Machine {
    pub fn new(cfg: MachineConfig) -> Machine {
        assert!(cfg.pcid_bits >= 1 && cfg.pcid_bits <= 12);
        Machine {
            cfg,
            frames: vec![vec![0u8; PAGE_SIZE as usize].into_boxed_slice()], // frame 0, reserved
            free_frames: Vec::new(),
            spaces: BTreeMap::new(),
            next_as: 0,
            tlb: VecDeque::new(),
            pkrs: PkrsState::all_enabled(),
            active_as: None,
            active_pcid: 0,
            context: AccessContext::Privileged,
            audit_armed: false,
            counters: MemCounters::default(),
        }
    }

    pub fn pcid_mask(&self) -> u16 {
        (1u16 << self.cfg.pcid_bits) - 1
    }

    // ---- physical frames ------------------------------------------------

    pub fn alloc_frame(&mut self) -> Result<Pfn, MemError> {
        if let Some(pfn) = self.free_frames.pop() {
            self.frames[pfn as usize].fill(0);
            return Ok(pfn);
        }
        if self.frames.len() >= self.cfg.max_frames {
            return Err(MemError::OutOfFrames);
        }
        self.frames.push(vec![0u8; PAGE_SIZE as usize].into_boxed_slice());
        Ok((self.frames.len() - 1) as Pfn)
    }

    pub fn free_frame(&mut self, pfn: Pfn) {
        assert!(pfn != 0 && (pfn as usize) < self.frames.len());
        self.free_frames.push(pfn);
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    /// Privileged direct frame access (the simulated hardware/kernel path).
    pub fn write_phys(&mut self, pfn: Pfn, offset: u64, data: &[u8]) {
        let frame = &mut self.frames[pfn as usize];
        frame[offset as usize..offset as usize + data.len()].copy_from_slice(data);
    }

    pub fn read_phys(&self, pfn: Pfn, offset: u64, buf: &mut [u8]) {
        let frame = &self.frames[pfn as usize];
        buf.copy_from_slice(&frame[offset as usize..offset as usize + buf.len()]);
    }

    // ---- address spaces and mappings ------------------------------------

    pub fn create_space(&mut self, pcid: u16) -> AsId {
        let id = AsId(self.next_as);
        self.next_as += 1;
        let pcid = pcid & self.pcid_mask();
        self.spaces.insert(id, AddressSpace { id, pcid, table: BTreeMap::new() });
        id
    }

    pub fn space(&self, id: AsId) -> Result<&AddressSpace, MemError> {
        self.spaces.get(&id).ok_or(MemError::UnknownAddressSpace(id))
    }

    pub fn map_page(
        &mut self,
        as_id: AsId,
        vaddr: u64,
        pfn: Pfn,
        writable: bool,
        executable: bool,
        key: u8,
    ) -> Result<(), MemError> {
        assert!(key < 16, "protection key must fit 4 bits");
        if !vaddr.is_multiple_of(PAGE_SIZE) {
            return Err(MemError::Unaligned(vaddr));
        }
        if pfn == 0 {
            return Err(MemError::ReservedFrame);
        }
        if writable && executable {
            return Err(MemError::WxViolation(vaddr));
        }
        let space = self.spaces.get_mut(&as_id).ok_or(MemError::UnknownAddressSpace(as_id))?;
        let vpn = vaddr >> PAGE_SHIFT;
        if space.table.contains_key(&vpn) {
            return Err(MemError::AlreadyMapped(vaddr));
        }
        space.table.insert(vpn, Pte { pfn, present: true, writable, executable, key });
        Ok(())
    }

    pub fn unmap_page(&mut self, as_id: AsId, vaddr: u64) -> Result<Pfn, MemError> {
        if !vaddr.is_multiple_of(PAGE_SIZE) {
            return Err(MemError::Unaligned(vaddr));
        }
        let space = self.spaces.get_mut(&as_id).ok_or(MemError::UnknownAddressSpace(as_id))?;
        let vpn = vaddr >> PAGE_SHIFT;
        let pte = space.table.remove(&vpn).ok_or(MemError::NotMapped(vaddr))?;
        let pcid = space.pcid;
        self.tlb.retain(|e| !(e.pcid == pcid && e.vpn == vpn));
        Ok(pte.pfn)
    }

    /// Protection key of a mapped page in the given space, ignoring the TLB.
    pub fn key_of(&self, as_id: AsId, vaddr: u64) -> Option<u8> {
        self.spaces.get(&as_id)?.lookup(vaddr >> PAGE_SHIFT).map(|p| p.key)
    }

    // ---- control registers ----------------------------------------------

    /// Switch the active address space. With `noflush` the TLB is untouched;
    /// otherwise exactly the entries tagged with the *new* PCID are evicted.
    pub fn write_cr3(&mut self, as_id: AsId, pcid: u16, noflush: bool) -> Result<(), MemError> {
        if !self.spaces.contains_key(&as_id) {
            return Err(MemError::UnknownAddressSpace(as_id));
        }
        let pcid = pcid & self.pcid_mask();
        if !noflush {
            self.tlb.retain(|e| e.pcid != pcid);
            self.counters.selective_flushes += 1;
        }
        self.active_as = Some(as_id);
        self.active_pcid = pcid;
        Ok(())
    }

    pub fn active(&self) -> (Option<AsId>, u16) {
        (self.active_as, self.active_pcid)
    }

    pub fn set_pkrs(&mut self, new: PkrsState) -> PkrsState {
        std::mem::replace(&mut self.pkrs, new)
    }

    pub fn pkrs(&self) -> PkrsState {
        self.pkrs
    }

    // ---- audit -----------------------------------------------------------

    pub fn set_context(&mut self, ctx: AccessContext) -> AccessContext {
        std::mem::replace(&mut self.context, ctx)
    }

    /// Arm or disarm the domain-confinement audit (armed only when every
    /// protection layer is enabled, where violations are impossible).
    pub fn arm_audit(&mut self, on: bool) {
        self.audit_armed = on;
    }

    // ---- checked access --------------------------------------------------

    pub fn read(&mut self, vaddr: u64, buf: &mut [u8]) -> Result<(), Fault> {
        self.access(vaddr, buf.len() as u64, AccessKind::Read)?;
        let mut done = 0usize;
        while done < buf.len() {
            let va = vaddr + done as u64;
            let in_page = (PAGE_SIZE - va % PAGE_SIZE).min((buf.len() - done) as u64) as usize;
            let pfn = self.resolve_pfn(va);
            let off = (va % PAGE_SIZE) as usize;
            buf[done..done + in_page].copy_from_slice(&self.frames[pfn as usize][off..off + in_page]);
            done += in_page;
        }
        Ok(())
    }

    pub fn write(&mut self, vaddr: u64, data: &[u8]) -> Result<(), Fault> {
        self.access(vaddr, data.len() as u64, AccessKind::Write)?;
        let mut done = 0usize;
        while done < data.len() {
            let va = vaddr + done as u64;
            let in_page = (PAGE_SIZE - va % PAGE_SIZE).min((data.len() - done) as u64) as usize;
            let pfn = self.resolve_pfn(va);
            let off = (va % PAGE_SIZE) as usize;
            self.frames[pfn as usize][off..off + in_page].copy_from_slice(&data[done..done + in_page]);
            done += in_page;
        }
        Ok(())
    }

    pub fn check_exec(&mut self, vaddr: u64) -> Result<(), Fault> {
        self.access(vaddr, 1, AccessKind::Exec)
    }

    pub fn read_u64(&mut self, vaddr: u64) -> Result<u64, Fault> {
        let mut buf = [0u8; 8];
        self.read(vaddr, &mut buf)?;
        Ok(u64::from_le_bytes(buf))
    }

    pub fn write_u64(&mut self, vaddr: u64, value: u64) -> Result<(), Fault> {
        self.write(vaddr, &value.to_le_bytes())
    }

    /// Check permissions for every page an access touches; no data moves.
    /// The per-page primitive never spans a boundary; this splits for callers.
    fn access(&mut self, vaddr: u64, len: u64, kind: AccessKind) -> Result<(), Fault> {
        assert!(len >= 1, "zero-length access");
        let last = vaddr.checked_add(len - 1).ok_or(Fault {
            kind: FaultKind::PageFault,
            vaddr,
            pcid: self.active_pcid,
            access: kind,
        })?;
        let mut page = vaddr & !(PAGE_SIZE - 1);
        loop {
            let probe = page.max(vaddr);
            self.access_one(probe, kind).map_err(|f| self.record_fault(f))?;
            if page >= last & !(PAGE_SIZE - 1) {
                break;
            }
            page += PAGE_SIZE;
        }
        Ok(())
    }

    fn record_fault(&mut self, fault: Fault) -> Fault {
        *self.counters.faults.entry(fault.kind).or_insert(0) += 1;
        fault
    }

    /// The single-page access check: TLB lookup (fill on miss), base paging
    /// permissions, then the protection key. Keys apply to data access only.
    fn access_one(&mut self, vaddr: u64, kind: AccessKind) -> Result<(), Fault> {
        let pcid = self.active_pcid;
        let fault = |k: FaultKind| Fault { kind: k, vaddr, pcid, access: kind };
        let as_id = self.active_as.ok_or_else(|| fault(FaultKind::PageFault))?;
        let vpn = vaddr >> PAGE_SHIFT;

        // (1) translation: TLB by (pcid, vpn), else walk and fill
        let entry = match self.tlb_lookup(pcid, vpn) {
            Some(e) => {
                self.counters.tlb_hits += 1;
                // Shadow check: a hit must agree with the page table of the
                // active space; disagreement would mean a cross-PCID or stale
                // entry leaked through.
                if let Some(pte) = self.spaces[&as_id].lookup(vpn) {
                    if pte.pfn != e.pfn || pte.key != e.key || pte.writable != e.writable {
                        self.counters.tlb_shadow_mismatches += 1;
                    }
                } else {
                    self.counters.tlb_shadow_mismatches += 1;
                }
                e
            }
            None => {
                let pte = match self.spaces[&as_id].lookup(vpn) {
                    Some(p) => *p,
                    None => return Err(fault(FaultKind::PageFault)),
                };
                let e = TlbEntry {
                    pcid,
                    vpn,
                    pfn: pte.pfn,
                    writable: pte.writable,
                    executable: pte.executable,
                    key: pte.key,
                };
                self.tlb_fill(e);
                e
            }
        };

        // (2) base paging permissions
        match kind {
            AccessKind::Read => {}
            AccessKind::Write => {
                if !entry.writable {
                    return Err(fault(FaultKind::WriteProtFault));
                }
            }
            AccessKind::Exec => {
                if !entry.executable {
                    return Err(fault(FaultKind::ExecFault));
                }
                return Ok(()); // keys never gate instruction fetch
            }
        }

        // (3) protection key
        if self.pkrs.access_disabled(entry.key) {
            return Err(fault(FaultKind::PkAccessDisabled));
        }
        if kind == AccessKind::Write && self.pkrs.write_disabled(entry.key) {
            return Err(fault(FaultKind::PkWriteDisabled));
        }

        self.audit(entry.key, kind);
        Ok(())
    }

    fn audit(&mut self, key: u8, kind: AccessKind) {
        if !self.audit_armed || self.context != AccessContext::Bpf {
            return;
        }
        let violation = match kind {
            AccessKind::Read => matches!(key, 0x0 | 0x3),
            AccessKind::Write => matches!(key, 0x0 | 0x2 | 0x3),
            AccessKind::Exec => false,
        };
        if violation {
            self.counters.audit_violations += 1;
        }
    }

    fn tlb_lookup(&self, pcid: u16, vpn: u64) -> Option<TlbEntry> {
        self.tlb.iter().copied().find(|e| e.pcid == pcid && e.vpn == vpn)
    }

    fn tlb_fill(&mut self, entry: TlbEntry) {
        if self.tlb.len() >= self.cfg.tlb_capacity {
            self.tlb.pop_front(); // FIFO eviction
        }
        self.tlb.push_back(entry);
        self.counters.tlb_fills += 1;
    }

    /// Resolve a pfn for an address whose permissions were already checked.
    fn resolve_pfn(&self, vaddr: u64) -> Pfn {
        let as_id = self.active_as.expect("no active space");
        self.spaces[&as_id]
            .lookup(vaddr >> PAGE_SHIFT)
            .expect("checked access lost its mapping")
            .pfn
    }

    // ---- privileged virtual access (kernel/syscall paths) ----------------

    pub fn read_virt_unchecked(
        &self,
        as_id: AsId,
        vaddr: u64,
        buf: &mut [u8],
    ) -> Result<(), MemError> {
        let space = self.space(as_id)?;
        let mut done = 0usize;
        while done < buf.len() {
            let va = vaddr + done as u64;
            let pte = space.lookup(va >> PAGE_SHIFT).ok_or(MemError::NotMapped(va))?;
            let in_page = (PAGE_SIZE - va % PAGE_SIZE).min((buf.len() - done) as u64) as usize;
            let off = (va % PAGE_SIZE) as usize;
            buf[done..done + in_page]
                .copy_from_slice(&self.frames[pte.pfn as usize][off..off + in_page]);
            done += in_page;
        }
        Ok(())
    }

    pub fn write_virt_unchecked(
        &mut self,
        as_id: AsId,
        vaddr: u64,
        data: &[u8],
    ) -> Result<(), MemError> {
        let space = self.space(as_id)?;
        let mut plan = Vec::new();
        let mut done = 0usize;
        while done < data.len() {
            let va = vaddr + done as u64;
            let pte = space.lookup(va >> PAGE_SHIFT).ok_or(MemError::NotMapped(va))?;
            let in_page = (PAGE_SIZE - va % PAGE_SIZE).min((data.len() - done) as u64) as usize;
            plan.push((pte.pfn, (va % PAGE_SIZE) as usize, done, in_page));
            done += in_page;
        }
        for (pfn, off, start, len) in plan {
            self.frames[pfn as usize][off..off + len].copy_from_slice(&data[start..start + len]);
        }
        Ok(())
    }

    // ---- introspection for tests and reports -----------------------------

    pub fn tlb_snapshot(&self) -> Vec<(u16, u64)> {
        self.tlb.iter().map(|e| (e.pcid, e.vpn)).collect()
    }

    pub fn tlb_len(&self) -> usize {
        self.tlb.len()
    }
}
