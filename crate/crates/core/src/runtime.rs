//! The sandbox runtime: program loading with a static BPF-memory layout,
//! key-domain switching on entry/exit (Layer I), per-program address spaces
//! tagged with PCIDs (Layer II), stack swap, runtime parameter guards,
//! critical-object permission shaping around helper calls, the interpreter,
//! and interrupt simulation with a per-CPU `in_bpf` flag.

use crate::alloc::{self, AllocError, ObjectPool, PagePool, VirtReservation, VirtWindow};
use crate::helpers::{self, AccessMem, HelperCtx, HelperRegistry, MapBinding, META_SENTINEL};
use crate::isa::{AluOp, Insn, Operand, ProgType, Program};
use crate::mem::{
    AccessContext, AsId, Fault, FaultKind, Machine, MachineConfig, MemCounters, Pfn, PkrsState,
    PAGE_SIZE,
};
use crate::verifier::{verify, BugFlags, CallsiteArg, VerifierOutput};
use serde::Serialize;
use std::collections::BTreeMap;
use std::rc::Rc;
use thiserror::Error;

// Protection-key assignment of the four domains.
pub const KEY_KERNEL: u8 = 0x0;
pub const KEY_BPF: u8 = 0x1;
pub const KEY_SHARED: u8 = 0x2;
pub const KEY_CRITICAL: u8 = 0x3;

// Virtual layout: each program gets a disjoint 16 MiB window; the emulated
// kernel image sits above all windows and is mapped into every space.
pub const WINDOW_BASE: u64 = 0x1000_0000;
pub const WINDOW_STRIDE: u64 = 0x100_0000;
pub const MAX_IMAGES: usize = 160;

pub const KERNEL_SCRATCH_VADDR: u64 = 0xbfff_f000;
pub const SENTINEL_PAGE: u64 = 0xc000_0000;
pub const SENTINEL_VADDR: u64 = SENTINEL_PAGE + 0x40;
pub const SENTINEL_BYTE: u8 = 0xa5;
/// Kernel object the diagnostic `scratch_write` helper targets. Offsets up
/// to 0x20 stay inside it; offset 0xba lands exactly on the sentinel.
pub const SCRATCH_OBJ_BASE: u64 = SENTINEL_VADDR - 0xba;
pub const DESCRIPTOR_TABLE_VADDR: u64 = 0xc000_2000;
pub const IRQ_SCRATCH_VADDR: u64 = 0xc000_3000;
pub const SAVED_STATE_VADDR: u64 = 0xc000_4000;
pub const EVENT_RECORD_VADDR: u64 = 0xc000_5000;

const STACK_BYTES: u64 = 512;
const KERNEL_STACK_CURSOR: u64 = 0xffff_8000_0000;

/// Ablation switches; all protections default on.
#[derive(Debug, Clone, Copy)]
pub struct SandboxConfig {
    pub pks: bool,
    pub dpa: bool,
    pub cop: bool,
    pub addr_space: bool,
    pub pcid_bits: u8,
    pub tlb_capacity: usize,
    pub max_frames: usize,
    pub interrupt_at: Option<u64>,
    pub trace: bool,
}

impl Default for SandboxConfig {
    fn default() -> Self {
        SandboxConfig {
            pks: true,
            dpa: true,
            cop: true,
            addr_space: true,
            pcid_bits: 12,
            tlb_capacity: 256,
            max_frames: 16384,
            interrupt_at: None,
            trace: false,
        }
    }
}

impl SandboxConfig {
    pub fn all_protections_on(&self) -> bool {
        self.pks && self.dpa && self.cop && self.addr_space
    }

    pub fn all_off() -> SandboxConfig {
        SandboxConfig { pks: false, dpa: false, cop: false, addr_space: false, ..Default::default() }
    }
}

/// Per-CPU execution state.
#[derive(Debug, Clone)]
pub struct CpuState {
    pub in_bpf: bool,
    pub saved_pkrs: PkrsState,
    pub saved_stack_cursor: u64,
    pub stack_cursor: u64,
    pub instruction_counter: u64,
    irq_fired: bool,
}

impl CpuState {
    fn new() -> CpuState {
        CpuState {
            in_bpf: false,
            saved_pkrs: PkrsState::all_enabled(),
            saved_stack_cursor: 0,
            stack_cursor: KERNEL_STACK_CURSOR,
            instruction_counter: 0,
            irq_fired: false,
        }
    }
}

/// The typed outcome of one run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum Verdict {
    Completed { r0: u64 },
    VerifierReject { reason: String },
    DpaViolation { insn: usize, reg: u8, value: u64, lo: u64, hi: u64 },
    PksViolation { insn: usize, fault: Fault },
    PageFault { insn: usize, fault: Fault },
    CopViolation { insn: usize, fault: Fault },
    KernelTampered { vaddr: u64 },
}

impl Verdict {
    pub fn label(&self) -> &'static str {
        match self {
            Verdict::Completed { .. } => "completed",
            Verdict::VerifierReject { .. } => "verifier_reject",
            Verdict::DpaViolation { .. } => "dpa_violation",
            Verdict::PksViolation { .. } => "pks_violation",
            Verdict::PageFault { .. } => "page_fault",
            Verdict::CopViolation { .. } => "cop_violation",
            Verdict::KernelTampered { .. } => "kernel_tampered",
        }
    }

    /// Same outcome class, ignoring payload details.
    pub fn same_class(&self, other: &Verdict) -> bool {
        self.label() == other.label()
    }
}

/// Verdict plus the optional event trace.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub verdict: Verdict,
    pub trace: Vec<String>,
}

#[derive(Debug, Clone, Error)]
pub enum LoadError {
    #[error("verifier rejected: {0}")]
    Rejected(String),
    #[error("resource exhausted: {0}")]
    Resource(#[from] AllocError),
    #[error("too many images loaded")]
    TooManyImages,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum RuntimeError {
    #[error("nested BPF entry")]
    ReentrantEntry,
    #[error("unknown image")]
    UnknownImage,
}

#[derive(Debug, Clone, Copy, Serialize)]
struct Guard {
    reg: u8,
    lo: u64,
    hi: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct ImageId(pub usize);

/// A loaded program's BPF memory: stack, maps, context window, code pages,
/// and the deduced callsite ranges the guards check.
struct Image {
    name: String,
    prog: Rc<Program>,
    space: AsId,
    pcid: u16,
    code_vaddr: u64,
    stack_top: u64,
    ctx: VirtReservation,
    maps: Rc<Vec<MapBinding>>,
    callsites: Rc<BTreeMap<usize, Vec<CallsiteArg>>>,
    guards: Rc<BTreeMap<usize, Vec<Guard>>>,
    pool: PagePool,
    #[allow(dead_code)]
    objects: ObjectPool,
    max_stack_depth: u64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct SandboxCounters {
    pub pcid_conflict_flushes: u64,
    pub runs: u64,
    pub helper_calls: u64,
    pub guard_checks: u64,
}

/// Full counter report for the JSON surfaces.
#[derive(Debug, Clone, Serialize)]
pub struct CountersReport {
    pub pcid_conflict_flushes: u64,
    pub tlb_fills: u64,
    pub tlb_hits: u64,
    pub faults: BTreeMap<FaultKind, u64>,
    pub audit_violations: u64,
    pub tlb_shadow_mismatches: u64,
}

struct KernelPage {
    vaddr: u64,
    pfn: Pfn,
    writable: bool,
    key: u8,
}

/// One simulated kernel with its hardware: single CPU, externally
/// synchronized; distinct sandboxes are fully independent.
pub struct Sandbox {
    pub cfg: SandboxConfig,
    machine: Machine,
    registry: HelperRegistry,
    images: Vec<Image>,
    kernel_space: AsId,
    kernel_pages: Vec<KernelPage>,
    packet_frame: Pfn,
    cpu: CpuState,
    pcid_seq: u16,
    pcid_owner: BTreeMap<u16, AsId>,
    pub counters: SandboxCounters,
}

impl Sandbox {
    pub fn new(cfg: SandboxConfig) -> Sandbox {
        let mut machine = Machine::new(MachineConfig {
            pcid_bits: cfg.pcid_bits,
            tlb_capacity: cfg.tlb_capacity,
            max_frames: cfg.max_frames,
        });
        machine.arm_audit(cfg.all_protections_on());
        let kernel_space = machine.create_space(0);

        let mut kernel_pages = Vec::new();
        let mut add = |machine: &mut Machine, vaddr: u64, writable: bool, key: u8| -> Pfn {
            let pfn = machine.alloc_frame().expect("boot frames");
            machine.map_page(kernel_space, vaddr, pfn, writable, false, key).expect("boot map");
            kernel_pages.push(KernelPage { vaddr, pfn, writable, key });
            pfn
        };
        let sentinel_pfn = add(&mut machine, SENTINEL_PAGE, true, KEY_KERNEL);
        add(&mut machine, KERNEL_SCRATCH_VADDR, true, KEY_KERNEL);
        let gdt_pfn = add(&mut machine, DESCRIPTOR_TABLE_VADDR, true, KEY_SHARED);
        add(&mut machine, IRQ_SCRATCH_VADDR, true, KEY_KERNEL);
        add(&mut machine, SAVED_STATE_VADDR, true, KEY_CRITICAL);
        add(&mut machine, EVENT_RECORD_VADDR, true, KEY_KERNEL);

        machine.write_phys(sentinel_pfn, SENTINEL_VADDR - SENTINEL_PAGE, &[SENTINEL_BYTE]);
        // Descriptor-table dressing so the interrupt handler reads real bytes.
        machine.write_phys(gdt_pfn, 0, &0x00af_9b00_0000_ffffu64.to_le_bytes());

        let packet_frame = machine.alloc_frame().expect("packet frame");
        machine.write_cr3(kernel_space, 0, true).expect("boot cr3");

        let mut pcid_owner = BTreeMap::new();
        pcid_owner.insert(0, kernel_space);

        Sandbox {
            cfg,
            machine,
            registry: HelperRegistry::builtin(),
            images: Vec::new(),
            kernel_space,
            kernel_pages,
            packet_frame,
            cpu: CpuState::new(),
            pcid_seq: 0,
            pcid_owner,
            counters: SandboxCounters::default(),
        }
    }

    pub fn registry_mut(&mut self) -> &mut HelperRegistry {
        &mut self.registry
    }

    pub fn registry(&self) -> &HelperRegistry {
        &self.registry
    }

    // ---- loading ----------------------------------------------------------

    /// Verify, then build the program's BPF memory: fresh address space and
    /// PCID, code pages (W^X), a 512-byte stack with guard holes, map data
    /// pages with adjacent critical metadata pages, and the context window.
    pub fn load(&mut self, prog: Program, flags: BugFlags) -> Result<ImageId, LoadError> {
        let output = verify(&prog, flags, &self.registry);
        if !output.accepted {
            return Err(LoadError::Rejected(output.reject_reason().unwrap_or_default()));
        }
        self.load_verified(prog, &output)
    }

    fn load_verified(&mut self, prog: Program, output: &VerifierOutput) -> Result<ImageId, LoadError> {
        let index = self.images.len();
        if index >= MAX_IMAGES {
            return Err(LoadError::TooManyImages);
        }

        let (space, pcid) = if self.cfg.addr_space {
            let pcid = self.next_pcid();
            let space = self.machine.create_space(pcid);
            for kp in &self.kernel_pages {
                self.machine
                    .map_page(space, kp.vaddr, kp.pfn, kp.writable, false, kp.key)
                    .expect("kernel region mapping");
            }
            (space, pcid)
        } else {
            // Isolation layer II disabled: everything shares the kernel
            // space and PCID 0.
            (self.kernel_space, 0)
        };

        let mut win = VirtWindow::new(WINDOW_BASE + index as u64 * WINDOW_STRIDE, WINDOW_STRIDE);
        let mut pool = PagePool::new(KEY_BPF);
        let mut objects = ObjectPool::new();

        let code_bytes = (prog.insns.len() as u64) * 8;
        let code_vaddr =
            pool.alloc_exec(&mut self.machine, space, &mut win, code_bytes.div_ceil(PAGE_SIZE))?;
        win.skip_guard();

        let stack_obj =
            objects.alloc(&mut self.machine, space, &mut win, &mut pool, STACK_BYTES)?;
        let stack_top = stack_obj + STACK_BYTES;
        win.skip_guard();

        let mut maps = Vec::new();
        for decl in &prog.declared_maps {
            let data_pages = decl.data_bytes().div_ceil(PAGE_SIZE);
            let data_vaddr =
                pool.alloc(&mut self.machine, space, &mut win, data_pages, true)?;
            let meta_vaddr = pool.alloc_with_key(
                &mut self.machine,
                space,
                &mut win,
                1,
                true,
                KEY_CRITICAL,
            )?;
            debug_assert_eq!(meta_vaddr, data_vaddr + data_pages * PAGE_SIZE);
            win.skip_guard();
            // ops-record sentinel plus the declared sizes
            self.machine
                .write_virt_unchecked(space, meta_vaddr, &META_SENTINEL.to_le_bytes())
                .expect("metadata page");
            self.machine
                .write_virt_unchecked(space, meta_vaddr + 8, &decl.value_size.to_le_bytes())
                .expect("metadata page");
            self.machine
                .write_virt_unchecked(space, meta_vaddr + 16, &decl.n_entries.to_le_bytes())
                .expect("metadata page");
            maps.push(MapBinding { decl: decl.clone(), data_vaddr, data_pages, meta_vaddr });
        }

        let ctx = alloc::virt_reserve(&mut win, 1)?;

        let guards = if self.cfg.dpa {
            output
                .callsite_ranges
                .iter()
                .map(|(insn, args)| {
                    let checks = args
                        .iter()
                        .map(|a| Guard { reg: a.reg, lo: a.range.umin, hi: a.range.umax })
                        .collect();
                    (*insn, checks)
                })
                .collect()
        } else {
            BTreeMap::new()
        };

        self.images.push(Image {
            name: if prog.name.is_empty() { format!("prog{index}") } else { prog.name.clone() },
            prog: Rc::new(prog),
            space,
            pcid,
            code_vaddr,
            stack_top,
            ctx,
            maps: Rc::new(maps),
            callsites: Rc::new(output.callsite_ranges.clone()),
            guards: Rc::new(guards),
            pool,
            objects,
            max_stack_depth: output.max_stack_depth,
        });
        Ok(ImageId(index))
    }

    fn next_pcid(&mut self) -> u16 {
        self.pcid_seq = self.pcid_seq.wrapping_add(1);
        self.pcid_seq & ((1u16 << self.cfg.pcid_bits) - 1)
    }

    // ---- domain switching --------------------------------------------------

    fn bpf_mode_pkrs(&self) -> PkrsState {
        if !self.cfg.pks {
            return PkrsState::all_enabled();
        }
        // kernel AD, BPF AE, shared WD, critical AD, all unassigned keys AD
        let mut pkrs = PkrsState::all_disabled();
        pkrs.set_bits(KEY_BPF, 0b00);
        pkrs.set_bits(KEY_SHARED, 0b10);
        pkrs
    }

    fn helper_mode_pkrs(&self) -> PkrsState {
        if !self.cfg.pks {
            return PkrsState::all_enabled();
        }
        // Helpers need kernel access; the critical-object domain stays
        // access-disabled while COP is on. Shared stays write-disabled.
        let mut pkrs = PkrsState::all_disabled();
        pkrs.set_bits(KEY_KERNEL, 0b00);
        pkrs.set_bits(KEY_BPF, 0b00);
        pkrs.set_bits(KEY_SHARED, 0b10);
        pkrs.set_bits(KEY_CRITICAL, if self.cfg.cop { 0b01 } else { 0b00 });
        pkrs
    }

    /// Switch CR3 to the image's space. No flush unless this PCID value was
    /// last used by a different space, in which case exactly the conflicting
    /// PCID's entries are flushed.
    fn switch_space(&mut self, space: AsId, pcid: u16) {
        let conflict = self.pcid_owner.get(&pcid).map(|o| *o != space).unwrap_or(false);
        self.machine.write_cr3(space, pcid, !conflict).expect("cr3 switch");
        if conflict {
            self.counters.pcid_conflict_flushes += 1;
        }
        self.pcid_owner.insert(pcid, space);
    }

    /// Enter BPF execution: flip the permission register to the BPF domain
    /// view, switch address space, swap stacks, materialize the context.
    pub fn enter_bpf(&mut self, id: ImageId) -> Result<(), RuntimeError> {
        if self.cpu.in_bpf {
            return Err(RuntimeError::ReentrantEntry);
        }
        let (space, pcid, prog_type, stack_top) = {
            let img = self.images.get(id.0).ok_or(RuntimeError::UnknownImage)?;
            (img.space, img.pcid, img.prog.prog_type, img.stack_top)
        };
        self.cpu.in_bpf = true;
        self.cpu.saved_pkrs = self.machine.pkrs();
        // Mirror of the saved permission register lives on a critical page.
        self.machine
            .write_virt_unchecked(
                self.kernel_space,
                SAVED_STATE_VADDR,
                &self.cpu.saved_pkrs.raw.to_le_bytes(),
            )
            .expect("saved-state page");
        let bpf_pkrs = self.bpf_mode_pkrs();
        self.machine.set_pkrs(bpf_pkrs);
        self.switch_space(space, pcid);
        self.cpu.saved_stack_cursor = self.cpu.stack_cursor;
        self.cpu.stack_cursor = stack_top;

        match prog_type {
            ProgType::SocketFilter => {
                // Persistent context: alias the packet frame into the window.
                let packet_frame = self.packet_frame;
                let img = &mut self.images[id.0];
                alloc::virt_map(&mut self.machine, space, &mut img.ctx, 0, packet_frame, KEY_BPF, false)
                    .expect("context aliasing");
            }
            ProgType::Tracepoint => {
                // Local context: copy the event record onto the BPF stack.
                let mut record = [0u8; 128];
                self.machine
                    .read_virt_unchecked(self.kernel_space, EVENT_RECORD_VADDR, &mut record)
                    .expect("event record");
                self.machine
                    .write_virt_unchecked(space, stack_top, &record)
                    .expect("context copy-in");
            }
        }
        Ok(())
    }

    /// Leave BPF execution, reversing everything `enter_bpf` did. For local
    /// contexts the (possibly modified) copy is mirrored back out.
    pub fn exit_bpf(&mut self, id: ImageId) {
        assert!(self.cpu.in_bpf, "exit without entry");
        let (space, pcid_of_kernel, prog_type, stack_top) = {
            let img = &self.images[id.0];
            (img.space, 0u16, img.prog.prog_type, img.stack_top)
        };
        match prog_type {
            ProgType::SocketFilter => {
                let img = &mut self.images[id.0];
                alloc::virt_unmap(&mut self.machine, space, &mut img.ctx, 0)
                    .expect("context unmap");
            }
            ProgType::Tracepoint => {
                let mut record = [0u8; 128];
                self.machine
                    .read_virt_unchecked(space, stack_top, &mut record)
                    .expect("context copy-out");
                self.machine
                    .write_virt_unchecked(self.kernel_space, EVENT_RECORD_VADDR, &record)
                    .expect("event record");
            }
        }
        self.cpu.stack_cursor = self.cpu.saved_stack_cursor;
        let kernel_space = self.kernel_space;
        self.switch_space(kernel_space, pcid_of_kernel);
        self.machine.set_pkrs(self.cpu.saved_pkrs);
        self.cpu.in_bpf = false;
    }

    // ---- execution ---------------------------------------------------------

    /// Stage an input event: the packet frame for persistent contexts and
    /// the kernel event record for local ones.
    fn stage_event(&mut self, event: &[u8]) {
        let len = event.len().min((PAGE_SIZE - 8) as usize);
        let mut page = vec![0u8; PAGE_SIZE as usize];
        page[..8].copy_from_slice(&(len as u64).to_le_bytes());
        page[8..8 + len].copy_from_slice(&event[..len]);
        self.machine.write_phys(self.packet_frame, 0, &page);
        let rec_len = event.len().min(120);
        let mut record = [0u8; 128];
        record[..8].copy_from_slice(&(rec_len as u64).to_le_bytes());
        record[8..8 + rec_len].copy_from_slice(&event[..rec_len]);
        self.machine
            .write_virt_unchecked(self.kernel_space, EVENT_RECORD_VADDR, &record)
            .expect("event record");
    }

    /// Run one program over one input event.
    pub fn run(&mut self, id: ImageId, event: &[u8]) -> RunResult {
        let mut trace = Vec::new();
        self.stage_event(event);
        self.enter_bpf(id).expect("run while already in BPF");
        self.machine.set_context(AccessContext::Bpf);
        self.counters.runs += 1;

        let img = &self.images[id.0];
        let (name, prog, space) = (img.name.clone(), img.prog.clone(), img.space);
        let (code_vaddr, stack_top) = (img.code_vaddr, img.stack_top);
        let ctx_base = match prog.prog_type {
            ProgType::SocketFilter => img.ctx.base,
            ProgType::Tracepoint => stack_top,
        };
        let guards = img.guards.clone();
        if self.cfg.trace {
            trace.push(format!("ENTER prog={name} pcid={}", self.machine.active().1));
        }

        let verdict = self.interpret(id, &prog, code_vaddr, stack_top, ctx_base, &guards, &mut trace);

        self.machine.set_context(AccessContext::Privileged);
        self.exit_bpf(id);
        let _ = space;

        // Exploit-success oracle: any run that left the kernel sentinel
        // modified escaped containment, whatever else it reported.
        let verdict = if self.sentinel_intact() {
            verdict
        } else {
            self.rearm_sentinel();
            Verdict::KernelTampered { vaddr: SENTINEL_VADDR }
        };
        if self.cfg.trace {
            trace.push(format!("EXIT prog={name} verdict={}", verdict.label()));
        }
        RunResult { verdict, trace }
    }

    #[allow(clippy::too_many_arguments)]
    fn interpret(
        &mut self,
        id: ImageId,
        prog: &Program,
        code_vaddr: u64,
        stack_top: u64,
        ctx_base: u64,
        guards: &BTreeMap<usize, Vec<Guard>>,
        trace: &mut Vec<String>,
    ) -> Verdict {
        let mut regs = [0u64; 11];
        regs[1] = ctx_base;
        regs[10] = stack_top;
        let mut pc = 0usize;
        self.cpu.instruction_counter = 0;
        self.cpu.irq_fired = false;

        loop {
            if let Some(at) = self.cfg.interrupt_at {
                if !self.cpu.irq_fired && self.cpu.instruction_counter + 1 == at {
                    self.cpu.irq_fired = true;
                    if self.cfg.trace {
                        trace.push(format!("IRQ at={at} in_bpf={}", self.cpu.in_bpf));
                    }
                    self.fire_interrupt();
                }
            }
            // Instruction fetch: exercises the W^X mapping of the code pages.
            if let Err(fault) = self.machine.check_exec(code_vaddr + pc as u64 * 8) {
                if self.cfg.trace {
                    trace.push(fault.to_string());
                }
                return Verdict::PageFault { insn: pc, fault };
            }
            self.cpu.instruction_counter += 1;

            match &prog.insns[pc] {
                Insn::Alu { op, dst, src } => {
                    let s = match src {
                        Operand::Imm(v) => *v as u64,
                        Operand::Reg(r) => regs[r.index()],
                    };
                    let d = regs[dst.index()];
                    regs[dst.index()] = alu_semantics(*op, d, s);
                    pc += 1;
                }
                Insn::Load { width, dst, base, off } => {
                    let addr = regs[base.index()].wrapping_add(*off as i64 as u64);
                    let mut buf = [0u8; 8];
                    let n = width.bytes() as usize;
                    match self.machine.read(addr, &mut buf[..n]) {
                        Ok(()) => regs[dst.index()] = u64::from_le_bytes(buf),
                        Err(fault) => return self.fault_verdict(pc, fault, false, trace),
                    }
                    pc += 1;
                }
                Insn::Store { width, base, off, src } => {
                    let addr = regs[base.index()].wrapping_add(*off as i64 as u64);
                    let bytes = regs[src.index()].to_le_bytes();
                    if let Err(fault) = self.machine.write(addr, &bytes[..width.bytes() as usize]) {
                        return self.fault_verdict(pc, fault, false, trace);
                    }
                    pc += 1;
                }
                Insn::StoreImm { width, base, off, imm } => {
                    let addr = regs[base.index()].wrapping_add(*off as i64 as u64);
                    let bytes = (*imm as u64).to_le_bytes();
                    if let Err(fault) = self.machine.write(addr, &bytes[..width.bytes() as usize]) {
                        return self.fault_verdict(pc, fault, false, trace);
                    }
                    pc += 1;
                }
                Insn::Ja { off } => {
                    pc = (pc as i64 + 1 + *off as i64) as usize;
                }
                Insn::Jmp { cond, lhs, rhs, off } => {
                    let a = regs[lhs.index()];
                    let b = match rhs {
                        Operand::Imm(v) => *v as u64,
                        Operand::Reg(r) => regs[r.index()],
                    };
                    pc = if cond.eval(a, b) {
                        (pc as i64 + 1 + *off as i64) as usize
                    } else {
                        pc + 1
                    };
                }
                Insn::Call { helper } => {
                    if let Some(checks) = guards.get(&pc) {
                        for g in checks {
                            let value = regs[g.reg as usize];
                            let ok = g.lo <= value && value <= g.hi;
                            self.counters.guard_checks += 1;
                            if self.cfg.trace {
                                trace.push(format!(
                                    "GUARD insn={pc} reg=r{} lo=0x{:x} hi=0x{:x} value=0x{value:x} ok={ok}",
                                    g.reg, g.lo, g.hi
                                ));
                            }
                            if !ok {
                                return Verdict::DpaViolation {
                                    insn: pc,
                                    reg: g.reg,
                                    value,
                                    lo: g.lo,
                                    hi: g.hi,
                                };
                            }
                        }
                    }
                    if self.cfg.trace {
                        trace.push(format!("CALL insn={pc} helper={helper}"));
                    }
                    let args = [regs[1], regs[2], regs[3], regs[4], regs[5]];
                    match self.call_helper(id, helper, args) {
                        Ok(r0) => {
                            regs[0] = r0;
                            for r in regs.iter_mut().take(6).skip(1) {
                                *r = 0; // caller-saved registers are clobbered
                            }
                        }
                        Err(fault) => return self.fault_verdict(pc, fault, true, trace),
                    }
                    pc += 1;
                }
                Insn::Exit => {
                    return Verdict::Completed { r0: regs[0] };
                }
            }
        }
    }

    /// Dispatch a helper call: save the permission register, open the kernel
    /// domain (critical objects stay closed while COP is on), run the body,
    /// restore.
    pub fn call_helper(
        &mut self,
        id: ImageId,
        helper: &str,
        args: [u64; 5],
    ) -> Result<u64, Fault> {
        let spec = self.registry.get(helper).expect("verified call unknown at runtime").clone();
        self.counters.helper_calls += 1;
        let maps = self.images[id.0].maps.clone();
        let saved = self.machine.set_pkrs(self.helper_mode_pkrs());
        let prev_ctx = self.machine.set_context(AccessContext::Helper);
        let result = {
            let mut hctx = HelperCtx {
                mem: AccessMem::new(&mut self.machine),
                maps: &maps,
                scratch_base: SCRATCH_OBJ_BASE,
            };
            helpers::execute(&spec, &mut hctx, args)
        };
        self.machine.set_context(prev_ctx);
        self.machine.set_pkrs(saved);
        result
    }

    fn fault_verdict(
        &mut self,
        insn: usize,
        fault: Fault,
        in_helper: bool,
        trace: &mut Vec<String>,
    ) -> Verdict {
        if self.cfg.trace {
            trace.push(fault.to_string());
        }
        match fault.kind {
            FaultKind::PageFault | FaultKind::WriteProtFault | FaultKind::ExecFault => {
                Verdict::PageFault { insn, fault }
            }
            FaultKind::PkAccessDisabled | FaultKind::PkWriteDisabled => {
                let key = self
                    .machine
                    .key_of(self.machine.active().0.expect("active space"), fault.vaddr);
                if in_helper && key == Some(KEY_CRITICAL) {
                    Verdict::CopViolation { insn, fault }
                } else {
                    Verdict::PksViolation { insn, fault }
                }
            }
        }
    }

    /// Simulated interrupt arrival. Inside BPF execution the permission
    /// register is opened for the handler and restored exactly afterwards;
    /// outside, the handler runs with no permission traffic at all.
    pub fn fire_interrupt(&mut self) {
        let prev_ctx = self.machine.set_context(AccessContext::Privileged);
        if self.cpu.in_bpf {
            let saved = self.machine.set_pkrs(PkrsState::all_enabled());
            self.interrupt_handler();
            self.machine.set_pkrs(saved);
        } else {
            self.interrupt_handler();
        }
        self.machine.set_context(prev_ctx);
    }

    /// The canned handler: bump a counter on a kernel page and consult the
    /// shared descriptor table. A fault here is a simulation bug.
    fn interrupt_handler(&mut self) {
        let count = self.machine.read_u64(IRQ_SCRATCH_VADDR).expect("irq handler read fault");
        self.machine.write_u64(IRQ_SCRATCH_VADDR, count + 1).expect("irq handler write fault");
        let mut descriptor = [0u8; 8];
        self.machine
            .read(DESCRIPTOR_TABLE_VADDR, &mut descriptor)
            .expect("irq handler descriptor fault");
    }

    /// Run every image over every event, in order; the spec'd multi-attach
    /// hook semantics.
    pub fn dispatch(&mut self, images: &[ImageId], events: &[Vec<u8>]) -> Vec<RunResult> {
        let mut out = Vec::with_capacity(images.len() * events.len());
        for event in events {
            for id in images {
                out.push(self.run(*id, event));
            }
        }
        out
    }

    // ---- syscall-path map access (userspace side of the bridge) ------------

    pub fn map_write(&mut self, id: ImageId, map_idx: usize, offset: u64, bytes: &[u8]) {
        let img = &self.images[id.0];
        let vaddr = img.maps[map_idx].data_vaddr + offset;
        self.machine.write_virt_unchecked(img.space, vaddr, bytes).expect("map poke");
    }

    pub fn map_read(&self, id: ImageId, map_idx: usize, offset: u64, len: usize) -> Vec<u8> {
        let img = &self.images[id.0];
        let vaddr = img.maps[map_idx].data_vaddr + offset;
        let mut buf = vec![0u8; len];
        self.machine.read_virt_unchecked(img.space, vaddr, &mut buf).expect("map peek");
        buf
    }

    // ---- introspection ------------------------------------------------------

    pub fn sentinel_intact(&self) -> bool {
        let mut b = [0u8; 1];
        self.machine
            .read_virt_unchecked(self.kernel_space, SENTINEL_VADDR, &mut b)
            .expect("sentinel page");
        b[0] == SENTINEL_BYTE
    }

    pub fn rearm_sentinel(&mut self) {
        self.machine
            .write_virt_unchecked(self.kernel_space, SENTINEL_VADDR, &[SENTINEL_BYTE])
            .expect("sentinel page");
    }

    /// Metadata integrity: every map's ops-record sentinel word unchanged.
    pub fn critical_sentinels_intact(&self) -> bool {
        for img in &self.images {
            for m in img.maps.iter() {
                let mut buf = [0u8; 8];
                self.machine
                    .read_virt_unchecked(img.space, m.meta_vaddr, &mut buf)
                    .expect("metadata page");
                if u64::from_le_bytes(buf) != META_SENTINEL {
                    return false;
                }
            }
        }
        true
    }

    pub fn image_pcid(&self, id: ImageId) -> u16 {
        self.images[id.0].pcid
    }

    pub fn image_name(&self, id: ImageId) -> &str {
        &self.images[id.0].name
    }

    pub fn image_window(&self, id: ImageId) -> (u64, u64) {
        let base = WINDOW_BASE + id.0 as u64 * WINDOW_STRIDE;
        (base, base + WINDOW_STRIDE)
    }

    pub fn image_frames(&self, id: ImageId) -> Vec<Pfn> {
        self.images[id.0].pool.frames().collect()
    }

    pub fn map_data_vaddr(&self, id: ImageId, map_idx: usize) -> u64 {
        self.images[id.0].maps[map_idx].data_vaddr
    }

    pub fn map_meta_vaddr(&self, id: ImageId, map_idx: usize) -> u64 {
        self.images[id.0].maps[map_idx].meta_vaddr
    }

    pub fn image_stack_depth(&self, id: ImageId) -> u64 {
        self.images[id.0].max_stack_depth
    }

    pub fn callsites(&self, id: ImageId) -> Rc<BTreeMap<usize, Vec<CallsiteArg>>> {
        self.images[id.0].callsites.clone()
    }

    pub fn cpu(&self) -> &CpuState {
        &self.cpu
    }

    /// (pkrs, active space, active pcid, stack cursor, in_bpf): the state
    /// tuple entry/exit must compose to the identity on.
    pub fn cpu_snapshot(&self) -> (u32, Option<AsId>, u16, u64, bool) {
        let (space, pcid) = self.machine.active();
        (self.machine.pkrs().raw, space, pcid, self.cpu.stack_cursor, self.cpu.in_bpf)
    }

    pub fn mem_counters(&self) -> &MemCounters {
        &self.machine.counters
    }

    pub fn counters_report(&self) -> CountersReport {
        CountersReport {
            pcid_conflict_flushes: self.counters.pcid_conflict_flushes,
            tlb_fills: self.machine.counters.tlb_fills,
            tlb_hits: self.machine.counters.tlb_hits,
            faults: self.machine.counters.faults.clone(),
            audit_violations: self.machine.counters.audit_violations,
            tlb_shadow_mismatches: self.machine.counters.tlb_shadow_mismatches,
        }
    }

    /// Direct machine access for harnesses that poke at paging state.
    pub fn machine_mut(&mut self) -> &mut Machine {
        &mut self.machine
    }

    pub fn machine(&self) -> &Machine {
        &self.machine
    }
}

/// Concrete ALU semantics shared by the interpreter; 32-bit ops truncate
/// and zero-extend, shifts mask their amount, mod32 by zero keeps the
/// (truncated) dividend.
pub fn alu_semantics(op: AluOp, d: u64, s: u64) -> u64 {
    match op {
        AluOp::Mov => s,
        AluOp::Mov32 => s as u32 as u64,
        AluOp::Add => d.wrapping_add(s),
        AluOp::Sub => d.wrapping_sub(s),
        AluOp::Mul => d.wrapping_mul(s),
        AluOp::And => d & s,
        AluOp::Or => d | s,
        AluOp::Or32 => ((d as u32) | (s as u32)) as u64,
        AluOp::Lsh => d << (s & 63),
        AluOp::Rsh => d >> (s & 63),
        AluOp::Mod32 => {
            let (d32, s32) = (d as u32, s as u32);
            if s32 == 0 {
                d32 as u64
            } else {
                (d32 % s32) as u64
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::assemble;

    fn load_src(sandbox: &mut Sandbox, src: &str, flags: BugFlags) -> ImageId {
        let prog = assemble(src).unwrap();
        sandbox.load(prog, flags).unwrap()
    }

    #[test]
    fn trivial_program_completes() {
        let mut sb = Sandbox::new(SandboxConfig::default());
        let id = load_src(&mut sb, "mov r0, 0\nexit", BugFlags::default());
        let res = sb.run(id, &[]);
        assert_eq!(res.verdict, Verdict::Completed { r0: 0 });
    }

    #[test]
    fn verifier_reject_surfaces_from_load() {
        let mut sb = Sandbox::new(SandboxConfig::default());
        let prog = assemble("ja -1").unwrap();
        match sb.load(prog, BugFlags::default()) {
            Err(LoadError::Rejected(reason)) => assert!(reason.contains("back edge")),
            other => panic!("expected a reject, got {other:?}"),
        }
    }

    #[test]
    fn enter_exit_is_involution() {
        let mut sb = Sandbox::new(SandboxConfig::default());
        let id = load_src(&mut sb, "mov r0, 0\nexit", BugFlags::default());
        let before = sb.cpu_snapshot();
        sb.enter_bpf(id).unwrap();
        assert!(sb.cpu().in_bpf);
        assert_ne!(sb.cpu_snapshot().0, before.0, "BPF mode changed the register");
        sb.exit_bpf(id);
        assert_eq!(sb.cpu_snapshot(), before);
    }

    #[test]
    fn nested_entry_refused() {
        let mut sb = Sandbox::new(SandboxConfig::default());
        let id = load_src(&mut sb, "mov r0, 0\nexit", BugFlags::default());
        sb.enter_bpf(id).unwrap();
        assert_eq!(sb.enter_bpf(id), Err(RuntimeError::ReentrantEntry));
        sb.exit_bpf(id);
    }

    #[test]
    fn kernel_reads_fault_in_bpf_mode() {
        let mut sb = Sandbox::new(SandboxConfig::default());
        let id = load_src(&mut sb, "mov r0, 0\nexit", BugFlags::default());
        sb.enter_bpf(id).unwrap();
        let err = sb.machine_mut().read(SENTINEL_PAGE, &mut [0u8]).unwrap_err();
        assert_eq!(err.kind, FaultKind::PkAccessDisabled);
        // Shared domain: readable, not writable.
        sb.machine_mut().read(DESCRIPTOR_TABLE_VADDR, &mut [0u8]).unwrap();
        let err = sb.machine_mut().write(DESCRIPTOR_TABLE_VADDR, &[0u8]).unwrap_err();
        assert_eq!(err.kind, FaultKind::PkWriteDisabled);
        sb.exit_bpf(id);
    }

    #[test]
    fn stack_guard_pages_fault() {
        let mut sb = Sandbox::new(SandboxConfig::default());
        let id = load_src(&mut sb, "mov r0, 0\nexit", BugFlags::default());
        let stack_top = sb.images[0].stack_top;
        sb.enter_bpf(id).unwrap();
        // In-stack store works; one page below is a guard hole.
        sb.machine_mut().write(stack_top - 8, &[1u8; 8]).unwrap();
        let below = (stack_top - STACK_BYTES) - PAGE_SIZE;
        let err = sb.machine_mut().write(below, &[0u8]).unwrap_err();
        assert_eq!(err.kind, FaultKind::PageFault);
        sb.exit_bpf(id);
    }

    #[test]
    fn benign_byte_counter_counts() {
        let src = "\
.type socket_filter
.map stats kind=array value_size=8 entries=256
mov r6, r1
ldx1 r2, [r6+17]
mov r1, 0
call map_lookup
ldx8 r3, [r0+0]
ldx8 r4, [r6+0]
add r3, r4
stx8 [r0+0], r3
mov r0, 0
exit";
        let mut sb = Sandbox::new(SandboxConfig::default());
        let id = load_src(&mut sb, src, BugFlags::default());
        // proto byte (offset 9) = 0x11 (UDP), length 14
        let mut pkt = vec![0u8; 14];
        pkt[9] = 0x11;
        for _ in 0..3 {
            let res = sb.run(id, &pkt);
            assert_eq!(res.verdict, Verdict::Completed { r0: 0 }, "{:?}", res.trace);
        }
        let bucket = sb.map_read(id, 0, 0x11 * 8, 8);
        assert_eq!(u64::from_le_bytes(bucket.try_into().unwrap()), 3 * 14);
        assert_eq!(sb.mem_counters().audit_violations, 0);
    }

    #[test]
    fn tracepoint_context_is_stack_copied() {
        let src = "\
.type tracepoint
ldx8 r2, [r1+0]
mov r0, r2
exit";
        let mut sb = Sandbox::new(SandboxConfig::default());
        let id = load_src(&mut sb, src, BugFlags::default());
        let res = sb.run(id, &[7u8; 32]);
        // header of the event record = its length
        assert_eq!(res.verdict, Verdict::Completed { r0: 32 });
    }

    #[test]
    fn interrupt_mid_run_is_transparent() {
        let src = "\
.type socket_filter
.map stats kind=array value_size=8 entries=256
mov r6, r1
ldx1 r2, [r6+17]
mov r1, 0
call map_lookup
ldx8 r3, [r0+0]
add r3, 1
stx8 [r0+0], r3
mov r0, 0
exit";
        let mut pkt = vec![0u8; 32];
        pkt[9] = 6;
        let baseline = {
            let mut sb = Sandbox::new(SandboxConfig::default());
            let id = load_src(&mut sb, src, BugFlags::default());
            sb.run(id, &pkt).verdict
        };
        for k in 1..=9 {
            let cfg = SandboxConfig { interrupt_at: Some(k), ..Default::default() };
            let mut sb = Sandbox::new(cfg);
            let id = load_src(&mut sb, src, BugFlags::default());
            let got = sb.run(id, &pkt).verdict;
            assert_eq!(got, baseline, "irq at {k} changed the verdict");
            // handler really ran
            let mut buf = [0u8; 8];
            sb.machine()
                .read_virt_unchecked(sb.kernel_space, IRQ_SCRATCH_VADDR, &mut buf)
                .unwrap();
            assert_eq!(u64::from_le_bytes(buf), 1);
        }
    }

    #[test]
    fn interrupt_outside_bpf_leaves_pkrs_alone() {
        let mut sb = Sandbox::new(SandboxConfig::default());
        let before = sb.machine().pkrs();
        sb.fire_interrupt();
        assert_eq!(sb.machine().pkrs(), before);
        let mut buf = [0u8; 8];
        sb.machine()
            .read_virt_unchecked(sb.kernel_space, IRQ_SCRATCH_VADDR, &mut buf)
            .unwrap();
        assert_eq!(u64::from_le_bytes(buf), 1);
    }

    #[test]
    fn interrupt_beyond_program_never_fires() {
        let cfg = SandboxConfig { interrupt_at: Some(1000), ..Default::default() };
        let mut sb = Sandbox::new(cfg);
        let id = load_src(&mut sb, "mov r0, 0\nexit", BugFlags::default());
        let res = sb.run(id, &[]);
        assert_eq!(res.verdict, Verdict::Completed { r0: 0 });
        let mut buf = [0u8; 8];
        sb.machine()
            .read_virt_unchecked(sb.kernel_space, IRQ_SCRATCH_VADDR, &mut buf)
            .unwrap();
        assert_eq!(u64::from_le_bytes(buf), 0, "handler must not have run");
    }

    #[test]
    fn sequential_loads_get_distinct_pcids_and_windows() {
        let mut sb = Sandbox::new(SandboxConfig::default());
        let mut ids = Vec::new();
        for _ in 0..128 {
            ids.push(load_src(&mut sb, "mov r0, 0\nexit", BugFlags::default()));
        }
        let mut pcids: Vec<u16> = ids.iter().map(|id| sb.image_pcid(*id)).collect();
        pcids.sort_unstable();
        pcids.dedup();
        assert_eq!(pcids.len(), 128, "pcids must be distinct with 12 bits");
        // pairwise-disjoint frames
        let mut frames: Vec<Pfn> = ids.iter().flat_map(|id| sb.image_frames(*id)).collect();
        let n = frames.len();
        frames.sort_unstable();
        frames.dedup();
        assert_eq!(frames.len(), n, "image frames overlap");
    }

    #[test]
    fn cross_program_probe_page_faults() {
        let victim_src = "\
.type socket_filter
.map cfg kind=array value_size=8 entries=1
mov r0, 0
exit";
        let mut sb = Sandbox::new(SandboxConfig::default());
        let victim = load_src(&mut sb, victim_src, BugFlags::default());
        let _ = victim;
        let attacker = load_src(&mut sb, "mov r0, 0\nexit", BugFlags::default());
        // Dereference inside the victim's window from the attacker's space.
        let victim_map = sb.map_data_vaddr(victim, 0);
        sb.enter_bpf(attacker).unwrap();
        let err = sb.machine_mut().read(victim_map, &mut [0u8]).unwrap_err();
        assert_eq!(err.kind, FaultKind::PageFault);
        sb.exit_bpf(attacker);
    }

    #[test]
    fn dpa_guard_trips_on_range_escape() {
        // The deduced point for r1 is the map fd 0; overwrite at runtime is
        // impossible without a bug, so craft one via the or32 flag.
        let src = "\
.type socket_filter
.map cfg kind=array value_size=16 entries=1
.map rb kind=ringbuf value_size=4096 entries=1
mov r1, 0
mov r2, 0
call map_lookup
ldx8 r5, [r0+0]
mov r6, 0x600000002
jge r5, r6, +6
jle r5, 0, +5
or32 r5, 0
mov r1, r5
mov r2, 16
mov r3, 0
call ringbuf_reserve
mov r0, 0
exit";
        let flags = BugFlags { or32_truncation: true, ..Default::default() };
        let mut sb = Sandbox::new(SandboxConfig::default());
        let id = load_src(&mut sb, src, flags);
        // user value 0x600000000: bounds pass, runtime truncates to 0,
        // deduced point is 1
        sb.map_write(id, 0, 0, &0x6_0000_0000u64.to_le_bytes());
        let res = sb.run(id, &[]);
        match res.verdict {
            Verdict::DpaViolation { reg: 1, value: 0, lo: 1, hi: 1, .. } => {}
            other => panic!("expected the fd guard to trip, got {other:?}"),
        }
    }

    #[test]
    fn helper_mode_allows_kernel_but_not_critical() {
        let mut sb = Sandbox::new(SandboxConfig::default());
        let id = load_src(
            &mut sb,
            ".map m kind=array value_size=8 entries=1\nmov r0, 0\nexit",
            BugFlags::default(),
        );
        sb.enter_bpf(id).unwrap();
        let helper_pkrs = sb.helper_mode_pkrs();
        let saved = sb.machine_mut().set_pkrs(helper_pkrs);
        // kernel page: accessible in helper mode
        sb.machine_mut().read(KERNEL_SCRATCH_VADDR, &mut [0u8]).unwrap();
        // critical metadata page: still access-disabled
        let meta = sb.map_meta_vaddr(id, 0);
        let err = sb.machine_mut().read(meta, &mut [0u8]).unwrap_err();
        assert_eq!(err.kind, FaultKind::PkAccessDisabled);
        sb.machine_mut().set_pkrs(saved);
        sb.exit_bpf(id);
    }

    #[test]
    fn map_update_delete_and_skb_load_from_assembly() {
        let src = "\
.type socket_filter
.map m kind=array value_size=8 entries=4
mov r6, r1
mov r1, 0
mov r2, 1
mov r3, 0x99
call map_update
mov r1, 0
mov r2, 3
call map_delete
mov r1, r6
mov r2, 9
mov r3, 1
call skb_load
exit";
        let mut sb = Sandbox::new(SandboxConfig::default());
        let id = load_src(&mut sb, src, BugFlags::default());
        sb.map_write(id, 0, 3 * 8, &u64::MAX.to_le_bytes()); // delete target
        let mut pkt = vec![0u8; 16];
        pkt[9] = 0x2f;
        let res = sb.run(id, &pkt);
        assert_eq!(res.verdict, Verdict::Completed { r0: 0x2f }, "{:?}", res.trace);
        let elem1 = sb.map_read(id, 0, 8, 8);
        assert_eq!(u64::from_le_bytes(elem1.try_into().unwrap()), 0x99);
        let elem3 = sb.map_read(id, 0, 24, 8);
        assert_eq!(u64::from_le_bytes(elem3.try_into().unwrap()), 0, "delete must clear");
    }

    #[test]
    fn benign_ringbuf_reserve_write_submit() {
        let src = "\
.type socket_filter
.map rb kind=ringbuf value_size=4096 entries=1
mov r1, 0
mov r2, 64
mov r3, 0
call ringbuf_reserve
jeq r0, 0, +4
st8 [r0+0], 0x1234
mov r1, r0
mov r2, 0
call ringbuf_submit
mov r0, 0
exit";
        let mut sb = Sandbox::new(SandboxConfig::default());
        let id = load_src(&mut sb, src, BugFlags::default());
        let res = sb.run(id, &[]);
        assert_eq!(res.verdict, Verdict::Completed { r0: 0 }, "{:?}", res.trace);
        // producer word bumped, payload written at the reservation
        let producer = sb.map_read(id, 0, 0, 8);
        assert_eq!(u64::from_le_bytes(producer.try_into().unwrap()), 1);
        let payload = sb.map_read(id, 0, 16, 8);
        assert_eq!(u64::from_le_bytes(payload.try_into().unwrap()), 0x1234);
        assert!(sb.critical_sentinels_intact());
    }

    #[test]
    fn dispatch_runs_every_image_per_event() {
        let mut sb = Sandbox::new(SandboxConfig::default());
        let a = load_src(&mut sb, "mov r0, 1\nexit", BugFlags::default());
        let b = load_src(&mut sb, "mov r0, 2\nexit", BugFlags::default());
        let events: Vec<Vec<u8>> = (0..100).map(|i| vec![i as u8; 12]).collect();
        let results = sb.dispatch(&[a, b], &events);
        assert_eq!(results.len(), 200);
        for (i, res) in results.iter().enumerate() {
            let want = if i % 2 == 0 { 1 } else { 2 };
            assert_eq!(res.verdict, Verdict::Completed { r0: want }, "run {i}");
        }
        assert!(sb.counters_report().faults.is_empty(), "benign batch must not fault");
    }

    #[test]
    fn image_frame_budget_matches_declared_memory() {
        // byte counter: 1 code page + 1 stack page + 1 map data page
        // (256*8 bytes) + 1 metadata page; the context window is unbacked.
        let src = "\
.type socket_filter
.map stats kind=array value_size=8 entries=256
mov r6, r1
ldx1 r2, [r6+17]
mov r1, 0
call map_lookup
ldx8 r3, [r0+0]
ldx8 r4, [r6+0]
add r3, r4
stx8 [r0+0], r3
mov r0, 0
exit";
        let mut sb = Sandbox::new(SandboxConfig::default());
        let id = load_src(&mut sb, src, BugFlags::default());
        assert_eq!(sb.image_frames(id).len(), 4);
    }

    #[test]
    fn code_pages_resist_writes_even_without_keys() {
        // W^X is base paging, not a key property: with every protection off,
        // a write aimed at the program's own code page still faults.
        let mut sb = Sandbox::new(SandboxConfig::all_off());
        let id = load_src(&mut sb, "mov r0, 0\nexit", BugFlags::default());
        let (window, _) = sb.image_window(id);
        sb.enter_bpf(id).unwrap();
        let err = sb.machine_mut().write(window, &[0u8]).unwrap_err();
        assert_eq!(err.kind, FaultKind::WriteProtFault);
        assert!(sb.machine_mut().check_exec(window).is_ok());
        sb.exit_bpf(id);
    }

    #[test]
    fn image_layout_has_map_metadata_adjacent() {
        let mut sb = Sandbox::new(SandboxConfig::default());
        let id = load_src(
            &mut sb,
            ".map m kind=array value_size=8 entries=1\nmov r0, 0\nexit",
            BugFlags::default(),
        );
        let data = sb.map_data_vaddr(id, 0);
        let meta = sb.map_meta_vaddr(id, 0);
        assert_eq!(meta, data + PAGE_SIZE);
        assert!(sb.critical_sentinels_intact());
    }
}
