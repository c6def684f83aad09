//! Static verification: CFG checks, abstract interpretation with unsigned
//! value-range tracking, helper-signature checks, and export of deduced
//! ranges at helper callsites for runtime parameter auditing.
//!
//! The interval lattice is deliberately minimal: 64-bit unsigned bounds plus
//! 32-bit bounds kept consistent under truncation. Wrapping ranges are not
//! represented; any operation that might wrap widens to the full range.
//! Loops are impossible (the CFG check rejects back edges), so the analysis
//! is a single forward pass in instruction order with interval union at
//! merge points.
//!
//! [`BugFlags`] swaps individual sound transfer functions for the unsound
//! ones that shipped in real verifiers, so the runtime layers can be
//! exercised against genuine bypasses.

use crate::helpers::{ArgKind, HelperRegistry, RetKind};
use crate::isa::{AluOp, Insn, JmpCond, Operand, Program, Reg, Width, MAX_INSNS, NUM_REGS};
use serde::Serialize;
use serde_json::json;
use std::collections::BTreeMap;
use thiserror::Error;

/// Bytes of stack below the frame register available to a program.
pub const STACK_BYTES: i64 = 512;

/// Size of the context window an accepted program may address.
pub const CTX_WINDOW_BYTES: u64 = 4096;

/// Unsigned 64-bit and 32-bit bounds of a scalar.
///
/// Invariant: `umin <= umax`, `u32min <= u32max`, and the 32-bit bounds are
/// consistent with truncating the 64-bit bounds whenever the 64-bit range
/// stays within one 4 GiB window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ValueRange {
    pub umin: u64,
    pub umax: u64,
    pub u32min: u32,
    pub u32max: u32,
}

impl ValueRange {
    pub fn full() -> ValueRange {
        ValueRange { umin: 0, umax: u64::MAX, u32min: 0, u32max: u32::MAX }
    }

    pub fn point(v: u64) -> ValueRange {
        ValueRange::of(v, v)
    }

    /// Range with 32-bit bounds derived from the 64-bit bounds.
    pub fn of(umin: u64, umax: u64) -> ValueRange {
        debug_assert!(umin <= umax);
        let (u32min, u32max) = derive_u32(umin, umax);
        ValueRange { umin, umax, u32min, u32max }
    }

    /// Zero-extension of a 32-bit range.
    pub fn from_u32(lo: u32, hi: u32) -> ValueRange {
        ValueRange { umin: lo as u64, umax: hi as u64, u32min: lo, u32max: hi }
    }

    pub fn is_point(&self) -> bool {
        self.umin == self.umax
    }

    pub fn contains(&self, v: u64) -> bool {
        self.umin <= v && v <= self.umax
    }

    pub fn subset_of(&self, other: &ValueRange) -> bool {
        self.umin >= other.umin && self.umax <= other.umax
    }

    pub fn union(&self, other: &ValueRange) -> ValueRange {
        ValueRange {
            umin: self.umin.min(other.umin),
            umax: self.umax.max(other.umax),
            u32min: self.u32min.min(other.u32min),
            u32max: self.u32max.max(other.u32max),
        }
    }

    fn with_u64(self, umin: u64, umax: u64) -> Option<ValueRange> {
        if umin > umax {
            return None;
        }
        let (dlo, dhi) = derive_u32(umin, umax);
        let u32min = self.u32min.max(dlo);
        let u32max = self.u32max.min(dhi);
        if u32min > u32max {
            return None;
        }
        Some(ValueRange { umin, umax, u32min, u32max })
    }
}

fn derive_u32(umin: u64, umax: u64) -> (u32, u32) {
    if umin >> 32 == umax >> 32 {
        (umin as u32, umax as u32)
    } else {
        (0, u32::MAX)
    }
}

/// Smallest all-ones value covering `x` (0 stays 0).
fn ones_cover_u64(x: u64) -> u64 {
    if x == 0 {
        0
    } else {
        u64::MAX >> x.leading_zeros()
    }
}

fn ones_cover_u32(x: u32) -> u32 {
    if x == 0 {
        0
    } else {
        u32::MAX >> x.leading_zeros()
    }
}

/// Inclusive signed byte-offset interval carried by address values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OffRange {
    pub lo: i64,
    pub hi: i64,
}

impl OffRange {
    pub const ZERO: OffRange = OffRange { lo: 0, hi: 0 };

    fn union(&self, other: &OffRange) -> OffRange {
        OffRange { lo: self.lo.min(other.lo), hi: self.hi.max(other.hi) }
    }

    /// Shift the interval by a scalar range; `None` when the result escapes
    /// 64-bit signed offsets.
    fn shift(&self, range: &ValueRange, negate: bool) -> Option<OffRange> {
        let (a, b) = if negate {
            (-(range.umax as i128), -(range.umin as i128))
        } else {
            (range.umin as i128, range.umax as i128)
        };
        let lo = self.lo as i128 + a;
        let hi = self.hi as i128 + b;
        if lo < i64::MIN as i128 || hi > i64::MAX as i128 {
            return None;
        }
        Some(OffRange { lo: lo as i64, hi: hi as i64 })
    }
}

/// The verifier's model of one register.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AbstractValue {
    Uninit,
    Scalar(ValueRange),
    /// Offset relative to the frame register r10 (valid window [-512, 0)).
    StackAddr(OffRange),
    /// Pointer into map `map`'s value object.
    MapValueAddr { map: usize, off: OffRange },
    /// Pointer into the context window.
    CtxAddr(OffRange),
    /// Possibly-null memory handle returned by a helper. `origin` ties
    /// copies together for the null-test transfer; `delta` accumulates
    /// pointer arithmetic (only reachable with the tracking bug enabled).
    MemOrNull { map: usize, origin: u32, delta: i64 },
    NullConst,
}

impl AbstractValue {
    fn is_uninit(&self) -> bool {
        matches!(self, AbstractValue::Uninit)
    }

    fn join(&self, other: &AbstractValue) -> AbstractValue {
        use AbstractValue::*;
        match (self, other) {
            (Scalar(a), Scalar(b)) => Scalar(a.union(b)),
            (StackAddr(a), StackAddr(b)) => StackAddr(a.union(b)),
            (MapValueAddr { map: m1, off: o1 }, MapValueAddr { map: m2, off: o2 }) if m1 == m2 => {
                MapValueAddr { map: *m1, off: o1.union(o2) }
            }
            (CtxAddr(a), CtxAddr(b)) => CtxAddr(a.union(b)),
            (a @ MemOrNull { .. }, b @ MemOrNull { .. }) if a == b => *a,
            (NullConst, NullConst) => NullConst,
            _ => Uninit,
        }
    }
}

/// Injectable verifier defects modeling real CVE patterns.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BugFlags {
    /// 32-bit OR of a boundary-spanning range with an immediate collapses to
    /// a bogus point value (incorrect truncation of the upper bound).
    pub or32_truncation: bool,
    /// Possibly-null memory handles are not tracked as pointers: arithmetic
    /// on them is allowed, and the null test marks every derived copy as a
    /// known-zero scalar regardless of accumulated offset.
    pub mem_or_null_untracked: bool,
    /// The map-kind check on helper call arguments is skipped.
    pub helper_map_mischeck: bool,
}

/// Why a program was rejected.
#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum Reject {
    #[error("program too large: {len} instructions (limit {MAX_INSNS})")]
    TooLarge { len: usize },
    #[error("insn {at}: jump to invalid destination {target}")]
    BadJumpTarget { at: usize, target: i64 },
    #[error("insn {at}: back edge to {target}")]
    BackEdge { at: usize, target: i64 },
    #[error("insn {at}: unreachable instruction")]
    Unreachable { at: usize },
    #[error("insn {at}: stack access out of bounds ({lo}..{hi})")]
    OobStack { at: usize, lo: i64, hi: i64 },
    #[error("insn {at}: map value access out of bounds ({lo}..{hi}, object size {size})")]
    OobMapValue { at: usize, lo: i64, hi: i64, size: u64 },
    #[error("insn {at}: context access out of bounds ({lo}..{hi})")]
    OobCtx { at: usize, lo: i64, hi: i64 },
    #[error("insn {at}: bad helper argument r{reg}: {why}")]
    BadHelperArg { at: usize, reg: u8, why: String },
    #[error("insn {at}: read of uninitialized r{reg}")]
    UninitRead { at: usize, reg: u8 },
    #[error("insn {at}: unbounded or invalid address arithmetic")]
    UnboundedAddrArith { at: usize },
    #[error("insn {at}: invalid memory access: {why}")]
    BadMemAccess { at: usize, why: String },
    #[error("insn {at}: invalid ALU operation: {why}")]
    BadAluOp { at: usize, why: String },
    #[error("insn {at}: unknown helper `{name}`")]
    UnknownHelper { at: usize, name: String },
}

/// Deduced per-argument ranges at one call site: the runtime-audit payload.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CallsiteArg {
    pub reg: u8,
    pub range: ValueRange,
}

#[derive(Debug, Clone)]
pub struct VerifierOutput {
    pub accepted: bool,
    pub reject: Option<Reject>,
    /// For each CALL instruction of an accepted program: the deduced range
    /// of every scalar argument register.
    pub callsite_ranges: BTreeMap<usize, Vec<CallsiteArg>>,
    pub max_stack_depth: u64,
}

impl VerifierOutput {
    fn rejected(reject: Reject) -> VerifierOutput {
        VerifierOutput {
            accepted: false,
            reject: Some(reject),
            callsite_ranges: BTreeMap::new(),
            max_stack_depth: 0,
        }
    }

    pub fn reject_reason(&self) -> Option<String> {
        self.reject.as_ref().map(|r| r.to_string())
    }

    /// The documented JSON shape:
    /// `{accepted, reject_reason, callsites: [{insn_index, args: [{reg, umin, umax}]}]}`.
    pub fn to_json(&self) -> serde_json::Value {
        let callsites: Vec<_> = self
            .callsite_ranges
            .iter()
            .map(|(insn, args)| {
                json!({
                    "insn_index": insn,
                    "args": args
                        .iter()
                        .map(|a| json!({"reg": a.reg, "umin": a.range.umin, "umax": a.range.umax}))
                        .collect::<Vec<_>>(),
                })
            })
            .collect();
        json!({
            "accepted": self.accepted,
            "reject_reason": self.reject_reason(),
            "callsites": callsites,
        })
    }
}

// ---------------------------------------------------------------------------
// CFG checks
// ---------------------------------------------------------------------------

/// Successor instruction indices of `insn` at index `at`. Targets may be out
/// of range; the caller validates.
fn successors(insn: &Insn, at: usize) -> Vec<i64> {
    let mut out = Vec::with_capacity(2);
    if let Some(t) = insn.jump_target(at) {
        out.push(t);
    }
    if insn.falls_through() {
        out.push(at as i64 + 1);
    }
    out
}

/// Accepts iff the program is within the size limit, has no back edge, no
/// unreachable instruction, and every jump lands on a valid instruction.
pub fn check_cfg(prog: &Program) -> Result<(), Reject> {
    let n = prog.insns.len();
    if n > MAX_INSNS {
        return Err(Reject::TooLarge { len: n });
    }
    for (at, insn) in prog.insns.iter().enumerate() {
        for target in successors(insn, at) {
            if target < 0 || target >= n as i64 {
                return Err(Reject::BadJumpTarget { at, target });
            }
        }
    }
    for (at, insn) in prog.insns.iter().enumerate() {
        if let Some(target) = insn.jump_target(at) {
            if target <= at as i64 {
                return Err(Reject::BackEdge { at, target });
            }
        }
    }
    // Forward propagation doubles as reachability since all edges point
    // forward; the test suite cross-checks with an independent BFS.
    let mut reachable = vec![false; n];
    reachable[0] = true;
    for at in 0..n {
        if !reachable[at] {
            return Err(Reject::Unreachable { at });
        }
        for t in successors(&prog.insns[at], at) {
            reachable[t as usize] = true;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Abstract interpretation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
struct AbstractState {
    regs: [AbstractValue; NUM_REGS],
}

impl AbstractState {
    fn join(&self, other: &AbstractState) -> AbstractState {
        let mut regs = self.regs;
        for (i, r) in regs.iter_mut().enumerate() {
            *r = r.join(&other.regs[i]);
        }
        AbstractState { regs }
    }
}

/// How registers look on entry.
#[derive(Debug, Clone)]
pub enum EntryState {
    /// r1 points at the context window, r10 at the frame base.
    Context,
    /// Scalar inputs for analysis-only harnesses: `(register, range)`.
    Scalars(Vec<(u8, ValueRange)>),
}

struct Tracker<'a> {
    prog: &'a Program,
    flags: BugFlags,
    registry: &'a HelperRegistry,
    callsites: BTreeMap<usize, Vec<CallsiteArg>>,
    max_stack_depth: u64,
    next_origin: u32,
    exit_state: Option<AbstractState>,
}

/// Run the value-tracking pass. Callers must have run [`check_cfg`] first.
pub fn track(
    prog: &Program,
    flags: BugFlags,
    registry: &HelperRegistry,
    entry: EntryState,
) -> VerifierOutput {
    let mut tracker = Tracker {
        prog,
        flags,
        registry,
        callsites: BTreeMap::new(),
        max_stack_depth: 0,
        next_origin: 0,
        exit_state: None,
    };
    match tracker.run(entry) {
        Ok(()) => VerifierOutput {
            accepted: true,
            reject: None,
            callsite_ranges: tracker.callsites,
            max_stack_depth: tracker.max_stack_depth,
        },
        Err(reject) => VerifierOutput::rejected(reject),
    }
}

/// Full verification: CFG checks, then value tracking from the program-type
/// entry state. Pure function of `(prog, flags)` for a fixed registry.
pub fn verify(prog: &Program, flags: BugFlags, registry: &HelperRegistry) -> VerifierOutput {
    if let Err(reject) = check_cfg(prog) {
        return VerifierOutput::rejected(reject);
    }
    track(prog, flags, registry, EntryState::Context)
}

/// Verification with scalar entry registers instead of a context pointer;
/// used by analysis harnesses and the soundness fuzzers.
pub fn verify_with_inputs(
    prog: &Program,
    flags: BugFlags,
    registry: &HelperRegistry,
    inputs: &[(u8, ValueRange)],
) -> VerifierOutput {
    if let Err(reject) = check_cfg(prog) {
        return VerifierOutput::rejected(reject);
    }
    track(prog, flags, registry, EntryState::Scalars(inputs.to_vec()))
}

/// Deduced scalar ranges per register, joined over every reachable exit.
/// Analysis-harness surface for soundness checks against concrete oracles.
pub fn analyze_exit_ranges(
    prog: &Program,
    flags: BugFlags,
    registry: &HelperRegistry,
    inputs: &[(u8, ValueRange)],
) -> Result<BTreeMap<u8, ValueRange>, Reject> {
    check_cfg(prog)?;
    let mut tracker = Tracker {
        prog,
        flags,
        registry,
        callsites: BTreeMap::new(),
        max_stack_depth: 0,
        next_origin: 0,
        exit_state: None,
    };
    tracker.run(EntryState::Scalars(inputs.to_vec()))?;
    let mut out = BTreeMap::new();
    if let Some(state) = tracker.exit_state {
        for (i, v) in state.regs.iter().enumerate() {
            if let AbstractValue::Scalar(r) = v {
                out.insert(i as u8, *r);
            }
        }
    }
    Ok(out)
}

impl<'a> Tracker<'a> {
    fn run(&mut self, entry: EntryState) -> Result<(), Reject> {
        let n = self.prog.insns.len();
        let mut states: Vec<Option<AbstractState>> = vec![None; n];

        let mut start = AbstractState { regs: [AbstractValue::Uninit; NUM_REGS] };
        start.regs[10] = AbstractValue::StackAddr(OffRange::ZERO);
        match entry {
            EntryState::Context => {
                start.regs[1] = AbstractValue::CtxAddr(OffRange::ZERO);
            }
            EntryState::Scalars(inputs) => {
                for (reg, range) in inputs {
                    start.regs[reg as usize] = AbstractValue::Scalar(range);
                }
            }
        }
        states[0] = Some(start);

        for at in 0..n {
            let state = match states[at].take() {
                Some(s) => s,
                // Only possible when a branch was proved infeasible; the
                // instruction is then dead under the deduced facts.
                None => continue,
            };
            let outs = self.step(at, state)?;
            for (target, out) in outs {
                let slot = &mut states[target];
                *slot = Some(match slot.take() {
                    Some(prev) => prev.join(&out),
                    None => out,
                });
            }
        }
        Ok(())
    }

    /// Transfer one instruction; returns successor states.
    fn step(
        &mut self,
        at: usize,
        mut state: AbstractState,
    ) -> Result<Vec<(usize, AbstractState)>, Reject> {
        let insn = self.prog.insns[at].clone();
        match &insn {
            Insn::Alu { op, dst, src } => {
                self.apply_alu(at, &mut state, *op, *dst, src)?;
                Ok(vec![(at + 1, state)])
            }
            Insn::Load { width, dst, base, off } => {
                self.check_mem(at, &state, *base, *off, *width)?;
                state.regs[dst.index()] = AbstractValue::Scalar(load_result(*width));
                Ok(vec![(at + 1, state)])
            }
            Insn::Store { width, base, off, src } => {
                let sv = state.regs[src.index()];
                if sv.is_uninit() {
                    return Err(Reject::UninitRead { at, reg: src.index() as u8 });
                }
                let target = self.check_mem(at, &state, *base, *off, *width)?;
                if target == MemTarget::Ctx {
                    return Err(Reject::BadMemAccess { at, why: "store to read-only context".into() });
                }
                // Spilled pointers may rest on the stack (reloads come back
                // as scalars); storing a pointer anywhere else would leak a
                // kernel address through a map.
                if !matches!(sv, AbstractValue::Scalar(_)) && target != MemTarget::Stack {
                    return Err(Reject::BadMemAccess {
                        at,
                        why: "pointer store outside the stack".into(),
                    });
                }
                Ok(vec![(at + 1, state)])
            }
            Insn::StoreImm { width, base, off, .. } => {
                let target = self.check_mem(at, &state, *base, *off, *width)?;
                if target == MemTarget::Ctx {
                    return Err(Reject::BadMemAccess { at, why: "store to read-only context".into() });
                }
                Ok(vec![(at + 1, state)])
            }
            Insn::Ja { .. } => {
                let target = insn.jump_target(at).unwrap() as usize;
                Ok(vec![(target, state)])
            }
            Insn::Jmp { cond, lhs, rhs, .. } => {
                let target = insn.jump_target(at).unwrap() as usize;
                self.apply_jmp(at, state, *cond, *lhs, rhs, target)
            }
            Insn::Call { helper } => {
                self.apply_call(at, &mut state, helper)?;
                Ok(vec![(at + 1, state)])
            }
            Insn::Exit => {
                if state.regs[0].is_uninit() {
                    return Err(Reject::UninitRead { at, reg: 0 });
                }
                self.exit_state = Some(match self.exit_state.take() {
                    Some(prev) => prev.join(&state),
                    None => state,
                });
                Ok(vec![])
            }
        }
    }

    fn scalar_of(
        &self,
        at: usize,
        state: &AbstractState,
        operand: &Operand,
    ) -> Result<ValueRange, Reject> {
        match operand {
            Operand::Imm(v) => Ok(ValueRange::point(*v as u64)),
            Operand::Reg(r) => match state.regs[r.index()] {
                AbstractValue::Scalar(range) => Ok(range),
                AbstractValue::Uninit => Err(Reject::UninitRead { at, reg: r.index() as u8 }),
                _ => Err(Reject::BadAluOp {
                    at,
                    why: format!("r{} holds a pointer where a scalar is required", r.index()),
                }),
            },
        }
    }

    fn apply_alu(
        &mut self,
        at: usize,
        state: &mut AbstractState,
        op: AluOp,
        dst: Reg,
        src: &Operand,
    ) -> Result<(), Reject> {
        use AbstractValue::*;

        if op == AluOp::Mov {
            let value = match src {
                Operand::Imm(v) => Scalar(ValueRange::point(*v as u64)),
                Operand::Reg(r) => {
                    let v = state.regs[r.index()];
                    if v.is_uninit() {
                        return Err(Reject::UninitRead { at, reg: r.index() as u8 });
                    }
                    v
                }
            };
            state.regs[dst.index()] = value;
            return Ok(());
        }

        let dst_val = state.regs[dst.index()];
        if dst_val.is_uninit() && op != AluOp::Mov32 {
            return Err(Reject::UninitRead { at, reg: dst.index() as u8 });
        }

        // Pointer arithmetic: ADD/SUB of a pointer and a scalar.
        match (op, dst_val) {
            (AluOp::Add | AluOp::Sub, StackAddr(_) | MapValueAddr { .. } | CtxAddr(_)) => {
                let delta = self.scalar_of(at, state, src)?;
                let negate = op == AluOp::Sub;
                let shifted = |off: &OffRange| {
                    off.shift(&delta, negate).ok_or(Reject::UnboundedAddrArith { at })
                };
                state.regs[dst.index()] = match dst_val {
                    StackAddr(off) => StackAddr(shifted(&off)?),
                    MapValueAddr { map, off } => MapValueAddr { map, off: shifted(&off)? },
                    CtxAddr(off) => CtxAddr(shifted(&off)?),
                    _ => unreachable!(),
                };
                return Ok(());
            }
            (AluOp::Add, Scalar(range)) => {
                // scalar += pointer swaps the roles
                if let Operand::Reg(r) = src {
                    let sv = state.regs[r.index()];
                    let shifted = |off: &OffRange| {
                        off.shift(&range, false).ok_or(Reject::UnboundedAddrArith { at })
                    };
                    match sv {
                        StackAddr(off) => {
                            state.regs[dst.index()] = StackAddr(shifted(&off)?);
                            return Ok(());
                        }
                        MapValueAddr { map, off } => {
                            state.regs[dst.index()] = MapValueAddr { map, off: shifted(&off)? };
                            return Ok(());
                        }
                        CtxAddr(off) => {
                            state.regs[dst.index()] = CtxAddr(shifted(&off)?);
                            return Ok(());
                        }
                        _ => {}
                    }
                }
            }
            (AluOp::Add, MemOrNull { map, origin, delta }) => {
                if !self.flags.mem_or_null_untracked {
                    return Err(Reject::UnboundedAddrArith { at });
                }
                // Untracked handle: arithmetic slides an offset along with
                // it and nobody remembers.
                let step = self.scalar_of(at, state, src)?;
                if !step.is_point() {
                    return Err(Reject::UnboundedAddrArith { at });
                }
                state.regs[dst.index()] =
                    MemOrNull { map, origin, delta: delta.wrapping_add(step.umin as i64) };
                return Ok(());
            }
            (_, MemOrNull { .. } | NullConst) => {
                return Err(Reject::UnboundedAddrArith { at });
            }
            _ => {}
        }

        // Everything below is scalar-only.
        let a = match dst_val {
            Scalar(r) => r,
            Uninit if op == AluOp::Mov32 => ValueRange::full(), // mov32 overwrites dst
            _ => {
                return Err(Reject::BadAluOp {
                    at,
                    why: format!("{} on a pointer value", op.mnemonic()),
                })
            }
        };
        let b = self.scalar_of(at, state, src)?;

        let result = match op {
            AluOp::Add => match (a.umax.checked_add(b.umax), a.umin.checked_add(b.umin)) {
                (Some(hi), Some(lo)) => ValueRange::of(lo, hi),
                _ => ValueRange::full(),
            },
            AluOp::Sub => {
                if a.umin < b.umax {
                    ValueRange::full()
                } else {
                    ValueRange::of(a.umin - b.umax, a.umax - b.umin)
                }
            }
            AluOp::Mul => {
                if a.is_point() && b.is_point() {
                    match a.umin.checked_mul(b.umin) {
                        Some(v) => ValueRange::point(v),
                        None => ValueRange::full(),
                    }
                } else {
                    ValueRange::full()
                }
            }
            AluOp::And => match src {
                Operand::Imm(c) => ValueRange::of(0, *c as u64),
                Operand::Reg(_) => ValueRange::of(0, a.umax.min(b.umax)),
            },
            AluOp::Or => {
                if self.flags.or32_truncation && self.spanning_or_imm(&a, src) {
                    let v = (a.umin | b.umin) & 0xffff_ffff;
                    ValueRange::point(v)
                } else {
                    ValueRange::of(a.umin.max(b.umin), ones_cover_u64(a.umax | b.umax))
                }
            }
            AluOp::Lsh => match src {
                Operand::Imm(s) => {
                    let s = *s as u32;
                    if a.umax > (u64::MAX >> s) {
                        ValueRange::full()
                    } else {
                        ValueRange::of(a.umin << s, a.umax << s)
                    }
                }
                Operand::Reg(_) => ValueRange::full(),
            },
            AluOp::Rsh => match src {
                Operand::Imm(s) => ValueRange::of(a.umin >> *s as u32, a.umax >> *s as u32),
                Operand::Reg(_) => ValueRange::full(),
            },
            AluOp::Mov32 => ValueRange::from_u32(b.u32min, b.u32max),
            AluOp::Or32 => {
                if self.flags.or32_truncation && self.spanning_or_imm(&a, src) {
                    // The CVE pattern: the upper bound is truncated to 32
                    // bits, collapsing the range to a bogus constant.
                    let v = (a.umin | b.umin) & 0xffff_ffff;
                    ValueRange::point(v)
                } else {
                    ValueRange::from_u32(
                        a.u32min.max(b.u32min),
                        ones_cover_u32(a.u32max | b.u32max),
                    )
                }
            }
            AluOp::Mod32 => match src {
                Operand::Imm(c) => {
                    let c32 = *c as u32;
                    if c32 != 0 {
                        ValueRange::from_u32(0, c32 - 1)
                    } else {
                        ValueRange::from_u32(0, u32::MAX)
                    }
                }
                Operand::Reg(_) => ValueRange::from_u32(0, u32::MAX),
            },
            AluOp::Mov => unreachable!(),
        };
        state.regs[dst.index()] = Scalar(result);
        Ok(())
    }

    /// The buggy truncation only triggers for OR with an immediate on a
    /// range spanning a 32-bit boundary.
    fn spanning_or_imm(&self, a: &ValueRange, src: &Operand) -> bool {
        matches!(src, Operand::Imm(_)) && (a.umin >> 32) != (a.umax >> 32)
    }

    fn apply_jmp(
        &mut self,
        at: usize,
        state: AbstractState,
        cond: JmpCond,
        lhs: Reg,
        rhs: &Operand,
        target: usize,
    ) -> Result<Vec<(usize, AbstractState)>, Reject> {
        use AbstractValue::*;

        let lv = state.regs[lhs.index()];
        if lv.is_uninit() {
            return Err(Reject::UninitRead { at, reg: lhs.index() as u8 });
        }

        // Null test on a possibly-null memory handle.
        if let MemOrNull { origin, .. } = lv {
            let is_null_test =
                matches!(rhs, Operand::Imm(0)) && matches!(cond, JmpCond::Eq | JmpCond::Ne);
            if !is_null_test {
                return Err(Reject::BadAluOp {
                    at,
                    why: "possibly-null value may only be compared against 0".into(),
                });
            }
            let mut null_state = state.clone();
            let mut ptr_state = state;
            for reg in 0..NUM_REGS {
                if let MemOrNull { map: m, origin: o, delta } = null_state.regs[reg] {
                    if o != origin {
                        continue;
                    }
                    null_state.regs[reg] = if self.flags.mem_or_null_untracked {
                        // The defect: every derived copy is marked known-zero
                        // on the null branch, dropping its accumulated delta.
                        Scalar(ValueRange::point(0))
                    } else {
                        NullConst
                    };
                    ptr_state.regs[reg] =
                        MapValueAddr { map: m, off: OffRange { lo: delta, hi: delta } };
                }
            }
            let (taken, fall) = match cond {
                JmpCond::Eq => (null_state, ptr_state),
                JmpCond::Ne => (ptr_state, null_state),
                _ => unreachable!(),
            };
            return Ok(vec![(target, taken), (at + 1, fall)]);
        }

        let a = match lv {
            Scalar(r) => r,
            _ => return Err(Reject::BadAluOp { at, why: "conditional jump on a pointer".into() }),
        };
        let b = self.scalar_of(at, &state, rhs)?;

        let mut out = Vec::new();
        if let Some((ta, tb)) = refine(cond, &a, &b) {
            let mut s = state.clone();
            s.regs[lhs.index()] = Scalar(ta);
            if let Operand::Reg(r) = rhs {
                s.regs[r.index()] = Scalar(tb);
            }
            out.push((target, s));
        }
        if let Some((fa, fb)) = refine(negate(cond), &a, &b) {
            let mut s = state;
            s.regs[lhs.index()] = Scalar(fa);
            if let Operand::Reg(r) = rhs {
                s.regs[r.index()] = Scalar(fb);
            }
            out.push((at + 1, s));
        }
        Ok(out)
    }

    /// Bounds-check a memory operand; returns what object it touches.
    fn check_mem(
        &mut self,
        at: usize,
        state: &AbstractState,
        base: Reg,
        insn_off: i16,
        width: Width,
    ) -> Result<MemTarget, Reject> {
        use AbstractValue::*;
        let w = width.bytes() as i64;
        let shift = insn_off as i64;
        match state.regs[base.index()] {
            StackAddr(off) => {
                let lo = off.lo + shift;
                let hi = off.hi + shift;
                if lo < -STACK_BYTES || hi + w > 0 {
                    return Err(Reject::OobStack { at, lo, hi });
                }
                self.max_stack_depth = self.max_stack_depth.max((-lo) as u64);
                Ok(MemTarget::Stack)
            }
            MapValueAddr { map, off } => {
                let size = self.prog.declared_maps[map].object_size();
                let lo = off.lo + shift;
                let hi = off.hi + shift;
                if lo < 0 || (hi + w) as i128 > size as i128 {
                    return Err(Reject::OobMapValue { at, lo, hi, size });
                }
                Ok(MemTarget::Map)
            }
            CtxAddr(off) => {
                let lo = off.lo + shift;
                let hi = off.hi + shift;
                if lo < 0 || (hi + w) as u64 > CTX_WINDOW_BYTES {
                    return Err(Reject::OobCtx { at, lo, hi });
                }
                Ok(MemTarget::Ctx)
            }
            Uninit => Err(Reject::UninitRead { at, reg: base.index() as u8 }),
            NullConst => Err(Reject::BadMemAccess { at, why: "null dereference".into() }),
            MemOrNull { .. } => Err(Reject::BadMemAccess {
                at,
                why: "dereference of possibly-null value before a null test".into(),
            }),
            Scalar(_) => Err(Reject::BadMemAccess {
                at,
                why: format!("r{} is a scalar, not a pointer", base.index()),
            }),
        }
    }

    fn apply_call(
        &mut self,
        at: usize,
        state: &mut AbstractState,
        helper: &str,
    ) -> Result<(), Reject> {
        use AbstractValue::*;
        let spec = self
            .registry
            .get(helper)
            .ok_or_else(|| Reject::UnknownHelper { at, name: helper.to_string() })?;

        let mut fd_map: Option<usize> = None;
        let mut recorded = Vec::new();

        for (i, arg) in spec.args.iter().enumerate() {
            let reg = (i + 1) as u8;
            let value = state.regs[reg as usize];
            if value.is_uninit() {
                return Err(Reject::UninitRead { at, reg });
            }
            let bad = |why: String| Reject::BadHelperArg { at, reg, why };
            match &arg {
                ArgKind::MapFd { expect } => {
                    let range = match value {
                        Scalar(r) => r,
                        _ => return Err(bad("map fd must be a constant scalar".into())),
                    };
                    if !range.is_point() {
                        return Err(bad("map fd must be a known constant".into()));
                    }
                    let idx = range.umin as usize;
                    if idx >= self.prog.declared_maps.len() {
                        return Err(bad(format!("map index {idx} is not declared")));
                    }
                    if let Some(kind) = expect {
                        if !self.flags.helper_map_mischeck
                            && self.prog.declared_maps[idx].kind != *kind
                        {
                            return Err(bad(format!(
                                "map {idx} has kind {:?}, helper needs {kind:?}",
                                self.prog.declared_maps[idx].kind
                            )));
                        }
                    }
                    fd_map = Some(idx);
                    recorded.push(CallsiteArg { reg, range });
                }
                ArgKind::MapKeyIndex => {
                    let range = match value {
                        Scalar(r) => r,
                        _ => return Err(bad("map key must be a scalar".into())),
                    };
                    let map = fd_map.ok_or_else(|| {
                        Reject::BadHelperArg {
                            at,
                            reg,
                            why: "key argument without a map fd".into(),
                        }
                    })?;
                    let expected = ValueRange::of(0, self.prog.declared_maps[map].n_entries - 1);
                    if !range.subset_of(&expected) {
                        return Err(bad(format!(
                            "key range [{:#x},{:#x}] outside expected [0,{:#x}]",
                            range.umin, range.umax, expected.umax
                        )));
                    }
                    recorded.push(CallsiteArg { reg, range });
                }
                ArgKind::Scalar { expected } => {
                    let range = match value {
                        Scalar(r) => r,
                        _ => return Err(bad("expected a scalar argument".into())),
                    };
                    if !range.subset_of(expected) {
                        return Err(bad(format!(
                            "range [{:#x},{:#x}] outside expected [{:#x},{:#x}]",
                            range.umin, range.umax, expected.umin, expected.umax
                        )));
                    }
                    recorded.push(CallsiteArg { reg, range });
                }
                ArgKind::CtxPtr => match value {
                    CtxAddr(off) if off.lo >= 0 && (off.hi as u64) < CTX_WINDOW_BYTES => {}
                    CtxAddr(_) => return Err(bad("context pointer out of window".into())),
                    _ => return Err(bad("expected a context pointer".into())),
                },
                ArgKind::RingbufMem => match value {
                    MapValueAddr { map, .. }
                        if self.prog.declared_maps[map].kind == crate::isa::MapKind::Ringbuf => {}
                    _ => return Err(bad("expected a ringbuf memory handle".into())),
                },
            }
        }

        self.callsites.insert(at, recorded);

        // Helper calls clobber the caller-saved argument registers.
        for reg in 1..=5 {
            state.regs[reg] = Uninit;
        }
        state.regs[0] = match spec.ret {
            RetKind::Scalar => Scalar(ValueRange::full()),
            RetKind::MapValueAddr => {
                let map = fd_map.expect("MapValueAddr return requires a map fd argument");
                MapValueAddr { map, off: OffRange::ZERO }
            }
            RetKind::MemOrNull => {
                let map = fd_map.expect("MemOrNull return requires a map fd argument");
                let origin = self.next_origin;
                self.next_origin += 1;
                MemOrNull { map, origin, delta: 0 }
            }
        };
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum MemTarget {
    Stack,
    Map,
    Ctx,
}

fn load_result(width: Width) -> ValueRange {
    match width {
        Width::B1 => ValueRange::of(0, 0xff),
        Width::B2 => ValueRange::of(0, 0xffff),
        Width::B4 => ValueRange::of(0, 0xffff_ffff),
        Width::B8 => ValueRange::full(),
    }
}

fn negate(cond: JmpCond) -> JmpCond {
    match cond {
        JmpCond::Eq => JmpCond::Ne,
        JmpCond::Ne => JmpCond::Eq,
        JmpCond::Gt => JmpCond::Le,
        JmpCond::Le => JmpCond::Gt,
        JmpCond::Ge => JmpCond::Lt,
        JmpCond::Lt => JmpCond::Ge,
    }
}

/// Refine both operand ranges under `lhs <cond> rhs`; `None` when the
/// predicate is infeasible for the given ranges.
fn refine(cond: JmpCond, a: &ValueRange, b: &ValueRange) -> Option<(ValueRange, ValueRange)> {
    let (mut alo, mut ahi) = (a.umin, a.umax);
    let (mut blo, mut bhi) = (b.umin, b.umax);
    match cond {
        JmpCond::Eq => {
            alo = alo.max(blo);
            ahi = ahi.min(bhi);
            blo = alo;
            bhi = ahi;
        }
        JmpCond::Ne => {
            if a.is_point() && b.is_point() && a.umin == b.umin {
                return None;
            }
            // Only endpoint trims are sound for an interval domain.
            if b.is_point() {
                if alo == b.umin {
                    alo = alo.checked_add(1)?;
                }
                if ahi == b.umin {
                    ahi = ahi.checked_sub(1)?;
                }
            }
            if a.is_point() {
                if blo == a.umin {
                    blo = blo.checked_add(1)?;
                }
                if bhi == a.umin {
                    bhi = bhi.checked_sub(1)?;
                }
            }
        }
        JmpCond::Gt => {
            alo = alo.max(blo.checked_add(1)?);
            bhi = bhi.min(ahi.checked_sub(1)?);
        }
        JmpCond::Ge => {
            alo = alo.max(blo);
            bhi = bhi.min(ahi);
        }
        JmpCond::Lt => {
            ahi = ahi.min(bhi.checked_sub(1)?);
            blo = blo.max(alo.checked_add(1)?);
        }
        JmpCond::Le => {
            ahi = ahi.min(bhi);
            blo = blo.max(alo);
        }
    }
    let ra = a.with_u64(alo, ahi)?;
    let rb = b.with_u64(blo, bhi)?;
    Some((ra, rb))
}
