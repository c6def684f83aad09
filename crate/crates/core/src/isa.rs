//! Miniature BPF-like instruction set, line-based assembly format, and the
//! program container.
//!
//! The subset is deliberately small: 64-bit ALU ops plus the 32-bit variants
//! (`mov32`, `or32`, `mod32`) that the known verifier bugs hinge on, sized
//! loads/stores, forward jumps with unsigned comparisons, helper calls, and
//! `exit`. Jump offsets are compile-time constants and instruction-granular;
//! there is no instruction that can touch a control register.

use serde::Serialize;
use std::fmt;
use thiserror::Error;

/// Hard cap on program length, in instructions.
pub const MAX_INSNS: usize = 4096;

/// Number of general-purpose registers (r0..r10). r10 is the frame base and
/// is never the destination of an ALU or load instruction.
pub const NUM_REGS: usize = 11;

/// A register index, r0..=r10.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Reg(u8);

impl Reg {
    pub const R0: Reg = Reg(0);
    pub const R10: Reg = Reg(10);

    pub fn new(index: u8) -> Result<Reg, AsmError> {
        if index as usize >= NUM_REGS {
            return Err(AsmError::OperandOutOfRange {
                line: 0,
                what: format!("register r{index} does not exist"),
            });
        }
        Ok(Reg(index))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn is_frame(self) -> bool {
        self.0 == 10
    }
}

impl fmt::Display for Reg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

/// ALU operations. The `32` variants truncate their operands to 32 bits and
/// zero-extend the result, matching the kernel semantics the CVEs subvert.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AluOp {
    Mov,
    Mov32,
    Add,
    Sub,
    Mul,
    And,
    Or,
    Or32,
    Lsh,
    Rsh,
    Mod32,
}

impl AluOp {
    pub fn mnemonic(self) -> &'static str {
        match self {
            AluOp::Mov => "mov",
            AluOp::Mov32 => "mov32",
            AluOp::Add => "add",
            AluOp::Sub => "sub",
            AluOp::Mul => "mul",
            AluOp::And => "and",
            AluOp::Or => "or",
            AluOp::Or32 => "or32",
            AluOp::Lsh => "lsh",
            AluOp::Rsh => "rsh",
            AluOp::Mod32 => "mod32",
        }
    }

    pub fn is_32bit(self) -> bool {
        matches!(self, AluOp::Mov32 | AluOp::Or32 | AluOp::Mod32)
    }
}

/// Unsigned comparison condition of a conditional jump.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum JmpCond {
    Eq,
    Ne,
    Gt,
    Ge,
    Lt,
    Le,
}

impl JmpCond {
    pub fn mnemonic(self) -> &'static str {
        match self {
            JmpCond::Eq => "jeq",
            JmpCond::Ne => "jne",
            JmpCond::Gt => "jgt",
            JmpCond::Ge => "jge",
            JmpCond::Lt => "jlt",
            JmpCond::Le => "jle",
        }
    }

    /// Evaluate the condition on concrete unsigned values.
    pub fn eval(self, lhs: u64, rhs: u64) -> bool {
        match self {
            JmpCond::Eq => lhs == rhs,
            JmpCond::Ne => lhs != rhs,
            JmpCond::Gt => lhs > rhs,
            JmpCond::Ge => lhs >= rhs,
            JmpCond::Lt => lhs < rhs,
            JmpCond::Le => lhs <= rhs,
        }
    }
}

/// Access width of a load/store, in bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Width {
    B1,
    B2,
    B4,
    B8,
}

impl Width {
    pub fn bytes(self) -> u64 {
        match self {
            Width::B1 => 1,
            Width::B2 => 2,
            Width::B4 => 4,
            Width::B8 => 8,
        }
    }

    fn suffix(self) -> &'static str {
        match self {
            Width::B1 => "1",
            Width::B2 => "2",
            Width::B4 => "4",
            Width::B8 => "8",
        }
    }
}

/// Second operand of an ALU op or conditional jump: register or immediate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Operand {
    Reg(Reg),
    Imm(i64),
}

/// One decoded instruction.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Insn {
    /// `<op> rD, (rS|imm)`
    Alu { op: AluOp, dst: Reg, src: Operand },
    /// `ldx{1,2,4,8} rD, [rS+off]`
    Load { width: Width, dst: Reg, base: Reg, off: i16 },
    /// `stx{1,2,4,8} [rD+off], rS`
    Store { width: Width, base: Reg, off: i16, src: Reg },
    /// `st{1,2,4,8} [rD+off], imm`
    StoreImm { width: Width, base: Reg, off: i16, imm: i64 },
    /// `ja +N`
    Ja { off: i16 },
    /// `j{eq,ne,gt,ge,lt,le} rA, (rB|imm), +N`
    Jmp { cond: JmpCond, lhs: Reg, rhs: Operand, off: i16 },
    /// `call <helper_name>`
    Call { helper: String },
    /// `exit`
    Exit,
}

impl Insn {
    /// Jump targets of this instruction when placed at index `at`, not
    /// including fall-through.
    pub fn jump_target(&self, at: usize) -> Option<i64> {
        match self {
            Insn::Ja { off } => Some(at as i64 + 1 + *off as i64),
            Insn::Jmp { off, .. } => Some(at as i64 + 1 + *off as i64),
            _ => None,
        }
    }

    /// Whether control can fall through to the next instruction.
    pub fn falls_through(&self) -> bool {
        !matches!(self, Insn::Ja { .. } | Insn::Exit)
    }
}

/// Kind of a declared map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MapKind {
    Array,
    Ringbuf,
}

impl MapKind {
    fn name(self) -> &'static str {
        match self {
            MapKind::Array => "array",
            MapKind::Ringbuf => "ringbuf",
        }
    }
}

/// A `.map` declaration. For ringbufs, `value_size * n_entries` is the
/// buffer capacity in bytes.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MapDecl {
    pub name: String,
    pub kind: MapKind,
    pub value_size: u64,
    pub n_entries: u64,
}

impl MapDecl {
    /// Size in bytes of the object a pointer into this map may roam over:
    /// one element for arrays, the whole buffer for ringbufs.
    pub fn object_size(&self) -> u64 {
        match self.kind {
            MapKind::Array => self.value_size,
            MapKind::Ringbuf => self.value_size * self.n_entries,
        }
    }

    pub fn data_bytes(&self) -> u64 {
        match self.kind {
            MapKind::Array => self.value_size * self.n_entries,
            // Ringbuf data region: producer/consumer words + buffer.
            MapKind::Ringbuf => 16 + self.value_size * self.n_entries,
        }
    }
}

/// Program type; determines how the runtime materializes the context.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ProgType {
    SocketFilter,
    Tracepoint,
}

/// A parsed program. Immutable after construction.
///
/// `name` is attachment metadata and is ignored by structural equality, so
/// `assemble(disassemble(p)) == p` holds.
#[derive(Debug, Clone)]
pub struct Program {
    pub name: String,
    pub prog_type: ProgType,
    pub insns: Vec<Insn>,
    pub declared_maps: Vec<MapDecl>,
}

impl PartialEq for Program {
    fn eq(&self, other: &Self) -> bool {
        self.prog_type == other.prog_type
            && self.insns == other.insns
            && self.declared_maps == other.declared_maps
    }
}

impl Eq for Program {}

impl Program {
    pub fn new(
        name: impl Into<String>,
        prog_type: ProgType,
        insns: Vec<Insn>,
        declared_maps: Vec<MapDecl>,
    ) -> Result<Program, AsmError> {
        let prog = Program { name: name.into(), prog_type, insns, declared_maps };
        prog.validate()?;
        Ok(prog)
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Program {
        self.name = name.into();
        self
    }

    fn validate(&self) -> Result<(), AsmError> {
        if self.insns.is_empty() {
            return Err(AsmError::Malformed("program has no instructions".into()));
        }
        if self.insns.len() > MAX_INSNS {
            return Err(AsmError::Malformed(format!(
                "program has {} instructions, limit is {MAX_INSNS}",
                self.insns.len()
            )));
        }
        match self.insns.last().unwrap() {
            Insn::Exit | Insn::Ja { .. } => {}
            _ => {
                return Err(AsmError::Malformed(
                    "control falls off the end: last instruction must be exit or ja".into(),
                ))
            }
        }
        for (i, insn) in self.insns.iter().enumerate() {
            validate_insn(insn).map_err(|what| AsmError::OperandOutOfRange { line: i + 1, what })?;
        }
        Ok(())
    }
}

/// Field-width validation shared by the assembler and `Program::new`.
fn validate_insn(insn: &Insn) -> Result<(), String> {
    match insn {
        Insn::Alu { op, dst, src } => {
            if dst.is_frame() {
                return Err("r10 is read-only and cannot be an ALU destination".into());
            }
            if matches!(op, AluOp::Lsh | AluOp::Rsh) {
                if let Operand::Imm(v) = src {
                    if !(0..64).contains(v) {
                        return Err(format!("shift amount {v} outside 0..=63"));
                    }
                }
            }
        }
        Insn::Load { dst, .. } => {
            if dst.is_frame() {
                return Err("r10 is read-only and cannot be a load destination".into());
            }
        }
        Insn::StoreImm { width, imm, .. } => {
            let bits = width.bytes() * 8;
            if bits < 64 {
                let lo = -(1i64 << (bits - 1));
                let hi = 1i64 << bits;
                if !(*imm >= lo && *imm < hi) {
                    return Err(format!("immediate {imm} does not fit a {bits}-bit store"));
                }
            }
        }
        _ => {}
    }
    Ok(())
}

/// Assembly errors. Line numbers are 1-based.
#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum AsmError {
    #[error("line {line}: syntax error: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("line {line}: unknown mnemonic `{mnemonic}`")]
    UnknownMnemonic { line: usize, mnemonic: String },
    #[error("line {line}: operand out of range: {what}")]
    OperandOutOfRange { line: usize, what: String },
    #[error("malformed program: {0}")]
    Malformed(String),
}

/// Every mnemonic the assembler accepts. Enumerated so tests can check the
/// full opcode surface (e.g. that nothing writes a control register).
pub const MNEMONICS: &[&str] = &[
    "mov", "mov32", "add", "sub", "mul", "and", "or", "or32", "lsh", "rsh", "mod32", "ldx1",
    "ldx2", "ldx4", "ldx8", "stx1", "stx2", "stx4", "stx8", "st1", "st2", "st4", "st8", "ja",
    "jeq", "jne", "jgt", "jge", "jlt", "jle", "call", "exit",
];

/// Parse assembly source into a [`Program`].
///
/// Grammar: one instruction per line, `#` comments, case-insensitive
/// mnemonics, `.type` and `.map` directives before or between instructions.
pub fn assemble(text: &str) -> Result<Program, AsmError> {
    let mut prog_type = ProgType::SocketFilter;
    let mut maps = Vec::new();
    let mut insns = Vec::new();

    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let stripped = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        };
        let stripped = stripped.trim();
        if stripped.is_empty() {
            continue;
        }
        if let Some(rest) = stripped.strip_prefix('.') {
            parse_directive(line, rest, &mut prog_type, &mut maps)?;
            continue;
        }
        insns.push(parse_insn(line, stripped)?);
    }

    let prog = Program { name: String::new(), prog_type, insns, declared_maps: maps };
    prog.validate()?;
    Ok(prog)
}

fn parse_directive(
    line: usize,
    rest: &str,
    prog_type: &mut ProgType,
    maps: &mut Vec<MapDecl>,
) -> Result<(), AsmError> {
    let mut parts = rest.split_whitespace();
    let head = parts.next().unwrap_or("").to_ascii_lowercase();
    match head.as_str() {
        "type" => {
            let arg = parts
                .next()
                .ok_or_else(|| syntax(line, ".type needs socket_filter or tracepoint"))?;
            *prog_type = match arg.to_ascii_lowercase().as_str() {
                "socket_filter" => ProgType::SocketFilter,
                "tracepoint" => ProgType::Tracepoint,
                other => return Err(syntax(line, format!("unknown program type `{other}`"))),
            };
            Ok(())
        }
        "map" => {
            let name = parts
                .next()
                .ok_or_else(|| syntax(line, ".map needs a name"))?
                .to_string();
            let mut kind = None;
            let mut value_size = None;
            let mut entries = None;
            for kv in parts {
                let (k, v) = kv
                    .split_once('=')
                    .ok_or_else(|| syntax(line, format!("expected key=value, got `{kv}`")))?;
                match k.to_ascii_lowercase().as_str() {
                    "kind" => {
                        kind = Some(match v.to_ascii_lowercase().as_str() {
                            "array" => MapKind::Array,
                            "ringbuf" => MapKind::Ringbuf,
                            other => {
                                return Err(syntax(line, format!("unknown map kind `{other}`")))
                            }
                        })
                    }
                    "value_size" => {
                        value_size = Some(parse_u64(v).map_err(|e| syntax(line, e))?);
                    }
                    "entries" => {
                        entries = Some(parse_u64(v).map_err(|e| syntax(line, e))?);
                    }
                    other => return Err(syntax(line, format!("unknown map attribute `{other}`"))),
                }
            }
            let kind = kind.ok_or_else(|| syntax(line, ".map needs kind="))?;
            let value_size = value_size.ok_or_else(|| syntax(line, ".map needs value_size="))?;
            let n_entries = entries.ok_or_else(|| syntax(line, ".map needs entries="))?;
            if value_size == 0 || n_entries == 0 {
                return Err(AsmError::OperandOutOfRange {
                    line,
                    what: "map value_size and entries must be nonzero".into(),
                });
            }
            if value_size
                .checked_mul(n_entries)
                .map(|total| total > 1 << 20)
                .unwrap_or(true)
            {
                return Err(AsmError::OperandOutOfRange {
                    line,
                    what: "map data exceeds the 1 MiB per-map cap".into(),
                });
            }
            maps.push(MapDecl { name, kind, value_size, n_entries });
            Ok(())
        }
        other => Err(syntax(line, format!("unknown directive `.{other}`"))),
    }
}

fn parse_insn(line: usize, text: &str) -> Result<Insn, AsmError> {
    let mut split = text.splitn(2, char::is_whitespace);
    let mnemonic = split.next().unwrap().to_ascii_lowercase();
    let rest = split.next().unwrap_or("").trim();
    let ops: Vec<&str> = if rest.is_empty() {
        Vec::new()
    } else {
        rest.split(',').map(str::trim).collect()
    };

    let insn = match mnemonic.as_str() {
        "mov" | "mov32" | "add" | "sub" | "mul" | "and" | "or" | "or32" | "lsh" | "rsh"
        | "mod32" => {
            let op = match mnemonic.as_str() {
                "mov" => AluOp::Mov,
                "mov32" => AluOp::Mov32,
                "add" => AluOp::Add,
                "sub" => AluOp::Sub,
                "mul" => AluOp::Mul,
                "and" => AluOp::And,
                "or" => AluOp::Or,
                "or32" => AluOp::Or32,
                "lsh" => AluOp::Lsh,
                "rsh" => AluOp::Rsh,
                _ => AluOp::Mod32,
            };
            let [d, s] = two(line, &mnemonic, &ops)?;
            Insn::Alu { op, dst: parse_reg(line, d)?, src: parse_operand(line, s)? }
        }
        "ldx1" | "ldx2" | "ldx4" | "ldx8" => {
            let width = width_of(&mnemonic);
            let [d, m] = two(line, &mnemonic, &ops)?;
            let (base, off) = parse_mem(line, m)?;
            Insn::Load { width, dst: parse_reg(line, d)?, base, off }
        }
        "stx1" | "stx2" | "stx4" | "stx8" => {
            let width = width_of(&mnemonic);
            let [m, s] = two(line, &mnemonic, &ops)?;
            let (base, off) = parse_mem(line, m)?;
            Insn::Store { width, base, off, src: parse_reg(line, s)? }
        }
        "st1" | "st2" | "st4" | "st8" => {
            let width = width_of(&mnemonic);
            let [m, v] = two(line, &mnemonic, &ops)?;
            let (base, off) = parse_mem(line, m)?;
            Insn::StoreImm { width, base, off, imm: parse_imm(line, v)? }
        }
        "ja" => {
            let [o] = one(line, &mnemonic, &ops)?;
            Insn::Ja { off: parse_joff(line, o)? }
        }
        "jeq" | "jne" | "jgt" | "jge" | "jlt" | "jle" => {
            let cond = match mnemonic.as_str() {
                "jeq" => JmpCond::Eq,
                "jne" => JmpCond::Ne,
                "jgt" => JmpCond::Gt,
                "jge" => JmpCond::Ge,
                "jlt" => JmpCond::Lt,
                _ => JmpCond::Le,
            };
            let [a, b, o] = three(line, &mnemonic, &ops)?;
            Insn::Jmp {
                cond,
                lhs: parse_reg(line, a)?,
                rhs: parse_operand(line, b)?,
                off: parse_joff(line, o)?,
            }
        }
        "call" => {
            let [name] = one(line, &mnemonic, &ops)?;
            if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                return Err(syntax(line, format!("bad helper name `{name}`")));
            }
            Insn::Call { helper: name.to_ascii_lowercase() }
        }
        "exit" => {
            if !ops.is_empty() {
                return Err(syntax(line, "exit takes no operands"));
            }
            Insn::Exit
        }
        _ => return Err(AsmError::UnknownMnemonic { line, mnemonic }),
    };

    validate_insn(&insn).map_err(|what| AsmError::OperandOutOfRange { line, what })?;
    Ok(insn)
}

fn width_of(mnemonic: &str) -> Width {
    match mnemonic.as_bytes()[mnemonic.len() - 1] {
        b'1' => Width::B1,
        b'2' => Width::B2,
        b'4' => Width::B4,
        _ => Width::B8,
    }
}

fn syntax(line: usize, reason: impl Into<String>) -> AsmError {
    AsmError::Syntax { line, reason: reason.into() }
}

fn one<'a>(line: usize, m: &str, ops: &[&'a str]) -> Result<[&'a str; 1], AsmError> {
    match ops {
        [a] => Ok([a]),
        _ => Err(syntax(line, format!("{m} takes 1 operand, got {}", ops.len()))),
    }
}

fn two<'a>(line: usize, m: &str, ops: &[&'a str]) -> Result<[&'a str; 2], AsmError> {
    match ops {
        [a, b] => Ok([a, b]),
        _ => Err(syntax(line, format!("{m} takes 2 operands, got {}", ops.len()))),
    }
}

fn three<'a>(line: usize, m: &str, ops: &[&'a str]) -> Result<[&'a str; 3], AsmError> {
    match ops {
        [a, b, c] => Ok([a, b, c]),
        _ => Err(syntax(line, format!("{m} takes 3 operands, got {}", ops.len()))),
    }
}

fn parse_reg(line: usize, text: &str) -> Result<Reg, AsmError> {
    let t = text.trim().to_ascii_lowercase();
    let idx = t
        .strip_prefix('r')
        .and_then(|n| n.parse::<u8>().ok())
        .ok_or_else(|| syntax(line, format!("expected a register, got `{text}`")))?;
    if idx as usize >= NUM_REGS {
        return Err(AsmError::OperandOutOfRange {
            line,
            what: format!("register r{idx} does not exist"),
        });
    }
    Ok(Reg(idx))
}

fn parse_operand(line: usize, text: &str) -> Result<Operand, AsmError> {
    let t = text.trim();
    if t.to_ascii_lowercase().starts_with('r') && t[1..].chars().all(|c| c.is_ascii_digit()) {
        return Ok(Operand::Reg(parse_reg(line, t)?));
    }
    Ok(Operand::Imm(parse_imm(line, t)?))
}

/// Parse a `[rX+off]` / `[rX-off]` memory operand.
fn parse_mem(line: usize, text: &str) -> Result<(Reg, i16), AsmError> {
    let t = text.trim();
    let inner = t
        .strip_prefix('[')
        .and_then(|s| s.strip_suffix(']'))
        .ok_or_else(|| syntax(line, format!("expected [rX+off], got `{text}`")))?;
    let split_at = inner
        .char_indices()
        .skip(1)
        .find(|(_, c)| *c == '+' || *c == '-')
        .map(|(i, _)| i);
    let (reg_part, off_part) = match split_at {
        Some(i) => (&inner[..i], &inner[i..]),
        None => (inner, "+0"),
    };
    let base = parse_reg(line, reg_part)?;
    let off = parse_imm(line, off_part)?;
    let off = i16::try_from(off).map_err(|_| AsmError::OperandOutOfRange {
        line,
        what: format!("memory offset {off} does not fit 16 bits"),
    })?;
    Ok((base, off))
}

fn parse_imm(line: usize, text: &str) -> Result<i64, AsmError> {
    let t = text.trim();
    let (neg, body) = match t.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, t.strip_prefix('+').unwrap_or(t)),
    };
    let magnitude = if let Some(hex) = body.strip_prefix("0x").or_else(|| body.strip_prefix("0X"))
    {
        u64::from_str_radix(hex, 16)
    } else {
        body.parse::<u64>()
    }
    .map_err(|_| syntax(line, format!("bad immediate `{text}`")))?;
    let value = if neg {
        if magnitude > (1u64 << 63) {
            return Err(AsmError::OperandOutOfRange {
                line,
                what: format!("immediate {text} does not fit 64 bits"),
            });
        }
        (magnitude as i64).wrapping_neg()
    } else {
        magnitude as i64
    };
    Ok(value)
}

fn parse_joff(line: usize, text: &str) -> Result<i16, AsmError> {
    let v = parse_imm(line, text)?;
    i16::try_from(v).map_err(|_| AsmError::OperandOutOfRange {
        line,
        what: format!("jump offset {v} does not fit 16 bits"),
    })
}

fn parse_u64(text: &str) -> Result<u64, String> {
    if let Some(hex) = text.strip_prefix("0x") {
        u64::from_str_radix(hex, 16).map_err(|_| format!("bad number `{text}`"))
    } else {
        text.parse().map_err(|_| format!("bad number `{text}`"))
    }
}

/// Render a program in canonical form. `assemble(disassemble(p))` is
/// structurally equal to `p`.
pub fn disassemble(prog: &Program) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        ".type {}\n",
        match prog.prog_type {
            ProgType::SocketFilter => "socket_filter",
            ProgType::Tracepoint => "tracepoint",
        }
    ));
    for m in &prog.declared_maps {
        out.push_str(&format!(
            ".map {} kind={} value_size={} entries={}\n",
            m.name,
            m.kind.name(),
            m.value_size,
            m.n_entries
        ));
    }
    for insn in &prog.insns {
        out.push_str(&render_insn(insn));
        out.push('\n');
    }
    out
}

fn fmt_imm(v: i64) -> String {
    if v >= 4096 {
        format!("0x{v:x}")
    } else {
        format!("{v}")
    }
}

fn fmt_operand(op: &Operand) -> String {
    match op {
        Operand::Reg(r) => r.to_string(),
        Operand::Imm(v) => fmt_imm(*v),
    }
}

fn fmt_mem(base: Reg, off: i16) -> String {
    if off < 0 {
        format!("[{base}{off}]")
    } else {
        format!("[{base}+{off}]")
    }
}

fn render_insn(insn: &Insn) -> String {
    match insn {
        Insn::Alu { op, dst, src } => format!("{} {dst}, {}", op.mnemonic(), fmt_operand(src)),
        Insn::Load { width, dst, base, off } => {
            format!("ldx{} {dst}, {}", width.suffix(), fmt_mem(*base, *off))
        }
        Insn::Store { width, base, off, src } => {
            format!("stx{} {}, {src}", width.suffix(), fmt_mem(*base, *off))
        }
        Insn::StoreImm { width, base, off, imm } => {
            format!("st{} {}, {}", width.suffix(), fmt_mem(*base, *off), fmt_imm(*imm))
        }
        Insn::Ja { off } => format!("ja {off:+}"),
        Insn::Jmp { cond, lhs, rhs, off } => {
            format!("{} {lhs}, {}, {off:+}", cond.mnemonic(), fmt_operand(rhs))
        }
        Insn::Call { helper } => format!("call {helper}"),
        Insn::Exit => "exit".to_string(),
    }
}
