//! The helper registry: signatures with per-argument expectation ranges,
//! array/ringbuf map plumbing, and one deliberately defective helper body
//! reproducing the ringbuf type-confusion pattern.
//!
//! Helper bodies never touch frames directly; all of their memory traffic
//! goes through [`AccessMem`], so the active permission register mediates
//! every byte exactly as it does for program instructions.

use crate::isa::{MapDecl, MapKind};
use crate::mem::{Fault, Machine, PAGE_SIZE};
use crate::verifier::ValueRange;
use std::collections::BTreeMap;

/// Sentinel word placed at offset 0 of every map metadata page; models the
/// ops record (function-pointer table) critical objects carry.
pub const META_SENTINEL: u64 = 0x4d41_505f_4f50_5321;

/// Bookkeeping word the defective ringbuf body writes out of bounds.
pub const RINGBUF_BOOKKEEPING: u64 = 0xdead_beef_0b00_cafe;

/// Encoded "soft" helper failure (maps to -1 in two's complement).
pub const ERR_RET: u64 = u64::MAX;

/// Bytes the ringbuf data region spends on producer/consumer cursors.
pub const RINGBUF_HDR: u64 = 16;

/// What a helper expects of one argument register.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ArgKind {
    /// Constant map index; `expect` pins the map kind (skipped under the
    /// mischeck bug flag).
    MapFd { expect: Option<MapKind> },
    /// Scalar key into the map named by the preceding fd argument; expected
    /// range is derived from that map's declared entry count.
    MapKeyIndex,
    /// Plain scalar with an explicit expected range (the signature's E).
    Scalar { expected: ValueRange },
    /// Pointer into the context window.
    CtxPtr,
    /// Non-null memory handle previously reserved from a ringbuf.
    RingbufMem,
}

/// What a helper returns, as the verifier models it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RetKind {
    Scalar,
    MapValueAddr,
    MemOrNull,
}

/// Which native body to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HelperKind {
    MapLookup,
    MapUpdate,
    MapDelete,
    RingbufReserve,
    RingbufSubmit,
    SkbLoad,
    /// Diagnostic helper writing one byte into a fixed kernel scratch
    /// object; its expectation range is what scenario harnesses vary.
    ScratchWrite,
}

#[derive(Debug, Clone)]
pub struct HelperSpec {
    pub name: String,
    pub id: u32,
    pub args: Vec<ArgKind>,
    pub ret: RetKind,
    pub kind: HelperKind,
    /// Injects the helper's own bug (heap overrun on type confusion).
    pub defect: bool,
}

/// Name-keyed registry of callable helpers.
#[derive(Debug, Clone)]
pub struct HelperRegistry {
    by_name: BTreeMap<String, HelperSpec>,
}

impl HelperRegistry {
    pub fn empty() -> HelperRegistry {
        HelperRegistry { by_name: BTreeMap::new() }
    }

    /// The stock helpers reachable from assembly `call`.
    pub fn builtin() -> HelperRegistry {
        let mut reg = HelperRegistry::empty();
        reg.register(HelperSpec {
            name: "map_lookup".into(),
            id: 1,
            args: vec![ArgKind::MapFd { expect: Some(MapKind::Array) }, ArgKind::MapKeyIndex],
            ret: RetKind::MapValueAddr,
            kind: HelperKind::MapLookup,
            defect: false,
        });
        reg.register(HelperSpec {
            name: "map_update".into(),
            id: 2,
            args: vec![
                ArgKind::MapFd { expect: Some(MapKind::Array) },
                ArgKind::MapKeyIndex,
                ArgKind::Scalar { expected: ValueRange::full() },
            ],
            ret: RetKind::Scalar,
            kind: HelperKind::MapUpdate,
            defect: false,
        });
        reg.register(HelperSpec {
            name: "map_delete".into(),
            id: 3,
            args: vec![ArgKind::MapFd { expect: Some(MapKind::Array) }, ArgKind::MapKeyIndex],
            ret: RetKind::Scalar,
            kind: HelperKind::MapDelete,
            defect: false,
        });
        reg.register(HelperSpec {
            name: "ringbuf_reserve".into(),
            id: 4,
            args: vec![
                ArgKind::MapFd { expect: Some(MapKind::Ringbuf) },
                // Size is unconstrained statically; oversize requests get a
                // null reservation at runtime.
                ArgKind::Scalar { expected: ValueRange::full() },
                ArgKind::Scalar { expected: ValueRange::point(0) },
            ],
            ret: RetKind::MemOrNull,
            kind: HelperKind::RingbufReserve,
            defect: false,
        });
        reg.register(HelperSpec {
            name: "ringbuf_submit".into(),
            id: 5,
            args: vec![ArgKind::RingbufMem, ArgKind::Scalar { expected: ValueRange::point(0) }],
            ret: RetKind::Scalar,
            kind: HelperKind::RingbufSubmit,
            defect: false,
        });
        reg.register(HelperSpec {
            name: "skb_load".into(),
            id: 6,
            args: vec![
                ArgKind::CtxPtr,
                ArgKind::Scalar { expected: ValueRange::of(0, 4095) },
                ArgKind::Scalar { expected: ValueRange::of(0, 8) },
            ],
            ret: RetKind::Scalar,
            kind: HelperKind::SkbLoad,
            defect: false,
        });
        reg
    }

    /// A `scratch_write(offset)` spec with the given expectation range;
    /// registered by harnesses that audit the parameter-check cases.
    pub fn scratch_write_spec(expected: ValueRange) -> HelperSpec {
        HelperSpec {
            name: "scratch_write".into(),
            id: 100,
            args: vec![ArgKind::Scalar { expected }],
            ret: RetKind::Scalar,
            kind: HelperKind::ScratchWrite,
            defect: false,
        }
    }

    pub fn register(&mut self, spec: HelperSpec) {
        assert!(spec.args.len() <= 5, "helpers take at most five arguments");
        self.by_name.insert(spec.name.clone(), spec);
    }

    pub fn get(&self, name: &str) -> Option<&HelperSpec> {
        self.by_name.get(name)
    }

    pub fn set_defect(&mut self, name: &str, defect: bool) {
        self.by_name.get_mut(name).expect("unknown helper").defect = defect;
    }
}

/// A loaded map: declared shape plus where its pages landed. The metadata
/// page sits directly after the data region, so a single-word overrun from
/// the data pages lands on it.
#[derive(Debug, Clone)]
pub struct MapBinding {
    pub decl: MapDecl,
    pub data_vaddr: u64,
    pub data_pages: u64,
    pub meta_vaddr: u64,
}

impl MapBinding {
    pub fn data_end(&self) -> u64 {
        self.data_vaddr + self.data_pages * PAGE_SIZE
    }

    pub fn ringbuf_capacity(&self) -> u64 {
        self.decl.value_size * self.decl.n_entries
    }
}

/// The only memory interface helper bodies receive: checked reads/writes
/// under whatever permission register the runtime armed.
pub struct AccessMem<'a> {
    machine: &'a mut Machine,
}

impl<'a> AccessMem<'a> {
    pub fn new(machine: &'a mut Machine) -> AccessMem<'a> {
        AccessMem { machine }
    }

    pub fn read(&mut self, vaddr: u64, buf: &mut [u8]) -> Result<(), Fault> {
        self.machine.read(vaddr, buf)
    }

    pub fn write(&mut self, vaddr: u64, data: &[u8]) -> Result<(), Fault> {
        self.machine.write(vaddr, data)
    }

    pub fn read_u64(&mut self, vaddr: u64) -> Result<u64, Fault> {
        self.machine.read_u64(vaddr)
    }

    pub fn write_u64(&mut self, vaddr: u64, value: u64) -> Result<(), Fault> {
        self.machine.write_u64(vaddr, value)
    }
}

/// Everything a helper body may see.
pub struct HelperCtx<'a> {
    pub mem: AccessMem<'a>,
    pub maps: &'a [MapBinding],
    /// Base of the kernel scratch object `scratch_write` targets.
    pub scratch_base: u64,
}

/// Execute a helper body. Soft failures are encoded in the return value
/// (`0` for null, [`ERR_RET`] for out-of-range); faults propagate so the
/// runtime can classify them against the faulting page's domain.
pub fn execute(spec: &HelperSpec, ctx: &mut HelperCtx<'_>, args: [u64; 5]) -> Result<u64, Fault> {
    match spec.kind {
        HelperKind::MapLookup => {
            let binding = match array_binding(ctx.maps, args[0]) {
                Some(b) => b,
                None => return Ok(0),
            };
            let key = args[1];
            if key >= binding.decl.n_entries {
                return Ok(0); // null, not an error
            }
            Ok(binding.data_vaddr + key * binding.decl.value_size)
        }
        HelperKind::MapUpdate => {
            let binding = match array_binding(ctx.maps, args[0]) {
                Some(b) => b.clone(),
                None => return Ok(ERR_RET),
            };
            let key = args[1];
            if key >= binding.decl.n_entries {
                return Ok(ERR_RET);
            }
            let elem = binding.data_vaddr + key * binding.decl.value_size;
            let len = binding.decl.value_size.min(8) as usize;
            ctx.mem.write(elem, &args[2].to_le_bytes()[..len])?;
            Ok(0)
        }
        HelperKind::MapDelete => {
            let binding = match array_binding(ctx.maps, args[0]) {
                Some(b) => b.clone(),
                None => return Ok(ERR_RET),
            };
            let key = args[1];
            if key >= binding.decl.n_entries {
                return Ok(ERR_RET);
            }
            let elem = binding.data_vaddr + key * binding.decl.value_size;
            let zeros = vec![0u8; binding.decl.value_size as usize];
            ctx.mem.write(elem, &zeros)?;
            Ok(0)
        }
        HelperKind::RingbufReserve => {
            let binding = match ctx.maps.get(args[0] as usize) {
                Some(b) => b.clone(),
                None => return Ok(0),
            };
            if binding.decl.kind != MapKind::Ringbuf {
                // A foreign map reached a ringbuf helper. The sound body
                // refuses; the defective one trusts the layout it assumes
                // and writes its bookkeeping word one past the data region,
                // which is the adjacent metadata page.
                if !spec.defect {
                    return Ok(0);
                }
                let overrun = binding.data_end();
                ctx.mem.write_u64(overrun, RINGBUF_BOOKKEEPING)?;
                return Ok(overrun);
            }
            let size = args[1];
            if size > binding.ringbuf_capacity() {
                return Ok(0); // e.g. INT_MAX: reservation cannot be satisfied
            }
            // Single outstanding reservation at the start of the buffer.
            Ok(binding.data_vaddr + RINGBUF_HDR)
        }
        HelperKind::RingbufSubmit => {
            let addr = args[0];
            let binding = ctx
                .maps
                .iter()
                .find(|b| {
                    b.decl.kind == MapKind::Ringbuf && addr >= b.data_vaddr && addr < b.data_end()
                })
                .cloned();
            let binding = match binding {
                Some(b) => b,
                None => return Ok(ERR_RET),
            };
            let producer = ctx.mem.read_u64(binding.data_vaddr)?;
            ctx.mem.write_u64(binding.data_vaddr, producer + 1)?;
            Ok(0)
        }
        HelperKind::SkbLoad => {
            let (ctx_ptr, offset, len) = (args[0], args[1], args[2]);
            if len > 8 {
                return Ok(ERR_RET);
            }
            if len == 0 {
                return Ok(0);
            }
            let pkt_len = ctx.mem.read_u64(ctx_ptr)?;
            if offset.checked_add(len).map(|end| end > pkt_len).unwrap_or(true) {
                return Ok(ERR_RET);
            }
            let mut buf = [0u8; 8];
            ctx.mem.read(ctx_ptr + 8 + offset, &mut buf[..len as usize])?;
            Ok(u64::from_le_bytes(buf))
        }
        HelperKind::ScratchWrite => {
            ctx.mem.write(ctx.scratch_base + args[0], &[0xba])?;
            Ok(0)
        }
    }
}

fn array_binding(maps: &[MapBinding], fd: u64) -> Option<&MapBinding> {
    maps.get(fd as usize).filter(|b| b.decl.kind == MapKind::Array)
}
