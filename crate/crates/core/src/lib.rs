//! Desk-scale simulator of hardware-key BPF isolation.
//!
//! The crate executes a miniature eBPF-like ISA under an emulated
//! protection-key paged memory model. Programs pass through a range-tracking
//! verifier (with injectable bugs reproducing known verifier CVE patterns),
//! are loaded into per-program address spaces tagged with PCIDs, and run with
//! four stackable defenses: key-based domain separation, isolated address
//! spaces, critical-object protection around helper calls, and dynamic
//! auditing of helper parameters against verifier-deduced ranges.

pub mod alloc;
pub mod helpers;
pub mod isa;
pub mod mem;
pub mod runtime;
pub mod verifier;
