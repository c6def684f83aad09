//! JSON shapes for verdicts, counters, and scenario reports. The key set is
//! the documented contract; golden tests pin it.

use bpffence::runtime::{CountersReport, SandboxConfig, Verdict};
use serde::Serialize;
use serde_json::{json, Value};

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Protections {
    pub pks: bool,
    pub dpa: bool,
    pub cop: bool,
    pub addr_space: bool,
}

impl From<&SandboxConfig> for Protections {
    fn from(cfg: &SandboxConfig) -> Protections {
        Protections { pks: cfg.pks, dpa: cfg.dpa, cop: cfg.cop, addr_space: cfg.addr_space }
    }
}

/// `{"kind": ..., "vaddr": ..., "pcid": ..., "access": ...}` detail payload.
pub fn verdict_detail(v: &Verdict) -> Value {
    match v {
        Verdict::Completed { r0 } => json!({ "r0": r0 }),
        Verdict::VerifierReject { reason } => json!({ "reason": reason }),
        Verdict::DpaViolation { insn, reg, value, lo, hi } => {
            json!({ "insn": insn, "reg": reg, "value": value, "lo": lo, "hi": hi })
        }
        Verdict::PksViolation { insn, fault }
        | Verdict::PageFault { insn, fault }
        | Verdict::CopViolation { insn, fault } => {
            json!({ "insn": insn, "fault": fault })
        }
        Verdict::KernelTampered { vaddr } => json!({ "vaddr": vaddr }),
    }
}

pub fn counters_json(counters: &CountersReport) -> Value {
    let faults: serde_json::Map<String, Value> = counters
        .faults
        .iter()
        .map(|(k, v)| (format!("{k:?}"), json!(v)))
        .collect();
    json!({
        "pcid_conflict_flushes": counters.pcid_conflict_flushes,
        "tlb_fills": counters.tlb_fills,
        "faults": faults,
    })
}

/// One cell of a scenario's expectation matrix.
#[derive(Debug, Clone)]
pub struct CaseResult {
    pub label: String,
    pub protections: Protections,
    pub expected: String,
    pub outcome: String,
    pub detail: Value,
    pub counters: CountersReport,
    pub extra: serde_json::Map<String, Value>,
    pub pass: bool,
}

impl CaseResult {
    pub fn to_json(&self, scenario: &str) -> Value {
        json!({
            "scenario": scenario,
            "case": self.label,
            "protections": self.protections,
            "outcome": self.outcome,
            "expected": self.expected,
            "pass": self.pass,
            "detail": self.detail,
            "counters": counters_json(&self.counters),
            "extra": self.extra,
        })
    }
}

#[derive(Debug, Clone)]
pub struct Report {
    pub scenario: String,
    pub cases: Vec<CaseResult>,
}

impl Report {
    pub fn pass(&self) -> bool {
        self.cases.iter().all(|c| c.pass)
    }

    pub fn to_json(&self) -> Value {
        json!({
            "scenario": self.scenario,
            "pass": self.pass(),
            "cases": self.cases.iter().map(|c| c.to_json(&self.scenario)).collect::<Vec<_>>(),
        })
    }
}
