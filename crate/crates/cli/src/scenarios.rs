//! The built-in scenario corpus: three verifier/helper CVE patterns, the
//! parameter-audit case table, intra-program tampering, interrupt
//! transparency, and PCID-conflict pressure. Every scenario carries its own
//! expectation matrix and is self-checking.

use crate::report::{verdict_detail, CaseResult, Protections, Report};
use bpffence::isa::assemble;
use bpffence::runtime::{
    Sandbox, SandboxConfig, Verdict, SCRATCH_OBJ_BASE, SENTINEL_VADDR,
};
use bpffence::verifier::{BugFlags, ValueRange};
use bpffence::helpers::HelperRegistry;
use serde_json::json;

pub const SCENARIO_NAMES: &[&str] = &[
    "cve-2022-23222",
    "cve-2020-27194",
    "cve-2021-34866",
    "intra-bpf-tamper",
    "irq-during-bpf",
    "pcid-conflict",
    "dpa-four-cases",
];

/// Index of the poisoned store instruction in the 2020-27194 payload.
pub const CVE_2020_27194_STORE_INSN: usize = 9;
/// Index of the poisoned store instruction in the 2022-23222 payload.
pub const CVE_2022_23222_STORE_INSN: usize = 13;
/// Index of the mischecked helper call in the 2021-34866 payload.
pub const CVE_2021_34866_CALL_INSN: usize = 12;
/// Index of the leaked-pointer store in the 2021-34866 payload.
pub const CVE_2021_34866_STORE_INSN: usize = 20;

/// Incorrect-truncation pattern: a user-supplied value is range-checked into
/// [0x1, 0x600000001], a buggy 32-bit OR collapses the deduced range to the
/// constant 0x1, and the value then offsets a store through a map pointer.
/// The runtime value is poked into the config map by the "user".
pub fn cve_2020_27194_source() -> String {
    "\
.type socket_filter
.map cfg kind=array value_size=8 entries=1
mov r1, 0
mov r2, 0
call map_lookup
ldx8 r5, [r0+0]
mov r6, 0x600000002
jge r5, r6, +4
jle r5, 0, +3
or32 r5, 0
add r0, r5
st1 [r0+0], 0xba
mov r0, 0
exit
"
    .to_string()
}

pub fn cve_2020_27194_flags() -> BugFlags {
    BugFlags { or32_truncation: true, ..Default::default() }
}

/// The user value that turns the store into a kernel-sentinel write.
pub fn cve_2020_27194_user_value(sb: &Sandbox, id: bpffence::runtime::ImageId) -> u64 {
    SENTINEL_VADDR - sb.map_data_vaddr(id, 0)
}

/// Pointer-mischeck pattern: a possibly-null reservation handle is not
/// tracked, so on the null branch the verifier believes a derived copy is
/// zero while it is one at runtime; multiplying by it launders an arbitrary
/// store offset. The bad offset is an immediate computed from the layout.
pub fn cve_2022_23222_source() -> String {
    // Probe a throwaway sandbox for the config map's address; the layout is
    // deterministic and independent of the immediate's value.
    let probe = cve_2022_23222_with_offset(0x1000);
    let mut sb = Sandbox::new(SandboxConfig::default());
    let id = sb
        .load(assemble(&probe).unwrap(), cve_2022_23222_flags())
        .expect("probe payload must verify");
    let bad_off = SENTINEL_VADDR - sb.map_data_vaddr(id, 0);
    cve_2022_23222_with_offset(bad_off)
}

fn cve_2022_23222_with_offset(bad_off: u64) -> String {
    format!(
        "\
.type socket_filter
.map cfg kind=array value_size=8 entries=1
.map rb kind=ringbuf value_size=4096 entries=1
mov r1, 1
mov r2, 0x7fffffff
mov r3, 0
call ringbuf_reserve
mov r7, r0
add r7, 1
jne r0, 0, +7
mov r1, 0
mov r2, 0
call map_lookup
mov r5, 0x{bad_off:x}
mul r5, r7
add r0, r5
st1 [r0+0], 0xba
mov r0, 0
exit
"
    )
}

pub fn cve_2022_23222_flags() -> BugFlags {
    BugFlags { mem_or_null_untracked: true, ..Default::default() }
}

/// Helper-abuse pattern: a wrong-kind map fd reaches `ringbuf_reserve`. The
/// fd and the follow-on store offset are both user values laundered through
/// the truncation bug, so the deduced fd (the decoy ringbuf-shaped slot 1)
/// differs from the runtime fd (the array map 0). The defective helper body
/// overruns into the adjacent critical metadata page and leaks its address.
pub fn cve_2021_34866_source() -> String {
    "\
.type socket_filter
.map cfg kind=array value_size=16 entries=1
.map decoy kind=array value_size=8 entries=1
mov r1, 0
mov r2, 0
call map_lookup
mov r9, r0
ldx8 r5, [r9+0]
mov r6, 0x600000002
jge r5, r6, +14
jle r5, 0, +13
or32 r5, 0
mov r1, r5
mov r2, 16
mov r3, 0
call ringbuf_reserve
jeq r0, 0, +7
ldx8 r8, [r9+8]
mov r6, 0x600000002
jge r8, r6, +4
jle r8, 0, +3
or32 r8, 0
add r0, r8
st1 [r0+0], 0xba
mov r0, 0
exit
"
    .to_string()
}

pub fn cve_2021_34866_flags() -> BugFlags {
    BugFlags { or32_truncation: true, helper_map_mischeck: true, ..Default::default() }
}

/// Benign traffic monitor: per-protocol byte totals in a 256-entry map.
pub fn byte_counter_source() -> &'static str {
    "\
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
exit
"
}

/// Cross-program attacker: launders a window-to-window delta through the
/// truncation bug and stores through its own map pointer plus the delta.
pub fn intra_tamper_attacker_source() -> &'static str {
    "\
.type socket_filter
.map cfg kind=array value_size=8 entries=1
mov r1, 0
mov r2, 0
call map_lookup
ldx8 r5, [r0+0]
mov r6, 0x600000002
jge r5, r6, +4
jle r5, 0, +3
or32 r5, 0
add r0, r5
st1 [r0+0], 0x77
mov r0, 0
exit
"
}

fn packet(proto: u8, len: usize) -> Vec<u8> {
    let mut p = vec![0u8; len.max(10)];
    p[9] = proto;
    p
}

fn outcome_case(
    label: &str,
    cfg: &SandboxConfig,
    expected: &str,
    verdict: &Verdict,
    counters: bpffence::runtime::CountersReport,
    extra: serde_json::Map<String, serde_json::Value>,
) -> CaseResult {
    CaseResult {
        label: label.to_string(),
        protections: Protections::from(cfg),
        expected: expected.to_string(),
        outcome: verdict.label().to_string(),
        detail: verdict_detail(verdict),
        counters,
        extra,
        pass: verdict.label() == expected,
    }
}

fn toggles(pks: bool, dpa: bool, cop: bool, addr_space: bool) -> SandboxConfig {
    SandboxConfig { pks, dpa, cop, addr_space, ..Default::default() }
}

/// Run one CVE case: load (or report the rejection), poke user values, run.
fn cve_case(
    label: &str,
    cfg: SandboxConfig,
    source: &str,
    flags: BugFlags,
    defect_ringbuf: bool,
    user_values: impl Fn(&Sandbox, bpffence::runtime::ImageId) -> Vec<(usize, u64, u64)>,
    expected: &str,
) -> CaseResult {
    let mut sb = Sandbox::new(cfg);
    if defect_ringbuf {
        sb.registry_mut().set_defect("ringbuf_reserve", true);
    }
    let prog = assemble(source).expect("scenario payload must assemble");
    let verdict = match sb.load(prog, flags) {
        Err(e) => Verdict::VerifierReject { reason: e.to_string() },
        Ok(id) => {
            for (map_idx, offset, value) in user_values(&sb, id) {
                sb.map_write(id, map_idx, offset, &value.to_le_bytes());
            }
            sb.run(id, &packet(6, 32)).verdict
        }
    };
    let mut extra = serde_json::Map::new();
    extra.insert("critical_sentinels_intact".into(), json!(sb.critical_sentinels_intact()));
    let mut case = outcome_case(label, &cfg, expected, &verdict, sb.counters_report(), extra);
    if cfg.cop && cfg.pks {
        // With the critical-object domain locked, no run may trample the
        // ops-record sentinels.
        case.pass = case.pass && sb.critical_sentinels_intact();
    }
    case
}

fn scenario_cve_2020_27194() -> Report {
    let source = cve_2020_27194_source();
    let user = |sb: &Sandbox, id| vec![(0usize, 0u64, cve_2020_27194_user_value(sb, id))];
    let cases = vec![
        cve_case(
            "bug_off",
            SandboxConfig::default(),
            &source,
            BugFlags::default(),
            false,
            |_, _| vec![],
            "verifier_reject",
        ),
        cve_case(
            "bug_on_defaults",
            SandboxConfig::default(),
            &source,
            cve_2020_27194_flags(),
            false,
            user,
            "pks_violation",
        ),
        cve_case(
            "bug_on_all_off",
            SandboxConfig::all_off(),
            &source,
            cve_2020_27194_flags(),
            false,
            user,
            "kernel_tampered",
        ),
    ];
    Report { scenario: "cve-2020-27194".into(), cases }
}

fn scenario_cve_2022_23222() -> Report {
    let source = cve_2022_23222_source();
    let cases = vec![
        cve_case(
            "bug_off",
            SandboxConfig::default(),
            &source,
            BugFlags::default(),
            false,
            |_, _| vec![],
            "verifier_reject",
        ),
        cve_case(
            "bug_on_defaults",
            SandboxConfig::default(),
            &source,
            cve_2022_23222_flags(),
            false,
            |_, _| vec![],
            "pks_violation",
        ),
        cve_case(
            "bug_on_all_off",
            SandboxConfig::all_off(),
            &source,
            cve_2022_23222_flags(),
            false,
            |_, _| vec![],
            "kernel_tampered",
        ),
    ];
    Report { scenario: "cve-2022-23222".into(), cases }
}

fn scenario_cve_2021_34866() -> Report {
    let source = cve_2021_34866_source();
    // cfg[0] = fd confuser (truncates to array fd 0, deduced as decoy fd 1);
    // cfg[1] = store delta onto the kernel sentinel from the leaked metadata
    // address.
    let user = |sb: &Sandbox, id| {
        let meta = sb.map_meta_vaddr(id, 0);
        vec![(0usize, 0u64, 0x6_0000_0000), (0, 8, SENTINEL_VADDR - meta)]
    };
    let flags = cve_2021_34866_flags();
    let cases = vec![
        cve_case("dpa_on", toggles(true, true, true, true), &source, flags, true, user, "dpa_violation"),
        cve_case("dpa_off_cop_on", toggles(true, false, true, true), &source, flags, true, user, "cop_violation"),
        cve_case("dpa_cop_off_pks_on", toggles(true, false, false, true), &source, flags, true, user, "pks_violation"),
        cve_case("all_off", SandboxConfig::all_off(), &source, flags, true, user, "kernel_tampered"),
    ];
    Report { scenario: "cve-2021-34866".into(), cases }
}

fn scenario_dpa_four_cases() -> Report {
    let mut cases = Vec::new();
    let tight = ValueRange::of(0, 0x20);
    let loose = ValueRange::of(0, 0xba); // mis-declared expectation

    // Case 1 (safe): runtime matches the deduction, inside expectation.
    {
        let cfg = SandboxConfig::default();
        let mut sb = Sandbox::new(cfg);
        sb.registry_mut().register(HelperRegistry::scratch_write_spec(tight));
        let prog = assemble("mov r1, 0x10\ncall scratch_write\nmov r0, 0\nexit").unwrap();
        let id = sb.load(prog, BugFlags::default()).expect("case 1 must verify");
        let verdict = sb.run(id, &[]).verdict;
        let mut extra = serde_json::Map::new();
        extra.insert("values".into(), json!({"r": "0x10", "d": "0x10", "e": "[0,0x20]"}));
        cases.push(outcome_case("row1_safe", &cfg, "completed", &verdict, sb.counters_report(), extra));
    }
    // Case 2 (verifier-mitigated): deduced value escapes the expectation.
    {
        let cfg = SandboxConfig::default();
        let mut sb = Sandbox::new(cfg);
        sb.registry_mut().register(HelperRegistry::scratch_write_spec(tight));
        let prog = assemble("mov r1, 0xba\ncall scratch_write\nmov r0, 0\nexit").unwrap();
        let verdict = match sb.load(prog, BugFlags::default()) {
            Err(e) => Verdict::VerifierReject { reason: e.to_string() },
            Ok(id) => sb.run(id, &[]).verdict,
        };
        let mut extra = serde_json::Map::new();
        extra.insert("values".into(), json!({"r": "0xba", "d": "0xba", "e": "[0,0x20]"}));
        cases.push(outcome_case("row2_verifier_mitigated", &cfg, "verifier_reject", &verdict, sb.counters_report(), extra));
    }
    // Case 3 (runtime-mitigated): deduction is wrong (0x10), runtime is 0xba;
    // the guard catches the mismatch.
    {
        let cfg = SandboxConfig::default();
        let mut sb = Sandbox::new(cfg);
        sb.registry_mut().register(HelperRegistry::scratch_write_spec(tight));
        let src = "\
.type socket_filter
.map cfg kind=array value_size=8 entries=1
mov r1, 0
mov r2, 0
call map_lookup
ldx8 r5, [r0+0]
mov r6, 0x600000011
jge r5, r6, +4
jlt r5, 0x10, +3
or32 r5, 0
mov r1, r5
call scratch_write
mov r0, 0
exit";
        let prog = assemble(src).unwrap();
        let flags = BugFlags { or32_truncation: true, ..Default::default() };
        let id = sb.load(prog, flags).expect("case 3 must verify");
        sb.map_write(id, 0, 0, &0xbau64.to_le_bytes());
        let verdict = sb.run(id, &[]).verdict;
        let mut extra = serde_json::Map::new();
        extra.insert("values".into(), json!({"r": "0xba", "d": "0x10", "e": "[0,0x20]"}));
        cases.push(outcome_case("row3_runtime_mitigated", &cfg, "dpa_violation", &verdict, sb.counters_report(), extra));
    }
    // Case 4 (unsafe): the expectation itself is wrong ([0,0xba] instead of
    // the true [0,0x20]); runtime matches deduction, guard passes, and the
    // helper's write lands on the sentinel. No layer can catch this.
    {
        let cfg = SandboxConfig::default();
        let mut sb = Sandbox::new(cfg);
        sb.registry_mut().register(HelperRegistry::scratch_write_spec(loose));
        let prog = assemble("mov r1, 0xba\ncall scratch_write\nmov r0, 0\nexit").unwrap();
        let id = sb.load(prog, BugFlags::default()).expect("case 4 must verify");
        let verdict = sb.run(id, &[]).verdict;
        let mut extra = serde_json::Map::new();
        extra.insert("values".into(), json!({"r": "0xba", "d": "0xba", "e": "[0,0xba]", "t": "[0,0x20]"}));
        extra.insert("scratch_object".into(), json!(format!("0x{SCRATCH_OBJ_BASE:x}")));
        cases.push(outcome_case("row4_unsafe", &cfg, "kernel_tampered", &verdict, sb.counters_report(), extra));
    }
    Report { scenario: "dpa-four-cases".into(), cases }
}

fn scenario_intra_bpf_tamper() -> Report {
    let mut cases = Vec::new();
    for (label, cfg, expected, expect_tampered) in [
        ("all_on", SandboxConfig::default(), "page_fault", false),
        ("all_off", SandboxConfig::all_off(), "completed", true),
    ] {
        let mut sb = Sandbox::new(cfg);
        let attacker = sb
            .load(assemble(intra_tamper_attacker_source()).unwrap(), cve_2020_27194_flags())
            .expect("attacker must verify under the bug");
        let victim = sb
            .load(assemble(byte_counter_source()).unwrap(), BugFlags::default())
            .expect("victim must verify");
        // Seed the victim's stats map so tampering is observable.
        sb.map_write(victim, 0, 0, &[0x55u8; 16]);
        let before = sb.map_read(victim, 0, 0, 64);
        // Delta from the attacker's own map value into the victim's window.
        let delta = sb.map_data_vaddr(victim, 0) - sb.map_data_vaddr(attacker, 0);
        sb.map_write(attacker, 0, 0, &delta.to_le_bytes());
        let verdict = sb.run(attacker, &packet(6, 16)).verdict;
        let after = sb.map_read(victim, 0, 0, 64);
        let tampered = before != after;
        let mut extra = serde_json::Map::new();
        extra.insert("victim_map_tampered".into(), json!(tampered));
        let mut case = outcome_case(label, &cfg, expected, &verdict, sb.counters_report(), extra);
        case.pass = case.pass && tampered == expect_tampered;
        cases.push(case);
    }
    Report { scenario: "intra-bpf-tamper".into(), cases }
}

fn scenario_irq_during_bpf() -> Report {
    let mut cases = Vec::new();
    let pkt = packet(0x11, 24);
    let baseline = {
        let mut sb = Sandbox::new(SandboxConfig::default());
        let id = sb.load(assemble(byte_counter_source()).unwrap(), BugFlags::default()).unwrap();
        sb.run(id, &pkt).verdict
    };
    let program_len = assemble(byte_counter_source()).unwrap().insns.len() as u64;
    for k in [1, program_len / 2, program_len] {
        let cfg = SandboxConfig { interrupt_at: Some(k), ..Default::default() };
        let mut sb = Sandbox::new(cfg);
        let id = sb.load(assemble(byte_counter_source()).unwrap(), BugFlags::default()).unwrap();
        let verdict = sb.run(id, &pkt).verdict;
        let mut extra = serde_json::Map::new();
        extra.insert("irq_at".into(), json!(k));
        extra.insert("matches_baseline".into(), json!(verdict == baseline));
        let mut case =
            outcome_case(&format!("irq_at_{k}"), &cfg, baseline.label(), &verdict, sb.counters_report(), extra);
        case.pass = case.pass && verdict == baseline;
        cases.push(case);
    }
    // All-off row: interrupts remain transparent without any protection;
    // the handler then runs with no permission traffic at all.
    {
        let cfg = SandboxConfig { interrupt_at: Some(2), ..SandboxConfig::all_off() };
        let mut sb = Sandbox::new(cfg);
        let id = sb.load(assemble(byte_counter_source()).unwrap(), BugFlags::default()).unwrap();
        let verdict = sb.run(id, &pkt).verdict;
        let mut extra = serde_json::Map::new();
        extra.insert("irq_at".into(), json!(2));
        let mut case =
            outcome_case("irq_all_off", &cfg, baseline.label(), &verdict, sb.counters_report(), extra);
        case.pass = case.pass && verdict == baseline;
        cases.push(case);
    }
    Report { scenario: "irq-during-bpf".into(), cases }
}

fn scenario_pcid_conflict() -> Report {
    // Five programs with two PCID bits force PCID reuse; dispatch must stay
    // correct and count the selective conflict flushes.
    let cfg = SandboxConfig { pcid_bits: 2, ..Default::default() };
    let mut sb = Sandbox::new(cfg);
    let ids: Vec<_> = (0..5)
        .map(|_| sb.load(assemble(byte_counter_source()).unwrap(), BugFlags::default()).unwrap())
        .collect();
    let events: Vec<Vec<u8>> = (0..20).map(|i| packet((i % 7) as u8, 16 + i)).collect();
    let results = sb.dispatch(&ids, &events);
    let all_completed = results
        .iter()
        .all(|r| matches!(r.verdict, Verdict::Completed { .. }));
    let conflicts = sb.counters_report().pcid_conflict_flushes;
    let verdict_label = if all_completed { "completed" } else { "page_fault" };
    let mut extra = serde_json::Map::new();
    extra.insert("runs".into(), json!(results.len()));
    extra.insert("pcid_conflict_flushes".into(), json!(conflicts));
    let case = CaseResult {
        label: "five_programs_two_pcid_bits".into(),
        protections: Protections::from(&cfg),
        expected: "completed".into(),
        outcome: verdict_label.into(),
        detail: json!({"all_completed": all_completed}),
        counters: sb.counters_report(),
        extra,
        pass: all_completed && conflicts > 0,
    };

    // All-off row: one shared space and PCID, so reuse cannot conflict.
    let off = SandboxConfig { pcid_bits: 2, ..SandboxConfig::all_off() };
    let mut sb_off = Sandbox::new(off);
    let ids_off: Vec<_> = (0..5)
        .map(|_| sb_off.load(assemble(byte_counter_source()).unwrap(), BugFlags::default()).unwrap())
        .collect();
    let results_off = sb_off.dispatch(&ids_off, &events);
    let all_completed_off =
        results_off.iter().all(|r| matches!(r.verdict, Verdict::Completed { .. }));
    let conflicts_off = sb_off.counters_report().pcid_conflict_flushes;
    let mut extra_off = serde_json::Map::new();
    extra_off.insert("pcid_conflict_flushes".into(), json!(conflicts_off));
    let case_off = CaseResult {
        label: "all_off_shared_space".into(),
        protections: Protections::from(&off),
        expected: "completed".into(),
        outcome: if all_completed_off { "completed".into() } else { "page_fault".into() },
        detail: json!({"all_completed": all_completed_off}),
        counters: sb_off.counters_report(),
        extra: extra_off,
        pass: all_completed_off && conflicts_off == 0,
    };
    Report { scenario: "pcid-conflict".into(), cases: vec![case, case_off] }
}

pub fn run_scenario(name: &str) -> Option<Report> {
    match name {
        "cve-2022-23222" => Some(scenario_cve_2022_23222()),
        "cve-2020-27194" => Some(scenario_cve_2020_27194()),
        "cve-2021-34866" => Some(scenario_cve_2021_34866()),
        "intra-bpf-tamper" => Some(scenario_intra_bpf_tamper()),
        "irq-during-bpf" => Some(scenario_irq_during_bpf()),
        "pcid-conflict" => Some(scenario_pcid_conflict()),
        "dpa-four-cases" => Some(scenario_dpa_four_cases()),
        _ => None,
    }
}
