//! Command-line front end: assemble/verify/run programs and execute the
//! built-in scenario corpus with protection toggles.
//!
//! Exit codes: 0 completed/accepted, 1 verifier reject (or failed scenario),
//! 2 parse/usage error, 3 parameter-audit violation, 4 key-permission
//! violation, 5 page fault, 6 critical-object violation, 7 kernel sentinel
//! tampered.

use bpffence::isa::{assemble, disassemble};
use bpffence::runtime::{Sandbox, SandboxConfig, Verdict};
use bpffence::verifier::{verify, BugFlags};
use bpffence_cli::report::{counters_json, verdict_detail};
use bpffence_cli::scenarios::{run_scenario, SCENARIO_NAMES};
use clap::{Args, Parser, Subcommand};
use serde_json::json;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "bpffence", about = "Protection-key BPF sandbox simulator", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Toggles {
    /// Disable the key-based domain separation layer.
    #[arg(long)]
    no_pks: bool,
    /// Disable the dynamic parameter-audit guards.
    #[arg(long)]
    no_dpa: bool,
    /// Disable critical-object protection during helper calls.
    #[arg(long)]
    no_cop: bool,
    /// Disable per-program isolated address spaces.
    #[arg(long)]
    no_addr_space: bool,
    /// Inject a verifier bug: or32 | memnull | mapmischeck (repeatable).
    #[arg(long = "bug", value_name = "BUG")]
    bugs: Vec<String>,
    /// Inject a helper defect: ringbuf (repeatable).
    #[arg(long = "defect", value_name = "HELPER")]
    defects: Vec<String>,
    /// PCID width in bits (1..=12).
    #[arg(long, default_value_t = 12)]
    pcid_bits: u8,
    /// Fire one interrupt before executing instruction N (1-based).
    #[arg(long, value_name = "N")]
    irq_at: Option<u64>,
    /// Emit the event trace with each verdict.
    #[arg(long)]
    trace: bool,
}

impl Toggles {
    fn config(&self) -> SandboxConfig {
        SandboxConfig {
            pks: !self.no_pks,
            dpa: !self.no_dpa,
            cop: !self.no_cop,
            addr_space: !self.no_addr_space,
            pcid_bits: self.pcid_bits,
            interrupt_at: self.irq_at,
            trace: self.trace,
            ..Default::default()
        }
    }

    fn flags(&self) -> Result<BugFlags, String> {
        let mut flags = BugFlags::default();
        for bug in &self.bugs {
            match bug.as_str() {
                "or32" => flags.or32_truncation = true,
                "memnull" => flags.mem_or_null_untracked = true,
                "mapmischeck" => flags.helper_map_mischeck = true,
                other => return Err(format!("unknown bug `{other}`")),
            }
        }
        Ok(flags)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Statically verify a program and print the verifier output as JSON.
    Verify {
        file: PathBuf,
        #[command(flatten)]
        toggles: Toggles,
    },
    /// Load a program and run it over input events, printing one verdict
    /// JSON line per event plus a final counters line.
    Run {
        file: PathBuf,
        /// Text file with one packet per line as hex bytes.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Pre-seed a map element: `<map_idx>:<byte_off>:<hexbytes>` (repeatable).
        #[arg(long = "map-poke", value_name = "SPEC")]
        map_pokes: Vec<String>,
        #[command(flatten)]
        toggles: Toggles,
    },
    /// Run a named scenario (or all of them) against its expectation matrix.
    Scenario {
        /// One of the built-in scenario names.
        name: Option<String>,
        #[arg(long)]
        all: bool,
        /// List the built-in scenario names and exit.
        #[arg(long)]
        list: bool,
    },
    /// Assemble a program and print its canonical disassembly.
    Disasm { file: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, String> {
    match cli.command {
        Command::Verify { file, toggles } => cmd_verify(&file, &toggles),
        Command::Run { file, input, map_pokes, toggles } => {
            cmd_run(&file, input.as_deref(), &map_pokes, &toggles)
        }
        Command::Scenario { name, all, list } => cmd_scenario(name.as_deref(), all, list),
        Command::Disasm { file } => {
            let text = std::fs::read_to_string(&file).map_err(|e| e.to_string())?;
            let prog = assemble(&text).map_err(|e| e.to_string())?;
            print!("{}", disassemble(&prog));
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn cmd_verify(file: &std::path::Path, toggles: &Toggles) -> Result<ExitCode, String> {
    let text = std::fs::read_to_string(file).map_err(|e| e.to_string())?;
    let flags = toggles.flags()?;
    let prog = match assemble(&text) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return Ok(ExitCode::from(2));
        }
    };
    let sandbox = Sandbox::new(toggles.config());
    let output = verify(&prog, flags, sandbox.registry());
    println!("{}", serde_json::to_string_pretty(&output.to_json()).unwrap());
    Ok(if output.accepted { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn parse_events(input: Option<&std::path::Path>) -> Result<Vec<Vec<u8>>, String> {
    let Some(path) = input else {
        return Ok(vec![Vec::new()]);
    };
    let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
    let mut events = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bytes = parse_hex(line)
            .ok_or_else(|| format!("{}:{}: bad hex packet", path.display(), lineno + 1))?;
        events.push(bytes);
    }
    if events.is_empty() {
        events.push(Vec::new());
    }
    Ok(events)
}

fn parse_hex(s: &str) -> Option<Vec<u8>> {
    let cleaned: String = s.chars().filter(|c| !c.is_whitespace()).collect();
    if !cleaned.len().is_multiple_of(2) {
        return None;
    }
    (0..cleaned.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(&cleaned[i..i + 2], 16).ok())
        .collect()
}

fn exit_code_for(verdict: &Verdict) -> u8 {
    match verdict {
        Verdict::Completed { .. } => 0,
        Verdict::VerifierReject { .. } => 1,
        Verdict::DpaViolation { .. } => 3,
        Verdict::PksViolation { .. } => 4,
        Verdict::PageFault { .. } => 5,
        Verdict::CopViolation { .. } => 6,
        Verdict::KernelTampered { .. } => 7,
    }
}

fn cmd_run(
    file: &std::path::Path,
    input: Option<&std::path::Path>,
    map_pokes: &[String],
    toggles: &Toggles,
) -> Result<ExitCode, String> {
    let text = std::fs::read_to_string(file).map_err(|e| e.to_string())?;
    let flags = toggles.flags()?;
    let prog = match assemble(&text) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return Ok(ExitCode::from(2));
        }
    };
    let events = parse_events(input)?;

    let mut sandbox = Sandbox::new(toggles.config());
    for defect in &toggles.defects {
        match defect.as_str() {
            "ringbuf" => sandbox.registry_mut().set_defect("ringbuf_reserve", true),
            other => return Err(format!("unknown defect `{other}`")),
        }
    }
    let id = match sandbox.load(prog, flags) {
        Ok(id) => id,
        Err(e) => {
            let verdict = Verdict::VerifierReject { reason: e.to_string() };
            println!(
                "{}",
                json!({"event": 0, "outcome": verdict.label(), "detail": verdict_detail(&verdict)})
            );
            return Ok(ExitCode::from(1));
        }
    };
    for poke in map_pokes {
        let parts: Vec<&str> = poke.splitn(3, ':').collect();
        let [map_idx, offset, hex] = parts.as_slice() else {
            return Err(format!("bad --map-poke `{poke}`, want IDX:OFF:HEX"));
        };
        let map_idx: usize = map_idx.parse().map_err(|_| "bad map index".to_string())?;
        let offset: u64 = offset.parse().map_err(|_| "bad map offset".to_string())?;
        let bytes = parse_hex(hex).ok_or_else(|| format!("bad hex in `{poke}`"))?;
        sandbox.map_write(id, map_idx, offset, &bytes);
    }

    let mut first_bad: Option<u8> = None;
    for (i, event) in events.iter().enumerate() {
        let result = sandbox.run(id, event);
        let mut line = json!({
            "event": i,
            "outcome": result.verdict.label(),
            "detail": verdict_detail(&result.verdict),
        });
        if toggles.trace {
            line["trace"] = json!(result.trace);
        }
        println!("{line}");
        let code = exit_code_for(&result.verdict);
        if code != 0 && first_bad.is_none() {
            first_bad = Some(code);
        }
    }
    println!("{}", json!({ "counters": counters_json(&sandbox.counters_report()) }));
    Ok(ExitCode::from(first_bad.unwrap_or(0)))
}

fn cmd_scenario(name: Option<&str>, all: bool, list: bool) -> Result<ExitCode, String> {
    if list {
        for n in SCENARIO_NAMES {
            println!("{n}");
        }
        return Ok(ExitCode::SUCCESS);
    }
    let names: Vec<&str> = if all {
        SCENARIO_NAMES.to_vec()
    } else {
        match name {
            Some(n) => vec![n],
            None => return Err("give a scenario name or --all".into()),
        }
    };
    let mut all_pass = true;
    let mut reports = Vec::new();
    for n in names {
        let report = run_scenario(n).ok_or_else(|| format!("unknown scenario `{n}`"))?;
        all_pass &= report.pass();
        reports.push(report.to_json());
    }
    let doc = if reports.len() == 1 { reports.pop().unwrap() } else { json!(reports) };
    println!("{}", serde_json::to_string_pretty(&doc).unwrap());
    Ok(if all_pass { ExitCode::SUCCESS } else { ExitCode::from(1) })
}
