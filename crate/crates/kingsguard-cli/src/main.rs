//! Command-line front end: prepare enclave images, run them, replay the
//! attack scenarios, and drive the noninterference fuzzer.
//!
//! Exit codes: 0 on success, 1 when a run or assertion fails, 2 on usage
//! errors (clap's default).

use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use kingsguard::binprep::{assemble, prepare_image, MacKey, DEFAULT_PATH_BOUND};
use kingsguard::config::LayoutConfig;
use kingsguard::dift::TaintRule;
use kingsguard::harness::{self, host_driver, ScenarioError};
use kingsguard::machine::Simulator;
use kingsguard::{RunOutcome, SimConfig};

/// Key used when none is supplied; fine for local experiments, not for
/// anything that matters.
const DEFAULT_KEY_HEX: &str = "4b4b4b4b4b4b4b4b4b4b4b4b4b4b4b4b4b4b4b4b4b4b4b4b4b4b4b4b4b4b4b4b";

#[derive(Parser)]
#[command(
    name = "kingsguard",
    version,
    about = "Tainted-dataflow TEE simulator and image toolchain"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OnOff {
    On,
    Off,
}

impl From<OnOff> for bool {
    fn from(v: OnOff) -> bool {
        v == OnOff::On
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run a prepared enclave image under a minimal host driver.
    Run(RunArgs),
    /// Replay an attack scenario and check its expected outcome.
    Attack(AttackArgs),
    /// Differential noninterference fuzzing over generated programs.
    Fuzz(FuzzArgs),
    /// Assemble a source file and emit a signed enclave image.
    Prep(PrepArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Prepared image (.kgim).
    image: PathBuf,
    #[arg(long, value_enum, default_value = "on")]
    protections: OnOff,
    /// Write the event trace to this file, one line per event.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Print event counters after the run.
    #[arg(long)]
    stats: bool,
    #[arg(long, default_value_t = 1_000_000)]
    max_steps: u64,
    /// Verification key, 64 hex digits.
    #[arg(long, default_value = DEFAULT_KEY_HEX)]
    key: String,
    /// TOML file overriding machine parameters (mem_size, shared_regs,
    /// a_fixed, peripheral_pages, staging_base, max_enclaves,
    /// ocall_max_len).
    #[arg(long)]
    config: Option<PathBuf>,
}

fn apply_config_file(cfg: &mut SimConfig, path: &PathBuf) -> Result<(), String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let table: toml::Table = text
        .parse()
        .map_err(|e| format!("{}: {e}", path.display()))?;
    let as_u64 = |v: &toml::Value, k: &str| -> Result<u64, String> {
        v.as_integer()
            .map(|i| i as u64)
            .ok_or_else(|| format!("config key `{k}` must be an integer"))
    };
    for (key, value) in &table {
        match key.as_str() {
            "mem_size" => cfg.mem_size = as_u64(value, key)?,
            "shared_regs" => cfg.num_shared_regs = as_u64(value, key)? as usize,
            "a_fixed" => cfg.a_fixed = as_u64(value, key)?,
            "staging_base" => cfg.staging_base = as_u64(value, key)?,
            "max_enclaves" => cfg.max_enclaves = as_u64(value, key)? as usize,
            "ocall_max_len" => cfg.ocall_max_len = as_u64(value, key)?,
            "peripheral_pages" => {
                let arr = value
                    .as_array()
                    .ok_or("config key `peripheral_pages` must be an array")?;
                cfg.peripheral_pages = arr
                    .iter()
                    .map(|v| as_u64(v, "peripheral_pages"))
                    .collect::<Result<_, _>>()?;
            }
            other => return Err(format!("unknown config key `{other}`")),
        }
    }
    cfg.validate()
}

#[derive(Args)]
struct AttackArgs {
    /// One of: av1, av2, av3, av4, scada.
    scenario: String,
    #[arg(long, value_enum, default_value = "on")]
    protections: OnOff,
}

#[derive(Args)]
struct FuzzArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 25)]
    programs: u64,
    #[arg(long, default_value_t = 4)]
    pairs: u64,
    /// Plant the broken propagation rule to confirm the oracle sees it.
    #[arg(long)]
    mutation: bool,
}

#[derive(Args)]
struct PrepArgs {
    /// Assembly source (.kasm).
    #[arg(long = "in")]
    input: PathBuf,
    /// Output image path (.kgim).
    #[arg(long = "out")]
    output: PathBuf,
    /// Signing key, 64 hex digits.
    #[arg(long, default_value = DEFAULT_KEY_HEX)]
    key: String,
    #[arg(long, default_value_t = DEFAULT_PATH_BOUND)]
    path_bound: usize,
    /// Print the control-flow nodes.
    #[arg(long)]
    dump_cfg: bool,
    /// Print each authorized path's edges and digest.
    #[arg(long)]
    dump_adps: bool,
}

fn parse_key(hex_str: &str) -> Result<MacKey, String> {
    let bytes = hex::decode(hex_str).map_err(|e| format!("bad key hex: {e}"))?;
    let arr: [u8; 32] = bytes
        .try_into()
        .map_err(|_| "key must be exactly 32 bytes".to_string())?;
    Ok(MacKey(arr))
}

fn cmd_run(args: RunArgs) -> Result<(), String> {
    let key = parse_key(&args.key)?;
    let image = fs::read(&args.image).map_err(|e| format!("{}: {e}", args.image.display()))?;

    let mut cfg = SimConfig::default().with_protections(args.protections.into());
    if let Some(path) = &args.config {
        apply_config_file(&mut cfg, path)?;
    }
    let mut sim = Simulator::new(cfg, key);
    sim.register_image(image);
    let driver = assemble(&host_driver("", ""), LayoutConfig::host())
        .map_err(|e| format!("internal driver: {e}"))?;
    sim.load_host_program(driver);

    let report = sim.run(args.max_steps);

    if let Some(path) = &args.trace {
        let mut f = fs::File::create(path).map_err(|e| format!("{}: {e}", path.display()))?;
        for event in &report.trace {
            writeln!(f, "{event}").map_err(|e| e.to_string())?;
        }
    }

    if args.stats {
        let c = report.counters;
        println!("steps                   {}", c.steps);
        println!("data loads              {}", c.data_loads);
        println!("data stores             {}", c.data_stores);
        println!("enclave data loads      {}", c.enclave_data_loads);
        println!("enclave data stores     {}", c.enclave_data_stores);
        println!("shadow accesses         {}", c.shadow_accesses);
        println!("hash updates            {}", c.hash_updates);
        println!("suppressed loop hashes  {}", c.suppressed_loop_hashes);
        println!("taken enclave transfers {}", c.taken_enclave_transfers);
        println!("context switches        {}", c.context_switches);
        println!("page faults             {}", c.page_faults);
        println!("declass matches         {}", c.declass_matches);
        println!("violations              {}", report.violations.len());
    }

    match report.outcome {
        RunOutcome::Halted => {
            println!("halted after {} steps", report.counters.steps);
            Ok(())
        }
        RunOutcome::StepBudgetExceeded => {
            Err(format!("step budget of {} exceeded", args.max_steps))
        }
        RunOutcome::Trapped(kind) => Err(format!("trapped: {kind:?}")),
    }
}

fn cmd_attack(args: AttackArgs) -> Result<(), String> {
    let protections = args.protections.into();
    match harness::run_scenario(&args.scenario, protections) {
        Ok(report) => {
            for line in &report.checks {
                println!("{line}");
            }
            println!(
                "{}: expected outcome holds (protections {})",
                report.name,
                if protections { "on" } else { "off" }
            );
            Ok(())
        }
        Err(ScenarioError::UnknownScenario(name)) => {
            // usage error, not an assertion failure
            eprintln!(
                "unknown scenario `{name}`; expected one of {:?}",
                harness::ALL_SCENARIOS
            );
            std::process::exit(2);
        }
        Err(e) => Err(e.to_string()),
    }
}

fn cmd_fuzz(args: FuzzArgs) -> Result<(), String> {
    let rule = if args.mutation {
        TaintRule::AndMutant
    } else {
        TaintRule::Or
    };
    let summary = harness::fuzz_noninterference(args.seed, args.programs, args.pairs, rule)
        .map_err(|e| e.to_string())?;
    println!(
        "{} trials: {} indistinguishable, {} counterexamples",
        summary.trials,
        summary.indistinguishable,
        summary.counterexamples.len()
    );
    for c in &summary.counterexamples {
        println!("--- counterexample ({}):", c.witness);
        println!("secrets {:x?} vs {:x?}", c.secret_a, c.secret_b);
        println!("{}", c.program);
    }
    if args.mutation {
        if summary.counterexamples.is_empty() {
            return Err("mutation run found no counterexample; the oracle is blind".into());
        }
        println!("oracle sensitivity confirmed");
        Ok(())
    } else if summary.counterexamples.is_empty() {
        Ok(())
    } else {
        Err("noninterference violated".into())
    }
}

fn cmd_prep(args: PrepArgs) -> Result<(), String> {
    let key = parse_key(&args.key)?;
    let source =
        fs::read_to_string(&args.input).map_err(|e| format!("{}: {e}", args.input.display()))?;
    let prog = assemble(&source, LayoutConfig::enclave()).map_err(|e| e.to_string())?;
    let (image, info) = prepare_image(&prog, &key, args.path_bound).map_err(|e| e.to_string())?;

    if args.dump_cfg {
        println!("entry {:#x}", info.cfg.entry);
        for node in info.cfg.nodes.values() {
            println!(
                "{:#x}\t{}\ttargets {:x?}{}{}",
                node.addr,
                node.opcode.mnemonic(),
                node.taken_targets,
                node.fallthrough
                    .map(|f| format!("\tfallthrough {f:#x}"))
                    .unwrap_or_default(),
                if node.is_back_edge { "\tback-edge" } else { "" },
            );
        }
    }
    if args.dump_adps {
        for (i, path) in info.paths.iter().enumerate() {
            let edges: Vec<String> = path
                .edges
                .iter()
                .map(|(s, t)| format!("{s:#x}->{t:#x}"))
                .collect();
            let digest: String = path.digest.iter().map(|b| format!("{b:02x}")).collect();
            println!("path {i}: [{}] digest {digest}", edges.join(", "));
        }
    }

    let bytes = image.to_bytes();
    fs::write(&args.output, &bytes).map_err(|e| format!("{}: {e}", args.output.display()))?;
    println!(
        "wrote {} ({} bytes, {} authorized paths)",
        args.output.display(),
        bytes.len(),
        info.paths.len()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Attack(args) => cmd_attack(args),
        Command::Fuzz(args) => cmd_fuzz(args),
        Command::Prep(args) => cmd_prep(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
