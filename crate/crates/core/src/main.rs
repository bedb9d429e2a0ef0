//! Command-line front end. Machine-readable results go to stdout; progress
//! and diagnostics go to stderr. Exit codes are stable: 0 success, 1 storage
//! failure, 2 invalid input, 3 unknown tool, 4 address without code,
//! 5 RPC transport failure.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use evmscan::adapters::{load_descriptors, SubprocessExecutor, ToolDescriptor};
use evmscan::config::{Config, ConfigError};
use evmscan::disasm::decode_hex;
use evmscan::engine::{
    build_scan_plan, monitor_rescan, run_scan, CancelToken, EngineError, ScanPlan,
};
use evmscan::ingest::explorer::ExplorerClient;
use evmscan::ingest::rpc::fetch_code_rpc;
use evmscan::ingest::{import_csv, export_csv, IngestError};
use evmscan::model::{parse_address, Contract, ContractOrigin};
use evmscan::stats::{compute_stats, findings_over_time, render_table};
use evmscan::store::{FileStore, Selection, Store, StoreError};

const EXIT_CODES: &str = "Exit codes:
  0  success
  1  storage failure (batch aborted)
  2  invalid input (bad path, address, range, or configuration)
  3  unknown tool name
  4  address holds no code (user account)
  5  RPC transport failure";

#[derive(Parser)]
#[command(
    name = "evmscan",
    about = "Smart-contract security scanner: built-in EVM bytecode detectors plus pluggable external tools",
    version,
    after_help = EXIT_CODES
)]
struct Cli {
    /// Path to a JSON config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory holding the contract and report logs.
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    /// Directory where per-contract input files are materialized.
    #[arg(long, global = true)]
    inputs_dir: Option<PathBuf>,
    /// Directory of tool descriptor JSON files.
    #[arg(long, global = true)]
    tools_dir: Option<PathBuf>,
    /// Worker pool size for contract x analyzer jobs.
    #[arg(long, global = true)]
    parallelism: Option<usize>,
    /// Ethereum JSON-RPC endpoint URL.
    #[arg(long, global = true)]
    rpc_endpoint: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ToolSelection {
    /// Analyzers to run (external tool names; "builtin" is always valid).
    #[arg(long, value_delimiter = ',')]
    tools: Vec<String>,
    /// Skip the built-in detector pipeline.
    #[arg(long)]
    no_builtin: bool,
}

impl ToolSelection {
    fn names(&self) -> Vec<String> {
        let mut names = self.tools.clone();
        if !self.no_builtin && !names.iter().any(|n| n == "builtin") {
            names.push("builtin".to_string());
        }
        names.retain(|n| !(self.no_builtin && n == "builtin"));
        names
    }
}

#[derive(Args)]
struct Scope {
    /// Select every stored contract.
    #[arg(long, conflicts_with_all = ["seq", "block", "address"])]
    all: bool,
    /// Inclusive sequence range, e.g. 1..100.
    #[arg(long, conflicts_with_all = ["block", "address"])]
    seq: Option<String>,
    /// Inclusive block-number range, e.g. 1500000..1600000.
    #[arg(long, conflicts_with = "address")]
    block: Option<String>,
    /// Single contract id (address or content hash).
    #[arg(long)]
    address: Option<String>,
    /// With --address: include every stored version, not just the latest.
    #[arg(long, requires = "address")]
    all_versions: bool,
}

impl Scope {
    fn selection(&self) -> Result<Selection, AppError> {
        if let Some(range) = &self.seq {
            let (from, to) = parse_range(range)?;
            return Ok(Selection::Seq { from, to });
        }
        if let Some(range) = &self.block {
            let (from, to) = parse_range(range)?;
            return Ok(Selection::Block { from, to });
        }
        if let Some(id) = &self.address {
            let id = canonical_id(id);
            return Ok(Selection::Address {
                id,
                all_versions: self.all_versions,
            });
        }
        Ok(Selection::All)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Scan local .hex / .sol files without touching the persistent store.
    ScanFile {
        /// Contract files; a .hex and .sol sharing a stem form one contract.
        paths: Vec<PathBuf>,
        #[command(flatten)]
        tools: ToolSelection,
        /// Write report documents here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fetch a contract over JSON-RPC, persist it, and scan it.
    ScanAddress {
        address: String,
        #[command(flatten)]
        tools: ToolSelection,
    },
    /// Load a contract batch from CSV into the store.
    Import { csv_path: PathBuf },
    /// Scan a stored range of contracts.
    ScanRange {
        #[command(flatten)]
        scope: Scope,
        #[command(flatten)]
        tools: ToolSelection,
    },
    /// Inspect external tool registrations.
    Tools {
        #[command(subcommand)]
        command: ToolsCommand,
    },
    /// Corpus statistics over stored reports.
    Stats {
        #[command(flatten)]
        scope: Scope,
        /// Emit the canonical JSON document instead of the text table.
        #[arg(long)]
        json: bool,
        /// Per-contract findings timeline instead of corpus aggregates.
        #[arg(long, conflicts_with_all = ["all", "seq", "block"])]
        timeline: Option<String>,
    },
    /// Re-scan contracts whose reports predate the current detectors, on an
    /// interval, until interrupted.
    Monitor {
        /// Seconds between passes.
        #[arg(long, default_value_t = 60)]
        interval: u64,
        #[command(flatten)]
        tools: ToolSelection,
        /// Run a single pass and exit.
        #[arg(long)]
        once: bool,
    },
    /// Export stored contracts back to CSV.
    Export {
        out: PathBuf,
        #[command(flatten)]
        scope: Scope,
    },
}

#[derive(Subcommand)]
enum ToolsCommand {
    /// One row per descriptor: name, levels, enabled, image.
    List,
}

struct AppError {
    code: u8,
    message: String,
}

impl AppError {
    fn new(code: u8, message: impl Into<String>) -> Self {
        AppError {
            code,
            message: message.into(),
        }
    }

    fn invalid(message: impl Into<String>) -> Self {
        AppError::new(2, message)
    }
}

impl From<ConfigError> for AppError {
    fn from(e: ConfigError) -> Self {
        AppError::invalid(e.to_string())
    }
}

impl From<StoreError> for AppError {
    fn from(e: StoreError) -> Self {
        let code = match e {
            StoreError::Failure(_) => 1,
            StoreError::UnknownContract(_) | StoreError::EmptyContract => 2,
        };
        AppError::new(code, e.to_string())
    }
}

impl From<EngineError> for AppError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::UnknownTool(_) => AppError::new(3, e.to_string()),
            EngineError::EmptyPlan => AppError::invalid(e.to_string()),
            EngineError::Storage(inner) => inner.into(),
        }
    }
}

impl From<IngestError> for AppError {
    fn from(e: IngestError) -> Self {
        let code = match &e {
            IngestError::NotAContract => 4,
            IngestError::RpcTransport(_) | IngestError::RpcError(_) => 5,
            IngestError::Io(_) | IngestError::Csv(_) => 1,
            _ => 2,
        };
        AppError::new(code, e.to_string())
    }
}

fn parse_range(text: &str) -> Result<(u64, u64), AppError> {
    let (a, b) = text
        .split_once("..")
        .ok_or_else(|| AppError::invalid(format!("range {text:?} must look like A..B")))?;
    let from: u64 = a
        .trim()
        .parse()
        .map_err(|_| AppError::invalid(format!("range start {a:?} is not a number")))?;
    let to: u64 = b
        .trim()
        .parse()
        .map_err(|_| AppError::invalid(format!("range end {b:?} is not a number")))?;
    if from > to {
        return Err(AppError::invalid(format!("range {text:?} is reversed")));
    }
    Ok((from, to))
}

/// Store ids are canonical address text for addressed contracts; accept any
/// case on input.
fn canonical_id(id: &str) -> String {
    match parse_address(id) {
        Ok(address) => address.to_text(),
        Err(_) => id.to_string(),
    }
}

static INTERRUPTED: AtomicBool = AtomicBool::new(false);

extern "C" fn on_interrupt(_: libc::c_int) {
    INTERRUPTED.store(true, Ordering::SeqCst);
}

fn install_interrupt_handler() {
    let handler = on_interrupt as extern "C" fn(libc::c_int) as libc::sighandler_t;
    unsafe {
        libc::signal(libc::SIGINT, handler);
        libc::signal(libc::SIGTERM, handler);
        // Die quietly when the read end of a pipe closes (`evmscan ... | head`)
        // instead of panicking on the broken-pipe write error.
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
}

/// Token that trips when the process receives SIGINT/SIGTERM.
fn interruptible_token() -> CancelToken {
    let token = CancelToken::new();
    let watcher = token.clone();
    std::thread::spawn(move || loop {
        if INTERRUPTED.load(Ordering::SeqCst) {
            watcher.cancel();
            return;
        }
        std::thread::sleep(Duration::from_millis(100));
    });
    token
}

fn load_config(cli: &Cli) -> Result<Config, AppError> {
    let mut config = Config::load(cli.config.as_deref())?;
    if let Some(dir) = &cli.data_dir {
        config.data_dir = dir.clone();
    }
    if let Some(dir) = &cli.inputs_dir {
        config.inputs_dir = dir.clone();
    }
    if let Some(dir) = &cli.tools_dir {
        config.tools_dir = dir.clone();
    }
    if let Some(parallelism) = cli.parallelism {
        config.parallelism = parallelism;
    }
    if let Some(endpoint) = &cli.rpc_endpoint {
        config.rpc_endpoint = Some(endpoint.clone());
    }
    config.finalize()?;
    Ok(config)
}

fn load_tools(config: &Config) -> Vec<ToolDescriptor> {
    let (descriptors, errors) = load_descriptors(&config.tools_dir);
    for (path, detail) in errors {
        eprintln!("warning: descriptor {}: {detail}", path.display());
    }
    descriptors
}

fn plan_for(
    config: &Config,
    selection: Selection,
    tools: &ToolSelection,
) -> Result<ScanPlan, AppError> {
    let descriptors = load_tools(config);
    let plan = build_scan_plan(
        selection,
        &tools.names(),
        &descriptors,
        config.parallelism,
        config.inputs_dir.clone(),
    )?;
    Ok(plan)
}

fn print_reports_for(
    store: &FileStore,
    ids: &[String],
    out: Option<&Path>,
) -> Result<(), AppError> {
    let mut lines = String::new();
    for id in ids {
        let reports = store.get_reports(id)?;
        let Some(report) = reports.last() else { continue };
        let json = serde_json::to_string(report)
            .map_err(|e| AppError::new(1, format!("serializing report: {e}")))?;
        lines.push_str(&json);
        lines.push('\n');
    }
    match out {
        None => print!("{lines}"),
        Some(path) => std::fs::write(path, lines)
            .map_err(|e| AppError::new(1, format!("writing {}: {e}", path.display())))?,
    }
    Ok(())
}

fn contracts_from_files(paths: &[PathBuf]) -> Result<Vec<Contract>, AppError> {
    if paths.is_empty() {
        return Err(AppError::invalid("no input files given"));
    }
    // Pair files sharing a stem; a .hex and a .sol together form one
    // contract analyzable at both levels.
    let mut by_stem: BTreeMap<String, (Option<PathBuf>, Option<PathBuf>)> = BTreeMap::new();
    for path in paths {
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_string();
        let slot = by_stem.entry(stem).or_default();
        match path.extension().and_then(|e| e.to_str()) {
            Some("hex") => slot.0 = Some(path.clone()),
            Some("sol") => slot.1 = Some(path.clone()),
            _ => {
                return Err(AppError::invalid(format!(
                    "{}: unsupported extension (supported: .hex, .sol)",
                    path.display()
                )))
            }
        }
    }
    let mut contracts = Vec::new();
    for (stem, (hex_path, sol_path)) in by_stem {
        let bytecode = match &hex_path {
            None => Vec::new(),
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| {
                    AppError::invalid(format!("{}: {e}", path.display()))
                })?;
                decode_hex(text.trim()).map_err(|e| {
                    AppError::invalid(format!("{}: {e}", path.display()))
                })?
            }
        };
        let source = match &sol_path {
            None => None,
            Some(path) => Some(std::fs::read_to_string(path).map_err(|e| {
                AppError::invalid(format!("{}: {e}", path.display()))
            })?),
        };
        let contract = Contract::new(None, bytecode, source, ContractOrigin::LocalFile)
            .map_err(|e| AppError::invalid(format!("{stem}: {e}")))?;
        contracts.push(contract);
    }
    Ok(contracts)
}

fn cmd_scan_file(
    config: &Config,
    paths: &[PathBuf],
    tools: &ToolSelection,
    out: Option<&Path>,
) -> Result<(), AppError> {
    let contracts = contracts_from_files(paths)?;
    let ids: Vec<String> = contracts.iter().map(|c| c.id()).collect();

    // Ad-hoc scans run against a throwaway store so nothing persists.
    let scratch = tempfile::tempdir()
        .map_err(|e| AppError::new(1, format!("scratch dir: {e}")))?;
    let mut store = FileStore::open(&scratch.path().join("store"))?;
    for contract in contracts {
        store.put_contract(contract)?;
    }

    let mut plan = plan_for(config, Selection::All, tools)?;
    plan.inputs_dir = scratch.path().join("inputs");
    let registry = config.detector_registry()?;
    let executor = SubprocessExecutor::default();
    let summary = run_scan(&plan, &registry, &executor, &mut store, &interruptible_token())?;
    print_reports_for(&store, &ids, out)?;
    eprintln!(
        "{} contract(s) scanned, {} record(s)",
        summary.contracts_scanned, summary.records_produced
    );
    Ok(())
}

fn cmd_scan_address(
    config: &Config,
    address_text: &str,
    tools: &ToolSelection,
) -> Result<(), AppError> {
    let address = parse_address(address_text)
        .map_err(|e| AppError::invalid(e.to_string()))?;
    let endpoint = config
        .rpc_endpoint
        .as_deref()
        .ok_or_else(|| AppError::invalid("no RPC endpoint configured (--rpc-endpoint)"))?;

    let mut contract = fetch_code_rpc(endpoint, address)?;
    if let Some(explorer) = &config.explorer {
        let client = ExplorerClient::new(&explorer.base_url, &explorer.api_key, explorer.rate);
        if let Some(source) = client.fetch_source(address) {
            contract.source_available = true;
            contract.source = Some(source);
        }
    }

    let mut store = FileStore::open(&config.data_dir)?;
    let stored = store.put_contract(contract)?;
    let id = stored.contract.id();

    let plan = plan_for(
        config,
        Selection::Address {
            id: id.clone(),
            all_versions: false,
        },
        tools,
    )?;
    let registry = config.detector_registry()?;
    let executor = SubprocessExecutor::default();
    run_scan(&plan, &registry, &executor, &mut store, &interruptible_token())?;
    print_reports_for(&store, &[id], None)
}

fn cmd_import(config: &Config, csv_path: &Path) -> Result<(), AppError> {
    let batch = import_csv(csv_path)?;
    let mut store = FileStore::open(&config.data_dir)?;
    let mut imported = 0usize;
    for contract in batch.contracts {
        store.put_contract(contract)?;
        imported += 1;
    }
    for (line, reason) in &batch.rejected {
        eprintln!("line {line}: {reason}");
    }
    let doc = serde_json::json!({
        "imported": imported,
        "rejected": batch.rejected
            .iter()
            .map(|(line, reason)| serde_json::json!({"line": line, "reason": reason}))
            .collect::<Vec<_>>(),
    });
    println!("{doc}");
    Ok(())
}

fn cmd_scan_range(config: &Config, scope: &Scope, tools: &ToolSelection) -> Result<(), AppError> {
    let plan = plan_for(config, scope.selection()?, tools)?;
    let registry = config.detector_registry()?;
    let executor = SubprocessExecutor::default();
    let mut store = FileStore::open(&config.data_dir)?;
    let summary = run_scan(&plan, &registry, &executor, &mut store, &interruptible_token())?;
    println!(
        "{}",
        serde_json::to_string(&summary).map_err(|e| AppError::new(1, e.to_string()))?
    );
    Ok(())
}

fn cmd_tools_list(config: &Config) -> Result<(), AppError> {
    let descriptors = load_tools(config);
    if descriptors.is_empty() {
        println!("no tools registered in {}", config.tools_dir.display());
        return Ok(());
    }
    println!("{:<16} {:<20} {:<8} image", "name", "levels", "enabled");
    for tool in descriptors {
        let levels: Vec<String> = tool
            .level
            .iter()
            .map(|l| format!("{l:?}").to_lowercase())
            .collect();
        println!(
            "{:<16} {:<20} {:<8} {}",
            tool.name,
            levels.join(","),
            tool.enabled,
            tool.image
        );
    }
    Ok(())
}

fn cmd_stats(
    config: &Config,
    scope: &Scope,
    json: bool,
    timeline: Option<&str>,
) -> Result<(), AppError> {
    let store = FileStore::open(&config.data_dir)?;
    if let Some(id) = timeline {
        let entries = findings_over_time(&store, &canonical_id(id))?;
        println!(
            "{}",
            serde_json::to_string(&entries).map_err(|e| AppError::new(1, e.to_string()))?
        );
        return Ok(());
    }
    let groups = config.resolved_stats_groups()?;
    let stats = compute_stats(&store, &scope.selection()?, &groups)?;
    if json {
        println!(
            "{}",
            serde_json::to_string(&stats).map_err(|e| AppError::new(1, e.to_string()))?
        );
    } else {
        print!("{}", render_table(&stats));
    }
    Ok(())
}

fn cmd_monitor(
    config: &Config,
    interval: u64,
    tools: &ToolSelection,
    once: bool,
) -> Result<(), AppError> {
    let registry = config.detector_registry()?;
    let descriptors = load_tools(config);
    let mut selected: Vec<ToolDescriptor> = Vec::new();
    for name in tools.names() {
        if name == "builtin" {
            continue;
        }
        let tool = descriptors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| AppError::new(3, format!("unknown tool {name}")))?;
        if tool.enabled {
            selected.push(tool.clone());
        } else {
            eprintln!("tool {name} is disabled; skipping it");
        }
    }

    let executor = SubprocessExecutor::default();
    let mut store = FileStore::open(&config.data_dir)?;
    let token = interruptible_token();
    loop {
        let outcome = monitor_rescan(
            &mut store,
            &registry,
            &selected,
            &executor,
            config.inputs_dir.clone(),
            config.parallelism,
            &token,
        )?;
        if outcome.summary.contracts_scanned > 0 || !outcome.diffs.is_empty() {
            println!(
                "{}",
                serde_json::to_string(&outcome).map_err(|e| AppError::new(1, e.to_string()))?
            );
        } else {
            eprintln!("all reports current; nothing to re-scan");
        }
        if once || token.is_cancelled() {
            return Ok(());
        }
        let mut slept = 0u64;
        while slept < interval * 1000 {
            if token.is_cancelled() {
                return Ok(());
            }
            std::thread::sleep(Duration::from_millis(200));
            slept += 200;
        }
    }
}

fn cmd_export(config: &Config, out: &Path, scope: &Scope) -> Result<(), AppError> {
    let store = FileStore::open(&config.data_dir)?;
    let contracts: Vec<Contract> = store
        .select(&scope.selection()?)?
        .map(|record| record.contract)
        .collect();
    let count = contracts.len();
    export_csv(&contracts, out)?;
    eprintln!("{count} contract(s) exported to {}", out.display());
    Ok(())
}

fn run(cli: &Cli) -> Result<(), AppError> {
    let config = load_config(cli)?;
    match &cli.command {
        Command::ScanFile { paths, tools, out } => {
            cmd_scan_file(&config, paths, tools, out.as_deref())
        }
        Command::ScanAddress { address, tools } => cmd_scan_address(&config, address, tools),
        Command::Import { csv_path } => cmd_import(&config, csv_path),
        Command::ScanRange { scope, tools } => cmd_scan_range(&config, scope, tools),
        Command::Tools { command } => match command {
            ToolsCommand::List => cmd_tools_list(&config),
        },
        Command::Stats {
            scope,
            json,
            timeline,
        } => cmd_stats(&config, scope, *json, timeline.as_deref()),
        Command::Monitor {
            interval,
            tools,
            once,
        } => cmd_monitor(&config, *interval, tools, *once),
        Command::Export { out, scope } => cmd_export(&config, out, scope),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp_millis()
        .init();
    install_interrupt_handler();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = writeln!(std::io::stderr(), "error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
