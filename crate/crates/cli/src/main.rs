use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use decoyvault_core::identity::{self, Identifier};
use decoyvault_core::{
    AuditQuery, Delivery, Error, EventKind, HostIdentity, InfoconLevel, Selector, Vault,
};

const EXIT_FAILURE: u8 = 1;
const EXIT_NO_VAULT: u8 = 2;
const EXIT_USAGE: u8 = 64;
const DEFAULT_BIND: &str = "127.0.0.1:8750";

/// Deceptive object vault: every file is stored with decoys, and requests
/// that fail host verification silently receive a decoy.
#[derive(Parser)]
#[command(name = "decoyvault", version)]
struct Cli {
    /// Vault directory.
    #[arg(long, global = true, env = "DECOYVAULT_VAULT", default_value = ".")]
    vault: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Create a vault: layout, key, config, level 5.
    Init { vault_dir: PathBuf },
    /// Upload a file with this host's identity at the current level.
    Put {
        file: PathBuf,
        /// Logical name (defaults to the file name).
        #[arg(long)]
        name: Option<String>,
    },
    /// Download by object id or logical name.
    Get {
        selector: String,
        #[command(flatten)]
        spoof: Spoof,
        /// Write content here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Share an object with another host.
    Share {
        object_id: String,
        #[arg(long)]
        grantee_mac: Option<String>,
        #[arg(long)]
        grantee_ip: Option<String>,
        #[arg(long)]
        grantee_host: Option<String>,
        #[arg(long)]
        grantee_user: Option<String>,
        #[command(flatten)]
        spoof: Spoof,
    },
    /// Redeem a share token.
    Redeem {
        token: String,
        #[command(flatten)]
        spoof: Spoof,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Show or change the threat level.
    Level {
        #[command(subcommand)]
        action: Option<LevelAction>,
    },
    /// Print audit events as JSON lines.
    Audit {
        #[arg(long)]
        kind: Option<String>,
        #[arg(long = "object")]
        object_id: Option<String>,
        #[arg(long, default_value_t = 0)]
        page: usize,
        #[arg(long, default_value_t = 1000)]
        page_size: usize,
    },
    /// Catalog/provider integrity pass and FPE self-test.
    Verify {
        /// Delete provider objects no record references.
        #[arg(long)]
        remove_orphans: bool,
    },
    /// Run the HTTP gateway.
    Serve {
        #[arg(long)]
        bind: Option<String>,
    },
}

#[derive(Subcommand)]
enum LevelAction {
    Get,
    Set {
        level: u8,
        #[arg(long, default_value = "")]
        reason: String,
    },
    /// Apply a `LEVEL=<n>` feed file (defaults to the configured feed path).
    Feed {
        file: Option<PathBuf>,
    },
}

#[derive(Args, Default)]
struct Spoof {
    /// Test facility: override collected identity fields,
    /// e.g. `mac=00:00:00:00:00:00,user_id=mallory`. Use `absent` to drop a field.
    #[arg(long)]
    spoof: Option<String>,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Core(Error),
    Other(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Other(m) => f.write_str(m),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Core(Error::VaultMissing(_)) => EXIT_NO_VAULT,
            _ => EXIT_FAILURE,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_env("DECOYVAULT_LOG")
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("decoyvault: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn apply_spoof(mut id: HostIdentity, spec: Option<&str>) -> Result<HostIdentity, CliError> {
    let Some(spec) = spec else { return Ok(id) };
    let mut hash_overridden = false;
    for pair in spec.split(',').filter(|p| !p.trim().is_empty()) {
        let (key, value) = pair
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--spoof entry {pair:?} is not key=value")))?;
        let field = match key.trim() {
            "mac" => Identifier::Mac,
            "ip" => Identifier::Ip,
            "hostname" | "host" => Identifier::Hostname,
            "user_id" | "user" => Identifier::UserId,
            "quad_hash" => Identifier::QuadHash,
            other => return Err(CliError::Usage(format!("--spoof: unknown field {other:?}"))),
        };
        let value = value.trim();
        let value = (!value.is_empty() && value != "absent").then_some(value);
        id.set(field, value);
        if value.is_some() && id.get(field).is_none() {
            return Err(CliError::Usage(format!("--spoof: invalid value for {key}")));
        }
        hash_overridden |= field == Identifier::QuadHash;
    }
    if !hash_overridden {
        id.recompute_quad_hash();
    }
    Ok(id)
}

fn open(path: &Path) -> Result<Vault, CliError> {
    Ok(Vault::open(path)?)
}

fn emit(delivery: Delivery, out: Option<&Path>) -> Result<(), CliError> {
    let v = &delivery.verdict;
    eprintln!(
        "{} object_id={} required={} matched={}",
        v.outcome.as_str(),
        v.object_id,
        v.required_fields,
        v.matched_fields
    );
    match out {
        Some(path) => std::fs::write(path, &delivery.content)
            .map_err(|e| CliError::Other(format!("write {}: {e}", path.display()))),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(&delivery.content)
                .and_then(|_| stdout.flush())
                .map_err(|e| CliError::Other(format!("stdout: {e}")))
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Init { vault_dir } => {
            let vault = Vault::init(&vault_dir)?;
            println!(
                "initialized {} at level {}",
                vault.root().display(),
                vault.level()
            );
        }
        Command::Put { file, name } => {
            let vault = open(&cli.vault)?;
            let name = match name {
                Some(n) => n,
                None => file
                    .file_name()
                    .and_then(|n| n.to_str())
                    .ok_or_else(|| {
                        CliError::Usage(format!("cannot derive a name from {}", file.display()))
                    })?
                    .to_owned(),
            };
            let content = std::fs::read(&file)
                .map_err(|e| CliError::Other(format!("read {}: {e}", file.display())))?;
            let record = vault.upload(&name, &content, &identity::collect())?;
            println!("{}", record.object_id);
            for d in &record.decoys {
                println!("decoy {} {}", d.decoy_index, d.decoy_name);
            }
        }
        Command::Get {
            selector,
            spoof,
            out,
        } => {
            let vault = open(&cli.vault)?;
            let presented = apply_spoof(identity::collect(), spoof.spoof.as_deref())?;
            let delivery = vault.download(&Selector::Any(selector), &presented)?;
            emit(delivery, out.as_deref())?;
        }
        Command::Share {
            object_id,
            grantee_mac,
            grantee_ip,
            grantee_host,
            grantee_user,
            spoof,
        } => {
            let vault = open(&cli.vault)?;
            let owner = apply_spoof(identity::collect(), spoof.spoof.as_deref())?;
            let grantee = HostIdentity::new(
                grantee_mac.as_deref(),
                grantee_ip.as_deref(),
                grantee_host.as_deref(),
                grantee_user.as_deref(),
            );
            let grant = vault.share(&object_id, &owner, &grantee)?;
            println!("{}", grant.token);
        }
        Command::Redeem { token, spoof, out } => {
            let vault = open(&cli.vault)?;
            let presented = apply_spoof(identity::collect(), spoof.spoof.as_deref())?;
            emit(vault.redeem(&token, &presented)?, out.as_deref())?;
        }
        Command::Level { action } => {
            let vault = open(&cli.vault)?;
            match action.unwrap_or(LevelAction::Get) {
                LevelAction::Get => println!("{}", vault.level()),
                LevelAction::Set { level, reason } => {
                    let level =
                        InfoconLevel::new(level).map_err(|e| CliError::Usage(e.to_string()))?;
                    vault.threat().set_level(level, &reason)?;
                    println!("{}", vault.level());
                }
                LevelAction::Feed { file } => {
                    let file = file
                        .or_else(|| vault.config().feed_path.clone())
                        .ok_or_else(|| {
                            CliError::Usage("no feed file given or configured".into())
                        })?;
                    match vault.threat().ingest_feed(&file)? {
                        Some(level) => println!("{level}"),
                        None => println!("{} (unchanged)", vault.level()),
                    }
                }
            }
        }
        Command::Audit {
            kind,
            object_id,
            page,
            page_size,
        } => {
            let vault = open(&cli.vault)?;
            let kind = kind
                .map(|k| k.parse::<EventKind>())
                .transpose()
                .map_err(|e| CliError::Usage(e.to_string()))?;
            let query = AuditQuery {
                kind,
                object_id,
                ..Default::default()
            };
            let mut stdout = std::io::stdout().lock();
            for event in vault.audit().query(&query, page, page_size)? {
                let line = serde_json::to_string(&event).expect("event serializes");
                writeln!(stdout, "{line}").map_err(|e| CliError::Other(format!("stdout: {e}")))?;
            }
        }
        Command::Verify { remove_orphans } => {
            let vault = open(&cli.vault)?;
            let report = vault.verify(remove_orphans)?;
            for e in &report.integrity_errors {
                println!("error: {e}");
            }
            for o in &report.orphans {
                println!("orphan: {o}");
            }
            println!(
                "records={} objects={} integrity_errors={} orphans={} orphans_removed={} fpe_self_test={}",
                report.records_checked,
                report.objects_checked,
                report.integrity_errors.len(),
                report.orphans.len(),
                report.orphans_removed,
                if report.fpe_self_test_passed { "pass" } else { "fail" },
            );
            if !report.is_clean() {
                return Err(CliError::Other("vault failed verification".into()));
            }
        }
        Command::Serve { bind } => {
            let vault = Arc::new(open(&cli.vault)?);
            let bind = bind
                .or_else(|| vault.config().bind_address.clone())
                .unwrap_or_else(|| DEFAULT_BIND.to_owned());
            let runtime = tokio::runtime::Builder::new_multi_thread()
                .enable_all()
                .build()
                .map_err(|e| CliError::Other(format!("runtime: {e}")))?;
            runtime
                .block_on(decoyvault_gateway::run(&bind, vault))
                .map_err(|e| CliError::Other(format!("serve {bind}: {e}")))?;
        }
    }
    Ok(())
}
