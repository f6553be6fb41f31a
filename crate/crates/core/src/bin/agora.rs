use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::BufReader;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use thiserror::Error;

use agora::consensus::{compute_report, PassPolicy};
use agora::constitution::{export_constitution, ConstitutionError, ExportFormat, IdeaLedger, MergeRecord};
use agora::elo::{elo_report, read_records_csv, EloError, DEFAULT_RESAMPLES};
use agora::figures::{gac_histogram, polarization_histograms};
use agora::import::{import_votes, ColumnMap, ImportError, ImportSpec, VoteEncoding};
use agora::service::{build_constitution, http, votes_csv, ServiceError, Store};
use agora::synth::{generate, SynthError, SynthParams};
use agora::{ConversationConfig, StatementId};

#[derive(Parser)]
#[command(name = "agora", version, about = "Deliberation engine and analytics")]
struct Cli {
    /// Directory holding one `<conversation>.jsonl` event log per conversation.
    #[arg(long, global = true, env = "AGORA_DATA_DIR", default_value = "agora-data")]
    data_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP service.
    Serve {
        /// JSON file: {"address": "127.0.0.1:8080"}.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Import an external vote CSV as a new conversation.
    Import(ImportArgs),
    /// Write the report, votes CSV and histograms for a conversation.
    Analyze {
        #[arg(long)]
        conversation: String,
        #[arg(long)]
        out: PathBuf,
        /// Leave passes out of the seen count when estimating agreement.
        #[arg(long)]
        exclude_passes: bool,
    },
    /// Select statements and write the constitution in batch mode.
    Constitution {
        #[arg(long)]
        conversation: String,
        /// JSON map of statement id to idea tags. Defaults to the tags in
        /// the log, or one tag per statement if there are none.
        #[arg(long)]
        ledger: Option<PathBuf>,
        /// JSON list of merge records.
        #[arg(long)]
        merges: Option<PathBuf>,
        /// JSON map of candidate id to operator principle wording.
        #[arg(long)]
        overrides: Option<PathBuf>,
        /// Idea budget; defaults to the conversation's.
        #[arg(long)]
        budget: Option<usize>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Fit Elo ratings from `model_a,model_b,winner,dimension` records.
    Elo {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        anchor: String,
        #[arg(long, default_value_t = DEFAULT_RESAMPLES)]
        resamples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the JSON report here.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Generate a synthetic population with planted opinion blocs.
    Synth {
        #[arg(long)]
        participants: usize,
        #[arg(long)]
        statements: usize,
        #[arg(long)]
        blocs: usize,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct ImportArgs {
    #[arg(long)]
    file: PathBuf,
    #[arg(long, default_value = "participant_id")]
    participant_col: String,
    #[arg(long, default_value = "statement_id")]
    statement_col: String,
    #[arg(long, default_value = "vote")]
    vote_col: String,
    #[arg(long)]
    text_col: Option<String>,
    #[arg(long, default_value = "1", allow_hyphen_values = true)]
    agree: String,
    #[arg(long, default_value = "-1", allow_hyphen_values = true)]
    disagree: String,
    #[arg(long, default_value = "0", allow_hyphen_values = true)]
    pass: String,
    #[arg(long)]
    sign_flip: bool,
    /// Seed for the conversation's routing and clustering.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Error)]
enum CliError {
    #[error("config parse error in {path}: {message}")]
    ConfigParse { path: PathBuf, message: String },
    #[error("address {0} is already in use")]
    AddressInUse(SocketAddr),
    #[error("conversation does not have enough data for analytics")]
    LowData,
    #[error(transparent)]
    Service(#[from] ServiceError),
    #[error(transparent)]
    Import(#[from] ImportError),
    #[error(transparent)]
    Constitution(#[from] ConstitutionError),
    #[error(transparent)]
    Elo(#[from] EloError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(io_err(path))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let file = File::open(path).map_err(io_err(path))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| CliError::ConfigParse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

#[derive(Deserialize)]
struct ServeConfig {
    #[serde(default = "default_address")]
    address: SocketAddr,
}

fn default_address() -> SocketAddr {
    SocketAddr::from(([127, 0, 0, 1], 8080))
}

fn serve(data_dir: &Path, config: Option<&Path>) -> Result<(), CliError> {
    let address = match config {
        Some(path) => read_json::<ServeConfig>(path)?.address,
        None => default_address(),
    };
    let store = Arc::new(Store::open(data_dir)?);
    let runtime = tokio::runtime::Runtime::new().map_err(io_err(data_dir))?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(address).await.map_err(|e| {
            if e.kind() == std::io::ErrorKind::AddrInUse {
                CliError::AddressInUse(address)
            } else {
                CliError::Io {
                    path: PathBuf::from(address.to_string()),
                    source: e,
                }
            }
        })?;
        eprintln!("listening on {address}, data in {}", data_dir.display());
        axum::serve(listener, http::router(store))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(io_err(data_dir))
    })?;
    // Every event is flushed as it is appended, so nothing is pending here.
    Ok(())
}

fn import(data_dir: &Path, args: ImportArgs) -> Result<(), CliError> {
    let spec = ImportSpec {
        column_map: ColumnMap {
            participant: args.participant_col,
            statement: args.statement_col,
            vote: args.vote_col,
            text: args.text_col,
        },
        vote_encoding: VoteEncoding {
            agree_value: args.agree,
            disagree_value: args.disagree,
            pass_value: args.pass,
        },
        sign_flip: args.sign_flip,
    };
    let file = File::open(&args.file).map_err(io_err(&args.file))?;
    let config = ConversationConfig {
        prng_seed: args.seed,
        ..ConversationConfig::default()
    };
    let (events, summary) = import_votes(BufReader::new(file), &spec, config)?;
    let store = Store::open(data_dir)?;
    let id = store.load_events(None, events)?;
    println!(
        "{}",
        serde_json::json!({
            "conversation": id,
            "rows": summary.rows,
            "statements": summary.statements,
            "participants": summary.participants,
            "effective_votes": summary.effective_votes,
        })
    );
    Ok(())
}

fn analyze(data_dir: &Path, conversation: &str, out: &Path, exclude_passes: bool) -> Result<(), CliError> {
    let store = Store::open(data_dir)?;
    let snap = store.snapshot(conversation)?;
    let state = store.with(conversation, |c| Ok(c.shared_state()))?;
    let recomputed = match (&snap.groups, exclude_passes) {
        (Some(groups), true) => Some(
            compute_report(&state.build_vote_matrix(), groups, PassPolicy::ExcludeFromSeen)
                .map_err(|e| CliError::Service(ServiceError::InvalidRequest(e.to_string())))?,
        ),
        _ => None,
    };
    let report = recomputed.as_ref().or(snap.report.as_ref()).ok_or(CliError::LowData)?;
    fs::create_dir_all(out).map_err(io_err(out))?;
    write_file(
        &out.join("report.json"),
        &serde_json::to_string_pretty(report).expect("report serializes"),
    )?;
    write_file(&out.join("votes.csv"), &votes_csv(&state))?;
    write_file(
        &out.join("snapshot.json"),
        &serde_json::to_string_pretty(snap.as_ref()).expect("snapshot serializes"),
    )?;
    let threshold = snap.constitution_draft.as_ref().map(|c| c.effective_threshold);
    write_file(&out.join("gac_histogram.svg"), &gac_histogram(report, threshold))?;
    write_file(
        &out.join("polarization_histograms.svg"),
        &polarization_histograms(report),
    )?;
    for w in &snap.warnings {
        eprintln!("warning: {w}");
    }
    println!(
        "{}",
        serde_json::json!({
            "as_of_seq": snap.as_of_seq,
            "groups": snap.groups.as_ref().map(|g| g.k),
            "summary": report.summary,
            "effective_threshold": threshold,
        })
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn constitution(
    data_dir: &Path,
    conversation: &str,
    ledger: Option<&Path>,
    merges: Option<&Path>,
    overrides: Option<&Path>,
    budget: Option<usize>,
    out: &Path,
) -> Result<(), CliError> {
    let store = Store::open(data_dir)?;
    let snap = store.snapshot(conversation)?;
    let report = snap.report.as_ref().ok_or(CliError::LowData)?;
    let state = store.with(conversation, |c| Ok(c.shared_state()))?;
    let ledger = match ledger {
        Some(path) => {
            IdeaLedger::operator(read_json::<BTreeMap<StatementId, BTreeSet<String>>>(path)?)
        }
        None if !state.idea_tags().is_empty() => IdeaLedger::operator(state.idea_tags().clone()),
        None => IdeaLedger::default_for(report.gac_by_statement().into_keys()),
    };
    let merges: Vec<MergeRecord> = match merges {
        Some(path) => read_json(path)?,
        None => state.merges().to_vec(),
    };
    let overrides = match overrides {
        Some(path) => read_json(path)?,
        None => BTreeMap::new(),
    };
    let budget = budget.unwrap_or_else(|| state.config().map_or(95, |c| c.idea_budget));
    let c = build_constitution(&state, report, &ledger, &merges, &overrides, budget)?;
    fs::create_dir_all(out).map_err(io_err(out))?;
    write_file(&out.join("constitution.json"), &export_constitution(&c, ExportFormat::Json)?)?;
    write_file(
        &out.join("constitution.txt"),
        &export_constitution(&c, ExportFormat::PlainText)?,
    )?;
    println!(
        "{}",
        serde_json::json!({
            "principles": c.principles.len(),
            "effective_threshold": c.effective_threshold,
            "ideas_used": c.total_ideas_used,
            "idea_budget": c.idea_budget,
        })
    );
    Ok(())
}

fn elo(records: &Path, anchor: &str, resamples: usize, seed: u64, json: Option<&Path>) -> Result<(), CliError> {
    let file = File::open(records).map_err(io_err(records))?;
    let records = read_records_csv(BufReader::new(file))?;
    let report = elo_report(&records, anchor, resamples, seed)?;
    if let Some(path) = json {
        write_file(path, &serde_json::to_string_pretty(&report).expect("report serializes"))?;
    }
    print!("{}", report.to_table());
    Ok(())
}

fn synth(data_dir: &Path, params: SynthParams) -> Result<(), CliError> {
    let pop = generate(&params)?;
    let store = Store::open(data_dir)?;
    let id = store.load_events(None, pop.events)?;
    let snap = store.snapshot(&id)?;
    for w in &snap.warnings {
        eprintln!("warning: {w}");
    }
    println!(
        "{}",
        serde_json::json!({
            "conversation": id,
            "groups": snap.groups.as_ref().map(|g| g.k),
            "mean_silhouette": snap.groups.as_ref().map(|g| g.mean_silhouette),
        })
    );
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    let data_dir = cli.data_dir.as_path();
    match cli.command {
        Command::Serve { config } => serve(data_dir, config.as_deref()),
        Command::Import(args) => import(data_dir, args),
        Command::Analyze {
            conversation,
            out,
            exclude_passes,
        } => analyze(data_dir, &conversation, &out, exclude_passes),
        Command::Constitution {
            conversation,
            ledger,
            merges,
            overrides,
            budget,
            out,
        } => constitution(
            data_dir,
            &conversation,
            ledger.as_deref(),
            merges.as_deref(),
            overrides.as_deref(),
            budget,
            &out,
        ),
        Command::Elo {
            records,
            anchor,
            resamples,
            seed,
            json,
        } => elo(&records, &anchor, resamples, seed, json.as_deref()),
        Command::Synth {
            participants,
            statements,
            blocs,
            noise,
            seed,
        } => synth(
            data_dir,
            SynthParams {
                participants,
                statements,
                blocs,
                noise,
                seed,
            },
        ),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
