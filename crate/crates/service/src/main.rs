use std::ops::ControlFlow;
use std::path::PathBuf;
use std::sync::Arc;

use booktree::app::{AssignRequest, IngestRequest, PlanRequest, RunRequest};
use booktree::{router, App, AppError, Config};
use booktree_core::backend::{BackendKind, PolicyKind};
use booktree_core::curriculum::{draw_episodes, draw_nodes, write_samples, SampleRecord, Stage};
use booktree_core::feedback::{AssignmentKind, LabelFilter};
use booktree_core::{BookId, Criterion, LabelKindTag, NodeId, TreeId};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "booktree", version, about = "Recursive book summarization workbench")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true, env = "BOOKTREE_CONFIG")]
    config: Option<PathBuf>,
    /// Data directory (overrides the configuration).
    #[arg(long, global = true)]
    store: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum StageArg {
    FirstLeaves,
    FirstSubtree,
    FullTree,
}

impl From<StageArg> for Stage {
    fn from(s: StageArg) -> Self {
        match s {
            StageArg::FirstLeaves => Stage::FirstLeaves,
            StageArg::FirstSubtree => Stage::FirstSubtree,
            StageArg::FullTree => Stage::FullTree,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    BcSmall,
    BcLarge,
    Rl,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Remote,
    ExtractiveStub,
}

#[derive(Subcommand)]
enum Command {
    /// Store a plain-text book.
    Ingest {
        file: PathBuf,
        #[arg(long)]
        id: Option<String>,
        #[arg(long, default_value = "")]
        title: String,
    },
    /// Build the task tree of a stored book.
    Plan {
        book_id: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// JSON object of budget fields to override.
        #[arg(long)]
        budget: Option<String>,
    },
    /// Summarize a tree, resuming a matching interrupted run.
    Run {
        tree_id: String,
        #[arg(long, value_enum)]
        backend: Option<BackendArg>,
        #[arg(long, value_enum)]
        policy: Option<PolicyArg>,
        #[arg(long)]
        temperature: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Stop after this many newly executed nodes.
        #[arg(long)]
        max_nodes: Option<usize>,
    },
    /// Question-conditioned run; prints the root answer.
    Qa {
        tree_id: String,
        #[arg(long)]
        question: String,
        #[arg(long, value_enum)]
        backend: Option<BackendArg>,
        #[arg(long)]
        temperature: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Draw training samples (JSONL on stdout) or move the curriculum forward.
    Sample {
        tree_id: Option<String>,
        #[arg(long, value_enum)]
        stage: Option<StageArg>,
        /// Emit whole episodes instead of single nodes.
        #[arg(long)]
        episodes: bool,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Persist a new curriculum stage and exit.
        #[arg(long, value_enum)]
        advance_to: Option<StageArg>,
    },
    /// Issue labeling assignments for a tree.
    Assign {
        tree_id: String,
        #[arg(long)]
        kind: AssignmentKind,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long)]
        labeler: Option<String>,
        #[arg(long, value_enum)]
        stage: Option<StageArg>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Export labels as JSONL, to stdout or one file per kind and day.
    Export {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        kind: Option<LabelKindTag>,
        #[arg(long)]
        labeler: Option<String>,
        #[arg(long)]
        node: Option<String>,
    },
    /// Import a JSONL label file. Nothing is stored if any line is invalid.
    Import { file: PathBuf },
    /// Print a report as JSON.
    Report {
        #[command(subcommand)]
        report: ReportCommand,
    },
    /// Start the HTTP service.
    Serve {
        #[arg(long)]
        bind: Option<String>,
    },
}

#[derive(Subcommand)]
enum ReportCommand {
    Likert {
        #[arg(long, default_value = "overall")]
        criterion: String,
    },
    Agreement,
    HumanTime,
    Rouge {
        #[arg(long)]
        candidate_tree: String,
        #[arg(long)]
        reference: String,
        #[arg(long, default_value_t = 1)]
        depth: u32,
    },
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Config(#[from] booktree::ConfigError),
    #[error("{0}")]
    App(#[from] AppError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Usage(String),
}

fn print<T: Serialize>(v: &T) -> Result<(), CliError> {
    println!("{}", serde_json::to_string_pretty(v).map_err(std::io::Error::other)?);
    Ok(())
}

fn run_request(backend: Option<BackendArg>, policy: Option<PolicyArg>, temperature: Option<f64>, seed: u64) -> RunRequest {
    RunRequest {
        backend: backend.map(|b| match b {
            BackendArg::Remote => BackendKind::Remote,
            BackendArg::ExtractiveStub => BackendKind::ExtractiveStub,
        }),
        policy: policy.map(|p| match p {
            PolicyArg::BcSmall => PolicyKind::BcSmall,
            PolicyArg::BcLarge => PolicyKind::BcLarge,
            PolicyArg::Rl => PolicyKind::Rl,
        }),
        temperature,
        sample_seed: Some(seed),
        qa_question: None,
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let mut config = Config::load(cli.config.as_deref())?;
    if let Some(store) = cli.store {
        config.store = store;
    }
    if let Command::Serve { bind } = cli.command {
        if let Some(bind) = bind {
            config.bind = bind;
        }
        return serve(config);
    }
    let app = App::open(config)?;

    match cli.command {
        Command::Ingest { file, id, title } => {
            let text = std::fs::read_to_string(&file)?;
            print(&app.ingest(IngestRequest {
                id,
                title,
                text,
                source_meta: [("file".to_owned(), file.display().to_string())].into(),
            })?)
        }
        Command::Plan { book_id, seed, budget } => {
            let budget = budget
                .map(|b| serde_json::from_str(&b))
                .transpose()
                .map_err(|e| CliError::Usage(format!("--budget: {e}")))?;
            let tree = app.plan(PlanRequest {
                book_id: BookId::new(book_id),
                seed,
                budget,
            })?;
            let leaves = tree.leaves().len();
            print(&serde_json::json!({
                "tree_id": tree.id,
                "nodes": tree.nodes.len(),
                "leaves": leaves,
                "height": tree.height(),
            }))
        }
        Command::Run {
            tree_id,
            backend,
            policy,
            temperature,
            seed,
            max_nodes,
        } => {
            let req = run_request(backend, policy, temperature, seed);
            let params = app.run_params(&req)?;
            let backend = app.backend_config(req.backend);
            let run_id = App::run_id(&params);
            let mut executed = 0usize;
            let (state, outcome) = app.run_tree(&TreeId::new(tree_id), params, &backend, |s| {
                executed += 1;
                eprintln!("{} nodes summarized", s.entries.len());
                match max_nodes {
                    Some(max) if executed >= max => ControlFlow::Break(()),
                    _ => ControlFlow::Continue(()),
                }
            })?;
            print(&serde_json::json!({
                "run_id": run_id,
                "outcome": format!("{outcome:?}").to_lowercase(),
                "nodes_summarized": state.entries.len(),
                "backend_calls": state.backend_calls(),
            }))
        }
        Command::Qa {
            tree_id,
            question,
            backend,
            temperature,
            seed,
        } => {
            let mut req = run_request(backend, None, temperature, seed);
            req.qa_question = Some(question);
            let params = app.run_params(&req)?;
            let backend = app.backend_config(req.backend);
            let tree_id = TreeId::new(tree_id);
            let (state, _) = app.run_tree(&tree_id, params, &backend, |_| ControlFlow::Continue(()))?;
            let tree = app.workspace.tree(&tree_id).map_err(AppError::from)?;
            let answer = state.summary_of(&tree.root).map(|r| r.text.clone());
            print(&serde_json::json!({ "tree_id": tree_id, "answer": answer }))
        }
        Command::Sample {
            tree_id,
            stage,
            episodes,
            count,
            seed,
            advance_to,
        } => {
            if let Some(to) = advance_to {
                return print(&app.advance_stage(to.into())?);
            }
            let tree_id = tree_id.ok_or_else(|| CliError::Usage("a tree id is required".into()))?;
            let tree = app.workspace.tree(&TreeId::new(tree_id)).map_err(AppError::from)?;
            let stage = match stage {
                Some(s) => s.into(),
                None => app.sampler_state()?.stage,
            };
            let samples: Vec<SampleRecord> = if episodes {
                draw_episodes(&tree, stage, seed, count)
                    .map_err(AppError::from)?
                    .iter()
                    .map(|e| SampleRecord::from_episode(tree.id.clone(), e, seed))
                    .collect()
            } else {
                draw_nodes(&tree, stage, seed, count)
                    .into_iter()
                    .map(|n| SampleRecord::from_node(tree.id.clone(), stage, n, seed))
                    .collect()
            };
            write_samples(std::io::stdout().lock(), &samples)?;
            Ok(())
        }
        Command::Assign {
            tree_id,
            kind,
            count,
            labeler,
            stage,
            seed,
        } => {
            let issued = app.issue_assignments(AssignRequest {
                tree_id: TreeId::new(tree_id),
                stage: stage.map(Into::into),
                kind,
                count,
                labeler,
                seed,
            })?;
            print(&issued)
        }
        Command::Export {
            out,
            kind,
            labeler,
            node,
        } => {
            let filter = LabelFilter {
                node: node.map(NodeId::new),
                labeler,
                kind,
                ..Default::default()
            };
            match out {
                Some(dir) => {
                    std::fs::create_dir_all(&dir)?;
                    let files = app.feedback.export_to_dir(&dir, &filter).map_err(AppError::from)?;
                    print(&files)
                }
                None => {
                    print!("{}", app.feedback.export(&filter));
                    Ok(())
                }
            }
        }
        Command::Import { file } => {
            let text = std::fs::read_to_string(file)?;
            let report = app.feedback.import(&text, None).map_err(AppError::from)?;
            print(&report)
        }
        Command::Report { report } => match report {
            ReportCommand::Likert { criterion } => {
                let criterion: Criterion = serde_json::from_value(serde_json::Value::String(criterion))
                    .map_err(|e| CliError::Usage(format!("--criterion: {e}")))?;
                print(&app.likert_report(criterion)?)
            }
            ReportCommand::Agreement => print(&app.agreement_report()),
            ReportCommand::HumanTime => print(&app.human_time_report()),
            ReportCommand::Rouge {
                candidate_tree,
                reference,
                depth,
            } => print(&app.rouge_report(&TreeId::new(candidate_tree), &BookId::new(reference), depth)?),
        },
        Command::Serve { .. } => unreachable!("handled above"),
    }
}

fn serve(config: Config) -> Result<(), CliError> {
    let bind = config.bind.clone();
    let app = Arc::new(App::open(config)?);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&bind).await?;
        tracing::info!(%bind, "listening");
        axum::serve(listener, router(app))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
    })?;
    Ok(())
}

fn main() {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    if let Err(e) = execute(Cli::parse()) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
