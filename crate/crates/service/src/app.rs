//! Operations shared by the CLI and the HTTP routes.

use std::collections::{BTreeMap, HashMap};
use std::ops::ControlFlow;
use std::sync::Arc;

use booktree_core::backend::{build_backend, BackendConfig, BackendError, BackendKind, PolicyKind};
use booktree_core::curriculum::{draw_nodes, CurriculumError, SamplerState, Stage};
use booktree_core::engine::{
    collect_depth_summaries, trace_provenance, Executor, Provenance, RunError, RunOutcome, RunParams,
    RunState,
};
use booktree_core::eval::{agreement_rate, likert_aggregate, rouge_l, rouge_n, LikertAggregate, RougeScore};
use booktree_core::feedback::{
    human_time_report, Assignment, AssignmentKind, FeedbackError, FeedbackStore, HumanTimeReport,
    LabelFilter, NewAssignment,
};
use booktree_core::segment::{plan_tree, PlanError};
use booktree_core::workspace::{run_id, Workspace, WorkspaceError};
use booktree_core::{
    tokenizer_by_name, validate_tree, AssignmentId, BookDocument, BookId, Clock, Criterion, LabelId,
    LabelKind, LabelKindTag, LabelRecord, NodeId, SummaryRecord, SystemClock, TaskNode, TaskTree,
    TokenizerHandle, TreeId,
};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::Config;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    NotFound,
    Conflict,
    Validation,
    BackendUnavailable,
    Unauthorized,
    Internal,
}

#[derive(Debug, thiserror::Error)]
#[error("{message}")]
pub struct AppError {
    pub code: ErrorCode,
    pub message: String,
    pub details: Option<serde_json::Value>,
}

impl AppError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
            details: None,
        }
    }

    pub fn not_found(m: impl Into<String>) -> Self {
        Self::new(ErrorCode::NotFound, m)
    }

    pub fn conflict(m: impl Into<String>) -> Self {
        Self::new(ErrorCode::Conflict, m)
    }

    pub fn validation(m: impl Into<String>) -> Self {
        Self::new(ErrorCode::Validation, m)
    }

    pub fn internal(m: impl Into<String>) -> Self {
        Self::new(ErrorCode::Internal, m)
    }
}

impl From<WorkspaceError> for AppError {
    fn from(e: WorkspaceError) -> Self {
        let code = match e {
            WorkspaceError::NotFound(_) => ErrorCode::NotFound,
            WorkspaceError::Exists(_) => ErrorCode::Conflict,
            WorkspaceError::BadId(_) => ErrorCode::Validation,
            _ => ErrorCode::Internal,
        };
        Self::new(code, e.to_string())
    }
}

impl From<FeedbackError> for AppError {
    fn from(e: FeedbackError) -> Self {
        match e {
            FeedbackError::NotFound(_) => Self::new(ErrorCode::NotFound, e.to_string()),
            FeedbackError::Conflict(_) => Self::new(ErrorCode::Conflict, e.to_string()),
            FeedbackError::Validation(_) => Self::new(ErrorCode::Validation, e.to_string()),
            FeedbackError::Import(ref lines) => Self {
                code: ErrorCode::Validation,
                details: serde_json::to_value(lines).ok(),
                message: e.to_string(),
            },
            _ => Self::new(ErrorCode::Internal, e.to_string()),
        }
    }
}

impl From<PlanError> for AppError {
    fn from(e: PlanError) -> Self {
        Self::validation(e.to_string())
    }
}

impl From<CurriculumError> for AppError {
    fn from(e: CurriculumError) -> Self {
        match e {
            CurriculumError::State(_) => Self::internal(e.to_string()),
            _ => Self::validation(e.to_string()),
        }
    }
}

impl From<RunError> for AppError {
    fn from(e: RunError) -> Self {
        let code = match &e {
            RunError::Backend {
                source: BackendError::InvalidRequest(_),
                ..
            } => ErrorCode::Validation,
            RunError::Backend { .. } => ErrorCode::BackendUnavailable,
            RunError::EmptyQuestion | RunError::WrongBook { .. } | RunError::InvalidTree(_) => {
                ErrorCode::Validation
            }
            _ => ErrorCode::Internal,
        };
        Self::new(code, e.to_string())
    }
}

impl From<BackendError> for AppError {
    fn from(e: BackendError) -> Self {
        Self::new(ErrorCode::BackendUnavailable, e.to_string())
    }
}

pub type AppResult<T> = Result<T, AppError>;

#[derive(Debug, Clone, Deserialize)]
pub struct IngestRequest {
    #[serde(default)]
    pub id: Option<String>,
    #[serde(default)]
    pub title: String,
    pub text: String,
    #[serde(default)]
    pub source_meta: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct IngestResult {
    pub book_id: BookId,
    pub created: bool,
    pub bytes: usize,
}

#[derive(Debug, Clone, Deserialize)]
pub struct PlanRequest {
    pub book_id: BookId,
    #[serde(default)]
    pub seed: u64,
    /// Fields merged over the configured budget.
    #[serde(default)]
    pub budget: Option<serde_json::Value>,
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct RunRequest {
    #[serde(default)]
    pub backend: Option<BackendKind>,
    #[serde(default)]
    pub policy: Option<PolicyKind>,
    #[serde(default)]
    pub temperature: Option<f64>,
    #[serde(default)]
    pub sample_seed: Option<u64>,
    #[serde(default)]
    pub qa_question: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct AssignRequest {
    pub tree_id: TreeId,
    #[serde(default)]
    pub stage: Option<Stage>,
    pub kind: AssignmentKind,
    #[serde(default = "one")]
    pub count: usize,
    #[serde(default)]
    pub labeler: Option<String>,
    #[serde(default)]
    pub seed: Option<u64>,
}

fn one() -> usize {
    1
}

/// Everything a labeling client needs to render one assignment.
#[derive(Debug, Clone, Serialize)]
pub struct AssignmentPayload {
    pub assignment: Assignment,
    pub node: TaskNode,
    pub previous_context: Vec<String>,
    pub input_text: String,
    pub question: Option<String>,
    pub candidates: Vec<SummaryRecord>,
    pub token_limit: usize,
    pub criteria: Vec<Criterion>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct SubmitRequest {
    pub assignment_id: AssignmentId,
    #[serde(default)]
    pub record: Option<LabelRecord>,
    #[serde(default)]
    pub records: Option<Vec<LabelRecord>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct LikertReport {
    pub criterion: Criterion,
    pub ratings: usize,
    /// Ratings whose node belongs to no known tree.
    pub unmapped: usize,
    pub aggregate: Option<LikertAggregate>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AgreementReport {
    pub rate: Option<f64>,
    pub comparisons: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct RougeReport {
    pub candidate_tree: TreeId,
    pub reference: BookId,
    pub depth: u32,
    pub rouge_1: RougeScore,
    pub rouge_2: RougeScore,
    pub rouge_l: RougeScore,
}

#[derive(Debug, Clone, Serialize)]
pub struct NodeView {
    pub node: TaskNode,
    pub summaries: Vec<SummaryRecord>,
}

pub struct App {
    pub config: Config,
    pub workspace: Workspace,
    pub feedback: FeedbackStore,
    pub tokenizer: TokenizerHandle,
    pub clock: Arc<dyn Clock>,
    sampler_lock: Mutex<()>,
}

fn hex16(bytes: &[u8]) -> String {
    bytes.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

impl App {
    pub fn open(config: Config) -> AppResult<Self> {
        Self::open_with_clock(config, Arc::new(SystemClock))
    }

    pub fn open_with_clock(config: Config, clock: Arc<dyn Clock>) -> AppResult<Self> {
        let tokenizer = tokenizer_by_name(&config.tokenizer).map_err(|e| AppError::validation(e.to_string()))?;
        let workspace = Workspace::open(&config.store)?;
        let feedback = FeedbackStore::open(workspace.feedback_dir(), tokenizer.clone(), clock.clone())?;
        Ok(Self {
            config,
            workspace,
            feedback,
            tokenizer,
            clock,
            sampler_lock: Mutex::new(()),
        })
    }

    pub fn ingest(&self, req: IngestRequest) -> AppResult<IngestResult> {
        if req.text.trim().is_empty() {
            return Err(AppError::validation("book text is empty"));
        }
        let id = match req.id {
            Some(id) => id,
            None => {
                let digest = Sha256::digest(req.text.as_bytes());
                format!("book-{}", hex16(&digest))
            }
        };
        let title = if req.title.is_empty() { id.clone() } else { req.title };
        let book = BookDocument::new(id, title, &req.text, req.source_meta);
        let created = self.workspace.put_book(&book)?;
        Ok(IngestResult {
            bytes: book.text.len(),
            book_id: book.id,
            created,
        })
    }

    pub fn plan(&self, req: PlanRequest) -> AppResult<TaskTree> {
        let book = self.workspace.book(&req.book_id)?;
        let budget = match req.budget {
            None => self.config.budget.clone(),
            Some(overrides) => {
                let mut base = serde_json::to_value(&self.config.budget).map_err(|e| AppError::internal(e.to_string()))?;
                let (Some(base_map), serde_json::Value::Object(over)) = (base.as_object_mut(), overrides) else {
                    return Err(AppError::validation("budget overrides must be an object"));
                };
                for (k, v) in over {
                    if !base_map.contains_key(&k) {
                        return Err(AppError::validation(format!("unknown budget field `{k}`")));
                    }
                    base_map.insert(k, v);
                }
                serde_json::from_value(base).map_err(|e| AppError::validation(format!("budget: {e}")))?
            }
        };
        let tree = plan_tree(&book, &budget, self.tokenizer.as_ref(), req.seed)?;
        let violations = validate_tree(&tree, &book);
        if !violations.is_empty() {
            return Err(AppError::internal(format!(
                "planner produced an invalid tree: {}",
                violations.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
            )));
        }
        self.workspace.put_tree(&tree)?;
        Ok(tree)
    }

    pub fn run_params(&self, req: &RunRequest) -> AppResult<RunParams> {
        let temperature = match (req.temperature, req.policy) {
            (Some(t), _) => t,
            (None, Some(p)) => self.config.temperatures.for_policy(p),
            (None, None) => self.config.temperatures.for_policy(PolicyKind::Rl),
        };
        if !(0.0..=2.0).contains(&temperature) {
            return Err(AppError::validation(format!("temperature {temperature} is outside [0, 2]")));
        }
        if let Some(q) = &req.qa_question {
            if q.trim().is_empty() {
                return Err(AppError::validation("question must not be empty"));
            }
        }
        Ok(RunParams {
            temperature,
            sample_seed: req.sample_seed.unwrap_or(0),
            question: req.qa_question.clone(),
        })
    }

    pub fn backend_config(&self, kind: Option<BackendKind>) -> BackendConfig {
        let mut cfg = self.config.backend.clone();
        if let Some(kind) = kind {
            cfg.kind = kind;
        }
        cfg
    }

    /// Runs (or resumes) a tree. `after_node` sees the state after every
    /// executed node and may stop the run.
    pub fn run_tree(
        &self,
        tree_id: &TreeId,
        params: RunParams,
        backend: &BackendConfig,
        mut after_node: impl FnMut(&RunState) -> ControlFlow<()>,
    ) -> AppResult<(RunState, RunOutcome)> {
        let tree = self.workspace.tree(tree_id)?;
        let book = self.workspace.book(&tree.book_id)?;
        let backend = build_backend(backend, self.tokenizer.clone())?;
        let checkpoint = self.workspace.checkpoint(tree_id, &params)?;
        let mut state = if checkpoint.exists() {
            checkpoint.load()?
        } else {
            let state = RunState::new(tree.id.clone(), params.clone());
            checkpoint.write_all(&state)?;
            state
        };
        if state.is_complete(&tree) {
            return Ok((state, RunOutcome::Completed));
        }
        let executor = Executor::new(&tree, &book, backend.as_ref(), self.tokenizer.as_ref(), self.clock.as_ref())?;
        let mut write_error = None;
        let outcome = executor.run(&mut state, |s| {
            if let Err(e) = checkpoint.append_last(s) {
                write_error = Some(e);
                return ControlFlow::Break(());
            }
            after_node(s)
        })?;
        if let Some(e) = write_error {
            return Err(e.into());
        }
        Ok((state, outcome))
    }

    pub fn run_id(params: &RunParams) -> String {
        run_id(params)
    }

    /// The complete run that finished last, else the most advanced partial run.
    pub fn best_run(&self, tree: &TaskTree) -> AppResult<Option<RunState>> {
        if let Some(run) = self.workspace.latest_complete_run(tree)? {
            return Ok(Some(run));
        }
        Ok(self
            .workspace
            .runs(&tree.id)?
            .into_iter()
            .max_by_key(|r| r.entries.len()))
    }

    pub fn tree_view(&self, tree_id: &TreeId) -> AppResult<TaskTree> {
        let tree = self.workspace.tree(tree_id)?;
        Ok(match self.best_run(&tree)? {
            Some(run) => run.apply_to(&tree),
            None => tree,
        })
    }

    pub fn node_view(&self, tree_id: &TreeId, node_id: &NodeId) -> AppResult<NodeView> {
        let tree = self.workspace.tree(tree_id)?;
        let node = tree
            .node(node_id)
            .cloned()
            .ok_or_else(|| AppError::not_found(format!("node {node_id}")))?;
        let summaries = self.workspace.node_summaries(tree_id, node_id)?;
        Ok(NodeView { node, summaries })
    }

    pub fn provenance(&self, tree_id: &TreeId, node_id: &NodeId) -> AppResult<Provenance> {
        let tree = self.workspace.tree(tree_id)?;
        let summaries = self
            .best_run(&tree)?
            .map(|r| r.summaries())
            .unwrap_or_default();
        trace_provenance(&tree, &summaries, node_id).map_err(|e| AppError::not_found(e.to_string()))
    }

    pub fn sampler_state(&self) -> AppResult<SamplerState> {
        Ok(SamplerState::load(&self.workspace.sampler_path())?.unwrap_or_else(|| SamplerState::new(0)))
    }

    pub fn advance_stage(&self, to: Stage) -> AppResult<SamplerState> {
        let _guard = self.sampler_lock.lock();
        let mut state = self.sampler_state()?;
        state.advance(to)?;
        state.save(&self.workspace.sampler_path())?;
        Ok(state)
    }

    pub fn issue_assignments(&self, req: AssignRequest) -> AppResult<Vec<Assignment>> {
        if req.count == 0 || req.count > 1000 {
            return Err(AppError::validation("count must be between 1 and 1000"));
        }
        let tree = self.workspace.tree(&req.tree_id)?;
        let sampler = self.sampler_state()?;
        let stage = req.stage.unwrap_or(sampler.stage);
        let seed = req.seed.unwrap_or_else(|| {
            let mut h = Sha256::new();
            h.update(sampler.rng_seed.to_le_bytes());
            h.update((self.feedback.assignments().len() as u64).to_le_bytes());
            u64::from_le_bytes(h.finalize()[..8].try_into().expect("32-byte digest"))
        });
        let summaries = self.workspace.summaries(&tree.id)?;
        let mut by_node: HashMap<&NodeId, Vec<&SummaryRecord>> = HashMap::new();
        for s in summaries.values() {
            by_node.entry(&s.node_id).or_default().push(s);
        }

        let mut issued = Vec::new();
        let attempts = req.count * 20;
        for (i, node_id) in draw_nodes(&tree, stage, seed, attempts).into_iter().enumerate() {
            if issued.len() == req.count {
                break;
            }
            let node = &tree.nodes[&node_id];
            let available = by_node.get(&node_id).map(Vec::as_slice).unwrap_or(&[]);
            let candidates = match req.kind {
                AssignmentKind::Demonstration => Vec::new(),
                AssignmentKind::ComparisonSet if available.len() >= 2 => {
                    available.iter().take(3).map(|s| s.id.clone()).collect()
                }
                AssignmentKind::Likert if !available.is_empty() => {
                    vec![available[i % available.len()].id.clone()]
                }
                _ => continue,
            };
            let a = self.feedback.issue(NewAssignment {
                tree_id: tree.id.clone(),
                node_id,
                kind: req.kind,
                candidates,
                token_limit: tree.budget.summary_limit(node.height),
                seed: seed.wrapping_add(i as u64),
                labeler: req.labeler.clone(),
                contamination: false,
            })?;
            issued.push(a);
        }
        if issued.is_empty() {
            return Err(AppError::validation(format!(
                "no node sampled at stage {stage:?} has enough summaries for a {:?} assignment; run the tree first",
                req.kind
            )));
        }
        Ok(issued)
    }

    pub fn next_assignment(&self, labeler: &str) -> AppResult<Option<AssignmentPayload>> {
        if labeler.trim().is_empty() {
            return Err(AppError::validation("labeler must not be empty"));
        }
        let Some(assignment) = self.feedback.next_for(labeler)? else {
            return Ok(None);
        };
        self.payload(assignment).map(Some)
    }

    pub fn payload(&self, assignment: Assignment) -> AppResult<AssignmentPayload> {
        let tree = self.workspace.tree(&assignment.tree_id)?;
        let node = tree
            .node(&assignment.node_id)
            .cloned()
            .ok_or_else(|| AppError::not_found(format!("node {}", assignment.node_id)))?;
        let runs = self.workspace.runs(&tree.id)?;
        let summaries: BTreeMap<_, _> = runs
            .iter()
            .flat_map(|r| r.records())
            .map(|r| (r.id.clone(), r.clone()))
            .collect();
        let candidates = assignment
            .candidate_summaries
            .iter()
            .filter_map(|id| summaries.get(id).cloned())
            .collect();
        // prefer the run that produced the first candidate, else any run that reached the node
        let entry = assignment
            .candidate_summaries
            .first()
            .and_then(|c| {
                runs.iter()
                    .flat_map(|r| &r.entries)
                    .find(|e| &e.record.id == c)
            })
            .or_else(|| runs.iter().flat_map(|r| &r.entries).find(|e| e.node_id == node.id));
        let question = entry.and_then(|_| {
            runs.iter()
                .find(|r| r.entries.iter().any(|e| e.node_id == node.id))
                .and_then(|r| r.params.question.clone())
        });
        let (input_text, previous_context) = match entry {
            Some(e) => (e.input_text.clone(), e.previous_context.clone()),
            None => {
                let input = match node.char_span {
                    Some([s, e]) => self.workspace.book(&tree.book_id)?.text[s..e].to_owned(),
                    None => String::new(),
                };
                (input, Vec::new())
            }
        };
        Ok(AssignmentPayload {
            token_limit: assignment.token_limit,
            assignment,
            node,
            previous_context,
            input_text,
            question,
            candidates,
            criteria: Criterion::ALL.to_vec(),
        })
    }

    pub fn submit(&self, req: SubmitRequest) -> AppResult<Vec<LabelId>> {
        let mut records = req.records.unwrap_or_default();
        records.extend(req.record);
        Ok(self.feedback.submit(&req.assignment_id, records)?)
    }

    fn node_books(&self) -> AppResult<HashMap<NodeId, BookId>> {
        let mut out = HashMap::new();
        for id in self.workspace.tree_ids()? {
            let tree = self.workspace.tree(&id)?;
            for node in tree.nodes.keys() {
                out.insert(node.clone(), tree.book_id.clone());
            }
        }
        Ok(out)
    }

    pub fn likert_report(&self, criterion: Criterion) -> AppResult<LikertReport> {
        let books = self.node_books()?;
        let labels = self.feedback.labels(&LabelFilter {
            kind: Some(LabelKindTag::Likert),
            ..Default::default()
        });
        let mut ratings = Vec::new();
        let mut unmapped = 0;
        for l in &labels {
            let LabelKind::Likert { scores, .. } = &l.record.kind else { continue };
            let Some(score) = scores.get(&criterion) else { continue };
            match books.get(&l.record.node_id) {
                Some(book) => ratings.push((book.clone(), f64::from(*score))),
                None => unmapped += 1,
            }
        }
        Ok(LikertReport {
            criterion,
            ratings: ratings.len(),
            unmapped,
            aggregate: likert_aggregate(&ratings).ok(),
        })
    }

    pub fn agreement_report(&self) -> AgreementReport {
        let labels = self.feedback.labels(&LabelFilter {
            kind: Some(LabelKindTag::Comparison),
            ..Default::default()
        });
        AgreementReport {
            rate: agreement_rate(labels.iter().map(|l| &l.record)),
            comparisons: labels.len(),
        }
    }

    pub fn human_time_report(&self) -> HumanTimeReport {
        let labels = self.feedback.labels(&LabelFilter::default());
        human_time_report(labels.iter().map(|l| &l.record), &self.config.time_model)
    }

    pub fn rouge_report(&self, candidate_tree: &TreeId, reference: &BookId, depth: u32) -> AppResult<RougeReport> {
        let tree = self.workspace.tree(candidate_tree)?;
        let run = self
            .workspace
            .latest_complete_run(&tree)?
            .ok_or_else(|| AppError::conflict(format!("tree {candidate_tree} has no complete run")))?;
        let candidate = collect_depth_summaries(&tree, &run.summaries(), depth)
            .map_err(|e| AppError::validation(e.to_string()))?;
        let reference_text = self.workspace.book(reference)?.text;
        let n = |k| rouge_n(&candidate, &reference_text, k).map_err(|e| AppError::validation(e.to_string()));
        Ok(RougeReport {
            candidate_tree: candidate_tree.clone(),
            reference: reference.clone(),
            depth,
            rouge_1: n(1)?,
            rouge_2: n(2)?,
            rouge_l: rouge_l(&candidate, &reference_text),
        })
    }
}
