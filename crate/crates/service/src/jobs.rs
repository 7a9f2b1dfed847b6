//! Background tree runs.

use std::collections::{HashMap, HashSet};
use std::sync::atomic::{AtomicU64, Ordering};

use booktree_core::TreeId;
use parking_lot::Mutex;
use serde::Serialize;

use crate::app::{AppError, ErrorCode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Running,
    Completed,
    Stopped,
    Failed,
}

#[derive(Debug, Clone, Serialize)]
pub struct JobError {
    pub code: ErrorCode,
    pub message: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct JobStatus {
    pub job_id: String,
    pub tree_id: TreeId,
    pub run_id: String,
    pub state: JobState,
    pub completed_nodes: usize,
    pub total_nodes: usize,
    pub backend_calls: usize,
    pub error: Option<JobError>,
}

#[derive(Default)]
pub struct JobRegistry {
    next: AtomicU64,
    jobs: Mutex<HashMap<String, JobStatus>>,
    active: Mutex<HashSet<TreeId>>,
}

impl JobRegistry {
    /// Registers a running job, or fails if the tree already has one.
    pub fn start(&self, tree_id: &TreeId, run_id: String, total_nodes: usize) -> Result<String, AppError> {
        if !self.active.lock().insert(tree_id.clone()) {
            return Err(AppError::conflict(format!("tree {tree_id} already has a running job")));
        }
        let job_id = format!("job-{:06}", self.next.fetch_add(1, Ordering::Relaxed) + 1);
        self.jobs.lock().insert(
            job_id.clone(),
            JobStatus {
                job_id: job_id.clone(),
                tree_id: tree_id.clone(),
                run_id,
                state: JobState::Running,
                completed_nodes: 0,
                total_nodes,
                backend_calls: 0,
                error: None,
            },
        );
        Ok(job_id)
    }

    pub fn progress(&self, job_id: &str, completed_nodes: usize, backend_calls: usize) {
        if let Some(j) = self.jobs.lock().get_mut(job_id) {
            j.completed_nodes = completed_nodes;
            j.backend_calls = backend_calls;
        }
    }

    pub fn finish(&self, job_id: &str, result: Result<JobState, AppError>) {
        let mut jobs = self.jobs.lock();
        let Some(j) = jobs.get_mut(job_id) else { return };
        match result {
            Ok(state) => j.state = state,
            Err(e) => {
                j.state = JobState::Failed;
                j.error = Some(JobError {
                    code: e.code,
                    message: e.message,
                });
            }
        }
        self.active.lock().remove(&j.tree_id);
    }

    pub fn get(&self, job_id: &str) -> Option<JobStatus> {
        self.jobs.lock().get(job_id).cloned()
    }
}
