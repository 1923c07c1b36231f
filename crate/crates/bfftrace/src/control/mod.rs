//! Run orchestration: configure, fuzz through the proxies, aggregate, persist.

pub mod api;

use std::collections::HashMap;
use std::net::{Ipv4Addr, SocketAddr, ToSocketAddrs};
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use bfftrace_core::api_model::{infer_dependencies, parse_spec, ApiModel, SpecFormat};
use bfftrace_core::capture::{ingest_log, CaptureLog};
use bfftrace_core::classify::PatternSet;
use bfftrace_core::correlate::TraceMap;
use bfftrace_core::fuzz::{generate_sequences, MutationDictionary, SequenceGenerator, SequenceResult};
use bfftrace_core::report::{build_graph, render_error_report, ErrorReport, GraphModel};
use bfftrace_core::run::{aggregate, AggregateInput, RunConfig, RunMode, RunRecord, RunState};
use bfftrace_core::Endpoint;
use serde::{Deserialize, Serialize};
use tokio::net::TcpStream;

use crate::clock::now_millis;
use crate::executor::Executor;
use crate::proxy::{start_proxy, CaptureSink, ProxyError, ProxyHandle};
use crate::store::{new_run_id, RunFilter, RunStore, RunSummary, StoreError};

const REACH_TIMEOUT: Duration = Duration::from_secs(3);
pub const CAPTURE_FILE: &str = "capture.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Configuring,
    Fuzzing,
    Aggregating,
    Done,
    Failed,
}

impl Phase {
    pub fn is_terminal(self) -> bool {
        matches!(self, Phase::Done | Phase::Failed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub done: u64,
    /// `None` when only a time budget applies.
    pub budget: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunStatus {
    pub run_id: String,
    pub phase: Phase,
    pub progress: Progress,
    #[serde(default)]
    pub last_error: Option<String>,
}

impl RunStatus {
    fn advance(&mut self, phase: Phase) {
        debug_assert!(
            phase == Phase::Failed || (!self.phase.is_terminal() && phase >= self.phase),
            "{:?} -> {phase:?}",
            self.phase
        );
        self.phase = phase;
    }

    fn from_record(r: &RunRecord) -> Self {
        let done = r.sequences.len() as u64;
        let (phase, last_error) = match r.status {
            RunState::Completed => (Phase::Done, None),
            RunState::Aborted => (Phase::Failed, r.error.clone()),
            RunState::Running => (Phase::Failed, Some("run was interrupted".to_string())),
        };
        Self {
            run_id: r.run_id.clone(),
            phase,
            progress: Progress {
                done,
                budget: Some(done),
            },
            last_error,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ControlError {
    #[error("{0}")]
    InvalidConfig(String),
    #[error("{0}")]
    PortConflict(String),
    #[error("{0}")]
    TargetUnreachable(String),
    #[error("a live-proxy run is already active")]
    Busy,
    #[error("{0} not found")]
    NotFound(String),
    #[error("run {0} has no results yet")]
    NotReady(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

impl ControlError {
    pub fn code(&self) -> &'static str {
        match self {
            ControlError::InvalidConfig(_) => "InvalidConfig",
            ControlError::PortConflict(_) => "PortConflict",
            ControlError::TargetUnreachable(_) => "TargetUnreachable",
            ControlError::Busy => "Busy",
            ControlError::NotFound(_) => "NotFound",
            ControlError::NotReady(_) => "NotReady",
            ControlError::Store(StoreError::NotFound(_)) => "NotFound",
            ControlError::Store(StoreError::CorruptRecord { .. }) => "CorruptRecord",
            ControlError::Store(StoreError::StorageFull) => "StorageFull",
            ControlError::Store(_) => "StoreError",
        }
    }
}

fn invalid(what: &str, path: &Path, e: impl std::fmt::Display) -> ControlError {
    ControlError::InvalidConfig(format!("{what} {}: {e}", path.display()))
}

/// Loads a run config from JSON or YAML (chosen by extension, JSON first otherwise).
pub fn load_config(path: &Path) -> Result<RunConfig, ControlError> {
    let text = std::fs::read_to_string(path).map_err(|e| invalid("cannot read config", path, e))?;
    let yaml = matches!(path.extension().and_then(|e| e.to_str()), Some("yaml" | "yml"));
    if yaml {
        serde_yaml::from_str(&text).map_err(|e| invalid("invalid config", path, e))
    } else {
        serde_json::from_str(&text)
            .or_else(|_| serde_yaml::from_str(&text))
            .map_err(|e| invalid("invalid config", path, e))
    }
}

fn load_model(config: &RunConfig) -> Result<ApiModel, ControlError> {
    let Some(path) = &config.spec_path else {
        return Ok(ApiModel::empty());
    };
    let bytes = std::fs::read(path).map_err(|e| invalid("cannot read spec", path, e))?;
    parse_spec(&bytes, SpecFormat::from_path(&path.to_string_lossy())).map_err(|e| invalid("invalid spec", path, e))
}

fn load_patterns(config: &RunConfig) -> Result<PatternSet, ControlError> {
    let Some(path) = &config.patterns_path else {
        return Ok(PatternSet::builtin());
    };
    let text = std::fs::read_to_string(path).map_err(|e| invalid("cannot read patterns", path, e))?;
    PatternSet::with_jsonl(&text).map_err(|e| invalid("invalid patterns", path, e))
}

fn resolve(ep: &Endpoint) -> Result<SocketAddr, ControlError> {
    (ep.host.as_str(), ep.port)
        .to_socket_addrs()
        .ok()
        .and_then(|mut a| a.next())
        .ok_or_else(|| ControlError::InvalidConfig(format!("cannot resolve {ep}")))
}

struct Prepared {
    model: ApiModel,
    patterns: PatternSet,
}

struct LiveRun {
    generator: SequenceGenerator,
    executor: Executor,
    proxies: Vec<ProxyHandle>,
    sink: CaptureSink,
    budget_seconds: Option<u64>,
}

struct Inner {
    store: RunStore,
    statuses: Mutex<HashMap<String, RunStatus>>,
    live_active: AtomicBool,
}

/// Starts runs and answers queries about them. Cloning shares state.
#[derive(Clone)]
pub struct Controller {
    inner: Arc<Inner>,
}

/// Clears the live-run flag when the run ends, however it ends.
struct LiveGuard(Arc<Inner>);

impl Drop for LiveGuard {
    fn drop(&mut self) {
        self.0.live_active.store(false, Ordering::SeqCst);
    }
}

impl Controller {
    pub fn new(store: RunStore) -> Self {
        Self {
            inner: Arc::new(Inner {
                store,
                statuses: Mutex::new(HashMap::new()),
                live_active: AtomicBool::new(false),
            }),
        }
    }

    pub fn store(&self) -> &RunStore {
        &self.inner.store
    }

    fn update(&self, run_id: &str, f: impl FnOnce(&mut RunStatus)) {
        let mut map = self.inner.statuses.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(s) = map.get_mut(run_id) {
            f(s);
        }
    }

    /// Validates and prepares the run, then continues in the background.
    pub async fn start_run(&self, mut config: RunConfig) -> Result<String, ControlError> {
        config
            .validate()
            .map_err(|e| ControlError::InvalidConfig(e.to_string()))?;
        let run_id = new_run_id();
        let prepared = Prepared {
            model: load_model(&config)?,
            patterns: load_patterns(&config)?,
        };

        let budget = match config.mode {
            RunMode::LiveProxy => config.fuzz.budget_sequences,
            RunMode::IngestOnly => Some(0),
        };
        let status = RunStatus {
            run_id: run_id.clone(),
            phase: Phase::Configuring,
            progress: Progress { done: 0, budget },
            last_error: None,
        };

        match config.mode {
            RunMode::IngestOnly => {
                let source = config.ingest.clone().expect("validated");
                let ingested = ingest_log(&source.log_path, source.dialect)
                    .map_err(|e| invalid("cannot ingest", &source.log_path, e))?;
                let record = RunRecord::running(&run_id, now_millis(), config);
                self.inner.store.save_run(&record)?;
                self.register(status);
                let this = self.clone();
                tokio::spawn(async move {
                    this.finish(record, &prepared, vec![ingested.log], Vec::new());
                });
            }
            RunMode::LiveProxy => {
                if self
                    .inner
                    .live_active
                    .compare_exchange(false, true, Ordering::SeqCst, Ordering::SeqCst)
                    .is_err()
                {
                    return Err(ControlError::Busy);
                }
                let guard = LiveGuard(self.inner.clone());
                let live = self.prepare_live(&run_id, &mut config, &prepared.model).await?;
                let record = RunRecord::running(&run_id, now_millis(), config);
                if let Err(e) = self.inner.store.save_run(&record) {
                    let _ = stop_all(live.proxies).await;
                    return Err(e.into());
                }
                self.register(status);
                let this = self.clone();
                tokio::spawn(async move {
                    let _guard = guard;
                    this.fuzz(record, prepared, live).await;
                });
            }
        }
        Ok(run_id)
    }

    fn register(&self, status: RunStatus) {
        self.inner
            .statuses
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .insert(status.run_id.clone(), status);
    }

    async fn prepare_live(&self, run_id: &str, config: &mut RunConfig, model: &ApiModel) -> Result<LiveRun, ControlError> {
        let deps = infer_dependencies(model);
        let mut generator = generate_sequences(model, &deps, &config.fuzz, config.fuzz.seed)
            .map_err(|e| ControlError::InvalidConfig(e.to_string()))?;
        if let Some(path) = &config.fuzz.dictionary_path {
            let bytes = std::fs::read(path).map_err(|e| invalid("cannot read dictionary", path, e))?;
            let dict = MutationDictionary::from_json(&bytes).map_err(|e| invalid("invalid dictionary", path, e))?;
            generator = generator.with_dictionary(dict);
        }

        let bff = config.bff.clone().expect("validated");
        let bff_addr = resolve(&bff)?;
        match tokio::time::timeout(REACH_TIMEOUT, TcpStream::connect(bff_addr)).await {
            Ok(Ok(_)) => {}
            Ok(Err(e)) => return Err(ControlError::TargetUnreachable(format!("BFF {bff}: {e}"))),
            Err(_) => return Err(ControlError::TargetUnreachable(format!("BFF {bff}: no answer"))),
        }

        let run_dir = self.inner.store.run_dir(run_id);
        std::fs::create_dir_all(&run_dir).map_err(StoreError::from)?;
        let sink = CaptureSink::with_file(run_id, &run_dir.join(CAPTURE_FILE)).map_err(StoreError::from)?;

        let mut routes = Vec::with_capacity(1 + config.backend_proxies.len());
        let bff_listen = match &config.bff_proxy {
            Some(ep) => resolve(ep)?,
            None => SocketAddr::from((Ipv4Addr::LOCALHOST, 0)),
        };
        routes.push((bff_listen, bff.clone()));
        for r in &config.backend_proxies {
            routes.push((resolve(&r.listen)?, r.upstream.clone()));
        }
        let mut proxies: Vec<ProxyHandle> = Vec::with_capacity(routes.len());
        for (listen, upstream) in routes {
            match start_proxy(listen, upstream, sink.clone()).await {
                Ok(p) => proxies.push(p),
                Err(e) => {
                    let _ = stop_all(proxies).await;
                    return Err(match e {
                        ProxyError::BindFailed { .. } => ControlError::PortConflict(e.to_string()),
                        other => ControlError::InvalidConfig(other.to_string()),
                    });
                }
            }
        }
        let front: Endpoint = proxies[0].local_addr().into();
        config.bff_proxy = Some(front.clone());

        let executor = Executor::new(
            &front,
            &model.base_url,
            Duration::from_millis(config.fuzz.quiescence_ms),
            config.fuzz.static_headers.iter().map(|(k, v)| (k.as_str(), v.as_str())),
        )
        .map_err(|e| ControlError::InvalidConfig(e.to_string()))?;
        Ok(LiveRun {
            generator,
            executor,
            proxies,
            sink,
            budget_seconds: config.fuzz.budget_seconds,
        })
    }

    async fn fuzz(&self, record: RunRecord, prepared: Prepared, live: LiveRun) {
        let run_id = record.run_id.clone();
        self.update(&run_id, |s| s.advance(Phase::Fuzzing));
        let started = Instant::now();
        let deadline = live.budget_seconds.map(Duration::from_secs);
        let mut results: Vec<SequenceResult> = Vec::new();
        let mut unreachable = None;
        for seq in live.generator {
            if deadline.is_some_and(|d| started.elapsed() >= d) {
                break;
            }
            let result = live.executor.execute_sequence(&prepared.model, seq).await;
            let lost = result
                .aborted
                .as_deref()
                .filter(|r| r.starts_with("target unreachable"))
                .map(str::to_string);
            results.push(result);
            self.update(&run_id, |s| s.progress.done += 1);
            if lost.is_some() {
                unreachable = lost;
                break;
            }
        }
        let stopped = stop_all(live.proxies).await;
        let log = live.sink.snapshot();

        if let Some(reason) = unreachable.or(stopped.err()) {
            let mut record = record;
            record.sequences = results;
            self.fail(record, reason);
            return;
        }
        self.finish(record, &prepared, vec![log], results);
    }

    /// Merges the logs, correlates, links, classifies and persists the run.
    ///
    /// `run_id` must name a stored run that is still running. The returned
    /// record is completed, or aborted when correlation is ambiguous.
    pub async fn aggregate(
        &self,
        run_id: &str,
        logs: Vec<CaptureLog>,
        sequences: Vec<SequenceResult>,
    ) -> Result<RunRecord, ControlError> {
        let record = match self.inner.store.load_run(run_id) {
            Ok(r) => r,
            Err(StoreError::NotFound(_)) => return Err(ControlError::NotFound(format!("run {run_id}"))),
            Err(e) => return Err(e.into()),
        };
        if record.status != RunState::Running {
            return Err(ControlError::InvalidConfig(format!("run {run_id} is already finished")));
        }
        let prepared = Prepared {
            model: load_model(&record.config)?,
            patterns: load_patterns(&record.config)?,
        };
        Ok(self.finish(record, &prepared, logs, sequences))
    }

    fn finish(&self, mut record: RunRecord, prepared: &Prepared, logs: Vec<CaptureLog>, sequences: Vec<SequenceResult>) -> RunRecord {
        let run_id = record.run_id.clone();
        self.update(&run_id, |s| s.advance(Phase::Aggregating));
        let bff = record.config.bff.clone().expect("validated");
        let out = aggregate(AggregateInput {
            run_id: &run_id,
            model: &prepared.model,
            bff: &bff,
            logs,
            sequences: &sequences,
            patterns: &prepared.patterns,
            quiescence_ms: record.config.fuzz.quiescence_ms,
        });
        record.sequences = sequences;
        match out {
            Ok(agg) => {
                record.complete(agg);
                match self.inner.store.save_run(&record) {
                    Ok(()) => self.update(&run_id, |s| {
                        if s.progress.budget.is_none() {
                            s.progress.budget = Some(s.progress.done);
                        }
                        s.advance(Phase::Done)
                    }),
                    Err(e) => self.update(&run_id, |s| {
                        s.last_error = Some(e.to_string());
                        s.advance(Phase::Failed)
                    }),
                }
                record
            }
            Err(e) => self.fail(record, e.to_string()),
        }
    }

    fn fail(&self, mut record: RunRecord, reason: String) -> RunRecord {
        tracing::warn!("run {} failed: {reason}", record.run_id);
        record.abort(&reason);
        let saved = self.inner.store.save_run(&record);
        self.update(&record.run_id, |s| {
            s.last_error = Some(match saved {
                Ok(()) => reason,
                Err(e) => format!("{reason}; saving the record failed: {e}"),
            });
            s.advance(Phase::Failed)
        });
        record
    }

    pub fn get_status(&self, run_id: &str) -> Result<RunStatus, ControlError> {
        if let Some(s) = self
            .inner
            .statuses
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .get(run_id)
        {
            return Ok(s.clone());
        }
        match self.inner.store.load_run(run_id) {
            Ok(r) => Ok(RunStatus::from_record(&r)),
            Err(StoreError::NotFound(_)) => Err(ControlError::NotFound(format!("run {run_id}"))),
            Err(e) => Err(e.into()),
        }
    }

    /// Polls until the run reaches `done` or `failed`.
    pub async fn wait(&self, run_id: &str) -> Result<RunStatus, ControlError> {
        loop {
            let s = self.get_status(run_id)?;
            if s.phase.is_terminal() {
                return Ok(s);
            }
            tokio::time::sleep(Duration::from_millis(25)).await;
        }
    }

    pub fn list_runs(&self, filter: &RunFilter) -> Result<Vec<RunSummary>, ControlError> {
        Ok(self.inner.store.list_runs(filter)?)
    }

    fn finished_record(&self, run_id: &str) -> Result<RunRecord, ControlError> {
        let record = match self.inner.store.load_run(run_id) {
            Ok(r) => r,
            Err(StoreError::NotFound(_)) => return Err(ControlError::NotFound(format!("run {run_id}"))),
            Err(e) => return Err(e.into()),
        };
        if record.status == RunState::Running {
            return Err(ControlError::NotReady(run_id.to_string()));
        }
        Ok(record)
    }

    pub fn report(&self, run_id: &str) -> Result<ErrorReport, ControlError> {
        Ok(render_error_report(&self.finished_record(run_id)?))
    }

    pub fn traces(&self, run_id: &str) -> Result<TraceMap, ControlError> {
        self.finished_record(run_id)?
            .trace_map
            .ok_or_else(|| ControlError::NotReady(run_id.to_string()))
    }

    pub fn graph(&self, run_id: &str, trace_id: &str) -> Result<GraphModel, ControlError> {
        let record = self.finished_record(run_id)?;
        let entry = record
            .trace_map
            .as_ref()
            .and_then(|m| m.entry(trace_id))
            .ok_or_else(|| ControlError::NotFound(format!("trace {trace_id} in run {run_id}")))?;
        Ok(build_graph(entry, &record.findings))
    }
}

async fn stop_all(proxies: Vec<ProxyHandle>) -> Result<(), String> {
    let mut first_err = None;
    for p in proxies {
        if let Err(e) = p.stop().await {
            first_err.get_or_insert(e.to_string());
        }
    }
    first_err.map_or(Ok(()), Err)
}
