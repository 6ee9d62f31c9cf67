//! Ingestion, routing and the review queue.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard, RwLock};
use std::time::Instant;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use triage_core::calibration::CutoffTable;
use triage_core::corpus::{write_labeled_to, LabeledText};
use triage_core::scorer::Scorer;

use crate::error::{Result, ServiceError};
use crate::metrics::{Metrics, MetricsSnapshot};
use crate::model::{
    AdjudicationRequest, Adjudication, FlagDecision, FragmentRecord, Outcome, ReviewItem, ReviewStatus, SegmentSpan,
    SubmittedResponse,
};
use crate::store::{apply, LogRecord, Store};

pub const ACTIVE_FILE: &str = "active.json";
pub const DEFAULT_MAX_TEXT_BYTES: usize = 1 << 20;
pub const DEFAULT_PAGE_SIZE: usize = 50;
pub const MAX_PAGE_SIZE: usize = 1000;

#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub max_text_bytes: usize,
    pub compact_every: usize,
    /// fsync every append. Disabling trades durability for speed.
    pub sync: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            max_text_bytes: DEFAULT_MAX_TEXT_BYTES,
            compact_every: 1000,
            sync: true,
        }
    }
}

/// Points in `submit` where a one-shot fault can be injected to simulate a crash.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultPoint {
    /// Fragments scored, nothing written.
    AfterScore,
    /// Half of the first queue record written, then crash.
    TornEnqueue,
    /// Queue records durable, acknowledgment never sent.
    AfterEnqueue,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActivePoint {
    pub p: f64,
    pub cutoff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationView {
    #[serde(flatten)]
    pub table: CutoffTable,
    pub active: ActivePoint,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PersistedActive {
    model: String,
    p: f64,
}

struct Active {
    scorer: Arc<dyn Scorer>,
    table: CutoffTable,
    point: ActivePoint,
}

struct State {
    store: Store,
    items: BTreeMap<String, ReviewItem>,
    /// Text digest of each response accepted since startup.
    responses: HashMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueuePage {
    pub items: Vec<ReviewItem>,
    pub page: usize,
    pub page_size: usize,
    pub total: usize,
}

pub struct Engine {
    config: EngineConfig,
    dir: PathBuf,
    active: RwLock<Option<Arc<Active>>>,
    state: Mutex<State>,
    metrics: Metrics,
    fault: Mutex<Option<FaultPoint>>,
}

/// Split on blank lines; runs of blank lines collapse and whitespace-only
/// fragments are dropped.
pub fn split_fragments(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            if !current.is_empty() {
                out.push(current.join("\n"));
                current.clear();
            }
        } else {
            current.push(line);
        }
    }
    if !current.is_empty() {
        out.push(current.join("\n"));
    }
    out
}

pub fn fragment_id(response_id: &str, index: usize) -> String {
    let mut h = Sha256::new();
    h.update(response_id.as_bytes());
    h.update([0]);
    h.update((index as u64).to_le_bytes());
    format!("frag-{}", &hex::encode(h.finalize())[..20])
}

fn text_digest(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Fragment shells of a response, unscored.
pub fn fragment_response(r: &SubmittedResponse) -> Vec<FragmentRecord> {
    split_fragments(&r.text)
        .into_iter()
        .enumerate()
        .map(|(index, text)| FragmentRecord {
            fragment_id: fragment_id(&r.response_id, index),
            response_id: r.response_id.clone(),
            index,
            text,
            score: 0.0,
            flagged: false,
            segment_scores: Vec::new(),
            best_segment: SegmentSpan { start: 0, length: 0 },
        })
        .collect()
}

fn queue_order(a: &ReviewItem, b: &ReviewItem) -> std::cmp::Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.received_at.cmp(&b.received_at))
        .then_with(|| a.fragment_id.cmp(&b.fragment_id))
}

impl Engine {
    /// Open the engine over `dir`, recovering the review queue. The engine
    /// starts unconfigured until [`Engine::configure`] is called.
    pub fn open(dir: impl AsRef<Path>, config: EngineConfig) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        let (store, items) = Store::open(&dir, config.compact_every, config.sync)?;
        let responses = HashMap::new();
        Ok(Engine {
            config,
            dir,
            active: RwLock::new(None),
            state: Mutex::new(State {
                store,
                items,
                responses,
            }),
            metrics: Metrics::default(),
            fault: Mutex::new(None),
        })
    }

    pub fn data_dir(&self) -> &Path {
        &self.dir
    }

    /// Install a scorer and its cutoff table. A review percentage persisted by
    /// an earlier `set_calibration` for the same model takes precedence over
    /// `default_p`.
    pub fn configure(&self, scorer: Arc<dyn Scorer>, table: CutoffTable, default_p: f64) -> Result<CalibrationView> {
        if table.model != scorer.model_id() {
            return Err(ServiceError::Validation(format!(
                "cutoff table was calibrated for {} but the scorer is {}",
                table.model,
                scorer.model_id()
            )));
        }
        let p = self
            .persisted_active()
            .filter(|a| a.model == table.model && table.entry(a.p).is_some())
            .map_or(default_p, |a| a.p);
        let entry = table
            .entry(p)
            .ok_or_else(|| ServiceError::Validation(format!("cutoff table has no entry for p = {p}")))?;
        let point = ActivePoint {
            p: entry.p,
            cutoff: entry.cutoff,
        };
        let view = CalibrationView {
            table: table.clone(),
            active: point,
        };
        *self.active.write().expect("active lock") = Some(Arc::new(Active { scorer, table, point }));
        tracing::info!(model = %view.table.model, p = point.p, cutoff = point.cutoff, "engine configured");
        Ok(view)
    }

    fn persisted_active(&self) -> Option<PersistedActive> {
        let raw = fs::read(self.dir.join(ACTIVE_FILE)).ok()?;
        serde_json::from_slice(&raw).ok()
    }

    fn active(&self) -> Result<Arc<Active>> {
        self.active
            .read()
            .expect("active lock")
            .clone()
            .ok_or(ServiceError::Unconfigured)
    }

    pub fn is_configured(&self) -> bool {
        self.active.read().expect("active lock").is_some()
    }

    pub fn calibration(&self) -> Result<CalibrationView> {
        let a = self.active()?;
        Ok(CalibrationView {
            table: a.table.clone(),
            active: a.point,
        })
    }

    /// Switch the active review percentage to another entry of the loaded table.
    pub fn set_calibration(&self, model: &str, p: f64) -> Result<CalibrationView> {
        let current = self.active()?;
        if model != current.table.model {
            return Err(ServiceError::Validation(format!(
                "model {model} does not match the active model {}",
                current.table.model
            )));
        }
        let entry = current
            .table
            .entry(p)
            .ok_or_else(|| ServiceError::Validation(format!("cutoff table has no entry for p = {p}")))?;
        let point = ActivePoint {
            p: entry.p,
            cutoff: entry.cutoff,
        };
        let persisted = serde_json::to_vec(&PersistedActive {
            model: model.to_string(),
            p: point.p,
        })
        .expect("active point serializes");
        let tmp = self.dir.join(format!("{ACTIVE_FILE}.tmp"));
        let dest = self.dir.join(ACTIVE_FILE);
        fs::write(&tmp, persisted).map_err(|e| ServiceError::storage(&tmp, e))?;
        fs::rename(&tmp, &dest).map_err(|e| ServiceError::storage(&dest, e))?;
        *self.active.write().expect("active lock") = Some(Arc::new(Active {
            scorer: current.scorer.clone(),
            table: current.table.clone(),
            point,
        }));
        Ok(CalibrationView {
            table: current.table.clone(),
            active: point,
        })
    }

    /// Arm a one-shot fault for the next submission.
    pub fn inject_fault(&self, point: Option<FaultPoint>) {
        *self.fault.lock().expect("fault lock") = point;
    }

    fn fault_at(&self, point: FaultPoint) -> bool {
        let mut f = self.fault.lock().expect("fault lock");
        if *f == Some(point) {
            *f = None;
            true
        } else {
            false
        }
    }

    fn state(&self) -> MutexGuard<'_, State> {
        self.state.lock().expect("state lock")
    }

    /// Score every fragment and durably enqueue the flagged ones before
    /// returning. Resubmitting a response with identical text is a retry and
    /// yields the same decisions without duplicating queue items.
    pub fn submit(&self, r: &SubmittedResponse) -> Result<Vec<FlagDecision>> {
        if r.text.len() > self.config.max_text_bytes {
            return Err(ServiceError::PayloadTooLarge {
                size: r.text.len(),
                limit: self.config.max_text_bytes,
            });
        }
        if r.response_id.is_empty() {
            return Err(ServiceError::Validation("response_id must not be empty".into()));
        }
        let active = self.active()?;
        let digest = text_digest(&r.text);
        if let Some(prev) = self.state().responses.get(&r.response_id) {
            if *prev != digest {
                return Err(ServiceError::DuplicateResponse(r.response_id.clone()));
            }
        }

        let started = Instant::now();
        let mut fragments = fragment_response(r);
        for f in &mut fragments {
            let scored = active.scorer.score_fragment(&f.text);
            f.score = scored.score;
            f.flagged = scored.score >= active.point.cutoff;
            f.segment_scores = scored.segments.iter().map(|s| s.score).collect();
            if let Some(best) = scored.best_segment() {
                f.best_segment = SegmentSpan {
                    start: best.start,
                    length: best.length,
                };
            }
        }
        let flagged = fragments.iter().filter(|f| f.flagged).count();
        self.metrics
            .record_batch(fragments.len() as u64, flagged as u64, started.elapsed());

        if self.fault_at(FaultPoint::AfterScore) {
            return Err(ServiceError::InjectedFault(FaultPoint::AfterScore));
        }

        let decisions: Vec<FlagDecision> = fragments
            .iter()
            .map(|f| FlagDecision {
                fragment_id: f.fragment_id.clone(),
                score: f.score,
                cutoff: active.point.cutoff,
                flagged: f.flagged,
            })
            .collect();

        {
            let mut state = self.state();
            let records: Vec<LogRecord> = fragments
                .into_iter()
                .filter(|f| f.flagged && !state.items.contains_key(&f.fragment_id))
                .map(|f| LogRecord::Enqueue {
                    item: ReviewItem {
                        fragment_id: f.fragment_id,
                        response_id: f.response_id,
                        item_id: r.item_id.clone(),
                        text: f.text,
                        score: f.score,
                        cutoff: active.point.cutoff,
                        segment_scores: f.segment_scores,
                        best_segment: f.best_segment,
                        received_at: r.received_at,
                        status: ReviewStatus::Pending,
                        adjudication: None,
                    },
                })
                .collect();
            if let Some(first) = records.first() {
                if self.fault_at(FaultPoint::TornEnqueue) {
                    state.store.append_torn(first)?;
                    return Err(ServiceError::InjectedFault(FaultPoint::TornEnqueue));
                }
            }
            state.store.append(&records)?;
            for rec in records {
                apply(&mut state.items, rec);
            }
            state.responses.insert(r.response_id.clone(), digest);
            self.maybe_compact(&mut state)?;
        }

        if self.fault_at(FaultPoint::AfterEnqueue) {
            return Err(ServiceError::InjectedFault(FaultPoint::AfterEnqueue));
        }
        Ok(decisions)
    }

    fn maybe_compact(&self, state: &mut State) -> Result<()> {
        if state.store.needs_compaction() {
            let State { store, items, .. } = state;
            store.compact(items.values())?;
        }
        Ok(())
    }

    /// Items sorted by score descending, then arrival, then id. `page` is 1-based.
    pub fn list_queue(&self, status: Option<ReviewStatus>, page: usize, page_size: usize) -> Result<QueuePage> {
        if page == 0 {
            return Err(ServiceError::Validation("page numbers start at 1".into()));
        }
        if page_size == 0 || page_size > MAX_PAGE_SIZE {
            return Err(ServiceError::Validation(format!(
                "page_size must be between 1 and {MAX_PAGE_SIZE}"
            )));
        }
        let mut items: Vec<ReviewItem> = {
            let state = self.state();
            state
                .items
                .values()
                .filter(|i| status.is_none_or(|s| i.status == s))
                .cloned()
                .collect()
        };
        items.sort_by(queue_order);
        let total = items.len();
        let items = items.into_iter().skip((page - 1) * page_size).take(page_size).collect();
        Ok(QueuePage {
            items,
            page,
            page_size,
            total,
        })
    }

    pub fn item(&self, fragment_id: &str) -> Option<ReviewItem> {
        self.state().items.get(fragment_id).cloned()
    }

    pub fn adjudicate(&self, fragment_id: &str, req: &AdjudicationRequest) -> Result<ReviewItem> {
        self.adjudicate_at(fragment_id, req, Utc::now())
    }

    /// Compare-and-set from pending to adjudicated, durable before return.
    pub fn adjudicate_at(&self, fragment_id: &str, req: &AdjudicationRequest, now: DateTime<Utc>) -> Result<ReviewItem> {
        if req.reviewer_id.trim().is_empty() {
            return Err(ServiceError::Validation("reviewer_id is required".into()));
        }
        match (req.outcome, req.category) {
            (Outcome::TrueAsr, None) => {
                return Err(ServiceError::Validation(
                    "a true_asr adjudication requires a rubric category".into(),
                ))
            }
            (Outcome::FalsePositive, Some(_)) => {
                return Err(ServiceError::Validation(
                    "a false_positive adjudication takes no rubric category".into(),
                ))
            }
            _ => {}
        }
        let mut state = self.state();
        let item = state
            .items
            .get(fragment_id)
            .ok_or_else(|| ServiceError::NotFound(fragment_id.to_string()))?;
        if let Some(existing) = &item.adjudication {
            return if existing.matches(req) {
                Ok(item.clone())
            } else {
                Err(ServiceError::Conflict(Box::new(item.clone())))
            };
        }
        let record = LogRecord::Adjudicate {
            fragment_id: fragment_id.to_string(),
            adjudication: Adjudication {
                outcome: req.outcome,
                category: req.category,
                reviewer_id: req.reviewer_id.clone(),
                adjudicated_at: now,
            },
        };
        state.store.append(std::slice::from_ref(&record))?;
        apply(&mut state.items, record);
        self.metrics.record_adjudication();
        let updated = state.items[fragment_id].clone();
        self.maybe_compact(&mut state)?;
        Ok(updated)
    }

    /// Adjudicated fragments at or after `since`, oldest first.
    pub fn export_adjudications(&self, since: Option<DateTime<Utc>>) -> Vec<LabeledText> {
        let state = self.state();
        let mut done: Vec<&ReviewItem> = state
            .items
            .values()
            .filter(|i| {
                i.adjudication
                    .as_ref()
                    .is_some_and(|a| since.is_none_or(|s| a.adjudicated_at >= s))
            })
            .collect();
        done.sort_by(|a, b| {
            let ta = a.adjudication.as_ref().map(|x| x.adjudicated_at);
            let tb = b.adjudication.as_ref().map(|x| x.adjudicated_at);
            ta.cmp(&tb).then_with(|| a.fragment_id.cmp(&b.fragment_id))
        });
        done.iter().filter_map(|i| i.to_labeled()).collect()
    }

    pub fn export_jsonl(&self, since: Option<DateTime<Utc>>) -> String {
        let mut buf = Vec::new();
        write_labeled_to(&mut buf, &self.export_adjudications(since)).expect("writing to memory");
        String::from_utf8(buf).expect("JSON is UTF-8")
    }

    pub fn metrics(&self) -> MetricsSnapshot {
        self.metrics.snapshot()
    }
}
