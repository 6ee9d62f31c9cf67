use std::collections::BTreeSet;
use std::sync::Arc;

use chrono::{Duration as ChronoDuration, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use triage_core::calibration::calibrate;
use triage_core::scorer::Scorer;
use triage_core::synth::generate_synthetic;
use triage_service::engine::EngineConfig;
use triage_service::{Engine, FaultPoint, ReviewItem, ReviewStatus, ServiceError, SubmittedResponse};

use crate::benchmark;
use crate::{ensure, Outcome};

const P: f64 = 2.0;

fn open(dir: &std::path::Path, scorer: Arc<dyn Scorer>, table: &triage_core::CutoffTable, compact_every: usize) -> Engine {
    let engine = Engine::open(
        dir,
        EngineConfig {
            compact_every,
            ..Default::default()
        },
    )
    .expect("engine opens");
    engine.configure(scorer, table.clone(), P).expect("engine configures");
    engine
}

fn queue_order_holds(items: &[ReviewItem]) -> bool {
    items.windows(2).all(|w| {
        let (a, b) = (&w[0], &w[1]);
        a.score > b.score
            || (a.score == b.score
                && (a.received_at < b.received_at
                    || (a.received_at == b.received_at && a.fragment_id < b.fragment_id)))
    })
}

/// Every flagged fragment survives crashes at every injection point.
fn crash_injection(scorer: Arc<dyn Scorer>, table: &triage_core::CutoffTable) -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(0xc4a5);
    // Mostly alarming paragraphs so that many fragments are flagged.
    let records = generate_synthetic(150, 150, 21).map_err(|e| e.to_string())?;
    let base = Utc.with_ymd_and_hms(2026, 1, 1, 0, 0, 0).unwrap();
    let responses: Vec<SubmittedResponse> = records
        .chunks(3)
        .enumerate()
        .map(|(i, chunk)| SubmittedResponse {
            response_id: format!("resp-{i}"),
            item_id: format!("item-{}", i % 7),
            text: chunk.iter().map(|r| r.text.as_str()).collect::<Vec<_>>().join("\n\n"),
            received_at: base + ChronoDuration::seconds(i as i64),
        })
        .collect();

    let mut engine = open(dir.path(), scorer.clone(), table, 17);
    let mut acknowledged_flags = BTreeSet::new();
    let mut expected_flags = BTreeSet::new();
    let mut crashes = [0usize; 3];
    let points = [FaultPoint::AfterScore, FaultPoint::TornEnqueue, FaultPoint::AfterEnqueue];
    for r in &responses {
        loop {
            let fault = rng.random_bool(0.4).then(|| rng.random_range(0..3));
            engine.inject_fault(fault.map(|i| points[i]));
            match engine.submit(r) {
                Ok(decisions) => {
                    for d in decisions {
                        ensure(d.flagged == (d.score >= d.cutoff), || format!("{} flag disagrees with cutoff", d.fragment_id))?;
                        if d.flagged {
                            acknowledged_flags.insert(d.fragment_id.clone());
                            expected_flags.insert(d.fragment_id);
                        }
                    }
                    break;
                }
                Err(ServiceError::InjectedFault(p)) => {
                    crashes[points.iter().position(|&x| x == p).unwrap()] += 1;
                    drop(engine);
                    engine = open(dir.path(), scorer.clone(), table, 17);
                    // Every fragment acknowledged so far must have survived the restart.
                    for id in &acknowledged_flags {
                        ensure(engine.item(id).is_some(), || format!("acknowledged flag {id} lost after crash"))?;
                    }
                }
                Err(e) => return Err(format!("unexpected error: {e}")),
            }
        }
        engine.inject_fault(None);
    }
    drop(engine);
    let engine = open(dir.path(), scorer, table, 17);
    let all = engine.list_queue(None, 1, 1000).map_err(|e| e.to_string())?;
    let stored: BTreeSet<String> = all.items.iter().map(|i| i.fragment_id.clone()).collect();
    ensure(all.total == all.items.len(), || "queue larger than one page".into())?;
    ensure(stored == expected_flags, || {
        format!("stored {} flags, expected {}", stored.len(), expected_flags.len())
    })?;
    ensure(crashes.iter().all(|&c| c > 0), || format!("not every fault point fired: {crashes:?}"))?;
    Ok(format!(
        "{} responses, {} crashes (score/torn/ack {:?}), {} flags, none lost or duplicated",
        responses.len(),
        crashes.iter().sum::<usize>(),
        crashes,
        stored.len()
    ))
}

pub fn service() -> Outcome {
    let bench = benchmark::fixture()?;
    let scorer: Arc<dyn Scorer> = bench.bow.clone();
    let table = calibrate(&*scorer, &bench.threshold, &[P]).map_err(|e| e.to_string())?;

    let crash = crash_injection(scorer.clone(), &table)?;

    // Sustained load over the distribution that produced the cutoff.
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let engine = open(dir.path(), scorer.clone(), &table, 1000);
    let base = Utc.with_ymd_and_hms(2026, 2, 1, 0, 0, 0).unwrap();
    let mut fragments = 0;
    for (i, text) in bench.threshold.texts().iter().enumerate() {
        let decisions = engine
            .submit(&SubmittedResponse {
                response_id: format!("load-{i}"),
                item_id: "load".into(),
                text: text.clone(),
                // Coarse timestamps so that equal scores also share arrival times.
                received_at: base + ChronoDuration::seconds(i as i64 / 100),
            })
            .map_err(|e| e.to_string())?;
        fragments += decisions.len();
    }
    let m = engine.metrics();
    let fraction = 100.0 * m.flagged_fraction;
    ensure(fragments >= 10_000, || format!("only {fragments} fragments submitted"))?;
    ensure((fraction - P).abs() <= 0.5, || format!("flagged {fraction:.3}% vs calibrated {P}%"))?;

    // Total order, stable across re-listing and pagination.
    let full = engine.list_queue(Some(ReviewStatus::Pending), 1, 1000).map_err(|e| e.to_string())?;
    ensure(queue_order_holds(&full.items), || "queue is not sorted by (score desc, arrival asc, id asc)".into())?;
    let ids = |items: &[ReviewItem]| items.iter().map(|i| i.fragment_id.clone()).collect::<Vec<_>>();
    let mut paged = Vec::new();
    for page in 1..=full.total.div_ceil(7) {
        paged.extend(ids(&engine.list_queue(Some(ReviewStatus::Pending), page, 7).map_err(|e| e.to_string())?.items));
    }
    let again = engine.list_queue(Some(ReviewStatus::Pending), 1, 1000).map_err(|e| e.to_string())?;
    ensure(ids(&full.items) == ids(&again.items), || "re-listing changed the order".into())?;
    ensure(ids(&full.items) == paged, || "pagination is not disjoint and exhaustive".into())?;
    let ties = full.items.windows(2).filter(|w| w[0].score == w[1].score).count();

    let example = engine
        .submit(&SubmittedResponse {
            response_id: "rubric-example".into(),
            item_id: "load".into(),
            text: "I wanna kill myself".into(),
            received_at: Utc::now(),
        })
        .map_err(|e| e.to_string())?;
    ensure(example.len() == 1 && example[0].flagged, || format!("rubric example not flagged: {example:?}"))?;

    Ok(format!(
        "{crash}; load {fragments} fragments flagged {fraction:.2}% at p = {P}; {} queued, {ties} tied neighbours, order stable; \"I wanna kill myself\" scores {:.4} >= {:.4}",
        full.total, example[0].score, example[0].cutoff
    ))
}

pub fn throughput() -> Outcome {
    let bench = benchmark::fixture()?;
    let scorer: Arc<dyn Scorer> = bench.bow.clone();
    let table = calibrate(&*scorer, &bench.threshold, &[P]).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let engine = open(dir.path(), scorer, &table, 1000);
    let texts = bench.threshold.texts();
    let now = Utc::now();
    // Multi-paragraph responses of five fragments each.
    for (i, chunk) in texts.chunks(5).enumerate() {
        engine
            .submit(&SubmittedResponse {
                response_id: format!("tp-{i}"),
                item_id: "tp".into(),
                text: chunk.join("\n\n"),
                received_at: now,
            })
            .map_err(|e| e.to_string())?;
    }
    let m = engine.metrics();
    ensure(m.fragments_processed as usize == texts.len(), || {
        format!("processed {} of {} fragments", m.fragments_processed, texts.len())
    })?;
    ensure(m.throughput_per_second >= 1000.0, || {
        format!("{:.0} fragments/s below 1000", m.throughput_per_second)
    })?;
    Ok(format!(
        "{:.0} BoW fragments/s over {} fragments; latency p50 {:.3} ms, p95 {:.3} ms",
        m.throughput_per_second, m.fragments_processed, m.latency_p50_ms, m.latency_p95_ms
    ))
}
