use std::sync::Arc;

use chrono::{DateTime, Duration, TimeZone, Utc};
use proptest::prelude::*;
use roadwatch::curation::{curation_stats, next_candidates, submit_decision, CurationDecision, QueueFilter};
use roadwatch::manifest::{
    assign_splits, CurationStatus, GatheringType, ImageRecord, Manifest, ManifestStore, ProviderId, RejectionReason,
    SplitRatios, Verdict,
};
use roadwatch::reference::curation_manifest;
use roadwatch::taxonomy::Taxonomy;
use roadwatch::ClassId;

fn t0() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2026, 5, 4, 9, 0, 0).unwrap()
}

#[test]
fn acceptance_rates_by_query_language() {
    let st = curation_stats(&curation_manifest());
    let en = st.acceptance[&GatheringType::English];
    assert_eq!((en.retrieved, en.accepted), (40_063, 5_844));
    assert_eq!(format!("{:.1}", 100.0 * en.rate), "14.6");
    let other = st.acceptance[&GatheringType::NonEnglish];
    assert_eq!((other.retrieved, other.accepted), (12_846, 1_641));
    assert_eq!(format!("{:.1}", 100.0 * other.rate), "12.8");
    // Geograph exports are not search results.
    assert!(!st.acceptance.contains_key(&GatheringType::Geograph));
    assert_eq!(st.totals.accepted, 12_630);
}

#[test]
fn concurrent_decisions_serialize_latest_wins() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("manifest.json");
    let store = ManifestStore::open(&path).unwrap();
    store
        .transact(|m| m.insert(ImageRecord::new("shared", ProviderId::Flickr, ClassId::Flooding)))
        .unwrap();
    let store = Arc::new(store);
    let tax = Arc::new(Taxonomy::default_tree());
    let handles: Vec<_> = (0..8)
        .map(|i| {
            let (store, tax) = (Arc::clone(&store), Arc::clone(&tax));
            std::thread::spawn(move || {
                // Timestamps deliberately out of submission order.
                let at = t0() + Duration::minutes((i * 5) % 8);
                let d = if i % 2 == 0 {
                    CurationDecision::accept("shared", ClassId::Flooding, &format!("c{i}"), at)
                } else {
                    CurationDecision::reject("shared", RejectionReason::Rotated, &format!("c{i}"), at)
                };
                submit_decision(&store, &tax, &d).unwrap();
            })
        })
        .collect();
    for h in handles {
        h.join().unwrap();
    }
    let m = Manifest::open(&path).unwrap();
    assert_eq!(m.audit.len(), 8);
    let latest = m.audit.iter().max_by_key(|e| e.decided_at).unwrap();
    let r = m.get("shared").unwrap();
    let expected = match latest.verdict {
        Verdict::Accept => CurationStatus::Accepted,
        Verdict::Reject => CurationStatus::Rejected,
    };
    assert_eq!(r.curation_status, expected);
    assert_eq!(r.version, 8);
    let mut seqs: Vec<u64> = m.audit.iter().map(|e| e.seq).collect();
    seqs.sort();
    assert_eq!(seqs, (1..=8).collect::<Vec<_>>());
}

#[test]
fn twenty_decisions_twenty_audit_entries() {
    let mut m = Manifest::new();
    for i in 0..20 {
        let mut r = ImageRecord::new(format!("r{i:02}"), ProviderId::Google, ClassId::ALL[i % 8]);
        r.rank = Some(i as u32 + 1);
        m.insert(r).unwrap();
    }
    let store = ManifestStore::in_memory(m);
    let tax = Taxonomy::default_tree();
    let mut n = 0;
    loop {
        let batch = store.read(|m| next_candidates(m, &QueueFilter::default(), 3));
        if batch.is_empty() {
            break;
        }
        for item in batch {
            let at = t0() + Duration::seconds(n);
            let d = if n % 3 == 0 {
                CurationDecision::reject(&item.record.id, RejectionReason::BadViewport, "ann", at)
            } else {
                CurationDecision::accept(&item.record.id, ClassId::Snow, "ann", at)
            };
            submit_decision(&store, &tax, &d).unwrap();
            // Resubmission after a retry must not duplicate.
            submit_decision(&store, &tax, &d).unwrap();
            n += 1;
        }
    }
    let m = store.snapshot();
    assert_eq!(n, 20);
    assert_eq!(m.audit.len(), 20);
    assert_eq!(m.accepted().filter(|r| r.label == ClassId::Snow).count(), 13);
    assert_eq!(curation_stats(&m).per_curator["ann"].decisions, 20);
}

#[derive(Debug, Clone)]
enum Step {
    Decide { record: usize, accept: bool, minute: i64 },
    Split { seed: u64 },
}

fn step() -> impl Strategy<Value = Step> {
    prop_oneof![
        4 => (0usize..12, any::<bool>(), 0i64..30).prop_map(|(record, accept, minute)| Step::Decide { record, accept, minute }),
        1 => any::<u64>().prop_map(|seed| Step::Split { seed }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn split_membership_and_latest_decision(steps in prop::collection::vec(step(), 1..40)) {
        let mut m = Manifest::new();
        for i in 0..12 {
            m.insert(ImageRecord::new(format!("r{i}"), ProviderId::Bing, ClassId::INCIDENTS[i % 8])).unwrap();
        }
        let store = ManifestStore::in_memory(m);
        let tax = Taxonomy::default_tree();
        for s in &steps {
            match *s {
                Step::Decide { record, accept, minute } => {
                    let id = format!("r{record}");
                    let at = t0() + Duration::minutes(minute);
                    let d = if accept {
                        CurationDecision::accept(&id, ClassId::INCIDENTS[record % 8], "p", at)
                    } else {
                        CurationDecision::reject(&id, RejectionReason::MultiIncident, "p", at)
                    };
                    submit_decision(&store, &tax, &d).unwrap();
                }
                Step::Split { seed } => {
                    let snap = store.snapshot();
                    if let Ok(next) = assign_splits(&snap, SplitRatios::default(), seed) {
                        store.transact(|m| { *m = next; Ok::<_, roadwatch::manifest::ManifestError>(()) }).unwrap();
                    }
                }
            }
            let m = store.snapshot();
            for r in m.records.values() {
                prop_assert!(r.split.is_none() || r.is_accepted(), "{} in a split while {:?}", r.id, r.curation_status);
                let latest = m.audit.iter().filter(|e| e.record_id == r.id).max_by_key(|e| (e.decided_at, e.seq));
                if let Some(e) = latest {
                    let expect = if e.verdict == Verdict::Accept { CurationStatus::Accepted } else { CurationStatus::Rejected };
                    prop_assert_eq!(r.curation_status, expect);
                }
            }
        }
    }
}
