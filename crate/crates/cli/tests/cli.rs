use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use roadwatch::harvest::BlobStore;
use roadwatch::manifest::{GeoTag, ImageRecord, Manifest, ProviderId, Split};
use roadwatch::synthetic::pattern_image;
use roadwatch::taxonomy::ClassId;
use serde_json::Value;

fn roadwatch(dir: &Path, args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_roadwatch"))
        .current_dir(dir)
        .env_remove("ROADWATCH_MANIFEST")
        .env_remove("ROADWATCH_BLOBS")
        .env_remove("ROADWATCH_PORT")
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .unwrap();
    out
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = roadwatch(dir, args);
    assert!(
        out.status.success(),
        "roadwatch {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn plan_then_fixture_harvest_then_dedup() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();

    let listing = ok(d, &["queries", "plan", "--class", "snow", "--langs", "en,nl"]);
    assert!(listing.lines().any(|l| l.starts_with("snow\ten\t")));
    assert!(listing.lines().any(|l| l.starts_with("snow\tnl\t")));

    ok(d, &["queries", "plan", "--class", "snow,fire", "--langs", "en", "--out", "plan.json"]);
    let plan = json(&d.join("plan.json"));
    let n_queries = plan.as_array().unwrap().len();
    assert!(n_queries > 2);
    assert!(plan.as_array().unwrap().iter().all(|q| q["language"] == "en"));

    std::fs::write(
        d.join("providers.toml"),
        "[[provider]]\nprovider = \"local-fixture\"\nsynthetic_results = 3\npage_size = 2\nrate_limit = 1000.0\nburst = 10.0\n",
    )
    .unwrap();
    let summary: Value = serde_json::from_str(&ok(d, &["harvest", "--plan", "plan.json", "--out", "m.db"])).unwrap();
    assert_eq!(summary["records_added"], 3 * n_queries);
    assert!(d.join("blobs").is_dir());

    let m = json(&d.join("m.db"));
    assert_eq!(m["records"].as_object().unwrap().len(), 3 * n_queries);

    // Re-running adds nothing.
    let again: Value = serde_json::from_str(&ok(d, &["harvest", "--plan", "plan.json", "--out", "m.db"])).unwrap();
    assert_eq!(again["records_added"], 0);

    // Duplicate an existing blob under a new record: dedup must reject it.
    let mut manifest = Manifest::open(&d.join("m.db")).unwrap();
    let first = manifest.records.values().next().unwrap().clone();
    let mut copy = first.clone();
    copy.id = "copy-of-first".into();
    copy.rank = Some(99);
    manifest.insert(copy).unwrap();
    manifest.save(&d.join("m.db")).unwrap();

    ok(d, &["dedup", "--manifest", "m.db", "--threshold", "0", "--report", "dedup.json"]);
    let report = json(&d.join("dedup.json"));
    assert!(report["duplicates"].as_u64().unwrap() >= 1);
    let after = Manifest::open(&d.join("m.db")).unwrap();
    let copy = after.get("copy-of-first").unwrap();
    assert_eq!(copy.rejection_reason, Some(roadwatch::manifest::RejectionReason::Duplicate));
    assert!(after.get(&first.id).unwrap().rejection_reason.is_none());
}

/// Accepted pattern images for three classes, plus Geograph records with
/// geotags.
fn seeded_store(d: &Path) {
    let blobs = BlobStore::new(d.join("blobs"));
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut m = Manifest::new();
    let classes = [ClassId::Snow, ClassId::Flooding, ClassId::Negative];
    for i in 0..60 {
        let (k, class) = (i % 3, classes[i % 3]);
        let png = pattern_image(k, 24, &mut rng).encode_png();
        let sum = blobs.put(&png).unwrap().checksum;
        let provider = if i % 4 == 0 { ProviderId::Geograph } else { ProviderId::Bing };
        let mut r = ImageRecord::new(format!("r{i:03}"), provider, class).accepted();
        r.blob_checksum = Some(sum);
        if provider == ProviderId::Geograph {
            r.geotag = Some(if i % 8 == 0 {
                GeoTag { lat: 52.4, lon: -3.7, region: None }
            } else {
                GeoTag { lat: 51.5, lon: -0.1, region: None }
            });
        }
        m.insert(r).unwrap();
    }
    m.save(&d.join("m.db")).unwrap();
}

const TRAIN_CFG: &str = "max_epochs = 3\nbatch_size = 8\ninitial_lr = 0.003\nlr_decay_epochs = []\n\n\
[architecture]\ninput_size = 12\nin_channels = 3\nwidth = 4\nstem_kernel = 3\nstem_stride = 2\npool = 2\nblocks = 1\nnum_classes = 9\n";

#[test]
fn split_train_evaluate_explain() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    seeded_store(d);

    let counts = ok(d, &["manifest", "counts", "--manifest", "m.db"]);
    assert!(counts.contains("snow"));
    assert!(counts.contains("negatives 20"));

    ok(d, &["manifest", "geo-split", "--manifest", "m.db", "--seed", "3"]);
    let m = Manifest::open(&d.join("m.db")).unwrap();
    for r in m.records.values() {
        if r.provider == ProviderId::Geograph && r.id[1..].parse::<usize>().unwrap() % 8 == 0 {
            assert_eq!(r.split, Some(Split::Test), "{}", r.id);
        }
    }

    let split = ok(d, &["manifest", "split", "--manifest", "m.db", "--seed", "1"]);
    assert!(split.contains("train"));
    let m = Manifest::open(&d.join("m.db")).unwrap();
    assert_eq!(m.in_split(Split::Train).count(), 42);
    assert_eq!(m.in_split(Split::Val).count(), 12);
    assert_eq!(m.in_split(Split::Test).count(), 6);

    ok(d, &["preprocess", "--manifest", "m.db", "--stats-out", "norm.stats", "--size", "12"]);
    let stats = json(&d.join("norm.stats"));
    assert_eq!(stats["std"].as_array().unwrap().len(), 3);

    std::fs::write(d.join("train.cfg"), TRAIN_CFG).unwrap();
    let log = ok(
        d,
        &["train", "--config", "train.cfg", "--manifest", "m.db", "--norm", "norm.stats", "--out", "ckpt"],
    );
    assert_eq!(log.lines().filter(|l| l.starts_with("epoch")).count(), 3);
    assert!(d.join("ckpt/best.ckpt").is_file() && d.join("ckpt/last.ckpt").is_file());
    assert_eq!(json(&d.join("ckpt/history.json")).as_array().unwrap().len(), 3);

    let table = ok(
        d,
        &["eval", "--ckpt", "best", "--split", "test", "--manifest", "m.db", "--report", "report.json"],
    );
    assert!(table.contains("macro F1"));
    let report = json(&d.join("report.json"));
    assert_eq!(report["report"]["n"], 6);
    assert_eq!(report["predictions"].as_array().unwrap().len(), 6);
    assert_eq!(std::fs::read_to_string(d.join("report.txt")).unwrap(), table);

    // `best` resolves inside --ckpt-dir; an explicit path works too.
    ok(d, &["eval", "--ckpt", "ckpt/last.ckpt", "--split", "val", "--manifest", "m.db"]);
    let missing = roadwatch(d, &["eval", "--ckpt", "nowhere.ckpt", "--manifest", "m.db"]);
    assert!(!missing.status.success());

    let img = d.join("blobs");
    let sample = Manifest::open(&d.join("m.db")).unwrap().get("r001").unwrap().blob_checksum.clone().unwrap();
    let png = BlobStore::new(&img).path_for(&sample);
    ok(
        d,
        &["explain", "cam", "--ckpt", "best", "--image", png.to_str().unwrap(), "--class", "flooding", "--out", "cam.png"],
    );
    let overlay = image::open(d.join("cam.png")).unwrap();
    assert_eq!((overlay.width(), overlay.height()), (24, 24));
    assert!(d.join("cam.map.png").is_file());

    ok(
        d,
        &["explain", "tsne", "--ckpt", "best", "--split", "all", "--manifest", "m.db", "--out", "points.csv", "--perplexity", "5", "--iterations", "300"],
    );
    let csv = std::fs::read_to_string(d.join("points.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("id,x,y,true_label,predicted_label"));
    assert_eq!(lines.count(), 60);

    let err = roadwatch(
        d,
        &["explain", "tsne", "--ckpt", "best", "--split", "test", "--manifest", "m.db", "--out", "p.csv"],
    );
    assert!(String::from_utf8_lossy(&err.stderr).contains("perplexity-infeasible"));

    ok(d, &["manifest", "export", "--manifest", "m.db", "--out", "records.jsonl"]);
    let exported = std::fs::read_to_string(d.join("records.jsonl")).unwrap();
    assert_eq!(exported.lines().count(), 60);
    for line in exported.lines() {
        serde_json::from_str::<ImageRecord>(line).unwrap();
    }
}

#[test]
fn negatives_from_listings() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let entries = |prefix: &str, n: usize| -> Vec<Value> {
        (0..n).map(|i| serde_json::json!({"location": format!("{prefix}/{i:03}.jpg")})).collect()
    };
    let listings = serde_json::json!({
        "bdd": entries("bdd", 30),
        "cityscapes": entries("cs", 10),
        "geograph_road_transport": entries("geo", 12),
    });
    std::fs::write(d.join("listings.json"), listings.to_string()).unwrap();
    std::fs::write(
        d.join("quotas.toml"),
        "[sources.bdd]\nquota = 20\ncrop = true\n[sources.cityscapes]\nquota = 10\ncrop = false\n\
         [sources.geograph_road_transport]\nquota = 10\ncrop = false\n",
    )
    .unwrap();
    let out = ok(
        d,
        &["manifest", "negatives", "--manifest", "m.db", "--listings", "listings.json", "--quotas", "quotas.toml"],
    );
    assert!(out.contains("added 40"));
    let m = Manifest::open(&d.join("m.db")).unwrap();
    assert_eq!(m.records.values().filter(|r| r.crop_ego).count(), 20);
    assert!(m.records.values().all(|r| r.label == ClassId::Negative && r.is_accepted()));

    // Defaults ask for 20k BDD images; the listing cannot supply them.
    std::fs::remove_file(d.join("m.db")).unwrap();
    let short = roadwatch(d, &["manifest", "negatives", "--manifest", "m.db", "--listings", "listings.json"]);
    assert!(!short.status.success());
    assert!(String::from_utf8_lossy(&short.stderr).contains("insufficient-source"));
}

#[test]
fn bad_arguments_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(!roadwatch(d, &["queries", "plan", "--class", "roadworks"]).status.success());
    assert!(!roadwatch(d, &["queries", "plan", "--class", "snow", "--langs", "xx"]).status.success());
    assert!(!roadwatch(d, &["manifest", "split", "--ratios", "0.5,0.5,0.5"]).status.success());
    let out = roadwatch(d, &["eval", "--ckpt", "best"]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("loading checkpoint"));
}

fn http_get(port: u16, path: &str) -> Option<String> {
    let mut s = TcpStream::connect(("127.0.0.1", port)).ok()?;
    s.set_read_timeout(Some(Duration::from_secs(5))).ok()?;
    write!(s, "GET {path} HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n").ok()?;
    let mut body = String::new();
    s.read_to_string(&mut body).ok()?;
    Some(body)
}

#[test]
fn serve_reads_port_and_manifest_from_env() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    seeded_store(d);
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let mut child = Command::new(env!("CARGO_BIN_EXE_roadwatch"))
        .current_dir(d)
        .env("ROADWATCH_PORT", port.to_string())
        .env("ROADWATCH_MANIFEST", d.join("m.db"))
        .env_remove("ROADWATCH_BLOBS")
        .env("RUST_LOG", "warn")
        .arg("serve")
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let deadline = Instant::now() + Duration::from_secs(20);
    let mut reply = None;
    while Instant::now() < deadline {
        if let Some(r) = http_get(port, "/stats") {
            reply = Some(r);
            break;
        }
        std::thread::sleep(Duration::from_millis(100));
    }
    let queue = http_get(port, "/queue?limit=2");
    child.kill().unwrap();
    child.wait().unwrap();
    let reply = reply.expect("server came up");
    assert!(reply.starts_with("HTTP/1.1 200"), "{reply}");
    assert!(reply.contains("\"accepted\":60"), "{reply}");
    assert!(queue.unwrap().starts_with("HTTP/1.1 200"));
}
