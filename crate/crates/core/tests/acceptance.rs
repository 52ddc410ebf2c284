//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Two criteria check published figures that contradict the published
//! confusion matrices they are derived from. They are evaluated exactly as
//! stated and reported as FAIL; the process exit status only reflects
//! outcomes that differ from that documented expectation.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use image::codecs::png::{CompressionType, FilterType, PngEncoder};
use image::{ExtendedColorType, ImageEncoder};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use roadwatch::dedup::{dedup_scan, perceptual_hash, pixel_checksum, DedupItem, DEFAULT_THRESHOLD};
use roadwatch::evaluate::{metrics, EvalReport};
use roadwatch::explain::{cam_from_features, silhouette, tsne_points, weighted_sum, TsneConfig};
use roadwatch::harvest::harvest_report;
use roadwatch::manifest::{
    assign_splits, class_counts, geo_stratify, CurationStatus, GatheringType, GeoTag, ImageRecord, Manifest,
    ProviderId, Region, RegionMap, Split, SplitRatios, GEO_CLASSES,
};
use roadwatch::nn::{ArchitectureDescriptor, Model};
use roadwatch::preprocess::{compute_norm_stats, crop_ego, resize, CropRule, Image, NormStats};
use roadwatch::reference::{full_test_matrix, gathering_manifest, geo_test_matrix};
use roadwatch::synthetic::{gaussian_clusters, pattern_dataset, pattern_image};
use roadwatch::trainer::{
    batch_loss, class_weights, evaluate_samples, train, weighted_loss, ClassFrequencyTable, ClassWeights, TrainConfig,
};
use roadwatch::ClassId;

type Outcome = Result<String, String>;

struct Criterion {
    name: &'static str,
    /// Set for criteria whose published target is inconsistent with its
    /// own source data.
    known_failure: Option<&'static str>,
    run: fn() -> Outcome,
}

const CRITERIA: &[Criterion] = &[
    Criterion {
        name: "metric oracle, full test matrix",
        known_failure: Some("printed cells sum to 5254, so the accuracy cannot be 5113/5263"),
        run: full_test_oracle,
    },
    Criterion {
        name: "metric oracle, geo test matrix",
        known_failure: Some("printed flooding cells give F1 108/115 = 0.9391"),
        run: geo_test_oracle,
    },
    Criterion {
        name: "dataset accounting",
        known_failure: None,
        run: dataset_accounting,
    },
    Criterion {
        name: "class weights and weighted loss",
        known_failure: None,
        run: class_weight_checks,
    },
    Criterion {
        name: "gradient check",
        known_failure: None,
        run: gradient_check,
    },
    Criterion {
        name: "training sanity",
        known_failure: None,
        run: training_sanity,
    },
    Criterion {
        name: "split invariants",
        known_failure: None,
        run: split_invariants,
    },
    Criterion {
        name: "crop rule",
        known_failure: None,
        run: crop_rule,
    },
    Criterion {
        name: "dedup oracle",
        known_failure: None,
        run: dedup_oracle,
    },
    Criterion {
        name: "t-SNE properties",
        known_failure: None,
        run: tsne_properties,
    },
    Criterion {
        name: "CAM correctness",
        known_failure: None,
        run: cam_correctness,
    },
];

fn main() -> ExitCode {
    // libtest-style flags (e.g. --nocapture, a filter) are accepted; a bare
    // argument filters criteria by substring.
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    if std::env::args().any(|a| a == "--list") {
        for c in CRITERIA {
            println!("{}: test", c.name);
        }
        return ExitCode::SUCCESS;
    }
    panic::set_hook(Box::new(|_| {}));

    let mut passed = 0;
    let mut failed = 0;
    let mut unexpected = Vec::new();
    for c in CRITERIA {
        if filter.as_deref().is_some_and(|f| !c.name.contains(f)) {
            continue;
        }
        let t0 = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let secs = t0.elapsed().as_secs_f64();
        match (&outcome, c.known_failure) {
            (Ok(detail), None) => {
                passed += 1;
                println!("PASS  {} ({secs:.2}s): {detail}", c.name);
            }
            (Ok(detail), Some(_)) => {
                passed += 1;
                unexpected.push(c.name);
                println!("PASS  {} ({secs:.2}s): {detail} [expected FAIL]", c.name);
            }
            (Err(detail), None) => {
                failed += 1;
                unexpected.push(c.name);
                println!("FAIL  {} ({secs:.2}s): {detail}", c.name);
            }
            (Err(detail), Some(why)) => {
                failed += 1;
                println!("FAIL  {} ({secs:.2}s): {detail} [known: {why}]", c.name);
            }
        }
    }
    println!("\nacceptance: {passed} passed, {failed} failed");
    if unexpected.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("unexpected outcome: {}", unexpected.join(", "));
        ExitCode::FAILURE
    }
}

/// Collects mismatches; `Ok` when none.
#[derive(Default)]
struct Checks {
    passed: usize,
    failures: Vec<String>,
}

impl Checks {
    fn close(&mut self, what: &str, got: f64, want: f64, tol: f64) {
        if (got - want).abs() <= tol {
            self.passed += 1;
        } else {
            self.failures.push(format!("{what} = {got:.6}, want {want} ± {tol:e}"));
        }
    }

    fn that(&mut self, what: impl Into<String>, ok: bool) {
        if ok {
            self.passed += 1;
        } else {
            self.failures.push(what.into());
        }
    }

    fn finish(self, summary: String) -> Outcome {
        if self.failures.is_empty() {
            Ok(format!("{} checks; {summary}", self.passed))
        } else {
            Err(format!("{} of {} checks failed: {}", self.failures.len(), self.passed + self.failures.len(), self.failures.join("; ")))
        }
    }
}

fn within_budget(checks: &mut Checks, t0: Instant, budget: Duration) {
    let took = t0.elapsed();
    checks.that(format!("took {:.1}s, budget {}s", took.as_secs_f64(), budget.as_secs()), took <= budget);
}

const METRIC_TOL: f64 = 5e-5;

fn class_of(r: &EvalReport, c: ClassId) -> &roadwatch::evaluate::ClassMetrics {
    r.class(c).expect("class present in report")
}

fn full_test_oracle() -> Outcome {
    let r = metrics(&full_test_matrix()).map_err(|e| e.to_string())?;
    let mut c = Checks::default();
    c.that(format!("n = {}, want 5263", r.n), r.n == 5263);
    c.that(format!("correct = {}, want 5113", r.correct), r.correct == 5113);
    c.close("accuracy", r.accuracy, 0.9715, METRIC_TOL);
    let animal = class_of(&r, ClassId::AnimalOnRoad);
    c.close("animal F1", animal.f1, 0.9021, METRIC_TOL);
    c.close("animal Top-1", animal.recall, 0.9556, METRIC_TOL);
    c.close("fire F1", class_of(&r, ClassId::Fire).f1, 0.9848, METRIC_TOL);
    c.close("snow F1", class_of(&r, ClassId::Snow).f1, 0.9689, METRIC_TOL);
    c.close("negative F1", class_of(&r, ClassId::Negative).f1, 0.9854, METRIC_TOL);
    c.finish(format!("accuracy {:.4}", r.accuracy))
}

fn geo_test_oracle() -> Outcome {
    let r = metrics(&geo_test_matrix()).map_err(|e| e.to_string())?;
    let mut c = Checks::default();
    c.that(format!("n = {}, want 309", r.n), r.n == 309);
    let snow = class_of(&r, ClassId::Snow);
    c.that(format!("snow {}/{}, want 112/115", snow.correct, snow.support), (snow.correct, snow.support) == (112, 115));
    c.close("snow Top-1", snow.recall, 0.9739, METRIC_TOL);
    let neg = class_of(&r, ClassId::Negative);
    c.that(format!("negative {}/{}, want 48/63", neg.correct, neg.support), (neg.correct, neg.support) == (48, 63));
    c.close("negative Top-1", neg.recall, 0.7619, METRIC_TOL);
    c.close("flooding F1", class_of(&r, ClassId::Flooding).f1, 0.9319, METRIC_TOL);
    c.finish(format!("accuracy {:.4}", r.accuracy))
}

fn dataset_accounting() -> Outcome {
    // Rows as published: english, non-english, geograph, total.
    let rows: [(ClassId, [u64; 4]); 8] = [
        (ClassId::AnimalOnRoad, [534, 79, 708, 1321]),
        (ClassId::Collapse, [362, 123, 6, 491]),
        (ClassId::VehicleCrash, [1158, 320, 0, 1478]),
        (ClassId::Fire, [791, 74, 0, 865]),
        (ClassId::Flooding, [453, 446, 1257, 2156]),
        (ClassId::Landslide, [676, 149, 0, 825]),
        (ClassId::Snow, [1265, 304, 3174, 4743]),
        (ClassId::Treefall, [605, 146, 0, 751]),
    ];
    let m = gathering_manifest();
    let table = class_counts(&m);
    let mut c = Checks::default();
    for (class, [en, other, geo, total]) in rows {
        let got = table.row(class);
        c.that(format!("{class} row {got:?}"), got == [en, other, geo]);
        c.that(format!("{class} total {}", table.row_total(class)), table.row_total(class) == total);
    }
    c.that(format!("grand total {}", table.grand_total()), table.grand_total() == 12_630);
    c.that(format!("negatives counted {}", table.row_total(ClassId::Negative)), table.row_total(ClassId::Negative) == 0);

    let report = harvest_report(&m);
    let folded = report.gathering_table();
    let en = folded.column_total(GatheringType::English);
    let other = folded.column_total(GatheringType::NonEnglish);
    c.that(format!("report English {en}"), en == 5_844);
    c.that(format!("report non-English {other}"), other == 1_641);
    let geo = folded.column_total(GatheringType::Geograph);
    c.that(format!("report Geograph {geo}"), geo == 5_145);
    c.that("report and table disagree on Geograph", geo == table.column_total(GatheringType::Geograph));
    c.that(format!("report total {}", report.total().retained), report.total().retained == 12_630);
    let by_provider: BTreeMap<ProviderId, u64> =
        [ProviderId::Google, ProviderId::Bing, ProviderId::Flickr].map(|p| (p, report.provider_total(p).retained)).into();
    c.that(
        format!("provider totals {by_provider:?}"),
        by_provider.values().sum::<u64>() == 5_844 + 1_641,
    );
    c.finish(format!("{en} / {other} / {geo}, total {}", table.grand_total()))
}

fn class_weight_checks() -> Outcome {
    let mut c = Checks::default();
    for k in 2..=16usize {
        for per in [1u64, 7, 250, 10_000] {
            let w = class_weights(&ClassFrequencyTable::new(vec![per; k])).map_err(|e| e.to_string())?;
            let want = 1.0 - 1.0 / k as f64;
            c.that(format!("K={k} per={per}: {:?}", w.0), w.0.iter().all(|&v| v == want));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..200 {
        let logits: Vec<f64> = (0..9).map(|_| rng.random_range(-15.0..15.0)).collect();
        let label = rng.random_range(0..9);
        let (a, b) = (rng.random_range(0.0..4.0), rng.random_range(0.0..4.0));
        let at = |w: f64| {
            let mut ws = ClassWeights::uniform(9);
            ws.0[label] = w;
            weighted_loss(&logits, label, &ws).unwrap()
        };
        let unit = at(1.0);
        let lin = (at(a + b) - at(a) - at(b)).abs().max((at(a) - a * unit).abs());
        c.that(format!("non-linear by {lin:e}"), lin <= 1e-12 * (1.0 + unit * (a + b)));
    }
    let uniform = weighted_loss(&[0.3; 9], 4, &ClassWeights::uniform(9)).map_err(|e| e.to_string())?;
    c.close("uniform-logit loss", uniform, 9f64.ln(), 1e-9);
    c.finish(format!("uniform loss {uniform:.12}"))
}

fn gradient_check() -> Outcome {
    let t0 = Instant::now();
    let arch = ArchitectureDescriptor {
        input_size: 12,
        in_channels: 3,
        width: 4,
        stem_kernel: 3,
        stem_stride: 2,
        pool: 2,
        blocks: 2,
        num_classes: 9,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut model = Model::new(arch, 3).map_err(|e| e.to_string())?;
    for v in model.params.iter_mut() {
        *v += rng.random_range(-0.05..0.05);
    }
    let labels = [1usize, 8, 3, 5];
    let x: Vec<f64> = (0..labels.len() * arch.input_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let w = ClassWeights((0..9).map(|k| 0.2 + 0.09 * k as f64).collect());
    let loss_at = |m: &Model| {
        let t = m.clone().forward_train(&x, labels.len()).unwrap();
        batch_loss(&t.logits, &labels, &w).unwrap().0
    };
    let trace = model.clone().forward_train(&x, labels.len()).map_err(|e| e.to_string())?;
    let (_, dz) = batch_loss(&trace.logits, &labels, &w).map_err(|e| e.to_string())?;
    let g = model.backward(&trace, &dz);

    let layout = arch.param_layout();
    let h = 1e-5;
    let mut c = Checks::default();
    let mut worst = 0.0f64;
    let mut checked = 0;
    let mut draws = 0;
    while checked < 2 * layout.len().max(20) {
        draws += 1;
        if draws > 100_000 {
            return Err(format!("only {checked} parameters with a usable gradient"));
        }
        let spec = &layout[checked % layout.len()];
        let i = spec.offset + rng.random_range(0..spec.len());
        if g[i].abs() < 1e-6 {
            continue;
        }
        let orig = model.params[i];
        model.params[i] = orig + h;
        let lp = loss_at(&model);
        model.params[i] = orig - h;
        let lm = loss_at(&model);
        model.params[i] = orig;
        let num = (lp - lm) / (2.0 * h);
        let rel = (g[i] - num).abs() / g[i].abs().max(num.abs());
        worst = worst.max(rel);
        c.that(format!("{}[{}] rel error {rel:e}", spec.name, i - spec.offset), rel < 1e-4);
        checked += 1;
    }
    within_budget(&mut c, t0, Duration::from_secs(60));
    c.finish(format!("{checked} parameters over {} tensors, worst relative error {worst:.2e}", layout.len()))
}

fn training_sanity() -> Outcome {
    let t0 = Instant::now();
    let config = TrainConfig {
        max_epochs: 30,
        ..TrainConfig::default()
    };
    let mut c = Checks::default();
    c.that("batch size", config.batch_size == 10);
    c.that("initial lr", config.initial_lr == 1e-4);
    c.that("first decay at epoch 10", config.lr_at(9) == 1e-4 && config.lr_at(10) < 1e-4);
    c.that("input 224", config.architecture.input_size == 224);
    let data = pattern_dataset(50, 5, 224, 7);
    let norm = compute_norm_stats(data.iter().map(|s| &s.image)).map_err(|e| e.to_string())?;
    let out = train(&config, &data, &[], &norm, None, 7).map_err(|e| e.to_string())?;
    let epochs = out.last.history.len();
    c.that(format!("{epochs} epochs"), epochs <= 30);
    let (_, acc, _) = evaluate_samples(&out.last.model, &data, &norm, &out.last.weights, 10).map_err(|e| e.to_string())?;
    c.that(format!("train accuracy {:.1}%", 100.0 * acc), acc >= 0.95);
    within_budget(&mut c, t0, Duration::from_secs(300));
    c.finish(format!("train accuracy {:.1}% after {epochs} epochs", 100.0 * acc))
}

fn random_manifest(rng: &mut ChaCha8Rng) -> Manifest {
    let mut m = Manifest::new();
    let n = rng.random_range(1..200);
    for k in 0..n {
        let class = ClassId::ALL[rng.random_range(0..ClassId::ALL.len())];
        let provider = if class.is_negative() {
            [ProviderId::Bdd, ProviderId::Cityscapes, ProviderId::Geograph][rng.random_range(0..3)]
        } else {
            [ProviderId::Google, ProviderId::Bing, ProviderId::Flickr, ProviderId::Geograph][rng.random_range(0..4)]
        };
        let mut r = ImageRecord::new(format!("r{k:03}"), provider, class);
        r.curation_status = [CurationStatus::Pending, CurationStatus::Accepted, CurationStatus::Accepted, CurationStatus::Rejected]
            [rng.random_range(0..4)];
        if provider == ProviderId::Geograph && rng.random_bool(0.95) {
            r.geotag = Some(match rng.random_range(0..4) {
                // Mid Wales by coordinates.
                0 => GeoTag { lat: 52.4, lon: -3.7, region: None },
                1 => GeoTag { lat: 0.0, lon: 0.0, region: Some("wales".into()) },
                2 => GeoTag { lat: rng.random_range(50.5..53.5), lon: rng.random_range(-2.5..1.5), region: None },
                _ => GeoTag { lat: 56.5, lon: -4.2, region: None },
            });
        }
        m.insert(r).unwrap();
    }
    m
}

fn split_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let regions = RegionMap::default();
    let ratios = SplitRatios::new(0.7, 0.2, 0.1).map_err(|e| e.to_string())?;
    let mut c = Checks::default();
    let mut worst = 0.0f64;
    let (mut wales_test, mut harvested) = (0, 0);
    for trial in 0..1000 {
        let m = random_manifest(&mut rng);
        let seed = rng.random::<u64>();
        if let Ok(a) = assign_splits(&m, ratios, seed) {
            c.that(format!("trial {trial}: split not deterministic"), assign_splits(&m, ratios, seed).ok().as_ref() == Some(&a));
            for class in ClassId::ALL {
                let n = a.accepted().filter(|r| r.label == class).count() as f64;
                for (s, want) in [(Split::Train, 0.7), (Split::Val, 0.2), (Split::Test, 0.1)] {
                    let got = a.in_split(s).filter(|r| r.label == class).count() as f64;
                    let dev = (got - want * n).abs();
                    worst = worst.max(dev);
                    c.that(format!("trial {trial}: {class} {s:?} off by {dev:.2}"), dev <= 1.0 + 1e-9);
                }
            }
            c.that(
                format!("trial {trial}: split set on non-accepted record"),
                a.records.values().all(|r| r.split.is_some() == r.is_accepted()),
            );
        }
        if let Ok((g, _)) = geo_stratify(&m, &regions, &GEO_CLASSES, seed) {
            for r in g.records.values() {
                let wales = r.geotag.as_ref().is_some_and(|t| regions.resolve(t) == Region::Wales);
                if r.provider == ProviderId::Geograph && wales {
                    c.that(format!("trial {trial}: Wales record {} in {:?}", r.id, r.split), !matches!(r.split, Some(Split::Train | Split::Val)));
                    wales_test += usize::from(r.split == Some(Split::Test));
                }
                if r.provider != ProviderId::Geograph && r.split.is_some() {
                    harvested += 1;
                    c.that(format!("trial {trial}: harvested record {} in test", r.id), r.split != Some(Split::Test));
                }
            }
        }
    }
    c.that(format!("only {wales_test} Wales test records generated"), wales_test > 1000);
    c.finish(format!(
        "1000 manifests, worst per-class deviation {worst:.2}, {wales_test} Wales records in test, {harvested} harvested placements"
    ))
}

fn crop_rule() -> Outcome {
    let mut c = Checks::default();
    let win = CropRule::default().window(1280, 720).map_err(|e| e.to_string())?;
    c.that(format!("1280x720 window {win:?}"), win == (160, 0, 960, 540));
    let big = crop_ego(&Image::new(1280, 720)).map_err(|e| e.to_string())?;
    c.that("cropped 1280x720 image size", (big.width, big.height) == (960, 540));
    c.that("1280x720 aspect", big.width * 720 == big.height * 1280);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let (w, h) = (rng.random_range(8..4000usize), rng.random_range(4..4000usize));
        let (x0, y0, cw, ch) = CropRule::default().window(w, h).map_err(|e| e.to_string())?;
        // Each side is the floor of three quarters; the kept fractions may
        // differ only by that rounding. Flooring leaves the right margin up
        // to two columns wider than the left.
        let (ew, eh) = (0.75 * w as f64, 0.75 * h as f64);
        c.that(format!("{w}x{h} -> {cw}x{ch}"), ew - 1.0 < cw as f64 && cw as f64 <= ew && eh - 1.0 < ch as f64 && ch as f64 <= eh);
        let diff = (cw as f64 / w as f64 - ch as f64 / h as f64).abs();
        worst = worst.max(diff * w.min(h) as f64);
        c.that(format!("{w}x{h}: aspect drift {diff:e}"), diff < 1.0 / w.min(h) as f64);
        c.that(format!("{w}x{h}: window not centred"), y0 == 0 && x0 + cw <= w && (w - cw - x0).abs_diff(x0) <= 2);
    }
    c.finish(format!("1280x720 -> 960x540; 1000 random sizes, worst drift {worst:.3} of 1/min(w,h)"))
}

fn png(img: &Image) -> Vec<u8> {
    img.encode_png()
}

/// Corpus of distinct pattern images plus injected exact copies, re-encoded
/// copies and resized copies. Returns items and the number injected.
fn dedup_corpus(rng: &mut ChaCha8Rng, size: usize) -> (Vec<DedupItem>, usize) {
    let mut items = Vec::new();
    let mut originals: Vec<(Image, Vec<u8>)> = Vec::new();
    let mut injected = 0;
    while items.len() < size {
        let k = items.len();
        let rank = rng.random_range(1..100);
        if originals.is_empty() || rng.random_bool(0.6) {
            let side = rng.random_range(24..64);
            let img = pattern_image(rng.random_range(0..5), side, rng);
            let bytes = png(&img);
            originals.push((img, bytes.clone()));
            items.push(DedupItem { id: format!("img{k:03}"), rank, bytes });
        } else {
            let (img, bytes) = originals[rng.random_range(0..originals.len())].clone();
            let bytes = match rng.random_range(0..3) {
                0 => bytes,
                1 => {
                    // Same pixels, different encoder settings.
                    let mut out = Vec::new();
                    let rgb = img.to_rgb8();
                    PngEncoder::new_with_quality(&mut out, CompressionType::Best, FilterType::Paeth)
                        .write_image(rgb.as_raw(), rgb.width(), rgb.height(), ExtendedColorType::Rgb8)
                        .unwrap();
                    out
                }
                _ => {
                    let f = rng.random_range(0.5..1.6);
                    let (w, h) = (((img.width as f64 * f) as usize).max(9), ((img.height as f64 * f) as usize).max(8));
                    png(&resize(&img, w, h))
                }
            };
            injected += 1;
            items.push(DedupItem { id: format!("img{k:03}"), rank, bytes });
        }
    }
    (items, injected)
}

/// All-pairs reference: exact groups by decoded pixels, then connected
/// components over every pair of group representatives.
fn brute_force_kept(items: &[DedupItem], threshold: u32) -> BTreeSet<String> {
    let best = |v: &[usize]| *v.iter().min_by_key(|&&i| (items[i].rank, items[i].id.clone())).unwrap();
    let sums: Vec<String> = items.iter().map(|i| pixel_checksum(&i.bytes).unwrap()).collect();
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, s) in sums.iter().enumerate() {
        groups.entry(s).or_default().push(i);
    }
    let reps: Vec<usize> = groups.values().map(|g| best(g)).collect();
    let hashes: Vec<u64> = reps.iter().map(|&i| perceptual_hash(&items[i].bytes).unwrap().bits).collect();
    let n = reps.len();
    let mut label: Vec<usize> = (0..n).collect();
    // Propagate the minimum label until stable.
    loop {
        let mut changed = false;
        for a in 0..n {
            for b in 0..n {
                if (hashes[a] ^ hashes[b]).count_ones() <= threshold && label[b] < label[a] {
                    label[a] = label[b];
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    let mut comps: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (k, &l) in label.iter().enumerate() {
        comps.entry(l).or_default().push(reps[k]);
    }
    comps.values().map(|m| items[best(m)].id.clone()).collect()
}

fn dedup_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut c = Checks::default();
    let (mut total, mut injected, mut removed) = (0, 0, 0);
    for (corpus, size) in [20usize, 60, 120, 200, 200].into_iter().enumerate() {
        let (items, inj) = dedup_corpus(&mut rng, size);
        for threshold in [0, 4, DEFAULT_THRESHOLD, 20] {
            let out = dedup_scan(&items, threshold).map_err(|e| e.to_string())?;
            let oracle = brute_force_kept(&items, threshold);
            c.that(
                format!("corpus {corpus} threshold {threshold}: {} kept vs oracle {}", out.kept.len(), oracle.len()),
                out.kept == oracle,
            );
            c.that(format!("corpus {corpus}: quarantined {:?}", out.quarantined), out.quarantined.is_empty());
            if threshold == DEFAULT_THRESHOLD {
                removed += out.duplicates.len();
            }
        }
        total += items.len();
        injected += inj;
    }
    c.that(format!("{removed} removed of {injected} injected"), removed >= injected);
    c.finish(format!("{total} images, {injected} injected duplicates, {removed} removed at threshold {DEFAULT_THRESHOLD}"))
}

fn tsne_properties() -> Outcome {
    let t0 = Instant::now();
    let (points, labels) = gaussian_clusters(2, 250, 10, 10.0, 2);
    let config = TsneConfig { seed: 1, ..TsneConfig::default() };
    let mut c = Checks::default();
    c.that("perplexity 50, lr 500, 1000 iterations", (config.perplexity, config.learning_rate, config.iterations) == (50.0, 500.0, 1000));
    let out = tsne_points(&points, &config).map_err(|e| e.to_string())?;
    let target = 50f64.log2();
    let worst_h = out.entropies.iter().map(|h| (h - target).abs()).fold(0.0, f64::max);
    c.that(format!("{} rows calibrated", out.entropies.len()), out.entropies.len() == 500);
    c.that(format!("entropy off by {worst_h:e} bits"), worst_h <= 1e-5);
    let kl = &out.kl_history;
    let mut rises = 0;
    for t in config.exaggeration_iters..kl.len().saturating_sub(50) {
        if kl[t + 50] > kl[t] {
            rises += 1;
        }
    }
    c.that(format!("KL rose over {rises} trailing 50-iteration windows"), rises == 0);
    let s = silhouette(&out.coords, &labels);
    c.that(format!("silhouette {s:.3}"), s > 0.5);
    within_budget(&mut c, t0, Duration::from_secs(120));
    c.finish(format!("N=500, max entropy error {worst_h:.2e} bits, final KL {:.4}, silhouette {s:.3}", kl[kl.len() - 1]))
}

fn cam_correctness() -> Outcome {
    let mut c = Checks::default();
    // Two 2x2 channels, weights (1, -0.5):
    //   [1 2; 3 4] - 0.5 [4 0; 2 8] = [-1 2; 2 0] -> ReLU [0 2; 2 0].
    let features = [1.0, 2.0, 3.0, 4.0, 4.0, 0.0, 2.0, 8.0];
    let map = cam_from_features(ClassId::Snow, &features, &[1.0, -0.5], (2, 2), (2, 2)).map_err(|e| e.to_string())?;
    c.that(format!("raw {:?}", map.raw), map.raw == [0.0, 2.0, 2.0, 0.0]);
    c.that(format!("normalised {:?}", map.values), map.values == [0.0, 1.0, 1.0, 0.0]);
    // Upsampling 2x2 -> 4x4 with half-pixel centres: the second row is
    // 0.75·row0 + 0.25·row1.
    let up = cam_from_features(ClassId::Snow, &features, &[1.0, -0.5], (2, 2), (4, 4)).map_err(|e| e.to_string())?;
    let want = [
        0.0, 0.5, 1.5, 2.0, //
        0.5, 0.75, 1.25, 1.5, //
        1.5, 1.25, 0.75, 0.5, //
        2.0, 1.5, 0.5, 0.0,
    ];
    c.that(format!("upsampled {:?}", up.raw), up.raw == want);

    let arch = ArchitectureDescriptor {
        input_size: 32,
        in_channels: 3,
        width: 6,
        stem_kernel: 3,
        stem_stride: 2,
        pool: 2,
        blocks: 1,
        num_classes: 9,
    };
    let img = pattern_image(2, 32, &mut ChaCha8Rng::seed_from_u64(8));
    let chw = NormStats::identity().normalize_chw(&img);
    let hw = arch.feature_size() * arch.feature_size();
    let sum_for = |fc: &dyn Fn(usize) -> f64| {
        let mut m = Model::new(arch, 4).unwrap();
        for (i, v) in m.tensor_mut("fc.weight").unwrap().iter_mut().enumerate() {
            *v = fc(i);
        }
        let f = m.forward_eval(&chw, 1).unwrap();
        let (w, _) = m.class_map_weights(ClassId::Fire.index()).unwrap();
        weighted_sum(&f.features, &w, hw).unwrap()
    };
    let w1 = |i: usize| (i as f64 * 0.61).sin();
    let w2 = |i: usize| (i as f64 * 0.23).cos() - 0.3;
    let (a, b) = (2.5, -1.25);
    let s1 = sum_for(&w1);
    let s2 = sum_for(&w2);
    let mix = sum_for(&|i| a * w1(i) + b * w2(i));
    let worst = (0..hw).map(|k| (mix[k] - a * s1[k] - b * s2[k]).abs()).fold(0.0, f64::max);
    c.that(format!("linearity error {worst:e}"), worst <= 1e-9);
    c.that("non-trivial map", s1.iter().any(|v| v.abs() > 1e-6));
    c.finish(format!("hand arithmetic exact, linearity error {worst:.1e}"))
}
