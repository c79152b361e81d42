//! Acceptance run: prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.
//!
//! `cargo test -p irof-cli --test acceptance --release`

mod common;

use std::collections::VecDeque;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use common::*;
use irof::backend::oracle::DiskModel;
use irof::backend::Classifier;
use irof::baselines::random_ranking;
use irof::dataset::{segment_dataset, Dataset};
use irof::degradation::{build_irof_schedule, degrade, Replacement};
use irof::engine::{aoc, evaluate, EngineConfig, Method};
use irof::imagery::{compute_dataset_mean, DatasetMean, Image, ValueRange};
use irof::segmentation::{slic_segment, SegmentMap, SlicParams};
use irof::stats::{paired_t_test, student_t_two_sided};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn per_image(results: &Value, method: &str) -> (Vec<String>, Vec<f64>, f64) {
    let r = results["results"]
        .as_array()
        .unwrap()
        .iter()
        .find(|r| r["method_id"] == method)
        .unwrap();
    (
        serde_json::from_value(r["image_ids"].clone()).unwrap(),
        serde_json::from_value(r["per_image_aoc"].clone()).unwrap(),
        r["irof_score"].as_f64().unwrap(),
    )
}

fn evaluate_cli(fx: &DiskFixture, out: &Path, seed: u64) -> (std::process::Output, Duration) {
    let start = Instant::now();
    let o = run(&[
        "evaluate",
        "--images", fx.images.to_str().unwrap(),
        "--heatmaps", &format!("gt={}", fx.gt.display()),
        "--heatmaps", "random=random",
        "--backend", &fx.backend(),
        "--target-class", "1",
        "--seed", &seed.to_string(),
        "--out-dir", out.to_str().unwrap(),
    ]);
    (o, start.elapsed())
}

fn oracle_separation(root: &Path) -> Outcome {
    let fx = disk_fixture(&root.join("c1"), 40, 2024);
    let out = root.join("c1-out");
    let (o, elapsed) = evaluate_cli(&fx, &out, 7);
    if !o.status.success() {
        return outcome(false, format!("evaluate failed: {}", stderr(&o)));
    }
    let results = read_json(&out.join("results.json"));
    let (gt_ids, gt, gt_score) = per_image(&results, "gt");
    let (rnd_ids, rnd, rnd_score) = per_image(&results, "random");
    if gt_ids != rnd_ids || gt.len() != 40 {
        return outcome(false, "per-image results do not pair up");
    }
    let test = paired_t_test(&gt, &rnd).unwrap();
    let diff = gt_score - rnd_score;
    outcome(
        diff > 10.0 && test.p_value < 1e-3 && elapsed < Duration::from_secs(120),
        format!(
            "IROF gt {gt_score:.1}, random {rnd_score:.1}, diff {diff:.1} (> 10), p {:.2e} (< 1e-3), runtime {:.1}s (< 120s)",
            test.p_value,
            elapsed.as_secs_f64()
        ),
    )
}

fn sensitivity_ordering(root: &Path) -> Outcome {
    let mut wins = 0;
    let mut details = Vec::new();
    for seed in 1..=5u64 {
        let fx = disk_fixture(&root.join(format!("c2-{seed}")), 40, seed);
        let out = root.join(format!("c2-{seed}-out"));
        let o = run(&[
            "sensitivity",
            "--images", fx.images.to_str().unwrap(),
            "--heatmaps", &format!("gt={}", fx.gt.display()),
            "--backend", &fx.backend(),
            "--target-class", "1",
            "--fraction", "0.1",
            "--seed", &seed.to_string(),
            "--out-dir", out.to_str().unwrap(),
        ]);
        if !o.status.success() {
            return outcome(false, format!("sensitivity failed: {}", stderr(&o)));
        }
        let report = read_json(&out.join("sensitivity.json"));
        let t = |evaluator: &str| {
            report["cells"]
                .as_array()
                .unwrap()
                .iter()
                .find(|c| c["evaluator"] == evaluator)
                .and_then(|c| c["t"].as_f64())
                .map_or(f64::NAN, f64::abs)
        };
        let (irof, pixel, samek) = (t("irof-mean"), t("pixel-mean"), t("samek"));
        if irof >= pixel && irof >= samek {
            wins += 1;
        }
        details.push(format!("seed {seed}: |t| irof {irof:.1} pixel {pixel:.1} samek {samek:.1}"));
    }
    outcome(wins >= 4, format!("{wins}/5 seeds (need 4); {}", details.join("; ")))
}

fn student_t() -> Outcome {
    let mut pass = true;
    let mut details = Vec::new();
    for (t, n, expected) in [(5.44, 40, 3.60e-06), (2.10, 40, 4.25e-02), (7.81, 50, 2.42e-09)] {
        let p = student_t_two_sided(t, (n - 1) as f64);
        let rel = (p - expected).abs() / expected;
        pass &= rel <= 0.05;
        details.push(format!(
            "t={t} n={n}: p {p:.3e} vs {expected:.2e} ({:.1}% off, {})",
            100.0 * rel,
            if rel <= 0.05 { "ok" } else { "FAIL" }
        ));
    }
    outcome(pass, details.join("; "))
}

fn aoc_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let len = rng.random_range(1..=301);
        let mut curve = vec![1.0];
        curve.extend((1..len).map(|_| rng.random_range(-0.2..1.2)));
        // Independent oracle: plain reverse-order sum of 1 - f.
        let oracle = curve.iter().rev().map(|f| 1.0 - f).sum::<f64>() / len as f64;
        worst = worst.max((aoc(&curve) - oracle).abs());
    }
    let exact = aoc(&[1.0, 0.0, 0.0]);
    outcome(
        worst <= 1e-9 && exact == 2.0 / 3.0,
        format!("max |error| {worst:.1e} over 1000 curves (<= 1e-9); [1,0,0] -> {exact}"),
    )
}

/// Smooth background, a few flat shapes and mild noise.
fn random_scene(rng: &mut ChaCha8Rng, side: usize) -> Image {
    let base: [f32; 3] = [rng.random(), rng.random(), rng.random()];
    let grad: [f32; 3] = [rng.random_range(-0.4..0.4), rng.random_range(-0.4..0.4), rng.random_range(-0.4..0.4)];
    let shapes: Vec<(f64, f64, f64, [f32; 3])> = (0..rng.random_range(3..9))
        .map(|_| {
            (
                rng.random_range(0.0..side as f64),
                rng.random_range(0.0..side as f64),
                rng.random_range(4.0..side as f64 / 3.0),
                [rng.random(), rng.random(), rng.random()],
            )
        })
        .collect();
    let mut data = Vec::with_capacity(side * side * 3);
    for r in 0..side {
        for c in 0..side {
            let mut px: [f32; 3] = std::array::from_fn(|k| base[k] + grad[k] * (r + c) as f32 / (2 * side) as f32);
            for &(sr, sc, rad, col) in &shapes {
                if (r as f64 - sr).powi(2) + (c as f64 - sc).powi(2) <= rad * rad {
                    px = col;
                }
            }
            for v in px {
                data.push((v + rng.random_range(-0.03..0.03)).clamp(0.0, 1.0));
            }
        }
    }
    Image::new(side, side, 3, data, ValueRange::UNIT).unwrap()
}

fn connected(map: &SegmentMap) -> bool {
    let (h, w) = (map.height(), map.width());
    let labels = map.labels();
    let mut seen = vec![false; labels.len()];
    let mut components = 0;
    for start in 0..labels.len() {
        if seen[start] {
            continue;
        }
        components += 1;
        seen[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(p) = queue.pop_front() {
            let (r, c) = (p / w, p % w);
            let mut visit = |q: usize| {
                if !seen[q] && labels[q] == labels[p] {
                    seen[q] = true;
                    queue.push_back(q);
                }
            };
            if r > 0 { visit(p - w); }
            if r + 1 < h { visit(p + w); }
            if c > 0 { visit(p - 1); }
            if c + 1 < w { visit(p + 1); }
        }
    }
    components == map.segment_count()
}

fn slic_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut failures = Vec::new();
    let mut range = (f64::INFINITY, 0.0f64);
    for i in 0..20 {
        let image = random_scene(&mut rng, 64);
        for target in [50usize, 300] {
            let params = SlicParams {
                target_segments: target,
                ..Default::default()
            };
            let a = slic_segment(&image, &params).unwrap();
            let b = slic_segment(&image, &params).unwrap();
            let k = a.segment_count();
            let mut used = vec![false; k];
            let partition = a.labels().len() == 64 * 64
                && a.labels().iter().all(|&l| (l as usize) < k && {
                    used[l as usize] = true;
                    true
                })
                && used.iter().all(|&u| u);
            let ratio = k as f64 / target as f64;
            range = (range.0.min(ratio), range.1.max(ratio));
            let checks = [
                ("partition", partition),
                ("4-connectivity", connected(&a)),
                ("determinism", a == b),
                ("count", (0.5..=1.5).contains(&ratio)),
            ];
            for (name, ok) in checks {
                if !ok {
                    failures.push(format!("image {i} target {target}: {name} ({k} segments)"));
                }
            }
        }
    }
    outcome(
        failures.is_empty(),
        format!(
            "40 segmentations, count/target in [{:.2}, {:.2}]{}",
            range.0,
            range.1,
            if failures.is_empty() { String::new() } else { format!("; {}", failures.join(", ")) }
        ),
    )
}

fn calibration(root: &Path) -> Outcome {
    let fx = disk_fixture(&root.join("c6"), 40, 606);
    let dataset = Dataset::load_dir(&fx.images, ValueRange::UNIT).unwrap();
    let segs = segment_dataset(&dataset, &SlicParams::default(), None).unwrap().maps;
    let model: DiskModel = serde_json::from_str(&std::fs::read_to_string(&fx.disks).unwrap()).unwrap();
    let classifier = Classifier::new(Box::new(model), 64, true);
    let engine = EngineConfig {
        target_class: Some(1),
        ..Default::default()
    };
    let reps = 50;
    let mut rejections = 0;
    for rep in 0..reps as u64 {
        let scores = |id: &str, seed: u64| {
            evaluate(&dataset, Some(&segs), &Method::random(id, seed), &classifier, &engine)
                .unwrap()
                .result
                .per_image_aoc
        };
        let a = scores("a", 1000 + 2 * rep);
        let b = scores("b", 1001 + 2 * rep);
        if paired_t_test(&a, &b).unwrap().p_value < 0.05 {
            rejections += 1;
        }
    }
    let rate = rejections as f64 / reps as f64;
    outcome(
        (rate - 0.05).abs() <= 0.07,
        format!("{rejections}/{reps} repetitions with p < 0.05, rate {:.0}% (5% ± 7%)", 100.0 * rate),
    )
}

fn degradation_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut failures = Vec::new();
    for case in 0..100 {
        let (h, w) = (rng.random_range(6..40), rng.random_range(6..40));
        let channels = if rng.random_bool(0.5) { 3 } else { 1 };
        let range = if rng.random_bool(0.8) { ValueRange::UNIT } else { ValueRange::SYMMETRIC };
        let data = (0..h * w * channels)
            .map(|_| rng.random_range(range.min..=range.max))
            .collect();
        let image = Image::new(h, w, channels, data, range).unwrap();
        let params = SlicParams {
            target_segments: rng.random_range(2..60),
            compactness: rng.random_range(1.0..40.0),
            ..Default::default()
        };
        let segs = slic_segment(&image, &params).unwrap();
        let ranking = random_ranking(segs.segment_count(), rng.random());
        let mean = if rng.random_bool(0.5) {
            compute_dataset_mean([&image]).unwrap()
        } else {
            DatasetMean {
                per_channel_mean: (0..channels).map(|_| rng.random_range(range.min..=range.max)).collect(),
            }
        };
        let replacement = if rng.random_bool(0.7) { Replacement::Mean } else { Replacement::Black };
        let fill: Vec<f32> = match replacement {
            Replacement::Mean => mean.per_channel_mean.clone(),
            _ => vec![range.min; channels],
        };
        let schedule = build_irof_schedule(&ranking, replacement).unwrap();
        let seq = degrade(&image, &schedule, Some(&segs), Some(&mean)).unwrap();
        let units = seq.unit_count();
        let unit_of = {
            let mut u = vec![usize::MAX; h * w];
            for k in 0..units {
                for &p in seq.unit_pixels(k) {
                    u[p] = k;
                }
            }
            u
        };
        let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        let frames: Vec<_> = seq.clone().collect();
        if frames.len() != units + 1 {
            failures.push(format!("case {case}: {} frames for {units} units", frames.len()));
            continue;
        }
        if bits(frames[0].image.data()) != bits(image.data()) {
            failures.push(format!("case {case}: frame 0 differs from the input"));
        }
        'frames: for (k, frame) in frames.iter().enumerate() {
            for p in 0..h * w {
                let expected = if unit_of[p] < k { &fill[..] } else { image.pixel(p) };
                if bits(frame.image.pixel(p)) != bits(expected) {
                    failures.push(format!("case {case}: frame {k} pixel {p} not monotone"));
                    break 'frames;
                }
            }
        }
        if replacement == Replacement::Mean {
            let last = &frames[units].image;
            if !(0..h * w).all(|p| bits(last.pixel(p)) == bits(&fill)) {
                failures.push(format!("case {case}: final frame is not the constant mean"));
            }
        }
    }
    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            "100 fuzzed (image, ranking) pairs".to_owned()
        } else {
            failures.join("; ")
        },
    )
}

fn evaluate_determinism(root: &Path) -> Outcome {
    let fx = disk_fixture(&root.join("c8"), 40, 808);
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let out = root.join(format!("c8-{run}"));
        let (o, _) = evaluate_cli(&fx, &out, 42);
        if !o.status.success() {
            return outcome(false, format!("evaluate failed: {}", stderr(&o)));
        }
        outputs.push(std::fs::read(out.join("results.json")).unwrap());
    }
    outcome(
        outputs[0] == outputs[1],
        format!("results.json {} bytes, identical: {}", outputs[0].len(), outputs[0] == outputs[1]),
    )
}

fn main() {
    let root = tempfile::tempdir().unwrap();
    let criteria: [(&str, &dyn Fn() -> Outcome); 8] = [
        ("1 oracle separation", &|| oracle_separation(root.path())),
        ("2 sensitivity ordering", &|| sensitivity_ordering(root.path())),
        ("3 student-t p-values", &student_t),
        ("4 AOC oracle", &aoc_oracle),
        ("5 SLIC properties", &slic_properties),
        ("6 random-vs-random calibration", &|| calibration(root.path())),
        ("7 degradation invariants", &degradation_invariants),
        ("8 evaluate determinism", &|| evaluate_determinism(root.path())),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let o = check();
        failed += usize::from(!o.pass);
        println!("criterion {name}: {} ({})", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    println!("{} of 8 criteria passed", 8 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
