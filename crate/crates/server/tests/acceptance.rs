//! Acceptance suite: one PASS/FAIL line per primary criterion. Runs as a
//! plain binary (`harness = false`) and exits non-zero if any criterion fails.

mod common;

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::{Command, ExitCode};
use std::time::Instant;

use aitchview_core::cluster::{inertia, kmeans, nearest_centroid};
use aitchview_core::composition::{closure, clr, clr_inv, perturb, power, Composition};
use aitchview_core::dataset::{ImageRef, SpotRecord};
use aitchview_core::embedding::{pca_fit, pca_project, ClrMatrix, Embedding};
use aitchview_core::session::{bar_subset, render_mask, MaskStyle, Selection};
use aitchview_core::Dataset;
use aitchview_server::AppState;
use axum::http::{Method, StatusCode};
use common::{send, send_json};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

const TOL: f64 = 1e-9;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_parts(rng: &mut ChaCha8Rng, d: usize, spread: f64) -> Vec<f64> {
    (0..d).map(|_| rng.random_range(-spread..spread).exp()).collect()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

// ---------------------------------------------------------------- Aitchison

fn aitchison_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for case in 0..1000 {
        let d = rng.random_range(2..=12);
        let v = random_parts(&mut rng, d, 5.0);
        let c = closure(&v).unwrap();
        let z = clr(&c).unwrap();
        let fail = |what: &str, err: f64| format!("case {case} (d = {d}): {what} off by {err:e}");

        let sum = z.coords().iter().sum::<f64>().abs();
        ensure(sum < TOL, || fail("sum(clr)", sum))?;

        let back = clr_inv(&z).unwrap();
        let err = max_abs_diff(back.parts(), c.parts());
        ensure(err < TOL, || fail("clr_inv(clr(c))", err))?;
        worst = worst.max(err);

        for lambda in [1e-6, 1.0, 1e6] {
            let scaled: Vec<f64> = v.iter().map(|x| x * lambda).collect();
            let err = max_abs_diff(clr(&closure(&scaled).unwrap()).unwrap().coords(), z.coords());
            ensure(err < TOL, || fail(&format!("scale invariance at {lambda:e}"), err))?;
            worst = worst.max(err);
        }

        let b = closure(&random_parts(&mut rng, d, 5.0)).unwrap();
        let zb = clr(&b).unwrap();
        let sum: Vec<f64> = z.coords().iter().zip(zb.coords()).map(|(x, y)| x + y).collect();
        let err = max_abs_diff(clr(&perturb(&c, &b).unwrap()).unwrap().coords(), &sum);
        ensure(err < TOL, || fail("perturbation homomorphism", err))?;
        worst = worst.max(err);

        let t = rng.random_range(-3.0..3.0);
        let scaled: Vec<f64> = z.coords().iter().map(|x| t * x).collect();
        let err = max_abs_diff(clr(&power(&c, t).unwrap()).unwrap().coords(), &scaled);
        ensure(err < TOL, || fail(&format!("powering homomorphism at t = {t}"), err))?;
        worst = worst.max(err);
    }
    Ok(format!("1000 compositions, worst deviation {worst:.1e}"))
}

// ---------------------------------------------------------------------- PCA

fn random_clr_matrix(rng: &mut ChaCha8Rng, n: usize, d: usize, spread: f64) -> ClrMatrix {
    let mut data = Vec::with_capacity(n * d);
    for _ in 0..n {
        let c = closure(&random_parts(rng, d, spread)).unwrap();
        data.extend_from_slice(clr(&c).unwrap().coords());
    }
    ClrMatrix::new(n, d, data).unwrap()
}

/// Dense covariance (divisor n-1) eigendecomposition; axes sorted by
/// descending eigenvalue and flipped so the largest-magnitude entry is
/// positive.
fn pca_oracle(m: &ClrMatrix) -> (Vec<f64>, Vec<f64>, Vec<Vec<f64>>) {
    let (n, d) = (m.rows(), m.cols());
    let x = DMatrix::from_row_slice(n, d, m.as_slice());
    let mean = x.row_mean();
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= &mean;
    }
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let axes = order
        .iter()
        .map(|&i| {
            let mut v: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
            let big = v.iter().copied().fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
            if big < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            v
        })
        .collect();
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    (mean.iter().copied().collect(), values, axes)
}

#[allow(clippy::needless_range_loop)]
fn pca_oracle_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for case in 0..200 {
        // n, d >= 3 keep the top two axes unique up to sign.
        let n = rng.random_range(3..=12);
        let d = rng.random_range(3..=8);
        let m = random_clr_matrix(&mut rng, n, d, 3.0);
        let model = pca_fit(&m).unwrap();
        let emb = pca_project(&model, &m).unwrap();
        let (mean, values, axes) = pca_oracle(&m);
        let fail = |what: &str, err: f64| format!("case {case} ({n}x{d}): {what} off by {err:e}");
        for k in 0..2 {
            let err = (model.explained_variance[k] - values[k].max(0.0)).abs();
            ensure(err < TOL, || fail(&format!("explained variance {k}"), err))?;
            worst = worst.max(err);
            let err = max_abs_diff(&model.components[k], &axes[k]);
            ensure(err < TOL, || fail(&format!("component {k}"), err))?;
            worst = worst.max(err);
        }
        for (i, row) in m.iter_rows().enumerate() {
            for k in 0..2 {
                let expected: f64 = row.iter().zip(&mean).zip(&axes[k]).map(|((x, mu), a)| (x - mu) * a).sum();
                let err = (emb.coords[i][k] - expected).abs();
                ensure(err < TOL, || fail(&format!("projection of row {i} on axis {k}"), err))?;
                worst = worst.max(err);
            }
        }
    }
    Ok(format!("200 matrices up to 12x8, worst deviation {worst:.1e}"))
}

// ------------------------------------------------------------------ k-means

/// Minimum inertia over all k^n label vectors.
fn exhaustive_optimum(m: &ClrMatrix, k: usize) -> f64 {
    let (n, d) = (m.rows(), m.cols());
    let mut best = f64::INFINITY;
    let mut labels = vec![0usize; n];
    loop {
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (i, &l) in labels.iter().enumerate() {
            counts[l] += 1;
            for (s, x) in sums[l].iter_mut().zip(m.row(i)) {
                *s += x;
            }
        }
        let cost: f64 = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| {
                m.row(i).iter().zip(&sums[l]).map(|(x, s)| (x - s / counts[l] as f64).powi(2)).sum::<f64>()
            })
            .sum();
        best = best.min(cost);
        let mut pos = 0;
        loop {
            if pos == n {
                return best;
            }
            labels[pos] += 1;
            if labels[pos] < k {
                break;
            }
            labels[pos] = 0;
            pos += 1;
        }
    }
}

fn kmeans_oracle_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let instances = 100;
    let mut optimal = 0;
    for case in 0..instances {
        let n = rng.random_range(2..=8);
        let k = rng.random_range(1..=3.min(n));
        let d = rng.random_range(2..=6);
        let m = random_clr_matrix(&mut rng, n, d, 2.0);
        let seed = rng.random::<u64>();
        let c = kmeans(&m, k, seed).map_err(|e| format!("case {case}: {e}"))?;

        // Invariants: required on every instance.
        let fail = |what: String| format!("case {case} (n = {n}, k = {k}): {what}");
        ensure(c.labels.len() == n && c.centroids.len() == k, || fail("shape".into()))?;
        for (i, row) in m.iter_rows().enumerate() {
            let nearest = nearest_centroid(row, &c.centroids).0;
            ensure(nearest == c.labels[i], || fail(format!("row {i} labeled {} but nearest is {nearest}", c.labels[i])))?;
        }
        let recomputed = inertia(&m, &c.labels, &c.centroids);
        ensure((recomputed - c.inertia).abs() < TOL, || fail(format!("reported inertia {} vs {recomputed}", c.inertia)))?;
        for w in c.inertia_history.windows(2) {
            ensure(w[1] <= w[0], || fail(format!("inertia rose {} -> {}", w[0], w[1])))?;
        }

        if (c.inertia - exhaustive_optimum(&m, k)).abs() < TOL {
            optimal += 1;
        }
    }
    let share = optimal as f64 / instances as f64;
    ensure(share >= 0.95, || format!("only {optimal}/{instances} instances reached the optimum"))?;
    Ok(format!("{optimal}/{instances} optimal; invariants hold on all {instances}"))
}

// --------------------------------------------------------------- decimation

fn decimation_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let m = 2000;
    let pc1: Vec<f64> = (0..m).map(|_| rng.random_range(-10.0..10.0)).collect();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| pc1[a].total_cmp(&pc1[b]).then(a.cmp(&b)));
    let embedding = Embedding {
        coords: pc1.iter().map(|&x| [x, 0.0]).collect(),
        pc1_order: order.clone(),
    };
    let subset = bar_subset(&embedding, None, 500).map_err(|e| e.to_string())?;
    let rank: Vec<usize> = {
        let mut r = vec![0; m];
        for (pos, &i) in order.iter().enumerate() {
            r[i] = pos;
        }
        r
    };
    let positions: Vec<usize> = subset.bar_indices.iter().map(|&i| rank[i]).collect();
    ensure(positions.len() == 500, || format!("{} bars", positions.len()))?;
    ensure(positions.windows(2).all(|w| w[0] < w[1]), || "positions not strictly increasing".into())?;
    ensure(positions[0] == 0 && positions[499] == m - 1, || {
        format!("endpoints {} and {}", positions[0], positions[499])
    })?;
    for (i, &p) in positions.iter().enumerate() {
        let expected = (i as f64 * 1999.0 / 499.0).round() as usize;
        ensure(p == expected, || format!("bar {i} at position {p}, expected {expected}"))?;
    }
    Ok("2000 -> 500 strictly increasing positions, both endpoints kept".into())
}

// --------------------------------------------------------------- end to end

fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    let ka = a.iter().max().unwrap() + 1;
    let kb = b.iter().max().unwrap() + 1;
    let mut table = vec![vec![0u64; kb]; ka];
    for (&x, &y) in a.iter().zip(b) {
        table[x][y] += 1;
    }
    let pairs = |c: u64| (c * c.saturating_sub(1) / 2) as f64;
    let index: f64 = table.iter().flatten().map(|&c| pairs(c)).sum();
    let rows: f64 = table.iter().map(|r| pairs(r.iter().sum())).sum();
    let cols: f64 = (0..kb).map(|j| pairs(table.iter().map(|r| r[j]).sum())).sum();
    let total = pairs(a.len() as u64);
    let expected = rows * cols / total;
    let max = (rows + cols) / 2.0;
    if max == expected {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

fn as_usizes(v: &Value) -> Vec<usize> {
    v.as_array().unwrap().iter().map(|x| x.as_u64().unwrap() as usize).collect()
}

fn end_to_end_suite() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let bin = env!("CARGO_BIN_EXE_aitchview");
    let start = Instant::now();
    let status = Command::new(bin)
        .args(["generate", "--preset", "two-regions", "--seed", "0", "--out"])
        .arg(dir.path())
        .status()
        .map_err(|e| e.to_string())?;
    ensure(status.success(), || format!("generate exited with {status}"))?;
    let report_path = dir.path().join("report.json");
    let status = Command::new(bin)
        .args(["analyze", "--k", "2", "--seed", "0", "--manifest"])
        .arg(dir.path().join("manifest.json"))
        .arg("--out")
        .arg(&report_path)
        .status()
        .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed().as_secs_f64();
    ensure(status.success(), || format!("analyze exited with {status}"))?;

    let report: Value = serde_json::from_slice(&fs::read(&report_path).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let truth: Value = serde_json::from_slice(&fs::read(dir.path().join("ground_truth.json")).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let labels = as_usizes(&report["clustering"]["labels"]);
    let regions = as_usizes(&truth["region_labels"]);
    ensure(labels.len() == 2500 && report["d"] == 6, || "unexpected fixture shape".into())?;
    let ari = adjusted_rand_index(&labels, &regions);

    let pc1: Vec<f64> = report["embedding"]["coords"].as_array().unwrap().iter().map(|c| c[0].as_f64().unwrap()).collect();
    let class = |r: usize| -> Vec<f64> { pc1.iter().zip(&regions).filter(|(_, &g)| g == r).map(|(&x, _)| x).collect() };
    let (a, b) = (class(0), class(1));
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let ss = |v: &[f64]| {
        let m = mean(v);
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>()
    };
    let pooled_sd = ((ss(&a) + ss(&b)) / (a.len() + b.len() - 2) as f64).sqrt();
    let separation = (mean(&a) - mean(&b)).abs() / pooled_sd;

    ensure(ari >= 0.99, || format!("ARI {ari:.4} < 0.99"))?;
    ensure(separation >= 5.0, || format!("PC1 separation {separation:.2} pooled SD < 5"))?;
    ensure(elapsed < 5.0, || format!("runtime {elapsed:.2} s >= 5 s"))?;
    Ok(format!("ARI {ari:.4}, PC1 separation {separation:.2} pooled SD, {elapsed:.2} s"))
}

// --------------------------------------------------------------------- mask

fn mask_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (w, h) = (128u32, 128u32);
    let mut revealed_total = 0usize;
    for case in 0..50 {
        let n = rng.random_range(1..=60);
        let radius: f64 = rng.random_range(0.5..20.0);
        let spots: Vec<SpotRecord> = (0..n)
            .map(|i| SpotRecord {
                id: format!("s{i}"),
                // Half of the cases use integer and half-integer centers to
                // exercise exact-boundary pixels.
                position: if case % 2 == 0 {
                    [rng.random_range(0.0..w as f64), rng.random_range(0.0..h as f64)]
                } else {
                    [rng.random_range(0..2 * w) as f64 / 2.0, rng.random_range(0..2 * h) as f64 / 2.0]
                },
                composition: Composition::uniform(3).unwrap(),
            })
            .collect();
        let radius = if case % 2 == 0 { radius } else { radius.round().max(1.0) };
        let ds = Dataset::new(
            vec!["a".into(), "b".into(), "c".into()],
            spots,
            ImageRef { path: "unused.png".into(), width: w, height: h },
            radius,
        )
        .map_err(|e| e.to_string())?;
        let selection = Selection::from_indices((0..n).filter(|_| rng.random_bool(0.4)), n).unwrap();
        let alpha = rng.random_range(0.05..=1.0);
        let style = MaskStyle { alpha, ..MaskStyle::default() };
        let mask = render_mask(&ds, &selection, style).map_err(|e| e.to_string())?;
        let rgba = mask.to_rgba();
        let alpha_byte = (alpha * 255.0).round() as u8;
        for py in 0..h {
            for px in 0..w {
                let (cx, cy) = (px as f64 + 0.5, py as f64 + 0.5);
                let inside = selection.iter().any(|i| {
                    let [sx, sy] = ds.spots()[i].position;
                    (cx - sx).powi(2) + (cy - sy).powi(2) <= radius * radius
                });
                let expected_alpha = if inside { 0.0 } else { alpha };
                ensure(mask.is_revealed(px, py) == inside && mask.alpha(px, py) == expected_alpha, || {
                    format!("case {case}: pixel ({px}, {py}) revealed = {}, oracle {inside}", mask.is_revealed(px, py))
                })?;
                let pixel = rgba.get_pixel(px, py).0;
                let expected = if inside { 0 } else { alpha_byte };
                ensure(pixel[3] == expected, || format!("case {case}: RGBA alpha at ({px}, {py}) is {}", pixel[3]))?;
                revealed_total += inside as usize;
            }
        }
    }
    Ok(format!("50 selections on 128x128 pixel-exact ({revealed_total} revealed pixels)"))
}

// ------------------------------------------------------------------- server

fn api_determinism_suite() -> Outcome {
    let runtime = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    runtime.block_on(async {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        aitchview_server::cli::generate(aitchview_server::cli::Preset::TwoRegions, dir.path(), 0)
            .map_err(|e| e.to_string())?;

        let mut bodies = Vec::new();
        for _ in 0..2 {
            let app = aitchview_server::router(AppState::new(dir.path()), None);
            let (s, v) = send_json(&app, Method::POST, "/datasets", Some(json!({"manifest_path": "manifest.json"}))).await;
            ensure(s == StatusCode::OK, || format!("load failed: {v}"))?;
            let id = v["dataset_id"].as_str().unwrap().to_owned();
            let (_, emb) = send(&app, Method::GET, &format!("/datasets/{id}/embedding"), None).await;
            let (_, cl) = send(&app, Method::POST, &format!("/datasets/{id}/cluster"), Some(json!({"k": 2, "seed": 9}))).await;
            bodies.push((emb, cl));
        }
        ensure(bodies[0].0 == bodies[1].0, || "embedding JSON differs between servers".into())?;
        ensure(bodies[0].1 == bodies[1].1, || "cluster JSON differs between servers".into())?;

        // Revision accounting: every successful mutation bumps once and
        // publishes one event; failed ones change nothing.
        let state = AppState::new(dir.path());
        let app = aitchview_server::router(state.clone(), None);
        let (_, sid) = common::load_and_open(&app).await;
        let session = state.session(&sid).unwrap();
        let (start, mut rx) = session.subscribe();
        ensure(start == 0, || format!("new session at revision {start}"))?;
        let sel = format!("/sessions/{sid}/selection");
        let steps: Vec<(String, Value, bool)> = vec![
            (sel.clone(), json!({"source": "rect", "payload": {"x0": 0, "y0": 0, "x1": 250, "y1": 500}}), true),
            (sel.clone(), json!({"source": "cluster", "payload": {"label": 0, "k": 2}}), true),
            (sel.clone(), json!({"mode": "union", "source": "ids", "payload": {"ids": ["spot_0001"]}}), true),
            (format!("/sessions/{sid}/clustering"), json!({"k": 3, "seed": 1}), true),
            (sel.clone(), json!({"source": "cluster", "payload": {"label": 5}}), false),
            (sel.clone(), json!({"source": "ids", "payload": {"indices": [0]}, "expected_revision": 0}), false),
            (sel.clone(), json!({"mode": "subtract", "source": "polygon", "payload": {"points": [[0, 0], [100, 0], [0, 100]]}}), true),
            (sel.clone(), json!({"source": "clear"}), true),
        ];
        let mut expected = 0u64;
        for (i, (uri, body, ok)) in steps.into_iter().enumerate() {
            let (s, v) = send_json(&app, Method::POST, &uri, Some(body)).await;
            ensure(s.is_success() == ok, || format!("step {i}: status {s}: {v}"))?;
            if ok {
                expected += 1;
                ensure(v["revision"] == expected, || format!("step {i}: revision {} expected {expected}", v["revision"]))?;
                let event = rx.try_recv().map_err(|e| format!("step {i}: no event ({e})"))?;
                ensure(event.revision == expected, || format!("step {i}: event revision {}", event.revision))?;
            }
            ensure(rx.try_recv().is_err(), || format!("step {i}: extra event published"))?;
            let (_, snap) = send_json(&app, Method::GET, &format!("/sessions/{sid}"), None).await;
            ensure(snap["revision"] == expected, || format!("step {i}: session at {}", snap["revision"]))?;
        }
        Ok(format!("byte-identical embedding/cluster JSON; {expected} mutations, {expected} revisions"))
    })
}

fn main() -> ExitCode {
    let criteria: [Criterion; 7] = [
        ("aitchison-suite", aitchison_suite),
        ("pca-oracle", pca_oracle_suite),
        ("kmeans-oracle", kmeans_oracle_suite),
        ("decimation", decimation_suite),
        ("end-to-end-recovery", end_to_end_suite),
        ("mask-oracle", mask_suite),
        ("api-determinism", api_determinism_suite),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(reason) => {
                failed += 1;
                println!("FAIL {name}: {reason}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 7 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
