//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. The end-to-end criterion drives the `braingan` binary.

use axum::body::Body;
use axum::http::{Request, StatusCode};
use braingan_autograd::functional::conv2d;
use braingan_autograd::{Tensor, Var};
use braingan_core::augment::{apply_transform, augment_dataset, sample_transform, AugmentPolicy, TransformParams};
use braingan_core::classifier::{ConditionName, EvalMetrics};
use braingan_core::dataset::{split_patients, Label, LabeledSlice, Split, SplitRatios};
use braingan_core::imaging::{Image, ValueRange};
use braingan_core::phantom::generate_phantom;
use braingan_core::pggan::{gradient_penalty, gradient_penalty_with_weights, GanTrainConfig, Generator};
use braingan_core::pipeline::RunManifest;
use braingan_core::store::write_samples;
use braingan_core::tsne::{embed, kl_divergence, low_dim_affinities, pairwise_affinities, row_perplexities, tsne_gradient, EmbeddingConfig};
use braingan_turing::{router, PoolKind, PoolPaths, SessionStore, Source, TuringReport};
use http_body_util::BodyExt;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde_json::{json, Value};
use std::collections::BTreeSet;
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};
use tower::ServiceExt;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn metrics_arithmetic() -> Outcome {
    let cases = [
        ((1343, 232, 1050, 32), ("90.06", "85.27", "97.04")),
        ((1574, 1, 74, 1008), ("62.02", "99.94", "6.84")),
    ];
    for ((tp, fn_, tn, fp), (a, se, sp)) in cases {
        let m = EvalMetrics::from_counts(tp, fn_, tn, fp);
        let (ga, gse, gsp) = m.percentages();
        let got = (format!("{ga:.2}"), format!("{gse:.2}"), format!("{gsp:.2}"));
        ensure(
            got == (a.to_string(), se.to_string(), sp.to_string()),
            format!("({tp},{fn_},{tn},{fp}) gave {got:?}"),
        )?;
    }
    Ok("90.06/85.27/97.04 and 62.02/99.94/6.84 reproduced".into())
}

fn recorded_judgment(source: Source, label: Label, k: usize) -> (Source, Label) {
    match (source, label) {
        (Source::Real, Label::Tumor) => (
            if k < 29 { Source::Real } else { Source::Synthetic },
            if k < 5 { Label::NonTumor } else { Label::Tumor },
        ),
        (Source::Real, Label::NonTumor) => (if k < 29 { Source::Real } else { Source::Synthetic }, Label::NonTumor),
        (Source::Synthetic, Label::Tumor) => (
            if k == 0 { Source::Real } else { Source::Synthetic },
            if k < 13 { Label::NonTumor } else { Label::Tumor },
        ),
        (Source::Synthetic, Label::NonTumor) => (Source::Synthetic, if k < 1 { Label::Tumor } else { Label::NonTumor }),
    }
}

fn write_pools(root: &Path, n: usize) -> PoolPaths {
    let pool = |kind: PoolKind| {
        let dir = root.join(kind.to_string());
        let images: Vec<Image> = (0..n)
            .map(|i| Image::filled(8, 8, i as f64, ValueRange::Storage).unwrap())
            .collect();
        write_samples(&dir, 0, "acceptance", kind.label(), &images, None).unwrap();
        dir
    };
    PoolPaths {
        real_tumor: pool(PoolKind::RealTumor),
        real_non_tumor: pool(PoolKind::RealNonTumor),
        synthetic_tumor: pool(PoolKind::SyntheticTumor),
        synthetic_non_tumor: pool(PoolKind::SyntheticNonTumor),
    }
}

async fn call(app: &axum::Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map(|b| Body::from(b.to_string())).unwrap_or_else(Body::empty))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

fn has_key(v: &Value, needle: &str) -> bool {
    match v {
        Value::Object(m) => m.iter().any(|(k, v)| k.contains(needle) || has_key(v, needle)),
        Value::Array(a) => a.iter().any(|v| has_key(v, needle)),
        _ => false,
    }
}

/// Replays the recorded rater responses through the HTTP API and returns the
/// final report; also audits every active-session payload for truths and
/// checks out-of-order and duplicate rejection along the way.
async fn turing_replay() -> Result<TuringReport, String> {
    let dir = tempfile::tempdir().unwrap();
    let store = Arc::new(SessionStore::new(None, Some(write_pools(dir.path(), 50))).map_err(|e| e.to_string())?);
    let app = router(store.clone(), None);
    let (status, created) = call(&app, "POST", "/sessions", Some(json!({"n_per_pool": 50, "seed": 1}))).await;
    ensure(status == StatusCode::CREATED && created["total"] == 200, format!("create: {status} {created}"))?;
    let id = created["session_id"].as_str().unwrap().to_string();
    let items = store.snapshot(&id).unwrap().items;
    let mut counters = std::collections::HashMap::new();
    for (index, truth) in items.iter().enumerate() {
        let (status, next) = call(&app, "GET", &format!("/sessions/{id}/next"), None).await;
        ensure(status == StatusCode::OK && next["index"] == index, format!("next {index}: {next}"))?;
        ensure(!has_key(&next, "truth"), format!("truth leaked in {next}"))?;
        if index == 10 {
            let (status, err) = call(
                &app,
                "POST",
                &format!("/sessions/{id}/responses"),
                Some(json!({"item_id": items[11].item_id, "judged_source": "real", "judged_label": "tumor"})),
            )
            .await;
            ensure(status == StatusCode::CONFLICT && err["error"] == "out_of_order", format!("out-of-order accepted: {err}"))?;
            let (status, err) = call(
                &app,
                "POST",
                &format!("/sessions/{id}/responses"),
                Some(json!({"item_id": items[3].item_id, "judged_source": "real", "judged_label": "tumor"})),
            )
            .await;
            ensure(status == StatusCode::CONFLICT && err["error"] == "duplicate", format!("duplicate accepted: {err}"))?;
        }
        let k = counters.entry((truth.truth_source, truth.truth_label)).or_insert(0usize);
        let (js, jl) = recorded_judgment(truth.truth_source, truth.truth_label, *k);
        *k += 1;
        let (status, ack) = call(
            &app,
            "POST",
            &format!("/sessions/{id}/responses"),
            Some(json!({"item_id": truth.item_id, "judged_source": js, "judged_label": jl})),
        )
        .await;
        ensure(status == StatusCode::OK && !has_key(&ack, "truth"), format!("answer {index}: {ack}"))?;
    }
    let (_, done) = call(&app, "GET", &format!("/sessions/{id}/next"), None).await;
    ensure(done == json!({"done": true}), format!("expected done marker, got {done}"))?;
    let (status, report) = call(&app, "GET", &format!("/sessions/{id}/report"), None).await;
    ensure(status == StatusCode::OK, format!("report: {status}"))?;
    serde_json::from_value(report).map_err(|e| e.to_string())
}

fn runtime() -> tokio::runtime::Runtime {
    tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap()
}

fn rater_report_arithmetic() -> Outcome {
    let r = runtime().block_on(turing_replay())?;
    let s = &r.source;
    let l = &r.label;
    ensure(
        (s.real_as_real, s.real_as_synthetic, s.synthetic_as_real, s.synthetic_as_synthetic) == (58, 42, 1, 99),
        format!("source matrix {s:?}"),
    )?;
    ensure(
        (l.tumor_as_tumor, l.tumor_as_non_tumor, l.non_tumor_as_tumor, l.non_tumor_as_non_tumor) == (82, 18, 1, 99),
        format!("label matrix {l:?}"),
    )?;
    ensure(s.accuracy * 200.0 == 157.0 && format!("{:.1}", s.accuracy * 100.0) == "78.5", format!("source accuracy {}", s.accuracy))?;
    ensure(l.accuracy * 200.0 == 181.0 && format!("{:.1}", l.accuracy * 100.0) == "90.5", format!("label accuracy {}", l.accuracy))?;
    let e = r.label_errors;
    ensure(
        (e.tumor_as_non_tumor.real, e.tumor_as_non_tumor.synthetic, e.non_tumor_as_tumor.real, e.non_tumor_as_tumor.synthetic)
            == (5, 13, 0, 1),
        format!("error breakdown {e:?}"),
    )?;
    Ok("source 78.5%, label 90.5%, T-as-N R:5/S:13, N-as-T S:1".into())
}

fn turing_lifecycle() -> Outcome {
    let r = runtime().block_on(turing_replay())?;
    ensure(!r.partial && r.answered == 200 && r.total == 200, format!("report {r:?}"))?;
    Ok("200-item session completed; no truth fields while active; out-of-order and duplicate rejected with 409".into())
}

fn per_item_sum(x: &Var, c: f64) -> Var {
    let n = x.shape()[0];
    let axes: Vec<usize> = (1..x.shape().len()).collect();
    x.sum_axes(&axes).reshape(&[n]).scale(c)
}

fn gradient_penalty_checks() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let real = Tensor::randn(vec![4, 1, 4, 4], &mut rng);
    let fake = Tensor::randn(vec![4, 1, 4, 4], &mut rng);
    // A 4x4 input summed with weight 1/4 has gradient norm exactly 1.
    let unit = gradient_penalty(|x| per_item_sum(x, 0.25), &real, &fake, 10.0, &mut rng)
        .map_err(|e| e.to_string())?
        .item();
    ensure(unit <= 1e-6, format!("unit-gradient penalty {unit}"))?;
    let slope3 = gradient_penalty(|x| per_item_sum(x, 0.75), &real, &fake, 10.0, &mut rng)
        .map_err(|e| e.to_string())?
        .item();
    ensure((slope3 - 40.0).abs() <= 1e-6, format!("slope-3 penalty {slope3}, expected 40"))?;

    let w = Var::constant(Tensor::randn(vec![2, 1, 3, 3], &mut rng).map(|v| 0.5 * v));
    let v = Var::constant(Tensor::randn(vec![1, 2, 8, 8], &mut rng).map(|v| 0.3 * v));
    let critic = |x: &Var| {
        let n = x.shape()[0];
        conv2d(x, &w, None, 1, 1).tanh().mul(&v).sum_axes(&[1, 2, 3]).reshape(&[n])
    };
    let real = Tensor::randn(vec![3, 1, 8, 8], &mut rng);
    let fake = Tensor::randn(vec![3, 1, 8, 8], &mut rng);
    let weights = [0.1, 0.5, 0.9];
    let gp = gradient_penalty_with_weights(critic, &real, &fake, &weights, 10.0)
        .map_err(|e| e.to_string())?
        .item();
    let h = 1e-5;
    let mut expect = 0.0;
    for (i, &t) in weights.iter().enumerate() {
        let x: Vec<f64> = (0..64)
            .map(|p| t * real.data()[i * 64 + p] + (1.0 - t) * fake.data()[i * 64 + p])
            .collect();
        let eval = |x: &[f64]| critic(&Var::constant(Tensor::new(vec![1, 1, 8, 8], x.to_vec()))).item();
        let mut sq = 0.0;
        for p in 0..64 {
            let (mut up, mut down) = (x.clone(), x.clone());
            up[p] += h;
            down[p] -= h;
            sq += ((eval(&up) - eval(&down)) / (2.0 * h)).powi(2);
        }
        expect += (sq.sqrt() - 1.0).powi(2);
    }
    expect *= 10.0 / weights.len() as f64;
    let rel = ((gp - expect) / expect).abs();
    ensure(rel <= 1e-4, format!("finite-difference relative error {rel:.2e}"))?;
    Ok(format!("unit {unit:.1e}, slope-3 {slope3:.9}, 8x8 finite-difference rel err {rel:.1e}"))
}

fn progressive_shapes() -> Outcome {
    let cfg = GanTrainConfig::desk(Label::Tumor, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let g = Generator::new(cfg.network_shape(), &mut rng).map_err(|e| e.to_string())?;
    let z = Tensor::randn(vec![8, cfg.latent_dim], &mut rng);
    for (stage, res) in [4usize, 8, 16, 32, 64].into_iter().enumerate() {
        for alpha in [0.0, 0.5, 1.0] {
            let img = g.generate(&z, stage, alpha).map_err(|e| e.to_string())?;
            ensure(img.shape() == [8, 1, res, res], format!("stage {stage}: shape {:?}", img.shape()))?;
            ensure(img.data().iter().all(|v| (-1.0..=1.0).contains(v)), format!("stage {stage}: out of [-1, 1]"))?;
        }
    }
    let b = g.params.bind_frozen();
    let zv = Var::constant(z);
    for stage in 1..5 {
        let (low, high) = g.branches(&b, &zv, stage).map_err(|e| e.to_string())?;
        let low = low.ok_or("missing low branch")?;
        let at0 = g.forward(&b, &zv, stage, 0.0).map_err(|e| e.to_string())?;
        let at1 = g.forward(&b, &zv, stage, 1.0).map_err(|e| e.to_string())?;
        ensure(at0.value() == low.value(), format!("stage {stage}: alpha 0 differs from upsampled branch"))?;
        ensure(at1.value() == high.value(), format!("stage {stage}: alpha 1 differs from new branch"))?;
    }
    Ok("stages 0-4 give 4, 8, 16, 32, 64 px in [-1, 1]; fade endpoints bit-exact".into())
}

fn augmentation_bounds() -> Outcome {
    let policy = AugmentPolicy::default();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for i in 0..10_000 {
        let p = sample_transform(&policy, &mut rng);
        let ok = p.rotation_deg.abs() <= 10.0
            && p.shift_x_frac.abs() <= 0.08
            && p.shift_y_frac.abs() <= 0.08
            && p.shear_frac.abs() <= 0.08
            && p.zoom_frac.abs() <= 0.08;
        ensure(ok, format!("draw {i} out of bounds: {p:?}"))?;
    }
    let vol = generate_phantom(5, true, 64, 12).map_err(|e| e.to_string())?;
    let img = &vol.slices[6];
    let same = apply_transform(img, &TransformParams::identity()).map_err(|e| e.to_string())?;
    ensure(&same == img, "identity transform changed the image")?;
    let slices: Vec<LabeledSlice> = vol
        .slices
        .iter()
        .enumerate()
        .map(|(i, s)| LabeledSlice::real(&vol.patient_id, i, s.clone(), if i % 2 == 0 { Label::Tumor } else { Label::NonTumor }))
        .collect();
    let out = augment_dataset(&slices, &policy, 100, 7).map_err(|e| e.to_string())?;
    let tumor = out.iter().filter(|a| a.slice.label == Label::Tumor).count();
    ensure(out.len() == 200 && tumor == 100, format!("{} outputs, {tumor} tumor", out.len()))?;
    Ok("10,000 draws within ±10°/±8%; identity bit-exact; n_per_class=100 gives 200".into())
}

fn split_correctness() -> Outcome {
    let ids: Vec<String> = (0..220).map(|i| format!("P{i:03}")).collect();
    let a = split_patients(&ids, SplitRatios::PAPER, 0).map_err(|e| e.to_string())?;
    let count = |s: Split| a.iter().filter(|x| x.split == s).count();
    let got = (count(Split::Train), count(Split::Val), count(Split::Test));
    ensure(got == (154, 44, 22), format!("220 patients gave {got:?}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    for instance in 0..1000 {
        let n = rng.random_range(10..300usize);
        let w: Vec<f64> = (0..3).map(|_| rng.random_range(0.1..1.0)).collect();
        let total: f64 = w.iter().sum();
        let ratios = SplitRatios {
            train: w[0] / total,
            val: w[1] / total,
            test: 1.0 - w[0] / total - w[1] / total,
        };
        let ids: Vec<String> = (0..n).map(|i| format!("Q{i}")).collect();
        let a = split_patients(&ids, ratios, rng.random()).map_err(|e| format!("instance {instance}: {e}"))?;
        let unique: BTreeSet<&String> = a.iter().map(|x| &x.patient_id).collect();
        ensure(a.len() == n && unique.len() == n, format!("instance {instance}: patient in two splits or missing"))?;
    }
    Ok("(154, 44, 22) exact; 1,000 random instances disjoint and complete".into())
}

fn gaussian(n: usize, dim: usize, seed: u64, offset: f64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    (0..n)
        .map(|_| (0..dim).map(|_| normal.sample(&mut rng) + offset).collect())
        .collect()
}

fn tsne_checks() -> Outcome {
    let worst = row_perplexities(&gaussian(50, 10, 1, 0.0), 20.0)
        .iter()
        .map(|p| (p - 20.0).abs())
        .fold(0.0, f64::max);
    ensure(worst <= 1e-3, format!("row perplexity off by {worst}"))?;

    let p = pairwise_affinities(&gaussian(6, 4, 2, 0.0), 3.0).map_err(|e| e.to_string())?;
    let y: Vec<[f64; 2]> = gaussian(6, 2, 3, 0.0).into_iter().map(|v| [v[0], v[1]]).collect();
    let g = tsne_gradient(&p, &y);
    let h = 1e-6;
    let mut max_diff: f64 = 0.0;
    for i in 0..6 {
        for d in 0..2 {
            let (mut up, mut down) = (y.clone(), y.clone());
            up[i][d] += h;
            down[i][d] -= h;
            let fd = (kl_divergence(&p, &low_dim_affinities(&up)) - kl_divergence(&p, &low_dim_affinities(&down))) / (2.0 * h);
            max_diff = max_diff.max((fd - g[i][d]).abs());
        }
    }
    ensure(max_diff <= 1e-5, format!("gradient vs finite difference {max_diff:.2e}"))?;

    let mut x = gaussian(20, 32, 4, 0.0);
    x.extend(gaussian(20, 32, 5, 10.0));
    let cfg = EmbeddingConfig {
        perplexity: 10.0,
        ..EmbeddingConfig::paper(7)
    };
    let emb = embed(&x, &cfg).map_err(|e| e.to_string())?;
    let pts = &emb.points;
    let same = (0..40)
        .filter(|&i| {
            let nn = (0..40)
                .filter(|&j| j != i)
                .min_by(|&a, &b| {
                    let d = |j: usize| (pts[j][0] - pts[i][0]).powi(2) + (pts[j][1] - pts[i][1]).powi(2);
                    d(a).total_cmp(&d(b))
                })
                .unwrap();
            nn / 20 == i / 20
        })
        .count();
    ensure(same * 10 >= 40 * 9, format!("{same}/40 same-cluster nearest neighbors"))?;
    let kl = |it: usize| emb.kl_history.iter().find(|(i, _)| *i == it).map(|(_, k)| *k);
    let (k100, k1000) = (kl(100).ok_or("no KL at 100")?, kl(1000).ok_or("no KL at 1000")?);
    ensure(k1000 < k100, format!("KL did not decrease: {k100} -> {k1000}"))?;
    Ok(format!(
        "perplexity err {worst:.1e}, gradient err {max_diff:.1e}, {same}/40 same-cluster neighbors, KL {k100:.3} -> {k1000:.3}"
    ))
}

const E2E_LIMIT: Duration = Duration::from_secs(30 * 60);

fn run_grid_once(dir: &Path) -> Result<(Duration, String, RunManifest), String> {
    let start = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_braingan"))
        .args(["run-grid", "--scale", "desk", "--seed", "1", "--out"])
        .arg(dir)
        .env("RUST_LOG", "warn")
        .output()
        .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    ensure(
        out.status.success(),
        format!("run-grid failed: {}", String::from_utf8_lossy(&out.stderr)),
    )?;
    let csv_text = std::fs::read_to_string(dir.join("grid/report.csv")).map_err(|e| e.to_string())?;
    let manifest: RunManifest = serde_json::from_str(
        &std::fs::read_to_string(dir.join("run_manifest.json")).map_err(|e| e.to_string())?,
    )
    .map_err(|e| e.to_string())?;
    Ok((elapsed, csv_text, manifest))
}

fn check_report(csv_text: &str, test_size: usize) -> Result<(), String> {
    let mut reader = csv::Reader::from_reader(csv_text.as_bytes());
    let headers = reader.headers().map_err(|e| e.to_string())?.clone();
    for col in ["condition", "accuracy", "sensitivity", "specificity", "tp", "fn", "tn", "fp"] {
        ensure(headers.iter().any(|h| h == col), format!("missing column {col}"))?;
    }
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    let rows: Vec<csv::StringRecord> = reader.records().collect::<Result<_, _>>().map_err(|e| e.to_string())?;
    ensure(rows.len() == 4, format!("{} rows", rows.len()))?;
    for (row, name) in rows.iter().zip(ConditionName::ALL) {
        ensure(&row[col("condition")] == name.as_str(), format!("row order: {}", &row[col("condition")]))?;
        for metric in ["accuracy", "sensitivity", "specificity"] {
            let v: f64 = row[col(metric)].parse().map_err(|_| format!("{metric} not numeric"))?;
            ensure((0.0..=100.0).contains(&v), format!("{metric} {v} outside [0, 100]"))?;
        }
        let n: usize = ["tp", "fn", "tn", "fp"]
            .iter()
            .map(|c| row[col(c)].parse::<usize>().unwrap_or(usize::MAX / 8))
            .sum();
        ensure(n == test_size, format!("{} counts sum to {n}, test split has {test_size}", name.as_str()))?;
    }
    Ok(())
}

fn losses_finite(path: &Path) -> Result<usize, String> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| e.to_string())?;
    let mut n = 0;
    for rec in reader.records() {
        let rec = rec.map_err(|e| e.to_string())?;
        for field in [2, 3, 4] {
            let v: f64 = rec[field].parse().map_err(|_| format!("{}: unparsable loss", path.display()))?;
            ensure(v.is_finite(), format!("{}: non-finite loss", path.display()))?;
        }
        n += 1;
    }
    Ok(n)
}

fn end_to_end() -> Outcome {
    let root = tempfile::tempdir().unwrap();
    let (a, b) = (root.path().join("a"), root.path().join("b"));
    let (ta, csv_a, man_a) = run_grid_once(&a)?;
    let (tb, csv_b, man_b) = run_grid_once(&b)?;
    ensure(ta < E2E_LIMIT && tb < E2E_LIMIT, format!("runs took {ta:?} and {tb:?}"))?;
    ensure(csv_a == csv_b, "report CSVs differ between identical runs")?;
    ensure(man_a.outputs == man_b.outputs, "output digests differ between identical runs")?;
    check_report(&csv_a, man_a.pool_counts["test"])?;
    ensure(man_a.gan_losses_finite, "run manifest reports non-finite GAN losses")?;
    let mut records = 0;
    for label in ["tumor", "non_tumor"] {
        records += losses_finite(&a.join(format!("gan/{label}/losses.csv")))?;
    }
    Ok(format!(
        "4-row report identical across runs; {records} finite loss records; {:.0}s and {:.0}s on {} core(s)",
        ta.as_secs_f64(),
        tb.as_secs_f64(),
        std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("metrics arithmetic", metrics_arithmetic),
        ("turing report arithmetic", rater_report_arithmetic),
        ("gradient penalty", gradient_penalty_checks),
        ("progressive shapes", progressive_shapes),
        ("augmentation bounds", augmentation_bounds),
        ("split correctness", split_correctness),
        ("t-SNE", tsne_checks),
        ("turing engine lifecycle", turing_lifecycle),
        ("end-to-end desk run", end_to_end),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail} [{secs:.1}s]"),
            Err(reason) => {
                failed += 1;
                println!("FAIL  {name}: {reason} [{secs:.1}s]");
            }
        }
    }
    println!("{} of {} criteria passed", 9 - failed, 9);
    if failed > 0 {
        std::process::exit(1);
    }
}
