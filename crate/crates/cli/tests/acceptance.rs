//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.
//!
//! The end-to-end criteria drive the `roast` binary on a synthetic dataset
//! and take roughly 50 minutes on one CPU core. Set
//! `ROAST_ACCEPTANCE_DIR` to keep the working files; otherwise a temporary
//! directory is used.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::net::{SocketAddr, TcpListener};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, ExitCode, Stdio};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use roast_core::dataset::{load_dataset, make_folds, split_dataset, LabeledSample, SplitRatios};
use roast_core::eval::{metrics_from_confusion, ConfusionMatrix, EvaluationReport};
use roast_core::imaging::{
    gaussian_blur, gaussian_kernel_2d, load_image, normalize, rgb_to_hsv, ColorSpace, PreprocessConfig, RasterImage,
};
use roast_core::model::{load_model, predict, save_model, Prediction};
use roast_core::RoastClass;
use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_roast");
const TRAIN_BUDGET: Duration = Duration::from_secs(15 * 60);
const SERVICE_BUDGET: Duration = Duration::from_secs(120);
const SEED: &str = "7";
const LR: &str = "1e-3";
const EPOCHS: &str = "20";

type Outcome = Result<String, String>;

struct Suite {
    failures: usize,
}

impl Suite {
    fn check(&mut self, name: &str, f: impl FnOnce() -> Outcome) {
        let started = Instant::now();
        let outcome = f();
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                self.failures += 1;
                println!("FAIL  {name}: {detail} [{secs:.1}s]");
            }
        }
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn roast(args: &[&str]) -> Result<String, String> {
    let out =
        Command::new(BIN).args(args).env("ROAST_LOG", "warn").output().map_err(|e| format!("cannot run roast: {e}"))?;
    if !out.status.success() {
        return Err(format!(
            "roast {} exited with {}: {}",
            args.first().unwrap_or(&""),
            out.status,
            String::from_utf8_lossy(&out.stderr).trim()
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn read_json(path: &Path) -> Result<Value, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

// ---------------------------------------------------------------- metrics

const FIXTURE_960: [[u64; 4]; 4] = [[194, 6, 7, 33], [2, 172, 45, 21], [0, 3, 230, 7], [2, 10, 35, 193]];
const FIXTURE_1177: [[u64; 4]; 4] = [[200, 5, 54, 21], [9, 283, 8, 0], [8, 41, 247, 4], [4, 5, 45, 243]];

fn metric_arithmetic() -> Outcome {
    let mut parts = Vec::new();
    for (name, table, expected) in
        [("fixture 960", FIXTURE_960, 789.0 / 960.0), ("fixture 1177", FIXTURE_1177, 973.0 / 1177.0)]
    {
        let r = metrics_from_confusion(&ConfusionMatrix::from_table(table), name).map_err(|e| e.to_string())?;
        ensure((r.accuracy - expected).abs() <= 1e-9, || format!("{name}: accuracy {} != {expected}", r.accuracy))?;
        parts.push(format!("{name} {:.4}", r.accuracy));
    }
    Ok(parts.join(", "))
}

// ---------------------------------------------------------------- imaging

/// Textbook hexcone conversion on unit-range channels.
fn hsv_oracle(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let (r, g, b) = (r / 255.0, g / 255.0, b / 255.0);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    if max == min {
        return (0.0, 0.0, max);
    }
    let s = (max - min) / max;
    let rc = (max - r) / (max - min);
    let gc = (max - g) / (max - min);
    let bc = (max - b) / (max - min);
    let h = if r == max {
        bc - gc
    } else if g == max {
        2.0 + rc - bc
    } else {
        4.0 + gc - rc
    };
    ((h / 6.0).rem_euclid(1.0) * 360.0, s, max)
}

fn hue_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}

fn imaging_oracles() -> Outcome {
    let mut pixels: Vec<u8> = Vec::new();
    for r in [0u8, 128, 255] {
        for g in [0u8, 128, 255] {
            for b in [0u8, 128, 255] {
                pixels.extend([r, g, b]);
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    pixels.extend((0..3000).map(|_| rng.gen::<u8>()));
    let img = RasterImage::from_rgb8(pixels.len() / 3, 1, &pixels).map_err(|e| e.to_string())?;
    let hsv = rgb_to_hsv(&img).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for (rgb, got) in pixels.chunks_exact(3).zip(hsv.data().chunks_exact(3)) {
        let (h, sat, v) = hsv_oracle(rgb[0] as f64, rgb[1] as f64, rgb[2] as f64);
        let err = hue_distance(got[0], h).max((got[1] - sat).abs()).max((got[2] - v).abs());
        worst = worst.max(err);
        ensure(err <= 1e-6, || format!("rgb {rgb:?}: got {got:?}, oracle ({h}, {sat}, {v})"))?;
    }

    let mut kernels = 0;
    for size in [1, 3, 5, 7, 9, 11, 15] {
        for sigma in [0.3, 0.8, 1.0, 1.5, 2.5, 5.0] {
            let sum: f64 = gaussian_kernel_2d(size, sigma).map_err(|e| e.to_string())?.iter().sum();
            ensure((sum - 1.0).abs() <= 1e-9, || format!("kernel {size}/{sigma} sums to {sum}"))?;
            kernels += 1;
        }
    }
    for (value, size, sigma) in [(0.0, 5, 1.0), (37.0, 5, 1.0), (128.0, 7, 2.0), (255.0, 3, 0.5), (201.0, 11, 3.0)] {
        let flat = RasterImage::filled(23, 17, ColorSpace::Rgb8, &[value, value, value]).map_err(|e| e.to_string())?;
        let cfg = PreprocessConfig { blur_kernel_size: size, blur_sigma: sigma, ..PreprocessConfig::default() };
        let blurred = gaussian_blur(&flat, &cfg).map_err(|e| e.to_string())?;
        ensure(blurred.data() == flat.data(), || format!("constant {value} changed under blur {size}/{sigma}"))?;
    }

    let levels = RasterImage::from_rgb8(3, 1, &[0, 0, 0, 51, 51, 51, 255, 255, 255]).map_err(|e| e.to_string())?;
    let n = normalize(&levels).map_err(|e| e.to_string())?;
    ensure(n.data() == [0.0, 0.0, 0.0, 0.2, 0.2, 0.2, 1.0, 1.0, 1.0], || format!("normalize gave {:?}", n.data()))?;
    Ok(format!(
        "{} pixels within {worst:.1e}, {kernels} kernels sum to 1, blur keeps constants, normalize exact",
        pixels.len() / 3
    ))
}

// ---------------------------------------------------------------- partitions

fn fake_samples(counts: [usize; 4]) -> Vec<LabeledSample> {
    RoastClass::ALL
        .iter()
        .zip(counts)
        .flat_map(|(c, n)| (0..n).map(move |i| LabeledSample::from_path(format!("{c}/{i}.png"), *c, "fake")))
        .collect()
}

fn per_class(samples: &[LabeledSample]) -> [usize; 4] {
    let mut n = [0; 4];
    for s in samples {
        n[s.class.index()] += 1;
    }
    n
}

fn split_trial(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let counts: [usize; 4] = std::array::from_fn(|_| if rng.gen_bool(0.1) { 0 } else { rng.gen_range(3..60) });
    let samples = fake_samples(counts);
    let ratios = if rng.gen_bool(0.5) {
        SplitRatios::default()
    } else {
        let t = rng.gen_range(0.1..0.8);
        let v = rng.gen_range(0.0..(1.0 - t));
        SplitRatios { train: t, validation: v, test: 1.0 - t - v }
    };
    let seed = rng.gen();
    let split = split_dataset(&samples, ratios, seed).map_err(|e| e.to_string())?;
    let mut seen = HashSet::new();
    for s in split.train.iter().chain(&split.validation).chain(&split.test) {
        ensure(seen.insert(s.id()), || format!("{} in two parts (seed {seed})", s.id()))?;
    }
    ensure(seen.len() == samples.len(), || format!("split covers {} of {} (seed {seed})", seen.len(), samples.len()))?;
    for (part, ratio) in
        [(&split.train, ratios.train), (&split.validation, ratios.validation), (&split.test, ratios.test)]
    {
        for (got, n) in per_class(part).into_iter().zip(counts) {
            let ideal = ratio * n as f64;
            ensure((got as f64 - ideal).abs() <= 1.0 + 1e-9, || {
                format!("class count {got} vs ideal {ideal:.2} (seed {seed}, counts {counts:?}, {ratios:?})")
            })?;
        }
    }
    Ok(())
}

fn fold_trial(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let k = rng.gen_range(2..=10);
    let counts: [usize; 4] = std::array::from_fn(|_| if rng.gen_bool(0.1) { 0 } else { rng.gen_range(k..80) });
    let samples = fake_samples(counts);
    let seed = rng.gen();
    let plan = make_folds(&samples, k, seed).map_err(|e| e.to_string())?;
    ensure(plan.assignments.len() == samples.len(), || "assignment length".into())?;
    let mut covered = vec![0usize; samples.len()];
    for fold in 0..k {
        let val = plan.validation_indices(fold);
        let train: BTreeSet<usize> = plan.train_indices(fold).into_iter().collect();
        ensure(val.iter().all(|i| !train.contains(i)), || format!("fold {fold} overlaps its training part"))?;
        ensure(val.len() + train.len() == samples.len(), || format!("fold {fold} misses samples"))?;
        for &i in &val {
            covered[i] += 1;
        }
        let picked: Vec<LabeledSample> = val.iter().map(|&i| samples[i].clone()).collect();
        for (got, n) in per_class(&picked).into_iter().zip(counts) {
            let ideal = n as f64 / k as f64;
            ensure((got as f64 - ideal).abs() <= 1.0, || {
                format!("fold {fold}: {got} vs ideal {ideal:.2} (seed {seed})")
            })?;
        }
    }
    ensure(covered.iter().all(|&c| c == 1), || format!("folds do not partition the pool (seed {seed})"))
}

fn partition_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(20_000);
    for _ in 0..10_000 {
        split_trial(&mut rng)?;
    }
    for _ in 0..10_000 {
        fold_trial(&mut rng)?;
    }
    Ok("10000 split trials and 10000 fold trials".into())
}

// ---------------------------------------------------------------- end to end

struct Work {
    root: PathBuf,
    _temp: Option<tempfile::TempDir>,
}

impl Work {
    fn new() -> Work {
        match std::env::var_os("ROAST_ACCEPTANCE_DIR") {
            Some(dir) => {
                let root = PathBuf::from(dir);
                std::fs::create_dir_all(&root).expect("create acceptance dir");
                Work { root: root.canonicalize().expect("acceptance dir"), _temp: None }
            }
            None => {
                let t = tempfile::tempdir().expect("tempdir");
                Work { root: t.path().to_path_buf(), _temp: Some(t) }
            }
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }
}

#[derive(Default)]
struct TrainedRun {
    test_accuracy: Option<f64>,
}

fn synthetic_training(w: &Work, run: &mut TrainedRun) -> Outcome {
    let started = Instant::now();
    let data = w.path("data");
    let out = w.path("train");
    let _ = std::fs::remove_dir_all(&data);
    roast(&["synth", "--out", s(&data), "--per-class", "200", "--seed", SEED])?;
    roast(&[
        "train",
        "--data",
        s(&data),
        "--out",
        s(&out),
        "--epochs",
        EPOCHS,
        "--lr",
        LR,
        "--batch-size",
        "32",
        "--seed",
        SEED,
    ])?;
    let elapsed = started.elapsed();

    let manifest = read_json(&out.join("run.json"))?;
    let summary = &manifest["summary"];
    let training = &manifest["config"]["training"];
    let acc = summary["test_accuracy"].as_f64().ok_or("no test accuracy in run.json")?;
    run.test_accuracy = Some(acc);
    let epochs = summary["epochs"].as_u64().unwrap_or(u64::MAX);
    let lr = training["learning_rate"].as_f64().unwrap_or(f64::NAN);
    let noted = manifest["notes"]
        .as_array()
        .into_iter()
        .flatten()
        .any(|n| n.as_str().is_some_and(|n| n.contains("learning rate")));
    ensure(epochs <= 20, || format!("{epochs} epochs"))?;
    ensure(training["batch_size"] == 32 && training["optimizer"] == "adam", || format!("config {training}"))?;
    ensure(lr == 1e-3 && noted, || {
        format!("raised learning rate not recorded (lr {lr}, notes {})", manifest["notes"])
    })?;
    ensure(training["backbone"]["name"] == "small-cnn" && summary["backbone_fallback"] == false, || {
        format!("backbone {}", training["backbone"])
    })?;
    ensure(acc >= 0.90, || format!("test accuracy {acc:.4} < 0.90"))?;
    ensure(elapsed <= TRAIN_BUDGET, || format!("took {:.0}s, over the 15 minute budget", elapsed.as_secs_f64()))?;
    Ok(format!("test accuracy {acc:.4} after {epochs} epochs at lr {lr} in {:.0}s", elapsed.as_secs_f64()))
}

fn held_out(w: &Work) -> Result<PathBuf, String> {
    let dir = w.path("heldout");
    if !dir.join("manifest.json").exists() {
        roast(&["synth", "--out", s(&dir), "--per-class", "50", "--seed", "8"])?;
    }
    let train = read_json(&w.path("data").join("manifest.json"))?;
    let fresh = read_json(&dir.join("manifest.json"))?;
    let hashes: HashSet<&str> =
        train["files"].as_array().into_iter().flatten().filter_map(|f| f["sha256"].as_str()).collect();
    let overlap = fresh["files"]
        .as_array()
        .into_iter()
        .flatten()
        .filter(|f| hashes.contains(f["sha256"].as_str().unwrap_or("")))
        .count();
    ensure(overlap == 0, || format!("{overlap} held-out images also in the training set"))?;
    Ok(dir)
}

fn class_files(root: &Path, class: RoastClass) -> Result<Vec<PathBuf>, String> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(root.join(class.label()))
        .map_err(|e| e.to_string())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "png"))
        .collect();
    files.sort();
    Ok(files)
}

fn predict_file(artifact: &roast_core::model::ModelArtifact, path: &Path) -> Result<Prediction, String> {
    let img = load_image(path).map_err(|e| e.to_string())?;
    predict(artifact, &img, &artifact.meta.preprocess_config, false).map_err(|e| e.to_string())
}

fn green_confidence(w: &Work) -> Outcome {
    let artifact = load_model(&w.path("train").join("model.roast")).map_err(|e| e.to_string())?;
    let files = class_files(&held_out(w)?, RoastClass::Green)?;
    ensure(files.len() == 50, || format!("{} green images", files.len()))?;
    let mut hits = 0;
    for f in &files {
        let p = predict_file(&artifact, f)?;
        if p.predicted_class == RoastClass::Green && p.confidence_percent >= 80.0 {
            hits += 1;
        }
    }
    ensure(hits >= 45, || format!("{hits}/50 green at >= 80% confidence"))?;
    Ok(format!("{hits}/50 held-out green images predicted green at >= 80%"))
}

fn smoothed_loss(w: &Work) -> Outcome {
    let history = read_json(&w.path("train").join("history.json"))?;
    let losses: Vec<f64> = history["epochs"]
        .as_array()
        .ok_or("no epochs in history.json")?
        .iter()
        .map(|e| e["train_loss"].as_f64().unwrap_or(f64::NAN))
        .collect();
    let smooth: Vec<f64> = losses.windows(3).map(|w| w.iter().sum::<f64>() / 3.0).collect();
    for (i, pair) in smooth.windows(2).enumerate() {
        ensure(pair[1] <= pair[0], || {
            format!("smoothed loss rises from {:.5} to {:.5} at epochs {}-{}", pair[0], pair[1], i + 2, i + 4)
        })?;
    }
    Ok(format!(
        "{} smoothed values, {:.4} -> {:.4}",
        smooth.len(),
        smooth.first().copied().unwrap_or(f64::NAN),
        smooth.last().copied().unwrap_or(f64::NAN)
    ))
}

fn probe_images(w: &Work) -> Result<Vec<PathBuf>, String> {
    let split = read_json(&w.path("train").join("split.json"))?;
    let test: Vec<PathBuf> =
        split["test"].as_array().ok_or("no test list")?.iter().filter_map(|v| v.as_str()).map(PathBuf::from).collect();
    // Spread the 10 probes over the classes.
    let step = (test.len() / 10).max(1);
    Ok(test.into_iter().step_by(step).take(10).collect())
}

fn bits(p: &Prediction) -> [u64; 4] {
    p.probabilities.map(f64::to_bits)
}

fn artifact_round_trip(w: &Work) -> Outcome {
    let original = w.path("train").join("model.roast");
    let copy = w.path("roundtrip.roast");
    let a = load_model(&original).map_err(|e| e.to_string())?;
    save_model(&a, &copy).map_err(|e| e.to_string())?;
    let b = load_model(&copy).map_err(|e| e.to_string())?;
    let probes = probe_images(w)?;
    ensure(probes.len() == 10, || format!("{} probes", probes.len()))?;
    for p in &probes {
        let (x, y) = (predict_file(&a, p)?, predict_file(&b, p)?);
        ensure(bits(&x) == bits(&y), || format!("{}: {:?} vs {:?}", p.display(), x.probabilities, y.probabilities))?;
    }
    let same_file =
        std::fs::read(&original).map_err(|e| e.to_string())? == std::fs::read(&copy).map_err(|e| e.to_string())?;
    ensure(same_file, || "re-saved artifact differs byte-wise".into())?;
    ensure(
        a.meta.class_mapping == b.meta.class_mapping && a.meta.preprocess_fingerprint == b.meta.preprocess_fingerprint,
        || "metadata changed".into(),
    )?;
    Ok("10 probe predictions bitwise equal; re-saved file byte-identical".into())
}

fn predict_is_pure(w: &Work) -> Outcome {
    let a = load_model(&w.path("train").join("model.roast")).map_err(|e| e.to_string())?;
    let probes = probe_images(w)?;
    for p in &probes {
        let (x, y) = (predict_file(&a, p)?, predict_file(&a, p)?);
        ensure(bits(&x) == bits(&y), || format!("{} differs between calls", p.display()))?;
    }
    Ok(format!("{} images predicted twice, bitwise equal", probes.len()))
}

// ---------------------------------------------------------------- service

struct Server {
    child: Child,
    base: String,
}

impl Server {
    fn start(model: &Path, store: &Path) -> Result<Server, String> {
        let port = TcpListener::bind("127.0.0.1:0").and_then(|l| l.local_addr()).map_err(|e| e.to_string())?.port();
        let addr = SocketAddr::from(([127, 0, 0, 1], port));
        let child = Command::new(BIN)
            .args(["serve", "--model", s(model), "--store", s(store), "--bind", &addr.to_string()])
            .env("ROAST_LOG", "warn")
            .stdout(Stdio::null())
            .spawn()
            .map_err(|e| e.to_string())?;
        let mut server = Server { child, base: format!("http://{addr}") };
        let client = reqwest::blocking::Client::new();
        let deadline = Instant::now() + Duration::from_secs(30);
        loop {
            if client.get(server.url("/health")).send().is_ok_and(|r| r.status().is_success()) {
                return Ok(server);
            }
            if let Ok(Some(status)) = server.child.try_wait() {
                return Err(format!("serve exited early with {status}"));
            }
            if Instant::now() > deadline {
                server.kill();
                return Err("serve did not come up within 30s".into());
            }
            std::thread::sleep(Duration::from_millis(100));
        }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    /// SIGKILL: no shutdown hooks run.
    fn kill(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        self.kill();
    }
}

fn post_image(
    client: &reqwest::blocking::Client,
    base: &str,
    bytes: Vec<u8>,
    name: &str,
) -> Result<(u16, Value), String> {
    let part = reqwest::blocking::multipart::Part::bytes(bytes).file_name(name.to_string());
    let form = reqwest::blocking::multipart::Form::new().part("image", part);
    let resp = client.post(format!("{base}/predict")).multipart(form).send().map_err(|e| e.to_string())?;
    let status = resp.status().as_u16();
    Ok((status, resp.json().unwrap_or(Value::Null)))
}

fn get_records(client: &reqwest::blocking::Client, server: &Server) -> Result<Vec<Value>, String> {
    let v: Value =
        client.get(server.url("/records?limit=100000")).send().and_then(|r| r.json()).map_err(|e| e.to_string())?;
    v.as_array().cloned().ok_or_else(|| format!("GET /records returned {v}"))
}

fn service_contract(w: &Work, dark_hits: &mut Option<usize>) -> Outcome {
    let started = Instant::now();
    let model = w.path("train").join("model.roast");
    let store = w.path("store");
    let _ = std::fs::remove_dir_all(&store);
    let held = held_out(w)?;
    let dark = class_files(&held, RoastClass::Dark)?;
    let client = reqwest::blocking::Client::new();

    let mut server = Server::start(&model, &store)?;
    let mut ids = Vec::new();
    let mut hits = 0;
    for f in &dark {
        let (status, rec) =
            post_image(&client, &server.base, std::fs::read(f).map_err(|e| e.to_string())?, "dark.png")?;
        ensure(status == 200, || format!("/predict returned {status}: {rec}"))?;
        if rec["roast_level"] == "dark" {
            hits += 1;
        }
        ids.push(rec["id"].as_str().ok_or("record without id")?.to_string());
    }
    *dark_hits = Some(hits);
    let resp = client
        .put(server.url(&format!("/records/{}/description", ids[0])))
        .body("before the crash")
        .send()
        .map_err(|e| e.to_string())?;
    ensure(resp.status().as_u16() == 200, || format!("PUT description returned {}", resp.status()))?;

    server.kill();
    let server = Server::start(&model, &store)?;
    let replayed = get_records(&client, &server)?;
    let replayed_ids: HashSet<&str> = replayed.iter().filter_map(|r| r["id"].as_str()).collect();
    ensure(replayed.len() == ids.len() && ids.iter().all(|i| replayed_ids.contains(i.as_str())), || {
        format!("{} of {} records after restart", replayed.len(), ids.len())
    })?;
    ensure(replayed.iter().any(|r| r["id"] == ids[0].as_str() && r["description"] == "before the crash"), || {
        "description update lost in the crash".into()
    })?;

    let (status, body) = post_image(&client, &server.base, b"%PDF-1.4 definitely not a photo".to_vec(), "notes.pdf")?;
    ensure(status == 400, || format!("non-image upload returned {status}: {body}"))?;

    let uploads: Vec<Vec<u8>> =
        dark.iter().take(10).map(|f| std::fs::read(f).map_err(|e| e.to_string())).collect::<Result<_, _>>()?;
    let base = server.base.clone();
    let new_ids: Vec<String> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..16)
            .map(|_| {
                let uploads = &uploads;
                let base = &base;
                scope.spawn(move || -> Result<Vec<String>, String> {
                    let client = reqwest::blocking::Client::new();
                    let mut got = Vec::new();
                    for bytes in uploads {
                        let (status, rec) = post_image(&client, base, bytes.clone(), "beans.png")?;
                        if status != 200 {
                            return Err(format!("concurrent /predict returned {status}: {rec}"));
                        }
                        got.push(rec["id"].as_str().unwrap_or_default().to_string());
                    }
                    Ok(got)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().map_err(|_| "client thread panicked".to_string())?)
            .collect::<Result<Vec<Vec<String>>, String>>()
            .map(|v| v.into_iter().flatten().collect())
    })?;
    let unique: HashSet<&String> = new_ids.iter().collect();
    ensure(new_ids.len() == 160 && unique.len() == 160, || {
        format!("{} responses, {} unique ids", new_ids.len(), unique.len())
    })?;
    let all = get_records(&client, &server)?;
    let stored: HashSet<&str> = all.iter().filter_map(|r| r["id"].as_str()).collect();
    ensure(all.len() == ids.len() + 160 && new_ids.iter().all(|i| stored.contains(i.as_str())), || {
        format!("{} records stored, expected {}", all.len(), ids.len() + 160)
    })?;
    drop(server);

    let elapsed = started.elapsed();
    ensure(elapsed <= SERVICE_BUDGET, || format!("took {:.0}s, over 2 minutes", elapsed.as_secs_f64()))?;
    Ok(format!(
        "{} records survived SIGKILL, 16x10 concurrent predicts gave 160 unique ids, non-image -> 400, {:.0}s",
        ids.len(),
        elapsed.as_secs_f64()
    ))
}

// ---------------------------------------------------------------- k-fold

fn kfold_protocol(w: &Work, single: Option<f64>) -> Outcome {
    let started = Instant::now();
    let data = w.path("data");
    let out = w.path("kfold");
    let stdout = roast(&[
        "kfold",
        "--data",
        s(&data),
        "--out",
        s(&out),
        "--k",
        "5",
        "--epochs",
        EPOCHS,
        "--lr",
        LR,
        "--seed",
        SEED,
    ])?;
    let elapsed = started.elapsed();

    let folds = read_json(&out.join("folds.json"))?;
    let fold_of: BTreeMap<String, u64> = serde_json::from_value(folds["fold_of"].clone()).map_err(|e| e.to_string())?;
    let test: BTreeSet<String> = serde_json::from_value(folds["test"].clone()).map_err(|e| e.to_string())?;
    let all: BTreeSet<String> =
        load_dataset(&data).map_err(|e| e.to_string())?.samples.iter().map(|s| s.id()).collect();
    let pool: BTreeSet<String> = all.difference(&test).cloned().collect();
    let assigned: BTreeSet<String> = fold_of.keys().cloned().collect();
    ensure(assigned == pool, || format!("folds cover {} ids, pool has {}", assigned.len(), pool.len()))?;
    ensure(assigned.is_disjoint(&test), || "a test image sits in a fold".into())?;

    let mut accs = Vec::new();
    for fold in 1..=5u64 {
        let path = out.join(format!("fold-{fold}")).join("report-validation.json");
        let text = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        let report = EvaluationReport::from_json(&text).map_err(|e| e.to_string())?;
        let members = fold_of.values().filter(|&&f| f == fold).count() as u64;
        ensure(report.confusion.total() == members && members > 0, || {
            format!("fold {fold} report covers {} samples, fold has {members}", report.confusion.total())
        })?;
        accs.push(report.accuracy);
    }
    let summary = &read_json(&out.join("run.json"))?["summary"];
    let mean = summary["mean_accuracy"].as_f64().ok_or("no mean accuracy")?;
    let arith = accs.iter().sum::<f64>() / accs.len() as f64;
    ensure((mean - arith).abs() <= 1e-9, || format!("mean {mean} != mean of fold reports {arith}"))?;
    ensure(stdout.contains("mean accuracy"), || "mean accuracy not printed".into())?;

    let single = single.ok_or("no single-split accuracy (training criterion failed to run)")?;
    ensure((mean - single).abs() <= 0.05, || format!("mean fold accuracy {mean:.4} vs single split {single:.4}"))?;
    ensure(elapsed <= 5 * TRAIN_BUDGET, || {
        format!("took {:.0}s, over 5x the single-run budget", elapsed.as_secs_f64())
    })?;
    Ok(format!(
        "5 disjoint folds cover {} pool images; mean {mean:.4} vs single split {single:.4}; {:.0}s",
        pool.len(),
        elapsed.as_secs_f64()
    ))
}

fn main() -> ExitCode {
    // `cargo test -- --list` and similar harness probes.
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let mut suite = Suite { failures: 0 };
    suite.check("metric arithmetic", metric_arithmetic);
    suite.check("imaging oracles", imaging_oracles);
    suite.check("partition properties", partition_properties);

    let w = Work::new();
    println!("working directory: {}", w.root.display());
    let mut run = TrainedRun::default();
    suite.check("synthetic end-to-end training", || synthetic_training(&w, &mut run));
    let trained = run.test_accuracy.is_some();
    let need_model = |f: &dyn Fn() -> Outcome| if trained { f() } else { Err("no trained model".into()) };
    suite.check("artifact round trip", || need_model(&|| artifact_round_trip(&w)));
    suite.check("predict is pure", || need_model(&|| predict_is_pure(&w)));
    suite.check("held-out green confidence", || need_model(&|| green_confidence(&w)));
    suite.check("smoothed training loss non-increasing", || need_model(&|| smoothed_loss(&w)));
    let mut dark_hits = None;
    suite.check("service contract", || {
        if trained {
            service_contract(&w, &mut dark_hits)
        } else {
            Err("no trained model".into())
        }
    });
    suite.check("service dark-roast trials", || match dark_hits {
        Some(h) if h >= 45 => Ok(format!("{h}/50 held-out dark images returned dark")),
        Some(h) => Err(format!("{h}/50 held-out dark images returned dark")),
        None => Err("service trials did not run".into()),
    });
    suite.check("k-fold protocol", || kfold_protocol(&w, run.test_accuracy));

    if suite.failures == 0 {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {} criteria failed", suite.failures);
        ExitCode::FAILURE
    }
}
