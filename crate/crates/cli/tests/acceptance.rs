//! Acceptance suite: runs every criterion end to end and prints one
//! PASS/FAIL line per criterion. Exits non-zero if any criterion fails.
//!
//! The numerical property suite runs first; the benchmark criteria drive the
//! `qtomo` subcommands in-process and judge the CSVs they write. The whole
//! pipeline then runs a second time in a fresh directory to check that every
//! CSV is byte-identical.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use qtomo_cli::run_from;
use qtomo_core::dataio::{load_model, read_results, ResultsTable};
use qtomo_core::measurement::{build_projectors, ideal_probabilities, sample_record};
use qtomo_core::mle::{bfgs_minimize, nll, nll_gradient};
use qtomo_core::nn::{backward, ModelParams, NetworkConfig};
use qtomo_core::qstate::{
    density_from_tau, fidelity, haar_random_pure, hilbert_dim, tau_from_density, TauVector,
    DEFAULT_EPSILON,
};
use qtomo_core::rng::seeded;
use qtomo_core::Shots;
use rand::Rng;

const BENCH_SEED: &str = "2024";
const NETWORK_SEED: &str = "1";

struct Report {
    results: Vec<(usize, bool)>,
}

impl Report {
    fn record(&mut self, n: usize, title: &str, pass: bool, detail: String) {
        let verdict = if pass { "PASS" } else { "FAIL" };
        println!("criterion {n} [{verdict}] {title}: {detail}");
        self.results.push((n, pass));
    }
}

fn cli(args: &[&str]) -> Result<String, String> {
    let mut out = Vec::new();
    let mut full = vec!["qtomo"];
    full.extend_from_slice(args);
    run_from(full, &mut out).map_err(|e| format!("qtomo {}: {e}", args.join(" ")))?;
    Ok(String::from_utf8_lossy(&out).into_owned())
}

fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 path")
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = xs
        .into_iter()
        .fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    sum / n as f64
}

fn rows<'a>(t: &'a ResultsTable, method: &'a str, shots: Shots) -> impl Iterator<Item = f64> + 'a {
    t.rows
        .iter()
        .filter(move |r| r.method == method && r.shots == shots)
        .map(|r| r.fidelity)
}

// ------------------------------------------------------------ criterion 8

fn property_suite() -> Vec<(&'static str, bool, String)> {
    let mut checks = Vec::new();
    let mut rng = seeded(8);

    // tau <-> rho round trip.
    let mut worst = 1.0f64;
    for i in 0..100 {
        let d = 1 + i % 3;
        let rho = haar_random_pure(d, &mut rng).unwrap().to_density();
        let back = density_from_tau(&tau_from_density(&rho, DEFAULT_EPSILON).unwrap()).unwrap();
        worst = worst.min(fidelity(&rho, &back).unwrap());
    }
    checks.push((
        "round trip",
        worst >= 1.0 - 1e-6,
        format!("min fidelity {worst:.9}"),
    ));

    // density_from_tau totality.
    let mut bad = 0;
    for i in 0..1000 {
        let d = 1 + i % 3;
        let n = hilbert_dim(d);
        let tau: Vec<f64> = (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let rho = density_from_tau(&TauVector::new(tau).unwrap()).unwrap();
        let m = rho.matrix();
        let herm = (m - m.adjoint()).norm() < 1e-12;
        let trace = (m.trace().re - 1.0).abs() < 1e-10;
        let psd = rho.min_eigenvalue() >= -1e-10;
        if !(herm && trace && psd) {
            bad += 1;
        }
    }
    checks.push(("tau totality fuzz", bad == 0, format!("{bad}/1000 invalid")));

    // NLL gradient against central differences, and scale invariance.
    let (mut worst_rel, mut worst_dot) = (0.0f64, 0.0f64);
    for case in 0..50 {
        let d = 1 + case % 2;
        let proj = build_projectors(d).unwrap();
        let rho = haar_random_pure(d, &mut rng).unwrap().to_density();
        let record =
            sample_record(&ideal_probabilities(&rho, &proj).unwrap(), 100, &mut rng).unwrap();
        let n = hilbert_dim(d);
        let x: Vec<f64> = (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let tau = TauVector::new(x.clone()).unwrap();
        let g = nll_gradient(&tau, &record, &proj, 1e-9).unwrap();
        // Central differences with one Richardson step: random tau can put a
        // probability near zero, where the curvature makes plain central
        // differences too coarse at any usable step.
        let central = |k: usize, h: f64| {
            let mut a = x.clone();
            let mut b = x.clone();
            a[k] += h;
            b[k] -= h;
            let fa = nll(&TauVector::new(a).unwrap(), &record, &proj, 1e-9).unwrap();
            let fb = nll(&TauVector::new(b).unwrap(), &record, &proj, 1e-9).unwrap();
            (fa - fb) / (2.0 * h)
        };
        let fd: Vec<f64> = (0..x.len())
            .map(|k| (4.0 * central(k, 5e-7) - central(k, 1e-6)) / 3.0)
            .collect();
        let diff: f64 = g
            .iter()
            .zip(&fd)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let norm: f64 = g.iter().map(|a| a * a).sum::<f64>().sqrt();
        worst_rel = worst_rel.max(diff / norm.max(1e-12));
        let dot: f64 = g.iter().zip(&x).map(|(a, b)| a * b).sum();
        worst_dot = worst_dot.max(dot.abs());
    }
    checks.push((
        "NLL gradient",
        worst_rel < 1e-5,
        format!("max rel. err. {worst_rel:.2e}"),
    ));
    checks.push((
        "NLL scale invariance",
        worst_dot < 1e-8,
        format!("max |grad . tau| {worst_dot:.2e}"),
    ));

    // Backprop against finite differences on a small single-qubit network.
    let config = NetworkConfig {
        conv1_filters: 2,
        conv2_filters: 3,
        dense1_units: 4,
        dense2_units: 4,
        dropout_rate: 0.0,
        seed: 3,
        ..NetworkConfig::defaults(1)
    };
    let mut model = ModelParams::init(&config).unwrap();
    for t in &mut model.params {
        for v in &mut t.data {
            *v += rng.random_range(-0.1..0.1);
        }
    }
    let proj = build_projectors(1).unwrap();
    let samples: Vec<(Vec<f64>, Vec<f64>)> = (0..3)
        .map(|_| {
            let rho = haar_random_pure(1, &mut rng).unwrap().to_density();
            let m = ideal_probabilities(&rho, &proj).unwrap().into_values();
            let t = tau_from_density(&rho, DEFAULT_EPSILON)
                .unwrap()
                .into_values();
            (m, t)
        })
        .collect();
    let batch: Vec<(&[f64], &[f64])> = samples
        .iter()
        .map(|(m, t)| (m.as_slice(), t.as_slice()))
        .collect();
    let (_, grads) = backward(&model, &batch, None).unwrap();
    let mut worst_bp = 0.0f64;
    for ti in 0..model.params.len() {
        for k in 0..model.params[ti].data.len() {
            let h = 1e-6;
            let orig = model.params[ti].data[k];
            model.params[ti].data[k] = orig + h;
            let fa = backward(&model, &batch, None).unwrap().0;
            model.params[ti].data[k] = orig - h;
            let fb = backward(&model, &batch, None).unwrap().0;
            model.params[ti].data[k] = orig;
            let fd = (fa - fb) / (2.0 * h);
            let g = grads.tensors[ti].data[k];
            let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(1e-7);
            worst_bp = worst_bp.max(rel);
        }
    }
    checks.push((
        "backprop",
        worst_bp < 1e-3,
        format!("max rel. err. {worst_bp:.2e}"),
    ));

    // Rosenbrock.
    let rosen = |x: &[f64]| {
        let (a, b) = (x[0], x[1]);
        let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let g = vec![
            -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
            200.0 * (b - a * a),
        ];
        (f, g)
    };
    let m = bfgs_minimize(rosen, &[-1.2, 1.0], 1e-10, 1000).unwrap();
    let err = (m.x[0] - 1.0).abs().max((m.x[1] - 1.0).abs());
    checks.push((
        "BFGS Rosenbrock",
        err < 1e-5,
        format!("|x - x*| = {err:.1e}"),
    ));

    // Haar mean overlap with |0...0>.
    let mut haar_ok = true;
    let mut detail = Vec::new();
    for d in 1..=3 {
        let n = hilbert_dim(d) as f64;
        let samples = 20_000;
        let m = mean(
            (0..samples).map(|_| haar_random_pure(d, &mut rng).unwrap().amplitudes()[0].norm_sqr()),
        );
        let sigma = ((n - 1.0) / (n * n * (n + 1.0)) / samples as f64).sqrt();
        let z = (m - 1.0 / n) / sigma;
        haar_ok &= z.abs() <= 3.0;
        detail.push(format!("d={d} z={z:+.2}"));
    }
    checks.push(("Haar overlap", haar_ok, detail.join(" ")));

    // Per-setting probability sums.
    let mut worst_sum = 0.0f64;
    for d in 1..=4 {
        let proj = build_projectors(d).unwrap();
        let rho = haar_random_pure(d, &mut rng).unwrap().to_density();
        let rec = ideal_probabilities(&rho, &proj).unwrap();
        for s in 0..proj.setting_count() {
            worst_sum = worst_sum.max((rec.setting(s).iter().sum::<f64>() - 1.0).abs());
        }
    }
    checks.push((
        "setting sums",
        worst_sum <= 1e-10,
        format!("max |sum - 1| {worst_sum:.1e}"),
    ));

    checks
}

// -------------------------------------------------------------- pipeline

struct Pipeline {
    dir: PathBuf,
    mle_seconds: f64,
    d2_seconds: f64,
    final_val_fidelity_d2: f64,
}

impl Pipeline {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }
}

fn last_val_fidelity(train_output: &str) -> f64 {
    train_output
        .lines()
        .rev()
        .find_map(|l| l.split(',').nth(2)?.parse::<f64>().ok())
        .unwrap_or(f64::NAN)
}

/// Generates data, trains the three networks, and writes every benchmark CSV
/// with timing disabled.
fn run_pipeline(dir: &Path) -> Result<Pipeline, String> {
    fs::create_dir_all(dir).map_err(|e| e.to_string())?;
    let f = |name: &str| dir.join(name);

    // Criterion 1: noiseless MLE.
    let start = Instant::now();
    cli(&[
        "bench-shots",
        "--qubits",
        "2",
        "--shots",
        "ideal",
        "--methods",
        "mle",
        "--states",
        "20",
        "--seed",
        BENCH_SEED,
        "--no-timing",
        "--out",
        p(&f("c1_mle_ideal.csv")),
    ])?;
    let mle_seconds = start.elapsed().as_secs_f64();

    // Networks: d=2 ideal, d=2 shots:15, d=1 ideal.
    let start = Instant::now();
    let mut final_val_fidelity_d2 = f64::NAN;
    for (tag, d, prov, seeds) in [
        ("d2_ideal", "2", "ideal", ("101", "102")),
        ("d2_shots15", "2", "shots:15", ("201", "202")),
        ("d1_ideal", "1", "ideal", ("301", "302")),
    ] {
        let (train, val, model) = (
            f(&format!("{tag}_train.jsonl")),
            f(&format!("{tag}_val.jsonl")),
            f(&format!("{tag}.json")),
        );
        cli(&[
            "gen-data",
            "--qubits",
            d,
            "--count",
            "4000",
            "--provenance",
            prov,
            "--seed",
            seeds.0,
            "--out",
            p(&train),
        ])?;
        cli(&[
            "gen-data",
            "--qubits",
            d,
            "--count",
            "200",
            "--provenance",
            prov,
            "--seed",
            seeds.1,
            "--out",
            p(&val),
        ])?;
        let out = cli(&[
            "train",
            "--train",
            p(&train),
            "--val",
            p(&val),
            "--seed",
            NETWORK_SEED,
            "--out",
            p(&model),
        ])?;
        let fid = last_val_fidelity(&out);
        println!("    trained {tag}: final val_fidelity {fid:.4}");
        if tag == "d2_ideal" {
            final_val_fidelity_d2 = fid;
        }
    }

    // Criteria 2 to 5 on d=2, and the d=1 analog of criterion 2.
    cli(&[
        "bench-shots",
        "--qubits",
        "2",
        "--shots",
        "ideal,5,15,8192",
        "--methods",
        "nn-ideal,nn-shots:15,mle",
        "--model",
        &format!("nn-ideal={}", p(&f("d2_ideal.json"))),
        "--model",
        &format!("nn-shots:15={}", p(&f("d2_shots15.json"))),
        "--states",
        "20",
        "--seed",
        BENCH_SEED,
        "--no-timing",
        "--out",
        p(&f("c2_5_shots.csv")),
    ])?;
    let d2_seconds = start.elapsed().as_secs_f64();
    cli(&[
        "bench-shots",
        "--qubits",
        "1",
        "--shots",
        "ideal",
        "--methods",
        "nn-ideal",
        "--model",
        &format!("nn-ideal={}", p(&f("d1_ideal.json"))),
        "--states",
        "20",
        "--seed",
        BENCH_SEED,
        "--no-timing",
        "--out",
        p(&f("c2_d1.csv")),
    ])?;
    cli(&[
        "bench-scaling",
        "--qubits",
        "1..2",
        "--scenarios",
        "ideal,depol",
        "--checkpoint",
        p(&f("d1_ideal.json")),
        "--checkpoint",
        p(&f("d2_ideal.json")),
        "--seed",
        BENCH_SEED,
        "--no-timing",
        "--out",
        p(&f("scaling.csv")),
    ])?;

    // Criterion 6.
    cli(&[
        "noise-curve",
        "--qubits",
        "2",
        "--shots",
        "16,64,256,1024,4096",
        "--states",
        "50",
        "--repeats",
        "20",
        "--seed",
        BENCH_SEED,
        "--out",
        p(&f("c6_noise_curve.csv")),
    ])?;

    Ok(Pipeline {
        dir: dir.to_path_buf(),
        mle_seconds,
        d2_seconds,
        final_val_fidelity_d2,
    })
}

fn judge(run: &Pipeline, report: &mut Report) -> Result<(), String> {
    let read = |name: &str| read_results(run.path(name)).map_err(|e| e.to_string());

    let c1 = read("c1_mle_ideal.csv")?;
    let min = c1
        .rows
        .iter()
        .map(|r| r.fidelity)
        .fold(f64::INFINITY, f64::min);
    report.record(
        1,
        "noiseless MLE oracle",
        c1.rows.len() == 20 && min >= 0.999 && run.mle_seconds < 120.0,
        format!(
            "{} states, min fidelity {min:.6} (>= 0.999), {:.2} s (< 120 s)",
            c1.rows.len(),
            run.mle_seconds
        ),
    );

    let shots = read("c2_5_shots.csv")?;
    let d1 = read("c2_d1.csv")?;
    let nn_ideal = mean(rows(&shots, "nn-ideal", Shots::Ideal));
    let nn_d1 = mean(rows(&d1, "nn-ideal", Shots::Ideal));
    report.record(
        2,
        "NN ideal desk-scale",
        nn_ideal >= 0.95 && nn_d1 >= 0.98 && run.d2_seconds < 900.0,
        format!(
            "d=2 mean {nn_ideal:.4} (>= 0.95), d=1 mean {nn_d1:.4} (>= 0.98), d=2 final val_fidelity {:.4}, \
             d=2 train+eval {:.0} s (< 900 s)",
            run.final_val_fidelity_d2, run.d2_seconds
        ),
    );

    let high = mean(rows(&shots, "nn-ideal", Shots::Finite(8192)));
    report.record(
        3,
        "high-shots NN",
        high >= 0.97,
        format!("nn-ideal at 8192 shots {high:.4} (>= 0.97)"),
    );

    let mut ok4 = true;
    let mut detail = Vec::new();
    for n in [5, 15] {
        let matched = mean(rows(&shots, "nn-shots:15", Shots::Finite(n)));
        let ideal = mean(rows(&shots, "nn-ideal", Shots::Finite(n)));
        ok4 &= matched > ideal;
        detail.push(format!(
            "{n} shots: nn-shots:15 {matched:.4} vs nn-ideal {ideal:.4}"
        ));
    }
    report.record(4, "noise-matched training", ok4, detail.join("; "));

    let nn15 = mean(rows(&shots, "nn-shots:15", Shots::Finite(15)));
    let mle15 = mean(rows(&shots, "mle", Shots::Finite(15)));
    report.record(
        5,
        "NN vs MLE at 15 shots",
        nn15 > mle15,
        format!("nn-shots:15 {nn15:.4} vs mle {mle15:.4}"),
    );

    let curve = fs::read_to_string(run.path("c6_noise_curve.csv")).map_err(|e| e.to_string())?;
    let points: Vec<(f64, f64)> = curve
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].parse().unwrap(), f[1].parse().unwrap())
        })
        .collect();
    let slope = qtomo_cli::harness::loglog_slope(&points);
    report.record(
        6,
        "shot-noise law",
        points.len() == 5 && (slope + 1.0).abs() <= 0.15,
        format!(
            "log-log slope {slope:.4} (-1 +/- 0.15) over {} shots levels",
            points.len()
        ),
    );

    let scaling = read("scaling.csv")?;
    let per_d: Vec<String> = [1, 2]
        .iter()
        .map(|&d| {
            let m = mean(
                scaling
                    .rows
                    .iter()
                    .filter(|r| r.d == d && r.shots == Shots::Ideal)
                    .map(|r| r.fidelity),
            );
            format!("d={d} ideal {m:.4}")
        })
        .collect();
    println!(
        "    bench-scaling: {} rows, {}",
        scaling.rows.len(),
        per_d.join(", ")
    );
    Ok(())
}

fn speed_ordering(run: &Pipeline, report: &mut Report) -> Result<(), String> {
    let out = run.path("c7_timing.csv");
    cli(&[
        "bench-shots",
        "--qubits",
        "2",
        "--shots",
        "15",
        "--methods",
        "nn-shots:15,mle",
        "--model",
        &format!("nn-shots:15={}", p(&run.path("d2_shots15.json"))),
        "--states",
        "20",
        "--seed",
        BENCH_SEED,
        "--out",
        p(&out),
    ])?;
    let t = read_results(&out).map_err(|e| e.to_string())?;
    let time = |m: &str| {
        mean(
            t.rows
                .iter()
                .filter(|r| r.method == m)
                .map(|r| r.wall_time_s),
        )
    };
    let (nn, mle) = (time("nn-shots:15"), time("mle"));
    report.record(
        7,
        "speed ordering",
        nn <= mle / 10.0,
        format!(
            "NN {nn:.2e} s vs MLE {mle:.2e} s per record (ratio {:.1})",
            mle / nn
        ),
    );
    Ok(())
}

fn determinism(a: &Pipeline, b: &Pipeline, report: &mut Report) {
    let files = [
        "c1_mle_ideal.csv",
        "c2_5_shots.csv",
        "c2_5_shots.sqdiff.csv",
        "c2_d1.csv",
        "scaling.csv",
        "c6_noise_curve.csv",
        "d2_ideal_train.jsonl",
        "d2_shots15_train.jsonl",
    ];
    let mut differing: Vec<&str> = files
        .iter()
        .copied()
        .filter(|name| {
            fs::read(a.path(name)).ok() != fs::read(b.path(name)).ok() || !a.path(name).exists()
        })
        .collect();
    for model in ["d2_ideal.json", "d2_shots15.json", "d1_ideal.json"] {
        let load = |run: &Pipeline| load_model(run.path(model)).ok().map(|c| c.model.params);
        if load(a).is_none() || load(a) != load(b) {
            differing.push(model);
        }
    }
    report.record(
        9,
        "determinism",
        differing.is_empty(),
        if differing.is_empty() {
            format!(
                "{} CSV/dataset files byte-identical and 3 networks bitwise equal across two runs",
                files.len()
            )
        } else {
            format!("differences in {differing:?}")
        },
    );
}

fn main() -> ExitCode {
    let mut report = Report {
        results: Vec::new(),
    };
    let root = tempfile::tempdir().expect("temporary directory");

    println!("acceptance: property suite");
    let checks = property_suite();
    let props_ok = checks.iter().all(|c| c.1);
    for (name, ok, detail) in &checks {
        println!("    {} {name}: {detail}", if *ok { "ok  " } else { "FAIL" });
    }
    report.record(
        8,
        "numerical property suite",
        props_ok,
        format!(
            "{}/{} checks passed",
            checks.iter().filter(|c| c.1).count(),
            checks.len()
        ),
    );

    if !props_ok {
        println!("acceptance: property suite failed; skipping training criteria");
        for n in [1, 2, 3, 4, 5, 6, 7, 9] {
            report.record(n, "skipped", false, "property suite failed".into());
        }
    } else {
        println!("acceptance: pipeline run 1");
        match run_pipeline(&root.path().join("run1")) {
            Err(e) => {
                for n in [1, 2, 3, 4, 5, 6, 7, 9] {
                    report.record(n, "pipeline error", false, e.clone());
                }
            }
            Ok(first) => {
                if let Err(e) = judge(&first, &mut report) {
                    for n in 1..=6 {
                        if !report.results.iter().any(|r| r.0 == n) {
                            report.record(n, "results unreadable", false, e.clone());
                        }
                    }
                }
                if let Err(e) = speed_ordering(&first, &mut report) {
                    report.record(7, "speed ordering", false, e);
                }
                println!("acceptance: pipeline run 2 (determinism)");
                match run_pipeline(&root.path().join("run2")) {
                    Ok(second) => determinism(&first, &second, &mut report),
                    Err(e) => report.record(9, "determinism", false, e),
                }
            }
        }
    }

    report.results.sort_by_key(|r| r.0);
    let passed = report.results.iter().filter(|r| r.1).count();
    println!(
        "acceptance: {passed}/{} criteria passed",
        report.results.len()
    );
    if passed == report.results.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
