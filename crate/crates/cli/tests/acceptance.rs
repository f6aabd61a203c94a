//! Acceptance criteria at desk scale: 16×16 patches, 256 atoms, batches of
//! 100 and a ten-image synthetic corpus. Each test prints one PASS/FAIL line
//! straight to stderr, so the lines appear even when output is captured.
//!
//! Tests hold a global lock so runtime limits are measured without
//! competition from the other criteria.

use std::f64::consts::{PI, TAU};
use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::{Duration, Instant};

use gabor_cli::manifest::{RunManifest, MANIFEST_NAME};
use gabor_core::benchmark::{
    default_lambdas, lambda_sweep, matched_errors, SweepPoint, MATCHED_LEVELS,
};
use gabor_core::corpus::{dead_leaves_corpus, DeadLeaves};
use gabor_core::fitstats::{fit_lognormal, fit_pareto, ks_distance, pearson, MarginalFit};
use gabor_core::gabor::{evaluate, partial_derivative, Grid, Param, DEFAULT_SCALE};
use gabor_core::genmodel::generate_basis;
use gabor_core::imageio::{sample_patches_with, whiten, ImagePatches};
use gabor_core::inference::{energy, map_infer};
use gabor_core::learning::{em_learn, stability_probe};
use gabor_core::linalg::{singular_values, spectrum_elbow};
use gabor_core::rng::seeded;
use gabor_core::{
    FieldMatrix, GaborBasis, GaborParams, GenModelSpec, InferenceConfig, LearningConfig,
    NonparamConfig, PatchBatch, PipelineConfig, RawImage, Variant,
};
use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, LogNormal, Pareto, StandardNormal};

static LOCK: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    LOCK.lock().unwrap_or_else(|e| e.into_inner())
}

/// Prints the verdict line and fails the test on FAIL.
fn verdict(n: usize, name: &str, pass: bool, detail: String) {
    let line = format!(
        "{} criterion {n} ({name}): {detail}\n",
        if pass { "PASS" } else { "FAIL" }
    );
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(pass, "{line}");
}

struct Fixture {
    white: Vec<RawImage>,
    held: PatchBatch,
    uniform: GaborBasis,
    learned: GaborBasis,
    swapped: GaborBasis,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let pcfg = PipelineConfig::default();
        let raw = dead_leaves_corpus(&DeadLeaves::default(), 10, 1).unwrap();
        let white: Vec<RawImage> = raw.iter().map(|i| whiten(i, &pcfg).unwrap()).collect();
        let held = sample_patches_with(&white, 16, 400, &mut seeded(999)).unwrap();
        let uniform = GaborBasis::uniform_random(16, DEFAULT_SCALE, 1).unwrap();
        let icfg = InferenceConfig::default();
        let learn = |lcfg: &LearningConfig| {
            let mut stream = ImagePatches::new(white.clone(), 16, 5).unwrap();
            em_learn(&mut stream, &pcfg, &icfg, lcfg, &uniform)
                .unwrap()
                .0
        };
        let normal = LearningConfig::default();
        let swapped = LearningConfig {
            eta: normal.eta.swap_sigma(),
            ..normal.clone()
        };
        Fixture {
            learned: learn(&normal),
            swapped: learn(&swapped),
            white,
            held,
            uniform,
        }
    })
}

fn matched(basis: &GaborBasis) -> Vec<f64> {
    let f = fixture();
    let curve: Vec<SweepPoint> = lambda_sweep(
        &basis.render(),
        &f.held,
        &default_lambdas(),
        &InferenceConfig::default(),
    )
    .unwrap();
    matched_errors(&curve, &MATCHED_LEVELS).unwrap()
}

fn fmt(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.4}")).collect();
    format!("[{}]", parts.join(", "))
}

#[test]
fn criterion_01_gradient_correctness() {
    let _g = serial();
    let t = Instant::now();
    let grid = Grid::new(16).unwrap();
    let mut rng = seeded(101);
    let h = 1e-5;
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let p = GaborParams {
            x0: rng.random_range(0.0..16.0),
            y0: rng.random_range(0.0..16.0),
            phi: rng.random_range(0.0..PI),
            phase: rng.random_range(-PI..PI),
            sigma_x: rng.random_range(0.08..0.6),
            sigma_y: rng.random_range(0.08..0.6),
            k: rng.random_range(3.0..40.0),
        };
        for which in Param::ALL {
            let analytic = partial_derivative(&p, DEFAULT_SCALE, &grid, which);
            let (mut up, mut down) = (p, p);
            up.set(which, p.get(which) + h);
            down.set(which, p.get(which) - h);
            let fd = (evaluate(&up, DEFAULT_SCALE, &grid) - evaluate(&down, DEFAULT_SCALE, &grid))
                / (2.0 * h);
            let scale = analytic
                .iter()
                .fold(0.0f64, |m, v| m.max(v.abs()))
                .max(1e-12);
            let err = (&fd - &analytic).iter().fold(0.0f64, |m, v| m.max(v.abs())) / scale;
            worst = worst.max(err);
        }
    }
    let took = t.elapsed();
    verdict(
        1,
        "gradient correctness",
        worst < 1e-5 && took < Duration::from_secs(10),
        format!("max relative error {worst:.2e} over 50 draws x 5 parameters, {took:.2?}"),
    );
}

fn grid_min(
    img: &Array1<f64>,
    g: &FieldMatrix,
    lambda: f64,
    centre: [f64; 3],
    half: f64,
    step: f64,
) -> ([f64; 3], f64) {
    let n = (half / step).round() as i64;
    let mut best = ([0.0; 3], f64::INFINITY);
    let mut a = Array1::zeros(3);
    for i in -n..=n {
        for j in -n..=n {
            for k in -n..=n {
                let pt = [
                    (centre[0] + i as f64 * step).clamp(-3.0, 3.0),
                    (centre[1] + j as f64 * step).clamp(-3.0, 3.0),
                    (centre[2] + k as f64 * step).clamp(-3.0, 3.0),
                ];
                a.assign(&Array1::from(pt.to_vec()));
                let e = energy(img.view(), g, a.view(), lambda);
                if e < best.1 {
                    best = (pt, e);
                }
            }
        }
    }
    best
}

#[test]
fn criterion_02_inference_oracle() {
    let _g = serial();
    let t = Instant::now();
    let cfg = InferenceConfig {
        lambda_sparse: 0.1,
        cg_tol: 1e-12,
        cg_max_iters: 10_000,
    };
    let mut rng = seeded(202);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let g = FieldMatrix::new(Array2::from_shape_fn((6, 3), |_| {
            rng.random_range(-1.0..1.0)
        }))
        .unwrap();
        let img = Array1::from_shape_fn(6, |_| rng.random_range(-1.0..1.0));
        let code = map_infer(img.view(), &g, &cfg).unwrap();
        // exhaustive over the cube at 0.05, then at 1e-3 around the best cell
        let (coarse, _) = grid_min(&img, &g, 0.1, [0.0; 3], 3.0, 0.05);
        let (_, fine) = grid_min(&img, &g, 0.1, coarse, 0.06, 1e-3);
        worst = worst.max((code.energy - fine).abs());
    }
    let took = t.elapsed();
    verdict(
        2,
        "inference oracle",
        worst < 1e-6 && took < Duration::from_secs(60),
        format!("max |E_map - E_grid| {worst:.2e} over 10 three-atom instances, {took:.2?}"),
    );
}

#[test]
fn criterion_03_learned_beats_uniform() {
    let _g = serial();
    let f = fixture();
    let (u, l) = (matched(&f.uniform), matched(&f.learned));
    let margins: Vec<f64> = u.iter().zip(&l).map(|(u, l)| (u - l) / u).collect();
    let min = margins.iter().copied().fold(f64::INFINITY, f64::min);
    verdict(
        3,
        "learned beats uniform",
        min >= 0.10,
        format!(
            "uniform {} learned {} min relative margin {min:.3}",
            fmt(&u),
            fmt(&l)
        ),
    );
}

const MODEL_DRAWS: u64 = 4;

#[test]
fn criterion_04_model_ranking() {
    let _g = serial();
    let f = fixture();
    // one draw of 256 atoms is noisy; score each model by the mean over draws
    let model = |v| {
        let runs: Vec<Vec<f64>> = (1..=MODEL_DRAWS)
            .map(|seed| {
                matched(
                    &generate_basis(&GenModelSpec::published(v), 16, DEFAULT_SCALE, seed).unwrap(),
                )
            })
            .collect();
        (0..MATCHED_LEVELS.len())
            .map(|i| runs.iter().map(|r| r[i]).sum::<f64>() / MODEL_DRAWS as f64)
            .collect::<Vec<f64>>()
    };
    let (u, m1, m2, m3, l) = (
        matched(&f.uniform),
        model(Variant::Model1),
        model(Variant::Model2),
        model(Variant::Model3),
        matched(&f.learned),
    );
    let mut ok = true;
    for i in 0..MATCHED_LEVELS.len() {
        ok &= u[i] > m1[i] && m1[i] >= m2[i] && m2[i] > m3[i] && m3[i] > l[i];
        ok &= (u[i] - m1[i]) / u[i] >= 0.05 && (m3[i] - l[i]) / m3[i] >= 0.05;
    }
    verdict(
        4,
        "model ranking",
        ok,
        format!(
            "uniform {} model1 {} model2 {} model3 {} (means of {MODEL_DRAWS} draws) learned {}",
            fmt(&u),
            fmt(&m1),
            fmt(&m2),
            fmt(&m3),
            fmt(&l)
        ),
    );
}

fn mean_aspect(b: &GaborBasis) -> f64 {
    b.atoms().iter().map(|a| a.sigma_y / a.sigma_x).sum::<f64>() / b.len() as f64
}

#[test]
fn criterion_05_aspect_ratios() {
    let _g = serial();
    let f = fixture();
    let (n, s) = (mean_aspect(&f.learned), mean_aspect(&f.swapped));
    verdict(
        5,
        "aspect ratios",
        (0.3..=0.7).contains(&n) && (1.4..=2.6).contains(&s),
        format!("mean sigma_y/sigma_x: normal rates {n:.3}, interchanged rates {s:.3}"),
    );
}

#[test]
fn criterion_06_sampler_fidelity() {
    let _g = serial();
    let t = Instant::now();
    const N: usize = 100_000;
    let mut worst = 0.0f64;
    for v in [Variant::Model1, Variant::Model2, Variant::Model3] {
        let spec = GenModelSpec::published(v);
        let mut rng = seeded(600 + v as u64);
        let draws: Vec<GaborParams> = (0..N).map(|_| spec.sample(&mut rng).unwrap()).collect();
        let col = |g: fn(&GaborParams) -> f64| draws.iter().map(g).collect::<Vec<f64>>();
        let lam = MarginalFit::Pareto {
            alpha: spec.lambda.alpha,
            beta: spec.lambda.beta,
        };
        let mut ds = vec![
            ks_distance(&col(|p| p.phi), |x| (x / PI).clamp(0.0, 1.0)),
            ks_distance(&col(|p| p.phase), |x| {
                ((x + TAU) / (2.0 * TAU)).clamp(0.0, 1.0)
            }),
            ks_distance(&col(|p| p.wavelength()), |x| lam.cdf(x)),
        ];
        if v != Variant::Model3 {
            let sx = MarginalFit::LogNormal {
                mu: spec.sigma_x.mu,
                sigma: spec.sigma_x.sigma,
            };
            let sy = MarginalFit::Pareto {
                alpha: spec.sigma_y.alpha,
                beta: spec.sigma_y.beta,
            };
            ds.push(ks_distance(&col(|p| p.sigma_x), |x| sx.cdf(x)));
            ds.push(ks_distance(&col(|p| p.sigma_y), |x| sy.cdf(x)));
        }
        worst = ds.into_iter().fold(worst, f64::max);
    }
    let r1 = GenModelSpec::published(Variant::Model2).rho[0];
    let mut rng = seeded(606);
    let (mut a, mut b) = (Vec::with_capacity(N), Vec::with_capacity(N));
    for _ in 0..N {
        let z1: f64 = StandardNormal.sample(&mut rng);
        let z2: f64 = StandardNormal.sample(&mut rng);
        a.push(z1);
        b.push(r1 * z1 + (1.0 - r1 * r1).sqrt() * z2);
    }
    let rho = pearson(&a, &b).unwrap();
    let took = t.elapsed();
    verdict(
        6,
        "sampler fidelity",
        worst < 0.01 && (rho - 0.8054).abs() <= 0.02 && took < Duration::from_secs(60),
        format!("max KS distance {worst:.4}, latent rho {rho:.4}, {took:.2?}"),
    );
}

#[test]
fn criterion_07_fit_recovery() {
    let _g = serial();
    let mut rng = seeded(707);
    let ln: Vec<f64> = LogNormal::new(-1.269, 0.3771)
        .unwrap()
        .sample_iter(&mut rng)
        .take(100_000)
        .collect();
    let pa: Vec<f64> = Pareto::new(0.1987, 2.751)
        .unwrap()
        .sample_iter(&mut rng)
        .take(100_000)
        .collect();
    let rel = |a: f64, b: f64| (a / b - 1.0).abs();
    let (MarginalFit::LogNormal { mu, sigma }, MarginalFit::Pareto { alpha, beta }) = (
        fit_lognormal(&ln).unwrap().fit,
        fit_pareto(&pa).unwrap().fit,
    ) else {
        unreachable!()
    };
    let errs = [
        rel(mu, -1.269),
        rel(sigma, 0.3771),
        rel(alpha, 2.751),
        rel(beta, 0.1987),
    ];
    verdict(
        7,
        "fit recovery",
        errs.iter().all(|e| *e < 0.02),
        format!(
            "mu {mu:.4} sigma {sigma:.4} alpha {alpha:.4} beta {beta:.4}, max relative error {:.4}",
            errs.iter().copied().fold(0.0, f64::max)
        ),
    );
}

#[test]
fn criterion_08_stability_probe_contrast() {
    let _g = serial();
    let f = fixture();
    let pcfg = PipelineConfig::default();
    let icfg = InferenceConfig::default();
    let ncfg = NonparamConfig::default();
    let drift = |b: &GaborBasis| {
        let mut stream = ImagePatches::new(f.white.clone(), 16, 77).unwrap();
        stability_probe(b, &mut stream, &pcfg, &icfg, &ncfg)
            .unwrap()
            .1
    };
    let (n, s) = (drift(&f.learned), drift(&f.swapped));
    verdict(
        8,
        "stability probe contrast",
        s >= 2.0 * n,
        format!(
            "drift after {} baseline iterations: normal {n:.4}, interchanged {s:.4}, ratio {:.3}",
            ncfg.iterations,
            s / n
        ),
    );
}

#[test]
fn criterion_09_spectrum_elbow() {
    let _g = serial();
    let f = fixture();
    let sv = singular_values(f.learned.render().values().view());
    let elbow = spectrum_elbow(&sv, 0.05);
    verdict(
        9,
        "spectrum elbow",
        (150..=220).contains(&elbow),
        format!(
            "last singular value >= 5% of the largest at index {elbow} of {}",
            sv.len()
        ),
    );
}

const SMALL: &str = r#"
[corpus]
count = 3
[corpus.leaves]
width = 48
height = 48
[pipeline]
patch_size = 8
batch_size = 10
[preprocess]
train_patches = 150
test_patches = 40
[learning]
iterations = 3
[baseline]
iterations = 3
[bench]
lambdas = [0.001, 0.1, 1.0]
"#;

fn gabor(dir: &Path, args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_gabor"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "error")
        .status()
        .unwrap()
        .success()
}

#[test]
fn criterion_10_replay_determinism() {
    let _g = serial();
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(dir.join("small.toml"), SMALL).unwrap();
    let runs: [&[&str]; 7] = [
        &["synth-corpus", "--out", "corpus"],
        &["preprocess", "corpus", "--out", "pre"],
        &["learn", "pre/train.csv", "--out", "learn"],
        &["generate", "--out", "gen"],
        &[
            "bench",
            "--patches",
            "pre/test.csv",
            "gen/basis.csv",
            "learn/basis.csv",
            "--out",
            "bench",
        ],
        &["fit", "gen/basis.csv", "--out", "fit"],
        &[
            "probe",
            "learn/basis.csv",
            "--patches",
            "pre/train.csv",
            "--out",
            "probe",
        ],
    ];
    let mut failures = vec![];
    let mut files = 0;
    for args in runs {
        let out = args[args.len() - 1];
        let mut full = args.to_vec();
        full.extend(["--config", "small.toml", "--seed", "3"]);
        if !gabor(dir, &full) {
            failures.push(format!("{out}: run failed"));
            continue;
        }
        let replay = format!("{out}-replay");
        if !gabor(
            dir,
            &[
                "replay",
                &format!("{out}/{MANIFEST_NAME}"),
                "--out",
                &replay,
            ],
        ) {
            failures.push(format!("{out}: replay failed"));
            continue;
        }
        let manifest = RunManifest::read(&dir.join(out).join(MANIFEST_NAME)).unwrap();
        for name in &manifest.outputs {
            files += 1;
            if std::fs::read(dir.join(out).join(name)).unwrap()
                != std::fs::read(dir.join(&replay).join(name)).unwrap()
            {
                failures.push(format!("{out}/{name} differs"));
            }
        }
    }
    verdict(
        10,
        "replay determinism",
        failures.is_empty(),
        if failures.is_empty() {
            format!("7 commands, {files} output files identical after replay")
        } else {
            failures.join("; ")
        },
    );
}
