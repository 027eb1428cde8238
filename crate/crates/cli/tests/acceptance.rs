//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Pass criterion numbers as arguments to run a
//! subset, e.g. `cargo test --test acceptance -- 5 6`.

use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode, Output};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wdsrkit::blocks::BlockSpec;
use wdsrkit::budget::{audit_resolution, budget_report};
use wdsrkit::checkpoint::{load_checkpoint, save_checkpoint};
use wdsrkit::data::synth::write_corpus;
use wdsrkit::data::{prepare_dataset, Prepared};
use wdsrkit::gradcheck::{run_gradcheck, GradCheckOptions};
use wdsrkit::layers::Normalization;
use wdsrkit::network::{Model, NetSpec, SCALES};
use wdsrkit::nnops::{conv2d, pixel_shuffle, pixel_unshuffle, Conv2dParams, WeightNormParams};
use wdsrkit::train::{self, ema, NullSink, PairSet, TrainConfig, TrainReport};
use wdsrkit::Tensor;

type Outcome = Result<String, String>;
type Criterion = (u32, &'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn wdsrkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wdsrkit"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn run_ok(args: &[&str]) -> Result<String, String> {
    let out = wdsrkit(args);
    if out.status.success() {
        Ok(stdout(&out))
    } else {
        Err(format!(
            "`wdsrkit {}` exited {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr).trim()
        ))
    }
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let report = run_gradcheck(&NetSpec::default(), &GradCheckOptions::default())
        .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let cli = wdsrkit(&["gradcheck"]);
    let missing = report.ops_missing();
    let families = report.families_covered().len();
    check(
        report.passed()
            && missing.is_empty()
            && families == 3
            && report.max_rel_err() <= 1e-3
            && cli.status.success()
            && stdout(&cli).contains("gradcheck PASS")
            && elapsed < Duration::from_secs(60),
        format!(
            "{} checks, max rel err {:.2e} <= 1e-3, ops missing {missing:?}, {families} families, {:.1}s, cli exit {:?}",
            report.results.len(),
            report.max_rel_err(),
            elapsed.as_secs_f64(),
            cli.status.code()
        ),
    )
}

/// `params=` field of the `total` line of `wdsrkit budget`.
fn cli_total_params(sets: &[&str]) -> Result<usize, String> {
    let mut args = vec!["budget"];
    for kv in sets {
        args.extend(["--set", kv]);
    }
    let text = run_ok(&args)?;
    text.lines()
        .find(|l| l.starts_with("total "))
        .and_then(|l| l.split_whitespace().find_map(|f| f.strip_prefix("params=")))
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| format!("no total line in:\n{text}"))
}

fn budget_parity() -> Outcome {
    let mut parities = Vec::new();
    let mut specs = Vec::new();
    for r in [2, 4] {
        specs.push((
            format!("wdsr-a r={r}"),
            BlockSpec::wdsr_a_matched(64, r).map_err(|e| e.to_string())?,
        ));
    }
    for r in [4, 6, 9] {
        specs.push((format!("wdsr-b r={r}"), BlockSpec::wdsr_b(32, r, 64)));
    }
    for (name, block) in specs {
        let report =
            budget_report(&NetSpec::wdsr(2, 1, block), (48, 48)).map_err(|e| e.to_string())?;
        let p = report.parity_percent().ok_or("no baseline for parity")?;
        parities.push((name, p));
    }
    let worst = parities.iter().map(|(_, p)| p.abs()).fold(0.0, f64::max);

    let edsr = cli_total_params(&[
        "net.topology=edsr-baseline",
        "net.family=vanilla",
        "net.expansion=1",
        "net.normalization=plain",
        "net.width=64",
        "net.blocks=1",
    ])?;
    let wdsr = cli_total_params(&["net.blocks=1"])?;
    let rel = |n: usize, target: f64| (n as f64 - target).abs() / target;
    let (e_err, w_err) = (rel(edsr, 0.26e6), rel(wdsr, 0.08e6));
    let listed: Vec<String> = parities
        .iter()
        .map(|(n, p)| format!("{n} {p:+.2}%"))
        .collect();
    check(
        worst <= 2.0 && e_err <= 0.15 && w_err <= 0.15,
        format!(
            "parity at w1=64: {} (worst {worst:.2}% <= 2%); edsr-baseline 1 block {edsr} params ({:+.1}% vs 0.26M), wdsr-a 1 block {wdsr} ({:+.1}% vs 0.08M)",
            listed.join(", "),
            100.0 * (edsr as f64 / 0.26e6 - 1.0),
            100.0 * (wdsr as f64 / 0.08e6 - 1.0)
        ),
    )
}

fn weight_norm_invariant() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let (cout, cin) = (rng.random_range(1..17), rng.random_range(1..17));
        let k = [1, 3, 5][rng.random_range(0..3)];
        let magnitude = 10f32.powf(rng.random_range(-4.0..4.0));
        let p = WeightNormParams {
            v: Tensor::from_fn([cout, cin, k, k], |_| {
                rng.random_range(-1.0..1.0) * magnitude
            }),
            g: Tensor::from_fn([cout], |_| {
                rng.random_range(0.01..10.0) * if rng.random_bool(0.2) { -1.0 } else { 1.0 }
            }),
            bias: Tensor::zeros([cout]),
        };
        let w = p.effective().map_err(|e| e.to_string())?;
        let fan = cin * k * k;
        for c in 0..cout {
            let norm: f64 = w.data()[c * fan..(c + 1) * fan]
                .iter()
                .map(|&x| (x as f64).powi(2))
                .sum::<f64>()
                .sqrt();
            let g = (p.g.data()[c] as f64).abs();
            worst = worst.max((norm - g).abs() / g);
        }
    }
    check(
        worst <= 1e-5,
        format!("1000 parameterizations, worst |‖w_c‖ - |g_c|| / |g_c| = {worst:.2e} <= 1e-5"),
    )
}

fn naive_conv(x: &Tensor<f32>, w: &Tensor<f32>, b: &Tensor<f32>) -> Vec<f64> {
    let (sx, sw) = (x.shape(), w.shape());
    let (n, cin, h, wd, cout, k) = (sx[0], sx[1], sx[2], sx[3], sw[0], sw[2]);
    let pad = (k / 2) as isize;
    let mut out = vec![0.0; n * cout * h * wd];
    for ni in 0..n {
        for co in 0..cout {
            for y in 0..h {
                for xo in 0..wd {
                    let mut acc = b.data()[co] as f64;
                    for ci in 0..cin {
                        for ky in 0..k {
                            for kx in 0..k {
                                let (iy, ix) = (
                                    y as isize + ky as isize - pad,
                                    xo as isize + kx as isize - pad,
                                );
                                if (0..h as isize).contains(&iy) && (0..wd as isize).contains(&ix) {
                                    let xv = x.data()
                                        [((ni * cin + ci) * h + iy as usize) * wd + ix as usize];
                                    acc += xv as f64
                                        * w.data()[((co * cin + ci) * k + ky) * k + kx] as f64;
                                }
                            }
                        }
                    }
                    out[((ni * cout + co) * h + y) * wd + xo] = acc;
                }
            }
        }
    }
    out
}

fn shuffle_and_conv_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut shuffles = 0;
    for _ in 0..300 {
        let (n, c, f) = (
            rng.random_range(1..3),
            rng.random_range(1..5),
            rng.random_range(1..5),
        );
        let (h, w) = (rng.random_range(1..7), rng.random_range(1..7));
        let x = Tensor::from_fn([n, c * f * f, h, w], |i| i as f32);
        let y = pixel_shuffle(&x, f).map_err(|e| e.to_string())?;
        let mut seen = vec![false; x.len()];
        for ni in 0..n {
            for ci in 0..c {
                for yy in 0..h * f {
                    for xx in 0..w * f {
                        let src = ((ni * c * f * f + ci * f * f + (yy % f) * f + xx % f) * h
                            + yy / f)
                            * w
                            + xx / f;
                        let v = y.data()[((ni * c + ci) * h * f + yy) * w * f + xx];
                        if v != src as f32 || seen[src] {
                            return Err(format!(
                                "shuffle ({n},{c}*{f}^2,{h},{w}) maps wrong at {yy},{xx}"
                            ));
                        }
                        seen[src] = true;
                    }
                }
            }
        }
        if pixel_unshuffle(&y, f).map_err(|e| e.to_string())? != x {
            return Err(format!("unshuffle does not invert shuffle for factor {f}"));
        }
        shuffles += 1;
    }
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let (n, cin, cout) = (
            rng.random_range(1..3),
            rng.random_range(1..6),
            rng.random_range(1..6),
        );
        let (h, w) = (rng.random_range(1..10), rng.random_range(1..10));
        let k = [1, 3, 5][rng.random_range(0..3)];
        let mut u = |shape: Vec<usize>| Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0));
        let x = u(vec![n, cin, h, w]);
        let p = Conv2dParams::new(u(vec![cout, cin, k, k]), u(vec![cout]))
            .map_err(|e| e.to_string())?;
        let got = conv2d(&x, &p).map_err(|e| e.to_string())?;
        for (a, b) in got.data().iter().zip(naive_conv(&x, &p.weight, &p.bias)) {
            worst = worst.max((*a as f64 - b).abs());
        }
    }
    check(
        worst <= 1e-5,
        format!("{shuffles} shuffle shapes bijective and inverted; 200 conv shapes, max |conv - naive| = {worst:.2e} <= 1e-5"),
    )
}

/// Synthetic corpus of at most 20 images, written and prepared through the CLI.
fn cli_corpus(dir: &Path) -> Result<PathBuf, String> {
    let hr = dir.join("hr");
    write_corpus(&hr, DESK_IMAGES, 128, 128, DESK_CORPUS_SEED).map_err(|e| e.to_string())?;
    let prep = dir.join("prep");
    run_ok(&[
        "prepare",
        "--hr-dir",
        s(&hr),
        "--out",
        s(&prep),
        "--val-count",
        &DESK_VAL.to_string(),
    ])?;
    Ok(prep)
}

const DESK_IMAGES: usize = 16;
const DESK_VAL: usize = 4;
const DESK_CORPUS_SEED: u64 = 7;
const DESK_STEPS: u64 = 5000;
const DESK_MARGIN_DB: f64 = 0.3;

/// `(mean model psnr, mean bicubic psnr)` from the `mean` row of `wdsrkit eval`.
fn eval_means(text: &str) -> Option<(f64, f64)> {
    let row = text.lines().find(|l| l.starts_with("mean "))?;
    let mut f = row.split_whitespace().skip(1).map(|v| v.parse::<f64>());
    Some((f.next()?.ok()?, f.next()?.ok()?))
}

fn l1_from_metrics(csv: &str) -> Vec<f64> {
    csv.lines()
        .skip(1)
        .filter_map(|l| l.split(',').nth(2)?.parse().ok())
        .collect()
}

fn desk_training() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let prep = cli_corpus(dir.path())?;
    let run = dir.path().join("run");
    let sets = [
        "net.blocks=3".to_string(),
        "net.family=wdsr-a".into(),
        "net.width=16".into(),
        "net.expansion=4".into(),
        "net.normalization=weight-norm".into(),
        "net.scale=2".into(),
        format!("train.steps={DESK_STEPS}"),
        "train.batch_size=16".into(),
        "train.patch_size=32".into(),
        "train.val_every=1000".into(),
        format!("data.train_manifest={}", s(&prep.join("train.manifest"))),
        format!("data.val_manifest={}", s(&prep.join("val.manifest"))),
    ];
    let mut args = vec!["train", "--seed", "0", "--out", s(&run)];
    for kv in &sets {
        args.extend(["--set", kv.as_str()]);
    }
    let start = Instant::now();
    run_ok(&args)?;
    let train_secs = start.elapsed().as_secs_f64();

    let csv = std::fs::read_to_string(run.join("metrics.csv")).map_err(|e| e.to_string())?;
    let losses = l1_from_metrics(&csv);
    if losses.len() != DESK_STEPS as usize {
        return Err(format!("metrics.csv has {} steps", losses.len()));
    }
    // EMA sampled at the end of each fifth of training
    let smooth = ema(&losses, 200);
    let marks: Vec<f64> = (1..=5).map(|q| smooth[losses.len() * q / 5 - 1]).collect();
    let decreasing = marks.windows(2).all(|w| w[1] < w[0]) && marks[0] < losses[0];

    let ckpt = run.join("model.ckpt");
    let text = run_ok(&[
        "eval",
        "--checkpoint",
        s(&ckpt),
        "--manifest",
        s(&prep.join("val.manifest")),
    ])?;
    let (ours, bicubic) = eval_means(&text).ok_or_else(|| format!("no mean row in:\n{text}"))?;
    let margin = ours - bicubic;
    let marks_text: Vec<String> = marks.iter().map(|m| format!("{m:.3}")).collect();
    check(
        decreasing && margin >= DESK_MARGIN_DB,
        format!(
            "L1 EMA by fifths {} (start {:.2}); held-out PSNR {ours:.3} vs bicubic {bicubic:.3} dB, margin {margin:+.3} >= {DESK_MARGIN_DB} dB; {train_secs:.0}s",
            marks_text.join(" > "),
            losses[0]
        ),
    )
}

const SWEEP_BLOCKS: usize = 8;
const SWEEP_BATCH: usize = 4;
const SWEEP_STEPS: u64 = 1500;
const SWEEP_VAL_EVERY: u64 = 25;
const SWEEP_LR: f64 = 1e-3;

struct SweepRun {
    report: TrainReport,
    final_l1: f64,
    final_third_std: f64,
}

fn sweep_run(prep: &Prepared, norm: Normalization) -> Result<SweepRun, String> {
    let spec = NetSpec::wdsr(
        2,
        SWEEP_BLOCKS,
        BlockSpec::wdsr_a(16, 4).with_normalization(norm),
    )
    .with_rgb_mean(prep.train.rgb_mean);
    let mut model = Model::from_seed(spec, 0).map_err(|e| e.to_string())?;
    let data = PairSet::from_manifest(&prep.train).map_err(|e| e.to_string())?;
    let val = prep.val.load_pairs().map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        lr0: SWEEP_LR,
        batch_size: SWEEP_BATCH,
        patch_size: 32,
        max_steps: SWEEP_STEPS,
        val_every: SWEEP_VAL_EVERY,
        seed: 0,
        ..Default::default()
    };
    let report = train::train(&mut model, &data, &val, &cfg, &NullSink, &mut |_, _| Ok(()))
        .map_err(|e| e.to_string())?;
    let tail = report.losses.len().min(100);
    let final_l1 = if report.diverged() {
        f64::INFINITY
    } else {
        train::mean(&report.losses[report.losses.len() - tail..])
    };
    let third: Vec<f64> = report
        .validations
        .iter()
        .filter(|(step, _)| *step > SWEEP_STEPS * 2 / 3)
        .map(|(_, p)| *p)
        .collect();
    let m = train::mean(&third);
    let final_third_std =
        (third.iter().map(|p| (p - m).powi(2)).sum::<f64>() / third.len() as f64).sqrt();
    Ok(SweepRun {
        report,
        final_l1,
        final_third_std,
    })
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "holds:"
    } else {
        "does not hold:"
    }
}

fn normalization_sweep() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    write_corpus(
        &dir.path().join("hr"),
        DESK_IMAGES,
        128,
        128,
        DESK_CORPUS_SEED,
    )
    .map_err(|e| e.to_string())?;
    let prep = prepare_dataset(
        &dir.path().join("hr"),
        &dir.path().join("prep"),
        2,
        DESK_VAL,
    )
    .map_err(|e| e.to_string())?;
    let start = Instant::now();
    let wn = sweep_run(&prep, Normalization::WeightNorm)?;
    let plain = sweep_run(&prep, Normalization::Plain)?;
    let bn = sweep_run(&prep, Normalization::BatchNorm)?;
    let secs = start.elapsed().as_secs_f64();

    let first_l1 = wn.report.losses.first().copied().unwrap_or(f64::NAN);
    let wn_converged = !wn.report.diverged() && wn.final_l1 < 0.2 * first_l1;
    let plain_worse = plain.report.diverged() || plain.final_l1 > wn.final_l1;
    let bn_noisier = bn.final_third_std > wn.final_third_std;
    let describe = |r: &SweepRun| match r.report.status {
        train::TrainStatus::Diverged { step, .. } => format!("diverged at step {step}"),
        train::TrainStatus::Completed => format!("final L1 {:.3}", r.final_l1),
    };
    check(
        wn_converged && plain_worse && bn_noisier,
        format!(
            "{SWEEP_BLOCKS} blocks, batch {SWEEP_BATCH}, lr {SWEEP_LR:.0e}: (a) {} weight-norm {} vs plain {}; (b) {} final-third val PSNR std batch-norm {:.3} dB vs weight-norm {:.3} dB; {secs:.0}s",
            verdict(wn_converged && plain_worse),
            describe(&wn),
            describe(&plain),
            verdict(bn_noisier),
            bn.final_third_std,
            wn.final_third_std
        ),
    )
}

fn median_predict_secs(model: &mut Model<f32>, x: &Tensor<f32>) -> Result<f64, String> {
    model.predict(x).map_err(|e| e.to_string())?;
    let mut times: Vec<f64> = (0..5)
        .map(|_| {
            let t = Instant::now();
            model
                .predict(x)
                .map(|_| t.elapsed().as_secs_f64())
                .map_err(|e| e.to_string())
        })
        .collect::<Result<_, _>>()?;
    times.sort_by(f64::total_cmp);
    Ok(times[2])
}

fn resolution_discipline() -> Outcome {
    let mut audited = 0;
    for scale in SCALES {
        for block in [
            BlockSpec::wdsr_a(16, 4),
            BlockSpec::wdsr_b(16, 6, 32),
            BlockSpec::vanilla(16),
        ] {
            let mut model = Model::from_seed(NetSpec::wdsr(scale, 2, block.clone()), 0)
                .map_err(|e| e.to_string())?;
            let audit = audit_resolution(&mut model, (7, 5)).map_err(|e| e.to_string())?;
            if !audit.all_convs_at_lr() {
                return Err(format!(
                    "x{scale} {:?}: conv sizes {:?}",
                    block.family, audit.conv_hw
                ));
            }
            audited += 1;
        }
    }
    let x = Tensor::from_fn([1, 3, 64, 64], |i| ((i * 131) % 256) as f32);
    let edsr = |w| NetSpec::edsr_baseline(2, 4, w);
    // same blocks and width, then the budget-matched pairing
    let pairs = [
        (
            "vanilla w=32",
            NetSpec::wdsr(2, 4, BlockSpec::vanilla(32)),
            edsr(32),
        ),
        (
            "wdsr-a w1=32 r=4 vs edsr w=64",
            NetSpec::wdsr(2, 4, BlockSpec::wdsr_a(32, 4)),
            edsr(64),
        ),
    ];
    let mut notes = Vec::new();
    let mut faster = true;
    for (name, w, e) in pairs {
        let tw = median_predict_secs(&mut Model::from_seed(w, 0).map_err(|e| e.to_string())?, &x)?;
        let te = median_predict_secs(&mut Model::from_seed(e, 0).map_err(|e| e.to_string())?, &x)?;
        faster &= tw < te;
        notes.push(format!(
            "{name}: wdsr {:.1} ms vs edsr {:.1} ms",
            tw * 1e3,
            te * 1e3
        ));
    }
    check(
        faster,
        format!(
            "{audited} wdsr networks run every conv at LR size; 4 blocks at 64x64: {}",
            notes.join("; ")
        ),
    )
}

fn checkpoint_roundtrip() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    write_corpus(&dir.path().join("hr"), 4, 40, 40, 11).map_err(|e| e.to_string())?;
    let prep = prepare_dataset(&dir.path().join("hr"), &dir.path().join("prep"), 2, 1)
        .map_err(|e| e.to_string())?;
    let data = PairSet::from_manifest(&prep.train).map_err(|e| e.to_string())?;
    let x = Tensor::from_fn([1, 3, 19, 23], |i| ((i * 71) % 256) as f32);
    let mut notes = Vec::new();
    let mut worst = 0.0f64;
    for norm in Normalization::ALL {
        let spec = NetSpec::wdsr(2, 2, BlockSpec::wdsr_a(12, 4).with_normalization(norm))
            .with_rgb_mean(prep.train.rgb_mean);
        let mut model = Model::from_seed(spec, 1).map_err(|e| e.to_string())?;
        let cfg = TrainConfig {
            lr0: TrainConfig::default_lr(norm),
            batch_size: 4,
            patch_size: 16,
            max_steps: 20,
            val_every: 20,
            ..Default::default()
        };
        train::train(&mut model, &data, &[], &cfg, &NullSink, &mut |_, _| Ok(()))
            .map_err(|e| e.to_string())?;
        let path = dir.path().join(format!("{norm}.ckpt"));
        let before = model.predict(&x).map_err(|e| e.to_string())?;
        save_checkpoint(&model, 20, &path).map_err(|e| e.to_string())?;
        let (mut loaded, _) = load_checkpoint(&path).map_err(|e| e.to_string())?;
        let after = loaded.predict(&x).map_err(|e| e.to_string())?;
        let rel = before
            .data()
            .iter()
            .zip(after.data())
            .map(|(a, b)| ((a - b).abs() / a.abs().max(1.0)) as f64)
            .fold(0.0, f64::max);
        worst = worst.max(rel);
        notes.push(format!("{norm} {rel:.1e}"));
    }
    check(
        worst <= 1e-6,
        format!(
            "max relative output change after save/load: {} (<= 1e-6)",
            notes.join(", ")
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        (1, "gradient correctness", gradient_correctness),
        (2, "budget parity", budget_parity),
        (3, "weight-norm invariant", weight_norm_invariant),
        (
            4,
            "pixel shuffle and conv oracles",
            shuffle_and_conv_oracles,
        ),
        (5, "desk-scale training", desk_training),
        (6, "weight norm vs batch norm", normalization_sweep),
        (7, "resolution discipline", resolution_discipline),
        (8, "checkpoint roundtrip", checkpoint_roundtrip),
    ];
    let selected: Vec<u32> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failed = 0;
    for (n, name, run) in criteria {
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {n}. {name}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {n}. {name}: {detail} [{secs:.1}s]");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    }
}
