//! Acceptance checks. Each test prints one PASS/FAIL line to stderr, then
//! asserts. Tests take a shared lock so the lines come out whole and the
//! long pipeline does not compete with the other checks for the CPU.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::{Duration, Instant};

use gaitkit::data::{index_dataset, GalleryViews, Protocol};
use gaitkit::embedding::EmbeddingSet;
use gaitkit::eval::{evaluate_condition, EvaluationReport};
use gaitkit::experiment::{ablation, ablation_csv, AblationConfig, AdjustmentSource};
use gaitkit::gda::{
    compute_benchmark, distance_matrix, feature_benchmark, refine_distances, refine_with_offsets,
    AdjustmentSet, DistanceMatrix, GdaConfig, GdaMode,
};
use gaitkit::model::{InitScheme, ModelConfig, SequenceMeta};
use gaitkit::selftest::{self, CheckOutcome};
use gaitkit::training::{hard_triplet_loss, BatchSpec, TrainConfig, TripletLossConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Rank-1 floor for the desk run: five times the 1-in-10 chance level.
const MIN_RANK1: f64 = 0.5;
/// GDA may cost at most this much overall rank-1.
const GDA_SLACK: f64 = 0.005;
const PIPELINE_BUDGET: Duration = Duration::from_secs(15 * 60);
const SWEEP_COUNTS: &str = "1,2,3,5,7,10";

/// `(correct, total)` per probe view and gallery column.
type Cells = Vec<Vec<Option<(usize, usize)>>>;
type FileBytes = (PathBuf, Vec<u8>);

fn serial() -> MutexGuard<'static, ()> {
    static LOCK: Mutex<()> = Mutex::new(());
    LOCK.lock().unwrap_or_else(|e| e.into_inner())
}

fn verdict(name: &str, pass: bool, detail: &str) {
    let tag = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "[acceptance] {tag} {name}: {detail}");
}

fn outcomes(name: &str, results: &[CheckOutcome]) -> bool {
    let pass = results.iter().all(CheckOutcome::passed);
    let detail = results
        .iter()
        .map(|r| r.to_string())
        .collect::<Vec<_>>()
        .join("; ");
    verdict(name, pass, &detail);
    pass
}

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

#[test]
fn gradient_suite() {
    let _g = serial();
    let started = Instant::now();
    let results = selftest::gradient_suite(100, 1);
    let secs = started.elapsed().as_secs_f64();
    let pass = outcomes("gradient suite", &results) && secs < 120.0;
    verdict(
        "gradient suite runtime",
        secs < 120.0,
        &format!("{secs:.1}s (limit 120s)"),
    );
    assert!(pass);
}

#[test]
fn tff_invariance() {
    let _g = serial();
    assert!(outcomes(
        "TFF invariance",
        &selftest::tff_invariance(100, 10, 2)
    ));
}

/// Every (anchor, positive, negative) triple enumerated explicitly.
fn exhaustive_loss(
    embs: &[Vec<f64>],
    labels: &[usize],
    strips: usize,
    dim: usize,
    margin: f64,
) -> f64 {
    let mut per_strip = Vec::new();
    for s in 0..strips {
        let part = |i: usize| &embs[i][s * dim..(s + 1) * dim];
        let dist = |i: usize, j: usize| {
            part(i)
                .iter()
                .zip(part(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
        };
        let mut anchor_losses = Vec::new();
        for a in 0..embs.len() {
            let mut worst = 0.0f64;
            for p in 0..embs.len() {
                for n in 0..embs.len() {
                    if p != a && labels[p] == labels[a] && labels[n] != labels[a] {
                        worst = worst.max(margin + dist(a, p) - dist(a, n));
                    }
                }
            }
            if worst > 0.0 {
                anchor_losses.push(worst);
            }
        }
        let n = anchor_losses.len().max(1) as f64;
        per_strip.push(anchor_losses.iter().sum::<f64>() / n);
    }
    per_strip.iter().sum::<f64>() / strips as f64
}

#[test]
fn loss_oracle() {
    let _g = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let (p, k) = (rng.gen_range(2..=4), rng.gen_range(2..=4));
        let (strips, dim) = (rng.gen_range(1..=4), rng.gen_range(1..=5));
        let labels: Vec<usize> = (0..p)
            .flat_map(|s| std::iter::repeat_n(s * 3 + 1, k))
            .collect();
        let embs: Vec<Vec<f64>> = labels
            .iter()
            .map(|_| {
                (0..strips * dim)
                    .map(|_| rng.gen_range(-1.0..1.0))
                    .collect()
            })
            .collect();
        let margin = rng.gen_range(0.0..0.8);
        let refs: Vec<&[f64]> = embs.iter().map(Vec::as_slice).collect();
        let got = hard_triplet_loss(&refs, &labels, strips, dim, &TripletLossConfig { margin })
            .unwrap()
            .loss;
        worst = worst.max((got - exhaustive_loss(&embs, &labels, strips, dim, margin)).abs());
    }
    let pass = worst <= 1e-6;
    verdict(
        "loss oracle",
        pass,
        &format!("200 batches, worst |difference| {worst:.2e} (limit 1e-6)"),
    );
    assert!(pass);
}

fn random_set(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> EmbeddingSet {
    let rows = (0..n)
        .map(|_| (0..dim).map(|_| rng.gen_range(-2.0f32..2.0)).collect())
        .collect();
    EmbeddingSet::from_rows(rows, vec![SequenceMeta::default(); n]).unwrap()
}

fn first_argmin(row: &[f64]) -> usize {
    (0..row.len()).fold(0, |best, i| if row[i] < row[best] { i } else { best })
}

#[test]
fn gda_identities() {
    let _g = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut failures: Vec<String> = Vec::new();
    for trial in 0..200 {
        let dim = rng.gen_range(1..6);
        let (np, ng, na) = (
            rng.gen_range(1..7),
            rng.gen_range(1..7),
            rng.gen_range(1..40),
        );
        let (probes, gallery, adjust) = (
            random_set(&mut rng, np, dim),
            random_set(&mut rng, ng, dim),
            random_set(&mut rng, na, dim),
        );
        let rs = AdjustmentSet::new(adjust.clone(), None).unwrap();
        let d = distance_matrix(&probes, &gallery).unwrap();

        let zero = GdaConfig {
            lambda_g: 0.0,
            lambda_q: 0.0,
            t: rng.gen_range(1..4),
            ..GdaConfig::default()
        };
        let same = refine_distances(&d, &probes, &gallery, &rs, &zero).unwrap();
        if !same
            .values()
            .iter()
            .zip(d.values())
            .all(|(a, b)| a.to_bits() == b.to_bits())
        {
            failures.push(format!("trial {trial}: zero weights changed the matrix"));
        }

        // A similar set of one: the benchmark is the nearest adjustment row.
        let f = probes.row(0);
        let nearest = (0..na)
            .map(|i| {
                (
                    adjust
                        .row(i)
                        .iter()
                        .zip(f)
                        .map(|(a, b)| ((a - b) as f64).powi(2))
                        .sum::<f64>(),
                    i,
                )
            })
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .unwrap()
            .1;
        let one = GdaConfig {
            t: 9,
            k_min: 1,
            ..GdaConfig::default()
        };
        let fb = feature_benchmark(f, &rs, &one).unwrap();
        if !fb
            .iter()
            .zip(adjust.row(nearest))
            .all(|(&b, &m)| b == m as f64)
        {
            failures.push(format!(
                "trial {trial}: singleton benchmark is not the nearest member"
            ));
        }

        let members: Vec<&[f32]> = (0..rng.gen_range(1..=na)).map(|i| adjust.row(i)).collect();
        let b = compute_benchmark(&members).unwrap();
        for (k, bk) in b.iter().enumerate() {
            let column: Vec<f64> = members.iter().map(|m| m[k] as f64).collect();
            let (lo, hi) = (
                column.iter().cloned().fold(f64::MAX, f64::min),
                column.iter().cloned().fold(f64::MIN, f64::max),
            );
            if !(lo <= *bk && *bk <= hi) {
                failures.push(format!(
                    "trial {trial}: benchmark coordinate {k} outside [{lo}, {hi}]"
                ));
            }
        }

        let po = GdaConfig {
            mode: GdaMode::ProbeOnly,
            t: rng.gen_range(1..4),
            ..GdaConfig::default()
        };
        let refined = refine_distances(&d, &probes, &gallery, &rs, &po).unwrap();
        for r in 0..np {
            let (a, b) = (first_argmin(d.row(r)), first_argmin(refined.row(r)));
            // Subtracting one constant may round two near-equal distances
            // together; that tie is the only allowed change.
            if a != b && refined.get(r, a) != refined.get(r, b) {
                failures.push(format!(
                    "trial {trial}: probe-only refinement moved the argmin of row {r}"
                ));
            }
        }
    }
    let pass = failures.is_empty();
    verdict(
        "GDA identities",
        pass,
        &format!(
            "200 instances, {} violations {:?}",
            failures.len(),
            failures.first()
        ),
    );
    assert!(pass);
}

#[test]
fn numeric_spot_checks() {
    let _g = serial();
    let b = compute_benchmark(&[&[2.0], &[1.0], &[0.0]]).unwrap();
    let d = DistanceMatrix::new(
        vec![1.0],
        vec![SequenceMeta::default()],
        vec![SequenceMeta::default()],
    )
    .unwrap();
    let refined = refine_with_offsets(&d, &[0.4], &[0.6], &GdaConfig::default()).unwrap();
    let pass = b == [4.0 / 3.0] && refined.values() == [0.5];
    verdict(
        "benchmark and refinement spot checks",
        pass,
        &format!("benchmark {b:?}, refined {:?}", refined.values()),
    );
    assert!(pass);
}

/// Per probe view and gallery column: sort the allowed gallery by
/// (distance, index) and take the head.
fn brute_force(
    d: &DistanceMatrix,
    rows: &[usize],
    mode: GalleryViews,
) -> (Cells, Vec<Option<f64>>) {
    let view = |m: &SequenceMeta| m.view.unwrap();
    let mut pviews: Vec<u32> = rows.iter().map(|&r| view(&d.row_meta()[r])).collect();
    pviews.sort();
    pviews.dedup();
    let mut gviews: Vec<u32> = d.col_meta().iter().map(view).collect();
    gviews.sort();
    gviews.dedup();
    let mut cells = Vec::new();
    let mut means = Vec::new();
    for &pv in &pviews {
        let cols: Vec<Option<u32>> = match mode {
            GalleryViews::PerView => gviews.iter().map(|&v| Some(v)).collect(),
            GalleryViews::AllOther => vec![None],
        };
        let mut row = Vec::new();
        let mut accs = Vec::new();
        for col in cols {
            let mut allowed: Vec<usize> = (0..d.cols())
                .filter(|&c| {
                    col.map_or(view(&d.col_meta()[c]) != pv, |v| {
                        view(&d.col_meta()[c]) == v
                    })
                })
                .collect();
            if allowed.is_empty() {
                row.push(None);
                continue;
            }
            let (mut hit, mut total) = (0, 0);
            for &r in rows.iter().filter(|&&r| view(&d.row_meta()[r]) == pv) {
                allowed.sort_by(|&a, &b| {
                    d.get(r, a)
                        .partial_cmp(&d.get(r, b))
                        .unwrap()
                        .then(a.cmp(&b))
                });
                total += 1;
                hit += usize::from(d.col_meta()[allowed[0]].subject == d.row_meta()[r].subject);
            }
            if col != Some(pv) {
                accs.push(hit as f64 / total as f64);
            }
            row.push(Some((hit, total)));
        }
        means.push((!accs.is_empty()).then(|| accs.iter().sum::<f64>() / accs.len() as f64));
        cells.push(row);
    }
    (cells, means)
}

#[test]
fn evaluation_oracle() {
    let _g = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut mismatches = 0;
    for _ in 0..200 {
        let (d, rows) = selftest::random_eval_instance(&mut rng);
        for mode in [GalleryViews::PerView, GalleryViews::AllOther] {
            let got = evaluate_condition(&d, "nm", &rows, mode).unwrap();
            let (cells, means) = brute_force(&d, &rows, mode);
            let got_cells: Cells = got
                .cells
                .iter()
                .map(|r| r.iter().map(|c| c.map(|c| (c.correct, c.total))).collect())
                .collect();
            mismatches += usize::from(got_cells != cells || got.view_means != means);
        }
    }
    let pass = mismatches == 0;
    verdict(
        "evaluation oracle",
        pass,
        &format!("200 instances x 2 gallery modes, {mismatches} mismatches"),
    );
    assert!(pass);
}

fn gaitkit(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_gaitkit"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "gaitkit {}: {}\n{}",
            args.join(" "),
            out.status,
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 temp path")
}

/// synth, train, embed three splits, then evaluate with and without GDA
/// plus the adjustment sweep.
fn run_pipeline(config: &Path, root: &Path, extra: &[&str], sweep: &str) -> Result<(), String> {
    let cfg = p(config);
    let data = root.join("data");
    let train = root.join("train");
    let emb = |n: &str| root.join(format!("{n}.gemb"));
    let with = |args: &[&str]| -> Vec<String> {
        ["--config", cfg]
            .iter()
            .chain(extra)
            .chain(args)
            .map(|s| s.to_string())
            .collect()
    };
    let run = |args: Vec<String>| gaitkit(&args.iter().map(String::as_str).collect::<Vec<_>>());
    run(with(&["-q", "synth", "--out", p(&data)]))?;
    run(with(&[
        "-q",
        "train",
        "--data",
        p(&data),
        "--out",
        p(&train),
    ]))?;
    for split in ["gallery", "probes", "unlabeled"] {
        let ck = train.join("final.sfe");
        run(with(&[
            "-q",
            "embed",
            "--data",
            p(&data),
            "--checkpoint",
            p(&ck),
            "--split",
            split,
            "--out",
            p(&emb(split)),
        ]))?;
    }
    let (g, q, u) = (emb("gallery"), emb("probes"), emb("unlabeled"));
    let eval = root.join("eval");
    run(with(&[
        "-q",
        "eval",
        "--data",
        p(&data),
        "--probes",
        p(&q),
        "--gallery",
        p(&g),
        "--adjustment",
        p(&u),
        "--gda",
        "--sweep-adjustment-subjects",
        sweep,
        "--out",
        p(&eval),
    ]))?;
    Ok(())
}

struct Desk {
    _dir: tempfile::TempDir,
    root: PathBuf,
    elapsed: Duration,
}

fn desk() -> &'static Result<Desk, String> {
    static DESK: OnceLock<Result<Desk, String>> = OnceLock::new();
    DESK.get_or_init(|| {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let root = dir.path().to_path_buf();
        let started = Instant::now();
        run_pipeline(
            &workspace_root().join("configs/desk.toml"),
            &root,
            &[],
            SWEEP_COUNTS,
        )?;
        Ok(Desk {
            _dir: dir,
            root,
            elapsed: started.elapsed(),
        })
    })
}

fn window_means(loss_csv: &str, window: usize) -> Option<(f64, f64)> {
    let losses: Vec<f64> = loss_csv
        .lines()
        .skip(1)
        .filter_map(|l| l.split(',').nth(1))
        .map(|v| v.parse().unwrap())
        .collect();
    if losses.len() < 2 * window {
        return None;
    }
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    Some((
        mean(&losses[..window]),
        mean(&losses[losses.len() - window..]),
    ))
}

fn report(path: &Path) -> EvaluationReport {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn end_to_end_desk_run() {
    let _g = serial();
    let desk = match desk() {
        Ok(d) => d,
        Err(e) => {
            verdict("end-to-end desk run", false, e);
            panic!("{e}");
        }
    };
    let loss = std::fs::read_to_string(desk.root.join("train/loss.csv")).unwrap();
    let (first, last) = window_means(&loss, 100).expect("at least 200 iterations");
    let descent = last < first;
    verdict(
        "training loss descent",
        descent,
        &format!("first-100 mean {first:.4}, last-100 mean {last:.4}"),
    );

    let plain = report(&desk.root.join("eval/no_gda/report.json"))
        .overall_mean()
        .unwrap();
    let gda = report(&desk.root.join("eval/gda/report.json"))
        .overall_mean()
        .unwrap();
    let accurate = plain >= MIN_RANK1;
    verdict(
        "test rank-1 at least 5x chance",
        accurate,
        &format!("{:.1}% (floor {:.0}%)", 100.0 * plain, 100.0 * MIN_RANK1),
    );
    let aligned = gda >= plain - GDA_SLACK;
    verdict(
        "GDA does not lower rank-1",
        aligned,
        &format!(
            "without {:.1}%, with {:.1}% (slack {:.1} points)",
            100.0 * plain,
            100.0 * gda,
            100.0 * GDA_SLACK
        ),
    );
    let fast = desk.elapsed <= PIPELINE_BUDGET;
    verdict(
        "desk run within 15 minutes",
        fast,
        &format!("{:.0}s", desk.elapsed.as_secs_f64()),
    );
    assert!(descent && accurate && aligned && fast);
}

#[test]
fn adjustment_sweep() {
    let _g = serial();
    let desk = desk().as_ref().expect("desk pipeline");
    let csv = std::fs::read_to_string(desk.root.join("eval/sweep.csv")).unwrap();
    let _ = writeln!(std::io::stderr(), "{csv}");
    // The first row is the unrefined baseline (0 subjects).
    let counts = csv
        .lines()
        .skip(1)
        .filter(|l| {
            l.split(',')
                .next()
                .and_then(|c| c.parse::<usize>().ok())
                .is_some_and(|n| n > 0)
        })
        .count();
    let pass = counts >= 5;
    verdict(
        "adjustment-set sweep",
        pass,
        &format!("{counts} adjustment-subject counts"),
    );
    assert!(pass);
}

#[test]
fn ablation_machinery() {
    let _g = serial();
    let desk = desk().as_ref().expect("desk pipeline");
    let data = desk.root.join("data");
    let protocol: Protocol =
        serde_json::from_str(&std::fs::read_to_string(data.join("protocol.json")).unwrap())
            .unwrap();
    let index = index_dataset(&data, &protocol).unwrap();
    let cfg = AblationConfig {
        model: ModelConfig {
            channels: [4, 4, 8, 8],
            strip_dim: 8,
            init: InitScheme::He,
            ..ModelConfig::default()
        },
        train: TrainConfig {
            iterations: 20,
            batch: BatchSpec {
                p: 2,
                k: 2,
                frames_per_seq: 4,
            },
            log_every: 0,
            checkpoint_every: 0,
            seed: 5,
            ..TrainConfig::default()
        },
        gda: GdaConfig::default(),
        adjustment: AdjustmentSource::Unlabeled,
        block_variants: vec![vec![1], vec![2], vec![4], vec![8]],
        t_values: vec![1, 2, 3],
        reference_blocks: vec![4],
    };
    let rows = ablation(&index, &cfg).unwrap();
    let csv = ablation_csv(&rows);
    std::fs::write(desk.root.join("ablation.csv"), &csv).unwrap();
    let _ = writeln!(std::io::stderr(), "{csv}");
    let pass = rows.len() == 7 && csv.lines().count() >= 8;
    verdict(
        "ablation machinery",
        pass,
        &format!("{} variants evaluated", rows.len()),
    );
    assert!(pass);
}

fn tree(dir: &Path, base: &Path, out: &mut Vec<FileBytes>) {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    entries.sort();
    for path in entries {
        if path.is_dir() {
            tree(&path, base, out);
        } else if !path.to_string_lossy().ends_with("manifest.json") {
            out.push((
                path.strip_prefix(base).unwrap().to_path_buf(),
                std::fs::read(&path).unwrap(),
            ));
        }
    }
}

#[test]
fn single_thread_runs_are_bitwise_identical() {
    let _g = serial();
    let config = workspace_root().join("configs/tiny.toml");
    let runs: Vec<(tempfile::TempDir, Vec<FileBytes>)> = (0..2)
        .map(|_| {
            let dir = tempfile::tempdir().unwrap();
            run_pipeline(&config, dir.path(), &["--threads", "1"], "1,2").unwrap();
            let mut files = Vec::new();
            tree(dir.path(), dir.path(), &mut files);
            (dir, files)
        })
        .collect();
    let (a, b) = (&runs[0].1, &runs[1].1);
    let differing: Vec<&PathBuf> = a
        .iter()
        .zip(b)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| &x.0)
        .collect();
    let kinds = ["sfe", "gemb", "gdst", "json"];
    let covered = kinds.iter().all(|k| {
        a.iter()
            .any(|(p, _)| p.extension().is_some_and(|e| e == *k))
    });
    let pass = a.len() == b.len() && differing.is_empty() && covered;
    verdict(
        "determinism with one thread",
        pass,
        &format!(
            "{} files compared, {} differ {:?}",
            a.len(),
            differing.len(),
            differing.first()
        ),
    );
    assert!(pass);
}

#[test]
fn self_check_command_passes() {
    let _g = serial();
    let out = gaitkit(&["check", "--trials", "5"]);
    let pass = out.as_ref().is_ok_and(|o| o.contains(" 0 failed"));
    verdict(
        "check command",
        pass,
        out.as_ref()
            .map_or_else(|e| e.as_str(), |o| o.lines().last().unwrap_or("")),
    );
    assert!(pass);
}

#[test]
fn usage_errors_exit_with_2() {
    let _g = serial();
    let bin = env!("CARGO_BIN_EXE_gaitkit");
    let code = |args: &[&str]| Command::new(bin).args(args).output().unwrap().status.code();
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[train]\nseed = 4\n").unwrap();
    let cases = [
        code(&["train", "--bogus"]),
        code(&["--config", p(&bad), "check"]),
        code(&["--threads", "0", "check", "--trials", "1"]),
        code(&[
            "eval",
            "--out",
            p(dir.path()),
            "--protocol",
            "no-such-protocol",
        ]),
    ];
    let pass = cases.iter().all(|c| *c == Some(2));
    verdict("usage errors exit with 2", pass, &format!("{cases:?}"));
    assert!(pass);
}
