use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use gaitkit::data::{index_dataset, load_entries, synth_generate, DatasetIndex, Split};
use gaitkit::embedding::{embed_sequences, EmbeddingSet};
use gaitkit::eval::{emit_report, rank1_evaluate, report_text, EvaluationReport};
use gaitkit::experiment::{
    adjustment_sweep, compare_gda, first_subjects, load_probes, sweep_csv, training_set,
};
use gaitkit::gda::{distance_matrix, refine_distances, AdjustmentSet, DistanceMatrix, GdaMode};
use gaitkit::model::Checkpoint;
use gaitkit::selftest;
use gaitkit::training::{loss_descent, train as train_model, write_loss_csv};

use crate::config::{resolve_protocol, RunConfig};
use crate::manifest::{sidecar, Manifest};
use crate::{
    CheckArgs, DataArgs, EmbedArgs, EvalArgs, GdaArgs, ModeArg, RerankArgs, SynthArgs, TrainArgs,
    UsageError,
};

fn open_dataset(args: &DataArgs, cfg: &RunConfig) -> anyhow::Result<(DatasetIndex, Vec<PathBuf>)> {
    let name = args.protocol.as_deref().or(cfg.data.protocol.as_deref());
    let (protocol, file) = resolve_protocol(name, Some(&args.data))?;
    let index = index_dataset(&args.data, &protocol)?;
    for issue in &index.issues {
        log::warn!("skipped {}: {}", issue.path.display(), issue.reason);
    }
    let mut inputs = vec![args.data.clone()];
    inputs.extend(file.filter(|f| !f.starts_with(&args.data)));
    Ok((index, inputs))
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn synth(a: SynthArgs, mut cfg: RunConfig, seed: u64) -> anyhow::Result<()> {
    let s = &mut cfg.synth;
    if let Some(v) = a.subjects {
        s.n_subjects = v;
    }
    if let Some(v) = a.train_subjects {
        s.train_subjects = v;
    }
    if let Some(v) = a.test_subjects {
        s.test_subjects = v;
    }
    if let Some(v) = a.frames {
        s.frames_per_sequence = v;
    }
    if let Some(v) = a.views {
        s.views = v;
    }
    if let Some(v) = a.noise {
        s.noise_level = v;
    }
    s.validate()?;
    let index = synth_generate(s, &a.out)?;
    log::info!(
        "wrote {} sequences of {} subjects to {}",
        index.entries.len(),
        cfg.synth.n_subjects,
        a.out.display()
    );
    Manifest::new("synth", seed, &cfg, &[], std::slice::from_ref(&a.out))?
        .write(&a.out.join("manifest.json"))
}

pub fn train(a: TrainArgs, mut cfg: RunConfig, seed: u64) -> anyhow::Result<()> {
    let t = &mut cfg.train;
    if let Some(v) = a.iterations {
        t.iterations = v;
    }
    if let Some(v) = a.p {
        t.batch.p = v;
    }
    if let Some(v) = a.k {
        t.batch.k = v;
    }
    if let Some(v) = a.frames {
        t.batch.frames_per_seq = v;
    }
    if let Some(v) = a.lr {
        t.adam.learning_rate = v;
    }
    if let Some(v) = a.margin {
        t.loss.margin = v;
    }
    if let Some(v) = a.checkpoint_every {
        t.checkpoint_every = v;
    }
    if let Some(v) = a.log_every {
        t.log_every = v;
    }
    if let Some(b) = &a.blocks {
        cfg.model.ffe_layers = b.clone();
    }
    cfg.train.validate()?;

    let mut inputs = Vec::new();
    let init = match &a.resume {
        Some(p) => {
            let c = Checkpoint::load(p)?;
            if c.params.config != cfg.model {
                log::warn!(
                    "resuming with the checkpoint's architecture; the configured model is ignored"
                );
                cfg.model = c.params.config.clone();
            }
            inputs.push(p.clone());
            Some(c)
        }
        None => None,
    };
    cfg.model.validate()?;

    let (index, data_inputs) = open_dataset(&a.data, &cfg)?;
    inputs.extend(data_inputs);
    let set = training_set(&index)?;
    log::info!(
        "training on {} sequences of {} subjects for {} iterations",
        set.sequences().len(),
        set.n_subjects(),
        cfg.train.iterations
    );
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let outcome = train_model(&set, &cfg.model, init, &cfg.train, Some(&a.out))?;
    let loss_path = a.out.join("loss.csv");
    write_loss_csv(&loss_path, &outcome.trace)?;
    if let Some((first, last)) = loss_descent(&outcome.trace, 100) {
        log::info!("mean loss: first window {first:.5}, last window {last:.5}");
    }

    let mut outputs: Vec<PathBuf> = std::fs::read_dir(&a.out)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "sfe"))
        .collect();
    outputs.sort();
    outputs.push(loss_path);
    Manifest::new("train", seed, &cfg, &inputs, &outputs)?.write(&a.out.join("manifest.json"))
}

pub fn embed(a: EmbedArgs, cfg: RunConfig, seed: u64) -> anyhow::Result<()> {
    let (index, mut inputs) = open_dataset(&a.data, &cfg)?;
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    inputs.push(a.checkpoint.clone());
    let seqs = match a.split.as_str() {
        "probes" => load_probes(&index)?,
        "test" => load_entries(&index.test_entries())?,
        s => load_entries(&index.select(&Split::parse(s)?))?,
    };
    if seqs.is_empty() {
        bail!("split `{}` has no sequences", a.split);
    }
    let set = embed_sequences(&seqs, &ckpt.params)?;
    set.save(&a.out)?;
    let mut outputs = vec![a.out.clone()];
    if a.csv {
        let csv = a.out.with_extension("csv");
        set.save_csv(&csv)?;
        outputs.push(csv);
    }
    log::info!(
        "embedded {} sequences ({} dims) to {}",
        set.len(),
        set.dim(),
        a.out.display()
    );
    Manifest::new("embed", seed, &cfg, &inputs, &outputs)?.write(&sidecar(&a.out))
}

fn apply_gda(g: &GdaArgs, cfg: &mut RunConfig) -> anyhow::Result<()> {
    let c = &mut cfg.gda;
    if let Some(v) = g.t {
        c.t = v;
    }
    if let Some(v) = g.lambda_g {
        c.lambda_g = v;
    }
    if let Some(v) = g.lambda_q {
        c.lambda_q = v;
    }
    if let Some(v) = g.k_min {
        c.k_min = v;
    }
    if let Some(m) = g.mode {
        c.mode = match m {
            ModeArg::ProbeOnly => GdaMode::ProbeOnly,
            ModeArg::ProbeAndGallery => GdaMode::ProbeAndGallery,
        };
    }
    Ok(c.validate()?)
}

fn load_adjustment(path: &Path) -> anyhow::Result<AdjustmentSet> {
    Ok(AdjustmentSet::new(
        EmbeddingSet::load(path)?,
        Some(path.display().to_string()),
    )?)
}

fn sweep_path(out: &Path, n: usize) -> PathBuf {
    let stem = out.file_stem().unwrap_or_default().to_string_lossy();
    out.with_file_name(format!("{stem}_adj{n}.gdst"))
}

pub fn rerank(a: RerankArgs, mut cfg: RunConfig, seed: u64) -> anyhow::Result<()> {
    apply_gda(&a.gda, &mut cfg)?;
    let probes = EmbeddingSet::load(&a.probes)?;
    let gallery = EmbeddingSet::load(&a.gallery)?;
    let rs = load_adjustment(&a.adjustment)?;
    let d = distance_matrix(&probes, &gallery)?;
    log::info!(
        "refining {} x {} distances with {} adjustment features",
        d.rows(),
        d.cols(),
        rs.len()
    );
    let refined = refine_distances(&d, &probes, &gallery, &rs, &cfg.gda)?;
    refined.save(&a.out)?;
    let mut outputs = vec![a.out.clone()];
    if a.csv {
        let csv = a.out.with_extension("csv");
        write_text(&csv, &refined.to_csv())?;
        outputs.push(csv);
    }
    for &n in a.sweep_adjustment_subjects.iter().flatten() {
        let subset = first_subjects(&rs.features, n);
        if subset.is_empty() || n == 0 {
            return Err(UsageError(format!("cannot sweep with {n} adjustment subjects")).into());
        }
        let m = refine_distances(
            &d,
            &probes,
            &gallery,
            &AdjustmentSet::new(subset, rs.source.clone())?,
            &cfg.gda,
        )?;
        let p = sweep_path(&a.out, n);
        m.save(&p)?;
        outputs.push(p);
    }
    let inputs = vec![a.probes, a.gallery, a.adjustment];
    Manifest::new("rerank", seed, &cfg, &inputs, &outputs)?.write(&sidecar(&a.out))
}

fn overall(r: &EvaluationReport) -> String {
    r.overall_mean()
        .map(|m| format!("{:.1}%", 100.0 * m))
        .unwrap_or_else(|| "n/a".into())
}

/// `condition,no_adjustment,adjustment`, then a `mean` row.
fn comparison_csv(plain: &EvaluationReport, refined: &EvaluationReport) -> String {
    let opt = |v: Option<f64>| v.map(|m| m.to_string()).unwrap_or_default();
    let mut out = String::from("condition,no_adjustment,adjustment\n");
    for c in &plain.conditions {
        let r = refined.condition(&c.name).and_then(|x| x.mean);
        out.push_str(&format!("{},{},{}\n", c.name, opt(c.mean), opt(r)));
    }
    out.push_str(&format!(
        "mean,{},{}\n",
        opt(plain.overall_mean()),
        opt(refined.overall_mean())
    ));
    out
}

fn emit(report: &EvaluationReport, dir: &Path, outputs: &mut Vec<PathBuf>) -> anyhow::Result<()> {
    outputs.extend(emit_report(report, dir)?);
    let json = dir.join("report.json");
    write_text(&json, &(serde_json::to_string_pretty(report)? + "\n"))?;
    outputs.push(json);
    Ok(())
}

fn save_matrix(
    d: &DistanceMatrix,
    path: PathBuf,
    outputs: &mut Vec<PathBuf>,
) -> anyhow::Result<()> {
    d.save(&path)?;
    outputs.push(path);
    Ok(())
}

pub fn eval(a: EvalArgs, mut cfg: RunConfig, seed: u64) -> anyhow::Result<()> {
    apply_gda(&a.gda_cfg, &mut cfg)?;
    let name = a.protocol.as_deref().or(cfg.data.protocol.as_deref());
    let (protocol, proto_file) = resolve_protocol(name, a.data.as_deref())?;
    let mut inputs: Vec<PathBuf> = proto_file.into_iter().collect();
    let mut outputs = Vec::new();
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let use_gda = a.gda && !a.no_gda;

    if let Some(m) = &a.matrix {
        if use_gda || a.sweep_adjustment_subjects.is_some() {
            return Err(UsageError(
                "--gda and sweeps need --probes/--gallery embeddings, not --matrix".into(),
            )
            .into());
        }
        inputs.push(m.clone());
        let report = rank1_evaluate(&DistanceMatrix::load(m)?, &protocol)?;
        emit(&report, &a.out, &mut outputs)?;
        print!("{}", report_text(&report));
        return Manifest::new("eval", seed, &cfg, &inputs, &outputs)?
            .write(&a.out.join("manifest.json"));
    }

    let (Some(pp), Some(gp)) = (&a.probes, &a.gallery) else {
        return Err(UsageError("give --matrix, or --probes and --gallery".into()).into());
    };
    let probes = EmbeddingSet::load(pp)?;
    let gallery = EmbeddingSet::load(gp)?;
    inputs.extend([pp.clone(), gp.clone()]);
    let rs = match &a.adjustment {
        Some(p) => {
            inputs.push(p.clone());
            Some(load_adjustment(p)?)
        }
        None if use_gda || a.sweep_adjustment_subjects.is_some() => {
            return Err(UsageError("--gda and sweeps need --adjustment".into()).into());
        }
        None => None,
    };

    let plain = if let (true, Some(rs)) = (use_gda, &rs) {
        let cmp = compare_gda(&probes, &gallery, rs, &cfg.gda, &protocol)?;
        emit(&cmp.plain, &a.out.join("no_gda"), &mut outputs)?;
        emit(&cmp.refined, &a.out.join("gda"), &mut outputs)?;
        save_matrix(
            &cmp.plain_matrix,
            a.out.join("no_gda").join("distances.gdst"),
            &mut outputs,
        )?;
        save_matrix(
            &cmp.refined_matrix,
            a.out.join("gda").join("distances.gdst"),
            &mut outputs,
        )?;
        let p = a.out.join("gda_comparison.csv");
        write_text(&p, &comparison_csv(&cmp.plain, &cmp.refined))?;
        outputs.push(p);
        println!(
            "rank-1 without GDA {}, with GDA {}",
            overall(&cmp.plain),
            overall(&cmp.refined)
        );
        cmp.plain
    } else {
        let d = distance_matrix(&probes, &gallery)?;
        let report = rank1_evaluate(&d, &protocol)?;
        emit(&report, &a.out, &mut outputs)?;
        save_matrix(&d, a.out.join("distances.gdst"), &mut outputs)?;
        print!("{}", report_text(&report));
        report
    };

    if let (Some(counts), Some(rs)) = (&a.sweep_adjustment_subjects, &rs) {
        let points = adjustment_sweep(&probes, &gallery, rs, counts, &cfg.gda, &protocol)?;
        for p in &points {
            println!(
                "adjustment subjects {:>4} ({} sequences): rank-1 {}",
                p.subjects,
                p.sequences,
                overall(&p.report)
            );
        }
        let path = a.out.join("sweep.csv");
        write_text(&path, &sweep_csv(Some(&plain), &points))?;
        outputs.push(path);
    }
    Manifest::new("eval", seed, &cfg, &inputs, &outputs)?.write(&a.out.join("manifest.json"))
}

pub fn check(a: CheckArgs, seed: u64) -> anyhow::Result<()> {
    if a.trials == 0 {
        return Err(UsageError("--trials must be at least 1".into()).into());
    }
    let started = std::time::Instant::now();
    let results = selftest::run_all(a.trials, seed);
    for r in &results {
        println!("{r}");
    }
    let failed = results.iter().filter(|r| !r.passed()).count();
    println!(
        "{} checks, {failed} failed, {:.1}s",
        results.len(),
        started.elapsed().as_secs_f64()
    );
    if failed > 0 {
        bail!("{failed} self-test(s) failed");
    }
    Ok(())
}
