//! Randomized gradient and oracle checks run by `gaitkit check`.
//!
//! Each check draws its instances from a seeded generator so a failure can
//! be replayed with the same seed.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::GalleryViews;
use crate::embedding::EmbeddingSet;
use crate::eval::{evaluate_condition, GalleryColumn};
use crate::gda::{
    compute_benchmark, feature_benchmark, refine_with_offsets, AdjustmentSet, DistanceMatrix,
    GdaConfig, GdaMode,
};
use crate::model::{
    sfe_embed, tff_fuse, ModelConfig, SequenceMeta, SfeParams, FRAME_HEIGHT, FRAME_WIDTH,
};
use crate::numerics::{
    affine, affine_backward, conv2d, conv2d_backward, finite_diff_check, global_pool,
    global_pool_backward, leaky_rectify, leaky_rectify_backward, maxpool2d, maxpool2d_backward,
    ConvSpec, Tensor,
};
use crate::training::{hard_triplet_loss, TripletLossConfig};

/// Tolerance of the 64-bit gradient checks.
pub const GRAD_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub trials: usize,
    pub failures: usize,
    /// Largest error seen, where the check measures one.
    pub worst: f64,
    /// First failure, if any.
    pub detail: Option<String>,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.failures == 0 && self.trials > 0
    }
}

impl std::fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let status = if self.passed() { "ok" } else { "FAIL" };
        write!(
            f,
            "{status:<5}{} ({} trials, worst {:.2e})",
            self.name, self.trials, self.worst
        )?;
        if let Some(d) = &self.detail {
            write!(f, ": {d}")?;
        }
        Ok(())
    }
}

struct Tally {
    outcome: CheckOutcome,
}

impl Tally {
    fn new(name: &str) -> Self {
        Tally {
            outcome: CheckOutcome {
                name: name.into(),
                trials: 0,
                failures: 0,
                worst: 0.0,
                detail: None,
            },
        }
    }

    fn record(&mut self, err: f64, ok: bool, detail: impl FnOnce() -> String) {
        let o = &mut self.outcome;
        o.trials += 1;
        if err.is_nan() || err > o.worst {
            o.worst = if err.is_nan() { f64::INFINITY } else { err };
        }
        if !ok {
            o.failures += 1;
            if o.detail.is_none() {
                o.detail = Some(detail());
            }
        }
    }

    fn done(self) -> CheckOutcome {
        self.outcome
    }
}

fn uniform(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Values at least 0.04 apart in shuffled order, so no max-selection flips
/// within a finite-difference step.
fn separated(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n)
        .map(|i| (i as f64 - n as f64 / 2.0) * 0.05 + rng.gen_range(0.0..0.01))
        .collect();
    v.shuffle(rng);
    v
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn tensor(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::new(shape, data.to_vec()).expect("shape matches data")
}

pub fn grad_conv2d(trials: usize, seed: u64) -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tally = Tally::new("gradient conv2d");
    for trial in 0..trials {
        let kernel = [1, 3, 5][rng.gen_range(0..3)];
        let spec = ConvSpec::new(
            rng.gen_range(1..4),
            rng.gen_range(1..4),
            kernel,
            rng.gen_range(0..=kernel / 2),
        );
        let (h, w) = (
            rng.gen_range(kernel..kernel + 5),
            rng.gen_range(kernel..kernel + 5),
        );
        let in_shape = [spec.in_channels, h, w];
        let w_shape = spec.weight_shape();
        let (nx, nw, nb) = (
            in_shape.iter().product::<usize>(),
            w_shape.iter().product::<usize>(),
            spec.out_channels,
        );
        let (ho, wo) = spec.output_hw(h, w).expect("kernel fits");
        let r = uniform(&mut rng, spec.out_channels * ho * wo);
        let f = |v: &[f64]| {
            let x = tensor(&in_shape, &v[..nx]);
            let wt = tensor(&w_shape, &v[nx..nx + nw]);
            let b = tensor(&[nb], &v[nx + nw..]);
            let y = conv2d(&x, &wt, &b, &spec).expect("valid conv");
            let gy = tensor(y.shape(), &r);
            let (mut gw, mut gb) = (Tensor::zeros(&w_shape), Tensor::zeros(&[nb]));
            let gx = conv2d_backward(&x, &wt, &spec, &gy, &mut gw, &mut gb, true)
                .expect("valid conv")
                .expect("input grad");
            let mut g = gx.into_data();
            g.extend(gw.into_data());
            g.extend(gb.into_data());
            (dot(y.data(), &r), g)
        };
        let rep = finite_diff_check(f, &uniform(&mut rng, nx + nw + nb), GRAD_TOLERANCE);
        tally.record(rep.max_rel_err, rep.pass, || {
            format!(
                "trial {trial}: {spec:?} {h}x{w}, error {:.3e}",
                rep.max_rel_err
            )
        });
    }
    tally.done()
}

pub fn grad_maxpool2d(trials: usize, seed: u64) -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tally = Tally::new("gradient maxpool2d");
    for trial in 0..trials {
        let shape = [
            rng.gen_range(1..4),
            2 * rng.gen_range(1..5),
            2 * rng.gen_range(1..5),
        ];
        let n: usize = shape.iter().product();
        let r = uniform(&mut rng, n / 4);
        let f = |v: &[f64]| {
            let p = maxpool2d(&tensor(&shape, v)).expect("even dims");
            let g = maxpool2d_backward(&shape, &p.argmax, &tensor(p.output.shape(), &r))
                .expect("shapes agree");
            (dot(p.output.data(), &r), g.into_data())
        };
        let rep = finite_diff_check(f, &separated(&mut rng, n), GRAD_TOLERANCE);
        tally.record(rep.max_rel_err, rep.pass, || {
            format!("trial {trial}: {shape:?}, error {:.3e}", rep.max_rel_err)
        });
    }
    tally.done()
}

pub fn grad_leaky(trials: usize, seed: u64) -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tally = Tally::new("gradient leaky rectification");
    for trial in 0..trials {
        let n = rng.gen_range(1..40);
        let slope = rng.gen_range(0.0..0.5);
        // Keep inputs away from the kink at zero.
        let x: Vec<f64> = (0..n)
            .map(|_| {
                let m = rng.gen_range(1e-3..1.0);
                if rng.gen() {
                    m
                } else {
                    -m
                }
            })
            .collect();
        let r = uniform(&mut rng, n);
        let f = |v: &[f64]| {
            let t = tensor(&[n], v);
            let y = leaky_rectify(&t, slope);
            let g = leaky_rectify_backward(&t, &tensor(&[n], &r), slope);
            (dot(y.data(), &r), g.into_data())
        };
        let rep = finite_diff_check(f, &x, GRAD_TOLERANCE);
        tally.record(rep.max_rel_err, rep.pass, || {
            format!("trial {trial}: error {:.3e}", rep.max_rel_err)
        });
    }
    tally.done()
}

pub fn grad_affine(trials: usize, seed: u64) -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tally = Tally::new("gradient affine head");
    for trial in 0..trials {
        let (out, inp) = (rng.gen_range(1..9), rng.gen_range(1..9));
        let r = uniform(&mut rng, out);
        let f = |v: &[f64]| {
            let x = &v[..inp];
            let w = tensor(&[out, inp], &v[inp..inp + out * inp]);
            let b = tensor(&[out], &v[inp + out * inp..]);
            let y = affine(x, &w, &b).expect("shapes agree");
            let (mut gw, mut gb) = (Tensor::zeros(&[out, inp]), Tensor::zeros(&[out]));
            let mut g = affine_backward(x, &w, &r, &mut gw, &mut gb);
            g.extend(gw.into_data());
            g.extend(gb.into_data());
            (dot(&y, &r), g)
        };
        let rep = finite_diff_check(f, &uniform(&mut rng, inp + out * inp + out), GRAD_TOLERANCE);
        tally.record(rep.max_rel_err, rep.pass, || {
            format!("trial {trial}: {out}x{inp}, error {:.3e}", rep.max_rel_err)
        });
    }
    tally.done()
}

pub fn grad_global_pool(trials: usize, seed: u64) -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tally = Tally::new("gradient global pool");
    for trial in 0..trials {
        let shape = [
            rng.gen_range(1..4),
            rng.gen_range(1..6),
            rng.gen_range(1..8),
        ];
        let n: usize = shape.iter().product();
        let r = uniform(&mut rng, shape[0] * shape[1]);
        let f = |v: &[f64]| {
            let p = global_pool(&tensor(&shape, v)).expect("rank 3");
            let g = global_pool_backward(&shape, &p.argmax, &tensor(p.output.shape(), &r))
                .expect("shapes agree");
            (dot(p.output.data(), &r), g.into_data())
        };
        let rep = finite_diff_check(f, &separated(&mut rng, n), GRAD_TOLERANCE);
        tally.record(rep.max_rel_err, rep.pass, || {
            format!("trial {trial}: {shape:?}, error {:.3e}", rep.max_rel_err)
        });
    }
    tally.done()
}

/// Random labels for `n` items with at least two subjects and one repeated
/// subject.
fn batch_labels(rng: &mut ChaCha8Rng, p: usize, k: usize) -> Vec<usize> {
    let mut labels: Vec<usize> = (0..p).flat_map(|s| std::iter::repeat_n(s, k)).collect();
    labels.shuffle(rng);
    labels
}

pub fn grad_triplet_loss(trials: usize, seed: u64) -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tally = Tally::new("gradient hard triplet loss");
    for trial in 0..trials {
        let (p, k) = (rng.gen_range(2..5), rng.gen_range(2..5));
        let (strips, dim) = (rng.gen_range(1..4), rng.gen_range(1..5));
        let labels = batch_labels(&mut rng, p, k);
        let n = labels.len();
        let len = strips * dim;
        let cfg = TripletLossConfig {
            margin: rng.gen_range(0.1..1.5),
        };
        let f = |v: &[f64]| {
            let embs: Vec<&[f64]> = v.chunks(len).collect();
            let out = hard_triplet_loss(&embs, &labels, strips, dim, &cfg).expect("valid batch");
            (out.loss, out.grads.concat())
        };
        let rep = finite_diff_check(f, &uniform(&mut rng, n * len), GRAD_TOLERANCE);
        tally.record(rep.max_rel_err, rep.pass, || {
            format!("trial {trial}: {p}x{k}, error {:.3e}", rep.max_rel_err)
        });
    }
    tally.done()
}

pub fn gradient_suite(trials: usize, seed: u64) -> Vec<CheckOutcome> {
    vec![
        grad_conv2d(trials, seed),
        grad_maxpool2d(trials, seed.wrapping_add(1)),
        grad_leaky(trials, seed.wrapping_add(2)),
        grad_affine(trials, seed.wrapping_add(3)),
        grad_global_pool(trials, seed.wrapping_add(4)),
        grad_triplet_loss(trials, seed.wrapping_add(5)),
    ]
}

/// A narrow network that keeps full-resolution forward passes cheap.
pub fn tiny_model(seed: u64) -> SfeParams<f32> {
    let cfg = ModelConfig {
        channels: [2, 2, 4, 4],
        strip_dim: 4,
        ..ModelConfig::default()
    };
    SfeParams::init(&cfg, seed).expect("valid tiny config")
}

fn random_frame(rng: &mut ChaCha8Rng) -> Tensor<f32> {
    let fill = rng.gen_range(0.1..0.6);
    let data = (0..FRAME_HEIGHT * FRAME_WIDTH)
        .map(|_| f32::from(rng.gen_bool(fill)))
        .collect();
    Tensor::new(&[1, FRAME_HEIGHT, FRAME_WIDTH], data).expect("frame shape")
}

/// Embeddings are bitwise unchanged under frame permutations, and adding a
/// frame never lowers any fused element.
pub fn tff_invariance(trials: usize, permutations: usize, seed: u64) -> Vec<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = tiny_model(seed);
    let mut perm = Tally::new("TFF permutation invariance");
    let mut mono = Tally::new("TFF frame-addition monotonicity");
    for trial in 0..trials {
        let n = rng.gen_range(1..6);
        let mut frames: Vec<Tensor<f32>> = (0..n).map(|_| random_frame(&mut rng)).collect();
        let base = sfe_embed(&frames, &params).expect("forward").into_flat();
        let base_bits: Vec<u32> = base.iter().map(|x| x.to_bits()).collect();
        let mut ok = true;
        for _ in 0..permutations {
            frames.shuffle(&mut rng);
            let e = sfe_embed(&frames, &params).expect("forward").into_flat();
            ok &= e.iter().map(|x| x.to_bits()).eq(base_bits.iter().copied());
        }
        perm.record(0.0, ok, || {
            format!("trial {trial}: embedding bits changed under permutation")
        });

        let before = tff_fuse(&frames, &params).expect("fusion");
        frames.push(random_frame(&mut rng));
        let after = tff_fuse(&frames, &params).expect("fusion");
        let worst = before
            .data()
            .iter()
            .zip(after.data())
            .map(|(b, a)| f64::from(b - a))
            .fold(0.0, f64::max);
        mono.record(worst, worst <= 0.0, || {
            format!("trial {trial}: fused value dropped by {worst}")
        });
    }
    vec![perm.done(), mono.done()]
}

/// Hinge of every (anchor, positive, negative) triple; per anchor the
/// largest, then the batch-hard aggregation.
fn brute_force_loss(
    embs: &[Vec<f64>],
    labels: &[usize],
    strips: usize,
    dim: usize,
    margin: f64,
) -> f64 {
    let n = embs.len();
    let mut total = 0.0;
    for s in 0..strips {
        let d = |i: usize, j: usize| -> f64 {
            (0..dim)
                .map(|k| (embs[i][s * dim + k] - embs[j][s * dim + k]).powi(2))
                .sum()
        };
        let mut hinges = Vec::new();
        for a in 0..n {
            let mut best: Option<f64> = None;
            for p in (0..n).filter(|&p| p != a && labels[p] == labels[a]) {
                for q in (0..n).filter(|&q| labels[q] != labels[a]) {
                    let h = margin + d(a, p) - d(a, q);
                    best = Some(best.map_or(h, |b: f64| b.max(h)));
                }
            }
            if let Some(h) = best.filter(|&h| h > 0.0) {
                hinges.push(h);
            }
        }
        if !hinges.is_empty() {
            total += hinges.iter().sum::<f64>() / hinges.len() as f64;
        }
    }
    total / strips as f64
}

pub fn loss_oracle(trials: usize, seed: u64) -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tally = Tally::new("triplet loss vs exhaustive triples");
    for trial in 0..trials {
        let (p, k) = (rng.gen_range(2..5), rng.gen_range(2..5));
        let (strips, dim) = (rng.gen_range(1..5), rng.gen_range(1..6));
        let labels = batch_labels(&mut rng, p, k);
        let margin = rng.gen_range(0.0..1.0);
        let embs: Vec<Vec<f64>> = labels
            .iter()
            .map(|_| uniform(&mut rng, strips * dim))
            .collect();
        let refs: Vec<&[f64]> = embs.iter().map(Vec::as_slice).collect();
        let got = hard_triplet_loss(&refs, &labels, strips, dim, &TripletLossConfig { margin })
            .expect("valid batch")
            .loss;
        let want = brute_force_loss(&embs, &labels, strips, dim, margin);
        let err = (got - want).abs();
        tally.record(err, err <= 1e-6, || {
            format!("trial {trial}: {got} vs {want}")
        });
    }
    tally.done()
}

fn unlabeled_set(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> EmbeddingSet {
    let rows = (0..n)
        .map(|_| (0..dim).map(|_| rng.gen_range(-2.0f32..2.0)).collect())
        .collect();
    EmbeddingSet::from_rows(rows, vec![SequenceMeta::default(); n]).expect("consistent rows")
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DistanceMatrix {
    let values = (0..rows * cols).map(|_| rng.gen_range(0.0..4.0)).collect();
    DistanceMatrix::new(
        values,
        vec![SequenceMeta::default(); rows],
        vec![SequenceMeta::default(); cols],
    )
    .expect("consistent sizes")
}

fn argmin(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v < row[best] {
            best = i;
        }
    }
    best
}

pub fn gda_identities(trials: usize, seed: u64) -> Vec<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut zero = Tally::new("GDA zero weights leave distances unchanged");
    let mut single = Tally::new("GDA singleton similar set");
    let mut bounds = Tally::new("GDA benchmark within member range");
    let mut argmins = Tally::new("GDA probe-only keeps row argmin");
    for trial in 0..trials {
        let (rows, cols) = (rng.gen_range(1..8), rng.gen_range(1..8));
        let d = random_matrix(&mut rng, rows, cols);
        let offsets = |rng: &mut ChaCha8Rng, n| -> Vec<f64> {
            (0..n).map(|_| rng.gen_range(0.0..3.0)).collect()
        };
        let (bg, bq) = (offsets(&mut rng, cols), offsets(&mut rng, rows));

        let cfg = GdaConfig {
            lambda_g: 0.0,
            lambda_q: 0.0,
            ..GdaConfig::default()
        };
        let same = refine_with_offsets(&d, &bg, &bq, &cfg).expect("valid offsets");
        let ok = same
            .values()
            .iter()
            .zip(d.values())
            .all(|(a, b)| a.to_bits() == b.to_bits());
        zero.record(0.0, ok, || format!("trial {trial}: values changed"));

        let dim = rng.gen_range(1..6);
        let n_rs = rng.gen_range(1..20);
        let rs = AdjustmentSet::new(unlabeled_set(&mut rng, n_rs, dim), None).expect("non-empty");
        let f: Vec<f32> = (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
        // t = 9 makes n / 10^t < 1, so kappa falls back to k_min = 1.
        let one = GdaConfig {
            t: 9,
            k_min: 1,
            ..GdaConfig::default()
        };
        let fb = feature_benchmark(&f, &rs, &one).expect("benchmark");
        let nearest = crate::gda::select_similar(&f, &rs, &one).expect("selection")[0];
        let ok = fb
            .iter()
            .zip(rs.features.row(nearest))
            .all(|(&b, &m)| b == m as f64);
        single.record(0.0, ok, || {
            format!("trial {trial}: benchmark {fb:?} differs from member {nearest}")
        });

        let members: Vec<&[f32]> = (0..rng.gen_range(1..rs.len() + 1))
            .map(|i| rs.features.row(i))
            .collect();
        let b = compute_benchmark(&members).expect("benchmark");
        let ok = (0..dim).all(|k| {
            let lo = members
                .iter()
                .map(|m| m[k] as f64)
                .fold(f64::INFINITY, f64::min);
            let hi = members
                .iter()
                .map(|m| m[k] as f64)
                .fold(f64::NEG_INFINITY, f64::max);
            lo <= b[k] && b[k] <= hi
        });
        bounds.record(0.0, ok, || {
            format!("trial {trial}: benchmark {b:?} outside the member range")
        });

        let po = GdaConfig {
            mode: GdaMode::ProbeOnly,
            lambda_q: rng.gen_range(0.0..1.0),
            lambda_g: rng.gen_range(0.0..1.0),
            ..GdaConfig::default()
        };
        let refined = refine_with_offsets(&d, &[], &bq, &po).expect("valid offsets");
        // A shift can round two distinct distances onto one value; the
        // winner is then still one of the original minimizers' rounded ties.
        let ok = (0..rows).all(|r| {
            let (a, b) = (argmin(d.row(r)), argmin(refined.row(r)));
            a == b || refined.get(r, a) == refined.get(r, b)
        });
        argmins.record(0.0, ok, || format!("trial {trial}: argmin moved"));
    }
    vec![zero.done(), single.done(), bounds.done(), argmins.done()]
}

/// Random labeled matrix with coarse distances so ties occur.
pub fn random_eval_instance(rng: &mut ChaCha8Rng) -> (DistanceMatrix, Vec<usize>) {
    let subjects = rng.gen_range(1..=6);
    let mut views: Vec<u32> = vec![0, 18, 36, 54];
    views.shuffle(rng);
    views.truncate(rng.gen_range(1..=4));
    let meta = |s: usize, v: u32| SequenceMeta::labeled(&format!("s{s}"), "nm", 1, v);
    let mut gallery = Vec::new();
    let mut probes = Vec::new();
    for s in 0..subjects {
        for &v in &views {
            if rng.gen_bool(0.8) {
                gallery.push(meta(s, v));
            }
            for _ in 0..rng.gen_range(0..3) {
                probes.push(meta(s, v));
            }
        }
    }
    if gallery.is_empty() {
        gallery.push(meta(0, views[0]));
    }
    if probes.is_empty() {
        probes.push(meta(0, views[0]));
    }
    let values = (0..probes.len() * gallery.len())
        .map(|_| rng.gen_range(0..6) as f64)
        .collect();
    let rows = (0..probes.len()).collect();
    (
        DistanceMatrix::new(values, probes, gallery).expect("consistent sizes"),
        rows,
    )
}

/// Rank-1 by sorting every restricted gallery, independent of the
/// evaluator's single-pass scan.
fn brute_force_cells(d: &DistanceMatrix, mode: GalleryViews) -> Vec<Vec<Option<(usize, usize)>>> {
    let views_of = |m: &[SequenceMeta]| {
        let mut v: Vec<u32> = m.iter().map(|x| x.view.unwrap()).collect();
        v.sort();
        v.dedup();
        v
    };
    let pviews = views_of(d.row_meta());
    let gviews = views_of(d.col_meta());
    let columns: Vec<Option<u32>> = match mode {
        GalleryViews::PerView => gviews.iter().map(|&v| Some(v)).collect(),
        GalleryViews::AllOther => vec![None],
    };
    pviews
        .iter()
        .map(|&pv| {
            columns
                .iter()
                .map(|col| {
                    let mut allowed: Vec<usize> = (0..d.cols())
                        .filter(|&c| {
                            let gv = d.col_meta()[c].view.unwrap();
                            col.map_or(gv != pv, |v| gv == v)
                        })
                        .collect();
                    if allowed.is_empty() {
                        return None;
                    }
                    let mut hits = (0, 0);
                    for r in (0..d.rows()).filter(|&r| d.row_meta()[r].view == Some(pv)) {
                        allowed
                            .sort_by(|&a, &b| d.get(r, a).total_cmp(&d.get(r, b)).then(a.cmp(&b)));
                        hits.1 += 1;
                        hits.0 += usize::from(
                            d.col_meta()[allowed[0]].subject == d.row_meta()[r].subject,
                        );
                    }
                    Some(hits)
                })
                .collect()
        })
        .collect()
}

pub fn eval_oracle(trials: usize, seed: u64) -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tally = Tally::new("rank-1 evaluation vs sorted brute force");
    for trial in 0..trials {
        let (d, rows) = random_eval_instance(&mut rng);
        let mut ok = true;
        for mode in [GalleryViews::PerView, GalleryViews::AllOther] {
            let report = evaluate_condition(&d, "nm", &rows, mode).expect("labeled instance");
            let want = brute_force_cells(&d, mode);
            let got: Vec<Vec<Option<(usize, usize)>>> = report
                .cells
                .iter()
                .map(|r| r.iter().map(|c| c.map(|c| (c.correct, c.total))).collect())
                .collect();
            ok &= got == want;
            for (i, &pv) in report.probe_views.iter().enumerate() {
                let acc: Vec<f64> = report
                    .columns
                    .iter()
                    .zip(&want[i])
                    .filter(|(col, _)| **col != GalleryColumn::View(pv))
                    .filter_map(|(_, c)| c.map(|(k, n)| k as f64 / n as f64))
                    .collect();
                let m = (!acc.is_empty()).then(|| acc.iter().sum::<f64>() / acc.len() as f64);
                ok &= report.view_means[i] == m;
            }
        }
        tally.record(0.0, ok, || format!("trial {trial}: cells or means differ"));
    }
    tally.done()
}

/// Every check with `trials` instances each.
pub fn run_all(trials: usize, seed: u64) -> Vec<CheckOutcome> {
    let mut out = gradient_suite(trials, seed);
    out.extend(tff_invariance(trials, 10, seed.wrapping_add(10)));
    out.push(loss_oracle(trials, seed.wrapping_add(11)));
    out.extend(gda_identities(trials, seed.wrapping_add(12)));
    out.push(eval_oracle(trials, seed.wrapping_add(13)));
    out
}
