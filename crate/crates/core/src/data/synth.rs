//! Synthetic walkers for desk-scale experiments.
//!
//! Each subject is an articulated figure of capsules (legs, arms, a torso made
//! of three capsules, a head) whose proportions and gait rhythm come from
//! per-subject latents. A walk is posed over time in 3-D (x forward, y left,
//! z up) and orthographically projected for every camera view; view 90 is the
//! side view and view 0 faces the walker. Conditions `bg` and `cl` add a
//! carried bag or a coat.

use std::f64::consts::PI;
use std::path::Path;

use image::{GrayImage, Luma};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::index::{index_dataset, DatasetIndex};
use super::protocol::{ProbeSet, Protocol, SeqSelector};
use crate::embedding::write_file;
use crate::error::{GaitError, Result};
use crate::parallel;

pub const CANVAS_HEIGHT: usize = 128;
pub const CANVAS_WIDTH: usize = 96;
const PIXELS_PER_UNIT: f64 = 112.0;
const GROUND_ROW: f64 = 123.0;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionSpec {
    pub name: String,
    pub sequences: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    /// Total subjects; those beyond `train_subjects + test_subjects` form
    /// the unlabeled pool.
    pub n_subjects: usize,
    pub train_subjects: usize,
    pub test_subjects: usize,
    pub conditions: Vec<ConditionSpec>,
    pub frames_per_sequence: usize,
    pub views: Vec<u32>,
    /// Probability of flipping a pixel on the silhouette boundary band.
    pub noise_level: f64,
    /// Width of the latent ranges subjects are drawn from, as a fraction
    /// of the full ranges (smaller means more similar subjects).
    pub latent_spread: f64,
    /// Relative per-walk variation of gait rhythm and swing amplitudes.
    pub walk_jitter: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        let cond = |name: &str, sequences| ConditionSpec {
            name: name.into(),
            sequences,
        };
        SynthSpec {
            n_subjects: 40,
            train_subjects: 20,
            test_subjects: 10,
            conditions: vec![cond("nm", 3), cond("bg", 1), cond("cl", 1)],
            frames_per_sequence: 30,
            views: vec![18, 54, 90, 126],
            noise_level: 0.05,
            latent_spread: 1.0,
            walk_jitter: 0.0,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(GaitError::Config(m));
        if self.n_subjects == 0
            || self.frames_per_sequence == 0
            || self.views.is_empty()
            || self.conditions.is_empty()
        {
            return bad("synthetic spec needs subjects, frames, views and conditions".into());
        }
        if self.train_subjects + self.test_subjects > self.n_subjects {
            return bad(format!(
                "{} train + {} test subjects exceed {} subjects",
                self.train_subjects, self.test_subjects, self.n_subjects
            ));
        }
        if !(0.0..=1.0).contains(&self.noise_level) {
            return bad(format!("noise level {} outside [0, 1]", self.noise_level));
        }
        if !(self.latent_spread > 0.0 && self.latent_spread <= 1.0) {
            return bad(format!(
                "latent spread {} outside (0, 1]",
                self.latent_spread
            ));
        }
        if !(0.0..0.5).contains(&self.walk_jitter) {
            return bad(format!("walk jitter {} outside [0, 0.5)", self.walk_jitter));
        }
        for c in &self.conditions {
            if !["nm", "bg", "cl"].contains(&c.name.as_str()) {
                return bad(format!(
                    "unknown synthetic condition `{}` (nm, bg or cl)",
                    c.name
                ));
            }
        }
        Ok(())
    }

    pub fn sequences_per_subject(&self) -> usize {
        self.conditions
            .iter()
            .map(|c| c.sequences as usize)
            .sum::<usize>()
            * self.views.len()
    }

    /// NM#1-2 gallery; probes are the remaining NM sequences, and every BG
    /// and CL sequence.
    pub fn protocol(&self) -> Protocol {
        let unlabeled = self.n_subjects - self.train_subjects - self.test_subjects;
        let mut p = Protocol::synthetic(self.train_subjects, self.test_subjects, unlabeled);
        let count = |name: &str| {
            self.conditions
                .iter()
                .find(|c| c.name == name)
                .map_or(0, |c| c.sequences)
        };
        let nm = count("nm");
        p.gallery = vec![SeqSelector::new("nm", &(1..=nm.min(2)).collect::<Vec<_>>())];
        p.probes = ["nm", "bg", "cl"]
            .iter()
            .filter_map(|&name| {
                let seqs: Vec<u32> = if name == "nm" {
                    (3..=nm).collect()
                } else {
                    (1..=count(name)).collect()
                };
                (!seqs.is_empty()).then(|| ProbeSet {
                    name: name.into(),
                    select: vec![SeqSelector::new(name, &seqs)],
                })
            })
            .collect();
        p
    }
}

/// Body proportions and gait rhythm of one subject, in units of a nominal
/// body height.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectLatents {
    pub stature: f64,
    pub leg_length: f64,
    pub torso_length: f64,
    pub head_radius: f64,
    pub shoulder_half_width: f64,
    pub hip_half_width: f64,
    pub torso_radius: f64,
    pub limb_radius: f64,
    pub arm_length: f64,
    pub leg_swing: f64,
    pub arm_swing: f64,
    pub knee_bend: f64,
    /// Frames per gait cycle.
    pub period: f64,
    pub lean: f64,
    pub bounce: f64,
}

impl SubjectLatents {
    /// Draws every latent from its range shrunk around the center by
    /// `spread` (1 = full range).
    pub fn sample<R: Rng>(rng: &mut R, spread: f64) -> Self {
        let mut draw = |lo: f64, hi: f64| {
            let mid = (lo + hi) / 2.0;
            mid + spread * (rng.gen::<f64>() - 0.5) * (hi - lo)
        };
        SubjectLatents {
            stature: draw(0.85, 1.0),
            leg_length: draw(0.44, 0.54),
            torso_length: draw(0.27, 0.34),
            head_radius: draw(0.05, 0.07),
            shoulder_half_width: draw(0.08, 0.14),
            hip_half_width: draw(0.05, 0.09),
            torso_radius: draw(0.045, 0.08),
            limb_radius: draw(0.022, 0.04),
            arm_length: draw(0.34, 0.44),
            leg_swing: draw(0.3, 0.6),
            arm_swing: draw(0.15, 0.6),
            knee_bend: draw(0.2, 0.8),
            period: draw(14.0, 24.0),
            lean: draw(-0.06, 0.14),
            bounce: draw(0.004, 0.02),
        }
    }

    /// This subject on one particular walk: rhythm, swing and posture vary
    /// by up to `jitter` (relative).
    pub fn perturbed<R: Rng>(&self, rng: &mut R, jitter: f64) -> Self {
        let mut scale = |v: f64| v * (1.0 + jitter * rng.gen_range(-1.0..1.0));
        let mut walk = self.clone();
        walk.period = scale(self.period);
        walk.leg_swing = scale(self.leg_swing);
        walk.arm_swing = scale(self.arm_swing);
        walk.knee_bend = scale(self.knee_bend);
        walk.bounce = scale(self.bounce);
        walk.lean = self.lean + jitter * 0.2 * rng.gen_range(-1.0..1.0);
        walk
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Condition {
    Normal,
    Bag,
    Coat,
}

impl Condition {
    pub fn from_name(name: &str) -> Option<Condition> {
        match name {
            "nm" => Some(Condition::Normal),
            "bg" => Some(Condition::Bag),
            "cl" => Some(Condition::Coat),
            _ => None,
        }
    }
}

type V3 = [f64; 3];

fn add(a: V3, b: V3) -> V3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn scaled(d: V3, s: f64) -> V3 {
    [d[0] * s, d[1] * s, d[2] * s]
}

/// Unit vector pointing down, rotated forward by `angle` about the y axis.
fn down(angle: f64) -> V3 {
    [angle.sin(), 0.0, -angle.cos()]
}

struct Capsule {
    a: V3,
    b: V3,
    r: f64,
}

/// Poses the figure at time `t` (frames) with cycle phase offset `phase`.
fn pose(l: &SubjectLatents, cond: Condition, t: f64, phase: f64) -> Vec<Capsule> {
    let w = 2.0 * PI / l.period;
    let s = l.stature;
    let leg = l.leg_length * s;
    let lr = l.limb_radius * s;
    let coat = if cond == Condition::Coat { 1.0 } else { 0.0 };
    let mut parts = Vec::with_capacity(16);

    let mut feet_z = f64::INFINITY;
    let mut legs = Vec::new();
    for (side, offset) in [(1.0, 0.0), (-1.0, PI)] {
        let ph = w * t + phase + offset;
        let swing = l.leg_swing * ph.sin();
        let flex = l.knee_bend * (ph + PI / 2.0).sin().max(0.0);
        let hip = [0.0, side * l.hip_half_width * s, leg];
        let knee = add(hip, scaled(down(swing), leg / 2.0));
        let foot = add(knee, scaled(down(swing - flex), leg / 2.0));
        feet_z = feet_z.min(foot[2] - lr);
        legs.push((hip, knee, foot));
    }
    let lift = -feet_z + l.bounce * s * (2.0 * w * t + 2.0 * phase).cos();
    let up = |p: V3| add(p, [0.0, 0.0, lift]);
    for &(hip, knee, foot) in &legs {
        parts.push(Capsule {
            a: up(hip),
            b: up(knee),
            r: lr * (1.25 + 0.4 * coat),
        });
        parts.push(Capsule {
            a: up(knee),
            b: up(foot),
            r: lr,
        });
        let toe = add(foot, [0.06 * s, 0.0, 0.0]);
        parts.push(Capsule {
            a: up(foot),
            b: up(toe),
            r: lr * 0.8,
        });
    }

    let pelvis = up([0.0, 0.0, leg]);
    let neck = add(
        pelvis,
        scaled([l.lean.sin(), 0.0, l.lean.cos()], l.torso_length * s),
    );
    let tr = (l.torso_radius + 0.02 * coat) * s;
    let shoulder = (l.shoulder_half_width + 0.015 * coat) * s;
    for side in [1.0, -1.0] {
        let hip = add(pelvis, [0.0, side * l.hip_half_width * s, 0.0]);
        let sh = add(neck, [0.0, side * shoulder, 0.0]);
        parts.push(Capsule {
            a: hip,
            b: sh,
            r: tr * 0.8,
        });
    }
    parts.push(Capsule {
        a: pelvis,
        b: neck,
        r: tr,
    });
    let head = add(neck, [0.02 * s, 0.0, 1.7 * l.head_radius * s]);
    parts.push(Capsule {
        a: neck,
        b: head,
        r: lr,
    });
    parts.push(Capsule {
        a: head,
        b: head,
        r: l.head_radius * s,
    });

    for (side, offset) in [(1.0, PI), (-1.0, 0.0)] {
        let ph = w * t + phase + offset;
        let carrying = cond == Condition::Bag && side < 0.0;
        let swing = if carrying {
            0.05 * ph.sin()
        } else {
            l.arm_swing * ph.sin()
        };
        let sh = add(neck, [0.0, side * shoulder, -0.02 * s]);
        let elbow = add(sh, scaled(down(swing), l.arm_length * s / 2.0));
        let hand = add(
            elbow,
            scaled(
                down(swing + 0.25 + 0.2 * swing.max(0.0)),
                l.arm_length * s / 2.0,
            ),
        );
        let ar = lr * (0.9 + 0.35 * coat);
        parts.push(Capsule {
            a: sh,
            b: elbow,
            r: ar,
        });
        parts.push(Capsule {
            a: elbow,
            b: hand,
            r: ar * 0.85,
        });
        if carrying {
            let top = add(hand, [-0.01 * s, -0.03 * s, 0.0]);
            let bottom = add(top, [0.0, 0.0, -0.1 * s]);
            parts.push(Capsule {
                a: top,
                b: bottom,
                r: 0.07 * s,
            });
        }
    }
    if coat > 0.0 {
        let hem = add(pelvis, [0.0, 0.0, -0.45 * leg]);
        parts.push(Capsule {
            a: pelvis,
            b: hem,
            r: (l.hip_half_width + 0.04) * s,
        });
    }
    parts
}

/// Renders one silhouette as row-major values in {0, 1} on a
/// `CANVAS_WIDTH x CANVAS_HEIGHT` canvas. `noise` flips boundary pixels with
/// the given probability using `rng`.
#[allow(clippy::too_many_arguments)]
pub fn render_silhouette<R: Rng>(
    latents: &SubjectLatents,
    cond: Condition,
    t: f64,
    phase: f64,
    view_deg: f64,
    offset_px: f64,
    noise: f64,
    rng: &mut R,
) -> Vec<f32> {
    let (sin, cos) = view_deg.to_radians().sin_cos();
    let project = |p: V3| -> (f64, f64) {
        let u = p[0] * sin + p[1] * cos;
        (
            CANVAS_WIDTH as f64 / 2.0 + offset_px + u * PIXELS_PER_UNIT,
            GROUND_ROW - p[2] * PIXELS_PER_UNIT,
        )
    };
    let mut margin = vec![f64::INFINITY; CANVAS_WIDTH * CANVAS_HEIGHT];
    for c in pose(latents, cond, t, phase) {
        let (ax, ay) = project(c.a);
        let (bx, by) = project(c.b);
        let r = c.r * PIXELS_PER_UNIT;
        let (dx, dy) = (bx - ax, by - ay);
        let len2 = dx * dx + dy * dy;
        let x0 = (ax.min(bx) - r - 2.0).floor().max(0.0) as usize;
        let x1 = ((ax.max(bx) + r + 2.0).ceil().max(0.0) as usize).min(CANVAS_WIDTH);
        let y0 = (ay.min(by) - r - 2.0).floor().max(0.0) as usize;
        let y1 = ((ay.max(by) + r + 2.0).ceil().max(0.0) as usize).min(CANVAS_HEIGHT);
        for y in y0..y1 {
            for x in x0..x1 {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                let s = if len2 > 0.0 {
                    (((px - ax) * dx + (py - ay) * dy) / len2).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                let (qx, qy) = (ax + s * dx - px, ay + s * dy - py);
                let m = (qx * qx + qy * qy).sqrt() - r;
                let cell = &mut margin[y * CANVAS_WIDTH + x];
                if m < *cell {
                    *cell = m;
                }
            }
        }
    }
    margin
        .iter()
        .map(|&m| {
            let inside = m <= 0.0;
            let flip = noise > 0.0 && m.abs() < 1.0 && rng.gen_bool(noise);
            (inside != flip) as u8 as f32
        })
        .collect()
}

fn derive_rng(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    let mut h = seed ^ 0x5851_F42D_4C95_7F2D;
    for &t in tags {
        h = (h ^ t).wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(29);
    }
    ChaCha8Rng::seed_from_u64(h)
}

/// Latents of every subject, in subject order.
pub fn subject_latents(spec: &SynthSpec) -> Vec<SubjectLatents> {
    (0..spec.n_subjects)
        .map(|s| {
            SubjectLatents::sample(
                &mut derive_rng(spec.seed, &[1, s as u64]),
                spec.latent_spread,
            )
        })
        .collect()
}

pub fn subject_id(spec: &SynthSpec, index: usize) -> String {
    let width = spec.n_subjects.to_string().len().max(3);
    format!("{:0width$}", index + 1)
}

fn write_subject(spec: &SynthSpec, out: &Path, s: usize, latents: &SubjectLatents) -> Result<()> {
    let subject_dir = out.join(subject_id(spec, s));
    for (ci, cspec) in spec.conditions.iter().enumerate() {
        let cond = Condition::from_name(&cspec.name).expect("validated condition");
        for seq in 1..=cspec.sequences {
            let mut walk = derive_rng(spec.seed, &[2, s as u64, ci as u64, seq as u64]);
            let phase = walk.gen_range(0.0..2.0 * PI);
            let start = walk.gen_range(0.0..latents.period);
            let drift = walk.gen_range(-6.0..6.0);
            let body = if spec.walk_jitter > 0.0 {
                latents.perturbed(&mut walk, spec.walk_jitter)
            } else {
                latents.clone()
            };
            for &view in &spec.views {
                let dir = subject_dir
                    .join(format!("{}-{seq:02}", cspec.name))
                    .join(format!("{view:03}"));
                std::fs::create_dir_all(&dir).map_err(|e| GaitError::io(&dir, e))?;
                let mut noise_rng = derive_rng(
                    spec.seed,
                    &[3, s as u64, ci as u64, seq as u64, view as u64],
                );
                for f in 0..spec.frames_per_sequence {
                    let t = start + f as f64;
                    let offset = drift * (f as f64 / spec.frames_per_sequence as f64 - 0.5);
                    let mask = render_silhouette(
                        &body,
                        cond,
                        t,
                        phase,
                        view as f64,
                        offset,
                        spec.noise_level,
                        &mut noise_rng,
                    );
                    let img =
                        GrayImage::from_fn(CANVAS_WIDTH as u32, CANVAS_HEIGHT as u32, |x, y| {
                            Luma([if mask[y as usize * CANVAS_WIDTH + x as usize] > 0.5 {
                                255
                            } else {
                                0
                            }])
                        });
                    let path = dir.join(format!("{:04}.png", f + 1));
                    img.save(&path)
                        .map_err(|source| GaitError::Image { path, source })?;
                }
            }
        }
    }
    Ok(())
}

/// Writes the dataset under `out` in the standard layout, plus `synth.json`
/// and `protocol.json`, and returns its index.
pub fn synth_generate(spec: &SynthSpec, out: &Path) -> Result<DatasetIndex> {
    spec.validate()?;
    std::fs::create_dir_all(out).map_err(|e| GaitError::io(out, e))?;
    let latents = subject_latents(spec);
    let subjects: Vec<usize> = (0..spec.n_subjects).collect();
    parallel::try_map(&subjects, |&s| write_subject(spec, out, s, &latents[s]))?;
    write_file(&out.join("synth.json"), &serde_json::to_vec_pretty(spec)?)?;
    let protocol = spec.protocol();
    write_file(
        &out.join("protocol.json"),
        &serde_json::to_vec_pretty(&protocol)?,
    )?;
    index_dataset(out, &protocol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::protocol::Split;

    fn small() -> SynthSpec {
        SynthSpec {
            n_subjects: 2,
            train_subjects: 0,
            test_subjects: 2,
            conditions: vec![ConditionSpec {
                name: "nm".into(),
                sequences: 1,
            }],
            frames_per_sequence: 10,
            views: vec![90],
            ..SynthSpec::default()
        }
    }

    fn list_files(root: &Path) -> Vec<std::path::PathBuf> {
        let mut out = Vec::new();
        let mut stack = vec![root.to_path_buf()];
        while let Some(d) = stack.pop() {
            for e in std::fs::read_dir(d).unwrap() {
                let p = e.unwrap().path();
                if p.is_dir() {
                    stack.push(p);
                } else if p.extension().is_some_and(|x| x == "png") {
                    out.push(p);
                }
            }
        }
        out.sort();
        out
    }

    #[test]
    fn counts_and_layout() {
        let dir = tempfile::tempdir().unwrap();
        // Without a test split indexing skips the gallery/probe checks.
        let spec = SynthSpec {
            test_subjects: 0,
            ..small()
        };
        synth_generate(&spec, dir.path()).unwrap();
        assert_eq!(list_files(dir.path()).len(), 20);
        assert!(dir.path().join("001/nm-01/090/0001.png").exists());
        assert!(dir.path().join("002/nm-01/090/0010.png").exists());
    }

    #[test]
    fn bitwise_reproducible() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let spec = SynthSpec {
            frames_per_sequence: 3,
            test_subjects: 0,
            ..small()
        };
        synth_generate(&spec, a.path()).unwrap();
        synth_generate(&spec, b.path()).unwrap();
        let (fa, fb) = (list_files(a.path()), list_files(b.path()));
        assert_eq!(fa.len(), fb.len());
        for (x, y) in fa.iter().zip(&fb) {
            assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
        }
    }

    #[test]
    fn default_protocol_splits() {
        let spec = SynthSpec::default();
        let p = spec.protocol();
        assert_eq!(p.gallery, vec![SeqSelector::new("nm", &[1, 2])]);
        let names: Vec<_> = p.probes.iter().map(|p| p.name.as_str()).collect();
        assert_eq!(names, ["nm", "bg", "cl"]);
        assert_eq!(spec.sequences_per_subject(), 20);
    }

    #[test]
    fn default_dataset_indexes_into_all_splits() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec {
            n_subjects: 5,
            train_subjects: 2,
            test_subjects: 2,
            frames_per_sequence: 2,
            views: vec![0, 90],
            ..SynthSpec::default()
        };
        let idx = synth_generate(&spec, dir.path()).unwrap();
        assert_eq!(idx.select(&Split::Train).len(), 2 * 10);
        assert_eq!(idx.select(&Split::Gallery).len(), 2 * 2 * 2);
        assert_eq!(idx.select(&Split::Probe("nm".into())).len(), 2 * 2);
        assert_eq!(idx.select(&Split::Probe("cl".into())).len(), 2 * 2);
        assert_eq!(idx.select(&Split::Unlabeled).len(), 10);
        assert!(idx.issues.is_empty());
    }

    #[test]
    fn latents_distinct_and_views_differ() {
        let spec = SynthSpec::default();
        let l = subject_latents(&spec);
        for i in 0..l.len() {
            for j in i + 1..l.len() {
                assert_ne!(l[i], l[j]);
            }
        }
        let mut rng = derive_rng(0, &[]);
        let side = render_silhouette(&l[0], Condition::Normal, 3.0, 0.0, 90.0, 0.0, 0.0, &mut rng);
        let front = render_silhouette(&l[0], Condition::Normal, 3.0, 0.0, 0.0, 0.0, 0.0, &mut rng);
        let area = |m: &[f32]| m.iter().sum::<f32>();
        assert!(area(&side) > 200.0 && area(&front) > 200.0);
        assert_ne!(side, front);
        let coat = render_silhouette(&l[0], Condition::Coat, 3.0, 0.0, 90.0, 0.0, 0.0, &mut rng);
        assert!(area(&coat) > area(&side));
    }
}
