//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Three operations: render a synthetic walker, fuse a walk by elementwise
//! max over preprocessed frames, and run GDA on 2-D toy points.

use gaitkit::data::{
    normalize_mask, render_silhouette, synth::CANVAS_HEIGHT, synth::CANVAS_WIDTH, Condition,
    SubjectLatents,
};
use gaitkit::embedding::EmbeddingSet;
use gaitkit::gda::{distance_matrix, refine_distances, AdjustmentSet, GdaConfig, GdaMode};
use gaitkit::model::{SequenceMeta, FRAME_HEIGHT, FRAME_WIDTH};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wasm_bindgen::prelude::*;

#[wasm_bindgen]
pub fn canvas_width() -> usize {
    CANVAS_WIDTH
}

#[wasm_bindgen]
pub fn canvas_height() -> usize {
    CANVAS_HEIGHT
}

#[wasm_bindgen]
pub fn frame_width() -> usize {
    FRAME_WIDTH
}

#[wasm_bindgen]
pub fn frame_height() -> usize {
    FRAME_HEIGHT
}

fn condition(name: &str) -> Result<Condition, JsError> {
    Condition::from_name(name).ok_or_else(|| JsError::new(&format!("unknown condition `{name}`")))
}

fn latents(subject: u32, spread: f64) -> SubjectLatents {
    SubjectLatents::sample(&mut ChaCha8Rng::seed_from_u64(subject as u64), spread)
}

/// One raw silhouette (`canvas_width x canvas_height`, values 0 or 1) of
/// walker `subject` at time `t` seen from `view` degrees.
#[wasm_bindgen]
pub fn render(
    subject: u32,
    spread: f64,
    cond: &str,
    view: f64,
    t: f64,
    noise: f64,
) -> Result<Vec<f32>, JsError> {
    let mut rng = ChaCha8Rng::seed_from_u64(subject as u64 ^ 0xD1CE);
    Ok(render_silhouette(
        &latents(subject, spread),
        condition(cond)?,
        t,
        0.0,
        view,
        0.0,
        noise,
        &mut rng,
    ))
}

/// Elementwise max over `frames` consecutive preprocessed frames
/// (`frame_width x frame_height`).
#[wasm_bindgen]
pub fn fuse_walk(
    subject: u32,
    spread: f64,
    cond: &str,
    view: f64,
    frames: u32,
) -> Result<Vec<f32>, JsError> {
    let lat = latents(subject, spread);
    let cond = condition(cond)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut fused = vec![0f32; FRAME_WIDTH * FRAME_HEIGHT];
    for f in 0..frames.max(1) {
        let mask = render_silhouette(&lat, cond, f as f64, 0.0, view, 0.0, 0.0, &mut rng);
        if let Some(frame) = normalize_mask(CANVAS_WIDTH, CANVAS_HEIGHT, &mask) {
            for (v, &x) in fused.iter_mut().zip(frame.data()) {
                *v = v.max(x);
            }
        }
    }
    Ok(fused)
}

fn points(flat: &[f32]) -> Result<EmbeddingSet, JsError> {
    if !flat.len().is_multiple_of(2) {
        return Err(JsError::new("points must be flat (x, y) pairs"));
    }
    let rows: Vec<Vec<f32>> = flat.chunks(2).map(<[f32]>::to_vec).collect();
    let n = rows.len();
    EmbeddingSet::from_rows(rows, vec![SequenceMeta::default(); n])
        .map_err(|e| JsError::new(&e.to_string()))
}

/// Plain then refined probe x gallery distances for 2-D points, both
/// row-major, concatenated.
#[wasm_bindgen]
pub fn gda_points(
    probes: &[f32],
    gallery: &[f32],
    adjustment: &[f32],
    t: u32,
    lambda_g: f64,
    lambda_q: f64,
    probe_only: bool,
) -> Result<Vec<f64>, JsError> {
    let err = |e: gaitkit::GaitError| JsError::new(&e.to_string());
    let (p, g) = (points(probes)?, points(gallery)?);
    let rs = AdjustmentSet::new(points(adjustment)?, None).map_err(err)?;
    let mode = if probe_only {
        GdaMode::ProbeOnly
    } else {
        GdaMode::ProbeAndGallery
    };
    let cfg = GdaConfig {
        t,
        lambda_g,
        lambda_q,
        mode,
        ..GdaConfig::default()
    };
    let d = distance_matrix(&p, &g).map_err(err)?;
    let refined = refine_distances(&d, &p, &g, &rs, &cfg).map_err(err)?;
    Ok([d.values(), refined.values()].concat())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_and_fuse_shapes() {
        let r = render(3, 1.0, "nm", 90.0, 0.0, 0.0).unwrap();
        assert_eq!(r.len(), canvas_width() * canvas_height());
        assert!(r.iter().any(|&v| v > 0.5));
        let one = fuse_walk(3, 1.0, "bg", 54.0, 1).unwrap();
        let many = fuse_walk(3, 1.0, "bg", 54.0, 12).unwrap();
        assert_eq!(many.len(), frame_width() * frame_height());
        assert!(one.iter().zip(&many).all(|(a, b)| a <= b));
    }

    #[test]
    fn gda_points_zero_weights_is_identity() {
        let (p, g, a) = (
            [0.0, 0.0, 1.0, 1.0],
            [0.5, 0.0, 3.0, 3.0, -1.0, 2.0],
            [0.0, 1.0, 2.0, 2.0],
        );
        let out = gda_points(&p, &g, &a, 1, 0.0, 0.0, false).unwrap();
        assert_eq!(out.len(), 12);
        assert_eq!(out[..6], out[6..]);
    }
}
