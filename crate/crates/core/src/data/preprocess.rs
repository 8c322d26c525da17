//! Silhouette normalization to 64 x 44.
//!
//! Each frame is binarized at 0.5, cropped to the foreground bounding box,
//! resized to height 64 keeping its aspect ratio, and placed in a 44-wide
//! canvas so that the centroid of its upper half sits on the center column.

use std::path::{Path, PathBuf};

use image::imageops::{self, FilterType};
use image::{GrayImage, Luma};

use super::index::IndexEntry;
use crate::error::{GaitError, Result};
use crate::model::{SilhouetteSequence, FRAME_HEIGHT, FRAME_WIDTH};
use crate::numerics::Tensor;

fn is_frame_file(p: &Path) -> bool {
    p.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("png") || e.eq_ignore_ascii_case("pgm"))
}

/// Frame files of a sequence directory in file-name order.
pub fn frame_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for item in std::fs::read_dir(dir).map_err(|e| GaitError::io(dir, e))? {
        let path = item.map_err(|e| GaitError::io(dir, e))?.path();
        if path.is_file() && is_frame_file(&path) {
            files.push(path);
        }
    }
    files.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    Ok(files)
}

/// Normalizes a grayscale mask given as row-major values in `[0, 1]`.
/// Returns `None` when no pixel reaches 0.5.
pub fn normalize_mask(width: usize, height: usize, values: &[f32]) -> Option<Tensor<f32>> {
    debug_assert_eq!(values.len(), width * height);
    let fg = |x: usize, y: usize| values[y * width + x] >= 0.5;
    let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
    for y in 0..height {
        for x in 0..width {
            if fg(x, y) {
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
            }
        }
    }
    if x0 == usize::MAX {
        return None;
    }
    let (cw, ch) = (x1 - x0 + 1, y1 - y0 + 1);
    let crop = GrayImage::from_fn(cw as u32, ch as u32, |x, y| {
        Luma([if fg(x0 + x as usize, y0 + y as usize) {
            255
        } else {
            0
        }])
    });
    let new_w = ((cw as f64 * FRAME_HEIGHT as f64 / ch as f64).round() as u32).max(1);
    let resized = imageops::resize(&crop, new_w, FRAME_HEIGHT as u32, FilterType::Triangle);

    let (mut mass, mut moment) = (0.0f64, 0.0f64);
    for y in 0..FRAME_HEIGHT / 2 {
        for x in 0..new_w {
            let v = resized.get_pixel(x, y as u32).0[0] as f64;
            mass += v;
            moment += v * x as f64;
        }
    }
    let cx = if mass > 0.0 {
        moment / mass
    } else {
        (new_w as f64 - 1.0) / 2.0
    };
    // Column `x` of the resized image lands at `x + shift`.
    let shift = (FRAME_WIDTH as f64 - 1.0) / 2.0 - cx;
    let shift = shift.round() as i64;

    let mut out = vec![0f32; FRAME_HEIGHT * FRAME_WIDTH];
    for y in 0..FRAME_HEIGHT {
        for x in 0..new_w as i64 {
            let tx = x + shift;
            if (0..FRAME_WIDTH as i64).contains(&tx) {
                out[y * FRAME_WIDTH + tx as usize] =
                    resized.get_pixel(x as u32, y as u32).0[0] as f32 / 255.0;
            }
        }
    }
    Some(Tensor::new(&[1, FRAME_HEIGHT, FRAME_WIDTH], out).expect("fixed frame shape"))
}

fn read_gray(path: &Path) -> Result<GrayImage> {
    let img = image::open(path).map_err(|source| GaitError::Image {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(img.to_luma8())
}

/// Normalizes one image file; `None` for an empty (all-background) frame.
pub fn load_frame(path: &Path) -> Result<Option<Tensor<f32>>> {
    let img = read_gray(path)?;
    let values: Vec<f32> = img.as_raw().iter().map(|&v| v as f32 / 255.0).collect();
    Ok(normalize_mask(
        img.width() as usize,
        img.height() as usize,
        &values,
    ))
}

/// Loads and normalizes all frames of a sequence directory, skipping empty
/// frames.
pub fn load_sequence(entry: &IndexEntry) -> Result<SilhouetteSequence> {
    let files = frame_files(&entry.path)?;
    let mut frames = Vec::with_capacity(files.len());
    for f in &files {
        match load_frame(f)? {
            Some(t) => frames.push(t),
            None => log::warn!("{}: no foreground pixels, frame skipped", f.display()),
        }
    }
    if frames.is_empty() {
        return Err(GaitError::Dataset {
            path: entry.path.clone(),
            reason: "no non-empty frames".into(),
        });
    }
    SilhouetteSequence::new(frames, entry.meta.clone())
}
