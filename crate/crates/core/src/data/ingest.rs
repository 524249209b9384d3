//! `<root>/<ClassName>/*.png` trees: reading, writing, manifests.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, ImageReader};
use serde::{Deserialize, Serialize};

use super::{LabeledSample, Lineage, ShipClass};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::resample::resize_bicubic;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Samples plus non-fatal findings such as empty class folders.
#[derive(Debug, Clone)]
pub struct Ingested {
    pub samples: Vec<LabeledSample>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub generator_version: String,
    pub seed: Option<u64>,
    pub speckle_looks: Option<u32>,
    pub image_size: usize,
    pub counts: BTreeMap<String, usize>,
    pub total: usize,
}

fn file_err(path: &Path, reason: impl ToString) -> Error {
    Error::File {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

fn is_png(p: &Path) -> bool {
    p.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

/// Reads one file as grayscale, centre-crops to a square and resizes to
/// `size × size`.
fn read_chip(path: &Path, size: usize) -> Result<Image> {
    let decoded = ImageReader::open(path)
        .map_err(|e| file_err(path, e))?
        .with_guessed_format()
        .map_err(|e| file_err(path, e))?
        .decode()
        .map_err(|e| file_err(path, e))?
        .to_luma8();
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    if w == 0 || h == 0 {
        return Err(file_err(path, "empty image"));
    }
    let side = w.min(h);
    let (x0, y0) = ((w - side) / 2, (h - side) / 2);
    let mut px = Vec::with_capacity(side * side);
    for y in y0..y0 + side {
        for x in x0..x0 + side {
            px.push(decoded.get_pixel(x as u32, y as u32).0[0]);
        }
    }
    let img = Image::from_u8(side, side, &px)?;
    if side == size {
        Ok(img)
    } else {
        resize_bicubic(&img, size, size)
    }
}

/// Loads every PNG under the six class folders, ordered by class then path.
pub fn load_dataset(root: &Path, expected_size: usize) -> Result<Ingested> {
    if expected_size == 0 {
        return Err(Error::Domain("expected_size must be positive".into()));
    }
    if !root.is_dir() {
        return Err(Error::Ingestion(format!(
            "dataset root {} is not a directory",
            root.display()
        )));
    }
    let missing: Vec<&str> = ShipClass::ALL
        .iter()
        .map(|c| c.name())
        .filter(|n| !root.join(n).is_dir())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Ingestion(format!(
            "missing class directories: {}",
            missing.join(", ")
        )));
    }
    let mut warnings = Vec::new();
    for entry in fs::read_dir(root).map_err(|e| file_err(root, e))? {
        let entry = entry.map_err(|e| file_err(root, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if entry.path().is_dir() && name.parse::<ShipClass>().is_err() {
            warnings.push(format!("ignoring unknown directory {name:?}"));
        }
    }
    let mut samples = Vec::new();
    for class in ShipClass::ALL {
        let dir = root.join(class.name());
        let mut files: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(|e| file_err(&dir, e))?
            .map(|e| e.map(|e| e.path()).map_err(|err| file_err(&dir, err)))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .filter(|p| p.is_file() && is_png(p))
            .collect();
        files.sort();
        if files.is_empty() {
            warnings.push(format!("class folder {class} holds no images"));
        }
        for f in files {
            let image = read_chip(&f, expected_size)?;
            samples.push(LabeledSample::new(image, class.label(), Lineage::Hr)?);
        }
    }
    warnings.iter().for_each(|w| log::warn!("{w}"));
    Ok(Ingested { samples, warnings })
}

/// Writes samples as 8-bit PNGs under `<dir>/<ClassName>/` together with a
/// manifest. Files are numbered per class in input order.
pub fn export_dataset(
    samples: &[LabeledSample],
    dir: &Path,
    seed: Option<u64>,
    speckle_looks: Option<u32>,
    generator_version: &str,
) -> Result<Manifest> {
    let mut counts: BTreeMap<String, usize> = ShipClass::ALL
        .iter()
        .map(|c| (c.name().to_string(), 0))
        .collect();
    for class in ShipClass::ALL {
        fs::create_dir_all(dir.join(class.name()))?;
    }
    let mut size = 0;
    for s in samples {
        let (h, w) = s.image.dims();
        size = h;
        let n = counts
            .get_mut(s.class().name())
            .expect("all classes present");
        let path = dir.join(s.class().name()).join(format!("{:05}.png", *n));
        let gray = GrayImage::from_raw(w as u32, h as u32, s.image.to_u8())
            .ok_or_else(|| file_err(&path, "pixel buffer size"))?;
        gray.save(&path).map_err(|e| file_err(&path, e))?;
        *n += 1;
    }
    let manifest = Manifest {
        generator_version: generator_version.to_string(),
        seed,
        speckle_looks,
        image_size: size,
        total: samples.len(),
        counts,
    };
    fs::write(
        dir.join(MANIFEST_FILE),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(manifest)
}
