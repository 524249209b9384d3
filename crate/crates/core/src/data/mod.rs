//! Labelled samples, LR/HR pairing, ingestion, synthesis and splitting.

mod ingest;
mod split;
mod synthetic;

pub use ingest::{export_dataset, load_dataset, Ingested, Manifest, MANIFEST_FILE};
pub use split::{split, SplitSpec};
pub use synthetic::{
    apply_speckle, generate_synthetic, render_template, Pose, GENERATOR_VERSION, HR_SIZE,
};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::models::StageTag;
use crate::resample::downsample;

/// Reduction factor between HR and LR.
pub const SCALE: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ShipClass {
    Cargo,
    Tanker,
    Fishing,
    Dredging,
    Passenger,
    Tug,
}

impl ShipClass {
    /// In label order.
    pub const ALL: [ShipClass; 6] = [
        ShipClass::Cargo,
        ShipClass::Tanker,
        ShipClass::Fishing,
        ShipClass::Dredging,
        ShipClass::Passenger,
        ShipClass::Tug,
    ];

    pub fn label(self) -> usize {
        self as usize
    }

    pub fn from_label(label: usize) -> Result<Self> {
        Self::ALL
            .get(label)
            .copied()
            .ok_or_else(|| Error::Domain(format!("label {label} outside 0..6")))
    }

    pub fn name(self) -> &'static str {
        match self {
            ShipClass::Cargo => "Cargo",
            ShipClass::Tanker => "Tanker",
            ShipClass::Fishing => "Fishing",
            ShipClass::Dredging => "Dredging",
            ShipClass::Passenger => "Passenger",
            ShipClass::Tug => "Tug",
        }
    }
}

impl fmt::Display for ShipClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ShipClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Domain(format!("unknown ship class {s:?}")))
    }
}

/// Where a sample's pixels came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lineage {
    /// Original full-resolution imagery.
    Hr,
    /// LR image brought back to HR size by pixel replication.
    LrReplicated,
    /// Output of an SR model at the given stage.
    SuperResolved(StageTag),
}

impl fmt::Display for Lineage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Lineage::Hr => f.write_str("HR"),
            Lineage::LrReplicated => f.write_str("LR"),
            Lineage::SuperResolved(s) => write!(f, "SR({s})"),
        }
    }
}

/// Things that carry a class label.
pub trait Labeled {
    fn label(&self) -> usize;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub image: Image,
    pub label: usize,
    pub lineage: Lineage,
}

impl LabeledSample {
    pub fn new(image: Image, label: usize, lineage: Lineage) -> Result<Self> {
        ShipClass::from_label(label)?;
        Ok(Self {
            image,
            label,
            lineage,
        })
    }

    pub fn class(&self) -> ShipClass {
        ShipClass::ALL[self.label]
    }
}

impl Labeled for LabeledSample {
    fn label(&self) -> usize {
        self.label
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedSample {
    pub lr: Image,
    pub hr: Image,
    pub label: usize,
}

impl Labeled for PairedSample {
    fn label(&self) -> usize {
        self.label
    }
}

/// Attaches the 2× downsampled LR image to every HR sample.
pub fn make_pairs(samples: &[LabeledSample]) -> Result<Vec<PairedSample>> {
    samples
        .iter()
        .map(|s| {
            Ok(PairedSample {
                lr: downsample(&s.image, SCALE)?,
                hr: s.image.clone(),
                label: s.label,
            })
        })
        .collect()
}

/// Per-class counts.
pub fn label_histogram<T: Labeled>(items: &[T]) -> [usize; 6] {
    let mut h = [0; 6];
    for it in items {
        h[it.label()] += 1;
    }
    h
}
