//! Error maps, protocol reports, grouped summaries and F1 improvement tables.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use image::GrayImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{check_pair, Grid, Image};

/// Per-pixel absolute difference and its mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorMap {
    pub diff: Grid,
    pub score: f64,
}

pub fn error_map(hr: &Image, sr: &Image) -> Result<ErrorMap> {
    check_pair(hr, sr)?;
    let (h, w) = hr.dims();
    let data: Vec<f64> = hr
        .as_slice()
        .iter()
        .zip(sr.as_slice())
        .map(|(a, b)| (a - b).abs())
        .collect();
    let score = data.iter().sum::<f64>() / data.len() as f64;
    Ok(ErrorMap {
        diff: Grid::new(h, w, data)?,
        score,
    })
}

impl ErrorMap {
    /// 8-bit rendering with the map's maximum at 255; an all-zero map stays black.
    pub fn render(&self) -> Vec<u8> {
        let max = self.diff.max();
        self.diff
            .as_slice()
            .iter()
            .map(|v| {
                if max > 0.0 {
                    (v / max * 255.0).round() as u8
                } else {
                    0
                }
            })
            .collect()
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let (h, w) = self.diff.dims();
        let img = GrayImage::from_raw(w as u32, h as u32, self.render())
            .ok_or_else(|| Error::Shape("error map buffer".into()))?;
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        img.save(path).map_err(|e| Error::File {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }

    /// Raw grid and score as JSON, for exact comparisons.
    pub fn save_json(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }
}

/// One row of a protocol table. Baseline rows leave `loss` (and for LR/HR
/// also `family`) empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub family: Option<String>,
    pub loss: Option<String>,
    pub stage: String,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    pub macro_f1: Option<f64>,
}

impl ReportRow {
    pub fn key(&self) -> (Option<&str>, Option<&str>, &str) {
        (
            self.family.as_deref(),
            self.loss.as_deref(),
            self.stage.as_str(),
        )
    }
}

/// A grid cell that could not be completed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub family: String,
    pub loss: String,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub seeds: BTreeMap<String, u64>,
    pub config: serde_json::Value,
    pub created_unix: u64,
    pub deviations: Vec<String>,
    /// Artifact name to SHA-256 of its weights.
    pub provenance: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProtocolReport {
    pub rows: Vec<ReportRow>,
    pub failures: Vec<CellFailure>,
    pub metadata: ReportMetadata,
}

impl ProtocolReport {
    pub fn find(
        &self,
        family: Option<&str>,
        loss: Option<&str>,
        stage: &str,
    ) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.key() == (family, loss, stage))
    }

    /// Every requested `(family, loss)` cell has its stage rows or a failure record.
    pub fn check_complete(
        &self,
        families: &[String],
        losses: &[String],
        stages: &[&str],
    ) -> Result<()> {
        let mut missing = Vec::new();
        for f in families {
            for l in losses {
                let failed = self.failures.iter().any(|x| &x.family == f && &x.loss == l);
                for s in stages {
                    let n = self
                        .rows
                        .iter()
                        .filter(|r| r.key() == (Some(f), Some(l), s))
                        .count();
                    if !(n == 1 || (n == 0 && failed)) {
                        missing.push(format!("{f}/{l}/{s} appears {n} times"));
                    }
                }
            }
        }
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::Aggregation(missing.join("; ")))
        }
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::File {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Table rows as CSV: `family,loss,stage,psnr,ssim,macro_f1`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_csv_rows(path, &self.rows)
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::File {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

fn write_csv_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    /// Average over losses for each family and stage.
    FamilyStage,
    /// Average over families for each loss and stage.
    LossStage,
    /// Average over everything sharing a stage.
    Stage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub family: Option<String>,
    pub loss: Option<String>,
    pub stage: String,
    pub n: usize,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    pub macro_f1: Option<f64>,
    pub best_psnr: bool,
    pub best_ssim: bool,
    pub best_f1: bool,
}

fn group_mean(values: &[Option<f64>], what: &str, key: &str) -> Result<Option<f64>> {
    let present: Vec<f64> = values.iter().flatten().copied().collect();
    match present.len() {
        0 => Ok(None),
        n if n == values.len() => Ok(Some(present.iter().sum::<f64>() / n as f64)),
        _ => Err(Error::Aggregation(format!(
            "group {key} mixes rows with and without {what}"
        ))),
    }
}

/// Grouped means with best-per-stage flags (highest value wins, ties all flagged).
/// Output is ordered by group key, so input order does not matter.
pub fn summarize(rows: &[ReportRow], grouping: Grouping) -> Result<Vec<SummaryRow>> {
    if rows.is_empty() {
        return Err(Error::Aggregation("nothing to summarize".into()));
    }
    let mut seen = BTreeSet::new();
    for r in rows {
        if !seen.insert(r.key()) {
            return Err(Error::Aggregation(format!("duplicate row {:?}", r.key())));
        }
    }
    type Key = (Option<String>, Option<String>, String);
    let mut groups: BTreeMap<Key, Vec<&ReportRow>> = BTreeMap::new();
    for r in rows {
        let key = match grouping {
            Grouping::FamilyStage => (r.family.clone(), None, r.stage.clone()),
            Grouping::LossStage => (None, r.loss.clone(), r.stage.clone()),
            Grouping::Stage => (None, None, r.stage.clone()),
        };
        groups.entry(key).or_default().push(r);
    }
    let mut out = Vec::with_capacity(groups.len());
    for ((family, loss, stage), mut members) in groups {
        // fixed summation order keeps the means independent of input order
        members.sort_by(|a, b| a.key().cmp(&b.key()));
        let label = format!("{family:?}/{loss:?}/{stage}");
        let col =
            |f: fn(&ReportRow) -> Option<f64>| members.iter().map(|r| f(r)).collect::<Vec<_>>();
        out.push(SummaryRow {
            n: members.len(),
            psnr: group_mean(&col(|r| r.psnr), "psnr", &label)?,
            ssim: group_mean(&col(|r| r.ssim), "ssim", &label)?,
            macro_f1: group_mean(&col(|r| r.macro_f1), "macro_f1", &label)?,
            family,
            loss,
            stage,
            best_psnr: false,
            best_ssim: false,
            best_f1: false,
        });
    }
    let stages: BTreeSet<String> = out.iter().map(|r| r.stage.clone()).collect();
    for stage in stages {
        let best = |out: &[SummaryRow], f: fn(&SummaryRow) -> Option<f64>| {
            out.iter()
                .filter(|r| r.stage == stage)
                .filter_map(f)
                .fold(f64::NEG_INFINITY, f64::max)
        };
        let (bp, bs, bf) = (
            best(&out, |r| r.psnr),
            best(&out, |r| r.ssim),
            best(&out, |r| r.macro_f1),
        );
        for r in out.iter_mut().filter(|r| r.stage == stage) {
            r.best_psnr = r.psnr == Some(bp);
            r.best_ssim = r.ssim == Some(bs);
            r.best_f1 = r.macro_f1 == Some(bf);
        }
    }
    Ok(out)
}

pub fn write_summary_csv(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    write_csv_rows(path, rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Improvement {
    pub configuration: String,
    pub f1_pt: f64,
    pub f1_ft: f64,
    pub delta: f64,
}

/// `F1_ft − F1_pt` per configuration, in the order of `pt`. Both inputs must
/// name the same configurations.
pub fn improvement_table(pt: &[(String, f64)], ft: &[(String, f64)]) -> Result<Vec<Improvement>> {
    let ft_map: BTreeMap<&str, f64> = ft.iter().map(|(k, v)| (k.as_str(), *v)).collect();
    let pt_keys: BTreeSet<&str> = pt.iter().map(|(k, _)| k.as_str()).collect();
    if ft_map.len() != ft.len() || pt_keys.len() != pt.len() {
        return Err(Error::Aggregation("duplicate configuration keys".into()));
    }
    let ft_keys: BTreeSet<&str> = ft_map.keys().copied().collect();
    if pt_keys != ft_keys {
        let diff: Vec<&str> = pt_keys.symmetric_difference(&ft_keys).copied().collect();
        return Err(Error::Aggregation(format!(
            "configurations present on one side only: {}",
            diff.join(", ")
        )));
    }
    Ok(pt
        .iter()
        .map(|(k, f1_pt)| {
            let f1_ft = ft_map[k.as_str()];
            Improvement {
                configuration: k.clone(),
                f1_pt: *f1_pt,
                f1_ft,
                delta: f1_ft - f1_pt,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::l1_loss;
    use proptest::prelude::*;

    fn row(family: &str, loss: &str, stage: &str, psnr: f64, ssim: f64, f1: f64) -> ReportRow {
        ReportRow {
            family: Some(family.into()),
            loss: Some(loss.into()),
            stage: stage.into(),
            psnr: Some(psnr),
            ssim: Some(ssim),
            macro_f1: Some(f1),
        }
    }

    #[test]
    fn error_map_examples() {
        let z = Image::constant(4, 4, 0.0).unwrap();
        let o = Image::constant(4, 4, 1.0).unwrap();
        let same = error_map(&z, &z).unwrap();
        assert_eq!(same.score, 0.0);
        assert!(same.render().iter().all(|&v| v == 0));
        let full = error_map(&z, &o).unwrap();
        assert_eq!(full.score, 1.0);
        assert!(full.diff.as_slice().iter().all(|&v| v == 1.0));
        assert!(full.render().iter().all(|&v| v == 255));
        let half = Image::from_fn(4, 4, 1.0, |r, _| if r < 2 { 0.0 } else { 0.5 }).unwrap();
        let m = error_map(&z, &half).unwrap();
        assert_eq!(m.score, 0.25);
        assert_eq!(m.render()[..8], [0; 8]);
        assert_eq!(m.render()[8..], [255; 8]);
        assert!(matches!(
            error_map(&z, &Image::constant(4, 5, 0.0).unwrap()),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn error_map_files() {
        let dir = tempfile::tempdir().unwrap();
        let a = Image::from_fn(8, 8, 1.0, |r, c| ((r + c) % 3) as f64 / 3.0).unwrap();
        let b = Image::constant(8, 8, 0.2).unwrap();
        let m = error_map(&a, &b).unwrap();
        m.save_png(&dir.path().join("maps/e.png")).unwrap();
        m.save_json(&dir.path().join("maps/e.json")).unwrap();
        let back: ErrorMap =
            serde_json::from_slice(&fs::read(dir.path().join("maps/e.json")).unwrap()).unwrap();
        assert_eq!(back, m);
    }

    proptest! {
        #[test]
        fn score_is_singleton_l1(a in proptest::collection::vec(0.0f64..1.0, 64), b in proptest::collection::vec(0.0f64..1.0, 64)) {
            let (x, y) = (Image::unit(8, 8, a).unwrap(), Image::unit(8, 8, b).unwrap());
            let m = error_map(&x, &y).unwrap();
            let l1 = l1_loss(std::slice::from_ref(&y), std::slice::from_ref(&x)).unwrap().total;
            prop_assert!((m.score - l1).abs() < 1e-9);
            prop_assert_eq!(m.score == 0.0, x == y);
        }

        #[test]
        fn summarize_ignores_row_order(perm in Just((0..6usize).collect::<Vec<_>>()).prop_shuffle()) {
            let base = fixture_rows();
            let shuffled: Vec<ReportRow> = perm.iter().map(|&i| base[i].clone()).collect();
            prop_assert_eq!(
                summarize(&base, Grouping::FamilyStage).unwrap(),
                summarize(&shuffled, Grouping::FamilyStage).unwrap()
            );
        }
    }

    fn fixture_rows() -> Vec<ReportRow> {
        vec![
            row("CARN", "L1", "SR-PT", 30.0, 0.80, 0.60),
            row("CARN", "Combo", "SR-PT", 32.0, 0.90, 0.64),
            row("CARN", "Hybrid", "SR-PT", 31.0, 0.85, 0.62),
            row("RCAN", "L1", "SR-PT", 29.0, 0.70, 0.66),
            row("RCAN", "Combo", "SR-PT", 33.0, 0.95, 0.58),
            row("RCAN", "Hybrid", "SR-PT", 28.0, 0.75, 0.62),
        ]
    }

    #[test]
    fn family_average_is_arithmetic_mean() {
        let s = summarize(&fixture_rows(), Grouping::FamilyStage).unwrap();
        assert_eq!(s.len(), 2);
        let carn = &s[0];
        assert_eq!(carn.family.as_deref(), Some("CARN"));
        assert_eq!(carn.n, 3);
        assert!((carn.psnr.unwrap() - 31.0).abs() < 1e-12);
        assert!((carn.ssim.unwrap() - 0.85).abs() < 1e-12);
        assert!((carn.macro_f1.unwrap() - 0.62).abs() < 1e-12);
        let single = summarize(&fixture_rows()[..1], Grouping::FamilyStage).unwrap();
        assert_eq!(single[0].psnr, Some(30.0));
        assert_eq!(single[0].macro_f1, Some(0.60));
    }

    #[test]
    fn two_by_two_fixture() {
        // 2 families x 2 losses, hand-averaged per loss
        let rows = vec![
            row("EDSR", "L1", "SR-FT", 30.0, 0.8, 0.50),
            row("EDSR", "Combo", "SR-FT", 34.0, 0.9, 0.70),
            row("RCAN", "L1", "SR-FT", 32.0, 0.6, 0.60),
            row("RCAN", "Combo", "SR-FT", 36.0, 0.7, 0.64),
        ];
        let s = summarize(&rows, Grouping::LossStage).unwrap();
        let combo = s
            .iter()
            .find(|r| r.loss.as_deref() == Some("Combo"))
            .unwrap();
        let l1 = s.iter().find(|r| r.loss.as_deref() == Some("L1")).unwrap();
        assert!((combo.psnr.unwrap() - 35.0).abs() < 1e-12);
        assert!((combo.ssim.unwrap() - 0.8).abs() < 1e-12);
        assert!((combo.macro_f1.unwrap() - 0.67).abs() < 1e-12);
        assert!((l1.psnr.unwrap() - 31.0).abs() < 1e-12);
        assert!((l1.macro_f1.unwrap() - 0.55).abs() < 1e-12);
        assert!(combo.best_psnr && combo.best_ssim && combo.best_f1);
        assert!(!l1.best_psnr && !l1.best_ssim && !l1.best_f1);
        let all = summarize(&rows, Grouping::Stage).unwrap();
        assert_eq!(all.len(), 1);
        assert!((all[0].psnr.unwrap() - 33.0).abs() < 1e-12);
    }

    #[test]
    fn inconsistent_keys_rejected() {
        assert!(matches!(
            summarize(&[], Grouping::Stage),
            Err(Error::Aggregation(_))
        ));
        let mut rows = fixture_rows();
        rows.push(rows[0].clone());
        assert!(matches!(
            summarize(&rows, Grouping::Stage),
            Err(Error::Aggregation(_))
        ));
        let mut rows = fixture_rows();
        rows[1].psnr = None;
        assert!(matches!(
            summarize(&rows, Grouping::FamilyStage),
            Err(Error::Aggregation(_))
        ));
    }

    #[test]
    fn improvement_examples() {
        let pt = vec![
            ("CARN-Combo".to_string(), 63.12),
            ("RCAN-Combo".to_string(), 60.84),
        ];
        let ft = vec![
            ("RCAN-Combo".to_string(), 62.40),
            ("CARN-Combo".to_string(), 65.40),
        ];
        let t = improvement_table(&pt, &ft).unwrap();
        assert!((t[0].delta - 2.28).abs() < 1e-9);
        assert!((t[1].delta - 1.56).abs() < 1e-9);
        let same = improvement_table(&pt, &pt).unwrap();
        assert!(same.iter().all(|r| r.delta == 0.0));
        let other = vec![
            ("EDSR-Combo".to_string(), 1.0),
            ("CARN-Combo".to_string(), 1.0),
        ];
        assert!(matches!(
            improvement_table(&pt, &other),
            Err(Error::Aggregation(_))
        ));
    }

    #[test]
    fn report_files_and_completeness() {
        let dir = tempfile::tempdir().unwrap();
        let report = ProtocolReport {
            rows: fixture_rows(),
            failures: vec![CellFailure {
                family: "EDSR".into(),
                loss: "L1".into(),
                error: "boom".into(),
            }],
            metadata: ReportMetadata::default(),
        };
        report.write_json(&dir.path().join("r.json")).unwrap();
        report.write_csv(&dir.path().join("r.csv")).unwrap();
        assert_eq!(
            ProtocolReport::read_json(&dir.path().join("r.json")).unwrap(),
            report
        );
        let csv = fs::read_to_string(dir.path().join("r.csv")).unwrap();
        assert!(csv.starts_with("family,loss,stage,psnr,ssim,macro_f1"));
        assert_eq!(csv.lines().count(), 7);
        let fams = vec!["CARN".to_string(), "EDSR".to_string()];
        let losses = vec!["L1".to_string()];
        report.check_complete(&fams, &losses, &["SR-PT"]).unwrap();
        assert!(report.check_complete(&fams, &losses, &["SR-FT"]).is_err());
    }
}
