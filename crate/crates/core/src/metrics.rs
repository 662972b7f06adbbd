//! RMSE and correlation between predicted and measured trajectories, and
//! their aggregation into per-group reports.

use std::collections::BTreeMap;
use std::fmt::Write;

use crate::{Error, Matrix, Result};

/// Published per-channel means of the reference system, VT1..VT10. Kept as
/// documentation for report footers; not reproducible without the original
/// recordings.
pub const PUBLISHED_CORRELATION: [f64; 10] = [0.84, 0.82, 0.83, 0.82, 0.83, 0.82, 0.82, 0.84, 0.82, 0.81];
pub const PUBLISHED_RMSE_MM: [f64; 10] = [1.14, 1.24, 1.40, 1.29, 1.62, 1.66, 0.26, 1.65, 0.18, 2.08];
pub const PUBLISHED_MEAN_CORRELATION: f64 = 0.83;
pub const PUBLISHED_MEAN_RMSE_MM: f64 = 1.25;

/// Root mean squared difference.
pub fn rmse(pred: &[f64], reference: &[f64]) -> Result<f64> {
    if pred.len() != reference.len() {
        return Err(Error::InvalidInput(format!(
            "rmse: lengths differ ({} vs {})",
            pred.len(),
            reference.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::InvalidInput("rmse: empty input".into()));
    }
    let sq: f64 = pred.iter().zip(reference).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((sq / pred.len() as f64).sqrt())
}

/// Pearson correlation with per-sequence means. `Ok(None)` when either
/// sequence is constant.
pub fn correlation(pred: &[f64], reference: &[f64]) -> Result<Option<f64>> {
    if pred.len() != reference.len() {
        return Err(Error::InvalidInput(format!(
            "correlation: lengths differ ({} vs {})",
            pred.len(),
            reference.len()
        )));
    }
    if pred.len() < 2 {
        return Err(Error::InvalidInput("correlation: need at least two samples".into()));
    }
    let n = pred.len() as f64;
    let mp = pred.iter().sum::<f64>() / n;
    let mr = reference.iter().sum::<f64>() / n;
    let (mut cov, mut vp, mut vr) = (0.0, 0.0, 0.0);
    for (a, b) in pred.iter().zip(reference) {
        let (da, db) = (a - mp, b - mr);
        cov += da * db;
        vp += da * da;
        vr += db * db;
    }
    if vp == 0.0 || vr == 0.0 {
        return Ok(None);
    }
    Ok(Some((cov / (vp * vr).sqrt()).clamp(-1.0, 1.0)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LanguageGroup {
    L1,
    L2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Gender {
    Male,
    Female,
}

impl std::str::FromStr for LanguageGroup {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "L1" => Ok(Self::L1),
            "L2" => Ok(Self::L2),
            _ => Err(Error::InvalidInput(format!("unknown group {s:?} (expected L1 or L2)"))),
        }
    }
}

impl std::str::FromStr for Gender {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "M" => Ok(Self::Male),
            "F" => Ok(Self::Female),
            _ => Err(Error::InvalidInput(format!("unknown gender {s:?} (expected M or F)"))),
        }
    }
}

impl std::fmt::Display for LanguageGroup {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::L1 => "L1",
            Self::L2 => "L2",
        })
    }
}

impl std::fmt::Display for Gender {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Male => "M",
            Self::Female => "F",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpeakerInfo {
    pub id: String,
    pub group: Option<LanguageGroup>,
    pub gender: Option<Gender>,
}

/// Per-channel scores of one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceMetrics {
    pub utterance: String,
    pub speaker: String,
    pub rmse: Vec<f64>,
    pub correlation: Vec<Option<f64>>,
}

impl UtteranceMetrics {
    /// `pred` and `reference` are `frames x channels` in millimetres.
    pub fn compute(utterance: &str, speaker: &str, pred: &Matrix, reference: &Matrix) -> Result<Self> {
        if pred.rows() != reference.rows() || pred.cols() != reference.cols() {
            return Err(Error::Shape(format!(
                "utterance {utterance}: prediction is {}x{}, reference is {}x{}",
                pred.rows(),
                pred.cols(),
                reference.rows(),
                reference.cols()
            )));
        }
        let mut rmse_v = Vec::with_capacity(pred.cols());
        let mut corr_v = Vec::with_capacity(pred.cols());
        for c in 0..pred.cols() {
            let (p, r) = (pred.column(c), reference.column(c));
            rmse_v.push(rmse(&p, &r).map_err(|e| Error::InvalidInput(format!("utterance {utterance}: {e}")))?);
            corr_v.push(correlation(&p, &r).map_err(|e| Error::InvalidInput(format!("utterance {utterance}: {e}")))?);
        }
        Ok(Self {
            utterance: utterance.to_string(),
            speaker: speaker.to_string(),
            rmse: rmse_v,
            correlation: corr_v,
        })
    }
}

/// One report column: a speaker grouping with per-channel means.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupRow {
    pub name: String,
    pub speakers: usize,
    pub utterances: usize,
    pub rmse: Vec<Option<f64>>,
    pub correlation: Vec<Option<f64>>,
}

impl GroupRow {
    pub fn mean_rmse(&self) -> Option<f64> {
        mean_present(&self.rmse)
    }

    pub fn mean_correlation(&self) -> Option<f64> {
        mean_present(&self.correlation)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub channels: Vec<String>,
    pub groups: Vec<GroupRow>,
    /// Values excluded from means (constant channels), one line each.
    pub diagnostics: Vec<String>,
}

/// One machine-readable cell of a report.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRecord {
    pub group: String,
    pub channel: String,
    pub metric: &'static str,
    pub value: Option<f64>,
}

fn mean_present(values: &[Option<f64>]) -> Option<f64> {
    let present: Vec<f64> = values.iter().flatten().copied().collect();
    if present.is_empty() {
        None
    } else {
        Some(present.iter().sum::<f64>() / present.len() as f64)
    }
}

fn mean_rows(rows: &[&[Option<f64>]], channels: usize) -> Vec<Option<f64>> {
    (0..channels)
        .map(|c| mean_present(&rows.iter().map(|r| r[c]).collect::<Vec<_>>()))
        .collect()
}

/// Averages utterance scores per speaker, then speakers per group. Groups
/// are `all` plus `L1`, `L2`, `male` and `female` when any speaker carries
/// the corresponding label.
pub fn aggregate(channels: &[String], utterances: &[UtteranceMetrics], speakers: &[SpeakerInfo]) -> Result<MetricReport> {
    let info: BTreeMap<&str, &SpeakerInfo> = speakers.iter().map(|s| (s.id.as_str(), s)).collect();
    let n_ch = channels.len();
    let mut diagnostics = Vec::new();
    let mut by_speaker: BTreeMap<&str, Vec<&UtteranceMetrics>> = BTreeMap::new();
    for u in utterances {
        if !info.contains_key(u.speaker.as_str()) {
            return Err(Error::InvalidInput(format!(
                "utterance {} references unknown speaker {}",
                u.utterance, u.speaker
            )));
        }
        if u.rmse.len() != n_ch || u.correlation.len() != n_ch {
            return Err(Error::Shape(format!(
                "utterance {} has {} channels, report expects {n_ch}",
                u.utterance,
                u.rmse.len()
            )));
        }
        for (c, v) in u.correlation.iter().enumerate() {
            if v.is_none() {
                diagnostics.push(format!(
                    "utterance {} channel {}: constant sequence, correlation excluded",
                    u.utterance, channels[c]
                ));
            }
        }
        by_speaker.entry(u.speaker.as_str()).or_default().push(u);
    }
    diagnostics.sort();
    for utts in by_speaker.values_mut() {
        utts.sort_by(|a, b| a.utterance.cmp(&b.utterance));
    }

    struct SpeakerMeans<'a> {
        info: &'a SpeakerInfo,
        utterances: usize,
        rmse: Vec<Option<f64>>,
        correlation: Vec<Option<f64>>,
    }
    let speaker_means: Vec<SpeakerMeans> = by_speaker
        .iter()
        .map(|(id, utts)| {
            let rmse_rows: Vec<Vec<Option<f64>>> = utts.iter().map(|u| u.rmse.iter().map(|&v| Some(v)).collect()).collect();
            let rmse_refs: Vec<&[Option<f64>]> = rmse_rows.iter().map(Vec::as_slice).collect();
            let corr_refs: Vec<&[Option<f64>]> = utts.iter().map(|u| u.correlation.as_slice()).collect();
            SpeakerMeans {
                info: info[id],
                utterances: utts.len(),
                rmse: mean_rows(&rmse_refs, n_ch),
                correlation: mean_rows(&corr_refs, n_ch),
            }
        })
        .collect();

    let has_group = speakers.iter().any(|s| s.group.is_some());
    let has_gender = speakers.iter().any(|s| s.gender.is_some());
    let mut selectors: Vec<(String, Box<dyn Fn(&SpeakerInfo) -> bool>)> = vec![("all".into(), Box::new(|_| true))];
    if has_group {
        selectors.push(("L1".into(), Box::new(|s| s.group == Some(LanguageGroup::L1))));
        selectors.push(("L2".into(), Box::new(|s| s.group == Some(LanguageGroup::L2))));
    }
    if has_gender {
        selectors.push(("male".into(), Box::new(|s| s.gender == Some(Gender::Male))));
        selectors.push(("female".into(), Box::new(|s| s.gender == Some(Gender::Female))));
    }
    let groups = selectors
        .into_iter()
        .map(|(name, pick)| {
            let members: Vec<&SpeakerMeans> = speaker_means.iter().filter(|s| pick(s.info)).collect();
            let rmse_refs: Vec<&[Option<f64>]> = members.iter().map(|s| s.rmse.as_slice()).collect();
            let corr_refs: Vec<&[Option<f64>]> = members.iter().map(|s| s.correlation.as_slice()).collect();
            GroupRow {
                name,
                speakers: members.len(),
                utterances: members.iter().map(|s| s.utterances).sum(),
                rmse: mean_rows(&rmse_refs, n_ch),
                correlation: mean_rows(&corr_refs, n_ch),
            }
        })
        .collect();
    Ok(MetricReport {
        channels: channels.to_vec(),
        groups,
        diagnostics,
    })
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.digits$}"))
}

impl MetricReport {
    pub fn group(&self, name: &str) -> Option<&GroupRow> {
        self.groups.iter().find(|g| g.name == name)
    }

    /// `group,channel,rmse_mm,correlation`, one row per channel and a
    /// `MEAN` row per group.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("group,channel,rmse_mm,correlation\n");
        let cell = |v: Option<f64>| v.map_or_else(String::new, |x| format!("{x}"));
        for g in &self.groups {
            for (c, name) in self.channels.iter().enumerate() {
                let _ = writeln!(out, "{},{},{},{}", g.name, name, cell(g.rmse[c]), cell(g.correlation[c]));
            }
            let _ = writeln!(out, "{},MEAN,{},{}", g.name, cell(g.mean_rmse()), cell(g.mean_correlation()));
        }
        out
    }

    /// Aligned text: one correlation block and one RMSE block, channels as
    /// rows, groups as columns.
    pub fn to_text(&self, paper_reference: bool) -> String {
        let mut out = String::new();
        let label_w = self.channels.iter().map(String::len).max().unwrap_or(4).max(8);
        let col_w = self.groups.iter().map(|g| g.name.len()).max().unwrap_or(3).max(8);
        for (title, pick, digits) in [
            ("CORRELATION", 0usize, 3usize),
            ("RMSE (mm)", 1, 3),
        ] {
            let _ = writeln!(out, "{title}");
            let _ = write!(out, "{:<label_w$}", "channel");
            for g in &self.groups {
                let _ = write!(out, "  {:>col_w$}", g.name);
            }
            if paper_reference {
                let _ = write!(out, "  {:>col_w$}", "published");
            }
            out.push('\n');
            for (c, name) in self.channels.iter().enumerate() {
                let _ = write!(out, "{name:<label_w$}");
                for g in &self.groups {
                    let v = if pick == 0 { g.correlation[c] } else { g.rmse[c] };
                    let _ = write!(out, "  {:>col_w$}", fmt_opt(v, digits));
                }
                if paper_reference {
                    let table = if pick == 0 { &PUBLISHED_CORRELATION } else { &PUBLISHED_RMSE_MM };
                    let _ = write!(out, "  {:>col_w$}", table.get(c).map_or("".into(), |v| format!("{v:.2}")));
                }
                out.push('\n');
            }
            let _ = write!(out, "{:<label_w$}", "MEAN");
            for g in &self.groups {
                let v = if pick == 0 { g.mean_correlation() } else { g.mean_rmse() };
                let _ = write!(out, "  {:>col_w$}", fmt_opt(v, digits));
            }
            if paper_reference {
                let v = if pick == 0 { PUBLISHED_MEAN_CORRELATION } else { PUBLISHED_MEAN_RMSE_MM };
                let _ = write!(out, "  {:>col_w$}", format!("{v:.2}"));
            }
            out.push_str("\n\n");
        }
        let _ = write!(out, "speakers:");
        for g in &self.groups {
            let _ = write!(out, " {}={}", g.name, g.speakers);
        }
        out.push('\n');
        if paper_reference {
            let _ = writeln!(
                out,
                "published reference means: correlation {PUBLISHED_MEAN_CORRELATION:.2}, RMSE {PUBLISHED_MEAN_RMSE_MM:.2} mm"
            );
        }
        for d in &self.diagnostics {
            let _ = writeln!(out, "note: {d}");
        }
        out
    }

    /// One record per (group, channel, metric), including `MEAN` rows.
    pub fn records(&self) -> Vec<SummaryRecord> {
        let mut out = Vec::new();
        for g in &self.groups {
            for (c, name) in self.channels.iter().enumerate() {
                out.push(SummaryRecord {
                    group: g.name.clone(),
                    channel: name.clone(),
                    metric: "correlation",
                    value: g.correlation[c],
                });
                out.push(SummaryRecord {
                    group: g.name.clone(),
                    channel: name.clone(),
                    metric: "rmse_mm",
                    value: g.rmse[c],
                });
            }
            out.push(SummaryRecord {
                group: g.name.clone(),
                channel: "MEAN".into(),
                metric: "correlation",
                value: g.mean_correlation(),
            });
            out.push(SummaryRecord {
                group: g.name.clone(),
                channel: "MEAN".into(),
                metric: "rmse_mm",
                value: g.mean_rmse(),
            });
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pearson_oracle(a: &[f64], b: &[f64]) -> f64 {
        // Textbook sums-of-products form.
        let n = a.len() as f64;
        let sa: f64 = a.iter().sum();
        let sb: f64 = b.iter().sum();
        let sab: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let saa: f64 = a.iter().map(|x| x * x).sum();
        let sbb: f64 = b.iter().map(|x| x * x).sum();
        (n * sab - sa * sb) / ((n * saa - sa * sa).sqrt() * (n * sbb - sb * sb).sqrt())
    }

    #[test]
    fn rmse_hand_value() {
        assert!((rmse(&[0.0, 0.0], &[3.0, 4.0]).unwrap() - 12.5f64.sqrt()).abs() < 1e-9);
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!(rmse(&[], &[]).is_err());
        assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn correlation_edge_cases() {
        let r = [1.0, 3.0, 2.0, 5.0];
        assert!((correlation(&r, &r).unwrap().unwrap() - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = r.iter().map(|v| -v).collect();
        assert!((correlation(&neg, &r).unwrap().unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(correlation(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0]).unwrap(), None);
        assert!(correlation(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn published_means_match_channels() {
        let c: f64 = PUBLISHED_CORRELATION.iter().sum::<f64>() / 10.0;
        let r: f64 = PUBLISHED_RMSE_MM.iter().sum::<f64>() / 10.0;
        assert!((c - PUBLISHED_MEAN_CORRELATION).abs() < 0.006);
        assert!((r - PUBLISHED_MEAN_RMSE_MM).abs() < 0.006);
    }

    proptest! {
        #[test]
        fn correlation_matches_oracle(v in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 3..60)) {
            let (a, b): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
            let oracle = pearson_oracle(&a, &b);
            prop_assume!(oracle.is_finite());
            let got = correlation(&a, &b).unwrap().unwrap();
            prop_assert!((got - oracle).abs() < 1e-9);
        }

        #[test]
        fn correlation_affine_invariance(
            v in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 3..60),
            scale in 0.1f64..10.0,
            shift in -5.0f64..5.0,
        ) {
            let (a, b): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
            let Some(base) = correlation(&a, &b).unwrap() else { return Ok(()) };
            let moved: Vec<f64> = a.iter().map(|x| scale * x + shift).collect();
            let got = correlation(&moved, &b).unwrap().unwrap();
            prop_assert!((got - base).abs() < 1e-9);
            let flipped: Vec<f64> = a.iter().map(|x| -x).collect();
            prop_assert!((correlation(&flipped, &b).unwrap().unwrap() + base).abs() < 1e-9);
        }

        #[test]
        fn rmse_triangle_and_translation(
            v in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0, -10.0f64..10.0), 1..40),
            shift in -5.0f64..5.0,
        ) {
            let a: Vec<f64> = v.iter().map(|t| t.0).collect();
            let b: Vec<f64> = v.iter().map(|t| t.1).collect();
            let c: Vec<f64> = v.iter().map(|t| t.2).collect();
            prop_assert!(rmse(&a, &c).unwrap() <= rmse(&a, &b).unwrap() + rmse(&b, &c).unwrap() + 1e-12);
            let a2: Vec<f64> = a.iter().map(|x| x + shift).collect();
            let b2: Vec<f64> = b.iter().map(|x| x + shift).collect();
            prop_assert!((rmse(&a2, &b2).unwrap() - rmse(&a, &b).unwrap()).abs() < 1e-9);
        }
    }

    fn utt(id: &str, speaker: &str, rmse: f64, corr: f64) -> UtteranceMetrics {
        UtteranceMetrics {
            utterance: id.into(),
            speaker: speaker.into(),
            rmse: vec![rmse, rmse * 2.0],
            correlation: vec![Some(corr), Some(corr)],
        }
    }

    fn speaker(id: &str, group: Option<LanguageGroup>, gender: Option<Gender>) -> SpeakerInfo {
        SpeakerInfo {
            id: id.into(),
            group,
            gender,
        }
    }

    fn two_channels() -> Vec<String> {
        vec!["VT1".into(), "VT2".into()]
    }

    #[test]
    fn single_utterance_report_is_raw() {
        let u = utt("u1", "s1", 1.5, 0.7);
        let report = aggregate(&two_channels(), &[u.clone()], &[speaker("s1", None, None)]).unwrap();
        assert_eq!(report.groups.len(), 1);
        let all = report.group("all").unwrap();
        assert_eq!(all.rmse, vec![Some(1.5), Some(3.0)]);
        assert_eq!(all.correlation, u.correlation);
    }

    #[test]
    fn speakers_weigh_equally() {
        let utts = [
            utt("a1", "a", 1.0, 0.8),
            utt("a2", "a", 1.0, 0.8),
            utt("a3", "a", 1.0, 0.8),
            utt("b1", "b", 3.0, 0.9),
        ];
        let speakers = [
            speaker("a", Some(LanguageGroup::L1), Some(Gender::Female)),
            speaker("b", Some(LanguageGroup::L2), Some(Gender::Male)),
        ];
        let report = aggregate(&two_channels(), &utts, &speakers).unwrap();
        let all = report.group("all").unwrap();
        assert!((all.correlation[0].unwrap() - 0.85).abs() < 1e-12);
        assert!((all.rmse[0].unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(report.group("L2").unwrap().rmse[0], Some(3.0));
        assert_eq!(report.group("female").unwrap().speakers, 1);
        let mean = all.mean_rmse().unwrap();
        assert!((mean - (all.rmse[0].unwrap() + all.rmse[1].unwrap()) / 2.0).abs() < 1e-9);
    }

    #[test]
    fn aggregation_ignores_order() {
        let utts = vec![utt("a1", "a", 1.0, 0.5), utt("b1", "b", 2.0, 0.6), utt("a2", "a", 4.0, 0.9)];
        let speakers = vec![speaker("a", None, None), speaker("b", None, None)];
        let fwd = aggregate(&two_channels(), &utts, &speakers).unwrap();
        let mut rev_u = utts.clone();
        rev_u.reverse();
        let mut rev_s = speakers.clone();
        rev_s.reverse();
        assert_eq!(fwd, aggregate(&two_channels(), &rev_u, &rev_s).unwrap());
    }

    #[test]
    fn unknown_speaker_and_constant_channels() {
        let err = aggregate(&two_channels(), &[utt("u", "ghost", 1.0, 0.5)], &[]).unwrap_err();
        assert!(err.to_string().contains("ghost"));
        let mut u = utt("u", "s", 1.0, 0.5);
        u.correlation[1] = None;
        let report = aggregate(&two_channels(), &[u], &[speaker("s", None, None)]).unwrap();
        assert_eq!(report.group("all").unwrap().correlation[1], None);
        assert_eq!(report.group("all").unwrap().mean_correlation(), Some(0.5));
        assert_eq!(report.diagnostics.len(), 1);
    }

    #[test]
    fn group_columns_follow_labels() {
        let report = aggregate(&two_channels(), &[utt("u", "s", 1.0, 0.5)], &[speaker("s", None, None)]).unwrap();
        let text = report.to_text(false);
        assert!(!text.contains("L1") && !text.contains("male"));
        let labelled = aggregate(
            &two_channels(),
            &[utt("u", "s", 1.0, 0.5)],
            &[speaker("s", Some(LanguageGroup::L1), None)],
        )
        .unwrap();
        let names: Vec<&str> = labelled.groups.iter().map(|g| g.name.as_str()).collect();
        assert_eq!(names, ["all", "L1", "L2"]);
        assert_eq!(labelled.group("L2").unwrap().rmse, vec![None, None]);
    }

    #[test]
    fn report_formats() {
        let report = aggregate(&two_channels(), &[utt("u", "s", 1.0, 0.5)], &[speaker("s", None, None)]).unwrap();
        let csv = report.to_csv();
        assert!(csv.starts_with("group,channel,rmse_mm,correlation\n"));
        assert!(csv.contains("all,VT2,2,0.5"));
        assert!(csv.contains("all,MEAN,1.5,0.5"));
        assert_eq!(report.records().len(), 6);
        assert!(report.to_text(true).contains("0.83"));
    }
}
