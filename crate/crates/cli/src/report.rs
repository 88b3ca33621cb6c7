use std::collections::BTreeMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use iglu_core::evaluation::{CegResult, Evaluation, MetricsReport, PairedReadings, Zone};
use iglu_core::GlucoseKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoneSummary {
    pub counts: BTreeMap<Zone, usize>,
    pub percent: BTreeMap<Zone, f64>,
}

impl From<&CegResult> for ZoneSummary {
    fn from(c: &CegResult) -> Self {
        Self {
            counts: Zone::ALL.iter().map(|z| (*z, c.count(*z))).collect(),
            percent: Zone::ALL.iter().map(|z| (*z, c.percent(*z))).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub n: usize,
    /// Absent when the group is too small or constant for a correlation.
    pub metrics: Option<MetricsReport>,
    pub zones: ZoneSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub id: Option<String>,
    pub reference_mgdl: f64,
    pub predicted_mgdl: f64,
    pub zone: Zone,
}

/// Document written to `report.json` by `validate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub model: String,
    pub kind: GlucoseKind,
    pub split: String,
    pub metrics: MetricsReport,
    pub zones: ZoneSummary,
    pub clamped: usize,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub groups: BTreeMap<String, GroupSummary>,
    pub points: Vec<Point>,
}

impl ValidationReport {
    pub fn new(e: &Evaluation, split: &str, groups: BTreeMap<String, (PairedReadings, CegResult)>) -> Self {
        let points = e
            .readings
            .refs()
            .iter()
            .zip(e.readings.preds())
            .zip(e.readings.tags())
            .zip(&e.ceg.zones)
            .map(|(((r, p), t), z)| Point {
                id: t.id.clone(),
                reference_mgdl: *r,
                predicted_mgdl: *p,
                zone: *z,
            })
            .collect();
        let groups = groups
            .into_iter()
            .map(|(k, (p, c))| {
                (
                    k,
                    GroupSummary {
                        n: p.len(),
                        metrics: MetricsReport::compute(&p).ok(),
                        zones: ZoneSummary::from(&c),
                    },
                )
            })
            .collect();
        Self {
            model: e.model.clone(),
            kind: e.kind,
            split: split.to_owned(),
            metrics: e.metrics.clone(),
            zones: ZoneSummary::from(&e.ceg),
            clamped: e.clamped,
            groups,
            points,
        }
    }

    /// Per-reading table.
    pub fn points_csv(&self) -> String {
        let mut s = String::from("id,reference_mgdl,predicted_mgdl,zone\n");
        for p in &self.points {
            let _ = writeln!(
                s,
                "{},{},{},{}",
                p.id.as_deref().unwrap_or(""),
                p.reference_mgdl,
                p.predicted_mgdl,
                p.zone
            );
        }
        s
    }
}

const COLUMNS: [&str; 15] = [
    "model", "kind", "split", "n", "mARD %", "AvgE %", "MAD mg/dl", "RMSE mg/dl", "R", "R²", "A %", "B %", "C %",
    "D %", "E %",
];

fn row(r: &ValidationReport) -> Vec<String> {
    let m = &r.metrics;
    let mut cells = vec![
        r.model.clone(),
        r.kind.to_string(),
        r.split.clone(),
        m.n.to_string(),
        format!("{:.2}", m.mard_pct),
        format!("{:.2}", m.avge_pct),
        format!("{:.2}", m.mad_mgdl),
        format!("{:.2}", m.rmse_mgdl),
        format!("{:.3}", m.r_pearson),
        format!("{:.3}", m.r_squared),
    ];
    for z in Zone::ALL {
        cells.push(format!("{:.1}", r.zones.percent.get(&z).copied().unwrap_or(0.0)));
    }
    cells
}

pub fn markdown(reports: &[ValidationReport]) -> String {
    let mut s = format!("| {} |\n", COLUMNS.join(" | "));
    let _ = writeln!(s, "|{}", "---|".repeat(COLUMNS.len()));
    for r in reports {
        let _ = writeln!(s, "| {} |", row(r).join(" | "));
    }
    s
}

pub fn csv(reports: &[ValidationReport]) -> String {
    let header = "model,kind,split,n,mard_pct,avge_pct,mad_mgdl,rmse_mgdl,r_pearson,r_squared,zone_a_pct,zone_b_pct,zone_c_pct,zone_d_pct,zone_e_pct";
    let mut s = format!("{header}\n");
    for r in reports {
        let _ = writeln!(s, "{}", row(r).join(","));
    }
    s
}
