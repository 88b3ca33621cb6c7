//! Accuracy metrics and Clarke Error Grid analysis over paired
//! (reference, predicted) glucose readings.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, GlucoseKind, Mode, Sex, Split};
use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::regress::model::TrainedModel;

/// Descriptive tags carried alongside each reading.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PointTags {
    pub id: Option<String>,
    pub sex: Option<Sex>,
    pub mode: Option<Mode>,
    pub split: Option<Split>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedReadings {
    refs: Vec<f64>,
    preds: Vec<f64>,
    tags: Vec<PointTags>,
}

impl PairedReadings {
    pub fn new(refs: Vec<f64>, preds: Vec<f64>) -> Result<Self> {
        let tags = vec![PointTags::default(); refs.len()];
        Self::with_tags(refs, preds, tags)
    }

    pub fn with_tags(refs: Vec<f64>, preds: Vec<f64>, tags: Vec<PointTags>) -> Result<Self> {
        if refs.len() != preds.len() || refs.len() != tags.len() {
            return Err(Error::InvalidInput(format!(
                "{} references, {} predictions, {} tags",
                refs.len(),
                preds.len(),
                tags.len()
            )));
        }
        if refs.is_empty() {
            return Err(Error::InvalidInput("no readings".into()));
        }
        if let Some(i) = refs.iter().position(|r| !r.is_finite()) {
            return Err(Error::NonFinite(format!("reference {i}")));
        }
        if let Some(i) = refs.iter().position(|r| *r <= 0.0) {
            return Err(Error::InvalidInput(format!(
                "reference {i} must be positive, got {}",
                refs[i]
            )));
        }
        if let Some(i) = preds.iter().position(|p| !p.is_finite()) {
            return Err(Error::NonFinite(format!("prediction {i}")));
        }
        Ok(Self { refs, preds, tags })
    }

    pub fn len(&self) -> usize {
        self.refs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.refs.is_empty()
    }

    pub fn refs(&self) -> &[f64] {
        &self.refs
    }

    pub fn preds(&self) -> &[f64] {
        &self.preds
    }

    pub fn tags(&self) -> &[PointTags] {
        &self.tags
    }

    fn pairs(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.refs.iter().copied().zip(self.preds.iter().copied())
    }

    /// Readings whose tag maps to the same group key, keyed by that group.
    pub fn group_by(&self, by: GroupBy) -> BTreeMap<String, PairedReadings> {
        let mut groups: BTreeMap<String, (Vec<f64>, Vec<f64>, Vec<PointTags>)> = BTreeMap::new();
        for ((r, p), t) in self.pairs().zip(&self.tags) {
            let key = by.key(t);
            let g = groups.entry(key).or_default();
            g.0.push(r);
            g.1.push(p);
            g.2.push(t.clone());
        }
        groups
            .into_iter()
            .map(|(k, (r, p, t))| (k, PairedReadings { refs: r, preds: p, tags: t }))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupBy {
    Sex,
    Mode,
}

impl GroupBy {
    fn key(&self, t: &PointTags) -> String {
        match self {
            GroupBy::Sex => t.sex.unwrap_or(Sex::Unspecified).to_string(),
            GroupBy::Mode => t.mode.map(|m| m.to_string()).unwrap_or_else(|| "unspecified".into()),
        }
    }
}

impl std::str::FromStr for GroupBy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sex" => Ok(GroupBy::Sex),
            "mode" => Ok(GroupBy::Mode),
            other => Err(Error::InvalidInput(format!("cannot group by `{other}`"))),
        }
    }
}

/// Mean absolute relative difference, percent.
pub fn mard(p: &PairedReadings) -> f64 {
    let n = p.len() as f64;
    100.0 / n * p.pairs().map(|(r, y)| (y - r).abs() / r).sum::<f64>()
}

/// Total absolute error relative to total reference, percent.
pub fn avge(p: &PairedReadings) -> f64 {
    let abs: f64 = p.pairs().map(|(r, y)| (y - r).abs()).sum();
    let total: f64 = p.refs.iter().sum();
    100.0 * abs / total
}

/// Mean absolute deviation, mg/dl.
pub fn mad(p: &PairedReadings) -> f64 {
    p.pairs().map(|(r, y)| (y - r).abs()).sum::<f64>() / p.len() as f64
}

pub fn rmse(p: &PairedReadings) -> f64 {
    (p.pairs().map(|(r, y)| (y - r) * (y - r)).sum::<f64>() / p.len() as f64).sqrt()
}

fn constant(v: &[f64]) -> bool {
    v.iter().all(|x| *x == v[0])
}

/// Sample correlation between references and predictions.
pub fn pearson_r(p: &PairedReadings) -> Result<f64> {
    if p.len() < 2 || constant(&p.refs) || constant(&p.preds) {
        return Err(Error::InvalidInput(
            "Pearson correlation needs variance in both references and predictions".into(),
        ));
    }
    let n = p.len() as f64;
    let mr = p.refs.iter().sum::<f64>() / n;
    let mp = p.preds.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (r, y) in p.pairs() {
        sxy += (r - mr) * (y - mp);
        sxx += (r - mr) * (r - mr);
        syy += (y - mp) * (y - mp);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::InvalidInput("zero variance in Pearson correlation".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n: usize,
    pub mard_pct: f64,
    pub avge_pct: f64,
    pub mad_mgdl: f64,
    pub rmse_mgdl: f64,
    pub r_pearson: f64,
    pub r_squared: f64,
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str = "n,mard_pct,avge_pct,mad_mgdl,rmse_mgdl,r_pearson,r_squared";

    pub fn compute(p: &PairedReadings) -> Result<Self> {
        let r = pearson_r(p)?;
        Ok(Self {
            n: p.len(),
            mard_pct: mard(p),
            avge_pct: avge(p),
            mad_mgdl: mad(p),
            rmse_mgdl: rmse(p),
            r_pearson: r,
            r_squared: r * r,
        })
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.n,
            self.mard_pct,
            self.avge_pct,
            self.mad_mgdl,
            self.rmse_mgdl,
            self.r_pearson,
            self.r_squared
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Zone {
    A,
    B,
    C,
    D,
    E,
}

impl Zone {
    pub const ALL: [Zone; 5] = [Zone::A, Zone::B, Zone::C, Zone::D, Zone::E];

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Zone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

/// Clarke zone of one reading. Rules are tried in the order A, E, C, D and
/// anything left over is B; all boundaries are inclusive. Inequalities are
/// scaled to integer coefficients so integer readings classify exactly.
pub fn ceg_zone(reference: f64, pred: f64) -> Result<Zone> {
    if !reference.is_finite() || !pred.is_finite() {
        return Err(Error::NonFinite("Clarke grid input".into()));
    }
    if reference <= 0.0 || pred < 0.0 {
        return Err(Error::InvalidInput(format!(
            "Clarke grid needs reference > 0 and prediction >= 0, got ({reference}, {pred})"
        )));
    }
    let (r, p) = (reference, pred);
    // |p − r| ≤ 0.2 r
    if (r < 70.0 && p < 70.0) || 5.0 * (p - r).abs() <= r {
        return Ok(Zone::A);
    }
    if (r >= 180.0 && p <= 70.0) || (r <= 70.0 && p >= 180.0) {
        return Ok(Zone::E);
    }
    // p ≤ (7/5) r − 182
    if ((70.0..=290.0).contains(&r) && p >= r + 110.0)
        || ((130.0..=180.0).contains(&r) && 5.0 * p <= 7.0 * r - 910.0)
    {
        return Ok(Zone::C);
    }
    // r ≤ 175/3 and p ≥ (6/5) r
    let in_band = (70.0..=180.0).contains(&p);
    if (r >= 240.0 && in_band)
        || (3.0 * r <= 175.0 && in_band)
        || (3.0 * r >= 175.0 && r <= 70.0 && 5.0 * p >= 6.0 * r)
    {
        return Ok(Zone::D);
    }
    Ok(Zone::B)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CegResult {
    pub zones: Vec<Zone>,
    /// Counts for zones A through E.
    pub histogram: [usize; 5],
    pub percentages: [f64; 5],
}

impl CegResult {
    pub fn count(&self, z: Zone) -> usize {
        self.histogram[z.index()]
    }

    pub fn percent(&self, z: Zone) -> f64 {
        self.percentages[z.index()]
    }

    pub fn n(&self) -> usize {
        self.zones.len()
    }
}

pub fn ceg_analyze(p: &PairedReadings) -> Result<CegResult> {
    let zones = p
        .pairs()
        .map(|(r, y)| ceg_zone(r, y))
        .collect::<Result<Vec<_>>>()?;
    let mut histogram = [0usize; 5];
    for z in &zones {
        histogram[z.index()] += 1;
    }
    let n = zones.len() as f64;
    let percentages = histogram.map(|c| 100.0 * c as f64 / n);
    Ok(CegResult {
        zones,
        histogram,
        percentages,
    })
}

/// One CEG result per group (e.g. per sex, as separate panels).
pub fn ceg_by_group(p: &PairedReadings, by: GroupBy) -> Result<BTreeMap<String, CegResult>> {
    p.group_by(by)
        .iter()
        .map(|(k, g)| Ok((k.clone(), ceg_analyze(g)?)))
        .collect()
}

/// Predictions of one model on one dataset with every metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub model: String,
    pub kind: GlucoseKind,
    pub metrics: MetricsReport,
    pub ceg: CegResult,
    pub readings: PairedReadings,
    /// Predictions that hit the output clamp.
    pub clamped: usize,
}

pub fn evaluate(model: &TrainedModel, data: &Dataset, kind: GlucoseKind) -> Result<Evaluation> {
    evaluate_with(model, data, kind, Execution::default())
}

pub fn evaluate_with(
    model: &TrainedModel,
    data: &Dataset,
    kind: GlucoseKind,
    exec: Execution,
) -> Result<Evaluation> {
    let usable: Vec<_> = data
        .samples()
        .iter()
        .filter_map(|s| s.reference(kind).map(|g| (s, g.value_mgdl())))
        .collect();
    if usable.is_empty() {
        return Err(Error::InvalidInput(format!("no samples carry a {kind} reference")));
    }
    let preds = par::map_slice(&usable, exec, |(s, _)| model.predict(&s.voltages))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let clamped = preds.iter().filter(|p| p.clamped).count();
    let refs = usable.iter().map(|(_, r)| *r).collect();
    let tags = usable
        .iter()
        .map(|(s, _)| PointTags {
            id: Some(s.id.clone()),
            sex: Some(s.sex),
            mode: s.mode,
            split: data.label(&s.id),
        })
        .collect();
    let readings = PairedReadings::with_tags(refs, preds.iter().map(|p| p.value_mgdl).collect(), tags)?;
    Ok(Evaluation {
        model: model.metadata.model.clone(),
        kind,
        metrics: MetricsReport::compute(&readings)?,
        ceg: ceg_analyze(&readings)?,
        readings,
        clamped,
    })
}
