//! Domain types, the dataset container, CSV interchange and stratified splitting.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column order of the interchange CSV.
pub const CSV_HEADER: [&str; 10] = [
    "id",
    "ch1_mv",
    "ch2_mv",
    "ch3_mv",
    "capillary_mgdl",
    "serum_mgdl",
    "mode",
    "sex",
    "age",
    "split",
];

/// Detector output of the three optical channels, in millivolts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelVoltages {
    pub ch1_mv: f64,
    pub ch2_mv: f64,
    pub ch3_mv: f64,
}

impl ChannelVoltages {
    pub fn new(ch1_mv: f64, ch2_mv: f64, ch3_mv: f64) -> Self {
        Self {
            ch1_mv,
            ch2_mv,
            ch3_mv,
        }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.ch1_mv, self.ch2_mv, self.ch3_mv]
    }

    pub fn from_array(v: [f64; 3]) -> Self {
        Self::new(v[0], v[1], v[2])
    }

    pub fn is_finite(&self) -> bool {
        self.as_array().iter().all(|v| v.is_finite())
    }

    /// Checks every channel is finite and inside `[0, fsr_mv]`.
    pub fn validate(&self, fsr_mv: f64) -> Result<()> {
        for (i, v) in self.as_array().into_iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("channel {} voltage", i + 1)));
            }
            if !(0.0..=fsr_mv).contains(&v) {
                return Err(Error::InvalidInput(format!(
                    "channel {} voltage {v} mV outside ADC range [0, {fsr_mv}]",
                    i + 1
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GlucoseKind {
    Capillary,
    Serum,
}

impl GlucoseKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            GlucoseKind::Capillary => "capillary",
            GlucoseKind::Serum => "serum",
        }
    }
}

impl fmt::Display for GlucoseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GlucoseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "capillary" => Ok(GlucoseKind::Capillary),
            "serum" => Ok(GlucoseKind::Serum),
            other => Err(Error::InvalidInput(format!("unknown glucose kind `{other}`"))),
        }
    }
}

/// A positive, finite glucose concentration in mg/dl.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlucoseValue {
    value_mgdl: f64,
    kind: GlucoseKind,
}

impl GlucoseValue {
    pub fn new(value_mgdl: f64, kind: GlucoseKind) -> Result<Self> {
        if !value_mgdl.is_finite() {
            return Err(Error::NonFinite("glucose value".into()));
        }
        if value_mgdl <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "glucose must be positive, got {value_mgdl}"
            )));
        }
        Ok(Self { value_mgdl, kind })
    }

    pub fn value_mgdl(&self) -> f64 {
        self.value_mgdl
    }

    pub fn kind(&self) -> GlucoseKind {
        self.kind
    }
}

macro_rules! label_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(rename_all = "lowercase")]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(&self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($text => Ok($name::$variant),)+
                    other => Err(Error::InvalidInput(format!(
                        concat!("unknown ", stringify!($name), " `{}`"),
                        other
                    ))),
                }
            }
        }
    };
}

label_enum!(
    /// Measurement condition relative to meals.
    Mode { Fasting => "fasting", Postprandial => "postprandial", Random => "random" }
);
label_enum!(Sex { Male => "male", Female => "female", Unspecified => "unspecified" });
label_enum!(
    /// Partition a sample belongs to.
    Split { Calibration => "calibration", Validation => "validation", Testing => "testing" }
);

#[allow(clippy::derivable_impls)]
impl Default for Sex {
    fn default() -> Self {
        Sex::Unspecified
    }
}


/// One measurement: channel voltages plus reference glucose and demographics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub voltages: ChannelVoltages,
    pub capillary_mgdl: Option<f64>,
    pub serum_mgdl: Option<f64>,
    pub mode: Option<Mode>,
    pub sex: Sex,
    pub age_years: Option<u32>,
}

impl Sample {
    pub fn new(id: impl Into<String>, voltages: ChannelVoltages) -> Self {
        Self {
            id: id.into(),
            voltages,
            capillary_mgdl: None,
            serum_mgdl: None,
            mode: None,
            sex: Sex::Unspecified,
            age_years: None,
        }
    }

    pub fn reference(&self, kind: GlucoseKind) -> Option<GlucoseValue> {
        let v = match kind {
            GlucoseKind::Capillary => self.capillary_mgdl,
            GlucoseKind::Serum => self.serum_mgdl,
        }?;
        GlucoseValue::new(v, kind).ok()
    }

    pub fn has_reference(&self) -> bool {
        self.capillary_mgdl.is_some() || self.serum_mgdl.is_some()
    }

    /// Reference used for stratification: capillary when present, else serum.
    fn stratification_reference(&self) -> Option<f64> {
        self.capillary_mgdl.or(self.serum_mgdl)
    }

    fn check_references(&self) -> Result<()> {
        for (v, kind) in [
            (self.capillary_mgdl, GlucoseKind::Capillary),
            (self.serum_mgdl, GlucoseKind::Serum),
        ] {
            if let Some(v) = v {
                GlucoseValue::new(v, kind)?;
            }
        }
        Ok(())
    }
}

/// An ordered collection of samples with optional split labels.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    samples: Vec<Sample>,
    labels: BTreeMap<String, Split>,
}

impl Dataset {
    /// Builds an unlabeled dataset, rejecting duplicate ids.
    pub fn new(samples: Vec<Sample>) -> Result<Self> {
        Self::with_labels(samples, BTreeMap::new())
    }

    pub fn with_labels(samples: Vec<Sample>, labels: BTreeMap<String, Split>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(samples.len());
        for s in &samples {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::DuplicateId(s.id.clone()));
            }
            s.check_references()?;
        }
        for id in labels.keys() {
            if !seen.contains(id.as_str()) {
                return Err(Error::InvalidInput(format!(
                    "split label refers to unknown sample `{id}`"
                )));
            }
        }
        let d = Self { samples, labels };
        d.check_label_invariants()?;
        Ok(d)
    }

    fn check_label_invariants(&self) -> Result<()> {
        for s in &self.samples {
            match self.labels.get(&s.id) {
                Some(Split::Calibration) | Some(Split::Validation) if !s.has_reference() => {
                    return Err(Error::InvalidInput(format!(
                        "sample `{}` is labeled for calibration/validation but has no reference",
                        s.id
                    )));
                }
                Some(Split::Validation) if s.mode.is_none() => {
                    return Err(Error::InvalidInput(format!(
                        "validation sample `{}` has no measurement mode",
                        s.id
                    )));
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> &BTreeMap<String, Split> {
        &self.labels
    }

    pub fn label(&self, id: &str) -> Option<Split> {
        self.labels.get(id).copied()
    }

    pub fn has_labels(&self) -> bool {
        !self.labels.is_empty()
    }

    /// Samples carrying the given split label, in dataset order.
    pub fn split(&self, split: Split) -> impl Iterator<Item = &Sample> + '_ {
        self.samples
            .iter()
            .filter(move |s| self.labels.get(&s.id) == Some(&split))
    }

    /// A new dataset holding only the samples of one split (labels retained).
    pub fn subset(&self, split: Split) -> Dataset {
        let samples: Vec<Sample> = self.split(split).cloned().collect();
        let labels = samples.iter().map(|s| (s.id.clone(), split)).collect();
        Dataset { samples, labels }
    }

    /// `(voltages, reference)` pairs for samples carrying the requested reference kind.
    pub fn usable(&self, kind: GlucoseKind) -> Vec<(ChannelVoltages, f64)> {
        self.samples
            .iter()
            .filter_map(|s| s.reference(kind).map(|g| (s.voltages, g.value_mgdl())))
            .collect()
    }
}

fn parse_opt<T: FromStr>(field: &str) -> std::result::Result<Option<T>, T::Err> {
    if field.is_empty() {
        Ok(None)
    } else {
        field.parse().map(Some)
    }
}

fn parse_row(record: &csv::StringRecord, row: usize) -> Result<(Sample, Option<Split>)> {
    let err = |message: String| Error::Ingest { row, message };
    if record.len() != CSV_HEADER.len() {
        return Err(err(format!(
            "expected {} columns, found {}",
            CSV_HEADER.len(),
            record.len()
        )));
    }
    let field = |i: usize| record.get(i).unwrap_or("").trim();

    let id = field(0);
    if id.is_empty() {
        return Err(err("empty id".into()));
    }
    let mut ch = [0.0; 3];
    for (k, v) in ch.iter_mut().enumerate() {
        let text = field(1 + k);
        *v = text
            .parse::<f64>()
            .map_err(|_| err(format!("non-numeric voltage `{text}` in {}", CSV_HEADER[1 + k])))?;
        if !v.is_finite() || *v < 0.0 {
            return Err(err(format!("invalid voltage `{text}` in {}", CSV_HEADER[1 + k])));
        }
    }
    let mut refs = [None, None];
    for (k, slot) in refs.iter_mut().enumerate() {
        let text = field(4 + k);
        let v: Option<f64> = parse_opt(text)
            .map_err(|_| err(format!("non-numeric glucose `{text}` in {}", CSV_HEADER[4 + k])))?;
        if let Some(v) = v {
            if !v.is_finite() || v <= 0.0 {
                return Err(err(format!(
                    "glucose must be positive and finite, got `{text}` in {}",
                    CSV_HEADER[4 + k]
                )));
            }
        }
        *slot = v;
    }
    let mode = parse_opt::<Mode>(field(6)).map_err(|e| err(e.to_string()))?;
    let sex = parse_opt::<Sex>(field(7))
        .map_err(|e| err(e.to_string()))?
        .unwrap_or_default();
    let age_years = parse_opt::<u32>(field(8))
        .map_err(|_| err(format!("invalid age `{}`", field(8))))?;
    let split = parse_opt::<Split>(field(9)).map_err(|e| err(e.to_string()))?;

    let sample = Sample {
        id: id.to_string(),
        voltages: ChannelVoltages::from_array(ch),
        capillary_mgdl: refs[0],
        serum_mgdl: refs[1],
        mode,
        sex,
        age_years,
    };
    Ok((sample, split))
}

/// Reads a dataset from any CSV source following [`CSV_HEADER`].
pub fn read_csv<R: Read>(reader: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    let got: Vec<&str> = header.iter().map(str::trim).collect();
    if got != CSV_HEADER {
        return Err(Error::Ingest {
            row: 1,
            message: format!("unexpected header `{}`", got.join(",")),
        });
    }

    let mut samples = Vec::new();
    let mut labels = BTreeMap::new();
    let mut seen = HashSet::new();
    for (i, record) in rdr.records().enumerate() {
        // 1-based file line numbers; the header is line 1.
        let row = i + 2;
        let record = record?;
        let (sample, split) = parse_row(&record, row)?;
        if !seen.insert(sample.id.clone()) {
            return Err(Error::Ingest {
                row,
                message: format!("duplicate id `{}`", sample.id),
            });
        }
        if let Some(split) = split {
            labels.insert(sample.id.clone(), split);
        }
        samples.push(sample);
    }
    Dataset::with_labels(samples, labels)
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file)
}

fn fmt_opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// Writes a dataset as CSV. Floats use the shortest representation that
/// parses back to the identical value.
pub fn write_csv<W: Write>(d: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().from_writer(writer);
    w.write_record(CSV_HEADER)?;
    for s in d.samples() {
        w.write_record([
            s.id.clone(),
            s.voltages.ch1_mv.to_string(),
            s.voltages.ch2_mv.to_string(),
            s.voltages.ch3_mv.to_string(),
            fmt_opt(s.capillary_mgdl),
            fmt_opt(s.serum_mgdl),
            fmt_opt(s.mode),
            s.sex.to_string(),
            fmt_opt(s.age_years),
            fmt_opt(d.label(&s.id)),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

pub fn export_csv(d: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(d, file).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

/// Target fractions for [`split_dataset`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub calibration: f64,
    pub validation: f64,
    pub testing: f64,
}

impl SplitFractions {
    pub fn new(calibration: f64, validation: f64, testing: f64) -> Self {
        Self {
            calibration,
            validation,
            testing,
        }
    }

    fn as_array(&self) -> [f64; 3] {
        [self.calibration, self.validation, self.testing]
    }

    fn validate(&self) -> Result<()> {
        let f = self.as_array();
        if f.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::InvalidInput(format!(
                "split fractions must be nonnegative, got {f:?}"
            )));
        }
        let sum: f64 = f.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "split fractions must sum to 1, got {sum}"
            )));
        }
        Ok(())
    }
}

const SPLIT_ORDER: [Split; 3] = [Split::Calibration, Split::Validation, Split::Testing];

/// Minimum size of each glucose tertile stratum.
pub const MIN_STRATUM: usize = 3;

/// Largest-remainder apportionment of `n` seats by `weights` (which sum to 1).
fn apportion(n: usize, weights: &[f64; 3]) -> [usize; 3] {
    let quotas = weights.map(|w| w * n as f64);
    let mut seats = quotas.map(|q| q.floor() as usize);
    let mut left = n.saturating_sub(seats.iter().sum());
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &s in order.iter().cycle() {
        if left == 0 {
            break;
        }
        if weights[s] > 0.0 {
            seats[s] += 1;
            left -= 1;
        }
    }
    seats
}

/// Per-stratum allocation whose cells stay within one sample of the exact
/// share while the column totals hit the global apportionment.
fn allocate(strata: &[usize], fractions: &[f64; 3]) -> Vec<[usize; 3]> {
    let n: usize = strata.iter().sum();
    let totals = apportion(n, fractions);
    let mut alloc: Vec<[usize; 3]> = strata
        .iter()
        .map(|&nh| fractions.map(|f| (f * nh as f64).floor() as usize))
        .collect();
    let mut need: [i64; 3] = [0; 3];
    for s in 0..3 {
        need[s] = totals[s] as i64 - alloc.iter().map(|a| a[s] as i64).sum::<i64>();
    }
    let mut residual: Vec<(usize, usize)> = strata
        .iter()
        .zip(&alloc)
        .enumerate()
        .map(|(h, (&nh, a))| (h, nh - a.iter().sum::<usize>()))
        .collect();
    residual.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));

    for (h, extra) in residual {
        let nh = strata[h] as f64;
        for _ in 0..extra {
            let best = (0..3)
                .filter(|&s| fractions[s] > 0.0 && alloc[h][s] as f64 <= fractions[s] * nh)
                .max_by(|&a, &b| {
                    need[a].cmp(&need[b]).then_with(|| {
                        let fa = fractions[a] * nh - (fractions[a] * nh).floor();
                        let fb = fractions[b] * nh - (fractions[b] * nh).floor();
                        fa.total_cmp(&fb)
                    })
                })
                .or_else(|| (0..3).max_by_key(|&s| need[s]))
                .unwrap_or(0);
            alloc[h][best] += 1;
            need[best] -= 1;
        }
    }
    alloc
}

/// Assigns every sample to calibration / validation / testing.
///
/// Samples are stratified into reference-glucose tertiles, each stratum is
/// shuffled with a seeded generator and cut according to `fractions`. Every
/// sample needs a reference value.
pub fn split_dataset(d: &Dataset, seed: u64, fractions: SplitFractions) -> Result<Dataset> {
    fractions.validate()?;
    let f = fractions.as_array();

    let mut keyed: Vec<(f64, &Sample)> = Vec::with_capacity(d.len());
    for s in d.samples() {
        let r = s.stratification_reference().ok_or_else(|| {
            Error::InvalidInput(format!("sample `{}` has no reference glucose", s.id))
        })?;
        keyed.push((r, s));
    }
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.id.cmp(&b.1.id)));

    let n = keyed.len();
    let sizes: Vec<usize> = (0..3).map(|h| n / 3 + usize::from(h < n % 3)).collect();
    if let Some(&small) = sizes.iter().find(|&&s| s < MIN_STRATUM) {
        return Err(Error::InvalidInput(format!(
            "{n} samples give a glucose stratum of {small}; each stratum needs at least {MIN_STRATUM}"
        )));
    }

    let alloc = allocate(&sizes, &f);
    let mut labels = BTreeMap::new();
    let mut start = 0;
    for (h, &size) in sizes.iter().enumerate() {
        let mut members: Vec<&Sample> = keyed[start..start + size].iter().map(|k| k.1).collect();
        start += size;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(h as u64);
        members.shuffle(&mut rng);
        let mut it = members.into_iter();
        for (s, &count) in alloc[h].iter().enumerate() {
            for sample in it.by_ref().take(count) {
                labels.insert(sample.id.clone(), SPLIT_ORDER[s]);
            }
        }
    }
    Dataset::with_labels(d.samples().to_vec(), labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "id,ch1_mv,ch2_mv,ch3_mv,capillary_mgdl,serum_mgdl,mode,sex,age,split\n";

    fn ramp(n: usize) -> Dataset {
        let samples = (0..n)
            .map(|i| {
                let mut s = Sample::new(format!("s{i:03}"), ChannelVoltages::new(1.0, 2.0, 3.0));
                s.capillary_mgdl = Some(50.0 + 2.0 * i as f64);
                s.mode = Some(Mode::ALL[i % 3]);
                s
            })
            .collect();
        Dataset::new(samples).unwrap()
    }

    #[test]
    fn header_only_is_empty() {
        let d = read_csv(HEADER.as_bytes()).unwrap();
        assert!(d.is_empty());
    }

    #[test]
    fn row_maps_fields() {
        let text = format!("{HEADER}s1,1.0,2.0,3.0,100,,fasting,male,40,calibration\n");
        let d = read_csv(text.as_bytes()).unwrap();
        let s = &d.samples()[0];
        assert_eq!(s.id, "s1");
        assert_eq!(s.voltages, ChannelVoltages::new(1.0, 2.0, 3.0));
        assert_eq!(s.capillary_mgdl, Some(100.0));
        assert_eq!(s.serum_mgdl, None);
        assert_eq!(s.mode, Some(Mode::Fasting));
        assert_eq!(s.sex, Sex::Male);
        assert_eq!(s.age_years, Some(40));
        assert_eq!(d.label("s1"), Some(Split::Calibration));
    }

    #[test]
    fn negative_glucose_names_row() {
        let text = format!(
            "{HEADER}s1,1,2,3,100,,fasting,male,40,\ns2,1,2,3,-5,,fasting,male,40,\n"
        );
        match read_csv(text.as_bytes()) {
            Err(Error::Ingest { row, .. }) => assert_eq!(row, 3),
            other => panic!("expected ingest error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_rows() {
        let short = format!("{HEADER}s1,1,2,3,100,,fasting,male,40\n");
        assert!(matches!(read_csv(short.as_bytes()), Err(Error::Ingest { row: 2, .. })));
        let nan_volt = format!("{HEADER}s1,abc,2,3,100,,fasting,male,40,\n");
        assert!(matches!(read_csv(nan_volt.as_bytes()), Err(Error::Ingest { row: 2, .. })));
        let dup = format!("{HEADER}s1,1,2,3,100,,,,,\ns1,1,2,3,100,,,,,\n");
        assert!(matches!(read_csv(dup.as_bytes()), Err(Error::Ingest { row: 3, .. })));
    }

    #[test]
    fn missing_optionals_are_absent() {
        let text = format!("{HEADER}s1,1,2,3,,90,,,,\n");
        let d = read_csv(text.as_bytes()).unwrap();
        let s = &d.samples()[0];
        assert_eq!(s.capillary_mgdl, None);
        assert_eq!(s.serum_mgdl, Some(90.0));
        assert_eq!(s.mode, None);
        assert_eq!(s.age_years, None);
        assert_eq!(d.label("s1"), None);
    }

    #[test]
    fn round_trip_small() {
        let empty = Dataset::default();
        let mut buf = Vec::new();
        write_csv(&empty, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), HEADER);

        let text = format!("{HEADER}s1,1.25,2.5,3.75,100,95,random,female,33,validation\n");
        let d = read_csv(text.as_bytes()).unwrap();
        let mut buf = Vec::new();
        write_csv(&d, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap().lines().count(), 2);
        assert_eq!(read_csv(buf.as_slice()).unwrap(), d);
    }

    #[test]
    fn cohort_of_187_splits_113_to_74() {
        let d = ramp(187);
        let f = SplitFractions::new(113.0 / 187.0, 74.0 / 187.0, 0.0);
        let out = split_dataset(&d, 7, f).unwrap();
        assert_eq!(out.split(Split::Calibration).count(), 113);
        assert_eq!(out.split(Split::Validation).count(), 74);
        assert_eq!(out.split(Split::Testing).count(), 0);
        assert_eq!(out.labels().len(), 187);
    }

    #[test]
    fn all_calibration() {
        let d = ramp(30);
        let out = split_dataset(&d, 1, SplitFractions::new(1.0, 0.0, 0.0)).unwrap();
        assert!(out.samples().iter().all(|s| out.label(&s.id) == Some(Split::Calibration)));
    }

    #[test]
    fn split_is_deterministic_and_order_free() {
        let d = ramp(60);
        let f = SplitFractions::new(0.5, 0.3, 0.2);
        let a = split_dataset(&d, 11, f).unwrap();
        let b = split_dataset(&d, 11, f).unwrap();
        assert_eq!(a.labels(), b.labels());

        let mut rev = d.samples().to_vec();
        rev.reverse();
        let c = split_dataset(&Dataset::new(rev).unwrap(), 11, f).unwrap();
        assert_eq!(a.labels(), c.labels());
    }

    #[test]
    fn split_rejects_bad_inputs() {
        let d = ramp(8);
        assert!(split_dataset(&d, 1, SplitFractions::new(1.0, 0.0, 0.0)).is_err());
        let d = ramp(30);
        assert!(split_dataset(&d, 1, SplitFractions::new(0.5, 0.6, 0.0)).is_err());
        assert!(split_dataset(&d, 1, SplitFractions::new(1.2, -0.2, 0.0)).is_err());
    }

    #[test]
    fn allocation_tracks_fractions_per_stratum() {
        for n in 9..200 {
            let sizes: Vec<usize> = (0..3).map(|h| n / 3 + usize::from(h < n % 3)).collect();
            for f in [[0.6, 0.4, 0.0], [0.5, 0.3, 0.2], [1.0 / 3.0; 3], [0.7, 0.2, 0.1]] {
                let alloc = allocate(&sizes, &f);
                let totals = apportion(n, &f);
                for s in 0..3 {
                    assert_eq!(alloc.iter().map(|a| a[s]).sum::<usize>(), totals[s]);
                }
                for (h, a) in alloc.iter().enumerate() {
                    assert_eq!(a.iter().sum::<usize>(), sizes[h]);
                    for s in 0..3 {
                        let exact = f[s] * sizes[h] as f64;
                        assert!((a[s] as f64 - exact).abs() <= 1.0 + 1e-9, "n={n} f={f:?} {a:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn label_invariants_enforced() {
        let s = Sample::new("x", ChannelVoltages::new(1.0, 1.0, 1.0));
        let labels = BTreeMap::from([("x".to_string(), Split::Calibration)]);
        assert!(Dataset::with_labels(vec![s.clone()], labels).is_err());
        let labels = BTreeMap::from([("y".to_string(), Split::Testing)]);
        assert!(Dataset::with_labels(vec![s], labels).is_err());
    }
}
