//! Synthetic three-channel NIR acquisition: an exponential-attenuation forward
//! model, coherent averaging of raw samples and ADC quantization.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{ChannelVoltages, Dataset, GlucoseKind, GlucoseValue, Mode, Sample, Sex};
use crate::error::{Error, Result};
use crate::par::{self, Execution};

/// Glucose range the forward model is specified over, mg/dl.
pub const GLUCOSE_MIN: f64 = 40.0;
pub const GLUCOSE_MAX: f64 = 420.0;

/// Raw samples averaged per reading: 8 s at 128 sps.
pub const DEFAULT_RAW_SAMPLES: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdcConfig {
    pub bits: u32,
    pub sample_rate_hz: f64,
    pub fsr_mv: f64,
}

impl Default for AdcConfig {
    fn default() -> Self {
        Self {
            bits: 16,
            sample_rate_hz: 128.0,
            fsr_mv: 5000.0,
        }
    }
}

impl AdcConfig {
    pub fn validate(&self) -> Result<()> {
        if !(8..=24).contains(&self.bits) {
            return Err(Error::InvalidInput(format!(
                "ADC bits must be in [8, 24], got {}",
                self.bits
            )));
        }
        if !(self.sample_rate_hz > 0.0 && self.sample_rate_hz.is_finite()) {
            return Err(Error::InvalidInput("ADC sample rate must be positive".into()));
        }
        if !(self.fsr_mv > 0.0 && self.fsr_mv.is_finite()) {
            return Err(Error::InvalidInput("ADC full-scale range must be positive".into()));
        }
        Ok(())
    }

    pub fn lsb_mv(&self) -> f64 {
        self.fsr_mv / (1u64 << self.bits) as f64
    }

    pub fn max_code(&self) -> u32 {
        ((1u64 << self.bits) - 1) as u32
    }

    /// Highest voltage the converter represents without saturating
    /// (`max_code · LSB`, one LSB below full scale).
    pub fn max_unsaturated_mv(&self) -> f64 {
        self.max_code() as f64 * self.lsb_mv()
    }

    /// Time to collect `n` raw samples.
    pub fn acquisition_seconds(&self, n: usize) -> f64 {
        n as f64 / self.sample_rate_hz
    }
}

/// `round(v / LSB)` clamped to the code range; NaN maps to code 0.
pub fn adc_quantize(v_mv: f64, adc: &AdcConfig) -> u32 {
    let code = (v_mv / adc.lsb_mv()).round();
    if code.is_nan() || code <= 0.0 {
        0
    } else if code >= adc.max_code() as f64 {
        adc.max_code()
    } else {
        code as u32
    }
}

pub fn adc_dequantize(code: u32, adc: &AdcConfig) -> Result<f64> {
    if code > adc.max_code() {
        return Err(Error::InvalidInput(format!(
            "ADC code {code} exceeds {}",
            adc.max_code()
        )));
    }
    Ok(code as f64 * adc.lsb_mv())
}

/// Raw samples of one channel collected during a single reading.
#[derive(Debug, Clone, PartialEq)]
pub struct RawChannelTrace {
    pub channel: u8,
    pub samples_mv: Vec<f64>,
}

/// Arithmetic mean of the trace.
pub fn coherent_average(trace: &RawChannelTrace) -> Result<f64> {
    if trace.samples_mv.is_empty() {
        return Err(Error::InvalidInput(format!(
            "empty trace on channel {}",
            trace.channel
        )));
    }
    let sum: f64 = trace.samples_mv.iter().sum();
    let mean = sum / trace.samples_mv.len() as f64;
    if !mean.is_finite() {
        return Err(Error::NonFinite(format!("trace on channel {}", trace.channel)));
    }
    Ok(mean)
}

/// Per-channel Beer-Lambert-style map `v = b · exp(−k · g)` plus noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForwardModelConfig {
    /// `k` per channel, 1/(mg/dl).
    pub absorbance_per_mgdl: [f64; 3],
    /// `b` per channel, mV.
    pub baseline_mv: [f64; 3],
    /// Std of additive Gaussian noise on every raw sample.
    pub noise_sd_mv: f64,
    /// Std of a per-reading, per-channel offset that does not average out
    /// (finger-to-finger variation). Keeps the channels from being exactly
    /// collinear functions of glucose.
    pub reading_jitter_sd_mv: f64,
    pub seed: u64,
}

impl Default for ForwardModelConfig {
    fn default() -> Self {
        Self {
            absorbance_per_mgdl: [0.0016, 0.0011, 0.0007],
            baseline_mv: [3000.0, 2600.0, 2200.0],
            noise_sd_mv: 6.0,
            reading_jitter_sd_mv: DEFAULT_READING_JITTER_MV,
            seed: 0,
        }
    }
}

pub const DEFAULT_READING_JITTER_MV: f64 = 4.0;

impl ForwardModelConfig {
    /// A noise-free configuration with the default optics.
    pub fn noiseless(seed: u64) -> Self {
        Self {
            noise_sd_mv: 0.0,
            reading_jitter_sd_mv: 0.0,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self, adc: &AdcConfig) -> Result<()> {
        for i in 0..3 {
            let b = self.baseline_mv[i];
            let k = self.absorbance_per_mgdl[i];
            if !(b > 0.0 && b < adc.fsr_mv) {
                return Err(Error::InvalidInput(format!(
                    "baseline of channel {} ({b} mV) outside (0, {})",
                    i + 1,
                    adc.fsr_mv
                )));
            }
            if !k.is_finite() {
                return Err(Error::NonFinite(format!("absorbance of channel {}", i + 1)));
            }
        }
        for (name, v) in [
            ("noise_sd_mv", self.noise_sd_mv),
            ("reading_jitter_sd_mv", self.reading_jitter_sd_mv),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidInput(format!("{name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Noiseless mean voltage of each channel at glucose `g`.
    pub fn mean_voltages(&self, g_mgdl: f64) -> [f64; 3] {
        std::array::from_fn(|i| self.baseline_mv[i] * (-self.absorbance_per_mgdl[i] * g_mgdl).exp())
    }
}

fn normal(sd: f64) -> Result<Normal<f64>> {
    Normal::new(0.0, sd).map_err(|e| Error::InvalidInput(format!("noise std {sd}: {e}")))
}

/// Simulates one reading with an explicit random source.
pub fn simulate_voltages<R: Rng + ?Sized>(
    g_mgdl: f64,
    fm: &ForwardModelConfig,
    adc: &AdcConfig,
    n_raw: usize,
    rng: &mut R,
) -> Result<ChannelVoltages> {
    if n_raw == 0 {
        return Err(Error::InvalidInput("n_raw must be at least 1".into()));
    }
    if !(GLUCOSE_MIN..=GLUCOSE_MAX).contains(&g_mgdl) {
        return Err(Error::InvalidInput(format!(
            "glucose {g_mgdl} mg/dl outside [{GLUCOSE_MIN}, {GLUCOSE_MAX}]"
        )));
    }
    let raw_noise = normal(fm.noise_sd_mv)?;
    let jitter = normal(fm.reading_jitter_sd_mv)?;
    let means = fm.mean_voltages(g_mgdl);
    let mut out = [0.0; 3];
    for (i, &mean) in means.iter().enumerate() {
        let level = mean + jitter.sample(rng);
        if !(0.0..=adc.fsr_mv).contains(&level) {
            return Err(Error::OutOfRange(format!(
                "channel {} mean {level:.3} mV at {g_mgdl} mg/dl, FSR {} mV",
                i + 1,
                adc.fsr_mv
            )));
        }
        let trace = RawChannelTrace {
            channel: i as u8 + 1,
            samples_mv: (0..n_raw).map(|_| level + raw_noise.sample(rng)).collect(),
        };
        let avg = coherent_average(&trace)?;
        out[i] = adc_dequantize(adc_quantize(avg, adc), adc)?;
    }
    Ok(ChannelVoltages::from_array(out))
}

/// Simulates a single labeled reading, seeded by `fm.seed`.
pub fn simulate_sample(
    glucose: GlucoseValue,
    fm: &ForwardModelConfig,
    adc: &AdcConfig,
    n_raw: usize,
) -> Result<Sample> {
    adc.validate()?;
    fm.validate(adc)?;
    let mut rng = ChaCha8Rng::seed_from_u64(fm.seed);
    let voltages = simulate_voltages(glucose.value_mgdl(), fm, adc, n_raw, &mut rng)?;
    let mut s = Sample::new(format!("sim-{}", fm.seed), voltages);
    match glucose.kind() {
        GlucoseKind::Capillary => s.capillary_mgdl = Some(glucose.value_mgdl()),
        GlucoseKind::Serum => s.serum_mgdl = Some(glucose.value_mgdl()),
    }
    Ok(s)
}

/// Parameters of a synthetic cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    pub n: usize,
    pub glucose_lo: f64,
    pub glucose_hi: f64,
    pub n_raw: usize,
    /// When set, a serum reference `capillary · (1 − δ)` accompanies every capillary one.
    pub serum_offset: Option<f64>,
    /// Std (mg/dl) of the error of the finger-prick reference meter.
    pub capillary_ref_noise_sd: f64,
    /// Std (mg/dl) of the error of the laboratory serum reference.
    pub serum_ref_noise_sd: f64,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            n: 187,
            glucose_lo: 70.0,
            glucose_hi: 400.0,
            n_raw: DEFAULT_RAW_SAMPLES,
            serum_offset: Some(0.05),
            capillary_ref_noise_sd: 0.0,
            serum_ref_noise_sd: 0.0,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidInput("n must be at least 1".into()));
        }
        let (lo, hi) = (self.glucose_lo, self.glucose_hi);
        if !(GLUCOSE_MIN <= lo && lo <= hi && hi <= GLUCOSE_MAX) {
            return Err(Error::InvalidInput(format!(
                "glucose range [{lo}, {hi}] must satisfy {GLUCOSE_MIN} <= lo <= hi <= {GLUCOSE_MAX}"
            )));
        }
        if self.n_raw == 0 {
            return Err(Error::InvalidInput("n_raw must be at least 1".into()));
        }
        if let Some(d) = self.serum_offset {
            if !(0.0..1.0).contains(&d) {
                return Err(Error::InvalidInput(format!("serum offset {d} outside [0, 1)")));
            }
        }
        for v in [self.capillary_ref_noise_sd, self.serum_ref_noise_sd] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidInput(format!("reference noise {v} must be >= 0")));
            }
        }
        Ok(())
    }
}

/// Complete configuration document for synthetic acquisition.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationConfig {
    pub adc: AdcConfig,
    pub forward: ForwardModelConfig,
    pub generation: GenerationConfig,
}

impl SimulationConfig {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn generate_one(
    i: usize,
    cfg: &GenerationConfig,
    fm: &ForwardModelConfig,
    adc: &AdcConfig,
) -> Result<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(fm.seed);
    // Stream 0 belongs to `simulate_sample`.
    rng.set_stream(i as u64 + 1);

    let g = if cfg.glucose_lo == cfg.glucose_hi {
        cfg.glucose_lo
    } else {
        rng.random_range(cfg.glucose_lo..=cfg.glucose_hi)
    };
    let mode = Mode::ALL[rng.random_range(0..Mode::ALL.len())];
    let sex = if rng.random_bool(0.5) { Sex::Male } else { Sex::Female };
    let age = rng.random_range(18..=80u32);
    let cap_err = normal(cfg.capillary_ref_noise_sd)?.sample(&mut rng);
    let ser_err = normal(cfg.serum_ref_noise_sd)?.sample(&mut rng);

    let voltages = simulate_voltages(g, fm, adc, cfg.n_raw, &mut rng)?;
    let mut s = Sample::new(format!("s{:04}", i + 1), voltages);
    s.capillary_mgdl = Some((g + cap_err).max(1.0));
    s.serum_mgdl = cfg
        .serum_offset
        .map(|d| (g * (1.0 - d) + ser_err).max(1.0));
    s.mode = Some(mode);
    s.sex = sex;
    s.age_years = Some(age);
    Ok(s)
}

/// Generates a synthetic cohort, parallelised over samples.
pub fn generate_dataset_with(
    cfg: &GenerationConfig,
    fm: &ForwardModelConfig,
    adc: &AdcConfig,
    exec: Execution,
) -> Result<Dataset> {
    cfg.validate()?;
    adc.validate()?;
    fm.validate(adc)?;
    let samples = par::try_map_range(cfg.n, exec, |i| generate_one(i, cfg, fm, adc))?;
    Dataset::new(samples)
}

pub fn generate_dataset(
    cfg: &GenerationConfig,
    fm: &ForwardModelConfig,
    adc: &AdcConfig,
) -> Result<Dataset> {
    generate_dataset_with(cfg, fm, adc, Execution::default())
}
