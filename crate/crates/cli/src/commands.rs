use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Duration;

use chrono::{DateTime, Utc};

use iglu_core::acquisition::{generate_dataset, SimulationConfig};
use iglu_core::data::{export_csv, load_csv, split_dataset, SplitFractions};
use iglu_core::evaluation::{ceg_analyze, evaluate, GroupBy, PairedReadings};
use iglu_core::par::{self, Execution};
use iglu_core::regress::lm::LmConfig;
use iglu_core::regress::model::{fit_model, ModelChoice, TrainedModel};
use iglu_core::{ChannelVoltages, Dataset, GlucoseKind, Split};
use iglu_telemetry::{reading_id, Clock, MockEndpoint, ReadingRecord, RetryPolicy, SystemClock, UploadQueue};

use crate::args::*;
use crate::error::{io_err, CliError, CliResult};
use crate::plot;
use crate::report::{self, ValidationReport};

/// Writes a line to stdout, ignoring a closed pipe.
macro_rules! out {
    ($($t:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout().lock(), $($t)*);
    }};
}

fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, contents).map_err(io_err(path))
}

fn parse_fractions(s: &str) -> CliResult<SplitFractions> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::Usage(format!("--split expects three comma-separated numbers, got `{s}`")))?;
    match parts[..] {
        [c, v, t] => Ok(SplitFractions::new(c, v, t)),
        _ => Err(CliError::Usage(format!("--split expects three fractions, got `{s}`"))),
    }
}

pub fn simulate(a: &SimulateArgs) -> CliResult<()> {
    let mut sim = match &a.sim_config {
        Some(p) => SimulationConfig::from_json_file(p)?,
        None => SimulationConfig::default(),
    };
    let g = &mut sim.generation;
    if let Some(n) = a.n {
        g.n = n as usize;
    }
    g.glucose_lo = a.glucose_lo.unwrap_or(g.glucose_lo);
    g.glucose_hi = a.glucose_hi.unwrap_or(g.glucose_hi);
    g.capillary_ref_noise_sd = a.capillary_noise.unwrap_or(g.capillary_ref_noise_sd);
    g.serum_ref_noise_sd = a.serum_noise.unwrap_or(g.serum_ref_noise_sd);
    g.n_raw = a.n_raw.unwrap_or(g.n_raw);
    if let Some(d) = a.serum_offset {
        g.serum_offset = Some(d);
    }
    let fm = &mut sim.forward;
    fm.seed = a.seed;
    fm.noise_sd_mv = a.noise_sd.unwrap_or(fm.noise_sd_mv);
    fm.reading_jitter_sd_mv = a.jitter_sd.unwrap_or(fm.reading_jitter_sd_mv);
    let fractions = parse_fractions(&a.split)?;
    // Parameter problems are the caller's: report them as usage errors.
    sim.generation.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    sim.adc.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    sim.forward.validate(&sim.adc).map_err(|e| CliError::Usage(e.to_string()))?;

    let d = generate_dataset(&sim.generation, &sim.forward, &sim.adc)?;
    let d = split_dataset(&d, a.seed, fractions).map_err(|e| CliError::Usage(e.to_string()))?;
    export_csv(&d, &a.out)?;

    let caps: Vec<f64> = d.samples().iter().filter_map(|s| s.capillary_mgdl).collect();
    let lo = caps.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = caps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    out!("wrote {} samples to {}", d.len(), a.out.display());
    out!("capillary glucose range: {lo:.1} to {hi:.1} mg/dl");
    out!(
        "noise: {} mV per raw sample over {} samples, {} mV per reading; reference error sd capillary {} / serum {} mg/dl",
        sim.forward.noise_sd_mv,
        sim.generation.n_raw,
        sim.forward.reading_jitter_sd_mv,
        sim.generation.capillary_ref_noise_sd,
        sim.generation.serum_ref_noise_sd
    );
    out!(
        "split: {} calibration, {} validation, {} testing",
        d.split(Split::Calibration).count(),
        d.split(Split::Validation).count(),
        d.split(Split::Testing).count()
    );
    Ok(())
}

fn parse_depths(s: &str) -> CliResult<Vec<usize>> {
    let bad = || CliError::Usage(format!("--hidden-layers expects N or A..B, got `{s}`"));
    let (lo, hi) = match s.split_once("..") {
        Some((a, b)) => (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?),
        None => {
            let n = s.trim().parse().map_err(|_| bad())?;
            (n, n)
        }
    };
    if lo == 0 || lo > hi {
        return Err(bad());
    }
    Ok((lo..=hi).collect())
}

fn summary(model: &TrainedModel, data: &Dataset, kind: GlucoseKind) -> String {
    match evaluate(model, data, kind) {
        Ok(e) => format!(
            "n={} mARD={:.3}% RMSE={:.3} mg/dl R={:.4}",
            e.metrics.n, e.metrics.mard_pct, e.metrics.rmse_mgdl, e.metrics.r_pearson
        ),
        Err(e) => format!("metrics unavailable ({e})"),
    }
}

fn mard_of(model: &TrainedModel, data: &Dataset, kind: GlucoseKind) -> Option<f64> {
    evaluate(model, data, kind).ok().map(|e| e.metrics.mard_pct)
}

pub fn calibrate(a: &CalibrateArgs) -> CliResult<()> {
    let mut choice: ModelChoice = a.model.parse().map_err(|e: iglu_core::Error| CliError::Usage(e.to_string()))?;
    let kind: GlucoseKind = a.kind.into();
    let data = load_csv(&a.train)?;
    let (cal, val) = if data.has_labels() {
        (data.subset(Split::Calibration), Some(data.subset(Split::Validation)).filter(|v| !v.is_empty()))
    } else {
        (data.clone(), None)
    };
    if cal.is_empty() {
        return Err(CliError::Data(format!("{}: no calibration samples", a.train.display())));
    }

    let depths = match &mut choice {
        ModelChoice::Dnn(cfg) => {
            let seed = a
                .seed
                .ok_or_else(|| CliError::Usage("--seed is required for dnn".into()))?;
            *cfg = LmConfig {
                seed,
                width: a.width.unwrap_or(cfg.width),
                max_iters: a.max_iters.unwrap_or(cfg.max_iters),
                ..*cfg
            };
            match &a.hidden_layers {
                Some(s) => parse_depths(s)?,
                None => vec![cfg.hidden_layers],
            }
        }
        _ => {
            if a.hidden_layers.is_some() || a.width.is_some() || a.max_iters.is_some() {
                return Err(CliError::Usage(
                    "--hidden-layers, --width and --max-iters apply only to dnn".into(),
                ));
            }
            Vec::new()
        }
    };

    if depths.len() > 1 {
        let ModelChoice::Dnn(base) = &choice else { unreachable!() };
        let fits = par::try_map_range(depths.len(), Execution::Parallel, |i| {
            let c = ModelChoice::Dnn(LmConfig {
                hidden_layers: depths[i],
                ..*base
            });
            fit_model(&c, &cal, kind)
        })?;
        let mut table = String::from("hidden_layers,calibration_mard_pct,validation_mard_pct,iterations,final_sse\n");
        out!("{:>6} {:>12} {:>12} {:>6} {:>12}", "depth", "cal mARD %", "val mARD %", "iters", "final SSE");
        let mut best: Option<(f64, usize)> = None;
        for (i, m) in fits.iter().enumerate() {
            let c = mard_of(m, &cal, kind).unwrap_or(f64::NAN);
            let v = val.as_ref().and_then(|v| mard_of(m, v, kind)).unwrap_or(f64::NAN);
            let h = &m.metadata.hyperparameters;
            out!(
                "{:>6} {:>12.3} {:>12.3} {:>6} {:>12.4e}",
                depths[i], c, v, h["iterations"], h["final_sse"]
            );
            table.push_str(&format!("{},{c},{v},{},{}\n", depths[i], h["iterations"], h["final_sse"]));
            let score = if v.is_nan() { c } else { v };
            if !score.is_nan() && best.is_none_or(|(s, _)| score < s) {
                best = Some((score, i));
            }
        }
        if let Some(p) = &a.sweep_table {
            write_file(p, &table)?;
        }
        let (_, i) = best.ok_or_else(|| CliError::Data("no depth produced usable predictions".into()))?;
        fits[i].save(&a.out)?;
        out!("saved depth {} to {}", depths[i], a.out.display());
        return Ok(());
    }

    if let (ModelChoice::Dnn(cfg), Some(&d)) = (&mut choice, depths.first()) {
        cfg.hidden_layers = d;
    }
    let model = fit_model(&choice, &cal, kind)?;
    model.save(&a.out)?;
    out!("fitted {} on {} {} references", model.metadata.model, model.metadata.n_train, kind);
    for (k, v) in &model.metadata.hyperparameters {
        out!("  {k} = {v}");
    }
    out!("calibration: {}", summary(&model, &cal, kind));
    if let Some(v) = &val {
        out!("validation:  {}", summary(&model, v, kind));
    }
    out!("saved {}", a.out.display());
    Ok(())
}

pub fn validate(a: &ValidateArgs) -> CliResult<()> {
    let model = TrainedModel::load(&a.model)?;
    let data = load_csv(&a.data)?;
    let kind = a.kind.map(GlucoseKind::from).unwrap_or(model.kind());
    let (subset, split_name) = match a.split {
        SplitArg::All => (data, "all"),
        _ if !data.has_labels() => (data, "all"),
        s => {
            let (split, name) = match s {
                SplitArg::Calibration => (Split::Calibration, "calibration"),
                SplitArg::Validation => (Split::Validation, "validation"),
                _ => (Split::Testing, "testing"),
            };
            (data.subset(split), name)
        }
    };
    let e = evaluate(&model, &subset, kind)?;

    let mut groups = BTreeMap::new();
    if let Some(g) = a.group_by {
        let by = match g {
            crate::args::GroupBy::Sex => GroupBy::Sex,
            crate::args::GroupBy::Mode => GroupBy::Mode,
        };
        for (k, p) in e.readings.group_by(by) {
            let c = ceg_analyze(&p)?;
            groups.insert(k, (p, c));
        }
    }
    let panels: Vec<(String, &PairedReadings, &iglu_core::evaluation::CegResult)> = if groups.is_empty() {
        vec![(split_name.to_owned(), &e.readings, &e.ceg)]
    } else {
        groups.iter().map(|(k, (p, c))| (k.clone(), p, c)).collect()
    };
    let ceg_svg = plot::ceg_svg(&panels);
    let title = format!("{} ({kind}), R = {:.3}", model.metadata.model, e.metrics.r_pearson);
    let corr_svg = plot::correlation_svg(&e.readings, &title);
    let zones_svg = plot::zones_svg(&e.ceg);
    let report = ValidationReport::new(&e, split_name, groups);

    let dir = &a.out_dir;
    write_file(&dir.join("report.json"), &serde_json::to_string_pretty(&report)?)?;
    write_file(&dir.join("report.csv"), &report.points_csv())?;
    write_file(&dir.join("correlation.svg"), &corr_svg)?;
    write_file(&dir.join("ceg.svg"), &ceg_svg)?;
    write_file(&dir.join("zones.svg"), &zones_svg)?;

    let m = &e.metrics;
    out!("{} on {} {} samples ({kind})", model.metadata.model, m.n, split_name);
    out!(
        "mARD {:.4}%  AvgE {:.4}%  MAD {:.3} mg/dl  RMSE {:.3} mg/dl  R {:.4}  R² {:.4}",
        m.mard_pct, m.avge_pct, m.mad_mgdl, m.rmse_mgdl, m.r_pearson, m.r_squared
    );
    let zones: Vec<String> = report
        .zones
        .percent
        .iter()
        .map(|(z, p)| format!("{z} {p:.1}%"))
        .collect();
    out!("Clarke zones: {}", zones.join("  "));
    if e.clamped > 0 {
        out!("{} predictions clamped to the reportable range", e.clamped);
    }
    out!("wrote reports and plots to {}", dir.display());
    Ok(())
}

fn parse_timestamp(s: &str) -> CliResult<DateTime<Utc>> {
    DateTime::parse_from_rfc3339(s)
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| CliError::Usage(format!("--timestamp `{s}`: {e}")))
}

pub fn predict(a: &PredictArgs) -> CliResult<()> {
    let timestamp = a.timestamp.as_deref().map(parse_timestamp).transpose()?;
    let model = TrainedModel::load(&a.model)?;
    let v = ChannelVoltages::new(a.v1, a.v2, a.v3);
    v.validate(a.fsr)?;
    let p = model.predict(&v)?;
    out!("{} mg/dl ({})", p.value_mgdl, model.kind());
    if p.clamped {
        out!("clamped from {} mg/dl", p.raw_mgdl);
    }
    if a.enqueue {
        let dir = a.queue.as_ref().expect("clap enforces --queue with --enqueue");
        let q = UploadQueue::open(dir)?;
        let id = match &a.reading_id {
            Some(id) => id.clone(),
            None => reading_id(&a.device_id, q.known_count() as u64),
        };
        let t = timestamp.unwrap_or_else(|| SystemClock.now());
        let r = ReadingRecord::new(id, &a.patient_id, t, p.glucose(model.kind()), model.tag(), &a.device_id)?;
        q.enqueue(&r)?;
        out!("queued {} ({} pending)", r.reading_id, q.len());
    }
    Ok(())
}

pub fn sync(a: &SyncArgs) -> CliResult<()> {
    let policy = RetryPolicy {
        base_delay: Duration::from_millis(a.base_delay_ms),
        max_delay: Duration::from_millis(a.max_delay_ms),
        jitter: a.jitter,
        max_attempts: a.max_attempts,
        timeout: Duration::from_millis(a.timeout_ms),
        seed: a.seed,
    };
    policy.validate()?;
    let q = UploadQueue::open(&a.queue)?;
    let dead_before = q.dead_letters().len();
    let stats = iglu_telemetry::sync(&q, &a.endpoint, &policy)?;
    out!(
        "{} uploaded, {} dead-lettered, {} remaining ({} attempts, {} retries)",
        stats.uploaded, stats.dead_lettered, stats.remaining, stats.attempts, stats.retries
    );
    for d in &q.dead_letters()[dead_before..] {
        eprintln!("dead-lettered {}: {}", d.reading_id, d.reason);
    }
    if stats.drained() {
        Ok(())
    } else {
        Err(CliError::Network(format!(
            "{} readings still pending: {}",
            stats.remaining,
            stats.last_error.unwrap_or_default()
        )))
    }
}

pub fn report(a: &ReportArgs) -> CliResult<()> {
    let reports = a
        .reports
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p).map_err(io_err(p))?;
            serde_json::from_str::<ValidationReport>(&text)
                .map_err(|e| CliError::Data(format!("{}: {e}", p.display())))
        })
        .collect::<CliResult<Vec<_>>>()?;
    let out = match a.format {
        Format::Md => report::markdown(&reports),
        Format::Csv => report::csv(&reports),
    };
    match &a.out {
        Some(p) => write_file(p, &out),
        None => {
            use std::io::Write as _;
            let _ = std::io::stdout().lock().write_all(out.as_bytes());
            Ok(())
        }
    }
}

pub fn serve_mock(a: &ServeMockArgs) -> CliResult<()> {
    let m = MockEndpoint::start(a.port)?;
    m.fail_every(a.fail_every);
    m.fail_next(a.fail_next);
    m.set_latency(Duration::from_millis(a.latency_ms));
    out!("listening on {}", m.url());
    use std::io::Write;
    let _ = std::io::stdout().flush();
    m.wait();
    Ok(())
}
