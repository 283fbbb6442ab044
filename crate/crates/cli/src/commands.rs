//! The five subcommand implementations.

use std::fmt::Write as _;
use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use serde::Serialize;

use entspec_core::analyzer::{self, SweepConfig};
use entspec_core::cavity;
use entspec_core::channel::DetectorGain;
use entspec_core::config::{self, ResolvedConfig};
use entspec_core::criteria;
use entspec_core::fitkit::{self, FitObservation, FitProblem};
use entspec_core::montecarlo::{self, McChainConfig, SynthesisConfig};
use entspec_core::opa;

use crate::output::{emit, runtime, usage, Failure};
use crate::{CommonArgs, FitArgs, SeededArgs};

/// A config document together with its resolved model objects.
struct Loaded {
    /// The document as understood by the schema; embedded in JSON outputs
    /// so they can be re-ingested as configs.
    document: serde_json::Value,
    resolved: ResolvedConfig,
}

fn load(args: &CommonArgs) -> Result<Loaded, Failure> {
    let parsed = config::load_config(&args.config).map_err(usage)?;
    let base = args
        .config
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let resolved = config::resolve(&parsed, base).map_err(usage)?;
    let document = serde_json::to_value(&parsed).map_err(usage)?;
    Ok(Loaded { document, resolved })
}

/// Formats one f64 cell in full round-trip precision.
fn cell(value: f64) -> String {
    format!("{value}")
}

/// Reports figures of merit for every cavity block in the config.
pub fn cavity(args: &CommonArgs) -> Result<(), Failure> {
    #[derive(Serialize)]
    struct Row {
        cavity: String,
        fsr_hz: f64,
        finesse: f64,
        fwhm_hz: f64,
        hwhm_hz: f64,
        buildup: f64,
        escape_efficiency: Option<f64>,
    }

    let loaded = load(args)?;
    if loaded.resolved.cavities.is_empty() {
        return Err(Failure::Usage(
            "config contains no cavity blocks; describe at least one source \
             cavity or threshold pump cavity"
                .into(),
        ));
    }
    let mut rows = Vec::new();
    for labeled in &loaded.resolved.cavities {
        let figures = cavity::figures(&labeled.geometry).map_err(usage)?;
        let escape_efficiency = labeled
            .escape
            .map(|e| {
                cavity::escape_efficiency(
                    e.output_transmission,
                    e.other_transmission,
                    e.internal_loss,
                )
            })
            .transpose()
            .map_err(usage)?;
        rows.push(Row {
            cavity: labeled.label.clone(),
            fsr_hz: figures.fsr_hz,
            finesse: figures.finesse,
            fwhm_hz: figures.fwhm_hz,
            hwhm_hz: figures.hwhm_hz,
            buildup: figures.buildup,
            escape_efficiency,
        });
    }

    let mut csv =
        String::from("cavity,fsr_hz,finesse,fwhm_hz,hwhm_hz,buildup,escape_efficiency\n");
    for r in &rows {
        writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            r.cavity,
            cell(r.fsr_hz),
            cell(r.finesse),
            cell(r.fwhm_hz),
            cell(r.hwhm_hz),
            cell(r.buildup),
            cell(r.escape_efficiency.unwrap_or(f64::NAN)),
        )
        .expect("string writer cannot fail");
    }
    let json = serde_json::json!({
        "config": loaded.document,
        "cavities": rows,
    });
    emit(args, "cavity", &csv, &json)
}

/// Runs the analytic sweep and writes the model spectra.
pub fn spectrum(args: &CommonArgs) -> Result<(), Failure> {
    let loaded = load(args)?;
    let sweep = loaded
        .resolved
        .sweep
        .as_ref()
        .ok_or_else(|| Failure::Usage("config has no sweep section".into()))?;
    let traces = analyzer::sweep(&loaded.resolved.model, sweep).map_err(runtime)?;
    emit(
        args,
        "spectrum",
        &traces.to_csv(),
        &traces.to_json(&loaded.document),
    )
}

/// Evaluates the threshold pipeline for every threshold block.
pub fn threshold(args: &CommonArgs) -> Result<(), Failure> {
    #[derive(Serialize)]
    struct Row {
        threshold: String,
        rayleigh_range_m: f64,
        focusing_xi: f64,
        focusing_h: f64,
        e_nl_per_w: f64,
        p_threshold_circulating_w: f64,
        p_threshold_input_w: f64,
    }

    let loaded = load(args)?;
    if loaded.resolved.thresholds.is_empty() {
        return Err(Failure::Usage(
            "config contains no threshold blocks; give a source a `threshold` \
             section to evaluate its oscillation threshold"
                .into(),
        ));
    }
    let mut rows = Vec::new();
    for labeled in &loaded.resolved.thresholds {
        let report = opa::opo_threshold(&labeled.inputs).map_err(runtime)?;
        rows.push(Row {
            threshold: labeled.label.clone(),
            rayleigh_range_m: report.rayleigh_range_m,
            focusing_xi: report.focusing_xi,
            focusing_h: report.focusing_h,
            e_nl_per_w: report.e_nl_per_w,
            p_threshold_circulating_w: report.p_threshold_circulating_w,
            p_threshold_input_w: report.p_threshold_input_w,
        });
    }

    let mut csv = String::from(
        "threshold,rayleigh_range_m,focusing_xi,focusing_h,e_nl_per_w,\
         p_threshold_circulating_w,p_threshold_input_w\n",
    );
    for r in &rows {
        writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            r.threshold,
            cell(r.rayleigh_range_m),
            cell(r.focusing_xi),
            cell(r.focusing_h),
            cell(r.e_nl_per_w),
            cell(r.p_threshold_circulating_w),
            cell(r.p_threshold_input_w),
        )
        .expect("string writer cannot fail");
    }
    let json = serde_json::json!({
        "config": loaded.document,
        "thresholds": rows,
    });
    emit(args, "threshold", &csv, &json)
}

/// One gain setting spanning a frequency band of the synthesis run.
struct SynthBand {
    start_hz: f64,
    stop_hz: f64,
    gain_a: f64,
    gain_b: f64,
}

/// Requires a scalar gain; table gains need band splits instead.
fn flat_gain(gain: &DetectorGain, which: &str) -> Result<f64, Failure> {
    match gain {
        DetectorGain::Flat(g) => Ok(*g),
        DetectorGain::TableDb(_) => Err(Failure::Usage(format!(
            "time-domain synthesis needs a scalar {which} (or sweep band \
             splits); a gain table varies within a single run"
        ))),
    }
}

/// Synthesizes time-domain traces and writes the empirical spectra.
///
/// With sweep band splits the chain runs once per band — matching how a
/// split-band measurement changes LO powers between runs — and the bins are
/// stitched together by band membership.
pub fn synth(args: &SeededArgs) -> Result<(), Failure> {
    #[derive(Serialize)]
    struct Row {
        frequency_hz: f64,
        var_xsum_db: f64,
        var_ydiff_db: f64,
        duan: f64,
        tms_db: f64,
        duan_se: f64,
    }

    let mut loaded = load(&args.common)?;
    let mut synthesis = loaded
        .resolved
        .montecarlo
        .clone()
        .unwrap_or_else(|| SynthesisConfig::oracle_default(0));
    if let Some(seed) = args.seed {
        synthesis = synthesis.with_seed(seed);
        // The echoed document must name the seed that actually generated
        // these rows, or re-running it would not reproduce them.
        loaded.document["montecarlo"]["seed"] = serde_json::json!(seed);
    }

    let model = &loaded.resolved.model;
    let sweep = loaded.resolved.sweep.as_ref();
    let bands: Vec<SynthBand> = match sweep.and_then(|s| s.band_splits.as_ref()) {
        Some(splits) => splits
            .iter()
            .map(|s| SynthBand {
                start_hz: s.start_hz,
                stop_hz: s.stop_hz,
                gain_a: s.gain_a,
                gain_b: s.gain_b,
            })
            .collect(),
        None => vec![SynthBand {
            start_hz: 0.0,
            stop_hz: f64::INFINITY,
            gain_a: flat_gain(&model.detection.gain_a, "detector A gain")?,
            gain_b: flat_gain(&model.detection.gain_b, "detector B gain")?,
        }],
    };
    if let Some(sweep) = sweep {
        let top = sweep.grid.points().last().copied().unwrap_or(0.0);
        synthesis.check_band(top).map_err(usage)?;
    }

    let mut spectra = Vec::with_capacity(bands.len());
    for band in &bands {
        let chain = McChainConfig {
            relative_phase_rad: model.entangler.relative_phase_rad,
            beam_splitter_reflectivity: model.entangler.beam_splitter_reflectivity,
            efficiency: model.detection.total_efficiency(),
            gain_a: band.gain_a,
            gain_b: band.gain_b,
            clearance_a_db: model.detection.clearance_a_db.clone(),
            clearance_b_db: model.detection.clearance_b_db.clone(),
        };
        chain.validate().map_err(usage)?;
        let spectrum = montecarlo::run_oracle(
            &model.entangler.source_a,
            &model.entangler.source_b,
            &chain,
            &synthesis,
        )
        .map_err(runtime)?;
        spectra.push(spectrum);
    }

    // Stitch: every Welch bin takes its values from the first band that
    // contains it, then the sweep window (when given) trims the edges.
    let (window_lo, window_hi) = match sweep {
        Some(s) => {
            let points = s.grid.points();
            (points[0], points[points.len() - 1])
        }
        None => (0.0, f64::INFINITY),
    };
    let mut rows = Vec::new();
    for (i, &f) in spectra[0].grid().points().iter().enumerate() {
        if f < window_lo || f > window_hi {
            continue;
        }
        let Some(band_index) = bands
            .iter()
            .position(|b| f >= b.start_hz && f <= b.stop_hz)
        else {
            continue;
        };
        let spectrum = &spectra[band_index];
        let duan = spectrum.duan()[i];
        rows.push(Row {
            frequency_hz: f,
            var_xsum_db: 10.0 * spectrum.var_xsum()[i].log10(),
            var_ydiff_db: 10.0 * spectrum.var_ydiff()[i].log10(),
            duan,
            tms_db: criteria::tms_db(duan).map_err(runtime)?,
            duan_se: spectrum.duan_se(i),
        });
    }
    if rows.len() < 2 {
        return Err(Failure::Runtime(
            "fewer than two Welch bins fall inside the requested band".into(),
        ));
    }

    let mut csv =
        String::from("frequency_hz,var_xsum_db,var_ydiff_db,duan,tms_db,duan_se\n");
    for r in &rows {
        writeln!(
            csv,
            "{},{},{},{},{},{}",
            cell(r.frequency_hz),
            cell(r.var_xsum_db),
            cell(r.var_ydiff_db),
            cell(r.duan),
            cell(r.tms_db),
            cell(r.duan_se),
        )
        .expect("string writer cannot fail");
    }
    let json = serde_json::json!({
        "config": loaded.document,
        "montecarlo": {
            "sample_rate_hz": synthesis.sample_rate_hz(),
            "n_samples": synthesis.n_samples(),
            "seed": synthesis.seed(),
            "n_segments": synthesis.n_segments(),
            "bin_hz": synthesis.bin_hz(),
        },
        "rows": rows,
    });
    emit(&args.common, "synth", &csv, &json)
}

/// Estimates model parameters from a measured spectrum CSV.
pub fn fit(args: &FitArgs) -> Result<(), Failure> {
    let mut loaded = load(&args.common)?;
    if let Some(seed) = args.seed {
        // Mirror the override into the echoed document (see `synth`).
        loaded.document["fit"]["seed"] = serde_json::json!(seed);
    }
    let settings = loaded
        .resolved
        .fit
        .as_ref()
        .ok_or_else(|| Failure::Usage("config has no fit section".into()))?;
    let sweep = loaded.resolved.sweep.as_ref().ok_or_else(|| {
        Failure::Usage(
            "the fit command needs the sweep section for bandwidths and \
             averaging"
                .into(),
        )
    })?;

    let file = File::open(&args.data).map_err(|e| {
        Failure::Usage(format!("cannot read {}: {e}", args.data.display()))
    })?;
    let data = analyzer::read_trace_csv(BufReader::new(file)).map_err(usage)?;

    // The observation grid comes from the data file; the config's sweep
    // supplies the analyzer statistics and any band-split gains.
    let fit_sweep = SweepConfig::new(
        data.grid.clone(),
        sweep.rbw_hz,
        sweep.vbw_hz,
        sweep.sweep_time_s,
        sweep.averages,
        sweep.band_splits.clone(),
    )
    .map_err(usage)?;
    let sigma_db = match settings.sigma_db {
        Some(sigma) => sigma,
        None => analyzer::estimator_sigma_db(sweep.rbw_hz, sweep.vbw_hz, sweep.averages)
            .map_err(usage)?,
    };
    let observation = FitObservation::quadratures_db(
        data.grid.clone(),
        data.var_xsum_db.clone(),
        data.var_ydiff_db.clone(),
        vec![sigma_db; data.grid.len()],
    )
    .map_err(usage)?;

    let problem = FitProblem::new(
        observation,
        loaded.resolved.model.clone(),
        fit_sweep,
        settings.free.clone(),
    )
    .map_err(usage)?
    .with_domain(settings.domain)
    .with_starts(settings.n_starts)
    .map_err(usage)?
    .with_seed(args.seed.unwrap_or(settings.seed))
    .with_exclusion_windows(settings.exclusion_windows_hz.clone())
    .map_err(usage)?;

    let result = fitkit::fit(&problem).map_err(runtime)?;
    let report = result.report(&problem);

    let mut csv =
        String::from("parameter,value,uncertainty,at_lower_bound,at_upper_bound\n");
    for p in &report.parameters {
        writeln!(
            csv,
            "{},{},{},{},{}",
            p.name,
            cell(p.value),
            cell(p.uncertainty.unwrap_or(f64::NAN)),
            p.at_lower_bound,
            p.at_upper_bound,
        )
        .expect("string writer cannot fail");
    }
    let json = serde_json::json!({
        "config": loaded.document,
        "fit": report,
    });
    emit(&args.common, "fit", &csv, &json)
}
