//! Spectrum-analyzer emulation: frequency sweeps over the full model,
//! split-band gain settings, display-estimator statistics and synthetic
//! trace noising.
//!
//! A sweep evaluates source spectra → entangler → loss → gains → dark noise →
//! criteria at every grid point and reports analyzer-style traces in dB
//! relative to the combined vacuum. Display noise is modeled as Gaussian in
//! the dB domain, matching how video averaging flattens the underlying power
//! statistics.

use std::fmt::Write as _;
use std::io::BufRead;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::channel::{
    apply_dark_noise, apply_uniform_loss, combined_dark_levels, entangle, joint_variances_with_gains,
    DetectionChain, EntanglerConfig,
};
use crate::criteria::reid_epr_products;
use crate::error::{Error, Result};
use crate::quadrature::FrequencyGrid;

/// Complete physical model: the entangled source and everything after it.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentModel {
    /// Squeezers and beam splitter.
    pub entangler: EntanglerConfig,
    /// Loss, gains and dark noise of the measurement chain.
    pub detection: DetectionChain,
}

/// Gain override for one frequency range, mirroring a split-band local
/// oscillator setting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandSplit {
    /// Lower edge of the band, hertz (inclusive).
    pub start_hz: f64,
    /// Upper edge of the band, hertz (inclusive).
    pub stop_hz: f64,
    /// Amplitude gain of detector A inside the band.
    pub gain_a: f64,
    /// Amplitude gain of detector B inside the band.
    pub gain_b: f64,
}

/// Sweep definition: grid plus analyzer settings.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    /// Frequencies to evaluate.
    pub grid: FrequencyGrid,
    /// Resolution bandwidth in hertz.
    pub rbw_hz: f64,
    /// Video bandwidth in hertz.
    pub vbw_hz: f64,
    /// Sweep time in seconds.
    pub sweep_time_s: f64,
    /// Number of averaged sweeps.
    pub averages: u32,
    /// Optional split-band gain settings; when present they must cover the
    /// whole grid and they replace the detection chain's gains.
    pub band_splits: Option<Vec<BandSplit>>,
}

impl SweepConfig {
    /// Validates analyzer settings and band-split structure.
    pub fn new(
        grid: FrequencyGrid,
        rbw_hz: f64,
        vbw_hz: f64,
        sweep_time_s: f64,
        averages: u32,
        band_splits: Option<Vec<BandSplit>>,
    ) -> Result<Self> {
        if !vbw_hz.is_finite() || vbw_hz <= 0.0 {
            return Err(Error::invalid("video bandwidth", vbw_hz, "must be positive"));
        }
        if !rbw_hz.is_finite() || rbw_hz <= vbw_hz {
            return Err(Error::invalid(
                "resolution bandwidth",
                rbw_hz,
                "must exceed the video bandwidth",
            ));
        }
        if !sweep_time_s.is_finite() || sweep_time_s <= 0.0 {
            return Err(Error::invalid("sweep time", sweep_time_s, "must be positive"));
        }
        if averages < 1 {
            return Err(Error::invalid(
                "averages",
                averages as f64,
                "must be at least 1",
            ));
        }
        if let Some(splits) = &band_splits {
            for split in splits {
                if !(split.start_hz.is_finite() && split.stop_hz.is_finite())
                    || split.start_hz <= 0.0
                    || split.stop_hz <= split.start_hz
                {
                    return Err(Error::invalid(
                        "band split edge",
                        split.stop_hz,
                        "band must span a positive increasing frequency range",
                    ));
                }
                for g in [split.gain_a, split.gain_b] {
                    if !g.is_finite() || g <= 0.0 {
                        return Err(Error::invalid("band split gain", g, "must be positive"));
                    }
                }
            }
            // Every grid point must fall inside some band; report the first
            // contiguous uncovered range otherwise.
            let covered: Vec<bool> = grid
                .iter()
                .map(|f| splits.iter().any(|s| f >= s.start_hz && f <= s.stop_hz))
                .collect();
            if let Some(first) = covered.iter().position(|&c| !c) {
                let mut last = first;
                while last + 1 < covered.len() && !covered[last + 1] {
                    last += 1;
                }
                return Err(Error::BandGap {
                    start_hz: grid.points()[first],
                    stop_hz: grid.points()[last],
                });
            }
        }
        Ok(SweepConfig {
            grid,
            rbw_hz,
            vbw_hz,
            sweep_time_s,
            averages,
            band_splits,
        })
    }

    /// Per-frequency amplitude gains for both detectors: band-split values
    /// when configured, otherwise the chain's own gain models.
    pub fn resolved_gains(&self, chain: &DetectionChain) -> Result<(Vec<f64>, Vec<f64>)> {
        match &self.band_splits {
            Some(splits) => {
                let mut ga = Vec::with_capacity(self.grid.len());
                let mut gb = Vec::with_capacity(self.grid.len());
                for f in self.grid.iter() {
                    let split = splits
                        .iter()
                        .find(|s| f >= s.start_hz && f <= s.stop_hz)
                        .expect("coverage checked at construction");
                    ga.push(split.gain_a);
                    gb.push(split.gain_b);
                }
                Ok((ga, gb))
            }
            None => Ok((
                chain.gain_a.amplitudes_on(&self.grid)?,
                chain.gain_b.amplitudes_on(&self.grid)?,
            )),
        }
    }
}

/// Analyzer-style traces over a frequency grid.
///
/// Quadrature traces are in dB relative to the combined vacuum; the Duan
/// column stays linear (its entanglement bounds live at 4 and 2); the vacuum
/// trace is identically 0 dB by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceSet {
    grid: FrequencyGrid,
    var_xsum_db: Vec<f64>,
    var_ydiff_db: Vec<f64>,
    duan: Vec<f64>,
    tms_db: Vec<f64>,
    reid_product: Option<Vec<f64>>,
    vacuum_db: Vec<f64>,
    dark_db: Option<Vec<f64>>,
}

impl TraceSet {
    /// Assembles a trace set from measured quadrature traces in dB.
    ///
    /// The Duan and squeezing traces are derived from the quadrature columns,
    /// so they can never drift out of sync with them.
    pub fn new(
        grid: FrequencyGrid,
        var_xsum_db: Vec<f64>,
        var_ydiff_db: Vec<f64>,
        reid_product: Option<Vec<f64>>,
        dark_db: Option<Vec<f64>>,
    ) -> Result<Self> {
        let n = grid.len();
        for (name, len) in [
            ("X-sum trace", var_xsum_db.len()),
            ("Y-difference trace", var_ydiff_db.len()),
            ("Reid trace", reid_product.as_ref().map_or(n, Vec::len)),
            ("dark trace", dark_db.as_ref().map_or(n, Vec::len)),
        ] {
            if len != n {
                return Err(Error::LengthMismatch {
                    name: "trace column",
                    expected: n,
                    actual: len,
                });
            }
            let _ = name;
        }
        let duan: Vec<f64> = var_xsum_db
            .iter()
            .zip(&var_ydiff_db)
            .map(|(&x, &y)| 2.0 * (10f64.powf(x / 10.0) + 10f64.powf(y / 10.0)))
            .collect();
        let tms_db = duan.iter().map(|&d| -10.0 * (d / 4.0).log10()).collect();
        Ok(TraceSet {
            vacuum_db: vec![0.0; n],
            grid,
            var_xsum_db,
            var_ydiff_db,
            duan,
            tms_db,
            reid_product,
            dark_db,
        })
    }

    /// Frequency grid.
    pub fn grid(&self) -> &FrequencyGrid {
        &self.grid
    }

    /// `Var(X_A + X_B)` relative to vacuum, dB.
    pub fn var_xsum_db(&self) -> &[f64] {
        &self.var_xsum_db
    }

    /// `Var(Y_A - Y_B)` relative to vacuum, dB.
    pub fn var_ydiff_db(&self) -> &[f64] {
        &self.var_ydiff_db
    }

    /// Duan sum (linear; entangled below 4, EPR below 2).
    pub fn duan(&self) -> &[f64] {
        &self.duan
    }

    /// Two-mode squeezing in dB.
    pub fn tms_db(&self) -> &[f64] {
        &self.tms_db
    }

    /// Reid conditional-variance products, when the sweep computed them.
    pub fn reid_product(&self) -> Option<&[f64]> {
        self.reid_product.as_deref()
    }

    /// Vacuum reference line, identically 0 dB.
    pub fn vacuum_db(&self) -> &[f64] {
        &self.vacuum_db
    }

    /// Dark-noise level relative to vacuum in dB, when the chain models it.
    pub fn dark_db(&self) -> Option<&[f64]> {
        self.dark_db.as_deref()
    }

    /// Renders the CSV document (`frequency_hz,var_xsum_db,var_ydiff_db,duan,
    /// tms_db,reid_product`); Reid cells read `NaN` when not computed.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str("frequency_hz,var_xsum_db,var_ydiff_db,duan,tms_db,reid_product\n");
        for (i, f) in self.grid.iter().enumerate() {
            let reid = self
                .reid_product
                .as_ref()
                .map_or(f64::NAN, |r| r[i]);
            // f64 Display is the shortest round-trip form: deterministic and
            // lossless on re-parse.
            writeln!(
                out,
                "{},{},{},{},{},{}",
                f, self.var_xsum_db[i], self.var_ydiff_db[i], self.duan[i], self.tms_db[i], reid
            )
            .expect("string writer cannot fail");
        }
        out
    }

    /// Renders the JSON document: the same per-row fields as the CSV plus the
    /// resolved experiment configuration for provenance.
    pub fn to_json(&self, config: &serde_json::Value) -> serde_json::Value {
        #[derive(Serialize)]
        struct Row {
            frequency_hz: f64,
            var_xsum_db: f64,
            var_ydiff_db: f64,
            duan: f64,
            tms_db: f64,
            reid_product: Option<f64>,
        }
        let rows: Vec<Row> = self
            .grid
            .iter()
            .enumerate()
            .map(|(i, f)| Row {
                frequency_hz: f,
                var_xsum_db: self.var_xsum_db[i],
                var_ydiff_db: self.var_ydiff_db[i],
                duan: self.duan[i],
                tms_db: self.tms_db[i],
                reid_product: self.reid_product.as_ref().map(|r| r[i]),
            })
            .collect();
        serde_json::json!({
            "config": config,
            "rows": rows,
        })
    }
}

/// Measured spectrum columns as read back from a trace CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumData {
    /// Frequency grid.
    pub grid: FrequencyGrid,
    /// X-sum trace in dB.
    pub var_xsum_db: Vec<f64>,
    /// Y-difference trace in dB.
    pub var_ydiff_db: Vec<f64>,
    /// Duan sums (linear).
    pub duan: Vec<f64>,
}

/// Parses a trace CSV produced by [`TraceSet::to_csv`] (or hand-assembled
/// with the same leading columns).
pub fn read_trace_csv(reader: impl BufRead) -> Result<SpectrumData> {
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or(Error::Parse {
            line: 1,
            reason: "empty file".into(),
        })??;
    let cols: Vec<&str> = header.trim().split(',').map(str::trim).collect();
    let expected = ["frequency_hz", "var_xsum_db", "var_ydiff_db", "duan"];
    if cols.len() < expected.len() || cols[..expected.len()] != expected {
        return Err(Error::Parse {
            line: 1,
            reason: format!(
                "header must start with '{}', got '{}'",
                expected.join(","),
                header.trim()
            ),
        });
    }
    let mut freqs = Vec::new();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut duan = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() < 4 {
            return Err(Error::Parse {
                line: i + 2,
                reason: format!("expected at least 4 fields, got {}", fields.len()),
            });
        }
        let parse = |s: &str, what: &str| -> Result<f64> {
            s.parse::<f64>().map_err(|_| Error::Parse {
                line: i + 2,
                reason: format!("could not parse {what} '{s}'"),
            })
        };
        freqs.push(parse(fields[0], "frequency")?);
        xs.push(parse(fields[1], "X-sum value")?);
        ys.push(parse(fields[2], "Y-difference value")?);
        duan.push(parse(fields[3], "Duan value")?);
    }
    Ok(SpectrumData {
        grid: FrequencyGrid::new(freqs)?,
        var_xsum_db: xs,
        var_ydiff_db: ys,
        duan,
    })
}

/// Runs the full model over the sweep grid and returns noiseless traces.
///
/// Per frequency: squeezer spectra → entangler → uniform detection loss →
/// gain-weighted joint variances → dark noise → criteria. The Reid products
/// are evaluated on the post-loss covariance (the state the detectors see);
/// the dark trace reports the gain-combined dark level whenever the chain
/// models dark noise.
pub fn sweep(model: &ExperimentModel, config: &SweepConfig) -> Result<TraceSet> {
    let (gain_a, gain_b) = config.resolved_gains(&model.detection)?;
    let cov = entangle(&model.entangler, &config.grid);
    let lossy = apply_uniform_loss(&cov, model.detection.total_efficiency())?;
    let joint = joint_variances_with_gains(&lossy, &gain_a, &gain_b)?;
    let measured = apply_dark_noise(&joint, &model.detection, &gain_a, &gain_b)?;

    let reid = reid_epr_products(&lossy)?;
    let dark_db = combined_dark_levels(&model.detection, &config.grid, &gain_a, &gain_b)?
        .map(|levels| levels.iter().map(|&d| 10.0 * d.log10()).collect());

    let to_db = |vs: &[f64]| vs.iter().map(|&v| 10.0 * v.log10()).collect();
    TraceSet::new(
        config.grid.clone(),
        to_db(measured.var_xsum()),
        to_db(measured.var_ydiff()),
        Some(reid),
        dark_db,
    )
}

/// Standard deviation of one displayed analyzer point in dB.
///
/// Video filtering and sweep averaging compress `M = (rbw/vbw)·averages`
/// independent power samples into each displayed point, leaving
/// `σ_dB = 10/ln(10)/sqrt(M)`.
pub fn estimator_sigma_db(rbw_hz: f64, vbw_hz: f64, averages: u32) -> Result<f64> {
    if !vbw_hz.is_finite() || vbw_hz <= 0.0 {
        return Err(Error::invalid("video bandwidth", vbw_hz, "must be positive"));
    }
    if !rbw_hz.is_finite() || rbw_hz <= vbw_hz {
        return Err(Error::invalid(
            "resolution bandwidth",
            rbw_hz,
            "must exceed the video bandwidth",
        ));
    }
    if averages < 1 {
        return Err(Error::invalid(
            "averages",
            averages as f64,
            "must be at least 1",
        ));
    }
    let m = (rbw_hz / vbw_hz) * averages as f64;
    Ok(10.0 / std::f64::consts::LN_10 / m.sqrt())
}

/// A narrowband contamination line to inject into a noisy trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spur {
    /// Line frequency in hertz; snaps to the nearest grid point.
    pub frequency_hz: f64,
    /// Power added to both quadrature traces at that point, dB.
    pub amplitude_db: f64,
}

/// Adds analyzer display noise (and optional spurs) to a clean trace set.
///
/// Each quadrature trace point receives independent Gaussian noise of
/// [`estimator_sigma_db`] in the dB domain, drawn from a per-point RNG stream
/// so the result is deterministic for a given seed regardless of evaluation
/// order. Duan and squeezing traces are recomputed from the noisy
/// quadratures; Reid, vacuum and dark traces pass through unchanged.
pub fn noisy_trace(
    trace: &TraceSet,
    config: &SweepConfig,
    seed: u64,
    spurs: &[Spur],
) -> Result<TraceSet> {
    let sigma = estimator_sigma_db(config.rbw_hz, config.vbw_hz, config.averages)?;
    let n = trace.grid().len();
    let mut xs = trace.var_xsum_db().to_vec();
    let mut ys = trace.var_ydiff_db().to_vec();
    for i in 0..n {
        // One counter-based stream per displayed point.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let zx: f64 = rng.sample(StandardNormal);
        let zy: f64 = rng.sample(StandardNormal);
        xs[i] += sigma * zx;
        ys[i] += sigma * zy;
    }
    for spur in spurs {
        let idx = trace
            .grid()
            .iter()
            .enumerate()
            .min_by(|a, b| {
                (a.1 - spur.frequency_hz)
                    .abs()
                    .total_cmp(&(b.1 - spur.frequency_hz).abs())
            })
            .map(|(i, _)| i)
            .expect("grid has at least two points");
        xs[idx] += spur.amplitude_db;
        ys[idx] += spur.amplitude_db;
    }
    TraceSet::new(
        trace.grid().clone(),
        xs,
        ys,
        trace.reid_product().map(<[f64]>::to_vec),
        trace.dark_db().map(<[f64]>::to_vec),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{DbCurve, DetectorGain, EfficiencyModel};
    use crate::opa::OpaSpectrumModel;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    const GAMMA: f64 = 1.13e9;
    const X_REF: f64 = 0.6767682521924122;

    fn reference_model() -> ExperimentModel {
        let src = OpaSpectrumModel::new(GAMMA, X_REF, 1.0).unwrap();
        ExperimentModel {
            entangler: EntanglerConfig::balanced(src, src),
            detection: DetectionChain {
                efficiency: EfficiencyModel::Total(0.59),
                ..DetectionChain::ideal()
            },
        }
    }

    fn default_sweep(grid: FrequencyGrid) -> SweepConfig {
        SweepConfig::new(grid, 3.0e6, 1.0e3, 0.54, 2, None).unwrap()
    }

    #[test]
    fn zero_pump_sweep_reads_vacuum_everywhere() {
        let src = OpaSpectrumModel::vacuum(GAMMA).unwrap();
        let model = ExperimentModel {
            entangler: EntanglerConfig::balanced(src, src),
            detection: DetectionChain::ideal(),
        };
        let grid = FrequencyGrid::linspace(1.0e6, 1.48e9, 16).unwrap();
        let trace = sweep(&model, &default_sweep(grid)).unwrap();
        for i in 0..16 {
            assert_relative_eq!(trace.var_xsum_db()[i], 0.0, epsilon = 1e-12);
            assert_relative_eq!(trace.var_ydiff_db()[i], 0.0, epsilon = 1e-12);
            assert_relative_eq!(trace.duan()[i], 4.0, epsilon = 1e-12);
            assert_relative_eq!(trace.tms_db()[i], 0.0, epsilon = 1e-12);
            assert_eq!(trace.vacuum_db()[i], 0.0);
        }
        assert!(trace.dark_db().is_none());
    }

    #[test]
    fn two_point_grid_gives_two_row_trace() {
        let grid = FrequencyGrid::new(vec![300.0e6, 600.0e6]).unwrap();
        let trace = sweep(&reference_model(), &default_sweep(grid)).unwrap();
        assert_eq!(trace.grid().len(), 2);
        assert_eq!(trace.duan().len(), 2);
    }

    #[test]
    fn reference_sweep_matches_frozen_duan_values() {
        let grid = FrequencyGrid::new(vec![1.0e6, 300.0e6, 1.48e9]).unwrap();
        let trace = sweep(&reference_model(), &default_sweep(grid)).unwrap();
        assert_relative_eq!(trace.duan()[0], 1.7276994911581967, max_relative = 1e-12);
        assert_relative_eq!(trace.duan()[1], 1.7832703765200235, max_relative = 1e-12);
        assert_relative_eq!(trace.duan()[2], 2.588744418072138, max_relative = 1e-12);
        assert_relative_eq!(trace.tms_db()[1], 3.5084279614560323, max_relative = 1e-12);
        let reid = trace.reid_product().unwrap();
        assert_relative_eq!(reid[1], 0.7293914047437514, max_relative = 1e-12);
    }

    #[test]
    fn band_split_gains_apply_only_inside_their_ranges() {
        let grid = FrequencyGrid::new(vec![100.0e6, 500.0e6, 700.0e6, 1.0e9]).unwrap();
        let splits = vec![
            BandSplit {
                start_hz: 1.0e6,
                stop_hz: 620.0e6,
                gain_a: 1.0,
                gain_b: 1.0,
            },
            BandSplit {
                start_hz: 620.0e6,
                stop_hz: 1.48e9,
                gain_a: 1.4,
                gain_b: 1.0,
            },
        ];
        let split_sweep =
            SweepConfig::new(grid.clone(), 3.0e6, 1.0e3, 0.54, 2, Some(splits)).unwrap();
        let flat_sweep = default_sweep(grid);
        let model = reference_model();
        let with_splits = sweep(&model, &split_sweep).unwrap();
        let without = sweep(&model, &flat_sweep).unwrap();
        // Low band: identical to unit gains. High band: imbalance leaks
        // anti-squeezing, raising the trace.
        for i in 0..2 {
            assert_relative_eq!(
                with_splits.duan()[i],
                without.duan()[i],
                max_relative = 1e-12
            );
        }
        for i in 2..4 {
            assert!(with_splits.duan()[i] > without.duan()[i]);
        }
    }

    #[test]
    fn uncovered_band_split_names_the_gap() {
        let grid = FrequencyGrid::new(vec![100.0e6, 500.0e6, 700.0e6, 1.0e9]).unwrap();
        let splits = vec![BandSplit {
            start_hz: 1.0e6,
            stop_hz: 620.0e6,
            gain_a: 1.0,
            gain_b: 1.0,
        }];
        match SweepConfig::new(grid, 3.0e6, 1.0e3, 0.54, 2, Some(splits)) {
            Err(Error::BandGap { start_hz, stop_hz }) => {
                assert_eq!(start_hz, 700.0e6);
                assert_eq!(stop_hz, 1.0e9);
            }
            other => panic!("expected BandGap, got {other:?}"),
        }
    }

    #[test]
    fn sweep_config_enforces_analyzer_invariants() {
        let grid = FrequencyGrid::new(vec![1.0e6, 2.0e6]).unwrap();
        assert!(SweepConfig::new(grid.clone(), 1.0e3, 3.0e6, 0.54, 2, None).is_err());
        assert!(SweepConfig::new(grid.clone(), 3.0e6, 0.0, 0.54, 2, None).is_err());
        assert!(SweepConfig::new(grid.clone(), 3.0e6, 1.0e3, 0.0, 2, None).is_err());
        assert!(SweepConfig::new(grid, 3.0e6, 1.0e3, 0.54, 0, None).is_err());
    }

    #[test]
    fn estimator_sigma_matches_averaged_periodogram_statistics() {
        // RBW 3 MHz, VBW 1 kHz, two averaged sweeps: M = 6000.
        let sigma = estimator_sigma_db(3.0e6, 1.0e3, 2).unwrap();
        assert_relative_eq!(sigma, 0.05606717652536908, max_relative = 1e-12);
        // A single independent sample shows the full chi-squared spread.
        let single = estimator_sigma_db(2.0, 1.0, 1).unwrap();
        assert_relative_eq!(single, 4.342944819032518 / 2f64.sqrt(), max_relative = 1e-12);
        assert!(estimator_sigma_db(1.0e3, 3.0e6, 1).is_err());
    }

    #[test]
    fn quadrupling_samples_halves_sigma() {
        let s1 = estimator_sigma_db(1.0e6, 1.0e3, 1).unwrap();
        let s4 = estimator_sigma_db(1.0e6, 1.0e3, 4).unwrap();
        assert_relative_eq!(s1 / s4, 2.0, max_relative = 1e-12);
    }

    #[test]
    fn noisy_trace_is_deterministic_per_seed() {
        let grid = FrequencyGrid::linspace(1.0e6, 1.48e9, 64).unwrap();
        let config = default_sweep(grid);
        let clean = sweep(&reference_model(), &config).unwrap();
        let a = noisy_trace(&clean, &config, 7, &[]).unwrap();
        let b = noisy_trace(&clean, &config, 7, &[]).unwrap();
        assert_eq!(a, b);
        let c = noisy_trace(&clean, &config, 8, &[]).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn noise_statistics_match_the_declared_sigma() {
        // 5000 points x 2 traces = 1e4 samples.
        let grid = FrequencyGrid::linspace(1.0e6, 1.48e9, 5000).unwrap();
        let config = default_sweep(grid);
        let clean = sweep(&reference_model(), &config).unwrap();
        let noisy = noisy_trace(&clean, &config, 42, &[]).unwrap();
        let sigma = estimator_sigma_db(3.0e6, 1.0e3, 2).unwrap();
        let deltas: Vec<f64> = noisy
            .var_xsum_db()
            .iter()
            .zip(clean.var_xsum_db())
            .chain(noisy.var_ydiff_db().iter().zip(clean.var_ydiff_db()))
            .map(|(n, c)| n - c)
            .collect();
        let n = deltas.len() as f64;
        let mean = deltas.iter().sum::<f64>() / n;
        let var = deltas.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1.0);
        // Sample variance within 5% of sigma^2; mean within 3 sigma / sqrt(N).
        assert!((var / (sigma * sigma) - 1.0).abs() < 0.05, "var ratio {}", var / (sigma * sigma));
        assert!(mean.abs() < 3.0 * sigma / n.sqrt(), "mean {mean}");
    }

    #[test]
    fn spur_contaminates_exactly_one_bin() {
        let grid = FrequencyGrid::linspace(1.0e6, 1.48e9, 740).unwrap();
        let config = default_sweep(grid);
        let clean = sweep(&reference_model(), &config).unwrap();
        let spur = Spur {
            frequency_hz: 714.0e6,
            amplitude_db: 10.0,
        };
        let base = noisy_trace(&clean, &config, 3, &[]).unwrap();
        let spurred = noisy_trace(&clean, &config, 3, &[spur]).unwrap();
        let mut touched = Vec::new();
        for i in 0..740 {
            if base.var_xsum_db()[i] != spurred.var_xsum_db()[i] {
                touched.push(i);
                assert_relative_eq!(
                    spurred.var_xsum_db()[i] - base.var_xsum_db()[i],
                    10.0,
                    max_relative = 1e-9
                );
            }
        }
        assert_eq!(touched.len(), 1);
        let idx = touched[0];
        assert!((clean.grid().points()[idx] - 714.0e6).abs() < 2.0e6);
        // Duan is recomputed, so the contaminated bin moves there too.
        assert!(spurred.duan()[idx] > base.duan()[idx]);
    }

    #[test]
    fn csv_round_trip_preserves_all_values() {
        let grid = FrequencyGrid::new(vec![1.0e6, 300.0e6, 1.48e9]).unwrap();
        let trace = sweep(&reference_model(), &default_sweep(grid)).unwrap();
        let csv = trace.to_csv();
        assert!(csv.starts_with(
            "frequency_hz,var_xsum_db,var_ydiff_db,duan,tms_db,reid_product\n"
        ));
        let back = read_trace_csv(csv.as_bytes()).unwrap();
        assert_eq!(back.grid.points(), trace.grid().points());
        assert_eq!(back.var_xsum_db, trace.var_xsum_db());
        assert_eq!(back.var_ydiff_db, trace.var_ydiff_db());
        assert_eq!(back.duan, trace.duan());
    }

    #[test]
    fn csv_reader_rejects_malformed_input() {
        assert!(read_trace_csv("".as_bytes()).is_err());
        assert!(read_trace_csv("wrong,header,row,here\n".as_bytes()).is_err());
        let good_header = "frequency_hz,var_xsum_db,var_ydiff_db,duan,tms_db,reid_product\n";
        let short_row = format!("{good_header}1e6,0.0\n");
        assert!(read_trace_csv(short_row.as_bytes()).is_err());
        let bad_number = format!("{good_header}1e6,a,b,c,d,e\n");
        assert!(read_trace_csv(bad_number.as_bytes()).is_err());
    }

    #[test]
    fn json_embeds_config_and_mirrors_rows() {
        let grid = FrequencyGrid::new(vec![1.0e6, 300.0e6]).unwrap();
        let trace = sweep(&reference_model(), &default_sweep(grid)).unwrap();
        let config = serde_json::json!({"detection": {"efficiency": 0.59}});
        let doc = trace.to_json(&config);
        assert_eq!(doc["config"]["detection"]["efficiency"], 0.59);
        assert_eq!(doc["rows"].as_array().unwrap().len(), 2);
        assert_eq!(doc["rows"][1]["frequency_hz"], 300.0e6);
        let duan = doc["rows"][1]["duan"].as_f64().unwrap();
        assert_relative_eq!(duan, 1.7832703765200235, max_relative = 1e-12);
    }

    #[test]
    fn dark_trace_reports_combined_clearance_floor() {
        let mut model = reference_model();
        model.detection.clearance_a_db = Some(DbCurve::constant(13.0).unwrap());
        model.detection.clearance_b_db = Some(DbCurve::constant(13.0).unwrap());
        let grid = FrequencyGrid::new(vec![300.0e6, 600.0e6]).unwrap();
        let trace = sweep(&model, &default_sweep(grid)).unwrap();
        let dark = trace.dark_db().expect("dark trace");
        assert_relative_eq!(dark[0], -13.0, max_relative = 1e-12);
        // Un-subtracted dark noise raises the measured squeezed trace.
        assert_relative_eq!(trace.duan()[0], 1.8890676128681083, max_relative = 1e-12);
    }

    #[test]
    fn flat_gain_tables_on_chain_match_band_splits() {
        // The same imbalance specified via chain gains and via one big band
        // split must produce identical traces.
        let grid = FrequencyGrid::linspace(1.0e6, 1.48e9, 32).unwrap();
        let mut model = reference_model();
        model.detection.gain_a = DetectorGain::flat(1.3).unwrap();
        model.detection.gain_b = DetectorGain::flat(1.0).unwrap();
        let chain_route = sweep(&model, &default_sweep(grid.clone())).unwrap();

        let splits = vec![BandSplit {
            start_hz: 1.0e6,
            stop_hz: 1.48e9,
            gain_a: 1.3,
            gain_b: 1.0,
        }];
        let split_sweep = SweepConfig::new(grid, 3.0e6, 1.0e3, 0.54, 2, Some(splits)).unwrap();
        let split_route = sweep(&reference_model(), &split_sweep).unwrap();
        assert_eq!(chain_route.duan(), split_route.duan());
    }

    proptest! {
        #[test]
        fn sweep_values_are_grid_point_local(
            i in 0usize..16,
            j in 0usize..16,
        ) {
            // Sweeping a 2-point sub-grid reproduces the full-grid values:
            // frequencies are evaluated independently.
            prop_assume!(i < j);
            let grid = FrequencyGrid::linspace(1.0e6, 1.48e9, 16).unwrap();
            let full = sweep(&reference_model(), &default_sweep(grid.clone())).unwrap();
            let sub_grid = FrequencyGrid::new(vec![
                grid.points()[i],
                grid.points()[j],
            ]).unwrap();
            let sub = sweep(&reference_model(), &default_sweep(sub_grid)).unwrap();
            prop_assert_eq!(sub.duan()[0], full.duan()[i]);
            prop_assert_eq!(sub.duan()[1], full.duan()[j]);
        }

        #[test]
        fn noise_is_independent_of_spur_injection(seed in 0u64..1000) {
            // Spurs add on top of the same noise realization.
            let grid = FrequencyGrid::linspace(1.0e6, 1.48e9, 10).unwrap();
            let config = default_sweep(grid);
            let clean = sweep(&reference_model(), &config).unwrap();
            let plain = noisy_trace(&clean, &config, seed, &[]).unwrap();
            let spurred = noisy_trace(&clean, &config, seed, &[Spur {
                frequency_hz: 5.0e8,
                amplitude_db: 3.0,
            }]).unwrap();
            let differing = (0..10)
                .filter(|&i| plain.var_xsum_db()[i] != spurred.var_xsum_db()[i])
                .count();
            prop_assert_eq!(differing, 1);
        }
    }
}
