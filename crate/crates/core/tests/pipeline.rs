//! Cross-module integration tests: each test drives a realistic path through
//! several public APIs the way a downstream consumer would, rather than
//! exercising any single module in isolation.

use std::io::BufReader;

use entspec_core::analyzer::{
    noisy_trace, read_trace_csv, sweep, ExperimentModel, SweepConfig,
};
use entspec_core::cavity::{figures, CavityGeometry};
use entspec_core::channel::{
    apply_uniform_loss, entangle, DetectionChain, DetectorGain, EfficiencyModel,
    EntanglerConfig,
};
use entspec_core::config::{parse_config, resolve};
use entspec_core::criteria::{duan_from_covariance, tms_db};
use entspec_core::fitkit::{
    self, FitObservation, FitParameterKind, FitProblem, FreeParameter,
};
use entspec_core::montecarlo::{run_oracle, McChainConfig, SynthesisConfig};
use entspec_core::opa::{opo_threshold, pump_ratio, OpaSpectrumModel, ThresholdInputs};
use entspec_core::quadrature::FrequencyGrid;

use proptest::prelude::*;

#[test]
fn a_config_document_and_hand_built_types_run_the_same_sweep() {
    let document = r#"{
        "sources": {
            "a": { "gamma_hwhm_mhz": 1130.0, "pump_power_mw": 300.0,
                   "threshold_power_mw": 655.0, "escape_efficiency": 0.95 },
            "b": { "gamma_hwhm_mhz": 1130.0, "pump_power_mw": 300.0,
                   "threshold_power_mw": 655.0, "escape_efficiency": 0.95 }
        },
        "detection": {
            "efficiency": { "total": 0.59 },
            "gain_a": 1.3,
            "clearance_a": { "constant_db": 13.0 },
            "dark_noise_subtracted": false
        },
        "sweep": { "start_mhz": 1.0, "stop_mhz": 1480.0, "points": 25,
                   "rbw_khz": 300.0, "vbw_khz": 1.0, "averages": 20 }
    }"#;
    let resolved = resolve(&parse_config(document).unwrap(), ".".as_ref()).unwrap();
    let from_document = sweep(&resolved.model, resolved.sweep.as_ref().unwrap()).unwrap();

    let gamma = 1130.0 * 1.0e6;
    let x = pump_ratio(300.0 * 1.0e-3, 655.0 * 1.0e-3).unwrap();
    let source = OpaSpectrumModel::new(gamma, x, 0.95).unwrap();
    let model = ExperimentModel {
        entangler: EntanglerConfig::new(source, source, 90.0_f64.to_radians(), 0.5)
            .unwrap(),
        detection: DetectionChain::new(
            EfficiencyModel::Total(0.59),
            DetectorGain::flat(1.3).unwrap(),
            DetectorGain::Flat(1.0),
            Some(entspec_core::channel::DbCurve::constant(13.0).unwrap()),
            None,
            false,
        )
        .unwrap(),
    };
    let config = SweepConfig::new(
        FrequencyGrid::linspace(1.0e6, 1.48e9, 25).unwrap(),
        300.0 * 1.0e3,
        1.0 * 1.0e3,
        1.0,
        20,
        None,
    )
    .unwrap();
    let by_hand = sweep(&model, &config).unwrap();

    assert_eq!(from_document.grid().points(), by_hand.grid().points());
    assert_eq!(from_document.var_xsum_db(), by_hand.var_xsum_db());
    assert_eq!(from_document.var_ydiff_db(), by_hand.var_ydiff_db());
    assert_eq!(from_document.duan(), by_hand.duan());
}

#[test]
fn the_cavity_linewidth_sets_the_squeezing_rolloff_scale() {
    let geometry = CavityGeometry::new(2.6e-3, 1.816, 0.9998, 0.64, 0.0).unwrap();
    let gamma = figures(&geometry).unwrap().hwhm_hz;
    let x = 0.6;
    let source = OpaSpectrumModel::new(gamma, x, 0.97).unwrap();

    // The squeezing Lorentzian has width gamma * (1 + x): at that detuning
    // the squeezing depth is exactly half its zero-frequency value.
    let depth = |f: f64| 1.0 - source.squeezed_variance(f).value();
    let half = depth(gamma * (1.0 + x)) / depth(0.0);
    assert!((half - 0.5).abs() < 1.0e-12, "squeezing half-depth ratio {half}");

    // The anti-squeezing Lorentzian narrows to gamma * (1 - x).
    let excess = |f: f64| source.anti_squeezed_variance(f).value() - 1.0;
    let half = excess(gamma * (1.0 - x)) / excess(0.0);
    assert!((half - 0.5).abs() < 1.0e-12, "anti-squeezing half-depth ratio {half}");
}

#[test]
fn the_threshold_pipeline_feeds_an_entangled_source_model() {
    let inputs = ThresholdInputs {
        signal_wavelength_m: 1550.0e-9,
        waist_signal_m: 33.86e-6,
        d_eff_m_per_v: 7.3e-12,
        crystal_length_m: 2.6e-3,
        n_signal: 1.816,
        n_pump: 1.84,
        alpha_signal_per_m: 8.4e-3,
        output_transmission: 0.36,
        extra_signal_loss: 2.0e-4,
        pump_buildup: 194.15123881049328,
    };
    let report = opo_threshold(&inputs).unwrap();
    let x = pump_ratio(0.300, report.p_threshold_input_w).unwrap();
    assert!((0.0..1.0).contains(&x), "below-threshold pump ratio, got {x}");

    let source = OpaSpectrumModel::new(1.13e9, x, 0.98).unwrap();
    let grid = FrequencyGrid::new(vec![1.0e6, 10.0e6]).unwrap();
    let cov = entangle(&EntanglerConfig::balanced(source, source), &grid);
    let duan = duan_from_covariance(&cov)[0];
    assert!(
        duan < 2.0,
        "lossless low-frequency inseparability should beat the EPR bound, got {duan}"
    );
    assert!(
        tms_db(duan).unwrap() > 3.0,
        "expected more than 3 dB of two-mode squeezing"
    );
}

#[test]
fn oracle_output_feeds_the_fitter_through_a_trace_set() {
    let truth_eta = 0.62;
    let truth_x = 0.55;
    let gamma = 1.13e9;
    let source = OpaSpectrumModel::new(gamma, truth_x, 1.0).unwrap();
    let chain = McChainConfig {
        efficiency: truth_eta,
        ..McChainConfig::ideal()
    };
    let synthesis = SynthesisConfig::new(
        4.0e9,
        1 << 20,
        23,
        4096,
        0.5,
        entspec_core::montecarlo::WindowKind::Hann,
    )
    .unwrap();
    let empirical = run_oracle(&source, &source, &chain, &synthesis).unwrap();
    let trace = empirical.restricted(1.0e6, 1.48e9).unwrap().to_trace_set().unwrap();

    let observation = FitObservation::from_trace_set(&trace, 0.2).unwrap();
    let model = ExperimentModel {
        entangler: EntanglerConfig::balanced(source, source),
        detection: DetectionChain::new(
            EfficiencyModel::Total(truth_eta),
            DetectorGain::Flat(1.0),
            DetectorGain::Flat(1.0),
            None,
            None,
            false,
        )
        .unwrap(),
    };
    let fit_sweep =
        SweepConfig::new(trace.grid().clone(), 3.0e5, 1.0e3, 1.0, 20, None).unwrap();
    let problem = FitProblem::new(
        observation,
        model,
        fit_sweep,
        vec![
            FreeParameter::with_default_bounds(FitParameterKind::EtaTotal),
            FreeParameter::with_default_bounds(FitParameterKind::PumpRatioX),
        ],
    )
    .unwrap()
    .with_starts(4)
    .unwrap()
    .with_seed(11);
    let result = fitkit::fit(&problem).unwrap();
    assert!(result.converged());

    let eta = result.parameter(FitParameterKind::EtaTotal).unwrap().value;
    let x = result.parameter(FitParameterKind::PumpRatioX).unwrap().value;
    assert!(
        (eta - truth_eta).abs() / truth_eta < 0.05,
        "efficiency came back {eta} vs {truth_eta}"
    );
    assert!(
        (x - truth_x).abs() / truth_x < 0.05,
        "pump ratio came back {x} vs {truth_x}"
    );
}

#[test]
fn trace_serialization_round_trips_every_float_bitwise() {
    let source = OpaSpectrumModel::new(1.13e9, 0.5, 0.99).unwrap();
    let model = ExperimentModel {
        entangler: EntanglerConfig::balanced(source, source),
        detection: DetectionChain::new(
            EfficiencyModel::Total(0.59),
            DetectorGain::Flat(1.1),
            DetectorGain::Flat(1.0),
            None,
            None,
            false,
        )
        .unwrap(),
    };
    let config = SweepConfig::new(
        FrequencyGrid::linspace(1.0e6, 1.0e9, 50).unwrap(),
        3.0e5,
        1.0e3,
        1.0,
        20,
        None,
    )
    .unwrap();
    let trace = noisy_trace(&sweep(&model, &config).unwrap(), &config, 3, &[]).unwrap();

    let parsed = read_trace_csv(BufReader::new(trace.to_csv().as_bytes())).unwrap();
    assert_eq!(parsed.grid.points(), trace.grid().points());
    assert_eq!(parsed.var_xsum_db, trace.var_xsum_db());
    assert_eq!(parsed.var_ydiff_db, trace.var_ydiff_db());
    assert_eq!(parsed.duan, trace.duan());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// A gain common to both detectors scales signal and vacuum reference
    /// alike, so every normalized trace is unchanged.
    #[test]
    fn a_common_detector_gain_cancels_in_normalized_traces(
        eta in 0.05_f64..1.0,
        x in 0.0_f64..0.9,
        gain in 0.2_f64..5.0,
    ) {
        let source = OpaSpectrumModel::new(1.13e9, x, 1.0).unwrap();
        let grid = FrequencyGrid::new(vec![1.0e6, 3.0e8, 1.2e9]).unwrap();
        let config = SweepConfig::new(grid, 3.0e5, 1.0e3, 1.0, 20, None).unwrap();
        let run = |g: f64| {
            let model = ExperimentModel {
                entangler: EntanglerConfig::balanced(source, source),
                detection: DetectionChain::new(
                    EfficiencyModel::Total(eta),
                    DetectorGain::Flat(g),
                    DetectorGain::Flat(g),
                    None,
                    None,
                    false,
                )
                .unwrap(),
            };
            sweep(&model, &config).unwrap()
        };
        let gained = run(gain);
        let unit = run(1.0);
        for (a, b) in gained.duan().iter().zip(unit.duan()) {
            prop_assert!(
                (a - b).abs() <= 1.0e-9 * b,
                "common gain leaked into the normalized trace: {a} vs {b}"
            );
        }
    }

    /// Uniform loss mixes the state with vacuum, so the inseparability moves
    /// linearly between its pristine value and the vacuum bound of 4.
    #[test]
    fn uniform_loss_moves_inseparability_linearly_toward_the_vacuum_bound(
        eta in 0.0_f64..=1.0,
        x in 0.0_f64..0.95,
        f in 1.0e5_f64..2.0e9,
    ) {
        let source = OpaSpectrumModel::new(1.13e9, x, 1.0).unwrap();
        let grid = FrequencyGrid::new(vec![f, f * 2.0]).unwrap();
        let pristine = entangle(&EntanglerConfig::balanced(source, source), &grid);
        let lossy = apply_uniform_loss(&pristine, eta).unwrap();
        let d0 = duan_from_covariance(&pristine)[0];
        let d = duan_from_covariance(&lossy)[0];
        let expected = eta * d0 + 4.0 * (1.0 - eta);
        prop_assert!(
            (d - expected).abs() <= 1.0e-9 * expected,
            "loss law broke: {d} vs {expected}"
        );
    }
}
