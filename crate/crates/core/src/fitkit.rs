//! Bounded nonlinear least squares: recovers chain parameters from spectra.
//!
//! The forward model is the analyzer sweep; the observables are either an
//! inseparability spectrum or the pair of joint-quadrature traces, with a
//! per-point noise level in decibels. Fitting runs damped least squares
//! (Levenberg–Marquardt) on parameters mapped to an unconstrained space by a
//! logistic bound transform, with finite-difference sensitivities and a
//! deterministic multi-start schedule to escape local minima.
//!
//! Residuals live in the dB domain by default because the analyzer's
//! estimator noise is approximately Gaussian there; a linear-domain option
//! is retained behind a flag. Strongly correlated parameters (total
//! efficiency and pump ratio near zero frequency) are reported with their
//! full covariance rather than regularized away.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::analyzer::{sweep, ExperimentModel, SweepConfig, TraceSet};
use crate::channel::DetectorGain;
use crate::error::{Error, Result};
use crate::quadrature::FrequencyGrid;

/// Relative finite-difference step for sensitivities, in transformed space.
pub const FD_RELATIVE_STEP: f64 = 1e-6;
/// Convergence: relative objective decrease below this over three
/// consecutive accepted iterations.
pub const CONVERGENCE_TOL: f64 = 1e-10;
/// Number of consecutive small decreases required for convergence.
pub const CONVERGENCE_SPAN: usize = 3;
/// Hard iteration cap per start.
pub const MAX_ITERATIONS: usize = 500;
/// Default number of multi-start attempts.
pub const DEFAULT_STARTS: usize = 8;
/// Fraction of the bound interval treated as "at the boundary".
const BOUNDARY_MARGIN: f64 = 1e-3;

/// Physical quantity a fit may treat as unknown.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum FitParameterKind {
    /// Total detection efficiency applied to both modes.
    EtaTotal,
    /// Pump amplitude ratio shared by both sources.
    PumpRatioX,
    /// Cavity half linewidth (hertz) shared by both sources.
    GammaHwhm,
    /// Detector amplitude gain ratio `g_A / g_B`.
    GainRatio,
    /// Common decibel shift applied to both dark-clearance curves.
    ClearanceOffsetDb,
}

impl FitParameterKind {
    /// Stable identifier used in reports and config documents.
    pub fn name(self) -> &'static str {
        match self {
            FitParameterKind::EtaTotal => "eta_total",
            FitParameterKind::PumpRatioX => "pump_ratio_x",
            FitParameterKind::GammaHwhm => "gamma_hwhm_hz",
            FitParameterKind::GainRatio => "gain_ratio",
            FitParameterKind::ClearanceOffsetDb => "clearance_offset_db",
        }
    }

    /// Wide default bounds covering the physically sensible range.
    pub fn default_bounds(self) -> (f64, f64) {
        match self {
            FitParameterKind::EtaTotal => (0.01, 1.0),
            FitParameterKind::PumpRatioX => (0.0, 0.999),
            FitParameterKind::GammaHwhm => (1.0e8, 1.0e10),
            FitParameterKind::GainRatio => (0.5, 2.0),
            FitParameterKind::ClearanceOffsetDb => (-10.0, 10.0),
        }
    }

    /// Hard validity range of the underlying model parameter.
    fn admissible(self) -> (f64, f64) {
        match self {
            FitParameterKind::EtaTotal => (0.0, 1.0),
            FitParameterKind::PumpRatioX => (0.0, 0.999_999),
            FitParameterKind::GammaHwhm => (0.0, f64::INFINITY),
            FitParameterKind::GainRatio => (0.0, f64::INFINITY),
            FitParameterKind::ClearanceOffsetDb => (f64::NEG_INFINITY, f64::INFINITY),
        }
    }
}

/// One unknown with its finite box bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FreeParameter {
    /// Which model quantity is free.
    pub kind: FitParameterKind,
    /// Lower bound (attained only asymptotically).
    pub lower: f64,
    /// Upper bound (attained only asymptotically).
    pub upper: f64,
}

impl FreeParameter {
    /// Free parameter with explicit bounds.
    pub fn bounded(kind: FitParameterKind, lower: f64, upper: f64) -> Result<FreeParameter> {
        if !lower.is_finite() || !upper.is_finite() || !(lower < upper) {
            return Err(Error::Fit {
                reason: format!(
                    "bounds for {} must be finite with lower < upper (got [{lower}, {upper}])",
                    kind.name()
                ),
            });
        }
        let (hard_lo, hard_hi) = kind.admissible();
        if lower < hard_lo || upper > hard_hi {
            return Err(Error::Fit {
                reason: format!(
                    "bounds [{lower}, {upper}] for {} leave the admissible range",
                    kind.name()
                ),
            });
        }
        Ok(FreeParameter { kind, lower, upper })
    }

    /// Free parameter with the kind's default bounds.
    pub fn with_default_bounds(kind: FitParameterKind) -> FreeParameter {
        let (lower, upper) = kind.default_bounds();
        FreeParameter { kind, lower, upper }
    }
}

/// Observable the fit matches: one or two spectra on a common grid.
#[derive(Debug, Clone)]
pub enum FitData {
    /// Inseparability values (linear, vacuum-normalized).
    Duan(Vec<f64>),
    /// Joint-quadrature variances in dB relative to vacuum.
    QuadraturesDb {
        /// X-sum trace in dB.
        var_xsum_db: Vec<f64>,
        /// Y-difference trace in dB.
        var_ydiff_db: Vec<f64>,
    },
}

impl FitData {
    fn blocks(&self) -> usize {
        match self {
            FitData::Duan(_) => 1,
            FitData::QuadraturesDb { .. } => 2,
        }
    }
}

/// Measured spectrum plus its per-point noise level.
#[derive(Debug, Clone)]
pub struct FitObservation {
    grid: FrequencyGrid,
    data: FitData,
    sigma_db: Vec<f64>,
}

impl FitObservation {
    /// Observation of an inseparability spectrum.
    pub fn duan(grid: FrequencyGrid, duan: Vec<f64>, sigma_db: Vec<f64>) -> Result<FitObservation> {
        if duan.len() != grid.len() {
            return Err(Error::LengthMismatch {
                name: "inseparability data",
                expected: grid.len(),
                actual: duan.len(),
            });
        }
        for &d in &duan {
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::invalid(
                    "inseparability data",
                    d,
                    "must be positive and finite",
                ));
            }
        }
        FitObservation::checked(grid, FitData::Duan(duan), sigma_db)
    }

    /// Observation of both joint-quadrature traces in dB.
    pub fn quadratures_db(
        grid: FrequencyGrid,
        var_xsum_db: Vec<f64>,
        var_ydiff_db: Vec<f64>,
        sigma_db: Vec<f64>,
    ) -> Result<FitObservation> {
        for (name, len) in [
            ("X-sum data", var_xsum_db.len()),
            ("Y-difference data", var_ydiff_db.len()),
        ] {
            if len != grid.len() {
                return Err(Error::LengthMismatch {
                    name,
                    expected: grid.len(),
                    actual: len,
                });
            }
        }
        FitObservation::checked(
            grid,
            FitData::QuadraturesDb {
                var_xsum_db,
                var_ydiff_db,
            },
            sigma_db,
        )
    }

    /// Observation taken from an analyzer trace with uniform noise level.
    pub fn from_trace_set(traces: &TraceSet, sigma_db: f64) -> Result<FitObservation> {
        FitObservation::quadratures_db(
            traces.grid().clone(),
            traces.var_xsum_db().to_vec(),
            traces.var_ydiff_db().to_vec(),
            vec![sigma_db; traces.grid().len()],
        )
    }

    fn checked(grid: FrequencyGrid, data: FitData, sigma_db: Vec<f64>) -> Result<FitObservation> {
        if sigma_db.len() != grid.len() {
            return Err(Error::LengthMismatch {
                name: "noise levels",
                expected: grid.len(),
                actual: sigma_db.len(),
            });
        }
        for &s in &sigma_db {
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::invalid(
                    "noise level",
                    s,
                    "must be positive and finite",
                ));
            }
        }
        Ok(FitObservation {
            grid,
            data,
            sigma_db,
        })
    }

    /// Frequency grid of the observation.
    pub fn grid(&self) -> &FrequencyGrid {
        &self.grid
    }
}

/// Space in which residuals are formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ResidualDomain {
    /// `(model_dB − data_dB) / σ_dB`; matches the analyzer noise model.
    Decibel,
    /// Linear-variance residuals with noise levels propagated from dB.
    Linear,
}

/// Complete fit problem: data, forward model, and solver settings.
#[derive(Debug, Clone)]
pub struct FitProblem {
    observation: FitObservation,
    base_model: ExperimentModel,
    sweep: SweepConfig,
    free: Vec<FreeParameter>,
    exclusion_windows: Vec<(f64, f64)>,
    unmasked: Vec<usize>,
    domain: ResidualDomain,
    n_starts: usize,
    seed: u64,
    max_iterations: usize,
}

impl FitProblem {
    /// Builds a problem with no exclusions, dB residuals, and the default
    /// multi-start schedule.
    ///
    /// The sweep grid must equal the observation grid, at least one
    /// parameter must be free with no kind repeated, and at least five
    /// unmasked points per free parameter must remain.
    pub fn new(
        observation: FitObservation,
        base_model: ExperimentModel,
        sweep: SweepConfig,
        free: Vec<FreeParameter>,
    ) -> Result<FitProblem> {
        if sweep.grid != observation.grid {
            return Err(Error::Fit {
                reason: "sweep grid must match the observation grid".into(),
            });
        }
        if free.is_empty() {
            return Err(Error::Fit {
                reason: "at least one free parameter is required".into(),
            });
        }
        for (i, a) in free.iter().enumerate() {
            if free[..i].iter().any(|b| b.kind == a.kind) {
                return Err(Error::Fit {
                    reason: format!("parameter {} listed twice", a.kind.name()),
                });
            }
        }
        let mut problem = FitProblem {
            observation,
            base_model,
            sweep,
            free,
            exclusion_windows: Vec::new(),
            unmasked: Vec::new(),
            domain: ResidualDomain::Decibel,
            n_starts: DEFAULT_STARTS,
            seed: 0,
            max_iterations: MAX_ITERATIONS,
        };
        problem.refresh_mask()?;
        Ok(problem)
    }

    /// Masks frequency windows (e.g. spur locations) out of the fit.
    pub fn with_exclusion_windows(mut self, windows: Vec<(f64, f64)>) -> Result<FitProblem> {
        for &(lo, hi) in &windows {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::Fit {
                    reason: format!("exclusion window [{lo}, {hi}] is not a valid range"),
                });
            }
        }
        self.exclusion_windows = windows;
        self.refresh_mask()?;
        Ok(self)
    }

    /// Switches the residual domain.
    pub fn with_domain(mut self, domain: ResidualDomain) -> FitProblem {
        self.domain = domain;
        self
    }

    /// Sets the number of multi-start attempts (at least 1).
    pub fn with_starts(mut self, n_starts: usize) -> Result<FitProblem> {
        if n_starts == 0 {
            return Err(Error::Fit {
                reason: "at least one start is required".into(),
            });
        }
        self.n_starts = n_starts;
        Ok(self)
    }

    /// Sets the seed for the multi-start schedule.
    pub fn with_seed(mut self, seed: u64) -> FitProblem {
        self.seed = seed;
        self
    }

    /// Overrides the per-start iteration cap (at least 1).
    pub fn with_max_iterations(mut self, max_iterations: usize) -> Result<FitProblem> {
        if max_iterations == 0 {
            return Err(Error::Fit {
                reason: "iteration cap must be positive".into(),
            });
        }
        self.max_iterations = max_iterations;
        Ok(self)
    }

    fn refresh_mask(&mut self) -> Result<()> {
        self.unmasked = self
            .observation
            .grid
            .points()
            .iter()
            .enumerate()
            .filter(|(_, &f)| {
                !self
                    .exclusion_windows
                    .iter()
                    .any(|&(lo, hi)| f >= lo && f <= hi)
            })
            .map(|(i, _)| i)
            .collect();
        let needed = 5 * self.free.len();
        if self.unmasked.len() < needed {
            return Err(Error::Fit {
                reason: format!(
                    "insufficient unmasked points: {} remain but {} free parameters \
                     need at least {needed}",
                    self.unmasked.len(),
                    self.free.len()
                ),
            });
        }
        Ok(())
    }

    /// Free parameters in fit order.
    pub fn free_parameters(&self) -> &[FreeParameter] {
        &self.free
    }

    /// Indices of grid points that survive the exclusion windows.
    pub fn unmasked_indices(&self) -> &[usize] {
        &self.unmasked
    }

    /// Number of residual entries (unmasked points times data blocks).
    pub fn residual_len(&self) -> usize {
        self.unmasked.len() * self.observation.data.blocks()
    }

    /// Builds the model and sweep configuration for a candidate parameter
    /// vector (ordered as [`FitProblem::free_parameters`]).
    ///
    /// A fitted gain ratio replaces any per-band gain schedule with a single
    /// global setting `g_A = ratio, g_B = 1`; a clearance offset requires
    /// both clearance curves to be present in the base model.
    pub fn apply_parameters(&self, theta: &[f64]) -> Result<(ExperimentModel, SweepConfig)> {
        if theta.len() != self.free.len() {
            return Err(Error::LengthMismatch {
                name: "parameter vector",
                expected: self.free.len(),
                actual: theta.len(),
            });
        }
        let mut model = self.base_model.clone();
        let mut sweep_config = self.sweep.clone();
        for (free, &value) in self.free.iter().zip(theta) {
            match free.kind {
                FitParameterKind::EtaTotal => {
                    model.detection.efficiency = crate::channel::EfficiencyModel::Total(value);
                }
                FitParameterKind::PumpRatioX => {
                    model.entangler.source_a.pump_ratio_x = value;
                    model.entangler.source_b.pump_ratio_x = value;
                }
                FitParameterKind::GammaHwhm => {
                    model.entangler.source_a.gamma_hwhm_hz = value;
                    model.entangler.source_b.gamma_hwhm_hz = value;
                }
                FitParameterKind::GainRatio => {
                    model.detection.gain_a = DetectorGain::Flat(value);
                    model.detection.gain_b = DetectorGain::Flat(1.0);
                    sweep_config.band_splits = None;
                }
                FitParameterKind::ClearanceOffsetDb => {
                    match (
                        &self.base_model.detection.clearance_a_db,
                        &self.base_model.detection.clearance_b_db,
                    ) {
                        (Some(a), Some(b)) => {
                            model.detection.clearance_a_db = Some(a.shifted(value));
                            model.detection.clearance_b_db = Some(b.shifted(value));
                        }
                        _ => {
                            return Err(Error::Fit {
                                reason: "clearance_offset_db requires dark-clearance \
                                         curves on both detectors in the base model"
                                    .into(),
                            });
                        }
                    }
                }
            }
        }
        Ok((model, sweep_config))
    }
}

/// Weighted residual vector at a candidate parameter point.
///
/// Runs the analyzer sweep with the candidate parameters, then forms
/// `(model − data) / σ` per unmasked point in the configured domain; with
/// quadrature data the X-sum block precedes the Y-difference block. Model
/// evaluation failures surface with the offending parameter values attached.
pub fn model_residuals(theta: &[f64], problem: &FitProblem) -> Result<DVector<f64>> {
    let (model, sweep_config) = problem.apply_parameters(theta)?;
    let traces = sweep(&model, &sweep_config).map_err(|e| Error::Fit {
        reason: format!(
            "model evaluation failed at {}: {e}",
            describe_theta(&problem.free, theta)
        ),
    })?;
    let mut residuals = Vec::with_capacity(problem.residual_len());
    match &problem.observation.data {
        FitData::Duan(data) => {
            for &i in &problem.unmasked {
                residuals.push(residual_entry(
                    traces.duan()[i],
                    data[i],
                    problem.observation.sigma_db[i],
                    problem.domain,
                ));
            }
        }
        FitData::QuadraturesDb {
            var_xsum_db,
            var_ydiff_db,
        } => {
            for &i in &problem.unmasked {
                residuals.push(residual_entry_db(
                    traces.var_xsum_db()[i],
                    var_xsum_db[i],
                    problem.observation.sigma_db[i],
                    problem.domain,
                ));
            }
            for &i in &problem.unmasked {
                residuals.push(residual_entry_db(
                    traces.var_ydiff_db()[i],
                    var_ydiff_db[i],
                    problem.observation.sigma_db[i],
                    problem.domain,
                ));
            }
        }
    }
    Ok(DVector::from_vec(residuals))
}

fn residual_entry(model_linear: f64, data_linear: f64, sigma_db: f64, domain: ResidualDomain) -> f64 {
    match domain {
        ResidualDomain::Decibel => {
            (10.0 * (model_linear / data_linear).log10()) / sigma_db
        }
        ResidualDomain::Linear => {
            // Delta-method propagation of the dB noise level to linear units.
            let sigma_linear = data_linear * sigma_db * std::f64::consts::LN_10 / 10.0;
            (model_linear - data_linear) / sigma_linear
        }
    }
}

fn residual_entry_db(model_db: f64, data_db: f64, sigma_db: f64, domain: ResidualDomain) -> f64 {
    match domain {
        ResidualDomain::Decibel => (model_db - data_db) / sigma_db,
        ResidualDomain::Linear => {
            let model_linear = 10f64.powf(model_db / 10.0);
            let data_linear = 10f64.powf(data_db / 10.0);
            let sigma_linear = data_linear * sigma_db * std::f64::consts::LN_10 / 10.0;
            (model_linear - data_linear) / sigma_linear
        }
    }
}

fn describe_theta(free: &[FreeParameter], theta: &[f64]) -> String {
    free.iter()
        .zip(theta)
        .map(|(f, v)| format!("{} = {v}", f.kind.name()))
        .collect::<Vec<_>>()
        .join(", ")
}

fn logistic(u: f64) -> f64 {
    1.0 / (1.0 + (-u).exp())
}

fn to_theta(free: &[FreeParameter], u: &DVector<f64>) -> Vec<f64> {
    free.iter()
        .zip(u.iter())
        .map(|(f, &ui)| f.lower + (f.upper - f.lower) * logistic(ui))
        .collect()
}

fn theta_derivative(free: &FreeParameter, u: f64) -> f64 {
    let s = logistic(u);
    (free.upper - free.lower) * s * (1.0 - s)
}

/// Maps a bounded value into the unconstrained fit space.
pub fn to_unconstrained(free: &FreeParameter, theta: f64) -> Result<f64> {
    if !(theta > free.lower && theta < free.upper) {
        return Err(Error::Fit {
            reason: format!(
                "{} = {theta} is not strictly inside [{}, {}]",
                free.kind.name(),
                free.lower,
                free.upper
            ),
        });
    }
    Ok(((theta - free.lower) / (free.upper - theta)).ln())
}

struct StartOutcome {
    u: DVector<f64>,
    objective: f64,
    iterations: usize,
    converged: bool,
}

fn residuals_at(problem: &FitProblem, u: &DVector<f64>) -> Result<DVector<f64>> {
    model_residuals(&to_theta(&problem.free, u), problem)
}

fn jacobian_at(
    problem: &FitProblem,
    u: &DVector<f64>,
    base: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    let n = problem.free.len();
    let mut j = DMatrix::zeros(base.len(), n);
    for col in 0..n {
        let step = FD_RELATIVE_STEP * u[col].abs().max(1.0);
        let mut shifted = u.clone();
        shifted[col] += step;
        let perturbed = residuals_at(problem, &shifted)?;
        for row in 0..base.len() {
            j[(row, col)] = (perturbed[row] - base[row]) / step;
        }
    }
    Ok(j)
}

fn levenberg_marquardt(problem: &FitProblem, start: DVector<f64>) -> Result<StartOutcome> {
    let n = problem.free.len();
    let mut u = start;
    let mut residuals = residuals_at(problem, &u)?;
    let mut cost = residuals.norm_squared();
    let mut lambda = 1.0e-3;
    let mut recent: Vec<f64> = Vec::with_capacity(CONVERGENCE_SPAN);
    let mut iterations = 0;
    let mut converged = false;

    while iterations < problem.max_iterations {
        iterations += 1;
        if cost == 0.0 {
            converged = true;
            break;
        }
        let jacobian = jacobian_at(problem, &u, &residuals)?;
        let jtj = jacobian.transpose() * &jacobian;
        let jtr = jacobian.transpose() * &residuals;
        let mut accepted = false;
        while lambda <= 1.0e14 {
            let mut damped = jtj.clone();
            for d in 0..n {
                damped[(d, d)] += lambda * jtj[(d, d)].max(1.0e-12);
            }
            let Some(delta) = damped.lu().solve(&(-&jtr)) else {
                lambda *= 10.0;
                continue;
            };
            let candidate = &u + &delta;
            let Ok(candidate_residuals) = residuals_at(problem, &candidate) else {
                lambda *= 10.0;
                continue;
            };
            let candidate_cost = candidate_residuals.norm_squared();
            if candidate_cost <= cost && candidate_cost.is_finite() {
                // Accepted steps never increase the objective.
                debug_assert!(candidate_cost <= cost);
                let relative_decrease = (cost - candidate_cost) / cost;
                u = candidate;
                residuals = candidate_residuals;
                cost = candidate_cost;
                lambda = (lambda / 3.0).max(1.0e-12);
                if recent.len() == CONVERGENCE_SPAN {
                    recent.remove(0);
                }
                recent.push(relative_decrease);
                accepted = true;
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // Damping exhausted without any downhill step: the iterate is a
            // (possibly boundary-saturated) stationary point.
            converged = true;
            break;
        }
        if recent.len() == CONVERGENCE_SPAN && recent.iter().all(|&d| d < CONVERGENCE_TOL) {
            converged = true;
            break;
        }
    }

    Ok(StartOutcome {
        u,
        objective: cost,
        iterations,
        converged,
    })
}

fn start_points(problem: &FitProblem) -> Vec<DVector<f64>> {
    let n = problem.free.len();
    let mut starts = Vec::with_capacity(problem.n_starts);
    // Start 0 sits at the bound-interval midpoint; the rest scatter over the
    // well-conditioned part of the logistic transform.
    starts.push(DVector::zeros(n));
    for index in 1..problem.n_starts {
        let mut rng = ChaCha8Rng::seed_from_u64(problem.seed);
        rng.set_stream(index as u64);
        starts.push(DVector::from_fn(n, |_, _| rng.random_range(-3.0..3.0)));
    }
    starts
}

/// One fitted parameter with its uncertainty and boundary status.
#[derive(Debug, Clone, Serialize)]
pub struct FittedParameter {
    /// Which quantity this is.
    pub kind: FitParameterKind,
    /// Point estimate (always strictly inside the bounds).
    pub value: f64,
    /// One-sigma uncertainty from the quadratic approximation, when the
    /// normal matrix is invertible.
    pub uncertainty: Option<f64>,
    /// Estimate pinned against the lower bound.
    pub at_lower: bool,
    /// Estimate pinned against the upper bound.
    pub at_upper: bool,
}

/// Outcome of a fit: estimates, fit quality, and diagnostics.
#[derive(Debug, Clone)]
pub struct FitResult {
    parameters: Vec<FittedParameter>,
    residual_rms_db: f64,
    weighted_rms: f64,
    objective: f64,
    iterations: usize,
    converged: bool,
    n_points: usize,
    start_index: usize,
    covariance: Option<DMatrix<f64>>,
}

impl FitResult {
    /// Fitted parameters in problem order.
    pub fn parameters(&self) -> &[FittedParameter] {
        &self.parameters
    }

    /// Fitted parameter of a given kind, if it was free.
    pub fn parameter(&self, kind: FitParameterKind) -> Option<&FittedParameter> {
        self.parameters.iter().find(|p| p.kind == kind)
    }

    /// Root-mean-square of the unweighted dB deviations at the optimum.
    pub fn residual_rms_db(&self) -> f64 {
        self.residual_rms_db
    }

    /// Root-mean-square of the weighted residuals (≈ 1 for a good fit with
    /// correctly stated noise).
    pub fn weighted_rms(&self) -> f64 {
        self.weighted_rms
    }

    /// Final objective value (sum of squared weighted residuals).
    pub fn objective(&self) -> f64 {
        self.objective
    }

    /// Iterations used by the winning start.
    pub fn iterations(&self) -> usize {
        self.iterations
    }

    /// True when the winning start met the convergence test.
    pub fn converged(&self) -> bool {
        self.converged
    }

    /// Number of unmasked data points.
    pub fn n_points(&self) -> usize {
        self.n_points
    }

    /// Index of the winning start.
    pub fn start_index(&self) -> usize {
        self.start_index
    }

    /// Parameter covariance in physical units, when available.
    pub fn covariance(&self) -> Option<&DMatrix<f64>> {
        self.covariance.as_ref()
    }

    /// Serializable summary, echoing the masked windows.
    pub fn report(&self, problem: &FitProblem) -> FitReport {
        FitReport {
            parameters: self
                .parameters
                .iter()
                .map(|p| ReportedParameter {
                    name: p.kind.name(),
                    value: p.value,
                    uncertainty: p.uncertainty,
                    at_lower_bound: p.at_lower,
                    at_upper_bound: p.at_upper,
                })
                .collect(),
            residual_rms_db: self.residual_rms_db,
            weighted_rms: self.weighted_rms,
            objective: self.objective,
            iterations: self.iterations,
            converged: self.converged,
            n_points: self.n_points,
            start_index: self.start_index,
            excluded_windows_hz: problem
                .exclusion_windows
                .iter()
                .map(|&(lo, hi)| [lo, hi])
                .collect(),
            covariance: self
                .covariance
                .as_ref()
                .map(|c| c.row_iter().map(|r| r.iter().cloned().collect()).collect()),
        }
    }
}

/// JSON-friendly fit summary.
#[derive(Debug, Clone, Serialize)]
pub struct FitReport {
    /// Fitted parameters with uncertainties and boundary flags.
    pub parameters: Vec<ReportedParameter>,
    /// RMS of the unweighted dB deviations.
    pub residual_rms_db: f64,
    /// RMS of the weighted residuals.
    pub weighted_rms: f64,
    /// Final objective value.
    pub objective: f64,
    /// Iterations used by the winning start.
    pub iterations: usize,
    /// Whether the convergence test was met.
    pub converged: bool,
    /// Number of unmasked points.
    pub n_points: usize,
    /// Index of the winning start.
    pub start_index: usize,
    /// Excluded frequency windows, echoed from the problem.
    pub excluded_windows_hz: Vec<[f64; 2]>,
    /// Parameter covariance (row-major), when available.
    pub covariance: Option<Vec<Vec<f64>>>,
}

/// One parameter entry of a [`FitReport`].
#[derive(Debug, Clone, Serialize)]
pub struct ReportedParameter {
    /// Stable parameter name.
    pub name: &'static str,
    /// Point estimate.
    pub value: f64,
    /// One-sigma uncertainty, when available.
    pub uncertainty: Option<f64>,
    /// Pinned at the lower bound.
    pub at_lower_bound: bool,
    /// Pinned at the upper bound.
    pub at_upper_bound: bool,
}

/// Runs the bounded fit: multi-start damped least squares with deterministic
/// best-of selection (lowest objective, ties broken by start index).
///
/// Starts are independent and run in parallel; a start that cannot evaluate
/// the model is dropped, and only if every start fails does the error
/// propagate. Non-convergence is reported via [`FitResult::converged`], with
/// the best iterate retained.
pub fn fit(problem: &FitProblem) -> Result<FitResult> {
    let starts = start_points(problem);
    let mut outcomes: Vec<(usize, Result<StartOutcome>)> = Vec::with_capacity(starts.len());
    std::thread::scope(|scope| {
        let handles: Vec<_> = starts
            .into_iter()
            .enumerate()
            .map(|(index, start)| {
                scope.spawn(move || (index, levenberg_marquardt(problem, start)))
            })
            .collect();
        for handle in handles {
            outcomes.push(handle.join().expect("fit worker panicked"));
        }
    });
    outcomes.sort_by_key(|(index, _)| *index);

    let mut best: Option<(usize, StartOutcome)> = None;
    let mut first_error = None;
    for (index, outcome) in outcomes {
        match outcome {
            Ok(o) => {
                let better = match &best {
                    None => true,
                    Some((_, current)) => o.objective < current.objective,
                };
                if better {
                    best = Some((index, o));
                }
            }
            Err(e) => {
                if first_error.is_none() {
                    first_error = Some(e);
                }
            }
        }
    }
    let (start_index, outcome) = match best {
        Some(found) => found,
        None => {
            return Err(first_error.unwrap_or(Error::Fit {
                reason: "no starts were attempted".into(),
            }));
        }
    };

    summarize(problem, start_index, outcome)
}

fn summarize(problem: &FitProblem, start_index: usize, outcome: StartOutcome) -> Result<FitResult> {
    let theta = to_theta(&problem.free, &outcome.u);
    let residuals = residuals_at(problem, &outcome.u)?;
    let n_res = residuals.len() as f64;
    let weighted_rms = (residuals.norm_squared() / n_res).sqrt();
    let residual_rms_db = rms_db(problem, &theta)?;

    // Covariance of the transformed parameters from the normal matrix, then
    // scaled into physical units by the chain rule of the bound transform.
    let jacobian = jacobian_at(problem, &outcome.u, &residuals)?;
    let covariance = (jacobian.transpose() * &jacobian).try_inverse().map(|cov_u| {
        let scale: Vec<f64> = problem
            .free
            .iter()
            .zip(outcome.u.iter())
            .map(|(f, &ui)| theta_derivative(f, ui))
            .collect();
        DMatrix::from_fn(scale.len(), scale.len(), |r, c| {
            cov_u[(r, c)] * scale[r] * scale[c]
        })
    });

    let parameters = problem
        .free
        .iter()
        .enumerate()
        .map(|(i, free)| {
            let position = (theta[i] - free.lower) / (free.upper - free.lower);
            FittedParameter {
                kind: free.kind,
                value: theta[i],
                uncertainty: covariance.as_ref().and_then(|c| {
                    let v = c[(i, i)];
                    (v.is_finite() && v >= 0.0).then(|| v.sqrt())
                }),
                at_lower: position < BOUNDARY_MARGIN,
                at_upper: position > 1.0 - BOUNDARY_MARGIN,
            }
        })
        .collect();

    Ok(FitResult {
        parameters,
        residual_rms_db,
        weighted_rms,
        objective: outcome.objective,
        iterations: outcome.iterations,
        converged: outcome.converged,
        n_points: problem.unmasked.len(),
        start_index,
        covariance,
    })
}

fn rms_db(problem: &FitProblem, theta: &[f64]) -> Result<f64> {
    let (model, sweep_config) = problem.apply_parameters(theta)?;
    let traces = sweep(&model, &sweep_config).map_err(|e| Error::Fit {
        reason: format!("model evaluation failed while summarizing: {e}"),
    })?;
    let mut total = 0.0;
    let mut count = 0usize;
    match &problem.observation.data {
        FitData::Duan(data) => {
            for &i in &problem.unmasked {
                let dev = 10.0 * (traces.duan()[i] / data[i]).log10();
                total += dev * dev;
                count += 1;
            }
        }
        FitData::QuadraturesDb {
            var_xsum_db,
            var_ydiff_db,
        } => {
            for &i in &problem.unmasked {
                let dx = traces.var_xsum_db()[i] - var_xsum_db[i];
                let dy = traces.var_ydiff_db()[i] - var_ydiff_db[i];
                total += dx * dx + dy * dy;
                count += 2;
            }
        }
    }
    Ok((total / count as f64).sqrt())
}
