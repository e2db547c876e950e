//! Fixed points, Jacobians, linear stability and oscillation detection.

use num_complex::Complex64;
use serde::Serialize;

use crate::dynamics::{PopulationState, Protocol, StateLayout, System, VectorField};
use crate::error::{Error, Result};
use crate::game::GameKind;
use crate::integrator::{Component, Trajectory};
use crate::linalg::Matrix;

/// Catalog entries whose field residual exceeds this are rejected.
pub const RESIDUAL_TOL: f64 = 1e-9;
/// Max-norm radius within which numerically found points are merged.
pub const DEDUP_RADIUS: f64 = 1e-6;
/// Step of the finite-difference Jacobian.
pub const FD_STEP: f64 = 1e-6;
/// Positive-part arguments closer to zero than this mark a kink.
pub const KINK_TOL: f64 = 1e-9;
const DOMAIN_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum JacobianMode {
    Analytic,
    FiniteDifference,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stability {
    AsymptoticallyStable,
    Unstable,
    /// Purely imaginary spectrum. This is a statement about the
    /// linearization only; whether orbits close must be checked on
    /// trajectories.
    #[serde(rename = "linear_center")]
    NeutralCenter,
    Marginal,
    Undetermined,
}

impl std::fmt::Display for Stability {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stability::AsymptoticallyStable => "asymptotically stable",
            Stability::Unstable => "unstable",
            Stability::NeutralCenter => "linear center",
            Stability::Marginal => "marginal",
            Stability::Undetermined => "undetermined",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Catalog,
    NumericalSearch,
}

/// Real/imaginary thresholds used to decide eigenvalue signs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Tolerances {
    pub re_tol: f64,
    pub im_tol: f64,
}

impl Tolerances {
    pub fn for_mode(mode: JacobianMode) -> Self {
        match mode {
            JacobianMode::Analytic => Tolerances { re_tol: 1e-8, im_tol: 1e-8 },
            JacobianMode::FiniteDifference => Tolerances { re_tol: 1e-5, im_tol: 1e-5 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JacobianEval {
    pub matrix: Matrix,
    pub mode: JacobianMode,
    /// The point sits on a kink of a positive part; one-sided differences were used.
    pub nonsmooth: bool,
}

/// Jacobian of `field` at coordinates `y`.
///
/// Finite differences are central with step [`FD_STEP`], or forward when the
/// point lies on a kink of the field.
pub fn jacobian<F: VectorField + ?Sized>(field: &F, y: &[f64], mode: JacobianMode) -> Result<JacobianEval> {
    match mode {
        JacobianMode::Analytic => {
            Ok(JacobianEval { matrix: field.analytic_jacobian(y)?, mode, nonsmooth: false })
        }
        JacobianMode::FiniteDifference => {
            let nonsmooth = field.kink_distance(y) < KINK_TOL;
            Ok(JacobianEval { matrix: fd_jacobian(field, y, FD_STEP, !nonsmooth), mode, nonsmooth })
        }
    }
}

fn fd_jacobian<F: VectorField + ?Sized>(field: &F, y: &[f64], h: f64, central: bool) -> Matrix {
    let d = y.len();
    let mut jac = Matrix::zeros(d);
    let base = if central { Vec::new() } else { field.eval_vec(y) };
    let mut probe = y.to_vec();
    let mut plus = vec![0.0; d];
    let mut minus = vec![0.0; d];
    for col in 0..d {
        probe[col] = y[col] + h;
        field.eval(&probe, &mut plus);
        if central {
            probe[col] = y[col] - h;
            field.eval(&probe, &mut minus);
        }
        probe[col] = y[col];
        for row in 0..d {
            jac[(row, col)] = if central {
                (plus[row] - minus[row]) / (2.0 * h)
            } else {
                (plus[row] - base[row]) / h
            };
        }
    }
    jac
}

/// Stability class from a spectrum; the flag marks eigenvalues of both signs.
pub fn classify(eigenvalues: &[Complex64], tol: Tolerances) -> (Stability, bool) {
    let positive = eigenvalues.iter().any(|e| e.re > tol.re_tol);
    let negative = eigenvalues.iter().any(|e| e.re < -tol.re_tol);
    let saddle = positive && negative;
    let class = if eigenvalues.iter().all(|e| e.re < -tol.re_tol) {
        Stability::AsymptoticallyStable
    } else if positive {
        Stability::Unstable
    } else if eigenvalues.iter().all(|e| e.re.abs() < tol.re_tol) && eigenvalues.iter().any(|e| e.im.abs() > tol.im_tol)
    {
        Stability::NeutralCenter
    } else if eigenvalues.iter().any(|e| e.re.abs() < tol.re_tol && e.im.abs() < tol.im_tol) {
        Stability::Marginal
    } else {
        Stability::Undetermined
    };
    (class, saddle)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FixedPointReport {
    pub label: Option<String>,
    pub point: PopulationState,
    pub coords: Vec<f64>,
    pub residual: f64,
    pub jacobian: Matrix,
    pub jacobian_mode: JacobianMode,
    pub nonsmooth: bool,
    pub eigenvalues: Vec<Complex64>,
    pub class: Stability,
    pub saddle: bool,
    pub in_domain: bool,
    pub provenance: Provenance,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Whether coordinates lie in the admissible domain (within 1e-9).
pub fn in_domain(layout: &StateLayout, y: &[f64]) -> bool {
    let unit = |v: f64| (-DOMAIN_TOL..=1.0 + DOMAIN_TOL).contains(&v);
    if !y.iter().all(|&v| unit(v)) {
        return false;
    }
    layout.kind != GameKind::Opd || y[0] + y[1] <= 1.0 + DOMAIN_TOL
}

/// Evaluates residual, Jacobian, spectrum and stability class at `y`.
/// Analytic mode falls back to finite differences when no formula exists.
pub fn analyze_point<F: VectorField + ?Sized>(
    field: &F,
    y: &[f64],
    mode: JacobianMode,
    provenance: Provenance,
    label: Option<String>,
) -> FixedPointReport {
    let layout = field.layout();
    let residual = norm(&field.eval_vec(y));
    let jac = match jacobian(field, y, mode) {
        Ok(j) => j,
        Err(_) => jacobian(field, y, JacobianMode::FiniteDifference).expect("finite differences always apply"),
    };
    let eigenvalues = jac.matrix.eigenvalues();
    let (class, saddle) = classify(&eigenvalues, Tolerances::for_mode(jac.mode));
    FixedPointReport {
        label,
        point: layout.from_coords(y, 0.0, 1.0),
        coords: y.to_vec(),
        residual,
        jacobian: jac.matrix,
        jacobian_mode: jac.mode,
        nonsmooth: jac.nonsmooth,
        eigenvalues,
        class,
        saddle,
        in_domain: in_domain(&layout, y),
        provenance,
    }
}

/// A closed-form candidate that is not a fixed point of the system.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RejectedPoint {
    pub label: String,
    pub coords: Option<Vec<f64>>,
    pub residual: Option<f64>,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct Catalog {
    pub accepted: Vec<FixedPointReport>,
    pub rejected: Vec<RejectedPoint>,
}

impl Catalog {
    pub fn find(&self, label: &str) -> Option<&FixedPointReport> {
        self.accepted.iter().find(|r| r.label.as_deref() == Some(label))
    }
}

/// Closed-form fixed points for the system, each checked against the actual
/// field. Candidates with residual above [`RESIDUAL_TOL`], or whose formula is
/// undefined for these payoffs, are listed as rejected with a note.
pub fn catalog_fixed_points(system: &System) -> Catalog {
    let game = system.game();
    let d = *game.deltas();
    let spec = *game.spec();
    let lambda = system.coupling().map(|c| c.lambda);
    let ratio = |num: f64, den: f64| if den == 0.0 { None } else { Some(num / den) };
    // root of d_TR x + d_PS (1 - x)
    let mixed = ratio(d.ps, d.ps - d.tr);

    let mut candidates: Vec<(String, Option<Vec<f64>>)> = Vec::new();
    let mut add = |label: &str, coords: Option<Vec<f64>>| candidates.push((label.to_string(), coords));

    match (game.kind(), lambda) {
        (GameKind::Pd, None) => {
            add("all defect", Some(vec![0.0]));
            match system.protocol() {
                Protocol::Replicator => {
                    add("all cooperate", Some(vec![1.0]));
                    add("mixed root d_PS/(d_PS - d_TR)", mixed.map(|x| vec![x]));
                }
                Protocol::PairwiseComparison => {
                    add("mixed root d_PS/(d_PS - d_TR)", mixed.map(|x| vec![x]));
                    add("mixed root 1 - d_PS/d_TR", ratio(d.ps, d.tr).map(|q| vec![1.0 - q]));
                }
            }
        }
        (GameKind::Pd, Some(lambda)) => {
            if system.protocol() == Protocol::Replicator {
                add("defectors, depleted", Some(vec![0.0, 0.0]));
                add("defectors, replete", Some(vec![0.0, 1.0]));
            }
            add("cooperators, depleted", Some(vec![1.0, 0.0]));
            add("cooperators, replete", Some(vec![1.0, 1.0]));
            add("mixed root, depleted", mixed.map(|x| vec![x, 0.0]));
            add("mixed root, replete", mixed.map(|x| vec![x, 1.0]));
            add("interior", Some(vec![1.0 / (1.0 + lambda), 0.5]));
        }
        (GameKind::Opd, Some(lambda)) => {
            let l = spec.l.unwrap_or_default();
            let coop = 1.0 / (1.0 + lambda);
            let edge = mixed.zip(ratio(-d.tr, d.ps - d.tr));
            add("row 1: all abstain, depleted", Some(vec![0.0, 0.0, 0.0]));
            add("row 2: all cooperate, depleted", Some(vec![1.0, 0.0, 0.0]));
            add("row 3: all defect, depleted", Some(vec![0.0, 1.0, 0.0]));
            add("row 4: all abstain, replete", Some(vec![0.0, 0.0, 1.0]));
            add("row 5: all cooperate, replete", Some(vec![1.0, 0.0, 1.0]));
            add("row 6: all defect, replete", Some(vec![0.0, 1.0, 1.0]));
            add("row 7: edge root, depleted", edge.map(|(a, b)| vec![a, b, 0.0]));
            add("row 8: edge root, replete", edge.map(|(a, b)| vec![a, b, 1.0]));
            add("row 9: no abstainers", Some(vec![coop, lambda / (1.0 + lambda), 0.5]));
            add(
                "row 10: interior",
                ratio(-(spec.r - 2.0 * l + spec.t), (spec.p - 2.0 * l + spec.s) * (1.0 + lambda))
                    .map(|x2| vec![coop, x2, 0.5]),
            );
            add("row 11: no defectors", ratio(l - spec.t, spec.r - spec.t).map(|n| vec![coop, 0.0, n]));
        }
        (GameKind::Opd, None) => {
            add("all cooperate", Some(vec![1.0, 0.0]));
            add("all defect", Some(vec![0.0, 1.0]));
            add("all abstain", Some(vec![0.0, 0.0]));
        }
    }

    let mode = preferred_mode(system);
    let mut catalog = Catalog::default();
    for (label, coords) in candidates {
        let Some(y) = coords else {
            catalog.rejected.push(RejectedPoint {
                label,
                coords: None,
                residual: None,
                note: "formula undefined for these payoffs (zero denominator)".into(),
            });
            continue;
        };
        let residual = norm(&system.eval_vec(&y));
        if residual > RESIDUAL_TOL {
            catalog.rejected.push(RejectedPoint {
                label,
                coords: Some(y),
                residual: Some(residual),
                note: format!("field residual {residual:.3e} exceeds {RESIDUAL_TOL:e}"),
            });
            continue;
        }
        catalog.accepted.push(analyze_point(system, &y, mode, Provenance::Catalog, Some(label)));
    }
    catalog
}

/// Analytic when the system has a formula, finite differences otherwise.
pub fn preferred_mode<F: VectorField + ?Sized>(field: &F) -> JacobianMode {
    let probe = vec![0.5 / field.layout().dim() as f64; field.layout().dim()];
    match field.analytic_jacobian(&probe) {
        Ok(_) => JacobianMode::Analytic,
        Err(_) => JacobianMode::FiniteDifference,
    }
}

/// Box (optionally intersected with `x1 + x2 <= 1`) in which to seed and keep roots.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchDomain {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub simplex: bool,
}

impl SearchDomain {
    /// The admissible state domain of a layout.
    pub fn admissible(layout: &StateLayout) -> Self {
        let d = layout.dim();
        SearchDomain { lower: vec![0.0; d], upper: vec![1.0; d], simplex: layout.kind == GameKind::Opd }
    }

    pub fn boxed(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        assert_eq!(lower.len(), upper.len());
        SearchDomain { lower, upper, simplex: false }
    }

    pub fn contains(&self, y: &[f64]) -> bool {
        let inside = y
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(&v, (&lo, &hi))| v >= lo - DOMAIN_TOL && v <= hi + DOMAIN_TOL);
        inside && (!self.simplex || y[0] + y[1] <= 1.0 + DOMAIN_TOL)
    }

    fn seeds(&self, per_axis: usize) -> Vec<Vec<f64>> {
        let d = self.lower.len();
        let mut out = Vec::new();
        let mut idx = vec![0usize; d];
        let last = per_axis - 1;
        loop {
            let y: Vec<f64> = (0..d)
                .map(|k| self.lower[k] + (self.upper[k] - self.lower[k]) * idx[k] as f64 / last as f64)
                .collect();
            if self.contains(&y) {
                out.push(y);
            }
            let mut axis = d;
            loop {
                if axis == 0 {
                    return out;
                }
                axis -= 1;
                idx[axis] += 1;
                if idx[axis] <= last {
                    break;
                }
                idx[axis] = 0;
            }
        }
    }
}

fn newton<F: VectorField + ?Sized>(field: &F, seed: &[f64]) -> Option<Vec<f64>> {
    let mut y = seed.to_vec();
    let mut f = field.eval_vec(&y);
    let mut res = norm(&f);
    for _ in 0..200 {
        if res == 0.0 {
            break;
        }
        let jac = fd_jacobian(field, &y, 1e-7, true);
        let rhs: Vec<f64> = f.iter().map(|v| -v).collect();
        let Some(step) = jac.solve(&rhs) else { break };
        let mut damping = 1.0;
        let mut improved = false;
        for _ in 0..40 {
            let trial: Vec<f64> = y.iter().zip(&step).map(|(a, b)| a + damping * b).collect();
            let ft = field.eval_vec(&trial);
            let rt = norm(&ft);
            if rt.is_finite() && rt < res {
                y = trial;
                f = ft;
                res = rt;
                improved = true;
                break;
            }
            damping *= 0.5;
        }
        let moved = damping * step.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if !improved || moved < 1e-16 {
            break;
        }
    }
    // normalise negative zeros for stable reports
    (res < RESIDUAL_TOL).then(|| y.into_iter().map(|v| v + 0.0).collect())
}

/// Damped Newton from every lattice seed (`seeds` per axis, at least 4).
/// Converged points inside the domain are merged within [`DEDUP_RADIUS`] and
/// classified from finite-difference Jacobians.
pub fn find_fixed_points<F: VectorField + ?Sized>(
    field: &F,
    domain: &SearchDomain,
    seeds: usize,
) -> Result<Vec<FixedPointReport>> {
    if seeds < 4 {
        return Err(Error::InsufficientData(format!("need at least 4 seeds per axis, got {seeds}")));
    }
    if domain.lower.len() != field.layout().dim() {
        return Err(Error::DimensionMismatch { expected: field.layout().dim(), got: domain.lower.len() });
    }
    let mut roots: Vec<(Vec<f64>, f64)> = Vec::new();
    for seed in domain.seeds(seeds) {
        let Some(y) = newton(field, &seed) else { continue };
        if !domain.contains(&y) {
            continue;
        }
        let res = norm(&field.eval_vec(&y));
        match roots.iter_mut().find(|(r, _)| r.iter().zip(&y).all(|(a, b)| (a - b).abs() <= DEDUP_RADIUS)) {
            Some(existing) if res < existing.1 => *existing = (y, res),
            Some(_) => {}
            None => roots.push((y, res)),
        }
    }
    roots.sort_by(|a, b| a.0.iter().zip(&b.0).fold(std::cmp::Ordering::Equal, |o, (x, y)| o.then(x.total_cmp(y))));
    Ok(roots
        .into_iter()
        .map(|(y, _)| analyze_point(field, &y, JacobianMode::FiniteDifference, Provenance::NumericalSearch, None))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AmplitudeTrend {
    Sustained,
    Decaying,
    Growing,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OscillationReport {
    pub oscillating: bool,
    pub estimated_period: Option<f64>,
    /// `None` when fewer than two full swings were seen.
    pub amplitude_trend: Option<AmplitudeTrend>,
    pub extrema_count: usize,
    pub mean_amplitude: Option<f64>,
    /// Relative change of the swing amplitude per period.
    pub drift_per_period: Option<f64>,
}

/// Swings smaller than this are always treated as numerical noise.
pub const MIN_PROMINENCE: f64 = 1e-9;

/// Swings below this multiple of the integrator tolerance are ignored, so a
/// converged trajectory jittering at tolerance level is not an oscillation.
pub const TOLERANCE_PROMINENCE_FACTOR: f64 = 100.0;

#[derive(Clone, Copy, PartialEq)]
enum Turn {
    Max,
    Min,
}

/// Turning points whose reversal exceeds `prominence`.
fn turning_points(t: &[f64], y: &[f64], prominence: f64) -> Vec<(Turn, f64, f64)> {
    let mut out = Vec::new();
    if y.is_empty() {
        return out;
    }
    let (mut hi, mut lo) = (0usize, 0usize);
    let mut trend: Option<Turn> = None;
    for i in 1..y.len() {
        match trend {
            None => {
                if y[i] > y[hi] {
                    hi = i;
                }
                if y[i] < y[lo] {
                    lo = i;
                }
                if y[i] > y[lo] + prominence && lo < i && hi == i {
                    trend = Some(Turn::Max);
                } else if y[i] < y[hi] - prominence && hi < i && lo == i {
                    trend = Some(Turn::Min);
                }
            }
            Some(Turn::Max) => {
                if y[i] > y[hi] {
                    hi = i;
                } else if y[i] < y[hi] - prominence {
                    out.push((Turn::Max, t[hi], y[hi]));
                    trend = Some(Turn::Min);
                    lo = i;
                }
            }
            Some(Turn::Min) => {
                if y[i] < y[lo] {
                    lo = i;
                } else if y[i] > y[lo] + prominence {
                    out.push((Turn::Min, t[lo], y[lo]));
                    trend = Some(Turn::Max);
                    hi = i;
                }
            }
        }
    }
    out
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Looks for sustained oscillation of `component` over the trailing `window`
/// of the trajectory.
pub fn detect_oscillation(traj: &Trajectory, component: Component, window: f64) -> Result<OscillationReport> {
    let (Some(first), Some(last)) = (traj.samples.first(), traj.samples.last()) else {
        return Err(Error::EmptyTrajectory);
    };
    let span = last.t - first.t;
    if !(window > 0.0) || span < 2.0 * window {
        return Err(Error::InsufficientData(format!(
            "trajectory spans {span}, need at least twice the window {window}"
        )));
    }
    let start = last.t - window;
    let (t, y): (Vec<f64>, Vec<f64>) =
        traj.samples.iter().filter(|s| s.t >= start).map(|s| (s.t, component.of(s))).unzip();
    let tol = traj.config.abs_tol.max(traj.config.rel_tol);
    let turns = turning_points(&t, &y, MIN_PROMINENCE.max(TOLERANCE_PROMINENCE_FACTOR * tol));

    let spacing = |kind: Turn| -> Vec<f64> {
        let times: Vec<f64> = turns.iter().filter(|p| p.0 == kind).map(|p| p.1).collect();
        times.windows(2).map(|w| w[1] - w[0]).collect()
    };
    let mut gaps = spacing(Turn::Max);
    gaps.extend(spacing(Turn::Min));
    let period = mean(&gaps);

    // swing of every maximum above the minimum preceding it
    let swings: Vec<(f64, f64)> = turns
        .windows(2)
        .filter(|w| w[0].0 == Turn::Min && w[1].0 == Turn::Max)
        .map(|w| (w[1].1, w[1].2 - w[0].2))
        .collect();
    let amps: Vec<f64> = swings.iter().map(|s| s.1).collect();
    let mean_amp = mean(&amps);
    let (trend, drift) = if swings.len() >= 2 {
        let slope = linear_slope(&swings);
        let m = mean_amp.unwrap_or_default();
        let trend = if slope.abs() * window < 0.01 * m {
            AmplitudeTrend::Sustained
        } else if slope < 0.0 {
            AmplitudeTrend::Decaying
        } else {
            AmplitudeTrend::Growing
        };
        (Some(trend), period.map(|p| slope.abs() * p / m))
    } else {
        (None, None)
    };
    Ok(OscillationReport {
        oscillating: turns.len() >= 4,
        estimated_period: period,
        amplitude_trend: trend,
        extrema_count: turns.len(),
        mean_amplitude: mean_amp,
        drift_per_period: drift,
    })
}

/// Least-squares slope of `(t, v)` pairs.
fn linear_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mt = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mv = points.iter().map(|p| p.1).sum::<f64>() / n;
    let cov: f64 = points.iter().map(|p| (p.0 - mt) * (p.1 - mv)).sum();
    let var: f64 = points.iter().map(|p| (p.0 - mt).powi(2)).sum();
    if var == 0.0 {
        0.0
    } else {
        cov / var
    }
}
