//! Explicit Runge-Kutta integration with projection back onto the state
//! domain, plus regular-lattice sampling of a vector field.

use serde::{Deserialize, Serialize};

use crate::dynamics::{PopulationState, StateLayout, VectorField};
use crate::error::{Error, Result};
use crate::game::GameKind;

/// Clamps smaller than this are numerical noise and are not logged.
pub const CLAMP_LOG_THRESHOLD: f64 = 1e-9;

/// Tolerance for treating an initial state as lying on the `x1 + x2 = 1` face.
const FACE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Classical fourth-order Runge-Kutta with a fixed step.
    Rk4,
    /// Dormand-Prince 5(4) with embedded error control.
    Rk45,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IntegratorConfig {
    pub method: Method,
    /// Fixed step for RK4, initial step for RK45.
    pub step: f64,
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub t_end: f64,
    pub max_steps: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            method: Method::Rk45,
            step: 1e-3,
            abs_tol: 1e-8,
            rel_tol: 1e-8,
            t_end: 30.0,
            max_steps: 5_000_000,
        }
    }
}

impl IntegratorConfig {
    pub fn rk4(step: f64, t_end: f64) -> Self {
        IntegratorConfig { method: Method::Rk4, step, t_end, ..Default::default() }
    }

    pub fn rk45(tol: f64, t_end: f64) -> Self {
        IntegratorConfig { method: Method::Rk45, abs_tol: tol, rel_tol: tol, t_end, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.step) {
            return Err(Error::IntegratorConfig(format!("step must be positive, got {}", self.step)));
        }
        if !positive(self.abs_tol) || !positive(self.rel_tol) {
            return Err(Error::IntegratorConfig("tolerances must be positive".into()));
        }
        if !positive(self.t_end) {
            return Err(Error::IntegratorConfig(format!("t_end must be positive, got {}", self.t_end)));
        }
        if self.max_steps == 0 {
            return Err(Error::IntegratorConfig("max_steps must be positive".into()));
        }
        Ok(())
    }
}

/// A projection of the state back into the admissible domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClampEvent {
    pub t: f64,
    pub component: String,
    pub magnitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub samples: Vec<PopulationState>,
    pub events: Vec<ClampEvent>,
    pub config: IntegratorConfig,
    pub layout: StateLayout,
    /// Largest pre-projection violation of the domain constraints seen at any
    /// step, logged or not.
    pub max_domain_violation: f64,
}

/// Which scalar of a state to look at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    /// Frequency of strategy `i` (0 = cooperators).
    Strategy(usize),
    Environment,
}

impl Component {
    pub fn of(self, s: &PopulationState) -> f64 {
        match self {
            Component::Strategy(i) if i < s.x.len() => s.x[i],
            Component::Strategy(_) => s.implied(),
            Component::Environment => s.n,
        }
    }
}

impl Trajectory {
    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn final_state(&self) -> Option<&PopulationState> {
        self.samples.last()
    }

    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }

    pub fn series(&self, c: Component) -> Vec<f64> {
        self.samples.iter().map(|s| c.of(s)).collect()
    }

    pub fn total_clamp_magnitude(&self) -> f64 {
        self.events.iter().fold(0.0, |acc, e| acc + e.magnitude)
    }

    /// First sample time at which `pred` holds.
    pub fn first_time(&self, pred: impl Fn(&PopulationState) -> bool) -> Option<f64> {
        self.samples.iter().find(|s| pred(s)).map(|s| s.t)
    }

    /// State at time `t` by linear interpolation between samples.
    pub fn state_at(&self, t: f64) -> Option<PopulationState> {
        let first = self.samples.first()?;
        let last = self.samples.last()?;
        if t <= first.t {
            return Some(first.clone().at(t));
        }
        if t >= last.t {
            return Some(last.clone().at(t));
        }
        let k = self.samples.partition_point(|s| s.t <= t);
        let (a, b) = (&self.samples[k - 1], &self.samples[k]);
        let w = (t - a.t) / (b.t - a.t);
        let lerp = |u: f64, v: f64| u + w * (v - u);
        Some(PopulationState {
            x: a.x.iter().zip(&b.x).map(|(&u, &v)| lerp(u, v)).collect(),
            n: lerp(a.n, b.n),
            t,
        })
    }

    /// Uniform resampling with cadence `dt` from the first to the last sample.
    pub fn resample(&self, dt: f64) -> Vec<PopulationState> {
        let (Some(first), Some(last)) = (self.samples.first(), self.samples.last()) else {
            return Vec::new();
        };
        assert!(dt > 0.0, "resampling cadence must be positive");
        let count = ((last.t - first.t) / dt).floor() as usize;
        (0..=count).filter_map(|i| self.state_at(first.t + i as f64 * dt)).collect()
    }
}

struct Projector {
    layout: StateLayout,
    names: Vec<&'static str>,
    pinned_face: bool,
    max_violation: f64,
    events: Vec<ClampEvent>,
}

impl Projector {
    fn new(layout: StateLayout, y0: &[f64]) -> Self {
        let pinned_face = layout.support_invariant
            && layout.kind == GameKind::Opd
            && (1.0 - y0[0] - y0[1]).abs() <= FACE_TOL;
        Projector { layout, names: layout.coord_names(), pinned_face, max_violation: 0.0, events: Vec::new() }
    }

    fn record(&mut self, t: f64, component: &str, magnitude: f64) {
        self.max_violation = self.max_violation.max(magnitude);
        if magnitude > CLAMP_LOG_THRESHOLD {
            self.events.push(ClampEvent { t, component: component.to_string(), magnitude });
        }
    }

    fn project(&mut self, t: f64, y: &mut [f64]) {
        let m = self.layout.kind.free_coords();
        for i in 0..m {
            let v = y[i];
            let c = v.clamp(0.0, 1.0);
            if c != v {
                self.record(t, self.names[i], (v - c).abs());
                y[i] = c;
            }
        }
        if self.layout.kind == GameKind::Opd {
            let excess = y[0] + y[1] - 1.0;
            if self.pinned_face {
                // the face x1 + x2 = 1 is invariant for the exact flow
                self.record(t, "x3", excess.abs());
                y[1] = 1.0 - y[0];
            } else if excess > 0.0 {
                self.record(t, "x3", excess);
                let x1 = (y[0] - excess / 2.0).clamp(0.0, 1.0);
                y[0] = x1;
                y[1] = (1.0 - x1).min(y[1]).max(0.0);
                if y[0] + y[1] > 1.0 {
                    y[1] = 1.0 - y[0];
                }
            }
        }
        if self.layout.feedback {
            let v = y[m];
            let c = v.clamp(0.0, 1.0);
            if c != v {
                self.record(t, "n", (v - c).abs());
                y[m] = c;
            }
        }
    }
}

fn eval_checked<F: VectorField + ?Sized>(field: &F, y: &[f64], dy: &mut [f64], t: f64) -> Result<()> {
    field.eval(y, dy);
    if dy.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteState { t })
    }
}

/// Integrates `field` from `s0` up to `cfg.t_end`.
///
/// Every accepted step is projected back onto the domain: frequencies into
/// `[0, 1]`, `x1 + x2 <= 1`, `n` into `[0, 1]`. When the field preserves the
/// support of the population and `s0` has no abstainers, the trajectory is
/// kept on that face exactly. Projections larger than
/// [`CLAMP_LOG_THRESHOLD`] are recorded as events.
pub fn integrate<F: VectorField + ?Sized>(
    field: &F,
    s0: &PopulationState,
    cfg: &IntegratorConfig,
) -> Result<Trajectory> {
    cfg.validate()?;
    let layout = field.layout();
    s0.validate(layout.kind)?;
    let mut y = layout.to_coords(s0);
    let mut proj = Projector::new(layout, &y);
    let t0 = s0.t;
    proj.project(t0, &mut y);

    let mut samples = vec![layout.from_coords(&y, t0, s0.n)];
    let push = |samples: &mut Vec<PopulationState>, y: &[f64], t: f64| {
        samples.push(layout.from_coords(y, t, s0.n));
    };

    let t_end = t0 + cfg.t_end;
    match cfg.method {
        Method::Rk4 => {
            let steps = (cfg.t_end / cfg.step).ceil() as usize;
            if steps > cfg.max_steps {
                return Err(Error::StepLimitExceeded { max_steps: cfg.max_steps, t: t0 });
            }
            let mut rk = Rk4::new(y.len());
            for i in 0..steps {
                let t = t0 + i as f64 * cfg.step;
                let t_next = if i + 1 == steps { t_end } else { t0 + (i + 1) as f64 * cfg.step };
                rk.step(field, &mut y, t, t_next - t)?;
                proj.project(t_next, &mut y);
                push(&mut samples, &y, t_next);
            }
        }
        Method::Rk45 => {
            let mut dp = DormandPrince::new(y.len());
            let mut t = t0;
            let mut h = cfg.step.min(cfg.t_end);
            let mut attempts = 0usize;
            while t < t_end {
                attempts += 1;
                if attempts > cfg.max_steps {
                    return Err(Error::StepLimitExceeded { max_steps: cfg.max_steps, t });
                }
                let last = t + h >= t_end;
                let h_try = if last { t_end - t } else { h };
                let err = dp.attempt(field, &y, t, h_try, cfg)?;
                let h_min = 1e-12 * (1.0 + t.abs());
                if err <= 1.0 || h_try <= h_min {
                    y.copy_from_slice(&dp.y_new);
                    t = if last { t_end } else { t + h_try };
                    proj.project(t, &mut y);
                    push(&mut samples, &y, t);
                }
                let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                h = (h_try * factor).max(h_min);
            }
        }
    }

    Ok(Trajectory {
        samples,
        events: proj.events,
        config: *cfg,
        layout,
        max_domain_violation: proj.max_violation,
    })
}

struct Rk4 {
    k: [Vec<f64>; 4],
    tmp: Vec<f64>,
}

impl Rk4 {
    fn new(dim: usize) -> Self {
        Rk4 { k: std::array::from_fn(|_| vec![0.0; dim]), tmp: vec![0.0; dim] }
    }

    fn step<F: VectorField + ?Sized>(&mut self, field: &F, y: &mut [f64], t: f64, h: f64) -> Result<()> {
        let [k1, k2, k3, k4] = &mut self.k;
        let tmp = &mut self.tmp;
        eval_checked(field, y, k1, t)?;
        for i in 0..y.len() {
            tmp[i] = y[i] + 0.5 * h * k1[i];
        }
        eval_checked(field, tmp, k2, t)?;
        for i in 0..y.len() {
            tmp[i] = y[i] + 0.5 * h * k2[i];
        }
        eval_checked(field, tmp, k3, t)?;
        for i in 0..y.len() {
            tmp[i] = y[i] + h * k3[i];
        }
        eval_checked(field, tmp, k4, t)?;
        for i in 0..y.len() {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        Ok(())
    }
}

// Dormand-Prince 5(4) tableau
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

struct DormandPrince {
    k: [Vec<f64>; 7],
    tmp: Vec<f64>,
    y_new: Vec<f64>,
}

impl DormandPrince {
    fn new(dim: usize) -> Self {
        DormandPrince { k: std::array::from_fn(|_| vec![0.0; dim]), tmp: vec![0.0; dim], y_new: vec![0.0; dim] }
    }

    /// Computes a trial step into `y_new` and returns the scaled error norm.
    fn attempt<F: VectorField + ?Sized>(
        &mut self,
        field: &F,
        y: &[f64],
        t: f64,
        h: f64,
        cfg: &IntegratorConfig,
    ) -> Result<f64> {
        let dim = y.len();
        for stage in 0..7 {
            for i in 0..dim {
                let incr: f64 = (0..stage).map(|j| A[stage][j] * self.k[j][i]).sum();
                self.tmp[i] = y[i] + h * incr;
            }
            eval_checked(field, &self.tmp, &mut self.k[stage], t + C[stage] * h)?;
        }
        let mut acc = 0.0;
        for i in 0..dim {
            let hi: f64 = (0..7).map(|j| B5[j] * self.k[j][i]).sum();
            let lo: f64 = (0..7).map(|j| B4[j] * self.k[j][i]).sum();
            self.y_new[i] = y[i] + h * hi;
            let scale = cfg.abs_tol + cfg.rel_tol * y[i].abs().max(self.y_new[i].abs());
            acc += (h * (hi - lo) / scale).powi(2);
        }
        Ok((acc / dim as f64).sqrt())
    }
}

/// One evaluation of a vector field on the phase lattice.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridSample {
    pub state: Vec<f64>,
    pub derivative: Vec<f64>,
}

/// Evaluates `field` on a regular lattice with `resolution` points per axis
/// over the admissible domain, skipping points with `x1 + x2 > 1`.
pub fn sample_phase_grid<F: VectorField + ?Sized>(field: &F, resolution: usize) -> Result<Vec<GridSample>> {
    if resolution < 2 {
        return Err(Error::InsufficientData(format!("grid resolution must be at least 2, got {resolution}")));
    }
    let layout = field.layout();
    let dim = layout.dim();
    let last = resolution - 1;
    let coord = |i: usize| i as f64 / last as f64;
    let mut out = Vec::new();
    let mut idx = vec![0usize; dim];
    loop {
        let feasible = layout.kind == GameKind::Pd || idx[0] + idx[1] <= last;
        if feasible {
            let state: Vec<f64> = idx.iter().map(|&i| coord(i)).collect();
            let derivative = field.eval_vec(&state);
            out.push(GridSample { state, derivative });
        }
        // odometer over the lattice, last axis fastest
        let mut axis = dim;
        loop {
            if axis == 0 {
                return Ok(out);
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{Protocol, System};
    use crate::game::{EnvCoupling, GameSpec};

    /// `y' = -y` on a one-dimensional strategy coordinate.
    struct Decay;

    impl VectorField for Decay {
        fn layout(&self) -> StateLayout {
            StateLayout { kind: GameKind::Pd, feedback: false, support_invariant: false }
        }
        fn eval(&self, y: &[f64], dy: &mut [f64]) {
            dy[0] = -y[0];
        }
    }

    struct Blowup;

    impl VectorField for Blowup {
        fn layout(&self) -> StateLayout {
            Decay.layout()
        }
        fn eval(&self, _y: &[f64], dy: &mut [f64]) {
            dy[0] = f64::NAN;
        }
    }

    fn rk4_error(h: f64) -> f64 {
        let tr = integrate(&Decay, &PopulationState::pd(1.0, 1.0), &IntegratorConfig::rk4(h, 1.0)).unwrap();
        (tr.final_state().unwrap().x[0] - (-1.0f64).exp()).abs()
    }

    #[test]
    fn rk4_is_fourth_order() {
        let errs: Vec<f64> = [0.1, 0.05, 0.025].iter().map(|&h| rk4_error(h)).collect();
        for w in errs.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!(order >= 3.8, "observed order {order}, errors {errs:?}");
        }
    }

    #[test]
    fn rk45_meets_tolerance() {
        let tr = integrate(&Decay, &PopulationState::pd(1.0, 1.0), &IntegratorConfig::rk45(1e-10, 1.0)).unwrap();
        let last = tr.final_state().unwrap();
        assert_eq!(last.t, 1.0);
        assert!((last.x[0] - (-1.0f64).exp()).abs() < 1e-9);
        assert!(tr.samples.windows(2).all(|w| w[1].t > w[0].t));
    }

    #[test]
    fn non_finite_field_is_reported() {
        let r = integrate(&Blowup, &PopulationState::pd(0.5, 1.0), &IntegratorConfig::rk4(0.1, 1.0));
        assert!(matches!(r, Err(Error::NonFiniteState { .. })));
    }

    #[test]
    fn step_limit() {
        let cfg = IntegratorConfig { max_steps: 10, ..IntegratorConfig::rk4(0.01, 1.0) };
        assert!(matches!(
            integrate(&Decay, &PopulationState::pd(0.5, 1.0), &cfg),
            Err(Error::StepLimitExceeded { .. })
        ));
        let cfg = IntegratorConfig { max_steps: 3, ..IntegratorConfig::rk45(1e-12, 10.0) };
        assert!(matches!(
            integrate(&Decay, &PopulationState::pd(0.5, 1.0), &cfg),
            Err(Error::StepLimitExceeded { .. })
        ));
    }

    #[test]
    fn invalid_config_rejected() {
        for cfg in [
            IntegratorConfig::rk4(0.0, 1.0),
            IntegratorConfig::rk4(0.1, -1.0),
            IntegratorConfig { abs_tol: 0.0, ..Default::default() },
        ] {
            assert!(matches!(
                integrate(&Decay, &PopulationState::pd(0.5, 1.0), &cfg),
                Err(Error::IntegratorConfig(_))
            ));
        }
    }

    #[test]
    fn overshoot_is_clamped_and_logged() {
        struct Push;
        impl VectorField for Push {
            fn layout(&self) -> StateLayout {
                Decay.layout()
            }
            fn eval(&self, _y: &[f64], dy: &mut [f64]) {
                dy[0] = 1.0;
            }
        }
        let tr = integrate(&Push, &PopulationState::pd(0.95, 1.0), &IntegratorConfig::rk4(0.1, 1.0)).unwrap();
        assert!(tr.samples.iter().all(|s| (0.0..=1.0).contains(&s.x[0])));
        assert!(!tr.events.is_empty());
        assert!(tr.events.iter().all(|e| e.component == "x1"));
    }

    #[test]
    fn resample_interpolates() {
        let tr = integrate(&Decay, &PopulationState::pd(1.0, 1.0), &IntegratorConfig::rk4(0.1, 1.0)).unwrap();
        let rs = tr.resample(0.25);
        assert_eq!(rs.len(), 5);
        assert_eq!(rs[0].x[0], 1.0);
        assert!((rs[2].x[0] - (-0.5f64).exp()).abs() < 1e-6);
        assert!((rs[4].t - 1.0).abs() < 1e-12);
    }

    fn example3_feedback() -> System {
        let game = GameSpec::pd(3.0, 0.0, 5.0, 1.0).validate(true).unwrap();
        System::new(game, Some(EnvCoupling::new(2.0, 0.1).unwrap()), Protocol::PairwiseComparison).unwrap()
    }

    #[test]
    fn pd_phase_grid() {
        let grid = sample_phase_grid(&example3_feedback(), 3).unwrap();
        assert_eq!(grid.len(), 9);
        let at = grid.iter().find(|g| g.state == vec![1.0, 0.5]).unwrap();
        assert_eq!(at.derivative[0], 0.0);
        let centre = sample_phase_grid(&example3_feedback(), 4).unwrap();
        assert!(centre.iter().all(|g| g.state.iter().all(|v| (0.0..=1.0).contains(v))));
    }

    #[test]
    fn opd_phase_grid_skips_infeasible_points() {
        let game = GameSpec::opd(3.0, 0.0, 5.0, 1.0, 2.0).validate(true).unwrap();
        let sys = System::new(game, Some(EnvCoupling::new(2.0, 0.5).unwrap()), Protocol::Replicator).unwrap();
        let grid = sample_phase_grid(&sys, 5).unwrap();
        // 15 feasible (x1, x2) pairs per environment slice, 5 slices
        assert_eq!(grid.len(), 75);
        assert!(grid.iter().all(|g| g.state[0] + g.state[1] <= 1.0));
        let slice = grid.iter().filter(|g| g.state[2] == 0.5).count();
        assert_eq!(slice, 15);
        assert!(sample_phase_grid(&sys, 1).is_err());
    }
}
