//! Right-hand sides of the population dynamics.
//!
//! Two revision protocols are supported, replicator and pairwise comparison,
//! each with or without feedback from an environmental resource `n`. States
//! use reduced coordinates: the two-strategy game carries the cooperator
//! frequency `x`, the optional game carries `(x1, x2)` with the abstainer
//! frequency `x3 = 1 - x1 - x2` implied. When feedback is on, `n` follows
//!
//! ```text
//! dn/dt = n (1 - n) ((1 + lambda) x1 - 1)
//! ```
//!
//! and the strategy rows are divided by the time-scale factor `epsilon`.
//!
//! Alongside the protocol fields this module evaluates the hand-simplified
//! closed forms of the same systems ([`ClosedForm`]). They serve as
//! independent cross-checks, and one of them can also be integrated directly
//! (see [`System::with_closed_form`]).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{EnvCoupling, Game, GameKind, PayoffMatrix, SIMPLEX_TOL};
use crate::linalg::Matrix;

/// Strategy frequencies plus environment level at time `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationState {
    /// `[x]` for the two-strategy game, `[x1, x2]` for the optional game.
    pub x: Vec<f64>,
    pub n: f64,
    #[serde(default)]
    pub t: f64,
}

impl PopulationState {
    pub fn pd(x: f64, n: f64) -> Self {
        PopulationState { x: vec![x], n, t: 0.0 }
    }

    pub fn opd(x1: f64, x2: f64, n: f64) -> Self {
        PopulationState { x: vec![x1, x2], n, t: 0.0 }
    }

    pub fn at(mut self, t: f64) -> Self {
        self.t = t;
        self
    }

    /// Frequency of the implied last strategy.
    pub fn implied(&self) -> f64 {
        self.x.iter().fold(1.0, |acc, v| acc - v)
    }

    /// Checks the componentwise bounds and the simplex constraint.
    pub fn validate(&self, kind: GameKind) -> Result<()> {
        if self.x.len() != kind.free_coords() {
            return Err(Error::DimensionMismatch { expected: kind.free_coords(), got: self.x.len() });
        }
        for &v in &self.x {
            if !v.is_finite() || !(-SIMPLEX_TOL..=1.0 + SIMPLEX_TOL).contains(&v) {
                return Err(Error::Domain { what: "strategy frequency", value: v });
            }
        }
        if kind == GameKind::Opd && self.implied() < -SIMPLEX_TOL {
            return Err(Error::Simplex(format!(
                "x1 + x2 = {} exceeds 1",
                self.x[0] + self.x[1]
            )));
        }
        if !self.n.is_finite() || !(0.0..=1.0).contains(&self.n) {
            return Err(Error::Domain { what: "environment level n", value: self.n });
        }
        Ok(())
    }
}

/// Time derivative of a [`PopulationState`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StateDerivative {
    pub dx: Vec<f64>,
    pub dn: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    Replicator,
    PairwiseComparison,
}

/// How a pairwise-comparison switching rate is computed from the payoffs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComparisonRule {
    /// `phi_ij = [r_j - r_i]_+` on the fitness values.
    #[default]
    FitnessDifference,
    /// `phi_ij = sum_k [a_jk - a_ik]_+ x_k`, entry by entry before averaging.
    EntrywiseExpectation,
}

/// Hand-simplified closed forms of particular systems.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClosedForm {
    /// `x' = -x (1 - x) (d_TR x + d_PS (1 - x))`, replicator, base matrix.
    PdReplicator,
    /// `x' = -x (d_TR x + d_PS (1 - x))`, pairwise comparison, base matrix.
    PdPairwise,
    /// `eps x' = (1 - x) (d_PS + (d_TR - d_PS) x) (1 - 2n)` with feedback.
    PdPairwiseFeedback,
    /// `eps x_i' = x_i (1 - x_i) r_i - x_i x_j r_j - x_i L (1 - x_i - x_j)` with feedback.
    OpdReplicatorFeedback,
    /// The simplified pairwise-comparison optional game with feedback.
    OpdPairwiseFeedback,
}

impl ClosedForm {
    pub fn name(self) -> &'static str {
        match self {
            ClosedForm::PdReplicator => "pd_replicator",
            ClosedForm::PdPairwise => "pd_pairwise",
            ClosedForm::PdPairwiseFeedback => "pd_pairwise_feedback",
            ClosedForm::OpdReplicatorFeedback => "opd_replicator_feedback",
            ClosedForm::OpdPairwiseFeedback => "opd_pairwise_feedback",
        }
    }

    fn signature(self) -> (GameKind, Protocol, bool) {
        match self {
            ClosedForm::PdReplicator => (GameKind::Pd, Protocol::Replicator, false),
            ClosedForm::PdPairwise => (GameKind::Pd, Protocol::PairwiseComparison, false),
            ClosedForm::PdPairwiseFeedback => (GameKind::Pd, Protocol::PairwiseComparison, true),
            ClosedForm::OpdReplicatorFeedback => (GameKind::Opd, Protocol::Replicator, true),
            ClosedForm::OpdPairwiseFeedback => (GameKind::Opd, Protocol::PairwiseComparison, true),
        }
    }

    /// The closed form describing `(kind, protocol, feedback)`, if there is one.
    pub fn for_system(kind: GameKind, protocol: Protocol, feedback: bool) -> Option<Self> {
        [
            ClosedForm::PdReplicator,
            ClosedForm::PdPairwise,
            ClosedForm::PdPairwiseFeedback,
            ClosedForm::OpdReplicatorFeedback,
            ClosedForm::OpdPairwiseFeedback,
        ]
        .into_iter()
        .find(|f| f.signature() == (kind, protocol, feedback))
    }

    fn check(self, kind: GameKind, feedback: bool) -> Result<()> {
        let (k, _, fb) = self.signature();
        if k != kind {
            return Err(Error::FormMismatch { form: self.name(), reason: "wrong game kind" });
        }
        if fb != feedback {
            return Err(Error::FormMismatch {
                form: self.name(),
                reason: if fb { "requires environment coupling" } else { "has no environment coupling" },
            });
        }
        Ok(())
    }
}

#[inline]
fn pos(z: f64) -> f64 {
    z.max(0.0)
}

/// Full frequency vector from reduced coordinates.
#[inline]
fn full_freq(kind: GameKind, x: &[f64]) -> [f64; 3] {
    match kind {
        GameKind::Pd => [x[0], 1.0 - x[0], 0.0],
        GameKind::Opd => [x[0], x[1], 1.0 - x[0] - x[1]],
    }
}

#[inline]
fn epsilon(coupling: Option<&EnvCoupling>) -> f64 {
    coupling.map_or(1.0, |c| c.epsilon)
}

#[inline]
fn env_rate(coupling: Option<&EnvCoupling>, x1: f64, n: f64) -> f64 {
    coupling.map_or(0.0, |c| n * (1.0 - n) * ((1.0 + c.lambda) * x1 - 1.0))
}

/// Payoff matrix seen by the population: `A(n)` with feedback, the base matrix without.
#[inline]
fn matrix_for(game: &Game, coupling: Option<&EnvCoupling>, n: f64) -> PayoffMatrix {
    if coupling.is_some() {
        game.interpolate(n)
    } else {
        game.interpolate(1.0)
    }
}

fn replicator_raw(game: &Game, coupling: Option<&EnvCoupling>, x: &[f64], n: f64, dx: &mut [f64]) {
    let eps = epsilon(coupling);
    let a = matrix_for(game, coupling, n);
    let f = full_freq(game.kind(), x);
    let r = a.apply(&f);
    match game.kind() {
        GameKind::Pd => dx[0] = x[0] * (1.0 - x[0]) * (r[0] - r[1]) / eps,
        GameKind::Opd => {
            let mean = f[0] * r[0] + f[1] * r[1] + f[2] * r[2];
            dx[0] = x[0] * (r[0] - mean) / eps;
            dx[1] = x[1] * (r[1] - mean) / eps;
        }
    }
}

/// Switching-rate matrix `phi[i][j]` from strategy `i` to strategy `j`.
fn switching_rates(game: &Game, a: &PayoffMatrix, f: &[f64; 3], rule: ComparisonRule) -> [[f64; 3]; 3] {
    let k = game.kind().strategies();
    let mut phi = [[0.0; 3]; 3];
    match rule {
        ComparisonRule::FitnessDifference => {
            let mut r = a.apply(f);
            if let Some(l) = game.loner() {
                r[2] = l;
            }
            for i in 0..k {
                for j in 0..k {
                    if i != j {
                        phi[i][j] = pos(r[j] - r[i]);
                    }
                }
            }
        }
        ComparisonRule::EntrywiseExpectation => {
            for i in 0..k {
                for j in 0..k {
                    if i != j {
                        phi[i][j] = (0..k).map(|c| pos(a.get(j, c) - a.get(i, c)) * f[c]).sum();
                    }
                }
            }
        }
    }
    phi
}

fn pairwise_raw(
    game: &Game,
    coupling: Option<&EnvCoupling>,
    rule: ComparisonRule,
    x: &[f64],
    n: f64,
    dx: &mut [f64],
) {
    let eps = epsilon(coupling);
    let a = matrix_for(game, coupling, n);
    let f = full_freq(game.kind(), x);
    let phi = switching_rates(game, &a, &f, rule);
    let k = game.kind().strategies();
    for (i, d) in dx.iter_mut().enumerate().take(k - 1) {
        let inflow: f64 = (0..k).filter(|&j| j != i).map(|j| f[j] * phi[j][i]).sum();
        let outflow: f64 = (0..k).filter(|&j| j != i).map(|j| phi[i][j]).sum();
        *d = (inflow - f[i] * outflow) / eps;
    }
}

fn closed_form_raw(
    form: ClosedForm,
    game: &Game,
    coupling: Option<&EnvCoupling>,
    x: &[f64],
    n: f64,
    dx: &mut [f64],
) {
    let d = game.deltas();
    let eps = epsilon(coupling);
    match form {
        ClosedForm::PdReplicator => {
            let x = x[0];
            dx[0] = -x * (1.0 - x) * (d.tr * x + d.ps * (1.0 - x));
        }
        ClosedForm::PdPairwise => {
            let x = x[0];
            dx[0] = -x * (d.tr * x + d.ps * (1.0 - x));
        }
        ClosedForm::PdPairwiseFeedback => {
            let x = x[0];
            dx[0] = (1.0 - x) * (d.ps + (d.tr - d.ps) * x) * (1.0 - 2.0 * n) / eps;
        }
        ClosedForm::OpdReplicatorFeedback => {
            let l = game.loner().unwrap_or_default();
            let a = game.interpolate(n);
            let r = a.apply(&full_freq(GameKind::Opd, x));
            for (i, j) in [(0, 1), (1, 0)] {
                dx[i] = (x[i] * (1.0 - x[i]) * r[i] - x[i] * x[j] * r[j] - x[i] * l * (1.0 - x[i] - x[j])) / eps;
            }
        }
        ClosedForm::OpdPairwiseFeedback => {
            let (tl, rl, pl) = (d.tl.unwrap_or_default(), d.rl.unwrap_or_default(), d.pl.unwrap_or_default());
            let (x1, x2) = (x[0], x[1]);
            let x3 = 1.0 - x1 - x2;
            let common = d.tr * x1 + d.ps * x2;
            dx[0] = ((x2 - 3.0 * n * x1) * common + tl * x1 * x3 + pl * x1 * x2) / eps;
            dx[1] = ((x1 - 2.0 * n * x2) * common + x3 * ((rl + d.tr * n) * x1 + d.ps * n * x2) + tl * x1 * x2)
                / eps;
        }
    }
}

fn derivative(kind: GameKind, coupling: Option<&EnvCoupling>, s: &PopulationState, f: impl FnOnce(&mut [f64])) -> StateDerivative {
    let mut dx = vec![0.0; kind.free_coords()];
    f(&mut dx);
    StateDerivative { dx, dn: env_rate(coupling, s.x[0], s.n) }
}

fn check_state(game: &Game, s: &PopulationState) {
    assert_eq!(s.x.len(), game.kind().free_coords(), "state dimension does not match the game");
}

/// Replicator dynamics. Without coupling the base matrix is used, `epsilon = 1`
/// and `dn = 0`.
pub fn replicator_field(game: &Game, coupling: Option<&EnvCoupling>, s: &PopulationState) -> StateDerivative {
    check_state(game, s);
    derivative(game.kind(), coupling, s, |dx| replicator_raw(game, coupling, &s.x, s.n, dx))
}

/// Pairwise-comparison dynamics under the given switching rule.
pub fn pairwise_field(
    game: &Game,
    coupling: Option<&EnvCoupling>,
    s: &PopulationState,
    rule: ComparisonRule,
) -> StateDerivative {
    check_state(game, s);
    derivative(game.kind(), coupling, s, |dx| pairwise_raw(game, coupling, rule, &s.x, s.n, dx))
}

/// Evaluates a closed form literally. Fails when the form does not describe a
/// game of this kind with this coupling.
pub fn closed_form_field(
    form: ClosedForm,
    game: &Game,
    coupling: Option<&EnvCoupling>,
    s: &PopulationState,
) -> Result<StateDerivative> {
    form.check(game.kind(), coupling.is_some())?;
    check_state(game, s);
    Ok(derivative(game.kind(), coupling, s, |dx| closed_form_raw(form, game, coupling, &s.x, s.n, dx)))
}

/// Coordinate layout of a system: strategy coordinates, then `n` when the
/// environment is dynamic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct StateLayout {
    pub kind: GameKind,
    pub feedback: bool,
    /// Whether strategy faces of the simplex are invariant (replicator
    /// dynamics keep the support of the population fixed).
    pub support_invariant: bool,
}

impl StateLayout {
    pub fn dim(&self) -> usize {
        self.kind.free_coords() + usize::from(self.feedback)
    }

    pub fn to_coords(&self, s: &PopulationState) -> Vec<f64> {
        let mut y = s.x.clone();
        if self.feedback {
            y.push(s.n);
        }
        y
    }

    /// Inverse of [`to_coords`](Self::to_coords); `n_fixed` is used when the
    /// environment is not part of the coordinates.
    pub fn from_coords(&self, y: &[f64], t: f64, n_fixed: f64) -> PopulationState {
        let m = self.kind.free_coords();
        let n = if self.feedback { y[m] } else { n_fixed };
        PopulationState { x: y[..m].to_vec(), n, t }
    }

    pub fn coord_names(&self) -> Vec<&'static str> {
        let mut names = match self.kind {
            GameKind::Pd => vec!["x1"],
            GameKind::Opd => vec!["x1", "x2"],
        };
        if self.feedback {
            names.push("n");
        }
        names
    }
}

/// An autonomous vector field on reduced coordinates.
pub trait VectorField {
    fn layout(&self) -> StateLayout;

    fn eval(&self, y: &[f64], dy: &mut [f64]);

    /// Distance of the nearest positive-part argument from zero; infinite for
    /// smooth fields.
    fn kink_distance(&self, _y: &[f64]) -> f64 {
        f64::INFINITY
    }

    fn analytic_jacobian(&self, _y: &[f64]) -> Result<Matrix> {
        Err(Error::AnalyticUnavailable)
    }

    fn eval_vec(&self, y: &[f64]) -> Vec<f64> {
        let mut dy = vec![0.0; y.len()];
        self.eval(y, &mut dy);
        dy
    }
}

/// A fully specified dynamical system: game, optional feedback, protocol.
#[derive(Debug, Clone, PartialEq)]
pub struct System {
    game: Game,
    coupling: Option<EnvCoupling>,
    protocol: Protocol,
    rule: ComparisonRule,
    closed_form: Option<ClosedForm>,
}

impl System {
    pub fn new(game: Game, coupling: Option<EnvCoupling>, protocol: Protocol) -> Result<Self> {
        if let Some(c) = &coupling {
            c.validate()?;
        }
        Ok(System { game, coupling, protocol, rule: ComparisonRule::default(), closed_form: None })
    }

    pub fn with_rule(mut self, rule: ComparisonRule) -> Self {
        self.rule = rule;
        self
    }

    /// Evaluates the system through its hand-simplified closed form instead of
    /// the protocol definition.
    pub fn with_closed_form(mut self) -> Result<Self> {
        let form = ClosedForm::for_system(self.game.kind(), self.protocol, self.coupling.is_some()).ok_or(
            Error::FormMismatch { form: "closed form", reason: "no closed form for this system" },
        )?;
        self.closed_form = Some(form);
        Ok(self)
    }

    pub fn game(&self) -> &Game {
        &self.game
    }

    pub fn coupling(&self) -> Option<&EnvCoupling> {
        self.coupling.as_ref()
    }

    pub fn protocol(&self) -> Protocol {
        self.protocol
    }

    pub fn rule(&self) -> ComparisonRule {
        self.rule
    }

    pub fn closed_form(&self) -> Option<ClosedForm> {
        self.closed_form
    }

    /// Same system with a different coupling (e.g. a rescaled `epsilon`).
    pub fn with_coupling(&self, coupling: Option<EnvCoupling>) -> Result<Self> {
        let mut s = System::new(self.game.clone(), coupling, self.protocol)?;
        s.rule = self.rule;
        if self.closed_form.is_some() {
            s = s.with_closed_form()?;
        }
        Ok(s)
    }

    pub fn field(&self, s: &PopulationState) -> StateDerivative {
        check_state(&self.game, s);
        let c = self.coupling.as_ref();
        derivative(self.game.kind(), c, s, |dx| self.strategy_rates(&s.x, s.n, dx))
    }

    fn strategy_rates(&self, x: &[f64], n: f64, dx: &mut [f64]) {
        let c = self.coupling.as_ref();
        match (self.closed_form, self.protocol) {
            (Some(form), _) => closed_form_raw(form, &self.game, c, x, n, dx),
            (None, Protocol::Replicator) => replicator_raw(&self.game, c, x, n, dx),
            (None, Protocol::PairwiseComparison) => pairwise_raw(&self.game, c, self.rule, x, n, dx),
        }
    }

    fn split<'a>(&self, y: &'a [f64]) -> (&'a [f64], f64) {
        let m = self.game.kind().free_coords();
        let n = if self.coupling.is_some() { y[m] } else { 1.0 };
        (&y[..m], n)
    }

    fn replicator_jacobian(&self, y: &[f64]) -> Matrix {
        let kind = self.game.kind();
        let m = kind.free_coords();
        let last = m;
        let (x, n) = self.split(y);
        let c = self.coupling.as_ref();
        let eps = epsilon(c);
        let a = matrix_for(&self.game, c, n);
        let f = full_freq(kind, x);
        let r = a.apply(&f);
        let k = kind.strategies();
        let mean: f64 = (0..k).map(|i| f[i] * r[i]).sum();
        let mut jac = Matrix::zeros(self.layout().dim());

        for col in 0..m {
            // direction of the full frequency vector when coordinate `col` moves
            let mut v = [0.0; 3];
            v[col] = 1.0;
            v[last] = -1.0;
            let dr = a.apply(&v);
            let dmean: f64 = (0..k).map(|i| v[i] * r[i] + f[i] * dr[i]).sum();
            for row in 0..m {
                let diag = if row == col { r[row] - mean } else { 0.0 };
                jac[(row, col)] = (diag + f[row] * (dr[row] - dmean)) / eps;
            }
        }
        if let Some(cp) = c {
            let slope = self.game.matrix_slope();
            let mut dr = [0.0; 3];
            for (i, d) in dr.iter_mut().enumerate().take(k) {
                *d = (0..k).map(|j| slope[i][j] * f[j]).sum();
            }
            let dmean: f64 = (0..k).map(|i| f[i] * dr[i]).sum();
            for row in 0..m {
                jac[(row, m)] = f[row] * (dr[row] - dmean) / eps;
            }
            jac[(m, 0)] = n * (1.0 - n) * (1.0 + cp.lambda);
            jac[(m, m)] = (1.0 - 2.0 * n) * ((1.0 + cp.lambda) * x[0] - 1.0);
        }
        jac
    }

    fn closed_form_jacobian(&self, form: ClosedForm, y: &[f64]) -> Result<Matrix> {
        let d = *self.game.deltas();
        let (x, n) = self.split(y);
        match form {
            ClosedForm::PdReplicator => {
                let x = x[0];
                let g = d.tr * x + d.ps * (1.0 - x);
                Ok(Matrix::from_rows(&[vec![-((1.0 - 2.0 * x) * g + x * (1.0 - x) * (d.tr - d.ps))]]))
            }
            ClosedForm::PdPairwise => {
                let x = x[0];
                let g = d.tr * x + d.ps * (1.0 - x);
                Ok(Matrix::from_rows(&[vec![-(g + x * (d.tr - d.ps))]]))
            }
            ClosedForm::PdPairwiseFeedback => {
                let cp = self.coupling.expect("checked at construction");
                let eps = cp.epsilon;
                let x = x[0];
                let g = d.ps + (d.tr - d.ps) * x;
                let s = 1.0 - 2.0 * n;
                Ok(Matrix::from_rows(&[
                    vec![(-g + (1.0 - x) * (d.tr - d.ps)) * s / eps, -2.0 * (1.0 - x) * g / eps],
                    vec![n * (1.0 - n) * (1.0 + cp.lambda), s * ((1.0 + cp.lambda) * x - 1.0)],
                ]))
            }
            ClosedForm::OpdReplicatorFeedback => Ok(self.replicator_jacobian(y)),
            ClosedForm::OpdPairwiseFeedback => Err(Error::AnalyticUnavailable),
        }
    }
}

impl VectorField for System {
    fn layout(&self) -> StateLayout {
        StateLayout {
            kind: self.game.kind(),
            feedback: self.coupling.is_some(),
            support_invariant: self.protocol == Protocol::Replicator,
        }
    }

    fn eval(&self, y: &[f64], dy: &mut [f64]) {
        let (x, n) = self.split(y);
        let m = x.len();
        self.strategy_rates(x, n, &mut dy[..m]);
        if self.coupling.is_some() {
            dy[m] = env_rate(self.coupling.as_ref(), x[0], n);
        }
    }

    fn kink_distance(&self, y: &[f64]) -> f64 {
        if self.protocol != Protocol::PairwiseComparison || self.closed_form.is_some() {
            return f64::INFINITY;
        }
        let (x, n) = self.split(y);
        let a = matrix_for(&self.game, self.coupling.as_ref(), n);
        let f = full_freq(self.game.kind(), x);
        let k = self.game.kind().strategies();
        let mut dist = f64::INFINITY;
        match self.rule {
            ComparisonRule::FitnessDifference => {
                let mut r = a.apply(&f);
                if let Some(l) = self.game.loner() {
                    r[2] = l;
                }
                for i in 0..k {
                    for j in i + 1..k {
                        dist = dist.min((r[i] - r[j]).abs());
                    }
                }
            }
            ComparisonRule::EntrywiseExpectation => {
                // the abstainer column is constant across rows, never a kink
                for i in 0..k {
                    for j in i + 1..k {
                        for c in 0..2 {
                            dist = dist.min((a.get(i, c) - a.get(j, c)).abs());
                        }
                    }
                }
            }
        }
        dist
    }

    fn analytic_jacobian(&self, y: &[f64]) -> Result<Matrix> {
        match (self.closed_form, self.protocol) {
            (Some(form), _) => self.closed_form_jacobian(form, y),
            (None, Protocol::Replicator) => Ok(self.replicator_jacobian(y)),
            (None, Protocol::PairwiseComparison) => Err(Error::AnalyticUnavailable),
        }
    }
}
