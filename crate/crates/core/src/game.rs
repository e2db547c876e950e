//! Payoff structures for the prisoner's dilemma and its optional variant,
//! the environment-dependent payoff matrix, and fitness evaluation.
//!
//! The environment level `n` interpolates between a "flipped" matrix at
//! `n = 0`, where defecting against defectors pays `S` and cooperating
//! against them pays `P`, and the ordinary dilemma at `n = 1`:
//!
//! ```text
//! A(n) = (1 - n) [T P; R S] + n [R S; T P]
//! ```
//!
//! In the optional game every interaction involving an abstainer pays the
//! loner's payoff `L`, whatever the environment.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `|sum(x) - 1|` below which frequency vectors are renormalized.
pub const SIMPLEX_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GameKind {
    /// Cooperate / defect.
    Pd,
    /// Cooperate / defect / abstain.
    Opd,
}

impl GameKind {
    /// Number of strategies.
    pub fn strategies(self) -> usize {
        match self {
            GameKind::Pd => 2,
            GameKind::Opd => 3,
        }
    }

    /// Number of independent frequency coordinates (the last strategy is implied).
    pub fn free_coords(self) -> usize {
        self.strategies() - 1
    }
}

/// Raw payoff parameters as they appear in a scenario file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GameSpec {
    pub kind: GameKind,
    /// Reward for mutual cooperation.
    #[serde(rename = "R")]
    pub r: f64,
    /// Sucker's payoff.
    #[serde(rename = "S")]
    pub s: f64,
    /// Temptation to defect.
    #[serde(rename = "T")]
    pub t: f64,
    /// Punishment for mutual defection.
    #[serde(rename = "P")]
    pub p: f64,
    /// Loner's payoff; present exactly when `kind` is [`GameKind::Opd`].
    #[serde(rename = "L", default, skip_serializing_if = "Option::is_none")]
    pub l: Option<f64>,
}

impl GameSpec {
    pub fn pd(r: f64, s: f64, t: f64, p: f64) -> Self {
        GameSpec { kind: GameKind::Pd, r, s, t, p, l: None }
    }

    pub fn opd(r: f64, s: f64, t: f64, p: f64, l: f64) -> Self {
        GameSpec { kind: GameKind::Opd, r, s, t, p, l: Some(l) }
    }

    /// Checks finiteness and the payoff ordering and caches the payoff gaps.
    ///
    /// With `strict` off an ordering violation is kept as a warning on the
    /// returned [`Game`] instead of failing, so deliberately degenerate or
    /// cooperation-favouring matrices can still be simulated.
    pub fn validate(self, strict: bool) -> Result<Game> {
        for (name, v) in [("R", self.r), ("S", self.s), ("T", self.t), ("P", self.p)] {
            if !v.is_finite() {
                return Err(Error::NonFinitePayoff { name });
            }
        }
        match (self.kind, self.l) {
            (GameKind::Pd, Some(_)) => return Err(Error::LonerPayoff("only meaningful for the optional game")),
            (GameKind::Opd, None) => return Err(Error::LonerPayoff("required for the optional game")),
            (GameKind::Opd, Some(l)) if !l.is_finite() => {
                return Err(Error::NonFinitePayoff { name: "L" })
            }
            _ => {}
        }

        let mut chain: Vec<(&'static str, f64, f64)> = vec![("T > R", self.t, self.r)];
        match self.l {
            Some(l) => {
                chain.push(("R > L", self.r, l));
                chain.push(("L > P", l, self.p));
            }
            None => chain.push(("R > P", self.r, self.p)),
        }
        chain.push(("P > S", self.p, self.s));

        let mut warnings = Vec::new();
        for (inequality, hi, lo) in chain {
            if hi <= lo {
                if strict {
                    return Err(Error::OrderingViolation { inequality });
                }
                warnings.push(inequality);
            }
        }

        let deltas = Deltas {
            tr: self.t - self.r,
            ps: self.p - self.s,
            tl: self.l.map(|l| self.t - l),
            rl: self.l.map(|l| self.r - l),
            pl: self.l.map(|l| self.p - l),
        };
        Ok(Game { spec: self, deltas, warnings })
    }
}

/// Payoff gaps `T-R`, `P-S` and, for the optional game, `T-L`, `R-L`, `P-L`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Deltas {
    pub tr: f64,
    pub ps: f64,
    pub tl: Option<f64>,
    pub rl: Option<f64>,
    pub pl: Option<f64>,
}

/// A validated game: spec plus cached payoff gaps.
#[derive(Debug, Clone, PartialEq)]
pub struct Game {
    spec: GameSpec,
    deltas: Deltas,
    warnings: Vec<&'static str>,
}

impl Game {
    pub fn spec(&self) -> &GameSpec {
        &self.spec
    }

    pub fn kind(&self) -> GameKind {
        self.spec.kind
    }

    pub fn deltas(&self) -> &Deltas {
        &self.deltas
    }

    /// Ordering inequalities that failed under non-strict validation.
    pub fn warnings(&self) -> &[&'static str] {
        &self.warnings
    }

    /// Loner's payoff, `None` for the two-strategy game.
    pub fn loner(&self) -> Option<f64> {
        self.spec.l
    }

    /// The ordinary dilemma matrix, reached at `n = 1`.
    pub fn base_matrix(&self) -> PayoffMatrix {
        self.interpolate(1.0)
    }

    /// The matrix with cooperator and defector rows swapped, reached at `n = 0`.
    pub fn flipped_matrix(&self) -> PayoffMatrix {
        self.interpolate(0.0)
    }

    /// Environment-dependent payoff matrix `A(n)`.
    pub fn payoff_matrix_at(&self, n: f64) -> Result<PayoffMatrix> {
        if !(0.0..=1.0).contains(&n) {
            return Err(Error::Domain { what: "environment level n", value: n });
        }
        Ok(self.interpolate(n))
    }

    /// `A(n)` without the domain check; used inside vector fields, which may be
    /// probed slightly outside the admissible region by finite differences.
    pub(crate) fn interpolate(&self, n: f64) -> PayoffMatrix {
        let GameSpec { r, s, t, p, .. } = self.spec;
        let m = 1.0 - n;
        let mut entries = [[0.0; 3]; 3];
        entries[0][0] = m * t + n * r;
        entries[0][1] = m * p + n * s;
        entries[1][0] = m * r + n * t;
        entries[1][1] = m * s + n * p;
        let dim = match self.spec.l {
            Some(l) => {
                entries[0][2] = l;
                entries[1][2] = l;
                entries[2] = [l; 3];
                3
            }
            None => 2,
        };
        PayoffMatrix { dim, entries }
    }

    /// Entrywise derivative `dA/dn`, constant in `n`.
    pub(crate) fn matrix_slope(&self) -> [[f64; 3]; 3] {
        let d = &self.deltas;
        [[-d.tr, -d.ps, 0.0], [d.tr, d.ps, 0.0], [0.0; 3]]
    }
}

/// Dense square payoff matrix of dimension 2 or 3.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PayoffMatrix {
    dim: usize,
    entries: [[f64; 3]; 3],
}

impl PayoffMatrix {
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let dim = rows.len();
        if !(2..=3).contains(&dim) {
            return Err(Error::DimensionMismatch { expected: 3, got: dim });
        }
        let mut entries = [[0.0; 3]; 3];
        for (i, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: row.len() });
            }
            for (j, &v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::NonFinitePayoff { name: "matrix entry" });
                }
                entries[i][j] = v;
            }
        }
        Ok(PayoffMatrix { dim, entries })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i][j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i][..self.dim]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim).map(|i| self.row(i).to_vec()).collect()
    }

    /// Fitness vector `r = A x` for a full frequency vector on the simplex.
    ///
    /// Vectors whose sum is within [`SIMPLEX_TOL`] of one are renormalized.
    pub fn fitness(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: x.len() });
        }
        if let Some(bad) = x.iter().find(|v| !v.is_finite() || **v < -SIMPLEX_TOL) {
            return Err(Error::Simplex(format!("component {bad} is negative or not finite")));
        }
        let sum: f64 = x.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::Simplex(format!("components sum to {sum}")));
        }
        let mut full = [0.0; 3];
        for (dst, &v) in full.iter_mut().zip(x) {
            *dst = v.max(0.0) / sum;
        }
        let r = self.apply(&full);
        Ok(r[..self.dim].to_vec())
    }

    /// `A x` over the first `dim` components, no checks.
    #[inline]
    pub(crate) fn apply(&self, x: &[f64; 3]) -> [f64; 3] {
        let mut r = [0.0; 3];
        for (i, ri) in r.iter_mut().enumerate().take(self.dim) {
            *ri = (0..self.dim).map(|j| self.entries[i][j] * x[j]).sum();
        }
        r
    }
}

/// Strength and time scale of the environmental feedback.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvCoupling {
    /// Ratio of enhancement by cooperators to degradation by defectors.
    pub lambda: f64,
    /// Time-scale factor dividing the strategy equations.
    pub epsilon: f64,
}

impl EnvCoupling {
    pub fn new(lambda: f64, epsilon: f64) -> Result<Self> {
        let c = EnvCoupling { lambda, epsilon };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(Error::Coupling(format!("lambda must be positive, got {}", self.lambda)));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::Coupling(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        Ok(())
    }

    /// Cooperator frequency at which the environment is stationary.
    pub fn balanced_cooperation(&self) -> f64 {
        1.0 / (1.0 + self.lambda)
    }
}
