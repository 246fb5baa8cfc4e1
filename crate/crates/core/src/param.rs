//! Parametrized linear maps: a dense `W`, a low-rank product `L·R`, or a
//! low-rank product plus a diagonal `L·R + D`.
//!
//! Low-rank maps are always applied as `L·(R·x)`; the dense product is only
//! formed by [`LinearMap::materialize`].

use serde::{Deserialize, Serialize};

use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::linalg::{uniform_init, Matrix, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParamKind {
    #[serde(rename = "full")]
    Full,
    #[serde(rename = "lr")]
    LowRank,
    #[serde(rename = "lrd")]
    LowRankDiag,
}

impl ParamKind {
    pub const ALL: [ParamKind; 3] = [ParamKind::Full, ParamKind::LowRank, ParamKind::LowRankDiag];

    pub fn name(self) -> &'static str {
        match self {
            ParamKind::Full => "full",
            ParamKind::LowRank => "lr",
            ParamKind::LowRankDiag => "lrd",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "full" => Some(ParamKind::Full),
            "lr" => Some(ParamKind::LowRank),
            "lrd" => Some(ParamKind::LowRankDiag),
            _ => None,
        }
    }
}

/// Shape and kind of a map to be initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MapSpec {
    pub n_out: usize,
    pub n_in: usize,
    pub kind: ParamKind,
    /// Inner dimension `d`; ignored for [`ParamKind::Full`].
    pub rank: usize,
}

impl MapSpec {
    pub fn square(n: usize, kind: ParamKind, rank: usize) -> Self {
        MapSpec {
            n_out: n,
            n_in: n,
            kind,
            rank,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_out == 0 || self.n_in == 0 {
            return Err(Error::Config("map dimensions must be positive".into()));
        }
        if self.kind != ParamKind::Full && self.rank == 0 {
            return Err(Error::Config("low-rank maps need d >= 1".into()));
        }
        if self.kind == ParamKind::LowRankDiag && self.n_out != self.n_in {
            return Err(Error::Config(format!(
                "low-rank plus diagonal needs a square map, got {}x{}",
                self.n_out, self.n_in
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LinearMap {
    Full { w: Matrix },
    LowRank { l: Matrix, r: Matrix },
    /// `d` is stored as an `n x 1` column.
    LowRankDiag { l: Matrix, r: Matrix, d: Matrix },
}

/// Gradients of a map application: factor gradients (in the same form as
/// the map) and the gradient with respect to the input.
#[derive(Debug, Clone)]
pub struct MapGrads {
    pub factors: LinearMap,
    pub dx: Matrix,
}

impl LinearMap {
    pub fn full(w: Matrix) -> Self {
        LinearMap::Full { w }
    }

    pub fn low_rank(l: Matrix, r: Matrix) -> Result<Self> {
        if l.cols() != r.rows() {
            return Err(Error::dim("low_rank factors", l.shape(), r.shape()));
        }
        Ok(LinearMap::LowRank { l, r })
    }

    pub fn low_rank_diag(l: Matrix, r: Matrix, d: Matrix) -> Result<Self> {
        if l.cols() != r.rows() {
            return Err(Error::dim("low_rank_diag factors", l.shape(), r.shape()));
        }
        if l.rows() != r.cols() {
            return Err(Error::Config(format!(
                "low-rank plus diagonal needs a square map, got {}x{}",
                l.rows(),
                r.cols()
            )));
        }
        if d.shape() != (l.rows(), 1) {
            return Err(Error::dim("low_rank_diag diagonal", (l.rows(), 1), d.shape()));
        }
        Ok(LinearMap::LowRankDiag { l, r, d })
    }

    /// Uniform `sqrt(6/a)` initialization: `W` and `R` use `a = n_in`, `L`
    /// uses `a = d`, and the diagonal starts at zero.
    pub fn init(spec: MapSpec, rng: &mut Rng) -> Result<Self> {
        spec.validate()?;
        let MapSpec {
            n_out, n_in, rank, ..
        } = spec;
        Ok(match spec.kind {
            ParamKind::Full => LinearMap::Full {
                w: uniform_init(rng, n_out, n_in, n_in),
            },
            ParamKind::LowRank => {
                let r = uniform_init(rng, rank, n_in, n_in);
                let l = uniform_init(rng, n_out, rank, rank);
                LinearMap::LowRank { l, r }
            }
            ParamKind::LowRankDiag => {
                let r = uniform_init(rng, rank, n_in, n_in);
                let l = uniform_init(rng, n_out, rank, rank);
                LinearMap::LowRankDiag {
                    l,
                    r,
                    d: Matrix::zeros(n_out, 1),
                }
            }
        })
    }

    pub fn kind(&self) -> ParamKind {
        match self {
            LinearMap::Full { .. } => ParamKind::Full,
            LinearMap::LowRank { .. } => ParamKind::LowRank,
            LinearMap::LowRankDiag { .. } => ParamKind::LowRankDiag,
        }
    }

    pub fn n_out(&self) -> usize {
        match self {
            LinearMap::Full { w } => w.rows(),
            LinearMap::LowRank { l, .. } | LinearMap::LowRankDiag { l, .. } => l.rows(),
        }
    }

    pub fn n_in(&self) -> usize {
        match self {
            LinearMap::Full { w } => w.cols(),
            LinearMap::LowRank { r, .. } | LinearMap::LowRankDiag { r, .. } => r.cols(),
        }
    }

    /// Inner dimension `d`, or `None` for a dense map.
    pub fn rank(&self) -> Option<usize> {
        match self {
            LinearMap::Full { .. } => None,
            LinearMap::LowRank { l, .. } | LinearMap::LowRankDiag { l, .. } => Some(l.cols()),
        }
    }

    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        if x.rows() != self.n_in() {
            return Err(Error::dim("apply", (self.n_out(), self.n_in()), x.shape()));
        }
        match self {
            LinearMap::Full { w } => w.matmul(x),
            LinearMap::LowRank { l, r } => l.matmul(&r.matmul(x)?),
            LinearMap::LowRankDiag { l, r, d } => l.matmul(&r.matmul(x)?)?.add(&x.mul_col(d)?),
        }
    }

    pub fn materialize(&self) -> Matrix {
        match self {
            LinearMap::Full { w } => w.clone(),
            LinearMap::LowRank { l, r } => l.matmul(r).expect("factor shapes"),
            LinearMap::LowRankDiag { l, r, d } => l
                .matmul(r)
                .and_then(|m| m.add(&Matrix::diag(d.data())))
                .expect("factor shapes"),
        }
    }

    /// Exact gradients of `sum(upstream ⊙ apply(x))`.
    pub fn grads(&self, x: &Matrix, upstream: &Matrix) -> Result<MapGrads> {
        if x.rows() != self.n_in() {
            return Err(Error::dim("grads input", (self.n_out(), self.n_in()), x.shape()));
        }
        if upstream.shape() != (self.n_out(), x.cols()) {
            return Err(Error::dim(
                "grads upstream",
                (self.n_out(), x.cols()),
                upstream.shape(),
            ));
        }
        let xt = x.transpose();
        Ok(match self {
            LinearMap::Full { w } => MapGrads {
                factors: LinearMap::Full {
                    w: upstream.matmul(&xt)?,
                },
                dx: w.transpose().matmul(upstream)?,
            },
            LinearMap::LowRank { l, r } => {
                let rx = r.matmul(x)?;
                let lt_up = l.transpose().matmul(upstream)?;
                MapGrads {
                    factors: LinearMap::LowRank {
                        l: upstream.matmul(&rx.transpose())?,
                        r: lt_up.matmul(&xt)?,
                    },
                    dx: r.transpose().matmul(&lt_up)?,
                }
            }
            LinearMap::LowRankDiag { l, r, d } => {
                let rx = r.matmul(x)?;
                let lt_up = l.transpose().matmul(upstream)?;
                let dx = r.transpose().matmul(&lt_up)?.add(&upstream.mul_col(d)?)?;
                MapGrads {
                    factors: LinearMap::LowRankDiag {
                        l: upstream.matmul(&rx.transpose())?,
                        r: lt_up.matmul(&xt)?,
                        d: upstream.hadamard(x)?.row_sums(),
                    },
                    dx,
                }
            }
        })
    }

    /// Number of trainable entries, plus `bias_len` when `include_bias`.
    pub fn param_count(&self, include_bias: bool, bias_len: usize) -> usize {
        count_params(
            MapSpec {
                n_out: self.n_out(),
                n_in: self.n_in(),
                kind: self.kind(),
                rank: self.rank().unwrap_or(0),
            },
            include_bias,
            bias_len,
        )
    }

    /// Factor matrices in canonical order with their short names.
    pub fn factors(&self) -> Vec<(&'static str, &Matrix)> {
        match self {
            LinearMap::Full { w } => vec![("w", w)],
            LinearMap::LowRank { l, r } => vec![("l", l), ("r", r)],
            LinearMap::LowRankDiag { l, r, d } => vec![("l", l), ("r", r), ("d", d)],
        }
    }

    pub fn factors_mut(&mut self) -> Vec<(&'static str, &mut Matrix)> {
        match self {
            LinearMap::Full { w } => vec![("w", w)],
            LinearMap::LowRank { l, r } => vec![("l", l), ("r", r)],
            LinearMap::LowRankDiag { l, r, d } => vec![("l", l), ("r", r), ("d", d)],
        }
    }

    /// Records the factors as tape leaves, pushing their ids onto `leaves`
    /// in [`LinearMap::factors`] order.
    pub fn bind(&self, tape: &mut Tape, leaves: &mut Vec<NodeId>) -> MapVars {
        let mut leaf = |m: &Matrix| {
            let id = tape.leaf(m.clone());
            leaves.push(id);
            id
        };
        match self {
            LinearMap::Full { w } => MapVars::Full { w: leaf(w) },
            LinearMap::LowRank { l, r } => MapVars::LowRank {
                l: leaf(l),
                r: leaf(r),
            },
            LinearMap::LowRankDiag { l, r, d } => MapVars::LowRankDiag {
                l: leaf(l),
                r: leaf(r),
                d: leaf(d),
            },
        }
    }
}

/// Closed-form parameter count for a map of the given shape.
pub fn count_params(spec: MapSpec, include_bias: bool, bias_len: usize) -> usize {
    let body = match spec.kind {
        ParamKind::Full => spec.n_out * spec.n_in,
        ParamKind::LowRank => spec.rank * (spec.n_out + spec.n_in),
        ParamKind::LowRankDiag => spec.rank * (spec.n_out + spec.n_in) + spec.n_out,
    };
    body + if include_bias { bias_len } else { 0 }
}

/// Tape handles of a bound [`LinearMap`].
#[derive(Debug, Clone, Copy)]
pub enum MapVars {
    Full { w: NodeId },
    LowRank { l: NodeId, r: NodeId },
    LowRankDiag { l: NodeId, r: NodeId, d: NodeId },
}

impl MapVars {
    pub fn apply(&self, tape: &mut Tape, x: NodeId) -> Result<NodeId> {
        self.apply_masked(tape, x, None)
    }

    /// Applies the map; for factored kinds `mid_mask` (`d x batch`) is
    /// multiplied into `R·x` before `L`.
    pub fn apply_masked(
        &self,
        tape: &mut Tape,
        x: NodeId,
        mid_mask: Option<NodeId>,
    ) -> Result<NodeId> {
        match *self {
            MapVars::Full { w } => tape.matmul(w, x),
            MapVars::LowRank { l, r } => {
                let mut h = tape.matmul(r, x)?;
                if let Some(m) = mid_mask {
                    h = tape.mul(h, m)?;
                }
                tape.matmul(l, h)
            }
            MapVars::LowRankDiag { l, r, d } => {
                let mut h = tape.matmul(r, x)?;
                if let Some(m) = mid_mask {
                    h = tape.mul(h, m)?;
                }
                let lr = tape.matmul(l, h)?;
                let diag = tape.mul_col(x, d)?;
                tape.add(lr, diag)
            }
        }
    }
}
