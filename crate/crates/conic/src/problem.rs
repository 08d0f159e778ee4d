//! Problem description: Hermitian PSD block variables, nonnegative scalars,
//! a linear objective and affine constraints.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::ConicError;

/// Index of a Hermitian PSD block variable inside a [`ConicProblem`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BlockId(pub usize);

/// Index of a nonnegative scalar variable inside a [`ConicProblem`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ScalarId(pub usize);

/// A Hermitian coefficient matrix applied to a block through `Re Tr(T X)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HermitianTerm {
    /// `coef · v vᴴ`, contributing `coef · vᴴ X v`.
    RankOne { coef: f64, v: Vec<Complex64> },
    /// `coef · I`, contributing `coef · Tr X`.
    Identity { coef: f64 },
    /// Arbitrary Hermitian matrix stored row-major.
    Dense { dim: usize, entries: Vec<Complex64> },
}

impl HermitianTerm {
    pub fn rank_one(coef: f64, v: impl Into<Vec<Complex64>>) -> Self {
        HermitianTerm::RankOne { coef, v: v.into() }
    }

    pub fn dense(m: &DMatrix<Complex64>) -> Self {
        let dim = m.nrows();
        let mut entries = Vec::with_capacity(dim * dim);
        for i in 0..dim {
            for j in 0..dim {
                entries.push(m[(i, j)]);
            }
        }
        HermitianTerm::Dense { dim, entries }
    }

    /// The coefficient as an explicit `dim × dim` matrix.
    pub fn to_matrix(&self, dim: usize) -> DMatrix<Complex64> {
        match self {
            HermitianTerm::RankOne { coef, v } => {
                DMatrix::from_fn(dim, dim, |i, j| v[i] * v[j].conj() * *coef)
            }
            HermitianTerm::Identity { coef } => {
                DMatrix::from_diagonal_element(dim, dim, Complex64::new(*coef, 0.0))
            }
            HermitianTerm::Dense { dim: d, entries } => {
                DMatrix::from_fn(*d, *d, |i, j| entries[i * d + j])
            }
        }
    }

    /// `Re Tr(T X)`.
    pub fn apply(&self, x: &DMatrix<Complex64>) -> f64 {
        match self {
            HermitianTerm::RankOne { coef, v } => {
                let n = v.len();
                let mut acc = Complex64::new(0.0, 0.0);
                for i in 0..n {
                    let mut row = Complex64::new(0.0, 0.0);
                    for j in 0..n {
                        row += x[(i, j)] * v[j];
                    }
                    acc += v[i].conj() * row;
                }
                coef * acc.re
            }
            HermitianTerm::Identity { coef } => coef * x.trace().re,
            HermitianTerm::Dense { dim, entries } => {
                let mut acc = 0.0;
                for i in 0..*dim {
                    for j in 0..*dim {
                        acc += (entries[i * dim + j] * x[(j, i)]).re;
                    }
                }
                acc
            }
        }
    }

    fn check_dim(&self, dim: usize) -> Result<(), String> {
        match self {
            HermitianTerm::RankOne { coef, v } => {
                if v.len() != dim {
                    return Err(format!("rank-one vector length {} != block dim {dim}", v.len()));
                }
                if !coef.is_finite() || v.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                    return Err("non-finite rank-one term".into());
                }
            }
            HermitianTerm::Identity { coef } => {
                if !coef.is_finite() {
                    return Err("non-finite identity coefficient".into());
                }
            }
            HermitianTerm::Dense { dim: d, entries } => {
                if *d != dim || entries.len() != d * d {
                    return Err(format!("dense term of dim {d} on block of dim {dim}"));
                }
                for i in 0..dim {
                    for j in 0..dim {
                        let a = entries[i * dim + j];
                        let b = entries[j * dim + i].conj();
                        if (a - b).norm() > 1e-12 * (1.0 + a.norm()) {
                            return Err("dense term is not Hermitian".into());
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// One Hermitian term attached to a block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockTerm {
    pub block: BlockId,
    pub term: HermitianTerm,
}

/// `Σ Re Tr(T_b X_b) + Σ a_s x_s`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LinearExpr {
    pub block_terms: Vec<BlockTerm>,
    pub scalar_terms: Vec<(ScalarId, f64)>,
}

impl LinearExpr {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn block(mut self, block: BlockId, term: HermitianTerm) -> Self {
        self.block_terms.push(BlockTerm { block, term });
        self
    }

    pub fn scalar(mut self, scalar: ScalarId, coef: f64) -> Self {
        self.scalar_terms.push((scalar, coef));
        self
    }

    pub fn push_block(&mut self, block: BlockId, term: HermitianTerm) {
        self.block_terms.push(BlockTerm { block, term });
    }

    pub fn push_scalar(&mut self, scalar: ScalarId, coef: f64) {
        self.scalar_terms.push((scalar, coef));
    }

    pub fn evaluate(&self, values: &ConicValues) -> f64 {
        let mut acc = 0.0;
        for t in &self.block_terms {
            acc += t.term.apply(&values.blocks[t.block.0]);
        }
        for (s, a) in &self.scalar_terms {
            acc += a * values.scalars[s.0];
        }
        acc
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sense {
    Eq,
    Geq,
    Leq,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub label: String,
    pub expr: LinearExpr,
    pub sense: Sense,
    pub rhs: f64,
}

impl Constraint {
    /// Signed violation: positive when the constraint is violated.
    pub fn violation(&self, values: &ConicValues) -> f64 {
        let lhs = self.expr.evaluate(values);
        match self.sense {
            Sense::Eq => (lhs - self.rhs).abs(),
            Sense::Geq => self.rhs - lhs,
            Sense::Leq => lhs - self.rhs,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockVar {
    pub name: String,
    pub dim: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalarVar {
    pub name: String,
}

/// `minimize objective` over Hermitian PSD blocks and nonnegative scalars
/// subject to affine constraints.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConicProblem {
    pub blocks: Vec<BlockVar>,
    pub scalars: Vec<ScalarVar>,
    pub objective: LinearExpr,
    pub constraints: Vec<Constraint>,
}

/// Values for every variable of a [`ConicProblem`].
#[derive(Clone, Debug, PartialEq)]
pub struct ConicValues {
    pub blocks: Vec<DMatrix<Complex64>>,
    pub scalars: Vec<f64>,
}

impl ConicValues {
    pub fn zeros(problem: &ConicProblem) -> Self {
        Self {
            blocks: problem
                .blocks
                .iter()
                .map(|b| DMatrix::zeros(b.dim, b.dim))
                .collect(),
            scalars: vec![0.0; problem.scalars.len()],
        }
    }
}

impl ConicProblem {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_block(&mut self, name: impl Into<String>, dim: usize) -> BlockId {
        self.blocks.push(BlockVar { name: name.into(), dim });
        BlockId(self.blocks.len() - 1)
    }

    pub fn add_scalar(&mut self, name: impl Into<String>) -> ScalarId {
        self.scalars.push(ScalarVar { name: name.into() });
        ScalarId(self.scalars.len() - 1)
    }

    pub fn set_objective(&mut self, expr: LinearExpr) {
        self.objective = expr;
    }

    pub fn add_constraint(
        &mut self,
        label: impl Into<String>,
        expr: LinearExpr,
        sense: Sense,
        rhs: f64,
    ) {
        self.constraints.push(Constraint { label: label.into(), expr, sense, rhs });
    }

    fn check_expr(&self, what: &str, expr: &LinearExpr) -> Result<(), ConicError> {
        for t in &expr.block_terms {
            let block = self.blocks.get(t.block.0).ok_or_else(|| {
                ConicError::InvalidProblem(format!("{what}: unknown block {}", t.block.0))
            })?;
            t.term
                .check_dim(block.dim)
                .map_err(|e| ConicError::InvalidProblem(format!("{what}: {e}")))?;
        }
        for (s, a) in &expr.scalar_terms {
            if s.0 >= self.scalars.len() {
                return Err(ConicError::InvalidProblem(format!("{what}: unknown scalar {}", s.0)));
            }
            if !a.is_finite() {
                return Err(ConicError::InvalidProblem(format!("{what}: non-finite coefficient")));
            }
        }
        Ok(())
    }

    /// Checks that every term references a declared variable with matching
    /// dimensions and finite data.
    pub fn validate(&self) -> Result<(), ConicError> {
        if let Some(b) = self.blocks.iter().find(|b| b.dim == 0) {
            return Err(ConicError::InvalidProblem(format!("block {} has dimension 0", b.name)));
        }
        self.check_expr("objective", &self.objective)?;
        for c in &self.constraints {
            self.check_expr(&c.label, &c.expr)?;
            if !c.rhs.is_finite() {
                return Err(ConicError::InvalidProblem(format!("{}: non-finite rhs", c.label)));
            }
        }
        Ok(())
    }

    pub fn objective_value(&self, values: &ConicValues) -> f64 {
        self.objective.evaluate(values)
    }

    /// Largest constraint violation (0 when every constraint holds).
    pub fn max_violation(&self, values: &ConicValues) -> f64 {
        self.constraints
            .iter()
            .map(|c| c.violation(values))
            .fold(0.0, f64::max)
    }

    pub fn to_json(&self) -> Result<String, ConicError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self, ConicError> {
        let p: ConicProblem = serde_json::from_str(s)?;
        p.validate()?;
        Ok(p)
    }
}
