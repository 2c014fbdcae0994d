//! Matrix-factorization backbone.
//!
//! A user and an item embedding table of the same width, scored either by the
//! raw inner product or by cosine similarity.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_rng, tag};

/// Added to the product of norms in the cosine denominator.
pub const COSINE_FLOOR: f64 = 1e-12;

/// Standard deviation of the Gaussian used to initialize both tables.
pub const INIT_STD: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreKind {
    Dot,
    Cosine,
}

impl std::str::FromStr for ScoreKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dot" => Ok(ScoreKind::Dot),
            "cosine" | "cos" => Ok(ScoreKind::Cosine),
            other => Err(Error::invalid(format!("unknown score kind {other:?}"))),
        }
    }
}

impl std::fmt::Display for ScoreKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ScoreKind::Dot => "dot",
            ScoreKind::Cosine => "cosine",
        })
    }
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    rows: usize,
    dim: usize,
    data: Vec<f64>,
}

impl Table {
    pub fn zeros(rows: usize, dim: usize) -> Self {
        Table {
            rows,
            dim,
            data: vec![0.0; rows * dim],
        }
    }

    pub fn from_vec(rows: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * dim {
            return Err(Error::Shape(format!(
                "{} values for a {rows}x{dim} table",
                data.len()
            )));
        }
        Ok(Table { rows, dim, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, r: u32) -> &[f64] {
        let start = r as usize * self.dim;
        &self.data[start..start + self.dim]
    }

    pub fn row_mut(&mut self, r: u32) -> &mut [f64] {
        let start = r as usize * self.dim;
        &mut self.data[start..start + self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    pub users: Table,
    pub items: Table,
    pub score_kind: ScoreKind,
}

impl EmbeddingModel {
    /// Gaussian `N(0, 0.1²)` initialization, deterministic in `seed`.
    pub fn init(
        num_users: usize,
        num_items: usize,
        dim: usize,
        score_kind: ScoreKind,
        seed: u64,
    ) -> Result<Self> {
        if num_users == 0 || num_items == 0 || dim == 0 {
            return Err(Error::invalid(format!(
                "model needs positive sizes, got {num_users} users, {num_items} items, d={dim}"
            )));
        }
        let normal = Normal::new(0.0, INIT_STD).expect("valid normal parameters");
        let fill = |rows: usize, stream: u64| {
            let mut rng = derive_rng(seed, &[tag::INIT, stream]);
            let data = (0..rows * dim).map(|_| normal.sample(&mut rng)).collect();
            Table { rows, dim, data }
        };
        Ok(EmbeddingModel {
            users: fill(num_users, 0),
            items: fill(num_items, 1),
            score_kind,
        })
    }

    pub fn dim(&self) -> usize {
        self.users.dim
    }

    pub fn num_users(&self) -> usize {
        self.users.rows
    }

    pub fn num_items(&self) -> usize {
        self.items.rows
    }

    pub fn score(&self, user: u32, item: u32) -> f64 {
        score_rows(self.score_kind, self.users.row(user), self.items.row(item))
    }

    /// Scores of `user` against every item, written into `out`.
    pub fn score_all(&self, user: u32, out: &mut Vec<f64>) {
        self.score_with_user_norm(user, 0..self.items.rows as u32, out);
    }

    pub fn score_items(&self, user: u32, items: &[u32], out: &mut Vec<f64>) {
        self.score_with_user_norm(user, items.iter().copied(), out);
    }

    fn score_with_user_norm(&self, user: u32, items: impl Iterator<Item = u32>, out: &mut Vec<f64>) {
        let u = self.users.row(user);
        let kind = self.score_kind;
        let u_norm = self.user_norm(user);
        out.clear();
        out.extend(items.map(|i| {
            let v = self.items.row(i);
            let v_norm = if kind == ScoreKind::Cosine { norm(v) } else { 0.0 };
            score_rows_normed(kind, u, v, u_norm, v_norm)
        }));
    }

    /// Norm of every item row for cosine scoring, empty for dot scores.
    ///
    /// Valid until the item table next changes.
    pub fn item_norms(&self) -> Vec<f64> {
        match self.score_kind {
            ScoreKind::Dot => Vec::new(),
            ScoreKind::Cosine => (0..self.items.rows as u32).map(|i| norm(self.items.row(i))).collect(),
        }
    }

    /// Norm of a user row for cosine scoring, 0 for dot scores.
    pub fn user_norm(&self, user: u32) -> f64 {
        match self.score_kind {
            ScoreKind::Dot => 0.0,
            ScoreKind::Cosine => norm(self.users.row(user)),
        }
    }

    /// Scores with cached norms from [`Self::user_norm`] and [`Self::item_norms`].
    pub fn score_items_normed(&self, user: u32, user_norm: f64, items: &[u32], item_norms: &[f64], out: &mut Vec<f64>) {
        let u = self.users.row(user);
        let kind = self.score_kind;
        out.clear();
        out.extend(items.iter().map(|&i| {
            let v_norm = item_norms.get(i as usize).copied().unwrap_or(0.0);
            score_rows_normed(kind, u, self.items.row(i), user_norm, v_norm)
        }));
    }

    pub fn check_finite(&self) -> Result<()> {
        for (name, table) in [("user", &self.users), ("item", &self.items)] {
            if let Some(pos) = table.data.iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFinite {
                    context: format!("{name} table row {}", pos / table.dim),
                });
            }
        }
        Ok(())
    }
}

/// Inner product with four independent accumulators so the loop vectorizes.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 4];
    let (mut xs, mut ys) = (a.chunks_exact(4), b.chunks_exact(4));
    for (x, y) in (&mut xs).zip(&mut ys) {
        for lane in 0..4 {
            acc[lane] += x[lane] * y[lane];
        }
    }
    let tail: f64 = xs.remainder().iter().zip(ys.remainder()).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn score_rows(kind: ScoreKind, u: &[f64], v: &[f64]) -> f64 {
    match kind {
        ScoreKind::Dot => dot(u, v),
        ScoreKind::Cosine => score_rows_normed(kind, u, v, norm(u), norm(v)),
    }
}

/// [`score_rows`] with the row norms supplied; they are ignored for dot scores.
pub fn score_rows_normed(kind: ScoreKind, u: &[f64], v: &[f64], u_norm: f64, v_norm: f64) -> f64 {
    match kind {
        ScoreKind::Dot => dot(u, v),
        ScoreKind::Cosine => dot(u, v) / (u_norm * v_norm + COSINE_FLOOR),
    }
}

/// Adds `coef·∂s/∂u` to `grad_u` and `coef·∂s/∂v` to `grad_v`.
pub fn accumulate_score_grad(
    kind: ScoreKind,
    u: &[f64],
    v: &[f64],
    coef: f64,
    grad_u: &mut [f64],
    grad_v: &mut [f64],
) {
    let (a, b) = match kind {
        ScoreKind::Dot => (0.0, 0.0),
        ScoreKind::Cosine => (norm(u), norm(v)),
    };
    accumulate_score_grad_normed(kind, u, v, a, b, coef, grad_u, grad_v)
}

/// [`accumulate_score_grad`] with the row norms supplied.
#[allow(clippy::too_many_arguments)]
pub fn accumulate_score_grad_normed(
    kind: ScoreKind,
    u: &[f64],
    v: &[f64],
    a: f64,
    b: f64,
    coef: f64,
    grad_u: &mut [f64],
    grad_v: &mut [f64],
) {
    let n = u.len();
    let (v, grad_u, grad_v) = (&v[..n], &mut grad_u[..n], &mut grad_v[..n]);
    match kind {
        ScoreKind::Dot => {
            for k in 0..n {
                grad_u[k] += coef * v[k];
                grad_v[k] += coef * u[k];
            }
        }
        ScoreKind::Cosine => {
            let inner = dot(u, v);
            let denom = a * b + COSINE_FLOOR;
            let first = coef / denom;
            // d(ab)/du = (b/a)·u; guard the zero-norm direction.
            let tail = coef * inner / (denom * denom);
            let su = if a > 0.0 { tail * b / a } else { 0.0 };
            let sv = if b > 0.0 { tail * a / b } else { 0.0 };
            for k in 0..n {
                grad_u[k] += first * v[k] - su * u[k];
                grad_v[k] += first * u[k] - sv * v[k];
            }
        }
    }
}
