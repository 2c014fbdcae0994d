//! Sparse gradient buffers and a row-sparse Adam optimizer.
//!
//! Only rows touched by the current batch are updated. Bias correction uses
//! the global step counter, which is incremented once per call to
//! [`AdamState::step`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{EmbeddingModel, Table};

/// Dense-backed gradient accumulator that remembers which rows were written.
#[derive(Debug, Clone)]
pub struct SparseGrad {
    dim: usize,
    data: Vec<f64>,
    touched: Vec<u32>,
    marked: Vec<bool>,
}

impl SparseGrad {
    pub fn new(rows: usize, dim: usize) -> Self {
        SparseGrad {
            dim,
            data: vec![0.0; rows * dim],
            touched: Vec::new(),
            marked: vec![false; rows],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row_mut(&mut self, r: u32) -> &mut [f64] {
        if !self.marked[r as usize] {
            self.marked[r as usize] = true;
            self.touched.push(r);
        }
        let start = r as usize * self.dim;
        &mut self.data[start..start + self.dim]
    }

    pub fn row(&self, r: u32) -> &[f64] {
        let start = r as usize * self.dim;
        &self.data[start..start + self.dim]
    }

    /// Rows written since the last clear, in first-touch order.
    pub fn touched(&self) -> &[u32] {
        &self.touched
    }

    pub fn clear(&mut self) {
        for &r in &self.touched {
            let start = r as usize * self.dim;
            self.data[start..start + self.dim].fill(0.0);
            self.marked[r as usize] = false;
        }
        self.touched.clear();
    }

    /// Adds every touched row of `other` into `self`.
    pub fn merge_from(&mut self, other: &SparseGrad) {
        for &r in &other.touched {
            let src = other.row(r);
            let start = r as usize * self.dim;
            let dst = &mut self.data[start..start + self.dim];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
            if !self.marked[r as usize] {
                self.marked[r as usize] = true;
                self.touched.push(r);
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for &r in &self.touched {
            let start = r as usize * self.dim;
            for x in &mut self.data[start..start + self.dim] {
                *x *= factor;
            }
        }
    }
}

/// Gradient buffers for both embedding tables.
#[derive(Debug, Clone)]
pub struct ModelGrad {
    pub users: SparseGrad,
    pub items: SparseGrad,
}

impl ModelGrad {
    pub fn for_model(model: &EmbeddingModel) -> Self {
        ModelGrad {
            users: SparseGrad::new(model.num_users(), model.dim()),
            items: SparseGrad::new(model.num_items(), model.dim()),
        }
    }

    pub fn clear(&mut self) {
        self.users.clear();
        self.items.clear();
    }

    pub fn merge_from(&mut self, other: &ModelGrad) {
        self.users.merge_from(&other.users);
        self.items.merge_from(&other.items);
    }

    pub fn scale(&mut self, factor: f64) {
        self.users.scale(factor);
        self.items.scale(factor);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        AdamConfig {
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments for one table.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub first: Table,
    pub second: Table,
}

impl Moments {
    pub fn zeros(rows: usize, dim: usize) -> Self {
        Moments {
            first: Table::zeros(rows, dim),
            second: Table::zeros(rows, dim),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub users: Moments,
    pub items: Moments,
    pub step_count: u64,
}

impl AdamState {
    pub fn new(model: &EmbeddingModel, config: AdamConfig) -> Self {
        AdamState {
            config,
            users: Moments::zeros(model.num_users(), model.dim()),
            items: Moments::zeros(model.num_items(), model.dim()),
            step_count: 0,
        }
    }

    /// One Adam step over the touched rows of both tables.
    ///
    /// Gradients are validated before anything is written, so an error leaves
    /// parameters and moments untouched.
    pub fn step(&mut self, model: &mut EmbeddingModel, grad: &ModelGrad) -> Result<()> {
        check_finite(&grad.users, "user")?;
        check_finite(&grad.items, "item")?;
        self.step_count += 1;
        let t = self.step_count as i32;
        let cfg = self.config;
        apply(&cfg, t, &mut model.users, &mut self.users, &grad.users);
        apply(&cfg, t, &mut model.items, &mut self.items, &grad.items);
        Ok(())
    }
}

fn check_finite(grad: &SparseGrad, table: &'static str) -> Result<()> {
    for &r in grad.touched() {
        if grad.row(r).iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteGradient { table, row: r });
        }
    }
    Ok(())
}

/// Updates one table in place for the touched rows of `grad`.
pub fn apply(cfg: &AdamConfig, t: i32, params: &mut Table, moments: &mut Moments, grad: &SparseGrad) {
    let bias1 = 1.0 - cfg.beta1.powi(t);
    let bias2 = 1.0 - cfg.beta2.powi(t);
    for &r in grad.touched() {
        let g_row = grad.row(r);
        let p_row = params.row_mut(r);
        let m_row = moments.first.row_mut(r);
        let v_row = moments.second.row_mut(r);
        for k in 0..g_row.len() {
            let g = g_row[k] + cfg.weight_decay * p_row[k];
            m_row[k] = cfg.beta1 * m_row[k] + (1.0 - cfg.beta1) * g;
            v_row[k] = cfg.beta2 * v_row[k] + (1.0 - cfg.beta2) * g * g;
            let m_hat = m_row[k] / bias1;
            let v_hat = v_row[k] / bias2;
            p_row[k] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
}
