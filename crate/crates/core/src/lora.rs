//! Low-rank adapters: `ΔW = B·A` with `B: m×r`, `A: r×n`.
//!
//! The adapter carries no `α/r` scaling; the materialized update is exactly
//! `B·A`. Rank surgery (truncation, zero padding) operates on the trailing
//! components: column `i` of `B` is paired with row `i` of `A`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoraConfig {
    /// Output dimension of the host weight.
    pub m: usize,
    /// Input dimension of the host weight.
    pub n: usize,
    pub rank: usize,
    pub num_adapted_matrices: usize,
}

impl LoraConfig {
    pub fn new(m: usize, n: usize, rank: usize, num_adapted_matrices: usize) -> Result<Self> {
        let cfg = LoraConfig {
            m,
            n,
            rank,
            num_adapted_matrices,
        };
        cfg.validate()?;
        if !cfg.reduces_parameters() {
            log::warn!(
                "rank {rank} >= mn/(m+n) for a {m}x{n} weight; the adapter is not smaller than the weight"
            );
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 || self.m == 0 || self.n == 0 {
            return Err(Error::InvalidArgument(format!(
                "LoRA dims must be positive, got m={} n={} r={}",
                self.m, self.n, self.rank
            )));
        }
        Ok(())
    }

    /// Whether `r < mn/(m+n)`, i.e. the factors hold fewer numbers than `W`.
    pub fn reduces_parameters(&self) -> bool {
        // r(m+n) < mn, kept in integers
        self.rank * (self.m + self.n) < self.m * self.n
    }

    pub fn with_rank(self, rank: usize) -> Self {
        LoraConfig { rank, ..self }
    }
}

/// Trainable parameters across all adapted matrices: `count·(m+n)·r`.
pub fn param_count(cfg: &LoraConfig) -> u64 {
    cfg.num_adapted_matrices as u64 * (cfg.m + cfg.n) as u64 * cfg.rank as u64
}

#[derive(Clone, Debug, PartialEq)]
pub struct LoraAdapter {
    b: Matrix,
    a: Matrix,
}

impl LoraAdapter {
    pub fn new(b: Matrix, a: Matrix) -> Result<Self> {
        if b.cols() != a.rows() || b.cols() == 0 {
            return Err(Error::ShapeMismatch {
                op: "LoraAdapter::new",
                left: b.shape(),
                right: a.shape(),
            });
        }
        Ok(LoraAdapter { b, a })
    }

    /// `A ~ N(0, 1/r)`, `B = 0`, so the initial update is exactly zero.
    pub fn init(cfg: &LoraConfig, rng: &mut Rng) -> Self {
        let std = (1.0 / cfg.rank as f64).sqrt();
        let a = Matrix::from_fn(cfg.rank, cfg.n, |_, _| rng.normal(0.0, std));
        LoraAdapter {
            b: Matrix::zeros(cfg.m, cfg.rank),
            a,
        }
    }

    pub fn b(&self) -> &Matrix {
        &self.b
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn b_mut(&mut self) -> &mut Matrix {
        &mut self.b
    }

    pub fn a_mut(&mut self) -> &mut Matrix {
        &mut self.a
    }

    pub fn into_factors(self) -> (Matrix, Matrix) {
        (self.b, self.a)
    }

    pub fn rank(&self) -> usize {
        self.b.cols()
    }

    pub fn m(&self) -> usize {
        self.b.rows()
    }

    pub fn n(&self) -> usize {
        self.a.cols()
    }

    pub fn param_count(&self) -> u64 {
        ((self.m() + self.n()) * self.rank()) as u64
    }

    pub fn delta(&self) -> Matrix {
        self.b
            .matmul(&self.a)
            .expect("adapter invariant: B.cols == A.rows")
    }

    /// Keeps the leading `r_new` components.
    pub fn truncate(&self, r_new: usize) -> Result<LoraAdapter> {
        if r_new == 0 || r_new > self.rank() {
            return Err(Error::InvalidRank {
                op: "truncate",
                got: r_new,
                limit: self.rank(),
            });
        }
        if r_new == self.rank() {
            return Ok(self.clone());
        }
        Ok(LoraAdapter {
            b: self.b.columns(0..r_new)?,
            a: self.a.row_block(0..r_new)?,
        })
    }

    /// Appends zero columns to `B` and zero rows to `A` up to `r_target`.
    pub fn pad_zero(&self, r_target: usize) -> Result<LoraAdapter> {
        if r_target < self.rank() {
            return Err(Error::InvalidRank {
                op: "pad_zero",
                got: r_target,
                limit: self.rank(),
            });
        }
        if r_target == self.rank() {
            return Ok(self.clone());
        }
        let extra = r_target - self.rank();
        Ok(LoraAdapter {
            b: self.b.hcat(&Matrix::zeros(self.m(), extra))?,
            a: self.a.vcat(&Matrix::zeros(extra, self.n()))?,
        })
    }

    /// Grows the rank by appending `tail_a` under `A` and zero columns to
    /// `B`. The update `B·A` is unchanged while the new components can
    /// still receive gradient through `B`.
    pub fn extend_with(&self, tail_a: Matrix) -> Result<LoraAdapter> {
        let extra = tail_a.rows();
        Ok(LoraAdapter {
            b: self.b.hcat(&Matrix::zeros(self.m(), extra))?,
            a: self.a.vcat(&tail_a)?,
        })
    }

    /// Flat little-endian layout: `m, n, r` as `u64`, then `B` and `A`
    /// row-major as `f64`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + 8 * (self.b.data().len() + self.a.data().len()));
        for dim in [self.m(), self.n(), self.rank()] {
            out.extend_from_slice(&(dim as u64).to_le_bytes());
        }
        for v in self.b.data().iter().chain(self.a.data()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<LoraAdapter> {
        let word = |i: usize| -> Result<[u8; 8]> {
            bytes
                .get(i * 8..(i + 1) * 8)
                .map(|s| s.try_into().expect("slice of 8"))
                .ok_or_else(|| Error::Decode(format!("truncated at word {i}")))
        };
        let m = u64::from_le_bytes(word(0)?) as usize;
        let n = u64::from_le_bytes(word(1)?) as usize;
        let r = u64::from_le_bytes(word(2)?) as usize;
        let expected = 3 + m * r + r * n;
        if bytes.len() != expected * 8 {
            return Err(Error::Decode(format!(
                "header says {m}x{r} and {r}x{n} ({} bytes), got {} bytes",
                expected * 8,
                bytes.len()
            )));
        }
        let values: Vec<f64> = (3..expected)
            .map(|i| word(i).map(f64::from_le_bytes))
            .collect::<Result<_>>()?;
        let (b, a) = values.split_at(m * r);
        LoraAdapter::new(
            Matrix::new(m, r, b.to_vec())?,
            Matrix::new(r, n, a.to_vec())?,
        )
    }
}
