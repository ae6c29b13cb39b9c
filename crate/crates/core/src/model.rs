//! System configuration and the matrix bundles shared by every stage.
//!
//! Per-(user, subcarrier) blocks are laid out subcarrier-major: block
//! `(k, f)` sits at flat index `f * n_users + k`. The concatenated fully
//! digital precoder therefore has the composite per-subcarrier precoder of
//! subcarrier `f` as the contiguous column range
//! `f * K * N_s .. (f + 1) * K * N_s`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Violation};
use crate::linalg::{frob_sq, hstack, max_modulus, CMat};
use crate::partial::MappingSets;

/// Relative slack for power-constraint checks.
pub const POWER_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    /// BS antennas.
    pub n_tx: usize,
    /// Antennas per user.
    pub n_rx: usize,
    pub n_users: usize,
    pub n_subcarriers: usize,
    /// Data streams per user per subcarrier.
    pub n_streams: usize,
    /// RF chains at the BS.
    pub n_rf_tx: usize,
    /// RF chains per user.
    pub n_rf_rx: usize,
    /// Noise variance (linear). SNR is `1 / noise_var`.
    #[serde(default = "default_noise_var")]
    pub noise_var: f64,
    #[serde(default)]
    pub snr_grid_db: Vec<f64>,
}

fn default_noise_var() -> f64 {
    1.0
}

impl SystemConfig {
    /// `K * N_s * F`, the column count of the concatenated precoder and the
    /// transmit power budget.
    pub fn total_streams(&self) -> usize {
        self.n_users * self.n_streams * self.n_subcarriers
    }

    /// `K * N_s`, streams on one subcarrier.
    pub fn streams_per_subcarrier(&self) -> usize {
        self.n_users * self.n_streams
    }

    pub fn block_index(&self, user: usize, subcarrier: usize) -> usize {
        subcarrier * self.n_users + user
    }

    pub fn with_n_rf_tx(&self, n_rf_tx: usize) -> SystemConfig {
        SystemConfig {
            n_rf_tx,
            ..self.clone()
        }
    }
}

/// Checks the RF chain limits `K*N_s <= N_RF^t < N_t`, `N_s <= N_RF^r < N_r`,
/// positivity of every count and, when `fixed_mapping` is set, divisibility
/// of `N_t` by `N_RF^t`. Every violated constraint is reported.
pub fn validate_config(cfg: SystemConfig, fixed_mapping: bool) -> Result<SystemConfig> {
    let mut v = Vec::new();
    let counts = [
        ("n_tx", cfg.n_tx),
        ("n_rx", cfg.n_rx),
        ("n_users", cfg.n_users),
        ("n_subcarriers", cfg.n_subcarriers),
        ("n_streams", cfg.n_streams),
        ("n_rf_tx", cfg.n_rf_tx),
        ("n_rf_rx", cfg.n_rf_rx),
    ];
    for (name, value) in counts {
        if value == 0 {
            v.push(Violation::NonPositive(name));
        }
    }
    let mut ineq = |lhs, lhs_value, rhs, rhs_value, strict: bool| {
        let ok = if strict {
            lhs_value < rhs_value
        } else {
            lhs_value <= rhs_value
        };
        if !ok {
            v.push(Violation::Inequality {
                lhs,
                lhs_value,
                rhs,
                rhs_value,
                strict,
            });
        }
    };
    ineq("K*N_s", cfg.n_users * cfg.n_streams, "N_RF^t", cfg.n_rf_tx, false);
    ineq("N_RF^t", cfg.n_rf_tx, "N_t", cfg.n_tx, true);
    ineq("N_s", cfg.n_streams, "N_RF^r", cfg.n_rf_rx, false);
    ineq("N_RF^r", cfg.n_rf_rx, "N_r", cfg.n_rx, true);
    if fixed_mapping && cfg.n_rf_tx > 0 && cfg.n_tx % cfg.n_rf_tx != 0 {
        v.push(Violation::Divisibility {
            n_tx: cfg.n_tx,
            n_rf_tx: cfg.n_rf_tx,
        });
    }
    if !(cfg.noise_var.is_finite() && cfg.noise_var >= 0.0) {
        v.push(Violation::NoiseVariance(cfg.noise_var));
    }
    if v.is_empty() {
        Ok(cfg)
    } else {
        Err(Error::InvalidConfig(v))
    }
}

/// Complex matrices indexed by (user, subcarrier), all of one shape.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixGrid {
    n_users: usize,
    n_subcarriers: usize,
    shape: (usize, usize),
    blocks: Vec<CMat>,
}

impl MatrixGrid {
    /// `blocks` must be in subcarrier-major order and share one shape.
    pub fn new(
        n_users: usize,
        n_subcarriers: usize,
        shape: (usize, usize),
        blocks: Vec<CMat>,
    ) -> Result<MatrixGrid> {
        if blocks.len() != n_users * n_subcarriers {
            return Err(Error::ShapeMismatch {
                what: "matrix grid block count",
                expected: (n_users, n_subcarriers),
                got: (blocks.len(), 1),
            });
        }
        if let Some(b) = blocks.iter().find(|b| b.shape() != shape) {
            return Err(Error::ShapeMismatch {
                what: "matrix grid block",
                expected: shape,
                got: b.shape(),
            });
        }
        Ok(MatrixGrid {
            n_users,
            n_subcarriers,
            shape,
            blocks,
        })
    }

    /// Builds a grid by evaluating `f(user, subcarrier)`.
    pub fn try_from_fn(
        n_users: usize,
        n_subcarriers: usize,
        shape: (usize, usize),
        mut f: impl FnMut(usize, usize) -> Result<CMat>,
    ) -> Result<MatrixGrid> {
        let mut blocks = Vec::with_capacity(n_users * n_subcarriers);
        for sc in 0..n_subcarriers {
            for u in 0..n_users {
                blocks.push(f(u, sc)?);
            }
        }
        MatrixGrid::new(n_users, n_subcarriers, shape, blocks)
    }

    /// Splits the columns of `m` into `K * F` blocks of `block_cols` columns.
    pub fn from_concat(
        m: &CMat,
        n_users: usize,
        n_subcarriers: usize,
        block_cols: usize,
    ) -> Result<MatrixGrid> {
        let expected = (m.nrows(), n_users * n_subcarriers * block_cols);
        if m.shape() != expected {
            return Err(Error::ShapeMismatch {
                what: "concatenated matrix",
                expected,
                got: m.shape(),
            });
        }
        let blocks = (0..n_users * n_subcarriers)
            .map(|i| m.columns(i * block_cols, block_cols).into_owned())
            .collect();
        MatrixGrid::new(n_users, n_subcarriers, (m.nrows(), block_cols), blocks)
    }

    pub fn get(&self, user: usize, subcarrier: usize) -> &CMat {
        &self.blocks[subcarrier * self.n_users + user]
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_subcarriers(&self) -> usize {
        self.n_subcarriers
    }

    pub fn shape(&self) -> (usize, usize) {
        self.shape
    }

    pub fn blocks(&self) -> &[CMat] {
        &self.blocks
    }

    /// All blocks side by side, subcarrier-major.
    pub fn concat(&self) -> CMat {
        if self.blocks.is_empty() {
            return CMat::zeros(self.shape.0, 0);
        }
        hstack(&self.blocks)
    }

    /// Blocks of one subcarrier side by side (users in order).
    pub fn subcarrier_concat(&self, subcarrier: usize) -> CMat {
        let start = subcarrier * self.n_users;
        hstack(&self.blocks[start..start + self.n_users])
    }

    /// Blocks of one user side by side (subcarriers in order).
    pub fn user_concat(&self, user: usize) -> CMat {
        let parts: Vec<CMat> = (0..self.n_subcarriers)
            .map(|f| self.get(user, f).clone())
            .collect();
        hstack(&parts)
    }

    pub fn map(&self, mut f: impl FnMut(&CMat) -> CMat) -> Result<MatrixGrid> {
        let blocks: Vec<CMat> = self.blocks.iter().map(&mut f).collect();
        let shape = blocks.first().map_or(self.shape, |b| b.shape());
        MatrixGrid::new(self.n_users, self.n_subcarriers, shape, blocks)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Structure {
    FullyDigital,
    FullyConnected,
    PartiallyConnected(MappingSets),
}

/// Complete transmit precoder and receive combiner set for one channel
/// realization.
///
/// `f_b` holds the digital precoder actually applied per (user, subcarrier):
/// the composite baseband block, cascaded with `f_bd` when interference
/// cancellation is enabled, after power normalization.
#[derive(Debug, Clone)]
pub struct PrecoderBundle {
    structure: Structure,
    f_rf: CMat,
    f_bb: Vec<CMat>,
    f_bd: Option<MatrixGrid>,
    f_b: MatrixGrid,
    w_rf: Vec<CMat>,
    w_bb: MatrixGrid,
}

impl PrecoderBundle {
    pub fn new(
        cfg: &SystemConfig,
        structure: Structure,
        f_rf: CMat,
        f_bb: Vec<CMat>,
        f_bd: Option<MatrixGrid>,
        f_b: MatrixGrid,
        w_rf: Vec<CMat>,
        w_bb: MatrixGrid,
    ) -> Result<PrecoderBundle> {
        let (n_users, n_sc, ns) = (cfg.n_users, cfg.n_subcarriers, cfg.n_streams);
        let n_rf = f_rf.ncols();
        if f_rf.nrows() != cfg.n_tx {
            return Err(Error::ShapeMismatch {
                what: "F_RF",
                expected: (cfg.n_tx, n_rf),
                got: f_rf.shape(),
            });
        }
        if f_bb.len() != n_sc {
            return Err(Error::ShapeMismatch {
                what: "F_BB subcarrier count",
                expected: (n_sc, 1),
                got: (f_bb.len(), 1),
            });
        }
        for b in &f_bb {
            if b.shape() != (n_rf, n_users * ns) {
                return Err(Error::ShapeMismatch {
                    what: "F_BB_f",
                    expected: (n_rf, n_users * ns),
                    got: b.shape(),
                });
            }
        }
        check_grid(&f_b, "F_B", n_users, n_sc, (n_rf, ns))?;
        if let Some(bd) = &f_bd {
            check_grid(bd, "F_BD", n_users, n_sc, (n_users * ns, ns))?;
        }
        if w_rf.len() != n_users {
            return Err(Error::ShapeMismatch {
                what: "W_RF user count",
                expected: (n_users, 1),
                got: (w_rf.len(), 1),
            });
        }
        let n_rf_rx = w_rf.first().map_or(0, |w| w.ncols());
        for w in &w_rf {
            if w.shape() != (cfg.n_rx, n_rf_rx) {
                return Err(Error::ShapeMismatch {
                    what: "W_RF_k",
                    expected: (cfg.n_rx, n_rf_rx),
                    got: w.shape(),
                });
            }
        }
        check_grid(&w_bb, "W_BB", n_users, n_sc, (n_rf_rx, ns))?;
        if let Structure::PartiallyConnected(mapping) = &structure {
            mapping.check_analog(&f_rf)?;
        }
        Ok(PrecoderBundle {
            structure,
            f_rf,
            f_bb,
            f_bd,
            f_b,
            w_rf,
            w_bb,
        })
    }

    pub fn structure(&self) -> &Structure {
        &self.structure
    }

    pub fn f_rf(&self) -> &CMat {
        &self.f_rf
    }

    /// Composite baseband precoder of subcarrier `f` (before cascading).
    pub fn f_bb(&self, subcarrier: usize) -> &CMat {
        &self.f_bb[subcarrier]
    }

    pub fn f_bd(&self) -> Option<&MatrixGrid> {
        self.f_bd.as_ref()
    }

    pub fn f_b(&self) -> &MatrixGrid {
        &self.f_b
    }

    pub fn w_rf(&self, user: usize) -> &CMat {
        &self.w_rf[user]
    }

    pub fn w_bb(&self) -> &MatrixGrid {
        &self.w_bb
    }

    pub fn n_users(&self) -> usize {
        self.w_rf.len()
    }

    pub fn n_subcarriers(&self) -> usize {
        self.f_bb.len()
    }

    /// Overall precoder `F_RF * F_B_{k,f}`.
    pub fn precoder(&self, user: usize, subcarrier: usize) -> CMat {
        &self.f_rf * self.f_b.get(user, subcarrier)
    }

    /// Overall combiner `W_RF_k * W_BB_{k,f}`.
    pub fn combiner(&self, user: usize, subcarrier: usize) -> CMat {
        &self.w_rf[user] * self.w_bb.get(user, subcarrier)
    }

    /// `||F_RF F_B||_F^2` over all users and subcarriers.
    pub fn transmit_power(&self) -> f64 {
        frob_sq(&(&self.f_rf * self.f_b.concat()))
    }

    /// Largest entry modulus over the analog precoder and all analog combiners.
    pub fn max_analog_modulus(&self) -> f64 {
        self.w_rf
            .iter()
            .map(max_modulus)
            .fold(max_modulus(&self.f_rf), f64::max)
    }
}

fn check_grid(
    g: &MatrixGrid,
    what: &'static str,
    n_users: usize,
    n_sc: usize,
    shape: (usize, usize),
) -> Result<()> {
    if g.n_users() != n_users || g.n_subcarriers() != n_sc {
        return Err(Error::ShapeMismatch {
            what,
            expected: (n_users, n_sc),
            got: (g.n_users(), g.n_subcarriers()),
        });
    }
    if g.shape() != shape {
        return Err(Error::ShapeMismatch {
            what,
            expected: shape,
            got: g.shape(),
        });
    }
    Ok(())
}
