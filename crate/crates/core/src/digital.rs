//! Fully digital block-diagonalization precoder and matching combiners.
//!
//! These are the approximation targets for every hybrid design and the
//! performance upper bound in simulations.

use crate::channel::ChannelRealization;
use crate::error::{Error, Result};
use crate::linalg::{null_space, svd, vstack, CMat};
use crate::model::{MatrixGrid, SystemConfig};

/// Per-(user, subcarrier) `N_t x N_s` blocks of the fully digital precoder.
#[derive(Debug, Clone)]
pub struct FullyDigitalPrecoder {
    blocks: MatrixGrid,
}

impl FullyDigitalPrecoder {
    pub fn get(&self, user: usize, subcarrier: usize) -> &CMat {
        self.blocks.get(user, subcarrier)
    }

    pub fn blocks(&self) -> &MatrixGrid {
        &self.blocks
    }

    /// Concatenated `N_t x K N_s F` precoder (subcarrier-major).
    pub fn concat(&self) -> CMat {
        self.blocks.concat()
    }
}

/// Classical BD: each user's precoder lives in the null space of the other
/// users' stacked channels and takes the `N_s` strongest right singular
/// directions of its own projected channel. All blocks get equal power, so
/// `||F_opt||_F^2 = K N_s F`.
pub fn bd_precoder(chan: &ChannelRealization, cfg: &SystemConfig) -> Result<FullyDigitalPrecoder> {
    let (n_users, n_sc, ns) = (cfg.n_users, cfg.n_subcarriers, cfg.n_streams);
    if chan.n_users() != n_users || chan.n_subcarriers() != n_sc {
        return Err(Error::ShapeMismatch {
            what: "channel realization",
            expected: (n_users, n_sc),
            got: (chan.n_users(), chan.n_subcarriers()),
        });
    }
    let blocks = MatrixGrid::try_from_fn(n_users, n_sc, (cfg.n_tx, ns), |k, f| {
        let others: Vec<CMat> = (0..n_users)
            .filter(|&j| j != k)
            .map(|j| chan.h(j, f).clone())
            .collect();
        let basis = if others.is_empty() {
            CMat::identity(cfg.n_tx, cfg.n_tx)
        } else {
            null_space(&vstack(&others))
        };
        if basis.ncols() < ns {
            return Err(Error::InsufficientNullSpace {
                user: k,
                subcarrier: f,
                available: basis.ncols(),
                required: ns,
            });
        }
        let projected = chan.h(k, f) * &basis;
        let dec = svd(&projected);
        if dec.s.len() < ns {
            return Err(Error::InfeasibleDimensions(format!(
                "user {k} channel supports {} streams, {ns} requested",
                dec.s.len()
            )));
        }
        Ok(basis * dec.v.columns(0, ns))
    })?;
    Ok(FullyDigitalPrecoder { blocks })
}

/// `W_opt_{k,f}`: top `N_s` left singular vectors of `H_{k,f} F_opt_{k,f}`.
pub fn digital_combiner(
    chan: &ChannelRealization,
    f_opt: &FullyDigitalPrecoder,
) -> Result<MatrixGrid> {
    let g = f_opt.blocks();
    let ns = g.shape().1;
    let n_rx = chan.shape().0;
    if ns > n_rx {
        return Err(Error::InfeasibleDimensions(format!(
            "{ns} streams exceed {n_rx} receive antennas"
        )));
    }
    MatrixGrid::try_from_fn(g.n_users(), g.n_subcarriers(), (n_rx, ns), |k, f| {
        let eff = chan.h(k, f) * g.get(k, f);
        Ok(svd(&eff).u.columns(0, ns).into_owned())
    })
}
