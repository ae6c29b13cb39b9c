//! Residual interuser-interference cancellation on top of a hybrid design.
//!
//! After the analog and baseband stages, each user sees an `N_s x K N_s`
//! effective channel. A second, low-dimensional BD precoder on those
//! channels removes what the hybrid approximation left behind.

use num_complex::Complex64;

use crate::channel::ChannelRealization;
use crate::error::{Error, Result};
use crate::linalg::{frob_sq, null_space, svd, vstack, CMat};
use crate::model::{MatrixGrid, PrecoderBundle};

/// `H_hat_{k,f} = W_BB_{k,f}^H W_RF_k^H H_{k,f} F_RF F_BB_f`, each `N_s x K N_s`.
pub fn effective_channels_from_parts(
    chan: &ChannelRealization,
    f_rf: &CMat,
    f_bb: &[CMat],
    w_rf: &[CMat],
    w_bb: &MatrixGrid,
) -> Result<MatrixGrid> {
    let (n_users, n_sc) = (chan.n_users(), chan.n_subcarriers());
    if f_bb.len() != n_sc || w_rf.len() != n_users {
        return Err(Error::ShapeMismatch {
            what: "precoder parts vs channel",
            expected: (n_users, n_sc),
            got: (w_rf.len(), f_bb.len()),
        });
    }
    if w_bb.n_users() != n_users || w_bb.n_subcarriers() != n_sc {
        return Err(Error::ShapeMismatch {
            what: "W_BB grid",
            expected: (n_users, n_sc),
            got: (w_bb.n_users(), w_bb.n_subcarriers()),
        });
    }
    let (n_rx, n_tx) = chan.shape();
    if f_rf.nrows() != n_tx {
        return Err(Error::ShapeMismatch {
            what: "F_RF rows vs transmit antennas",
            expected: (n_tx, f_rf.ncols()),
            got: f_rf.shape(),
        });
    }
    let ns = w_bb.shape().1;
    let cols = f_bb.first().map_or(0, |b| b.ncols());
    MatrixGrid::try_from_fn(n_users, n_sc, (ns, cols), |k, f| {
        if w_rf[k].nrows() != n_rx {
            return Err(Error::ShapeMismatch {
                what: "W_RF rows vs receive antennas",
                expected: (n_rx, w_rf[k].ncols()),
                got: w_rf[k].shape(),
            });
        }
        let w = &w_rf[k] * w_bb.get(k, f);
        Ok(w.adjoint() * chan.h(k, f) * f_rf * &f_bb[f])
    })
}

pub fn effective_channels(chan: &ChannelRealization, bundle: &PrecoderBundle) -> Result<MatrixGrid> {
    let f_bb: Vec<CMat> = (0..bundle.n_subcarriers())
        .map(|f| bundle.f_bb(f).clone())
        .collect();
    let w_rf: Vec<CMat> = (0..bundle.n_users())
        .map(|k| bundle.w_rf(k).clone())
        .collect();
    effective_channels_from_parts(chan, bundle.f_rf(), &f_bb, &w_rf, bundle.w_bb())
}

/// BD on effective channels: `F_BD_{k,f}` spans the null space of the other
/// users' effective channels on subcarrier `f`, steered along the top `N_s`
/// right singular directions of user `k`'s projected channel.
pub fn bd_cascade(eff: &MatrixGrid, n_streams: usize) -> Result<MatrixGrid> {
    let (n_users, n_sc) = (eff.n_users(), eff.n_subcarriers());
    let dim = eff.shape().1;
    MatrixGrid::try_from_fn(n_users, n_sc, (dim, n_streams), |k, f| {
        let others: Vec<CMat> = (0..n_users)
            .filter(|&j| j != k)
            .map(|j| eff.get(j, f).clone())
            .collect();
        let basis = if others.is_empty() {
            CMat::identity(dim, dim)
        } else {
            null_space(&vstack(&others))
        };
        if basis.ncols() < n_streams {
            return Err(Error::InsufficientNullSpace {
                user: k,
                subcarrier: f,
                available: basis.ncols(),
                required: n_streams,
            });
        }
        let dec = svd(&(eff.get(k, f) * &basis));
        if dec.s.len() < n_streams {
            return Err(Error::InsufficientNullSpace {
                user: k,
                subcarrier: f,
                available: dec.s.len(),
                required: n_streams,
            });
        }
        Ok(basis * dec.v.columns(0, n_streams))
    })
}

/// Scales `F_B` so that `||F_RF F_B||_F^2 = target` over all blocks.
pub fn normalize_power(f_rf: &CMat, f_b: &MatrixGrid, target: f64) -> Result<MatrixGrid> {
    let power = frob_sq(&(f_rf * f_b.concat()));
    if !(power > 0.0) {
        return Err(Error::ZeroMatrix("F_RF F_B"));
    }
    let s = Complex64::new((target / power).sqrt(), 0.0);
    f_b.map(|b| b * s)
}

/// Worst relative leakage `||H_hat_{j,f} F_BD_{k,f}|| / ||H_hat_{j,f}||` over
/// all `j != k` and subcarriers.
pub fn max_relative_leakage(eff: &MatrixGrid, f_bd: &MatrixGrid) -> f64 {
    let mut worst: f64 = 0.0;
    for f in 0..eff.n_subcarriers() {
        for k in 0..eff.n_users() {
            for j in (0..eff.n_users()).filter(|&j| j != k) {
                let h = eff.get(j, f);
                let n = h.norm();
                if n > 0.0 {
                    worst = worst.max((h * f_bd.get(k, f)).norm() / n);
                }
            }
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{generate_channel, ChannelParams};
    use crate::model::SystemConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_cmat(rng: &mut impl Rng, rows: usize, cols: usize) -> CMat {
        CMat::from_fn(rows, cols, |_, _| {
            c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
        })
    }

    fn small_cfg() -> SystemConfig {
        SystemConfig {
            n_tx: 16,
            n_rx: 4,
            n_users: 2,
            n_subcarriers: 2,
            n_streams: 2,
            n_rf_tx: 4,
            n_rf_rx: 2,
            noise_var: 1.0,
            snr_grid_db: vec![],
        }
    }

    #[test]
    fn identity_parts_give_channel_submatrix() {
        let cfg = SystemConfig {
            n_tx: 4,
            n_rf_tx: 4,
            ..small_cfg()
        };
        let ch = generate_channel(&cfg, &ChannelParams::default(), 1).unwrap();
        // F_BB = I_4 (K N_s = 4), W_RF = I_4 restricted to 2 columns, W_BB = I_2.
        let f_bb = vec![CMat::identity(4, 4); 2];
        let w_rf = vec![CMat::identity(4, 2); 2];
        let w_bb = MatrixGrid::new(2, 2, (2, 2), vec![CMat::identity(2, 2); 4]).unwrap();
        let eff =
            effective_channels_from_parts(&ch, &CMat::identity(4, 4), &f_bb, &w_rf, &w_bb).unwrap();
        for f in 0..2 {
            for k in 0..2 {
                assert_eq!(eff.get(k, f), &ch.h(k, f).rows(0, 2).into_owned());
            }
        }
    }

    #[test]
    fn zero_baseband_gives_zero_channel() {
        let cfg = small_cfg();
        let ch = generate_channel(&cfg, &ChannelParams::default(), 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f_rf = random_cmat(&mut rng, 16, 4);
        let f_bb = vec![CMat::zeros(4, 4); 2];
        let w_rf = vec![random_cmat(&mut rng, 4, 2), random_cmat(&mut rng, 4, 2)];
        let w_bb = MatrixGrid::new(2, 2, (2, 2), vec![CMat::identity(2, 2); 4]).unwrap();
        let eff = effective_channels_from_parts(&ch, &f_rf, &f_bb, &w_rf, &w_bb).unwrap();
        assert!(eff.blocks().iter().all(|b| b.norm() == 0.0));
    }

    #[test]
    fn matches_triple_product() {
        let cfg = small_cfg();
        let ch = generate_channel(&cfg, &ChannelParams::default(), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f_rf = random_cmat(&mut rng, 16, 4);
        let f_bb: Vec<CMat> = (0..2).map(|_| random_cmat(&mut rng, 4, 4)).collect();
        let w_rf = vec![random_cmat(&mut rng, 4, 3), random_cmat(&mut rng, 4, 3)];
        let wb: Vec<CMat> = (0..4).map(|_| random_cmat(&mut rng, 3, 2)).collect();
        let w_bb = MatrixGrid::new(2, 2, (3, 2), wb).unwrap();
        let eff = effective_channels_from_parts(&ch, &f_rf, &f_bb, &w_rf, &w_bb).unwrap();
        for f in 0..2 {
            for k in 0..2 {
                // Naive loop evaluation of the same product.
                let h = ch.h(k, f);
                let a = w_bb.get(k, f).adjoint() * w_rf[k].adjoint();
                let b = &f_rf * &f_bb[f];
                let mut direct = CMat::zeros(2, 4);
                for r in 0..2 {
                    for col in 0..4 {
                        let mut acc = c(0.0, 0.0);
                        for i in 0..4 {
                            for t in 0..16 {
                                acc += a[(r, i)] * h[(i, t)] * b[(t, col)];
                            }
                        }
                        direct[(r, col)] = acc;
                    }
                }
                let rel = (eff.get(k, f) - &direct).norm() / direct.norm();
                assert!(rel < 1e-12, "{rel}");
            }
        }
    }

    #[test]
    fn single_user_cascade_is_eigen_beamforming() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let h = random_cmat(&mut rng, 2, 4);
        let eff = MatrixGrid::new(1, 1, (2, 4), vec![h.clone()]).unwrap();
        let bd = bd_cascade(&eff, 2).unwrap();
        let v = svd(&h).v.columns(0, 2).into_owned();
        assert!((bd.get(0, 0) - v).norm() < 1e-12);
    }

    #[test]
    fn explicit_two_user_null_space() {
        let h1 = CMat::from_row_slice(1, 2, &[c(0.3, 0.1), c(0.7, -0.2)]);
        let h2 = CMat::from_row_slice(1, 2, &[c(1.0, 0.0), c(0.0, 0.0)]);
        let eff = MatrixGrid::new(2, 1, (1, 2), vec![h1, h2]).unwrap();
        let bd = bd_cascade(&eff, 1).unwrap();
        let f1 = bd.get(0, 0);
        assert!(f1[(0, 0)].norm() < 1e-15);
        assert!((f1[(1, 0)].norm() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn three_user_leakage_vanishes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let blocks: Vec<CMat> = (0..6).map(|_| random_cmat(&mut rng, 2, 6)).collect();
        let eff = MatrixGrid::new(3, 2, (2, 6), blocks).unwrap();
        let bd = bd_cascade(&eff, 2).unwrap();
        assert!(max_relative_leakage(&eff, &bd) <= 1e-9);
        for b in bd.blocks() {
            assert_eq!(b.shape(), (6, 2));
        }
    }

    #[test]
    fn degenerate_effective_channels_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        // Two users with 3 streams each in a 4-dimensional space.
        let blocks: Vec<CMat> = (0..2).map(|_| random_cmat(&mut rng, 3, 4)).collect();
        let eff = MatrixGrid::new(2, 1, (3, 4), blocks).unwrap();
        assert!(matches!(
            bd_cascade(&eff, 3),
            Err(Error::InsufficientNullSpace { .. })
        ));
    }

    #[test]
    fn normalization() {
        let f_rf = CMat::identity(4, 2);
        let blocks = vec![CMat::identity(2, 1) * c(2.0, 0.0); 4];
        let g = MatrixGrid::new(2, 2, (2, 1), blocks).unwrap();
        // Power 16 = 4 * 4 -> halved amplitudes.
        let out = normalize_power(&f_rf, &g, 4.0).unwrap();
        assert!((out.get(0, 0)[(0, 0)] - c(1.0, 0.0)).norm() < 1e-15);
        let same = normalize_power(&f_rf, &out, 4.0).unwrap();
        assert!((same.get(1, 1) - out.get(1, 1)).norm() < 1e-15);
        let zero = MatrixGrid::new(2, 2, (2, 1), vec![CMat::zeros(2, 1); 4]).unwrap();
        assert!(matches!(
            normalize_power(&f_rf, &zero, 4.0),
            Err(Error::ZeroMatrix(_))
        ));
    }

    #[test]
    fn normalization_hits_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let f_rf = random_cmat(&mut rng, 16, 4);
        let blocks: Vec<CMat> = (0..6).map(|_| random_cmat(&mut rng, 4, 2)).collect();
        let g = MatrixGrid::new(3, 2, (4, 2), blocks).unwrap();
        let out = normalize_power(&f_rf, &g, 12.0).unwrap();
        let p = frob_sq(&(&f_rf * out.concat()));
        assert!((p / 12.0 - 1.0).abs() < 1e-10);
    }
}
