//! Achievable sum rate and spectral efficiency.
//!
//! Per-stream transmit power is `1 / (K N_s F)` of the normalized precoder
//! power; every user treats the other users' signals as Gaussian noise.

use num_complex::Complex64;
use serde::Serialize;

use crate::channel::ChannelRealization;
use crate::error::{Error, Result};
use crate::linalg::{log2_det_hpd, CMat};
use crate::model::{PrecoderBundle, SystemConfig};
use crate::pipeline::{build_precoders, AlgorithmTag};

/// `sigma_n^2 = 10^(-snr_db / 10)` with unit transmit power.
pub fn noise_var_from_snr_db(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

fn power_scale(bundle: &PrecoderBundle) -> f64 {
    let ns = bundle.f_b().shape().1;
    1.0 / (bundle.n_users() * ns * bundle.n_subcarriers()) as f64
}

/// `Omega_{k,f} = W^H [ c H (sum_{j != k} F_j F_j^H) H^H + sigma^2 I ] W`
/// with `c = 1 / (K N_s F)` and `W = W_RF_k W_BB_{k,f}`.
pub fn interference_matrix(
    user: usize,
    subcarrier: usize,
    chan: &ChannelRealization,
    bundle: &PrecoderBundle,
    noise_var: f64,
) -> Result<CMat> {
    let h = chan.h(user, subcarrier);
    let w = bundle.combiner(user, subcarrier);
    let c = Complex64::new(power_scale(bundle), 0.0);
    let wh = w.adjoint() * h;
    let mut omega = w.adjoint() * &w * Complex64::new(noise_var, 0.0);
    for j in (0..bundle.n_users()).filter(|&j| j != user) {
        let g = &wh * bundle.precoder(j, subcarrier);
        omega += &g * g.adjoint() * c;
    }
    Ok(omega)
}

/// Rate of one user on one subcarrier in bits/s/Hz.
pub fn user_rate(
    user: usize,
    subcarrier: usize,
    chan: &ChannelRealization,
    bundle: &PrecoderBundle,
    noise_var: f64,
) -> Result<f64> {
    let omega = interference_matrix(user, subcarrier, chan, bundle, noise_var)?;
    let singular = || Error::SingularInterference {
        user,
        subcarrier,
    };
    let base = log2_det_hpd(&omega).ok_or_else(singular)?;
    let w = bundle.combiner(user, subcarrier);
    let g = w.adjoint() * chan.h(user, subcarrier) * bundle.precoder(user, subcarrier);
    let signal = &g * g.adjoint() * Complex64::new(power_scale(bundle), 0.0);
    // det(I + S Omega^{-1}) = det(Omega + S) / det(Omega)
    let total = log2_det_hpd(&(omega + signal)).ok_or_else(singular)?;
    Ok((total - base).max(0.0))
}

/// `R_f = sum_k log2 det(I + c W^H H F_k F_k^H H^H W Omega^{-1})`
pub fn sum_rate(
    subcarrier: usize,
    chan: &ChannelRealization,
    bundle: &PrecoderBundle,
    noise_var: f64,
) -> Result<f64> {
    (0..bundle.n_users())
        .map(|k| user_rate(k, subcarrier, chan, bundle, noise_var))
        .sum()
}

/// Mean of `R_f` over subcarriers.
pub fn spectral_efficiency(
    chan: &ChannelRealization,
    bundle: &PrecoderBundle,
    noise_var: f64,
) -> Result<f64> {
    let n_sc = bundle.n_subcarriers();
    let mut acc = 0.0;
    for f in 0..n_sc {
        acc += sum_rate(f, chan, bundle, noise_var)?;
    }
    Ok(acc / n_sc as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateSample {
    pub realization: usize,
    pub snr_db: f64,
    pub algorithm: String,
    pub spectral_efficiency: f64,
}

/// One bundle per realization, evaluated at every SNR of the grid.
/// Realizations are numbered by their position in `channels`.
pub fn evaluate_scenario(
    channels: &[ChannelRealization],
    cfg: &SystemConfig,
    tag: &AlgorithmTag,
    snr_grid_db: &[f64],
) -> Result<Vec<RateSample>> {
    let mut out = Vec::with_capacity(channels.len() * snr_grid_db.len());
    for (r, chan) in channels.iter().enumerate() {
        let bundle = build_precoders(tag, chan, cfg)?;
        for &snr in snr_grid_db {
            let se = spectral_efficiency(chan, &bundle, noise_var_from_snr_db(snr))
                .map_err(|e| e.at("evaluation"))?;
            out.push(RateSample {
                realization: r,
                snr_db: snr,
                algorithm: tag.to_string(),
                spectral_efficiency: se,
            });
        }
    }
    Ok(out)
}
