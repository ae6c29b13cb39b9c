//! Clustered (Saleh-Valenzuela) wideband mm-wave channel generator.
//!
//! Each user sees `n_clusters` clusters of `n_rays` rays. Ray angles are the
//! cluster mean plus a Laplacian offset; each cluster lands on one uniformly
//! drawn delay tap, and subcarrier responses follow from the DFT over taps.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use nalgebra::DVector;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{CMat, CVec};
use crate::model::SystemConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelParams {
    pub n_clusters: usize,
    pub n_rays: usize,
    /// Average power of every cluster (variance of the complex ray gains).
    pub cluster_power: f64,
    /// Standard deviation of the Laplacian ray offsets, in degrees.
    pub angle_spread_deg: f64,
    pub n_delay_taps: usize,
}

impl Default for ChannelParams {
    fn default() -> Self {
        ChannelParams {
            n_clusters: 3,
            n_rays: 8,
            cluster_power: 1.0,
            angle_spread_deg: 10.0,
            n_delay_taps: 16,
        }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.n_clusters == 0 {
            problems.push("n_clusters must be >= 1");
        }
        if self.n_rays == 0 {
            problems.push("n_rays must be >= 1");
        }
        if self.n_delay_taps == 0 {
            problems.push("n_delay_taps must be >= 1");
        }
        if !(self.angle_spread_deg >= 0.0 && self.angle_spread_deg.is_finite()) {
            problems.push("angle_spread_deg must be finite and >= 0");
        }
        if !(self.cluster_power > 0.0 && self.cluster_power.is_finite()) {
            problems.push("cluster_power must be finite and > 0");
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InfeasibleDimensions(problems.join("; ")))
        }
    }

    /// Laplacian scale `b` such that the offset standard deviation `sqrt(2) b`
    /// equals the configured spread.
    pub fn laplace_scale(&self) -> f64 {
        self.angle_spread_deg.to_radians() * FRAC_1_SQRT_2
    }
}

/// Response of a square planar array with half-wavelength spacing.
///
/// Element `(m, n)` of the `sqrt(N) x sqrt(N)` grid sits at flat index
/// `n * sqrt(N) + m` and has phase `pi (m sin(az) sin(el) + n cos(el))`.
/// The vector has unit norm.
pub fn array_response(array_size: usize, azimuth: f64, elevation: f64) -> Result<CVec> {
    let side = exact_sqrt(array_size).ok_or(Error::NonSquareArray(array_size))?;
    Ok(planar_response(side, side, azimuth, elevation))
}

/// Planar array response on a `width x height` grid (same phase law as
/// [`array_response`], `m < width` runs fastest).
pub fn planar_response(width: usize, height: usize, azimuth: f64, elevation: f64) -> CVec {
    let n = width * height;
    let scale = 1.0 / (n as f64).sqrt();
    let kx = PI * azimuth.sin() * elevation.sin();
    let ky = PI * elevation.cos();
    DVector::from_fn(n, |idx, _| {
        let m = (idx % width) as f64;
        let row = (idx / width) as f64;
        Complex64::from_polar(scale, kx * m + ky * row)
    })
}

fn exact_sqrt(n: usize) -> Option<usize> {
    let r = (n as f64).sqrt().round() as usize;
    (r * r == n).then_some(r)
}

/// Grid used for an `n`-element planar array: square when `n` is a perfect
/// square, otherwise the most nearly square factorization `(width, height)`
/// with `width >= height`.
pub fn planar_dims(n: usize) -> (usize, usize) {
    let mut h = (n as f64).sqrt().floor() as usize;
    while h > 1 && n % h != 0 {
        h -= 1;
    }
    let h = h.max(1);
    (n / h, h)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathRay {
    pub cluster: usize,
    pub aod_azimuth: f64,
    pub aod_elevation: f64,
    pub aoa_azimuth: f64,
    pub aoa_elevation: f64,
    pub gain: Complex64,
}

/// Zero-mean Laplacian sample with scale `b` (inverse CDF).
fn laplace(rng: &mut impl Rng, b: f64) -> f64 {
    if b == 0.0 {
        return 0.0;
    }
    let u: f64 = rng.random::<f64>() - 0.5;
    -b * u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

/// Circularly symmetric complex Gaussian with the given variance.
pub fn complex_gaussian(rng: &mut impl Rng, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(s * re, s * im)
}

/// Draws cluster mean angles (azimuth on `[0, 2pi)`, elevation on `[0, pi)`,
/// separately for departure and arrival) and per-ray Laplacian offsets.
pub fn sample_path_angles(rng: &mut impl Rng, params: &ChannelParams) -> Vec<PathRay> {
    let b = params.laplace_scale();
    let mut rays = Vec::with_capacity(params.n_clusters * params.n_rays);
    for cluster in 0..params.n_clusters {
        let aod_az = rng.random::<f64>() * 2.0 * PI;
        let aod_el = rng.random::<f64>() * PI;
        let aoa_az = rng.random::<f64>() * 2.0 * PI;
        let aoa_el = rng.random::<f64>() * PI;
        for _ in 0..params.n_rays {
            rays.push(PathRay {
                cluster,
                aod_azimuth: aod_az + laplace(rng, b),
                aod_elevation: aod_el + laplace(rng, b),
                aoa_azimuth: aoa_az + laplace(rng, b),
                aoa_elevation: aoa_el + laplace(rng, b),
                gain: complex_gaussian(rng, params.cluster_power),
            });
        }
    }
    rays
}

/// Per-user, per-subcarrier channel matrices `H_{k,f}` (`N_r x N_t`).
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    n_users: usize,
    n_subcarriers: usize,
    /// Subcarrier-major: `h[f * n_users + k]`.
    h: Vec<CMat>,
    /// Delay-tap matrices per user, when generated here.
    taps: Option<Vec<Vec<CMat>>>,
    seed: u64,
}

impl ChannelRealization {
    /// Wraps externally supplied matrices (subcarrier-major order).
    pub fn from_matrices(
        n_users: usize,
        n_subcarriers: usize,
        h: Vec<CMat>,
        seed: u64,
    ) -> Result<ChannelRealization> {
        if h.len() != n_users * n_subcarriers {
            return Err(Error::ShapeMismatch {
                what: "channel matrix count",
                expected: (n_users, n_subcarriers),
                got: (h.len(), 1),
            });
        }
        if let Some(first) = h.first() {
            if let Some(bad) = h.iter().find(|m| m.shape() != first.shape()) {
                return Err(Error::ShapeMismatch {
                    what: "channel matrix",
                    expected: first.shape(),
                    got: bad.shape(),
                });
            }
        }
        Ok(ChannelRealization {
            n_users,
            n_subcarriers,
            h,
            taps: None,
            seed,
        })
    }

    pub fn h(&self, user: usize, subcarrier: usize) -> &CMat {
        &self.h[subcarrier * self.n_users + user]
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_subcarriers(&self) -> usize {
        self.n_subcarriers
    }

    pub fn shape(&self) -> (usize, usize) {
        self.h.first().map_or((0, 0), |m| m.shape())
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Delay-tap matrices of `user` (only for generated realizations).
    pub fn taps(&self, user: usize) -> Option<&[CMat]> {
        self.taps.as_ref().map(|t| t[user].as_slice())
    }

    /// Writes the text matrix format: a header line with the shape and seed,
    /// then one line per matrix row of space-separated `re im` pairs.
    pub fn dump(&self, mut out: impl Write) -> std::io::Result<()> {
        let (rows, cols) = self.shape();
        writeln!(out, "dps-channel v1")?;
        writeln!(
            out,
            "users {} subcarriers {} rows {} cols {} seed {}",
            self.n_users, self.n_subcarriers, rows, cols, self.seed
        )?;
        let mut line = String::new();
        for m in &self.h {
            for i in 0..rows {
                line.clear();
                for j in 0..cols {
                    let z = m[(i, j)];
                    if j > 0 {
                        line.push(' ');
                    }
                    let _ = write!(line, "{:e} {:e}", z.re, z.im);
                }
                writeln!(out, "{line}")?;
            }
        }
        Ok(())
    }

    pub fn load(input: impl BufRead) -> Result<ChannelRealization> {
        let bad = |msg: &str| Error::InfeasibleDimensions(format!("channel file: {msg}"));
        let mut lines = input.lines();
        let mut next = || -> Result<String> {
            lines
                .next()
                .ok_or_else(|| bad("unexpected end of file"))?
                .map_err(|e| bad(&e.to_string()))
        };
        if next()?.trim() != "dps-channel v1" {
            return Err(bad("missing magic line"));
        }
        let header = next()?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        let keys = ["users", "subcarriers", "rows", "cols", "seed"];
        if fields.len() != 10 || fields.iter().step_by(2).zip(keys).any(|(a, b)| *a != b) {
            return Err(bad("malformed header"));
        }
        let num = |i: usize| -> Result<u64> {
            fields[i].parse().map_err(|_| bad("non-numeric header field"))
        };
        let (n_users, n_sc, rows, cols, seed) = (
            num(1)? as usize,
            num(3)? as usize,
            num(5)? as usize,
            num(7)? as usize,
            num(9)?,
        );
        let mut h = Vec::with_capacity(n_users * n_sc);
        for _ in 0..n_users * n_sc {
            let mut m = CMat::zeros(rows, cols);
            for i in 0..rows {
                let line = next()?;
                let vals: Vec<f64> = line
                    .split_whitespace()
                    .map(|t| t.parse::<f64>().map_err(|_| bad("non-numeric entry")))
                    .collect::<Result<_>>()?;
                if vals.len() != 2 * cols {
                    return Err(bad("wrong number of entries in row"));
                }
                for j in 0..cols {
                    m[(i, j)] = Complex64::new(vals[2 * j], vals[2 * j + 1]);
                }
            }
            h.push(m);
        }
        ChannelRealization::from_matrices(n_users, n_sc, h, seed)
    }
}

/// Seed of realization `index` derived from a base seed (SplitMix64 step).
pub fn realization_seed(base: u64, index: u64) -> u64 {
    let mut z = base.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// RNG sub-stream for one user of one realization.
pub fn user_rng(seed: u64, user: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(user as u64);
    rng
}

/// Generates `H_{k,f}` for every user and subcarrier.
///
/// Per user: rays are drawn with [`sample_path_angles`], every cluster is
/// assigned one uniformly random delay tap, the tap matrices are scaled by
/// `sqrt(N_t N_r / (N_cl N_ray))`, and
/// `H_{k,f} = sum_d H_d exp(-j 2 pi f d / F)`.
pub fn generate_channel(
    cfg: &SystemConfig,
    params: &ChannelParams,
    seed: u64,
) -> Result<ChannelRealization> {
    params.validate()?;
    let (tx_w, tx_h) = planar_dims(cfg.n_tx);
    let (rx_w, rx_h) = planar_dims(cfg.n_rx);
    let n_taps = params.n_delay_taps;
    let n_sc = cfg.n_subcarriers;
    let norm = ((cfg.n_tx * cfg.n_rx) as f64 / (params.n_clusters * params.n_rays) as f64).sqrt();

    let mut taps_all = Vec::with_capacity(cfg.n_users);
    for user in 0..cfg.n_users {
        let mut rng = user_rng(seed, user);
        let rays = sample_path_angles(&mut rng, params);
        let cluster_tap: Vec<usize> = (0..params.n_clusters)
            .map(|_| rng.random_range(0..n_taps))
            .collect();
        let mut taps = vec![CMat::zeros(cfg.n_rx, cfg.n_tx); n_taps];
        for ray in &rays {
            let a_r = planar_response(rx_w, rx_h, ray.aoa_azimuth, ray.aoa_elevation);
            let a_t = planar_response(tx_w, tx_h, ray.aod_azimuth, ray.aod_elevation);
            let tap = &mut taps[cluster_tap[ray.cluster]];
            *tap += (a_r * a_t.adjoint()) * (ray.gain * norm);
        }
        taps_all.push(taps);
    }

    let mut h = Vec::with_capacity(cfg.n_users * n_sc);
    for f in 0..n_sc {
        for taps in &taps_all {
            let mut hf = CMat::zeros(cfg.n_rx, cfg.n_tx);
            for (d, tap) in taps.iter().enumerate() {
                if tap.iter().all(|z| z.re == 0.0 && z.im == 0.0) {
                    continue;
                }
                let phase = -2.0 * PI * ((f * d) % n_sc) as f64 / n_sc as f64;
                hf += tap * Complex64::from_polar(1.0, phase);
            }
            h.push(hf);
        }
    }
    Ok(ChannelRealization {
        n_users: cfg.n_users,
        n_subcarriers: n_sc,
        h,
        taps: Some(taps_all),
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::frob_sq;

    fn cfg(n_tx: usize, n_rx: usize, n_users: usize, n_sc: usize) -> SystemConfig {
        SystemConfig {
            n_tx,
            n_rx,
            n_users,
            n_subcarriers: n_sc,
            n_streams: 1,
            n_rf_tx: n_users,
            n_rf_rx: 1,
            noise_var: 1.0,
            snr_grid_db: vec![],
        }
    }

    #[test]
    fn broadside_response_is_flat() {
        let a = array_response(4, 0.0, PI / 2.0).unwrap();
        for z in a.iter() {
            assert!((z - Complex64::new(0.5, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn response_entries_have_equal_modulus() {
        for &(n, az, el) in &[(16, 0.3, 1.1), (64, 4.0, 2.9), (9, -1.0, 0.2)] {
            let a = array_response(n, az, el).unwrap();
            let expect = 1.0 / (n as f64).sqrt();
            assert!(a.iter().all(|z| (z.norm() - expect).abs() < 1e-15));
            assert!((a.norm() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn endfire_grid_pattern() {
        // Direct evaluation: phase pi*m at flat index n*2+m.
        let a = array_response(4, PI / 2.0, PI / 2.0).unwrap();
        let expected = [0.0, PI, 0.0, PI];
        for (z, ph) in a.iter().zip(expected) {
            let want = Complex64::from_polar(0.5, ph);
            assert!((z - want).norm() < 1e-12, "{z} vs {want}");
        }
    }

    #[test]
    fn non_square_array_is_rejected() {
        assert!(matches!(
            array_response(8, 0.0, 0.0),
            Err(Error::NonSquareArray(8))
        ));
        assert_eq!(planar_dims(8), (4, 2));
        assert_eq!(planar_dims(64), (8, 8));
        assert_eq!(planar_dims(7), (7, 1));
    }

    #[test]
    fn zero_spread_rays_share_cluster_mean() {
        let params = ChannelParams {
            angle_spread_deg: 0.0,
            ..Default::default()
        };
        let rays = sample_path_angles(&mut ChaCha8Rng::seed_from_u64(5), &params);
        for c in rays.chunks(params.n_rays) {
            assert!(c.iter().all(|r| r.aod_azimuth == c[0].aod_azimuth
                && r.aoa_elevation == c[0].aoa_elevation));
        }
    }

    #[test]
    fn laplacian_offsets_match_spread() {
        let params = ChannelParams::default();
        let b = params.laplace_scale();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let samples: Vec<f64> = (0..n).map(|_| laplace(&mut rng, b)).collect();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        // Laplace variance 2 b^2
        let target = 2.0_f64.sqrt() * b;
        assert!((var.sqrt() / target - 1.0).abs() < 0.02, "{} vs {}", var.sqrt(), target);
    }

    #[test]
    fn gain_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = 100_000;
        let g: Vec<Complex64> = (0..n).map(|_| complex_gaussian(&mut rng, 1.0)).collect();
        let mean = g.iter().sum::<Complex64>() / n as f64;
        let var = g.iter().map(|z| (z - mean).norm_sqr()).sum::<f64>() / n as f64;
        assert!(mean.norm() < 0.01);
        assert!((var - 1.0).abs() < 0.02);
    }

    #[test]
    fn single_tap_channel_is_flat() {
        let params = ChannelParams {
            n_delay_taps: 1,
            ..Default::default()
        };
        let ch = generate_channel(&cfg(16, 4, 2, 5), &params, 3).unwrap();
        for k in 0..2 {
            for f in 1..5 {
                assert_eq!(ch.h(k, f), ch.h(k, 0));
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let c = cfg(16, 4, 3, 8);
        let p = ChannelParams::default();
        let a = generate_channel(&c, &p, 99).unwrap();
        let b = generate_channel(&c, &p, 99).unwrap();
        assert_eq!(a, b);
        let other = generate_channel(&c, &p, 100).unwrap();
        assert_ne!(a.h(0, 0), other.h(0, 0));
    }

    #[test]
    fn rank_bounded_by_path_count() {
        let params = ChannelParams {
            n_clusters: 1,
            n_rays: 2,
            ..Default::default()
        };
        let ch = generate_channel(&cfg(16, 9, 1, 4), &params, 7).unwrap();
        let s = crate::linalg::svd(ch.h(0, 2)).s;
        assert!(s[2] < 1e-12 * s[0]);
    }

    #[test]
    fn inverse_dft_recovers_taps() {
        let c = cfg(16, 4, 2, 16);
        let ch = generate_channel(&c, &ChannelParams::default(), 21).unwrap();
        let n_sc = 16;
        for k in 0..2 {
            let taps = ch.taps(k).unwrap();
            for (d, tap) in taps.iter().enumerate() {
                let mut rec = CMat::zeros(4, 16);
                for f in 0..n_sc {
                    let ph = 2.0 * PI * (f * d) as f64 / n_sc as f64;
                    rec += ch.h(k, f) * Complex64::from_polar(1.0 / n_sc as f64, ph);
                }
                assert!((rec - tap).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn average_power_is_nt_nr() {
        let c = cfg(16, 4, 1, 2);
        let p = ChannelParams::default();
        let n = 1000;
        let total: f64 = (0..n)
            .map(|r| frob_sq(generate_channel(&c, &p, realization_seed(5, r)).unwrap().h(0, 1)))
            .sum();
        let ratio = total / n as f64 / 64.0;
        assert!((0.95..=1.05).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn dump_load_round_trip() {
        let ch = generate_channel(&cfg(4, 4, 2, 3), &ChannelParams::default(), 8).unwrap();
        let mut buf = Vec::new();
        ch.dump(&mut buf).unwrap();
        let back = ChannelRealization::load(buf.as_slice()).unwrap();
        assert_eq!(back.seed(), 8);
        for k in 0..2 {
            for f in 0..3 {
                assert_eq!(back.h(k, f), ch.h(k, f));
            }
        }
        assert!(ChannelRealization::load("garbage\n".as_bytes()).is_err());
    }
}
