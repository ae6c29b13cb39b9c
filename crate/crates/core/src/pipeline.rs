//! End-to-end precoder and combiner construction for each algorithm.

use std::fmt;
use std::str::FromStr;

use crate::cascade::{bd_cascade, effective_channels_from_parts, normalize_power};
use crate::channel::ChannelRealization;
use crate::digital::{bd_precoder, digital_combiner, FullyDigitalPrecoder};
use crate::error::{Error, Result};
use crate::fully_connected::{
    hybrid_lowrank, rescale_feasible, rf_only_precoder, sps_phase_extract,
};
use crate::linalg::CMat;
use crate::model::{MatrixGrid, PrecoderBundle, Structure, SystemConfig};
use crate::partial::{
    fixed_block_mapping, greedy_mapping, hybrid_partial, kmeans_mapping, MappingSets,
    KMEANS_MAX_ITER,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Algorithm {
    FullyDigital,
    RfOnly,
    DpsFull,
    SpsHeuristic,
    PartialFixed,
    PartialGreedy,
    PartialKmeans,
}

impl Algorithm {
    pub const ALL: [Algorithm; 7] = [
        Algorithm::FullyDigital,
        Algorithm::RfOnly,
        Algorithm::DpsFull,
        Algorithm::SpsHeuristic,
        Algorithm::PartialFixed,
        Algorithm::PartialGreedy,
        Algorithm::PartialKmeans,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::FullyDigital => "fully-digital",
            Algorithm::RfOnly => "rf-only",
            Algorithm::DpsFull => "dps-full",
            Algorithm::SpsHeuristic => "sps-heuristic",
            Algorithm::PartialFixed => "partial-fixed",
            Algorithm::PartialGreedy => "partial-greedy",
            Algorithm::PartialKmeans => "partial-kmeans",
        }
    }

    pub fn is_partial(self) -> bool {
        matches!(
            self,
            Algorithm::PartialFixed | Algorithm::PartialGreedy | Algorithm::PartialKmeans
        )
    }
}

/// Algorithm plus options, written `name[+bd][@nrf=N]`, e.g.
/// `partial-kmeans+bd` or `dps-full+bd@nrf=11`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AlgorithmTag {
    pub algorithm: Algorithm,
    /// Cascade a BD precoder on the effective channels.
    pub bd: bool,
    /// Overrides the configured number of transmit RF chains.
    pub n_rf: Option<usize>,
}

impl AlgorithmTag {
    pub fn new(algorithm: Algorithm) -> AlgorithmTag {
        AlgorithmTag {
            algorithm,
            bd: false,
            n_rf: None,
        }
    }

    pub fn with_bd(self) -> AlgorithmTag {
        AlgorithmTag { bd: true, ..self }
    }

    pub fn with_n_rf(self, n_rf: usize) -> AlgorithmTag {
        AlgorithmTag {
            n_rf: Some(n_rf),
            ..self
        }
    }

    pub fn n_rf_tx(&self, cfg: &SystemConfig) -> usize {
        self.n_rf.unwrap_or(cfg.n_rf_tx)
    }
}

impl fmt::Display for AlgorithmTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.algorithm.name())?;
        if self.bd {
            f.write_str("+bd")?;
        }
        if let Some(n) = self.n_rf {
            write!(f, "@nrf={n}")?;
        }
        Ok(())
    }
}

impl FromStr for AlgorithmTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<AlgorithmTag> {
        let bad = || Error::UnknownAlgorithm(s.to_string());
        let (head, n_rf) = match s.split_once('@') {
            Some((h, opt)) => {
                let n = opt
                    .strip_prefix("nrf=")
                    .and_then(|v| v.parse::<usize>().ok())
                    .ok_or_else(bad)?;
                (h, Some(n))
            }
            None => (s, None),
        };
        let (name, bd) = match head.strip_suffix("+bd") {
            Some(n) => (n, true),
            None => (head, false),
        };
        let algorithm = Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == name)
            .ok_or_else(bad)?;
        Ok(AlgorithmTag { algorithm, bd, n_rf })
    }
}

/// Fully digital precoder and combiner targets of one channel realization.
#[derive(Debug, Clone)]
pub struct Targets {
    pub f_opt: FullyDigitalPrecoder,
    pub w_opt: MatrixGrid,
}

pub fn digital_targets(chan: &ChannelRealization, cfg: &SystemConfig) -> Result<Targets> {
    let f_opt = bd_precoder(chan, cfg).map_err(|e| e.at("fully digital precoder"))?;
    let w_opt = digital_combiner(chan, &f_opt).map_err(|e| e.at("fully digital combiner"))?;
    Ok(Targets { f_opt, w_opt })
}

/// Transmit-side result of the hybrid approximation stage.
struct TransmitDesign {
    structure: Structure,
    f_rf: CMat,
    /// `N_RF x K N_s F`, subcarrier-major columns.
    f_bb: CMat,
}

/// Dynamic or fixed antenna mapping used by a partial algorithm.
pub fn partial_mapping(algorithm: Algorithm, f_opt: &CMat, n_rf: usize) -> Result<MappingSets> {
    match algorithm {
        Algorithm::PartialFixed => fixed_block_mapping(f_opt.nrows(), n_rf),
        Algorithm::PartialGreedy => greedy_mapping(f_opt, n_rf).map(|g| g.mapping),
        Algorithm::PartialKmeans => {
            kmeans_mapping(f_opt, n_rf, KMEANS_MAX_ITER).map(|k| k.mapping)
        }
        other => Err(Error::InvalidMapping(format!(
            "{} has no antenna mapping",
            other.name()
        ))),
    }
}

fn transmit_design(algorithm: Algorithm, f_opt: &CMat, n_rf: usize) -> Result<TransmitDesign> {
    let full = |f_rf, f_bb| TransmitDesign {
        structure: Structure::FullyConnected,
        f_rf,
        f_bb,
    };
    Ok(match algorithm {
        Algorithm::FullyDigital => TransmitDesign {
            structure: Structure::FullyDigital,
            f_rf: CMat::identity(f_opt.nrows(), f_opt.nrows()),
            f_bb: f_opt.clone(),
        },
        Algorithm::DpsFull => {
            let low = hybrid_lowrank(f_opt, n_rf)?;
            let (f_rf, f_bb, _) = rescale_feasible(&low.f_rf, &low.f_bb)?;
            full(f_rf, f_bb)
        }
        Algorithm::SpsHeuristic => {
            let low = hybrid_lowrank(f_opt, n_rf)?;
            let (f_rf, f_bb) = sps_phase_extract(&low);
            full(f_rf, f_bb)
        }
        Algorithm::RfOnly => {
            // Shared semi-orthogonal baseband: V_1^H.
            let low = hybrid_lowrank(f_opt, n_rf)?;
            let mut f_bb = low.f_bb.clone();
            for (i, s) in low.singular_values.iter().take(n_rf).enumerate() {
                if *s == 0.0 {
                    return Err(Error::RankDeficient("F_opt"));
                }
                f_bb.row_mut(i).scale_mut(1.0 / s);
            }
            let f_rf = rf_only_precoder(f_opt, &f_bb)?;
            full(f_rf, f_bb)
        }
        partial => {
            let mapping = partial_mapping(partial, f_opt, n_rf)?;
            let h = hybrid_partial(f_opt, &mapping)?;
            let (f_rf, f_bb, _) = rescale_feasible(&h.f_rf, &h.f_bb)?;
            TransmitDesign {
                structure: Structure::PartiallyConnected(mapping),
                f_rf,
                f_bb,
            }
        }
    })
}

/// Per-user DPS combiner: rank-`N_RF^r` split of `[W_opt_{k,1} ... W_opt_{k,F}]`.
fn receive_design(
    tag: &AlgorithmTag,
    targets: &Targets,
    cfg: &SystemConfig,
) -> Result<(Vec<CMat>, MatrixGrid)> {
    let w = &targets.w_opt;
    let (n_users, n_sc, ns) = (w.n_users(), w.n_subcarriers(), w.shape().1);
    if tag.algorithm == Algorithm::FullyDigital {
        return Ok((vec![CMat::identity(cfg.n_rx, cfg.n_rx); n_users], w.clone()));
    }
    let mut w_rf = Vec::with_capacity(n_users);
    let mut per_user = Vec::with_capacity(n_users);
    for k in 0..n_users {
        let low = hybrid_lowrank(&w.user_concat(k), cfg.n_rf_rx)?;
        let (rf, bb, _) = rescale_feasible(&low.f_rf, &low.f_bb)?;
        w_rf.push(rf);
        per_user.push(bb);
    }
    let w_bb = MatrixGrid::try_from_fn(n_users, n_sc, (cfg.n_rf_rx, ns), |k, f| {
        Ok(per_user[k].columns(f * ns, ns).into_owned())
    })?;
    Ok((w_rf, w_bb))
}

/// Builds the complete bundle for one tag from precomputed targets.
pub fn build_from_targets(
    tag: &AlgorithmTag,
    chan: &ChannelRealization,
    cfg: &SystemConfig,
    targets: &Targets,
) -> Result<PrecoderBundle> {
    let (n_users, n_sc, ns) = (cfg.n_users, cfg.n_subcarriers, cfg.n_streams);
    let f_opt = targets.f_opt.concat();
    let tx = transmit_design(tag.algorithm, &f_opt, tag.n_rf_tx(cfg))
        .map_err(|e| e.at("transmit hybrid design"))?;
    let (w_rf, w_bb) =
        receive_design(tag, targets, cfg).map_err(|e| e.at("receive hybrid design"))?;
    let n_rf = tx.f_rf.ncols();
    let block = n_users * ns;
    let f_bb: Vec<CMat> = (0..n_sc)
        .map(|f| tx.f_bb.columns(f * block, block).into_owned())
        .collect();

    let cascade = tag.bd && tag.algorithm != Algorithm::FullyDigital;
    let (f_bd, f_b) = if cascade {
        let eff = effective_channels_from_parts(chan, &tx.f_rf, &f_bb, &w_rf, &w_bb)
            .map_err(|e| e.at("effective channels"))?;
        let f_bd = bd_cascade(&eff, ns).map_err(|e| e.at("BD cascade"))?;
        let f_b = MatrixGrid::try_from_fn(n_users, n_sc, (n_rf, ns), |k, f| {
            Ok(&f_bb[f] * f_bd.get(k, f))
        })?;
        (Some(f_bd), f_b)
    } else {
        let f_b = MatrixGrid::try_from_fn(n_users, n_sc, (n_rf, ns), |k, f| {
            Ok(f_bb[f].columns(k * ns, ns).into_owned())
        })?;
        (None, f_b)
    };
    let f_b = normalize_power(&tx.f_rf, &f_b, cfg.total_streams() as f64)
        .map_err(|e| e.at("power normalization"))?;
    PrecoderBundle::new(cfg, tx.structure, tx.f_rf, f_bb, f_bd, f_b, w_rf, w_bb)
}

pub fn build_precoders(
    tag: &AlgorithmTag,
    chan: &ChannelRealization,
    cfg: &SystemConfig,
) -> Result<PrecoderBundle> {
    let targets = digital_targets(chan, cfg)?;
    build_from_targets(tag, chan, cfg, &targets)
}

/// Relative reconstruction error `||F_opt - F_RF F_B|| / ||F_opt||` of a
/// bundle built without cascade.
pub fn reconstruction_error(targets: &Targets, bundle: &PrecoderBundle) -> f64 {
    let f_opt = targets.f_opt.concat();
    let approx = bundle.f_rf() * bundle.f_b().concat();
    (&f_opt - approx).norm() / f_opt.norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{generate_channel, ChannelParams};
    use crate::evaluation::spectral_efficiency;
    use crate::partial::mapping_objective;

    fn cfg(n_sc: usize) -> SystemConfig {
        SystemConfig {
            n_tx: 16,
            n_rx: 4,
            n_users: 2,
            n_subcarriers: n_sc,
            n_streams: 2,
            n_rf_tx: 4,
            n_rf_rx: 2,
            noise_var: 1.0,
            snr_grid_db: vec![],
        }
    }

    #[test]
    fn tag_round_trip() {
        for s in [
            "fully-digital",
            "dps-full+bd",
            "partial-kmeans+bd@nrf=8",
            "rf-only@nrf=3",
            "sps-heuristic",
        ] {
            let t: AlgorithmTag = s.parse().unwrap();
            assert_eq!(t.to_string(), s);
        }
        for s in ["dps", "dps-full+bd@nrf=", "dps-full@x=1", "+bd"] {
            assert!(s.parse::<AlgorithmTag>().is_err(), "{s}");
        }
    }

    #[test]
    fn fully_digital_passes_through() {
        let c = cfg(3);
        let ch = generate_channel(&c, &ChannelParams::default(), 1).unwrap();
        let t = digital_targets(&ch, &c).unwrap();
        let b = build_from_targets(&AlgorithmTag::new(Algorithm::FullyDigital), &ch, &c, &t)
            .unwrap();
        assert!(reconstruction_error(&t, &b) < 1e-12);
        for f in 0..3 {
            for k in 0..2 {
                assert!((b.combiner(k, f) - t.w_opt.get(k, f)).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn single_carrier_minimum_rf_chains_is_exact() {
        let c = cfg(1);
        let ch = generate_channel(&c, &ChannelParams::default(), 2).unwrap();
        let t = digital_targets(&ch, &c).unwrap();
        let b = build_from_targets(&AlgorithmTag::new(Algorithm::DpsFull), &ch, &c, &t).unwrap();
        assert!(reconstruction_error(&t, &b) < 1e-10);
        assert!(b.max_analog_modulus() <= 2.0 + 1e-12);
    }

    #[test]
    fn every_tag_respects_power_and_structure() {
        let c = cfg(2);
        let ch = generate_channel(&c, &ChannelParams::default(), 3).unwrap();
        let t = digital_targets(&ch, &c).unwrap();
        for alg in Algorithm::ALL {
            for bd in [false, true] {
                let tag = AlgorithmTag { algorithm: alg, bd, n_rf: None };
                let b = build_from_targets(&tag, &ch, &c, &t).unwrap();
                let p = b.transmit_power();
                assert!((p / c.total_streams() as f64 - 1.0).abs() < 1e-9, "{tag}");
                assert!(b.max_analog_modulus() <= 2.0 + 1e-9, "{tag}");
                if let Structure::PartiallyConnected(m) = b.structure() {
                    m.check_analog(b.f_rf()).unwrap();
                    for i in 0..16 {
                        let nz = b.f_rf().row(i).iter().filter(|z| z.norm() > 0.0).count();
                        assert_eq!(nz, 1, "{tag} row {i}");
                    }
                }
                assert!(spectral_efficiency(&ch, &b, 0.1).unwrap() >= 0.0);
            }
        }
    }

    #[test]
    fn n_rf_override_is_used() {
        let c = cfg(2);
        let ch = generate_channel(&c, &ChannelParams::default(), 4).unwrap();
        let tag: AlgorithmTag = "dps-full+bd@nrf=6".parse().unwrap();
        let b = build_precoders(&tag, &ch, &c).unwrap();
        assert_eq!(b.f_rf().ncols(), 6);
    }

    #[test]
    fn cascade_removes_leakage() {
        let c = cfg(2);
        let ch = generate_channel(&c, &ChannelParams::default(), 5).unwrap();
        let b = build_precoders(&"sps-heuristic+bd".parse().unwrap(), &ch, &c).unwrap();
        for f in 0..2 {
            for k in 0..2 {
                let w = b.combiner(k, f);
                let sig = (w.adjoint() * ch.h(k, f) * b.precoder(k, f)).norm();
                let j = 1 - k;
                let leak = (w.adjoint() * ch.h(k, f) * b.precoder(j, f)).norm();
                assert!(leak <= 1e-8 * sig, "{leak} vs {sig}");
            }
        }
    }

    #[test]
    fn kmeans_objective_beats_fixed_on_average() {
        let c = cfg(2);
        let (mut km, mut fx) = (0.0, 0.0);
        for seed in 0..20 {
            let ch = generate_channel(&c, &ChannelParams::default(), 100 + seed).unwrap();
            let f = digital_targets(&ch, &c).unwrap().f_opt.concat();
            km += mapping_objective(&f, &partial_mapping(Algorithm::PartialKmeans, &f, 4).unwrap());
            fx += mapping_objective(&f, &partial_mapping(Algorithm::PartialFixed, &f, 4).unwrap());
        }
        assert!(km >= fx, "{km} < {fx}");
    }

    #[test]
    fn stage_is_reported() {
        let c = cfg(2);
        let ch = generate_channel(&c, &ChannelParams::default(), 6).unwrap();
        let tag: AlgorithmTag = "partial-fixed@nrf=5".parse().unwrap();
        let err = build_precoders(&tag, &ch, &c).unwrap_err();
        assert!(err.to_string().starts_with("transmit hybrid design"));
        assert!(matches!(err.root(), Error::InvalidConfig(_)));
    }
}
