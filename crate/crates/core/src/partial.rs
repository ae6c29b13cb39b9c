//! Partially-connected DPS precoding.
//!
//! Each RF chain drives a disjoint set of antennas. With the mapping fixed,
//! the approximation of `F_opt` decouples per RF chain into a rank-one fit of
//! the rows `y_i = F_opt(i,:)^T` in the chain's set, solved by a principal
//! eigenvector. Dynamic mapping picks the sets to maximize the sum of those
//! largest eigenvalues.

use num_complex::Complex64;

use crate::error::{Error, Result, Violation};
use crate::fully_connected::hybrid_lowrank;
use crate::linalg::{frob_sq, hermitian_eigen, hermitian_eigenvalues, CMat, CVec};

/// Antenna index sets `D_j`, one per RF chain. Sets are disjoint, non-empty,
/// cover `0..n_tx` and are kept sorted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MappingSets {
    clusters: Vec<Vec<usize>>,
    owner: Vec<usize>,
}

impl MappingSets {
    pub fn new(n_tx: usize, mut clusters: Vec<Vec<usize>>) -> Result<MappingSets> {
        let mut owner = vec![usize::MAX; n_tx];
        for (j, set) in clusters.iter_mut().enumerate() {
            if set.is_empty() {
                return Err(Error::InvalidMapping(format!("cluster {j} is empty")));
            }
            set.sort_unstable();
            for &i in set.iter() {
                if i >= n_tx {
                    return Err(Error::InvalidMapping(format!(
                        "antenna {i} out of range for {n_tx} antennas"
                    )));
                }
                if owner[i] != usize::MAX {
                    return Err(Error::InvalidMapping(format!(
                        "antenna {i} assigned to clusters {} and {j}",
                        owner[i]
                    )));
                }
                owner[i] = j;
            }
        }
        if let Some(i) = owner.iter().position(|&o| o == usize::MAX) {
            return Err(Error::InvalidMapping(format!("antenna {i} is unassigned")));
        }
        Ok(MappingSets { clusters, owner })
    }

    /// Builds the sets from a per-antenna cluster label.
    pub fn from_assignment(n_rf: usize, labels: &[usize]) -> Result<MappingSets> {
        let mut clusters = vec![Vec::new(); n_rf];
        for (i, &j) in labels.iter().enumerate() {
            if j >= n_rf {
                return Err(Error::InvalidMapping(format!(
                    "antenna {i} labelled {j} with {n_rf} clusters"
                )));
            }
            clusters[j].push(i);
        }
        MappingSets::new(labels.len(), clusters)
    }

    pub fn clusters(&self) -> &[Vec<usize>] {
        &self.clusters
    }

    pub fn n_rf(&self) -> usize {
        self.clusters.len()
    }

    pub fn n_tx(&self) -> usize {
        self.owner.len()
    }

    /// Cluster that antenna `i` belongs to.
    pub fn owner(&self, antenna: usize) -> usize {
        self.owner[antenna]
    }

    pub fn labels(&self) -> &[usize] {
        &self.owner
    }

    /// Checks that `f_rf` is `n_tx x n_rf` with row `i` non-zero only in
    /// column `owner(i)`.
    pub fn check_analog(&self, f_rf: &CMat) -> Result<()> {
        if f_rf.shape() != (self.n_tx(), self.n_rf()) {
            return Err(Error::ShapeMismatch {
                what: "partially-connected F_RF",
                expected: (self.n_tx(), self.n_rf()),
                got: f_rf.shape(),
            });
        }
        for i in 0..self.n_tx() {
            for j in 0..self.n_rf() {
                if j != self.owner[i] && f_rf[(i, j)] != Complex64::new(0.0, 0.0) {
                    return Err(Error::InvalidMapping(format!(
                        "F_RF({i},{j}) is non-zero but antenna {i} belongs to cluster {}",
                        self.owner[i]
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Adjacent-antenna blocks: chain `j` drives antennas
/// `j n_tx / n_rf .. (j + 1) n_tx / n_rf`.
pub fn fixed_block_mapping(n_tx: usize, n_rf: usize) -> Result<MappingSets> {
    if n_rf == 0 || n_tx % n_rf != 0 {
        return Err(Error::InvalidConfig(vec![Violation::Divisibility {
            n_tx,
            n_rf_tx: n_rf,
        }]));
    }
    let size = n_tx / n_rf;
    MappingSets::new(
        n_tx,
        (0..n_rf).map(|j| (j * size..(j + 1) * size).collect()).collect(),
    )
}

#[derive(Debug, Clone)]
pub struct SubproblemSolution {
    /// Unit-norm principal eigenvector of `sum_i y_i y_i^H`.
    pub x: CVec,
    /// `a_i = x^H y_i`, in the order the rows were given.
    pub gains: Vec<Complex64>,
    pub lambda: f64,
    /// `sum_i |y_i|^2 - lambda`
    pub residual: f64,
}

/// Rows `rows` of `f_opt` as the columns of `Y_j` (`L x |D_j|`).
fn observation_block(f_opt: &CMat, rows: &[usize]) -> CMat {
    f_opt.select_rows(rows).transpose()
}

/// Largest eigenvalue of `Y Y^H`, through whichever Gram matrix is smaller.
fn top_eigenvalue(y: &CMat) -> f64 {
    let gram = if y.ncols() <= y.nrows() {
        y.adjoint() * y
    } else {
        y * y.adjoint()
    };
    hermitian_eigenvalues(&gram)[0].max(0.0)
}

/// Principal eigenpair of `Y Y^H` for `Y` of shape `L x m`.
fn principal(y: &CMat) -> (f64, CVec) {
    let l = y.nrows();
    if y.ncols() < l {
        let (vals, vecs) = hermitian_eigen(&(y.adjoint() * y));
        let lam = vals[0];
        if lam > 0.0 {
            let mut x = y * vecs.column(0);
            let n = x.norm();
            x /= Complex64::new(n, 0.0);
            return (lam, x);
        }
    } else {
        let (vals, vecs) = hermitian_eigen(&(y * y.adjoint()));
        if vals[0] > 0.0 {
            return (vals[0], vecs.column(0).into_owned());
        }
    }
    let mut x = CVec::zeros(l);
    x[0] = Complex64::new(1.0, 0.0);
    (0.0, x)
}

/// Best rank-one fit `y_i ~ a_i x` for the rows `rows` of `f_opt`.
pub fn solve_subproblem(f_opt: &CMat, rows: &[usize]) -> Result<SubproblemSolution> {
    if rows.is_empty() {
        return Err(Error::InvalidMapping("empty row set".into()));
    }
    let y = observation_block(f_opt, rows);
    let (lambda, x) = principal(&y);
    let gains: Vec<Complex64> = (0..y.ncols()).map(|c| x.dotc(&y.column(c))).collect();
    let energy = frob_sq(&y);
    Ok(SubproblemSolution {
        x,
        gains,
        lambda,
        residual: (energy - lambda).max(0.0),
    })
}

#[derive(Debug, Clone)]
pub struct PartialHybrid {
    /// `n_tx x n_rf`, one non-zero per row.
    pub f_rf: CMat,
    /// `n_rf x L`, row `j` is `x_j^T`.
    pub f_bb: CMat,
    /// `sum_j lambda_1(Y_j Y_j^H)`
    pub objective: f64,
    /// `|F_opt|^2 - objective`
    pub residual: f64,
}

pub fn hybrid_partial(f_opt: &CMat, mapping: &MappingSets) -> Result<PartialHybrid> {
    if f_opt.nrows() != mapping.n_tx() {
        return Err(Error::ShapeMismatch {
            what: "F_opt rows vs mapping",
            expected: (mapping.n_tx(), f_opt.ncols()),
            got: f_opt.shape(),
        });
    }
    let n_rf = mapping.n_rf();
    let mut f_rf = CMat::zeros(mapping.n_tx(), n_rf);
    let mut f_bb = CMat::zeros(n_rf, f_opt.ncols());
    let mut objective = 0.0;
    for (j, set) in mapping.clusters().iter().enumerate() {
        let sol = solve_subproblem(f_opt, set)?;
        for (&i, a) in set.iter().zip(&sol.gains) {
            f_rf[(i, j)] = *a;
        }
        f_bb.set_row(j, &sol.x.transpose());
        objective += sol.lambda;
    }
    Ok(PartialHybrid {
        f_rf,
        f_bb,
        objective,
        residual: (frob_sq(f_opt) - objective).max(0.0),
    })
}

/// `sum_j lambda_1(sum_{i in D_j} y_i y_i^H)`
pub fn mapping_objective(f_opt: &CMat, mapping: &MappingSets) -> f64 {
    mapping
        .clusters()
        .iter()
        .map(|set| top_eigenvalue(&observation_block(f_opt, set)))
        .sum()
}

/// `|<y_a, y_b>| / (|y_a| |y_b|)`; zero rows count as fully aligned so they
/// are never preferred as seeds.
fn normalized_inner(f_opt: &CMat, norms: &[f64], a: usize, b: usize) -> f64 {
    if norms[a] == 0.0 || norms[b] == 0.0 {
        return 1.0;
    }
    let ip: Complex64 = f_opt
        .row(a)
        .iter()
        .zip(f_opt.row(b).iter())
        .map(|(p, q)| p * q.conj())
        .sum();
    ip.norm() / (norms[a] * norms[b])
}

fn row_norms(f_opt: &CMat) -> Vec<f64> {
    (0..f_opt.nrows()).map(|i| f_opt.row(i).norm()).collect()
}

#[derive(Debug, Clone)]
pub struct GreedyResult {
    pub mapping: MappingSets,
    /// Number of eigen-decompositions performed.
    pub evd_count: usize,
}

/// Greedy dynamic mapping. Seeds: the largest-norm row first, then the row
/// whose largest normalized inner product with the seeds is smallest (ties
/// to the larger norm, then the lower index). Afterwards the unassigned
/// (antenna, cluster) pair with the largest increase of the cluster's top
/// eigenvalue is added until every antenna is assigned.
pub fn greedy_mapping(f_opt: &CMat, n_rf: usize) -> Result<GreedyResult> {
    let n_tx = f_opt.nrows();
    if n_rf == 0 || n_rf > n_tx {
        return Err(Error::InfeasibleDimensions(format!(
            "{n_rf} RF chains for {n_tx} antennas"
        )));
    }
    let norms = row_norms(f_opt);
    let mut seeds: Vec<usize> = Vec::with_capacity(n_rf);
    while seeds.len() < n_rf {
        let mut best: Option<(usize, f64)> = None;
        for i in (0..n_tx).filter(|i| !seeds.contains(i)) {
            let score = seeds
                .iter()
                .map(|&s| normalized_inner(f_opt, &norms, i, s))
                .fold(0.0, f64::max);
            let better = match best {
                None => true,
                Some((b, bs)) => score < bs || (score == bs && norms[i] > norms[b]),
            };
            if better {
                best = Some((i, score));
            }
        }
        seeds.push(best.expect("n_rf <= n_tx").0);
    }

    let mut clusters: Vec<Vec<usize>> = seeds.iter().map(|&s| vec![s]).collect();
    let mut assigned = vec![false; n_tx];
    for &s in &seeds {
        assigned[s] = true;
    }
    let mut evd_count = 0;
    let mut lambdas: Vec<f64> = clusters
        .iter()
        .map(|c| {
            evd_count += 1;
            top_eigenvalue(&observation_block(f_opt, c))
        })
        .collect();
    let increment = |cluster: &[usize], lam: f64, i: usize, count: &mut usize| {
        let mut rows = cluster.to_vec();
        rows.push(i);
        *count += 1;
        top_eigenvalue(&observation_block(f_opt, &rows)) - lam
    };
    // gain[i][j]: eigenvalue increment of adding antenna i to cluster j.
    let mut gain = vec![vec![f64::NEG_INFINITY; n_rf]; n_tx];
    for i in (0..n_tx).filter(|&i| !assigned[i]) {
        for j in 0..n_rf {
            gain[i][j] = increment(&clusters[j], lambdas[j], i, &mut evd_count);
        }
    }
    for _ in seeds.len()..n_tx {
        let mut best = (usize::MAX, usize::MAX, f64::NEG_INFINITY);
        for i in (0..n_tx).filter(|&i| !assigned[i]) {
            for j in 0..n_rf {
                if gain[i][j] > best.2 {
                    best = (i, j, gain[i][j]);
                }
            }
        }
        let (i, j, g) = best;
        assigned[i] = true;
        clusters[j].push(i);
        lambdas[j] += g;
        for r in (0..n_tx).filter(|&r| !assigned[r]) {
            gain[r][j] = increment(&clusters[j], lambdas[j], r, &mut evd_count);
        }
    }
    Ok(GreedyResult {
        mapping: MappingSets::new(n_tx, clusters)?,
        evd_count,
    })
}

pub const KMEANS_MAX_ITER: usize = 50;

#[derive(Debug, Clone)]
pub struct KMeansResult {
    pub mapping: MappingSets,
    /// Assignment/centroid rounds performed before the assignment stopped
    /// changing (or `max_iter`).
    pub iterations: usize,
    pub converged: bool,
    /// `sum_j lambda_1` after every centroid update.
    pub distortion: Vec<f64>,
}

/// Initial centroid rows: `floor(n_rf / 2)` disjoint pairs with the smallest
/// normalized inner products, plus the row most orthogonal to those when
/// `n_rf` is odd.
pub fn kmeans_seeds(f_opt: &CMat, n_rf: usize) -> Vec<usize> {
    let n_tx = f_opt.nrows();
    let norms = row_norms(f_opt);
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for a in 0..n_tx {
        for b in a + 1..n_tx {
            pairs.push((normalized_inner(f_opt, &norms, a, b), a, b));
        }
    }
    pairs.sort_by(|p, q| p.0.total_cmp(&q.0).then((p.1, p.2).cmp(&(q.1, q.2))));
    let mut chosen: Vec<usize> = Vec::with_capacity(n_rf);
    for &(_, a, b) in &pairs {
        if chosen.len() + 2 > n_rf - n_rf % 2 {
            break;
        }
        if !chosen.contains(&a) && !chosen.contains(&b) {
            chosen.push(a);
            chosen.push(b);
        }
    }
    while chosen.len() < n_rf {
        let mut best = (usize::MAX, f64::INFINITY);
        for i in (0..n_tx).filter(|i| !chosen.contains(i)) {
            let score = chosen
                .iter()
                .map(|&c| normalized_inner(f_opt, &norms, i, c))
                .fold(0.0, f64::max);
            if score < best.1 {
                best = (i, score);
            }
        }
        chosen.push(best.0);
    }
    chosen
}

/// Modified K-means dynamic mapping: rows are assigned to the centroid with
/// the largest `|y_i^H x_j|^2`, centroids are the principal eigenvectors of
/// their clusters.
pub fn kmeans_mapping(f_opt: &CMat, n_rf: usize, max_iter: usize) -> Result<KMeansResult> {
    let n_tx = f_opt.nrows();
    if n_rf == 0 || n_rf > n_tx {
        return Err(Error::InfeasibleDimensions(format!(
            "{n_rf} RF chains for {n_tx} antennas"
        )));
    }
    if n_rf == 1 {
        let mapping = MappingSets::new(n_tx, vec![(0..n_tx).collect()])?;
        let d = mapping_objective(f_opt, &mapping);
        return Ok(KMeansResult {
            mapping,
            iterations: 1,
            converged: true,
            distortion: vec![d],
        });
    }
    let norms = row_norms(f_opt);
    let mut centroids: Vec<CVec> = kmeans_seeds(f_opt, n_rf)
        .into_iter()
        .map(|i| {
            let y = f_opt.row(i).transpose();
            if norms[i] > 0.0 {
                y / Complex64::new(norms[i], 0.0)
            } else {
                let mut e = CVec::zeros(f_opt.ncols());
                e[0] = Complex64::new(1.0, 0.0);
                e
            }
        })
        .collect();
    let fit = |i: usize, x: &CVec| -> f64 {
        f_opt
            .row(i)
            .iter()
            .zip(x.iter())
            .map(|(y, c)| y * c.conj())
            .sum::<Complex64>()
            .norm_sqr()
    };
    let mut labels: Vec<usize> = Vec::new();
    let mut distortion = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    for _ in 0..=max_iter {
        let mut next: Vec<usize> = (0..n_tx)
            .map(|i| {
                let mut best = (0, f64::NEG_INFINITY);
                for (j, x) in centroids.iter().enumerate() {
                    let v = fit(i, x);
                    if v > best.1 {
                        best = (j, v);
                    }
                }
                best.0
            })
            .collect();
        repair_empty(&mut next, n_rf, |i| {
            let best = centroids.iter().map(|x| fit(i, x)).fold(0.0, f64::max);
            if norms[i] > 0.0 {
                best / (norms[i] * norms[i])
            } else {
                0.0
            }
        });
        if next == labels {
            converged = true;
            break;
        }
        if iterations == max_iter {
            break;
        }
        labels = next;
        iterations += 1;
        let mapping = MappingSets::from_assignment(n_rf, &labels)?;
        let mut total = 0.0;
        for (j, set) in mapping.clusters().iter().enumerate() {
            let (lam, x) = principal(&observation_block(f_opt, set));
            centroids[j] = x;
            total += lam;
        }
        distortion.push(total);
    }
    Ok(KMeansResult {
        mapping: MappingSets::from_assignment(n_rf, &labels)?,
        iterations,
        converged,
        distortion,
    })
}

/// Fills empty clusters by moving the worst-fitting row (lowest `fitness`,
/// lowest index on ties) out of clusters that keep at least one row.
fn repair_empty(labels: &mut [usize], n_rf: usize, fitness: impl Fn(usize) -> f64) {
    loop {
        let mut sizes = vec![0usize; n_rf];
        for &l in labels.iter() {
            sizes[l] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return;
        };
        let mut worst = (usize::MAX, f64::INFINITY);
        for (i, &l) in labels.iter().enumerate() {
            if sizes[l] >= 2 {
                let v = fitness(i);
                if v < worst.1 {
                    worst = (i, v);
                }
            }
        }
        labels[worst.0] = empty;
    }
}

/// `Delta = sum_{p <= n_rf} lambda_p(F_opt^H F_opt) - sum_j lambda_1(Y_j Y_j^H)`
pub fn gap_delta(f_opt: &CMat, mapping: &MappingSets) -> f64 {
    let n_rf = mapping.n_rf();
    let gram = f_opt.adjoint() * f_opt;
    let top: f64 = hermitian_eigenvalues(&gram).iter().take(n_rf).sum();
    top - mapping_objective(f_opt, mapping)
}

/// Both optimal residuals computed from the constructed precoders, their
/// difference, and the eigenvalue formula for the gap.
#[derive(Debug, Clone, Copy)]
pub struct GapReport {
    pub f_star_full: f64,
    pub f_star_partial: f64,
    pub delta: f64,
    pub delta_formula: f64,
}

pub fn gap_report(f_opt: &CMat, mapping: &MappingSets) -> Result<GapReport> {
    let n_rf = mapping.n_rf();
    let full = hybrid_lowrank(f_opt, n_rf.min(f_opt.ncols()))?;
    let f_star_full = frob_sq(&(f_opt - &full.f_rf * &full.f_bb));
    let part = hybrid_partial(f_opt, mapping)?;
    let f_star_partial = frob_sq(&(f_opt - &part.f_rf * &part.f_bb));
    Ok(GapReport {
        f_star_full,
        f_star_partial,
        delta: f_star_partial - f_star_full,
        delta_formula: gap_delta(f_opt, mapping),
    })
}
