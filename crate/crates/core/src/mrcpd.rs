//! Mode-reduced CP decomposition: regroup the modes of an order-N tensor into
//! three merged modes, decompose the 3rd-order tensor, then split every
//! merged factor back into original factors by Khatri-Rao projection.

use std::time::Instant;

use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{CpdError, Result};
use crate::krproj::{kr_project_with, KrProjOptions};
use crate::ktensor::KTensor;
use crate::linalg::{khatri_rao, lstsq, truncated_svd};
use crate::scalar::{from_usize, Scalar};
use crate::solvers::{Init, SolveReport, SolverOptions, SolverRegistry};
use crate::tensor::{matricize, reduce_modes, tensorize, DenseTensor, ModeSplit};
use crate::uniqueness::{krank_product_bound, mode_rank};

/// Slack, relative to `‖Y‖_F`, allowed when checking the error bound.
pub const BOUND_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Default)]
pub enum SplitChoice {
    /// Plan from mode-rank estimates.
    #[default]
    Auto,
    Given(ModeSplit),
}

/// Size reduction of one mode of the 3rd-order tensor before solving.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Compression {
    #[default]
    None,
    /// Project the mode onto its leading `J` left singular vectors (whitened).
    Svd { mode: usize },
    /// Keep `count` randomly sampled slices of the mode (default `max(3J, 100)`).
    Fibers { mode: usize, count: Option<usize>, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Variant {
    /// Decompose, restore the compressed factor, project all merged factors.
    #[default]
    Full,
    /// Compress the second and third merged modes, keep only the first factor
    /// from the solve, and recover the product of the other two from the
    /// first unfolding.
    Reduced,
}

#[derive(Debug, Clone)]
pub struct MrcpdOptions<T> {
    pub split: SplitChoice,
    pub solver: SolverOptions<T>,
    pub solver_name: String,
    pub krproj: KrProjOptions<T>,
    pub compression: Compression,
    pub variant: Variant,
    /// Independent solver runs (seeds `seed`, `seed + 1`, …); the best fit wins.
    pub restarts: usize,
}

impl<T: Scalar> Default for MrcpdOptions<T> {
    fn default() -> Self {
        Self {
            split: SplitChoice::Auto,
            // algebraic start on the 3rd-order tensor, random when it does not apply
            solver: SolverOptions {
                init: Init::Gevd,
                ..SolverOptions::default()
            },
            solver_name: "cp_als".to_string(),
            krproj: KrProjOptions::default(),
            compression: Compression::None,
            variant: Variant::Full,
            restarts: 1,
        }
    }
}

/// Both sides of `‖Y − [[Ã]]‖ ≤ ‖𝒴⁽³⁾ − [[G]]‖ + √J ε_K`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundReport {
    pub eps_k: f64,
    pub fit3: f64,
    pub final_err: f64,
    pub bound: f64,
    pub holds: bool,
}

impl BoundReport {
    pub fn slack(&self) -> f64 {
        self.bound - self.final_err
    }
}

#[derive(Debug, Clone)]
pub struct MrcpdResult<T> {
    pub ktensor: KTensor<T>,
    pub report: SolveReport,
    pub bound: BoundReport,
    pub split: ModeSplit,
    /// `‖G_k − ⊙ Â‖_F` per merged group (unit-column `G_k`), 0 for singletons.
    pub group_eps: Vec<f64>,
}

/// Groups the modes into three merged modes with Kruskal-rank bounds as
/// balanced as possible.
///
/// Modes are sorted by descending rank estimate (ties by index) and cut into
/// three contiguous groups. Among all cuts, the one maximizing the smallest
/// product bound `min(J, Σ kr − (size − 1))` wins; ties go to the larger sum
/// of bounds, then the smaller largest group, then the lexicographically
/// smallest group sizes. Groups keep the sorted order.
pub fn plan_unfolding(kranks: &[usize], rank: usize) -> Result<ModeSplit> {
    let n = kranks.len();
    if n < 4 {
        return Err(CpdError::InvalidArgument(format!(
            "planning needs order at least 4, got {n}"
        )));
    }
    if kranks.contains(&0) {
        return Err(CpdError::InvalidArgument("rank estimates must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| kranks[b].cmp(&kranks[a]).then(a.cmp(&b)));
    let sorted: Vec<usize> = order.iter().map(|&m| kranks[m]).collect();

    // (min bound, bound sum, smallest largest group) ranks candidate cuts
    type Score = (usize, usize, std::cmp::Reverse<usize>);
    let mut best: Option<(Score, [usize; 3])> = None;
    for s1 in 1..=n - 2 {
        for s2 in 1..=n - 1 - s1 {
            let sizes = [s1, s2, n - s1 - s2];
            let b1 = krank_product_bound(&sorted[..s1], rank)?;
            let b2 = krank_product_bound(&sorted[s1..s1 + s2], rank)?;
            let b3 = krank_product_bound(&sorted[s1 + s2..], rank)?;
            let key = (
                b1.min(b2).min(b3),
                b1 + b2 + b3,
                std::cmp::Reverse(*sizes.iter().max().expect("three groups")),
            );
            if best.as_ref().is_none_or(|(k, _)| key > *k) {
                best = Some((key, sizes));
            }
        }
    }
    let sizes = best.expect("n >= 4 has a cut").1;
    let groups = vec![
        order[..sizes[0]].to_vec(),
        order[sizes[0]..sizes[0] + sizes[1]].to_vec(),
        order[sizes[0] + sizes[1]..].to_vec(),
    ];
    ModeSplit::from_groups(&groups)
}

/// How a compressed mode relates to the original one.
#[derive(Debug, Clone)]
pub enum RestoreInfo<T> {
    /// The mode was left untouched.
    Identity,
    /// `G̃ = D⁻¹ Uᵀ G`, so `G = U D G̃`.
    Svd { mode: usize, u: Array2<T>, d: Array1<T> },
    /// Only these slices (ascending) were kept.
    Fibers { mode: usize, rows: Vec<usize> },
}

impl<T: Scalar> RestoreInfo<T> {
    /// Maps a factor of the compressed mode back to the original size, where
    /// that is possible without the data (`None` for sampled fibers).
    pub fn restore_by_basis(&self, g: &Array2<T>) -> Option<Array2<T>> {
        match self {
            RestoreInfo::Identity => Some(g.clone()),
            RestoreInfo::Svd { u, d, .. } => {
                let dg = g * &d.view().insert_axis(Axis(1));
                Some(u.dot(&dg))
            }
            RestoreInfo::Fibers { .. } => None,
        }
    }

    /// Applies the same reduction to a factor of the original mode.
    pub fn compress_factor(&self, g: &Array2<T>) -> Array2<T> {
        match self {
            RestoreInfo::Identity => g.clone(),
            RestoreInfo::Svd { u, d, .. } => {
                let ug = u.t().dot(g);
                &ug / &d.view().insert_axis(Axis(1))
            }
            RestoreInfo::Fibers { rows, .. } => g.select(Axis(0), rows),
        }
    }

    pub fn mode(&self) -> Option<usize> {
        match self {
            RestoreInfo::Identity => None,
            RestoreInfo::Svd { mode, .. } | RestoreInfo::Fibers { mode, .. } => Some(*mode),
        }
    }
}

/// Shrinks `mode` of a 3rd-order tensor to `J` (SVD) or `count` (fibers).
/// A mode no larger than the target is returned unchanged.
pub fn compress_mode<T: Scalar>(
    t3: &DenseTensor<T>,
    compression: Compression,
    rank: usize,
) -> Result<(DenseTensor<T>, RestoreInfo<T>)> {
    match compression {
        Compression::None => Ok((t3.clone(), RestoreInfo::Identity)),
        Compression::Svd { mode } => {
            check_compress_mode(t3, mode)?;
            let size = t3.shape()[mode];
            if rank > size {
                return Err(CpdError::InvalidArgument(format!(
                    "rank {rank} exceeds the size {size} of mode {}",
                    mode + 1
                )));
            }
            if rank == size {
                return Ok((t3.clone(), RestoreInfo::Identity));
            }
            let m = matricize(t3, mode)?;
            let svd = truncated_svd(&m, rank)?;
            let cutoff = svd.s[0] * from_usize::<T>(m.nrows().max(m.ncols())) * T::epsilon();
            if let Some((index, &value)) = svd.s.iter().enumerate().find(|&(_, &s)| s <= cutoff) {
                return Err(CpdError::DegenerateSpectrum {
                    index: index + 1,
                    value: value.as_f64(),
                });
            }
            let mut reduced = svd.u.t().dot(&m);
            for (mut row, &s) in reduced.rows_mut().into_iter().zip(svd.s.iter()) {
                row.mapv_inplace(|x| x / s);
            }
            let mut shape = t3.shape().to_vec();
            shape[mode] = rank;
            let out = tensorize(&reduced, &shape, mode)?;
            Ok((
                out,
                RestoreInfo::Svd {
                    mode,
                    u: svd.u,
                    d: svd.s,
                },
            ))
        }
        Compression::Fibers { mode, count, seed } => {
            check_compress_mode(t3, mode)?;
            let size = t3.shape()[mode];
            let count = count.unwrap_or_else(|| (3 * rank).max(100)).min(size);
            if count < rank {
                return Err(CpdError::InvalidArgument(format!(
                    "sampling {count} slices cannot support rank {rank}"
                )));
            }
            if count == size {
                return Ok((t3.clone(), RestoreInfo::Identity));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut rows = rand::seq::index::sample(&mut rng, size, count).into_vec();
            rows.sort_unstable();
            let m = matricize(t3, mode)?;
            let reduced = m.select(Axis(0), &rows);
            let mut shape = t3.shape().to_vec();
            shape[mode] = count;
            Ok((tensorize(&reduced, &shape, mode)?, RestoreInfo::Fibers { mode, rows }))
        }
    }
}

fn check_compress_mode<T: Scalar>(t3: &DenseTensor<T>, mode: usize) -> Result<()> {
    if t3.order() != 3 || mode >= 3 {
        return Err(CpdError::InvalidArgument(format!(
            "compression mode {} on a tensor of order {}",
            mode + 1,
            t3.order()
        )));
    }
    Ok(())
}

/// Least-squares factor of mode `k` of a 3rd-order tensor given the factors
/// of the other two modes (ascending mode order):
/// `G_k = Y_(k) · pinv((⊙ others)ᵀ)`.
pub fn recover_merged_factor<T: Scalar>(t3: &DenseTensor<T>, k: usize, known: [&Array2<T>; 2]) -> Result<Array2<T>> {
    if t3.order() != 3 || k >= 3 {
        return Err(CpdError::InvalidArgument("recovery needs a 3rd-order tensor and mode < 3".into()));
    }
    let others: Vec<usize> = (0..3).filter(|&p| p != k).collect();
    for (i, &p) in others.iter().enumerate() {
        if known[i].nrows() != t3.shape()[p] {
            return Err(CpdError::ShapeMismatch(format!(
                "factor for mode {} has {} rows, expected {}",
                p + 1,
                known[i].nrows(),
                t3.shape()[p]
            )));
        }
    }
    let kr = khatri_rao(&known)?;
    let rank = kr.ncols();
    let m = matricize(t3, k)?;
    let sol = lstsq(&kr, &m.t().to_owned())?;
    if sol.rank < rank {
        return Err(CpdError::RankDeficient {
            condition: sol.condition(),
        });
    }
    Ok(sol.x.t().to_owned())
}

/// The 3-way model of `split` built from an order-N model: each merged
/// factor is the Khatri-Rao product of its group (first listed mode fastest).
pub fn merge_ktensor<T: Scalar>(kt: &KTensor<T>, split: &ModeSplit) -> Result<KTensor<T>> {
    split.check_order(kt.order())?;
    let factors = split
        .groups()
        .iter()
        .map(|g| {
            let fs: Vec<&Array2<T>> = g.iter().map(|&p| kt.factor(p)).collect();
            khatri_rao(&fs)
        })
        .collect::<Result<Vec<_>>>()?;
    KTensor::new(factors, kt.weights().clone())
}

/// Unit columns, returning the norms.
fn unit_columns<T: Scalar>(g: &mut Array2<T>) -> Array1<T> {
    let mut norms = Array1::zeros(g.ncols());
    for (j, mut col) in g.columns_mut().into_iter().enumerate() {
        let nrm = col.dot(&col).sqrt();
        if nrm > T::zero() {
            col.mapv_inplace(|x| x / nrm);
        }
        norms[j] = nrm;
    }
    norms
}

/// Computes the final error of `est` against `t` and checks it against
/// `fit3 + √J ε_K`.
pub fn verify_error_bound<T: Scalar>(t: &DenseTensor<T>, est: &KTensor<T>, fit3: f64, eps_k: f64) -> Result<BoundReport> {
    let rec = est.reconstruct();
    let diff = t.sub(&rec)?;
    let final_err = diff.frobenius_norm().as_f64();
    let bound = fit3 + (est.rank() as f64).sqrt() * eps_k;
    let holds = final_err <= bound + BOUND_SLACK * t.frobenius_norm().as_f64();
    Ok(BoundReport {
        eps_k,
        fit3,
        final_err,
        bound,
        holds,
    })
}

/// Merged factor blocks after the 3-way stage: unit columns plus weights.
struct MergedModel<T> {
    /// One block per merged mode (or per product of merged modes).
    blocks: Vec<Array2<T>>,
    /// Original modes (in permuted order) covered by each block.
    block_modes: Vec<Vec<usize>>,
    weights: Array1<T>,
    fit3: f64,
}

/// Projects every block onto its Khatri-Rao structure and bounds the total
/// error: per component, `‖⊗ g_k − ⊗ g̃_k‖ ≤ Σ_k ‖g_k − g̃_k‖ Π_{m<k} ‖g̃_m‖ Π_{m>k} ‖g_m‖`.
#[allow(clippy::type_complexity)]
fn project_blocks<T: Scalar>(
    model: &MergedModel<T>,
    shape_perm: &[usize],
    opts: &KrProjOptions<T>,
    warnings: &mut Vec<String>,
) -> Result<(Vec<Array2<T>>, Array1<T>, f64, Vec<f64>)> {
    let rank = model.weights.len();
    let mut factors_perm = Vec::with_capacity(shape_perm.len());
    let mut approx_blocks = Vec::with_capacity(model.blocks.len());
    let mut group_eps = Vec::with_capacity(model.blocks.len());
    let mut weights = model.weights.clone();
    for (block, modes) in model.blocks.iter().zip(&model.block_modes) {
        if modes.len() == 1 {
            factors_perm.push(block.clone());
            approx_blocks.push(block.clone());
            group_eps.push(0.0);
            continue;
        }
        let sizes: Vec<usize> = modes.iter().map(|&p| shape_perm[p]).collect();
        let res = kr_project_with(block, &sizes, opts)?;
        if !res.flagged_columns.is_empty() {
            warnings.push(format!(
                "Khatri-Rao projection flagged columns {:?} of the group with modes {:?}",
                res.flagged_columns, modes
            ));
        }
        group_eps.push(res.eps_k.as_f64());
        approx_blocks.push(khatri_rao(&res.factors)?);
        let mut fs = res.factors;
        // move the amplitude of the last factor into the weights
        let last = fs.last_mut().expect("at least two factors");
        let amp = unit_columns(last);
        weights = &weights * &amp;
        factors_perm.extend(fs);
    }

    let mut total = T::zero();
    for j in 0..rank {
        let mut s = T::zero();
        for k in 0..model.blocks.len() {
            let e = &model.blocks[k].column(j) - &approx_blocks[k].column(j);
            let mut term = e.dot(&e).sqrt();
            for (m, (g, gt)) in model.blocks.iter().zip(&approx_blocks).enumerate() {
                if m < k {
                    term *= gt.column(j).dot(&gt.column(j)).sqrt();
                } else if m > k {
                    term *= g.column(j).dot(&g.column(j)).sqrt();
                }
            }
            s += term;
        }
        let w = model.weights[j] * s;
        total += w * w;
    }
    Ok((factors_perm, weights, total.sqrt().as_f64(), group_eps))
}

fn resolve_split<T: Scalar>(t: &DenseTensor<T>, rank: usize, choice: &SplitChoice) -> Result<ModeSplit> {
    let split = match choice {
        SplitChoice::Given(s) => s.clone(),
        SplitChoice::Auto => {
            let ranks = (0..t.order())
                .map(|n| Ok(mode_rank(t, n, T::lit(1e-8))?.clamp(1, rank.max(1))))
                .collect::<Result<Vec<_>>>()?;
            plan_unfolding(&ranks, rank)?
        }
    };
    split.check_order(t.order())?;
    if split.num_groups() != 3 {
        return Err(CpdError::InvalidSplit(format!(
            "mode reduction needs exactly 3 groups, got {}",
            split.num_groups()
        )));
    }
    Ok(split)
}

fn best_of_restarts<T: Scalar>(
    registry: &SolverRegistry<T>,
    t3: &DenseTensor<T>,
    rank: usize,
    opts: &MrcpdOptions<T>,
    init: Option<KTensor<T>>,
) -> Result<(KTensor<T>, SolveReport)> {
    let mut best: Option<(KTensor<T>, SolveReport)> = None;
    let mut last_err = None;
    for r in 0..opts.restarts.max(1) {
        let mut solver_opts = opts.solver.clone();
        solver_opts.seed = opts.solver.seed.wrapping_add(r as u64);
        // the configured start is used for the first run only
        solver_opts.init = match (&init, r) {
            (Some(kt), 0) => Init::Given(kt.clone()),
            (None, 0) => opts.solver.init.clone(),
            _ => Init::RandomNormal,
        };
        match registry.solve(&opts.solver_name, t3, rank, &solver_opts) {
            Ok((kt, rep)) => {
                if best.as_ref().is_none_or(|(_, b)| rep.final_fit > b.final_fit) {
                    best = Some((kt, rep));
                }
            }
            Err(e @ CpdError::SolverNotRegistered(_)) => return Err(e),
            Err(e) => last_err = Some(e),
        }
    }
    best.ok_or_else(|| last_err.expect("at least one attempt"))
}

/// Mode-reduced CP decomposition with the default solver registry.
pub fn mrcpd_decompose<T: Scalar>(t: &DenseTensor<T>, rank: usize, opts: &MrcpdOptions<T>) -> Result<MrcpdResult<T>> {
    mrcpd_decompose_with(&SolverRegistry::default(), t, rank, opts)
}

pub fn mrcpd_decompose_with<T: Scalar>(
    registry: &SolverRegistry<T>,
    t: &DenseTensor<T>,
    rank: usize,
    opts: &MrcpdOptions<T>,
) -> Result<MrcpdResult<T>> {
    let start = Instant::now();
    if t.order() < 4 {
        return Err(CpdError::InvalidArgument(format!(
            "mode reduction needs order at least 4, got {}",
            t.order()
        )));
    }
    if rank == 0 {
        return Err(CpdError::InvalidArgument("rank must be at least 1".into()));
    }
    let split = resolve_split(t, rank, &opts.split)?;
    let y3 = reduce_modes(t, &split)?;
    let shape_perm: Vec<usize> = split.perm().iter().map(|&p| t.shape()[p]).collect();
    let groups = split.groups();
    let bounds = split.boundaries();
    let group_modes: Vec<Vec<usize>> = (0..3).map(|k| (bounds[k]..bounds[k + 1]).collect()).collect();

    let init = match &opts.solver.init {
        Init::RandomNormal | Init::Gevd => None,
        Init::Given(kt) if kt.order() == 3 => Some(kt.clone()),
        Init::Given(kt) => Some(merge_ktensor(kt, &split)?),
    };
    let (model, mut report) = match opts.variant {
        Variant::Full => full_variant(registry, &y3, rank, opts, init, &group_modes)?,
        Variant::Reduced => reduced_variant(registry, &y3, rank, opts, init, &group_modes)?,
    };
    let mut warnings = std::mem::take(&mut report.warnings);
    let (factors_perm, weights, eps_k, group_eps) = project_blocks(&model, &shape_perm, &opts.krproj, &mut warnings)?;

    let mut factors: Vec<Option<Array2<T>>> = vec![None; t.order()];
    for (p, f) in factors_perm.into_iter().enumerate() {
        factors[split.perm()[p]] = Some(f);
    }
    let factors = factors.into_iter().map(|f| f.expect("perm is a bijection")).collect();
    let ktensor = KTensor::new(factors, weights)?.normalize();
    let bound = verify_error_bound(t, &ktensor, model.fit3, eps_k)?;
    if !bound.holds {
        return Err(CpdError::BoundViolation {
            final_err: bound.final_err,
            bound: bound.bound,
        });
    }
    let norm = t.frobenius_norm().as_f64();
    report.final_fit = 1.0 - bound.final_err / norm;
    report.runtime_s = start.elapsed().as_secs_f64();
    report.warnings = warnings;
    debug_assert_eq!(groups.len(), 3);
    Ok(MrcpdResult {
        ktensor,
        report,
        bound,
        split,
        group_eps,
    })
}

fn compress_init<T: Scalar>(kt: KTensor<T>, infos: &[&RestoreInfo<T>]) -> Result<KTensor<T>> {
    let (mut factors, weights) = kt.into_parts();
    for info in infos {
        if let Some(m) = info.mode() {
            factors[m] = info.compress_factor(&factors[m]);
        }
    }
    KTensor::new(factors, weights)
}

fn full_variant<T: Scalar>(
    registry: &SolverRegistry<T>,
    y3: &DenseTensor<T>,
    rank: usize,
    opts: &MrcpdOptions<T>,
    init: Option<KTensor<T>>,
    group_modes: &[Vec<usize>],
) -> Result<(MergedModel<T>, SolveReport)> {
    let (compressed, restore) = compress_mode(y3, opts.compression, rank)?;
    let init = init.map(|kt| compress_init(kt, &[&restore])).transpose()?;
    let (kt3, report) = best_of_restarts(registry, &compressed, rank, opts, init)?;
    let (mut blocks, mut weights) = kt3.into_parts();
    if let Some(c) = restore.mode() {
        // least-squares restore against the uncompressed tensor
        let mut known: Vec<Array2<T>> = (0..3).filter(|&p| p != c).map(|p| blocks[p].clone()).collect();
        for b in known.iter_mut() {
            unit_columns(b);
        }
        let g = recover_merged_factor(y3, c, [&known[0], &known[1]])?;
        let mut it = known.into_iter();
        for (p, b) in blocks.iter_mut().enumerate() {
            *b = if p == c { g.clone() } else { it.next().expect("two known") };
        }
        weights = Array1::from_elem(rank, T::one());
    }
    for b in blocks.iter_mut() {
        let n = unit_columns(b);
        weights = &weights * &n;
    }
    let model_kt = KTensor::new(blocks.clone(), weights.clone())?;
    let fit3 = y3.sub(&model_kt.reconstruct())?.frobenius_norm().as_f64();
    Ok((
        MergedModel {
            blocks,
            block_modes: group_modes.to_vec(),
            weights,
            fit3,
        },
        report,
    ))
}

fn reduced_variant<T: Scalar>(
    registry: &SolverRegistry<T>,
    y3: &DenseTensor<T>,
    rank: usize,
    opts: &MrcpdOptions<T>,
    init: Option<KTensor<T>>,
    group_modes: &[Vec<usize>],
) -> Result<(MergedModel<T>, SolveReport)> {
    let mut compressed = y3.clone();
    let mut infos = Vec::with_capacity(2);
    for mode in [1, 2] {
        let c = match opts.compression {
            Compression::None => Compression::None,
            Compression::Svd { .. } => Compression::Svd { mode },
            Compression::Fibers { count, seed, .. } => Compression::Fibers {
                mode,
                count,
                seed: seed.wrapping_add(mode as u64),
            },
        };
        let (next, info) = compress_mode(&compressed, c, rank)?;
        compressed = next;
        infos.push(info);
    }
    let refs: Vec<&RestoreInfo<T>> = infos.iter().collect();
    let init = init.map(|kt| compress_init(kt, &refs)).transpose()?;
    let (kt3, report) = best_of_restarts(registry, &compressed, rank, opts, init)?;
    let mut g1 = kt3.factor(0).clone();
    unit_columns(&mut g1);
    // (G3 ⊙ G2)ᵀ = pinv(G1) Y_(1)
    let y1 = matricize(y3, 0)?;
    let sol = lstsq(&g1, &y1)?;
    if sol.rank < rank {
        return Err(CpdError::RankDeficient {
            condition: sol.condition(),
        });
    }
    let mut w = sol.x.t().to_owned();
    let weights = unit_columns(&mut w);
    let scaled = &w * &weights.view().insert_axis(Axis(0));
    let fit3 = (&y1 - &g1.dot(&scaled.t())).mapv(|x| x * x).sum().sqrt().as_f64();
    let mut rest = group_modes[1].clone();
    rest.extend(&group_modes[2]);
    Ok((
        MergedModel {
            blocks: vec![g1, w],
            block_modes: vec![group_modes[0].clone(), rest],
            weights,
            fit3,
        },
        report,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ktensor::match_factors;
    use crate::solvers::random_init;

    fn truth(shape: &[usize], rank: usize, seed: u64) -> KTensor<f64> {
        KTensor::from_factors(random_init(shape, rank, seed)).unwrap()
    }

    fn groups_of(split: &ModeSplit) -> Vec<Vec<usize>> {
        split.groups()
    }

    #[test]
    fn plan_examples() {
        let s = plan_unfolding(&[10, 9, 8, 7, 6], 18).unwrap();
        assert_eq!(groups_of(&s), vec![vec![0], vec![1, 2], vec![3, 4]]);
        let s = plan_unfolding(&[5; 6], 18).unwrap();
        assert!(groups_of(&s).iter().all(|g| g.len() == 2));
        let s = plan_unfolding(&[3, 5, 2, 4], 10).unwrap();
        // the two smallest (modes 2 and 0) are merged
        assert_eq!(groups_of(&s), vec![vec![1], vec![3], vec![0, 2]]);
        let s = plan_unfolding(&[2, 2, 2, 2], 3).unwrap();
        assert_eq!(groups_of(&s), vec![vec![0], vec![1], vec![2, 3]]);
        assert!(plan_unfolding(&[3, 3, 3], 3).is_err());
    }

    #[test]
    fn svd_compression_is_lossless_on_exact_rank() {
        let kt = truth(&[4, 5, 9], 3, 1);
        let t = kt.reconstruct();
        let (c, info) = compress_mode(&t, Compression::Svd { mode: 2 }, 3).unwrap();
        assert_eq!(c.shape(), &[4, 5, 3]);
        let (kc, _) = crate::solvers::cp_als(
            &c,
            3,
            &SolverOptions {
                max_iters: 1000,
                tol: 1e-14,
                ..Default::default()
            },
        )
        .unwrap();
        let restored = info.restore_by_basis(&kc.absorbed_factors()[2]).unwrap();
        let mut fs = kc.factors().to_vec();
        fs[2] = restored;
        let back = KTensor::from_factors(fs).unwrap().reconstruct();
        let err = t.sub(&back).unwrap().frobenius_norm() / t.frobenius_norm();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn fiber_sampling() {
        let t = truth(&[3, 4, 6], 2, 2).reconstruct();
        let full = Compression::Fibers {
            mode: 2,
            count: Some(6),
            seed: 1,
        };
        let (c, _) = compress_mode(&t, full, 2).unwrap();
        assert_eq!(c.data(), t.data());
        let nonneg = DenseTensor::from_fn(vec![3, 4, 6], |i| (i[0] + i[1] * i[2]) as f64).unwrap();
        let part = Compression::Fibers {
            mode: 1,
            count: Some(2),
            seed: 3,
        };
        let (c, info) = compress_mode(&nonneg, part, 2).unwrap();
        assert_eq!(c.shape(), &[3, 2, 6]);
        assert!(c.data().iter().all(|&x| x >= 0.0));
        assert!(matches!(info, RestoreInfo::Fibers { .. }));
        assert!(compress_mode(&t, Compression::Svd { mode: 2 }, 7).is_err());
    }

    #[test]
    fn recover_exact_factor() {
        let kt = truth(&[4, 3, 5], 3, 3);
        let t = kt.reconstruct();
        let f = kt.factors();
        let g = recover_merged_factor(&t, 2, [&f[0], &f[1]]).unwrap();
        assert!((&g - &f[2]).iter().all(|d: &f64| d.abs() < 1e-10));
        let g0 = recover_merged_factor(&t, 0, [&f[1], &f[2]]).unwrap();
        assert!((&g0 - &f[0]).iter().all(|d: &f64| d.abs() < 1e-10));
        let mut dup = f[0].clone();
        let c0 = dup.column(0).to_owned();
        dup.column_mut(1).assign(&c0);
        let a = ndarray::Array2::from_elem((3, 3), 1.0);
        assert!(matches!(
            recover_merged_factor(&t, 2, [&dup, &a]),
            Err(CpdError::RankDeficient { .. })
        ));
    }

    #[test]
    fn noiseless_recovery_full_and_reduced() {
        let kt = truth(&[8, 7, 6, 8, 7], 4, 4);
        let t = kt.reconstruct();
        for variant in [Variant::Full, Variant::Reduced] {
            let opts = MrcpdOptions {
                variant,
                restarts: 3,
                solver: SolverOptions {
                    max_iters: 1000,
                    tol: 1e-12,
                    ..Default::default()
                },
                ..Default::default()
            };
            let res = mrcpd_decompose(&t, 4, &opts).unwrap();
            assert!(res.report.final_fit > 1.0 - 1e-6, "{variant:?}: {}", res.report.final_fit);
            assert!(res.bound.eps_k < 1e-5 * t.frobenius_norm(), "{}", res.bound.eps_k);
            assert!(res.bound.holds);
            for n in 0..5 {
                let m = match_factors(kt.factor(n), res.ktensor.factor(n)).unwrap();
                assert!(m.msir() > 60.0);
            }
        }
    }

    #[test]
    fn compressed_run_restores_original_shape() {
        let kt = truth(&[5, 4, 6, 3], 3, 5);
        let t = kt.reconstruct();
        let opts = MrcpdOptions {
            split: SplitChoice::Given(ModeSplit::parse("1|2|3,4").unwrap()),
            compression: Compression::Svd { mode: 2 },
            restarts: 3,
            solver: SolverOptions {
                max_iters: 1000,
                tol: 1e-12,
                ..Default::default()
            },
            ..Default::default()
        };
        let res = mrcpd_decompose(&t, 3, &opts).unwrap();
        assert_eq!(res.ktensor.shape(), vec![5, 4, 6, 3]);
        assert!(res.report.final_fit > 1.0 - 1e-6);
    }

    #[test]
    fn truncated_run_bound_holds() {
        let kt = truth(&[5, 4, 4, 5], 4, 6);
        let t = kt.reconstruct();
        let opts = MrcpdOptions {
            split: SplitChoice::Given(ModeSplit::parse("1|2,3|4").unwrap()),
            ..Default::default()
        };
        let res = mrcpd_decompose(&t, 2, &opts).unwrap();
        assert!(res.bound.holds);
        assert!(res.bound.slack() > 0.0);
    }

    #[test]
    fn bad_krproj_still_bounded() {
        let t = truth(&[4, 3, 3, 4], 3, 7).reconstruct();
        let opts = MrcpdOptions::<f64> {
            split: SplitChoice::Given(ModeSplit::parse("1|2,3|4").unwrap()),
            ..Default::default()
        };
        let res = mrcpd_decompose(&t, 3, &opts).unwrap();
        // perturb the estimate: the inequality must survive with a larger eps
        let mut fs = res.ktensor.factors().to_vec();
        fs[1].mapv_inplace(|x| x + 0.1);
        let est = KTensor::new(fs, res.ktensor.weights().clone()).unwrap().normalize();
        let rep = verify_error_bound(&t, &est, res.bound.fit3, res.bound.eps_k).unwrap();
        assert!(rep.final_err > res.bound.final_err);
    }

    #[test]
    fn rejects_low_order_and_bad_split() {
        let t = truth(&[3, 3, 3], 2, 8).reconstruct();
        assert!(mrcpd_decompose(&t, 2, &MrcpdOptions::default()).is_err());
        let t4 = truth(&[3, 3, 3, 3], 2, 8).reconstruct();
        let opts = MrcpdOptions {
            split: SplitChoice::Given(ModeSplit::parse("1,2|3,4").unwrap()),
            ..Default::default()
        };
        assert!(mrcpd_decompose(&t4, 2, &opts).is_err());
        let opts = MrcpdOptions {
            solver_name: "nope".into(),
            ..Default::default()
        };
        assert!(matches!(
            mrcpd_decompose(&t4, 2, &opts),
            Err(CpdError::SolverNotRegistered(_))
        ));
    }

    #[test]
    fn given_init_is_merged_and_compressed() {
        let kt = truth(&[5, 4, 6, 3], 3, 9);
        let t = kt.reconstruct();
        for compression in [Compression::None, Compression::Svd { mode: 2 }] {
            let opts = MrcpdOptions {
                split: SplitChoice::Given(ModeSplit::parse("1|2|3,4").unwrap()),
                compression,
                solver: SolverOptions {
                    init: Init::Given(kt.clone()),
                    ..Default::default()
                },
                ..Default::default()
            };
            let res = mrcpd_decompose(&t, 3, &opts).unwrap();
            assert!(res.report.iterations <= 3, "{compression:?}: {}", res.report.iterations);
            assert!(res.report.final_fit > 1.0 - 1e-9);
        }
        let merged = merge_ktensor(&kt, &ModeSplit::parse("1|2|3,4").unwrap()).unwrap();
        let direct = reduce_modes(&t, &ModeSplit::parse("1|2|3,4").unwrap()).unwrap();
        let diff = direct.sub(&merged.reconstruct()).unwrap().frobenius_norm();
        assert!(diff < 1e-12 * direct.frobenius_norm());
    }
}
