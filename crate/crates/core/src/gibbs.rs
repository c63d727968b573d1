//! MCMC engines: prior-partition Gibbs chains driven by the prediction
//! rule, and the generalized Polya-urn sampler for the Gaussian
//! count-mixture model.
//!
//! One chain owns its RNG and state and runs sequentially; separate chains
//! share nothing. Assignment sweeps remove elements one at a time, in a
//! freshly shuffled order each sweep, and reassign them from the
//! prediction rule (prior chains) or the prediction rule times the
//! collapsed Gaussian marginal (mixture chains). Cluster labels are
//! compacted immediately when a cluster empties, preserving the
//! order-of-appearance canonical form.

use crate::dist::{
    rate_factor_original, rate_factor_reparameterized, ModelParams, Parameterization,
    DISCOUNT_LIMIT_EPS,
};
use crate::eppf::{log_ecpf, Partition};
use crate::{Error, Result};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Beta, Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

/// Gamma prior shape/rate on the mass parameter.
const MASS_PRIOR_SHAPE: f64 = 1.0;
const MASS_PRIOR_RATE: f64 = 1.0;
/// Beta prior on the probability parameter in the zero-discount limit.
const PROB_PRIOR_A: f64 = 0.01;
const PROB_PRIOR_B: f64 = 0.01;
/// Gamma prior on the component precision.
const PREC_PRIOR_SHAPE: f64 = 0.001;
const PREC_PRIOR_RATE: f64 = 0.001;
/// The base mean has prior N(0, 1000 I); its precision has Gamma(1e-3, 1e3).
const BASE_MEAN_PRIOR_PREC: f64 = 1e-3;
const BASE_PREC_PRIOR_SHAPE: f64 = 1e-3;
const BASE_PREC_PRIOR_RATE: f64 = 1e-3;

/// Which conditional family drives the chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    /// Raw-scale process: new-cluster weight γ0 p^{−a}.
    Gnbp,
    /// Unit-scale process: new-cluster weight h0 (1−p)^{−a}.
    ReparamGnbp,
    /// Unit-scale process with the auxiliary-variable p-update of the
    /// normalized random measure; requires a >= 0.
    NrmiAux,
}

impl Variant {
    pub fn parameterization(self) -> Parameterization {
        match self {
            Variant::Gnbp => Parameterization::Original,
            Variant::ReparamGnbp | Variant::NrmiAux => Parameterization::Reparameterized,
        }
    }
}

/// Whether a scalar model parameter is held fixed or resampled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ParamMode {
    Fixed(f64),
    Learn,
}

impl ParamMode {
    fn initial(self, default: f64) -> f64 {
        match self {
            ParamMode::Fixed(v) => v,
            ParamMode::Learn => default,
        }
    }

    fn learned(self) -> bool {
        matches!(self, ParamMode::Learn)
    }
}

/// Component-likelihood hyperparameters: resampled under noninformative
/// priors, or pinned (used by the small-instance oracles).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum HyperMode {
    Learn,
    Fixed {
        precision: f64,
        base_mean: Vec<f64>,
        base_precision: f64,
    },
}

/// Full configuration of one MCMC run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub grid_points: usize,
    pub variant: Variant,
    pub mass: ParamMode,
    pub discount: ParamMode,
    pub prob: ParamMode,
    pub hypers: HyperMode,
    /// When set (univariate data only), the predictive density is averaged
    /// over recorded states on this grid.
    pub density_grid: Option<Vec<f64>>,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            iterations: 15_000,
            burn_in: 5_000,
            seed: 0,
            grid_points: 9_999,
            variant: Variant::Gnbp,
            mass: ParamMode::Learn,
            discount: ParamMode::Learn,
            prob: ParamMode::Learn,
            hypers: HyperMode::Learn,
            density_grid: None,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.burn_in >= self.iterations {
            return Err(Error::InvalidParameter(format!(
                "burn-in {} must be smaller than iterations {}",
                self.burn_in, self.iterations
            )));
        }
        if self.grid_points < 10 {
            return Err(Error::InvalidParameter(format!(
                "grid must have at least 10 points, got {}",
                self.grid_points
            )));
        }
        if self.variant == Variant::NrmiAux {
            if let ParamMode::Fixed(a) = self.discount {
                if a < 0.0 {
                    return Err(Error::InvalidParameter(format!(
                        "a negative discount ({a}) is not allowed under the auxiliary-variable variant"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Mutable partition bookkeeping: per-element labels plus per-cluster
/// member lists. Counts are the list lengths; any float statistic is
/// recomputed from the lists, so a from-scratch check reproduces the
/// bookkeeping exactly.
#[derive(Debug, Clone)]
pub(crate) struct UrnState {
    assignments: Vec<usize>,
    members: Vec<Vec<usize>>,
}

const DETACHED: usize = usize::MAX;

impl UrnState {
    fn singletons(m: usize) -> Self {
        Self {
            assignments: (0..m).collect(),
            members: (0..m).map(|i| vec![i]).collect(),
        }
    }

    fn from_partition(part: &Partition) -> Self {
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); part.cluster_count()];
        for (i, &k) in part.assignments().iter().enumerate() {
            members[k].push(i);
        }
        Self {
            assignments: part.assignments().to_vec(),
            members,
        }
    }

    fn to_partition(&self) -> Partition {
        Partition::from_assignments(&self.assignments)
    }

    fn m(&self) -> usize {
        self.assignments.len()
    }

    fn l(&self) -> usize {
        self.members.len()
    }

    /// Removes element i from its cluster; if the cluster empties it is
    /// deleted, labels above it shift down, and its old label is returned.
    fn detach(&mut self, i: usize) -> Option<usize> {
        let c = self.assignments[i];
        let pos = self.members[c].iter().position(|&e| e == i).unwrap();
        self.members[c].swap_remove(pos);
        self.assignments[i] = DETACHED;
        if self.members[c].is_empty() {
            self.members.remove(c);
            for label in &mut self.assignments {
                if *label != DETACHED && *label > c {
                    *label -= 1;
                }
            }
            Some(c)
        } else {
            None
        }
    }

    /// Puts element i into cluster k; k == l opens a new cluster.
    fn attach(&mut self, i: usize, k: usize) {
        if k == self.members.len() {
            self.members.push(Vec::new());
        }
        self.members[k].push(i);
        self.assignments[i] = k;
    }

    /// Rebuilds member lists from the assignments and compares.
    fn is_consistent(&self) -> bool {
        let mut rebuilt: Vec<Vec<usize>> = vec![Vec::new(); self.members.len()];
        for (i, &k) in self.assignments.iter().enumerate() {
            if k == DETACHED || k >= rebuilt.len() {
                return false;
            }
            rebuilt[k].push(i);
        }
        rebuilt.iter().zip(self.members.iter()).all(|(a, b)| {
            let mut b = b.clone();
            b.sort_unstable();
            a == &b
        }) && self.members.iter().all(|list| !list.is_empty())
    }
}

fn sample_categorical<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (k, &w) in weights.iter().enumerate() {
        u -= w;
        if u <= 0.0 {
            return k;
        }
    }
    weights.len() - 1
}

fn sample_categorical_log<R: Rng + ?Sized>(log_weights: &[f64], rng: &mut R) -> usize {
    let max = log_weights
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = log_weights.iter().map(|&w| (w - max).exp()).collect();
    sample_categorical(&weights, rng)
}

fn sweep_prior_urn<R: Rng + ?Sized>(
    urn: &mut UrnState,
    params: &ModelParams,
    order: &mut Vec<usize>,
    weights: &mut Vec<f64>,
    rng: &mut R,
) {
    let a = params.discount();
    let new_weight = params.new_cluster_weight();
    order.clear();
    order.extend(0..urn.m());
    order.shuffle(rng);
    for idx in 0..order.len() {
        let i = order[idx];
        urn.detach(i);
        weights.clear();
        weights.extend(urn.members.iter().map(|list| list.len() as f64 - a));
        weights.push(new_weight);
        let k = sample_categorical(weights, rng);
        urn.attach(i, k);
    }
}

/// One full prediction-rule Gibbs sweep over a prior partition: every
/// element is removed and immediately reassigned with weights (n_k − a)
/// for occupied clusters and γ0 p^{−a} (or h0 (1−p)^{−a}) for a new one.
pub fn prior_partition_sweep<R: Rng + ?Sized>(
    part: &Partition,
    params: &ModelParams,
    rng: &mut R,
) -> Partition {
    let mut urn = UrnState::from_partition(part);
    let mut order = Vec::new();
    let mut weights = Vec::new();
    sweep_prior_urn(&mut urn, params, &mut order, &mut weights, rng);
    urn.to_partition()
}

/// Cluster count among the first j elements of the assignment vector.
pub fn subsample_cluster_counts(part: &Partition, j: usize) -> Result<usize> {
    if j == 0 || j > part.len() {
        return Err(Error::InvalidParameter(format!(
            "subsample size must lie in 1..={}, got {j}",
            part.len()
        )));
    }
    let mut seen = vec![false; part.cluster_count()];
    let mut count = 0;
    for &k in &part.assignments()[..j] {
        if !seen[k] {
            seen[k] = true;
            count += 1;
        }
    }
    Ok(count)
}

/// Per-sweep record of a prior-partition chain.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PriorRecord {
    pub sweep: usize,
    pub cluster_count: usize,
    /// Cluster sizes in ascending order.
    pub sizes: Vec<usize>,
    /// Cluster count among the first j elements, when requested.
    pub subsample_count: Option<usize>,
}

/// Runs a prior-partition Gibbs chain of `sweeps` full sweeps at fixed
/// parameters, recording everything after `burn_in`.
pub fn run_prior_chain(
    m: usize,
    params: &ModelParams,
    sweeps: usize,
    burn_in: usize,
    subsample_j: Option<usize>,
    seed: u64,
) -> Result<Vec<PriorRecord>> {
    if m == 0 {
        return Err(Error::InvalidParameter("m must be >= 1".into()));
    }
    if burn_in >= sweeps {
        return Err(Error::InvalidParameter(format!(
            "burn-in {burn_in} must be smaller than sweeps {sweeps}"
        )));
    }
    if let Some(j) = subsample_j {
        if j == 0 || j > m {
            return Err(Error::InvalidParameter(format!(
                "subsample size must lie in 1..={m}, got {j}"
            )));
        }
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut urn = UrnState::singletons(m);
    let mut order = Vec::new();
    let mut weights = Vec::new();
    let mut records = Vec::with_capacity(sweeps - burn_in);
    for sweep in 0..sweeps {
        sweep_prior_urn(&mut urn, params, &mut order, &mut weights, &mut rng);
        if sweep >= burn_in {
            let mut sizes: Vec<usize> = urn.members.iter().map(Vec::len).collect();
            sizes.sort_unstable();
            let subsample_count = match subsample_j {
                Some(j) => Some(subsample_cluster_counts(&urn.to_partition(), j)?),
                None => None,
            };
            records.push(PriorRecord {
                sweep,
                cluster_count: urn.l(),
                sizes,
                subsample_count,
            });
        }
    }
    Ok(records)
}

/// Full state of the Gaussian count-mixture sampler.
#[derive(Debug, Clone)]
pub struct MixtureState {
    pub(crate) urn: UrnState,
    /// One mean vector per occupied cluster.
    pub atoms: Vec<Vec<f64>>,
    /// Isotropic component precision φ.
    pub precision: f64,
    pub base_mean: Vec<f64>,
    /// Precision φ0 of the base distribution.
    pub base_precision: f64,
    pub params: ModelParams,
}

impl MixtureState {
    /// Starts from the all-singletons partition with atoms drawn from
    /// their conjugate conditionals. The overdispersed start matters when
    /// the discount is learned: from a one-cluster state the discount
    /// conditional favors arbitrarily negative values, where opening new
    /// clusters has vanishing probability.
    pub fn init<R: Rng + ?Sized>(
        data: &[Vec<f64>],
        params: ModelParams,
        precision: f64,
        base_mean: Vec<f64>,
        base_precision: f64,
        rng: &mut R,
    ) -> Result<Self> {
        check_data(data)?;
        if base_mean.len() != data[0].len() {
            return Err(Error::Data(format!(
                "base mean dimension {} != data dimension {}",
                base_mean.len(),
                data[0].len()
            )));
        }
        if precision <= 0.0 || base_precision <= 0.0 {
            return Err(Error::InvalidParameter(
                "precisions must be positive".into(),
            ));
        }
        let mut state = Self {
            urn: UrnState::singletons(data.len()),
            atoms: Vec::new(),
            precision,
            base_mean,
            base_precision,
            params,
        };
        update_atoms(&mut state, data, rng);
        Ok(state)
    }

    pub fn partition(&self) -> Partition {
        self.urn.to_partition()
    }

    pub fn cluster_count(&self) -> usize {
        self.urn.l()
    }

    pub fn sample_size(&self) -> usize {
        self.urn.m()
    }

    /// Cluster sizes in label order.
    pub fn cluster_sizes(&self) -> Vec<usize> {
        self.urn.members.iter().map(Vec::len).collect()
    }

    /// Conjugate posterior (mean, precision) of cluster k's atom given its
    /// current members: precision φ0 + n_k φ, mean
    /// (φ0 μ0 + φ Σ x_i)/(φ0 + n_k φ).
    pub fn cluster_posterior(&self, data: &[Vec<f64>], k: usize) -> (Vec<f64>, f64) {
        let members = &self.urn.members[k];
        let post_prec = self.base_precision + members.len() as f64 * self.precision;
        let dim = self.base_mean.len();
        let mut mean = vec![0.0; dim];
        for &i in members {
            for d in 0..dim {
                mean[d] += data[i][d];
            }
        }
        for d in 0..dim {
            mean[d] =
                (self.base_precision * self.base_mean[d] + self.precision * mean[d]) / post_prec;
        }
        (mean, post_prec)
    }

    /// Checks bookkeeping against a from-scratch reconstruction.
    pub fn is_consistent(&self) -> bool {
        self.urn.is_consistent() && self.atoms.len() == self.urn.l()
    }
}

fn check_data(data: &[Vec<f64>]) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Data("empty dataset".into()));
    }
    let dim = data[0].len();
    if dim == 0 {
        return Err(Error::Data("zero-dimensional data".into()));
    }
    for (i, row) in data.iter().enumerate() {
        if row.len() != dim {
            return Err(Error::Data(format!(
                "row {i} has dimension {} != {dim}",
                row.len()
            )));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite value in row {i}")));
        }
    }
    Ok(())
}

fn log_normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * ((2.0 * std::f64::consts::PI * var).ln() + d * d / var)
}

/// One collapsed assignment sweep: every element is reassigned, in a fresh
/// random order, with weights (n_k − a) times the Gaussian marginal of the
/// cluster with its atom integrated out, or the new-cluster weight times
/// the base-convolved marginal.
pub fn assign_sweep<R: Rng + ?Sized>(
    state: &mut MixtureState,
    data: &[Vec<f64>],
    rng: &mut R,
) -> Result<()> {
    check_data(data)?;
    let m = state.urn.m();
    if data.len() != m {
        return Err(Error::Data(format!(
            "dataset has {} rows, state tracks {m}",
            data.len()
        )));
    }
    let dim = state.base_mean.len();
    let a = state.params.discount();
    let new_weight = state.params.new_cluster_weight();
    let phi = state.precision;
    let phi0 = state.base_precision;

    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(rng);
    let mut log_weights: Vec<f64> = Vec::new();
    for &i in &order {
        if let Some(dead) = state.urn.detach(i) {
            state.atoms.remove(dead);
        }
        let x = &data[i];
        log_weights.clear();
        for members in &state.urn.members {
            let n_k = members.len() as f64;
            let post_prec = phi0 + n_k * phi;
            let var = 1.0 / phi + 1.0 / post_prec;
            let mut lw = (n_k - a).ln();
            for d in 0..dim {
                let mut sum = 0.0;
                for &j in members {
                    sum += data[j][d];
                }
                let mean = (phi0 * state.base_mean[d] + phi * sum) / post_prec;
                lw += log_normal_pdf(x[d], mean, var);
            }
            log_weights.push(lw);
        }
        let new_var = 1.0 / phi0 + 1.0 / phi;
        let mut lw = new_weight.ln();
        for d in 0..dim {
            lw += log_normal_pdf(x[d], state.base_mean[d], new_var);
        }
        log_weights.push(lw);

        let k = sample_categorical_log(&log_weights, rng);
        let opened = k == state.urn.l();
        state.urn.attach(i, k);
        if opened {
            let (mean, post_prec) = state.cluster_posterior(data, k);
            let sd = post_prec.sqrt().recip();
            let atom = mean
                .iter()
                .map(|&mu| Normal::new(mu, sd).unwrap().sample(rng))
                .collect();
            state.atoms.push(atom);
        }
    }
    Ok(())
}

/// Redraws every occupied atom from its conjugate Gaussian conditional.
pub fn update_atoms<R: Rng + ?Sized>(state: &mut MixtureState, data: &[Vec<f64>], rng: &mut R) {
    let l = state.urn.l();
    let mut atoms = Vec::with_capacity(l);
    for k in 0..l {
        let (mean, post_prec) = state.cluster_posterior(data, k);
        let sd = post_prec.sqrt().recip();
        atoms.push(
            mean.iter()
                .map(|&mu| Normal::new(mu, sd).unwrap().sample(rng))
                .collect(),
        );
    }
    state.atoms = atoms;
}

/// Redraws φ, μ0 and φ0 from their conditionals under the noninformative
/// priors of the experiment protocol.
pub fn update_hypers<R: Rng + ?Sized>(state: &mut MixtureState, data: &[Vec<f64>], rng: &mut R) {
    let dim = state.base_mean.len();
    let m = state.urn.m() as f64;
    let l = state.urn.l() as f64;

    let mut sse = 0.0;
    for (k, members) in state.urn.members.iter().enumerate() {
        for &i in members {
            for d in 0..dim {
                let diff = data[i][d] - state.atoms[k][d];
                sse += diff * diff;
            }
        }
    }
    let shape = PREC_PRIOR_SHAPE + m * dim as f64 / 2.0;
    let rate = PREC_PRIOR_RATE + sse / 2.0;
    state.precision = Gamma::new(shape, 1.0 / rate).unwrap().sample(rng);

    let post_prec = BASE_MEAN_PRIOR_PREC + l * state.base_precision;
    let sd = post_prec.sqrt().recip();
    for d in 0..dim {
        let sum: f64 = state.atoms.iter().map(|atom| atom[d]).sum();
        let mean = state.base_precision * sum / post_prec;
        state.base_mean[d] = Normal::new(mean, sd).unwrap().sample(rng);
    }

    let mut sse0 = 0.0;
    for atom in &state.atoms {
        for d in 0..dim {
            let diff = atom[d] - state.base_mean[d];
            sse0 += diff * diff;
        }
    }
    let shape0 = BASE_PREC_PRIOR_SHAPE + l * dim as f64 / 2.0;
    let rate0 = BASE_PREC_PRIOR_RATE + sse0 / 2.0;
    state.base_precision = Gamma::new(shape0, 1.0 / rate0).unwrap().sample(rng);
}

/// Gibbs update of the mass from its conjugate gamma conditional
/// Gamma(e0 + l, 1/(f0 + rate-factor)); the rate factor degenerates to
/// −ln(1−p) as a → 0.
pub fn update_mass<R: Rng + ?Sized>(state: &mut MixtureState, rng: &mut R) {
    let a = state.params.discount();
    let p = state.params.prob();
    let factor = match state.params.parameterization() {
        Parameterization::Original => rate_factor_original(a, p),
        Parameterization::Reparameterized => rate_factor_reparameterized(a, p),
    };
    let shape = MASS_PRIOR_SHAPE + state.urn.l() as f64;
    let rate = (MASS_PRIOR_RATE + factor).min(1e300);
    let mass = Gamma::new(shape, 1.0 / rate).unwrap().sample(rng);
    state.params = state
        .params
        .with_mass(mass.max(f64::MIN_POSITIVE))
        .expect("gamma draw is positive");
}

/// The discount grid: a = 2 − 1/ã over ã = i/(G+1), i = 1..=G, so that
/// 9999 points reproduce ã = 0.0001, 0.0002, .., 0.9999.
pub fn discount_grid(grid_points: usize) -> Vec<f64> {
    let denom = (grid_points + 1) as f64;
    (1..=grid_points)
        .map(|i| 2.0 - denom / i as f64)
        .collect()
}

/// The probability grid p = i/(G+1), i = 1..=G.
pub fn prob_grid(grid_points: usize) -> Vec<f64> {
    let denom = (grid_points + 1) as f64;
    (1..=grid_points).map(|i| i as f64 / denom).collect()
}

/// Log of the joint ECPF as a function of the discount, up to additive
/// constants, for a partition summarized by (m, size histogram).
fn log_discount_conditional(
    parameterization: Parameterization,
    mass: f64,
    p: f64,
    a: f64,
    m: usize,
    size_counts: &[(usize, usize)],
) -> f64 {
    let l: usize = size_counts.iter().map(|&(_, c)| c).sum();
    let lf = l as f64;
    let mut lw = match parameterization {
        Parameterization::Original => {
            -mass * rate_factor_original(a, p) + lf * mass.ln() + (m as f64 - a * lf) * p.ln()
        }
        Parameterization::Reparameterized => {
            -mass * rate_factor_reparameterized(a, p) + lf * mass.ln() + m as f64 * p.ln()
                - a * lf * (1.0 - p).ln()
        }
    };
    lw -= lf * ln_gamma(1.0 - a);
    for &(n, c) in size_counts {
        lw += c as f64 * ln_gamma(n as f64 - a);
    }
    lw
}

/// Griddy-Gibbs update of the discount over a uniform prior on
/// ã = 1/(1 + (1−a)). Grids with fewer than two points leave the discount
/// untouched. Under the auxiliary-variable variant, negative candidates
/// carry zero posterior mass.
pub fn update_discount<R: Rng + ?Sized>(
    state: &mut MixtureState,
    grid_points: usize,
    variant: Variant,
    rng: &mut R,
) {
    if grid_points < 2 {
        return;
    }
    let mut size_counts: Vec<(usize, usize)> = Vec::new();
    for members in &state.urn.members {
        let n = members.len();
        match size_counts.iter_mut().find(|(s, _)| *s == n) {
            Some((_, c)) => *c += 1,
            None => size_counts.push((n, 1)),
        }
    }
    let m = state.urn.m();
    let p = state.params.prob();
    let mass = state.params.mass();
    let parameterization = state.params.parameterization();
    let grid = discount_grid(grid_points);
    let log_weights: Vec<f64> = grid
        .iter()
        .map(|&a| {
            if variant == Variant::NrmiAux && a < 0.0 {
                f64::NEG_INFINITY
            } else {
                log_discount_conditional(parameterization, mass, p, a, m, &size_counts)
            }
        })
        .collect();
    let idx = sample_categorical_log(&log_weights, rng);
    state.params = state
        .params
        .with_discount(grid[idx])
        .expect("grid discount is < 1");
}

/// Log of the unnormalized p-conditional for each variant at a != 0.
pub fn log_prob_conditional(
    variant: Variant,
    mass: f64,
    a: f64,
    p: f64,
    m: usize,
    l: usize,
) -> f64 {
    let mf = m as f64;
    let lf = l as f64;
    match variant {
        Variant::Gnbp => -mass * rate_factor_original(a, p) + (mf - a * lf) * p.ln(),
        Variant::ReparamGnbp => {
            -mass * rate_factor_reparameterized(a, p) + mf * p.ln() - a * lf * (1.0 - p).ln()
        }
        Variant::NrmiAux => {
            -mass * rate_factor_reparameterized(a, p)
                + (mf - 1.0) * p.ln()
                + (1.0 - a * lf) * (1.0 - p).ln()
        }
    }
}

/// Per-discount cache of the probability grid's rate factors; rebuilt only
/// when the discount or grid moves.
struct ProbGridCache {
    grid_points: usize,
    discount: f64,
    original_scale: bool,
    grid: Vec<f64>,
    log_p: Vec<f64>,
    log_1mp: Vec<f64>,
    rate: Vec<f64>,
}

impl ProbGridCache {
    fn new() -> Self {
        Self {
            grid_points: 0,
            discount: f64::NAN,
            original_scale: true,
            grid: Vec::new(),
            log_p: Vec::new(),
            log_1mp: Vec::new(),
            rate: Vec::new(),
        }
    }

    fn ensure(&mut self, grid_points: usize, a: f64, variant: Variant) {
        if self.grid_points != grid_points {
            self.grid = prob_grid(grid_points);
            self.log_p = self.grid.iter().map(|&p| p.ln()).collect();
            self.log_1mp = self.grid.iter().map(|&p| (1.0 - p).ln()).collect();
            self.grid_points = grid_points;
            self.discount = f64::NAN;
        }
        let want_original = variant == Variant::Gnbp;
        if self.discount.to_bits() != a.to_bits() || self.original_scale != want_original {
            self.rate = self
                .grid
                .iter()
                .map(|&p| {
                    if want_original {
                        rate_factor_original(a, p)
                    } else {
                        rate_factor_reparameterized(a, p)
                    }
                })
                .collect();
            self.discount = a;
            self.original_scale = want_original;
        }
    }
}

fn update_prob_cached<R: Rng + ?Sized>(
    state: &mut MixtureState,
    cache: &mut ProbGridCache,
    grid_points: usize,
    variant: Variant,
    rng: &mut R,
) -> Result<()> {
    let a = state.params.discount();
    let m = state.urn.m() as f64;
    let l = state.urn.l() as f64;
    let mass = state.params.mass();
    if a.abs() < DISCOUNT_LIMIT_EPS {
        let (alpha, beta) = match variant {
            Variant::Gnbp | Variant::ReparamGnbp => (PROB_PRIOR_A + m, PROB_PRIOR_B + mass),
            Variant::NrmiAux => (m, mass + 2.0),
        };
        let p = Beta::new(alpha, beta)
            .map_err(|e| Error::InvalidParameter(format!("beta({alpha}, {beta}): {e}")))?
            .sample(rng);
        state.params = state
            .params
            .with_prob(p.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON))?;
        return Ok(());
    }
    if variant == Variant::NrmiAux && a < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "a negative discount ({a}) is not allowed under the auxiliary-variable variant"
        )));
    }
    cache.ensure(grid_points, a, variant);
    let n = cache.grid.len();
    let mut log_weights = Vec::with_capacity(n);
    match variant {
        Variant::Gnbp => {
            for i in 0..n {
                log_weights.push(-mass * cache.rate[i] + (m - a * l) * cache.log_p[i]);
            }
        }
        Variant::ReparamGnbp => {
            for i in 0..n {
                log_weights
                    .push(-mass * cache.rate[i] + m * cache.log_p[i] - a * l * cache.log_1mp[i]);
            }
        }
        Variant::NrmiAux => {
            for i in 0..n {
                log_weights.push(
                    -mass * cache.rate[i]
                        + (m - 1.0) * cache.log_p[i]
                        + (1.0 - a * l) * cache.log_1mp[i],
                );
            }
        }
    }
    let idx = sample_categorical_log(&log_weights, rng);
    state.params = state.params.with_prob(cache.grid[idx])?;
    Ok(())
}

/// Update of the probability parameter: an exact beta draw in the
/// zero-discount limit, otherwise griddy-Gibbs over `grid_points` points.
pub fn update_prob<R: Rng + ?Sized>(
    state: &mut MixtureState,
    grid_points: usize,
    variant: Variant,
    rng: &mut R,
) -> Result<()> {
    let mut cache = ProbGridCache::new();
    update_prob_cached(state, &mut cache, grid_points, variant, rng)
}

/// One record per post-burn-in iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub cluster_count: usize,
    /// Cluster sizes in ascending order.
    pub sizes: Vec<usize>,
    pub unit_clusters: usize,
    pub mass: f64,
    pub discount: f64,
    pub prob: f64,
    pub precision: f64,
    pub base_mean: Vec<f64>,
    pub base_precision: f64,
    pub log_ecpf: f64,
}

/// Posterior records of one chain, with the generating configuration
/// embedded for reproducibility.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trace {
    pub config: ChainConfig,
    pub dim: usize,
    pub sample_size: usize,
    pub records: Vec<TraceRecord>,
    pub density_grid: Option<Vec<f64>>,
    pub predictive_density: Option<Vec<f64>>,
}

fn init_hypers(data: &[Vec<f64>]) -> (f64, Vec<f64>, f64) {
    let dim = data[0].len();
    let m = data.len() as f64;
    let mut mean = vec![0.0; dim];
    for row in data {
        for d in 0..dim {
            mean[d] += row[d];
        }
    }
    for v in &mut mean {
        *v /= m;
    }
    let mut var = 0.0;
    for row in data {
        for d in 0..dim {
            let diff = row[d] - mean[d];
            var += diff * diff;
        }
    }
    var /= (m * dim as f64).max(1.0);
    let precision = 1.0 / var.max(1e-9);
    (precision, mean, precision)
}

/// Runs the full generalized Polya-urn sampler. Per iteration: shuffle the
/// element order, reassign every element, redraw atoms, then the learned
/// hyperparameters, mass, discount and probability, in that order. Fully
/// deterministic given the seed.
pub fn run_chain(data: &[Vec<f64>], config: &ChainConfig) -> Result<Trace> {
    config.validate()?;
    check_data(data)?;
    let dim = data[0].len();
    if config.density_grid.is_some() && dim != 1 {
        return Err(Error::Data(
            "predictive density grids require univariate data".into(),
        ));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(config.seed);

    let params = ModelParams::new(
        config.mass.initial(1.0),
        config.discount.initial(0.0),
        config.prob.initial(0.5),
        config.variant.parameterization(),
    )?;
    let (precision, base_mean, base_precision) = match &config.hypers {
        HyperMode::Learn => init_hypers(data),
        HyperMode::Fixed {
            precision,
            base_mean,
            base_precision,
        } => (*precision, base_mean.clone(), *base_precision),
    };
    let mut state =
        MixtureState::init(data, params, precision, base_mean, base_precision, &mut rng)?;

    let mut prob_cache = ProbGridCache::new();
    let mut records = Vec::with_capacity(config.iterations - config.burn_in);
    let mut density_sum = config
        .density_grid
        .as_ref()
        .map(|grid| vec![0.0; grid.len()]);

    for iteration in 0..config.iterations {
        assign_sweep(&mut state, data, &mut rng)?;
        update_atoms(&mut state, data, &mut rng);
        if matches!(config.hypers, HyperMode::Learn) {
            update_hypers(&mut state, data, &mut rng);
        }
        if config.mass.learned() {
            update_mass(&mut state, &mut rng);
        }
        if config.discount.learned() {
            update_discount(&mut state, config.grid_points, config.variant, &mut rng);
        }
        if config.prob.learned() {
            update_prob_cached(
                &mut state,
                &mut prob_cache,
                config.grid_points,
                config.variant,
                &mut rng,
            )?;
        }
        if iteration >= config.burn_in {
            let mut sizes = state.cluster_sizes();
            sizes.sort_unstable();
            let unit_clusters = sizes.iter().filter(|&&n| n == 1).count();
            records.push(TraceRecord {
                iteration,
                cluster_count: state.cluster_count(),
                unit_clusters,
                sizes,
                mass: state.params.mass(),
                discount: state.params.discount(),
                prob: state.params.prob(),
                precision: state.precision,
                base_mean: state.base_mean.clone(),
                base_precision: state.base_precision,
                log_ecpf: log_ecpf(&state.partition(), &state.params),
            });
            if let (Some(grid), Some(sum)) = (&config.density_grid, density_sum.as_mut()) {
                accumulate_density(&state, grid, sum);
            }
        }
    }

    let predictive_density = density_sum.map(|sum| {
        let n = records.len() as f64;
        sum.into_iter().map(|v| v / n).collect()
    });
    Ok(Trace {
        config: config.clone(),
        dim,
        sample_size: data.len(),
        records,
        density_grid: config.density_grid.clone(),
        predictive_density,
    })
}

fn accumulate_density(state: &MixtureState, grid: &[f64], sum: &mut [f64]) {
    let a = state.params.discount();
    let new_weight = state.params.new_cluster_weight();
    let m = state.urn.m() as f64;
    let l = state.urn.l() as f64;
    let denom = m - a * l + new_weight;
    let comp_var = 1.0 / state.precision;
    let base_var = 1.0 / state.base_precision + comp_var;
    for (g, out) in grid.iter().zip(sum.iter_mut()) {
        let mut density = new_weight * log_normal_pdf(*g, state.base_mean[0], base_var).exp();
        for (members, atom) in state.urn.members.iter().zip(&state.atoms) {
            density += (members.len() as f64 - a) * log_normal_pdf(*g, atom[0], comp_var).exp();
        }
        *out += density / denom;
    }
}

/// Monte Carlo predictive density over recorded states: the
/// prediction-rule-weighted mixture of the sampled atoms plus the
/// base-convolved kernel for a new cluster. Univariate data only.
pub fn predictive_density(states: &[MixtureState], grid: &[f64]) -> Result<Vec<f64>> {
    if states.is_empty() {
        return Err(Error::EmptyTrace);
    }
    if states.iter().any(|s| s.base_mean.len() != 1) {
        return Err(Error::Data(
            "predictive density grids require univariate data".into(),
        ));
    }
    let mut sum = vec![0.0; grid.len()];
    for state in states {
        accumulate_density(state, grid, &mut sum);
    }
    let n = states.len() as f64;
    Ok(sum.into_iter().map(|v| v / n).collect())
}
