//! Iterative beamformer designs.
//!
//! - WSMSE: alternating minimization of the weighted sum MSE over MMSE
//!   receivers, MSE weights and transmit filters (perfect CSIT).
//! - Minorization: the interference terms of the WSR are replaced by their
//!   tangent at the current covariances `Q'`, which leaves one concave
//!   problem per user. Its maximizer is a set of dominant generalized
//!   eigenvectors of `(B_k, A_k + λ I)` with leakage-aware water-filling over
//!   the streams of each BS.
//! - Pathwise minorization: same iteration on the Massive EWSR limit, with the
//!   phase-averaged matrices `Ā_k`, `B̄_k`. It needs no channel realization.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use rand::Rng;

use crate::channel::{weighted_outer, ChannelRealization, Scenario};
use crate::numkern::{
    diag_re, hermitian_eig, inv_hpd, logdet_hpd, waterfill_bs, EigenPairs, HermitianMatrix, Stream,
    BISECTION_MAX_ITER, BISECTION_REL_TOL,
};
use crate::rate::{covariances, inverses, mse_matrix, objective, BeamformerSet, Csit};
use crate::{CMat, Error, Result, C64};

/// Default relative tolerance on the objective change.
pub const DEFAULT_TOL: f64 = 1e-8;
/// Default iteration cap.
pub const DEFAULT_MAX_ITER: usize = 500;
/// Consecutive small changes required to declare convergence.
const CONVERGED_STREAK: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Algorithm {
    Wsmse,
    MinorizeIcsit,
    MinorizePwcsit,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::Wsmse, Algorithm::MinorizeIcsit, Algorithm::MinorizePwcsit];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Wsmse => "wsmse",
            Algorithm::MinorizeIcsit => "minorize_icsit",
            Algorithm::MinorizePwcsit => "minorize_pwcsit",
        }
    }

    /// Stable numeric id, used for seed derivation.
    pub fn id(self) -> u64 {
        match self {
            Algorithm::Wsmse => 1,
            Algorithm::MinorizeIcsit => 2,
            Algorithm::MinorizePwcsit => 3,
        }
    }

    /// Whether the design needs the instantaneous channel.
    pub fn uses_icsit(self) -> bool {
        !matches!(self, Algorithm::MinorizePwcsit)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s.trim())
            .ok_or_else(|| Error::Config(format!("unknown algorithm `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitStrategy {
    /// Dominant right singular vectors of the serving channel (or of `D Ht^H`
    /// for pathwise designs).
    Matched,
    /// Complex Gaussian columns.
    Random,
}

/// Initial beamformers; every BS spends exactly its budget, split equally
/// over its users and their streams.
pub fn init_beamformers<R: Rng + ?Sized>(
    sc: &Scenario,
    strategy: InitStrategy,
    csit: Csit<'_>,
    rng: &mut R,
) -> Result<BeamformerSet> {
    let mut g = Vec::with_capacity(sc.num_users());
    for k in 0..sc.num_users() {
        let b = sc.serving[k];
        let (nt, d) = (sc.nt[b], sc.streams[k]);
        let mut dirs = match strategy {
            InitStrategy::Matched => {
                let surrogate = match csit {
                    Csit::Instantaneous(h) => h.get(k, b).clone(),
                    Csit::Pathwise => {
                        let link = sc.link(k, b);
                        link.d() * link.ht.adjoint()
                    }
                };
                let gram = HermitianMatrix::hermitize(surrogate.adjoint() * &surrogate);
                hermitian_eig(&gram).vectors.columns(0, d).into_owned()
            }
            InitStrategy::Random => {
                use rand_distr::StandardNormal;
                CMat::from_fn(nt, d, |_, _| {
                    let re: f64 = rng.sample(StandardNormal);
                    let im: f64 = rng.sample(StandardNormal);
                    C64::new(re, im)
                })
            }
        };
        let per_stream = sc.power[b] / (sc.users_of(b).len() * d) as f64;
        for mut col in dirs.column_iter_mut() {
            let n = col.norm();
            col *= C64::new(per_stream.sqrt() / n, 0.0);
        }
        g.push(dirs);
    }
    Ok(BeamformerSet::from_beams(g, sc.num_cells()))
}

/// Iterate of any of the three designs.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub beams: BeamformerSet,
    /// WSMSE receivers `F_k`.
    pub rx: Vec<CMat>,
    /// WSMSE weights `W_k = E_k^-1`.
    pub weights: Vec<CMat>,
    /// Minorization expansion point `Q'_k`.
    pub expansion: Vec<CMat>,
    pub iter: usize,
    pub objective_history: Vec<f64>,
}

impl OptimizerState {
    /// Starts from `beams`; an all-zero design is rejected because it is a
    /// stationary point of every update.
    pub fn new(sc: &Scenario, csit: Csit<'_>, beams: BeamformerSet) -> Result<Self> {
        beams.check(sc)?;
        if beams.g.iter().all(|g| g.norm() == 0.0) {
            return Err(Error::Validation("all-zero initial beamformers".into()));
        }
        let obj = objective(sc, csit, &beams)?;
        let expansion = (0..sc.num_users()).map(|k| beams.covariance(k)).collect();
        Ok(OptimizerState {
            beams,
            rx: Vec::new(),
            weights: Vec::new(),
            expansion,
            iter: 0,
            objective_history: vec![obj],
        })
    }

    pub fn objective(&self) -> f64 {
        *self.objective_history.last().expect("history is never empty")
    }
}

// ---------------------------------------------------------------------------
// WSMSE

/// Weighted sum MSE `Σ u_k (tr(W_k E_k) - ln det W_k) + Σ_c λ_c (Σ ||G_k||² - P_c)`.
pub fn wsmse_cost(
    sc: &Scenario,
    h: &ChannelRealization,
    beams: &BeamformerSet,
    rx: &[CMat],
    weights: &[CMat],
) -> Result<f64> {
    let mut total = 0.0;
    for k in 0..sc.num_users() {
        let e = mse_matrix(sc, h, beams, k, &rx[k]);
        let we = (&weights[k] * e).trace().re;
        total += sc.weights[k] * (we - logdet_hpd(&weights[k])?);
    }
    for c in 0..sc.num_cells() {
        total += beams.lambdas[c] * (beams.bs_power(sc, c) - sc.power[c]);
    }
    Ok(total)
}

/// MMSE receivers and the weights `W_k = E_k^-1` that minimize the WSMSE for fixed beams.
pub fn wsmse_receivers(sc: &Scenario, h: &ChannelRealization, beams: &BeamformerSet) -> Result<(Vec<CMat>, Vec<CMat>)> {
    let cov = crate::rate::rx_covariances(sc, h, beams)?;
    let mut rx = Vec::with_capacity(sc.num_users());
    let mut weights = Vec::with_capacity(sc.num_users());
    for k in 0..sc.num_users() {
        let hg = h.get(k, sc.serving[k]) * &beams.g[k];
        let f = crate::numkern::solve_hpd(&cov.r[k], &hg)?;
        let e = mse_matrix(sc, h, beams, k, &f);
        if e.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Numeric(format!("non-finite MSE for user {k}")));
        }
        weights.push(inv_hpd(&e)?);
        rx.push(f);
    }
    Ok((rx, weights))
}

/// Transmit filters minimizing the WSMSE for fixed receivers and weights, with
/// per-BS multipliers found by bisection on the power budget.
pub fn wsmse_transmit(
    sc: &Scenario,
    h: &ChannelRealization,
    rx: &[CMat],
    weights: &[CMat],
) -> Result<(Vec<CMat>, Vec<f64>)> {
    let kk = sc.num_users();
    let mut g: Vec<CMat> = (0..kk).map(|k| CMat::zeros(sc.nt[sc.serving[k]], sc.streams[k])).collect();
    let mut lambdas = vec![0.0; sc.num_cells()];
    for c in 0..sc.num_cells() {
        let nt = sc.nt[c];
        let mut m = CMat::zeros(nt, nt);
        for i in 0..kk {
            let t = h.get(i, c).adjoint() * &rx[i];
            m += &t * &weights[i] * t.adjoint() * C64::new(sc.weights[i], 0.0);
        }
        let eig = hermitian_eig(&HermitianMatrix::hermitize(m));
        let users = sc.users_of(c);
        // rhs_k = u_k H^H F_k W_k, rotated into the eigenbasis
        let rotated: Vec<CMat> = users
            .iter()
            .map(|&k| {
                let rhs = h.get(k, c).adjoint() * &rx[k] * &weights[k] * C64::new(sc.weights[k], 0.0);
                eig.vectors.adjoint() * rhs
            })
            .collect();
        let energy: Vec<f64> = (0..nt)
            .map(|j| rotated.iter().map(|z| z.row(j).norm_squared()).sum())
            .collect();
        let spec: Vec<f64> = eig.values.iter().map(|v| v.max(0.0)).collect();
        let emax = energy.iter().cloned().fold(0.0, f64::max);
        let power = |lambda: f64| -> f64 {
            spec.iter()
                .zip(&energy)
                .map(|(&s, &e)| if e <= 1e-300 { 0.0 } else { e / (s + lambda).powi(2) })
                .sum()
        };
        let lambda = if emax == 0.0 {
            0.0
        } else {
            bisect_budget(power, sc.power[c], 0.0)?
        };
        lambdas[c] = lambda;
        for (idx, &k) in users.iter().enumerate() {
            let scaled = CMat::from_fn(nt, rotated[idx].ncols(), |j, s| {
                let den = spec[j] + lambda;
                if energy[j] <= 1e-300 || den <= 0.0 {
                    C64::new(0.0, 0.0)
                } else {
                    rotated[idx][(j, s)] / den
                }
            });
            g[k] = &eig.vectors * scaled;
        }
    }
    Ok((g, lambdas))
}

/// Smallest `λ >= floor` with `power(λ) <= budget` (to the bisection
/// tolerance), for `power` non-increasing. Returns `floor` when it already fits.
fn bisect_budget(power: impl Fn(f64) -> f64, budget: f64, floor: f64) -> Result<f64> {
    let at_floor = power(floor);
    if at_floor.is_finite() && at_floor <= budget {
        return Ok(floor);
    }
    let mut lo = floor;
    let mut hi = floor.max(1.0);
    while power(hi) >= budget {
        lo = hi;
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(Error::Numeric("multiplier bracket overflow".into()));
        }
    }
    for _ in 0..BISECTION_MAX_ITER {
        let mid = if lo > 0.0 { (lo * hi).sqrt() } else { 0.5 * hi };
        let p = power(mid);
        if (p - budget).abs() <= BISECTION_REL_TOL * budget {
            return Ok(mid);
        }
        if p > budget {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    // Discontinuous power curve: stay on the feasible side.
    Ok(hi)
}

/// Root of `power(λ) = budget` for the minorization multiplier search, where
/// each evaluation of `power` costs a round of pencil solves.
///
/// Same bracket invariant and stopping rule as [`bisect_budget`], but the
/// bracket is grown from `guess` (the previous iterate's multiplier) and
/// shrunk by Illinois false-position steps in `ln λ`, with a geometric
/// bisection step whenever the interpolant leaves the bracket.
fn bracket_budget(mut power: impl FnMut(f64) -> f64, budget: f64, floor: f64, guess: f64) -> Result<f64> {
    let at_floor = power(floor);
    if at_floor.is_finite() && at_floor <= budget {
        return Ok(floor);
    }
    let fits = |p: f64| p <= budget;
    let start = if guess > floor { guess } else { floor.max(1.0) };
    let p0 = power(start);
    if (p0 - budget).abs() <= BISECTION_REL_TOL * budget {
        return Ok(start);
    }
    let (mut lo, mut plo, mut hi, mut phi);
    // Warm starts sit close to the root: grow the step geometrically from 1.25.
    let mut step: f64 = if guess > floor { 1.25 } else { 4.0 };
    if fits(p0) {
        hi = start;
        phi = p0;
        lo = floor;
        plo = at_floor;
        let mut x = start;
        for _ in 0..BISECTION_MAX_ITER {
            x /= step;
            step = (step * step).min(16.0);
            if x <= floor {
                break;
            }
            let p = power(x);
            if fits(p) {
                hi = x;
                phi = p;
            } else {
                lo = x;
                plo = p;
                break;
            }
        }
    } else {
        lo = start;
        plo = p0;
        hi = start * step;
        phi = power(hi);
        while !fits(phi) {
            lo = hi;
            plo = phi;
            step = (step * step).min(16.0);
            hi *= step;
            if !hi.is_finite() {
                return Err(Error::Numeric("multiplier bracket overflow".into()));
            }
            phi = power(hi);
        }
    }
    let target = budget.ln();
    let mut side = 0i8;
    for _ in 0..BISECTION_MAX_ITER {
        if hi - lo <= 1e-15 * hi {
            break;
        }
        let geo = if lo > 0.0 { (lo * hi).sqrt() } else { 0.5 * hi };
        let mut x = geo;
        if lo > 0.0 && plo.is_finite() && phi > 0.0 {
            let (t0, t1) = (lo.ln(), hi.ln());
            let (f0, f1) = (plo.ln() - target, phi.ln() - target);
            let t = t1 - f1 * (t1 - t0) / (f1 - f0);
            let cand = t.exp();
            if cand.is_finite() && cand > lo && cand < hi {
                x = cand;
            }
        }
        let p = power(x);
        if (p - budget).abs() <= BISECTION_REL_TOL * budget {
            return Ok(x);
        }
        if fits(p) {
            hi = x;
            phi = p;
            if side == 1 {
                // Illinois: damp the retained endpoint
                plo = budget * (plo / budget).sqrt();
            }
            side = 1;
        } else {
            lo = x;
            plo = p;
            if side == -1 {
                phi = budget * (phi / budget).sqrt();
            }
            side = -1;
        }
    }
    Ok(hi)
}

/// One WSMSE cycle: receivers, weights, then transmit filters.
pub fn wsmse_step(state: &OptimizerState, sc: &Scenario, h: &ChannelRealization) -> Result<OptimizerState> {
    let (rx, weights) = wsmse_receivers(sc, h, &state.beams)?;
    let (g, lambdas) = wsmse_transmit(sc, h, &rx, &weights)?;
    let mut beams = BeamformerSet::from_beams(g, sc.num_cells());
    beams.lambdas = lambdas;
    let obj = objective(sc, Csit::Instantaneous(h), &beams)?;
    let mut history = state.objective_history.clone();
    history.push(obj);
    Ok(OptimizerState {
        expansion: (0..sc.num_users()).map(|k| beams.covariance(k)).collect(),
        beams,
        rx,
        weights,
        iter: state.iter + 1,
        objective_history: history,
    })
}

// ---------------------------------------------------------------------------
// Minorization

/// Signal matrix `B_k` and linearized interference matrix `A_k` of one user.
#[derive(Debug, Clone)]
pub struct Minorizer {
    pub b: HermitianMatrix,
    pub a: HermitianMatrix,
    /// `Y` with `B = Y Y^H`.
    pub b_factor: CMat,
}

/// `B_k`, `A_k` at the given expansion point.
///
/// Perfect CSIT: `B_k = H_{k,b_k}^H Rbar_k^-1 H_{k,b_k}`,
/// `A_k = Σ_{i≠k} u_i H_{i,b_k}^H (Rbar_i^-1 - R_i^-1) H_{i,b_k}`.
/// Pathwise CSIT: every `H^H X H` becomes `Ht diag(Hr^H X Hr) D² Ht^H` on the
/// corresponding link, with the Massive-limit covariances.
pub fn minorizer_matrices(sc: &Scenario, csit: Csit<'_>, beams: &BeamformerSet) -> Result<Vec<Minorizer>> {
    let cov = covariances(sc, csit, beams)?;
    let r_inv = inverses(&cov.r)?;
    let rbar_inv = inverses(&cov.rbar)?;
    let kk = sc.num_users();
    let leak: Vec<CMat> = (0..kk).map(|i| &rbar_inv[i] - &r_inv[i]).collect();
    let project = |user: usize, bs: usize, x: &CMat| -> CMat {
        match csit {
            Csit::Instantaneous(h) => {
                let hm = h.get(user, bs);
                hm.adjoint() * x * hm
            }
            Csit::Pathwise => {
                let link = sc.link(user, bs);
                let rx_gain = diag_re(&(link.hr.adjoint() * x * &link.hr));
                let w: Vec<f64> = rx_gain.iter().zip(link.d2().iter()).map(|(g, a2)| g * a2).collect();
                weighted_outer(&link.ht, &w)
            }
        }
    };
    let mut out = Vec::with_capacity(kk);
    for k in 0..kk {
        let b = sc.serving[k];
        let nt = sc.nt[b];
        let b_factor = match csit {
            Csit::Instantaneous(h) => {
                // Rbar = L L^H  =>  B = (L^-1 H)^H (L^-1 H)
                let chol = cov.rbar[k]
                    .as_matrix()
                    .clone()
                    .cholesky()
                    .ok_or_else(|| Error::Numeric(format!("interference covariance of user {k} is not positive definite")))?;
                chol.l()
                    .solve_lower_triangular(h.get(k, b))
                    .ok_or_else(|| Error::Numeric("triangular solve failed".into()))?
                    .adjoint()
            }
            Csit::Pathwise => {
                let link = sc.link(k, b);
                let rx_gain = diag_re(&(link.hr.adjoint() * &rbar_inv[k] * &link.hr));
                let d2 = link.d2();
                let mut y = link.ht.clone();
                for (l, mut col) in y.column_iter_mut().enumerate() {
                    col *= C64::new((rx_gain[l].max(0.0) * d2[l]).sqrt(), 0.0);
                }
                y
            }
        };
        let bmat = &b_factor * b_factor.adjoint();
        let mut amat = CMat::zeros(nt, nt);
        for i in 0..kk {
            if i != k {
                amat += project(i, b, &leak[i]) * C64::new(sc.weights[i], 0.0);
            }
        }
        out.push(Minorizer {
            b: HermitianMatrix::hermitize(bmat),
            a: HermitianMatrix::hermitize(amat),
            b_factor,
        });
    }
    Ok(out)
}

/// Surrogate `Σ_k u_k ln det(I + G_k^H B_k G_k) - tr(G_k^H A_k G_k)` with
/// `B_k`, `A_k` frozen at the expansion point.
pub fn surrogate_value(sc: &Scenario, mats: &[Minorizer], beams: &BeamformerSet) -> Result<f64> {
    let mut total = 0.0;
    for (k, m) in mats.iter().enumerate() {
        let g = &beams.g[k];
        let d = g.ncols();
        let s = CMat::identity(d, d) + g.adjoint() * m.b.as_matrix() * g;
        total += sc.weights[k] * logdet_hpd(&HermitianMatrix::hermitize(s).into_inner())?;
        total -= (g.adjoint() * m.a.as_matrix() * g).trace().re;
    }
    Ok(total)
}

/// `∂/∂G_k^*` of the surrogate: `u_k B_k G_k (I + G_k^H B_k G_k)^-1 - A_k G_k`.
pub fn surrogate_gradient(sc: &Scenario, mats: &[Minorizer], beams: &BeamformerSet) -> Result<Vec<CMat>> {
    mats.iter()
        .enumerate()
        .map(|(k, m)| {
            let g = &beams.g[k];
            let d = g.ncols();
            let bg = m.b.as_matrix() * g;
            let s = HermitianMatrix::hermitize(CMat::identity(d, d) + g.adjoint() * &bg);
            let sinv = inv_hpd(&s)?;
            Ok(bg * sinv * C64::new(sc.weights[k], 0.0) - m.a.as_matrix() * g)
        })
        .collect()
}

/// Pencil `(B, A + λ I)` prepared for repeated solves over `λ`.
///
/// `A = U Λ U^H` and `B = Y Y^H` are factored once; for each `λ` the top
/// eigenpairs come from the small matrix `Z^H (Λ + λ)^-1 Z`, `Z = U^H Y`,
/// with `v = U (Λ + λ)^-1 Z x`.
struct PencilFamily {
    u: CMat,
    spec: DVector<f64>,
    z: CMat,
}

impl PencilFamily {
    fn new(m: &Minorizer) -> Self {
        let ea = hermitian_eig(&m.a);
        PencilFamily {
            z: ea.vectors.adjoint() * &m.b_factor,
            spec: ea.values.map(|v| v.max(0.0)),
            u: ea.vectors,
        }
    }

    fn is_pd_at(&self, lambda: f64) -> bool {
        let smax = self.spec.iter().cloned().fold(0.0, f64::max);
        self.spec.iter().all(|&s| s + lambda > 1e-13 * (smax + lambda).max(f64::MIN_POSITIVE))
    }

    /// Top-`d` generalized eigenvectors, expressed in the eigenbasis of `A`
    /// and unit-normalized, with `sigma1 = v^H B v` and `sigma2 = v^H A v`.
    /// Directions beyond the rank of `B` are zero with `sigma1 = 0`.
    fn solve(&self, lambda: f64, d: usize) -> (CMat, Vec<f64>, Vec<f64>) {
        let n = self.u.nrows();
        let r = self.z.ncols();
        let mut scaled_z = self.z.clone();
        for (j, mut row) in scaled_z.row_iter_mut().enumerate() {
            row /= C64::new(self.spec[j] + lambda, 0.0);
        }
        let small = HermitianMatrix::hermitize(self.z.adjoint() * &scaled_z);
        let eig: EigenPairs = hermitian_eig(&small);
        let mut w_all = CMat::zeros(n, d);
        let mut s1 = vec![0.0; d];
        let mut s2 = vec![0.0; d];
        for j in 0..d.min(r) {
            if eig.values[j] <= 0.0 {
                break;
            }
            let mut w = &scaled_z * eig.vectors.column(j);
            w /= C64::new(w.norm(), 0.0);
            // v = U w, so v^H B v = ||Z^H w||^2 and v^H A v = Σ spec_j |w_j|^2
            s1[j] = (self.z.adjoint() * &w).norm_squared();
            s2[j] = w.iter().zip(self.spec.iter()).map(|(x, s)| s * x.norm_sqr()).sum();
            w_all.set_column(j, &w);
        }
        (w_all, s1, s2)
    }

    fn directions(&self, w: &CMat) -> CMat {
        &self.u * w
    }
}

/// Per-BS joint search of `λ_c` and the directions/powers of its users.
fn allocate_bs(sc: &Scenario, c: usize, mats: &[Minorizer], guess: f64, out: &mut [CMat]) -> Result<f64> {
    let users = sc.users_of(c);
    let families: Vec<PencilFamily> = users.iter().map(|&k| PencilFamily::new(&mats[k])).collect();
    let evaluate = |lambda: f64| -> (Vec<CMat>, Vec<Stream>) {
        let mut dirs = Vec::with_capacity(users.len());
        let mut streams = Vec::new();
        for (idx, &k) in users.iter().enumerate() {
            let (v, s1, s2) = families[idx].solve(lambda, sc.streams[k]);
            for j in 0..s1.len() {
                streams.push(Stream {
                    u: sc.weights[k],
                    sigma1: s1[j],
                    sigma2: s2[j],
                });
            }
            dirs.push(v);
        }
        (dirs, streams)
    };
    let total = |lambda: f64| -> f64 {
        let (_, streams) = evaluate(lambda);
        let smax = streams.iter().map(|s| s.sigma1).fold(0.0, f64::max);
        streams
            .iter()
            .map(|s| {
                if smax > 0.0 && s.sigma1 > crate::numkern::NULL_GAIN_REL * smax {
                    (s.u / (s.sigma2 + lambda) - 1.0 / s.sigma1).max(0.0)
                } else {
                    0.0
                }
            })
            .sum()
    };

    let scale = users
        .iter()
        .map(|&k| (mats[k].a.trace_re() + mats[k].b.trace_re()) / sc.nt[c] as f64)
        .fold(0.0, f64::max);
    if scale <= 0.0 {
        for &k in &users {
            out[k] = CMat::zeros(sc.nt[c], sc.streams[k]);
        }
        return Ok(0.0);
    }
    let floor = if families.iter().all(|f| f.is_pd_at(0.0)) { 0.0 } else { 1e-12 * scale };
    let lambda = bracket_budget(total, sc.power[c], floor, guess)?;

    let (dirs, streams) = evaluate(lambda);
    let wf = waterfill_bs(&streams, sc.power[c])?;
    let mut offset = 0;
    for (idx, &k) in users.iter().enumerate() {
        let d = sc.streams[k];
        let mut g = families[idx].directions(&dirs[idx]);
        for (j, mut col) in g.column_iter_mut().enumerate() {
            col *= C64::new(wf.powers[offset + j].sqrt(), 0.0);
        }
        offset += d;
        out[k] = g;
    }
    Ok(wf.lambda)
}

fn minorize_update(sc: &Scenario, csit: Csit<'_>, beams: &BeamformerSet) -> Result<BeamformerSet> {
    let mats = minorizer_matrices(sc, csit, beams)?;
    let mut g: Vec<CMat> = beams.g.clone();
    let mut lambdas = vec![0.0; sc.num_cells()];
    for c in 0..sc.num_cells() {
        lambdas[c] = allocate_bs(sc, c, &mats, beams.lambdas[c], &mut g)?;
    }
    let mut next = BeamformerSet::from_beams(g, sc.num_cells());
    next.lambdas = lambdas;
    Ok(next)
}

fn minorize_step(state: &OptimizerState, sc: &Scenario, csit: Csit<'_>) -> Result<OptimizerState> {
    let beams = minorize_update(sc, csit, &state.beams)?;
    let obj = objective(sc, csit, &beams)?;
    let mut history = state.objective_history.clone();
    history.push(obj);
    Ok(OptimizerState {
        expansion: (0..sc.num_users()).map(|k| beams.covariance(k)).collect(),
        beams,
        rx: Vec::new(),
        weights: Vec::new(),
        iter: state.iter + 1,
        objective_history: history,
    })
}

/// One minorization sweep with perfect CSIT.
pub fn minorize_step_icsit(state: &OptimizerState, sc: &Scenario, h: &ChannelRealization) -> Result<OptimizerState> {
    minorize_step(state, sc, Csit::Instantaneous(h))
}

/// One minorization sweep on the Massive EWSR with pathwise CSIT.
pub fn minorize_step_pwcsit(state: &OptimizerState, sc: &Scenario) -> Result<OptimizerState> {
    minorize_step(state, sc, Csit::Pathwise)
}

// ---------------------------------------------------------------------------
// Driver

/// Stationarity residual of the WSR (or Massive EWSR) Lagrangian:
/// `max_k ||u_k B_k G_k (I + G_k^H B_k G_k)^-1 - (A_k + λ_{b_k} I) G_k||_F / ||G_k||_F`.
/// Users switched off contribute `max(0, λ_max(u_k B_k - A_k - λ I))`.
pub fn kkt_residual(sc: &Scenario, csit: Csit<'_>, beams: &BeamformerSet) -> Result<f64> {
    let mats = minorizer_matrices(sc, csit, beams)?;
    let grads = surrogate_gradient(sc, &mats, beams)?;
    let mut worst: f64 = 0.0;
    for k in 0..sc.num_users() {
        let lambda = beams.lambdas[sc.serving[k]];
        let gn = beams.g[k].norm();
        let res = if gn > 0.0 {
            let r = &grads[k] - &beams.g[k] * C64::new(lambda, 0.0);
            r.norm() / gn
        } else {
            let nt = beams.g[k].nrows();
            let m = mats[k].b.as_matrix() * C64::new(sc.weights[k], 0.0)
                - mats[k].a.as_matrix()
                - CMat::identity(nt, nt) * C64::new(lambda, 0.0);
            hermitian_eig(&HermitianMatrix::hermitize(m)).values[0].max(0.0)
        };
        worst = worst.max(res);
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy)]
pub struct OptimizeOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        OptimizeOptions {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimizeResult {
    pub beams: BeamformerSet,
    pub objective: f64,
    pub iterations: usize,
    pub kkt_residual: f64,
    pub converged: bool,
    pub history: Vec<f64>,
}

/// Runs `algo` from `init` until the objective changes by at most
/// `tol (1 + |objective|)` for three consecutive iterations or `max_iter` is hit.
pub fn optimize(
    algo: Algorithm,
    sc: &Scenario,
    h: Option<&ChannelRealization>,
    init: BeamformerSet,
    opts: OptimizeOptions,
) -> Result<OptimizeResult> {
    let csit = match (algo.uses_icsit(), h) {
        (true, Some(h)) => Csit::Instantaneous(h),
        (true, None) => {
            return Err(Error::Validation(format!("{algo} needs a channel realization")));
        }
        (false, _) => Csit::Pathwise,
    };
    let mut state = OptimizerState::new(sc, csit, init)?;
    let mut streak = 0;
    let mut converged = false;
    while state.iter < opts.max_iter {
        state = match (algo, csit) {
            (Algorithm::Wsmse, Csit::Instantaneous(h)) => wsmse_step(&state, sc, h)?,
            (Algorithm::MinorizeIcsit, Csit::Instantaneous(h)) => minorize_step_icsit(&state, sc, h)?,
            _ => minorize_step_pwcsit(&state, sc)?,
        };
        let n = state.objective_history.len();
        let (prev, cur) = (state.objective_history[n - 2], state.objective_history[n - 1]);
        if !cur.is_finite() {
            return Err(Error::Numeric(format!("{algo}: non-finite objective")));
        }
        if (cur - prev).abs() <= opts.tol * (1.0 + cur.abs()) {
            streak += 1;
            if streak >= CONVERGED_STREAK {
                converged = true;
                break;
            }
        } else {
            streak = 0;
        }
    }
    let kkt = kkt_residual(sc, csit, &state.beams)?;
    Ok(OptimizeResult {
        objective: objective(sc, csit, &state.beams)?,
        iterations: state.iter,
        kkt_residual: kkt,
        converged,
        history: state.objective_history,
        beams: state.beams,
    })
}
