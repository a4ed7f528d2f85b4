//! Receive covariances, MMSE receivers and (expected) weighted sum rates.
//!
//! Rates are in nats. Per-user rates use the multi-stream form
//! `ln det(I + G_k^H H^H Rbar_k^-1 H G_k) = ln det(Rbar_k^-1 R_k)`.

use crate::channel::{derive_seed, sample_realization, trial_rng, ChannelRealization, Scenario};
use crate::numkern::{inv_hpd, logdet_hpd, solve_hpd, HermitianMatrix};
use crate::{CMat, Error, Result, C64};

/// Beamformers `G_k` (`Nt_{b_k} × d_k`), per-stream powers and per-BS multipliers.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamformerSet {
    pub g: Vec<CMat>,
    pub powers: Vec<Vec<f64>>,
    pub lambdas: Vec<f64>,
}

impl BeamformerSet {
    /// Wraps raw beamformers; stream powers are the squared column norms.
    pub fn from_beams(g: Vec<CMat>, cells: usize) -> Self {
        let powers = g
            .iter()
            .map(|m| m.column_iter().map(|c| c.norm_squared()).collect())
            .collect();
        BeamformerSet {
            g,
            powers,
            lambdas: vec![0.0; cells],
        }
    }

    pub fn zeros(sc: &Scenario) -> Self {
        let g = (0..sc.num_users())
            .map(|k| CMat::zeros(sc.nt[sc.serving[k]], sc.streams[k]))
            .collect();
        Self::from_beams(g, sc.num_cells())
    }

    /// `Q_k = G_k G_k^H`.
    pub fn covariance(&self, k: usize) -> CMat {
        &self.g[k] * self.g[k].adjoint()
    }

    /// Transmit power spent by BS `c`.
    pub fn bs_power(&self, sc: &Scenario, c: usize) -> f64 {
        sc.users_of(c).iter().map(|&k| self.g[k].norm_squared()).sum()
    }

    pub fn check(&self, sc: &Scenario) -> Result<()> {
        if self.g.len() != sc.num_users() {
            return Err(Error::dims("beamformer count", sc.num_users(), self.g.len()));
        }
        for (k, g) in self.g.iter().enumerate() {
            let nt = sc.nt[sc.serving[k]];
            if g.nrows() != nt || g.ncols() == 0 {
                return Err(Error::dims("beamformer shape", format!("{nt}xd"), format!("{}x{}", g.nrows(), g.ncols())));
            }
        }
        Ok(())
    }
}

/// Total and interference-plus-noise receive covariances per user.
#[derive(Debug, Clone)]
pub struct CovariancePair {
    pub r: Vec<HermitianMatrix>,
    pub rbar: Vec<HermitianMatrix>,
}

/// Channel knowledge used to evaluate covariances and designs.
#[derive(Debug, Clone, Copy)]
pub enum Csit<'a> {
    /// Perfect knowledge of one channel realization.
    Instantaneous(&'a ChannelRealization),
    /// Pathwise slow-fading parameters only, phases averaged out.
    Pathwise,
}

fn assemble(sc: &Scenario, term: impl Fn(usize, usize) -> CMat) -> CovariancePair {
    let kk = sc.num_users();
    let mut r = Vec::with_capacity(kk);
    let mut rbar = Vec::with_capacity(kk);
    for k in 0..kk {
        let nr = sc.nr[k];
        let mut interference = CMat::identity(nr, nr);
        let mut own = CMat::zeros(nr, nr);
        for i in 0..kk {
            let t = term(k, i);
            if i == k {
                own = t;
            } else {
                interference += t;
            }
        }
        r.push(HermitianMatrix::hermitize(&interference + own));
        rbar.push(HermitianMatrix::hermitize(interference));
    }
    CovariancePair { r, rbar }
}

/// `Rbar_k = I + Σ_{i≠k} H_{k,b_i} Q_i H_{k,b_i}^H`, `R_k = Rbar_k + H_{k,b_k} Q_k H_{k,b_k}^H`.
pub fn rx_covariances(sc: &Scenario, h: &ChannelRealization, beams: &BeamformerSet) -> Result<CovariancePair> {
    h.check(sc)?;
    beams.check(sc)?;
    Ok(assemble(sc, |k, i| {
        let hg = h.get(k, sc.serving[i]) * &beams.g[i];
        &hg * hg.adjoint()
    }))
}

/// Massive-limit covariances: every `H Q H^H` replaced by its phase average
/// `Hr D² diag(Ht^H Q Ht) Hr^H`.
pub fn pathwise_rx_covariances(sc: &Scenario, beams: &BeamformerSet) -> Result<CovariancePair> {
    beams.check(sc)?;
    let q: Vec<CMat> = (0..sc.num_users()).map(|i| beams.covariance(i)).collect();
    Ok(assemble(sc, |k, i| sc.link(k, sc.serving[i]).expected_gram(&q[i]).into_inner()))
}

/// Covariances for either CSIT regime.
pub fn covariances(sc: &Scenario, csit: Csit<'_>, beams: &BeamformerSet) -> Result<CovariancePair> {
    match csit {
        Csit::Instantaneous(h) => rx_covariances(sc, h, beams),
        Csit::Pathwise => pathwise_rx_covariances(sc, beams),
    }
}

/// MMSE receiver `F_k = R_k^-1 H_{k,b_k} G_k`.
pub fn mmse_rx(sc: &Scenario, h: &ChannelRealization, beams: &BeamformerSet, k: usize) -> Result<CMat> {
    if k >= sc.num_users() {
        return Err(Error::Validation(format!("user {k} does not exist")));
    }
    let cov = rx_covariances(sc, h, beams)?;
    let hg = h.get(k, sc.serving[k]) * &beams.g[k];
    solve_hpd(&cov.r[k], &hg)
}

/// MSE matrix of user `k` for an arbitrary receiver `f`:
/// `(I - F^H H G)(I - F^H H G)^H + Σ_{i≠k} F^H H_{k,b_i} Q_i H_{k,b_i}^H F + F^H F`.
pub fn mse_matrix(sc: &Scenario, h: &ChannelRealization, beams: &BeamformerSet, k: usize, f: &CMat) -> CMat {
    let d = beams.g[k].ncols();
    let fh = f.adjoint();
    let err = CMat::identity(d, d) - &fh * h.get(k, sc.serving[k]) * &beams.g[k];
    let mut e = &err * err.adjoint() + &fh * f;
    for i in 0..sc.num_users() {
        if i != k {
            let t = &fh * h.get(k, sc.serving[i]) * &beams.g[i];
            e += &t * t.adjoint();
        }
    }
    (&e + e.adjoint()) * C64::new(0.5, 0.0)
}

fn user_rate_icsit(sc: &Scenario, h: &ChannelRealization, beams: &BeamformerSet, cov: &CovariancePair, k: usize) -> Result<f64> {
    let hg = h.get(k, sc.serving[k]) * &beams.g[k];
    let x = solve_hpd(&cov.rbar[k], &hg)?;
    let d = hg.ncols();
    let m = CMat::identity(d, d) + hg.adjoint() * x;
    logdet_hpd(&((&m + m.adjoint()) * C64::new(0.5, 0.0)))
}

/// Per-user rates `ln det(Rbar_k^-1 R_k)` for either regime.
pub fn user_rates(sc: &Scenario, csit: Csit<'_>, beams: &BeamformerSet) -> Result<Vec<f64>> {
    let cov = covariances(sc, csit, beams)?;
    (0..sc.num_users())
        .map(|k| match csit {
            Csit::Instantaneous(h) => user_rate_icsit(sc, h, beams, &cov, k),
            Csit::Pathwise => Ok(logdet_hpd(&cov.r[k])? - logdet_hpd(&cov.rbar[k])?),
        })
        .collect()
}

fn weighted(sc: &Scenario, rates: &[f64]) -> f64 {
    rates.iter().zip(&sc.weights).map(|(r, u)| r * u).sum()
}

/// Weighted sum rate with perfect CSI.
pub fn wsr(sc: &Scenario, h: &ChannelRealization, beams: &BeamformerSet) -> Result<f64> {
    Ok(weighted(sc, &user_rates(sc, Csit::Instantaneous(h), beams)?))
}

/// Massive EWSR limit `Σ u_k [ln det R_k - ln det Rbar_k]` with phase-averaged covariances.
pub fn massive_ewsr(sc: &Scenario, beams: &BeamformerSet) -> Result<f64> {
    Ok(weighted(sc, &user_rates(sc, Csit::Pathwise, beams)?))
}

/// Objective of a design under the given CSIT: `wsr` or `massive_ewsr`.
pub fn objective(sc: &Scenario, csit: Csit<'_>, beams: &BeamformerSet) -> Result<f64> {
    Ok(weighted(sc, &user_rates(sc, csit, beams)?))
}

/// Sample mean and its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
}

impl McEstimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let stderr = if xs.len() > 1 {
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        } else {
            0.0
        };
        McEstimate { mean, stderr }
    }
}

/// Monte-Carlo EWSR of a fixed design over independent phase draws. Trial `t`
/// uses the channel drawn by `trial_rng(seed, t)`.
pub fn monte_carlo_ewsr(sc: &Scenario, beams: &BeamformerSet, trials: usize, seed: u64) -> Result<McEstimate> {
    if trials == 0 {
        return Err(Error::Validation("Monte-Carlo EWSR needs at least one trial".into()));
    }
    let samples = (0..trials)
        .map(|t| {
            let h = sample_realization(sc, &mut trial_rng(seed, t as u64));
            wsr(sc, &h, beams)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(McEstimate::from_samples(&samples))
}

/// Seed of the channel draws shared by every design evaluated on geometry `geometry`.
pub fn realization_seed(master: u64, geometry: u64) -> u64 {
    derive_seed(&[master, geometry, 0x5EED])
}

/// `R^-1` for every user, for callers that need many products with it.
pub(crate) fn inverses(cov: &[HermitianMatrix]) -> Result<Vec<CMat>> {
    cov.iter().map(|m| inv_hpd(m)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{make_link, random_scenario, sample_pathwise, PathwiseLink};
    use crate::numkern::testutil::randn_c;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(x: f64) -> C64 {
        C64::new(x, 0.0)
    }

    fn scalar_scenario(amplitude: f64, power: f64) -> Scenario {
        let link = make_link(&[amplitude], &[0.0], &[0.0], 1, 1).unwrap();
        Scenario::new(vec![0], vec![1], vec![1], vec![power], vec![1.0], vec![1], vec![vec![link]]).unwrap()
    }

    fn scalar_channel(h: C64) -> ChannelRealization {
        ChannelRealization {
            h: vec![vec![CMat::from_element(1, 1, h)]],
        }
    }

    fn random_instance(seed: u64) -> (Scenario, ChannelRealization, BeamformerSet) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sc = random_scenario(2, 1, 2, 3, 2, 1.0, &mut rng).unwrap();
        let h = sample_realization(&sc, &mut rng);
        let g = (0..2).map(|_| randn_c(&mut rng, 3, 1)).collect();
        (sc, h, BeamformerSet::from_beams(g, 2))
    }

    #[test]
    fn scalar_covariances() {
        let sc = scalar_scenario(1.0, 2.0);
        let h = scalar_channel(C64::new(0.6, 0.8) * 1.5);
        let beams = BeamformerSet::from_beams(vec![CMat::from_element(1, 1, c(2f64.sqrt()))], 1);
        let cov = rx_covariances(&sc, &h, &beams).unwrap();
        assert!((cov.r[0][(0, 0)] - c(1.0 + 2.25 * 2.0)).norm() < 1e-14);
        assert!((cov.rbar[0][(0, 0)] - c(1.0)).norm() < 1e-15);
        let rate = wsr(&sc, &h, &beams).unwrap();
        assert!((rate - (1.0 + 2.0 * 2.25f64).ln()).abs() < 1e-14);
        let f = mmse_rx(&sc, &h, &beams, 0).unwrap();
        let expect = h.get(0, 0)[(0, 0)] * 2f64.sqrt() / (1.0 + 2.25 * 2.0);
        assert!((f[(0, 0)] - expect).norm() < 1e-14);
    }

    #[test]
    fn zero_beams() {
        let (sc, h, _) = random_instance(1);
        let zero = BeamformerSet::zeros(&sc);
        let cov = rx_covariances(&sc, &h, &zero).unwrap();
        let pw = pathwise_rx_covariances(&sc, &zero).unwrap();
        for k in 0..2 {
            let i = CMat::identity(2, 2);
            assert_eq!(cov.r[k].as_matrix(), &i);
            assert_eq!(cov.rbar[k].as_matrix(), &i);
            assert_eq!(pw.r[k].as_matrix(), &i);
            assert_eq!(pw.rbar[k].as_matrix(), &i);
            assert!(mmse_rx(&sc, &h, &zero, k).unwrap().norm() == 0.0);
        }
        assert_eq!(wsr(&sc, &h, &zero).unwrap(), 0.0);
        assert_eq!(massive_ewsr(&sc, &zero).unwrap(), 0.0);
    }

    #[test]
    fn covariances_match_direct_summation() {
        let (sc, h, beams) = random_instance(2);
        let cov = rx_covariances(&sc, &h, &beams).unwrap();
        for k in 0..2 {
            let mut rbar = CMat::identity(2, 2);
            let mut r = CMat::identity(2, 2);
            for i in 0..2 {
                let hi = h.get(k, sc.serving[i]);
                let gi = &beams.g[i];
                let term = hi * gi * gi.adjoint() * hi.adjoint();
                r += &term;
                if i != k {
                    rbar += term;
                }
            }
            assert!((cov.r[k].as_matrix() - r).norm() < 1e-12);
            assert!((cov.rbar[k].as_matrix() - rbar).norm() < 1e-12);
            // R - Rbar is the own-signal term, PSD of rank <= d_k
            let diff = cov.r[k].as_matrix() - cov.rbar[k].as_matrix();
            let own = h.get(k, sc.serving[k]) * beams.covariance(k) * h.get(k, sc.serving[k]).adjoint();
            assert!((diff - own).norm() < 1e-12);
        }
    }

    #[test]
    fn inverse_mse_forms_agree() {
        for seed in 0..20 {
            let (sc, h, beams) = random_instance(100 + seed);
            let cov = rx_covariances(&sc, &h, &beams).unwrap();
            for k in 0..2 {
                let hg = h.get(k, sc.serving[k]) * &beams.g[k];
                let a = 1.0 + (hg.adjoint() * inv_hpd(&cov.rbar[k]).unwrap() * &hg)[(0, 0)].re;
                let b = 1.0 / (1.0 - (hg.adjoint() * inv_hpd(&cov.r[k]).unwrap() * &hg)[(0, 0)].re);
                assert!((a - b).abs() < 1e-10 * a, "{a} {b}");
            }
        }
    }

    #[test]
    fn mmse_rx_minimizes_mse() {
        // Perturbing the MMSE receiver along random directions never lowers the MSE.
        let (sc, h, beams) = random_instance(3);
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for k in 0..2 {
            let f = mmse_rx(&sc, &h, &beams, k).unwrap();
            let e0 = mse_matrix(&sc, &h, &beams, k, &f)[(0, 0)].re;
            for _ in 0..50 {
                let delta = randn_c(&mut rng, 2, 1) * c(1e-3);
                let e1 = mse_matrix(&sc, &h, &beams, k, &(&f + delta))[(0, 0)].re;
                assert!(e1 >= e0 - 1e-15);
            }
            // grid along one direction: minimum at step zero
            let dir = randn_c(&mut rng, 2, 1);
            let best = (-20..=20)
                .map(|s| {
                    let t = s as f64 * 0.05;
                    (s, mse_matrix(&sc, &h, &beams, k, &(&f + &dir * c(t)))[(0, 0)].re)
                })
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap();
            assert_eq!(best.0, 0);
            // and the MMSE equals 1 / (1 + SINR)
            let rate = user_rates(&sc, Csit::Instantaneous(&h), &beams).unwrap()[k];
            assert!((e0 - (-rate).exp()).abs() < 1e-12);
        }
    }

    #[test]
    fn wsr_invariant_to_unitary_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let sc = random_scenario(2, 1, 3, 4, 3, 1.0, &mut rng).unwrap().with_streams(2);
        let h = sample_realization(&sc, &mut rng);
        let g: Vec<CMat> = (0..2).map(|_| randn_c(&mut rng, 4, 2)).collect();
        let base = wsr(&sc, &h, &BeamformerSet::from_beams(g.clone(), 2)).unwrap();
        let qr = randn_c(&mut rng, 2, 2).qr();
        let u = qr.q();
        let rotated: Vec<CMat> = g.iter().map(|m| m * &u).collect();
        let rot = wsr(&sc, &h, &BeamformerSet::from_beams(rotated, 2)).unwrap();
        assert!((base - rot).abs() < 1e-10);
    }

    #[test]
    fn massive_single_path_closed_form() {
        let nr = 3;
        let link = make_link(&[0.7], &[0.3], &[-0.5], 4, nr).unwrap();
        let sc = Scenario::new(vec![0], vec![4], vec![nr], vec![1.0], vec![1.0], vec![1], vec![vec![link.clone()]]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = randn_c(&mut rng, 4, 1);
        let beams = BeamformerSet::from_beams(vec![g.clone()], 1);
        let gain = (link.ht.column(0).adjoint() * &g)[(0, 0)].norm_sqr();
        let expect = (1.0 + 0.49 * nr as f64 * gain).ln();
        assert!((massive_ewsr(&sc, &beams).unwrap() - expect).abs() < 1e-12);
        // single user and single path: rate does not depend on the phase
        let mc = monte_carlo_ewsr(&sc, &beams, 20, 1).unwrap();
        assert!(mc.stderr < 1e-12);
    }

    #[test]
    fn single_trial_equals_wsr() {
        let (sc, _, beams) = random_instance(6);
        let mc = monte_carlo_ewsr(&sc, &beams, 1, 42).unwrap();
        let h = sample_realization(&sc, &mut trial_rng(42, 0));
        assert_eq!(mc.mean, wsr(&sc, &h, &beams).unwrap());
        assert_eq!(mc.stderr, 0.0);
        assert!(monte_carlo_ewsr(&sc, &beams, 0, 1).is_err());
    }

    #[test]
    fn massive_upper_bounds_monte_carlo_without_interference() {
        // Jensen on the concave ln det; with interference the R̄ term breaks the bound.
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
            let sc = random_scenario(1, 1, 3, 4, 2, 1.0, &mut rng).unwrap();
            let beams = BeamformerSet::from_beams(vec![randn_c(&mut rng, 4, 1) * c(3.0)], 1);
            let m = massive_ewsr(&sc, &beams).unwrap();
            let mc = monte_carlo_ewsr(&sc, &beams, 2000, seed).unwrap();
            assert!(m >= mc.mean - 3.0 * mc.stderr, "{m} vs {mc:?}");
        }
    }

    #[test]
    fn pathwise_covariances_match_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let sc = random_scenario(2, 1, 3, 3, 2, 1.0, &mut rng).unwrap();
        let g = (0..2).map(|_| randn_c(&mut rng, 3, 1)).collect();
        let beams = BeamformerSet::from_beams(g, 2);
        let pw = pathwise_rx_covariances(&sc, &beams).unwrap();
        let t = 100_000;
        let mut sum = [CMat::zeros(2, 2), CMat::zeros(2, 2)];
        let mut sumsq = [0.0f64; 2];
        for _ in 0..t {
            let h = sample_realization(&sc, &mut rng);
            let cov = rx_covariances(&sc, &h, &beams).unwrap();
            for k in 0..2 {
                let dev = cov.r[k].as_matrix() - pw.r[k].as_matrix();
                sumsq[k] += dev.norm_squared();
                sum[k] += dev;
            }
        }
        for k in 0..2 {
            let mean_dev = (&sum[k] / c(t as f64)).norm();
            let stderr = (sumsq[k] / t as f64 / t as f64).sqrt();
            assert!(mean_dev < 3.0 * stderr, "user {k}: {mean_dev} vs {stderr}");
        }
    }

    #[test]
    fn single_path_term_is_rank_one() {
        let link: PathwiseLink = make_link(&[0.9], &[0.2], &[0.4], 3, 2).unwrap();
        let sc = Scenario::new(vec![0], vec![3], vec![2], vec![1.0], vec![1.0], vec![1], vec![vec![link.clone()]]).unwrap();
        let g = CMat::from_element(3, 1, c(0.5));
        let pw = pathwise_rx_covariances(&sc, &BeamformerSet::from_beams(vec![g.clone()], 1)).unwrap();
        let gain = (link.ht.column(0).adjoint() * &g)[(0, 0)].norm_sqr();
        let hr = link.hr.column(0);
        let expect = CMat::identity(2, 2) + hr * hr.adjoint() * c(0.81 * gain);
        assert!((pw.r[0].as_matrix() - expect).norm() < 1e-13);
        // every phase draw gives the same single-path gram
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let hh = sample_pathwise(&link, &mut rng);
        let inst = &hh * &g * g.adjoint() * hh.adjoint();
        assert!((inst + CMat::identity(2, 2) - pw.r[0].as_matrix()).norm() < 1e-12);
    }
}
