//! Low- and high-SNR reference rates.
//!
//! At low SNR interference is negligible and matched filters are optimal, so
//! the WSR reduces to per-user single-link expressions. At high SNR the
//! pathwise design zero-forces every interfering path, either at the
//! receiving UE (`rx` paths) or at the transmitting BS (`tx` paths); a
//! [`PathPartition`] records that split.

use std::fmt;

use crate::channel::{ChannelRealization, Scenario};
use crate::numkern::{diag_re, hermitian_eig, logdet_hpd, proj_orth_complement, HermitianMatrix};
use crate::rate::BeamformerSet;
use crate::{CMat, Error, Result, C64};

/// `Σ_k u_k Σ_j ln(1 + s_j² p_kj)` with `s_j` the singular values of the
/// serving channel in descending order; `p[k]` holds one power per stream.
pub fn low_snr_wsr_icsit(sc: &Scenario, h: &ChannelRealization, p: &[Vec<f64>]) -> Result<f64> {
    h.check(sc)?;
    if p.len() != sc.num_users() {
        return Err(Error::dims("stream powers", sc.num_users(), p.len()));
    }
    let mut total = 0.0;
    for (k, pk) in p.iter().enumerate() {
        if pk.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(Error::Validation(format!("negative or non-finite power for user {k}")));
        }
        let mut sv: Vec<f64> = h.get(k, sc.serving[k]).singular_values().iter().cloned().collect();
        sv.sort_by(|a, b| b.total_cmp(a));
        let rate: f64 = pk
            .iter()
            .zip(sv.iter().chain(std::iter::repeat(&0.0)))
            .map(|(&pw, &s)| (s * s * pw).ln_1p())
            .sum();
        total += sc.weights[k] * rate;
    }
    Ok(total)
}

/// `Σ_k u_k ln det(I + Hr^H Hr D² diag(Ht^H Q_k Ht))` on the serving links,
/// evaluated through the equivalent `Nr x Nr` form
/// `ln det(I + Hr D² diag(Ht^H Q_k Ht) Hr^H)`.
pub fn low_snr_wsr_pwcsit(sc: &Scenario, q: &[CMat]) -> Result<f64> {
    if q.len() != sc.num_users() {
        return Err(Error::dims("transmit covariances", sc.num_users(), q.len()));
    }
    let mut total = 0.0;
    for (k, qk) in q.iter().enumerate() {
        let link = sc.link(k, sc.serving[k]);
        if qk.nrows() != link.nt() || qk.ncols() != link.nt() {
            return Err(Error::dims("transmit covariance", link.nt(), qk.nrows()));
        }
        let received = link.expected_gram(qk);
        let m = CMat::identity(link.nr(), link.nr()) + received.as_matrix();
        total += sc.weights[k] * logdet_hpd(&m)?;
    }
    Ok(total)
}

/// Path split for one interfering link `(victim, bs)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinkSplit {
    pub victim: usize,
    pub bs: usize,
    /// Paths nulled by the victim's receive filter.
    pub rx_paths: Vec<usize>,
    /// Paths nulled by the transmit filters of `bs`.
    pub tx_paths: Vec<usize>,
}

/// Assignment of every interfering path to the UE or to the BS.
///
/// A link `(k, c)` is interfering when BS `c` serves at least one user other
/// than `k`. Paths of a user's own serving link always go to the BS: nulling
/// them at the UE would also remove the useful signal.
///
/// The zero-forcing design sends one stream per serving path, `ℓ_k = L_{k,b_k}`.
/// Feasibility then asks, for every user `k`, that the UE handles at most
/// `N_r - ℓ_k` directions and that the BS-handled directions its beams must
/// avoid (paths on links `(i, b_k)`, `i ≠ k`) number at most `N_t - ℓ_k`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PathPartition {
    pub links: Vec<LinkSplit>,
}

impl PathPartition {
    /// Number of interfering paths covered.
    pub fn num_paths(&self) -> usize {
        self.links.iter().map(|l| l.rx_paths.len() + l.tx_paths.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    /// Receive-side directions of user `k` (columns of `Hr` to null).
    pub fn rx_directions(&self, sc: &Scenario, k: usize) -> CMat {
        let nr = sc.nr[k];
        let cols: Vec<_> = self
            .links
            .iter()
            .filter(|l| l.victim == k)
            .flat_map(|l| l.rx_paths.iter().map(move |&p| sc.link(k, l.bs).hr.column(p).into_owned()))
            .collect();
        stack(nr, &cols)
    }

    /// Transmit-side directions that the beams of user `k` must avoid.
    pub fn tx_directions(&self, sc: &Scenario, k: usize) -> CMat {
        let b = sc.serving[k];
        let cols: Vec<_> = self
            .links
            .iter()
            .filter(|l| l.bs == b && l.victim != k)
            .flat_map(|l| l.tx_paths.iter().map(move |&p| sc.link(l.victim, b).ht.column(p).into_owned()))
            .collect();
        stack(sc.nt[b], &cols)
    }
}

fn stack(rows: usize, cols: &[nalgebra::DVector<C64>]) -> CMat {
    let mut m = CMat::zeros(rows, cols.len());
    for (j, c) in cols.iter().enumerate() {
        m.set_column(j, c);
    }
    m
}

impl fmt::Display for PathPartition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for l in &self.links {
            writeln!(f, "user {} <- bs {}: rx {:?} tx {:?}", l.victim, l.bs, l.rx_paths, l.tx_paths)?;
        }
        Ok(())
    }
}

/// Interfering links `(victim, bs)` in victim-major order.
fn interfering_links(sc: &Scenario) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for k in 0..sc.num_users() {
        for c in 0..sc.num_cells() {
            if sc.users_of(c).iter().any(|&i| i != k) {
                out.push((k, c));
            }
        }
    }
    out
}

/// Checks coverage and the per-user dimension counts.
pub fn check_partition(sc: &Scenario, part: &PathPartition) -> Result<()> {
    let links = interfering_links(sc);
    if part.links.len() != links.len() {
        return Err(Error::Validation(format!(
            "partition covers {} links, scenario has {} interfering links",
            part.links.len(),
            links.len()
        )));
    }
    for (split, &(k, c)) in part.links.iter().zip(&links) {
        if (split.victim, split.bs) != (k, c) {
            return Err(Error::Validation(format!("partition link order: expected ({k},{c})")));
        }
        let l = sc.link(k, c).num_paths();
        let mut seen = vec![0u8; l];
        for &p in split.rx_paths.iter().chain(&split.tx_paths) {
            if p >= l {
                return Err(Error::Validation(format!("path {p} out of range on link ({k},{c})")));
            }
            seen[p] += 1;
        }
        if seen.iter().any(|&n| n != 1) {
            return Err(Error::Validation(format!("link ({k},{c}): every path must be assigned exactly once")));
        }
        if c == sc.serving[k] && !split.rx_paths.is_empty() {
            return Err(Error::Validation(format!("user {k}: serving-link paths cannot be nulled at the UE")));
        }
    }
    for k in 0..sc.num_users() {
        let b = sc.serving[k];
        let streams = sc.link(k, b).num_paths();
        let rx_used = part.rx_directions(sc, k).ncols();
        if streams + rx_used > sc.nr[k] {
            return Err(Error::Infeasible {
                node: format!("UE {k}"),
                required: streams + rx_used,
                available: sc.nr[k],
            });
        }
        let tx_used = part.tx_directions(sc, k).ncols();
        if streams + tx_used > sc.nt[b] {
            return Err(Error::Infeasible {
                node: format!("BS {b} (beams of user {k})"),
                required: streams + tx_used,
                available: sc.nt[b],
            });
        }
    }
    Ok(())
}

/// Greedy split: each UE nulls its strongest cross-link paths while it has
/// spare receive dimensions; everything else goes to the BS.
pub fn default_partition(sc: &Scenario) -> Result<PathPartition> {
    let mut links = Vec::new();
    let mut k_prev = usize::MAX;
    // claims per victim decided up front over all its cross links
    let mut claims: Vec<(usize, usize)> = Vec::new();
    for (k, c) in interfering_links(sc) {
        if k != k_prev {
            k_prev = k;
            let own = sc.link(k, sc.serving[k]).num_paths();
            let rx_budget = sc.nr[k].saturating_sub(own);
            let mut cand: Vec<(usize, usize, f64)> = interfering_links(sc)
                .into_iter()
                .filter(|&(v, bs)| v == k && bs != sc.serving[k])
                .flat_map(|(_, bs)| {
                    sc.link(k, bs)
                        .amplitudes
                        .iter()
                        .enumerate()
                        .map(move |(p, &a)| (bs, p, a))
                        .collect::<Vec<_>>()
                })
                .collect();
            cand.sort_by(|x, y| y.2.total_cmp(&x.2).then(x.0.cmp(&y.0)).then(x.1.cmp(&y.1)));
            claims = cand.iter().take(rx_budget).map(|&(bs, p, _)| (bs, p)).collect();
        }
        let l = sc.link(k, c).num_paths();
        let (mut rx_paths, mut tx_paths) = (Vec::new(), Vec::new());
        for p in 0..l {
            if claims.contains(&(c, p)) {
                rx_paths.push(p);
            } else {
                tx_paths.push(p);
            }
        }
        links.push(LinkSplit {
            victim: k,
            bs: c,
            rx_paths,
            tx_paths,
        });
    }
    let part = PathPartition { links };
    check_partition(sc, &part)?;
    Ok(part)
}

/// High-SNR pathwise zero-forcing design.
#[derive(Debug, Clone)]
pub struct ZfDesign {
    /// Receive filters `F_k` (`N_r x ℓ_k`), orthonormal columns.
    pub f: Vec<CMat>,
    /// Normalized transmit filters `G'_k` (`N_t x ℓ_k`), orthonormal columns.
    pub gp: Vec<CMat>,
    /// Per-stream power of each user (equal split of its BS budget).
    pub stream_power: Vec<f64>,
    /// `Σ_k u_k ln det(I + Σ(S_k^½ D² diag(T_k) S_k^½) P_k)`.
    pub wsr_high_snr: f64,
}

impl ZfDesign {
    /// Transmit beams `G_k = G'_k P_k^½`.
    pub fn beams(&self, sc: &Scenario) -> BeamformerSet {
        let g = self
            .gp
            .iter()
            .zip(&self.stream_power)
            .map(|(gp, &p)| gp * C64::new(p.sqrt(), 0.0))
            .collect();
        BeamformerSet::from_beams(g, sc.num_cells())
    }
}

/// `P⊥ X (X^H P⊥ X)^-½` together with `X^H P⊥ X`.
fn projected_filter(x: &CMat, nulled: &CMat, what: &str, k: usize) -> Result<(CMat, HermitianMatrix)> {
    let proj = proj_orth_complement(nulled);
    let px = proj.as_matrix() * x;
    let gram = HermitianMatrix::hermitize(px.adjoint() * &px);
    // judged against the unprojected Gram: the projection may remove everything
    let reference = hermitian_eig(&HermitianMatrix::hermitize(x.adjoint() * x)).values[0];
    // P x (x^H P x)^-½ is the polar factor U V^H of P x
    let svd = px.svd(true, true);
    let smallest = svd.singular_values.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(smallest * smallest > 1e-10 * reference) {
        return Err(Error::DegenerateGeometry(format!(
            "user {k}: {what} signal paths are lost in the zero-forcing projection"
        )));
    }
    let u = svd.u.expect("left singular vectors requested");
    let v_t = svd.v_t.expect("right singular vectors requested");
    Ok((u * v_t, gram))
}

fn sqrt_hpd(m: &HermitianMatrix) -> CMat {
    let eig = hermitian_eig(m);
    let s = eig.values.map(|v| C64::new(v.max(0.0).sqrt(), 0.0));
    &eig.vectors * CMat::from_diagonal(&s) * eig.vectors.adjoint()
}

/// Builds `F_k`, `G'_k` by projecting the serving-link paths away from the
/// directions each side must null, then whitening; powers split equally over
/// the streams of each BS.
pub fn high_snr_zf_pwcsit(sc: &Scenario, part: &PathPartition, power: &[f64]) -> Result<ZfDesign> {
    check_partition(sc, part)?;
    build_zf(sc, part, power)
}

fn build_zf(sc: &Scenario, part: &PathPartition, power: &[f64]) -> Result<ZfDesign> {
    if power.len() != sc.num_cells() || power.iter().any(|&p| !(p > 0.0) || !p.is_finite()) {
        return Err(Error::Validation("one positive finite power per BS required".into()));
    }
    let kk = sc.num_users();
    let mut f = Vec::with_capacity(kk);
    let mut gp = Vec::with_capacity(kk);
    let mut stream_power = Vec::with_capacity(kk);
    let mut total = 0.0;
    for k in 0..kk {
        let b = sc.serving[k];
        let link = sc.link(k, b);
        let (fk, t) = projected_filter(&link.hr, &part.rx_directions(sc, k), "receive", k)?;
        let (gk, s) = projected_filter(&link.ht, &part.tx_directions(sc, k), "transmit", k)?;
        let streams: usize = sc.users_of(b).iter().map(|&i| sc.link(i, b).num_paths()).sum();
        let p = power[b] / streams as f64;

        let s_half = sqrt_hpd(&s);
        let dt: Vec<f64> = diag_re(t.as_matrix())
            .iter()
            .zip(link.d2().iter())
            .map(|(t, a2)| t * a2)
            .collect();
        let core = HermitianMatrix::hermitize(&s_half * crate::numkern::diag_matrix(&dt) * &s_half);
        let gains = hermitian_eig(&core).values;
        total += sc.weights[k] * gains.iter().map(|g| (g.max(0.0) * p).ln_1p()).sum::<f64>();

        f.push(fk);
        gp.push(gk);
        stream_power.push(p);
    }
    Ok(ZfDesign {
        f,
        gp,
        stream_power,
        wsr_high_snr: total,
    })
}

/// Joint Tx/Rx zero-forcing leakage
/// `max_{i≠k} ||F_k^H H_{k,b_i} G_i||_F / (||F_k||_F ||G_i||_F)`; zero iff
/// every cross term vanishes.
pub fn high_snr_zf_check_icsit(sc: &Scenario, h: &ChannelRealization, f: &[CMat], g: &[CMat]) -> Result<f64> {
    h.check(sc)?;
    let kk = sc.num_users();
    if f.len() != kk || g.len() != kk {
        return Err(Error::dims("filter count", kk, f.len().min(g.len())));
    }
    let mut worst: f64 = 0.0;
    for k in 0..kk {
        for i in 0..kk {
            if i == k {
                continue;
            }
            let hm = h.get(k, sc.serving[i]);
            if f[k].nrows() != hm.nrows() || g[i].nrows() != hm.ncols() {
                return Err(Error::dims("filter shape", format!("{}x{}", hm.nrows(), hm.ncols()), format!("{}x{}", f[k].nrows(), g[i].nrows())));
            }
            let den = f[k].norm() * g[i].norm();
            if den > 0.0 {
                worst = worst.max((f[k].adjoint() * hm * &g[i]).norm() / den);
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{make_link, random_scenario, sample_realization, PathwiseLink};
    use crate::numkern::{inv_sqrt_hpd, testutil::randn_c};
    use crate::rate::{massive_ewsr, pathwise_rx_covariances, wsr};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(x: f64) -> C64 {
        C64::new(x, 0.0)
    }

    fn scalar_scenario(h: C64, power: f64) -> (Scenario, ChannelRealization) {
        let link = make_link(&[1.0], &[0.0], &[0.0], 1, 1).unwrap();
        let sc = Scenario::new(vec![0], vec![1], vec![1], vec![power], vec![2.0], vec![1], vec![vec![link]]).unwrap();
        (sc, ChannelRealization { h: vec![vec![CMat::from_element(1, 1, h)]] })
    }

    #[test]
    fn scalar_low_snr_icsit() {
        let (sc, h) = scalar_scenario(C64::new(0.6, 0.8), 3.0);
        let r = low_snr_wsr_icsit(&sc, &h, &[vec![3.0]]).unwrap();
        assert!((r - 2.0 * 4f64.ln()).abs() < 1e-14);
        assert_eq!(low_snr_wsr_icsit(&sc, &h, &[vec![0.0]]).unwrap(), 0.0);
        assert!(low_snr_wsr_icsit(&sc, &h, &[vec![-1.0]]).is_err());
    }

    #[test]
    fn low_snr_icsit_matches_matched_filter_wsr() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sc = random_scenario(2, 2, 3, 4, 3, 1e-4, &mut rng).unwrap();
        let h = sample_realization(&sc, &mut rng);
        let mut g = Vec::new();
        let mut p = Vec::new();
        for k in 0..4 {
            let svd = h.get(k, sc.serving[k]).clone().svd(false, true);
            let v = CMat::from_column_slice(4, 1, svd.v_t.unwrap().row(0).adjoint().as_slice());
            let pk: f64 = 0.5e-4;
            g.push(v * c(pk.sqrt()));
            p.push(vec![pk]);
        }
        let beams = BeamformerSet::from_beams(g, 2);
        let exact = wsr(&sc, &h, &beams).unwrap();
        let approx = low_snr_wsr_icsit(&sc, &h, &p).unwrap();
        assert!((exact / approx - 1.0).abs() < 1e-3, "{exact} {approx}");
    }

    #[test]
    fn low_snr_pwcsit_single_path_closed_form() {
        let link = make_link(&[0.7], &[0.3], &[-0.2], 4, 3).unwrap();
        let sc = Scenario::new(vec![0], vec![4], vec![3], vec![1.0], vec![1.5], vec![1], vec![vec![link.clone()]]).unwrap();
        let g = randn_c(&mut ChaCha8Rng::seed_from_u64(1), 4, 1);
        let q = &g * g.adjoint();
        let ht = link.ht.column(0);
        let quad = (ht.adjoint() * &q * ht)[(0, 0)].re;
        let expected = 1.5 * (1.0 + 3.0 * 0.49 * quad).ln();
        assert!((low_snr_wsr_pwcsit(&sc, &[q]).unwrap() - expected).abs() < 1e-12);
        assert_eq!(low_snr_wsr_pwcsit(&sc, &[CMat::zeros(4, 4)]).unwrap(), 0.0);
    }

    #[test]
    fn low_snr_pwcsit_matches_massive_ewsr() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let sc = random_scenario(2, 2, 3, 4, 3, 1e-4, &mut rng).unwrap();
        let g: Vec<CMat> = (0..4)
            .map(|_| {
                let v = randn_c(&mut rng, 4, 1);
                &v * c((0.5e-4f64).sqrt() / v.norm())
            })
            .collect();
        let beams = BeamformerSet::from_beams(g, 2);
        let q: Vec<CMat> = (0..4).map(|k| beams.covariance(k)).collect();
        let ratio = massive_ewsr(&sc, &beams).unwrap() / low_snr_wsr_pwcsit(&sc, &q).unwrap();
        assert!((ratio - 1.0).abs() < 1e-3, "{ratio}");
    }

    /// 2 cells, 2 users per cell, 3 paths per link.
    fn fig_like(nt: usize, nr: usize, seed: u64) -> Scenario {
        random_scenario(2, 2, 3, nt, nr, 1.0, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn partition_feasibility_by_array_size() {
        for seed in 0..5 {
            let part = default_partition(&fig_like(10, 4, seed)).unwrap();
            // 4 victims x 2 interfering links x 3 paths
            assert_eq!(part.num_paths(), 24);
            assert!(matches!(default_partition(&fig_like(3, 3, seed)), Err(Error::Infeasible { .. })));
        }
    }

    #[test]
    fn single_antenna_bs_cannot_separate_two_users() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sc = random_scenario(1, 2, 1, 1, 1, 1.0, &mut rng).unwrap();
        match default_partition(&sc) {
            Err(Error::Infeasible { required, available, .. }) => assert!(required > available),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn no_interference_gives_empty_partition() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let sc = random_scenario(1, 1, 2, 4, 2, 1.0, &mut rng).unwrap();
        let part = default_partition(&sc).unwrap();
        assert!(part.is_empty());
    }

    #[test]
    fn single_user_zf_is_pathwise_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let sc = random_scenario(1, 1, 2, 4, 3, 10.0, &mut rng).unwrap();
        let zf = high_snr_zf_pwcsit(&sc, &PathPartition::default(), &[10.0]).unwrap();
        let link = sc.link(0, 0);
        // no projection: F = Hr T^-½, G' = Ht S^-½
        let s = HermitianMatrix::hermitize(link.ht.adjoint() * &link.ht);
        let expected_g = &link.ht * inv_sqrt_hpd(&s).unwrap();
        assert!((&zf.gp[0] - expected_g).norm() < 1e-10);
        assert_eq!(zf.stream_power, vec![5.0]);
        let t = diag_re(&(link.hr.adjoint() * &link.hr));
        let dt: Vec<f64> = t.iter().zip(link.d2().iter()).map(|(t, a)| t * a).collect();
        let s_half = sqrt_hpd(&s);
        let m = HermitianMatrix::hermitize(&s_half * crate::numkern::diag_matrix(&dt) * &s_half);
        let eig = hermitian_eig(&m).values;
        let expected: f64 = eig.iter().map(|e| (1.0 + 5.0 * e).ln()).sum();
        assert!((zf.wsr_high_snr - expected).abs() < 1e-10);
    }

    #[test]
    fn zf_filters_are_orthonormal_and_null_interference() {
        for seed in 0..5 {
            let mut sc = fig_like(16, 4, 10 + seed);
            sc.power = vec![100.0, 100.0];
            let part = default_partition(&sc).unwrap();
            let zf = high_snr_zf_pwcsit(&sc, &part, &sc.power.clone()).unwrap();
            for k in 0..4 {
                let l = zf.f[k].ncols();
                assert!((zf.f[k].adjoint() * &zf.f[k] - CMat::identity(l, l)).norm() < 1e-12);
                assert!((zf.gp[k].adjoint() * &zf.gp[k] - CMat::identity(l, l)).norm() < 1e-12);
            }
            let beams = zf.beams(&sc);
            for split in &part.links {
                let link = sc.link(split.victim, split.bs);
                for &p in &split.tx_paths {
                    for i in sc.users_of(split.bs) {
                        if i != split.victim {
                            let leak = (link.ht.column(p).adjoint() * &beams.g[i]).norm();
                            assert!(leak < 1e-10 * beams.g[i].norm(), "tx leak {leak}");
                        }
                    }
                }
                for &p in &split.rx_paths {
                    let leak = (zf.f[split.victim].adjoint() * link.hr.column(p)).norm();
                    assert!(leak < 1e-10, "rx leak {leak}");
                }
            }
            // After F_k the phase-averaged interference vanishes.
            let cov = pathwise_rx_covariances(&sc, &beams).unwrap();
            for k in 0..4 {
                let b = sc.serving[k];
                let own = sc.link(k, b).expected_gram(&beams.covariance(k));
                let interference = cov.rbar[k].as_matrix() - CMat::identity(4, 4);
                let _ = own;
                let residual = zf.f[k].adjoint() * interference * &zf.f[k];
                assert!(residual.norm() < 1e-8 * 100.0, "{}", residual.norm());
            }
        }
    }

    #[test]
    fn zf_rate_grows_with_full_multiplexing_gain() {
        let sc = fig_like(16, 4, 21);
        let part = default_partition(&sc).unwrap();
        let at = |p: f64| {
            let sc = sc.with_power(p);
            let zf = high_snr_zf_pwcsit(&sc, &part, &sc.power.clone()).unwrap();
            (zf.wsr_high_snr, massive_ewsr(&sc, &zf.beams(&sc)).unwrap())
        };
        let (d1, m1) = at(1e12);
        let (d2, m2) = at(1e13);
        // 4 users x 3 paths: 12 degrees of freedom
        assert!(((d2 - d1) / 10f64.ln() - 12.0).abs() < 0.1, "{d1} {d2}");
        assert!(((m2 - m1) / 10f64.ln() - 12.0).abs() < 0.1, "{m1} {m2}");
    }

    #[test]
    fn degenerate_geometry_is_reported() {
        // Two users in one cell seen from the BS along the same direction.
        let a = make_link(&[1.0], &[0.3], &[0.0], 2, 1).unwrap();
        let b = make_link(&[1.0], &[0.3], &[0.1], 2, 1).unwrap();
        let sc = Scenario::new(vec![0, 0], vec![2], vec![1, 1], vec![1.0], vec![1.0, 1.0], vec![1, 1], vec![vec![a], vec![b]]).unwrap();
        let part = default_partition(&sc).unwrap();
        assert!(matches!(high_snr_zf_pwcsit(&sc, &part, &[1.0]), Err(Error::DegenerateGeometry(_))));
    }

    #[test]
    fn leakage_metric() {
        // BS 0 serves user 0 along e1, BS 1 serves user 1 along e2; cross
        // channels map onto the receive direction each user ignores.
        let link = make_link(&[1.0], &[0.0], &[0.0], 2, 2).unwrap();
        let sc = Scenario::new(
            vec![0, 1],
            vec![2, 2],
            vec![2, 2],
            vec![1.0, 1.0],
            vec![1.0, 1.0],
            vec![1, 1],
            vec![vec![link.clone(), link.clone()], vec![link.clone(), link]],
        )
        .unwrap();
        let e = |i: usize| {
            let mut v = CMat::zeros(2, 1);
            v[(i, 0)] = c(1.0);
            v
        };
        let diag = CMat::identity(2, 2);
        let swap = CMat::from_row_slice(2, 2, &[c(0.0), c(1.0), c(1.0), c(0.0)]);
        let h = ChannelRealization {
            h: vec![vec![diag.clone(), swap.clone()], vec![swap, diag]],
        };
        let f = vec![e(0), e(0)];
        let g = vec![e(0), e(0)];
        assert!(high_snr_zf_check_icsit(&sc, &h, &f, &g).unwrap() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let fr: Vec<CMat> = (0..2).map(|_| randn_c(&mut rng, 2, 1)).collect();
        let gr: Vec<CMat> = (0..2).map(|_| randn_c(&mut rng, 2, 1)).collect();
        assert!(high_snr_zf_check_icsit(&sc, &h, &fr, &gr).unwrap() > 0.0);
    }

    /// All 2^n assignments of the interfering paths of a small instance;
    /// counting feasibility must agree with a numerical construction.
    #[test]
    fn partition_counting_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for trial in 0..6 {
            let nt = 2 + trial % 3;
            let nr = 2 + (trial / 3);
            let mk = |rng: &mut ChaCha8Rng, paths: usize| -> PathwiseLink {
                let amps: Vec<f64> = (0..paths).map(|_| rng.random_range(0.5..1.5)).collect();
                let aod: Vec<f64> = (0..paths).map(|_| rng.random_range(-1.4..1.4)).collect();
                let aoa: Vec<f64> = (0..paths).map(|_| rng.random_range(-1.4..1.4)).collect();
                make_link(&amps, &aod, &aoa, nt, nr).unwrap()
            };
            // one user per cell, two cells: two interfering links with 2 and 1 paths
            let links = vec![vec![mk(&mut rng, 1), mk(&mut rng, 2)], vec![mk(&mut rng, 1), mk(&mut rng, 1)]];
            let sc = Scenario::new(vec![0, 1], vec![nt, nt], vec![nr, nr], vec![1.0, 1.0], vec![1.0, 1.0], vec![1, 1], links).unwrap();
            let layout = interfering_links(&sc);
            let sizes: Vec<usize> = layout.iter().map(|&(k, c)| sc.link(k, c).num_paths()).collect();
            let n: usize = sizes.iter().sum();
            assert!(n <= 6);
            for mask in 0u32..(1 << n) {
                let mut bit = 0;
                let mut links = Vec::new();
                for (&(k, c), &l) in layout.iter().zip(&sizes) {
                    let (mut rx_paths, mut tx_paths) = (Vec::new(), Vec::new());
                    for p in 0..l {
                        if mask >> bit & 1 == 1 {
                            rx_paths.push(p)
                        } else {
                            tx_paths.push(p)
                        }
                        bit += 1;
                    }
                    links.push(LinkSplit { victim: k, bs: c, rx_paths, tx_paths });
                }
                let part = PathPartition { links };
                let counted = check_partition(&sc, &part);
                if matches!(counted, Err(Error::Validation(_))) {
                    continue;
                }
                // numerical: the projected Grams stay nonsingular
                let built = build_zf(&sc, &part, &[1.0, 1.0]);
                assert_eq!(counted.is_ok(), built.is_ok(), "trial {trial} mask {mask:b}: {counted:?} vs {:?}", built.err());
            }
        }
    }
}
