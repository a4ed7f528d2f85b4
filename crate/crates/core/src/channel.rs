//! Pathwise geometric channel model.
//!
//! A BS→user link is a sum of `L` specular paths,
//! `H = Hr · diag(e^{jψ}) · D · Ht^H`, with half-wavelength ULAs at both
//! ends. Amplitudes and angles are slow-fading parameters known to the
//! transmitters; the phases `ψ` are fast fading, i.i.d. uniform on `[0, 2π)`.

use std::f64::consts::PI;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};

use crate::numkern::HermitianMatrix;
use crate::{CMat, CVec, Error, Result, C64};

/// Which end of the link an array sits at.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// Scaled to unit norm.
    Tx,
    /// Unit-modulus entries, squared norm equal to the array size.
    Rx,
}

/// Response of an `n`-element half-wavelength ULA to a plane wave at `angle`
/// radians from broadside: element `m` is `exp(jπ m sin(angle))`.
pub fn steering_vector(angle: f64, n: usize, side: Side) -> CVec {
    let scale = match side {
        Side::Tx => 1.0 / (n as f64).sqrt(),
        Side::Rx => 1.0,
    };
    let k = PI * angle.sin();
    CVec::from_fn(n, |m, _| C64::from_polar(scale, k * m as f64))
}

/// Slow-fading parameters of one BS→user link.
#[derive(Debug, Clone, PartialEq)]
pub struct PathwiseLink {
    pub amplitudes: Vec<f64>,
    pub aod: Vec<f64>,
    pub aoa: Vec<f64>,
    /// `Nt × L`, columns `h_t(θ_i)`.
    pub ht: CMat,
    /// `Nr × L`, columns `h_r(φ_i)`.
    pub hr: CMat,
}

impl PathwiseLink {
    pub fn num_paths(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn nt(&self) -> usize {
        self.ht.nrows()
    }

    pub fn nr(&self) -> usize {
        self.hr.nrows()
    }

    /// `D`, the diagonal matrix of path amplitudes.
    pub fn d(&self) -> CMat {
        crate::numkern::diag_matrix(&self.amplitudes)
    }

    /// Squared amplitudes, the diagonal of `D²`.
    pub fn d2(&self) -> DVector<f64> {
        DVector::from_iterator(self.num_paths(), self.amplitudes.iter().map(|a| a * a))
    }

    /// Channel matrix for a given set of path phases.
    pub fn channel_for_phases(&self, phases: &[f64]) -> CMat {
        let mut scaled = self.hr.clone();
        for (i, mut col) in scaled.column_iter_mut().enumerate() {
            col *= C64::from_polar(self.amplitudes[i], phases[i]);
        }
        scaled * self.ht.adjoint()
    }

    /// `E_ψ[H Q H^H] = Hr D diag(Ht^H Q Ht) D Hr^H`.
    pub fn expected_gram(&self, q: &CMat) -> HermitianMatrix {
        let tx_gain = crate::numkern::diag_re(&(self.ht.adjoint() * q * &self.ht));
        let weights: Vec<f64> = tx_gain.iter().zip(self.d2().iter()).map(|(g, a2)| g * a2).collect();
        HermitianMatrix::hermitize(weighted_outer(&self.hr, &weights))
    }
}

/// `Σ_i w_i m_i m_i^H` over the columns `m_i` of `m`.
pub(crate) fn weighted_outer(m: &CMat, weights: &[f64]) -> CMat {
    let mut scaled = m.clone();
    for (i, mut col) in scaled.column_iter_mut().enumerate() {
        col *= C64::new(weights[i], 0.0);
    }
    scaled * m.adjoint()
}

/// Builds a link from per-path amplitudes and angles.
pub fn make_link(amplitudes: &[f64], aod: &[f64], aoa: &[f64], nt: usize, nr: usize) -> Result<PathwiseLink> {
    let l = amplitudes.len();
    if aod.len() != l || aoa.len() != l {
        return Err(Error::Validation(format!(
            "path parameter lengths differ: {} amplitudes, {} AoDs, {} AoAs",
            l,
            aod.len(),
            aoa.len()
        )));
    }
    if nt == 0 || nr == 0 {
        return Err(Error::Validation("antenna counts must be positive".into()));
    }
    if amplitudes.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
        return Err(Error::Validation("path amplitudes must be positive".into()));
    }
    if aod.iter().chain(aoa).any(|a| !a.is_finite()) {
        return Err(Error::Validation("path angles must be finite".into()));
    }
    let mut ht = CMat::zeros(nt, l);
    let mut hr = CMat::zeros(nr, l);
    for i in 0..l {
        ht.set_column(i, &steering_vector(aod[i], nt, Side::Tx));
        hr.set_column(i, &steering_vector(aoa[i], nr, Side::Rx));
    }
    Ok(PathwiseLink {
        amplitudes: amplitudes.to_vec(),
        aod: aod.to_vec(),
        aoa: aoa.to_vec(),
        ht,
        hr,
    })
}

/// Draws i.i.d. uniform path phases and returns the instantaneous channel.
pub fn sample_pathwise<R: Rng + ?Sized>(link: &PathwiseLink, rng: &mut R) -> CMat {
    let phase = Uniform::new(0.0, 2.0 * PI).expect("valid range");
    let phases: Vec<f64> = (0..link.num_paths()).map(|_| phase.sample(rng)).collect();
    link.channel_for_phases(&phases)
}

/// Full multi-cell system description.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    /// Serving BS of each user.
    pub serving: Vec<usize>,
    /// Transmit antennas per BS.
    pub nt: Vec<usize>,
    /// Receive antennas per user.
    pub nr: Vec<usize>,
    /// Power budget per BS.
    pub power: Vec<f64>,
    /// Rate weight per user.
    pub weights: Vec<f64>,
    /// Streams per user.
    pub streams: Vec<usize>,
    /// `links[k][j]`: link from BS `j` to user `k`.
    pub links: Vec<Vec<PathwiseLink>>,
}

impl Scenario {
    pub fn new(
        serving: Vec<usize>,
        nt: Vec<usize>,
        nr: Vec<usize>,
        power: Vec<f64>,
        weights: Vec<f64>,
        streams: Vec<usize>,
        links: Vec<Vec<PathwiseLink>>,
    ) -> Result<Self> {
        let sc = Scenario {
            serving,
            nt,
            nr,
            power,
            weights,
            streams,
            links,
        };
        sc.validate()?;
        Ok(sc)
    }

    pub fn validate(&self) -> Result<()> {
        let cells = self.nt.len();
        let users = self.serving.len();
        if cells == 0 || users == 0 {
            return Err(Error::Validation("scenario needs at least one cell and one user".into()));
        }
        if self.power.len() != cells {
            return Err(Error::dims("scenario power budgets", cells, self.power.len()));
        }
        for (name, len) in [
            ("scenario receive antennas", self.nr.len()),
            ("scenario weights", self.weights.len()),
            ("scenario streams", self.streams.len()),
            ("scenario link rows", self.links.len()),
        ] {
            if len != users {
                return Err(Error::dims(name, users, len));
            }
        }
        if let Some(&b) = self.serving.iter().find(|&&b| b >= cells) {
            return Err(Error::Validation(format!("serving BS {b} does not exist")));
        }
        if self.nt.iter().chain(&self.nr).any(|&n| n == 0) {
            return Err(Error::Validation("antenna counts must be positive".into()));
        }
        if self.power.iter().any(|&p| !(p > 0.0 && p.is_finite())) {
            return Err(Error::Validation("power budgets must be positive".into()));
        }
        if self.weights.iter().any(|&u| !(u > 0.0 && u.is_finite())) {
            return Err(Error::Validation("rate weights must be positive".into()));
        }
        for k in 0..users {
            if self.streams[k] == 0 || self.streams[k] > self.nt[self.serving[k]] {
                return Err(Error::Validation(format!(
                    "user {k}: {} streams with {} transmit antennas",
                    self.streams[k], self.nt[self.serving[k]]
                )));
            }
            if self.links[k].len() != cells {
                return Err(Error::dims("scenario link columns", cells, self.links[k].len()));
            }
            for (j, link) in self.links[k].iter().enumerate() {
                if link.nt() != self.nt[j] || link.nr() != self.nr[k] {
                    return Err(Error::dims(
                        "link shape",
                        format!("{}x{}", self.nr[k], self.nt[j]),
                        format!("{}x{}", link.nr(), link.nt()),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn num_cells(&self) -> usize {
        self.nt.len()
    }

    pub fn num_users(&self) -> usize {
        self.serving.len()
    }

    /// Users served by BS `c`, in ascending order.
    pub fn users_of(&self, c: usize) -> Vec<usize> {
        (0..self.num_users()).filter(|&k| self.serving[k] == c).collect()
    }

    pub fn link(&self, user: usize, bs: usize) -> &PathwiseLink {
        &self.links[user][bs]
    }

    /// Copy with every BS budget set to `p`.
    pub fn with_power(&self, p: f64) -> Scenario {
        let mut sc = self.clone();
        sc.power = vec![p; self.num_cells()];
        sc
    }

    /// Copy with every user carrying `d` streams (clamped to the BS array size).
    pub fn with_streams(&self, d: usize) -> Scenario {
        let mut sc = self.clone();
        sc.streams = (0..self.num_users()).map(|k| d.min(self.nt[self.serving[k]]).max(1)).collect();
        sc
    }
}

/// Instantaneous channels `h[k][j]` from BS `j` to user `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub h: Vec<Vec<CMat>>,
}

impl ChannelRealization {
    pub fn get(&self, user: usize, bs: usize) -> &CMat {
        &self.h[user][bs]
    }

    pub fn check(&self, sc: &Scenario) -> Result<()> {
        if self.h.len() != sc.num_users() {
            return Err(Error::dims("channel realization users", sc.num_users(), self.h.len()));
        }
        for (k, row) in self.h.iter().enumerate() {
            if row.len() != sc.num_cells() {
                return Err(Error::dims("channel realization cells", sc.num_cells(), row.len()));
            }
            for (j, m) in row.iter().enumerate() {
                if m.shape() != (sc.nr[k], sc.nt[j]) {
                    return Err(Error::dims(
                        "channel matrix",
                        format!("{}x{}", sc.nr[k], sc.nt[j]),
                        format!("{}x{}", m.nrows(), m.ncols()),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Samples every link with independent phases.
pub fn sample_realization<R: Rng + ?Sized>(sc: &Scenario, rng: &mut R) -> ChannelRealization {
    let h = sc
        .links
        .iter()
        .map(|row| row.iter().map(|link| sample_pathwise(link, rng)).collect())
        .collect();
    ChannelRealization { h }
}

/// Mixes a list of integers into a 64-bit seed (splitmix64 finalizer chain).
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x243F_6A88_85A3_08D3;
    for &p in parts {
        h ^= p.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(h << 6).wrapping_add(h >> 2);
        h = h.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = h;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h = z ^ (z >> 31);
    }
    h
}

/// Deterministic generator for trial `trial` of a run seeded with `seed`.
pub fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(&[seed, trial]))
}

/// Random geometry: `cells` BSs with `users_per_cell` users each (users
/// numbered cell by cell), `paths` paths on every link, angles uniform on
/// `[-π/2, π/2]`, amplitudes uniform on `(0.5, 1.5)` then normalized to
/// `Σ A_i² = 1`, unit weights and one stream per user.
pub fn random_scenario<R: Rng + ?Sized>(
    cells: usize,
    users_per_cell: usize,
    paths: usize,
    nt: usize,
    nr: usize,
    power: f64,
    rng: &mut R,
) -> Result<Scenario> {
    if cells == 0 || users_per_cell == 0 || paths == 0 || nt == 0 || nr == 0 {
        return Err(Error::Validation("scenario counts must be positive".into()));
    }
    let k = cells * users_per_cell;
    let angle = Uniform::new_inclusive(-PI / 2.0, PI / 2.0).expect("valid range");
    let amp = Uniform::new(0.5, 1.5).expect("valid range");
    let mut links = Vec::with_capacity(k);
    for _ in 0..k {
        let mut row = Vec::with_capacity(cells);
        for _ in 0..cells {
            let raw: Vec<f64> = (0..paths).map(|_| amp.sample(rng)).collect();
            let norm = raw.iter().map(|a| a * a).sum::<f64>().sqrt();
            let amplitudes: Vec<f64> = raw.iter().map(|a| a / norm).collect();
            let aod: Vec<f64> = (0..paths).map(|_| angle.sample(rng)).collect();
            let aoa: Vec<f64> = (0..paths).map(|_| angle.sample(rng)).collect();
            row.push(make_link(&amplitudes, &aod, &aoa, nt, nr)?);
        }
        links.push(row);
    }
    Scenario::new(
        (0..k).map(|u| u / users_per_cell).collect(),
        vec![nt; cells],
        vec![nr; k],
        vec![power; cells],
        vec![1.0; k],
        vec![1; k],
        links,
    )
}

/// `E[H g g^H H^H]` for Gaussian CSIT `vec(H^T) ~ CN(vec(Hbar^T), chh)`:
/// `Hbar g g^H Hbar^H + (I ⊗ g^T) chh (I ⊗ g^*)`.
pub fn gaussian_expected_gram(hbar: &CMat, chh: &HermitianMatrix, g: &CVec) -> Result<HermitianMatrix> {
    let (nr, nt) = hbar.shape();
    if g.len() != nt {
        return Err(Error::dims("gaussian_expected_gram beamformer", nt, g.len()));
    }
    if chh.dim() != nr * nt {
        return Err(Error::dims("gaussian_expected_gram covariance", nr * nt, chh.dim()));
    }
    let mean = hbar * g;
    let mut out = &mean * mean.adjoint();
    for r in 0..nr {
        for s in 0..nr {
            let mut acc = C64::new(0.0, 0.0);
            for t in 0..nt {
                for tp in 0..nt {
                    acc += g[t] * chh[(r * nt + t, s * nt + tp)] * g[tp].conj();
                }
            }
            out[(r, s)] += acc;
        }
    }
    Ok(HermitianMatrix::hermitize(out))
}
