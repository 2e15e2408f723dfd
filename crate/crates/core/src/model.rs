//! Physical scenario: system parameters, SAR matrices and statistical
//! channel generation.
//!
//! All powers are in watts and all gains are linear. dB/dBm helpers exist for
//! configuration parsing only.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::linalg::{c, hermitian_defect, hermitian_eigen, CMatrix, CVector, C64};
use crate::{Error, Result};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn watts_to_dbm(w: f64) -> f64 {
    10.0 * w.log10() + 30.0
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

/// The full problem instance shared by every solver.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemScenario {
    pub num_antennas: usize,
    pub num_users: usize,
    /// Antenna noise power `N0` (W).
    pub noise_antenna: f64,
    /// Baseband circuit noise power `NC` (W), common to all users.
    pub noise_circuit: f64,
    /// Total transmit power budget `PT` (W).
    pub power_budget: f64,
    /// SAR limits `P_l` (W/kg).
    pub sar_limits: Vec<f64>,
    /// Hermitian PSD SAR matrices `A_l` (W/kg).
    pub sar_matrices: Vec<CMatrix>,
    /// Linear SINR targets per user.
    pub sinr_targets: Vec<f64>,
    /// Harvested DC power targets per user (W).
    pub eh_targets: Vec<f64>,
}

impl SystemScenario {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        num_antennas: usize,
        num_users: usize,
        noise_antenna: f64,
        noise_circuit: f64,
        power_budget: f64,
        sar_limits: Vec<f64>,
        sar_matrices: Vec<CMatrix>,
        sinr_targets: Vec<f64>,
        eh_targets: Vec<f64>,
    ) -> Result<Self> {
        let s = Self {
            num_antennas,
            num_users,
            noise_antenna,
            noise_circuit,
            power_budget,
            sar_limits,
            sar_matrices,
            sinr_targets,
            eh_targets,
        };
        s.validate()?;
        Ok(s)
    }

    /// Default operating point: `N0 = -70 dBm`, `NC = -50 dBm`, `PT = 2 W`,
    /// 10 dB SINR and -15 dBm EH targets, one SAR constraint with the 4x4
    /// default matrix at 1.6 W/kg (only when `num_antennas == 4`).
    pub fn default_for(num_antennas: usize, num_users: usize) -> Result<Self> {
        let (limits, mats) = if num_antennas == 4 {
            (vec![1.6], vec![default_sar_matrix()])
        } else {
            (vec![], vec![])
        };
        Self::new(
            num_antennas,
            num_users,
            dbm_to_watts(-70.0),
            dbm_to_watts(-50.0),
            2.0,
            limits,
            mats,
            vec![db_to_linear(10.0); num_users],
            vec![dbm_to_watts(-15.0); num_users],
        )
    }

    pub fn num_sar(&self) -> usize {
        self.sar_limits.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidScenario(msg));
        if self.num_antennas == 0 || self.num_users == 0 {
            return bad("antenna and user counts must be positive".into());
        }
        let positive = |name: &str, v: f64| -> Result<()> {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidScenario(format!("{name} must be positive and finite, got {v}")))
            }
        };
        positive("noise_antenna", self.noise_antenna)?;
        positive("noise_circuit", self.noise_circuit)?;
        positive("power_budget", self.power_budget)?;
        if self.sar_limits.len() != self.sar_matrices.len() {
            return bad(format!(
                "{} SAR limits but {} SAR matrices",
                self.sar_limits.len(),
                self.sar_matrices.len()
            ));
        }
        if self.sinr_targets.len() != self.num_users || self.eh_targets.len() != self.num_users {
            return bad("per-user target lists must have one entry per user".into());
        }
        for &p in &self.sar_limits {
            positive("sar limit", p)?;
        }
        for &g in &self.sinr_targets {
            positive("sinr target", g)?;
        }
        for &l in &self.eh_targets {
            positive("eh target", l)?;
        }
        for (l, a) in self.sar_matrices.iter().enumerate() {
            if a.nrows() != self.num_antennas || a.ncols() != self.num_antennas {
                return bad(format!("SAR matrix {l} is not {0}x{0}", self.num_antennas));
            }
            check_hermitian_psd(a).map_err(|e| Error::InvalidScenario(format!("SAR matrix {l}: {e}")))?;
        }
        Ok(())
    }

    pub fn with_power_budget(&self, power_budget: f64) -> Result<Self> {
        let mut s = self.clone();
        s.power_budget = power_budget;
        s.validate()?;
        Ok(s)
    }

    pub fn with_sar_limits(&self, limit: f64) -> Result<Self> {
        let mut s = self.clone();
        s.sar_limits.iter_mut().for_each(|p| *p = limit);
        s.validate()?;
        Ok(s)
    }

    pub fn with_eh_targets(&self, target: f64) -> Result<Self> {
        let mut s = self.clone();
        s.eh_targets.iter_mut().for_each(|l| *l = target);
        s.validate()?;
        Ok(s)
    }

    /// Same scenario with every SAR constraint removed.
    pub fn without_sar(&self) -> Self {
        let mut s = self.clone();
        s.sar_limits.clear();
        s.sar_matrices.clear();
        s
    }
}

/// Hermitian within 1e-12 and smallest eigenvalue >= -1e-10 * ||A||.
pub fn check_hermitian_psd(a: &CMatrix) -> std::result::Result<(), String> {
    if a.nrows() != a.ncols() {
        return Err("not square".into());
    }
    let defect = hermitian_defect(a);
    if defect > 1e-12 {
        return Err(format!("not Hermitian (defect {defect:e})"));
    }
    let eig = hermitian_eigen(a);
    let scale = eig.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let min = *eig.values.last().unwrap_or(&0.0);
    if min < -1e-10 * scale {
        return Err(format!("not PSD (smallest eigenvalue {min:e})"));
    }
    Ok(())
}

/// The 4x4 SAR matrix of the default setup: 1.6 on the diagonal, -1.2i on the
/// first superdiagonal, -0.42 on the second; lower triangle by conjugate
/// symmetry.
pub fn default_sar_matrix() -> CMatrix {
    let mut a = CMatrix::zeros(4, 4);
    for i in 0..4 {
        a[(i, i)] = c(1.6, 0.0);
    }
    for i in 0..3 {
        a[(i, i + 1)] = c(0.0, -1.2);
        a[(i + 1, i)] = c(0.0, 1.2);
    }
    for i in 0..2 {
        a[(i, i + 2)] = c(-0.42, 0.0);
        a[(i + 2, i)] = c(-0.42, 0.0);
    }
    a
}

/// Far-field half-wavelength ULA response, entry `m` is `exp(-i m pi sin(angle))`.
pub fn los_steering(angle: f64, num_antennas: usize) -> CVector {
    let phase = PI * angle.sin();
    CVector::from_fn(num_antennas, |m, _| C64::from_polar(1.0, -(m as f64) * phase))
}

/// Large-scale channel parameters. Defaults: 915 MHz, 8 dBi / 3 dBi antennas,
/// exponent 2.5 beyond a 1 m reference distance, 5 dB Rician factor, users
/// uniformly placed between 1 and 5 m.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelModel {
    pub frequency_hz: f64,
    pub gain_tx_dbi: f64,
    pub gain_rx_dbi: f64,
    pub path_loss_exponent: f64,
    pub reference_distance_m: f64,
    pub rician_factor_db: f64,
    pub distance_min_m: f64,
    pub distance_max_m: f64,
}

impl Default for ChannelModel {
    fn default() -> Self {
        Self {
            frequency_hz: 915e6,
            gain_tx_dbi: 8.0,
            gain_rx_dbi: 3.0,
            path_loss_exponent: 2.5,
            reference_distance_m: 1.0,
            rician_factor_db: 5.0,
            distance_min_m: 1.0,
            distance_max_m: 5.0,
        }
    }
}

impl ChannelModel {
    pub fn path_loss(&self, distance: f64) -> Result<f64> {
        friis_path_loss_ref(
            distance,
            self.frequency_hz,
            self.gain_tx_dbi,
            self.gain_rx_dbi,
            self.path_loss_exponent,
            self.reference_distance_m,
        )
    }
}

/// Friis gain at a 1 m reference distance with power-law decay beyond it.
pub fn friis_path_loss(distance: f64, frequency: f64, gain_tx_dbi: f64, gain_rx_dbi: f64, exponent: f64) -> Result<f64> {
    friis_path_loss_ref(distance, frequency, gain_tx_dbi, gain_rx_dbi, exponent, 1.0)
}

pub fn friis_path_loss_ref(
    distance: f64,
    frequency: f64,
    gain_tx_dbi: f64,
    gain_rx_dbi: f64,
    exponent: f64,
    reference: f64,
) -> Result<f64> {
    if !(frequency > 0.0) {
        return Err(Error::Domain(format!("frequency must be positive, got {frequency}")));
    }
    if !(reference > 0.0) || !(distance >= reference) {
        return Err(Error::Domain(format!(
            "distance {distance} m is below the {reference} m reference distance"
        )));
    }
    let wavelength = SPEED_OF_LIGHT / frequency;
    let free_space = (wavelength / (4.0 * PI * reference)).powi(2);
    Ok(db_to_linear(gain_tx_dbi) * db_to_linear(gain_rx_dbi) * free_space * (reference / distance).powf(exponent))
}

/// Per-user channel vectors with the geometry that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    pub vectors: Vec<CVector>,
    pub distances: Vec<f64>,
    pub angles: Vec<f64>,
    pub path_loss: Vec<f64>,
}

impl ChannelSet {
    /// Wraps explicit channel vectors (geometry fields left at NaN / 1).
    pub fn from_vectors(vectors: Vec<CVector>) -> Result<Self> {
        for (k, h) in vectors.iter().enumerate() {
            if h.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                return Err(Error::Domain(format!("channel {k} is not finite")));
            }
            if h.iter().all(|z| *z == C64::new(0.0, 0.0)) {
                return Err(Error::Domain(format!("channel {k} is all-zero")));
            }
        }
        let k = vectors.len();
        Ok(Self {
            vectors,
            distances: vec![f64::NAN; k],
            angles: vec![f64::NAN; k],
            path_loss: vec![1.0; k],
        })
    }

    pub fn num_users(&self) -> usize {
        self.vectors.len()
    }

    pub fn h(&self, k: usize) -> &CVector {
        &self.vectors[k]
    }
}

/// Rician block-fading draw for every user of `scenario`.
///
/// `h_k = sqrt(R/(1+R)) sqrt(L_k) a(angle_k) + sqrt(1/(1+R)) g_k` with
/// `g_k` i.i.d. CN(0, L_k) per entry. Deterministic for a fixed seed.
pub fn generate_channels(scenario: &SystemScenario, model: &ChannelModel, seed: u64) -> Result<ChannelSet> {
    generate_channels_raw(scenario.num_antennas, scenario.num_users, model, seed)
}

pub fn generate_channels_raw(num_antennas: usize, num_users: usize, model: &ChannelModel, seed: u64) -> Result<ChannelSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let (los_w, nlos_w) = if model.rician_factor_db == f64::INFINITY {
        (1.0, 0.0)
    } else {
        let r = db_to_linear(model.rician_factor_db);
        ((r / (1.0 + r)).sqrt(), (1.0 / (1.0 + r)).sqrt())
    };

    let mut out = ChannelSet {
        vectors: Vec::with_capacity(num_users),
        distances: Vec::with_capacity(num_users),
        angles: Vec::with_capacity(num_users),
        path_loss: Vec::with_capacity(num_users),
    };
    for _ in 0..num_users {
        let d = rng.gen_range(model.distance_min_m..=model.distance_max_m);
        let angle = rng.gen_range(-PI..PI);
        let loss = model.path_loss(d)?;
        let amp = loss.sqrt();
        let los = los_steering(angle, num_antennas);
        // CN(0, L): real and imaginary parts each N(0, L/2)
        let sd = (loss / 2.0).sqrt();
        let h = CVector::from_fn(num_antennas, |m, _| {
            let g = C64::new(sd * std_normal.sample(&mut rng), sd * std_normal.sample(&mut rng));
            los[m] * (los_w * amp) + g * nlos_w
        });
        out.vectors.push(h);
        out.distances.push(d);
        out.angles.push(angle);
        out.path_loss.push(loss);
    }
    Ok(out)
}

/// Bounded uncertainty: `||dh_k||^2 <= channel_bounds[k]` and
/// `||dA_l||_F <= sar_bounds[l]`.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyModel {
    pub channel_bounds: Vec<f64>,
    pub sar_bounds: Vec<f64>,
}

impl UncertaintyModel {
    pub fn new(channel_bounds: Vec<f64>, sar_bounds: Vec<f64>) -> Result<Self> {
        if channel_bounds.iter().chain(&sar_bounds).any(|r| !(*r >= 0.0) || !r.is_finite()) {
            return Err(Error::Domain("uncertainty radii must be finite and nonnegative".into()));
        }
        Ok(Self { channel_bounds, sar_bounds })
    }

    pub fn uniform(num_users: usize, num_sar: usize, channel: f64, sar: f64) -> Result<Self> {
        Self::new(vec![channel; num_users], vec![sar; num_sar])
    }

    pub fn none(num_users: usize, num_sar: usize) -> Self {
        Self {
            channel_bounds: vec![0.0; num_users],
            sar_bounds: vec![0.0; num_sar],
        }
    }

    pub fn check_dims(&self, scenario: &SystemScenario) -> Result<()> {
        if self.channel_bounds.len() != scenario.num_users || self.sar_bounds.len() != scenario.num_sar() {
            return Err(Error::Domain("uncertainty dimensions do not match the scenario".into()));
        }
        Ok(())
    }

    /// Euclidean radius of the channel error ball for user `k`.
    pub fn channel_radius(&self, k: usize) -> f64 {
        self.channel_bounds[k].sqrt()
    }
}
