//! Geometric clustered mmWave channel.
//!
//! A realization holds `L` clusters with `N_sc` rays each. The delay-domain
//! taps are built from raised-cosine sampled ray delays and ULA steering
//! vectors; the per-subcarrier response is the DFT of the taps.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{CMat, C64};
use crate::rng::{self, SimRng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    pub n_tx: usize,
    pub n_rx: usize,
    pub n_subcarriers: usize,
    pub n_clusters: usize,
    pub n_rays: usize,
    /// Number of delay taps `D`; defaults to `max(1, M / 4)`.
    #[serde(default)]
    pub cp_len: Option<usize>,
    #[serde(default = "default_symbol_period")]
    pub symbol_period: f64,
    #[serde(default = "default_angle_spread")]
    pub angle_spread_deg: f64,
    /// Upper end of the per-ray relative delay, in symbol periods.
    #[serde(default = "default_ray_delay")]
    pub ray_delay_max: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_symbol_period() -> f64 {
    1.0
}
fn default_angle_spread() -> f64 {
    5.0
}
fn default_ray_delay() -> f64 {
    0.1
}

impl ChannelConfig {
    /// Desk-scale scenario: 16 x 4 antennas, 8 subcarriers, 3 clusters of 2 rays.
    pub fn desk() -> Self {
        Self {
            n_tx: 16,
            n_rx: 4,
            n_subcarriers: 8,
            n_clusters: 3,
            n_rays: 2,
            cp_len: None,
            symbol_period: 1.0,
            angle_spread_deg: 5.0,
            ray_delay_max: 0.1,
            seed: 0,
        }
    }

    pub fn taps(&self) -> usize {
        self.cp_len.unwrap_or((self.n_subcarriers / 4).max(1))
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_tx", self.n_tx),
            ("n_rx", self.n_rx),
            ("n_subcarriers", self.n_subcarriers),
            ("n_clusters", self.n_clusters),
            ("n_rays", self.n_rays),
            ("cp_len", self.taps()),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if !(self.symbol_period > 0.0) {
            return Err(Error::Config("symbol_period must be positive".into()));
        }
        if !(self.angle_spread_deg >= 0.0) || !(self.ray_delay_max >= 0.0) {
            return Err(Error::Config(
                "angle_spread_deg and ray_delay_max must be non-negative".into(),
            ));
        }
        Ok(())
    }

    /// Frequency response of realization `index` drawn from the stream `(seed, index)`.
    pub fn realize(&self, index: u64) -> Result<FrequencyChannel> {
        let mut rng = rng::rng_for(self.seed, &[rng::stream::CHANNEL, index]);
        self.realize_with(&mut rng)
    }

    pub fn realize_with(&self, rng: &mut SimRng) -> Result<FrequencyChannel> {
        self.validate()?;
        let clusters = draw_clusters(self, rng);
        let taps = delay_channel(&clusters, self)?;
        freq_channel(&taps, self.n_subcarriers)
    }
}

/// Random parameters of one channel realization.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterRealization {
    pub cluster_delays: Vec<f64>,
    pub ray_delays: Vec<f64>,
    pub mean_aoa: Vec<f64>,
    pub mean_aod: Vec<f64>,
    /// `aoa_shifts[l][r]`; `mean_aoa[l] - aoa_shifts[l][r]` lies in `[-pi/2, pi/2)`.
    pub aoa_shifts: Vec<Vec<f64>>,
    pub aod_shifts: Vec<Vec<f64>>,
    pub gains: Vec<Vec<Complex64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DelayChannel {
    pub taps: Vec<CMat>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrequencyChannel {
    /// `per_subcarrier[k]` is `H[m]` for `m = k + 1`.
    pub per_subcarrier: Vec<CMat>,
}

impl FrequencyChannel {
    pub fn n_subcarriers(&self) -> usize {
        self.per_subcarrier.len()
    }

    pub fn n_rx(&self) -> usize {
        self.per_subcarrier.first().map_or(0, CMat::rows)
    }

    pub fn n_tx(&self) -> usize {
        self.per_subcarrier.first().map_or(0, CMat::cols)
    }

    pub fn energy(&self) -> f64 {
        self.per_subcarrier.iter().map(CMat::norm_sqr).sum()
    }

    /// Mean of `|H_ij|^2` over every entry of every subcarrier.
    pub fn mean_entry_power(&self) -> f64 {
        let n: usize = self.per_subcarrier.iter().map(|h| h.rows() * h.cols()).sum();
        if n == 0 {
            0.0
        } else {
            self.energy() / n as f64
        }
    }

    pub fn zeros(n_rx: usize, n_tx: usize, n_subcarriers: usize) -> Self {
        Self {
            per_subcarrier: vec![CMat::zeros(n_rx, n_tx); n_subcarriers],
        }
    }
}

/// ULA response with half-wavelength spacing: entry `k` is `exp(j pi k sin(angle))`.
pub fn steering_ula(n: usize, angle: f64) -> Vec<C64> {
    let phase = PI * angle.sin();
    (0..n)
        .map(|k| Complex64::from_polar(1.0, phase * k as f64))
        .collect()
}

/// Raised-cosine pulse with roll-off 1, truncated to `|t| <= 4 T_s`.
pub fn pulse(t: f64, symbol_period: f64) -> f64 {
    let x = t / symbol_period;
    if x.abs() > 4.0 {
        return 0.0;
    }
    if x == 0.0 {
        return 1.0;
    }
    let denom = 1.0 - 4.0 * x * x;
    if denom.abs() < 1e-12 {
        // Limit at |t| = T_s / 2: (pi / 4) sinc(1/2).
        return 0.5;
    }
    let sinc = (PI * x).sin() / (PI * x);
    sinc * (PI * x).cos() / denom
}

const HALF_PI_OPEN: f64 = PI / 2.0 - 1e-12;

pub fn draw_clusters(config: &ChannelConfig, rng: &mut SimRng) -> ClusterRealization {
    let l = config.n_clusters;
    let nr = config.n_rays;
    let ts = config.symbol_period;
    let max_delay = (config.taps() as f64 - 1.0) * ts;
    let spread = config.angle_spread_deg.to_radians();
    let shift_dist = Normal::new(0.0, spread).expect("non-negative angle spread");

    let cluster_delays = (0..l).map(|_| rng.random::<f64>() * max_delay).collect();
    let ray_delays = (0..nr)
        .map(|_| rng.random::<f64>() * config.ray_delay_max * ts)
        .collect();
    let draw_angle = |rng: &mut SimRng| -PI / 2.0 + rng.random::<f64>() * PI;
    let mean_aoa: Vec<f64> = (0..l).map(|_| draw_angle(rng)).collect();
    let mean_aod: Vec<f64> = (0..l).map(|_| draw_angle(rng)).collect();

    // Shifts are clamped so that mean - shift stays inside [-pi/2, pi/2).
    let draw_shifts = |means: &[f64], rng: &mut SimRng| -> Vec<Vec<f64>> {
        means
            .iter()
            .map(|&mean| {
                (0..nr)
                    .map(|_| {
                        let raw = shift_dist.sample(rng);
                        let eff = (mean - raw).clamp(-PI / 2.0, HALF_PI_OPEN);
                        mean - eff
                    })
                    .collect()
            })
            .collect()
    };
    let aoa_shifts = draw_shifts(&mean_aoa, rng);
    let aod_shifts = draw_shifts(&mean_aod, rng);
    let gains = (0..l)
        .map(|_| (0..nr).map(|_| rng::complex_normal(rng, 1.0)).collect())
        .collect();

    ClusterRealization {
        cluster_delays,
        ray_delays,
        mean_aoa,
        mean_aod,
        aoa_shifts,
        aod_shifts,
        gains,
    }
}

/// Delay-domain taps `H[d]`, `d = 0 .. D-1`.
pub fn delay_channel(real: &ClusterRealization, config: &ChannelConfig) -> Result<DelayChannel> {
    let (l, nr) = (config.n_clusters, config.n_rays);
    let dims_ok = real.cluster_delays.len() == l
        && real.ray_delays.len() == nr
        && real.mean_aoa.len() == l
        && real.mean_aod.len() == l
        && real.aoa_shifts.len() == l
        && real.aod_shifts.len() == l
        && real.gains.len() == l
        && real.aoa_shifts.iter().all(|r| r.len() == nr)
        && real.aod_shifts.iter().all(|r| r.len() == nr)
        && real.gains.iter().all(|r| r.len() == nr);
    if !dims_ok {
        return Err(Error::Dimension(format!(
            "cluster realization does not match L = {l}, N_sc = {nr}"
        )));
    }

    let beta = ((config.n_tx * config.n_rx) as f64 / l as f64).sqrt();
    let ts = config.symbol_period;
    let mut taps = vec![CMat::zeros(config.n_rx, config.n_tx); config.taps()];
    for c in 0..l {
        for r in 0..nr {
            let a_rx = steering_ula(config.n_rx, real.mean_aoa[c] - real.aoa_shifts[c][r]);
            let a_tx = steering_ula(config.n_tx, real.mean_aod[c] - real.aod_shifts[c][r]);
            for (d, tap) in taps.iter_mut().enumerate() {
                let p = pulse(
                    d as f64 * ts - real.cluster_delays[c] - real.ray_delays[r],
                    ts,
                );
                if p == 0.0 {
                    continue;
                }
                let coef = real.gains[c][r] * (beta * p);
                for i in 0..config.n_rx {
                    let ci = coef * a_rx[i];
                    for j in 0..config.n_tx {
                        tap[(i, j)] += ci * a_tx[j].conj();
                    }
                }
            }
        }
    }
    Ok(DelayChannel { taps })
}

/// Per-subcarrier response `H[m] = sum_d H[d] exp(-j 2 pi m d / M)`, `m = 1 .. M`.
pub fn freq_channel(dc: &DelayChannel, m_subcarriers: usize) -> Result<FrequencyChannel> {
    if m_subcarriers == 0 {
        return Err(Error::Invalid("at least one subcarrier is required".into()));
    }
    let Some(first) = dc.taps.first() else {
        return Err(Error::Invalid("delay channel has no taps".into()));
    };
    let (nr, nt) = first.shape();
    let per_subcarrier = (1..=m_subcarriers)
        .map(|m| {
            let mut h = CMat::zeros(nr, nt);
            for (d, tap) in dc.taps.iter().enumerate() {
                let w = Complex64::from_polar(
                    1.0,
                    -2.0 * PI * ((m * d) % m_subcarriers) as f64 / m_subcarriers as f64,
                );
                for (o, &t) in h.data_mut().iter_mut().zip(tap.data()) {
                    *o += t * w;
                }
            }
            h
        })
        .collect();
    Ok(FrequencyChannel { per_subcarrier })
}
