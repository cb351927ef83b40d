//! Synthetic individuals: per-worm orthonormal mixtures of one shared,
//! labeled latent limit cycle.

use std::f64::consts::TAU;

use nalgebra::DMatrix;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{normalize_recording, StateLabel, WormRecording};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_neurons: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub n_states: usize,
    pub latent_dim: usize,
    pub noise_std: f64,
    pub mixing_seed: u64,
    pub latent_seed: u64,
    /// Relative standard deviation of the per-step phase increment.
    pub angular_velocity_jitter: f64,
    /// Mean number of timesteps per latent cycle.
    pub cycle_period: f64,
    pub sample_period_s: f64,
    pub worm_id: String,
    pub dataset_tag: String,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_neurons: 15,
            t: 3200,
            n_states: 2,
            latent_dim: 3,
            noise_std: 0.0,
            mixing_seed: 0,
            latent_seed: 0,
            angular_velocity_jitter: 0.1,
            cycle_period: 64.0,
            sample_period_s: 1.0 / 3.0,
            worm_id: "synth-0".into(),
            dataset_tag: "synthetic".into(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_states != 2 && self.n_states != 4 {
            return Err(Error::config(format!("n_states must be 2 or 4, got {}", self.n_states)));
        }
        if self.latent_dim < 2 {
            return Err(Error::config(format!("latent_dim must be at least 2, got {}", self.latent_dim)));
        }
        if self.n_neurons < self.latent_dim {
            return Err(Error::config(format!(
                "n_neurons ({}) must be at least latent_dim ({}) for a full-rank mixing matrix",
                self.n_neurons, self.latent_dim
            )));
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::config(format!("noise_std must be non-negative, got {}", self.noise_std)));
        }
        if self.t < 2 {
            return Err(Error::config(format!("T must be at least 2, got {}", self.t)));
        }
        if !(self.cycle_period > 0.0) || !(self.angular_velocity_jitter >= 0.0) {
            return Err(Error::config("cycle_period must be positive and jitter non-negative"));
        }
        Ok(())
    }
}

/// Index of the arc containing `phase` when `[0, 2π)` is cut into
/// `n_states` equal arcs.
pub fn phase_arc(phase: f64, n_states: usize) -> usize {
    let wrapped = phase.rem_euclid(TAU);
    ((wrapped / (TAU / n_states as f64)).floor() as usize).min(n_states - 1)
}

/// Behavioral label attached to each arc, following the cyclic
/// forward, reverse, turn sequence.
pub fn arc_label(arc: usize, n_states: usize) -> StateLabel {
    match (n_states, arc) {
        (2, 0) => StateLabel::Forward,
        (2, _) => StateLabel::Reverse1,
        (_, 0) => StateLabel::Forward,
        (_, 1) => StateLabel::Reverse1,
        (_, 2) => StateLabel::VentralTurn,
        _ => StateLabel::DorsalTurn,
    }
}

/// Shared latent phase sequence; depends only on the latent seed, length,
/// period and jitter.
pub fn latent_phases(cfg: &SynthConfig) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.latent_seed);
    let omega = TAU / cfg.cycle_period;
    let mut phase: f64 = rng.random_range(0.0..TAU);
    let mut out = Vec::with_capacity(cfg.t);
    for _ in 0..cfg.t {
        out.push(phase);
        let eps: f64 = StandardNormal.sample(&mut rng);
        phase += omega * (1.0 + cfg.angular_velocity_jitter * eps).max(0.0);
    }
    out
}

/// Latent coordinates of a phase: a unit circle in the first two
/// dimensions, higher harmonics in the remaining ones.
pub fn latent_point(phase: f64, latent_dim: usize) -> Vec<f64> {
    (0..latent_dim)
        .map(|k| match k {
            0 => phase.cos(),
            1 => phase.sin(),
            k => (k as f64 * phase).cos() / k as f64,
        })
        .collect()
}

/// `n_neurons x latent_dim` matrix with orthonormal columns (thin QR of a
/// seeded Gaussian matrix).
pub fn mixing_matrix(n_neurons: usize, latent_dim: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gauss = DMatrix::<f64>::from_fn(n_neurons, latent_dim, |_, _| StandardNormal.sample(&mut rng));
    let q = gauss.qr().q();
    Array2::from_shape_fn((n_neurons, latent_dim), |(i, j)| q[(i, j)])
}

/// Generates one normalized synthetic recording.
pub fn generate_worm(cfg: &SynthConfig) -> Result<WormRecording> {
    Ok(normalize_recording(&generate_worm_raw(cfg)?))
}

/// The recording before min-max normalization: traces are exactly the
/// mixed latent (plus noise), derivatives their forward differences.
pub fn generate_worm_raw(cfg: &SynthConfig) -> Result<WormRecording> {
    cfg.validate()?;
    let phases = latent_phases(cfg);
    let mixing = mixing_matrix(cfg.n_neurons, cfg.latent_dim, cfg.mixing_seed);
    let latent = Array2::from_shape_fn((cfg.latent_dim, cfg.t), |(k, t)| latent_point(phases[t], cfg.latent_dim)[k]);
    let mut traces = mixing.dot(&latent);
    if cfg.noise_std > 0.0 {
        // observation noise stream is tied to the individual, not the latent
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.mixing_seed ^ 0x5eed_0f_0b5e_2fa7);
        for v in traces.iter_mut() {
            let e: f64 = StandardNormal.sample(&mut rng);
            *v += cfg.noise_std * e;
        }
    }
    let labels = phases
        .iter()
        .map(|&p| arc_label(phase_arc(p, cfg.n_states), cfg.n_states))
        .collect();
    let names = (0..cfg.n_neurons).map(|i| format!("N{i:02}")).collect();
    WormRecording::from_traces(
        cfg.worm_id.clone(),
        cfg.dataset_tag.clone(),
        cfg.sample_period_s,
        names,
        traces,
        labels,
    )
}

/// Seed mixer (splitmix64 finalizer) used to derive per-worm and per-run seeds.
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut acc = 0x9e37_79b9_7f4a_7c15u64;
    for &p in parts {
        let mut z = acc ^ p.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        acc = z ^ (z >> 31);
    }
    acc
}

/// A cohort of worms sharing one latent trajectory, each with its own
/// mixing seed derived from `master_seed` and its index.
pub fn generate_cohort(base: &SynthConfig, n_worms: usize, master_seed: u64) -> Result<Vec<WormRecording>> {
    (0..n_worms)
        .map(|i| {
            let cfg = SynthConfig {
                mixing_seed: mix_seed(&[master_seed, i as u64, 1]),
                worm_id: format!("synth-{i}"),
                ..base.clone()
            };
            generate_worm(&cfg)
        })
        .collect()
}
