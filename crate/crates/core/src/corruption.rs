//! Observation corruption: what the deployed drone actually sees.
//!
//! Depth images pass through three stages in order — salt-and-pepper
//! impulses, additive Gaussian code noise, then a 1-D uniform motion blur in
//! a per-image random direction. The self state gets clipped Gaussian noise
//! per component. All stages draw from an explicitly passed stream, so a
//! seed pins the corruption bit-for-bit.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::sensing::{DepthImage, Observation, SelfState};
use crate::vehicle::wrap_angle;

/// Noise ladder parameters. `sigma_g` lives in 8-bit code units (the impulse
/// extremes 0/255 fix the code space); `sigma_s` in the state's native units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub p_sp: f64,
    pub mu_g: f64,
    pub sigma_g: f64,
    pub k_mb: usize,
    pub mu_s: f64,
    pub sigma_s: f64,
    /// Clip bound for state noise, in multiples of `sigma_s`.
    pub state_clip: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            p_sp: 0.005,
            mu_g: 0.0,
            sigma_g: 3.0,
            k_mb: 5,
            mu_s: 0.0,
            sigma_s: 0.016,
            state_clip: 3.0,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.p_sp) {
            return Err(format!("p_sp {} outside [0, 1]", self.p_sp));
        }
        if self.sigma_g < 0.0 || self.sigma_s < 0.0 || self.state_clip < 0.0 {
            return Err("noise scales must be non-negative".into());
        }
        if self.k_mb == 0 || self.k_mb % 2 == 0 {
            return Err(format!("blur kernel {} must be odd", self.k_mb));
        }
        Ok(())
    }
}

/// Stage 1: each pixel independently becomes 0 or 255 (equal odds) with
/// probability `p_sp`.
pub fn salt_pepper(img: &DepthImage, p_sp: f64, rng: &mut ChaCha8Rng) -> DepthImage {
    let mut out = img.clone();
    for c in out.codes.iter_mut() {
        if rng.random::<f64>() < p_sp {
            *c = if rng.random::<bool>() { 255 } else { 0 };
        }
    }
    out
}

/// Stage 2: adds N(mu, sigma²) per pixel in code space, rounds, clamps.
pub fn gaussian_noise(img: &DepthImage, mu: f64, sigma: f64, rng: &mut ChaCha8Rng) -> DepthImage {
    let mut out = img.clone();
    if sigma == 0.0 && mu == 0.0 {
        return out;
    }
    let normal = Normal::new(mu, sigma.max(f64::MIN_POSITIVE)).expect("valid normal");
    for c in out.codes.iter_mut() {
        let v = *c as f64 + if sigma > 0.0 { normal.sample(rng) } else { mu };
        *c = v.round().clamp(0.0, 255.0) as u8;
    }
    out
}

/// Stage 3: length-k uniform 1-D blur along a random direction (horizontal or
/// vertical, equal odds), replicate padding at the borders.
pub fn motion_blur(img: &DepthImage, k: usize, rng: &mut ChaCha8Rng) -> DepthImage {
    if k <= 1 {
        return img.clone();
    }
    let horizontal = rng.random::<bool>();
    blur_along(img, k, horizontal)
}

fn blur_along(img: &DepthImage, k: usize, horizontal: bool) -> DepthImage {
    let half = (k / 2) as isize;
    let (h, w) = (img.h as isize, img.w as isize);
    let mut out = img.clone();
    for i in 0..h {
        for j in 0..w {
            let mut acc = 0.0;
            for o in -half..=half {
                let (ii, jj) = if horizontal { (i, j + o) } else { (i + o, j) };
                let ii = ii.clamp(0, h - 1) as usize;
                let jj = jj.clamp(0, w - 1) as usize;
                acc += img.codes[ii * img.w + jj] as f64;
            }
            out.codes[(i * w + j) as usize] = (acc / k as f64).round().clamp(0.0, 255.0) as u8;
        }
    }
    out
}

/// Full three-stage ladder, in the fixed order the stages are defined.
pub fn corrupt_depth(img: &DepthImage, cfg: &NoiseConfig, rng: &mut ChaCha8Rng) -> DepthImage {
    let s1 = salt_pepper(img, cfg.p_sp, rng);
    let s2 = gaussian_noise(&s1, cfg.mu_g, cfg.sigma_g, rng);
    motion_blur(&s2, cfg.k_mb, rng)
}

/// Adds an independent clipped Gaussian draw to each of the 8 components;
/// the yaw deviation is re-wrapped afterwards.
pub fn corrupt_state(s: &SelfState, cfg: &NoiseConfig, rng: &mut ChaCha8Rng) -> SelfState {
    let bound = cfg.state_clip * cfg.sigma_s;
    let draw = |rng: &mut ChaCha8Rng| -> f64 {
        if cfg.sigma_s == 0.0 {
            return cfg.mu_s.clamp(-bound, bound);
        }
        let n = Normal::new(cfg.mu_s, cfg.sigma_s).expect("valid normal");
        n.sample(rng).clamp(-bound, bound)
    };
    SelfState {
        d: [
            s.d[0] + draw(rng),
            s.d[1] + draw(rng),
            s.d[2] + draw(rng),
        ],
        v: [
            s.v[0] + draw(rng),
            s.v[1] + draw(rng),
            s.v[2] + draw(rng),
        ],
        dpsi: wrap_angle(s.dpsi + draw(rng)),
        yaw_rate: s.yaw_rate + draw(rng),
    }
}

/// Produces the deployable (non-privileged) observation from the clean one.
pub fn corrupt_observation(
    obs: &Observation,
    cfg: &NoiseConfig,
    rng: &mut ChaCha8Rng,
) -> Observation {
    Observation {
        depth: corrupt_depth(&obs.depth, cfg, rng),
        state: corrupt_state(&obs.state, cfg, rng),
        privileged: false,
    }
}
