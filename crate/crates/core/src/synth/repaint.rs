//! Inpainting backend contract and the deterministic reference repainter.

use alloc::vec::Vec;

use rand::Rng as _;

use crate::math::floor;
use crate::rng::{derive_seed, rng_for, rng_from, stable_hash};
use crate::synth::NoiseFactor;
use crate::{BinaryMask, Error, ImageGrid, Result};

/// Sampler configuration shared by all backends.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackendConfig {
    /// Diffusion steps of the original schedule (`T`).
    pub total_steps: usize,
    /// Accelerated sampling steps.
    pub accelerated_steps: usize,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            total_steps: 1000,
            accelerated_steps: 10,
        }
    }
}

impl BackendConfig {
    /// Forward (noising) steps `T' = T * gamma`.
    pub fn forward_steps(&self, gamma: NoiseFactor) -> usize {
        crate::math::round(self.total_steps as f64 * gamma.value()) as usize
    }
}

/// Mask-controlled, prompt-conditioned repainting.
///
/// Implementations must return an image of the input resolution that is
/// identical to the input wherever `mask` is zero. One call at a time per
/// instance; the synthesis routines composite the result again, so a
/// backend that leaks outside the mask cannot break that guarantee.
pub trait InpaintBackend {
    fn config(&self) -> BackendConfig;

    fn repaint(
        &mut self,
        image: &ImageGrid,
        mask: &BinaryMask,
        prompt: &str,
        gamma: NoiseFactor,
        seed: u64,
    ) -> Result<ImageGrid>;
}

/// Blend repainter: inside the mask the output moves from the source image
/// toward a perturbation with weight `gamma`.
#[derive(Debug, Clone, Default)]
pub struct ReferenceRepainter {
    pub config: BackendConfig,
}

impl InpaintBackend for ReferenceRepainter {
    fn config(&self) -> BackendConfig {
        self.config
    }

    fn repaint(
        &mut self,
        image: &ImageGrid,
        mask: &BinaryMask,
        prompt: &str,
        gamma: NoiseFactor,
        seed: u64,
    ) -> Result<ImageGrid> {
        image.same_dims(mask)?;
        Ok(reference_blend_repaint(image, mask, prompt, gamma.value(), seed))
    }
}

/// Largest magnitude of the prompt-keyed color shift per channel.
pub const TINT_MAGNITUDE: f64 = 0.6;
const NOISE_CELL: usize = 16;
const NOISE_AMPLITUDE: f64 = 0.06;

/// Per-channel color shift keyed by the prompt text.
pub fn prompt_tint(prompt: &str) -> [f64; 3] {
    let mut rng = rng_from(stable_hash(prompt));
    [0; 3].map(|_| rng.gen_range(-TINT_MAGNITUDE..=TINT_MAGNITUDE))
}

/// `out = (1 - gamma) * image + gamma * perturbation` inside the mask,
/// clamped to `[0, 1]`; bit-identical to `image` outside it. `gamma` is
/// taken as given in `[0, 1]`.
///
/// The perturbation is the image shifted by a seeded offset (a texture
/// patch from elsewhere in the image), plus the prompt tint, plus smooth
/// seeded noise.
pub fn reference_blend_repaint(image: &ImageGrid, mask: &BinaryMask, prompt: &str, gamma: f64, seed: u64) -> ImageGrid {
    let (h, w) = image.dims();
    let mut rng = rng_for(seed, &[stable_hash(prompt)]);
    let off_y = rng.gen_range(0..h);
    let off_x = rng.gen_range(0..w);
    let tint = prompt_tint(prompt);
    let noise = SmoothNoise::new(h, w, derive_seed(seed, &[0x6e6f697365]));

    let mut out = image.clone();
    for y in 0..h {
        for x in 0..w {
            if *mask.get(y, x) == 0 {
                continue;
            }
            let src = image.get(y, x);
            let patch = image.get((y + off_y) % h, (x + off_x) % w);
            let n = noise.sample(y, x);
            let px = out.get_mut(y, x);
            for c in 0..3 {
                let pert = (f64::from(patch[c]) + tint[c] + n[c]).clamp(0.0, 1.0);
                let v = (1.0 - gamma) * f64::from(src[c]) + gamma * pert;
                px[c] = v.clamp(0.0, 1.0) as f32;
            }
        }
    }
    out
}

/// Band-limited noise: a coarse random lattice, bilinearly interpolated.
struct SmoothNoise {
    cells_y: usize,
    cells_x: usize,
    scale_y: f64,
    scale_x: f64,
    lattice: Vec<[f64; 3]>,
}

impl SmoothNoise {
    fn new(h: usize, w: usize, seed: u64) -> Self {
        let cells_y = h / NOISE_CELL + 2;
        let cells_x = w / NOISE_CELL + 2;
        let mut rng = rng_from(seed);
        let lattice = (0..cells_y * cells_x)
            .map(|_| [0; 3].map(|_| rng.gen_range(-NOISE_AMPLITUDE..=NOISE_AMPLITUDE)))
            .collect();
        Self {
            cells_y,
            cells_x,
            scale_y: (cells_y - 1) as f64 / h as f64,
            scale_x: (cells_x - 1) as f64 / w as f64,
            lattice,
        }
    }

    fn sample(&self, y: usize, x: usize) -> [f64; 3] {
        let fy = (y as f64 + 0.5) * self.scale_y;
        let fx = (x as f64 + 0.5) * self.scale_x;
        let iy = (floor(fy) as usize).min(self.cells_y - 2);
        let ix = (floor(fx) as usize).min(self.cells_x - 2);
        let (ty, tx) = (fy - iy as f64, fx - ix as f64);
        let at = |a: usize, b: usize| self.lattice[a * self.cells_x + b];
        let (p00, p01, p10, p11) = (at(iy, ix), at(iy, ix + 1), at(iy + 1, ix), at(iy + 1, ix + 1));
        [0, 1, 2].map(|c| {
            let top = p00[c] + tx * (p01[c] - p00[c]);
            let bottom = p10[c] + tx * (p11[c] - p10[c]);
            top + ty * (bottom - top)
        })
    }
}

/// Keeps `repainted` only inside `mask`. Fails when the backend changed
/// the resolution.
pub(crate) fn composite(source: &ImageGrid, repainted: ImageGrid, mask: &BinaryMask) -> Result<ImageGrid> {
    if repainted.dims() != source.dims() {
        return Err(Error::BackendFailure(alloc::format!(
            "backend returned {:?} for a {:?} input",
            repainted.dims(),
            source.dims()
        )));
    }
    let mut out = repainted;
    for ((o, s), m) in out.as_mut_slice().iter_mut().zip(source.as_slice()).zip(mask.as_slice()) {
        if *m == 0 {
            *o = *s;
        }
    }
    Ok(out)
}
