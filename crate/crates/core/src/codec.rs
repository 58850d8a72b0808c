//! Per-patch linear image codec.
//!
//! Images are split into non-overlapping 8x8 RGB patches; a learned affine
//! map takes each 192-vector to a 16-channel latent and a second affine map
//! takes it back. Latents are standardized to zero mean / unit variance over
//! the training set, with the statistics stored alongside the weights. The
//! codec is trained once and stays frozen through every diffusion stage.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::optim::{adamw_step, AdamConfig, AdamState};
use crate::tensor::{Tape, Tensor};

/// Spatial downscale factor between image and latent grids.
pub const SCALE: usize = 8;
/// Latent channels per patch.
pub const LATENT_CHANNELS: usize = 16;
const PATCH_DIM: usize = SCALE * SCALE * 3;

/// Float RGB image, row-major, values in [0, 1].
#[derive(Clone, PartialEq)]
pub struct ImageRgb {
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
}

impl ImageRgb {
    pub fn filled(h: usize, w: usize, rgb: [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(h * w * 3);
        for _ in 0..h * w {
            data.extend_from_slice(&rgb);
        }
        ImageRgb { h, w, data }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.w + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let i = (y * self.w + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn mse(&self, other: &ImageRgb) -> f32 {
        debug_assert_eq!(self.data.len(), other.data.len());
        let n = self.data.len() as f64;
        let sum: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| ((a - b) as f64).powi(2))
            .sum();
        (sum / n) as f32
    }

    /// MSE restricted to pixels where `mask` is true (h*w entries).
    pub fn masked_mse(&self, other: &ImageRgb, mask: &[bool]) -> f32 {
        debug_assert_eq!(mask.len(), self.h * self.w);
        let mut sum = 0.0f64;
        let mut count = 0usize;
        for (p, &keep) in mask.iter().enumerate() {
            if !keep {
                continue;
            }
            for c in 0..3 {
                let d = (self.data[p * 3 + c] - other.data[p * 3 + c]) as f64;
                sum += d * d;
            }
            count += 3;
        }
        if count == 0 {
            0.0
        } else {
            (sum / count as f64) as f32
        }
    }

    /// Peak signal-to-noise ratio against a reference, peak = 1.0.
    pub fn psnr(&self, other: &ImageRgb) -> f32 {
        let mse = self.mse(other);
        if mse <= 0.0 {
            f32::INFINITY
        } else {
            -10.0 * mse.log10()
        }
    }

    pub fn save_png(&self, path: &std::path::Path) -> Result<()> {
        let mut img = image::RgbImage::new(self.w as u32, self.h as u32);
        for y in 0..self.h {
            for x in 0..self.w {
                let [r, g, b] = self.get(x, y);
                let q = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
                img.put_pixel(x as u32, y as u32, image::Rgb([q(r), q(g), q(b)]));
            }
        }
        img.save(path)
            .map_err(|e| Error::Checkpoint(format!("png write {}: {e}", path.display())))
    }

    pub fn load_png(path: &std::path::Path) -> Result<Self> {
        let img = image::open(path)
            .map_err(|e| Error::Checkpoint(format!("png read {}: {e}", path.display())))?
            .into_rgb8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut out = ImageRgb::filled(h, w, [0.0; 3]);
        for y in 0..h {
            for x in 0..w {
                let p = img.get_pixel(x as u32, y as u32);
                out.set(x, y, [p[0] as f32 / 255.0, p[1] as f32 / 255.0, p[2] as f32 / 255.0]);
            }
        }
        Ok(out)
    }
}

/// Latent grid: `gh * gw` positions of [`LATENT_CHANNELS`] channels.
#[derive(Clone, PartialEq)]
pub struct Latent {
    pub gh: usize,
    pub gw: usize,
    pub data: Vec<f32>,
}

impl Latent {
    pub fn zeros(gh: usize, gw: usize) -> Self {
        Latent { gh, gw, data: vec![0.0; gh * gw * LATENT_CHANNELS] }
    }

    pub fn tokens(&self) -> usize {
        self.gh * self.gw
    }
}

/// The learned codec: encoder/decoder affine maps plus latent statistics.
pub struct PatchCodec {
    pub enc_w: Tensor, // [192, 16]
    pub enc_b: Tensor, // [16]
    pub dec_w: Tensor, // [16, 192]
    pub dec_b: Tensor, // [192]
    pub mu: Vec<f32>,
    pub sigma: Vec<f32>,
}

impl PatchCodec {
    pub fn init(seed: u64) -> Self {
        PatchCodec {
            enc_w: Tensor::randn(&[PATCH_DIM, LATENT_CHANNELS], 0.05, seed ^ 0x1).with_grad(),
            enc_b: Tensor::zeros(&[LATENT_CHANNELS]).with_grad(),
            dec_w: Tensor::randn(&[LATENT_CHANNELS, PATCH_DIM], 0.05, seed ^ 0x2).with_grad(),
            dec_b: Tensor::zeros(&[PATCH_DIM]).with_grad(),
            mu: vec![0.0; LATENT_CHANNELS],
            sigma: vec![1.0; LATENT_CHANNELS],
        }
    }

    fn check_dims(img: &ImageRgb) -> Result<(usize, usize)> {
        if img.h % SCALE != 0 || img.w % SCALE != 0 {
            return Err(Error::contract(format!(
                "image {}x{} not divisible by the {SCALE}x{SCALE} patch size",
                img.h, img.w
            )));
        }
        if img.h < 2 * SCALE || img.w < 2 * SCALE {
            return Err(Error::contract(format!("image {}x{} below minimum 16x16", img.h, img.w)));
        }
        Ok((img.h / SCALE, img.w / SCALE))
    }

    /// Flatten the patch at grid position (gx, gy) into a 192-vector.
    fn patch_vec(img: &ImageRgb, gx: usize, gy: usize, out: &mut Vec<f32>) {
        for dy in 0..SCALE {
            for dx in 0..SCALE {
                let [r, g, b] = img.get(gx * SCALE + dx, gy * SCALE + dy);
                out.push(r);
                out.push(g);
                out.push(b);
            }
        }
    }

    pub fn encode(&self, img: &ImageRgb) -> Result<Latent> {
        let (gh, gw) = Self::check_dims(img)?;
        let mut patches = Vec::with_capacity(gh * gw * PATCH_DIM);
        for gy in 0..gh {
            for gx in 0..gw {
                Self::patch_vec(img, gx, gy, &mut patches);
            }
        }
        let x = Tensor::new(patches, &[gh * gw, PATCH_DIM])?;
        let z = x.matmul(&self.enc_w.detach())?.add_row(&self.enc_b.detach())?;
        let mut data = z.data().to_vec();
        for row in data.chunks_exact_mut(LATENT_CHANNELS) {
            for (c, v) in row.iter_mut().enumerate() {
                *v = (*v - self.mu[c]) / self.sigma[c];
            }
        }
        Ok(Latent { gh, gw, data })
    }

    pub fn decode(&self, z: &Latent) -> Result<ImageRgb> {
        let mut unstd = z.data.clone();
        for row in unstd.chunks_exact_mut(LATENT_CHANNELS) {
            for (c, v) in row.iter_mut().enumerate() {
                *v = *v * self.sigma[c] + self.mu[c];
            }
        }
        let zt = Tensor::new(unstd, &[z.tokens(), LATENT_CHANNELS])?;
        let px = zt.matmul(&self.dec_w.detach())?.add_row(&self.dec_b.detach())?;
        let mut img = ImageRgb::filled(z.gh * SCALE, z.gw * SCALE, [0.0; 3]);
        for gy in 0..z.gh {
            for gx in 0..z.gw {
                let row = &px.data()[(gy * z.gw + gx) * PATCH_DIM..(gy * z.gw + gx + 1) * PATCH_DIM];
                let mut k = 0;
                for dy in 0..SCALE {
                    for dx in 0..SCALE {
                        img.set(
                            gx * SCALE + dx,
                            gy * SCALE + dy,
                            [
                                row[k].clamp(0.0, 1.0),
                                row[k + 1].clamp(0.0, 1.0),
                                row[k + 2].clamp(0.0, 1.0),
                            ],
                        );
                        k += 3;
                    }
                }
            }
        }
        Ok(img)
    }

    pub fn into_store(self, store: &mut ParamStore) {
        store.insert("codec.enc.w", self.enc_w.detach());
        store.insert("codec.enc.b", self.enc_b.detach());
        store.insert("codec.dec.w", self.dec_w.detach());
        store.insert("codec.dec.b", self.dec_b.detach());
        store.insert("codec.mu", Tensor::new(self.mu, &[LATENT_CHANNELS]).unwrap());
        store.insert("codec.sigma", Tensor::new(self.sigma, &[LATENT_CHANNELS]).unwrap());
    }

    pub fn from_store(store: &ParamStore) -> Result<Self> {
        Ok(PatchCodec {
            enc_w: store.get("codec.enc.w")?.detach(),
            enc_b: store.get("codec.enc.b")?.detach(),
            dec_w: store.get("codec.dec.w")?.detach(),
            dec_b: store.get("codec.dec.b")?.detach(),
            mu: store.get("codec.mu")?.data().to_vec(),
            sigma: store.get("codec.sigma")?.data().to_vec(),
        })
    }
}

/// Reconstruction-train the codec on a set of images. Batches are patches
/// sampled uniformly from the dataset; loss history is returned per step.
/// After the loop, latent statistics are fitted over every training patch.
pub fn train_codec(
    codec: &mut PatchCodec,
    images: &[ImageRgb],
    steps: usize,
    lr: f32,
    seed: u64,
) -> Result<Vec<f32>> {
    if images.is_empty() {
        return Err(Error::config("codec training set is empty".to_string()));
    }
    for img in images {
        PatchCodec::check_dims(img)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = AdamState::default();
    let batch = 128;
    let mut losses = Vec::with_capacity(steps);

    for step in 0..steps {
        let mut patches = Vec::with_capacity(batch * PATCH_DIM);
        for _ in 0..batch {
            let img = &images[rng.random_range(0..images.len())];
            let gx = rng.random_range(0..img.w / SCALE);
            let gy = rng.random_range(0..img.h / SCALE);
            PatchCodec::patch_vec(img, gx, gy, &mut patches);
        }
        let tape = Tape::new();
        let x = Tensor::new(patches, &[batch, PATCH_DIM])?;
        let ew = tape.leaf(&codec.enc_w);
        let eb = tape.leaf(&codec.enc_b);
        let dw = tape.leaf(&codec.dec_w);
        let db = tape.leaf(&codec.dec_b);
        let z = x.matmul(&ew)?.add_row(&eb)?;
        let rec = z.matmul(&dw)?.add_row(&db)?;
        let loss = rec.sub(&x)?.square()?.mean_all()?;
        let loss_val = loss.item()?;
        if !loss_val.is_finite() {
            return Err(Error::Numerical { step, detail: format!("codec loss {loss_val}") });
        }
        losses.push(loss_val);

        let grads = tape.backward(&loss)?;
        let mut gm = std::collections::BTreeMap::new();
        gm.insert("enc.w".to_string(), grads.grad(&ew)?);
        gm.insert("enc.b".to_string(), grads.grad(&eb)?);
        gm.insert("dec.w".to_string(), grads.grad(&dw)?);
        gm.insert("dec.b".to_string(), grads.grad(&db)?);
        drop(grads);
        drop(tape);

        let cfg = AdamConfig { lr, ..Default::default() };
        adamw_step(
            &mut [
                ("enc.w", codec.enc_w.data_mut()),
                ("enc.b", codec.enc_b.data_mut()),
                ("dec.w", codec.dec_w.data_mut()),
                ("dec.b", codec.dec_b.data_mut()),
            ],
            &gm,
            &mut state,
            &cfg,
        )?;
    }

    if steps > 0 {
        fit_latent_stats(codec, images)?;
    }
    Ok(losses)
}

/// Mean/std of raw encoder outputs over all patches of the training images.
fn fit_latent_stats(codec: &mut PatchCodec, images: &[ImageRgb]) -> Result<()> {
    codec.mu = vec![0.0; LATENT_CHANNELS];
    codec.sigma = vec![1.0; LATENT_CHANNELS];
    let mut sum = vec![0.0f64; LATENT_CHANNELS];
    let mut sumsq = vec![0.0f64; LATENT_CHANNELS];
    let mut count = 0usize;
    for img in images {
        let z = codec.encode(img)?;
        for row in z.data.chunks_exact(LATENT_CHANNELS) {
            for (c, v) in row.iter().enumerate() {
                sum[c] += *v as f64;
                sumsq[c] += (*v as f64) * (*v as f64);
            }
            count += 1;
        }
    }
    for c in 0..LATENT_CHANNELS {
        let mean = sum[c] / count as f64;
        let var = (sumsq[c] / count as f64 - mean * mean).max(1e-8);
        codec.mu[c] = mean as f32;
        codec.sigma[c] = var.sqrt() as f32;
    }
    Ok(())
}
