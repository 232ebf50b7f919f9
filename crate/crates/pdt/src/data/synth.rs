//! Deterministic synthetic two-domain identity dataset.
//!
//! Each identity is a sum of seeded Gaussian blobs rendered to three
//! channels with identity-specific channel weights. The target domain is a
//! fixed transform of the source template: invert the luminance, box-blur
//! it twice, keep a single channel. Samples add i.i.d. Gaussian noise and
//! clip to [0,1]. Everything is a pure function of the spec's seed.

use super::container::Container;
use super::manifest::{Domain, Manifest, ManifestRow, Split};
use super::mix_seed;
use crate::error::{Error, Result};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use std::fs;
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub n_identities: usize,
    /// samples per identity per domain
    pub samples_per_identity: usize,
    pub image_size: usize,
    pub blob_count: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_identities: 30,
            samples_per_identity: 5,
            image_size: 112,
            blob_count: 6,
            noise_sigma: 0.05,
            seed: 42,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_identities < 5 {
            return Err(Error::Config(format!(
                "data.n_identities must be at least 5 to fill all splits, got {}",
                self.n_identities
            )));
        }
        if self.samples_per_identity == 0 {
            return Err(Error::Config("data.samples_per_identity must be positive".into()));
        }
        if self.image_size < 8 {
            return Err(Error::Config("data.image_size must be at least 8".into()));
        }
        if self.blob_count == 0 {
            return Err(Error::Config("data.blob_count must be positive".into()));
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::Config("data.noise_sigma must be nonnegative".into()));
        }
        Ok(())
    }
}

struct Blob {
    cx: f64,
    cy: f64,
    sigma: f64,
    amp: f64,
}

/// Noiseless 3-channel source template, flat [3,S,S].
pub fn source_template(spec: &SynthSpec, id: u32) -> Vec<f64> {
    let s = spec.image_size;
    let mut rng = ChaCha12Rng::seed_from_u64(mix_seed(spec.seed, "identity", id as u64, 0));
    let blobs: Vec<Blob> = (0..spec.blob_count)
        .map(|_| Blob {
            cx: rng.gen_range(0.1..0.9) * s as f64,
            cy: rng.gen_range(0.1..0.9) * s as f64,
            sigma: rng.gen_range(0.04..0.16) * s as f64,
            amp: rng.gen_range(0.4..1.0),
        })
        .collect();
    let weights: [f64; 3] = [
        rng.gen_range(0.3..1.0),
        rng.gen_range(0.3..1.0),
        rng.gen_range(0.3..1.0),
    ];
    let mut field = vec![0.0; s * s];
    for b in &blobs {
        let inv = 1.0 / (2.0 * b.sigma * b.sigma);
        for y in 0..s {
            let dy = y as f64 - b.cy;
            for x in 0..s {
                let dx = x as f64 - b.cx;
                field[y * s + x] += b.amp * (-(dx * dx + dy * dy) * inv).exp();
            }
        }
    }
    let mut out = vec![0.0; 3 * s * s];
    for (c, &w) in weights.iter().enumerate() {
        for i in 0..s * s {
            out[c * s * s + i] = (w * field[i]).clamp(0.0, 1.0);
        }
    }
    out
}

/// The fixed source->target appearance transform: 1 - luminance, box-blurred
/// twice, single channel. Input flat [3,S,S], output flat [1,S,S].
pub fn domain_transform(src: &[f64], s: usize) -> Vec<f64> {
    let plane = s * s;
    let mut lum = vec![0.0; plane];
    for i in 0..plane {
        lum[i] = 1.0 - (0.299 * src[i] + 0.587 * src[plane + i] + 0.114 * src[2 * plane + i]);
    }
    let once = box_blur3(&lum, s);
    box_blur3(&once, s)
}

/// Noiseless single-channel target template.
pub fn target_template(spec: &SynthSpec, id: u32) -> Vec<f64> {
    domain_transform(&source_template(spec, id), spec.image_size)
}

/// 3x3 box blur, zero padded, fixed divisor 9.
fn box_blur3(img: &[f64], s: usize) -> Vec<f64> {
    let mut out = vec![0.0; s * s];
    for y in 0..s {
        for x in 0..s {
            let mut acc = 0.0;
            for dy in -1i64..=1 {
                let yy = y as i64 + dy;
                if yy < 0 || yy >= s as i64 {
                    continue;
                }
                for dx in -1i64..=1 {
                    let xx = x as i64 + dx;
                    if xx >= 0 && xx < s as i64 {
                        acc += img[yy as usize * s + xx as usize];
                    }
                }
            }
            out[y * s + x] = acc / 9.0;
        }
    }
    out
}

fn gauss(rng: &mut ChaCha12Rng) -> f64 {
    // Box-Muller; u1 strictly positive
    let u1: f64 = loop {
        let u: f64 = rng.gen();
        if u > 0.0 {
            break u;
        }
    };
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// One noisy sample, flat [C,S,S].
pub fn render_sample(spec: &SynthSpec, id: u32, sample_idx: usize, domain: Domain) -> Vec<f64> {
    let template = match domain {
        Domain::Source => source_template(spec, id),
        Domain::Target => target_template(spec, id),
    };
    let mut rng = ChaCha12Rng::seed_from_u64(mix_seed(
        spec.seed,
        "sample",
        (id as u64) << 16 | sample_idx as u64,
        match domain {
            Domain::Source => 0,
            Domain::Target => 1,
        },
    ));
    template
        .iter()
        .map(|&v| (v + spec.noise_sigma * gauss(&mut rng)).clamp(0.0, 1.0))
        .collect()
}

fn split_of(spec: &SynthSpec, split_seed: u64) -> Vec<Split> {
    let n = spec.n_identities;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha12Rng::seed_from_u64(split_seed);
    order.shuffle(&mut rng);
    let n_train = n * 6 / 10;
    let n_val = n * 2 / 10;
    let mut splits = vec![Split::Train; n];
    for (pos, &id) in order.iter().enumerate() {
        splits[id] = if pos < n_train {
            Split::Train
        } else if pos < n_train + n_val {
            Split::Val
        } else {
            Split::EvalGallery // placeholder; per-row split set below
        };
    }
    splits
}

fn gen_with_split_seed(spec: &SynthSpec, split_seed: u64, out_dir: &Path) -> Result<Manifest> {
    spec.validate()?;
    let images = out_dir.join("images");
    fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    let id_splits = split_of(spec, split_seed);
    let s = spec.image_size;
    let mut rows = Vec::new();
    for id in 0..spec.n_identities as u32 {
        for idx in 0..spec.samples_per_identity {
            for domain in [Domain::Source, Domain::Target] {
                let data = render_sample(spec, id, idx, domain);
                let c = match domain {
                    Domain::Source => 3,
                    Domain::Target => 1,
                };
                let rel = format!("images/img_{id:03}_{}_{idx}.pdtc", domain.as_str());
                let mut cont = Container::new();
                cont.insert("image", vec![c, s, s], data)?;
                cont.write(&out_dir.join(&rel))?;
                let split = match (id_splits[id as usize], domain) {
                    (Split::Train, _) => Split::Train,
                    (Split::Val, _) => Split::Val,
                    (_, Domain::Source) => Split::EvalGallery,
                    (_, Domain::Target) => Split::EvalProbe,
                };
                rows.push(ManifestRow {
                    id,
                    domain,
                    split,
                    path: rel,
                });
            }
        }
    }
    let manifest = Manifest {
        rows,
        dir: out_dir.to_path_buf(),
    };
    manifest.validate()?;
    manifest.write(&out_dir.join("manifest.csv"))?;
    Ok(manifest)
}

/// Generate the dataset and its manifest under `out_dir`.
pub fn gen_dataset(spec: &SynthSpec, out_dir: &Path) -> Result<Manifest> {
    gen_with_split_seed(spec, mix_seed(spec.seed, "split", 0, 0), out_dir)
}

/// `n_folds` independent identity shuffles; fold 0 matches [`gen_dataset`].
pub fn gen_folds(spec: &SynthSpec, n_folds: usize, out_dir: &Path) -> Result<Vec<Manifest>> {
    if n_folds == 0 {
        return Err(Error::Config("n_folds must be at least 1".into()));
    }
    let mut out = Vec::with_capacity(n_folds);
    for fold in 0..n_folds {
        let dir = out_dir.join(format!("fold_{fold}"));
        out.push(gen_with_split_seed(
            spec,
            mix_seed(spec.seed, "split", fold as u64, 0),
            &dir,
        )?);
    }
    Ok(out)
}

/// Keep a seeded random subset of train (and val) identities; eval rows are
/// untouched. `fraction` applies by the ceiling rule to the identity counts.
pub fn subset_train(manifest: &Manifest, fraction: f64, seed: u64) -> Result<Manifest> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Data(format!(
            "train fraction must be in (0, 1], got {fraction}"
        )));
    }
    let pick = |ids: &[u32], tag: &str, floor: usize| -> Vec<u32> {
        let keep = ((fraction * ids.len() as f64).ceil() as usize).max(floor.min(ids.len()));
        let mut order = ids.to_vec();
        let mut rng = ChaCha12Rng::seed_from_u64(mix_seed(seed, tag, 0, 0));
        order.shuffle(&mut rng);
        order.truncate(keep);
        order
    };
    let train_ids: Vec<u32> = manifest.ids_in_split(Split::Train).into_iter().collect();
    let val_ids: Vec<u32> = manifest.ids_in_split(Split::Val).into_iter().collect();
    let kept_train = pick(&train_ids, "subset-train", 0);
    if kept_train.len() < 2 {
        return Err(Error::Data(format!(
            "fraction {fraction} keeps only {} train identities; at least 2 required",
            kept_train.len()
        )));
    }
    // the validation pool shrinks with the same rule but keeps at least two
    // identities so impostor pairs remain possible
    let kept_val = pick(&val_ids, "subset-val", 2);
    let rows = manifest
        .rows
        .iter()
        .filter(|r| match r.split {
            Split::Train => kept_train.contains(&r.id),
            Split::Val => kept_val.contains(&r.id),
            _ => true,
        })
        .cloned()
        .collect();
    Ok(Manifest {
        rows,
        dir: manifest.dir.clone(),
    })
}
