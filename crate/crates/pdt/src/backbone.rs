//! Frozen embedding backbone: a small strided CNN standing in for a large
//! pre-trained face recognition network. It is differentiable (gradients
//! flow through to an upstream block) but its weights are never updated.

use crate::data::Container;
use crate::error::{Error, Result};
use crate::tensor::{self, ReduceKind, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

pub const INPUT_SIZE: usize = 112;

/// conv3x3 stride-2 stages, channels 3 -> 8 -> 16 -> 32 -> 64.
const STAGE_CHANNELS: [usize; 5] = [3, 8, 16, 32, 64];

pub struct Backbone {
    pub embed_dim: usize,
    params: Vec<(String, Tensor)>,
}

fn layout(embed_dim: usize) -> Vec<(String, Vec<usize>, usize)> {
    let mut l = Vec::new();
    for s in 0..4 {
        let (cin, cout) = (STAGE_CHANNELS[s], STAGE_CHANNELS[s + 1]);
        l.push((format!("stage{s}.weight"), vec![cout, cin, 3, 3], cin * 9));
        l.push((format!("stage{s}.bias"), vec![cout], cin * 9));
    }
    l.push(("fc.weight".into(), vec![64, embed_dim], 64));
    l.push(("fc.bias".into(), vec![embed_dim], 64));
    l
}

impl Backbone {
    /// Seeded random frozen backbone.
    pub fn toy(seed: u64, embed_dim: usize) -> Result<Backbone> {
        if embed_dim < 2 {
            return Err(Error::Config(format!(
                "embed_dim must be at least 2, got {embed_dim}"
            )));
        }
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        for (name, shape, fan_in) in layout(embed_dim) {
            let n: usize = shape.iter().product();
            let data = if name.ends_with(".bias") {
                vec![0.0; n]
            } else {
                let bound = (6.0 / fan_in as f64).sqrt();
                (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
            };
            let t = Tensor::from_vec(shape, data)?; // requires_grad = false
            params.push((name, t));
        }
        Ok(Backbone { embed_dim, params })
    }

    pub fn params(&self) -> &[(String, Tensor)] {
        &self.params
    }

    fn param(&self, name: &str) -> &Tensor {
        &self
            .params
            .iter()
            .find(|(n, _)| n == name)
            .unwrap_or_else(|| panic!("no parameter '{name}'"))
            .1
    }

    /// Map [N,C,112,112] (C in {1,3}) to unit-norm embeddings [N,D].
    /// A single channel is replicated to three first.
    pub fn embed(&self, x: &Tensor) -> Result<Tensor> {
        let sh = x.shape().to_vec();
        if sh.len() != 4 || sh[2] != INPUT_SIZE || sh[3] != INPUT_SIZE {
            return Err(Error::Dimension(format!(
                "backbone expects [N,C,{INPUT_SIZE},{INPUT_SIZE}], got {sh:?}"
            )));
        }
        let x3 = match sh[1] {
            3 => x.clone(),
            1 => tensor::concat_channels(&[x.clone(), x.clone(), x.clone()])?,
            c => {
                return Err(Error::Dimension(format!(
                    "backbone accepts 1 or 3 channels, got {c}"
                )))
            }
        };
        let mut h = x3;
        for s in 0..4 {
            h = tensor::relu(&tensor::conv2d(
                &h,
                self.param(&format!("stage{s}.weight")),
                self.param(&format!("stage{s}.bias")),
                2,
                1,
            )?);
        }
        let pooled = tensor::reduce(&h, ReduceKind::Mean, &[2, 3], false)?; // [N,64]
        let emb = tensor::add(
            &tensor::matmul(&pooled, self.param("fc.weight"))?,
            self.param("fc.bias"),
        )?;
        tensor::l2_normalize(&emb)
    }

    /// FNV-1a hash over the exact parameter bytes; training must not change it.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for (name, p) in &self.params {
            for b in name.as_bytes() {
                h = (h ^ *b as u64).wrapping_mul(0x100_0000_01b3);
            }
            for v in p.data().iter() {
                for b in v.to_le_bytes() {
                    h = (h ^ b as u64).wrapping_mul(0x100_0000_01b3);
                }
            }
        }
        h
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new();
        c.insert("config/embed_dim", vec![1], vec![self.embed_dim as f64])
            .expect("config entry");
        for (name, p) in &self.params {
            c.insert(name, p.shape().to_vec(), p.to_vec()).expect("param entry");
        }
        c
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        self.to_container().write(path)
    }

    pub fn from_container(container: &Container) -> Result<Backbone> {
        let dim_entry = container
            .get("config/embed_dim")
            .ok_or_else(|| Error::Format("backbone container missing entry 'config/embed_dim'".into()))?;
        let embed_dim = dim_entry.data[0] as usize;
        if embed_dim < 2 {
            return Err(Error::Format(format!("bad embed_dim {embed_dim} in container")));
        }
        let mut params = Vec::new();
        for (name, shape, _) in layout(embed_dim) {
            let e = container
                .get(&name)
                .ok_or_else(|| Error::Format(format!("backbone container missing entry '{name}'")))?;
            if e.shape != shape {
                return Err(Error::Format(format!(
                    "backbone entry '{name}' has shape {:?}, expected {shape:?}",
                    e.shape
                )));
            }
            params.push((name, Tensor::from_vec(shape, e.data.clone())?));
        }
        Ok(Backbone { embed_dim, params })
    }

    pub fn load(path: &std::path::Path) -> Result<Backbone> {
        Self::from_container(&Container::read(path)?)
    }
}
