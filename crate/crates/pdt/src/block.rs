//! The prepended domain transformer block: four parallel convolution
//! branches with 1x1 channel reduction, channel-then-spatial attention,
//! and a final 1x1 projection back to three channels. Resolution and
//! channel count are preserved, so the block can sit in front of any
//! image-input embedding network.

use crate::data::Container;
use crate::error::{Error, Result};
use crate::tensor::{self, ReduceKind, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PdtConfig {
    /// output channels of each branch
    pub branch_channels: usize,
    /// channel-MLP bottleneck divisor
    pub cbam_reduction: usize,
    pub spatial_kernel: usize,
    pub pool_kernel: usize,
}

impl Default for PdtConfig {
    fn default() -> Self {
        PdtConfig {
            branch_channels: 5,
            cbam_reduction: 4,
            spatial_kernel: 7,
            pool_kernel: 3,
        }
    }
}

impl PdtConfig {
    pub fn validate(&self) -> Result<()> {
        let c = self.branch_channels;
        let r = self.cbam_reduction;
        if c == 0 || r == 0 {
            return Err(Error::Config("branch_channels and cbam_reduction must be positive".into()));
        }
        if (4 * c) % r != 0 {
            return Err(Error::Config(format!(
                "4 * branch_channels ({}) must be divisible by cbam_reduction ({r})",
                4 * c
            )));
        }
        if self.spatial_kernel % 2 == 0 || self.spatial_kernel == 0 {
            return Err(Error::Config(format!(
                "spatial_kernel must be odd, got {}",
                self.spatial_kernel
            )));
        }
        if self.pool_kernel % 2 == 0 || self.pool_kernel == 0 {
            return Err(Error::Config(format!(
                "pool_kernel must be odd, got {}",
                self.pool_kernel
            )));
        }
        Ok(())
    }

    fn hidden(&self) -> usize {
        4 * self.branch_channels / self.cbam_reduction
    }

    /// (name, shape, fan_in) of every parameter, in initialization order.
    fn layout(&self) -> Vec<(String, Vec<usize>, usize)> {
        let c = self.branch_channels;
        let h = self.hidden();
        let sk = self.spatial_kernel;
        let mut l: Vec<(String, Vec<usize>, usize)> = Vec::new();
        fn conv(l: &mut Vec<(String, Vec<usize>, usize)>, name: &str, cout: usize, cin: usize, k: usize) {
            l.push((format!("{name}.weight"), vec![cout, cin, k, k], cin * k * k));
            l.push((format!("{name}.bias"), vec![cout], cin * k * k));
        }
        conv(&mut l, "b1.conv", c, 3, 1);
        conv(&mut l, "b2.reduce", c, 3, 1);
        conv(&mut l, "b2.conv", c, c, 3);
        conv(&mut l, "b3.reduce", c, 3, 1);
        conv(&mut l, "b3.conv", c, c, 5);
        conv(&mut l, "b4.conv", c, 3, 1);
        l.push(("cbam.fc1.weight".into(), vec![4 * c, h], 4 * c));
        l.push(("cbam.fc1.bias".into(), vec![h], 4 * c));
        l.push(("cbam.fc2.weight".into(), vec![h, 4 * c], h));
        l.push(("cbam.fc2.bias".into(), vec![4 * c], h));
        conv(&mut l, "cbam.spatial", 1, 2, sk);
        conv(&mut l, "proj", 3, 4 * c, 1);
        l
    }

    /// Per-layer trainable parameter counts (name, count).
    pub fn param_table(&self) -> Vec<(String, usize)> {
        self.layout()
            .into_iter()
            .map(|(n, s, _)| (n, s.iter().product()))
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.param_table().iter().map(|(_, c)| c).sum()
    }
}

pub struct PdtBlock {
    pub config: PdtConfig,
    params: Vec<(String, Tensor)>,
}

impl PdtBlock {
    /// Kaiming-uniform weights (bound sqrt(6/fan_in)), zero biases, drawn
    /// from a seeded generator; same (config, seed) gives a bit-identical
    /// block.
    pub fn init(config: PdtConfig, seed: u64) -> Result<PdtBlock> {
        config.validate()?;
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        for (name, shape, fan_in) in config.layout() {
            let n: usize = shape.iter().product();
            let data = if name.ends_with(".bias") {
                vec![0.0; n]
            } else {
                let bound = (6.0 / fan_in as f64).sqrt();
                (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
            };
            params.push((name, Tensor::param(shape, data)?));
        }
        Ok(PdtBlock { config, params })
    }

    pub fn params(&self) -> &[(String, Tensor)] {
        &self.params
    }

    pub fn param(&self, name: &str) -> &Tensor {
        &self
            .params
            .iter()
            .find(|(n, _)| n == name)
            .unwrap_or_else(|| panic!("no parameter '{name}'"))
            .1
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn zero_grads(&self) {
        for (_, p) in &self.params {
            p.zero_grad();
        }
    }

    /// Transform [N,3,H,W] -> [N,3,H,W].
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let sh = x.shape().to_vec();
        if sh.len() != 4 || sh[1] != 3 {
            return Err(Error::Dimension(format!(
                "pdt forward expects [N,3,H,W], got {sh:?}"
            )));
        }
        let sk = self.config.spatial_kernel;
        if sh[2] < sk || sh[3] < sk {
            return Err(Error::Dimension(format!(
                "spatial dims {}x{} smaller than spatial kernel {sk}",
                sh[2], sh[3]
            )));
        }
        let conv = |name: &str, input: &Tensor, pad: usize| {
            tensor::conv2d(
                input,
                self.param(&format!("{name}.weight")),
                self.param(&format!("{name}.bias")),
                1,
                pad,
            )
        };

        let b1 = tensor::relu(&conv("b1.conv", x, 0)?);
        let b2 = tensor::relu(&conv("b2.conv", &tensor::relu(&conv("b2.reduce", x, 0)?), 1)?);
        let b3 = tensor::relu(&conv("b3.conv", &tensor::relu(&conv("b3.reduce", x, 0)?), 2)?);
        let pk = self.config.pool_kernel;
        let pooled = tensor::avg_pool2d(x, pk, 1, (pk - 1) / 2)?;
        let b4 = tensor::relu(&conv("b4.conv", &pooled, 0)?);
        let f = tensor::concat_channels(&[b1, b2, b3, b4])?;
        let c4 = 4 * self.config.branch_channels;

        // channel attention: shared MLP over avg- and max-pooled descriptors
        let mlp = |d: &Tensor| -> Result<Tensor> {
            let h = tensor::relu(&tensor::add(
                &tensor::matmul(d, self.param("cbam.fc1.weight"))?,
                self.param("cbam.fc1.bias"),
            )?);
            tensor::add(
                &tensor::matmul(&h, self.param("cbam.fc2.weight"))?,
                self.param("cbam.fc2.bias"),
            )
        };
        let avg_desc = tensor::reduce(&f, ReduceKind::Mean, &[2, 3], false)?;
        let max_desc = tensor::reduce(&f, ReduceKind::Max, &[2, 3], false)?;
        let logits = tensor::add(&mlp(&avg_desc)?, &mlp(&max_desc)?)?;
        let mc = tensor::reshape(&tensor::sigmoid(&logits), vec![sh[0], c4, 1, 1])?;
        let f_c = tensor::mul(&f, &mc)?;

        // spatial attention over channel-mean and channel-max maps
        let ch_mean = tensor::reduce(&f_c, ReduceKind::Mean, &[1], true)?;
        let ch_max = tensor::reduce(&f_c, ReduceKind::Max, &[1], true)?;
        let sp_in = tensor::concat_channels(&[ch_mean, ch_max])?;
        let ms = tensor::sigmoid(&conv("cbam.spatial", &sp_in, (sk - 1) / 2)?);
        let f_cs = tensor::mul(&f_c, &ms)?;

        conv("proj", &f_cs, 0)
    }

    /// Serialize parameters plus the config as a tensor container.
    pub fn to_container(&self) -> Container {
        let mut c = Container::new();
        let cfg = &self.config;
        for (name, val) in [
            ("config/branch_channels", cfg.branch_channels),
            ("config/cbam_reduction", cfg.cbam_reduction),
            ("config/spatial_kernel", cfg.spatial_kernel),
            ("config/pool_kernel", cfg.pool_kernel),
        ] {
            c.insert(name, vec![1], vec![val as f64]).expect("config entry");
        }
        for (name, p) in &self.params {
            c.insert(name, p.shape().to_vec(), p.to_vec()).expect("param entry");
        }
        c
    }

    pub fn save_bytes(&self) -> Vec<u8> {
        self.to_container().to_bytes()
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        self.to_container().write(path)
    }

    pub fn from_container(container: &Container, config: PdtConfig) -> Result<PdtBlock> {
        config.validate()?;
        let cfg_val = |name: &str| -> Result<usize> {
            let e = container
                .get(name)
                .ok_or_else(|| Error::Format(format!("checkpoint missing entry '{name}'")))?;
            Ok(e.data[0] as usize)
        };
        for (name, expect) in [
            ("config/branch_channels", config.branch_channels),
            ("config/cbam_reduction", config.cbam_reduction),
            ("config/spatial_kernel", config.spatial_kernel),
            ("config/pool_kernel", config.pool_kernel),
        ] {
            let got = cfg_val(name)?;
            if got != expect {
                return Err(Error::Format(format!(
                    "checkpoint entry '{name}' is {got}, expected {expect}"
                )));
            }
        }
        let mut params = Vec::new();
        for (name, shape, _) in config.layout() {
            let e = container
                .get(&name)
                .ok_or_else(|| Error::Format(format!("checkpoint missing entry '{name}'")))?;
            if e.shape != shape {
                return Err(Error::Format(format!(
                    "checkpoint entry '{name}' has shape {:?}, expected {shape:?}",
                    e.shape
                )));
            }
            params.push((name, Tensor::param(shape, e.data.clone())?));
        }
        Ok(PdtBlock { config, params })
    }

    pub fn load_bytes(bytes: &[u8], config: PdtConfig) -> Result<PdtBlock> {
        Self::from_container(&Container::from_bytes(bytes)?, config)
    }

    /// Load taking the config from the checkpoint's own config entries.
    pub fn load_auto(path: &std::path::Path) -> Result<PdtBlock> {
        let container = Container::read(path)?;
        let cfg_val = |name: &str| -> Result<usize> {
            let e = container
                .get(name)
                .ok_or_else(|| Error::Format(format!("checkpoint missing entry '{name}'")))?;
            Ok(e.data[0] as usize)
        };
        let config = PdtConfig {
            branch_channels: cfg_val("config/branch_channels")?,
            cbam_reduction: cfg_val("config/cbam_reduction")?,
            spatial_kernel: cfg_val("config/spatial_kernel")?,
            pool_kernel: cfg_val("config/pool_kernel")?,
        };
        Self::from_container(&container, config)
    }

    pub fn load(path: &std::path::Path, config: PdtConfig) -> Result<PdtBlock> {
        Self::from_container(&Container::read(path)?, config)
    }
}
