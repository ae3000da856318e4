//! The adversarial model pair: an LSTM-based sequence generator that maps
//! (condition window, noise) to a next-day OHLC row, and a 1-D
//! convolutional discriminator with dropout that scores a candidate row
//! against its condition window.
//!
//! Everything works in *transformed* space (the preprocessing pipeline's
//! output); mapping predictions back to prices is the forecaster's job.
//!
//! The adversarial value is the standard two-player objective
//!
//! ```text
//! V(θ_d, θ_g) = E[log D(real)] + E[log(1 - D(G(z)))]
//! ```
//!
//! which the discriminator ascends and the generator descends (or, in the
//! non-saturating variant, the generator instead ascends `E[log D(G(z))]`).
//!
//! Checkpoints are a small self-describing binary format: magic, version,
//! seed/epoch metadata, both configs, then every named parameter tensor as
//! little-endian f64s.

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{grad_check, Graph, NodeId, SuiteCheck, Tensor};
use crate::error::{Error, Result};
use crate::numeric::mean;

/// Number of input features per day (volume + OHLC).
pub const FEATURES: usize = 5;

/// Number of generated outputs per day (OHLC).
pub const PRICE_FIELDS: usize = 4;

/// Architecture of the LSTM generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GeneratorConfig {
    /// Days of history the generator conditions on.
    pub condition_window: usize,
    /// LSTM hidden state width.
    pub hidden: usize,
    /// Dimension of the noise vector appended to the final hidden state.
    pub noise_dim: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            condition_window: 5,
            hidden: 32,
            noise_dim: 8,
        }
    }
}

/// One convolution layer of the discriminator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

/// Architecture of the convolutional discriminator.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorConfig {
    /// Stacked valid (unpadded) convolutions over the time axis.
    pub conv_layers: Vec<ConvSpec>,
    /// Dropout rate applied after each convolution during training.
    pub dropout: f64,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig {
            conv_layers: vec![
                ConvSpec {
                    out_channels: 16,
                    kernel: 3,
                    stride: 1,
                },
                ConvSpec {
                    out_channels: 32,
                    kernel: 3,
                    stride: 1,
                },
            ],
            dropout: 0.3,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.condition_window == 0 || self.hidden == 0 || self.noise_dim == 0 {
            return Err(Error::config(
                "generator condition_window, hidden, and noise_dim must all be at least 1",
            ));
        }
        Ok(())
    }
}

impl DiscriminatorConfig {
    pub fn validate(&self, condition_window: usize) -> Result<()> {
        if self.conv_layers.is_empty() {
            return Err(Error::config("discriminator needs at least one conv layer"));
        }
        for (i, layer) in self.conv_layers.iter().enumerate() {
            if layer.out_channels == 0 || layer.kernel == 0 || layer.stride == 0 {
                return Err(Error::config(format!(
                    "discriminator conv layer {i} has a zero dimension"
                )));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!(
                "dropout rate {} must be in [0, 1)",
                self.dropout
            )));
        }
        // The stack must leave at least one time step.
        self.head_input_len(condition_window)?;
        // The last time step of the conv input is the candidate row. Strided
        // layers floor-truncate their output length, which can silently drop
        // the right edge of the sequence; if no head position's receptive
        // field reaches the final step, the score is constant in the
        // candidate and the generator receives no gradient. Walk the stack
        // backwards from the last output position and reject such configs.
        let mut lengths = vec![condition_window + 1];
        for layer in &self.conv_layers {
            let len = lengths.last().unwrap();
            lengths.push((len - layer.kernel) / layer.stride + 1);
        }
        let mut rightmost = lengths.last().unwrap() - 1;
        for layer in self.conv_layers.iter().rev() {
            rightmost = rightmost * layer.stride + layer.kernel - 1;
        }
        if rightmost < condition_window {
            return Err(Error::config(format!(
                "discriminator conv stack never reads time step {condition_window} \
                 (the candidate row): stride truncation stops its receptive field \
                 at step {rightmost}"
            )));
        }
        Ok(())
    }

    /// Flattened feature count entering the final linear head, for a given
    /// condition window (the conv input is `window + 1` steps long).
    pub fn head_input_len(&self, condition_window: usize) -> Result<usize> {
        let mut len = condition_window + 1;
        let mut channels = FEATURES;
        for (i, layer) in self.conv_layers.iter().enumerate() {
            if len < layer.kernel {
                return Err(Error::config(format!(
                    "discriminator conv layer {i}: kernel {} exceeds its input length {len}",
                    layer.kernel
                )));
            }
            len = (len - layer.kernel) / layer.stride + 1;
            channels = layer.out_channels;
        }
        Ok(channels * len)
    }
}

/// All trainable tensors of the pair, in canonical order.
#[derive(Debug, Clone, PartialEq)]
struct GanParams {
    gen_w_ih: Tensor,
    gen_w_hh: Tensor,
    gen_b: Tensor,
    gen_head_w: Tensor,
    gen_head_b: Tensor,
    dis_convs: Vec<(Tensor, Tensor)>,
    dis_head_w: Tensor,
    dis_head_b: Tensor,
}

/// Generator + discriminator with their configs and training progress.
#[derive(Debug, Clone, PartialEq)]
pub struct GanModel {
    pub gen_cfg: GeneratorConfig,
    pub dis_cfg: DiscriminatorConfig,
    /// Seed the parameters were initialised from.
    pub init_seed: u64,
    /// Number of completed training epochs recorded on this model.
    pub trained_epochs: u32,
    params: GanParams,
}

/// A trainable tensor with values drawn uniformly from
/// `[-1/sqrt(fan_in), +1/sqrt(fan_in)]`.
pub(crate) fn uniform_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>, fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let values = (0..n)
        .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * bound)
        .collect();
    Tensor::new(shape, values)
        .expect("shape/value count match by construction")
        .with_requires_grad()
}

impl GanModel {
    /// Initialises both networks with uniform weights in
    /// `[-1/sqrt(fan_in), +1/sqrt(fan_in)]`, sampled from a ChaCha8 stream
    /// seeded with `seed`, parameter by parameter in canonical (checkpoint)
    /// order. Biases use the total input fan of their layer.
    pub fn init(gen_cfg: GeneratorConfig, dis_cfg: DiscriminatorConfig, seed: u64) -> Result<Self> {
        gen_cfg.validate()?;
        dis_cfg.validate(gen_cfg.condition_window)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = gen_cfg.hidden;
        let gen_w_ih = uniform_tensor(&mut rng, vec![FEATURES, 4 * h], FEATURES);
        let gen_w_hh = uniform_tensor(&mut rng, vec![h, 4 * h], h);
        let gen_b = uniform_tensor(&mut rng, vec![4 * h], FEATURES + h);
        let head_in = h + gen_cfg.noise_dim;
        let gen_head_w = uniform_tensor(&mut rng, vec![head_in, PRICE_FIELDS], head_in);
        let gen_head_b = uniform_tensor(&mut rng, vec![PRICE_FIELDS], head_in);

        let mut dis_convs = Vec::with_capacity(dis_cfg.conv_layers.len());
        let mut in_channels = FEATURES;
        for layer in &dis_cfg.conv_layers {
            let fan = in_channels * layer.kernel;
            let kernel = uniform_tensor(
                &mut rng,
                vec![layer.out_channels, in_channels, layer.kernel],
                fan,
            );
            let bias = uniform_tensor(&mut rng, vec![layer.out_channels], fan);
            dis_convs.push((kernel, bias));
            in_channels = layer.out_channels;
        }
        let flat = dis_cfg.head_input_len(gen_cfg.condition_window)?;
        let dis_head_w = uniform_tensor(&mut rng, vec![flat, 1], flat);
        let dis_head_b = uniform_tensor(&mut rng, vec![1], flat);

        Ok(GanModel {
            gen_cfg,
            dis_cfg,
            init_seed: seed,
            trained_epochs: 0,
            params: GanParams {
                gen_w_ih,
                gen_w_hh,
                gen_b,
                gen_head_w,
                gen_head_b,
                dis_convs,
                dis_head_w,
                dis_head_b,
            },
        })
    }

    /// Every parameter with its canonical name, in checkpoint order.
    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let p = &self.params;
        let mut out = vec![
            ("generator.lstm.w_ih".to_string(), &p.gen_w_ih),
            ("generator.lstm.w_hh".to_string(), &p.gen_w_hh),
            ("generator.lstm.bias".to_string(), &p.gen_b),
            ("generator.head.weight".to_string(), &p.gen_head_w),
            ("generator.head.bias".to_string(), &p.gen_head_b),
        ];
        for (i, (k, b)) in p.dis_convs.iter().enumerate() {
            out.push((format!("discriminator.conv{i}.kernel"), k));
            out.push((format!("discriminator.conv{i}.bias"), b));
        }
        out.push(("discriminator.head.weight".to_string(), &p.dis_head_w));
        out.push(("discriminator.head.bias".to_string(), &p.dis_head_b));
        out
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let p = &mut self.params;
        let mut out = vec![
            ("generator.lstm.w_ih".to_string(), &mut p.gen_w_ih),
            ("generator.lstm.w_hh".to_string(), &mut p.gen_w_hh),
            ("generator.lstm.bias".to_string(), &mut p.gen_b),
            ("generator.head.weight".to_string(), &mut p.gen_head_w),
            ("generator.head.bias".to_string(), &mut p.gen_head_b),
        ];
        for (i, (k, b)) in p.dis_convs.iter_mut().enumerate() {
            out.push((format!("discriminator.conv{i}.kernel"), k));
            out.push((format!("discriminator.conv{i}.bias"), b));
        }
        out.push(("discriminator.head.weight".to_string(), &mut p.dis_head_w));
        out.push(("discriminator.head.bias".to_string(), &mut p.dis_head_b));
        out
    }

    /// Generator tensors in binding order.
    pub(crate) fn generator_tensors_mut(&mut self) -> [&mut Tensor; 5] {
        let p = &mut self.params;
        [
            &mut p.gen_w_ih,
            &mut p.gen_w_hh,
            &mut p.gen_b,
            &mut p.gen_head_w,
            &mut p.gen_head_b,
        ]
    }

    /// Discriminator tensors in binding order.
    pub(crate) fn discriminator_tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let p = &mut self.params;
        let mut out: Vec<&mut Tensor> = Vec::new();
        for (k, b) in p.dis_convs.iter_mut() {
            out.push(k);
            out.push(b);
        }
        out.push(&mut p.dis_head_w);
        out.push(&mut p.dis_head_b);
        out
    }

    pub fn generator_param_sizes(&self) -> Vec<usize> {
        let p = &self.params;
        vec![
            p.gen_w_ih.numel(),
            p.gen_w_hh.numel(),
            p.gen_b.numel(),
            p.gen_head_w.numel(),
            p.gen_head_b.numel(),
        ]
    }

    pub fn discriminator_param_sizes(&self) -> Vec<usize> {
        let p = &self.params;
        let mut out = Vec::new();
        for (k, b) in &p.dis_convs {
            out.push(k.numel());
            out.push(b.numel());
        }
        out.push(p.dis_head_w.numel());
        out.push(p.dis_head_b.numel());
        out
    }

    /// One point prediction: transformed-space OHLC for the day after the
    /// condition window. Inference mode (no dropout anywhere), so the
    /// output is a pure function of (parameters, condition, z).
    pub fn generate(&self, condition: &[[f64; FEATURES]], z: &[f64]) -> Result<[f64; PRICE_FIELDS]> {
        let out = self.generate_batch(
            std::slice::from_ref(&condition.to_vec()),
            std::slice::from_ref(&z.to_vec()),
        )?;
        Ok(out[0])
    }

    /// Batched point predictions; all windows share one graph.
    pub fn generate_batch(
        &self,
        conditions: &[Vec<[f64; FEATURES]>],
        noises: &[Vec<f64>],
    ) -> Result<Vec<[f64; PRICE_FIELDS]>> {
        if conditions.is_empty() || conditions.len() != noises.len() {
            return Err(Error::invalid(format!(
                "generate_batch got {} condition windows and {} noise vectors",
                conditions.len(),
                noises.len()
            )));
        }
        let w = self.gen_cfg.condition_window;
        for c in conditions {
            if c.len() != w {
                return Err(Error::config(format!(
                    "condition window has {} rows, model expects {w}",
                    c.len()
                )));
            }
        }
        for z in noises {
            if z.len() != self.gen_cfg.noise_dim {
                return Err(Error::config(format!(
                    "noise vector has {} elements, model expects {}",
                    z.len(),
                    self.gen_cfg.noise_dim
                )));
            }
        }
        let b = conditions.len();
        let mut g = Graph::new();
        let binding = bind_generator(&mut g, self, false)?;
        let steps = build_condition_steps(&mut g, conditions)?;
        let mut zvals = Vec::with_capacity(b * self.gen_cfg.noise_dim);
        for z in noises {
            zvals.extend_from_slice(z);
        }
        let z = g.constant(vec![b, self.gen_cfg.noise_dim], zvals)?;
        let out = generator_forward(&mut g, &self.gen_cfg, &binding, &steps, z)?;
        let values = g.value(out);
        Ok((0..b)
            .map(|i| {
                [
                    values[i * PRICE_FIELDS],
                    values[i * PRICE_FIELDS + 1],
                    values[i * PRICE_FIELDS + 2],
                    values[i * PRICE_FIELDS + 3],
                ]
            })
            .collect())
    }

    /// Probability the discriminator assigns to `candidate` being the real
    /// next-day row after `condition`. Inference mode (dropout off).
    pub fn discriminate(
        &self,
        condition: &[[f64; FEATURES]],
        candidate: &[f64; PRICE_FIELDS],
    ) -> Result<f64> {
        if condition.len() != self.gen_cfg.condition_window {
            return Err(Error::config(format!(
                "condition window has {} rows, model expects {}",
                condition.len(),
                self.gen_cfg.condition_window
            )));
        }
        let mut g = Graph::new();
        let binding = bind_discriminator(&mut g, self, false)?;
        let windows = vec![condition.to_vec()];
        let cond = build_condition_channels(&mut g, &windows)?;
        let cand = g.constant(vec![1, PRICE_FIELDS], candidate.to_vec())?;
        let last_vol = g.constant(vec![1, 1], vec![condition[condition.len() - 1][0]])?;
        // Inference mode never samples, so any rng works here.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let prob = discriminator_forward(
            &mut g,
            &self.dis_cfg,
            &binding,
            cond,
            cand,
            last_vol,
            false,
            &mut rng,
        )?;
        Ok(g.value(prob)[0])
    }

    /// Serializes configs, metadata, and all parameters.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&1u32.to_le_bytes());
        out.extend_from_slice(&self.init_seed.to_le_bytes());
        out.extend_from_slice(&self.trained_epochs.to_le_bytes());
        out.extend_from_slice(&(self.gen_cfg.condition_window as u32).to_le_bytes());
        out.extend_from_slice(&(self.gen_cfg.hidden as u32).to_le_bytes());
        out.extend_from_slice(&(self.gen_cfg.noise_dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.dis_cfg.conv_layers.len() as u32).to_le_bytes());
        for layer in &self.dis_cfg.conv_layers {
            out.extend_from_slice(&(layer.out_channels as u32).to_le_bytes());
            out.extend_from_slice(&(layer.kernel as u32).to_le_bytes());
            out.extend_from_slice(&(layer.stride as u32).to_le_bytes());
        }
        out.extend_from_slice(&self.dis_cfg.dropout.to_le_bytes());
        let named = self.named_params();
        out.extend_from_slice(&(named.len() as u32).to_le_bytes());
        for (name, tensor) in named {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(tensor.shape().len() as u8);
            for dim in tensor.shape() {
                out.extend_from_slice(&(*dim as u64).to_le_bytes());
            }
            for v in tensor.values() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Parses a checkpoint produced by [`GanModel::to_bytes`].
    pub fn from_bytes(bytes: &[u8]) -> Result<GanModel> {
        let mut r = ByteReader::new(bytes);
        if r.take(8)? != MAGIC {
            return Err(Error::checkpoint("bad magic: not a model checkpoint"));
        }
        let version = r.read_u32()?;
        if version != 1 {
            return Err(Error::checkpoint(format!(
                "unsupported checkpoint version {version} (this build reads version 1)"
            )));
        }
        let init_seed = r.read_u64()?;
        let trained_epochs = r.read_u32()?;
        let gen_cfg = GeneratorConfig {
            condition_window: r.read_u32()? as usize,
            hidden: r.read_u32()? as usize,
            noise_dim: r.read_u32()? as usize,
        };
        let n_layers = r.read_u32()? as usize;
        let mut conv_layers = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            conv_layers.push(ConvSpec {
                out_channels: r.read_u32()? as usize,
                kernel: r.read_u32()? as usize,
                stride: r.read_u32()? as usize,
            });
        }
        let dropout = r.read_f64()?;
        let dis_cfg = DiscriminatorConfig {
            conv_layers,
            dropout,
        };
        // Build a zero-weight model of the right architecture, then fill
        // tensors by name so reordering or omission is detected.
        let mut model = GanModel::init(gen_cfg, dis_cfg, init_seed)
            .map_err(|e| Error::checkpoint(format!("invalid stored config: {e}")))?;
        model.trained_epochs = trained_epochs;
        let count = r.read_u32()? as usize;
        let expected = model.named_params().len();
        if count != expected {
            return Err(Error::checkpoint(format!(
                "checkpoint stores {count} parameters, architecture needs {expected}"
            )));
        }
        let mut filled = std::collections::BTreeSet::new();
        for _ in 0..count {
            let name_len = r.read_u16()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| Error::checkpoint("parameter name is not valid UTF-8"))?;
            let rank = r.read_u8()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.read_u64()? as usize);
            }
            let numel: usize = shape.iter().product();
            let mut values = Vec::with_capacity(numel);
            for _ in 0..numel {
                values.push(r.read_f64()?);
            }
            let mut found = false;
            for (pname, tensor) in model.named_params_mut() {
                if pname == name {
                    if tensor.shape() != shape.as_slice() {
                        return Err(Error::checkpoint(format!(
                            "parameter {name}: stored shape {shape:?} does not match \
                             architecture shape {:?}",
                            tensor.shape()
                        )));
                    }
                    tensor.values_mut().copy_from_slice(&values);
                    found = true;
                    break;
                }
            }
            if !found {
                return Err(Error::checkpoint(format!("unknown parameter `{name}`")));
            }
            if !filled.insert(name.clone()) {
                return Err(Error::checkpoint(format!("parameter `{name}` appears twice")));
            }
        }
        if !r.is_exhausted() {
            return Err(Error::checkpoint("trailing bytes after last parameter"));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<GanModel> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        GanModel::from_bytes(&bytes)
    }
}

const MAGIC: &[u8; 8] = b"FXGANCP1";

struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        ByteReader { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::checkpoint("truncated checkpoint"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn read_u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn read_u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn read_u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn read_u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn read_f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn is_exhausted(&self) -> bool {
        self.pos == self.buf.len()
    }
}

/// Node handles for one bound generator.
pub(crate) struct GenBinding {
    pub w_ih: NodeId,
    pub w_hh: NodeId,
    pub b: NodeId,
    pub head_w: NodeId,
    pub head_b: NodeId,
}

impl GenBinding {
    /// Handles in the same order as [`GanModel::generator_tensors_mut`].
    pub fn ids(&self) -> [NodeId; 5] {
        [self.w_ih, self.w_hh, self.b, self.head_w, self.head_b]
    }
}

/// Node handles for one bound discriminator.
pub(crate) struct DisBinding {
    pub convs: Vec<(NodeId, NodeId)>,
    pub head_w: NodeId,
    pub head_b: NodeId,
}

impl DisBinding {
    /// Handles in the same order as
    /// [`GanModel::discriminator_tensors_mut`].
    pub fn ids(&self) -> Vec<NodeId> {
        let mut out = Vec::with_capacity(self.convs.len() * 2 + 2);
        for (k, b) in &self.convs {
            out.push(*k);
            out.push(*b);
        }
        out.push(self.head_w);
        out.push(self.head_b);
        out
    }
}

/// Binds the generator's tensors onto `g`, trainable or frozen.
pub(crate) fn bind_generator(g: &mut Graph, model: &GanModel, trainable: bool) -> Result<GenBinding> {
    let p = &model.params;
    let mut bind = |t: &Tensor| if trainable { g.param(t) } else { g.freeze(t) };
    Ok(GenBinding {
        w_ih: bind(&p.gen_w_ih)?,
        w_hh: bind(&p.gen_w_hh)?,
        b: bind(&p.gen_b)?,
        head_w: bind(&p.gen_head_w)?,
        head_b: bind(&p.gen_head_b)?,
    })
}

/// Binds the discriminator's tensors onto `g`, trainable or frozen.
pub(crate) fn bind_discriminator(
    g: &mut Graph,
    model: &GanModel,
    trainable: bool,
) -> Result<DisBinding> {
    let p = &model.params;
    let mut bind = |t: &Tensor| if trainable { g.param(t) } else { g.freeze(t) };
    let mut convs = Vec::with_capacity(p.dis_convs.len());
    for (k, b) in &p.dis_convs {
        convs.push((bind(k)?, bind(b)?));
    }
    Ok(DisBinding {
        convs,
        head_w: bind(&p.dis_head_w)?,
        head_b: bind(&p.dis_head_b)?,
    })
}

/// One LSTM step. `x` is `[B, F]`, `h`/`c` are `[B, H]`; gate order along
/// the packed axis is input, forget, cell, output.
pub(crate) fn lstm_cell(
    g: &mut Graph,
    x: NodeId,
    h: NodeId,
    c: NodeId,
    w_ih: NodeId,
    w_hh: NodeId,
    b: NodeId,
    hidden: usize,
) -> Result<(NodeId, NodeId)> {
    let xw = g.matmul(x, w_ih)?;
    let hw = g.matmul(h, w_hh)?;
    let pre = g.add(xw, hw)?;
    let gates = g.add(pre, b)?;
    let i_gate = g.slice(gates, 0, hidden)?;
    let i_gate = g.sigmoid(i_gate)?;
    let f_gate = g.slice(gates, hidden, hidden)?;
    let f_gate = g.sigmoid(f_gate)?;
    let g_gate = g.slice(gates, 2 * hidden, hidden)?;
    let g_gate = g.tanh(g_gate)?;
    let o_gate = g.slice(gates, 3 * hidden, hidden)?;
    let o_gate = g.sigmoid(o_gate)?;
    let fc = g.mul(f_gate, c)?;
    let ig = g.mul(i_gate, g_gate)?;
    let c_new = g.add(fc, ig)?;
    let c_tanh = g.tanh(c_new)?;
    let h_new = g.mul(o_gate, c_tanh)?;
    Ok((h_new, c_new))
}

/// Unrolls the generator over the condition steps and applies the linear
/// head to `[final hidden state, z]`. `steps` holds `condition_window`
/// nodes of shape `[B, FEATURES]`; `z` is `[B, noise_dim]`; the output is
/// `[B, PRICE_FIELDS]`.
pub(crate) fn generator_forward(
    g: &mut Graph,
    cfg: &GeneratorConfig,
    binding: &GenBinding,
    steps: &[NodeId],
    z: NodeId,
) -> Result<NodeId> {
    if steps.len() != cfg.condition_window {
        return Err(Error::config(format!(
            "generator got {} condition steps, expected {}",
            steps.len(),
            cfg.condition_window
        )));
    }
    let batch = g.shape(steps[0])[0];
    let mut h = g.constant(vec![batch, cfg.hidden], vec![0.0; batch * cfg.hidden])?;
    let mut c = h;
    for x in steps {
        let (h2, c2) = lstm_cell(g, *x, h, c, binding.w_ih, binding.w_hh, binding.b, cfg.hidden)?;
        h = h2;
        c = c2;
    }
    let hz = g.concat(&[h, z])?;
    let out = g.matmul(hz, binding.head_w)?;
    g.add(out, binding.head_b)
}

/// Runs the discriminator on a condition block `[B, FEATURES, W]` plus a
/// candidate row. The candidate is appended as one extra time step whose
/// volume slot repeats the window's last volume, so real and generated
/// candidates differ only in their OHLC values. Returns probabilities
/// `[B, 1]`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn discriminator_forward(
    g: &mut Graph,
    cfg: &DiscriminatorConfig,
    binding: &DisBinding,
    condition: NodeId,
    candidate: NodeId,
    last_volume: NodeId,
    training: bool,
    rng: &mut ChaCha8Rng,
) -> Result<NodeId> {
    let batch = g.shape(condition)[0];
    let cand_full = g.concat(&[last_volume, candidate])?;
    let cand_col = g.reshape(cand_full, vec![batch, FEATURES, 1])?;
    let mut x = g.concat(&[condition, cand_col])?;
    for (spec, (kernel, bias)) in cfg.conv_layers.iter().zip(&binding.convs) {
        let c = g.conv1d(x, *kernel, Some(*bias), spec.stride, 0)?;
        let a = g.relu(c)?;
        x = g.dropout(a, cfg.dropout, training, rng)?;
    }
    let flat_len: usize = g.shape(x)[1..].iter().product();
    let flat = g.reshape(x, vec![batch, flat_len])?;
    let logit = g.matmul(flat, binding.head_w)?;
    let logit = g.add(logit, binding.head_b)?;
    g.sigmoid(logit)
}

/// Builds per-time-step constant nodes `[B, FEATURES]` from condition
/// windows (all windows must share the same length).
pub(crate) fn build_condition_steps(
    g: &mut Graph,
    windows: &[Vec<[f64; FEATURES]>],
) -> Result<Vec<NodeId>> {
    let b = windows.len();
    let w = windows[0].len();
    let mut steps = Vec::with_capacity(w);
    for t in 0..w {
        let mut values = Vec::with_capacity(b * FEATURES);
        for window in windows {
            values.extend_from_slice(&window[t]);
        }
        steps.push(g.constant(vec![b, FEATURES], values)?);
    }
    Ok(steps)
}

/// Builds the channels-first condition block `[B, FEATURES, W]` the
/// discriminator convolves over.
pub(crate) fn build_condition_channels(
    g: &mut Graph,
    windows: &[Vec<[f64; FEATURES]>],
) -> Result<NodeId> {
    let b = windows.len();
    let w = windows[0].len();
    let mut values = Vec::with_capacity(b * FEATURES * w);
    for window in windows {
        for c in 0..FEATURES {
            for row in window {
                values.push(row[c]);
            }
        }
    }
    g.constant(vec![b, FEATURES, w], values)
}

/// The adversarial value `mean(log d_real) + mean(log(1 - d_fake))` over
/// already-computed discriminator outputs. Both slices must be non-empty
/// and strictly inside (0,1).
pub fn value_function(d_real: &[f64], d_fake: &[f64]) -> Result<f64> {
    if d_real.is_empty() || d_fake.is_empty() {
        return Err(Error::insufficient(
            "value function needs at least one real and one fake score",
        ));
    }
    for (which, scores) in [("real", d_real), ("fake", d_fake)] {
        if let Some(bad) = scores.iter().find(|p| !(0.0 < **p && **p < 1.0)) {
            return Err(Error::domain(format!(
                "discriminator {which} score {bad} outside (0, 1)"
            )));
        }
    }
    let real: Vec<f64> = d_real.iter().map(|p| p.ln()).collect();
    let fake: Vec<f64> = d_fake.iter().map(|p| (1.0 - p).ln()).collect();
    Ok(mean(&real) + mean(&fake))
}

fn random_window(seed: u64, len: usize) -> Vec<[f64; FEATURES]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len)
        .map(|_| {
            let mut row = [0.0; FEATURES];
            for v in row.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            row
        })
        .collect()
}

/// Finite-difference checks of both full networks end to end: the complete
/// generator (LSTM over the condition window, noise concat, linear head)
/// and the complete discriminator (condition channels + candidate column,
/// conv stack, scoring head), each against every one of its parameters.
///
/// Uses a reduced geometry so the `2N+1` re-evaluations stay fast; the
/// backward rules exercised are the same ones the full-size model uses.
pub fn network_checks(seed: u64) -> Result<Vec<SuiteCheck>> {
    let model = GanModel::init(
        GeneratorConfig {
            condition_window: 3,
            hidden: 4,
            noise_dim: 2,
        },
        DiscriminatorConfig {
            conv_layers: vec![
                ConvSpec {
                    out_channels: 3,
                    kernel: 2,
                    stride: 1,
                },
                ConvSpec {
                    out_channels: 4,
                    kernel: 2,
                    stride: 1,
                },
            ],
            dropout: 0.25,
        },
        seed,
    )?;
    let p = &model.params;
    let mut out = Vec::new();

    let cond = random_window(seed.wrapping_add(100), 3);
    let z = vec![0.4, -0.3];
    let mut params = [
        ("w_ih", p.gen_w_ih.clone()),
        ("w_hh", p.gen_w_hh.clone()),
        ("b", p.gen_b.clone()),
        ("head_w", p.gen_head_w.clone()),
        ("head_b", p.gen_head_b.clone()),
    ];
    let cfg = model.gen_cfg;
    out.push(SuiteCheck {
        name: "generator network",
        report: grad_check(
            &mut params,
            |g, ids| {
                let binding = GenBinding {
                    w_ih: ids[0],
                    w_hh: ids[1],
                    b: ids[2],
                    head_w: ids[3],
                    head_b: ids[4],
                };
                let steps = build_condition_steps(g, &[cond.clone()])?;
                let zn = g.constant(vec![1, 2], z.clone())?;
                let out = generator_forward(g, &cfg, &binding, &steps, zn)?;
                let sq = g.mul(out, out)?;
                g.mean(sq)
            },
            1e-5,
        )?,
    });

    let windows = vec![
        random_window(seed.wrapping_add(200), 3),
        random_window(seed.wrapping_add(300), 3),
    ];
    let cand_rows = vec![0.1, -0.2, 0.3, 0.0, -0.1, 0.2, 0.1, -0.3];
    let mut params = [
        ("conv0.k", p.dis_convs[0].0.clone()),
        ("conv0.b", p.dis_convs[0].1.clone()),
        ("conv1.k", p.dis_convs[1].0.clone()),
        ("conv1.b", p.dis_convs[1].1.clone()),
        ("head_w", p.dis_head_w.clone()),
        ("head_b", p.dis_head_b.clone()),
    ];
    let cfg = model.dis_cfg.clone();
    out.push(SuiteCheck {
        name: "discriminator network",
        report: grad_check(
            &mut params,
            |g, ids| {
                let binding = DisBinding {
                    convs: vec![(ids[0], ids[1]), (ids[2], ids[3])],
                    head_w: ids[4],
                    head_b: ids[5],
                };
                let cond = build_condition_channels(g, &windows)?;
                let cand = g.constant(vec![2, PRICE_FIELDS], cand_rows.clone())?;
                let lv = g.constant(vec![2, 1], vec![windows[0][2][0], windows[1][2][0]])?;
                // Inference-mode dropout keeps the build deterministic.
                let mut rng = ChaCha8Rng::seed_from_u64(0);
                let prob =
                    discriminator_forward(g, &cfg, &binding, cond, cand, lv, false, &mut rng)?;
                let targets = g.constant(vec![2, 1], vec![1.0, 0.0])?;
                g.bce(prob, targets)
            },
            1e-5,
        )?,
    });

    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::StandardNormal;

    fn small_model(seed: u64) -> GanModel {
        GanModel::init(
            GeneratorConfig {
                condition_window: 3,
                hidden: 4,
                noise_dim: 2,
            },
            DiscriminatorConfig {
                conv_layers: vec![
                    ConvSpec {
                        out_channels: 3,
                        kernel: 2,
                        stride: 1,
                    },
                    ConvSpec {
                        out_channels: 4,
                        kernel: 2,
                        stride: 1,
                    },
                ],
                dropout: 0.25,
            },
            seed,
        )
        .unwrap()
    }

    fn window(seed: u64, len: usize) -> Vec<[f64; FEATURES]> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len)
            .map(|_| {
                let mut row = [0.0; FEATURES];
                for v in row.iter_mut() {
                    *v = rng.sample(StandardNormal);
                }
                row
            })
            .collect()
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = small_model(1);
        let b = small_model(1);
        let c = small_model(2);
        assert_eq!(a, b);
        assert_ne!(a, c);
        // w_ih has fan-in FEATURES=5.
        let bound = 1.0 / (FEATURES as f64).sqrt();
        let (name, w_ih) = &a.named_params()[0];
        assert_eq!(name, "generator.lstm.w_ih");
        assert_eq!(w_ih.shape(), &[5, 16]);
        assert!(w_ih.values().iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn config_validation_catches_impossible_stacks() {
        // A kernel wider than window+1 cannot convolve anything.
        let err = GanModel::init(
            GeneratorConfig {
                condition_window: 2,
                hidden: 4,
                noise_dim: 2,
            },
            DiscriminatorConfig {
                conv_layers: vec![ConvSpec {
                    out_channels: 3,
                    kernel: 5,
                    stride: 1,
                }],
                dropout: 0.0,
            },
            0,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config { .. }), "{err}");

        // A stack whose stride truncation never reads the final time step
        // would leave the score constant in the candidate row. With a window
        // of 5 the conv input is 6 steps: kernel 3 stride 1 leaves 4, and a
        // second kernel-3 stride-2 layer yields a single output covering
        // positions 0..3 of those — the one position that saw the candidate
        // is dropped.
        let err = GanModel::init(
            GeneratorConfig::default(),
            DiscriminatorConfig {
                conv_layers: vec![
                    ConvSpec {
                        out_channels: 16,
                        kernel: 3,
                        stride: 1,
                    },
                    ConvSpec {
                        out_channels: 32,
                        kernel: 3,
                        stride: 2,
                    },
                ],
                dropout: 0.3,
            },
            0,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config { .. }), "{err}");
        assert!(err.to_string().contains("candidate"), "{err}");
    }

    #[test]
    fn generate_is_deterministic_and_shaped() {
        let model = small_model(3);
        let cond = window(10, 3);
        let z = vec![0.1, -0.2];
        let a = model.generate(&cond, &z).unwrap();
        let b = model.generate(&cond, &z).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|v| v.is_finite()));
        // Wrong window length or noise size is a config error.
        assert!(model.generate(&window(10, 4), &z).is_err());
        assert!(model.generate(&cond, &[0.1]).is_err());
        // Batch path agrees with the single path.
        let batch = model
            .generate_batch(&[cond.clone(), cond.clone()], &[z.clone(), z.clone()])
            .unwrap();
        assert_eq!(batch[0], a);
        assert_eq!(batch[1], a);
    }

    #[test]
    fn discriminate_yields_probabilities() {
        let model = small_model(4);
        for seed in 0..20 {
            let cond = window(seed, 3);
            let cand = [0.3, -0.1, 0.2, 0.0];
            let p = model.discriminate(&cond, &cand).unwrap();
            assert!(0.0 < p && p < 1.0, "p = {p}");
        }
        // Deterministic: inference has no dropout.
        let cond = window(99, 3);
        let cand = [0.0, 0.0, 0.0, 0.0];
        assert_eq!(
            model.discriminate(&cond, &cand).unwrap(),
            model.discriminate(&cond, &cand).unwrap()
        );
    }

    #[test]
    fn value_function_matches_hand_values() {
        // Perfect confusion, d = 0.5 everywhere: V = ln(1/2) + ln(1/2).
        let v = value_function(&[0.5, 0.5], &[0.5]).unwrap();
        assert!((v - (-1.3862943611198906)).abs() < 1e-15, "{v}");
        // d_real = 0.9, d_fake = 0.2: V = ln 0.9 + ln 0.8.
        let v = value_function(&[0.9], &[0.2]).unwrap();
        assert!((v - (-0.328504066972036)).abs() < 1e-15, "{v}");

        assert!(matches!(
            value_function(&[], &[0.5]).unwrap_err(),
            Error::InsufficientData { .. }
        ));
        assert!(matches!(
            value_function(&[1.0], &[0.5]).unwrap_err(),
            Error::Domain { .. }
        ));
    }

    #[test]
    fn both_networks_pass_finite_difference_checks() {
        for seed in 0..10u64 {
            let checks = network_checks(seed).unwrap();
            assert_eq!(checks.len(), 2);
            for check in checks {
                assert!(
                    check.report.passes(1e-4),
                    "{} seed {seed}: {:?}",
                    check.name,
                    check.report
                );
            }
        }
    }

    #[test]
    fn checkpoint_round_trips_and_rejects_corruption() {
        let mut model = small_model(11);
        model.trained_epochs = 42;
        let bytes = model.to_bytes();
        let loaded = GanModel::from_bytes(&bytes).unwrap();
        assert_eq!(loaded, model);
        assert_eq!(loaded.trained_epochs, 42);
        assert_eq!(loaded.init_seed, 11);

        // Wrong magic.
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            GanModel::from_bytes(&bad).unwrap_err(),
            Error::Checkpoint { .. }
        ));

        // Unsupported version.
        let mut bad = bytes.clone();
        bad[8] = 9;
        assert!(matches!(
            GanModel::from_bytes(&bad).unwrap_err(),
            Error::Checkpoint { .. }
        ));

        // Truncation anywhere must be caught.
        for cut in [10, 40, bytes.len() / 2, bytes.len() - 3] {
            assert!(
                matches!(
                    GanModel::from_bytes(&bytes[..cut]).unwrap_err(),
                    Error::Checkpoint { .. }
                ),
                "cut at {cut}"
            );
        }

        // Trailing garbage is rejected too.
        let mut bad = bytes.clone();
        bad.push(0);
        assert!(matches!(
            GanModel::from_bytes(&bad).unwrap_err(),
            Error::Checkpoint { .. }
        ));
    }

    #[test]
    fn checkpoint_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let model = small_model(5);
        model.save(&path).unwrap();
        let loaded = GanModel::load(&path).unwrap();
        assert_eq!(loaded, model);
    }
}
