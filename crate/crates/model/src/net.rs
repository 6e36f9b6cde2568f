//! The IPDnet forward pass.
//!
//! Activations are `[B, N, F, C]`: `B` utterances (fixed variant) or
//! microphone pairs of one utterance (variable variant), `N` frames, `F`
//! bins, `C` channels.

use ipdnet_autodiff::{init, Graph, ParamId, ParamStore, Scalar, Tensor, TimePadding, Var};
use ipdnet_core::dsp::{normalize_offline, normalize_online, StftTensor};
use ipdnet_core::localize::TrackedEstimate;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{Mode, ModelConfig, Variant};
use crate::error::{ModelError, Result};

#[derive(Debug, Clone)]
struct LstmParams {
    w_ih: ParamId,
    w_hh: ParamId,
    bias: ParamId,
}

#[derive(Debug, Clone)]
struct Linear {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone)]
struct Recurrent {
    fwd: LstmParams,
    bwd: Option<LstmParams>,
    proj: Linear,
}

#[derive(Debug, Clone)]
struct Block {
    fullband: Option<Recurrent>,
    narrowband: Recurrent,
}

#[derive(Debug, Clone)]
pub struct IpdNet<T> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    blocks: Vec<Block>,
    head: [Linear; 3],
}

struct Builder<'a, T> {
    store: &'a mut ParamStore<T>,
    rng: ChaCha8Rng,
}

impl<T: Scalar> Builder<'_, T> {
    fn lstm(&mut self, name: &str, input: usize, hidden: usize) -> Result<LstmParams> {
        let w_ih = init::uniform_fan_in(&mut self.rng, &[input, 4 * hidden], input);
        let w_hh = init::orthogonal_blocks(&mut self.rng, hidden, 4);
        let mut bias = vec![0.0; 4 * hidden];
        bias[hidden..2 * hidden].iter_mut().for_each(|v| *v = 1.0);
        Ok(LstmParams {
            w_ih: self.store.add(format!("{name}/w_ih"), w_ih)?,
            w_hh: self.store.add(format!("{name}/w_hh"), w_hh)?,
            bias: self.store.add(format!("{name}/bias"), Tensor::from_f64(&[4 * hidden], &bias)?)?,
        })
    }

    fn linear(&mut self, name: &str, shape: &[usize], fan_in: usize) -> Result<Linear> {
        let w = init::uniform_fan_in(&mut self.rng, shape, fan_in);
        let out = shape[shape.len() - 1];
        Ok(Linear {
            w: self.store.add(format!("{name}/w"), w)?,
            b: self.store.add(format!("{name}/b"), Tensor::zeros(&[out]))?,
        })
    }

    fn recurrent(&mut self, name: &str, input: usize, d: usize, bidirectional: bool, proj_in: usize) -> Result<Recurrent> {
        let h = if bidirectional { d / 2 } else { d };
        Ok(Recurrent {
            fwd: self.lstm(&format!("{name}/fwd"), input, h)?,
            bwd: if bidirectional {
                Some(self.lstm(&format!("{name}/bwd"), input, h)?)
            } else {
                None
            },
            proj: self.linear(&format!("{name}/proj"), &[proj_in, d], proj_in)?,
        })
    }
}

impl<T: Scalar> IpdNet<T> {
    /// Parameter names: `block{b}/{fullband,narrowband}/{fwd,bwd}/{w_ih,w_hh,bias}`,
    /// `block{b}/{fullband,narrowband}/proj/{w,b}`, `head/conv{i}/{w,b}`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut b = Builder {
            store: &mut store,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let d = config.hidden;
        let raw = config.raw_width();
        // The projection after a recurrent layer takes the pooled concat in the variable variant.
        let proj_in = match config.variant {
            Variant::Fixed => d,
            Variant::Variable => 2 * d,
        };
        let mut blocks = Vec::with_capacity(config.blocks);
        let mut first = true;
        for i in 0..config.blocks {
            let fullband = if config.fullband {
                let input = if first { raw } else { d + raw };
                first = false;
                Some(b.recurrent(&format!("block{i}/fullband"), input, d, true, proj_in)?)
            } else {
                None
            };
            let input = if first { raw } else { d + raw };
            first = false;
            let narrowband = b.recurrent(
                &format!("block{i}/narrowband"),
                input,
                d,
                config.mode == Mode::Offline,
                proj_in,
            )?;
            blocks.push(Block { fullband, narrowband });
        }
        let [kt, kf] = config.kernel;
        let widths = [d, d / 2, d / 4, config.out_channels()];
        let mut head = Vec::with_capacity(3);
        for l in 0..3 {
            head.push(b.linear(
                &format!("head/conv{l}"),
                &[kt, kf, widths[l], widths[l + 1]],
                kt * kf * widths[l],
            )?);
        }
        let head: [Linear; 3] = head.try_into().expect("three layers");
        Ok(IpdNet {
            config,
            params: store,
            blocks,
            head,
        })
    }

    pub fn num_weights(&self) -> usize {
        self.params.num_weights()
    }

    /// Same architecture at another precision, weights converted.
    pub fn cast<U: Scalar>(&self) -> IpdNet<U> {
        IpdNet {
            config: self.config.clone(),
            params: self.params.cast(),
            blocks: self.blocks.clone(),
            head: self.head.clone(),
        }
    }

    fn lstm(&self, g: &mut Graph<T>, x: Var, p: &LstmParams, reverse: bool) -> Result<Var> {
        let (w_ih, w_hh, bias) = (
            g.param(&self.params, p.w_ih),
            g.param(&self.params, p.w_hh),
            g.param(&self.params, p.bias),
        );
        Ok(g.lstm(x, w_ih, w_hh, bias, reverse)?)
    }

    /// Recurrence along axis 1 of `x[S, L, C]` followed by the projection.
    /// `groups` > 0 marks the variable variant: `S` = `groups` pairs times
    /// independent sequences, pooled across pairs before projecting.
    fn recurrent(&self, g: &mut Graph<T>, x: Var, r: &Recurrent, groups: usize) -> Result<Var> {
        let mut h = self.lstm(g, x, &r.fwd, false)?;
        if let Some(bwd) = &r.bwd {
            let back = self.lstm(g, x, bwd, true)?;
            h = g.concat(&[h, back], 2)?;
        }
        if groups > 0 {
            let s = g.shape(h).to_vec();
            let per = s[0] / groups;
            let grouped = g.reshape(h, &[groups, per, s[1], s[2]])?;
            let other = if self.config.communication {
                let mean = g.mean_axis(grouped, 0)?;
                g.repeat(mean, 0, groups)?
            } else {
                grouped
            };
            let joined = g.concat(&[grouped, other], 3)?;
            h = g.reshape(joined, &[s[0], s[1], 2 * s[2]])?;
        }
        let (w, b) = (g.param(&self.params, r.proj.w), g.param(&self.params, r.proj.b));
        Ok(g.linear(h, w, b)?)
    }

    /// `x[B, N, F, raw] -> [B, G, F, O]` with `G = ceil(N / stride)`, values in (-1, 1).
    pub fn forward(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let s = g.shape(x).to_vec();
        let c = &self.config;
        if s.len() != 4 || s[2] != c.bins {
            return Err(ModelError::Config(format!("input shape {s:?} does not match {} bins", c.bins)));
        }
        if s[3] != c.raw_width() {
            return Err(ModelError::Channels {
                got: s[3] / 2,
                want: c.raw_width() / 2,
            });
        }
        let (b, n, f) = (s[0], s[1], s[2]);
        let d = c.hidden;
        let groups = match c.variant {
            Variant::Fixed => 0,
            Variant::Variable => b,
        };
        // `h` is None until the first layer has run: that layer sees only the raw input.
        let mut h: Option<Var> = None;
        let skip = |g: &mut Graph<T>, h: Option<Var>| -> Result<Var> {
            Ok(match h {
                Some(h) => g.concat(&[h, x], 3)?,
                None => x,
            })
        };
        for block in &self.blocks {
            if let Some(fb) = &block.fullband {
                let u = skip(g, h)?;
                let width = g.shape(u)[3];
                let seq = g.reshape(u, &[b * n, f, width])?;
                let out = self.recurrent(g, seq, fb, groups)?;
                h = Some(g.reshape(out, &[b, n, f, d])?);
            }
            let u = skip(g, h)?;
            let width = g.shape(u)[3];
            let t = g.permute(u, &[0, 2, 1, 3])?;
            let seq = g.reshape(t, &[b * f, n, width])?;
            let out = self.recurrent(g, seq, &block.narrowband, groups)?;
            let out = g.reshape(out, &[b, f, n, d])?;
            h = Some(g.permute(out, &[0, 2, 1, 3])?);
        }
        let h = h.expect("at least one layer");
        let padding = match c.mode {
            Mode::Online => TimePadding::Causal,
            Mode::Offline => TimePadding::Centered,
        };
        let conv = |g: &mut Graph<T>, x: Var, l: &Linear| -> Result<Var> {
            let (w, bias) = (g.param(&self.params, l.w), g.param(&self.params, l.b));
            Ok(g.conv2d(x, w, bias, padding)?)
        };
        let y = conv(g, h, &self.head[0])?;
        let y = g.relu(y);
        let y = g.avg_pool_time(y, c.pools[0])?;
        let y = conv(g, y, &self.head[1])?;
        let y = g.relu(y);
        let y = g.avg_pool_time(y, c.pools[1])?;
        let y = conv(g, y, &self.head[2])?;
        Ok(g.tanh(y))
    }

    /// Scale normalization matching the model's mode.
    pub fn normalize(&self, x: &StftTensor) -> Result<StftTensor> {
        Ok(match self.config.mode {
            Mode::Online => normalize_online(x, self.config.norm_memory)?,
            Mode::Offline => normalize_offline(x),
        })
    }

    /// Network input for one utterance from an already normalized STFT.
    ///
    /// Fixed: `[1, N, F, 2M]` holding real parts of every channel then imaginary
    /// parts. Variable: `[M-1, N, F, 4]` holding `(Re X_r, Re X_m, Im X_r, Im X_m)`
    /// for each non-reference microphone `m` in index order.
    pub fn features(&self, x: &StftTensor, reference: usize) -> Result<Tensor<T>> {
        let c = &self.config;
        if x.bins != c.bins {
            return Err(ModelError::Config(format!("STFT has {} bins, model {}", x.bins, c.bins)));
        }
        if reference >= x.channels {
            return Err(ModelError::Config(format!("reference {reference} out of {} channels", x.channels)));
        }
        let (n, f) = (x.frames, x.bins);
        match c.variant {
            Variant::Fixed => {
                if x.channels != c.mics {
                    return Err(ModelError::Channels {
                        got: x.channels,
                        want: c.mics,
                    });
                }
                let m = x.channels;
                let mut data = vec![T::zero(); n * f * 2 * m];
                for t in 0..n {
                    for k in 0..f {
                        let base = (t * f + k) * 2 * m;
                        for ch in 0..m {
                            let v = x.at(ch, t, k);
                            data[base + ch] = T::from_f64(v.re);
                            data[base + m + ch] = T::from_f64(v.im);
                        }
                    }
                }
                Ok(Tensor::new(&[1, n, f, 2 * m], data)?)
            }
            Variant::Variable => {
                if x.channels < 2 {
                    return Err(ModelError::Channels { got: x.channels, want: 2 });
                }
                let others: Vec<usize> = (0..x.channels).filter(|&m| m != reference).collect();
                let mut data = vec![T::zero(); others.len() * n * f * 4];
                for (p, &m) in others.iter().enumerate() {
                    for t in 0..n {
                        for k in 0..f {
                            let (a, b) = (x.at(reference, t, k), x.at(m, t, k));
                            let base = ((p * n + t) * f + k) * 4;
                            data[base] = T::from_f64(a.re);
                            data[base + 1] = T::from_f64(b.re);
                            data[base + 2] = T::from_f64(a.im);
                            data[base + 3] = T::from_f64(b.im);
                        }
                    }
                }
                Ok(Tensor::new(&[others.len(), n, f, 4], data)?)
            }
        }
    }

    /// Normalizes, builds features and runs the network on one utterance.
    pub fn infer(&self, stft: &StftTensor, reference: usize) -> Result<TrackedEstimate> {
        let x = self.features(&self.normalize(stft)?, reference)?;
        self.infer_features(x)
    }

    pub fn infer_features(&self, x: Tensor<T>) -> Result<TrackedEstimate> {
        let mut g = Graph::new();
        let xv = g.constant(x);
        let y = self.forward(&mut g, xv)?;
        let pairs = match self.config.variant {
            Variant::Fixed => self.config.mics - 1,
            Variant::Variable => g.shape(y)[0],
        };
        let out = g.value(y).to_f64_vec();
        let shape = g.shape(y).to_vec();
        Ok(decode_output(&self.config, &shape, &out, pairs)?.remove(0))
    }
}

/// Flat index of `(utterance u, frame g, track k, pair p, component c)` in the
/// head output `[B, G, F, O]`; `c < F` is the real part of bin `c`.
///
/// Fixed: `B` indexes utterances and `o = ((p K) + k) 2 + ri`.
/// Variable (one utterance): `B` indexes pairs and `o = 2k + ri`.
pub fn output_index(config: &ModelConfig, shape: &[usize], u: usize, g: usize, k: usize, p: usize, c: usize) -> usize {
    let (gn, f, o) = (shape[1], shape[2], shape[3]);
    let (ri, bin) = (c / f, c % f);
    match config.variant {
        Variant::Fixed => ((u * gn + g) * f + bin) * o + (p * config.tracks + k) * 2 + ri,
        Variant::Variable => ((p * gn + g) * f + bin) * o + k * 2 + ri,
    }
}

/// Splits a head output into one [`TrackedEstimate`] per utterance.
pub fn decode_output(config: &ModelConfig, shape: &[usize], out: &[f64], pairs: usize) -> Result<Vec<TrackedEstimate>> {
    let utterances = match config.variant {
        Variant::Fixed => shape[0],
        Variant::Variable => 1,
    };
    let (frames, f, tracks) = (shape[1], shape[2], config.tracks);
    let dim = 2 * f;
    let mut all = Vec::with_capacity(utterances);
    for u in 0..utterances {
        let mut est = TrackedEstimate::zeros(frames, tracks, pairs, dim);
        for g in 0..frames {
            for k in 0..tracks {
                let dst = est.track_mut(g, k);
                for p in 0..pairs {
                    for c in 0..dim {
                        dst[p * dim + c] = out[output_index(config, shape, u, g, k, p, c)];
                    }
                }
            }
        }
        all.push(est);
    }
    Ok(all)
}
