use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::NetworkConfig;
use crate::autodiff::{
    concat_channels, concat_channels_backward, max_pool2, max_pool2_backward, relu, relu_backward,
    sigmoid, sigmoid_backward, softmax_channels, softmax_channels_backward, upsample2,
    upsample2_backward, BatchNorm, BatchNormCache, Buffer, Conv2d, ConvCache, Mode, Module,
    Parameter, PoolCache, Real, Tensor4,
};
use crate::error::{ensure_dim, Error, Result};
use crate::losses::LossGradients;

struct BlockCache<T> {
    conv: ConvCache<T>,
    activated: Tensor4<T>,
    bn: BatchNormCache<T>,
}

/// conv 3x3 -> ReLU -> batch norm.
struct ConvBlock<T> {
    conv: Conv2d<T>,
    bn: BatchNorm<T>,
    cache: Option<BlockCache<T>>,
}

impl<T: Real> ConvBlock<T> {
    fn new(name: &str, cin: usize, cout: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            conv: Conv2d::new(&format!("{name}.conv"), 3, cin, cout, rng),
            bn: BatchNorm::new(&format!("{name}.bn"), cout),
            cache: None,
        }
    }

    fn forward_train(&mut self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        let (z, conv) = self.conv.forward(x)?;
        let activated = relu(&z);
        let (y, bn) = self.bn.forward_train(&activated)?;
        self.cache = Some(BlockCache { conv, activated, bn });
        Ok(y)
    }

    fn forward_eval(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        let (z, _) = self.conv.forward(x)?;
        self.bn.forward_eval(&relu(&z))
    }

    fn backward(&mut self, grad: &Tensor4<T>, input_grad: bool) -> Result<Option<Tensor4<T>>> {
        let cache = self.cache.take().ok_or(Error::BackwardBeforeForward)?;
        let g = self.bn.backward(&cache.bn, grad)?;
        let g = relu_backward(&cache.activated, &g)?;
        self.conv.backward(&cache.conv, &g, input_grad)
    }

    fn params(&mut self) -> Vec<&mut Parameter<T>> {
        let mut v = self.conv.params_mut();
        v.extend(self.bn.params_mut());
        v
    }
}

fn stage<T: Real>(name: &str, cin: usize, n: usize, count: usize, rng: &mut ChaCha8Rng) -> Vec<ConvBlock<T>> {
    (0..count)
        .map(|j| ConvBlock::new(&format!("{name}.{j}"), if j == 0 { cin } else { n }, n, rng))
        .collect()
}

fn stage_train<T: Real>(blocks: &mut [ConvBlock<T>], mut x: Tensor4<T>) -> Result<Tensor4<T>> {
    for b in blocks {
        x = b.forward_train(&x)?;
    }
    Ok(x)
}

fn stage_eval<T: Real>(blocks: &[ConvBlock<T>], mut x: Tensor4<T>) -> Result<Tensor4<T>> {
    for b in blocks {
        x = b.forward_eval(&x)?;
    }
    Ok(x)
}

/// Backpropagates through a stage; the first block skips its input gradient
/// when `input_grad` is false.
fn stage_backward<T: Real>(
    blocks: &mut [ConvBlock<T>],
    mut g: Tensor4<T>,
    input_grad: bool,
) -> Result<Option<Tensor4<T>>> {
    for (j, b) in blocks.iter_mut().enumerate().rev() {
        match b.backward(&g, j > 0 || input_grad)? {
            Some(next) => g = next,
            None => return Ok(None),
        }
    }
    Ok(Some(g))
}

/// Three blocks with one 2x upsampling before the last, then a 1x1
/// classifier conv producing logits.
struct Branch<T> {
    blocks: Vec<ConvBlock<T>>,
    classifier: Conv2d<T>,
    classifier_cache: Option<ConvCache<T>>,
}

impl<T: Real> Branch<T> {
    fn new(name: &str, n: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            blocks: stage(name, n, n, 3, rng),
            classifier: Conv2d::new(&format!("{name}.classifier"), 1, n, outputs, rng),
            classifier_cache: None,
        }
    }

    fn forward_train(&mut self, feat: &Tensor4<T>) -> Result<Tensor4<T>> {
        let x = self.blocks[0].forward_train(feat)?;
        let x = self.blocks[1].forward_train(&x)?;
        let x = self.blocks[2].forward_train(&upsample2(&x))?;
        let (logits, cache) = self.classifier.forward(&x)?;
        self.classifier_cache = Some(cache);
        Ok(logits)
    }

    fn forward_eval(&self, feat: &Tensor4<T>) -> Result<Tensor4<T>> {
        let x = self.blocks[0].forward_eval(feat)?;
        let x = self.blocks[1].forward_eval(&x)?;
        let x = self.blocks[2].forward_eval(&upsample2(&x))?;
        Ok(self.classifier.forward(&x)?.0)
    }

    /// Returns the gradient with respect to the backbone features.
    fn backward(&mut self, grad_logits: &Tensor4<T>) -> Result<Tensor4<T>> {
        let cache = self.classifier_cache.take().ok_or(Error::BackwardBeforeForward)?;
        let g = self.classifier.backward(&cache, grad_logits, true)?.expect("input grad");
        let g = self.blocks[2].backward(&g, true)?.expect("input grad");
        let g = upsample2_backward(&g)?;
        let g = self.blocks[1].backward(&g, true)?.expect("input grad");
        Ok(self.blocks[0].backward(&g, true)?.expect("input grad"))
    }

    fn params(&mut self) -> Vec<&mut Parameter<T>> {
        let mut v: Vec<_> = self.blocks.iter_mut().flat_map(|b| b.params()).collect();
        v.extend(self.classifier.params_mut());
        v
    }

    fn buffers(&mut self) -> Vec<&mut Buffer<T>> {
        self.blocks.iter_mut().flat_map(|b| b.bn.buffers_mut()).collect()
    }
}

/// Network outputs: main head scores and, during training, the auxiliary
/// class-agnostic score map.
#[derive(Clone, Debug)]
pub struct NetworkOutput<T> {
    /// Softmax probabilities over `C + 1` channels or sigmoid scores over `C`.
    pub main: Tensor4<T>,
    /// `B x H x W x 1` sigmoid scores.
    pub aux: Option<Tensor4<T>>,
}

struct ForwardCache<T> {
    pools: Vec<PoolCache>,
    main_out: Tensor4<T>,
    aux_out: Option<Tensor4<T>>,
}

/// U-Net variant covering the baseline softmax head, the sigmoid head, the
/// auxiliary head and class-specific separate heads.
pub struct SegNet<T> {
    config: NetworkConfig,
    encoder: Vec<Vec<ConvBlock<T>>>,
    bottom: Vec<ConvBlock<T>>,
    /// Decoder stages from the coarsest skip level up to half resolution.
    decoder: Vec<Vec<ConvBlock<T>>>,
    main: Vec<Branch<T>>,
    aux: Option<Branch<T>>,
    cache: Option<ForwardCache<T>>,
}

impl<T: Real> SegNet<T> {
    /// Builds the network with He-uniform conv weights drawn from `seed`.
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = config.filters;
        let cpl = config.convs_per_level;
        let encoder = (0..config.depth)
            .map(|l| {
                let cin = if l == 0 { config.in_channels } else { n };
                stage(&format!("enc{l}"), cin, n, cpl, &mut rng)
            })
            .collect();
        let bottom = stage("bottom", n, n, cpl, &mut rng);
        let decoder = (1..config.depth)
            .rev()
            .map(|l| stage(&format!("dec{l}"), 2 * n, n, cpl, &mut rng))
            .collect();
        let k = config.output_channels();
        let main = if config.use_separate_heads {
            (0..k)
                .map(|c| Branch::new(&format!("head{c}"), n, 1, &mut rng))
                .collect()
        } else {
            vec![Branch::new("head", n, k, &mut rng)]
        };
        let aux = config.use_aux_head.then(|| Branch::new("aux", n, 1, &mut rng));
        Ok(Self {
            config,
            encoder,
            bottom,
            decoder,
            main,
            aux,
            cache: None,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    fn check_input(&self, x: &Tensor4<T>) -> Result<()> {
        let s = x.shape();
        ensure_dim("forward", "input channels", self.config.in_channels, s.channels)?;
        self.config.validate_input(s.height, s.width)
    }

    fn activate(&self, logits: &Tensor4<T>) -> Result<Tensor4<T>> {
        if self.config.use_sigmoid {
            Ok(sigmoid(logits))
        } else {
            softmax_channels(logits)
        }
    }

    fn join_logits(parts: Vec<Tensor4<T>>) -> Result<Tensor4<T>> {
        let mut it = parts.into_iter();
        let mut acc = it.next().expect("at least one head");
        for p in it {
            acc = concat_channels(&acc, &p)?;
        }
        Ok(acc)
    }

    /// Runs the network. Training mode caches activations for
    /// [`SegNet::backward`], uses batch statistics and returns the auxiliary
    /// output; eval mode uses running statistics and omits it.
    pub fn forward(&mut self, x: &Tensor4<T>, mode: Mode) -> Result<NetworkOutput<T>> {
        match mode {
            Mode::Eval => self.infer(x),
            Mode::Train => self.forward_train(x),
        }
    }

    fn forward_train(&mut self, x: &Tensor4<T>) -> Result<NetworkOutput<T>> {
        self.check_input(x)?;
        self.cache = None;
        let mut skips = Vec::with_capacity(self.config.depth);
        let mut pools = Vec::with_capacity(self.config.depth);
        let mut h = x.clone();
        for level in self.encoder.iter_mut() {
            h = stage_train(level, h)?;
            let (p, cache) = max_pool2(&h)?;
            skips.push(h);
            pools.push(cache);
            h = p;
        }
        h = stage_train(&mut self.bottom, h)?;
        for (stage, level) in self.decoder.iter_mut().zip((1..self.config.depth).rev()) {
            h = concat_channels(&upsample2(&h), &skips[level])?;
            h = stage_train(stage, h)?;
        }
        let feat = h;

        let logits = self
            .main
            .iter_mut()
            .map(|b| b.forward_train(&feat))
            .collect::<Result<Vec<_>>>()?;
        let main_out = self.activate(&Self::join_logits(logits)?)?;
        let aux_out = match self.aux.as_mut() {
            Some(b) => Some(sigmoid(&b.forward_train(&feat)?)),
            None => None,
        };
        self.cache = Some(ForwardCache {
            pools,
            main_out: main_out.clone(),
            aux_out: aux_out.clone(),
        });
        Ok(NetworkOutput {
            main: main_out,
            aux: aux_out,
        })
    }

    fn infer_impl(&self, x: &Tensor4<T>, with_aux: bool) -> Result<NetworkOutput<T>> {
        self.check_input(x)?;
        let mut skips = Vec::with_capacity(self.config.depth);
        let mut h = x.clone();
        for level in &self.encoder {
            h = stage_eval(level, h)?;
            let (p, _) = max_pool2(&h)?;
            skips.push(h);
            h = p;
        }
        h = stage_eval(&self.bottom, h)?;
        for (stage, level) in self.decoder.iter().zip((1..self.config.depth).rev()) {
            h = concat_channels(&upsample2(&h), &skips[level])?;
            h = stage_eval(stage, h)?;
        }
        let logits = self
            .main
            .iter()
            .map(|b| b.forward_eval(&h))
            .collect::<Result<Vec<_>>>()?;
        let main = self.activate(&Self::join_logits(logits)?)?;
        let aux = match (&self.aux, with_aux) {
            (Some(b), true) => Some(sigmoid(&b.forward_eval(&h)?)),
            _ => None,
        };
        Ok(NetworkOutput { main, aux })
    }

    /// Eval-mode forward pass without the auxiliary output.
    pub fn infer(&self, x: &Tensor4<T>) -> Result<NetworkOutput<T>> {
        self.infer_impl(x, false)
    }

    /// Eval-mode forward pass that keeps the auxiliary output, for logging
    /// validation losses with the auxiliary term.
    pub fn infer_with_aux(&self, x: &Tensor4<T>) -> Result<NetworkOutput<T>> {
        self.infer_impl(x, true)
    }

    /// Accumulates parameter gradients for the loss whose output gradients
    /// are `grads`. Consumes the cache of the last training forward pass.
    pub fn backward(&mut self, grads: &LossGradients<T>) -> Result<()> {
        let cache = self.cache.take().ok_or(Error::BackwardBeforeForward)?;
        if grads.main.shape() != cache.main_out.shape() {
            return Err(Error::invalid(
                "backward",
                format!(
                    "main gradient {} does not match output {}",
                    grads.main.shape(),
                    cache.main_out.shape()
                ),
            ));
        }
        let grad_logits = if self.config.use_sigmoid {
            sigmoid_backward(&cache.main_out, &grads.main)?
        } else {
            softmax_channels_backward(&cache.main_out, &grads.main)?
        };

        let mut d_feat: Option<Tensor4<T>> = None;
        let mut add = |g: Tensor4<T>| -> Result<()> {
            match d_feat.as_mut() {
                Some(acc) => acc.add_assign(&g),
                None => {
                    d_feat = Some(g);
                    Ok(())
                }
            }
        };
        if self.main.len() == 1 {
            add(self.main[0].backward(&grad_logits)?)?;
        } else {
            for (c, branch) in self.main.iter_mut().enumerate() {
                add(branch.backward(&grad_logits.channel(c))?)?;
            }
        }
        match (self.aux.as_mut(), &grads.aux, &cache.aux_out) {
            (Some(branch), Some(g), Some(out)) => {
                add(branch.backward(&sigmoid_backward(out, g)?)?)?;
            }
            (Some(branch), None, _) => {
                // Clear the cached activations of an unused auxiliary head.
                branch.classifier_cache = None;
                for b in &mut branch.blocks {
                    b.cache = None;
                }
            }
            (None, Some(_), _) => {
                return Err(Error::invalid(
                    "backward",
                    "auxiliary gradient given but the network has no auxiliary head",
                ));
            }
            _ => {}
        }
        let mut g = d_feat.expect("at least one head");

        let n = self.config.filters;
        let mut skip_grads: Vec<Option<Tensor4<T>>> = (0..self.config.depth).map(|_| None).collect();
        for (stage, level) in self.decoder.iter_mut().zip((1..self.config.depth).rev()).rev() {
            g = stage_backward(stage, g, true)?.expect("input grad");
            let (d_up, d_skip) = concat_channels_backward(&g, n)?;
            skip_grads[level] = Some(d_skip);
            g = upsample2_backward(&d_up)?;
        }
        g = stage_backward(&mut self.bottom, g, true)?.expect("input grad");
        for (level, stage) in self.encoder.iter_mut().enumerate().rev() {
            g = max_pool2_backward(&cache.pools[level], &g)?;
            if let Some(s) = skip_grads[level].take() {
                g.add_assign(&s)?;
            }
            match stage_backward(stage, g, level > 0)? {
                Some(next) => g = next,
                None => break,
            }
        }
        Ok(())
    }

}

impl<T: Real> Module<T> for SegNet<T> {
    fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        let mut v: Vec<&mut Parameter<T>> = Vec::new();
        for b in self.encoder.iter_mut().flatten() {
            v.extend(b.params());
        }
        for b in self.bottom.iter_mut() {
            v.extend(b.params());
        }
        for b in self.decoder.iter_mut().flatten() {
            v.extend(b.params());
        }
        for h in self.main.iter_mut() {
            v.extend(h.params());
        }
        if let Some(a) = self.aux.as_mut() {
            v.extend(a.params());
        }
        v
    }

    fn buffers_mut(&mut self) -> Vec<&mut Buffer<T>> {
        let mut v: Vec<&mut Buffer<T>> = Vec::new();
        for b in self
            .encoder
            .iter_mut()
            .flatten()
            .chain(self.bottom.iter_mut())
            .chain(self.decoder.iter_mut().flatten())
        {
            v.extend(b.bn.buffers_mut());
        }
        for h in self.main.iter_mut() {
            v.extend(h.buffers());
        }
        if let Some(a) = self.aux.as_mut() {
            v.extend(a.buffers());
        }
        v
    }
}
