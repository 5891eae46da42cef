//! Frame-level front end: 1-D convolution and max-pool blocks over time,
//! flattened into a two-layer dense ladder whose decoder reconstructs only
//! the fully connected layers.

use crate::error::{Error, Result};
use crate::ladder::{CleanPass, CombinatorKind, CostReport, CostWeights, DecoderConfig, LadderConfig, LadderModel, Task};
use crate::layers::{Mode, Relu};
use crate::numerics::{Real, RngStream, Tensor, Transpose};
use crate::params::{join, Param, Parameterized};

fn dims3<T: Real>(x: &Tensor<T>, op: &'static str) -> Result<(usize, usize, usize)> {
    match *x.shape() {
        [b, c, t] => Ok((b, c, t)),
        ref s => Err(Error::dim(op, format!("expected [batch × channels × frames], got {s:?}"))),
    }
}

/// Same-padded temporal convolution, `y[o,t] = b[o] + Σ_{c,j} W[o,c,j]·x[c, t+j−⌊(k−1)/2⌋]`.
#[derive(Debug, Clone)]
pub struct Conv1d<T = f32> {
    /// `[out × in × kernel]`
    pub weight: Param<T>,
    pub bias: Param<T>,
    cache: Option<Tensor<T>>,
}

impl<T: Real> Conv1d<T> {
    /// Glorot-uniform weights over fan-in `in·k` and fan-out `out·k`.
    pub fn new(inputs: usize, outputs: usize, kernel: usize, rng: &mut RngStream) -> Self {
        let limit = (6.0 / ((inputs + outputs) * kernel) as f64).sqrt();
        let weight = Tensor::from_fn(&[outputs, inputs, kernel], |_| T::lit(rng.uniform_range(-limit, limit)));
        Self {
            weight: Param::new(weight),
            bias: Param::new(Tensor::zeros(&[outputs])),
            cache: None,
        }
    }

    pub fn from_parts(weight: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        let [o, _, k] = *weight.shape() else {
            return Err(Error::dim("conv1d", format!("weight shape {:?}", weight.shape())));
        };
        if bias.shape() != [o] || k == 0 {
            return Err(Error::dim("conv1d", format!("weight {:?}, bias {:?}", weight.shape(), bias.shape())));
        }
        Ok(Self {
            weight: Param::new(weight),
            bias: Param::new(bias),
            cache: None,
        })
    }

    fn dims(&self) -> (usize, usize, usize) {
        let s = self.weight.value.shape();
        (s[0], s[1], s[2])
    }

    fn flat_weight(&self) -> Tensor<T> {
        let (o, c, k) = self.dims();
        Tensor::new(vec![o, c * k], self.weight.value.data().to_vec()).expect("weight size")
    }

    /// `[in·k × T]` patch matrix of one sample.
    fn im2col(&self, x: &[T], frames: usize) -> Tensor<T> {
        let (_, c_in, k) = self.dims();
        let pad = (k - 1) / 2;
        let mut cols = Tensor::zeros(&[c_in * k, frames]);
        for c in 0..c_in {
            let src = &x[c * frames..(c + 1) * frames];
            for j in 0..k {
                let row = cols.row_mut(c * k + j);
                for (t, v) in row.iter_mut().enumerate() {
                    if let Some(s) = (t + j).checked_sub(pad).filter(|&s| s < frames) {
                        *v = src[s];
                    }
                }
            }
        }
        cols
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (b, c, t) = dims3(x, "conv1d_forward")?;
        let (o, c_in, _) = self.dims();
        if c != c_in {
            return Err(Error::dim("conv1d_forward", format!("{c} input channels, layer expects {c_in}")));
        }
        let w = self.flat_weight();
        let mut out = Vec::with_capacity(b * o * t);
        for s in 0..b {
            let mut y = w.matmul(&self.im2col(&x.data()[s * c * t..(s + 1) * c * t], t))?;
            for (oc, &bias) in self.bias.value.data().iter().enumerate() {
                y.row_mut(oc).iter_mut().for_each(|v| *v += bias);
            }
            out.extend_from_slice(y.data());
        }
        Tensor::new(vec![b, o, t], out)
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let y = self.infer(x)?;
        self.cache = Some(x.clone());
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self
            .cache
            .take()
            .ok_or_else(|| Error::State("conv1d backward without cached forward".into()))?;
        let (b, c, t) = dims3(&x, "conv1d_backward")?;
        let (o, _, k) = self.dims();
        if dy.shape() != [b, o, t] {
            return Err(Error::dim("conv1d_backward", format!("gradient {:?} for output [{b}, {o}, {t}]", dy.shape())));
        }
        let pad = (k - 1) / 2;
        let w = self.flat_weight();
        let mut dw = Tensor::zeros(&[o, c * k]);
        let mut dx = Tensor::zeros(x.shape());
        for s in 0..b {
            let dys = Tensor::new(vec![o, t], dy.data()[s * o * t..(s + 1) * o * t].to_vec())?;
            let cols = self.im2col(&x.data()[s * c * t..(s + 1) * c * t], t);
            dw.add_assign(&dys.matmul_with(&cols, Transpose::Right)?)?;
            for oc in 0..o {
                self.bias.grad.data_mut()[oc] += dys.row(oc).iter().copied().sum();
            }
            let dcols = w.matmul_with(&dys, Transpose::Left)?;
            let dxs = &mut dx.data_mut()[s * c * t..(s + 1) * c * t];
            for ch in 0..c {
                for j in 0..k {
                    let row = dcols.row(ch * k + j);
                    for (tt, &g) in row.iter().enumerate() {
                        if let Some(src) = (tt + j).checked_sub(pad).filter(|&v| v < t) {
                            dxs[ch * t + src] += g;
                        }
                    }
                }
            }
        }
        for (g, d) in self.weight.grad.data_mut().iter_mut().zip(dw.data()) {
            *g += *d;
        }
        Ok(dx)
    }
}

impl<T: Real> Parameterized<T> for Conv1d<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

/// Non-overlapping max over windows of `pool` frames; a trailing partial
/// window is dropped.
#[derive(Debug, Clone)]
pub struct MaxPool1d {
    pub pool: usize,
    cache: Option<(Vec<usize>, Vec<usize>)>,
}

impl MaxPool1d {
    pub fn new(pool: usize) -> Result<Self> {
        if pool == 0 {
            return Err(Error::Parameter("pool size must be at least 1".into()));
        }
        Ok(Self { pool, cache: None })
    }

    fn run<T: Real>(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
        let (b, c, t) = dims3(x, "maxpool1d_forward")?;
        let to = t / self.pool;
        let mut out = Vec::with_capacity(b * c * to);
        let mut arg = Vec::with_capacity(b * c * to);
        for row in 0..b * c {
            let src = &x.data()[row * t..(row + 1) * t];
            for w in 0..to {
                let mut best = w * self.pool;
                for i in best + 1..(w + 1) * self.pool {
                    if src[i] > src[best] {
                        best = i;
                    }
                }
                out.push(src[best]);
                arg.push(row * t + best);
            }
        }
        Ok((Tensor::new(vec![b, c, to], out)?, arg))
    }

    pub fn infer<T: Real>(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.run(x)?.0)
    }

    pub fn forward<T: Real>(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (y, arg) = self.run(x)?;
        self.cache = Some((arg, x.shape().to_vec()));
        Ok(y)
    }

    /// Routes each upstream gradient to the position that won the max.
    pub fn backward<T: Real>(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let (arg, shape) = self
            .cache
            .take()
            .ok_or_else(|| Error::State("maxpool backward without cached forward".into()))?;
        if dy.len() != arg.len() {
            return Err(Error::dim("maxpool1d_backward", format!("{} gradients for {} outputs", dy.len(), arg.len())));
        }
        let mut dx = Tensor::zeros(&shape);
        for (&i, &g) in arg.iter().zip(dy.data()) {
            dx.data_mut()[i] += g;
        }
        Ok(dx)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvBlockConfig {
    pub filters: usize,
    pub kernel: usize,
    pub pool: usize,
}

/// Convolution, ReLU, max-pool.
#[derive(Debug, Clone)]
pub struct ConvBlock<T = f32> {
    pub conv: Conv1d<T>,
    relu: Relu<T>,
    pub pool: MaxPool1d,
}

impl<T: Real> ConvBlock<T> {
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.pool.infer(&Relu::infer(&self.conv.infer(x)?))
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let c = self.conv.forward(x)?;
        let r = self.relu.forward(&c);
        self.pool.forward(&r)
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let d = self.pool.backward(dy)?;
        let d = self.relu.backward(&d)?;
        self.conv.backward(&d)
    }
}

pub const DEFAULT_FILTERS: [usize; 4] = [64, 64, 128, 128];
pub const DEFAULT_KERNEL: usize = 8;
pub const DEFAULT_POOL: usize = 2;
pub const DEFAULT_FC: [usize; 2] = [256, 256];

#[derive(Debug, Clone, PartialEq)]
pub struct CnnConfig {
    pub input_channels: usize,
    pub frames: usize,
    pub blocks: Vec<ConvBlockConfig>,
    pub fc: Vec<usize>,
    pub task: Task,
    pub sigma: f64,
    /// `Some` builds the τ-ladder, `None` the supervised baseline.
    pub combinator: Option<CombinatorKind>,
}

impl CnnConfig {
    pub fn new(input_channels: usize, task: Task, ladder: bool) -> Self {
        Self {
            input_channels,
            frames: crate::data::FRAMES,
            blocks: DEFAULT_FILTERS
                .iter()
                .map(|&filters| ConvBlockConfig {
                    filters,
                    kernel: DEFAULT_KERNEL,
                    pool: DEFAULT_POOL,
                })
                .collect(),
            fc: DEFAULT_FC.to_vec(),
            task,
            sigma: if ladder { crate::ladder::model::NOISE_VARIANCE.sqrt() } else { 0.0 },
            combinator: ladder.then(CombinatorKind::default),
        }
    }

    /// Temporal length after each block.
    pub fn temporal_lengths(&self) -> Vec<usize> {
        self.blocks
            .iter()
            .scan(self.frames, |t, b| {
                *t /= b.pool.max(1);
                Some(*t)
            })
            .collect()
    }

    pub fn flatten_width(&self) -> usize {
        let channels = self.blocks.last().map_or(self.input_channels, |b| b.filters);
        let frames = self.temporal_lengths().last().copied().unwrap_or(self.frames);
        channels * frames
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_channels == 0 || self.frames == 0 || self.fc.is_empty() {
            return Err(Error::Config("CNN needs input channels, frames and at least one fc layer".into()));
        }
        if self.blocks.iter().any(|b| b.filters == 0 || b.kernel == 0 || b.pool == 0) {
            return Err(Error::Config("conv blocks need positive filters, kernel and pool".into()));
        }
        if self.flatten_width() == 0 {
            return Err(Error::Config(format!("pooling reduces {} frames to nothing", self.frames)));
        }
        Ok(())
    }

    /// The dense part: flatten → fc layers → heads, no dropout, decoder from
    /// the first fc layer up.
    pub fn dense_config(&self) -> LadderConfig {
        LadderConfig {
            input_dim: self.flatten_width(),
            hidden: self.fc.clone(),
            task: self.task,
            sigma: self.sigma,
            dropout: vec![0.0; self.fc.len()],
            decoder: self.combinator.map(|combinator| DecoderConfig {
                combinator,
                first_level: 1,
            }),
        }
    }
}

/// Clean-path outputs of the frame-level encoder.
#[derive(Debug, Clone)]
pub struct CnnEncoding<T = f32> {
    /// Output of each conv block.
    pub blocks: Vec<Tensor<T>>,
    pub flat: Tensor<T>,
    /// Normalized pre-activations of each fc layer.
    pub fc: Vec<Tensor<T>>,
    pub y: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct CnnLadder<T = f32> {
    config: CnnConfig,
    pub blocks: Vec<ConvBlock<T>>,
    pub top: LadderModel<T>,
}

impl<T: Real> CnnLadder<T> {
    pub fn new(config: CnnConfig, rng: &mut RngStream) -> Result<Self> {
        config.validate()?;
        let mut channels = config.input_channels;
        let mut blocks = Vec::with_capacity(config.blocks.len());
        for b in &config.blocks {
            blocks.push(ConvBlock {
                conv: Conv1d::new(channels, b.filters, b.kernel, rng),
                relu: Relu::new(),
                pool: MaxPool1d::new(b.pool)?,
            });
            channels = b.filters;
        }
        let top = LadderModel::new(config.dense_config(), rng)?;
        Ok(Self { config, blocks, top })
    }

    pub fn config(&self) -> &CnnConfig {
        &self.config
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let (_, c, t) = dims3(x, "cnn_encode")?;
        if c != self.config.input_channels || t != self.config.frames {
            return Err(Error::dim(
                "cnn_encode",
                format!(
                    "input [{c} × {t}], model expects [{} × {}]",
                    self.config.input_channels, self.config.frames
                ),
            ));
        }
        Ok(())
    }

    fn flatten(x: Tensor<T>) -> Result<Tensor<T>> {
        let b = x.shape()[0];
        let w = x.len() / b.max(1);
        x.reshape(&[b, w])
    }

    fn conv_infer(&self, x: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        self.check_input(x)?;
        let mut outs: Vec<Tensor<T>> = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let y = b.infer(outs.last().unwrap_or(x))?;
            outs.push(y);
        }
        Ok(outs)
    }

    fn conv_forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut h = x.clone();
        for b in &mut self.blocks {
            h = b.forward(&h)?;
        }
        Self::flatten(h)
    }

    fn conv_backward(&mut self, d_flat: &Tensor<T>) -> Result<Tensor<T>> {
        let (c, t) = match self.config.blocks.last() {
            Some(b) => (b.filters, *self.config.temporal_lengths().last().expect("non-empty")),
            None => (self.config.input_channels, self.config.frames),
        };
        let mut d = d_flat.clone().reshape(&[d_flat.shape()[0], c, t])?;
        for b in self.blocks.iter_mut().rev() {
            d = b.backward(&d)?;
        }
        Ok(d)
    }

    /// Conv stack, flatten, fc layers and heads along the clean path.
    pub fn encode(&mut self, x: &Tensor<T>, mode: Mode) -> Result<CnnEncoding<T>> {
        let blocks = self.conv_infer(x)?;
        let flat = Self::flatten(blocks.last().cloned().unwrap_or_else(|| x.clone()))?;
        let CleanPass { z, y, .. } = self.top.clean_encode(&flat, mode)?;
        Ok(CnnEncoding {
            blocks,
            flat,
            fc: z[1..].to_vec(),
            y,
        })
    }

    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let blocks = self.conv_infer(x)?;
        let flat = Self::flatten(blocks.last().cloned().unwrap_or_else(|| x.clone()))?;
        self.top.predict(&flat)
    }

    /// τ-ladder cost with fresh gradients. The conv stack is shared by both
    /// paths and stays noise-free; noise enters at the flatten boundary and
    /// only the fc layers are reconstructed.
    pub fn tau_ladder_cost(
        &mut self,
        x: &Tensor<T>,
        labels: Option<&Tensor<T>>,
        weights: &CostWeights,
        rng: &mut RngStream,
    ) -> Result<CostReport> {
        self.zero_grad();
        let flat = self.conv_forward(x)?;
        let clean = self.top.clean_encode(&flat, Mode::Train)?;
        self.tau_cost_with_targets(&flat, labels, &clean, weights, rng)
    }

    /// Clean-path reconstruction targets for `x`.
    pub fn clean_targets(&mut self, x: &Tensor<T>) -> Result<CleanPass<T>> {
        let blocks = self.conv_infer(x)?;
        let flat = Self::flatten(blocks.last().cloned().unwrap_or_else(|| x.clone()))?;
        self.top.clean_encode(&flat, Mode::Train)
    }

    /// τ-ladder cost against fixed clean targets; gradients accumulate.
    pub fn tau_ladder_cost_with_targets(
        &mut self,
        x: &Tensor<T>,
        labels: Option<&Tensor<T>>,
        clean: &CleanPass<T>,
        weights: &CostWeights,
        rng: &mut RngStream,
    ) -> Result<CostReport> {
        let flat = self.conv_forward(x)?;
        self.tau_cost_with_targets(&flat, labels, clean, weights, rng)
    }

    fn tau_cost_with_targets(
        &mut self,
        flat: &Tensor<T>,
        labels: Option<&Tensor<T>>,
        clean: &CleanPass<T>,
        weights: &CostWeights,
        rng: &mut RngStream,
    ) -> Result<CostReport> {
        let (report, d_flat) = self.top.ladder_cost_with_targets(flat, labels, clean, weights, rng)?;
        self.conv_backward(&d_flat)?;
        Ok(report)
    }

    /// Supervised CNN cost with fresh gradients.
    pub fn baseline_cost(
        &mut self,
        x: &Tensor<T>,
        labels: &Tensor<T>,
        weights: &CostWeights,
        rng: &mut RngStream,
    ) -> Result<CostReport> {
        self.zero_grad();
        let flat = self.conv_forward(x)?;
        let (report, d_flat) = self.top.baseline_cost_accumulate(&flat, labels, weights, rng)?;
        self.conv_backward(&d_flat)?;
        Ok(report)
    }

    pub fn train_cost(
        &mut self,
        x: &Tensor<T>,
        labels: Option<&Tensor<T>>,
        weights: &CostWeights,
        rng: &mut RngStream,
    ) -> Result<CostReport> {
        match (self.top.decoder.is_some(), labels) {
            (true, _) => self.tau_ladder_cost(x, labels, weights, rng),
            (false, Some(l)) => self.baseline_cost(x, l, weights, rng),
            (false, None) => Err(Error::BatchContract("supervised-only model given an unlabeled batch".into())),
        }
    }
}

impl<T: Real> Parameterized<T> for CnnLadder<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        for (i, b) in self.blocks.iter().enumerate() {
            b.conv.visit_params(&join(prefix, &format!("conv.{i}")), f);
        }
        self.top.visit_params(prefix, f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.conv.visit_params_mut(&join(prefix, &format!("conv.{i}")), f);
        }
        self.top.visit_params_mut(prefix, f);
    }

    fn visit_buffers(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.top.visit_buffers(prefix, f);
    }

    fn visit_buffers_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.top.visit_buffers_mut(prefix, f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check_params, check_tensor};
    use crate::ladder::Attribute;
    use crate::numerics::sample_gaussian;

    fn gaussian(shape: &[usize], seed: u64) -> Tensor<f64> {
        sample_gaussian(shape, 1.0, &mut RngStream::new(seed)).unwrap()
    }

    #[test]
    fn maxpool_examples() {
        let x = Tensor::new(vec![1, 1, 4], vec![1.0, 3.0, 2.0, 0.0]).unwrap();
        let mut p = MaxPool1d::new(2).unwrap();
        assert_eq!(p.forward(&x).unwrap().data(), &[3.0, 2.0]);
        assert_eq!(p.backward(&Tensor::new(vec![1, 1, 2], vec![5.0, 7.0]).unwrap()).unwrap().data(), &[0.0, 5.0, 7.0, 0.0]);
        assert_eq!(MaxPool1d::new(1).unwrap().infer(&x).unwrap(), x);
        let tie = Tensor::new(vec![1, 1, 3], vec![2.0, 2.0, 9.0]).unwrap();
        let mut p = MaxPool1d::new(2).unwrap();
        p.forward(&tie).unwrap();
        assert_eq!(p.backward(&Tensor::full(&[1, 1, 1], 1.0)).unwrap().data(), &[1.0, 0.0, 0.0]);
        assert!(MaxPool1d::new(0).is_err());
    }

    #[test]
    fn maxpool_conserves_gradient_mass() {
        let x = gaussian(&[3, 4, 17], 1);
        let mut p = MaxPool1d::new(3).unwrap();
        let y = p.forward(&x).unwrap();
        let dy = gaussian(y.shape(), 2);
        let dx = p.backward(&dy).unwrap();
        assert!((dx.sum() - dy.sum()).abs() < 1e-12);
    }

    #[test]
    fn unit_kernel_identity_conv() {
        let mut w = Tensor::<f64>::zeros(&[3, 3, 1]);
        for c in 0..3 {
            w.data_mut()[c * 3 + c] = 1.0;
        }
        let conv = Conv1d::from_parts(w, Tensor::zeros(&[3])).unwrap();
        let x = gaussian(&[2, 3, 8], 3);
        assert_eq!(Relu::infer(&conv.infer(&x).unwrap()), Relu::infer(&x));
        let zeros = Tensor::zeros(&[1, 3, 5]);
        let b = Conv1d::from_parts(Tensor::<f64>::zeros(&[2, 3, 4]), Tensor::new(vec![2], vec![0.5, -1.0]).unwrap()).unwrap();
        let y = Relu::infer(&b.infer(&zeros).unwrap());
        assert_eq!(y.data(), &[0.5, 0.5, 0.5, 0.5, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert!(conv.infer(&Tensor::zeros(&[1, 2, 5])).is_err());
    }

    #[test]
    fn same_padding_by_hand() {
        // k=3 pads one frame on each side.
        let conv = Conv1d::from_parts(Tensor::new(vec![1, 1, 3], vec![1.0, 2.0, 3.0]).unwrap(), Tensor::zeros(&[1])).unwrap();
        let x = Tensor::new(vec![1, 1, 4], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(conv.infer(&x).unwrap().data(), &[2.0, 1.0, 3.0, 2.0]);
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        for k in [1, 3, 4] {
            let mut conv = Conv1d::<f64>::new(3, 2, k, &mut RngStream::new(4));
            conv.bias.value = gaussian(&[2], 9);
            let x = gaussian(&[2, 3, 8], 5);
            let r = gaussian(&[2, 2, 8], 6);
            conv.forward(&x).unwrap();
            let dx = conv.backward(&r).unwrap();
            let frozen = conv.clone();
            let rep = check_tensor("x", &x, &dx, |x| frozen.infer(x).unwrap().mul(&r).unwrap().sum());
            assert!(rep.max_rel_error < 1e-4, "{rep:?}");
            let rep = check_params(&mut conv, usize::MAX, |c| c.infer(&x).unwrap().mul(&r).unwrap().sum());
            assert!(rep.max_rel_error < 1e-4, "{rep:?}");
        }
    }

    #[test]
    fn default_shapes() {
        for d in [65, 40] {
            let cfg = CnnConfig::new(d, Task::Mtl, true);
            assert_eq!(cfg.temporal_lengths(), [500, 250, 125, 62]);
            assert_eq!(cfg.flatten_width(), 62 * 128);
        }
    }

    fn toy(task: Task, ladder: bool) -> CnnConfig {
        CnnConfig {
            input_channels: 4,
            frames: 16,
            blocks: vec![
                ConvBlockConfig { filters: 3, kernel: 3, pool: 2 },
                ConvBlockConfig { filters: 3, kernel: 4, pool: 2 },
            ],
            fc: vec![5, 4],
            task,
            sigma: if ladder { 0.4 } else { 0.0 },
            combinator: ladder.then(CombinatorKind::default),
        }
    }

    fn perturbed(cfg: CnnConfig, seed: u64) -> CnnLadder<f64> {
        let mut m = CnnLadder::<f64>::new(cfg, &mut RngStream::new(seed)).unwrap();
        let mut rng = RngStream::new(seed + 1);
        m.top.visit_params_mut("", &mut |_, p| {
            for v in p.value.data_mut() {
                *v += 0.3 * rng.standard_normal();
            }
        });
        m
    }

    #[test]
    fn tau_ladder_reconstructs_two_levels() {
        let mut m = perturbed(toy(Task::Mtl, true), 1);
        let w = CostWeights::uniform(1.0, 3, 0.3, 0.3).unwrap();
        let r = m.tau_ladder_cost(&gaussian(&[6, 4, 16], 2), None, &w, &mut RngStream::new(3)).unwrap();
        assert_eq!(r.per_level.len(), 2);
        let enc = m.encode(&gaussian(&[6, 4, 16], 2), Mode::Eval).unwrap();
        assert_eq!(enc.blocks[0].shape(), [6, 3, 8]);
        assert_eq!(enc.blocks[1].shape(), [6, 3, 4]);
        assert_eq!(enc.fc.len(), 2);
        let zeros = m.predict(&Tensor::zeros(&[2, 4, 16])).unwrap();
        assert!(zeros.is_finite());
        assert_eq!(zeros, m.predict(&Tensor::zeros(&[2, 4, 16])).unwrap());
        assert!(m.predict(&Tensor::zeros(&[2, 4, 15])).is_err());
    }

    #[test]
    fn tau_ladder_collapses_to_baseline() {
        for task in [Task::Stl(Attribute::Arousal), Task::Mtl] {
            let mut cfg = toy(task, true);
            cfg.sigma = 0.0;
            let mut ladder = perturbed(cfg, 7);
            let mut base = ladder.clone();
            base.top.decoder = None;
            let x = gaussian(&[6, 4, 16], 8);
            let y = gaussian(&[6, 3], 9);
            let w = CostWeights::uniform(0.0, 3, 0.5, 0.2).unwrap();
            let a = ladder.tau_ladder_cost(&x, Some(&y), &w, &mut RngStream::new(10)).unwrap();
            let b = base.baseline_cost(&x, &y, &w, &mut RngStream::new(10)).unwrap();
            assert!((a.total - b.total).abs() < 1e-10);
        }
    }

    #[test]
    fn tau_ladder_gradients_match_finite_differences() {
        for task in [Task::Stl(Attribute::Dominance), Task::Mtl] {
            let mut m = perturbed(toy(task, true), 11);
            let x = gaussian(&[4, 4, 16], 12);
            let y = gaussian(&[4, 3], 13);
            let w = CostWeights::new(vec![1.0, 0.8, 1.2], 0.3, 0.4).unwrap();
            m.zero_grad();
            let flat = m.conv_forward(&x).unwrap();
            let clean = m.top.clean_encode(&flat, Mode::Train).unwrap();
            m.tau_cost_with_targets(&flat, Some(&y), &clean, &w, &mut RngStream::new(14)).unwrap();
            let rep = check_params(&mut m.clone(), 10, |mm| {
                let flat = mm.conv_forward(&x).unwrap();
                mm.top.ladder_cost_with_targets(&flat, Some(&y), &clean, &w, &mut RngStream::new(14)).unwrap().0.total
            });
            assert!(rep.max_rel_error < 1e-4, "{task:?} {rep:?}");
        }
    }

    #[test]
    fn baseline_gradients_match_finite_differences() {
        let mut m = perturbed(toy(Task::Mtl, false), 21);
        let x = gaussian(&[4, 4, 16], 22);
        let y = gaussian(&[4, 3], 23);
        let w = CostWeights::uniform(0.0, 3, 0.2, 0.5).unwrap();
        m.baseline_cost(&x, &y, &w, &mut RngStream::new(24)).unwrap();
        let rep = check_params(&mut m.clone(), 10, |mm| mm.baseline_cost(&x, &y, &w, &mut RngStream::new(24)).unwrap().total);
        assert!(rep.max_rel_error < 1e-4, "{rep:?}");
        assert!(m.train_cost(&x, None, &w, &mut RngStream::new(1)).is_err());
    }
}
