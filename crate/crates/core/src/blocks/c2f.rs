use super::{check_input, BlockError, ConvBlock, ConvConfig, EmaBlock, ParamInit, Result};
use crate::tensor::{self, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct C2fConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    /// Number of bottlenecks in the residual stage.
    pub depth: usize,
    pub shortcut: bool,
}

impl C2fConfig {
    pub fn new(in_channels: usize, out_channels: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            depth: 1,
            shortcut: true,
        }
    }

    pub fn depth(mut self, depth: usize) -> Self {
        self.depth = depth;
        self
    }

    pub fn shortcut(mut self, shortcut: bool) -> Self {
        self.shortcut = shortcut;
        self
    }

    pub fn hidden(&self) -> usize {
        self.out_channels / 2
    }

    fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels < 2 || !self.out_channels.is_multiple_of(2) {
            return Err(BlockError::Config(format!(
                "C2f needs positive input channels and an even output width, got {} -> {}",
                self.in_channels, self.out_channels
            )));
        }
        Ok(())
    }
}

/// Two 3x3 convs with an optional identity shortcut.
#[derive(Debug, Clone, PartialEq)]
pub struct Bottleneck {
    cv1: ConvBlock,
    cv2: ConvBlock,
    shortcut: bool,
}

impl Bottleneck {
    fn init(channels: usize, shortcut: bool, params: &mut ParamInit) -> Self {
        Self {
            cv1: ConvBlock::init(ConvConfig::new(channels, channels, 3, 1), params),
            cv2: ConvBlock::init(ConvConfig::new(channels, channels, 3, 1), params),
            shortcut,
        }
    }

    fn forward(&self, x: &Tensor, attention: Option<&EmaBlock>) -> Result<Tensor> {
        let mut y = self.cv2.forward(&self.cv1.forward(x)?)?;
        if let Some(ema) = attention {
            y = ema.forward(&y)?;
        }
        Ok(if self.shortcut { x.add(&y)? } else { y })
    }

    pub fn zero_weights(&mut self) {
        self.cv1.zero_weights();
        self.cv2.zero_weights();
    }
}

/// Entry 1x1 conv, split in two halves, a chain of bottlenecks on the
/// second half, concatenation of both halves with every bottleneck output,
/// exit 1x1 conv.
#[derive(Debug, Clone, PartialEq)]
pub struct C2f {
    cfg: C2fConfig,
    cv1: ConvBlock,
    bottlenecks: Vec<Bottleneck>,
    cv2: ConvBlock,
}

impl C2f {
    pub fn init(cfg: C2fConfig, seed: u64) -> Result<Self> {
        Self::init_with(cfg, &mut ParamInit::new(seed))
    }

    pub fn init_with(cfg: C2fConfig, params: &mut ParamInit) -> Result<Self> {
        cfg.validate()?;
        let hid = cfg.hidden();
        let cv1 = ConvBlock::init(ConvConfig::new(cfg.in_channels, 2 * hid, 1, 1), params);
        let bottlenecks = (0..cfg.depth)
            .map(|_| Bottleneck::init(hid, cfg.shortcut, params))
            .collect();
        let cv2 = ConvBlock::init(
            ConvConfig::new((2 + cfg.depth) * hid, cfg.out_channels, 1, 1),
            params,
        );
        Ok(Self {
            cfg,
            cv1,
            bottlenecks,
            cv2,
        })
    }

    pub fn config(&self) -> C2fConfig {
        self.cfg
    }

    pub fn bottlenecks_mut(&mut self) -> &mut [Bottleneck] {
        &mut self.bottlenecks
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.forward_inner(x, &[])
    }

    /// Output of the split/bottleneck stage before the exit conv. The first
    /// two blocks of `hidden` channels are the split halves; block `i + 2`
    /// is the output of bottleneck `i`.
    pub fn stage_outputs(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        self.stages(x, &[])
    }

    fn stages(&self, x: &Tensor, attention: &[EmaBlock]) -> Result<Vec<Tensor>> {
        check_input("C2f", self.cfg.in_channels, x.shape().c)?;
        let mut ys = tensor::split(&self.cv1.forward(x)?, 1, 2)?;
        for (i, b) in self.bottlenecks.iter().enumerate() {
            let next = b.forward(
                ys.last().expect("split yields two halves"),
                attention.get(i),
            )?;
            ys.push(next);
        }
        Ok(ys)
    }

    fn forward_inner(&self, x: &Tensor, attention: &[EmaBlock]) -> Result<Tensor> {
        let ys = self.stages(x, attention)?;
        let refs: Vec<&Tensor> = ys.iter().collect();
        self.cv2.forward(&tensor::concat(&refs, 1)?)
    }
}

/// C2f whose residual stage carries EMA attention: every bottleneck applies
/// EMA to the output of its second conv, before the shortcut add.
#[derive(Debug, Clone, PartialEq)]
pub struct C2fEma {
    inner: C2f,
    attention: Vec<EmaBlock>,
}

impl C2fEma {
    pub fn init(cfg: C2fConfig, groups: usize, seed: u64) -> Result<Self> {
        Self::init_with(cfg, groups, &mut ParamInit::new(seed))
    }

    pub fn init_with(cfg: C2fConfig, groups: usize, params: &mut ParamInit) -> Result<Self> {
        let inner = C2f::init_with(cfg, params)?;
        let attention = (0..cfg.depth)
            .map(|_| EmaBlock::init(cfg.hidden(), groups, params))
            .collect::<Result<_>>()?;
        Ok(Self { inner, attention })
    }

    pub fn from_parts(inner: C2f, attention: Vec<EmaBlock>) -> Result<Self> {
        let hid = inner.cfg.hidden();
        if attention.len() != inner.cfg.depth || attention.iter().any(|e| e.channels() != hid) {
            return Err(BlockError::Config(format!(
                "C2f-EMA needs {} attention blocks of width {hid}",
                inner.cfg.depth
            )));
        }
        Ok(Self { inner, attention })
    }

    pub fn into_parts(self) -> (C2f, Vec<EmaBlock>) {
        (self.inner, self.attention)
    }

    pub fn config(&self) -> C2fConfig {
        self.inner.cfg
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.inner.forward_inner(x, &self.attention)
    }
}
