use super::{LevelSpec, NeckError, Result};
use crate::blocks::{C2f, C2fConfig, ConvBlock, ConvConfig, ParamInit, Sppf};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
struct Stage {
    /// One stride-2 conv per halving between the previous level and this one.
    down: Vec<ConvBlock>,
    c2f: C2f,
}

/// Stand-in feature extractor: a stride-2 stem, then per level the strided
/// convs needed to reach its stride followed by a C2f block. The coarsest
/// level ends in SPPF.
#[derive(Debug, Clone, PartialEq)]
pub struct BackboneStub {
    stem: ConvBlock,
    stages: Vec<Stage>,
    sppf: Sppf,
}

pub const IMAGE_CHANNELS: usize = 3;

impl BackboneStub {
    pub fn init(levels: &[LevelSpec], params: &mut ParamInit) -> Result<Self> {
        let first = levels
            .first()
            .ok_or_else(|| NeckError::Spec("backbone needs at least one level".into()))?;
        if first.stride < 2 || !first.stride.is_power_of_two() {
            return Err(NeckError::Spec(format!(
                "finest level stride must be a power of two >= 2, got {}",
                first.stride
            )));
        }
        if let Some(w) = levels.windows(2).find(|w| w[1].stride != 2 * w[0].stride) {
            return Err(NeckError::Spec(format!(
                "backbone stride must double per stage: {} ({}) -> {} ({})",
                w[0].name, w[0].stride, w[1].name, w[1].stride
            )));
        }
        let stem_width = (first.channels / 2).max(8);
        let stem = ConvBlock::init(ConvConfig::new(IMAGE_CHANNELS, stem_width, 3, 2), params);
        let (mut stride, mut width) = (2, stem_width);
        let mut stages = Vec::with_capacity(levels.len());
        for lv in levels {
            let mut down = Vec::new();
            while stride < lv.stride {
                down.push(ConvBlock::init(
                    ConvConfig::new(width, lv.channels, 3, 2),
                    params,
                ));
                width = lv.channels;
                stride *= 2;
            }
            let c2f = C2f::init_with(C2fConfig::new(width, lv.channels), params)?;
            width = lv.channels;
            stages.push(Stage { down, c2f });
        }
        let sppf = Sppf::init(width, width, params);
        Ok(Self { stem, stages, sppf })
    }

    /// Features for every level, fine to coarse.
    pub fn forward(&self, image: &Tensor) -> Result<Vec<Tensor>> {
        let mut x = self.stem.forward(image)?;
        let mut feats = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            for d in &stage.down {
                x = d.forward(&x)?;
            }
            x = stage.c2f.forward(&x)?;
            feats.push(x.clone());
        }
        let last = feats.last_mut().expect("at least one stage");
        *last = self.sppf.forward(last)?;
        Ok(feats)
    }
}
