use crate::{Error, Result};
use braingan_autograd::functional::{dropout, global_avg_pool, max_pool2d};
use braingan_autograd::nn::{BatchNorm2d, Bound, BnUpdate, Conv2d, Linear, ParamSet};
use braingan_autograd::Var;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    /// Stride-2 stem and three basic-block stages.
    SmallResnet,
    /// 7x7 stem, max pool and bottleneck stages of 3, 4, 6, 3 blocks.
    Resnet50Like,
}

impl FromStr for Architecture {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "small_resnet" | "small-resnet" => Ok(Architecture::SmallResnet),
            "resnet50_like" | "resnet50-like" => Ok(Architecture::Resnet50Like),
            _ => Err(Error::InvalidArgument(format!("unknown architecture preset {s:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
struct ConvBn {
    conv: Conv2d,
    bn: BatchNorm2d,
}

impl ConvBn {
    #[allow(clippy::too_many_arguments)]
    fn new<R: Rng + ?Sized>(
        p: &mut ParamSet,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        rng: &mut R,
    ) -> Self {
        ConvBn {
            conv: Conv2d::new(p, &format!("{name}.conv"), cin, cout, k, stride, false, rng),
            bn: BatchNorm2d::new(p, &format!("{name}.bn"), cout),
        }
    }

    fn forward(&self, b: &Bound, x: &Var, training: bool, updates: &mut Vec<BnUpdate>) -> Var {
        let (y, u) = self.bn.forward(b, &self.conv.forward(b, x), training);
        updates.extend(u);
        y
    }
}

/// Residual unit: `relu(body(x) + shortcut(x))`.
#[derive(Debug, Clone)]
struct Block {
    body: Vec<ConvBn>,
    shortcut: Option<ConvBn>,
}

impl Block {
    fn basic<R: Rng + ?Sized>(p: &mut ParamSet, name: &str, cin: usize, cout: usize, stride: usize, rng: &mut R) -> Self {
        Block {
            body: vec![
                ConvBn::new(p, &format!("{name}.a"), cin, cout, 3, stride, rng),
                ConvBn::new(p, &format!("{name}.b"), cout, cout, 3, 1, rng),
            ],
            shortcut: (stride != 1 || cin != cout)
                .then(|| ConvBn::new(p, &format!("{name}.proj"), cin, cout, 1, stride, rng)),
        }
    }

    fn bottleneck<R: Rng + ?Sized>(
        p: &mut ParamSet,
        name: &str,
        cin: usize,
        width: usize,
        stride: usize,
        rng: &mut R,
    ) -> Self {
        let cout = 4 * width;
        Block {
            body: vec![
                ConvBn::new(p, &format!("{name}.a"), cin, width, 1, 1, rng),
                ConvBn::new(p, &format!("{name}.b"), width, width, 3, stride, rng),
                ConvBn::new(p, &format!("{name}.c"), width, cout, 1, 1, rng),
            ],
            shortcut: (stride != 1 || cin != cout)
                .then(|| ConvBn::new(p, &format!("{name}.proj"), cin, cout, 1, stride, rng)),
        }
    }

    fn forward(&self, b: &Bound, x: &Var, training: bool, updates: &mut Vec<BnUpdate>) -> Var {
        let mut h = x.clone();
        let last = self.body.len() - 1;
        for (i, layer) in self.body.iter().enumerate() {
            h = layer.forward(b, &h, training, updates);
            if i < last {
                h = h.relu();
            }
        }
        let skip = match &self.shortcut {
            Some(s) => s.forward(b, x, training, updates),
            None => x.clone(),
        };
        h.add(&skip).relu()
    }
}

/// Residual network ending in dropout and a 2-way linear head. Logit
/// index follows [`crate::dataset::Label::class_index`].
#[derive(Debug, Clone)]
pub struct Classifier {
    pub architecture: Architecture,
    pub params: ParamSet,
    stem: ConvBn,
    stem_pool: bool,
    blocks: Vec<Block>,
    head: Linear,
    dropout_rate: f64,
}

impl Classifier {
    /// `width` is the stem channel count (8 for the small preset, 64 for
    /// the full bottleneck layout).
    pub fn new<R: Rng + ?Sized>(arch: Architecture, width: usize, dropout_rate: f64, rng: &mut R) -> Result<Self> {
        if width == 0 || !(0.0..1.0).contains(&dropout_rate) {
            return Err(Error::InvalidArgument("width must be positive and dropout in [0, 1)".into()));
        }
        let mut p = ParamSet::new();
        let (stem, stem_pool, blocks, features) = match arch {
            Architecture::SmallResnet => {
                let stem = ConvBn::new(&mut p, "stem", 1, width, 3, 2, rng);
                let mut blocks = Vec::new();
                let mut cin = width;
                for (i, mult) in [1, 2, 4].into_iter().enumerate() {
                    let cout = width * mult;
                    let stride = if i == 0 { 1 } else { 2 };
                    blocks.push(Block::basic(&mut p, &format!("stage{i}"), cin, cout, stride, rng));
                    cin = cout;
                }
                (stem, false, blocks, cin)
            }
            Architecture::Resnet50Like => {
                let stem = ConvBn::new(&mut p, "stem", 1, width, 7, 2, rng);
                let mut blocks = Vec::new();
                let mut cin = width;
                for (i, (n, mult)) in [(3, 1), (4, 2), (6, 4), (3, 8)].into_iter().enumerate() {
                    for j in 0..n {
                        let stride = if i > 0 && j == 0 { 2 } else { 1 };
                        let name = format!("stage{i}.{j}");
                        blocks.push(Block::bottleneck(&mut p, &name, cin, width * mult, stride, rng));
                        cin = 4 * width * mult;
                    }
                }
                (stem, true, blocks, cin)
            }
        };
        let head = Linear::new(&mut p, "head", features, 2, rng);
        Ok(Classifier {
            architecture: arch,
            params: p,
            stem,
            stem_pool,
            blocks,
            head,
            dropout_rate,
        })
    }

    /// Logits `[N, 2]` for inputs `[N, 1, H, W]`. Dropout and batch
    /// statistics apply only when `train_rng` is given.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        b: &Bound,
        x: &Var,
        train_rng: Option<&mut R>,
    ) -> (Var, Vec<BnUpdate>) {
        let training = train_rng.is_some();
        let mut updates = Vec::new();
        let mut h = self.stem.forward(b, x, training, &mut updates).relu();
        if self.stem_pool {
            h = max_pool2d(&h, 3, 2, 1);
        }
        for block in &self.blocks {
            h = block.forward(b, &h, training, &mut updates);
        }
        let mut h = global_avg_pool(&h);
        if let Some(rng) = train_rng {
            h = dropout(&h, self.dropout_rate, rng);
        }
        (self.head.forward(b, &h), updates)
    }
}
