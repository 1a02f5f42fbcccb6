use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ModelConfig;
use crate::autograd::{Real, Tape, Tensor, Var};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParamGroup {
    Highway,
    Encoder,
    FactorizationMachine,
    Attention,
    Classifier,
    OverallRating,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParamKind {
    Weight,
    Bias,
    Table,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Init {
    Glorot,
    Zeros,
    Uniform(f64),
    /// Zeros except ones on the forget-gate block of `4 * hidden` columns.
    LstmBias(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub group: ParamGroup,
    pub kind: ParamKind,
    init: Init,
}

impl ParamSpec {
    /// Weight matrices of the encoder and classifiers: the edges pruned by
    /// dropout-prune audiences.
    pub fn maskable(&self) -> bool {
        self.kind == ParamKind::Weight && matches!(self.group, ParamGroup::Encoder | ParamGroup::Classifier)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HighwayIds {
    pub w_f: ParamId,
    pub b_f: ParamId,
    pub w_g: ParamId,
    pub b_g: ParamId,
}

/// Recurrent cell weights. Gate blocks are ordered input, forget, cell,
/// output.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LstmIds {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub bias: ParamId,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FmIds {
    pub w0: ParamId,
    pub w: ParamId,
    pub v: ParamId,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AspectIds {
    pub w_g: ParamId,
    pub b_g: ParamId,
    pub v_g: ParamId,
    /// `(W_D, b_D)` when deliberation is enabled.
    pub deliberate: Option<(ParamId, ParamId)>,
    pub w_out: ParamId,
    pub b_out: ParamId,
    pub w_pred: ParamId,
    pub b_pred: ParamId,
}

/// Names, shapes and roles of every trainable tensor for one config.
#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    pub config: ModelConfig,
    pub specs: Vec<ParamSpec>,
    pub highway: HighwayIds,
    /// Per layer, `[forward, backward]`.
    pub encoder: Vec<[LstmIds; 2]>,
    pub fm: Option<[FmIds; 2]>,
    pub aspects: Vec<AspectIds>,
    pub overall: Option<ParamId>,
}

struct Builder {
    specs: Vec<ParamSpec>,
}

impl Builder {
    fn add(&mut self, name: String, rows: usize, cols: usize, group: ParamGroup, kind: ParamKind, init: Init) -> ParamId {
        self.specs.push(ParamSpec { name, rows, cols, group, kind, init });
        ParamId(self.specs.len() - 1)
    }

    fn weight(&mut self, name: String, rows: usize, cols: usize, group: ParamGroup) -> ParamId {
        self.add(name, rows, cols, group, ParamKind::Weight, Init::Glorot)
    }

    fn bias(&mut self, name: String, cols: usize, group: ParamGroup) -> ParamId {
        self.add(name, 1, cols, group, ParamKind::Bias, Init::Zeros)
    }
}

const DIRS: [&str; 2] = ["fwd", "bwd"];

impl Layout {
    pub fn new(c: &ModelConfig) -> Self {
        use ParamGroup::*;
        let mut b = Builder { specs: Vec::new() };
        let d = c.d_emb;
        let highway = HighwayIds {
            w_f: b.weight("highway.w_f".into(), d, d, Highway),
            b_f: b.bias("highway.b_f".into(), d, Highway),
            w_g: b.weight("highway.w_g".into(), d, d, Highway),
            b_g: b.bias("highway.b_g".into(), d, Highway),
        };
        let h = c.d_hidden;
        let encoder = (0..c.encoder_layers)
            .map(|l| {
                let input = if l == 0 { d } else { 2 * h };
                DIRS.map(|dir| LstmIds {
                    w_ih: b.weight(format!("encoder.l{l}.{dir}.w_ih"), input, 4 * h, Encoder),
                    w_hh: b.weight(format!("encoder.l{l}.{dir}.w_hh"), h, 4 * h, Encoder),
                    bias: b.add(format!("encoder.l{l}.{dir}.bias"), 1, 4 * h, Encoder, ParamKind::Bias, Init::LstmBias(h)),
                })
            })
            .collect();
        let fm = c.use_feature_enrichment.then(|| {
            DIRS.map(|dir| FmIds {
                w0: b.bias(format!("fm.{dir}.w0"), 1, FactorizationMachine),
                w: b.weight(format!("fm.{dir}.w"), h, 1, FactorizationMachine),
                v: b.weight(format!("fm.{dir}.v"), h, c.fm_factors, FactorizationMachine),
            })
        });
        let hw = c.hidden_width();
        let (da, dc, n) = (c.attn_width(), c.classifier_width(), c.num_classes);
        let aspects = (0..c.num_aspects)
            .map(|k| AspectIds {
                w_g: b.weight(format!("aspect{k}.global.w"), hw, da, Attention),
                b_g: b.bias(format!("aspect{k}.global.b"), da, Attention),
                v_g: b.add(format!("aspect{k}.global.v"), 1, da, Attention, ParamKind::Weight, Init::Uniform(0.1)),
                deliberate: c.use_deliberation.then(|| {
                    (
                        b.weight(format!("aspect{k}.deliberate.w"), hw, hw, Attention),
                        b.bias(format!("aspect{k}.deliberate.b"), hw, Attention),
                    )
                }),
                w_out: b.weight(format!("aspect{k}.out.w"), c.classifier_input(), dc, Classifier),
                b_out: b.bias(format!("aspect{k}.out.b"), dc, Classifier),
                w_pred: b.weight(format!("aspect{k}.pred.w"), dc, n, Classifier),
                b_pred: b.bias(format!("aspect{k}.pred.b"), n, Classifier),
            })
            .collect();
        let overall = c.use_overall_rating.then(|| {
            b.add("overall.table".into(), n + 1, c.d_or, OverallRating, ParamKind::Table, Init::Uniform(0.1))
        });
        Layout { config: c.clone(), specs: b.specs, highway, encoder, fm, aspects, overall }
    }
}

/// All trainable tensors of the network, in [`Layout`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct FedarParams<T> {
    layout: Layout,
    tensors: Vec<Tensor<T>>,
}

/// Tape leaves for every parameter of one [`FedarParams`].
pub struct Bound(Vec<Var>);

impl Bound {
    /// Wraps leaves created in layout order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Bound(vars)
    }

    pub fn get(&self, id: ParamId) -> Var {
        self.0[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.0
    }
}

impl<T: Real> FedarParams<T> {
    /// Seeded initialization: Glorot-uniform weights, zero biases, forget
    /// gate bias one, `±0.1` uniform for the attention base vectors and the
    /// overall-rating table.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = layout
            .specs
            .iter()
            .map(|s| {
                let data: Vec<f64> = match s.init {
                    Init::Glorot => {
                        let limit = (6.0 / (s.rows + s.cols) as f64).sqrt();
                        (0..s.rows * s.cols).map(|_| rng.gen_range(-limit..=limit)).collect()
                    }
                    Init::Uniform(a) => (0..s.rows * s.cols).map(|_| rng.gen_range(-a..=a)).collect(),
                    Init::Zeros => vec![0.0; s.rows * s.cols],
                    Init::LstmBias(h) => (0..s.cols).map(|j| if (h..2 * h).contains(&j) { 1.0 } else { 0.0 }).collect(),
                };
                Tensor::from_f64(s.rows, s.cols, &data)
            })
            .collect();
        Ok(Self { layout, tensors })
    }

    /// Wraps tensors given in layout order, checking count and shapes.
    pub fn from_tensors(config: &ModelConfig, tensors: Vec<Tensor<T>>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(config);
        if tensors.len() != layout.specs.len() {
            return Err(Error::Checkpoint(format!(
                "{} tensors for a layout of {}",
                tensors.len(),
                layout.specs.len()
            )));
        }
        for (s, t) in layout.specs.iter().zip(&tensors) {
            if t.shape() != [s.rows, s.cols] {
                return Err(Error::Checkpoint(format!(
                    "{} has shape {:?}, expected {:?}",
                    s.name,
                    t.shape(),
                    [s.rows, s.cols]
                )));
            }
        }
        Ok(Self { layout, tensors })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.layout.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn into_tensors(self) -> Vec<Tensor<T>> {
        self.tensors
    }

    pub fn name(&self, index: usize) -> &str {
        &self.layout.specs[index].name
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.layout.specs
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn cast<U: Real>(&self) -> FedarParams<U> {
        FedarParams {
            layout: self.layout.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }

    pub fn bind<'p>(&'p self, tape: &mut Tape<'p, T>, requires_grad: bool) -> Result<Bound> {
        let vars = self
            .tensors
            .iter()
            .map(|t| tape.param(t, requires_grad))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Bound(vars))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> ModelConfig {
        ModelConfig {
            d_emb: 8,
            d_hidden: 8,
            encoder_layers: 2,
            fm_factors: 2,
            num_aspects: 2,
            num_classes: 3,
            d_or: 4,
            ..Default::default()
        }
    }

    #[test]
    fn shapes_follow_config() {
        let p = FedarParams::<f64>::init(&toy(), 0).unwrap();
        let l = p.layout();
        assert_eq!(p.get(l.encoder[1][0].w_ih).shape(), [16, 32]);
        assert_eq!(p.get(l.aspects[0].w_g).shape(), [22, 8]);
        assert_eq!(p.get(l.aspects[1].deliberate.unwrap().0).shape(), [22, 22]);
        assert_eq!(p.get(l.aspects[0].w_out).shape(), [26, 8]);
        assert_eq!(p.get(l.overall.unwrap()).shape(), [4, 4]);
        let bias = p.get(l.encoder[0][1].bias).data();
        assert!(bias[8..16].iter().all(|&b| b == 1.0));
        assert!(bias[..8].iter().chain(&bias[16..]).all(|&b| b == 0.0));
    }

    #[test]
    fn ablations_drop_their_tensors() {
        let c = ModelConfig { use_deliberation: false, use_feature_enrichment: false, use_overall_rating: false, ..toy() };
        let l = Layout::new(&c);
        assert!(l.fm.is_none() && l.overall.is_none());
        assert!(l.aspects.iter().all(|a| a.deliberate.is_none()));
        assert!(l.specs.iter().all(|s| !s.name.starts_with("fm.")));
    }

    #[test]
    fn init_is_seeded() {
        let a = FedarParams::<f32>::init(&toy(), 3).unwrap();
        assert_eq!(a, FedarParams::init(&toy(), 3).unwrap());
        assert_ne!(a, FedarParams::init(&toy(), 4).unwrap());
    }

    #[test]
    fn from_tensors_checks_shapes() {
        let p = FedarParams::<f32>::init(&toy(), 0).unwrap();
        let mut ts = p.clone().into_tensors();
        ts[0] = Tensor::zeros(1, 1);
        assert!(FedarParams::from_tensors(&toy(), ts).is_err());
    }
}
