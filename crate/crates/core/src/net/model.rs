//! Two-branch feature interaction network at toy scale.
//!
//! Dataflow for a `1 × S × S` input:
//!
//! ```text
//! encoder    E1..E4: 3×3 stride-2 convs + ReLU        -> F1 (S/2) .. F4 (S/16)
//! squeeze    per level, 1×1 conv + ReLU per branch    -> B_i, D_i
//! decoder    h4 = conv(B4); h_i = conv(B_i + up(h_{i+1}))   (same for D)
//! heads      body/detail: 1×1 conv on h1; saliency: 3×3 conv on [hb1, hd1]
//!            then 1×1 conv; all upsampled ×2 and passed through a sigmoid
//! refinement the interaction encoder reads [hb1, hd1] of the previous pass,
//!            produces one feature per level, and per-branch 3×3 convs add
//!            them onto B_i / D_i before the decoders run again
//! ```
//!
//! The first pass runs without interaction. One interaction encoder is shared
//! by all later passes, so the parameter count does not depend on the number
//! of interactions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::net::graph::{Graph, NodeId};
use crate::net::tensor::Tensor4;
use crate::scalar::Scalar;

const LEVELS: usize = 4;

/// Initial bias of the saliency output (a foreground prior of about 0.03%).
pub const SAL_PRIOR_LOGIT: f64 = -8.0;

/// Channel widths and refinement count.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    /// Output channels of encoder stages E1..E4.
    pub encoder_widths: [usize; LEVELS],
    /// Channels of every squeezed, decoder and interaction feature.
    pub squeeze: usize,
    pub n_interactions: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder_widths: [8, 16, 32, 32],
            squeeze: 8,
            n_interactions: 1,
        }
    }
}

impl ModelConfig {
    /// Narrow variant (a few thousand parameters) for gradient checking.
    pub fn micro(n_interactions: usize) -> Self {
        Self {
            encoder_widths: [4, 4, 4, 4],
            squeeze: 4,
            n_interactions,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct ConvRef {
    weight: usize,
    bias: usize,
    stride: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct Layout {
    encoder: [ConvRef; LEVELS],
    squeeze_body: [ConvRef; LEVELS],
    squeeze_detail: [ConvRef; LEVELS],
    decoder_body: [ConvRef; LEVELS],
    decoder_detail: [ConvRef; LEVELS],
    head_body: ConvRef,
    head_detail: ConvRef,
    sal_conv: ConvRef,
    sal_head: ConvRef,
    interaction: [ConvRef; LEVELS],
    adapt_body: [ConvRef; LEVELS],
    adapt_detail: [ConvRef; LEVELS],
}

/// Parameter shapes in allocation order, plus the layout indexing them.
fn plan(config: &ModelConfig) -> (Layout, Vec<(String, [usize; 4])>) {
    let mut shapes: Vec<(String, [usize; 4])> = Vec::new();
    let mut conv = |name: String, cin: usize, cout: usize, k: usize, stride: usize| {
        shapes.push((format!("{name}.weight"), [cout, cin, k, k]));
        shapes.push((format!("{name}.bias"), [cout, 1, 1, 1]));
        ConvRef {
            weight: shapes.len() - 2,
            bias: shapes.len() - 1,
            stride,
        }
    };
    let w = config.encoder_widths;
    let sq = config.squeeze;
    let cin = [1, w[0], w[1], w[2]];
    let encoder = std::array::from_fn(|i| conv(format!("encoder.{i}"), cin[i], w[i], 3, 2));
    let squeeze_body = std::array::from_fn(|i| conv(format!("squeeze_body.{i}"), w[i], sq, 1, 1));
    let squeeze_detail = std::array::from_fn(|i| conv(format!("squeeze_detail.{i}"), w[i], sq, 1, 1));
    let decoder_body = std::array::from_fn(|i| conv(format!("decoder_body.{i}"), sq, sq, 3, 1));
    let decoder_detail = std::array::from_fn(|i| conv(format!("decoder_detail.{i}"), sq, sq, 3, 1));
    let head_body = conv("head_body".into(), sq, 1, 1, 1);
    let head_detail = conv("head_detail".into(), sq, 1, 1, 1);
    let sal_conv = conv("sal_conv".into(), 2 * sq, sq, 3, 1);
    let sal_head = conv("sal_head".into(), sq, 1, 1, 1);
    let interaction = std::array::from_fn(|i| {
        let (c, stride) = if i == 0 { (2 * sq, 1) } else { (sq, 2) };
        conv(format!("interaction.{i}"), c, sq, 3, stride)
    });
    let adapt_body = std::array::from_fn(|i| conv(format!("adapt_body.{i}"), sq, sq, 3, 1));
    let adapt_detail = std::array::from_fn(|i| conv(format!("adapt_detail.{i}"), sq, sq, 3, 1));
    (
        Layout {
            encoder,
            squeeze_body,
            squeeze_detail,
            decoder_body,
            decoder_detail,
            head_body,
            head_detail,
            sal_conv,
            sal_head,
            interaction,
            adapt_body,
            adapt_detail,
        },
        shapes,
    )
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyFinModel<T> {
    config: ModelConfig,
    layout: Layout,
    names: Vec<String>,
    params: Vec<Tensor4<T>>,
}

/// Sigmoid head outputs of one pass, each `(N, 1, S, S)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PassOutput<T> {
    pub body: Tensor4<T>,
    pub detail: Tensor4<T>,
    pub sal: Tensor4<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOutputs<T> {
    pub passes: Vec<PassOutput<T>>,
}

/// Graph nodes of the three heads of one pass.
#[derive(Clone, Copy, Debug)]
pub struct PassNodes {
    pub body: NodeId,
    pub detail: NodeId,
    pub sal: NodeId,
}

impl<T: Scalar> ToyFinModel<T> {
    /// Uniform `±sqrt(1 / fan_in)` initialization for weights and biases,
    /// except the saliency output bias, which starts at [`SAL_PRIOR_LOGIT`].
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        if config.squeeze == 0 || config.encoder_widths.contains(&0) {
            return Err(Error::Config("channel widths must be positive".into()));
        }
        let (layout, shapes) = plan(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(shapes.len());
        let mut names = Vec::with_capacity(shapes.len());
        for pair in shapes.chunks(2) {
            let [cout, cin, k, _] = pair[0].1;
            let bound = (1.0 / (cin * k * k) as f64).sqrt();
            for (name, shape) in pair {
                let n: usize = shape.iter().product();
                let data = (0..n).map(|_| T::c(rng.random_range(-bound..bound))).collect();
                params.push(Tensor4::new(*shape, data)?);
                names.push(name.clone());
            }
            debug_assert_eq!(pair[1].1, [cout, 1, 1, 1]);
        }
        params[layout.sal_head.bias].data_mut()[0] = T::c(SAL_PRIOR_LOGIT);
        Ok(Self {
            config,
            layout,
            names,
            params,
        })
    }

    /// Rebuilds a model from stored parameters, validating every shape.
    pub fn from_params(config: ModelConfig, params: Vec<Tensor4<T>>) -> Result<Self> {
        let (layout, shapes) = plan(&config);
        if shapes.len() != params.len() {
            return Err(Error::Config(format!(
                "expected {} parameter tensors, got {}",
                shapes.len(),
                params.len()
            )));
        }
        for ((name, shape), p) in shapes.iter().zip(&params) {
            if p.shape() != *shape {
                return Err(Error::Config(format!("{name}: shape {:?}, expected {shape:?}", p.shape())));
            }
        }
        Ok(Self {
            config,
            layout,
            names: shapes.into_iter().map(|(n, _)| n).collect(),
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[Tensor4<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor4<T>] {
        &mut self.params
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor4::len).sum()
    }

    pub fn pass_count(&self) -> usize {
        self.config.n_interactions + 1
    }

    pub fn set_n_interactions(&mut self, n: usize) {
        self.config.n_interactions = n;
    }

    pub fn cast<U: Scalar>(&self) -> ToyFinModel<U> {
        ToyFinModel {
            config: self.config,
            layout: self.layout.clone(),
            names: self.names.clone(),
            params: self.params.iter().map(Tensor4::cast).collect(),
        }
    }

    fn check_input(images: &Tensor4<T>) -> Result<()> {
        let [_, c, h, w] = images.shape();
        if c != 1 || h != w || h % 16 != 0 {
            return Err(Error::Shape(format!(
                "expected (N, 1, S, S) input with S divisible by 16, got {:?}",
                images.shape()
            )));
        }
        Ok(())
    }

    /// Builds the full computation graph. Returns the graph and the head
    /// nodes of every pass.
    pub fn forward_graph(&self, images: &Tensor4<T>) -> Result<(Graph<T>, Vec<PassNodes>)> {
        Self::check_input(images)?;
        let mut g = Graph::new();
        let p: Vec<NodeId> = self
            .params
            .iter()
            .enumerate()
            .map(|(i, t)| g.param(i, t.clone()))
            .collect();
        let conv = |g: &mut Graph<T>, x: NodeId, c: ConvRef| g.conv(x, p[c.weight], p[c.bias], c.stride);
        let conv_relu = |g: &mut Graph<T>, x: NodeId, c: ConvRef| -> Result<NodeId> {
            let y = conv(g, x, c)?;
            Ok(g.relu(y))
        };
        let l = &self.layout;

        let mut x = g.input(images.clone());
        let mut body_feats = Vec::with_capacity(LEVELS);
        let mut detail_feats = Vec::with_capacity(LEVELS);
        for i in 0..LEVELS {
            x = conv_relu(&mut g, x, l.encoder[i])?;
            body_feats.push(conv_relu(&mut g, x, l.squeeze_body[i])?);
            detail_feats.push(conv_relu(&mut g, x, l.squeeze_detail[i])?);
        }

        let decode = |g: &mut Graph<T>, feats: &[NodeId], convs: &[ConvRef; LEVELS]| -> Result<NodeId> {
            let mut h = conv_relu(g, feats[LEVELS - 1], convs[LEVELS - 1])?;
            for i in (0..LEVELS - 1).rev() {
                let up = g.upsample(h);
                let s = g.add(feats[i], up);
                h = conv_relu(g, s, convs[i])?;
            }
            Ok(h)
        };
        let head = |g: &mut Graph<T>, x: NodeId| -> NodeId {
            let up = g.upsample(x);
            g.sigmoid(up)
        };

        let mut passes = Vec::with_capacity(self.pass_count());
        let mut previous: Option<(NodeId, NodeId)> = None;
        for _ in 0..self.pass_count() {
            let (bf, df) = match previous {
                None => (body_feats.clone(), detail_feats.clone()),
                Some((hb, hd)) => {
                    let mut e = g.concat(hb, hd);
                    let mut bf = Vec::with_capacity(LEVELS);
                    let mut df = Vec::with_capacity(LEVELS);
                    for i in 0..LEVELS {
                        e = conv_relu(&mut g, e, l.interaction[i])?;
                        let ab = conv_relu(&mut g, e, l.adapt_body[i])?;
                        let ad = conv_relu(&mut g, e, l.adapt_detail[i])?;
                        bf.push(g.add(body_feats[i], ab));
                        df.push(g.add(detail_feats[i], ad));
                    }
                    (bf, df)
                }
            };
            let hb = decode(&mut g, &bf, &l.decoder_body)?;
            let hd = decode(&mut g, &df, &l.decoder_detail)?;

            let body_logit = conv(&mut g, hb, l.head_body)?;
            let detail_logit = conv(&mut g, hd, l.head_detail)?;
            let cat = g.concat(hb, hd);
            let s = conv_relu(&mut g, cat, l.sal_conv)?;
            let sal_logit = conv(&mut g, s, l.sal_head)?;
            passes.push(PassNodes {
                body: head(&mut g, body_logit),
                detail: head(&mut g, detail_logit),
                sal: head(&mut g, sal_logit),
            });
            previous = Some((hb, hd));
        }
        Ok((g, passes))
    }

    pub fn forward(&self, images: &Tensor4<T>) -> Result<ForwardOutputs<T>> {
        let (g, nodes) = self.forward_graph(images)?;
        Ok(ForwardOutputs {
            passes: nodes
                .iter()
                .map(|n| PassOutput {
                    body: g.value(n.body).clone(),
                    detail: g.value(n.detail).clone(),
                    sal: g.value(n.sal).clone(),
                })
                .collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_input(n: usize, side: usize, seed: u64) -> Tensor4<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n * side * side).map(|_| rng.random_range(0.0..1.0)).collect();
        Tensor4::new([n, 1, side, side], data).unwrap()
    }

    #[test]
    fn pass_count_follows_interactions() {
        for n in 0..4 {
            let m = ToyFinModel::<f64>::new(ModelConfig { n_interactions: n, ..ModelConfig::default() }, 1).unwrap();
            let out = m.forward(&random_input(2, 16, 2)).unwrap();
            assert_eq!(out.passes.len(), n + 1);
            for p in &out.passes {
                assert_eq!(p.sal.shape(), [2, 1, 16, 16]);
            }
        }
    }

    #[test]
    fn parameter_count_is_independent_of_interactions() {
        let counts: Vec<usize> = (0..3)
            .map(|n| ToyFinModel::<f32>::new(ModelConfig { n_interactions: n, ..ModelConfig::default() }, 0).unwrap().param_count())
            .collect();
        assert!(counts.windows(2).all(|w| w[0] == w[1]));
        assert!(ToyFinModel::<f64>::new(ModelConfig::micro(1), 0).unwrap().param_count() <= 10_000);
    }

    #[test]
    fn interaction_changes_second_pass() {
        let m = ToyFinModel::<f64>::new(ModelConfig::default(), 3).unwrap();
        let out = m.forward(&random_input(1, 32, 4)).unwrap();
        assert_ne!(out.passes[0].sal, out.passes[1].sal);
        assert_ne!(out.passes[0].body, out.passes[1].body);
    }

    #[test]
    fn outputs_are_open_unit_interval() {
        let m = ToyFinModel::<f64>::new(ModelConfig::default(), 5).unwrap();
        for seed in 0..100 {
            let out = m.forward(&random_input(1, 16, seed)).unwrap();
            for p in &out.passes {
                for t in [&p.body, &p.detail, &p.sal] {
                    assert!(t.data().iter().all(|&v| v.is_finite() && v > 0.0 && v < 1.0));
                }
            }
        }
    }

    #[test]
    fn branches_have_disjoint_parameters() {
        let m = ToyFinModel::<f64>::new(ModelConfig::default(), 0).unwrap();
        let l = &m.layout;
        let body: Vec<usize> = l.squeeze_body.iter().chain(&l.decoder_body).chain(&l.adapt_body).chain([&l.head_body]).flat_map(|c| [c.weight, c.bias]).collect();
        let detail: Vec<usize> = l.squeeze_detail.iter().chain(&l.decoder_detail).chain(&l.adapt_detail).chain([&l.head_detail]).flat_map(|c| [c.weight, c.bias]).collect();
        assert!(body.iter().all(|i| !detail.contains(i)));
        let names = m.param_names();
        let unique: std::collections::HashSet<_> = names.iter().collect();
        assert_eq!(unique.len(), names.len());
    }

    #[test]
    fn rejects_bad_input_shapes() {
        let m = ToyFinModel::<f64>::new(ModelConfig::default(), 0).unwrap();
        assert!(m.forward(&Tensor4::zeros([1, 1, 24, 24])).is_err());
        assert!(m.forward(&Tensor4::zeros([1, 2, 16, 16])).is_err());
        assert!(m.forward(&Tensor4::zeros([1, 1, 16, 32])).is_err());
    }

    #[test]
    fn from_params_validates_shapes() {
        let m = ToyFinModel::<f64>::new(ModelConfig::micro(1), 0).unwrap();
        let rebuilt = ToyFinModel::from_params(*m.config(), m.params().to_vec()).unwrap();
        assert_eq!(rebuilt, m);
        assert!(ToyFinModel::from_params(ModelConfig::default(), m.params().to_vec()).is_err());
    }
}
