use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::params::{ConvRef, DenseRef, ParamSet};
use super::{images_to_tensor, Model};
use crate::error::{shape_err, Error, Result};
use crate::image::Image;
use crate::nn::{Graph, NodeId};
use crate::NUM_CLASSES;

/// Feature widths of the three conv/pool stages.
const WIDTHS: [usize; 3] = [8, 16, 32];
const INFER_CHUNK: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Backbone {
    SmallCnn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierConfig {
    pub backbone: Backbone,
    pub head_hidden: usize,
    pub head_dropout: f64,
    pub num_classes: usize,
    /// Square input side; must be a positive multiple of 8.
    pub input_size: usize,
    /// Channels the backbone expects; grayscale input is replicated to match.
    pub in_channels: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            backbone: Backbone::SmallCnn,
            head_hidden: 4096,
            head_dropout: 0.5,
            num_classes: NUM_CLASSES,
            input_size: 64,
            in_channels: 1,
        }
    }
}

impl ClassifierConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.num_classes != NUM_CLASSES {
            v.push(format!(
                "classifier.num_classes must be {NUM_CLASSES}, got {}",
                self.num_classes
            ));
        }
        if !(0.0..1.0).contains(&self.head_dropout) {
            v.push(format!(
                "classifier.head_dropout must lie in [0, 1), got {}",
                self.head_dropout
            ));
        }
        if self.head_hidden == 0 {
            v.push("classifier.head_hidden must be positive".into());
        }
        if self.input_size == 0 || !self.input_size.is_multiple_of(8) {
            v.push(format!(
                "classifier.input_size must be a positive multiple of 8, got {}",
                self.input_size
            ));
        }
        if self.in_channels == 0 {
            v.push("classifier.in_channels must be positive".into());
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        match self.violations() {
            v if v.is_empty() => Ok(()),
            v => Err(Error::Config(v.join("; "))),
        }
    }

    fn flat_features(&self) -> usize {
        let side = self.input_size / 8;
        WIDTHS[2] * side * side
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Dropout active, masks drawn from the given seed.
    Train {
        seed: u64,
    },
    Eval,
}

/// Three conv/relu/maxpool stages followed by a dense head.
#[derive(Debug, Clone)]
pub struct Classifier {
    config: ClassifierConfig,
    seed: u64,
    params: ParamSet,
    convs: [ConvRef; 3],
    hidden: DenseRef,
    output: DenseRef,
}

impl Model for Classifier {
    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }
}

pub fn build_classifier(config: &ClassifierConfig, seed: u64) -> Result<Classifier> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ParamSet::new();
    let mut cin = config.in_channels;
    let convs = WIDTHS.map(|w| {
        let idx = p.len() / 2;
        let r = p.conv(&format!("features.{idx}"), cin, w, 3, 1.0, &mut rng);
        cin = w;
        r
    });
    let hidden = p.dense(
        "head.hidden",
        config.flat_features(),
        config.head_hidden,
        1.0,
        &mut rng,
    );
    let output = p.dense(
        "head.output",
        config.head_hidden,
        config.num_classes,
        1.0,
        &mut rng,
    );
    Ok(Classifier {
        config: config.clone(),
        seed,
        params: p,
        convs,
        hidden,
        output,
    })
}

impl Classifier {
    pub fn config(&self) -> &ClassifierConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Records the forward pass for an `[n, 1, s, s]` input and returns the
    /// `[n, 6]` logits node.
    pub fn forward_graph(
        &self,
        g: &mut Graph,
        p: &[NodeId],
        x: NodeId,
        mode: Mode,
    ) -> Result<NodeId> {
        let (n, c, h, w) = g.value(x).dims4()?;
        let s = self.config.input_size;
        if c != 1 || h != s || w != s {
            return shape_err(format!(
                "classifier expects [n, 1, {s}, {s}] input, got [{n}, {c}, {h}, {w}]"
            ));
        }
        let mut x = x;
        if self.config.in_channels > 1 {
            x = g.repeat_channels(x, self.config.in_channels)?;
        }
        for r in self.convs {
            x = g.conv2d(x, p[r.weight], Some(p[r.bias]))?;
            x = g.relu(x);
            x = g.max_pool2(x)?;
        }
        let x = g.reshape(x, &[n, self.config.flat_features()])?;
        let x = g.linear(x, p[self.hidden.weight], Some(p[self.hidden.bias]))?;
        let mut x = g.relu(x);
        if let Mode::Train { seed } = mode {
            if self.config.head_dropout > 0.0 {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                x = g.dropout(x, self.config.head_dropout as f32, &mut rng)?;
            }
        }
        g.linear(x, p[self.output.weight], Some(p[self.output.bias]))
    }
}

/// One logit vector per image.
pub fn classifier_forward(
    model: &Classifier,
    batch: &[Image],
    mode: Mode,
) -> Result<Vec<[f64; NUM_CLASSES]>> {
    let mut out = Vec::with_capacity(batch.len());
    for (k, chunk) in batch.chunks(INFER_CHUNK).enumerate() {
        let mut g = Graph::new();
        let p = model.params.bind(&mut g, false);
        let x = g.leaf(images_to_tensor(chunk)?, false);
        let mode = match mode {
            Mode::Train { seed } => Mode::Train {
                seed: seed.wrapping_add(k as u64),
            },
            Mode::Eval => Mode::Eval,
        };
        let y = model.forward_graph(&mut g, &p, x, mode)?;
        let logits = g.value(y);
        if !logits.is_finite() {
            return Err(Error::Numeric("non-finite classifier logits".into()));
        }
        for row in logits.data().chunks(NUM_CLASSES) {
            let mut v = [0.0; NUM_CLASSES];
            v.iter_mut().zip(row).for_each(|(d, s)| *d = f64::from(*s));
            out.push(v);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{load_parameters, parameters};
    use crate::nn::Tensor;

    fn tiny() -> ClassifierConfig {
        ClassifierConfig {
            head_hidden: 16,
            input_size: 8,
            ..Default::default()
        }
    }

    fn probe(n: usize, size: usize) -> Vec<Image> {
        (0..n)
            .map(|k| {
                Image::from_fn(size, size, 1.0, |r, c| {
                    ((r * 3 + c * 7 + k) % 10) as f64 / 10.0
                })
                .unwrap()
            })
            .collect()
    }

    #[test]
    fn shapes_and_determinism() {
        let cfg = ClassifierConfig::default();
        let a = build_classifier(&cfg, 3).unwrap();
        let b = build_classifier(&cfg, 3).unwrap();
        assert_eq!(parameters(&a), parameters(&b));
        let x = probe(1, 64);
        let l1 = classifier_forward(&a, &x, Mode::Eval).unwrap();
        let l2 = classifier_forward(&a, &x, Mode::Eval).unwrap();
        assert_eq!(l1.len(), 1);
        assert!(l1[0].iter().all(|v| v.is_finite()));
        assert_eq!(l1, l2);
        let t = classifier_forward(&a, &x, Mode::Train { seed: 1 }).unwrap();
        assert_ne!(t, l1);
    }

    #[test]
    fn k_images_k_vectors_and_resolution_check() {
        let m = build_classifier(&tiny(), 0).unwrap();
        assert_eq!(
            classifier_forward(&m, &probe(5, 8), Mode::Eval)
                .unwrap()
                .len(),
            5
        );
        assert!(matches!(
            classifier_forward(&m, &probe(1, 16), Mode::Eval),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn head_structure_and_config_validation() {
        let m = build_classifier(&ClassifierConfig::default(), 0).unwrap();
        assert_eq!(m.params.get(m.hidden.weight).shape(), &[4096, 32 * 8 * 8]);
        assert_eq!(m.params.get(m.output.weight).shape(), &[6, 4096]);
        let bad = ClassifierConfig {
            num_classes: 5,
            head_dropout: 1.0,
            ..Default::default()
        };
        assert!(matches!(build_classifier(&bad, 0), Err(Error::Config(_))));
    }

    #[test]
    fn replicated_channels_match_summed_first_layer() {
        let one = build_classifier(&tiny(), 4).unwrap();
        let mut three = build_classifier(
            &ClassifierConfig {
                in_channels: 3,
                ..tiny()
            },
            4,
        )
        .unwrap();
        // split each single-channel kernel evenly across three replicated inputs
        let mut snap = parameters(&one);
        let w = snap.0.get_mut("features.0.weight").unwrap();
        let data: Vec<f32> = w
            .data()
            .chunks(9)
            .flat_map(|k| {
                let third: Vec<f32> = k.iter().map(|v| v / 3.0).collect();
                [third.clone(), third.clone(), third].concat()
            })
            .collect();
        *w = Tensor::new(vec![8, 3, 3, 3], data).unwrap();
        load_parameters(&mut three, &snap).unwrap();
        let x = probe(2, 8);
        let a = classifier_forward(&one, &x, Mode::Eval).unwrap();
        let b = classifier_forward(&three, &x, Mode::Eval).unwrap();
        for (ra, rb) in a.iter().zip(&b) {
            for (u, v) in ra.iter().zip(rb) {
                assert!((u - v).abs() < 1e-5);
            }
        }
    }

    /// Direct-loop f64 forward of the same network, used as the
    /// finite-difference oracle.
    fn oracle_mean_logit(m: &Classifier, x: &[f64], side: usize) -> f64 {
        let t = |i: usize| -> Vec<f64> {
            m.params
                .get(i)
                .data()
                .iter()
                .map(|&v| f64::from(v))
                .collect()
        };
        let (mut act, mut cin, mut s) = (x.to_vec(), 1usize, side);
        for r in m.convs {
            let (w, b) = (t(r.weight), t(r.bias));
            let cout = b.len();
            let mut out = vec![0.0; cout * s * s];
            for o in 0..cout {
                for y in 0..s {
                    for xx in 0..s {
                        let mut acc = b[o];
                        for i in 0..cin {
                            for ky in 0..3 {
                                for kx in 0..3 {
                                    let (sy, sx) = (
                                        y as isize + ky as isize - 1,
                                        xx as isize + kx as isize - 1,
                                    );
                                    if sy < 0 || sx < 0 || sy >= s as isize || sx >= s as isize {
                                        continue;
                                    }
                                    acc += w[((o * cin + i) * 3 + ky) * 3 + kx]
                                        * act[(i * s + sy as usize) * s + sx as usize];
                                }
                            }
                        }
                        out[(o * s + y) * s + xx] = acc.max(0.0);
                    }
                }
            }
            let half = s / 2;
            act = (0..cout * half * half)
                .map(|k| {
                    let (o, y, xx) = (k / (half * half), (k / half) % half, k % half);
                    let at = |dy: usize, dx: usize| out[(o * s + 2 * y + dy) * s + 2 * xx + dx];
                    at(0, 0).max(at(0, 1)).max(at(1, 0)).max(at(1, 1))
                })
                .collect();
            cin = cout;
            s = half;
        }
        let dense = |input: &[f64], r: DenseRef| -> Vec<f64> {
            let (w, b) = (t(r.weight), t(r.bias));
            b.iter()
                .enumerate()
                .map(|(o, bo)| {
                    bo + input
                        .iter()
                        .enumerate()
                        .map(|(i, v)| w[o * input.len() + i] * v)
                        .sum::<f64>()
                })
                .collect()
        };
        let hidden: Vec<f64> = dense(&act, m.hidden)
            .into_iter()
            .map(|v| v.max(0.0))
            .collect();
        dense(&hidden, m.output).iter().sum::<f64>() / NUM_CLASSES as f64
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let m = build_classifier(&tiny(), 7).unwrap();
        // distinct pixel values keep max-pool selections away from ties
        let img = Image::from_fn(8, 8, 1.0, |r, c| {
            ((r * 8 + c) * 37 % 64) as f64 / 64.0 + 0.005
        })
        .unwrap();
        let x = images_to_tensor(std::slice::from_ref(&img)).unwrap();
        let mut g = Graph::new();
        let p = m.params.bind(&mut g, false);
        let xn = g.leaf(x.clone(), true);
        let y = m.forward_graph(&mut g, &p, xn, Mode::Eval).unwrap();
        let seed = Tensor::full(&[1, NUM_CLASSES], 1.0 / NUM_CLASSES as f32);
        let grads = g.backward(vec![(y, seed)]).unwrap();
        let analytic = grads.get(xn).unwrap();

        let base: Vec<f64> = x.data().iter().map(|&v| f64::from(v)).collect();
        let forward = classifier_forward(&m, std::slice::from_ref(&img), Mode::Eval).unwrap();
        let graph_mean = forward[0].iter().sum::<f64>() / NUM_CLASSES as f64;
        assert!((oracle_mean_logit(&m, &base, 8) - graph_mean).abs() < 1e-4);

        let h = 1e-6;
        let mut checked = 0;
        for i in 0..base.len() {
            let (mut plus, mut minus) = (base.clone(), base.clone());
            plus[i] += h;
            minus[i] -= h;
            let fd =
                (oracle_mean_logit(&m, &plus, 8) - oracle_mean_logit(&m, &minus, 8)) / (2.0 * h);
            let an = f64::from(analytic.data()[i]);
            if an.abs().max(fd.abs()) < 1e-6 {
                continue;
            }
            checked += 1;
            let rel = (fd - an).abs() / an.abs().max(fd.abs());
            assert!(rel < 1e-3, "pixel {i}: fd {fd} vs analytic {an}");
        }
        assert!(checked > 32, "only {checked} pixels carry gradient");
    }
}
