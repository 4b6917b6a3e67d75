//! Backprop vs. central finite differences for every layer and every loss.

use drssl_core::losses::{LossObjective, Terms};
use drssl_core::model::{init_params, ModelConfig, Part};
use drssl_core::nn::{
    self, grad_check, Differentiable, GradCheckOptions, Mode, Param, RunningStats,
};
use drssl_core::{Result, Rng, Tensor};

const TOL: f64 = 1e-4;

fn random(shape: &[usize], rng: &mut Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.normal()).collect()).unwrap()
}

type Forward = Box<dyn Fn(&[Param]) -> Tensor>;
type Backward = Box<dyn Fn(&[Param], &Tensor) -> Vec<Tensor>>;

/// `loss = <probe, layer(params)>` with the layer's own backward pass.
struct LayerProbe {
    params: Vec<Param>,
    probe: Tensor,
    forward: Forward,
    backward: Backward,
}

impl Differentiable for LayerProbe {
    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.params.iter_mut().collect()
    }

    fn loss(&mut self, backprop: bool) -> Result<f64> {
        let out = (self.forward)(&self.params);
        if backprop {
            let grads = (self.backward)(&self.params, &self.probe);
            for (p, g) in self.params.iter_mut().zip(grads) {
                p.grad = g;
            }
        }
        out.dot(&self.probe)
    }
}

fn check_layer(name: &str, mut make: impl FnMut(&mut Rng) -> LayerProbe) {
    for seed in 0..20 {
        let mut rng = Rng::new(1000 + seed);
        let mut probe = make(&mut rng);
        let r = grad_check(&mut probe, GradCheckOptions::default()).unwrap();
        assert!(r.max_rel_error < TOL, "{name} seed {seed}: {r:?}");
    }
}

pub fn conv1d_gradients() {
    check_layer("conv1d", |rng| {
        let (c, f, k) = (1 + rng.below(3), 1 + rng.below(3), 1 + rng.below(4));
        let t = k + rng.below(6);
        let params = vec![
            Param::new("x", random(&[c, t], rng)),
            Param::new("k", random(&[f, c, k], rng)),
            Param::new("b", random(&[f], rng)),
        ];
        LayerProbe {
            probe: random(&[f, t - k + 1], rng),
            params,
            forward: Box::new(|p| nn::conv1d(&p[0].value, &p[1].value, &p[2].value).unwrap()),
            backward: Box::new(|p, d| {
                let g = nn::conv1d_backward(&p[0].value, &p[1].value, d).unwrap();
                vec![g.input, g.kernels, g.bias]
            }),
        }
    });
}

pub fn deconv1d_gradients() {
    check_layer("deconv1d", |rng| {
        let (c, f, k, t) = (
            1 + rng.below(3),
            1 + rng.below(3),
            1 + rng.below(4),
            1 + rng.below(6),
        );
        let params = vec![
            Param::new("x", random(&[f, t], rng)),
            Param::new("k", random(&[f, c, k], rng)),
            Param::new("b", random(&[c], rng)),
        ];
        LayerProbe {
            probe: random(&[c, t + k - 1], rng),
            params,
            forward: Box::new(|p| nn::deconv1d(&p[0].value, &p[1].value, &p[2].value).unwrap()),
            backward: Box::new(|p, d| {
                let g = nn::deconv1d_backward(&p[0].value, &p[1].value, d).unwrap();
                vec![g.input, g.kernels, g.bias]
            }),
        }
    });
}

pub fn maxpool_and_upsample_gradients() {
    check_layer("maxpool1d", |rng| {
        let (f, w) = (1 + rng.below(3), 1 + rng.below(4));
        let t = w * (1 + rng.below(4)) + rng.below(w);
        LayerProbe {
            probe: random(&[f, t / w], rng),
            params: vec![Param::new("x", random(&[f, t], rng))],
            forward: Box::new(move |p| nn::maxpool1d(&p[0].value, w).unwrap().output),
            backward: Box::new(move |p, d| {
                let idx = nn::maxpool1d(&p[0].value, w).unwrap().indices;
                vec![nn::maxpool1d_backward(d, &idx, p[0].value.dim(1)).unwrap()]
            }),
        }
    });
    check_layer("upsample1d", |rng| {
        let (f, w, t) = (1 + rng.below(3), 1 + rng.below(4), 1 + rng.below(5));
        LayerProbe {
            probe: random(&[f, t * w], rng),
            params: vec![Param::new("x", random(&[f, t], rng))],
            forward: Box::new(move |p| nn::upsample1d(&p[0].value, w).unwrap()),
            backward: Box::new(move |_, d| vec![nn::upsample1d_backward(d, w).unwrap()]),
        }
    });
}

pub fn dense_gradients() {
    check_layer("dense", |rng| {
        let (b, n, m) = (1 + rng.below(4), 1 + rng.below(5), 1 + rng.below(5));
        let params = vec![
            Param::new("x", random(&[b, n], rng)),
            Param::new("w", random(&[m, n], rng)),
            Param::new("b", random(&[m], rng)),
        ];
        LayerProbe {
            probe: random(&[b, m], rng),
            params,
            forward: Box::new(|p| nn::dense_batch(&p[0].value, &p[1].value, &p[2].value).unwrap()),
            backward: Box::new(|p, d| {
                let g = nn::dense_batch_backward(&p[0].value, &p[1].value, d).unwrap();
                vec![g.input, g.weight, g.bias]
            }),
        }
    });
}

pub fn activation_gradients() {
    check_layer("relu", |rng| {
        let n = 1 + rng.below(12);
        LayerProbe {
            probe: random(&[n], rng),
            params: vec![Param::new("x", random(&[n], rng))],
            forward: Box::new(|p| nn::relu(&p[0].value)),
            backward: Box::new(|p, d| vec![nn::relu_backward(&p[0].value, d)]),
        }
    });
    check_layer("sigmoid", |rng| {
        let n = 1 + rng.below(12);
        LayerProbe {
            probe: random(&[n], rng),
            params: vec![Param::new("x", random(&[n], rng))],
            forward: Box::new(|p| nn::sigmoid(&p[0].value)),
            backward: Box::new(|p, d| vec![nn::sigmoid_backward(&nn::sigmoid(&p[0].value), d)]),
        }
    });
    check_layer("softmax", |rng| {
        let (b, m) = (1 + rng.below(3), 2 + rng.below(5));
        LayerProbe {
            probe: random(&[b, m], rng),
            params: vec![Param::new("x", random(&[b, m], rng))],
            forward: Box::new(|p| nn::softmax(&p[0].value).unwrap()),
            backward: Box::new(|p, d| {
                vec![nn::softmax_backward(&nn::softmax(&p[0].value).unwrap(), d)]
            }),
        }
    });
}

pub fn batchnorm_gradients() {
    for mode in [Mode::Train, Mode::Eval] {
        check_layer(&format!("batchnorm {mode:?}"), |rng| {
            let (b, f) = (2 + rng.below(4), 1 + rng.below(3));
            let shape = if rng.below(2) == 0 {
                vec![b, f]
            } else {
                vec![b, f, 1 + rng.below(4)]
            };
            let mut running = RunningStats::new(f);
            running.mean = (0..f).map(|_| rng.normal()).collect();
            running.var = (0..f).map(|_| 0.5 + rng.uniform()).collect();
            let params = vec![
                Param::new("x", random(&shape, rng)),
                Param::new("gamma", random(&[f], rng)),
                Param::new("beta", random(&[f], rng)),
            ];
            let r2 = running.clone();
            LayerProbe {
                probe: random(&shape, rng),
                params,
                forward: Box::new(move |p| {
                    nn::batchnorm(&p[0].value, &p[1].value, &p[2].value, &running, mode)
                        .unwrap()
                        .0
                }),
                backward: Box::new(move |p, d| {
                    let (_, cache) =
                        nn::batchnorm(&p[0].value, &p[1].value, &p[2].value, &r2, mode).unwrap();
                    let g = nn::batchnorm_backward(&cache, &p[1].value, d).unwrap();
                    vec![g.input, g.gamma, g.beta]
                }),
            }
        });
    }
}

pub fn dropout_gradients_with_fixed_mask() {
    check_layer("dropout", |rng| {
        let n = 1 + rng.below(20);
        let seed = rng.next_u64();
        LayerProbe {
            probe: random(&[n], rng),
            params: vec![Param::new("x", random(&[n], rng))],
            forward: Box::new(move |p| {
                nn::dropout(&p[0].value, 0.6, &mut Rng::new(seed), Mode::Train)
                    .unwrap()
                    .0
            }),
            backward: Box::new(move |p, d| {
                let (_, mask) =
                    nn::dropout(&p[0].value, 0.6, &mut Rng::new(seed), Mode::Train).unwrap();
                vec![nn::dropout_backward(d, mask.as_deref())]
            }),
        }
    });
}

fn tiny_objective(terms: Terms, parts: &[Part], seed: u64) -> LossObjective {
    let cfg = ModelConfig {
        seed,
        ..ModelConfig::tiny()
    };
    let mut rng = Rng::new(seed + 77);
    let b = 4;
    LossObjective {
        params: init_params(&cfg).unwrap(),
        x_l: random(&[b, cfg.channels, cfg.window_len], &mut rng),
        y_l: (0..b).map(|i| i % cfg.n_classes).collect(),
        x_u: random(&[b, cfg.channels, cfg.window_len], &mut rng),
        terms,
        parts: parts.to_vec(),
        mode: Mode::Train,
        seed,
    }
}

fn check_objective(label: &str, terms: Terms, parts: &[Part]) {
    for seed in 0..3 {
        let mut obj = tiny_objective(terms, parts, seed);
        let r = grad_check(&mut obj, GradCheckOptions::default()).unwrap();
        assert!(r.max_rel_error < TOL, "{label} seed {seed}: {r:?}");
    }
}

pub fn adversarial_loss_gradients() {
    let t = Terms {
        adversarial: true,
        ..Terms::NONE
    };
    check_objective("L_a wrt discriminator", t, &[Part::Discriminator]);
    check_objective("L_a wrt encoder", t, &[Part::Encoder]);
}

pub fn reconstruction_loss_gradients() {
    let t = Terms {
        reconstruction: true,
        ..Terms::NONE
    };
    check_objective("L_rec wrt decoders", t, &[Part::DecoderL, Part::DecoderU]);
}

pub fn consistency_loss_gradients() {
    let t = Terms {
        consistency: true,
        ..Terms::NONE
    };
    check_objective("L_con wrt encoder", t, &[Part::Encoder]);
}

pub fn prediction_loss_gradients() {
    let t = Terms {
        prediction: true,
        ..Terms::NONE
    };
    check_objective(
        "L_y wrt encoder+predictor",
        t,
        &[Part::Encoder, Part::Predictor],
    );
}

pub fn total_loss_gradients() {
    check_objective("L_total wrt all", Terms::ALL, &Part::ALL);
}

pub fn eval_mode_encoder_gradients() {
    let mut obj = tiny_objective(
        Terms {
            prediction: true,
            ..Terms::NONE
        },
        &[Part::Encoder, Part::Predictor],
        9,
    );
    obj.mode = Mode::Eval;
    let r = grad_check(&mut obj, GradCheckOptions::default()).unwrap();
    assert!(r.max_rel_error < TOL, "{r:?}");
}

mod run {
    #[test]
    fn conv1d_gradients() {
        super::conv1d_gradients();
    }

    #[test]
    fn deconv1d_gradients() {
        super::deconv1d_gradients();
    }

    #[test]
    fn maxpool_and_upsample_gradients() {
        super::maxpool_and_upsample_gradients();
    }

    #[test]
    fn dense_gradients() {
        super::dense_gradients();
    }

    #[test]
    fn activation_gradients() {
        super::activation_gradients();
    }

    #[test]
    fn batchnorm_gradients() {
        super::batchnorm_gradients();
    }

    #[test]
    fn dropout_gradients_with_fixed_mask() {
        super::dropout_gradients_with_fixed_mask();
    }

    #[test]
    fn adversarial_loss_gradients() {
        super::adversarial_loss_gradients();
    }

    #[test]
    fn reconstruction_loss_gradients() {
        super::reconstruction_loss_gradients();
    }

    #[test]
    fn consistency_loss_gradients() {
        super::consistency_loss_gradients();
    }

    #[test]
    fn prediction_loss_gradients() {
        super::prediction_loss_gradients();
    }

    #[test]
    fn total_loss_gradients() {
        super::total_loss_gradients();
    }

    #[test]
    fn eval_mode_encoder_gradients() {
        super::eval_mode_encoder_gradients();
    }
}
