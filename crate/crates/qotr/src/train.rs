//! GAN training loop: a reconstruction-only warm-up phase, then alternating
//! discriminator and generator steps. Single-threaded and fully determined
//! by the seed; every batch image runs on its own tape and the gradient
//! maps merge by summation.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use qotr_core::generator::{Generator, GeneratorParams};
use qotr_core::losses::{
    d_forward, d_hinge_loss, diff_augment, g_adv_loss, perceptual_loss, rec_loss, total_g_loss,
    DiffAugDraw, DiscriminatorParams, FeatureExtractor,
};
use qotr_core::psm::{assemble, disassemble_targets};
use qotr_core::tensor::{Tape, Tensor};
use qotr_core::{Error, Result};

use crate::checkpoint::Checkpoint;
use crate::config::TrainConfig;
use crate::data::{center_crop, Dataset};
use crate::optim::{AdamConfig, AdamState};
use crate::{DISC_BASE_CHANNELS, DISC_STRIDED_LAYERS};

/// One telemetry record per optimization step.
#[derive(Clone, Copy, Debug)]
pub struct StepTelemetry {
    pub step: u64,
    pub l_adv_d: f32,
    pub l_adv_g: f32,
    pub l_rec: f32,
    pub l_perc: f32,
    pub l_total: f32,
}

impl std::fmt::Display for StepTelemetry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}, {:.6}, {:.6}, {:.6}, {:.6}, {:.6}",
            self.step, self.l_adv_d, self.l_adv_g, self.l_rec, self.l_perc, self.l_total
        )
    }
}

/// Instrumentation counters, used to assert the warm-up contract.
#[derive(Clone, Copy, Debug, Default)]
pub struct TrainCounters {
    pub discriminator_updates: u64,
    pub adversarial_evals: u64,
    pub perceptual_evals: u64,
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub telemetry: Vec<StepTelemetry>,
    pub counters: TrainCounters,
}

/// Flat gradient accumulator aligned with a parameter visit order.
struct GradAccum {
    sums: Vec<Option<Vec<f32>>>,
}

impl GradAccum {
    fn new(n: usize) -> Self {
        GradAccum {
            sums: vec![None; n],
        }
    }

    fn add(&mut self, i: usize, g: &Tensor<f32>, scale: f32) {
        match &mut self.sums[i] {
            Some(acc) => {
                for (a, v) in acc.iter_mut().zip(g.data()) {
                    *a += v * scale;
                }
            }
            slot @ None => {
                *slot = Some(g.data().iter().map(|v| v * scale).collect());
            }
        }
    }

    fn into_tensors(self, shapes: &[Vec<usize>]) -> Vec<Option<Tensor<f32>>> {
        self.sums
            .into_iter()
            .zip(shapes)
            .map(|(s, shape)| s.map(|d| Tensor::from_vec(shape, d).expect("grad shape")))
            .collect()
    }
}

fn collect_watched(
    live: &mut GeneratorParams<f32>,
) -> Vec<Tensor<f32>> {
    let mut v = Vec::new();
    live.for_each(&mut |_, t| v.push(t.clone()));
    v
}

/// Run training per the config. Telemetry lines stream to `sink`; when
/// `out_dir` is given a checkpoint is written after every epoch.
pub fn train(
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
    sink: &mut dyn FnMut(&StepTelemetry),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let spec = cfg.grid();
    let (canvas_h, canvas_w) = spec.canvas();
    let dataset = Dataset::load_dir(&cfg.data_dir, Some((canvas_h, canvas_w)))?;
    let generator = Generator::new(spec)?;
    let noise_kind = cfg.noise_kind()?;
    let weights = cfg.loss_weights();

    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut gen_params = GeneratorParams::<f32>::init(&mut init_rng, &spec, &cfg.dims())?;
    let mut disc_params = DiscriminatorParams::<f32>::init(
        &mut init_rng,
        cfg.disc_scales,
        DISC_BASE_CHANNELS,
        DISC_STRIDED_LAYERS,
    )?;
    disc_params.check_input(canvas_h, canvas_w)?;
    let features = FeatureExtractor::<f32>::with_seed(
        qotr_core::losses::features::DEFAULT_FEATURE_SEED,
    );

    let mut data_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0001);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0002);
    let mut aug_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0003);

    let adam_cfg = AdamConfig {
        lr: cfg.lr,
        beta1: cfg.beta1,
        beta2: cfg.beta2,
        eps: 1e-8,
        weight_decay: cfg.weight_decay,
    };
    let (names_g, shapes_g) = param_index(&gen_params);
    let (names_d, shapes_d) = disc_param_index(&disc_params);
    let mut opt_g = AdamState::new(&zip_names(&names_g, &shapes_g));
    let mut opt_d = AdamState::new(&zip_names(&names_d, &shapes_d));

    let mut telemetry = Vec::new();
    let mut counters = TrainCounters::default();
    let mut step: u64 = 0;

    for epoch in 0..cfg.epochs {
        let warm = epoch < cfg.warmup_epochs;
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        shuffle(&mut order, &mut data_rng);

        for batch in order.chunks(cfg.batch_size) {
            step += 1;
            let inv_b = 1.0 / batch.len() as f32;
            let mut rec_mean = 0.0f32;
            let mut adv_d_mean = 0.0f32;
            let mut adv_g_mean = 0.0f32;
            let mut perc_mean = 0.0f32;
            let mut total_mean = 0.0f32;

            // shared augmentation draw for the whole step
            let draw = if cfg.diffaug && !warm {
                DiffAugDraw::sample(&mut aug_rng, canvas_h, canvas_w)
            } else {
                DiffAugDraw::identity()
            };

            if !warm {
                // discriminator step: hinge on assembled fakes vs reals
                disc_params.refresh_sn(1)?;
                let tape: Tape<f32> = Tape::new();
                let live_d = disc_params.watch(&tape);
                let mut accum = GradAccum::new(names_d.len());
                let mut watched_flat = Vec::new();
                {
                    let mut live_mut = live_d.clone();
                    live_mut.for_each_trainable(&mut |_, t| watched_flat.push(t.clone()));
                }
                for &idx in batch {
                    let y = &dataset.images[idx];
                    let x = center_crop(y, spec.height, spec.width)?;
                    let noise = generator.draw_noise::<f32, _>(
                        &mut noise_rng,
                        noise_kind,
                        cfg.noise_dim,
                    );
                    let fake = generator.outpaint_canvas(&x, &gen_params, &noise)?;
                    let fake_aug = diff_augment(&fake, &draw)?;
                    let real_aug = diff_augment(y, &draw)?;
                    let scores_fake =
                        d_forward(&fake_aug.reshape(&[1, 3, canvas_h, canvas_w])?, &live_d)?;
                    let scores_real =
                        d_forward(&real_aug.reshape(&[1, 3, canvas_h, canvas_w])?, &live_d)?;
                    counters.adversarial_evals += 2;
                    let loss = d_hinge_loss(&scores_fake, &scores_real)?;
                    adv_d_mean += loss.item()? * inv_b;
                    let grads = loss.backward()?;
                    for (i, w) in watched_flat.iter().enumerate() {
                        if let Some(g) = grads.grad(w) {
                            accum.add(i, &g, inv_b);
                        }
                    }
                }
                let grads = accum.into_tensors(&shapes_d);
                apply_disc_step(&mut disc_params, &names_d, &grads, &mut opt_d, &adam_cfg)?;
                counters.discriminator_updates += 1;
            }

            // generator step
            {
                let tape: Tape<f32> = Tape::new();
                let mut live_g = gen_params.watch(&tape);
                let watched_flat = collect_watched(&mut live_g);
                let mut accum = GradAccum::new(names_g.len());
                for &idx in batch {
                    let y = &dataset.images[idx];
                    let x = center_crop(y, spec.height, spec.width)?;
                    let noise = generator.draw_noise::<f32, _>(
                        &mut noise_rng,
                        noise_kind,
                        cfg.noise_dim,
                    );
                    let patches = generator.forward_patches(&x, &live_g, &noise)?;
                    let targets = disassemble_targets(y, &spec, generator.omap())?;
                    let rec = rec_loss(&patches, &targets)?;
                    rec_mean += rec.item()? * inv_b;

                    let loss = if warm {
                        rec.scale(weights.lambda_rec)
                    } else {
                        let canvas = assemble(&x, &patches, &spec, generator.omap())?;
                        let canvas_aug = diff_augment(&canvas, &draw)?;
                        let scores =
                            d_forward(&canvas_aug.reshape(&[1, 3, canvas_h, canvas_w])?, &disc_params)?;
                        counters.adversarial_evals += 1;
                        let adv = g_adv_loss(&scores)?;
                        adv_g_mean += adv.item()? * inv_b;
                        let perc = perceptual_loss(
                            &canvas.reshape(&[1, 3, canvas_h, canvas_w])?,
                            &y.reshape(&[1, 3, canvas_h, canvas_w])?,
                            &features,
                        )?;
                        counters.perceptual_evals += 1;
                        perc_mean += perc.item()? * inv_b;
                        total_g_loss(&adv, &rec, &perc, &weights)?
                    };
                    total_mean += loss.item()? * inv_b;
                    if !loss.item()?.is_finite() {
                        return Err(Error::Numeric(format!(
                            "generator loss diverged at step {step}"
                        )));
                    }
                    let grads = loss.backward()?;
                    for (i, w) in watched_flat.iter().enumerate() {
                        if let Some(g) = grads.grad(w) {
                            accum.add(i, &g, inv_b);
                        }
                    }
                }
                let grads = accum.into_tensors(&shapes_g);
                apply_gen_step(&mut gen_params, &names_g, &grads, &mut opt_g, &adam_cfg)?;
            }

            let record = StepTelemetry {
                step,
                l_adv_d: adv_d_mean,
                l_adv_g: adv_g_mean,
                l_rec: rec_mean,
                l_perc: perc_mean,
                l_total: total_mean,
            };
            sink(&record);
            telemetry.push(record);
        }

        if let Some(dir) = out_dir {
            let ckpt = build_checkpoint(cfg, &gen_params, &disc_params, &opt_g, &opt_d, step);
            ckpt.save(&dir.join(format!("epoch_{epoch:04}.ckpt")))?;
        }
    }

    let checkpoint = build_checkpoint(cfg, &gen_params, &disc_params, &opt_g, &opt_d, step);
    if let Some(dir) = out_dir {
        checkpoint.save(&dir.join("final.ckpt"))?;
    }
    Ok(TrainOutcome {
        checkpoint,
        telemetry,
        counters,
    })
}

fn build_checkpoint(
    cfg: &TrainConfig,
    gen: &GeneratorParams<f32>,
    disc: &DiscriminatorParams<f32>,
    opt_g: &AdamState,
    opt_d: &AdamState,
    step: u64,
) -> Checkpoint {
    Checkpoint {
        config: cfg.clone(),
        generator: gen.clone(),
        discriminator: disc.clone(),
        opt_g: Some(AdamState {
            m: opt_g.m.clone(),
            v: opt_g.v.clone(),
            step: opt_g.step,
        }),
        opt_d: Some(AdamState {
            m: opt_d.m.clone(),
            v: opt_d.v.clone(),
            step: opt_d.step,
        }),
        step,
    }
}

fn param_index(p: &GeneratorParams<f32>) -> (Vec<String>, Vec<Vec<usize>>) {
    let mut names = Vec::new();
    let mut shapes = Vec::new();
    p.clone().for_each(&mut |n, t| {
        names.push(n);
        shapes.push(t.shape().to_vec());
    });
    (names, shapes)
}

fn disc_param_index(p: &DiscriminatorParams<f32>) -> (Vec<String>, Vec<Vec<usize>>) {
    let mut names = Vec::new();
    let mut shapes = Vec::new();
    p.clone().for_each_trainable(&mut |n, t| {
        names.push(n);
        shapes.push(t.shape().to_vec());
    });
    (names, shapes)
}

fn zip_names(names: &[String], shapes: &[Vec<usize>]) -> Vec<(String, Vec<usize>)> {
    names
        .iter()
        .cloned()
        .zip(shapes.iter().cloned())
        .collect()
}

fn apply_gen_step(
    params: &mut GeneratorParams<f32>,
    names: &[String],
    grads: &[Option<Tensor<f32>>],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    state.step += 1;
    let bc = crate::optim::bias_corrections(cfg, state.step);
    let mut i = 0;
    let mut first_err = None;
    let (m, v) = (&mut state.m, &mut state.v);
    params.for_each(&mut |_, t| {
        if first_err.is_none() {
            first_err =
                crate::optim::update_tensor(&names[i], t, grads[i].as_ref(), &mut m[i], &mut v[i], bc, cfg)
                    .err();
        }
        i += 1;
    });
    first_err.map_or(Ok(()), Err)
}

fn apply_disc_step(
    params: &mut DiscriminatorParams<f32>,
    names: &[String],
    grads: &[Option<Tensor<f32>>],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    state.step += 1;
    let bc = crate::optim::bias_corrections(cfg, state.step);
    let mut i = 0;
    let mut first_err = None;
    let (m, v) = (&mut state.m, &mut state.v);
    params.for_each_trainable(&mut |_, t| {
        if first_err.is_none() {
            first_err =
                crate::optim::update_tensor(&names[i], t, grads[i].as_ref(), &mut m[i], &mut v[i], bc, cfg)
                    .err();
        }
        i += 1;
    });
    first_err.map_or(Ok(()), Err)
}

/// Fisher-Yates with the run's data stream.
fn shuffle(order: &mut [usize], rng: &mut ChaCha8Rng) {
    for i in (1..order.len()).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
}
