//! Training-loop integration tests on tiny grids: schedule contract,
//! determinism, and the GAN alternation path.

use std::path::PathBuf;

use qotr::config::TrainConfig;
use qotr::synth::synth_corpus;
use qotr::train::{train, StepTelemetry};

fn tiny_config(data_dir: PathBuf) -> TrainConfig {
    TrainConfig {
        height: 32,
        width: 32,
        margin: 8,
        patch_size: 8,
        overlap: 2,
        d_model: 32,
        enc_layers: 2,
        dec_layers: 1,
        n_heads: 2,
        qem_blocks: 1,
        noise_dim: 8,
        disc_scales: 2,
        lr: 1e-4,
        batch_size: 2,
        epochs: 2,
        warmup_epochs: 2,
        seed: 11,
        data_dir,
        diffaug: true,
        ..TrainConfig::default()
    }
}

fn corpus(tag: &str, n: usize, size: usize) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("qotr_train_test_{tag}"));
    std::fs::remove_dir_all(&dir).ok();
    synth_corpus(&dir, n, size, 3).unwrap();
    dir
}

#[test]
fn warmup_leaves_discriminator_untouched() {
    let dir = corpus("warmup", 4, 48);
    let cfg = tiny_config(dir.clone());

    // epochs = 0 returns the freshly initialized state
    let initial = train(
        &TrainConfig {
            epochs: 0,
            warmup_epochs: 0,
            ..cfg.clone()
        },
        None,
        &mut |_| {},
    )
    .unwrap();

    let after = train(&cfg, None, &mut |_| {}).unwrap();

    // compare every discriminator tensor (weights and u state) byte-wise
    let disc_entries = |ckpt: &qotr::checkpoint::Checkpoint| -> Vec<(String, Vec<f32>)> {
        ckpt.to_table()
            .entries
            .into_iter()
            .filter(|(n, _, _)| n.starts_with("disc."))
            .map(|(n, _, d)| (n, d))
            .collect()
    };
    let before = disc_entries(&initial.checkpoint);
    let afterwards = disc_entries(&after.checkpoint);
    assert_eq!(before.len(), afterwards.len());
    for ((n0, d0), (n1, d1)) in before.iter().zip(&afterwards) {
        assert_eq!(n0, n1);
        assert!(
            d0.iter().zip(d1).all(|(a, b)| a.to_bits() == b.to_bits()),
            "discriminator tensor {n0} changed during warm-up"
        );
    }

    assert_eq!(after.counters.discriminator_updates, 0);
    assert_eq!(after.counters.adversarial_evals, 0);
    assert_eq!(after.counters.perceptual_evals, 0);
    assert!(after.telemetry.iter().all(|t| t.l_adv_d == 0.0 && t.l_perc == 0.0));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn adversarial_phase_updates_discriminator_and_counters() {
    let dir = corpus("gan", 4, 48);
    let cfg = TrainConfig {
        epochs: 2,
        warmup_epochs: 1,
        ..tiny_config(dir.clone())
    };
    let initial = train(
        &TrainConfig {
            epochs: 0,
            warmup_epochs: 0,
            ..cfg.clone()
        },
        None,
        &mut |_| {},
    )
    .unwrap();
    let after = train(&cfg, None, &mut |_| {}).unwrap();

    assert!(after.counters.discriminator_updates > 0);
    assert!(after.counters.adversarial_evals > 0);
    assert!(after.counters.perceptual_evals > 0);

    let w0 = &initial.checkpoint.discriminator.scales[0][0].w;
    let w1 = &after.checkpoint.discriminator.scales[0][0].w;
    assert_ne!(w0.data(), w1.data(), "discriminator must move in GAN phase");

    // adversarial telemetry populated after warm-up
    let gan_steps: Vec<&StepTelemetry> = after
        .telemetry
        .iter()
        .filter(|t| t.l_adv_d != 0.0)
        .collect();
    assert!(!gan_steps.is_empty());
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn identical_seeds_reproduce_loss_trajectory() {
    let dir = corpus("determinism", 4, 48);
    let cfg = TrainConfig {
        epochs: 3,
        warmup_epochs: 1,
        ..tiny_config(dir.clone())
    };
    let a = train(&cfg, None, &mut |_| {}).unwrap();
    let b = train(&cfg, None, &mut |_| {}).unwrap();
    assert_eq!(a.telemetry.len(), b.telemetry.len());
    for (x, y) in a.telemetry.iter().zip(&b.telemetry) {
        assert_eq!(x.l_total.to_bits(), y.l_total.to_bits());
        assert_eq!(x.l_rec.to_bits(), y.l_rec.to_bits());
    }
    assert_eq!(a.checkpoint.to_bytes(), b.checkpoint.to_bytes());
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn telemetry_line_format() {
    let t = StepTelemetry {
        step: 7,
        l_adv_d: 1.5,
        l_adv_g: -0.25,
        l_rec: 3.0,
        l_perc: 0.125,
        l_total: 2.0,
    };
    let line = t.to_string();
    assert!(line.starts_with("7, "));
    assert_eq!(line.split(", ").count(), 6);
}

#[test]
fn size_mismatch_is_config_error_at_load() {
    let dir = corpus("mismatch", 3, 40);
    let cfg = tiny_config(dir.clone()); // grid needs 48x48
    let Err(err) = train(&cfg, None, &mut |_| {}).map(|_| ()) else {
        panic!("training with mismatched image sizes must fail at load");
    };
    let msg = err.to_string();
    assert!(msg.contains("48") && msg.contains("40"), "{msg}");
    std::fs::remove_dir_all(&dir).ok();
}
