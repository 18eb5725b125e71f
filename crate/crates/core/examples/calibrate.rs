//! Pipeline calibration probe: times the end-to-end phantom run and prints
//! the headline metrics. Usage:
//! `cargo run -p lnm-core --example calibrate -- [seed] [epochs] [base] [patients]`

use std::time::Instant;

use lnm_core::corpus::{generate_phantom_corpus, PhantomSpec};
use lnm_core::evaluation::{fit_classifier, fit_encoder};
use lnm_core::mil::{AblationSpec, MilConfig};
use lnm_core::preprocess::AugmentationConfig;
use lnm_core::rng::derive_seed;
use lnm_core::vae::{AnnealSchedule, LossWeights, VaeConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let seed: u64 = args.get(1).map_or(11, |s| s.parse().unwrap());
    let epochs: usize = args.get(2).map_or(12, |s| s.parse().unwrap());
    let base: usize = args.get(3).map_or(16, |s| s.parse().unwrap());
    let patients: usize = args.get(4).map_or(168, |s| s.parse().unwrap());

    let t0 = Instant::now();
    let spec = PhantomSpec { n_patients: patients, seed: derive_seed(seed, "corpus"), ..PhantomSpec::default() };
    let corpus = generate_phantom_corpus(&spec).unwrap();
    let train = corpus.train_bags();
    let test = corpus.test_bags();
    let n_patches: usize = corpus.bags.iter().map(|b| b.patches.len()).sum();
    println!(
        "corpus: {} patients ({} pos), {} patches, train {} test {} [{:.1?}]",
        patients,
        corpus.manifest.n_positive,
        n_patches,
        train.len(),
        test.len(),
        t0.elapsed()
    );

    let vae_config = VaeConfig {
        base,
        latent_scalar: base,
        batch_size: 64,
        accumulation_steps: 1,
        learning_rate: 1e-3,
        weight_decay: 1e-4,
        max_epochs: epochs,
        patience: 6,
        seed: derive_seed(seed, "vae"),
        ..VaeConfig::default()
    };
    let weights = LossWeights { beta: 1.0, ..LossWeights::reference_defaults(vae_config.batch_size) };
    let schedule = AnnealSchedule { total_epochs: epochs, rate: 5.0 };

    let t1 = Instant::now();
    let stage1 = fit_encoder(&train, &test, &corpus.manifest.spacing, &vae_config, &weights, &schedule, None).unwrap();
    println!(
        "vae: best test ssim {:.4} at epoch {} ({} epochs run) [{:.1?}]",
        stage1.trained.best_test_ssim,
        stage1.trained.best_epoch,
        stage1.trained.history.len(),
        t1.elapsed()
    );
    for m in &stage1.trained.history {
        println!(
            "  epoch {:2}: loss {:8.3} train ssim {:.4} test ssim {:.4} test l1 {:.4} kld {:8.2}",
            m.epoch, m.train_loss, m.train_ssim, m.test_ssim, m.test_l1, m.test_kld
        );
    }

    let mil_config = MilConfig { seed: derive_seed(seed, "mil"), ..MilConfig::default() };
    let t2 = Instant::now();
    let stage2 = fit_classifier(
        &train,
        &test,
        &stage1.trained.model,
        &stage1.scaler,
        &corpus.manifest.spacing,
        &mil_config,
        &AblationSpec::default(),
        &AugmentationConfig::default(),
    )
    .unwrap();
    println!(
        "mil: best test auc {:.4} at epoch {} [{:.1?}]",
        stage2.trained.best_test_auc,
        stage2.trained.best_epoch,
        t2.elapsed()
    );
    let r = &stage2.report;
    println!(
        "report: auc {:?} sens {:.3} spec {:.3} acc {:.3} f1 {:.3} ba {:.3}",
        r.auc, r.sensitivity, r.specificity, r.accuracy, r.f1, r.balanced_accuracy
    );
    println!("total [{:.1?}]", t0.elapsed());
}
