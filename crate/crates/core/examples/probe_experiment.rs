use posefuse_core::backbone::{init_hand_backbone, pretrain_body_backbone};
use posefuse_core::cham::init_cham;
use posefuse_core::config::PipelineConfig;
use posefuse_core::data::{generate_dataset, protocol, Dataset};
use posefuse_core::pipeline::{evaluate, Strategy};
use posefuse_core::train::{train_cham, PipelineBundle};
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let scale: f64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(0.15);
    let mut config = PipelineConfig::default(); config.pretrain.learning_rate = 1e-3;
    config.generate.train_scenes = (2000 as f64 * scale) as usize;
    config.generate.heldout_scenes = (400 as f64 * scale) as usize;
    
    let dir = std::env::temp_dir().join("posefuse_probe_experiment");
    let _ = std::fs::remove_dir_all(&dir);

    let t0 = Instant::now();
    generate_dataset(&config, 42, &dir).unwrap();
    let ds = Dataset::open(&dir).unwrap();
    println!("generate: {:.1}s ({} scenes)", t0.elapsed().as_secs_f64(), ds.manifest.sample_count);

    let t1 = Instant::now();
    let (body_backbone, report) = pretrain_body_backbone(&ds, &config, 42).unwrap();
    println!("pretrain: {:.1}s | loss {:.4} -> {:.4} | heldout body mpvpe {:.1}mm | wrist geo {:.3} rad",
        t1.elapsed().as_secs_f64(), report.initial_loss, report.final_loss,
        report.heldout_body_mpvpe, report.heldout_wrist_geodesic);

    let hand_backbone = init_hand_backbone(config.hand_backbone_seed, protocol::CHANNELS);
    let bundle = PipelineBundle::new(
        &ds.body_spec, &ds.hand_spec, &body_backbone, &hand_backbone,
        config.smoothing.clone().into(),
        (config.generate.camera.image_w, config.generate.camera.image_h),
    ).unwrap();

    let t2 = Instant::now();
    let frozen = evaluate(&ds, "heldout", &bundle, None, Strategy::Frozen).unwrap();
    println!("eval frozen: {:.1}s | full {:.1} | hands {:.1} | mrrpe {:.1} | wrist geo {:.3}",
        t2.elapsed().as_secs_f64(), frozen.mpvpe_full, frozen.mpvpe_hands, frozen.mrrpe, frozen.wrist_geodesic);

    let wrist_copy = evaluate(&ds, "heldout", &bundle, None, Strategy::WristCopy).unwrap();
    println!("eval wrist_copy: full {:.1} | hands {:.1} | mrrpe {:.1}",
        wrist_copy.mpvpe_full, wrist_copy.mpvpe_hands, wrist_copy.mrrpe);

    let t3 = Instant::now();
    let init = init_cham(config.cham_seed, config.backbone.depth, config.backbone.channels);
    let zero_eval = evaluate(&ds, "heldout", &bundle, Some(&init), Strategy::Cham).unwrap();
    println!("zero-init cham eval: full {:.1} | hands {:.1} (should match frozen)", zero_eval.mpvpe_full, zero_eval.mpvpe_hands);

    let outcome = train_cham(&ds, &bundle, init, &config, 42, None, None).unwrap();
    println!("train cham: {:.1}s | loss {:.4} -> {:.4}", t3.elapsed().as_secs_f64(),
        outcome.log.first().map(|r| r.loss).unwrap_or(0.0),
        outcome.log.last().map(|r| r.loss).unwrap_or(0.0));

    let trained = evaluate(&ds, "heldout", &bundle, Some(&outcome.params), Strategy::Cham).unwrap();
    println!("eval cham: full {:.1} | hands {:.1} | mrrpe {:.1} | wrist geo {:.3}",
        trained.mpvpe_full, trained.mpvpe_hands, trained.mrrpe, trained.wrist_geodesic);
    println!("hand ratio cham/frozen: {:.3} (need <= 0.7) | full ratio {:.3} (need <= 1.05)",
        trained.mpvpe_hands / frozen.mpvpe_hands, trained.mpvpe_full / frozen.mpvpe_full);
    println!("ordering: wrist_copy {:.1} > frozen {:.1} > cham {:.1}", wrist_copy.mpvpe_hands, frozen.mpvpe_hands, trained.mpvpe_hands);
}
