use posefuse_core::backbone::pretrain_body_backbone;
use posefuse_core::config::PipelineConfig;
use posefuse_core::data::{generate_dataset, Dataset};

fn main() {
    let mut config = PipelineConfig::default();
    config.generate.train_scenes = 300;
    config.generate.heldout_scenes = 100;
    config.pretrain.steps = 400;
    let dir = std::env::temp_dir().join("posefuse_probe_lr");
    let _ = std::fs::remove_dir_all(&dir);
    generate_dataset(&config, 42, &dir).unwrap();
    let ds = Dataset::open(&dir).unwrap();
    for (lr, steps) in [(2e-3, 800usize), (2e-3, 1600), (1e-3, 1600)] {
        let mut c = config.clone(); c.pretrain.steps = steps;
        c.pretrain.learning_rate = lr;
        match pretrain_body_backbone(&ds, &c, 42) {
            Ok((_, rep)) => println!(
                "lr {lr:.0e} steps {steps}: loss {:.1} -> {:.1} | body mpvpe {:.1}mm | wrist geo {:.3}",
                rep.initial_loss, rep.final_loss, rep.heldout_body_mpvpe, rep.heldout_wrist_geodesic
            ),
            Err(e) => println!("lr {lr:.0e}: {e}"),
        }
    }
}
