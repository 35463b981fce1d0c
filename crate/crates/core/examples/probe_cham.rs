use posefuse_core::backbone::{init_hand_backbone, pretrain_body_backbone};
use posefuse_core::cham::init_cham;
use posefuse_core::config::PipelineConfig;
use posefuse_core::data::{generate_dataset, protocol, Dataset};
use posefuse_core::pipeline::{evaluate, Strategy};
use posefuse_core::train::{total_loss_with_grads, train_cham, PipelineBundle};

fn norm(v: &[f64]) -> f64 { (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt() }

fn main() {
    let mut config = PipelineConfig::default();
    config.generate.train_scenes = 300;
    config.generate.heldout_scenes = 100;
    config.pretrain.steps = 800;
    let dir = std::env::temp_dir().join("posefuse_probe_cham");
    let _ = std::fs::remove_dir_all(&dir);
    generate_dataset(&config, 42, &dir).unwrap();
    let ds = Dataset::open(&dir).unwrap();
    let (body, rep) = pretrain_body_backbone(&ds, &config, 42).unwrap();
    println!("pretrain: mpvpe {:.1} | wrist geo {:.3}", rep.heldout_body_mpvpe, rep.heldout_wrist_geodesic);
    // Head weight scale on wrist payload channels (raw slots for wrist aa).
    let c = body.config.channels;
    let spec = &ds.body_spec;
    let lw = spec.joint_index("left_wrist").unwrap();
    let mut wmax: f64 = 0.0;
    for slot in 3 * lw..3 * lw + 3 {
        for ch in 0..c { wmax = wmax.max(body.head_w[slot * c + ch].abs()); }
    }
    println!("head wrist-row max |w|: {wmax:.3}");

    let hand = init_hand_backbone(config.hand_backbone_seed, protocol::CHANNELS);
    let bundle = PipelineBundle::new(&ds.body_spec, &ds.hand_spec, &body, &hand,
        config.smoothing.clone().into(), (256.0, 192.0)).unwrap();

    // Mean gradient norms at zero init over one batch.
    let params = init_cham(config.cham_seed, 6, 32);
    let mut acc = params.zeros_like();
    let train = ds.split("train").unwrap();
    for &i in train.iter().take(32) {
        let rec = ds.read_sample(i).unwrap();
        let (_, g) = total_loss_with_grads(&rec, &bundle, &params, &config.train.weights).unwrap();
        acc.add_scaled(&g, 1.0 / 32.0);
    }
    for k in [0usize, 3, 5] {
        println!("block {k}: |dW_l| {:.4} |db_l| {:.4}", norm(&acc.left_branch[k].w), norm(&acc.left_branch[k].b));
    }
    println!("attn wq grad rms {:.6}", norm(&acc.attention[0].wq));

    // Train and look at what moved.
    let outcome = train_cham(&ds, &bundle, params, &config, 42, None, None).unwrap();
    let first = outcome.log.first().unwrap();
    let last = outcome.log.last().unwrap();
    println!("loss {:.2}->{:.2} | kp3d {:.2}->{:.2} | kp2d {:.2}->{:.2} | wrist {:.4}->{:.4}",
        first.loss, last.loss, first.keypoint_3d, last.keypoint_3d, first.keypoint_2d, last.keypoint_2d,
        first.wrist_orientation, last.wrist_orientation);
    println!("trained |W_l block0| rms {:.4} |b| {:.4}", norm(&outcome.params.left_branch[0].w), norm(&outcome.params.left_branch[0].b));
    let frozen = evaluate(&ds, "heldout", &bundle, None, Strategy::Frozen).unwrap();
    let trained = evaluate(&ds, "heldout", &bundle, Some(&outcome.params), Strategy::Cham).unwrap();
    println!("frozen hands {:.1} geo {:.3} | cham hands {:.1} geo {:.3} | ratio {:.3}",
        frozen.mpvpe_hands, frozen.wrist_geodesic, trained.mpvpe_hands, trained.wrist_geodesic,
        trained.mpvpe_hands / frozen.mpvpe_hands);
}
