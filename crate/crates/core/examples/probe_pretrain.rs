use nalgebra::DMatrix;
use posefuse_core::config::PipelineConfig;
use posefuse_core::data::{generate_dataset, Dataset};
use posefuse_core::geom::matrix_to_axis_angle;
use posefuse_core::model::HandSide;
use posefuse_core::train::SampleKind;

fn main() {
    let mut config = PipelineConfig::default();
    config.generate.train_scenes = 300;
    config.generate.heldout_scenes = 100;
    let dir = std::env::temp_dir().join("posefuse_probe_pretrain");
    let _ = std::fs::remove_dir_all(&dir);
    generate_dataset(&config, 42, &dir).unwrap();
    let ds = Dataset::open(&dir).unwrap();

    // Linear probe: pooled input channels (+1 bias) -> selected pose targets.
    let pooled_of = |idx: usize| -> (Vec<f64>, Vec<f64>) {
        let rec = ds.read_sample(idx).unwrap();
        let g = &rec.body_grid;
        let n = g.cell_count();
        let mut pooled = vec![0.0; g.channels + 1];
        for t in 0..n {
            for c in 0..g.channels {
                pooled[c] += g.data[t * g.channels + c];
            }
        }
        for p in pooled.iter_mut() {
            *p /= n as f64;
        }
        pooled[32] = 1.0;
        // Targets: left_shoulder aa (3), left_wrist aa (3)
        let spec = &ds.body_spec;
        let ls = spec.joint_index("left_shoulder").unwrap();
        let lw = spec.joint_index("left_wrist").unwrap();
        let a = matrix_to_axis_angle(&rec.body_pose.local_rotations[ls - 1]).unwrap().0;
        let b = matrix_to_axis_angle(&rec.body_pose.local_rotations[lw - 1]).unwrap().0;
        (pooled, vec![a.x, a.y, a.z, b.x, b.y, b.z])
    };

    let train: Vec<usize> = ds.split("train").unwrap().iter().copied()
        .filter(|&i| ds.read_sample(i).unwrap().kind == SampleKind::FullBody).collect();
    let heldout: Vec<usize> = ds.split("heldout").unwrap().to_vec();
    let n = train.len();
    let d = 33;
    let mut x = DMatrix::zeros(n, d);
    let mut y = DMatrix::zeros(n, 6);
    for (row, &i) in train.iter().enumerate() {
        let (p, t) = pooled_of(i);
        for c in 0..d { x[(row, c)] = p[c]; }
        for c in 0..6 { y[(row, c)] = t[c]; }
    }
    let xtx = x.transpose() * &x + DMatrix::identity(d, d) * 1e-6;
    let xty = x.transpose() * &y;
    let w = xtx.lu().solve(&xty).unwrap();

    let mut err_shoulder = 0.0;
    let mut err_wrist = 0.0;
    let mut var_shoulder = 0.0;
    let mut var_wrist = 0.0;
    for &i in &heldout {
        let (p, t) = pooled_of(i);
        let pv = DMatrix::from_iterator(1, d, p.iter().copied());
        let pred = pv * &w;
        for c in 0..3 {
            err_shoulder += (pred[(0, c)] - t[c]).abs();
            var_shoulder += t[c].abs();
        }
        for c in 3..6 {
            err_wrist += (pred[(0, c)] - t[c]).abs();
            var_wrist += t[c].abs();
        }
    }
    let hn = (heldout.len() * 3) as f64;
    println!("linear probe heldout: shoulder aa L1 {:.4} (prior {:.4}) | wrist aa L1 {:.4} (prior {:.4})",
        err_shoulder / hn, var_shoulder / hn, err_wrist / hn, var_wrist / hn);
    let _ = HandSide::Left;
}
