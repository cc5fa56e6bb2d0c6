use crowd_core::detect::{self, DetectorConfig};
use crowd_core::fuse::{self, FusionConfig};
use crowd_core::model::{Frame, PerspectiveMap};
use crowd_core::pipeline::*;
use crowd_core::regress;
use crowd_core::segment::{edge_map, BackgroundModel};
use crowd_core::synth::{generate, FrameTruth, Scenario, ScenarioSpec};

fn scene(scenario: Scenario, n: u32, seed: u64, dur: f64) -> (Vec<Frame>, Vec<FrameTruth>) {
    let spec = ScenarioSpec { duration_s: dur, ..ScenarioSpec::new(scenario, n, seed) };
    let (frames, truth) = generate(&spec).unwrap();
    (frames, truth.frames)
}

#[test]
fn dbg_fusion() {
    let t0 = std::time::Instant::now();
    // --- detector training on sparse scenes (crops are scale-normalized)
    let (tf, tt) = {
        let spec = ScenarioSpec { width: 448, height: 384, duration_s: 6.0, agent_h_bottom: 100.0,
            ..ScenarioSpec::new(Scenario::SparseWalk, 8, 101) };
        let (f, t) = generate(&spec).unwrap();
        (f, t.frames)
    };
    let (vf, vt) = {
        let spec = ScenarioSpec { width: 448, height: 384, duration_s: 4.0, agent_h_bottom: 100.0,
            ..ScenarioSpec::new(Scenario::SparseWalk, 8, 202) };
        let (f, t) = generate(&spec).unwrap();
        (f, t.frames)
    };
    let det_cfg = DetectorTrainConfig { positives_per_class: 600, negatives_per_class: 600, ..Default::default() };
    let models = train_detector(&tf, &tt, &vf, &vt, &det_cfg).unwrap();
    println!("detector trained in {:?}", t0.elapsed());
    for m in &models { println!("  class {:?} thr {:.1}", m.class, m.score_threshold); }

    // --- regression training across densities at full resolution
    let mut counting = CountingConfig::default();
    counting.segmentation.learning_rate = 0.03;
    let pmap = PerspectiveMap::unit(576);
    let mut xs_plain = Vec::new(); let mut ys_plain = Vec::new();
    let mut xs_resid = Vec::new(); let mut ys_resid = Vec::new();
    let ladder = [0u32, 1, 3, 5, 7, 9, 10, 13, 16, 20, 24, 28, 33, 38, 44, 50, 57, 64, 70, 75];
    for (i, n) in ladder.into_iter().enumerate() {
        let scen = if n <= 10 { Scenario::SparseWalk } else { Scenario::DenseCrowd };
        let (frames, truths) = scene(scen, n, 1000 + i as u64, 4.0);
        // sparse scenes oversampled: the background-only regime must anchor
        let reps = if n <= 10 { 2 } else { 1 };
        let (x, y) = regression_samples(&frames, &truths, None, &counting, &pmap, 50).unwrap();
        for _ in 0..reps { xs_plain.extend(x.iter().cloned()); ys_plain.extend(y.iter().cloned()); }
        let (x, y) = regression_samples(&frames, &truths, Some(&models), &counting, &pmap, 50).unwrap();
        for _ in 0..reps { xs_resid.extend(x.iter().cloned()); ys_resid.extend(y.iter().cloned()); }
    }
    println!("regression samples: {} plain (t={:?})", xs_plain.len(), t0.elapsed());
    let plain_model = regress::train_linear(&xs_plain, &ys_plain).unwrap();
    let resid_model = regress::train_linear(&xs_resid, &ys_resid).unwrap();

    // --- evaluation per bin
    let bins: [(u32, u32, [u32;2]); 4] = [(0,10,[5,9]), (11,25,[15,22]), (26,50,[35,45]), (51,75,[60,72])];
    for (lo, hi, ns) in bins {
        let mut det_err = Vec::new(); let mut reg_err = Vec::new(); let mut fus_err = Vec::new();
        let mut resid_pred = Vec::new(); let mut resid_true = Vec::new();
        let mut resid_truthbox = Vec::new();
        for (si, &n) in ns.iter().enumerate() {
            let scen = if n <= 10 { Scenario::SparseWalk } else { Scenario::DenseCrowd };
            let (frames, truths) = scene(scen, n, 2000 + lo as u64 * 10 + si as u64, 4.0);
            let mut bg = BackgroundModel::new(704, 576, counting.segmentation.clone());
            let scales = detect::default_scales(576, &counting.fusion.detector);
            for (i, frame) in frames.iter().enumerate() {
                let fg = bg.update_and_segment(frame).unwrap();
                if i < 50 { continue; }
                let edges = edge_map(frame, counting.edge_threshold);
                let truth = truths[i].truth.count as f64;
                // detection only
                let boxes = detect::detect_gated(frame, &models, &scales, &counting.fusion.detector, Some(&fg));
                let d = detect::count_by_detection(&boxes) as f64;
                det_err.push((d.round() - truth).abs());
                // regression only
                let f = regress::extract_block_features(&fg, &edges, &pmap, &[]).unwrap();
                let r = regress::estimate_count_regression(&plain_model, &f);
                reg_err.push((r.round() - truth).abs());
                // fused
                let fc = FusionConfig { scales: scales.clone(), use_fg_gate: true, ..Default::default() };
                let est = fuse::fuse_count(frame, &fg, &edges, &models, &resid_model, &pmap, &fc).unwrap();
                fus_err.push((est.total.round() - truth).abs());
                resid_pred.push(est.regressed_residual);
                resid_true.push(truth - est.detected as f64);
                // counterfactual: exclusions from TRUTH boxes (no crescents)
                let troi: Vec<crowd_core::Roi> = truths[i].truth.boxes.iter().map(|b| b.roi).collect();
                let tf = regress::extract_block_features(&fg, &edges, &pmap, &troi).unwrap();
                resid_truthbox.push(regress::estimate_count_regression(&resid_model, &tf));
            }
        }
        let mae = |v: &Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
        println!("bin [{lo},{hi}]: det MAE {:.2} | reg MAE {:.2} | fused MAE {:.2} | resid pred mean {:.2} true mean {:.2}",
            mae(&det_err), mae(&reg_err), mae(&fus_err),
            resid_pred.iter().sum::<f64>() / resid_pred.len() as f64,
            resid_true.iter().sum::<f64>() / resid_true.len() as f64);
        println!("    residual with truth-box exclusions: {:.2}",
            resid_truthbox.iter().sum::<f64>() / resid_truthbox.len() as f64);
    }
}
