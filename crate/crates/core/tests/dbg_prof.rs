use crowd_core::detect::{self, compute_channels, Plane};
use crowd_core::segment::{edge_map, BackgroundModel, SegmentationConfig};
use crowd_core::synth::{generate, Scenario, ScenarioSpec};

#[test]
fn dbg_prof() {
    let (frames, _) = generate(&ScenarioSpec { duration_s: 2.0, ..ScenarioSpec::new(Scenario::DenseCrowd, 60, 31) }).unwrap();
    let f = &frames[30];
    let n = 30;

    let mut bg = BackgroundModel::new(704, 576, SegmentationConfig::default());
    bg.update_and_segment(&frames[0]).unwrap();
    let t = std::time::Instant::now();
    for _ in 0..n { bg.update_and_segment(f).unwrap(); }
    println!("segment: {:.2} ms", t.elapsed().as_secs_f64() * 1000.0 / n as f64);

    let t = std::time::Instant::now();
    for _ in 0..n { edge_map(f, 80); }
    println!("edges:   {:.2} ms", t.elapsed().as_secs_f64() * 1000.0 / n as f64);

    let plane = Plane::from(f);
    let t = std::time::Instant::now();
    for _ in 0..n { compute_channels(&plane, 4); }
    println!("channels full-res: {:.2} ms", t.elapsed().as_secs_f64() * 1000.0 / n as f64);

    let cfg = detect::DetectorConfig::default();
    let scales = detect::default_scales(576, &cfg);
    let t = std::time::Instant::now();
    for s in &scales {
        let lw = (704.0 / s).round() as usize;
        let lh = (576.0 / s).round() as usize;
        let t2 = std::time::Instant::now();
        let level = plane.resize(lw, lh);
        let rt = t2.elapsed();
        let t2 = std::time::Instant::now();
        compute_channels(&level, 4);
        println!("  level s={s:.2} {lw}x{lh}: resize {:.2} ms channels {:.2} ms", rt.as_secs_f64()*1000.0, t2.elapsed().as_secs_f64()*1000.0);
    }
    println!("pyramid total: {:.2} ms", t.elapsed().as_secs_f64() * 1000.0);
}
