//! Acceptance run: one PASS/FAIL line per criterion, then a hard assert.
//!
//! `cargo test -p vistr-core --test acceptance -- --nocapture` shows the lines.

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::{UnitQuaternion, Vector2, Vector3};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use vistr::eval::{
    evaluate_queries, generate_synthetic_scene, image_retrieval_database_bytes, EvalReport, SyntheticScene,
    SyntheticSceneConfig, RECALL_THRESHOLDS,
};
use vistr::geometry::{reproject, CameraIntrinsics, Point3, Pose};
use vistr::pose::{ransac_pnp, Correspondence, MatchMode, RansacConfig};
use vistr::retrieval::{radius_retrieve, sample_structure, voxel_downsample, RetrievalConfig, SpatialIndex};
use vistr::scene::{compute_norm_transform, NormTransform, SceneBundle, SfmPoint, DEFAULT_MARGIN};
use vistr::vae::{
    checkpoint_to_bytes, elbo_loss, kl_to_standard_normal, reconstruction_loglik, train, ElboBatch, LatentGaussian,
    TrainConfig, Vae, VaeArch, VaeModel,
};
use vistr::{Exec, Localizer};

struct Ledger {
    rows: Vec<(String, bool, String)>,
}

impl Ledger {
    fn record(&mut self, name: &str, pass: bool, detail: String) {
        println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
        self.rows.push((name.to_string(), pass, detail));
    }
}

fn secs(t: Instant) -> f64 {
    t.elapsed().as_secs_f64()
}

fn gradient_correctness(l: &mut Ledger) {
    let t = Instant::now();
    let arch = VaeArch { latent_dim: 2, width: 8, hidden_layers: 5, residual_layer: 2, lift_dim: 8 };
    let mut worst: f64 = 0.0;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let mut model = Vae::<f64>::random(arch, 6, NormTransform::identity(), 0.1, &mut rng);
        model.chol.lower = [rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1)];
        let (pairs, m) = (4, 3);
        let emb = Array2::from_shape_simple_fn((pairs, 6), || rng.random_range(-2.0..2.0));
        let pts = Array2::from_shape_simple_fn((pairs, 3), || rng.random_range(0.0..1.0));
        let eps = Array2::from_shape_simple_fn((pairs * m, 2), || rng.sample(StandardNormal));
        let batch = ElboBatch { embeddings: &emb, points: &pts, eps: &eps, samples: m };
        let beta = rng.random_range(0.0..1.0);
        let grad = elbo_loss(&model, &batch, beta, Exec::Sequential).unwrap().grad;
        let analytic: Vec<Vec<f64>> = grad.slices().iter().map(|s| s.to_vec()).collect();
        let scale = analytic.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
        let floor = 1e-6 + 1e-3 * scale;
        let h = 1e-5;
        for (si, slice) in analytic.iter().enumerate() {
            for (k, &a) in slice.iter().enumerate() {
                let mut plus = model.clone();
                plus.slices_mut()[si][k] += h;
                let mut minus = model.clone();
                minus.slices_mut()[si][k] -= h;
                let fp = elbo_loss(&plus, &batch, beta, Exec::Sequential).unwrap().loss;
                let fm = elbo_loss(&minus, &batch, beta, Exec::Sequential).unwrap().loss;
                let fd = (fp - fm) / (2.0 * h);
                worst = worst.max((a - fd).abs() / a.abs().max(fd.abs()).max(floor));
            }
        }
    }
    let elapsed = secs(t);
    l.record(
        "gradient correctness",
        worst < 1e-4 && elapsed < 60.0,
        format!("20 models, worst relative error {worst:.2e} (< 1e-4), {elapsed:.1} s"),
    );
}

/// KL(N(mu, var) || N(0, 1)) by composite Simpson over mu +- 14 sigma.
fn kl_by_quadrature(mu: f64, var: f64) -> f64 {
    let s = var.sqrt();
    let (a, b) = (mu - 14.0 * s, mu + 14.0 * s);
    let n = 20_000;
    let h = (b - a) / n as f64;
    let f = |z: f64| {
        let lq = -0.5 * ((z - mu) * (z - mu) / var + var.ln() + (2.0 * std::f64::consts::PI).ln());
        let lp = -0.5 * (z * z + (2.0 * std::f64::consts::PI).ln());
        lq.exp() * (lq - lp)
    };
    let mut sum = f(a) + f(b);
    for i in 1..n {
        sum += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    sum * h / 3.0
}

fn closed_forms(l: &mut Ledger) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst_kl: f64 = 0.0;
    for _ in 0..100 {
        let mu = rng.random_range(-3.0..3.0);
        let var: f64 = rng.random_range(0.05..5.0);
        let g = LatentGaussian { mean: vec![mu], log_var: vec![var.ln()] };
        worst_kl = worst_kl.max((kl_to_standard_normal(&g) - kl_by_quadrature(mu, var)).abs());
    }
    let half_log_2pi3 = 1.5 * (2.0 * std::f64::consts::PI).ln();
    let y = Point3::new(0.3, -0.2, 0.5);
    let id = nalgebra::Matrix3::identity();
    let cases = [
        (reconstruction_loglik(&y, &y, &id).unwrap(), -half_log_2pi3),
        (reconstruction_loglik(&y, &(y + Vector3::new(1.0, -1.0, 0.0)), &id).unwrap(), -half_log_2pi3 - 1.0),
        (reconstruction_loglik(&y, &y, &(id * 0.1)).unwrap(), -half_log_2pi3 - 1.5 * 0.01f64.ln()),
    ];
    let worst_ll = cases.iter().fold(0.0f64, |m, (got, want)| m.max((got - want).abs()));
    l.record(
        "closed-form KL",
        worst_kl < 1e-6,
        format!("100 draws, worst |closed form - quadrature| {worst_kl:.2e} (< 1e-6)"),
    );
    l.record(
        "closed-form log-likelihood",
        worst_ll < 1e-9,
        format!("3 hand-evaluated cases, worst error {worst_ll:.2e} (< 1e-9)"),
    );
}

fn point_bundle(points: &[Point3]) -> SceneBundle {
    let pts = points
        .iter()
        .enumerate()
        .map(|(i, &p)| SfmPoint { id: 10 + 2 * i as u64, position: p, descriptor: vec![1.0] })
        .collect();
    let norm = compute_norm_transform(points, DEFAULT_MARGIN).unwrap();
    SceneBundle::new(pts, Vec::new(), BTreeMap::new(), norm, 4, 1).unwrap()
}

fn brute_union(map: &[Point3], queries: &[Point3], r: f64) -> Vec<u64> {
    (0..map.len())
        .filter(|&i| queries.iter().any(|q| (map[i] - q).norm_squared() <= r * r))
        .map(|i| 10 + 2 * i as u64)
        .collect()
}

fn spatial_exactness(l: &mut Ledger) {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut equal = 0;
    for _ in 0..50 {
        let n = rng.random_range(1..=5000);
        let g = rng.random_range(1..=200);
        let map: Vec<Point3> = (0..n)
            .map(|_| Point3::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0), rng.random_range(-10.0..10.0)))
            .collect();
        let generated: Vec<Point3> = (0..g)
            .map(|_| Point3::new(rng.random_range(-60.0..60.0), rng.random_range(-60.0..60.0), rng.random_range(-12.0..12.0)))
            .collect();
        let r = rng.random_range(0.0..15.0);
        let voxel = if rng.random_bool(0.5) { 0.0 } else { rng.random_range(0.5..5.0) };
        let bundle = point_bundle(&map);
        let index = SpatialIndex::build(&map).unwrap();
        let got = radius_retrieve(&index, &bundle, &generated, r, voxel, Exec::default()).unwrap();
        let centres = if voxel > 0.0 { voxel_downsample(&generated, voxel).unwrap() } else { generated.clone() };
        if got.ids == brute_union(&map, &centres, r) {
            equal += 1;
        }
    }
    let elapsed = secs(t);
    l.record(
        "spatial-search exactness",
        equal == 50 && elapsed < 60.0,
        format!("{equal}/50 instances equal brute force, {elapsed:.1} s"),
    );
}

fn pnp_robustness(l: &mut Ledger) {
    let t = Instant::now();
    let k = CameraIntrinsics::from_fov(640, 480, 60.0);
    let mut ok = 0;
    for trial in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + trial);
        let rot = UnitQuaternion::from_euler_angles(
            rng.random_range(-0.5..0.5),
            rng.random_range(-3.1..3.1),
            rng.random_range(-0.3..0.3),
        );
        let truth = Pose::new(rot, Vector3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-2.0..2.0)));
        let mut corr = Vec::new();
        while corr.len() < 50 {
            let px = Vector2::new(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0));
            let depth = rng.random_range(2.0..20.0);
            let point = truth.camera_to_world(&Point3::from(k.bearing(&px) * depth));
            if let Some(pixel) = reproject(&point, &truth, &k).pixel() {
                corr.push(Correspondence { pixel, point });
            }
        }
        for _ in 0..50 {
            let px = Vector2::new(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0));
            let point = truth.camera_to_world(&Point3::new(rng.random_range(-8.0..8.0), rng.random_range(-6.0..6.0), rng.random_range(2.0..20.0)));
            corr.push(Correspondence { pixel: px, point });
        }
        let cfg = RansacConfig { seed: trial, ..RansacConfig::default() };
        if let Ok(out) = ransac_pnp(&corr, &k, &cfg, Exec::default()) {
            let (te, re) = vistr::eval::pose_errors(&out.pose, &truth);
            if out.success && te <= 1e-3 && re <= 0.01 {
                ok += 1;
            }
        }
    }
    let elapsed = secs(t);
    l.record(
        "PnP robustness",
        ok >= 99 && elapsed < 60.0,
        format!("{ok}/100 trials within 1e-3 m and 0.01 deg (>= 99), {elapsed:.1} s"),
    );
}

/// Radius used for the synthetic scenes, scaled to their extent.
fn scene_radius(cfg: &SyntheticSceneConfig) -> f64 {
    0.12 * cfg.extent
}

fn localizer<'a>(scene: &'a SyntheticScene, model: &'a VaeModel, index: &'a SpatialIndex, radius: f64) -> Localizer<'a> {
    Localizer {
        bundle: &scene.bundle,
        model,
        index,
        retrieval: RetrievalConfig { radius, ..RetrievalConfig::default() },
        ransac: RansacConfig::default(),
        matching: MatchMode::default(),
        exec: Exec::default(),
    }
}

fn end_to_end(l: &mut Ledger) {
    let t = Instant::now();
    let scfg = SyntheticSceneConfig::default();
    let scene = generate_synthetic_scene(&scfg).unwrap();
    let tcfg = TrainConfig::desk();
    let trained = train(&scene.bundle, &tcfg, Exec::default()).map_err(|a| a.error).unwrap();
    let window = 1000 / tcfg.log_every;
    let mean = |rs: &[vistr::vae::LogRecord]| rs.iter().map(|r| r.loss).sum::<f64>() / rs.len() as f64;
    let first = mean(&trained.log[..window]);
    let last = mean(&trained.log[trained.log.len() - window..]);
    let index = SpatialIndex::build(&scene.bundle.positions()).unwrap();
    let radius = scene_radius(&scfg);
    let loc = localizer(&scene, &trained.model, &index, radius);
    let (records, _) = evaluate_queries(&loc, &scene.queries, |id| scene.query_visible.get(&id).cloned()).unwrap();
    let report = EvalReport::new(records, None).unwrap();
    let ret = report.mean_retrieval.unwrap();
    let loosest = *report.recall.last().unwrap();
    let (lt, lr) = RECALL_THRESHOLDS[RECALL_THRESHOLDS.len() - 1];
    let elapsed = secs(t);
    println!(
        "     scene: {} points, {} mapping images, {} queries, D_e = {}, {} iterations, r = {radius} m, {elapsed:.0} s",
        scene.bundle.points().len(),
        scene.bundle.images().len(),
        scene.queries.len(),
        scene.bundle.embedding_dim(),
        tcfg.iterations
    );
    l.record("end-to-end (a) loss decreases", last < first, format!("first-1k mean {first:.4}, last-1k mean {last:.4}"));
    l.record(
        "end-to-end (b) retrieval",
        ret.recall >= 0.8 && ret.reduction <= 0.35,
        format!("mean recall {:.3} (>= 0.8), mean reduction {:.3} (<= 0.35)", ret.recall, ret.reduction),
    );
    l.record(
        "end-to-end (c) localisation recall",
        loosest >= 0.9,
        format!("recall at ({lt} m, {lr} deg) {loosest:.3} (>= 0.9)"),
    );
    l.record(
        "end-to-end (d) median translation",
        report.median_t <= 0.01 * scfg.extent,
        format!("median {:.4} m (<= {} m), median rotation {:.4} deg", report.median_t, 0.01 * scfg.extent, report.median_r),
    );
    l.record("end-to-end runtime", elapsed < 900.0, format!("{elapsed:.0} s (< 900 s)"));
}

fn constant_storage(l: &mut Ledger) {
    let scene = generate_synthetic_scene(&SyntheticSceneConfig {
        points: 2000,
        cameras: 1200,
        ..SyntheticSceneConfig::default()
    })
    .unwrap();
    let big = scene.bundle.with_images(|_| true).unwrap();
    let first: Vec<u64> = scene.bundle.images().iter().take(100).map(|im| im.id).collect();
    let small = scene.bundle.with_images(|im| first.contains(&im.id)).unwrap();
    let cfg = TrainConfig { iterations: 50, log_every: 10, ..TrainConfig::desk() };
    let size = |b: &SceneBundle| {
        let m = train(b, &cfg, Exec::default()).map_err(|a| a.error).unwrap().model;
        checkpoint_to_bytes(&m, &cfg).len()
    };
    let (s_small, s_big) = (size(&small), size(&big));
    let de = scene.bundle.embedding_dim();
    let (b100, b550, b1000) = (
        image_retrieval_database_bytes(100, de),
        image_retrieval_database_bytes(550, de),
        image_retrieval_database_bytes(1000, de),
    );
    l.record(
        "constant storage",
        small.images().len() == 100 && big.images().len() == 1000 && s_small == s_big,
        format!("checkpoint {s_small} B with 100 images, {s_big} B with 1000 images"),
    );
    l.record(
        "baseline storage grows linearly",
        b1000 - b550 == b550 - b100 && b1000 > b100,
        format!("image database {b100} / {b550} / {b1000} B for 100 / 550 / 1000 images"),
    );
}

fn latency(l: &mut Ledger) {
    let scfg = SyntheticSceneConfig { points: 100_000, ..SyntheticSceneConfig::default() };
    let scene = generate_synthetic_scene(&scfg).unwrap();
    let index = SpatialIndex::build(&scene.bundle.positions()).unwrap();
    let tcfg = TrainConfig { iterations: 4000, kl_warmup_start: 1000, ..TrainConfig::desk() };
    let trained = train(&scene.bundle, &tcfg, Exec::default()).map_err(|a| a.error).unwrap();
    let loc = localizer(&scene, &trained.model, &index, scene_radius(&scfg));
    let queries = &scene.queries[..10];
    let (records, _) = evaluate_queries(&loc, queries, |_| None).unwrap();
    let lookup_ms = records.iter().map(|r| r.timings.expect("timed").tree_lookup_us).sum::<f64>() / records.len() as f64 / 1e3;
    let desk_decode_ms = records.iter().map(|r| r.timings.expect("timed").global_search_us).sum::<f64>() / records.len() as f64 / 1e3;
    // Decoder cost at the full-width architecture.
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let full = VaeModel::random(VaeArch::default(), scene.bundle.embedding_dim(), *scene.bundle.norm(), 0.1, &mut rng);
    let mut decode_ms = 0.0;
    for q in queries {
        let t = Instant::now();
        sample_structure(&full, &q.features.embedding, 1000, 0).unwrap();
        decode_ms += secs(t) * 1e3;
    }
    decode_ms /= queries.len() as f64;
    let total = decode_ms + lookup_ms;
    l.record(
        "latency",
        total < 100.0,
        format!(
            "100k points, 1000 samples: decoder {decode_ms:.1} ms (width 512; desk model {desk_decode_ms:.1} ms) + lookup {lookup_ms:.1} ms = {total:.1} ms (< 100 ms)"
        ),
    );
}

fn determinism(l: &mut Ledger) {
    let run = |exec: Exec| {
        let scfg = SyntheticSceneConfig { points: 1500, cameras: 60, ..SyntheticSceneConfig::default() };
        let scene = generate_synthetic_scene(&scfg).unwrap();
        let cfg = TrainConfig { iterations: 300, kl_warmup_start: 100, kl_warmup_period: 50, ..TrainConfig::desk() };
        let model = train(&scene.bundle, &cfg, exec).map_err(|a| a.error).unwrap().model;
        let index = SpatialIndex::build(&scene.bundle.positions()).unwrap();
        let mut loc = localizer(&scene, &model, &index, scene_radius(&scfg));
        loc.exec = exec;
        let (_, est) = evaluate_queries(&loc, &scene.queries, |_| None).unwrap();
        let ids: Vec<u64> = scene.queries.iter().map(|q| q.features.id).collect();
        (
            vistr::scene::scene_bundle_to_bytes(&scene.bundle),
            checkpoint_to_bytes(&model, &cfg),
            vistr::eval::format_pose_records(&ids, &est),
        )
    };
    let a = run(Exec::default());
    let b = run(Exec::default());
    let c = run(Exec::Sequential);
    l.record(
        "determinism",
        a == b && a == c,
        format!(
            "scene, checkpoint and poses identical across repeated runs: {}; sequential vs default: {}",
            a == b,
            a == c
        ),
    );
}

#[test]
fn acceptance() {
    let mut l = Ledger { rows: Vec::new() };
    gradient_correctness(&mut l);
    closed_forms(&mut l);
    spatial_exactness(&mut l);
    pnp_robustness(&mut l);
    end_to_end(&mut l);
    constant_storage(&mut l);
    latency(&mut l);
    determinism(&mut l);
    let failed: Vec<&str> = l.rows.iter().filter(|r| !r.1).map(|r| r.0.as_str()).collect();
    println!("{} of {} criteria pass", l.rows.len() - failed.len(), l.rows.len());
    assert!(failed.is_empty(), "failing criteria: {failed:?}");
}
