use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use vistr::eval::{
    evaluate_queries, format_pose_records, frustum_visible, generate_synthetic_scene, parse_pose_records,
    retrieval_metrics, storage_report, timing_report, EvalReport, PoseRecord,
};
use vistr::pose::{load_queries, parse_query_text, save_queries, Query};
use vistr::retrieval::{retrieve as retrieve_submap, SpatialIndex};
use vistr::scene::text::parse_scene_text;
use vistr::scene::{load_scene_bundle, save_scene_bundle, SceneBundle};
use vistr::vae::{format_training_log, load_model_for, save_model, train as train_model, VaeModel};
use vistr::{Error, Exec, Localizer};

use crate::config::RunConfig;
use crate::{BenchArgs, EvalArgs, Failure, GenSceneArgs, ImportArgs, LocalizeArgs, RetrievalFlags, RetrieveArgs, TrainArgs};

pub fn setup_threads(threads: usize) -> Result<Exec, Failure> {
    #[cfg(feature = "parallel")]
    {
        if threads > 0 {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build_global()
                .map_err(|e| Failure::Config(format!("thread pool: {e}")))?;
        }
        Ok(if threads == 1 { Exec::Sequential } else { Exec::Parallel })
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
        Ok(Exec::Sequential)
    }
}

fn pick(flag: Option<PathBuf>, file: &Option<PathBuf>) -> Option<PathBuf> {
    flag.or_else(|| file.clone())
}

fn require(path: Option<PathBuf>, flag: &str, key: &str) -> Result<PathBuf, Failure> {
    path.ok_or_else(|| Failure::Config(format!("missing path: pass --{flag} or set paths.{key}")))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| Failure::Lib(Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))))
}

fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Lib(Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))))
}

fn with_path<T>(path: &Path, r: vistr::Result<T>) -> Result<T, Failure> {
    r.map_err(|e| match e {
        Error::Io(io) => Failure::Lib(Error::Io(std::io::Error::new(io.kind(), format!("{}: {io}", path.display())))),
        other => Failure::Lib(other),
    })
}

fn apply_retrieval(cfg: &mut RunConfig, f: &RetrievalFlags) {
    if let Some(v) = f.samples {
        cfg.retrieval.samples = v;
    }
    if let Some(v) = f.radius {
        cfg.retrieval.radius = v;
    }
    if let Some(v) = f.voxel {
        cfg.retrieval.voxel = v;
    }
}

/// Checks every query against the bundle's cameras and dimensions.
fn check_queries(bundle: &SceneBundle, queries: &[Query]) -> Result<(), Failure> {
    for q in queries {
        let f = &q.features;
        if f.embedding.len() != bundle.embedding_dim() || f.descriptor_dim != bundle.descriptor_dim() {
            return Err(Error::Shape(format!(
                "query {} has dims ({}, {}), bundle has ({}, {})",
                f.id,
                f.embedding.len(),
                f.descriptor_dim,
                bundle.embedding_dim(),
                bundle.descriptor_dim()
            ))
            .into());
        }
        let k = bundle
            .camera(f.intrinsics_id)
            .ok_or_else(|| Error::Integrity(format!("query {} uses unknown camera {}", f.id, f.intrinsics_id)))?;
        f.validate(k)?;
    }
    Ok(())
}

struct Loaded {
    bundle: SceneBundle,
    model: VaeModel,
    queries: Vec<Query>,
}

fn load_all(model: PathBuf, bundle: PathBuf, queries: PathBuf) -> Result<Loaded, Failure> {
    let b = with_path(&bundle, load_scene_bundle(&bundle))?;
    let m = with_path(&model, load_model_for(&model, b.embedding_dim()))?;
    let q = with_path(&queries, load_queries(&queries))?;
    check_queries(&b, &q)?;
    Ok(Loaded { bundle: b, model: m, queries: q })
}

fn localizer<'a>(cfg: &RunConfig, l: &'a Loaded, index: &'a SpatialIndex, exec: Exec) -> Localizer<'a> {
    Localizer {
        bundle: &l.bundle,
        model: &l.model,
        index,
        retrieval: cfg.retrieval.to_config(cfg.seed),
        ransac: cfg.ransac.to_config(cfg.seed),
        matching: cfg.matching.to_mode(),
        exec,
    }
}

pub fn import(cfg: RunConfig, a: ImportArgs) -> Result<(), Failure> {
    let scene_text = pick(a.scene_text, &cfg.paths.scene_text);
    let query_text = pick(a.query_text, &cfg.paths.query_text);
    if scene_text.is_none() && query_text.is_none() {
        return Err(Failure::Config("nothing to import: pass --scene-text and/or --query-text".into()));
    }
    let mut bundle = None;
    if let Some(src) = scene_text {
        let out = require(pick(a.bundle.clone(), &cfg.paths.bundle), "bundle", "bundle")?;
        let b = with_path(&src, parse_scene_text(&read_text(&src)?))?;
        with_path(&out, save_scene_bundle(&b, &out))?;
        println!("points={} images={} cameras={}", b.points().len(), b.images().len(), b.intrinsics().len());
        bundle = Some(b);
    }
    if let Some(src) = query_text {
        let out = require(pick(a.queries, &cfg.paths.queries), "queries", "queries")?;
        let q = with_path(&src, parse_query_text(&read_text(&src)?))?;
        let reference = match bundle {
            Some(b) => Some(b),
            None => match pick(a.bundle, &cfg.paths.bundle) {
                Some(p) if p.exists() => Some(with_path(&p, load_scene_bundle(&p))?),
                _ => None,
            },
        };
        if let Some(b) = &reference {
            check_queries(b, &q)?;
        }
        with_path(&out, save_queries(&q, &out))?;
        println!("queries={}", q.len());
    }
    Ok(())
}

pub fn gen_scene(mut cfg: RunConfig, a: GenSceneArgs) -> Result<(), Failure> {
    if let Some(v) = a.points {
        cfg.scene.points = v;
    }
    if let Some(v) = a.cameras {
        cfg.scene.cameras = v;
    }
    if let Some(v) = a.embedding_dim {
        cfg.scene.embedding_dim = v;
    }
    let bundle_path = require(pick(a.bundle, &cfg.paths.bundle), "bundle", "bundle")?;
    let query_path = require(pick(a.queries, &cfg.paths.queries), "queries", "queries")?;
    let scene = generate_synthetic_scene(&cfg.scene.to_config(cfg.seed))?;
    with_path(&bundle_path, save_scene_bundle(&scene.bundle, &bundle_path))?;
    with_path(&query_path, save_queries(&scene.queries, &query_path))?;
    println!(
        "points={} images={} queries={} extent={}",
        scene.bundle.points().len(),
        scene.bundle.images().len(),
        scene.queries.len(),
        scene.bundle.extent()
    );
    Ok(())
}

pub fn train(mut cfg: RunConfig, a: TrainArgs, exec: Exec) -> Result<(), Failure> {
    if let Some(v) = a.iterations {
        cfg.train.iterations = v;
    }
    let bundle_path = require(pick(a.bundle, &cfg.paths.bundle), "bundle", "bundle")?;
    let model_path = require(pick(a.model, &cfg.paths.model), "model", "model")?;
    let log_path = pick(a.log, &cfg.paths.train_log);
    let bundle = with_path(&bundle_path, load_scene_bundle(&bundle_path))?;
    let tcfg = cfg.train.to_config(cfg.seed);
    match train_model(&bundle, &tcfg, exec) {
        Ok(t) => {
            with_path(&model_path, save_model(&t.model, &tcfg, &model_path))?;
            if let Some(p) = log_path {
                write(&p, format_training_log(&t.log))?;
            }
            if let Some(last) = t.log.last() {
                println!("iterations={} loss={:.6} parameters={}", last.iter, last.loss, t.model.parameter_count());
            }
            Ok(())
        }
        Err(abort) => {
            let mut saved = model_path.into_os_string();
            saved.push(".last-good");
            let saved = PathBuf::from(saved);
            with_path(&saved, save_model(&abort.last_good, &tcfg, &saved))?;
            if let Some(p) = log_path {
                write(&p, format_training_log(&abort.log))?;
            }
            Err(Failure::Training { error: abort.error, saved: Some(saved) })
        }
    }
}

/// Ground-truth visible point ids for a query with a known pose, ascending.
fn visible_ids(bundle: &SceneBundle, q: &Query) -> Option<Vec<u64>> {
    let gt = q.ground_truth.as_ref()?;
    let k = bundle.camera(q.features.intrinsics_id)?;
    let mut ids: Vec<u64> = frustum_visible(bundle.points(), gt, k, None).iter().map(|&i| bundle.points()[i].id).collect();
    ids.sort_unstable();
    Some(ids)
}

pub fn retrieve(mut cfg: RunConfig, a: RetrieveArgs, exec: Exec) -> Result<(), Failure> {
    apply_retrieval(&mut cfg, &a.retrieval);
    if a.query_id.is_some() {
        cfg.retrieval.query = a.query_id;
    }
    let l = load_all(
        require(pick(a.model, &cfg.paths.model), "model", "model")?,
        require(pick(a.bundle, &cfg.paths.bundle), "bundle", "bundle")?,
        require(pick(a.queries, &cfg.paths.queries), "queries", "queries")?,
    )?;
    let q = match cfg.retrieval.query {
        Some(id) => l
            .queries
            .iter()
            .find(|q| q.features.id == id)
            .ok_or_else(|| Error::Integrity(format!("no query with id {id}")))?,
        None => l.queries.first().ok_or_else(|| Error::InvalidArgument("query file is empty".into()))?,
    };
    let index = SpatialIndex::build(&l.bundle.positions())?;
    let rcfg = cfg.retrieval.to_config(cfg.seed);
    let (generated, submap) = retrieve_submap(&l.model, &index, &l.bundle, &q.features.embedding, &rcfg, exec)?;
    let mut line = format!(
        "query={} samples={} radius={} voxel={} submap={} map={}",
        q.features.id,
        rcfg.samples,
        rcfg.radius,
        rcfg.voxel,
        submap.len(),
        l.bundle.points().len()
    );
    if let Some(vis) = visible_ids(&l.bundle, q).filter(|v| !v.is_empty()) {
        let m = retrieval_metrics(&submap.ids, &vis, l.bundle.points().len())?;
        write!(line, " recall={:.4} precision={:.4} reduction={:.4}", m.recall, m.precision, m.reduction).unwrap();
    }
    println!("{line}");
    if let Some(p) = pick(a.submap, &cfg.paths.submap) {
        let mut s = String::from("# generated x y z\n# point id x y z\n");
        for g in &generated.points {
            writeln!(s, "generated {:?} {:?} {:?}", g.x, g.y, g.z).unwrap();
        }
        for (id, pos) in submap.ids.iter().zip(&submap.positions) {
            writeln!(s, "point {id} {:?} {:?} {:?}", pos.x, pos.y, pos.z).unwrap();
        }
        write(&p, s)?;
    }
    Ok(())
}

pub fn localize(mut cfg: RunConfig, a: LocalizeArgs, exec: Exec) -> Result<(), Failure> {
    apply_retrieval(&mut cfg, &a.retrieval);
    if let Some(v) = a.threshold {
        cfg.ransac.threshold = v;
    }
    let l = load_all(
        require(pick(a.model, &cfg.paths.model), "model", "model")?,
        require(pick(a.bundle, &cfg.paths.bundle), "bundle", "bundle")?,
        require(pick(a.queries, &cfg.paths.queries), "queries", "queries")?,
    )?;
    let poses = require(pick(a.poses, &cfg.paths.poses), "poses", "poses")?;
    let index = SpatialIndex::build(&l.bundle.positions())?;
    let loc = localizer(&cfg, &l, &index, exec);
    let (records, estimates) = evaluate_queries(&loc, &l.queries, |_| None)?;
    let ids: Vec<u64> = l.queries.iter().map(|q| q.features.id).collect();
    write(&poses, format_pose_records(&ids, &estimates))?;
    if let Some(p) = pick(a.timings, &cfg.paths.timings) {
        let mut s = String::from("# id global_us lookup_us matching_us pose_us\n");
        for (id, e) in ids.iter().zip(&estimates) {
            let t = e.timings;
            writeln!(s, "{id} {:.1} {:.1} {:.1} {:.1}", t.global_search_us, t.tree_lookup_us, t.matching_us, t.pose_us)
                .unwrap();
        }
        write(&p, s)?;
    }
    let ok = estimates.iter().filter(|e| e.success).count();
    let scored = records.iter().filter(|r| r.success).count();
    println!("queries={} localised={ok} with_ground_truth={scored}", ids.len());
    Ok(())
}

pub fn eval(cfg: RunConfig, a: EvalArgs) -> Result<(), Failure> {
    let poses_path = require(pick(a.poses, &cfg.paths.poses), "poses", "poses")?;
    let query_path = require(pick(a.queries, &cfg.paths.queries), "queries", "queries")?;
    let poses = with_path(&poses_path, parse_pose_records(&read_text(&poses_path)?))?;
    let queries = with_path(&query_path, load_queries(&query_path))?;
    let gt: BTreeMap<u64, Option<_>> = queries.iter().map(|q| (q.features.id, q.ground_truth)).collect();
    let mut by_id = BTreeMap::new();
    for p in poses {
        if !gt.contains_key(&p.id) {
            return Err(Error::Integrity(format!("pose record for unknown query {}", p.id)).into());
        }
        if by_id.insert(p.id, p).is_some() {
            return Err(Error::Integrity("duplicate pose record".into()).into());
        }
    }
    // Queries without a record count as failures.
    let records = gt
        .iter()
        .map(|(&id, g)| {
            by_id
                .get(&id)
                .cloned()
                .unwrap_or(PoseRecord { id, pose: None, submap_size: 0, matches: 0, inliers: 0 })
                .score(g.as_ref())
        })
        .collect();
    let storage = match (pick(a.model, &cfg.paths.model), pick(a.bundle, &cfg.paths.bundle)) {
        (Some(m), Some(b)) => {
            let bundle = with_path(&b, load_scene_bundle(&b))?;
            let model = with_path(&m, load_model_for(&m, bundle.embedding_dim()))?;
            let index = SpatialIndex::build(&bundle.positions())?;
            Some(storage_report(&model, &bundle, &index))
        }
        _ => None,
    };
    let report = EvalReport::new(records, storage)?;
    let text = report.to_text();
    print!("{text}");
    if let Some(p) = pick(a.report, &cfg.paths.report) {
        write(&p, &text)?;
        write(&suffixed(&p, ".records"), report.to_records())?;
        let cdf = format!(
            "# translation_m fraction\n{}\n# rotation_deg fraction\n{}",
            report.translation_cdf(),
            report.rotation_cdf()
        );
        write(&suffixed(&p, ".cdf"), cdf)?;
    }
    Ok(())
}

fn suffixed(p: &Path, suffix: &str) -> PathBuf {
    let mut s = p.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn bench(mut cfg: RunConfig, a: BenchArgs, exec: Exec) -> Result<(), Failure> {
    apply_retrieval(&mut cfg, &a.retrieval);
    if let Some(v) = a.repeat {
        cfg.bench.repeat = v;
    }
    if cfg.bench.repeat == 0 {
        return Err(Error::InvalidArgument("bench.repeat must be positive".into()).into());
    }
    let l = load_all(
        require(pick(a.model, &cfg.paths.model), "model", "model")?,
        require(pick(a.bundle, &cfg.paths.bundle), "bundle", "bundle")?,
        require(pick(a.queries, &cfg.paths.queries), "queries", "queries")?,
    )?;
    let index = SpatialIndex::build(&l.bundle.positions())?;
    let loc = localizer(&cfg, &l, &index, exec);
    let mut timings = Vec::new();
    for _ in 0..cfg.bench.repeat {
        for q in &l.queries {
            timings.push(loc.localize(&q.features)?.0.timings);
        }
    }
    let report = timing_report(&timings)?;
    println!(
        "map={} samples={} radius={} voxel={} runs={} exec={}",
        l.bundle.points().len(),
        cfg.retrieval.samples,
        cfg.retrieval.radius,
        cfg.retrieval.voxel,
        report.count,
        if exec.is_parallel() { "parallel" } else { "sequential" }
    );
    print!("{}", report.to_table());
    Ok(())
}
