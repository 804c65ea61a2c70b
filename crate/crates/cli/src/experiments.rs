//! One function per experiment. Each writes its artifacts under the run's
//! output directory and returns the rows that go into `results.csv`.

use std::fmt::Display;
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use ndarray::Array2;
use pct_core::coherence::{
    dc_exact, dc_exact_features, dc_minibatch_samples, is_absolutely_coherent, mean_and_stderr,
    probe_order_preservation, probe_rank_preservation, rate_fit, ThetaProbeResult,
};
use pct_core::datasets::{format_pointset, gen_gaussian_clusters, gen_two_moons, PointSet};
use pct_core::eval::{mean_row_spearman, pearson, retrieve_eval};
use pct_core::metric::{pairwise, Metric};
use pct_core::nn::save_checkpoint;
use pct_core::ranking::empirical_cdf;
use pct_core::rng::{stream, stream_rng};
use pct_core::transfer::{train_teacher, transfer_and_probe, transfer_configuration, Snapshot, TransferTrace};
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::config::{Experiment, RunConfig};
use crate::results::{format_results, MetricName as M, ResultRow};
use crate::svg::emit_svg;

fn rt<E: Display>(e: E) -> String {
    e.to_string()
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), String> {
    fs::write(path, contents).map_err(|e| format!("{}: {e}", path.display()))
}

fn mkdir(path: &Path) -> Result<(), String> {
    fs::create_dir_all(path).map_err(|e| format!("{}: {e}", path.display()))
}

/// Number of worker threads: the requested jobs, capped by `PCT_THREADS`.
pub fn worker_count(requested: usize) -> usize {
    let cap = std::env::var("PCT_THREADS").ok().and_then(|v| v.parse::<usize>().ok()).filter(|&v| v > 0);
    requested.min(cap.unwrap_or(usize::MAX)).max(1)
}

/// Applies `f` to every item on up to `jobs` threads; results keep input order.
fn parallel_map<T, R, F>(items: &[T], jobs: usize, f: F) -> Result<Vec<R>, String>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Result<R, String> + Sync,
{
    let jobs = jobs.min(items.len()).max(1);
    if jobs == 1 {
        return items.iter().map(&f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<R, String>>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                *slots[i].lock().unwrap() = Some(f(&items[i]));
            });
        }
    });
    slots.into_iter().map(|s| s.into_inner().unwrap().expect("every item ran")).collect()
}

/// Runs the experiment, writing `resolved_config.json`, `results.csv` and its artifacts.
pub fn run(cfg: &RunConfig, jobs: usize) -> Result<Vec<ResultRow>, String> {
    let out = cfg.output_dir.as_path();
    mkdir(out)?;
    write(&out.join("resolved_config.json"), cfg.to_json())?;
    let jobs = worker_count(jobs);
    let rows = match cfg.experiment {
        Experiment::Toy2d | Experiment::Toy3d => toy(cfg, out)?,
        Experiment::Stylized => stylized(cfg, out)?,
        Experiment::AblateBatch => ablate_batch(cfg, out, jobs)?,
        Experiment::AblateWidth => ablate_width(cfg, out, jobs)?,
        Experiment::RateCheck => rate_check(cfg, jobs)?,
        Experiment::ProbeTheorems => probe_theorems(cfg)?,
        Experiment::Retrieve => retrieve(cfg)?,
    };
    write(&out.join("results.csv"), format_results(&rows))?;
    Ok(rows)
}

fn toy_teacher(cfg: &RunConfig) -> Result<PointSet, String> {
    match cfg.experiment {
        Experiment::Toy3d => {
            let c = cfg.clusters();
            gen_gaussian_clusters(c.clusters, c.n_points, c.dim, c.spread, c.centers_scale, cfg.seed).map_err(rt)
        }
        _ => {
            let m = cfg.moons();
            gen_two_moons(m.n_points, m.noise, cfg.seed).map_err(rt)
        }
    }
}

fn row_spearman(teacher: &PointSet, student: &PointSet) -> Result<f64, String> {
    let e = Metric::euclidean();
    let d1 = pairwise(teacher.points.view(), e).map_err(rt)?;
    let d2 = pairwise(student.points.view(), e).map_err(rt)?;
    mean_row_spearman(d1.view(), d2.view()).map_err(rt)
}

fn final_loss(trace: &TransferTrace) -> f64 {
    *trace.epoch_loss.last().expect("at least one epoch")
}

fn toy(cfg: &RunConfig, out: &Path) -> Result<Vec<ResultRow>, String> {
    let e = cfg.experiment;
    let spec = cfg.transfer();
    let teacher = toy_teacher(cfg)?;
    let student_dim = spec.student_dim.unwrap_or(2);
    let (student, trace) =
        transfer_configuration(&teacher, student_dim, &spec.to_core(cfg.seed, None)).map_err(rt)?;

    write(&out.join("trace.csv"), trace.to_csv())?;
    write(&out.join("teacher.pts"), format_pointset(&teacher))?;
    write(&out.join("student.pts"), format_pointset(&student))?;
    let mut rows = Vec::new();
    for c in &trace.checkpoints {
        if let Snapshot::Configuration(coords) = &c.snapshot {
            let snap = PointSet::new(coords.clone(), teacher.labels.clone(), cfg.seed, "student").map_err(rt)?;
            write(&out.join(format!("student.ckpt.{}", c.epoch)), format_pointset(&snap))?;
            if student_dim == 2 {
                emit_svg(&teacher, &snap, c.epoch, &out.join(format!("snapshot_{}.svg", c.epoch)))?;
            }
        }
        rows.push(ResultRow::new(e, M::CheckpointPhi, c.phi).meta("epoch", c.epoch));
    }
    rows.push(ResultRow::new(e, M::GlobalPhi, trace.final_phi));
    rows.push(ResultRow::new(e, M::Dc, 1.0 - trace.final_phi));
    rows.push(ResultRow::new(e, M::RowSpearman, row_spearman(&teacher, &student)?));
    rows.push(ResultRow::new(e, M::FinalLoss, final_loss(&trace)));
    rows.push(ResultRow::new(e, M::TeacherTies, f64::from(u8::from(trace.teacher_ties))));
    Ok(rows)
}

fn stylized(cfg: &RunConfig, out: &Path) -> Result<Vec<ResultRow>, String> {
    let e = cfg.experiment;
    let sc = cfg.stylized_config();
    let teacher = train_teacher(&sc).map_err(rt)?;
    save_checkpoint(&teacher.net, 0, out.join("teacher.ckpt")).map_err(rt)?;
    let (probes, trace) = transfer_and_probe(&teacher, &sc, sc.hidden).map_err(rt)?;
    write(&out.join("trace.csv"), trace.to_csv())?;
    for c in &trace.checkpoints {
        if let Snapshot::Network(net) = &c.snapshot {
            save_checkpoint(net, c.epoch as u64, out.join(format!("student.ckpt.{}", c.epoch))).map_err(rt)?;
        }
    }

    let mut rows = vec![
        ResultRow::new(e, M::TeacherTrainAcc, teacher.train_accuracy),
        ResultRow::new(e, M::TeacherTestAcc, teacher.test_accuracy),
    ];
    for p in &probes {
        rows.push(ResultRow::new(e, M::CheckpointPhi, p.phi).meta("epoch", p.epoch));
        rows.push(ResultRow::new(e, M::ProbeAcc, p.accuracy).meta("epoch", p.epoch));
    }
    let phis: Vec<f64> = probes.iter().map(|p| p.phi).collect();
    let accs: Vec<f64> = probes.iter().map(|p| p.accuracy).collect();
    // Constant phis or accuracies leave the correlation undefined; the row is then omitted.
    if let Ok(r) = pearson(&phis, &accs) {
        rows.push(ResultRow::new(e, M::PearsonR, r).meta("n", probes.len()));
    }
    rows.push(ResultRow::new(e, M::GlobalPhi, trace.final_phi));
    rows.push(ResultRow::new(e, M::FinalLoss, final_loss(&trace)));
    Ok(rows)
}

fn ablate_batch(cfg: &RunConfig, out: &Path, jobs: usize) -> Result<Vec<ResultRow>, String> {
    let e = cfg.experiment;
    let spec = cfg.transfer();
    let teacher = toy_teacher(cfg)?;
    let batches = cfg.batch_sizes.clone().expect("validated config has batch sizes");
    let per_batch = parallel_map(&batches, jobs, |&b| {
        let dir = out.join(format!("batch_{b}"));
        mkdir(&dir)?;
        let (student, trace) =
            transfer_configuration(&teacher, spec.student_dim.unwrap_or(2), &spec.to_core(cfg.seed, Some(b)))
                .map_err(rt)?;
        write(&dir.join("trace.csv"), trace.to_csv())?;
        write(&dir.join("student.pts"), format_pointset(&student))?;
        Ok(vec![
            ResultRow::new(e, M::GlobalPhi, trace.final_phi).meta("batch", b),
            ResultRow::new(e, M::RowSpearman, row_spearman(&teacher, &student)?).meta("batch", b),
            ResultRow::new(e, M::FinalLoss, final_loss(&trace)).meta("batch", b),
        ])
    })?;
    Ok(per_batch.into_iter().flatten().collect())
}

fn ablate_width(cfg: &RunConfig, out: &Path, jobs: usize) -> Result<Vec<ResultRow>, String> {
    let e = cfg.experiment;
    let mut sc = cfg.stylized_config();
    sc.transfer.checkpoint_every = 0;
    let teacher = train_teacher(&sc).map_err(rt)?;
    let widths = cfg.widths.clone().expect("validated config has widths");
    let per_width = parallel_map(&widths, jobs, |&w| {
        let dir = out.join(format!("width_{w}"));
        mkdir(&dir)?;
        let (probes, trace) = transfer_and_probe(&teacher, &sc, w).map_err(rt)?;
        write(&dir.join("trace.csv"), trace.to_csv())?;
        Ok(vec![
            ResultRow::new(e, M::GlobalPhi, trace.final_phi).meta("hidden", w),
            ResultRow::new(e, M::ProbeAcc, probes[0].accuracy).meta("hidden", w),
        ])
    })?;
    let mut rows = vec![
        ResultRow::new(e, M::TeacherTrainAcc, teacher.train_accuracy),
        ResultRow::new(e, M::TeacherTestAcc, teacher.test_accuracy),
    ];
    rows.extend(per_width.into_iter().flatten());
    Ok(rows)
}

fn rate_check(cfg: &RunConfig, jobs: usize) -> Result<Vec<ResultRow>, String> {
    let e = cfg.experiment;
    let c = cfg.clusters();
    let rate = cfg.rate.clone().expect("validated config has a rate section");
    let x1 = gen_gaussian_clusters(c.clusters, c.n_points, 2, c.spread, c.centers_scale, cfg.seed).map_err(rt)?.points;
    let mut x2 = x1.clone();
    for mut r in x2.rows_mut() {
        let (a, b) = rate.distortion.apply(r[0], r[1]);
        r[0] = a;
        r[1] = b;
    }
    let metrics = (Metric::euclidean(), Metric::euclidean());
    let exact = dc_exact_features(x1.view(), x2.view(), metrics).map_err(rt)?;
    let per_batch = parallel_map(&rate.batch_sizes, jobs, |&b| {
        let samples = dc_minibatch_samples(x1.view(), x2.view(), metrics, b, rate.reps, cfg.seed).map_err(rt)?;
        let (mean, se) = mean_and_stderr(&samples);
        let errors: Vec<f64> = samples.iter().map(|s| (s - exact.dc).abs()).collect();
        let (mae, mae_se) = mean_and_stderr(&errors);
        Ok((b, mean, se, mae, mae_se))
    })?;

    let mut rows = Vec::new();
    for &(b, mean, se, mae, mae_se) in &per_batch {
        rows.push(ResultRow::new(e, M::MeanPc, 1.0 - mean).stderr(se).meta("batch", b));
        rows.push(ResultRow::new(e, M::MeanAbsError, mae).stderr(mae_se).meta("batch", b));
    }
    rows.push(ResultRow::new(e, M::ExactPc, exact.global_phi));
    let errors: Vec<(usize, f64)> = per_batch.iter().map(|r| (r.0, r.3)).collect();
    let slope = rate_fit(&errors).map_err(rt)?;
    rows.push(ResultRow::new(e, M::RateSlope, slope).meta("reps", rate.reps));
    Ok(rows)
}

/// The strictly increasing maps applied to teacher dissimilarities, one per set in turn.
fn increasing(v: f64, which: usize) -> f64 {
    match which % 4 {
        0 => v.powi(3) + 2.0 * v,
        1 => v.exp_m1(),
        2 => v.sqrt(),
        _ => 10.0 * v,
    }
}

#[derive(Default)]
struct Pooled {
    condition: usize,
    event: usize,
}

impl Pooled {
    fn add(&mut self, r: &ThetaProbeResult) {
        self.condition += r.condition_hits;
        self.event += r.event_hits;
    }

    fn row(&self, e: Experiment, metric: M, case: &str) -> Option<ResultRow> {
        (self.condition > 0).then(|| {
            ResultRow::new(e, metric, self.event as f64 / self.condition as f64)
                .meta("case", case)
                .meta("condition_hits", self.condition)
                .meta("event_hits", self.event)
        })
    }
}

fn probe_theorems(cfg: &RunConfig) -> Result<Vec<ResultRow>, String> {
    let e = cfg.experiment;
    let p = cfg.probes.expect("validated config has a probes section");
    let euclid = Metric::euclidean();
    let mut rng = stream_rng(cfg.seed, stream::USER);
    let mut coherent = 0;
    let mut max_dc: f64 = 0.0;
    let (mut rank_inc, mut order_inc, mut rank_pert, mut order_pert) =
        (Pooled::default(), Pooled::default(), Pooled::default(), Pooled::default());
    let mut perturbed_phi = Vec::with_capacity(p.sets);
    for set in 0..p.sets {
        let x = Array2::from_shape_fn((p.points, 2), |_| rng.sample::<f64, _>(StandardNormal));
        let d1 = pairwise(x.view(), euclid).map_err(rt)?.values;
        let f1 = empirical_cdf(d1.view()).map_err(rt)?;
        let probe_seed = cfg.seed.wrapping_add(set as u64);

        let d2 = d1.mapv(|v| increasing(v, set));
        coherent += usize::from(is_absolutely_coherent(d1.view(), d2.view()).map_err(rt)?);
        let f2 = empirical_cdf(d2.view()).map_err(rt)?;
        max_dc = max_dc.max(dc_exact(&f1, &f2).map_err(rt)?.dc);
        rank_inc.add(&probe_rank_preservation(&f1, &f2, p.eps1, p.eps2, p.samples, probe_seed).map_err(rt)?);
        order_inc.add(&probe_order_preservation(&f1, &f2, p.eps, p.samples, probe_seed).map_err(rt)?);

        let y = &x + &Array2::from_shape_fn((p.points, 2), |_| p.noise * rng.sample::<f64, _>(StandardNormal));
        let f3 = empirical_cdf(pairwise(y.view(), euclid).map_err(rt)?.view()).map_err(rt)?;
        perturbed_phi.push(dc_exact(&f1, &f3).map_err(rt)?.global_phi);
        rank_pert.add(&probe_rank_preservation(&f1, &f3, p.eps1, p.eps2, p.samples, probe_seed).map_err(rt)?);
        order_pert.add(&probe_order_preservation(&f1, &f3, p.eps, p.samples, probe_seed).map_err(rt)?);
    }

    let mut rows = vec![
        ResultRow::new(e, M::CoherentSets, coherent as f64).meta("sets", p.sets),
        ResultRow::new(e, M::MaxDc, max_dc).meta("case", "increasing"),
    ];
    rows.extend(rank_inc.row(e, M::RankProbeFreq, "increasing"));
    rows.extend(order_inc.row(e, M::OrderProbeFreq, "increasing"));
    let (mean_phi, se) = mean_and_stderr(&perturbed_phi);
    rows.push(ResultRow::new(e, M::GlobalPhi, mean_phi).stderr(se).meta("case", "perturbed"));
    rows.extend(rank_pert.row(e, M::RankProbeFreq, "perturbed"));
    rows.extend(order_pert.row(e, M::OrderProbeFreq, "perturbed"));
    Ok(rows)
}

fn retrieve(cfg: &RunConfig) -> Result<Vec<ResultRow>, String> {
    let e = cfg.experiment;
    let k = cfg.retrieval.expect("validated config has a retrieval section").k;
    let mut sc = cfg.stylized_config();
    // A single checkpoint at the last epoch keeps the trained student.
    sc.transfer.checkpoint_every = sc.transfer.epochs;
    let teacher = train_teacher(&sc).map_err(rt)?;
    let (probes, trace) = transfer_and_probe(&teacher, &sc, sc.hidden).map_err(rt)?;
    let Some(Snapshot::Network(student)) = trace.checkpoints.last().map(|c| &c.snapshot) else {
        return Err("transfer produced no final student checkpoint".into());
    };
    let data = &teacher.data;
    let db_labels = data.train.labels.as_deref().ok_or("missing train labels")?;
    let q_labels = data.test.labels.as_deref().ok_or("missing test labels")?;

    let mut rows = Vec::new();
    for (name, net) in [("teacher", &teacher.net), ("student", student)] {
        let db = net.predict(data.train.points.view()).map_err(rt)?;
        let q = net.predict(data.test.points.view()).map_err(rt)?;
        let r = retrieve_eval(db.view(), db_labels, q.view(), q_labels, Metric::cosine(), k).map_err(rt)?;
        rows.push(ResultRow::new(e, M::Map, r.map).meta("model", name));
        rows.push(ResultRow::new(e, M::TopkPrecision, r.topk_precision).meta("model", name).meta("k", k));
    }
    rows.push(ResultRow::new(e, M::GlobalPhi, trace.final_phi));
    rows.push(ResultRow::new(e, M::ProbeAcc, probes[0].accuracy).meta("epoch", probes[0].epoch));
    Ok(rows)
}
