use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;
use symphony::agents::PolicyActor;
use symphony::beam::{rollout_beams, write_trace, BeamConfig, BeamJob};
use symphony::config::config_hash;
use symphony::metrics::{inference_goals, EvalConfig, EvalReport, REPORT_SCHEMA};
use symphony::rng::{derive_seed, purpose};
use symphony::scenario::{generate_dataset, load_dataset, save_dataset, Dataset, RunSegment};
use symphony::training::{
    evaluate_checkpoint, prepare, save_checkpoints, select_checkpoint, train as run_training, Checkpoint, StepLog,
};
use symphony::{Error, Result};

use crate::config::RunConfig;

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn load_inputs(ckpt: &Path, data: &Path) -> Result<(Checkpoint, Dataset)> {
    if !ckpt.exists() {
        return Err(Error::io(ckpt, std::io::ErrorKind::NotFound.into()));
    }
    Ok((Checkpoint::load(ckpt)?, load_dataset(data)?))
}

pub fn gen_data(cfg: &RunConfig, out: &Path) -> Result<()> {
    let ds = generate_dataset(&cfg.dataset_spec())?;
    save_dataset(&ds, out)?;
    println!("{}: {} train, {} test segments", out.display(), ds.train.len(), ds.test.len());
    Ok(())
}

#[derive(Serialize)]
struct ValidationRow<'a> {
    step: usize,
    file: String,
    safety_score: f64,
    report: &'a EvalReport,
}

#[derive(Serialize)]
struct Selection<'a> {
    schema: u32,
    config_hash: String,
    config: &'a RunConfig,
    dataset_hash: &'a str,
    selected: String,
    validation: Vec<ValidationRow<'a>>,
}

pub fn train(cfg: &RunConfig, data: &Path, out: &Path) -> Result<()> {
    let ds = load_dataset(data)?;
    let held = cfg.validation_segments.min(ds.train.len() / 2);
    let (fit, validation) = ds.train.split_at(ds.train.len() - held);
    let tc = cfg.train_config();
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let log_path = out.join("train_log.jsonl");
    let mut log = create(&log_path)?;
    let mut failure = None;
    let outcome = run_training(&tc, fit, |entry: &StepLog| {
        if failure.is_none() {
            let line = serde_json::to_string(entry).map_err(Error::from);
            if let Err(e) = line.and_then(|l| writeln!(log, "{l}").map_err(|e| Error::io(&log_path, e))) {
                failure = Some(e);
            }
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    log.flush().map_err(|e| Error::io(&log_path, e))?;
    save_checkpoints(&outcome.checkpoints, out)?;

    let (best, reports) = if validation.is_empty() {
        (outcome.checkpoints.last().expect("training writes a final checkpoint"), Vec::new())
    } else {
        select_checkpoint(&outcome.checkpoints, validation, cfg.seed)?
    };
    best.save(&out.join("best.json"))?;
    let selection = Selection {
        schema: REPORT_SCHEMA,
        config_hash: config_hash(cfg),
        config: cfg,
        dataset_hash: &ds.config_hash,
        selected: best.file_name(),
        validation: outcome
            .checkpoints
            .iter()
            .zip(&reports)
            .map(|(c, r)| ValidationRow {
                step: c.step,
                file: c.file_name(),
                safety_score: r.safety_score(),
                report: r,
            })
            .collect(),
    };
    write_json(&out.join("selection.json"), &selection)?;
    println!("{}: selected {} of {} checkpoints", out.display(), best.file_name(), outcome.checkpoints.len());
    Ok(())
}

fn test_segment(ds: &Dataset, index: usize) -> Result<&RunSegment> {
    ds.test
        .get(index)
        .ok_or_else(|| Error::Config(format!("test split has {} segments, index {index} requested", ds.test.len())))
}

#[derive(Serialize)]
struct TraceEcho<'a> {
    checkpoint: &'a str,
    dataset: &'a str,
    config: &'a RunConfig,
    segment: usize,
}

pub fn simulate(cfg: &RunConfig, ckpt: &Path, data: &Path, segment: usize, out: &Path) -> Result<()> {
    let (ck, ds) = load_inputs(ckpt, data)?;
    let seg = test_segment(&ds, segment)?;
    let prepared = prepare(std::slice::from_ref(seg), &ck.config)?;
    let p = prepared
        .first()
        .ok_or_else(|| Error::Config(format!("segment {} has too few moving agents", seg.id)))?;
    let models = ck.models()?;
    let eval = EvalConfig {
        beam: true,
        ..cfg.eval_config(&ck.config)
    };
    let plans = [p.plan.clone()];
    let goals = inference_goals(&models, std::slice::from_ref(seg), &plans, &eval)?;
    let job = BeamJob {
        segment: seg,
        interactive: &p.plan.interactive,
        goals: goals.into_iter().next().expect("one segment"),
        key: seg.id,
    };
    let beam = BeamConfig {
        branches: eval.rollouts,
        prune_every: eval.prune_every,
        prune: true,
        seed: derive_seed(cfg.seed, &[purpose::EVAL]),
    };
    beam.validate()?;
    let actor = PolicyActor {
        policy: &models.policy,
        dt: seg.step_dt,
        greedy: false,
    };
    let result = rollout_beams(std::slice::from_ref(&job), &actor, Some(&models.disc), &beam)?;
    let hash = config_hash(&TraceEcho {
        checkpoint: &ck.config_hash,
        dataset: &ds.config_hash,
        config: cfg,
        segment,
    });
    write_trace(create(out)?, &hash, &job, &beam, &result[0])?;
    println!("{}: {} branches, {} prunes", out.display(), result[0].branches.len(), result[0].prunes.len());
    Ok(())
}

#[derive(Serialize)]
struct ReportFile<'a> {
    schema: u32,
    config_hash: String,
    checkpoint: CheckpointEcho<'a>,
    dataset_hash: &'a str,
    config: &'a RunConfig,
    eval: EvalConfig,
    report: EvalReport,
}

#[derive(Serialize)]
struct CheckpointEcho<'a> {
    step: usize,
    config_hash: &'a str,
    label: String,
}

pub fn eval(cfg: &RunConfig, ckpt: &Path, data: &Path, out: &Path) -> Result<()> {
    let (ck, ds) = load_inputs(ckpt, data)?;
    let eval = cfg.eval_config(&ck.config);
    let mut report = evaluate_checkpoint(&ck, &ds.test, &eval)?;
    let hash = config_hash(&(cfg, &eval, &ck.config_hash, &ds.config_hash));
    report.config_hash = hash.clone();
    println!(
        "collision {:.2}%  off-road {:.2}%  ADE {:.3} m  minSADE {:.3} m  curvature JSD {:.5}",
        report.collision_rate, report.offroad_time, report.ade, report.min_sade, report.curvature_jsd
    );
    let file = ReportFile {
        schema: REPORT_SCHEMA,
        config_hash: hash,
        checkpoint: CheckpointEcho {
            step: ck.step,
            config_hash: &ck.config_hash,
            label: ck.config.label(),
        },
        dataset_hash: &ds.config_hash,
        config: cfg,
        eval,
        report,
    };
    write_json(out, &file)
}
