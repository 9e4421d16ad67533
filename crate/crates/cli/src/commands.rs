use std::fs;
use std::path::Path;

use graphloc::ablate::{run_ablation, AblationSpec};
use graphloc::data::{load_dataset, write_corpus};
use graphloc::evaluate::{evaluate, load_predictions, predict, save_predictions};
use graphloc::localizer::{gradcheck_suite, train as fit, Localizer, GRADCHECK_TOLERANCE};
use graphloc::qa_metrics::{load_answers, score_answers, Taxonomy};
use graphloc::report::render;
use graphloc::Error;

use crate::config::RunConfig;
use crate::CliError;

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

pub fn synth(cfg: &RunConfig) -> Result<(), CliError> {
    let (train, held_out) = write_corpus(&cfg.corpus_spec(), &cfg.out)?;
    println!("wrote {} and {}", train.display(), held_out.display());
    Ok(())
}

pub fn train(cfg: &RunConfig) -> Result<(), CliError> {
    let data = load_dataset(cfg.train_data())?;
    let model = Localizer::new(cfg.model.clone(), cfg.seed)?;
    let mut log = Vec::new();
    let (model, trace) = fit(model, &data, &cfg.train_options(), Some(&mut log))?;
    ensure_dir(&cfg.out)?;
    let checkpoint = cfg.checkpoint();
    model.save(&checkpoint)?;
    write(&cfg.out.join("train.log"), &log)?;
    if let Some(last) = trace.last() {
        println!(
            "{} steps, final loss {:.5} (L_a {:.5}, L_intra {:.5}, L_inter {:.5})",
            trace.len(),
            last.total,
            last.l_a,
            last.l_intra,
            last.l_inter
        );
    }
    println!("checkpoint {}", checkpoint.display());
    Ok(())
}

pub fn eval(cfg: &RunConfig) -> Result<(), CliError> {
    let samples = load_dataset(cfg.eval_data())?;
    ensure_dir(&cfg.out)?;
    let (preds, checkpoint) = match &cfg.predictions {
        Some(path) => (load_predictions(path)?, None),
        None => {
            let path = cfg.checkpoint();
            let model = Localizer::load(&path)?;
            let preds = predict(&model, &samples)?;
            save_predictions(cfg.out.join("predictions.jsonl"), &preds)?;
            (preds, Some(path.display().to_string()))
        }
    };
    let mut report = evaluate(&preds, &samples)?;
    report.meta.seed = Some(cfg.seed);
    report.meta.checkpoint = checkpoint;
    if let Some(path) = &cfg.answers {
        let taxonomy = match &cfg.taxonomy {
            Some(t) => Taxonomy::load(t)?,
            None => Taxonomy::bundled(),
        };
        report.qa = Some(score_answers(&load_answers(path)?, &taxonomy)?);
    }
    let json = serde_json::to_string_pretty(&report).map_err(Error::from)?;
    write(&cfg.out.join("metrics.json"), json + "\n")?;
    print!("{}", render(&report));
    if let Some(qa) = report.qa {
        println!("accuracy {:.2}  WUPS@0.9 {:.2}", 100.0 * qa.accuracy, 100.0 * qa.wups);
    }
    Ok(())
}

pub fn ablate(cfg: &RunConfig) -> Result<(), CliError> {
    let spec = AblationSpec::new(
        cfg.corpus_spec(),
        cfg.model.clone(),
        cfg.train_options(),
        cfg.seed,
        cfg.ablate_seeds,
    );
    let result = run_ablation(&spec)?;
    ensure_dir(&cfg.out)?;
    let table = result.render();
    write(&cfg.out.join("ablation.txt"), &table)?;
    let json = serde_json::to_string_pretty(&result).map_err(Error::from)?;
    write(&cfg.out.join("ablation.json"), json + "\n")?;
    println!("medians over {} seeds", result.seeds.len());
    print!("{table}");
    Ok(())
}

pub fn gradcheck(cfg: &RunConfig) -> Result<(), CliError> {
    let report = gradcheck_suite(cfg.gradcheck_cases, cfg.seed, cfg.gradcheck_step, cfg.gradcheck_stencil)?;
    println!(
        "max relative error {:.3e} over {} cases ({} entries), worst {}",
        report.max_rel_error, report.cases, report.entries, report.worst_param
    );
    if report.max_rel_error >= GRADCHECK_TOLERANCE {
        return Err(CliError::Gradcheck(report.max_rel_error));
    }
    Ok(())
}
