use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use roofseg::autodiff::Checkpoint;
use roofseg::dataset::{build_class_index, generate_synthetic, load_dataset, save_dataset, ImbalanceProfile, SyntheticStyle};
use roofseg::harness::{
    ablation_csv, ablation_runs_csv, restore_network, run_ablation_with_progress, run_single_class,
    single_class_csv, train_with_progress, validate, AblationGrid, LabeledSet, TrainConfig,
};
use roofseg::losses::{degenerate_bound_analysis, DiceConfig};
use roofseg::sampler::{build_plan, verify_plan, SchedulerConfig};

use crate::{AblateArgs, AnalyzeDiceArgs, EvaluateArgs, GenerateArgs, ScheduleArgs, SingleClassArgs, TrainArgs, TrainingOptions};

const CONFIG_FILE: &str = "config.json";
const CLASS_NAMES: [&str; 5] = ["background", "no damage", "minor", "major", "destroyed"];

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn emit(text: &str, path: Option<&Path>, out: &mut dyn Write) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => Ok(out.write_all(text.as_bytes())?),
    }
}

fn load(dir: &Path) -> Result<(Vec<roofseg::dataset::Patch>, usize)> {
    load_dataset(dir).with_context(|| format!("loading dataset {}", dir.display()))
}

fn names(classes: usize) -> Vec<&'static str> {
    if classes == 4 {
        CLASS_NAMES.to_vec()
    } else {
        Vec::new()
    }
}

pub fn generate(a: GenerateArgs, out: &mut dyn Write) -> Result<()> {
    let profile = match &a.profile {
        Some(p) => read_json(p)?,
        None => ImbalanceProfile::rooftop_damage(),
    };
    let style = match &a.style {
        Some(p) => read_json(p)?,
        None => SyntheticStyle::default(),
    };
    let data = generate_synthetic(&profile, &style, a.count, a.size, a.seed)?;
    let classes = profile.classes();
    save_dataset(&a.out, &data.patches, classes)?;
    let index = build_class_index(&data.patches, classes)?;
    let mut csv = String::from("class,target_fraction,measured_fraction,target_presence,measured_presence\n");
    for (c, f) in data.fractions().iter().enumerate() {
        let (tp, mp) = if c == 0 {
            (String::new(), format!("{:.4}", index.background().len() as f64 / a.count as f64))
        } else {
            (
                format!("{:.4}", profile.presence[c - 1]),
                format!("{:.4}", index.set(c).len() as f64 / a.count as f64),
            )
        };
        csv.push_str(&format!("{c},{:.6},{f:.6},{tp},{mp}\n", profile.fractions[c]));
    }
    Ok(out.write_all(csv.as_bytes())?)
}

pub fn schedule(a: ScheduleArgs, out: &mut dyn Write) -> Result<()> {
    let (patches, classes) = load(&a.dataset)?;
    let index = build_class_index(&patches, classes)?;
    let cfg = SchedulerConfig::new(a.batch_size, classes, a.seed);
    let plan = build_plan(&index, &cfg)?;
    let report = verify_plan(&plan, &index, &cfg);
    if let Some(v) = report.violations.first() {
        bail!("plan failed verification: {v}");
    }
    let factors: Vec<String> = report.oversampling.iter().map(|f| format!("{f:.2}")).collect();
    eprintln!(
        "{} batches of {}; oversampling factors per class: {}{}",
        plan.len(),
        a.batch_size,
        factors.join(" "),
        if plan.foreground_fillers {
            "; no background-only samples, fillers drawn from foreground"
        } else {
            ""
        }
    );
    emit(&plan.to_text(), a.out.as_deref(), out)
}

fn training_config(opts: &TrainingOptions) -> Result<TrainConfig> {
    let mut cfg: TrainConfig = match &opts.config {
        Some(p) => read_json(p)?,
        None => TrainConfig::default(),
    };
    if let Some(e) = opts.epochs {
        cfg.epochs = e;
    }
    if let Some(i) = opts.iterations {
        cfg.iterations_per_epoch = i;
    }
    if let Some(s) = opts.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn labeled(dir: &Path, classes: usize) -> Result<LabeledSet> {
    let (patches, found) = load(dir)?;
    if found != classes {
        bail!("{} has {found} classes, the config expects {classes}", dir.display());
    }
    Ok(LabeledSet::new(patches, classes)?)
}

pub fn train(a: TrainArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = training_config(&a.opts)?;
    let train_set = labeled(&a.opts.train, cfg.network.classes)?;
    let val_set = labeled(&a.opts.val, cfg.network.classes)?;
    let start = Instant::now();
    let record = train_with_progress(&cfg, &train_set, &val_set, &mut |e| {
        eprintln!(
            "epoch {:>3}  lr {:.2e}  train {:.4}  val {:.4}  macro-F1 {:.2}  [{:.0}s]",
            e.epoch,
            e.lr,
            e.train_loss,
            e.val_loss,
            e.val_macro_f1,
            start.elapsed().as_secs_f64()
        );
    })?;
    fs::create_dir_all(&a.out)?;
    record.checkpoint.save(&a.out)?;
    fs::write(a.out.join(CONFIG_FILE), serde_json::to_string_pretty(&cfg)?)?;
    fs::write(a.out.join("epochs.csv"), record.epochs_csv())?;
    fs::write(a.out.join("report.csv"), record.report.to_csv())?;
    fs::write(a.out.join("confusion.csv"), record.report.confusion_csv())?;
    fs::write(
        a.out.join("confusion.txt"),
        record.report.confusion_table(&names(cfg.network.classes)),
    )?;
    eprintln!("selected epoch {}", record.best_epoch);
    Ok(out.write_all(record.report.to_csv().as_bytes())?)
}

pub fn evaluate(a: EvaluateArgs, out: &mut dyn Write) -> Result<()> {
    let cfg: TrainConfig = read_json(&a.model.join(CONFIG_FILE))?;
    let checkpoint = Checkpoint::load(&a.model).with_context(|| format!("loading {}", a.model.display()))?;
    let net = restore_network(&cfg.network, &checkpoint)?;
    let data = labeled(&a.dataset, cfg.network.classes)?;
    let v = validate(&net, &data, &cfg)?;
    let table = v.report.confusion_table(&names(cfg.network.classes));
    match &a.table {
        Some(p) => fs::write(p, &table)?,
        None => eprint!("{table}"),
    }
    Ok(out.write_all(v.report.to_csv().as_bytes())?)
}

fn seed_list(base: u64, count: usize) -> Result<Vec<u64>> {
    if count == 0 {
        bail!("--seeds must be at least 1");
    }
    Ok((0..count as u64).map(|i| base + i).collect())
}

pub fn ablate(a: AblateArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = training_config(&a.opts)?;
    let classes = cfg.network.classes;
    let train_set = labeled(&a.opts.train, classes)?;
    let val_set = labeled(&a.opts.val, classes)?;
    let grid = if a.models.is_empty() {
        AblationGrid::default()
    } else {
        AblationGrid::select(&a.models)?
    };
    let seeds = seed_list(cfg.seed, a.seeds)?;
    let start = Instant::now();
    let results = run_ablation_with_progress(&grid, &cfg, &train_set, &val_set, &seeds, &|row, out| {
        let t = start.elapsed().as_secs_f64();
        match out {
            Ok(o) => eprintln!(
                "model #{} ({}) seed {}: macro-F1 {:.2} micro-F1 {:.2}  [{t:.0}s]",
                row.model,
                row.label(),
                o.seed,
                o.macro_f1,
                o.micro_f1
            ),
            Err(e) => eprintln!("model #{} ({}) failed: {e}  [{t:.0}s]", row.model, row.label()),
        }
    })?;
    if let Some(p) = &a.runs {
        fs::write(p, ablation_runs_csv(&results, classes))?;
    }
    emit(&ablation_csv(&results, classes), a.out.as_deref(), out)
}

pub fn single_class(a: SingleClassArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = training_config(&a.opts)?;
    let (train_patches, classes) = load(&a.opts.train)?;
    let (val_patches, val_classes) = load(&a.opts.val)?;
    if classes != val_classes {
        bail!("training data has {classes} classes, validation data {val_classes}");
    }
    let seeds = seed_list(cfg.seed, a.seeds)?;
    let mut outcomes = Vec::new();
    for with_aux in [false, true] {
        for &seed in &seeds {
            let mut c = cfg.clone();
            c.seed = seed;
            let o = run_single_class(a.class_id, with_aux, &c, &train_patches, &val_patches, classes)?;
            eprintln!("class {} aux={} seed {}: F1 {:.2}", a.class_id, with_aux, seed, o.f1);
            outcomes.push(o);
        }
    }
    emit(&single_class_csv(&outcomes), a.out.as_deref(), out)
}

pub fn analyze_dice(a: AnalyzeDiceArgs, out: &mut dyn Write) -> Result<()> {
    let dice = DiceConfig {
        epsilon: a.epsilon,
        ..DiceConfig::default()
    };
    let mut csv = String::from("k,batch_pixels,bound,degenerate_avg_loss,honest_avg_loss,degenerate_within_bound,honest_above_bound\n");
    for &k in &a.k {
        let r = degenerate_bound_analysis(k, a.pixels, &dice)?;
        csv.push_str(&format!(
            "{},{},{:.9},{:.9},{:.9},{},{}\n",
            r.k,
            r.batch_pixels,
            r.bound,
            r.degenerate_avg_loss,
            r.honest_model_avg_loss,
            r.degenerate_avg_loss <= r.bound + 1e-9,
            r.honest_model_avg_loss > r.bound
        ));
    }
    Ok(out.write_all(csv.as_bytes())?)
}
