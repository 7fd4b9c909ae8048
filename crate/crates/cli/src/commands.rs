use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _, Result};
use privrisk_core::attribute_model::{predict_attributes, train_attribute_model};
use privrisk_core::checkpoint::Checkpoint;
use privrisk_core::dataset::{compute_stats, load_annotations, load_features, save_annotations, save_features, split_dataset};
use privrisk_core::metrics::{c_map, human_vs_machine, risk_pr_curves, write_ap_csv, write_l1_csv, HumanMachineInput, StudyImage};
use privrisk_core::profiles::{
    load_responses, select_profiles, write_profile_matrix_csv, write_responses, SelectDirection, SelectOptions,
};
use privrisk_core::risk::{
    ap_pr_risk, ground_truth_risk, predict_risk, risk_score, risk_targets, train_risk_regressor, write_risk_report,
    RiskReportRow,
};
use privrisk_core::synth::{demo_dataset, planted_preferences};
use privrisk_core::taxonomy::load_taxonomy;
use privrisk_core::{
    AnnotatedExample, AttributePredictor, AttributeTaxonomy, FeatureStore, ProfileSet, RiskRegressor, SgdConfig, Split,
    TrainingSet,
};
use serde::Serialize;

use crate::outdir::OutDir;
use crate::{
    study, ClusterArgs, DemoArgs, EvalArgs, ScoreArgs, ScoreMode, ServeArgs, SgdArgs, StatsArgs, TrainAttributesArgs,
    TrainRiskArgs,
};

/// Split fractions used when annotations carry no split tags.
const SPLIT_FRACTIONS: (f64, f64, f64) = (0.45, 0.20, 0.35);

pub struct Context {
    pub taxonomy: AttributeTaxonomy,
    pub taxonomy_path: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
}

pub fn taxonomy(path: Option<&Path>) -> Result<AttributeTaxonomy> {
    match path {
        Some(p) => {
            require(&[p])?;
            Ok(load_taxonomy(p)?)
        }
        None => Ok(AttributeTaxonomy::bundled()),
    }
}

fn require(paths: &[&Path]) -> Result<()> {
    for p in paths {
        if !p.exists() {
            bail!("input file {} does not exist", p.display());
        }
    }
    Ok(())
}

fn finish(out: &OutDir, summary: String) -> Result<()> {
    println!("{summary}");
    out.log_run(&summary)
}

fn sgd_config(a: &SgdArgs, seed: u64) -> SgdConfig {
    SgdConfig {
        learning_rate: a.lr,
        batch_size: a.batch,
        epochs: a.epochs,
        l2_weight: a.l2,
        seed,
        gamma: a.gamma,
    }
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path).with_context(|| format!("cannot load checkpoint {}", path.display()))
}

fn load_predictor(path: &Path, taxonomy: &AttributeTaxonomy) -> Result<AttributePredictor> {
    let p = AttributePredictor::from_checkpoint(&load_checkpoint(path)?)?;
    if p.taxonomy_version != taxonomy.version() || p.num_attributes() != taxonomy.len() {
        bail!("{} was trained for a different taxonomy", path.display());
    }
    Ok(p)
}

fn load_regressor(path: &Path, taxonomy: &AttributeTaxonomy, profiles: &ProfileSet) -> Result<RiskRegressor> {
    let r = RiskRegressor::from_checkpoint(&load_checkpoint(path)?)?;
    if r.taxonomy_version != taxonomy.version() {
        bail!("{} was trained for a different taxonomy", path.display());
    }
    for p in &profiles.profiles {
        if r.output_index(p.profile_id).is_none() {
            bail!("{} has no output for profile {}", path.display(), p.profile_id);
        }
    }
    Ok(r)
}

fn load_profiles(path: &Path, taxonomy: &AttributeTaxonomy) -> Result<ProfileSet> {
    let set = ProfileSet::load(path).with_context(|| format!("cannot load profiles {}", path.display()))?;
    set.validate(taxonomy)?;
    Ok(set)
}

/// Annotations with a split on every image: kept when fully tagged, drawn
/// from `seed` when untagged.
fn with_splits(examples: Vec<AnnotatedExample>, seed: u64) -> Result<Vec<AnnotatedExample>> {
    let tagged = examples.iter().filter(|e| e.split.is_some()).count();
    if tagged == examples.len() {
        Ok(examples)
    } else if tagged == 0 {
        Ok(split_dataset(&examples, SPLIT_FRACTIONS, seed)?)
    } else {
        bail!("{tagged} of {} images carry a split tag; tag all or none", examples.len())
    }
}

fn parse_split(s: &str) -> Result<Split> {
    Split::ALL
        .into_iter()
        .find(|x| x.as_str() == s)
        .with_context(|| format!("unknown split `{s}`; expected train, val or test"))
}

fn split_set(examples: &[AnnotatedExample], split: Split, features: &FeatureStore) -> Result<TrainingSet> {
    let set = TrainingSet::assemble(examples.iter().filter(|e| e.split == Some(split)), features)?;
    if set.is_empty() {
        bail!("the {split} split is empty");
    }
    Ok(set)
}

/// Parse `2..40` (inclusive), `3` or `2,4,6`.
pub fn parse_k(s: &str) -> Result<Vec<usize>> {
    let bad = || format!("invalid --k `{s}`; expected e.g. 2..40, 3 or 2,4,6");
    let ks: Vec<usize> = if let Some((lo, hi)) = s.split_once("..") {
        let lo: usize = lo.trim().parse().with_context(bad)?;
        let hi: usize = hi.trim().parse().with_context(bad)?;
        (lo..=hi).collect()
    } else {
        s.split(',').map(|x| x.trim().parse()).collect::<Result<_, _>>().with_context(bad)?
    };
    if ks.is_empty() || ks.iter().any(|&k| k < 2) {
        bail!("{}: every K must be at least 2", bad());
    }
    Ok(ks)
}

pub fn parse_thresholds(s: &str) -> Result<Vec<f64>> {
    let ts: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .with_context(|| format!("invalid --thresholds `{s}`"))?;
    if ts.iter().any(|t| !t.is_finite()) {
        bail!("thresholds must be finite");
    }
    Ok(ts)
}

pub fn stats(ctx: &Context, a: StatsArgs) -> Result<()> {
    require(&[&a.annotations])?;
    let examples = load_annotations(&a.annotations, &ctx.taxonomy)?;
    let out = OutDir::open(&ctx.out)?;
    let n = ctx.taxonomy.len();
    let mut report = BTreeMap::new();
    report.insert("all".to_string(), compute_stats(&examples, n, None));
    for split in Split::ALL {
        if examples.iter().any(|e| e.split == Some(split)) {
            report.insert(split.to_string(), compute_stats(&examples, n, Some(split)));
        }
    }
    out.write_json("stats.json", &report)?;

    let mut csv = out.create("stats.csv")?;
    let cols: Vec<&String> = report.keys().collect();
    write!(csv, "attribute_id,attribute_key")?;
    for c in &cols {
        write!(csv, ",{c}")?;
    }
    writeln!(csv)?;
    for attr in ctx.taxonomy.attributes() {
        write!(csv, "{},{}", attr.id, attr.key)?;
        for c in &cols {
            write!(csv, ",{}", report[*c].per_attribute_counts[attr.id])?;
        }
        writeln!(csv)?;
    }
    csv.flush()?;

    let all = &report["all"];
    finish(
        &out,
        format!(
            "stats: {} images, {} labels, {:.2} labels/image, images per label {}..{}",
            all.n_images, all.n_labels, all.avg_labels_per_image, all.min_images_per_label, all.max_images_per_label
        ),
    )
}

pub fn train_attributes(ctx: &Context, a: TrainAttributesArgs) -> Result<()> {
    require(&[&a.annotations, &a.features])?;
    let examples = with_splits(load_annotations(&a.annotations, &ctx.taxonomy)?, ctx.seed)?;
    let features = load_features(&a.features)?;
    let train = split_set(&examples, Split::Train, &features)?;
    let val = split_set(&examples, Split::Val, &features)?;
    let config = sgd_config(&a.sgd, ctx.seed);
    let out = OutDir::open(&ctx.out)?;
    let (model, report) = train_attribute_model(&train, &val, &config, a.loss.into(), ctx.taxonomy.version())?;
    model.to_checkpoint().save(out.path("attributes.ckpt"))?;
    out.write_json("attributes_training.json", &report)?;
    finish(
        &out,
        format!(
            "train-attributes: {} loss, {} train / {} val images, best val C-MAP {:.4} at epoch {}",
            report.loss_kind.as_str(),
            train.len(),
            val.len(),
            report.best_val_cmap,
            report.best_epoch
        ),
    )
}

pub fn train_risk(ctx: &Context, a: TrainRiskArgs) -> Result<()> {
    require(&[&a.annotations, &a.features, &a.profiles])?;
    let examples = with_splits(load_annotations(&a.annotations, &ctx.taxonomy)?, ctx.seed)?;
    let features = load_features(&a.features)?;
    let profiles = load_profiles(&a.profiles, &ctx.taxonomy)?;
    let train = split_set(&examples, Split::Train, &features)?;
    let val = split_set(&examples, Split::Val, &features)?;
    let config = sgd_config(&a.sgd, ctx.seed);
    let out = OutDir::open(&ctx.out)?;
    let (model, report) = train_risk_regressor(&train, &val, &profiles.profiles, &config, ctx.taxonomy.version())?;
    model.to_checkpoint(Some(&config)).save(out.path("risk.ckpt"))?;
    out.write_json("risk_training.json", &report)?;
    finish(
        &out,
        format!(
            "train-risk: {} profiles, {} train / {} val images, best val L1 {:.4} at epoch {}",
            profiles.k,
            train.len(),
            val.len(),
            report.best_val_l1,
            report.best_epoch
        ),
    )
}

pub fn cluster(ctx: &Context, a: ClusterArgs) -> Result<()> {
    require(&[&a.responses])?;
    let ks = parse_k(&a.k)?;
    let responses = load_responses(&a.responses, &ctx.taxonomy)?;
    let options = SelectOptions {
        direction: if a.select_min {
            SelectDirection::Minimize
        } else {
            SelectDirection::Maximize
        },
        n_init: a.n_init,
        ..SelectOptions::default()
    };
    let out = OutDir::open(&ctx.out)?;
    let sel = select_profiles(&responses, ctx.taxonomy.safe_index(), &ks, ctx.seed, &options)?;
    let set = sel.result.profile_set();
    set.save(out.path("profiles.json"))?;

    let mut table = out.create("silhouette.csv")?;
    writeln!(table, "k,silhouette,inertia")?;
    for row in &sel.table {
        writeln!(table, "{},{},{}", row.k, row.silhouette, row.inertia)?;
    }
    table.flush()?;
    write_profile_matrix_csv(out.create("profile_matrix.csv")?, &ctx.taxonomy, &set.profiles)?;
    let mut assign = out.create("assignments.csv")?;
    writeln!(assign, "user_id,profile_id")?;
    for (user, p) in &sel.result.assignment {
        writeln!(assign, "{user},{p}")?;
    }
    assign.flush()?;

    finish(
        &out,
        format!(
            "cluster: selected K={} (silhouette {:.4}) from {} candidates over {} users",
            sel.k,
            sel.result.silhouette,
            ks.len(),
            responses.len()
        ),
    )
}

#[derive(Serialize)]
struct RiskEval {
    split: Split,
    ap_pr: privrisk_core::metrics::RiskEvalReport,
    pr_head: Option<privrisk_core::metrics::RiskEvalReport>,
}

pub fn eval(ctx: &Context, a: EvalArgs) -> Result<()> {
    require(&[&a.annotations, &a.features, &a.checkpoint])?;
    for p in [&a.risk_checkpoint, &a.profiles, &a.study].into_iter().flatten() {
        require(&[p])?;
    }
    if a.study.is_some() && (a.profiles.is_none() || a.risk_checkpoint.is_none()) {
        bail!("--study needs --profiles and --risk-checkpoint");
    }
    if a.risk_checkpoint.is_some() && a.profiles.is_none() {
        bail!("--risk-checkpoint needs --profiles");
    }
    let split = parse_split(&a.split)?;
    let thresholds = parse_thresholds(&a.thresholds)?;
    let tax = &ctx.taxonomy;
    let examples = with_splits(load_annotations(&a.annotations, tax)?, ctx.seed)?;
    let features = load_features(&a.features)?;
    let predictor = load_predictor(&a.checkpoint, tax)?;
    let profiles = a.profiles.as_deref().map(|p| load_profiles(p, tax)).transpose()?;
    let regressor = match (&a.risk_checkpoint, &profiles) {
        (Some(path), Some(set)) => Some(load_regressor(path, tax, set)?),
        _ => None,
    };
    let study = a.study.as_deref().map(|p| study::load(p, tax)).transpose()?;
    let set = split_set(&examples, split, &features)?;
    let out = OutDir::open(&ctx.out)?;

    let scores = set
        .image_ids
        .iter()
        .zip(&set.features)
        .map(|(id, x)| Ok(predict_attributes(&predictor, id, x)?))
        .collect::<Result<Vec<_>>>()?;
    let y: Vec<Vec<f64>> = scores.iter().map(|s| s.y.clone()).collect();
    let attr_report = c_map(&y, &set.labels)?;
    out.write_json("attribute_eval.json", &attr_report)?;
    write_ap_csv(out.create("attribute_ap.csv")?, tax, &attr_report)?;
    let mut summary = format!(
        "eval {split}: {} images, C-MAP {} over {} attributes",
        set.len(),
        attr_report.c_map.map_or("n/a".into(), |v| format!("{v:.4}")),
        tax.len() - attr_report.skipped.len()
    );

    if let Some(profile_set) = &profiles {
        let ps = &profile_set.profiles;
        let ids: Vec<usize> = ps.iter().map(|p| p.profile_id).collect();
        let gt = risk_targets(&set.labels, ps)?;
        let ap_pr = scores
            .iter()
            .map(|s| ps.iter().map(|p| Ok(ap_pr_risk(s, p)?.value)).collect())
            .collect::<Result<Vec<Vec<f64>>>>()?;
        let ap_report = risk_pr_curves(&ap_pr, &gt, &thresholds, &ids)?;
        summary += &format!(", AP-PR L1 {:.4}", ap_report.l1);
        let head_report = match &regressor {
            Some(r) => {
                let pred = set
                    .features
                    .iter()
                    .map(|x| {
                        let out = predict_risk(r, x)?;
                        Ok(ids.iter().map(|&id| out[r.output_index(id).expect("checked at load")]).collect())
                    })
                    .collect::<Result<Vec<Vec<f64>>>>()?;
                let report = risk_pr_curves(&pred, &gt, &thresholds, &ids)?;
                summary += &format!(", PR-head L1 {:.4}", report.l1);
                Some(report)
            }
            None => None,
        };
        out.write_json(
            "risk_eval.json",
            &RiskEval {
                split,
                ap_pr: ap_report,
                pr_head: head_report,
            },
        )?;
    }

    if let (Some(study), Some(profile_set), Some(regressor)) = (&study, &profiles, &regressor) {
        let (u, profile_id) = study::preferences(study, &profile_set.profiles)?;
        let head_index = regressor.output_index(profile_id).expect("checked at load");
        let images = study
            .images
            .iter()
            .map(|(id, attribute)| {
                let x = features
                    .get_f64(id)
                    .with_context(|| format!("study image `{id}` has no features"))?;
                let s = predict_attributes(&predictor, id, &x)?;
                Ok(StudyImage {
                    image_id: id.clone(),
                    attribute: *attribute,
                    ap_pr: risk_score(&s.y, &u)?.value,
                    pr_head: predict_risk(regressor, &x)?[head_index],
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let input = HumanMachineInput {
            desired: study.desired.clone(),
            human_visual: study.human_visual.clone(),
            images,
        };
        let report = human_vs_machine(&input, &thresholds)?;
        out.write_json("human_machine.json", &report)?;
        write_l1_csv(out.create("human_machine_l1.csv")?, tax, &report)?;
        let mut pairs = out.create("study_pairs.csv")?;
        writeln!(pairs, "attribute_id,attribute_key,desired,human_visual")?;
        for &attr in &report.attributes {
            let (d, h) = (study.desired[attr].unwrap_or_default(), study.human_visual[attr].unwrap_or_default());
            writeln!(pairs, "{attr},{},{d},{h}", tax.attributes()[attr].key)?;
        }
        pairs.flush()?;
        let l1s: Vec<String> = report
            .candidates
            .iter()
            .map(|c| format!("{:?} {:.3}", c.candidate, c.l1))
            .collect();
        summary += &format!(", study L1: {}", l1s.join(" / "));
    }

    finish(&out, summary)
}

pub fn score(ctx: &Context, a: ScoreArgs) -> Result<()> {
    require(&[&a.profiles])?;
    for p in [&a.features, &a.annotations, &a.checkpoint, &a.risk_checkpoint].into_iter().flatten() {
        require(&[p])?;
    }
    let tax = &ctx.taxonomy;
    let modes = a.mode;
    let need = |m: ScoreMode, what: &Option<PathBuf>, flag: &str| -> Result<()> {
        if modes.contains(&m) && what.is_none() {
            bail!("this mode needs {flag}");
        }
        Ok(())
    };
    need(ScoreMode::Gt, &a.annotations, "--annotations")?;
    need(ScoreMode::ApPr, &a.checkpoint, "--checkpoint")?;
    need(ScoreMode::ApPr, &a.features, "--features")?;
    need(ScoreMode::PrHead, &a.risk_checkpoint, "--risk-checkpoint")?;
    need(ScoreMode::PrHead, &a.features, "--features")?;

    let profile_set = load_profiles(&a.profiles, tax)?;
    let profiles: Vec<_> = match a.profile {
        Some(id) => vec![profile_set
            .get(id)
            .cloned()
            .with_context(|| format!("no profile {id} in {}", a.profiles.display()))?],
        None => profile_set.profiles.clone(),
    };
    let features = a.features.as_deref().map(load_features).transpose()?;
    let labels: Option<BTreeMap<String, Vec<bool>>> = a
        .annotations
        .as_deref()
        .map(|p| load_annotations(p, tax))
        .transpose()?
        .map(|ex| ex.into_iter().map(|e| (e.image_id, e.labels)).collect());
    let predictor = a.checkpoint.as_deref().map(|p| load_predictor(p, tax)).transpose()?;
    let regressor = a
        .risk_checkpoint
        .as_deref()
        .map(|p| load_regressor(p, tax, &profile_set))
        .transpose()?;

    let ids: Vec<String> = match (&a.image, &features, &labels) {
        (Some(id), _, _) => vec![id.clone()],
        (None, Some(f), _) => f.ids().to_vec(),
        (None, None, Some(l)) => l.keys().cloned().collect(),
        (None, None, None) => bail!("nothing to score: pass --features or --annotations"),
    };
    let out = OutDir::open(&ctx.out)?;

    let mut rows = Vec::with_capacity(ids.len() * profiles.len());
    for id in &ids {
        let x = match &features {
            Some(f) => Some(f.get_f64(id).with_context(|| format!("no features for image `{id}`"))?),
            None => None,
        };
        let y = match (&predictor, &x) {
            (Some(m), Some(x)) if modes.contains(&ScoreMode::ApPr) => Some(predict_attributes(m, id, x)?),
            _ => None,
        };
        let head = match (&regressor, &x) {
            (Some(r), Some(x)) if modes.contains(&ScoreMode::PrHead) => Some(predict_risk(r, x)?),
            _ => None,
        };
        let l = if modes.contains(&ScoreMode::Gt) {
            let l = labels.as_ref().expect("checked above");
            Some(l.get(id).with_context(|| format!("no annotation for image `{id}`"))?)
        } else {
            None
        };
        for p in &profiles {
            let gt = l.map(|l| ground_truth_risk(l, p)).transpose()?;
            let ap = y.as_ref().map(|s| ap_pr_risk(s, p)).transpose()?;
            let argmax = ap.as_ref().or(gt.as_ref()).map(|r| tax.attributes()[r.argmax_attribute].key.clone());
            rows.push(RiskReportRow {
                image_id: id.clone(),
                profile_id: p.profile_id,
                gt: gt.map(|r| r.value),
                ap_pr: ap.map(|r| r.value),
                pr_head: head
                    .as_ref()
                    .zip(regressor.as_ref())
                    .map(|(h, r)| h[r.output_index(p.profile_id).expect("checked at load")]),
                argmax_attribute_key: argmax,
            });
        }
    }
    let mut w = out.create("risk_scores.jsonl")?;
    write_risk_report(&mut w, &rows)?;
    w.flush()?;

    let summary = if let [row] = rows.as_slice() {
        let fmt = |v: Option<f64>| v.map_or("-".into(), |v| format!("{v:.4}"));
        format!(
            "score: image {} profile {}: gt={} ap_pr={} pr_head={}",
            row.image_id,
            row.profile_id,
            fmt(row.gt),
            fmt(row.ap_pr),
            fmt(row.pr_head)
        )
    } else {
        format!("score: {} images x {} profiles -> {} rows", ids.len(), profiles.len(), rows.len())
    };
    finish(&out, summary)
}

pub fn demo_data(ctx: &Context, a: DemoArgs) -> Result<()> {
    if a.images == 0 || a.dim == 0 || a.users < a.clusters || a.clusters == 0 {
        bail!("demo-data needs images, dim and clusters above zero and at least as many users as clusters");
    }
    if !(a.sigma.is_finite() && a.sigma >= 0.0) {
        bail!("--sigma must be finite and non-negative");
    }
    let tax = &ctx.taxonomy;
    let out = OutDir::open(&ctx.out)?;
    let demo = demo_dataset(tax, a.images, a.dim, ctx.seed);
    save_annotations(out.path("annotations.jsonl"), &demo.examples, tax)?;
    save_features(out.path("features.bin"), &demo.features)?;
    let planted = planted_preferences(tax.len(), tax.safe_index(), a.users, a.clusters, a.sigma, true, ctx.seed);
    let mut w = out.create("responses.csv")?;
    write_responses(&mut w, &planted.responses, tax)?;
    w.flush()?;
    finish(
        &out,
        format!(
            "demo-data: {} images ({}-d features), {} users around {} planted profiles",
            a.images, a.dim, a.users, a.clusters
        ),
    )
}

pub fn serve(ctx: &Context, a: ServeArgs, threads: Option<usize>) -> Result<()> {
    require(&[&a.features, &a.checkpoint, &a.risk_checkpoint, &a.profiles])?;
    if let Some(p) = &a.annotations {
        require(&[p])?;
    }
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let paths = privrisk_service::SnapshotPaths {
        taxonomy: ctx.taxonomy_path.clone(),
        attribute_checkpoint: a.checkpoint,
        risk_checkpoint: a.risk_checkpoint,
        profiles: a.profiles,
        features: a.features,
        annotations: a.annotations,
    };
    let mut rt = tokio::runtime::Builder::new_multi_thread();
    if let Some(n) = threads {
        rt.worker_threads(n);
    }
    rt.enable_all().build()?.block_on(privrisk_service::serve(&paths, a.addr))?;
    Ok(())
}
