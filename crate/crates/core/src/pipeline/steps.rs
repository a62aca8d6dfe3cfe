use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Pipeline, StepContext};
use crate::alignment::{self, TargetVector};
use crate::cfa::{self, CfaSpec};
use crate::circumplex::{fit_circumplex, pattern_check, CircumplexFit, PatternResult};
use crate::corpus::{CorpusStore, Perception, RowFormat, ValueAnnotation};
use crate::error::{Error, Result};
use crate::gateway::{BackendKind, ChatResponder, HttpTransport};
use crate::lexicon::{dedup, ValueLexicon};
use crate::measurement::{build_matrix, AnalysisData, MeasurementMatrix, Responder, Subject};
use crate::probe::{contributions, cross_validate, evaluate, pairs_from_scores, train};
use crate::psychometrics::{
    build_value_system, correlation_matrix, AlphaEstimate, Dendrogram, DroppedItem, ValueSystem,
};
use crate::report;
use crate::synth::MockFleet;

const LEXICON: &str = "lexicon.csv";
const LEXICON_DROPPED: &str = "lexicon_dropped.csv";
const MATRIX: &str = "matrix.csv";
const MATRIX_META: &str = "matrix.meta.jsonl";
const SYSTEM: &str = "value_system.jsonl";
const LOADINGS: &str = "loadings.csv";
const STRUCTURE: &str = "structure.json";
const CFA_FITS: &str = "cfa.jsonl";
const CIRCUMPLEX_CSV: &str = "circumplex.csv";
const CIRCUMPLEX_JSON: &str = "circumplex.json";
const PROBE_CSV: &str = "probe.csv";
const TARGET: &str = "target.csv";

fn pretty(v: &impl Serialize) -> Result<Vec<u8>> {
    let mut b = serde_json::to_vec_pretty(v)?;
    b.push(b'\n');
    Ok(b)
}

fn to_bytes(f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<Vec<u8>> {
    let mut b = Vec::new();
    f(&mut b)?;
    Ok(b)
}

fn rows_of(m: &nalgebra::DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn format_of(s: &str) -> Result<RowFormat> {
    s.parse().map_err(|e: Error| Error::Config(e.to_string()))
}

fn corpus_files(dir: &Path) -> Vec<PathBuf> {
    [RowFormat::Records, RowFormat::Perceptions, RowFormat::Annotations]
        .iter()
        .map(|f| dir.join(f.file_name()))
        .filter(|p| p.exists())
        .collect()
}

pub(super) fn ingest(p: &Pipeline, ctx: &mut StepContext) -> Result<Value> {
    if p.cfg.paths.ingest.is_empty() {
        return Err(Error::Config("paths.ingest lists no files".into()));
    }
    let sources: Vec<(PathBuf, RowFormat)> = p
        .cfg
        .paths
        .ingest
        .iter()
        .map(|s| Ok((p.require(&s.path)?, format_of(&s.format)?)))
        .collect::<Result<_>>()?;
    let dir = p.resolve(&p.cfg.paths.corpus);
    let mut store = CorpusStore::open(&dir)?;
    let mut added = BTreeMap::new();
    for (path, format) in &sources {
        let bytes = ctx.read_input(p, path)?;
        let n = store.ingest_reader(&p.display_path(path), &bytes[..], *format)?;
        added.insert(p.display_path(path), n);
    }
    ctx.external_outputs.extend(corpus_files(&dir));
    let stats = store.stats();
    ctx.write(p.out_path("corpus_stats.json"), pretty(&stats)?);
    Ok(json!({"added": added, "total": stats.total}))
}

pub(super) fn lexicon(p: &Pipeline, ctx: &mut StepContext) -> Result<Value> {
    let dir = p.require(&p.cfg.paths.corpus)?;
    for f in corpus_files(&dir) {
        ctx.read_input(p, &f)?;
    }
    let mut store = CorpusStore::open(&dir)?;
    let gw = p.gateway()?;
    if store.perceptions().is_empty() {
        if store.records().is_empty() {
            return Err(Error::invalid("the corpus has no records; run ingest first"));
        }
        let parsed: Vec<Vec<Perception>> = store
            .records()
            .par_iter()
            .map(|rec| {
                Ok(gw
                    .parse_perceptions(&rec.response_text)?
                    .into_iter()
                    .enumerate()
                    .map(|(i, text)| Perception {
                        id: format!("{}#p{}", rec.id, i + 1),
                        record_id: rec.id.clone(),
                        text,
                    })
                    .collect())
            })
            .collect::<Result<_>>()?;
        let rows = parsed.into_iter().flatten().enumerate().map(|(i, x)| (i + 1, x)).collect();
        store.add_perceptions("perception parser", rows)?;
    }
    if store.annotations().is_empty() {
        let generated: Vec<Vec<ValueAnnotation>> = store
            .perceptions()
            .par_iter()
            .map(|per| {
                Ok(gw
                    .generate_values(&per.text)?
                    .into_iter()
                    .map(|(value_name, weight)| ValueAnnotation {
                        perception_id: per.id.clone(),
                        value_name,
                        weight,
                    })
                    .collect())
            })
            .collect::<Result<_>>()?;
        let rows = generated.into_iter().flatten().enumerate().map(|(i, x)| (i + 1, x)).collect();
        store.add_annotations("value generator", rows)?;
    }
    ctx.external_outputs.extend(corpus_files(&dir));
    let freq = store.value_frequencies();
    if freq.is_empty() {
        return Err(Error::invalid("no values were generated from the corpus"));
    }
    let lex = dedup(&freq, p.cfg.lexicon.thresholds, |s| gw.embed(s))?;
    ctx.write(p.out_path(LEXICON), to_bytes(|b| lex.write_csv(b))?);
    let dropped = to_bytes(|b| {
        let mut w = csv::Writer::from_writer(b);
        w.write_record(["value_name", "frequency", "duplicate_of"])?;
        for d in &lex.dropped {
            w.write_record([d.value_name.as_str(), &d.frequency.to_string(), d.duplicate_of.as_str()])?;
        }
        w.flush()?;
        Ok(())
    })?;
    ctx.write(p.out_path(LEXICON_DROPPED), dropped);
    Ok(json!({"raw_values": freq.len(), "lexicon": lex.len(), "dropped": lex.dropped.len()}))
}

fn read_lexicon(p: &Pipeline, ctx: &mut StepContext) -> Result<ValueLexicon> {
    let path = p.require(&p.cfg.paths.out.join(LEXICON))?;
    let bytes = ctx.read_input(p, &path)?;
    ValueLexicon::read_csv(&bytes[..], p.cfg.lexicon.thresholds)
}

fn read_roster(bytes: &[u8]) -> Result<Vec<Subject>> {
    let mut r = csv::Reader::from_reader(bytes);
    let roster: Vec<Subject> = r.deserialize().collect::<std::result::Result<_, _>>()?;
    if roster.is_empty() {
        return Err(Error::invalid("the roster lists no subjects"));
    }
    Ok(roster)
}

pub(super) fn measure(p: &Pipeline, ctx: &mut StepContext) -> Result<Value> {
    let lex = read_lexicon(p, ctx)?;
    let roster_path = p.require(&p.cfg.paths.roster)?;
    let roster = read_roster(&ctx.read_input(p, &roster_path)?)?;
    let mut values = lex.names();
    if let Some(m) = p.cfg.measure.max_values {
        values.truncate(m);
    }
    let gw = p.gateway()?;
    let prompts: Vec<String> = values
        .iter()
        .map(|v| gw.generate_eliciting_prompt(v))
        .collect::<Result<_>>()?;
    let responder: Box<dyn Responder> = match p.cfg.backend {
        BackendKind::Mock => Box::new(MockFleet::new(p.cfg.fleet.clone())?),
        BackendKind::Remote => {
            let mut cfg = p.cfg.agents.subject.clone();
            cfg.backend = BackendKind::Remote;
            Box::new(ChatResponder::new(cfg, p.cfg.profiles.clone(), Arc::new(HttpTransport::from_env()))?)
        }
    };
    let built = build_matrix(&roster, &prompts, &values, responder.as_ref(), &gw, p.cfg.measure.options())?;
    let failures: Vec<Value> = built
        .failures
        .iter()
        .map(|(s, e)| json!({"subject": s.to_string(), "error": e}))
        .collect();
    ctx.write(p.out_path(MATRIX), to_bytes(|b| built.matrix.write_csv(b))?);
    let meta = json!({"prompts": prompts, "failures": failures});
    ctx.write(p.out_path(MATRIX_META), to_bytes(|b| built.matrix.write_sidecar(b, meta))?);
    Ok(json!({"subjects": built.matrix.subjects.len(), "values": values.len(), "failures": failures.len()}))
}

fn read_matrix(p: &Pipeline, ctx: &mut StepContext) -> Result<MeasurementMatrix> {
    let path = p.require(&p.cfg.paths.out.join(MATRIX))?;
    let bytes = ctx.read_input(p, &path)?;
    let meta_path = p.resolve(&p.cfg.paths.out.join(MATRIX_META));
    if meta_path.exists() {
        let meta = ctx.read_input(p, &meta_path)?;
        MeasurementMatrix::read(&bytes[..], Some(&meta[..]))
    } else {
        MeasurementMatrix::read(&bytes[..], None::<&[u8]>)
    }
}

/// Everything the later steps and the report need from the structure step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StructureSummary {
    pub k: usize,
    pub elbow: usize,
    pub initial_eigenvalues: Vec<f64>,
    pub values: Vec<String>,
    pub factors: Vec<String>,
    pub alphas: Vec<AlphaEstimate>,
    pub naming_hints: Vec<Vec<String>>,
    pub dropped_items: Vec<DroppedItem>,
    pub dropped_values: Vec<String>,
    pub imputed: Vec<(String, usize)>,
    pub correlation: Vec<Vec<f64>>,
    pub dendrogram: Dendrogram,
    pub construction: Vec<String>,
    pub held_out: Vec<String>,
}

fn analysis(p: &Pipeline, m: &MeasurementMatrix) -> Result<AnalysisData> {
    m.prepare_for_analysis(p.cfg.structure.max_missing)
}

pub(super) fn structure(p: &Pipeline, ctx: &mut StepContext) -> Result<Value> {
    let m = read_matrix(p, ctx)?;
    let a = analysis(p, &m)?;
    let split_seed = ctx.seed(p, "structure.split");
    let alpha_seed = ctx.seed(p, "structure.alpha_bootstrap");
    let (cons, held) = cfa::split_half(a.data.nrows(), split_seed);
    let data = a.data.select_rows(&cons);
    let out = build_value_system(&data, &a.values, &p.cfg.structure, alpha_seed)?;
    let sys = &out.system;
    let ids = |rows: &[usize]| rows.iter().map(|&r| m.subjects[r].to_string()).collect::<Vec<_>>();
    let summary = StructureSummary {
        k: sys.k(),
        elbow: out.elbow,
        initial_eigenvalues: out.initial_eigenvalues.clone(),
        values: sys.values.clone(),
        factors: sys.factors.clone(),
        alphas: sys.factor_alphas.clone(),
        naming_hints: sys.naming_hints(3),
        dropped_items: out.dropped.clone(),
        dropped_values: a.dropped_values.clone(),
        imputed: a.imputed.clone(),
        correlation: rows_of(&out.correlation),
        dendrogram: out.dendrogram.clone(),
        construction: ids(&cons),
        held_out: ids(&held),
    };
    ctx.write(p.out_path(SYSTEM), to_bytes(|b| sys.write_jsonl(b))?);
    ctx.write(p.out_path(LOADINGS), to_bytes(|b| sys.write_loadings_csv(b))?);
    ctx.write(p.out_path(STRUCTURE), pretty(&summary)?);
    Ok(json!({
        "k": summary.k,
        "elbow": summary.elbow,
        "values": summary.values.len(),
        "alphas": summary.alphas.iter().map(|a| a.alpha).collect::<Vec<_>>(),
    }))
}

fn read_system(p: &Pipeline, ctx: &mut StepContext) -> Result<ValueSystem> {
    let path = p.require(&p.cfg.paths.out.join(SYSTEM))?;
    ValueSystem::read_jsonl(&ctx.read_input(p, &path)?[..])
}

fn read_structure(p: &Pipeline, ctx: &mut StepContext) -> Result<StructureSummary> {
    let path = p.require(&p.cfg.paths.out.join(STRUCTURE))?;
    Ok(serde_json::from_slice(&ctx.read_input(p, &path)?)?)
}

#[derive(Serialize)]
struct CfaLine<'a> {
    model: &'a str,
    rows: usize,
    held_out_rows: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    fit: Option<cfa::CfaFit>,
    #[serde(skip_serializing_if = "Option::is_none")]
    baseline: Option<cfa::BaselineFit>,
    #[serde(skip_serializing_if = "Option::is_none")]
    indices: Option<cfa::FitIndices>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

pub(super) fn cfa(p: &Pipeline, ctx: &mut StepContext) -> Result<Value> {
    let sys = read_system(p, ctx)?;
    let st = read_structure(p, ctx)?;
    let m = read_matrix(p, ctx)?;
    let a = analysis(p, &m)?;
    let by_id: BTreeMap<String, usize> = m.subjects.iter().enumerate().map(|(i, s)| (s.to_string(), i)).collect();
    let held: Vec<usize> = st
        .held_out
        .iter()
        .map(|id| by_id.get(id).copied().ok_or_else(|| Error::invalid(format!("held-out subject `{id}` not in matrix"))))
        .collect::<Result<_>>()?;
    if held.is_empty() {
        return Err(Error::invalid("no held-out rows"));
    }
    let mut opts = p.cfg.cfa.optimizer;
    opts.seed = ctx.seed(p, "cfa.restarts");
    let boot_seed = ctx.seed(p, "cfa.bootstrap");
    let held_data = a.data.select_rows(&held);
    let target_rows = held.len().max(opts.min_rows_per_variable * sys.values.len());
    let data = cfa::bootstrap_expand(&held_data, target_rows, boot_seed)?;

    let fit_one = |spec: &CfaSpec| -> Result<(cfa::CfaFit, cfa::BaselineFit, cfa::FitIndices)> {
        let (fitted, s) = cfa::fit(spec, &data, &a.values, p.cfg.cfa.sample, opts)?;
        let base = cfa::fit_independence(&s, data.nrows())?;
        let idx = cfa::indices(&fitted, &s, data.nrows(), &base)?;
        Ok((fitted, base, idx))
    };

    let spec = CfaSpec::new(&sys.mapping(), p.cfg.cfa.correlated_factors)?;
    let (fitted, base, idx) = fit_one(&spec)?;
    let mut lines = vec![CfaLine {
        model: "system",
        rows: data.nrows(),
        held_out_rows: held.len(),
        fit: Some(fitted),
        baseline: Some(base),
        indices: Some(idx),
        error: None,
    }];
    ctx.write(p.out_path("cfa_mapping.csv"), to_bytes(|b| spec.write_csv(b))?);

    if !p.cfg.cfa.reference_values.is_empty() {
        let gw = p.gateway()?;
        let mapping = cfa::map_values_to_system(&sys.values, &p.cfg.cfa.reference_values, |s| gw.embed(s))?;
        let mut line = CfaLine {
            model: "reference",
            rows: data.nrows(),
            held_out_rows: held.len(),
            fit: None,
            baseline: None,
            indices: None,
            error: None,
        };
        let ref_spec = CfaSpec::new(&mapping, p.cfg.cfa.correlated_factors);
        let result = ref_spec.and_then(|s| {
            ctx.write(p.out_path("cfa_reference_mapping.csv"), to_bytes(|b| s.write_csv(b))?);
            fit_one(&s)
        });
        match result {
            Ok((f, b, i)) => {
                line.fit = Some(f);
                line.baseline = Some(b);
                line.indices = Some(i);
            }
            Err(e) => {
                log::warn!("reference mapping fit failed: {e}");
                line.error = Some(e.to_string());
            }
        }
        lines.push(line);
    }
    let mut out = Vec::new();
    for l in &lines {
        serde_json::to_writer(&mut out, l)?;
        out.push(b'\n');
    }
    ctx.write(p.out_path(CFA_FITS), out);
    Ok(json!({"fits": lines.iter().map(|l| json!({"model": l.model, "indices": l.indices, "error": l.error})).collect::<Vec<_>>()}))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CircumplexSummary {
    pub fit: CircumplexFit,
    pub factor_correlation: Vec<Vec<f64>>,
    pub patterns: Vec<PatternResult>,
}

pub(super) fn circumplex(p: &Pipeline, ctx: &mut StepContext) -> Result<Value> {
    let sys = read_system(p, ctx)?;
    let m = read_matrix(p, ctx)?;
    let a = analysis(p, &m)?;
    let scores = sys.factor_scores(&a.data, &a.values)?;
    let r = correlation_matrix(&scores, &sys.factors)?;
    let mut opts = p.cfg.circumplex.fit;
    opts.seed = ctx.seed(p, "circumplex.starts");
    let fit = fit_circumplex(&r, &sys.factors, opts)?;
    let patterns = pattern_check(&fit, &p.cfg.circumplex.expectations)?;
    ctx.write(p.out_path(CIRCUMPLEX_CSV), to_bytes(|b| fit.write_csv(b))?);
    let summary = CircumplexSummary {
        fit,
        factor_correlation: rows_of(&r),
        patterns,
    };
    ctx.write(p.out_path(CIRCUMPLEX_JSON), pretty(&summary)?);
    Ok(json!({
        "stress": summary.fit.stress,
        "patterns_passed": summary.patterns.iter().filter(|x| x.pass).count(),
        "patterns": summary.patterns.len(),
    }))
}

fn read_safety(bytes: &[u8]) -> Result<BTreeMap<String, f64>> {
    #[derive(Deserialize)]
    struct Row {
        model: String,
        score: f64,
    }
    let mut r = csv::Reader::from_reader(bytes);
    let mut out = BTreeMap::new();
    for row in r.deserialize() {
        let row: Row = row?;
        if !row.score.is_finite() {
            return Err(Error::invalid(format!("non-finite safety score for `{}`", row.model)));
        }
        out.insert(row.model, row.score);
    }
    Ok(out)
}

pub(super) fn probe(p: &Pipeline, ctx: &mut StepContext) -> Result<Value> {
    let sys = read_system(p, ctx)?;
    let m = read_matrix(p, ctx)?;
    let safety_path = p.require(&p.cfg.paths.safety)?;
    let safety = read_safety(&ctx.read_input(p, &safety_path)?)?;
    let a = analysis(p, &m)?;
    let scores = sys.factor_scores(&a.data, &a.values)?;
    // One vector per model: the mean over its profiling prompts.
    let mut order: Vec<String> = Vec::new();
    let mut sums: BTreeMap<String, (Vec<f64>, usize)> = BTreeMap::new();
    for (r, s) in m.subjects.iter().enumerate() {
        let e = sums.entry(s.model_name.clone()).or_insert_with(|| {
            order.push(s.model_name.clone());
            (vec![0.0; sys.k()], 0)
        });
        for f in 0..sys.k() {
            e.0[f] += scores[(r, f)];
        }
        e.1 += 1;
    }
    let models: Vec<(String, Vec<f64>)> = order
        .iter()
        .map(|name| {
            let (s, n) = &sums[name];
            (name.clone(), s.iter().map(|x| x / *n as f64).collect())
        })
        .collect();
    let ds = pairs_from_scores(sys.factors.clone(), &models, &safety)?;
    let seed = ctx.seed(p, "probe.folds");
    let cv = cross_validate(&ds, p.cfg.probe.folds, p.cfg.probe.train, seed)?;
    let probe = train(&ds, p.cfg.probe.train)?;
    let train_acc = evaluate(&probe, &ds)?;
    let hints = sys.naming_hints(3);
    let contrib = to_bytes(|b| {
        let mut w = csv::Writer::from_writer(b);
        w.write_record(["factor", "weight", "top_values"])?;
        for (f, wt) in contributions(&probe) {
            let i = sys.factors.iter().position(|x| *x == f).unwrap();
            w.write_record([f, format!("{wt}"), hints[i].join(";")])?;
        }
        w.flush()?;
        Ok(())
    })?;
    ctx.write(p.out_path(PROBE_CSV), to_bytes(|b| probe.write_csv(b))?);
    ctx.write(p.out_path("contributions.csv"), contrib);
    let eval = json!({
        "models": models.len(),
        "pairs": ds.items.len(),
        "folds": cv,
        "spread": "sample SD of fold accuracies",
        "training_accuracy": train_acc,
    });
    ctx.write(p.out_path("probe_eval.json"), pretty(&eval)?);
    Ok(json!({"pairs": ds.items.len(), "cv_mean": cv.mean, "cv_sd": cv.sd}))
}

pub(super) fn distill(p: &Pipeline, ctx: &mut StepContext) -> Result<Value> {
    let sys = read_system(p, ctx)?;
    let path = p.require(&p.cfg.paths.triplets)?;
    let triplets = alignment::read_triplets(&ctx.read_input(p, &path)?[..])?;
    let gw = p.gateway()?;
    let ms = alignment::measure_triplets(&triplets, &sys.values, &gw)?;
    let target = alignment::distill_target(&ms, &sys.values)?;
    let objective = alignment::objective(&target.target, &ms)?;
    let mut measured = Vec::new();
    for m in &ms {
        serde_json::to_writer(&mut measured, m)?;
        measured.push(b'\n');
    }
    ctx.write(p.out_path("triplet_measurements.jsonl"), measured);
    ctx.write(p.out_path(TARGET), to_bytes(|b| target.write_csv(b))?);
    Ok(json!({"triplets": triplets.len(), "objective": objective}))
}

pub(super) fn reward(p: &Pipeline, ctx: &mut StepContext) -> Result<Value> {
    #[derive(Deserialize)]
    struct Candidates {
        prompt: String,
        candidates: Vec<String>,
    }
    let tpath = p.require(&p.cfg.paths.out.join(TARGET))?;
    let target = TargetVector::read_csv(&ctx.read_input(p, &tpath)?[..])?;
    let cpath = p.require(&p.cfg.paths.candidates)?;
    let bytes = ctx.read_input(p, &cpath)?;
    let text = String::from_utf8_lossy(&bytes);
    let gw = p.gateway()?;
    let mut out = Vec::new();
    let mut total = 0.0;
    let mut n = 0usize;
    for (line_no, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let c: Candidates = serde_json::from_str(line).map_err(|e| Error::Parse {
            source_name: p.display_path(&cpath),
            line: line_no + 1,
            message: e.to_string(),
        })?;
        let (i, r) = alignment::best_of_n_select(&c.prompt, &c.candidates, &target, p.cfg.alignment.mask_threshold, &gw)?;
        let first = alignment::reward_response(&c.prompt, &c.candidates[0], &target, p.cfg.alignment.mask_threshold, &gw)?;
        serde_json::to_writer(
            &mut out,
            &json!({"prompt": c.prompt, "chosen_index": i, "chosen": c.candidates[i], "reward": r, "first_reward": first}),
        )?;
        out.push(b'\n');
        total += r;
        n += 1;
    }
    if n == 0 {
        return Err(Error::invalid("no candidate sets"));
    }
    ctx.write(p.out_path("rewards.jsonl"), out);
    Ok(json!({"prompts": n, "mean_reward": total / n as f64}))
}

pub(super) fn report(p: &Pipeline, ctx: &mut StepContext) -> Result<Value> {
    let st = read_structure(p, ctx)?;
    let mut figures = vec![
        ("scree", report::scree(&st.initial_eigenvalues, st.elbow)),
        (
            "heatmap",
            report::heatmap(
                &st.values,
                &nalgebra::DMatrix::from_fn(st.values.len(), st.values.len(), |i, j| st.correlation[i][j]),
            ),
        ),
        ("dendrogram", report::dendrogram(&st.dendrogram)),
    ];
    let cpath = p.resolve(&p.cfg.paths.out.join(CIRCUMPLEX_JSON));
    if cpath.exists() {
        let c: CircumplexSummary = serde_json::from_slice(&ctx.read_input(p, &cpath)?)?;
        figures.push(("circumplex", report::circumplex(&c.fit)));
    } else {
        log::warn!("no circumplex fit found; skipping that figure");
    }
    let names: Vec<&str> = figures.iter().map(|(n, _)| *n).collect();
    let dir = p.out_dir().join("figures");
    for (name, fig) in &figures {
        ctx.write(dir.join(format!("{name}.svg")), fig.svg.clone().into_bytes());
        ctx.write(dir.join(format!("{name}.csv")), fig.csv.clone().into_bytes());
    }
    Ok(json!({"figures": names, "elbow": st.elbow}))
}
