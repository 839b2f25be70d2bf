//! Acceptance checks for the whole lab. Every test prints one `PASS` or
//! `FAIL` line to stdout (uncaptured) before asserting.
//!
//! The experiment-backed checks share one standard run per modality and a
//! random control, computed once per process in a fresh directory under
//! `CARGO_TARGET_TMPDIR`. Heavy work is serialized so wall-clock budgets are
//! measured on an otherwise idle core.

use std::collections::{BTreeMap, VecDeque};
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::{Duration, Instant};

use rand::Rng as _;

use compostruct::analysis::{read_report, RunRecord};
use compostruct::autodiff::{Tape, Tensor, Var};
use compostruct::harness::{self, model_spec, subnet_path, ExperimentConfig, Outcome, RoleSizes, SplitSizes};
use compostruct::language::{self, Vocabulary};
use compostruct::model::{batch_logits, evaluate, predictions, train_base, BatchInput, EncodedDataset, Model, ModelSpec, ParamKind};
use compostruct::rng;
use compostruct::sparsify::{
    ablate, anneal_beta, apply_subnetwork, mask_loss, train_mask, MaskConfig, MaskMode, MaskState, Provenance, SearchSpace,
    Subnetwork, SEARCH_GATE,
};
use compostruct::task::{Cell, GrammaticalNumber, Modality, Role, Rule, Split, Subroutine, TaskSpec};
use compostruct::vision::{self, render, Shape, VisionScene, GRID};
use compostruct::Error;

static HEAVY: Mutex<()> = Mutex::new(());

fn heavy() -> MutexGuard<'static, ()> {
    HEAVY.lock().unwrap_or_else(|e| e.into_inner())
}

fn verdict(name: &str, pass: bool, detail: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "{name}: {detail}");
}

/// Fresh per-process output root.
fn workspace() -> &'static Path {
    static DIR: OnceLock<PathBuf> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
        if dir.exists() {
            fs::remove_dir_all(&dir).unwrap();
        }
        fs::create_dir_all(&dir).unwrap();
        dir
    })
}

// ---------------------------------------------------------------------------
// gradients

const GRAD_CASES: usize = 20;
const GRAD_TOL: f64 = 1e-4;
const FD_STEP: f64 = 1e-5;

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

fn random_tensor(shape: &[usize], lo: f64, hi: f64, rng: &mut rng::Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Values bounded away from zero so the relu kink is never crossed.
fn off_zero_tensor(shape: &[usize], rng: &mut rng::Rng) -> Tensor {
    let n = shape.iter().product();
    let v = (0..n)
        .map(|_| {
            let m = rng.random_range(0.1..2.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), v).unwrap()
}

type Build = dyn Fn(&mut Tape, &[Var]) -> Var;

/// Worst relative error between tape gradients and central differences of
/// `sum(op(inputs) * r)` for a fixed random `r`.
fn primitive_error(inputs: &[Tensor], build: &Build, rng: &mut rng::Rng) -> f64 {
    let probe_shape = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone()).unwrap()).collect();
        let y = build(&mut tape, &vars);
        tape.value(y).shape().to_vec()
    };
    let r = random_tensor(&probe_shape, -1.0, 1.0, rng);
    let contract = |tape: &mut Tape, y: Var| {
        let r = tape.constant(r.clone()).unwrap();
        let z = tape.mul(y, r).unwrap();
        tape.sum(z).unwrap()
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone()).unwrap()).collect();
    let y = build(&mut tape, &vars);
    let loss = contract(&mut tape, y);
    tape.backward(loss).unwrap();
    let mut worst = 0.0f64;
    for (k, t) in inputs.iter().enumerate() {
        let analytic = tape.grad(vars[k]).unwrap().to_vec();
        for j in 0..t.numel() {
            let eval = |delta: f64| {
                let mut tape = Tape::new();
                let vars: Vec<Var> = inputs
                    .iter()
                    .enumerate()
                    .map(|(i, t)| {
                        let mut t = t.clone();
                        if i == k {
                            t.values_mut()[j] += delta;
                        }
                        tape.constant(t).unwrap()
                    })
                    .collect();
                let y = build(&mut tape, &vars);
                let l = contract(&mut tape, y);
                tape.value(l).values()[0]
            };
            let numeric = (eval(FD_STEP) - eval(-FD_STEP)) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic[j], numeric));
        }
    }
    worst
}

fn dims(rng: &mut rng::Rng) -> (usize, usize, usize) {
    (rng.random_range(1..5), rng.random_range(1..5), rng.random_range(1..5))
}

/// Gradient of the sparsity penalty, isolated as the difference of two
/// objectives, and of the full masked objective, over a subset of logits.
fn mask_objective_errors(rng: &mut rng::Rng) -> (f64, f64) {
    let model = Model::init(ModelSpec::vision(6), rng.random()).unwrap();
    let cfg = MaskConfig {
        start_layer: 3,
        ..Default::default()
    };
    let mut state = MaskState::new(&model, &cfg).unwrap();
    state.logits[0] = random_tensor(state.logits[0].shape(), -1.0, 1.0, rng);
    state.beta = rng.random_range(1.0..5.0);
    let batch = 3;
    let input = BatchInput::Dense(random_tensor(&[4 * batch, 6], -1.0, 1.0, rng));
    let targets: Vec<usize> = (0..batch).map(|_| rng.random_range(0..4)).collect();
    let lambda = rng.random_range(0.01..1.0);
    let (_, with) = mask_loss(&model, &state, &input, &targets, lambda).unwrap();
    let (_, without) = mask_loss(&model, &state, &input, &targets, 0.0).unwrap();
    let at = |s: &MaskState| mask_loss(&model, s, &input, &targets, lambda).unwrap().0;
    let mut worst_penalty = 0.0f64;
    let mut worst_total = 0.0f64;
    for _ in 0..40 {
        let j = rng.random_range(0..state.logits[0].numel());
        let mut up = state.clone();
        up.logits[0].values_mut()[j] += FD_STEP;
        let mut down = state.clone();
        down.logits[0].values_mut()[j] -= FD_STEP;
        let (u, d) = (at(&up), at(&down));
        let numeric_penalty = (u.penalty - d.penalty) / (2.0 * FD_STEP);
        let numeric_total = (u.total() - d.total()) / (2.0 * FD_STEP);
        worst_penalty = worst_penalty.max(rel_err(with[0][j] - without[0][j], numeric_penalty));
        worst_total = worst_total.max(rel_err(with[0][j], numeric_total));
    }
    (worst_penalty, worst_total)
}

#[test]
fn gradient_correctness() {
    let start = Instant::now();
    let mut rng = rng::stream(11, "acceptance/gradients");
    let mut errors: BTreeMap<&str, f64> = BTreeMap::new();
    let mut note = |name: &'static str, e: f64| {
        let w = errors.entry(name).or_insert(0.0);
        *w = w.max(e);
    };
    for _ in 0..GRAD_CASES {
        let (m, k, n) = dims(&mut rng);
        let a = random_tensor(&[m, k], -2.0, 2.0, &mut rng);
        let b = random_tensor(&[k, n], -2.0, 2.0, &mut rng);
        note("matmul", primitive_error(&[a, b], &|t, v| t.matmul(v[0], v[1]).unwrap(), &mut rng));

        let a = random_tensor(&[m, n], -2.0, 2.0, &mut rng);
        let b = random_tensor(&[m, n], -2.0, 2.0, &mut rng);
        note("add", primitive_error(&[a.clone(), b.clone()], &|t, v| t.add(v[0], v[1]).unwrap(), &mut rng));
        note("mul", primitive_error(&[a.clone(), b], &|t, v| t.mul(v[0], v[1]).unwrap(), &mut rng));
        let row = random_tensor(&[n], -2.0, 2.0, &mut rng);
        note("add_row", primitive_error(&[a.clone(), row], &|t, v| t.add(v[0], v[1]).unwrap(), &mut rng));

        let factor = rng.random_range(-3.0..3.0);
        note("scale", primitive_error(&[a.clone()], &move |t, v| t.scale(v[0], factor).unwrap(), &mut rng));
        note("sum", primitive_error(&[a.clone()], &|t, v| t.sum(v[0]).unwrap(), &mut rng));
        note("reshape", primitive_error(&[a.clone()], &move |t, v| t.reshape(v[0], &[n, m]).unwrap(), &mut rng));
        let s = random_tensor(&[m, n], -4.0, 4.0, &mut rng);
        note("sigmoid", primitive_error(&[s], &|t, v| t.sigmoid(v[0]).unwrap(), &mut rng));
        let r = off_zero_tensor(&[m, n], &mut rng);
        note("relu", primitive_error(&[r], &|t, v| t.relu(v[0]).unwrap(), &mut rng));

        let (vocab, dim) = (rng.random_range(2..6), rng.random_range(1..4));
        let seq = rng.random_range(1..4);
        let ids: Vec<usize> = (0..seq * rng.random_range(1..4)).map(|_| rng.random_range(0..vocab)).collect();
        let table = random_tensor(&[vocab, dim], -1.0, 1.0, &mut rng);
        note(
            "embedding",
            primitive_error(&[table], &move |t, v| t.embedding(v[0], &ids, seq).unwrap(), &mut rng),
        );

        let classes = rng.random_range(2..6);
        let targets: Vec<usize> = (0..m).map(|_| rng.random_range(0..classes)).collect();
        let logits = random_tensor(&[m, classes], -3.0, 3.0, &mut rng);
        note(
            "softmax_cross_entropy",
            primitive_error(&[logits], &move |t, v| t.softmax_cross_entropy(v[0], &targets).unwrap(), &mut rng),
        );

        let emb = random_tensor(&[4 * m, rng.random_range(2..6)], -1.0, 1.0, &mut rng);
        note("odd_one_out_logits", primitive_error(&[emb], &|t, v| batch_logits(t, v[0]).unwrap(), &mut rng));

        let (penalty, total) = mask_objective_errors(&mut rng);
        note("sparsity_penalty", penalty);
        note("masked_objective", total);
    }
    let elapsed = start.elapsed();
    let worst = errors.values().cloned().fold(0.0, f64::max);
    let detail = format!(
        "{} checks x {GRAD_CASES} cases, worst relative error {worst:.2e} ({}), {:.1}s",
        errors.len(),
        errors
            .iter()
            .map(|(k, v)| format!("{k} {v:.1e}"))
            .collect::<Vec<_>>()
            .join(", "),
        elapsed.as_secs_f64()
    );
    verdict(
        "gradient correctness",
        worst < GRAD_TOL && elapsed < Duration::from_secs(30),
        &detail,
    );
}

// ---------------------------------------------------------------------------
// base-model gate

const BASE_BUDGET: Duration = Duration::from_secs(15 * 60);

#[test]
fn base_model_gate() {
    let _guard = heavy();
    let cfg = ExperimentConfig {
        out: workspace().join("gate"),
        ..Default::default()
    };
    let cache = workspace().join("cache");
    let mut lines = Vec::new();
    let mut pass = true;
    for rule in Rule::all() {
        let sizes = cfg.sizes.for_rule(rule).base;
        let get = |split, size| harness::dataset(&cache, &TaskSpec::new(rule, Role::Base, split, size).unwrap(), cfg.data_seed).unwrap();
        let (train, val, test) = (
            get(Split::Train, sizes.train),
            get(Split::Val, sizes.val),
            get(Split::Test, sizes.test),
        );
        let train_cfg = cfg.train.for_rule(rule, 0);
        let start = Instant::now();
        let accuracy = match train_base(model_spec(rule), &train, &val, &test, &train_cfg) {
            Ok(t) => t.test_accuracy,
            Err(Error::BaseModelBelowThreshold { accuracy, .. }) => accuracy,
            Err(e) => panic!("{rule}: {e}"),
        };
        let took = start.elapsed();
        pass &= accuracy >= 0.90 && took < BASE_BUDGET;
        lines.push(format!("{rule} {accuracy:.3} in {:.0}s", took.as_secs_f64()));
    }
    verdict("base-model gate", pass, &lines.join(", "));
}

// ---------------------------------------------------------------------------
// shared standard runs

const MASK_EPOCHS: usize = 30;

fn search_space() -> SearchSpace {
    SearchSpace {
        start_layers: vec![1, 2],
        ..SearchSpace::default()
    }
}

fn shared_config(name: &str, rule: Rule) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        name: name.into(),
        rules: vec![rule],
        seeds: vec![0, 1, 2],
        repeats: 3,
        mask: MaskConfig {
            epochs: MASK_EPOCHS,
            ..MaskConfig::default()
        },
        search: search_space(),
        out: workspace().to_path_buf(),
        ..ExperimentConfig::default()
    };
    if rule.modality() == Modality::Language {
        let family = cfg.sizes.for_rule(rule);
        cfg.sizes.language = Some(RoleSizes {
            mask_train: SplitSizes::new(2500, family.mask_train.val, family.mask_train.test),
            ..family
        });
    }
    cfg
}

struct Shared {
    vision: (ExperimentConfig, Outcome),
    language: (ExperimentConfig, Outcome),
    control: Outcome,
}

const VISION_RULE: Rule = Rule::NumberContact;
const LANGUAGE_RULE: Rule = Rule::SubjectVerb(GrammaticalNumber::Singular);

fn shared() -> Result<&'static Shared, String> {
    static SHARED: OnceLock<Result<Shared, String>> = OnceLock::new();
    SHARED
        .get_or_init(|| {
            let _guard = heavy();
            let run = || -> compostruct::Result<Shared> {
                let v = shared_config("vision", VISION_RULE);
                let vo = harness::run_experiment(&v)?;
                let control = harness::run_random_control(&v)?;
                let l = shared_config("language", LANGUAGE_RULE);
                let lo = harness::run_experiment(&l)?;
                Ok(Shared {
                    vision: (v, vo),
                    language: (l, lo),
                    control,
                })
            };
            run().map_err(|e| e.to_string())
        })
        .as_ref()
        .map_err(Clone::clone)
}

fn shared_or_fail(name: &str) -> &'static Shared {
    match shared() {
        Ok(s) => s,
        Err(e) => {
            verdict(name, false, &format!("experiment did not run: {e}"));
            unreachable!()
        }
    }
}

#[test]
fn subnetwork_gate() {
    let name = "subnetwork gate";
    let s = shared_or_fail(name);
    let mut lines = Vec::new();
    let mut pass = true;
    for (cfg, _) in [&s.vision, &s.language] {
        let cache = cfg.cache_dir();
        for &rule in &cfg.rules {
            let sizes = cfg.sizes.for_rule(rule).mask_train;
            for sr in rule.subroutines() {
                let task = TaskSpec::new(rule, Role::MaskTrain(sr), Split::Val, sizes.val).unwrap();
                let mask_val = harness::dataset(&cache, &task, cfg.data_seed).unwrap();
                for &seed in &cfg.seeds {
                    let dir = cfg.branch_dir(rule, seed);
                    let path = subnet_path(&dir, sr, 0);
                    let acc = if path.exists() {
                        let (base, _) = compostruct::model::load_checkpoint(&dir.join("base.ckpt")).unwrap();
                        let sub = Subnetwork::load(&path).unwrap();
                        Some(evaluate(&apply_subnetwork(&base, &sub).unwrap(), &mask_val).unwrap())
                    } else {
                        None
                    };
                    pass &= acc.is_some_and(|a| a >= SEARCH_GATE);
                    lines.push(match acc {
                        Some(a) => format!("{rule}/{seed}/{sr} {a:.3}"),
                        None => format!("{rule}/{seed}/{sr} no winner"),
                    });
                }
            }
        }
    }
    verdict(name, pass, &lines.join(", "));
}

fn records_of<'a>(outcome: &'a Outcome, rule: Rule, sr: Subroutine) -> Vec<&'a RunRecord> {
    outcome
        .records
        .iter()
        .filter(|r| r.rule == rule && r.subroutine == sr)
        .collect()
}

/// (rule, subroutine) groups of a report that show the full signature.
fn signature_groups(outcome: &Outcome) -> Vec<(Rule, Subroutine)> {
    outcome
        .report
        .iter()
        .flat_map(|r| &r.summaries)
        .filter(|d| d.signature && d.runs == 9 && d.positive_sub >= 7)
        .map(|d| (d.rule, d.subroutine))
        .collect()
}

fn describe_report(outcome: &Outcome) -> String {
    let Some(report) = &outcome.report else {
        return format!("no report ({})", outcome.failures.join("; "));
    };
    report
        .summaries
        .iter()
        .map(|d| {
            format!(
                "{}/{} d_sub {:+.3} ({}/{}) d_abl {:+.3} ({}/{}) {}",
                d.rule,
                d.subroutine,
                d.mean_delta_sub,
                d.positive_sub,
                d.runs,
                d.mean_delta_abl,
                d.negative_abl,
                d.runs,
                d.verdict.describe()
            )
        })
        .collect::<Vec<_>>()
        .join("; ")
}

#[test]
fn compositionality_signature() {
    let name = "compositionality signature";
    let s = shared_or_fail(name);
    let vision = signature_groups(&s.vision.1);
    let language = signature_groups(&s.language.1);
    let detail = format!(
        "vision [{}] language [{}]",
        describe_report(&s.vision.1),
        describe_report(&s.language.1)
    );
    verdict(name, !vision.is_empty() && !language.is_empty(), &detail);
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

#[test]
fn random_control_separation() {
    let name = "random control separation";
    let s = shared_or_fail(name);
    let groups = signature_groups(&s.vision.1);
    let mut pass = !groups.is_empty();
    let mut lines = Vec::new();
    for (rule, sr) in groups {
        let control = records_of(&s.control, rule, sr);
        let trained = records_of(&s.vision.1, rule, sr);
        let ct = mean(control.iter().map(|r| r.acc_abl_target));
        let co = mean(control.iter().map(|r| r.acc_abl_other));
        let to = mean(trained.iter().map(|r| r.acc_abl_other));
        pass &= !control.is_empty() && ct <= 0.35 && co <= 0.35 && to >= 0.60;
        lines.push(format!(
            "{rule}/{sr}: control ablated target {ct:.3} other {co:.3} ({} runs), trained ablated other {to:.3}",
            control.len()
        ));
    }
    if lines.is_empty() {
        lines.push("no vision group shows the signature".into());
    }
    verdict(name, pass, &lines.join("; "));
}

#[test]
fn overlap_ordering() {
    let name = "overlap ordering";
    let s = shared_or_fail(name);
    let mut lines = Vec::new();
    let mut checked = 0;
    let mut pass = true;
    for (_, outcome) in [&s.vision, &s.language] {
        let rules: Vec<Rule> = signature_groups(outcome).iter().map(|g| g.0).collect();
        for entry in outcome.overlap.iter().filter(|e| rules.contains(&e.rule)) {
            let o = &entry.overlap;
            checked += 1;
            pass &= o.ordering_holds;
            let within: Vec<String> = (0..o.layers.len())
                .map(|i| format!("{:.2}", mean(o.within.iter().map(|(_, v)| v[i]))))
                .collect();
            let between: Vec<String> = o.between.iter().map(|b| format!("{b:.2}")).collect();
            lines.push(format!(
                "{}/{} layers {:?} within {:?} between {:?}",
                entry.rule, entry.seed, o.layers, within, between
            ));
        }
    }
    if checked == 0 {
        lines.push("no model with the signature has two subroutines to compare".into());
    }
    verdict(name, pass && checked > 0, &lines.join("; "));
}

// ---------------------------------------------------------------------------
// mask algebra

fn random_subnet(model: &Model, start: usize, rng: &mut rng::Rng) -> Subnetwork {
    let prov = Provenance {
        base_model_id: "acceptance".into(),
        rule: Rule::InsideContact,
        subroutine: Some(Subroutine::Inside),
        config: MaskConfig::default(),
        seed: 0,
        repeat: 0,
    };
    let mut sub = Subnetwork::uniform(model, start, true, prov).unwrap();
    let p = rng.random_range(0.05..0.95);
    for m in &mut sub.masks {
        for b in &mut m.bits {
            *b = rng.random_bool(p);
        }
    }
    sub
}

fn bits(model: &Model) -> Vec<Vec<u64>> {
    model
        .params
        .iter()
        .map(|p| p.tensor.values().iter().map(|v| v.to_bits()).collect())
        .collect()
}

#[test]
fn mask_algebra() {
    let mut rng = rng::stream(7, "acceptance/mask-algebra");
    let mut failures: Vec<String> = Vec::new();
    let mut checks = 0usize;
    let mut expect = |ok: bool, what: String| {
        checks += 1;
        if !ok {
            failures.push(what);
        }
    };
    let specs = [
        ModelSpec::vision(vision::PIXELS),
        ModelSpec::language(language::builtin().0.size(), language::MAX_LEN),
    ];

    for spec in &specs {
        for trial in 0..5 {
            let model = Model::init(spec.clone(), trial).unwrap();
            for start in 0..model.num_layers() {
                let masked = model.masked_params(start).unwrap();
                expect(
                    masked.iter().all(|&i| model.params[i].kind == ParamKind::Weight),
                    format!("start {start}: a bias is maskable"),
                );
                let sub = random_subnet(&model, start, &mut rng);
                let kept = apply_subnetwork(&model, &sub).unwrap();
                let removed = ablate(&model, &sub).unwrap();
                for (i, p) in model.params.iter().enumerate() {
                    let (k, r) = (kept.params[i].tensor.values(), removed.params[i].tensor.values());
                    if masked.contains(&i) {
                        let sums_back = p.tensor.values().iter().zip(k.iter().zip(r)).all(|(w, (a, b))| a + b == *w);
                        expect(sums_back, format!("partition identity fails on {}", p.name));
                    } else {
                        let same = |t: &Tensor| t.values().iter().zip(p.tensor.values()).all(|(a, b)| a.to_bits() == b.to_bits());
                        expect(
                            same(&kept.params[i].tensor) && same(&removed.params[i].tensor),
                            format!("unmasked {} changed", p.name),
                        );
                    }
                }
            }
        }
    }

    // Schedule endpoints and monotonicity.
    for epochs in [2, 3, 10, 30, 90, 250] {
        let cfg = MaskConfig {
            epochs,
            ..MaskConfig::default()
        };
        let betas: Vec<f64> = (0..epochs).map(|e| anneal_beta(e, &cfg).unwrap()).collect();
        expect(betas[0] == 1.0 && betas[epochs - 1] == 200.0, format!("endpoints at {epochs} epochs: {betas:?}"));
        expect(betas.windows(2).all(|w| w[0] < w[1]), format!("schedule not increasing at {epochs} epochs"));
    }

    // Hard and soft masks agree at beta_max once every logit is decided.
    let task = TaskSpec::new(Rule::InsideContact, Role::Base, Split::Val, 150).unwrap();
    let data = EncodedDataset::encode(&vision::build_dataset(&task, 3).unwrap()).unwrap();
    let model = Model::init(specs[0].clone(), 5).unwrap();
    for start in 0..model.num_layers() {
        let mut state = MaskState::new(
            &model,
            &MaskConfig {
                start_layer: start,
                ..MaskConfig::default()
            },
        )
        .unwrap();
        for t in &mut state.logits {
            for v in t.values_mut() {
                let m = rng.random_range(0.05..1.0);
                *v = if rng.random_bool(0.5) { m } else { -m };
            }
        }
        expect(state.min_abs_logit() >= 0.05, "logit below 0.05".into());
        let soft = state.soft_model(&model, 200.0).unwrap();
        let hard = state.hard_model(&model).unwrap();
        let (ps, ph) = (predictions(&soft, &data).unwrap(), predictions(&hard, &data).unwrap());
        let agree = ps.iter().zip(&ph).filter(|(a, b)| a == b).count();
        expect(agree == ps.len(), format!("start {start}: {agree}/{} predictions agree", ps.len()));
        let input = BatchInput::Dense(random_tensor(&[4, vision::PIXELS], 0.0, 1.0, &mut rng));
        let e_soft = compostruct::sparsify::masked_forward(&model, &state, &input, MaskMode::Soft(200.0)).unwrap();
        let e_hard = compostruct::sparsify::masked_forward(&model, &state, &input, MaskMode::Hard).unwrap();
        let scale = e_hard.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        let gap = e_soft.iter().zip(&e_hard).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        expect(gap <= 1e-2 * scale, format!("start {start}: soft/hard embeddings differ by {gap}"));
    }

    // Mask training never touches the base weights.
    let lang = TaskSpec::new(LANGUAGE_RULE, Role::MaskTrain(Subroutine::Subject), Split::Train, 64).unwrap();
    let data = EncodedDataset::encode(&language::build_dataset(&lang, 0).unwrap()).unwrap();
    let model = Model::init(specs[1].clone(), 9).unwrap();
    let before = bits(&model);
    let cfg = MaskConfig {
        start_layer: 0,
        epochs: 3,
        batch_size: 16,
        ..MaskConfig::default()
    };
    let prov = Provenance {
        base_model_id: "acceptance".into(),
        rule: LANGUAGE_RULE,
        subroutine: Some(Subroutine::Subject),
        config: cfg.clone(),
        seed: 1,
        repeat: 0,
    };
    let run = train_mask(&model, &data, &cfg, prov).unwrap();
    expect(bits(&model) == before, "base weights changed during mask training".into());
    let kept = apply_subnetwork(&model, &run.subnetwork).unwrap();
    for (p, q) in model.params.iter().zip(&kept.params) {
        if p.kind == ParamKind::Bias {
            let same = p.tensor.values().iter().zip(q.tensor.values()).all(|(a, b)| a.to_bits() == b.to_bits());
            expect(same, format!("bias {} changed by a trained mask", p.name));
        }
    }
    expect(
        run.subnetwork.masks.iter().all(|m| model.params[m.param].kind == ParamKind::Weight),
        "a trained mask covers a bias".into(),
    );

    let detail = if failures.is_empty() {
        format!("{checks} checks")
    } else {
        format!("{} of {checks} checks failed: {}", failures.len(), failures.join("; "))
    };
    verdict("mask algebra", failures.is_empty(), &detail);
}

// ---------------------------------------------------------------------------
// generator oracles

fn shape_pixels(shape: &Shape) -> Vec<bool> {
    render(&[*shape], GRID).iter().map(|&v| v != 0.0).collect()
}

/// Pixels enclosed by `outline`: not reachable from the border through
/// 4-connected non-outline pixels, and not on the outline.
fn enclosed(outline: &[bool]) -> Vec<bool> {
    let g = GRID as usize;
    let mut reached = vec![false; g * g];
    let mut queue = VecDeque::new();
    for i in 0..g {
        for (x, y) in [(i, 0), (i, g - 1), (0, i), (g - 1, i)] {
            let p = y * g + x;
            if !outline[p] && !reached[p] {
                reached[p] = true;
                queue.push_back((x, y));
            }
        }
    }
    while let Some((x, y)) = queue.pop_front() {
        let mut visit = |nx: usize, ny: usize| {
            let p = ny * g + nx;
            if !outline[p] && !reached[p] {
                reached[p] = true;
                queue.push_back((nx, ny));
            }
        };
        if x > 0 {
            visit(x - 1, y);
        }
        if x + 1 < g {
            visit(x + 1, y);
        }
        if y > 0 {
            visit(x, y - 1);
        }
        if y + 1 < g {
            visit(x, y + 1);
        }
    }
    (0..g * g).map(|p| !reached[p] && !outline[p]).collect()
}

fn pixel_inside(a: &[bool], b: &[bool]) -> bool {
    let interior = enclosed(b);
    a.iter().zip(&interior).all(|(&on, &inner)| !on || inner)
}

fn pixel_contact(a: &[bool], b: &[bool]) -> bool {
    let g = GRID as i32;
    let on = |v: &[bool]| -> Vec<(i32, i32)> { (0..g * g).filter(|&p| v[p as usize]).map(|p| (p % g, p / g)).collect() };
    let (pa, pb) = (on(a), on(b));
    pa.iter()
        .any(|&(ax, ay)| pb.iter().any(|&(bx, by)| (ax - bx).abs().max((ay - by).abs()) <= 1))
}

fn pixel_cell(scene: &VisionScene, rule: Rule, number: Option<u32>) -> Cell {
    let rasters: Vec<Vec<bool>> = scene.shapes.iter().map(shape_pixels).collect();
    let mut inside = false;
    let mut contact = false;
    for i in 0..rasters.len() {
        for j in 0..rasters.len() {
            if i != j {
                inside |= pixel_inside(&rasters[i], &rasters[j]);
                if i < j {
                    contact |= pixel_contact(&rasters[i], &rasters[j]);
                }
            }
        }
    }
    let count_ok = number.is_some_and(|n| scene.shapes.len() == n as usize);
    match rule {
        Rule::InsideContact => Cell(inside, contact),
        Rule::NumberContact => Cell(count_ok, contact),
        Rule::InsideNumber => Cell(inside, count_ok),
        _ => unreachable!(),
    }
}

/// Unique violator of the role's rule, also checking the odd item's cell.
fn oracle_odd(rule: Rule, role: Role, cells: &[Cell]) -> Option<usize> {
    let factor = |sr: Subroutine| rule.subroutines().iter().position(|&s| s == sr).unwrap();
    let follows = |c: Cell| match role {
        Role::MaskTrain(sr) => c.factor(factor(sr)),
        _ => c == Cell(true, true),
    };
    let violators: Vec<usize> = (0..cells.len()).filter(|&i| !follows(cells[i])).collect();
    let [odd] = violators[..] else {
        return None;
    };
    let c = cells[odd];
    let shape_ok = match role {
        Role::TestTarget(sr) => !c.factor(factor(sr)) && c.factor(1 - factor(sr)),
        Role::TestOther(sr) => c.factor(factor(sr)) && !c.factor(1 - factor(sr)),
        _ => true,
    };
    shape_ok.then_some(odd)
}

fn roles(rule: Rule) -> Vec<Role> {
    let [a, b] = rule.subroutines();
    vec![
        Role::Base,
        Role::MaskTrain(a),
        Role::MaskTrain(b),
        Role::TestTarget(a),
        Role::TestTarget(b),
    ]
}

fn slot_report(counts: &[usize; 4]) -> (bool, String) {
    let n: usize = counts.iter().sum();
    let se = (0.25 * 0.75 / n as f64).sqrt();
    let freqs: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
    let ok = freqs.iter().all(|f| (f - 0.25).abs() <= 3.0 * se);
    (ok, format!("slots {:.3?} (3 SE {:.3})", freqs, 3.0 * se))
}

/// Agreement features read off the surface form with independent word lists.
struct SurfaceOracle {
    nouns: BTreeMap<String, GrammaticalNumber>,
    main_verbs: BTreeMap<String, GrammaticalNumber>,
    pronouns: BTreeMap<String, GrammaticalNumber>,
}

impl SurfaceOracle {
    fn new(v: &Vocabulary) -> Self {
        let split = |pairs: &[(String, String)]| {
            let mut m = BTreeMap::new();
            for (s, p) in pairs {
                m.insert(s.clone(), GrammaticalNumber::Singular);
                m.insert(p.clone(), GrammaticalNumber::Plural);
            }
            m
        };
        let mut main_verbs = split(&v.intransitive_verbs);
        main_verbs.extend(split(std::slice::from_ref(&v.copula)));
        let mut pronouns: BTreeMap<String, GrammaticalNumber> = v
            .singular_pronouns
            .iter()
            .map(|p| (p.clone(), GrammaticalNumber::Singular))
            .collect();
        pronouns.insert(v.plural_pronoun.clone(), GrammaticalNumber::Plural);
        Self {
            nouns: split(&v.nouns),
            main_verbs,
            pronouns,
        }
    }

    fn cell(&self, rule: Rule, surface: &[String]) -> Option<Cell> {
        let subject = surface.iter().find_map(|w| self.nouns.get(w))?;
        let (partition, agreeing) = match rule {
            Rule::SubjectVerb(p) => (p, surface.iter().rev().find_map(|w| self.main_verbs.get(w))?),
            Rule::Anaphora(p) => (p, self.pronouns.get(surface.last()?)?),
            _ => return None,
        };
        Some(Cell(*subject == partition, *agreeing == partition))
    }
}

#[test]
fn generator_oracles() {
    const VISION_TOTAL: usize = 4000;
    const LANGUAGE_TOTAL: usize = 4000;
    let vision_rules = [Rule::InsideContact, Rule::NumberContact, Rule::InsideNumber];
    let mut lines = Vec::new();
    let mut pass = true;

    let per = VISION_TOTAL.div_ceil(vision_rules.len() * 5);
    let (mut checked, mut verified) = (0, 0);
    let mut slots = [0usize; 4];
    for rule in vision_rules {
        for (k, role) in roles(rule).into_iter().enumerate() {
            let task = TaskSpec::new(rule, role, Split::Train, per).unwrap();
            let data = vision::build_dataset(&task, 100 + k as u64).unwrap();
            for ex in &data.examples {
                let cells: Vec<Cell> = ex.stimuli.iter().map(|s| pixel_cell(s, rule, ex.number)).collect();
                let shared_n = !rule.uses_number() || ex.number.is_some();
                checked += 1;
                slots[ex.odd_index] += 1;
                if shared_n && oracle_odd(rule, role, &cells) == Some(ex.odd_index) {
                    verified += 1;
                }
            }
        }
    }
    let (slot_ok, slot_line) = slot_report(&slots);
    pass &= verified == checked && checked >= VISION_TOTAL && slot_ok;
    lines.push(format!("vision {verified}/{checked} verified, {slot_line}"));

    let vocab = &language::builtin().0;
    let oracle = SurfaceOracle::new(vocab);
    let language_rules: Vec<Rule> = Rule::all().into_iter().filter(|r| r.modality() == Modality::Language).collect();
    let per = LANGUAGE_TOTAL.div_ceil(language_rules.len() * 5);
    let (mut checked, mut verified) = (0, 0);
    let mut slots = [0usize; 4];
    for &rule in &language_rules {
        for (k, role) in roles(rule).into_iter().enumerate() {
            let task = TaskSpec::new(rule, role, Split::Train, per).unwrap();
            let data = language::build_dataset(&task, 200 + k as u64).unwrap();
            for ex in &data.examples {
                let cells: Option<Vec<Cell>> = ex.stimuli.iter().map(|s| oracle.cell(rule, &s.surface)).collect();
                let tokens_ok = ex.stimuli.iter().all(|s| vocab.pad(vocab.tokenize(&s.text()).unwrap()).unwrap() == s.tokens);
                checked += 1;
                slots[ex.odd_index] += 1;
                if tokens_ok && cells.is_some_and(|c| oracle_odd(rule, role, &c) == Some(ex.odd_index)) {
                    verified += 1;
                }
            }
        }
    }
    let (slot_ok, slot_line) = slot_report(&slots);
    pass &= verified == checked && checked >= LANGUAGE_TOTAL && slot_ok;
    lines.push(format!("language {verified}/{checked} verified, {slot_line}"));
    verdict("generator oracles", pass, &lines.join("; "));
}

// ---------------------------------------------------------------------------
// command-line runs

const SMALL_RULE: Rule = Rule::Anaphora(GrammaticalNumber::Singular);

fn small_config(name: &str, seeds: Vec<u64>, repeats: usize) -> ExperimentConfig {
    ExperimentConfig {
        name: name.into(),
        rules: vec![SMALL_RULE],
        seeds,
        repeats,
        sizes: harness::DatasetSizes::uniform(SplitSizes::new(1000, 200, 200)),
        ..ExperimentConfig::default()
    }
}

fn run_cli(config: &ExperimentConfig, out: &Path, jobs: usize) -> (bool, Duration) {
    let path = out.with_extension("json");
    fs::create_dir_all(out).unwrap();
    fs::write(&path, serde_json::to_string_pretty(config).unwrap()).unwrap();
    let start = Instant::now();
    let status = Command::new(env!("CARGO_BIN_EXE_compostruct"))
        .arg("--config")
        .arg(&path)
        .arg("--out")
        .arg(out)
        .arg("--jobs")
        .arg(jobs.to_string())
        .arg("run-all")
        .env_remove("COMPOSTRUCT_CACHE")
        .stdout(std::process::Stdio::null())
        .status()
        .unwrap();
    (status.success(), start.elapsed())
}

#[test]
fn determinism_and_parallel_safety() {
    let _guard = heavy();
    let cfg = ExperimentConfig {
        mask: MaskConfig {
            epochs: 10,
            ..MaskConfig::default()
        },
        search: SearchSpace {
            learning_rates: vec![0.01],
            s0: vec![0.1, 0.0],
            start_layers: vec![1, 2],
        },
        ..small_config("determinism", vec![0, 1], 2)
    };
    let root = workspace().join("determinism");
    let runs: Vec<(PathBuf, bool)> = [("a", 1), ("b", 1), ("c", 4)]
        .iter()
        .map(|(tag, jobs)| {
            let out = root.join(tag);
            let (ok, _) = run_cli(&cfg, &out, *jobs);
            (out.join(&cfg.name), ok)
        })
        .collect();
    let read = |dir: &Path, f: &str| fs::read(dir.join(f)).ok();
    let all_ok = runs.iter().all(|(_, ok)| *ok);
    let (a, b, c) = (&runs[0].0, &runs[1].0, &runs[2].0);
    let same_seed = read(a, "summary.csv").is_some() && read(a, "summary.csv") == read(b, "summary.csv");
    let same_jobs = read(a, "report.json").is_some()
        && read(a, "report.json") == read(c, "report.json")
        && read(a, "summary.csv") == read(c, "summary.csv");
    verdict(
        "determinism and parallel safety",
        all_ok && same_seed && same_jobs,
        &format!("runs succeeded {all_ok}, repeat identical {same_seed}, jobs 1 vs 4 identical {same_jobs}"),
    );
}

#[test]
fn end_to_end_smoke() {
    let _guard = heavy();
    let cfg = small_config("smoke", vec![0], 1);
    let out = workspace().join("smoke");
    let (ok, took) = run_cli(&cfg, &out, 1);
    let dir = out.join(&cfg.name);
    let report = read_report(&dir);
    let well_formed = match &report {
        Ok(r) => {
            let header = fs::read_to_string(dir.join("summary.csv"))
                .ok()
                .and_then(|t| t.lines().next().map(str::to_string))
                .unwrap_or_default();
            !r.summaries.is_empty()
                && r.rows.len() == r.summaries.iter().map(|d| d.runs).sum::<usize>()
                && header == "rule,subroutine,seed,repeat,acc_sub_target,acc_sub_other,acc_abl_target,acc_abl_other,delta_sub,delta_abl,active,total"
                && ["overlap.json", "sparsity.csv", "manifest.json"].iter().all(|f| dir.join(f).exists())
        }
        Err(_) => false,
    };
    verdict(
        "end-to-end smoke",
        ok && well_formed && took < Duration::from_secs(20 * 60),
        &format!(
            "run-all exit ok {ok}, report well formed {well_formed}, {:.0}s",
            took.as_secs_f64()
        ),
    );
}
