use std::process::Command;

use compostruct::analysis::{clamp_accuracy, difference_metrics, iou_per_layer, RunRecord};
use compostruct::autodiff::{AdamConfig, AdamState, Tensor};
use compostruct::harness::ExperimentConfig;
use compostruct::language::{self, TaskFamily};
use compostruct::model::{odd_one_out_logits, predict, Architecture, Model, ModelSpec, ParamKind};
use compostruct::rng;
use compostruct::sparsify::{
    ablate, anneal_beta, apply_subnetwork, heaviside, pack_bits, unpack_bits, MaskConfig, Provenance, Subnetwork,
    TensorMask,
};
use compostruct::task::{Role, Rule, Split, TaskSpec};
use compostruct::vision;
use proptest::prelude::*;

fn tiny_spec() -> ModelSpec {
    ModelSpec {
        architecture: Architecture::VisionMlp,
        input_size: 6,
        token_dim: 0,
        seq_len: 0,
        widths: vec![5, 4, 3],
        backbone_dense: 1,
    }
}

fn provenance() -> Provenance {
    Provenance {
        base_model_id: "tiny".into(),
        rule: Rule::InsideContact,
        subroutine: None,
        config: MaskConfig::default(),
        seed: 0,
        repeat: 0,
    }
}

fn random_subnet(model: &Model, start: usize, seed: u64) -> Subnetwork {
    use rand::Rng as _;
    let mut rng = rng::stream(seed, "bits");
    let mut subnet = Subnetwork::uniform(model, start, true, provenance()).unwrap();
    for m in &mut subnet.masks {
        m.bits.iter_mut().for_each(|b| *b = rng.random_bool(0.5));
    }
    subnet
}

fn roles(rule: Rule) -> Vec<Role> {
    let mut out = vec![Role::Base];
    for sr in rule.subroutines() {
        out.extend([Role::MaskTrain(sr), Role::TestTarget(sr), Role::TestOther(sr)]);
    }
    out
}

fn mask_layer(bits: Vec<bool>) -> TensorMask {
    TensorMask {
        param: 0,
        name: "w".into(),
        shape: vec![bits.len()],
        bits,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn iou_symmetric_reflexive_bounded(pairs in prop::collection::vec(any::<(bool, bool)>(), 1..200)) {
        let a = vec![mask_layer(pairs.iter().map(|p| p.0).collect())];
        let b = vec![mask_layer(pairs.iter().map(|p| p.1).collect())];
        let ab = iou_per_layer(&a, &b).unwrap();
        let ba = iou_per_layer(&b, &a).unwrap();
        prop_assert_eq!(&ab, &ba);
        prop_assert!((0.0..=1.0).contains(&ab[0].iou));
        prop_assert!(ab[0].intersection <= ab[0].union);
        prop_assert_eq!(iou_per_layer(&a, &a).unwrap()[0].iou, 1.0);
    }

    #[test]
    fn deltas_stay_within_clamped_range(accs in prop::array::uniform4(0.0f64..=1.0)) {
        let record = RunRecord {
            base_model_id: "m".into(),
            config_hash: "h".into(),
            rule: Rule::InsideContact,
            subroutine: compostruct::task::Subroutine::Inside,
            seed: 0,
            repeat: 0,
            config: MaskConfig::default(),
            acc_sub_target: accs[0],
            acc_sub_other: accs[1],
            acc_abl_target: accs[2],
            acc_abl_other: accs[3],
            layers: vec![],
        };
        let d = difference_metrics(&record);
        for v in [d.delta_sub, d.delta_abl] {
            prop_assert!((-0.75..=0.75).contains(&v));
        }
        prop_assert_eq!(d.delta_sub, clamp_accuracy(accs[0]) - clamp_accuracy(accs[1]));
    }

    #[test]
    fn subnet_and_ablation_partition_the_base(seed in any::<u64>(), start in 0usize..3) {
        let model = Model::init(tiny_spec(), seed).unwrap();
        let subnet = random_subnet(&model, start, seed);
        let kept = apply_subnetwork(&model, &subnet).unwrap();
        let dropped = ablate(&model, &subnet).unwrap();
        let masked: Vec<usize> = subnet.masks.iter().map(|m| m.param).collect();
        for (i, p) in model.params.iter().enumerate() {
            let (k, d) = (kept.params[i].tensor.values(), dropped.params[i].tensor.values());
            if masked.contains(&i) {
                for ((w, a), b) in p.tensor.values().iter().zip(k).zip(d) {
                    prop_assert_eq!(a + b, *w);
                    prop_assert!(*a == 0.0 || *b == 0.0);
                }
            } else {
                prop_assert_eq!(k, p.tensor.values());
                prop_assert_eq!(d, p.tensor.values());
            }
        }
    }

    #[test]
    fn hard_mask_counts_positive_logits(s in prop::collection::vec(-1.0f64..1.0, 0..300)) {
        let bits: Vec<bool> = s.iter().map(|&v| heaviside(v)).collect();
        prop_assert_eq!(bits.iter().filter(|&&b| b).count(), s.iter().filter(|&&v| v > 0.0).count());
        prop_assert_eq!(unpack_bits(&pack_bits(&bits), bits.len()), bits);
    }

    #[test]
    fn beta_schedule_is_monotone_with_exact_endpoints(epochs in 2usize..300, beta_max in 1.5f64..1000.0) {
        let cfg = MaskConfig { epochs, beta_max, ..MaskConfig::default() };
        let betas: Vec<f64> = (0..epochs).map(|e| anneal_beta(e, &cfg).unwrap()).collect();
        prop_assert_eq!(betas[0], cfg.beta0);
        prop_assert_eq!(betas[epochs - 1], beta_max);
        prop_assert!(betas.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(anneal_beta(epochs, &cfg).is_err());
    }

    #[test]
    fn prediction_ignores_positive_rescaling(
        e in prop::array::uniform4(prop::collection::vec(-2.0f64..2.0, 3)),
        scale in 0.01f64..100.0,
    ) {
        let scaled = e.clone().map(|v| v.into_iter().map(|x| x * scale).collect::<Vec<_>>());
        let (a, b) = (odd_one_out_logits(&e), odd_one_out_logits(&scaled));
        // Skip near-ties, where rounding may pick a different argmax.
        let mut sorted = a;
        sorted.sort_by(f64::total_cmp);
        prop_assume!(sorted[3] - sorted[2] > 1e-9 * sorted[3].abs().max(1.0));
        prop_assert_eq!(predict(&a), predict(&b));
    }

    #[test]
    fn rle_roundtrips(bits in prop::collection::vec(any::<bool>(), 1..500)) {
        let raster: Vec<f64> = bits.iter().map(|&b| f64::from(u8::from(b))).collect();
        let runs = vision::rle_encode(&raster);
        prop_assert_eq!(vision::rle_decode(&runs, raster.len()).unwrap(), raster);
    }

    #[test]
    fn tensor_rejects_inconsistent_or_nonfinite_values(n in 1usize..20, bad in prop_oneof![Just(f64::NAN), Just(f64::INFINITY)]) {
        prop_assert!(Tensor::new(vec![n], vec![0.0; n + 1]).is_err());
        let mut v = vec![1.0; n];
        v[n / 2] = bad;
        prop_assert!(Tensor::new(vec![n], v).is_err());
    }

    #[test]
    fn adam_step_counter_increases(grads in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 4), 1..10)) {
        let mut state = AdamState::new(4, AdamConfig::with_learning_rate(0.01));
        let mut params = vec![0.5; 4];
        for (k, g) in grads.iter().enumerate() {
            state.step(&mut params, g).unwrap();
            prop_assert_eq!(state.step_count(), k as u64 + 1);
        }
        prop_assert!(state.step(&mut params, &[0.0; 3]).is_err());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn vision_examples_have_one_verified_violator(seed in any::<u64>(), r in 0usize..3, k in 0usize..7) {
        let rule = Rule::VISION[r];
        let role = roles(rule)[k % 7];
        let task = TaskSpec::new(rule, role, Split::Train, 1).unwrap();
        let ex = vision::generate_example(&task, &mut rng::stream(seed, "prop")).unwrap();
        prop_assert_eq!(ex.stimuli.len(), 4);
        for scene in &ex.stimuli {
            scene.verify().unwrap();
            prop_assert_eq!(scene.labels.count as usize, scene.shapes.len());
        }
        prop_assert_eq!(ex.number.is_some(), rule.uses_number());
        prop_assert_eq!(vision::recompute_odd_index(&ex).unwrap(), Some(ex.odd_index));
    }

    #[test]
    fn language_examples_have_one_verified_violator(seed in any::<u64>(), r in 0usize..4, k in 0usize..7) {
        let rule = Rule::LANGUAGE[r];
        let role = roles(rule)[k % 7];
        let family = TaskFamily::of(rule).unwrap();
        let task = TaskSpec::new(rule, role, Split::Val, 1).unwrap();
        let ex = language::generate_example(language::builtin_pool(family), &task, &mut rng::stream(seed, "prop")).unwrap();
        let vocab = &language::builtin().0;
        prop_assert_eq!(language::recompute_odd_index(vocab, &ex).unwrap(), Some(ex.odd_index));
        for s in &ex.stimuli {
            prop_assert_eq!(language::split_of(&s.surface), Split::Val);
        }
    }

    #[test]
    fn config_hash_ignores_output_and_threads(jobs in 1usize..16, out in "[a-z]{1,8}", seed in any::<u64>()) {
        let base = ExperimentConfig { data_seed: seed, ..ExperimentConfig::default() };
        let moved = ExperimentConfig { jobs, out: out.into(), ..base.clone() };
        prop_assert_eq!(base.hash(), moved.hash());
        let reseeded = ExperimentConfig { data_seed: seed.wrapping_add(1), ..base.clone() };
        prop_assert_ne!(base.hash(), reseeded.hash());
    }
}

#[test]
fn biases_are_never_maskable() {
    for spec in [tiny_spec(), ModelSpec::language(40, 12)] {
        let model = Model::init(spec, 3).unwrap();
        for p in &model.params {
            assert!(!(p.kind == ParamKind::Bias && p.maskable), "{}", p.name);
        }
        assert!(model.params.windows(2).all(|w| w[0].layer_index <= w[1].layer_index));
    }
}

#[test]
fn config_roundtrips_and_rejects_unknown_fields() {
    let cfg = ExperimentConfig::default();
    let json = serde_json::to_string(&cfg).unwrap();
    assert_eq!(serde_json::from_str::<ExperimentConfig>(&json).unwrap(), cfg);
    assert!(serde_json::from_str::<ExperimentConfig>(r#"{"seedz": [1]}"#).is_err());
    let partial: ExperimentConfig = serde_json::from_str(r#"{"name": "x", "repeats": 2}"#).unwrap();
    assert_eq!((partial.name.as_str(), partial.repeats), ("x", 2));
    assert!(ExperimentConfig { repeats: 0, ..cfg }.validate().is_err());
}

#[test]
fn cli_exits_with_code_2_on_bad_config() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, r#"{"name": "bad", "unknown_knob": true}"#).unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_compostruct"))
        .args(["--config".as_ref(), path.as_os_str(), "--out".as_ref(), dir.path().as_os_str(), "gen-data".as_ref()])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}
