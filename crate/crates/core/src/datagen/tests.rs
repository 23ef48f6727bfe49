use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;

use super::*;

fn small(train: usize, val: usize, test: usize, swaps: usize, ids: usize, seed: u64) -> DatasetConfig {
    DatasetConfig {
        num_identities: ids,
        train_contexts: train,
        val_contexts: val,
        test_contexts: test,
        swaps_per_context: swaps,
        d_face: 16,
        patch_pixels: 8,
        seed,
        ..DatasetConfig::default()
    }
}

fn build(cfg: &DatasetConfig) -> Result<Dataset, DataError> {
    let (g, t) = generate_gallery(cfg.num_identities, cfg.d_face, cfg.face_jitter, cfg.seed)?;
    generate_dataset(cfg, &g, &t)
}

#[test]
fn gallery_is_deterministic_and_named() {
    let (a, ta) = generate_gallery(10, 64, 0.3, 7).unwrap();
    let (b, tb) = generate_gallery(10, 64, 0.3, 7).unwrap();
    assert_eq!(serde_json::to_vec(&a).unwrap(), serde_json::to_vec(&b).unwrap());
    assert_eq!(ta, tb);
    assert_eq!(a.len(), 10);
    assert_eq!(ta.anchors.len(), 10);
    let names: BTreeSet<&str> = a.iter().map(|(n, _)| n).collect();
    assert_eq!(names.len(), 10);
    assert!(names.contains("person_0001") && names.contains("person_0010"));
}

#[test]
fn gallery_needs_two_identities() {
    assert!(matches!(generate_gallery(1, 8, 0.1, 0), Err(DataError::Config(_))));
}

#[test]
fn anchors_are_spread_out() {
    let (_, table) = generate_gallery(100, 64, 0.3, 11).unwrap();
    let anchors: Vec<&Vec<f64>> = table.anchors.values().collect();
    let mut worst: f64 = 0.0;
    for i in 0..anchors.len() {
        for j in i + 1..anchors.len() {
            let c: f64 = anchors[i].iter().zip(anchors[j]).map(|(a, b)| a * b).sum();
            worst = worst.max(c.abs());
        }
    }
    assert!(worst < 0.6, "max |cos| = {worst}");
}

#[test]
fn twelve_contexts_four_swaps() {
    let ds = build(&small(6, 3, 3, 4, 16, 1)).unwrap();
    assert_eq!(ds.manifest.images.len(), 48);
    assert_eq!(ds.patches.len(), 48);
    assert_eq!(ds.manifest.captions.len(), 48 * 3 * 5);
    let report = validate_manifest(&ds.manifest);
    assert!(report.is_clean(), "{report:?}");
}

#[test]
fn generation_is_deterministic() {
    let cfg = small(6, 3, 3, 4, 16, 3);
    let a = build(&cfg).unwrap();
    let b = build(&cfg).unwrap();
    assert_eq!(a.manifest.hash(), b.manifest.hash());
    assert_eq!(a, b);
    let c = build(&small(6, 3, 3, 4, 16, 4)).unwrap();
    assert_ne!(a.manifest.hash(), c.manifest.hash());
}

#[test]
fn default_config_test_split_shape() {
    let ds = build(&DatasetConfig::default()).unwrap();
    let m = &ds.manifest;
    assert!(validate_manifest(m).is_clean());
    let mut per_identity: BTreeMap<u32, usize> = BTreeMap::new();
    for img in m.images_in(Split::Test) {
        *per_identity.entry(img.identity_id).or_default() += 1;
    }
    assert_eq!(per_identity.len(), 6);
    assert!(per_identity.values().all(|&n| n == 2));
    let train_ids: BTreeSet<u32> = m.images_in(Split::Train).map(|i| i.identity_id).collect();
    assert_eq!(train_ids.len(), 16);
}

#[test]
fn contexts_and_identities_are_disentangled() {
    let ds = build(&small(4, 2, 2, 3, 6, 5)).unwrap();
    let pp = 8;
    let background = |id: u32| -> Vec<f64> {
        let data = ds.patches[id as usize].data();
        (0..GRID_PATCHES)
            .filter(|c| !FACE_PATCHES.contains(c))
            .flat_map(|c| data[c * pp..(c + 1) * pp].to_vec())
            .collect()
    };
    let imgs = &ds.manifest.images;
    for a in imgs {
        for b in imgs {
            let same = background(a.image_id) == background(b.image_id);
            assert_eq!(same, a.context_id == b.context_id);
            if a.identity_id != b.identity_id {
                let face = |id: u32| ds.patches[id as usize].data()[FACE_PATCHES[0] * pp..(FACE_PATCHES[0] + 1) * pp].to_vec();
                assert_ne!(face(a.image_id), face(b.image_id));
            }
        }
    }
}

#[test]
fn render_dataset_reproduces_tensors() {
    let cfg = small(4, 2, 2, 3, 6, 8);
    let ds = build(&cfg).unwrap();
    let (_, table) = generate_gallery(6, 16, cfg.face_jitter, 8).unwrap();
    let again = render_dataset(&ds.manifest, &table, &ds.render).unwrap();
    assert_eq!(again, ds);
}

#[test]
fn appearance_is_mostly_stable_across_samples_of_one_identity() {
    let ds = build(&DatasetConfig::default()).unwrap();
    let (_, table) = generate_gallery(16, 64, 0.3, 0).unwrap();
    let mut agree = 0;
    let mut total = 0;
    let mut codes = BTreeSet::new();
    for id in 0..16 {
        let anchor = ds.render.appearance(table.anchor(id).unwrap());
        codes.insert(anchor.clone());
        for s in 0..20 {
            let f = table.face_features(id, s).unwrap();
            agree += usize::from(ds.render.appearance(&f) == anchor);
            total += 1;
        }
    }
    assert!(agree as f64 / total as f64 > 0.5, "{agree}/{total}");
    assert!(codes.len() >= 8);
    let phrase = grammar::appearance_phrase(&[true, false, true, true, false, false]);
    assert_eq!(phrase, "a young fair-haired smiling bearded straight-haired tanned person");
}

#[test]
fn infeasible_configs_are_constraint_errors() {
    for cfg in [
        small(4, 2, 2, 1, 6, 0),
        small(4, 2, 2, 4, 3, 0),
        small(4, 1, 2, 2, 6, 0),
        small(200, 2, 2, 2, 6, 0),
    ] {
        assert!(matches!(build(&cfg), Err(DataError::Constraint(_))), "{cfg:?}");
    }
}

#[test]
fn jsonl_round_trip_is_byte_stable() {
    let ds = build(&small(4, 2, 2, 2, 4, 2)).unwrap();
    let text = ds.manifest.to_jsonl();
    let back = DatasetManifest::from_jsonl(&text).unwrap();
    assert_eq!(back, ds.manifest);
    assert_eq!(back.to_jsonl(), text);
    let header: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(header["format_version"], 1);
    assert_eq!(header["counts"]["images"], 16);
}

#[test]
fn wrong_version_and_bad_lines_are_rejected() {
    let ds = build(&small(4, 2, 2, 2, 4, 2)).unwrap();
    let text = ds.manifest.to_jsonl().replacen("\"format_version\":1", "\"format_version\":9", 1);
    assert_eq!(
        DatasetManifest::from_jsonl(&text),
        Err(DataError::Version { found: 9, expected: 1 })
    );
    let mut text = ds.manifest.to_jsonl();
    text.push_str("{not json}\n");
    assert!(matches!(DatasetManifest::from_jsonl(&text), Err(DataError::Parse { .. })));
}

#[test]
fn identity_in_one_context_is_reported_by_id() {
    let mut m = build(&small(4, 2, 2, 2, 4, 2)).unwrap().manifest;
    let victim = m.images_in(Split::Val).next().unwrap().identity_id;
    let first_ctx = m.images.iter().find(|i| i.split == Split::Val && i.identity_id == victim).unwrap().context_id;
    let keep: BTreeSet<u32> = m
        .images
        .iter()
        .filter(|i| !(i.split == Split::Val && i.identity_id == victim && i.context_id != first_ctx))
        .map(|i| i.image_id)
        .collect();
    m.images.retain(|i| keep.contains(&i.image_id));
    m.captions.retain(|c| keep.contains(&c.image_id));
    let report = validate_manifest(&m);
    assert_eq!(
        report.violations,
        vec![Violation::IdentityInOneContext {
            identity_id: victim,
            split: Split::Val,
            context_id: first_ctx
        }]
    );
}

#[test]
fn caption_name_mismatch_is_a_cross_reference_violation() {
    let mut m = build(&small(4, 2, 2, 2, 4, 2)).unwrap().manifest;
    m.captions[0].entity = "person_0999".into();
    assert_eq!(m.captions.len(), 16 * 15);
    let report = validate_manifest(&m);
    assert_eq!(report.invariants(), BTreeSet::from(["caption_name_mismatch"]));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn feasible_configs_validate_clean(
        train in 2usize..8,
        val in prop_oneof![Just(0usize), 2usize..4],
        test in prop_oneof![Just(0usize), 2usize..4],
        swaps in 2usize..5,
        extra in 0usize..6,
        seed in any::<u64>(),
    ) {
        let cfg = DatasetConfig {
            templates: vec!["[CAPTION]".into(), "[ENTITY] in the image. [CAPTION]".into()],
            ..small(train, val, test, swaps, swaps + extra, seed)
        };
        let ds = build(&cfg).unwrap();
        prop_assert_eq!(ds.manifest.images.len(), (train + val + test) * swaps);
        let report = validate_manifest(&ds.manifest);
        prop_assert!(report.is_clean(), "{:?}", report);
    }
}
