use std::collections::BTreeMap;
use std::path::Path;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use unicode_normalization::UnicodeNormalization;
use vidcap::features::{
    archetype_centroid, load_manifest, mean_pool, read_features, sample_frame_indices, synth_dataset, synth_videos,
    write_features, FeatureMatrix, SynthSpec, TEMPLATES,
};
use vidcap::text::{
    build_vocab, decode_tokens, encode_caption, tokenize, Vocab, END, PAD, SPECIALS, START, UNK,
};
use vidcap::{Error, Tensor};

fn random_matrix(seed: u64, n: usize, d: usize) -> FeatureMatrix {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<f32> = (0..n * d).map(|_| r.random_range(-3.0f32..3.0)).collect();
    FeatureMatrix::from_f32(n, d, &data).unwrap()
}

/// Little-endian header plus payload, assembled by hand.
fn vcf_bytes(n: u32, d: u32, reserved: u32, values: &[f32]) -> Vec<u8> {
    let mut b = b"VCF1".to_vec();
    for w in [n, d, reserved] {
        b.extend(w.to_le_bytes());
    }
    for v in values {
        b.extend(v.to_le_bytes());
    }
    b
}

fn format_offset(r: vidcap::Result<FeatureMatrix>) -> u64 {
    match r {
        Err(Error::Format { offset, .. }) => offset,
        other => panic!("expected format error, got {other:?}"),
    }
}

fn data_line<T: std::fmt::Debug>(r: vidcap::Result<T>) -> usize {
    match r {
        Err(Error::Data { line, .. }) => line,
        other => panic!("expected data error, got {other:?}"),
    }
}

proptest! {
    #[test]
    fn frame_sampling_is_even(n_total in 1usize..500, n_wanted in 1usize..100) {
        let idx = sample_frame_indices(n_total, n_wanted).unwrap();
        prop_assert_eq!(idx.len(), n_wanted);
        prop_assert_eq!(idx[0], 0);
        for (i, &k) in idx.iter().enumerate() {
            // k is the largest index with k·n_wanted ≤ i·n_total.
            prop_assert!(k < n_total);
            prop_assert!(k * n_wanted <= i * n_total);
            prop_assert!((k + 1) * n_wanted > i * n_total);
        }
        if n_wanted <= n_total {
            prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
        } else {
            prop_assert!(idx.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn vcf_round_trip(seed in 0u64..1000, n in 1usize..20, d in 1usize..20) {
        let m = random_matrix(seed, n, d);
        let bytes = m.to_bytes().unwrap();
        prop_assert_eq!(bytes.len(), 16 + 4 * n * d);
        let back = FeatureMatrix::from_bytes(&bytes, Path::new("x.vcf")).unwrap();
        prop_assert_eq!(back, m);
    }
}

#[test]
fn vcf_layout_matches_hand_built_bytes() {
    let values = [1.5f32, -2.0, 0.25, 3.0, 0.0, -0.125];
    let bytes = vcf_bytes(2, 3, 0, &values);
    let m = FeatureMatrix::from_bytes(&bytes, Path::new("x.vcf")).unwrap();
    assert_eq!((m.n_frames(), m.dim()), (2, 3));
    assert_eq!(m.values().row(1), &[3.0, 0.0, -0.125]);
    assert_eq!(m.to_bytes().unwrap(), bytes);
}

#[test]
fn default_feature_file_size() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("v.vcf");
    let m = random_matrix(1, 28, 4096);
    write_features(&path, &m).unwrap();
    assert_eq!(std::fs::metadata(&path).unwrap().len(), 458_768);
    assert_eq!(read_features(&path).unwrap(), m);
}

#[test]
fn corrupt_files_report_offsets() {
    let p = Path::new("bad.vcf");
    let good = vcf_bytes(2, 2, 0, &[1.0, 2.0, 3.0, 4.0]);
    let mut bad = good.clone();
    bad[0] = b'X';
    assert_eq!(format_offset(FeatureMatrix::from_bytes(&bad, p)), 0);
    assert_eq!(format_offset(FeatureMatrix::from_bytes(&good[..10], p)), 10);
    assert_eq!(format_offset(FeatureMatrix::from_bytes(&vcf_bytes(0, 2, 0, &[]), p)), 4);
    assert_eq!(format_offset(FeatureMatrix::from_bytes(&vcf_bytes(2, 0, 0, &[]), p)), 8);
    assert_eq!(format_offset(FeatureMatrix::from_bytes(&vcf_bytes(2, 2, 7, &[1.0; 4]), p)), 12);
    assert_eq!(format_offset(FeatureMatrix::from_bytes(&good[..good.len() - 1], p)), 16);
    let nan = vcf_bytes(2, 2, 0, &[1.0, 2.0, f32::NAN, 4.0]);
    assert_eq!(format_offset(FeatureMatrix::from_bytes(&nan, p)), 16 + 8);
}

#[test]
fn oversized_values_refuse_to_write() {
    let m = FeatureMatrix::new(Tensor::new([1, 2], vec![1.0, 1e300]).unwrap()).unwrap();
    assert!(matches!(m.to_bytes(), Err(Error::Numeric { .. })));
}

#[test]
fn mean_pool_matches_accumulation() {
    for seed in 0..10 {
        let m = random_matrix(seed, 7 + seed as usize, 5);
        let pooled = mean_pool(&m);
        let (n, d) = (m.n_frames(), m.dim());
        for j in 0..d {
            let col: Vec<f64> = (0..n).map(|i| m.values().data()[i * d + j]).collect();
            let mean = col.iter().sum::<f64>() / n as f64;
            let v = pooled.data()[j];
            assert!((v - mean).abs() < 1e-12);
            let (lo, hi) = col.iter().fold((f64::MAX, f64::MIN), |(a, b), &x| (a.min(x), b.max(x)));
            assert!(lo <= v && v <= hi);
        }
    }
}

#[test]
fn resample_picks_sampled_rows() {
    let m = random_matrix(4, 11, 3);
    let r = m.resample(4).unwrap();
    for (row, &src) in sample_frame_indices(11, 4).unwrap().iter().enumerate() {
        assert_eq!(r.values().row(row), m.values().row(src));
    }
}

#[test]
fn manifest_groups_references() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir(dir.path().join("f")).unwrap();
    write_features(&dir.path().join("f/a.vcf"), &random_matrix(1, 3, 2)).unwrap();
    write_features(&dir.path().join("f/b.vcf"), &random_matrix(2, 4, 2)).unwrap();
    let manifest = dir.path().join("m.tsv");
    std::fs::write(
        &manifest,
        "# header\nb\tf/b.vcf\tएक बिरालो।\n\na\tf/a.vcf\tदुई कुकुर\nb\tf/b.vcf\tतीन चरा\n",
    )
    .unwrap();
    let videos = load_manifest(&manifest, None).unwrap();
    assert_eq!(videos.len(), 2);
    assert_eq!(videos[0].video_id, "b");
    assert_eq!(videos[0].references.len(), 2);
    assert_eq!(videos[0].references[0].tokens, ["एक", "बिरालो", "।"]);
    assert_eq!(videos[0].features.n_frames(), 4);
    assert_eq!(videos[1].video_id, "a");
    assert!(videos[0].references[0].ids.is_empty());

    let vocab = build_vocab([tokenize("एक बिरालो").as_slice()], 10).unwrap();
    let with_ids = load_manifest(&manifest, Some(&vocab)).unwrap();
    assert_eq!(with_ids[0].references[0].ids, vec![vocab.id("एक"), vocab.id("बिरालो"), UNK]);

    let write = |text: &str| {
        std::fs::write(&manifest, text).unwrap();
        load_manifest(&manifest, None)
    };
    assert!(write("").unwrap().is_empty());
    assert_eq!(data_line(write("a\tf/a.vcf\tx\nb\tf/b.vcf\n")), 2);
    assert_eq!(data_line(write("# c\na\tf/a.vcf\t   \n")), 2);
    assert_eq!(data_line(write("a\tf/a.vcf\tx\na\tf/b.vcf\ty\n")), 2);
    assert_eq!(data_line(write("a\tf/a.vcf\tx\nc\tf/missing.vcf\ty\nc\tf/missing.vcf\tz\n")), 2);
}

#[test]
fn synth_manifest_matches_archetype_record() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec::new(10, 6, 16);
    let manifest = synth_dataset(5, &spec, dir.path()).unwrap();
    let videos = load_manifest(&manifest, None).unwrap();
    let record = std::fs::read_to_string(dir.path().join("archetypes.tsv")).unwrap();
    let archetypes: BTreeMap<String, usize> = record
        .lines()
        .skip(1)
        .map(|l| {
            let (id, a) = l.split_once('\t').unwrap();
            (id.to_string(), a.parse().unwrap())
        })
        .collect();
    assert_eq!(videos.len(), 10);
    let centroids: Vec<Tensor> = (0..4).map(|a| archetype_centroid(a, 4, 6, 16)).collect();
    for v in &videos {
        let a = archetypes[&v.video_id];
        assert_eq!(v.references.len(), 1);
        assert_eq!(v.references[0].text, TEMPLATES[a]);
        let dist = |c: &Tensor| -> f64 {
            c.data().iter().zip(v.features.values().data()).map(|(x, y)| (x - y).powi(2)).sum()
        };
        let nearest = (0..4).min_by(|&i, &j| dist(&centroids[i]).total_cmp(&dist(&centroids[j]))).unwrap();
        assert_eq!(nearest, a, "{}", v.video_id);
    }
}

#[test]
fn synth_is_deterministic() {
    let spec = SynthSpec::new(6, 3, 8);
    assert_eq!(synth_videos(1, &spec).unwrap(), synth_videos(1, &spec).unwrap());
    assert_ne!(synth_videos(1, &spec).unwrap(), synth_videos(2, &spec).unwrap());
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    synth_dataset(3, &spec, a.path()).unwrap();
    synth_dataset(3, &spec, b.path()).unwrap();
    for f in ["manifest.tsv", "archetypes.tsv", "features/vid0005.vcf"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap());
    }
}

#[test]
fn tokenizer_detaches_punctuation_and_normalizes() {
    assert_eq!(tokenize("केटा दौडिरहेको छ।"), ["केटा", "दौडिरहेको", "छ", "।"]);
    assert_eq!(tokenize("  a,b  c. "), ["a", ",", "b", "c", "."]);
    let decomposed: String = "ऩाम".nfd().collect();
    assert_ne!(decomposed, "ऩाम".nfc().collect::<String>());
    assert_eq!(tokenize(&decomposed), tokenize(&"ऩाम".nfc().collect::<String>()));
}

#[test]
fn vocabulary_matches_frequency_count() {
    let mut r = ChaCha8Rng::seed_from_u64(9);
    let pool: Vec<String> = (0..300).map(|i| format!("w{i}")).collect();
    let captions: Vec<Vec<String>> = (0..1000)
        .map(|_| {
            let len = r.random_range(3..12);
            (0..len)
                .map(|_| {
                    // Skewed draw so counts vary widely.
                    let x: f64 = r.random();
                    pool[(x * x * pool.len() as f64) as usize].clone()
                })
                .collect()
        })
        .collect();
    let max = 150;
    let vocab = build_vocab(captions.iter().map(Vec::as_slice), max).unwrap();

    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for c in &captions {
        for t in c {
            *counts.entry(t).or_default() += 1;
        }
    }
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
    ranked.sort_by_key(|&(t, c)| (std::cmp::Reverse(c), t));
    let mut want: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
    want.extend(ranked.iter().take(max - 4).map(|(t, _)| t.to_string()));
    assert_eq!(vocab.tokens(), want.as_slice());
    assert_eq!(vocab.len(), max);
    for (id, tok) in want.iter().enumerate() {
        assert_eq!(vocab.id(tok), id);
    }
    let dropped = ranked[max - 4].0;
    assert_eq!(vocab.id(dropped), UNK);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("vocab.tsv");
    vocab.save(&path).unwrap();
    let loaded = Vocab::load(&path).unwrap();
    assert_eq!(loaded, vocab);
    assert_eq!(loaded.hash(), vocab.hash());
    assert_eq!(vocab.hash().len(), 64);
}

#[test]
fn vocabulary_file_errors() {
    let p = Path::new("v.tsv");
    assert_eq!(data_line(Vocab::parse_tsv("<pad>\t0\n<start>\t2\n", p)), 2);
    assert_eq!(data_line(Vocab::parse_tsv("<pad>\t0\nbroken\n", p)), 2);
}

#[test]
fn caption_layout() {
    let vocab = build_vocab([tokenize("a b c d e f g h i j k l").as_slice()], 20).unwrap();
    let t_dec_max = 10;
    for len in 0..14 {
        let tokens: Vec<String> = "a b c d e f g h i j k l m".split(' ').take(len).map(String::from).collect();
        let enc = encode_caption(&tokens, &vocab, t_dec_max);
        let kept = len.min(t_dec_max - 1);
        let ids: Vec<usize> = tokens[..kept].iter().map(|t| vocab.id(t)).collect();
        let mut input = vec![START];
        input.extend(&ids);
        input.resize(t_dec_max, PAD);
        let mut target = ids.clone();
        target.push(END);
        target.resize(t_dec_max, PAD);
        let mask: Vec<bool> = (0..t_dec_max).map(|i| i <= kept).collect();
        assert_eq!(enc.input, input);
        assert_eq!(enc.target, target);
        assert_eq!(enc.mask, mask);
        assert_eq!(&enc.input[1..=kept], &enc.target[..kept]);
    }
    assert_eq!(encode_caption(&tokenize("m"), &vocab, 3).target, [UNK, END, PAD]);
}

#[test]
fn decoding_drops_specials() {
    let vocab = build_vocab([tokenize("x y").as_slice()], 10).unwrap();
    let ids = [START, vocab.id("y"), UNK, vocab.id("x"), END, PAD];
    assert_eq!(decode_tokens(&ids, &vocab).unwrap(), "y x");
    assert!(matches!(decode_tokens(&[99], &vocab), Err(Error::Usage(_))));
}
