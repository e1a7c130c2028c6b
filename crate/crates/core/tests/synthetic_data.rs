use parse_dfl::numerics::{softmax_cross_entropy, DenseMatrix};
use parse_dfl::pid::pid_decompose;
use parse_dfl::synthdata::{
    dirichlet_partition, generate_dataset, load_dataset, save_dataset, train_test_split,
};
use parse_dfl::{Dataset, JointDistribution, SyntheticSpec};

fn spec(red: f64, uni: f64, syn: f64) -> SyntheticSpec {
    SyntheticSpec {
        n_modalities: 2,
        n_classes: 2,
        dim_per_modality: 3,
        strength_redundant: red,
        strength_unique: uni,
        strength_synergy: syn,
        noise_std: 0.5,
        n_samples: 10_000,
    }
}

/// Each modality becomes the 3-bit pattern of its feature signs.
fn binarized_pid(data: &Dataset) -> parse_dfl::PidResult {
    let codes: Vec<(Vec<usize>, usize)> = data
        .samples
        .iter()
        .map(|s| {
            let xs = s
                .features
                .iter()
                .map(|f| f.iter().enumerate().map(|(k, v)| usize::from(*v > 0.0) << k).sum())
                .collect();
            (xs, s.label)
        })
        .collect();
    let joint =
        JointDistribution::from_samples(vec![8, 8], 2, codes.iter().map(|(x, y)| (x.as_slice(), *y)))
            .unwrap();
    pid_decompose(&joint).unwrap()
}

#[test]
fn synergy_only_data_is_synergistic() {
    let r = binarized_pid(&generate_dataset(&spec(0.0, 0.0, 1.0), 7).unwrap());
    assert!(r.synergistic >= 0.8 * r.total_mi, "{r:?}");
    assert!(r.redundant <= 0.05 * r.total_mi, "{r:?}");
}

#[test]
fn redundancy_only_data_is_redundant() {
    let r = binarized_pid(&generate_dataset(&spec(1.0, 0.0, 0.0), 7).unwrap());
    assert!(r.redundant >= 0.8 * r.total_mi, "{r:?}");
}

#[test]
fn noiseless_generation_is_byte_identical() {
    let s = SyntheticSpec {
        noise_std: 0.0,
        n_samples: 500,
        ..SyntheticSpec::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    save_dataset(&generate_dataset(&s, 3).unwrap(), &a).unwrap();
    save_dataset(&generate_dataset(&s, 3).unwrap(), &b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn save_load_round_trip_is_exact() {
    let data = generate_dataset(
        &SyntheticSpec {
            n_samples: 300,
            ..SyntheticSpec::default()
        },
        11,
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.csv");
    save_dataset(&data, &path).unwrap();
    assert_eq!(load_dataset(&path).unwrap(), data);
}

#[test]
fn load_rejects_empty_and_short_rows() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.csv");
    std::fs::write(&empty, "").unwrap();
    assert!(load_dataset(&empty).is_err());
    let short = dir.path().join("short.csv");
    std::fs::write(&short, "label,m0_0,m1_0\n0,0.5,1.0\n1,0.25\n").unwrap();
    let msg = load_dataset(&short).unwrap_err().to_string();
    assert!(msg.contains(":3:"), "{msg}");
}

fn class_fractions(data: &Dataset, idx: &[usize]) -> Vec<f64> {
    let mut c = vec![0.0; data.n_classes];
    for &i in idx {
        c[data.samples[i].label] += 1.0;
    }
    c.iter().map(|v| v / idx.len() as f64).collect()
}

fn partition_data(n: usize) -> Dataset {
    generate_dataset(
        &SyntheticSpec {
            n_samples: n,
            n_classes: 4,
            ..SyntheticSpec::default()
        },
        5,
    )
    .unwrap()
}

#[test]
fn huge_alpha_reproduces_the_global_mix() {
    let data = partition_data(10_000);
    let all: Vec<usize> = (0..data.len()).collect();
    let global = class_fractions(&data, &all);
    let part = dirichlet_partition(&data, &all, 10, 1e6, 64, 9).unwrap();
    for shard in &part.agent_shards {
        for (p, g) in class_fractions(&data, shard).iter().zip(&global) {
            assert!((p - g).abs() < 0.01, "{p} vs {g}");
        }
    }
}

#[test]
fn small_alpha_concentrates_some_agent() {
    let data = partition_data(10_000);
    let all: Vec<usize> = (0..data.len()).collect();
    let part = dirichlet_partition(&data, &all, 10, 0.1, 10, 9).unwrap();
    let max_share = part
        .agent_shards
        .iter()
        .map(|s| class_fractions(&data, s).into_iter().fold(0.0, f64::max))
        .fold(0.0, f64::max);
    assert!(max_share > 0.6, "{max_share}");
}

#[test]
fn partition_is_a_disjoint_cover_and_deterministic() {
    let data = partition_data(3_000);
    let (train, _) = train_test_split(data.len(), 1);
    let a = dirichlet_partition(&data, &train, 7, 0.5, 20, 2).unwrap();
    let b = dirichlet_partition(&data, &train, 7, 0.5, 20, 2).unwrap();
    assert_eq!(a, b);
    let mut seen: Vec<usize> = a.agent_shards.concat();
    seen.sort_unstable();
    let mut expected = train.clone();
    expected.sort_unstable();
    assert_eq!(seen, expected);
    assert!(a.agent_shards.iter().all(|s| s.len() >= 20));
}

/// Multinomial logistic regression on all features, plain SGD.
fn linear_probe_accuracy(data: &Dataset) -> f64 {
    let flat = |i: usize| data.samples[i].features.concat();
    let d = flat(0).len();
    let c = data.n_classes;
    let (train, test) = train_test_split(data.len(), 4);
    let mut w = DenseMatrix::zeros(c, d);
    let mut b = vec![0.0; c];
    for _ in 0..20 {
        for &i in &train {
            let x = flat(i);
            let mut logits = w.matvec(&x);
            for (l, bb) in logits.iter_mut().zip(&b) {
                *l += bb;
            }
            let (_, g) = softmax_cross_entropy(&logits, data.samples[i].label).unwrap();
            let neg: Vec<f64> = g.iter().map(|v| -0.01 * v).collect();
            w.add_outer(&neg, &x);
            for (bb, n) in b.iter_mut().zip(&neg) {
                *bb += n;
            }
        }
    }
    let correct = test
        .iter()
        .filter(|&&i| {
            let mut logits = w.matvec(&flat(i));
            for (l, bb) in logits.iter_mut().zip(&b) {
                *l += bb;
            }
            parse_dfl::model::argmax(&logits) == data.samples[i].label
        })
        .count();
    correct as f64 / test.len() as f64
}

#[test]
fn label_free_data_defeats_a_linear_probe() {
    let s = SyntheticSpec {
        strength_redundant: 0.0,
        strength_unique: 0.0,
        strength_synergy: 0.0,
        n_samples: 5_000,
        ..SyntheticSpec::default()
    };
    let acc = linear_probe_accuracy(&generate_dataset(&s, 13).unwrap());
    assert!(acc <= 1.0 / 4.0 + 0.05, "{acc}");
}

#[test]
fn informative_data_is_linearly_decodable() {
    let acc = linear_probe_accuracy(&partition_data(5_000));
    assert!(acc > 0.4, "{acc}");
}
