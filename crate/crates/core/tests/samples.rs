use std::path::PathBuf;

use vigp::data::{load_dataset, DataFormat, LabelMap};

fn sample(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/samples").join(name)
}

#[test]
fn all_distributed_formats_parse() {
    let cases: [(&str, DataFormat, Option<&str>, usize); 8] = [
        ("german.libsvm", DataFormat::Libsvm, None, 60),
        ("svmguide1.txt", DataFormat::Libsvm, None, 4),
        ("magic04.data", DataFormat::Csv, Some("g,h"), 10),
        ("ijcnn1.txt", DataFormat::Libsvm, None, 22),
        ("cod-rna.txt", DataFormat::Libsvm, None, 8),
        ("skin_nonskin.txt", DataFormat::Libsvm, Some("1,2"), 3),
        ("a8a.txt", DataFormat::Libsvm, None, 123),
        ("blobs.csv", DataFormat::Csv, None, 2),
    ];
    for (name, fmt, map, max_d) in cases {
        let map = map.map(|m| m.parse::<LabelMap>().unwrap());
        let data = load_dataset(&sample(name), fmt, map.as_ref()).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert!(data.n() >= 20, "{name}");
        assert!(data.d() >= 1 && data.d() <= max_d, "{name}: d = {}", data.d());
        assert!(data.y.iter().any(|&v| v > 0.0) && data.y.iter().any(|&v| v < 0.0), "{name}");
    }
}

#[test]
fn two_class_rule_rejects_unmapped_labels() {
    assert!(load_dataset(&sample("skin_nonskin.txt"), DataFormat::Libsvm, None).is_err());
    assert!(load_dataset(&sample("magic04.data"), DataFormat::Csv, None).is_err());
}
