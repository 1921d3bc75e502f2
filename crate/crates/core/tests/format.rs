//! The on-disk layout checked against bytes assembled by hand.

use std::fs;

use roar_eo::data::{load_dataset, save_dataset, FeatureSchema, Task, TensorDataset};

fn le32(v: u32) -> [u8; 4] {
    v.to_le_bytes()
}

#[test]
fn values_payload_bytes() {
    let schema = FeatureSchema::indexed(2, 1, Task::Regression).unwrap();
    let d = TensorDataset::new(schema, vec![1.0, -2.5, 0.0, 3.25], vec![0.5, 1.5], vec![2020, 2021]).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_dataset(&d, dir.path()).unwrap();

    let mut expected = b"MMTS".to_vec();
    for v in [1, 2, 2, 1] {
        expected.extend(le32(v));
    }
    for v in [1.0f32, -2.5, 0.0, 3.25] {
        expected.extend(v.to_le_bytes());
    }
    assert_eq!(fs::read(dir.path().join("values.bin")).unwrap(), expected);

    let mut years = b"MMTS".to_vec();
    for v in [1, 2, 2020, 2021] {
        years.extend(le32(v));
    }
    assert_eq!(fs::read(dir.path().join("years.bin")).unwrap(), years);

    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("manifest")).unwrap()).unwrap();
    assert_eq!(manifest["format_version"], 1);
    assert_eq!(manifest["task"]["kind"], "regression");
    assert_eq!(manifest["bands"][0]["name"], "band_0");
}

#[test]
fn hand_written_directory_loads() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("manifest"),
        r#"{"format_version":1,"task":{"kind":"classification","n_classes":2},
            "bands":[{"id":4,"name":"ndvi","modality":"optical"}],
            "timesteps":[{"id":0,"label":"jan"},{"id":9,"label":"oct"}]}"#,
    )
    .unwrap();
    let payload = |dims: &[u32], body: Vec<u8>| {
        let mut out = b"MMTS".to_vec();
        out.extend(le32(1));
        for &d in dims {
            out.extend(le32(d));
        }
        out.extend(body);
        out
    };
    let floats = |v: &[f32]| v.iter().flat_map(|x| x.to_le_bytes()).collect::<Vec<u8>>();
    fs::write(dir.path().join("values.bin"), payload(&[1, 2, 1], floats(&[0.25, 0.75]))).unwrap();
    fs::write(dir.path().join("targets.bin"), payload(&[1], floats(&[1.0]))).unwrap();
    fs::write(dir.path().join("years.bin"), payload(&[1], le32(2019).to_vec())).unwrap();

    let d = load_dataset(dir.path()).unwrap();
    assert_eq!(d.shape(), [1, 2, 1]);
    assert_eq!(d.values(), &[0.25, 0.75]);
    assert_eq!(d.schema().band_ids(), vec![4]);
    assert_eq!(d.schema().step_ids(), vec![0, 9]);

    // trailing byte
    let mut bad = payload(&[1, 2, 1], floats(&[0.25, 0.75]));
    bad.push(0);
    fs::write(dir.path().join("values.bin"), bad).unwrap();
    assert!(load_dataset(dir.path()).is_err());
}
