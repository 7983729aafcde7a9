use uniadc::checkpoint::{decode, encode, load_checkpoint, save_checkpoint, CheckpointError, ClassModel};
use uniadc_core::discriminator::{CategoryEmbeddings, FusionArch, FusionNetwork, PatchStatsBackbone, VisionBackbone};

fn model(other: bool) -> ClassModel {
    let backbone = PatchStatsBackbone::default();
    let arch = FusionArch {
        level_channels: backbone.level_channels(),
        hidden: 5,
        embed_dim: 7,
    };
    let mut network = FusionNetwork::new(arch, 11).unwrap();
    // Values that only survive an exact binary round trip.
    network.params[0] = 0.1 + 0.2;
    network.params[1] = f64::MIN_POSITIVE;
    network.params[2] = -0.0;
    let mut embeddings = CategoryEmbeddings::reference(&["crack", "hole"], 7, 3).unwrap();
    if other {
        embeddings.set_other(vec![1e-300, -2.5, 0.0, 1.0, 3.0, 1e300, -7.0]).unwrap();
    }
    ClassModel {
        class: "wood".into(),
        categories: vec!["crack".into(), "hole".into()],
        backbone,
        network,
        embeddings,
    }
}

#[test]
fn round_trip_is_bit_exact() {
    for other in [false, true] {
        let m = model(other);
        let bytes = encode(&m);
        let back = decode(&bytes).unwrap();
        assert_eq!(back, m);
        let bits = |m: &ClassModel| m.network.params.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&m));
        assert_eq!(encode(&back), bytes);
    }
}

#[test]
fn file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("nested/wood.ckpt");
    let m = model(true);
    save_checkpoint(&path, &m).unwrap();
    assert_eq!(load_checkpoint(&path).unwrap(), m);
}

#[test]
fn corrupt_files_are_rejected() {
    let bytes = encode(&model(false));
    let mut bad = bytes.clone();
    bad[0] ^= 1;
    assert!(matches!(decode(&bad), Err(CheckpointError::BadMagic)));
    let mut newer = bytes.clone();
    newer[8] = 99;
    assert!(matches!(decode(&newer), Err(CheckpointError::UnsupportedVersion(99))));
    assert!(matches!(decode(&bytes[..bytes.len() - 3]), Err(CheckpointError::Truncated)));
    let mut longer = bytes.clone();
    longer.push(0);
    assert!(decode(&longer).is_err());
    assert!(decode(&bytes[..5]).is_err());
}
