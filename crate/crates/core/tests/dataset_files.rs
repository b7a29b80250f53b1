use neurotraj_core::io::sha256_file;
use neurotraj_core::scenario_data::{map_file_name, read_dataset, write_dataset, DatasetManifest, ScenarioSet, MANIFEST_FILE};

#[test]
fn thousand_episode_directory_matches_manifest_checksums() {
    let dir = tempfile::tempdir().unwrap();
    let set = ScenarioSet::default();
    let episodes = set.generate(11, 1000).unwrap();
    let manifest = write_dataset(dir.path(), 11, &set, &episodes).unwrap();
    assert_eq!(manifest.count, 1000);

    let (read_manifest, read_back) = read_dataset(dir.path()).unwrap();
    assert_eq!(read_manifest, manifest);
    assert_eq!(read_back, episodes);
    for (i, entry) in manifest.episodes.iter().enumerate() {
        assert_eq!(entry.id, format!("ep_{i:05}"));
        assert!(dir.path().join(&entry.file).exists());
        assert_eq!(entry.checksum.len(), 64);
    }

    // Tampering with one map file is detected.
    let victim = dir.path().join(map_file_name("ep_00417", 2));
    let mut bytes = std::fs::read(&victim).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 1;
    std::fs::write(&victim, bytes).unwrap();
    let err = read_dataset(dir.path()).unwrap_err().to_string();
    assert!(err.contains("ep_00417"), "{err}");
    let again = DatasetManifest::read(dir.path()).unwrap();
    assert_eq!(again, manifest);
    assert_eq!(sha256_file(&dir.path().join(MANIFEST_FILE)).unwrap().len(), 64);
}
