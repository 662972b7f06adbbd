use std::fs;

use artiwave_core::corpus::{Manifest, Split, UtteranceEntry, MANIFEST_FILE};
use artiwave_core::metrics::{Gender, LanguageGroup, SpeakerInfo};

/// 39 speakers: 22 with 103/15 train/test utterances, 17 with 102/14 or
/// 102/15, totalling 4000 training and 580 test utterances.
#[test]
fn full_scale_manifest_loads_with_published_split_sizes() {
    let dir = tempfile::tempdir().unwrap();
    let mut manifest = Manifest::empty(dir.path());
    for s in 0..39usize {
        let id = format!("SPK{s:02}");
        manifest.speakers.push(SpeakerInfo {
            id: id.clone(),
            group: Some(if s < 20 { LanguageGroup::L1 } else { LanguageGroup::L2 }),
            gender: Some(if s % 2 == 0 { Gender::Male } else { Gender::Female }),
        });
        let train = if s < 22 { 103 } else { 102 };
        let test = if s < 34 { 15 } else { 14 };
        fs::create_dir_all(dir.path().join(&id)).unwrap();
        for u in 0..train + test {
            let name = format!("{id}_{u:03}");
            let audio = format!("{id}/{name}.wav");
            let trajectory = format!("{id}/{name}.traj");
            fs::write(dir.path().join(&audio), b"").unwrap();
            fs::write(dir.path().join(&trajectory), b"").unwrap();
            manifest.utterances.push(UtteranceEntry {
                id: name,
                speaker_id: id.clone(),
                audio: audio.into(),
                trajectory: trajectory.into(),
                split: if u < train { Split::Train } else { Split::Test },
            });
        }
    }
    let path = dir.path().join(MANIFEST_FILE);
    manifest.save(&path).unwrap();

    let loaded = Manifest::load(&path).unwrap();
    assert_eq!(loaded.speakers.len(), 39);
    assert_eq!(loaded.split_counts(), (4000, 580));
    for spk in &loaded.speakers {
        let train = loaded.of_speaker(&spk.id).filter(|u| u.split == Split::Train).count();
        let test = loaded.of_speaker(&spk.id).filter(|u| u.split == Split::Test).count();
        assert!((102..=103).contains(&train), "{}: {train}", spk.id);
        assert!((14..=15).contains(&test), "{}: {test}", spk.id);
    }
    let ids: Vec<&str> = loaded.utterances.iter().map(|u| u.id.as_str()).collect();
    let original: Vec<&str> = manifest.utterances.iter().map(|u| u.id.as_str()).collect();
    assert_eq!(ids, original);
    assert_eq!(Manifest::load(&path).unwrap().to_text(), loaded.to_text());
}

#[test]
fn missing_audio_file_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let text = "speaker id=A\nutterance id=A_1 speaker=A audio=A/1.wav trajectory=A/1.traj split=train\n";
    fs::write(dir.path().join(MANIFEST_FILE), text).unwrap();
    let err = Manifest::load(&dir.path().join(MANIFEST_FILE)).unwrap_err().to_string();
    assert!(err.contains("1.wav"), "{err}");
}
