mod common;

use taskcomm::artifact::{channel_from_json, channel_to_json, gm_from_json, gm_to_json};

#[test]
fn model_and_channel_artifacts_roundtrip() {
    let inst = common::instance(11, 3, 2, 2, 4, 4, 2, 12.0);
    let gm = gm_from_json(&gm_to_json(&inst.gm).unwrap()).unwrap();
    assert_eq!(gm.priors(), inst.gm.priors());
    assert_eq!(gm.class_covs(), inst.gm.class_covs());
    let ch = channel_from_json(&channel_to_json(&inst.channel).unwrap()).unwrap();
    assert_eq!(ch, inst.channel);
}

#[test]
fn malformed_documents_are_rejected() {
    assert!(gm_from_json("{}").is_err());
    assert!(channel_from_json("not json").is_err());
    let inst = common::instance(1, 2, 2, 2, 3, 2, 2, 6.0);
    let text = gm_to_json(&inst.gm).unwrap().replace("taskcomm.gm-model", "taskcomm.other");
    assert!(gm_from_json(&text).is_err());
}
