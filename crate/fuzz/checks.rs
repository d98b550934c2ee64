//! Target bodies, shared by the fuzz targets and the corpus replay test.

#![allow(dead_code)]

use ndgg::analysis::BucketSpec;
use ndgg::dataset::{decode, encode};
use ndgg::model::ModelKind;
use ndgg_cli::config::{parse_depth_list, parse_seed_list};
use ndgg_cli::RunConfig;

pub fn container_decode(data: &[u8]) {
    if let Ok(d) = decode(data) {
        let again = decode(&encode(&d)).expect("re-encoded container decodes");
        assert_eq!(again, d);
    }
}

pub fn run_config(data: &[u8]) {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(cfg) = RunConfig::from_json(text) else {
        return;
    };
    let back = serde_json::to_string(&cfg).unwrap();
    assert_eq!(RunConfig::from_json(&back).unwrap(), cfg);
    // resolution either succeeds or reports a usage error, never panics
    let _ = cfg.models();
    let _ = cfg.seed_list();
    let _ = cfg.depth_list();
    let _ = cfg.bucket_spec();
    let _ = cfg.kbound_config();
    let _ = cfg.train_config(0);
    for kind in ModelKind::ALL {
        let _ = cfg.model_config(kind);
    }
}

pub fn bucket_spec(data: &[u8]) {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(spec) = text.parse::<BucketSpec>() {
        assert_eq!(spec.to_string().parse::<BucketSpec>().unwrap(), spec);
        for degree in [0, 1, 2, 7, 64, usize::MAX] {
            let b = spec.bucket_of(degree);
            assert!(b < spec.len());
            let (lo, hi) = spec.bounds(b);
            assert!(lo <= degree && hi.is_none_or(|h| degree < h));
        }
    }
}

pub fn seed_list(data: &[u8]) {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(seeds) = parse_seed_list(text) {
        assert!(!seeds.is_empty());
        let joined: Vec<String> = seeds.iter().map(u64::to_string).collect();
        assert_eq!(parse_seed_list(&joined.join(",")).unwrap(), seeds);
    }
    if let Ok(depths) = parse_depth_list(text) {
        assert!(depths.iter().all(|&d| d >= 1));
    }
}
