#![no_main]

use camcal::synth::SynthSpec;
use camcal::{EnsembleConfig, ThresholdGrid};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(config) = serde_json::from_slice::<EnsembleConfig>(data) {
        let text = serde_json::to_string(&config).unwrap();
        assert_eq!(serde_json::from_str::<EnsembleConfig>(&text).unwrap(), config);
    }
    if let Ok(grid) = serde_json::from_slice::<ThresholdGrid>(data) {
        assert!(grid.values().windows(2).all(|w| w[0] < w[1]));
    }
    if let Ok(spec) = serde_json::from_slice::<SynthSpec>(data) {
        let _ = spec.validate();
    }
});
