#![no_main]

use cgg_core::training::checkpoint::{checkpoint_bytes, load_checkpoint_bytes};
use libfuzzer_sys::fuzz_target;

fn bits(params: &cgg_core::neuralcore::ModelParams) -> Vec<u64> {
    let mut out = Vec::new();
    params.for_each_array(|_, a| out.extend(a.iter().map(|v| v.to_bits())));
    out
}

fuzz_target!(|data: &[u8]| {
    if let Ok(ckpt) = load_checkpoint_bytes(data) {
        // anything the loader accepts must re-serialize and reload bit-exact
        let echoed = checkpoint_bytes(&ckpt.params, &ckpt.norm, &ckpt.graph).expect("serialize");
        let again = load_checkpoint_bytes(&echoed).expect("reload");
        assert_eq!(bits(&ckpt.params), bits(&again.params));
        assert_eq!(ckpt.norm, again.norm);
        assert_eq!(ckpt.graph, again.graph);
    }
});
