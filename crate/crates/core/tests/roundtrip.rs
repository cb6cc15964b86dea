mod common;

use std::sync::OnceLock;

use proptest::prelude::*;

use gdimpute_core::checkpoint;
use gdimpute_core::diffusion::{ImputerModel, ModelConfig, TrainConfig};
use gdimpute_core::ingest::{read_csv, write_rows};
use gdimpute_core::rng;
use gdimpute_core::schema::{AssemblyGraph, CompleteDesign, FeatureSchema};

use common::*;

fn tiny_model() -> &'static ImputerModel {
    static MODEL: OnceLock<ImputerModel> = OnceLock::new();
    MODEL.get_or_init(|| {
        let mut r = rng::seeded(90);
        let schema = random_schema(&mut r, 3);
        let graph = random_graph(&mut r, schema.clone());
        let data = random_dataset(&schema, 40, &mut r);
        let mut cfg = ModelConfig::default();
        cfg.graph.hidden_dim = 8;
        cfg.fusion.d_token = 8;
        cfg.denoiser.width = 8;
        cfg.denoiser.blocks = 1;
        cfg.denoiser.time_embed_dim = 8;
        let mut m = ImputerModel::new(graph, cfg, 3).unwrap();
        let tc = TrainConfig {
            epochs: 2,
            batch_size: 16,
            ..Default::default()
        };
        m.train(&data, &tc, 3).unwrap();
        m
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn schema_and_graph_json_round_trip(seed in any::<u64>(), comps in 1usize..6) {
        let mut r = rng::seeded(seed);
        let schema = random_schema(&mut r, comps);
        let back = FeatureSchema::from_json(&schema.to_json()).unwrap();
        prop_assert_eq!(&back, schema.as_ref());
        let graph = random_graph(&mut r, schema.clone());
        let again = AssemblyGraph::from_json(&graph.to_json(), schema.clone()).unwrap();
        prop_assert_eq!(again, graph);
    }

    #[test]
    fn csv_round_trip_is_exact(seed in any::<u64>(), rows in 1usize..20) {
        let mut r = rng::seeded(seed);
        let schema = random_schema(&mut r, 3);
        let data = random_dataset(&schema, rows, &mut r);
        let mut buf = Vec::new();
        write_rows(&mut buf, &schema, data.rows.iter().map(CompleteDesign::values)).unwrap();
        let back = read_csv(buf.as_slice(), schema.clone()).unwrap();
        prop_assert_eq!(back.rows.len(), data.rows.len());
        for (a, b) in back.rows.iter().zip(&data.rows) {
            prop_assert!(a.bit_eq(b));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn completions_conserve_observed_values(seed in any::<u64>(), k in 1usize..5) {
        let model = tiny_model();
        let schema = model.schema();
        let mut r = rng::seeded(seed);
        let truth = random_row(schema, &mut r);
        let partial = partial_of(schema, &truth, &random_mask(schema.len(), &mut r));
        let set = model.sample(&partial, k, seed).unwrap();
        prop_assert_eq!(set.draws.len(), k);
        for d in &set.draws {
            for j in partial.mask().observed() {
                prop_assert!(d.value(j).bit_eq(partial.value(j)));
            }
            prop_assert!(CompleteDesign::new(schema, d.values().to_vec()).is_ok());
        }
    }

    #[test]
    fn checkpoint_bytes_round_trip(seed in any::<u64>()) {
        let model = tiny_model();
        let bytes = checkpoint::to_bytes(model);
        let back = checkpoint::from_bytes(&bytes).unwrap();
        prop_assert_eq!(checkpoint::to_bytes(&back), bytes);
        let mut r = rng::seeded(seed);
        let schema = model.schema();
        let truth = random_row(schema, &mut r);
        let partial = partial_of(schema, &truth, &random_mask(schema.len(), &mut r));
        let a = model.sample(&partial, 2, seed).unwrap();
        let b = back.sample(&partial, 2, seed).unwrap();
        for (x, y) in a.draws.iter().zip(&b.draws) {
            prop_assert!(x.bit_eq(y));
        }
    }
}
