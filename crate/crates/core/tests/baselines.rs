use gdimpute_core::baselines::{forest_impute, hotdeck_impute, ppca_fit, ForestConfig, PpcaConfig};
use gdimpute_core::ingest::{
    generate_synthetic, make_masked_testset, split, MaskingProtocol, SplitSpec, SyntheticConfig,
    STRONG_CATEGORICAL,
};
use gdimpute_core::schema::PartialDesign;

#[test]
fn forest_recovers_the_deterministic_categorical() {
    let (_, _, data) = generate_synthetic(&SyntheticConfig::assembly(600, 0.8), 12).unwrap();
    let (train, test) = split(&data, &SplitSpec { train_fraction: 0.8, seed: 12 }).unwrap();
    let cases = make_masked_testset(&test, &MaskingProtocol::fixed_feature(STRONG_CATEGORICAL, 12)).unwrap();
    let partials: Vec<PartialDesign> = cases.iter().map(|c| c.partial.clone()).collect();
    let out = forest_impute(&train, &partials, &ForestConfig::default()).unwrap();
    let j = data.schema.index_of(STRONG_CATEGORICAL).unwrap();
    let hits = out.iter().zip(&cases).filter(|(o, c)| o.value(j) == c.truth.value(j)).count();
    assert!(hits as f64 >= 0.9 * cases.len() as f64, "{hits}/{}", cases.len());
}

#[test]
fn baselines_conserve_observed_values() {
    let (_, _, data) = generate_synthetic(&SyntheticConfig::assembly(300, 0.6), 13).unwrap();
    let (train, test) = split(&data, &SplitSpec { train_fraction: 0.8, seed: 13 }).unwrap();
    let protocol = MaskingProtocol {
        missing_fraction: 0.3,
        seed: 13,
        ..Default::default()
    };
    let cases = make_masked_testset(&test, &protocol).unwrap();
    let partials: Vec<PartialDesign> = cases.iter().map(|c| c.partial.clone()).collect();
    let ppca = ppca_fit(&train, &PpcaConfig::default()).unwrap();
    let forest = forest_impute(&train, &partials, &ForestConfig { rounds: 3, trees: 10, ..Default::default() }).unwrap();
    for (p, f) in partials.iter().zip(&forest) {
        let h = hotdeck_impute(&train, p).unwrap();
        let q = ppca.impute(&data.schema, p).unwrap();
        for j in p.mask().observed() {
            for out in [&h, &q, f] {
                assert!(out.value(j).bit_eq(p.value(j)), "feature {j}");
            }
        }
    }
}
