use std::path::Path;

#[test]
fn shipped_configs_parse() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let server = p3li5_icf::ServerConfig::from_toml_file(&root.join("server.toml")).unwrap();
    server.validate().unwrap();
    let bench = p3li5_bench::BenchConfig::from_toml_file(&root.join("bench.toml")).unwrap();
    assert_eq!(bench.suite.scenarios, p3li5_bench::default_scenarios());
    assert_eq!(bench.workload, Default::default());
}
