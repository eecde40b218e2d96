//! The bundled Nicosia ring validates clean, and targeted corruptions of it
//! are rejected with the matching diagnostic.

use qkdnet::topology::{
    load_topology, parse_topology, quantum_path, validate, Rule, TopologyError,
};
use serde_json::{json, Value};

fn nicosia_text() -> String {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/nicosia.ring");
    std::fs::read_to_string(path).expect("bundled ring config")
}

/// Applies a JSON-level edit to the bundled config and returns the document.
fn mutated(edit: impl FnOnce(&mut Value)) -> String {
    let mut doc: Value = serde_json::from_str(&nicosia_text()).unwrap();
    edit(&mut doc);
    doc.to_string()
}

/// Diagnostics for a document that still parses but breaks an invariant.
fn diagnose(doc: &str) -> Vec<qkdnet::topology::Diagnostic> {
    validate(&parse_topology(doc).expect("mutation should still resolve"))
}

#[test]
fn nicosia_ring_loads_clean() {
    let topo = load_topology(&nicosia_text()).unwrap();
    assert!(validate(&topo).is_empty());
    assert_eq!(topo.nodes.len(), 4);
    assert_eq!(topo.links.len(), 4);
    assert_eq!(topo.odfs.len(), 3);
    assert_eq!(topo.segments.len(), 7);
    assert_eq!(topo.classical_channels.len(), 7);
}

#[test]
fn nicosia_link_budgets() {
    let topo = load_topology(&nicosia_text()).unwrap();
    let budget = |id: &str| {
        let l = topo.links.iter().find(|l| l.id == id).unwrap();
        (l.circulator_hops, l.total_loss_db)
    };
    // Fibre loss plus 0.8 dB per circulator hop; the passive ODFs on L12 and
    // L23 add splice points only, ODF3 on L41 adds a third hop.
    let (hops, loss) = budget("L12");
    assert_eq!(hops, 2);
    assert!((loss - 4.0).abs() < 1e-12);
    let (hops, loss) = budget("L23");
    assert_eq!(hops, 2);
    assert!((loss - 5.0).abs() < 1e-12);
    let (hops, loss) = budget("L34");
    assert_eq!(hops, 2);
    assert!((loss - 3.9).abs() < 1e-12);
    let (hops, loss) = budget("L41");
    assert_eq!(hops, 3);
    assert!((loss - 5.7).abs() < 1e-12);
}

#[test]
fn nicosia_paths_follow_the_ring() {
    let topo = load_topology(&nicosia_text()).unwrap();
    let l41 = quantum_path(&topo, "N4", "N1").unwrap();
    assert_eq!(l41.id, "L41");
    assert_eq!(l41.path.len(), 2);
    assert_eq!(l41.path[0].to, "ODF3");
    assert!(l41.path[0].circulator_hop, "ODF3 hosts a circulator");
    assert!(matches!(
        quantum_path(&topo, "N2", "N1"),
        Err(TopologyError::WrongDirection { .. })
    ));
    assert!(matches!(
        quantum_path(&topo, "N1", "N3"),
        Err(TopologyError::NotADirectLink { .. })
    ));
}

#[test]
fn clockwise_link_fails_direction_rule() {
    let doc = mutated(|v| {
        v["quantum_links"][0] = json!({
            "id": "L12", "tx": "N2", "rx": "N1", "segments": ["s2", "s1"]
        });
    });
    let diags = diagnose(&doc);
    assert!(
        diags
            .iter()
            .any(|d| d.rule == Rule::Direction && d.element == "L12"),
        "want direction diagnostic for L12, got {diags:?}"
    );
    assert!(matches!(
        load_topology(&doc),
        Err(TopologyError::Invariant(d)) if d.rule == Rule::Direction
    ));
}

#[test]
fn third_signal_on_segment_fails_occupancy_rule() {
    let doc = mutated(|v| {
        let links = v["quantum_links"].as_array_mut().unwrap();
        links.push(json!({"id": "L34b", "tx": "N3", "rx": "N4", "segments": ["s5"]}));
        links.push(json!({"id": "L43", "tx": "N4", "rx": "N3", "segments": ["s5"]}));
    });
    let diags = diagnose(&doc);
    assert!(
        diags
            .iter()
            .any(|d| d.rule == Rule::SegmentOccupancy && d.element == "s5"),
        "want occupancy diagnostic for s5, got {diags:?}"
    );
}

#[test]
fn eighth_wavelength_fails_budget_rule() {
    let doc = mutated(|v| {
        v["classical_channels"].as_array_mut().unwrap().push(json!({
            "id": "enc-spare", "purpose": "encryption",
            "wavelength": "C35", "topology_role": "ring"
        }));
    });
    let diags = diagnose(&doc);
    assert!(
        diags.iter().any(|d| d.rule == Rule::WavelengthBudget),
        "want wavelength budget diagnostic, got {diags:?}"
    );
}

#[test]
fn missing_kms_uplink_fails_mesh_rule() {
    let doc = mutated(|v| {
        let channels = v["classical_channels"].as_array_mut().unwrap();
        channels.retain(|c| c["id"] != "kms-n4");
    });
    let diags = diagnose(&doc);
    assert!(
        diags
            .iter()
            .any(|d| d.rule == Rule::KmsMesh && d.element == "N4"),
        "want kms mesh diagnostic for N4, got {diags:?}"
    );
}

#[test]
fn duplicate_wavelength_fails_uniqueness_rule() {
    let doc = mutated(|v| {
        v["classical_channels"][1]["wavelength"] = json!("C21");
    });
    let diags = diagnose(&doc);
    assert!(
        diags
            .iter()
            .any(|d| d.rule == Rule::WavelengthUniqueness && d.element == "C21"),
        "want uniqueness diagnostic for C21, got {diags:?}"
    );
}

#[test]
fn validate_accepts_whatever_load_accepts() {
    // load_topology gates on validate, so an accepted config must be clean.
    let topo = load_topology(&nicosia_text()).unwrap();
    assert_eq!(validate(&topo), vec![]);
}
