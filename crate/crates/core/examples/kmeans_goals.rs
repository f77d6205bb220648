//! Clusters goal phrases into a goal matrix and prints the annotation
//! listing with one exemplar per cluster.

use goaltm::metrics::cluster_for_annotation;
use goaltm::providers::PlantedEmbedder;
use goaltm::train::build_goal_matrix;

fn main() -> goaltm::Result<()> {
    let phrases: Vec<String> = [
        "c0_budget c0_savings",
        "c0_debt c0_rent",
        "c0_salary c0_loan",
        "c1_exam c1_thesis",
        "c1_lecture c1_grade",
        "c1_advisor c1_research",
        "c2_breakup c2_trust",
        "c2_partner c2_lonely",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let embedder = PlantedEmbedder::new(16, 3)?;

    let goals = build_goal_matrix(&phrases, 3, &embedder, 11)?;
    for c in 0..goals.k() {
        println!("cluster {c}: {:?}", goals.members(c));
    }

    for cluster in cluster_for_annotation(&phrases, 3, &embedder, 11)? {
        println!("annotate {:?} ({} members)", cluster.exemplar, cluster.members.len());
    }
    Ok(())
}
