//! Candidate selection, confidence-gated re-ranking and Hits@k on a
//! hand-built embedding table, with a stand-in entailment scorer.

use kg_entail::inference::{evaluate_pairs, rerank, select_candidates, EmbeddingTable};
use ndarray::{arr1, arr2};

fn main() -> kg_entail::Result<()> {
    let names = ["paris", "parma", "london", "lisbon", "berlin"]
        .map(String::from)
        .to_vec();
    let table = EmbeddingTable::new(
        names,
        arr2(&[[1.0, 0.1], [1.0, 0.15], [0.1, 1.0], [0.3, 1.0], [-1.0, 0.2]]),
    )?;
    // pretend probabilities that the query entails each candidate
    let entails = |query: &str, cand: &str| if query.starts_with(cand) { 0.95 } else { 0.1 };

    let queries = [
        ("parma_city", arr1(&[1.0, 0.14])),
        ("lisbon_city", arr1(&[0.3, 1.0])),
        // nearer to parma than to paris, with lower confidence
        ("paris_city", arr1(&[0.9, 0.5])),
    ];
    let gold = vec![
        ("parma_city".to_string(), "parma".to_string()),
        ("lisbon_city".to_string(), "lisbon".to_string()),
        ("paris_city".to_string(), "paris".to_string()),
    ];
    for delta in [0.0, 0.95, 1.0] {
        let mut results = Vec::new();
        for (q, v) in &queries {
            let cands = select_candidates(v.view(), &table, 3)?;
            results.push(rerank(q, cands, delta, |c| Ok(entails(q, &c.entity)))?);
        }
        let report = evaluate_pairs(&results, &gold, &[1, 3])?;
        let n = results.iter().filter(|r| r.reranked).count();
        println!(
            "delta {delta}: {n} re-ranked, Hits@1 {:.3}, MRR {:.3}",
            report.hits(1),
            report.mrr
        );
        for r in &results {
            println!(
                "  {} (confidence {:.5}) -> {:?}",
                r.query, r.confidence, r.final_order
            );
        }
    }
    Ok(())
}
