//! Evaluates the three training losses on hand-picked inputs.

use kg_entail::objectives::{entailment_bce, margin_ranking_loss, prompt_margin_loss, total_loss};
use ndarray::arr1;

fn main() -> kg_entail::Result<()> {
    let anchor = arr1(&[1.0, 0.0, 0.0]);
    let positive = arr1(&[0.9, 0.1, 0.0]);
    let close_negative = arr1(&[0.8, 0.3, 0.0]);
    let far_negative = arr1(&[-1.0, 0.0, 0.5]);

    // zero once the negative is at least `margin` further away than the positive
    let batch = [
        (anchor.view(), positive.view(), close_negative.view()),
        (anchor.view(), positive.view(), far_negative.view()),
    ];
    let l_mr = margin_ranking_loss(&batch, 1.0)?;
    println!("margin ranking, close vs far negative: {l_mr:.4}");

    // positive pair at 0.8, negative pair at 0.3
    let l_be = entailment_bce(0.8, 0.3);
    println!("entailment cross-entropy: {l_be:.4}");
    println!(
        "entailment cross-entropy at chance: {:.4}",
        entailment_bce(0.5, 0.5)
    );

    for (p_pos, p_neg) in [(0.9, 0.2), (0.6, 0.5), (0.4, 0.7)] {
        println!(
            "prompt hinge p+={p_pos} p-={p_neg}: {:.4}",
            prompt_margin_loss(p_pos, p_neg, 0.5)
        );
    }
    println!(
        "total: {:.4}",
        total_loss(l_mr, l_be, prompt_margin_loss(0.9, 0.2, 0.5))?
    );
    Ok(())
}
