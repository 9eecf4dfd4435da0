mod common;

use elyte_core::tokenizer::{TokenIds, BOS, EOS};
use elyte_core::transformer::{loss_and_gradients, manifest};

#[test]
fn every_tensor_passes_finite_differences() {
    let report = common::gradient_check(21);
    assert_eq!(report.len(), manifest(&common::gradcheck_config()).len());
    for t in &report {
        assert_eq!(
            t.failures, 0,
            "{}: worst relative error {:e}",
            t.name, t.worst_rel
        );
    }
}

#[test]
fn unmasked_batch_still_has_finite_gradients() {
    let m = common::gradcheck_model(3);
    let t = TokenIds(vec![BOS, 5, 6, 7, EOS]);
    let (loss, g) = loss_and_gradients(&m, &t, &t, None).unwrap();
    assert!(loss.is_finite() && loss >= 0.0);
    assert!(g.all_finite());
    assert!(g.tensors().iter().any(|t| t.iter().any(|&x| x != 0.0)));
}

#[test]
fn tied_projection_reaches_every_embedding_row() {
    let m = common::gradcheck_model(4);
    let t = TokenIds(vec![BOS, 5, 6, EOS]);
    let (_, g) = loss_and_gradients(&m, &t, &t, None).unwrap();
    for row in g.embedding.chunks(m.config.d_model) {
        assert!(row.iter().any(|&x| x != 0.0));
    }
}

#[test]
fn per_tensor_error_report() {
    for t in common::gradient_check(5) {
        eprintln!(
            "{:<32} probes {:>3} worst {:.2e}",
            t.name, t.probes, t.worst_rel
        );
        assert!(t.worst_rel <= common::REL_TOL);
    }
}
