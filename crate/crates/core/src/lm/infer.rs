use super::params::LmParams;
use super::scalar::Scalar;
use crate::dist::{DistKind, EntityDistribution};
use crate::error::{Error, Result};
use crate::kg::{EntityId, RelationId};
use crate::walk::{make_query_prompt, TokenVocab};

/// Entity-restricted next-token distribution for the prompt `[e1, r]`.
///
/// The final-position logits are sliced to the entity block and normalised
/// in `f64`; entries that would underflow are floored so every probability is
/// strictly positive.
pub fn lm_entity_distribution<F: Scalar>(
    params: &LmParams<F>,
    vocab: &TokenVocab,
    e1: EntityId,
    r: RelationId,
) -> Result<EntityDistribution> {
    check_ids(vocab, e1, r)?;
    let prompt = make_query_prompt(vocab, e1, r);
    let logits = params.last_logits(&prompt)?;
    let block: Vec<f64> = logits[vocab.entity_block()]
        .iter()
        .map(|x| x.f64())
        .collect();
    Ok(EntityDistribution {
        temperature: None,
        ..EntityDistribution::softmax(&block, 1.0, DistKind::Lm)
    })
}

/// Most likely tail entity; ties go to the smallest id.
pub fn predict<F: Scalar>(
    params: &LmParams<F>,
    vocab: &TokenVocab,
    e1: EntityId,
    r: RelationId,
) -> Result<EntityId> {
    Ok(lm_entity_distribution(params, vocab, e1, r)?.argmax())
}

fn check_ids(vocab: &TokenVocab, e1: EntityId, r: RelationId) -> Result<()> {
    if e1.index() >= vocab.entities {
        return Err(Error::OutOfRange {
            kind: "entity",
            id: e1.index(),
            size: vocab.entities,
        });
    }
    if r.index() >= vocab.relations {
        return Err(Error::OutOfRange {
            kind: "relation",
            id: r.index(),
            size: vocab.relations,
        });
    }
    Ok(())
}
