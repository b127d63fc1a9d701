//! The visit-level building blocks: embedding bags of codes into one vector
//! with the rectified, softly-normalized set function, then combining the
//! disease and treatment vectors through the interaction transform.

use emrisk::diffcore::{ParamSet, Tape};
use emrisk::embedding::{embed_bag, visit_vector, CodeBag, EmbeddingTable, Interaction, Vocabulary};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let vocabulary = Vocabulary::new(["E11", "I10", "J45"], ["RX1", "RX2"]);
    let mut params = ParamSet::new();
    let table = EmbeddingTable::init(&mut params, &vocabulary, 4, 7);
    let epsilon = 1e-3;

    // A bag is order-free: permuting its members cannot change the vector.
    let mut tape = Tape::new();
    let forward = embed_bag(&mut tape, &params, &table, &CodeBag::new(vec![0, 1, 2]), epsilon)?;
    let reversed = embed_bag(&mut tape, &params, &table, &CodeBag::new(vec![2, 0, 1]), epsilon)?;
    println!("bag {{E11, I10, J45}}  -> {:?}", tape.value(forward).data());
    println!("same bag, reordered -> {:?}", tape.value(reversed).data());
    assert_eq!(tape.value(forward).data(), tape.value(reversed).data());

    // Rectification keeps components nonnegative; the epsilon-softened
    // normalization keeps the norm strictly below one.
    let norm: f64 = tape.value(forward).data().iter().map(|x| x * x).sum::<f64>().sqrt();
    println!("components >= 0: {}", tape.value(forward).data().iter().all(|&x| x >= 0.0));
    println!("norm = {norm:.6} (always < 1)");

    // An empty bag (a visit with no treatments, say) is the zero vector.
    let empty = embed_bag(&mut tape, &params, &table, &CodeBag::empty(), epsilon)?;
    println!("empty bag -> {:?}", tape.value(empty).data());

    // The visit vector is rho(d - p). With the default rho(x) = (1+x)^2,
    // identical disease and treatment vectors give the all-ones vector:
    // "every concern fully answered" is the neutral input.
    let mut tape = Tape::new();
    let d = embed_bag(&mut tape, &params, &table, &CodeBag::new(vec![0, 2]), epsilon)?;
    let v_neutral = visit_vector(&mut tape, d, d, Interaction::SquareShift)?;
    println!("rho(d - d) = {:?}", tape.value(v_neutral).data());

    // With distinct bags, each component lies in [0, 4): the gap components
    // are in (-1, 1), and (1 + gap)^2 maps that interval into [0, 4).
    let p = embed_bag(&mut tape, &params, &table, &CodeBag::new(vec![3]), epsilon)?;
    let v = visit_vector(&mut tape, d, p, Interaction::SquareShift)?;
    println!("rho(d - p) = {:?}", tape.value(v).data());
    Ok(())
}
