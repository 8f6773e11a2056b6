//! Entropy, KL divergence and empirical conditional mutual information on
//! small hand-made distributions.

use std::collections::BTreeMap;

use openset3cm::infotheory::{
    class_aggregate, cross_entropy, empirical_cmi, entropy, kl_divergence, ProbVector,
};

fn main() -> openset3cm::Result<()> {
    let p = ProbVector::new(vec![0.7, 0.2, 0.1])?;
    let q = ProbVector::uniform(3)?;
    println!("H(p)        = {:.6} nats", entropy(&p));
    println!("H(p, q)     = {:.6}", cross_entropy(&p, &q)?);
    println!("KL(p || q)  = {:.6}", kl_divergence(&p, &q)?);
    println!("H(p) + KL   = {:.6}", entropy(&p) + kl_divergence(&p, &q)?);

    // Two classes. Members of "spread" disagree with each other, members of
    // "tight" all predict the same thing, so only "spread" carries
    // information beyond its label.
    let mut groups = BTreeMap::new();
    groups.insert(
        "spread",
        vec![
            ProbVector::new(vec![1.0, 0.0])?,
            ProbVector::new(vec![0.0, 1.0])?,
        ],
    );
    groups.insert("tight", vec![ProbVector::new(vec![0.3, 0.7])?; 2]);
    println!(
        "aggregate of spread = {:?}",
        class_aggregate(&groups["spread"])?.as_slice()
    );
    println!(
        "empirical CMI       = {:.6} (log 2 / 2 = {:.6})",
        empirical_cmi(&groups)?,
        2f64.ln() / 2.0
    );
    Ok(())
}
