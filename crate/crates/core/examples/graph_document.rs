//! Builds a small graph with a Poisson total and a multinomial split,
//! writes it as a TOML document and reads it back.

use evsynth::graph::{Graph, GraphBuilder, Observation, Prior, Support};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut b = GraphBuilder::new();
    let mu = b.add_basic(
        "mu",
        Support::PositiveReal,
        Prior::Uniform {
            lower: 0.0,
            upper: 100.0,
        },
    )?;
    let w = b.add_simplex("w", &["w.a", "w.b", "w.c"], vec![1.0; 3])?;
    let total = b.add_data(
        "total",
        vec![mu],
        Observation::Poisson {
            x: 12,
            exposure: 1.0,
        },
    )?;
    b.add_data(
        "split",
        w,
        Observation::Multinomial {
            counts: vec![2, 7, 3],
            size_from: Some(total),
        },
    )?;
    let graph = b.freeze()?;

    let text = graph.to_document();
    println!("{text}");
    let back = Graph::from_document(&text)?;
    let theta = graph.assignment_from(&[("mu", 12.0), ("w.a", 0.2), ("w.b", 0.5), ("w.c", 0.3)])?;
    let theta_back =
        back.assignment_from(&[("mu", 12.0), ("w.a", 0.2), ("w.b", 0.5), ("w.c", 0.3)])?;
    println!(
        "log joint {:.6} original, {:.6} reloaded",
        graph.log_joint(&theta)?,
        back.log_joint(&theta_back)?
    );
    Ok(())
}
