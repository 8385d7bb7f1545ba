//! Spin up the stochastic Kuramoto–Sivashinsky model from the initial bump
//! profile and write the resulting state with its mesh coordinates.
//!
//! cargo run --release --example sks_spinup -- [cells] [steps]

use nudging::fem::PeriodicP2Mesh;
use nudging::model::Model;
use nudging::rng::{Purpose, StreamKey};
use nudging::sks::{spin_up_initial, Sks, SksParams};

fn main() -> nudging::Result<()> {
    let mut args = std::env::args().skip(1);
    let cells = args.next().map_or(100, |a| a.parse().expect("cell count"));
    let steps = args.next().map_or(200, |a| a.parse().expect("step count"));
    let model = Sks::with_equispaced_obs(SksParams { n_cells: cells, ..SksParams::default() }, 10)?;
    let mesh: &PeriodicP2Mesh = model.mesh();

    let mut stream = StreamKey::new(0, Purpose::Initial).derive();
    let u = spin_up_initial(&model, steps, &mut stream)?;
    let mass = model.mass().mul_vec(&u).iter().sum::<f64>();
    let (lo, hi) = u.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    println!("{cells} cells, {} dofs, {steps} steps of dt {}", mesh.n_dofs(), model.dt());
    println!("range [{lo:.3}, {hi:.3}], integral {mass:.3e}");
    println!("observed: {:.3?}", model.observe(&u));

    let path = std::env::temp_dir().join("sks_spinup.csv");
    let mut w = csv::Writer::from_path(&path).map_err(nudging::Error::from)?;
    w.write_record(["x", "u"]).map_err(nudging::Error::from)?;
    for (x, v) in model.dof_coordinates().iter().zip(&u) {
        w.write_record([x.to_string(), v.to_string()]).map_err(nudging::Error::from)?;
    }
    w.flush()?;
    println!("wrote {}", path.display());
    Ok(())
}
