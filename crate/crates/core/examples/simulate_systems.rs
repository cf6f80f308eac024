//! Rolls out each task family under the alternating control signal,
//! checks energy conservation without control and writes the cart-pole
//! trajectory to a CSV file.

use paml::envs::{
    rollout, simulate_task, CartDoublePoleParams, CartPoleParams, Dynamics, EnvKind, PendubotParams, SystemParams,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let systems = [
        SystemParams::CartPole(CartPoleParams::new(1.0, 1.0)),
        SystemParams::Pendubot(PendubotParams::new(1.0, 1.5)),
        SystemParams::CartDoublePole(CartDoublePoleParams::new(1.0, 0.8)),
    ];
    for sys in &systems {
        let kind = sys.kind();
        let traj = simulate_task(sys, 100)?;
        let last = traj.states.row(traj.len());
        println!("{:<17} dt {:.3}s  final state {:.3}", kind.name(), kind.dt(), last);

        // unforced swing from a tilted start
        let mut x0 = vec![0.0; kind.state_dim()];
        x0[kind.angle_indices()[0]] = 1.0;
        let free = rollout(sys, &x0, &[0.0; 100], kind.dt(), kind.substeps())?;
        let e0 = sys.energy(&x0);
        let e1 = sys.energy(free.states.row(100).as_slice().unwrap());
        println!("{:<17} energy drift over 100 steps: {:.2e}", "", ((e1 - e0) / e0).abs());
    }

    let path = std::env::temp_dir().join("cartpole_trajectory.csv");
    let traj = simulate_task(&systems[0], 50)?;
    traj.write_csv(std::fs::File::create(&path)?)?;
    println!("cart-pole trajectory written to {}", path.display());
    assert_eq!(EnvKind::CartPole.obs_dim(), 5);
    Ok(())
}
