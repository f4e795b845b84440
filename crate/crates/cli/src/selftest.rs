//! Quick invariant checks runnable from the command line.

use starhop::channel::{enumerate_paths, pathloss_db};
use starhop::marl::{Algorithm, Hyperparams, RunSetup, Trainer};
use starhop::scenario::{dbm_to_watt, noise_power_dbm, ScenarioConfig};

type Check = Result<(), String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Check {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn units() -> Check {
    let pl = pathloss_db(28.0, 10.0).map_err(|e| e.to_string())?;
    ensure((pl - 82.3432).abs() <= 1e-3, format!("pathloss {pl}"))?;
    let noise = noise_power_dbm(1e8).map_err(|e| e.to_string())?;
    ensure((noise + 94.0).abs() <= 1e-9, format!("noise {noise}"))?;
    let p = dbm_to_watt(33.0).map_err(|e| e.to_string())?;
    ensure(((p - 1.99526) / 1.99526).abs() <= 1e-5, format!("33 dBm = {p} W"))
}

fn path_counts() -> Check {
    for v in 1..=6 {
        let n = enumerate_paths(v).map_err(|e| e.to_string())?.len();
        ensure(n == (1 << v) - 1, format!("V={v}: {n} paths"))?;
    }
    Ok(())
}

fn constraints() -> Check {
    let config = ScenarioConfig {
        m_antennas: 2,
        n_elements: 4,
        v_surfaces: 2,
        i_regions: 3,
        users_per_region: vec![1, 1, 2],
        ..Default::default()
    };
    let hyper = Hyperparams {
        episodes: 2,
        slots_per_episode: 25,
        hidden: vec![16],
        batch_size: 8,
        replay_capacity: 512,
        ..Default::default()
    };
    for alg in Algorithm::ALL {
        let mut t = Trainer::new(RunSetup::new(config.clone(), hyper.clone(), alg, 7)).map_err(|e| e.to_string())?;
        while !t.finished() {
            t.step().map_err(|e| e.to_string())?;
            let v = t.env().constraint_violations();
            ensure(v.is_empty(), format!("{}: {}", alg.name(), v.join("; ")))?;
        }
    }
    Ok(())
}

pub fn run_all() -> Vec<(&'static str, Check)> {
    vec![
        ("unit conversions", units()),
        ("path counts", path_counts()),
        ("constraints during training", constraints()),
    ]
}
