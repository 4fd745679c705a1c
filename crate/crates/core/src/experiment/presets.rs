//! Built-in parameter sets, layered under any config file.

pub const NAMES: [&str; 6] = ["noninteracting", "contact", "bolker-pacala", "full-long", "full-short", "extinction"];

const NONINTERACTING: &str = r#"
[model]
dimension = 2
side = 20.0
a_plus = { family = "zero" }
a_minus = { family = "zero" }
b_plus = { family = "constant", amplitude = 0.5 }
b_minus = { family = "constant", amplitude = 1.0 }

[run]
t_end = 20.0
snapshot_times = [0.0, 0.5, 1.0, 2.0, 5.0, 10.0, 20.0]
replicates = 1000
master_seed = 20240101
initial = { kind = "poisson", kappa = 0.2 }

[analysis]
probes = [{ lo = [7.5, 7.5], hi = [12.5, 12.5] }]
r_max = 5.0
r_bins = 20

[kinetic]
nodes = 32
"#;

const CONTACT: &str = r#"
[model]
dimension = 2
side = 10.0
a_plus = { family = "tophat", mass = 1.0, scale = 0.5 }
a_minus = { family = "zero" }
b_plus = { family = "constant", amplitude = 0.0 }
b_minus = { family = "constant", amplitude = 0.5 }

[run]
t_end = 8.0
snapshot_times = [0.0, 2.0, 4.0, 8.0]
replicates = 300
master_seed = 20240102
initial = { kind = "poisson", kappa = 0.5 }

[analysis]
probes = [{ lo = [3.0, 3.0], hi = [7.0, 7.0] }]
r_max = 3.0
r_bins = 15
"#;

const BOLKER_PACALA: &str = r#"
[model]
dimension = 2
side = 12.0
a_plus = { family = "gaussian", mass = 1.0, scale = 0.5 }
a_minus = { family = "gaussian", mass = 0.5, scale = 1.0 }
b_plus = { family = "constant", amplitude = 0.0 }
b_minus = { family = "constant", amplitude = 0.2 }

[run]
t_end = 20.0
snapshot_times = [0.0, 1.0, 5.0, 20.0]
replicates = 500
master_seed = 20240103
initial = { kind = "poisson", kappa = 1.0 }

[analysis]
probes = [{ lo = [4.0, 4.0], hi = [8.0, 8.0] }]
r_max = 4.0
r_bins = 16
"#;

const FULL_LONG: &str = r#"
[model]
dimension = 2
side = 12.0
a_plus = { family = "gaussian", mass = 0.5, scale = 0.5 }
a_minus = { family = "gaussian", mass = 1.0, scale = 1.0 }
b_plus = { family = "constant", amplitude = 1.0 }
b_minus = { family = "constant", amplitude = 0.5 }

[run]
t_end = 20.0
snapshot_times = [0.0, 1.0, 5.0, 20.0]
replicates = 500
master_seed = 20240104
initial = { kind = "poisson", kappa = 1.0 }

[analysis]
probes = [{ lo = [4.0, 4.0], hi = [8.0, 8.0] }]
n_max = 6
r_max = 4.0
r_bins = 16
"#;

const FULL_SHORT: &str = r#"
[model]
dimension = 2
side = 12.0
a_plus = { family = "gaussian", mass = 0.5, scale = 1.0 }
a_minus = { family = "gaussian", mass = 1.0, scale = 0.5 }
b_plus = { family = "constant", amplitude = 1.0 }
b_minus = { family = "constant", amplitude = 0.5 }

[run]
t_end = 20.0
snapshot_times = [0.0, 1.0, 5.0, 20.0]
replicates = 500
master_seed = 20240105
initial = { kind = "poisson", kappa = 1.0 }

[analysis]
probes = [{ lo = [4.0, 4.0], hi = [8.0, 8.0] }]
n_max = 6
r_max = 4.0
r_bins = 16
"#;

const EXTINCTION: &str = r#"
[model]
dimension = 2
side = 10.0
a_plus = { family = "gaussian", mass = 0.5, scale = 0.5 }
a_minus = { family = "gaussian", mass = 0.2, scale = 0.5 }
b_plus = { family = "constant", amplitude = 0.0 }
b_minus = { family = "constant", amplitude = 1.0 }

[run]
t_end = 10.0
snapshot_times = [0.0, 1.0, 5.0, 10.0]
replicates = 300
master_seed = 20240106
initial = { kind = "poisson", kappa = 1.0 }

[analysis]
probes = [{ lo = [3.0, 3.0], hi = [7.0, 7.0] }]
"#;

/// TOML text of a named preset.
pub fn preset(name: &str) -> Option<&'static str> {
    Some(match name {
        "noninteracting" => NONINTERACTING,
        "contact" => CONTACT,
        "bolker-pacala" => BOLKER_PACALA,
        "full-long" => FULL_LONG,
        "full-short" => FULL_SHORT,
        "extinction" => EXTINCTION,
        _ => return None,
    })
}
