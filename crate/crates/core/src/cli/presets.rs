//! Configurations embedded in the binary, printable with `presets` and
//! includable as `preset:NAME`.

pub struct Preset {
    pub name: &'static str,
    pub text: &'static str,
}

macro_rules! preset {
    ($name:literal) => {
        Preset {
            name: $name,
            text: include_str!(concat!("../../configs/", $name, ".cfg")),
        }
    };
}

pub const PRESETS: &[Preset] = &[
    preset!("cu_mnt"),
    preset!("fsed_cu"),
    preset!("fit_cu"),
    preset!("rabi_jitter"),
    preset!("t1_raman"),
    preset!("cpmg_scaling"),
    preset!("cpmg_quantum"),
    preset!("cpmg_leakage_twta"),
    preset!("cpmg_leakage_sspa"),
    preset!("xy8_pulse_error"),
    preset!("dips_ac"),
];

pub fn get(name: &str) -> Option<&'static Preset> {
    let name = name.strip_suffix(".cfg").unwrap_or(name);
    PRESETS.iter().find(|p| p.name == name)
}

pub fn names() -> Vec<&'static str> {
    PRESETS.iter().map(|p| p.name).collect()
}
