use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::units::{ev_to_au, HARTREE_EV};

/// Noble-gas species with preset parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Species {
    Helium,
    Neon,
    Argon,
}

impl Species {
    pub fn ionization_potential_ev(self) -> f64 {
        match self {
            Species::Helium => 24.5874,
            Species::Neon => 21.5645,
            Species::Argon => 15.7596,
        }
    }

    /// Effective number of active electrons scaling the s-state response.
    pub fn active_electrons(self) -> f64 {
        match self {
            Species::Helium => 2.0,
            Species::Neon | Species::Argon => 4.0,
        }
    }

    /// Numeric identifier stored in binary table headers.
    pub fn code(self) -> u64 {
        match self {
            Species::Helium => 2,
            Species::Neon => 10,
            Species::Argon => 18,
        }
    }

    pub fn from_code(code: u64) -> Option<Self> {
        match code {
            2 => Some(Species::Helium),
            10 => Some(Species::Neon),
            18 => Some(Species::Argon),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Species::Helium => "helium",
            Species::Neon => "neon",
            Species::Argon => "argon",
        }
    }
}

impl std::str::FromStr for Species {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "he" | "helium" => Ok(Species::Helium),
            "ne" | "neon" => Ok(Species::Neon),
            "ar" | "argon" => Ok(Species::Argon),
            _ => Err(Error::config("atom", format!("unknown species `{s}`"))),
        }
    }
}

/// Species parameters in atomic units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AtomModel {
    ip: f64,
    n_el: f64,
    alpha: f64,
    species: Option<Species>,
}

impl AtomModel {
    /// `ip` in a.u.; `n_el` ≥ 1.
    pub fn new(ip: f64, n_el: f64) -> Result<Self> {
        if !(ip > 0.0 && ip.is_finite()) {
            return Err(Error::Domain {
                what: "ionization potential",
                value: ip,
            });
        }
        if !(n_el >= 1.0) {
            return Err(Error::Domain {
                what: "active electron count",
                value: n_el,
            });
        }
        Ok(Self {
            ip,
            n_el,
            alpha: 2.0 * ip,
            species: None,
        })
    }

    pub fn preset(species: Species) -> Self {
        Self {
            species: Some(species),
            ..Self::new(ev_to_au(species.ionization_potential_ev()), species.active_electrons())
                .expect("preset parameters are valid")
        }
    }

    pub fn with_active_electrons(self, n_el: f64) -> Result<Self> {
        let mut out = Self::new(self.ip, n_el)?;
        out.species = self.species;
        Ok(out)
    }

    pub fn neon() -> Self {
        Self::preset(Species::Neon)
    }

    pub fn helium() -> Self {
        Self::preset(Species::Helium)
    }

    pub fn argon() -> Self {
        Self::preset(Species::Argon)
    }

    pub fn ip(&self) -> f64 {
        self.ip
    }

    pub fn ip_ev(&self) -> f64 {
        self.ip * HARTREE_EV
    }

    pub fn n_el(&self) -> f64 {
        self.n_el
    }

    /// Width constant of the s-state transition element, always 2·Ip.
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn species(&self) -> Option<Species> {
        self.species
    }

    /// Identifier used in table headers; 0 for custom atoms.
    pub fn code(&self) -> u64 {
        self.species.map_or(0, Species::code)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alpha_is_twice_ip() {
        for s in [Species::Helium, Species::Neon, Species::Argon] {
            let a = AtomModel::preset(s);
            assert_eq!(a.alpha(), 2.0 * a.ip());
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(AtomModel::new(-1.0, 2.0).is_err());
        assert!(AtomModel::new(0.5, 0.5).is_err());
    }
}
