//! Link geometry, per-attempt success probability and timing constants.

use crate::channels::{fiber_transmissivity, satellite_transmissivity, SatelliteHardware};
use crate::error::{Error, Result};

pub const C_FIBER_KM_S: f64 = 200_000.0;
pub const C_VACUUM_KM_S: f64 = 299_792.458;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LinkKind {
    Ground,
    Satellite,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkConfig {
    pub kind: LinkKind,
    /// Node separation, km.
    pub d: f64,
    /// Satellite altitude, km.
    pub h: f64,
    /// Source attempt rate, Hz.
    pub mu: f64,
    /// Fiber loss, dB/km.
    pub alpha_f: f64,
    /// Atmospheric extinction, 1/km.
    pub alpha_a: f64,
    /// Height of the attenuating atmosphere, km.
    pub atmosphere_ceiling: f64,
    pub c_fiber: f64,
    pub c_vacuum: f64,
    pub hw: SatelliteHardware,
}

impl LinkConfig {
    pub fn ground(d: f64, mu: f64) -> Self {
        Self {
            kind: LinkKind::Ground,
            d,
            h: 400.0,
            mu,
            alpha_f: 0.2,
            alpha_a: 0.028125,
            atmosphere_ceiling: 10.0,
            c_fiber: C_FIBER_KM_S,
            c_vacuum: C_VACUUM_KM_S,
            hw: SatelliteHardware::default(),
        }
    }

    pub fn satellite(d: f64, h: f64, mu: f64) -> Self {
        Self {
            kind: LinkKind::Satellite,
            h,
            ..Self::ground(d, mu)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |key: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::config(key, format!("must be positive and finite, got {v}")))
            }
        };
        let non_negative = |key: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::config(key, format!("must be non-negative and finite, got {v}")))
            }
        };
        // d = 0 is allowed as the co-located limit.
        non_negative("d_km", self.d)?;
        positive("mu_hz", self.mu)?;
        non_negative("alpha_f_db_per_km", self.alpha_f)?;
        non_negative("alpha_a_per_km", self.alpha_a)?;
        non_negative("atmosphere_ceiling_km", self.atmosphere_ceiling)?;
        positive("c_fiber_km_s", self.c_fiber)?;
        positive("c_vacuum_km_s", self.c_vacuum)?;
        if self.kind == LinkKind::Satellite {
            positive("h_km", self.h)?;
            if self.atmosphere_ceiling >= self.h {
                return Err(Error::config(
                    "atmosphere_ceiling_km",
                    format!("must lie below the satellite altitude {}", self.h),
                ));
            }
            positive("hardware.d_s_m", self.hw.d_s)?;
            positive("hardware.d_g_m", self.hw.d_g)?;
            positive("hardware.lambda_m", self.hw.lambda)?;
        }
        Ok(())
    }
}

/// Delays of one attempt, in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Delays {
    /// Source to node.
    pub photon_delay: f64,
    /// Node to node over the classical channel.
    pub herald_delay: f64,
    /// Spacing of source emissions.
    pub period: f64,
}

/// Free-space slant length and its part below the atmosphere ceiling, km.
pub fn slant_geometry(d: f64, h: f64, atmosphere_ceiling: f64) -> (f64, f64) {
    let l_o = h.hypot(d / 2.0);
    (l_o, l_o * atmosphere_ceiling / h)
}

/// Probability that both photons of one emission reach their nodes.
pub fn attempt_success_prob(cfg: &LinkConfig) -> f64 {
    match cfg.kind {
        LinkKind::Ground => fiber_transmissivity(cfg.d, cfg.alpha_f),
        LinkKind::Satellite => {
            let (l_o, l_a) = slant_geometry(cfg.d, cfg.h, cfg.atmosphere_ceiling);
            satellite_transmissivity(l_o, l_a, &cfg.hw, cfg.alpha_a).powi(2)
        }
    }
}

pub fn delays(cfg: &LinkConfig) -> Delays {
    let photon_delay = match cfg.kind {
        LinkKind::Ground => cfg.d / 2.0 / cfg.c_fiber,
        LinkKind::Satellite => slant_geometry(cfg.d, cfg.h, cfg.atmosphere_ceiling).0 / cfg.c_vacuum,
    };
    Delays {
        photon_delay,
        herald_delay: cfg.d / cfg.c_fiber,
        period: 1.0 / cfg.mu,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::free_space_transmissivity;
    use proptest::prelude::*;

    #[test]
    fn ground_examples() {
        let cfg = LinkConfig::ground(20.0, 1e9);
        assert!((attempt_success_prob(&cfg) - 0.398_107).abs() < 1e-6);
        assert_eq!(attempt_success_prob(&LinkConfig::ground(0.0, 1e9)), 1.0);
        let d = delays(&cfg);
        assert!((d.herald_delay - 1e-4).abs() < 1e-18);
        assert!((d.photon_delay - 5e-5).abs() < 1e-18);
        assert_eq!(d.period, 1e-9);
    }

    #[test]
    fn satellite_examples() {
        let (l_o, l_a) = slant_geometry(500.0, 400.0, 10.0);
        assert!((l_o - 471.699).abs() < 1e-3);
        assert!((l_a - l_o / 40.0).abs() < 1e-12);
        assert_eq!(slant_geometry(0.0, 400.0, 10.0), (400.0, 10.0));
        assert_eq!(slant_geometry(500.0, 400.0, 0.0).1, 0.0);
        let cfg = LinkConfig::satellite(500.0, 400.0, 1e9);
        let eta_o = free_space_transmissivity(l_o, &cfg.hw);
        assert!((eta_o - 0.81665).abs() < 1e-4);
        let want = (eta_o * (-0.028125 * l_a).exp()).powi(2);
        assert!((attempt_success_prob(&cfg) - want).abs() < 1e-15);
        let d = delays(&cfg);
        assert!((d.photon_delay - l_o / C_VACUUM_KM_S).abs() < 1e-18);
        assert!((d.herald_delay - 500.0 / C_FIBER_KM_S).abs() < 1e-18);
    }

    #[test]
    fn validation() {
        assert!(LinkConfig::ground(20.0, 1e9).validate().is_ok());
        assert!(LinkConfig::ground(20.0, 0.0).validate().is_err());
        assert!(LinkConfig::ground(-1.0, 1e9).validate().is_err());
        let mut sat = LinkConfig::satellite(500.0, 400.0, 1e9);
        assert!(sat.validate().is_ok());
        sat.atmosphere_ceiling = 500.0;
        assert!(sat.validate().is_err());
    }

    proptest! {
        #[test]
        fn success_prob_decreases_with_distance(d in 0.1..500.0f64, dd in 0.1..100.0f64, h in 100.0..2000.0f64) {
            let g1 = attempt_success_prob(&LinkConfig::ground(d, 1e6));
            let g2 = attempt_success_prob(&LinkConfig::ground(d + dd, 1e6));
            prop_assert!(g2 < g1 && g1 <= 1.0 && g2 > 0.0);
            let s1 = attempt_success_prob(&LinkConfig::satellite(d, h, 1e6));
            let s2 = attempt_success_prob(&LinkConfig::satellite(d + dd, h, 1e6));
            prop_assert!(s2 <= s1 && s1 <= 1.0 && s2 > 0.0);
        }

        #[test]
        fn half_link_identity(d in 0.0..500.0f64, a in 0.0..1.0f64) {
            let mut cfg = LinkConfig::ground(d, 1e6);
            cfg.alpha_f = a;
            let half = fiber_transmissivity(d / 2.0, a);
            prop_assert!((attempt_success_prob(&cfg) - half * half).abs() < 1e-12);
        }

        #[test]
        fn slant_bounds(d in 0.0..5000.0f64, h in 20.0..2000.0f64, ceil in 0.0..20.0f64) {
            let (l_o, l_a) = slant_geometry(d, h, ceil);
            prop_assert!(l_o >= h);
            prop_assert!(l_a <= l_o);
        }
    }
}
