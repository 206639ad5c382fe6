//! Source arrival processes and key sampling.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Zipf};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arrival {
    #[default]
    Poisson,
    Constant,
}

/// Half-open window `[start, end)` with no emissions, seconds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pause {
    pub start: f64,
    pub end: f64,
}

/// Emission times of one source instance.
#[derive(Clone, Debug)]
pub struct ArrivalClock {
    arrival: Arrival,
    rate: f64,
    pause: Option<Pause>,
    next: f64,
}

impl ArrivalClock {
    /// `rate` is tuples per second; a zero rate never fires.
    pub fn new(arrival: Arrival, rate: f64, pause: Option<Pause>, rng: &mut ChaCha8Rng) -> Self {
        let mut c = ArrivalClock { arrival, rate, pause, next: 0.0 };
        c.next = if rate > 0.0 { c.gap(rng) } else { f64::INFINITY };
        c.skip_pause(rng);
        c
    }

    fn gap(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self.arrival {
            Arrival::Poisson => Exp::new(self.rate).expect("positive rate").sample(rng),
            Arrival::Constant => 1.0 / self.rate,
        }
    }

    fn skip_pause(&mut self, rng: &mut ChaCha8Rng) {
        if let Some(p) = self.pause {
            if self.next >= p.start && self.next < p.end {
                // Poisson arrivals are memoryless, so restarting at `end` is exact.
                self.next = match self.arrival {
                    Arrival::Poisson => p.end + self.gap(rng),
                    Arrival::Constant => p.end,
                };
            }
        }
    }

    /// Next emission strictly before `until`, advancing the clock.
    pub fn next_before(&mut self, until: f64, rng: &mut ChaCha8Rng) -> Option<f64> {
        if self.next >= until {
            return None;
        }
        let t = self.next;
        self.next += self.gap(rng);
        self.skip_pause(rng);
        Some(t)
    }
}

/// Draws keys in `1..=key_count`, Zipf-distributed with exponent `skew`
/// (uniform at skew 0).
#[derive(Clone, Copy, Debug)]
pub struct KeySampler {
    zipf: Zipf<f64>,
}

impl KeySampler {
    pub fn new(key_count: u64, skew: f64) -> Result<Self> {
        let zipf = Zipf::new(key_count as f64, skew)
            .map_err(|e| Error::InvalidDag(format!("key distribution ({key_count} keys, skew {skew}): {e}")))?;
        Ok(KeySampler { zipf })
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> u64 {
        self.zipf.sample(rng) as u64
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Emission {
    pub time: f64,
    pub key: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TtWorkload {
    /// Tweets per second.
    pub rate: f64,
    pub key_count: u64,
    pub skew: f64,
}

/// Poisson tweet arrivals, each tagged with a Zipf key.
pub fn gen_tt_workload(cfg: &TtWorkload, duration: f64, seed: u64) -> Result<Vec<Emission>> {
    let mut rng = seeded(seed, 0);
    let keys = KeySampler::new(cfg.key_count, cfg.skew)?;
    let mut clock = ArrivalClock::new(Arrival::Poisson, cfg.rate, None, &mut rng);
    let mut out = Vec::new();
    while let Some(time) = clock.next_before(duration, &mut rng) {
        out.push(Emission { time, key: keys.sample(&mut rng) });
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TiWorkload {
    /// Tuples per second on each stream.
    pub rate: f64,
    /// MB.
    pub truck_size: f64,
    pub congestion_size: f64,
    pub congestion_pause: Option<Pause>,
}

/// Two independent Poisson streams `(truck, congestion)`.
pub fn gen_ti_workload(cfg: &TiWorkload, duration: f64, seed: u64) -> Result<(Vec<Emission>, Vec<Emission>)> {
    if !(cfg.truck_size > 0.0 && cfg.congestion_size > 0.0) {
        return Err(Error::InvalidDag("stream tuple sizes must be positive".into()));
    }
    let stream = |id: u64, pause: Option<Pause>| {
        let mut rng = seeded(seed, id);
        let mut clock = ArrivalClock::new(Arrival::Poisson, cfg.rate, pause, &mut rng);
        let mut out = Vec::new();
        while let Some(time) = clock.next_before(duration, &mut rng) {
            out.push(Emission { time, key: 0 });
        }
        out
    };
    Ok((stream(0, None), stream(1, cfg.congestion_pause)))
}

/// Independent deterministic stream `id` under `seed`.
pub fn seeded(seed: u64, id: u64) -> ChaCha8Rng {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}
