//! RAM-block look-up tables. A block of `block_bits` bits can be addressed by
//! `B_i` input bits and return `B_o = block_bits / 2^B_i` output bits; wider
//! tables span several blocks.

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::csv::{int, num, Csv};
use crate::error::{invalid, Error, Result};

pub const DEFAULT_BLOCK_BITS: u64 = 4096;

/// Every `(B_i, B_o)` with `B_i ≥ 1` and `2^B_i · B_o == block_bits`.
pub fn partition_options(block_bits: u64) -> Result<Vec<(u32, u64)>> {
    if block_bits == 0 {
        return Err(invalid("block_bits must be positive"));
    }
    let out: Vec<(u32, u64)> = (1..64u32)
        .take_while(|bi| block_bits.trailing_zeros() >= *bi)
        .map(|bi| (bi, block_bits >> bi))
        .collect();
    if out.is_empty() {
        return Err(invalid(format!(
            "{block_bits} bits cannot be split into a power-of-two number of addresses"
        )));
    }
    Ok(out)
}

/// Blocks of `block_bits` needed to hold `2^B_i` entries of `B_o` bits.
pub fn blocks_needed(input_bits: u32, output_bits: u32, block_bits: u64) -> u64 {
    let total = (1u128 << input_bits) * output_bits as u128;
    total.div_ceil(block_bits as u128) as u64
}

/// Table geometry as it appears in scenario configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LutGeometry {
    #[serde(default = "default_block_bits")]
    pub block_bits: u64,
    #[serde(rename = "B_i")]
    pub input_bits: u32,
    #[serde(rename = "B_o")]
    pub output_bits: u32,
    pub domain: [f64; 2],
    pub range: [f64; 2],
}

fn default_block_bits() -> u64 {
    DEFAULT_BLOCK_BITS
}

impl LutGeometry {
    pub fn new(input_bits: u32, output_bits: u32, domain: [f64; 2], range: [f64; 2]) -> Self {
        Self {
            block_bits: DEFAULT_BLOCK_BITS,
            input_bits,
            output_bits,
            domain,
            range,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.block_bits == 0 {
            return Err(invalid("block_bits must be positive"));
        }
        if !(1..=24).contains(&self.input_bits) {
            return Err(invalid(format!("B_i must be in 1..=24, got {}", self.input_bits)));
        }
        if !(1..=63).contains(&self.output_bits) {
            return Err(invalid(format!("B_o must be in 1..=63, got {}", self.output_bits)));
        }
        let ok = |r: [f64; 2]| r[0].is_finite() && r[1].is_finite() && r[0] < r[1];
        if !ok(self.domain) {
            return Err(invalid(format!("domain must satisfy lo < hi, got {:?}", self.domain)));
        }
        if !ok(self.range) {
            return Err(invalid(format!("range must satisfy lo < hi, got {:?}", self.range)));
        }
        Ok(())
    }
}

#[derive(Debug)]
pub struct RamBlock {
    geometry: LutGeometry,
    data: Vec<u64>,
    cycles: AtomicU64,
}

impl Clone for RamBlock {
    fn clone(&self) -> Self {
        Self {
            geometry: self.geometry.clone(),
            data: self.data.clone(),
            cycles: AtomicU64::new(self.cycles.load(Ordering::Relaxed)),
        }
    }
}

impl PartialEq for RamBlock {
    fn eq(&self, other: &Self) -> bool {
        self.geometry == other.geometry && self.data == other.data
    }
}

impl RamBlock {
    /// Sample `f` at the midpoint of each of the `2^B_i` domain cells and
    /// round onto the `B_o`-bit range grid.
    pub fn tabulate(f: impl Fn(f64) -> f64, geometry: LutGeometry) -> Result<Self> {
        geometry.validate()?;
        let n = 1usize << geometry.input_bits;
        let [lo, hi] = geometry.domain;
        let width = (hi - lo) / n as f64;
        let values = (0..n)
            .map(|k| {
                let x = lo + (k as f64 + 0.5) * width;
                let y = f(x);
                if y.is_finite() {
                    Ok(y)
                } else {
                    Err(Error::DomainSingularity { x })
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        Self::from_values(&values, geometry)
    }

    /// Table whose k-th entry encodes `values[k]`.
    pub fn from_values(values: &[f64], geometry: LutGeometry) -> Result<Self> {
        geometry.validate()?;
        let n = 1usize << geometry.input_bits;
        if values.len() != n {
            return Err(invalid(format!("expected {n} values, got {}", values.len())));
        }
        let [rlo, rhi] = geometry.range;
        let levels = (1u64 << geometry.output_bits) as f64;
        let top = (1u64 << geometry.output_bits) - 1;
        let mut data = Vec::with_capacity(n);
        for (k, v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::DomainSingularity { x: k as f64 });
            }
            let e = ((v - rlo) / (rhi - rlo) * levels).round();
            data.push(e.clamp(0.0, top as f64) as u64);
        }
        Ok(Self {
            geometry,
            data,
            cycles: AtomicU64::new(0),
        })
    }

    pub fn geometry(&self) -> &LutGeometry {
        &self.geometry
    }

    pub fn input_bits(&self) -> u32 {
        self.geometry.input_bits
    }

    pub fn output_bits(&self) -> u32 {
        self.geometry.output_bits
    }

    pub fn data(&self) -> &[u64] {
        &self.data
    }

    pub fn blocks(&self) -> u64 {
        blocks_needed(
            self.geometry.input_bits,
            self.geometry.output_bits,
            self.geometry.block_bits,
        )
    }

    /// One range LSB in real units.
    pub fn range_lsb(&self) -> f64 {
        let [lo, hi] = self.geometry.range;
        (hi - lo) / (1u64 << self.geometry.output_bits) as f64
    }

    /// Saturating address of `x`.
    pub fn address(&self, x: f64) -> usize {
        let [lo, hi] = self.geometry.domain;
        let n = self.data.len();
        let a = ((x - lo) / (hi - lo) * n as f64).floor();
        if a.is_nan() || a < 0.0 {
            0
        } else {
            (a as usize).min(n - 1)
        }
    }

    /// Domain point at which entry `addr` was sampled.
    pub fn sample_point(&self, addr: usize) -> f64 {
        let [lo, hi] = self.geometry.domain;
        lo + (addr as f64 + 0.5) * (hi - lo) / self.data.len() as f64
    }

    pub fn range_map(&self, entry: u64) -> f64 {
        self.geometry.range[0] + entry as f64 * self.range_lsb()
    }

    /// Value at a domain point; one clock cycle.
    pub fn lookup(&self, x: f64) -> f64 {
        self.read(self.address(x))
    }

    /// Value at an address (clamped to the table); one clock cycle.
    pub fn read(&self, addr: usize) -> f64 {
        self.cycles.fetch_add(1, Ordering::Relaxed);
        let a = addr.min(self.data.len() - 1);
        self.range_map(self.data[a])
    }

    /// Overwrite one entry; one clock cycle.
    pub fn write(&mut self, addr: usize, value: u64) -> Result<()> {
        if addr >= self.data.len() {
            return Err(invalid(format!("address {addr} outside 0..{}", self.data.len())));
        }
        if value >> self.geometry.output_bits != 0 {
            return Err(invalid(format!(
                "value {value} does not fit in {} bits",
                self.geometry.output_bits
            )));
        }
        self.cycles.fetch_add(1, Ordering::Relaxed);
        self.data[addr] = value;
        Ok(())
    }

    /// Model clock cycles spent on reads and writes so far.
    pub fn cycles(&self) -> u64 {
        self.cycles.load(Ordering::Relaxed)
    }

    pub fn to_csv(&self) -> String {
        let mut c = Csv::new(&["address", "raw_value", "mapped_value"]);
        for (k, e) in self.data.iter().enumerate() {
            c.row([int(k as u64), int(*e), num(self.range_map(*e))]);
        }
        c.finish()
    }
}
