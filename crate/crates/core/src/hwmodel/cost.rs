use serde::{Deserialize, Serialize};

use crate::jir::BinOp;

/// Per-operation latency (cycles) and area (area units).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostModel {
    pub lat: Latencies,
    pub area: Areas,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Latencies {
    pub add: u32,
    pub sub: u32,
    pub logic: u32,
    pub compare: u32,
    pub branch: u32,
    pub mul: u32,
    pub div: u32,
    pub bus: u32,
    pub buf: u32,
    pub syscall: u32,
    pub call: u32,
    pub ret: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Areas {
    pub add: u64,
    pub sub: u64,
    pub logic: u64,
    pub compare: u64,
    pub mul: u64,
    pub div: u64,
    pub mux: u64,
    pub bus_port: u64,
    pub buffer_word: u64,
    pub syscall_port: u64,
    pub control: u64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            lat: Latencies {
                add: 1,
                sub: 1,
                logic: 1,
                compare: 1,
                branch: 1,
                mul: 3,
                div: 32,
                bus: 1,
                buf: 1,
                syscall: 1,
                call: 1,
                ret: 1,
            },
            area: Areas {
                add: 32,
                sub: 32,
                logic: 16,
                compare: 16,
                mul: 600,
                div: 1100,
                mux: 48,
                bus_port: 150,
                buffer_word: 4,
                syscall_port: 100,
                control: 8,
            },
        }
    }
}

impl CostModel {
    /// Applies one `lat.*` / `area.*` entry. `Ok(false)` means the key does
    /// not belong to the cost model.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool, String> {
        let Some((group, name)) = key.split_once('.') else {
            return Ok(false);
        };
        let parse = |v: &str| -> Result<u64, String> {
            let n: u64 = v
                .parse()
                .map_err(|_| format!("`{key}`: expected a positive integer, got `{v}`"))?;
            if n == 0 {
                return Err(format!("`{key}` must be strictly positive"));
            }
            Ok(n)
        };
        match group {
            "lat" => {
                let l = &mut self.lat;
                let slot = match name {
                    "add" => &mut l.add,
                    "sub" => &mut l.sub,
                    "logic" => &mut l.logic,
                    "compare" => &mut l.compare,
                    "branch" => &mut l.branch,
                    "mul" => &mut l.mul,
                    "div" => &mut l.div,
                    "bus" => &mut l.bus,
                    "buf" => &mut l.buf,
                    "syscall" => &mut l.syscall,
                    "call" => &mut l.call,
                    "ret" => &mut l.ret,
                    _ => return Err(format!("unknown key `{key}`")),
                };
                *slot =
                    u32::try_from(parse(value)?).map_err(|_| format!("`{key}` is too large"))?;
            }
            "area" => {
                let a = &mut self.area;
                let slot = match name {
                    "add" => &mut a.add,
                    "sub" => &mut a.sub,
                    "logic" => &mut a.logic,
                    "compare" => &mut a.compare,
                    "mul" => &mut a.mul,
                    "div" => &mut a.div,
                    "mux" => &mut a.mux,
                    "bus_port" => &mut a.bus_port,
                    "buffer_word" => &mut a.buffer_word,
                    "syscall_port" => &mut a.syscall_port,
                    "control" => &mut a.control,
                    _ => return Err(format!("unknown key `{key}`")),
                };
                *slot = parse(value)?;
            }
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn bin_latency(&self, op: BinOp) -> u32 {
        match op {
            BinOp::Add => self.lat.add,
            BinOp::Sub => self.lat.sub,
            BinOp::Mul => self.lat.mul,
            BinOp::Div | BinOp::Rem => self.lat.div,
            _ => self.lat.logic,
        }
    }

    pub fn bin_area(&self, op: BinOp) -> u64 {
        match op {
            BinOp::Add => self.area.add,
            BinOp::Sub => self.area.sub,
            BinOp::Mul => self.area.mul,
            BinOp::Div | BinOp::Rem => self.area.div,
            _ => self.area.logic,
        }
    }

    /// Every area entry multiplied by `k`.
    pub fn scale_area(&self, k: u64) -> CostModel {
        let a = &self.area;
        CostModel {
            lat: self.lat.clone(),
            area: Areas {
                add: a.add * k,
                sub: a.sub * k,
                logic: a.logic * k,
                compare: a.compare * k,
                mul: a.mul * k,
                div: a.div * k,
                mux: a.mux * k,
                bus_port: a.bus_port * k,
                buffer_word: a.buffer_word * k,
                syscall_port: a.syscall_port * k,
                control: a.control * k,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn set_known_and_reject_unknown() {
        let mut c = CostModel::default();
        assert_eq!(c.set("lat.mul", "5"), Ok(true));
        assert_eq!(c.lat.mul, 5);
        assert_eq!(c.set("area.div", "1"), Ok(true));
        assert_eq!(c.set("bus.base", "1"), Ok(false));
        assert!(c.set("lat.frobnicate", "1").is_err());
        assert!(c.set("area.mul", "0").is_err());
        assert!(c.set("area.mul", "x").is_err());
    }
}
