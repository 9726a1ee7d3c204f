//! Round-to-nearest-even conversion for small binary floating-point formats
//! (IEEE binary16 and the 8-bit E5M2 format), used by the narrow SIMD lanes
//! of the wide reduction.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Format {
    pub exp_bits: u32,
    pub man_bits: u32,
}

pub const BINARY16: Format = Format {
    exp_bits: 5,
    man_bits: 10,
};

pub const E5M2: Format = Format {
    exp_bits: 5,
    man_bits: 2,
};

impl Format {
    fn bias(self) -> i32 {
        (1 << (self.exp_bits - 1)) - 1
    }

    fn exp_max(self) -> u32 {
        (1 << self.exp_bits) - 1
    }

    fn sign_shift(self) -> u32 {
        self.exp_bits + self.man_bits
    }

    pub fn decode(self, bits: u32) -> f64 {
        let sign = if (bits >> self.sign_shift()) & 1 == 1 { -1.0 } else { 1.0 };
        let exp = (bits >> self.man_bits) & self.exp_max();
        let man = bits & ((1 << self.man_bits) - 1);
        let scale = |e: i32| 2f64.powi(e);
        if exp == self.exp_max() {
            return if man == 0 { sign * f64::INFINITY } else { f64::NAN };
        }
        if exp == 0 {
            sign * f64::from(man) * scale(1 - self.bias() - self.man_bits as i32)
        } else {
            sign * (1.0 + f64::from(man) / f64::from(1u32 << self.man_bits)) * scale(exp as i32 - self.bias())
        }
    }

    /// Nearest representable value, ties to even; overflow goes to infinity.
    pub fn encode(self, x: f64) -> u32 {
        let sign_bit = if x.is_sign_negative() { 1 << self.sign_shift() } else { 0 };
        let inf = self.exp_max() << self.man_bits;
        if x.is_nan() {
            return inf | (1 << (self.man_bits - 1));
        }
        let a = x.abs();
        if a.is_infinite() {
            return sign_bit | inf;
        }
        if a == 0.0 {
            return sign_bit;
        }
        // Quantum of the binade containing `a`, clamped at the subnormal range.
        let min_exp = 1 - self.bias();
        let e = (a.log2().floor() as i32).max(min_exp);
        // log2 can be off by one near powers of two.
        let e = if 2f64.powi(e) > a && e > min_exp { e - 1 } else { e };
        let e = if 2f64.powi(e + 1) <= a { e + 1 } else { e };
        let quantum = 2f64.powi(e - self.man_bits as i32);
        let q = a / quantum; // exact: power-of-two scaling
        let fl = q.floor();
        let frac = q - fl;
        let mut units = fl as u64;
        if frac > 0.5 || (frac == 0.5 && units % 2 == 1) {
            units += 1;
        }
        // units counts quanta in binade `e`; renormalise.
        let one = 1u64 << self.man_bits;
        let (exp_field, man) = if e == min_exp && units < one {
            (0u32, units as u32)
        } else if units >= 2 * one {
            ((e + 1 + self.bias()) as u32, ((units / 2) - one) as u32)
        } else {
            ((e + self.bias()) as u32, (units - one) as u32)
        };
        if exp_field >= self.exp_max() {
            return sign_bit | inf;
        }
        sign_bit | (exp_field << self.man_bits) | man
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary16_matches_half_crate() {
        for bits in 0u16..=u16::MAX {
            let h = half::f16::from_bits(bits);
            if h.is_nan() {
                continue;
            }
            let v = BINARY16.decode(u32::from(bits));
            assert_eq!(v, h.to_f64(), "decode {bits:#x}");
            assert_eq!(BINARY16.encode(v), u32::from(bits), "encode {bits:#x}");
        }
    }

    #[test]
    fn e5m2_rounds_to_nearest_code() {
        // Brute force over all finite codes.
        let codes: Vec<(u32, f64)> = (0u32..256)
            .map(|b| (b, E5M2.decode(b)))
            .filter(|(_, v)| v.is_finite())
            .collect();
        let probes = [0.3, 1.1, 1.125, 1.375, 3.0e4, -7.7, 1.0e-6, 6.0e4, 5.7e4];
        for &p in &probes {
            let got = E5M2.decode(E5M2.encode(p));
            let best = codes
                .iter()
                .map(|&(_, v)| (v - p).abs())
                .fold(f64::INFINITY, f64::min);
            if got.is_finite() {
                assert!((got - p).abs() <= best, "{p}: {got}");
            }
        }
    }
}
