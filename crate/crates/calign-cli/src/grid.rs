//! Value and grid parsing for flags and config-file entries.
//!
//! Grids come in three shapes:
//!   - `a:b:log`  — decades from a to b inclusive (a, 10a, 100a, …)
//!   - `a:b:step` — arithmetic from a to b inclusive with the given step
//!   - `v1,v2,…`  — explicit comma-separated list (a single value is fine)
//!
//! Integer values additionally accept scientific notation (`4e5`), checked
//! for integrality.

fn parse_one_f64(s: &str) -> Result<f64, String> {
    let v: f64 = s.trim().parse().map_err(|_| format!("not a number: {s:?}"))?;
    if !v.is_finite() {
        return Err(format!("value must be finite, got {s:?}"));
    }
    Ok(v)
}

pub fn scalar_f64(s: &str) -> Result<f64, String> {
    parse_one_f64(s)
}

pub fn scalar_u64(s: &str) -> Result<u64, String> {
    let t = s.trim();
    if let Ok(v) = t.parse::<u64>() {
        return Ok(v);
    }
    let v = parse_one_f64(t)?;
    if v < 0.0 || v.fract() != 0.0 || v > 2f64.powi(53) {
        return Err(format!("expected a nonnegative integer, got {s:?}"));
    }
    Ok(v as u64)
}

pub fn scalar_usize(s: &str) -> Result<usize, String> {
    let v = scalar_u64(s)?;
    usize::try_from(v).map_err(|_| format!("value out of range: {s:?}"))
}

pub fn scalar_u32(s: &str) -> Result<u32, String> {
    let v = scalar_u64(s)?;
    u32::try_from(v).map_err(|_| format!("value out of range: {s:?}"))
}

pub fn scalar_bool(s: &str) -> Result<bool, String> {
    match s.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(format!("expected true/false, got {s:?}")),
    }
}

pub fn f64_grid(s: &str) -> Result<Vec<f64>, String> {
    let s = s.trim();
    if let Some((a, rest)) = s.split_once(':') {
        let (b, spec) = rest
            .split_once(':')
            .ok_or_else(|| format!("grid {s:?} needs the form a:b:log or a:b:step"))?;
        let a = parse_one_f64(a)?;
        let b = parse_one_f64(b)?;
        if b < a {
            return Err(format!("grid {s:?} has end < start"));
        }
        let mut out = Vec::new();
        if spec.trim() == "log" {
            if a <= 0.0 {
                return Err(format!("log grid {s:?} needs a positive start"));
            }
            let mut v = a;
            while v <= b * (1.0 + 1e-9) {
                out.push(v);
                v *= 10.0;
            }
        } else {
            let step = parse_one_f64(spec)?;
            if step <= 0.0 {
                return Err(format!("grid {s:?} needs a positive step"));
            }
            let n = ((b - a) / step + 1e-9).floor() as usize;
            for i in 0..=n {
                out.push(a + step * i as f64);
            }
        }
        if out.is_empty() {
            return Err(format!("grid {s:?} is empty"));
        }
        return Ok(out);
    }
    let vals: Result<Vec<f64>, String> = s.split(',').map(parse_one_f64).collect();
    let vals = vals?;
    if vals.is_empty() {
        return Err(format!("grid {s:?} is empty"));
    }
    Ok(vals)
}

pub fn u64_list(s: &str) -> Result<Vec<u64>, String> {
    let vals: Result<Vec<u64>, String> = s.split(',').map(scalar_u64).collect();
    let vals = vals?;
    if vals.is_empty() {
        return Err(format!("list {s:?} is empty"));
    }
    Ok(vals)
}

pub fn usize_list(s: &str) -> Result<Vec<usize>, String> {
    u64_list(s)?
        .into_iter()
        .map(|v| usize::try_from(v).map_err(|_| format!("value out of range in {s:?}")))
        .collect()
}
