//! Adobe/Resolve `.cube` 3D LUTs: uniform grid, red index fastest.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::lut::{rebake_uniform, uniform_axis, Lut3D, SamplingCoordinates};
use crate::scalar::Real;

/// Parsed contents of a `.cube` file.
#[derive(Debug, Clone, PartialEq)]
pub struct CubeFile<T> {
    pub title: Option<String>,
    pub lut: Lut3D<T>,
}

impl<T: Real> CubeFile<T> {
    /// The LUT with the uniform coordinates a `.cube` grid implies.
    pub fn into_parts(self) -> Result<(Lut3D<T>, SamplingCoordinates<T>)> {
        let coords = SamplingCoordinates::uniform(self.lut.size())?;
        Ok((self.lut, coords))
    }
}

fn is_uniform<T: Real>(coords: &SamplingCoordinates<T>) -> bool {
    let u = uniform_axis::<T>(coords.size());
    coords.axes().iter().all(|a| *a == u)
}

/// Serializes `(lut, coords)`, rebaking non-uniform coordinates first.
pub fn to_cube_string<T: Real>(lut: &Lut3D<T>, coords: &SamplingCoordinates<T>, title: Option<&str>) -> Result<String> {
    if coords.size() != lut.size() {
        return Err(Error::dim("cube coordinates", lut.size(), coords.size()));
    }
    let baked;
    let lut = if is_uniform(coords) {
        lut
    } else {
        baked = rebake_uniform(lut, coords)?;
        &baked
    };
    let mut out = String::with_capacity(lut.values().len() * 27 + 96);
    if let Some(t) = title {
        if t.contains('"') || t.contains('\n') {
            return Err(Error::Format("cube title must not contain quotes or newlines".into()));
        }
        let _ = writeln!(out, "TITLE \"{t}\"");
    }
    let _ = writeln!(out, "LUT_3D_SIZE {}", lut.size());
    out.push_str("DOMAIN_MIN 0 0 0\nDOMAIN_MAX 1 1 1\n");
    for v in lut.values() {
        let _ = writeln!(out, "{:.6} {:.6} {:.6}", v[0].as_f64(), v[1].as_f64(), v[2].as_f64());
    }
    Ok(out)
}

fn parse_triple<T: Real>(fields: &[&str], line: usize) -> Result<[T; 3]> {
    if fields.len() != 3 {
        return Err(Error::Parse {
            line,
            message: format!("expected 3 values, found {}", fields.len()),
        });
    }
    let mut out = [T::zero(); 3];
    for (o, f) in out.iter_mut().zip(fields) {
        let v: f64 = f.parse().map_err(|_| Error::Parse {
            line,
            message: format!("invalid number {f:?}"),
        })?;
        if !v.is_finite() {
            return Err(Error::Parse {
                line,
                message: format!("non-finite value {f:?}"),
            });
        }
        *o = T::lit(v);
    }
    Ok(out)
}

/// Parses `.cube` text. Only the `[0, 1]` domain is accepted.
pub fn parse_cube<T: Real>(text: &str) -> Result<CubeFile<T>> {
    let mut title = None;
    let mut size: Option<usize> = None;
    let mut rows: Vec<[T; 3]> = Vec::new();
    let mut last_line = 0;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        last_line = line;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let fields: Vec<&str> = content.split_whitespace().collect();
        let keyword = fields[0];
        if keyword.starts_with(|c: char| c.is_ascii_alphabetic()) {
            if !rows.is_empty() {
                return Err(Error::Parse {
                    line,
                    message: format!("keyword {keyword} after table data"),
                });
            }
            match keyword {
                "TITLE" => {
                    let rest = content["TITLE".len()..].trim();
                    let unquoted = rest
                        .strip_prefix('"')
                        .and_then(|r| r.strip_suffix('"'))
                        .ok_or_else(|| Error::Parse {
                            line,
                            message: "TITLE must be quoted".into(),
                        })?;
                    title = Some(unquoted.to_string());
                }
                "LUT_3D_SIZE" => {
                    if size.is_some() {
                        return Err(Error::Parse {
                            line,
                            message: "duplicate LUT_3D_SIZE".into(),
                        });
                    }
                    let n: usize = match fields.as_slice() {
                        [_, n] => n.parse().map_err(|_| Error::Parse {
                            line,
                            message: format!("invalid LUT_3D_SIZE {n:?}"),
                        })?,
                        _ => {
                            return Err(Error::Parse {
                                line,
                                message: "LUT_3D_SIZE takes one integer".into(),
                            })
                        }
                    };
                    if n < 2 {
                        return Err(Error::Format(format!("LUT_3D_SIZE {n} is below the minimum of 2")));
                    }
                    if n > 256 {
                        return Err(Error::Format(format!("LUT_3D_SIZE {n} exceeds the supported maximum of 256")));
                    }
                    size = Some(n);
                }
                "DOMAIN_MIN" | "DOMAIN_MAX" => {
                    let v: [f64; 3] = parse_triple(&fields[1..], line)?;
                    let expected = if keyword == "DOMAIN_MIN" { 0.0 } else { 1.0 };
                    if v.iter().any(|&x| x != expected) {
                        return Err(Error::Parse {
                            line,
                            message: format!("{keyword} {v:?} unsupported; only the [0, 1] domain is accepted"),
                        });
                    }
                }
                "LUT_1D_SIZE" | "LUT_1D_INPUT_RANGE" | "LUT_3D_INPUT_RANGE" => {
                    return Err(Error::Parse {
                        line,
                        message: format!("{keyword} is not supported"),
                    });
                }
                other => {
                    return Err(Error::Parse {
                        line,
                        message: format!("unknown keyword {other}"),
                    });
                }
            }
        } else {
            let Some(n) = size else {
                return Err(Error::Parse {
                    line,
                    message: "table data before LUT_3D_SIZE".into(),
                });
            };
            if rows.len() == n * n * n {
                return Err(Error::Parse {
                    line,
                    message: format!("more than the {} rows implied by LUT_3D_SIZE {n}", n * n * n),
                });
            }
            rows.push(parse_triple(&fields, line)?);
        }
    }
    let n = size.ok_or(Error::Parse {
        line: last_line,
        message: "missing LUT_3D_SIZE".into(),
    })?;
    if rows.len() != n * n * n {
        return Err(Error::Parse {
            line: last_line,
            message: format!("expected {} rows for LUT_3D_SIZE {n}, found {}", n * n * n, rows.len()),
        });
    }
    Ok(CubeFile {
        title,
        lut: Lut3D::new(n, rows)?,
    })
}

pub fn write_cube<T: Real>(
    path: impl AsRef<Path>,
    lut: &Lut3D<T>,
    coords: &SamplingCoordinates<T>,
    title: Option<&str>,
) -> Result<()> {
    let path = path.as_ref();
    let text = to_cube_string(lut, coords, title)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_cube<T: Real>(path: impl AsRef<Path>) -> Result<CubeFile<T>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_cube(&text)
}
