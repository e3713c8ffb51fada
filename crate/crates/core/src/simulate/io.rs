use std::io::{BufRead, Read, Write};

use crate::error::{Error, Result};
use crate::skorokhod::{PiecewisePath, ReflectedPath};

use super::SimPath;

const INCREMENT_MAGIC: &[u8; 4] = b"CCWI";

/// Fixed 17-significant-digit float formatting used by every CSV writer.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn write_row(out: &mut impl Write, values: impl IntoIterator<Item = f64>) -> Result<()> {
    let row: Vec<String> = values.into_iter().map(fmt_f64).collect();
    writeln!(out, "{}", row.join(","))?;
    Ok(())
}

/// Columns `t, z1..zk, y1..yN`.
pub fn write_sim_path_csv(path: &SimPath, out: &mut impl Write) -> Result<()> {
    let mut header = vec!["t".to_string()];
    header.extend((1..=path.dim).map(|i| format!("z{i}")));
    header.extend((1..=path.faces).map(|i| format!("y{i}")));
    writeln!(out, "{}", header.join(","))?;
    for j in 0..path.len() {
        write_row(
            out,
            std::iter::once(path.times[j])
                .chain(path.state(j).iter().copied())
                .chain(path.cumulative_push(j).iter().copied()),
        )?;
    }
    Ok(())
}

/// Columns `t, psi1..psik, phi1..phik, eta1..etak, tv`.
pub fn write_reflected_csv(path: &ReflectedPath, out: &mut impl Write) -> Result<()> {
    let k = path.dim();
    let mut header = vec!["t".to_string()];
    for name in ["psi", "phi", "eta"] {
        header.extend((1..=k).map(|i| format!("{name}{i}")));
    }
    header.push("tv".into());
    writeln!(out, "{}", header.join(","))?;
    for j in 0..path.len() {
        write_row(
            out,
            std::iter::once(path.times[j])
                .chain(path.psi_at(j).iter().copied())
                .chain(path.phi_at(j).iter().copied())
                .chain(path.eta_at(j).iter().copied())
                .chain(std::iter::once(path.total_variation[j])),
        )?;
    }
    Ok(())
}

/// Binary increment record: magic `CCWI`, `k` as `u32`, step count as
/// `u64`, then `steps * k` little-endian `f64`.
pub fn write_increments(out: &mut impl Write, k: usize, increments: &[f64]) -> Result<()> {
    if k == 0 || increments.len() % k != 0 {
        return Err(Error::InvalidInput("increments must fill whole steps".into()));
    }
    out.write_all(INCREMENT_MAGIC)?;
    out.write_all(&(k as u32).to_le_bytes())?;
    out.write_all(&((increments.len() / k) as u64).to_le_bytes())?;
    for v in increments {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Inverse of [`write_increments`]; returns `(k, increments)`.
pub fn read_increments(input: &mut impl Read) -> Result<(usize, Vec<f64>)> {
    let mut header = [0u8; 16];
    input
        .read_exact(&mut header)
        .map_err(|_| Error::Format("increment file shorter than its header".into()))?;
    if &header[..4] != INCREMENT_MAGIC {
        return Err(Error::Format("bad increment file magic".into()));
    }
    let k = u32::from_le_bytes(header[4..8].try_into().expect("4 bytes")) as usize;
    let steps = u64::from_le_bytes(header[8..16].try_into().expect("8 bytes")) as usize;
    let mut body = Vec::new();
    input.read_to_end(&mut body)?;
    if body.len() != steps * k * 8 {
        return Err(Error::Format(format!(
            "increment body has {} bytes, header promises {}",
            body.len(),
            steps * k * 8
        )));
    }
    let values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok((k, values))
}

/// Reads `t, v1..vk` rows (an optional non-numeric header line, blank lines
/// and `#` comments are skipped).
pub fn read_path_csv(input: impl BufRead) -> Result<PiecewisePath> {
    let mut times = Vec::new();
    let mut values = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Result<Vec<f64>, _> = line.split(',').map(|f| f.trim().parse::<f64>()).collect();
        match fields {
            Ok(f) if f.len() >= 2 => {
                times.push(f[0]);
                values.push(f[1..].to_vec());
            }
            Ok(_) => return Err(Error::Format(format!("line {}: need a time and a value", idx + 1))),
            Err(_) if times.is_empty() && values.is_empty() && idx == 0 => continue,
            Err(e) => return Err(Error::Format(format!("line {}: {e}", idx + 1))),
        }
    }
    PiecewisePath::new(times, values).map_err(|e| Error::Format(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::PolyhedralCone;
    use crate::simulate::{simulate_path, DiffusionModel, Dispersion, Drift};

    #[test]
    fn increments_round_trip() {
        let inc = vec![0.1, -0.2, 3.5e-300, f64::MIN_POSITIVE, -0.0, 7.0];
        let mut buf = Vec::new();
        write_increments(&mut buf, 2, &inc).unwrap();
        assert_eq!(buf.len(), 16 + 6 * 8);
        assert_eq!(&buf[..4], b"CCWI");
        let (k, back) = read_increments(&mut buf.as_slice()).unwrap();
        assert_eq!(k, 2);
        assert_eq!(back.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), inc.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        buf.pop();
        assert!(read_increments(&mut buf.as_slice()).is_err());
    }

    #[test]
    fn csv_round_trips_floats() {
        let cone = PolyhedralCone::orthant(2);
        let model = DiffusionModel::with_default_bounds(2, Drift::Zero, Dispersion::Identity, 1.0).unwrap();
        let path = simulate_path(&cone, &model, &[0.1, 0.2], 0.05, 0.01, &mut crate::rng::seed_stream(1, 1)).unwrap();
        let mut buf = Vec::new();
        write_sim_path_csv(&path, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("t,z1,z2,y1,y2"));
        for (j, line) in lines.enumerate() {
            let z1: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
            assert_eq!(z1, path.state(j)[0]);
        }
    }

    #[test]
    fn path_csv_reader() {
        let text = "t,v\n0,1\n# note\n0.5,-0.5\n1,2\n";
        let p = read_path_csv(text.as_bytes()).unwrap();
        assert_eq!(p.len(), 3);
        assert_eq!(p.value(1), &[-0.5]);
        assert!(read_path_csv("0,1\n0,2\n".as_bytes()).is_err());
        assert!(read_path_csv("0,1\nx,2\n".as_bytes()).is_err());
    }
}
