//! File formats.
//!
//! Text mesh (`.msh`):
//!
//! ```text
//! msim-mesh v1 shell
//! v 0 0 0
//! e 0 1 2
//! pin 0
//! mat stvk <youngs> <poisson> <thickness> <bending> <density>
//! ```
//!
//! Solid meshes use `e i j k l` and `mat neohookean <youngs> <poisson> <density>`.
//! Floats are written in shortest round-trip form, so load(save(m)) is exact.
//!
//! Binary state: magic `MSIM`, u32 version, u64 vertex count, then
//! little-endian f64 positions followed by velocities. Time is not stored.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use super::{Elements, Mesh, MeshKind, SimState};
use crate::elastic::MaterialParams;
use crate::{Error, Result, Vec3};

pub const MESH_HEADER: &str = "msim-mesh";
pub const MESH_VERSION: &str = "v1";
pub const STATE_MAGIC: &[u8; 4] = b"MSIM";
pub const STATE_VERSION: u32 = 1;

pub fn mesh_to_string(mesh: &Mesh) -> Result<String> {
    if mesh.n_vertices() == 0 {
        return Err(Error::InvalidArgument(
            "refusing to save a mesh without vertices".into(),
        ));
    }
    let mut s = String::new();
    let _ = writeln!(s, "{MESH_HEADER} {MESH_VERSION} {}", mesh.kind().as_str());
    for p in mesh.rest_positions() {
        let _ = writeln!(s, "v {:e} {:e} {:e}", p.x, p.y, p.z);
    }
    for e in 0..mesh.elements().len() {
        let vs = mesh.elements().vertices(e);
        s.push('e');
        for v in vs {
            let _ = write!(s, " {v}");
        }
        s.push('\n');
    }
    for (i, _) in mesh.pinned().iter().enumerate().filter(|(_, &p)| p) {
        let _ = writeln!(s, "pin {i}");
    }
    let m = mesh.material();
    match mesh.kind() {
        MeshKind::Shell => {
            let _ = writeln!(
                s,
                "mat stvk {:e} {:e} {:e} {:e} {:e}",
                m.youngs_modulus, m.poisson_ratio, m.thickness, m.bending_stiffness, m.density
            );
        }
        MeshKind::Solid => {
            let _ = writeln!(
                s,
                "mat neohookean {:e} {:e} {:e}",
                m.youngs_modulus, m.poisson_ratio, m.density
            );
        }
    }
    Ok(s)
}

pub fn save_mesh(mesh: &Mesh, path: impl AsRef<Path>) -> Result<()> {
    let text = mesh_to_string(mesh)?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn load_mesh(path: impl AsRef<Path>) -> Result<Mesh> {
    let text = std::fs::read_to_string(path)?;
    parse_mesh(&text)
}

fn parse_err(offset: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        offset,
        msg: msg.into(),
    }
}

pub fn parse_mesh(text: &str) -> Result<Mesh> {
    let mut offset = 0;
    let mut kind = None;
    let mut positions = Vec::new();
    let mut tris = Vec::new();
    let mut tets = Vec::new();
    let mut pins = Vec::new();
    let mut material = None;

    for line in text.split_inclusive('\n') {
        let start = offset;
        offset += line.len();
        let mut tok = line.split_whitespace();
        let Some(head) = tok.next() else { continue };
        let rest: Vec<&str> = tok.collect();
        let num = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|_| parse_err(start, format!("bad number '{s}'")))
        };
        let idx = |s: &str| -> Result<usize> {
            s.parse::<usize>()
                .map_err(|_| parse_err(start, format!("bad index '{s}'")))
        };
        if kind.is_none() {
            if head != MESH_HEADER {
                return Err(parse_err(start, "missing msim-mesh header"));
            }
            if rest.first() != Some(&MESH_VERSION) {
                return Err(parse_err(
                    start,
                    format!("unsupported version {:?}", rest.first()),
                ));
            }
            let k: MeshKind = rest
                .get(1)
                .ok_or_else(|| parse_err(start, "missing mesh kind"))?
                .parse()
                .map_err(|_| parse_err(start, "bad mesh kind"))?;
            kind = Some(k);
            continue;
        }
        match head {
            "v" => {
                if rest.len() != 3 {
                    return Err(parse_err(start, "vertex record needs 3 coordinates"));
                }
                positions.push(Vec3::new(num(rest[0])?, num(rest[1])?, num(rest[2])?));
            }
            "e" => match (kind, rest.len()) {
                (Some(MeshKind::Shell), 3) => {
                    tris.push([idx(rest[0])?, idx(rest[1])?, idx(rest[2])?])
                }
                (Some(MeshKind::Solid), 4) => {
                    tets.push([idx(rest[0])?, idx(rest[1])?, idx(rest[2])?, idx(rest[3])?])
                }
                _ => return Err(parse_err(start, "element arity does not match mesh kind")),
            },
            "pin" => {
                if rest.len() != 1 {
                    return Err(parse_err(start, "pin record needs one index"));
                }
                pins.push((idx(rest[0])?, start));
            }
            "mat" => {
                let name = rest
                    .first()
                    .ok_or_else(|| parse_err(start, "missing material name"))?;
                let vals = rest[1..]
                    .iter()
                    .map(|s| num(s))
                    .collect::<Result<Vec<f64>>>()?;
                material = Some(match (*name, vals.as_slice()) {
                    ("stvk", [e, nu, t, kb, rho]) => MaterialParams {
                        youngs_modulus: *e,
                        poisson_ratio: *nu,
                        thickness: *t,
                        bending_stiffness: *kb,
                        density: *rho,
                    },
                    ("neohookean", [e, nu, rho]) => MaterialParams {
                        youngs_modulus: *e,
                        poisson_ratio: *nu,
                        thickness: 0.0,
                        bending_stiffness: 0.0,
                        density: *rho,
                    },
                    _ => {
                        return Err(parse_err(
                            start,
                            format!("bad material record '{}'", line.trim()),
                        ))
                    }
                });
            }
            other => return Err(parse_err(start, format!("unknown record '{other}'"))),
        }
    }
    let kind = kind.ok_or_else(|| parse_err(0, "empty mesh file"))?;
    let material = material.ok_or_else(|| parse_err(offset, "missing material record"))?;
    let elements = match kind {
        MeshKind::Shell => Elements::Triangles(tris),
        MeshKind::Solid => Elements::Tets(tets),
    };
    let mut pinned = vec![false; positions.len()];
    for (p, at) in pins {
        *pinned
            .get_mut(p)
            .ok_or_else(|| parse_err(at, format!("pin index {p} out of range")))? = true;
    }
    Mesh::new(positions, elements, material, pinned)
}

pub fn write_state(w: &mut impl Write, state: &SimState) -> Result<()> {
    if state.positions.len() != state.velocities.len() {
        return Err(Error::InvalidArgument(
            "positions/velocities length mismatch".into(),
        ));
    }
    if state.positions.is_empty() {
        return Err(Error::InvalidArgument(
            "refusing to save a state without vertices".into(),
        ));
    }
    w.write_all(STATE_MAGIC)?;
    w.write_all(&STATE_VERSION.to_le_bytes())?;
    w.write_all(&(state.positions.len() as u64).to_le_bytes())?;
    for v in state.positions.iter().chain(state.velocities.iter()) {
        for c in v.iter() {
            w.write_all(&c.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn state_to_bytes(state: &SimState) -> Result<Vec<u8>> {
    let mut buf = Vec::with_capacity(16 + 48 * state.positions.len());
    write_state(&mut buf, state)?;
    Ok(buf)
}

/// Little-endian cursor that reports absolute byte offsets in errors.
pub(crate) struct Reader<'a> {
    pub buf: &'a [u8],
    pub pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(parse_err(
                self.pos,
                format!(
                    "truncated: need {n} bytes, have {}",
                    self.buf.len() - self.pos
                ),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn at_end(&self) -> bool {
        self.pos == self.buf.len()
    }
}

pub(crate) fn read_state_from(r: &mut Reader) -> Result<SimState> {
    let at = r.pos;
    if r.take(4)? != STATE_MAGIC {
        return Err(parse_err(at, "bad state magic"));
    }
    let at = r.pos;
    let version = r.u32()?;
    if version != STATE_VERSION {
        return Err(parse_err(
            at,
            format!("unsupported state version {version}"),
        ));
    }
    let at = r.pos;
    let n = r.u64()? as usize;
    if n.checked_mul(48).is_none_or(|b| b > r.buf.len() - r.pos) {
        return Err(parse_err(
            at,
            format!("truncated: vertex count {n} exceeds payload"),
        ));
    }
    let read_vecs = |r: &mut Reader| -> Result<Vec<Vec3>> {
        (0..n)
            .map(|_| Ok(Vec3::new(r.f64()?, r.f64()?, r.f64()?)))
            .collect()
    };
    let positions = read_vecs(r)?;
    let velocities = read_vecs(r)?;
    Ok(SimState {
        positions,
        velocities,
        time: 0.0,
    })
}

pub fn state_from_bytes(bytes: &[u8]) -> Result<SimState> {
    let mut r = Reader::new(bytes);
    let s = read_state_from(&mut r)?;
    if !r.at_end() {
        return Err(parse_err(r.pos, "trailing bytes after state"));
    }
    Ok(s)
}

pub fn save_state(state: &SimState, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, state_to_bytes(state)?)?;
    Ok(())
}

pub fn load_state(path: impl AsRef<Path>) -> Result<SimState> {
    state_from_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{generate_cuboid, generate_sheet};

    #[test]
    fn mesh_round_trip() {
        let m = generate_sheet(4, 3, 1.3, 0.7, MaterialParams::cloth()).unwrap();
        let mut pins = vec![false; m.n_vertices()];
        pins[2] = true;
        let m = m.with_pinned(pins).unwrap();
        let back = parse_mesh(&mesh_to_string(&m).unwrap()).unwrap();
        assert_eq!(back.rest_positions(), m.rest_positions());
        assert_eq!(back.elements(), m.elements());
        assert_eq!(back.edges(), m.edges());
        assert_eq!(back.hinges(), m.hinges());
        assert_eq!(back.pinned(), m.pinned());
        assert_eq!(back.masses(), m.masses());
        assert_eq!(back.material(), m.material());

        let c =
            generate_cuboid(3, 2, 2, Vec3::new(1.0, 0.3, 0.2), MaterialParams::rubber()).unwrap();
        let back = parse_mesh(&mesh_to_string(&c).unwrap()).unwrap();
        assert_eq!(back.rest_positions(), c.rest_positions());
        assert_eq!(back.elements(), c.elements());
    }

    #[test]
    fn mesh_parse_errors_carry_offsets() {
        match parse_mesh("msim-mesh v2 shell\n") {
            Err(Error::Parse { offset: 0, .. }) => {}
            other => panic!("{other:?}"),
        }
        let text = "msim-mesh v1 shell\nv 0 0 0\nv 1 0 x\n";
        match parse_mesh(text) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 27),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn state_round_trip_and_truncation() {
        let s = SimState::new(
            vec![Vec3::new(0.1, -2.0, 3.5), Vec3::new(1e-300, f64::MAX, -0.0)],
            vec![Vec3::new(7.0, 8.0, 9.0), Vec3::zeros()],
        );
        let bytes = state_to_bytes(&s).unwrap();
        assert_eq!(bytes.len(), 16 + 2 * 48);
        let back = state_from_bytes(&bytes).unwrap();
        assert_eq!(state_to_bytes(&back).unwrap(), bytes);
        assert!(matches!(
            state_from_bytes(&bytes[..bytes.len() - 3]),
            Err(Error::Parse { .. })
        ));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(
            state_from_bytes(&bad),
            Err(Error::Parse { offset: 4, .. })
        ));
    }
}
